//! Exact bounded-Lipschitz (flat) distance between atomic measures.
//!
//! The distance is the value of a finite linear program over the union
//! support `{z_k}`: maximize `sum_k (mu_k - nu_k) g_k` subject to
//! `-1 <= g_k <= 1` and `|g_k - g_l| <= |z_k - z_l|`. Any feasible vertex
//! assignment extends to a 1-Lipschitz, sup-bounded function on the whole
//! space (McShane extension), so the finite program attains the metric's
//! supremum over all admissible observables.
//!
//! [`bl_distance`] solves the program with a primal-dual method: the dual is
//! a minimum-cost transshipment on the support points plus one slack node at
//! unit cost (mass creation/destruction), solved by successive shortest
//! paths. The optimal primal `g` is read off the node potentials and the
//! result is certified: every pair constraint is checked and the primal and
//! dual values must agree to `1e-10`. [`bl_distance_bruteforce`] is a
//! deliberately independent oracle: a plain dense-tableau simplex over the
//! complete constraint set, restricted to tiny instances.

use crate::ensemble::AtomicMeasure;
use crate::error::{Error, Result};
use crate::geom::dist;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Acceptable primal-dual disagreement before we call the solve a fault.
const CERT_TOL: f64 = 1e-10;

/// Residual supply below which a node counts as settled.
const RESIDUAL_TOL: f64 = 1e-13;

/// The brute-force oracle refuses union supports larger than this.
pub const ORACLE_MAX_SUPPORT: usize = 6;

/// Exact flat distance between two finite nonnegative atomic measures of the
/// same point dimension. Measures of unequal total mass are allowed; the
/// program remains well posed.
pub fn bl_distance(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    let (points, coeffs, dim) = signed_union(mu, nu)?;
    let k = coeffs.len();
    if k == 0 {
        return Ok(0.0);
    }

    let mut net = FlowNet::new(&points, &coeffs, dim);
    net.run()?;
    net.certified_value()
}

/// Independent small-scale oracle for [`bl_distance`]: sets up the identical
/// program but with every pair constraint materialized and solves it with a
/// textbook dense simplex. Refuses union supports above
/// [`ORACLE_MAX_SUPPORT`] points.
pub fn bl_distance_bruteforce(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    let (points, coeffs, dim) = signed_union(mu, nu)?;
    let k = coeffs.len();
    if k == 0 {
        return Ok(0.0);
    }
    if k > ORACLE_MAX_SUPPORT {
        return Err(Error::OracleSupportTooLarge {
            size: k,
            max: ORACLE_MAX_SUPPORT,
        });
    }

    // Shift to u = g + 1 in [0, 2] so the start basis (all slacks) is
    // feasible: rows u_i <= 2 and u_i - u_j <= |z_i - z_j|.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..k {
        let mut row = vec![0.0; k];
        row[i] = 1.0;
        rows.push(row);
        rhs.push(2.0);
    }
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let mut row = vec![0.0; k];
                row[i] = 1.0;
                row[j] = -1.0;
                rows.push(row);
                rhs.push(dist(
                    &points[i * dim..(i + 1) * dim],
                    &points[j * dim..(j + 1) * dim],
                ));
            }
        }
    }
    let shift: f64 = coeffs.iter().sum();
    let value = dense_simplex_max(&coeffs, &rows, &rhs)
        .ok_or_else(|| Error::SolverFault("oracle simplex did not terminate".into()))?;
    Ok((value - shift).max(0.0))
}

/// Deduplicated union support with signed coefficients `mu_k - nu_k`.
/// Points appearing with equal weight in both measures cancel and drop out.
fn signed_union(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if !mu.is_empty() && !nu.is_empty() && mu.point_dim() != nu.point_dim() {
        return Err(Error::DimensionMismatch(format!(
            "measures live on R^{} and R^{}",
            mu.point_dim(),
            nu.point_dim()
        )));
    }
    let dim = if mu.is_empty() {
        nu.point_dim()
    } else {
        mu.point_dim()
    };

    let total = mu.len() + nu.len();
    let mut order: Vec<usize> = (0..total).collect();
    let fetch = |idx: usize| -> (&[f64], f64) {
        if idx < mu.len() {
            (mu.point(idx), mu.weight(idx))
        } else {
            (nu.point(idx - mu.len()), -nu.weight(idx - mu.len()))
        }
    };
    order.sort_by(|&a, &b| {
        let (pa, _) = fetch(a);
        let (pb, _) = fetch(b);
        pa.partial_cmp(pb).expect("finite by invariant")
    });

    let mut points: Vec<f64> = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();
    for &idx in &order {
        let (p, w) = fetch(idx);
        let n = coeffs.len();
        if n > 0 && p == &points[(n - 1) * dim..n * dim] {
            coeffs[n - 1] += w;
        } else {
            points.extend_from_slice(p);
            coeffs.push(w);
        }
    }
    // Exact cancellations carry no supply and never shorten a Euclidean
    // path, so they can be dropped.
    let mut fpoints = Vec::new();
    let mut fcoeffs = Vec::new();
    for (i, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            fpoints.extend_from_slice(&points[i * dim..(i + 1) * dim]);
            fcoeffs.push(c);
        }
    }
    Ok((fpoints, fcoeffs, dim))
}

/// Successive-shortest-path transshipment solver on the union support plus a
/// slack node. Node `k` must net-export `coeffs[k]`; the slack node absorbs
/// the imbalance at unit cost per unit mass, implementing the sup-bound side
/// of the program.
struct FlowNet {
    n: usize,
    slack: usize,
    cost: Vec<f64>,
    supply: Vec<f64>,
    excess: Vec<f64>,
    flow: Vec<f64>,
    potential: Vec<f64>,
}

impl FlowNet {
    fn new(points: &[f64], coeffs: &[f64], dim: usize) -> FlowNet {
        let k = coeffs.len();
        let n = k + 1;
        let slack = k;
        let mut cost = vec![0.0; n * n];
        for i in 0..k {
            for j in (i + 1)..k {
                let d = dist(&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]);
                cost[i * n + j] = d;
                cost[j * n + i] = d;
            }
        }
        for i in 0..k {
            cost[i * n + slack] = 1.0;
            cost[slack * n + i] = 1.0;
        }
        let mut supply = coeffs.to_vec();
        let imbalance: f64 = coeffs.iter().sum();
        supply.push(-imbalance);
        FlowNet {
            n,
            slack,
            excess: supply.clone(),
            supply,
            cost,
            flow: vec![0.0; n * n],
            potential: vec![0.0; n],
        }
    }

    fn run(&mut self) -> Result<()> {
        let n = self.n;
        let scale: f64 = self.supply.iter().map(|s| s.abs()).sum::<f64>().max(1.0);
        let tol = RESIDUAL_TOL * scale;
        let max_rounds = 20 * n + 200;

        for _ in 0..max_rounds {
            let has_source = self.excess.iter().any(|&e| e > tol);
            let has_sink = self.excess.iter().any(|&e| e < -tol);
            if !has_source || !has_sink {
                return Ok(());
            }

            // Dense multi-source Dijkstra on reduced costs. A reverse
            // (cancelling) arc is always at least as cheap as the forward
            // one, so the effective arc u -> v costs -D when net flow v -> u
            // exists and +D otherwise.
            let mut dist_to = vec![f64::INFINITY; n];
            let mut parent = vec![usize::MAX; n];
            let mut done = vec![false; n];
            for u in 0..n {
                if self.excess[u] > tol {
                    dist_to[u] = 0.0;
                }
            }
            loop {
                let mut u = usize::MAX;
                let mut best = f64::INFINITY;
                for v in 0..n {
                    if !done[v] && dist_to[v] < best {
                        best = dist_to[v];
                        u = v;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                for v in 0..n {
                    if v == u || done[v] {
                        continue;
                    }
                    let base = if self.flow[v * n + u] > 0.0 {
                        -self.cost[v * n + u]
                    } else {
                        self.cost[u * n + v]
                    };
                    let reduced = (base + self.potential[u] - self.potential[v]).max(0.0);
                    let cand = dist_to[u] + reduced;
                    if cand < dist_to[v] {
                        dist_to[v] = cand;
                        parent[v] = u;
                    }
                }
            }

            let mut sink = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n {
                if self.excess[v] < -tol && dist_to[v] < best {
                    best = dist_to[v];
                    sink = v;
                }
            }
            if sink == usize::MAX {
                return Err(Error::SolverFault(
                    "no reachable sink despite remaining supply".into(),
                ));
            }

            for v in 0..n {
                self.potential[v] += dist_to[v].min(dist_to[sink]);
            }

            // Bottleneck along the path: residual supplies cap it, as does
            // any cancelling arc, which may not overshoot the flow it undoes.
            let mut delta = -self.excess[sink];
            let mut v = sink;
            while parent[v] != usize::MAX {
                let u = parent[v];
                if self.flow[v * n + u] > 0.0 {
                    delta = delta.min(self.flow[v * n + u]);
                }
                v = u;
            }
            let source = v;
            delta = delta.min(self.excess[source]);
            if !(delta > 0.0) {
                return Err(Error::SolverFault("nonpositive augmentation".into()));
            }

            let mut v = sink;
            while parent[v] != usize::MAX {
                let u = parent[v];
                if self.flow[v * n + u] > 0.0 {
                    let undo = delta.min(self.flow[v * n + u]);
                    self.flow[v * n + u] -= undo;
                    self.flow[u * n + v] += delta - undo;
                } else {
                    self.flow[u * n + v] += delta;
                }
                v = u;
            }
            self.excess[source] -= delta;
            self.excess[sink] += delta;
        }
        Err(Error::SolverFault("augmentation rounds exhausted".into()))
    }

    /// Flow cost with the matching primal certificate. The potentials induce
    /// `g_k = pi_slack - pi_k`, which must be feasible and close the duality
    /// gap against the flow cost.
    fn certified_value(&self) -> Result<f64> {
        let n = self.n;
        let mut flow_cost = 0.0;
        for u in 0..n {
            for v in 0..n {
                if self.flow[u * n + v] > 0.0 {
                    flow_cost += self.flow[u * n + v] * self.cost[u * n + v];
                }
            }
        }
        let mut primal = 0.0;
        let scale: f64 = self.supply.iter().map(|s| s.abs()).sum::<f64>().max(1.0);
        let feas_tol = 1e-9 * scale.max(flow_cost.abs());
        for k in 0..self.slack {
            let g = self.potential[self.slack] - self.potential[k];
            if g.abs() > 1.0 + feas_tol {
                return Err(Error::SolverFault(format!(
                    "potential certificate violates the sup bound: |g| = {}",
                    g.abs()
                )));
            }
            primal += self.supply[k] * g;
        }
        for k in 0..self.slack {
            for l in 0..self.slack {
                if k != l {
                    let gap = (self.potential[k] - self.potential[l]) - self.cost[k * n + l];
                    if gap > feas_tol {
                        return Err(Error::SolverFault(format!(
                            "potential certificate violates a Lipschitz constraint by {gap}"
                        )));
                    }
                }
            }
        }
        if (primal - flow_cost).abs() > CERT_TOL * scale.max(1.0) + CERT_TOL {
            return Err(Error::SolverFault(format!(
                "duality gap {} exceeds tolerance",
                (primal - flow_cost).abs()
            )));
        }
        Ok(flow_cost.max(0.0))
    }
}

/// Textbook full-tableau simplex for `max c.x` subject to `A x <= b`,
/// `x >= 0` with `b >= 0`, using Bland's rule throughout. Returns `None`
/// only if the iteration cap is hit (the feasible sets used here are
/// bounded, so unboundedness cannot occur).
fn dense_simplex_max(c: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Option<f64> {
    const EPS: f64 = 1e-11;
    let m = rows.len();
    let n = c.len();
    let width = n + m + 1;
    let mut t = vec![0.0f64; (m + 1) * width];
    for (i, row) in rows.iter().enumerate() {
        t[i * width..i * width + n].copy_from_slice(row);
        t[i * width + n + i] = 1.0;
        t[i * width + n + m] = rhs[i];
    }
    for j in 0..n {
        t[m * width + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let max_iter = 50 * (m + n) + 1000;
    for _ in 0..max_iter {
        // Bland: first column with negative reduced cost.
        let mut entering = usize::MAX;
        for j in 0..n + m {
            if t[m * width + j] < -EPS {
                entering = j;
                break;
            }
        }
        if entering == usize::MAX {
            return Some(t[m * width + n + m]);
        }
        // Ratio test; ties broken by smallest basis variable (Bland).
        let mut leaving = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let a = t[i * width + entering];
            if a > EPS {
                let ratio = t[i * width + n + m] / a;
                if ratio < best - EPS
                    || (ratio < best + EPS
                        && (leaving == usize::MAX || basis[i] < basis[leaving]))
                {
                    best = ratio;
                    leaving = i;
                }
            }
        }
        if leaving == usize::MAX {
            return None; // unbounded; cannot happen on our polytopes
        }
        let pivot = t[leaving * width + entering];
        for j in 0..width {
            t[leaving * width + j] /= pivot;
        }
        for i in 0..=m {
            if i != leaving {
                let factor = t[i * width + entering];
                if factor != 0.0 {
                    for j in 0..width {
                        t[i * width + j] -= factor * t[leaving * width + j];
                    }
                }
            }
        }
        basis[leaving] = entering;
    }
    None
}

/// An observable with certified sup and Lipschitz bounds, the class over
/// which the flat distance takes its supremum (after scaling).
pub struct LipschitzObservable<'a> {
    eval: &'a dyn Fn(&[f64]) -> f64,
    sup_bound: f64,
    lip_bound: f64,
}

impl<'a> LipschitzObservable<'a> {
    /// Wraps an evaluator with certified bounds (both finite, nonnegative).
    /// The bounds are taken on trust here; [`Self::spot_check`] verifies them
    /// on sampled points.
    pub fn new(eval: &'a dyn Fn(&[f64]) -> f64, sup_bound: f64, lip_bound: f64) -> Result<Self> {
        if !(sup_bound.is_finite() && sup_bound >= 0.0 && lip_bound.is_finite() && lip_bound >= 0.0)
        {
            return Err(Error::InvalidParameter(
                "observable bounds must be finite and nonnegative".into(),
            ));
        }
        Ok(LipschitzObservable {
            eval,
            sup_bound,
            lip_bound,
        })
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        (self.eval)(z)
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn lip_bound(&self) -> f64 {
        self.lip_bound
    }

    /// Central-difference gradient; adequate for observables that are smooth
    /// where the measure lives.
    pub fn gradient(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), out.len());
        let mut probe = z.to_vec();
        for k in 0..z.len() {
            let h = 1e-6 * (1.0 + z[k].abs());
            probe[k] = z[k] + h;
            let hi = (self.eval)(&probe);
            probe[k] = z[k] - h;
            let lo = (self.eval)(&probe);
            probe[k] = z[k];
            out[k] = (hi - lo) / (2.0 * h);
        }
    }

    /// Verifies the certified bounds on the given sample points: every value
    /// within the sup bound, every pair within the Lipschitz bound.
    pub fn spot_check(&self, points: &[Vec<f64>]) -> Result<()> {
        let tol = 1e-9;
        for p in points {
            let v = self.evaluate(p);
            if v.abs() > self.sup_bound + tol {
                return Err(Error::InvalidParameter(format!(
                    "observable exceeds its sup bound: |{v}| > {}",
                    self.sup_bound
                )));
            }
        }
        for (i, p) in points.iter().enumerate() {
            for q in points.iter().skip(i + 1) {
                let gap = (self.evaluate(p) - self.evaluate(q)).abs();
                if gap > self.lip_bound * dist(p, q) + tol {
                    return Err(Error::InvalidParameter(
                        "observable exceeds its Lipschitz bound on a sampled pair".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Result of checking the pairing inequality
/// `|int g dmu - int g dnu| <= max(sup, Lip) * d(mu, nu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates both sides of the pairing inequality for a certified observable.
pub fn pairing_bound_check(
    g: &LipschitzObservable<'_>,
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
) -> Result<PairingBound> {
    let lhs = (mu.integrate(|z| g.evaluate(z)) - nu.integrate(|z| g.evaluate(z))).abs();
    let rhs = g.sup_bound().max(g.lip_bound()) * bl_distance(mu, nu)?;
    Ok(PairingBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

/// Total variation norm of the signed difference `mu - nu` of atomic
/// measures: the sum of absolute coefficients on the deduplicated union
/// support. Dominates the flat distance.
pub fn tv_distance(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    let (_, coeffs, _) = signed_union(mu, nu)?;
    Ok(coeffs.iter().map(|c| c.abs()).sum())
}
