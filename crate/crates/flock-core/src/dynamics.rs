//! Time integration of the velocity-alignment particle system
//!
//! ```text
//!   dx_i/dt = v_i
//!   dv_i/dt = sum_j m_j (v_j - v_i) psi(|x_j - x_i|)
//! ```
//!
//! with adaptive embedded Runge-Kutta 5(4) stepping, a pair-separation step
//! limiter, threshold-based sticking detection after every accepted step,
//! and mass/momentum-conserving merging of detected clusters.

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::geom::{dist, norm, powf};
use crate::kernel::WeightSpec;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Everything a simulation run needs besides the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub weight: WeightSpec,
    /// Final time; integration runs from the initial ensemble's time to here.
    pub t_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Positions closer than this are sticking candidates.
    pub stick_dx: f64,
    /// Velocities closer than this are sticking candidates.
    pub stick_dv: f64,
    pub max_dt: f64,
    /// Time interval between recorded snapshots (grid anchored at t = 0).
    pub output_stride: f64,
    /// Seed forwarded to any stochastic harness built on top of a run; the
    /// integration itself is deterministic.
    pub seed: u64,
}

impl SimOptions {
    /// Options with conservative defaults: tolerances `1e-8 / 1e-10`,
    /// sticking thresholds `1e-6`, `max_dt = 0.05` and one hundred snapshots.
    pub fn new(weight: WeightSpec, t_end: f64) -> Self {
        SimOptions {
            weight,
            t_end,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            stick_dx: 1e-6,
            stick_dv: 1e-6,
            max_dt: 0.05,
            output_stride: t_end / 100.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "t_end must be positive and finite, got {}",
                self.t_end
            )));
        }
        for (name, value) in [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_dt", self.max_dt),
            ("output_stride", self.output_stride),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        for (name, value) in [("stick_dx", self.stick_dx), ("stick_dv", self.stick_dv)] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative and finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// One merge of a sticking cluster. `indices` refer to particles of `pre`;
/// the merged particle takes the slot of the smallest index in `post`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeEvent {
    pub time: f64,
    pub indices: Vec<usize>,
    pub pre: Ensemble,
    pub post: Ensemble,
}

impl MergeEvent {
    /// Where particle `i` of `pre` lives in `post`, or `None` if it was
    /// absorbed into the merged particle (cluster members lose their
    /// individual identity).
    pub fn map_surviving(&self, i: usize) -> Option<usize> {
        if self.indices.contains(&i) {
            return None;
        }
        let removed_below = self.indices[1..].iter().filter(|&&r| r < i).count();
        Some(i - removed_below)
    }

    /// Index of the merged particle in `post`.
    pub fn merged_index(&self) -> usize {
        self.indices[0]
    }

    /// Mass of the merged particle.
    pub fn mass_after(&self) -> f64 {
        self.post.mass(self.merged_index())
    }
}

/// Time-sampled snapshots of a run plus its merge-event log. Snapshot times
/// are strictly increasing and every snapshot is a valid ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Ensemble>,
    pub events: Vec<MergeEvent>,
    pub options: SimOptions,
}

impl Trajectory {
    pub fn initial_state(&self) -> &Ensemble {
        &self.snapshots[0]
    }

    pub fn final_state(&self) -> &Ensemble {
        self.snapshots.last().expect("at least one snapshot")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|e| e.time()).collect()
    }

    /// Snapshot whose time is within `tol` of `t`, if any.
    pub fn snapshot_near(&self, t: f64, tol: f64) -> Option<&Ensemble> {
        self.snapshots.iter().find(|e| (e.time() - t).abs() <= tol)
    }

    /// Tracks the identity of an initial particle through the merge log:
    /// its index at time `t`, or `None` once a merge absorbed it.
    pub fn atom_index_at(&self, initial: usize, t: f64) -> Option<usize> {
        let mut idx = initial;
        for ev in self.events.iter().filter(|ev| ev.time <= t) {
            idx = ev.map_surviving(idx)?;
        }
        Some(idx)
    }
}

/// Alignment accelerations `a_i = sum_j m_j (v_j - v_i) psi(|x_j - x_i|)`,
/// row-major `N x d`. Evaluating a singular weight at zero separation is an
/// error: the caller must merge the coincident pair first. The summand is
/// antisymmetric under `i <-> j`, so `sum_i m_i a_i` vanishes to rounding.
pub fn alignment_rhs(e: &Ensemble, weight: &WeightSpec) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; e.len() * e.dim()];
    accel_into(
        e.dim(),
        e.masses(),
        e.positions(),
        e.velocities(),
        weight,
        e.time(),
        &mut acc,
    )?;
    Ok(acc)
}

fn accel_into(
    dim: usize,
    masses: &[f64],
    positions: &[f64],
    velocities: &[f64],
    weight: &WeightSpec,
    time: f64,
    out: &mut [f64],
) -> Result<()> {
    let n = masses.len();
    out.fill(0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = dist(
                &positions[i * dim..(i + 1) * dim],
                &positions[j * dim..(j + 1) * dim],
            );
            let w = weight.evaluate(r);
            if !w.is_finite() {
                return Err(Error::CollisionAtSingularity { i, j, time });
            }
            for k in 0..dim {
                let f = w * (velocities[j * dim + k] - velocities[i * dim + k]);
                out[i * dim + k] += masses[j] * f;
                out[j * dim + k] -= masses[i] * f;
            }
        }
    }
    Ok(())
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Step-size floor relative to `t_end` below which we declare stiffness.
const UNDERFLOW_FACTOR: f64 = 1e-14;

/// Hard cap so no pair moves closer by more than half its separation in one
/// step, computed from the state at the step start. Pairs at exactly zero
/// separation cannot cross and impose no limit. A pair that keeps
/// approaching without ever satisfying both sticking thresholds drives the
/// step size to the underflow guard; that surfaces as a diagnosable
/// [`Error::StiffnessFailure`] rather than an overshoot.
fn pair_separation_cap(dim: usize, positions: &[f64], velocities: &[f64]) -> f64 {
    let n = positions.len() / dim;
    let mut cap = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let r = dist(
                &positions[i * dim..(i + 1) * dim],
                &positions[j * dim..(j + 1) * dim],
            );
            if r > 0.0 {
                let w = dist(
                    &velocities[i * dim..(i + 1) * dim],
                    &velocities[j * dim..(j + 1) * dim],
                );
                cap = cap.min(0.5 * r / w.max(1e-300));
            }
        }
    }
    cap
}

/// One accepted embedded Runge-Kutta 5(4) step.
///
/// The attempted size is `dt_suggest` clamped by `max_dt` and the pair
/// separation cap; the step is accepted once the embedded error estimate is
/// at most `abs_tol + rel_tol * |state|`. Returns the advanced ensemble, the
/// size actually used and the controller's suggestion for the next step.
pub fn step(e: &Ensemble, opts: &SimOptions, dt_suggest: f64) -> Result<(Ensemble, f64, f64)> {
    if !(dt_suggest > 0.0) || !dt_suggest.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dt_suggest must be positive and finite, got {dt_suggest}"
        )));
    }
    let dim = e.dim();
    let masses = e.masses();
    let p0 = e.positions();
    let v0 = e.velocities();
    let t = e.time();
    let m = p0.len();

    let cap = pair_separation_cap(dim, p0, v0).min(opts.max_dt);
    let mut dt = dt_suggest.min(cap);
    let guard = UNDERFLOW_FACTOR * opts.t_end;

    let pn = norm(p0);
    let vn = norm(v0);
    let state_norm = libm::sqrt(pn * pn + vn * vn);
    let tol = opts.abs_tol + opts.rel_tol * state_norm;

    // k1 does not depend on dt; reuse it across rejections.
    let mut vs: Vec<Vec<f64>> = vec![vec![0.0; m]; 7];
    let mut accs: Vec<Vec<f64>> = vec![vec![0.0; m]; 7];
    vs[0].copy_from_slice(v0);
    accel_into(dim, masses, p0, v0, &opts.weight, t, &mut accs[0])?;

    let mut ps = vec![0.0; m];
    let mut p5 = vec![0.0; m];
    let mut v5 = vec![0.0; m];

    loop {
        for s in 1..7 {
            for k in 0..m {
                let mut dp = 0.0;
                let mut dv = 0.0;
                for j in 0..s {
                    let a = A[s - 1][j];
                    if a != 0.0 {
                        dp += a * vs[j][k];
                        dv += a * accs[j][k];
                    }
                }
                ps[k] = p0[k] + dt * dp;
                vs[s][k] = v0[k] + dt * dv;
            }
            let (done, rest) = accs.split_at_mut(s);
            let _ = done;
            accel_into(dim, masses, &ps, &vs[s], &opts.weight, t, &mut rest[0])?;
        }

        let mut err_sq = 0.0;
        for k in 0..m {
            let mut dp5 = 0.0;
            let mut dv5 = 0.0;
            let mut dpe = 0.0;
            let mut dve = 0.0;
            for s in 0..7 {
                dp5 += B5[s] * vs[s][k];
                dv5 += B5[s] * accs[s][k];
                dpe += (B5[s] - B4[s]) * vs[s][k];
                dve += (B5[s] - B4[s]) * accs[s][k];
            }
            p5[k] = p0[k] + dt * dp5;
            v5[k] = v0[k] + dt * dv5;
            err_sq += dt * dpe * (dt * dpe) + dt * dve * (dt * dve);
        }
        let err = libm::sqrt(err_sq);

        if err <= tol {
            let grow = if err > 0.0 {
                (0.9 * powf(tol / err, 0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            let next = e.with_state(p5.clone(), v5.clone(), t + dt);
            return Ok((next, dt, dt * grow));
        }
        dt *= (0.9 * powf(tol / err, 0.2)).max(0.1);
        if dt < guard {
            return Err(Error::StiffnessFailure { time: t, dt });
        }
    }
}

/// Disjoint sticking clusters: connected components of the graph with an
/// edge between `i` and `j` whenever `|x_i - x_j| <= stick_dx` and
/// `|v_i - v_j| <= stick_dv`. Only components of at least two particles are
/// returned, each sorted ascending, ordered by smallest member.
pub fn detect_sticking(e: &Ensemble, stick_dx: f64, stick_dv: f64) -> Vec<Vec<usize>> {
    let n = e.len();
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for i in 0..n {
        for j in (i + 1)..n {
            if dist(e.position(i), e.position(j)) <= stick_dx
                && dist(e.velocity(i), e.velocity(j)) <= stick_dv
            {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_to_cluster: Vec<usize> = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_to_cluster[r] == usize::MAX {
            root_to_cluster[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[root_to_cluster[r]].push(i);
    }
    clusters.retain(|c| c.len() >= 2);
    clusters
}

/// Detects clusters on the current state and merges them all, appending one
/// event per cluster (all at the same time; disjoint clusters commute).
fn apply_merges(e: &mut Ensemble, events: &mut Vec<MergeEvent>, opts: &SimOptions) -> Result<()> {
    let clusters = detect_sticking(e, opts.stick_dx, opts.stick_dv);
    if clusters.is_empty() {
        return Ok(());
    }
    let first_new = events.len();
    for cluster in clusters {
        // Indices were computed on the state before this pass; route them
        // through the merges already applied within the pass.
        let mapped: Vec<usize> = cluster
            .iter()
            .map(|&i| {
                let mut idx = i;
                for ev in &events[first_new..] {
                    idx = ev
                        .map_surviving(idx)
                        .expect("clusters from one detection pass are disjoint");
                }
                idx
            })
            .collect();
        let pre = e.clone();
        let post = pre.merge(&mapped)?;
        events.push(MergeEvent {
            time: e.time(),
            indices: mapped,
            pre,
            post: post.clone(),
        });
        *e = post;
    }
    Ok(())
}

/// Integrates from the initial ensemble's time to `opts.t_end`.
///
/// After every accepted step, sticking clusters are detected and merged
/// (each merge logged). Snapshots are recorded on the `output_stride` grid
/// anchored at `t = 0`, plus the initial and final states. An initial
/// detection pass runs before the first step, so inputs containing already
/// stuck particles start merged.
pub fn simulate(e0: &Ensemble, opts: &SimOptions) -> Result<Trajectory> {
    opts.validate()?;
    let t_end = opts.t_end;
    if e0.time() >= t_end {
        return Err(Error::InvalidParameter(format!(
            "initial time {} is not before t_end {}",
            e0.time(),
            t_end
        )));
    }

    let snap_tol = 1e-12 * t_end.max(1.0);
    let stride = opts.output_stride;

    let mut e = e0.clone();
    let mut events = Vec::new();
    apply_merges(&mut e, &mut events, opts)?;
    let mut snapshots = vec![e.clone()];

    let mut next_out = (libm::floor(e.time() / stride + 1e-9) + 1.0) * stride;
    while next_out <= e.time() + snap_tol {
        next_out += stride;
    }

    let mut dt_next = opts.max_dt.min(stride).min(t_end - e.time());
    loop {
        let t = e.time();
        if t >= t_end - snap_tol {
            break;
        }
        let boundary = next_out.min(t_end);
        let mut dt_target = dt_next;
        if t + 1.01 * dt_target >= boundary {
            dt_target = boundary - t;
        }
        let (mut advanced, _used, suggest) = step(&e, opts, dt_target)?;
        dt_next = suggest;
        if (advanced.time() - boundary).abs() <= snap_tol {
            advanced = advanced.with_time(boundary);
        }
        e = advanced;
        apply_merges(&mut e, &mut events, opts)?;

        if e.time() >= next_out - snap_tol {
            snapshots.push(e.clone());
            while next_out <= e.time() + snap_tol {
                next_out += stride;
            }
        } else if e.time() >= t_end - snap_tol {
            snapshots.push(e.clone());
        }
    }

    Ok(Trajectory {
        snapshots,
        events,
        options: opts.clone(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Independent fixed-step RK4 reference integrator used as the oracle
    /// for derived expectations. No step control, no merging.
    pub(crate) fn reference_rk4(
        e0: &Ensemble,
        weight: &WeightSpec,
        t_end: f64,
        dt: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let dim = e0.dim();
        let n = e0.len();
        let masses = e0.masses().to_vec();
        let mut p = e0.positions().to_vec();
        let mut v = e0.velocities().to_vec();
        let accel = |p: &[f64], v: &[f64]| -> Vec<f64> {
            let mut a = vec![0.0; n * dim];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let r = dist(&p[i * dim..(i + 1) * dim], &p[j * dim..(j + 1) * dim]);
                    let w = weight.evaluate(r);
                    for k in 0..dim {
                        a[i * dim + k] += masses[j] * w * (v[j * dim + k] - v[i * dim + k]);
                    }
                }
            }
            a
        };
        let mut t = e0.time();
        while t < t_end - 1e-15 {
            let h = dt.min(t_end - t);
            let a1 = accel(&p, &v);
            let p2: Vec<f64> = p.iter().zip(&v).map(|(x, vv)| x + 0.5 * h * vv).collect();
            let v2: Vec<f64> = v.iter().zip(&a1).map(|(vv, a)| vv + 0.5 * h * a).collect();
            let a2 = accel(&p2, &v2);
            let p3: Vec<f64> = p.iter().zip(&v2).map(|(x, vv)| x + 0.5 * h * vv).collect();
            let v3: Vec<f64> = v.iter().zip(&a2).map(|(vv, a)| vv + 0.5 * h * a).collect();
            let a3 = accel(&p3, &v3);
            let p4: Vec<f64> = p.iter().zip(&v3).map(|(x, vv)| x + h * vv).collect();
            let v4: Vec<f64> = v.iter().zip(&a3).map(|(vv, a)| vv + h * a).collect();
            let a4 = accel(&p4, &v4);
            for k in 0..n * dim {
                p[k] += h / 6.0 * (v[k] + 2.0 * v2[k] + 2.0 * v3[k] + v4[k]);
                v[k] += h / 6.0 * (a1[k] + 2.0 * a2[k] + 2.0 * a3[k] + a4[k]);
            }
            t += h;
        }
        (p, v)
    }

    pub(crate) fn two_body(v1: f64, v2: f64) -> Ensemble {
        Ensemble::new(1, vec![0.5, 0.5], vec![0.0, 1.0], vec![v1, v2], 0.0).unwrap()
    }

    /// Relative-flow invariant of the two-body problem with the power-law
    /// weight: `w + sign(r) |r|^(1-a) / (1-a)` for `r = x2 - x1`, `w = dr/dt`.
    pub(crate) fn two_body_invariant(e: &Ensemble, exponent: f64) -> f64 {
        let r = e.position(1)[0] - e.position(0)[0];
        let w = e.velocity(1)[0] - e.velocity(0)[0];
        let pot = powf(r.abs(), 1.0 - exponent) / (1.0 - exponent);
        w + if r >= 0.0 { pot } else { -pot }
    }

    #[test]
    fn free_streaming_is_exact_per_step() {
        let e = Ensemble::new(1, vec![1.0], vec![0.0], vec![1.0], 0.0).unwrap();
        let opts = SimOptions::new(WeightSpec::singular(0.25).unwrap(), 1.0);
        let (next, dt, _) = step(&e, &opts, 0.01).unwrap();
        assert!((next.position(0)[0] - dt).abs() <= 1e-15);
        assert_eq!(next.velocity(0)[0], 1.0);
    }

    #[test]
    fn equal_velocities_are_a_fixed_point_of_the_rhs() {
        let e = Ensemble::new(
            2,
            vec![0.25; 4],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            [0.3, -0.2].repeat(4),
            0.0,
        )
        .unwrap();
        let w = WeightSpec::singular(0.25).unwrap();
        let acc = alignment_rhs(&e, &w).unwrap();
        assert!(acc.iter().all(|a| *a == 0.0));

        let opts = SimOptions::new(w, 1.0);
        let (next, _, _) = step(&e, &opts, 0.05).unwrap();
        assert_eq!(next.velocities(), e.velocities());
    }

    #[test]
    fn two_body_rhs_hand_value() {
        // psi(1) = 1, so a_1 = m_2 (v_2 - v_1) = 1/2 and a_2 = -1/2.
        let e = two_body(0.0, 1.0);
        let acc = alignment_rhs(&e, &WeightSpec::singular(0.25).unwrap()).unwrap();
        assert!((acc[0] - 0.5).abs() < 1e-15);
        assert!((acc[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn rhs_momentum_vanishes_by_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = WeightSpec::singular(0.25).unwrap();
        for _ in 0..30 {
            let d = rng.gen_range(1..4usize);
            let n = 3;
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let masses: Vec<f64> = raw.iter().map(|m| m / total).collect();
            let positions: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let velocities: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let e = Ensemble::new(d, masses, positions, velocities, 0.0).unwrap();
            let acc = alignment_rhs(&e, &w).unwrap();
            for k in 0..d {
                let total: f64 = (0..n).map(|i| e.mass(i) * acc[i * d + k]).sum();
                assert!(total.abs() < 1e-14, "momentum rate {total}");
            }
        }
    }

    #[test]
    fn singular_weight_errors_at_contact() {
        let e = Ensemble::new(1, vec![0.5, 0.5], vec![1.0, 1.0], vec![0.0, 2.0], 0.0).unwrap();
        assert!(matches!(
            alignment_rhs(&e, &WeightSpec::singular(0.25).unwrap()),
            Err(Error::CollisionAtSingularity { .. })
        ));
        // The capped weight stays finite at contact.
        assert!(alignment_rhs(&e, &WeightSpec::capped(0.25, 10.0).unwrap()).is_ok());
    }

    #[test]
    fn detect_sticking_cases_and_oracle() {
        // All far apart: nothing.
        let e = two_body(0.0, 0.0);
        assert!(detect_sticking(&e, 1e-6, 1e-6).is_empty());

        // Coincident with equal velocities: one pair, even at zero threshold.
        let e = Ensemble::new(1, vec![0.5, 0.5], vec![2.0, 2.0], vec![1.0, 1.0], 0.0).unwrap();
        assert_eq!(detect_sticking(&e, 0.0, 0.0), vec![vec![0, 1]]);

        // Chain: a-b close, b-c close, a-c not: one cluster of three.
        let e = Ensemble::new(
            1,
            vec![0.25, 0.25, 0.5],
            vec![0.0, 0.9, 1.8],
            vec![0.0, 0.0, 0.0],
            0.0,
        )
        .unwrap();
        assert_eq!(detect_sticking(&e, 1.0, 1.0), vec![vec![0, 1, 2]]);

        // Oracle: brute-force BFS over the threshold graph.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..40 {
            let n = rng.gen_range(2..9);
            let masses = vec![1.0 / n as f64; n];
            let positions: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let velocities: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = Ensemble::new(1, masses, positions, velocities, 0.0).unwrap();
            let (dx, dv) = (rng.gen_range(0.0..0.8), rng.gen_range(0.0..0.8));

            let mut adj = vec![vec![false; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if i != j
                        && dist(e.position(i), e.position(j)) <= dx
                        && dist(e.velocity(i), e.velocity(j)) <= dv
                    {
                        adj[i][j] = true;
                    }
                }
            }
            let mut seen = vec![false; n];
            let mut expected: Vec<Vec<usize>> = Vec::new();
            for start in 0..n {
                if seen[start] {
                    continue;
                }
                let mut comp = vec![start];
                let mut queue = vec![start];
                seen[start] = true;
                while let Some(u) = queue.pop() {
                    for v in 0..n {
                        if adj[u][v] && !seen[v] {
                            seen[v] = true;
                            comp.push(v);
                            queue.push(v);
                        }
                    }
                }
                comp.sort_unstable();
                if comp.len() >= 2 {
                    expected.push(comp);
                }
            }
            expected.sort();
            assert_eq!(detect_sticking(&e, dx, dv), expected);
        }
    }

    #[test]
    fn two_body_first_integral_drifts_below_tolerance() {
        // E = -0.5 + 1/(1 - 0.25) = 5/6.
        let e = two_body(0.25, -0.25);
        let w = WeightSpec::singular(0.25).unwrap();
        let mut opts = SimOptions::new(w, 1.0);
        opts.rel_tol = 1e-10;
        opts.abs_tol = 1e-12;
        opts.output_stride = 0.05;
        let traj = simulate(&e, &opts).unwrap();
        let e0 = two_body_invariant(traj.initial_state(), 0.25);
        assert!((e0 - 5.0 / 6.0).abs() < 1e-14);
        for snap in &traj.snapshots {
            let drift = (two_body_invariant(snap, 0.25) - e0).abs();
            assert!(drift < 1e-6, "drift {drift} at t = {}", snap.time());
        }

        // Oracle: tiny-step reference integration agrees at the endpoint.
        let (pref, vref) = reference_rk4(&e, &w, 1.0, 1e-5);
        let last = traj.final_state();
        for k in 0..2 {
            assert!((last.positions()[k] - pref[k]).abs() < 1e-7);
            assert!((last.velocities()[k] - vref[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn flocking_fixture_reaches_equilibrium_separation() {
        let e = two_body(0.25, -0.25);
        let mut opts = SimOptions::new(WeightSpec::singular(0.25).unwrap(), 20.0);
        opts.rel_tol = 1e-10;
        opts.abs_tol = 1e-12;
        opts.output_stride = 0.1;
        let traj = simulate(&e, &opts).unwrap();
        assert!(traj.events.is_empty());
        let last = traj.final_state();
        let sep = (last.position(1)[0] - last.position(0)[0]).abs();
        let rstar = powf(0.625, 4.0 / 3.0);
        assert!((rstar - 0.5343).abs() < 1e-3);
        assert!((sep - rstar).abs() < 1e-3, "separation {sep} vs {rstar}");
    }

    #[test]
    fn sticking_fixture_merges_once_near_the_predicted_time() {
        // E = 0: the pair closes in finite time; the separable closed form
        // puts exact coincidence at t = 3.
        let e = two_body(2.0 / 3.0, -2.0 / 3.0);
        let mut opts = SimOptions::new(WeightSpec::singular(0.25).unwrap(), 5.0);
        opts.rel_tol = 1e-10;
        opts.abs_tol = 1e-12;
        opts.output_stride = 0.05;
        let traj = simulate(&e, &opts).unwrap();
        assert_eq!(traj.events.len(), 1, "expected exactly one merge");
        let t_merge = traj.events[0].time;
        assert!(
            t_merge > 2.9 && t_merge < 3.02,
            "merge at {t_merge}, expected near 3"
        );
        // Post-merge: one particle at the conserved mean velocity (zero).
        let last = traj.final_state();
        assert_eq!(last.len(), 1);
        assert!(last.velocity(0)[0].abs() < 1e-9);
        assert!((last.mass(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_velocity_cloud_never_merges_or_accelerates() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 6;
        let masses = vec![1.0 / n as f64; n];
        let positions: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let velocities: Vec<f64> = [0.4, -0.7].repeat(n).to_vec();
        let e = Ensemble::new(2, masses, positions, velocities.clone(), 0.0).unwrap();
        let opts = SimOptions::new(WeightSpec::singular(0.25).unwrap(), 2.0);
        let traj = simulate(&e, &opts).unwrap();
        assert!(traj.events.is_empty());
        for snap in &traj.snapshots {
            assert_eq!(snap.velocities(), velocities.as_slice());
        }
    }

    #[test]
    fn snapshots_land_on_the_output_grid() {
        let e = two_body(0.25, -0.25);
        let mut opts = SimOptions::new(WeightSpec::singular(0.25).unwrap(), 1.0);
        opts.output_stride = 0.25;
        let traj = simulate(&e, &opts).unwrap();
        let times = traj.times();
        assert_eq!(times.len(), 5);
        for (k, t) in times.iter().enumerate() {
            assert!((t - 0.25 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn crossing_pair_with_zero_thresholds_ends_in_stiffness() {
        // Relative velocity stays bounded away from zero at contact, so the
        // pair wants to cross; with zero sticking thresholds no merge can
        // fire and the separation cap halves the step until the guard.
        let e = two_body(1.0, -1.0);
        let mut opts = SimOptions::new(WeightSpec::singular(0.25).unwrap(), 5.0);
        opts.stick_dx = 0.0;
        opts.stick_dv = 0.0;
        let result = simulate(&e, &opts);
        assert!(
            matches!(result, Err(Error::StiffnessFailure { .. })),
            "got {result:?}"
        );
    }

    #[test]
    fn sticking_pair_with_zero_thresholds_freezes_without_merging() {
        // On the exact-sticking trajectory velocities collapse together
        // with the separation, so the integrator resolves the approach and
        // the pair ends up co-located to rounding with no merge logged.
        let e = two_body(2.0 / 3.0, -2.0 / 3.0);
        let mut opts = SimOptions::new(WeightSpec::singular(0.25).unwrap(), 4.0);
        opts.stick_dx = 0.0;
        opts.stick_dv = 0.0;
        let traj = simulate(&e, &opts).unwrap();
        assert!(traj.events.is_empty());
        let last = traj.final_state();
        let sep = (last.position(1)[0] - last.position(0)[0]).abs();
        assert!(sep < 1e-8, "separation {sep}");
    }

    #[test]
    fn capped_runs_match_while_the_cap_is_inactive() {
        // Caps 10 and 1000 never activate while separations stay above
        // 10^(-1/0.25) = 1e-4, so the two runs see identical vector fields.
        let e = two_body(0.25, -0.25);
        let mut a = SimOptions::new(WeightSpec::capped(0.25, 10.0).unwrap(), 2.0);
        a.output_stride = 0.1;
        let mut b = a.clone();
        b.weight = WeightSpec::capped(0.25, 1000.0).unwrap();
        let ta = simulate(&e, &a).unwrap();
        let tb = simulate(&e, &b).unwrap();
        assert_eq!(ta.snapshots.len(), tb.snapshots.len());
        for (sa, sb) in ta.snapshots.iter().zip(&tb.snapshots) {
            assert_eq!(sa.positions(), sb.positions());
            assert_eq!(sa.velocities(), sb.velocities());
        }
    }

    #[test]
    fn merge_event_index_mapping_tracks_identity() {
        let ev = MergeEvent {
            time: 1.0,
            indices: vec![1, 3],
            // Placeholder states; the mapping is index arithmetic only.
            pre: two_body(0.0, 0.0),
            post: two_body(0.0, 0.0),
        };
        assert_eq!(ev.map_surviving(0), Some(0));
        assert_eq!(ev.map_surviving(1), None);
        assert_eq!(ev.map_surviving(2), Some(2));
        assert_eq!(ev.map_surviving(3), None);
        assert_eq!(ev.map_surviving(4), Some(3));
        assert_eq!(ev.merged_index(), 1);
    }
}
