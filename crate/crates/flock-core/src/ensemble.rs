//! Particle ensembles, their reading as atomic (empirical) measures on phase
//! space, grid quantization of continuous initial data, and mass-conserving
//! merging of clusters.

use crate::error::{Error, Result};
use crate::geom::{all_finite, norm};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Total mass must equal one to within this tolerance.
pub const MASS_TOL: f64 = 1e-12;

/// `N` weighted particles `(m_i, x_i, v_i)` in `R^d x R^d` at a time `t`.
/// Positions and velocities are stored row-major (`N x d`). Value-like:
/// operations return new ensembles instead of mutating.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    masses: Vec<f64>,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    time: f64,
}

impl Ensemble {
    /// Validates and builds an ensemble. Requires `dim >= 1`, at least one
    /// particle, positive masses summing to one within [`MASS_TOL`], finite
    /// coordinates and matching lengths.
    pub fn new(
        dim: usize,
        masses: Vec<f64>,
        positions: Vec<f64>,
        velocities: Vec<f64>,
        time: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        let n = masses.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "ensemble needs at least one particle".into(),
            ));
        }
        if positions.len() != n * dim || velocities.len() != n * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coordinates for {} particles in dimension {}, got {} positions and {} velocities",
                n * dim,
                n,
                dim,
                positions.len(),
                velocities.len()
            )));
        }
        if !masses.iter().all(|m| m.is_finite() && *m > 0.0) {
            return Err(Error::InvalidParameter(
                "masses must be positive and finite".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "total mass must be 1 within {MASS_TOL}, got {total}"
            )));
        }
        if !all_finite(&positions) || !all_finite(&velocities) {
            return Err(Error::InvalidParameter(
                "coordinates must be finite".into(),
            ));
        }
        if !time.is_finite() || time < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "time must be finite and nonnegative, got {time}"
            )));
        }
        Ok(Ensemble {
            dim,
            masses,
            positions,
            velocities,
            time,
        })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: N >= 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Total momentum `sum_i m_i v_i` as a `d`-vector.
    pub fn momentum(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        for i in 0..self.len() {
            for k in 0..self.dim {
                p[k] += self.masses[i] * self.velocities[i * self.dim + k];
            }
        }
        p
    }

    /// Same state stamped with a different time.
    pub(crate) fn with_time(&self, time: f64) -> Self {
        let mut e = self.clone();
        e.time = time;
        e
    }

    /// Replaces positions and velocities wholesale (used by the integrator).
    pub(crate) fn with_state(&self, positions: Vec<f64>, velocities: Vec<f64>, time: f64) -> Self {
        debug_assert_eq!(positions.len(), self.positions.len());
        debug_assert_eq!(velocities.len(), self.velocities.len());
        Ensemble {
            dim: self.dim,
            masses: self.masses.clone(),
            positions,
            velocities,
            time,
        }
    }

    /// `max_i max(|x_i|, |v_i|)`: the smallest radius such that every
    /// particle's position and velocity both lie in the centered ball.
    pub fn support_radius(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..self.len() {
            r = r.max(norm(self.position(i))).max(norm(self.velocity(i)));
        }
        r
    }

    /// Largest phase-space norm `|(x_i, v_i)|` over the particles; the radius
    /// of the smallest centered phase-space ball containing the support.
    pub fn phase_radius(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..self.len() {
            let x2: f64 = self.position(i).iter().map(|c| c * c).sum();
            let v2: f64 = self.velocity(i).iter().map(|c| c * c).sum();
            r = r.max(libm::sqrt(x2 + v2));
        }
        r
    }

    /// Reads the ensemble as the atomic measure `sum_i m_i delta_{(x_i,v_i)}`
    /// on phase space `R^{2d}`.
    pub fn empirical_measure(&self) -> AtomicMeasure {
        let d = self.dim;
        let mut points = Vec::with_capacity(self.len() * 2 * d);
        for i in 0..self.len() {
            points.extend_from_slice(self.position(i));
            points.extend_from_slice(self.velocity(i));
        }
        AtomicMeasure::new(2 * d, points, self.masses.clone())
            .expect("a valid ensemble always yields a valid measure")
    }

    /// Replaces the given cluster (at least two distinct indices) by a single
    /// particle carrying the summed mass at the mass-weighted mean position
    /// and velocity. Total mass and momentum are preserved; the merged
    /// particle takes the slot of the smallest cluster index and the other
    /// members are removed.
    pub fn merge(&self, cluster: &[usize]) -> Result<Ensemble> {
        if cluster.len() < 2 {
            return Err(Error::InvalidCluster(format!(
                "cluster must have at least 2 indices, got {}",
                cluster.len()
            )));
        }
        let mut sorted: Vec<usize> = cluster.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidCluster("duplicate indices".into()));
        }
        if *sorted.last().unwrap() >= self.len() {
            return Err(Error::InvalidCluster(format!(
                "index {} out of range for {} particles",
                sorted.last().unwrap(),
                self.len()
            )));
        }

        let d = self.dim;
        let merged_mass: f64 = sorted.iter().map(|&i| self.masses[i]).sum();
        let mut merged_x = vec![0.0; d];
        let mut merged_v = vec![0.0; d];
        for &i in &sorted {
            for k in 0..d {
                merged_x[k] += self.masses[i] * self.positions[i * d + k];
                merged_v[k] += self.masses[i] * self.velocities[i * d + k];
            }
        }
        for k in 0..d {
            merged_x[k] /= merged_mass;
            merged_v[k] /= merged_mass;
        }

        let keep = sorted[0];
        let removed = &sorted[1..];
        let n_new = self.len() - removed.len();
        let mut masses = Vec::with_capacity(n_new);
        let mut positions = Vec::with_capacity(n_new * d);
        let mut velocities = Vec::with_capacity(n_new * d);
        for i in 0..self.len() {
            if i == keep {
                masses.push(merged_mass);
                positions.extend_from_slice(&merged_x);
                velocities.extend_from_slice(&merged_v);
            } else if removed.binary_search(&i).is_err() {
                masses.push(self.masses[i]);
                positions.extend_from_slice(self.position(i));
                velocities.extend_from_slice(self.velocity(i));
            }
        }
        Ensemble::new(d, masses, positions, velocities, self.time)
    }
}

/// A finite nonnegative weighted point set on `R^n` (here usually the phase
/// space `R^{2d}`). Duplicate points are permitted; see
/// [`AtomicMeasure::canonicalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    point_dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    /// Builds a measure from row-major points and matching weights. Weights
    /// must be nonnegative and finite; the empty measure is allowed.
    pub fn new(point_dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if point_dim == 0 {
            return Err(Error::InvalidParameter(
                "point dimension must be >= 1".into(),
            ));
        }
        if points.len() != weights.len() * point_dim {
            return Err(Error::DimensionMismatch(format!(
                "{} weights need {} coordinates, got {}",
                weights.len(),
                weights.len() * point_dim,
                points.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be nonnegative and finite".into(),
            ));
        }
        if !all_finite(&points) {
            return Err(Error::InvalidParameter("points must be finite".into()));
        }
        Ok(AtomicMeasure {
            point_dim,
            points,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point_dim(&self) -> usize {
        self.point_dim
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.point_dim..(k + 1) * self.point_dim]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Integral of an observable against the measure.
    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|k| self.weights[k] * g(self.point(k))).sum()
    }

    /// Sorts the support lexicographically and sums the weights of exactly
    /// coincident points; drops zero-weight atoms.
    pub fn canonicalize(&self) -> AtomicMeasure {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            lex_cmp(self.point(a), self.point(b))
        });
        let mut points = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for &k in &order {
            let n = weights.len();
            if n > 0 && self.point(k) == &points[(n - 1) * self.point_dim..n * self.point_dim] {
                weights[n - 1] += self.weights[k];
            } else {
                points.extend_from_slice(self.point(k));
                weights.push(self.weights[k]);
            }
        }
        // Drop exact zeros so canonical support = actual support.
        let mut cpoints = Vec::new();
        let mut cweights = Vec::new();
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                cpoints.extend_from_slice(&points[i * self.point_dim..(i + 1) * self.point_dim]);
                cweights.push(w);
            }
        }
        AtomicMeasure {
            point_dim: self.point_dim,
            points: cpoints,
            weights: cweights,
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> core::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).expect("finite by invariant") {
            core::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    core::cmp::Ordering::Equal
}

/// An axis-aligned box in phase space `R^{2d}` given by per-axis bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PhaseBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch(
                "box bounds must be nonempty and equally sized".into(),
            ));
        }
        if !all_finite(&lo) || !all_finite(&hi) || lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::InvalidParameter(
                "box bounds must be finite with lo < hi on every axis".into(),
            ));
        }
        Ok(PhaseBox { lo, hi })
    }

    pub fn axes(&self) -> usize {
        self.lo.len()
    }
}

/// A bounded density on a declared phase-space box, evaluated pointwise at
/// `(x, v)` concatenated into one `2d`-vector.
pub struct DensitySource<'a> {
    pub dim: usize,
    pub bounds: PhaseBox,
    pub density: &'a dyn Fn(&[f64]) -> f64,
}

/// A finite list of weighted phase-space samples (weights need not be
/// normalized).
#[derive(Debug, Clone)]
pub struct SampleSource {
    pub dim: usize,
    /// Row-major `K x 2d` phase points.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// An initial datum that [`quantize`] can turn into an ensemble.
pub enum InitialDatum<'a> {
    Density(DensitySource<'a>),
    Samples(SampleSource),
}

impl<'a> InitialDatum<'a> {
    pub fn dim(&self) -> usize {
        match self {
            InitialDatum::Density(d) => d.dim,
            InitialDatum::Samples(s) => s.dim,
        }
    }
}

/// Midpoint-rule subdivisions per axis used for per-cell quadrature.
const QUAD_POINTS_PER_AXIS: usize = 4;

/// Quantizes an initial datum on a grid of cubic cells with side `h`.
///
/// The declared support box is inflated by one cell on every side so no mass
/// is clipped at the boundary. For a density source each nonempty cell
/// contributes one atom at the cell center carrying the cell's quadrature
/// mass; for a sample source the atom sits at the mass barycenter of the
/// samples in the cell (a single sample is therefore reproduced exactly).
/// Masses are renormalized to sum to one. No point of the datum moves
/// farther than one cell diagonal, so the flat-metric error is O(h).
pub fn quantize(source: &InitialDatum<'_>, h: f64) -> Result<Ensemble> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cell size must be positive and finite, got {h}"
        )));
    }
    match source {
        InitialDatum::Density(d) => quantize_density(d, h),
        InitialDatum::Samples(s) => quantize_samples(s, h),
    }
}

struct Grid {
    origin: Vec<f64>,
    cells_per_axis: Vec<usize>,
    h: f64,
}

impl Grid {
    /// Covers `[lo, hi]` inflated by one cell on each side.
    fn new(lo: &[f64], hi: &[f64], h: f64) -> Grid {
        let origin: Vec<f64> = lo.iter().map(|a| a - h).collect();
        let cells_per_axis: Vec<usize> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| libm::ceil((b - a) / h) as usize + 2)
            .collect();
        Grid {
            origin,
            cells_per_axis,
            h,
        }
    }

    fn cell_count(&self) -> usize {
        self.cells_per_axis.iter().product()
    }

    fn cell_of(&self, z: &[f64]) -> usize {
        let mut idx = 0;
        for (k, &c) in z.iter().enumerate() {
            let mut i = libm::floor((c - self.origin[k]) / self.h) as isize;
            i = i.clamp(0, self.cells_per_axis[k] as isize - 1);
            idx = idx * self.cells_per_axis[k] + i as usize;
        }
        idx
    }

    /// Geometric center of the cell with the given flat index.
    fn cell_center(&self, mut idx: usize) -> Vec<f64> {
        let axes = self.cells_per_axis.len();
        let mut coords = vec![0usize; axes];
        for k in (0..axes).rev() {
            coords[k] = idx % self.cells_per_axis[k];
            idx /= self.cells_per_axis[k];
        }
        coords
            .iter()
            .enumerate()
            .map(|(k, &i)| self.origin[k] + (i as f64 + 0.5) * self.h)
            .collect()
    }
}

fn quantize_density(source: &DensitySource<'_>, h: f64) -> Result<Ensemble> {
    let axes = 2 * source.dim;
    if source.bounds.axes() != axes {
        return Err(Error::DimensionMismatch(format!(
            "phase box has {} axes, expected {}",
            source.bounds.axes(),
            axes
        )));
    }
    let grid = Grid::new(&source.bounds.lo, &source.bounds.hi, h);
    let q = QUAD_POINTS_PER_AXIS;
    let sub = h / q as f64;
    let subcells: usize = (0..axes).map(|_| q).product();
    let cell_volume = libm::pow(h, axes as f64);

    let mut cell_mass = vec![0.0f64; grid.cell_count()];
    let mut point = vec![0.0f64; axes];
    for idx in 0..grid.cell_count() {
        let center = grid.cell_center(idx);
        let mut acc = 0.0;
        for s in 0..subcells {
            let mut rem = s;
            for k in 0..axes {
                let j = rem % q;
                rem /= q;
                point[k] = center[k] - h / 2.0 + (j as f64 + 0.5) * sub;
            }
            let value = (source.density)(&point);
            if !value.is_finite() || value < 0.0 {
                return Err(Error::QuadratureFailure(format!(
                    "density evaluated to {value} at a quadrature node"
                )));
            }
            acc += value;
        }
        cell_mass[idx] = acc / subcells as f64 * cell_volume;
    }

    let total: f64 = cell_mass.iter().sum();
    if !total.is_finite() {
        return Err(Error::QuadratureFailure("total mass is not finite".into()));
    }
    if total <= 0.0 {
        return Err(Error::EmptySupport);
    }

    let mut masses = Vec::new();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for idx in 0..grid.cell_count() {
        if cell_mass[idx] > 0.0 {
            let center = grid.cell_center(idx);
            masses.push(cell_mass[idx] / total);
            positions.extend_from_slice(&center[..source.dim]);
            velocities.extend_from_slice(&center[source.dim..]);
        }
    }
    Ensemble::new(source.dim, masses, positions, velocities, 0.0)
}

fn quantize_samples(source: &SampleSource, h: f64) -> Result<Ensemble> {
    let axes = 2 * source.dim;
    let k = source.weights.len();
    if source.points.len() != k * axes {
        return Err(Error::DimensionMismatch(format!(
            "{} samples need {} coordinates, got {}",
            k,
            k * axes,
            source.points.len()
        )));
    }
    if k == 0 {
        return Err(Error::EmptySupport);
    }
    if !source.weights.iter().all(|w| w.is_finite() && *w >= 0.0) || !all_finite(&source.points) {
        return Err(Error::InvalidParameter(
            "samples must be finite with nonnegative weights".into(),
        ));
    }

    let mut lo = vec![f64::INFINITY; axes];
    let mut hi = vec![f64::NEG_INFINITY; axes];
    for s in 0..k {
        for a in 0..axes {
            let c = source.points[s * axes + a];
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    // Degenerate axes (all samples equal) still need a box of positive width.
    for a in 0..axes {
        if hi[a] - lo[a] < h * 1e-9 {
            lo[a] -= h / 2.0;
            hi[a] += h / 2.0;
        }
    }

    let grid = Grid::new(&lo, &hi, h);
    let mut cell_mass = vec![0.0f64; grid.cell_count()];
    let mut cell_centroid = vec![0.0f64; grid.cell_count() * axes];
    for s in 0..k {
        let z = &source.points[s * axes..(s + 1) * axes];
        let w = source.weights[s];
        if w == 0.0 {
            continue;
        }
        let idx = grid.cell_of(z);
        cell_mass[idx] += w;
        for a in 0..axes {
            cell_centroid[idx * axes + a] += w * z[a];
        }
    }
    let total: f64 = cell_mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptySupport);
    }

    let mut masses = Vec::new();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for idx in 0..grid.cell_count() {
        if cell_mass[idx] > 0.0 {
            masses.push(cell_mass[idx] / total);
            let centroid: Vec<f64> = (0..axes)
                .map(|a| cell_centroid[idx * axes + a] / cell_mass[idx])
                .collect();
            positions.extend_from_slice(&centroid[..source.dim]);
            velocities.extend_from_slice(&centroid[source.dim..]);
        }
    }
    Ensemble::new(source.dim, masses, positions, velocities, 0.0)
}

/// The uniform (constant) density indicator of a phase box; handy as a test
/// and benchmark datum.
pub fn uniform_box_density(bounds: &PhaseBox) -> impl Fn(&[f64]) -> f64 + '_ {
    move |z: &[f64]| {
        let inside = z
            .iter()
            .zip(bounds.lo.iter().zip(&bounds.hi))
            .all(|(c, (a, b))| *c >= *a && *c <= *b);
        if inside {
            1.0
        } else {
            0.0
        }
    }
}
