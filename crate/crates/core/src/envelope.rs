//! Exact convex, concave and monotone envelopes of sampled functions.
//!
//! Wave fan curves are built from the convex (or concave) envelope of a
//! scalar "reduced flux" sampled on a strength grid; the boundary variant
//! needs the *monotone* convex envelope — the largest convex nondecreasing
//! minorant — whose flat part encodes the standing part of the fan.  This
//! module computes all of them exactly on the given grid:
//!
//! * the envelope of a [`SampledFunction`] is the envelope of its piecewise
//!   linear interpolant, so breakpoints are grid nodes and the computation
//!   is a lower (upper) hull scan;
//! * the monotone variants splice the plain envelope with a constant: the
//!   value is frozen left (right) of the first (last) node at which the
//!   envelope slope turns nonnegative;
//! * [`reference`] holds independent brute-force evaluations (minimisation
//!   over all chords) used by the verification battery; the fast and the
//!   brute-force paths share only the chord evaluation primitive, so a hull
//!   bookkeeping bug cannot cancel out.
//!
//! All derivative information is exposed as a right-continuous step
//! function, which is the exact derivative of the piecewise linear
//! envelope away from nodes.

use serde::Serialize;
use std::io::{self, Write};
use thiserror::Error;

/// Errors produced by [`SampledFunction`] construction and restriction.
#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    /// The grid is not strictly increasing at the given node.
    #[error("grid is not strictly increasing at index {index}")]
    NotSorted { index: usize },
    /// A grid point or value is NaN or infinite.
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    /// Fewer than two nodes were supplied.
    #[error("a sampled function needs at least 2 nodes, got {len}")]
    TooFewNodes { len: usize },
    /// Grid and value arrays disagree in length.
    #[error("grid has {grid} entries but values has {values}")]
    LengthMismatch { grid: usize, values: usize },
    /// The requested restriction interval contains fewer than two nodes.
    #[error("interval [{a}, {b}] contains fewer than two grid nodes")]
    EmptyInterval { a: f64, b: f64 },
}

/// A scalar function sampled on a strictly increasing finite grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl SampledFunction {
    /// Validates and wraps a grid/value pair.
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self, EnvelopeError> {
        if grid.len() != values.len() {
            return Err(EnvelopeError::LengthMismatch { grid: grid.len(), values: values.len() });
        }
        if grid.len() < 2 {
            return Err(EnvelopeError::TooFewNodes { len: grid.len() });
        }
        for (i, (&t, &v)) in grid.iter().zip(&values).enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(EnvelopeError::NonFinite { index: i });
            }
            if i > 0 && t <= grid[i - 1] {
                return Err(EnvelopeError::NotSorted { index: i });
            }
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` on `n_nodes` equispaced nodes over `[a, b]`.
    pub fn from_fn(
        a: f64,
        b: f64,
        n_nodes: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self, EnvelopeError> {
        if n_nodes < 2 {
            return Err(EnvelopeError::TooFewNodes { len: n_nodes });
        }
        let h = (b - a) / (n_nodes - 1) as f64;
        let grid: Vec<f64> =
            (0..n_nodes).map(|j| if j + 1 == n_nodes { b } else { a + h * j as f64 }).collect();
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of grid nodes (at least 2).
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Restriction to the grid nodes lying inside `[a, b]`.
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self, EnvelopeError> {
        let lo = self.grid.partition_point(|&t| t < a);
        let hi = self.grid.partition_point(|&t| t <= b);
        if hi.saturating_sub(lo) < 2 {
            return Err(EnvelopeError::EmptyInterval { a, b });
        }
        Ok(Self { grid: self.grid[lo..hi].to_vec(), values: self.values[lo..hi].to_vec() })
    }
}

/// Which envelope a [`PiecewiseLinearEnvelope`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnvelopeKind {
    /// Largest convex minorant.
    Convex,
    /// Smallest concave majorant.
    Concave,
    /// Largest convex *nondecreasing* minorant.
    MonotoneConvex,
    /// Smallest concave *nondecreasing* majorant.
    MonotoneConcave,
}

/// A piecewise linear envelope evaluated on the nodes of its input grid.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearEnvelope {
    kind: EnvelopeKind,
    grid: Vec<f64>,
    values: Vec<f64>,
    /// Node indices of the envelope's vertices, in increasing order; always
    /// contains the first and last node.
    breakpoints: Vec<usize>,
    /// Per node: does the envelope touch the function here (within the
    /// contact tolerance)?
    contact: Vec<bool>,
    /// For monotone kinds, the node index at which the plain envelope is
    /// spliced with the frozen constant.
    splice_index: Option<usize>,
}

/// A right-continuous step function, used for envelope derivatives.
#[derive(Debug, Clone, Serialize)]
pub struct StepFunction {
    /// Strictly increasing abscissae delimiting the steps; `values[i]` holds
    /// on `[breaks[i], breaks[i+1])` and `values[last]` from the last break
    /// onward.
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    /// Evaluates the step function (right-continuous; clamped outside).
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.breaks.partition_point(|&b| b <= x);
        if i == 0 {
            self.values[0]
        } else {
            self.values[(i - 1).min(self.values.len() - 1)]
        }
    }
}

/// Value at `x` of the chord through `(xa, ya)` and `(xb, yb)`.
///
/// Both the hull scan and the brute-force reference use this single
/// primitive, so their node values agree bit-for-bit whenever they select
/// the same chord.
#[inline]
fn chord(xa: f64, ya: f64, xb: f64, yb: f64, x: f64) -> f64 {
    ya + (yb - ya) * ((x - xa) / (xb - xa))
}

impl PiecewiseLinearEnvelope {
    pub fn kind(&self) -> EnvelopeKind {
        self.kind
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Envelope values on the input grid nodes.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Node indices of the envelope vertices.
    pub fn breakpoints(&self) -> &[usize] {
        &self.breakpoints
    }

    /// Per-node contact flags.
    pub fn contact(&self) -> &[bool] {
        &self.contact
    }

    /// For monotone envelopes: the splice node index (`τ_0`).
    pub fn splice_index(&self) -> Option<usize> {
        self.splice_index
    }

    /// Slope of the envelope segment to the right of node `j` (the last
    /// node reports the slope of the final segment).
    pub fn node_slopes(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        let mut seg = 0usize;
        let slopes = self.segment_slopes();
        for j in 0..n {
            while seg + 1 < self.breakpoints.len() - 1 && j >= self.breakpoints[seg + 1] {
                seg += 1;
            }
            out[j] = slopes[seg];
        }
        out
    }

    /// Slopes between consecutive breakpoints.
    pub fn segment_slopes(&self) -> Vec<f64> {
        self.breakpoints
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                (self.values[b] - self.values[a]) / (self.grid[b] - self.grid[a])
            })
            .collect()
    }

    /// The envelope derivative as a right-continuous step function.
    pub fn derivative(&self) -> StepFunction {
        let breaks: Vec<f64> =
            self.breakpoints[..self.breakpoints.len() - 1].iter().map(|&j| self.grid[j]).collect();
        StepFunction { breaks, values: self.segment_slopes() }
    }

    /// Linear interpolation of the envelope at an arbitrary abscissa
    /// (clamped to the grid range).
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.grid[0] {
            return self.values[0];
        }
        if x >= *self.grid.last().unwrap() {
            return *self.values.last().unwrap();
        }
        let j = self.grid.partition_point(|&t| t <= x) - 1;
        chord(self.grid[j], self.values[j], self.grid[j + 1], self.values[j + 1], x)
    }

    /// Writes `tau, f, envelope, sigma, contact` rows in CSV form.
    pub fn write_csv(&self, f: &SampledFunction, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "tau,f,envelope,sigma,contact")?;
        let slopes = self.node_slopes();
        for j in 0..self.grid.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.grid[j],
                f.values()[j],
                self.values[j],
                slopes[j],
                u8::from(self.contact[j]),
            )?;
        }
        Ok(())
    }
}

/// Lower hull scan returning the vertex indices of the convex minorant.
///
/// A retained vertex must lie strictly below the chord between its hull
/// predecessor and the incoming point; ties (collinear nodes) are dropped,
/// so the vertex list is strictly convex while collinear nodes still show
/// up as contact nodes.
fn lower_hull(grid: &[f64], values: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            if chord(grid[a], values[a], grid[j], values[j], grid[b]) <= values[b] {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(j);
    }
    hull
}

/// Envelope node values from a vertex list (vertex nodes copy the function
/// value exactly; interior nodes evaluate the bracketing chord).
fn values_from_hull(grid: &[f64], values: &[f64], hull: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        out[a] = values[a];
        for j in a + 1..b {
            out[j] = chord(grid[a], values[a], grid[b], values[b], grid[j]);
        }
    }
    let last = *hull.last().expect("hull is nonempty");
    out[last] = values[last];
    out
}

fn contact_flags(values: &[f64], env: &[f64], tol_contact: f64) -> Vec<bool> {
    values.iter().zip(env).map(|(&v, &e)| (v - e).abs() <= tol_contact).collect()
}

/// Largest convex minorant of the piecewise linear interpolant of `f`.
pub fn convex_envelope(f: &SampledFunction, tol_contact: f64) -> PiecewiseLinearEnvelope {
    let hull = lower_hull(f.grid(), f.values());
    let values = values_from_hull(f.grid(), f.values(), &hull);
    let contact = contact_flags(f.values(), &values, tol_contact);
    PiecewiseLinearEnvelope {
        kind: EnvelopeKind::Convex,
        grid: f.grid().to_vec(),
        values,
        breakpoints: hull,
        contact,
        splice_index: None,
    }
}

/// Smallest concave majorant, computed as `-conv(-f)` (negation is exact in
/// IEEE arithmetic, so the duality identity holds bit-for-bit).
pub fn concave_envelope(f: &SampledFunction, tol_contact: f64) -> PiecewiseLinearEnvelope {
    let neg: Vec<f64> = f.values().iter().map(|&v| -v).collect();
    let hull = lower_hull(f.grid(), &neg);
    let mut values = values_from_hull(f.grid(), &neg, &hull);
    for v in &mut values {
        *v = -*v;
    }
    let contact = contact_flags(f.values(), &values, tol_contact);
    PiecewiseLinearEnvelope {
        kind: EnvelopeKind::Concave,
        grid: f.grid().to_vec(),
        values,
        breakpoints: hull,
        contact,
        splice_index: None,
    }
}

/// Slope threshold below which an envelope segment counts as decreasing
/// when locating the monotone splice node; an exact zero test would be
/// brittle under roundoff.
pub const SPLICE_SLOPE_TOL: f64 = 1e-12;

/// Largest convex *nondecreasing* minorant.
///
/// Equals the convex envelope right of the splice node `τ_0` — the first
/// node whose outgoing envelope slope is `≥ -SPLICE_SLOPE_TOL` — and stays
/// frozen at the envelope value of `τ_0` to its left.  When every slope is
/// negative the splice node is the right endpoint and the result is the
/// constant `conv f(τ_last)`.
pub fn monotone_convex_envelope(f: &SampledFunction, tol_contact: f64) -> PiecewiseLinearEnvelope {
    let conv = convex_envelope(f, tol_contact);
    let slopes = conv.segment_slopes();
    // First breakpoint whose outgoing segment is (numerically) nondecreasing.
    let seg = slopes.iter().position(|&s| s >= -SPLICE_SLOPE_TOL);
    let j0 = match seg {
        Some(k) => conv.breakpoints[k],
        None => *conv.breakpoints.last().unwrap(),
    };
    splice_flat_left(f, conv, j0, tol_contact, EnvelopeKind::MonotoneConvex)
}

/// Smallest concave *nondecreasing* majorant: the concave envelope left of
/// the last node with nonnegative outgoing slope, frozen right of it.
pub fn monotone_concave_envelope(f: &SampledFunction, tol_contact: f64) -> PiecewiseLinearEnvelope {
    let conc = concave_envelope(f, tol_contact);
    let slopes = conc.segment_slopes();
    // Last breakpoint whose incoming segment is (numerically) nondecreasing.
    let seg = slopes.iter().rposition(|&s| s >= -SPLICE_SLOPE_TOL);
    let j0 = match seg {
        Some(k) => conc.breakpoints[k + 1],
        None => conc.breakpoints[0],
    };
    splice_flat_right(f, conc, j0, tol_contact, EnvelopeKind::MonotoneConcave)
}

fn splice_flat_left(
    f: &SampledFunction,
    base: PiecewiseLinearEnvelope,
    j0: usize,
    tol_contact: f64,
    kind: EnvelopeKind,
) -> PiecewiseLinearEnvelope {
    let frozen = base.values[j0];
    let mut values = base.values.clone();
    for v in values[..j0].iter_mut() {
        *v = frozen;
    }
    let mut breakpoints: Vec<usize> = Vec::new();
    if j0 > 0 {
        breakpoints.push(0);
    }
    breakpoints.extend(base.breakpoints.iter().copied().filter(|&b| b >= j0));
    if breakpoints.last() != Some(&(f.len() - 1)) {
        breakpoints.push(f.len() - 1);
    }
    let contact = contact_flags(f.values(), &values, tol_contact);
    PiecewiseLinearEnvelope {
        kind,
        grid: base.grid,
        values,
        breakpoints,
        contact,
        splice_index: Some(j0),
    }
}

fn splice_flat_right(
    f: &SampledFunction,
    base: PiecewiseLinearEnvelope,
    j0: usize,
    tol_contact: f64,
    kind: EnvelopeKind,
) -> PiecewiseLinearEnvelope {
    let frozen = base.values[j0];
    let mut values = base.values.clone();
    for v in values[j0 + 1..].iter_mut() {
        *v = frozen;
    }
    let mut breakpoints: Vec<usize> =
        base.breakpoints.iter().copied().filter(|&b| b <= j0).collect();
    if breakpoints.is_empty() || breakpoints[0] != 0 {
        breakpoints.insert(0, 0);
    }
    if j0 < f.len() - 1 {
        breakpoints.push(f.len() - 1);
    }
    let contact = contact_flags(f.values(), &values, tol_contact);
    PiecewiseLinearEnvelope {
        kind,
        grid: base.grid,
        values,
        breakpoints,
        contact,
        splice_index: Some(j0),
    }
}

/// Independent brute-force evaluations used by the verification battery.
///
/// These deliberately avoid the hull scan: the convex envelope value at a
/// node is the minimum over *all* chords of the sampled points that span
/// the node, and the monotone variants are derived from the plain ones via
/// the running-extremum characterisation of the largest nondecreasing
/// convex minorant.  Complexity is quadratic per node and cubic overall,
/// which is fine at verification scale.
pub mod reference {
    use super::{chord, SampledFunction};

    /// Convex envelope at every node: `min` over all chords `(a, b)` with
    /// `a ≤ j ≤ b` (the degenerate chord `a = b = j` contributes `f_j`).
    pub fn convex_values(f: &SampledFunction) -> Vec<f64> {
        let (grid, values) = (f.grid(), f.values());
        let n = grid.len();
        let mut out = values.to_vec();
        for j in 0..n {
            for a in 0..=j {
                for b in j.max(a + 1)..n {
                    let c = chord(grid[a], values[a], grid[b], values[b], grid[j]);
                    if c < out[j] {
                        out[j] = c;
                    }
                }
            }
        }
        out
    }

    /// Concave envelope at every node: `max` over all spanning chords.
    pub fn concave_values(f: &SampledFunction) -> Vec<f64> {
        let (grid, values) = (f.grid(), f.values());
        let n = grid.len();
        let mut out = values.to_vec();
        for j in 0..n {
            for a in 0..=j {
                for b in j.max(a + 1)..n {
                    let c = chord(grid[a], values[a], grid[b], values[b], grid[j]);
                    if c > out[j] {
                        out[j] = c;
                    }
                }
            }
        }
        out
    }

    /// Monotone convex envelope at every node.
    ///
    /// Any convex nondecreasing minorant `h` of `f` satisfies
    /// `h(τ) ≤ min_{z ≥ τ} conv f(z)`, and the right-hand side is itself a
    /// convex nondecreasing minorant, hence the envelope: the running
    /// future minimum of the convex envelope.
    pub fn monotone_convex_values(f: &SampledFunction) -> Vec<f64> {
        let mut out = convex_values(f);
        for j in (0..out.len() - 1).rev() {
            if out[j + 1] < out[j] {
                out[j] = out[j + 1];
            }
        }
        out
    }

    /// Monotone concave envelope: the running past maximum of the concave
    /// envelope (mirror of [`monotone_convex_values`]).
    pub fn monotone_concave_values(f: &SampledFunction) -> Vec<f64> {
        let mut out = concave_values(f);
        for j in 1..out.len() {
            if out[j - 1] > out[j] {
                out[j] = out[j - 1];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    fn sampled(grid: &[f64], values: &[f64]) -> SampledFunction {
        SampledFunction::new(grid.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            SampledFunction::new(vec![0.0, 0.0], vec![1.0, 2.0]),
            Err(EnvelopeError::NotSorted { index: 1 })
        );
        assert_eq!(
            SampledFunction::new(vec![0.0], vec![1.0]),
            Err(EnvelopeError::TooFewNodes { len: 1 })
        );
        assert_eq!(
            SampledFunction::new(vec![0.0, 1.0], vec![1.0, f64::NAN]),
            Err(EnvelopeError::NonFinite { index: 1 })
        );
        assert_eq!(
            SampledFunction::new(vec![0.0, 1.0], vec![1.0]),
            Err(EnvelopeError::LengthMismatch { grid: 2, values: 1 })
        );
    }

    #[test]
    fn restrict_reports_empty_interval() {
        let f = SampledFunction::from_fn(-1.0, 1.0, 21, |t| t * t).unwrap();
        let err = f.restrict(0.349, 0.351).unwrap_err();
        assert!(matches!(err, EnvelopeError::EmptyInterval { .. }));
        let sub = f.restrict(-0.5, 0.5).unwrap();
        assert_eq!(sub.len(), 11);
    }

    #[test]
    fn convex_function_is_its_own_envelope() {
        let f = SampledFunction::from_fn(-1.0, 1.0, 41, f64::abs).unwrap();
        let env = convex_envelope(&f, TOL);
        assert_eq!(env.values(), f.values());
        assert!(env.contact().iter().all(|&c| c));
    }

    #[test]
    fn concave_parabola_envelope_is_chord() {
        // f = -τ² on [-1, 0]: the convex envelope is the chord from (-1,-1)
        // to (0,0), i.e. env(τ) = τ, with contact only at the endpoints.
        let f = SampledFunction::from_fn(-1.0, 0.0, 21, |t| -t * t).unwrap();
        let env = convex_envelope(&f, TOL);
        for (j, &t) in f.grid().iter().enumerate() {
            assert!((env.value(j) - t).abs() <= 1e-15, "node {j}");
        }
        assert_eq!(env.breakpoints(), &[0, 20]);
        let inner_contacts = env.contact()[1..20].iter().filter(|&&c| c).count();
        assert_eq!(inner_contacts, 0);
        // Derivative is the constant slope 1.
        let d = env.derivative();
        assert_eq!(d.values.len(), 1);
        assert!((d.eval(-0.5) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn double_well_has_flat_envelope_between_wells() {
        // f = τ⁴ - τ² has minima at ±1/√2 with value -1/4; the envelope is
        // constant -1/4 between the nodes nearest the two minima.
        let f = SampledFunction::from_fn(-1.0, 1.0, 201, |t| t.powi(4) - t * t).unwrap();
        let env = convex_envelope(&f, TOL);
        let mid = 100; // τ = 0
        assert!((env.value(mid) + 0.25).abs() <= 1e-3, "flat part near -1/4");
        // Flat segment: slope between the two central breakpoints is ~0.
        let d = env.derivative();
        assert!(d.eval(0.0).abs() <= 1e-3);
        // Outside the wells the function is its own envelope.
        assert_eq!(env.value(0), f.values()[0]);
        assert!(env.contact()[0] && env.contact()[200]);
    }

    #[test]
    fn monotone_envelope_of_decreasing_function_is_terminal_constant() {
        // f = τ² on [-1, 0] is decreasing, so every envelope slope is
        // negative: the splice node is the right endpoint and the monotone
        // convex envelope is identically f(0) = 0.
        let f = SampledFunction::from_fn(-1.0, 0.0, 33, |t| t * t).unwrap();
        let m = monotone_convex_envelope(&f, TOL);
        assert!(m.values().iter().all(|&v| v == 0.0));
        assert_eq!(m.splice_index(), Some(32));
        let d = m.derivative();
        assert_eq!(d.eval(-0.5), 0.0);
    }

    #[test]
    fn monotone_envelope_of_nondecreasing_convex_function_is_itself() {
        let f = SampledFunction::from_fn(0.0, 1.0, 17, |t| t * t).unwrap();
        let m = monotone_convex_envelope(&f, TOL);
        assert_eq!(m.values(), f.values());
        assert_eq!(m.splice_index(), Some(0));
    }

    #[test]
    fn monotone_splice_on_shifted_quadratic() {
        // f = 0.1 τ + τ²/2 on [-0.3, 0] is convex with slope zero at
        // τ = -0.1: the monotone envelope freezes left of the node at -0.1.
        let f = SampledFunction::from_fn(-0.3, 0.0, 61, |t| 0.1 * t + 0.5 * t * t).unwrap();
        let m = monotone_convex_envelope(&f, TOL);
        let j0 = m.splice_index().unwrap();
        let tau0 = f.grid()[j0];
        assert!((tau0 + 0.1).abs() <= 0.3 / 60.0 + 1e-12, "splice near -0.1, got {tau0}");
        let frozen = m.value(0);
        assert!((frozen - (0.1 * tau0 + 0.5 * tau0 * tau0)).abs() <= 1e-15);
        for j in 0..j0 {
            assert_eq!(m.value(j), frozen);
        }
        for j in j0..f.len() {
            assert_eq!(m.value(j), f.values()[j], "equals f right of the splice (f convex)");
        }
    }

    #[test]
    fn monotone_concave_mirrors_monotone_convex() {
        // f = 0.1 τ - τ²/2 on [0, 0.3] rises to τ = 0.1 then falls; the
        // monotone concave envelope freezes right of the top.
        let f = SampledFunction::from_fn(0.0, 0.3, 61, |t| 0.1 * t - 0.5 * t * t).unwrap();
        let m = monotone_concave_envelope(&f, TOL);
        let j0 = m.splice_index().unwrap();
        assert!((f.grid()[j0] - 0.1).abs() <= 0.3 / 60.0 + 1e-12);
        assert_eq!(m.values(), &reference::monotone_concave_values(&f)[..]);
        let slopes = m.segment_slopes();
        assert!(slopes.iter().all(|&s| s >= -SPLICE_SLOPE_TOL));
    }

    #[test]
    fn derivative_step_function_is_right_continuous() {
        let f = sampled(&[0.0, 1.0, 2.0], &[0.0, -1.0, 1.0]);
        let env = convex_envelope(&f, TOL);
        let d = env.derivative();
        assert_eq!(d.eval(0.0), -1.0);
        assert_eq!(d.eval(1.0), 2.0, "right-continuous at the kink");
        assert_eq!(d.eval(0.999), -1.0);
        assert_eq!(d.eval(5.0), 2.0);
    }

    #[test]
    fn refinement_converges_quadratically_on_smooth_input() {
        // Envelope error of a C² function behaves like O(h²); compare the
        // flat-part level of the double well against -1/4.
        let err = |n: usize| {
            let f = SampledFunction::from_fn(-1.0, 1.0, n + 1, |t| t.powi(4) - t * t).unwrap();
            let env = convex_envelope(&f, TOL);
            let j = f.grid().partition_point(|&t| t < 0.0);
            (env.value(j) + 0.25).abs()
        };
        let (e1, e2, e3) = (err(50), err(100), err(200));
        assert!(e2 <= 0.35 * e1, "halving the step should quarter the error: {e1} -> {e2}");
        assert!(e3 <= 0.35 * e2, "halving the step should quarter the error: {e2} -> {e3}");
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let f = SampledFunction::from_fn(-1.0, 0.0, 5, |t| t * t).unwrap();
        let env = convex_envelope(&f, TOL);
        let mut buf = Vec::new();
        env.write_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tau,f,envelope,sigma,contact");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].split(',').count() == 5);
    }

    /// Random piecewise linear function on a jittered grid; values in
    /// generic position so that chord comparisons have no ties.
    fn random_pl() -> impl Strategy<Value = SampledFunction> {
        (3usize..60, any::<u64>()).prop_map(|(n, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut grid = Vec::with_capacity(n);
            let mut t = -1.0;
            for _ in 0..n {
                t += 0.02 + 0.98 * rng.gen::<f64>() / n as f64;
                grid.push(t);
            }
            let values = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            SampledFunction::new(grid, values).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn convex_matches_brute_force_exactly(f in random_pl()) {
            let env = convex_envelope(&f, TOL);
            let oracle = reference::convex_values(&f);
            prop_assert_eq!(env.values(), &oracle[..]);
        }

        #[test]
        fn concave_duality_is_exact(f in random_pl()) {
            let conc = concave_envelope(&f, TOL);
            let oracle = reference::concave_values(&f);
            prop_assert_eq!(conc.values(), &oracle[..]);
            // conc f = -conv(-f) node-wise, bit for bit.
            let neg = SampledFunction::new(
                f.grid().to_vec(),
                f.values().iter().map(|&v| -v).collect(),
            ).unwrap();
            let conv_neg = convex_envelope(&neg, TOL);
            for j in 0..f.len() {
                prop_assert_eq!(conc.value(j), -conv_neg.value(j));
            }
        }

        #[test]
        fn monotone_convex_matches_brute_force(f in random_pl()) {
            let m = monotone_convex_envelope(&f, TOL);
            let oracle = reference::monotone_convex_values(&f);
            prop_assert_eq!(m.values(), &oracle[..]);
        }

        #[test]
        fn envelope_is_minorant_with_nondecreasing_slopes(f in random_pl()) {
            let env = convex_envelope(&f, TOL);
            for j in 0..f.len() {
                prop_assert!(env.value(j) <= f.values()[j] + 1e-14);
            }
            let slopes = env.segment_slopes();
            for w in slopes.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-10);
            }
            // Breakpoints are contact nodes with exact function values.
            for &b in env.breakpoints() {
                prop_assert_eq!(env.value(b), f.values()[b]);
            }
        }

        #[test]
        fn envelope_is_idempotent(f in random_pl()) {
            // Chord interpolation can drift by an ulp, so re-enveloping may
            // promote collinear nodes to hull vertices; the values stay put
            // and no true vertex is lost.
            let env = convex_envelope(&f, TOL);
            let again = convex_envelope(
                &SampledFunction::new(f.grid().to_vec(), env.values().to_vec()).unwrap(),
                TOL,
            );
            for (a, b) in env.values().iter().zip(again.values()) {
                prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
            for b in env.breakpoints() {
                prop_assert!(again.breakpoints().contains(b));
            }
        }

        #[test]
        fn splice_identity_reconstructs_monotone_envelope(f in random_pl()) {
            // monconv f == conv f right of τ_0, frozen at conv f(τ_0) left
            // of it, with τ_0 the first node of nonnegative envelope slope.
            let conv = convex_envelope(&f, TOL);
            let m = monotone_convex_envelope(&f, TOL);
            let j0 = m.splice_index().unwrap();
            let node_slopes = conv.node_slopes();
            let first_nonneg = (0..f.len() - 1)
                .find(|&j| node_slopes[j] >= -SPLICE_SLOPE_TOL)
                .unwrap_or(f.len() - 1);
            prop_assert_eq!(f.grid()[j0], f.grid()[first_nonneg]);
            for j in 0..f.len() {
                let expect = if j <= j0 { conv.value(j0) } else { conv.value(j) };
                prop_assert_eq!(m.value(j), expect);
            }
            // Dominance: monconv ≤ conv ≤ f.
            for j in 0..f.len() {
                prop_assert!(m.value(j) <= conv.value(j) + 1e-14);
            }
        }
    }
}
