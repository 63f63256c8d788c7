//! Viscous boundary layers: stable-manifold shooting, characteristic
//! profiles, and the layer chart used by the boundary Riemann solver.
//!
//! A boundary layer is a steady orbit of the first-order system
//! `B(W) W′ = F(W) − F(Ū)` connecting a prescribed boundary value
//! `W(0) = U_D` to an equilibrium `W(+∞) = Ū`.  Three constructions are
//! provided:
//!
//! * [`shoot_layer`] — Gauss–Newton shooting onto the stable manifold of a
//!   non-degenerate equilibrium; decay is exponential and the connection is
//!   searched from several seeded restarts run in parallel.
//! * [`characteristic_layer`] — direct forward integration from the
//!   boundary value, valid whenever the equilibrium has no unstable layer
//!   directions (the characteristic regime); decay can be as slow as `1/y`,
//!   so the orbit is followed far out and stored on a graded grid.
//! * [`layer_map_phi`] — the chart `s ↦ φ(s; Ū)` of the stable manifold,
//!   tangent to the orthonormal stable basis at `s = 0`; the boundary
//!   Riemann solver uses it as the layer part of its residual map.
//!
//! [`decompose_layer`] splits a characteristic profile into a scalar
//! centre-model part, the frozen stable projection, and the exact
//! remainder, and fits exponential decay rates to the latter two.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::params::Numerics;
use crate::system::HyperbolicSystem;

/// Absolute floor below which an eigenvalue does not count as stable.
const STABLE_FLOOR: f64 = 1e-9;
/// Relative gap under which a layer is returned as the constant profile.
const TRIVIAL_GAP: f64 = 1e-9;
/// Relative tolerance for declaring a shot connected to the datum.
const CONNECT_TOL: f64 = 1e-8;
/// Profiles are extended until the tail gap falls below this fraction of
/// `tol_tail`, leaving headroom for interpolation error.
const TAIL_MARGIN: f64 = 0.3;
/// Output spacing of uniformly sampled (non-characteristic) profiles.
const OUTPUT_H: f64 = 0.01;
/// Step budget of a single orbit integration.
const MAX_STEPS: usize = 500_000;
/// Eigenvalues above this are treated as genuinely unstable directions.
const UNSTABLE_TOL: f64 = 1e-6;
/// Amplitude floor (relative to scale) for decay-rate fits.
const FIT_FLOOR: f64 = 1e-11;
/// Minimum number of nodes a decay fit needs.
const MIN_FIT_POINTS: usize = 6;

/// Failures while constructing or analysing boundary layers.
#[derive(Debug, Error)]
pub enum LayerError {
    /// No orbit on the stable manifold reaches the boundary value.
    #[error("no layer connection: best boundary mismatch {best:.3e} after {restarts} restarts")]
    NoConnection { best: f64, restarts: usize },
    /// The orbit grew beyond any plausible connection.
    #[error("layer orbit blew up near y = {y:.3e}")]
    BlowUp { y: f64 },
    /// The orbit left the region where the system hypotheses hold.
    #[error("layer orbit left the system region at {at:?}")]
    LeftRegion { at: Vec<f64> },
    /// A matrix needed by the construction is (near) singular.
    #[error("near-singular layer linear algebra: {detail}")]
    NearSingular { detail: String },
    /// A decay fit did not explain the data.
    #[error("decay fit for the {component} part has R² = {r_squared:.3}")]
    PoorFit { component: &'static str, r_squared: f64 },
    /// The requested construction does not apply to this input.
    #[error("unsupported layer construction: {detail}")]
    Unsupported { detail: String },
}

/// Eigen-frame of the layer matrix `B(U)⁻¹ DF(U)` with bi-orthonormal left
/// rows (`lᵢ · dⱼ = δᵢⱼ`), eigenvalues ascending.
struct LayerSpectrum {
    values: Vec<f64>,
    right: Vec<DVector<f64>>,
    left: Vec<DVector<f64>>,
}

fn layer_spectrum(sys: &HyperbolicSystem, u: &DVector<f64>) -> Result<LayerSpectrum, LayerError> {
    let b = sys.viscosity_at(u);
    let binv = linalg::inverse(&b)
        .map_err(|e| LayerError::NearSingular { detail: format!("viscosity inverse: {e}") })?;
    let m = binv * sys.jacobian(u);
    let values = linalg::real_eigenvalues(&m, 1e-9)
        .map_err(|e| LayerError::NearSingular { detail: format!("layer spectrum: {e}") })?;
    let mut right = Vec::with_capacity(values.len());
    for &nu in &values {
        let v = linalg::right_eigenvector(&m, nu, 1e-9)
            .map_err(|e| LayerError::NearSingular { detail: format!("layer eigenvector: {e}") })?;
        right.push(linalg::orient(v));
    }
    let rmat = DMatrix::from_columns(&right);
    let rinv = linalg::inverse(&rmat).map_err(|_| LayerError::NearSingular {
        detail: "layer eigenbasis is singular".into(),
    })?;
    let left = (0..values.len()).map(|i| rinv.row(i).transpose()).collect();
    Ok(LayerSpectrum { values, right, left })
}

/// Stable spectral data of the layer matrix `B(Ū)⁻¹ DF(Ū)` at an
/// equilibrium.
#[derive(Debug, Clone)]
pub struct StableSubspace {
    /// Orthonormal basis of the stable span (Gram–Schmidt of `directions`).
    pub basis: Vec<DVector<f64>>,
    /// Stable eigenvalues `ν < 0`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors matching `eigenvalues`.
    pub directions: Vec<DVector<f64>>,
    /// Bi-orthonormal left vectors matching `directions`.
    pub(crate) lefts: Vec<DVector<f64>>,
}

impl StableSubspace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Decay rates `|ν|` in the order of `eigenvalues`.
    pub fn rates(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|v| v.abs()).collect()
    }

    /// Slowest decay rate, the scale of the layer thickness.
    pub fn min_rate(&self) -> f64 {
        self.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()))
    }
}

/// Computes the stable subspace of `B(Ū)⁻¹ DF(Ū)`.
///
/// Eigenvalues with `ν ≤ −max(min_rate, 1e-9)` count as stable; callers in
/// the characteristic regime pass a positive `min_rate` to keep the
/// near-zero centre mode out of the basis.  Away from characteristic
/// points the dimension is cross-checked against the sign counts of the
/// layer matrix.
pub fn stable_subspace(
    sys: &HyperbolicSystem,
    u_bar: &DVector<f64>,
    min_rate: f64,
    numerics: &Numerics,
) -> Result<StableSubspace, LayerError> {
    let spec = layer_spectrum(sys, u_bar)?;
    let threshold = -min_rate.max(STABLE_FLOOR);
    let mut eigenvalues = Vec::new();
    let mut directions = Vec::new();
    let mut lefts = Vec::new();
    for (i, &nu) in spec.values.iter().enumerate() {
        if nu <= threshold {
            eigenvalues.push(nu);
            directions.push(spec.right[i].clone());
            lefts.push(spec.left[i].clone());
        }
    }
    if min_rate == 0.0 {
        if let Ok(cmp) = sys.eigen_signature_compare(u_bar, numerics) {
            if cmp.viscous.negative != eigenvalues.len() {
                return Err(LayerError::NearSingular {
                    detail: format!(
                        "stable dimension {} disagrees with the sign count {}",
                        eigenvalues.len(),
                        cmp.viscous.negative
                    ),
                });
            }
        }
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(directions.len());
    for dvec in &directions {
        let mut v = dvec.clone();
        for b in &basis {
            let p = b.dot(&v);
            v -= b * p;
        }
        let norm = v.norm();
        if norm < 1e-10 {
            return Err(LayerError::NearSingular {
                detail: "stable directions are linearly dependent".into(),
            });
        }
        basis.push(linalg::orient(v / norm));
    }
    Ok(StableSubspace { basis, eigenvalues, directions, lefts })
}

/// An adaptively integrated orbit of the layer ODE, stored with ascending
/// `y` together with the right-hand side at every node.
struct Orbit {
    y: Vec<f64>,
    w: Vec<DVector<f64>>,
    dw: Vec<DVector<f64>>,
}

fn layer_rhs(
    sys: &HyperbolicSystem,
    f_eq: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>, LayerError> {
    let binv = linalg::inverse(&sys.viscosity_at(w)).map_err(|e| LayerError::NearSingular {
        detail: format!("viscosity inverse on the orbit: {e}"),
    })?;
    Ok(binv * (sys.flux(w) - f_eq))
}

fn rk4(
    sys: &HyperbolicSystem,
    f_eq: &DVector<f64>,
    w: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, LayerError> {
    let k1 = layer_rhs(sys, f_eq, w)?;
    let k2 = layer_rhs(sys, f_eq, &(w + &k1 * (h / 2.0)))?;
    let k3 = layer_rhs(sys, f_eq, &(w + &k2 * (h / 2.0)))?;
    let k4 = layer_rhs(sys, f_eq, &(w + &k3 * h))?;
    Ok(w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Controls of a single orbit integration beyond the ODE data itself.
struct IntegrateOpts {
    /// Upper bound on the step magnitude.  Finite values keep explicit
    /// steps inside the stability region of fast stable directions whose
    /// amplitude has already decayed to round-off.
    h_max: f64,
    /// Step budget before the integration is declared lost.
    max_steps: usize,
    /// When set, nodes past `y = 10` are stored only every `10⁻³·y`, so
    /// very long slow tails do not hold every accepted step in memory.
    /// The final node is always stored.
    thin: bool,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        Self { h_max: f64::INFINITY, max_steps: MAX_STEPS, thin: false }
    }
}

/// Integrates the layer ODE from `(y0, w0)` toward `y1` (either direction;
/// `y1 = ∞` is allowed) with step-doubling error control scaled by the
/// distance from `eq`.  Stops early when `stop` returns true; fails when
/// the orbit leaves the region or wanders beyond `guard`.
fn integrate_layer(
    sys: &HyperbolicSystem,
    f_eq: &DVector<f64>,
    eq: &DVector<f64>,
    w0: DVector<f64>,
    y0: f64,
    y1: f64,
    guard: f64,
    mut stop: impl FnMut(f64, &DVector<f64>) -> bool,
    opts: &IntegrateOpts,
) -> Result<Orbit, LayerError> {
    let dir = if y1 >= y0 { 1.0 } else { -1.0 };
    let mut h = if y1.is_finite() { (((y1 - y0).abs()) / 100.0).clamp(1e-6, 0.01) } else { 0.01 };
    h = h.min(opts.h_max) * dir;
    let mut y = y0;
    let mut w = w0;
    let mut orbit = Orbit { y: vec![y], w: vec![w.clone()], dw: vec![layer_rhs(sys, f_eq, &w)?] };
    let mut steps = 0usize;
    let mut last_stored = y0;
    while (y1 - y) * dir > 1e-14 * (1.0 + y.abs()) {
        if steps >= opts.max_steps {
            return Err(LayerError::BlowUp { y });
        }
        steps += 1;
        if y1.is_finite() && (y + h - y1) * dir > 0.0 {
            h = y1 - y;
        }
        let trial = rk4(sys, f_eq, &w, h).and_then(|big| {
            let mid = rk4(sys, f_eq, &w, h / 2.0)?;
            Ok((big, rk4(sys, f_eq, &mid, h / 2.0)?))
        });
        let (big, half) = match trial {
            Ok(pair) => pair,
            Err(_) => {
                // The trial step left the well-posed set; retry shorter.
                h *= 0.25;
                if h.abs() < 1e-13 * (1.0 + y.abs()) {
                    return Err(LayerError::BlowUp { y });
                }
                continue;
            }
        };
        let err = (&half - &big).amax() / 15.0;
        let amp = (&w - eq).amax();
        let tol = 1e-13 + 1e-10 * amp;
        let mut done = false;
        if err <= tol {
            // Richardson extrapolation of the two half steps.
            w = &half + (&half - &big) / 15.0;
            y += h;
            if !sys.region().contains(&w) {
                return Err(LayerError::LeftRegion { at: w.iter().copied().collect() });
            }
            if (&w - eq).amax() > guard {
                return Err(LayerError::BlowUp { y });
            }
            if !opts.thin || y.abs() <= 10.0 || (y - last_stored).abs() >= 1e-3 * y.abs() {
                orbit.y.push(y);
                orbit.dw.push(layer_rhs(sys, f_eq, &w)?);
                orbit.w.push(w.clone());
                last_stored = y;
            }
            done = stop(y, &w);
        }
        if done {
            break;
        }
        let grow = if err > 0.0 { 0.9 * (tol / err).powf(0.2) } else { 5.0 };
        h = dir * (h * grow.clamp(0.2, 5.0)).abs().min(opts.h_max);
    }
    if orbit.y.last() != Some(&y) {
        orbit.y.push(y);
        orbit.dw.push(layer_rhs(sys, f_eq, &w)?);
        orbit.w.push(w.clone());
    }
    if dir < 0.0 {
        orbit.y.reverse();
        orbit.w.reverse();
        orbit.dw.reverse();
    }
    Ok(orbit)
}

/// Cubic Hermite resampling of an orbit at ascending query points inside
/// its span.
fn sample_orbit(orbit: &Orbit, ys: &[f64]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(ys.len());
    if orbit.y.len() < 2 {
        return ys.iter().map(|_| orbit.w[0].clone()).collect();
    }
    let mut seg = 0usize;
    for &yy in ys {
        while seg + 2 < orbit.y.len() && orbit.y[seg + 1] < yy {
            seg += 1;
        }
        let (ya, yb) = (orbit.y[seg], orbit.y[seg + 1]);
        let h = yb - ya;
        let t = ((yy - ya) / h).clamp(0.0, 1.0);
        let (t2, t3) = (t * t, t * t * t);
        let w = &orbit.w[seg] * (2.0 * t3 - 3.0 * t2 + 1.0)
            + &orbit.dw[seg] * ((t3 - 2.0 * t2 + t) * h)
            + &orbit.w[seg + 1] * (-2.0 * t3 + 3.0 * t2)
            + &orbit.dw[seg + 1] * ((t3 - t2) * h);
        out.push(w);
    }
    out
}

/// A resolved boundary-layer profile `W(y)` with `W(+∞) = equilibrium`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryLayerProfile {
    /// Ascending grid starting at `y = 0`.
    pub ygrid: Vec<f64>,
    /// Profile states, one per grid node; `w[0]` approximates the datum.
    pub w: Vec<DVector<f64>>,
    /// Far-field equilibrium `Ū`.
    pub equilibrium: DVector<f64>,
    /// Fitted exponential decay rate of `‖W − Ū‖∞` (0 for a trivial layer;
    /// small for algebraically decaying characteristic profiles).
    pub decay_rate: f64,
    /// Max-norm finite-difference residual of `B(W)W′ = F(W) − F(Ū)` over
    /// the stored grid.
    pub residual: f64,
}

impl BoundaryLayerProfile {
    /// The stored state at `y = 0`.
    pub fn boundary_value(&self) -> &DVector<f64> {
        &self.w[0]
    }

    /// Gap `‖W(y_max) − Ū‖∞` at the far end of the grid.
    pub fn tail_gap(&self) -> f64 {
        (self.w.last().unwrap() - &self.equilibrium).amax()
    }

    /// Writes `y,w1,…,wn` rows in full precision.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "y")?;
        for i in 1..=self.equilibrium.len() {
            write!(out, ",w{i}")?;
        }
        writeln!(out)?;
        for (y, w) in self.ygrid.iter().zip(&self.w) {
            write!(out, "{y:.16e}")?;
            for v in w.iter() {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Max-norm residual of the layer ODE over a stored profile, using
/// finite-difference derivatives: 4th-order five-point stencils on uniform
/// grids, quadratic (3-point) stencils on graded grids.
pub fn layer_residual(sys: &HyperbolicSystem, profile: &BoundaryLayerProfile) -> f64 {
    let y = &profile.ygrid;
    let w = &profile.w;
    let m = y.len();
    if m < 3 {
        return 0.0;
    }
    let f_eq = sys.flux(&profile.equilibrium);
    let h0 = y[1] - y[0];
    let uniform = m >= 5 && y.windows(2).all(|p| (p[1] - p[0] - h0).abs() <= 1e-9 * h0);
    let mut worst = 0.0_f64;
    for j in 0..m {
        let d = if uniform { uniform_derivative(y, w, j) } else { graded_derivative(y, w, j) };
        let r = (sys.viscosity_at(&w[j]) * d - (sys.flux(&w[j]) - &f_eq)).amax();
        worst = worst.max(r);
    }
    worst
}

fn uniform_derivative(y: &[f64], w: &[DVector<f64>], j: usize) -> DVector<f64> {
    let m = y.len();
    let c = 1.0 / (12.0 * (y[1] - y[0]));
    if j >= 2 && j + 2 < m {
        (&w[j - 2] - &w[j + 2] + (&w[j + 1] - &w[j - 1]) * 8.0) * c
    } else if j == 0 {
        (&w[0] * -25.0 + &w[1] * 48.0 - &w[2] * 36.0 + &w[3] * 16.0 - &w[4] * 3.0) * c
    } else if j == 1 {
        (&w[0] * -3.0 - &w[1] * 10.0 + &w[2] * 18.0 - &w[3] * 6.0 + &w[4] * 1.0) * c
    } else if j == m - 2 {
        (&w[m - 1] * 3.0 + &w[m - 2] * 10.0 - &w[m - 3] * 18.0 + &w[m - 4] * 6.0 - &w[m - 5]) * c
    } else {
        (&w[m - 1] * 25.0 - &w[m - 2] * 48.0 + &w[m - 3] * 36.0 - &w[m - 4] * 16.0
            + &w[m - 5] * 3.0)
            * c
    }
}

fn graded_derivative(y: &[f64], w: &[DVector<f64>], j: usize) -> DVector<f64> {
    let m = y.len();
    let (i0, i1, i2) = if j == 0 {
        (0, 1, 2)
    } else if j == m - 1 {
        (m - 3, m - 2, m - 1)
    } else {
        (j - 1, j, j + 1)
    };
    let (y0, y1, y2) = (y[i0], y[i1], y[i2]);
    let at = y[j];
    let d0 = (2.0 * at - y1 - y2) / ((y0 - y1) * (y0 - y2));
    let d1 = (2.0 * at - y0 - y2) / ((y1 - y0) * (y1 - y2));
    let d2 = (2.0 * at - y0 - y1) / ((y2 - y0) * (y2 - y1));
    &w[i0] * d0 + &w[i1] * d1 + &w[i2] * d2
}

/// Least-squares fit of `ln a(y) ≈ ln C − rate·y` over the tail half of
/// the nodes with amplitude above `floor`.  Returns
/// `(rate, C, R², points)`, or `None` when too few nodes qualify.
fn fit_decay(y: &[f64], amp: &[f64], floor: f64) -> Option<(f64, f64, f64, usize)> {
    let idx: Vec<usize> = (0..y.len()).filter(|&j| amp[j].is_finite() && amp[j] >= floor).collect();
    if idx.len() < MIN_FIT_POINTS {
        return None;
    }
    let sel: &[usize] =
        if idx.len() >= 2 * MIN_FIT_POINTS { &idx[idx.len() / 2..] } else { &idx[..] };
    fit_window(y, amp, sel)
}

/// The least-squares core of [`fit_decay`] over an explicit node set.
fn fit_window(y: &[f64], amp: &[f64], sel: &[usize]) -> Option<(f64, f64, f64, usize)> {
    if sel.len() < MIN_FIT_POINTS {
        return None;
    }
    let m = sel.len() as f64;
    let (mut sy, mut sl, mut syy, mut syl) = (0.0, 0.0, 0.0, 0.0);
    for &j in sel {
        let ly = amp[j].ln();
        sy += y[j];
        sl += ly;
        syy += y[j] * y[j];
        syl += y[j] * ly;
    }
    let det = m * syy - sy * sy;
    if det.abs() < 1e-300 {
        return None;
    }
    let slope = (m * syl - sy * sl) / det;
    let intercept = (sl - slope * sy) / m;
    let mean = sl / m;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &j in sel {
        let ly = amp[j].ln();
        let fit = intercept + slope * y[j];
        ss_res += (ly - fit) * (ly - fit);
        ss_tot += (ly - mean) * (ly - mean);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some((-slope, intercept.exp(), r2, sel.len()))
}

fn trivial_profile(
    sys: &HyperbolicSystem,
    equilibrium: &DVector<f64>,
    boundary_value: &DVector<f64>,
) -> BoundaryLayerProfile {
    let ygrid: Vec<f64> = (0..=100).map(|j| j as f64 * OUTPUT_H).collect();
    let w = vec![boundary_value.clone(); ygrid.len()];
    let mut profile = BoundaryLayerProfile {
        ygrid,
        w,
        equilibrium: equilibrium.clone(),
        decay_rate: 0.0,
        residual: 0.0,
    };
    profile.residual = layer_residual(sys, &profile);
    profile
}

/// Shoots a boundary layer onto the stable manifold of `equilibrium`.
///
/// The seed lives at `y = Y` on the linearized stable subspace with
/// coefficients `c`; a Gauss–Newton iteration on `c` drives the backward
/// orbit to hit `boundary_value` at `y = 0`.  `numerics.shoot_restarts`
/// seeded starts (the linear-theory seed first, then sign flips and random
/// directions) run in parallel, and ties go to the lowest index.  The
/// winning orbit is resampled on a uniform grid and extended by its
/// linearized tail until the gap falls below `0.3 · tol_tail`.
pub fn shoot_layer(
    sys: &HyperbolicSystem,
    equilibrium: &DVector<f64>,
    boundary_value: &DVector<f64>,
    numerics: &Numerics,
) -> Result<BoundaryLayerProfile, LayerError> {
    let scale = equilibrium.amax().max(boundary_value.amax()).max(1.0);
    let delta = boundary_value - equilibrium;
    let dnorm = delta.amax();
    if dnorm <= TRIVIAL_GAP * scale {
        return Ok(trivial_profile(sys, equilibrium, boundary_value));
    }
    let sub = stable_subspace(sys, equilibrium, 0.0, numerics)?;
    let d = sub.dim();
    if d == 0 {
        return Err(LayerError::NoConnection { best: dnorm, restarts: 0 });
    }
    let f_eq = sys.flux(equilibrium);
    let c_slow = sub.min_rate();
    let y_span = ((dnorm.max(numerics.eps_seed) / numerics.eps_seed).ln() / c_slow).max(1.0);
    let guard = (10.0 * dnorm).max(0.5 * scale);
    let tol = CONNECT_TOL * scale;

    let shot = |c: &DVector<f64>| -> Result<Orbit, LayerError> {
        let mut seed = equilibrium.clone();
        for j in 0..d {
            seed += &sub.directions[j] * c[j];
        }
        integrate_layer(
            sys,
            &f_eq,
            equilibrium,
            seed,
            y_span,
            0.0,
            guard,
            |_, _| false,
            &IntegrateOpts::default(),
        )
    };

    // Seed candidates: the linear-theory seed (eigen-coordinates of Δ pushed
    // forward to y = Y) first, then axis flips and random directions.
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mut informed = DVector::zeros(d);
    for j in 0..d {
        let a = sub.lefts[j].dot(&delta);
        informed[j] = (a * (sub.eigenvalues[j] * y_span).exp()).clamp(-1.0, 1.0);
    }
    candidates.push(informed);
    let mut rng = ChaCha8Rng::seed_from_u64(numerics.seed ^ 0x6c61_7965);
    while candidates.len() < numerics.shoot_restarts.max(1) {
        let k = candidates.len();
        let mut c = DVector::zeros(d);
        if d == 1 && k <= 2 {
            c[0] = if k == 1 { numerics.eps_seed } else { -numerics.eps_seed };
        } else {
            for j in 0..d {
                c[j] = rng.gen_range(-1.0..1.0);
            }
            let norm = c.norm();
            if norm < 1e-3 {
                continue;
            }
            c *= numerics.eps_seed / norm;
        }
        candidates.push(c);
    }

    let runs: Vec<Result<(DVector<f64>, Orbit), f64>> = candidates
        .par_iter()
        .map(|c0| gauss_newton_shot(c0, &shot, boundary_value, tol, numerics))
        .collect();
    let mut best = f64::INFINITY;
    let mut winner = None;
    for run in runs {
        match run {
            Ok(hit) => {
                winner = Some(hit);
                break;
            }
            Err(miss) => best = best.min(miss),
        }
    }
    let Some((c, _)) = winner else {
        return Err(LayerError::NoConnection { best, restarts: candidates.len() });
    };
    assemble_shot_profile(sys, equilibrium, &sub, &c, y_span, scale, numerics)
}

/// One Gauss–Newton run from a seed coefficient vector.  Returns the
/// connected orbit or the best boundary mismatch seen.
fn gauss_newton_shot(
    c0: &DVector<f64>,
    shot: &(impl Fn(&DVector<f64>) -> Result<Orbit, LayerError> + Sync),
    boundary_value: &DVector<f64>,
    tol: f64,
    numerics: &Numerics,
) -> Result<(DVector<f64>, Orbit), f64> {
    let d = c0.len();
    let mut c = c0.clone();
    let mut orbit = shot(&c).map_err(|_| f64::INFINITY)?;
    let mut r = &orbit.w[0] - boundary_value;
    let mut best = r.amax();
    for _ in 0..numerics.max_iter_shoot {
        let rn = r.amax();
        if rn <= tol {
            return Ok((c, orbit));
        }
        let mut jac = DMatrix::zeros(r.len(), d);
        let mut ok = true;
        for j in 0..d {
            let h = 1e-3 * c[j].abs().max(numerics.eps_seed);
            let mut cp = c.clone();
            cp[j] += h;
            match shot(&cp) {
                Ok(o) => jac.set_column(j, &((&o.w[0] - boundary_value - &r) / h)),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            return Err(best);
        }
        // Damped normal equations, nudged toward gradient descent when the
        // Gauss-Newton matrix degenerates.
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut lm = 0.0_f64;
        let step = loop {
            let mut m = jtj.clone();
            for i in 0..d {
                m[(i, i)] += lm;
            }
            match linalg::solve(&m, &(-&jtr)) {
                Ok(s) => break s,
                Err(_) if lm < 1.0 => lm = (lm * 10.0).max(1e-12),
                Err(_) => return Err(best),
            }
        };
        let mut t = 1.0;
        let mut advanced = false;
        for _ in 0..10 {
            let ct = &c + &step * t;
            if let Ok(o) = shot(&ct) {
                let rt = &o.w[0] - boundary_value;
                if rt.amax() < rn {
                    c = ct;
                    orbit = o;
                    r = rt;
                    best = best.min(r.amax());
                    advanced = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !advanced {
            return Err(best);
        }
    }
    if r.amax() <= tol {
        Ok((c, orbit))
    } else {
        Err(best)
    }
}

fn assemble_shot_profile(
    sys: &HyperbolicSystem,
    equilibrium: &DVector<f64>,
    sub: &StableSubspace,
    c: &DVector<f64>,
    y_span: f64,
    scale: f64,
    numerics: &Numerics,
) -> Result<BoundaryLayerProfile, LayerError> {
    let mut seed = equilibrium.clone();
    for j in 0..sub.dim() {
        seed += &sub.directions[j] * c[j];
    }
    let seed_amp = (&seed - equilibrium).amax().max(1e-300);
    let c_slow = sub.min_rate();
    let target = TAIL_MARGIN * numerics.tol_tail;
    let y_end =
        if seed_amp > target { y_span + (seed_amp / target).ln() / c_slow } else { y_span };
    let count = (y_end / OUTPUT_H).ceil() as usize;
    let ygrid: Vec<f64> = (0..=count).map(|j| j as f64 * OUTPUT_H).collect();
    let split = ygrid.partition_point(|&yy| yy <= y_span);
    // Dense output by re-integration: the winning orbit is rebuilt backward
    // from the seed with fixed substeps that land exactly on the output
    // nodes, so the stencil residual sees integrator-level error instead of
    // interpolation error.
    let f_eq = sys.flux(equilibrium);
    let rate_max = sub.rates().iter().fold(0.0_f64, |a, &r| a.max(r));
    let h_sub = (0.5 * OUTPUT_H).min(0.1 / rate_max.max(1e-9));
    let mut w = vec![DVector::<f64>::zeros(0); split];
    let mut wcur = seed;
    let mut ycur = y_span;
    for j in (0..split).rev() {
        let gap = ycur - ygrid[j];
        if gap > 0.0 {
            let m = (gap / h_sub).ceil().max(1.0) as usize;
            let h = -gap / m as f64;
            for _ in 0..m {
                wcur = rk4(sys, &f_eq, &wcur, h)?;
            }
        }
        ycur = ygrid[j];
        w[j] = wcur.clone();
    }
    // Linearized tail beyond the seed: W(y) = Ū + Σ cⱼ e^{νⱼ(y−Y)} dⱼ,
    // which matches the orbit at y = Y up to the nonlinear remainder
    // O(seed_amp²).
    for &yy in &ygrid[split..] {
        let mut v = equilibrium.clone();
        for j in 0..sub.dim() {
            v += &sub.directions[j] * (c[j] * (sub.eigenvalues[j] * (yy - y_span)).exp());
        }
        w.push(v);
    }
    let amps: Vec<f64> = w.iter().map(|v| (v - equilibrium).amax()).collect();
    let decay_rate =
        fit_decay(&ygrid, &amps, FIT_FLOOR * scale).map(|(rate, ..)| rate).unwrap_or(c_slow);
    let mut profile = BoundaryLayerProfile {
        ygrid,
        w,
        equilibrium: equilibrium.clone(),
        decay_rate,
        residual: 0.0,
    };
    profile.residual = layer_residual(sys, &profile);
    Ok(profile)
}

/// Scalar orbit of the centre model
/// `θ′ = ℓ_c · B(Ū+θd_c)⁻¹ (F(Ū+θd_c) − F(Ū))`, stored with the
/// derivative at every node.
struct CentreTail {
    y: Vec<f64>,
    th: Vec<f64>,
    dth: Vec<f64>,
}

fn rk4_scalar(
    g: &impl Fn(f64) -> Result<f64, LayerError>,
    th: f64,
    h: f64,
) -> Result<f64, LayerError> {
    let k1 = g(th)?;
    let k2 = g(th + 0.5 * h * k1)?;
    let k3 = g(th + 0.5 * h * k2)?;
    let k4 = g(th + h * k3)?;
    Ok(th + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Integrates the scalar centre model forward from `(y1, th1)` until
/// `|θ| ≤ stop_abs`, with the same step-doubling control as the full
/// system.  The stiff stable directions are gone, so the step is free to
/// grow with the (possibly algebraic) tail.
fn centre_tail_orbit(
    g: &impl Fn(f64) -> Result<f64, LayerError>,
    y1: f64,
    th1: f64,
    stop_abs: f64,
    guard: f64,
    scale: f64,
) -> Result<CentreTail, LayerError> {
    let mut tail = CentreTail { y: vec![y1], th: vec![th1], dth: vec![g(th1)?] };
    let (mut y, mut th) = (y1, th1);
    let mut h = 0.01;
    let mut steps = 0usize;
    while th.abs() > stop_abs {
        if steps >= MAX_STEPS {
            return Err(LayerError::BlowUp { y });
        }
        steps += 1;
        let big = rk4_scalar(g, th, h)?;
        let mid = rk4_scalar(g, th, h / 2.0)?;
        let half = rk4_scalar(g, mid, h / 2.0)?;
        let err = (half - big).abs() / 15.0;
        let tol = 1e-13 * scale + 1e-10 * th.abs();
        if err <= tol {
            th = half + (half - big) / 15.0;
            y += h;
            if th.abs() > guard {
                return Err(LayerError::BlowUp { y });
            }
            tail.y.push(y);
            tail.th.push(th);
            tail.dth.push(g(th)?);
        }
        let grow = if err > 0.0 { 0.9 * (tol / err).powf(0.2) } else { 5.0 };
        h *= grow.clamp(0.2, 5.0);
    }
    Ok(tail)
}

/// Scalar cubic Hermite resampling, the one-dimensional `sample_orbit`.
fn sample_centre(tail: &CentreTail, ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ys.len());
    if tail.y.len() < 2 {
        return ys.iter().map(|_| tail.th[0]).collect();
    }
    let mut seg = 0usize;
    for &yy in ys {
        while seg + 2 < tail.y.len() && tail.y[seg + 1] < yy {
            seg += 1;
        }
        let (ya, yb) = (tail.y[seg], tail.y[seg + 1]);
        let h = yb - ya;
        let t = ((yy - ya) / h).clamp(0.0, 1.0);
        let (t2, t3) = (t * t, t * t * t);
        out.push(
            tail.th[seg] * (2.0 * t3 - 3.0 * t2 + 1.0)
                + tail.dth[seg] * ((t3 - 2.0 * t2 + t) * h)
                + tail.th[seg + 1] * (-2.0 * t3 + 3.0 * t2)
                + tail.dth[seg + 1] * ((t3 - t2) * h),
        );
    }
    out
}

/// Builds a boundary layer by forward integration from
/// `W(0) = boundary_value`, for equilibria with no unstable layer
/// directions (the characteristic regime).  Decay can be algebraic, so the
/// orbit is followed until the gap falls below `0.3 · tol_tail` and stored
/// on a logarithmically graded grid.
///
/// Fast stable directions make the far tail stiff for an explicit method:
/// their amplitude reaches round-off long before the centre mode decays,
/// and any step beyond the stability bound would amplify that round-off.
/// The full system is therefore integrated with a capped step only until
/// the orbit hugs the centre manifold, after which the scalar centre model
/// continues the tail and the profile is stored as `Ū + θ(y) d_c` there.
pub fn characteristic_layer(
    sys: &HyperbolicSystem,
    equilibrium: &DVector<f64>,
    boundary_value: &DVector<f64>,
    numerics: &Numerics,
) -> Result<BoundaryLayerProfile, LayerError> {
    let scale = equilibrium.amax().max(boundary_value.amax()).max(1.0);
    let delta = boundary_value - equilibrium;
    let dnorm = delta.amax();
    if dnorm <= TRIVIAL_GAP * scale {
        return Ok(trivial_profile(sys, equilibrium, boundary_value));
    }
    let spec = layer_spectrum(sys, equilibrium)?;
    if let Some(&bad) = spec.values.iter().find(|v| **v > UNSTABLE_TOL) {
        return Err(LayerError::Unsupported {
            detail: format!(
                "equilibrium has an unstable layer direction (ν = {bad:.3e}); \
                 the forward construction needs none"
            ),
        });
    }
    let f_eq = sys.flux(equilibrium);
    let target = (TAIL_MARGIN * numerics.tol_tail).min(0.01 * dnorm).max(1e-13 * scale);
    let guard = (10.0 * dnorm).max(0.5 * scale);
    let stable_rates: Vec<f64> =
        spec.values.iter().filter(|&&v| v < -UNSTABLE_TOL).map(|v| v.abs()).collect();
    let rate_max = stable_rates.iter().fold(0.0_f64, |a, &r| a.max(r));
    let rate_min = stable_rates.iter().fold(f64::INFINITY, |a, &r| a.min(r));
    let has_stable = !stable_rates.is_empty();
    let centre = spec
        .values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .filter(|&i| spec.values[i].abs() <= UNSTABLE_TOL);
    let opts = IntegrateOpts {
        h_max: if has_stable { 2.5 / rate_max } else { f64::INFINITY },
        max_steps: MAX_STEPS,
        thin: true,
    };
    // Hand over to the scalar model once the orbit is past the stable
    // transient (`y_clear` buys e^{-34.5} ≈ 10⁻¹⁵ of decay), close to the
    // axis, and demonstrably one-dimensional: the off-centre part of the
    // stored tail `Ū + θ d_c` is then the manifold curvature O(θ²), below
    // the layer tolerance from `theta_switch` on.
    let theta_switch = 1e-4 * scale;
    let y_clear = if has_stable { 34.5 / rate_min } else { f64::INFINITY };
    let stop = |yy: f64, w: &DVector<f64>| {
        if yy <= 0.0 {
            return false;
        }
        let dev = w - equilibrium;
        let amp = dev.amax();
        if amp <= target {
            return true;
        }
        if yy < y_clear || amp > theta_switch {
            return false;
        }
        match centre {
            Some(ci) => {
                let th = spec.left[ci].dot(&dev);
                let off = (&dev - &spec.right[ci] * th).amax();
                off <= 1e-2 * amp + 1e-12 * scale
            }
            None => false,
        }
    };
    let orbit = integrate_layer(
        sys,
        &f_eq,
        equilibrium,
        boundary_value.clone(),
        0.0,
        f64::INFINITY,
        guard,
        stop,
        &opts,
    )?;
    let y1 = *orbit.y.last().unwrap();
    let gap1 = (orbit.w.last().unwrap() - equilibrium).amax();
    let tail = if gap1 <= 1.5 * target {
        None
    } else {
        let Some(ci) = centre else {
            return Err(LayerError::NoConnection { best: gap1, restarts: 0 });
        };
        let d_c = spec.right[ci].clone();
        let l_c = spec.left[ci].clone();
        let dev1 = orbit.w.last().unwrap() - equilibrium;
        let th1 = l_c.dot(&dev1);
        // Slaved curvature measured at the switch point: storing the tail
        // as `Ū + θ d_c + θ² q̂` keeps the stable coordinates' quadratic
        // response, joins the orbit exactly at the switch, and tracks the
        // centre manifold to O(θ³).
        let curv = (&dev1 - &d_c * th1) / (th1 * th1).max(1e-300);
        let g = |th: f64| -> Result<f64, LayerError> {
            let w = equilibrium + &d_c * th + &curv * (th * th);
            Ok(l_c.dot(&layer_rhs(sys, &f_eq, &w)?))
        };
        let stop_abs = target / d_c.amax().max(1e-300);
        let guard_th = 10.0 * th1.abs() + scale;
        let tail = centre_tail_orbit(&g, y1, th1, stop_abs, guard_th, scale)?;
        Some((tail, d_c, curv))
    };
    let y_end = tail.as_ref().map_or(y1, |(t, ..)| *t.y.last().unwrap());
    // Logarithmically graded output grid, dense enough that the quadratic
    // difference stencils in `layer_residual` stay below tol_layer.
    let sample_grid = |h0: f64, count: usize| -> (Vec<f64>, Vec<DVector<f64>>) {
        let mut ygrid = Vec::with_capacity(count + 1);
        ygrid.push(0.0);
        for j in 0..count {
            ygrid.push(h0 * (y_end / h0).powf(j as f64 / (count - 1) as f64));
        }
        let w = match &tail {
            None => sample_orbit(&orbit, &ygrid),
            Some((t, d_c, curv)) => {
                let split = ygrid.partition_point(|&yy| yy <= y1);
                let mut w = sample_orbit(&orbit, &ygrid[..split]);
                for th in sample_centre(t, &ygrid[split..]) {
                    w.push(equilibrium + d_c * th + curv * (th * th));
                }
                w
            }
        };
        (ygrid, w)
    };
    let mut h0 = 1e-3_f64.min(y_end / 10.0);
    let mut count = ((160.0 * (y_end / h0).ln()).ceil() as usize).clamp(201, 6001);
    let (ygrid, w) = sample_grid(h0, count);
    let tail_gap = (w.last().unwrap() - equilibrium).amax();
    if tail_gap > 1.5 * target {
        return Err(LayerError::NoConnection { best: tail_gap, restarts: 0 });
    }
    let mut profile = BoundaryLayerProfile {
        ygrid,
        w,
        equilibrium: equilibrium.clone(),
        decay_rate: 0.0,
        residual: 0.0,
    };
    profile.residual = layer_residual(sys, &profile);
    // The stencil error is quadratic in both the grading ratio and the
    // leading cell `h0`, and linear in the layer amplitude.  The default
    // grading (tuned for small data) can sit above tolerance for O(1)
    // layers; measured densification passes bring those under it.
    for _ in 0..3 {
        if profile.residual <= 0.5 * numerics.tol_layer || count >= 40_000 {
            break;
        }
        let factor = (profile.residual / (0.5 * numerics.tol_layer)).sqrt();
        h0 /= factor;
        count = ((count as f64) * factor).ceil().min(40_001.0) as usize;
        let (ygrid, w) = sample_grid(h0, count);
        profile.ygrid = ygrid;
        profile.w = w;
        profile.residual = layer_residual(sys, &profile);
    }
    let amps: Vec<f64> =
        profile.w.iter().map(|v| (v - equilibrium).amax()).collect();
    profile.decay_rate = fit_decay(&profile.ygrid, &amps, FIT_FLOOR * scale)
        .map(|(rate, ..)| rate)
        .unwrap_or(0.0);
    Ok(profile)
}

/// Chart of the stable manifold at `u_bar`: `φ(0) = Ū` and
/// `dφ/dsⱼ(0)` equals the j-th orthonormal stable basis vector.
///
/// The linear deviation `Σ sⱼ bⱼ` is pushed forward to `y = Y` by the
/// linearized flow and integrated back, which parameterizes the manifold
/// smoothly in `s` (exactly linearly for linear systems).
pub fn layer_map_phi(
    sys: &HyperbolicSystem,
    u_bar: &DVector<f64>,
    coords: &[f64],
    numerics: &Numerics,
) -> Result<DVector<f64>, LayerError> {
    let sub = stable_subspace(sys, u_bar, 0.0, numerics)?;
    if coords.len() != sub.dim() {
        return Err(LayerError::Unsupported {
            detail: format!(
                "expected {} stable coordinates, got {}",
                sub.dim(),
                coords.len()
            ),
        });
    }
    if sub.dim() == 0 {
        return Ok(u_bar.clone());
    }
    let mut dev = DVector::<f64>::zeros(u_bar.len());
    for (j, &s) in coords.iter().enumerate() {
        dev += &sub.basis[j] * s;
    }
    let snorm = coords.iter().fold(0.0_f64, |a, &s| a.max(s.abs()));
    let c_slow = sub.min_rate();
    let y_span = ((snorm.max(1e-300) / numerics.eps_seed).ln() / c_slow).max(1.0);
    let mut seed = u_bar.clone();
    for j in 0..sub.dim() {
        let a = sub.lefts[j].dot(&dev);
        seed += &sub.directions[j] * (a * (sub.eigenvalues[j] * y_span).exp());
    }
    let scale = u_bar.amax().max(1.0);
    let guard = (20.0 * snorm).max(0.5 * scale);
    let f_eq = sys.flux(u_bar);
    let orbit = integrate_layer(
        sys,
        &f_eq,
        u_bar,
        seed,
        y_span,
        0.0,
        guard,
        |_, _| false,
        &IntegrateOpts::default(),
    )?;
    Ok(orbit.w[0].clone())
}

/// Split of a layer profile into centre / stable / remainder parts in the
/// frozen eigen-frame at a reference state.
#[derive(Debug, Clone, Serialize)]
pub struct LayerDecomposition {
    /// Centre-model part along the frozen centre direction, per node.
    pub u_k: Vec<DVector<f64>>,
    /// Frozen stable projection of `W − Ū`, per node.
    pub u_s: Vec<DVector<f64>>,
    /// Exact remainder `(W − Ū) − U_k − U_s`, per node.
    pub u_p: Vec<DVector<f64>>,
    /// Fitted exponential decay rates: the relaxation of the stable
    /// coordinates onto their slaved quadratic response, and the tail decay
    /// of `‖U_p‖`.  Infinite when the part sits below the fit floor
    /// everywhere.
    pub fitted_rates: (f64, f64),
    /// Fitted amplitudes `C` in `‖·‖ ≈ C e^{−rate·y}` (0 when absent).
    pub fitted_consts: (f64, f64),
    /// Coefficients of determination of the two fits (1 when absent).
    pub r_squared: (f64, f64),
}

impl LayerDecomposition {
    /// Maximum norms `(max‖U_k‖, max‖U_s‖, max‖U_p‖)` over the grid.
    pub fn max_norms(&self) -> (f64, f64, f64) {
        let peak = |v: &[DVector<f64>]| v.iter().map(|x| x.amax()).fold(0.0_f64, f64::max);
        (peak(&self.u_k), peak(&self.u_s), peak(&self.u_p))
    }
}

/// Splits a profile into the scalar centre-model part `U_k` along the
/// frozen centre direction at `u_sharp`, the projection `U_s` onto the
/// frozen stable directions, and the exact remainder `U_p`, then fits
/// exponential decay rates to `U_s` and `U_p`.
///
/// `k` names the centre family, whose layer eigenvalue must be the one of
/// smallest magnitude at `u_sharp`.  The centre model solves the scalar
/// equation `θ′ = ℓ_k · B(Ū + θ d_k)⁻¹ (F(Ū + θ d_k) − F(Ū))` from the
/// profile's own initial centre coordinate, so `U_p` collects exactly the
/// interaction terms the two leading parts miss.  The stable rate is
/// fitted on the relaxation `sᵢ(y) − c₂ᵢ θ(y)²` of the stable coordinates
/// onto their slaved response, which is the exponentially decaying content
/// of `U_s` once the orbit hugs the centre manifold.
pub fn decompose_layer(
    sys: &HyperbolicSystem,
    profile: &BoundaryLayerProfile,
    u_sharp: &DVector<f64>,
    k: usize,
    numerics: &Numerics,
) -> Result<LayerDecomposition, LayerError> {
    let _ = numerics;
    let n = u_sharp.len();
    if k >= n {
        return Err(LayerError::Unsupported {
            detail: format!("centre family {k} out of range for n = {n}"),
        });
    }
    let spec = layer_spectrum(sys, u_sharp)?;
    let nu_k = spec.values[k].abs();
    for (i, &v) in spec.values.iter().enumerate() {
        if i != k && v.abs() < 2.0 * nu_k.max(1e-12) {
            return Err(LayerError::NearSingular {
                detail: format!(
                    "no separated centre mode: |ν_{k}| = {nu_k:.3e} vs |ν_{i}| = {:.3e}",
                    v.abs()
                ),
            });
        }
    }
    let eq = &profile.equilibrium;
    let f_eq = sys.flux(eq);
    let d_k = &spec.right[k];
    let l_k = &spec.left[k];
    let theta0 = l_k.dot(&(&profile.w[0] - eq));
    let theta_cap = 100.0 * (theta0.abs() + 1.0);
    let g = |theta: f64| -> Result<f64, LayerError> {
        let w = eq + d_k * theta;
        let binv = linalg::inverse(&sys.viscosity_at(&w)).map_err(|e| {
            LayerError::NearSingular { detail: format!("centre model viscosity: {e}") }
        })?;
        Ok(l_k.dot(&(binv * (sys.flux(&w) - &f_eq))))
    };
    let mut theta = theta0;
    let mut u_k = Vec::with_capacity(profile.ygrid.len());
    u_k.push(d_k * theta);
    for j in 1..profile.ygrid.len() {
        let y_prev = profile.ygrid[j - 1];
        let h_cell = profile.ygrid[j] - y_prev;
        let substeps = ((h_cell / (0.1 * (1.0 + y_prev))).ceil() as usize).clamp(1, 50);
        let h = h_cell / substeps as f64;
        for _ in 0..substeps {
            let k1 = g(theta)?;
            let k2 = g(theta + 0.5 * h * k1)?;
            let k3 = g(theta + 0.5 * h * k2)?;
            let k4 = g(theta + h * k3)?;
            theta += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !theta.is_finite() || theta.abs() > theta_cap {
                return Err(LayerError::Unsupported {
                    detail: "centre model left its validity window".into(),
                });
            }
        }
        u_k.push(d_k * theta);
    }
    let stable_idx: Vec<usize> = (0..n).filter(|&i| i != k && spec.values[i] < 0.0).collect();
    let mut u_s = Vec::with_capacity(u_k.len());
    let mut u_p = Vec::with_capacity(u_k.len());
    for (j, w) in profile.w.iter().enumerate() {
        let dev = w - eq;
        let mut s_part = DVector::zeros(n);
        for &i in &stable_idx {
            s_part += &spec.right[i] * spec.left[i].dot(&dev);
        }
        u_p.push(&dev - &u_k[j] - &s_part);
        u_s.push(s_part);
    }
    let scale = eq.amax().max(profile.w[0].amax()).max(1.0);
    let floor = FIT_FLOOR * scale;
    let amps = |v: &[DVector<f64>]| -> Vec<f64> { v.iter().map(|x| x.amax()).collect() };
    // Past the transient the raw stable projection only shows the slaved
    // quadratic response c₂ᵢ θ² of the centre manifold, which is algebraic
    // whenever θ is.  The exponential content is the relaxation onto that
    // response, so c₂ᵢ is estimated on the far half and subtracted, and the
    // rate is fitted on the top decade of what remains.
    let mg = profile.ygrid.len();
    let fit_s = if stable_idx.is_empty() {
        None
    } else {
        let thetas: Vec<f64> = profile.w.iter().map(|w| l_k.dot(&(w - eq))).collect();
        let mut raw = vec![0.0_f64; mg];
        let mut sub = vec![0.0_f64; mg];
        for &i in &stable_idx {
            let coords: Vec<f64> =
                profile.w.iter().map(|w| spec.left[i].dot(&(w - eq))).collect();
            let (mut num, mut den) = (0.0, 0.0);
            for j in mg / 2..mg {
                let t2 = thetas[j] * thetas[j];
                if t2 >= floor {
                    num += coords[j] * t2;
                    den += t2 * t2;
                }
            }
            let c2 = if den > 0.0 { num / den } else { 0.0 };
            for j in 0..mg {
                raw[j] = raw[j].max(coords[j].abs());
                sub[j] = sub[j].max((coords[j] - c2 * thetas[j] * thetas[j]).abs());
            }
        }
        let top_decade = |a: &[f64]| -> Option<(f64, f64, f64, usize)> {
            let peak = a.iter().fold(0.0_f64, |x, &b| x.max(b));
            let lo = (0.1 * peak).max(floor);
            let sel: Vec<usize> = (0..mg).filter(|&j| a[j] >= lo).collect();
            fit_window(&profile.ygrid, a, &sel)
        };
        // On short pure-stable profiles the regression has no slaved tail
        // to learn from, so the subtraction only stands when it explains
        // the data better than the raw projection.
        match (top_decade(&raw), top_decade(&sub)) {
            (Some(a), Some(b)) => Some(if b.2 > a.2 { b } else { a }),
            (a, b) => a.or(b),
        }
    };
    let fit_p = fit_decay(&profile.ygrid, &amps(&u_p), floor);
    if let Some((_, _, r2, _)) = fit_s {
        if r2 < 0.9 {
            return Err(LayerError::PoorFit { component: "stable", r_squared: r2 });
        }
    }
    let unpack = |fit: Option<(f64, f64, f64, usize)>| match fit {
        Some((rate, cst, r2, _)) => (rate, cst, r2),
        None => (f64::INFINITY, 0.0, 1.0),
    };
    let (rate_s, const_s, r2_s) = unpack(fit_s);
    let (rate_p, const_p, r2_p) = unpack(fit_p);
    Ok(LayerDecomposition {
        u_k,
        u_s,
        u_p,
        fitted_rates: (rate_s, rate_p),
        fitted_consts: (const_s, const_p),
        r_squared: (r2_s, r2_p),
    })
}

/// Writes `y,w1,…,wn,uk,us,up` rows: the profile states followed by the
/// max-norms of the three decomposition parts.
pub fn write_decomposition_csv<W: std::io::Write>(
    profile: &BoundaryLayerProfile,
    decomposition: &LayerDecomposition,
    out: &mut W,
) -> std::io::Result<()> {
    write!(out, "y")?;
    for i in 1..=profile.equilibrium.len() {
        write!(out, ",w{i}")?;
    }
    writeln!(out, ",uk,us,up")?;
    for (j, y) in profile.ygrid.iter().enumerate() {
        write!(out, "{y:.16e}")?;
        for v in profile.w[j].iter() {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(
            out,
            ",{:.16e},{:.16e},{:.16e}",
            decomposition.u_k[j].amax(),
            decomposition.u_s[j].amax(),
            decomposition.u_p[j].amax()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::registry;
    use nalgebra::{dmatrix, dvector};

    fn num() -> Numerics {
        Numerics::default()
    }

    #[test]
    fn stable_subspace_matches_the_decoupled_linear_frame() {
        let sys = registry::linear2(dmatrix![-1.0, 0.0; 0.0, 1.0]).unwrap();
        let sub = stable_subspace(&sys, &dvector![0.0, 0.0], 0.0, &num()).unwrap();
        assert_eq!(sub.dim(), 1);
        assert!((sub.eigenvalues[0] + 1.0).abs() < 1e-10);
        assert!((sub.basis[0][0].abs() - 1.0).abs() < 1e-10);
        assert!(sub.basis[0][1].abs() < 1e-10);
    }

    #[test]
    fn stable_subspace_respects_a_scaled_viscosity() {
        // B⁻¹ DF = [[0, −1], [−1, 0]] has eigenvalues ∓1 with stable
        // direction (1, 1)/√2.
        let sys = registry::p_system(1.0, 2.0, 0.0)
            .unwrap()
            .with_viscosity("p-system/diag-viscosity", |_| dmatrix![1.0, 0.0; 0.0, 2.0]);
        let sub = stable_subspace(&sys, &dvector![1.0, 0.0], 0.0, &num()).unwrap();
        assert_eq!(sub.dim(), 1);
        assert!((sub.eigenvalues[0] + 1.0).abs() < 1e-8);
        assert!((sub.directions[0][0].abs() - sub.directions[0][1].abs()).abs() < 1e-8);
    }

    #[test]
    fn burgers_layer_matches_the_tanh_profile() {
        let sys = registry::burgers();
        let n = num();
        let prof = shoot_layer(&sys, &dvector![-1.0], &dvector![0.0], &n).unwrap();
        for (y, w) in prof.ygrid.iter().zip(&prof.w) {
            let exact = -(y / 2.0).tanh();
            assert!(
                (w[0] - exact).abs() <= 1e-6,
                "off the exact profile at y = {y}: {} vs {exact}",
                w[0]
            );
        }
        assert!(prof.residual <= n.tol_layer, "residual {}", prof.residual);
        assert!(prof.tail_gap() <= n.tol_tail);
        assert!((prof.w[0][0]).abs() <= 1e-7);
        assert!(prof.decay_rate > 0.8 && prof.decay_rate < 1.2, "rate {}", prof.decay_rate);
    }

    #[test]
    fn burgers_layer_rejects_an_unreachable_datum() {
        let sys = registry::burgers();
        let err = shoot_layer(&sys, &dvector![-1.0], &dvector![1.5], &num()).unwrap_err();
        assert!(matches!(err, LayerError::NoConnection { .. }), "got {err}");
    }

    #[test]
    fn linear_layer_is_the_explicit_exponential() {
        let sys = registry::linear2(dmatrix![-1.0, 0.0; 0.0, 1.0]).unwrap();
        let prof = shoot_layer(&sys, &dvector![1.0, 4.0], &dvector![3.0, 4.0], &num()).unwrap();
        for (y, w) in prof.ygrid.iter().zip(&prof.w) {
            assert!((w[0] - (1.0 + 2.0 * (-y).exp())).abs() <= 1e-6, "w1 off at y = {y}");
            assert!((w[1] - 4.0).abs() <= 1e-9, "w2 off at y = {y}");
        }
        assert!(prof.residual <= num().tol_layer);
    }

    #[test]
    fn layer_map_is_tangent_to_the_stable_basis() {
        let sys = registry::p_system(1.0, 2.0, 0.0).unwrap();
        let n = num();
        let u_bar = dvector![1.0, 0.0];
        let sub = stable_subspace(&sys, &u_bar, 0.0, &n).unwrap();
        let at_zero = layer_map_phi(&sys, &u_bar, &[0.0], &n).unwrap();
        assert!((&at_zero - &u_bar).amax() <= 1e-9);
        let s = 1e-3;
        let plus = layer_map_phi(&sys, &u_bar, &[s], &n).unwrap();
        let minus = layer_map_phi(&sys, &u_bar, &[-s], &n).unwrap();
        let fd = (plus - minus) / (2.0 * s);
        assert!((&fd - &sub.basis[0]).amax() <= 1e-4, "tangent off by {}", (fd - &sub.basis[0]).amax());
    }

    #[test]
    fn layer_map_round_trips_through_the_shooter() {
        let sys = registry::p_system(1.0, 2.0, 0.0).unwrap();
        let n = num();
        let u_bar = dvector![1.0, 0.0];
        let w0 = layer_map_phi(&sys, &u_bar, &[0.05], &n).unwrap();
        let prof = shoot_layer(&sys, &u_bar, &w0, &n).unwrap();
        assert!((prof.boundary_value() - &w0).amax() <= 1e-6);
        assert!(prof.residual <= n.tol_layer, "residual {}", prof.residual);
        assert!(prof.tail_gap() <= n.tol_tail);
    }

    #[test]
    fn characteristic_burgers_layer_decays_algebraically() {
        // W′ = W²/2 with W(0) = −1/5 gives W(y) = −1/(y/2 + 5).
        let sys = registry::burgers();
        let n = num();
        let prof = characteristic_layer(&sys, &dvector![0.0], &dvector![-0.2], &n).unwrap();
        for (y, w) in prof.ygrid.iter().zip(&prof.w) {
            let exact = -1.0 / (y / 2.0 + 5.0);
            assert!(
                (w[0] - exact).abs() <= 1e-6,
                "off the algebraic profile at y = {y}: {} vs {exact}",
                w[0]
            );
        }
        assert!(prof.residual <= n.tol_layer, "residual {}", prof.residual);
        assert!(prof.tail_gap() <= n.tol_tail);
        assert!(*prof.ygrid.last().unwrap() >= 1e5, "grid too short for 1/y decay");
    }

    #[test]
    fn characteristic_layer_requires_no_unstable_directions() {
        let sys = registry::burgers();
        let err =
            characteristic_layer(&sys, &dvector![0.5], &dvector![0.3], &num()).unwrap_err();
        assert!(matches!(err, LayerError::Unsupported { .. }), "got {err}");
    }

    #[test]
    fn stable_datum_decomposes_into_the_stable_part() {
        // Shifted p-system: sonic at v = 1, layer eigenvalues {−2√2, 0}.
        let shift = -(2.0_f64).sqrt();
        let sys = registry::p_system(1.0, 2.0, shift).unwrap();
        let n = num();
        let eq = dvector![1.0, 0.5];
        let w0 = layer_map_phi(&sys, &eq, &[0.01], &n).unwrap();
        let prof = characteristic_layer(&sys, &eq, &w0, &n).unwrap();
        let dec = decompose_layer(&sys, &prof, &eq, 1, &n).unwrap();
        let (uk, us, up) = dec.max_norms();
        assert!(us >= 5e-3, "stable part should carry the datum, got {us}");
        assert!(uk <= 1e-3, "centre part should be quadratically small, got {uk}");
        assert!(up <= 1e-3, "remainder should be quadratically small, got {up}");
        assert!(
            dec.fitted_rates.0 > 2.0 && dec.fitted_rates.0 < 3.6,
            "stable rate {} should sit near 2√2",
            dec.fitted_rates.0
        );
        for j in 0..prof.ygrid.len() {
            let sum = &dec.u_k[j] + &dec.u_s[j] + &dec.u_p[j];
            let dev = &prof.w[j] - &prof.equilibrium;
            assert!((sum - dev).amax() <= 1e-12, "reconstruction broken at node {j}");
        }
    }

    #[test]
    fn characteristic_datum_decomposes_into_the_centre_part() {
        // Centre direction at the sonic point: r = (1, −√2)/√3; the side
        // with decreasing λ along the orbit converges.
        let shift = -(2.0_f64).sqrt();
        let sys = registry::p_system(1.0, 2.0, shift).unwrap();
        let n = num();
        let eq = dvector![1.0, 0.5];
        let r_c = dvector![1.0, -(2.0_f64).sqrt()] / (3.0_f64).sqrt();
        let w0 = &eq + &r_c * 0.05;
        let prof = characteristic_layer(&sys, &eq, &w0, &n).unwrap();
        let dec = decompose_layer(&sys, &prof, &eq, 1, &n).unwrap();
        let (uk, us, up) = dec.max_norms();
        assert!(uk >= 0.03, "centre part should dominate, got {uk}");
        assert!(us <= 0.3 * uk, "stable part should be subordinate: {us} vs {uk}");
        assert!(up <= 0.3 * uk, "remainder should be subordinate: {up} vs {uk}");
        assert!(
            dec.fitted_rates.0 >= 0.8 * (2.0_f64).sqrt(),
            "stable rate {} should be at least 0.8·(c/2)",
            dec.fitted_rates.0
        );
    }

    #[test]
    fn scalar_characteristic_decomposition_is_pure_centre() {
        let sys = registry::burgers();
        let n = num();
        let prof = characteristic_layer(&sys, &dvector![0.0], &dvector![-0.2], &n).unwrap();
        let dec = decompose_layer(&sys, &prof, &dvector![0.0], 0, &n).unwrap();
        let (_, us, up) = dec.max_norms();
        assert!(us == 0.0, "scalar systems have no stable part");
        assert!(up <= 1e-7, "scalar centre model must track the orbit, got {up}");
        assert!(dec.fitted_rates.0.is_infinite());
    }

    #[test]
    fn profile_csv_is_rectangular() {
        let sys = registry::burgers();
        let prof = shoot_layer(&sys, &dvector![-1.0], &dvector![0.0], &num()).unwrap();
        let mut buf = Vec::new();
        prof.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "y,w1");
        assert_eq!(lines.count(), prof.ygrid.len());
    }
}
