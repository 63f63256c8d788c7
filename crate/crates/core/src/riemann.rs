//! Riemann and boundary Riemann solvers assembled from wave-fan curves.
//!
//! The classical solver composes one wave-fan curve per family, slowest on
//! the left, and finds the strength vector by a damped Newton iteration on
//! the composed endpoint.  The boundary solver works on the quarter plane
//! `x > 0`: outgoing families still carry wave-fan curves, while the
//! boundary datum is absorbed by a viscous layer.  On a non-characteristic
//! boundary the layer is parameterised through the stable-manifold chart
//! [`crate::layers::layer_map_phi`]; on a characteristic boundary the
//! near-zero family contributes the characteristic curve with its standing
//! part and the layer decays only algebraically.
//!
//! Solutions come back as a [`WaveFan`]: waves ordered left to right with
//! their separating plateaus, the interior trace at `ξ = 0+`, and an
//! optional [`BoundaryGroup`] holding the standing jumps and the layer
//! profile.  [`validate_solution`] re-checks a fan against the structural
//! requirements (far field, variation budget, jump admissibility, fan
//! speeds, boundary flux balance, layer contract) without trusting any
//! intermediate quantity of the solve.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::layers::{self, BoundaryLayerProfile, LayerError};
use crate::linalg;
use crate::params::Numerics;
use crate::system::{BoundaryRegime, HyperbolicSystem, SystemError};
use crate::waves::{self, WaveError};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failure modes of the Riemann solvers.
#[derive(Debug, Error)]
pub enum RiemannError {
    /// Structural failure reported by the system layer.
    #[error(transparent)]
    System(#[from] SystemError),
    /// Failure while building a wave-fan curve.
    #[error(transparent)]
    Wave(#[from] WaveError),
    /// Failure while building a boundary layer.
    #[error(transparent)]
    Layer(#[from] LayerError),
    /// The datum gap exceeds the advertised small-data budget.
    #[error("datum gap {gap:.3e} exceeds the solver budget {max:.3e}")]
    DataTooLarge { gap: f64, max: f64 },
    /// No initial guess led the strength iteration to the tolerance.
    #[error(
        "strength iteration stalled at residual {residual:.3e} after {iterations} iterations"
    )]
    NewtonDiverged { residual: f64, iterations: usize },
}

// ---------------------------------------------------------------------------
// Waves and fans
// ---------------------------------------------------------------------------

/// Kind of a single wave in a fan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WaveKind {
    Shock,
    ContactDiscontinuity,
    Rarefaction,
}

/// One wave of a self-similar fan.
#[derive(Debug, Clone, Serialize)]
pub struct Wave {
    pub kind: WaveKind,
    /// Characteristic family the wave belongs to.
    pub family: usize,
    /// State on the left (slow) side.
    pub left: DVector<f64>,
    /// State on the right (fast) side.
    pub right: DVector<f64>,
    /// Lowest speed of the wave; the jump speed for shocks and contacts.
    pub speed_lo: f64,
    /// Highest speed; equals `speed_lo` for jumps.
    pub speed_hi: f64,
    /// Curve-parameter length of the wave.
    pub strength: f64,
    /// For rarefactions: `(ξ, V(ξ))` samples with ascending ξ.
    pub fan_states: Vec<(f64, DVector<f64>)>,
}

impl Wave {
    /// State inside a rarefaction at ξ by linear interpolation of its
    /// samples (clamped at the edges).
    fn fan_state_at(&self, xi: f64) -> DVector<f64> {
        let fs = &self.fan_states;
        if fs.is_empty() {
            return self.right.clone();
        }
        if xi <= fs[0].0 {
            return fs[0].1.clone();
        }
        if xi >= fs[fs.len() - 1].0 {
            return fs[fs.len() - 1].1.clone();
        }
        let j = fs.partition_point(|(x, _)| *x <= xi);
        let (x0, u0) = &fs[j - 1];
        let (x1, u1) = &fs[j];
        if x1 - x0 <= f64::EPSILON * x1.abs().max(1.0) {
            return u0.clone();
        }
        let t = (xi - x0) / (x1 - x0);
        u0 * (1.0 - t) + u1 * t
    }
}

/// Standing part of a boundary solution: the layer equilibrium
/// `underline U`, the zero-speed admissible jumps, and the layer profile.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryGroup {
    /// Equilibrium of the layer; outer edge of the standing jumps.
    pub underline_u: DVector<f64>,
    /// Zero-speed admissible jumps between `underline_u` and the trace,
    /// ordered left to right.
    pub zero_speed_waves: Vec<Wave>,
    /// Layer profile connecting the boundary datum to `underline_u`.
    pub layer: BoundaryLayerProfile,
}

/// A solved (boundary) Riemann problem.
#[derive(Debug, Clone, Serialize)]
pub struct WaveFan {
    /// Waves ordered left to right, grouped by ascending family.
    pub waves: Vec<Wave>,
    /// Constant states between wave groups: `plateaus[g]` sits left of
    /// group `g`; the last entry is the rightmost datum.
    pub plateaus: Vec<DVector<f64>>,
    /// Interior trace `V(0+)` of the self-similar part.
    pub trace: DVector<f64>,
    /// Standing boundary part; `None` for classical solutions and for
    /// boundary solutions without a layer.
    pub boundary_group: Option<BoundaryGroup>,
    /// Sum of wave strengths, standing jumps included.
    pub total_variation: f64,
}

impl WaveFan {
    /// Evaluates the self-similar part at `ξ = x/t`.  The value is
    /// right-continuous at jumps; the standing layer is not included.
    pub fn evaluate(&self, xi: f64) -> DVector<f64> {
        for w in &self.waves {
            if xi < w.speed_lo {
                return w.left.clone();
            }
            if matches!(w.kind, WaveKind::Rarefaction) && xi < w.speed_hi {
                return w.fan_state_at(xi);
            }
        }
        self.plateaus
            .last()
            .expect("a wave fan always stores at least one plateau")
            .clone()
    }

    /// Serializes the fan, with an optional validation report, as one JSON
    /// document tagged `"schema": 1`.
    pub fn to_json(&self, validation: Option<&ValidationReport>) -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "waves": self.waves,
            "plateaus": self.plateaus,
            "trace": self.trace,
            "boundary_group": self.boundary_group,
            "total_variation": self.total_variation,
            "validation": validation,
        })
    }

    /// Writes `count ≥ 2` uniform samples of the self-similar part on
    /// `[lo, hi]` as CSV rows `xi,u1,…,un`.
    pub fn write_samples_csv<W: std::io::Write>(
        &self,
        lo: f64,
        hi: f64,
        count: usize,
        out: &mut W,
    ) -> std::io::Result<()> {
        let n = self.trace.len();
        write!(out, "xi")?;
        for j in 0..n {
            write!(out, ",u{}", j + 1)?;
        }
        writeln!(out)?;
        let count = count.max(2);
        for j in 0..count {
            let xi = lo + (hi - lo) * j as f64 / (count - 1) as f64;
            let u = self.evaluate(xi);
            write!(out, "{xi:.16e}")?;
            for v in u.iter() {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Newton iteration on strength vectors
// ---------------------------------------------------------------------------

struct NewtonOutcome {
    x: DVector<f64>,
}

/// Damped Newton iteration over a list of initial guesses.
///
/// The residual map may fail away from the small-data neighbourhood
/// (curves leaving the region, layers refusing to connect); a failure at a
/// trial point rejects the step, a failure at the current iterate abandons
/// the guess.  A guess that stalls within two orders of magnitude of the
/// tolerance is accepted: strengths at that residual are already far below
/// every wave tolerance downstream.
fn newton_solve<F>(
    map: &mut F,
    inits: &[DVector<f64>],
    scale: f64,
    numerics: &Numerics,
) -> Result<NewtonOutcome, RiemannError>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, RiemannError>,
{
    let tol = numerics.tol_newton * scale;
    let mut best = f64::INFINITY;
    let mut total = 0usize;
    for init in inits {
        let mut x = init.clone();
        let mut r = match map(&x) {
            Ok(r) => r,
            Err(_) => continue,
        };
        for _ in 0..numerics.max_iter_newton {
            total += 1;
            let rn = r.amax();
            best = best.min(rn);
            if rn <= tol {
                return Ok(NewtonOutcome { x });
            }
            let d = x.len();
            let mut jac = DMatrix::zeros(r.len(), d);
            let mut jac_ok = true;
            for j in 0..d {
                let h = numerics.fd_step * x[j].abs().max(1.0);
                let mut xp = x.clone();
                xp[j] += h;
                match map(&xp) {
                    Ok(rp) => jac.set_column(j, &((rp - &r) / h)),
                    Err(_) => {
                        jac_ok = false;
                        break;
                    }
                }
            }
            if !jac_ok {
                break;
            }
            let rhs = -&r;
            let step = match linalg::solve(&jac, &rhs) {
                Ok(s) => s,
                Err(_) => {
                    // Regularised least-squares fallback for a singular
                    // Jacobian (grazing a curve endpoint).
                    let jtj = jac.transpose() * &jac
                        + DMatrix::identity(d, d) * (1e-12 * scale);
                    match linalg::solve(&jtj, &(jac.transpose() * &rhs)) {
                        Ok(s) => s,
                        Err(_) => break,
                    }
                }
            };
            let mut t = 1.0;
            let mut advanced = false;
            for _ in 0..12 {
                let xt = &x + &step * t;
                if let Ok(rt) = map(&xt) {
                    if rt.amax() < rn {
                        x = xt;
                        r = rt;
                        advanced = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !advanced {
                break;
            }
        }
        let rn = r.amax();
        best = best.min(rn);
        if rn <= 100.0 * tol {
            return Ok(NewtonOutcome { x });
        }
    }
    Err(RiemannError::NewtonDiverged { residual: best, iterations: total })
}

/// Linearised strength split `Σ s_j ρ_j = u_minus − u_plus` at the base
/// state, with each tangent oriented like the corresponding fan curve.
fn linearized_strengths(
    sys: &HyperbolicSystem,
    base: &DVector<f64>,
    delta: &DVector<f64>,
    numerics: &Numerics,
) -> Option<DVector<f64>> {
    let n = sys.n();
    let spec = sys.eigen_decompose(base, numerics).ok()?;
    let mut cols = Vec::with_capacity(n);
    for fam in 0..n {
        let g = waves::grad_lambda_dot_r(sys, base, fam, numerics).ok()?;
        let sign = if g > numerics.tol_ld { -1.0 } else { 1.0 };
        cols.push(&spec.right[fam] * sign);
    }
    let m = DMatrix::from_columns(&cols);
    linalg::solve(&m, delta).ok()
}

// ---------------------------------------------------------------------------
// Classical Riemann problem
// ---------------------------------------------------------------------------

/// Solves the Riemann problem `U = u_minus` for `x < 0`, `U = u_plus` for
/// `x > 0`.
pub fn solve_riemann(
    sys: &HyperbolicSystem,
    u_minus: &DVector<f64>,
    u_plus: &DVector<f64>,
    numerics: &Numerics,
) -> Result<WaveFan, RiemannError> {
    solve_riemann_from(sys, u_minus, u_plus, None, numerics)
}

/// Same as [`solve_riemann`] with an explicit initial strength vector.
///
/// When `init` is given it is used alone, so independent starting points
/// stay independent; otherwise the solver tries the origin and then the
/// linearised split of the datum gap.
pub fn solve_riemann_from(
    sys: &HyperbolicSystem,
    u_minus: &DVector<f64>,
    u_plus: &DVector<f64>,
    init: Option<&DVector<f64>>,
    numerics: &Numerics,
) -> Result<WaveFan, RiemannError> {
    let n = sys.n();
    let gap = (u_minus - u_plus).amax();
    let scale = u_minus.amax().max(u_plus.amax()).max(1.0);
    if gap > numerics.data_max {
        return Err(RiemannError::DataTooLarge { gap, max: numerics.data_max });
    }

    // χ(s): compose the curves from the fastest family down to the
    // slowest; the final endpoint must meet `u_minus`.
    let chain = |s: &DVector<f64>| -> Result<Vec<waves::WaveCurveResult>, RiemannError> {
        let mut state = u_plus.clone();
        let mut curves = Vec::with_capacity(n);
        for fam in (0..n).rev() {
            let res = waves::wave_fan_curve(sys, &state, fam, s[fam], numerics)?;
            state = res.endpoint.clone();
            curves.push(res);
        }
        curves.reverse();
        Ok(curves)
    };
    let mut map = |s: &DVector<f64>| -> Result<DVector<f64>, RiemannError> {
        let curves = chain(s)?;
        Ok(&curves[0].endpoint - u_minus)
    };

    let mut inits = Vec::new();
    match init {
        Some(x0) => inits.push(x0.clone()),
        None => {
            inits.push(DVector::zeros(n));
            if let Some(lin) =
                linearized_strengths(sys, u_plus, &(u_minus - u_plus), numerics)
            {
                inits.push(lin);
            }
        }
    }
    let out = newton_solve(&mut map, &inits, scale, numerics)?;
    let curves = chain(&out.x)?;

    let mut all = Vec::new();
    let mut plateaus = vec![curves[0].endpoint.clone()];
    for cur in &curves {
        all.extend(cur.waves.iter().cloned());
        plateaus.push(cur.base.clone());
    }
    let total_variation = all.iter().map(|w| w.strength).sum();
    let mut fan = WaveFan {
        waves: all,
        plateaus,
        trace: DVector::zeros(n),
        boundary_group: None,
        total_variation,
    };
    fan.trace = fan.evaluate(0.0);
    Ok(fan)
}

// ---------------------------------------------------------------------------
// Boundary Riemann problem
// ---------------------------------------------------------------------------

/// Solves the boundary Riemann problem on `x > 0`: initial state `u_0`,
/// boundary datum `u_d` held at `x = 0`.
///
/// Outgoing families carry wave-fan curves; the datum is absorbed by a
/// boundary layer and, on a characteristic boundary, by the standing part
/// of the characteristic curve.
pub fn solve_boundary_riemann(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    numerics: &Numerics,
) -> Result<WaveFan, RiemannError> {
    solve_boundary_riemann_from(sys, u_0, u_d, None, numerics)
}

/// Same as [`solve_boundary_riemann`] with an explicit initial unknown
/// vector (layer coordinates first, then wave strengths by ascending
/// family); used alone when given.
pub fn solve_boundary_riemann_from(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    init: Option<&DVector<f64>>,
    numerics: &Numerics,
) -> Result<WaveFan, RiemannError> {
    let gap = (u_0 - u_d).amax();
    if gap > numerics.data_max {
        return Err(RiemannError::DataTooLarge { gap, max: numerics.data_max });
    }
    match sys.classify_boundary(numerics)? {
        BoundaryRegime::NonCharacteristic { p, .. } => {
            solve_noncharacteristic(sys, u_0, u_d, p, init, numerics)
        }
        BoundaryRegime::Characteristic { k, c, .. } => {
            solve_characteristic(sys, u_0, u_d, k, c, init, numerics)
        }
    }
}

/// Non-characteristic boundary: unknowns are `d = n − p` stable layer
/// coordinates and the strengths of the `p` outgoing families.
fn solve_noncharacteristic(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    p: usize,
    init: Option<&DVector<f64>>,
    numerics: &Numerics,
) -> Result<WaveFan, RiemannError> {
    let n = sys.n();
    let d = n - p;
    let scale = u_0.amax().max(u_d.amax()).max(1.0);

    let chain = |x: &DVector<f64>| -> Result<
        (Vec<waves::WaveCurveResult>, DVector<f64>),
        RiemannError,
    > {
        let mut state = u_0.clone();
        let mut curves = Vec::with_capacity(p);
        for fam in ((n - p)..n).rev() {
            let res = waves::wave_fan_curve(sys, &state, fam, x[d + fam - (n - p)], numerics)?;
            state = res.endpoint.clone();
            curves.push(res);
        }
        curves.reverse();
        Ok((curves, state))
    };
    let mut map = |x: &DVector<f64>| -> Result<DVector<f64>, RiemannError> {
        let (_, u_bar) = chain(x)?;
        let w0 = if d == 0 {
            u_bar
        } else {
            layers::layer_map_phi(sys, &u_bar, &x.as_slice()[..d], numerics)?
        };
        Ok(w0 - u_d)
    };

    let mut inits = Vec::new();
    match init {
        Some(x0) => inits.push(x0.clone()),
        None => {
            inits.push(DVector::zeros(n));
            if let Some(lin) = noncharacteristic_init(sys, u_0, u_d, p, numerics) {
                inits.push(lin);
            }
        }
    }
    let out = newton_solve(&mut map, &inits, scale, numerics)?;
    let (curves, u_bar) = chain(&out.x)?;

    let mut all = Vec::new();
    let mut plateaus = vec![u_bar.clone()];
    for cur in &curves {
        all.extend(cur.waves.iter().cloned());
        plateaus.push(cur.base.clone());
    }
    let total_variation = all.iter().map(|w| w.strength).sum();
    let boundary_group = if (u_d - &u_bar).amax() > 1e-9 * scale {
        let layer = layers::shoot_layer(sys, &u_bar, u_d, numerics)?;
        Some(BoundaryGroup {
            underline_u: u_bar.clone(),
            zero_speed_waves: Vec::new(),
            layer,
        })
    } else {
        None
    };
    Ok(WaveFan {
        waves: all,
        plateaus,
        trace: u_bar,
        boundary_group,
        total_variation,
    })
}

/// Initial guess for the non-characteristic boundary unknowns from the
/// linearisation `u_d − u_0 ≈ Σ c_j b_j + Σ s_f ρ_f` at `u_0`.
fn noncharacteristic_init(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    p: usize,
    numerics: &Numerics,
) -> Option<DVector<f64>> {
    let n = sys.n();
    let d = n - p;
    let sub = layers::stable_subspace(sys, u_0, 0.0, numerics).ok()?;
    if sub.dim() != d {
        return None;
    }
    let spec = sys.eigen_decompose(u_0, numerics).ok()?;
    let mut cols: Vec<DVector<f64>> = sub.basis.to_vec();
    for fam in (n - p)..n {
        let g = waves::grad_lambda_dot_r(sys, u_0, fam, numerics).ok()?;
        let sign = if g > numerics.tol_ld { -1.0 } else { 1.0 };
        cols.push(&spec.right[fam] * sign);
    }
    let m = DMatrix::from_columns(&cols);
    linalg::solve(&m, &(u_d - u_0)).ok()
}

/// Characteristic boundary: unknowns are `k` stable layer coordinates,
/// the characteristic strength `x[k]`, and the strengths of families
/// `k+1 … n−1` (stored at their family index).
fn solve_characteristic(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    k: usize,
    c_gap: f64,
    init: Option<&DVector<f64>>,
    numerics: &Numerics,
) -> Result<WaveFan, RiemannError> {
    let n = sys.n();
    let scale = u_0.amax().max(u_d.amax()).max(1.0);

    let chain = |x: &DVector<f64>| -> Result<
        (Vec<waves::WaveCurveResult>, waves::WaveCurveResult),
        RiemannError,
    > {
        let mut state = u_0.clone();
        let mut fast = Vec::with_capacity(n - 1 - k);
        for fam in ((k + 1)..n).rev() {
            let res = waves::wave_fan_curve(sys, &state, fam, x[fam], numerics)?;
            state = res.endpoint.clone();
            fast.push(res);
        }
        fast.reverse();
        let ch = waves::characteristic_wave_fan_curve(sys, &state, k, x[k], numerics)?;
        Ok((fast, ch))
    };
    let mut map = |x: &DVector<f64>| -> Result<DVector<f64>, RiemannError> {
        let (_, ch) = chain(x)?;
        let mut w0 = ch.endpoint.clone();
        if k > 0 {
            let split = ch
                .characteristic
                .as_ref()
                .expect("characteristic curves always carry a split");
            let sub =
                layers::stable_subspace(sys, &split.underline_u, c_gap / 2.0, numerics)?;
            if sub.dim() != k {
                return Err(RiemannError::Layer(LayerError::Unsupported {
                    detail: format!(
                        "stable subspace has dimension {} at the layer equilibrium, \
                         expected {k}",
                        sub.dim()
                    ),
                }));
            }
            for (j, b) in sub.basis.iter().enumerate() {
                w0 += b * x[j];
            }
        }
        Ok(w0 - u_d)
    };

    let mut inits = Vec::new();
    match init {
        Some(x0) => inits.push(x0.clone()),
        None => {
            inits.push(DVector::zeros(n));
            if let Some(lin) = characteristic_init(sys, u_0, u_d, k, c_gap, numerics) {
                inits.push(lin);
            }
        }
    }
    let out = newton_solve(&mut map, &inits, scale, numerics)?;
    let (fast, ch) = chain(&out.x)?;
    let split = ch
        .characteristic
        .clone()
        .expect("characteristic curves always carry a split");

    let mut all = ch.waves.clone();
    let mut plateaus = vec![split.trace.clone(), ch.base.clone()];
    for cur in &fast {
        all.extend(cur.waves.iter().cloned());
        plateaus.push(cur.base.clone());
    }
    let mut total_variation: f64 = all.iter().map(|w| w.strength).sum();
    total_variation += split
        .zero_speed_waves
        .iter()
        .map(|w| w.strength)
        .sum::<f64>();

    let needs_group = !split.zero_speed_waves.is_empty()
        || (u_d - &split.underline_u).amax() > 1e-9 * scale;
    let boundary_group = if needs_group {
        let layer = layers::characteristic_layer(sys, &split.underline_u, u_d, numerics)?;
        Some(BoundaryGroup {
            underline_u: split.underline_u.clone(),
            zero_speed_waves: split.zero_speed_waves.clone(),
            layer,
        })
    } else {
        None
    };
    Ok(WaveFan {
        waves: all,
        plateaus,
        trace: split.trace.clone(),
        boundary_group,
        total_variation,
    })
}

/// Initial guess for the characteristic boundary unknowns, linearised at
/// `u_0` with the characteristic tangent oriented like the curve.
fn characteristic_init(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    k: usize,
    c_gap: f64,
    numerics: &Numerics,
) -> Option<DVector<f64>> {
    let n = sys.n();
    let sub = layers::stable_subspace(sys, u_0, c_gap / 2.0, numerics).ok()?;
    if sub.dim() != k {
        return None;
    }
    let spec = sys.eigen_decompose(u_0, numerics).ok()?;
    let mut cols: Vec<DVector<f64>> = sub.basis.to_vec();
    {
        let g = waves::grad_lambda_dot_r(sys, u_0, k, numerics).ok()?;
        let sign = if g >= -numerics.tol_ld { 1.0 } else { -1.0 };
        cols.push(&spec.right[k] * sign);
    }
    for fam in (k + 1)..n {
        let g = waves::grad_lambda_dot_r(sys, u_0, fam, numerics).ok()?;
        let sign = if g > numerics.tol_ld { -1.0 } else { 1.0 };
        cols.push(&spec.right[fam] * sign);
    }
    let m = DMatrix::from_columns(&cols);
    linalg::solve(&m, &(u_d - u_0)).ok()
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One validated invariant of a solved fan.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst numerical residual seen by the check.
    pub residual: f64,
    pub detail: String,
}

/// Report of [`validate_solution`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
    /// True when every check passed.
    pub passed: bool,
    pub notes: String,
}

impl ValidationReport {
    /// The check with the given name, if present.
    pub fn check(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Re-checks a solved fan against the structural requirements.
///
/// The checks are independent of the solver internals: far-field match,
/// total-variation budget, Rankine-Hugoniot plus admissibility margins on
/// every jump (standing jumps included), characteristic speeds inside
/// rarefactions, flux balance across the standing part, and the layer
/// contract (equation residual, tail decay, equilibrium match).
pub fn validate_solution(
    sys: &HyperbolicSystem,
    fan: &WaveFan,
    numerics: &Numerics,
) -> ValidationReport {
    let mut checks = Vec::new();

    // Far field: beyond the fastest wave the solution is the outer datum.
    {
        let top = fan
            .waves
            .iter()
            .map(|w| w.speed_hi)
            .fold(0.0_f64, f64::max);
        let datum = fan
            .plateaus
            .last()
            .expect("a wave fan always stores at least one plateau");
        let res = (fan.evaluate(top + 1.0) - datum).amax();
        checks.push(ValidationCheck {
            name: "far_field",
            passed: res <= f64::EPSILON,
            residual: res,
            detail: "state beyond the fastest wave equals the outer datum".into(),
        });
    }

    // Total variation against the datum gap.
    {
        let inner = fan
            .boundary_group
            .as_ref()
            .map(|g| g.layer.boundary_value().clone())
            .unwrap_or_else(|| fan.plateaus[0].clone());
        let gap = (fan
            .plateaus
            .last()
            .expect("a wave fan always stores at least one plateau")
            - &inner)
            .amax();
        let budget = numerics.tv_budget_factor * gap + 1e-12;
        checks.push(ValidationCheck {
            name: "total_variation",
            passed: fan.total_variation <= budget,
            residual: fan.total_variation,
            detail: format!(
                "variation {:.3e} against the budget {:.3e}",
                fan.total_variation, budget
            ),
        });
    }

    // Jump admissibility: Rankine-Hugoniot and the admissibility margin
    // for every shock and contact, standing jumps included.
    {
        let standing = fan
            .boundary_group
            .iter()
            .flat_map(|g| g.zero_speed_waves.iter());
        let mut worst_rh = 0.0_f64;
        let mut worst_margin = f64::INFINITY;
        let mut passed = true;
        let mut detail = String::new();
        for (idx, w) in fan.waves.iter().chain(standing).enumerate() {
            if matches!(w.kind, WaveKind::Rarefaction) {
                continue;
            }
            let rh = waves::rh_residual(sys, &w.left, &w.right, w.speed_lo);
            worst_rh = worst_rh.max(rh);
            if rh > numerics.tol_rh {
                passed = false;
                detail = format!("wave {idx} violates the jump condition (residual {rh:.3e})");
            }
            match waves::liu_check_jump(sys, &w.left, &w.right, w.family, numerics) {
                Ok(rep) => {
                    worst_margin = worst_margin.min(rep.worst_margin);
                    if !rep.admissible {
                        passed = false;
                        detail = format!(
                            "wave {idx} fails the admissibility margin ({:.3e})",
                            rep.worst_margin
                        );
                    }
                }
                Err(e) => {
                    passed = false;
                    detail = format!("wave {idx}: {e}");
                }
            }
        }
        if passed {
            detail = if worst_margin.is_finite() {
                format!("worst jump residual {worst_rh:.3e}, worst margin {worst_margin:.3e}")
            } else {
                "no jumps present".into()
            };
        }
        checks.push(ValidationCheck {
            name: "jump_admissibility",
            passed,
            residual: worst_rh.max((-worst_margin).max(0.0)),
            detail,
        });
    }

    // Rarefaction interiors: λ(V(ξ)) = ξ at every stored sample.
    {
        let mut worst = 0.0_f64;
        let mut passed = true;
        let mut detail = String::new();
        for (idx, w) in fan.waves.iter().enumerate() {
            if !matches!(w.kind, WaveKind::Rarefaction) {
                continue;
            }
            for (xi, u) in &w.fan_states {
                match sys.lambda(u, w.family, numerics) {
                    Ok(lam) => worst = worst.max((lam - xi).abs()),
                    Err(e) => {
                        passed = false;
                        detail = format!("wave {idx}: {e}");
                    }
                }
            }
        }
        if passed {
            passed = worst <= numerics.tol_fan;
            detail = format!("worst |λ(V(ξ)) − ξ| = {worst:.3e}");
        }
        checks.push(ValidationCheck {
            name: "fan_characteristic",
            passed,
            residual: worst,
            detail,
        });
    }

    // Standing part: flux balance between the layer equilibrium and the
    // trace, with every zero-speed jump standing still and chained
    // between them.
    {
        let (passed, residual, detail) = match &fan.boundary_group {
            Some(g) => {
                let mut res =
                    (sys.flux(&g.underline_u) - sys.flux(&fan.trace)).amax();
                let mut chain_gap = 0.0_f64;
                let mut state = g.underline_u.clone();
                for w in &g.zero_speed_waves {
                    chain_gap = chain_gap.max((&w.left - &state).amax());
                    state = w.right.clone();
                    res = res.max(w.speed_lo.abs());
                }
                chain_gap = chain_gap.max((&fan.trace - &state).amax());
                let ok = res <= numerics.tol_rh.max(numerics.zero_speed_tol)
                    && chain_gap <= 1e-9 * fan.trace.amax().max(1.0);
                (
                    ok,
                    res.max(chain_gap),
                    format!(
                        "flux/speed residual {res:.3e}, chain gap {chain_gap:.3e}"
                    ),
                )
            }
            None => (true, 0.0, "no boundary group".into()),
        };
        checks.push(ValidationCheck {
            name: "boundary_flux",
            passed,
            residual,
            detail,
        });
    }

    // Layer contract: equation residual, tail decay, equilibrium match.
    {
        let (passed, residual, detail) = match &fan.boundary_group {
            Some(g) => {
                let res = layers::layer_residual(sys, &g.layer);
                let tail = g.layer.tail_gap();
                let eq = (&g.layer.equilibrium - &g.underline_u).amax();
                let ok = res <= numerics.tol_layer
                    && tail <= numerics.tol_tail
                    && eq <= f64::EPSILON;
                (
                    ok,
                    res.max(tail),
                    format!(
                        "equation residual {res:.3e}, tail gap {tail:.3e}, \
                         equilibrium gap {eq:.3e}"
                    ),
                )
            }
            None => (true, 0.0, "no boundary group".into()),
        };
        checks.push(ValidationCheck {
            name: "boundary_layer",
            passed,
            residual,
            detail,
        });
    }

    let passed = checks.iter().all(|c| c.passed);
    ValidationReport {
        checks,
        passed,
        notes: String::new(),
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::registry;
    use nalgebra::dvector;

    fn numerics() -> Numerics {
        Numerics::default()
    }

    #[test]
    fn burgers_shock_data_give_one_standing_jump() {
        let sys = registry::burgers();
        let fan =
            solve_riemann(&sys, &dvector![1.0], &dvector![-1.0], &numerics()).unwrap();
        assert_eq!(fan.waves.len(), 1);
        let w = &fan.waves[0];
        assert_eq!(w.kind, WaveKind::Shock);
        assert!(w.speed_lo.abs() <= 1e-10, "shock speed {}", w.speed_lo);
        assert!((w.left[0] - 1.0).abs() <= 1e-9);
        assert!((w.right[0] + 1.0).abs() <= 1e-9);
        assert!((fan.total_variation - 2.0).abs() <= 1e-8);
        // Right-continuity at the jump and the plateaus on both sides.
        assert!((fan.evaluate(0.0)[0] + 1.0).abs() <= 1e-9);
        assert!((fan.evaluate(-0.1)[0] - 1.0).abs() <= 1e-9);
        assert!((fan.evaluate(0.1)[0] + 1.0).abs() <= 1e-9);
        assert!((fan.trace[0] + 1.0).abs() <= 1e-9);
        let report = validate_solution(&sys, &fan, &numerics());
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn burgers_rarefaction_matches_the_self_similar_ramp() {
        let sys = registry::burgers();
        let fan =
            solve_riemann(&sys, &dvector![-1.0], &dvector![1.0], &numerics()).unwrap();
        assert_eq!(fan.waves.len(), 1);
        let w = &fan.waves[0];
        assert_eq!(w.kind, WaveKind::Rarefaction);
        assert!((w.speed_lo + 1.0).abs() <= 1e-6);
        assert!((w.speed_hi - 1.0).abs() <= 1e-6);
        // Inside the fan the state is the similarity variable itself.
        for xi in [-0.75, -0.2, 0.3, 0.6] {
            assert!(
                (fan.evaluate(xi)[0] - xi).abs() <= 1e-6,
                "fan state at {xi}"
            );
        }
        assert!(fan.trace[0].abs() <= 1e-6);
        let report = validate_solution(&sys, &fan, &numerics());
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn p_system_data_split_into_two_admissible_waves() {
        let sys = registry::p_system(1.0, 2.0, 0.0).unwrap();
        let u_minus = dvector![1.0, 0.0];
        let u_plus = dvector![1.08, 0.05];
        let fan = solve_riemann(&sys, &u_minus, &u_plus, &numerics()).unwrap();
        assert!(!fan.waves.is_empty());
        // Families appear in ascending order, left to right.
        for pair in fan.waves.windows(2) {
            assert!(pair[0].family <= pair[1].family);
        }
        // Endpoints of the composed fan meet the data.
        assert!((fan.evaluate(-10.0) - &u_minus).amax() <= 1e-8);
        assert!((fan.evaluate(10.0) - &u_plus).amax() <= 1e-8);
        let report = validate_solution(&sys, &fan, &numerics());
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn equal_data_give_the_trivial_fan() {
        let sys = registry::p_system(1.0, 2.0, 0.0).unwrap();
        let u = dvector![1.2, -0.3];
        let fan = solve_riemann(&sys, &u, &u, &numerics()).unwrap();
        assert!(fan.waves.is_empty());
        assert!(fan.total_variation <= 1e-12);
        assert!((fan.evaluate(0.37) - &u).amax() <= 1e-12);
        assert!((fan.trace - &u).amax() <= 1e-12);
    }

    #[test]
    fn oversized_data_are_rejected() {
        let sys = registry::burgers();
        let err = solve_riemann(&sys, &dvector![4.2], &dvector![-4.2], &numerics())
            .unwrap_err();
        assert!(matches!(err, RiemannError::DataTooLarge { .. }), "{err}");
    }

    #[test]
    fn linear_boundary_solution_matches_the_closed_form() {
        // Flux matrix diag(−1, 1): one incoming and one outgoing field.
        // With u_0 = (1, 2), u_d = (3, 4) the trace is (1, 4): the second
        // component rides the outgoing contact, the first decays through
        // the layer 1 + 2 e^{−y}.
        let a = nalgebra::dmatrix![-1.0, 0.0; 0.0, 1.0];
        let sys = registry::linear2(a).unwrap();
        let u_0 = dvector![1.0, 2.0];
        let u_d = dvector![3.0, 4.0];
        let fan = solve_boundary_riemann(&sys, &u_0, &u_d, &numerics()).unwrap();

        assert_eq!(fan.waves.len(), 1);
        let w = &fan.waves[0];
        assert_eq!(w.kind, WaveKind::ContactDiscontinuity);
        assert!((w.speed_lo - 1.0).abs() <= 1e-9);
        assert!((&fan.trace - dvector![1.0, 4.0]).amax() <= 1e-8);

        let group = fan.boundary_group.as_ref().expect("layer expected");
        assert!((&group.underline_u - dvector![1.0, 4.0]).amax() <= 1e-8);
        assert!(group.zero_speed_waves.is_empty());
        for (y, w) in group.layer.ygrid.iter().zip(&group.layer.w) {
            let exact = dvector![1.0 + 2.0 * (-y).exp(), 4.0];
            assert!(
                (w - &exact).amax() <= 1e-6,
                "layer at y = {y}: {w} vs {exact}"
            );
        }
        let report = validate_solution(&sys, &fan, &numerics());
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn characteristic_boundary_splits_into_fan_and_algebraic_layer() {
        // Near-sonic scalar datum: the fan carries [0, 0.1]; the datum
        // −0.2 enters through a layer that decays like 1/y toward 0.
        let sys = registry::burgers();
        let u_0 = dvector![0.1];
        let u_d = dvector![-0.2];
        let fan = solve_boundary_riemann(&sys, &u_0, &u_d, &numerics()).unwrap();

        assert_eq!(fan.waves.len(), 1);
        let w = &fan.waves[0];
        assert_eq!(w.kind, WaveKind::Rarefaction);
        assert!(fan.trace[0].abs() <= 1e-8, "trace {}", fan.trace[0]);
        assert!((w.speed_hi - 0.1).abs() <= 1e-6);

        let group = fan.boundary_group.as_ref().expect("layer expected");
        assert!(group.underline_u[0].abs() <= 1e-8);
        assert!(group.zero_speed_waves.is_empty());
        // W(y) = −1/(y/2 + 5) solves W' = W²/2 with W(0) = −0.2.
        for (y, w) in group.layer.ygrid.iter().zip(&group.layer.w) {
            let exact = -1.0 / (y / 2.0 + 5.0);
            assert!(
                (w[0] - exact).abs() <= 1e-5,
                "layer at y = {y}: {} vs {exact}",
                w[0]
            );
        }
        let report = validate_solution(&sys, &fan, &numerics());
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn boundary_far_field_is_the_initial_state() {
        let sys = registry::burgers();
        let fan = solve_boundary_riemann(
            &sys,
            &dvector![0.1],
            &dvector![-0.2],
            &numerics(),
        )
        .unwrap();
        assert!((fan.evaluate(0.2)[0] - 0.1).abs() <= 1e-9);
        assert!((fan.plateaus.last().unwrap()[0] - 0.1).abs() <= 1e-12);
    }

    #[test]
    fn noncharacteristic_pure_layer_leaves_the_fan_empty() {
        let sys = registry::p_system(1.0, 2.0, 0.0).unwrap();
        let u_0 = dvector![1.0, 0.0];
        let u_d = layers::layer_map_phi(&sys, &u_0, &[0.05], &numerics()).unwrap();
        let fan = solve_boundary_riemann(&sys, &u_0, &u_d, &numerics()).unwrap();
        let moving: f64 = fan.waves.iter().map(|w| w.strength).sum();
        assert!(moving <= 1e-8, "moving strength {moving}");
        assert!((&fan.trace - &u_0).amax() <= 1e-7);
        let group = fan.boundary_group.as_ref().expect("layer expected");
        assert!((group.layer.boundary_value() - &u_d).amax() <= 1e-6);
        let report = validate_solution(&sys, &fan, &numerics());
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn p_system_boundary_with_mixed_data_validates() {
        let sys = registry::p_system(1.0, 2.0, 0.0).unwrap();
        let u_0 = dvector![1.0, 0.0];
        let u_d = dvector![1.04, -0.03];
        let fan = solve_boundary_riemann(&sys, &u_0, &u_d, &numerics()).unwrap();
        assert!((&fan.plateaus[0] - &fan.trace).amax() <= 1e-12);
        let report = validate_solution(&sys, &fan, &numerics());
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn an_entropy_violating_jump_fails_validation() {
        let sys = registry::burgers();
        // Hand-built expansion shock −1 → 1 at speed 0: it satisfies the
        // jump condition but no admissibility margin.
        let fan = WaveFan {
            waves: vec![Wave {
                kind: WaveKind::Shock,
                family: 0,
                left: dvector![-1.0],
                right: dvector![1.0],
                speed_lo: 0.0,
                speed_hi: 0.0,
                strength: 2.0,
                fan_states: Vec::new(),
            }],
            plateaus: vec![dvector![-1.0], dvector![1.0]],
            trace: dvector![1.0],
            boundary_group: None,
            total_variation: 2.0,
        };
        let report = validate_solution(&sys, &fan, &numerics());
        assert!(!report.passed);
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
        assert_eq!(failed.len(), 1, "{report:?}");
        assert_eq!(failed[0].name, "jump_admissibility");
    }

    #[test]
    fn independent_starting_points_reach_the_same_fan() {
        let sys = registry::p_system(1.0, 2.0, 0.0).unwrap();
        let u_minus = dvector![1.0, 0.0];
        let u_plus = dvector![1.06, 0.02];
        let base = solve_riemann(&sys, &u_minus, &u_plus, &numerics()).unwrap();
        let other = solve_riemann_from(
            &sys,
            &u_minus,
            &u_plus,
            Some(&dvector![0.021, -0.047]),
            &numerics(),
        )
        .unwrap();
        assert_eq!(base.waves.len(), other.waves.len());
        for (a, b) in base.waves.iter().zip(&other.waves) {
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.family, b.family);
            assert!((a.speed_lo - b.speed_lo).abs() <= 1e-8);
            assert!((&a.left - &b.left).amax() <= 1e-8);
            assert!((&a.right - &b.right).amax() <= 1e-8);
        }
    }

    #[test]
    fn json_document_carries_the_schema_tag() {
        let sys = registry::burgers();
        let fan =
            solve_riemann(&sys, &dvector![1.0], &dvector![-1.0], &numerics()).unwrap();
        let report = validate_solution(&sys, &fan, &numerics());
        let doc = fan.to_json(Some(&report));
        assert_eq!(doc["schema"], 1);
        assert_eq!(doc["waves"].as_array().unwrap().len(), fan.waves.len());
        assert_eq!(doc["validation"]["passed"], true);
        assert!(doc["boundary_group"].is_null());
    }

    #[test]
    fn sample_csv_is_rectangular() {
        let sys = registry::burgers();
        let fan =
            solve_riemann(&sys, &dvector![-1.0], &dvector![1.0], &numerics()).unwrap();
        let mut buf = Vec::new();
        fan.write_samples_csv(-1.5, 1.5, 7, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], "xi,u1");
        for row in &lines[1..] {
            assert_eq!(row.split(',').count(), 2);
        }
    }
}
