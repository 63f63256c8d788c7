//! Viscous approximations of the boundary Riemann problem.
//!
//! Two regularisations of the quarter-plane problem are discretised here.
//! The *classical* approximation adds a fixed viscosity and marches
//!
//! ```text
//!     U_t + F(U)_x = ε (B(U) U_x)_x,    U(t, 0) = U_D,   U(0, x) = U_0,
//! ```
//!
//! with an upwind/centred method of lines ([`simulate_classical`]).  The
//! *self-similar* approximation scales the viscosity with time,
//! `ε t (B(U) U_x)_x`, which collapses the problem onto the ray variable
//! `ξ = x/t`: the profile `V(ξ)` solves the two-point boundary value
//! problem
//!
//! ```text
//!     (DF(V) − ξ I) V′ = ε (B(V) V′)′,   V(0) = U_D,   V(Ξ) = U_0,
//! ```
//!
//! solved by damped Newton with continuation in ε
//! ([`simulate_selfsimilar`]).  [`compare_limits`] runs both solvers over
//! a list of viscosities and reports their mutual L¹ distance together
//! with the distance of each to the exact wave fan of the
//! [`riemann`](crate::riemann) module — the numerical face of the claim
//! that the two regularisations share a unique small-data limit.
//! [`viscosity_dependence_experiment`] exhibits the complementary fact
//! that the limit *does* depend on the viscosity matrix through the
//! boundary layer: traces sampled just outside the layer are compared
//! for two choices of `B`.
//!
//! Design notes:
//!
//! * The convective part uses first-order upwinding through a local
//!   eigen-decomposition flux splitting.  Limits are discontinuous, so a
//!   high-resolution scheme would only add limiter choices without
//!   sharpening the comparisons that matter here.
//! * The outflow boundary at `x = L` is approximated by Dirichlet data
//!   `U_0` under the precondition that no wave reaches it by the final
//!   time; [`SimConfig::suggest`] pads the domain so the diffusive tails
//!   stay below the detection threshold of that check.
//! * The self-similar problem is solved as a ξ-BVP — the exactly
//!   self-similar discrete object — rather than time-marched.
//! * Each simulation is single-threaded and deterministic; ε-sweeps and
//!   `B`-comparisons run as parallel maps over immutable configurations
//!   and are merged in rank order, never by arrival order.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::params::Numerics;
use crate::riemann::{self, WaveFan};
use crate::system::{HyperbolicSystem, SystemError};

/// Safety factor applied on top of the total-variation budget
/// `tv_budget_factor · (datum gap)` when checking time slices.
const TV_SAFETY: f64 = 2.0;

/// Fraction of the datum gap that counts as a wave arriving at the
/// outflow boundary.
const ESCAPE_FRACTION: f64 = 0.02;

/// Hard cap on explicit time steps; configurations beyond it are
/// rejected up front instead of silently running for hours.
const MAX_TIME_STEPS: usize = 5_000_000;

/// Hard cap on continuation stages of the self-similar solver.
const MAX_STAGES: usize = 500;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Failures of the viscous solvers and experiments.
#[derive(Debug, Error)]
pub enum ViscousError {
    /// The configured time step violates the convective/diffusive CFL
    /// bound.
    #[error("time step {dt:.3e} violates the CFL bound {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },
    /// A wave reached the outflow boundary before the final time, so the
    /// Dirichlet closure there is no longer harmless.
    #[error("wave reached the outflow boundary near x = {x:.4} at t = {t:.4}")]
    DomainEscape { t: f64, x: f64 },
    /// Non-finite values or a blown total-variation budget.
    #[error("solution lost stability at t = {t:.4}: {detail}")]
    Unstable { t: f64, detail: String },
    /// A continuation stage of the self-similar solver failed even after
    /// refining the schedule.
    #[error(
        "Newton continuation diverged at eps = {eps:.4e} \
         (last good eps: {last_good:?}, residual {residual:.3e})"
    )]
    NewtonDiverged { eps: f64, last_good: Option<f64>, residual: f64 },
    /// The compared slices do not cover the requested window.
    #[error(
        "slices cover [{have_lo:.4}, {have_hi:.4}] but the window is [{lo:.4}, {hi:.4}]"
    )]
    WindowMismatch { lo: f64, hi: f64, have_lo: f64, have_hi: f64 },
    /// Inconsistent grids, dimensions, or parameters.
    #[error("bad simulation setup: {detail}")]
    BadConfig { detail: String },
    #[error(transparent)]
    System(#[from] SystemError),
}

fn bad(detail: impl Into<String>) -> ViscousError {
    ViscousError::BadConfig { detail: detail.into() }
}

// ---------------------------------------------------------------------------
// Configuration and solution records
// ---------------------------------------------------------------------------

/// Discretisation record for one viscous run.
///
/// `length` is the spatial extent covered at `t = t_final`; the
/// self-similar solver reads the same record and works on
/// `ξ ∈ [0, length / t_final]` with the same cell count.  `dx` is nudged
/// to the nearest exact divisor of `length`, and `dt` is shrunk (never
/// grown) so that an integer number of steps lands exactly on `t_final`.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    /// Cell width.
    pub dx: f64,
    /// Time step (ignored by the self-similar solver).
    pub dt: f64,
    /// Domain length; kept larger than the comparison window so the
    /// outflow Dirichlet closure stays uncontaminated.
    pub length: f64,
    /// Final time.
    pub t_final: f64,
    /// Number of saved time slices, endpoints included.
    pub save_slices: usize,
}

impl SimConfig {
    /// Builds a config adapted to the problem: the domain covers the
    /// comparison window `(λ_max + margin)·T` plus diffusive padding
    /// `6√(εT) + 10ε`, the mesh resolves the viscous scale with
    /// `cells_per_eps` cells per ε (capped at `max_cells`), and the time
    /// step sits at the CFL bound with the configured safety factor.
    pub fn suggest(
        sys: &HyperbolicSystem,
        u_0: &DVector<f64>,
        u_d: &DVector<f64>,
        eps: f64,
        numerics: &Numerics,
    ) -> Result<Self, ViscousError> {
        check_data(sys, u_0, u_d, eps)?;
        let (lam_pos, lam_abs, b_norm) = segment_bounds(sys, u_0, u_d, numerics)?;
        let t = numerics.t_final;
        let window = (lam_pos.max(0.0) + numerics.domain_margin) * t;
        let length = window + 6.0 * (eps * t).sqrt() + 10.0 * eps;
        let dx_target = (eps / numerics.cells_per_eps).min(length / 64.0);
        let m = ((length / dx_target).ceil() as usize).clamp(16, numerics.max_cells);
        let dx = length / m as f64;
        let limit = cfl_limit(dx, eps, lam_abs, b_norm, numerics);
        let steps = ((t / limit).ceil() as usize).max(1);
        if steps > MAX_TIME_STEPS {
            return Err(bad(format!(
                "explicit integration would need {steps} steps (cap {MAX_TIME_STEPS}); \
                 eps = {eps:.3e} is too small for the time-dependent solver"
            )));
        }
        let dt = t / steps as f64;
        Ok(Self { dx, dt, length, t_final: t, save_slices: 11 })
    }

    /// Cell count implied by `length / dx` (rounded).
    pub fn cells(&self) -> usize {
        (self.length / self.dx).round().max(4.0) as usize
    }

    fn validate(&self) -> Result<(), ViscousError> {
        for (name, v) in [
            ("dx", self.dx),
            ("dt", self.dt),
            ("length", self.length),
            ("t_final", self.t_final),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(bad(format!("config.{name} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// Entropy bookkeeping of a time-dependent run: at each saved slice, the
/// total entropy `∫ η(U) dx` corrected by the accumulated boundary
/// entropy fluxes (convective and viscous).  For a dissipative scheme the
/// sequence is non-increasing up to `O(Δt)` quadrature error.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    /// Times of the saved slices.
    pub t: Vec<f64>,
    /// Flux-corrected entropy balance; starts at zero.
    pub balance: Vec<f64>,
}

impl EntropyReport {
    /// Largest increase between consecutive saved balances (zero for a
    /// perfectly dissipative run).
    pub fn max_rise(&self) -> f64 {
        self.balance
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0_f64, f64::max)
    }
}

/// Which grid the solution lives on.
#[derive(Debug, Clone)]
pub enum SolutionKind {
    /// Saved time slices `u[k][j] = U(t[k], x[j])`.
    TimeDependent { t: Vec<f64>, x: Vec<f64>, u: Vec<Vec<DVector<f64>>> },
    /// The self-similar profile `v[j] = V(ξ[j])`.
    SelfSimilar { xi: Vec<f64>, v: Vec<DVector<f64>> },
}

/// One viscous solution together with its discretisation record.
///
/// Boundary nodes carry the Dirichlet data exactly, all values are
/// finite, and every stored slice respects the total-variation budget —
/// the constructors fail rather than return an object violating these.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub kind: SolutionKind,
    /// Viscosity scale ε of the run.
    pub epsilon: f64,
    /// Effective discretisation (after the rounding described on
    /// [`SimConfig`]).
    pub config: SimConfig,
    /// Per-run entropy bookkeeping, when the system carries an entropy
    /// pair (time-dependent runs only).
    pub entropy: Option<EntropyReport>,
}

impl GridSolution {
    /// Saved times (empty for self-similar solutions).
    pub fn times(&self) -> &[f64] {
        match &self.kind {
            SolutionKind::TimeDependent { t, .. } => t,
            SolutionKind::SelfSimilar { .. } => &[],
        }
    }

    /// The solution as a spatial slice at time `t`: a saved slice for
    /// time-dependent runs (within rounding), the mapped profile
    /// `x = ξ·t` for self-similar runs.  `None` when `t` was not saved.
    pub fn space_slice(&self, t: f64) -> Option<(Vec<f64>, Vec<DVector<f64>>)> {
        match &self.kind {
            SolutionKind::TimeDependent { t: ts, x, u } => {
                let k = ts
                    .iter()
                    .position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()))?;
                Some((x.clone(), u[k].clone()))
            }
            SolutionKind::SelfSimilar { xi, v } => {
                if !(t > 0.0) {
                    return None;
                }
                Some((xi.iter().map(|&s| s * t).collect(), v.clone()))
            }
        }
    }

    /// The slice at the final time (`t_final` for both kinds).
    pub fn final_slice(&self) -> (Vec<f64>, Vec<DVector<f64>>) {
        let t = match &self.kind {
            SolutionKind::TimeDependent { t, .. } => *t.last().expect("slices saved"),
            SolutionKind::SelfSimilar { .. } => self.config.t_final,
        };
        self.space_slice(t).expect("final slice is always stored")
    }

    /// Writes one saved slice (`x,u1,…,un` rows) or, for self-similar
    /// solutions, the profile (`xi,u1,…,un` rows); `slice` indexes the
    /// saved times and is ignored for profiles.
    pub fn write_slice_csv<W: std::io::Write>(
        &self,
        slice: usize,
        out: &mut W,
    ) -> std::io::Result<()> {
        let (abscissa, grid, states): (&str, &[f64], &[DVector<f64>]) = match &self.kind {
            SolutionKind::TimeDependent { x, u, .. } => ("x", x, &u[slice.min(u.len() - 1)]),
            SolutionKind::SelfSimilar { xi, v } => ("xi", xi, v),
        };
        let n = states[0].len();
        write!(out, "{abscissa}")?;
        for j in 0..n {
            write!(out, ",u{}", j + 1)?;
        }
        writeln!(out)?;
        for (s, w) in grid.iter().zip(states) {
            write!(out, "{s:.16e}")?;
            for c in w.iter() {
                write!(out, ",{c:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn check_data(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    eps: f64,
) -> Result<(), ViscousError> {
    if u_0.len() != sys.n() || u_d.len() != sys.n() {
        return Err(bad(format!(
            "data dimension {}/{} does not match the system dimension {}",
            u_0.len(),
            u_d.len(),
            sys.n()
        )));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(bad(format!("viscosity eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Speed and viscosity bounds sampled along the datum segment:
/// `(max λ, max |λ|, max ‖B‖_∞)`.
fn segment_bounds(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    numerics: &Numerics,
) -> Result<(f64, f64, f64), ViscousError> {
    let mut lam_pos = f64::NEG_INFINITY;
    let mut lam_abs = 0.0_f64;
    let mut b_norm = 0.0_f64;
    for j in 0..=4 {
        let s = j as f64 / 4.0;
        let u = u_0 * (1.0 - s) + u_d * s;
        let spec = sys.eigen_decompose(&u, numerics)?;
        for &l in &spec.eigenvalues {
            lam_pos = lam_pos.max(l);
            lam_abs = lam_abs.max(l.abs());
        }
        let b = sys.viscosity_at(&u);
        for i in 0..b.nrows() {
            b_norm = b_norm.max(b.row(i).iter().map(|v| v.abs()).sum());
        }
    }
    Ok((lam_pos, lam_abs, b_norm))
}

/// Explicit stability bound `cfl · min(Δx/λ, Δx²/(2ε‖B‖))`; the speed
/// gets a 10 % allowance for overshoot beyond the datum hull.
fn cfl_limit(dx: f64, eps: f64, lam_abs: f64, b_norm: f64, numerics: &Numerics) -> f64 {
    let lam = 1.1 * lam_abs + 1e-12;
    let diff = 2.0 * eps * b_norm + 1e-300;
    numerics.cfl * (dx / lam).min(dx * dx / diff)
}

/// Upwind dissipation matrix `|A| = R |Λ| L` of a flux Jacobian.
///
/// For `n ≤ 2` the matrix function is evaluated in closed form through
/// Lagrange interpolation on the (real, distinct) spectrum; larger
/// systems go through the full spectral decomposition.  Degenerate or
/// complex local spectra fall back to scalar dissipation at a
/// spectral-radius bound, which keeps the scheme stable instead of
/// aborting the run on a transient mid-state.
fn abs_jacobian(sys: &HyperbolicSystem, u: &DVector<f64>, numerics: &Numerics) -> DMatrix<f64> {
    let a = sys.jacobian(u);
    let n = a.nrows();
    match n {
        1 => DMatrix::from_vec(1, 1, vec![a[(0, 0)].abs()]),
        2 => {
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = tr * tr - 4.0 * det;
            let scale = a.amax().max(1.0);
            if disc > 1e-24 * scale * scale {
                let s = disc.sqrt();
                let (l1, l2) = (0.5 * (tr - s), 0.5 * (tr + s));
                // f(A) = c·A + d·I interpolating f = |·| at l1, l2.
                let c = (l2.abs() - l1.abs()) / s;
                let d = (l1.abs() * l2 - l2.abs() * l1) / s;
                let mut out = a * c;
                out[(0, 0)] += d;
                out[(1, 1)] += d;
                out
            } else {
                let rho = 0.5 * tr.abs() + disc.max(0.0).sqrt();
                DMatrix::from_diagonal_element(2, 2, rho.max(scale))
            }
        }
        _ => match sys.eigen_decompose(u, numerics) {
            Ok(spec) => {
                let mut out = DMatrix::zeros(n, n);
                for k in 0..n {
                    let outer = &spec.right[k] * spec.left[k].transpose();
                    out += outer * spec.eigenvalues[k].abs();
                }
                out
            }
            Err(_) => {
                let rho = (0..n)
                    .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
                    .fold(0.0_f64, f64::max);
                DMatrix::from_diagonal_element(n, n, rho)
            }
        },
    }
}

fn tv_inf(states: &[DVector<f64>]) -> f64 {
    states.windows(2).map(|w| (&w[1] - &w[0]).amax()).sum()
}

fn all_finite(states: &[DVector<f64>]) -> bool {
    states.iter().all(|w| w.iter().all(|v| v.is_finite()))
}

// ---------------------------------------------------------------------------
// Classical (time-dependent) solver
// ---------------------------------------------------------------------------

struct RhsScratch {
    flux: Vec<DVector<f64>>,
    fhat: Vec<DVector<f64>>,
    diff: Vec<DVector<f64>>,
    mid: DVector<f64>,
    du: DVector<f64>,
}

impl RhsScratch {
    fn new(m: usize, n: usize) -> Self {
        Self {
            flux: vec![DVector::zeros(n); m + 1],
            fhat: vec![DVector::zeros(n); m],
            diff: vec![DVector::zeros(n); m],
            mid: DVector::zeros(n),
            du: DVector::zeros(n),
        }
    }
}

/// Semi-discrete right-hand side: upwind flux differences plus centred
/// viscosity, with homogeneous entries at the pinned boundary nodes.
fn classical_rhs(
    sys: &HyperbolicSystem,
    eps: f64,
    dx: f64,
    u: &[DVector<f64>],
    numerics: &Numerics,
    ws: &mut RhsScratch,
    out: &mut [DVector<f64>],
) {
    let m = u.len() - 1;
    for j in 0..=m {
        ws.flux[j] = sys.flux(&u[j]);
    }
    for i in 0..m {
        ws.mid.copy_from(&u[i]);
        ws.mid += &u[i + 1];
        ws.mid *= 0.5;
        ws.du.copy_from(&u[i + 1]);
        ws.du -= &u[i];
        let absa = abs_jacobian(sys, &ws.mid, numerics);
        ws.fhat[i].copy_from(&ws.flux[i]);
        ws.fhat[i] += &ws.flux[i + 1];
        // fhat = 0.5 (F_i + F_{i+1}) − 0.5 |A| ΔU
        ws.fhat[i].gemv(-0.5, &absa, &ws.du, 0.5);
        let b = sys.viscosity_at(&ws.mid);
        ws.diff[i].gemv(1.0 / dx, &b, &ws.du, 0.0);
    }
    out[0].fill(0.0);
    out[m].fill(0.0);
    for j in 1..m {
        out[j].copy_from(&ws.fhat[j - 1]);
        out[j] -= &ws.fhat[j];
        out[j] /= dx;
        out[j].axpy(eps / dx, &ws.diff[j], 1.0);
        out[j].axpy(-eps / dx, &ws.diff[j - 1], 1.0);
    }
}

/// Solves the initial-boundary value problem with fixed viscosity ε by
/// the method of lines: first-order upwind flux splitting for the
/// convective part, centred second differences for `ε (B(U) U_x)_x`, and
/// explicit two-stage Runge-Kutta in time.  Dirichlet data `U_D` at
/// `x = 0` and `U_0` at `x = length` are enforced exactly at every
/// stage.
///
/// Fails with [`ViscousError::CflViolation`] when `config.dt` exceeds
/// the stability bound, and with [`ViscousError::DomainEscape`] when a
/// wave reaches the outflow boundary before `t_final`.
pub fn simulate_classical(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    eps: f64,
    config: &SimConfig,
    numerics: &Numerics,
) -> Result<GridSolution, ViscousError> {
    check_data(sys, u_0, u_d, eps)?;
    config.validate()?;
    let n = sys.n();
    let m = config.cells();
    let dx = config.length / m as f64;
    let steps = ((config.t_final / config.dt).ceil() as usize).max(1);
    if steps > MAX_TIME_STEPS {
        return Err(bad(format!("{steps} time steps exceed the cap {MAX_TIME_STEPS}")));
    }
    let dt = config.t_final / steps as f64;

    let (_, lam_abs, b_norm) = segment_bounds(sys, u_0, u_d, numerics)?;
    let limit = cfl_limit(dx, eps, lam_abs, b_norm, numerics);
    if config.dt > limit * (1.0 + 1e-9) {
        return Err(ViscousError::CflViolation { dt: config.dt, limit });
    }

    let gap = (u_d - u_0).amax();
    let scale = 1.0 + u_0.amax().max(u_d.amax());
    let tv_budget = numerics.tv_budget_factor * (gap + 1e-6 * scale) * TV_SAFETY;
    let escape_tol = ESCAPE_FRACTION * gap + 1e-7 * scale;

    let mut u: Vec<DVector<f64>> = vec![u_0.clone(); m + 1];
    u[0] = u_d.clone();
    let mut k1 = vec![DVector::zeros(n); m + 1];
    let mut k2 = vec![DVector::zeros(n); m + 1];
    let mut stage = vec![DVector::zeros(n); m + 1];
    let mut ws = RhsScratch::new(m, n);

    // Entropy bookkeeping: E(t) − E(0) − ∫ (boundary fluxes) dt should be
    // non-increasing; the boundary fluxes are accumulated with the
    // first-order rectangle rule, hence the O(Δt) tolerance in the
    // advertised invariant.
    let pair = sys.entropy();
    let total_entropy = |u: &[DVector<f64>]| -> f64 {
        pair.map_or(0.0, |p| {
            let eta: Vec<f64> = u.iter().map(|w| (p.eta)(w)).collect();
            eta.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum()
        })
    };
    let boundary_flux = |u: &[DVector<f64>]| -> f64 {
        pair.map_or(0.0, |p| {
            let qin = (p.q)(&u[0]) - (p.q)(&u[m]);
            let gl = (p.grad_eta)(&u[0]);
            let gr = (p.grad_eta)(&u[m]);
            let dl = sys.viscosity_at(&u[0]) * (&u[1] - &u[0]) / dx;
            let dr = sys.viscosity_at(&u[m]) * (&u[m] - &u[m - 1]) / dx;
            qin + eps * (gr.dot(&dr) - gl.dot(&dl))
        })
    };
    let e0 = total_entropy(&u);
    let mut flux_acc = 0.0;
    let mut report = pair.map(|_| EntropyReport { t: vec![0.0], balance: vec![0.0] });

    let stride = (steps / (config.save_slices.max(2) - 1)).max(1);
    let mut times = vec![0.0];
    let mut saved = vec![u.clone()];

    let check_slice = |u: &[DVector<f64>], t: f64| -> Result<(), ViscousError> {
        if !all_finite(u) {
            return Err(ViscousError::Unstable { t, detail: "non-finite state".into() });
        }
        let tv = tv_inf(u);
        if tv > tv_budget {
            return Err(ViscousError::Unstable {
                t,
                detail: format!("total variation {tv:.3e} exceeds the budget {tv_budget:.3e}"),
            });
        }
        if gap > 1e-12 * scale {
            for j in m.saturating_sub(3)..m {
                if (&u[j] - u_0).amax() > escape_tol {
                    return Err(ViscousError::DomainEscape { t, x: j as f64 * dx });
                }
            }
        }
        Ok(())
    };

    for step in 0..steps {
        flux_acc += dt * boundary_flux(&u);
        classical_rhs(sys, eps, dx, &u, numerics, &mut ws, &mut k1);
        for j in 0..=m {
            stage[j].copy_from(&u[j]);
            stage[j].axpy(dt, &k1[j], 1.0);
        }
        classical_rhs(sys, eps, dx, &stage, numerics, &mut ws, &mut k2);
        for j in 1..m {
            u[j].axpy(0.5 * dt, &k1[j], 1.0);
            u[j].axpy(0.5 * dt, &k2[j], 1.0);
        }
        let t = (step + 1) as f64 * dt;
        if (step + 1) % stride == 0 || step + 1 == steps {
            check_slice(&u, t)?;
            times.push(t);
            saved.push(u.clone());
            if let Some(rep) = report.as_mut() {
                rep.t.push(t);
                rep.balance.push(total_entropy(&u) - e0 - flux_acc);
            }
        }
    }

    Ok(GridSolution {
        kind: SolutionKind::TimeDependent { t: times, x: (0..=m).map(|j| j as f64 * dx).collect(), u: saved },
        epsilon: eps,
        config: SimConfig { dx, dt, ..config.clone() },
        entropy: report,
    })
}

// ---------------------------------------------------------------------------
// Self-similar (BVP) solver
// ---------------------------------------------------------------------------

/// Central-difference residual of the ξ-BVP at interior node `i`.
fn bvp_residual_at(
    sys: &HyperbolicSystem,
    v: &[DVector<f64>],
    i: usize,
    h: f64,
    eps: f64,
) -> DVector<f64> {
    let xi = i as f64 * h;
    let slope = (&v[i + 1] - &v[i - 1]) / (2.0 * h);
    let conv = sys.jacobian(&v[i]) * &slope - &slope * xi;
    let bp = sys.viscosity_at(&(0.5 * (&v[i] + &v[i + 1])));
    let bm = sys.viscosity_at(&(0.5 * (&v[i - 1] + &v[i])));
    let diff = (bp * (&v[i + 1] - &v[i]) - bm * (&v[i] - &v[i - 1])) / (h * h);
    conv - diff * eps
}

fn residual_norm(r: &[DVector<f64>]) -> f64 {
    r.iter().map(|b| b.amax()).fold(0.0, f64::max)
}

/// Solves the block-tridiagonal system `J δ = −r` in place; `None` when a
/// pivot block is singular.
fn block_thomas(
    sub: &[DMatrix<f64>],
    diag: &[DMatrix<f64>],
    sup: &[DMatrix<f64>],
    r: &[DVector<f64>],
) -> Option<Vec<DVector<f64>>> {
    let k = diag.len();
    let mut c_prime: Vec<DMatrix<f64>> = Vec::with_capacity(k);
    let mut d_prime: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut denom = diag[0].clone();
    for i in 0..k {
        if i > 0 {
            denom = &diag[i] - &sub[i] * &c_prime[i - 1];
        }
        let lu = denom.clone().lu();
        let cp = if i + 1 < k { lu.solve(&sup[i])? } else { DMatrix::zeros(r[0].len(), r[0].len()) };
        let rhs = if i > 0 { -&r[i] - &sub[i] * &d_prime[i - 1] } else { -&r[i] };
        let dp = lu.solve(&rhs)?;
        c_prime.push(cp);
        d_prime.push(dp);
    }
    let mut delta = vec![DVector::zeros(r[0].len()); k];
    delta[k - 1] = d_prime[k - 1].clone();
    for i in (0..k - 1).rev() {
        delta[i] = &d_prime[i] - &c_prime[i] * &delta[i + 1];
    }
    Some(delta)
}

/// One damped-Newton solve at fixed ε; on failure returns the residual
/// norm it was stuck at.
fn newton_bvp(
    sys: &HyperbolicSystem,
    v: &mut Vec<DVector<f64>>,
    eps: f64,
    h: f64,
    numerics: &Numerics,
) -> Result<(), f64> {
    let m = v.len() - 1;
    let n = v[0].len();
    let vscale = 1.0 + v.iter().map(|w| w.amax()).fold(0.0, f64::max);
    let assemble = |v: &[DVector<f64>]| -> Vec<DVector<f64>> {
        (1..m).map(|i| bvp_residual_at(sys, v, i, h, eps)).collect()
    };
    let mut r = assemble(v);
    let mut norm = residual_norm(&r);
    if !norm.is_finite() {
        return Err(norm);
    }
    // Residual tolerance at the scale of the discrete operator applied to
    // O(vscale) data; the final quadratically convergent step typically
    // lands far below it.
    let xi_max = m as f64 * h;
    let op_scale = (xi_max + 1.0) / h + 4.0 * eps / (h * h);
    let atol = numerics.tol_newton * op_scale * vscale;

    for _ in 0..numerics.max_iter_newton {
        if norm <= atol {
            return Ok(());
        }
        // Finite-difference Jacobian blocks on the three-point stencil.
        let mut sub = vec![DMatrix::zeros(n, n); m - 1];
        let mut diag = vec![DMatrix::zeros(n, n); m - 1];
        let mut sup = vec![DMatrix::zeros(n, n); m - 1];
        let mut vp = v.clone();
        for i in 1..m {
            for (off, blocks) in [(-1_i64, &mut sub), (0, &mut diag), (1, &mut sup)] {
                let j = (i as i64 + off) as usize;
                if j == 0 || j == m {
                    continue;
                }
                for c in 0..n {
                    let dstep = numerics.fd_step * (1.0 + vp[j][c].abs());
                    let keep = vp[j][c];
                    vp[j][c] = keep + dstep;
                    let rp = bvp_residual_at(sys, &vp, i, h, eps);
                    vp[j][c] = keep - dstep;
                    let rm = bvp_residual_at(sys, &vp, i, h, eps);
                    vp[j][c] = keep;
                    blocks[i - 1].set_column(c, &((rp - rm) / (2.0 * dstep)));
                }
            }
        }
        let Some(delta) = block_thomas(&sub, &diag, &sup, &r) else {
            return Err(norm);
        };
        let step_max = delta.iter().map(|d| d.amax()).fold(0.0, f64::max);
        if step_max <= 1e-14 * vscale {
            return if norm <= atol.max(1e-7 * op_scale * vscale) { Ok(()) } else { Err(norm) };
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1.0 / 256.0 {
            let mut trial = v.clone();
            for i in 1..m {
                trial[i].axpy(alpha, &delta[i - 1], 1.0);
            }
            let rt = assemble(&trial);
            let nt = residual_norm(&rt);
            if nt.is_finite() && (nt <= (1.0 - 1e-4 * alpha) * norm || nt <= atol) {
                *v = trial;
                r = rt;
                norm = nt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(norm);
        }
    }
    if norm <= atol {
        Ok(())
    } else {
        Err(norm)
    }
}

/// Solves the self-similar viscous problem as the two-point BVP
/// `(DF(V) − ξI) V′ = ε (B(V) V′)′` on `[0, Ξ]` with `V(0) = U_D`,
/// `V(Ξ) = U_0`, by damped Newton on central finite differences.
///
/// For targets below `continuation_eps0` the viscosity is continued
/// geometrically (halving, warm-starting each stage from the previous
/// profile); when a stage fails the schedule refines to factor ≈ 1.3
/// steps.  [`ViscousError::NewtonDiverged`] reports the last viscosity
/// that converged.
pub fn simulate_selfsimilar(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    eps: f64,
    config: &SimConfig,
    numerics: &Numerics,
) -> Result<GridSolution, ViscousError> {
    check_data(sys, u_0, u_d, eps)?;
    config.validate()?;
    let m = config.cells();
    let xi_max = config.length / config.t_final;
    let h = xi_max / m as f64;

    let mut v: Vec<DVector<f64>> = (0..=m)
        .map(|i| {
            let s = i as f64 / m as f64;
            u_d * (1.0 - s) + u_0 * s
        })
        .collect();

    let mut stage_eps = if eps >= numerics.continuation_eps0 { eps } else { numerics.continuation_eps0 };
    let mut factor = 2.0;
    let mut last_good: Option<(f64, Vec<DVector<f64>>)> = None;
    for _stage in 0..MAX_STAGES {
        match newton_bvp(sys, &mut v, stage_eps, h, numerics) {
            Ok(()) => {
                if stage_eps <= eps * (1.0 + 1e-12) {
                    let gap = (u_d - u_0).amax();
                    let scale = 1.0 + u_0.amax().max(u_d.amax());
                    let tv = tv_inf(&v);
                    let budget = numerics.tv_budget_factor * (gap + 1e-6 * scale) * TV_SAFETY;
                    if tv > budget {
                        return Err(ViscousError::Unstable {
                            t: 0.0,
                            detail: format!(
                                "profile total variation {tv:.3e} exceeds the budget {budget:.3e}"
                            ),
                        });
                    }
                    return Ok(GridSolution {
                        kind: SolutionKind::SelfSimilar {
                            xi: (0..=m).map(|i| i as f64 * h).collect(),
                            v,
                        },
                        epsilon: eps,
                        config: SimConfig { dx: config.length / m as f64, ..config.clone() },
                        entropy: None,
                    });
                }
                last_good = Some((stage_eps, v.clone()));
                stage_eps = (stage_eps / factor).max(eps);
                if stage_eps <= eps * 1.0001 {
                    stage_eps = eps;
                }
            }
            Err(residual) => match &last_good {
                // Refine the continuation schedule once, restarting from
                // the last converged stage; Newton basins shrink with ε.
                Some((eg, vg)) if factor > 1.35 => {
                    factor = 1.3;
                    v = vg.clone();
                    stage_eps = (eg / factor).max(eps);
                    if stage_eps <= eps * 1.0001 {
                        stage_eps = eps;
                    }
                }
                Some((eg, _)) => {
                    return Err(ViscousError::NewtonDiverged {
                        eps: stage_eps,
                        last_good: Some(*eg),
                        residual,
                    })
                }
                None => {
                    return Err(ViscousError::NewtonDiverged {
                        eps: stage_eps,
                        last_good: None,
                        residual,
                    })
                }
            },
        }
    }
    Err(bad("viscosity continuation stalled"))
}

// ---------------------------------------------------------------------------
// L¹ comparison machinery
// ---------------------------------------------------------------------------

fn sample_linear(xs: &[f64], us: &[DVector<f64>], x: f64) -> DVector<f64> {
    if x <= xs[0] {
        return us[0].clone();
    }
    if x >= xs[xs.len() - 1] {
        return us[us.len() - 1].clone();
    }
    let j = xs.partition_point(|&s| s <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    if x1 - x0 <= f64::EPSILON * x1.abs().max(1.0) {
        return us[j - 1].clone();
    }
    let t = (x - x0) / (x1 - x0);
    &us[j - 1] * (1.0 - t) + &us[j] * t
}

/// Trapezoidal `L¹` distance of two sampled slices over `[lo, hi]`,
/// after linear resampling onto the common refinement of both grids
/// (finer than either); component differences are summed.
///
/// Fails with [`ViscousError::WindowMismatch`] when either slice does
/// not cover the window.
pub fn l1_distance(
    ax: &[f64],
    au: &[DVector<f64>],
    bx: &[f64],
    bu: &[DVector<f64>],
    window: (f64, f64),
) -> Result<f64, ViscousError> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(bad(format!("degenerate window [{lo}, {hi}]")));
    }
    for (xs, us, tag) in [(ax, au, "first"), (bx, bu, "second")] {
        if xs.len() != us.len() || xs.len() < 2 {
            return Err(bad(format!("{tag} slice needs matching grid/states with >= 2 nodes")));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad(format!("{tag} slice grid is not strictly increasing")));
        }
    }
    if au[0].len() != bu[0].len() {
        return Err(bad(format!(
            "slice dimensions {} and {} differ",
            au[0].len(),
            bu[0].len()
        )));
    }
    let slack = 1e-9 * (hi - lo);
    let have_lo = ax[0].max(bx[0]);
    let have_hi = ax[ax.len() - 1].min(bx[bx.len() - 1]);
    if have_lo > lo + slack || have_hi < hi - slack {
        return Err(ViscousError::WindowMismatch { lo, hi, have_lo, have_hi });
    }

    let mut nodes: Vec<f64> = std::iter::once(lo)
        .chain(std::iter::once(hi))
        .chain(ax.iter().copied().filter(|&x| x > lo && x < hi))
        .chain(bx.iter().copied().filter(|&x| x > lo && x < hi))
        .collect();
    nodes.sort_by(|a, b| a.total_cmp(b));
    nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (hi - lo));

    let diff = |x: f64| -> f64 {
        let da = sample_linear(ax, au, x);
        let db = sample_linear(bx, bu, x);
        (da - db).iter().map(|v| v.abs()).sum()
    };
    let mut total = 0.0;
    let mut prev = diff(nodes[0]);
    for w in nodes.windows(2) {
        let next = diff(w[1]);
        total += 0.5 * (prev + next) * (w[1] - w[0]);
        prev = next;
    }
    Ok(total)
}

/// Right edge of the comparison window `(max outgoing speed + margin)·T`.
pub fn comparison_window(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    numerics: &Numerics,
) -> Result<f64, ViscousError> {
    let (lam_pos, _, _) = segment_bounds(sys, u_0, u_d, numerics)?;
    Ok((lam_pos.max(0.0) + numerics.domain_margin) * numerics.t_final)
}

/// One ε of the two-regularisation comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub epsilon: f64,
    /// `‖U^ε(T,·) − Z^ε(T,·)‖_{L¹}` over the comparison window.
    pub d_uz: Option<f64>,
    /// Distance of the classical solution to the exact wave fan.
    pub d_ufan: Option<f64>,
    /// Distance of the self-similar solution to the exact wave fan.
    pub d_zfan: Option<f64>,
    /// Empirical order: log-ratio of successive `d_uz` against the
    /// log-ratio of viscosities.
    pub p_hat: Option<f64>,
    /// Failure description when a solver error marked this row.
    pub error: Option<String>,
}

/// The comparison table of [`compare_limits`].
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// Set when the exact fan itself could not be constructed (the
    /// `d_uz` column is still filled in that case).
    pub fan_error: Option<String>,
}

impl ComparisonTable {
    /// All rows solved and, where present, `d_uz` nonincreasing.
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_none())
    }

    /// Writes the table as CSV with header `eps,d_uz,d_ufan,d_zfan,p_hat,error`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "eps,d_uz,d_ufan,d_zfan,p_hat,error")?;
        for row in &self.rows {
            let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
            writeln!(
                out,
                "{:.16e},{},{},{},{},{}",
                row.epsilon,
                cell(row.d_uz),
                cell(row.d_ufan),
                cell(row.d_zfan),
                cell(row.p_hat),
                row.error.as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }
}

/// Runs both viscous approximations for every ε in the (decreasing)
/// list and measures, over the window `[0, (λ_max + margin)·T]`:
/// `d_uz` between the two, and `d_ufan`/`d_zfan` against the exact wave
/// fan.  Solver failures mark their row and the sweep continues; rows
/// are computed in parallel and merged in rank order.
pub fn compare_limits(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    eps_list: &[f64],
    numerics: &Numerics,
) -> Result<ComparisonTable, ViscousError> {
    if eps_list.is_empty() {
        return Err(bad("eps_list must not be empty"));
    }
    if eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(bad("every eps must be positive"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(bad("eps_list must be strictly decreasing"));
    }
    let t = numerics.t_final;
    let window = comparison_window(sys, u_0, u_d, numerics)?;
    let (fan, fan_error) = match riemann::solve_boundary_riemann(sys, u_0, u_d, numerics) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let fan_ref: Option<&WaveFan> = fan.as_ref();
    let mut rows: Vec<ComparisonRow> = eps_list
        .par_iter()
        .map(|&eps| {
            let run = || -> Result<(f64, Option<f64>, Option<f64>), ViscousError> {
                let config = SimConfig::suggest(sys, u_0, u_d, eps, numerics)?;
                let u = simulate_classical(sys, u_0, u_d, eps, &config, numerics)?;
                let z = simulate_selfsimilar(sys, u_0, u_d, eps, &config, numerics)?;
                let (ux, uu) = u.final_slice();
                let (zx, zu) = z.final_slice();
                let d_uz = l1_distance(&ux, &uu, &zx, &zu, (0.0, window))?;
                let against_fan = |xs: &[f64], us: &[DVector<f64>], f: &WaveFan| {
                    let fu: Vec<DVector<f64>> = xs.iter().map(|&x| f.evaluate(x / t)).collect();
                    l1_distance(xs, us, xs, &fu, (0.0, window))
                };
                let (d_ufan, d_zfan) = match fan_ref {
                    Some(f) => (
                        Some(against_fan(&ux, &uu, f)?),
                        Some(against_fan(&zx, &zu, f)?),
                    ),
                    None => (None, None),
                };
                Ok((d_uz, d_ufan, d_zfan))
            };
            match run() {
                Ok((d_uz, d_ufan, d_zfan)) => ComparisonRow {
                    epsilon: eps,
                    d_uz: Some(d_uz),
                    d_ufan,
                    d_zfan,
                    p_hat: None,
                    error: None,
                },
                Err(e) => ComparisonRow {
                    epsilon: eps,
                    d_uz: None,
                    d_ufan: None,
                    d_zfan: None,
                    p_hat: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    for k in 1..rows.len() {
        if let (Some(d0), Some(d1)) = (rows[k - 1].d_uz, rows[k].d_uz) {
            if d0 > 0.0 && d1 > 0.0 {
                rows[k].p_hat =
                    Some((d0 / d1).ln() / (eps_list[k - 1] / eps_list[k]).ln());
            }
        }
    }
    Ok(ComparisonTable { rows, fan_error })
}

// ---------------------------------------------------------------------------
// Viscosity dependence (trace gap) experiment
// ---------------------------------------------------------------------------

/// Result of [`viscosity_dependence_experiment`].
#[derive(Debug, Clone)]
pub struct BDependence {
    pub epsilon: f64,
    /// Sampling ray `ξ* = √ε`, just outside an `O(ε)`-wide layer.
    pub xi_star: f64,
    /// `V^ε(ξ*)` under the first viscosity.
    pub trace_1: DVector<f64>,
    /// `V^ε(ξ*)` under the second viscosity.
    pub trace_2: DVector<f64>,
    /// `‖trace_1 − trace_2‖_∞`.
    pub gap: f64,
    pub solution_1: GridSolution,
    pub solution_2: GridSolution,
}

/// Solves the self-similar problem under two viscosity matrices and
/// reports the trace estimates `V^ε(√ε)` together with their gap — the
/// boundary-layer mechanism through which the limit remembers `B`.
///
/// Both `(sys, B_i)` pairs must remain strictly hyperbolic with
/// invertible viscosity and matching stable/unstable eigenvalue counts
/// at the data; this is checked up front.
pub fn viscosity_dependence_experiment(
    sys: &HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    b_1: &DMatrix<f64>,
    b_2: &DMatrix<f64>,
    eps: f64,
    numerics: &Numerics,
) -> Result<BDependence, ViscousError> {
    check_data(sys, u_0, u_d, eps)?;
    let n = sys.n();
    let mut variants = Vec::with_capacity(2);
    for (tag, b) in [("b1", b_1), ("b2", b_2)] {
        if b.nrows() != n || b.ncols() != n {
            return Err(bad(format!("viscosity {tag} must be {n}x{n}")));
        }
        let bc = b.clone();
        let name = format!("{}+{}", sys.name(), tag);
        let variant = sys.with_viscosity(&name, move |_| bc.clone());
        let report = variant.check_hypotheses(numerics);
        if !report.hyperbolicity.pass || !report.viscosity_invertible.pass {
            return Err(bad(format!(
                "system with viscosity {tag} violates the structural hypotheses"
            )));
        }
        for u in [u_0, u_d] {
            let cmp = variant.eigen_signature_compare(u, numerics)?;
            if !cmp.matches() {
                return Err(bad(format!(
                    "viscosity {tag} changes the stable/unstable signature at a datum"
                )));
            }
        }
        variants.push(variant);
    }

    let run = |variant: &HyperbolicSystem| -> Result<GridSolution, ViscousError> {
        let config = SimConfig::suggest(variant, u_0, u_d, eps, numerics)?;
        simulate_selfsimilar(variant, u_0, u_d, eps, &config, numerics)
    };
    let (r1, r2) = rayon::join(|| run(&variants[0]), || run(&variants[1]));
    let (sol_1, sol_2) = (r1?, r2?);

    let xi_star = eps.sqrt();
    let trace_of = |sol: &GridSolution| -> DVector<f64> {
        match &sol.kind {
            SolutionKind::SelfSimilar { xi, v } => sample_linear(xi, v, xi_star),
            SolutionKind::TimeDependent { .. } => unreachable!("BVP output"),
        }
    };
    let trace_1 = trace_of(&sol_1);
    let trace_2 = trace_of(&sol_2);
    let gap = (&trace_1 - &trace_2).amax();
    Ok(BDependence {
        epsilon: eps,
        xi_star,
        trace_1,
        trace_2,
        gap,
        solution_1: sol_1,
        solution_2: sol_2,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
