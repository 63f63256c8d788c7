//! Numerical tolerances and discretisation controls.
//!
//! Every tolerance used by the solvers lives here with its default value, so
//! that a run configuration can override any of them in one place and tests
//! can state exactly which knob they exercise.  The individual fields are
//! documented with the operation they control.

use serde::{Deserialize, Serialize};

/// Tolerances and discretisation parameters shared by all modules.
///
/// Construct with [`Numerics::default`] and override fields as needed; the
/// struct is plain data and is cheap to clone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Minimal admissible eigenvalue gap for strict hyperbolicity.
    pub gap_min: f64,
    /// Real parts closer to zero than this make sign counts ill-defined.
    pub tol_eig: f64,
    /// Max residual of the entropy compatibility identity `Dη·DF = Dq`.
    pub tol_entropy: f64,
    /// Characteristic-speed threshold: fields with `|λ| < c_min` on the
    /// sampled region are candidates for the characteristic regime.
    pub c_min: f64,
    /// Finite-difference step for Jacobians of fluxes given without one.
    pub h_fd: f64,

    /// Envelope/profile contact classification threshold.
    pub tol_contact: f64,

    /// Rankine–Hugoniot residual tolerance (loci, extracted shocks).
    pub tol_rh: f64,
    /// Admissibility margin tolerance for shock speed comparisons.
    pub tol_liu: f64,
    /// Max eigenvalue variation along a curve still classified as a contact
    /// discontinuity.
    pub tol_ld: f64,
    /// Fixed-point (Picard) convergence tolerance for wave fan curves.
    pub tol_fp: f64,
    /// Iteration cap for the wave fan fixed point.
    pub max_iter_fp: usize,
    /// Grid resolution of wave fan curves, in nodes per unit of strength.
    pub nodes_per_unit: f64,
    /// Lower bound on the number of grid intervals of a wave fan curve.
    pub min_curve_nodes: usize,
    /// Default arclength step of Hugoniot continuation.
    pub ds_hugoniot: f64,
    /// Smallest continuation step before giving up.
    pub ds_min: f64,

    /// Residual tolerance for boundary layer profiles.
    pub tol_layer: f64,
    /// Required closeness to the equilibrium at the far end of a layer.
    pub tol_tail: f64,
    /// Radius of the seed sphere for backward shooting.
    pub eps_seed: f64,
    /// Newton iteration cap for shooting.
    pub max_iter_shoot: usize,
    /// Number of randomised shooting restarts before declaring failure.
    pub shoot_restarts: usize,
    /// Relative slack accepted between fitted and predicted decay rates.
    pub fit_slack: f64,

    /// Newton residual tolerance for the composed (boundary) Riemann solves.
    pub tol_newton: f64,
    /// Newton iteration cap for the composed solves.
    pub max_iter_newton: usize,
    /// Scale factor of finite-difference steps in composed-map Jacobians.
    pub fd_step: f64,
    /// Speeds with `|σ| ≤ zero_speed_tol` count as standing waves.
    pub zero_speed_tol: f64,
    /// Residual tolerance for rarefaction fan samples, `|λ_i(V(ξ)) − ξ|`.
    pub tol_fan: f64,
    /// Scaling constant applied to the characteristic-curve speed profile.
    /// The default construction has no speed feedback, so `1` is exact;
    /// the knob is kept for experiments with rescaled parameterizations.
    pub d_kappa: f64,
    /// Total-variation budget per unit of boundary data jump.
    pub tv_budget_factor: f64,
    /// Hard cap on data size for the nonlinear solvers.
    pub data_max: f64,

    /// CFL safety factor of the explicit time integrator.
    pub cfl: f64,
    /// Final time of classical simulations.
    pub t_final: f64,
    /// Extra speed margin when sizing spatial domains.
    pub domain_margin: f64,
    /// Initial viscosity of the self-similar continuation.
    pub continuation_eps0: f64,
    /// Interior grid points per unit viscosity-length `ε` in simulations.
    pub cells_per_eps: f64,
    /// Upper bound on spatial cells (guards the explicit scheme cost).
    pub max_cells: usize,

    /// Seed for all randomised utilities (restarts, sample draws).
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            gap_min: 1e-6,
            tol_eig: 1e-10,
            tol_entropy: 1e-8,
            c_min: 1e-3,
            h_fd: 1e-6,

            tol_contact: 1e-12,

            tol_rh: 1e-10,
            tol_liu: 1e-8,
            tol_ld: 1e-7,
            tol_fp: 1e-10,
            max_iter_fp: 500,
            nodes_per_unit: 400.0,
            min_curve_nodes: 60,
            ds_hugoniot: 2e-3,
            ds_min: 1e-7,

            tol_layer: 1e-7,
            tol_tail: 1e-6,
            eps_seed: 1e-4,
            max_iter_shoot: 50,
            shoot_restarts: 8,
            fit_slack: 0.2,

            tol_newton: 1e-11,
            max_iter_newton: 100,
            fd_step: 1e-6,
            zero_speed_tol: 1e-8,
            tol_fan: 1e-6,
            d_kappa: 1.0,
            tv_budget_factor: 10.0,
            data_max: 4.0,

            cfl: 0.4,
            t_final: 1.0,
            domain_margin: 0.2,
            continuation_eps0: 0.5,
            cells_per_eps: 6.0,
            max_cells: 20_000,

            seed: 0x5eed_b0a7,
        }
    }
}

impl Numerics {
    /// Validates positivity of every tolerance, returning the name of the
    /// first offending field.
    pub fn validate(&self) -> Result<(), String> {
        macro_rules! positive {
            ($($f:ident),+ $(,)?) => {
                $(if !(self.$f > 0.0) || !self.$f.is_finite() {
                    return Err(format!("numerics.{} must be > 0", stringify!($f)));
                })+
            };
        }
        positive!(
            gap_min, tol_eig, tol_entropy, c_min, h_fd, tol_contact, tol_rh, tol_liu, tol_ld,
            tol_fp, nodes_per_unit, ds_hugoniot, ds_min, tol_layer, tol_tail, eps_seed, fit_slack,
            tol_newton, fd_step, zero_speed_tol, tol_fan, d_kappa, tv_budget_factor, data_max,
            cfl, t_final, domain_margin, continuation_eps0, cells_per_eps,
        );
        macro_rules! at_least_one {
            ($($f:ident),+ $(,)?) => {
                $(if self.$f == 0 {
                    return Err(format!("numerics.{} must be >= 1", stringify!($f)));
                })+
            };
        }
        at_least_one!(max_iter_fp, min_curve_nodes, max_iter_shoot, max_iter_newton, max_cells);
        if self.cfl > 1.0 {
            return Err("numerics.cfl must be <= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Numerics::default().validate().unwrap();
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let mut n = Numerics::default();
        n.tol_rh = 0.0;
        let msg = n.validate().unwrap_err();
        assert!(msg.contains("tol_rh"), "message should name the field: {msg}");
    }

    #[test]
    fn rejects_zero_iteration_caps() {
        let mut n = Numerics::default();
        n.max_iter_newton = 0;
        assert!(n.validate().unwrap_err().contains("max_iter_newton"));
    }
}
