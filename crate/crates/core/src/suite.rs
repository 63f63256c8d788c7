//! The bundled verification battery.
//!
//! Ten desk-scale experiments, one per structural claim the library
//! makes: envelope construction, the scalar and linear closed forms, the
//! structural contract and uniqueness of the boundary Riemann solver,
//! the two-regularisation comparison, the eigenvalue signature lemma,
//! characteristic layer decay, viscosity dependence of the trace, and
//! wave-curve geometry.  Every experiment checks quantitative assertions
//! against independently derived oracles (closed forms, brute-force
//! scans, quadrature) and reports a one-line quantitative summary.
//!
//! [`run_all`] executes the battery in order; the `acceptance`
//! integration test and the CLI `suite` subcommand both drive it.  All
//! randomness is drawn from a counter-seeded generator, so a given seed
//! reproduces the battery bit for bit.

use std::time::Instant;

use nalgebra::{dvector, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envelope::{self, SampledFunction};
use crate::layers;
use crate::params::Numerics;
use crate::riemann::{self, WaveFan};
use crate::system::registry;
use crate::viscous;
use crate::waves;

/// Outcome of one battery experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    /// Position in the battery, 1-based.
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Wall-clock seconds.
    pub elapsed_s: f64,
    /// One-line quantitative summary; failure descriptions when red.
    pub detail: String,
}

impl Criterion {
    /// The `criterion N name: PASS/FAIL — detail` line.
    pub fn render(&self) -> String {
        format!(
            "criterion {:2} {:<28} {} [{:6.2} s] {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.elapsed_s,
            self.detail
        )
    }
}

/// Collects failures and the summary line for one experiment.
struct Recorder {
    id: usize,
    name: &'static str,
    start: Instant,
    failures: Vec<String>,
}

impl Recorder {
    fn new(id: usize, name: &'static str) -> Self {
        Self { id, name, start: Instant::now(), failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }

    fn fail(&mut self, msg: impl Into<String>) {
        self.failures.push(msg.into());
    }

    fn finish(self, summary: String) -> Criterion {
        let passed = self.failures.is_empty();
        Criterion {
            id: self.id,
            name: self.name,
            passed,
            elapsed_s: self.start.elapsed().as_secs_f64(),
            detail: if passed { summary } else { self.failures.join("; ") },
        }
    }
}

/// Runs the whole battery in order.
pub fn run_all(numerics: &Numerics) -> Vec<Criterion> {
    vec![
        envelope_battery(numerics),
        scalar_closed_forms(numerics),
        linear_closed_form(numerics),
        structural_contract(numerics),
        uniqueness_surrogate(numerics),
        regularisation_comparison(numerics),
        signature_lemma(numerics),
        layer_decay_rates(numerics),
        trace_viscosity_dependence(numerics),
        wave_curve_geometry(numerics),
    ]
}

// ---------------------------------------------------------------------------
// 1. Envelopes against the brute-force oracle
// ---------------------------------------------------------------------------

/// 200 random piecewise-linear functions (up to 100 nodes): the hull-scan
/// envelopes must match the cubic brute-force chord oracle node-wise
/// *exactly* (both sides evaluate the same minimal chords in the same
/// arithmetic), and the monotone envelope must equal its splice
/// characterisation exactly.
pub fn envelope_battery(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(1, "envelope oracle scan");
    let mut rng = ChaCha8Rng::seed_from_u64(numerics.seed);
    let cases = 200;
    let mut max_nodes = 0usize;
    for case in 0..cases {
        let n = rng.gen_range(2..=100);
        max_nodes = max_nodes.max(n);
        let mut x = -rng.gen_range(0.0..1.0);
        let mut grid = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            grid.push(x);
            values.push(rng.gen_range(-2.0..2.0));
            x += rng.gen_range(1e-3..1.0);
        }
        let f = match SampledFunction::new(grid, values) {
            Ok(f) => f,
            Err(e) => {
                rec.fail(format!("case {case}: bad sample: {e}"));
                continue;
            }
        };
        let conv = envelope::convex_envelope(&f, numerics.tol_contact);
        let conc = envelope::concave_envelope(&f, numerics.tol_contact);
        let mon = envelope::monotone_convex_envelope(&f, numerics.tol_contact);
        let oracle_conv = envelope::reference::convex_values(&f);
        let oracle_conc = envelope::reference::concave_values(&f);
        let oracle_mon = envelope::reference::monotone_convex_values(&f);
        rec.check(conv.values() == oracle_conv.as_slice(), || {
            format!("case {case}: convex envelope deviates from the chord oracle")
        });
        rec.check(conc.values() == oracle_conc.as_slice(), || {
            format!("case {case}: concave envelope deviates from the chord oracle")
        });
        rec.check(mon.values() == oracle_mon.as_slice(), || {
            format!("case {case}: monotone convex envelope deviates from the oracle")
        });
        // Splice identity: frozen at the splice node's envelope value to
        // the left, the plain convex envelope to the right.
        let Some(j0) = mon.splice_index() else {
            rec.fail(format!("case {case}: monotone envelope lost its splice node"));
            continue;
        };
        let spliced = (0..f.len())
            .all(|j| mon.value(j) == conv.value(j.max(j0)));
        rec.check(spliced, || {
            format!("case {case}: splice identity broken at node {j0}")
        });
    }
    rec.finish(format!("{cases} random functions (max {max_nodes} nodes), all node-wise exact"))
}

// ---------------------------------------------------------------------------
// 2. Scalar closed forms
// ---------------------------------------------------------------------------

/// Scalar oracles: the 1→0 shock at speed 1/2, the 0→1 rarefaction
/// `V(ξ) = ξ`, and the characteristic layer `−tanh(y/2)` shot for the
/// datum 0 over the equilibrium −1.
pub fn scalar_closed_forms(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(2, "scalar closed forms");
    let sys = registry::burgers();

    match riemann::solve_riemann(&sys, &dvector![1.0], &dvector![0.0], numerics) {
        Ok(fan) => {
            rec.check(fan.waves.len() == 1, || format!("shock fan has {} waves", fan.waves.len()));
            if let Some(w) = fan.waves.first() {
                rec.check((w.speed_lo - 0.5).abs() <= 1e-8, || {
                    format!("shock speed {} is not 1/2", w.speed_lo)
                });
            }
            let mut worst = 0.0_f64;
            for j in 0..=100 {
                let xi = -0.2 + 1.4 * j as f64 / 100.0;
                if (xi - 0.5).abs() < 0.02 {
                    continue; // skip the jump point itself
                }
                let exact = if xi < 0.5 { 1.0 } else { 0.0 };
                worst = worst.max((fan.evaluate(xi)[0] - exact).abs());
            }
            rec.check(worst <= 1e-8, || format!("shock evaluation error {worst:.3e}"));
        }
        Err(e) => rec.fail(format!("shock solve failed: {e}")),
    }

    match riemann::solve_riemann(&sys, &dvector![0.0], &dvector![1.0], numerics) {
        Ok(fan) => {
            let mut worst = 0.0_f64;
            for j in 0..=100 {
                let xi = 0.005 + 0.99 * j as f64 / 100.0;
                worst = worst.max((fan.evaluate(xi)[0] - xi).abs());
            }
            worst = worst.max((fan.evaluate(-0.1)[0]).abs());
            worst = worst.max((fan.evaluate(1.1)[0] - 1.0).abs());
            rec.check(worst <= 1e-8, || format!("rarefaction evaluation error {worst:.3e}"));
        }
        Err(e) => rec.fail(format!("rarefaction solve failed: {e}")),
    }

    match layers::characteristic_layer(&sys, &dvector![-1.0], &dvector![0.0], numerics) {
        Ok(prof) => {
            let worst = prof
                .ygrid
                .iter()
                .zip(&prof.w)
                .map(|(&y, w)| (w[0] - (-(y / 2.0).tanh())).abs())
                .fold(0.0_f64, f64::max);
            rec.check(worst <= 1e-6, || format!("layer deviates from -tanh(y/2) by {worst:.3e}"));
        }
        Err(e) => rec.fail(format!("layer shot failed: {e}")),
    }

    rec.finish("shock speed, rarefaction ramp, and tanh layer all inside tolerance".into())
}

// ---------------------------------------------------------------------------
// 3. Linear-system closed form
// ---------------------------------------------------------------------------

/// Boundary Riemann for `DF = diag(−1, 1)`, `B = I`, `U_0 = (1,2)`,
/// `U_D = (3,4)`: trace `(1,4)`, one speed-1 contact down to `(1,2)`,
/// layer `(1 + 2e^{−y}, 4)`.
pub fn linear_closed_form(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(3, "linear closed form");
    let sys = registry::linear2(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]))
        .expect("2x2 diagonal system is well-formed");
    let (u_0, u_d) = (dvector![1.0, 2.0], dvector![3.0, 4.0]);
    match riemann::solve_boundary_riemann(&sys, &u_0, &u_d, numerics) {
        Ok(fan) => {
            let trace_err = (&fan.trace - dvector![1.0, 4.0]).amax();
            rec.check(trace_err <= 1e-8, || format!("trace off by {trace_err:.3e}"));
            rec.check(fan.waves.len() == 1, || format!("{} waves, expected 1", fan.waves.len()));
            if let Some(w) = fan.waves.first() {
                let werr = (w.speed_lo - 1.0)
                    .abs()
                    .max((w.speed_hi - 1.0).abs())
                    .max((&w.right - &u_0).amax())
                    .max((&w.left - dvector![1.0, 4.0]).amax());
                rec.check(werr <= 1e-8, || format!("contact wave off by {werr:.3e}"));
            }
            match &fan.boundary_group {
                Some(group) => {
                    let worst = group
                        .layer
                        .ygrid
                        .iter()
                        .zip(&group.layer.w)
                        .map(|(&y, w)| {
                            (w[0] - (1.0 + 2.0 * (-y).exp()))
                                .abs()
                                .max((w[1] - 4.0).abs())
                        })
                        .fold(0.0_f64, f64::max);
                    rec.check(worst <= 1e-8, || {
                        format!("layer deviates from (1+2e^-y, 4) by {worst:.3e}")
                    });
                }
                None => rec.fail("no boundary group on a layered solution"),
            }
        }
        Err(e) => rec.fail(format!("solve failed: {e}")),
    }
    rec.finish("trace (1,4), speed-1 contact, and exponential layer all within 1e-8".into())
}

// ---------------------------------------------------------------------------
// 4 & 5. Random boundary problems: contract and uniqueness
// ---------------------------------------------------------------------------

/// The shared random problem set: 50 small-data p-system problems
/// (non-characteristic boundary) and 50 near-sonic Burgers problems
/// (characteristic boundary), drawn around fixed base states.
fn random_problems(
    numerics: &Numerics,
) -> Vec<(&'static str, crate::system::HyperbolicSystem, DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(numerics.seed ^ 0x9e37_79b9);
    let mut problems = Vec::with_capacity(100);
    let psys = registry::p_system(1.0, 2.0, 0.0).expect("p-system parameters are valid");
    let base = dvector![1.0, 0.2];
    for _ in 0..50 {
        let mut draw = || {
            DVector::from_fn(2, |_, _| rng.gen_range(-0.025..0.025))
        };
        let u_0 = &base + draw();
        let u_d = &base + draw();
        problems.push(("p-system", psys.clone(), u_0, u_d));
    }
    let burg = registry::burgers();
    for _ in 0..50 {
        let u_0 = dvector![rng.gen_range(-0.025..0.025)];
        let u_d = dvector![rng.gen_range(-0.025..0.025)];
        problems.push(("burgers", burg.clone(), u_0, u_d));
    }
    problems
}

/// Every random problem must solve and pass the full validation battery
/// (jump conditions at `tol_rh`, admissibility margins at `tol_liu`, fan
/// characteristic residuals at `tol_fan`, boundary flux balance, layer
/// contract).
pub fn structural_contract(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(4, "random-problem contract");
    let problems = random_problems(numerics);
    let total = problems.len();
    let mut worst_residual = 0.0_f64;
    for (idx, (tag, sys, u_0, u_d)) in problems.iter().enumerate() {
        match riemann::solve_boundary_riemann(sys, u_0, u_d, numerics) {
            Ok(fan) => {
                let report = riemann::validate_solution(sys, &fan, numerics);
                for check in &report.checks {
                    worst_residual = worst_residual.max(check.residual);
                    rec.check(check.passed, || {
                        format!(
                            "{tag} case {idx}: {} failed ({}, residual {:.3e})",
                            check.name, check.detail, check.residual
                        )
                    });
                }
            }
            Err(e) => rec.fail(format!("{tag} case {idx}: solve failed: {e}")),
        }
    }
    rec.finish(format!(
        "{total} random problems validated; worst check residual {worst_residual:.2e}"
    ))
}

/// Wave-by-wave distance between two fans; `Err` describes a structural
/// mismatch (different wave counts or kinds).
fn fan_distance(a: &WaveFan, b: &WaveFan, floor: f64) -> Result<f64, String> {
    let sieve = |fan: &WaveFan| -> Vec<riemann::Wave> {
        fan.waves.iter().filter(|w| w.strength > floor).cloned().collect()
    };
    let (wa, wb) = (sieve(a), sieve(b));
    if wa.len() != wb.len() {
        return Err(format!("wave counts differ: {} vs {}", wa.len(), wb.len()));
    }
    let mut d = (&a.trace - &b.trace).amax();
    for (x, y) in wa.iter().zip(&wb) {
        if x.family != y.family || x.kind != y.kind {
            return Err(format!(
                "wave mismatch: family {} {:?} vs family {} {:?}",
                x.family, x.kind, y.family, y.kind
            ));
        }
        d = d
            .max((x.speed_lo - y.speed_lo).abs())
            .max((x.speed_hi - y.speed_hi).abs())
            .max((&x.left - &y.left).amax())
            .max((&x.right - &y.right).amax())
            .max((x.strength - y.strength).abs());
    }
    if let (Some(ga), Some(gb)) = (&a.boundary_group, &b.boundary_group) {
        d = d.max((&ga.underline_u - &gb.underline_u).amax());
    }
    Ok(d)
}

/// Uniqueness surrogate: re-solving every random problem from an
/// independently drawn Newton initialisation must land on the same fan,
/// wave by wave, to 1e-8.
pub fn uniqueness_surrogate(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(5, "two-initialisation agreement");
    let problems = random_problems(numerics);
    let total = problems.len();
    let mut rng = ChaCha8Rng::seed_from_u64(numerics.seed ^ 0x51ed_2701);
    let mut worst = 0.0_f64;
    for (idx, (tag, sys, u_0, u_d)) in problems.iter().enumerate() {
        let init = DVector::from_fn(sys.n(), |_, _| rng.gen_range(-0.03..0.03));
        let default = riemann::solve_boundary_riemann(sys, u_0, u_d, numerics);
        let seeded = riemann::solve_boundary_riemann_from(sys, u_0, u_d, Some(&init), numerics);
        match (default, seeded) {
            (Ok(f1), Ok(f2)) => match fan_distance(&f1, &f2, 1e-9) {
                Ok(d) => {
                    worst = worst.max(d);
                    rec.check(d <= 1e-8, || {
                        format!("{tag} case {idx}: fans differ by {d:.3e}")
                    });
                }
                Err(msg) => rec.fail(format!("{tag} case {idx}: {msg}")),
            },
            (Err(e), _) => rec.fail(format!("{tag} case {idx}: default solve failed: {e}")),
            (_, Err(e)) => rec.fail(format!("{tag} case {idx}: seeded solve failed: {e}")),
        }
    }
    rec.finish(format!("{total} problems re-solved; worst wave-by-wave distance {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 6. Two-regularisation comparison
// ---------------------------------------------------------------------------

/// State at (signed) parameter `s` on a rarefaction curve, re-integrated
/// each call so the endpoint carries full integrator accuracy.
fn rarefaction_endpoint(
    sys: &crate::system::HyperbolicSystem,
    base: &DVector<f64>,
    family: usize,
    s: f64,
    numerics: &Numerics,
) -> Result<DVector<f64>, String> {
    if s == 0.0 {
        return Ok(base.clone());
    }
    waves::rarefaction_curve(sys, base, family, s, numerics)
        .map(|c| c.samples.last().expect("curve has samples").1.clone())
        .map_err(|e| e.to_string())
}

/// Runs [`viscous::compare_limits`] for one datum pair and applies the
/// shrinkage assertions: `d_uz` strictly decreasing, at-least-geometric
/// decay from ε = 0.04 to 0.02, and smallness against the fan distances.
fn comparison_assertions(
    rec: &mut Recorder,
    tag: &str,
    sys: &crate::system::HyperbolicSystem,
    u_0: &DVector<f64>,
    u_d: &DVector<f64>,
    numerics: &Numerics,
) -> Option<[f64; 3]> {
    let eps = [0.08, 0.04, 0.02];
    let table = match viscous::compare_limits(sys, u_0, u_d, &eps, numerics) {
        Ok(t) => t,
        Err(e) => {
            rec.fail(format!("{tag}: comparison failed: {e}"));
            return None;
        }
    };
    if let Some(fe) = &table.fan_error {
        rec.fail(format!("{tag}: exact fan unavailable: {fe}"));
        return None;
    }
    let mut d = [0.0_f64; 3];
    for (k, row) in table.rows.iter().enumerate() {
        match (&row.error, row.d_uz) {
            (None, Some(v)) => d[k] = v,
            _ => {
                let msg = row.error.clone().unwrap_or_else(|| "missing distance".into());
                rec.fail(format!("{tag}: eps = {} failed: {msg}", row.epsilon));
                return None;
            }
        }
    }
    rec.check(d[1] < d[0] && d[2] < d[1], || {
        format!("{tag}: d_uz not strictly decreasing: {d:?}")
    });
    rec.check(d[2] <= 0.7 * d[1], || {
        format!("{tag}: d_uz(0.02)/d_uz(0.04) = {:.3} exceeds 0.7", d[2] / d[1])
    });
    let fan_scale = table.rows[2]
        .d_ufan
        .unwrap_or(0.0)
        .max(table.rows[2].d_zfan.unwrap_or(0.0));
    rec.check(d[2] <= 3.0 * fan_scale, || {
        format!(
            "{tag}: d_uz(0.02) = {:.3e} exceeds 3x the fan distance {:.3e}",
            d[2], fan_scale
        )
    });
    Some(d)
}

/// Both viscous approximations approach one another (and the exact fan)
/// as ε shrinks, on a linear and a p-system pure-layer datum with
/// `|U_0 − U_D| = 0.05`.
pub fn regularisation_comparison(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(6, "two-regularisation limit");

    // Linear system, datum gap along the incoming field: the limit is a
    // pure boundary layer.
    let lin = registry::linear2(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]))
        .expect("2x2 diagonal system is well-formed");
    let d_lin = comparison_assertions(
        &mut rec,
        "linear",
        &lin,
        &dvector![1.0, 2.0],
        &dvector![1.05, 2.0],
        numerics,
    );

    // p-system, datum on the stable layer manifold of the far state: the
    // limit is again a pure layer.  (A datum with an outgoing-wave
    // component keeps the two regularisations a multiple of √ε apart over
    // this ε range: the time-dependent solution smooths over √(2εt) while
    // the self-similar one smooths over √(εt), so only the layer scale
    // contracts geometrically.)  The manifold coordinate is polished so
    // the datum chord has Euclidean length exactly 0.05.
    let psys = registry::p_system(1.0, 2.0, 0.0).expect("p-system parameters are valid");
    let u_0 = dvector![1.0, 0.0];
    let mut d_psys = None;
    let chord = |c: f64| -> Result<f64, String> {
        layers::layer_map_phi(&psys, &u_0, &[c], numerics)
            .map(|w| (w - &u_0).norm())
            .map_err(|e| e.to_string())
    };
    let mut c_lo = 0.0;
    let mut c_hi = 0.08;
    let polished = (|| -> Result<f64, String> {
        for _ in 0..60 {
            let mid = 0.5 * (c_lo + c_hi);
            if chord(mid)? < 0.05 {
                c_lo = mid;
            } else {
                c_hi = mid;
            }
        }
        Ok(0.5 * (c_lo + c_hi))
    })();
    match polished {
        Ok(c) => match layers::layer_map_phi(&psys, &u_0, &[c], numerics) {
            Ok(u_d) => {
                let len = (&u_d - &u_0).norm();
                rec.check((len - 0.05).abs() <= 1e-9, || {
                    format!("p-system datum chord {len:.12} is not 0.05")
                });
                d_psys = comparison_assertions(&mut rec, "p-system", &psys, &u_0, &u_d, numerics);
            }
            Err(e) => rec.fail(format!("p-system datum construction failed: {e}")),
        },
        Err(e) => rec.fail(format!("p-system datum polish failed: {e}")),
    }

    let fmt = |d: Option<[f64; 3]>| {
        d.map_or("n/a".into(), |v| {
            format!("{:.2e}/{:.2e}/{:.2e}", v[0], v[1], v[2])
        })
    };
    rec.finish(format!(
        "d_uz over eps 0.08/0.04/0.02: linear {}, p-system {}",
        fmt(d_lin),
        fmt(d_psys)
    ))
}

// ---------------------------------------------------------------------------
// 7. Eigenvalue signature lemma
// ---------------------------------------------------------------------------

/// 1000 random (state, viscosity) draws across the bundled systems:
/// whenever `B` is invertible and both spectra stay away from the
/// imaginary axis (the structural hypotheses), the stable/unstable
/// counts of `DF` and `B⁻¹DF` agree.  Draws violating the hypotheses are
/// rejected and redrawn, mirroring the lemma's preconditions.
pub fn signature_lemma(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(7, "signature count equality");
    let mut rng = ChaCha8Rng::seed_from_u64(numerics.seed ^ 0x00c0_ffee);
    let systems = [
        registry::burgers(),
        registry::cubic(),
        registry::linear2(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]))
            .expect("2x2 diagonal system is well-formed"),
        registry::p_system(1.0, 2.0, 0.0).expect("p-system parameters are valid"),
    ];
    let per_system = 250usize;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    for sys in &systems {
        let n = sys.n();
        let (lo, hi) = (sys.region().lo().clone(), sys.region().hi().clone());
        let mut done = 0usize;
        let mut attempts = 0usize;
        while done < per_system {
            attempts += 1;
            if attempts > 50 * per_system {
                rec.fail(format!("{}: rejection sampling stalled", sys.name()));
                break;
            }
            let u = DVector::from_fn(n, |k, _| rng.gen_range(lo[k]..hi[k]));
            let b = DMatrix::from_fn(n, n, |i, j| {
                (if i == j { 1.0 } else { 0.0 }) + 0.4 * rng.gen_range(-1.0..1.0)
            });
            let bc = b.clone();
            let variant = sys.with_viscosity("draw", move |_| bc.clone());
            match variant.eigen_signature_compare(&u, numerics) {
                Ok(cmp) => {
                    done += 1;
                    accepted += 1;
                    rec.check(cmp.matches(), || {
                        format!(
                            "{} at {:?}: counts {:?} vs {:?}",
                            sys.name(),
                            u.as_slice(),
                            cmp.flux,
                            cmp.viscous
                        )
                    });
                }
                Err(_) => rejected += 1,
            }
        }
    }
    rec.finish(format!(
        "{accepted} draws matched stable/unstable counts ({rejected} rejected by the hypotheses)"
    ))
}

// ---------------------------------------------------------------------------
// 8. Characteristic layer decay
// ---------------------------------------------------------------------------

/// Characteristic layers of the sonic-shifted p-system over datum sizes
/// δ ∈ {0.02, 0.04, 0.08}: the fitted stable rate must stay above
/// `0.8·(c/2)` with `c = 2√2` the spectral gap, and the interaction
/// remainder `max‖U_p‖` must scale quadratically in δ (log-log slope in
/// `[1.7, 2.3]`).
pub fn layer_decay_rates(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(8, "characteristic layer decay");
    let shift = -(2.0_f64).sqrt();
    let sys = registry::p_system(1.0, 2.0, shift).expect("p-system parameters are valid");
    let eq = dvector![1.0, 0.5];
    // Centre direction at the sonic state, on the convergent side.
    let r_c = dvector![1.0, -(2.0_f64).sqrt()] / (3.0_f64).sqrt();
    let c_gap = 2.0 * (2.0_f64).sqrt();
    let deltas = [0.02, 0.04, 0.08];
    let mut peaks = Vec::with_capacity(deltas.len());
    let mut rates = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let w0 = &eq + &r_c * delta;
        let dec = layers::characteristic_layer(&sys, &eq, &w0, numerics)
            .map_err(|e| e.to_string())
            .and_then(|prof| {
                layers::decompose_layer(&sys, &prof, &eq, 1, numerics).map_err(|e| e.to_string())
            });
        match dec {
            Ok(dec) => {
                let (_, _, up) = dec.max_norms();
                peaks.push(up);
                rates.push(dec.fitted_rates.0);
                rec.check(dec.fitted_rates.0 >= 0.8 * (c_gap / 2.0), || {
                    format!(
                        "delta = {delta}: stable rate {:.3} below 0.8 c/2 = {:.3}",
                        dec.fitted_rates.0,
                        0.8 * (c_gap / 2.0)
                    )
                });
            }
            Err(e) => rec.fail(format!("delta = {delta}: {e}")),
        }
    }
    let mut slope = f64::NAN;
    if peaks.len() == deltas.len() && peaks.iter().all(|&p| p > 0.0) {
        slope = log_log_slope(&deltas, &peaks);
        rec.check((1.7..=2.3).contains(&slope), || {
            format!("remainder slope {slope:.3} outside [1.7, 2.3] (peaks {peaks:?})")
        });
    } else if peaks.len() == deltas.len() {
        rec.fail(format!("degenerate remainder peaks {peaks:?}"));
    }
    rec.finish(format!(
        "stable rates {:?} (floor {:.3}), remainder slope {slope:.2}",
        rates.iter().map(|r| (r * 1e3).round() / 1e3).collect::<Vec<_>>(),
        0.8 * (c_gap / 2.0)
    ))
}

/// Least-squares slope of `ln y` against `ln x`.
fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

// ---------------------------------------------------------------------------
// 9. Viscosity dependence of the trace
// ---------------------------------------------------------------------------

/// The Gisclon–Serre mechanism on the 2×2 linear system: a mixing
/// viscosity tilts the stable subspace and moves the trace by O(1),
/// while identical viscosities agree exactly and the scalar trace gap
/// vanishes with ε.
pub fn trace_viscosity_dependence(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(9, "viscosity-dependent trace");
    let sys = registry::linear2(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]))
        .expect("2x2 diagonal system is well-formed");
    let (u_0, u_d) = (dvector![1.0, 2.0], dvector![3.0, 4.0]);
    let id = DMatrix::identity(2, 2);
    let mix = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let eps = 0.02;

    let mut gap_mix = f64::NAN;
    let mut gap_control = f64::NAN;
    match viscous::viscosity_dependence_experiment(&sys, &u_0, &u_d, &id, &id, eps, numerics) {
        Ok(out) => gap_control = out.gap,
        Err(e) => rec.fail(format!("control experiment failed: {e}")),
    }
    match viscous::viscosity_dependence_experiment(&sys, &u_0, &u_d, &id, &mix, eps, numerics) {
        Ok(out) => gap_mix = out.gap,
        Err(e) => rec.fail(format!("mixing experiment failed: {e}")),
    }
    if gap_mix.is_finite() && gap_control.is_finite() {
        rec.check(gap_control <= 0.03, || {
            format!("control gap {gap_control:.3e} is not small")
        });
        rec.check(gap_mix >= 10.0 * gap_control, || {
            format!("mixing gap {gap_mix:.3e} not 10x the control gap {gap_control:.3e}")
        });
        rec.check(gap_mix >= 0.3, || {
            format!("mixing gap {gap_mix:.3e} below the O(1) prediction")
        });
    }

    // Scalar control: Burgers traces forget the viscosity as ε → 0.
    let burg = registry::burgers();
    let b1 = DMatrix::from_vec(1, 1, vec![1.0]);
    let b2 = DMatrix::from_vec(1, 1, vec![2.0]);
    let mut scalar_gaps = Vec::new();
    for e in [0.08, 0.04, 0.02] {
        match viscous::viscosity_dependence_experiment(
            &burg,
            &dvector![-1.0],
            &dvector![-0.8],
            &b1,
            &b2,
            e,
            numerics,
        ) {
            Ok(out) => scalar_gaps.push(out.gap),
            Err(err) => rec.fail(format!("scalar experiment at eps = {e} failed: {err}")),
        }
    }
    if scalar_gaps.len() == 3 {
        rec.check(scalar_gaps[1] < scalar_gaps[0] && scalar_gaps[2] < scalar_gaps[1], || {
            format!("scalar gaps not decreasing: {scalar_gaps:?}")
        });
        rec.check(scalar_gaps[2] <= 0.02, || {
            format!("scalar gap {:.3e} too large at eps = 0.02", scalar_gaps[2])
        });
    }
    rec.finish(format!(
        "mixing gap {gap_mix:.3} vs control {gap_control:.1e}; scalar gaps {:?}",
        scalar_gaps.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>()
    ))
}

// ---------------------------------------------------------------------------
// 10. Wave-curve geometry
// ---------------------------------------------------------------------------

/// Hugoniot state at the given first component, found by a secant
/// iteration in the locus parameter.
fn hugoniot_at_v(
    locus: &waves::HugoniotLocus,
    v_target: f64,
    s_guess: f64,
) -> Option<DVector<f64>> {
    let mut s0 = s_guess * 0.8;
    let mut s1 = s_guess;
    let g = |s: f64| locus.state_at(s)[0] - v_target;
    let mut g0 = g(s0);
    let mut g1 = g(s1);
    for _ in 0..60 {
        if g1.abs() <= 1e-13 {
            return Some(locus.state_at(s1));
        }
        let denom = g1 - g0;
        if denom.abs() < 1e-300 {
            return None;
        }
        let s2 = s1 - g1 * (s1 - s0) / denom;
        s0 = s1;
        g0 = g1;
        s1 = s2;
        g1 = g(s1);
    }
    None
}

/// Rarefaction state at the given first component by a secant iteration
/// in the curve parameter, re-integrating each trial.
fn rarefaction_at_v(
    sys: &crate::system::HyperbolicSystem,
    base: &DVector<f64>,
    family: usize,
    v_target: f64,
    s_guess: f64,
    numerics: &Numerics,
) -> Option<DVector<f64>> {
    let g = |s: f64| -> Option<f64> {
        rarefaction_endpoint(sys, base, family, s, numerics)
            .ok()
            .map(|u| u[0] - v_target)
    };
    let mut s0 = s_guess * 0.8;
    let mut s1 = s_guess;
    let mut g0 = g(s0)?;
    let mut g1 = g(s1)?;
    for _ in 0..60 {
        if g1.abs() <= 1e-13 {
            return rarefaction_endpoint(sys, base, family, s1, numerics).ok();
        }
        let denom = g1 - g0;
        if denom.abs() < 1e-300 {
            return None;
        }
        let s2 = s1 - g1 * (s1 - s0) / denom;
        s0 = s1;
        g0 = g1;
        s1 = s2;
        g1 = g(s1)?;
    }
    None
}

/// Third-order tangency of Hugoniot loci and rarefaction curves on the
/// p-system (log-log regression slope of the gap against the offset in
/// `[2.6, 3.4]`), plus monotone speed profiles, in the order the waves
/// enter the fan, on every produced wave-fan curve.
pub fn wave_curve_geometry(numerics: &Numerics) -> Criterion {
    let mut rec = Recorder::new(10, "wave-curve geometry");
    let sys = registry::p_system(1.0, 2.0, 0.0).expect("p-system parameters are valid");
    let base = dvector![1.0, 0.5];
    let mut fine = numerics.clone();
    fine.ds_hugoniot = 5e-4;

    // Offsets in the first component; the secant iterations land on each
    // family's v-decreasing side on their own (s < 0 for family 0, s > 0
    // for family 1).  The largest offset needs |s| ≈ 0.5 on both curves.
    let offsets = [0.03, 0.0457, 0.0696, 0.106, 0.1614, 0.2459];
    let mut slopes = Vec::new();
    for family in [0usize, 1] {
        match waves::hugoniot_locus(&sys, &base, family, 0.55, fine.ds_hugoniot, &fine) {
            Ok(locus) => {
                let mut gaps = Vec::with_capacity(offsets.len());
                for &off in &offsets {
                    let v_target = base[0] - off;
                    let h = hugoniot_at_v(&locus, v_target, off);
                    let r = rarefaction_at_v(&sys, &base, family, v_target, off, &fine);
                    match (h, r) {
                        (Some(hu), Some(ru)) => gaps.push((hu[1] - ru[1]).abs()),
                        _ => rec.fail(format!(
                            "family {family}: curve inversion failed at offset {off}"
                        )),
                    }
                }
                if gaps.len() == offsets.len() && gaps.iter().all(|&g| g > 1e-13) {
                    let slope = log_log_slope(&offsets, &gaps);
                    slopes.push(slope);
                    rec.check((2.6..=3.4).contains(&slope), || {
                        format!("family {family}: contact-order slope {slope:.3} (gaps {gaps:?})")
                    });
                } else if gaps.len() == offsets.len() {
                    rec.fail(format!("family {family}: gaps at noise floor: {gaps:?}"));
                }
            }
            Err(e) => rec.fail(format!("family {family}: locus failed: {e}")),
        }
    }

    // Speed monotonicity on every produced curve.  The curve base is the
    // state ahead of the whole group, so reading the profile in fan
    // order means reversing it on the s > 0 side.
    let mut curves = 0usize;
    let mut check_curve = |sys: &crate::system::HyperbolicSystem,
                           base: &DVector<f64>,
                           family: usize,
                           s: f64,
                           rec: &mut Recorder| {
        match waves::wave_fan_curve(sys, base, family, s, numerics) {
            Ok(res) => {
                curves += 1;
                let sig = &res.profile.sigma;
                let ordered: Vec<f64> = if s > 0.0 {
                    sig.iter().rev().copied().collect()
                } else {
                    sig.clone()
                };
                rec.check(ordered.windows(2).all(|w| w[1] >= w[0] - 1e-12), || {
                    format!(
                        "{} family {family} s = {s}: speed profile not monotone in fan order",
                        sys.name()
                    )
                });
                for pair in res.waves.windows(2) {
                    rec.check(pair[0].speed_hi <= pair[1].speed_lo + 1e-10, || {
                        format!(
                            "{} family {family} s = {s}: waves out of order ({:.4} > {:.4})",
                            sys.name(),
                            pair[0].speed_hi,
                            pair[1].speed_lo
                        )
                    });
                }
            }
            Err(e) => rec.fail(format!("{} family {family} s = {s}: {e}", sys.name())),
        }
    };
    for family in [0usize, 1] {
        for s in [0.3, -0.3, 0.12, -0.12] {
            check_curve(&sys, &base, family, s, &mut rec);
        }
    }
    let burg = registry::burgers();
    for s in [1.0, -1.0] {
        check_curve(&burg, &dvector![0.0], 0, s, &mut rec);
    }
    let cubic = registry::cubic();
    for (b, s) in [(0.8, -1.4), (-0.8, 1.4)] {
        check_curve(&cubic, &dvector![b], 0, s, &mut rec);
    }
    rec.finish(format!(
        "contact slopes {:?}; {curves} curves speed-monotone",
        slopes.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()
    ))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_log_slope_recovers_a_power_law() {
        let x = [0.02, 0.04, 0.08];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!((log_log_slope(&x, &y) - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn recorder_reports_failures_verbatim() {
        let mut rec = Recorder::new(99, "probe");
        rec.check(true, || "unused".into());
        rec.check(false, || "broken invariant".into());
        let crit = rec.finish("ok".into());
        assert!(!crit.passed);
        assert_eq!(crit.detail, "broken invariant");
        assert!(crit.render().contains("FAIL"));
    }

    #[test]
    fn criterion_render_is_single_line() {
        let crit = Criterion {
            id: 3,
            name: "linear closed form",
            passed: true,
            elapsed_s: 0.125,
            detail: "trace (1,4)".into(),
        };
        let line = crit.render();
        assert!(line.contains("PASS") && !line.contains('\n'));
    }
}
