//! Problem dispatch: one runner per problem kind, a shared summary
//! document, and deterministic artifact files.
//!
//! Every invocation writes `effective-config.toml` (the fully resolved
//! configuration) and `summary.json` (schema 1: validations, metrics,
//! artifact names, and the error when a solver failed) into the output
//! directory.  Artifact files carry only run data — no timestamps or
//! host details — so identical configurations produce bit-identical
//! output trees.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use brk_core::layers::BoundaryLayerProfile;
use brk_core::riemann::{self, WaveFan};
use brk_core::suite;
use brk_core::viscous::{self, GridSolution, SimConfig};
use serde_json::json;

use crate::config::{matrix_from_rows, ProblemKind, RunConfig};

/// Failures inside a runner.  I/O problems abort the invocation; solver
/// problems still produce a summary document with the error recorded.
#[derive(Debug)]
pub enum RunnerError {
    Io(std::io::Error),
    Solver { message: String, debug: String },
}

impl From<std::io::Error> for RunnerError {
    fn from(e: std::io::Error) -> Self {
        RunnerError::Io(e)
    }
}

fn solver<E: std::fmt::Debug + std::fmt::Display>(e: E) -> RunnerError {
    RunnerError::Solver { message: e.to_string(), debug: format!("{e:?}") }
}

/// What a runner hands back for the summary document.
#[derive(Default)]
struct Parts {
    /// One entry per validation check, shaped like
    /// `{"name", "passed", "residual", "detail"}`.
    validations: Vec<serde_json::Value>,
    /// Command-specific scalar results.
    metrics: serde_json::Map<String, serde_json::Value>,
    /// File names written next to the summary.
    artifacts: Vec<String>,
}

impl Parts {
    fn artifact(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    fn metric(&mut self, key: &str, value: serde_json::Value) {
        self.metrics.insert(key.to_string(), value);
    }

    fn check(&mut self, name: &str, passed: bool, residual: f64, detail: String) {
        self.validations.push(json!({
            "name": name,
            "passed": passed,
            "residual": residual,
            "detail": detail,
        }));
    }
}

/// Runs the configured problem and writes all output files.  Returns the
/// process exit code: `0` iff every validation passed and no solver
/// error occurred.
pub fn execute(config: &RunConfig) -> std::io::Result<i32> {
    let kind = config.problem.kind.expect("the configuration was validated");
    let dir = config.output_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("effective-config.toml"), config.to_toml())?;

    let outcome = match kind {
        ProblemKind::Riemann => run_riemann(config, &dir),
        ProblemKind::BoundaryRiemann => run_boundary(config, &dir, true),
        ProblemKind::Validate => run_boundary(config, &dir, false),
        ProblemKind::ClassicalSim => run_sim(config, &dir, true),
        ProblemKind::SelfsimilarSim => run_sim(config, &dir, false),
        ProblemKind::CompareLimits => run_compare(config, &dir),
        ProblemKind::BDependence => run_b_dependence(config, &dir),
        ProblemKind::Suite => run_suite(config, &dir),
    };
    let (parts, error) = match outcome {
        Ok(parts) => (parts, None),
        Err(RunnerError::Io(e)) => return Err(e),
        Err(RunnerError::Solver { message, debug }) => (Parts::default(), Some((message, debug))),
    };

    let checks_passed = parts
        .validations
        .iter()
        .filter(|v| v["passed"].as_bool() == Some(true))
        .count();
    let passed = error.is_none() && checks_passed == parts.validations.len();
    let summary = json!({
        "schema": 1,
        "command": kind.to_string(),
        "system": config.system.as_ref().map(|s| s.name.clone()),
        "passed": passed,
        "validations": parts.validations,
        "metrics": parts.metrics,
        "artifacts": parts.artifacts,
        "error": error.as_ref().map(|(m, _)| m.clone()),
        "error_debug": error.as_ref().map(|(_, d)| d.clone()),
    });
    let summary_path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary).expect("summaries serialise");
    text.push('\n');
    fs::write(&summary_path, text)?;

    if let Some((message, _)) = &error {
        eprintln!("error: {message}");
    }
    println!(
        "{}: {}/{} validation checks passed — {}",
        if passed { "ok" } else { "FAILED" },
        checks_passed,
        summary.get("validations").and_then(|v| v.as_array()).map_or(0, Vec::len),
        summary_path.display()
    );
    Ok(i32::from(!passed))
}

fn vec_of(v: &nalgebra::DVector<f64>) -> serde_json::Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

/// ξ span covering every wave, padded by half a unit on each side.
fn fan_span(fan: &WaveFan, quarter_plane: bool) -> (f64, f64) {
    let lo = fan.waves.first().map_or(0.0, |w| w.speed_lo) - 0.5;
    let hi = fan.waves.last().map_or(0.0, |w| w.speed_hi) + 0.5;
    (if quarter_plane { 0.0 } else { lo }, hi)
}

fn write_fan_artifacts(
    config: &RunConfig,
    dir: &Path,
    parts: &mut Parts,
    fan: &WaveFan,
    report: &riemann::ValidationReport,
    quarter_plane: bool,
) -> Result<(), RunnerError> {
    if config.wants("json") {
        let doc = fan.to_json(Some(report));
        let mut text = serde_json::to_string_pretty(&doc).expect("fans serialise");
        text.push('\n');
        fs::write(dir.join("fan.json"), text)?;
        parts.artifact("fan.json");
    }
    if config.wants("csv") {
        let (lo, hi) = fan_span(fan, quarter_plane);
        let mut out = BufWriter::new(File::create(dir.join("solution.csv"))?);
        fan.write_samples_csv(lo, hi, 801, &mut out)?;
        out.flush()?;
        parts.artifact("solution.csv");
        if let Some(group) = &fan.boundary_group {
            let mut out = BufWriter::new(File::create(dir.join("layer.csv"))?);
            write_layer_csv(&group.layer, &mut out)?;
            out.flush()?;
            parts.artifact("layer.csv");
        }
    }
    Ok(())
}

fn write_layer_csv<W: Write>(layer: &BoundaryLayerProfile, out: &mut W) -> std::io::Result<()> {
    let n = layer.equilibrium.len();
    write!(out, "y")?;
    for j in 0..n {
        write!(out, ",w{}", j + 1)?;
    }
    writeln!(out)?;
    for (y, w) in layer.ygrid.iter().zip(&layer.w) {
        write!(out, "{y:.16e}")?;
        for c in w.iter() {
            write!(out, ",{c:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn fan_parts(fan: &WaveFan, report: &riemann::ValidationReport, parts: &mut Parts) {
    for check in &report.checks {
        parts
            .validations
            .push(serde_json::to_value(check).expect("checks serialise"));
    }
    parts.metric("trace", vec_of(&fan.trace));
    parts.metric("total_variation", json!(fan.total_variation));
    parts.metric("wave_count", json!(fan.waves.len()));
    if let Some(group) = &fan.boundary_group {
        parts.metric("layer_decay_rate", json!(group.layer.decay_rate));
        parts.metric("layer_residual", json!(group.layer.residual));
        parts.metric("standing_jumps", json!(group.zero_speed_waves.len()));
    }
}

fn run_riemann(config: &RunConfig, dir: &Path) -> Result<Parts, RunnerError> {
    let sys = config.build_system().expect("the configuration was validated");
    let u_minus = config.state("u_minus");
    let u_plus = config.state("u_plus");
    let fan =
        riemann::solve_riemann(&sys, &u_minus, &u_plus, &config.numerics).map_err(solver)?;
    let report = riemann::validate_solution(&sys, &fan, &config.numerics);
    let mut parts = Parts::default();
    write_fan_artifacts(config, dir, &mut parts, &fan, &report, false)?;
    fan_parts(&fan, &report, &mut parts);
    Ok(parts)
}

/// `boundary-riemann` (with artifacts) and `validate` (report only).
fn run_boundary(config: &RunConfig, dir: &Path, artifacts: bool) -> Result<Parts, RunnerError> {
    let sys = config.build_system().expect("the configuration was validated");
    let u_0 = config.state("u_0");
    let u_d = config.state("u_d");
    let fan =
        riemann::solve_boundary_riemann(&sys, &u_0, &u_d, &config.numerics).map_err(solver)?;
    let report = riemann::validate_solution(&sys, &fan, &config.numerics);
    let mut parts = Parts::default();
    if artifacts {
        write_fan_artifacts(config, dir, &mut parts, &fan, &report, true)?;
    }
    fan_parts(&fan, &report, &mut parts);
    Ok(parts)
}

fn run_sim(config: &RunConfig, dir: &Path, classical: bool) -> Result<Parts, RunnerError> {
    let sys = config.build_system().expect("the configuration was validated");
    let u_0 = config.state("u_0");
    let u_d = config.state("u_d");
    let eps = config.problem.epsilon.expect("the configuration was validated");
    let sim =
        SimConfig::suggest(&sys, &u_0, &u_d, eps, &config.numerics).map_err(solver)?;
    let solution = if classical {
        viscous::simulate_classical(&sys, &u_0, &u_d, eps, &sim, &config.numerics)
    } else {
        viscous::simulate_selfsimilar(&sys, &u_0, &u_d, eps, &sim, &config.numerics)
    }
    .map_err(solver)?;

    let mut parts = Parts::default();
    if config.wants("csv") {
        write_solution_csv(dir, &solution, if classical { None } else { Some("profile") }, &mut parts)?;
        if let Some(entropy) = &solution.entropy {
            let mut out = BufWriter::new(File::create(dir.join("entropy.csv"))?);
            writeln!(out, "t,balance")?;
            for (t, b) in entropy.t.iter().zip(&entropy.balance) {
                writeln!(out, "{t:.16e},{b:.16e}")?;
            }
            out.flush()?;
            parts.artifact("entropy.csv");
        }
    }
    if config.wants("json") {
        let doc = json!({
            "schema": 1,
            "epsilon": solution.epsilon,
            "config": solution.config,
            "times": solution.times(),
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("run documents serialise");
        text.push('\n');
        fs::write(dir.join("run.json"), text)?;
        parts.artifact("run.json");
    }
    parts.check(
        "solver_invariants",
        true,
        0.0,
        "finiteness, domain escape, and the total-variation budget are enforced during integration"
            .into(),
    );
    parts.metric("epsilon", json!(eps));
    parts.metric("cells", json!(solution.config.cells()));
    parts.metric("dt", json!(solution.config.dt));
    if let Some(entropy) = &solution.entropy {
        parts.metric("entropy_max_rise", json!(entropy.max_rise()));
    }
    Ok(parts)
}

/// Writes the saved slices of one grid solution.  Time-dependent runs
/// produce `slice_00.csv`, `slice_01.csv`, …; self-similar runs produce
/// a single file named by `single`.
fn write_solution_csv(
    dir: &Path,
    solution: &GridSolution,
    single: Option<&str>,
    parts: &mut Parts,
) -> Result<(), RunnerError> {
    match single {
        Some(stem) => {
            let name = format!("{stem}.csv");
            let mut out = BufWriter::new(File::create(dir.join(&name))?);
            solution.write_slice_csv(0, &mut out)?;
            out.flush()?;
            parts.artifact(&name);
        }
        None => {
            for slice in 0..solution.times().len() {
                let name = format!("slice_{slice:02}.csv");
                let mut out = BufWriter::new(File::create(dir.join(&name))?);
                solution.write_slice_csv(slice, &mut out)?;
                out.flush()?;
                parts.artifact(&name);
            }
        }
    }
    Ok(())
}

fn run_compare(config: &RunConfig, dir: &Path) -> Result<Parts, RunnerError> {
    let sys = config.build_system().expect("the configuration was validated");
    let u_0 = config.state("u_0");
    let u_d = config.state("u_d");
    let eps_list = config
        .problem
        .eps_list
        .clone()
        .expect("the configuration was validated");
    let table = viscous::compare_limits(&sys, &u_0, &u_d, &eps_list, &config.numerics)
        .map_err(solver)?;

    let mut parts = Parts::default();
    if config.wants("csv") {
        let mut out = BufWriter::new(File::create(dir.join("comparison.csv"))?);
        table.write_csv(&mut out)?;
        out.flush()?;
        parts.artifact("comparison.csv");
    }
    if config.wants("json") {
        let doc = json!({ "schema": 1, "table": table });
        let mut text = serde_json::to_string_pretty(&doc).expect("tables serialise");
        text.push('\n');
        fs::write(dir.join("comparison.json"), text)?;
        parts.artifact("comparison.json");
    }
    for row in &table.rows {
        parts.check(
            "row_solved",
            row.error.is_none(),
            0.0,
            match &row.error {
                None => format!(
                    "eps={:.3e}: d_uz={:.6e}",
                    row.epsilon,
                    row.d_uz.unwrap_or(f64::NAN)
                ),
                Some(e) => format!("eps={:.3e}: {e}", row.epsilon),
            },
        );
    }
    parts.check(
        "exact_fan_available",
        table.fan_error.is_none(),
        0.0,
        table
            .fan_error
            .clone()
            .unwrap_or_else(|| "boundary Riemann fan constructed".into()),
    );
    parts.check(
        "d_uz_nonincreasing",
        table.all_ok(),
        0.0,
        "the two regularisations approach each other as eps shrinks".into(),
    );
    parts.metric(
        "d_uz",
        json!(table.rows.iter().map(|r| r.d_uz).collect::<Vec<_>>()),
    );
    parts.metric(
        "p_hat",
        json!(table.rows.iter().map(|r| r.p_hat).collect::<Vec<_>>()),
    );
    Ok(parts)
}

fn run_b_dependence(config: &RunConfig, dir: &Path) -> Result<Parts, RunnerError> {
    let sys = config.build_system().expect("the configuration was validated");
    let u_0 = config.state("u_0");
    let u_d = config.state("u_d");
    let eps = config.problem.epsilon.expect("the configuration was validated");
    let b_1 = matrix_from_rows(
        config.problem.viscosity_1.as_ref().expect("validated"),
        "problem.viscosity_1",
    )
    .expect("the configuration was validated");
    let b_2 = matrix_from_rows(
        config.problem.viscosity_2.as_ref().expect("validated"),
        "problem.viscosity_2",
    )
    .expect("the configuration was validated");
    let result =
        viscous::viscosity_dependence_experiment(&sys, &u_0, &u_d, &b_1, &b_2, eps, &config.numerics)
            .map_err(solver)?;

    let mut parts = Parts::default();
    if config.wants("csv") {
        for (name, solution) in [
            ("solution_1.csv", &result.solution_1),
            ("solution_2.csv", &result.solution_2),
        ] {
            let mut out = BufWriter::new(File::create(dir.join(name))?);
            solution.write_slice_csv(0, &mut out)?;
            out.flush()?;
            parts.artifact(name);
        }
    }
    if config.wants("json") {
        let doc = json!({
            "schema": 1,
            "epsilon": result.epsilon,
            "xi_star": result.xi_star,
            "trace_1": vec_of(&result.trace_1),
            "trace_2": vec_of(&result.trace_2),
            "gap": result.gap,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("gap documents serialise");
        text.push('\n');
        fs::write(dir.join("b_dependence.json"), text)?;
        parts.artifact("b_dependence.json");
    }
    parts.check(
        "hypotheses",
        true,
        0.0,
        "strict hyperbolicity and matching eigenvalue signatures verified for both viscosities"
            .into(),
    );
    let finite = result.trace_1.iter().chain(result.trace_2.iter()).all(|v| v.is_finite());
    parts.check(
        "traces_finite",
        finite,
        0.0,
        format!("gap {:.6e} at xi* = {:.6e}", result.gap, result.xi_star),
    );
    parts.metric("epsilon", json!(result.epsilon));
    parts.metric("xi_star", json!(result.xi_star));
    parts.metric("gap", json!(result.gap));
    parts.metric("trace_1", vec_of(&result.trace_1));
    parts.metric("trace_2", vec_of(&result.trace_2));
    Ok(parts)
}

fn run_suite(config: &RunConfig, dir: &Path) -> Result<Parts, RunnerError> {
    let criteria = suite::run_all(&config.numerics);
    for criterion in &criteria {
        println!("{}", criterion.render());
    }
    let mut parts = Parts::default();
    if config.wants("json") {
        // Timings stay off the file so identical runs stay bit-identical.
        let doc = json!({
            "schema": 1,
            "criteria": criteria
                .iter()
                .map(|c| {
                    json!({
                        "id": c.id,
                        "name": c.name,
                        "passed": c.passed,
                        "detail": c.detail,
                    })
                })
                .collect::<Vec<_>>(),
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("suite documents serialise");
        text.push('\n');
        fs::write(dir.join("suite.json"), text)?;
        parts.artifact("suite.json");
    }
    for criterion in &criteria {
        parts.check(criterion.name, criterion.passed, 0.0, criterion.detail.clone());
    }
    let passed = criteria.iter().filter(|c| c.passed).count();
    parts.metric("criteria_passed", json!(passed));
    parts.metric("criteria_total", json!(criteria.len()));
    Ok(parts)
}
