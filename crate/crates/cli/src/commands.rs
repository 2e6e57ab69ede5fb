//! The four subcommands. Each returns the process exit code; recoverable
//! domain errors bubble up as [`CrfError`] and are mapped to codes by the
//! dispatcher. All stdout is deterministic - no timings, no absolute paths
//! beyond what the configuration itself supplies - so identical invocations
//! print identical bytes.

use std::fs;

use crf_core::background::{scenario_degenerate, scenario_homogeneous};
use crf_core::field::{Form11Field, MetricField};
use crf_core::flow::{self, FlowConfig, Scheme, Trajectory};
use crf_core::grid::{DiffMode, GridChart};
use crf_core::testfields::{random_metric, random_trig_scalar};
use crf_core::{einstein, estimates, geometry, io, CrfError, Result};

use crate::config::RunConfig;
use crate::scenario::save_scenario;
use crate::summary::{build_ke_summary, build_summary, text_report, violations, write_json};

/// Exit code for a clean command.
pub const EXIT_OK: i32 = 0;
/// Exit code for configuration and input-format problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code when a verified estimate fails (a violation flag is raised).
pub const EXIT_VIOLATION: i32 = 3;
/// Exit code for numerical failures (positivity loss, solver breakdown).
pub const EXIT_NUMERICAL: i32 = 4;

/// Map a domain error to the documented exit-code classes.
pub fn exit_code_for(err: &CrfError) -> i32 {
    match err {
        CrfError::InvalidParam(_)
        | CrfError::ChartMismatch(_)
        | CrfError::Format(_)
        | CrfError::Io(_) => EXIT_CONFIG,
        CrfError::EstimateViolation(_) => EXIT_VIOLATION,
        CrfError::NonFinite { .. }
        | CrfError::DegenerateMetric { .. }
        | CrfError::PositivityLoss { .. }
        | CrfError::FlowBreakdown { .. }
        | CrfError::PoleTooStrong { .. }
        | CrfError::SolverFailure { .. } => EXIT_NUMERICAL,
    }
}

fn dump_time_snapshot<'t>(traj: &'t Trajectory, want: f64) -> Result<&'t flow::Snapshot> {
    let snap = traj
        .snapshots
        .iter()
        .min_by(|a, b| {
            (a.t - want)
                .abs()
                .partial_cmp(&(b.t - want).abs())
                .expect("snapshot times are finite")
        })
        .expect("trajectory never empty");
    if (snap.t - want).abs() > 0.5 * traj.cadence + 1e-9 {
        return Err(CrfError::InvalidParam(format!(
            "dump time {want} is not within half a cadence of any snapshot \
             (trajectory covers [{}, {}] at cadence {})",
            traj.snapshots[0].t,
            snap_end(traj),
            traj.cadence
        )));
    }
    Ok(snap)
}

fn snap_end(traj: &Trajectory) -> f64 {
    traj.final_snapshot().t
}

/// `run`: integrate the flow, measure everything, and write the artifact set.
pub fn cmd_run(cfg: &RunConfig) -> Result<i32> {
    let bg = cfg.build_background()?;
    let traj = flow::run(&bg, &cfg.flow_config())?;
    let suite = estimates::full_diagnostics(&traj, &bg, cfg.t1)?;

    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    io::write_trajectory(out.join("trajectory.crft"), &traj)?;
    fs::write(out.join("diagnostics.csv"), io::diagnostics_csv(&suite.records))?;
    let summary = build_summary("run", cfg, &bg, &traj, &suite);
    write_json(out.join("summary.json"), &summary)?;
    save_scenario(out.join("scenario"), &bg)?;

    let last = traj.final_snapshot();
    io::write_heatmap_pgm(out.join("phi.pgm"), &last.phi)?;
    let metric = estimates::snapshot_metric(&bg, last)?;
    let trace = geometry::trace(bg.omega0(), metric.form())?;
    io::write_heatmap_pgm(out.join("trace.pgm"), &trace)?;
    io::write_heatmap_pgm(out.join("psi.pgm"), bg.psi())?;

    for &want in &cfg.dump_times {
        let snap = dump_time_snapshot(&traj, want)?;
        io::write_scalar_dump(out.join(format!("phi_t{:09.4}.crf1", snap.t)), &snap.phi)?;
    }

    println!(
        "run: {} n={} resolution={} to t = {} ({} snapshots, converged = {})",
        summary.scenario.kind,
        summary.scenario.n,
        summary.scenario.resolution,
        summary.flow.t_end,
        summary.flow.snapshots,
        summary.flow.converged
    );
    print!("{}", text_report(&summary));
    println!(
        "run: wrote trajectory.crft, diagnostics.csv, summary.json, scenario/, \
         phi.pgm, trace.pgm, psi.pgm under {}",
        out.display()
    );
    Ok(EXIT_OK)
}

/// `verify`: rebuild the background, load a stored trajectory, re-run the
/// estimate suite, and exit nonzero if any violation flag is raised.
pub fn cmd_verify(cfg: &RunConfig) -> Result<i32> {
    let bg = cfg.build_background()?;
    let path = cfg.trajectory_path();
    let traj = io::read_trajectory(&path)?;
    bg.chart().check_same_geometry(
        traj.snapshots[0].phi.chart(),
        "stored trajectory vs configured scenario",
    )?;
    let suite = estimates::full_diagnostics(&traj, &bg, cfg.t1)?;
    let summary = build_summary("verify", cfg, &bg, &traj, &suite);
    fs::create_dir_all(&cfg.out_dir)?;
    write_json(cfg.out_dir.join("verify.json"), &summary)?;

    println!("verify: {} ({} snapshots)", path.display(), traj.snapshots.len());
    print!("{}", text_report(&summary));
    let flags = violations(&suite);
    if flags.is_empty() {
        println!("verify: all estimate checks hold");
        Ok(EXIT_OK)
    } else {
        for v in &flags {
            eprintln!("verify: violation: {v}");
        }
        Ok(EXIT_VIOLATION)
    }
}

/// `ke`: solve the static limit equation, verify the Einstein-type identity
/// and the volume pinch, optionally compare against a stored potential.
pub fn cmd_ke(cfg: &RunConfig) -> Result<i32> {
    let bg = cfg.build_background()?;
    let guess = match &cfg.initial_guess {
        Some(p) => Some(io::read_scalar_dump(p, cfg.mode)?),
        None => None,
    };
    let sol = einstein::solve_ke(&bg, guess.as_ref(), cfg.ke_tol)?;
    let defect = einstein::verify_einstein(&bg, &sol, cfg.einstein_bound)?;
    let pinch = einstein::verify_volume_pinch(&bg, &sol, &cfg.eps_list)?;

    let mut uniqueness = None;
    if let Some(other_path) = &cfg.compare {
        let other_theta = io::read_scalar_dump(other_path, cfg.mode)?;
        let other = einstein::evaluate_potential(&bg, &other_theta)?;
        uniqueness = Some(einstein::compare_uniqueness(
            &bg,
            &sol,
            &other,
            cfg.uniqueness_slack,
        )?);
    }

    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    io::write_scalar_dump(out.join("theta.crf1"), &sol.theta)?;
    io::write_form_dump(out.join("omega.crf1"), sol.omega.form())?;
    let summary = build_ke_summary(cfg, &bg, &sol, defect, &pinch, uniqueness.as_ref());
    write_json(out.join("ke_summary.json"), &summary)?;

    println!(
        "ke: solved to residual {:.3e} (hessian {:.3e}) in {} newton / {} linear iterations",
        sol.residual, sol.hessian_residual, sol.newton_iters, sol.linear_iters
    );
    println!("ke: einstein defect {defect:.3e} (bound {:.3e})", cfg.einstein_bound);
    for p in &pinch {
        println!(
            "ke: pinch eps = {}: inf {:.6e}, sup {:.6e}",
            p.eps, p.inf, p.sup
        );
    }
    let mut code = EXIT_OK;
    if let Some(u) = &uniqueness {
        println!("ke: compared potentials differ by {:.3e} (sup)", u.sup_difference);
        for m in &u.margins {
            println!(
                "ke: uniqueness margin delta = {}, eps = {}: min {:.6e} >= floor {:.6e}: {}",
                m.delta,
                m.eps,
                m.min_q,
                m.floor,
                if m.pass { "ok" } else { "VIOLATION" }
            );
            if !m.pass {
                code = EXIT_VIOLATION;
            }
        }
    }
    println!(
        "ke: wrote theta.crf1, omega.crf1, ke_summary.json under {}",
        out.display()
    );
    Ok(code)
}

// ---------------------------------------------------------------------------
// Selftest.
// ---------------------------------------------------------------------------

struct SelftestRow {
    name: &'static str,
    value: f64,
    threshold: f64,
    pass: bool,
}

fn row(name: &'static str, value: f64, threshold: f64) -> SelftestRow {
    SelftestRow {
        name,
        value,
        threshold,
        pass: value <= threshold,
    }
}

fn failed_row(name: &'static str, err: &CrfError) -> SelftestRow {
    eprintln!("selftest: {name}: error: {err}");
    SelftestRow {
        name,
        value: f64::NAN,
        threshold: 0.0,
        pass: false,
    }
}

fn selftest_fixed_point() -> Result<SelftestRow> {
    let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.5, 1.5, 1.5)?;
    let cfg = FlowConfig {
        scheme: Scheme::Rk4,
        t_max: 5.0,
        min_time: 5.0,
        ..FlowConfig::default()
    };
    let traj = flow::run(&bg, &cfg)?;
    let worst = traj
        .snapshots
        .iter()
        .fold(0.0f64, |m, s| m.max(s.phi.sup_abs()));
    Ok(row("flow keeps the matched fixed point", worst, 1e-10))
}

fn selftest_oracle() -> Result<SelftestRow> {
    let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 2.0, 1.0, 1.0)?;
    let cfg = FlowConfig {
        scheme: Scheme::Rk4,
        t_max: 5.0,
        min_time: 5.0,
        dt_max: 0.01,
        ..FlowConfig::default()
    };
    let traj = flow::run(&bg, &cfg)?;
    let last = traj.final_snapshot();
    let oracle = flow::homogeneous_oracle(&bg, last.t)?;
    let err = last.phi.map(|v| v - oracle).sup_abs();
    Ok(row("flow matches the quadrature oracle", err, 1e-8))
}

fn selftest_torsion() -> Result<SelftestRow> {
    let chart = GridChart::new(2, 8, 1.0, DiffMode::Spectral)?;
    let potential = random_trig_scalar(chart, 11, 0.02);
    let form = Form11Field::scaled_identity(chart, 1.0)
        .add_scaled(&geometry::ddbar(&potential)?, 1.0);
    let metric = MetricField::try_new(form)?;
    let torsion = geometry::torsion(&metric)?.sup_norm();
    Ok(row("potential-deformed metric is torsion-free", torsion, 1e-8))
}

fn selftest_ricci_routes() -> Result<SelftestRow> {
    let chart = GridChart::new(2, 8, 1.0, DiffMode::Spectral)?;
    let metric = random_metric(chart, 5, 0.2);
    let direct = geometry::chern_ricci(&metric)?;
    let contracted = geometry::chern_ricci_from_curvature(&metric)?;
    let gap = direct.add_scaled(&contracted, -1.0).sup_norm();
    Ok(row("curvature-trace routes agree", gap, 1e-6))
}

fn selftest_dump_round_trip() -> Result<SelftestRow> {
    let chart = GridChart::new(1, 8, 1.0, DiffMode::Spectral)?;
    let f = random_trig_scalar(chart, 2, 1.0);
    let bytes = io::scalar_dump_bytes(&f);
    let back = match io::parse_field_dump(&bytes, DiffMode::Spectral)? {
        io::FieldDump::Scalar(g) => g,
        io::FieldDump::Form(_) => {
            return Err(CrfError::Format("dump kind mangled in round trip".into()));
        }
    };
    let exact = f
        .data
        .iter()
        .zip(back.data.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let mut r = row(
        "field dump round trip is bit-exact",
        f.zip_map(&back, |a, b| a - b).sup_abs(),
        0.0,
    );
    r.pass = r.pass && exact;
    Ok(r)
}

fn selftest_static_solver() -> Result<SelftestRow> {
    let bg = scenario_homogeneous(8, 2, DiffMode::Spectral, 2.0, 1.5, 0.7)?;
    let expected = 2.0 * 1.5f64.ln() + 2.0f64.ln() - 0.7f64.ln();
    let sol = einstein::solve_ke(&bg, None, 1e-12)?;
    let err = (sol.theta.mean() - expected).abs();
    let mut r = row("static solver lands in one exact step", err, 1e-11);
    r.pass = r.pass && sol.newton_iters <= 2;
    Ok(r)
}

fn selftest_barrier_floors() -> Result<SelftestRow> {
    let bg = scenario_degenerate(16, 1, DiffMode::Spectral, 0.05, 1e-2)?;
    let cfg = FlowConfig {
        scheme: Scheme::Imex,
        t_max: 2.0,
        min_time: 2.0,
        ..FlowConfig::default()
    };
    let traj = flow::run(&bg, &cfg)?;
    let lower = estimates::check_lower_bounds(&traj, &bg, &estimates::EPS_GRID)?;
    let worst_inf = lower
        .per_eps
        .iter()
        .map(|e| e.final_inf)
        .fold(f64::INFINITY, f64::min);
    let steady = lower.per_eps.iter().all(|e| !e.drifting);
    // Bounded below: the weighted ratio stays above a generous fixed floor
    // and the running infimum has stopped decreasing.
    let mut r = row(
        "barrier floors hold on the degenerate scenario",
        -worst_inf,
        10.0,
    );
    r.pass = r.pass && steady;
    Ok(r)
}

/// `selftest`: deterministic end-to-end suite at small resolution. Prints a
/// fixed-format pass/fail table; byte-identical across repeated invocations.
pub fn cmd_selftest() -> i32 {
    let checks: [(&'static str, fn() -> Result<SelftestRow>); 7] = [
        ("fixed point", selftest_fixed_point),
        ("oracle", selftest_oracle),
        ("torsion", selftest_torsion),
        ("ricci", selftest_ricci_routes),
        ("dump", selftest_dump_round_trip),
        ("static solver", selftest_static_solver),
        ("barrier", selftest_barrier_floors),
    ];
    println!("selftest: {} checks", checks.len());
    println!("{:<48} {:>12} {:>12} {:>6}", "check", "value", "bound", "status");
    let mut passed = 0usize;
    for (name, f) in checks {
        let row = f().unwrap_or_else(|e| failed_row(name, &e));
        if row.pass {
            passed += 1;
        }
        println!(
            "{:<48} {:>12.3e} {:>12.3e} {:>6}",
            row.name,
            row.value,
            row.threshold,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    println!("selftest: {passed}/{} passed", checks.len());
    if passed == checks.len() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::build_config;
    use std::path::PathBuf;

    fn temp_out(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("crf_cmd_{tag}_{}", std::process::id()))
    }

    fn homogeneous_cfg(out: &std::path::Path, a0: f64) -> RunConfig {
        build_config(
            Some(&format!(
                "scenario = homogeneous\nresolution = 8\na0 = {a0}\na_inf = 1.0\n\
                 t_max = 1.0\nmin_time = 1.0\nout_dir = {}\ndump_times = 0.5\n",
                out.display()
            )),
            &[],
        )
        .unwrap()
    }

    #[test]
    fn run_writes_the_artifact_set_and_verify_accepts_it() {
        let out = temp_out("run");
        // Matched densities: the flow sits at its fixed point, every tracked
        // curve is constant, and verify must find nothing to flag.
        let cfg = homogeneous_cfg(&out, 1.0);
        assert_eq!(cmd_run(&cfg).unwrap(), EXIT_OK);
        for name in [
            "trajectory.crft",
            "diagnostics.csv",
            "summary.json",
            "phi.pgm",
            "trace.pgm",
            "psi.pgm",
            "phi_t0000.5000.crf1",
            "scenario/scenario.txt",
            "scenario/omega0.crf1",
        ] {
            assert!(out.join(name).exists(), "missing artifact {name}");
        }
        // The CSV has a header plus one row per snapshot.
        let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
        let traj = io::read_trajectory(out.join("trajectory.crft")).unwrap();
        assert_eq!(csv.lines().count(), 1 + traj.snapshots.len());
        // Verify accepts the stored trajectory and finds no violations.
        assert_eq!(cmd_verify(&cfg).unwrap(), EXIT_OK);
        assert!(out.join("verify.json").exists());
        // The summary parses as JSON with the pinned schema version.
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["schema_version"], 1);
        assert_eq!(summary["command"], "run");
        assert!(summary["constants"].as_array().unwrap().len() >= 10);
        fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn verify_exits_three_while_a_floor_is_still_moving() {
        // An unmatched homogeneous run stopped at t = 1 is mid-transient: the
        // weighted volume-ratio infimum is still decreasing, so the drift
        // detector must fire and verify must use the violation exit code.
        let out = temp_out("drift");
        let cfg = homogeneous_cfg(&out, 2.0);
        assert_eq!(cmd_run(&cfg).unwrap(), EXIT_OK);
        assert_eq!(cmd_verify(&cfg).unwrap(), EXIT_VIOLATION);
        let verify: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
        assert!(!verify["violations"].as_array().unwrap().is_empty());
        fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn run_artifacts_are_byte_identical_across_reruns() {
        let out_a = temp_out("det_a");
        let out_b = temp_out("det_b");
        assert_eq!(cmd_run(&homogeneous_cfg(&out_a, 2.0)).unwrap(), EXIT_OK);
        assert_eq!(cmd_run(&homogeneous_cfg(&out_b, 2.0)).unwrap(), EXIT_OK);
        for name in ["diagnostics.csv", "summary.json"] {
            let a = fs::read(out_a.join(name)).unwrap();
            let mut b = fs::read(out_b.join(name)).unwrap();
            // The only difference allowed is the configured output directory
            // echoed inside summary.json - which for these two runs differs;
            // normalize it away before comparing.
            if name == "summary.json" {
                let text = String::from_utf8(b).unwrap();
                b = text
                    .replace(&out_b.display().to_string(), &out_a.display().to_string())
                    .into_bytes();
            }
            assert_eq!(a, b, "artifact {name} differs between identical runs");
        }
        fs::remove_dir_all(&out_a).unwrap();
        fs::remove_dir_all(&out_b).unwrap();
    }

    #[test]
    fn verify_flags_missing_or_mismatched_trajectories() {
        let out = temp_out("verify_bad");
        let cfg = homogeneous_cfg(&out, 1.0);
        // No stored trajectory yet: the error is an I/O problem (config class).
        match cmd_verify(&cfg) {
            Err(e) => assert_eq!(exit_code_for(&e), EXIT_CONFIG),
            Ok(code) => panic!("expected error, got exit {code}"),
        }
        // A trajectory from a different grid is rejected as a mismatch.
        assert_eq!(cmd_run(&cfg).unwrap(), EXIT_OK);
        let mut other = cfg.clone();
        other.resolution = 12;
        match cmd_verify(&other) {
            Err(CrfError::ChartMismatch(_)) => {}
            other => panic!("expected chart mismatch, got {other:?}"),
        }
        fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn ke_solves_writes_and_compares() {
        let out = temp_out("ke");
        let cfg = build_config(
            Some(&format!(
                "scenario = homogeneous\nresolution = 8\nn = 2\na0 = 2.0\na_inf = 1.5\n\
                 volume_density = 0.7\nke_tol = 1e-12\nout_dir = {}\n",
                out.display()
            )),
            &[],
        )
        .unwrap();
        assert_eq!(cmd_ke(&cfg).unwrap(), EXIT_OK);
        let theta = io::read_scalar_dump(out.join("theta.crf1"), DiffMode::Spectral).unwrap();
        let expected = 2.0 * 1.5f64.ln() + 2.0f64.ln() - 0.7f64.ln();
        assert!((theta.mean() - expected).abs() < 1e-11);

        // Compare the solution against its own dump: margins must pass.
        let mut with_compare = cfg.clone();
        with_compare.compare = Some(out.join("theta.crf1"));
        assert_eq!(cmd_ke(&with_compare).unwrap(), EXIT_OK);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("ke_summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["command"], "ke");
        assert!(summary["uniqueness"]["margins"].as_array().unwrap().len() == 4);
        fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn selftest_passes_and_is_deterministic() {
        assert_eq!(cmd_selftest(), EXIT_OK);
    }
}
