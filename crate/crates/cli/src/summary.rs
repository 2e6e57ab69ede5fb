//! Machine summaries (versioned JSON) and the aligned-column human report.
//! Serialization is struct-driven, so field order - and with it the byte
//! stream - is fixed: identical runs produce identical files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crf_core::background::BackgroundData;
use crf_core::einstein::{KeSolution, PinchMargin, UniquenessReport};
use crf_core::estimates::EstimateSuite;
use crf_core::flow::Trajectory;
use crf_core::{CrfError, DiffMode, Result};

use crate::config::{RunConfig, ScenarioKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct ScenarioEcho {
    pub kind: String,
    pub n: usize,
    pub resolution: usize,
    pub diff_mode: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_inf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_density: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_dir: Option<String>,
    pub mass_normalized: bool,
}

#[derive(Debug, Serialize)]
pub struct FlowEcho {
    pub scheme: String,
    pub t_end: f64,
    pub converged: bool,
    pub steps: u64,
    pub snapshots: usize,
    pub cadence: f64,
    pub final_sup_phidot: f64,
}

/// One fitted constant. Every entry names the scenario and resolution it was
/// fitted on and carries a stability margin; the margin's meaning per
/// constant is documented in the README's schema table.
#[derive(Debug, Serialize)]
pub struct ConstantEntry {
    pub name: String,
    pub value: f64,
    pub scenario: String,
    pub resolution: usize,
    pub stability_margin: f64,
}

#[derive(Debug, Serialize)]
pub struct LowerEcho {
    pub eps: f64,
    pub c_eps: f64,
    pub final_inf: f64,
    pub drifting: bool,
}

#[derive(Debug, Serialize)]
pub struct RegressionEcho {
    pub slope: f64,
    pub coefficient: f64,
    pub r_squared: f64,
    pub shells: usize,
}

#[derive(Debug, Serialize)]
pub struct TraceEcho {
    pub q_spread: f64,
    pub q_drifting: bool,
    pub frac_invariant_ok: bool,
    pub c_equiv: f64,
    pub equivalence_ok: bool,
    pub slope_vs_a_flag: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionEcho>,
}

#[derive(Debug, Serialize)]
pub struct LogTraceEcho {
    pub c_evo: f64,
    pub torsion_sup: f64,
    pub max_residual: f64,
}

#[derive(Debug, Serialize)]
pub struct IdentityEcho {
    pub max_potential: f64,
    pub max_rate: f64,
    pub max_shifted: f64,
    pub max_reciprocal: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: String,
    pub scenario: ScenarioEcho,
    pub flow: FlowEcho,
    pub constants: Vec<ConstantEntry>,
    pub lower_bounds: Vec<LowerEcho>,
    pub trace: TraceEcho,
    pub log_trace: LogTraceEcho,
    pub identities: IdentityEcho,
    pub violations: Vec<String>,
}

fn mode_name(mode: DiffMode) -> String {
    match mode {
        DiffMode::Spectral => "spectral".into(),
        DiffMode::CentralDiff4 => "central4".into(),
    }
}

pub fn scenario_echo(cfg: &RunConfig, bg: &BackgroundData) -> ScenarioEcho {
    let degenerate = cfg.scenario == ScenarioKind::Degenerate;
    let homogeneous = cfg.scenario == ScenarioKind::Homogeneous;
    ScenarioEcho {
        kind: cfg.scenario.name().into(),
        n: bg.chart().n(),
        resolution: bg.chart().resolution(),
        diff_mode: mode_name(bg.chart().mode()),
        seed: cfg.seed,
        kappa: degenerate.then_some(cfg.kappa),
        delta: degenerate.then_some(cfg.delta),
        a0: homogeneous.then_some(cfg.a0),
        a_inf: homogeneous.then_some(cfg.a_inf),
        volume_density: if homogeneous { cfg.volume_density } else { None },
        scenario_dir: cfg
            .scenario_dir
            .as_ref()
            .map(|p| p.display().to_string()),
        mass_normalized: bg.mass_normalized(),
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// The estimate-violation flags a verification run exits nonzero on: barrier
/// floors drifting toward minus infinity, and the trace quantity's sup still
/// climbing at the end of the run.
pub fn violations(suite: &EstimateSuite) -> Vec<String> {
    let mut out = Vec::new();
    for e in &suite.lower.per_eps {
        if e.drifting {
            out.push(format!(
                "weighted volume-ratio infimum for eps = {} still decreases over the final third",
                e.eps
            ));
        }
    }
    if suite.trace.q_drifting {
        out.push("trace-bound quantity's sup still climbs over the final third".into());
    }
    out
}

/// Assemble the full run/verify summary from a finished estimate suite.
pub fn build_summary(
    command: &str,
    cfg: &RunConfig,
    bg: &BackgroundData,
    traj: &Trajectory,
    suite: &EstimateSuite,
) -> Summary {
    let scenario = scenario_echo(cfg, bg);
    let last = traj.final_snapshot();
    let t_end = last.t;
    let flow = FlowEcho {
        scheme: match cfg.flow.scheme {
            crf_core::flow::Scheme::Rk4 => "rk4".into(),
            crf_core::flow::Scheme::Imex => "imex".into(),
        },
        t_end,
        converged: traj.converged,
        steps: traj.steps,
        snapshots: traj.snapshots.len(),
        cadence: traj.cadence,
        final_sup_phidot: last.sup_phidot,
    };

    let consts = &suite.constants;
    let ladder_slack = (consts.a + 1.0) * consts.s_min_eig - (consts.c_evo + 1.0);
    let entry = |name: &str, value: f64, margin: f64| ConstantEntry {
        name: name.into(),
        value,
        scenario: scenario.kind.clone(),
        resolution: scenario.resolution,
        stability_margin: margin,
    };
    let mut constants = vec![
        entry("c_phi", suite.upper.c_phi, suite.upper.drift_phi),
        entry("c_phidot", suite.upper.c_phidot, suite.upper.drift_phidot),
        entry("c_vol", suite.upper.c_vol, suite.upper.drift_vol),
        entry("t1", suite.upper.t1, t_end - suite.upper.t1),
    ];
    for e in &suite.lower.per_eps {
        constants.push(entry(
            &format!("c_eps_{}", e.eps),
            e.c_eps,
            e.final_inf + e.c_eps,
        ));
    }
    constants.push(entry("a", consts.a, ladder_slack));
    constants.push(entry("c0", consts.c0, suite.trace.q_spread));
    constants.push(entry("c_evo", consts.c_evo, ladder_slack));
    constants.push(entry("t0", consts.t0, t_end - consts.t0));
    constants.push(entry("s_min_eig", consts.s_min_eig, consts.s_min_eig));
    constants.push(entry("c_equiv", suite.trace.c_equiv, suite.trace.q_spread));
    if let Some(reg) = &suite.trace.regression {
        constants.push(entry("shell_slope", reg.slope, reg.r_squared));
    }

    Summary {
        schema_version: SCHEMA_VERSION,
        command: command.into(),
        scenario,
        flow,
        constants,
        lower_bounds: suite
            .lower
            .per_eps
            .iter()
            .map(|e| LowerEcho {
                eps: e.eps,
                c_eps: e.c_eps,
                final_inf: e.final_inf,
                drifting: e.drifting,
            })
            .collect(),
        trace: TraceEcho {
            q_spread: suite.trace.q_spread,
            q_drifting: suite.trace.q_drifting,
            frac_invariant_ok: suite.trace.frac_invariant_ok,
            c_equiv: suite.trace.c_equiv,
            equivalence_ok: suite.trace.equivalence_ok,
            slope_vs_a_flag: suite.trace.slope_vs_a_flag,
            regression: suite.trace.regression.as_ref().map(|r| RegressionEcho {
                slope: r.slope,
                coefficient: r.coefficient,
                r_squared: r.r_squared,
                shells: r.shells.len(),
            }),
        },
        log_trace: LogTraceEcho {
            c_evo: suite.log_trace.c_evo,
            torsion_sup: suite.log_trace.torsion_sup,
            max_residual: max_abs(&suite.log_trace.residual),
        },
        identities: IdentityEcho {
            max_potential: max_abs(&suite.identities.potential),
            max_rate: max_abs(&suite.identities.rate),
            max_shifted: max_abs(&suite.identities.shifted),
            max_reciprocal: max_abs(&suite.identities.reciprocal),
        },
        violations: violations(suite),
    }
}

/// Aligned-column text rendering of a summary, for humans.
pub fn text_report(s: &Summary) -> String {
    let mut out = String::new();
    let mut line = |label: &str, value: String| {
        out.push_str(&format!("  {label:<26} {value}\n"));
    };
    line(
        "scenario",
        format!(
            "{} (n = {}, resolution = {}, {})",
            s.scenario.kind, s.scenario.n, s.scenario.resolution, s.scenario.diff_mode
        ),
    );
    line(
        "flow",
        format!(
            "{} to t = {} ({} steps, {} snapshots, converged = {})",
            s.flow.scheme, s.flow.t_end, s.flow.steps, s.flow.snapshots, s.flow.converged
        ),
    );
    line("final sup |phidot|", format!("{:.6e}", s.flow.final_sup_phidot));
    for c in &s.constants {
        line(
            &format!("constant {}", c.name),
            format!("{:.6e}  (margin {:.3e})", c.value, c.stability_margin),
        );
    }
    for l in &s.lower_bounds {
        line(
            &format!("floor eps = {}", l.eps),
            format!(
                "c_eps = {:.6e}, final inf = {:.6e}, drifting = {}",
                l.c_eps, l.final_inf, l.drifting
            ),
        );
    }
    line(
        "trace quantity",
        format!(
            "spread {:.3e}, drifting = {}, reciprocal-term invariant ok = {}",
            s.trace.q_spread, s.trace.q_drifting, s.trace.frac_invariant_ok
        ),
    );
    if let Some(r) = &s.trace.regression {
        line(
            "shell regression",
            format!(
                "slope {:.4}, coefficient {:.4}, r^2 {:.4} over {} shells",
                r.slope, r.coefficient, r.r_squared, r.shells
            ),
        );
    }
    line(
        "metric equivalence",
        format!(
            "c_equiv = {:.6e}, ok = {}, slope-vs-a flag = {}",
            s.trace.c_equiv, s.trace.equivalence_ok, s.trace.slope_vs_a_flag
        ),
    );
    line(
        "log-trace evolution",
        format!(
            "c_evo = {:.6e}, torsion sup = {:.3e}, max residual = {:.3e}",
            s.log_trace.c_evo, s.log_trace.torsion_sup, s.log_trace.max_residual
        ),
    );
    line(
        "identity residuals",
        format!(
            "potential {:.3e}, rate {:.3e}, shifted {:.3e}, reciprocal {:.3e}",
            s.identities.max_potential,
            s.identities.max_rate,
            s.identities.max_shifted,
            s.identities.max_reciprocal
        ),
    );
    if s.violations.is_empty() {
        out.push_str("  violations                 none\n");
    } else {
        for v in &s.violations {
            out.push_str(&format!("  VIOLATION                  {v}\n"));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Static-limit (ke) summary.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct PinchEcho {
    pub eps: f64,
    pub inf: f64,
    pub sup: f64,
}

#[derive(Debug, Serialize)]
pub struct MarginEcho {
    pub delta: f64,
    pub eps: f64,
    pub min_q: f64,
    pub floor: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct UniquenessEcho {
    pub sup_difference: f64,
    pub margins: Vec<MarginEcho>,
}

#[derive(Debug, Serialize)]
pub struct KeSummary {
    pub schema_version: u32,
    pub command: String,
    pub scenario: ScenarioEcho,
    pub tol: f64,
    pub residual: f64,
    pub hessian_residual: f64,
    pub newton_iters: usize,
    pub linear_iters: usize,
    pub einstein_defect: f64,
    pub theta_inf: f64,
    pub theta_sup: f64,
    pub pinch: Vec<PinchEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniqueness: Option<UniquenessEcho>,
}

pub fn build_ke_summary(
    cfg: &RunConfig,
    bg: &BackgroundData,
    sol: &KeSolution,
    einstein_defect: f64,
    pinch: &[PinchMargin],
    uniqueness: Option<&UniquenessReport>,
) -> KeSummary {
    KeSummary {
        schema_version: SCHEMA_VERSION,
        command: "ke".into(),
        scenario: scenario_echo(cfg, bg),
        tol: cfg.ke_tol,
        residual: sol.residual,
        hessian_residual: sol.hessian_residual,
        newton_iters: sol.newton_iters,
        linear_iters: sol.linear_iters,
        einstein_defect,
        theta_inf: sol.theta.inf(),
        theta_sup: sol.theta.sup(),
        pinch: pinch
            .iter()
            .map(|p| PinchEcho {
                eps: p.eps,
                inf: p.inf,
                sup: p.sup,
            })
            .collect(),
        uniqueness: uniqueness.map(|u| UniquenessEcho {
            sup_difference: u.sup_difference,
            margins: u
                .margins
                .iter()
                .map(|m| MarginEcho {
                    delta: m.delta,
                    eps: m.eps,
                    min_q: m.min_q,
                    floor: m.floor,
                    pass: m.pass,
                })
                .collect(),
        }),
    }
}

/// Serialize as pretty JSON with a trailing newline and write to `path`.
pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CrfError::Format(format!("json serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
