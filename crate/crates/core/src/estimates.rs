//! Quantitative estimates extracted from stored trajectories: uniform bounds
//! on the potential and its rate, volume-ratio barrier floors, the
//! barrier-adjusted log-trace quantity with its auxiliary constants, and
//! discrete verification of the evolution identities that drive those bounds.
//!
//! Everything here consumes a finished [`Trajectory`] plus its
//! [`BackgroundData`]; nothing advances the flow. Constants are fitted as the
//! smallest values that make the corresponding inequality hold along the
//! stored snapshots and are reported together with a drift figure (relative
//! change of the running extremum over the final third of the run) so a
//! caller can distinguish a genuine uniform bound from one still growing.
//!
//! Identity checks form time derivatives in one of two ways
//! ([`TimeDerivative`]): centered differences of neighboring snapshots
//! (second order in the snapshot spacing, interior snapshots only), or exact
//! substitution from the flow equation itself, which needs no neighbors and
//! isolates the spatial discretization error. Spatial derivatives are
//! spectral throughout, with one caveat: the reciprocal-shift identity
//! differentiates the barrier potential's grid samples (gradient and
//! Laplacian both), so for barrier scenarios with an under-resolved pole core
//! that one residual inherits the sampling error that the stored closed-form
//! barrier Hessian avoids elsewhere. The scenarios the identity checks are
//! specified for carry no barrier, so this only affects informational
//! diagnostics.

use crate::background::BackgroundData;
use crate::error::{CrfError, Result};
use crate::field::{CurvatureField, MetricField, ScalarField, TorsionField};
use crate::flow::{Snapshot, Trajectory};
use crate::{geometry, spectral, Complex64};

/// Barrier exponents tabulated by the standard diagnostics records.
pub const EPS_GRID: [f64; 4] = [0.1, 0.25, 0.5, 1.0];

/// Relative drift treated as "stable" by acceptance-style checks.
pub const STABILITY_TOL: f64 = 0.05;

/// Relative slack in the coefficient ladder so that exact-arithmetic
/// borderline cases (equality up to roundoff) land on the intended rung.
const LADDER_SLACK: f64 = 1e-9;

fn expect_snapshots(traj: &Trajectory, need: usize, what: &str) -> Result<()> {
    if traj.snapshots.len() < need {
        return Err(CrfError::InvalidParam(format!(
            "{what} needs at least {need} snapshots, trajectory has {}",
            traj.snapshots.len()
        )));
    }
    Ok(())
}

/// Relative change of the running maximum of `values` over the final third.
/// Zero for constant tails and for fewer than three samples.
fn running_max_drift(values: &[f64]) -> f64 {
    if values.len() < 3 {
        return 0.0;
    }
    let mut running = Vec::with_capacity(values.len());
    let mut m = f64::NEG_INFINITY;
    for &v in values {
        m = m.max(v);
        running.push(m);
    }
    let i0 = 2 * (values.len() - 1) / 3;
    let last = running[values.len() - 1];
    (last - running[i0]) / last.abs().max(1e-30)
}

/// Peak-to-trough spread of `values` over the final third, relative to the
/// final value. Measures whether a curve has settled, not whether it grew.
fn window_spread(values: &[f64]) -> f64 {
    if values.len() < 3 {
        return 0.0;
    }
    let i0 = 2 * (values.len() - 1) / 3;
    let window = &values[i0..];
    let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
    (hi - lo) / values[values.len() - 1].abs().max(1e-30)
}

/// Evolved metric at a snapshot: reference family at the snapshot time plus
/// the mixed Hessian of the stored potential.
pub fn snapshot_metric(bg: &BackgroundData, snap: &Snapshot) -> Result<MetricField> {
    let hess = geometry::ddbar(&snap.phi)?;
    MetricField::try_new(bg.reference_metric(snap.t).add_scaled(&hess, 1.0))
}

fn shifted_potential(bg: &BackgroundData, snap: &Snapshot) -> ScalarField {
    snap.phi.zip_map(bg.psi(), |a, b| a - b)
}

/// Interior snapshot indices with equal spacing on both sides, paired with
/// that spacing; these are the points where centered time differences are
/// well defined.
fn interior_indices(traj: &Trajectory) -> Vec<(usize, f64)> {
    let s = &traj.snapshots;
    if s.len() < 3 {
        return Vec::new();
    }
    (1..s.len() - 1)
        .filter_map(|k| {
            let dl = s[k].t - s[k - 1].t;
            let dr = s[k + 1].t - s[k].t;
            (dl > 0.0 && (dl - dr).abs() < 1e-9).then_some((k, dl))
        })
        .collect()
}

/// Squared gradient `|df|^2_g = g^{jbar i} d_i f d_jbar f` of a real scalar
/// against an evolved metric.
fn grad_norm_sq(g: &MetricField, f: &ScalarField) -> ScalarField {
    let chart = *g.chart();
    let n = chart.n();
    let bl = n * n;
    let inv = g.inverse_blocks();
    let grads: Vec<Vec<Complex64>> = (0..n).map(|i| geometry::dz_scalar(f, i)).collect();
    let data = (0..chart.points())
        .map(|p| {
            let b = &inv[p * bl..(p + 1) * bl];
            let mut acc = Complex64::default();
            for i in 0..n {
                for j in 0..n {
                    acc += b[j * n + i] * grads[i][p] * grads[j][p].conj();
                }
            }
            acc.re
        })
        .collect();
    ScalarField::from_vec(chart, data).expect("gradient norm is finite")
}

// ---------------------------------------------------------------------------
// Uniform upper bounds.
// ---------------------------------------------------------------------------

/// Rate samples with `sup |phidot|` below this level are excluded from the
/// decay-weighted rate bound. Once the rate has decayed to the discretization
/// floor (spectral differentiation of roundoff sits near 1e-12), the weight
/// `e^t / t` would amplify that noise into the fitted constant - at `t = 30`
/// by thirteen orders of magnitude - so the curve is only measured while the
/// signal is resolvable, and the fitted constant freezes afterwards.
pub const RATE_FLOOR: f64 = 1e-10;

/// Fitted uniform upper bounds along a trajectory, with drift figures for the
/// running maxima over the final third of the run.
#[derive(Debug, Clone)]
pub struct UpperBounds {
    /// Smallest bound on `sup |phi|` over all snapshots.
    pub c_phi: f64,
    /// Smallest `C` with `sup phidot <= C t e^{-t}` at snapshot times `t >= t1`
    /// (positive part; zero when the rate never goes positive there). Samples
    /// below [`RATE_FLOOR`] are not counted; see its documentation.
    pub c_phidot: f64,
    /// Onset time used for the rate bound.
    pub t1: f64,
    /// Smallest bound on the volume ratio `omega^n / Omega`.
    pub c_vol: f64,
    pub drift_phi: f64,
    pub drift_phidot: f64,
    pub drift_vol: f64,
}

/// Fit the uniform bounds on the potential, its decay-weighted rate, and the
/// volume ratio. The volume ratio is read off algebraically as
/// `exp(phidot + phi)`, which is exactly `omega^n / Omega` along the flow.
pub fn check_upper_bounds(traj: &Trajectory, bg: &BackgroundData, t1: f64) -> Result<UpperBounds> {
    expect_snapshots(traj, 1, "check_upper_bounds")?;
    if !(t1 > 0.0) {
        return Err(CrfError::InvalidParam(format!(
            "rate-bound onset t1 must be positive, got {t1}"
        )));
    }
    let mask = bg.mask();
    let mut phi_curve = Vec::with_capacity(traj.snapshots.len());
    let mut vol_curve = Vec::with_capacity(traj.snapshots.len());
    let mut rate_curve = Vec::new();
    let mut saw_onset = false;
    for snap in &traj.snapshots {
        phi_curve.push(snap.phi.sup_abs_unmasked(mask));
        let log_ratio = snap.phi.zip_map(&snap.phidot, |a, b| a + b);
        vol_curve.push(log_ratio.map(f64::exp).sup_unmasked(mask));
        if snap.t >= t1 - 1e-12 {
            saw_onset = true;
            if snap.phidot.sup_abs_unmasked(mask) >= RATE_FLOOR {
                let weighted = snap.phidot.sup_unmasked(mask) * snap.t.exp() / snap.t;
                rate_curve.push(weighted.max(0.0));
            }
        }
    }
    if !saw_onset {
        return Err(CrfError::InvalidParam(format!(
            "no snapshots at or after t1 = {t1}; trajectory ends at t = {}",
            traj.final_snapshot().t
        )));
    }
    let max_of = |c: &[f64]| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (c_phidot, drift_phidot) = if rate_curve.is_empty() {
        (0.0, 0.0)
    } else {
        (max_of(&rate_curve), running_max_drift(&rate_curve))
    };
    Ok(UpperBounds {
        c_phi: max_of(&phi_curve),
        c_phidot,
        t1,
        c_vol: max_of(&vol_curve),
        drift_phi: running_max_drift(&phi_curve),
        drift_phidot,
        drift_vol: running_max_drift(&vol_curve),
    })
}

// ---------------------------------------------------------------------------
// Volume-ratio lower bounds (barrier floors).
// ---------------------------------------------------------------------------

/// Lower-bound fit for one barrier exponent.
#[derive(Debug, Clone)]
pub struct EpsLowerBound {
    pub eps: f64,
    /// Smallest `C_eps >= 0` with
    /// `log(omega^n / (e^{eps psi} Omega)) >= -C_eps` at every unmasked point
    /// of every snapshot.
    pub c_eps: f64,
    /// Infimum of the barrier-weighted log volume ratio at the last snapshot.
    pub final_inf: f64,
    /// True when the running infimum still decreases by more than 1% over the
    /// final third of the run: the telltale of a drift toward minus infinity.
    pub drifting: bool,
}

#[derive(Debug, Clone)]
pub struct LowerBounds {
    pub per_eps: Vec<EpsLowerBound>,
}

/// Fit the barrier floors `C_eps` for each requested exponent. The weighted
/// log ratio is assembled algebraically as `phidot + phi - eps * psi`.
pub fn check_lower_bounds(
    traj: &Trajectory,
    bg: &BackgroundData,
    eps_list: &[f64],
) -> Result<LowerBounds> {
    expect_snapshots(traj, 1, "check_lower_bounds")?;
    let mask = bg.mask();
    let mut per_eps = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0) {
            return Err(CrfError::InvalidParam(format!(
                "barrier exponent must be positive, got {eps}"
            )));
        }
        let mut inf_curve = Vec::with_capacity(traj.snapshots.len());
        for snap in &traj.snapshots {
            let mut q = snap.phi.zip_map(&snap.phidot, |a, b| a + b);
            q.add_scaled(bg.psi(), -eps);
            inf_curve.push(q.inf_unmasked(mask));
        }
        let worst = inf_curve.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut running = Vec::with_capacity(inf_curve.len());
        let mut m = f64::INFINITY;
        for &v in &inf_curve {
            m = m.min(v);
            running.push(m);
        }
        let i0 = 2 * (inf_curve.len() - 1) / 3;
        let last = running[running.len() - 1];
        let drifting = inf_curve.len() >= 3 && (running[i0] - last) > 0.01 * last.abs().max(1e-30);
        per_eps.push(EpsLowerBound {
            eps,
            c_eps: (-worst).max(0.0),
            final_inf: *inf_curve.last().expect("nonempty curve"),
            drifting,
        });
    }
    Ok(LowerBounds { per_eps })
}

// ---------------------------------------------------------------------------
// Constant selection for the trace bound.
// ---------------------------------------------------------------------------

/// Constants feeding the barrier-adjusted log-trace quantity.
#[derive(Debug, Clone)]
pub struct ChosenConstants {
    /// Trace-bound coefficient, chosen on the ladder `a + 1 = 2^k`.
    pub a: f64,
    /// Shift making the shifted potential at least one: `c0 = 1 - inf phitilde`.
    pub c0: f64,
    /// Fitted constant of the log-trace evolution inequality (clamped at 0).
    pub c_evo: f64,
    /// Onset time after which the reference family is pinched against its
    /// limit, from the background's own bound.
    pub t0: f64,
    /// Infimum over `t >= t0` of the smallest generalized eigenvalue of the
    /// shifted reference family against the initial metric; the family is
    /// affine in `e^{-t}`, so the infimum sits at an endpoint.
    pub s_min_eig: f64,
}

/// Choose the shift and the ladder coefficient from the stored run: the shift
/// from the infimum of the shifted potential, the coefficient as the smallest
/// ladder rung with `(a + 1) * s_min >= c_evo + 1`.
pub fn choose_constants(traj: &Trajectory, bg: &BackgroundData) -> Result<ChosenConstants> {
    expect_snapshots(traj, 1, "choose_constants")?;
    let mask = bg.mask();
    let mut inf_shift = f64::INFINITY;
    for snap in &traj.snapshots {
        inf_shift = inf_shift.min(shifted_potential(bg, snap).inf_unmasked(mask));
    }
    let c0 = 1.0 - inf_shift;
    let c_evo = check_logtr_evolution(traj, bg, TimeDerivative::FromEquation)?.c_evo;
    let t0 = bg.find_t0();

    let omega0 = bg.omega0();
    let at = |t: f64| -> Result<f64> {
        let s_t = bg.s_current(t);
        Ok(geometry::min_eigenvalue(&s_t, omega0)?.inf_unmasked(mask))
    };
    let s_min_eig = at(t0)?.min(at(f64::INFINITY)?);
    let a = ladder_coefficient(c_evo, s_min_eig)?;
    Ok(ChosenConstants {
        a,
        c0,
        c_evo,
        t0,
        s_min_eig,
    })
}

/// Smallest coefficient on the ladder `a + 1 = 2^k` with
/// `(a + 1) * s_min >= c_evo + 1`. For example, an evolution constant of 3
/// against an eigenvalue floor of 1/4 needs `a + 1 >= 16`, so `a = 15`.
/// Borderline cases within one part in 10^9 land on the exact-arithmetic rung.
pub fn ladder_coefficient(c_evo: f64, s_min: f64) -> Result<f64> {
    if !(s_min > 0.0) {
        return Err(CrfError::EstimateViolation(format!(
            "shifted reference family is not uniformly positive: \
             smallest generalized eigenvalue {s_min:.3e}"
        )));
    }
    if !(c_evo >= 0.0) {
        return Err(CrfError::InvalidParam(format!(
            "evolution constant must be nonnegative, got {c_evo}"
        )));
    }
    let target = (c_evo + 1.0) / s_min * (1.0 - LADDER_SLACK);
    let mut rung = 1.0f64; // a + 1
    let mut guard = 0;
    while rung < target {
        rung *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(CrfError::EstimateViolation(format!(
                "coefficient ladder exceeded 2^60 chasing target {target:.3e}"
            )));
        }
    }
    Ok(rung - 1.0)
}

// ---------------------------------------------------------------------------
// Trace bound.
// ---------------------------------------------------------------------------

/// Ordinary least squares of shell-averaged log trace against the
/// shell-averaged negated barrier, over integer-cell annuli around the pole.
#[derive(Debug, Clone)]
pub struct ShellRegression {
    /// Fitted exponent: the trace degenerates like `e^{-slope * psi}`.
    pub slope: f64,
    /// Multiplier in front of the exponential, `exp` of the fitted intercept.
    pub coefficient: f64,
    pub r_squared: f64,
    /// Per-annulus samples `(mean -psi, mean log trace)`, inner shell first.
    pub shells: Vec<(f64, f64)>,
}

/// Report of the barrier-adjusted log-trace quantity and the two-sided metric
/// equivalence derived from it.
#[derive(Debug, Clone)]
pub struct TraceBoundReport {
    /// `(t, sup Q)` with `Q = log tr - a * phitilde + 1/(phitilde + c0)`.
    pub q_sup: Vec<(f64, f64)>,
    /// Peak-to-trough spread of the sup curve over the final third.
    pub q_spread: f64,
    /// True when the running maximum of `sup Q` still climbs by more than 1%
    /// over the final third of the run: growth without a visible bound.
    pub q_drifting: bool,
    /// Whether `0 < 1/(phitilde + c0) <= 1` held at every unmasked point.
    pub frac_invariant_ok: bool,
    /// Shell regression of the trace against the barrier; `None` when the
    /// barrier vanishes identically and there is nothing to regress on.
    pub regression: Option<ShellRegression>,
    /// Fitted two-sided equivalence constant: with `C` the regression slope
    /// (zero without a barrier), `(e^{C psi} / c) omega0 <= omega <=
    /// (c / e^{C psi}) omega0` holds at every unmasked point with `c` equal to
    /// this value.
    pub c_equiv: f64,
    /// True when the equivalence constant is finite (the evolved metric never
    /// loses rank against the initial one on the unmasked set).
    pub equivalence_ok: bool,
    /// Informational: the regression slope and the ladder coefficient
    /// disagree by more than a factor of two.
    pub slope_vs_a_flag: bool,
}

/// Annulus range (in cells) used by the shell regression; chosen outside the
/// standard pole mask and inside the first period's quarter.
const SHELL_RANGE: (usize, usize) = (5, 12);

fn shell_regression(
    bg: &BackgroundData,
    snap: &Snapshot,
    log_trace: &ScalarField,
) -> Result<ShellRegression> {
    let chart = *bg.chart();
    let res = chart.resolution();
    let (lo, hi) = SHELL_RANGE;
    let nshell = hi - lo + 1;
    let mut sum_x = vec![0.0f64; nshell];
    let mut sum_y = vec![0.0f64; nshell];
    let mut count = vec![0usize; nshell];
    let mut multi = vec![0usize; chart.axes()];
    for p in 0..chart.points() {
        if bg.mask().is_excluded(p) {
            continue;
        }
        chart.multi_index(p, &mut multi);
        let d0 = multi[0].min(res - multi[0]) as f64;
        let d1 = multi[1].min(res - multi[1]) as f64;
        let shell = (d0 * d0 + d1 * d1).sqrt().floor() as usize;
        if shell < lo || shell > hi {
            continue;
        }
        sum_x[shell - lo] += -bg.psi().data[p];
        sum_y[shell - lo] += log_trace.data[p];
        count[shell - lo] += 1;
    }
    let shells: Vec<(f64, f64)> = (0..nshell)
        .filter(|&s| count[s] > 0)
        .map(|s| (sum_x[s] / count[s] as f64, sum_y[s] / count[s] as f64))
        .collect();
    if shells.len() < 3 {
        return Err(CrfError::InvalidParam(format!(
            "shell regression found only {} populated annuli in [{lo}, {hi}] at resolution {res} \
             (snapshot t = {:.3})",
            shells.len(),
            snap.t
        )));
    }
    let m = shells.len() as f64;
    let mean_x = shells.iter().map(|s| s.0).sum::<f64>() / m;
    let mean_y = shells.iter().map(|s| s.1).sum::<f64>() / m;
    let sxx: f64 = shells.iter().map(|s| (s.0 - mean_x).powi(2)).sum();
    let sxy: f64 = shells.iter().map(|s| (s.0 - mean_x) * (s.1 - mean_y)).sum();
    let syy: f64 = shells.iter().map(|s| (s.1 - mean_y).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(CrfError::InvalidParam(
            "shell regression has no spread in the barrier values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = shells
        .iter()
        .map(|s| (s.1 - (intercept + slope * s.0)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(ShellRegression {
        slope,
        coefficient: intercept.exp(),
        r_squared,
        shells,
    })
}

/// Evaluate the barrier-adjusted log-trace quantity along the run, regress
/// the trace against the barrier on annuli around the pole, and fit the
/// two-sided equivalence constant.
pub fn check_trace_bound(
    traj: &Trajectory,
    bg: &BackgroundData,
    consts: &ChosenConstants,
) -> Result<TraceBoundReport> {
    expect_snapshots(traj, 1, "check_trace_bound")?;
    let mask = bg.mask();
    let omega0 = bg.omega0();
    let has_barrier = bg.psi().sup_abs() > 1e-13;

    let mut q_sup = Vec::with_capacity(traj.snapshots.len());
    let mut frac_ok = true;
    let mut regression = None;
    let mut sup_upper = f64::NEG_INFINITY;
    let mut sup_lower = f64::NEG_INFINITY;

    // The regression (and with it the weight exponent) comes from the final
    // snapshot, so run that fit first.
    if has_barrier {
        let last = traj.final_snapshot();
        let metric = snapshot_metric(bg, last)?;
        let log_trace = geometry::trace(omega0, metric.form())?.map(f64::ln);
        regression = Some(shell_regression(bg, last, &log_trace)?);
    }
    let slope = regression.as_ref().map_or(0.0, |r: &ShellRegression| r.slope);
    let weight = bg.psi().map(|v| (slope * v).exp());

    for snap in &traj.snapshots {
        let metric = snapshot_metric(bg, snap)?;
        let trace = geometry::trace(omega0, metric.form())?;
        let tilde = shifted_potential(bg, snap);
        if tilde.inf_unmasked(mask) + consts.c0 < 1.0 - 1e-12 {
            frac_ok = false;
        }
        let mut q = trace.map(f64::ln);
        q.add_scaled(&tilde, -consts.a);
        let q = q.zip_map(&tilde, |x, td| x + 1.0 / (td + consts.c0));
        q_sup.push((snap.t, q.sup_unmasked(mask)));

        let lam_max = geometry::max_eigenvalue(metric.form(), omega0)?;
        let lam_min = geometry::min_eigenvalue(metric.form(), omega0)?;
        sup_upper = sup_upper.max(lam_max.zip_map(&weight, |l, w| l * w).sup_unmasked(mask));
        sup_lower = sup_lower.max(lam_min.zip_map(&weight, |l, w| w / l).sup_unmasked(mask));
    }

    let c_equiv = sup_upper.max(sup_lower);
    let curve: Vec<f64> = q_sup.iter().map(|&(_, v)| v).collect();
    let slope_vs_a_flag = match &regression {
        Some(reg) => {
            if consts.a > 0.0 {
                let ratio = reg.slope / consts.a;
                !(0.5..=2.0).contains(&ratio)
            } else {
                reg.slope.abs() > 0.5
            }
        }
        None => false,
    };
    Ok(TraceBoundReport {
        q_spread: window_spread(&curve),
        q_drifting: running_max_drift(&curve) > 0.01,
        q_sup,
        frac_invariant_ok: frac_ok,
        regression,
        c_equiv,
        equivalence_ok: c_equiv.is_finite(),
        slope_vs_a_flag,
    })
}

// ---------------------------------------------------------------------------
// Evolution identities for the potential and its derived quantities.
// ---------------------------------------------------------------------------

/// Sup-norm residual curves of the four scalar evolution identities, at
/// interior snapshots where centered time differences exist. Each residual is
/// second order in the snapshot spacing.
#[derive(Debug, Clone)]
pub struct IdentityCurves {
    pub times: Vec<f64>,
    /// `(d/dt - Lap) phi = phidot - n + tr_omega(reference_t)`.
    pub potential: Vec<f64>,
    /// `(d/dt - Lap) phidot = tr_omega(limit - reference_t) - phidot`.
    pub rate: Vec<f64>,
    /// `(d/dt - Lap) phitilde = phidot - n + tr_omega(S_t)`.
    pub shifted: Vec<f64>,
    /// `(d/dt - Lap) 1/(phitilde + c0)` against its expanded right-hand side.
    pub reciprocal: Vec<f64>,
}

/// Check the four scalar evolution identities with centered time differences.
pub fn check_evolution_identities(
    traj: &Trajectory,
    bg: &BackgroundData,
    c0: f64,
) -> Result<IdentityCurves> {
    expect_snapshots(traj, 3, "check_evolution_identities")?;
    let interior = interior_indices(traj);
    if interior.is_empty() {
        return Err(CrfError::InvalidParam(
            "no interior snapshots with uniform spacing; cannot form centered differences".into(),
        ));
    }
    let mask = bg.mask();
    let n = bg.chart().n() as f64;
    let mut times = Vec::with_capacity(interior.len());
    let mut potential = Vec::with_capacity(interior.len());
    let mut rate = Vec::with_capacity(interior.len());
    let mut shifted = Vec::with_capacity(interior.len());
    let mut reciprocal = Vec::with_capacity(interior.len());

    for &(k, dt) in &interior {
        let prev = &traj.snapshots[k - 1];
        let here = &traj.snapshots[k];
        let next = &traj.snapshots[k + 1];
        let metric = snapshot_metric(bg, here)?;
        let half = 1.0 / (2.0 * dt);

        let dphi_dt = next.phi.zip_map(&prev.phi, |a, b| (a - b) * half);
        let dphidot_dt = next.phidot.zip_map(&prev.phidot, |a, b| (a - b) * half);

        let hess_phi = geometry::ddbar(&here.phi)?;
        let lap_phi = geometry::trace(&metric, &hess_phi)?;
        let tr_ref = geometry::trace(&metric, &bg.reference_metric(here.t))?;
        let lhs_a = dphi_dt.zip_map(&lap_phi, |a, b| a - b);
        let rhs_a = here.phidot.zip_map(&tr_ref, |pd, tr| pd - n + tr);
        times.push(here.t);
        potential.push(lhs_a.zip_map(&rhs_a, |a, b| a - b).sup_abs_unmasked(mask));

        let lap_phidot = geometry::laplacian(&metric, &here.phidot)?;
        let tr_inf = geometry::trace(&metric, bg.omega_inf())?;
        let lhs_b = dphidot_dt.zip_map(&lap_phidot, |a, b| a - b);
        let mut rhs_b = tr_inf.zip_map(&tr_ref, |i, r| i - r);
        rhs_b.add_scaled(&here.phidot, -1.0);
        rate.push(lhs_b.zip_map(&rhs_b, |a, b| a - b).sup_abs_unmasked(mask));

        // The shifted potential's Hessian uses the stored barrier Hessian, so
        // barrier sampling error never enters through second derivatives.
        let hess_tilde = hess_phi.add_scaled(bg.ddbar_psi(), -1.0);
        let lap_tilde = geometry::trace(&metric, &hess_tilde)?;
        let tr_s = geometry::trace(&metric, &bg.s_current(here.t))?;
        let lhs_c = dphi_dt.zip_map(&lap_tilde, |a, b| a - b);
        let rhs_c = here.phidot.zip_map(&tr_s, |pd, tr| pd - n + tr);
        shifted.push(lhs_c.zip_map(&rhs_c, |a, b| a - b).sup_abs_unmasked(mask));

        let tilde_prev = shifted_potential(bg, prev);
        let tilde_here = shifted_potential(bg, here);
        let tilde_next = shifted_potential(bg, next);
        let recip = |f: &ScalarField| f.map(|v| 1.0 / (v + c0));
        let w_here = recip(&tilde_here);
        let dw_dt = recip(&tilde_next).zip_map(&recip(&tilde_prev), |a, b| (a - b) * half);
        // The Laplacian of the reciprocal is discretized directly, so the
        // gradient term of the right-hand side is genuinely tested against it
        // rather than cancelling through a chain-rule shortcut.
        let lap_w = geometry::laplacian(&metric, &w_here)?;
        let grad_sq = grad_norm_sq(&metric, &tilde_here);
        let lhs_d = dw_dt.zip_map(&lap_w, |a, b| a - b);
        let drive = here.phidot.zip_map(&tr_s, |pd, tr| -pd + n - tr);
        let chart = *bg.chart();
        let rhs_d_data: Vec<f64> = (0..chart.points())
            .map(|p| {
                let w = w_here.data[p];
                drive.data[p] * w * w - 2.0 * grad_sq.data[p] * w * w * w
            })
            .collect();
        let rhs_d = ScalarField::from_vec(chart, rhs_d_data)?;
        reciprocal.push(lhs_d.zip_map(&rhs_d, |a, b| a - b).sup_abs_unmasked(mask));
    }
    Ok(IdentityCurves {
        times,
        potential,
        rate,
        shifted,
        reciprocal,
    })
}

// ---------------------------------------------------------------------------
// Log-trace evolution identity and inequality.
// ---------------------------------------------------------------------------

/// How identity checks form the time derivative of trace quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeDerivative {
    /// Centered differences of neighboring snapshots (interior points only).
    Centered,
    /// Exact substitution from the flow equation: the trace's time derivative
    /// is assembled from the stored rate and the reference family's own
    /// derivative, so every snapshot participates and no time-difference
    /// error enters.
    FromEquation,
}

/// Residuals of the full log-trace evolution identity and the fitted
/// inequality constant.
#[derive(Debug, Clone)]
pub struct LogTraceReport {
    pub times: Vec<f64>,
    /// Sup-norm residual of the full identity at each reported time.
    pub residual: Vec<f64>,
    /// Smallest `c >= 0` with `(d/dt - Lap) log tr <= (torsion-trace term) +
    /// c * tr_omega(omega0)` over all reported times and unmasked points.
    pub c_evo: f64,
    /// Sup norm of the initial metric's torsion (zero reduces the identity's
    /// torsion brackets to nothing, which is asserted rather than assumed).
    pub torsion_sup: f64,
}

/// Reference tensors of the initial metric shared across snapshots.
struct ReferenceTensors {
    inv0: Vec<Complex64>,
    gamma0: geometry::ChristoffelField,
    torsion0: TorsionField,
    curvature0: CurvatureField,
    /// `d_k (g0)_{i jbar}` per axis `k`, each `n^2` component arrays.
    dg0: Vec<Vec<Vec<Complex64>>>,
    /// `d_lbar (T0)^q_{jl'}` per axis `lbar`; empty when torsion vanishes.
    dbar_t0: Vec<Vec<Vec<Complex64>>>,
    torsion_sup: f64,
}

fn reference_tensors(bg: &BackgroundData) -> Result<ReferenceTensors> {
    let chart = *bg.chart();
    let n = chart.n();
    let g0 = bg.omega0();
    let inv0 = g0.inverse_blocks();
    let gamma0 = geometry::christoffels(g0)?;
    let torsion0 = geometry::torsion(g0)?;
    let curvature0 = geometry::chern_curvature(g0)?;
    let torsion_sup = torsion0.sup_norm();
    let mut dg0 = Vec::with_capacity(n);
    for k in 0..n {
        let mut per_comp = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                per_comp.push(spectral::dz(&chart, &g0.form().component(i, j), k));
            }
        }
        dg0.push(per_comp);
    }
    let mut dbar_t0 = Vec::new();
    if torsion_sup > 1e-13 {
        let bl = n * n * n;
        for axis in 0..n {
            let mut per_comp = Vec::with_capacity(bl);
            for comp in 0..bl {
                let series: Vec<Complex64> = (0..chart.points())
                    .map(|p| torsion0.data[p * bl + comp])
                    .collect();
                per_comp.push(spectral::dzbar(&chart, &series, axis));
            }
            dbar_t0.push(per_comp);
        }
    }
    Ok(ReferenceTensors {
        inv0,
        gamma0,
        torsion0,
        curvature0,
        dg0,
        dbar_t0,
        torsion_sup,
    })
}

/// Covariant derivative `(nabla0)_k g_{i jbar}` of an evolved metric against
/// the initial connection, as per-axis component arrays.
fn covariant_dg(
    bg: &BackgroundData,
    refs: &ReferenceTensors,
    metric: &MetricField,
) -> Vec<Vec<Vec<Complex64>>> {
    let chart = *bg.chart();
    let n = chart.n();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut per_comp = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let mut d = spectral::dz(&chart, &metric.form().component(i, j), k);
                for (p, slot) in d.iter_mut().enumerate() {
                    let block = metric.block(p);
                    let mut corr = Complex64::default();
                    for s in 0..n {
                        corr += refs.gamma0.get(p, s, k, i) * block[s * n + j];
                    }
                    *slot -= corr;
                }
                per_comp.push(d);
            }
        }
        out.push(per_comp);
    }
    out
}

/// Assemble the right-hand side of the full log-trace evolution identity at
/// one snapshot. The bracket combines: the negative-definite gradient terms
/// and their torsion corrections, the curvature contraction of the initial
/// metric, the decaying torsion terms carrying `e^{-t}` from the reference
/// family's derivative, the normalization's `-tr`, and the model-domain
/// closure `tr_{omega0}(limit - ddbar log Omega)`, which vanishes in the
/// geometric situation the identity models but not for independently chosen
/// limit form and volume density.
fn logtr_rhs(
    bg: &BackgroundData,
    refs: &ReferenceTensors,
    metric: &MetricField,
    u: &ScalarField,
    du: &[Vec<Complex64>],
    closure_tr: &ScalarField,
    t: f64,
) -> ScalarField {
    let chart = *bg.chart();
    let n = chart.n();
    let bl = n * n;
    let inv = metric.inverse_blocks();
    let dg = covariant_dg(bg, refs, metric);
    let decay = (-t).exp();
    let has_torsion = refs.torsion_sup > 1e-13;
    let g0 = bg.omega0();

    let data: Vec<f64> = (0..chart.points())
        .map(|pt| {
            let b = &inv[pt * bl..(pt + 1) * bl];
            let b0 = &refs.inv0[pt * bl..(pt + 1) * bl];
            let g = metric.block(pt);
            let g0b = g0.block(pt);
            let uval = u.data[pt];
            let mut bracket = Complex64::default();

            // Gradient terms: -g^{jbar p} g^{qbar i} g0^{lbar k}
            //   (nabla0)_k g_{i jbar} (nabla0)_lbar g_{p qbar}
            // plus the trace-gradient compensator (1/u) |d u|^2_g.
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            let b0lk = b0[l * n + k];
                            for p in 0..n {
                                for q in 0..n {
                                    bracket -= b[j * n + p]
                                        * b[q * n + i]
                                        * b0lk
                                        * dg[k][i * n + j][pt]
                                        * dg[l][q * n + p][pt].conj();
                                }
                            }
                        }
                    }
                }
            }
            for k in 0..n {
                for l in 0..n {
                    bracket += b[l * n + k] * du[k][pt] * du[l][pt].conj() / uval;
                }
            }

            if has_torsion {
                // -2 Re( g^{jbar i} g0^{lbar k} T0^p_{ki} (nabla0)_lbar g_{p jbar} )
                let mut cross = Complex64::default();
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            for l in 0..n {
                                for p in 0..n {
                                    cross += b[j * n + i]
                                        * b0[l * n + k]
                                        * refs.torsion0.get(pt, p, k, i)
                                        * dg[l][j * n + p][pt].conj();
                                }
                            }
                        }
                    }
                }
                bracket -= 2.0 * cross.re;
                // -g^{jbar i} g0^{lbar k} g_{p qbar} T0^p_{ik} conj(T0^q_{jl})
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            for l in 0..n {
                                for p in 0..n {
                                    for q in 0..n {
                                        bracket -= b[j * n + i]
                                            * b0[l * n + k]
                                            * g[p * n + q]
                                            * refs.torsion0.get(pt, p, i, k)
                                            * refs.torsion0.get(pt, q, j, l).conj();
                                    }
                                }
                            }
                        }
                    }
                }
            }

            // Second bracket: g^{jbar i} g0^{lbar k} g_{k qbar}
            //   ( (nabla0)_i conj(T0^q_{jl}) - R0_{i lbar p jbar} g0^{qbar p} ).
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            for q in 0..n {
                                let mut inner = Complex64::default();
                                if has_torsion {
                                    inner += refs.dbar_t0[i][(q * n + j) * n + l][pt].conj();
                                }
                                for p in 0..n {
                                    for s in 0..n {
                                        inner -= refs.curvature0.get(pt, i, l, p, s)
                                            * g0b[s * n + j]
                                            * b0[q * n + p];
                                    }
                                }
                                bracket += b[j * n + i] * b0[l * n + k] * g[k * n + q] * inner;
                            }
                        }
                    }
                }
            }

            if has_torsion {
                // Decaying bracket from the reference family's antiholomorphic
                // derivative: subtract
                //   e^{-t} g^{jbar i} g0^{lbar k} [ (nabla0)_i( conj(T0^p_{jl}) (g0)_{k pbar} )
                //     + (nabla0)_lbar( T0^p_{ik} (g0)_{p jbar} ) ]
                // and add back e^{-t} g^{jbar i} g0^{lbar k} conj(T0^q_{jl}) T0^p_{ik} (g0)_{p qbar}.
                let mut deriv = Complex64::default();
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            for l in 0..n {
                                let pre = b[j * n + i] * b0[l * n + k];
                                let mut p1 = Complex64::default();
                                for p in 0..n {
                                    p1 += refs.dbar_t0[i][(p * n + j) * n + l][pt].conj()
                                        * g0b[k * n + p]
                                        + refs.torsion0.get(pt, p, j, l).conj()
                                            * refs.dg0[i][k * n + p][pt];
                                }
                                for s in 0..n {
                                    let mut lowered = Complex64::default();
                                    for p in 0..n {
                                        lowered += refs.torsion0.get(pt, p, j, l).conj()
                                            * g0b[s * n + p];
                                    }
                                    p1 -= refs.gamma0.get(pt, s, i, k) * lowered;
                                }
                                let mut p2 = Complex64::default();
                                for p in 0..n {
                                    p2 += refs.dbar_t0[l][(p * n + i) * n + k][pt]
                                        * g0b[p * n + j]
                                        + refs.torsion0.get(pt, p, i, k)
                                            * refs.dg0[l][j * n + p][pt].conj();
                                }
                                for s in 0..n {
                                    let mut lowered = Complex64::default();
                                    for p in 0..n {
                                        lowered += refs.torsion0.get(pt, p, i, k)
                                            * g0b[p * n + s];
                                    }
                                    p2 -= refs.gamma0.get(pt, s, l, j).conj() * lowered;
                                }
                                deriv += pre * (p1 + p2);
                            }
                        }
                    }
                }
                bracket -= decay * deriv;
                let mut tt = Complex64::default();
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            for l in 0..n {
                                for p in 0..n {
                                    for q in 0..n {
                                        tt += b[j * n + i]
                                            * b0[l * n + k]
                                            * refs.torsion0.get(pt, q, j, l).conj()
                                            * refs.torsion0.get(pt, p, i, k)
                                            * g0b[p * n + q];
                                    }
                                }
                            }
                        }
                    }
                }
                bracket += decay * tt;
            }

            (bracket.re - uval + closure_tr.data[pt]) / uval
        })
        .collect();
    ScalarField::from_vec(chart, data).expect("log-trace right-hand side is finite")
}

/// Torsion-trace term of the inequality form:
/// `(2/u^2) Re( g^{lbar k} T0^p_{kp} d_lbar u )`.
fn torsion_trace_term(
    refs: &ReferenceTensors,
    metric: &MetricField,
    u: &ScalarField,
    du: &[Vec<Complex64>],
) -> ScalarField {
    let chart = *metric.chart();
    let n = chart.n();
    let bl = n * n;
    let inv = metric.inverse_blocks();
    let data = (0..chart.points())
        .map(|pt| {
            if refs.torsion_sup <= 1e-13 {
                return 0.0;
            }
            let b = &inv[pt * bl..(pt + 1) * bl];
            let mut acc = Complex64::default();
            for k in 0..n {
                for l in 0..n {
                    let mut tr = Complex64::default();
                    for p in 0..n {
                        tr += refs.torsion0.get(pt, p, k, p);
                    }
                    acc += b[l * n + k] * tr * du[l][pt].conj();
                }
            }
            let uval = u.data[pt];
            2.0 * acc.re / (uval * uval)
        })
        .collect();
    ScalarField::from_vec(chart, data).expect("torsion trace term is finite")
}

/// Check the full evolution identity of `log tr_{omega0} omega` and fit the
/// constant of its inequality form.
pub fn check_logtr_evolution(
    traj: &Trajectory,
    bg: &BackgroundData,
    mode: TimeDerivative,
) -> Result<LogTraceReport> {
    expect_snapshots(traj, 1, "check_logtr_evolution")?;
    let mask = bg.mask();
    let omega0 = bg.omega0();
    let refs = reference_tensors(bg)?;
    let log_density = ScalarField::from_vec(
        *bg.chart(),
        bg.volume_form().density.iter().map(|d| d.ln()).collect(),
    )?;
    let closure_form = bg
        .omega_inf()
        .add_scaled(&geometry::ddbar(&log_density)?, -1.0);
    let closure_tr = geometry::trace(omega0, &closure_form)?;
    let tr_inf = geometry::trace(omega0, bg.omega_inf())?;
    let n = bg.chart().n() as f64;

    // Traces at every snapshot (cheap; needed by centered differences).
    let mut traces = Vec::with_capacity(traj.snapshots.len());
    for snap in &traj.snapshots {
        let form = bg
            .reference_metric(snap.t)
            .add_scaled(&geometry::ddbar(&snap.phi)?, 1.0);
        traces.push(geometry::trace(omega0, &form)?);
    }

    let worklist: Vec<(usize, Option<f64>)> = match mode {
        TimeDerivative::Centered => {
            let interior = interior_indices(traj);
            if interior.is_empty() {
                return Err(CrfError::InvalidParam(
                    "no interior snapshots with uniform spacing for centered differences".into(),
                ));
            }
            interior.into_iter().map(|(k, dt)| (k, Some(dt))).collect()
        }
        TimeDerivative::FromEquation => (0..traj.snapshots.len()).map(|k| (k, None)).collect(),
    };

    let mut times = Vec::with_capacity(worklist.len());
    let mut residual = Vec::with_capacity(worklist.len());
    let mut c_evo = 0.0f64;
    for (k, dt) in worklist {
        let snap = &traj.snapshots[k];
        let u = &traces[k];
        if u.inf() <= 0.0 {
            return Err(CrfError::DegenerateMetric {
                index: 0,
                detail: format!("trace against the initial metric vanished at t = {:.3}", snap.t),
            });
        }
        let metric = snapshot_metric(bg, snap)?;
        let log_u = u.map(f64::ln);
        let du: Vec<Vec<Complex64>> = (0..bg.chart().n())
            .map(|i| geometry::dz_scalar(u, i))
            .collect();

        let dt_log_u = match dt {
            Some(dt) => {
                let prev = traces[k - 1].map(f64::ln);
                let next = traces[k + 1].map(f64::ln);
                next.zip_map(&prev, |a, b| (a - b) / (2.0 * dt))
            }
            None => {
                // d/dt tr = tr_{omega0}(ddbar phidot) - e^{-t} (n - tr_{omega0} limit).
                let hess_rate = geometry::ddbar(&snap.phidot)?;
                let tr_hess = geometry::trace(omega0, &hess_rate)?;
                let decay = (-snap.t).exp();
                tr_hess
                    .zip_map(&tr_inf, |h, ti| h - decay * (n - ti))
                    .zip_map(u, |num, den| num / den)
            }
        };
        let lap_log_u = geometry::laplacian(&metric, &log_u)?;
        let lhs = dt_log_u.zip_map(&lap_log_u, |a, b| a - b);

        let rhs = logtr_rhs(bg, &refs, &metric, u, &du, &closure_tr, snap.t);
        times.push(snap.t);
        residual.push(lhs.zip_map(&rhs, |a, b| a - b).sup_abs_unmasked(mask));

        let torsion_term = torsion_trace_term(&refs, &metric, u, &du);
        let tr_back = geometry::trace(&metric, omega0.form())?;
        let ratio = lhs
            .zip_map(&torsion_term, |l, tt| l - tt)
            .zip_map(&tr_back, |num, den| num / den);
        c_evo = c_evo.max(ratio.sup_unmasked(mask));
    }
    Ok(LogTraceReport {
        times,
        residual,
        c_evo: c_evo.max(0.0),
        torsion_sup: refs.torsion_sup,
    })
}

// ---------------------------------------------------------------------------
// Per-snapshot diagnostics records.
// ---------------------------------------------------------------------------

/// Residuals of the scalar evolution identities at one interior snapshot.
#[derive(Debug, Clone, Copy)]
pub struct IdentityResiduals {
    pub potential: f64,
    pub rate: f64,
    pub shifted: f64,
    pub reciprocal: f64,
    pub log_trace: f64,
}

/// One row of the diagnostics table: everything the monitoring estimates need
/// at a single snapshot time.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub sup_phi: f64,
    pub sup_phidot: f64,
    pub sup_volume_ratio: f64,
    /// Infimum of `log(omega^n / (e^{eps psi} Omega))` per [`EPS_GRID`] entry.
    pub inf_q_eps: [f64; 4],
    pub sup_trace: f64,
    /// Sup of the trace weighted by the fitted barrier exponent,
    /// `tr_{omega0}(omega) * e^{C psi}`.
    pub sup_trace_weighted: f64,
    pub q_trace_sup: f64,
    pub s_min_eig: f64,
    /// `sup |Ric(omega) + omega|` over unmasked points.
    pub einstein_residual: f64,
    /// Present at interior snapshots with uniform spacing on both sides.
    pub identity_residuals: Option<IdentityResiduals>,
}

/// Full estimate suite: fitted constants and reports plus the per-snapshot
/// record table.
#[derive(Debug, Clone)]
pub struct EstimateSuite {
    pub upper: UpperBounds,
    pub lower: LowerBounds,
    pub constants: ChosenConstants,
    pub trace: TraceBoundReport,
    pub identities: IdentityCurves,
    pub log_trace: LogTraceReport,
    pub records: Vec<DiagnosticsRecord>,
}

/// Run every estimate over a stored trajectory and assemble the per-snapshot
/// diagnostics table. `t1` is the onset time for the rate bound.
pub fn full_diagnostics(
    traj: &Trajectory,
    bg: &BackgroundData,
    t1: f64,
) -> Result<EstimateSuite> {
    expect_snapshots(traj, 3, "full_diagnostics")?;
    let upper = check_upper_bounds(traj, bg, t1)?;
    let lower = check_lower_bounds(traj, bg, &EPS_GRID)?;
    let constants = choose_constants(traj, bg)?;
    let trace = check_trace_bound(traj, bg, &constants)?;
    let identities = check_evolution_identities(traj, bg, constants.c0)?;
    let log_trace = check_logtr_evolution(traj, bg, TimeDerivative::Centered)?;

    let mask = bg.mask();
    let omega0 = bg.omega0();
    let slope = trace.regression.as_ref().map_or(0.0, |r| r.slope);
    let weight = bg.psi().map(|v| (slope * v).exp());
    let mut records = Vec::with_capacity(traj.snapshots.len());
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let metric = snapshot_metric(bg, snap)?;
        let tr = geometry::trace(omega0, metric.form())?;
        let log_ratio = snap.phi.zip_map(&snap.phidot, |a, b| a + b);
        let mut inf_q_eps = [0.0f64; 4];
        for (slot, &eps) in inf_q_eps.iter_mut().zip(EPS_GRID.iter()) {
            let mut q = log_ratio.clone();
            q.add_scaled(bg.psi(), -eps);
            *slot = q.inf_unmasked(mask);
        }
        let s_t = bg.s_current(snap.t);
        let s_min_eig = geometry::min_eigenvalue(&s_t, omega0)?.inf_unmasked(mask);
        let einstein = bg
            .ricci_form(&metric)?
            .add_scaled(metric.form(), 1.0)
            .sup_norm_unmasked(mask);
        let identity_residuals = identities
            .times
            .iter()
            .position(|&t| (t - snap.t).abs() < 1e-12)
            .map(|idx| IdentityResiduals {
                potential: identities.potential[idx],
                rate: identities.rate[idx],
                shifted: identities.shifted[idx],
                reciprocal: identities.reciprocal[idx],
                log_trace: log_trace
                    .times
                    .iter()
                    .position(|&t| (t - snap.t).abs() < 1e-12)
                    .map_or(f64::NAN, |j| log_trace.residual[j]),
            });
        records.push(DiagnosticsRecord {
            t: snap.t,
            sup_phi: snap.phi.sup_abs_unmasked(mask),
            sup_phidot: snap.phidot.sup_abs_unmasked(mask),
            sup_volume_ratio: log_ratio.map(f64::exp).sup_unmasked(mask),
            inf_q_eps,
            sup_trace: tr.sup_unmasked(mask),
            sup_trace_weighted: tr.zip_map(&weight, |a, b| a * b).sup_unmasked(mask),
            q_trace_sup: trace.q_sup[k].1,
            s_min_eig,
            einstein_residual: einstein,
            identity_residuals,
        });
    }
    Ok(EstimateSuite {
        upper,
        lower,
        constants,
        trace,
        identities,
        log_trace,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{
        matched_volume_density, scenario_degenerate, scenario_homogeneous, scenario_smooth,
    };
    use crate::flow::{self, FlowConfig, Scheme};
    use crate::grid::DiffMode;

    fn cfg(t_max: f64, cadence: f64, scheme: Scheme) -> FlowConfig {
        FlowConfig {
            scheme,
            t_max,
            snapshot_cadence: cadence,
            ..FlowConfig::default()
        }
    }

    fn accurate_rk4(t_max: f64, cadence: f64) -> FlowConfig {
        let mut c = cfg(t_max, cadence, Scheme::Rk4);
        c.dt_max = 0.01;
        c
    }

    // Constant-coefficient forcing (a0 = a_inf = 1, volume 1/2) has the closed
    // form phi = h (1 - e^{-t}), phidot = h e^{-t} with h = ln 2, so every
    // fitted bound is known exactly.
    #[test]
    fn upper_bounds_exact_for_homogeneous_forcing() {
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.0, 1.0, 0.5).unwrap();
        let traj = flow::run(&bg, &accurate_rk4(6.0, 0.25)).unwrap();
        let up = check_upper_bounds(&traj, &bg, 1.0).unwrap();
        let h = (2.0f64).ln();
        assert!((up.c_phi - h * (1.0 - (-6.0f64).exp())).abs() < 1e-7);
        // sup over t >= 1 of (h e^{-t}) e^t / t = h / t at t = 1.
        assert!((up.c_phidot - h).abs() < 1e-7, "c_phidot = {}", up.c_phidot);
        // phidot + phi == h identically, so the volume ratio is exactly 2.
        assert!((up.c_vol - 2.0).abs() < 1e-7, "c_vol = {}", up.c_vol);
        // The running max of |phi| still grows through the final third by
        // h (e^{-4} - e^{-6}) / (h (1 - e^{-6})); the rate and volume maxima sit
        // at their first sample and do not move.
        let expected_drift =
            ((-4.0f64).exp() - (-6.0f64).exp()) / (1.0 - (-6.0f64).exp());
        assert!((up.drift_phi - expected_drift).abs() < 1e-3);
        assert_eq!(up.drift_phidot, 0.0);
        assert!(up.drift_vol.abs() < 1e-12);
    }

    #[test]
    fn upper_bounds_trivial_at_fixed_point() {
        let vol = matched_volume_density(1, 1.5);
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.5, 1.5, vol).unwrap();
        let mut c = cfg(4.0, 0.25, Scheme::Rk4);
        c.min_time = 4.0; // a fixed point converges instantly; keep observing
        let traj = flow::run(&bg, &c).unwrap();
        let up = check_upper_bounds(&traj, &bg, 1.0).unwrap();
        assert!(up.c_phi < 1e-10);
        assert_eq!(up.c_phidot, 0.0);
        assert!((up.c_vol - 1.0).abs() < 1e-10);
    }

    #[test]
    fn upper_bounds_validates_onset_time() {
        let vol = matched_volume_density(1, 1.0);
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.0, 1.0, vol).unwrap();
        let traj = flow::run(&bg, &cfg(1.0, 0.25, Scheme::Rk4)).unwrap();
        assert!(check_upper_bounds(&traj, &bg, 0.0).is_err());
        assert!(check_upper_bounds(&traj, &bg, 5.0).is_err());
    }

    // With no barrier the weighted log ratio is phidot + phi = h for every
    // exponent: the floor is 0 and the infimum curve is flat at h.
    #[test]
    fn lower_bounds_constant_weighted_ratio() {
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.0, 1.0, 0.5).unwrap();
        let traj = flow::run(&bg, &accurate_rk4(6.0, 0.25)).unwrap();
        let low = check_lower_bounds(&traj, &bg, &EPS_GRID).unwrap();
        let h = (2.0f64).ln();
        assert_eq!(low.per_eps.len(), EPS_GRID.len());
        for e in &low.per_eps {
            assert_eq!(e.c_eps, 0.0);
            assert!((e.final_inf - h).abs() < 1e-7);
            assert!(!e.drifting);
        }
        assert!(check_lower_bounds(&traj, &bg, &[0.0]).is_err());
    }

    #[test]
    fn ladder_coefficient_worked_examples() {
        // Evolution constant 3 against eigenvalue floor 1/4: (a+1)/4 >= 4.
        assert_eq!(ladder_coefficient(3.0, 0.25).unwrap(), 15.0);
        assert_eq!(ladder_coefficient(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(ladder_coefficient(0.0, 0.5).unwrap(), 1.0);
        assert_eq!(ladder_coefficient(1.0, 0.5).unwrap(), 3.0);
        // Roundoff just above an exact rung still lands on it.
        assert_eq!(ladder_coefficient(1.0 + 1e-12, 0.5).unwrap(), 3.0);
        assert!(ladder_coefficient(1.0, 0.0).is_err());
        assert!(ladder_coefficient(-0.5, 1.0).is_err());
    }

    // Volume e^3 drives phi = -3 (1 - e^{-t}) down to -3, so the shift lands
    // at 4; the reference family is already its own limit, so the ladder
    // stays at the bottom rung.
    #[test]
    fn choose_constants_shift_matches_worked_example() {
        let vol = 3.0f64.exp();
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.0, 1.0, vol).unwrap();
        let traj = flow::run(&bg, &cfg(20.0, 0.25, Scheme::Rk4)).unwrap();
        let consts = choose_constants(&traj, &bg).unwrap();
        assert!((consts.c0 - 4.0).abs() < 1e-5, "c0 = {}", consts.c0);
        assert!((consts.s_min_eig - 1.0).abs() < 1e-12);
        assert!(consts.c_evo < 1e-9, "c_evo = {}", consts.c_evo);
        assert_eq!(consts.a, 0.0);
    }

    // Shrinking reference family: the eigenvalue floor over [t0, infinity) is
    // the limit ratio 1/2, and with a vanishing evolution constant the ladder
    // picks a = 1.
    #[test]
    fn choose_constants_ladder_from_reference_pinch() {
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 2.0, 1.0, 1.0).unwrap();
        let traj = flow::run(&bg, &accurate_rk4(3.0, 0.25)).unwrap();
        let consts = choose_constants(&traj, &bg).unwrap();
        assert!((consts.s_min_eig - 0.5).abs() < 1e-12);
        assert!(consts.c_evo < 1e-9, "c_evo = {}", consts.c_evo);
        assert_eq!(consts.a, 1.0);
        assert!(consts.t0 >= 0.0 && consts.t0.is_finite());
    }

    // At the fixed point the trace is constantly n and the shifted potential
    // vanishes, so Q = log n + 1/c0 never moves and both equivalence
    // directions hold with constant 1.
    #[test]
    fn trace_bound_constant_q_at_fixed_point() {
        let vol = matched_volume_density(1, 1.0);
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.0, 1.0, vol).unwrap();
        let mut c = cfg(4.0, 0.25, Scheme::Rk4);
        c.min_time = 4.0;
        let traj = flow::run(&bg, &c).unwrap();
        let consts = choose_constants(&traj, &bg).unwrap();
        let rep = check_trace_bound(&traj, &bg, &consts).unwrap();
        let expected = 1.0 / consts.c0; // log 1 - a*0 + 1/c0 with a = 0.
        for &(_, q) in &rep.q_sup {
            assert!((q - expected).abs() < 1e-10, "q = {q}");
        }
        assert!(rep.q_spread < 1e-12);
        assert!(!rep.q_drifting);
        assert!(rep.frac_invariant_ok);
        assert!(rep.regression.is_none());
        assert!((rep.c_equiv - 1.0).abs() < 1e-10);
        assert!(rep.equivalence_ok);
        assert!(!rep.slope_vs_a_flag);
    }

    #[test]
    fn evolution_identities_vanish_at_fixed_point() {
        let vol = matched_volume_density(1, 1.0);
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.0, 1.0, vol).unwrap();
        let mut c = cfg(2.0, 0.25, Scheme::Rk4);
        c.min_time = 2.0;
        let traj = flow::run(&bg, &c).unwrap();
        let ids = check_evolution_identities(&traj, &bg, 1.0).unwrap();
        for k in 0..ids.times.len() {
            assert!(ids.potential[k] < 1e-12);
            assert!(ids.rate[k] < 1e-12);
            assert!(ids.shifted[k] < 1e-12);
            assert!(ids.reciprocal[k] < 1e-12);
        }
    }

    // Centered differences make every identity residual second order in the
    // snapshot cadence; halving the cadence divides each by about four.
    #[test]
    fn evolution_identities_second_order_in_cadence() {
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 2.0, 1.0, 1.0).unwrap();
        let coarse = flow::run(&bg, &accurate_rk4(1.0, 0.25)).unwrap();
        let fine = flow::run(&bg, &accurate_rk4(1.0, 0.125)).unwrap();
        let ic = check_evolution_identities(&coarse, &bg, 1.0).unwrap();
        let jf = check_evolution_identities(&fine, &bg, 1.0).unwrap();
        let at = |c: &IdentityCurves, t: f64| -> usize {
            c.times.iter().position(|&x| (x - t).abs() < 1e-9).unwrap()
        };
        let (a, b) = (at(&ic, 0.5), at(&jf, 0.5));
        for (cc, ff) in [
            (&ic.potential, &jf.potential),
            (&ic.rate, &jf.rate),
            (&ic.shifted, &jf.shifted),
            (&ic.reciprocal, &jf.reciprocal),
        ] {
            let ratio = cc[a] / ff[b];
            assert!((3.0..=5.0).contains(&ratio), "ratio = {ratio}");
        }
    }

    // With the time derivative taken from the equation itself the log-trace
    // identity is exact up to spatial truncation, which is spectral: both
    // sides are assembled independently and the residual floors at the level
    // of roundoff amplification.
    #[test]
    fn logtr_identity_spectrally_exact_without_torsion() {
        let bg = scenario_smooth(32, 1, DiffMode::Spectral).unwrap();
        let traj = flow::run(&bg, &cfg(0.5, 0.125, Scheme::Imex)).unwrap();
        let rep = check_logtr_evolution(&traj, &bg, TimeDerivative::FromEquation).unwrap();
        assert!(rep.torsion_sup < 1e-13, "conformal n=1 metrics are torsion-free");
        for &r in &rep.residual {
            assert!(r < 1e-9, "residual {r:.3e}");
        }
        assert!(rep.c_evo > 1.0 && rep.c_evo < 30.0, "c_evo = {}", rep.c_evo);
    }

    // The torsion-carrying case exercises every bracket of the identity:
    // residuals must fall spectrally with resolution, which rules out any
    // misplaced index or conjugation in the assembly (an algebraic mismatch
    // would plateau at order one).
    #[test]
    fn logtr_identity_converges_with_torsion() {
        let run = |res: usize| -> f64 {
            let bg = scenario_smooth(res, 2, DiffMode::Spectral).unwrap();
            let traj = flow::run(&bg, &cfg(0.25, 0.125, Scheme::Imex)).unwrap();
            let rep = check_logtr_evolution(&traj, &bg, TimeDerivative::FromEquation).unwrap();
            assert!(rep.torsion_sup > 0.9, "torsion_sup = {}", rep.torsion_sup);
            rep.residual.iter().cloned().fold(0.0, f64::max)
        };
        let coarse = run(12);
        let fine = run(16);
        assert!(coarse < 1e-2, "coarse residual {coarse:.3e}");
        assert!(fine < 5e-4, "fine residual {fine:.3e}");
        assert!(coarse / fine > 5.0, "expected spectral decay, got {coarse:.3e} -> {fine:.3e}");
    }

    #[test]
    fn logtr_centered_residual_is_second_order() {
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 2.0, 1.0, 1.0).unwrap();
        let coarse = flow::run(&bg, &accurate_rk4(1.0, 0.25)).unwrap();
        let fine = flow::run(&bg, &accurate_rk4(1.0, 0.125)).unwrap();
        let rc = check_logtr_evolution(&coarse, &bg, TimeDerivative::Centered).unwrap();
        let rf = check_logtr_evolution(&fine, &bg, TimeDerivative::Centered).unwrap();
        let ia = rc.times.iter().position(|&t| (t - 0.5).abs() < 1e-9).unwrap();
        let ib = rf.times.iter().position(|&t| (t - 0.5).abs() < 1e-9).unwrap();
        let ratio = rc.residual[ia] / rf.residual[ib];
        assert!((3.3..=4.7).contains(&ratio), "ratio = {ratio}");
    }

    // The barrier scenario's trace really does degenerate like a power of the
    // barrier: shell averages around the pole line up on log tr vs -psi with
    // a positive slope and tight fit, while the barrier-adjusted quantity
    // stays bounded once its constants are fitted.
    #[test]
    fn trace_shell_regression_recovers_barrier_coupling() {
        let bg = scenario_degenerate(64, 1, DiffMode::Spectral, 0.05, 1e-2).unwrap();
        let traj = flow::run(&bg, &cfg(8.0, 0.25, Scheme::Imex)).unwrap();
        let consts = choose_constants(&traj, &bg).unwrap();
        assert!(consts.s_min_eig > 0.1);
        assert!(consts.c0 > 1.0 && consts.c0 < 2.0, "c0 = {}", consts.c0);
        let rep = check_trace_bound(&traj, &bg, &consts).unwrap();
        let reg = rep.regression.as_ref().expect("barrier scenario regresses");
        assert!(reg.slope > 0.0, "slope = {}", reg.slope);
        assert!(reg.r_squared > 0.99, "r^2 = {}", reg.r_squared);
        assert!(reg.shells.len() >= 6);
        assert!(rep.q_spread < STABILITY_TOL, "q spread = {}", rep.q_spread);
        // At t = 8 the barrier quantity is still approaching its plateau from
        // below, so the conservative growth detector fires; it settles on
        // longer runs (the fixed-point test keeps it quiet).
        assert!(rep.q_drifting);
        assert!(rep.frac_invariant_ok);
        assert!(rep.equivalence_ok && rep.c_equiv >= 1.0);
        // The dipped initial metric carries curvature of order 1/dip^2 near
        // the mask ring, so the fitted evolution constant (and with it the
        // ladder coefficient) is legitimately much larger than the regression
        // slope; the informational flag records exactly that.
        assert!(rep.slope_vs_a_flag);
    }

    #[test]
    fn diagnostics_records_deterministic_and_coherent() {
        let bg = scenario_smooth(16, 1, DiffMode::Spectral).unwrap();
        let c = cfg(3.0, 0.25, Scheme::Imex);
        let first = full_diagnostics(&flow::run(&bg, &c).unwrap(), &bg, 1.0).unwrap();
        let second = full_diagnostics(&flow::run(&bg, &c).unwrap(), &bg, 1.0).unwrap();
        assert_eq!(first.records.len(), second.records.len());
        for (a, b) in first.records.iter().zip(second.records.iter()) {
            assert_eq!(a.sup_phi.to_bits(), b.sup_phi.to_bits());
            assert_eq!(a.q_trace_sup.to_bits(), b.q_trace_sup.to_bits());
            assert_eq!(a.einstein_residual.to_bits(), b.einstein_residual.to_bits());
            for (x, y) in a.inf_q_eps.iter().zip(b.inf_q_eps.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let recs = &first.records;
        // No barrier: every exponent column coincides and the trace weight is
        // the identity.
        for r in recs {
            for w in &r.inf_q_eps[1..] {
                assert_eq!(w.to_bits(), r.inf_q_eps[0].to_bits());
            }
            assert_eq!(r.sup_trace.to_bits(), r.sup_trace_weighted.to_bits());
            assert!(r.s_min_eig > 0.0);
            assert!(r.sup_trace > 0.0);
        }
        // Identity residuals exist exactly at interior snapshots.
        assert!(recs.first().unwrap().identity_residuals.is_none());
        assert!(recs.last().unwrap().identity_residuals.is_none());
        assert!(recs[recs.len() / 2].identity_residuals.is_some());
        let ids = recs[recs.len() / 2].identity_residuals.as_ref().unwrap();
        assert!(ids.log_trace.is_finite() && ids.potential.is_finite());
        // The flow is contracting toward its limit, so the Einstein-type
        // residual collapses along the run.
        let e0 = recs.first().unwrap().einstein_residual;
        let e1 = recs.last().unwrap().einstein_residual;
        assert!(e1 < e0 / 50.0, "einstein residual {e0:.3e} -> {e1:.3e}");
    }

    #[test]
    fn estimates_reject_undersized_trajectories() {
        let vol = matched_volume_density(1, 1.0);
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 1.0, 1.0, vol).unwrap();
        let traj = flow::run(&bg, &cfg(0.25, 0.25, Scheme::Rk4)).unwrap();
        assert!(check_evolution_identities(&traj, &bg, 1.0).is_err());
        assert!(check_logtr_evolution(&traj, &bg, TimeDerivative::Centered).is_err());
        assert!(full_diagnostics(&traj, &bg, 1.0).is_err());
    }
}
