//! Time evolution of the potential equation
//! `phidot = log((omega_hat_t + ddbar phi)^n / Omega) - phi`, `phi(0) = 0`,
//! with positivity guarded at every stage, plus the trajectory-level checks:
//! the flow identity `d omega/dt = -Ric(omega) - omega`, the monotone descent
//! quantity, and the exact solution of the spatially constant case.
//!
//! Two integrators are provided. `Rk4` is the default: explicit, fourth
//! order, with the step capped by `safety / lambda` where `lambda` bounds the
//! parabolic stiffness over the *occupied* bandwidth of the solution (a
//! spatially constant state occupies only the zero mode, so constant-data
//! runs step at `dt_max` and reduce exactly to the scalar equation). `Imex`
//! treats a dominating constant-coefficient Helmholtz part implicitly
//! (second-order backward differentiation with extrapolated nonlinearity) and
//! steps at a fixed fraction of the snapshot cadence regardless of spatial
//! resolution; it exists because the explicit cap is quadratic in resolution
//! and makes long high-resolution runs impractical.

use crate::background::BackgroundData;
use crate::error::{CrfError, Result};
use crate::field::{Form11Field, MetricField, ScalarField};
use crate::geometry;
use crate::grid::GridChart;
use crate::linalg;
use crate::spectral;

/// Time integrator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
    Imex,
}

/// Run configuration. `min_time` postpones the convergence stop so a run can
/// be forced to cover a full observation window even after `sup |phidot|`
/// drops below tolerance; stability-window diagnostics need that.
#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    pub dt_initial: f64,
    pub dt_max: f64,
    pub safety: f64,
    pub scheme: Scheme,
    pub t_max: f64,
    pub convergence_tol: f64,
    pub positivity_floor: f64,
    pub min_time: f64,
    pub snapshot_cadence: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt_initial: 0.0125,
            dt_max: 0.25,
            safety: 0.8,
            scheme: Scheme::Rk4,
            t_max: 30.0,
            convergence_tol: 1e-6,
            positivity_floor: 1e-10,
            min_time: 0.0,
            snapshot_cadence: 0.25,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("dt_initial", self.dt_initial),
            ("dt_max", self.dt_max),
            ("safety", self.safety),
            ("t_max", self.t_max),
            ("convergence_tol", self.convergence_tol),
            ("positivity_floor", self.positivity_floor),
            ("snapshot_cadence", self.snapshot_cadence),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CrfError::InvalidParam(format!(
                    "flow config field {name} = {v} must be positive and finite"
                )));
            }
        }
        if self.safety >= 1.0 {
            return Err(CrfError::InvalidParam(format!(
                "safety factor {} must sit in (0, 1)",
                self.safety
            )));
        }
        if self.convergence_tol < 1e-10 {
            return Err(CrfError::InvalidParam(format!(
                "convergence tolerance {} below the supported 1e-10",
                self.convergence_tol
            )));
        }
        if self.min_time < 0.0 || !self.min_time.is_finite() {
            return Err(CrfError::InvalidParam(format!(
                "min_time {} must be nonnegative and finite",
                self.min_time
            )));
        }
        Ok(())
    }
}

/// Instantaneous state of the evolution. `phidot` and `omega` are caches of
/// the equation's right-hand side and of `omega_hat_t + ddbar phi` at `t`;
/// every constructor and stepper leaves them fresh.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub phi: ScalarField,
    pub phidot: ScalarField,
    pub omega: MetricField,
    pub step_count: u64,
}

impl FlowState {
    /// The initial condition `phi = 0` at `t = 0`.
    pub fn initial(bg: &BackgroundData) -> Result<Self> {
        let phi = ScalarField::zeros(*bg.chart());
        let (phidot, omega) = rhs_with_metric(bg, &phi, 0.0)?;
        Ok(Self {
            t: 0.0,
            phi,
            phidot,
            omega,
            step_count: 0,
        })
    }
}

/// One stored trajectory point.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub phi: ScalarField,
    pub phidot: ScalarField,
    /// `sup |phidot|` over unmasked points, cached at emission time.
    pub sup_phidot: f64,
}

/// Immutable run record: snapshots at a uniform cadence (plus a trailing
/// off-cadence snapshot when the run stops between cadence points).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub cadence: f64,
    pub converged: bool,
    pub steps: u64,
}

impl Trajectory {
    /// Earliest snapshot time with `sup |phidot| < tol`, if any.
    pub fn first_time_below(&self, tol: f64) -> Option<f64> {
        self.snapshots
            .iter()
            .find(|s| s.sup_phidot < tol)
            .map(|s| s.t)
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory never empty")
    }
}

/// Right-hand side `log((omega_hat_t + ddbar phi)^n / Omega) - phi`.
pub fn rhs(bg: &BackgroundData, phi: &ScalarField, t: f64) -> Result<ScalarField> {
    rhs_with_metric(bg, phi, t).map(|(f, _)| f)
}

/// Right-hand side together with the metric it certified positive.
pub fn rhs_with_metric(
    bg: &BackgroundData,
    phi: &ScalarField,
    t: f64,
) -> Result<(ScalarField, MetricField)> {
    bg.chart().check_same_geometry(phi.chart(), "flow potential")?;
    let form = bg.reference_metric(t).add_scaled(&geometry::ddbar(phi)?, 1.0);
    let (lo, index) = min_eig_with_index(&form);
    if lo <= 0.0 {
        return Err(CrfError::PositivityLoss {
            t,
            index,
            eigenvalue: lo,
            floor: 0.0,
        });
    }
    let metric = MetricField::try_new(form)?;
    let density = geometry::top_power(metric.form())?;
    let mut out = density.ratio(bg.volume_form()).map(f64::ln);
    out.add_scaled(phi, -1.0);
    out.assert_finite("flow right-hand side")?;
    Ok((out, metric))
}

fn min_eig_with_index(form: &Form11Field) -> (f64, usize) {
    let n = form.chart().n();
    let mut lo = f64::INFINITY;
    let mut at = 0;
    for p in 0..form.chart().points() {
        let (l, _) = linalg::eig_range_hermitian(n, form.block(p));
        if l < lo {
            lo = l;
            at = p;
        }
    }
    (lo, at)
}

/// Parabolic stiffness bound of the linearized equation at this state over
/// the bandwidth the solution actually occupies: `1` for the reaction part
/// plus `max_p tr_omega(flat) * (1/4) sum_axes k_active^2` for the diffusion
/// part, with the active band taken as the union of the bands of `phi` and
/// `phidot` (the forcing injects its own band into the next step).
fn stiffness_bound(state: &FlowState) -> f64 {
    let chart = state.phi.chart();
    let id = Form11Field::scaled_identity(*chart, 1.0);
    let tr = geometry::trace(&state.omega, &id).expect("chart match");
    let k_phi = spectral::active_wavenumbers(chart, &state.phi.data, 1e-13);
    let k_pd = spectral::active_wavenumbers(chart, &state.phidot.data, 1e-13);
    let k2: f64 = k_phi
        .iter()
        .zip(&k_pd)
        .map(|(&a, &b)| {
            let k = a.max(b);
            k * k
        })
        .sum();
    1.0 + tr.sup() * 0.25 * k2
}

fn retryable(err: &CrfError) -> bool {
    matches!(
        err,
        CrfError::PositivityLoss { .. } | CrfError::NonFinite { .. }
    )
}

fn rk4_attempt(
    state: &FlowState,
    dt: f64,
    bg: &BackgroundData,
    floor: f64,
) -> Result<FlowState> {
    let t = state.t;
    let k1 = &state.phidot;
    let mut s2 = state.phi.clone();
    s2.add_scaled(k1, 0.5 * dt);
    let (k2, _) = rhs_with_metric(bg, &s2, t + 0.5 * dt)?;
    let mut s3 = state.phi.clone();
    s3.add_scaled(&k2, 0.5 * dt);
    let (k3, _) = rhs_with_metric(bg, &s3, t + 0.5 * dt)?;
    let mut s4 = state.phi.clone();
    s4.add_scaled(&k3, dt);
    let (k4, _) = rhs_with_metric(bg, &s4, t + dt)?;
    let mut phi = state.phi.clone();
    phi.add_scaled(k1, dt / 6.0);
    phi.add_scaled(&k2, dt / 3.0);
    phi.add_scaled(&k3, dt / 3.0);
    phi.add_scaled(&k4, dt / 6.0);
    phi.assert_finite("stepped potential")?;
    finish_step(state, phi, t + dt, bg, floor)
}

/// Validate the stepped potential, refresh caches, enforce the positivity
/// floor on the accepted metric.
fn finish_step(
    state: &FlowState,
    phi: ScalarField,
    t_next: f64,
    bg: &BackgroundData,
    floor: f64,
) -> Result<FlowState> {
    let (phidot, omega) = rhs_with_metric(bg, &phi, t_next)?;
    let (lo, index) = min_eig_with_index(omega.form());
    if lo <= floor {
        return Err(CrfError::PositivityLoss {
            t: t_next,
            index,
            eigenvalue: lo,
            floor,
        });
    }
    Ok(FlowState {
        t: t_next,
        phi,
        phidot,
        omega,
        step_count: state.step_count + 1,
    })
}

fn rk4_step(
    state: &FlowState,
    cfg: &FlowConfig,
    bg: &BackgroundData,
    dt_cap: f64,
) -> Result<FlowState> {
    let lambda = stiffness_bound(state);
    let mut dt = dt_cap.min(cfg.dt_max).min(cfg.safety / lambda);
    for retries in 0..=20u32 {
        if dt < 1e-12 {
            return Err(CrfError::FlowBreakdown {
                t: state.t,
                dt,
                retries,
            });
        }
        match rk4_attempt(state, dt, bg, cfg.positivity_floor) {
            Ok(next) => return Ok(next),
            Err(e) if retryable(&e) => dt *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(CrfError::FlowBreakdown {
        t: state.t,
        dt,
        retries: 20,
    })
}

/// Dominating implicit diffusion coefficient: a margin above the largest
/// eigenvalue of the inverse metric anywhere (`= 1 / min eig omega`).
fn imex_coefficient(omega: &MetricField) -> f64 {
    1.25 / omega.min_eigenvalue()
}

/// Nonlinear remainder `N(phi, t) = phidot - cbar * lap_flat(phi) + phi` of
/// the splitting `F = (cbar * lap_flat - 1) phi + N`.
fn imex_remainder(state: &FlowState, cbar: f64) -> Result<ScalarField> {
    let lap = geometry::flat_laplacian(&state.phi)?;
    let mut n = state.phidot.clone();
    n.add_scaled(&lap, -cbar);
    n.add_scaled(&state.phi, 1.0);
    Ok(n)
}

fn imex_euler_step(
    state: &FlowState,
    dt: f64,
    cbar: f64,
    bg: &BackgroundData,
    floor: f64,
) -> Result<FlowState> {
    let chart = state.phi.chart();
    let mut rhs_field = state.phi.map(|v| v / dt);
    rhs_field.add_scaled(&imex_remainder(state, cbar)?, 1.0);
    let sol = spectral::solve_helmholtz_flat(chart, &rhs_field.data, 1.0 / dt + 1.0, cbar);
    let phi = ScalarField::from_vec(*chart, sol)?;
    finish_step(state, phi, state.t + dt, bg, floor)
}

fn imex_sbdf2_step(
    state: &FlowState,
    prev_phi: &ScalarField,
    prev_remainder: &ScalarField,
    dt: f64,
    cbar: f64,
    bg: &BackgroundData,
    floor: f64,
) -> Result<FlowState> {
    let chart = state.phi.chart();
    let mut rhs_field = state.phi.zip_map(prev_phi, |a, b| (4.0 * a - b) / (2.0 * dt));
    rhs_field.add_scaled(&imex_remainder(state, cbar)?, 2.0);
    rhs_field.add_scaled(prev_remainder, -1.0);
    let sol = spectral::solve_helmholtz_flat(
        chart,
        &rhs_field.data,
        1.5 / dt + 1.0,
        cbar,
    );
    let phi = ScalarField::from_vec(*chart, sol)?;
    finish_step(state, phi, state.t + dt, bg, floor)
}

/// Advance one adaptive step. For `Rk4` this is one stiffness-capped step
/// with halve-and-retry on positivity loss. For `Imex` it is one first-order
/// implicit-explicit substep of size `min(dt_initial, dt_max)` — the building
/// block [`run`] bootstraps with; the production second-order march needs
/// two-step history and therefore lives inside [`run`].
pub fn step(state: &FlowState, cfg: &FlowConfig, bg: &BackgroundData) -> Result<FlowState> {
    cfg.validate()?;
    match cfg.scheme {
        Scheme::Rk4 => rk4_step(state, cfg, bg, cfg.dt_max),
        Scheme::Imex => {
            let cbar = imex_coefficient(&state.omega);
            imex_euler_step(
                state,
                cfg.dt_initial.min(cfg.dt_max),
                cbar,
                bg,
                cfg.positivity_floor,
            )
        }
    }
}

fn snapshot_of(state: &FlowState, bg: &BackgroundData) -> Snapshot {
    Snapshot {
        t: state.t,
        phi: state.phi.clone(),
        phidot: state.phidot.clone(),
        sup_phidot: state.phidot.sup_abs_unmasked(bg.mask()),
    }
}

/// Evolve from `phi = 0` until `t_max`, or until `sup |phidot|` over
/// unmasked points drops below `convergence_tol` once `t >= min_time`.
/// Snapshots are emitted at `t = 0` and every `snapshot_cadence` thereafter;
/// a final off-cadence snapshot is appended when the run stops between
/// cadence points.
pub fn run(bg: &BackgroundData, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let state = FlowState::initial(bg)?;
    match cfg.scheme {
        Scheme::Rk4 => run_rk4(state, bg, cfg),
        Scheme::Imex => run_imex(state, bg, cfg),
    }
}

fn converged_at(state: &FlowState, cfg: &FlowConfig, bg: &BackgroundData) -> bool {
    state.t >= cfg.min_time
        && state.phidot.sup_abs_unmasked(bg.mask()) < cfg.convergence_tol
}

fn seal(
    mut snapshots: Vec<Snapshot>,
    state: &FlowState,
    bg: &BackgroundData,
    cfg: &FlowConfig,
    converged: bool,
) -> Trajectory {
    let last_t = snapshots.last().map(|s| s.t).unwrap_or(f64::NEG_INFINITY);
    if (state.t - last_t).abs() > 1e-9 {
        snapshots.push(snapshot_of(state, bg));
    }
    Trajectory {
        snapshots,
        cadence: cfg.snapshot_cadence,
        converged,
        steps: state.step_count,
    }
}

fn run_rk4(mut state: FlowState, bg: &BackgroundData, cfg: &FlowConfig) -> Result<Trajectory> {
    let mut snapshots = vec![snapshot_of(&state, bg)];
    let mut snap_idx: u64 = 1;
    loop {
        if converged_at(&state, cfg, bg) {
            return Ok(seal(snapshots, &state, bg, cfg, true));
        }
        if state.t >= cfg.t_max - 1e-12 {
            return Ok(seal(snapshots, &state, bg, cfg, false));
        }
        let next_snap = (snap_idx as f64) * cfg.snapshot_cadence;
        let gap = next_snap - state.t;
        if gap < 1e-9 {
            snap_idx += 1;
            continue;
        }
        state = rk4_step(&state, cfg, bg, gap)?;
        if (state.t - next_snap).abs() < 1e-9 {
            snapshots.push(snapshot_of(&state, bg));
            snap_idx += 1;
        }
    }
}

fn run_imex(mut state: FlowState, bg: &BackgroundData, cfg: &FlowConfig) -> Result<Trajectory> {
    let cadence = cfg.snapshot_cadence;
    let mut substeps: u64 = {
        let target = cfg.dt_initial.min(cfg.dt_max);
        ((cadence / target).ceil() as u64).max(2)
    };
    let mut snapshots = vec![snapshot_of(&state, bg)];
    let mut halvings = 0u32;
    'outer: loop {
        if converged_at(&state, cfg, bg) {
            return Ok(seal(snapshots, &state, bg, cfg, true));
        }
        if state.t >= cfg.t_max - 1e-12 {
            return Ok(seal(snapshots, &state, bg, cfg, false));
        }
        // March one cadence segment at uniform dt; on positivity loss halve
        // the substep count and restart the segment from its entry state.
        let dt = cadence / substeps as f64;
        let segment_start = state.clone();
        let result: Result<FlowState> = (|| {
            let mut prev = segment_start.clone();
            // Bootstrap the two-step history with short first-order substeps.
            let boot = 20;
            let mut cur = {
                let mut s = segment_start.clone();
                for _ in 0..boot {
                    let cbar = imex_coefficient(&s.omega);
                    s = imex_euler_step(&s, dt / boot as f64, cbar, bg, cfg.positivity_floor)?;
                }
                s
            };
            for _ in 1..substeps {
                let cbar = imex_coefficient(&cur.omega);
                let prev_remainder = imex_remainder(&prev, cbar)?;
                let next = imex_sbdf2_step(
                    &cur,
                    &prev.phi,
                    &prev_remainder,
                    dt,
                    cbar,
                    bg,
                    cfg.positivity_floor,
                )?;
                prev = cur;
                cur = next;
            }
            Ok(cur)
        })();
        match result {
            Ok(next) => {
                state = next;
                // Land exactly on the cadence grid against float drift.
                state.t = (state.t / cadence).round() * cadence;
                snapshots.push(snapshot_of(&state, bg));
            }
            Err(e) if retryable(&e) => {
                halvings += 1;
                if halvings > 20 || cadence / (substeps as f64 * 2.0) < 1e-12 {
                    return Err(CrfError::FlowBreakdown {
                        t: segment_start.t,
                        dt,
                        retries: halvings,
                    });
                }
                substeps *= 2;
                state = segment_start;
                continue 'outer;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Exact potential of the spatially constant case as a scalar function:
/// `phi(t) = e^{-t} int_0^t e^s h(s) ds` with
/// `h(s) = n log(a_inf + (a0 - a_inf) e^{-s}) + log(n!) - log(volume)`,
/// evaluated by panel-doubling Gauss-Legendre quadrature to 1e-12.
pub fn homogeneous_potential(n: usize, a0: f64, a_inf: f64, volume_density: f64, t: f64) -> f64 {
    assert!(n >= 1 && a0 > 0.0 && a_inf > 0.0 && volume_density > 0.0 && t >= 0.0);
    if t == 0.0 {
        return 0.0;
    }
    let factorial: f64 = (1..=n).product::<usize>() as f64;
    let shift = factorial.ln() - volume_density.ln();
    // e^{-t} folded into the integrand keeps it O(1) for every t.
    let integrand =
        |s: f64| (s - t).exp() * ((n as f64) * (a_inf + (a0 - a_inf) * (-s).exp()).ln() + shift);
    // 8-point Gauss-Legendre nodes and weights on [-1, 1].
    const NODES: [f64; 8] = [
        -0.960_289_856_497_536_2,
        -0.796_666_477_413_626_7,
        -0.525_532_409_916_329,
        -0.183_434_642_495_649_8,
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_2,
    ];
    const WEIGHTS: [f64; 8] = [
        0.101_228_536_290_376_3,
        0.222_381_034_453_374_5,
        0.313_706_645_877_887_3,
        0.362_683_783_378_362,
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let composite = |panels: usize| -> f64 {
        let h = t / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let a = p as f64 * h;
            let mid = a + 0.5 * h;
            let half = 0.5 * h;
            for (x, w) in NODES.iter().zip(&WEIGHTS) {
                acc += w * half * integrand(mid + half * x);
            }
        }
        acc
    };
    let mut panels = 1usize;
    let mut value = composite(panels);
    for _ in 0..20 {
        panels *= 2;
        let refined = composite(panels);
        let done = (refined - value).abs() < 1e-13 * (1.0 + refined.abs());
        value = refined;
        if done {
            break;
        }
    }
    value
}

/// Ground-truth potential for a spatially constant background; errors unless
/// every field of `bg` is a constant multiple of the identity.
pub fn homogeneous_oracle(bg: &BackgroundData, t: f64) -> Result<f64> {
    let a0 = constant_scale(bg.chart(), bg.omega0().form(), "omega0")?;
    let a_inf = constant_scale(bg.chart(), bg.omega_inf(), "omega_inf")?;
    let density = bg.volume_form().density[0];
    if bg
        .volume_form()
        .density
        .iter()
        .any(|&d| (d - density).abs() > 1e-14 * density.abs())
    {
        return Err(CrfError::InvalidParam(
            "volume form is not spatially constant".into(),
        ));
    }
    Ok(homogeneous_potential(
        bg.chart().n(),
        a0,
        a_inf,
        density,
        t,
    ))
}

fn constant_scale(chart: &GridChart, form: &Form11Field, what: &str) -> Result<f64> {
    let n = chart.n();
    let b0 = form.block(0);
    let a = b0[0].re;
    for p in 0..chart.points() {
        let b = form.block(p);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j {
                    crate::Complex64::new(a, 0.0)
                } else {
                    crate::Complex64::default()
                };
                if (b[i * n + j] - expect).norm() > 1e-14 * (1.0 + a.abs()) {
                    return Err(CrfError::InvalidParam(format!(
                        "{what} is not a constant multiple of the identity"
                    )));
                }
            }
        }
    }
    Ok(a)
}

/// Residual curve of the flow identity `d omega/dt + Ric(omega) + omega = 0`
/// with the time derivative from centered snapshot differences: one
/// `(t, sup-norm residual)` entry per interior snapshot with equal spacing on
/// both sides. Second-order in the snapshot spacing.
pub fn verify_flow_identity(
    traj: &Trajectory,
    bg: &BackgroundData,
) -> Result<Vec<(f64, f64)>> {
    let snaps = &traj.snapshots;
    let mut out = Vec::new();
    for k in 1..snaps.len().saturating_sub(1) {
        let dl = snaps[k].t - snaps[k - 1].t;
        let dr = snaps[k + 1].t - snaps[k].t;
        if (dl - dr).abs() > 1e-9 {
            continue;
        }
        let form_of = |s: &Snapshot| -> Result<Form11Field> {
            Ok(bg
                .reference_metric(s.t)
                .add_scaled(&geometry::ddbar(&s.phi)?, 1.0))
        };
        let center = MetricField::try_new(form_of(&snaps[k])?)?;
        let ric = bg.ricci_form(&center)?;
        let residual = form_of(&snaps[k + 1])?
            .lin_comb(1.0 / (2.0 * dr), &form_of(&snaps[k - 1])?, -1.0 / (2.0 * dr))
            .add_scaled(&ric, 1.0)
            .add_scaled(center.form(), 1.0);
        out.push((snaps[k].t, residual.sup_norm()));
    }
    Ok(out)
}

/// Descent-quantity report: with `c_fit` the smallest constant making
/// `sup phidot <= c t e^{-t}` hold at every snapshot time `>= t1`, the
/// quantity `phi + c (t + 1) e^{-t}` must be pointwise non-increasing from
/// snapshot to snapshot. `max_increase` is the worst observed violation
/// (nonpositive up to quadrature slack when the bound mechanism holds).
#[derive(Debug, Clone, Copy)]
pub struct MonotoneReport {
    pub t1: f64,
    pub c_fit: f64,
    pub max_increase: f64,
}

pub fn verify_monotone(
    traj: &Trajectory,
    bg: &BackgroundData,
    t1: f64,
) -> Result<MonotoneReport> {
    let snaps: Vec<&Snapshot> = traj.snapshots.iter().filter(|s| s.t >= t1).collect();
    if snaps.len() < 2 {
        return Err(CrfError::InvalidParam(format!(
            "monotone check needs at least two snapshots past t1 = {t1}"
        )));
    }
    let c_fit = snaps
        .iter()
        .map(|s| s.phidot.sup_unmasked(bg.mask()) * s.t.exp() / s.t)
        .fold(0.0f64, f64::max);
    let weight = |t: f64| c_fit * (t + 1.0) * (-t).exp();
    let mut max_increase = f64::NEG_INFINITY;
    for w in snaps.windows(2) {
        let (a, b) = (w[0], w[1]);
        let diff = b
            .phi
            .zip_map(&a.phi, |x, y| x - y)
            .sup_unmasked(bg.mask())
            + (weight(b.t) - weight(a.t));
        max_increase = max_increase.max(diff);
    }
    Ok(MonotoneReport {
        t1,
        c_fit,
        max_increase,
    })
}

/// The limit data of a finished run: final potential, the limit metric
/// `omega_inf + ddbar phi_final`, and the achieved `sup |phidot|`.
pub struct LimitData {
    pub phi: ScalarField,
    pub omega: MetricField,
    pub sup_phidot: f64,
}

pub fn limit_potential(traj: &Trajectory, bg: &BackgroundData) -> Result<LimitData> {
    let last = traj.final_snapshot();
    let form = bg
        .omega_inf()
        .add_scaled(&geometry::ddbar(&last.phi)?, 1.0);
    Ok(LimitData {
        phi: last.phi.clone(),
        omega: MetricField::try_new(form)?,
        sup_phidot: last.sup_phidot,
    })
}
