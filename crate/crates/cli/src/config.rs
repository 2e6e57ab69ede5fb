//! Run configuration: a flat `key = value` text file plus `--key=value`
//! command-line overrides. Every key is typed and validated; unknown keys and
//! duplicate file keys are rejected so a config cannot silently drift from
//! what the run actually used.

use std::path::PathBuf;

use crf_core::background::{
    matched_volume_density, scenario_degenerate, scenario_homogeneous, scenario_smooth,
    scenario_smooth_variant, BackgroundData,
};
use crf_core::estimates::EPS_GRID;
use crf_core::flow::{FlowConfig, Scheme};
use crf_core::{CrfError, DiffMode, Result};

use crate::scenario;

/// Which background the run is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Smooth,
    SmoothVariant,
    Degenerate,
    Homogeneous,
    FromFile,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Smooth => "smooth",
            ScenarioKind::SmoothVariant => "smooth-variant",
            ScenarioKind::Degenerate => "degenerate",
            ScenarioKind::Homogeneous => "homogeneous",
            ScenarioKind::FromFile => "from-file",
        }
    }
}

/// Full configuration for every subcommand. Defaults describe the smooth
/// scenario at desk scale; any field can come from the config file or a
/// command-line override.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub resolution: usize,
    pub mode: DiffMode,
    /// Pole amplitude of the degenerate scenario.
    pub kappa: f64,
    /// Pole regularization of the degenerate scenario.
    pub delta: f64,
    /// Homogeneous scenario scales.
    pub a0: f64,
    pub a_inf: f64,
    /// Homogeneous volume density; matched to `a_inf` when absent.
    pub volume_density: Option<f64>,
    /// Directory holding a serialized scenario (`scenario = from-file`).
    pub scenario_dir: Option<PathBuf>,

    pub flow: FlowConfig,

    /// Barrier exponents for the lower-bound and pinch checks.
    pub eps_list: Vec<f64>,
    /// Onset time for the decay-rate bound.
    pub t1: f64,
    pub out_dir: PathBuf,
    /// Seed echoed into summaries; reserved for randomized test fields.
    pub seed: u64,
    /// Times whose snapshots are dumped as field files by `run`.
    pub dump_times: Vec<f64>,

    /// Static-limit solver tolerance.
    pub ke_tol: f64,
    /// Acceptable sup norm of `Ric(omega) + omega` for the solved metric.
    pub einstein_bound: f64,
    /// Roundoff slack for the uniqueness comparison margins.
    pub uniqueness_slack: f64,
    /// Optional initial-guess field dump for `ke`.
    pub initial_guess: Option<PathBuf>,
    /// Optional flow-limit field dump to compare against in `ke`.
    pub compare: Option<PathBuf>,
    /// Stored trajectory for `verify`; defaults to the run layout.
    pub trajectory: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Smooth,
            n: 1,
            resolution: 32,
            mode: DiffMode::Spectral,
            kappa: 0.05,
            delta: 1e-2,
            a0: 2.0,
            a_inf: 1.0,
            volume_density: None,
            scenario_dir: None,
            flow: FlowConfig::default(),
            eps_list: EPS_GRID.to_vec(),
            t1: 1.0,
            out_dir: PathBuf::from("out"),
            seed: 7,
            dump_times: Vec::new(),
            ke_tol: 1e-8,
            einstein_bound: 1e-5,
            uniqueness_slack: 1e-8,
            initial_guess: None,
            compare: None,
            trajectory: None,
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> CrfError {
    CrfError::InvalidParam(format!("config key '{key}' = '{value}': expected {want}"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| bad(key, value, "a floating-point number"))?;
    if !v.is_finite() {
        return Err(bad(key, value, "a finite number"));
    }
    Ok(v)
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| bad(key, value, "a nonnegative integer"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value, "a boolean (true/false)")),
    }
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

impl RunConfig {
    /// Apply one `key = value` assignment. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scenario" => {
                self.scenario = match value {
                    "smooth" => ScenarioKind::Smooth,
                    "smooth-variant" => ScenarioKind::SmoothVariant,
                    "degenerate" => ScenarioKind::Degenerate,
                    "homogeneous" => ScenarioKind::Homogeneous,
                    "from-file" => ScenarioKind::FromFile,
                    _ => {
                        return Err(bad(
                            key,
                            value,
                            "one of smooth, smooth-variant, degenerate, homogeneous, from-file",
                        ));
                    }
                };
            }
            "n" => self.n = parse_usize(key, value)?,
            "resolution" => self.resolution = parse_usize(key, value)?,
            "diff_mode" => {
                self.mode = match value {
                    "spectral" => DiffMode::Spectral,
                    "central4" => DiffMode::CentralDiff4,
                    _ => return Err(bad(key, value, "spectral or central4")),
                };
            }
            "kappa" => self.kappa = parse_f64(key, value)?,
            "delta" => self.delta = parse_f64(key, value)?,
            "a0" => self.a0 = parse_f64(key, value)?,
            "a_inf" => self.a_inf = parse_f64(key, value)?,
            "volume_density" => self.volume_density = Some(parse_f64(key, value)?),
            "scenario_dir" => self.scenario_dir = Some(PathBuf::from(value)),
            "dt_initial" => self.flow.dt_initial = parse_f64(key, value)?,
            "dt_max" => self.flow.dt_max = parse_f64(key, value)?,
            "safety" => self.flow.safety = parse_f64(key, value)?,
            "scheme" => {
                self.flow.scheme = match value {
                    "rk4" => Scheme::Rk4,
                    "imex" => Scheme::Imex,
                    _ => return Err(bad(key, value, "rk4 or imex")),
                };
            }
            "t_max" => self.flow.t_max = parse_f64(key, value)?,
            "convergence_tol" => self.flow.convergence_tol = parse_f64(key, value)?,
            "positivity_floor" => self.flow.positivity_floor = parse_f64(key, value)?,
            "min_time" => self.flow.min_time = parse_f64(key, value)?,
            "snapshot_cadence" => self.flow.snapshot_cadence = parse_f64(key, value)?,
            "eps_list" => self.eps_list = parse_f64_list(key, value)?,
            "t1" => self.t1 = parse_f64(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| bad(key, value, "an unsigned integer"))?;
            }
            "dump_times" => self.dump_times = parse_f64_list(key, value)?,
            "ke_tol" => self.ke_tol = parse_f64(key, value)?,
            "einstein_bound" => self.einstein_bound = parse_f64(key, value)?,
            "uniqueness_slack" => self.uniqueness_slack = parse_f64(key, value)?,
            "initial_guess" => self.initial_guess = Some(PathBuf::from(value)),
            "compare" => self.compare = Some(PathBuf::from(value)),
            "trajectory" => self.trajectory = Some(PathBuf::from(value)),
            "mass_normalized" => {
                // Accepted for scenario files only; reject here so a config
                // cannot claim normalization the builder does not perform.
                let _ = parse_bool(key, value)?;
                return Err(CrfError::InvalidParam(
                    "config key 'mass_normalized' is derived from the scenario, not settable"
                        .into(),
                ));
            }
            _ => {
                return Err(CrfError::InvalidParam(format!(
                    "unknown config key '{key}'"
                )));
            }
        }
        Ok(())
    }

    /// Range validation that runs before any allocation.
    pub fn validate(&self) -> Result<()> {
        if !(self.n == 1 || self.n == 2) {
            return Err(CrfError::InvalidParam(format!(
                "n must be 1 or 2, got {}",
                self.n
            )));
        }
        if self.resolution < 8 || self.resolution % 2 != 0 {
            return Err(CrfError::InvalidParam(format!(
                "resolution must be even and >= 8, got {}",
                self.resolution
            )));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("delta", self.delta),
            ("a0", self.a0),
            ("a_inf", self.a_inf),
            ("ke_tol", self.ke_tol),
            ("einstein_bound", self.einstein_bound),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CrfError::InvalidParam(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if let Some(v) = self.volume_density {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CrfError::InvalidParam(format!(
                    "volume_density must be positive and finite, got {v}"
                )));
            }
        }
        if self.eps_list.is_empty() || self.eps_list.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(CrfError::InvalidParam(format!(
                "eps_list must be nonempty with positive entries, got {:?}",
                self.eps_list
            )));
        }
        if !(self.t1 >= 0.0) || !self.t1.is_finite() {
            return Err(CrfError::InvalidParam(format!(
                "t1 must be nonnegative and finite, got {}",
                self.t1
            )));
        }
        if self.uniqueness_slack < 0.0 || !self.uniqueness_slack.is_finite() {
            return Err(CrfError::InvalidParam(format!(
                "uniqueness_slack must be nonnegative, got {}",
                self.uniqueness_slack
            )));
        }
        if self
            .dump_times
            .iter()
            .any(|&t| !(t >= 0.0) || !t.is_finite())
        {
            return Err(CrfError::InvalidParam(format!(
                "dump_times must be nonnegative and finite, got {:?}",
                self.dump_times
            )));
        }
        if self.scenario == ScenarioKind::FromFile && self.scenario_dir.is_none() {
            return Err(CrfError::InvalidParam(
                "scenario = from-file requires scenario_dir".into(),
            ));
        }
        self.flow.validate()
    }

    /// Build the scenario background this configuration describes.
    pub fn build_background(&self) -> Result<BackgroundData> {
        self.validate()?;
        match self.scenario {
            ScenarioKind::Smooth => scenario_smooth(self.resolution, self.n, self.mode),
            ScenarioKind::SmoothVariant => {
                scenario_smooth_variant(self.resolution, self.n, self.mode)
            }
            ScenarioKind::Degenerate => {
                scenario_degenerate(self.resolution, self.n, self.mode, self.kappa, self.delta)
            }
            ScenarioKind::Homogeneous => {
                let vol = self
                    .volume_density
                    .unwrap_or_else(|| matched_volume_density(self.n, self.a_inf));
                scenario_homogeneous(self.resolution, self.n, self.mode, self.a0, self.a_inf, vol)
            }
            ScenarioKind::FromFile => {
                let dir = self
                    .scenario_dir
                    .as_ref()
                    .expect("validate() guarantees scenario_dir");
                scenario::load_scenario(dir, self.mode)
            }
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        self.flow
    }

    /// Stored-trajectory path for `verify`: explicit key or the run layout.
    pub fn trajectory_path(&self) -> PathBuf {
        self.trajectory
            .clone()
            .unwrap_or_else(|| self.out_dir.join("trajectory.crft"))
    }
}

/// Parse the flat config text into ordered `(key, value)` pairs. Blank lines
/// and `#` comments are skipped; duplicate keys are rejected.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CrfError::Format(format!(
                "config line {}: expected 'key = value', got '{line}'",
                lineno + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        {
            return Err(CrfError::Format(format!(
                "config line {}: malformed key '{key}'",
                lineno + 1
            )));
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(CrfError::Format(format!(
                "config line {}: duplicate key '{key}'",
                lineno + 1
            )));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

/// Assemble a configuration from an optional config file's text and the
/// command-line overrides, applied in that order (overrides win; among
/// repeated overrides the last wins).
pub fn build_config(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(text) = file_text {
        for (k, v) in parse_config_text(text)? {
            cfg.apply(&k, &v)?;
        }
    }
    for (k, v) in overrides {
        cfg.apply(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_describe_the_smooth_scenario() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::Smooth);
        assert_eq!(cfg.eps_list, EPS_GRID.to_vec());
        assert_eq!(cfg.trajectory_path(), PathBuf::from("out/trajectory.crft"));
    }

    #[test]
    fn config_text_parses_comments_blanks_and_spacing() {
        let text = "\n# a comment\nscenario = degenerate\n  resolution=64  # trailing\n\nkappa = 0.1\n";
        let pairs = parse_config_text(text).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("scenario".into(), "degenerate".into()),
                ("resolution".into(), "64".into()),
                ("kappa".into(), "0.1".into()),
            ]
        );
        let cfg = build_config(Some(text), &[]).unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::Degenerate);
        assert_eq!(cfg.resolution, 64);
        assert_eq!(cfg.kappa, 0.1);
    }

    #[test]
    fn overrides_win_over_file_values_and_last_override_wins() {
        let text = "resolution = 16\nt_max = 2.0\n";
        let overrides = vec![
            ("resolution".to_string(), "24".to_string()),
            ("resolution".to_string(), "48".to_string()),
        ];
        let cfg = build_config(Some(text), &overrides).unwrap();
        assert_eq!(cfg.resolution, 48);
        assert_eq!(cfg.flow.t_max, 2.0);
    }

    #[test]
    fn unknown_keys_duplicates_and_bad_values_are_rejected() {
        assert!(build_config(Some("nonsense = 1\n"), &[]).is_err());
        assert!(parse_config_text("a = 1\na = 2\n").is_err());
        assert!(parse_config_text("just a line\n").is_err());
        assert!(parse_config_text("BadKey = 1\n").is_err());
        assert!(build_config(Some("resolution = many\n"), &[]).is_err());
        assert!(build_config(Some("scheme = euler\n"), &[]).is_err());
        assert!(build_config(Some("eps_list = 0.1,-0.5\n"), &[]).is_err());
        assert!(build_config(Some("mass_normalized = true\n"), &[]).is_err());
        // Typed ranges: checked before any allocation.
        assert!(build_config(Some("n = 3\n"), &[]).is_err());
        assert!(build_config(Some("resolution = 9\n"), &[]).is_err());
        assert!(build_config(Some("kappa = 0\n"), &[]).is_err());
        assert!(build_config(Some("scenario = from-file\n"), &[]).is_err());
    }

    #[test]
    fn typed_fields_cover_every_documented_key() {
        let text = "\
scenario = homogeneous
n = 2
resolution = 12
diff_mode = central4
kappa = 0.2
delta = 0.005
a0 = 1.5
a_inf = 1.25
volume_density = 3.0
dt_initial = 0.01
dt_max = 0.2
safety = 0.9
scheme = imex
t_max = 4.0
convergence_tol = 1e-7
positivity_floor = 1e-9
min_time = 4.0
snapshot_cadence = 0.5
eps_list = 0.5, 1.0
t1 = 0.5
out_dir = results
seed = 99
dump_times = 0.5,1.0
ke_tol = 1e-9
einstein_bound = 1e-4
uniqueness_slack = 1e-7
initial_guess = guess.crf1
compare = limit.crf1
trajectory = stored.crft
";
        let cfg = build_config(Some(text), &[]).unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::Homogeneous);
        assert_eq!((cfg.n, cfg.resolution), (2, 12));
        assert_eq!(cfg.mode, DiffMode::CentralDiff4);
        assert_eq!(cfg.flow.scheme, Scheme::Imex);
        assert_eq!(cfg.flow.min_time, 4.0);
        assert_eq!(cfg.eps_list, vec![0.5, 1.0]);
        assert_eq!(cfg.volume_density, Some(3.0));
        assert_eq!(cfg.dump_times, vec![0.5, 1.0]);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.out_dir, PathBuf::from("results"));
        assert_eq!(cfg.trajectory_path(), PathBuf::from("stored.crft"));
        assert_eq!(cfg.initial_guess, Some(PathBuf::from("guess.crf1")));
        assert_eq!(cfg.compare, Some(PathBuf::from("limit.crf1")));
        assert_eq!(cfg.uniqueness_slack, 1e-7);
        assert_eq!(cfg.einstein_bound, 1e-4);
    }

    #[test]
    fn homogeneous_volume_defaults_to_the_matched_density() {
        let cfg = build_config(
            Some("scenario = homogeneous\nresolution = 8\na0 = 1.0\na_inf = 1.0\n"),
            &[],
        )
        .unwrap();
        let bg = cfg.build_background().unwrap();
        // Matched density makes phi = 0 an exact fixed point, which the
        // scenario records as a mass-normalized volume form.
        assert!(bg.mass_normalized());
    }
}
