//! Scenario persistence: a background is saved as a directory of field dumps
//! plus a flat text index of its scalar parameters, so a run can be rebuilt
//! later (or on another machine) without the generating code path. The
//! barrier Hessian is stored explicitly - regularized poles too narrow for
//! the grid carry a closed-form Hessian that discrete differentiation of the
//! sampled barrier would get wrong.

use std::fs;
use std::path::Path;

use crf_core::background::BackgroundData;
use crf_core::field::{Mask, MetricField, ScalarField, VolumeFormField};
use crf_core::io::{read_form_dump, read_scalar_dump, write_form_dump, write_scalar_dump};
use crf_core::{CrfError, DiffMode, Result};

use crate::config::parse_config_text;

const INDEX_VERSION: u32 = 1;

/// Write a background under `dir`: six field dumps and `scenario.txt`.
pub fn save_scenario(dir: impl AsRef<Path>, bg: &BackgroundData) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_form_dump(dir.join("omega0.crf1"), bg.omega0().form())?;
    write_form_dump(dir.join("omega_inf.crf1"), bg.omega_inf())?;
    write_form_dump(dir.join("ddbar_psi.crf1"), bg.ddbar_psi())?;
    write_scalar_dump(dir.join("psi.crf1"), bg.psi())?;
    let chart = *bg.chart();
    let density = ScalarField::from_vec(chart, bg.volume_form().density.clone())?;
    write_scalar_dump(dir.join("volume.crf1"), &density)?;
    let excluded = ScalarField::from_vec(
        chart,
        (0..chart.points())
            .map(|p| if bg.mask().is_excluded(p) { 1.0 } else { 0.0 })
            .collect(),
    )?;
    write_scalar_dump(dir.join("mask.crf1"), &excluded)?;
    let index = format!(
        "version = {INDEX_VERSION}\ndelta = {}\nc0 = {}\nbarrier_curvature_bound = {}\nmass_normalized = {}\n",
        bg.delta(),
        bg.c0(),
        bg.barrier_curvature_bound(),
        bg.mass_normalized(),
    );
    fs::write(dir.join("scenario.txt"), index)?;
    Ok(())
}

/// Rebuild a background from a directory written by [`save_scenario`]. The
/// differentiation mode is the caller's choice, exactly as for field dumps.
pub fn load_scenario(dir: impl AsRef<Path>, mode: DiffMode) -> Result<BackgroundData> {
    let dir = dir.as_ref();
    let mut version = None;
    let mut delta = None;
    let mut c0 = None;
    let mut bound = None;
    let mut mass_normalized = None;
    let index_path = dir.join("scenario.txt");
    let index = fs::read_to_string(&index_path).map_err(|e| {
        CrfError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", index_path.display()),
        ))
    })?;
    for (key, value) in parse_config_text(&index)? {
        match key.as_str() {
            "version" => {
                version = Some(value.parse::<u32>().map_err(|_| {
                    CrfError::Format(format!("scenario index version '{value}' is not a number"))
                })?);
            }
            "delta" => delta = Some(parse_index_f64("delta", &value)?),
            "c0" => c0 = Some(parse_index_f64("c0", &value)?),
            "barrier_curvature_bound" => {
                bound = Some(parse_index_f64("barrier_curvature_bound", &value)?);
            }
            "mass_normalized" => {
                mass_normalized = Some(match value.as_str() {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(CrfError::Format(format!(
                            "scenario index mass_normalized '{value}' is not a boolean"
                        )));
                    }
                });
            }
            other => {
                return Err(CrfError::Format(format!(
                    "scenario index has unknown key '{other}'"
                )));
            }
        }
    }
    let missing = |what: &str| CrfError::Format(format!("scenario index is missing '{what}'"));
    match version.ok_or_else(|| missing("version"))? {
        INDEX_VERSION => {}
        v => {
            return Err(CrfError::Format(format!(
                "unsupported scenario index version {v}"
            )));
        }
    }
    let omega0 = MetricField::try_new(read_form_dump(dir.join("omega0.crf1"), mode)?)?;
    let omega_inf = read_form_dump(dir.join("omega_inf.crf1"), mode)?;
    let ddbar_psi = read_form_dump(dir.join("ddbar_psi.crf1"), mode)?;
    let psi = read_scalar_dump(dir.join("psi.crf1"), mode)?;
    let density = read_scalar_dump(dir.join("volume.crf1"), mode)?;
    let chart = *omega0.chart();
    let volume = VolumeFormField::try_new(chart, density.data.clone())?;
    let mask_field = read_scalar_dump(dir.join("mask.crf1"), mode)?;
    chart.check_same_geometry(mask_field.chart(), "scenario mask")?;
    let excluded: Vec<bool> = mask_field
        .data
        .iter()
        .map(|&v| {
            if v == 0.0 {
                Ok(false)
            } else if v == 1.0 {
                Ok(true)
            } else {
                Err(CrfError::Format(format!(
                    "scenario mask samples must be 0 or 1, found {v}"
                )))
            }
        })
        .collect::<Result<_>>()?;
    BackgroundData::with_barrier_hessian(
        omega0,
        omega_inf,
        volume,
        psi,
        ddbar_psi,
        delta.ok_or_else(|| missing("delta"))?,
        Mask::from_excluded(chart, excluded)?,
        c0.ok_or_else(|| missing("c0"))?,
        bound.ok_or_else(|| missing("barrier_curvature_bound"))?,
        mass_normalized.ok_or_else(|| missing("mass_normalized"))?,
    )
}

fn parse_index_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| CrfError::Format(format!("scenario index {key} '{value}' is not a number")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crf_core::background::{scenario_degenerate, scenario_smooth};

    fn bits_equal(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    #[test]
    fn degenerate_scenario_round_trips_bitwise() {
        let dir = std::env::temp_dir().join(format!("crf_scenario_{}", std::process::id()));
        let bg = scenario_degenerate(16, 1, DiffMode::Spectral, 0.05, 1e-2).unwrap();
        save_scenario(&dir, &bg).unwrap();
        let back = load_scenario(&dir, DiffMode::Spectral).unwrap();

        assert_eq!(back.delta(), bg.delta());
        assert_eq!(back.c0().to_bits(), bg.c0().to_bits());
        assert_eq!(
            back.barrier_curvature_bound().to_bits(),
            bg.barrier_curvature_bound().to_bits()
        );
        assert_eq!(back.mass_normalized(), bg.mass_normalized());
        assert_eq!(back.mask().excluded_count(), bg.mask().excluded_count());
        assert!(bits_equal(&back.psi().data, &bg.psi().data));
        assert!(bits_equal(
            &back.volume_form().density,
            &bg.volume_form().density
        ));
        // The explicit barrier Hessian survives: the reference family at an
        // interior time is reproduced to the bit.
        let a = bg.s_current(0.7);
        let b = back.s_current(0.7);
        for p in 0..bg.chart().points() {
            for (x, y) in a.block(p).iter().zip(b.block(p).iter()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn corrupt_or_incomplete_directories_are_rejected() {
        let dir = std::env::temp_dir().join(format!("crf_scenario_bad_{}", std::process::id()));
        let bg = scenario_smooth(8, 1, DiffMode::Spectral).unwrap();
        save_scenario(&dir, &bg).unwrap();

        // Unknown index key.
        let index = dir.join("scenario.txt");
        let original = fs::read_to_string(&index).unwrap();
        fs::write(&index, format!("{original}extra = 1\n")).unwrap();
        assert!(matches!(
            load_scenario(&dir, DiffMode::Spectral),
            Err(CrfError::Format(_))
        ));

        // Missing required key.
        fs::write(&index, original.replace("delta", "# delta")).unwrap();
        assert!(matches!(
            load_scenario(&dir, DiffMode::Spectral),
            Err(CrfError::Format(_))
        ));

        // Missing dump file.
        fs::write(&index, original).unwrap();
        fs::remove_file(dir.join("psi.crf1")).unwrap();
        assert!(load_scenario(&dir, DiffMode::Spectral).is_err());

        std::fs::remove_dir_all(&dir).unwrap();
    }
}
