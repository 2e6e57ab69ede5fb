//! Dependency-free serialization: self-describing binary field dumps, a
//! trajectory container, PGM grayscale heatmaps, and the diagnostics CSV
//! table. All binary layouts are little-endian and bit-exact: writing the
//! same data twice yields identical bytes, and a round trip reproduces every
//! sample to the bit.
//!
//! Field dump layout (magic `CRF1`): magic, `u32` format version, `u32` kind
//! (1 = scalar, 2 = (1,1)-form), `u32` dim count, the dims as `u64`s, the
//! real period as `f64`, then the samples as row-major complex doubles
//! (re, im). Scalar fields are stored with zero imaginary parts; forms store
//! their point-major blocks, each block row-major, matching the in-memory
//! layout. The differentiation mode is not part of the data - it is the
//! reader's choice, supplied when loading.
//!
//! Trajectory container (magic `CRFT`): magic, `u32` version, `u32` n, `u32`
//! resolution, `u32` differentiation mode tag, `f64` period, `f64` cadence,
//! `u8` converged flag, `u64` accepted-step count, `u32` snapshot count, then
//! per snapshot: `f64` time, `f64` cached sup |phidot|, the phi samples and
//! the phidot samples as plain `f64`s.

use std::fs;
use std::path::Path;

use crate::error::{CrfError, Result};
use crate::estimates::{DiagnosticsRecord, EPS_GRID};
use crate::field::{Form11Field, ScalarField};
use crate::flow::{Snapshot, Trajectory};
use crate::grid::{DiffMode, GridChart};
use crate::Complex64;

pub const FIELD_MAGIC: [u8; 4] = *b"CRF1";
pub const TRAJECTORY_MAGIC: [u8; 4] = *b"CRFT";
const FIELD_VERSION: u32 = 1;
const TRAJECTORY_VERSION: u32 = 1;
const KIND_SCALAR: u32 = 1;
const KIND_FORM11: u32 = 2;

/// Either payload a field dump may carry.
#[derive(Debug, Clone)]
pub enum FieldDump {
    Scalar(ScalarField),
    Form(Form11Field),
}

// ---------------------------------------------------------------------------
// Little-endian primitives.
// ---------------------------------------------------------------------------

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Bounds-checked little-endian reader over a byte buffer.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let slice = &self.buf[self.pos..e];
                self.pos = e;
                Ok(slice)
            }
            None => Err(CrfError::Format(format!(
                "{} truncated at byte {} (wanted {} more)",
                self.what, self.pos, len
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CrfError::Format(format!(
                "{} carries {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_magic(cur: &mut Cursor, magic: &[u8; 4]) -> Result<()> {
    let got = cur.take(4)?;
    if got != magic {
        return Err(CrfError::Format(format!(
            "{} has wrong magic bytes {:?}",
            cur.what, got
        )));
    }
    Ok(())
}

fn check_version(cur: &mut Cursor, expected: u32) -> Result<u32> {
    let v = cur.u32()?;
    if v != expected {
        return Err(CrfError::Format(format!(
            "{} has unsupported format version {v} (expected {expected})",
            cur.what
        )));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Field dumps.
// ---------------------------------------------------------------------------

fn field_header(kind: u32, dims: &[u64], period: f64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&FIELD_MAGIC);
    put_u32(&mut out, FIELD_VERSION);
    put_u32(&mut out, kind);
    put_u32(&mut out, dims.len() as u32);
    for &d in dims {
        put_u64(&mut out, d);
    }
    put_f64(&mut out, period);
    out
}

/// Serialize a scalar field. Samples become complex doubles with zero
/// imaginary part, in the chart's row-major axis order.
pub fn scalar_dump_bytes(f: &ScalarField) -> Vec<u8> {
    let chart = f.chart();
    let dims = vec![chart.resolution() as u64; chart.axes()];
    let mut out = field_header(KIND_SCALAR, &dims, chart.period());
    out.reserve(f.data.len() * 16);
    for &v in &f.data {
        put_f64(&mut out, v);
        put_f64(&mut out, 0.0);
    }
    out
}

/// Serialize a (1,1)-form field: spatial dims then the two block dims, data
/// point-major with row-major blocks (the in-memory layout).
pub fn form_dump_bytes(f: &Form11Field) -> Vec<u8> {
    let chart = f.chart();
    let n = chart.n() as u64;
    let mut dims = vec![chart.resolution() as u64; chart.axes()];
    dims.push(n);
    dims.push(n);
    let mut out = field_header(KIND_FORM11, &dims, chart.period());
    out.reserve(chart.points() * chart.n() * chart.n() * 16);
    for p in 0..chart.points() {
        for &v in f.block(p) {
            put_f64(&mut out, v.re);
            put_f64(&mut out, v.im);
        }
    }
    out
}

/// Parse a field dump. The differentiation mode is the caller's choice; the
/// dump pins everything else (kind, dimension, resolution, period, samples).
pub fn parse_field_dump(bytes: &[u8], mode: DiffMode) -> Result<FieldDump> {
    let mut cur = Cursor::new(bytes, "field dump");
    check_magic(&mut cur, &FIELD_MAGIC)?;
    check_version(&mut cur, FIELD_VERSION)?;
    let kind = cur.u32()?;
    let ndims = cur.u32()? as usize;
    if ndims == 0 || ndims > 6 {
        return Err(CrfError::Format(format!(
            "field dump has implausible dim count {ndims}"
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(cur.u64()? as usize);
    }
    let period = cur.f64()?;
    let (n, spatial) = match kind {
        KIND_SCALAR => (dims.len() / 2, &dims[..]),
        KIND_FORM11 => {
            if dims.len() < 4 {
                return Err(CrfError::Format(format!(
                    "form dump needs spatial dims plus two block dims, got {dims:?}"
                )));
            }
            let n = (dims.len() - 2) / 2;
            if dims[dims.len() - 2] != n || dims[dims.len() - 1] != n {
                return Err(CrfError::Format(format!(
                    "form dump block dims {:?} disagree with complex dimension {n}",
                    &dims[dims.len() - 2..]
                )));
            }
            (n, &dims[..dims.len() - 2])
        }
        other => {
            return Err(CrfError::Format(format!(
                "field dump has unknown kind tag {other}"
            )));
        }
    };
    if spatial.len() != 2 * n || spatial.is_empty() {
        return Err(CrfError::Format(format!(
            "field dump spatial dims {spatial:?} do not form a square grid"
        )));
    }
    let res = spatial[0];
    if spatial.iter().any(|&d| d != res) {
        return Err(CrfError::Format(format!(
            "field dump spatial dims {spatial:?} are not all equal"
        )));
    }
    let chart = GridChart::new(n, res, period, mode)?;
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let re = cur.f64()?;
        let im = cur.f64()?;
        data.push(Complex64::new(re, im));
    }
    cur.finish()?;
    match kind {
        KIND_SCALAR => {
            let mut real = Vec::with_capacity(count);
            for (i, v) in data.iter().enumerate() {
                if v.im != 0.0 {
                    return Err(CrfError::Format(format!(
                        "scalar dump sample {i} has nonzero imaginary part {}",
                        v.im
                    )));
                }
                real.push(v.re);
            }
            Ok(FieldDump::Scalar(ScalarField::from_vec(chart, real)?))
        }
        _ => Ok(FieldDump::Form(Form11Field::try_new(chart, data)?)),
    }
}

pub fn write_scalar_dump(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    fs::write(path, scalar_dump_bytes(f))?;
    Ok(())
}

pub fn write_form_dump(path: impl AsRef<Path>, f: &Form11Field) -> Result<()> {
    fs::write(path, form_dump_bytes(f))?;
    Ok(())
}

/// Read a file, naming it in the error: a bare "no such file" with no path
/// is useless once several artifacts are in play.
fn read_named(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        CrfError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn read_field_dump(path: impl AsRef<Path>, mode: DiffMode) -> Result<FieldDump> {
    parse_field_dump(&read_named(path.as_ref())?, mode)
}

/// Read a dump that must contain a scalar field.
pub fn read_scalar_dump(path: impl AsRef<Path>, mode: DiffMode) -> Result<ScalarField> {
    match read_field_dump(path, mode)? {
        FieldDump::Scalar(f) => Ok(f),
        FieldDump::Form(_) => Err(CrfError::Format(
            "expected a scalar dump, found a (1,1)-form dump".into(),
        )),
    }
}

/// Read a dump that must contain a (1,1)-form field.
pub fn read_form_dump(path: impl AsRef<Path>, mode: DiffMode) -> Result<Form11Field> {
    match read_field_dump(path, mode)? {
        FieldDump::Form(f) => Ok(f),
        FieldDump::Scalar(_) => Err(CrfError::Format(
            "expected a (1,1)-form dump, found a scalar dump".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Trajectory container.
// ---------------------------------------------------------------------------

fn mode_tag(mode: DiffMode) -> u32 {
    match mode {
        DiffMode::Spectral => 0,
        DiffMode::CentralDiff4 => 1,
    }
}

fn tag_mode(tag: u32) -> Result<DiffMode> {
    match tag {
        0 => Ok(DiffMode::Spectral),
        1 => Ok(DiffMode::CentralDiff4),
        other => Err(CrfError::Format(format!(
            "trajectory has unknown differentiation mode tag {other}"
        ))),
    }
}

/// Serialize a trajectory, differentiation mode included, so a later process
/// can rerun every diagnostic without access to the original run.
pub fn trajectory_bytes(traj: &Trajectory) -> Result<Vec<u8>> {
    let first = traj
        .snapshots
        .first()
        .ok_or_else(|| CrfError::Format("cannot serialize a trajectory with no snapshots".into()))?;
    let chart = *first.phi.chart();
    let mut out = Vec::new();
    out.extend_from_slice(&TRAJECTORY_MAGIC);
    put_u32(&mut out, TRAJECTORY_VERSION);
    put_u32(&mut out, chart.n() as u32);
    put_u32(&mut out, chart.resolution() as u32);
    put_u32(&mut out, mode_tag(chart.mode()));
    put_f64(&mut out, chart.period());
    put_f64(&mut out, traj.cadence);
    out.push(traj.converged as u8);
    put_u64(&mut out, traj.steps);
    put_u32(&mut out, traj.snapshots.len() as u32);
    for snap in &traj.snapshots {
        chart.check_same_geometry(snap.phi.chart(), "trajectory snapshot")?;
        put_f64(&mut out, snap.t);
        put_f64(&mut out, snap.sup_phidot);
        for &v in &snap.phi.data {
            put_f64(&mut out, v);
        }
        for &v in &snap.phidot.data {
            put_f64(&mut out, v);
        }
    }
    Ok(out)
}

pub fn parse_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let mut cur = Cursor::new(bytes, "trajectory");
    check_magic(&mut cur, &TRAJECTORY_MAGIC)?;
    check_version(&mut cur, TRAJECTORY_VERSION)?;
    let n = cur.u32()? as usize;
    let res = cur.u32()? as usize;
    let mode = tag_mode(cur.u32()?)?;
    let period = cur.f64()?;
    let chart = GridChart::new(n, res, period, mode)?;
    let cadence = cur.f64()?;
    let converged = match cur.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(CrfError::Format(format!(
                "trajectory convergence flag must be 0 or 1, got {other}"
            )));
        }
    };
    let steps = cur.u64()?;
    let count = cur.u32()? as usize;
    if count == 0 {
        return Err(CrfError::Format("trajectory holds no snapshots".into()));
    }
    let points = chart.points();
    let mut snapshots = Vec::with_capacity(count);
    let mut prev_t = f64::NEG_INFINITY;
    for _ in 0..count {
        let t = cur.f64()?;
        if !(t > prev_t) {
            return Err(CrfError::Format(format!(
                "trajectory times must strictly increase, got {t} after {prev_t}"
            )));
        }
        prev_t = t;
        let sup_phidot = cur.f64()?;
        let mut phi = Vec::with_capacity(points);
        for _ in 0..points {
            phi.push(cur.f64()?);
        }
        let mut phidot = Vec::with_capacity(points);
        for _ in 0..points {
            phidot.push(cur.f64()?);
        }
        snapshots.push(Snapshot {
            t,
            phi: ScalarField::from_vec(chart, phi)?,
            phidot: ScalarField::from_vec(chart, phidot)?,
            sup_phidot,
        });
    }
    cur.finish()?;
    Ok(Trajectory {
        snapshots,
        cadence,
        converged,
        steps,
    })
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    fs::write(path, trajectory_bytes(traj)?)?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    parse_trajectory(&read_named(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// PGM heatmaps.
// ---------------------------------------------------------------------------

/// Render a scalar field as a binary (P5) PGM image. Columns follow the first
/// complex coordinate's x axis, rows its y axis (row 0 at y = 0); any higher
/// axes are sliced at index 0. Gray levels scale linearly from the rendered
/// slice's minimum (black) to its maximum (white); a constant slice renders
/// mid-gray.
pub fn heatmap_pgm(f: &ScalarField) -> Vec<u8> {
    let chart = f.chart();
    let res = chart.resolution();
    let mut multi = vec![0usize; chart.axes()];
    let mut slice = Vec::with_capacity(res * res);
    for row in 0..res {
        for col in 0..res {
            multi.fill(0);
            multi[0] = col;
            multi[1] = row;
            slice.push(f.data[chart.flat_index(&multi)]);
        }
    }
    let min = slice.iter().copied().fold(f64::INFINITY, f64::min);
    let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = format!("P5\n{res} {res}\n255\n").into_bytes();
    out.extend(slice.iter().map(|&v| {
        if span > 0.0 {
            (255.0 * (v - min) / span).round() as u8
        } else {
            128u8
        }
    }));
    out
}

pub fn write_heatmap_pgm(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    fs::write(path, heatmap_pgm(f))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Diagnostics CSV.
// ---------------------------------------------------------------------------

/// Column header of the diagnostics table. The per-epsilon columns are
/// labeled from the fixed barrier-exponent grid.
pub fn diagnostics_csv_header() -> String {
    let mut cols: Vec<String> = vec![
        "t".into(),
        "sup_phi".into(),
        "sup_phidot".into(),
        "sup_volume_ratio".into(),
    ];
    for eps in EPS_GRID {
        cols.push(format!("inf_q_eps_{eps}"));
    }
    cols.extend(
        [
            "sup_trace",
            "sup_trace_weighted",
            "q_trace_sup",
            "s_min_eig",
            "einstein_residual",
            "res_potential",
            "res_rate",
            "res_shifted",
            "res_reciprocal",
            "res_log_trace",
        ]
        .map(String::from),
    );
    cols.join(",")
}

/// Format diagnostics records as CSV, one row per record. Floats print in
/// shortest round-trip form, so equal runs yield byte-identical tables; the
/// residual columns are empty on rows where no identity residuals exist
/// (first and last snapshot).
pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = diagnostics_csv_header();
    out.push('\n');
    for r in records {
        let mut cells: Vec<String> = vec![
            r.t.to_string(),
            r.sup_phi.to_string(),
            r.sup_phidot.to_string(),
            r.sup_volume_ratio.to_string(),
        ];
        for v in r.inf_q_eps {
            cells.push(v.to_string());
        }
        cells.push(r.sup_trace.to_string());
        cells.push(r.sup_trace_weighted.to_string());
        cells.push(r.q_trace_sup.to_string());
        cells.push(r.s_min_eig.to_string());
        cells.push(r.einstein_residual.to_string());
        match &r.identity_residuals {
            Some(res) => {
                cells.push(res.potential.to_string());
                cells.push(res.rate.to_string());
                cells.push(res.shifted.to_string());
                cells.push(res.reciprocal.to_string());
                cells.push(res.log_trace.to_string());
            }
            None => cells.extend(std::iter::repeat_with(String::new).take(5)),
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::scenario_homogeneous;
    use crate::estimates::IdentityResiduals;
    use crate::flow::{self, FlowConfig, Scheme};
    use crate::testfields::{random_metric, random_trig_scalar};

    fn chart(n: usize, res: usize) -> GridChart {
        GridChart::new(n, res, 1.0, DiffMode::Spectral).unwrap()
    }

    #[test]
    fn scalar_dump_round_trips_bitwise_and_header_is_pinned() {
        for n in [1usize, 2] {
            let ch = chart(n, 8);
            let f = random_trig_scalar(ch, 711 + n as u64, 1.3);
            let bytes = scalar_dump_bytes(&f);
            // Header golden check: magic, version 1, kind 1, 2n dims of 8,
            // unit period.
            assert_eq!(&bytes[..4], b"CRF1");
            assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
            assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
            let ndims = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
            assert_eq!(ndims as usize, 2 * n);
            let header = 16 + 8 * ndims as usize + 8;
            assert_eq!(bytes.len(), header + ch.points() * 16);
            let back = match parse_field_dump(&bytes, DiffMode::Spectral).unwrap() {
                FieldDump::Scalar(g) => g,
                FieldDump::Form(_) => panic!("kind tag mangled"),
            };
            assert_eq!(back.chart(), &ch);
            assert!(f
                .data
                .iter()
                .zip(back.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            // Serialization is deterministic.
            assert_eq!(bytes, scalar_dump_bytes(&f));
        }
    }

    #[test]
    fn form_dump_round_trips_bitwise() {
        for n in [1usize, 2] {
            let ch = chart(n, 8);
            let g = random_metric(ch, 23 + n as u64, 0.2);
            let bytes = form_dump_bytes(g.form());
            let back = match parse_field_dump(&bytes, DiffMode::Spectral).unwrap() {
                FieldDump::Form(f) => f,
                FieldDump::Scalar(_) => panic!("kind tag mangled"),
            };
            assert_eq!(back.chart(), &ch);
            for p in 0..ch.points() {
                for (a, b) in g.block(p).iter().zip(back.block(p).iter()) {
                    assert_eq!(a.re.to_bits(), b.re.to_bits());
                    assert_eq!(a.im.to_bits(), b.im.to_bits());
                }
            }
        }
    }

    #[test]
    fn malformed_dumps_are_rejected_with_format_errors() {
        let ch = chart(1, 8);
        let f = random_trig_scalar(ch, 5, 1.0);
        let good = scalar_dump_bytes(&f);

        let mut wrong_magic = good.clone();
        wrong_magic[0] = b'X';
        let mut wrong_version = good.clone();
        wrong_version[4] = 9;
        let truncated = &good[..good.len() - 7];
        let mut trailing = good.clone();
        trailing.push(0);
        let mut complex_scalar = good.clone();
        // Poke a nonzero imaginary slot (second f64 of the first sample).
        let im_off = good.len() - ch.points() * 16 + 8;
        complex_scalar[im_off..im_off + 8].copy_from_slice(&1.0f64.to_le_bytes());

        for bad in [
            wrong_magic.as_slice(),
            wrong_version.as_slice(),
            truncated,
            trailing.as_slice(),
            complex_scalar.as_slice(),
        ] {
            match parse_field_dump(bad, DiffMode::Spectral) {
                Err(CrfError::Format(_)) => {}
                other => panic!("expected format error, got {other:?}"),
            }
        }
    }

    #[test]
    fn typed_readers_enforce_the_kind() {
        let dir = std::env::temp_dir().join(format!("crf_io_kind_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ch = chart(1, 8);
        let scalar_path = dir.join("scalar.crf1");
        let form_path = dir.join("form.crf1");
        write_scalar_dump(&scalar_path, &random_trig_scalar(ch, 2, 1.0)).unwrap();
        write_form_dump(&form_path, random_metric(ch, 3, 0.2).form()).unwrap();
        assert!(read_scalar_dump(&scalar_path, DiffMode::Spectral).is_ok());
        assert!(read_form_dump(&form_path, DiffMode::Spectral).is_ok());
        assert!(matches!(
            read_scalar_dump(&form_path, DiffMode::Spectral),
            Err(CrfError::Format(_))
        ));
        assert!(matches!(
            read_form_dump(&scalar_path, DiffMode::Spectral),
            Err(CrfError::Format(_))
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn trajectory_round_trips_bitwise() {
        let bg = scenario_homogeneous(8, 1, DiffMode::Spectral, 2.0, 1.0, 1.0).unwrap();
        let cfg = FlowConfig {
            scheme: Scheme::Rk4,
            t_max: 1.0,
            min_time: 1.0,
            ..FlowConfig::default()
        };
        let traj = flow::run(&bg, &cfg).unwrap();
        assert!(traj.snapshots.len() >= 3);
        let bytes = trajectory_bytes(&traj).unwrap();
        assert_eq!(&bytes[..4], b"CRFT");
        let back = parse_trajectory(&bytes).unwrap();
        assert_eq!(back.snapshots.len(), traj.snapshots.len());
        assert_eq!(back.cadence.to_bits(), traj.cadence.to_bits());
        assert_eq!(back.converged, traj.converged);
        assert_eq!(back.steps, traj.steps);
        for (a, b) in traj.snapshots.iter().zip(back.snapshots.iter()) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.sup_phidot.to_bits(), b.sup_phidot.to_bits());
            assert_eq!(a.phi.chart(), b.phi.chart());
            assert!(a
                .phi
                .data
                .iter()
                .zip(b.phi.data.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a
                .phidot
                .data
                .iter()
                .zip(b.phidot.data.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // Truncation anywhere is caught.
        assert!(matches!(
            parse_trajectory(&bytes[..bytes.len() - 1]),
            Err(CrfError::Format(_))
        ));
    }

    #[test]
    fn heatmap_renders_gradient_rows_and_constant_slices() {
        let ch = chart(1, 8);
        // f = x: gray levels depend only on the column, increasing linearly.
        let ramp = ScalarField::from_fn(ch, |c| c[0]).unwrap();
        let img = heatmap_pgm(&ramp);
        let header = b"P5\n8 8\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 64);
        let pixels = &img[header.len()..];
        let expected: Vec<u8> = (0..8)
            .map(|col| (255.0 * col as f64 / 7.0).round() as u8)
            .collect();
        for row in 0..8 {
            assert_eq!(&pixels[row * 8..(row + 1) * 8], expected.as_slice());
        }
        // A constant slice renders mid-gray; in n = 2 the higher axes are
        // sliced at zero, so a field depending only on them is constant too.
        let ch2 = chart(2, 8);
        let high = ScalarField::from_fn(ch2, |c| c[2] + c[3]).unwrap();
        let img2 = heatmap_pgm(&high);
        assert!(img2[header.len()..].iter().all(|&p| p == 128));
    }

    #[test]
    fn diagnostics_csv_is_parseable_and_round_trips_floats() {
        let rec = |t: f64, with_residuals: bool| DiagnosticsRecord {
            t,
            sup_phi: 0.1 + t,
            sup_phidot: 1e-3 / (1.0 + t),
            sup_volume_ratio: 1.25,
            inf_q_eps: [-0.1, -0.2, -0.3, -0.4],
            sup_trace: 2.0,
            sup_trace_weighted: 1.9,
            q_trace_sup: 0.7,
            s_min_eig: 0.5,
            einstein_residual: 3.5e-2,
            identity_residuals: with_residuals.then(|| IdentityResiduals {
                potential: 1e-9,
                rate: 2e-9,
                shifted: 3e-9,
                reciprocal: 4e-9,
                log_trace: 5e-7,
            }),
        };
        let records = [rec(0.0, false), rec(0.25, true)];
        let csv = diagnostics_csv(&records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("t,sup_phi,sup_phidot,"));
        assert!(lines[0].contains("inf_q_eps_0.25"));
        let cols = lines[0].split(',').count();
        for (i, line) in lines.iter().enumerate().skip(1) {
            assert_eq!(line.split(',').count(), cols);
            let cells: Vec<&str> = line.split(',').collect();
            // Shortest round-trip printing: parsing recovers the exact bits.
            let t: f64 = cells[0].parse().unwrap();
            assert_eq!(t.to_bits(), records[i - 1].t.to_bits());
            let sup_phi: f64 = cells[1].parse().unwrap();
            assert_eq!(sup_phi.to_bits(), records[i - 1].sup_phi.to_bits());
        }
        // Rows without identity residuals leave those cells empty.
        assert!(lines[1].ends_with(",,,,,"));
        assert!(lines[2].ends_with("0.0000005"));
        // Determinism.
        assert_eq!(csv, diagnostics_csv(&records));
    }
}
