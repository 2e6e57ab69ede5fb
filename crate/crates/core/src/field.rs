//! Grid-sampled field containers with invariant-checking constructors.
//!
//! Matrix-valued fields are stored point-major: the `n x n` coefficient block
//! of grid point `p` occupies `data[p*n*n .. (p+1)*n*n]` row-major, entry
//! `(i, j)` holding the coefficient with unbarred index `i` and barred index
//! `j`. Reductions run sequentially in flat index order so results are
//! bit-reproducible regardless of thread count.

use crate::error::{CrfError, Result};
use crate::grid::GridChart;
use crate::{linalg, Complex64};

/// Absolute-plus-relative tolerance for Hermiticity validation.
pub const HERMITIAN_TOL: f64 = 1e-12;

fn check_finite_real(what: &str, data: &[f64]) -> Result<()> {
    for (idx, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(CrfError::NonFinite {
                what: what.to_string(),
                index: idx,
            });
        }
    }
    Ok(())
}

fn check_finite_complex(what: &str, data: &[Complex64]) -> Result<()> {
    for (idx, v) in data.iter().enumerate() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(CrfError::NonFinite {
                what: what.to_string(),
                index: idx,
            });
        }
    }
    Ok(())
}

/// Boolean exclusion mask; `true` marks points left out of sup/inf reductions.
#[derive(Debug, Clone)]
pub struct Mask {
    chart: GridChart,
    excluded: Vec<bool>,
}

impl Mask {
    /// Mask excluding nothing.
    pub fn none(chart: GridChart) -> Self {
        Self {
            chart,
            excluded: vec![false; chart.points()],
        }
    }

    pub fn from_excluded(chart: GridChart, excluded: Vec<bool>) -> Result<Self> {
        if excluded.len() != chart.points() {
            return Err(CrfError::ChartMismatch(format!(
                "mask length {} != grid points {}",
                excluded.len(),
                chart.points()
            )));
        }
        if excluded.iter().all(|&e| e) {
            return Err(CrfError::InvalidParam(
                "mask excludes every grid point".into(),
            ));
        }
        Ok(Self { chart, excluded })
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    #[inline]
    pub fn is_excluded(&self, p: usize) -> bool {
        self.excluded[p]
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }
}

/// Real scalar sample per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    chart: GridChart,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(chart: GridChart) -> Self {
        Self {
            chart,
            data: vec![0.0; chart.points()],
        }
    }

    pub fn constant(chart: GridChart, value: f64) -> Self {
        Self {
            chart,
            data: vec![value; chart.points()],
        }
    }

    /// Build from a closure of the real coordinates `(x1, y1[, x2, y2])`.
    pub fn from_fn(chart: GridChart, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut data = vec![0.0; chart.points()];
        let mut coords = vec![0.0; chart.axes()];
        for (p, slot) in data.iter_mut().enumerate() {
            chart.coords(p, &mut coords);
            *slot = f(&coords);
        }
        check_finite_real("scalar field from_fn", &data)?;
        Ok(Self { chart, data })
    }

    pub fn from_vec(chart: GridChart, data: Vec<f64>) -> Result<Self> {
        if data.len() != chart.points() {
            return Err(CrfError::ChartMismatch(format!(
                "scalar data length {} != grid points {}",
                data.len(),
                chart.points()
            )));
        }
        check_finite_real("scalar field", &data)?;
        Ok(Self { chart, data })
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            chart: self.chart,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.chart.check_same_geometry(&other.chart, "zip_map").is_ok());
        Self {
            chart: self.chart,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &Self, c: f64) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn shift(&mut self, c: f64) {
        for a in &mut self.data {
            *a += c;
        }
    }

    /// Sequential supremum over all points.
    pub fn sup(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sequential infimum over all points.
    pub fn inf(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Supremum over points the mask does not exclude.
    pub fn sup_unmasked(&self, mask: &Mask) -> f64 {
        self.data
            .iter()
            .enumerate()
            .filter(|(p, _)| !mask.is_excluded(*p))
            .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v))
    }

    pub fn inf_unmasked(&self, mask: &Mask) -> f64 {
        self.data
            .iter()
            .enumerate()
            .filter(|(p, _)| !mask.is_excluded(*p))
            .fold(f64::INFINITY, |m, (_, &v)| m.min(v))
    }

    pub fn sup_abs_unmasked(&self, mask: &Mask) -> f64 {
        self.data
            .iter()
            .enumerate()
            .filter(|(p, _)| !mask.is_excluded(*p))
            .fold(0.0f64, |m, (_, &v)| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        check_finite_real(what, &self.data)
    }
}

/// Hermitian (1,1)-form coefficients `alpha_{i jbar}` per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Form11Field {
    chart: GridChart,
    pub data: Vec<Complex64>,
}

impl Form11Field {
    pub fn block_len(chart: &GridChart) -> usize {
        chart.n() * chart.n()
    }

    pub fn zeros(chart: GridChart) -> Self {
        Self {
            chart,
            data: vec![Complex64::default(); chart.points() * Self::block_len(&chart)],
        }
    }

    /// Same constant Hermitian matrix at every point.
    pub fn constant(chart: GridChart, matrix: &[Complex64]) -> Result<Self> {
        let bl = Self::block_len(&chart);
        if matrix.len() != bl {
            return Err(CrfError::InvalidParam(format!(
                "constant matrix has {} entries, expected {}",
                matrix.len(),
                bl
            )));
        }
        let mut data = Vec::with_capacity(chart.points() * bl);
        for _ in 0..chart.points() {
            data.extend_from_slice(matrix);
        }
        Self::try_new(chart, data)
    }

    /// `s * Id` at every point.
    pub fn scaled_identity(chart: GridChart, s: f64) -> Self {
        let n = chart.n();
        let bl = n * n;
        let mut data = vec![Complex64::default(); chart.points() * bl];
        for p in 0..chart.points() {
            for i in 0..n {
                data[p * bl + i * n + i] = Complex64::new(s, 0.0);
            }
        }
        Self { chart, data }
    }

    /// Validated constructor: every point block must be Hermitian within
    /// `HERMITIAN_TOL * (1 + block magnitude)` and finite.
    pub fn try_new(chart: GridChart, data: Vec<Complex64>) -> Result<Self> {
        let n = chart.n();
        let bl = n * n;
        if data.len() != chart.points() * bl {
            return Err(CrfError::ChartMismatch(format!(
                "form data length {} != points*block {}",
                data.len(),
                chart.points() * bl
            )));
        }
        check_finite_complex("(1,1)-form field", &data)?;
        for p in 0..chart.points() {
            let block = &data[p * bl..(p + 1) * bl];
            let scale = block.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            let defect = linalg::hermitian_defect(n, block);
            if defect > HERMITIAN_TOL * (1.0 + scale) {
                return Err(CrfError::InvalidParam(format!(
                    "non-Hermitian block at point {p}: defect {defect:.3e}, scale {scale:.3e}"
                )));
            }
        }
        Ok(Self { chart, data })
    }

    /// Constructor that symmetrizes each block instead of validating; used by
    /// operators whose output is Hermitian up to roundoff by construction.
    pub fn hermitized(chart: GridChart, mut data: Vec<Complex64>) -> Result<Self> {
        let n = chart.n();
        let bl = n * n;
        if data.len() != chart.points() * bl {
            return Err(CrfError::ChartMismatch(format!(
                "form data length {} != points*block {}",
                data.len(),
                chart.points() * bl
            )));
        }
        check_finite_complex("(1,1)-form field", &data)?;
        for p in 0..chart.points() {
            linalg::hermitize(n, &mut data[p * bl..(p + 1) * bl]);
        }
        Ok(Self { chart, data })
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    #[inline]
    pub fn block(&self, p: usize) -> &[Complex64] {
        let bl = self.chart.n() * self.chart.n();
        &self.data[p * bl..(p + 1) * bl]
    }

    /// Gather one matrix component into a contiguous grid array.
    pub fn component(&self, i: usize, j: usize) -> Vec<Complex64> {
        let n = self.chart.n();
        let bl = n * n;
        let off = i * n + j;
        (0..self.chart.points())
            .map(|p| self.data[p * bl + off])
            .collect()
    }

    /// Scatter a contiguous grid array into one matrix component.
    pub fn set_component(&mut self, i: usize, j: usize, values: &[Complex64]) {
        let n = self.chart.n();
        let bl = n * n;
        let off = i * n + j;
        for (p, &v) in values.iter().enumerate() {
            self.data[p * bl + off] = v;
        }
    }

    /// `self + c * other`, preserving Hermiticity exactly.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Self {
        debug_assert!(self.chart.check_same_geometry(&other.chart, "zip_map").is_ok());
        Self {
            chart: self.chart,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b * c)
                .collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self {
        debug_assert!(self.chart.check_same_geometry(&other.chart, "zip_map").is_ok());
        Self {
            chart: self.chart,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| x * a + y * b)
                .collect(),
        }
    }

    /// Largest Hermitian defect over all point blocks (diagnostic).
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.chart.n();
        let bl = n * n;
        let mut worst = 0.0f64;
        for p in 0..self.chart.points() {
            worst = worst.max(linalg::hermitian_defect(n, &self.data[p * bl..(p + 1) * bl]));
        }
        worst
    }

    /// Sup over points of the entrywise max-norm of the blocks.
    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    pub fn sup_norm_unmasked(&self, mask: &Mask) -> f64 {
        let bl = self.chart.n() * self.chart.n();
        let mut worst = 0.0f64;
        for p in 0..self.chart.points() {
            if mask.is_excluded(p) {
                continue;
            }
            for v in &self.data[p * bl..(p + 1) * bl] {
                worst = worst.max(v.norm());
            }
        }
        worst
    }
}

/// Positive definite Hermitian metric field `g_{i jbar}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    form: Form11Field,
}

impl MetricField {
    /// Validated constructor: rejects any point where the block fails strict
    /// positive definiteness.
    pub fn try_new(form: Form11Field) -> Result<Self> {
        let n = form.chart().n();
        let bl = n * n;
        for p in 0..form.chart().points() {
            let block = &form.data[p * bl..(p + 1) * bl];
            if !linalg::is_positive_definite(n, block) {
                let (lo, _) = linalg::eig_range_hermitian(n, block);
                return Err(CrfError::DegenerateMetric {
                    index: p,
                    detail: format!("smallest eigenvalue {lo:.6e} not positive"),
                });
            }
        }
        Ok(Self { form })
    }

    /// Constant metric `s * Id`.
    pub fn scaled_identity(chart: GridChart, s: f64) -> Result<Self> {
        if s <= 0.0 {
            return Err(CrfError::InvalidParam(format!(
                "identity scale {s} must be positive"
            )));
        }
        Self::try_new(Form11Field::scaled_identity(chart, s))
    }

    pub fn form(&self) -> &Form11Field {
        &self.form
    }

    pub fn into_form(self) -> Form11Field {
        self.form
    }

    pub fn chart(&self) -> &GridChart {
        self.form.chart()
    }

    #[inline]
    pub fn block(&self, p: usize) -> &[Complex64] {
        self.form.block(p)
    }

    /// Pointwise determinant (real and positive by construction).
    pub fn det(&self) -> ScalarField {
        let n = self.chart().n();
        let bl = n * n;
        let data = (0..self.chart().points())
            .map(|p| linalg::det_hermitian(n, &self.form.data[p * bl..(p + 1) * bl]))
            .collect();
        ScalarField {
            chart: *self.chart(),
            data,
        }
    }

    /// Pointwise inverse blocks `g^{jbar i}` laid out so that entry `(j, i)`
    /// of block `p` (row `j`, column `i`) multiplies as `B * G = Id`.
    pub fn inverse_blocks(&self) -> Vec<Complex64> {
        let n = self.chart().n();
        let bl = n * n;
        let mut out = vec![Complex64::default(); self.form.data.len()];
        for p in 0..self.chart().points() {
            linalg::invert_hermitian(
                n,
                &self.form.data[p * bl..(p + 1) * bl],
                &mut out[p * bl..(p + 1) * bl],
            );
        }
        out
    }

    /// Smallest plain eigenvalue over all points.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.chart().n();
        let bl = n * n;
        let mut lo = f64::INFINITY;
        for p in 0..self.chart().points() {
            let (l, _) = linalg::eig_range_hermitian(n, &self.form.data[p * bl..(p + 1) * bl]);
            lo = lo.min(l);
        }
        lo
    }

    /// Largest plain eigenvalue over all points.
    pub fn max_eigenvalue(&self) -> f64 {
        let n = self.chart().n();
        let bl = n * n;
        let mut hi = f64::NEG_INFINITY;
        for p in 0..self.chart().points() {
            let (_, h) = linalg::eig_range_hermitian(n, &self.form.data[p * bl..(p + 1) * bl]);
            hi = hi.max(h);
        }
        hi
    }
}

/// Torsion coefficients `T^k_{ij}` per grid point (`n^3` entries, layout
/// `k*n*n + i*n + j`).
#[derive(Debug, Clone)]
pub struct TorsionField {
    chart: GridChart,
    pub data: Vec<Complex64>,
}

impl TorsionField {
    pub fn new(chart: GridChart, data: Vec<Complex64>) -> Result<Self> {
        let n = chart.n();
        let bl = n * n * n;
        if data.len() != chart.points() * bl {
            return Err(CrfError::ChartMismatch(format!(
                "torsion data length {} != points*n^3 {}",
                data.len(),
                chart.points() * bl
            )));
        }
        check_finite_complex("torsion field", &data)?;
        Ok(Self { chart, data })
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    #[inline]
    pub fn get(&self, p: usize, k: usize, i: usize, j: usize) -> Complex64 {
        let n = self.chart.n();
        self.data[p * n * n * n + k * n * n + i * n + j]
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Largest violation of the lower-index antisymmetry `T^k_{ij} = -T^k_{ji}`.
    pub fn antisymmetry_defect(&self) -> f64 {
        let n = self.chart.n();
        let mut worst = 0.0f64;
        for p in 0..self.chart.points() {
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let d = (self.get(p, k, i, j) + self.get(p, k, j, i)).norm();
                        worst = worst.max(d);
                    }
                }
            }
        }
        worst
    }
}

/// Chern curvature coefficients `R_{k lbar i}{}^p` per grid point (`n^4`
/// entries, layout `((k*n + l)*n + i)*n + p`).
#[derive(Debug, Clone)]
pub struct CurvatureField {
    chart: GridChart,
    pub data: Vec<Complex64>,
}

impl CurvatureField {
    pub fn new(chart: GridChart, data: Vec<Complex64>) -> Result<Self> {
        let n = chart.n();
        let bl = n * n * n * n;
        if data.len() != chart.points() * bl {
            return Err(CrfError::ChartMismatch(format!(
                "curvature data length {} != points*n^4 {}",
                data.len(),
                chart.points() * bl
            )));
        }
        check_finite_complex("curvature field", &data)?;
        Ok(Self { chart, data })
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    #[inline]
    pub fn get(&self, pt: usize, k: usize, l: usize, i: usize, p: usize) -> Complex64 {
        let n = self.chart.n();
        self.data[pt * n * n * n * n + ((k * n + l) * n + i) * n + p]
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }
}

/// Strictly positive volume density against the Euclidean element of the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFormField {
    chart: GridChart,
    pub density: Vec<f64>,
}

impl VolumeFormField {
    pub fn try_new(chart: GridChart, density: Vec<f64>) -> Result<Self> {
        if density.len() != chart.points() {
            return Err(CrfError::ChartMismatch(format!(
                "density length {} != grid points {}",
                density.len(),
                chart.points()
            )));
        }
        check_finite_real("volume density", &density)?;
        for (idx, &v) in density.iter().enumerate() {
            if v <= 0.0 {
                return Err(CrfError::InvalidParam(format!(
                    "volume density {v:.6e} not positive at point {idx}"
                )));
            }
        }
        Ok(Self { chart, density })
    }

    pub fn chart(&self) -> &GridChart {
        &self.chart
    }

    /// Total mass: periodic trapezoidal quadrature (= Riemann sum on a
    /// uniform periodic grid) of the density.
    pub fn mass(&self) -> f64 {
        let cell = self.chart.spacing().powi(self.chart.axes() as i32);
        self.density.iter().sum::<f64>() * cell
    }

    /// Pointwise ratio of densities as a scalar field.
    pub fn ratio(&self, denom: &Self) -> ScalarField {
        debug_assert!(self.chart.check_same_geometry(&denom.chart, "density ratio").is_ok());
        ScalarField {
            chart: self.chart,
            data: self
                .density
                .iter()
                .zip(&denom.density)
                .map(|(&a, &b)| a / b)
                .collect(),
        }
    }
}
