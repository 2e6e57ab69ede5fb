//! Periodic uniform grid charts on `[0, period)^{2n}`.
//!
//! Complex coordinates are `z_i = x_i + sqrt(-1) y_i`; real axes are ordered
//! `(x_1, y_1, ..., x_n, y_n)` with the last axis fastest (row-major storage).

use crate::error::{CrfError, Result};

/// Differentiation backend for all derivative operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMode {
    /// FFT differentiation; exact on resolved trigonometric polynomials.
    Spectral,
    /// 4th-order central differences with periodic wraparound.
    CentralDiff4,
}

/// Immutable description of a periodic grid: complex dimension `n`, samples
/// per real axis, real period, and differentiation backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridChart {
    n: usize,
    resolution: usize,
    period: f64,
    mode: DiffMode,
}

impl GridChart {
    /// Create a chart. `resolution` is the per-real-axis sample count and must
    /// be even and at least 8 (even so the Nyquist mode is unambiguous; small
    /// grids are allowed for spatially constant scenarios).
    pub fn new(n: usize, resolution: usize, period: f64, mode: DiffMode) -> Result<Self> {
        if n == 0 || n > 2 {
            return Err(CrfError::InvalidParam(format!(
                "complex dimension n must be 1 or 2, got {n}"
            )));
        }
        if resolution < 8 || resolution % 2 != 0 {
            return Err(CrfError::InvalidParam(format!(
                "resolution must be even and >= 8, got {resolution}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(CrfError::InvalidParam(format!(
                "period must be positive and finite, got {period}"
            )));
        }
        Ok(Self {
            n,
            resolution,
            period,
            mode,
        })
    }

    /// Chart with unit period, the default domain for all scenarios.
    pub fn unit(n: usize, resolution: usize, mode: DiffMode) -> Result<Self> {
        Self::new(n, resolution, 1.0, mode)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn mode(&self) -> DiffMode {
        self.mode
    }

    /// Same chart with a different differentiation backend.
    pub fn with_mode(&self, mode: DiffMode) -> Self {
        Self { mode, ..*self }
    }

    /// Number of real axes (2n).
    pub fn axes(&self) -> usize {
        2 * self.n
    }

    /// Real axis index of `x_i` for complex axis `i` (0-based).
    pub fn x_axis(&self, i: usize) -> usize {
        2 * i
    }

    /// Real axis index of `y_i` for complex axis `i` (0-based).
    pub fn y_axis(&self, i: usize) -> usize {
        2 * i + 1
    }

    /// Total number of grid points, `resolution^(2n)`.
    pub fn points(&self) -> usize {
        self.resolution.pow(self.axes() as u32)
    }

    /// Grid spacing along every real axis.
    pub fn spacing(&self) -> f64 {
        self.period / self.resolution as f64
    }

    /// Stride of `axis` in the flat row-major layout (last axis fastest).
    pub fn stride(&self, axis: usize) -> usize {
        self.resolution.pow((self.axes() - 1 - axis) as u32)
    }

    /// Decompose a flat index into per-axis sample indices.
    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        debug_assert_eq!(out.len(), self.axes());
        for axis in (0..self.axes()).rev() {
            out[axis] = flat % self.resolution;
            flat /= self.resolution;
        }
    }

    /// Flat index of per-axis sample indices.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.axes());
        let mut flat = 0;
        for &m in multi {
            flat = flat * self.resolution + m;
        }
        flat
    }

    /// Real coordinates of a flat index, in axis order `(x_1, y_1, ...)`.
    pub fn coords(&self, flat: usize, out: &mut [f64]) {
        let mut multi = [0usize; 4];
        self.multi_index(flat, &mut multi[..self.axes()]);
        let h = self.spacing();
        for axis in 0..self.axes() {
            out[axis] = multi[axis] as f64 * h;
        }
    }

    /// Signed integer frequency for sample index `m` along one axis:
    /// `0, 1, ..., N/2-1, -N/2, ..., -1`.
    pub fn signed_freq(&self, m: usize) -> i64 {
        let n = self.resolution as i64;
        let m = m as i64;
        if m <= n / 2 - 1 {
            m
        } else {
            m - n
        }
    }

    /// Angular wavenumber `2 pi f / period` for sample index `m`. For odd
    /// derivative orders the Nyquist mode (`m = N/2`) must be dropped; see
    /// [`crate::spectral`].
    pub fn wavenumber(&self, m: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.signed_freq(m) as f64 / self.period
    }

    /// Largest representable angular wavenumber (the Nyquist wavenumber).
    pub fn max_wavenumber(&self) -> f64 {
        std::f64::consts::PI * self.resolution as f64 / self.period
    }

    /// Error unless `other` is the same chart up to differentiation backend.
    pub fn check_same_geometry(&self, other: &GridChart, what: &str) -> Result<()> {
        if self.n != other.n || self.resolution != other.resolution || self.period != other.period
        {
            return Err(CrfError::ChartMismatch(format!(
                "{what}: ({}, res {}, period {}) vs ({}, res {}, period {})",
                self.n, self.resolution, self.period, other.n, other.resolution, other.period
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(GridChart::unit(0, 16, DiffMode::Spectral).is_err());
        assert!(GridChart::unit(3, 16, DiffMode::Spectral).is_err());
        assert!(GridChart::unit(1, 15, DiffMode::Spectral).is_err());
        assert!(GridChart::unit(1, 6, DiffMode::Spectral).is_err());
        assert!(GridChart::new(1, 16, 0.0, DiffMode::Spectral).is_err());
        assert!(GridChart::new(1, 16, f64::NAN, DiffMode::Spectral).is_err());
        assert!(GridChart::unit(2, 16, DiffMode::Spectral).is_ok());
    }

    #[test]
    fn indexing_round_trips() {
        let chart = GridChart::unit(2, 10, DiffMode::Spectral).unwrap();
        assert_eq!(chart.axes(), 4);
        assert_eq!(chart.points(), 10_000);
        let mut multi = [0usize; 4];
        for flat in [0usize, 1, 9, 10, 9_999, 4_321] {
            chart.multi_index(flat, &mut multi);
            assert_eq!(chart.flat_index(&multi), flat);
        }
        // Last axis is fastest.
        chart.multi_index(1, &mut multi);
        assert_eq!(multi, [0, 0, 0, 1]);
    }

    #[test]
    fn coords_and_frequencies() {
        let chart = GridChart::unit(1, 8, DiffMode::Spectral).unwrap();
        let mut xy = [0.0f64; 2];
        chart.coords(chart.flat_index(&[2, 5]), &mut xy);
        assert_eq!(xy, [0.25, 0.625]);
        let freqs: Vec<i64> = (0..8).map(|m| chart.signed_freq(m)).collect();
        assert_eq!(freqs, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert!((chart.wavenumber(1) - 2.0 * std::f64::consts::PI).abs() < 1e-14);
    }
}
