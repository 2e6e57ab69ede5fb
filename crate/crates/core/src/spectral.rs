//! Differentiation backends: FFT (spectral) and 4th-order central differences.
//!
//! Both backends expose the same primitive, a first derivative along one real
//! axis of a complex-sampled field. Holomorphic derivatives are built on top:
//! `d/dz_i = (d/dx_i - sqrt(-1) d/dy_i)/2` and its conjugate. The spectral
//! backend zeroes the Nyquist mode for odd derivative orders so real input
//! yields real-derivative output; the symbols used for composed second
//! derivatives reuse the same zeroed tables, keeping the two routes (compose
//! two first derivatives vs. one symbol multiply) bit-consistent.

use std::sync::{Arc, Mutex, OnceLock};

use rustfft::{Fft, FftPlanner};

use crate::grid::{DiffMode, GridChart};
use crate::Complex64;

static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .expect("FFT planner lock poisoned");
    if forward {
        planner.plan_fft_forward(len)
    } else {
        planner.plan_fft_inverse(len)
    }
}

/// Iterate the strided lanes of `axis`, batch-gathering them into a contiguous
/// scratch buffer, apply `f` to the batch (lanes back to back, each `len`
/// long), and scatter back. The last axis is already contiguous and is
/// processed in place without copies.
fn for_each_lane_batch(
    chart: &GridChart,
    data: &mut [Complex64],
    axis: usize,
    mut f: impl FnMut(&mut [Complex64]),
) {
    let len = chart.resolution();
    let stride = chart.stride(axis);
    if stride == 1 {
        f(data);
        return;
    }
    let outer = data.len() / (len * stride);
    let batch = stride.min(4096);
    let mut scratch = vec![Complex64::default(); batch * len];
    for o in 0..outer {
        let block = o * len * stride;
        let mut i = 0;
        while i < stride {
            let b = batch.min(stride - i);
            for j in 0..len {
                let row = block + j * stride + i;
                for (s, v) in scratch[j * b..(j + 1) * b]
                    .iter_mut()
                    .zip(&data[row..row + b])
                {
                    *s = *v;
                }
            }
            // scratch now holds b lanes interleaved column-major; transpose to
            // lane-major so the FFT sees contiguous lanes.
            let mut lanes = vec![Complex64::default(); b * len];
            for j in 0..len {
                for l in 0..b {
                    lanes[l * len + j] = scratch[j * b + l];
                }
            }
            f(&mut lanes[..b * len]);
            for j in 0..len {
                for l in 0..b {
                    scratch[j * b + l] = lanes[l * len + j];
                }
            }
            for j in 0..len {
                let row = block + j * stride + i;
                for (v, s) in data[row..row + b]
                    .iter_mut()
                    .zip(&scratch[j * b..(j + 1) * b])
                {
                    *v = *s;
                }
            }
            i += b;
        }
    }
}

/// In-place FFT along one axis. Forward transforms are unnormalized; the
/// inverse divides by the axis length.
pub fn fft_axis(chart: &GridChart, data: &mut [Complex64], axis: usize, forward: bool) {
    let len = chart.resolution();
    let fft = plan(len, forward);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for_each_lane_batch(chart, data, axis, |lanes| {
        fft.process_with_scratch(lanes, &mut scratch);
    });
    if !forward {
        let inv = 1.0 / len as f64;
        for v in data.iter_mut() {
            *v *= inv;
        }
    }
}

/// In-place FFT over all axes (full transform).
pub fn fft_all(chart: &GridChart, data: &mut [Complex64], forward: bool) {
    for axis in 0..chart.axes() {
        fft_axis(chart, data, axis, forward);
    }
}

/// Per-axis angular wavenumber table with the Nyquist entry zeroed, the table
/// every odd-order spectral derivative draws from.
pub fn wavenumbers_zero_nyquist(chart: &GridChart) -> Vec<f64> {
    let res = chart.resolution();
    (0..res)
        .map(|m| if m == res / 2 { 0.0 } else { chart.wavenumber(m) })
        .collect()
}

fn diff_axis_spectral(chart: &GridChart, data: &[Complex64], axis: usize) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    fft_axis(chart, &mut buf, axis, true);
    let k = wavenumbers_zero_nyquist(chart);
    let stride = chart.stride(axis);
    let len = chart.resolution();
    for (idx, v) in buf.iter_mut().enumerate() {
        let m = (idx / stride) % len;
        *v *= Complex64::new(0.0, k[m]);
    }
    fft_axis(chart, &mut buf, axis, false);
    buf
}

fn diff_axis_fd4(chart: &GridChart, data: &[Complex64], axis: usize) -> Vec<Complex64> {
    let len = chart.resolution();
    let stride = chart.stride(axis);
    let inv12h = 1.0 / (12.0 * chart.spacing());
    let mut out = vec![Complex64::default(); data.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let m = (idx / stride) % len;
        let base = idx - m * stride;
        let at = |j: i64| {
            let mm = (m as i64 + j).rem_euclid(len as i64) as usize;
            data[base + mm * stride]
        };
        *o = ((at(1) - at(-1)) * 8.0 - (at(2) - at(-2))) * inv12h;
    }
    out
}

/// First derivative along a real axis, dispatching on the chart's backend.
pub fn diff_axis(chart: &GridChart, data: &[Complex64], axis: usize) -> Vec<Complex64> {
    match chart.mode() {
        DiffMode::Spectral => diff_axis_spectral(chart, data, axis),
        DiffMode::CentralDiff4 => diff_axis_fd4(chart, data, axis),
    }
}

/// Holomorphic derivative `d/dz_i` of a complex-sampled field.
pub fn dz(chart: &GridChart, data: &[Complex64], i: usize) -> Vec<Complex64> {
    let dx = diff_axis(chart, data, chart.x_axis(i));
    let dy = diff_axis(chart, data, chart.y_axis(i));
    dx.iter()
        .zip(&dy)
        .map(|(a, b)| (a - Complex64::i() * b) * 0.5)
        .collect()
}

/// Antiholomorphic derivative `d/dzbar_i` of a complex-sampled field.
pub fn dzbar(chart: &GridChart, data: &[Complex64], i: usize) -> Vec<Complex64> {
    let dx = diff_axis(chart, data, chart.x_axis(i));
    let dy = diff_axis(chart, data, chart.y_axis(i));
    dx.iter()
        .zip(&dy)
        .map(|(a, b)| (a + Complex64::i() * b) * 0.5)
        .collect()
}

/// Real-to-complex lift.
pub fn lift(data: &[f64]) -> Vec<Complex64> {
    data.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Spectrum of the symbol of `d/dz_i` at mode `multi`, Nyquist zeroed:
/// `(i k_x + k_y)/2` on the `(x_i, y_i)` axis pair.
pub fn sigma_z(k: &[f64], chart: &GridChart, multi: &[usize], i: usize) -> Complex64 {
    let kx = k[multi[chart.x_axis(i)]];
    let ky = k[multi[chart.y_axis(i)]];
    Complex64::new(ky, kx) * 0.5
}

/// Spectrum of the symbol of `d/dzbar_j`: `(i k_x - k_y)/2`.
pub fn sigma_zbar(k: &[f64], chart: &GridChart, multi: &[usize], j: usize) -> Complex64 {
    let kx = k[multi[chart.x_axis(j)]];
    let ky = k[multi[chart.y_axis(j)]];
    Complex64::new(-ky, kx) * 0.5
}

/// Solve `(shift - coeff * Lap_flat) u = rhs` for real `rhs`, where
/// `Lap_flat = (1/4) sum_a d^2/da^2` is the flat-metric Laplacian in complex
/// normalization. Always factorized spectrally, independent of the chart's
/// differentiation backend: callers use it as an implicit stabilizer or
/// preconditioner whose exact symbol is immaterial as long as it dominates.
/// Requires `shift > 0`.
pub fn solve_helmholtz_flat(chart: &GridChart, rhs: &[f64], shift: f64, coeff: f64) -> Vec<f64> {
    debug_assert!(shift > 0.0);
    let mut buf = lift(rhs);
    fft_all(chart, &mut buf, true);
    let res = chart.resolution();
    let axes = chart.axes();
    // Full wavenumber table (Nyquist kept: the even-order symbol is real).
    let k2: Vec<f64> = (0..res)
        .map(|m| {
            let k = chart.wavenumber(m);
            k * k
        })
        .collect();
    let mut multi = [0usize; 4];
    for (idx, v) in buf.iter_mut().enumerate() {
        chart.multi_index(idx, &mut multi[..axes]);
        let mut ksq = 0.0;
        for &m in &multi[..axes] {
            ksq += k2[m];
        }
        *v /= shift + coeff * 0.25 * ksq;
    }
    fft_all(chart, &mut buf, false);
    buf.iter().map(|v| v.re).collect()
}

/// Largest angular wavenumber per real axis carrying relative spectral mass
/// above `rel_tol`, measured against the field's largest coefficient. Returns
/// zeros for constant fields (their FFT is exactly zero off the DC bin).
pub fn active_wavenumbers(chart: &GridChart, data: &[f64], rel_tol: f64) -> Vec<f64> {
    let mut buf = lift(data);
    fft_all(chart, &mut buf, true);
    let peak = buf.iter().map(|v| v.norm_sqr()).fold(0.0f64, f64::max);
    let axes = chart.axes();
    let mut kmax = vec![0.0f64; axes];
    if peak == 0.0 {
        return kmax;
    }
    let floor = peak * rel_tol * rel_tol;
    let mut multi = [0usize; 4];
    for (idx, v) in buf.iter().enumerate() {
        if v.norm_sqr() > floor {
            chart.multi_index(idx, &mut multi[..axes]);
            for a in 0..axes {
                let k = chart.wavenumber(multi[a]).abs();
                if k > kmax[a] {
                    kmax[a] = k;
                }
            }
        }
    }
    kmax
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample(chart: &GridChart, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut xy = [0.0f64; 2];
        (0..chart.points())
            .map(|i| {
                chart.coords(i, &mut xy);
                f(xy[0], xy[1])
            })
            .collect()
    }

    #[test]
    fn spectral_derivative_is_exact_on_modes() {
        let chart = GridChart::unit(1, 32, DiffMode::Spectral).unwrap();
        let f = sample(&chart, |x, _| (2.0 * PI * x).sin());
        let df = diff_axis(&chart, &lift(&f), 0);
        let expect = sample(&chart, |x, _| 2.0 * PI * (2.0 * PI * x).cos());
        for (a, b) in df.iter().zip(&expect) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_is_exactly_zero() {
        // Power-of-two FFTs cancel identical summands exactly, so constant
        // fields have bitwise-zero derivatives; the flow's spatially constant
        // scenarios rely on this invariant.
        let chart = GridChart::unit(1, 64, DiffMode::Spectral).unwrap();
        let f = vec![0.731_058_578_630_004_9; chart.points()];
        for axis in 0..2 {
            let df = diff_axis(&chart, &lift(&f), axis);
            assert!(df.iter().all(|v| v.re == 0.0 && v.im == 0.0));
        }
    }

    #[test]
    fn fd4_converges_at_fourth_order() {
        let err_at = |res: usize| {
            let chart = GridChart::unit(1, res, DiffMode::CentralDiff4).unwrap();
            let f = sample(&chart, |x, _| (2.0 * PI * x).sin());
            let df = diff_axis(&chart, &lift(&f), 0);
            let expect = sample(&chart, |x, _| 2.0 * PI * (2.0 * PI * x).cos());
            df.iter()
                .zip(&expect)
                .map(|(a, b)| (a.re - b).abs())
                .fold(0.0f64, f64::max)
        };
        let ratio = err_at(32) / err_at(64);
        assert!(
            (ratio - 16.0).abs() < 2.0,
            "4th-order ratio off: {ratio:.3}"
        );
    }

    #[test]
    fn backends_agree_on_band_limited_input() {
        // 4th-order differences reach 1e-8 relative error on mode-1 data once
        // (k h)^4 / 30 is small enough; resolution 512 gives ~6e-10.
        let spectral = GridChart::unit(1, 512, DiffMode::Spectral).unwrap();
        let fd = spectral.with_mode(DiffMode::CentralDiff4);
        let f = sample(&spectral, |x, y| {
            (2.0 * PI * x).sin() + 0.5 * (2.0 * PI * y).cos()
        });
        for axis in 0..2 {
            let a = diff_axis(&spectral, &lift(&f), axis);
            let b = diff_axis(&fd, &lift(&f), axis);
            let err = a
                .iter()
                .zip(&b)
                .map(|(u, v)| (u - v).norm())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-8, "axis {axis} backend gap {err:.3e}");
        }
    }

    #[test]
    fn dz_and_dzbar_split_the_gradient() {
        let chart = GridChart::unit(1, 32, DiffMode::Spectral).unwrap();
        // f = sin(2 pi x): d/dz f = pi cos(2 pi x), d/dzbar the same (real f).
        let f = sample(&chart, |x, _| (2.0 * PI * x).sin());
        let a = dz(&chart, &lift(&f), 0);
        let b = dzbar(&chart, &lift(&f), 0);
        let expect = sample(&chart, |x, _| PI * (2.0 * PI * x).cos());
        for ((u, v), e) in a.iter().zip(&b).zip(&expect) {
            assert!((u.re - e).abs() < 1e-12 && u.im.abs() < 1e-12);
            assert!((v.re - e).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn helmholtz_solve_inverts_shifted_laplacian() {
        let chart = GridChart::unit(1, 32, DiffMode::Spectral).unwrap();
        // u = cos(2 pi x): (shift - c Lap) u = (shift + c pi^2) u.
        let u = sample(&chart, |x, _| (2.0 * PI * x).cos());
        let rhs: Vec<f64> = u.iter().map(|v| v * (2.0 + 3.0 * PI * PI)).collect();
        let got = solve_helmholtz_flat(&chart, &rhs, 2.0, 3.0);
        for (a, b) in got.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn active_bandwidth_sees_content_only() {
        let chart = GridChart::unit(1, 64, DiffMode::Spectral).unwrap();
        let constant = vec![3.25f64; chart.points()];
        assert_eq!(active_wavenumbers(&chart, &constant, 1e-13), vec![0.0, 0.0]);
        let f = sample(&chart, |x, y| {
            (2.0 * PI * 3.0 * x).sin() + (2.0 * PI * y).cos()
        });
        let k = active_wavenumbers(&chart, &f, 1e-10);
        assert!((k[0] - 6.0 * PI).abs() < 1e-9);
        assert!((k[1] - 2.0 * PI).abs() < 1e-9);
    }
}
