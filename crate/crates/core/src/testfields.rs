//! Seeded random smooth periodic fields for property checks.
//!
//! All generators are band-limited trigonometric polynomials (per-axis
//! integer frequencies with |m| <= 1), so they are exactly representable on
//! every supported grid and safe for both differentiation backends. Outputs
//! are deterministic functions of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{Form11Field, MetricField, ScalarField};
use crate::grid::GridChart;
use crate::Complex64;

/// Enumerate the nonzero frequency vectors with entries in {-1, 0, 1}.
fn low_modes(axes: usize) -> Vec<Vec<i64>> {
    let mut modes = Vec::new();
    let total = 3usize.pow(axes as u32);
    for code in 0..total {
        let mut m = vec![0i64; axes];
        let mut c = code;
        for slot in m.iter_mut() {
            *slot = (c % 3) as i64 - 1;
            c /= 3;
        }
        if m.iter().any(|&v| v != 0) {
            modes.push(m);
        }
    }
    modes
}

fn trig_samples(
    chart: &GridChart,
    rng: &mut ChaCha8Rng,
    amplitude: f64,
) -> (Vec<f64>, Vec<f64>) {
    let modes = low_modes(chart.axes());
    // Two independent coefficient tables so complex fields can reuse this.
    let coeffs: Vec<(f64, f64)> = modes
        .iter()
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let coeffs_b: Vec<(f64, f64)> = modes
        .iter()
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let norm = amplitude / (2.0 * modes.len() as f64);
    let mut re = vec![0.0; chart.points()];
    let mut im = vec![0.0; chart.points()];
    let mut coords = vec![0.0; chart.axes()];
    let two_pi = 2.0 * std::f64::consts::PI;
    for p in 0..chart.points() {
        chart.coords(p, &mut coords);
        let mut acc_re = 0.0;
        let mut acc_im = 0.0;
        for (m, ((a, b), (a2, b2))) in modes.iter().zip(coeffs.iter().zip(&coeffs_b)) {
            let phase: f64 = m
                .iter()
                .zip(&coords)
                .map(|(&mi, &xi)| mi as f64 * xi)
                .sum();
            let (s, c) = (two_pi * phase).sin_cos();
            acc_re += a * c + b * s;
            acc_im += a2 * c + b2 * s;
        }
        re[p] = acc_re * norm;
        im[p] = acc_im * norm;
    }
    (re, im)
}

/// Random real trigonometric polynomial with sup norm <= `amplitude`.
pub fn random_trig_scalar(chart: GridChart, seed: u64, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (re, _) = trig_samples(&chart, &mut rng, amplitude);
    ScalarField::from_vec(chart, re).expect("trig samples are finite")
}

/// Random complex trigonometric polynomial with |value| <= sqrt(2)*amplitude.
pub fn random_trig_complex(chart: GridChart, seed: u64, amplitude: f64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (re, im) = trig_samples(&chart, &mut rng, amplitude);
    re.into_iter()
        .zip(im)
        .map(|(r, i)| Complex64::new(r, i))
        .collect()
}

/// Random smooth Hermitian positive definite metric: identity plus small
/// band-limited perturbations (diagonal real, off-diagonal complex).
pub fn random_metric(chart: GridChart, seed: u64, strength: f64) -> MetricField {
    assert!(
        strength > 0.0 && strength <= 0.25,
        "perturbation strength must sit in (0, 0.25] to keep positivity"
    );
    let n = chart.n();
    let bl = n * n;
    let mut data = vec![Complex64::default(); chart.points() * bl];
    for i in 0..n {
        let diag = random_trig_scalar(chart, seed.wrapping_add(i as u64), strength);
        for p in 0..chart.points() {
            data[p * bl + i * n + i] = Complex64::new(1.0 + diag.data[p], 0.0);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let off = random_trig_complex(
                chart,
                seed.wrapping_add(100 + (i * n + j) as u64),
                strength * 0.5,
            );
            for p in 0..chart.points() {
                data[p * bl + i * n + j] = off[p];
                data[p * bl + j * n + i] = off[p].conj();
            }
        }
    }
    let form = Form11Field::try_new(chart, data).expect("construction is Hermitian");
    MetricField::try_new(form).expect("perturbation small enough for positivity")
}

/// Random smooth vector field: `n` component grids of type (1,0).
pub fn random_vector_field(chart: GridChart, seed: u64) -> Vec<Vec<Complex64>> {
    (0..chart.n())
        .map(|i| random_trig_complex(chart, seed.wrapping_add(7000 + i as u64), 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DiffMode;

    #[test]
    fn generators_are_deterministic_and_bounded() {
        let chart = GridChart::new(2, 8, 1.0, DiffMode::Spectral).unwrap();
        let a = random_trig_scalar(chart, 42, 0.2);
        let b = random_trig_scalar(chart, 42, 0.2);
        assert_eq!(a.data, b.data);
        assert!(a.sup_abs() <= 0.2 + 1e-12);

        let g = random_metric(chart, 7, 0.2);
        assert!(g.min_eigenvalue() > 0.5);
        let g2 = random_metric(chart, 7, 0.2);
        assert_eq!(g.form().data, g2.form().data);
        assert!(g.form().data != random_metric(chart, 8, 0.2).form().data);
    }
}
