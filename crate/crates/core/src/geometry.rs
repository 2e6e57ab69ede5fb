//! Discrete complex differential geometry: mixed complex Hessians, the
//! metric-compatible connection of Hermitian geometry, its torsion and
//! curvature, traces, top powers, and Laplacians.
//!
//! Index conventions (fixed for the whole crate): the point block of a metric
//! stores `G[i][j] = g_{i jbar}`; the inverse block `B = G^{-1}` stores
//! `B[j][i] = g^{jbar i}` so that `B * G = Id`. Connection coefficients are
//! `Gamma^k_{ij} = g^{lbar k} d_i g_{j lbar} = (d_i G * B)[j][k]`, torsion is
//! `T^k_{ij} = Gamma^k_{ij} - Gamma^k_{ji}`, and curvature is
//! `R_{k lbar i}{}^p = -d_lbar Gamma^p_{ki}`.

use crate::error::{CrfError, Result};
use crate::field::{
    CurvatureField, Form11Field, MetricField, ScalarField, TorsionField, VolumeFormField,
};
use crate::grid::GridChart;
use crate::{linalg, spectral, Complex64};

/// Condition-number ceiling beyond which a metric is treated as numerically
/// singular by connection computations.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Connection coefficients `Gamma^k_{ij}` per grid point (`n^3` entries,
/// layout `k*n*n + i*n + j`; `i` is the derivative direction).
#[derive(Debug, Clone)]
pub struct ChristoffelField {
    chart: GridChart,
    pub data: Vec<Complex64>,
}

impl ChristoffelField {
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
}

/// First complex derivative of a real scalar field, as a complex grid array.
pub fn dz_scalar(f: &ScalarField, i: usize) -> Vec<Complex64> {
    spectral::dz(f.chart(), &spectral::lift(&f.data), i)
}

/// First conjugate derivative of a real scalar field.
pub fn dzbar_scalar(f: &ScalarField, i: usize) -> Vec<Complex64> {
    spectral::dzbar(f.chart(), &spectral::lift(&f.data), i)
}

/// Mixed complex Hessian `(ddbar f)_{i jbar} = d_i d_jbar f` of a real scalar
/// field; Hermitian by construction (the lower triangle is the conjugate of
/// the computed upper triangle).
pub fn ddbar(f: &ScalarField) -> Result<Form11Field> {
    f.assert_finite("ddbar input")?;
    let chart = *f.chart();
    let n = chart.n();
    let bl = n * n;
    let lifted = spectral::lift(&f.data);
    let mut data = vec![Complex64::default(); chart.points() * bl];
    for i in 0..n {
        let di = spectral::dz(&chart, &lifted, i);
        for j in i..n {
            let dij = spectral::dzbar(&chart, &di, j);
            if i == j {
                for (p, &v) in dij.iter().enumerate() {
                    data[p * bl + i * n + i] = Complex64::new(v.re, 0.0);
                }
            } else {
                for (p, &v) in dij.iter().enumerate() {
                    data[p * bl + i * n + j] = v;
                    data[p * bl + j * n + i] = v.conj();
                }
            }
        }
    }
    Form11Field::try_new(chart, data)
}

/// Connection coefficients of a positive definite metric.
///
/// Fails with a degenerate-metric error when any point block's spectral
/// condition number exceeds [`CONDITION_LIMIT`].
pub fn christoffels(g: &MetricField) -> Result<ChristoffelField> {
    let chart = *g.chart();
    let n = chart.n();
    let bl = n * n;
    for p in 0..chart.points() {
        let cond = linalg::condition_hermitian(n, g.block(p));
        if cond > CONDITION_LIMIT {
            return Err(CrfError::DegenerateMetric {
                index: p,
                detail: format!("condition number {cond:.3e} exceeds {CONDITION_LIMIT:.0e}"),
            });
        }
    }

    // dg[i][r*n + c] is the grid array of d_i g_{r cbar}.
    let mut dg: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut per_component = Vec::with_capacity(bl);
        for r in 0..n {
            for c in 0..n {
                let comp = g.form().component(r, c);
                per_component.push(spectral::dz(&chart, &comp, i));
            }
        }
        dg.push(per_component);
    }

    let inv = g.inverse_blocks();
    let mut data = vec![Complex64::default(); chart.points() * n * n * n];
    let mut dmat = [Complex64::default(); 4];
    let mut prod = [Complex64::default(); 4];
    for p in 0..chart.points() {
        let b = &inv[p * bl..(p + 1) * bl];
        for i in 0..n {
            for r in 0..n {
                for c in 0..n {
                    dmat[r * n + c] = dg[i][r * n + c][p];
                }
            }
            linalg::mat_mul(n, &dmat[..bl], b, &mut prod[..bl]);
            // Gamma^k_{ij} = (d_i G * B)[j][k]
            for j in 0..n {
                for k in 0..n {
                    data[p * n * n * n + k * n * n + i * n + j] = prod[j * n + k];
                }
            }
        }
    }
    Ok(ChristoffelField { chart, data })
}

/// Torsion `T^k_{ij} = Gamma^k_{ij} - Gamma^k_{ji}`.
pub fn torsion(g: &MetricField) -> Result<TorsionField> {
    let gamma = christoffels(g)?;
    let chart = *g.chart();
    let n = chart.n();
    let mut data = vec![Complex64::default(); chart.points() * n * n * n];
    for p in 0..chart.points() {
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    data[p * n * n * n + k * n * n + i * n + j] =
                        gamma.get(p, k, i, j) - gamma.get(p, k, j, i);
                }
            }
        }
    }
    TorsionField::new(chart, data)
}

/// Curvature `R_{k lbar i}{}^p = -d_lbar Gamma^p_{ki}`.
pub fn chern_curvature(g: &MetricField) -> Result<CurvatureField> {
    let gamma = christoffels(g)?;
    curvature_from_christoffels(&gamma)
}

fn curvature_from_christoffels(gamma: &ChristoffelField) -> Result<CurvatureField> {
    let chart = *gamma.chart();
    let n = chart.n();
    let n3 = n * n * n;
    let n4 = n3 * n;
    let mut data = vec![Complex64::default(); chart.points() * n4];
    let mut comp = vec![Complex64::default(); chart.points()];
    for pu in 0..n {
        for k in 0..n {
            for i in 0..n {
                for (p, slot) in comp.iter_mut().enumerate() {
                    *slot = gamma.get(p, pu, k, i);
                }
                for l in 0..n {
                    let d = spectral::dzbar(&chart, &comp, l);
                    for (p, &v) in d.iter().enumerate() {
                        data[p * n4 + ((k * n + l) * n + i) * n + pu] = -v;
                    }
                }
            }
        }
    }
    CurvatureField::new(chart, data)
}

/// Ricci form of a metric by the scalar route `-ddbar log det g`.
pub fn chern_ricci(g: &MetricField) -> Result<Form11Field> {
    let det = g.det();
    for (idx, &d) in det.data.iter().enumerate() {
        if d <= 0.0 {
            return Err(CrfError::DegenerateMetric {
                index: idx,
                detail: format!("determinant {d:.6e} not positive"),
            });
        }
    }
    let log_det = det.map(f64::ln);
    let hess = ddbar(&log_det)?;
    Ok(hess.lin_comb(-1.0, &hess, 0.0))
}

/// Ricci form of a metric by the tensor route: lower the curvature endomorphism
/// index with `g` and trace with `g^{-1}` (`R_{k lbar} = g^{jbar i} R_{k lbar i}{}^p g_{p jbar}`).
pub fn chern_ricci_from_curvature(g: &MetricField) -> Result<Form11Field> {
    let curv = chern_curvature(g)?;
    let chart = *g.chart();
    let n = chart.n();
    let bl = n * n;
    let inv = g.inverse_blocks();
    let mut data = vec![Complex64::default(); chart.points() * bl];
    for p in 0..chart.points() {
        let gb = g.block(p);
        let b = &inv[p * bl..(p + 1) * bl];
        for k in 0..n {
            for l in 0..n {
                let mut acc = Complex64::default();
                for i in 0..n {
                    for j in 0..n {
                        for pu in 0..n {
                            acc += b[j * n + i] * curv.get(p, k, l, i, pu) * gb[pu * n + j];
                        }
                    }
                }
                data[p * bl + k * n + l] = acc;
            }
        }
    }
    Form11Field::hermitized(chart, data)
}

/// Pointwise trace `tr_base alpha = g_base^{jbar i} alpha_{i jbar}`; real for
/// Hermitian input.
pub fn trace(base: &MetricField, alpha: &Form11Field) -> Result<ScalarField> {
    base.chart().check_same_geometry(alpha.chart(), "trace")?;
    let n = base.chart().n();
    let bl = n * n;
    let inv = base.inverse_blocks();
    let data = (0..base.chart().points())
        .map(|p| linalg::trace_mul(n, &inv[p * bl..(p + 1) * bl], alpha.block(p)).re)
        .collect();
    ScalarField::from_vec(*base.chart(), data)
}

/// Volume density of the top exterior power: `n! * det(alpha)` against the
/// Euclidean element. This is the single place the `n!` normalization lives;
/// only density ratios enter the flow, so any consistent convention would do.
pub fn top_power(alpha: &Form11Field) -> Result<VolumeFormField> {
    let chart = *alpha.chart();
    let n = chart.n();
    let factorial: f64 = (1..=n).product::<usize>() as f64;
    let mut density = vec![0.0; chart.points()];
    for (p, slot) in density.iter_mut().enumerate() {
        let d = factorial * linalg::det_hermitian(n, alpha.block(p));
        if d <= 0.0 {
            return Err(CrfError::DegenerateMetric {
                index: p,
                detail: format!("top power density {d:.6e} not positive"),
            });
        }
        *slot = d;
    }
    VolumeFormField::try_new(chart, density)
}

/// Metric Laplacian `Delta f = g^{jbar i} d_i d_jbar f = tr_g(ddbar f)`.
pub fn laplacian(g: &MetricField, f: &ScalarField) -> Result<ScalarField> {
    trace(g, &ddbar(f)?)
}

/// Flat Laplacian `tr_{Id}(ddbar f)` (one quarter of the Euclidean Laplacian).
pub fn flat_laplacian(f: &ScalarField) -> Result<ScalarField> {
    let hess = ddbar(f)?;
    let n = f.chart().n();
    let data = (0..f.chart().points())
        .map(|p| {
            let block = hess.block(p);
            (0..n).map(|i| block[i * n + i].re).sum()
        })
        .collect();
    ScalarField::from_vec(*f.chart(), data)
}

/// Pointwise smallest generalized eigenvalue of `alpha` against `base`:
/// `alpha >= c * base` on the grid iff the returned field's minimum is >= c.
pub fn min_eigenvalue(alpha: &Form11Field, base: &MetricField) -> Result<ScalarField> {
    base.chart()
        .check_same_geometry(alpha.chart(), "min_eigenvalue")?;
    let n = base.chart().n();
    let data = (0..base.chart().points())
        .map(|p| linalg::gen_eig_range(n, alpha.block(p), base.block(p)).0)
        .collect();
    ScalarField::from_vec(*base.chart(), data)
}

/// Pointwise largest generalized eigenvalue of `alpha` against `base`.
pub fn max_eigenvalue(alpha: &Form11Field, base: &MetricField) -> Result<ScalarField> {
    base.chart()
        .check_same_geometry(alpha.chart(), "max_eigenvalue")?;
    let n = base.chart().n();
    let data = (0..base.chart().points())
        .map(|p| linalg::gen_eig_range(n, alpha.block(p), base.block(p)).1)
        .collect();
    ScalarField::from_vec(*base.chart(), data)
}
