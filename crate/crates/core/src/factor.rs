//! Spectral factor model `Σ = β V β' + R` built from a cyclic Jacobi
//! eigendecomposition.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, Matrix};

const OFF_DIAGONAL_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;
const SIGN_EPS: f64 = 1e-12;

/// Eigenpairs sorted by descending eigenvalue; eigenvectors are columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
    /// The decomposed matrix.
    pub source: Matrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, j: usize) -> Vec<f64> {
        self.eigenvectors.column(j)
    }

    /// `Ω D Ω'`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|l| self.eigenvectors[(i, l)] * self.eigenvalues[l] * self.eigenvectors[(j, l)])
                .sum()
        })
    }
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius mass is below
/// `1e-14 * ||Σ||_F`. Each eigenvector's first component above `1e-12` in
/// magnitude is made positive.
pub fn eigendecompose(sigma: &Matrix) -> Result<EigenDecomposition> {
    sigma.check_symmetric(1e-12)?;
    let n = sigma.rows();
    let mut a = sigma.clone();
    // symmetrise exactly so rotations see a symmetric matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = Matrix::identity(n);
    let norm = sigma.frobenius();
    let threshold = OFF_DIAGONAL_TOL * norm;

    for _ in 0..MAX_SWEEPS {
        if off_diagonal(&a) <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    for c in 0..n {
        let flip = (0..n)
            .map(|r| eigenvectors[(r, c)])
            .find(|x| x.abs() > SIGN_EPS)
            .is_some_and(|x| x < 0.0);
        if flip {
            for r in 0..n {
                eigenvectors[(r, c)] = -eigenvectors[(r, c)];
            }
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
        source: sigma.clone(),
    })
}

fn off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// `Σ = β V β' + R` with unit-eigenvector loadings and diagonal `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    /// `d x k`
    pub loadings: Matrix,
    /// `k x k`; diagonal when built from a spectrum.
    pub factor_cov: Matrix,
    /// `d x d`
    pub residual: Matrix,
    /// Share of total variance carried by the kept factors.
    pub explained_variance: f64,
}

impl FactorModel {
    pub fn n_assets(&self) -> usize {
        self.loadings.rows()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.cols()
    }

    /// `ẽ^i = β' e^i`, i.e. row `i` of the loadings.
    pub fn projected_direction(&self, asset: usize) -> &[f64] {
        self.loadings.row(asset)
    }

    /// `f = β' q`.
    pub fn project(&self, q: &[f64]) -> Vec<f64> {
        let k = self.n_factors();
        let mut f = vec![0.0; k];
        for (i, qi) in q.iter().enumerate() {
            if *qi == 0.0 {
                continue;
            }
            for (fj, b) in f.iter_mut().zip(self.loadings.row(i)) {
                *fj += qi * b;
            }
        }
        f
    }

    pub fn factor_risk(&self, f: &[f64]) -> f64 {
        self.factor_cov.quad_form(f)
    }

    pub fn has_residual(&self) -> bool {
        self.residual.as_slice().iter().any(|x| *x != 0.0)
    }

    /// Model with given loadings and factor covariance; `R = Σ - βVβ'`.
    pub fn from_parts(loadings: Matrix, factor_cov: Matrix, sigma: &Matrix) -> Result<Self> {
        let (d, k) = (loadings.rows(), loadings.cols());
        if factor_cov.rows() != k || factor_cov.cols() != k || sigma.rows() != d || sigma.cols() != d {
            return Err(Error::Dimension("factor model shapes do not line up".into()));
        }
        factor_cov.check_symmetric(1e-12)?;
        let systematic = loadings.matmul(&factor_cov)?.matmul(&loadings.transpose())?;
        let residual = sigma.sub(&systematic)?.symmetrized();
        let explained = systematic.trace() / sigma.trace();
        Ok(Self {
            loadings,
            factor_cov,
            residual,
            explained_variance: explained,
        })
    }

    /// Inventory coordinates: `β = I`, `V = Σ`, `R = 0`.
    pub fn identity(sigma: &Matrix) -> Self {
        let d = sigma.rows();
        Self {
            loadings: Matrix::identity(d),
            factor_cov: sigma.clone(),
            residual: Matrix::zeros(d, d),
            explained_variance: 1.0,
        }
    }
}

/// Keep the leading `k` eigenpairs. With `k = d` the residual is exactly zero.
pub fn build_factor_model(decomp: &EigenDecomposition, k: usize) -> Result<FactorModel> {
    let d = decomp.dim();
    if k == 0 || k > d {
        return Err(invalid("factors", format!("need 1 <= k <= {d}, got {k}")));
    }
    let loadings = Matrix::from_fn(d, k, |i, j| decomp.eigenvectors[(i, j)]);
    let factor_cov = Matrix::diagonal(&decomp.eigenvalues[..k]);
    let total: f64 = decomp.eigenvalues.iter().sum();
    let kept: f64 = decomp.eigenvalues[..k].iter().sum();
    let residual = if k == d {
        Matrix::zeros(d, d)
    } else {
        let systematic = Matrix::from_fn(d, d, |i, j| {
            (0..k)
                .map(|l| loadings[(i, l)] * decomp.eigenvalues[l] * loadings[(j, l)])
                .sum()
        });
        decomp.source.sub(&systematic)?.symmetrized()
    };
    Ok(FactorModel {
        loadings,
        factor_cov,
        residual,
        explained_variance: kept / total,
    })
}

/// Largest `||Σ v - λ v||` over the eigenpairs.
pub fn max_residual_norm(decomp: &EigenDecomposition) -> f64 {
    (0..decomp.dim())
        .map(|j| {
            let v = decomp.eigenvector(j);
            let sv = decomp.source.mul_vec(&v);
            sv.iter()
                .zip(&v)
                .map(|(a, b)| (a - decomp.eigenvalues[j] * b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Largest `|v_i . v_j - δ_ij|`.
pub fn orthonormality_error(decomp: &EigenDecomposition) -> f64 {
    let n = decomp.dim();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| decomp.eigenvector(j)).collect();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(&cols[i], &cols[j]) - target).abs());
        }
    }
    worst
}
