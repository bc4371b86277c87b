//! Eigenvalue machinery: Lanczos on matrix-free symmetric operators, dense
//! Hessian and NTK construction, linearized residual dynamics, and the
//! learning-rate scaling fit.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::ResidualVector;
use crate::model::{Jacobian, MlpParams};
use crate::schedule::ClassWeights;

pub const DEFAULT_LANCZOS_ITERS: usize = 60;
pub const DEFAULT_DENSE_HESSIAN_CAP: usize = 500;
pub const DEFAULT_NTK_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Largest Ritz values, descending.
    pub top_eigs: Vec<f64>,
    pub iterations: usize,
    /// `|beta_m * s_m|` for each returned Ritz pair.
    pub residual_norms: Vec<f64>,
    /// Set when the Krylov space became invariant before `iters` steps.
    pub breakdown: bool,
}

/// `k` largest Ritz values of a symmetric operator from `iters` Lanczos steps
/// with full reorthogonalization, started from a seeded random unit vector.
pub fn lanczos_top_k<F>(mut op: F, dim: usize, k: usize, iters: usize, seed: u64) -> Result<SpectrumEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if dim == 0 {
        return Err(Error::invalid("dim", "operator dimension must be positive"));
    }
    if k == 0 || iters < k {
        return Err(Error::invalid("iters", format!("need iters >= k >= 1, got iters={iters}, k={k}")));
    }
    let iters = iters.min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut q);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(iters);
    let mut alpha = Vec::with_capacity(iters);
    let mut beta: Vec<f64> = Vec::with_capacity(iters);
    let mut breakdown = false;
    let scale_tol = 1e-12;

    for step in 0..iters {
        let mut w = op(&q);
        if w.len() != dim {
            return Err(Error::Shape(format!("operator returned {} entries, expected {dim}", w.len())));
        }
        let a = dot(&w, &q);
        alpha.push(a);
        basis.push(q);
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                axpy(-c, b, &mut w);
            }
        }
        let nb = norm(&w);
        if step + 1 == iters {
            beta.push(nb);
            break;
        }
        let anorm = alpha.iter().map(|a| a.abs()).fold(0.0, f64::max).max(1.0);
        if nb <= scale_tol * anorm {
            beta.push(nb);
            breakdown = true;
            break;
        }
        beta.push(nb);
        w.iter_mut().for_each(|x| *x /= nb);
        q = w;
    }

    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let last_beta = beta[m - 1];
    let take = k.min(m);
    let top_eigs = order[..take].iter().map(|&i| eig.eigenvalues[i]).collect();
    let residual_norms = order[..take]
        .iter()
        .map(|&i| (last_beta * eig.eigenvectors[(m - 1, i)]).abs())
        .collect();
    Ok(SpectrumEstimate {
        top_eigs,
        iterations: m,
        residual_norms,
        breakdown,
    })
}

/// Top-`k` Hessian eigenvalues of the weighted loss at `params`.
pub fn hessian_top_k(
    params: &MlpParams,
    data: &Dataset,
    gamma: &ClassWeights,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<SpectrumEstimate> {
    // Validates shapes once; the operator closure skips re-checking.
    params.hvp(data, gamma, &vec![0.0; params.n_params()])?;
    lanczos_top_k(|v| params.hvp_unchecked(data, gamma, v), params.n_params(), k, iters, seed)
}

/// Largest NTK eigenvalue via Lanczos on `v -> J (J^T v)` without forming the kernel.
pub fn ntk_top_eig(jac: &Jacobian, iters: usize, seed: u64) -> Result<f64> {
    let op = |v: &[f64]| {
        let mut t = vec![0.0; jac.cols];
        for r in 0..jac.rows {
            axpy(v[r], jac.row(r), &mut t);
        }
        (0..jac.rows).map(|r| dot(jac.row(r), &t)).collect::<Vec<f64>>()
    };
    Ok(lanczos_top_k(op, jac.rows, 1, iters.max(1), seed)?.top_eigs[0])
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// All eigenvalues, descending, from a dense symmetric solver.
    pub fn eigenvalues_desc(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.to_nalgebra()).eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| b.total_cmp(a));
        e
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| dot(&self.data[i * self.dim..(i + 1) * self.dim], v))
            .collect()
    }

    /// Binary dump: magic `DLMAT1\0\0`, rows and cols as little-endian u64,
    /// then row-major little-endian f64 values.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(24 + 8 * self.data.len());
        buf.extend_from_slice(MATRIX_MAGIC);
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::Parse {
            location: path.display().to_string(),
            reason: reason.into(),
        };
        if buf.len() < 24 || &buf[..8] != MATRIX_MAGIC {
            return Err(bad("missing matrix header"));
        }
        let rows = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
        if rows != cols || buf.len() != 24 + 8 * rows * cols {
            return Err(bad("shape does not match payload"));
        }
        let data = buf[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dim: rows, data })
    }
}

const MATRIX_MAGIC: &[u8; 8] = b"DLMAT1\0\0";

/// Hessian materialized column by column from Hessian-vector products.
pub fn dense_hessian(params: &MlpParams, data: &Dataset, gamma: &ClassWeights, cap: usize) -> Result<SymMatrix> {
    let n = params.n_params();
    if n > cap {
        return Err(Error::MemoryCap {
            what: "dense Hessian dimension",
            requested: n,
            cap,
        });
    }
    let mut h = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for p in 0..n {
        e[p] = 1.0;
        let col = params.hvp(data, gamma, &e)?;
        e[p] = 0.0;
        for (r, v) in col.into_iter().enumerate() {
            h[r * n + p] = v;
        }
    }
    Ok(SymMatrix { dim: n, data: h })
}

/// Neural tangent kernel `J J^T`.
pub fn ntk(jac: &Jacobian, cap: usize) -> Result<SymMatrix> {
    if jac.rows > cap {
        return Err(Error::MemoryCap {
            what: "NTK dimension",
            requested: jac.rows,
            cap,
        });
    }
    if jac.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("jacobian", "non-finite entry"));
    }
    let j = DMatrix::from_row_slice(jac.rows, jac.cols, &jac.data);
    let theta = &j * j.transpose();
    let n = jac.rows;
    let mut data = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            // Gram products can differ in the last bit across the diagonal.
            data[r * n + c] = if c >= r { theta[(r, c)] } else { theta[(c, r)] };
        }
    }
    Ok(SymMatrix { dim: n, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityRegime {
    /// `mu >= 1`: non-positive curvature, no contraction.
    StableMarginal,
    Stable,
    OscillatoryConvergent,
    Divergent,
}

/// Regime of an eigenmode under `g <- (1 - eta/n * lambda) g`.
pub fn classify_stability(lambda: f64, eta: f64, n: usize) -> StabilityRegime {
    // Compared as eta*lambda against n and 2n so the boundaries carry a
    // single rounding.
    let x = eta * lambda;
    let n = n as f64;
    if x <= 0.0 {
        StabilityRegime::StableMarginal
    } else if x < n {
        StabilityRegime::Stable
    } else if x < 2.0 * n {
        StabilityRegime::OscillatoryConvergent
    } else {
        StabilityRegime::Divergent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDynamics {
    /// `|g|` at steps 0..=len, starting with the initial residual.
    pub norms: Vec<f64>,
    /// Coefficients of `g` on the kernel eigenvectors (descending eigenvalue) per step.
    pub modes: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub overflowed: bool,
}

/// Iterates `g <- g - (eta/n) Theta g` with the kernel frozen.
pub fn simulate_discrete_ntk(
    theta: &SymMatrix,
    g0: &ResidualVector,
    eta: f64,
    n: usize,
    steps: usize,
) -> Result<ResidualDynamics> {
    let dim = theta.dim;
    if g0.0.len() != dim {
        return Err(Error::Shape(format!(
            "residual has {} entries, kernel is {dim}x{dim}",
            g0.0.len()
        )));
    }
    let eig = SymmetricEigen::new(theta.to_nalgebra());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let project = |g: &[f64]| -> Vec<f64> {
        order
            .iter()
            .map(|&i| (0..dim).map(|r| eig.eigenvectors[(r, i)] * g[r]).sum())
            .collect()
    };

    let rate = eta / n as f64;
    let mut g = g0.0.clone();
    let mut norms = vec![norm(&g)];
    let mut modes = vec![project(&g)];
    let mut overflowed = false;
    for _ in 0..steps {
        let tg = theta.matvec(&g);
        for (gi, ti) in g.iter_mut().zip(&tg) {
            *gi -= rate * ti;
        }
        let nrm = norm(&g);
        if !nrm.is_finite() || nrm > 1e150 {
            overflowed = true;
            break;
        }
        norms.push(nrm);
        modes.push(project(&g));
    }
    Ok(ResidualDynamics {
        norms,
        modes,
        eigenvalues,
        overflowed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Slope of `ln(threshold)` against `ln(eta)`.
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares in log-log space.
pub fn fit_threshold_exponent(etas: &[f64], thresholds: &[f64]) -> Result<PowerLawFit> {
    if etas.len() != thresholds.len() {
        return Err(Error::Shape(format!(
            "{} learning rates for {} thresholds",
            etas.len(),
            thresholds.len()
        )));
    }
    if etas.len() < 3 {
        return Err(Error::invalid("thresholds", "need at least 3 points to fit"));
    }
    for &v in etas {
        if !(v > 0.0) {
            return Err(Error::NonPositive { what: "learning rates", value: v });
        }
    }
    for &v in thresholds {
        if !(v > 0.0) {
            return Err(Error::NonPositive { what: "thresholds", value: v });
        }
    }
    let xs: Vec<f64> = etas.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = thresholds.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("etas", "learning rates must not all be equal"));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(PowerLawFit {
        exponent,
        intercept,
        r_squared,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}
