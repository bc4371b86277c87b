//! Oracle checks shared by the oracle suite and the acceptance harness.
//! Each returns the measured discrepancy so callers choose how to report it.
#![allow(dead_code)]

use dynloss::loss::ResidualVector;
use dynloss::model::Jacobian;
use dynloss::spectral::{
    classify_stability, dense_hessian, hessian_top_k, ntk, simulate_discrete_ntk, StabilityRegime, SymMatrix,
};
use dynloss::{generate_spiral, ClassWeights, Dataset, MlpParams, OscillationSchedule, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_problem(width: usize, seed: u64) -> (MlpParams, Dataset, ClassWeights) {
    let data = generate_spiral(20, 3, 0.2, seed).unwrap();
    let mut params = MlpParams::init(width, 2, 3, seed + 1).unwrap();
    // Nonzero biases so every parameter block is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    for b in params.b1_mut().iter_mut() {
        *b = rng.random_range(-0.3..0.3);
    }
    for b in params.b2_mut().iter_mut() {
        *b = rng.random_range(-0.3..0.3);
    }
    let gamma = OscillationSchedule::new(10.0, 200, 3).unwrap().weights(130);
    (params, data, gamma)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    num / den
}

/// Relative error of the analytic gradient against central differences.
pub fn gradient_fd_error(seed: u64) -> f64 {
    let (params, data, gamma) = small_problem(5, seed);
    let grad = params.grad_loss(&data, &gamma).unwrap();
    let h = 1e-6;
    let fd: Vec<f64> = (0..params.n_params())
        .map(|p| {
            let mut plus = params.clone();
            plus.as_flat_mut()[p] += h;
            let mut minus = params.clone();
            minus.as_flat_mut()[p] -= h;
            (plus.loss(&data, &gamma).unwrap() - minus.loss(&data, &gamma).unwrap()) / (2.0 * h)
        })
        .collect();
    rel_err(&grad, &fd)
}

/// Relative error of the Hessian-vector product against central
/// differences of the gradient along a random direction.
pub fn hvp_fd_error(seed: u64) -> f64 {
    let (params, data, gamma) = small_problem(5, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let v: Vec<f64> = (0..params.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hv = params.hvp(&data, &gamma, &v).unwrap();
    let h = 1e-5;
    let shifted = |s: f64| {
        let mut p = params.clone();
        for (w, d) in p.as_flat_mut().iter_mut().zip(&v) {
            *w += s * d;
        }
        p.grad_loss(&data, &gamma).unwrap()
    };
    let gp = shifted(h);
    let gm = shifted(-h);
    let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    rel_err(&hv, &fd)
}

/// Largest relative error between Lanczos top-3 and the dense eigensolver.
pub fn lanczos_vs_dense_error(width: usize, iters: usize, seed: u64) -> (usize, f64) {
    let (params, data, gamma) = small_problem(width, seed);
    let h = dense_hessian(&params, &data, &gamma, 500).unwrap();
    let dense = h.eigenvalues_desc();
    let est = hessian_top_k(&params, &data, &gamma, 3, iters, seed).unwrap();
    let err = est
        .top_eigs
        .iter()
        .zip(&dense)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
        .fold(0.0, f64::max);
    (params.n_params(), err)
}

/// (max asymmetry, min eigenvalue) of the NTK of a small net.
pub fn ntk_symmetry_psd(seed: u64) -> (f64, f64) {
    let (params, data, _) = small_problem(10, seed);
    let jac = params.output_jacobian(&data, 1 << 24).unwrap();
    let theta = ntk(&jac, 4096).unwrap();
    let asym = theta.max_asymmetry();
    let min = *theta.eigenvalues_desc().last().unwrap();
    (asym, min)
}

/// Max deviation of Σ Γ from C over `samples` random (A, T, t).
pub fn gamma_sum_deviation(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedules: Vec<OscillationSchedule> = [(1.0, 2), (1.5, 3), (10.0, 200), (70.0, 5000), (100.0, 51)]
        .iter()
        .flat_map(|&(a, t)| (2..=5).map(move |c| OscillationSchedule::new(a, t, c).unwrap()))
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let s = &schedules[rng.random_range(0..schedules.len())];
        let t = rng.random_range(0..10_000_000u64);
        let w = s.weights(t);
        worst = worst.max((w.sum() - s.num_classes() as f64).abs());
    }
    worst
}

/// Unweighted mean cross entropy and its gradient, written without any class
/// weights in the same per-sample order as the library kernel.
pub fn reference_ce_grad(params: &MlpParams, data: &Dataset) -> (f64, Vec<f64>) {
    let l = params.layout();
    let (w, c) = (l.width, l.num_classes);
    let (w1, b1, w2, b2) = (params.w1(), params.b1(), params.w2(), params.b2());
    let mut g = vec![0.0; params.n_params()];
    let inv_p = 1.0 / data.len() as f64;
    let mut total = 0.0;
    for p in data.points() {
        let hidden: Vec<f64> = (0..w)
            .map(|h| {
                let z = w1[2 * h] * p.x[0] + w1[2 * h + 1] * p.x[1] + b1[h];
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            })
            .collect();
        let logits: Vec<f64> = (0..c)
            .map(|k| {
                let mut acc = b2[k];
                for h in 0..w {
                    acc += w2[k * w + h] * hidden[h];
                }
                acc
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        let exps: Vec<f64> = logits
            .iter()
            .map(|z| {
                let e = (z - max).exp();
                denom += e;
                e
            })
            .collect();
        total += (denom.ln() - (logits[p.y] - max)) * inv_p;
        let dlog: Vec<f64> = (0..c)
            .map(|k| (exps[k] / denom - if k == p.y { 1.0 } else { 0.0 }) * inv_p)
            .collect();
        let mut dh = vec![0.0; w];
        for k in 0..c {
            g[l.b2().start + k] += dlog[k];
            for h in 0..w {
                g[l.w2().start + k * w + h] += dlog[k] * hidden[h];
                dh[h] += dlog[k] * w2[k * w + h];
            }
        }
        for h in 0..w {
            if hidden[h] > 0.0 {
                g[2 * h] += dh[h] * p.x[0];
                g[2 * h + 1] += dh[h] * p.x[1];
                g[l.b1().start + h] += dh[h];
            }
        }
    }
    (total, g)
}

/// Largest relative difference between the A = 1 trained loss trajectory
/// and plain gradient descent on the unweighted reference.
pub fn static_trajectory_deviation(steps: u64, seed: u64) -> f64 {
    let train = generate_spiral(30, 3, 0.2, seed).unwrap();
    let val = generate_spiral(30, 3, 0.2, seed + 1).unwrap();
    let init = MlpParams::init(16, 2, 3, seed + 2).unwrap();
    let schedule = OscillationSchedule::new(1.0, 50, 3).unwrap();
    let mut cfg = TrainConfig::new(0.5, steps, schedule);
    cfg.val_stride = steps.max(1);
    let out = dynloss::train(init.clone(), &train, &val, &cfg).unwrap();

    let mut p = init;
    let mut worst: f64 = 0.0;
    for t in 0..steps as usize {
        let (loss, g) = reference_ce_grad(&p, &train);
        worst = worst.max((loss - out.trace.loss[t]).abs() / loss.abs());
        for (w, d) in p.as_flat_mut().iter_mut().zip(&g) {
            *w -= 0.5 * d;
        }
    }
    let pdev = rel_err(p.as_flat(), out.params.as_flat());
    worst.max(pdev)
}

/// Orthogonal matrix from Gram-Schmidt on random columns.
fn random_orthogonal(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for b in &q {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
    }
    q
}

/// Largest deviation of simulated mode coefficients from `c0 · mu^t` over
/// 100 steps for a kernel with prescribed eigenvalues.
pub fn mode_recursion_deviation(seed: u64) -> f64 {
    let (eta, n) = (1.0, 300usize);
    let mus = [0.5, 0.1, -0.5, -0.9, 0.99];
    let lambdas: Vec<f64> = mus.iter().map(|m| (1.0 - m) * n as f64 / eta).collect();
    let dim = lambdas.len();
    let q = random_orthogonal(dim, seed);
    let mut data = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            data[i * dim + j] = (0..dim).map(|k| q[k][i] * lambdas[k] * q[k][j]).sum();
        }
    }
    let theta = SymMatrix { dim, data };
    let g0: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64).collect();
    let sim = simulate_discrete_ntk(&theta, &ResidualVector(g0), eta, n, 100).unwrap();
    let mut worst: f64 = 0.0;
    for (r, &lam) in sim.eigenvalues.iter().enumerate() {
        let mu = 1.0 - eta / n as f64 * lam;
        let c0 = sim.modes[0][r];
        for (t, m) in sim.modes.iter().enumerate() {
            worst = worst.max((m[r] - c0 * mu.powi(t as i32)).abs());
        }
    }
    worst
}

/// Whether `classify_stability` flips exactly at `lambda = n/eta` and `2n/eta`.
pub fn stability_boundaries_exact() -> bool {
    let cases = [(1.0, 300usize), (0.5, 300), (2.0, 100), (0.25, 900)];
    cases.iter().all(|&(eta, n)| {
        let lo = n as f64 / eta;
        let hi = 2.0 * n as f64 / eta;
        classify_stability(lo, eta, n) == StabilityRegime::OscillatoryConvergent
            && classify_stability(next_down(lo), eta, n) == StabilityRegime::Stable
            && classify_stability(hi, eta, n) == StabilityRegime::Divergent
            && classify_stability(next_down(hi), eta, n) == StabilityRegime::OscillatoryConvergent
    })
}

pub fn next_down(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// NTK of a bias-free linear model `f_k(x) = W_k · x` from its exact Jacobian.
pub fn linear_model_ntk(xs: &[[f64; 2]], classes: usize) -> SymMatrix {
    let d = 2;
    let rows = xs.len() * classes;
    let cols = classes * d;
    let mut data = vec![0.0; rows * cols];
    for (j, x) in xs.iter().enumerate() {
        for k in 0..classes {
            let r = j * classes + k;
            data[r * cols + k * d] = x[0];
            data[r * cols + k * d + 1] = x[1];
        }
    }
    ntk(&Jacobian { rows, cols, data }, 4096).unwrap()
}
