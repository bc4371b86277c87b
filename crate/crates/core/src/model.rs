//! One-hidden-layer ReLU classifier over a flat parameter vector.
//!
//! Flat layout, shared by training, Lanczos, and checkpoints:
//! `W1` (width x in_dim, row-major), `b1` (width), `W2` (C x width, row-major), `b2` (C).

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::ce_row;
use crate::real::{Dual, Real};
use crate::schedule::ClassWeights;

/// Default ceiling on the number of entries of a materialized Jacobian.
pub const DEFAULT_JACOBIAN_CAP: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub width: usize,
    pub in_dim: usize,
    pub num_classes: usize,
}

impl Layout {
    pub fn n_params(&self) -> usize {
        self.width * self.in_dim + self.width + self.num_classes * self.width + self.num_classes
    }

    pub fn w1(&self) -> Range<usize> {
        0..self.width * self.in_dim
    }

    pub fn b1(&self) -> Range<usize> {
        let s = self.w1().end;
        s..s + self.width
    }

    pub fn w2(&self) -> Range<usize> {
        let s = self.b1().end;
        s..s + self.num_classes * self.width
    }

    pub fn b2(&self) -> Range<usize> {
        let s = self.w2().end;
        s..s + self.num_classes
    }
}

/// Network parameters. Shaped accessors are views into the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layout: Layout,
    flat: Vec<f64>,
}

impl MlpParams {
    /// Weights ~ N(0, 1/fan_in), biases zero.
    pub fn init(width: usize, in_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("width", "must be >= 1"));
        }
        if in_dim == 0 || num_classes == 0 {
            return Err(Error::invalid("in_dim", "dimensions must be positive"));
        }
        let layout = Layout {
            width,
            in_dim,
            num_classes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = vec![0.0; layout.n_params()];
        let n1 = Normal::new(0.0, (1.0 / in_dim as f64).sqrt()).unwrap();
        for w in &mut flat[layout.w1()] {
            *w = n1.sample(&mut rng);
        }
        let n2 = Normal::new(0.0, (1.0 / width as f64).sqrt()).unwrap();
        for w in &mut flat[layout.w2()] {
            *w = n2.sample(&mut rng);
        }
        Ok(Self { layout, flat })
    }

    pub fn from_flat(layout: Layout, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != layout.n_params() {
            return Err(Error::Shape(format!(
                "{} values for a layout with {} parameters",
                flat.len(),
                layout.n_params()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("params", "non-finite parameter"));
        }
        Ok(Self { layout, flat })
    }

    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            flat: vec![0.0; layout.n_params()],
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n_params(&self) -> usize {
        self.flat.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn w1(&self) -> &[f64] {
        &self.flat[self.layout.w1()]
    }

    pub fn b1(&self) -> &[f64] {
        &self.flat[self.layout.b1()]
    }

    pub fn w2(&self) -> &[f64] {
        &self.flat[self.layout.w2()]
    }

    pub fn b2(&self) -> &[f64] {
        &self.flat[self.layout.b2()]
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let r = self.layout.w1();
        &mut self.flat[r]
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        let r = self.layout.b1();
        &mut self.flat[r]
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        let r = self.layout.w2();
        &mut self.flat[r]
    }

    pub fn b2_mut(&mut self) -> &mut [f64] {
        let r = self.layout.b2();
        &mut self.flat[r]
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.feature_dim() != self.layout.in_dim {
            return Err(Error::Shape(format!(
                "dataset has {} features, network expects {}",
                data.feature_dim(),
                self.layout.in_dim
            )));
        }
        if data.num_classes() != self.layout.num_classes {
            return Err(Error::Shape(format!(
                "dataset has {} classes, network has {} outputs",
                data.num_classes(),
                self.layout.num_classes
            )));
        }
        Ok(())
    }

    pub fn forward(&self, data: &Dataset) -> Result<Logits> {
        self.check_data(data)?;
        let Layout {
            width, num_classes, ..
        } = self.layout;
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let mut hidden = vec![0.0; width];
        let mut out = Vec::with_capacity(data.len() * num_classes);
        for p in data.points() {
            hidden_layer(w1, b1, &p.x, &mut hidden);
            for k in 0..num_classes {
                out.push(dot(&w2[k * width..(k + 1) * width], &hidden) + b2[k]);
            }
        }
        Ok(Logits::new(out, num_classes))
    }

    /// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        Ok(self.forward(data)?.accuracy(&data.labels()))
    }

    /// Loss value and gradient of the weighted mean cross entropy.
    pub fn loss_and_grad(&self, data: &Dataset, gamma: &ClassWeights) -> Result<(f64, Vec<f64>)> {
        self.check_data(data)?;
        self.check_gamma(gamma)?;
        let mut grad = vec![0.0; self.n_params()];
        let (loss, _) = weighted_ce_grad(self.layout, &self.flat, data, gamma, &mut grad);
        Ok((loss, grad))
    }

    /// Fused training evaluation: writes the gradient into `grad` and returns
    /// the loss together with the training accuracy at the current parameters.
    pub(crate) fn eval_step(&self, data: &Dataset, gamma: &ClassWeights, grad: &mut [f64]) -> (f64, f64) {
        let (loss, correct) = weighted_ce_grad(self.layout, &self.flat, data, gamma, grad);
        (loss, correct as f64 / data.len() as f64)
    }

    pub fn grad_loss(&self, data: &Dataset, gamma: &ClassWeights) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad(data, gamma)?.1)
    }

    pub fn loss(&self, data: &Dataset, gamma: &ClassWeights) -> Result<f64> {
        crate::loss::dynamical_ce(&self.forward(data)?, &data.labels(), gamma)
    }

    /// Exact Hessian-vector product of the weighted mean cross entropy.
    ///
    /// Forward-mode differentiation of the reverse-mode gradient: the gradient
    /// is evaluated on dual parameters `w + v ε` and the ε part is `H v`.
    pub fn hvp(&self, data: &Dataset, gamma: &ClassWeights, v: &[f64]) -> Result<Vec<f64>> {
        self.check_data(data)?;
        self.check_gamma(gamma)?;
        if v.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "direction has {} entries, expected {}",
                v.len(),
                self.n_params()
            )));
        }
        Ok(self.hvp_unchecked(data, gamma, v))
    }

    pub(crate) fn hvp_unchecked(&self, data: &Dataset, gamma: &ClassWeights, v: &[f64]) -> Vec<f64> {
        let dual: Vec<Dual> = self
            .flat
            .iter()
            .zip(v)
            .map(|(&w, &t)| Dual::new(w, t))
            .collect();
        let mut grad = vec![Dual::default(); self.n_params()];
        weighted_ce_grad(self.layout, &dual, data, gamma, &mut grad);
        grad.into_iter().map(|g| g.eps).collect()
    }

    /// Jacobian of every logit with respect to the flat parameters.
    ///
    /// Row `j * C + k` is the gradient of logit `k` on sample `j`.
    pub fn output_jacobian(&self, data: &Dataset, cap: usize) -> Result<Jacobian> {
        self.check_data(data)?;
        let Layout {
            width,
            in_dim,
            num_classes,
        } = self.layout;
        let rows = data.len() * num_classes;
        let cols = self.n_params();
        let requested = rows.saturating_mul(cols);
        if requested > cap {
            return Err(Error::MemoryCap {
                what: "output Jacobian",
                requested,
                cap,
            });
        }
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let l = self.layout;
        let mut data_out = vec![0.0; requested];
        let mut hidden = vec![0.0; width];
        for (j, p) in data.points().iter().enumerate() {
            hidden_layer(w1, b1, &p.x, &mut hidden);
            for k in 0..num_classes {
                let row = &mut data_out[(j * num_classes + k) * cols..(j * num_classes + k + 1) * cols];
                let w2k = &w2[k * width..(k + 1) * width];
                for h in 0..width {
                    if hidden[h] > 0.0 {
                        let d = w2k[h];
                        for (i, xi) in p.x.iter().enumerate() {
                            row[l.w1().start + h * in_dim + i] = d * xi;
                        }
                        row[l.b1().start + h] = d;
                    }
                }
                row[l.w2().start + k * width..l.w2().start + (k + 1) * width].copy_from_slice(&hidden);
                row[l.b2().start + k] = 1.0;
            }
        }
        Ok(Jacobian {
            rows,
            cols,
            data: data_out,
        })
    }

    fn check_gamma(&self, gamma: &ClassWeights) -> Result<()> {
        if gamma.len() != self.layout.num_classes {
            return Err(Error::Shape(format!(
                "gamma has {} entries for {} classes",
                gamma.len(),
                self.layout.num_classes
            )));
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn hidden_layer(w1: &[f64], b1: &[f64], x: &[f64; 2], out: &mut [f64]) {
    for (h, o) in out.iter_mut().enumerate() {
        let z = w1[2 * h] * x[0] + w1[2 * h + 1] * x[1] + b1[h];
        *o = if z > 0.0 { z } else { 0.0 };
    }
}

/// Gradient of `(1/P) sum_j gamma[y_j] CE_j` written over a generic scalar.
///
/// ReLU is differentiated with `relu'(0) = 0` and zero second derivative.
/// The sample loop runs in dataset order so the reduction order is fixed.
fn weighted_ce_grad<S: Real>(
    layout: Layout,
    params: &[S],
    data: &Dataset,
    gamma: &ClassWeights,
    grad: &mut [S],
) -> (f64, usize) {
    let Layout {
        width,
        in_dim,
        num_classes,
    } = layout;
    debug_assert_eq!(in_dim, 2);
    let zero = S::from_f64(0.0);
    let w1 = &params[layout.w1()];
    let b1 = &params[layout.b1()];
    let w2 = &params[layout.w2()];
    let b2 = &params[layout.b2()];
    grad.iter_mut().for_each(|g| *g = zero);
    let (gw1, rest) = grad.split_at_mut(layout.b1().start);
    let (gb1, rest) = rest.split_at_mut(width);
    let (gw2, gb2) = rest.split_at_mut(num_classes * width);

    let inv_p = 1.0 / data.len() as f64;
    let mut hidden = vec![zero; width];
    let mut active = vec![false; width];
    let mut logits = vec![zero; num_classes];
    let mut dlogits = vec![zero; num_classes];
    let mut dhidden = vec![zero; width];
    let mut total = zero;
    let mut correct = 0;

    for p in data.points() {
        let (x0, x1) = (p.x[0], p.x[1]);
        for h in 0..width {
            let z = w1[2 * h] * x0 + w1[2 * h + 1] * x1 + b1[h];
            let on = z.value() > 0.0;
            active[h] = on;
            hidden[h] = if on { z } else { zero };
        }
        for k in 0..num_classes {
            let row = &w2[k * width..(k + 1) * width];
            let mut acc = b2[k];
            for h in 0..width {
                acc += row[h] * hidden[h];
            }
            logits[k] = acc;
        }
        let mut best = 0;
        for k in 1..num_classes {
            if logits[k].value() > logits[best].value() {
                best = k;
            }
        }
        correct += usize::from(best == p.y);
        total += ce_row(&logits, p.y, gamma[p.y] * inv_p, &mut dlogits);

        dhidden.iter_mut().for_each(|d| *d = zero);
        for k in 0..num_classes {
            let dk = dlogits[k];
            gb2[k] += dk;
            let row = &w2[k * width..(k + 1) * width];
            let grow = &mut gw2[k * width..(k + 1) * width];
            for h in 0..width {
                grow[h] += dk * hidden[h];
                dhidden[h] += dk * row[h];
            }
        }
        for h in 0..width {
            if active[h] {
                let dz = dhidden[h];
                gw1[2 * h] += dz * x0;
                gw1[2 * h + 1] += dz * x1;
                gb1[h] += dz;
            }
        }
    }
    (total.value(), correct)
}

/// Logits of every sample, row-major samples x classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    values: Vec<f64>,
    num_classes: usize,
}

impl Logits {
    pub fn new(values: Vec<f64>, num_classes: usize) -> Self {
        assert!(num_classes > 0 && values.len() % num_classes == 0);
        Self {
            values,
            num_classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_samples(&self) -> usize {
        self.values.len() / self.num_classes
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.num_classes..(j + 1) * self.num_classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.num_samples())
            .map(|j| {
                let row = self.row(j);
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        let correct = self
            .predictions()
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        correct as f64 / labels.len() as f64
    }
}

/// Dense row-major Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Checkpoint header line: `dynloss-ckpt v1 width=<w> in_dim=<d> C=<c> seed=<s>`,
/// followed by one parameter per line in flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let l = self.params.layout();
        let mut s = format!(
            "dynloss-ckpt v1 width={} in_dim={} C={} seed={}\n",
            l.width, l.in_dim, l.num_classes, self.seed
        );
        for v in self.params.as_flat() {
            writeln!(s, "{v:e}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            location: "checkpoint header".into(),
            reason: "empty file".into(),
        })?;
        let bad = |reason: String| Error::Parse {
            location: "checkpoint header".into(),
            reason,
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "dynloss-ckpt" || fields[1] != "v1" {
            return Err(bad(format!("unrecognized header `{header}`")));
        }
        let get = |i: usize, key: &str| -> Result<u64> {
            fields[i]
                .strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("expected `{key}<int>`, got `{}`", fields[i])))
        };
        let layout = Layout {
            width: get(2, "width=")? as usize,
            in_dim: get(3, "in_dim=")? as usize,
            num_classes: get(4, "C=")? as usize,
        };
        let seed = get(5, "seed=")?;
        let mut flat = Vec::with_capacity(layout.n_params());
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            flat.push(line.trim().parse::<f64>().map_err(|_| Error::Parse {
                location: format!("checkpoint line {}", i + 2),
                reason: format!("not a number: `{line}`"),
            })?);
        }
        Ok(Self {
            params: MlpParams::from_flat(layout, flat)?,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
