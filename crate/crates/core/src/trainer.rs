//! Full-batch gradient descent on the dynamical loss with trace recording.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{MlpParams, DEFAULT_JACOBIAN_CAP};
use crate::schedule::OscillationSchedule;
use crate::seeds::derive_seed;
use crate::spectral;

pub const DEFAULT_JUMP_THRESHOLD: f64 = 0.1;
pub const DEFAULT_DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub total_steps: u64,
    pub schedule: OscillationSchedule,
    /// Record Hessian and NTK spectra every this many steps.
    pub spectra_stride: Option<u64>,
    pub hessian_top_k: usize,
    pub lanczos_iters: usize,
    /// Also record the NTK top eigenvalue at spectral records.
    pub record_ntk: bool,
    pub val_stride: u64,
    /// Seeds the per-record Lanczos start vectors.
    pub seed: u64,
    pub jump_threshold: f64,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, total_steps: u64, schedule: OscillationSchedule) -> Self {
        Self {
            learning_rate,
            total_steps,
            schedule,
            spectra_stride: None,
            hessian_top_k: 3,
            lanczos_iters: spectral::DEFAULT_LANCZOS_ITERS,
            record_ntk: true,
            val_stride: 100,
            seed: 0,
            jump_threshold: DEFAULT_JUMP_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("eta", "learning rate must be > 0"));
        }
        if self.spectra_stride == Some(0) {
            return Err(Error::invalid("spectra_stride", "must be positive"));
        }
        if self.hessian_top_k == 0 {
            return Err(Error::invalid("hessian_top_k", "must be >= 1"));
        }
        if self.lanczos_iters < self.hessian_top_k {
            return Err(Error::invalid("lanczos_iters", "must be >= hessian_top_k"));
        }
        if self.val_stride == 0 {
            return Err(Error::invalid("val_stride", "must be positive"));
        }
        if !(self.jump_threshold > 0.0) {
            return Err(Error::invalid("jump_threshold", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRecord {
    pub step: u64,
    pub hessian_top: Vec<f64>,
    pub ntk_top: Option<f64>,
}

/// Step interval `[start, end]` (inclusive) of a detected instability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    /// Loss at step `t`, evaluated before the update with the weights of step `t`.
    pub loss: Vec<f64>,
    /// `loss[t] - loss[t-1]`; NaN at `t = 0`.
    pub delta_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub val_accuracy: Vec<(u64, f64)>,
    pub spectra: Vec<SpectralRecord>,
    pub instability_intervals: Vec<Interval>,
    pub threshold_estimate: Option<f64>,
    pub diverged_at: Option<u64>,
    pub final_train_accuracy: f64,
    pub final_val_accuracy: f64,
}

impl TrainTrace {
    pub fn steps(&self) -> usize {
        self.loss.len()
    }

    /// Largest-Hessian-eigenvalue series at the strided records.
    pub fn lambda_max(&self) -> Vec<f64> {
        self.spectra.iter().map(|r| r.hessian_top[0]).collect()
    }

    pub fn summary(&self, config: &TrainConfig) -> TrainSummary {
        TrainSummary {
            steps_completed: self.steps() as u64,
            final_loss: self.loss.last().copied(),
            final_train_accuracy: self.final_train_accuracy,
            final_val_accuracy: self.final_val_accuracy,
            instability_intervals: self.instability_intervals.clone(),
            threshold_estimate: self.threshold_estimate,
            diverged_at: self.diverged_at,
            spectra_stride: config.spectra_stride,
            jump_threshold: config.jump_threshold,
        }
    }

    /// One row per step. Columns: `step,loss,delta_loss,train_acc,val_acc,
    /// gamma_0..gamma_{C-1},hess_0..hess_{k-1},ntk_top`; strided columns are
    /// empty on rows without a record.
    pub fn to_csv_string(&self, num_classes: usize, top_k: usize) -> String {
        let mut out = String::from("step,loss,delta_loss,train_acc,val_acc");
        for i in 0..num_classes {
            write!(out, ",gamma_{i}").unwrap();
        }
        for i in 0..top_k {
            write!(out, ",hess_{i}").unwrap();
        }
        out.push_str(",ntk_top\n");
        let mut val = self.val_accuracy.iter().peekable();
        let mut spec = self.spectra.iter().peekable();
        for t in 0..self.steps() {
            let step = t as u64;
            write!(out, "{t},{:e},", self.loss[t]).unwrap();
            if self.delta_loss[t].is_finite() {
                write!(out, "{:e}", self.delta_loss[t]).unwrap();
            }
            write!(out, ",{:e},", self.train_accuracy[t]).unwrap();
            if let Some(&&(s, v)) = val.peek() {
                if s == step {
                    write!(out, "{v:e}").unwrap();
                    val.next();
                }
            }
            for g in &self.gamma[t] {
                write!(out, ",{g:e}").unwrap();
            }
            match spec.peek() {
                Some(r) if r.step == step => {
                    for i in 0..top_k {
                        out.push(',');
                        if let Some(v) = r.hessian_top.get(i) {
                            write!(out, "{v:e}").unwrap();
                        }
                    }
                    out.push(',');
                    if let Some(v) = r.ntk_top {
                        write!(out, "{v:e}").unwrap();
                    }
                    spec.next();
                }
                _ => {
                    for _ in 0..=top_k {
                        out.push(',');
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, num_classes: usize, top_k: usize) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string(num_classes, top_k)).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps_completed: u64,
    pub final_loss: Option<f64>,
    pub final_train_accuracy: f64,
    pub final_val_accuracy: f64,
    pub instability_intervals: Vec<Interval>,
    pub threshold_estimate: Option<f64>,
    pub diverged_at: Option<u64>,
    pub spectra_stride: Option<u64>,
    pub jump_threshold: f64,
}

/// Result of [`detect_instabilities`], in record indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub intervals: Vec<(usize, usize)>,
    pub threshold_estimate: Option<f64>,
}

/// Finds runs of consecutive records whose increase over the previous record
/// is at least `jump`. The threshold estimate averages the series at every
/// run's first and last record.
pub fn detect_instabilities(series: &[f64], jump: f64) -> Detection {
    let mut intervals = Vec::new();
    let mut open: Option<usize> = None;
    for i in 1..series.len() {
        let hit = series[i] - series[i - 1] >= jump;
        match (hit, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                intervals.push((s, i - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        intervals.push((s, series.len() - 1));
    }
    let threshold_estimate = if intervals.is_empty() {
        None
    } else {
        let sum: f64 = intervals.iter().map(|&(s, e)| series[s] + series[e]).sum();
        Some(sum / (2 * intervals.len()) as f64)
    };
    Detection {
        intervals,
        threshold_estimate,
    }
}

pub struct TrainOutcome {
    pub params: MlpParams,
    pub trace: TrainTrace,
}

/// Runs `total_steps` of `w <- w - eta * grad F(w; gamma(t))`.
///
/// Divergence (non-finite loss or loss above 1e6) ends the run early; the
/// trace keeps every finite step and reports `diverged_at`.
pub fn train(params: MlpParams, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.num_classes() != val_set.num_classes() || train_set.feature_dim() != val_set.feature_dim() {
        return Err(Error::Shape("training and validation sets disagree on classes or features".into()));
    }
    if config.schedule.num_classes() != train_set.num_classes() {
        return Err(Error::Shape("schedule class count differs from the dataset".into()));
    }
    // Shape check against the network happens once up front.
    params.forward(val_set)?;
    params.forward(train_set)?;

    let mut params = params;
    let steps = config.total_steps as usize;
    let mut trace = TrainTrace {
        loss: Vec::with_capacity(steps),
        delta_loss: Vec::with_capacity(steps),
        train_accuracy: Vec::with_capacity(steps),
        gamma: Vec::with_capacity(steps),
        ..TrainTrace::default()
    };
    let mut grad = vec![0.0; params.n_params()];
    let eta = config.learning_rate;

    for t in 0..config.total_steps {
        let gamma = config.schedule.weights(t);
        if let Some(stride) = config.spectra_stride {
            if t % stride == 0 {
                trace.spectra.push(spectral_record(&params, train_set, &gamma, config, t)?);
            }
        }
        if t % config.val_stride == 0 {
            trace.val_accuracy.push((t, params.accuracy(val_set)?));
        }
        let (loss, acc) = params.eval_step(train_set, &gamma, &mut grad);
        if !loss.is_finite() || loss > DEFAULT_DIVERGENCE_LIMIT {
            trace.diverged_at = Some(t);
            break;
        }
        let delta = trace.loss.last().map_or(f64::NAN, |prev| loss - prev);
        trace.loss.push(loss);
        trace.delta_loss.push(delta);
        trace.train_accuracy.push(acc);
        trace.gamma.push(gamma.as_slice().to_vec());
        for (w, g) in params.as_flat_mut().iter_mut().zip(&grad) {
            *w -= eta * g;
        }
    }

    if trace.diverged_at.is_none() {
        trace.final_train_accuracy = params.accuracy(train_set)?;
        trace.final_val_accuracy = params.accuracy(val_set)?;
    }
    let detection = detect_instabilities(&trace.lambda_max(), config.jump_threshold);
    trace.instability_intervals = detection
        .intervals
        .iter()
        .map(|&(s, e)| Interval {
            start: trace.spectra[s].step,
            end: trace.spectra[e].step,
        })
        .collect();
    trace.threshold_estimate = detection.threshold_estimate;
    Ok(TrainOutcome { params, trace })
}

fn spectral_record(
    params: &MlpParams,
    data: &Dataset,
    gamma: &crate::schedule::ClassWeights,
    config: &TrainConfig,
    step: u64,
) -> Result<SpectralRecord> {
    let seed = derive_seed(config.seed, &[0x4c41_4e43, step]);
    let est = spectral::hessian_top_k(params, data, gamma, config.hessian_top_k, config.lanczos_iters, seed)?;
    let ntk_top = if config.record_ntk {
        let jac = params.output_jacobian(data, DEFAULT_JACOBIAN_CAP)?;
        Some(spectral::ntk_top_eig(&jac, config.lanczos_iters.min(40), seed)?)
    } else {
        None
    };
    Ok(SpectralRecord {
        step,
        hessian_top: est.top_eigs,
        ntk_top,
    })
}
