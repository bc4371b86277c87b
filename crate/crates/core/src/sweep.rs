//! Experiment orchestration: single seeded runs, (T, A) phase diagrams and
//! the learning-rate threshold scan.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_spiral, Dataset};
use crate::error::{Error, Result};
use crate::model::MlpParams;
use crate::schedule::OscillationSchedule;
use crate::seeds::{derive_seed, stream};
use crate::spectral::{fit_threshold_exponent, PowerLawFit, DEFAULT_LANCZOS_ITERS};
use crate::trainer::{train, TrainConfig, TrainOutcome, DEFAULT_JUMP_THRESHOLD};

/// Everything needed to reproduce one training run from a single seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub width: usize,
    pub n_per_class: usize,
    pub num_classes: usize,
    pub noise_sd: f64,
    pub eta: f64,
    pub total_steps: u64,
    pub amplitude: f64,
    pub period: u64,
    /// Explicit step at which oscillations stop; overrides `stop_last_period`.
    pub stop_step: Option<u64>,
    /// Stop oscillating for the final period (`stop_step = total_steps - T`).
    pub stop_last_period: bool,
    pub spectra_stride: Option<u64>,
    pub hessian_top_k: usize,
    pub lanczos_iters: usize,
    pub record_ntk: bool,
    pub val_stride: u64,
    pub jump_threshold: f64,
    pub seed: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            width: 100,
            n_per_class: 100,
            num_classes: 3,
            noise_sd: 0.2,
            eta: 1.0,
            total_steps: 35_000,
            amplitude: 1.0,
            period: 200,
            stop_step: None,
            stop_last_period: false,
            spectra_stride: None,
            hessian_top_k: 3,
            lanczos_iters: DEFAULT_LANCZOS_ITERS,
            record_ntk: true,
            val_stride: 100,
            jump_threshold: DEFAULT_JUMP_THRESHOLD,
            seed: 0,
        }
    }
}

impl RunSpec {
    pub fn effective_stop_step(&self) -> Option<u64> {
        self.stop_step.or_else(|| {
            self.stop_last_period
                .then(|| self.total_steps.saturating_sub(self.period))
        })
    }

    pub fn schedule(&self) -> Result<OscillationSchedule> {
        Ok(OscillationSchedule::new(self.amplitude, self.period, self.num_classes)?
            .with_stop_step(self.effective_stop_step()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.eta, self.total_steps, self.schedule()?);
        cfg.spectra_stride = self.spectra_stride;
        cfg.hessian_top_k = self.hessian_top_k;
        cfg.lanczos_iters = self.lanczos_iters;
        cfg.record_ntk = self.record_ntk;
        cfg.val_stride = self.val_stride;
        cfg.jump_threshold = self.jump_threshold;
        cfg.seed = derive_seed(self.seed, &[stream::LANCZOS]);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::invalid("width", "width must be ≥ 1"));
        }
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class", "must be ≥ 1"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd", "must be ≥ 0"));
        }
        self.train_config()?.validate()
    }

    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let train = generate_spiral(
            self.n_per_class,
            self.num_classes,
            self.noise_sd,
            derive_seed(self.seed, &[stream::TRAIN_DATA]),
        )?;
        let val = generate_spiral(
            self.n_per_class,
            self.num_classes,
            self.noise_sd,
            derive_seed(self.seed, &[stream::VAL_DATA]),
        )?;
        Ok((train, val))
    }

    pub fn initial_params(&self) -> Result<MlpParams> {
        MlpParams::init(
            self.width,
            2,
            self.num_classes,
            derive_seed(self.seed, &[stream::INIT]),
        )
    }

    pub fn run(&self) -> Result<TrainOutcome> {
        self.validate()?;
        let (train_set, val_set) = self.datasets()?;
        train(self.initial_params()?, &train_set, &val_set, &self.train_config()?)
    }
}

/// Runs `f` over `0..n` on at most `jobs` threads; results keep index order.
pub fn parallel_map<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("every index is processed"))
        .collect()
}

pub fn available_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub period: u64,
    pub amplitude: f64,
    pub replicate: usize,
    pub seed: u64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub period: u64,
    pub amplitude: f64,
    pub n_seeds: usize,
    pub n_divergent: usize,
    pub train_mean: f64,
    pub train_sd: f64,
    pub val_mean: f64,
    pub val_sd: f64,
}

impl CellSummary {
    pub fn train_sem(&self) -> f64 {
        self.train_sd / (self.n_seeds as f64).sqrt()
    }

    pub fn val_sem(&self) -> f64 {
        self.val_sd / (self.n_seeds as f64).sqrt()
    }

    /// `mean ± sd` clipped to `[0, 1]`.
    pub fn val_band(&self) -> (f64, f64) {
        (
            (self.val_mean - self.val_sd).clamp(0.0, 1.0),
            (self.val_mean + self.val_sd).clamp(0.0, 1.0),
        )
    }

    pub fn train_band(&self) -> (f64, f64) {
        (
            (self.train_mean - self.train_sd).clamp(0.0, 1.0),
            (self.train_mean + self.train_sd).clamp(0.0, 1.0),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub t_values: Vec<u64>,
    pub a_values: Vec<f64>,
    /// Row-major over (T index, A index).
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

impl PhaseDiagram {
    pub fn cell(&self, t_index: usize, a_index: usize) -> &CellSummary {
        &self.cells[t_index * self.a_values.len() + a_index]
    }

    pub fn find(&self, period: u64, amplitude: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.period == period && c.amplitude == amplitude)
    }

    /// Long format: `T,A,seed,train_acc,val_acc`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("T,A,seed,train_acc,val_acc\n");
        for r in &self.runs {
            writeln!(
                out,
                "{},{},{},{:e},{:e}",
                r.period, r.amplitude, r.seed, r.train_acc, r.val_acc
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub t_values: Vec<u64>,
    pub a_values: Vec<f64>,
}

impl PhaseGrid {
    /// Default desk grid.
    pub fn default_desk() -> Self {
        Self {
            t_values: vec![50, 100, 200, 300, 500, 700, 1000, 2000, 5000],
            a_values: vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 50.0, 70.0, 100.0],
        }
    }
}

/// Seed of replicate `rep` in cell `(t_index, a_index)`.
pub fn cell_seed(seed_base: u64, t_index: usize, a_index: usize, rep: usize) -> u64 {
    derive_seed(seed_base, &[t_index as u64, a_index as u64, rep as u64])
}

/// Seed-averaged final accuracies over a (T, A) grid. Oscillations are
/// stopped for the last period of every run.
pub fn phase_diagram(grid: &PhaseGrid, base: &RunSpec, n_seeds: usize, jobs: usize) -> Result<PhaseDiagram> {
    if n_seeds == 0 {
        return Err(Error::invalid("n_seeds", "must be ≥ 1"));
    }
    if grid.t_values.is_empty() || grid.a_values.is_empty() {
        return Err(Error::invalid("grid", "axes must be nonempty"));
    }
    let na = grid.a_values.len();
    let mut specs = Vec::new();
    for (ti, &t) in grid.t_values.iter().enumerate() {
        for (ai, &a) in grid.a_values.iter().enumerate() {
            for rep in 0..n_seeds {
                let spec = RunSpec {
                    period: t,
                    amplitude: a,
                    stop_step: None,
                    stop_last_period: true,
                    spectra_stride: None,
                    seed: cell_seed(base.seed, ti, ai, rep),
                    ..base.clone()
                };
                // Fail fast before any training starts.
                spec.validate()?;
                specs.push((ti, ai, rep, spec));
            }
        }
    }
    let results = parallel_map(specs.len(), jobs, |i| {
        let (_, _, rep, spec) = &specs[i];
        spec.run().map(|o| RunRecord {
            period: spec.period,
            amplitude: spec.amplitude,
            replicate: *rep,
            seed: spec.seed,
            train_acc: o.trace.final_train_accuracy,
            val_acc: o.trace.final_val_accuracy,
            diverged: o.trace.diverged_at.is_some(),
        })
    });
    let runs: Vec<RunRecord> = results.into_iter().collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(grid.t_values.len() * na);
    for (ti, &t) in grid.t_values.iter().enumerate() {
        for (ai, &a) in grid.a_values.iter().enumerate() {
            let start = (ti * na + ai) * n_seeds;
            let group = &runs[start..start + n_seeds];
            let (train_mean, train_sd) = mean_sd(group.iter().map(|r| r.train_acc));
            let (val_mean, val_sd) = mean_sd(group.iter().map(|r| r.val_acc));
            cells.push(CellSummary {
                period: t,
                amplitude: a,
                n_seeds,
                n_divergent: group.iter().filter(|r| r.diverged).count(),
                train_mean,
                train_sd,
                val_mean,
                val_sd,
            });
        }
    }
    Ok(PhaseDiagram {
        t_values: grid.t_values.clone(),
        a_values: grid.a_values.clone(),
        cells,
        runs,
    })
}

/// Sample mean and (n-1)-normalized standard deviation.
pub fn mean_sd(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub eta: f64,
    pub period: u64,
    pub total_steps: u64,
    pub threshold: Option<f64>,
    pub n_intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub width: usize,
    pub points: Vec<ThresholdPoint>,
    /// Absent when fewer than three learning rates produced a threshold.
    pub fit: Option<PowerLawFit>,
}

impl ThresholdScan {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("width,eta,T,steps,threshold,n_intervals\n");
        for p in &self.points {
            write!(out, "{},{},{},{},", self.width, p.eta, p.period, p.total_steps).unwrap();
            if let Some(t) = p.threshold {
                write!(out, "{t:e}").unwrap();
            }
            writeln!(out, ",{}", p.n_intervals).unwrap();
        }
        out
    }
}

/// Reference oscillation protocol rescaled to learning rate `eta`:
/// `A = 70`, `T = 5000/eta`, `70000/eta` steps.
pub fn rescaled_protocol(base: &RunSpec, eta: f64) -> RunSpec {
    RunSpec {
        eta,
        amplitude: 70.0,
        period: (5000.0 / eta).round() as u64,
        total_steps: (70_000.0 / eta).round() as u64,
        stop_step: None,
        stop_last_period: false,
        spectra_stride: base.spectra_stride.or(Some(50)),
        ..base.clone()
    }
}

/// Runs the rescaled protocol at every learning rate and fits the exponent
/// of threshold against learning rate.
pub fn threshold_scan(etas: &[f64], base: &RunSpec, jobs: usize) -> Result<ThresholdScan> {
    for &eta in etas {
        if !(eta > 0.0) {
            return Err(Error::NonPositive { what: "learning rates", value: eta });
        }
        rescaled_protocol(base, eta).validate()?;
    }
    let results = parallel_map(etas.len(), jobs, |i| {
        let spec = rescaled_protocol(base, etas[i]);
        spec.run().map(|o| (o.trace.threshold_estimate, o.trace.instability_intervals.len()))
    });
    let mut measured = Vec::with_capacity(etas.len());
    for r in results {
        measured.push(r?);
    }
    threshold_scan_from(etas, base, |i, _| measured[i])
}

/// Builds a scan from externally supplied `(threshold, n_intervals)` per learning rate.
pub fn threshold_scan_from<F>(etas: &[f64], base: &RunSpec, mut measure: F) -> Result<ThresholdScan>
where
    F: FnMut(usize, &RunSpec) -> (Option<f64>, usize),
{
    let mut points = Vec::with_capacity(etas.len());
    for (i, &eta) in etas.iter().enumerate() {
        let spec = rescaled_protocol(base, eta);
        let (threshold, n_intervals) = measure(i, &spec);
        points.push(ThresholdPoint {
            eta,
            period: spec.period,
            total_steps: spec.total_steps,
            threshold,
            n_intervals,
        });
    }
    let (e, t): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.threshold.filter(|t| *t > 0.0).map(|t| (p.eta, t)))
        .unzip();
    let fit = if e.len() >= 3 {
        Some(fit_threshold_exponent(&e, &t)?)
    } else {
        None
    };
    Ok(ThresholdScan {
        width: base.width,
        points,
        fit,
    })
}
