//! Acceptance harness. Prints one PASS/FAIL line per criterion.
//!
//! The reproduction criteria (1-5) are reported, not asserted: their outcome
//! depends on training dynamics, and a FAIL line is the honest result when
//! the measured numbers fall outside the bands. Oracle and determinism
//! criteria (6, 7) are engineering contracts and fail the process.
//!
//! `DYNLOSS_ACCEPT=1,4` restricts the run to the listed criteria.

mod common;

use std::path::Path;
use std::time::Instant;

use dynloss::sweep::{available_jobs, phase_diagram, threshold_scan, CellSummary, PhaseGrid, RunSpec};
use dynloss::trainer::TrainTrace;

const N_SEEDS_NARROW: usize = 20;
const N_SEEDS_WIDE: usize = 5;
const SEED_BASE: u64 = 2024;

// Spectral recording for the cascade and the threshold scan: stride in steps
// at eta = 1 (scaled by 1/eta in the scan), Lanczos steps per record.
const SPECTRA_STRIDE: u64 = 10;
const SCAN_STRIDE_AT_ETA1: f64 = 50.0;
const LANCZOS_ITERS: usize = 30;

struct Report {
    lines: Vec<String>,
    hard_failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, hard: bool, text: String) {
        let l = format!("criterion {id} {}: {text}", if pass { "PASS" } else { "FAIL" });
        println!("{l}");
        if hard && !pass {
            self.hard_failures += 1;
        }
        self.lines.push(l);
    }
}

fn selected(id: u32) -> bool {
    match std::env::var("DYNLOSS_ACCEPT") {
        Ok(list) if !list.trim().is_empty() => list.split(',').any(|s| s.trim() == id.to_string()),
        _ => true,
    }
}

fn narrow() -> RunSpec {
    RunSpec {
        width: 100,
        eta: 1.0,
        total_steps: 35_000,
        seed: SEED_BASE,
        ..RunSpec::default()
    }
}

fn cascade_spec() -> RunSpec {
    RunSpec {
        width: 100,
        eta: 1.0,
        amplitude: 70.0,
        period: 5000,
        total_steps: 70_000,
        spectra_stride: Some(SPECTRA_STRIDE),
        hessian_top_k: 1,
        lanczos_iters: LANCZOS_ITERS,
        record_ntk: false,
        seed: SEED_BASE,
        ..RunSpec::default()
    }
}

fn single_cell(base: &RunSpec, t: u64, a: f64, n_seeds: usize) -> CellSummary {
    let grid = PhaseGrid { t_values: vec![t], a_values: vec![a] };
    phase_diagram(&grid, base, n_seeds, available_jobs()).unwrap().cells[0].clone()
}

fn fmt_cell(c: &CellSummary) -> String {
    format!(
        "train {:.3}±{:.3} val {:.3}±{:.3} (n={}, diverged {})",
        c.train_mean, c.train_sd, c.val_mean, c.val_sd, c.n_seeds, c.n_divergent
    )
}

fn criterion_1(r: &mut Report) {
    let t0 = Instant::now();
    let c = single_cell(&narrow(), 200, 1.0, N_SEEDS_NARROW);
    let band = |v: f64| (0.55..=0.80).contains(&v);
    let per_seed = t0.elapsed().as_secs_f64() / N_SEEDS_NARROW as f64 * available_jobs() as f64;
    let pass = band(c.train_mean) && band(c.val_mean) && per_seed <= 120.0;
    r.line(
        1,
        pass,
        false,
        format!(
            "width 100 static: {} ; need train and val means in [0.55, 0.80]; {per_seed:.1} s/seed (≤ 120)",
            fmt_cell(&c)
        ),
    );
}

fn criterion_2(r: &mut Report) {
    let base = RunSpec { stop_last_period: true, ..narrow() };
    let c = single_cell(&base, 200, 10.0, N_SEEDS_NARROW);
    let pass = c.train_mean >= 0.95 && c.val_mean >= 0.85;
    r.line(
        2,
        pass,
        false,
        format!("width 100, A=10, T=200: {} ; need train ≥ 0.95, val ≥ 0.85", fmt_cell(&c)),
    );
}

fn criterion_3(r: &mut Report) {
    let base = RunSpec { width: 1000, ..narrow() };
    let baseline = single_cell(&base, 200, 1.0, N_SEEDS_WIDE);
    let cells = [(200u64, 10.0), (100, 20.0), (500, 5.0)]
        .map(|(t, a)| single_cell(&base, t, a, N_SEEDS_WIDE));
    let improves = |c: &CellSummary| {
        c.val_mean - baseline.val_mean >= 0.01 && c.val_mean - c.val_sem() > baseline.val_mean + baseline.val_sem()
    };
    let best = cells
        .iter()
        .max_by(|a, b| a.val_mean.total_cmp(&b.val_mean))
        .unwrap();
    let pass = baseline.train_mean >= 0.98 && cells.iter().any(improves);
    let detail: Vec<String> = cells
        .iter()
        .map(|c| format!("A={} T={}: val {:.3}±{:.3}(se)", c.amplitude, c.period, c.val_mean, c.val_sem()))
        .collect();
    r.line(
        3,
        pass,
        false,
        format!(
            "width 1000 static: {} ; need train ≥ 0.98. Cells {} ; best A={} T={} ; need one cell ≥ baseline val {:.3}±{:.3}(se) + 0.01 with disjoint se bars",
            fmt_cell(&baseline),
            detail.join(", "),
            best.amplitude,
            best.period,
            baseline.val_mean,
            baseline.val_sem()
        ),
    );
}

/// Fraction of consecutive in-interval step pairs whose loss changes have opposite signs.
fn alternation_fraction(trace: &TrainTrace) -> f64 {
    let (mut flips, mut pairs) = (0usize, 0usize);
    for iv in &trace.instability_intervals {
        let end = (iv.end as usize).min(trace.delta_loss.len() - 1);
        for t in (iv.start as usize).max(1)..end {
            let (a, b) = (trace.delta_loss[t], trace.delta_loss[t + 1]);
            pairs += 1;
            if a * b < 0.0 {
                flips += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        flips as f64 / pairs as f64
    }
}

fn onset_lambdas(trace: &TrainTrace) -> Vec<f64> {
    trace
        .instability_intervals
        .iter()
        .map(|iv| {
            let rec = trace.spectra.iter().find(|s| s.step == iv.start).unwrap();
            rec.hessian_top[0]
        })
        .collect()
}

fn relative_spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (max - min) / mean
}

fn criterion_4(r: &mut Report) {
    let spec = cascade_spec();
    let out = spec.run().unwrap();
    let trace = &out.trace;
    let t = spec.period;
    let ivs = &trace.instability_intervals;

    let early = ivs.iter().filter(|iv| iv.start < 10 * t).count();
    let alt = alternation_fraction(trace);
    // First period after which nothing is detected; the last period must be quiet.
    let quiet_after = ivs.last().map_or(0, |iv| iv.end / t + 1);
    let total_periods = spec.total_steps / t;
    let onsets = onset_lambdas(trace);
    let spread = if onsets.len() >= 2 { relative_spread(&onsets) } else { f64::NAN };

    let a = early >= 3;
    let b = alt > 0.6;
    let c = !ivs.is_empty() && quiet_after <= 14 && quiet_after < total_periods;
    let d = spread < 0.25;
    let onset_txt: Vec<String> = onsets.iter().map(|v| format!("{v:.3}")).collect();
    r.line(
        4,
        a && b && c && d,
        false,
        format!(
            "A=70 T=5000 70000 steps, stride {SPECTRA_STRIDE}: {} intervals ({early} in first 10 periods, need ≥ 3) [{}]; alternation {alt:.3} (need > 0.6) [{}]; quiet after period {quiet_after} of {total_periods} (need ≤ 14 with a quiet tail) [{}]; onset λ_max [{}] spread {spread:.3} (need < 0.25) [{}]; threshold_estimate {:?}; final train {:.3} val {:.3}",
            ivs.len(),
            pf(a),
            pf(b),
            pf(c),
            onset_txt.join(" "),
            pf(d),
            trace.threshold_estimate,
            trace.final_train_accuracy,
            trace.final_val_accuracy
        ),
    );
}

fn pf(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

fn criterion_5(r: &mut Report) {
    let t0 = Instant::now();
    let etas = [0.25, 0.5, 1.0, 2.0];
    let mut scans = Vec::new();
    for width in [100usize, 1000] {
        let base = RunSpec {
            width,
            hessian_top_k: 1,
            lanczos_iters: LANCZOS_ITERS,
            record_ntk: false,
            seed: SEED_BASE,
            ..RunSpec::default()
        };
        // The stride scales with 1/eta so every run has the same number of records.
        let mut points = Vec::new();
        for &eta in &etas {
            let stride = (SCAN_STRIDE_AT_ETA1 / eta).round() as u64;
            let spec = RunSpec { spectra_stride: Some(stride), ..base.clone() };
            let scan = threshold_scan(&[eta], &spec, 1).unwrap();
            points.push(scan.points[0].clone());
        }
        let etas_ok: Vec<f64> = points.iter().filter(|p| p.threshold.is_some()).map(|p| p.eta).collect();
        let ths: Vec<f64> = points.iter().filter_map(|p| p.threshold).collect();
        let fit = if ths.len() >= 3 {
            dynloss::spectral::fit_threshold_exponent(&etas_ok, &ths).ok()
        } else {
            None
        };
        scans.push((width, points, fit));
    }
    let elapsed = t0.elapsed().as_secs_f64();

    let mut pass = true;
    let mut parts = Vec::new();
    for (width, points, fit) in &scans {
        let th: Vec<String> = points
            .iter()
            .map(|p| match p.threshold {
                Some(v) => format!("η={}: {v:.3} ({} iv)", p.eta, p.n_intervals),
                None => format!("η={}: none", p.eta),
            })
            .collect();
        let exp_ok = fit.is_some_and(|f| (0.75..=1.05).contains(&f.exponent.abs()));
        pass &= exp_ok;
        parts.push(format!(
            "width {width}: [{}] exponent {} (need |e| in [0.75, 1.05]) [{}]",
            th.join(", "),
            fit.map_or("n/a".to_string(), |f| format!("{:.3}", f.exponent)),
            pf(exp_ok)
        ));
    }
    let mut agree = Vec::new();
    for i in 0..etas.len() {
        let a = scans[0].1[i].threshold;
        let b = scans[1].1[i].threshold;
        let ok = match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() / (0.5 * (a + b)) <= 0.30,
            _ => false,
        };
        pass &= ok;
        agree.push(format!("η={}: {}", etas[i], pf(ok)));
    }
    pass &= elapsed <= 1800.0;
    r.line(
        5,
        pass,
        false,
        format!(
            "{} ; width agreement within 30% [{}] ; runtime {elapsed:.0} s (≤ 1800)",
            parts.join(" ; "),
            agree.join(", ")
        ),
    );
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn criterion_6(r: &mut Report) {
    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut push = |name: &str, ok: bool, secs: f64| {
        checks.push((format!("{name} ({secs:.2} s)"), ok && secs <= 10.0));
    };

    let (e, s) = timed(|| (0..5).map(common::gradient_fd_error).fold(0.0, f64::max));
    push(&format!("grad vs FD {e:.1e} < 1e-4"), e < 1e-4, s);
    let (e, s) = timed(|| (0..5).map(common::hvp_fd_error).fold(0.0, f64::max));
    push(&format!("HVP vs FD {e:.1e} < 1e-4"), e < 1e-4, s);
    let ((n, e), s) = timed(|| common::lanczos_vs_dense_error(30, 120, 4));
    push(&format!("Lanczos vs dense n={n} {e:.1e} < 1e-6"), n <= 200 && e < 1e-6, s);
    let ((asym, min), s) = timed(|| common::ntk_symmetry_psd(0));
    push(&format!("NTK asym {asym:.1e}, min eig {min:.1e}"), asym < 1e-10 && min >= -1e-8, s);
    let (e, s) = timed(|| common::gamma_sum_deviation(1_000_000, 17));
    push(&format!("Γ sum over 1e6 t {e:.1e} ≤ 1e-12"), e <= 1e-12, s);
    let (e, s) = timed(|| common::static_trajectory_deviation(300, 21));
    push(&format!("A=1 vs unweighted CE {e:.1e} ≤ 1e-14"), e <= 1e-14, s);
    let (e, s) = timed(|| common::mode_recursion_deviation(5));
    push(&format!("NTK modes vs μ^t {e:.1e} ≤ 1e-10"), e <= 1e-10, s);
    let (ok, s) = timed(common::stability_boundaries_exact);
    push("stability boundaries n/η, 2n/η exact", ok, s);

    let pass = checks.iter().all(|(_, ok)| *ok);
    let txt: Vec<String> = checks.iter().map(|(n, ok)| format!("{n} [{}]", pf(*ok))).collect();
    r.line(6, pass, true, txt.join("; "));
}

fn cli(args: &[&str]) -> i32 {
    dynloss::cli::run(std::iter::once("dynloss").chain(args.iter().copied()).map(String::from))
}

fn replay_identical(dir: &Path, name: &str, args: &[String]) -> bool {
    let a = dir.join(format!("{name}-a"));
    let b = dir.join(format!("{name}-b"));
    let mut first = vec!["--out".to_string(), a.display().to_string(), "train".into()];
    first.extend(args.iter().cloned());
    let first: Vec<&str> = first.iter().map(String::as_str).collect();
    if cli(&first) != 0 {
        return false;
    }
    let m = a.join("manifest.json").display().to_string();
    let bo = b.display().to_string();
    if cli(&["--manifest", &m, "--out", &bo]) != 0 {
        return false;
    }
    let ta = std::fs::read(a.join("trace.csv")).unwrap();
    let tb = std::fs::read(b.join("trace.csv")).unwrap();
    !ta.is_empty() && ta == tb
}

fn criterion_7(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let seed = SEED_BASE.to_string();
    let stride = SPECTRA_STRIDE.to_string();
    let iters = LANCZOS_ITERS.to_string();
    let static_ok = replay_identical(
        dir.path(),
        "static",
        &s(&["--width", "100", "--A", "1", "--eta", "1", "--steps", "35000", "--seed", &seed]),
    );
    let cascade_ok = replay_identical(
        dir.path(),
        "cascade",
        &s(&[
            "--width", "100", "--A", "70", "--T", "5000", "--eta", "1", "--steps", "70000", "--seed", &seed,
            "--spectra-stride", &stride, "--top-k", "1", "--lanczos-iters", &iters, "--ntk", "false",
        ]),
    );
    r.line(
        7,
        static_ok && cascade_ok,
        true,
        format!("manifest replay trace.csv byte-identical: static [{}], cascade [{}]", pf(static_ok), pf(cascade_ok)),
    );
}

fn main() {
    let t0 = Instant::now();
    let mut r = Report { lines: Vec::new(), hard_failures: 0 };
    let criteria: [(u32, fn(&mut Report)); 7] = [
        (6, criterion_6),
        (1, criterion_1),
        (2, criterion_2),
        (4, criterion_4),
        (7, criterion_7),
        (3, criterion_3),
        (5, criterion_5),
    ];
    for (id, f) in criteria {
        if selected(id) {
            f(&mut r);
        } else {
            println!("criterion {id} SKIP: not selected by DYNLOSS_ACCEPT");
        }
    }
    println!("acceptance finished in {:.0} s", t0.elapsed().as_secs_f64());
    if r.hard_failures > 0 {
        std::process::exit(1);
    }
}
