//! Metrics harness: runs a scheme over an evaluation set and aggregates
//! scored SE/EE, QoS violations, CDF tables, binarization errors and
//! per-sample decision time.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::ArrayView2;

use crate::baselines::{naive_allocations, random_allocation};
use crate::channel::{generate_dataset, ChannelSample};
use crate::config::{Objective, SystemConfig};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::models::bundle::Bundle;
use crate::models::{Architecture, BitMode, Model, ModelKind};
use crate::objective::{ee_from_se, rates, Allocation, Decision, SoftOutputs};
use crate::oracle::{enumerate_count, Oracle, DEFAULT_BUDGET};
use crate::rng::{domain, stream};
use crate::stats::{compute_stats, preprocess, DatasetStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Oracle,
    Centralized,
    Distributed,
    Naive,
    Random,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Oracle, Scheme::Centralized, Scheme::Distributed, Scheme::Naive, Scheme::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Oracle => "oracle",
            Scheme::Centralized => "centralized",
            Scheme::Distributed => "distributed",
            Scheme::Naive => "naive",
            Scheme::Random => "random",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

/// D2D sum SE, or 0 when any channel misses the CUE threshold.
pub fn scored_sum_se(sample: &ChannelSample, alloc: &Allocation, config: &SystemConfig) -> Result<f64> {
    let r = rates(sample, &alloc.effective(config)?, config)?;
    Ok(if r.cue.iter().all(|se| *se >= config.se_threshold) { r.sum_d2d() } else { 0.0 })
}

/// D2D sum EE under the same zero-on-violation rule.
pub fn scored_sum_ee(sample: &ChannelSample, alloc: &Allocation, config: &SystemConfig) -> Result<f64> {
    let eff = alloc.effective(config)?;
    let r = rates(sample, &eff, config)?;
    if r.cue.iter().any(|se| *se < config.se_threshold) {
        return Ok(0.0);
    }
    Ok(ee_from_se(&r.d2d_per_tp(), &eff.power, config)?.iter().sum())
}

/// Violation probability over channel-sample pairs and mean shortfall over
/// the violated pairs (`None` when nothing is violated).
pub fn violation_stats(cue_se: &[f64], threshold: f64) -> (f64, Option<f64>) {
    if cue_se.is_empty() {
        return (0.0, None);
    }
    let short: Vec<f64> = cue_se.iter().filter(|se| **se < threshold).map(|se| threshold - se).collect();
    let prob = short.len() as f64 / cue_se.len() as f64;
    let level = (!short.is_empty()).then(|| short.iter().sum::<f64>() / short.len() as f64);
    (prob, level)
}

/// `|round(x) - x|` with halves rounded up.
pub fn binarization_error(x: f64) -> f64 {
    ((x + 0.5).floor() - x).abs()
}

pub fn binarization_error_samples(soft: &SoftOutputs) -> Vec<f64> {
    soft.relaxed_values().map(binarization_error).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub median_s: f64,
    pub mean_s: f64,
    pub per_sample_s: Vec<f64>,
}

impl TimingStats {
    pub fn from_samples(per_sample_s: Vec<f64>) -> Self {
        let mut sorted = per_sample_s.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_s = match n {
            0 => 0.0,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        };
        let mean_s = if n == 0 { 0.0 } else { sorted.iter().sum::<f64>() / n as f64 };
        TimingStats { median_s, mean_s, per_sample_s }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scheme: Scheme,
    pub objective: Objective,
    pub se_threshold: f64,
    pub n_samples: usize,
    pub avg_sum_se: f64,
    pub avg_sum_ee: f64,
    pub qos_violation_prob: f64,
    pub qos_violation_level: Option<f64>,
    /// Scored sum SE per sample, ascending.
    pub se_cdf: Vec<f64>,
    /// Scored sum EE per sample, ascending.
    pub ee_cdf: Vec<f64>,
    /// CUE SE per channel-sample pair, ascending.
    pub cue_cdf: Vec<f64>,
    /// Binarization error per relaxed output, ascending; empty for schemes
    /// without relaxed outputs.
    pub binerr_cdf: Vec<f64>,
    pub timing: TimingStats,
}

/// Everything a scheme may need besides the samples.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub config: &'a SystemConfig,
    pub objective: Objective,
    pub centralized: Option<&'a Bundle>,
    pub distributed: Option<&'a Bundle>,
    pub oracle_budget: u128,
}

impl<'a> EvalContext<'a> {
    pub fn new(config: &'a SystemConfig, objective: Objective) -> Self {
        EvalContext { config, objective, centralized: None, distributed: None, oracle_budget: DEFAULT_BUDGET }
    }

    fn bundle(&self, kind: ModelKind) -> Result<&'a Bundle> {
        let b = match kind {
            ModelKind::Centralized => self.centralized,
            ModelKind::Distributed => self.distributed,
        };
        let b = b.ok_or_else(|| Error::MissingDependency(format!("no trained {} model supplied", kind.as_str())))?;
        if b.model.kind() != kind {
            return Err(Error::MissingDependency(format!("supplied model is not {}", kind.as_str())));
        }
        b.model.check_config(self.config)?;
        Ok(b)
    }
}

fn one_row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("one row")
}

fn neural_decision(model: &Model, stats: &DatasetStats, sample: &ChannelSample, n: usize) -> Result<(Allocation, SoftOutputs)> {
    let x = preprocess(sample, stats)?;
    let out = model.infer(one_row(&x), BitMode::Hard)?;
    let alloc = out.decide(n).pop().expect("one row");
    Ok((alloc, out.sample(0, n)))
}

/// Runs `scheme` on every sample, one at a time on the calling thread so the
/// recorded decision times are comparable.
pub fn evaluate(scheme: Scheme, samples: &[ChannelSample], ctx: &EvalContext<'_>) -> Result<MetricsReport> {
    let config = ctx.config;
    config.validate()?;
    let n = config.n_tps;
    let mut allocs = Vec::with_capacity(samples.len());
    let mut times = Vec::with_capacity(samples.len());
    let mut binerr = Vec::new();
    let oracle = Oracle { objective: ctx.objective, budget: ctx.oracle_budget };
    let neural = match scheme {
        Scheme::Centralized | Scheme::Naive => Some(ctx.bundle(ModelKind::Centralized)?),
        Scheme::Distributed => Some(ctx.bundle(ModelKind::Distributed)?),
        _ => None,
    };
    for (i, s) in samples.iter().enumerate() {
        s.check_dims(config)?;
        let t0 = Instant::now();
        let (alloc, soft) = match scheme {
            Scheme::Oracle => (oracle.solve(i, s, config)?.optimal, None),
            Scheme::Random => (random_allocation(config, &mut stream(config.master_seed, domain::RANDOM_BASELINE, i as u64)), None),
            Scheme::Centralized | Scheme::Distributed => {
                let b = neural.expect("checked above");
                let (a, soft) = neural_decision(&b.model, &b.stats, s, n)?;
                (a, Some(soft))
            }
            Scheme::Naive => {
                let b = neural.expect("checked above");
                let x = preprocess(s, &b.stats)?;
                (naive_allocations(&b.model, one_row(&x))?.pop().expect("one row"), None)
            }
        };
        times.push(t0.elapsed().as_secs_f64());
        if let Some(soft) = soft {
            binerr.extend(binarization_error_samples(&soft));
        }
        allocs.push(alloc);
    }
    report(scheme, samples, &allocs, binerr, TimingStats::from_samples(times), ctx)
}

fn report(
    scheme: Scheme,
    samples: &[ChannelSample],
    allocs: &[Allocation],
    mut binerr: Vec<f64>,
    timing: TimingStats,
    ctx: &EvalContext<'_>,
) -> Result<MetricsReport> {
    let config = ctx.config;
    let mut se = Vec::with_capacity(samples.len());
    let mut ee = Vec::with_capacity(samples.len());
    let mut cue = Vec::with_capacity(samples.len() * config.n_channels);
    for (s, a) in samples.iter().zip(allocs) {
        let eff = a.effective(config)?;
        let r = rates(s, &eff, config)?;
        let ok = r.cue.iter().all(|v| *v >= config.se_threshold);
        se.push(if ok { r.sum_d2d() } else { 0.0 });
        ee.push(if ok { ee_from_se(&r.d2d_per_tp(), &eff.power, config)?.iter().sum() } else { 0.0 });
        cue.extend_from_slice(&r.cue);
    }
    let m = samples.len().max(1) as f64;
    let avg_sum_se = se.iter().sum::<f64>() / m;
    let avg_sum_ee = ee.iter().sum::<f64>() / m;
    let (qos_violation_prob, qos_violation_level) = violation_stats(&cue, config.se_threshold);
    for v in [&mut se, &mut ee, &mut cue, &mut binerr] {
        v.sort_by(f64::total_cmp);
    }
    Ok(MetricsReport {
        scheme,
        objective: ctx.objective,
        se_threshold: config.se_threshold,
        n_samples: samples.len(),
        avg_sum_se,
        avg_sum_ee,
        qos_violation_prob,
        qos_violation_level,
        se_cdf: se,
        ee_cdf: ee,
        cue_cdf: cue,
        binerr_cdf: binerr,
        timing,
    })
}

/// Empirical quantile of an ascending table (nearest rank).
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

impl MetricsReport {
    /// File-name stem embedding scheme, objective and threshold.
    pub fn stem(&self) -> String {
        format!("{}_{}_thr{}", self.scheme.as_str(), self.objective.as_str(), self.se_threshold)
    }
}

fn cdf_csv(values: &[f64]) -> String {
    let mut out = String::from("value,cdf\n");
    let n = values.len() as f64;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{v},{}", (i + 1) as f64 / n).unwrap();
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const SUMMARY_HEADER: &str = "scheme,objective,se_threshold,n_samples,avg_sum_se,avg_sum_ee,qos_violation_prob,qos_violation_level";

/// Deterministic summary rows (no timings).
pub fn summary_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scheme.as_str(),
            r.objective.as_str(),
            r.se_threshold,
            r.n_samples,
            r.avg_sum_se,
            r.avg_sum_ee,
            r.qos_violation_prob,
            opt(r.qos_violation_level)
        )
        .unwrap();
    }
    out
}

/// Human-readable comparison table, timings included.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>6} {:>12} {:>12} {:>10} {:>10} {:>12} {:>12}\n",
        "scheme", "obj", "thr", "avg_sum_se", "avg_sum_ee", "viol_prob", "viol_lvl", "median_ms", "mean_ms"
    );
    for r in reports {
        let level = r.qos_violation_level.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:<12} {:>8} {:>6} {:>12.4} {:>12.4} {:>10.4} {:>10} {:>12.4} {:>12.4}",
            r.scheme.as_str(),
            r.objective.as_str(),
            r.se_threshold,
            r.avg_sum_se,
            r.avg_sum_ee,
            r.qos_violation_prob,
            level,
            r.timing.median_s * 1e3,
            r.timing.mean_s * 1e3
        )
        .unwrap();
    }
    out
}

/// Per-report CDF and timing CSVs plus `summary.csv` and `summary.txt`.
pub fn write_reports(dir: &Path, reports: &[MetricsReport]) -> Result<()> {
    for r in reports {
        let stem = r.stem();
        write_atomic(&dir.join(format!("{stem}_se_cdf.csv")), cdf_csv(&r.se_cdf).as_bytes())?;
        write_atomic(&dir.join(format!("{stem}_ee_cdf.csv")), cdf_csv(&r.ee_cdf).as_bytes())?;
        write_atomic(&dir.join(format!("{stem}_cue_cdf.csv")), cdf_csv(&r.cue_cdf).as_bytes())?;
        write_atomic(&dir.join(format!("{stem}_binerr_cdf.csv")), cdf_csv(&r.binerr_cdf).as_bytes())?;
        let mut t = String::from("sample,seconds\n");
        for (i, s) in r.timing.per_sample_s.iter().enumerate() {
            writeln!(t, "{i},{s}").unwrap();
        }
        write_atomic(&dir.join(format!("{stem}_timing.csv")), t.as_bytes())?;
    }
    write_atomic(&dir.join("summary.csv"), summary_csv(reports).as_bytes())?;
    write_atomic(&dir.join("summary.txt"), summary_table(reports).as_bytes())?;
    Ok(())
}

/// One row of the scaling benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n_tps: usize,
    pub candidates: u128,
    pub centralized_s: f64,
    pub distributed_s: f64,
    /// Median oracle time; `None` when the candidate count exceeds the cap.
    pub oracle_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub arch: Architecture,
    pub samples: usize,
    pub oracle_samples: usize,
    pub oracle_budget: u128,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { arch: Architecture::default(), samples: 20, oracle_samples: 3, oracle_budget: DEFAULT_BUDGET }
    }
}

fn median_time(mut f: impl FnMut(usize) -> Result<()>, count: usize) -> Result<f64> {
    let mut times = Vec::with_capacity(count);
    for i in 0..count {
        let t0 = Instant::now();
        f(i)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(TimingStats::from_samples(times).median_s)
}

/// Median per-sample hard decision time of randomly initialized networks
/// and of the oracle, for each pair count in `n_list`.
pub fn bench(base: &SystemConfig, n_list: &[usize], settings: &BenchSettings) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let config = SystemConfig { n_tps: n, ..base.clone() };
        config.validate()?;
        let count = settings.samples.max(settings.oracle_samples).max(2);
        let data = generate_dataset(&config, count);
        let stats = compute_stats(&data)?;
        let mut rng = stream(config.master_seed, domain::INIT, n as u64);
        let central = Model::init(ModelKind::Centralized, settings.arch, &config, &mut rng)?;
        let dist = Model::init(ModelKind::Distributed, settings.arch, &config, &mut rng)?;
        let centralized_s = median_time(|i| central.decide_sample(&data[i], &stats).map(drop), settings.samples)?;
        let distributed_s = median_time(|i| dist.decide_sample(&data[i], &stats).map(drop), settings.samples)?;
        let candidates = enumerate_count(&config);
        let oracle_s = if candidates <= settings.oracle_budget {
            let oracle = Oracle { objective: Objective::SumSe, budget: settings.oracle_budget };
            Some(median_time(|i| oracle.solve(i, &data[i], &config).map(drop), settings.oracle_samples)?)
        } else {
            None
        };
        rows.push(BenchRow { n_tps: n, candidates, centralized_s, distributed_s, oracle_s });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n_tps,candidates,centralized_s,distributed_s,oracle_s\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.n_tps, r.candidates, r.centralized_s, r.distributed_s, opt(r.oracle_s)).unwrap();
    }
    out
}
