//! Two-phase training: supervised coarse tuning (CT) against oracle labels,
//! then unsupervised fine tuning (FT) on the negative objective with a QoS
//! hinge and binarization penalties.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSample;
use crate::config::{Objective, SystemConfig};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::models::bundle::{save_bundle, Manifest};
use crate::models::{Architecture, BatchOutputs, Model, ModelKind};
use crate::nn::{Adam, Parameters};
use crate::objective::{rates, Decision, SoftOutputs};
use crate::oracle::LabeledSample;
use crate::rng::{domain, stream};
use crate::stats::{preprocess_batch, DatasetStats};

/// Floor applied to probabilities inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: ModelKind,
    pub objective: Objective,
    /// Fraction of the (shuffled) dataset whose labels feed CT.
    pub zeta_ct: f64,
    pub lr_ct: f64,
    pub lr_ft: f64,
    pub epochs_ct: usize,
    pub epochs_ft: usize,
    pub batch_size: usize,
    pub kappa: f64,
    /// CT weight on the decision-output penalty.
    pub rho1: f64,
    /// CT weight on the feedback/broadcast-bit penalty.
    pub rho2: f64,
    /// FT weight on the QoS hinge.
    pub lambda1: f64,
    /// FT weight on the decision-output penalty.
    pub lambda2: f64,
    /// FT weight on the feedback/broadcast-bit penalty.
    pub lambda3: f64,
    pub delta_ft: f64,
    pub seed: u64,
    pub n_units: usize,
    pub hidden_width: usize,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        TrainConfig {
            mode: ModelKind::Centralized,
            objective: Objective::SumSe,
            zeta_ct: 0.01,
            lr_ct: 1e-3,
            lr_ft: 3e-6,
            epochs_ct: 10,
            epochs_ft: 10,
            batch_size: 256,
            kappa: 2.0,
            rho1: 1.0,
            rho2: 1.0,
            lambda1: 10.0,
            lambda2: 1.0,
            lambda3: 1.0,
            delta_ft: 1e-6,
            seed: 1,
            n_units: arch.n_units,
            hidden_width: arch.hidden_width,
            dropout_rate: arch.dropout_rate,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture { n_units: self.n_units, hidden_width: self.hidden_width, dropout_rate: self.dropout_rate }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            kappa: self.kappa,
            rho1: self.rho1,
            rho2: self.rho2,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            delta_ft: self.delta_ft,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.zeta_ct) {
            return bad("zeta_ct must lie in [0, 1]");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        let ws = [self.rho1, self.rho2, self.lambda1, self.lambda2, self.lambda3];
        if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("penalty weights must be finite and non-negative");
        }
        if !(self.delta_ft > 0.0) {
            return bad("delta_ft must be positive");
        }
        if !(self.lr_ct > 0.0) || !(self.lr_ft > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        self.architecture().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub kappa: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub delta_ft: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        TrainConfig::default().weights()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Ct,
    Ft,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ct => "ct",
            Phase::Ft => "ft",
        }
    }
}

/// Unweighted loss components for one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Cross-entropy (CT) or negative objective (FT).
    pub objective: f64,
    /// `sum_k max(thr - SE0_k, 0) / (thr + delta)`; zero in CT.
    pub qos: f64,
    /// Penalty over power and channel probabilities.
    pub g_decision: f64,
    /// Penalty over feedback and broadcast bits.
    pub g_bits: f64,
}

/// Weighted terms as they enter the scalar loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub objective: f64,
    pub qos: f64,
    pub binarization: f64,
    pub total: f64,
}

impl LossParts {
    pub fn weighted(&self, phase: Phase, w: &LossWeights) -> LossTerms {
        let (qos, binarization) = match phase {
            Phase::Ct => (0.0, w.rho1 * self.g_decision + w.rho2 * self.g_bits),
            Phase::Ft => (w.lambda1 * self.qos, w.lambda2 * self.g_decision + w.lambda3 * self.g_bits),
        };
        LossTerms { objective: self.objective, qos, binarization, total: self.objective + qos + binarization }
    }
}

/// `-sum |x - 0.5|^kappa`; zero at 0.5, most negative at binary values.
pub fn binarization_penalty(values: impl IntoIterator<Item = f64>, kappa: f64) -> f64 {
    -values.into_iter().map(|x| (x - 0.5).abs().powf(kappa)).sum::<f64>()
}

fn penalty_grad(x: f64, kappa: f64) -> f64 {
    let d = x - 0.5;
    if d == 0.0 {
        0.0
    } else {
        -kappa * d.abs().powf(kappa - 1.0) * d.signum()
    }
}

fn bit_values(soft: &SoftOutputs) -> impl Iterator<Item = f64> + '_ {
    soft.feedback.iter().flat_map(|f| f.iter()).chain(soft.broadcast.iter().flat_map(|b| b.iter())).copied()
}

fn decision_values(soft: &SoftOutputs) -> impl Iterator<Item = f64> + '_ {
    soft.power_probs.iter().chain(soft.channel_probs.iter()).copied()
}

fn penalties(soft: &SoftOutputs, kappa: f64) -> (f64, f64) {
    (binarization_penalty(decision_values(soft), kappa), binarization_penalty(bit_values(soft), kappa))
}

/// Adds `w_dec * g'` and `w_bits * g'` to a gradient shaped like `soft`.
fn add_penalty_grad(grad: &mut SoftOutputs, soft: &SoftOutputs, kappa: f64, w_dec: f64, w_bits: f64) {
    grad.power_probs.zip_mut_with(&soft.power_probs, |g, &x| *g += w_dec * penalty_grad(x, kappa));
    grad.channel_probs.zip_mut_with(&soft.channel_probs, |g, &x| *g += w_dec * penalty_grad(x, kappa));
    if let (Some(g), Some(s)) = (grad.feedback.as_mut(), soft.feedback.as_ref()) {
        g.zip_mut_with(s, |g, &x| *g += w_bits * penalty_grad(x, kappa));
    }
    if let (Some(g), Some(s)) = (grad.broadcast.as_mut(), soft.broadcast.as_ref()) {
        g.zip_mut_with(s, |g, &x| *g += w_bits * penalty_grad(x, kappa));
    }
}

fn zero_grad(soft: &SoftOutputs) -> SoftOutputs {
    SoftOutputs {
        power_probs: Array2::zeros(soft.power_probs.dim()),
        channel_probs: Array2::zeros(soft.channel_probs.dim()),
        feedback: soft.feedback.as_ref().map(|f| Array2::zeros(f.dim())),
        broadcast: soft.broadcast.as_ref().map(|b| Array1::zeros(b.len())),
    }
}

/// CT loss parts and the gradient of the weighted CT loss.
pub fn ct_loss_grad(soft: &SoftOutputs, label: &LabeledSample, w: &LossWeights) -> Result<(LossParts, SoftOutputs)> {
    if !label.feasible {
        return Err(Error::InfeasibleLabel(label.sample_id));
    }
    let target = &label.optimal;
    if target.n_tps() != soft.power_probs.nrows() || !target.is_canonical() {
        return Err(Error::ShapeMismatch(format!("label {} does not match the outputs", label.sample_id)));
    }
    let mut grad = zero_grad(soft);
    let mut ce = 0.0;
    for i in 0..target.n_tps() {
        for (probs, g, j) in [
            (&soft.channel_probs, &mut grad.channel_probs, target.channel_idx[i]),
            (&soft.power_probs, &mut grad.power_probs, target.power_idx[i]),
        ] {
            let p = probs[[i, j]];
            ce -= p.max(PROB_FLOOR).ln();
            if p > PROB_FLOOR {
                g[[i, j]] -= 1.0 / p;
            }
        }
    }
    let (g_decision, g_bits) = penalties(soft, w.kappa);
    add_penalty_grad(&mut grad, soft, w.kappa, w.rho1, w.rho2);
    Ok((LossParts { objective: ce, qos: 0.0, g_decision, g_bits }, grad))
}

pub fn ct_loss(soft: &SoftOutputs, label: &LabeledSample, w: &LossWeights) -> Result<LossParts> {
    ct_loss_grad(soft, label, w).map(|r| r.0)
}

/// FT loss parts and the gradient of the weighted FT loss.
pub fn ft_loss_grad(
    soft: &SoftOutputs,
    sample: &ChannelSample,
    config: &SystemConfig,
    w: &LossWeights,
    objective: Objective,
) -> Result<(LossParts, SoftOutputs)> {
    let eff = soft.effective(config)?;
    let r = rates(sample, &eff, config)?;
    let (n, kk) = (config.n_tps, config.n_channels);
    let se_tp = r.d2d_per_tp();
    let thr = config.se_threshold;
    let hinge_scale = thr + w.delta_ft;

    // dL/dSE_ik for the weighted loss
    let mut d_se = vec![-1.0; n];
    let mut d_power = vec![0.0; n];
    let obj = match objective {
        Objective::SumSe => -se_tp.iter().sum::<f64>(),
        Objective::SumEe => {
            let mut total = 0.0;
            for i in 0..n {
                let den = eff.power[i] + config.p_cir_watts;
                if !(den > 0.0) {
                    return Err(Error::InvalidConfig("p + P_CIR must be positive for the EE objective".into()));
                }
                total -= se_tp[i] / den;
                d_se[i] = -1.0 / den;
                d_power[i] += se_tp[i] / (den * den);
            }
            total
        }
    };
    let mut qos = 0.0;
    let mut d_cue = vec![0.0; kk];
    for k in 0..kk {
        let short = thr - r.cue[k];
        if short > 0.0 {
            qos += short / hinge_scale;
            d_cue[k] = -w.lambda1 / hinge_scale;
        }
    }

    let n0w = config.noise_power();
    let pc = config.p_cue_watts;
    let q = |l: usize, k: usize| eff.assign[[l, k]] * eff.power[l];
    let mut d_q = Array2::<f64>::zeros((n, kk));
    for k in 0..kk {
        for i in 0..n {
            let rx = i + 1;
            let mut den = n0w;
            for l in 0..n {
                if l != i {
                    den += sample.gain(k, rx, l + 1) * q(l, k);
                }
            }
            den += sample.gain(k, rx, 0) * pc;
            let s = sample.gain(k, rx, rx) * q(i, k);
            let d_s = 1.0 / ((den + s) * LN_2);
            let d_i = -s / (den * (den + s) * LN_2);
            d_q[[i, k]] += d_se[i] * d_s * sample.gain(k, rx, rx);
            for l in 0..n {
                if l != i {
                    d_q[[l, k]] += d_se[i] * d_i * sample.gain(k, rx, l + 1);
                }
            }
        }
        if d_cue[k] != 0.0 {
            let mut den = n0w;
            for l in 0..n {
                den += sample.gain(k, 0, l + 1) * q(l, k);
            }
            let c = sample.gain(k, 0, 0) * pc;
            let d_j = -c / (den * (den + c) * LN_2);
            for l in 0..n {
                d_q[[l, k]] += d_cue[k] * d_j * sample.gain(k, 0, l + 1);
            }
        }
    }

    let mut grad = zero_grad(soft);
    for l in 0..n {
        for k in 0..kk {
            grad.channel_probs[[l, k]] += d_q[[l, k]] * eff.power[l];
            d_power[l] += d_q[[l, k]] * eff.assign[[l, k]];
        }
        for (j, level) in config.power_levels.iter().enumerate() {
            grad.power_probs[[l, j]] += d_power[l] * level;
        }
    }
    let (g_decision, g_bits) = penalties(soft, w.kappa);
    add_penalty_grad(&mut grad, soft, w.kappa, w.lambda2, w.lambda3);
    Ok((LossParts { objective: obj, qos, g_decision, g_bits }, grad))
}

pub fn ft_loss(soft: &SoftOutputs, sample: &ChannelSample, config: &SystemConfig, w: &LossWeights, objective: Objective) -> Result<LossParts> {
    ft_loss_grad(soft, sample, config, w, objective).map(|r| r.0)
}

/// Mean weighted loss terms over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub terms: LossTerms,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Fresh model with weights drawn from the config's init stream.
pub fn init_model(tc: &TrainConfig, config: &SystemConfig) -> Result<Model> {
    Model::init(tc.mode, tc.architecture(), config, &mut stream(tc.seed, domain::INIT, 0))
}

/// Sample ids whose labels CT uses: the first `ceil(zeta * M)` of a seeded
/// shuffle of the dataset.
pub fn ct_pool(dataset_len: usize, tc: &TrainConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dataset_len).collect();
    order.shuffle(&mut stream(tc.seed, domain::SHUFFLE, 0));
    let take = (tc.zeta_ct * dataset_len as f64).ceil() as usize;
    order.truncate(take.min(dataset_len));
    order
}

enum Target<'a> {
    Label(&'a LabeledSample),
    Sample(&'a ChannelSample),
}

/// One Adam step on `ids`; returns summed weighted terms over the batch.
#[allow(clippy::too_many_arguments)]
fn step<'a>(
    model: &mut Model,
    adam: &mut Adam,
    x: &Array2<f64>,
    ids: &[usize],
    targets: &dyn Fn(usize) -> Target<'a>,
    phase: Phase,
    config: &SystemConfig,
    tc: &TrainConfig,
    dropout: &mut crate::rng::Stream,
) -> Result<LossTerms> {
    let w = tc.weights();
    let xb = x.select(Axis(0), ids);
    let (out, cache) = model.forward_train(xb.view(), dropout)?;
    let mut d_out: BatchOutputs = out.zeros_like();
    let scale = 1.0 / ids.len() as f64;
    let mut sum = LossTerms::default();
    for (b, &id) in ids.iter().enumerate() {
        let soft = out.sample(b, config.n_tps);
        let (parts, mut g) = match targets(id) {
            Target::Label(l) => ct_loss_grad(&soft, l, &w)?,
            Target::Sample(s) => ft_loss_grad(&soft, s, config, &w, tc.objective)?,
        };
        let t = parts.weighted(phase, &w);
        sum.objective += t.objective;
        sum.qos += t.qos;
        sum.binarization += t.binarization;
        sum.total += t.total;
        g.power_probs *= scale;
        g.channel_probs *= scale;
        if let Some(f) = g.feedback.as_mut() {
            *f *= scale;
        }
        if let Some(bc) = g.broadcast.as_mut() {
            *bc *= scale;
        }
        d_out.set_sample(b, &g);
    }
    let mut grad = model.zeros_like();
    model.backward(&cache, &d_out, &mut grad);
    model.update_running(&cache);
    adam.step(model.trainable_mut(), grad.trainable());
    Ok(sum)
}

/// Runs `epochs_ct` CT epochs over the labeled pool, then `epochs_ft` FT
/// epochs over the whole dataset. Batches smaller than 2 are dropped.
pub fn train(
    samples: &[ChannelSample],
    stats: &DatasetStats,
    labels: Option<&[LabeledSample]>,
    model: Model,
    config: &SystemConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    tc.validate()?;
    model.check_config(config)?;
    if samples.len() < 2 {
        return Err(Error::EmptyDataset { needed: 2, got: samples.len() });
    }
    let mut model = model;
    let mut history = Vec::with_capacity(tc.epochs_ct + tc.epochs_ft);
    if tc.epochs_ct == 0 && tc.epochs_ft == 0 {
        return Ok(TrainOutcome { model, history });
    }
    let x = preprocess_batch(samples, stats)?;
    let mut dropout = stream(tc.seed, domain::DROPOUT, 0);

    if tc.epochs_ct > 0 {
        let by_id: HashMap<usize, &LabeledSample> = labels.unwrap_or(&[]).iter().map(|l| (l.sample_id, l)).collect();
        let pool = ct_pool(samples.len(), tc);
        let mut labeled = Vec::with_capacity(pool.len());
        for id in pool {
            let l = by_id.get(&id).ok_or_else(|| Error::MissingLabels(format!("no label for sample {id} in the CT subset")))?;
            if l.feasible {
                labeled.push(id);
            }
        }
        let targets = |id: usize| Target::Label(by_id[&id]);
        let mut adam = Adam::new(tc.lr_ct);
        for e in 0..tc.epochs_ct {
            let mut order = labeled.clone();
            order.shuffle(&mut stream(tc.seed, domain::SHUFFLE, 1 + e as u64));
            let terms = run_epoch(&mut model, &mut adam, &x, &order, &targets, Phase::Ct, config, tc, &mut dropout)?;
            history.push(EpochRecord { epoch: history.len() + 1, phase: Phase::Ct, terms });
        }
    }

    let targets = |id: usize| Target::Sample(&samples[id]);
    let mut adam = Adam::new(tc.lr_ft);
    for e in 0..tc.epochs_ft {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(tc.seed, domain::SHUFFLE, 1 + (tc.epochs_ct + e) as u64));
        let terms = run_epoch(&mut model, &mut adam, &x, &order, &targets, Phase::Ft, config, tc, &mut dropout)?;
        history.push(EpochRecord { epoch: history.len() + 1, phase: Phase::Ft, terms });
    }
    Ok(TrainOutcome { model, history })
}

#[allow(clippy::too_many_arguments)]
fn run_epoch<'a>(
    model: &mut Model,
    adam: &mut Adam,
    x: &Array2<f64>,
    order: &[usize],
    targets: &dyn Fn(usize) -> Target<'a>,
    phase: Phase,
    config: &SystemConfig,
    tc: &TrainConfig,
    dropout: &mut crate::rng::Stream,
) -> Result<LossTerms> {
    let mut sum = LossTerms::default();
    let mut count = 0usize;
    for ids in order.chunks(tc.batch_size).filter(|c| c.len() >= 2) {
        let t = step(model, adam, x, ids, targets, phase, config, tc, dropout)?;
        sum.objective += t.objective;
        sum.qos += t.qos;
        sum.binarization += t.binarization;
        sum.total += t.total;
        count += ids.len();
    }
    if count == 0 {
        return Ok(LossTerms::default());
    }
    let c = count as f64;
    Ok(LossTerms { objective: sum.objective / c, qos: sum.qos / c, binarization: sum.binarization / c, total: sum.total / c })
}

pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";
pub const HISTORY_FILE: &str = "loss.csv";

/// Writes a training run directory: config snapshot, loss history and the
/// model bundle.
pub fn save_run(dir: &Path, snapshot: &str, outcome: &TrainOutcome, manifest: &Manifest, stats_bytes: &[u8]) -> Result<()> {
    write_atomic(&dir.join(CONFIG_SNAPSHOT_FILE), snapshot.as_bytes())?;
    write_atomic(&dir.join(HISTORY_FILE), history_csv(&outcome.history).as_bytes())?;
    save_bundle(dir, &outcome.model, manifest, stats_bytes)
}

/// `epoch,phase,objective_term,qos_term,binarization_term,total`, one row per epoch.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,phase,objective_term,qos_term,binarization_term,total\n");
    for r in history {
        let t = &r.terms;
        writeln!(out, "{},{},{},{},{},{}", r.epoch, r.phase.as_str(), t.objective, t.qos, t.binarization, t.total).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    use super::*;
    use crate::channel::generate_dataset;
    use crate::objective::Allocation;
    use crate::stats::compute_stats;

    fn weightless() -> LossWeights {
        LossWeights { rho1: 0.0, rho2: 0.0, lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, ..LossWeights::default() }
    }

    fn label(a: Allocation) -> LabeledSample {
        LabeledSample { sample_id: 0, optimal: a, feasible: true, optimal_sum_se: 0.0 }
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(binarization_penalty([0.5, 0.5, 0.5], 2.0), 0.0);
        assert_eq!(binarization_penalty([1.0], 2.0), -0.25);
        assert_eq!(binarization_penalty([0.0, 1.0, 0.5], 1.0), -1.0);
    }

    #[test]
    fn ct_one_hot_at_label_is_zero() {
        let cfg = SystemConfig::default();
        let a = Allocation::new(vec![2, 0, 1], vec![3, 0, 7]);
        let soft = SoftOutputs::one_hot(&a, &cfg);
        let p = ct_loss(&soft, &label(a), &weightless()).unwrap();
        assert_eq!(p.weighted(Phase::Ct, &weightless()).total, 0.0);
    }

    #[test]
    fn ct_half_probability_costs_ln2() {
        let soft = SoftOutputs { power_probs: array![[0.5, 0.5]], channel_probs: array![[1.0]], feedback: None, broadcast: None };
        let p = ct_loss(&soft, &label(Allocation::new(vec![0], vec![1])), &weightless()).unwrap();
        assert_abs_diff_eq!(p.objective, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn ct_rejects_infeasible() {
        let cfg = SystemConfig::default();
        let mut l = label(Allocation::idle(3));
        l.feasible = false;
        let soft = SoftOutputs::one_hot(&l.optimal, &cfg);
        assert!(matches!(ct_loss(&soft, &l, &weightless()), Err(Error::InfeasibleLabel(0))));
    }

    #[test]
    fn rho_raises_loss_off_binary() {
        let soft = SoftOutputs { power_probs: array![[0.3, 0.7]], channel_probs: array![[1.0]], feedback: None, broadcast: None };
        let l = label(Allocation::new(vec![0], vec![1]));
        let p = ct_loss(&soft, &l, &weightless()).unwrap();
        let lo = p.weighted(Phase::Ct, &LossWeights { rho1: 0.5, ..weightless() }).total;
        let hi = p.weighted(Phase::Ct, &LossWeights { rho1: 1.0, ..weightless() }).total;
        // g < 0, so a larger weight lowers the loss
        assert!(hi < lo);
    }

    fn lone_cue(se0: f64, thr: f64) -> (SystemConfig, ChannelSample) {
        let cfg = SystemConfig { se_threshold: thr, ..SystemConfig::default().with_dims(1, 1, 2) };
        let h00 = (2f64.powf(se0) - 1.0) * cfg.noise_power() / cfg.p_cue_watts;
        let s = ChannelSample::new(1, 1, vec![h00, 1e-9, 1e-9, 1e-7]).unwrap();
        (cfg, s)
    }

    #[test]
    fn qos_hinge_example() {
        let (cfg, s) = lone_cue(0.5, 1.0);
        let soft = SoftOutputs::one_hot(&Allocation::idle(1), &cfg);
        let p = ft_loss(&soft, &s, &cfg, &LossWeights::default(), Objective::SumSe).unwrap();
        assert_abs_diff_eq!(p.qos, 0.5 / 1.000001, epsilon = 1e-12);
        assert_abs_diff_eq!(p.qos, 0.4999995, epsilon = 1e-9);
    }

    #[test]
    fn zero_threshold_has_no_hinge() {
        let (cfg, s) = lone_cue(0.01, 0.0);
        let soft = SoftOutputs::one_hot(&Allocation::new(vec![0], vec![1]), &cfg);
        assert_eq!(ft_loss(&soft, &s, &cfg, &LossWeights::default(), Objective::SumSe).unwrap().qos, 0.0);
    }

    #[test]
    fn ft_binary_weightless_is_negative_sum_se() {
        let cfg = SystemConfig::default();
        let s = generate_dataset(&cfg, 1).pop().unwrap();
        let a = Allocation::new(vec![0, 1, 2], vec![7, 4, 1]);
        let soft = SoftOutputs::one_hot(&a, &cfg);
        let p = ft_loss(&soft, &s, &cfg, &weightless(), Objective::SumSe).unwrap();
        let se: f64 = crate::objective::se_d2d(&s, &a, &cfg).unwrap().iter().sum();
        assert_eq!(p.weighted(Phase::Ft, &weightless()).total, -se);
    }

    #[test]
    fn weighted_terms_sum_to_total() {
        let cfg = SystemConfig { se_threshold: 2.0, ..SystemConfig::default() };
        let s = generate_dataset(&cfg, 3).pop().unwrap();
        let soft = SoftOutputs {
            power_probs: Array2::from_elem((3, 8), 0.125),
            channel_probs: array![[0.2, 0.3, 0.5], [0.6, 0.2, 0.2], [0.1, 0.1, 0.8]],
            feedback: Some(Array2::from_elem((3, 12), 0.3)),
            broadcast: Some(Array1::from_elem(24, 0.9)),
        };
        let w = LossWeights::default();
        for obj in [Objective::SumSe, Objective::SumEe] {
            let p = ft_loss(&soft, &s, &cfg, &w, obj).unwrap();
            let t = p.weighted(Phase::Ft, &w);
            let manual = p.objective + w.lambda1 * p.qos + w.lambda2 * p.g_decision + w.lambda3 * p.g_bits;
            assert_abs_diff_eq!(t.total, manual, epsilon = 1e-12);
            assert_abs_diff_eq!(t.total, t.objective + t.qos + t.binarization, epsilon = 1e-12);
        }
    }

    #[test]
    fn ft_gradient_matches_finite_differences() {
        let cfg = SystemConfig { se_threshold: 3.0, ..SystemConfig::default().with_dims(2, 2, 3) };
        let s = generate_dataset(&cfg, 2).pop().unwrap();
        let soft = SoftOutputs {
            power_probs: array![[0.2, 0.5, 0.3], [0.1, 0.3, 0.6]],
            channel_probs: array![[0.7, 0.3], [0.45, 0.55]],
            feedback: Some(array![[0.2, 0.9], [0.6, 0.4]]),
            broadcast: Some(array![0.3, 0.8, 0.55]),
        };
        let w = LossWeights { kappa: 2.5, ..LossWeights::default() };
        for obj in [Objective::SumSe, Objective::SumEe] {
            let (_, g) = ft_loss_grad(&soft, &s, &cfg, &w, obj).unwrap();
            let f = |o: &SoftOutputs| ft_loss(o, &s, &cfg, &w, obj).unwrap().weighted(Phase::Ft, &w).total;
            let h = 1e-6;
            let flat_g: Vec<f64> = g.relaxed_values().collect();
            for idx in 0..flat_g.len() {
                let mut plus = soft.clone();
                let mut minus = soft.clone();
                nudge(&mut plus, idx, h);
                nudge(&mut minus, idx, -h);
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let scale = fd.abs().max(flat_g[idx].abs()).max(1e-6);
                assert!((fd - flat_g[idx]).abs() / scale < 1e-5, "{obj:?} idx {idx}: fd {fd} vs {}", flat_g[idx]);
            }
        }
    }

    fn nudge(o: &mut SoftOutputs, mut idx: usize, h: f64) {
        let mut tensors: Vec<&mut [f64]> = vec![o.power_probs.as_slice_mut().unwrap(), o.channel_probs.as_slice_mut().unwrap()];
        if let Some(f) = o.feedback.as_mut() {
            tensors.push(f.as_slice_mut().unwrap());
        }
        if let Some(b) = o.broadcast.as_mut() {
            tensors.push(b.as_slice_mut().unwrap());
        }
        for t in tensors {
            if idx < t.len() {
                t[idx] += h;
                return;
            }
            idx -= t.len();
        }
    }

    fn tiny() -> (SystemConfig, Vec<ChannelSample>, DatasetStats, TrainConfig) {
        let cfg = SystemConfig::default().with_dims(2, 2, 3);
        let data = generate_dataset(&cfg, 40);
        let stats = compute_stats(&data).unwrap();
        let tc = TrainConfig { n_units: 2, hidden_width: 8, batch_size: 8, epochs_ct: 2, epochs_ft: 2, zeta_ct: 0.5, lr_ft: 1e-3, ..TrainConfig::default() };
        (cfg, data, stats, tc)
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (cfg, data, stats, tc) = tiny();
        let tc = TrainConfig { epochs_ct: 0, epochs_ft: 0, ..tc };
        let m = init_model(&tc, &cfg).unwrap();
        let out = train(&data, &stats, None, m.clone(), &cfg, &tc).unwrap();
        assert_eq!(out.model, m);
        assert!(out.history.is_empty());
    }

    #[test]
    fn missing_ct_labels_are_reported() {
        let (cfg, data, stats, tc) = tiny();
        let m = init_model(&tc, &cfg).unwrap();
        assert!(matches!(train(&data, &stats, None, m, &cfg, &tc), Err(Error::MissingLabels(_))));
    }

    #[test]
    fn training_is_reproducible() {
        let (cfg, data, stats, tc) = tiny();
        let labels = crate::oracle::Oracle::default().label_all(&data, &cfg).unwrap();
        for mode in [ModelKind::Centralized, ModelKind::Distributed] {
            let tc = TrainConfig { mode, ..tc.clone() };
            let run = || train(&data, &stats, Some(&labels), init_model(&tc, &cfg).unwrap(), &cfg, &tc).unwrap();
            let (a, b) = (run(), run());
            assert_eq!(a.model, b.model);
            assert_eq!(history_csv(&a.history), history_csv(&b.history));
            assert_eq!(a.history.len(), 4);
            assert_eq!(a.history[0].phase, Phase::Ct);
            assert_eq!(a.history[3].phase, Phase::Ft);
        }
    }
}
