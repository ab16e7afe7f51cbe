//! Central finite-difference checks of the hand-written backward passes,
//! from single layers up to a whole model differentiated through the
//! training losses. Used by the test suites; cheap enough to run anywhere.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::channel::{generate_dataset, ChannelSample};
use crate::config::{Objective, SystemConfig};
use crate::error::Result;
use crate::models::{Architecture, BatchOutputs, Model, ModelKind};
use crate::nn::layers::{sigmoid_backward, softmax_blocks, softmax_blocks_backward};
use crate::nn::{sigmoid, BasicModule, BasicModuleSpec, BatchNorm, Dense, Parameters};
use crate::oracle::{LabeledSample, Oracle};
use crate::rng::{stream, Stream};
use crate::stats::{compute_stats, preprocess_batch};
use crate::training::{ct_loss_grad, ft_loss_grad, LossWeights, Phase};

const H: f64 = 1e-6;
/// Gradient norms below this are compared in absolute terms: a bias that
/// feeds batch norm has an exact zero gradient and its difference quotient
/// is pure rounding noise.
const FLOOR: f64 = 1e-4;
const DOMAIN: u64 = 90;

/// Worst relative error of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub rel_error: f64,
}

/// `||a - n|| / max(||a||, ||n||, FLOOR)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(FLOOR)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Stream) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
}

/// Numeric gradient of `f` with respect to every entry of `x`.
fn numeric_input(x: &Array2<f64>, f: &dyn Fn(&Array2<f64>) -> f64) -> Vec<f64> {
    let mut x = x.as_standard_layout().into_owned();
    (0..x.len())
        .map(|i| {
            let orig = x.as_slice().unwrap()[i];
            x.as_slice_mut().unwrap()[i] = orig + H;
            let up = f(&x);
            x.as_slice_mut().unwrap()[i] = orig - H;
            let down = f(&x);
            x.as_slice_mut().unwrap()[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Worst tensor error of `grad` against numeric derivatives of `loss`.
fn param_error<P: Parameters + Clone>(p: &P, grad: &P, loss: &dyn Fn(&P) -> f64) -> f64 {
    let analytic = grad.trainable();
    let mut worst = 0.0f64;
    for (t, a) in analytic.iter().enumerate() {
        let numeric: Vec<f64> = (0..a.len())
            .map(|i| {
                let mut up = p.clone();
                up.trainable_mut()[t][i] += H;
                let mut down = p.clone();
                down.trainable_mut()[t][i] -= H;
                (loss(&up) - loss(&down)) / (2.0 * H)
            })
            .collect();
        worst = worst.max(rel_error(a, &numeric));
    }
    worst
}

/// Projection `sum(r * y)` that turns a layer output into a scalar loss.
fn project(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

fn check(name: &str, errors: &[f64]) -> GradCheck {
    GradCheck { name: name.to_string(), rel_error: errors.iter().copied().fold(0.0, f64::max) }
}

/// Dense, batch norm (train mode), block softmax, sigmoid and the residual
/// module with and without a linear head, on random inputs drawn from `seed`.
pub fn layer_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = stream(seed, DOMAIN, 0);
    let mut out = Vec::new();

    let layer = Dense::init(5, 4, &mut rng);
    let x = random_matrix(3, 5, &mut rng);
    let r = random_matrix(3, 4, &mut rng);
    let mut grad = Dense::zeros(5, 4);
    let dx = layer.backward(x.view(), r.view(), &mut grad);
    let loss = |l: &Dense, x: &Array2<f64>| project(&l.forward(x.view()).expect("shapes agree"), &r);
    out.push(check(
        "dense",
        &[rel_error(dx.as_slice().unwrap(), &numeric_input(&x, &|x| loss(&layer, x))), param_error(&layer, &grad, &|l| loss(l, &x))],
    ));

    let mut bn = BatchNorm::new(4);
    bn.scale = Array1::from_shape_fn(4, |_| rng.random_range(-1.5..1.5));
    bn.shift = Array1::from_shape_fn(4, |_| rng.random_range(-1.5..1.5));
    let x = random_matrix(6, 4, &mut rng);
    let r = random_matrix(6, 4, &mut rng);
    let (_, cache, _) = bn.forward_train(x.view())?;
    let mut grad = BatchNorm::new(4);
    grad.scale.fill(0.0);
    let dx = bn.backward(&cache, r.view(), &mut grad);
    let loss = |b: &BatchNorm, x: &Array2<f64>| project(&b.forward_train(x.view()).expect("batch of 6").0, &r);
    out.push(check(
        "batch-norm",
        &[rel_error(dx.as_slice().unwrap(), &numeric_input(&x, &|x| loss(&bn, x))), param_error(&bn, &grad, &|b| loss(b, &x))],
    ));

    let y = random_matrix(3, 6, &mut rng);
    let r = random_matrix(3, 6, &mut rng);
    let dy = softmax_blocks_backward(&softmax_blocks(&y, 3), &r, 3);
    out.push(check("block-softmax", &[rel_error(dy.as_slice().unwrap(), &numeric_input(&y, &|y| project(&softmax_blocks(y, 3), &r)))]));
    let dy = sigmoid_backward(&y.mapv(sigmoid), &r);
    out.push(check("sigmoid", &[rel_error(dy.as_slice().unwrap(), &numeric_input(&y, &|y| project(&y.mapv(sigmoid), &r)))]));

    for linear_head in [true, false] {
        let spec = BasicModuleSpec { n_inputs: 5, n_outputs: 3, n_units: 4, hidden_width: 6, dropout_rate: 0.0, linear_head };
        let module = BasicModule::init(spec, &mut rng)?;
        let x = random_matrix(5, 5, &mut rng);
        let r = random_matrix(5, 3, &mut rng);
        let (_, cache) = module.forward_train_pure(x.view(), &mut rng)?;
        let mut grad = module.zeros_like();
        let dx = module.backward(&cache, r.clone(), &mut grad);
        let loss = |m: &BasicModule, x: &Array2<f64>| project(&m.forward_train_pure(x.view(), &mut stream(0, 0, 0)).expect("valid module").0, &r);
        let name = if linear_head { "module-linear-head" } else { "module-relu-head" };
        out.push(check(
            name,
            &[rel_error(dx.as_slice().unwrap(), &numeric_input(&x, &|x| loss(&module, x))), param_error(&module, &grad, &|m| loss(m, &x))],
        ));
    }
    Ok(out)
}

struct Instance {
    config: SystemConfig,
    samples: Vec<ChannelSample>,
    labels: Vec<LabeledSample>,
    x: Array2<f64>,
}

fn instance(seed: u64) -> Result<Instance> {
    let config = SystemConfig { se_threshold: 0.5, master_seed: seed, bf_bits: 2, bb_bits: 3, ..SystemConfig::default().with_dims(2, 2, 3) };
    let samples = generate_dataset(&config, 5);
    let labels = Oracle::new(Objective::SumSe).label_all(&samples, &config)?;
    let x = preprocess_batch(&samples, &compute_stats(&samples)?)?;
    Ok(Instance { config, samples, labels, x })
}

/// Batch-mean weighted loss and its gradient, exactly as one training step
/// assembles them. Every loss weight is non-zero so every term is exercised.
fn batch_loss(model: &Model, inst: &Instance, phase: Phase, objective: Objective) -> Result<(f64, Model)> {
    let w = LossWeights { lambda1: 3.0, lambda2: 0.7, lambda3: 0.4, rho1: 0.6, rho2: 0.3, ..LossWeights::default() };
    let (out, cache) = model.forward_train(inst.x.view(), &mut stream(0, 0, 0))?;
    let b = out.n_rows() as f64;
    let mut d_out: BatchOutputs = out.zeros_like();
    let mut total = 0.0;
    for row in 0..out.n_rows() {
        let soft = out.sample(row, inst.config.n_tps);
        let (parts, mut g) = match phase {
            Phase::Ct => ct_loss_grad(&soft, &inst.labels[row], &w)?,
            Phase::Ft => ft_loss_grad(&soft, &inst.samples[row], &inst.config, &w, objective)?,
        };
        total += parts.weighted(phase, &w).total / b;
        g.power_probs /= b;
        g.channel_probs /= b;
        if let Some(f) = g.feedback.as_mut() {
            *f /= b;
        }
        if let Some(bc) = g.broadcast.as_mut() {
            *bc /= b;
        }
        d_out.set_sample(row, &g);
    }
    let mut grad = model.zeros_like();
    model.backward(&cache, &d_out, &mut grad);
    Ok((total, grad))
}

/// Every trainable tensor of a small model against the batch loss of
/// `phase`, with dropout off.
pub fn model_check(kind: ModelKind, phase: Phase, objective: Objective, seed: u64) -> Result<GradCheck> {
    let inst = instance(seed)?;
    let arch = Architecture { n_units: 3, hidden_width: 6, dropout_rate: 0.0 };
    let model = Model::init(kind, arch, &inst.config, &mut stream(seed, DOMAIN, 1))?;
    let (_, grad) = batch_loss(&model, &inst, phase, objective)?;
    let err = param_error(&model, &grad, &|m| batch_loss(m, &inst, phase, objective).expect("checked above").0);
    Ok(check(&format!("{}-{}-{}", kind.as_str(), phase.as_str(), objective.as_str()), &[err]))
}

/// Both model kinds through the CT loss and both FT objectives.
pub fn model_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (i, kind) in [ModelKind::Centralized, ModelKind::Distributed].into_iter().enumerate() {
        for (j, (phase, obj)) in [(Phase::Ct, Objective::SumSe), (Phase::Ft, Objective::SumSe), (Phase::Ft, Objective::SumEe)].into_iter().enumerate() {
            out.push(model_check(kind, phase, obj, seed.wrapping_mul(31).wrapping_add((3 * i + j) as u64))?);
        }
    }
    Ok(out)
}
