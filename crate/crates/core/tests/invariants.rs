//! Property tests for the data-model invariants, across random grid sizes
//! and seeds.

use d2dra::channel::{generate_dataset, sample_topology, ChannelSample};
use d2dra::evaluation::{binarization_error, evaluate, scored_sum_se, violation_stats, EvalContext, Scheme};
use d2dra::io::{decode_dataset, decode_stats, encode_dataset, encode_stats};
use d2dra::models::bundle::{Bundle, Manifest};
use d2dra::models::{Architecture, BitMode, Model, ModelKind};
use d2dra::objective::{qos_ok, se_d2d, Allocation};
use d2dra::oracle::{candidate, enumerate_count, random_allocation, Oracle};
use d2dra::rng::{domain, stream};
use d2dra::stats::{compute_stats, preprocess_batch, STD_FLOOR};
use d2dra::training::{init_model, train, TrainConfig};
use d2dra::{Objective, SystemConfig};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..4, 1usize..4, 2usize..6)
}

fn config(n: usize, k: usize, np: usize, seed: u64, thr: f64) -> SystemConfig {
    SystemConfig { master_seed: seed, se_threshold: thr, ..SystemConfig::default().with_dims(n, k, np) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn power_grid_is_valid((n, k, np) in dims(), p_max in 0.01f64..2.0) {
        let c = SystemConfig { p_max_watts: p_max, ..SystemConfig::default() }.with_dims(n, k, np);
        prop_assert!(c.validate().is_ok());
        prop_assert_eq!(c.power_levels.len(), np);
        prop_assert_eq!(c.power_levels[0], 0.0);
        prop_assert!((c.power_levels[np - 1] - p_max).abs() < 1e-12);
        prop_assert!(c.power_levels.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(c.noise_power() > 0.0);
    }

    #[test]
    fn topology_stays_in_the_cell((n, k, np) in dims(), seed in any::<u64>(), radius in 1.0f64..200.0) {
        let c = SystemConfig { pair_max_dist_m: radius, ..config(n, k, np, seed, 0.0) };
        let t = sample_topology(&c, &mut stream(seed, domain::TOPOLOGY, 0));
        let inside = |p: [f64; 2]| (0.0..=c.area_side_m).contains(&p[0]) && (0.0..=c.area_side_m).contains(&p[1]);
        prop_assert!(inside(t.bs_pos));
        prop_assert_eq!(t.cue_pos.len(), k);
        prop_assert!(t.cue_pos.iter().chain(&t.tp_tx_pos).chain(&t.tp_rx_pos).all(|&p| inside(p)));
        for (tx, rx) in t.tp_tx_pos.iter().zip(&t.tp_rx_pos) {
            prop_assert!(((tx[0] - rx[0]).powi(2) + (tx[1] - rx[1]).powi(2)).sqrt() <= radius + 1e-9);
        }
    }

    #[test]
    fn samples_are_positive_and_prefix_stable((n, k, np) in dims(), seed in any::<u64>()) {
        let c = config(n, k, np, seed, 0.0);
        let long = generate_dataset(&c, 5);
        let short = generate_dataset(&c, 3);
        prop_assert_eq!(&long[..3], &short[..]);
        for s in &long {
            prop_assert_eq!(s.gains().len(), k * (n + 1) * (n + 1));
            prop_assert!(s.gains().iter().all(|g| g.is_finite() && *g > 0.0));
            for node in 0..=n {
                prop_assert_eq!(s.local_csi(node).len(), k * (n + 1));
            }
        }
    }

    #[test]
    fn stats_and_dataset_files_roundtrip((n, k, np) in dims(), seed in any::<u64>(), m in 2usize..12) {
        let c = config(n, k, np, seed, 0.0);
        let data = generate_dataset(&c, m);
        let stats = compute_stats(&data).unwrap();
        prop_assert!(stats.std_log10.iter().all(|&s| s >= STD_FLOOR));
        prop_assert_eq!(stats.mean_log10.len(), c.gains_len());
        prop_assert_eq!(decode_stats(&encode_stats(&stats)).unwrap(), stats);
        let back = decode_dataset(&encode_dataset(&data, n, k).unwrap()).unwrap();
        prop_assert_eq!(back.samples, data);
    }

    #[test]
    fn canonical_form_is_idempotent((n, k, np) in dims(), seed in any::<u64>()) {
        let c = config(n, k, np, seed, 0.0);
        let mut a = random_allocation(&c, &mut stream(seed, domain::RANDOM_BASELINE, 0));
        prop_assert!(a.is_canonical());
        a.canonicalize();
        let once = a.clone();
        a.canonicalize();
        prop_assert_eq!(a, once);
        let idx = seed as u128 % enumerate_count(&c);
        prop_assert!(candidate(&c, idx).is_canonical());
    }

    #[test]
    fn oracle_label_is_consistent_and_dominant((n, k, np) in (1usize..3, 1usize..3, 2usize..5), seed in any::<u64>(), thr in 0.0f64..3.0) {
        let c = config(n, k, np, seed, thr);
        let s = &generate_dataset(&c, 1)[0];
        let label = Oracle::new(Objective::SumSe).solve(0, s, &c).unwrap();
        if label.feasible {
            prop_assert!(qos_ok(s, &label.optimal, &c).unwrap().iter().all(|ok| *ok));
            let sum: f64 = se_d2d(s, &label.optimal, &c).unwrap().iter().sum();
            prop_assert!((sum - label.optimal_sum_se).abs() <= 1e-12 * sum.max(1.0));
        } else {
            prop_assert_eq!(&label.optimal, &Allocation::idle(n));
        }
        let best = scored_sum_se(s, &label.optimal, &c).unwrap();
        for i in 0..enumerate_count(&c) {
            prop_assert!(scored_sum_se(s, &candidate(&c, i), &c).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn model_outputs_are_valid_relaxations(
        (n, k, np) in (1usize..4, 1usize..4, 2usize..5), seed in any::<u64>(), distributed in any::<bool>(),
    ) {
        let mut c = config(n, k, np, seed, 0.0);
        c.bf_bits = 2;
        c.bb_bits = 3;
        let kind = if distributed { ModelKind::Distributed } else { ModelKind::Centralized };
        let model = Model::init(kind, Architecture { n_units: 2, hidden_width: 8, dropout_rate: 0.0 }, &c, &mut stream(seed, domain::INIT, 0)).unwrap();
        let data = generate_dataset(&c, 6);
        let x = preprocess_batch(&data, &compute_stats(&data).unwrap()).unwrap();
        let out = model.infer(x.view(), BitMode::Soft).unwrap();
        for b in 0..out.n_rows() {
            let soft = out.sample(b, n);
            for row in soft.power_probs.rows().into_iter().chain(soft.channel_probs.rows()) {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
            for bit in soft.feedback.iter().flatten().chain(soft.broadcast.iter().flatten()) {
                prop_assert!(*bit > 0.0 && *bit < 1.0);
            }
            prop_assert_eq!(soft.feedback.is_some(), distributed);
        }
        prop_assert!(model.decide(x.view()).unwrap().iter().all(Allocation::is_canonical));
    }

    #[test]
    fn decisions_ignore_monotone_logit_transforms(seed in any::<u64>(), scale in 0.1f64..5.0, shift in -3.0f64..3.0) {
        let c = config(3, 2, 4, seed, 0.0);
        let model = Model::init(ModelKind::Centralized, Architecture { n_units: 2, hidden_width: 8, dropout_rate: 0.0 }, &c, &mut stream(seed, domain::INIT, 0)).unwrap();
        let data = generate_dataset(&c, 4);
        let x = preprocess_batch(&data, &compute_stats(&data).unwrap()).unwrap();
        let out = model.infer(x.view(), BitMode::Hard).unwrap();
        let mut moved = out.clone();
        moved.power.mapv_inplace(|p| scale * p.powi(3) + shift);
        moved.channel.mapv_inplace(|p| (scale * p).exp());
        prop_assert_eq!(out.decide(3), moved.decide(3));
    }

    #[test]
    fn evaluation_metrics_are_well_formed((n, k, np) in (1usize..3, 1usize..3, 2usize..4), seed in any::<u64>(), thr in 0.0f64..4.0) {
        let c = config(n, k, np, seed, thr);
        let data = generate_dataset(&c, 6);
        let ctx = EvalContext::new(&c, Objective::SumSe);
        for scheme in [Scheme::Oracle, Scheme::Random] {
            let r = evaluate(scheme, &data, &ctx).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.qos_violation_prob));
            prop_assert_eq!(r.qos_violation_level.is_some(), r.qos_violation_prob > 0.0);
            prop_assert!(r.qos_violation_level.unwrap_or(0.0) >= 0.0);
            for cdf in [&r.se_cdf, &r.ee_cdf, &r.cue_cdf] {
                prop_assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
            }
            prop_assert_eq!(r.cue_cdf.len(), 6 * k);
            let again = evaluate(scheme, &data, &ctx).unwrap();
            prop_assert_eq!(again.se_cdf, r.se_cdf);
        }
    }

    #[test]
    fn violation_statistics_are_bounded(cue in prop::collection::vec(0.0f64..5.0, 0..30), thr in 0.0f64..5.0) {
        let (p, level) = violation_stats(&cue, thr);
        prop_assert!((0.0..=1.0).contains(&p));
        let violated = cue.iter().filter(|&&se| se < thr).count();
        prop_assert_eq!(level.is_some(), violated > 0);
        if let Some(l) = level {
            prop_assert!(l > 0.0 && l <= thr);
        }
    }

    #[test]
    fn binarization_error_is_at_most_half(x in 0.0f64..=1.0) {
        let e = binarization_error(x);
        prop_assert!((0.0..=0.5).contains(&e));
        prop_assert!((e - x.min(1.0 - x)).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn training_is_deterministic(seed in 0u64..1000, distributed in any::<bool>()) {
        let c = SystemConfig { bf_bits: 2, bb_bits: 2, ..config(2, 2, 3, seed, 0.5) };
        let data = generate_dataset(&c, 40);
        let stats = compute_stats(&data).unwrap();
        let labels = Oracle::new(Objective::SumSe).label_all(&data, &c).unwrap();
        let tc = TrainConfig {
            mode: if distributed { ModelKind::Distributed } else { ModelKind::Centralized },
            zeta_ct: 0.5, epochs_ct: 1, epochs_ft: 1, batch_size: 8, n_units: 2, hidden_width: 8, seed,
            ..TrainConfig::default()
        };
        let run = || train(&data, &stats, Some(labels.as_slice()), init_model(&tc, &c).unwrap(), &c, &tc).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(&a.model, &b.model);
        prop_assert_eq!(a.history.len(), 2);
        // the same bundle evaluates to the same decisions
        let sb = encode_stats(&stats);
        let bundle = Bundle { manifest: Manifest::new(&a.model, Objective::SumSe, &c, seed, &sb), model: a.model, stats };
        let mut ctx = EvalContext::new(&c, Objective::SumSe);
        let scheme = if distributed { ctx.distributed = Some(&bundle); Scheme::Distributed } else { ctx.centralized = Some(&bundle); Scheme::Centralized };
        prop_assert_eq!(evaluate(scheme, &data, &ctx).unwrap().se_cdf, evaluate(scheme, &data, &ctx).unwrap().se_cdf);
    }
}

#[test]
fn gains_reject_nonpositive_entries() {
    assert!(ChannelSample::new(1, 1, vec![1.0, 1.0, 0.0, 1.0]).is_err());
    assert!(ChannelSample::new(1, 1, vec![1.0, f64::NAN, 1.0, 1.0]).is_err());
}
