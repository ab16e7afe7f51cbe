//! Desk-scale tuning run: trains one model on 10^5 samples of the N = K = 2,
//! four-level scenario and prints its loss history and evaluation against
//! the baselines on 2000 held-out samples.
//!
//! `cargo run --release --example desk -- eft=20 lrft=3e-4 l2=5 l3=5 dist=1`
//!
//! Keys: thr, m, ee, dist, zeta, lrct, lrft, ect, eft, bs, l1, l2, l3, r1,
//! r2, drop, seed.

use std::time::Instant;

use d2dra::channel::generate_dataset;
use d2dra::evaluation::{evaluate, quantile, EvalContext, Scheme};
use d2dra::io::encode_stats;
use d2dra::models::bundle::{Bundle, Manifest};
use d2dra::models::ModelKind;
use d2dra::oracle::Oracle;
use d2dra::stats::compute_stats;
use d2dra::training::{history_csv, init_model, train, TrainConfig};
use d2dra::{Objective, SystemConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |k: &str, d: f64| -> f64 {
        args.iter().find_map(|a| a.strip_prefix(&format!("{k}=")).map(|v| v.parse().unwrap())).unwrap_or(d)
    };
    let thr = get("thr", 0.0);
    let m = get("m", 100000.0) as usize;
    let cfg = SystemConfig { se_threshold: thr, ..SystemConfig::default().with_dims(2, 2, 4) };
    let eval_cfg = SystemConfig { master_seed: 1001, ..cfg.clone() };
    let data = generate_dataset(&cfg, m);
    let eval = generate_dataset(&eval_cfg, 2000);
    let stats = compute_stats(&data).unwrap();
    let obj = if get("ee", 0.0) > 0.0 { Objective::SumEe } else { Objective::SumSe };
    let t = Instant::now();
    let labels = Oracle::new(obj).label_all(&data, &cfg).unwrap();
    eprintln!("label {:?}", t.elapsed());
    let mode = if get("dist", 0.0) > 0.0 { ModelKind::Distributed } else { ModelKind::Centralized };
    let tc = TrainConfig {
        mode,
        objective: obj,
        zeta_ct: get("zeta", 0.01),
        lr_ct: get("lrct", 1e-3),
        lr_ft: get("lrft", 1e-4),
        epochs_ct: get("ect", 20.0) as usize,
        epochs_ft: get("eft", 5.0) as usize,
        batch_size: get("bs", 256.0) as usize,
        lambda1: get("l1", 10.0),
        lambda2: get("l2", 1.0),
        lambda3: get("l3", 1.0),
        rho1: get("r1", 1.0),
        rho2: get("r2", 1.0),
        dropout_rate: get("drop", 0.05),
        n_units: 4,
        hidden_width: 64,
        seed: get("seed", 1.0) as u64,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = train(&data, &stats, Some(&labels), init_model(&tc, &cfg).unwrap(), &cfg, &tc).unwrap();
    eprintln!("train {:?}", t.elapsed());
    print!("{}", history_csv(&out.history));
    let sb = encode_stats(&stats);
    let b = Bundle { manifest: Manifest::new(&out.model, obj, &cfg, 1, &sb), model: out.model, stats: stats.clone() };
    let mut ctx = EvalContext::new(&eval_cfg, obj);
    match mode {
        ModelKind::Centralized => ctx.centralized = Some(&b),
        ModelKind::Distributed => ctx.distributed = Some(&b),
    }
    let schemes: Vec<Scheme> = if mode == ModelKind::Centralized { vec![Scheme::Oracle, Scheme::Centralized, Scheme::Naive, Scheme::Random] } else { vec![Scheme::Oracle, Scheme::Distributed, Scheme::Random] };
    for s in schemes {
        let r = evaluate(s, &eval, &ctx).unwrap();
        println!(
            "{:12} se {:.4} ee {:.4} viol {:.4} lvl {:?} binerr med {:?} p95 {:?}",
            s.as_str(), r.avg_sum_se, r.avg_sum_ee, r.qos_violation_prob, r.qos_violation_level,
            quantile(&r.binerr_cdf, 0.5), quantile(&r.binerr_cdf, 0.95)
        );
    }
}
