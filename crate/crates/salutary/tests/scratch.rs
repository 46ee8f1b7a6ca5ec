use salutary::data::{split, synthetic_blobs, LabelOverrides};
use salutary::influence::{
    add_one_in_actual, build_context, influence_score, salutary_label, CgConfig,
};
use salutary::model::{train, TrainConfig};

#[test]
#[ignore]
fn probe_fixtures() {
    // Probe A: top-scoring pool point should have positive predicted and actual decrease.
    for sep in [0.8, 1.0, 1.2, 1.5] {
        for n_train in [15usize, 25, 40] {
            for seed in [50u64, 51, 52] {
                let ds = synthetic_blobs(100, 2, 2, sep, seed).unwrap();
                let s = split(&ds, (0.5, 0.25, 0.25), seed).unwrap();
                let train_idx: Vec<usize> = s.train.iter().copied().take(n_train).collect();
                let pool: Vec<usize> = s.train.iter().copied().skip(n_train).take(25).collect();
                let cfg = TrainConfig::default();
                let model = train(&ds, &train_idx, None, &cfg, None).unwrap();
                let ctx = build_context(
                    &model,
                    &ds,
                    &train_idx,
                    &LabelOverrides::new(),
                    &s.validation,
                    &CgConfig::for_param_count(model.param_count()),
                )
                .unwrap();
                let best = pool
                    .iter()
                    .map(|&j| {
                        (
                            j,
                            influence_score(&ctx, ds.row(j), ds.label(j), train_idx.len())
                                .unwrap(),
                        )
                    })
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                let actual = add_one_in_actual(
                    &ds,
                    &train_idx,
                    None,
                    &s.validation,
                    ds.row(best.0),
                    ds.label(best.0),
                    &cfg,
                )
                .unwrap();
                println!(
                    "A sep={sep} n={n_train} seed={seed}: top pred {:.3e} actual {:.3e}",
                    best.1, actual
                );
            }
        }
    }

    // Probe B: brute-force label agreement on 30-train C=3 fixtures.
    for sep in [0.8, 1.0, 1.4, 1.8] {
        for lambda in [1e-3, 1e-2] {
            for seed in [52u64, 53, 54] {
                let ds = synthetic_blobs(60, 3, 2, sep, seed).unwrap();
                let s = split(&ds, (0.6, 0.3, 0.1), seed).unwrap();
                let train_idx: Vec<usize> = s.train.iter().copied().take(30).collect();
                let pool: Vec<usize> = s.train.iter().copied().skip(30).take(10).collect();
                let cfg = TrainConfig {
                    lambda,
                    ..TrainConfig::default()
                };
                let model = train(&ds, &train_idx, None, &cfg, None).unwrap();
                let ctx = build_context(
                    &model,
                    &ds,
                    &train_idx,
                    &LabelOverrides::new(),
                    &s.validation,
                    &CgConfig::for_param_count(model.param_count()),
                )
                .unwrap();
                let mut matches = 0;
                for &j in &pool {
                    let (pred, _) = salutary_label(&ctx, ds.row(j), train_idx.len()).unwrap();
                    let mut best = (0usize, f64::NEG_INFINITY);
                    for c in 0..3 {
                        let actual = add_one_in_actual(
                            &ds,
                            &train_idx,
                            None,
                            &s.validation,
                            ds.row(j),
                            c,
                            &cfg,
                        )
                        .unwrap();
                        if actual > best.1 {
                            best = (c, actual);
                        }
                    }
                    if best.0 == pred {
                        matches += 1;
                    }
                }
                println!("B sep={sep} lambda={lambda} seed={seed}: agreement {matches}/10");
            }
        }
    }
}
