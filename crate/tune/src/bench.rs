use patchlab::coupled::{sample_dataset, CoupledWorld, WorldParams};
use patchlab::invariance::{prediction_features, variational_mi_estimate, HeadConfig};
use patchlab::objectives::ConsistencyConfig;
use patchlab::train::{train_classifier, AugmentationSource, MethodKind, TrainConfig};
use patchlab::translate::analytic_translators;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(30);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let lambda: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(10.0);
    let hidden: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(16);
    let eta: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let latents: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(24);
    let dim: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(8);
    let rho: f64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(0.98);
    let class_sep: f64 = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let latent_scale: f64 = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(0.35);
    let wd: f64 = args.get(12).map(|s| s.parse().unwrap()).unwrap_or(0.0);

    let mut params = WorldParams::new(2, 2, latents, dim, 7);
    params.class_separation = class_sep;
    params.latent_scale = latent_scale;
    let world = CoupledWorld::generate(params).unwrap();
    let translators = analytic_translators(&world);

    for method_name in ["erm", "gdro", "sgdro", "camel", "pairing", "heuristic"] {
        let mut robusts = Vec::new();
        let mut gaps = Vec::new();
        let mut aggs = Vec::new();
        let mut mis = Vec::new();
        for seed in 0..3u64 {
            let split = sample_dataset(&world, n, rho, 100 + seed).unwrap();
            let method = match method_name {
                "erm" => MethodKind::Erm,
                "gdro" => MethodKind::Gdro,
                "sgdro" => MethodKind::Sgdro,
                "camel" => MethodKind::Camel {
                    consistency: ConsistencyConfig::new(lambda, 0.0).unwrap(),
                    source: AugmentationSource::Translators(translators.clone()),
                },
                "pairing" => MethodKind::Camel {
                    consistency: ConsistencyConfig::new(lambda, 0.0).unwrap(),
                    source: AugmentationSource::SubgroupPairing,
                },
                "heuristic" => MethodKind::Camel {
                    consistency: ConsistencyConfig::new(lambda, 0.0).unwrap(),
                    source: AugmentationSource::Heuristic { sigma: 0.2, jitter: 0.1 },
                },
                _ => unreachable!(),
            };
            let cfg = TrainConfig {
                hidden: vec![hidden],
                lr,
                epochs,
                batch_size: 64,
                seed,
                eta,
                adjustment: 1.0,
                weight_decay: wd,
                ..TrainConfig::default()
            };
            let t0 = std::time::Instant::now();
            let out = train_classifier(&split, &method, &cfg).unwrap();
            let best = &out.epochs[out.best_epoch];
            let (features, labels) = prediction_features(&out.best_model, &split.test).unwrap();
            let mi = variational_mi_estimate(&features, &labels, None, 2, 2, &HeadConfig { seed, ..HeadConfig::default() }).unwrap();
            robusts.push(best.test.robust);
            gaps.push(best.test.max_gap());
            aggs.push(best.test.aggregate);
            mis.push(mi);
            eprintln!(
                "  {method_name} seed {seed}: robust {:.3} gap {:.3} agg {:.3} mi {:.3} best_ep {} [{} ms]",
                best.test.robust, best.test.max_gap(), best.test.aggregate, mi, out.best_epoch,
                t0.elapsed().as_millis(),
            );
        }
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "{method_name}: robust {:.3} gap {:.3} agg {:.3} mi {:.3}",
            mean(&robusts), mean(&gaps), mean(&aggs), mean(&mis)
        );
    }
}
