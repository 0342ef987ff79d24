use patchlab::numeric::Tensor;
use patchlab::rng::Rng;
use patchlab::translate::{train_translator_pair, TranslatorConfig};

fn gaussian_sample(rng: &mut Rng, mean: f64, n: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![mean + rng.normal()]).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let identity_coef: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.004);
    let steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3000);
    let disc_lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.02);
    let batch_size: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(64);
    let cycle_coef: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(10.0);

    for seed in 0..3u64 {
        let mut rng = Rng::derive(seed, "gaussian-task");
        let data_a = gaussian_sample(&mut rng, 0.0, 4096);
        let data_b = gaussian_sample(&mut rng, 2.0, 4096);
        let config = TranslatorConfig {
            identity_coef,
            lr,
            steps,
            seed,
            disc_lr,
            batch_size,
            cycle_coef,
            ..TranslatorConfig::default()
        };
        let t0 = std::time::Instant::now();
        let pair = train_translator_pair(&data_a, &data_b, 0, 1, &config).unwrap();
        let elapsed = t0.elapsed().as_millis();
        let fwd = pair.forward_translator();
        // held-out grid [-2, 4]
        let mut max_err: f64 = 0.0;
        let mut report = Vec::new();
        let mut x = -2.0;
        while x <= 4.0 + 1e-9 {
            let y = fwd.apply(&[x])[0];
            let err = (y - (x + 2.0)).abs();
            max_err = max_err.max(err);
            report.push((x, y));
            x += 0.5;
        }
        let (g0, g1) = (report[0].1, report[report.len() - 1].1);
        let last = pair.trace.last().unwrap();
        println!(
            "seed {seed}: max_err {max_err:.4}  G(-2)={g0:.3} G(4)={g1:.3}  gen_loss {:.3} disc {:.3} cyc {:.4}  [{elapsed} ms]",
            last.0, last.1, last.2
        );
    }
}
