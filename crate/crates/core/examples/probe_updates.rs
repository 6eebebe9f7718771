//! Scratch probe: measure the quantizer's realized normalized variance on
//! actual client update vectors from a short training run.

use nacfl::fedcomv::{local_phase, MnistFederation, TrainingTask};
use nacfl::quantizer::quantize;
use nacfl::rng::substream;
use nacfl::workload::{load_mnist, partition_heterogeneous, subsample_stratified, MlpArch};
use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let (train, test) = load_mnist(&dir).unwrap();
    let mut rng = substream(0, &[1]);
    let frac = 6000.0 / train.len() as f64;
    let train = subsample_stratified(&train, frac, &mut rng);
    println!("train {} test {}", train.len(), test.len());
    let shards = partition_heterogeneous(&train, 10).unwrap();
    let task = MnistFederation {
        arch: MlpArch::mnist(),
        shards,
        train,
        test,
    };
    let mut w = task.arch.init_weights(&mut rng);
    let args: Vec<String> = std::env::args().collect();
    let eta0: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.07);
    let decay_every: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let start = std::time::Instant::now();
    // Long uncompressed run so updates reflect real dynamics; q and
    // accuracy sampled along the way.
    let max_rounds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    println!("eta0={eta0} decay_every={decay_every}");
    for round in 0..max_rounds {
        let eta = eta0 * 0.9f64.powi((round / decay_every) as i32);
        let mut agg = vec![0.0; task.dim()];
        let mut qs = [0.0f64; 4];
        let mut infn = 0.0;
        let mut l2 = 0.0;
        let measure = round % 20 == 0;
        for j in 0..10 {
            let mut crng = substream(7, &[2, round, j as u64]);
            let g = local_phase(&task, j, &w, eta, 2, 64, &mut crng);
            if measure {
                let norm_sq: f64 = g.iter().map(|v| v * v).sum();
                l2 += norm_sq.sqrt() / 10.0;
                infn += g.iter().fold(0.0f64, |a, v| a.max(v.abs())) / 10.0;
                for (bi, b) in [1u8, 2, 3, 8].iter().enumerate() {
                    let recon = quantize(&g, *b, &mut crng).reconstruct();
                    let err: f64 =
                        recon.iter().zip(&g).map(|(r, v)| (r - v) * (r - v)).sum();
                    qs[bi] += err / norm_sq / 10.0;
                }
            }
            for (a, v) in agg.iter_mut().zip(&g) {
                *a += v / 10.0;
            }
        }
        if measure {
            let acc = task.arch.accuracy(&w, &task.test);
            println!(
                "round {round}: q1={:.2} q2={:.3} q3={:.4} q8={:.6} inf/l2={:.4} acc={:.3} eta={:.4} [{:.1}s]",
                qs[0], qs[1], qs[2], qs[3], infn / l2, acc, eta,
                start.elapsed().as_secs_f64()
            );
            if acc >= 0.88 {
                println!("hit 88% at round {round}");
                break;
            }
        }
        for (wi, gi) in w.iter_mut().zip(&agg) {
            *wi -= eta * gi;
        }
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
}
