use sadm::datasets::{Dataset, DatasetSpec};
use sadm::trainer::{Trainer, TrainConfig, TrainMode};
use std::time::Instant;

#[test]
#[ignore]
fn bench_generator_step() {
    let ds = Dataset::open(&DatasetSpec::eight_gaussians()).unwrap();
    for mode in [TrainMode::InstanceOnly, TrainMode::StructureGuided] {
        let cfg = TrainConfig {
            mode,
            phase1_steps: 100000,
            phase1_tolerance: None,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(cfg, &ds).unwrap();
        // warmup
        for _ in 0..50 {
            tr.step().unwrap();
        }
        let start = Instant::now();
        let n = 2000;
        for _ in 0..n {
            tr.step().unwrap();
        }
        println!(
            "{mode:?}: {:.3} ms/step",
            start.elapsed().as_secs_f64() * 1000.0 / n as f64
        );
    }
}
