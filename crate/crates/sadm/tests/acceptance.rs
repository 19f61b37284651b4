//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line with its measured runtime. Trained models are cached and shared
//! between the criteria that need them (5, 6, 7), so training cost is paid
//! once and attributed to criterion 5.

use sadm::config::Config;
use sadm::datasets::{Dataset, DatasetSpec};
use sadm::diffusion::{NoiseSchedule, T_MAX};
use sadm::experiment::evaluate_state;
use sadm::metrics::sliced_wasserstein;
use sadm::rng::StreamRng;
use sadm::sampler::{heun_ode_sample, SamplerConfig};
use sadm::structure::RelationFn;
use sadm::tensor::Tensor;
use sadm::theory::{
    jensen_bound_check, jensen_invariant_grid, objective_equivalence_check,
    score_decomposition_check, ScoreDecompParams,
};
use sadm::trainer::{
    run_finetune, run_training, sadm_loss_grad_check, FreezeMask, Trainer, TrainMode, TrainState,
};
use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn report(criterion: u32, pass: bool, detail: &str, started: Instant) {
    let line = format!(
        "[criterion {criterion}] {} — {detail} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    println!("{line}");
    assert!(pass, "{line}");
}

/// Default-config experiment setup for a given mode and seed.
fn config_for(mode: TrainMode, seed: u64) -> Config {
    let mut config = Config::default();
    config.seed = seed;
    config.trainer.seed = seed;
    config.trainer.mode = mode;
    config.dataset.seed = seed;
    config.sampler.seed = seed;
    config
}

static CACHE: Mutex<Option<HashMap<(&'static str, u64), TrainState>>> = Mutex::new(None);

fn mode_key(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::InstanceOnly => "instance_only",
        TrainMode::StructureGuided => "structure_guided",
        TrainMode::FullSadm => "full_sadm",
    }
}

/// Train (or fetch) the default-config model for (mode, seed).
fn trained(mode: TrainMode, seed: u64) -> TrainState {
    let mut guard = CACHE.lock().unwrap();
    let map = guard.get_or_insert_with(HashMap::new);
    if let Some(state) = map.get(&(mode_key(mode), seed)) {
        return state.clone();
    }
    let config = config_for(mode, seed);
    let dataset = Dataset::open(&config.dataset).unwrap();
    let mut trainer =
        Trainer::with_model_spec(config.trainer.clone(), &dataset, &config.model).unwrap();
    trainer.run(|_| Ok(())).unwrap();
    map.insert((mode_key(mode), seed), trainer.state.clone());
    trainer.state
}

fn eval_sliced_w(state: &TrainState, config: &Config, dataset: &Dataset) -> f64 {
    evaluate_state(state, dataset, config).unwrap().sliced_w
}

// 1. Full training loss gradient vs central finite differences over all
//    denoiser and encoder coordinates (4-sample d=2 batch), < 1e-4.
#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let err = sadm_loss_grad_check(&sadm::models::ModelSpec::default(), 7, 1e-5).unwrap();
    let pass = err < 1e-4 && started.elapsed().as_secs() < 30;
    report(
        1,
        pass,
        &format!("max relative error {err:.3e} (< 1e-4)"),
        started,
    );
}

// 2. Forward-process identities: marginal composition to 1e-12 on a
//    100-point (s,t) grid, Monte Carlo marginal match within 3 SE at 1e5.
#[test]
fn criterion_2_forward_process_identities() {
    let started = Instant::now();
    let schedule = NoiseSchedule::default();

    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    let grid: Vec<f64> = (0..100)
        .map(|i| schedule.t_min + (T_MAX - schedule.t_min) * i as f64 / 99.0)
        .collect();
    for (i, &s) in grid.iter().enumerate() {
        for &t in &grid[i + 1..] {
            let (ratio, var) = schedule.transition_params(s, t).unwrap();
            let lhs = ratio * ratio * schedule.sigma(s).powi(2) + var;
            worst = worst.max((lhs - schedule.sigma(t).powi(2)).abs());
            pairs += 1;
        }
    }
    let composition_ok = worst < 1e-12;

    // two-step vs direct marginal over 1e5 draws
    let n = 100_000;
    let (s, t) = (0.25, 0.8);
    let (ratio, var) = schedule.transition_params(s, t).unwrap();
    let mut rng = StreamRng::new(12, 500);
    let x0 = 0.8;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let xs = schedule.alpha(s) * x0 + schedule.sigma(s) * rng.standard_normal();
        let xt = ratio * xs + var.sqrt() * rng.standard_normal();
        sum += xt;
        sumsq += xt * xt;
    }
    let mean = sum / n as f64;
    let v = sumsq / n as f64 - mean * mean;
    let want_mean = schedule.alpha(t) * x0;
    let want_var = schedule.sigma(t).powi(2);
    let se_mean = (want_var / n as f64).sqrt();
    let se_var = (2.0 * want_var * want_var / (n as f64 - 1.0)).sqrt();
    let mc_ok =
        (mean - want_mean).abs() < 3.0 * se_mean && (v - want_var).abs() < 3.0 * se_var;

    let pass = composition_ok && mc_ok && started.elapsed().as_secs() < 10;
    report(
        2,
        pass,
        &format!("composition max err {worst:.2e} over {pairs} pairs; MC marginal within 3 SE"),
        started,
    );
}

// 3. Minimax direction on a frozen batch at lr 1e-3: 5 discriminator steps
//    weakly increase the structural loss, then 5 generator steps weakly
//    decrease the combined loss, for 10/10 seeds.
#[test]
fn criterion_3_minimax_direction() {
    let started = Instant::now();
    let mut ok_seeds = 0;
    for seed in 0..10u64 {
        let mut config = config_for(TrainMode::FullSadm, seed);
        config.trainer.lr_theta = 1e-3;
        config.trainer.lr_phi = 1e-3;
        config.trainer.phase1_steps = 0; // jump straight to the adversarial phase
        config.trainer.phase1_tolerance = None;
        config.trainer.batch_size = 16;
        let dataset = Dataset::open(&config.dataset).unwrap();
        let mut trainer =
            Trainer::with_model_spec(config.trainer.clone(), &dataset, &config.model).unwrap();
        // enter the adversarial phase directly (phase1_steps = 0)
        trainer.step().unwrap();

        // frozen batch for the directional checks
        let batch = trainer.draw_batch().unwrap();

        let mut disc_ok = true;
        let mut last = -f64::INFINITY;
        for _ in 0..5 {
            let (_, s) = trainer.discriminator_step(&batch).unwrap();
            if s < last - 1e-12 {
                disc_ok = false;
            }
            last = s;
        }
        let mut gen_ok = true;
        let mut last_total = f64::INFINITY;
        for _ in 0..5 {
            let r = trainer.generator_step(&batch).unwrap();
            if r.total > last_total + 1e-12 {
                gen_ok = false;
            }
            last_total = r.total;
        }
        if disc_ok && gen_ok {
            ok_seeds += 1;
        }
    }
    let pass = ok_seeds == 10 && started.elapsed().as_secs() < 30;
    report(3, pass, &format!("{ok_seeds}/10 seeds monotone"), started);
}

// 4. Theory suite: Jensen chain on all 24 grid configurations, score
//    decomposition tolerances, objective equivalence.
#[test]
fn criterion_4_theory_suite() {
    let started = Instant::now();
    let schedule = NoiseSchedule::default();

    let zero = |_x: f64, _t: f64| 0.0;
    let mut jensen_ok = 0;
    let grid = jensen_invariant_grid(17);
    for p in &grid {
        let r = jensen_bound_check(&schedule, p, &zero).unwrap();
        if r.passed() {
            jensen_ok += 1;
        }
    }

    let sd = score_decomposition_check(&schedule, &ScoreDecompParams::default()).unwrap();
    let sd_ok = sd.unconditional_error < 1e-10 && sd.conditional_residual < 1e-4;

    let mut rng = StreamRng::new(4, 501);
    let a = Tensor::new(vec![5, 3], rng.normal_vec(15)).unwrap();
    let b = Tensor::new(vec![5, 3], rng.normal_vec(15)).unwrap();
    let eq = objective_equivalence_check(
        &a,
        &b,
        RelationFn::InnerProduct,
        sadm::structure::DistanceFn::L2Sq,
    )
    .unwrap();
    let eq_ok = eq < 1e-10;

    let pass =
        jensen_ok == grid.len() && sd_ok && eq_ok && started.elapsed().as_secs() < 300;
    report(
        4,
        pass,
        &format!(
            "jensen {jensen_ok}/{} configs; score decomp {:.1e}/{:.1e}; equivalence {eq:.1e}",
            grid.len(),
            sd.unconditional_error,
            sd.conditional_residual
        ),
        started,
    );
}

// 5. Ablation trend on eight_gaussians with the default config over 5
//    seeds: instance_only >= structure_guided >= full_sadm in at least 4 of
//    5 seeds each, and mean full_sadm sliced-W < 0.15.
#[test]
fn criterion_5_ablation_trend() {
    let started = Instant::now();
    let mut sw: HashMap<&'static str, Vec<f64>> = HashMap::new();
    for &seed in &SEEDS {
        for mode in [
            TrainMode::InstanceOnly,
            TrainMode::StructureGuided,
            TrainMode::FullSadm,
        ] {
            let config = config_for(mode, seed);
            let dataset = Dataset::open(&config.dataset).unwrap();
            let state = trained(mode, seed);
            let value = eval_sliced_w(&state, &config, &dataset);
            sw.entry(mode_key(mode)).or_default().push(value);
        }
    }
    let inst = &sw["instance_only"];
    let sg = &sw["structure_guided"];
    let full = &sw["full_sadm"];
    let wins_sg = inst
        .iter()
        .zip(sg.iter())
        .filter(|(a, b)| a >= b)
        .count();
    let wins_full = sg
        .iter()
        .zip(full.iter())
        .filter(|(a, b)| a >= b)
        .count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let full_mean = mean(full);
    let pass = wins_sg >= 4 && wins_full >= 4 && full_mean < 0.15;
    report(
        5,
        pass,
        &format!(
            "sliced-W means: instance {:.4}, structure {:.4}, full {:.4}; wins {wins_sg}/5 and {wins_full}/5; full per-seed {:?}",
            mean(inst),
            mean(sg),
            full_mean,
            full.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
        started,
    );
}

// 6. Heatmap direction: frobenius gap of full_sadm <= instance_only,
//    averaged over the 5 seeds, on 8-sample batches at t = 0.5.
#[test]
fn criterion_6_heatmap_direction() {
    let mut gaps: HashMap<&'static str, Vec<f64>> = HashMap::new();
    let mut states = Vec::new();
    for &seed in &SEEDS {
        for mode in [TrainMode::InstanceOnly, TrainMode::FullSadm] {
            states.push((mode, seed, trained(mode, seed)));
        }
    }
    // time only the heatmap work, not the shared training
    let started = Instant::now();
    for (mode, seed, state) in &states {
        let config = config_for(*mode, *seed);
        let dataset = Dataset::open(&config.dataset).unwrap();
        let report = sadm::experiment::heatmap_for_state(state, &dataset, &config)
            .unwrap()
            .expect("labeled dataset");
        gaps.entry(mode_key(*mode)).or_default().push(report.frobenius_gap);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let full = mean(&gaps["full_sadm"]);
    let inst = mean(&gaps["instance_only"]);
    let pass = full <= inst && started.elapsed().as_secs() < 120;
    report(
        6,
        pass,
        &format!("mean gap full_sadm {full:.4} <= instance_only {inst:.4}"),
        started,
    );
}

// 7. Fine-tuning direction: the fine-tuned model beats the un-fine-tuned
//    pretrained model on target sliced-W in >= 4 of 5 seeds, for both
//    targets and both freeze modes.
#[test]
fn criterion_7_finetuning_direction() {
    let pretrained: Vec<(u64, TrainState)> = SEEDS
        .iter()
        .map(|&s| (s, trained(TrainMode::FullSadm, s)))
        .collect();
    let started = Instant::now();

    let targets = [
        ("rotated_eight_gaussians", DatasetSpec::rotated_eight_gaussians(22.5)),
        ("two_moons", DatasetSpec::two_moons()),
    ];
    let mut all_pass = true;
    let mut details = Vec::new();
    for (target_name, target_spec) in &targets {
        for mask in [FreezeMask::Full, FreezeMask::BiasesOnly] {
            let mut wins = 0;
            for (seed, pre) in &pretrained {
                let mut config = config_for(TrainMode::FullSadm, *seed);
                config.finetune.target = target_spec.clone();
                config.finetune.target.seed = *seed;
                let mut ft = config.finetune_train_config();
                ft.freeze_mask = mask;
                let target = Dataset::open(&config.finetune.target).unwrap();
                let before = eval_sliced_w(pre, &config, &target);
                let (tuned, _) = run_finetune(&ft, &target, pre).unwrap();
                let after = eval_sliced_w(&tuned, &config, &target);
                if after < before {
                    wins += 1;
                }
            }
            let label = format!("{target_name}/{mask:?}: {wins}/5");
            if wins < 4 {
                all_pass = false;
            }
            details.push(label);
        }
    }
    let pass = all_pass && started.elapsed().as_secs() < 900;
    report(7, pass, &details.join("; "), started);
}

// 8. Heun sampler with the analytic Gaussian-score oracle: target moments
//    within 3 SE at 1e4 samples, and ~4x error reduction per step halving.
#[test]
fn criterion_8_sampler_correctness() {
    let started = Instant::now();
    let schedule = NoiseSchedule::default();
    let (mu, s2) = ([2.0, -1.0], 1.5 * 1.5);
    let oracle = move |x: &Tensor, t: f64| {
        let a = schedule.alpha(t);
        let var = a * a * s2 + schedule.sigma(t).powi(2);
        let data: Vec<f64> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &xv)| {
                let m = mu[i % 2];
                m + a * s2 * (xv - a * m) / var
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    };

    let n = 10_000;
    let out = heun_ode_sample(&oracle, &schedule, &SamplerConfig::heun(35, 9), n, 2).unwrap();
    let mut mean = [0.0f64; 2];
    for i in 0..n {
        mean[0] += out.samples.row(i)[0];
        mean[1] += out.samples.row(i)[1];
    }
    mean[0] /= n as f64;
    mean[1] /= n as f64;
    let mut var = [0.0f64; 2];
    let mut cov = 0.0f64;
    for i in 0..n {
        let a = out.samples.row(i)[0] - mean[0];
        let b = out.samples.row(i)[1] - mean[1];
        var[0] += a * a;
        var[1] += b * b;
        cov += a * b;
    }
    var[0] /= n as f64 - 1.0;
    var[1] /= n as f64 - 1.0;
    cov /= n as f64 - 1.0;
    let se_mean = (s2 / n as f64).sqrt();
    let se_var = s2 * (2.0 / (n as f64 - 1.0)).sqrt();
    let se_cov = s2 / (n as f64).sqrt();
    let moments_ok = (mean[0] - mu[0]).abs() < 3.0 * se_mean
        && (mean[1] - mu[1]).abs() < 3.0 * se_mean
        && (var[0] - s2).abs() < 3.0 * se_var
        && (var[1] - s2).abs() < 3.0 * se_var
        && cov.abs() < 3.0 * se_cov;

    let endpoint = |intervals: usize| {
        heun_ode_sample(
            &oracle,
            &schedule,
            &SamplerConfig::heun(2 * intervals - 1, 11),
            8,
            2,
        )
        .unwrap()
        .samples
    };
    let x10 = endpoint(10);
    let x20 = endpoint(20);
    let x40 = endpoint(40);
    let max_diff = |a: &Tensor, b: &Tensor| {
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    let ratio = max_diff(&x10, &x20) / max_diff(&x20, &x40);
    let order_ok = ratio > 3.0 && ratio < 5.5;

    let pass = moments_ok && order_ok && started.elapsed().as_secs() < 60;
    report(
        8,
        pass,
        &format!(
            "moments within 3 SE (mean [{:.3},{:.3}], var [{:.3},{:.3}]); halving ratio {ratio:.2}",
            mean[0], mean[1], var[0], var[1]
        ),
        started,
    );
}

// 9. Reproducibility: identical (config, seed) gives byte-identical run
//    logs and checkpoints; a checkpoint resume matches the uninterrupted
//    run row-for-row.
#[test]
fn criterion_9_reproducibility() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.seed = 23;
    config.trainer.seed = 23;
    config.dataset.seed = 23;
    config.sampler.seed = 23;
    config.trainer.phase1_steps = 60;
    config.trainer.phase1_tolerance = None;
    config.trainer.adversarial_rounds = 1;
    config.trainer.steps_per_round_phi = 10;
    config.trainer.steps_per_round_theta = 20;
    config.trainer.batch_size = 8;
    config.eval.n_samples = 64;
    config.eval.n_projections = 16;
    config.sampler.nfe = 8;

    let run_dir = |name: &str| tmp.path().join(name);
    for name in ["a", "b"] {
        sadm::experiment::run_train_experiment(&run_dir(name), &config, None, None).unwrap();
    }
    let logs_equal = std::fs::read(run_dir("a").join("train_log.csv")).unwrap()
        == std::fs::read(run_dir("b").join("train_log.csv")).unwrap();
    let ckpts_equal = std::fs::read(run_dir("a").join("checkpoint.bin")).unwrap()
        == std::fs::read(run_dir("b").join("checkpoint.bin")).unwrap();

    // interrupt at step 30, resume, compare to the uninterrupted run
    let split = run_dir("split");
    sadm::experiment::run_train_experiment(&split, &config, None, Some(30)).unwrap();
    sadm::experiment::run_train_experiment(
        &split,
        &config,
        Some(&split.join("checkpoint.bin")),
        None,
    )
    .unwrap();
    let resume_equal = std::fs::read(run_dir("a").join("train_log.csv")).unwrap()
        == std::fs::read(split.join("train_log.csv")).unwrap();
    let resume_ckpt_equal = std::fs::read(run_dir("a").join("checkpoint.bin")).unwrap()
        == std::fs::read(split.join("checkpoint.bin")).unwrap();

    let pass = logs_equal && ckpts_equal && resume_equal && resume_ckpt_equal;
    report(
        9,
        pass,
        &format!(
            "identical runs: logs {logs_equal}, checkpoints {ckpts_equal}; resume: log {resume_equal}, checkpoint {resume_ckpt_equal}"
        ),
        started,
    );
}
