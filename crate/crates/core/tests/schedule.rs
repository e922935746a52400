//! Slope and τ/ρ estimation against closed forms, and the staged driver on
//! tiny models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use staged_core::growth::{GrowthKind, GrowthOp};
use staged_core::model::{param_count, InitOptions, Model, ModelConfig, TokenBatch};
use staged_core::optim::{AdamConfig, DecayShape, LrSchedule, TrainingState};
use staged_core::scaling::{effective_steps, predicted_loss, ScalingLawConstants};
use staged_core::schedule::{
    audit_run, estimate_slope, estimate_tau_rho, ls_slope, staged_train, LossCurve, StageEntry, StagePlan, StagedOptions,
    StagedTrainer,
};
use staged_core::train::{train_step, BatchSource};
use staged_core::Error;

/// Loss = 5 - 0.1·log10(C) + N(0, σ²). The least-squares slope has
/// standard deviation σ/√Sxx, so about 95% of trials land within two of
/// them.
#[test]
fn noisy_slope_within_two_sigma() {
    let sigma = 0.01;
    let window = 20;
    let noise = Normal::new(0.0, sigma).unwrap();
    let xs: Vec<f64> = (1..=window).map(|i| 6.0 + 0.05 * i as f64).collect();
    let mx = xs.iter().sum::<f64>() / window as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let bound = 2.0 * sigma / sxx.sqrt();
    let trials = 400;
    let mut inside = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .map(|&x| (10f64.powf(x), 5.0 - 0.1 * x + noise.sample(&mut rng)))
            .collect();
        let c = LossCurve::from_points(&pts).unwrap();
        if (estimate_slope(&c, window).unwrap() + 0.1).abs() <= bound {
            inside += 1;
        }
    }
    let frac = inside as f64 / trials as f64;
    assert!(frac >= 0.92, "{frac}");
}

#[test]
fn slope_uses_the_trailing_window() {
    let mut pts: Vec<(f64, f64)> = (1..=10).map(|i| (10f64.powi(i), 9.0 - 0.5 * i as f64)).collect();
    pts.extend((11..=20).map(|i| (10f64.powi(i), 4.0 - 0.02 * (i - 10) as f64)));
    let c = LossCurve::from_points(&pts).unwrap();
    assert!((estimate_slope(&c, 10).unwrap() + 0.02).abs() < 1e-12);
    assert_eq!(ls_slope(&[1.0, 1.0, 1.0], &[3.0, 4.0, 5.0]), 0.0);
}

/// Curves generated by the loss law for sizes N and 2N. The matched point
/// on the larger model's curve is where it reaches the pre-growth loss from
/// scratch, which is `effective_steps`.
#[test]
fn tau_rho_on_scaling_law_curves() {
    let c = ScalingLawConstants::default();
    let (n, batch, stride) = (1e7, 5e5, 10u64);
    let curve = |size: f64| {
        let pts: Vec<(f64, f64)> = (1..=20_000u64)
            .map(|i| {
                let s = (i * stride) as f64;
                (6.0 * size * batch * s, predicted_loss(size, s, &c).unwrap())
            })
            .collect();
        LossCurve::from_points(&pts).unwrap()
    };
    let (orig, target) = (curve(n), curve(2.0 * n));
    for pre_index in [199usize, 499, 1999] {
        let s_pre = ((pre_index as u64 + 1) * stride) as f64;
        let tr = estimate_tau_rho(&orig, &target, pre_index, 5).unwrap();
        let l_pre = predicted_loss(n, s_pre, &c).unwrap();
        let analytic = effective_steps(l_pre, 2.0 * n, &c).unwrap() / s_pre;
        assert!(analytic < 1.0);
        assert!((tr.rho - analytic).abs() <= stride as f64 / s_pre, "{} vs {analytic}", tr.rho);
        // dL/dlog10(C) = -α_S ln10 (S_c/S)^α_S, evaluated mid-window.
        let s_mid = s_pre - 2.0 * stride as f64;
        let d = -c.alpha_s * std::f64::consts::LN_10 * (c.s_c / s_mid).powf(c.alpha_s);
        assert!((tr.tau / d - 1.0).abs() < 0.01, "{} vs {d}", tr.tau);
    }
}

fn markov(vocab: usize, seed: u64) -> impl FnMut(u64) -> staged_core::Result<TokenBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let next: Vec<usize> = (0..vocab * vocab).map(|_| rng.gen_range(0..vocab)).collect();
    move |index: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed);
        let mut t = vec![r.gen_range(0..vocab), r.gen_range(0..vocab)];
        while t.len() < 4 * 16 {
            let k = t.len();
            let tok = if r.gen_bool(0.85) { next[t[k - 2] * vocab + t[k - 1]] } else { r.gen_range(0..vocab) };
            t.push(tok);
        }
        TokenBatch::new(4, 16, t)
    }
}

fn fresh(cfg: &ModelConfig, seed: u64) -> TrainingState<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::init(cfg.clone(), InitOptions::default(), &mut rng).unwrap();
    let sched = LrSchedule::new(50, 20_000, DecayShape::Linear, 3e-3).unwrap();
    TrainingState::new(model, sched, AdamConfig::default()).unwrap()
}

fn val_set(vocab: usize) -> Vec<TokenBatch> {
    let mut src = markov(vocab, 7);
    (0..4).map(|i| src.batch(1_000_000 + i).unwrap()).collect()
}

fn opts() -> StagedOptions {
    StagedOptions {
        cadence: 10,
        window: 10,
        max_stage_steps: 5000,
        min_stage_steps: 0,
        extend_to_compute: None,
    }
}

fn plan(base: ModelConfig, ops: &[GrowthKind], tau: f64, tau_opt: f64) -> StagePlan {
    let mut stages = vec![StageEntry {
        op: None,
        tau: tau_opt,
        grow_at_step: None,
    }];
    for &k in ops {
        stages.push(StageEntry {
            op: Some(GrowthOp::new(k).with_rho(0.7)),
            tau,
            grow_at_step: None,
        });
    }
    StagePlan { base, stages, tau_opt }
}

#[test]
fn single_stage_plan_is_plain_training() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let val = val_set(12);
    let p = plan(cfg.clone(), &[], -0.3, -0.3);
    let run = staged_train(&p, fresh(&cfg, 1), &mut markov(12, 7), &val, &opts(), 0).unwrap();
    assert!(run.events.is_empty());
    assert_eq!(run.decisions.len(), 1);
    assert_eq!(run.decisions[0].action, "stop");
    assert_eq!(run.steps, run.optimality_step);

    let mut baseline = fresh(&cfg, 1);
    let mut src = markov(12, 7);
    for i in 0..run.steps {
        train_step(&mut baseline, &src.batch(i).unwrap()).unwrap();
    }
    assert_eq!(baseline.model.params, run.state.model.params);
    assert_eq!(baseline.adam, run.state.adam);
}

#[test]
fn depth_plan_records_one_loss_preserving_event() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let val = val_set(12);
    let p = plan(cfg.clone(), &[GrowthKind::Depth2x], -0.5, -0.3);
    let run = staged_train(&p, fresh(&cfg, 2), &mut markov(12, 7), &val, &opts(), 0).unwrap();
    assert_eq!(run.events.len(), 1);
    let e = &run.events[0];
    assert!((e.loss_after - e.loss_before).abs() <= 1e-10 * e.loss_before);
    assert_eq!(e.clock_after, (e.clock_before as f64 * 0.7).round() as u64);
    assert_eq!(run.state.model.config.n_layers, 2);
    let grow = &run.decisions[0];
    assert!(grow.slope.unwrap() > grow.threshold);
    // No validation point before the decision had already crossed.
    for s in run.curve.samples.iter().filter(|s| s.stage_index == 0 && s.step < grow.step) {
        assert!(s.slope_estimate.map_or(true, |x| x <= -0.5));
    }
    let stop = run.decisions.last().unwrap();
    assert_eq!((stop.action.as_str(), stop.threshold), ("stop", -0.3));
}

#[test]
fn two_depth_doublings_quadruple_the_model() {
    let cfg = ModelConfig::new(1, 16, 2, 12, 16);
    let val = val_set(12);
    let p = plan(cfg.clone(), &[GrowthKind::Depth2x, GrowthKind::Depth2x], -0.5, -0.3);
    let run = staged_train(&p, fresh(&cfg, 3), &mut markov(12, 7), &val, &opts(), 0).unwrap();
    assert_eq!(run.events.len(), 2);
    assert_eq!(run.state.model.config.n_layers, 4);
    let ratio = param_count(&run.state.model.config, false) as f64 / param_count(&cfg, false) as f64;
    assert!((3.6..=4.0).contains(&ratio), "{ratio}");
    for e in &run.events {
        assert!((e.loss_after - e.loss_before).abs() <= 1e-10 * e.loss_before);
    }
}

#[test]
fn manual_growth_step() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let val = val_set(12);
    let mut p = plan(cfg.clone(), &[GrowthKind::Width2x], -0.5, -0.3);
    p.stages[1].grow_at_step = Some(120);
    let run = staged_train(&p, fresh(&cfg, 4), &mut markov(12, 7), &val, &opts(), 0).unwrap();
    assert_eq!(run.events[0].step, 120);
    assert_eq!(run.state.model.config.d_model, 16);
}

#[test]
fn unreachable_threshold_exceeds_budget() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let val = val_set(12);
    let p = plan(cfg.clone(), &[GrowthKind::Depth2x], -1e-6, -0.3);
    let o = StagedOptions {
        max_stage_steps: 200,
        ..opts()
    };
    match staged_train(&p, fresh(&cfg, 5), &mut markov(12, 7), &val, &o, 0) {
        Err(Error::BudgetExceeded { stage, budget, threshold, .. }) => {
            assert_eq!((stage, budget, threshold), (0, 200, -1e-6));
        }
        other => panic!("{:?}", other.map(|r| r.steps)),
    }
}

#[test]
fn mismatched_base_is_rejected() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let p = plan(ModelConfig::new(2, 8, 2, 12, 16), &[], -0.3, -0.3);
    let r = staged_train(&p, fresh(&cfg, 0), &mut markov(12, 7), &val_set(12), &opts(), 0);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn audit_accepts_a_clean_run_and_catches_tampering() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let val = val_set(12);
    let p = plan(cfg.clone(), &[GrowthKind::Depth2x], -0.5, -0.3);
    let run = staged_train(&p, fresh(&cfg, 2), &mut markov(12, 7), &val, &opts(), 0).unwrap();
    let audit = audit_run(&p, &run.curve, &run.decisions, &run.events, &opts(), 1e-10);
    assert!(audit.passed(), "{:?}", audit.problems);
    assert_eq!(audit.max_overshoot, 0);

    let mut events = run.events.clone();
    events[0].clock_after += 1;
    assert!(!audit_run(&p, &run.curve, &run.decisions, &events, &opts(), 1e-10).passed());

    // Pretend the growth happened two validation points late.
    let mut decisions = run.decisions.clone();
    let mut events = run.events.clone();
    decisions[0].step += 20;
    events[0].step += 20;
    let late = audit_run(&p, &run.curve, &decisions, &events, &opts(), 1e-10);
    assert_eq!(late.max_overshoot, 20);
    assert!(!late.passed());

    let mut decisions = run.decisions.clone();
    decisions.pop();
    assert!(!audit_run(&p, &run.curve, &decisions, &run.events, &opts(), 1e-10).passed());
}

#[test]
fn minimum_stage_length_delays_decisions() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let val = val_set(12);
    let p = plan(cfg.clone(), &[GrowthKind::Depth2x], -0.5, -0.3);
    let o = StagedOptions {
        min_stage_steps: 150,
        ..opts()
    };
    let run = staged_train(&p, fresh(&cfg, 2), &mut markov(12, 7), &val, &o, 0).unwrap();
    let mut start = 0;
    for d in &run.decisions {
        assert!(d.step - start >= 150, "{d:?}");
        start = d.step;
    }
    assert!(audit_run(&p, &run.curve, &run.decisions, &run.events, &o, 1e-10).passed());
    // Judged against a longer minimum, the first decision came too early.
    let strict = StagedOptions {
        min_stage_steps: run.decisions[0].step + 10,
        ..opts()
    };
    assert!(!audit_run(&p, &run.curve, &run.decisions, &run.events, &strict, 1e-10).passed());
    // Training is identical up to the first decision, so without the
    // minimum that decision cannot come later.
    let free = staged_train(&p, fresh(&cfg, 2), &mut markov(12, 7), &val, &opts(), 0).unwrap();
    assert!(free.decisions[0].step <= run.decisions[0].step);
}

#[test]
fn resumed_trainer_matches_an_uninterrupted_one() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let val = val_set(12);
    let p = plan(cfg.clone(), &[GrowthKind::Width2x, GrowthKind::Depth2x], -0.5, -0.3);
    let p = StagePlan {
        stages: p
            .stages
            .into_iter()
            .map(|mut e| {
                e.op = e.op.map(|o| staged_core::growth::GrowthOp { noise: 0.01, ..o });
                e
            })
            .collect(),
        ..p
    };
    let full = staged_train(&p, fresh(&cfg, 6), &mut markov(12, 7), &val, &opts(), 11).unwrap();
    assert_eq!(full.events.len(), 2);
    // Stop inside the second stage, then continue from a copy.
    let mid = (full.events[0].step + full.events[1].step) / 2;
    let mut t = StagedTrainer::new(&p, fresh(&cfg, 6), &val, opts(), 11).unwrap();
    t.run_until(mid, &mut markov(12, 7), &val).unwrap();
    assert_eq!(t.progress.stage, 1);
    let (state, progress) = (t.state.clone(), t.progress.clone());
    drop(t);
    let resumed = StagedTrainer::resume(&p, state, progress, opts(), 11)
        .unwrap()
        .run(&mut markov(12, 7), &val, &mut |_, _| Ok(()))
        .unwrap();
    assert_eq!(resumed.decisions, full.decisions);
    assert_eq!(resumed.events, full.events);
    assert_eq!(resumed.curve, full.curve);
    assert_eq!(resumed.state.model.params, full.state.model.params);
}

#[test]
fn monitor_can_abort() {
    let cfg = ModelConfig::new(1, 8, 2, 12, 16);
    let val = val_set(12);
    let p = plan(cfg.clone(), &[], -0.3, -0.3);
    let r = StagedTrainer::new(&p, fresh(&cfg, 1), &val, opts(), 0).unwrap().run(
        &mut markov(12, 7),
        &val,
        &mut |s, _| if s.step >= 30 { Err(Error::Aborted("enough".into())) } else { Ok(()) },
    );
    assert_eq!(r.err(), Some(Error::Aborted("enough".into())));
}
