use std::path::Path;

use staged_core::growth::{GrowthKind, GrowthOp};
use staged_core::model::ModelConfig;
use staged_core::optim::{AdamConfig, DecayShape, LrSchedule};
use staged_core::schedule::{StageEntry, StagePlan, StagedOptions};
use staged_harness::experiment::{
    read_curve, resume_staged, run_dir, run_experiment, run_staged, Dataset, DataSpec, DivergenceSpec,
    ExperimentSpec, RunContext, RunManifest, RunSpec, RunStatus, TrainSpec,
};
use staged_harness::report::write_report;
use staged_harness::synthetic::MarkovConfig;

fn data() -> DataSpec {
    DataSpec::Markov(MarkovConfig {
        vocab: 12,
        ..MarkovConfig::default()
    })
}

fn train() -> TrainSpec {
    TrainSpec {
        batch: 4,
        seq: 16,
        val_batches: 4,
        schedule: LrSchedule::new(20, 3000, DecayShape::Linear, 3e-3).unwrap(),
        optimizer: AdamConfig::default(),
    }
}

fn options() -> StagedOptions {
    StagedOptions {
        cadence: 10,
        window: 10,
        max_stage_steps: 3000,
        min_stage_steps: 0,
        extend_to_compute: None,
    }
}

fn plan(layers: usize, ops: &[GrowthKind]) -> StagePlan {
    let mut stages = vec![StageEntry {
        op: None,
        tau: -0.3,
        grow_at_step: None,
    }];
    stages.extend(ops.iter().map(|&k| StageEntry {
        op: Some(GrowthOp::new(k).with_rho(0.7)),
        tau: -0.5,
        grow_at_step: None,
    }));
    StagePlan {
        base: ModelConfig::new(layers, 8, 2, 12, 16),
        stages,
        tau_opt: -0.3,
    }
}

fn spec(runs: Vec<RunSpec>, baseline: Option<&str>) -> ExperimentSpec {
    ExperimentSpec {
        name: "tiny".into(),
        seeds: vec![0, 1],
        data: data(),
        train: train(),
        options: options(),
        runs,
        baseline: baseline.map(str::to_string),
        extend_factor: 1.5,
        divergence: DivergenceSpec::default(),
        loss_tolerance: 1e-6,
        checkpoint_every: None,
        dynamics: None,
    }
}

fn staged_spec() -> ExperimentSpec {
    spec(
        vec![
            RunSpec {
                name: "baseline".into(),
                plan: plan(2, &[]),
            },
            RunSpec {
                name: "depth".into(),
                plan: plan(1, &[GrowthKind::Depth2x]),
            },
        ],
        Some("baseline"),
    )
}

fn manifest(out: &Path, run: &str, seed: u64) -> RunManifest {
    RunManifest::read(&run_dir(out, run, seed).join("manifest.json")).unwrap()
}

#[test]
fn baseline_only_spec_has_no_growth() {
    let out = tempfile::tempdir().unwrap();
    let s = spec(
        vec![RunSpec {
            name: "baseline".into(),
            plan: plan(1, &[]),
        }],
        Some("baseline"),
    );
    let report = run_experiment(&s, out.path()).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(!report.failed());
    for seed in [0, 1] {
        let m = manifest(out.path(), "baseline", seed);
        assert!(m.events.is_empty());
        assert_eq!(m.status, RunStatus::Completed);
        assert!(m.audit.passed(), "{:?}", m.audit.problems);
        assert!(m.optimality.is_some());
        let curve = read_curve(&run_dir(out.path(), "baseline", seed).join("curve.csv")).unwrap();
        assert_eq!(curve.last().unwrap().step, m.steps);
    }
    assert!(!out.path().join("comparison.csv").exists());
}

#[test]
fn experiments_are_deterministic_and_write_a_comparison() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let s = staged_spec();
    let ra = run_experiment(&s, a.path()).unwrap();
    run_experiment(&s, b.path()).unwrap();
    for run in ["baseline", "depth"] {
        for seed in [0, 1] {
            let ca = std::fs::read(run_dir(a.path(), run, seed).join("curve.csv")).unwrap();
            let cb = std::fs::read(run_dir(b.path(), run, seed).join("curve.csv")).unwrap();
            assert_eq!(ca, cb, "{run} seed {seed}");
        }
    }
    assert_eq!(ra.crossings.len(), 2);
    let m = manifest(a.path(), "depth", 0);
    assert_eq!(m.events.len(), 1);
    assert!(m.audit.passed(), "{:?}", m.audit.problems);
    assert_eq!(m.config_hash, s.config_hash());
    // Extended past its own optimality point for the comparison.
    let opt = m.optimality.unwrap();
    assert!(m.steps >= opt.step);
    let csv = std::fs::read_to_string(a.path().join("comparison.csv")).unwrap();
    assert!(csv.starts_with("seed,run,baseline_loss,baseline_compute,compute_at_loss,saving"));

    let rep = tempfile::tempdir().unwrap();
    let summary = write_report(a.path(), rep.path()).unwrap();
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].seeds, 2);
    assert!(rep.path().join("crossings.csv").is_file());
    assert!(rep.path().join("curves.png").is_file());
}

#[test]
fn curve_csv_has_the_documented_columns() {
    let out = tempfile::tempdir().unwrap();
    let dataset = Dataset::open(&data()).unwrap();
    let t = train();
    let ctx = RunContext {
        experiment: "x",
        config_hash: "h",
        dataset: &dataset,
        train: &t,
        options: options(),
        divergence: DivergenceSpec::default(),
        loss_tolerance: 1e-6,
        checkpoint_every: None,
        stop_at: None,
    };
    run_staged(&ctx, "r", &plan(1, &[]), 3, out.path()).unwrap();
    let text = std::fs::read_to_string(out.path().join("curve.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "step,tokens,compute,val_loss,lr,slope_estimate,stage_index"
    );
}

#[test]
fn resumed_run_makes_the_same_decisions() {
    let dataset = Dataset::open(&data()).unwrap();
    let t = train();
    let p = plan(1, &[GrowthKind::Width2x, GrowthKind::Depth2x]);
    let p = StagePlan {
        stages: p
            .stages
            .into_iter()
            .map(|mut e| {
                e.op = e.op.map(|o| GrowthOp { noise: 0.01, ..o });
                e
            })
            .collect(),
        ..p
    };
    let ctx = |stop_at| RunContext {
        experiment: "x",
        config_hash: "h",
        dataset: &dataset,
        train: &t,
        options: options(),
        divergence: DivergenceSpec::default(),
        loss_tolerance: 1e-6,
        checkpoint_every: None,
        stop_at,
    };
    let full_dir = tempfile::tempdir().unwrap();
    let full = run_staged(&ctx(None), "r", &p, 5, full_dir.path()).unwrap();
    assert_eq!(full.events.len(), 2);
    // Interrupt inside the middle stage, away from a validation point.
    let mid = (full.events[0].step + full.events[1].step) / 2 + 3;
    let part_dir = tempfile::tempdir().unwrap();
    let part = run_staged(&ctx(Some(mid)), "r", &p, 5, part_dir.path()).unwrap();
    assert_eq!(part.status, RunStatus::Interrupted { step: mid });
    assert_eq!(part.events.len(), 1);

    let resumed_dir = tempfile::tempdir().unwrap();
    let resumed = resume_staged(&ctx(None), &p, &part_dir.path().join("checkpoint"), resumed_dir.path()).unwrap();
    assert_eq!(resumed.decisions, full.decisions);
    assert_eq!(resumed.events, full.events);
    assert_eq!(resumed.optimality, full.optimality);
    let a = std::fs::read(full_dir.path().join("curve.csv")).unwrap();
    let b = std::fs::read(resumed_dir.path().join("curve.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergent_run_is_flagged() {
    let out = tempfile::tempdir().unwrap();
    let mut s = spec(
        vec![RunSpec {
            name: "hot".into(),
            plan: plan(1, &[]),
        }],
        None,
    );
    s.seeds = vec![0];
    s.train.schedule = LrSchedule::constant(30.0);
    s.train.optimizer.clip_norm = None;
    s.options.max_stage_steps = 2000;
    s.divergence = DivergenceSpec {
        factor: 1.2,
        patience: 50,
    };
    let report = run_experiment(&s, out.path()).unwrap();
    assert!(report.failed());
    let m = manifest(out.path(), "hot", 0);
    assert!(
        m.flags.iter().any(|f| f == "diverged" || f == "non_finite" || f == "budget_exceeded"),
        "{:?}",
        m.flags
    );
}

#[test]
fn spec_validation() {
    let mut s = staged_spec();
    s.baseline = Some("missing".into());
    assert!(s.validate().is_err());
    let mut s = staged_spec();
    s.runs.push(s.runs[0].clone());
    assert!(s.validate().is_err());
    let mut s = staged_spec();
    s.runs[0].plan.base.vocab = 13;
    s.runs[0].plan.base.vocab = 13;
    let out = tempfile::tempdir().unwrap();
    assert!(run_experiment(&s, out.path()).is_err());
}

#[test]
fn spec_json_round_trip() {
    let s = staged_spec();
    let text = serde_json::to_string(&s).unwrap();
    let back: ExperimentSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.config_hash(), s.config_hash());
}
