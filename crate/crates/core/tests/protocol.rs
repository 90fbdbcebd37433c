//! Epoch-protocol fidelity: freeze/thaw, report shape, model selection,
//! communication accounting and run determinism.

mod common;

use std::path::Path;

use miniseg_core::data::{write_dataset, Manifest, SynthConfig};
use miniseg_core::model::{build_model, ParamGroup, UNetConfig};
use miniseg_core::optim::{lr_at_epoch, ScheduleConfig, SgdConfig};
use miniseg_core::train::{train_full, StrategyConfig, StrategyKind, TrainSetup, BYTES_PER_PARAM};

fn reduced_cfg(seed: u64) -> UNetConfig {
    UNetConfig {
        input_size: 16,
        stage_channels: [2, 2, 4, 4, 4],
        in_channels: 1,
        out_channels: 1,
        seed,
    }
}

fn make_dataset(dir: &Path, count: usize, seed: u64) -> Manifest {
    write_dataset(
        dir,
        &SynthConfig {
            seed,
            count,
            size: 16,
            noise_sigma: 0.05,
        },
        1,
    )
    .unwrap()
}

fn setup<'a>(
    model: &'a UNetConfig,
    strategy: &'a StrategyConfig,
    schedule: &'a ScheduleConfig,
    sgd: &'a SgdConfig,
) -> TrainSetup<'a> {
    TrainSetup {
        model,
        strategy,
        schedule,
        sgd,
        val_fraction: 1.0 / 9.0,
        threads: 0,
    }
}

#[test]
fn ten_epoch_report_carries_the_published_lr_column() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(&dir.path().join("data"), 18, 50);
    let model_cfg = reduced_cfg(1);
    let strategy = StrategyConfig {
        kind: StrategyKind::Sgd,
        global_batch: 8,
        total_epochs: 10,
        freeze_epochs: 5,
        seed: 3,
    };
    let schedule = ScheduleConfig::default();
    let sgd = SgdConfig::default();
    let (report, _) = train_full(
        &setup(&model_cfg, &strategy, &schedule, &sgd),
        &manifest,
        &dir.path().join("run"),
    )
    .unwrap();

    assert_eq!(report.rows.len(), 10);
    for (i, row) in report.rows.iter().enumerate() {
        assert_eq!(row.epoch, i + 1);
        assert_eq!(row.lr, lr_at_epoch(i + 1, &schedule).unwrap());
    }
    // best epoch is the argmin of validation loss, earliest on ties
    let argmin = report
        .rows
        .iter()
        .min_by(|a, b| a.val_loss.partial_cmp(&b.val_loss).unwrap())
        .unwrap()
        .epoch;
    assert_eq!(report.best_epoch, argmin);
}

#[test]
fn backbone_is_bitwise_frozen_through_freeze_epochs_and_moves_after() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(&dir.path().join("data"), 18, 51);
    let model_cfg = reduced_cfg(9);
    let schedule = ScheduleConfig {
        lr_init: 1e-2,
        lr_max: 5e-2,
        lr_min: 1e-3,
        warmup_epochs: 1,
        total_epochs: 10,
    };
    let sgd = SgdConfig::default();
    let initial = build_model(&model_cfg).unwrap();

    let run = |total: usize, out: &Path| {
        let strategy = StrategyConfig {
            kind: StrategyKind::Sgd,
            global_batch: 8,
            total_epochs: total,
            freeze_epochs: 5,
            seed: 3,
        };
        train_full(&setup(&model_cfg, &strategy, &schedule, &sgd), &manifest, out)
            .unwrap()
            .1
    };

    // through epoch 5 every backbone value is bitwise the initialization
    let at5 = run(5, &dir.path().join("upto5"));
    for (p0, p5) in initial.params().iter().zip(at5.params().iter()) {
        match p0.group() {
            ParamGroup::Backbone => {
                assert_eq!(p0.value().data(), p5.value().data(), "{}", p0.name())
            }
            _ => assert_ne!(p0.value().data(), p5.value().data(), "{}", p0.name()),
        }
    }
    // by epoch 6 the backbone has thawed and moved
    let at6 = run(6, &dir.path().join("upto6"));
    let moved = initial
        .params()
        .iter()
        .zip(at6.params().iter())
        .filter(|(p0, _)| p0.group() == ParamGroup::Backbone)
        .any(|(p0, p6)| p0.value().data() != p6.value().data());
    assert!(moved, "backbone unchanged after thaw epoch");
}

#[test]
fn fully_frozen_run_never_touches_the_backbone() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(&dir.path().join("data"), 18, 52);
    let model_cfg = reduced_cfg(13);
    let strategy = StrategyConfig {
        kind: StrategyKind::Sgd,
        global_batch: 8,
        total_epochs: 4,
        freeze_epochs: 4,
        seed: 3,
    };
    let schedule = ScheduleConfig {
        total_epochs: 4,
        ..ScheduleConfig::default()
    };
    let sgd = SgdConfig::default();
    let initial = build_model(&model_cfg).unwrap();
    let (_, final_model) = train_full(
        &setup(&model_cfg, &strategy, &schedule, &sgd),
        &manifest,
        &dir.path().join("run"),
    )
    .unwrap();
    for (p0, p1) in initial.params().iter().zip(final_model.params().iter()) {
        if p0.group() == ParamGroup::Backbone {
            assert_eq!(p0.value().data(), p1.value().data(), "{}", p0.name());
        }
    }
}

#[test]
fn identical_seeded_runs_produce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(&dir.path().join("data"), 18, 53);
    let model_cfg = reduced_cfg(17);
    let strategy = StrategyConfig {
        kind: StrategyKind::Dsgd { workers: 2 },
        global_batch: 8,
        total_epochs: 3,
        freeze_epochs: 1,
        seed: 23,
    };
    let schedule = ScheduleConfig {
        total_epochs: 3,
        ..ScheduleConfig::default()
    };
    let sgd = SgdConfig::default();

    for out in ["a", "b"] {
        train_full(
            &setup(&model_cfg, &strategy, &schedule, &sgd),
            &manifest,
            &dir.path().join(out),
        )
        .unwrap();
    }
    for file in ["report.csv", "best.ckpt", "last.ckpt", "ledger.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn communication_ledger_matches_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(&dir.path().join("data"), 18, 54);
    let model_cfg = reduced_cfg(19);
    let schedule = ScheduleConfig {
        total_epochs: 4,
        ..ScheduleConfig::default()
    };
    let sgd = SgdConfig::default();
    let param_count = build_model(&model_cfg).unwrap().param_count() as u64;

    // SGD: no communication at all
    let strategy = StrategyConfig {
        kind: StrategyKind::Sgd,
        global_batch: 8,
        total_epochs: 4,
        freeze_epochs: 0,
        seed: 1,
    };
    let (r, _) = train_full(
        &setup(&model_cfg, &strategy, &schedule, &sgd),
        &manifest,
        &dir.path().join("sgd"),
    )
    .unwrap();
    assert_eq!(r.ledger.total_bytes(), 0);
    assert_eq!(r.ledger.sync_events, 0);

    // DSGD: 2 * 4 * P * workers * steps, one sync per step
    let strategy = StrategyConfig {
        kind: StrategyKind::Dsgd { workers: 4 },
        global_batch: 8,
        total_epochs: 4,
        freeze_epochs: 0,
        seed: 1,
    };
    let (r, _) = train_full(
        &setup(&model_cfg, &strategy, &schedule, &sgd),
        &manifest,
        &dir.path().join("dsgd"),
    )
    .unwrap();
    let steps = (16 / 8) * 4; // 16 train samples, batch 8, 4 epochs
    assert_eq!(
        r.ledger.total_bytes(),
        2 * BYTES_PER_PARAM * param_count * 4 * steps
    );
    assert_eq!(r.ledger.sync_events, steps);
    assert_eq!(r.rows.last().unwrap().bytes_cum, r.ledger.total_bytes());

    // FedAvg: 2 * 4 * P * clients * rounds, rounds = epochs / local_epochs
    let strategy = StrategyConfig {
        kind: StrategyKind::FedAvg {
            clients: 4,
            local_epochs: 2,
        },
        global_batch: 8,
        total_epochs: 4,
        freeze_epochs: 0,
        seed: 1,
    };
    let (r, _) = train_full(
        &setup(&model_cfg, &strategy, &schedule, &sgd),
        &manifest,
        &dir.path().join("fedavg"),
    )
    .unwrap();
    assert_eq!(
        r.ledger.total_bytes(),
        2 * BYTES_PER_PARAM * param_count * 4 * 2
    );
    assert_eq!(r.ledger.sync_events, 2);
}

#[test]
fn fedavg_honors_manifest_client_shards() {
    let dir = tempfile::tempdir().unwrap();
    // 20 samples pre-assigned to 4 clients of 5 each
    let manifest = write_dataset(
        &dir.path().join("data"),
        &SynthConfig {
            seed: 55,
            count: 20,
            size: 16,
            noise_sigma: 0.05,
        },
        4,
    )
    .unwrap();
    assert_eq!(manifest.client_counts(), vec![5, 5, 5, 5]);

    let model_cfg = reduced_cfg(3);
    let strategy = StrategyConfig {
        kind: StrategyKind::FedAvg {
            clients: 4,
            local_epochs: 1,
        },
        global_batch: 8,
        total_epochs: 2,
        freeze_epochs: 0,
        seed: 5,
    };
    let schedule = ScheduleConfig {
        total_epochs: 2,
        ..ScheduleConfig::default()
    };
    let sgd = SgdConfig::default();
    let (report, _) = train_full(
        &setup(&model_cfg, &strategy, &schedule, &sgd),
        &manifest,
        &dir.path().join("run"),
    )
    .unwrap();
    // validation removes 2 samples, so training shards sum to 18 and no
    // shard exceeds its manifest allocation
    assert_eq!(report.shard_sizes.len(), 4);
    assert_eq!(report.shard_sizes.iter().sum::<usize>(), 18);
    assert!(report.shard_sizes.iter().all(|&s| s >= 3 && s <= 5));
}

#[test]
fn invalid_configurations_are_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(&dir.path().join("data"), 18, 56);
    let model_cfg = reduced_cfg(3);
    let schedule = ScheduleConfig::default();
    let sgd = SgdConfig::default();

    // batch larger than the training split
    let strategy = StrategyConfig {
        kind: StrategyKind::Sgd,
        global_batch: 64,
        total_epochs: 2,
        freeze_epochs: 0,
        seed: 1,
    };
    let err = train_full(
        &setup(&model_cfg, &strategy, &schedule, &sgd),
        &manifest,
        &dir.path().join("x1"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("global_batch"), "{err}");
    assert!(!dir.path().join("x1").exists(), "output created despite rejection");

    // run longer than the schedule horizon
    let strategy = StrategyConfig {
        kind: StrategyKind::Sgd,
        global_batch: 8,
        total_epochs: 20,
        freeze_epochs: 0,
        seed: 1,
    };
    let err = train_full(
        &setup(&model_cfg, &strategy, &schedule, &sgd),
        &manifest,
        &dir.path().join("x2"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("schedule"), "{err}");
}
