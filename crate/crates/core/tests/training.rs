use std::path::Path;

use spex_core::features::{self, Example};
use spex_core::losses::LossKind;
use spex_core::mixsim::{self, Manifest, SimulationConfig, MANIFEST_NAME};
use spex_core::net::{Mode, NetConfig, ScalePreset};
use spex_core::stft::StftConfig;
use spex_core::synth::{self, SynthConfig};
use spex_core::trainer::{self, RunFiles, TrainConfig, Trainer};
use spex_core::{Error, Execution};

fn dataset(dir: &Path, n: usize, seed: u64) -> Vec<Example> {
    let paths = synth::write_corpus(
        dir.join("corpus"),
        &SynthConfig {
            n_speakers: 6,
            utts_per_speaker: 4,
            utt_sec: 0.4,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let idx = mixsim::index_corpus(&paths.root, &paths.gender_map).unwrap();
    let sim = SimulationConfig { n, seed, ..Default::default() };
    mixsim::simulate_set(&idx, &sim, dir.join("sim"), Execution::Parallel).unwrap();
    let m = Manifest::read(dir.join("sim").join(MANIFEST_NAME)).unwrap();
    features::load_examples(&m, StftConfig::default(), false, Execution::Parallel).unwrap()
}

fn small_net() -> NetConfig {
    NetConfig {
        aux_hidden: 8,
        mask_hidden: 12,
        scale_preset: ScalePreset::Custom,
        ..NetConfig::desk(Mode::Concat)
    }
}

#[test]
fn training_lowers_the_training_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 50, 3);
    let (train, dev) = data.split_at(40);
    let cfg = TrainConfig {
        min_epochs: 40,
        max_epochs: 40,
        seed: 3,
        ..Default::default()
    };
    let (_, log) = trainer::train(train, dev, NetConfig::desk(Mode::Concat), cfg, Execution::Parallel, None).unwrap();
    assert_eq!(log.len(), 40);
    let first = log.first().unwrap().train_loss;
    let last = log.last().unwrap().train_loss;
    println!("train loss {first:.4} -> {last:.4}");
    assert!(last < first);
    for pair in log.windows(2) {
        assert!(pair[1].lr <= pair[0].lr);
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 12, 5);
    let (train, dev) = data.split_at(9);
    let cfg = TrainConfig {
        batch_size: 4,
        min_epochs: 4,
        max_epochs: 4,
        seed: 11,
        loss: LossKind::Mtsal,
        ..Default::default()
    };
    let mut straight = Trainer::new(small_net(), cfg, train, dev, Execution::Parallel).unwrap();
    straight.run(None).unwrap();

    let files = RunFiles::new(dir.path().join("run"));
    let mut first = Trainer::new(small_net(), cfg, train, dev, Execution::Sequential).unwrap();
    first.run_epoch().unwrap();
    first.run_epoch().unwrap();
    first.save(&files).unwrap();
    drop(first);
    let mut resumed = Trainer::resume(&files, train, dev, Execution::Parallel).unwrap();
    assert_eq!(resumed.history.len(), 2);
    resumed.run(Some(&files)).unwrap();

    assert_eq!(resumed.model().params, straight.model().params);
    assert_eq!(resumed.best_model().params, straight.best_model().params);
    assert_eq!(resumed.state(), straight.state());
    let losses = |h: &[trainer::EpochLog]| h.iter().map(|e| (e.train_loss, e.dev_loss, e.lr)).collect::<Vec<_>>();
    assert_eq!(losses(&resumed.history), losses(&straight.history));
    assert_eq!(trainer::read_log(&files.log()).unwrap().len(), 4);
}

#[test]
fn best_checkpoint_has_lowest_dev_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 10, 6);
    let (train, dev) = data.split_at(7);
    let cfg = TrainConfig {
        batch_size: 4,
        min_epochs: 5,
        max_epochs: 5,
        seed: 2,
        lr0: 0.01,
        ..Default::default()
    };
    let mut t = Trainer::new(small_net(), cfg, train, dev, Execution::Parallel).unwrap();
    t.run(None).unwrap();
    let best = t.history.iter().map(|e| e.dev_loss).fold(f64::INFINITY, f64::min);
    let again = t.dev_loss(t.best_model()).unwrap();
    assert_eq!(again, best);
    let epoch = t.state().best_epoch.unwrap();
    assert_eq!(t.history[epoch - 1].dev_loss, best);
}

#[test]
fn empty_sets_and_missing_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 3, 1);
    assert!(matches!(
        Trainer::new(small_net(), TrainConfig::default(), &data, &[], Execution::Sequential),
        Err(Error::Data(_))
    ));
    let mut m = Manifest::read(dir.path().join("sim").join(MANIFEST_NAME)).unwrap();
    m.records[1].target_ref = "gone.wav".into();
    let err = features::load_examples(&m, StftConfig::default(), false, Execution::Sequential).unwrap_err();
    assert_eq!(err.kind(), "DataError");
    assert!(err.to_string().contains("mix_00001"), "{err}");
}

#[test]
fn diverging_training_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = dataset(dir.path(), 4, 2);
    data[0].psm[[0, 0]] = f64::INFINITY;
    let cfg = TrainConfig {
        batch_size: 4,
        min_epochs: 1,
        max_epochs: 1,
        ..Default::default()
    };
    let mut t = Trainer::new(small_net(), cfg, &data, &data, Execution::Sequential).unwrap();
    let err = t.run_epoch().unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1 } | Error::NonFiniteGradient(_)), "{err}");
}
