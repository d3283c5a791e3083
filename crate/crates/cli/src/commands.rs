use std::path::Path;

use anyhow::{Context, Result};
use spex_core::audio_io::{self, Waveform};
use spex_core::evalkit::{self, EvalReport};
use spex_core::features;
use spex_core::mixsim::{self, Manifest, SimulationConfig, MANIFEST_NAME};
use spex_core::net;
use spex_core::selftest;
use spex_core::trainer::{RunFiles, Trainer};
use spex_core::{Error, Execution};

use crate::config::RunConfig;
use crate::{Cli, Command, EvaluateArgs, ExtractArgs, SimulateArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = Some(seed);
    }
    let exec = match cli.common.threads {
        Some(0) => anyhow::bail!(Error::InvalidConfig("--threads must be at least 1".into())),
        Some(1) => Execution::Sequential,
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the worker pool")?;
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    match cli.command {
        Command::Simulate(a) => simulate(&mut cfg, a, exec),
        Command::Train(a) => train(&mut cfg, a, exec),
        Command::Extract(a) => extract(&cfg, a, exec),
        Command::Evaluate(a) => evaluate(a, exec),
        Command::Selftest => run_selftest(&cfg),
    }
}

fn simulate(cfg: &mut RunConfig, a: SimulateArgs, exec: Execution) -> Result<()> {
    let s = &mut cfg.simulate;
    s.n = a.n.unwrap_or(s.n);
    s.snr_lo = a.snr_lo.unwrap_or(s.snr_lo);
    s.snr_hi = a.snr_hi.unwrap_or(s.snr_hi);
    cfg.validate()?;
    let genders = a.genders.unwrap_or_else(|| a.corpus.join("genders.txt"));
    let index = mixsim::index_corpus(&a.corpus, &genders)?;
    log::info!(
        "{} speakers indexed ({} skipped)",
        index.speakers.len(),
        index.dropped
    );
    let sim = SimulationConfig {
        n: cfg.simulate.n,
        snr_lo: cfg.simulate.snr_lo,
        snr_hi: cfg.simulate.snr_hi,
        seed: cfg.seed(),
    };
    let records = mixsim::simulate_set(&index, &sim, &a.out, exec)?;
    let same = records.iter().filter(|r| r.same_gender()).count();
    println!(
        "wrote {} mixtures ({} same-gender) to {}",
        records.len(),
        same,
        a.out.join(MANIFEST_NAME).display()
    );
    Ok(())
}

fn train(cfg: &mut RunConfig, a: TrainArgs, exec: Execution) -> Result<()> {
    if let Some(m) = a.mode {
        cfg.net.mode = m;
    }
    if let Some(p) = a.preset {
        cfg.net.preset = p;
    }
    let seed = cfg.seed;
    let t = &mut cfg.train;
    t.loss = a.loss.unwrap_or(t.loss);
    t.lr0 = a.lr.unwrap_or(t.lr0);
    t.min_epochs = a.min_epochs.unwrap_or(t.min_epochs);
    t.max_epochs = a.max_epochs.unwrap_or(t.max_epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    if let Some(seed) = seed {
        t.seed = seed;
    }
    cfg.validate()?;

    let load = |p: &Path| -> Result<Vec<features::Example>> {
        let m = Manifest::read(p)?;
        if m.records.is_empty() {
            anyhow::bail!(Error::Data(format!("manifest {} is empty", p.display())));
        }
        Ok(features::load_examples(&m, cfg.stft, cfg.train.psm_clamp, exec)?)
    };
    let train_set = load(&a.train)?;
    let dev_set = load(&a.dev)?;
    let files = RunFiles::new(&a.out);
    let mut trainer = if a.resume {
        log::info!("resuming from {}", files.dir.display());
        Trainer::resume(&files, &train_set, &dev_set, exec)?
    } else {
        let net_cfg = cfg.net_config();
        let t = Trainer::new(net_cfg, cfg.train, &train_set, &dev_set, exec)?;
        log::info!(
            "{} model, {} parameters, {} train / {} dev utterances",
            net_cfg.mode.name(),
            t.model().param_count(),
            train_set.len(),
            dev_set.len()
        );
        std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        let resolved = serde_json::to_string_pretty(&cfg).expect("config serializes");
        let cfg_path = a.out.join("config.json");
        std::fs::write(&cfg_path, resolved + "\n").map_err(|e| Error::io(&cfg_path, e))?;
        t
    };
    trainer.run(Some(&files))?;
    let report = features::evaluate_model(trainer.best_model(), &dev_set, exec)?;
    println!(
        "best epoch {} (dev loss {:.5}); dev SI-SDR improvement {:.2} dB; checkpoint {}",
        trainer.state().best_epoch.unwrap_or(0),
        trainer.state().schedule.best_dev.unwrap_or(f64::NAN),
        report.mean_improvement_db().unwrap_or(f64::NAN),
        files.best().display()
    );
    Ok(())
}

fn read_record_wav(id: &str, path: &Path) -> spex_core::Result<Waveform> {
    audio_io::read_wav(path).map_err(|e| match e {
        Error::NotFound(p) => Error::Data(format!("record {id}: missing file {}", p.display())),
        other => other,
    })
}

fn extract(cfg: &RunConfig, a: ExtractArgs, exec: Execution) -> Result<()> {
    cfg.validate()?;
    let manifest = Manifest::read(&a.manifest)?;
    let model = net::load_checkpoint(&a.model)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let results = exec.map(&manifest.records, |rec| -> spex_core::Result<()> {
        let id = rec.id();
        let mixture = read_record_wav(&id, &manifest.resolve(&rec.mixture))?;
        let enroll = read_record_wav(&id, &manifest.resolve(&rec.enroll))?;
        let est = features::extract_waveform(&model, &mixture, &enroll, cfg.stft)?;
        audio_io::write_wav(evalkit::extraction_path(&a.out, &id), &est)
    });
    for r in results {
        r?;
    }
    println!("extracted {} records into {}", manifest.records.len(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs, exec: Execution) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let report: EvalReport = evalkit::evaluate(&manifest, &a.extracted, exec)?;
    let path = a.report.unwrap_or_else(|| a.extracted.join("report.json"));
    report.write_json(&path)?;
    print!("{}", evalkit::summary_table(&[("System", &report)]));
    println!("report written to {}", path.display());
    Ok(())
}

fn run_selftest(cfg: &RunConfig) -> Result<()> {
    let checks = selftest::run(cfg.seed())?;
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {:<24} worst {:.3e} (tolerance {:.0e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        anyhow::bail!("{failed} of {} self-checks failed", checks.len());
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
