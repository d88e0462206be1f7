use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ratchet_core::cohort::{
    load_cohort, load_schema, prepare, save_cohort, save_ground_truth, save_schema, synth_generate, tensorize, FeatureSchema,
    PreparedCohort, TimeframeTensor,
};
use ratchet_core::config::Config;
use ratchet_core::eval::{auc_roc, report, run_experiments, write_metrics_csv, RunMetric};
use ratchet_core::explain::{explain_stays, summarize, write_attributions_csv, write_summary_csv};
use ratchet_core::model::ModelConfig;
use ratchet_core::numcore::rng::{derive, seeded, Stream};
use ratchet_core::train::{finetune, pretrain, write_epoch_log, write_loss_curve, Stage, TrainState};
use ratchet_core::{Error, Model, Result};

use crate::{Cli, Command};

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `<out>/<command>-<timestamp>`, with a numeric suffix if that already exists.
fn run_dir(out: &Path, command: &str) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = out.join(format!("{command}-{stamp}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")))
    }
}

/// Runs the subcommand and returns its run directory.
pub fn run(cli: &Cli, cfg: &Config) -> Result<PathBuf> {
    match &cli.command {
        Command::Prepare(a) => [&a.cohort, &a.schema].into_iter().try_for_each(|p| require(p))?,
        Command::Pretrain(a) => require(&a.prepared)?,
        Command::Finetune(a) => {
            require(&a.prepared)?;
            if let Some(p) = &a.init {
                require(p)?;
            }
        }
        Command::Experiment(a) => a.cohort.iter().chain(&a.schema).try_for_each(|p| require(p))?,
        Command::Explain(a) => [&a.checkpoint, &a.prepared].into_iter().try_for_each(|p| require(p))?,
        Command::Synth(_) => {}
    }
    let dir = run_dir(&cli.out, cli.command.name())?;
    write(&dir.join("config.resolved"), &cfg.to_text())?;
    let argv: Vec<String> = std::env::args().collect();
    write(&dir.join("command.txt"), &format!("{}\n", argv.join(" ")))?;
    match &cli.command {
        Command::Synth(_) => synth(&dir, cfg)?,
        Command::Prepare(a) => prepare_cmd(&dir, cfg, &a.cohort, &a.schema)?,
        Command::Pretrain(a) => pretrain_cmd(&dir, cfg, &a.prepared)?,
        Command::Finetune(a) => finetune_cmd(&dir, cfg, &a.prepared, a.init.as_deref())?,
        Command::Experiment(a) => experiment(&dir, cfg, a.cohort.as_deref().zip(a.schema.as_deref()), a.report.as_deref())?,
        Command::Explain(a) => explain(&dir, cfg, &a.checkpoint, &a.prepared)?,
    }
    info!("outputs in {}", dir.display());
    Ok(dir)
}

fn synth(dir: &Path, cfg: &Config) -> Result<()> {
    let s = synth_generate(&cfg.data.synth_config(), &mut seeded(cfg.data.seed))?;
    save_schema(&dir.join("schema.txt"), &s.schema, "code_groups.txt")?;
    save_cohort(&dir.join("cohort.txt"), &s.records)?;
    save_ground_truth(&dir.join("ground_truth.tsv"), &s.ground_truth, &s.signal_features)?;
    let pos = s.ground_truth.iter().filter(|g| g.label == 1).count();
    info!("{} stays, {pos} positive ({:.2}%)", s.records.len(), 100.0 * pos as f64 / s.records.len() as f64);
    Ok(())
}

fn prepare_cmd(dir: &Path, cfg: &Config, cohort: &Path, schema: &Path) -> Result<()> {
    let schema = load_schema(schema)?;
    let records = load_cohort(cohort, &schema, cfg.data.design())?;
    let mut rng = derive(cfg.data.seed, Stream::Split, 0);
    let p = prepare(&records, &schema, &cfg.data.binning, &cfg.data.split_mode(), cfg.data.val_fraction, &mut rng)?;
    p.save(dir)?;
    let q = &p.quality;
    let mut text = format!("out_of_range {}\nempty_stays {}\n", q.out_of_range, q.empty_stays.join(","));
    for (id, n) in &q.missing {
        text.push_str(&format!("missing {id} {n}\n"));
    }
    text.push_str(&format!("dropped_features {}\n", q.dropped_features.join(",")));
    write(&dir.join("quality.txt"), &text)
}

fn model_config(cfg: &Config, schema: &FeatureSchema, stays: &[TimeframeTensor]) -> ModelConfig {
    ModelConfig {
        k: schema.k(),
        m: schema.m(),
        p_max: stays.first().map_or(cfg.data.binning.p_max, TimeframeTensor::p_max),
        ..cfg.model.clone()
    }
}

fn pretrain_cmd(dir: &Path, cfg: &Config, prepared: &Path) -> Result<()> {
    let data = PreparedCohort::load(prepared)?;
    let mc = model_config(cfg, &data.schema, &data.splits.train);
    let model = Model::new(mc, &mut derive(cfg.pretrain.seed, Stream::Init, 0))?;
    let mut state = TrainState::new(model);
    pretrain(&mut state, &data.splits.train, &cfg.pretrain, None)?;
    write_loss_curve(&dir.join("loss_curve.csv"), Stage::Pretrain, &state.losses)?;
    write_epoch_log(&dir.join("epochs.csv"), &state.epochs)?;
    state.model.save(&dir.join("checkpoint"))
}

fn finetune_cmd(dir: &Path, cfg: &Config, prepared: &Path, init: Option<&Path>) -> Result<()> {
    let data = PreparedCohort::load(prepared)?;
    let mc = model_config(cfg, &data.schema, &data.splits.train);
    let model = match init {
        Some(path) => {
            let m = Model::load(path)?;
            if (m.config.k, m.config.m, m.config.p_max) != (mc.k, mc.m, mc.p_max) {
                return Err(Error::Shape(format!(
                    "checkpoint expects k={} m={} p_max={}, data has k={} m={} p_max={}",
                    m.config.k, m.config.m, m.config.p_max, mc.k, mc.m, mc.p_max
                )));
            }
            m
        }
        None => Model::new(mc, &mut derive(cfg.finetune.seed, Stream::Init, 0))?,
    };
    let mut state = TrainState::new(model);
    let rep = finetune(&mut state, &data.splits.train, &data.splits.val, &cfg.finetune, None)?;
    write_loss_curve(&dir.join("loss_curve.csv"), Stage::Finetune, &state.losses)?;
    write_epoch_log(&dir.join("epochs.csv"), &state.epochs)?;
    state.model.save(&dir.join("checkpoint"))?;
    let test = &data.splits.test;
    let labels: Vec<u8> = test.iter().map(|t| t.label).collect();
    let auc = auc_roc(&state.model.predict(test, 256)?, &labels)?;
    info!("test AUC {auc:.4} (best validation epoch {})", rep.best_epoch);
    let (n_train, n_val, n_test) = data.splits.sizes();
    let row = RunMetric {
        variant: if init.is_some() { "finetune_from_init" } else { "finetune" }.into(),
        run: 0,
        seed: cfg.finetune.seed,
        n_train,
        n_val,
        n_test,
        auc,
        epoch_selected: rep.best_epoch,
    };
    write_metrics_csv(&dir.join("metrics.csv"), &[row])
}

fn experiment(dir: &Path, cfg: &Config, files: Option<(&Path, &Path)>, report_path: Option<&Path>) -> Result<()> {
    let (records, schema) = match files {
        Some((cohort, schema)) => {
            let schema = load_schema(schema)?;
            (load_cohort(cohort, &schema, cfg.data.design())?, schema)
        }
        None => {
            let s = synth_generate(&cfg.data.synth_config(), &mut seeded(cfg.data.seed))?;
            (s.records, s.schema)
        }
    };
    let (tensors, _) = tensorize(&records, &schema, &cfg.data.binning)?;
    let rows = run_experiments(&tensors, &schema, &cfg.experiment())?;
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    for v in &cfg.eval.variants {
        let name = v.to_string();
        let table: Vec<RunMetric> = rows.iter().filter(|r| r.variant == name).cloned().collect();
        write_metrics_csv(&dir.join(format!("metrics_{name}.csv")), &table)?;
    }
    let rep = report(&rows)?;
    rep.write_summary_csv(&dir.join("summary.csv"))?;
    rep.write_pairwise_csv(&dir.join("pairwise.csv"))?;
    let text = rep.to_text();
    write(&dir.join("report.txt"), &text)?;
    if let Some(p) = report_path {
        write(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn explain(dir: &Path, cfg: &Config, checkpoint: &Path, prepared: &Path) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let data = PreparedCohort::load(prepared)?;
    let attrs = explain_stays(&model, &data.splits.train, &data.splits.test, &cfg.explain)?;
    let inputs: Vec<TimeframeTensor> = attrs
        .iter()
        .map(|a| data.splits.test.iter().find(|t| t.stay_id == a.stay_id).cloned().expect("explained stays come from the test split"))
        .collect();
    write_attributions_csv(&dir.join("attributions.csv"), &attrs, &data.schema)?;
    let rows = summarize(&attrs, &inputs, &data.schema, None)?;
    write_summary_csv(&dir.join("summary.csv"), &rows)
}
