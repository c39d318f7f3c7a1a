//! `ctseg train`.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::PathBuf;

use clap::Args;
use ctseg::data::read_manifest;
use ctseg::train::{fit, history_csv, HistoryRow, Sample};
use ctseg::unet::TransferReport;
use ctseg::{ModelWeights, UNet};

use crate::config::RunConfig;
use crate::io::{create_dir, load_sample, require_file, write_file};
use crate::CliError;

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with train.csv and validation.csv.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Stop when validation loss has not improved for `early_stop_patience` epochs.
    #[arg(long)]
    pub early_stop: bool,
    /// Copy every tensor whose name and shape match from this weight file.
    #[arg(long, conflicts_with = "resume")]
    pub pretrained: Option<PathBuf>,
    /// Continue from a checkpoint of the same architecture. Optimizer state
    /// is not stored, so Adam restarts from zero moments.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub history: Vec<HistoryRow>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub transfer: Option<TransferReport>,
}

impl TrainArgs {
    pub fn effective_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(d) = &self.data_dir {
            cfg.data_dir = d.clone();
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if self.early_stop {
            cfg.early_stop = true;
        }
        Ok(cfg)
    }
}

fn load_split(cfg: &RunConfig, name: &str) -> Result<Vec<Sample<f32>>, CliError> {
    let path = cfg.data_dir.join(format!("{name}.csv"));
    require_file(&path, "split manifest")?;
    read_manifest(&path)?
        .iter()
        .map(|r| load_sample(r, cfg.input_size))
        .collect()
}

pub fn transfer_ledger(r: &TransferReport) -> String {
    let mut s = format!(
        "transfer: {} loaded, {} skipped, {} unused\n",
        r.loaded.len(),
        r.skipped.len(),
        r.unused.len()
    );
    for t in &r.skipped {
        let _ = writeln!(s, "  skipped {t}");
    }
    for u in &r.unused {
        let _ = writeln!(s, "  unused {u}");
    }
    s
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let cfg = args.effective_config()?;
    let net = cfg.unet()?;
    let run = cfg.training()?;
    let train = load_split(&cfg, "train")?;
    let val = load_split(&cfg, "validation")?;

    let mut model = UNet::<f32>::build(&net, cfg.seed)?;
    let mut transfer = None;
    if let Some(p) = &args.pretrained {
        let donor = ModelWeights::load(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        transfer = Some(model.transfer_load(&donor, false)?);
    }
    if let Some(p) = &args.resume {
        let donor = ModelWeights::load(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        transfer = Some(model.transfer_load(&donor, true)?);
    }

    let out = cfg.out_dir.clone();
    create_dir(&out)?;
    write_file(&out.join("config.toml"), cfg.to_toml())?;
    let mut save_error = None;
    let report = fit(&mut model, &train, &val, &run, |ev| {
        if ev.checkpoint_due {
            let path = out.join(format!("checkpoint_epoch{:03}.csegw", ev.row.epoch));
            if let Err(e) = ev.model.save_weights(&path) {
                save_error = Some(e);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = save_error {
        return Err(CliError::Failure(e.to_string()));
    }
    report
        .best
        .save(&out.join("best.csegw"))
        .map_err(|e| CliError::Failure(e.to_string()))?;
    model
        .save_weights(&out.join("final.csegw"))
        .map_err(|e| CliError::Failure(e.to_string()))?;
    write_file(
        &out.join("history.csv"),
        format!("# seed={}\n{}", cfg.seed, history_csv(&report.history)),
    )?;
    Ok(TrainSummary {
        out_dir: out,
        history: report.history,
        best_epoch: report.best_epoch,
        best_val_loss: report.best_val_loss,
        transfer,
    })
}
