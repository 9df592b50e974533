//! `train` and `finetune`: fit the assessment model, either from scratch or
//! from a checkpoint, honoring the configured fine-tune mode.

use std::fs;

use hasa_core::error::Result;
use hasa_core::model::{load_checkpoint, save_checkpoint, CheckpointMeta};
use hasa_core::signal::{read_manifest_jsonl, Role};
use hasa_core::train::{
    build_pairing, finetune, init_store, log_to_csv, FinetuneOutcome, PairingPlan, TrainData,
};

use crate::config::{CommandKind, RunConfig};
use crate::data::{build_features, check_checkpoint_compat, load_context};
use crate::rundir::{file_sha256, RunDir};

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    run_training(config, CommandKind::Train)
}

pub fn cmd_finetune(config: &RunConfig) -> Result<()> {
    run_training(config, CommandKind::Finetune)
}

fn run_training(config: &RunConfig, command: CommandKind) -> Result<()> {
    let run = RunDir::create(command.as_str(), config)?;
    run.execute(|run_path| {
        let m_train = read_manifest_jsonl(&config.manifest_path(Role::Train))?;
        let m_val = read_manifest_jsonl(&config.manifest_path(Role::Validation))?;
        let ctx = load_context(config)?;
        let built = build_features(config, &[&m_train, &m_val])?;
        let data = TrainData {
            source: &built.source,
            patterns: &ctx.patterns,
            targets: &ctx.targets,
            weight_mode: built.weight_mode,
        };
        let train_plan = build_pairing(&m_train, &ctx.split, Role::Train, config.seed)?;
        let val_plan = build_pairing(&m_val, &ctx.split, Role::Validation, config.seed)?;
        let train_config = config.train.to_train_config(config.seed);

        let (mut store, model, stage) = if command == CommandKind::Finetune {
            let path = config.init_checkpoint.as_ref().expect("checked at validation");
            let (store, meta) = load_checkpoint(path)?;
            check_checkpoint_compat(&meta, config.provider.kind, &built)?;
            let stage = format!("finetune/{}", train_config.finetune_mode);
            (store, meta.model_config, stage)
        } else {
            let model = config.model.to_config(built.feature_dim);
            let store = init_store(&model, &data, config.seed)?;
            let stage = format!("pretrain/{}", train_config.finetune_mode);
            (store, model, stage)
        };

        let outcome = finetune(&mut store, &data, &model, &train_plan, &val_plan, &train_config)?;

        fs::write(run_path.join("training_log.csv"), log_to_csv(&outcome.log))?;
        let meta = CheckpointMeta {
            model_config: model,
            provider_id: config.provider.kind.id_str().into(),
            provider_version: built.provider_version.clone(),
            layer_weight_mode: Some(built.weight_mode),
            training_stage: stage,
            seed: config.seed,
            data_fingerprint: file_sha256(&config.manifest_path(Role::Train))?,
        };
        save_checkpoint(&run_path.join("model.ckpt"), &store, &meta)?;
        let summary = summarize(&outcome, &train_plan, &val_plan);
        fs::write(run_path.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;

        let last = outcome.stages.last().expect("at least one stage runs");
        println!(
            "{}: best validation loss {:.6} at epoch {} ({} epochs run, {} stage{})",
            command.as_str(),
            last.best_validation.total,
            last.best_epoch,
            outcome.stages.iter().map(|s| s.epochs_run).sum::<usize>(),
            outcome.stages.len(),
            if outcome.stages.len() == 1 { "" } else { "s" },
        );
        Ok(vec![
            "model.ckpt".into(),
            "training_log.csv".into(),
            "summary.json".into(),
        ])
    })
}

fn summarize(
    outcome: &FinetuneOutcome,
    train_plan: &PairingPlan,
    val_plan: &PairingPlan,
) -> serde_json::Value {
    let first = outcome.stages.first().expect("at least one stage runs");
    let last = outcome.stages.last().expect("at least one stage runs");
    serde_json::json!({
        "stages": outcome.stages.len(),
        "stage_lrs": outcome.stage_lrs,
        "train_combos": train_plan.len(),
        "validation_combos": val_plan.len(),
        "epochs_run": outcome.stages.iter().map(|s| s.epochs_run).sum::<usize>(),
        "best_epoch": last.best_epoch,
        "stopped_early": last.stopped_early,
        "initial_validation_loss": first.initial_validation.total,
        "best_validation_loss": {
            "total": last.best_validation.total,
            "quality": last.best_validation.quality,
            "intelligibility": last.best_validation.intelligibility,
        },
    })
}
