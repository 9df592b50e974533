//! `transfer`: run the zero/few/full-shot adaptation ladder from a source
//! checkpoint against a target-domain dataset.

use std::fs;

use hasa_core::error::Result;
use hasa_core::model::load_checkpoint;
use hasa_core::signal::{read_manifest_jsonl, Role};
use hasa_core::train::{build_pairing, transfer_protocol, TrainData};

use crate::commands::fmt_opt;
use crate::config::RunConfig;
use crate::data::{build_features, check_checkpoint_compat, load_context};
use crate::rundir::RunDir;

pub fn cmd_transfer(config: &RunConfig) -> Result<()> {
    let run = RunDir::create("transfer", config)?;
    run.execute(|run_path| {
        let m_train = read_manifest_jsonl(&config.manifest_path(Role::Train))?;
        let m_val = read_manifest_jsonl(&config.manifest_path(Role::Validation))?;
        let m_test = read_manifest_jsonl(&config.manifest_path(Role::Test))?;
        let ctx = load_context(config)?;
        let built = build_features(config, &[&m_train, &m_val, &m_test])?;
        let path = config.init_checkpoint.as_ref().expect("checked at validation");
        let (base, meta) = load_checkpoint(path)?;
        check_checkpoint_compat(&meta, config.provider.kind, &built)?;
        let model = meta.model_config;

        let train_plan = build_pairing(&m_train, &ctx.split, Role::Train, config.seed)?;
        let val_plan = build_pairing(&m_val, &ctx.split, Role::Validation, config.seed)?;
        let eval_plan = build_pairing(&m_test, &ctx.split, Role::Test, config.seed)?;
        let data = TrainData {
            source: &built.source,
            patterns: &ctx.patterns,
            targets: &ctx.targets,
            weight_mode: built.weight_mode,
        };
        let plan = config.transfer_plan();
        let train_config = config.train.to_train_config(config.seed);

        let outcome = transfer_protocol(
            &base,
            &data,
            &model,
            &train_plan,
            &val_plan,
            &eval_plan,
            &ctx.categories,
            &plan,
            &train_config,
        )?;

        fs::create_dir_all(run_path.join("reports"))?;
        let mut summary = String::from(
            "size,combos_used,adapted_loss_total,adapted_loss_quality,adapted_loss_intelligibility,\
             quality_mse,quality_lcc,quality_srcc,intelligibility_mse,intelligibility_lcc,intelligibility_srcc\n",
        );
        let mut artifacts = vec!["transfer_summary.csv".to_string()];
        for row in &outcome.rows {
            let q = &row.report.quality.overall;
            let i = &row.report.intelligibility.overall;
            summary.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{},{}\n",
                row.size,
                row.combos_used,
                row.adapted_loss.total,
                row.adapted_loss.quality,
                row.adapted_loss.intelligibility,
                q.mse,
                fmt_opt(q.lcc),
                fmt_opt(q.srcc),
                i.mse,
                fmt_opt(i.lcc),
                fmt_opt(i.srcc),
            ));
            let name = format!("reports/size_{}.csv", row.size);
            fs::write(run_path.join(&name), row.report.to_csv())?;
            artifacts.push(name);
            println!(
                "budget {:>6}: {:>5} combos used, eval loss {:.6}",
                row.size.to_string(),
                row.combos_used,
                row.adapted_loss.total
            );
        }
        fs::write(run_path.join("transfer_summary.csv"), summary)?;

        // The largest budget's report stands for the run in consolidation.
        let last = outcome.rows.last().expect("validated plans are non-empty");
        fs::write(
            run_path.join("report.json"),
            serde_json::to_vec_pretty(&last.report)?,
        )?;
        artifacts.push("report.json".into());
        Ok(artifacts)
    })
}
