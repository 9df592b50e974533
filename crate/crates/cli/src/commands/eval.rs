//! `eval`: score the held-out test set with a trained checkpoint and write
//! the evaluation report in CSV, text, and JSON forms.

use std::fs;

use hasa_core::error::Result;
use hasa_core::metrics::build_report;
use hasa_core::model::load_checkpoint;
use hasa_core::signal::{read_manifest_jsonl, Role};
use hasa_core::train::{build_pairing, evaluate, TrainData};

use crate::config::RunConfig;
use crate::data::{build_features, check_checkpoint_compat, load_context};
use crate::rundir::RunDir;

pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let run = RunDir::create("eval", config)?;
    run.execute(|run_path| {
        let m_test = read_manifest_jsonl(&config.manifest_path(Role::Test))?;
        let ctx = load_context(config)?;
        let built = build_features(config, &[&m_test])?;
        let path = config.init_checkpoint.as_ref().expect("checked at validation");
        let (store, meta) = load_checkpoint(path)?;
        check_checkpoint_compat(&meta, config.provider.kind, &built)?;
        let model = meta.model_config;

        let plan = build_pairing(&m_test, &ctx.split, Role::Test, config.seed)?;
        let data = TrainData {
            source: &built.source,
            patterns: &ctx.patterns,
            targets: &ctx.targets,
            weight_mode: built.weight_mode,
        };
        let predictions = evaluate(&store, &data, &model, &plan)?;
        let targets = ctx.targets.restricted_to(predictions.keys())?;
        let report = build_report(&predictions, &targets, &ctx.categories)?;

        fs::write(run_path.join("report.csv"), report.to_csv())?;
        fs::write(run_path.join("report.txt"), report.to_text())?;
        fs::write(run_path.join("report.json"), serde_json::to_vec_pretty(&report)?)?;

        let mut rows =
            String::from("utterance_id,condition,audiogram_id,quality_pred,intelligibility_pred\n");
        for (key, scores) in &predictions {
            rows.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                key.utterance_id,
                key.condition,
                key.audiogram_id,
                scores.quality,
                scores.intelligibility
            ));
        }
        fs::write(run_path.join("predictions.csv"), rows)?;

        print!("{}", report.to_text());
        Ok(vec![
            "report.csv".into(),
            "report.txt".into(),
            "report.json".into(),
            "predictions.csv".into(),
        ])
    })
}
