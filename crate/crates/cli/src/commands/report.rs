//! `report`: consolidate the evaluation reports of finished runs into one
//! side-by-side comparison table.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use hasa_core::error::{Error, Result};
use hasa_core::metrics::EvalReport;

use crate::commands::fmt_opt;
use crate::rundir::{RunRecord, STATUS_FINISHED};

pub fn cmd_report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for dir in runs {
        if !seen.insert(dir.clone()) {
            continue;
        }
        match gather(dir) {
            Ok(row) => rows.push(row),
            Err(reason) => eprintln!("warning: skipping {}: {reason}", dir.display()),
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "none of the given run directories holds a finished evaluation report".into(),
        ));
    }

    let text = consolidated_text(&rows);
    print!("{text}");
    if let Some(out_dir) = out {
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("report.csv"), consolidated_csv(&rows))?;
        fs::write(out_dir.join("report.txt"), &text)?;
    }
    Ok(())
}

fn gather(dir: &Path) -> std::result::Result<(String, EvalReport), String> {
    let record = RunRecord::read(dir).map_err(|e| format!("unreadable run record ({e})"))?;
    if record.status != STATUS_FINISHED {
        return Err(format!("run is {}", record.status));
    }
    let path = dir.join("report.json");
    let bytes = fs::read(&path).map_err(|_| "run has no evaluation report".to_string())?;
    let report = serde_json::from_slice(&bytes).map_err(|e| format!("unreadable report ({e})"))?;
    Ok((record.run_id, report))
}

fn consolidated_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("run,task,mse,lcc,srcc,n\n");
    for (run, report) in rows {
        for (task, cell) in [
            ("quality", &report.quality.overall),
            ("intelligibility", &report.intelligibility.overall),
        ] {
            out.push_str(&format!(
                "{run},{task},{:.6},{},{},{}\n",
                cell.mse,
                fmt_opt(cell.lcc),
                fmt_opt(cell.srcc),
                cell.n_samples
            ));
        }
    }
    out
}

fn consolidated_text(rows: &[(String, EvalReport)]) -> String {
    let run_width = rows
        .iter()
        .map(|(run, _)| run.len())
        .max()
        .unwrap_or(3)
        .max(3);
    let mut out = format!(
        "{:<run_width$}  {:<16} {:>9} {:>9} {:>9} {:>7}\n",
        "run", "task", "MSE", "LCC", "SRCC", "n"
    );
    for (run, report) in rows {
        for (task, cell) in [
            ("quality", &report.quality.overall),
            ("intelligibility", &report.intelligibility.overall),
        ] {
            out.push_str(&format!(
                "{:<run_width$}  {:<16} {:>9.6} {:>9} {:>9} {:>7}\n",
                run,
                task,
                cell.mse,
                fmt_opt(cell.lcc),
                fmt_opt(cell.srcc),
                cell.n_samples
            ));
        }
    }
    out
}
