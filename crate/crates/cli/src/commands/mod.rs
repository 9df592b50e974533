//! Subcommand implementations. Each command creates a run directory, does
//! its work, and finalizes the run record.

pub mod eval;
pub mod prepare;
pub mod report;
pub mod training;
pub mod transfer;

/// CSV cell for a possibly undefined correlation.
pub(crate) fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "n/a".into(),
    }
}
