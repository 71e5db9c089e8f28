//! CSV tables and the plain-text summary.
//!
//! Column order is part of the file format:
//!
//! * `rounds.csv`: `scenario, feedback, t, setpoint, adjustment, loss,
//!   cumulative_loss, baseline_cumulative_loss, regret, mean_norm, l1_norm`
//!   (trial-averaged; `regret` is empty when it was not computed)
//! * `summary.csv`: one row per experiment, see [`SUMMARY_HEADER`]
//! * `trajectories.csv`: `scenario, feedback, t, load, state_kind, state,
//!   signal` for the tracked loads of the first trial

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::ExperimentResult;

pub const ROUNDS_HEADER: [&str; 11] = [
    "scenario",
    "feedback",
    "t",
    "setpoint",
    "adjustment",
    "loss",
    "cumulative_loss",
    "baseline_cumulative_loss",
    "regret",
    "mean_norm",
    "l1_norm",
];

pub const SUMMARY_HEADER: [&str; 17] = [
    "scenario",
    "feedback",
    "loads",
    "observed",
    "rounds",
    "trials",
    "rho",
    "lambda",
    "improvement_pct",
    "unregularized_improvement_pct",
    "mean_improvement_pct",
    "sparsity_improvement_pct",
    "simultaneity_pct",
    "unregularized_simultaneity_pct",
    "regret",
    "regret_bound",
    "bandit_fraction",
];

pub const TRAJECTORIES_HEADER: [&str; 7] = [
    "scenario",
    "feedback",
    "t",
    "load",
    "state_kind",
    "state",
    "signal",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Num(f64),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

/// A table whose rows carry a label used in diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<(String, Vec<Cell>)>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: String, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push((label, row));
    }

    /// Rejects any non-finite number, naming its row and column.
    pub fn check_finite(&self, name: &str) -> Result<()> {
        for (label, row) in &self.rows {
            for (cell, column) in row.iter().zip(&self.header) {
                if let Cell::Num(x) = cell {
                    if !x.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "{name}: non-finite value {x} at {label}, column `{column}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self, name: &str) -> Result<String> {
        self.check_finite(name)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidArgument(format!("{name}: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for (_, row) in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Text(s) => s.clone(),
                Cell::Int(i) => i.to_string(),
                // `Display` for f64 is the shortest round-trip form.
                Cell::Num(x) => x.to_string(),
                Cell::Empty => String::new(),
            }))
            .map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("{name}: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV of UTF-8 cells"))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = self
            .to_csv(&name)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        std::fs::write(path, text)
    }
}

pub fn rounds_table(results: &[ExperimentResult]) -> Table {
    let mut table = Table::new(&ROUNDS_HEADER);
    for r in results {
        let (sc, fb) = (r.config.scenario.name(), r.config.feedback.name());
        for row in &r.rounds {
            table.push(
                format!("{sc}/{fb} round {}", row.t),
                vec![
                    sc.into(),
                    fb.into(),
                    row.t.into(),
                    row.setpoint.into(),
                    row.adjustment.into(),
                    row.loss.into(),
                    row.cumulative_loss.into(),
                    row.baseline_cumulative_loss.into(),
                    row.regret.into(),
                    row.mean_norm.into(),
                    row.l1_norm.into(),
                ],
            );
        }
    }
    table
}

pub fn summary_table(results: &[ExperimentResult]) -> Table {
    let mut table = Table::new(&SUMMARY_HEADER);
    for (k, r) in results.iter().enumerate() {
        let c = &r.config;
        let s = &r.summary;
        let pct = |x: Option<f64>| Cell::from(x.map(|v| 100.0 * v));
        table.push(
            format!("row {} ({}/{})", k + 1, c.scenario, c.feedback),
            vec![
                c.scenario.name().into(),
                c.feedback.name().into(),
                c.loads.into(),
                c.observed.into(),
                c.rounds.into(),
                c.trials.into(),
                c.rho.into(),
                c.lambda.into(),
                s.improvement.into(),
                s.unregularized_improvement.into(),
                s.mean_improvement.into(),
                s.sparsity_improvement.into(),
                pct(s.simultaneity),
                pct(s.unregularized_simultaneity),
                s.regret.into(),
                s.regret_bound.into(),
                s.bandit_fraction.into(),
            ],
        );
    }
    table
}

pub fn trajectories_table(results: &[ExperimentResult]) -> Table {
    let mut table = Table::new(&TRAJECTORIES_HEADER);
    for r in results {
        let (sc, fb) = (r.config.scenario.name(), r.config.feedback.name());
        let traj = &r.trajectories;
        let kind = match traj.kind {
            crate::sim::StateKind::Temperature => "temperature",
            crate::sim::StateKind::Soc => "soc",
        };
        for (t, (states, signals)) in traj.states.iter().zip(&traj.signals).enumerate() {
            for ((&load, &state), &signal) in traj.loads.iter().zip(states).zip(signals) {
                table.push(
                    format!("{sc}/{fb} round {} load {load}", t + 1),
                    vec![
                        sc.into(),
                        fb.into(),
                        (t + 1).into(),
                        load.into(),
                        kind.into(),
                        state.into(),
                        signal.into(),
                    ],
                );
            }
        }
    }
    table
}

/// Improvement percentages laid out as regime × (with, without)
/// regularization, followed by the regularizer effects.
pub fn format_summary(results: &[ExperimentResult]) -> String {
    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<5} {:<10} {:>8} {:>8} {:>11} {:>9} {:>9} {:>9}",
        "scen", "feedback", "rho", "lambda", "improve%", "unreg%", "mean%", "sparse%"
    );
    for r in results {
        let c = &r.config;
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{:<5} {:<10} {:>8} {:>8} {:>11} {:>9} {:>9} {:>9}",
            c.scenario.name(),
            c.feedback.name(),
            c.rho,
            c.lambda,
            fmt(Some(s.improvement)),
            fmt(s.unregularized_improvement),
            fmt(s.mean_improvement),
            fmt(s.sparsity_improvement),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_lf_terminated_and_leaves_missing_cells_empty() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push("row 1".into(), vec!["x".into(), 0.1.into(), Cell::Empty]);
        assert_eq!(t.to_csv("t.csv").unwrap(), "a,b,c\nx,0.1,\n");
    }

    #[test]
    fn non_finite_cells_are_named() {
        let mut t = Table::new(&["t", "loss"]);
        t.push("round 12".into(), vec![12usize.into(), f64::NAN.into()]);
        let msg = t.to_csv("rounds.csv").unwrap_err().to_string();
        assert!(msg.contains("round 12") && msg.contains("`loss`"), "{msg}");
    }

    #[test]
    fn empty_tables_are_header_only() {
        assert_eq!(
            rounds_table(&[]).to_csv("r").unwrap(),
            format!("{}\n", ROUNDS_HEADER.join(","))
        );
    }
}
