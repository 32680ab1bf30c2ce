//! Writes a [`ResultsTable`] as CSV files, SVG charts and a run summary.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::experiment::ResultsTable;
use super::svg::{bar_chart, line_chart};
use crate::{Error, Result};

/// CSV files that depend only on configuration and seed.
pub const CSV_OUTPUTS: [&str; 6] = [
    "table1.csv",
    "table3.csv",
    "training_curve.csv",
    "embedding_compare.csv",
    "moe_leakfree.csv",
    "forecast_audit.csv",
];

/// `#`-prefixed metadata line written at the top of every output.
pub fn header_line(results: &ResultsTable) -> String {
    format!(
        "# solarlab {} config_hash={} seed={}",
        env!("CARGO_PKG_VERSION"),
        results.config_hash,
        results.seed
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, comments: &[String], header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut f = File::create(path).map_err(io)?;
    for c in comments {
        writeln!(f, "{c}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(f);
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes all outputs into `out_dir` and returns the files written.
pub fn emit_report(results: &ResultsTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let head = vec![header_line(results)];
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = out_dir.join(name);
        written.push(p.clone());
        p
    };

    if !results.agents.is_empty() {
        let names: Vec<&str> = results.agents.iter().map(|a| a.name.as_str()).collect();
        let longest = results.agents.iter().map(|a| a.totals.len()).max().unwrap_or(0);
        let rows = (0..longest)
            .map(|i| {
                std::iter::once((i + 1).to_string())
                    .chain(results.agents.iter().map(|a| fmt_opt(a.totals.get(i).copied())))
                    .collect()
            })
            .collect();
        let mut header = vec!["episode"];
        header.extend(&names);
        write_csv(&out("table1.csv"), &head, &header, rows)?;

        let rows = results
            .agents
            .iter()
            .map(|a| {
                vec![
                    a.name.clone(),
                    a.totals.len().to_string(),
                    a.mean.to_string(),
                    fmt_opt(a.reference_mean),
                ]
            })
            .collect();
        write_csv(
            &out("table3.csv"),
            &head,
            &["agent", "episodes", "mean", "reference_mean"],
            rows,
        )?;

        let labels: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let means: Vec<f64> = results.agents.iter().map(|a| a.mean).collect();
        write_text(
            &out("figure1.svg"),
            &bar_chart("Mean episode total by agent", "total", &labels, &[("mean", means)]),
        )?;
    }

    if !results.curve.is_empty() {
        let rows = results
            .curve
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), v.to_string()])
            .collect();
        write_csv(&out("training_curve.csv"), &head, &["epoch", "mean_total"], rows)?;
        write_text(
            &out("figure2.svg"),
            &line_chart("PPO rollout total per training epoch", "epoch", "total", &results.curve),
        )?;
    }

    if !results.embeddings.is_empty() {
        let rows = results
            .embeddings
            .iter()
            .map(|r| {
                vec![
                    r.embedding.to_string(),
                    r.experts.to_string(),
                    r.k.to_string(),
                    r.dim.to_string(),
                    r.report.train_mse.to_string(),
                    r.report.train_mse_augmented.to_string(),
                    r.report.test_rmse.to_string(),
                    r.generalization_gap().to_string(),
                    fmt_opt(r.reference.map(|x| x.0)),
                    fmt_opt(r.reference.map(|x| x.1)),
                ]
            })
            .collect();
        write_csv(
            &out("embedding_compare.csv"),
            &head,
            &[
                "embedding",
                "experts",
                "k",
                "dim",
                "train_mse",
                "train_mse_augmented",
                "test_rmse",
                "generalization_gap",
                "reference_train_mse",
                "reference_test_rmse",
            ],
            rows,
        )?;
        let labels: Vec<String> = results
            .embeddings
            .iter()
            .map(|r| format!("{} E={}", r.embedding, r.experts))
            .collect();
        let train: Vec<f64> = results.embeddings.iter().map(|r| r.report.train_mse).collect();
        let test: Vec<f64> = results.embeddings.iter().map(|r| r.report.test_rmse).collect();
        write_text(
            &out("figure4.svg"),
            &bar_chart(
                "Forecaster losses by embedding",
                "loss",
                &labels,
                &[("train MSE", train), ("test RMSE", test)],
            ),
        )?;
    }

    if let Some(lf) = &results.leak_free {
        let mut comments = head.clone();
        comments.push("# leak-free variant: forecaster trained only on the environment's training days".into());
        let rows = vec![vec![
            lf.report.train_mse.to_string(),
            lf.report.test_rmse.to_string(),
            lf.eval.totals.len().to_string(),
            lf.eval.mean.to_string(),
        ]];
        write_csv(
            &out("moe_leakfree.csv"),
            &comments,
            &["train_mse", "test_rmse", "episodes", "mean_total"],
            rows,
        )?;
    }

    if !results.forecast_audit.is_empty() {
        let rows = results
            .forecast_audit
            .iter()
            .map(|(d, a, p)| vec![d.to_string(), a.to_string(), p.to_string()])
            .collect();
        write_csv(
            &out("forecast_audit.csv"),
            &head,
            &["day", "actual_price", "predicted_price"],
            rows,
        )?;
    }

    // timestamps live here so the CSVs stay byte-identical across reruns
    write_text(
        &out("run_info.txt"),
        &format!(
            "{}\nstarted_unix = {}\nfinished_unix = {}\n",
            header_line(results),
            results.started_unix,
            results.finished_unix
        ),
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::AgentResult;

    fn table() -> ResultsTable {
        ResultsTable {
            config_hash: "abc".into(),
            seed: 3,
            agents: vec![
                AgentResult {
                    name: "A".into(),
                    totals: vec![1.0, 2.0, 4.0],
                    mean: 7.0 / 3.0,
                    reference_mean: Some(1.5),
                },
                AgentResult {
                    name: "B".into(),
                    totals: vec![5.0],
                    mean: 5.0,
                    reference_mean: None,
                },
            ],
            curve: vec![1.0, 2.0],
            ..ResultsTable::default()
        }
    }

    #[test]
    fn writes_headers_and_ragged_columns() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&table(), dir.path()).unwrap();
        assert!(files.iter().any(|f| f.ends_with("figure1.svg")));
        let t1 = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
        let lines: Vec<&str> = t1.lines().collect();
        assert!(lines[0].starts_with("# solarlab") && lines[0].contains("config_hash=abc"));
        assert_eq!(lines[1], "episode,A,B");
        assert_eq!(lines[2], "1,1,5");
        assert_eq!(lines[3], "2,2,");
        let curve = std::fs::read_to_string(dir.path().join("training_curve.csv")).unwrap();
        assert_eq!(curve.lines().count(), 2 + 2);
        assert!(!dir.path().join("embedding_compare.csv").exists());
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let err = emit_report(&table(), &f.path().join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
