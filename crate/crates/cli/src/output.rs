use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};
use snc_core::game::{GameRecord, SampleSet};
use snc_core::inference::TraceEvent;
use snc_core::lcr::LearningCurve;

/// One evaluated quantity, keyed by experiment, world, method and setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub world_seed: Option<u64>,
    pub method: String,
    pub dims: usize,
    pub s: f64,
    pub sigma: f64,
    pub metric: String,
    /// Iteration budget, entry index, or epoch, depending on the metric.
    pub step: Option<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub experiment: String,
    pub seed: u64,
    pub method: String,
    pub dims: usize,
    pub s: f64,
    pub epoch: usize,
    pub l_mis: f64,
    pub l_eff: f64,
    pub l_rip: f64,
    pub total: f64,
}

pub fn csv_string<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().context("flushing csv")?)?)
}

pub const METRIC_HEADER: [&str; 9] = [
    "experiment",
    "world_seed",
    "method",
    "dims",
    "s",
    "sigma",
    "metric",
    "step",
    "value",
];
pub const CURVE_HEADER: [&str; 10] = [
    "experiment",
    "seed",
    "method",
    "dims",
    "s",
    "epoch",
    "l_mis",
    "l_eff",
    "l_rip",
    "total",
];

pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    csv_string(rows, &METRIC_HEADER)
}

pub fn curves_csv(rows: &[CurveRow]) -> Result<String> {
    csv_string(rows, &CURVE_HEADER)
}

pub fn learning_curve_csv(curve: &LearningCurve) -> Result<String> {
    csv_string(
        &curve.epochs,
        &["epoch", "l_mis", "l_eff", "l_rip", "total"],
    )
}

pub fn trace_csv(events: &[TraceEvent]) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        iter: usize,
        stage: u8,
        block: String,
        accepted: bool,
        log_likelihood: f64,
    }
    let rows: Vec<Row> = events
        .iter()
        .map(|e| Row {
            iter: e.iter,
            stage: e.stage,
            block: e.block.to_string(),
            accepted: e.accepted,
            log_likelihood: e.log_likelihood,
        })
        .collect();
    csv_string(
        &rows,
        &["iter", "stage", "block", "accepted", "log_likelihood"],
    )
}

pub fn samples_csv(s: &SampleSet) -> Result<String> {
    csv_string(&s.pairs, &["concept_id", "action_id"])
}

pub fn read_samples_csv(text: &str) -> Result<SampleSet> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut pairs = Vec::new();
    for rec in r.deserialize() {
        let (c, a): (usize, usize) = rec.context("reading sample row")?;
        pairs.push((c, a));
    }
    Ok(SampleSet { pairs })
}

pub fn games_csv(games: &[GameRecord]) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        target: usize,
        action_taken: usize,
        success: bool,
        symbols: String,
    }
    let rows: Vec<Row> = games
        .iter()
        .map(|g| Row {
            target: g.target_action,
            action_taken: g.action_taken,
            success: g.success,
            symbols: g
                .symbols_sent
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect();
    csv_string(&rows, &["target", "action_taken", "success", "symbols"])
}

/// Write `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Write to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            if !contents.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_rows_have_headers_and_blank_options() {
        let row = MetricRow {
            experiment: "fig4".into(),
            world_seed: None,
            method: "icr".into(),
            dims: 4,
            s: 0.3,
            sigma: 0.05,
            metric: "ops".into(),
            step: None,
            value: 12.0,
        };
        let text = metrics_csv(&[row]).unwrap();
        assert_eq!(text, "experiment,world_seed,method,dims,s,sigma,metric,step,value\nfig4,,icr,4,0.3,0.05,ops,,12.0\n");
    }

    #[test]
    fn samples_round_trip() {
        let s = SampleSet {
            pairs: vec![(0, 1), (2, 2)],
        };
        let text = samples_csv(&s).unwrap();
        assert!(text.starts_with("concept_id,action_id\n"));
        assert_eq!(read_samples_csv(&text).unwrap(), s);
    }

    #[test]
    fn games_join_symbols() {
        let g = GameRecord {
            target_action: 1,
            symbols_sent: vec![0, 2],
            action_taken: 1,
            success: true,
        };
        assert_eq!(
            games_csv(&[g]).unwrap(),
            "target,action_taken,success,symbols\n1,1,true,0;2\n"
        );
    }
}
