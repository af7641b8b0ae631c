use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentData, SpikeTrain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Ndjson,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Format::Csv),
            "ndjson" | "jsonl" => Some(Format::Ndjson),
            _ => None,
        }
    }
}

/// Sidecar describing what the event file cannot: the observation window and
/// how many neurons and trials exist (some may be silent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(rename = "T")]
    pub duration: f64,
    pub nu: usize,
    pub n_trials: usize,
}

impl Metadata {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: Metadata = serde_json::from_str(&text)?;
        if !(meta.duration > 0.0) || meta.nu == 0 {
            return Err(Error::Validation(format!(
                "{}: T must be positive and nu at least 1",
                path.display()
            )));
        }
        Ok(meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `spikes.csv` -> `spikes.meta.json`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("meta.json")
}

#[derive(Deserialize)]
struct JsonRow {
    trial: i64,
    neuron: i64,
    time: f64,
}

struct Row {
    line: usize,
    trial: i64,
    neuron: i64,
    time: f64,
}

pub fn load_experiment(path: &Path, format: Format, meta: &Metadata) -> Result<ExperimentData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_experiment(BufReader::new(file), format, meta)
}

/// Loads `path` with the metadata found at [`sidecar_path`]; the format comes
/// from the extension.
pub fn load_with_sidecar(path: &Path) -> Result<ExperimentData> {
    let format = Format::from_path(path).ok_or_else(|| {
        Error::Argument(format!(
            "{}: unknown extension, expected .csv or .ndjson",
            path.display()
        ))
    })?;
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let meta = Metadata::load(&sidecar_path(path))?;
    load_experiment(path, format, &meta)
}

pub fn read_experiment<R: BufRead>(reader: R, format: Format, meta: &Metadata) -> Result<ExperimentData> {
    let rows = match format {
        Format::Csv => parse_csv(reader)?,
        Format::Ndjson => parse_ndjson(reader)?,
    };
    assemble(rows, meta)
}

fn read_err(line: usize, e: std::io::Error) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_csv<R: BufRead>(reader: R) -> Result<Vec<Row>> {
    let lines = reader.lines().enumerate();
    let mut columns = None;
    let mut rows = Vec::new();
    for (k, line) in lines {
        let line_no = k + 1;
        let line = line.map_err(|e| read_err(line_no, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some((ti, ni, si)) = columns else {
            let find = |name: &str| {
                fields.iter().position(|f| *f == name).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("header must name a `{name}` column"),
                })
            };
            columns = Some((find("trial")?, find("neuron")?, find("time")?));
            continue;
        };
        let field = |idx: usize| {
            fields.get(idx).copied().ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected at least {} fields", idx + 1),
            })
        };
        let int = |idx: usize, name: &str| -> Result<i64> {
            field(idx)?.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{name} is not an integer"),
            })
        };
        let time: f64 = field(si)?.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: "time is not a number".into(),
        })?;
        rows.push(Row {
            line: line_no,
            trial: int(ti, "trial")?,
            neuron: int(ni, "neuron")?,
            time,
        });
    }
    Ok(rows)
}

fn parse_ndjson<R: BufRead>(reader: R) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| read_err(line_no, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        rows.push(Row {
            line: line_no,
            trial: row.trial,
            neuron: row.neuron,
            time: row.time,
        });
    }
    Ok(rows)
}

/// Labels already in `1..=n` keep their meaning; otherwise the distinct labels
/// are packed densely in sorted order.
fn label_map(labels: impl Iterator<Item = i64>, n: usize, what: &str) -> Result<HashMap<i64, usize>> {
    let distinct: BTreeSet<i64> = labels.collect();
    if distinct.iter().all(|&l| l >= 1 && l as usize <= n) {
        return Ok(distinct.into_iter().map(|l| (l, l as usize - 1)).collect());
    }
    if distinct.len() > n {
        return Err(Error::Validation(format!(
            "{} distinct {what} labels but metadata declares {n}",
            distinct.len()
        )));
    }
    Ok(distinct.into_iter().enumerate().map(|(k, l)| (l, k)).collect())
}

fn assemble(rows: Vec<Row>, meta: &Metadata) -> Result<ExperimentData> {
    let trial_of = label_map(rows.iter().map(|r| r.trial), meta.n_trials, "trial")?;
    let neuron_of = label_map(rows.iter().map(|r| r.neuron), meta.nu, "neuron")?;
    let mut times = vec![vec![Vec::new(); meta.nu]; meta.n_trials];
    for row in &rows {
        if !row.time.is_finite() || row.time < 0.0 || row.time >= meta.duration {
            return Err(Error::Validation(format!(
                "line {}: time {} outside [0, {})",
                row.line, row.time, meta.duration
            )));
        }
        times[trial_of[&row.trial]][neuron_of[&row.neuron]].push((row.time, row.line));
    }
    let mut trials = Vec::with_capacity(meta.n_trials);
    for trial in times {
        let mut trains = Vec::with_capacity(meta.nu);
        for mut train in trial {
            train.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = train.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Validation(format!(
                    "line {}: duplicate event at time {}",
                    w[1].1, w[1].0
                )));
            }
            trains.push(SpikeTrain::new(
                train.into_iter().map(|(t, _)| t).collect(),
                meta.duration,
            )?);
        }
        trials.push(trains);
    }
    ExperimentData::new(meta.duration, meta.nu, trials)
}

/// Writes every event sorted by (trial, neuron, time). Times use the shortest
/// decimal representation that parses back to the same `f64`.
pub fn write_experiment<W: Write>(data: &ExperimentData, mut out: W, format: Format) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    if format == Format::Csv {
        writeln!(out, "trial,neuron,time").map_err(io)?;
    }
    for (r, trial) in data.trials().iter().enumerate() {
        for (i, train) in trial.iter().enumerate() {
            for t in train.times() {
                match format {
                    Format::Csv => writeln!(out, "{},{},{}", r + 1, i + 1, t),
                    Format::Ndjson => {
                        writeln!(out, "{{\"trial\":{},\"neuron\":{},\"time\":{}}}", r + 1, i + 1, t)
                    }
                }
                .map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

/// Writes the event file and its metadata sidecar.
pub fn save_experiment(data: &ExperimentData, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_experiment(data, BufWriter::new(file), format)?;
    data.metadata().save(&sidecar_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(t: f64, nu: usize, n: usize) -> Metadata {
        Metadata {
            duration: t,
            nu,
            n_trials: n,
        }
    }

    #[test]
    fn reads_single_train() {
        let text = "trial,neuron,time\n1,1,0.1\n1,1,0.2\n";
        let d = read_experiment(text.as_bytes(), Format::Csv, &meta(1.0, 1, 1)).unwrap();
        assert_eq!(d.neuron_count(), 1);
        assert_eq!(d.train(0, 0).times(), &[0.1, 0.2]);
    }

    #[test]
    fn empty_file_yields_silent_neurons() {
        let d = read_experiment("trial,neuron,time\n".as_bytes(), Format::Csv, &meta(1.0, 2, 1)).unwrap();
        assert_eq!(d.spike_count(), 0);
        assert_eq!(d.neuron_count(), 2);
        let d = read_experiment("".as_bytes(), Format::Ndjson, &meta(1.0, 2, 3)).unwrap();
        assert_eq!(d.trial_count(), 3);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "trial,neuron,time\n1,1,0.1\n1,x,0.2\n";
        match read_experiment(text.as_bytes(), Format::Csv, &meta(1.0, 1, 1)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "{\"trial\":1,\"neuron\":1,\"time\":0.1}\n{\"trial\":1}\n";
        match read_experiment(text.as_bytes(), Format::Ndjson, &meta(1.0, 1, 1)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_window_and_duplicates() {
        let late = "trial,neuron,time\n1,1,1.0\n";
        assert!(matches!(
            read_experiment(late.as_bytes(), Format::Csv, &meta(1.0, 1, 1)),
            Err(Error::Validation(_))
        ));
        let neg = "trial,neuron,time\n1,1,-0.5\n";
        assert!(read_experiment(neg.as_bytes(), Format::Csv, &meta(1.0, 1, 1)).is_err());
        let dup = "trial,neuron,time\n1,1,0.5\n1,1,0.5\n";
        assert!(matches!(
            read_experiment(dup.as_bytes(), Format::Csv, &meta(1.0, 1, 1)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn sparse_labels_are_packed() {
        let text = "trial,neuron,time\n4,10,0.1\n4,30,0.2\n";
        let d = read_experiment(text.as_bytes(), Format::Csv, &meta(1.0, 2, 1)).unwrap();
        assert_eq!(d.train(0, 0).times(), &[0.1]);
        assert_eq!(d.train(0, 1).times(), &[0.2]);
    }

    #[test]
    fn extra_columns_and_header_order() {
        let text = "time,mark,neuron,trial\n0.25,1+2,2,1\n";
        let d = read_experiment(text.as_bytes(), Format::Csv, &meta(1.0, 2, 1)).unwrap();
        assert_eq!(d.train(0, 1).times(), &[0.25]);
    }
}
