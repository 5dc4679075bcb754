//! Per-unit log directory: `descriptor.resolved.json`, `unit.json`,
//! `variables.json`, `episodes.csv`, `summary.json` and the non-deterministic
//! `timing.json`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::RunStatus;
use crate::env::VariableDesc;
use crate::experiment::canonical_json;

pub const RESOLVED_FILE: &str = "descriptor.resolved.json";
pub const UNIT_FILE: &str = "unit.json";
pub const VARIABLES_FILE: &str = "variables.json";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";

/// Files whose bytes depend only on the unit and its seed.
pub const DETERMINISTIC_FILES: [&str; 5] = [RESOLVED_FILE, UNIT_FILE, VARIABLES_FILE, EPISODES_FILE, SUMMARY_FILE];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeKind {
    Train,
    Eval,
}

impl EpisodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeKind::Train => "train",
            EpisodeKind::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub sim_time: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub kind: EpisodeKind,
    pub steps: u64,
    pub total_reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub summary: EpisodeSummary,
    pub records: Vec<LogRecord>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitLog {
    pub variables: Vec<VariableDesc>,
    pub episodes: Vec<EpisodeLog>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub episodes: Vec<EpisodeSummary>,
    pub status: RunStatus,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{file}: byte {offset}: record {record}: {message}")]
    Corrupt { file: String, offset: u64, record: usize, message: String },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.to_path_buf(), source }
}

/// `{}` formatting of `f64` is the shortest decimal that parses back exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Streams one unit's episodes to disk.
pub struct LogWriter {
    dir: PathBuf,
    csv: BufWriter<File>,
    summaries: Vec<EpisodeSummary>,
    wall_ms: Vec<u64>,
    width: usize,
}

impl LogWriter {
    pub fn create(dir: &Path, variables: &[VariableDesc]) -> Result<Self, LogError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let vars = serde_json::to_value(variables).expect("variables serialize");
        write_file(&dir.join(VARIABLES_FILE), canonical_json(&vars).as_bytes())?;
        let path = dir.join(EPISODES_FILE);
        let mut csv = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        let mut header = String::from("episode,kind,step,sim_time");
        for i in 0..variables.len() {
            header.push_str(&format!(",v{i}"));
        }
        header.push('\n');
        csv.write_all(header.as_bytes()).map_err(io_err(&path))?;
        Ok(LogWriter { dir: dir.to_path_buf(), csv, summaries: Vec::new(), wall_ms: Vec::new(), width: variables.len() })
    }

    pub fn write_episode(&mut self, ep: &EpisodeLog) -> Result<(), LogError> {
        let mut buf = String::new();
        for r in &ep.records {
            assert_eq!(r.values.len(), self.width, "record width");
            buf.push_str(&format!("{},{},{},{}", ep.summary.episode, ep.summary.kind.as_str(), r.step, fmt_f64(r.sim_time)));
            for v in &r.values {
                buf.push(',');
                buf.push_str(&fmt_f64(*v));
            }
            buf.push('\n');
        }
        let path = self.dir.join(EPISODES_FILE);
        self.csv.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        self.summaries.push(ep.summary.clone());
        self.wall_ms.push(ep.wall_ms);
        Ok(())
    }

    pub fn finish(mut self, status: &RunStatus) -> Result<(), LogError> {
        let path = self.dir.join(EPISODES_FILE);
        self.csv.flush().map_err(io_err(&path))?;
        let summary = SummaryFile { episodes: self.summaries, status: status.clone() };
        let v = serde_json::to_value(&summary).expect("summary serializes");
        write_file(&self.dir.join(SUMMARY_FILE), canonical_json(&v).as_bytes())?;
        let timing = serde_json::json!({ "wall_ms": self.wall_ms });
        write_file(&self.dir.join(TIMING_FILE), canonical_json(&timing).as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), LogError> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_log(dir: &Path, log: &UnitLog) -> Result<(), LogError> {
    let mut w = LogWriter::create(dir, &log.variables)?;
    for ep in &log.episodes {
        w.write_episode(ep)?;
    }
    w.finish(&log.status)
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T, LogError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| LogError::Invalid { file: name.into(), message: e.to_string() })
}

pub fn read_summary(dir: &Path) -> Result<SummaryFile, LogError> {
    read_json(dir, SUMMARY_FILE)
}

pub fn read_variables(dir: &Path) -> Result<Vec<VariableDesc>, LogError> {
    read_json(dir, VARIABLES_FILE)
}

/// Reads a unit directory back. `wall_ms` is taken from `timing.json` when present.
pub fn read_log(dir: &Path) -> Result<UnitLog, LogError> {
    let variables = read_variables(dir)?;
    let summary = read_summary(dir)?;
    let records = read_records(dir, variables.len())?;
    let wall: Vec<u64> = read_json::<serde_json::Value>(dir, TIMING_FILE)
        .ok()
        .and_then(|v| serde_json::from_value(v["wall_ms"].clone()).ok())
        .unwrap_or_default();

    let mut episodes: Vec<EpisodeLog> = summary
        .episodes
        .iter()
        .enumerate()
        .map(|(i, s)| EpisodeLog { summary: s.clone(), records: Vec::new(), wall_ms: wall.get(i).copied().unwrap_or(0) })
        .collect();
    for (n, (episode, kind, offset, rec)) in records.into_iter().enumerate() {
        let Some(ep) = episodes.iter_mut().find(|e| e.summary.episode == episode) else {
            return Err(corrupt(offset, n, format!("episode {episode} has no summary")));
        };
        if ep.summary.kind != kind {
            return Err(corrupt(offset, n, format!("episode {episode} kind disagrees with summary")));
        }
        if let Some(last) = ep.records.last() {
            if !(rec.step > last.step && rec.sim_time > last.sim_time) {
                return Err(corrupt(offset, n, "steps out of order".into()));
            }
        }
        ep.records.push(rec);
    }
    for ep in &episodes {
        if let Some(last) = ep.records.last() {
            if last.step != ep.summary.steps {
                return Err(LogError::Invalid {
                    file: EPISODES_FILE.into(),
                    message: format!(
                        "episode {} ends at step {} but its summary reports {} steps (truncated?)",
                        ep.summary.episode, last.step, ep.summary.steps
                    ),
                });
            }
        } else if ep.summary.steps > 0 {
            return Err(LogError::Invalid {
                file: EPISODES_FILE.into(),
                message: format!("episode {} has no records", ep.summary.episode),
            });
        }
    }
    Ok(UnitLog { variables, episodes, status: summary.status })
}

fn corrupt(offset: u64, record: usize, message: String) -> LogError {
    LogError::Corrupt { file: EPISODES_FILE.into(), offset, record, message }
}

type Row = (u64, EpisodeKind, u64, LogRecord);

/// Parses `episodes.csv`; record indices count data rows from 0.
pub fn read_records(dir: &Path, width: usize) -> Result<Vec<Row>, LogError> {
    let path = dir.join(EPISODES_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = rdr.headers().map_err(|e| corrupt(0, 0, e.to_string()))?.clone();
    let expected: Vec<String> = ["episode", "kind", "step", "sim_time"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..width).map(|i| format!("v{i}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(corrupt(0, 0, format!("header does not match {} variables", width)));
    }
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let idx = out.len();
        let offset = rdr.position().byte();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(corrupt(offset, idx, e.to_string())),
        }
        let end = rdr.position().byte() as usize;
        if end > bytes.len() || (end == bytes.len() && bytes.last() != Some(&b'\n')) {
            return Err(corrupt(offset, idx, "record is not terminated by a newline (truncated)".into()));
        }
        if record.len() != 4 + width {
            return Err(corrupt(offset, idx, format!("expected {} fields, found {}", 4 + width, record.len())));
        }
        let bad = |what: &str| corrupt(offset, idx, format!("unparseable {what}"));
        let episode: u64 = record[0].parse().map_err(|_| bad("episode"))?;
        let kind = match &record[1] {
            "train" => EpisodeKind::Train,
            "eval" => EpisodeKind::Eval,
            _ => return Err(bad("kind")),
        };
        let step: u64 = record[2].parse().map_err(|_| bad("step"))?;
        let sim_time: f64 = record[3].parse().map_err(|_| bad("sim_time"))?;
        let values = (4..record.len())
            .map(|i| record[i].parse::<f64>().map_err(|_| bad(&format!("v{}", i - 4))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push((episode, kind, offset, LogRecord { step, sim_time, values }));
    }
    Ok(out)
}
