//! Grouped statistics over finished unit logs, rendered as SVG plots and CSV tables.

mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::VariableDesc;
use crate::experiment::{parse_descriptor, ExperimentDescriptor};
use crate::params::ParamValue;
use crate::runner::log::{read_log, EpisodeKind, EpisodeLog, LogError, RESOLVED_FILE, SUMMARY_FILE, UNIT_FILE};
use crate::runner::{RunState, RunStatus, UnitLog, EXPERIMENT_FILE};

pub use svg::{render_svg, PlotStyle};

/// Per-episode pseudo-variable taken from the episode summary.
pub const STEPS_VARIABLE: &str = "steps";
/// Logged variable whose per-episode value is the episode total rather than the mean.
pub const REWARD_VARIABLE: &str = "reward";
pub const DEFAULT_LAST_K: usize = 3;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("empty query: no variables selected")]
    EmptyQuery,
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("unknown group-by path '{0}'")]
    UnknownPath(String),
    #[error("group '{0}' has no matching episodes")]
    NoEpisodes(String),
    #[error("nothing to plot")]
    EmptySeries,
    #[error("resample_points must be at least 1")]
    BadResample,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindFilter {
    Train,
    Eval,
    #[default]
    Both,
}

impl KindFilter {
    fn accepts(self, k: EpisodeKind) -> bool {
        match self {
            KindFilter::Train => k == EpisodeKind::Train,
            KindFilter::Eval => k == EpisodeKind::Eval,
            KindFilter::Both => true,
        }
    }
}

fn default_points() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportQuery {
    pub variables: Vec<String>,
    #[serde(default)]
    pub group_by: Option<String>,
    #[serde(default)]
    pub episode_kind: KindFilter,
    #[serde(default = "default_points")]
    pub resample_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub group: String,
    pub variable: String,
    pub units: String,
    pub n: usize,
    pub episode: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitResult {
    pub unit_id: String,
    pub assignments: BTreeMap<String, ParamValue>,
    pub resolved: Option<ExperimentDescriptor>,
    pub log: Option<UnitLog>,
    /// Why the unit could not be read, if it could not.
    pub unreadable: Option<String>,
}

impl UnitResult {
    pub fn status(&self) -> Option<&RunStatus> {
        self.log.as_ref().map(|l| &l.status)
    }

    pub fn failed(&self) -> bool {
        self.status().is_some_and(|s| s.state == RunState::Failed)
    }

    /// Value of `path` for this unit: its fork assignment, else the resolved descriptor.
    pub fn value_at(&self, path: &str) -> Option<ParamValue> {
        self.assignments.get(path).cloned().or_else(|| self.resolved.as_ref()?.get(path))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResults {
    pub descriptor: Option<ExperimentDescriptor>,
    pub units: Vec<UnitResult>,
    pub warnings: Vec<String>,
}

impl ExperimentResults {
    pub fn readable(&self) -> impl Iterator<Item = &UnitResult> {
        self.units.iter().filter(|u| u.log.is_some())
    }
}

#[derive(Deserialize)]
struct UnitFile {
    unit_id: String,
    #[serde(default)]
    assignments: BTreeMap<String, ParamValue>,
}

fn unit_dirs(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(rd) = std::fs::read_dir(dir) else { return };
    let mut subs: Vec<PathBuf> = rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    subs.sort();
    for s in subs {
        if s.join(UNIT_FILE).is_file() || s.join(SUMMARY_FILE).is_file() || s.join(RESOLVED_FILE).is_file() {
            out.push(s);
        } else {
            unit_dirs(&s, out);
        }
    }
}

fn load_unit(dir: &Path, root: &Path) -> UnitResult {
    let fallback_id = dir.strip_prefix(root).unwrap_or(dir).to_string_lossy().replace('\\', "/");
    let unit: Option<UnitFile> =
        std::fs::read_to_string(dir.join(UNIT_FILE)).ok().and_then(|t| serde_json::from_str(&t).ok());
    let resolved = std::fs::read_to_string(dir.join(RESOLVED_FILE)).ok().and_then(|t| parse_descriptor(&t).ok());
    let (unit_id, assignments) = match unit {
        Some(u) => (u.unit_id, u.assignments),
        None => (fallback_id, BTreeMap::new()),
    };
    let (log, unreadable) = match read_log(dir) {
        Ok(l) => (Some(l), None),
        Err(LogError::Io { path, source }) => (None, Some(format!("{}: {source}", path.display()))),
        Err(e) => (None, Some(e.to_string())),
    };
    UnitResult { unit_id, assignments, resolved, log, unreadable }
}

/// Loads every unit below `dir`, which is either an experiment directory or
/// the output root holding exactly one experiment.
pub fn load_experiment(dir: &Path) -> Result<ExperimentResults, ReportError> {
    if !dir.is_dir() {
        return Err(ReportError::Io { path: dir.into(), message: "not a directory".into() });
    }
    let mut out = ExperimentResults::default();
    let mut root = dir.to_path_buf();
    if !root.join(EXPERIMENT_FILE).is_file() {
        let candidates: Vec<PathBuf> = std::fs::read_dir(dir)
            .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.join(EXPERIMENT_FILE).is_file()).collect())
            .unwrap_or_default();
        if let [only] = candidates.as_slice() {
            root = only.clone();
        }
    }
    if let Ok(t) = std::fs::read_to_string(root.join(EXPERIMENT_FILE)) {
        match parse_descriptor(&t) {
            Ok(d) => out.descriptor = Some(d),
            Err(e) => out.warnings.push(format!("{EXPERIMENT_FILE}: {e}")),
        }
    }
    let base = root.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if out.descriptor.is_some() { base } else { root.clone() };
    let mut dirs = Vec::new();
    unit_dirs(&root, &mut dirs);
    for d in dirs {
        let u = load_unit(&d, &base);
        if let Some(why) = &u.unreadable {
            out.warnings.push(format!("unit {} unreadable: {why}", u.unit_id));
        }
        out.units.push(u);
    }
    out.units.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
    if out.units.is_empty() {
        out.warnings.push(format!("no units found under {}", dir.display()));
    }
    Ok(out)
}

pub fn group_key(v: &ParamValue) -> String {
    serde_json::to_string(v).expect("param value serializes")
}

/// Partitions readable units by their value at `path`, in order of first
/// appearance. Without a path, all units form one group keyed `all`.
pub fn group_units<'a>(units: &[&'a UnitResult], path: Option<&str>) -> Result<Vec<(String, Vec<&'a UnitResult>)>, ReportError> {
    let mut groups: Vec<(String, Vec<&UnitResult>)> = Vec::new();
    for &u in units {
        let key = match path {
            None => "all".to_string(),
            Some(p) => group_key(&u.value_at(p).ok_or_else(|| ReportError::UnknownPath(p.to_string()))?),
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(u),
            None => groups.push((key, vec![u])),
        }
    }
    Ok(groups)
}

fn episode_value(ep: &EpisodeLog, idx: Option<usize>, is_reward: bool) -> f64 {
    match idx {
        None => ep.summary.steps as f64,
        Some(_) if is_reward => ep.summary.total_reward,
        Some(i) => {
            if ep.records.is_empty() {
                return f64::NAN;
            }
            ep.records.iter().map(|r| r.values[i]).sum::<f64>() / ep.records.len() as f64
        }
    }
}

/// Per-episode values of `variable` over the episodes accepted by `kind`.
pub fn episode_series(log: &UnitLog, variable: &str, kind: KindFilter) -> Result<Vec<f64>, ReportError> {
    let idx = if variable == STEPS_VARIABLE {
        None
    } else {
        Some(
            log.variables
                .iter()
                .position(|v| v.name == variable)
                .ok_or_else(|| ReportError::UnknownVariable(variable.to_string()))?,
        )
    };
    let is_reward = variable == REWARD_VARIABLE;
    Ok(log
        .episodes
        .iter()
        .filter(|e| kind.accepts(e.summary.kind))
        .map(|e| episode_value(e, idx, is_reward))
        .collect())
}

/// Samples `series` at `points` evenly spaced fractions of its own length
/// with linear interpolation.
pub fn resample(series: &[f64], points: usize) -> Vec<f64> {
    let m = series.len();
    (0..points)
        .map(|j| {
            let t = if points > 1 { j as f64 / (points - 1) as f64 } else { 0.0 };
            let x = t * (m - 1) as f64;
            let i = (x.floor() as usize).min(m - 1);
            let f = x - i as f64;
            if i + 1 < m {
                series[i] + f * (series[i + 1] - series[i])
            } else {
                series[i]
            }
        })
        .collect()
}

fn unit_of(log: &UnitLog, variable: &str) -> String {
    log.variables.iter().find(|v: &&VariableDesc| v.name == variable).map(|v| v.units.clone()).unwrap_or_default()
}

/// Pointwise mean, population std, min and max of the group's resampled series.
pub fn compute_series(group_key: &str, group: &[&UnitResult], variable: &str, query: &ReportQuery) -> Result<SeriesStats, ReportError> {
    if query.resample_points == 0 {
        return Err(ReportError::BadResample);
    }
    let p = query.resample_points;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut longest = 0usize;
    let mut units = String::new();
    for u in group {
        let Some(log) = &u.log else { continue };
        let s = episode_series(log, variable, query.episode_kind)?;
        if s.is_empty() {
            continue;
        }
        units = unit_of(log, variable);
        longest = longest.max(s.len());
        rows.push(resample(&s, p));
    }
    if rows.is_empty() {
        return Err(ReportError::NoEpisodes(group_key.to_string()));
    }
    let n = rows.len() as f64;
    let mut st = SeriesStats {
        group: group_key.to_string(),
        variable: variable.to_string(),
        units,
        n: rows.len(),
        episode: (0..p).map(|j| if p > 1 { j as f64 * (longest - 1) as f64 / (p - 1) as f64 } else { 0.0 }).collect(),
        mean: Vec::with_capacity(p),
        std: Vec::with_capacity(p),
        min: Vec::with_capacity(p),
        max: Vec::with_capacity(p),
    };
    for j in 0..p {
        let col = rows.iter().map(|r| r[j]);
        let mean = col.clone().sum::<f64>() / n;
        let var = col.clone().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        st.mean.push(mean);
        st.std.push(var.sqrt());
        st.min.push(col.clone().fold(f64::INFINITY, f64::min));
        st.max.push(col.fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(st)
}

/// Checks a query against loaded results.
pub fn validate_query(results: &ExperimentResults, query: &ReportQuery) -> Result<(), ReportError> {
    if query.variables.is_empty() {
        return Err(ReportError::EmptyQuery);
    }
    if query.resample_points == 0 {
        return Err(ReportError::BadResample);
    }
    for v in &query.variables {
        let known = v == STEPS_VARIABLE
            || results.readable().any(|u| u.log.as_ref().is_some_and(|l| l.variables.iter().any(|d| &d.name == v)));
        if !known {
            return Err(ReportError::UnknownVariable(v.clone()));
        }
    }
    Ok(())
}

/// Series for every (group, variable) pair of the query, groups outermost.
pub fn run_query(results: &ExperimentResults, query: &ReportQuery) -> Result<Vec<SeriesStats>, ReportError> {
    validate_query(results, query)?;
    let units: Vec<&UnitResult> = results.readable().collect();
    let groups = group_units(&units, query.group_by.as_deref())?;
    let mut out = Vec::new();
    for (key, members) in &groups {
        for v in &query.variables {
            out.push(compute_series(key, members, v, query)?);
        }
    }
    Ok(out)
}

/// Mean total reward over the final `k` evaluation episodes.
pub fn last_eval_score(unit: &UnitResult, k: usize) -> Option<f64> {
    let log = unit.log.as_ref()?;
    let evals: Vec<f64> = log
        .episodes
        .iter()
        .filter(|e| e.summary.kind == EpisodeKind::Eval)
        .map(|e| e.summary.total_reward)
        .collect();
    let tail = &evals[evals.len().saturating_sub(k.max(1))..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Units by descending score, ties in unit-id order; unscored units last.
pub fn rank_units(results: &ExperimentResults, k: usize) -> Vec<(String, Option<f64>)> {
    let mut v: Vec<(String, Option<f64>)> = results.units.iter().map(|u| (u.unit_id.clone(), last_eval_score(u, k))).collect();
    v.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    v
}

pub const TABLE_HEADER: [&str; 8] = ["group", "point", "episode", "mean", "std", "min", "max", "variable"];

pub fn render_table(series: &[SeriesStats]) -> Result<String, ReportError> {
    if series.is_empty() {
        return Err(ReportError::EmptySeries);
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| ReportError::Io { path: PathBuf::from("<table>"), message: e.to_string() };
    w.write_record(TABLE_HEADER).map_err(io)?;
    for s in series {
        for j in 0..s.mean.len() {
            w.write_record([
                s.group.clone(),
                j.to_string(),
                s.episode[j].to_string(),
                s.mean[j].to_string(),
                s.std[j].to_string(),
                s.min[j].to_string(),
                s.max[j].to_string(),
                s.variable.clone(),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io { path: PathBuf::from("<table>"), message: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_out(path: &Path, text: &str) -> Result<(), ReportError> {
    std::fs::write(path, text).map_err(|e| ReportError::Io { path: path.into(), message: e.to_string() })
}

pub fn emit_table(series: &[SeriesStats], out: &Path) -> Result<(), ReportError> {
    write_out(out, &render_table(series)?)
}

pub fn emit_plot(series: &[SeriesStats], style: &PlotStyle, out: &Path) -> Result<(), ReportError> {
    write_out(out, &render_svg(series, style)?)
}

/// Legend text for a group: `path=value`, or the key itself without a path.
pub fn group_label(group_by: Option<&str>, key: &str) -> String {
    match group_by {
        Some(p) => format!("{}={key}", p.rsplit('/').next().unwrap_or(p)),
        None => key.to_string(),
    }
}
