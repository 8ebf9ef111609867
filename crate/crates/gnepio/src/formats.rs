//! On-disk formats.
//!
//! Node numbers in network, TNTP and sidecar files are 1-based, as in the
//! TNTP convention. The index columns of flow CSVs (`od_index`, `player`,
//! `arc`) are 0-based positions into the pair list, player list and arc list.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use gnepio_core::analysis::TrialSummary;
use gnepio_core::game::{CostMode, CostParameterization, GameError};
use gnepio_core::inverse::{InverseError, ObservationSet};
use gnepio_core::network::{Network, NetworkError, OdPair};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Network { path: PathBuf, source: NetworkError },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> FormatError + '_ {
    move |source| FormatError::Json { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> FormatError + '_ {
    move |source| FormatError::Csv { path: path.to_path_buf(), source }
}

fn invalid(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Invalid { path: path.to_path_buf(), message: message.into() }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    write_text(path, &text)
}

// ---------------------------------------------------------------- networks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcRecord {
    pub tail: usize,
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub nodes: usize,
    pub arcs: Vec<ArcRecord>,
}

impl NetworkFile {
    pub fn from_network(net: &Network) -> Self {
        NetworkFile {
            name: Some(net.name().to_string()),
            nodes: net.node_count(),
            arcs: net.arcs().iter().map(|a| ArcRecord { tail: a.tail + 1, head: a.head + 1 }).collect(),
        }
    }

    pub fn into_network(self, fallback_name: &str) -> Result<Network, NetworkError> {
        let arcs: Vec<(usize, usize)> = self.arcs.iter().map(|a| (a.tail, a.head)).collect();
        let name = self.name.unwrap_or_else(|| fallback_name.to_string());
        Network::from_one_based_arcs(name, self.nodes, &arcs)
    }
}

pub fn network_to_json(net: &Network) -> String {
    let mut text = serde_json::to_string_pretty(&NetworkFile::from_network(net)).expect("network serializes");
    text.push('\n');
    text
}

/// Parses the native JSON network format; `path` only labels errors.
pub fn parse_network_json(text: &str, path: &Path) -> Result<Network, FormatError> {
    let file: NetworkFile = serde_json::from_str(text).map_err(json_err(path))?;
    file.into_network(&file_stem(path))
        .map_err(|source| FormatError::Network { path: path.to_path_buf(), source })
}

/// Parses the link table of a TNTP network file.
///
/// Metadata lines (`<...>`) and comments (`~...`) are skipped; every other
/// nonblank line is a record whose first two fields are the init and term
/// node. `<NUMBER OF NODES>` fixes the node count when present, otherwise
/// the largest node number seen is used.
pub fn parse_tntp(text: &str, path: &Path) -> Result<Network, FormatError> {
    let mut declared_nodes = None;
    let mut arcs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let parse_err = |message: String| FormatError::Parse { path: path.to_path_buf(), line: lineno + 1, message };
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('<') {
            if let Some((key, value)) = rest.split_once('>') {
                if key.trim().eq_ignore_ascii_case("NUMBER OF NODES") {
                    let value = value.trim();
                    let n = value
                        .parse::<usize>()
                        .map_err(|_| parse_err(format!("bad node count {value:?}")))?;
                    declared_nodes = Some(n);
                }
            }
            continue;
        }
        let mut fields = line.split_whitespace().filter(|f| *f != ";");
        let mut node = |what: &str| -> Result<usize, FormatError> {
            let field = fields.next().ok_or_else(|| parse_err(format!("missing {what}")))?;
            field.parse::<usize>().map_err(|_| parse_err(format!("{what} {field:?} is not a node number")))
        };
        let tail = node("init_node")?;
        let head = node("term_node")?;
        arcs.push((tail, head));
    }
    let seen = arcs.iter().map(|&(t, h)| t.max(h)).max().unwrap_or(0);
    let nodes = declared_nodes.unwrap_or(seen);
    Network::from_one_based_arcs(file_stem(path), nodes, &arcs)
        .map_err(|source| FormatError::Network { path: path.to_path_buf(), source })
}

/// Loads a network, choosing the parser by extension (`.tntp` or JSON).
pub fn read_network(path: &Path) -> Result<Network, FormatError> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tntp")) {
        parse_tntp(&text, path)
    } else {
        parse_network_json(&text, path)
    }
}

pub fn write_network(path: &Path, net: &Network) -> Result<(), FormatError> {
    write_text(path, &network_to_json(net))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "network".into())
}

// ------------------------------------------------------------------- costs

pub fn parse_cost_mode(text: &str) -> Option<CostMode> {
    match text {
        "shared" => Some(CostMode::SharedAcrossPlayers),
        "per-player" => Some(CostMode::PerPlayer),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostsFile {
    pub mode: String,
    pub c_int: Vec<Vec<f64>>,
    pub c_base: Vec<Vec<f64>>,
}

impl CostsFile {
    pub fn from_params(params: &CostParameterization) -> Self {
        CostsFile {
            mode: params.mode().label().to_string(),
            c_int: params.c_int_rows().to_vec(),
            c_base: params.c_base_rows().to_vec(),
        }
    }

    pub fn into_params(self, path: &Path) -> Result<CostParameterization, FormatError> {
        let mode =
            parse_cost_mode(&self.mode).ok_or_else(|| invalid(path, format!("unknown cost mode {:?}", self.mode)))?;
        Ok(CostParameterization::new(mode, self.c_int, self.c_base)?)
    }
}

pub fn parse_costs_json(text: &str, path: &Path) -> Result<CostParameterization, FormatError> {
    let file: CostsFile = serde_json::from_str(text).map_err(json_err(path))?;
    file.into_params(path)
}

pub fn read_costs(path: &Path) -> Result<CostParameterization, FormatError> {
    parse_costs_json(&read_text(path)?, path)
}

pub fn write_costs(path: &Path, params: &CostParameterization) -> Result<(), FormatError> {
    write_json(path, &CostsFile::from_params(params))
}

// ------------------------------------------------------------ flow tensors

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub od_index: usize,
    pub player: usize,
    pub arc: usize,
    pub flow: f64,
}

/// Writes stacked `N × n` flow vectors, one per OD pair, as CSV rows.
pub fn write_flows(path: &Path, arcs: usize, players: usize, flows: &[Vec<f64>]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for (od_index, x) in flows.iter().enumerate() {
        for player in 0..players {
            for arc in 0..arcs {
                let row = FlowRow { od_index, player, arc, flow: x[player * arcs + arc] };
                writer.serialize(row).map_err(csv_err(path))?;
            }
        }
    }
    writer.flush().map_err(io_err(path))
}

/// Reads a flow CSV into `pairs` stacked vectors; absent rows are zero.
pub fn read_flows(path: &Path, pairs: usize, players: usize, arcs: usize) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut flows = vec![vec![0.0; players * arcs]; pairs];
    let mut seen = HashSet::new();
    for (i, row) in reader.deserialize::<FlowRow>().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let line = i + 2;
        let bad = |message: String| FormatError::Parse { path: path.to_path_buf(), line, message };
        if row.od_index >= pairs || row.player >= players || row.arc >= arcs {
            return Err(bad(format!(
                "index ({}, {}, {}) outside {pairs} pairs × {players} players × {arcs} arcs",
                row.od_index, row.player, row.arc
            )));
        }
        if !seen.insert((row.od_index, row.player, row.arc)) {
            return Err(bad("duplicate entry".into()));
        }
        if !row.flow.is_finite() {
            return Err(bad(format!("flow {} is not finite", row.flow)));
        }
        flows[row.od_index][row.player * arcs + row.arc] = row.flow;
    }
    Ok(flows)
}

// ------------------------------------------------------------ observations

/// JSON sidecar of an observation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSidecar {
    /// Network file, relative to the sidecar's directory unless absolute.
    pub network: String,
    pub players: usize,
    /// Joint capacity per arc.
    pub alpha: Vec<f64>,
    /// OD pairs as 1-based `[origin, destination]`, indexed by `od_index`.
    pub pairs: Vec<[usize; 2]>,
}

/// The sidecar sits next to the CSV with a `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `obs` as CSV plus sidecar; `network_ref` is stored verbatim.
pub fn write_observations(csv_path: &Path, obs: &ObservationSet, network_ref: &str) -> Result<(), FormatError> {
    let flows: Vec<Vec<f64>> = (0..obs.len()).map(|k| obs.flows(k).to_vec()).collect();
    write_flows(csv_path, obs.network().arc_count(), obs.players(), &flows)?;
    let sidecar = ObservationSidecar {
        network: network_ref.to_string(),
        players: obs.players(),
        alpha: obs.capacity().to_vec(),
        pairs: obs.pairs().iter().map(|od| [od.origin + 1, od.destination + 1]).collect(),
    };
    write_json(&sidecar_path(csv_path), &sidecar)
}

/// Reads an observation CSV, its sidecar and the referenced network.
pub fn read_observations(csv_path: &Path) -> Result<ObservationSet, FormatError> {
    let side_path = sidecar_path(csv_path);
    let sidecar: ObservationSidecar = serde_json::from_str(&read_text(&side_path)?).map_err(json_err(&side_path))?;
    let mut net_path = PathBuf::from(&sidecar.network);
    if net_path.is_relative() {
        if let Some(dir) = side_path.parent() {
            net_path = dir.join(net_path);
        }
    }
    let network = read_network(&net_path)?;
    let pairs = sidecar
        .pairs
        .iter()
        .map(|&[o, d]| OdPair::from_one_based(o, d, network.node_count()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| FormatError::Network { path: side_path.clone(), source })?;
    if sidecar.alpha.len() != network.arc_count() {
        return Err(invalid(
            &side_path,
            format!("alpha has {} entries for {} arcs", sidecar.alpha.len(), network.arc_count()),
        ));
    }
    let flows = read_flows(csv_path, pairs.len(), sidecar.players, network.arc_count())?;
    Ok(ObservationSet::new(network, sidecar.players, sidecar.alpha, pairs, flows)?)
}

// ---------------------------------------------------------------- summaries

/// One boxplot row: a metric's quartiles and whiskers within a group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub group: String,
    pub summary: TrialSummary,
}

#[derive(Serialize, Deserialize)]
struct SummaryCsvRow {
    metric: String,
    group: String,
    q1: f64,
    median: f64,
    q3: f64,
    whisker_low: f64,
    whisker_high: f64,
    /// Semicolon-separated.
    outliers: String,
}

/// Summary rows as CSV text.
pub fn summary_csv(rows: &[SummaryRow]) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        let s = &row.summary;
        let outliers: Vec<String> = s.outliers.iter().map(|v| v.to_string()).collect();
        writer.serialize(SummaryCsvRow {
            metric: row.metric.clone(),
            group: row.group.clone(),
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            whisker_low: s.whisker_low,
            whisker_high: s.whisker_high,
            outliers: outliers.join(";"),
        })?;
    }
    let bytes = writer.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), FormatError> {
    let text = summary_csv(rows).map_err(csv_err(path))?;
    write_text(path, &text)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, FormatError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<SummaryCsvRow>().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let outliers = row
            .outliers
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FormatError::Parse { path: path.to_path_buf(), line: i + 2, message: e.to_string() })?;
        rows.push(SummaryRow {
            metric: row.metric,
            group: row.group,
            summary: TrialSummary {
                q1: row.q1,
                median: row.median,
                q3: row.q3,
                whisker_low: row.whisker_low,
                whisker_high: row.whisker_high,
                outliers,
            },
        });
    }
    Ok(rows)
}
