//! On-disk formats for run reports, rankings, models, predictions and
//! stability summaries. Every file carries the digest of the manifest that
//! produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::predictor::{FittedModel, Prediction};
use crate::sampler::{MhStats, RunReport, TraceRecord};
use crate::selection::SelectionRanking;
use crate::simgen::GroundTruth;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_PREFIX: &str = "manifest=";
pub const KEPT_PREFIX: &str = "kept=";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// What a command was asked to do. Output paths and the creation time are
/// recorded but do not enter the digest, so reruns into other locations
/// share it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub settings: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub created_unix: u64,
}

#[derive(Serialize)]
struct DigestView<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    settings: &'a BTreeMap<String, String>,
    inputs: Vec<(&'a str, &'a str)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            settings: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.to_string(), value.to_string());
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn digest(&self) -> String {
        let view = DigestView {
            command: &self.command,
            version: &self.version,
            seed: self.seed,
            settings: &self.settings,
            inputs: self
                .inputs
                .iter()
                .map(|i| (i.role.as_str(), i.sha256.as_str()))
                .collect(),
        };
        sha256_hex(&serde_json::to_vec(&view).expect("manifest view serializes"))
    }
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn check_format(path: &Path, found: &str, expected: &str, version: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "{}: expected a {expected} file, found {found:?}",
            path.display()
        )));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported {expected} version {version}",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCount {
    pub feature: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub manifest_digest: String,
    pub manifest: RunManifest,
    pub selection_counts: Vec<FeatureCount>,
    pub kept: usize,
    pub burn_in: usize,
    pub mh: MhStats,
    pub mh_accept_rate: f64,
    pub wall_time_secs: f64,
    pub config: crate::model::HyperParams,
    pub traces: Option<Vec<TraceRecord>>,
}

const REPORT_FORMAT: &str = "pmbvs-run-report";
const MODEL_FORMAT: &str = "pmbvs-model";

impl ReportFile {
    pub fn new(report: &RunReport, manifest: &RunManifest) -> Self {
        ReportFile {
            format: REPORT_FORMAT.into(),
            version: FORMAT_VERSION,
            manifest_digest: manifest.digest(),
            manifest: manifest.clone(),
            selection_counts: report
                .feature_names
                .iter()
                .zip(&report.selection_counts)
                .map(|(f, &count)| FeatureCount {
                    feature: f.clone(),
                    count,
                })
                .collect(),
            kept: report.kept,
            burn_in: report.burn_in,
            mh: report.mh,
            mh_accept_rate: report.mh_accept_rate,
            wall_time_secs: report.wall_time_secs,
            config: report.config.clone(),
            traces: report.traces.clone(),
        }
    }

    pub fn to_report(&self) -> RunReport {
        RunReport {
            feature_names: self.selection_counts.iter().map(|c| c.feature.clone()).collect(),
            selection_counts: self.selection_counts.iter().map(|c| c.count).collect(),
            mh: self.mh,
            mh_accept_rate: self.mh_accept_rate,
            burn_in: self.burn_in,
            kept: self.kept,
            traces: self.traces.clone(),
            wall_time_secs: self.wall_time_secs,
            config: self.config.clone(),
        }
    }
}

pub fn write_report(path: &Path, report: &RunReport, manifest: &RunManifest) -> Result<()> {
    write_json(path, &ReportFile::new(report, manifest))
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    let file: ReportFile = read_json(path)?;
    check_format(path, &file.format, REPORT_FORMAT, file.version)?;
    Ok(file)
}

fn csv_bytes<F>(comments: &[String], header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    for c in comments {
        buf.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush().map_err(|e| Error::io(Path::new("<buffer>"), e))?;
    }
    Ok(buf)
}

/// Per-feature counts in column order; byte-identical across reruns of the
/// same manifest.
pub fn selection_counts_csv(report: &RunReport, digest: &str) -> Result<Vec<u8>> {
    csv_bytes(
        &[
            format!("{MANIFEST_PREFIX}{digest}"),
            format!("{KEPT_PREFIX}{}", report.kept),
        ],
        &["feature", "count"],
        |w| {
            for (f, c) in report.feature_names.iter().zip(&report.selection_counts) {
                w.write_record([f.as_str(), &c.to_string()])?;
            }
            Ok(())
        },
    )
}

pub fn write_selection_counts(path: &Path, report: &RunReport, digest: &str) -> Result<()> {
    write_atomic(path, &selection_counts_csv(report, digest)?)
}

/// Ranked features followed by the never-selected ones, so the file covers
/// every column.
pub fn write_ranking(
    path: &Path,
    ranking: &SelectionRanking,
    report: &RunReport,
    digest: &str,
) -> Result<()> {
    let bytes = csv_bytes(
        &[
            format!("{MANIFEST_PREFIX}{digest}"),
            format!("{KEPT_PREFIX}{}", ranking.kept),
        ],
        &["rank", "feature", "count", "frequency"],
        |w| {
            for (i, r) in ranking.ranked.iter().enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    r.feature.clone(),
                    r.count.to_string(),
                    r.frequency.to_string(),
                ])?;
            }
            for (j, f) in report.feature_names.iter().enumerate() {
                if report.selection_counts[j] == 0 {
                    w.write_record(["", f, "0", "0"])?;
                }
            }
            Ok(())
        },
    )?;
    write_atomic(path, &bytes)
}

/// Comment lines of a CSV file as `key=value` pairs.
fn comment_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Feature names, counts and kept iterations from a ranking or
/// selection-count CSV.
pub fn read_counts_csv(path: &Path) -> Result<(Vec<String>, Vec<u64>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta = comment_values(&text);
    let kept = meta
        .get("kept")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: missing '# kept=' line", path.display())))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (fcol, ccol) = (col("feature")?, col("count")?);
    let (mut names, mut counts) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        names.push(rec[fcol].to_string());
        counts.push(
            rec[ccol]
                .parse()
                .map_err(|_| Error::Format(format!("{}: bad count {:?}", path.display(), &rec[ccol])))?,
        );
    }
    Ok((names, counts, kept))
}

/// Names, counts and kept iterations from a report JSON or a counts CSV.
pub fn read_run_counts(path: &Path) -> Result<(Vec<String>, Vec<u64>, usize)> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let r = read_report(path)?.to_report();
        Ok((r.feature_names, r.selection_counts, r.kept))
    } else {
        read_counts_csv(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub manifest_digest: String,
    pub manifest: RunManifest,
    pub model: FittedModel,
}

pub fn write_model(path: &Path, model: &FittedModel, manifest: &RunManifest) -> Result<()> {
    write_json(
        path,
        &ModelFile {
            format: MODEL_FORMAT.into(),
            version: FORMAT_VERSION,
            manifest_digest: manifest.digest(),
            manifest: manifest.clone(),
            model: model.clone(),
        },
    )
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let file: ModelFile = read_json(path)?;
    check_format(path, &file.format, MODEL_FORMAT, file.version)?;
    Ok(file)
}

/// One row per observation: id, group, probability, label, and the true
/// class when known.
pub fn write_predictions(
    path: &Path,
    predictions: &[Prediction],
    groups: Option<&[String]>,
    y: Option<&[u8]>,
    digest: &str,
) -> Result<()> {
    let mut header = vec!["row", "group", "probability", "label"];
    if y.is_some() {
        header.push("y");
    }
    let bytes = csv_bytes(&[format!("{MANIFEST_PREFIX}{digest}")], &header, |w| {
        for (i, p) in predictions.iter().enumerate() {
            let mut rec = vec![
                (i + 1).to_string(),
                groups.map(|g| g[i].clone()).unwrap_or_default(),
                p.prob_positive.to_string(),
                p.label.as_str().to_string(),
            ];
            if let Some(y) = y {
                rec.push(y[i].to_string());
            }
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub manifest_digest: String,
    pub manifest: RunManifest,
    pub truth: GroundTruth,
}

pub fn write_truth(path: &Path, truth: &GroundTruth, manifest: &RunManifest) -> Result<()> {
    write_json(
        path,
        &TruthFile {
            manifest_digest: manifest.digest(),
            manifest: manifest.clone(),
            truth: truth.clone(),
        },
    )
}

pub fn read_truth(path: &Path) -> Result<TruthFile> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSubset {
    pub run: String,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub manifest_digest: String,
    pub manifest: RunManifest,
    pub p_total: usize,
    pub runs: usize,
    pub cw_rel: f64,
    pub subsets: Vec<RunSubset>,
}

pub fn write_stability(path: &Path, summary: &StabilitySummary) -> Result<()> {
    write_json(path, summary)
}

/// `(feature, runs containing it)` rows.
pub fn write_overlap(path: &Path, rows: &[(String, usize)], digest: &str) -> Result<()> {
    let bytes = csv_bytes(
        &[format!("{MANIFEST_PREFIX}{digest}")],
        &["feature", "runs"],
        |w| {
            for (f, n) in rows {
                w.write_record([f.as_str(), &n.to_string()])?;
            }
            Ok(())
        },
    )?;
    write_atomic(path, &bytes)
}
