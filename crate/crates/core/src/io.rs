//! TOML file formats for experiment configs, click histograms and results.
//!
//! Every reader reports failures as [`Error::Parse`] naming the file, and
//! where possible the line and field at fault.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{ConvolutionMatrix, MultiplexConfig, DEFAULT_TRUNCATION};
use crate::error::{Error, Result};
use crate::estimation::{CalibrationResult, EstimatorOptions};
use crate::forward::JointOutcomeStatistics;
use crate::simulation::{DetectorSetup, ExperimentConfig, SourceConfig, SourceKind};

pub const HISTOGRAM_FORMAT: &str = "pnrcal-click-histogram";
pub const RESULT_FORMAT: &str = "pnrcal-calibration-result";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One detector as written in config and histogram files. Give either `bins`
/// (equal split) or explicit `bin_probabilities`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
    /// Mean background photons per pulse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<f64>,
}

impl DetectorSpec {
    pub fn from_multiplex(config: &MultiplexConfig) -> Self {
        DetectorSpec {
            bin_probabilities: Some(config.bin_probabilities().to_vec()),
            ..Default::default()
        }
    }

    pub fn multiplex(&self) -> Result<MultiplexConfig> {
        match (self.bins, &self.bin_probabilities) {
            (Some(b), None) => MultiplexConfig::uniform(b),
            (None, Some(p)) => MultiplexConfig::new(p.clone()),
            (Some(b), Some(p)) if p.len() == b => MultiplexConfig::new(p.clone()),
            (Some(b), Some(p)) => Err(Error::InvalidInput(format!(
                "bins = {b} but {} bin probabilities given",
                p.len()
            ))),
            (None, None) => Err(Error::InvalidInput(
                "detector needs `bins` or `bin_probabilities`".into(),
            )),
        }
    }
}

/// Detector description consumed by `estimate`, `scan` and `subtract`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    pub detector1: DetectorSpec,
    pub detector2: DetectorSpec,
}

impl DetectorsFile {
    pub fn multiplex(&self) -> Result<(MultiplexConfig, MultiplexConfig)> {
        Ok((self.detector1.multiplex()?, self.detector2.multiplex()?))
    }
}

/// Simulation input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    pub source: SourceKind,
    pub detector1: DetectorSpec,
    pub detector2: DetectorSpec,
}

impl ExperimentFile {
    pub fn to_config(&self) -> Result<ExperimentConfig> {
        let setup = |d: &DetectorSpec, name: &str| -> Result<DetectorSetup> {
            let efficiency = d.efficiency.ok_or_else(|| {
                Error::InvalidInput(format!("{name}.efficiency is required for simulation"))
            })?;
            Ok(DetectorSetup::new(
                d.multiplex()?,
                efficiency,
                d.background.unwrap_or(0.0),
            ))
        };
        let config = ExperimentConfig {
            source: SourceConfig::new(
                self.source.clone(),
                self.truncation.unwrap_or(DEFAULT_TRUNCATION),
            ),
            detector1: setup(&self.detector1, "detector1")?,
            detector2: setup(&self.detector2, "detector2")?,
            trials: self.trials,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Joint click histogram with acquisition metadata. Exactly one of `counts`
/// and `probabilities` is present, stored row-major with rows indexed by
/// detector 1 clicks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramFile {
    pub format: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    /// Simulated pulses beyond the photon-number truncation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overflow: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<Vec<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector1: Option<DetectorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector2: Option<DetectorSpec>,
}

impl HistogramFile {
    pub fn new(statistics: &JointOutcomeStatistics) -> Self {
        let (counts, probabilities) = match statistics {
            JointOutcomeStatistics::Counts { counts, .. } => (Some(rows(counts)), None),
            JointOutcomeStatistics::Probabilities(p) => (None, Some(rows(p))),
        };
        HistogramFile {
            format: HISTOGRAM_FORMAT.into(),
            version: TOOL_VERSION.into(),
            label: None,
            trials: statistics.trials(),
            seed: None,
            rng: None,
            overflow: None,
            truncation: None,
            counts,
            probabilities,
            detector1: None,
            detector2: None,
        }
    }

    /// Checks the invariants and returns the statistics.
    pub fn statistics(&self) -> Result<JointOutcomeStatistics> {
        if self.format != HISTOGRAM_FORMAT {
            return Err(Error::InvalidInput(format!(
                "format is `{}`, expected `{HISTOGRAM_FORMAT}`",
                self.format
            )));
        }
        let stats = match (&self.counts, &self.probabilities) {
            (Some(c), None) => {
                let stats = JointOutcomeStatistics::from_counts(matrix(c, "counts")?)?;
                if let Some(t) = self.trials {
                    if stats.trials() != Some(t) {
                        return Err(Error::InvalidInput(format!(
                            "counts sum to {}, but trials = {t}",
                            stats.trials().unwrap_or(0)
                        )));
                    }
                }
                stats
            }
            (None, Some(p)) => {
                JointOutcomeStatistics::from_probabilities(matrix(p, "probabilities")?)?
            }
            _ => {
                return Err(Error::InvalidInput(
                    "exactly one of `counts` and `probabilities` is required".into(),
                ))
            }
        };
        let (rows, cols) = stats.shape();
        for (spec, n, name) in [
            (&self.detector1, rows, "detector1"),
            (&self.detector2, cols, "detector2"),
        ] {
            if let Some(spec) = spec {
                let bins = spec.multiplex()?.bins();
                if bins + 1 != n {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} has {bins} bins but the histogram has {n} click outcomes on its axis"
                    )));
                }
            }
        }
        Ok(stats)
    }

    /// Detector geometries embedded as metadata, if both are present.
    pub fn detectors(&self) -> Option<Result<(MultiplexConfig, MultiplexConfig)>> {
        let (d1, d2) = (self.detector1.as_ref()?, self.detector2.as_ref()?);
        Some(d1.multiplex().and_then(|m1| Ok((m1, d2.multiplex()?))))
    }
}

fn rows<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix<T: nalgebra::Scalar + Copy>(rows: &[Vec<T>], field: &str) -> Result<DMatrix<T>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::InvalidInput(format!("`{field}` is empty")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!(
            "`{field}` row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Solver settings embedded in a result so it can be reproduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub truncation: usize,
    pub grid: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub flatness: f64,
}

impl SolverSettings {
    pub fn new(truncation: usize, options: &EstimatorOptions) -> Self {
        SolverSettings {
            truncation,
            grid: options.grid,
            tolerance: options.tolerance,
            max_iterations: options.max_iterations,
            flatness: options.flatness,
        }
    }

    pub fn options(&self) -> EstimatorOptions {
        EstimatorOptions {
            grid: self.grid,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            flatness: self.flatness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDigest {
    pub histogram: String,
    pub histogram_sha256: String,
    pub detectors: String,
    pub detectors_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub seconds: f64,
}

/// Persisted calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub format: String,
    pub version: String,
    pub eta1: f64,
    pub eta2: f64,
    pub residual: f64,
    pub converged: bool,
    /// Set when the residual is flat; the efficiencies are then the
    /// tie-broken representative.
    pub ambiguous: bool,
    pub unidentifiable: Vec<String>,
    pub iterations: usize,
    pub evaluations: usize,
    /// Raw fitted pair-number weights.
    pub weights: Vec<f64>,
    /// Normalized pair-number distribution.
    pub state: Vec<f64>,
    pub mean_pair_number: f64,
    pub input: InputDigest,
    pub settings: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl ResultFile {
    pub fn new(
        result: &CalibrationResult,
        unidentifiable: Vec<String>,
        input: InputDigest,
        settings: SolverSettings,
    ) -> Result<Self> {
        let state = result.state()?;
        Ok(ResultFile {
            format: RESULT_FORMAT.into(),
            version: TOOL_VERSION.into(),
            eta1: result.eta1,
            eta2: result.eta2,
            residual: result.residual,
            converged: result.converged,
            ambiguous: !unidentifiable.is_empty(),
            unidentifiable,
            iterations: result.iterations,
            evaluations: result.evaluations,
            weights: result.weights.clone(),
            mean_pair_number: state.mean_photon_number(),
            state: state.diagonal().to_vec(),
            input,
            settings,
            timing: None,
        })
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        file: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        file: path.display().to_string(),
        source,
    })
}

/// Parses TOML text, mapping failures to [`Error::Parse`] with location.
pub fn parse_toml<T: DeserializeOwned>(text: &str, file: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let message = e.message().to_string();
        let field = missing_field(&message).or_else(|| {
            let l = line?;
            let src = text.lines().nth(l - 1)?;
            let (key, _) = src.split_once('=')?;
            Some(key.trim().to_string())
        });
        Error::Parse {
            file: file.to_string(),
            line,
            field,
            message,
        }
    })
}

fn missing_field(message: &str) -> Option<String> {
    let rest = message.split("missing field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

/// Line of the first assignment to `key`, for locating validation errors.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|r| r.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

/// Wraps a validation error of a parsed file with the file name and, when
/// the message names a known field, its line.
fn locate(err: Error, text: &str, file: &str, fields: &[&str]) -> Error {
    match err {
        Error::InvalidInput(message) | Error::DimensionMismatch(message) => {
            let field = fields
                .iter()
                .find(|f| message.contains(*f))
                .map(|f| f.to_string());
            Error::Parse {
                file: file.to_string(),
                line: field.as_deref().and_then(|f| line_of(text, f)),
                field,
                message,
            }
        }
        other => other,
    }
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, String)> {
    let text = read_text(path)?;
    let value = parse_toml(&text, &path.display().to_string())?;
    Ok((value, text))
}

const KNOWN_FIELDS: &[&str] = &[
    "bin_probabilities",
    "efficiency",
    "background",
    "bins",
    "trials",
    "counts",
    "probabilities",
    "format",
    "truncation",
    "lambda",
    "mean_pairs",
    "weights",
];

/// Reads and validates an experiment config, returning it with the raw file.
pub fn read_experiment(path: &Path) -> Result<(ExperimentConfig, ExperimentFile)> {
    let (file, text): (ExperimentFile, _) = load(path)?;
    let config = file
        .to_config()
        .map_err(|e| locate(e, &text, &path.display().to_string(), KNOWN_FIELDS))?;
    Ok((config, file))
}

pub fn read_detectors(path: &Path) -> Result<DetectorsFile> {
    let (file, text): (DetectorsFile, _) = load(path)?;
    file.multiplex()
        .map_err(|e| locate(e, &text, &path.display().to_string(), KNOWN_FIELDS))?;
    Ok(file)
}

/// Reads a histogram file, returning the validated statistics with the raw
/// file contents.
pub fn read_histogram(path: &Path) -> Result<(JointOutcomeStatistics, HistogramFile)> {
    let (file, text): (HistogramFile, _) = load(path)?;
    let stats = file
        .statistics()
        .map_err(|e| locate(e, &text, &path.display().to_string(), KNOWN_FIELDS))?;
    Ok((stats, file))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Numerical(format!("cannot serialize output: {e}")))
}

/// Convolution matrices for a pair of detector geometries.
pub fn convolution_pair(
    detectors: &(MultiplexConfig, MultiplexConfig),
    truncation: usize,
) -> Result<(ConvolutionMatrix, ConvolutionMatrix)> {
    Ok((
        ConvolutionMatrix::new(&detectors.0, truncation)?,
        ConvolutionMatrix::new(&detectors.1, truncation)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_round_trip() {
        let counts = DMatrix::from_row_slice(2, 3, &[5u64, 1, 0, 2, 1, 1]);
        let stats = JointOutcomeStatistics::from_counts(counts).unwrap();
        let text = to_toml(&HistogramFile::new(&stats)).unwrap();
        let back: HistogramFile = parse_toml(&text, "h.toml").unwrap();
        assert_eq!(back.statistics().unwrap(), stats);
    }

    #[test]
    fn parse_error_names_line_and_field() {
        let text = "format = \"pnrcal-click-histogram\"\nversion = \"0\"\ntrials = \"many\"\n";
        match parse_toml::<HistogramFile>(text, "bad.toml") {
            Err(Error::Parse {
                file, line, field, ..
            }) => {
                assert_eq!(file, "bad.toml");
                assert_eq!(line, Some(3));
                assert_eq!(field.as_deref(), Some("trials"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = "trials = 10\n[source]\nkind = \"two-mode-squeezed-vacuum\"\nlambda = 0.1\n";
        match parse_toml::<ExperimentFile>(text, "exp.toml") {
            Err(Error::Parse { field, .. }) => assert_eq!(field.as_deref(), Some("detector1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn counts_must_match_trials() {
        let text = "format = \"pnrcal-click-histogram\"\nversion = \"0\"\ntrials = 7\ncounts = [[1, 2], [3, 0]]\n";
        let file: HistogramFile = parse_toml(text, "h.toml").unwrap();
        assert!(file.statistics().is_err());
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let text = "format = \"pnrcal-click-histogram\"\nversion = \"0\"\ncounts = [[1, 2], [3]]\n";
        let file: HistogramFile = parse_toml(text, "h.toml").unwrap();
        assert!(file.statistics().is_err());
    }

    #[test]
    fn detector_spec_forms() {
        let uniform = DetectorSpec {
            bins: Some(4),
            ..Default::default()
        };
        assert_eq!(uniform.multiplex().unwrap().bins(), 4);
        let neither = DetectorSpec::default();
        assert!(neither.multiplex().is_err());
        let clash = DetectorSpec {
            bins: Some(3),
            bin_probabilities: Some(vec![0.5, 0.5]),
            ..Default::default()
        };
        assert!(clash.multiplex().is_err());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
