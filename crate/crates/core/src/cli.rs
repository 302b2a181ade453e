//! Batch commands behind the `pnrcal` binary.
//!
//! Each command reads its inputs from files, writes its output to a file and
//! is deterministic: identical inputs give byte-identical outputs (unless
//! timing is requested).

use std::path::Path;
use std::time::Instant;

use crate::background::{
    equivalence_csv, solve_loss_background_equivalence, subtract_background, EquivalenceOptions,
};
use crate::detector::DEFAULT_TRUNCATION;
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_efficiencies, klyshko_efficiency, scan_residual_landscape, EfficiencyGrid,
    EstimatorOptions, KlyshkoRates,
};
use crate::io::{
    convolution_pair, read_detectors, read_experiment, read_histogram, read_text, sha256_hex,
    to_toml, write_text, DetectorSpec, HistogramFile, InputDigest, ResultFile, SolverSettings,
    Timing,
};
use crate::simulation::{simulate_clicks_exact, simulate_clicks_mc, RNG_ALGORITHM};

/// Flags shared by all subcommands; `None` keeps the file or library default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GlobalOptions {
    pub seed: Option<u64>,
    pub truncation: Option<usize>,
    pub grid: Option<usize>,
    pub tolerance: Option<f64>,
}

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Ambiguous { .. } | Error::UndefinedEstimate(_) => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

/// Simulates the experiment in `config` and writes a histogram: sampled
/// counts, or exact probabilities when `exact` is set.
pub fn cmd_simulate(
    config: &Path,
    out: &Path,
    exact: bool,
    global: &GlobalOptions,
) -> Result<HistogramFile> {
    let (mut cfg, raw) = read_experiment(config)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(n) = global.truncation {
        cfg.source.truncation = n;
    }
    let mut file = if exact {
        HistogramFile::new(&simulate_clicks_exact(&cfg)?)
    } else {
        let sampled = simulate_clicks_mc(&cfg)?;
        let mut file = HistogramFile::new(&sampled.statistics);
        file.seed = Some(cfg.seed);
        file.rng = Some(RNG_ALGORITHM.into());
        file.overflow = Some(sampled.overflow);
        file
    };
    file.label = raw.label;
    file.truncation = Some(cfg.source.truncation);
    file.detector1 = Some(DetectorSpec::from_multiplex(&cfg.detector1.multiplex));
    file.detector2 = Some(DetectorSpec::from_multiplex(&cfg.detector2.multiplex));
    write_text(out, &to_toml(&file)?)?;
    Ok(file)
}

fn estimator_options(global: &GlobalOptions) -> EstimatorOptions {
    let mut options = EstimatorOptions::default();
    if let Some(grid) = global.grid {
        options.grid = grid;
    }
    if let Some(tol) = global.tolerance {
        options.tolerance = tol;
    }
    options
}

/// Estimates both efficiencies and writes a result file.
///
/// An ambiguous estimate is still written (with `ambiguous = true`) before
/// the [`Error::Ambiguous`] is returned.
pub fn cmd_estimate(
    histogram: &Path,
    detectors: &Path,
    out: &Path,
    timing: bool,
    global: &GlobalOptions,
) -> Result<ResultFile> {
    let started = Instant::now();
    let (stats, _) = read_histogram(histogram)?;
    let det = read_detectors(detectors)?;
    let truncation = global
        .truncation
        .or(det.truncation)
        .unwrap_or(DEFAULT_TRUNCATION);
    let (c1, c2) = convolution_pair(&det.multiplex()?, truncation)?;
    let options = estimator_options(global);

    let (result, unidentifiable, failure) = match estimate_efficiencies(&stats, &c1, &c2, &options)
    {
        Ok(r) => (r, Vec::new(), None),
        Err(Error::Ambiguous {
            unidentifiable,
            best,
        }) => {
            let names = unidentifiable.iter().map(|p| p.to_string()).collect();
            let best_copy = (*best).clone();
            (
                best_copy,
                names,
                Some(Error::Ambiguous {
                    unidentifiable,
                    best,
                }),
            )
        }
        Err(e) => return Err(e),
    };
    let input = InputDigest {
        histogram: histogram.display().to_string(),
        histogram_sha256: sha256_hex(read_text(histogram)?.as_bytes()),
        detectors: detectors.display().to_string(),
        detectors_sha256: sha256_hex(read_text(detectors)?.as_bytes()),
    };
    let mut file = ResultFile::new(
        &result,
        unidentifiable,
        input,
        SolverSettings::new(truncation, &options),
    )?;
    if timing {
        file.timing = Some(Timing {
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    write_text(out, &to_toml(&file)?)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(file),
    }
}

/// Klyshko estimates `(eta_s, eta_i)` from a histogram; detector 1 is the
/// signal arm.
pub fn cmd_klyshko(histogram: &Path) -> Result<(f64, f64)> {
    let (stats, _) = read_histogram(histogram)?;
    klyshko_efficiency(&KlyshkoRates::from_histogram(&stats))
}

/// Removes a measured background from a measured histogram. Detector
/// geometries come from `detectors` or, failing that, from the measured
/// histogram's metadata.
pub fn cmd_subtract(
    measured: &Path,
    background: &Path,
    out: &Path,
    detectors: Option<&Path>,
) -> Result<(HistogramFile, f64)> {
    let (rm, meta) = read_histogram(measured)?;
    let (rb, _) = read_histogram(background)?;
    let geometry = match detectors {
        Some(path) => read_detectors(path)?.multiplex()?,
        None => meta.detectors().ok_or_else(|| {
            Error::InvalidInput(format!(
                "{} carries no detector metadata; pass --detectors",
                measured.display()
            ))
        })??,
    };
    // only the square block of each response is used
    let (c1, _) = convolution_pair(&geometry, geometry.0.bins() + 1)?;
    let (_, c2) = convolution_pair(&geometry, geometry.1.bins() + 1)?;
    let sub = subtract_background(&rm, &rb, &c1, &c2)?;
    let mut file = HistogramFile::new(&sub.statistics);
    file.label = Some(format!(
        "background-subtracted; clipped mass {:e}; regularized frequencies {}",
        sub.clipped_mass, sub.regularized_frequencies
    ));
    file.detector1 = Some(DetectorSpec::from_multiplex(&geometry.0));
    file.detector2 = Some(DetectorSpec::from_multiplex(&geometry.1));
    write_text(out, &to_toml(&file)?)?;
    Ok((file, sub.clipped_mass))
}

/// Writes the residual landscape over `grid` (`n` or `lo:hi:n`) as CSV.
pub fn cmd_scan(
    histogram: &Path,
    detectors: &Path,
    grid: &str,
    out: &Path,
    global: &GlobalOptions,
) -> Result<usize> {
    let (stats, _) = read_histogram(histogram)?;
    let det = read_detectors(detectors)?;
    let truncation = global
        .truncation
        .or(det.truncation)
        .unwrap_or(DEFAULT_TRUNCATION);
    let (c1, c2) = convolution_pair(&det.multiplex()?, truncation)?;
    let grid = EfficiencyGrid::parse(grid)?;
    let landscape = scan_residual_landscape(&stats, &c1, &c2, &grid)?;
    write_text(out, &landscape.to_csv())?;
    Ok(landscape.basins().len())
}

/// Parses `lo:hi:n` into `n` evenly spaced values.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("range `{spec}` is not `lo:hi:n`"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    match n {
        0 => Err(bad()),
        1 => Ok(vec![lo]),
        _ => Ok((0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()),
    }
}

/// Writes the loss/background equivalence curve for photon range `m` as CSV.
pub fn cmd_equivalence(m: usize, alphas: &str, out: &Path) -> Result<usize> {
    let alphas = parse_range(alphas)?;
    let points = solve_loss_background_equivalence(m, &alphas, &EquivalenceOptions::default())?;
    write_text(out, &equivalence_csv(m, &points))?;
    Ok(points.iter().filter(|p| p.solved).count())
}
