//! Synthetic twin-beam sources and click histograms.
//!
//! Two independent routes produce click statistics for the same experiment:
//! [`simulate_clicks_exact`] multiplies the model matrices, while
//! [`simulate_clicks_mc`] samples every pulse photon by photon. Their agreement
//! is the oracle behind the round-trip tests of the estimator.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::add_background;
use crate::detector::{check_efficiency, ConvolutionMatrix, MultiplexConfig, DEFAULT_TRUNCATION};
use crate::error::{invalid, Result};
use crate::forward::{predict_joint, CorrelatedState, JointOutcomeStatistics};

/// Name of the generator used by [`simulate_clicks_mc`], recorded in outputs.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9), one stream per block of 65536 pulses";

const BLOCK: u64 = 1 << 16;

/// Pair-number distribution family of a twin-beam source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceKind {
    /// Single-mode squeezed vacuum: `c_n = (1 - λ²) λ^{2n}`.
    TwoModeSqueezedVacuum { lambda: f64 },
    /// Many-mode limit: Poissonian pair number with mean `mean_pairs`.
    MultimodePoissonianCorrelated { mean_pairs: f64 },
    /// Explicit weights, normalized on use.
    CustomDiagonal { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub truncation: usize,
}

impl SourceConfig {
    pub fn new(kind: SourceKind, truncation: usize) -> Self {
        SourceConfig { kind, truncation }
    }

    pub fn tmsv(lambda: f64, truncation: usize) -> Self {
        Self::new(SourceKind::TwoModeSqueezedVacuum { lambda }, truncation)
    }

    /// Squeezed vacuum whose `λ²` grows linearly with pump power.
    pub fn tmsv_from_pump(pump_power: f64, lambda_sq_per_power: f64, truncation: usize) -> Self {
        Self::tmsv(
            (lambda_sq_per_power * pump_power).max(0.0).sqrt(),
            truncation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.truncation == 0 {
            return Err(invalid("source truncation must be at least 1"));
        }
        match &self.kind {
            SourceKind::TwoModeSqueezedVacuum { lambda } => {
                if !lambda.is_finite() || lambda.abs() >= 1.0 {
                    return Err(invalid(format!(
                        "squeezing |lambda| = {} must be below 1",
                        lambda.abs()
                    )));
                }
            }
            SourceKind::MultimodePoissonianCorrelated { mean_pairs } => {
                if !(*mean_pairs >= 0.0 && mean_pairs.is_finite()) {
                    return Err(invalid(format!(
                        "mean pair number {mean_pairs} must be nonnegative"
                    )));
                }
            }
            SourceKind::CustomDiagonal { weights } => {
                if weights.is_empty() || weights.len() > self.truncation {
                    return Err(invalid(format!(
                        "custom state needs 1..={} weights, got {}",
                        self.truncation,
                        weights.len()
                    )));
                }
                if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
                    return Err(invalid("custom weights must be finite and nonnegative"));
                }
                if weights.iter().sum::<f64>() <= 0.0 {
                    return Err(invalid("custom weights sum to zero"));
                }
            }
        }
        Ok(())
    }
}

/// Pair-number distribution of the configured source, truncated to
/// `0..truncation` and renormalized.
pub fn make_source_state(config: &SourceConfig) -> Result<CorrelatedState> {
    config.validate()?;
    let n = config.truncation;
    let weights = match &config.kind {
        SourceKind::TwoModeSqueezedVacuum { lambda } => {
            let x = lambda * lambda;
            let mut w = Vec::with_capacity(n);
            let mut term = 1.0 - x;
            for _ in 0..n {
                w.push(term);
                term *= x;
            }
            w
        }
        SourceKind::MultimodePoissonianCorrelated { mean_pairs } => {
            crate::background::poisson_pmf(*mean_pairs, n)
        }
        SourceKind::CustomDiagonal { weights } => {
            let mut w = weights.clone();
            w.resize(n, 0.0);
            w
        }
    };
    CorrelatedState::normalized(weights)
}

/// One detector as seen by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSetup {
    pub multiplex: MultiplexConfig,
    pub efficiency: f64,
    /// Mean number of background photons per pulse reaching this detector.
    pub background: f64,
}

impl DetectorSetup {
    pub fn new(multiplex: MultiplexConfig, efficiency: f64, background: f64) -> Self {
        DetectorSetup {
            multiplex,
            efficiency,
            background,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: SourceConfig,
    pub detector1: DetectorSetup,
    pub detector2: DetectorSetup,
    pub trials: u64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// 8-bin detectors, no background, default truncation.
    pub fn simple(kind: SourceKind, eta1: f64, eta2: f64, trials: u64, seed: u64) -> Result<Self> {
        let tmd = MultiplexConfig::uniform(8)?;
        Ok(ExperimentConfig {
            source: SourceConfig::new(kind, DEFAULT_TRUNCATION),
            detector1: DetectorSetup::new(tmd.clone(), eta1, 0.0),
            detector2: DetectorSetup::new(tmd, eta2, 0.0),
            trials,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        check_efficiency(self.detector1.efficiency, "detector1 efficiency")?;
        check_efficiency(self.detector2.efficiency, "detector2 efficiency")?;
        for (i, d) in [&self.detector1, &self.detector2].iter().enumerate() {
            if !(d.background >= 0.0 && d.background.is_finite()) {
                return Err(invalid(format!(
                    "detector{} background {} must be nonnegative",
                    i + 1,
                    d.background
                )));
            }
        }
        Ok(())
    }

    /// Convolution matrices of both detectors at the source truncation.
    pub fn convolution_matrices(&self) -> Result<(ConvolutionMatrix, ConvolutionMatrix)> {
        Ok((
            ConvolutionMatrix::new(&self.detector1.multiplex, self.source.truncation)?,
            ConvolutionMatrix::new(&self.detector2.multiplex, self.source.truncation)?,
        ))
    }
}

/// Exact click probabilities for the configured experiment.
pub fn simulate_clicks_exact(config: &ExperimentConfig) -> Result<JointOutcomeStatistics> {
    config.validate()?;
    let state = make_source_state(&config.source)?;
    let sigma = add_background(
        &state.to_joint(),
        config.detector1.background,
        config.detector2.background,
    )?;
    let (c1, c2) = config.convolution_matrices()?;
    predict_joint(
        &c1,
        config.detector1.efficiency,
        &sigma,
        config.detector2.efficiency,
        &c2,
    )
}

/// Sampled click histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledHistogram {
    pub statistics: JointOutcomeStatistics,
    /// Pulses in which a beam held at least `truncation` photons before
    /// loss, i.e. beyond the range of the exact model.
    pub overflow: u64,
}

enum PairSampler {
    Geometric(Geometric),
    Poisson(Option<Poisson<f64>>),
    Weighted(WeightedIndex<f64>),
}

impl PairSampler {
    fn new(kind: &SourceKind) -> Result<Self> {
        Ok(match kind {
            SourceKind::TwoModeSqueezedVacuum { lambda } => PairSampler::Geometric(
                Geometric::new(1.0 - lambda * lambda).map_err(|e| invalid(e.to_string()))?,
            ),
            SourceKind::MultimodePoissonianCorrelated { mean_pairs } => {
                PairSampler::Poisson(poisson(*mean_pairs)?)
            }
            SourceKind::CustomDiagonal { weights } => PairSampler::Weighted(
                WeightedIndex::new(weights).map_err(|e| invalid(e.to_string()))?,
            ),
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            PairSampler::Geometric(g) => g.sample(rng),
            PairSampler::Poisson(p) => p.as_ref().map_or(0, |p| p.sample(rng) as u64),
            PairSampler::Weighted(w) => w.sample(rng) as u64,
        }
    }
}

fn poisson(mean: f64) -> Result<Option<Poisson<f64>>> {
    if mean == 0.0 {
        Ok(None)
    } else {
        Poisson::new(mean)
            .map(Some)
            .map_err(|e| invalid(e.to_string()))
    }
}

struct Arm {
    background: Option<Poisson<f64>>,
    efficiency: f64,
    router: WeightedIndex<f64>,
    bins: usize,
}

impl Arm {
    fn new(setup: &DetectorSetup) -> Result<Self> {
        Ok(Arm {
            background: poisson(setup.background)?,
            efficiency: setup.efficiency,
            router: WeightedIndex::new(setup.multiplex.bin_probabilities())
                .map_err(|e| invalid(e.to_string()))?,
            bins: setup.multiplex.bins(),
        })
    }

    /// Photons entering the detector for `pairs` signal photons.
    fn incident<R: Rng>(&self, pairs: u64, rng: &mut R) -> u64 {
        pairs + self.background.as_ref().map_or(0, |p| p.sample(rng) as u64)
    }

    /// Occupied-bin count for `photons` incident photons.
    fn clicks<R: Rng>(&self, photons: u64, rng: &mut R, occupied: &mut [bool]) -> usize {
        let survivors = if photons == 0 {
            0
        } else {
            Binomial::new(photons, self.efficiency)
                .expect("efficiency validated")
                .sample(rng)
        };
        occupied.iter_mut().for_each(|b| *b = false);
        let mut clicks = 0;
        for _ in 0..survivors {
            let bin = self.router.sample(rng);
            if !occupied[bin] {
                occupied[bin] = true;
                clicks += 1;
                if clicks == self.bins {
                    break;
                }
            }
        }
        clicks
    }
}

/// Pulse-by-pulse Monte Carlo of the experiment. The histogram depends only
/// on the configuration (including its seed), not on the thread count.
pub fn simulate_clicks_mc(config: &ExperimentConfig) -> Result<SampledHistogram> {
    config.validate()?;
    let pairs = PairSampler::new(&config.source.kind)?;
    let arm1 = Arm::new(&config.detector1)?;
    let arm2 = Arm::new(&config.detector2)?;
    let shape = (arm1.bins + 1, arm2.bins + 1);
    let truncation = config.source.truncation as u64;
    let blocks = config.trials.div_ceil(BLOCK);

    let partials: Vec<(Vec<u64>, u64)> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
            rng.set_stream(block);
            let start = block * BLOCK;
            let end = (start + BLOCK).min(config.trials);
            let mut counts = vec![0u64; shape.0 * shape.1];
            let mut overflow = 0;
            let mut occ1 = vec![false; arm1.bins];
            let mut occ2 = vec![false; arm2.bins];
            for _ in start..end {
                let n = pairs.sample(&mut rng);
                let p1 = arm1.incident(n, &mut rng);
                let p2 = arm2.incident(n, &mut rng);
                if p1 >= truncation || p2 >= truncation {
                    overflow += 1;
                }
                let k1 = arm1.clicks(p1, &mut rng, &mut occ1);
                let k2 = arm2.clicks(p2, &mut rng, &mut occ2);
                counts[k1 * shape.1 + k2] += 1;
            }
            (counts, overflow)
        })
        .collect();

    let mut counts = DMatrix::<u64>::zeros(shape.0, shape.1);
    let mut overflow = 0;
    for (partial, o) in partials {
        overflow += o;
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                counts[(i, j)] += partial[i * shape.1 + j];
            }
        }
    }
    Ok(SampledHistogram {
        statistics: JointOutcomeStatistics::from_counts(counts)?,
        overflow,
    })
}
