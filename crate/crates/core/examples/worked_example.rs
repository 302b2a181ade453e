//! Calibrates two detectors from a simulated measurement and compares with
//! the Klyshko method.
//!
//! ```text
//! cargo run --release --example worked_example
//! ```
//!
//! The same run from the command line:
//!
//! ```text
//! pnrcal simulate examples/data/experiment.toml clicks.toml
//! pnrcal estimate clicks.toml examples/data/detectors.toml result.toml
//! pnrcal klyshko clicks.toml
//! ```

use std::path::Path;

use pnrcal::estimation::{
    estimate_efficiencies, klyshko_efficiency, EstimatorOptions, KlyshkoRates,
};
use pnrcal::io::{convolution_pair, read_detectors, read_experiment};
use pnrcal::simulation::{simulate_clicks_exact, simulate_clicks_mc};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let (config, file) = read_experiment(&data.join("experiment.toml"))?;
    let detectors = read_detectors(&data.join("detectors.toml"))?;
    let (c1, c2) = convolution_pair(&detectors.multiplex()?, config.source.truncation)?;
    let (eta1, eta2) = (config.detector1.efficiency, config.detector2.efficiency);

    println!("{}", file.label.unwrap_or_default());
    println!("true efficiencies      {eta1:.4}  {eta2:.4}");

    let exact = simulate_clicks_exact(&config)?;
    let fit = estimate_efficiencies(&exact, &c1, &c2, &EstimatorOptions::default())?;
    println!("fit, exact statistics  {:.4}  {:.4}", fit.eta1, fit.eta2);

    let sampled = simulate_clicks_mc(&config)?;
    let fit = estimate_efficiencies(&sampled.statistics, &c1, &c2, &EstimatorOptions::default())?;
    println!(
        "{:<23}{:.4}  {:.4}  (mean pairs {:.3})",
        format!("fit, {} pulses", config.trials),
        fit.eta1,
        fit.eta2,
        fit.state()?.mean_photon_number()
    );

    let (s, i) = klyshko_efficiency(&KlyshkoRates::from_histogram(&sampled.statistics))?;
    println!("Klyshko                {s:.4}  {i:.4}");
    Ok(())
}
