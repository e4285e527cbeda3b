//! Command-line entry point and HTTP service. Both run jobs through
//! [`run_job`], so they emit identical result documents.

pub mod cli;
pub mod server;

use crate::certify::{falsify, synthesize, CertificationResult, FalsifyOptions, SynthesisOptions};
use crate::data::{Configuration, Format};
use crate::Result;

/// Shipped benchmark configurations as `(name, yaml)`.
pub const BENCHMARKS: [(&str, &str); 3] = [
    ("linear", include_str!("../../benchmarks/linear.yaml")),
    ("barr2", include_str!("../../benchmarks/barr2.yaml")),
    ("barr3", include_str!("../../benchmarks/barr3.yaml")),
];

pub fn benchmark(name: &str) -> Option<Configuration> {
    BENCHMARKS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Configuration::parse(text, Format::Yaml).expect("shipped benchmark parses"))
}

/// Options shared by the CLI and the service.
#[derive(Debug, Clone, Default)]
pub struct JobOptions {
    pub synthesis: SynthesisOptions,
    /// Grid points per dimension for the falsifier, when requested.
    pub falsify: Option<usize>,
    pub timings: bool,
}

/// Grid density used by `--falsify` when none is given.
pub fn default_falsify_grid(dim: usize) -> usize {
    match dim {
        1 => 2000,
        2 => 200,
        _ => 30,
    }
}

/// Synthesizes, optionally falsifies, and builds the result document.
pub fn run_job(config: &Configuration, opts: &JobOptions, sink: &(dyn Fn(&str) + Sync)) -> Result<CertificationResult> {
    let syn = synthesize(config, &opts.synthesis, sink)?;
    let mut result = CertificationResult::new(&syn, &config.spec);
    // The config `verify` flag requests the falsifier at the default density.
    let grid = opts.falsify.or_else(|| config.verify.then(|| default_falsify_grid(config.dim())));
    if let (Some(grid), Some(cert)) = (grid, syn.certificate.as_ref()) {
        let model = config.dynamics()?;
        let fopts = FalsifyOptions { grid_per_dim: grid, drift: model.is_some(), ..FalsifyOptions::default() };
        let report = falsify(cert, &config.spec, model.as_ref(), &fopts)?;
        sink(&format!("falsifier: {} violations over {} points", report.num_violations(), report.points_checked));
        result.falsification = Some(report);
    }
    if opts.timings {
        result.timings = Some(syn.timings);
    }
    Ok(result)
}
