//! End-to-end certificate synthesis, the safety bound, numerical
//! falsification, and a Monte Carlo baseline.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Configuration, Dataset, DynamicsModel};
use crate::estimator::{FittedEstimator, KernelParams};
use crate::geometry::{build_lattice, RegionSet, SafetySpec, UnitTransform};
use crate::relaxation::{assemble_lp, LpInputs, PsoOptions, Tightening};
use crate::solve::{solve_with, LpStatus};
use crate::spectral::{transition_matrix, FeatureMap};
use crate::tuner::{grid_search, lbfgs_tune, lengthscale_grid, median_heuristic, TuneMethod};
use crate::{Error, Result};

pub const RESULT_SCHEMA: u32 = 1;
/// Upper bound placed on `η` so that `η < 1` holds strictly.
pub const ETA_MAX: f64 = 1.0 - 1e-6;
pub const GAUSS_HERMITE_NODES: usize = 9;

/// Lower bound `1 − (η + cT)` on the probability of avoiding the unsafe set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafetyBound {
    pub probability: f64,
    /// Set when the raw bound was non-positive and clamped to zero.
    pub vacuous: bool,
}

pub fn safety_probability(eta: f64, c: f64, horizon: usize) -> Result<SafetyBound> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in [0, 1), got {eta}")));
    }
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("c must be non-negative, got {c}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("time horizon must be at least 1".into()));
    }
    let raw = 1.0 - (eta + c * horizon as f64);
    Ok(SafetyBound { probability: raw.max(0.0), vacuous: raw <= 0.0 })
}

/// A synthesized barrier `B(x) = φ(x)ᵀ b` with its bound.
#[derive(Debug, Clone)]
pub struct BarrierCertificate {
    pub b: Vec<f64>,
    pub eta: f64,
    pub c: f64,
    pub horizon: usize,
    pub bound: SafetyBound,
    pub feature_map: FeatureMap,
    pub tightening: Tightening,
}

impl BarrierCertificate {
    pub fn new(b: Vec<f64>, eta: f64, c: f64, horizon: usize, feature_map: FeatureMap, tightening: Tightening) -> Result<Self> {
        if b.len() != feature_map.len() {
            return Err(Error::DimensionMismatch { expected: feature_map.len(), got: b.len() });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("barrier coefficients must be finite".into()));
        }
        let bound = safety_probability(eta, c, horizon)?;
        Ok(BarrierCertificate { b, eta, c, horizon, bound, feature_map, tightening })
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.feature_map.evaluate(&self.b, x)
    }
}

pub fn evaluate_barrier(cert: &BarrierCertificate, x: &[f64]) -> f64 {
    cert.evaluate(x)
}

/// Nodes and weights for `E[g(Z)]`, `Z ~ N(0, 1)`, by Golub–Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Jacobi matrix of the physicists' Hermite recurrence.
    let j = DMatrix::from_fn(n, n, |r, c| if r.abs_diff(c) == 1 { (r.max(c) as f64 / 2.0).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k] * 2f64.sqrt(), eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub point: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsificationReport {
    /// `B ≤ η` on the initial set.
    pub initial: Vec<Violation>,
    /// `B ≥ 1` on the unsafe set.
    pub unsafe_set: Vec<Violation>,
    /// `E[B(x₊) | x] − B(x) ≤ c` on the domain.
    pub drift: Vec<Violation>,
    /// `B ≥ 0` on the domain.
    pub nonnegative: Vec<Violation>,
    pub grid_per_dim: usize,
    pub expectation: String,
    pub points_checked: usize,
}

impl FalsificationReport {
    pub fn is_clean(&self) -> bool {
        self.initial.is_empty() && self.unsafe_set.is_empty() && self.drift.is_empty() && self.nonnegative.is_empty()
    }

    pub fn num_violations(&self) -> usize {
        self.initial.len() + self.unsafe_set.len() + self.drift.len() + self.nonnegative.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalsifyOptions {
    pub grid_per_dim: usize,
    pub tol: f64,
    /// Check the drift condition; requires a model.
    pub drift: bool,
    pub quadrature_nodes: usize,
}

impl Default for FalsifyOptions {
    fn default() -> Self {
        FalsifyOptions { grid_per_dim: 200, tol: 1e-6, drift: true, quadrature_nodes: GAUSS_HERMITE_NODES }
    }
}

/// Grid points of `set`: a `g`ⁿ grid over each member's bounding box, filtered
/// by membership in the whole set.
pub fn set_grid(set: &RegionSet, g: usize) -> Vec<Vec<f64>> {
    let n = set.dim();
    let mut out = Vec::new();
    for member in set.members() {
        let (lo, hi) = member.bounding_box();
        let total = g.pow(n as u32);
        for k in 0..total {
            let mut rest = k;
            let x: Vec<f64> = (0..n)
                .map(|d| {
                    let i = rest % g;
                    rest /= g;
                    lo[d] + (hi[d] - lo[d]) * i as f64 / (g - 1) as f64
                })
                .collect();
            if set.contains_unchecked(&x) {
                out.push(x);
            }
        }
    }
    out
}

/// Searches a grid for points where the certificate's defining inequalities
/// fail. A refutation tool: a clean report is evidence, not proof.
pub fn falsify(
    cert: &BarrierCertificate,
    spec: &SafetySpec,
    model: Option<&DynamicsModel>,
    opts: &FalsifyOptions,
) -> Result<FalsificationReport> {
    if opts.grid_per_dim < 2 {
        return Err(Error::InvalidArgument("falsification grid needs at least 2 points per dimension".into()));
    }
    if opts.drift && model.is_none() {
        return Err(Error::InvalidArgument("the drift condition needs system_dynamics".into()));
    }
    if let Some(m) = model {
        if m.dim() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), got: m.dim() });
        }
    }
    let tol = opts.tol;
    let g = opts.grid_per_dim;
    let check = |pts: Vec<Vec<f64>>, f: &(dyn Fn(&[f64]) -> Option<Violation> + Sync)| -> Vec<Violation> {
        pts.par_iter().filter_map(|x| f(x)).collect()
    };
    let x0 = set_grid(&spec.initial, g);
    let xu = set_grid(&spec.unsafe_set, g);
    let xd = set_grid(&spec.domain, g);
    let mut checked = x0.len() + xu.len() + xd.len();
    let initial = check(x0, &|x| {
        let v = cert.evaluate(x);
        (v > cert.eta + tol).then(|| Violation { point: x.to_vec(), value: v, bound: cert.eta })
    });
    let unsafe_set = check(xu, &|x| {
        let v = cert.evaluate(x);
        (v < 1.0 - tol).then(|| Violation { point: x.to_vec(), value: v, bound: 1.0 })
    });
    let nonnegative = check(xd.clone(), &|x| {
        let v = cert.evaluate(x);
        (v < -tol).then(|| Violation { point: x.to_vec(), value: v, bound: 0.0 })
    });
    let mut drift = Vec::new();
    let mut expectation = "none".to_string();
    if let (true, Some(model)) = (opts.drift, model) {
        expectation = format!("gauss-hermite-{}", opts.quadrature_nodes);
        let (nodes, weights) = gauss_hermite(opts.quadrature_nodes);
        let n = spec.dim();
        // Tensor grid over the noisy dimensions only.
        let noisy: Vec<usize> = (0..n).filter(|&d| model.noise_std[d] > 0.0).collect();
        let q = nodes.len();
        let total = q.pow(noisy.len() as u32);
        checked += xd.len();
        drift = check(xd, &|x| {
            let mut mean = vec![0.0; n];
            model.mean_step_into(x, &mut mean);
            let mut y = mean.clone();
            let mut e = 0.0;
            for k in 0..total {
                let mut rest = k;
                let mut w = 1.0;
                for &d in &noisy {
                    let i = rest % q;
                    rest /= q;
                    y[d] = mean[d] + model.noise_std[d] * nodes[i];
                    w *= weights[i];
                }
                e += w * cert.evaluate(&y);
            }
            let lhs = e - cert.evaluate(x);
            (lhs > cert.c + tol).then(|| Violation { point: x.to_vec(), value: lhs, bound: cert.c })
        });
    }
    Ok(FalsificationReport { initial, unsafe_set, drift, nonnegative, grid_per_dim: g, expectation, points_checked: checked })
}

/// Fraction of simulated trajectories that stay out of the unsafe set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub probability: f64,
    pub trials: usize,
}

impl MonteCarloEstimate {
    pub fn standard_error(&self) -> f64 {
        let p = self.probability;
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

const MC_CHUNK: usize = 1024;

/// Simulates `trials` trajectories `x₀, …, x_T` and counts those never in
/// the unsafe set. Trials are split into fixed chunks, chunk `j` drawing
/// from stream `j` of the seeded generator, so results do not depend on
/// thread scheduling.
pub fn monte_carlo_safety(
    model: &DynamicsModel,
    x0: &[f64],
    spec: &SafetySpec,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one Monte Carlo trial is required".into()));
    }
    if x0.len() != spec.dim() || model.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: x0.len() });
    }
    if !spec.domain.contains_unchecked(x0) {
        warn!("Monte Carlo start {x0:?} lies outside X_bounds");
    }
    let chunks = trials.div_ceil(MC_CHUNK);
    let safe: usize = (0..chunks)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let count = MC_CHUNK.min(trials - j * MC_CHUNK);
            let mut safe = 0;
            for _ in 0..count {
                let mut x = x0.to_vec();
                let mut ok = !spec.unsafe_set.contains_unchecked(&x);
                for _ in 0..spec.horizon {
                    if !ok {
                        break;
                    }
                    x = model.step(&x, &mut rng);
                    ok = !spec.unsafe_set.contains_unchecked(&x);
                }
                safe += usize::from(ok);
            }
            safe
        })
        .sum();
    Ok(MonteCarloEstimate { probability: safe as f64 / trials as f64, trials })
}

/// Pipeline settings not carried by the configuration.
#[derive(Debug, Clone, Default)]
pub struct SynthesisOptions {
    pub tune: Option<TuneMethod>,
    pub export_lp: Option<PathBuf>,
    pub pso: Option<PsoOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSummary {
    pub status: LpStatus,
    pub variables: usize,
    pub rows: usize,
    pub iterations: usize,
    pub objective: f64,
    pub residual: f64,
}

/// Everything the pipeline produced.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub params: KernelParams,
    pub feature_map: FeatureMap,
    pub tightening: Tightening,
    pub lp: LpSummary,
    pub certificate: Option<BarrierCertificate>,
    pub timings: Vec<Timing>,
}

struct Stages<'a> {
    sink: &'a (dyn Fn(&str) + Sync),
    last: Instant,
    timings: Vec<Timing>,
}

impl Stages<'_> {
    fn log(&self, msg: &str) {
        info!("{msg}");
        (self.sink)(msg);
    }

    fn done(&mut self, stage: &str) {
        let now = Instant::now();
        let secs = (now - self.last).as_secs_f64();
        self.last = now;
        self.timings.push(Timing { stage: stage.to_string(), seconds: secs });
    }
}

/// Picks kernel hyperparameters with the requested method.
pub fn tune_params(data: &Dataset, base: &KernelParams, method: TuneMethod) -> Result<KernelParams> {
    Ok(match method {
        TuneMethod::Median => median_heuristic(data, base.lambda)?,
        TuneMethod::Lbfgs => {
            let n = base.dim();
            let lower = KernelParams { sigma_l: vec![1e-5; n], ..base.clone() };
            let upper = KernelParams { sigma_l: vec![1e5; n], ..base.clone() };
            lbfgs_tune(data, &lower, &upper, base)?.params
        }
        TuneMethod::Grid => grid_search(data, &lengthscale_grid(base, &[0.25, 0.5, 1.0, 2.0, 4.0]), 5)?.params,
    })
}

/// Runs fit → feature map → lattice → features → coefficients → LP and
/// returns the certificate, or the LP status when none exists.
pub fn synthesize(config: &Configuration, opts: &SynthesisOptions, sink: &(dyn Fn(&str) + Sync)) -> Result<Synthesis> {
    let mut st = Stages { sink, last: Instant::now(), timings: Vec::new() };
    let spec = &config.spec;
    let data = config.load_dataset()?;
    st.log(&format!("loaded {} transitions in {} dimensions", data.len(), data.dim()));
    st.done("data");

    let mut params = KernelParams::new(config.sigma_f, config.sigma_l.clone(), config.lambda)?;
    if let Some(method) = opts.tune {
        params = tune_params(&data, &params, method)?;
        st.log(&format!("tuned hyperparameters: sigma_l = {:?}, sigma_f = {}", params.sigma_l, params.sigma_f));
        st.done("tune");
    }
    let est = FittedEstimator::fit(&params, &data)?;
    st.log(&format!("fitted conditional mean embedding (jitter {:.1e})", est.jitter()));
    st.done("fit");

    let transform = UnitTransform::from_bounds(&spec.domain, config.pad)?;
    let f_max = config.degree();
    let map = FeatureMap::new(f_max, params.sigma_f, &config.feature_sigma_l, transform.clone())?;
    st.log(&format!("feature map: {} features (f_max = {f_max})", map.len()));
    let classified = build_lattice(config.lattice_resolution, spec, &transform, config.set_scaling)?;
    st.log(&format!(
        "lattice {}^{}: {} initial, {} unsafe, {} domain points",
        config.lattice_resolution,
        spec.dim(),
        classified.initial.inside.len(),
        classified.unsafe_set.inside.len(),
        classified.domain.inside.len()
    ));
    st.done("lattice");

    let phi = Arc::new(map.lattice_features_t(&classified.lattice)?);
    let h = transition_matrix(&est, &map, config.lattice_resolution)?;
    st.log("evaluated lattice features and transition matrix");
    st.done("features");

    let pso = opts.pso.unwrap_or(PsoOptions { seed: config.seed, ..PsoOptions::default() });
    let tightening = Tightening::compute(&classified, spec, &transform, f_max, &pso)?;
    st.log(&format!(
        "tightening: C = {:.6}, A_init = {:.3e}, A_unsafe = {:.3e}, A_domain = {:.3e}",
        tightening.c, tightening.a_initial, tightening.a_unsafe, tightening.a_domain
    ));
    st.done("coefficients");

    let mut blp = assemble_lp(&LpInputs {
        lattice: &classified,
        features_t: phi,
        h: &h.h,
        tightening: &tightening,
        horizon: spec.horizon,
        epsilon: config.epsilon,
        b_bar: config.b_bar,
        kappa: config.kappa,
    })?;
    blp.problem.upper[blp.layout.eta] = ETA_MAX;
    st.log(&format!("LP: {} variables, {} rows", blp.problem.num_vars(), blp.problem.num_rows()));
    if let Some(path) = &opts.export_lp {
        blp.problem.export_lp(path)?;
        st.log(&format!("wrote LP to {}", path.display()));
    }
    st.done("assemble");

    let sol = solve_with(&blp.problem, &config.optimiser)?;
    st.log(&format!("LP status {:?} after {} iterations", sol.status, sol.iterations));
    st.done("solve");
    let lp = LpSummary {
        status: sol.status,
        variables: blp.problem.num_vars(),
        rows: blp.problem.num_rows(),
        iterations: sol.iterations,
        objective: sol.objective,
        residual: sol.residual,
    };
    let certificate = if sol.status == LpStatus::Optimal {
        let lay = &blp.layout;
        // Clip round-off so the bound's domain checks hold.
        let eta = sol.x[lay.eta].clamp(0.0, ETA_MAX);
        let c = sol.x[lay.c].max(0.0);
        let cert =
            BarrierCertificate::new(sol.x[lay.coeffs.clone()].to_vec(), eta, c, spec.horizon, map.clone(), tightening)?;
        st.log(&format!(
            "certificate: eta = {eta:.6}, c = {c:.6}, safety probability >= {:.4}{}",
            cert.bound.probability,
            if cert.bound.vacuous { " (vacuous)" } else { "" }
        ));
        Some(cert)
    } else {
        st.log("no certificate: the LP has no optimal solution");
        None
    };
    Ok(Synthesis { params, feature_map: map, tightening, lp, certificate, timings: st.timings })
}

/// Barrier values on a regular grid over the domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotGrid {
    pub axes: Vec<Vec<f64>>,
    /// Values with the first axis varying fastest.
    pub values: Vec<f64>,
}

pub fn plot_grid(cert: &BarrierCertificate, domain: &RegionSet, per_dim: usize) -> PlotGrid {
    let (lo, hi) = domain.bounding_box();
    let n = lo.len();
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|d| (0..per_dim).map(|i| lo[d] + (hi[d] - lo[d]) * i as f64 / (per_dim - 1) as f64).collect())
        .collect();
    let total = per_dim.pow(n as u32);
    let values = (0..total)
        .into_par_iter()
        .map(|k| {
            let mut rest = k;
            let x: Vec<f64> = (0..n)
                .map(|d| {
                    let i = rest % per_dim;
                    rest /= per_dim;
                    axes[d][i]
                })
                .collect();
            cert.evaluate(&x)
        })
        .collect();
    PlotGrid { axes, values }
}

impl PlotGrid {
    /// CSV with one column per coordinate plus `barrier`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let n = self.axes.len();
        let mut header: Vec<String> = (1..=n).map(|d| format!("x{d}")).collect();
        header.push("barrier".into());
        w.write_record(&header).map_err(|e| Error::Dataset(e.to_string()))?;
        let per = self.axes.first().map_or(0, Vec::len);
        for (k, v) in self.values.iter().enumerate() {
            let mut rest = k;
            let mut rec: Vec<String> = (0..n)
                .map(|d| {
                    let i = rest % per;
                    rest /= per;
                    format!("{:e}", self.axes[d][i])
                })
                .collect();
            rec.push(format!("{v:e}"));
            w.write_record(&rec).map_err(|e| Error::Dataset(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Certified,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMapSummary {
    pub degree: usize,
    pub sigma_f: f64,
    pub feature_sigma_l: Vec<f64>,
    pub transform: UnitTransform,
}

/// Versioned result document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationResult {
    pub schema: u32,
    pub outcome: Outcome,
    pub safety_probability: Option<f64>,
    pub vacuous: bool,
    pub eta: Option<f64>,
    pub c: Option<f64>,
    pub horizon: usize,
    pub b: Vec<f64>,
    pub frequencies: Vec<Vec<i32>>,
    pub masses: Vec<f64>,
    pub feature_map: FeatureMapSummary,
    pub kernel: KernelParams,
    pub tightening: Tightening,
    pub lp: LpSummary,
    pub grid: Option<PlotGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub falsification: Option<FalsificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<Timing>>,
}

pub const PLOT_POINTS_1D: usize = 201;
pub const PLOT_POINTS_2D: usize = 51;

impl CertificationResult {
    pub fn new(syn: &Synthesis, spec: &SafetySpec) -> Self {
        let cert = syn.certificate.as_ref();
        let outcome = match syn.lp.status {
            LpStatus::Optimal => Outcome::Certified,
            LpStatus::Infeasible => Outcome::Infeasible,
            LpStatus::Unbounded => Outcome::Unbounded,
            LpStatus::IterationLimit => Outcome::IterationLimit,
        };
        let per_dim = if spec.dim() == 1 { PLOT_POINTS_1D } else { PLOT_POINTS_2D };
        let grid = (spec.dim() <= 2).then_some(()).and(cert).map(|c| plot_grid(c, &spec.domain, per_dim));
        let map = &syn.feature_map;
        CertificationResult {
            schema: RESULT_SCHEMA,
            outcome,
            safety_probability: cert.map(|c| c.bound.probability),
            vacuous: cert.map_or(false, |c| c.bound.vacuous),
            eta: cert.map(|c| c.eta),
            c: cert.map(|c| c.c),
            horizon: spec.horizon,
            b: cert.map_or_else(Vec::new, |c| c.b.clone()),
            frequencies: map.frequencies().to_vec(),
            masses: map.masses().to_vec(),
            feature_map: FeatureMapSummary {
                degree: map.degree(),
                sigma_f: map.sigma_f(),
                feature_sigma_l: map.feature_sigma_l().to_vec(),
                transform: map.transform().clone(),
            },
            kernel: syn.params.clone(),
            tightening: syn.tightening,
            lp: syn.lp.clone(),
            grid,
            falsification: None,
            timings: None,
        }
    }

    pub fn is_certified(&self) -> bool {
        self.outcome == Outcome::Certified
    }

    /// Rebuilds an evaluable certificate from the serialized fields.
    pub fn certificate(&self) -> Result<Option<BarrierCertificate>> {
        let (Some(eta), Some(c)) = (self.eta, self.c) else {
            return Ok(None);
        };
        let fm = &self.feature_map;
        let map = FeatureMap::new(fm.degree, fm.sigma_f, &fm.feature_sigma_l, fm.transform.clone())?;
        BarrierCertificate::new(self.b.clone(), eta, c, self.horizon, map, self.tightening).map(Some)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn safety_examples() {
        assert_abs_diff_eq!(safety_probability(0.1, 0.01, 10).unwrap().probability, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(safety_probability(0.006, 0.004, 15).unwrap().probability, 0.934, epsilon = 1e-15);
        let v = safety_probability(0.5, 0.1, 10).unwrap();
        assert_eq!(v.probability, 0.0);
        assert!(v.vacuous);
        assert!(safety_probability(1.0, 0.0, 1).is_err());
        assert!(safety_probability(0.1, -0.1, 1).is_err());
        assert!(safety_probability(0.1, 0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn safety_monotone(eta in 0.0f64..0.99, c in 0.0f64..0.1, t in 1usize..50, d in 0.0f64..0.01) {
            let base = safety_probability(eta, c, t).unwrap().probability;
            prop_assert!(safety_probability((eta + d).min(0.999), c, t).unwrap().probability <= base);
            prop_assert!(safety_probability(eta, c + d, t).unwrap().probability <= base);
            prop_assert!(safety_probability(eta, c, t + 1).unwrap().probability <= base);
        }
    }

    #[test]
    fn hermite_integrates_moments() {
        let (x, w) = gauss_hermite(9);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        // E[Z²] = 1, E[Z⁴] = 3, E[Z¹⁶] = 15!! = 2027025
        let m = |p: i32| x.iter().zip(&w).map(|(a, b)| b * a.powi(p)).sum::<f64>();
        assert_abs_diff_eq!(m(1), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(m(2), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m(4), 3.0, epsilon = 1e-11);
        assert_abs_diff_eq!(m(16) / 2027025.0, 1.0, epsilon = 1e-10);
        // E[cos(aZ)] = exp(−a²/2)
        let a = 1.3;
        let e: f64 = x.iter().zip(&w).map(|(z, wt)| wt * (a * z).cos()).sum();
        assert_abs_diff_eq!(e, (-a * a / 2.0f64).exp(), epsilon = 1e-7);
    }

    fn linear_spec() -> SafetySpec {
        SafetySpec::new(
            RegionSet::rect(vec![-1.0], vec![1.0]).unwrap(),
            RegionSet::rect(vec![-0.5], vec![0.5]).unwrap(),
            RegionSet::parse_many(&["RectSet([-1], [-0.9])", "RectSet([0.9], [1])"]).unwrap(),
            15,
        )
        .unwrap()
    }

    fn constant_cert(value: f64) -> BarrierCertificate {
        let tr = UnitTransform::from_bounds(&RegionSet::rect(vec![-1.0], vec![1.0]).unwrap(), 0.0).unwrap();
        let map = FeatureMap::new(3, 1.0, &[0.1], tr).unwrap();
        let mut b = vec![0.0; map.len()];
        b[0] = value / map.weights()[0];
        let t = Tightening { f_max: 3, resolution: 100, c: 1.0, a_initial: 0.0, a_unsafe: 0.0, a_domain: 0.0 };
        BarrierCertificate::new(b, 0.0, 0.0, 15, map, t).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let one = constant_cert(1.0);
        for x in [-1.0, -0.3, 0.7] {
            assert_abs_diff_eq!(evaluate_barrier(&one, &[x]), 1.0, epsilon = 1e-14);
        }
        let zero = constant_cert(0.0);
        assert_eq!(zero.evaluate(&[0.2]), 0.0);
    }

    #[test]
    fn falsifier_examples() {
        let spec = linear_spec();
        let model = DynamicsModel::parse(&["x1 / 2"], Some(&[0.1])).unwrap();
        let zero = constant_cert(0.0);
        let opts = FalsifyOptions { grid_per_dim: 101, ..FalsifyOptions::default() };
        let r = falsify(&zero, &spec, Some(&model), &opts).unwrap();
        let xu = set_grid(&spec.unsafe_set, 101);
        assert_eq!(r.unsafe_set.len(), xu.len());
        assert!(r.initial.is_empty() && r.drift.is_empty() && r.nonnegative.is_empty());
        let r = falsify(&zero, &spec, Some(&model), &FalsifyOptions { tol: f64::INFINITY, ..opts }).unwrap();
        assert!(r.is_clean());
        assert!(falsify(&zero, &spec, None, &opts).is_err());
        assert!(falsify(&zero, &spec, None, &FalsifyOptions { drift: false, ..opts }).is_ok());
    }

    #[test]
    fn drift_expectation_matches_closed_form() {
        // A single cosine feature has E[cos(ω(m + σZ))] = cos(ωm) e^{−ω²σ²/2}.
        let spec = linear_spec();
        let tr = UnitTransform::from_bounds(&spec.domain, 0.0).unwrap();
        let map = FeatureMap::new(3, 1.0, &[0.1], tr.clone()).unwrap();
        let mut b = vec![0.0; map.len()];
        b[1] = 1.0;
        let t = Tightening { f_max: 3, resolution: 100, c: 1.0, a_initial: 0.0, a_unsafe: 0.0, a_domain: 0.0 };
        let mut cert = BarrierCertificate::new(b, 0.0, 0.0, 1, map.clone(), t).unwrap();
        let model = DynamicsModel::parse(&["x1 / 2"], Some(&[0.1])).unwrap();
        let omega = 2.0 * std::f64::consts::PI * tr.scale[0] * map.frequencies()[0][0] as f64;
        let drift_at = |x: f64| {
            let m = x / 2.0;
            let e = map.weights()[1] * (omega * m + 2.0 * std::f64::consts::PI * tr.offset[0]).cos()
                * (-0.5 * omega * omega * 0.01f64).exp();
            e - map.weights()[1] * (omega * x + 2.0 * std::f64::consts::PI * tr.offset[0]).cos()
        };
        let g = 41;
        let pts = set_grid(&spec.domain, g);
        let worst = pts.iter().map(|x| drift_at(x[0])).fold(f64::NEG_INFINITY, f64::max);
        cert.c = worst - 1e-4;
        let opts = FalsifyOptions { grid_per_dim: g, tol: 0.0, ..FalsifyOptions::default() };
        let r = falsify(&cert, &spec, Some(&model), &opts).unwrap();
        assert!(!r.drift.is_empty());
        for v in &r.drift {
            assert_abs_diff_eq!(v.value, drift_at(v.point[0]), epsilon = 1e-9);
        }
        cert.c = worst + 1e-6;
        assert!(falsify(&cert, &spec, Some(&model), &opts).unwrap().drift.is_empty());
    }

    #[test]
    fn monte_carlo_examples() {
        let spec = linear_spec();
        let det = DynamicsModel::parse(&["x1 / 2"], Some(&[0.0])).unwrap();
        assert_eq!(monte_carlo_safety(&det, &[0.0], &spec, 100, 1).unwrap().probability, 1.0);
        let noisy = DynamicsModel::parse(&["x1 / 2"], Some(&[0.1])).unwrap();
        let a = monte_carlo_safety(&noisy, &[0.0], &spec, 5000, 9).unwrap();
        let b = monte_carlo_safety(&noisy, &[0.0], &spec, 5000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.probability >= 0.95);
        assert!(monte_carlo_safety(&noisy, &[0.0], &spec, 0, 9).is_err());
    }

    #[test]
    fn plot_grid_csv() {
        let cert = constant_cert(1.0);
        let g = plot_grid(&cert, &RegionSet::rect(vec![-1.0], vec![1.0]).unwrap(), 5);
        assert_eq!(g.values.len(), 5);
        let csv = g.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("x1,barrier"));
    }
}
