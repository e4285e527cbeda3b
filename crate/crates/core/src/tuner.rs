//! Hyperparameter selection: median heuristic, k-fold grid search on R²,
//! and box-constrained L-BFGS on the log marginal likelihood.

use std::sync::Mutex;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{lml_with_gradient, FittedEstimator, KernelParams};

pub const LBFGS_MEMORY: usize = 10;
pub const LBFGS_MAX_ITERS: u64 = 200;
pub const LBFGS_TOL_GRAD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneMethod {
    Median,
    Lbfgs,
    Grid,
}

impl std::str::FromStr for TuneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(TuneMethod::Median),
            "lbfgs" => Ok(TuneMethod::Lbfgs),
            "grid" => Ok(TuneMethod::Grid),
            other => Err(Error::InvalidArgument(format!("unknown tuner `{other}` (median, lbfgs, grid)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunerReport {
    pub params: KernelParams,
    pub objective: f64,
    pub evaluations: usize,
    pub method: &'static str,
}

/// Plain median of pairwise Euclidean input distances as an isotropic
/// lengthscale, with `σ_f = 1`.
pub fn median_heuristic(data: &Dataset, lambda: f64) -> Result<KernelParams> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidArgument("median heuristic needs at least two samples".into()));
    }
    let mut dists: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = &data.x;
            (i + 1..n).map(move |j| (x.row(i) - x.row(j)).norm())
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    if !(median > 0.0) {
        return Err(Error::InvalidArgument("all inputs coincide; median distance is zero".into()));
    }
    KernelParams::new(1.0, vec![median; data.dim()], lambda)
}

/// Mean k-fold R² of `params`; sample `i` belongs to fold `i mod folds`.
/// Singular fits and degenerate folds score `-∞`.
pub fn cross_validated_r2(data: &Dataset, params: &KernelParams, folds: usize) -> f64 {
    let mut total = 0.0;
    for f in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|i| i % folds == f);
        if test.is_empty() || train.is_empty() {
            return f64::NEG_INFINITY;
        }
        let score = FittedEstimator::fit(params, &data.subset(&train)).and_then(|e| e.r2_score(&data.subset(&test)));
        match score {
            Ok(s) if s.is_finite() => total += s,
            _ => return f64::NEG_INFINITY,
        }
    }
    total / folds as f64
}

/// Grid point with the best cross-validated R²; ties go to the earliest.
pub fn grid_search(data: &Dataset, grid: &[KernelParams], folds: usize) -> Result<TunerReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("grid search needs a non-empty grid".into()));
    }
    if folds < 2 || folds > data.len() {
        return Err(Error::InvalidArgument(format!("folds must be in [2, {}], got {folds}", data.len())));
    }
    let scores: Vec<f64> = grid.par_iter().map(|p| cross_validated_r2(data, p, folds)).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(TunerReport { params: grid[best].clone(), objective: scores[best], evaluations: grid.len(), method: "grid" })
}

/// Multiplicative grid around `center`: every lengthscale is scaled
/// independently by each factor.
pub fn lengthscale_grid(center: &KernelParams, factors: &[f64]) -> Vec<KernelParams> {
    let n = center.dim();
    let mut out = Vec::new();
    let total = factors.len().pow(n as u32);
    for k in 0..total {
        let mut rest = k;
        let mut p = center.clone();
        for d in 0..n {
            p.sigma_l[d] *= factors[rest % factors.len()];
            rest /= factors.len();
        }
        out.push(p);
    }
    out
}

fn pack(p: &KernelParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.dim() + 2);
    v.push(p.sigma_f);
    v.extend_from_slice(&p.sigma_l);
    v.push(p.lambda);
    v
}

fn unpack(v: &[f64]) -> KernelParams {
    let n = v.len() - 2;
    KernelParams { sigma_f: v[0], sigma_l: v[1..=n].to_vec(), lambda: v[n + 1] }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Maps unconstrained `u` to `lo + (hi - lo)·sigmoid(u)` per coordinate.
struct BoxMap {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxMap {
    fn forward(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lo.iter().zip(&self.hi)).map(|(u, (l, h))| l + (h - l) * sigmoid(*u)).collect()
    }

    fn inverse(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(t, (l, h))| {
                let s = ((t - l) / (h - l)).clamp(1e-9, 1.0 - 1e-9);
                (s / (1.0 - s)).ln()
            })
            .collect()
    }

    fn jacobian(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (l, h))| {
                let s = sigmoid(*u);
                (h - l) * s * (1.0 - s)
            })
            .collect()
    }
}

type Objective<'a> = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync + 'a;

struct BoxProblem<'a> {
    f: &'a Objective<'a>,
    map: BoxMap,
    state: &'a Mutex<ProblemState>,
}

#[derive(Default)]
struct ProblemState {
    evals: usize,
    cache: Option<(Vec<f64>, f64, Vec<f64>)>,
    best: Option<(f64, Vec<f64>)>,
}

impl BoxProblem<'_> {
    /// Negated objective and gradient in `u` space.
    fn eval(&self, u: &[f64]) -> std::result::Result<(f64, Vec<f64>), argmin::core::Error> {
        if let Some((cu, c, g)) = &self.state.lock().unwrap().cache {
            if cu.as_slice() == u {
                return Ok((*c, g.clone()));
            }
        }
        let t = self.map.forward(u);
        let (value, grad_t) = (self.f)(&t).map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        if !value.is_finite() {
            return Err(argmin::core::Error::msg("objective is not finite"));
        }
        let jac = self.map.jacobian(u);
        let grad_u: Vec<f64> = grad_t.iter().zip(&jac).map(|(g, j)| -g * j).collect();
        let mut st = self.state.lock().unwrap();
        st.evals += 1;
        if st.best.as_ref().map_or(true, |(b, _)| value > *b) {
            st.best = Some((value, t));
        }
        st.cache = Some((u.to_vec(), -value, grad_u.clone()));
        Ok((-value, grad_u))
    }
}

impl CostFunction for BoxProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.eval(u).map(|(c, _)| c)
    }
}

impl Gradient for BoxProblem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.eval(u).map(|(_, g)| g)
    }
}

/// Maximizes `f` over the box `[lo, hi]` with L-BFGS on a sigmoid
/// reparameterization. Coordinates with `lo == hi` stay fixed.
/// Returns `(argmax, max, evaluations)`; the result is never worse than `x0`.
pub fn maximize_in_box(
    f: &Objective<'_>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<(Vec<f64>, f64, usize)> {
    let free: Vec<usize> = (0..x0.len()).filter(|&i| hi[i] > lo[i]).collect();
    let (f0, _) = f(x0)?;
    if !f0.is_finite() {
        return Err(Error::Objective("objective is not finite at the initial point".into()));
    }
    if free.is_empty() {
        return Ok((x0.to_vec(), f0, 1));
    }
    let embed = |sub: &[f64]| {
        let mut x = x0.to_vec();
        for (k, &i) in free.iter().enumerate() {
            x[i] = sub[k];
        }
        x
    };
    let reduced = |sub: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) = f(&embed(sub))?;
        Ok((v, free.iter().map(|&i| g[i]).collect()))
    };
    let map = BoxMap { lo: free.iter().map(|&i| lo[i]).collect(), hi: free.iter().map(|&i| hi[i]).collect() };
    let u0 = map.inverse(&free.iter().map(|&i| x0[i]).collect::<Vec<_>>());
    let state = Mutex::new(ProblemState::default());
    let problem = BoxProblem { f: &reduced, map, state: &state };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), LBFGS_MEMORY)
        .with_tolerance_grad(LBFGS_TOL_GRAD)
        .map_err(|e| Error::Objective(e.to_string()))?;
    let run = Executor::new(problem, solver).configure(|s| s.param(u0).max_iters(LBFGS_MAX_ITERS)).run();
    if let Err(e) = &run {
        log::warn!("L-BFGS stopped early: {e}");
    } else if let Ok(r) = &run {
        log::debug!("L-BFGS finished after {} iterations: {:?}", r.state().get_iter(), r.state().get_termination_reason());
    }
    let st = state.into_inner().unwrap();
    let evals = st.evals + 1;
    match st.best {
        Some((v, t)) if v >= f0 => Ok((embed(&t), v, evals)),
        _ => Ok((x0.to_vec(), f0, evals)),
    }
}

/// Maximizes the log marginal likelihood in log-parameter space within
/// `[lower, upper]`. Parameters with equal bounds are held fixed.
pub fn lbfgs_tune(data: &Dataset, lower: &KernelParams, upper: &KernelParams, init: &KernelParams) -> Result<TunerReport> {
    let (l, u, x) = (pack(lower), pack(upper), pack(init));
    if l.len() != x.len() || u.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: l.len().min(u.len()) });
    }
    for i in 0..x.len() {
        if !(l[i] <= x[i] && x[i] <= u[i]) {
            return Err(Error::InvalidArgument(format!(
                "initial hyperparameter {} outside bounds [{}, {}]",
                x[i], l[i], u[i]
            )));
        }
    }
    // λ may be pinned at zero; every free parameter must be positive for the log map.
    let free = |i: usize| u[i] > l[i];
    if (0..x.len()).any(|i| free(i) && !(l[i] > 0.0)) {
        return Err(Error::InvalidArgument("free hyperparameter bounds must be positive".into()));
    }
    let to_log = |v: &[f64]| -> Vec<f64> {
        v.iter().enumerate().map(|(i, v)| if free(i) { v.ln() } else { *v }).collect()
    };
    let from_log = |t: &[f64]| -> Vec<f64> {
        t.iter().enumerate().map(|(i, t)| if free(i) { t.exp() } else { *t }).collect()
    };
    let objective = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = unpack(&from_log(t));
        let (v, g) = lml_with_gradient(&p, data)?;
        Ok((v, g))
    };
    let (t, value, evaluations) = maximize_in_box(&objective, &to_log(&x), &to_log(&l), &to_log(&u))?;
    Ok(TunerReport { params: unpack(&from_log(&t)), objective: value, evaluations, method: "lbfgs" })
}
