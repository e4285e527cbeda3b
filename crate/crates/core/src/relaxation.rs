//! Lattice relaxation: tightening coefficients that carry lattice
//! inequalities over to the continuous sets, and assembly of the
//! certificate LP.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{ClassifiedLattice, Lattice, Partition, RegionSet, SafetySpec, UnitTransform};
use crate::solve::{Block, LpProblem, SharedBlock};
use crate::{Error, Result};

/// One-dimensional de la Vallée-Poussin kernel
/// `sin((b+a)z/2) sin((b−a)z/2) / ((b−a) sin²(z/2))`.
///
/// Integer `a` and `b` make it `2π`-periodic; the removable singularity at
/// `z ≡ 0` takes the value `a + b`.
pub fn vallee_poussin_1d(z: f64, a: f64, b: f64) -> f64 {
    let periodic = (a + b).fract() == 0.0 && (b - a).fract() == 0.0;
    let r = if periodic { z - 2.0 * PI * (z / (2.0 * PI)).round() } else { z };
    let p = 0.5 * (b + a);
    let q = 0.5 * (b - a);
    if r.abs() < 1e-7 {
        return (a + b) * (1.0 - r * r * ((p * p + q * q) / 6.0 - 1.0 / 12.0));
    }
    let s = (0.5 * r).sin();
    (p * r).sin() * (q * r).sin() / ((b - a) * s * s)
}

/// Tensor-product kernel `Πᵢ D_{a,b}(zᵢ)`.
pub fn vallee_poussin(z: &[f64], a: f64, b: f64) -> f64 {
    z.iter().map(|&zi| vallee_poussin_1d(zi, a, b)).product()
}

/// Lattice-to-continuum constant `(1 − 2 f_max / Q̃)^(−n/2)`.
pub fn coefficient_c(f_max: usize, resolution: usize, dim: usize) -> Result<f64> {
    if resolution <= 2 * f_max {
        return Err(Error::Nyquist { f_max, resolution });
    }
    let ratio = 1.0 - 2.0 * f_max as f64 / resolution as f64;
    Ok(ratio.powf(-(dim as f64) / 2.0))
}

/// Particle swarm settings for the `A` coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoOptions {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for PsoOptions {
    fn default() -> Self {
        PsoOptions { particles: 64, iterations: 200, inertia: 0.7, cognitive: 1.5, social: 1.5, seed: 0 }
    }
}

/// Kernel mass `(1/Ñ) Σ_{x̄ ∈ rows} D(2π(t − x̄))` evaluated through
/// per-dimension tables.
struct KernelSum {
    dim: usize,
    q: usize,
    a: f64,
    b: f64,
    /// Multi-indices of the summed points, flattened.
    idx: Vec<u32>,
    /// Sum over the complement is `1 − Σ_inside` when this is set.
    complement_of: bool,
    total: f64,
}

impl KernelSum {
    fn new(lattice: &Lattice, f_max: usize, enlarged: &Partition) -> Self {
        let q = lattice.resolution();
        // Σ over all lattice points is exactly Ñ, so sum over the smaller side.
        let (points, complement_of) = if enlarged.inside.len() < enlarged.outside.len() {
            (&enlarged.inside, true)
        } else {
            (&enlarged.outside, false)
        };
        let mut idx = Vec::with_capacity(points.len() * lattice.dim());
        for &p in points {
            idx.extend(lattice.multi_index(p).into_iter().map(|i| i as u32));
        }
        KernelSum {
            dim: lattice.dim(),
            q,
            a: f_max as f64,
            b: (q - f_max) as f64,
            idx,
            complement_of,
            total: lattice.len() as f64,
        }
    }

    fn eval(&self, t: &[f64], tables: &mut [f64]) -> f64 {
        let q = self.q;
        for d in 0..self.dim {
            for j in 0..q {
                tables[d * q + j] = vallee_poussin_1d(2.0 * PI * (t[d] - j as f64 / q as f64), self.a, self.b);
            }
        }
        let mut acc = 0.0;
        for chunk in self.idx.chunks_exact(self.dim) {
            let mut v = 1.0;
            for (d, &i) in chunk.iter().enumerate() {
                v *= tables[d * q + i as usize];
            }
            acc += v;
        }
        let s = acc / self.total;
        if self.complement_of {
            1.0 - s
        } else {
            s
        }
    }
}

/// Upper estimate of `sup_{x ∈ set} (1/Ñ) Σ_{x̄ ∈ Θ∖enlarged} D(2π(P(x) − x̄))`.
///
/// `enlarged` partitions the lattice against the enlarged set; the search runs
/// over the original `set`. Particle swarm seeded from lattice points in the
/// set, followed by a shrinking grid search around the incumbent. Clamped at
/// zero.
pub fn coefficient_a(
    lattice: &Lattice,
    f_max: usize,
    set: &RegionSet,
    transform: &UnitTransform,
    enlarged: &Partition,
    opts: &PsoOptions,
) -> Result<f64> {
    if set.dim() != lattice.dim() || transform.dim() != lattice.dim() {
        return Err(Error::DimensionMismatch { expected: lattice.dim(), got: set.dim() });
    }
    if lattice.resolution() <= 2 * f_max {
        return Err(Error::Nyquist { f_max, resolution: lattice.resolution() });
    }
    if enlarged.outside.is_empty() {
        return Ok(0.0);
    }
    let n = lattice.dim();
    let q = lattice.resolution();
    let sum = KernelSum::new(lattice, f_max, enlarged);
    let feasible = |t: &[f64]| set.contains_unchecked(&transform.inverse(t));
    let objective = |t: &[f64], tables: &mut Vec<f64>| -> f64 {
        if feasible(t) {
            sum.eval(t, tables)
        } else {
            f64::NEG_INFINITY
        }
    };
    let (blo, bhi) = set.bounding_box();
    let lo = transform.apply(&blo);
    let hi = transform.apply(&bhi);
    let width: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();

    // Coarse seeds: lattice points inside the original set, strided.
    let original = lattice.partition(set, transform);
    let stride = (original.inside.len() / 2048).max(1);
    let seeds: Vec<usize> = original.inside.iter().copied().step_by(stride).collect();
    let mut seeded: Vec<(f64, Vec<f64>)> = seeds
        .par_iter()
        .map_init(
            || vec![0.0; n * q],
            |tab, &p| {
                let t = lattice.point(p).to_vec();
                (objective(&t, tab), t)
            },
        )
        .collect();
    seeded.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(opts.particles);
    for (_, t) in seeded.iter().take(opts.particles / 2) {
        pos.push(t.clone());
    }
    while pos.len() < opts.particles {
        let mut t = vec![0.0; n];
        let mut found = false;
        for _ in 0..1000 {
            for d in 0..n {
                t[d] = lo[d] + rng.gen::<f64>() * width[d];
            }
            if feasible(&t) {
                found = true;
                break;
            }
        }
        if !found {
            match seeded.get(pos.len() % seeded.len().max(1)) {
                Some((_, s)) => t = s.clone(),
                None => t = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            }
        }
        pos.push(t);
    }
    let mut vel: Vec<Vec<f64>> = (0..opts.particles)
        .map(|_| (0..n).map(|d| (rng.gen::<f64>() - 0.5) * 0.1 * width[d]).collect())
        .collect();
    let mut vals: Vec<f64> = eval_all(&pos, n * q, &objective);
    let mut pbest = pos.clone();
    let mut pbest_val = vals.clone();
    let (mut gbest_val, mut gbest) = (f64::NEG_INFINITY, pos[0].clone());
    for (v, t) in vals.iter().zip(&pos).chain(seeded.first().map(|(v, t)| (v, t))) {
        if *v > gbest_val {
            gbest_val = *v;
            gbest = t.clone();
        }
    }
    for _ in 0..opts.iterations {
        for i in 0..opts.particles {
            for d in 0..n {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let v = opts.inertia * vel[i][d]
                    + opts.cognitive * r1 * (pbest[i][d] - pos[i][d])
                    + opts.social * r2 * (gbest[d] - pos[i][d]);
                vel[i][d] = v.clamp(-width[d], width[d]);
                pos[i][d] = (pos[i][d] + vel[i][d]).clamp(lo[d], hi[d]);
            }
        }
        vals = eval_all(&pos, n * q, &objective);
        for i in 0..opts.particles {
            if vals[i] > pbest_val[i] {
                pbest_val[i] = vals[i];
                pbest[i] = pos[i].clone();
            }
            if vals[i] > gbest_val {
                gbest_val = vals[i];
                gbest = pos[i].clone();
            }
        }
    }

    // Local refinement on a shrinking grid spanning the 3ⁿ neighbouring cells.
    let mut h = 1.0 / q as f64;
    let per_side = 8usize;
    for _ in 0..5 {
        let side = 2 * per_side + 1;
        let total = side.pow(n as u32);
        let cands: Vec<Vec<f64>> = (0..total)
            .map(|k| {
                let mut rest = k;
                (0..n)
                    .map(|d| {
                        let i = rest % side;
                        rest /= side;
                        (gbest[d] + h * (i as f64 - per_side as f64) / per_side as f64).clamp(lo[d], hi[d])
                    })
                    .collect()
            })
            .collect();
        let cvals = eval_all(&cands, n * q, &objective);
        for (v, t) in cvals.into_iter().zip(cands) {
            if v > gbest_val {
                gbest_val = v;
                gbest = t;
            }
        }
        h /= 4.0;
    }
    if !gbest_val.is_finite() {
        return Err(Error::InvalidSet("search for the tightening coefficient found no point inside the set".into()));
    }
    debug!("tightening coefficient {gbest_val:.6e} at {gbest:?}");
    Ok(gbest_val.max(0.0))
}

fn eval_all<F>(pts: &[Vec<f64>], table_len: usize, f: &F) -> Vec<f64>
where
    F: Fn(&[f64], &mut Vec<f64>) -> f64 + Sync,
{
    pts.par_iter().map_init(|| vec![0.0; table_len], |tab, t| f(t, tab)).collect()
}

/// Coefficients tying lattice bounds to bounds on the continuous sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tightening {
    pub f_max: usize,
    pub resolution: usize,
    pub c: f64,
    pub a_initial: f64,
    pub a_unsafe: f64,
    pub a_domain: f64,
}

impl Tightening {
    pub fn compute(
        classified: &ClassifiedLattice,
        spec: &SafetySpec,
        transform: &UnitTransform,
        f_max: usize,
        pso: &PsoOptions,
    ) -> Result<Self> {
        let lattice = &classified.lattice;
        let c = coefficient_c(f_max, lattice.resolution(), lattice.dim())?;
        let a = |set: &RegionSet, part: &Partition, salt: u64| {
            let opts = PsoOptions { seed: pso.seed.wrapping_add(salt), ..*pso };
            coefficient_a(lattice, f_max, set, transform, part, &opts)
        };
        Ok(Tightening {
            f_max,
            resolution: lattice.resolution(),
            c,
            a_initial: a(&spec.initial, &classified.initial, 1)?,
            a_unsafe: a(&spec.unsafe_set, &classified.unsafe_set, 2)?,
            a_domain: a(&spec.domain, &classified.domain, 3)?,
        })
    }

    /// `C − 2A + 1`; must be positive for the tightened bounds to exist.
    pub fn denominator(&self, a: f64) -> f64 {
        self.c - 2.0 * a + 1.0
    }

    fn checked_denominator(&self, a: f64, set: &'static str) -> Result<f64> {
        let d = self.denominator(a);
        if d > 0.0 {
            Ok(d)
        } else {
            Err(Error::LatticeTooCoarse { set, denominator: d })
        }
    }
}

/// Variable positions in the certificate LP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LpLayout {
    pub coeffs: Range<usize>,
    pub eta: usize,
    pub c: usize,
    pub bmin_initial: usize,
    pub bmax_unsafe: usize,
    pub bmin_delta: usize,
    pub bmax_domain: usize,
    pub bmax_initial_c: usize,
    pub bmin_unsafe_c: usize,
    pub bmin_domain_c: usize,
    pub bmax_delta_c: usize,
    /// Bounds `tⱼ ≥ |bⱼ|` when the ℓ₁ budget is active.
    pub abs: Option<Range<usize>>,
    pub num_vars: usize,
}

impl LpLayout {
    pub fn new(num_coeffs: usize, l1: bool) -> Self {
        let base = num_coeffs;
        let num_aux_end = base + 10;
        let abs = l1.then(|| num_aux_end..num_aux_end + num_coeffs);
        LpLayout {
            coeffs: 0..num_coeffs,
            eta: base,
            c: base + 1,
            bmin_initial: base + 2,
            bmax_unsafe: base + 3,
            bmin_delta: base + 4,
            bmax_domain: base + 5,
            bmax_initial_c: base + 6,
            bmin_unsafe_c: base + 7,
            bmin_domain_c: base + 8,
            bmax_delta_c: base + 9,
            num_vars: abs.as_ref().map_or(num_aux_end, |r| r.end),
            abs,
        }
    }
}

/// Inputs to [`assemble_lp`].
pub struct LpInputs<'a> {
    pub lattice: &'a ClassifiedLattice,
    /// Lattice features, one column per lattice point.
    pub features_t: Arc<DMatrix<f64>>,
    pub h: &'a DMatrix<f64>,
    pub tightening: &'a Tightening,
    pub horizon: usize,
    pub epsilon: f64,
    pub b_bar: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BarrierLp {
    pub problem: LpProblem,
    pub layout: LpLayout,
    pub tightening: Tightening,
    /// Columns `(H − I)ᵀ φ(x̄)` per lattice point.
    pub delta_t: Arc<DMatrix<f64>>,
}

/// Row count `2(N̂₀ + N̂ᵤ) + 4N̂ + (Ñ − N̂₀) + (Ñ − N̂ᵤ) + 2(Ñ − N̂)`.
pub fn expected_row_count(n_initial: usize, n_unsafe: usize, n_domain: usize, total: usize) -> usize {
    2 * (n_initial + n_unsafe) + 4 * n_domain + (total - n_initial) + (total - n_unsafe) + 2 * (total - n_domain)
}

/// Builds the certificate LP: minimize `η + cT` over coefficients `b` and the
/// auxiliary bounds, with every lattice inequality multiplied through by its
/// positive denominator.
pub fn assemble_lp(inp: &LpInputs<'_>) -> Result<BarrierLp> {
    let cl = inp.lattice;
    let phi = inp.features_t.clone();
    let l = phi.nrows();
    if phi.ncols() != cl.lattice.len() {
        return Err(Error::DimensionMismatch { expected: cl.lattice.len(), got: phi.ncols() });
    }
    if inp.h.nrows() != l || inp.h.ncols() != l {
        return Err(Error::DimensionMismatch { expected: l, got: inp.h.nrows() });
    }
    for (name, part) in [("X_init", &cl.initial), ("X_unsafe", &cl.unsafe_set), ("X_bounds", &cl.domain)] {
        if part.inside.is_empty() {
            return Err(Error::InvalidSet(format!(
                "{name} contains no lattice points; increase lattice_resolution"
            )));
        }
    }
    let t = inp.tightening;
    let den0 = t.checked_denominator(t.a_initial, "X_init")?;
    let denu = t.checked_denominator(t.a_unsafe, "X_unsafe")?;
    let denx = t.checked_denominator(t.a_domain, "X_bounds")?;
    let cm1 = t.c - 1.0;

    let robust = inp.epsilon > 0.0;
    let eps_term = if robust {
        let b_bar = inp.b_bar.ok_or_else(|| Error::MissingKey("b_bar".into()))?;
        let kappa = inp.kappa.ok_or_else(|| Error::MissingKey("kappa".into()))?;
        2.0 * inp.epsilon * b_bar * kappa
    } else {
        0.0
    };
    let lay = LpLayout::new(l, robust);
    let mut h_minus_i = inp.h.clone();
    for j in 0..l {
        h_minus_i[(j, j)] -= 1.0;
    }
    let delta = Arc::new(h_minus_i.transpose() * phi.as_ref());

    let mut lp = LpProblem::new(lay.num_vars);
    for j in lay.coeffs.clone() {
        lp.var_names[j] = format!("b{j}");
    }
    let names = [
        (lay.eta, "eta"),
        (lay.c, "c"),
        (lay.bmin_initial, "bmin_init"),
        (lay.bmax_unsafe, "bmax_unsafe"),
        (lay.bmin_delta, "bmin_delta"),
        (lay.bmax_domain, "bmax_domain"),
        (lay.bmax_initial_c, "bmax_init_compl"),
        (lay.bmin_unsafe_c, "bmin_unsafe_compl"),
        (lay.bmin_domain_c, "bmin_domain_compl"),
        (lay.bmax_delta_c, "bmax_delta_compl"),
    ];
    for (i, n) in names {
        lp.var_names[i] = n.to_string();
    }
    lp.objective[lay.eta] = 1.0;
    lp.objective[lay.c] = inp.horizon as f64;
    lp.lower[lay.eta] = 0.0;
    lp.upper[lay.eta] = 1.0;
    lp.lower[lay.c] = 0.0;
    // Auxiliaries over empty complements never appear in a row.
    let fixes = [
        (lay.bmax_initial_c, cl.initial.outside.is_empty()),
        (lay.bmin_unsafe_c, cl.unsafe_set.outside.is_empty()),
        (lay.bmin_domain_c, cl.domain.outside.is_empty()),
        (lay.bmax_delta_c, cl.domain.outside.is_empty()),
    ];
    for (v, empty) in fixes {
        if empty {
            lp.lower[v] = 0.0;
            lp.upper[v] = 0.0;
        }
    }

    let block = |name: &str, m: &Arc<DMatrix<f64>>, scale: f64, points: &[usize], extra: Vec<(usize, f64)>, rhs: f64| {
        Block::Shared(SharedBlock {
            name: name.to_string(),
            matrix: m.clone(),
            var_offset: 0,
            scale,
            points: points.to_vec(),
            extra,
            rhs,
        })
    };
    let x0 = &cl.initial.inside;
    let xu = &cl.unsafe_set.inside;
    let xd = &cl.domain.inside;
    lp.blocks.push(block(
        "init_eta",
        &phi,
        den0,
        x0,
        vec![(lay.eta, -2.0), (lay.bmin_initial, -cm1), (lay.bmax_initial_c, 2.0 * t.a_initial)],
        0.0,
    ));
    lp.blocks.push(block("init_min", &phi, -1.0, x0, vec![(lay.bmin_initial, 1.0)], 0.0));
    lp.blocks.push(block(
        "unsafe_gamma",
        &phi,
        -denu,
        xu,
        vec![(lay.bmax_unsafe, cm1), (lay.bmin_unsafe_c, -2.0 * t.a_unsafe)],
        -2.0,
    ));
    lp.blocks.push(block("unsafe_max", &phi, 1.0, xu, vec![(lay.bmax_unsafe, -1.0)], 0.0));
    lp.blocks.push(block(
        "domain_drift",
        &delta,
        denx,
        xd,
        vec![(lay.c, -2.0), (lay.bmin_delta, -cm1), (lay.bmax_delta_c, 2.0 * t.a_domain)],
        -eps_term,
    ));
    lp.blocks.push(block("domain_drift_min", &delta, -1.0, xd, vec![(lay.bmin_delta, 1.0)], 0.0));
    lp.blocks.push(block(
        "domain_nonneg",
        &phi,
        -denx,
        xd,
        vec![(lay.bmax_domain, cm1), (lay.bmin_domain_c, -2.0 * t.a_domain)],
        0.0,
    ));
    lp.blocks.push(block("domain_max", &phi, 1.0, xd, vec![(lay.bmax_domain, -1.0)], 0.0));
    lp.blocks.push(block("init_compl", &phi, 1.0, &cl.initial.outside, vec![(lay.bmax_initial_c, -1.0)], 0.0));
    lp.blocks.push(block("unsafe_compl", &phi, -1.0, &cl.unsafe_set.outside, vec![(lay.bmin_unsafe_c, 1.0)], 0.0));
    lp.blocks.push(block("domain_compl", &phi, -1.0, &cl.domain.outside, vec![(lay.bmin_domain_c, 1.0)], 0.0));
    lp.blocks.push(block("drift_compl", &delta, 1.0, &cl.domain.outside, vec![(lay.bmax_delta_c, -1.0)], 0.0));

    if let (Some(abs), true) = (lay.abs.clone(), robust) {
        let b_bar = inp.b_bar.unwrap_or_default();
        for (j, tj) in lay.coeffs.clone().zip(abs.clone()) {
            lp.var_names[tj] = format!("abs_b{j}");
            lp.lower[tj] = 0.0;
            lp.push_row("l1_split", vec![(j, 1.0), (tj, -1.0)], 0.0);
            lp.push_row("l1_split", vec![(j, -1.0), (tj, -1.0)], 0.0);
        }
        lp.push_row("l1_budget", abs.map(|tj| (tj, 1.0)).collect(), b_bar);
    }
    debug!(
        "assembled LP: {} variables, {} rows (denominators {den0:.4}, {denu:.4}, {denx:.4})",
        lp.num_vars(),
        lp.num_rows()
    );
    Ok(BarrierLp { problem: lp, layout: lay, tightening: *t, delta_t: delta })
}
