//! Truncated Fourier features drawn from the Gaussian kernel's spectral
//! measure, and the finite-basis transition operator `H`.
//!
//! Frequencies are `ω = 2πk` for integer `k ∈ {-F..F}ⁿ`, one per `±k` pair,
//! with `k = 0` first. The feature vector is
//! `[σ_f²m₀, σ_f²m₁cos(ω₁ᵀt), σ_f²m₁sin(ω₁ᵀt), ...]` with `t = P(x)`, so
//! `φ(x)ᵀ diag(σ_f²m)⁻¹ φ(x') ≈ k(x, x')`.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::FittedEstimator;
use crate::geometry::{Lattice, UnitTransform};

/// Upper tail `P(Z > z)` of a standard normal.
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Mass of the 1-D band `[2π|k| - π, 2π|k| + π]` under `N(0, s²)`, the band
/// `|k| = degree` absorbing the tail beyond it.
fn band_mass_1d(k: i32, degree: i32, s: f64) -> f64 {
    let k = k.abs();
    if k == 0 {
        return 1.0 - 2.0 * upper_tail(PI / s);
    }
    let lo = upper_tail((2.0 * k as f64 - 1.0) * PI / s);
    if k == degree {
        lo
    } else {
        lo - upper_tail((2.0 * k as f64 + 1.0) * PI / s)
    }
}

/// Integer frequency representatives `k ≠ 0` with first nonzero entry
/// positive, enumerated with the first coordinate varying fastest.
pub fn frequency_grid(dim: usize, degree: usize) -> Vec<Vec<i32>> {
    let side = 2 * degree + 1;
    let total = side.pow(dim as u32);
    let mut out = Vec::with_capacity((total - 1) / 2);
    for idx in 0..total {
        let mut rest = idx;
        let k: Vec<i32> = (0..dim)
            .map(|_| {
                let d = (rest % side) as i32 - degree as i32;
                rest /= side;
                d
            })
            .collect();
        if k.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0) {
            out.push(k);
        }
    }
    out
}

/// Band masses `m₀..m_M` (paired bands combined) for the given feature
/// lengthscales in torus units. The spectral standard deviation in dimension
/// `d` is `1 / feature_sigma_l[d]`.
pub fn spectral_weights(feature_sigma_l: &[f64], degree: usize) -> Result<(Vec<Vec<i32>>, Vec<f64>)> {
    if degree < 1 {
        return Err(Error::InvalidArgument("feature degree must be at least 1".into()));
    }
    if feature_sigma_l.is_empty() || feature_sigma_l.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("feature_sigma_l must be positive".into()));
    }
    let dim = feature_sigma_l.len();
    let freqs = frequency_grid(dim, degree);
    let stds: Vec<f64> = feature_sigma_l.iter().map(|l| 1.0 / l).collect();
    let mass = |k: &[i32]| -> f64 {
        k.iter().zip(&stds).map(|(&kd, &s)| band_mass_1d(kd, degree as i32, s)).product()
    };
    let mut masses = Vec::with_capacity(freqs.len() + 1);
    masses.push(mass(&vec![0; dim]));
    for k in &freqs {
        masses.push(2.0 * mass(k));
    }
    Ok((freqs, masses))
}

/// Truncated Fourier feature map `φ_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    degree: usize,
    freqs: Vec<Vec<i32>>,
    masses: Vec<f64>,
    sigma_f: f64,
    feature_sigma_l: Vec<f64>,
    transform: UnitTransform,
    /// `σ_f² m` expanded to one entry per feature.
    weights: Vec<f64>,
}

impl FeatureMap {
    pub fn new(degree: usize, sigma_f: f64, feature_sigma_l: &[f64], transform: UnitTransform) -> Result<Self> {
        if transform.dim() != feature_sigma_l.len() {
            return Err(Error::DimensionMismatch { expected: transform.dim(), got: feature_sigma_l.len() });
        }
        if !(sigma_f > 0.0 && sigma_f.is_finite()) {
            return Err(Error::InvalidArgument("sigma_f must be positive".into()));
        }
        let (freqs, masses) = spectral_weights(feature_sigma_l, degree)?;
        let sf2 = sigma_f * sigma_f;
        let mut weights = Vec::with_capacity(2 * freqs.len() + 1);
        weights.push(sf2 * masses[0]);
        for m in &masses[1..] {
            weights.push(sf2 * m);
            weights.push(sf2 * m);
        }
        let hint = 3.0 / (2.0 * PI * degree as f64);
        for (d, l) in feature_sigma_l.iter().enumerate() {
            log::debug!("feature_sigma_l[{d}] = {l}, consistency hint 3/(2πF) = {hint:.4}");
        }
        Ok(FeatureMap {
            dim: transform.dim(),
            degree,
            freqs,
            masses,
            sigma_f,
            feature_sigma_l: feature_sigma_l.to_vec(),
            transform,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Maximum integer frequency per dimension (`f_max`).
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of frequency pairs `M`.
    pub fn num_pairs(&self) -> usize {
        self.freqs.len()
    }

    /// Feature vector length `2M + 1`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn frequencies(&self) -> &[Vec<i32>] {
        &self.freqs
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Diagonal of `D = diag(σ_f² m)` expanded per feature.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma_f(&self) -> f64 {
        self.sigma_f
    }

    pub fn feature_sigma_l(&self) -> &[f64] {
        &self.feature_sigma_l
    }

    pub fn transform(&self) -> &UnitTransform {
        &self.transform
    }

    /// `φ_M(x)` for `x` in original coordinates.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.features_torus_into(&self.transform.apply(x), &mut out);
        out
    }

    /// `φ_M` at torus coordinates `t = P(x)`.
    pub fn features_torus(&self, t: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.features_torus_into(t, &mut out);
        out
    }

    pub(crate) fn features_torus_into(&self, t: &[f64], out: &mut [f64]) {
        out[0] = self.weights[0];
        for (j, k) in self.freqs.iter().enumerate() {
            let arg: f64 = 2.0 * PI * k.iter().zip(t).map(|(&kd, td)| kd as f64 * td).sum::<f64>();
            let (s, c) = arg.sin_cos();
            out[2 * j + 1] = self.weights[2 * j + 1] * c;
            out[2 * j + 2] = self.weights[2 * j + 2] * s;
        }
    }

    /// `B(x) = φ_M(x)ᵀ b`.
    pub fn evaluate(&self, b: &[f64], x: &[f64]) -> f64 {
        self.features(x).iter().zip(b).map(|(a, b)| a * b).sum()
    }

    /// `φ(x)ᵀ D⁻¹ φ(x')`.
    pub fn kernel_approx(&self, x: &[f64], xp: &[f64]) -> f64 {
        let a = self.features(x);
        let b = self.features(xp);
        a.iter().zip(&b).zip(&self.weights).map(|((a, b), w)| a * b / w).sum()
    }

    /// Features of every row of `xs` (original coordinates), one row each.
    pub fn features_many(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = (0..xs.nrows())
            .into_par_iter()
            .map(|i| {
                let x: Vec<f64> = xs.row(i).iter().copied().collect();
                self.features(&x)
            })
            .collect();
        DMatrix::from_fn(xs.nrows(), self.len(), |i, j| rows[i][j])
    }

    /// Lattice features, one row per lattice point (`Ñ × (2M+1)`).
    pub fn features_on_lattice(&self, lattice: &Lattice) -> Result<DMatrix<f64>> {
        Ok(self.lattice_features_t(lattice)?.transpose())
    }

    /// Lattice features stored one column per point (`(2M+1) × Ñ`).
    ///
    /// Uses exact roots of unity: the phase of frequency `k` at multi-index
    /// `i` is `2π (Σ k_d i_d mod Q) / Q`.
    pub fn lattice_features_t(&self, lattice: &Lattice) -> Result<DMatrix<f64>> {
        if lattice.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: lattice.dim() });
        }
        let q = lattice.resolution() as i64;
        let roots: Vec<(f64, f64)> = (0..q)
            .map(|m| {
                let (s, c) = (2.0 * PI * m as f64 / q as f64).sin_cos();
                (c, s)
            })
            .collect();
        let l = self.len();
        let mut out = DMatrix::zeros(l, lattice.len());
        out.as_mut_slice().par_chunks_mut(l).enumerate().for_each(|(p, col)| {
            let idx = lattice.multi_index(p);
            col[0] = self.weights[0];
            for (j, k) in self.freqs.iter().enumerate() {
                let phase: i64 = k.iter().zip(&idx).map(|(&kd, &id)| kd as i64 * id as i64).sum();
                let (c, s) = roots[phase.rem_euclid(q) as usize];
                col[2 * j + 1] = self.weights[2 * j + 1] * c;
                col[2 * j + 2] = self.weights[2 * j + 2] * s;
            }
        });
        Ok(out)
    }
}

/// Finite-basis transition operator: `φ(x)ᵀ H b ≈ E[B(x₊) | x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub h: DMatrix<f64>,
}

/// Builds `H` by least-squares projection onto the feature basis of the
/// estimator's predictions `Y(x) = k_X(x)ᵀ (K + NλI)⁻¹ Φ₊` sampled on a
/// regular `resolution`ⁿ lattice: `H = (ΦᵀΦ)⁻¹ ΦᵀY`.
///
/// The constant column is pinned to `e₀` since `E[c | x] = c`.
pub fn transition_matrix(est: &FittedEstimator, map: &FeatureMap, resolution: usize) -> Result<TransitionMatrix> {
    if est.dim() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), got: est.dim() });
    }
    if resolution <= 2 * map.degree() {
        return Err(Error::Nyquist { f_max: map.degree(), resolution });
    }
    let l = map.len();
    let targets = est.targets();
    let phi_plus = DMatrix::from_fn(targets.nrows(), l, |_, _| 0.0);
    let phi_plus = {
        let mut m = phi_plus;
        for i in 0..targets.nrows() {
            let x: Vec<f64> = targets.row(i).iter().copied().collect();
            let f = map.features(&x);
            for j in 0..l {
                m[(i, j)] = f[j];
            }
        }
        m
    };
    let z = est.solve(&phi_plus);

    let lattice = Lattice::regular(map.dim(), resolution)?;
    let phi_t = map.lattice_features_t(&lattice)?;
    let transform = map.transform();
    const CHUNK: usize = 2048;
    let n_pts = lattice.len();
    let n_chunks = n_pts.div_ceil(CHUNK);
    // Partial ΦᵀΦ and ΦᵀY per chunk, summed in chunk order for determinism.
    let partials: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n_pts);
            let m = end - start;
            let mut kc = DMatrix::zeros(m, est.len());
            let mut x = vec![0.0; map.dim()];
            let mut row = vec![0.0; est.len()];
            for (r, p) in (start..end).enumerate() {
                transform.inverse_into(lattice.point(p), &mut x);
                est.kernel_row_into(&x, &mut row);
                for (i, v) in row.iter().enumerate() {
                    kc[(r, i)] = *v;
                }
            }
            let y = kc * &z;
            let phi_c = phi_t.columns(start, m);
            (&phi_c * phi_c.transpose(), phi_c * y)
        })
        .collect();
    let mut gram = DMatrix::zeros(l, l);
    let mut rhs = DMatrix::zeros(l, l);
    for (g, r) in partials {
        gram += g;
        rhs += r;
    }
    let chol = nalgebra::Cholesky::new(gram)
        .ok_or_else(|| Error::Singular("feature Gram matrix on the projection lattice is singular".into()))?;
    let mut h = chol.solve(&rhs);
    for i in 0..l {
        h[(i, 0)] = if i == 0 { 1.0 } else { 0.0 };
    }
    Ok(TransitionMatrix { h })
}
