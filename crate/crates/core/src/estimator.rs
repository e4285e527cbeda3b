//! Gaussian kernel, regularized Gram systems, and the empirical conditional
//! mean embedding (kernel ridge regression) used to predict `E[x₊ | x]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Gaussian kernel hyperparameters plus the ridge constant.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct KernelParams {
    pub sigma_f: f64,
    /// One lengthscale per input dimension.
    pub sigma_l: Vec<f64>,
    pub lambda: f64,
}

impl KernelParams {
    pub fn new(sigma_f: f64, sigma_l: Vec<f64>, lambda: f64) -> Result<Self> {
        let p = KernelParams { sigma_f, sigma_l, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_f must be positive, got {}", self.sigma_f)));
        }
        if self.sigma_l.is_empty() || self.sigma_l.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("sigma_l must be positive, got {:?}", self.sigma_l)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.sigma_l.len()
    }

    /// `k(x, x') = σ_f² exp(-½ Σ ((x - x') / σ_l)²)`.
    pub fn kernel(&self, x: &[f64], xp: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((a, b), l) in x.iter().zip(xp).zip(&self.sigma_l) {
            let d = (a - b) / l;
            s += d * d;
        }
        self.sigma_f * self.sigma_f * (-0.5 * s).exp()
    }

    fn scaled_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] / self.sigma_l[j])
    }
}

/// Checked kernel evaluation.
pub fn kernel_eval(params: &KernelParams, x: &[f64], xp: &[f64]) -> Result<f64> {
    if x.len() != params.dim() || xp.len() != params.dim() {
        return Err(Error::DimensionMismatch { expected: params.dim(), got: x.len().max(xp.len()) });
    }
    Ok(params.kernel(x, xp))
}

#[inline]
fn sq_dist_row(u: &DMatrix<f64>, i: usize, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for (j, vj) in v.iter().enumerate() {
        let d = u[(i, j)] - vj;
        s += d * d;
    }
    s
}

/// `K[i, j] = k(x_i, x_j)` over the rows of `x`.
pub fn gram_matrix(params: &KernelParams, x: &DMatrix<f64>) -> DMatrix<f64> {
    let u = params.scaled_rows(x);
    let sf2 = params.sigma_f * params.sigma_f;
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let uj: Vec<f64> = u.row(j).iter().copied().collect();
            (0..n).map(|i| sf2 * (-0.5 * sq_dist_row(&u, i, &uj)).exp()).collect()
        })
        .collect();
    for (j, c) in cols.into_iter().enumerate() {
        k.column_mut(j).copy_from_slice(&c);
    }
    // exact symmetry
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Kernel ridge regressor fitted on a dataset.
#[derive(Debug, Clone)]
pub struct FittedEstimator {
    params: KernelParams,
    /// Training inputs divided by the lengthscales.
    u: DMatrix<f64>,
    x: DMatrix<f64>,
    xp: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    w: DMatrix<f64>,
    /// Diagonal jitter that had to be added for the factorization (0 if none).
    jitter: f64,
}

fn regularized_gram(params: &KernelParams, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut a = gram_matrix(params, x);
    let reg = n as f64 * params.lambda;
    for i in 0..n {
        a[(i, i)] += reg;
    }
    a
}

/// Cholesky of `a`, retrying once with `1e-12 · trace` added to the diagonal.
fn factorize(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let jitter = 1e-12 * a.trace();
    let mut b = a.clone();
    for i in 0..b.nrows() {
        b[(i, i)] += jitter;
    }
    log::warn!("regularized Gram matrix not positive definite; added jitter {jitter:.3e}");
    Cholesky::new(b)
        .map(|c| (c, jitter))
        .ok_or_else(|| Error::Singular("Gram system is not positive definite even after jitter".into()))
}

/// Solves `a w = rhs` via `chol`, refining against the exact `a` until the
/// residual meets `1e-8 · ‖rhs‖`.
fn solve_checked(a: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let tol = 1e-8 * rhs.norm();
    let mut w = chol.solve(rhs);
    let mut res = rhs - a * &w;
    for _ in 0..3 {
        if res.norm() <= tol {
            break;
        }
        w += chol.solve(&res);
        res = rhs - a * &w;
    }
    let r = res.norm();
    if r > tol {
        return Err(Error::Singular(format!(
            "Gram system residual {r:.3e} exceeds tolerance {tol:.3e} (duplicate inputs with lambda = 0?)"
        )));
    }
    Ok(w)
}

impl FittedEstimator {
    pub fn fit(params: &KernelParams, data: &Dataset) -> Result<Self> {
        params.validate()?;
        if data.dim() != params.dim() {
            return Err(Error::DimensionMismatch { expected: params.dim(), got: data.dim() });
        }
        let a = regularized_gram(params, &data.x);
        let (chol, jitter) = factorize(&a)?;
        let w = solve_checked(&a, &chol, &data.xp)?;
        Ok(FittedEstimator {
            params: params.clone(),
            u: params.scaled_rows(&data.x),
            x: data.x.clone(),
            xp: data.xp.clone(),
            chol,
            w,
            jitter,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.xp
    }

    /// `(K + NλI)⁻¹ X₊`.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `k_X(x)`: kernel values between `x` and every training input.
    pub fn kernel_row(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        self.kernel_row_into(x, out.as_mut_slice());
        out
    }

    pub(crate) fn kernel_row_into(&self, x: &[f64], out: &mut [f64]) {
        let sf2 = self.params.sigma_f * self.params.sigma_f;
        let v: Vec<f64> = x.iter().zip(&self.params.sigma_l).map(|(a, l)| a / l).collect();
        for (i, o) in out.iter_mut().enumerate() {
            *o = sf2 * (-0.5 * sq_dist_row(&self.u, i, &v)).exp();
        }
    }

    /// `(K + NλI)⁻¹ rhs` using the stored factorization.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// Predicted mean successor `k_X(x)ᵀ W`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let k = self.kernel_row(x);
        (0..self.w.ncols()).map(|j| k.dot(&self.w.column(j))).collect()
    }

    /// Predictions for every row of `xs`.
    pub fn predict_many(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_many(xs, &self.w)
    }

    /// `k_X(x_i)ᵀ coef` for every row `x_i` of `xs`, where `coef` has one row
    /// per training sample.
    pub fn apply_many(&self, xs: &DMatrix<f64>, coef: &DMatrix<f64>) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = (0..xs.nrows())
            .into_par_iter()
            .map_init(
                || (vec![0.0; self.len()], vec![0.0; xs.ncols()]),
                |(krow, x), i| {
                    for (d, v) in x.iter_mut().enumerate() {
                        *v = xs[(i, d)];
                    }
                    self.kernel_row_into(x, krow);
                    (0..coef.ncols())
                        .map(|j| krow.iter().zip(coef.column(j).iter()).map(|(a, b)| a * b).sum())
                        .collect()
                },
            )
            .collect();
        DMatrix::from_fn(xs.nrows(), coef.ncols(), |i, j| rows[i][j])
    }

    /// Mean R² over output dimensions on a holdout set.
    pub fn r2_score(&self, holdout: &Dataset) -> Result<f64> {
        if holdout.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: holdout.dim() });
        }
        r2(&holdout.xp, &self.predict_many(&holdout.x))
    }
}

/// `1 - Σ(y - ŷ)² / Σ(y - ȳ)²` averaged over columns.
pub fn r2(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<f64> {
    if y.shape() != yhat.shape() || y.nrows() == 0 {
        return Err(Error::InvalidArgument("r2 requires equally shaped, non-empty inputs".into()));
    }
    let mut total = 0.0;
    for j in 0..y.ncols() {
        let col = y.column(j);
        let mean = col.mean();
        let ss_tot: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        if ss_tot <= 0.0 {
            return Err(Error::InvalidArgument(format!("target column {j} has zero variance")));
        }
        let ss_res: f64 = col.iter().zip(yhat.column(j).iter()).map(|(a, b)| (a - b).powi(2)).sum();
        total += 1.0 - ss_res / ss_tot;
    }
    Ok(total / y.ncols() as f64)
}

fn lml_from_parts(chol: &Cholesky<f64, Dyn>, y: &DMatrix<f64>, alpha: &DMatrix<f64>) -> f64 {
    let n = y.nrows() as f64;
    let d = y.ncols() as f64;
    let fit = y.component_mul(alpha).sum();
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * fit - 0.5 * d * logdet - 0.5 * n * d * (2.0 * std::f64::consts::PI).ln()
}

/// `−½ Yᵀ(K+NλI)⁻¹Y − ½ log|K+NλI| − (N/2) log 2π`, summed over output columns.
pub fn log_marginal_likelihood(params: &KernelParams, data: &Dataset) -> Result<f64> {
    params.validate()?;
    let a = regularized_gram(params, &data.x);
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::Objective("regularized Gram matrix is not positive definite".into()))?;
    let alpha = chol.solve(&data.xp);
    Ok(lml_from_parts(&chol, &data.xp, &alpha))
}

/// Log marginal likelihood and its gradient with respect to
/// `(log σ_f, log σ_l[0..n], log λ)`.
///
/// With `α = A⁻¹Y` and `D` output columns,
/// `∂L/∂θ = ½ tr((ααᵀ − D·A⁻¹) ∂A/∂θ)`.
pub fn lml_with_gradient(params: &KernelParams, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let n = data.len();
    let dim = params.dim();
    let k = gram_matrix(params, &data.x);
    let mut a = k.clone();
    let reg = n as f64 * params.lambda;
    for i in 0..n {
        a[(i, i)] += reg;
    }
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::Objective("regularized Gram matrix is not positive definite".into()))?;
    let y = &data.xp;
    let alpha = chol.solve(y);
    let value = lml_from_parts(&chol, y, &alpha);

    // M = ααᵀ − D·A⁻¹ (symmetric)
    let mut m = chol.inverse() * -(y.ncols() as f64);
    m += &alpha * alpha.transpose();

    let mut grad = vec![0.0; dim + 2];
    // ∂A/∂log σ_f = 2K
    grad[0] = m.component_mul(&k).sum();
    // ∂A/∂log σ_l[d] = K ⊙ (Δ_d / σ_l[d])²
    for d in 0..dim {
        let l = params.sigma_l[d];
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                let r = (data.x[(i, d)] - data.x[(j, d)]) / l;
                s += m[(i, j)] * k[(i, j)] * r * r;
            }
        }
        grad[1 + d] = 0.5 * s;
    }
    // ∂A/∂log λ = NλI
    grad[dim + 1] = 0.5 * reg * m.trace();
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p1(sf: f64, sl: f64, lambda: f64) -> KernelParams {
        KernelParams::new(sf, vec![sl], lambda).unwrap()
    }

    fn random_data(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, dim, |_, _| rng.gen_range(-1.0..1.0));
        let xp = DMatrix::from_fn(n, dim, |i, j| (2.0f64 * x[(i, j)]).sin() + 0.1 * rng.gen_range(-1.0..1.0));
        Dataset::new(x, xp).unwrap()
    }

    #[test]
    fn kernel_values() {
        let p = p1(1.0, 1.0, 0.0);
        assert_eq!(kernel_eval(&p, &[0.3], &[0.3]).unwrap(), 1.0);
        assert_abs_diff_eq!(kernel_eval(&p, &[0.0], &[1.0]).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(p.kernel(&[0.0], &[1.0]), 0.60653, epsilon = 1e-5);
        let q = p1(2.0, 0.5, 0.0);
        assert_eq!(q.kernel(&[0.1], &[0.1]), 4.0);
        assert!(kernel_eval(&p, &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn gram_examples() {
        let p = p1(1.5, 1.0, 0.0);
        let k = gram_matrix(&p, &DMatrix::from_row_slice(1, 1, &[0.2]));
        assert_eq!(k[(0, 0)], 2.25);
        let k = gram_matrix(&p1(1.0, 1.0, 0.0), &DMatrix::from_row_slice(2, 1, &[0.4, 0.4]));
        assert_eq!(k, DMatrix::from_element(2, 2, 1.0));
        let d = random_data(20, 2, 1);
        let k = gram_matrix(&KernelParams::new(1.0, vec![0.5, 0.7], 0.0).unwrap(), &d.x);
        let eig = k.symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10);
        assert_eq!(k, k.transpose());
    }

    #[test]
    fn one_sample_closed_form() {
        let d = Dataset::from_rows(&[vec![0.4]], &[vec![0.7]]).unwrap();
        for lambda in [0.0, 0.5] {
            let e = FittedEstimator::fit(&p1(1.0, 0.3, lambda), &d).unwrap();
            assert_abs_diff_eq!(e.weights()[(0, 0)], 0.7 / (1.0 + lambda), epsilon = 1e-15);
            assert_abs_diff_eq!(e.predict(&[0.4])[0], 0.7 / (1.0 + lambda), epsilon = 1e-15);
        }
        let e = FittedEstimator::fit(&p1(2.0, 0.3, 0.5), &d).unwrap();
        assert_abs_diff_eq!(e.predict(&[0.4])[0], 4.0 / 4.5 * 0.7, epsilon = 1e-14);
    }

    #[test]
    fn duplicates_without_ridge_are_singular() {
        let d = Dataset::from_rows(&[vec![0.1], vec![0.1]], &[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(FittedEstimator::fit(&p1(1.0, 1.0, 0.0), &d), Err(Error::Singular(_))));
        assert!(FittedEstimator::fit(&p1(1.0, 1.0, 1e-3), &d).is_ok());
    }

    #[test]
    fn residual_invariant() {
        let d = random_data(60, 2, 3);
        let p = KernelParams::new(1.0, vec![0.4, 0.4], 1e-4).unwrap();
        let e = FittedEstimator::fit(&p, &d).unwrap();
        let a = regularized_gram(&p, &d.x);
        assert!((a * e.weights() - &d.xp).norm() <= 1e-8 * d.xp.norm());
    }

    #[test]
    fn interpolation_at_tiny_ridge() {
        let d = random_data(30, 1, 5);
        let e = FittedEstimator::fit(&p1(1.0, 0.05, 1e-12), &d).unwrap();
        for i in 0..d.len() {
            assert!((e.predict(&[d.x[(i, 0)]])[0] - d.xp[(i, 0)]).abs() <= 1e-4);
        }
    }

    #[test]
    fn linear_benchmark_prediction() {
        use crate::data::{sample_transitions, DynamicsModel};
        use crate::geometry::RegionSet;
        let m = DynamicsModel::parse(&["x1 / 2"], Some(&[0.1])).unwrap();
        let d = sample_transitions(&m, 1000, &RegionSet::rect(vec![-1.0], vec![1.0]).unwrap(), 42).unwrap();
        let e = FittedEstimator::fit(&p1(1.0, 0.0446, 1e-5), &d).unwrap();
        assert!((e.predict(&[0.6])[0] - 0.3).abs() <= 0.03);
    }

    #[test]
    fn r2_examples() {
        let y = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &DMatrix::from_element(3, 1, 1.0)).unwrap(), 0.0);
        assert_eq!(r2(&y, &DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 1.0])).unwrap(), 0.5);
        assert!(r2(&DMatrix::from_element(3, 1, 1.0), &y).is_err());
    }

    #[test]
    fn lml_one_sample() {
        let y = 0.7;
        let d = Dataset::from_rows(&[vec![0.0]], &[vec![y]]).unwrap();
        let v = log_marginal_likelihood(&p1(1.0, 1.0, 0.0), &d).unwrap();
        assert_abs_diff_eq!(v, -0.5 * y * y - 0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn lml_prefers_better_fit() {
        // Two well-separated points with very different targets: a short
        // lengthscale explains them, a very long one forces them equal.
        let d = Dataset::from_rows(&[vec![0.0], vec![1.0]], &[vec![-1.0], vec![1.0]]).unwrap();
        let good = log_marginal_likelihood(&p1(1.0, 0.2, 1e-3), &d).unwrap();
        let bad = log_marginal_likelihood(&p1(1.0, 50.0, 1e-3), &d).unwrap();
        assert!(good > bad, "{good} vs {bad}");
        let d = random_data(50, 2, 9);
        assert!(log_marginal_likelihood(&KernelParams::new(0.8, vec![0.3, 0.6], 1e-3).unwrap(), &d)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn lml_gradient_matches_central_differences() {
        for seed in 0..5 {
            let d = random_data(10, 2, 100 + seed);
            let base = [0.9f64, 0.5, 0.8, 1e-2];
            let make = |t: &[f64]| KernelParams::new(t[0].exp(), vec![t[1].exp(), t[2].exp()], t[3].exp()).unwrap();
            let theta: Vec<f64> = base.iter().map(|v| v.ln()).collect();
            let (_, g) = lml_with_gradient(&make(&theta), &d).unwrap();
            let h = 1e-5;
            for k in 0..theta.len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let fd = (log_marginal_likelihood(&make(&tp), &d).unwrap()
                    - log_marginal_likelihood(&make(&tm), &d).unwrap())
                    / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(1e-3);
                assert!(rel <= 1e-4, "seed {seed} param {k}: fd {fd} analytic {}", g[k]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kernel_symmetric_and_bounded(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, d in -5.0..5.0f64) {
            let p = KernelParams::new(1.3, vec![0.7, 1.9], 0.0).unwrap();
            let k1 = p.kernel(&[a, b], &[c, d]);
            prop_assert_eq!(k1, p.kernel(&[c, d], &[a, b]));
            prop_assert!(k1 > 0.0 && k1 <= 1.69 + 1e-15);
        }

        #[test]
        fn permutation_invariance(seed in 0u64..1000) {
            let d = random_data(25, 1, seed);
            let mut idx: Vec<usize> = (0..25).collect();
            idx.reverse();
            idx.swap(3, 17);
            let p = p1(1.0, 0.3, 1e-4);
            let e1 = FittedEstimator::fit(&p, &d).unwrap();
            let e2 = FittedEstimator::fit(&p, &d.subset(&idx)).unwrap();
            for x in [-0.9, -0.2, 0.0, 0.55] {
                prop_assert!((e1.predict(&[x])[0] - e2.predict(&[x])[0]).abs() <= 1e-10);
            }
        }
    }
}
