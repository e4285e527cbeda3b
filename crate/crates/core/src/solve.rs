//! Linear programs over lattice rows, a built-in dual simplex solver, and
//! CPLEX-LP export.
//!
//! Rows are stored compactly: most rows of a certification LP read one
//! column of a shared feature matrix, scaled, plus a handful of auxiliary
//! terms. Nothing is densified until a row enters the simplex basis.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::{Error, Result};

/// Rows `scale · M[:, p]ᵀ x[offset..] + Σ extra ≤ rhs`, one per point `p`.
#[derive(Debug, Clone)]
pub struct SharedBlock {
    pub name: String,
    /// Column-per-point matrix shared between blocks.
    pub matrix: Arc<DMatrix<f64>>,
    pub var_offset: usize,
    pub scale: f64,
    pub points: Vec<usize>,
    pub extra: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// A single explicit row `Σ coef · x[var] ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub enum Block {
    Shared(SharedBlock),
    Sparse { name: String, rows: Vec<SparseRow> },
}

impl Block {
    pub fn len(&self) -> usize {
        match self {
            Block::Shared(b) => b.points.len(),
            Block::Sparse { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> &str {
        match self {
            Block::Shared(b) => &b.name,
            Block::Sparse { name, .. } => name,
        }
    }
}

/// `min cᵀx` subject to block rows `A x ≤ b` and `lower ≤ x ≤ upper`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub var_names: Vec<String>,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub blocks: Vec<Block>,
}

impl LpProblem {
    /// Free variables, zero objective, no rows.
    pub fn new(num_vars: usize) -> Self {
        LpProblem {
            var_names: (0..num_vars).map(|j| format!("x{j}")).collect(),
            objective: vec![0.0; num_vars],
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
            blocks: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    pub fn push_row(&mut self, name: &str, entries: Vec<(usize, f64)>, rhs: f64) {
        let row = SparseRow { entries, rhs };
        if let Some(Block::Sparse { name: n, rows }) = self.blocks.last_mut() {
            if n == name {
                rows.push(row);
                return;
            }
        }
        self.blocks.push(Block::Sparse { name: name.to_string(), rows: vec![row] });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.var_names.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::InvalidArgument("LP vectors disagree in length".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(Error::InvalidArgument(format!("empty bounds for `{}`", self.var_names[j])));
            }
            if !self.objective[j].is_finite() {
                return Err(Error::InvalidArgument("non-finite objective coefficient".into()));
            }
        }
        for block in &self.blocks {
            match block {
                Block::Shared(b) => {
                    if b.var_offset + b.matrix.nrows() > n {
                        return Err(Error::InvalidArgument(format!("block `{}` exceeds variables", b.name)));
                    }
                    if b.points.iter().any(|&p| p >= b.matrix.ncols())
                        || b.extra.iter().any(|&(v, _)| v >= n)
                    {
                        return Err(Error::InvalidArgument(format!("block `{}` index out of range", b.name)));
                    }
                }
                Block::Sparse { name, rows } => {
                    if rows.iter().any(|r| r.entries.iter().any(|&(v, _)| v >= n)) {
                        return Err(Error::InvalidArgument(format!("block `{name}` index out of range")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Row `i` as sparse entries (duplicates merged) and its right-hand side.
    pub fn row(&self, mut i: usize) -> (Vec<(usize, f64)>, f64) {
        for block in &self.blocks {
            if i < block.len() {
                let mut dense = vec![0.0; self.num_vars()];
                let rhs = self.row_dense_into(block, i, &mut dense);
                let entries = dense.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
                return (entries, rhs);
            }
            i -= block.len();
        }
        panic!("row index out of range");
    }

    fn row_dense_into(&self, block: &Block, local: usize, out: &mut [f64]) -> f64 {
        match block {
            Block::Shared(b) => {
                let col = b.matrix.column(b.points[local]);
                for (j, v) in col.iter().enumerate() {
                    out[b.var_offset + j] += b.scale * v;
                }
                for &(v, c) in &b.extra {
                    out[v] += c;
                }
                b.rhs
            }
            Block::Sparse { rows, .. } => {
                let r = &rows[local];
                for &(v, c) in &r.entries {
                    out[v] += c;
                }
                r.rhs
            }
        }
    }

    fn locate(&self, mut i: usize) -> (&Block, usize) {
        for block in &self.blocks {
            if i < block.len() {
                return (block, i);
            }
            i -= block.len();
        }
        panic!("row index out of range");
    }

    /// Right-hand sides in row order.
    pub fn rhs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_rows());
        for block in &self.blocks {
            match block {
                Block::Shared(b) => out.extend(std::iter::repeat(b.rhs).take(b.points.len())),
                Block::Sparse { rows, .. } => out.extend(rows.iter().map(|r| r.rhs)),
            }
        }
        out
    }

    /// `A x` for all rows, in row order.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        // Each (matrix, offset) pair is multiplied once and shared by every
        // block that reads it.
        let mut products: Vec<(*const DMatrix<f64>, usize, Vec<f64>)> = Vec::new();
        for block in &self.blocks {
            if let Block::Shared(b) = block {
                let key = Arc::as_ptr(&b.matrix);
                if !products.iter().any(|(k, o, _)| *k == key && *o == b.var_offset) {
                    let l = b.matrix.nrows();
                    let xs = &x[b.var_offset..b.var_offset + l];
                    let u: Vec<f64> = b
                        .matrix
                        .as_slice()
                        .par_chunks(l.max(1))
                        .map(|col| col.iter().zip(xs).map(|(a, v)| a * v).sum())
                        .collect();
                    products.push((key, b.var_offset, u));
                }
            }
        }
        let mut out = Vec::with_capacity(self.num_rows());
        for block in &self.blocks {
            match block {
                Block::Shared(b) => {
                    let key = Arc::as_ptr(&b.matrix);
                    let u = &products.iter().find(|(k, o, _)| *k == key && *o == b.var_offset).unwrap().2;
                    let extra: f64 = b.extra.iter().map(|&(v, c)| c * x[v]).sum();
                    out.extend(b.points.iter().map(|&p| b.scale * u[p] + extra));
                }
                Block::Sparse { rows, .. } => {
                    out.extend(rows.iter().map(|r| r.entries.iter().map(|&(v, c)| c * x[v]).sum::<f64>()))
                }
            }
        }
        out
    }

    /// Largest violation `max(0, aᵢᵀx − bᵢ)` over rows and bounds.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ax = self.mul(x);
        let rows = ax.iter().zip(self.rhs()).map(|(a, b)| a - b).fold(0.0f64, f64::max);
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l - v).max(v - u))
            .fold(0.0f64, f64::max);
        rows.max(bounds)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Writes the problem in CPLEX LP format with round-trippable literals.
    pub fn export_lp(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(self.to_lp_string().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn to_lp_string(&self) -> String {
        let names: Vec<String> = self.var_names.iter().map(|n| sanitize(n)).collect();
        let mut s = String::new();
        s.push_str("\\ barrier certificate LP\nMinimize\n obj:");
        let obj: Vec<(usize, f64)> =
            self.objective.iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect();
        if obj.is_empty() {
            let _ = write!(s, " 0 {}", names[0]);
        }
        write_terms(&mut s, &obj, &names);
        s.push_str("\nSubject To\n");
        let mut dense = vec![0.0; self.num_vars()];
        let mut idx = 0;
        for block in &self.blocks {
            for local in 0..block.len() {
                dense.iter_mut().for_each(|v| *v = 0.0);
                let rhs = self.row_dense_into(block, local, &mut dense);
                let terms: Vec<(usize, f64)> =
                    dense.iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect();
                let _ = write!(s, " r{idx}:");
                if terms.is_empty() {
                    let _ = write!(s, " 0 {}", names[0]);
                }
                write_terms(&mut s, &terms, &names);
                let _ = writeln!(s, " <= {rhs:.17e}");
                idx += 1;
            }
        }
        s.push_str("Bounds\n");
        for (j, n) in names.iter().enumerate() {
            let (l, u) = (self.lower[j], self.upper[j]);
            match (l.is_finite(), u.is_finite()) {
                (false, false) => {
                    let _ = writeln!(s, " {n} free");
                }
                (true, true) if l == u => {
                    let _ = writeln!(s, " {n} = {l:.17e}");
                }
                (true, true) => {
                    let _ = writeln!(s, " {l:.17e} <= {n} <= {u:.17e}");
                }
                (true, false) => {
                    let _ = writeln!(s, " {n} >= {l:.17e}");
                }
                (false, true) => {
                    let _ = writeln!(s, " -inf <= {n} <= {u:.17e}");
                }
            }
        }
        s.push_str("End\n");
        s
    }
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

fn write_terms(s: &mut String, terms: &[(usize, f64)], names: &[String]) {
    for (k, &(j, c)) in terms.iter().enumerate() {
        if k > 0 && k % 6 == 0 {
            s.push_str("\n   ");
        }
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(s, " {sign} {:.17e} {}", c.abs(), names[j]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual objective `−Σ yᵢ bᵢ` over active rows and bounds.
    pub dual_objective: f64,
    /// Nonzero multipliers of structural rows, `(row, yᵢ ≥ 0)`.
    pub duals: Vec<(usize, f64)>,
    /// Largest primal violation of the returned point.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    pub refactor_every: usize,
    pub feasibility_tol: f64,
    /// Box placed on variables that lack the bound the initial basis needs.
    pub artificial_bound: f64,
    /// Problems with more rows are solved by row generation, starting from
    /// a strided sample of about this many rows.
    pub working_rows: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iterations: 200_000,
            refactor_every: 50,
            feasibility_tol: 1e-10,
            artificial_bound: 1e6,
            working_rows: 20_000,
        }
    }
}

pub const BUILTIN_BACKEND: &str = "SimplexOptimiser";
const KNOWN_UNAVAILABLE: [&str; 3] = ["GurobiOptimiser", "HighsOptimiser", "AlglibOptimiser"];

/// Solves with the named backend.
pub fn solve_with(problem: &LpProblem, backend: &str) -> Result<LpSolution> {
    if backend == BUILTIN_BACKEND {
        solve_lp(problem, &SimplexOptions::default())
    } else if KNOWN_UNAVAILABLE.contains(&backend) {
        Err(Error::BackendUnavailable(backend.to_string()))
    } else {
        Err(Error::UnknownBackend(backend.to_string()))
    }
}

/// Checks a backend name without solving.
pub fn check_backend(backend: &str) -> Result<()> {
    if backend == BUILTIN_BACKEND {
        Ok(())
    } else if KNOWN_UNAVAILABLE.contains(&backend) {
        Err(Error::BackendUnavailable(backend.to_string()))
    } else {
        Err(Error::UnknownBackend(backend.to_string()))
    }
}

/// Dual simplex on the row-basis form.
///
/// A basis is a set of `n` active rows (structural or bound rows). Variables
/// are column-scaled so every structural coefficient lies in `[−1, 1]`.
pub fn solve_lp(problem: &LpProblem, opts: &SimplexOptions) -> Result<LpSolution> {
    problem.validate()?;
    let col_scale = column_scales(problem);
    if problem.num_rows() <= opts.working_rows {
        let norms = row_norms(problem, &col_scale);
        return Ok(DualSimplex::new(problem, opts, col_scale, norms, None).run()?.0);
    }
    row_generation(problem, opts, col_scale)
}

impl LpProblem {
    /// The problem restricted to the given rows (sorted global indices).
    /// Shared matrices are compacted to the columns the kept rows read, and
    /// blocks that shared a matrix still share its compacted copy.
    fn restrict(&self, rows: &[usize]) -> LpProblem {
        let mut kept: Vec<(&Block, Vec<usize>)> = Vec::new();
        let mut start = 0;
        let mut k = 0;
        for block in &self.blocks {
            let end = start + block.len();
            let mut local = Vec::new();
            while k < rows.len() && rows[k] < end {
                local.push(rows[k] - start);
                k += 1;
            }
            start = end;
            if !local.is_empty() {
                kept.push((block, local));
            }
        }
        // Used columns per shared matrix, then one compacted copy each.
        let mut compact: Vec<(*const DMatrix<f64>, Vec<usize>, Arc<DMatrix<f64>>)> = Vec::new();
        for (block, local) in &kept {
            if let Block::Shared(b) = block {
                let key = Arc::as_ptr(&b.matrix);
                let cols = local.iter().map(|&i| b.points[i]);
                match compact.iter_mut().find(|(k, _, _)| *k == key) {
                    Some((_, used, _)) => used.extend(cols),
                    None => compact.push((key, cols.collect(), b.matrix.clone())),
                }
            }
        }
        for (_, used, matrix) in &mut compact {
            used.sort_unstable();
            used.dedup();
            *matrix = Arc::new(matrix.select_columns(used.iter()));
        }
        let blocks = kept
            .into_iter()
            .map(|(block, local)| match block {
                Block::Shared(b) => {
                    let key = Arc::as_ptr(&b.matrix);
                    let (_, used, matrix) = compact.iter().find(|(k, _, _)| *k == key).unwrap();
                    let points = local.iter().map(|&i| used.binary_search(&b.points[i]).unwrap()).collect();
                    Block::Shared(SharedBlock { matrix: matrix.clone(), points, ..b.clone() })
                }
                Block::Sparse { name, rows } => {
                    Block::Sparse { name: name.clone(), rows: local.iter().map(|&i| rows[i].clone()).collect() }
                }
            })
            .collect();
        LpProblem {
            var_names: self.var_names.clone(),
            objective: self.objective.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            blocks,
        }
    }
}

/// Cutting-plane loop: solve on a working set of rows, add the most
/// violated remaining rows, and warm-start from the previous basis. A point
/// that is optimal for a subset of the rows and feasible for all of them is
/// optimal for the full problem.
fn row_generation(lp: &LpProblem, opts: &SimplexOptions, col_scale: Vec<f64>) -> Result<LpSolution> {
    let m = lp.num_rows();
    let norms = row_norms(lp, &col_scale);
    let rhs = lp.rhs();
    let stride = m.div_ceil(opts.working_rows.max(1));
    let mut rows: Vec<usize> = Vec::new();
    let mut start = 0;
    for block in &lp.blocks {
        match block {
            Block::Sparse { .. } => rows.extend(start..start + block.len()),
            Block::Shared(_) => rows.extend((start..start + block.len()).step_by(stride)),
        }
        start += block.len();
    }
    let batch = (opts.working_rows / 10).max(100);
    let mut basis: Option<Vec<usize>> = None;
    let mut iterations = 0;
    let mut round = 0;
    loop {
        round += 1;
        let sub = lp.restrict(&rows);
        let sub_norms = rows.iter().map(|&r| norms[r]).collect();
        let sub_opts = SimplexOptions { max_iterations: opts.max_iterations.saturating_sub(iterations), ..*opts };
        let (mut sol, sub_basis) = DualSimplex::new(&sub, &sub_opts, col_scale.clone(), sub_norms, basis.as_deref()).run()?;
        iterations += sol.iterations;
        sol.iterations = iterations;
        sol.duals = sol.duals.iter().map(|&(r, y)| (rows[r], y)).collect();
        let m_sub = rows.len();
        let global_basis: Vec<usize> =
            sub_basis.iter().map(|&r| if r < m_sub { rows[r] } else { m + (r - m_sub) }).collect();
        if matches!(sol.status, LpStatus::Infeasible | LpStatus::IterationLimit) {
            sol.residual = lp.max_violation(&sol.x);
            return Ok(sol);
        }
        let ax = lp.mul(&sol.x);
        let tol = opts.feasibility_tol;
        let mut violated: Vec<(f64, usize)> = ax
            .par_iter()
            .zip(rhs.par_iter())
            .enumerate()
            .filter_map(|(i, (a, b))| {
                let slack = b - a;
                (slack < -tol * norms[i].max(1.0)).then(|| (slack / norms[i], i))
            })
            .collect();
        // Rows already in the working set are satisfied to the inner tolerance.
        violated.retain(|&(_, i)| rows.binary_search(&i).is_err());
        debug!("row generation round {round}: {} rows, {} violated", rows.len(), violated.len());
        if violated.is_empty() {
            sol.residual = lp.max_violation(&sol.x);
            info!("row generation finished after {round} rounds with {} of {m} rows", rows.len());
            return Ok(sol);
        }
        violated.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        rows.extend(violated.iter().take(batch).map(|&(_, i)| i));
        rows.sort_unstable();
        let m_new = rows.len();
        basis = Some(
            global_basis
                .iter()
                .map(|&r| if r < m { rows.binary_search(&r).expect("basic rows stay in the working set") } else { m_new + (r - m) })
                .collect(),
        );
    }
}

struct DualSimplex<'a> {
    lp: &'a LpProblem,
    opts: SimplexOptions,
    n: usize,
    m: usize,
    col_scale: Vec<f64>,
    rhs: Vec<f64>,
    norms: Vec<f64>,
    // Bound rows: index m + 2j is the lower row `−x̃ⱼ ≤ −lⱼsⱼ`, m + 2j + 1 the upper.
    bound_rhs: Vec<f64>,
    artificial: Vec<bool>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: DMatrix<f64>,
    x: DVector<f64>,
    y: DVector<f64>,
    slack: Vec<f64>,
    cost: DVector<f64>,
}

impl<'a> DualSimplex<'a> {
    fn new(
        lp: &'a LpProblem,
        opts: &SimplexOptions,
        col_scale: Vec<f64>,
        norms: Vec<f64>,
        warm: Option<&[usize]>,
    ) -> Self {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let rhs = lp.rhs();
        let mut bound_rhs = vec![0.0; 2 * n];
        let mut artificial = vec![false; 2 * n];
        for j in 0..n {
            let s = col_scale[j];
            if lp.lower[j].is_finite() {
                bound_rhs[2 * j] = -lp.lower[j] * s;
            } else {
                bound_rhs[2 * j] = opts.artificial_bound;
                artificial[2 * j] = true;
            }
            if lp.upper[j].is_finite() {
                bound_rhs[2 * j + 1] = lp.upper[j] * s;
            } else {
                bound_rhs[2 * j + 1] = opts.artificial_bound;
                artificial[2 * j + 1] = true;
            }
        }
        let cost = DVector::from_iterator(n, (0..n).map(|j| lp.objective[j] / col_scale[j]));
        // Initial dual-feasible basis: the bound row each cost sign asks for.
        let mut basis = Vec::with_capacity(n);
        for j in 0..n {
            let c = cost[j];
            let lower_row = if c > 0.0 {
                true
            } else if c < 0.0 {
                false
            } else {
                lp.lower[j].is_finite() || !lp.upper[j].is_finite()
            };
            basis.push(m + 2 * j + usize::from(!lower_row));
        }
        if let Some(w) = warm {
            basis = w.to_vec();
        }
        let mut in_basis = vec![false; m + 2 * n];
        for &r in &basis {
            in_basis[r] = true;
        }
        DualSimplex {
            lp,
            opts: *opts,
            n,
            m,
            col_scale,
            rhs,
            norms,
            bound_rhs,
            artificial,
            basis,
            in_basis,
            binv: DMatrix::identity(n, n),
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            slack: Vec::new(),
            cost,
        }
    }

    fn row_dense(&self, r: usize) -> DVector<f64> {
        let mut a = vec![0.0; self.n];
        if r < self.m {
            let (block, local) = self.lp.locate(r);
            self.lp.row_dense_into(block, local, &mut a);
            for (v, s) in a.iter_mut().zip(&self.col_scale) {
                *v /= s;
            }
        } else {
            let j = (r - self.m) / 2;
            a[j] = if (r - self.m) % 2 == 0 { -1.0 } else { 1.0 };
        }
        DVector::from_vec(a)
    }

    fn row_rhs(&self, r: usize) -> f64 {
        if r < self.m {
            self.rhs[r]
        } else {
            self.bound_rhs[r - self.m]
        }
    }

    fn unscaled(&self, v: &DVector<f64>) -> Vec<f64> {
        v.iter().zip(&self.col_scale).map(|(a, s)| a / s).collect()
    }

    /// Recomputes `B⁻¹`, `x`, `y` and slacks from the current basis.
    fn refactor(&mut self) -> Result<()> {
        let mut ab = DMatrix::zeros(self.n, self.n);
        for (k, &r) in self.basis.iter().enumerate() {
            ab.set_row(k, &self.row_dense(r).transpose());
        }
        self.binv = ab
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("simplex basis became singular".into()))?;
        let b_b = DVector::from_iterator(self.n, self.basis.iter().map(|&r| self.row_rhs(r)));
        self.x = &self.binv * b_b;
        self.y = -(self.binv.transpose() * &self.cost);
        for v in self.y.iter_mut() {
            if *v < 0.0 && *v > -1e-9 {
                *v = 0.0;
            }
        }
        let ax = self.lp.mul(&self.unscaled(&self.x));
        self.slack = self.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        for &r in &self.basis {
            if r < self.m {
                self.slack[r] = 0.0;
            }
        }
        Ok(())
    }

    fn bound_slack(&self, k: usize) -> f64 {
        let j = k / 2;
        if k % 2 == 0 {
            self.bound_rhs[k] + self.x[j]
        } else {
            self.bound_rhs[k] - self.x[j]
        }
    }

    /// Most violated row by normalized slack, or the lowest-index violated
    /// row under Bland's rule.
    fn choose_entering(&self, bland: bool) -> Option<usize> {
        let tol = self.opts.feasibility_tol;
        let structural = (0..self.m)
            .into_par_iter()
            .filter(|&i| !self.in_basis[i] && self.slack[i] < -tol * self.norms[i].max(1.0))
            .map(|i| (if bland { i as f64 } else { self.slack[i] / self.norms[i] }, i))
            .reduce_with(|a, b| if a.0 < b.0 || (a.0 == b.0 && a.1 < b.1) { a } else { b });
        let mut best = structural;
        for k in 0..2 * self.n {
            let r = self.m + k;
            let s = self.bound_slack(k);
            if self.in_basis[r] || s >= -tol {
                continue;
            }
            let key = if bland { r as f64 } else { s };
            if best.map_or(true, |(v, i)| key < v || (key == v && r < i)) {
                best = Some((key, r));
            }
        }
        best.map(|(_, i)| i)
    }

    /// Solves from the current basis; also returns the final basis.
    fn run(mut self) -> Result<(LpSolution, Vec<usize>)> {
        self.refactor()?;
        let mut iterations = 0;
        let mut degenerate = 0;
        let mut since_refactor = 0;
        let bland_after = 10 * self.n.max(1);
        let status = loop {
            let bland = degenerate > bland_after;
            let Some(r) = self.choose_entering(bland) else {
                // Confirm optimality against a fresh factorization.
                if since_refactor > 0 {
                    self.refactor()?;
                    since_refactor = 0;
                    if self.choose_entering(false).is_some() {
                        continue;
                    }
                }
                break LpStatus::Optimal;
            };
            if iterations >= self.opts.max_iterations {
                break LpStatus::IterationLimit;
            }
            iterations += 1;
            let a_r = self.row_dense(r);
            let w = self.binv.transpose() * &a_r;
            let wmax = w.amax();
            let piv_tol = 1e-9 * wmax.max(1e-300);
            let mut leave: Option<(usize, f64)> = None;
            for k in 0..self.n {
                if w[k] <= piv_tol {
                    continue;
                }
                let theta = self.y[k].max(0.0) / w[k];
                leave = match leave {
                    None => Some((k, theta)),
                    Some((kb, tb)) => {
                        let tie = (theta - tb).abs() <= 1e-12 * (1.0 + tb.abs());
                        let better = if tie {
                            if bland {
                                self.basis[k] < self.basis[kb]
                            } else {
                                w[k] > w[kb]
                            }
                        } else {
                            theta < tb
                        };
                        if better {
                            Some((k, theta))
                        } else {
                            Some((kb, tb))
                        }
                    }
                };
            }
            let Some((p, theta)) = leave else {
                break LpStatus::Infeasible;
            };
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            let d = self.binv.column(p).clone_owned();
            let wp = w[p];
            let t = (self.row_rhs(r) - a_r.dot(&self.x)) / wp;
            self.x.axpy(t, &d, 1.0);
            let ad = self.lp.mul(&self.unscaled(&d));
            self.slack.par_iter_mut().zip(ad.par_iter()).for_each(|(s, a)| *s -= t * a);
            let leaving = self.basis[p];
            if leaving < self.m {
                self.slack[leaving] = -t;
            }
            if r < self.m {
                self.slack[r] = 0.0;
            }
            self.y.axpy(-theta, &w, 1.0);
            self.y[p] = theta;
            let mut u = w;
            u[p] -= 1.0;
            self.binv.ger(-1.0 / wp, &d, &u, 1.0);
            self.in_basis[leaving] = false;
            self.in_basis[r] = true;
            self.basis[p] = r;
            since_refactor += 1;
            if since_refactor >= self.opts.refactor_every {
                self.refactor()?;
                since_refactor = 0;
            }
            if iterations % 500 == 0 {
                debug!("simplex iteration {iterations}: dual objective {:.6e}", self.dual_objective());
            }
        };
        let x = self.unscaled(&self.x);
        let mut status = status;
        if status == LpStatus::Optimal
            && self.basis.iter().zip(self.y.iter()).any(|(&r, &y)| r >= self.m && self.artificial[r - self.m] && y > 1e-9)
        {
            status = LpStatus::Unbounded;
        }
        let residual = self.lp.max_violation(&x);
        let duals = self
            .basis
            .iter()
            .zip(self.y.iter())
            .filter(|(&r, &y)| r < self.m && y != 0.0)
            .map(|(&r, &y)| (r, y))
            .collect();
        debug!("simplex finished: {status:?} after {iterations} iterations, residual {residual:.2e}");
        let solution = LpSolution {
            status,
            objective: self.lp.objective_value(&x),
            dual_objective: self.dual_objective(),
            duals,
            residual,
            x,
            iterations,
        };
        Ok((solution, self.basis))
    }

    fn dual_objective(&self) -> f64 {
        -self.basis.iter().zip(self.y.iter()).map(|(&r, &y)| y * self.row_rhs(r)).sum::<f64>()
    }
}

fn column_scales(lp: &LpProblem) -> Vec<f64> {
    let n = lp.num_vars();
    let mut s = vec![0.0f64; n];
    for block in &lp.blocks {
        match block {
            Block::Shared(b) => {
                if b.points.is_empty() {
                    continue;
                }
                let l = b.matrix.nrows();
                let maxes: Vec<f64> = (0..l)
                    .into_par_iter()
                    .map(|j| b.points.iter().map(|&p| b.matrix[(j, p)].abs()).fold(0.0, f64::max))
                    .collect();
                for (j, m) in maxes.into_iter().enumerate() {
                    let v = &mut s[b.var_offset + j];
                    *v = v.max(m * b.scale.abs());
                }
                for &(v, c) in &b.extra {
                    s[v] = s[v].max(c.abs());
                }
            }
            Block::Sparse { rows, .. } => {
                for r in rows {
                    for &(v, c) in &r.entries {
                        s[v] = s[v].max(c.abs());
                    }
                }
            }
        }
    }
    s.into_iter().map(|v| if v > 0.0 && v.is_finite() { v } else { 1.0 }).collect()
}

fn row_norms(lp: &LpProblem, col_scale: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(lp.num_rows());
    for block in &lp.blocks {
        match block {
            Block::Shared(b) => {
                let n = lp.num_vars();
                let norms: Vec<f64> = (0..b.points.len())
                    .into_par_iter()
                    .map_init(
                        || vec![0.0; n],
                        |dense, local| {
                            dense.iter_mut().for_each(|v| *v = 0.0);
                            lp.row_dense_into(block, local, dense);
                            dense.iter().zip(col_scale).map(|(v, s)| (v / s).powi(2)).sum::<f64>().sqrt()
                        },
                    )
                    .collect();
                out.extend(norms);
            }
            Block::Sparse { rows, .. } => {
                for r in rows {
                    let mut dense = std::collections::BTreeMap::new();
                    for &(v, c) in &r.entries {
                        *dense.entry(v).or_insert(0.0) += c / col_scale[v];
                    }
                    out.push(dense.values().map(|v: &f64| v * v).sum::<f64>().sqrt());
                }
            }
        }
    }
    for v in &mut out {
        if !(*v > 0.0) {
            *v = 1.0;
        }
    }
    out
}
