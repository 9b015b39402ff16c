//! Linear one-vs-rest SVM on learned representations.
//!
//! Each class gets a bias-free, L2-regularized, L1-hinge binary SVM solved in
//! the dual by coordinate descent:
//!
//! ```text
//! min_α  ½ αᵀQα − Σα   s.t. 0 ≤ α_n ≤ C,   Q_ij = y_i y_j δ_i·δ_j
//! ```
//!
//! with `ŵ = Σ α_n y_n δ_n`. Support vectors are the examples with
//! `α_n > α_tol`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, Matrix, SeededRng};

#[derive(Clone, Debug)]
pub struct SvmProblem {
    features: Matrix,
    labels: Vec<usize>,
    c: f64,
}

impl SvmProblem {
    pub fn new(features: Matrix, labels: Vec<usize>, c: f64) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape("features and labels differ in length"));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::param(format!("C must be positive, got {c}")));
        }
        if labels.len() < 2 {
            return Err(Error::Degenerate("need at least two examples".into()));
        }
        let p = Self { features, labels, c };
        if p.classes().len() < 2 {
            return Err(Error::Degenerate("need at least two distinct classes".into()));
        }
        Ok(p)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    fn signs(&self, class: usize) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&l| if l == class { 1.0 } else { -1.0 })
            .collect()
    }

    /// Dual objective `½ αᵀQα − Σα` of the binary problem for `class`
    /// (smaller is better).
    pub fn dual_objective(&self, class: usize, alphas: &[f64]) -> f64 {
        let w = self.primal_weights(class, alphas);
        0.5 * dot(&w, &w) - alphas.iter().sum::<f64>()
    }

    /// Primal `½‖w‖² + C Σ max(0, 1 − y w·δ)`.
    pub fn primal_objective(&self, class: usize, w: &[f64]) -> f64 {
        let y = self.signs(class);
        let hinge: f64 = self
            .features
            .iter_rows()
            .zip(&y)
            .map(|(x, yi)| (1.0 - yi * dot(w, x)).max(0.0))
            .sum();
        0.5 * dot(w, w) + self.c * hinge
    }

    fn primal_weights(&self, class: usize, alphas: &[f64]) -> Vec<f64> {
        let y = self.signs(class);
        let mut w = vec![0.0; self.features.cols()];
        for ((x, yi), a) in self.features.iter_rows().zip(&y).zip(alphas) {
            if *a != 0.0 {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += a * yi * xj;
                }
            }
        }
        w
    }

    /// Largest projected-gradient magnitude over all coordinates.
    pub fn kkt_violation(&self, class: usize, alphas: &[f64]) -> f64 {
        let w = self.primal_weights(class, alphas);
        let y = self.signs(class);
        self.features
            .iter_rows()
            .zip(&y)
            .zip(alphas)
            .map(|((x, yi), &a)| projected_gradient(yi * dot(&w, x) - 1.0, a, self.c).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
fn projected_gradient(g: f64, alpha: f64, c: f64) -> f64 {
    if alpha <= 0.0 {
        g.min(0.0)
    } else if alpha >= c {
        g.max(0.0)
    } else {
        g
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// Support threshold as a fraction of C.
    pub alpha_tol_factor: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            alpha_tol_factor: 1e-8,
            tolerance: 1e-4,
            max_epochs: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub class: usize,
    pub epochs: usize,
    /// Recomputed at the final α; can sit slightly above the tolerance
    /// because the stopping test uses projected gradients seen during the
    /// last pass.
    pub max_violation: f64,
    /// Stopped by the tolerance rule rather than the epoch cap.
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct LinearSvmModel {
    /// Class of each row of `weights` / `alphas`.
    pub classes: Vec<usize>,
    /// `K × T` one-vs-rest weights.
    pub weights: Matrix,
    /// `K × N` dual coefficients.
    pub alphas: Matrix,
    /// Per class, indices `n` with `α_{k,n} > α_tol`, ascending.
    pub support: Vec<Vec<usize>>,
    pub reports: Vec<ConvergenceReport>,
    pub c: f64,
    pub alpha_tol: f64,
}

impl LinearSvmModel {
    fn assemble(problem: &SvmProblem, classes: Vec<usize>, alphas: Matrix, reports: Vec<ConvergenceReport>, alpha_tol: f64) -> Self {
        let t = problem.features.cols();
        let mut weights = Matrix::zeros(classes.len(), t);
        let mut support = Vec::with_capacity(classes.len());
        for (k, &class) in classes.iter().enumerate() {
            let a = alphas.row(k);
            weights
                .row_mut(k)
                .copy_from_slice(&problem.primal_weights(class, a));
            support.push((0..a.len()).filter(|&n| a[n] > alpha_tol).collect());
        }
        Self {
            classes,
            weights,
            alphas,
            support,
            reports,
            c: problem.c,
            alpha_tol,
        }
    }

    pub fn class_row(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn support_of(&self, class: usize) -> &[usize] {
        self.class_row(class).map_or(&[], |k| &self.support[k])
    }

    /// Largest remaining KKT violation over all binary problems.
    pub fn max_violation(&self) -> f64 {
        self.reports
            .iter()
            .map(|r| r.max_violation)
            .fold(0.0, f64::max)
    }

    /// Sum of the per-class dual objectives.
    pub fn dual_objective(&self, problem: &SvmProblem) -> f64 {
        self.classes
            .iter()
            .enumerate()
            .map(|(k, &c)| problem.dual_objective(c, self.alphas.row(k)))
            .sum()
    }
}

/// Trains one binary SVM per class by dual coordinate descent, visiting
/// coordinates in a seeded random order each epoch.
pub fn train_ovr(problem: &SvmProblem, config: &SvmConfig) -> Result<LinearSvmModel> {
    let classes = problem.classes();
    let n = problem.len();
    let t = problem.features.cols();
    let c = problem.c;
    let diag: Vec<f64> = problem.features.iter_rows().map(|x| dot(x, x)).collect();
    let mut alphas = Matrix::zeros(classes.len(), n);
    let mut reports = Vec::with_capacity(classes.len());
    let rng = SeededRng::new(config.seed);

    for (k, &class) in classes.iter().enumerate() {
        let y = problem.signs(class);
        let mut rng = rng.fork(class as u64);
        let alpha = alphas.row_mut(k);
        let mut w = vec![0.0; t];
        // zero rows make the hinge term linear in α_i: it sits at its upper bound
        let full: Vec<usize> = (0..n).filter(|&i| diag[i] > 0.0).collect();
        for i in (0..n).filter(|&i| diag[i] == 0.0) {
            alpha[i] = c;
        }
        let mut active = full.clone();
        // shrinking bounds from the previous pass (LIBLINEAR style)
        let (mut bound_hi, mut bound_lo) = (f64::INFINITY, f64::NEG_INFINITY);
        // an epoch is `full.len()` coordinate visits, so passes over a
        // shrunk active set count fractionally
        let mut visits = 0usize;
        let budget = config.max_epochs.saturating_mul(full.len().max(1));
        let mut converged = full.is_empty();
        while visits < budget {
            visits += active.len();
            rng.shuffle(&mut active);
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut kept = Vec::with_capacity(active.len());
            for &i in &active {
                let x = problem.features.row(i);
                let g = y[i] * dot(&w, x) - 1.0;
                if (alpha[i] == 0.0 && g > bound_hi) || (alpha[i] == c && g < bound_lo) {
                    continue;
                }
                kept.push(i);
                let pg = projected_gradient(g, alpha[i], c);
                hi = hi.max(pg);
                lo = lo.min(pg);
                if pg != 0.0 {
                    let old = alpha[i];
                    alpha[i] = (old - g / diag[i]).clamp(0.0, c);
                    let step = (alpha[i] - old) * y[i];
                    for (wj, xj) in w.iter_mut().zip(x) {
                        *wj += step * xj;
                    }
                }
            }
            active = kept;
            if hi.max(-lo) < config.tolerance || active.is_empty() {
                if active.len() == full.len() {
                    converged = true;
                    break;
                }
                // recheck everything before declaring convergence
                active = full.clone();
                bound_hi = f64::INFINITY;
                bound_lo = f64::NEG_INFINITY;
                continue;
            }
            bound_hi = if hi > 0.0 { hi } else { f64::INFINITY };
            bound_lo = if lo < 0.0 { lo } else { f64::NEG_INFINITY };
        }
        let violation = problem.kkt_violation(class, alpha);
        reports.push(ConvergenceReport {
            class,
            epochs: visits.div_ceil(full.len().max(1)),
            max_violation: violation,
            converged,
        });
    }
    Ok(LinearSvmModel::assemble(
        problem,
        classes,
        alphas,
        reports,
        config.alpha_tol_factor * c,
    ))
}

/// `N × K` matrix of `ŵ_k · δ_n`.
pub fn margins(model: &LinearSvmModel, features: &Matrix) -> Result<Matrix> {
    if features.cols() != model.weights.cols() {
        return Err(Error::shape(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            model.weights.cols()
        )));
    }
    let mut out = Matrix::zeros(features.rows(), model.classes.len());
    crate::math::gemm(features, false, &model.weights, true, 1.0, 0.0, &mut out);
    Ok(out)
}

pub const ORACLE_MAX_EXAMPLES: usize = 20;
pub const ORACLE_MAX_DIM: usize = 4;

/// Reference solver for small problems: projected gradient descent on the
/// same dual with step `1/‖Q‖_∞`, run until the KKT violation is below
/// `1e-8`. Test-oracle use only.
pub fn brute_force_qp(problem: &SvmProblem, alpha_tol_factor: f64) -> Result<LinearSvmModel> {
    let n = problem.len();
    let t = problem.features.cols();
    if n > ORACLE_MAX_EXAMPLES || t > ORACLE_MAX_DIM {
        return Err(Error::OracleScope(format!(
            "oracle handles N <= {ORACLE_MAX_EXAMPLES}, T <= {ORACLE_MAX_DIM}; got N = {n}, T = {t}"
        )));
    }
    const TOL: f64 = 1e-8;
    const MAX_ITERS: usize = 20_000_000;
    let c = problem.c;
    let classes = problem.classes();
    let mut alphas = Matrix::zeros(classes.len(), n);
    let mut reports = Vec::new();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dot(problem.features.row(i), problem.features.row(j)))
                .collect()
        })
        .collect();

    for (k, &class) in classes.iter().enumerate() {
        let y = problem.signs(class);
        let q: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| y[i] * y[j] * gram[i][j]).collect())
            .collect();
        let bound = q
            .iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let step = if bound > 0.0 { 1.0 / bound } else { 1.0 };
        let mut alpha = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut iters = 0;
        let mut violation;
        loop {
            for i in 0..n {
                grad[i] = dot(&q[i], &alpha) - 1.0;
            }
            violation = (0..n)
                .map(|i| projected_gradient(grad[i], alpha[i], c).abs())
                .fold(0.0, f64::max);
            if violation < TOL || iters >= MAX_ITERS {
                break;
            }
            for i in 0..n {
                alpha[i] = (alpha[i] - step * grad[i]).clamp(0.0, c);
            }
            iters += 1;
        }
        alphas.row_mut(k).copy_from_slice(&alpha);
        reports.push(ConvergenceReport {
            class,
            epochs: iters,
            max_violation: violation,
            converged: violation < TOL,
        });
    }
    Ok(LinearSvmModel::assemble(
        problem,
        classes,
        alphas,
        reports,
        alpha_tol_factor * c,
    ))
}
