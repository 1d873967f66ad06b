//! Lawson-Hanson active-set non-negative least squares on small dense systems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnlsOptions {
    /// Relative tolerance on the dual (gradient) test.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_iterations: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimum-norm least squares on the passive columns.
fn passive_solve(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(passive);
    let svd = sub.svd(true, true);
    let eps = svd.singular_values.max() * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).expect("u and v computed")
}

/// Minimizes |a x - b| subject to x >= 0.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, options: &NnlsOptions) -> NnlsSolution {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive: Vec<usize> = Vec::new();
    let scale = (a.transpose() * b).amax().max(f64::MIN_POSITIVE);
    let tol = options.tolerance * scale;
    let mut iterations = 0;
    loop {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|j| !passive.contains(j)).filter(|&j| w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else {
            return NnlsSolution { x, iterations, converged: true };
        };
        passive.push(j);
        passive.sort_unstable();
        loop {
            iterations += 1;
            if iterations > options.max_iterations {
                return NnlsSolution { x, iterations, converged: false };
            }
            let s = passive_solve(a, b, &passive);
            if s.iter().all(|&v| v > 0.0) {
                for (k, &p) in passive.iter().enumerate() {
                    x[p] = s[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &p) in passive.iter().enumerate() {
                if s[k] <= 0.0 {
                    alpha = alpha.min(x[p] / (x[p] - s[k]));
                }
            }
            for (k, &p) in passive.iter().enumerate() {
                x[p] += alpha * (s[k] - x[p]);
            }
            let before = passive.len();
            passive.retain(|&p| x[p] > 0.0);
            for p in 0..n {
                if !passive.contains(&p) {
                    x[p] = 0.0;
                }
            }
            if passive.len() == before {
                // Degenerate step; drop the most negative direction to make progress.
                let (k, _) = s.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
                x[passive[k]] = 0.0;
                passive.remove(k);
            }
            if passive.is_empty() {
                break;
            }
        }
    }
}
