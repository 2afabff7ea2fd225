use super::{ensure_finite, LinalgError, Matrix, Result};

const MAX_SWEEPS: usize = 100;

/// Thin singular value decomposition `A = U diag(sigma) Vᵀ`.
///
/// For an `m x n` input with `k = min(m, n)`, `u` is `m x k`, `v` is `n x k`
/// and `sigma` is sorted in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self, tol: f64) -> usize {
        self.sigma.iter().filter(|&&s| s > tol).count()
    }
}

/// `max(m, n) · ε · σ_max`.
pub fn default_rank_tol(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// One-sided Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<Svd> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    if m < n {
        let t = svd_tall(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    svd_tall(a)
}

/// Orthogonalize the columns of a tall (`m >= n`) matrix.
fn svd_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = Matrix::identity(n, n);
    // Columns this small are rounding noise; orthogonalizing them never settles.
    let negligible = (f64::EPSILON * super::frobenius_norm(a)).powi(2);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha: f64 = w.column(p).norm_squared();
                let beta: f64 = w.column(q).norm_squared();
                let gamma: f64 = w.column(p).dot(&w.column(q));
                if gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let x = w[(k, p)];
                    let y = w[(k, q)];
                    w[(k, p)] = c * x - s * y;
                    w[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let x = v[(k, p)];
                    let y = v[(k, q)];
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            algorithm: "one-sided Jacobi SVD",
            budget: MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = sigma.first().copied().unwrap_or(0.0);
    let tiny = default_rank_tol(m, n, smax);
    let mut u = Matrix::zeros(m, n);
    for (c, &j) in order.iter().enumerate() {
        if norms[j] > tiny && norms[j] > 0.0 {
            u.set_column(c, &(w.column(j) / norms[j]));
        }
    }
    complete_orthonormal(&mut u, &sigma, tiny);
    let v = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(Svd { u, sigma, v })
}

/// Replace the columns of `u` belonging to negligible singular values by unit
/// vectors orthogonal to everything before them (Gram-Schmidt on the
/// canonical basis), so `u` always has orthonormal columns.
fn complete_orthonormal(u: &mut Matrix, sigma: &[f64], tiny: f64) {
    let m = u.nrows();
    let mut next_basis = 0;
    for c in 0..sigma.len() {
        if sigma[c] > tiny && sigma[c] > 0.0 {
            continue;
        }
        while next_basis < m {
            let mut cand = nalgebra::DVector::<f64>::zeros(m);
            cand[next_basis] = 1.0;
            next_basis += 1;
            for _ in 0..2 {
                for k in 0..u.ncols() {
                    if k == c {
                        continue;
                    }
                    let col = u.column(k);
                    let d = col.dot(&cand);
                    cand -= d * col;
                }
            }
            let nrm = cand.norm();
            if nrm > 0.5 {
                u.set_column(c, &(cand / nrm));
                break;
            }
        }
    }
}

/// Moore-Penrose pseudoinverse `V Σ⁺ Uᵀ`. Singular values at or below
/// `rank_tol` (default [`default_rank_tol`]) are treated as zero.
pub fn pseudoinverse(a: &Matrix, rank_tol: Option<f64>) -> Result<Matrix> {
    let (m, n) = a.shape();
    let d = svd(a)?;
    let smax = d.sigma.first().copied().unwrap_or(0.0);
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(m, n, smax));
    let mut out = Matrix::zeros(n, m);
    for (k, &s) in d.sigma.iter().enumerate() {
        if s <= tol || s == 0.0 {
            continue;
        }
        out += (d.v.column(k) / s) * d.u.column(k).transpose();
    }
    Ok(out)
}
