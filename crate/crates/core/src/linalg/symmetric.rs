use super::{ensure_finite, frobenius_norm, LinalgError, Matrix, Result};

const MAX_SWEEPS: usize = 100;

/// `A = V diag(values) Vᵀ` with eigenvalues ascending and orthonormal columns in `V`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(LinalgError::Dimension(format!(
            "symmetric eigenproblem needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a)?;
    let asym = frobenius_norm(&(a - a.transpose()));
    if asym > 1e-12 * frobenius_norm(a) {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = Matrix::identity(n, n);
    let scale = frobenius_norm(&m);

    // Entries below this are dropped; their effect on the spectrum is far
    // below rounding level.
    let negligible = 1e-3 * f64::EPSILON * scale;
    let mut converged = n < 2 || scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= negligible
                    || apq.abs() <= f64::EPSILON * (m[(p, p)] * m[(q, q)]).abs().sqrt()
                {
                    continue;
                }
                rotated = true;
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            algorithm: "cyclic Jacobi",
            budget: MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues in `[-1e-10·‖A‖_F, 0)` are treated as rounding noise and
/// clamped to zero; anything more negative is rejected.
pub fn psd_sqrt(a: &Matrix) -> Result<Matrix> {
    let eig = symmetric_eigen(a)?;
    let floor = -1e-10 * frobenius_norm(a);
    if let Some(&lo) = eig.values.first() {
        if lo < floor {
            return Err(LinalgError::NotPsd { eigenvalue: lo });
        }
    }
    let n = a.nrows();
    let mut s = Matrix::zeros(n, n);
    for (k, &lambda) in eig.values.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        if root == 0.0 {
            continue;
        }
        let col = eig.vectors.column(k);
        s += root * col * col.transpose();
    }
    Ok((&s + s.transpose()) * 0.5)
}
