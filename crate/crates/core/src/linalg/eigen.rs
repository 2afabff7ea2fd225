use std::cmp::Ordering;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ensure_finite, frobenius_norm, LinalgError, Matrix, Result};

/// Eigenvalues with `|λ| < DEFAULT_ZERO_TOL_FACTOR · ‖A‖_F` count as zero.
pub const DEFAULT_ZERO_TOL_FACTOR: f64 = 1e-9;

/// QR sweeps allowed per eigenvalue, as a multiple of the dimension.
const SWEEPS_PER_DIM: usize = 30;

/// Eigenvalues of a square matrix, with algebraic multiplicity, together with
/// the absolute threshold used to classify an eigenvalue as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub zero_tol: f64,
}

impl Spectrum {
    /// Sorts the eigenvalues by real part, then imaginary part.
    pub fn new(mut eigenvalues: Vec<Complex64>, zero_tol: f64) -> Self {
        eigenvalues.sort_by(cmp_complex);
        Self {
            eigenvalues,
            zero_tol,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn is_zero(&self, lambda: Complex64) -> bool {
        lambda.norm() < self.zero_tol
    }

    pub fn n_zero(&self) -> usize {
        self.eigenvalues
            .iter()
            .filter(|l| self.is_zero(**l))
            .count()
    }

    pub fn nonzero(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.eigenvalues
            .iter()
            .copied()
            .filter(move |l| !self.is_zero(*l))
    }

    pub fn spectral_abscissa(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest distance between paired eigenvalues of two spectra.
    ///
    /// Pairing is greedy: each eigenvalue of `self`, in sorted order, takes
    /// the nearest still-unpaired eigenvalue of `other`. Returns `None` when
    /// the lengths differ.
    pub fn pairing_distance(&self, other: &Spectrum) -> Option<f64> {
        if self.len() != other.len() {
            return None;
        }
        let mut used = vec![false; other.len()];
        let mut worst = 0.0_f64;
        for a in &self.eigenvalues {
            let mut best: Option<(usize, f64)> = None;
            for (j, b) in other.eigenvalues.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let d = (a - b).norm();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            let (j, d) = best?;
            used[j] = true;
            worst = worst.max(d);
        }
        Some(worst)
    }
}

pub(crate) fn cmp_complex(a: &Complex64, b: &Complex64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

/// All eigenvalues of a real square matrix, zero threshold
/// `DEFAULT_ZERO_TOL_FACTOR · ‖A‖_F`.
pub fn eigenvalues(a: &Matrix) -> Result<Spectrum> {
    let tol = DEFAULT_ZERO_TOL_FACTOR * frobenius_norm(a);
    eigenvalues_with_tol(a, tol)
}

pub fn eigenvalues_with_tol(a: &Matrix, zero_tol: f64) -> Result<Spectrum> {
    if !a.is_square() {
        return Err(LinalgError::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Spectrum::new(Vec::new(), zero_tol));
    }
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)]).collect())
        .collect();
    balance(&mut h);
    hessenberg(&mut h);
    let eigs = hqr(&mut h)?;
    Ok(Spectrum::new(eigs, zero_tol))
}

/// Diagonal similarity scaling by powers of two so that row and column norms
/// are comparable.
fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let n = a.len();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut g = r / RADIX;
            let mut f = 1.0;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for v in a[i].iter_mut() {
                    *v *= g;
                }
                for row in a.iter_mut() {
                    row[i] *= f;
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form (in place).
fn hessenberg(h: &mut [Vec<f64>]) {
    let n = h.len();
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[i][j];
            }
            f /= hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for row in h.iter_mut() {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * row[j];
            }
            f /= hh;
            for j in m..=high {
                row[j] -= f * ort[j];
            }
        }
        h[m][m - 1] = scale * g;
        for i in m + 1..=high {
            h[i][m - 1] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix, eigenvalues only.
fn hqr(h: &mut [Vec<f64>]) -> Result<Vec<Complex64>> {
    let nn = h.len();
    let budget = SWEEPS_PER_DIM * nn;
    let eps = f64::EPSILON;
    let mut out = vec![Complex64::new(0.0, 0.0); nn];

    let mut norm = 0.0;
    for (i, row) in h.iter().enumerate() {
        for v in &row[i.saturating_sub(1)..] {
            norm += v.abs();
        }
    }

    let low = 0usize;
    let mut n = nn as isize - 1;
    let mut exshift = 0.0;
    let mut iter = 0usize;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut x, mut y, mut w);

    while n >= low as isize {
        let nu = n as usize;
        // Find a negligible subdiagonal entry.
        let mut l = nu;
        while l > low {
            s = h[l - 1][l - 1].abs() + h[l][l].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[l][l - 1].abs() <= eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            out[nu] = Complex64::new(h[nu][nu] + exshift, 0.0);
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[nu][nu - 1] * h[nu - 1][nu];
            p = (h[nu - 1][nu - 1] - h[nu][nu]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            x = h[nu][nu] + exshift;
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                let first = x + z;
                let second = if z != 0.0 { x - w / z } else { first };
                out[nu - 1] = Complex64::new(first, 0.0);
                out[nu] = Complex64::new(second, 0.0);
            } else {
                out[nu - 1] = Complex64::new(x + p, z);
                out[nu] = Complex64::new(x + p, -z);
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[nu][nu];
            y = h[nu - 1][nu - 1];
            w = h[nu][nu - 1] * h[nu - 1][nu];

            // Exceptional shifts.
            if iter == 10 {
                exshift += x;
                for (i, row) in h.iter_mut().enumerate().take(nu + 1).skip(low) {
                    row[i] -= x;
                }
                s = h[nu][nu - 1].abs() + h[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for (i, row) in h.iter_mut().enumerate().take(nu + 1).skip(low) {
                        row[i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            if iter > budget {
                return Err(LinalgError::NoConvergence {
                    algorithm: "Francis QR",
                    budget,
                });
            }

            // Look for two consecutive small subdiagonal entries.
            let mut m = nu - 2;
            loop {
                z = h[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - r - s;
                r = h[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[m][m - 1].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            // Double QR step on rows l..=n and columns m..=n.
            let mut k = m;
            while k < nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[k][k - 1] = -s * x;
                    } else if l != m {
                        h[k][k - 1] = -h[k][k - 1];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..=nu {
                        p = h[k][j] + q * h[k + 1][j];
                        if notlast {
                            p += r * h[k + 2][j];
                            h[k + 2][j] -= p * z;
                        }
                        h[k][j] -= p * x;
                        h[k + 1][j] -= p * y;
                    }
                    let upper = nu.min(k + 3);
                    for row in h.iter_mut().take(upper + 1).skip(l) {
                        p = x * row[k] + y * row[k + 1];
                        if notlast {
                            p += z * row[k + 2];
                            row[k + 2] -= p * r;
                        }
                        row[k] -= p;
                        row[k + 1] -= p * q;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(out)
}
