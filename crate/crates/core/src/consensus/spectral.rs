//! Spectra of `M` and `M̃`, the step-size bound `α_max` and the rate `ρ_max`.
//!
//! Whenever `X` has rank `r < n`, zero is a defective eigenvalue of `M`
//! (Jordan blocks of size two). A dense QR iteration resolves such an
//! eigenvalue only to about `sqrt(ε)·‖M‖`, which is far above the zero
//! threshold `1e-9·‖M‖_F`. [`structured_spectra`] avoids the problem by
//! working in the eigenbasis of the Laplacian:
//!
//! - In coordinates `Φ ⊗ I_n`, with `L = Φ diag(μ) Φᵀ`, the coupling blocks
//!   of `M` become diagonal and `𝐗𝐗ᵀ` only acts on `range(X)`.
//! - On `range(X)⊥` every Laplacian mode `k` contributes `n − r` copies of the
//!   roots of `s² + k_P μ_k s + k_I μ_k`, computed in closed form.
//! - On `range(X)` a reduced matrix of size `2pr` remains. Its columns for the
//!   integral states of zero modes vanish identically, so those eigenvalues
//!   are exact zeros and are deflated before the dense solve.
//!
//! `M` and `M̃` share the same reduction with different coupling
//! coefficients (`μ` and `−k_I` versus `±sqrt(k_I μ)`).

use serde::{Deserialize, Serialize};

use super::blocks::{check_gains, check_problem};
use super::{ConsensusError, Partition, Result};
use crate::edmd::LiftedData;
use crate::graph::{laplacian, Graph};
use crate::linalg::{
    default_rank_tol, eigenvalues_with_tol, frobenius_norm, svd, symmetric_eigen, Complex64,
    Matrix, Spectrum, DEFAULT_ZERO_TOL_FACTOR,
};

/// Spectral diagnostics of one problem instance and gain pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub spectrum_m: Spectrum,
    pub spectrum_m_tilde: Spectrum,
    pub n_zero: usize,
    pub alpha_max: f64,
    /// Step size the rate was evaluated at, if any.
    pub alpha: Option<f64>,
    /// `None` when `alpha` is absent or not below `alpha_max`.
    pub rho_max: Option<f64>,
    pub semi_hurwitz: bool,
}

/// True iff every eigenvalue is classified zero or has negative real part.
pub fn semi_hurwitz_check(spec: &Spectrum) -> bool {
    spec.eigenvalues
        .iter()
        .all(|&l| spec.is_zero(l) || l.re < 0.0)
}

/// `α_max = −max_{λ≠0} 2 re(λ) / |λ|²`.
pub fn compute_alpha_max(spec: &Spectrum) -> Result<f64> {
    let mut worst: Option<(f64, Complex64)> = None;
    for l in spec.nonzero() {
        if l.re >= spec.zero_tol {
            return Err(ConsensusError::NotSemiHurwitz { re: l.re, im: l.im });
        }
        let v = 2.0 * l.re / l.norm_sqr();
        if worst.is_none_or(|(w, _)| v > w) {
            worst = Some((v, l));
        }
    }
    let (v, l) = worst.ok_or(ConsensusError::NoNonzeroEigenvalues)?;
    let alpha_max = -v;
    if !(alpha_max > 0.0 && alpha_max.is_finite()) {
        return Err(ConsensusError::NotSemiHurwitz { re: l.re, im: l.im });
    }
    Ok(alpha_max)
}

/// `ρ_max = max_{λ≠0} sqrt(1 + 2α re(λ) + α² |λ|²)` for `α ∈ (0, α_max)`.
pub fn compute_rho_max(spec: &Spectrum, alpha: f64) -> Result<f64> {
    let alpha_max = compute_alpha_max(spec)?;
    if !(alpha > 0.0 && alpha < alpha_max) {
        return Err(ConsensusError::AlphaOutOfRange { alpha, alpha_max });
    }
    Ok(spec
        .nonzero()
        .map(|l| {
            (1.0 + 2.0 * alpha * l.re + alpha * alpha * l.norm_sqr())
                .max(0.0)
                .sqrt()
        })
        .fold(0.0, f64::max))
}

/// Roots of `s² + b s + c`, cancellation-free.
fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    if b == 0.0 && c == 0.0 {
        return [Complex64::new(0.0, 0.0); 2];
    }
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let other = if q != 0.0 { c / q } else { 0.0 };
        [Complex64::new(q, 0.0), Complex64::new(other, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(-0.5 * b, im), Complex64::new(-0.5 * b, -im)]
    }
}

/// Exact-structure spectra `(Λ(M), Λ(M̃))`, with multiplicity.
///
/// `rank_tol` decides the numerical rank of `X` (default: the pseudoinverse
/// default). Zero thresholds are `1e-9` times the respective Frobenius norm.
pub fn structured_spectra(
    g: &Graph,
    part: &Partition,
    data: &LiftedData,
    k_p: f64,
    k_i: f64,
    rank_tol: Option<f64>,
) -> Result<(Spectrum, Spectrum)> {
    check_problem(g, part, data)?;
    check_gains(k_p, k_i)?;
    let n = data.n();
    let p = part.num_agents();

    let l = laplacian(g).0;
    let l_eig = symmetric_eigen(&l)?;
    let mu_tol = 1e-12 * frobenius_norm(&l).max(1.0);
    let mu: Vec<f64> = l_eig
        .values
        .iter()
        .map(|&v| if v.abs() <= mu_tol { 0.0 } else { v })
        .collect();
    let phi = &l_eig.vectors;

    let x_svd = svd(&data.x)?;
    let smax = x_svd.sigma.first().copied().unwrap_or(0.0);
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(n, data.num_samples(), smax));
    let r = x_svd.rank(tol);
    let q = x_svd.u.columns(0, r).into_owned();

    let blocks = part.blocks(data);
    let grams: Vec<Matrix> = blocks
        .iter()
        .map(|(xi, _)| {
            let c = q.transpose() * xi;
            &c * c.transpose()
        })
        .collect();

    // Mode-coordinate Gram operator, p×p blocks of size r×r.
    let pr = p * r;
    let mut h = Matrix::zeros(pr, pr);
    for a in 0..p {
        for b in 0..p {
            let mut blk = h.view_mut((a * r, b * r), (r, r));
            for (i, gi) in grams.iter().enumerate() {
                let w = phi[(i, a)] * phi[(i, b)];
                if w != 0.0 {
                    blk += w * gi;
                }
            }
        }
    }

    // Frobenius norms of the full matrices, for the zero thresholds.
    let l_fro2 = frobenius_norm(&l).powi(2);
    let mut drift2 = k_p * k_p * n as f64 * l_fro2;
    for (i, (xi, _)) in blocks.iter().enumerate() {
        let small_gram = xi.transpose() * xi;
        drift2 += frobenius_norm(&small_gram).powi(2);
        drift2 += 2.0 * k_p * l[(i, i)] * frobenius_norm(xi).powi(2);
    }
    let m_norm = (drift2 + n as f64 * l_fro2 + k_i * k_i * (n * p) as f64).sqrt();
    let mt_norm = (drift2 + 2.0 * k_i * n as f64 * l.trace()).sqrt();

    let build = |upper: &dyn Fn(f64) -> f64, lower: &dyn Fn(f64) -> f64, zero_tol: f64| {
        let mut red = Matrix::zeros(2 * pr, 2 * pr);
        red.view_mut((0, 0), (pr, pr)).copy_from(&(-&h));
        for (k, &m) in mu.iter().enumerate() {
            for a in 0..r {
                let idx = k * r + a;
                red[(idx, idx)] -= k_p * m;
                red[(idx, pr + idx)] = upper(m);
                red[(pr + idx, idx)] = lower(m);
            }
        }
        // Integral-state columns of zero modes are identically zero.
        let keep: Vec<usize> = (0..2 * pr)
            .filter(|&j| !(j >= pr && mu[(j - pr) / r.max(1)] == 0.0))
            .collect();
        let deflated = 2 * pr - keep.len();
        let sub = Matrix::from_fn(keep.len(), keep.len(), |a, b| red[(keep[a], keep[b])]);
        let mut eigs = eigenvalues_with_tol(&sub, zero_tol)?.eigenvalues;
        eigs.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), deflated));
        for &m in &mu {
            let roots = quadratic_roots(k_p * m, k_i * m);
            for _ in 0..n - r {
                eigs.extend_from_slice(&roots);
            }
        }
        debug_assert_eq!(eigs.len(), 2 * n * p);
        Ok::<_, ConsensusError>(Spectrum::new(eigs, zero_tol))
    };

    let spec_m = build(&|m| m, &|_| -k_i, DEFAULT_ZERO_TOL_FACTOR * m_norm)?;
    let spec_mt = build(
        &|m| (k_i * m).sqrt(),
        &|m| -(k_i * m).sqrt(),
        DEFAULT_ZERO_TOL_FACTOR * mt_norm,
    )?;
    Ok((spec_m, spec_mt))
}

/// Spectra, `α_max`, and (when `alpha` is given and admissible) `ρ_max`.
pub fn spectral_report(
    g: &Graph,
    part: &Partition,
    data: &LiftedData,
    k_p: f64,
    k_i: f64,
    alpha: Option<f64>,
) -> Result<SpectralReport> {
    let (spectrum_m, spectrum_m_tilde) = structured_spectra(g, part, data, k_p, k_i, None)?;
    let alpha_max = compute_alpha_max(&spectrum_m)?;
    let rho_max = match alpha {
        Some(a) if a > 0.0 && a < alpha_max => Some(compute_rho_max(&spectrum_m, a)?),
        _ => None,
    };
    Ok(SpectralReport {
        n_zero: spectrum_m.n_zero(),
        semi_hurwitz: semi_hurwitz_check(&spectrum_m),
        spectrum_m,
        spectrum_m_tilde,
        alpha_max,
        alpha,
        rho_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{assemble_m, assemble_m_tilde, partition_data};
    use crate::graph::build_graph;
    use crate::linalg::{eigenvalues, from_rows};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(values: &[(f64, f64)]) -> Spectrum {
        let eigs = values.iter().map(|&(r, i)| Complex64::new(r, i)).collect();
        Spectrum::new(eigs, 1e-12)
    }

    fn worked() -> (Graph, Partition, LiftedData) {
        let d =
            LiftedData::new(from_rows(1, 2, &[1.0, 1.0]), from_rows(1, 2, &[1.0, 1.0])).unwrap();
        let part = partition_data(&d, &[1, 1]).unwrap();
        (Graph::complete(2).unwrap(), part, d)
    }

    #[test]
    fn alpha_and_rho_by_hand() {
        let s = spec(&[(0.0, 0.0), (-1.0, 0.0), (-1.0, 0.0), (-2.0, 0.0)]);
        assert!((compute_alpha_max(&s).unwrap() - 1.0).abs() < 1e-15);
        assert!((compute_rho_max(&s, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let s = spec(&[(0.0, 0.0), (-1.0, 1.0), (-1.0, -1.0)]);
        assert!((compute_alpha_max(&s).unwrap() - 1.0).abs() < 1e-15);
        let r = compute_rho_max(&s, 1e-6).unwrap();
        assert!(r < 1.0 && r > 1.0 - 1e-5);
    }

    #[test]
    fn alpha_errors() {
        assert!(matches!(
            compute_alpha_max(&spec(&[(0.0, 0.0), (0.1, 0.0)])),
            Err(ConsensusError::NotSemiHurwitz { .. })
        ));
        assert_eq!(
            compute_alpha_max(&spec(&[(0.0, 0.0)])),
            Err(ConsensusError::NoNonzeroEigenvalues)
        );
        let s = spec(&[(-1.0, 0.0), (-2.0, 0.0)]);
        assert!(matches!(
            compute_rho_max(&s, 1.0),
            Err(ConsensusError::AlphaOutOfRange { .. })
        ));
        assert!(compute_rho_max(&s, 0.0).is_err());
    }

    #[test]
    fn semi_hurwitz_examples() {
        assert!(semi_hurwitz_check(&spec(&[
            (0.0, 0.0),
            (-1.0, 0.0),
            (-2.0, 0.0)
        ])));
        assert!(!semi_hurwitz_check(&spec(&[(0.0, 0.0), (0.1, 0.0)])));
    }

    #[test]
    fn quadratic_roots_are_accurate() {
        let [a, b] = quadratic_roots(3.0, 2.0);
        assert_eq!((a.re, b.re), (-2.0, -1.0));
        let [a, b] = quadratic_roots(1e8, 1.0);
        // Small root ≈ −1e-8 without cancellation.
        assert!((b.re + 1e-8).abs() < 1e-22);
        assert!((a.re + 1e8).abs() < 1e-6);
        let [a, b] = quadratic_roots(2.0, 2.0);
        assert_eq!(a, Complex64::new(-1.0, 1.0));
        assert_eq!(b, Complex64::new(-1.0, -1.0));
    }

    #[test]
    fn worked_instance_structured() {
        let (g, part, d) = worked();
        let (m, mt) = structured_spectra(&g, &part, &d, 1.0, 1.0, None).unwrap();
        for s in [&m, &mt] {
            let want = [-2.0, -1.0, -1.0, 0.0];
            for (got, w) in s.eigenvalues.iter().zip(want) {
                assert!((got - Complex64::new(w, 0.0)).norm() < 1e-12, "{got}");
            }
        }
        let rep = spectral_report(&g, &part, &d, 1.0, 1.0, Some(0.5)).unwrap();
        assert_eq!(rep.n_zero, 1);
        assert!((rep.alpha_max - 1.0).abs() < 1e-12);
        assert!((rep.rho_max.unwrap() - 0.5).abs() < 1e-12);
        assert!(rep.semi_hurwitz);
        let dense = eigenvalues(&assemble_m(&g, &part, &d, 1.0, 1.0).unwrap()).unwrap();
        assert!(dense.pairing_distance(&m).unwrap() < 1e-12);
    }

    #[test]
    fn zero_multiplicity_follows_rank() {
        // n = 4, N = 3 gives r = 3 and an algebraic zero count of 2n − r = 5.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let d = LiftedData::new(x.clone(), x).unwrap();
        let part = partition_data(&d, &[1, 1, 1]).unwrap();
        let g = Graph::path(3).unwrap();
        let (m, mt) = structured_spectra(&g, &part, &d, 2.0, 0.7, None).unwrap();
        assert_eq!(m.n_zero(), 5);
        assert_eq!(mt.n_zero(), 5);
        assert!(semi_hurwitz_check(&m));
        assert!(m.pairing_distance(&mt).unwrap() < 1e-8 * (m.zero_tol / DEFAULT_ZERO_TOL_FACTOR));
    }

    #[test]
    fn single_agent_spectrum() {
        let d =
            LiftedData::new(from_rows(2, 2, &[1.0, 0.0, 0.0, 2.0]), Matrix::zeros(2, 2)).unwrap();
        let part = partition_data(&d, &[2]).unwrap();
        let g = build_graph(1, &[]).unwrap();
        let (m, _) = structured_spectra(&g, &part, &d, 1.0, 1.0, None).unwrap();
        let re: Vec<f64> = m.eigenvalues.iter().map(|l| l.re).collect();
        assert_eq!(re, vec![-4.0, -1.0, 0.0, 0.0]);
    }

    fn random_instance(seed: u64, full_rank: bool) -> (Graph, Partition, LiftedData, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=4);
        let widths: Vec<usize> = (0..p)
            .map(|_| {
                if full_rank {
                    rng.gen_range(n..=n + 2)
                } else {
                    rng.gen_range(1..=3)
                }
            })
            .collect();
        let big_n: usize = widths.iter().sum();
        let x = Matrix::from_fn(n, big_n, |_, _| rng.gen_range(-1.0..1.0));
        let y = Matrix::from_fn(n, big_n, |_, _| rng.gen_range(-1.0..1.0));
        let d = LiftedData::new(x, y).unwrap();
        let part = partition_data(&d, &widths).unwrap();
        let g = loop {
            let edges: Vec<_> = (0..p)
                .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
                .filter(|_| rng.gen_bool(0.6))
                .collect();
            let g = build_graph(p, &edges).unwrap();
            if crate::graph::is_connected(&g) {
                break g;
            }
        };
        let k_p = rng.gen_range(0.1..10.0);
        let k_i = rng.gen_range(0.1..10.0);
        (g, part, d, k_p, k_i)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn structured_matches_dense_when_x_has_full_row_rank(seed in any::<u64>()) {
            let (g, part, d, k_p, k_i) = random_instance(seed, true);
            let (m, mt) = structured_spectra(&g, &part, &d, k_p, k_i, None).unwrap();
            let dense_m = eigenvalues(&assemble_m(&g, &part, &d, k_p, k_i).unwrap()).unwrap();
            let dense_mt = eigenvalues(&assemble_m_tilde(&g, &part, &d, k_p, k_i).unwrap()).unwrap();
            let scale_m = dense_m.zero_tol / DEFAULT_ZERO_TOL_FACTOR;
            let scale_mt = dense_mt.zero_tol / DEFAULT_ZERO_TOL_FACTOR;
            prop_assert!((m.zero_tol - dense_m.zero_tol).abs() <= 1e-12 * dense_m.zero_tol.max(1e-300));
            prop_assert!((mt.zero_tol - dense_mt.zero_tol).abs() <= 1e-12 * dense_mt.zero_tol.max(1e-300));
            prop_assert!(m.pairing_distance(&dense_m).unwrap() <= 1e-8 * scale_m);
            prop_assert!(mt.pairing_distance(&dense_mt).unwrap() <= 1e-8 * scale_mt);
        }

        #[test]
        fn structured_spectra_are_semi_hurwitz(seed in any::<u64>()) {
            let (g, part, d, k_p, k_i) = random_instance(seed, false);
            let (m, mt) = structured_spectra(&g, &part, &d, k_p, k_i, None).unwrap();
            prop_assert!(semi_hurwitz_check(&m));
            prop_assert!(semi_hurwitz_check(&mt));
            let scale = m.zero_tol / DEFAULT_ZERO_TOL_FACTOR;
            prop_assert!(m.pairing_distance(&mt).unwrap() <= 1e-8 * scale);
            // Rank-deficient M is defective at 0, so the dense spectrum only
            // agrees to about sqrt(ε)·‖M‖.
            let dense = eigenvalues(&assemble_m(&g, &part, &d, k_p, k_i).unwrap()).unwrap();
            prop_assert!(m.pairing_distance(&dense).unwrap() <= 1e-6 * scale);
        }
    }
}
