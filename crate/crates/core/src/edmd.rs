//! Observable dictionaries, lifted data matrices and the centralized
//! least-squares Koopman fit.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, frobenius_norm, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdmdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("snapshot sequence needs at least two states, got {0}")]
    TooShort(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dictionary spec: {0}")]
    Parse(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, EdmdError>;

/// Lifting function `Ψ: ℝ^q → ℝ^n`, shared by all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dictionary {
    /// Identity lift, `n = q`.
    Vectorization { dim: usize },
    /// All monomials of total degree `<= max_degree`, graded, constant first.
    Monomial { input_dim: usize, max_degree: u32 },
    /// Gaussian bumps `exp(-‖x - c‖² / width²)`, one per center.
    Radial { centers: Vec<Vec<f64>>, width: f64 },
}

impl Dictionary {
    pub fn input_dim(&self) -> usize {
        match self {
            Dictionary::Vectorization { dim } => *dim,
            Dictionary::Monomial { input_dim, .. } => *input_dim,
            Dictionary::Radial { centers, .. } => centers.first().map_or(0, Vec::len),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Dictionary::Vectorization { dim } => *dim,
            Dictionary::Monomial {
                input_dim,
                max_degree,
            } => monomial_exponents(*input_dim, *max_degree).len(),
            Dictionary::Radial { centers, .. } => centers.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Dictionary::Vectorization { dim } if *dim == 0 => {
                Err(EdmdError::Parse("vectorization needs dim >= 1".into()))
            }
            Dictionary::Monomial { input_dim, .. } if *input_dim == 0 => {
                Err(EdmdError::Parse("monomial needs input_dim >= 1".into()))
            }
            Dictionary::Radial { centers, width } => {
                if centers.is_empty() {
                    return Err(EdmdError::Parse("radial needs at least one center".into()));
                }
                let q = centers[0].len();
                if q == 0 || centers.iter().any(|c| c.len() != q) {
                    return Err(EdmdError::Parse(
                        "radial centers must share a positive dimension".into(),
                    ));
                }
                if !(width.is_finite() && *width > 0.0) {
                    return Err(EdmdError::Parse("radial width must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `Ψ(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(EdmdError::Dimension(format!(
                "dictionary expects states of length {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let out = match self {
            Dictionary::Vectorization { .. } => DVector::from_column_slice(x),
            Dictionary::Monomial {
                input_dim,
                max_degree,
            } => {
                let exps = monomial_exponents(*input_dim, *max_degree);
                DVector::from_iterator(
                    exps.len(),
                    exps.iter().map(|e| {
                        e.iter()
                            .zip(x)
                            .map(|(&k, &xi)| xi.powi(k as i32))
                            .product::<f64>()
                    }),
                )
            }
            Dictionary::Radial { centers, width } => DVector::from_iterator(
                centers.len(),
                centers.iter().map(|c| {
                    let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-d2 / (width * width)).exp()
                }),
            ),
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EdmdError::NonFinite("lifted state"));
        }
        Ok(out)
    }
}

/// Exponent tuples of all monomials in `q` variables with total degree up to
/// `d`: by degree, then lexicographically descending in the exponents.
pub fn monomial_exponents(q: usize, d: u32) -> Vec<Vec<u32>> {
    fn fill(q: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == q {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=total).rev() {
            prefix.push(k);
            fill(q, total - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if q == 0 {
        return out;
    }
    for total in 0..=d {
        fill(q, total, &mut Vec::new(), &mut out);
    }
    out
}

/// Config-string form: `vectorization:<dim>`, `monomial:<input_dim>:<degree>`,
/// or `radial:<width>:<c11,c12,...>;<c21,...>`.
impl FromStr for Dictionary {
    type Err = EdmdError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| EdmdError::Parse(format!("`{s}`: {m}"));
        let mut parts = s.trim().splitn(3, ':');
        let kind = parts.next().unwrap_or("");
        let dict = match kind {
            "vectorization" => {
                let dim = parts
                    .next()
                    .ok_or_else(|| bad("missing dim"))?
                    .parse()
                    .map_err(|_| bad("bad dim"))?;
                Dictionary::Vectorization { dim }
            }
            "monomial" => {
                let input_dim = parts
                    .next()
                    .ok_or_else(|| bad("missing input dim"))?
                    .parse()
                    .map_err(|_| bad("bad input dim"))?;
                let max_degree = parts
                    .next()
                    .ok_or_else(|| bad("missing degree"))?
                    .parse()
                    .map_err(|_| bad("bad degree"))?;
                Dictionary::Monomial {
                    input_dim,
                    max_degree,
                }
            }
            "radial" => {
                let width = parts
                    .next()
                    .ok_or_else(|| bad("missing width"))?
                    .parse()
                    .map_err(|_| bad("bad width"))?;
                let centers = parts
                    .next()
                    .ok_or_else(|| bad("missing centers"))?
                    .split(';')
                    .map(|c| {
                        c.split(',')
                            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("bad center")))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Dictionary::Radial { centers, width }
            }
            _ => return Err(bad("unknown dictionary kind")),
        };
        dict.validate()?;
        Ok(dict)
    }
}

impl fmt::Display for Dictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dictionary::Vectorization { dim } => write!(f, "vectorization:{dim}"),
            Dictionary::Monomial {
                input_dim,
                max_degree,
            } => write!(f, "monomial:{input_dim}:{max_degree}"),
            Dictionary::Radial { centers, width } => {
                let cs: Vec<String> = centers
                    .iter()
                    .map(|c| {
                        c.iter()
                            .map(|v| format!("{v:?}"))
                            .collect::<Vec<_>>()
                            .join(",")
                    })
                    .collect();
                write!(f, "radial:{width:?}:{}", cs.join(";"))
            }
        }
    }
}

/// States `x_1, …, x_{N+1}` of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSequence {
    states: Vec<Vec<f64>>,
}

impl SnapshotSequence {
    pub fn new(states: Vec<Vec<f64>>) -> Result<Self> {
        if states.len() < 2 {
            return Err(EdmdError::TooShort(states.len()));
        }
        let q = states[0].len();
        if q == 0 || states.iter().any(|s| s.len() != q) {
            return Err(EdmdError::Dimension(
                "snapshot states must share a positive dimension".into(),
            ));
        }
        if states.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EdmdError::NonFinite("snapshot sequence"));
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// Number of transitions `N`.
    pub fn num_pairs(&self) -> usize {
        self.states.len() - 1
    }
}

/// Snapshot matrices `X = [Ψ(x_1) … Ψ(x_N)]`, `Y = [Ψ(x_2) … Ψ(x_{N+1})]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedData {
    pub x: Matrix,
    pub y: Matrix,
}

impl LiftedData {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(EdmdError::Dimension(format!(
                "X is {}x{} but Y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(EdmdError::Dimension("empty data matrices".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(EdmdError::NonFinite("data matrices"));
        }
        Ok(Self { x, y })
    }

    /// Lifted dimension `n`.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Sample count `N`.
    pub fn num_samples(&self) -> usize {
        self.x.ncols()
    }
}

pub fn lift(seq: &SnapshotSequence, dict: &Dictionary) -> Result<LiftedData> {
    if dict.input_dim() != seq.state_dim() {
        return Err(EdmdError::Dimension(format!(
            "dictionary input dim {} vs state dim {}",
            dict.input_dim(),
            seq.state_dim()
        )));
    }
    let lifted = seq
        .states()
        .iter()
        .map(|s| dict.eval(s))
        .collect::<Result<Vec<_>>>()?;
    let n = dict.output_dim();
    let big_n = seq.num_pairs();
    let x = Matrix::from_fn(n, big_n, |r, c| lifted[c][r]);
    let y = Matrix::from_fn(n, big_n, |r, c| lifted[c + 1][r]);
    LiftedData::new(x, y)
}

/// Linear operator acting on lifted states.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub k: Matrix,
}

impl KoopmanModel {
    pub fn new(k: Matrix) -> Result<Self> {
        if !k.is_square() {
            return Err(EdmdError::Dimension(format!(
                "Koopman matrix must be square, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(EdmdError::NonFinite("Koopman matrix"));
        }
        Ok(Self { k })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

/// Minimum-norm least-squares fit `K* = Y X⁺`.
pub fn centralized_solve(data: &LiftedData, rank_tol: Option<f64>) -> Result<KoopmanModel> {
    let pinv = linalg::pseudoinverse(&data.x, rank_tol)?;
    KoopmanModel::new(&data.y * pinv)
}

fn check_model(k: &KoopmanModel, data: &LiftedData) -> Result<()> {
    if k.n() != data.n() {
        return Err(EdmdError::Dimension(format!(
            "model is {}x{} but data has n = {}",
            k.n(),
            k.n(),
            data.n()
        )));
    }
    Ok(())
}

/// `½‖Y − KX‖²_F`.
pub fn objective(k: &KoopmanModel, data: &LiftedData) -> Result<f64> {
    check_model(k, data)?;
    let r = frobenius_norm(&(&data.y - &k.k * &data.x));
    Ok(0.5 * r * r)
}

/// `‖Y − KX‖_F`.
pub fn residual_norm(k: &KoopmanModel, data: &LiftedData) -> Result<f64> {
    check_model(k, data)?;
    Ok(frobenius_norm(&(&data.y - &k.k * &data.x)))
}

/// `[z0, K z0, …, K^steps z0]`.
pub fn rollout(k: &KoopmanModel, z0: &DVector<f64>, steps: usize) -> Result<Vec<DVector<f64>>> {
    if z0.len() != k.n() {
        return Err(EdmdError::Dimension(format!(
            "initial state has length {}, model expects {}",
            z0.len(),
            k.n()
        )));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(z0.clone());
    for _ in 0..steps {
        let next = &k.k * out.last().expect("non-empty");
        out.push(next);
    }
    Ok(out)
}

/// Mean residual `(1/p) Σᵢ ‖Y − KᵢX‖_F` over a set of models.
pub fn fit_metric(models: &[KoopmanModel], data: &LiftedData) -> Result<f64> {
    if models.is_empty() {
        return Err(EdmdError::Dimension(
            "fit metric needs at least one model".into(),
        ));
    }
    let mut total = 0.0;
    for m in models {
        total += residual_norm(m, data)?;
    }
    Ok(total / models.len() as f64)
}

/// Where multi-step prediction starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutStart {
    /// The final training state `x_{N+1}`; the truth is the held-out future.
    #[default]
    LastTraining,
    /// The first training state `x_1`.
    FirstTraining,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(x: Matrix, y: Matrix) -> LiftedData {
        LiftedData::new(x, y).unwrap()
    }

    #[test]
    fn vectorization_lift() {
        let seq =
            SnapshotSequence::new(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let d = lift(&seq, &Dictionary::Vectorization { dim: 2 }).unwrap();
        assert_eq!(d.x, from_rows(2, 2, &[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(d.y, from_rows(2, 2, &[3.0, 5.0, 4.0, 6.0]));
    }

    #[test]
    fn scalar_monomial_lift() {
        let seq = SnapshotSequence::new(vec![vec![2.0], vec![3.0]]).unwrap();
        let dict = Dictionary::Monomial {
            input_dim: 1,
            max_degree: 2,
        };
        let d = lift(&seq, &dict).unwrap();
        assert_eq!(d.x, from_rows(3, 1, &[1.0, 2.0, 4.0]));
        assert_eq!(d.y, from_rows(3, 1, &[1.0, 3.0, 9.0]));
    }

    #[test]
    fn grid_vectorization_dimension() {
        let frames: Vec<Vec<f64>> = (0..3).map(|k| vec![k as f64; 400]).collect();
        let seq = SnapshotSequence::new(frames).unwrap();
        let d = lift(&seq, &Dictionary::Vectorization { dim: 400 }).unwrap();
        assert_eq!(d.x.shape(), (400, 2));
    }

    #[test]
    fn monomial_count_and_order() {
        // C(q + d, d) monomials.
        assert_eq!(monomial_exponents(2, 2).len(), 6);
        assert_eq!(monomial_exponents(3, 3).len(), 20);
        assert_eq!(
            monomial_exponents(2, 2),
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn radial_values() {
        let dict = Dictionary::Radial {
            centers: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            width: 1.0,
        };
        let v = dict.eval(&[0.0, 0.0]).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn dictionary_strings() {
        for s in ["vectorization:400", "monomial:2:3", "radial:0.5:0,0;1,1"] {
            let d: Dictionary = s.parse().unwrap();
            let again: Dictionary = d.to_string().parse().unwrap();
            assert_eq!(d, again);
        }
        assert!("cubic:3".parse::<Dictionary>().is_err());
        assert!("radial:-1:0".parse::<Dictionary>().is_err());
    }

    #[test]
    fn lift_rejects_mismatch() {
        let seq = SnapshotSequence::new(vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(lift(&seq, &Dictionary::Vectorization { dim: 2 }).is_err());
        assert!(SnapshotSequence::new(vec![vec![1.0]]).is_err());
        assert!(SnapshotSequence::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn centralized_examples() {
        let y = from_rows(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = centralized_solve(&data(Matrix::identity(2, 2), y.clone()), None).unwrap();
        assert!(frobenius_norm(&(k.k - y)) < 1e-14);

        let k = centralized_solve(
            &data(from_rows(1, 2, &[1.0, 2.0]), from_rows(1, 2, &[2.0, 4.0])),
            None,
        )
        .unwrap();
        assert!((k.k[(0, 0)] - 2.0).abs() < 1e-14);

        let k = centralized_solve(
            &data(from_rows(2, 1, &[1.0, 0.0]), from_rows(2, 1, &[2.0, 0.0])),
            None,
        )
        .unwrap();
        assert!(frobenius_norm(&(k.k - from_rows(2, 2, &[2.0, 0.0, 0.0, 0.0]))) < 1e-14);
    }

    #[test]
    fn objective_examples() {
        let d = data(from_rows(1, 2, &[1.0, 2.0]), from_rows(1, 2, &[2.0, 4.0]));
        let k = KoopmanModel::new(from_rows(1, 1, &[2.0])).unwrap();
        assert_eq!(objective(&k, &d).unwrap(), 0.0);
        let d = data(from_rows(1, 2, &[1.0, 1.0]), from_rows(1, 2, &[3.0, 4.0]));
        let zero = KoopmanModel::new(Matrix::zeros(1, 1)).unwrap();
        assert_eq!(objective(&zero, &d).unwrap(), 12.5);
    }

    #[test]
    fn rollout_examples() {
        let z0 = DVector::from_vec(vec![1.0, -2.0]);
        let eye = KoopmanModel::new(Matrix::identity(2, 2)).unwrap();
        let r = rollout(&eye, &z0, 3).unwrap();
        assert_eq!(r.len(), 4);
        assert!(r.iter().all(|z| *z == z0));

        let half = KoopmanModel::new(from_rows(1, 1, &[0.5])).unwrap();
        let r = rollout(&half, &DVector::from_vec(vec![8.0]), 3).unwrap();
        let vals: Vec<f64> = r.iter().map(|z| z[0]).collect();
        assert_eq!(vals, vec![8.0, 4.0, 2.0, 1.0]);
        assert!(rollout(&half, &z0, 1).is_err());
    }

    #[test]
    fn rollout_recovers_linear_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
        let mut states = vec![(0..n)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>()];
        for _ in 0..12 {
            let prev = DVector::from_column_slice(states.last().unwrap());
            states.push((&a * prev).iter().copied().collect());
        }
        let seq = SnapshotSequence::new(states.clone()).unwrap();
        let d = lift(&seq, &Dictionary::Vectorization { dim: n }).unwrap();
        let k = centralized_solve(&d, None).unwrap();
        let z0 = DVector::from_column_slice(&states[0]);
        let r = rollout(&k, &z0, 12).unwrap();
        for (pred, truth) in r.iter().zip(&states) {
            let diff = pred - DVector::from_column_slice(truth);
            assert!(diff.norm() < 1e-8);
        }
    }

    #[test]
    fn fit_metric_examples() {
        let d = data(from_rows(1, 2, &[1.0, 0.0]), from_rows(1, 2, &[0.0, 4.0]));
        // Y is not in the row space of X, so use an exact-fit instance first.
        let exact = data(from_rows(1, 1, &[1.0]), from_rows(1, 1, &[4.0]));
        let good = KoopmanModel::new(from_rows(1, 1, &[4.0])).unwrap();
        let zero = KoopmanModel::new(Matrix::zeros(1, 1)).unwrap();
        assert_eq!(
            fit_metric(std::slice::from_ref(&good), &exact).unwrap(),
            0.0
        );
        assert_eq!(fit_metric(&[good, zero.clone()], &exact).unwrap(), 2.0);
        assert_eq!(fit_metric(&[zero], &d).unwrap(), 4.0);
        assert!(fit_metric(&[], &d).is_err());
    }

    fn instance() -> impl Strategy<Value = (Matrix, Matrix, u64)> {
        (1usize..=8, 1usize..=20, 1usize..=8, any::<u64>()).prop_map(|(n, big_n, r, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // X = A B with inner dimension r controls the rank profile.
            let a = Matrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
            let b = Matrix::from_fn(r, big_n, |_, _| rng.gen_range(-1.0..1.0));
            let y = Matrix::from_fn(n, big_n, |_, _| rng.gen_range(-1.0..1.0));
            (a * b, y, seed)
        })
    }

    proptest! {
        #[test]
        fn stationarity((x, y, _) in instance()) {
            let d = data(x, y);
            let k = centralized_solve(&d, None).unwrap();
            let grad = (&k.k * &d.x - &d.y) * d.x.transpose();
            let scale = 1.0 + frobenius_norm(&d.y) * frobenius_norm(&d.x);
            prop_assert!(frobenius_norm(&grad) <= 1e-8 * scale);
        }

        #[test]
        fn unique_minimizer_on_full_row_rank((x, y, seed) in instance()) {
            let d = data(x, y);
            let s = linalg::svd(&d.x).unwrap();
            let tol = linalg::default_rank_tol(d.n(), d.num_samples(), s.sigma[0]);
            prop_assume!(s.rank(tol) == d.n());
            let k = centralized_solve(&d, None).unwrap();
            let best = objective(&k, &d).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for _ in 0..100 {
                let delta = Matrix::from_fn(d.n(), d.n(), |_, _| rng.gen_range(-1.0..1.0));
                let other = KoopmanModel::new(&k.k + delta).unwrap();
                prop_assert!(objective(&other, &d).unwrap() > best);
            }
        }

        #[test]
        fn fit_metric_bounded_by_best_model((x, y, seed) in instance()) {
            let d = data(x, y);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let models: Vec<_> = (0..3)
                .map(|_| KoopmanModel::new(Matrix::from_fn(d.n(), d.n(), |_, _| rng.gen_range(-1.0..1.0))).unwrap())
                .collect();
            let best = models
                .iter()
                .map(|m| residual_norm(m, &d).unwrap())
                .fold(f64::INFINITY, f64::min);
            prop_assert!(fit_metric(&models, &d).unwrap() >= best);
        }
    }
}
