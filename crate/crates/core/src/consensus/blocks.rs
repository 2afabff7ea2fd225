use super::{ConsensusError, Partition, Result};
use crate::edmd::LiftedData;
use crate::graph::{is_connected, laplacian, Graph};
use crate::linalg::{kron, psd_sqrt, Matrix};

/// `𝐗 = blkdiag(X_1, …, X_p)`, of size `np × N`.
pub fn assemble_block_x(part: &Partition, data: &LiftedData) -> Matrix {
    let n = data.n();
    let p = part.num_agents();
    let mut out = Matrix::zeros(n * p, data.num_samples());
    for (i, r) in part.ranges().into_iter().enumerate() {
        out.view_mut((i * n, r.start), (n, r.len()))
            .copy_from(&data.x.columns(r.start, r.len()));
    }
    out
}

pub(super) fn check_gains(k_p: f64, k_i: f64) -> Result<()> {
    if !(k_p.is_finite() && k_p > 0.0 && k_i.is_finite() && k_i > 0.0) {
        return Err(ConsensusError::Gains(format!(
            "k_P and k_I must be positive, got {k_p} and {k_i}"
        )));
    }
    Ok(())
}

pub(super) fn check_problem(g: &Graph, part: &Partition, data: &LiftedData) -> Result<()> {
    if g.p() != part.num_agents() {
        return Err(ConsensusError::Dimension(format!(
            "graph has {} vertices but the partition has {} agents",
            g.p(),
            part.num_agents()
        )));
    }
    if part.total() != data.num_samples() {
        return Err(ConsensusError::Partition(format!(
            "widths sum to {} but there are {} samples",
            part.total(),
            data.num_samples()
        )));
    }
    if !is_connected(g) {
        return Err(ConsensusError::Disconnected);
    }
    Ok(())
}

/// Upper-left block `−𝐗𝐗ᵀ − k_P 𝐋`, built from the per-agent Gram blocks.
fn drift_block(part: &Partition, data: &LiftedData, l: &Matrix, k_p: f64) -> Matrix {
    let n = data.n();
    let p = part.num_agents();
    let mut a = -k_p * kron(l, &Matrix::identity(n, n));
    for (i, (xi, _)) in part.blocks(data).into_iter().enumerate() {
        let gram = &xi * xi.transpose();
        let mut blk = a.view_mut((i * n, i * n), (n, n));
        blk -= gram;
    }
    debug_assert_eq!(a.nrows(), n * p);
    a
}

fn stack(a: &Matrix, upper: &Matrix, lower: &Matrix) -> Matrix {
    let m = a.nrows();
    let mut out = Matrix::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(a);
    out.view_mut((0, m), (m, m)).copy_from(upper);
    out.view_mut((m, 0), (m, m)).copy_from(lower);
    out
}

/// `M = [[−𝐗𝐗ᵀ − k_P 𝐋, 𝐋], [−k_I I, 0]]` with `𝐋 = L ⊗ I_n`.
pub fn assemble_m(
    g: &Graph,
    part: &Partition,
    data: &LiftedData,
    k_p: f64,
    k_i: f64,
) -> Result<Matrix> {
    check_problem(g, part, data)?;
    check_gains(k_p, k_i)?;
    let n = data.n();
    let l = laplacian(g).0;
    let a = drift_block(part, data, &l, k_p);
    let big_l = kron(&l, &Matrix::identity(n, n));
    let m = a.nrows();
    Ok(stack(&a, &big_l, &(-k_i * Matrix::identity(m, m))))
}

/// `M̃ = [[−𝐗𝐗ᵀ − k_P 𝐋, √k_I 𝐋^{1/2}], [−√k_I 𝐋^{1/2}, 0]]`.
pub fn assemble_m_tilde(
    g: &Graph,
    part: &Partition,
    data: &LiftedData,
    k_p: f64,
    k_i: f64,
) -> Result<Matrix> {
    check_problem(g, part, data)?;
    check_gains(k_p, k_i)?;
    let n = data.n();
    let l = laplacian(g).0;
    let a = drift_block(part, data, &l, k_p);
    // (L ⊗ I)^{1/2} = L^{1/2} ⊗ I.
    let root = kron(&psd_sqrt(&l)?, &Matrix::identity(n, n)) * k_i.sqrt();
    Ok(stack(&a, &root, &(-&root)))
}
