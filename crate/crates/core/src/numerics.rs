//! Shared numerical kernels: guarded rank decisions, sorted SVD, frame
//! utilities, fixed-step RK4, and Gauss–Legendre quadrature.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_REL_TOL: f64 = 1e-8;
/// Required ratio sigma_k / sigma_{k+1} at the rank cut.
pub const RANK_GAP_FACTOR: f64 = 1e3;
/// Idempotency tolerance for projectors: |P^2 - P| <= tol * (1 + |P|).
pub const PROJECTOR_TOL: f64 = 1e-10;
/// Orthonormality tolerance for subspace bases.
pub const ORTHONORMALITY_TOL: f64 = 1e-12;
/// Gap below which a generator counts as non-hyperbolic.
pub const HYPERBOLICITY_TOL: f64 = 1e-8;
/// Minimal distance of the spectrum from a Riesz contour.
pub const CONTOUR_GAP_TOL: f64 = 1e-8;
/// Default number of trapezoid nodes on a Riesz contour.
pub const DEFAULT_CONTOUR_NODES: usize = 64;
/// Minimal usable gap between finite-time Lyapunov exponents.
pub const LYAPUNOV_GAP_MIN: f64 = 0.05;
/// Default half-line window length for dichotomy grids.
pub const DEFAULT_WINDOW: i64 = 20;
/// Default fixed RK4 step for continuous coefficients.
pub const DEFAULT_RK4_STEP: f64 = 1e-2;
/// Term-size cutoff for truncated operator series.
pub const SERIES_TERM_TOL: f64 = 1e-14;
/// Default quadrature/integrator tolerance for the reduction maps.
pub const QUAD_TOL: f64 = 1e-6;
/// Default tolerance for dichotomy verification sweeps.
pub const DICHOTOMY_VERIFY_TOL: f64 = 1e-6;

/// Step of the coarse scan for eigenvalue zero crossings.
pub const FLOW_GRID_STEP: f64 = 1e-2;

/// Bisection tolerance for locating a crossing time.
pub const FLOW_BISECTION_TOL: f64 = 1e-8;

/// Decide a numerical rank from singular values sorted in descending order.
///
/// The cutoff is `RANK_REL_TOL * max(sigma_max, scale_floor)`; a unit floor
/// treats matrices assembled from orthonormal data as living at scale one, so
/// a numerically zero matrix cleanly gets rank zero. When both sides of the
/// cut carry singular values, the ratio across the cut must exceed
/// `RANK_GAP_FACTOR`, otherwise the decision is refused.
pub fn rank_with_gap(sigma: &[f64], scale_floor: f64) -> Result<usize> {
    let smax = sigma.first().copied().unwrap_or(0.0);
    let tau = RANK_REL_TOL * smax.max(scale_floor);
    let rank = sigma.iter().take_while(|s| **s >= tau).count();
    if rank > 0 && rank < sigma.len() {
        let hi = sigma[rank - 1];
        let lo = sigma[rank];
        if lo > 0.0 && hi / lo < RANK_GAP_FACTOR {
            return Err(Error::RankAmbiguous {
                sigma_hi: hi,
                sigma_lo: lo,
            });
        }
    }
    Ok(rank)
}

/// Thin SVD with singular values sorted in descending order.
pub struct SortedSvd {
    /// Left singular vectors, one column per singular value.
    pub u: DMatrix<f64>,
    /// Singular values, descending.
    pub sigma: Vec<f64>,
    /// Right singular vectors, one **row** per singular value (V^T).
    pub vt: DMatrix<f64>,
}

/// Compute a thin SVD and sort it by descending singular value.
pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return SortedSvd {
            u: DMatrix::zeros(rows, 0),
            sigma: Vec::new(),
            vt: DMatrix::zeros(0, cols),
        };
    }
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .unwrap_or_else(|| m.clone().svd(true, true));
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
    });
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt_sorted = DMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    SortedSvd {
        u: u_sorted,
        sigma,
        vt: vt_sorted,
    }
}

/// Singular values only, sorted descending — much cheaper than
/// [`sorted_svd`] on large matrices since no singular vectors are
/// accumulated.
pub fn sorted_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sigma: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    sigma
}

/// Spectral (operator 2-) norm; zero for empty matrices.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Smallest singular value; zero for empty matrices.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis for the column space of `m`, rank-guarded.
pub fn orthonormal_span(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    orthonormal_span_floor(m, 1.0)
}

/// As [`orthonormal_span`] with an explicit scale floor for the rank cut.
pub fn orthonormal_span_floor(m: &DMatrix<f64>, scale_floor: f64) -> Result<DMatrix<f64>> {
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let svd = sorted_svd(m);
    let rank = rank_with_gap(&svd.sigma, scale_floor)?;
    Ok(svd.u.columns(0, rank).into_owned())
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns of `basis`.
pub fn orthonormal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let d = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return DMatrix::identity(d, d);
    }
    if k >= d {
        return DMatrix::zeros(d, 0);
    }
    // QR of [B | I]: the first k columns of Q reproduce span(B), the rest
    // complete it to an orthonormal basis of the ambient space.
    let mut aug = DMatrix::zeros(d, k + d);
    aug.view_mut((0, 0), (d, k)).copy_from(basis);
    aug.view_mut((0, k), (d, d)).copy_from(&DMatrix::identity(d, d));
    let q = aug.qr().q();
    q.columns(k, d - k).into_owned()
}

/// Orthonormal basis of the kernel of `m` (right null space), rank-guarded.
pub fn kernel_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = m.ncols();
    if m.nrows() == 0 || cols == 0 {
        return Ok(DMatrix::identity(cols, cols));
    }
    let svd = sorted_svd(m);
    let rank = rank_with_gap(&svd.sigma, 1.0)?;
    // Right singular vectors past the rank cut; vt may be thin, so complete
    // with the complement of the row space when rows < cols.
    let stored = svd.vt.nrows();
    let from_vt = svd.vt.rows(rank, stored - rank).transpose();
    if stored == cols {
        return Ok(from_vt);
    }
    let row_space = svd.vt.rows(0, rank).transpose();
    let comp = orthonormal_complement(&orthonormal_span(&row_space)?);
    let mut out = DMatrix::zeros(cols, from_vt.ncols() + comp.ncols());
    out.view_mut((0, 0), (cols, from_vt.ncols())).copy_from(&from_vt);
    out.view_mut((0, from_vt.ncols()), (cols, comp.ncols()))
        .copy_from(&comp);
    orthonormal_span(&out)
}

/// Horizontal concatenation.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Projector matrix with image spanned by `image` and kernel spanned by
/// `kernel` (both orthonormal frames). Fails when the frames do not form a
/// direct sum of the ambient space.
pub fn oblique_projector_matrix(
    image: &DMatrix<f64>,
    kernel: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = image.nrows();
    if kernel.nrows() != d {
        return Err(Error::AmbientMismatch {
            left: d,
            right: kernel.nrows(),
        });
    }
    let s = image.ncols();
    if s + kernel.ncols() != d {
        return Err(Error::SplitFailed);
    }
    if s == 0 {
        return Ok(DMatrix::zeros(d, d));
    }
    if kernel.ncols() == 0 {
        return Ok(DMatrix::identity(d, d));
    }
    let z = hcat(&[image, kernel]);
    let sv = z.clone().singular_values();
    let (smax, smin) = sv
        .iter()
        .fold((0.0_f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if smin < 1e-10 * smax {
        return Err(Error::SplitFailed);
    }
    let z_inv = z.lu().try_inverse().ok_or(Error::SplitFailed)?;
    Ok(image * z_inv.rows(0, s))
}

/// One classical RK4 step for the matrix equation U' = A(t) U.
fn rk4_step(a: &dyn Fn(f64) -> DMatrix<f64>, t: f64, h: f64, u: &DMatrix<f64>) -> DMatrix<f64> {
    let k1 = a(t) * u;
    let k2 = a(t + 0.5 * h) * (u + &k1 * (0.5 * h));
    let k3 = a(t + 0.5 * h) * (u + &k2 * (0.5 * h));
    let k4 = a(t + h) * (u + &k3 * h);
    u + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0)
}

/// Propagator of U' = A(t) U from `tau` to `t >= tau` with a fixed nominal
/// step `h` (the actual step divides the interval evenly).
pub fn rk4_propagate(
    a: &dyn Fn(f64) -> DMatrix<f64>,
    tau: f64,
    t: f64,
    h: f64,
    dim: usize,
) -> DMatrix<f64> {
    let span = t - tau;
    if span <= 0.0 {
        return DMatrix::identity(dim, dim);
    }
    let n = (span / h - 1e-9).ceil().max(1.0) as usize;
    let step = span / n as f64;
    let mut u = DMatrix::identity(dim, dim);
    for k in 0..n {
        u = rk4_step(a, tau + k as f64 * step, step, &u);
    }
    u
}

/// Nodes and weights of 8-point Gauss–Legendre quadrature on [0, 1].
pub fn gauss_legendre_unit() -> [(f64, f64); 8] {
    const X: [f64; 4] = [
        0.1834346424956498,
        0.5255324099163290,
        0.7966664774136267,
        0.9602898564975363,
    ];
    const W: [f64; 4] = [
        0.3626837833783620,
        0.3137066458778873,
        0.2223810344533745,
        0.1012285362903763,
    ];
    let mut out = [(0.0, 0.0); 8];
    for i in 0..4 {
        out[2 * i] = (0.5 * (1.0 - X[i]), 0.5 * W[i]);
        out[2 * i + 1] = (0.5 * (1.0 + X[i]), 0.5 * W[i]);
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    out
}

/// Sup norm of a vector; zero when empty.
pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_gap_guard_fires_on_smooth_decay() {
        // Geometric singular values with ratio 10 have no 1e3 gap anywhere
        // near the 1e-8 cut.
        let sigma: Vec<f64> = (0..12).map(|k| 10f64.powi(-(k as i32))).collect();
        match rank_with_gap(&sigma, 1.0) {
            Err(Error::RankAmbiguous { .. }) => {}
            other => panic!("expected RankAmbiguous, got {other:?}"),
        }
    }

    #[test]
    fn rank_of_zero_matrix_is_zero() {
        assert_eq!(rank_with_gap(&[0.0, 0.0], 1.0).unwrap(), 0);
        assert_eq!(rank_with_gap(&[3e-12, 1e-13], 1.0).unwrap(), 0);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let b = DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let c = orthonormal_complement(&b);
        assert_eq!(c.shape(), (4, 2));
        assert!((c.transpose() * &c - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((b.transpose() * &c).norm() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // 8 points are exact through degree 15.
        let nodes = gauss_legendre_unit();
        for p in 0..=15 {
            let approx: f64 = nodes.iter().map(|(x, w)| w * x.powi(p)).sum();
            let exact = 1.0 / (p as f64 + 1.0);
            assert!(
                (approx - exact).abs() < 1e-14,
                "degree {p}: {approx} vs {exact}"
            );
        }
    }

    #[test]
    fn rk4_matches_scalar_exponential() {
        let a = |_: f64| DMatrix::from_element(1, 1, -1.0);
        let u = rk4_propagate(&a, 0.0, 2.0, 1e-2, 1);
        assert!((u[(0, 0)] - (-2.0f64).exp()).abs() < 1e-9);
    }
}
