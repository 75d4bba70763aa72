//! Subspaces, projections, Fredholm pairs, and spectral projections.
//!
//! Everything here returns exact integers (dimensions, codimensions,
//! indices) protected by guarded rank decisions, or refuses.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    self, hcat, kernel_basis, oblique_projector_matrix, op_norm, orthonormal_complement,
    orthonormal_span, rank_with_gap, sorted_svd, CONTOUR_GAP_TOL, DEFAULT_CONTOUR_NODES,
    HYPERBOLICITY_TOL, ORTHONORMALITY_TOL, PROJECTOR_TOL,
};

/// A linear subspace of R^d stored as an orthonormal column frame.
#[derive(Debug, Clone)]
pub struct Subspace {
    ambient: usize,
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wrap an orthonormal frame; the columns must satisfy B^T B = I to
    /// within the module's orthonormality tolerance.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let k = basis.ncols();
        let defect = (basis.transpose() * &basis - DMatrix::identity(k, k)).norm();
        if defect > ORTHONORMALITY_TOL * (1.0 + k as f64) {
            return Err(Error::Config(format!(
                "frame is not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(Self {
            ambient: basis.nrows(),
            basis,
        })
    }

    /// The span of an arbitrary set of column vectors (see [`orthonormalize`]).
    pub fn span(vectors: &DMatrix<f64>) -> Result<Self> {
        orthonormalize(vectors)
    }

    /// The zero subspace of R^d.
    pub fn zero(ambient: usize) -> Self {
        Self {
            ambient,
            basis: DMatrix::zeros(ambient, 0),
        }
    }

    /// The full space R^d.
    pub fn full(ambient: usize) -> Self {
        Self {
            ambient,
            basis: DMatrix::identity(ambient, ambient),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthonormal frame, one column per basis vector.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Orthogonal complement.
    pub fn complement(&self) -> Subspace {
        Subspace {
            ambient: self.ambient,
            basis: orthonormal_complement(&self.basis),
        }
    }

    /// Largest principal angle (radians) between two subspaces of equal
    /// dimension; `None` when dimensions differ.
    pub fn max_principal_angle(&self, other: &Subspace) -> Option<f64> {
        if self.dim() != other.dim() {
            return None;
        }
        if self.dim() == 0 {
            return Some(0.0);
        }
        let overlap = self.basis.transpose() * other.basis();
        let sv = sorted_svd(&overlap);
        let smallest = sv.sigma.last().copied().unwrap_or(1.0);
        Some(smallest.clamp(-1.0, 1.0).acos())
    }
}

/// Orthonormalize the columns of `vectors` into a subspace, dropping
/// dependent directions. Refuses when the dependence decision is ambiguous.
pub fn orthonormalize(vectors: &DMatrix<f64>) -> Result<Subspace> {
    let basis = orthonormal_span(vectors)?;
    Ok(Subspace {
        ambient: vectors.nrows(),
        basis,
    })
}

/// An idempotent matrix together with its guarded rank.
#[derive(Debug, Clone)]
pub struct Projector {
    matrix: DMatrix<f64>,
    rank: usize,
}

impl Projector {
    /// Validate idempotency and decide the rank. |P^2 - P| must not exceed
    /// `PROJECTOR_TOL * (1 + |P|)` in operator norm.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let residual = op_norm(&(&matrix * &matrix - &matrix));
        let scale = 1.0 + op_norm(&matrix);
        if residual > PROJECTOR_TOL * scale {
            return Err(Error::ProjectorDefect { residual });
        }
        let svd = sorted_svd(&matrix);
        let rank = rank_with_gap(&svd.sigma, 1.0)?;
        Ok(Self { matrix, rank })
    }

    /// Oblique projector with the given image and kernel frames.
    pub fn from_split(image: &Subspace, kernel: &Subspace) -> Result<Self> {
        let m = oblique_projector_matrix(image.basis(), kernel.basis())?;
        Projector::new(m)
    }

    /// Orthogonal projector onto a subspace.
    pub fn orthogonal(onto: &Subspace) -> Result<Self> {
        let b = onto.basis();
        Projector::new(b * b.transpose())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ambient_dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The complementary projector I - P.
    pub fn complementary(&self) -> Result<Projector> {
        let d = self.matrix.nrows();
        Projector::new(DMatrix::identity(d, d) - &self.matrix)
    }

    /// Orthonormal basis of the image.
    pub fn image(&self) -> Result<Subspace> {
        let basis = orthonormal_span(&self.matrix)?;
        if basis.ncols() != self.rank {
            return Err(Error::SplitFailed);
        }
        Subspace::from_orthonormal(basis)
    }

    /// Orthonormal basis of the kernel.
    pub fn kernel(&self) -> Result<Subspace> {
        let basis = kernel_basis(&self.matrix)?;
        if basis.ncols() != self.ambient_dim() - self.rank {
            return Err(Error::SplitFailed);
        }
        Subspace::from_orthonormal(basis)
    }
}

/// Defect numbers of a Fredholm pair of subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairReport {
    /// dim (W ∩ V)
    pub alpha: usize,
    /// codim (W + V)
    pub beta: usize,
    /// alpha - beta
    pub index: i64,
}

/// Defect numbers of the pair (W, V): alpha = dim(W ∩ V),
/// beta = codim(W + V), index = alpha - beta. In ambient dimension n the
/// index always equals dim W + dim V - n.
pub fn fredholm_pair(w: &Subspace, v: &Subspace) -> Result<PairReport> {
    if w.ambient_dim() != v.ambient_dim() {
        return Err(Error::AmbientMismatch {
            left: w.ambient_dim(),
            right: v.ambient_dim(),
        });
    }
    let n = w.ambient_dim();
    let stacked = hcat(&[w.basis(), v.basis()]);
    let sum_dim = if stacked.ncols() == 0 {
        0
    } else {
        let svd = sorted_svd(&stacked);
        rank_with_gap(&svd.sigma, 1.0)?
    };
    let alpha = w.dim() + v.dim() - sum_dim;
    let beta = n - sum_dim;
    Ok(PairReport {
        alpha,
        beta,
        index: alpha as i64 - beta as i64,
    })
}

/// Relative dimension of W with respect to V:
/// dim(W ∩ V^⊥) - dim(W^⊥ ∩ V). In finite dimension this always equals
/// dim W - dim V, and coincides with the index of the pair (W, V^⊥).
pub fn relative_dimension(w: &Subspace, v: &Subspace) -> Result<i64> {
    if w.ambient_dim() != v.ambient_dim() {
        return Err(Error::AmbientMismatch {
            left: w.ambient_dim(),
            right: v.ambient_dim(),
        });
    }
    let first = fredholm_pair(w, &v.complement())?.alpha as i64;
    let second = fredholm_pair(&w.complement(), v)?.alpha as i64;
    Ok(first - second)
}

fn spectrum(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().cloned().collect()
}

/// Riesz spectral projection of `m` onto the part of the spectrum inside the
/// circle |λ| = radius, computed by trapezoid quadrature of the resolvent:
///     P = (2πi)^{-1} ∮ (λ - M)^{-1} dλ ≈ Q^{-1} Σ_j λ_j (λ_j - M)^{-1}.
///
/// The trapezoid rule on a circle converges geometrically in the node count;
/// the node count is escalated automatically when eigenvalues sit close to
/// the contour (relative to the requested radius).
pub fn riesz_projection(m: &DMatrix<f64>, radius: f64, nodes: usize) -> Result<Projector> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if radius <= 0.0 {
        return Err(Error::Config("contour radius must be positive".into()));
    }
    let d = m.nrows();
    if d == 0 {
        return Ok(Projector {
            matrix: DMatrix::zeros(0, 0),
            rank: 0,
        });
    }
    let eigs = spectrum(m);
    let gap = eigs
        .iter()
        .map(|l| (l.norm() - radius).abs())
        .fold(f64::INFINITY, f64::min);
    if gap < CONTOUR_GAP_TOL * radius.max(1.0) {
        return Err(Error::SpectrumOnContour { gap });
    }
    // Quadrature error decays like q^Q with q the worst eigenvalue radius
    // ratio; pick Q so the error lands well below the projector tolerance.
    let q_ratio = eigs
        .iter()
        .map(|l| {
            let r = l.norm();
            if r < radius {
                r / radius
            } else {
                radius / r
            }
        })
        .fold(0.0_f64, f64::max)
        .min(1.0 - 1e-12);
    let needed = ((-30.0 * std::f64::consts::LN_10 / q_ratio.ln()).ceil() as usize).max(8);
    let q_count = nodes.max(needed).min(4096);

    let mc = m.map(|x| Complex::new(x, 0.0));
    let identity = DMatrix::<Complex<f64>>::identity(d, d);
    let mut acc = DMatrix::<Complex<f64>>::zeros(d, d);
    for j in 0..q_count {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / q_count as f64;
        let lambda = Complex::from_polar(radius, theta);
        let shifted = &identity * lambda - &mc;
        let resolvent = shifted
            .lu()
            .try_inverse()
            .ok_or(Error::SpectrumOnContour { gap })?;
        acc += resolvent * lambda;
    }
    let scale = 1.0 / q_count as f64;
    let p = DMatrix::from_fn(d, d, |r, c| acc[(r, c)].re * scale);
    Projector::new(p)
}

/// Distance of the spectrum of exp(A) from the unit circle together with a
/// hyperbolicity verdict: gap = min_i | e^{Re λ_i(A)} - 1 |.
pub fn hyperbolicity_gap(a: &DMatrix<f64>) -> Result<(f64, bool)> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Ok((f64::INFINITY, true));
    }
    let gap = spectrum(a)
        .iter()
        .map(|l| (l.re.exp() - 1.0).abs())
        .fold(f64::INFINITY, f64::min);
    Ok((gap, gap > HYPERBOLICITY_TOL))
}

/// Spectral projection of a hyperbolic generator A onto its stable part
/// (eigenvalues with Re λ < 0), computed as the Riesz projection of exp(A)
/// with respect to the unit circle.
pub fn stable_projector(a: &DMatrix<f64>) -> Result<Projector> {
    let (gap, hyperbolic) = hyperbolicity_gap(a)?;
    if !hyperbolic {
        return Err(Error::NotHyperbolic { gap });
    }
    riesz_projection(&a.exp(), 1.0, DEFAULT_CONTOUR_NODES)
}

/// Convenience: orthonormal image/kernel of a projector as plain frames.
pub fn projector_frames(p: &Projector) -> Result<(Subspace, Subspace)> {
    Ok((p.image()?, p.kernel()?))
}

pub use numerics::DEFAULT_CONTOUR_NODES as CONTOUR_NODES_DEFAULT;
