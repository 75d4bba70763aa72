//! The difference operator of an evolution family, its boundary-closed
//! finite sections, node operators, and the index identities tying them to
//! Fredholm pairs of dichotomy subspaces.
//!
//! For unit steps A_n = U(n, n-1) the difference operator acts on sequences
//! by (Dx)_n = x_n - A_n x_{n-1}. With exponential dichotomies on both
//! half-lines, D is Fredholm; its kernel dimension, cokernel dimension, and
//! index are recovered here three independent ways and cross-checked:
//! a finite section closed by dichotomy boundary conditions, the node
//! operator at (0, 0), and the Fredholm pair of the subspaces meeting at 0.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dichotomy::{DichotomyRecord, Side};
use crate::error::{Error, Result};
use crate::evolution::{discretize, EvolutionFamily, StepWindow};
use crate::numerics::{kernel_basis, min_singular_value, rank_with_gap, sorted_svd};
use crate::subspace::{fredholm_pair, PairReport, Subspace};

/// How a finite section of the difference operator treats the window ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Interior rows only. The section is always underdetermined by d rows,
    /// so its defect numbers say nothing about the operator; provided for
    /// comparison, rejected by the index computation.
    Raw,
    /// Interior rows plus dichotomy boundary conditions: the left end is
    /// confined to the backward-decaying bundle, the right end to the
    /// forward-decaying one.
    Closed,
}

/// Defect numbers of a linear operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FredholmNumbers {
    pub dim_kernel: usize,
    pub codim_image: usize,
    pub index: i64,
}

impl FredholmNumbers {
    pub(crate) fn of_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let sigma = crate::numerics::sorted_singular_values(m);
        let rank = rank_with_gap(&sigma, 1.0)?;
        Ok(Self {
            dim_kernel: m.ncols() - rank,
            codim_image: m.nrows() - rank,
            index: m.ncols() as i64 - m.nrows() as i64,
        })
    }
}

/// A node operator N(b, a) = (I - P⁺_b) U(b, a) restricted to the
/// backward-decaying bundle at a, expressed in orthonormal fiber bases:
/// rows live in ker P⁺_b, columns in ker P⁻_a.
#[derive(Debug, Clone)]
pub struct NodeOperator {
    pub matrix: DMatrix<f64>,
    pub from_time: i64,
    pub to_time: i64,
}

impl NodeOperator {
    pub fn numbers(&self) -> Result<FredholmNumbers> {
        FredholmNumbers::of_matrix(&self.matrix)
    }
}

/// Finite sections of the difference operator on [-window, window], carrying
/// the evolution steps and both half-line dichotomy records.
#[derive(Debug, Clone)]
pub struct TruncatedD {
    steps: StepWindow,
    minus: DichotomyRecord,
    plus: DichotomyRecord,
    window: i64,
}

impl TruncatedD {
    /// Discretize the family on [-window, window] and pair it with the two
    /// half-line records, which must cover the window and share the grid
    /// point 0.
    pub fn new(
        fam: &EvolutionFamily,
        minus: DichotomyRecord,
        plus: DichotomyRecord,
        window: i64,
    ) -> Result<Self> {
        if minus.side() != Side::Minus || plus.side() != Side::Plus {
            return Err(Error::Config(
                "records must be a minus-side and a plus-side dichotomy".into(),
            ));
        }
        if minus.ambient_dim() != plus.ambient_dim() || minus.ambient_dim() != fam.dim() {
            return Err(Error::AmbientMismatch {
                left: minus.ambient_dim(),
                right: plus.ambient_dim(),
            });
        }
        if window < 3 || minus.grid_start() > -window || plus.grid_end() < window {
            return Err(Error::OutsideWindow { n: window });
        }
        let steps = discretize(fam, -window, window)?;
        Ok(Self {
            steps,
            minus,
            plus,
            window,
        })
    }

    pub fn window(&self) -> i64 {
        self.window
    }

    pub fn dim(&self) -> usize {
        self.steps.dim()
    }

    pub fn steps(&self) -> &StepWindow {
        &self.steps
    }

    pub fn minus_record(&self) -> &DichotomyRecord {
        &self.minus
    }

    pub fn plus_record(&self) -> &DichotomyRecord {
        &self.plus
    }

    /// Assemble the finite section on [-half, half] as a dense matrix over
    /// the stacked unknowns (x_{-half}, …, x_{half}).
    ///
    /// Interior rows encode x_n - A_n x_{n-1} for -half < n ≤ half. Closed
    /// sections append orthonormal row-space bases of P⁻_{-half} (forcing
    /// the left end into the backward-decaying bundle) and of I - P⁺_{half}
    /// (forcing the right end into the forward-decaying one), which pins the
    /// column-minus-row count to rank P⁺ - rank P⁻.
    pub fn assemble(&self, boundary: Boundary, half: i64) -> Result<DMatrix<f64>> {
        if half < 1 || half > self.window {
            return Err(Error::OutsideWindow { n: half });
        }
        let d = self.dim();
        let points = (2 * half + 1) as usize;
        let interior_rows = (points - 1) * d;
        let col_of = |n: i64| ((n + half) as usize) * d;

        let (left_rows, right_rows) = match boundary {
            Boundary::Raw => (None, None),
            Boundary::Closed => {
                let p_minus = self.minus.projector_at(-half)?.matrix();
                let p_plus = self.plus.projector_at(half)?.matrix();
                let off_plus = DMatrix::identity(d, d) - p_plus;
                (Some(row_space_rows(p_minus)?), Some(row_space_rows(&off_plus)?))
            }
        };
        let extra = left_rows.as_ref().map_or(0, |m| m.nrows())
            + right_rows.as_ref().map_or(0, |m| m.nrows());

        let mut section = DMatrix::zeros(interior_rows + extra, points * d);
        let identity = DMatrix::identity(d, d);
        for (row_block, n) in (-half + 1..=half).enumerate() {
            let r0 = row_block * d;
            let step = self.steps.step(n - 1)?;
            section
                .view_mut((r0, col_of(n)), (d, d))
                .copy_from(&identity);
            section
                .view_mut((r0, col_of(n - 1)), (d, d))
                .copy_from(&(-step));
        }
        let mut at = interior_rows;
        if let Some(rows) = left_rows {
            section
                .view_mut((at, col_of(-half)), (rows.nrows(), d))
                .copy_from(&rows);
            at += rows.nrows();
        }
        if let Some(rows) = right_rows {
            section
                .view_mut((at, col_of(half)), (rows.nrows(), d))
                .copy_from(&rows);
        }
        Ok(section)
    }

    /// Defect numbers of the difference operator from the boundary-closed
    /// finite section, stability-checked by re-assembling on the window
    /// shrunk by two. Also returns the orthonormal kernel basis of the outer
    /// section (stacked fiber blocks).
    pub fn index_of_d(&self, boundary: Boundary) -> Result<(FredholmNumbers, DMatrix<f64>)> {
        if boundary == Boundary::Raw {
            return Err(Error::RawModeUnsupported);
        }
        let outer = self.assemble(Boundary::Closed, self.window)?;
        let outer_numbers = FredholmNumbers::of_matrix(&outer)?;
        let inner = self.assemble(Boundary::Closed, self.window - 2)?;
        let inner_numbers = FredholmNumbers::of_matrix(&inner)?;
        if outer_numbers != inner_numbers {
            return Err(Error::UnstableTruncation {
                outer: (outer_numbers.dim_kernel, outer_numbers.codim_image),
                inner: (inner_numbers.dim_kernel, inner_numbers.codim_image),
            });
        }
        Ok((outer_numbers, kernel_basis(&outer)?))
    }

    /// Dimensions of the kernel fibers X_n = {x_n : x ∈ ker D} read off the
    /// per-time blocks of a stacked kernel basis, on the interior
    /// |n| ≤ window - 2 where the blocks are well conditioned. For a
    /// faithful section every fiber has the full kernel dimension.
    pub fn kernel_fibers(&self, kernel: &DMatrix<f64>) -> Result<Vec<(i64, usize)>> {
        let d = self.dim();
        let points = (2 * self.window + 1) as usize;
        if kernel.nrows() != points * d {
            return Err(Error::DimensionMismatch {
                expected: points * d,
                got: kernel.nrows(),
            });
        }
        let mut fibers = Vec::new();
        for n in -(self.window - 2)..=(self.window - 2) {
            let r0 = ((n + self.window) as usize) * d;
            let block = kernel.view((r0, 0), (d, kernel.ncols())).into_owned();
            let svd = sorted_svd(&block);
            // Pure-relative cut: fiber blocks near the window ends decay
            // exponentially but keep their rank.
            let rank = rank_with_gap(&svd.sigma, 0.0)?;
            fibers.push((n, rank));
        }
        Ok(fibers)
    }

    /// The node operator N(b, a) for a ≤ 0 ≤ b, computed directly from the
    /// ambient product U(b, a).
    pub fn node_operator(&self, b: i64, a: i64) -> Result<NodeOperator> {
        if a > 0 || b < 0 || a < -self.window || b > self.window {
            return Err(Error::OutsideWindow { n: if a > 0 { a } else { b } });
        }
        let d = self.dim();
        let from = self.minus.projector_at(a)?.kernel()?;
        let to = self.plus.projector_at(b)?.kernel()?;
        let p_plus = self.plus.projector_at(b)?.matrix();
        let off_plus = DMatrix::identity(d, d) - p_plus;
        let u = self.steps.product(b, a)?;
        let matrix = to.basis().transpose() * off_plus * u * from.basis();
        Ok(NodeOperator {
            matrix,
            from_time: a,
            to_time: b,
        })
    }

    /// Invertible forward factor N(b, 0): the evolution restricted to the
    /// complement bundle of the plus record, composed step by step in fiber
    /// coordinates.
    pub fn node_forward_factor(&self, b: i64) -> Result<DMatrix<f64>> {
        if !(0..=self.window).contains(&b) {
            return Err(Error::OutsideWindow { n: b });
        }
        restricted_product(&self.steps, &self.plus, 0, b)
    }

    /// Invertible backward factor N(0, a): the evolution from a ≤ 0 up to 0
    /// restricted to the complement bundle of the minus record.
    pub fn node_backward_factor(&self, a: i64) -> Result<DMatrix<f64>> {
        if !(-self.window..=0).contains(&a) {
            return Err(Error::OutsideWindow { n: a });
        }
        restricted_product(&self.steps, &self.minus, a, 0)
    }

    /// Check the factorization N(b, a) = N(b, 0) N(0, 0) N(0, a) of the node
    /// operator through the fiber bundles, returning the relative defect and
    /// the smallest singular values of the two invertible factors.
    pub fn factorization_check(&self, b: i64, a: i64) -> Result<FactorizationCheck> {
        let direct = self.node_operator(b, a)?.matrix;
        let center = self.node_operator(0, 0)?.matrix;
        let forward = self.node_forward_factor(b)?;
        let backward = self.node_backward_factor(a)?;
        let composed = &forward * center * &backward;
        let scale = direct.norm().max(composed.norm()).max(1e-30);
        Ok(FactorizationCheck {
            defect: (&direct - &composed).norm() / scale,
            sigma_min_forward: singular_floor(&forward),
            sigma_min_backward: singular_floor(&backward),
        })
    }
}

/// Outcome of the node factorization crosscheck.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FactorizationCheck {
    /// Relative defect ‖N(b,a) - N(b,0)N(0,0)N(0,a)‖ / max norm.
    pub defect: f64,
    /// Smallest singular value of the factor, or `None` for an empty factor
    /// (the identity of the zero space, trivially invertible).
    pub sigma_min_forward: Option<f64>,
    pub sigma_min_backward: Option<f64>,
}

fn singular_floor(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        None
    } else {
        Some(min_singular_value(m))
    }
}

/// Orthonormal basis of the row space of `m`, as rows.
fn row_space_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = sorted_svd(m);
    let rank = rank_with_gap(&svd.sigma, 1.0)?;
    Ok(svd.vt.rows(0, rank).into_owned())
}

/// Product of unit steps restricted to the complement bundle of a record,
/// composed in orthonormal fiber coordinates from `lo` to `hi`.
fn restricted_product(
    steps: &StepWindow,
    record: &DichotomyRecord,
    lo: i64,
    hi: i64,
) -> Result<DMatrix<f64>> {
    let u_dim = record.ambient_dim() - record.rank();
    let mut acc = DMatrix::identity(u_dim, u_dim);
    for n in lo..hi {
        let from = record.projector_at(n)?.kernel()?;
        let to = record.projector_at(n + 1)?.kernel()?;
        acc = to.basis().transpose() * steps.step(n)? * from.basis() * acc;
    }
    Ok(acc)
}

/// Solution of the half-line equation (Dx)_n = y_n for n > base with the
/// base value supplied by the inverse itself.
#[derive(Debug, Clone)]
pub struct HalfLineSolve {
    pub base: i64,
    /// x_base, x_{base+1}, …, x_top.
    pub values: Vec<DVector<f64>>,
}

impl HalfLineSolve {
    pub fn value_at(&self, n: i64) -> Result<&DVector<f64>> {
        let idx = n - self.base;
        if idx < 0 || idx as usize >= self.values.len() {
            return Err(Error::OutsideWindow { n });
        }
        Ok(&self.values[idx as usize])
    }

    /// The base value x_base: it lies in the complement bundle and is the
    /// range-test vector of the half-line inverse.
    pub fn base_value(&self) -> &DVector<f64> {
        &self.values[0]
    }
}

/// Left inverse of the half-line difference operator based at `base`:
/// given y_n for base < n ≤ top (finitely supported data), produce x with
/// x_n - A_n x_{n-1} = y_n exactly for every such n.
///
/// The solution splits along the record: a forward recursion accumulates
/// the decaying component s_n = P_n y_n + A_n s_{n-1} from s_base = 0, a
/// backward recursion accumulates the complement component
/// w_n = (A_{n+1}|complement)^{-1} [(I - P_{n+1}) y_{n+1} + w_{n+1}] from
/// w_top = 0, and x_n = s_n - w_n. The base value x_base = -w_base is the
/// inverse's choice of complement data at the base.
pub fn left_inverse_dplus(
    steps: &StepWindow,
    record: &DichotomyRecord,
    base: i64,
    data: &[DVector<f64>],
) -> Result<HalfLineSolve> {
    let d = record.ambient_dim();
    let top = base + data.len() as i64;
    if record.side() != Side::Plus {
        return Err(Error::Config(
            "half-line inverse needs a plus-side record".into(),
        ));
    }
    if base < record.grid_start() || top > record.grid_end() {
        return Err(Error::OutsideWindow { n: top });
    }
    if data.iter().any(|y| y.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: data.first().map(|y| y.len()).unwrap_or(0),
        });
    }
    let n_pts = data.len() + 1;

    // Forward sweep for the decaying component.
    let mut s = vec![DVector::zeros(d); n_pts];
    for (k, y) in data.iter().enumerate() {
        let n = base + k as i64 + 1;
        let p = record.projector_at(n)?.matrix();
        let carried = steps.step(n - 1)? * &s[k];
        // `carried` already lies in the image fiber at `n` up to round-off;
        // reprojecting it keeps unstable-direction noise from compounding
        // exponentially across the window.
        s[k + 1] = p * (y + carried);
    }

    // A full-rank record has a trivial complement: the forward sweep is the
    // whole solution.
    if record.rank() == d {
        return Ok(HalfLineSolve { base, values: s });
    }

    // Backward sweep for the complement component, inverted per step in
    // fiber coordinates.
    let mut w = vec![DVector::zeros(d); n_pts];
    for k in (0..n_pts - 1).rev() {
        let n = base + k as i64;
        let y_next = &data[k];
        let p_next = record.projector_at(n + 1)?;
        let off_next = y_next - p_next.matrix() * y_next;
        let target = off_next + &w[k + 1];
        let from = record.projector_at(n)?.kernel()?;
        let to = p_next.kernel()?;
        let restricted = to.basis().transpose() * steps.step(n)? * from.basis();
        let coords = restricted
            .lu()
            .solve(&(to.basis().transpose() * target))
            .ok_or(Error::NoDichotomy)?;
        w[k] = from.basis() * coords;
    }

    let values = s
        .into_iter()
        .zip(w)
        .map(|(s_n, w_n)| s_n - w_n)
        .collect();
    Ok(HalfLineSolve { base, values })
}

/// Everything the index identities assert for one problem, computed from
/// independent directions and compared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremReport {
    /// Defect numbers of the difference operator (boundary-closed section,
    /// truncation-stability checked).
    pub difference: FredholmNumbers,
    /// Defect numbers of the node operator at (0, 0).
    pub node: FredholmNumbers,
    /// The Fredholm pair of the backward-decaying bundle and the
    /// forward-decaying bundle at 0.
    pub pair: PairReport,
    /// Kernel fiber dimensions on the interior grid.
    pub fibers: Vec<(i64, usize)>,
    /// Node factorization defect at the widest checked offsets.
    pub factorization: FactorizationCheck,
    /// True when all defect numbers agree and the fibers are constant.
    pub consistent: bool,
}

/// Run the full index crosscheck for a family whose half-line records are
/// already built.
pub fn dichotomy_theorem_verify(
    fam: &EvolutionFamily,
    minus: DichotomyRecord,
    plus: DichotomyRecord,
    window: i64,
) -> Result<TheoremReport> {
    let trunc = TruncatedD::new(fam, minus, plus, window)?;
    let (difference, kernel) = trunc.index_of_d(Boundary::Closed)?;
    let fibers = trunc.kernel_fibers(&kernel)?;
    let node = trunc.node_operator(0, 0)?.numbers()?;
    let backward_bundle = trunc.minus_record().projector_at(0)?.kernel()?;
    let forward_bundle = trunc.plus_record().projector_at(0)?.image()?;
    let pair = fredholm_pair(&backward_bundle, &forward_bundle)?;
    let offset = window.min(4);
    let factorization = trunc.factorization_check(offset, -offset)?;

    let numbers_agree = difference.index == node.index
        && node.index == pair.index
        && difference.dim_kernel == node.dim_kernel
        && node.dim_kernel == pair.alpha
        && difference.codim_image == node.codim_image
        && node.codim_image == pair.beta;
    let fibers_constant = fibers.iter().all(|&(_, dim)| dim == difference.dim_kernel);
    let factors_invertible = factorization.sigma_min_forward.is_none_or(|s| s > 1e-8)
        && factorization.sigma_min_backward.is_none_or(|s| s > 1e-8);
    let consistent =
        numbers_agree && fibers_constant && factorization.defect < 1e-6 && factors_invertible;

    Ok(TheoremReport {
        difference,
        node,
        pair,
        fibers,
        factorization,
        consistent,
    })
}

/// The subspaces of the Fredholm pair at 0 for a pair of records.
pub fn pair_at_zero(
    minus: &DichotomyRecord,
    plus: &DichotomyRecord,
) -> Result<(Subspace, Subspace)> {
    Ok((
        minus.projector_at(0)?.kernel()?,
        plus.projector_at(0)?.image()?,
    ))
}
