//! Spectral flow of selfadjoint coefficient paths, perturbation-invariance
//! experiments, and the piecewise-constant analysis pipeline.
//!
//! The flow of a path t ↦ A(t) with invertible symmetric limits is defined
//! from the endpoints: the number of positive eigenvalues lost between −∞
//! and +∞. Eigenvalue tracking across the window provides an independent
//! diagnostic; with the convention used here an *upward* zero crossing
//! contributes −1, so both computations must produce the same integer.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dichotomy::{halfline_dichotomy, Method, Side};
use crate::error::{Error, Result};
use crate::evolution::{CoeffFn, EvolutionFamily, FamilyKind};
use crate::fredholm::{
    dichotomy_theorem_verify, Boundary, FredholmNumbers, TheoremReport, TruncatedD,
};
use crate::numerics::{
    op_norm, rank_with_gap, sorted_svd, FLOW_BISECTION_TOL, FLOW_GRID_STEP, HYPERBOLICITY_TOL,
};
use crate::subspace::{
    fredholm_pair, hyperbolicity_gap, relative_dimension, stable_projector, PairReport, Projector,
};

/// Half-length of the time interval scanned for crossings by default.
pub const DEFAULT_HORIZON: f64 = 20.0;

/// Relative symmetry tolerance for coefficient probes.
const SYMMETRY_TOL: f64 = 1e-12;
/// A perturbation must be below this norm at the window edge.
const VANISHING_TOL: f64 = 1e-6;
/// Relative agreement required between A(±horizon) and the limits.
const HORIZON_TOL: f64 = 1e-6;

/// A coefficient path t ↦ A(t) of symmetric matrices with invertible
/// symmetric limits, validated at construction.
#[derive(Clone)]
pub struct SelfadjointPath {
    family: EvolutionFamily,
    horizon: f64,
    a_minus: DMatrix<f64>,
    a_plus: DMatrix<f64>,
}

impl std::fmt::Debug for SelfadjointPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SelfadjointPath")
            .field("dim", &self.family.dim())
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SelfadjointPath {
    /// Validate a family as a selfadjoint path scanned on [-horizon, horizon].
    ///
    /// The family must carry a coefficient rule; symmetry is probed on a
    /// sample of times, the limit matrices must exist, be symmetric, and be
    /// reached at the horizon up to a small relative defect.
    pub fn new(family: EvolutionFamily, horizon: f64) -> Result<Self> {
        if family.coefficient(0.0).is_none() {
            return Err(Error::Config(
                "selfadjoint path requires a coefficient rule".into(),
            ));
        }
        if !(horizon > 1.0) {
            return Err(Error::Config(format!(
                "scan horizon must exceed 1, got {horizon}"
            )));
        }

        let fractions = [0.0, 0.0337, -0.0337, 0.17, -0.17, 0.5, -0.5, 1.0, -1.0];
        for frac in fractions {
            let t = frac * horizon;
            let a = family.coefficient(t).expect("rule checked above");
            symmetry_defect(&a)?;
        }

        let a_minus = family.limit_matrix(false)?;
        let a_plus = family.limit_matrix(true)?;
        symmetry_defect(&a_minus)?;
        symmetry_defect(&a_plus)?;

        for (t, limit) in [(-horizon, &a_minus), (horizon, &a_plus)] {
            let a = family.coefficient(t).expect("rule checked above");
            let defect = op_norm(&(a - limit));
            if defect > HORIZON_TOL * (1.0 + op_norm(limit)) {
                return Err(Error::NotAsymptoticallyConstant);
            }
        }

        Ok(Self {
            family,
            horizon,
            a_minus,
            a_plus,
        })
    }

    /// [`SelfadjointPath::new`] with the default scan horizon.
    pub fn with_default_horizon(family: EvolutionFamily) -> Result<Self> {
        Self::new(family, DEFAULT_HORIZON)
    }

    pub fn family(&self) -> &EvolutionFamily {
        &self.family
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The validated limit matrix on one side.
    pub fn limit(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::Minus => &self.a_minus,
            Side::Plus => &self.a_plus,
        }
    }

    /// The same path with B(t) added to the coefficient, revalidated.
    ///
    /// The perturbation must keep the path symmetric and must vanish at the
    /// horizon; both are re-checked by the constructor.
    pub fn perturbed(&self, b: CoeffFn) -> Result<SelfadjointPath> {
        let family = add_perturbation(&self.family, b)?;
        SelfadjointPath::new(family, self.horizon)
    }
}

/// One detected eigenvalue zero crossing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Crossing {
    /// Crossing time, bisected to within `FLOW_BISECTION_TOL`.
    pub time: f64,
    /// Which sorted eigenvalue curve crossed (0 = lowest).
    pub curve: usize,
    /// True when the eigenvalue moves from negative to positive.
    pub upward: bool,
}

/// Spectral flow of a selfadjoint path together with the crossing
/// diagnostic and a decimated eigenvalue trace for plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowReport {
    /// Positive-eigenvalue counts of the limits: (minus side, plus side).
    pub endpoint_unstable: (usize, usize),
    /// The flow: unstable dimension at −∞ minus unstable dimension at +∞.
    pub flow: i64,
    /// Zero crossings found by grid scan and bisection, in time order.
    /// An upward crossing contributes −1 to the flow, a downward one +1.
    pub crossings: Vec<Crossing>,
    /// Every fifth grid sample of the sorted eigenvalues, as (t, values).
    pub eigenvalue_path: Vec<(f64, Vec<f64>)>,
}

/// Compute the spectral flow of a path with hyperbolic endpoints.
///
/// The flow itself comes from the endpoint eigenvalue counts. The grid
/// scan (step `FLOW_GRID_STEP`, offset half a step so that crossings of
/// odd coefficients never sit on a node) locates every simple crossing and
/// the signed crossing count must reproduce the endpoint value; a mismatch
/// is reported as an estimation failure rather than silently preferring
/// one of the two numbers.
pub fn spectral_flow(path: &SelfadjointPath) -> Result<FlowReport> {
    let n_minus = endpoint_positive_count(path.limit(Side::Minus))?;
    let n_plus = endpoint_positive_count(path.limit(Side::Plus))?;
    let flow = n_minus as i64 - n_plus as i64;

    let horizon = path.horizon();
    let step = FLOW_GRID_STEP;
    let count = (2.0 * horizon / step).round() as usize;
    let node = |k: usize| -horizon + (k as f64 + 0.5) * step;

    let eigs_at = |t: f64| -> Vec<f64> {
        let a = path
            .family()
            .coefficient(t)
            .expect("path carries a coefficient rule");
        sorted_symmetric_eigenvalues(&a)
    };

    let mut crossings = Vec::new();
    let mut eigenvalue_path = Vec::new();
    let mut prev_t = node(0);
    let mut prev = eigs_at(prev_t);
    eigenvalue_path.push((prev_t, prev.clone()));

    for k in 1..count {
        let t = node(k);
        let cur = eigs_at(t);
        for (i, (&before, &after)) in prev.iter().zip(cur.iter()).enumerate() {
            if before * after < 0.0 {
                let time = bisect_crossing(&eigs_at, i, prev_t, t, before);
                crossings.push(Crossing {
                    time,
                    curve: i,
                    upward: after > 0.0,
                });
            }
        }
        if k % 5 == 0 {
            eigenvalue_path.push((t, cur.clone()));
        }
        prev_t = t;
        prev = cur;
    }

    crossings.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite times"));
    let crossing_sum: i64 = crossings
        .iter()
        .map(|c| if c.upward { -1 } else { 1 })
        .sum();
    if crossing_sum != flow {
        return Err(Error::EstimateFailed);
    }

    Ok(FlowReport {
        endpoint_unstable: (n_minus, n_plus),
        flow,
        crossings,
        eigenvalue_path,
    })
}

/// Index comparison between a base family and a compact vanishing
/// perturbation of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// Defect numbers of the truncated difference operator for the base.
    pub base: FredholmNumbers,
    /// Defect numbers for the perturbed family at identical settings.
    pub perturbed: FredholmNumbers,
    /// Largest perturbation norm sampled inside the window.
    pub perturbation_sup: f64,
    /// True when the two indices agree exactly.
    pub invariant: bool,
}

/// Compare the index of the difference operator before and after adding a
/// perturbation B(t) that vanishes at the window edge and has low rank.
///
/// Kernel and cokernel dimensions are allowed to move; only the index is
/// asserted stable. The perturbation is rejected when its norm at ±window
/// exceeds the vanishing threshold or when its rank at sample times
/// exceeds `rank_cap`.
pub fn perturbation_invariance(
    base: &EvolutionFamily,
    b: CoeffFn,
    rank_cap: usize,
    window: i64,
) -> Result<InvarianceReport> {
    let d = base.dim();
    let probe = b(0.0);
    if probe.nrows() != d || probe.ncols() != d {
        return Err(Error::AmbientMismatch {
            left: d,
            right: probe.nrows().max(probe.ncols()),
        });
    }

    let horizon = window as f64;
    let edge_norm = [-horizon, horizon, -2.0 * horizon, 2.0 * horizon]
        .iter()
        .map(|&t| op_norm(&b(t)))
        .fold(0.0, f64::max);
    if edge_norm >= VANISHING_TOL {
        return Err(Error::PerturbationNotVanishing { norm: edge_norm });
    }

    let mut max_rank = 0;
    for t in [0.0, 0.5, -0.5, 2.0, -2.0] {
        let sigma = sorted_svd(&b(t)).sigma;
        max_rank = max_rank.max(rank_with_gap(&sigma, 1.0)?);
    }
    if max_rank > rank_cap {
        return Err(Error::PerturbationNotCompact {
            rank: max_rank,
            cap: rank_cap,
        });
    }

    let mut perturbation_sup: f64 = 0.0;
    let mut t = -horizon;
    while t <= horizon {
        perturbation_sup = perturbation_sup.max(op_norm(&b(t)));
        t += 0.5;
    }

    let perturbed_family = add_perturbation(base, b)?;
    let base_numbers = difference_numbers(base, window)?;
    let perturbed_numbers = difference_numbers(&perturbed_family, window)?;
    let invariant = base_numbers.index == perturbed_numbers.index;

    Ok(InvarianceReport {
        base: base_numbers,
        perturbed: perturbed_numbers,
        perturbation_sup,
        invariant,
    })
}

/// Consolidated index identities for a piecewise-constant problem, with the
/// selfadjoint extras when both generators are symmetric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseReport {
    /// Full crosscheck of difference operator, node, pair, and kernel fibers.
    pub theorem: TheoremReport,
    /// Endpoint spectral flow, present when both generators are symmetric.
    pub flow: Option<i64>,
    /// Relative dimension of the unstable spaces, present in the symmetric
    /// case: dim(ker P₋ ∩ Im P₊) − dim(Im P₋ ∩ ker P₊) for the orthogonal
    /// spectral projectors of the two generators.
    pub relative_dimension: Option<i64>,
    /// True when every computed integer agrees.
    pub consistent: bool,
}

/// Run the full pipeline for u′ = A(t)u with A(t) = A₋ for t < 0 and
/// A(t) = A₊ + B(t) for t ≥ 0 (B optional, added on both sides).
///
/// Both generators must be hyperbolic. When both are symmetric the
/// endpoint spectral flow and the relative dimension of the unstable
/// eigenspaces are computed as well and compared against the index.
pub fn piecewise_pipeline(
    a_minus: &DMatrix<f64>,
    a_plus: &DMatrix<f64>,
    perturbation: Option<CoeffFn>,
    window: i64,
) -> Result<PiecewiseReport> {
    if a_minus.nrows() != a_plus.nrows() || a_minus.ncols() != a_plus.ncols() {
        return Err(Error::AmbientMismatch {
            left: a_minus.nrows(),
            right: a_plus.nrows(),
        });
    }
    for (side, a) in [("minus", a_minus), ("plus", a_plus)] {
        let (gap, hyperbolic) = hyperbolicity_gap(a)?;
        if !hyperbolic {
            return Err(Error::HyperbolicityRequired { side, gap });
        }
    }

    let family = match perturbation {
        Some(b) => EvolutionFamily::piecewise_perturbed(a_minus.clone(), a_plus.clone(), b),
        None => EvolutionFamily::piecewise_constant(a_minus.clone(), a_plus.clone()),
    };
    let minus = halfline_dichotomy(&family, Side::Minus, &Method::SpectralLimit, window)?;
    let plus = halfline_dichotomy(&family, Side::Plus, &Method::SpectralLimit, window)?;
    let theorem = dichotomy_theorem_verify(&family, minus, plus, window)?;

    let symmetric =
        symmetry_defect(a_minus).is_ok() && symmetry_defect(a_plus).is_ok();
    let (flow, rel_dim) = if symmetric {
        let n_minus = endpoint_positive_count(a_minus)?;
        let n_plus = endpoint_positive_count(a_plus)?;
        let unstable_minus = stable_projector(a_minus)?.kernel()?;
        let unstable_plus = stable_projector(a_plus)?.kernel()?;
        let rel = relative_dimension(&unstable_minus, &unstable_plus)?;
        (Some(n_minus as i64 - n_plus as i64), Some(rel))
    } else {
        (None, None)
    };

    let index = theorem.difference.index;
    let consistent = theorem.consistent
        && flow.map_or(true, |f| f == index)
        && rel_dim.map_or(true, |r| r == index);

    Ok(PiecewiseReport {
        theorem,
        flow,
        relative_dimension: rel_dim,
        consistent,
    })
}

/// Commensurability diagnostic for a pair of projectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommensurabilityReport {
    /// Singular values of P₁ − P₂ in descending order. A long near-zero
    /// tail marks the truncation of a commensurable pair; a flat profile
    /// bounded away from zero marks a non-commensurable one.
    pub profile: Vec<f64>,
    /// Whether the node compression is Fredholm — always true in finite
    /// dimension, reported for parity with the operator-level statement.
    pub node_fredholm: bool,
    /// Defect numbers of the compression of P₂ mapping Im P₁ → Im P₂.
    pub node: FredholmNumbers,
    /// Defect numbers of the pair (Im P₁, ker P₂).
    pub pair: PairReport,
    /// Node and pair triples agree.
    pub consistent: bool,
}

impl CommensurabilityReport {
    /// Desk-scale commensurability heuristic: at least half of the singular
    /// values of P₁ − P₂ sit below `tol`. A genuinely commensurable pair
    /// truncated to finite dimension leaves a long near-zero tail; a
    /// non-commensurable one keeps the whole profile bounded away from zero.
    pub fn commensurable_at(&self, tol: f64) -> bool {
        if self.profile.is_empty() {
            return true;
        }
        let near_zero = self.profile.iter().filter(|s| **s < tol).count();
        2 * near_zero >= self.profile.len()
    }
}

/// Report how far two projectors are from commensurable and crosscheck the
/// node compression against the subspace pair (Im P₁, ker P₂).
pub fn commensurability_check(p1: &Projector, p2: &Projector) -> Result<CommensurabilityReport> {
    if p1.ambient_dim() != p2.ambient_dim() {
        return Err(Error::AmbientMismatch {
            left: p1.ambient_dim(),
            right: p2.ambient_dim(),
        });
    }

    let profile = sorted_svd(&(p1.matrix() - p2.matrix())).sigma;

    let domain = p1.image()?;
    let complement = p2.kernel()?;
    let pair = fredholm_pair(&domain, &complement)?;

    let codomain = p2.image()?;
    let compression = codomain.basis().transpose() * p2.matrix() * domain.basis();
    let node = FredholmNumbers::of_matrix(&compression)?;

    let consistent = node.dim_kernel == pair.alpha
        && node.codim_image == pair.beta
        && node.index == pair.index;

    Ok(CommensurabilityReport {
        profile,
        node_fredholm: true,
        node,
        pair,
        consistent,
    })
}

/// Reject matrices whose symmetry defect exceeds the relative tolerance.
fn symmetry_defect(a: &DMatrix<f64>) -> Result<()> {
    let defect = op_norm(&(a - a.transpose()));
    if defect > SYMMETRY_TOL * (1.0 + op_norm(a)) {
        return Err(Error::NonSymmetric { defect });
    }
    Ok(())
}

/// Eigenvalues of the symmetrized matrix, ascending.
fn sorted_symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eigen = SymmetricEigen::new(sym);
    let mut values: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    values
}

/// Count positive eigenvalues of a symmetric limit, rejecting eigenvalues
/// too close to zero for the count to be trustworthy.
fn endpoint_positive_count(limit: &DMatrix<f64>) -> Result<usize> {
    let values = sorted_symmetric_eigenvalues(limit);
    if let Some(&nearest) = values
        .iter()
        .filter(|v| v.abs() <= HYPERBOLICITY_TOL)
        .next()
    {
        return Err(Error::NonHyperbolicEndpoint {
            eigenvalue: nearest,
        });
    }
    Ok(values.iter().filter(|v| **v > 0.0).count())
}

/// Bisect one sorted eigenvalue curve to its zero inside [lo, hi].
fn bisect_crossing(
    eigs_at: &impl Fn(f64) -> Vec<f64>,
    curve: usize,
    mut lo: f64,
    mut hi: f64,
    value_lo: f64,
) -> f64 {
    let mut positive_lo = value_lo > 0.0;
    while hi - lo > FLOW_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let value = eigs_at(mid)[curve];
        if value == 0.0 {
            return mid;
        }
        if (value > 0.0) == positive_lo {
            lo = mid;
            positive_lo = value > 0.0;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A family with B(t) added to its coefficient rule.
fn add_perturbation(base: &EvolutionFamily, b: CoeffFn) -> Result<EvolutionFamily> {
    let d = base.dim();
    match base.kind() {
        FamilyKind::Continuous {
            coeff,
            step,
            limits,
        } => {
            let coeff = coeff.clone();
            let rule: CoeffFn = Arc::new(move |t| coeff(t) + b(t));
            let family = match limits {
                Some((a_minus, a_plus)) => EvolutionFamily::continuous_with_limits(
                    d,
                    rule,
                    a_minus.clone(),
                    a_plus.clone(),
                ),
                None => EvolutionFamily::continuous(d, rule),
            };
            Ok(family.with_step(*step))
        }
        FamilyKind::PiecewiseConstant {
            a_minus,
            a_plus,
            perturbation,
            step,
            ..
        } => {
            let combined: CoeffFn = match perturbation {
                Some(existing) => {
                    let existing = existing.clone();
                    Arc::new(move |t| existing(t) + b(t))
                }
                None => b,
            };
            let family =
                EvolutionFamily::piecewise_perturbed(a_minus.clone(), a_plus.clone(), combined);
            Ok(family.with_step(*step))
        }
        FamilyKind::Discrete(_) => Err(Error::Config(
            "perturbing a family requires a coefficient rule".into(),
        )),
    }
}

/// Build a seeded perturbation rule B(t) = amplitude · e^{-t²/4} · U Vᵀ with
/// U, V random orthonormal dim×rank frames, so every nonzero singular value
/// of B(t) equals amplitude · e^{-t²/4} exactly. The Gaussian envelope is
/// far below the vanishing threshold at any practical window edge, and the
/// rank is exactly `min(rank, dim)` wherever the envelope is nonzero.
pub fn random_vanishing_perturbation(
    dim: usize,
    rank: usize,
    amplitude: f64,
    seed: u64,
) -> CoeffFn {
    use rand::{Rng, SeedableRng};
    let rank = rank.clamp(1, dim);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw_u = DMatrix::from_fn(dim, rank, |_, _| rng.gen_range(-1.0..1.0));
    let raw_v = DMatrix::from_fn(dim, rank, |_, _| rng.gen_range(-1.0..1.0));
    let core = raw_u.qr().q() * raw_v.qr().q().transpose() * amplitude;
    Arc::new(move |t: f64| &core * (-(t * t) / 4.0).exp())
}

/// Defect numbers of the boundary-closed truncated difference operator,
/// built from freshly computed half-line dichotomies.
fn difference_numbers(family: &EvolutionFamily, window: i64) -> Result<FredholmNumbers> {
    let minus = halfline_dichotomy(family, Side::Minus, &Method::SpectralLimit, window)?;
    let plus = halfline_dichotomy(family, Side::Plus, &Method::SpectralLimit, window)?;
    let truncated = TruncatedD::new(family, minus, plus, window)?;
    let (numbers, _) = truncated.index_of_d(Boundary::Closed)?;
    Ok(numbers)
}
