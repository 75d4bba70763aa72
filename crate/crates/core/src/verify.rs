//! Named invariant checks spanning every module, runnable as a filterable
//! suite. Each check either passes with a one-line detail or fails with a
//! reason; the runner executes checks on a small worker pool and assembles
//! the outcomes in definition order so the report is deterministic.

use std::panic::catch_unwind;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use nalgebra::{dmatrix, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analyze::{run as run_analysis, AnalysisTask, RunOptions, Verdict};
use crate::dichotomy::{
    dichotomy_constants, extend_to_continuous, halfline_dichotomy, verify_dichotomy,
    DichotomyRecord, Method, Side,
};
use crate::error::{Error, Result};
use crate::evolution::{discretize, long_product, EvolutionFamily};
use crate::flow::{
    perturbation_invariance, piecewise_pipeline, random_vanishing_perturbation, spectral_flow,
    SelfadjointPath,
};
use crate::fredholm::{dichotomy_theorem_verify, left_inverse_dplus, Boundary, TruncatedD};
use crate::numerics::{op_norm, DICHOTOMY_VERIFY_TOL};
use crate::problems::{registry, Expectation, Problem, ProblemKind};
use crate::reduction::{
    map_b, map_r, map_s, verify_correspondence, GridSequence, TimeFunction, WeightFunction,
};
use crate::subspace::{
    fredholm_pair, hyperbolicity_gap, relative_dimension, riesz_projection, stable_projector,
    Projector, Subspace,
};

/// Outcome of one suite check. A check body either returns a pass detail or
/// a failure reason; panics are caught and reported as failures.
type CheckResult = std::result::Result<String, String>;

/// One named invariant check.
pub struct Check {
    /// Stable check identifier, kebab-case.
    pub name: &'static str,
    /// Filter tag grouping checks by module.
    pub tag: &'static str,
    run: fn() -> CheckResult,
}

/// Result row of one executed check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub tag: &'static str,
    pub passed: bool,
    /// Pass detail or failure reason.
    pub detail: String,
}

/// Full suite result in definition order.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteSummary {
    pub outcomes: Vec<CheckOutcome>,
}

impl SuiteSummary {
    /// True when every executed check passed.
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    /// (passed, failed) counts.
    pub fn counts(&self) -> (usize, usize) {
        let passed = self.outcomes.iter().filter(|o| o.passed).count();
        (passed, self.outcomes.len() - passed)
    }
}

/// The distinct tags accepted as filters, in presentation order.
pub fn available_tags() -> Vec<&'static str> {
    let mut tags: Vec<&'static str> = Vec::new();
    for check in checks() {
        if !tags.contains(&check.tag) {
            tags.push(check.tag);
        }
    }
    tags
}

/// Run the named checks, optionally restricted to one tag, on up to
/// `max_threads` workers (0 picks a default from the host parallelism).
/// Outcomes are returned in definition order regardless of scheduling.
pub fn run_verify_suite(filter: Option<&str>, max_threads: usize) -> Result<SuiteSummary> {
    let selected: Vec<Check> = checks()
        .into_iter()
        .filter(|c| filter.is_none_or(|tag| c.tag == tag))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "no checks match filter '{}'; known tags: {}",
            filter.unwrap_or(""),
            available_tags().join(", ")
        )));
    }
    let default_workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let workers = if max_threads == 0 {
        default_workers
    } else {
        max_threads
    }
    .clamp(1, selected.len());

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, CheckOutcome)>();
    let mut slots: Vec<Option<CheckOutcome>> = (0..selected.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let selected = &selected;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= selected.len() {
                    break;
                }
                let check = &selected[i];
                let outcome = match catch_unwind(check.run) {
                    Ok(Ok(detail)) => CheckOutcome {
                        name: check.name,
                        tag: check.tag,
                        passed: true,
                        detail,
                    },
                    Ok(Err(reason)) => CheckOutcome {
                        name: check.name,
                        tag: check.tag,
                        passed: false,
                        detail: reason,
                    },
                    Err(_) => CheckOutcome {
                        name: check.name,
                        tag: check.tag,
                        passed: false,
                        detail: "check panicked".into(),
                    },
                };
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, outcome) in rx {
            slots[i] = Some(outcome);
        }
    });
    let outcomes = slots
        .into_iter()
        .map(|s| s.expect("every check reports exactly once"))
        .collect();
    Ok(SuiteSummary { outcomes })
}

/// Every named check, in presentation order.
pub fn checks() -> Vec<Check> {
    vec![
        Check {
            name: "projector-idempotency",
            tag: "subspace",
            run: projector_idempotency,
        },
        Check {
            name: "pair-index-formula",
            tag: "subspace",
            run: pair_index_formula,
        },
        Check {
            name: "riesz-commutation",
            tag: "subspace",
            run: riesz_commutation,
        },
        Check {
            name: "relative-dimension-identity",
            tag: "subspace",
            run: relative_dimension_identity,
        },
        Check {
            name: "autonomous-generator-decay",
            tag: "subspace",
            run: autonomous_generator_decay,
        },
        Check {
            name: "cocycle-identity",
            tag: "evolution",
            run: cocycle_identity,
        },
        Check {
            name: "exponential-envelope",
            tag: "evolution",
            run: exponential_envelope,
        },
        Check {
            name: "piecewise-matches-exponential",
            tag: "evolution",
            run: piecewise_matches_exponential,
        },
        Check {
            name: "rank-constancy",
            tag: "dichotomy",
            run: rank_constancy,
        },
        Check {
            name: "method-agreement",
            tag: "dichotomy",
            run: method_agreement,
        },
        Check {
            name: "extension-grid-consistency",
            tag: "dichotomy",
            run: extension_grid_consistency,
        },
        Check {
            name: "extension-intertwining",
            tag: "dichotomy",
            run: extension_intertwining,
        },
        Check {
            name: "swapped-projector-rejected",
            tag: "adversarial",
            run: swapped_projector_rejected,
        },
        Check {
            name: "corrupted-projector-rejected",
            tag: "adversarial",
            run: corrupted_projector_rejected,
        },
        Check {
            name: "index-window-stability",
            tag: "fredholm",
            run: index_window_stability,
        },
        Check {
            name: "theorem-chain",
            tag: "fredholm",
            run: theorem_chain,
        },
        Check {
            name: "node-factor-invertibility",
            tag: "fredholm",
            run: node_factor_invertibility,
        },
        Check {
            name: "left-inverse-contract",
            tag: "fredholm",
            run: left_inverse_contract,
        },
        Check {
            name: "kernel-isomorphism",
            tag: "reduction",
            run: kernel_isomorphism,
        },
        Check {
            name: "correspondence-identities",
            tag: "reduction",
            run: correspondence_identities,
        },
        Check {
            name: "reduction-linearity",
            tag: "reduction",
            run: reduction_linearity,
        },
        Check {
            name: "flow-index-identity",
            tag: "flow",
            run: flow_index_identity,
        },
        Check {
            name: "endpoint-crossing-agreement",
            tag: "flow",
            run: endpoint_crossing_agreement,
        },
        Check {
            name: "piecewise-triples",
            tag: "flow",
            run: piecewise_triples,
        },
        Check {
            name: "perturbation-invariance-spot",
            tag: "flow",
            run: perturbation_invariance_spot,
        },
        Check {
            name: "necessity-echo",
            tag: "flow",
            run: necessity_echo,
        },
        Check {
            name: "report-determinism",
            tag: "cli",
            run: report_determinism,
        },
        Check {
            name: "registry-expectations",
            tag: "cli",
            run: registry_expectations,
        },
    ]
}

// ---------------------------------------------------------------------------
// shared helpers

fn fail<T>(msg: String) -> std::result::Result<T, String> {
    Err(msg)
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Dynamics problems whose expectation is a full integer outcome.
fn integer_dynamics() -> Vec<(Problem, EvolutionFamily, Method, i64, bool)> {
    registry()
        .into_iter()
        .filter_map(|p| {
            if !matches!(p.expectation, Expectation::Integers { .. }) {
                return None;
            }
            match p.kind.clone() {
                ProblemKind::Dynamics {
                    family,
                    method,
                    window,
                    selfadjoint,
                } => Some((p, family, method, window, selfadjoint)),
                ProblemKind::ProjectorPair { .. } => None,
            }
        })
        .collect()
}

fn dynamics_family(name: &str) -> std::result::Result<(EvolutionFamily, Method, i64), String> {
    let problem = crate::problems::find(name).ok_or_else(|| format!("no problem '{name}'"))?;
    match problem.kind {
        ProblemKind::Dynamics {
            family,
            method,
            window,
            ..
        } => Ok((family, method, window)),
        ProblemKind::ProjectorPair { .. } => fail(format!("'{name}' is a projector fixture")),
    }
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_subspace(rng: &mut ChaCha8Rng, ambient: usize, dim: usize) -> Result<Subspace> {
    if dim == 0 {
        return Ok(Subspace::zero(ambient));
    }
    let raw = DMatrix::from_fn(ambient, dim, |_, _| rng.gen_range(-1.0..1.0));
    Subspace::span(&raw)
}

// ---------------------------------------------------------------------------
// subspace

fn projector_idempotency() -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut note = |p: &Projector| {
        let m = p.matrix();
        let defect = op_norm(&(m * m - m)) / (1.0 + op_norm(m));
        worst = worst.max(defect);
        count += 1;
    };
    for problem in registry() {
        match problem.kind {
            ProblemKind::Dynamics { family, .. } => {
                for plus_side in [false, true] {
                    let Ok(limit) = family.limit_matrix(plus_side) else {
                        continue;
                    };
                    if let Ok((_, true)) = hyperbolicity_gap(&limit) {
                        note(&lift(stable_projector(&limit))?);
                    }
                }
            }
            ProblemKind::ProjectorPair { first, second } => {
                note(&first);
                note(&second);
            }
        }
    }
    // An oblique projector from a deliberately skewed splitting.
    let image = lift(Subspace::span(&dmatrix![1.0; 0.0; 0.0]))?;
    let kernel = lift(Subspace::span(&dmatrix![1.0, 1.0; 1.0, 0.0; 0.0, 5.0]))?;
    note(&lift(Projector::from_split(&image, &kernel))?);
    if worst > 1e-10 {
        return fail(format!("worst idempotency defect {worst:.3e} > 1e-10"));
    }
    Ok(format!("{count} projectors, worst defect {worst:.3e}"))
}

fn pair_index_formula() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    for ambient in [3usize, 5, 8] {
        for _ in 0..6 {
            let wd = rng.gen_range(0..=ambient);
            let vd = rng.gen_range(0..=ambient);
            let w = lift(random_subspace(&mut rng, ambient, wd))?;
            let v = lift(random_subspace(&mut rng, ambient, vd))?;
            let forward = lift(fredholm_pair(&w, &v))?;
            let backward = lift(fredholm_pair(&v, &w))?;
            if forward.alpha != backward.alpha {
                return fail(format!(
                    "alpha not symmetric: {} vs {}",
                    forward.alpha, backward.alpha
                ));
            }
            let expected = w.dim() as i64 + v.dim() as i64 - ambient as i64;
            if forward.index != expected {
                return fail(format!(
                    "index {} != dim W + dim V - n = {expected}",
                    forward.index
                ));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} random pairs satisfy the index formula"))
}

fn riesz_commutation() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for trial in 0..8 {
        let n = 3 + (trial % 4);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = raw.qr().q();
        let eigs = DVector::from_fn(n, |i, _| {
            if i % 2 == 0 {
                rng.gen_range(0.25..0.8)
            } else {
                rng.gen_range(1.3..3.0)
            }
        });
        let m = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
        let p = lift(riesz_projection(&m, 1.0, 64))?;
        let defect = op_norm(&(p.matrix() * &m - &m * p.matrix())) / op_norm(&m);
        worst = worst.max(defect);
    }
    if worst > 1e-9 {
        return fail(format!("worst commutation defect {worst:.3e} > 1e-9"));
    }
    Ok(format!("8 contour-safe matrices, worst defect {worst:.3e}"))
}

fn relative_dimension_identity() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut cases = 0;
    for ambient in [4usize, 6] {
        for _ in 0..8 {
            let wd = rng.gen_range(0..=ambient);
            let vd = rng.gen_range(0..=ambient);
            let w = lift(random_subspace(&mut rng, ambient, wd))?;
            let v = lift(random_subspace(&mut rng, ambient, vd))?;
            let rel = lift(relative_dimension(&w, &v))?;
            let pair = lift(fredholm_pair(&w, &v.complement()))?;
            if rel != pair.index {
                return fail(format!(
                    "relative dimension {rel} != pair index {}",
                    pair.index
                ));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} random pairs match fredholm_pair(W, V-perp)"))
}

fn autonomous_generator_decay() -> CheckResult {
    let (family, _, _) = dynamics_family("autonomous-hyperbolic-4d")?;
    let a = lift(family.limit_matrix(true))?;
    let (gap, hyperbolic) = lift(hyperbolicity_gap(&a))?;
    if !hyperbolic {
        return fail(format!("fixture generator lost hyperbolicity, gap {gap:.3e}"));
    }
    let autonomous = EvolutionFamily::autonomous(a.clone());
    let steps = lift(discretize(&autonomous, 0, 20))?;
    let p = lift(stable_projector(&a))?;
    let projectors = vec![p.clone(); 21];
    let (bound, rate) = lift(dichotomy_constants(&steps, &projectors))?;
    // The stable subspace is invariant, so the restricted semigroup is the
    // frame-coordinate compression S' e^{A} S accumulated in rank x rank
    // products; reprojecting every step keeps amplified round-off in the
    // growing directions out of the decaying norm.
    let basis = lift(p.image())?.basis().clone();
    let restricted = basis.transpose() * a.clone().exp() * &basis;
    let mut acc = DMatrix::<f64>::identity(basis.ncols(), basis.ncols());
    for t in 0..=20 {
        let norm = op_norm(&acc);
        let allowed = bound * (-rate * t as f64).exp() * (1.0 + 1e-6);
        if norm > allowed {
            return fail(format!(
                "t = {t}: norm {norm:.3e} above fitted envelope {allowed:.3e}"
            ));
        }
        acc = &restricted * acc;
    }
    Ok(format!(
        "semigroup decay below M e^(-at) with M = {bound:.3}, a = {rate:.3}"
    ))
}

// ---------------------------------------------------------------------------
// evolution

fn cocycle_identity() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for name in ["scalar-tanh", "rot-split-4d"] {
        let (family, _, _) = dynamics_family(name)?;
        for _ in 0..10 {
            let mut times = [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ];
            times.sort_by(f64::total_cmp);
            let [tau, s, t] = times;
            let direct = lift(family.propagate(t, tau))?;
            let split = lift(family.propagate(t, s))? * lift(family.propagate(s, tau))?;
            let defect = op_norm(&(&direct - split)) / (1.0 + op_norm(&direct));
            worst = worst.max(defect);
        }
    }
    if worst > 1e-7 {
        return fail(format!("worst cocycle defect {worst:.3e} > 1e-7"));
    }
    Ok(format!("20 random triples, worst defect {worst:.3e}"))
}

fn exponential_envelope() -> CheckResult {
    let mut details = Vec::new();
    for (problem, family, _, _, _) in integer_dynamics() {
        let half = 6;
        let steps = lift(discretize(&family, -half, half))?;
        let factorization = lift(long_product(&steps, -half, half))?;
        let omega = factorization
            .lyapunov_exponents()
            .into_iter()
            .fold(0.0_f64, f64::max);
        let mut constant: f64 = 0.0;
        for m in -half..=half {
            for n in -half..m {
                let norm = op_norm(&lift(steps.product(m, n))?);
                constant = constant.max(norm * (-omega * (m - n) as f64).exp());
            }
        }
        if !constant.is_finite() || constant > 1e6 {
            return fail(format!(
                "{}: envelope constant {constant:.3e} with omega {omega:.3}",
                problem.name
            ));
        }
        details.push(constant);
    }
    let worst = details.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "{} families bounded by C e^(omega dt), worst C {worst:.3}",
        details.len()
    ))
}

fn piecewise_matches_exponential() -> CheckResult {
    let a_minus = dmatrix![-1.0, 0.0; 0.0, -2.0];
    let a_plus = dmatrix![1.0, 0.5; 0.0, 2.0];
    // No perturbation slot: propagation is the exact matrix exponential.
    let exact = EvolutionFamily::piecewise_constant(a_minus.clone(), a_plus.clone());
    let plus_defect = op_norm(
        &(lift(exact.propagate(3.0, 1.0))? - (a_plus.clone() * 2.0).exp()),
    );
    let minus_defect = op_norm(
        &(lift(exact.propagate(-1.0, -4.0))? - (a_minus.clone() * 3.0).exp()),
    );
    if plus_defect > 1e-12 || minus_defect > 1e-12 {
        return fail(format!(
            "exact form drifted from exponential: plus {plus_defect:.3e}, minus {minus_defect:.3e}"
        ));
    }
    // Zero perturbation closure: integrated numerically, must land on the
    // same exponential within integrator tolerance.
    let zero = std::sync::Arc::new(move |_: f64| DMatrix::<f64>::zeros(2, 2));
    let integrated = EvolutionFamily::piecewise_perturbed(a_minus, a_plus.clone(), zero);
    let exact_exp = (a_plus * 2.0).exp();
    // The propagator itself grows over the interval, so the integrator error
    // is meaningful only relative to its size.
    let rk4_defect =
        op_norm(&(lift(integrated.propagate(3.0, 1.0))? - &exact_exp)) / op_norm(&exact_exp);
    if rk4_defect > 1e-8 {
        return fail(format!(
            "zero-perturbation relative integration defect {rk4_defect:.3e} > 1e-8"
        ));
    }
    Ok(format!(
        "exponential match: exact {:.1e}, integrated {:.1e}",
        plus_defect.max(minus_defect),
        rk4_defect
    ))
}

// ---------------------------------------------------------------------------
// dichotomy

fn rank_constancy() -> CheckResult {
    let mut records = 0;
    for (problem, family, method, window, _) in integer_dynamics() {
        let window = window.min(10);
        for side in [Side::Minus, Side::Plus] {
            let record = lift(halfline_dichotomy(&family, side, &method, window))?;
            if record
                .projectors()
                .iter()
                .any(|p| p.rank() != record.rank())
            {
                return fail(format!(
                    "{} {}: projector rank drifts along the grid",
                    problem.name,
                    side.label()
                ));
            }
            records += 1;
        }
    }
    Ok(format!("{records} records keep constant rank"))
}

fn method_agreement() -> CheckResult {
    let names = [
        "scalar-tanh",
        "mixed-channel-0",
        "tanh-diag-3d",
        "flow-2d",
        "autonomous-hyperbolic-4d",
        "piecewise-diag-plus2",
    ];
    let mut worst: f64 = 0.0;
    for name in names {
        let (family, _, window) = dynamics_family(name)?;
        let window = window.min(12);
        let spectral_plus =
            lift(halfline_dichotomy(&family, Side::Plus, &Method::SpectralLimit, window))?;
        let qr_plus = lift(halfline_dichotomy(&family, Side::Plus, &Method::QrProduct, window))?;
        let image_a = lift(lift(spectral_plus.projector_at(0))?.image())?;
        let image_b = lift(lift(qr_plus.projector_at(0))?.image())?;
        let angle = image_a
            .max_principal_angle(&image_b)
            .ok_or_else(|| format!("{name}: methods disagree on rank of Im P+"))?;
        worst = worst.max(angle);

        let spectral_minus =
            lift(halfline_dichotomy(&family, Side::Minus, &Method::SpectralLimit, window))?;
        let qr_minus =
            lift(halfline_dichotomy(&family, Side::Minus, &Method::QrProduct, window))?;
        let kernel_a = lift(lift(spectral_minus.projector_at(0))?.kernel())?;
        let kernel_b = lift(lift(qr_minus.projector_at(0))?.kernel())?;
        let angle = kernel_a
            .max_principal_angle(&kernel_b)
            .ok_or_else(|| format!("{name}: methods disagree on rank of ker P-"))?;
        worst = worst.max(angle);
    }
    if worst > 1e-6 {
        return fail(format!("worst principal angle {worst:.3e} > 1e-6"));
    }
    Ok(format!(
        "spectral-limit and qr-product agree on the determined bundles, worst angle {worst:.3e}"
    ))
}

fn extension_grid_consistency() -> CheckResult {
    let mut worst: f64 = 0.0;
    for name in ["scalar-tanh", "tanh-diag-3d"] {
        let (family, method, _) = dynamics_family(name)?;
        let record = lift(halfline_dichotomy(&family, Side::Plus, &method, 8))?;
        for n in 0..=8 {
            let extended = lift(extend_to_continuous(&family, &record, n as f64))?;
            let grid = lift(record.projector_at(n))?;
            let defect = op_norm(&(extended.matrix() - grid.matrix()));
            worst = worst.max(defect);
        }
    }
    if worst > 1e-10 {
        return fail(format!("worst grid-point defect {worst:.3e} > 1e-10"));
    }
    Ok(format!("integer-time extensions match grids to {worst:.3e}"))
}

fn extension_intertwining() -> CheckResult {
    let mut worst: f64 = 0.0;
    for name in ["scalar-tanh", "tanh-diag-3d"] {
        let (family, method, _) = dynamics_family(name)?;
        let record = lift(halfline_dichotomy(&family, Side::Plus, &method, 8))?;
        for (s, t) in [(0.25, 1.75), (1.5, 3.0), (2.25, 5.75), (0.5, 6.5)] {
            let p_s = lift(extend_to_continuous(&family, &record, s))?;
            let p_t = lift(extend_to_continuous(&family, &record, t))?;
            let u = lift(family.propagate(t, s))?;
            let defect =
                op_norm(&(p_t.matrix() * &u - &u * p_s.matrix())) / (1.0 + op_norm(&u));
            worst = worst.max(defect);
        }
    }
    if worst > 1e-6 {
        return fail(format!("worst intertwining defect {worst:.3e} > 1e-6"));
    }
    Ok(format!("non-integer extensions intertwine to {worst:.3e}"))
}

// ---------------------------------------------------------------------------
// adversarial

fn swapped_projector_rejected() -> CheckResult {
    let (family, method, _) = dynamics_family("autonomous-hyperbolic-4d")?;
    let record = lift(halfline_dichotomy(&family, Side::Plus, &method, 8))?;
    let steps = lift(discretize(&family, 0, 8))?;
    let swapped: Vec<Projector> = record
        .projectors()
        .iter()
        .map(|p| p.complementary())
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let forged = lift(DichotomyRecord::from_parts(
        Side::Plus,
        "swapped",
        record.grid().to_vec(),
        swapped,
        record.bound(),
        record.rate(),
    ))?;
    match verify_dichotomy(&steps, &forged, DICHOTOMY_VERIFY_TOL) {
        Err(e) => Ok(format!("swapped record rejected outright: {e}")),
        Ok(check) if check.decay_slack < 0.0 => Ok(format!(
            "swapped record fails the decay law, slack {:.3}",
            check.decay_slack
        )),
        Ok(check) => fail(format!(
            "swapped projectors were accepted: slack {:.3e}, intertwine {:.3e}",
            check.decay_slack, check.intertwine_defect
        )),
    }
}

fn corrupted_projector_rejected() -> CheckResult {
    let (family, method, _) = dynamics_family("autonomous-hyperbolic-4d")?;
    let record = lift(halfline_dichotomy(&family, Side::Plus, &method, 8))?;
    let steps = lift(discretize(&family, 0, 8))?;
    let mut projectors: Vec<Projector> = record.projectors().to_vec();
    // Replace the middle projector by an axis-aligned one of the same rank;
    // the stable bundle of the fixture is not axis-aligned, so the record
    // stops intertwining.
    let axis = lift(Subspace::span(&dmatrix![
        1.0, 0.0;
        0.0, 1.0;
        0.0, 0.0;
        0.0, 0.0
    ]))?;
    projectors[4] = lift(Projector::orthogonal(&axis))?;
    let forged = lift(DichotomyRecord::from_parts(
        Side::Plus,
        "corrupted",
        record.grid().to_vec(),
        projectors,
        record.bound(),
        record.rate(),
    ))?;
    match verify_dichotomy(&steps, &forged, DICHOTOMY_VERIFY_TOL) {
        Err(e) => Ok(format!("corrupted record rejected outright: {e}")),
        Ok(check) if check.intertwine_defect > 1e-3 => Ok(format!(
            "corrupted record flagged, intertwining defect {:.3e}",
            check.intertwine_defect
        )),
        Ok(check) => fail(format!(
            "corrupted projector slipped through: intertwine defect {:.3e}",
            check.intertwine_defect
        )),
    }
}

// ---------------------------------------------------------------------------
// fredholm

fn index_window_stability() -> CheckResult {
    let mut cases = 0;
    for (problem, family, method, window, _) in integer_dynamics() {
        let mut indices = Vec::new();
        for w in [window, window + 4] {
            let minus = lift(halfline_dichotomy(&family, Side::Minus, &method, w))?;
            let plus = lift(halfline_dichotomy(&family, Side::Plus, &method, w))?;
            let trunc = lift(TruncatedD::new(&family, minus, plus, w))?;
            let (numbers, _) = lift(trunc.index_of_d(Boundary::Closed))?;
            indices.push((numbers.dim_kernel, numbers.codim_image, numbers.index));
        }
        if indices[0] != indices[1] {
            return fail(format!(
                "{}: window {window} gives {:?} but window {} gives {:?}",
                problem.name,
                indices[0],
                window + 4,
                indices[1]
            ));
        }
        cases += 1;
    }
    Ok(format!("{cases} problems keep (dim, codim, index) across N and N+4"))
}

fn theorem_chain() -> CheckResult {
    let mut cases = 0;
    for (problem, family, method, window, _) in integer_dynamics() {
        let minus = lift(halfline_dichotomy(&family, Side::Minus, &method, window))?;
        let plus = lift(halfline_dichotomy(&family, Side::Plus, &method, window))?;
        let report = lift(dichotomy_theorem_verify(&family, minus, plus, window))?;
        if !report.consistent {
            return fail(format!(
                "{}: index chain inconsistent: D {:?}, node {:?}, pair ({}, {}, {})",
                problem.name,
                report.difference,
                report.node,
                report.pair.alpha,
                report.pair.beta,
                report.pair.index
            ));
        }
        if let Expectation::Integers {
            dim_kernel,
            codim_image,
            index,
            ..
        } = problem.expectation
        {
            let d = &report.difference;
            if (d.dim_kernel, d.codim_image, d.index) != (dim_kernel, codim_image, index) {
                return fail(format!(
                    "{}: got ({}, {}, {}), expected ({dim_kernel}, {codim_image}, {index})",
                    problem.name, d.dim_kernel, d.codim_image, d.index
                ));
            }
        }
        cases += 1;
    }
    Ok(format!("{cases} problems agree along D = node = pair with frozen integers"))
}

fn node_factor_invertibility() -> CheckResult {
    let names = [
        "scalar-tanh",
        "mixed-channel-0",
        "autonomous-hyperbolic-4d",
        "piecewise-diag-plus2",
    ];
    let mut worst_sigma = f64::INFINITY;
    for name in names {
        let (family, method, window) = dynamics_family(name)?;
        let window = window.min(12);
        let minus = lift(halfline_dichotomy(&family, Side::Minus, &method, window))?;
        let plus = lift(halfline_dichotomy(&family, Side::Plus, &method, window))?;
        let trunc = lift(TruncatedD::new(&family, minus, plus, window))?;
        for offset in 1..=3 {
            let check = lift(trunc.factorization_check(offset, -offset))?;
            for sigma in [check.sigma_min_forward, check.sigma_min_backward]
                .into_iter()
                .flatten()
            {
                worst_sigma = worst_sigma.min(sigma);
                if sigma <= 1e-8 {
                    return fail(format!(
                        "{name}: node factor near-singular at offset {offset}: {sigma:.3e}"
                    ));
                }
            }
            if check.defect > 1e-6 {
                return fail(format!(
                    "{name}: factorization defect {:.3e} at offset {offset}",
                    check.defect
                ));
            }
        }
    }
    Ok(format!(
        "off-core node factors invertible, smallest sigma {worst_sigma:.3e}"
    ))
}

fn left_inverse_contract() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for (problem, family, method, window, _) in integer_dynamics() {
        let window = window.min(10);
        let record = lift(halfline_dichotomy(&family, Side::Plus, &method, window))?;
        let steps = lift(discretize(&family, 0, window))?;
        let d = family.dim();
        let identity = DMatrix::<f64>::identity(d, d);
        let p0 = lift(record.projector_at(0))?.matrix().clone();
        let p_top = lift(record.projector_at(window))?.matrix().clone();
        for _ in 0..5 {
            // Random x with no decaying component at the base and no growing
            // component at the top: the class on which the inverse is exact.
            let mut x: Vec<DVector<f64>> = (0..=window as usize)
                .map(|_| random_vector(&mut rng, d))
                .collect();
            x[0] = (&identity - &p0) * &x[0];
            let top = window as usize;
            x[top] = &p_top * &x[top];
            let norm_x = x.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
            if norm_x < 1e-8 {
                continue;
            }
            let data: Vec<DVector<f64>> = (1..=window)
                .map(|n| {
                    Ok(&x[n as usize] - lift(steps.step(n - 1))? * &x[n as usize - 1])
                })
                .collect::<std::result::Result<_, String>>()?;
            let solve = lift(left_inverse_dplus(&steps, &record, 0, &data))?;
            let mut defect_sq = 0.0;
            for n in 0..=window {
                defect_sq += (lift(solve.value_at(n))? - &x[n as usize]).norm_squared();
            }
            let relative = defect_sq.sqrt() / norm_x;
            worst = worst.max(relative);
            if relative > 1e-9 {
                return fail(format!(
                    "{}: left inverse misses x by {relative:.3e} relative",
                    problem.name
                ));
            }
        }
    }
    Ok(format!(
        "inverse reproduces admissible x, worst relative error {worst:.3e}"
    ))
}

// ---------------------------------------------------------------------------
// reduction

fn kernel_isomorphism() -> CheckResult {
    let names = ["scalar-tanh", "piecewise-diag-plus2", "mixed-channel-0"];
    let mut detail = Vec::new();
    for name in names {
        let (family, method, _) = dynamics_family(name)?;
        let window = 10;
        let minus = lift(halfline_dichotomy(&family, Side::Minus, &method, window))?;
        let plus = lift(halfline_dichotomy(&family, Side::Plus, &method, window))?;
        let trunc = lift(TruncatedD::new(&family, minus, plus, window))?;
        let (numbers, kernel) = lift(trunc.index_of_d(Boundary::Closed))?;
        let d = family.dim();
        let mut bounded = 0;
        for col in 0..kernel.ncols() {
            let y = GridSequence::from_fn(-window, (2 * window + 1) as usize, |n| {
                let base = ((n + window) as usize) * d;
                DVector::from_fn(d, |i, _| kernel[(base + i, col)])
            });
            let u = map_b(&family, &y);
            // A kernel sequence extends to a continuous solution: the jumps
            // at interior integers are the difference residuals, all zero.
            let mut worst_jump: f64 = 0.0;
            for n in (-window + 1)..window {
                let left = u.eval(n as f64 - 1e-9);
                let right = u.eval(n as f64 + 1e-9);
                worst_jump = worst_jump.max((left - right).norm());
            }
            if worst_jump > 1e-5 {
                return fail(format!(
                    "{name}: kernel column {col} does not extend continuously, jump {worst_jump:.3e}"
                ));
            }
            // And it stays bounded across the window: the peak must not sit
            // at the very ends where truncation would let it grow.
            let edge = u.eval(-(window as f64) + 0.5).norm().max(
                u.eval(window as f64 - 0.5).norm(),
            );
            let mid = u.eval(0.0).norm().max(u.eval(0.5).norm());
            if edge > mid.max(1e-12) * 10.0 {
                return fail(format!(
                    "{name}: kernel column {col} grows toward the edges ({edge:.3e} vs {mid:.3e})"
                ));
            }
            bounded += 1;
        }
        if bounded != numbers.dim_kernel {
            return fail(format!(
                "{name}: {bounded} bounded solutions vs dim ker = {}",
                numbers.dim_kernel
            ));
        }
        detail.push(format!("{name} {bounded}"));
    }
    Ok(format!("bounded-solution counts match dim ker: {}", detail.join(", ")))
}

fn correspondence_identities() -> CheckResult {
    let mut worst: f64 = 0.0;
    for (name, seed) in [("scalar-tanh", 31u64), ("tanh-diag-3d", 37u64)] {
        let (family, _, _) = dynamics_family(name)?;
        let report = lift(verify_correspondence(&family, -4, 4, seed))?;
        if report.generator_defect > 1e-6 {
            return fail(format!(
                "{name}: generator correspondence defect {:.3e}",
                report.generator_defect
            ));
        }
        if report.reconstruction_defect > 1e-8 {
            return fail(format!(
                "{name}: reconstruction defect {:.3e}",
                report.reconstruction_defect
            ));
        }
        if report.extension_jump_defect > 1e-8 {
            return fail(format!(
                "{name}: extension jump defect {:.3e}",
                report.extension_jump_defect
            ));
        }
        worst = worst
            .max(report.generator_defect)
            .max(report.reconstruction_defect)
            .max(report.extension_jump_defect);
    }
    Ok(format!("all three reduction identities hold, worst defect {worst:.3e}"))
}

fn reduction_linearity() -> CheckResult {
    let (family, _, _) = dynamics_family("scalar-tanh")?;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let d = family.dim();
    let (lo, hi) = (-4i64, 4i64);
    let count = (hi - lo + 1) as usize;
    let mut worst: f64 = 0.0;

    // R on time functions.
    fn f_eval(t: f64) -> DVector<f64> {
        DVector::from_element(1, (t * 0.7).sin() + 0.3 * t.cos())
    }
    fn g_eval(t: f64) -> DVector<f64> {
        DVector::from_element(1, (t * 1.3).cos() - 0.2 * (t * 0.5).sin())
    }
    let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let f = TimeFunction::from_rule(f_eval);
    let g = TimeFunction::from_rule(g_eval);
    let (a, b) = (coeffs[0], coeffs[1]);
    let combo = TimeFunction::from_rule(move |t: f64| f_eval(t) * a + g_eval(t) * b);
    let r_f = lift(map_r(&family, &f, lo, hi))?;
    let r_g = lift(map_r(&family, &g, lo, hi))?;
    let r_combo = lift(map_r(&family, &combo, lo, hi))?;
    for n in (lo + 1)..=hi {
        let expected = lift(r_f.value_at(n))? * a + lift(r_g.value_at(n))? * b;
        worst = worst.max((lift(r_combo.value_at(n))? - expected).norm());
    }

    // S and B on grid sequences.
    let y1_values: Vec<DVector<f64>> = (0..count).map(|_| random_vector(&mut rng, d)).collect();
    let y2_values: Vec<DVector<f64>> = (0..count).map(|_| random_vector(&mut rng, d)).collect();
    let (c1, c2) = (coeffs[2], coeffs[3]);
    let y1 = GridSequence::from_fn(lo, count, |n| y1_values[(n - lo) as usize].clone());
    let y2 = GridSequence::from_fn(lo, count, |n| y2_values[(n - lo) as usize].clone());
    let y_combo = GridSequence::from_fn(lo, count, |n| {
        &y1_values[(n - lo) as usize] * c1 + &y2_values[(n - lo) as usize] * c2
    });
    let s1 = map_s(&family, &y1, WeightFunction);
    let s2 = map_s(&family, &y2, WeightFunction);
    let s_combo = map_s(&family, &y_combo, WeightFunction);
    let b1 = map_b(&family, &y1);
    let b2 = map_b(&family, &y2);
    let b_combo = map_b(&family, &y_combo);
    for k in 0..40 {
        let t = lo as f64 + 0.21 + (k as f64) * 0.19;
        if t >= hi as f64 {
            break;
        }
        worst = worst.max((s_combo.eval(t) - (s1.eval(t) * c1 + s2.eval(t) * c2)).norm());
        worst = worst.max((b_combo.eval(t) - (b1.eval(t) * c1 + b2.eval(t) * c2)).norm());
    }
    if worst > 1e-12 {
        return fail(format!("superposition defect {worst:.3e} > 1e-12"));
    }
    Ok(format!("R, S, B linear under random superposition to {worst:.3e}"))
}

// ---------------------------------------------------------------------------
// flow

fn flow_index_identity() -> CheckResult {
    let mut cases = Vec::new();
    for (problem, family, method, window, selfadjoint) in integer_dynamics() {
        if !selfadjoint {
            continue;
        }
        let path = lift(SelfadjointPath::new(family.clone(), window as f64))?;
        let report = lift(spectral_flow(&path))?;
        let minus = lift(halfline_dichotomy(&family, Side::Minus, &method, window))?;
        let plus = lift(halfline_dichotomy(&family, Side::Plus, &method, window))?;
        let trunc = lift(TruncatedD::new(&family, minus, plus, window))?;
        let (numbers, _) = lift(trunc.index_of_d(Boundary::Closed))?;
        if report.flow != numbers.index {
            return fail(format!(
                "{}: spectral flow {} != index {}",
                problem.name, report.flow, numbers.index
            ));
        }
        cases.push(format!("{} {:+}", problem.name, report.flow));
    }
    if cases.len() < 3 {
        return fail(format!(
            "only {} selfadjoint paths in the registry, need at least 3",
            cases.len()
        ));
    }
    Ok(format!("flow = index on {}", cases.join(", ")))
}

fn endpoint_crossing_agreement() -> CheckResult {
    let mut checked = 0;
    for name in ["scalar-tanh", "scalar-plus-tanh", "flow-2d"] {
        let (family, _, window) = dynamics_family(name)?;
        let path = lift(SelfadjointPath::new(family, window as f64))?;
        let report = lift(spectral_flow(&path))?;
        let crossing_sum: i64 = report
            .crossings
            .iter()
            .map(|c| if c.upward { -1 } else { 1 })
            .sum();
        if crossing_sum != report.flow {
            return fail(format!(
                "{name}: signed crossings {crossing_sum} != endpoint flow {}",
                report.flow
            ));
        }
        checked += 1;
    }
    // A staggered two-channel path with two individually recorded simple
    // crossings that cancel.
    let rule = std::sync::Arc::new(|t: f64| {
        DMatrix::from_diagonal(&DVector::from_vec(vec![-((t - 2.0).tanh()), (t + 2.0).tanh()]))
    });
    let family = EvolutionFamily::continuous_with_limits(
        2,
        rule,
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
        DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])),
    );
    let path = lift(SelfadjointPath::new(family, 20.0))?;
    let report = lift(spectral_flow(&path))?;
    if report.flow != 0 || report.crossings.len() != 2 {
        return fail(format!(
            "staggered path: flow {} with {} crossings, expected 0 with 2",
            report.flow,
            report.crossings.len()
        ));
    }
    let up = report.crossings.iter().filter(|c| c.upward).count();
    if up != 1 {
        return fail(format!("staggered path: {up} upward crossings, expected 1"));
    }
    checked += 1;
    Ok(format!(
        "{checked} paths: signed crossing count equals endpoint flow"
    ))
}

fn piecewise_triples() -> CheckResult {
    let swap = (
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0])),
        DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0])),
        2i64,
    );
    let mixed = (
        DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])),
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
        0i64,
    );
    let mut details = Vec::new();
    for (a_minus, a_plus, expected) in [swap, mixed] {
        let report = lift(piecewise_pipeline(&a_minus, &a_plus, None, 12))?;
        if !report.consistent {
            return fail(format!(
                "pipeline inconsistent for index {expected}: D {:?}, flow {:?}, reldim {:?}",
                report.theorem.difference, report.flow, report.relative_dimension
            ));
        }
        if report.theorem.difference.index != expected {
            return fail(format!(
                "piecewise index {} != expected {expected}",
                report.theorem.difference.index
            ));
        }
        details.push(format!("{expected:+}"));
    }
    Ok(format!(
        "node, pair, D, flow, and relative dimension agree on indices {}",
        details.join(", ")
    ))
}

fn perturbation_invariance_spot() -> CheckResult {
    let mut runs = 0;
    for name in ["scalar-tanh", "flow-2d", "tanh-diag-3d"] {
        let (family, _, window) = dynamics_family(name)?;
        let d = family.dim();
        let cap = (d / 4).max(1);
        for seed in 0..5u64 {
            let b = random_vanishing_perturbation(d, cap, 0.4, 1000 + seed);
            let report = lift(perturbation_invariance(&family, b, cap, window))?;
            if !report.invariant {
                return fail(format!(
                    "{name} seed {seed}: index moved {} -> {}",
                    report.base.index, report.perturbed.index
                ));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} low-rank vanishing perturbations kept the index"))
}

fn necessity_echo() -> CheckResult {
    let mut details = Vec::new();
    for (name, marker) in [("hill-elliptic", "contour"), ("center-2d", "hyperbolic")] {
        let problem = crate::problems::find(name).ok_or_else(|| format!("no problem '{name}'"))?;
        let report = run_analysis(&AnalysisTask::from(problem), &RunOptions::default());
        if report.integers.is_some() {
            return fail(format!("{name}: an integer summary was emitted despite refusal"));
        }
        let Some(refusal) = &report.refusal else {
            return fail(format!("{name}: no refusal was recorded"));
        };
        if !refusal.contains(marker) {
            return fail(format!(
                "{name}: refusal '{refusal}' does not mention '{marker}'"
            ));
        }
        if report.verdict != Verdict::Pass {
            return fail(format!(
                "{name}: expected-refusal problem has verdict {:?}",
                report.verdict
            ));
        }
        details.push(format!("{name}: {refusal}"));
    }
    Ok(details.join("; "))
}

// ---------------------------------------------------------------------------
// cli

fn report_determinism() -> CheckResult {
    for name in ["scalar-tanh", "block-pair"] {
        let problem = crate::problems::find(name).ok_or_else(|| format!("no problem '{name}'"))?;
        let task = AnalysisTask::from(problem);
        let options = RunOptions::default();
        let first = serde_json::to_string(&run_analysis(&task, &options))
            .map_err(|e| e.to_string())?;
        let second = serde_json::to_string(&run_analysis(&task, &options))
            .map_err(|e| e.to_string())?;
        if first != second {
            return fail(format!("{name}: two identical runs serialized differently"));
        }
    }
    Ok("repeated runs serialize byte-for-byte".into())
}

fn registry_expectations() -> CheckResult {
    let mut passed = 0;
    for problem in registry() {
        let name = problem.name;
        let report = run_analysis(&AnalysisTask::from(problem), &RunOptions::default());
        if report.verdict != Verdict::Pass {
            let why = report
                .refusal
                .clone()
                .or_else(|| {
                    report.stages.iter().rev().find_map(|s| match &s.status {
                        crate::analyze::StageStatus::Failed { message } => {
                            Some(format!("{} failed: {message}", s.stage))
                        }
                        _ => None,
                    })
                })
                .unwrap_or_else(|| "expectation mismatch".into());
            return fail(format!("{name}: verdict {:?} ({why})", report.verdict));
        }
        passed += 1;
    }
    Ok(format!("{passed} registry problems meet their frozen expectations"))
}
