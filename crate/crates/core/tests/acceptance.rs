//! Acceptance gate: ten end-to-end criteria, each checked against an
//! independent oracle, a closed form, or a frozen integer target, and each
//! reported as a single `[PASS]`/`[FAIL]` line with a measured detail.
//!
//! The lines are written straight to the process stderr so the matrix is
//! visible in plain `cargo test` output; the test fails if any criterion
//! does.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dichotomy_lab::numerics::{min_singular_value, op_norm, DEFAULT_CONTOUR_NODES};
use dichotomy_lab::{
    dichotomy_constants, dichotomy_theorem_verify, discretize, extend_to_continuous,
    find_problem, halfline_dichotomy, left_inverse_dplus, perturbation_invariance,
    random_vanishing_perturbation, registry, riesz_projection, run_analysis, spectral_flow,
    verify_correspondence, AnalysisTask, Boundary, DichotomyRecord, EvolutionFamily, Expectation,
    Method, Problem, ProblemKind, RunOptions, SelfadjointPath, Side, TruncatedD, Verdict,
};

#[test]
fn acceptance_criteria() {
    let criteria: &[(&str, fn() -> Result<String, String>)] = &[
        ("01 index-chain-consistency", c01_index_chain),
        ("02 signed-fixture-oracle", c02_signed_fixtures),
        ("03 kernel-fiber-constancy", c03_fiber_constancy),
        ("04 half-line-left-inverse", c04_left_inverse),
        ("05 reduction-correspondence", c05_reduction),
        ("06 continuous-extension", c06_extension),
        ("07 spectral-flow-identity", c07_spectral_flow),
        ("08 perturbation-invariance", c08_perturbation),
        ("09 refusal-echo", c09_refusal),
        ("10 riesz-projector-accuracy", c10_riesz),
    ];
    let mut failures = Vec::new();
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => emit(&format!("[PASS] {name} — {detail}")),
            Err(detail) => {
                emit(&format!("[FAIL] {name} — {detail}"));
                failures.push(*name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

/// Write a line to the raw stderr handle, bypassing the test harness capture
/// so the criterion matrix always appears in the test output.
fn emit(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.write_all(b"\n");
    let _ = err.flush();
}

fn lift<T>(ctx: &str, r: dichotomy_lab::Result<T>) -> Result<T, String> {
    r.map_err(|e| format!("{ctx}: {e}"))
}

/// Frozen integer targets of a registry problem, if it has any.
struct IntegerTarget {
    rank_plus: usize,
    dim_kernel: usize,
    codim_image: usize,
    index: i64,
    flow: Option<i64>,
}

fn integer_target(problem: &Problem) -> Option<IntegerTarget> {
    match problem.expectation {
        Expectation::Integers {
            rank_plus,
            dim_kernel,
            codim_image,
            index,
            flow,
        } => Some(IntegerTarget {
            rank_plus,
            dim_kernel,
            codim_image,
            index,
            flow,
        }),
        _ => None,
    }
}

fn dynamics(problem: &Problem) -> Result<(&EvolutionFamily, &Method, i64, bool), String> {
    match &problem.kind {
        ProblemKind::Dynamics {
            family,
            method,
            window,
            selfadjoint,
        } => Ok((family, method, *window, *selfadjoint)),
        ProblemKind::ProjectorPair { .. } => {
            Err(format!("{}: not a dynamics problem", problem.name))
        }
    }
}

/// Every registry problem that promises exact integers, with its targets.
fn integer_problems() -> Vec<(Problem, IntegerTarget)> {
    registry()
        .into_iter()
        .filter_map(|p| integer_target(&p).map(|t| (p, t)))
        .collect()
}

fn named_problem(name: &str) -> Result<Problem, String> {
    find_problem(name).ok_or_else(|| format!("{name}: missing from the registry"))
}

fn both_records(
    ctx: &str,
    family: &EvolutionFamily,
    method: &Method,
    window: i64,
) -> Result<(DichotomyRecord, DichotomyRecord), String> {
    let minus = lift(ctx, halfline_dichotomy(family, Side::Minus, method, window))?;
    let plus = lift(ctx, halfline_dichotomy(family, Side::Plus, method, window))?;
    Ok((minus, plus))
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------------------
// 1. The full index chain agrees, with exact integers, on every builtin
//    problem that promises them — and fast enough to be routine.
// ---------------------------------------------------------------------------

fn c01_index_chain() -> Result<String, String> {
    let start = Instant::now();
    let window = 20;
    let mut count = 0usize;
    for (problem, target) in integer_problems() {
        let name = problem.name;
        let (family, method, _, _) = dynamics(&problem)?;
        let (minus, plus) = both_records(name, family, method, window)?;
        if plus.rank() != target.rank_plus {
            return Err(format!(
                "{name}: plus-side rank {} differs from the frozen {}",
                plus.rank(),
                target.rank_plus
            ));
        }
        let trunc = lift(
            name,
            TruncatedD::new(family, minus.clone(), plus.clone(), window),
        )?;
        let shifted = lift(name, trunc.node_operator(3, -3).and_then(|n| n.numbers()))?;
        let report = lift(name, dichotomy_theorem_verify(family, minus, plus, window))?;
        if !report.consistent {
            return Err(format!("{name}: the index chain reports an inconsistency"));
        }
        let expected = (target.dim_kernel, target.codim_image, target.index);
        let stations = [
            ("difference operator", &report.difference),
            ("node at (0,0)", &report.node),
            ("node at (3,-3)", &shifted),
        ];
        for (label, numbers) in stations {
            let got = (numbers.dim_kernel, numbers.codim_image, numbers.index);
            if got != expected {
                return Err(format!(
                    "{name}: {label} gives (dim, codim, index) = {got:?}, expected {expected:?}"
                ));
            }
        }
        let pair = (report.pair.alpha, report.pair.beta, report.pair.index);
        if pair != expected {
            return Err(format!(
                "{name}: subspace pair gives {pair:?}, expected {expected:?}"
            ));
        }
        count += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    if count < 9 {
        return Err(format!(
            "only {count} integer problems in the registry, need at least 9"
        ));
    }
    if elapsed >= 30.0 {
        return Err(format!(
            "{count} problems agreed but the chain took {elapsed:.1}s, budget 30s"
        ));
    }
    Ok(format!(
        "{count} problems at window 20: difference, node(0,0), node(3,-3), and pair \
         numbers all equal the frozen integers; {elapsed:.1}s < 30s"
    ))
}

// ---------------------------------------------------------------------------
// 2. Signed index fixtures against an independent dense-SVD oracle for the
//    boundary-closed truncation, at two window sizes.
// ---------------------------------------------------------------------------

fn c02_signed_fixtures() -> Result<String, String> {
    let fixtures: &[(&str, (usize, usize, i64))] = &[
        ("scalar-tanh", (1, 0, 1)),
        ("scalar-plus-tanh", (0, 1, -1)),
        ("piecewise-diag-plus2", (2, 0, 2)),
        ("autonomous-hyperbolic-4d", (0, 0, 0)),
        ("mixed-channel-0", (1, 1, 0)),
    ];
    let mut signs = Vec::new();
    for &(name, expected) in fixtures {
        let problem = named_problem(name)?;
        let (family, method, _, _) = dynamics(&problem)?;

        // Library numbers at window 20.
        let (minus, plus) = both_records(name, family, method, 20)?;
        let trunc = lift(name, TruncatedD::new(family, minus, plus, 20))?;
        let (lib, _) = lift(name, trunc.index_of_d(Boundary::Closed))?;
        let got = (lib.dim_kernel, lib.codim_image, lib.index);
        if got != expected {
            return Err(format!(
                "{name}: library numbers {got:?} differ from the frozen {expected:?}"
            ));
        }

        // Dense oracle at two windows: assemble the closed section in one
        // matrix and count its singular values directly.
        for half in [20i64, 30] {
            let (minus, plus) = both_records(name, family, method, half)?;
            let section = dense_closed_section(name, family, &minus, &plus, half)?;
            let (dim_kernel, codim) = dense_defect_numbers(name, &section)?;
            let oracle = (dim_kernel, codim, dim_kernel as i64 - codim as i64);
            if oracle != expected {
                return Err(format!(
                    "{name}: dense oracle at window {half} gives {oracle:?}, expected {expected:?}"
                ));
            }
        }
        signs.push(format!("{name} {:+}", expected.2));
    }
    Ok(format!(
        "library and dense SVD oracle agree at windows 20 and 30: {}",
        signs.join(", ")
    ))
}

/// Boundary-closed truncation assembled densely and independently of the
/// library's section builder: one block row per difference (Dx)_n,
/// n = 1-half ..= half, with the edge columns right-multiplied by orthonormal
/// bases of the admissible bundles (backward-decaying at the left end,
/// forward-decaying at the right end).
fn dense_closed_section(
    ctx: &str,
    family: &EvolutionFamily,
    minus: &DichotomyRecord,
    plus: &DichotomyRecord,
    half: i64,
) -> Result<DMatrix<f64>, String> {
    let d = family.dim();
    let left = lift(ctx, minus.projector_at(-half).and_then(|p| p.kernel()))?
        .basis()
        .clone();
    let right = lift(ctx, plus.projector_at(half).and_then(|p| p.image()))?
        .basis()
        .clone();
    let k_left = left.ncols();
    let k_right = right.ncols();
    let inner = (2 * half - 1) as usize;
    let nrows = 2 * half as usize * d;
    let ncols = k_left + inner * d + k_right;
    let col_of = |m: i64| -> usize {
        if m == -half {
            0
        } else {
            k_left + ((m + half - 1) as usize) * d
        }
    };
    let mut section = DMatrix::zeros(nrows, ncols);
    for (block, n) in ((1 - half)..=half).enumerate() {
        let u = lift(ctx, family.propagate(n as f64, (n - 1) as f64))?;
        let from = if n - 1 == -half { -(&u * &left) } else { -u };
        section
            .view_mut((block * d, col_of(n - 1)), (d, from.ncols()))
            .copy_from(&from);
        let to = if n == half {
            right.clone()
        } else {
            DMatrix::identity(d, d)
        };
        section
            .view_mut((block * d, col_of(n)), (d, to.ncols()))
            .copy_from(&to);
    }
    Ok(section)
}

/// Kernel dimension and image codimension of a dense section from its
/// singular spectrum. The rank cut sits at 1e-8 of the top singular value
/// and the split must be unambiguous: kept values above 1e-6 of scale,
/// discarded values below 1e-10 of scale.
fn dense_defect_numbers(ctx: &str, section: &DMatrix<f64>) -> Result<(usize, usize), String> {
    let mut sigma: Vec<f64> = section.clone().singular_values().iter().copied().collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    let scale = sigma.first().copied().unwrap_or(0.0).max(1.0);
    let rank = sigma.iter().take_while(|&&s| s > 1e-8 * scale).count();
    for (i, &s) in sigma.iter().enumerate() {
        let unambiguous = if i < rank {
            s > 1e-6 * scale
        } else {
            s < 1e-10 * scale
        };
        if !unambiguous {
            return Err(format!(
                "{ctx}: singular value {s:.3e} sits too close to the rank cut (scale {scale:.3e})"
            ));
        }
    }
    Ok((section.ncols() - rank, section.nrows() - rank))
}

// ---------------------------------------------------------------------------
// 3. Interior kernel fibers have constant dimension equal to dim ker D on
//    every problem with a nontrivial kernel.
// ---------------------------------------------------------------------------

fn c03_fiber_constancy() -> Result<String, String> {
    let window = 20;
    let mut lines = Vec::new();
    for (problem, target) in integer_problems() {
        if target.dim_kernel == 0 {
            continue;
        }
        let name = problem.name;
        let (family, method, _, _) = dynamics(&problem)?;
        let (minus, plus) = both_records(name, family, method, window)?;
        let trunc = lift(name, TruncatedD::new(family, minus, plus, window))?;
        let (numbers, kernel) = lift(name, trunc.index_of_d(Boundary::Closed))?;
        if numbers.dim_kernel != target.dim_kernel {
            return Err(format!(
                "{name}: dim ker D = {} differs from the frozen {}",
                numbers.dim_kernel, target.dim_kernel
            ));
        }
        let fibers = lift(name, trunc.kernel_fibers(&kernel))?;
        if fibers.is_empty() {
            return Err(format!("{name}: no interior fibers were sampled"));
        }
        for &(n, dim) in &fibers {
            if dim != target.dim_kernel {
                return Err(format!(
                    "{name}: kernel fiber at n = {n} has dimension {dim}, expected {}",
                    target.dim_kernel
                ));
            }
        }
        lines.push(format!(
            "{name} ({} fibers of dimension {})",
            fibers.len(),
            target.dim_kernel
        ));
    }
    if lines.is_empty() {
        return Err("no registry problem has a nontrivial kernel".into());
    }
    Ok(format!(
        "fiber dimension constant and equal to dim ker D on every nontrivial-kernel problem: {}",
        lines.join("; ")
    ))
}

// ---------------------------------------------------------------------------
// 4. The half-line left inverse reproduces admissible sequences to 1e-9 and
//    its output solves the equation for arbitrary data to 1e-9.
// ---------------------------------------------------------------------------

fn c04_left_inverse() -> Result<String, String> {
    let mut worst_solve: f64 = 0.0;
    let mut worst_range: f64 = 0.0;
    let mut count = 0usize;
    for (pi, (problem, _)) in integer_problems().into_iter().enumerate() {
        let name = problem.name;
        let (family, method, window, _) = dynamics(&problem)?;
        let window = window.min(10);
        let record = lift(name, halfline_dichotomy(family, Side::Plus, method, window))?;
        let steps = lift(name, discretize(family, 0, window))?;
        let d = family.dim();
        let identity = DMatrix::<f64>::identity(d, d);
        let p0 = lift(name, record.projector_at(0))?.matrix().clone();
        let p_top = lift(name, record.projector_at(window))?.matrix().clone();
        let top = window as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(0x4E11 + pi as u64);
        for _ in 0..20 {
            // Reproduction on the admissible class: no decaying component at
            // the base, no growing component at the top.
            let mut x: Vec<DVector<f64>> = (0..=top).map(|_| random_vector(&mut rng, d)).collect();
            x[0] = (&identity - &p0) * &x[0];
            x[top] = &p_top * &x[top];
            let norm_x = x.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
            let mut data = Vec::with_capacity(top);
            for n in 1..=window {
                let step = lift(name, steps.step(n - 1))?;
                data.push(&x[n as usize] - step * &x[(n - 1) as usize]);
            }
            let solve = lift(name, left_inverse_dplus(&steps, &record, 0, &data))?;
            let mut err = 0.0f64;
            for n in 0..=window {
                err += (lift(name, solve.value_at(n))? - &x[n as usize]).norm_squared();
            }
            worst_solve = worst_solve.max(err.sqrt() / norm_x);

            // Range characterization: for arbitrary data the inverse's output
            // solves the difference equation exactly.
            let y: Vec<DVector<f64>> = (0..top).map(|_| random_vector(&mut rng, d)).collect();
            let norm_y = y
                .iter()
                .map(|v| v.norm_squared())
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            let back = lift(name, left_inverse_dplus(&steps, &record, 0, &y))?;
            let mut res = 0.0f64;
            for n in 1..=window {
                let step = lift(name, steps.step(n - 1))?;
                let defect = lift(name, back.value_at(n))?
                    - step * lift(name, back.value_at(n - 1))?
                    - &y[(n - 1) as usize];
                res += defect.norm_squared();
            }
            worst_range = worst_range.max(res.sqrt() / norm_y);
        }
        count += 1;
    }
    if worst_solve > 1e-9 {
        return Err(format!(
            "worst relative reproduction error {worst_solve:.3e} exceeds 1e-9"
        ));
    }
    if worst_range > 1e-9 {
        return Err(format!(
            "worst relative range residual {worst_range:.3e} exceeds 1e-9"
        ));
    }
    Ok(format!(
        "{count} problems, 20 random sequences each: reproduction {worst_solve:.3e}, \
         range residual {worst_range:.3e} (tolerance 1e-9)"
    ))
}

// ---------------------------------------------------------------------------
// 5. The reduction maps satisfy the generator and reconstruction identities,
//    and the generator defect shrinks at the integrator's order.
// ---------------------------------------------------------------------------

fn c05_reduction() -> Result<String, String> {
    let names = ["scalar-tanh", "flow-2d", "tanh-diag-3d"];
    let mut lines = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let problem = named_problem(name)?;
        let (family, _, _, _) = dynamics(&problem)?;
        let seed = 71 + i as u64;
        let coarse = lift(
            name,
            verify_correspondence(&family.clone().with_step(1e-2), -4, 4, seed),
        )?;
        let fine = lift(
            name,
            verify_correspondence(&family.clone().with_step(5e-3), -4, 4, seed),
        )?;
        if coarse.generator_defect > 1e-6 {
            return Err(format!(
                "{name}: generator defect {:.3e} exceeds 1e-6 at step 1e-2",
                coarse.generator_defect
            ));
        }
        if coarse.reconstruction_defect > 1e-8 {
            return Err(format!(
                "{name}: reconstruction defect {:.3e} exceeds 1e-8",
                coarse.reconstruction_defect
            ));
        }
        let ratio = coarse.generator_defect / fine.generator_defect.max(f64::MIN_POSITIVE);
        if ratio < 8.0 {
            return Err(format!(
                "{name}: halving the integrator step shrank the generator defect \
                 only {ratio:.1}x, need at least 8x"
            ));
        }
        lines.push(format!(
            "{name}: generator {:.1e}, reconstruction {:.1e}, shrink {:.1}x",
            coarse.generator_defect, coarse.reconstruction_defect, ratio
        ));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------------------
// 6. The continuous extension of the grid projectors intertwines with the
//    flow and obeys both decay estimates with grid-fitted constants at 50
//    non-integer times per side; at integer times it matches the grid.
// ---------------------------------------------------------------------------

fn c06_extension() -> Result<String, String> {
    let names = [
        "scalar-tanh",
        "flow-2d",
        "tanh-diag-3d",
        "autonomous-hyperbolic-4d",
    ];
    let window = 12i64;
    let deltas = [0.5, 1.7, 2.9];
    let mut worst_inter: f64 = 0.0;
    let mut worst_slack = f64::INFINITY;
    let mut worst_grid: f64 = 0.0;
    let mut pairs = 0usize;
    for name in names {
        let problem = named_problem(name)?;
        let (family, method, _, _) = dynamics(&problem)?;
        for side in [Side::Minus, Side::Plus] {
            let ctx = format!("{name} {}", side.label());
            let record = lift(&ctx, halfline_dichotomy(family, side, method, window))?;
            let lo = record.grid_start();
            let hi = record.grid_end();
            let steps = lift(&ctx, discretize(family, lo, hi))?;
            let (bound, rate) = lift(&ctx, dichotomy_constants(&steps, record.projectors()))?;
            let d = record.ambient_dim();
            let rank = record.rank();

            // At integer times the extension reproduces the grid record.
            for n in lo..=hi {
                let ext = lift(&ctx, extend_to_continuous(family, &record, n as f64))?;
                let grid = lift(&ctx, record.projector_at(n))?;
                let diff = op_norm(&(ext.matrix() - grid.matrix()));
                worst_grid = worst_grid.max(diff);
                if diff > 1e-10 {
                    return Err(format!(
                        "{ctx}: extension at integer time {n} differs from the grid \
                         projector by {diff:.3e}, tolerance 1e-10"
                    ));
                }
            }

            // 50 non-integer base times, each paired with a staggered partner.
            let span = (hi - lo) as f64 - 3.0;
            for i in 0..50 {
                let mut s = lo as f64 + (i as f64 + 0.37) * span / 50.0;
                if (s - s.round()).abs() < 1e-6 {
                    s += 0.013;
                }
                let delta = deltas[i % 3];
                let t = s + delta;
                let ps = lift(&ctx, extend_to_continuous(family, &record, s))?;
                let pt = lift(&ctx, extend_to_continuous(family, &record, t))?;
                let u = lift(&ctx, family.propagate(t, s))?;
                let inter = op_norm(&(&u * ps.matrix() - pt.matrix() * &u)) / (1.0 + op_norm(&u));
                worst_inter = worst_inter.max(inter);
                if inter > 1e-6 {
                    return Err(format!(
                        "{ctx}: intertwining defect {inter:.3e} at (s, t) = ({s:.2}, {t:.2}), \
                         tolerance 1e-6"
                    ));
                }
                if rank > 0 {
                    let bs = lift(&ctx, ps.image())?.basis().clone();
                    let bt = lift(&ctx, pt.image())?.basis().clone();
                    let forward = op_norm(&(bt.transpose() * &u * &bs));
                    let slack = bound.ln() - rate * delta - forward.max(f64::MIN_POSITIVE).ln();
                    worst_slack = worst_slack.min(slack);
                    if slack < -1e-6 {
                        return Err(format!(
                            "{ctx}: forward decay breaks the fitted envelope by {slack:.3e} \
                             at (s, t) = ({s:.2}, {t:.2})"
                        ));
                    }
                }
                if rank < d {
                    let ks = lift(&ctx, ps.kernel())?.basis().clone();
                    let kt = lift(&ctx, pt.kernel())?.basis().clone();
                    let restricted = kt.transpose() * &u * &ks;
                    let sigma = min_singular_value(&restricted).max(f64::MIN_POSITIVE);
                    let slack = bound.ln() - rate * delta + sigma.ln();
                    worst_slack = worst_slack.min(slack);
                    if slack < -1e-6 {
                        return Err(format!(
                            "{ctx}: backward decay breaks the fitted envelope by {slack:.3e} \
                             at (s, t) = ({s:.2}, {t:.2})"
                        ));
                    }
                }
                pairs += 1;
            }
        }
    }
    Ok(format!(
        "{pairs} non-integer time pairs over 4 problems, both sides: intertwining \
         <= {worst_inter:.1e}, envelope slack >= {worst_slack:.1e}, grid match <= {worst_grid:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 7. Spectral flow equals the index on selfadjoint paths, and the endpoint
//    formula equals the signed crossing count.
// ---------------------------------------------------------------------------

fn c07_spectral_flow() -> Result<String, String> {
    let names = [
        "scalar-tanh",
        "scalar-plus-tanh",
        "flow-2d",
        "piecewise-diag-plus2",
        "tanh-diag-3d",
    ];
    let mut lines = Vec::new();
    for name in names {
        let problem = named_problem(name)?;
        let target =
            integer_target(&problem).ok_or_else(|| format!("{name}: no integer targets"))?;
        let (family, _, window, selfadjoint) = dynamics(&problem)?;
        if !selfadjoint {
            return Err(format!("{name}: the registry does not mark the path selfadjoint"));
        }
        let path = lift(name, SelfadjointPath::new(family.clone(), window as f64))?;
        let report = lift(name, spectral_flow(&path))?;
        if report.flow != target.index {
            return Err(format!(
                "{name}: spectral flow {} differs from the index {}",
                report.flow, target.index
            ));
        }
        if Some(report.flow) != target.flow {
            return Err(format!(
                "{name}: spectral flow {} differs from the frozen flow {:?}",
                report.flow, target.flow
            ));
        }
        let crossing_sum: i64 = report
            .crossings
            .iter()
            .map(|c| if c.upward { -1 } else { 1 })
            .sum();
        if crossing_sum != report.flow {
            return Err(format!(
                "{name}: signed crossing count {crossing_sum} differs from the endpoint \
                 flow {}",
                report.flow
            ));
        }
        lines.push(format!("{name} {:+}", report.flow));
    }
    Ok(format!(
        "flow = index = signed crossing count on {} paths: {}",
        lines.len(),
        lines.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 8. The index is invariant under randomized low-rank perturbations that
//    vanish at the window edge — 100 per base problem, within five minutes.
// ---------------------------------------------------------------------------

fn c08_perturbation() -> Result<String, String> {
    let start = Instant::now();
    let bases = [
        "scalar-tanh",
        "scalar-plus-tanh",
        "piecewise-diag-plus2",
        "mixed-channel-0",
        "flow-2d",
        "tanh-diag-3d",
        "autonomous-hyperbolic-4d",
    ];
    let mut runs = 0usize;
    for (bi, name) in bases.iter().enumerate() {
        let problem = named_problem(name)?;
        let target =
            integer_target(&problem).ok_or_else(|| format!("{name}: no integer targets"))?;
        let (family, _, window, _) = dynamics(&problem)?;
        let window = window.min(12);
        let d = family.dim();
        let cap = (d / 2).max(1);
        for i in 0..100u64 {
            let rank = (i as usize % cap) + 1;
            let seed = 0xACC8_0000 + 1000 * bi as u64 + i;
            let b = random_vanishing_perturbation(d, rank, 0.4, seed);
            let report = lift(name, perturbation_invariance(family, b, cap, window))?;
            if !report.invariant
                || report.base.index != target.index
                || report.perturbed.index != target.index
            {
                return Err(format!(
                    "{name}: index moved under perturbation seed {seed}: base {}, \
                     perturbed {}, expected {}",
                    report.base.index, report.perturbed.index, target.index
                ));
            }
            runs += 1;
        }
    }
    // High-dimensional spot check: two seeds on the 34-channel problem at its
    // registry window.
    {
        let name = "petrovskij-k8";
        let problem = named_problem(name)?;
        let target =
            integer_target(&problem).ok_or_else(|| format!("{name}: no integer targets"))?;
        let (family, _, window, _) = dynamics(&problem)?;
        for i in 0..2u64 {
            let b = random_vanishing_perturbation(family.dim(), 3, 0.4, 0xACC8_F000 + i);
            let report = lift(name, perturbation_invariance(family, b, 4, window.min(8)))?;
            if !report.invariant || report.base.index != target.index {
                return Err(format!(
                    "{name}: index moved under the spot-check perturbation {i}"
                ));
            }
            runs += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 300.0 {
        return Err(format!(
            "{runs} perturbations held the index but took {elapsed:.1}s, budget 300s"
        ));
    }
    Ok(format!(
        "{runs} randomized low-rank vanishing perturbations across 8 bases left the \
         index unchanged; {elapsed:.1}s < 300s"
    ))
}

// ---------------------------------------------------------------------------
// 9. Problems whose limits touch the critical circle are refused with an
//    explanatory message instead of an integer verdict.
// ---------------------------------------------------------------------------

fn c09_refusal() -> Result<String, String> {
    let cases = [("hill-elliptic", "contour"), ("center-2d", "hyperbolic")];
    let mut lines = Vec::new();
    for (name, needle) in cases {
        let problem = named_problem(name)?;
        let task = AnalysisTask::from(problem);
        let report = run_analysis(&task, &RunOptions::default());
        if report.verdict != Verdict::Pass {
            return Err(format!(
                "{name}: verdict {:?} instead of a structural refusal",
                report.verdict
            ));
        }
        if report.integers.is_some() {
            return Err(format!(
                "{name}: an integer summary was produced despite the refusal expectation"
            ));
        }
        let refusal = report
            .refusal
            .clone()
            .ok_or_else(|| format!("{name}: no refusal message recorded"))?;
        if !refusal.contains(needle) {
            return Err(format!(
                "{name}: refusal message {refusal:?} does not mention {needle:?}"
            ));
        }
        lines.push(format!("{name}: {refusal:?}"));
    }
    Ok(format!(
        "refused without emitting integers — {}",
        lines.join("; ")
    ))
}

// ---------------------------------------------------------------------------
// 10. The contour-quadrature projector matches the projector of an
//     eigendecomposition built by construction, on 50 random matrices.
// ---------------------------------------------------------------------------

fn c10_riesz() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51E52);
    let mut worst: f64 = 0.0;
    let mut largest = 0usize;
    for k in 0..50usize {
        let n = 2 + (k % 49);
        largest = largest.max(n);
        let raw = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = raw.qr().q();
        // Eigenvalues safely off the unit circle on both sides, random signs.
        let eigs: Vec<f64> = (0..n)
            .map(|_| {
                let magnitude = if rng.gen_bool(0.5) {
                    rng.gen_range(0.2..0.85)
                } else {
                    rng.gen_range(1.18..3.0)
                };
                if rng.gen_bool(0.5) {
                    -magnitude
                } else {
                    magnitude
                }
            })
            .collect();
        let m = &q * DMatrix::from_diagonal(&DVector::from_vec(eigs.clone())) * q.transpose();
        let mut exact = DMatrix::<f64>::zeros(n, n);
        for (j, &lambda) in eigs.iter().enumerate() {
            if lambda.abs() < 1.0 {
                let v = q.column(j).into_owned();
                exact += &v * v.transpose();
            }
        }
        let p = lift("riesz", riesz_projection(&m, 1.0, DEFAULT_CONTOUR_NODES))?;
        worst = worst.max(op_norm(&(p.matrix() - &exact)));
    }
    if worst > 1e-10 {
        return Err(format!(
            "worst projector deviation {worst:.3e} over 50 matrices, tolerance 1e-10"
        ));
    }
    Ok(format!(
        "50 random symmetric matrices (n up to {largest}): contour projector within \
         {worst:.1e} of the constructed eigenprojector (tolerance 1e-10)"
    ))
}
