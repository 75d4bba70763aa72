//! TOML problem specs: either a builtin registry id (with optional
//! overrides) or an inline family given as piecewise constant matrices or a
//! coefficient CSV path.
//!
//! ```toml
//! # A builtin, window shortened:
//! problem = "scalar-tanh"
//! window = 10
//!
//! # An inline piecewise-constant family:
//! [family]
//! kind = "piecewise"
//! a_minus = [[1.0]]
//! a_plus = [[-1.0]]
//! ```

use nalgebra::DMatrix;
use serde::Deserialize;

use dichotomy_lab::analyze::{AnalysisTask, RunOptions};
use dichotomy_lab::dichotomy::Method;
use dichotomy_lab::evolution::{family_from_coefficient_csv, EvolutionFamily};
use dichotomy_lab::problems::{find, ProblemKind};

use crate::CliError;

/// Analysis window used when an inline spec does not choose one.
const INLINE_DEFAULT_WINDOW: i64 = 12;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    /// Builtin registry id. Mutually exclusive with `family`.
    problem: Option<String>,
    /// Inline family. Mutually exclusive with `problem`.
    family: Option<FamilySpec>,
    /// Report label for inline families (default "custom").
    name: Option<String>,
    /// Analysis window override (half-width of the integer grid).
    window: Option<i64>,
    /// Dichotomy method: "spectral-limit", "qr-product", or "floquet".
    method: Option<String>,
    /// Coefficient period, required by (and only by) the floquet method.
    period: Option<i64>,
    /// Run the spectral-flow stage (coefficients must be symmetric).
    selfadjoint: Option<bool>,
    tolerances: Option<ToleranceSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilySpec {
    /// "piecewise" (inline matrices) or "csv" (coefficient table path).
    kind: String,
    /// Generator left of t = 0, row-major. Piecewise only.
    a_minus: Option<Vec<Vec<f64>>>,
    /// Generator right of t = 0, row-major. Piecewise only.
    a_plus: Option<Vec<Vec<f64>>>,
    /// Coefficient CSV path (rows `t, a11, …, add`). CSV only.
    path: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ToleranceSpec {
    /// A-posteriori dichotomy verification tolerance.
    dichotomy_verify: Option<f64>,
    /// Integrator step for continuous coefficient families.
    rk4_step: Option<f64>,
}

fn config(message: impl Into<String>) -> CliError {
    CliError::Config(message.into())
}

/// Parse a TOML spec into a runnable task plus run options.
pub fn parse_spec(text: &str) -> Result<(AnalysisTask, RunOptions), CliError> {
    let mut spec: SpecFile =
        toml::from_str(text).map_err(|err| config(format!("malformed spec: {err}")))?;

    let tolerances = spec.tolerances.take().unwrap_or_default();
    let mut options = RunOptions {
        window_override: spec.window,
        rk4_step: tolerances.rk4_step,
        ..RunOptions::default()
    };
    if let Some(tol) = tolerances.dichotomy_verify {
        if !(tol > 0.0) {
            return Err(config("tolerances.dichotomy_verify must be positive"));
        }
        options.verify_tol = tol;
    }
    if let Some(h) = tolerances.rk4_step {
        if !(h > 0.0 && h <= 1.0) {
            return Err(config("tolerances.rk4_step must lie in (0, 1]"));
        }
    }
    if let Some(window) = spec.window {
        if window < 2 {
            return Err(config("window must be at least 2"));
        }
    }

    let task = match (&spec.problem, &spec.family) {
        (Some(_), Some(_)) => {
            return Err(config("specify either 'problem' or 'family', not both"))
        }
        (None, None) => return Err(config("spec needs a 'problem' id or a [family] block")),
        (Some(id), None) => builtin_task(id, &spec)?,
        (None, Some(family)) => inline_task(family, &spec)?,
    };
    Ok((task, options))
}

/// A builtin id plus optional method/selfadjoint overrides. The frozen
/// expectation is kept, so overrides that change what the pipeline can
/// deliver (e.g. disabling the flow stage of a selfadjoint fixture) are
/// reported as failures rather than silently accepted.
fn builtin_task(id: &str, spec: &SpecFile) -> Result<AnalysisTask, CliError> {
    let problem = find(id).ok_or_else(|| {
        config(format!(
            "unknown builtin problem '{id}'; run `dichotomy-lab list-problems`"
        ))
    })?;
    let mut kind = problem.kind;
    match &mut kind {
        ProblemKind::Dynamics {
            method,
            selfadjoint,
            ..
        } => {
            if let Some(name) = &spec.method {
                *method = parse_method(name, spec.period)?;
            } else if spec.period.is_some() {
                return Err(config("'period' is only meaningful with method = \"floquet\""));
            }
            if let Some(flag) = spec.selfadjoint {
                *selfadjoint = flag;
            }
        }
        ProblemKind::ProjectorPair { .. } => {
            if spec.window.is_some()
                || spec.method.is_some()
                || spec.period.is_some()
                || spec.selfadjoint.is_some()
            {
                return Err(config(format!(
                    "'{id}' is a projector-pair fixture; window/method/selfadjoint do not apply"
                )));
            }
        }
    }
    Ok(AnalysisTask {
        name: problem.name.to_string(),
        kind,
        expectation: Some(problem.expectation),
    })
}

fn inline_task(family: &FamilySpec, spec: &SpecFile) -> Result<AnalysisTask, CliError> {
    let family = build_family(family)?;
    let method = match &spec.method {
        Some(name) => parse_method(name, spec.period)?,
        None => {
            if spec.period.is_some() {
                return Err(config("'period' is only meaningful with method = \"floquet\""));
            }
            Method::SpectralLimit
        }
    };
    Ok(AnalysisTask {
        name: spec.name.clone().unwrap_or_else(|| "custom".to_string()),
        kind: ProblemKind::Dynamics {
            family,
            method,
            window: spec.window.unwrap_or(INLINE_DEFAULT_WINDOW),
            selfadjoint: spec.selfadjoint.unwrap_or(false),
        },
        expectation: None,
    })
}

fn build_family(family: &FamilySpec) -> Result<EvolutionFamily, CliError> {
    match family.kind.as_str() {
        "piecewise" => {
            if family.path.is_some() {
                return Err(config("family.path does not apply to kind = \"piecewise\""));
            }
            let a_minus = matrix_from_rows(
                family
                    .a_minus
                    .as_ref()
                    .ok_or_else(|| config("piecewise family needs family.a_minus"))?,
                "family.a_minus",
            )?;
            let a_plus = matrix_from_rows(
                family
                    .a_plus
                    .as_ref()
                    .ok_or_else(|| config("piecewise family needs family.a_plus"))?,
                "family.a_plus",
            )?;
            if a_minus.nrows() != a_plus.nrows() {
                return Err(config(format!(
                    "family.a_minus is {0}x{0} but family.a_plus is {1}x{1}",
                    a_minus.nrows(),
                    a_plus.nrows()
                )));
            }
            Ok(EvolutionFamily::piecewise_constant(a_minus, a_plus))
        }
        "csv" => {
            if family.a_minus.is_some() || family.a_plus.is_some() {
                return Err(config(
                    "family.a_minus/a_plus do not apply to kind = \"csv\"",
                ));
            }
            let path = family
                .path
                .as_ref()
                .ok_or_else(|| config("csv family needs family.path"))?;
            let file = std::fs::File::open(path)
                .map_err(|err| config(format!("cannot open {path}: {err}")))?;
            family_from_coefficient_csv(file).map_err(CliError::from)
        }
        other => Err(config(format!(
            "unknown family kind '{other}' (expected \"piecewise\" or \"csv\")"
        ))),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], label: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 {
        return Err(config(format!("{label} must not be empty")));
    }
    if rows.iter().any(|row| row.len() != n) {
        return Err(config(format!("{label} must be a square row-major matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn parse_method(name: &str, period: Option<i64>) -> Result<Method, CliError> {
    match name {
        "spectral-limit" => {
            if period.is_some() {
                return Err(config("'period' is only meaningful with method = \"floquet\""));
            }
            Ok(Method::SpectralLimit)
        }
        "qr-product" => {
            if period.is_some() {
                return Err(config("'period' is only meaningful with method = \"floquet\""));
            }
            Ok(Method::QrProduct)
        }
        "floquet" => {
            let period =
                period.ok_or_else(|| config("method = \"floquet\" requires 'period'"))?;
            if period < 1 {
                return Err(config("'period' must be a positive integer"));
            }
            Ok(Method::Floquet { period })
        }
        other => Err(config(format!(
            "unknown method '{other}' (expected \"spectral-limit\", \"qr-product\", or \"floquet\")"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_of(text: &str) -> String {
        match parse_spec(text) {
            Err(CliError::Config(msg)) => msg,
            Err(other) => panic!("expected config error, got {other:?}"),
            Ok(_) => panic!("expected config error, got a task"),
        }
    }

    #[test]
    fn builtin_spec_resolves() {
        let (task, options) = parse_spec("problem = \"scalar-tanh\"\n").unwrap();
        assert_eq!(task.name, "scalar-tanh");
        assert!(task.expectation.is_some());
        assert!(options.window_override.is_none());
        assert!(!options.timings);
    }

    #[test]
    fn window_and_tolerances_land_in_options() {
        let text = r#"
            problem = "scalar-tanh"
            window = 9

            [tolerances]
            dichotomy_verify = 1e-5
            rk4_step = 0.005
        "#;
        let (_, options) = parse_spec(text).unwrap();
        assert_eq!(options.window_override, Some(9));
        assert_eq!(options.verify_tol, 1e-5);
        assert_eq!(options.rk4_step, Some(0.005));
    }

    #[test]
    fn inline_piecewise_spec_builds_a_family() {
        let text = r#"
            name = "sign-flip"

            [family]
            kind = "piecewise"
            a_minus = [[1.0, 0.0], [0.0, 2.0]]
            a_plus = [[-1.0, 0.0], [0.0, -2.0]]
        "#;
        let (task, _) = parse_spec(text).unwrap();
        assert_eq!(task.name, "sign-flip");
        assert!(task.expectation.is_none());
        match task.kind {
            ProblemKind::Dynamics { family, window, selfadjoint, .. } => {
                assert_eq!(family.dim(), 2);
                assert_eq!(window, INLINE_DEFAULT_WINDOW);
                assert!(!selfadjoint);
            }
            _ => panic!("expected a dynamics task"),
        }
    }

    #[test]
    fn rejects_both_problem_and_family() {
        let text = r#"
            problem = "scalar-tanh"

            [family]
            kind = "piecewise"
            a_minus = [[1.0]]
            a_plus = [[-1.0]]
        "#;
        assert!(err_of(text).contains("not both"));
    }

    #[test]
    fn rejects_unknown_builtin_and_unknown_keys() {
        assert!(err_of("problem = \"no-such\"\n").contains("unknown builtin"));
        assert!(err_of("problem = \"scalar-tanh\"\nbogus = 1\n").contains("malformed spec"));
    }

    #[test]
    fn rejects_non_square_matrix() {
        let text = r#"
            [family]
            kind = "piecewise"
            a_minus = [[1.0, 2.0]]
            a_plus = [[-1.0]]
        "#;
        assert!(err_of(text).contains("square"));
    }

    #[test]
    fn rejects_floquet_without_period_and_stray_period() {
        let base = r#"
            [family]
            kind = "piecewise"
            a_minus = [[1.0]]
            a_plus = [[-1.0]]
        "#;
        let floquet = format!("method = \"floquet\"\n{base}");
        assert!(err_of(&floquet).contains("requires 'period'"));
        let stray = format!("period = 2\n{base}");
        assert!(err_of(&stray).contains("only meaningful"));
    }

    #[test]
    fn rejects_dynamics_overrides_on_pair_fixture() {
        assert!(err_of("problem = \"block-pair\"\nwindow = 10\n").contains("projector-pair"));
    }
}
