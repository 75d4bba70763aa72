//! Plain-text plot tables extracted from a run report: space-separated
//! columns with `#` header comments, suitable for gnuplot or any column
//! reader.

use std::fmt::Write as _;

use dichotomy_lab::analyze::RunReport;
use dichotomy_lab::Error;

use crate::{CliError, PlotKind};

/// Render the requested table, or fail with the missing stage's name.
pub fn emit(report: &RunReport, what: PlotKind) -> Result<String, CliError> {
    match what {
        PlotKind::KernelProfile => kernel_profile(report),
        PlotKind::DichotomyDecay => dichotomy_decay(report),
        PlotKind::EigenvaluePath => eigenvalue_path(report),
    }
    .map_err(CliError::from)
}

fn missing(stage: &'static str) -> Error {
    Error::MissingStage { stage }
}

fn kernel_profile(report: &RunReport) -> Result<String, Error> {
    let samples = &report.plot.kernel_profile;
    if samples.is_empty() {
        return Err(missing("difference-index"));
    }
    let vectors = report
        .integers
        .as_ref()
        .map(|i| i.dim_kernel)
        .unwrap_or_default();
    let mut table = String::new();
    let _ = writeln!(
        table,
        "# {}: kernel profile — n, then {} kernel vector(s) sampled entrywise",
        report.problem, vectors
    );
    for sample in samples {
        let _ = write!(table, "{}", sample.n);
        for value in &sample.values {
            let _ = write!(table, " {value:.12e}");
        }
        table.push('\n');
    }
    Ok(table)
}

fn dichotomy_decay(report: &RunReport) -> Result<String, Error> {
    let samples = &report.plot.decay_profile;
    if samples.is_empty() {
        return Err(missing("decay-profile"));
    }
    let mut table = String::new();
    let _ = writeln!(
        table,
        "# {}: forward decay — offset, log restricted norm, log fitted envelope",
        report.problem
    );
    for sample in samples {
        let _ = writeln!(
            table,
            "{:.12e} {:.12e} {:.12e}",
            sample.delta, sample.log_norm, sample.log_bound
        );
    }
    Ok(table)
}

fn eigenvalue_path(report: &RunReport) -> Result<String, Error> {
    let flow = report.flow.as_ref().ok_or_else(|| missing("flow"))?;
    if flow.eigenvalue_path.is_empty() {
        return Err(missing("flow"));
    }
    let mut table = String::new();
    let _ = writeln!(
        table,
        "# {}: eigenvalue trajectories — t, then sorted eigenvalues (flow {})",
        report.problem, flow.flow
    );
    for (t, values) in &flow.eigenvalue_path {
        let _ = write!(table, "{t:.12e}");
        for value in values {
            let _ = write!(table, " {value:.12e}");
        }
        table.push('\n');
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dichotomy_lab::analyze::{PlotData, Verdict, REPORT_SCHEMA};

    fn empty_report() -> RunReport {
        RunReport {
            schema: REPORT_SCHEMA,
            problem: "fixture".into(),
            verdict: Verdict::Pass,
            stages: Vec::new(),
            expectation: None,
            integers: None,
            dichotomies: Vec::new(),
            theorem: None,
            flow: None,
            pair_profile: None,
            refusal: None,
            plot: PlotData::default(),
            timings: None,
        }
    }

    #[test]
    fn missing_stages_are_reported_by_name() {
        let report = empty_report();
        for (what, stage) in [
            (PlotKind::KernelProfile, "difference-index"),
            (PlotKind::DichotomyDecay, "decay-profile"),
            (PlotKind::EigenvaluePath, "flow"),
        ] {
            match emit(&report, what) {
                Err(CliError::Config(msg)) => assert!(msg.contains(stage), "{msg}"),
                other => panic!("expected missing-stage error, got {other:?}"),
            }
        }
    }

    #[test]
    fn decay_table_has_three_columns() {
        let mut report = empty_report();
        report.plot.decay_profile = vec![dichotomy_lab::analyze::DecaySample {
            delta: 1.0,
            log_norm: -1.0,
            log_bound: -0.5,
        }];
        let table = emit(&report, PlotKind::DichotomyDecay).unwrap();
        let data: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].split_whitespace().count(), 3);
    }
}
