//! One-problem analysis pipeline: dichotomies on both half-lines, the index
//! crosscheck, the optional spectral-flow stage, and a consolidated report
//! with a consistency verdict and plot-ready data arrays.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dichotomy::{halfline_dichotomy, verify_dichotomy, DichotomyCheck, DichotomyRecord};
use crate::error::Error;
use crate::evolution::{discretize, EvolutionFamily, StepWindow};
use crate::flow::{commensurability_check, spectral_flow, CommensurabilityReport, FlowReport, SelfadjointPath};
use crate::fredholm::{dichotomy_theorem_verify, Boundary, TheoremReport, TruncatedD};
use crate::numerics::{op_norm, DICHOTOMY_VERIFY_TOL};
use crate::problems::{Expectation, Problem, ProblemKind};

/// Singular values of the projector difference below this mark count as
/// "near zero" for the commensurability verdict.
const COMMENSURABILITY_TOL: f64 = 1e-3;

/// Knobs a caller may override per run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Replace the problem's analysis window.
    pub window_override: Option<i64>,
    /// Replace the integrator step of continuous families.
    pub rk4_step: Option<f64>,
    /// Tolerance for the a-posteriori dichotomy verification.
    pub verify_tol: f64,
    /// Record wall-clock stage timings in the report (off by default so
    /// reports stay byte-for-byte deterministic).
    pub timings: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            window_override: None,
            rk4_step: None,
            verify_tol: DICHOTOMY_VERIFY_TOL,
            timings: false,
        }
    }
}

/// A unit of work for [`run`]: either a registry entry or a caller-supplied
/// problem without frozen expectations.
#[derive(Clone)]
pub struct AnalysisTask {
    pub name: String,
    pub kind: ProblemKind,
    pub expectation: Option<Expectation>,
}

impl From<Problem> for AnalysisTask {
    fn from(problem: Problem) -> Self {
        Self {
            name: problem.name.to_string(),
            kind: problem.kind,
            expectation: Some(problem.expectation),
        }
    }
}

/// How one pipeline stage ended.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    /// Completed normally.
    Ok,
    /// Stopped with a structural refusal (no trustworthy number exists).
    Refused { message: String },
    /// Stopped with an error that marks a genuine defect.
    Failed { message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: StageStatus,
}

/// Wall-clock duration of one stage, opt-in via [`RunOptions::timings`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub milliseconds: u64,
}

/// Summary of one half-line dichotomy record plus its verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomySummary {
    pub side: String,
    pub method: String,
    pub rank: usize,
    pub bound: f64,
    pub rate: f64,
    pub sup_projector_norm: f64,
    pub check: DichotomyCheck,
}

/// The headline integers of a completed run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegerSummary {
    pub rank_minus: usize,
    pub rank_plus: usize,
    pub dim_kernel: usize,
    pub codim_image: usize,
    pub index: i64,
    pub flow: Option<i64>,
}

/// One grid slice of the kernel basis: the values of every kernel vector at
/// time n, flattened vector-by-vector (d entries per kernel vector).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSample {
    pub n: i64,
    pub values: Vec<f64>,
}

/// One point of the forward decay curve on the plus half-line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecaySample {
    /// Time offset from the half-line base.
    pub delta: f64,
    /// ln ‖U(delta, 0) restricted to the forward-decaying bundle‖.
    pub log_norm: f64,
    /// ln of the fitted envelope M e^{-rate · delta} at the same offset.
    pub log_bound: f64,
}

/// Plot-ready arrays extracted from the run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlotData {
    pub kernel_profile: Vec<KernelSample>,
    pub decay_profile: Vec<DecaySample>,
}

/// Final consistency verdict of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Everything the problem promised was delivered: all indices agree and
    /// match the frozen expectation (or, for refusal problems, the pipeline
    /// refused structurally).
    Pass,
    /// The pipeline refused on a problem without a refusal expectation.
    Refused,
    /// Numbers were produced but disagree, or a stage failed outright.
    Fail,
}

/// Consolidated result of one analysis run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub problem: String,
    pub verdict: Verdict,
    pub stages: Vec<StageReport>,
    pub expectation: Option<Expectation>,
    pub integers: Option<IntegerSummary>,
    pub dichotomies: Vec<DichotomySummary>,
    pub theorem: Option<TheoremReport>,
    pub flow: Option<FlowReport>,
    pub pair_profile: Option<CommensurabilityReport>,
    /// Display text of the structural refusal, when one occurred.
    pub refusal: Option<String>,
    pub plot: PlotData,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<StageTiming>>,
}

/// Report schema version written by this crate.
pub const REPORT_SCHEMA: u32 = 1;

struct StageLog {
    stages: Vec<StageReport>,
    timings: Vec<StageTiming>,
    record_timings: bool,
    refusal: Option<String>,
    failed: bool,
}

impl StageLog {
    fn new(record_timings: bool) -> Self {
        Self {
            stages: Vec::new(),
            timings: Vec::new(),
            record_timings,
            refusal: None,
            failed: false,
        }
    }

    /// Run one stage, recording status and (optionally) timing. Returns the
    /// stage value on success, None after a refusal or failure.
    fn run<T>(
        &mut self,
        stage: &str,
        body: impl FnOnce() -> Result<T, Error>,
    ) -> Option<T> {
        let started = Instant::now();
        let outcome = body();
        if self.record_timings {
            self.timings.push(StageTiming {
                stage: stage.to_string(),
                milliseconds: started.elapsed().as_millis() as u64,
            });
        }
        match outcome {
            Ok(value) => {
                self.stages.push(StageReport {
                    stage: stage.to_string(),
                    status: StageStatus::Ok,
                });
                Some(value)
            }
            Err(err) => {
                let message = err.to_string();
                if err.is_refusal() {
                    self.refusal = Some(message.clone());
                    self.stages.push(StageReport {
                        stage: stage.to_string(),
                        status: StageStatus::Refused { message },
                    });
                } else {
                    self.failed = true;
                    self.stages.push(StageReport {
                        stage: stage.to_string(),
                        status: StageStatus::Failed { message },
                    });
                }
                None
            }
        }
    }
}

/// Run the full pipeline for one task.
pub fn run(task: &AnalysisTask, options: &RunOptions) -> RunReport {
    match &task.kind {
        ProblemKind::Dynamics {
            family,
            method,
            window,
            selfadjoint,
        } => {
            let window = options.window_override.unwrap_or(*window);
            let family = match options.rk4_step {
                Some(h) => family.clone().with_step(h),
                None => family.clone(),
            };
            run_dynamics(task, &family, method, window, *selfadjoint, options)
        }
        ProblemKind::ProjectorPair { first, second } => {
            let mut log = StageLog::new(options.timings);
            let profile = log.run("commensurability", || commensurability_check(first, second));
            let verdict = match (&profile, &task.expectation) {
                (Some(report), Some(Expectation::PairProfile { index, commensurable })) => {
                    if report.consistent
                        && report.pair.index == *index
                        && report.commensurable_at(COMMENSURABILITY_TOL) == *commensurable
                    {
                        Verdict::Pass
                    } else {
                        Verdict::Fail
                    }
                }
                (Some(report), None) => {
                    if report.consistent {
                        Verdict::Pass
                    } else {
                        Verdict::Fail
                    }
                }
                (Some(_), Some(_)) => Verdict::Fail,
                (None, _) => Verdict::Fail,
            };
            RunReport {
                schema: REPORT_SCHEMA,
                problem: task.name.clone(),
                verdict,
                stages: log.stages,
                expectation: task.expectation.clone(),
                integers: None,
                dichotomies: Vec::new(),
                theorem: None,
                flow: None,
                pair_profile: profile,
                refusal: log.refusal,
                plot: PlotData::default(),
                timings: options.timings.then_some(log.timings),
            }
        }
    }
}

fn run_dynamics(
    task: &AnalysisTask,
    family: &EvolutionFamily,
    method: &crate::dichotomy::Method,
    window: i64,
    selfadjoint: bool,
    options: &RunOptions,
) -> RunReport {
    let mut log = StageLog::new(options.timings);
    let mut dichotomies = Vec::new();
    let mut integers = None;
    let mut theorem = None;
    let mut flow_report = None;
    let mut plot = PlotData::default();

    let minus = log.run("dichotomy-minus", || {
        let record = halfline_dichotomy(family, crate::dichotomy::Side::Minus, method, window)?;
        let steps = discretize(family, record.grid_start(), record.grid_end())?;
        let check = verify_dichotomy(&steps, &record, options.verify_tol)?;
        dichotomies.push(summarize(&record, check));
        Ok(record)
    });
    let plus = minus.as_ref().and_then(|_| {
        log.run("dichotomy-plus", || {
            let record =
                halfline_dichotomy(family, crate::dichotomy::Side::Plus, method, window)?;
            let steps = discretize(family, record.grid_start(), record.grid_end())?;
            let check = verify_dichotomy(&steps, &record, options.verify_tol)?;
            dichotomies.push(summarize(&record, check));
            Ok(record)
        })
    });

    if let (Some(minus), Some(plus)) = (minus, plus) {
        plot.decay_profile = log
            .run("decay-profile", || {
                let steps = discretize(family, 0, plus.grid_end())?;
                image_decay_profile(&steps, &plus)
            })
            .unwrap_or_default();

        let kernel = log.run("difference-index", || {
            let truncated = TruncatedD::new(family, minus.clone(), plus.clone(), window)?;
            let (numbers, kernel) = truncated.index_of_d(Boundary::Closed)?;
            Ok((numbers, kernel))
        });
        if let Some((_, kernel)) = &kernel {
            plot.kernel_profile = kernel_profile(kernel, window, family.dim());
        }

        let rank_minus = minus.rank();
        let rank_plus = plus.rank();
        let verified = log.run("theorem", || {
            dichotomy_theorem_verify(family, minus, plus, window)
        });
        if let Some(report) = verified {
            let flow_value = if selfadjoint {
                log.run("flow", || {
                    let path = SelfadjointPath::new(family.clone(), window as f64)?;
                    spectral_flow(&path)
                })
                .inspect(|report| flow_report = Some(report.clone()))
                .map(|report| report.flow)
            } else {
                None
            };
            integers = Some(IntegerSummary {
                rank_minus,
                rank_plus,
                dim_kernel: report.difference.dim_kernel,
                codim_image: report.difference.codim_image,
                index: report.difference.index,
                flow: flow_value,
            });
            theorem = Some(report);
        }
    }

    let verdict = dynamics_verdict(task, selfadjoint, &log, &integers, &theorem);
    RunReport {
        schema: REPORT_SCHEMA,
        problem: task.name.clone(),
        verdict,
        stages: log.stages,
        expectation: task.expectation.clone(),
        integers,
        dichotomies,
        theorem,
        flow: flow_report,
        pair_profile: None,
        refusal: log.refusal,
        plot,
        timings: options.timings.then_some(log.timings),
    }
}

fn dynamics_verdict(
    task: &AnalysisTask,
    selfadjoint: bool,
    log: &StageLog,
    integers: &Option<IntegerSummary>,
    theorem: &Option<TheoremReport>,
) -> Verdict {
    if log.failed {
        return Verdict::Fail;
    }
    match &task.expectation {
        Some(Expectation::Refusal) => {
            if log.refusal.is_some() {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        Some(Expectation::Integers {
            rank_plus,
            dim_kernel,
            codim_image,
            index,
            flow,
        }) => match (integers, theorem) {
            (Some(got), Some(theorem)) => {
                let matches = theorem.consistent
                    && got.rank_plus == *rank_plus
                    && got.dim_kernel == *dim_kernel
                    && got.codim_image == *codim_image
                    && got.index == *index
                    && got.flow == *flow;
                if matches {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                }
            }
            _ => Verdict::Fail,
        },
        Some(Expectation::PairProfile { .. }) => Verdict::Fail,
        None => match (integers, theorem) {
            (Some(got), Some(theorem)) => {
                let flow_agrees = !selfadjoint || got.flow == Some(got.index);
                if theorem.consistent && flow_agrees {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                }
            }
            _ => {
                if log.refusal.is_some() {
                    Verdict::Refused
                } else {
                    Verdict::Fail
                }
            }
        },
    }
}

fn summarize(record: &DichotomyRecord, check: DichotomyCheck) -> DichotomySummary {
    DichotomySummary {
        side: record.side().label().to_string(),
        method: record.method().to_string(),
        rank: record.rank(),
        bound: record.bound(),
        rate: record.rate(),
        sup_projector_norm: record.sup_projector_norm(),
        check,
    }
}

/// Slice a kernel basis (rows grouped in d-blocks per time) into per-time
/// samples, flattened vector by vector.
fn kernel_profile(kernel: &nalgebra::DMatrix<f64>, window: i64, dim: usize) -> Vec<KernelSample> {
    let vectors = kernel.ncols();
    let mut samples = Vec::new();
    for n in -window..=window {
        let base = ((n + window) as usize) * dim;
        let mut values = Vec::with_capacity(dim * vectors);
        for j in 0..vectors {
            for i in 0..dim {
                values.push(kernel[(base + i, j)]);
            }
        }
        samples.push(KernelSample { n, values });
    }
    samples
}

/// Forward decay curve of the plus-side bundle anchored at the base time,
/// composed step by step in orthonormal fiber coordinates so that long
/// products stay uncontaminated.
fn image_decay_profile(
    steps: &StepWindow,
    record: &DichotomyRecord,
) -> Result<Vec<DecaySample>, Error> {
    let rank = record.rank();
    if rank == 0 {
        return Ok(Vec::new());
    }
    let start = record.grid_start();
    let end = record.grid_end();
    let mut acc = nalgebra::DMatrix::<f64>::identity(rank, rank);
    let mut samples = Vec::new();
    for n in start..end {
        let from = record.projector_at(n)?.image()?;
        let to = record.projector_at(n + 1)?.image()?;
        let restricted = to.basis().transpose() * steps.step(n)? * from.basis();
        acc = restricted * acc;
        let delta = (n + 1 - start) as f64;
        samples.push(DecaySample {
            delta,
            log_norm: op_norm(&acc).max(f64::MIN_POSITIVE).ln(),
            log_bound: record.bound().ln() - record.rate() * delta,
        });
    }
    Ok(samples)
}
