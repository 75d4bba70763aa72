use std::fmt;

/// Library-wide error type.
///
/// Every integer-valued decision in this crate (ranks, defect numbers,
/// indices) is guarded: when the data does not support a clean decision the
/// operation refuses with one of the variants below instead of returning a
/// number that depends on round-off.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two subspaces or operators live in different ambient dimensions.
    AmbientMismatch { left: usize, right: usize },
    /// A matrix or vector has the wrong size for the operation.
    DimensionMismatch { expected: usize, got: usize },
    /// The singular value gap at the rank cut is too small to call the rank.
    RankAmbiguous { sigma_hi: f64, sigma_lo: f64 },
    /// An eigenvalue of the operator lies within tolerance of the contour.
    SpectrumOnContour { gap: f64 },
    /// The generator is not hyperbolic: some eigenvalue of exp(A) has
    /// modulus within tolerance of 1.
    NotHyperbolic { gap: f64 },
    /// `propagate` was asked to run backward in time.
    BackwardTime { t: f64, tau: f64 },
    /// A discrete family was queried at a non-integer time.
    NonIntegerTime { t: f64 },
    /// A discrete step outside the cached window was requested.
    OutsideWindow { n: i64 },
    /// Finite-time Lyapunov exponents show no usable gap across zero.
    NoSpectralGap { exponents: Vec<f64> },
    /// The coefficient family has no constant limit on the requested side.
    NotAsymptoticallyConstant,
    /// The coefficients are not periodic with the claimed period.
    NotPeriodic { period: i64 },
    /// Least-squares fit of dichotomy constants produced a non-positive rate.
    EstimateFailed,
    /// Stable/unstable frames fail to span a direct sum.
    SplitFailed,
    /// A requested time is missing from a record's grid.
    GridMismatch { at: i64 },
    /// A sampled function's step does not divide the unit grid spacing.
    GridMisaligned,
    /// Defect numbers were requested for a raw (unclosed) truncation.
    RawModeUnsupported,
    /// Defect numbers of the truncation changed between window sizes.
    UnstableTruncation {
        outer: (usize, usize),
        inner: (usize, usize),
    },
    /// An operation needed a dichotomy record that is not available.
    NoDichotomy,
    /// The perturbation does not vanish at the window edges.
    PerturbationNotVanishing { norm: f64 },
    /// The perturbation is not low-rank/decaying enough to count as compact.
    PerturbationNotCompact { rank: usize, cap: usize },
    /// A path endpoint has an eigenvalue within tolerance of zero.
    NonHyperbolicEndpoint { eigenvalue: f64 },
    /// A claimed selfadjoint path has a non-symmetric coefficient.
    NonSymmetric { defect: f64 },
    /// A piecewise pipeline endpoint generator is not hyperbolic.
    HyperbolicityRequired { side: &'static str, gap: f64 },
    /// A candidate projector is not idempotent at tolerance.
    ProjectorDefect { residual: f64 },
    /// Plot data was requested for a stage the report does not contain.
    MissingStage { stage: &'static str },
    /// Malformed problem specification or input file.
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::AmbientMismatch { left, right } => {
                write!(f, "ambient dimensions differ: {left} vs {right}")
            }
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::RankAmbiguous { sigma_hi, sigma_lo } => write!(
                f,
                "rank ambiguous: singular values {sigma_hi:.3e} / {sigma_lo:.3e} at the cut"
            ),
            Error::SpectrumOnContour { gap } => {
                write!(f, "spectrum within {gap:.3e} of the contour")
            }
            Error::NotHyperbolic { gap } => {
                write!(f, "generator not hyperbolic: unit-circle gap {gap:.3e}")
            }
            Error::BackwardTime { t, tau } => {
                write!(f, "backward propagation requested: t = {t} < tau = {tau}")
            }
            Error::NonIntegerTime { t } => {
                write!(f, "discrete family queried at non-integer time {t}")
            }
            Error::OutsideWindow { n } => {
                write!(f, "step at n = {n} lies outside the cached window")
            }
            Error::NoSpectralGap { exponents } => {
                write!(f, "no Lyapunov gap across zero in {exponents:?}")
            }
            Error::NotAsymptoticallyConstant => {
                write!(f, "coefficients are not asymptotically constant")
            }
            Error::NotPeriodic { period } => {
                write!(f, "coefficients are not periodic with period {period}")
            }
            Error::EstimateFailed => {
                write!(f, "numerical estimate failed: data degenerate or inconsistent")
            }
            Error::SplitFailed => write!(f, "stable/unstable frames do not split the space"),
            Error::GridMismatch { at } => write!(f, "time {at} is not on the record grid"),
            Error::GridMisaligned => write!(f, "sample step does not divide the unit grid"),
            Error::RawModeUnsupported => {
                write!(f, "defect numbers require a boundary-closed truncation")
            }
            Error::UnstableTruncation { outer, inner } => write!(
                f,
                "truncation unstable: defect numbers {outer:?} at N vs {inner:?} at N-2"
            ),
            Error::NoDichotomy => write!(f, "no dichotomy record available"),
            Error::PerturbationNotVanishing { norm } => {
                write!(f, "perturbation norm {norm:.3e} at the window edge")
            }
            Error::PerturbationNotCompact { rank, cap } => {
                write!(f, "perturbation rank {rank} exceeds compactness cap {cap}")
            }
            Error::NonHyperbolicEndpoint { eigenvalue } => {
                write!(f, "path endpoint eigenvalue {eigenvalue:.3e} too close to zero")
            }
            Error::NonSymmetric { defect } => {
                write!(f, "coefficient not symmetric: defect {defect:.3e}")
            }
            Error::HyperbolicityRequired { side, gap } => {
                write!(f, "{side} endpoint generator not hyperbolic (gap {gap:.3e})")
            }
            Error::ProjectorDefect { residual } => {
                write!(f, "projector defect: |P^2 - P| = {residual:.3e}")
            }
            Error::MissingStage { stage } => {
                write!(f, "report does not contain stage '{stage}'")
            }
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    /// True for errors that mean "the pipeline refuses to produce an index
    /// here" as opposed to a misuse of the API.
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            Error::RankAmbiguous { .. }
                | Error::SpectrumOnContour { .. }
                | Error::NotHyperbolic { .. }
                | Error::NoSpectralGap { .. }
                | Error::UnstableTruncation { .. }
                | Error::HyperbolicityRequired { .. }
                | Error::NonHyperbolicEndpoint { .. }
                | Error::EstimateFailed
        )
    }
}
