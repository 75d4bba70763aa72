//! Evolution families U(t, τ) for u'(t) = A(t) u(t): forward propagation,
//! discretization to unit steps, and overflow-safe long products.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{rk4_propagate, DEFAULT_RK4_STEP};

/// Matrix-valued coefficient rule t ↦ A(t).
pub type CoeffFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

const INTEGER_TOL: f64 = 1e-9;

fn as_integer(t: f64) -> Result<i64> {
    let n = t.round();
    if (t - n).abs() > INTEGER_TOL {
        return Err(Error::NonIntegerTime { t });
    }
    Ok(n as i64)
}

/// Cached unit steps U(n+1, n) for n in [start, end).
#[derive(Debug, Clone)]
pub struct StepWindow {
    start: i64,
    steps: Vec<DMatrix<f64>>,
}

impl StepWindow {
    pub fn new(start: i64, steps: Vec<DMatrix<f64>>) -> Result<Self> {
        let dim = steps.first().map(|s| s.nrows()).unwrap_or(0);
        for s in &steps {
            if s.nrows() != dim || s.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.nrows(),
                });
            }
        }
        Ok(Self { start, steps })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.start + self.steps.len() as i64
    }

    pub fn dim(&self) -> usize {
        self.steps.first().map(|s| s.nrows()).unwrap_or(0)
    }

    /// The unit step U(n+1, n).
    pub fn step(&self, n: i64) -> Result<&DMatrix<f64>> {
        if n < self.start || n >= self.end() {
            return Err(Error::OutsideWindow { n });
        }
        Ok(&self.steps[(n - self.start) as usize])
    }

    /// Plain product U(n, m) = U(n, n-1) ⋯ U(m+1, m) for window times
    /// m <= n. Safe only when the product is representable; long windows
    /// should go through [`long_product`].
    pub fn product(&self, n: i64, m: i64) -> Result<DMatrix<f64>> {
        if n < m {
            return Err(Error::BackwardTime {
                t: n as f64,
                tau: m as f64,
            });
        }
        let d = self.dim();
        let mut acc = DMatrix::identity(d, d);
        for k in m..n {
            acc = self.step(k)? * acc;
        }
        Ok(acc)
    }

    /// Restrict to the sub-window [lo, hi).
    pub fn slice(&self, lo: i64, hi: i64) -> Result<StepWindow> {
        if lo < self.start || hi > self.end() || lo > hi {
            return Err(Error::OutsideWindow { n: lo });
        }
        let a = (lo - self.start) as usize;
        let b = (hi - self.start) as usize;
        StepWindow::new(lo, self.steps[a..b].to_vec())
    }
}

/// How the family is generated.
#[derive(Clone)]
pub enum FamilyKind {
    /// Explicit unit steps on a window.
    Discrete(StepWindow),
    /// Continuous coefficients propagated by fixed-step RK4. Optional
    /// explicit limit matrices (minus, plus) mark the family as
    /// asymptotically constant.
    Continuous {
        coeff: CoeffFn,
        step: f64,
        limits: Option<(DMatrix<f64>, DMatrix<f64>)>,
    },
    /// Piecewise-constant generator (A₋ left of the switch, A₊ right of it)
    /// plus an optional perturbation B(t). Without B the propagator is an
    /// exact matrix exponential composition; with B each side is integrated
    /// by RK4 applied to the full coefficient A₀(t) + B(t).
    PiecewiseConstant {
        a_minus: DMatrix<f64>,
        a_plus: DMatrix<f64>,
        switch: f64,
        perturbation: Option<CoeffFn>,
        step: f64,
    },
}

/// A forward evolution family on the line.
#[derive(Clone)]
pub struct EvolutionFamily {
    dim: usize,
    kind: FamilyKind,
}

impl EvolutionFamily {
    pub fn from_steps(window: StepWindow) -> Self {
        Self {
            dim: window.dim(),
            kind: FamilyKind::Discrete(window),
        }
    }

    pub fn continuous(dim: usize, coeff: CoeffFn) -> Self {
        Self {
            dim,
            kind: FamilyKind::Continuous {
                coeff,
                step: DEFAULT_RK4_STEP,
                limits: None,
            },
        }
    }

    pub fn continuous_with_limits(
        dim: usize,
        coeff: CoeffFn,
        a_minus: DMatrix<f64>,
        a_plus: DMatrix<f64>,
    ) -> Self {
        Self {
            dim,
            kind: FamilyKind::Continuous {
                coeff,
                step: DEFAULT_RK4_STEP,
                limits: Some((a_minus, a_plus)),
            },
        }
    }

    pub fn piecewise_constant(a_minus: DMatrix<f64>, a_plus: DMatrix<f64>) -> Self {
        let dim = a_minus.nrows();
        Self {
            dim,
            kind: FamilyKind::PiecewiseConstant {
                a_minus,
                a_plus,
                switch: 0.0,
                perturbation: None,
                step: DEFAULT_RK4_STEP,
            },
        }
    }

    pub fn autonomous(a: DMatrix<f64>) -> Self {
        Self::piecewise_constant(a.clone(), a)
    }

    pub fn piecewise_perturbed(
        a_minus: DMatrix<f64>,
        a_plus: DMatrix<f64>,
        perturbation: CoeffFn,
    ) -> Self {
        let dim = a_minus.nrows();
        Self {
            dim,
            kind: FamilyKind::PiecewiseConstant {
                a_minus,
                a_plus,
                switch: 0.0,
                perturbation: Some(perturbation),
                step: DEFAULT_RK4_STEP,
            },
        }
    }

    /// Override the nominal RK4 step (continuous kinds only).
    pub fn with_step(mut self, h: f64) -> Self {
        match &mut self.kind {
            FamilyKind::Continuous { step, .. } => *step = h,
            FamilyKind::PiecewiseConstant { step, .. } => *step = h,
            FamilyKind::Discrete(_) => {}
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    /// The coefficient A(t) (plus perturbation) when a rule is available.
    pub fn coefficient(&self, t: f64) -> Option<DMatrix<f64>> {
        match &self.kind {
            FamilyKind::Discrete(_) => None,
            FamilyKind::Continuous { coeff, .. } => Some(coeff(t)),
            FamilyKind::PiecewiseConstant {
                a_minus,
                a_plus,
                switch,
                perturbation,
                ..
            } => {
                let base = if t < *switch { a_minus } else { a_plus };
                let mut a = base.clone();
                if let Some(b) = perturbation {
                    a += b(t);
                }
                Some(a)
            }
        }
    }

    /// Integration step for continuous kinds.
    pub fn rk4_step(&self) -> f64 {
        match &self.kind {
            FamilyKind::Continuous { step, .. } => *step,
            FamilyKind::PiecewiseConstant { step, .. } => *step,
            FamilyKind::Discrete(_) => 1.0,
        }
    }

    /// Forward propagator U(t, τ), t >= τ. Satisfies U(t, t) = I exactly and
    /// the cocycle identity U(t, τ) = U(t, s) U(s, τ) up to integrator error.
    pub fn propagate(&self, t: f64, tau: f64) -> Result<DMatrix<f64>> {
        if t < tau - INTEGER_TOL {
            return Err(Error::BackwardTime { t, tau });
        }
        if (t - tau).abs() <= INTEGER_TOL * (1.0 + t.abs().max(tau.abs())) {
            return Ok(DMatrix::identity(self.dim, self.dim));
        }
        match &self.kind {
            FamilyKind::Discrete(window) => {
                let n = as_integer(t)?;
                let m = as_integer(tau)?;
                window.product(n, m)
            }
            FamilyKind::Continuous { coeff, step, .. } => {
                Ok(rk4_propagate(&**coeff, tau, t, *step, self.dim))
            }
            FamilyKind::PiecewiseConstant {
                a_minus,
                a_plus,
                switch,
                perturbation,
                step,
            } => {
                let mut segments: Vec<(f64, f64, &DMatrix<f64>)> = Vec::new();
                if t <= *switch {
                    segments.push((tau, t, a_minus));
                } else if tau >= *switch {
                    segments.push((tau, t, a_plus));
                } else {
                    segments.push((tau, *switch, a_minus));
                    segments.push((*switch, t, a_plus));
                }
                let mut acc = DMatrix::identity(self.dim, self.dim);
                for (lo, hi, a0) in segments {
                    if hi - lo <= 0.0 {
                        continue;
                    }
                    let seg = match perturbation {
                        None => (a0.clone() * (hi - lo)).exp(),
                        Some(b) => {
                            let full = |s: f64| a0 + b(s);
                            rk4_propagate(&full, lo, hi, *step, self.dim)
                        }
                    };
                    acc = seg * acc;
                }
                Ok(acc)
            }
        }
    }

    /// Constant limit of the coefficients on one side of the line.
    pub fn limit_matrix(&self, plus_side: bool) -> Result<DMatrix<f64>> {
        match &self.kind {
            FamilyKind::Discrete(_) => Err(Error::NotAsymptoticallyConstant),
            FamilyKind::Continuous { coeff, limits, .. } => {
                if let Some((minus, plus)) = limits {
                    return Ok(if plus_side { plus.clone() } else { minus.clone() });
                }
                // Probe far out and require the rule to have stopped moving.
                let sign = if plus_side { 1.0 } else { -1.0 };
                let far = coeff(sign * 1e6);
                for offset in [0.37, 1.0, 9.0e5 - 1e6] {
                    let other = coeff(sign * (1e6 + offset));
                    if (&other - &far).norm() > 1e-7 * (1.0 + far.norm()) {
                        return Err(Error::NotAsymptoticallyConstant);
                    }
                }
                Ok(far)
            }
            FamilyKind::PiecewiseConstant {
                a_minus,
                a_plus,
                perturbation,
                ..
            } => {
                if let Some(b) = perturbation {
                    let sign = if plus_side { 1.0 } else { -1.0 };
                    let tail = b(sign * 1e6).norm();
                    if tail > 1e-9 {
                        return Err(Error::NotAsymptoticallyConstant);
                    }
                }
                Ok(if plus_side {
                    a_plus.clone()
                } else {
                    a_minus.clone()
                })
            }
        }
    }
}

/// Sample the family into unit steps U(k+1, k) for k in [lo, hi).
pub fn discretize(fam: &EvolutionFamily, lo: i64, hi: i64) -> Result<StepWindow> {
    if hi < lo {
        return Err(Error::BackwardTime {
            t: hi as f64,
            tau: lo as f64,
        });
    }
    let mut steps = Vec::with_capacity((hi - lo) as usize);
    for k in lo..hi {
        steps.push(fam.propagate((k + 1) as f64, k as f64)?);
    }
    StepWindow::new(lo, steps)
}

/// QR-reorthogonalized factorization of a long step product, safe against
/// overflow/underflow of the plain product.
///
/// With Q_0 = I and U(m+j+1, m+j) Q_j = Q_{j+1} R_{j+1} one has
/// U(m+k, m) = Q_k R_k ⋯ R_1, and the running sums of log |(R_j)_{ii}|
/// yield finite-time Lyapunov exponents.
#[derive(Debug, Clone)]
pub struct OrderedFactorization {
    start: i64,
    /// Orthonormal frames Q_0 = I, Q_1, …, Q_k (one more than factor count).
    pub frames: Vec<DMatrix<f64>>,
    /// Triangular factors R_1, …, R_k.
    pub factors: Vec<DMatrix<f64>>,
}

impl OrderedFactorization {
    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Orthonormal frame Q at grid time n.
    pub fn frame_at(&self, n: i64) -> Result<&DMatrix<f64>> {
        let idx = n - self.start;
        if idx < 0 || idx as usize >= self.frames.len() {
            return Err(Error::OutsideWindow { n });
        }
        Ok(&self.frames[idx as usize])
    }

    /// Recombine the factorization into the plain product U(end, start);
    /// meaningful only on windows where that product is representable.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = self.frames[0].nrows();
        let mut acc = DMatrix::identity(d, d);
        for r in &self.factors {
            acc = r * acc;
        }
        self.frames.last().expect("nonempty frames") * acc
    }

    /// Finite-time Lyapunov exponents in algorithm (frame column) order:
    /// averages of log |(R_j)_{ii}| over the window.
    pub fn lyapunov_exponents(&self) -> Vec<f64> {
        let d = self.frames[0].nrows();
        let k = self.factors.len().max(1) as f64;
        (0..d)
            .map(|i| {
                self.factors
                    .iter()
                    .map(|r| r[(i, i)].abs().max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>()
                    / k
            })
            .collect()
    }
}

/// Build the ordered QR factorization of the steps over [lo, hi].
pub fn long_product(steps: &StepWindow, lo: i64, hi: i64) -> Result<OrderedFactorization> {
    long_product_from(steps, lo, hi, DMatrix::identity(steps.dim(), steps.dim()))
}

/// Ordered QR factorization started from an arbitrary orthonormal frame, so
/// `reconstruct` composes to U(hi, lo) · Q0. A generic start breaks the ties
/// that keep exactly decoupled systems from ordering their columns by
/// dominance; with one, the per-column exponents come out descending.
pub(crate) fn long_product_from(
    steps: &StepWindow,
    lo: i64,
    hi: i64,
    q0: DMatrix<f64>,
) -> Result<OrderedFactorization> {
    if hi < lo {
        return Err(Error::BackwardTime {
            t: hi as f64,
            tau: lo as f64,
        });
    }
    let mut frames = vec![q0];
    let mut factors = Vec::with_capacity((hi - lo) as usize);
    for k in lo..hi {
        let y = steps.step(k)? * frames.last().expect("nonempty");
        let qr = y.qr();
        frames.push(qr.q());
        factors.push(qr.r());
    }
    Ok(OrderedFactorization {
        start: lo,
        frames,
        factors,
    })
}

/// Read a coefficient table from CSV rows `t, a11, a12, …, add` (row-major
/// entries). Coefficients are linearly interpolated between rows and held
/// constant beyond the table, so the family is asymptotically constant with
/// the first/last rows as limits.
pub fn family_from_coefficient_csv<R: std::io::Read>(reader: R) -> Result<EvolutionFamily> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Config(format!("csv: {e}")))?;
        if record.is_empty() {
            continue;
        }
        let mut vals = Vec::with_capacity(record.len());
        for field in record.iter() {
            if field.is_empty() {
                continue;
            }
            vals.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("csv field '{field}': {e}")))?,
            );
        }
        if vals.len() < 2 {
            return Err(Error::Config("csv row needs t plus d^2 entries".into()));
        }
        let t = vals[0];
        rows.push((t, vals[1..].to_vec()));
    }
    if rows.is_empty() {
        return Err(Error::Config("empty coefficient table".into()));
    }
    let entries = rows[0].1.len();
    let dim = (entries as f64).sqrt().round() as usize;
    if dim * dim != entries {
        return Err(Error::Config(format!(
            "row length {entries} is not a perfect square"
        )));
    }
    if rows.iter().any(|(_, v)| v.len() != entries) {
        return Err(Error::Config("ragged coefficient table".into()));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite times"));
    let table: Arc<Vec<(f64, DMatrix<f64>)>> = Arc::new(
        rows.into_iter()
            .map(|(t, v)| (t, DMatrix::from_row_slice(dim, dim, &v)))
            .collect(),
    );
    let a_minus = table.first().expect("nonempty").1.clone();
    let a_plus = table.last().expect("nonempty").1.clone();
    let lookup = table.clone();
    let coeff: CoeffFn = Arc::new(move |t: f64| {
        let tab = &*lookup;
        if t <= tab[0].0 {
            return tab[0].1.clone();
        }
        if t >= tab[tab.len() - 1].0 {
            return tab[tab.len() - 1].1.clone();
        }
        let pos = tab.partition_point(|(ti, _)| *ti <= t);
        let (t0, m0) = &tab[pos - 1];
        let (t1, m1) = &tab[pos];
        if (t1 - t0).abs() < 1e-15 {
            return m1.clone();
        }
        let w = (t - t0) / (t1 - t0);
        m0 * (1.0 - w) + m1 * w
    });
    Ok(EvolutionFamily::continuous_with_limits(
        dim, coeff, a_minus, a_plus,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tanh_family() -> EvolutionFamily {
        EvolutionFamily::continuous_with_limits(
            1,
            Arc::new(|t: f64| DMatrix::from_element(1, 1, -t.tanh())),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, -1.0),
        )
    }

    #[test]
    fn propagate_identity_at_equal_times() {
        let fam = tanh_family();
        let u = fam.propagate(3.0, 3.0).unwrap();
        assert_eq!(u, DMatrix::identity(1, 1));
    }

    #[test]
    fn propagate_scalar_tanh_closed_form() {
        // u' = -tanh(t) u has propagator cosh(τ)/cosh(t); over [-2, 2] the
        // integral of tanh vanishes and the propagator is exactly 1.
        let fam = tanh_family();
        let u = fam.propagate(2.0, -2.0).unwrap();
        assert_relative_eq!(u[(0, 0)], 1.0, epsilon = 1e-8);
        let v = fam.propagate(1.5, 0.25).unwrap();
        let exact = 0.25f64.cosh() / 1.5f64.cosh();
        assert_relative_eq!(v[(0, 0)], exact, epsilon = 1e-9);
    }

    #[test]
    fn propagate_rejects_backward_time() {
        let fam = tanh_family();
        match fam.propagate(0.0, 1.0) {
            Err(Error::BackwardTime { .. }) => {}
            other => panic!("expected BackwardTime, got {other:?}"),
        }
    }

    #[test]
    fn discretize_matches_cosh_ratios() {
        let fam = tanh_family();
        let steps = discretize(&fam, -3, 3).unwrap();
        for k in -3..3 {
            let expected = (k as f64).cosh() / ((k + 1) as f64).cosh();
            let got = steps.step(k).unwrap()[(0, 0)];
            assert_relative_eq!(got, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn piecewise_exact_matches_exponentials() {
        // A₋ = diag(1, -1), A₊ = diag(-1, 1), crossing the switch at 0.
        let a_minus = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        let a_plus = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 1.0]));
        let fam = EvolutionFamily::piecewise_constant(a_minus.clone(), a_plus.clone());
        let u = fam.propagate(2.0, -1.5).unwrap();
        let expected = (a_plus * 2.0).exp() * (a_minus * 1.5).exp();
        assert!((u - expected).norm() < 1e-12);
    }

    #[test]
    fn long_product_reconstructs_short_window() {
        let fam = tanh_family();
        let steps = discretize(&fam, 0, 10).unwrap();
        let fact = long_product(&steps, 0, 10).unwrap();
        let plain = steps.product(10, 0).unwrap();
        assert!((fact.reconstruct() - plain).norm() < 1e-10);
    }

    #[test]
    fn long_product_exponents_of_diagonal_steps() {
        // Constant steps diag(2, 1/2) for 100 steps: exponents ±ln 2 without
        // overflow (2^100 would overflow f32 and strain the plain product).
        let step = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5]));
        let window = StepWindow::new(0, vec![step; 100]).unwrap();
        let fact = long_product(&window, 0, 100).unwrap();
        let ex = fact.lyapunov_exponents();
        assert_relative_eq!(ex[0], 2.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(ex[1], -(2.0f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn discrete_family_rejects_fractional_times() {
        let window = StepWindow::new(0, vec![DMatrix::identity(2, 2); 4]).unwrap();
        let fam = EvolutionFamily::from_steps(window);
        match fam.propagate(2.5, 0.0) {
            Err(Error::NonIntegerTime { .. }) => {}
            other => panic!("expected NonIntegerTime, got {other:?}"),
        }
    }

    #[test]
    fn limit_matrix_probing() {
        let fam = tanh_family();
        assert_eq!(fam.limit_matrix(true).unwrap()[(0, 0)], -1.0);
        assert_eq!(fam.limit_matrix(false).unwrap()[(0, 0)], 1.0);

        // A probed (no explicit limits) periodic rule must refuse.
        let periodic = EvolutionFamily::continuous(
            1,
            Arc::new(|t: f64| DMatrix::from_element(1, 1, (2.0 * std::f64::consts::PI * t).sin())),
        );
        match periodic.limit_matrix(true) {
            Err(Error::NotAsymptoticallyConstant) => {}
            other => panic!("expected NotAsymptoticallyConstant, got {other:?}"),
        }
    }

    #[test]
    fn csv_roundtrip_interpolates() {
        let data = "0.0, -1.0, 0.0, 0.0, -2.0\n1.0, -3.0, 0.0, 0.0, -4.0\n";
        let fam = family_from_coefficient_csv(data.as_bytes()).unwrap();
        assert_eq!(fam.dim(), 2);
        let mid = fam.coefficient(0.5).unwrap();
        assert_relative_eq!(mid[(0, 0)], -2.0, epsilon = 1e-12);
        assert_relative_eq!(mid[(1, 1)], -3.0, epsilon = 1e-12);
        // Constant extrapolation beyond the table.
        let far = fam.coefficient(50.0).unwrap();
        assert_relative_eq!(far[(0, 0)], -3.0, epsilon = 1e-12);
        assert!(fam.limit_matrix(true).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Cocycle identity for exact piecewise-constant propagation.
        #[test]
        fn cocycle_identity_piecewise(
            a in -1.5f64..1.5, b in -1.5f64..1.5,
            t in 0.5f64..3.0, s in 0.0f64..0.5, tau in -3.0f64..-0.5
        ) {
            let a_minus = DMatrix::from_column_slice(2, 2, &[a, 0.3, 0.0, b]);
            let a_plus = DMatrix::from_column_slice(2, 2, &[-b, 0.0, 0.1, -a]);
            let fam = EvolutionFamily::piecewise_constant(a_minus, a_plus);
            let whole = fam.propagate(t, tau).unwrap();
            let split = fam.propagate(t, s).unwrap() * fam.propagate(s, tau).unwrap();
            prop_assert!((whole - split).norm() < 1e-11);
        }
    }
}
