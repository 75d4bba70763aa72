//! Builtin problem registry: a fixed collection of families and projector
//! fixtures spanning every sign and degeneracy class the index identities
//! are tested against, each with its frozen expected outcome.

use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix};
use serde::{Deserialize, Serialize};

use crate::dichotomy::Method;
use crate::evolution::EvolutionFamily;
use crate::numerics::DEFAULT_WINDOW;
use crate::subspace::{stable_projector, Projector};

/// Frozen expected outcome of running a registered problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expectation {
    /// The full pipeline completes with exactly these integers.
    Integers {
        /// Rank of the forward-decaying bundle on the plus half-line.
        rank_plus: usize,
        dim_kernel: usize,
        codim_image: usize,
        index: i64,
        /// Spectral flow, for problems run as selfadjoint paths.
        flow: Option<i64>,
    },
    /// The pipeline must refuse with a structural error instead of
    /// producing numbers.
    Refusal,
    /// Projector-pair fixture: expected pair index and whether the
    /// difference profile marks the pair as commensurable.
    PairProfile { index: i64, commensurable: bool },
}

/// What kind of computation a problem feeds.
#[derive(Clone)]
pub enum ProblemKind {
    /// A dynamics problem: evolution family, dichotomy method, and window.
    Dynamics {
        family: EvolutionFamily,
        method: Method,
        window: i64,
        /// Run the spectral-flow stage (the coefficient path is symmetric).
        selfadjoint: bool,
    },
    /// A fixture of two projectors for the commensurability diagnostic.
    ProjectorPair { first: Projector, second: Projector },
}

/// A named registry entry.
#[derive(Clone)]
pub struct Problem {
    pub name: &'static str,
    pub summary: &'static str,
    pub kind: ProblemKind,
    pub expectation: Expectation,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("expectation", &self.expectation)
            .finish()
    }
}

/// All builtin problems, in presentation order.
pub fn registry() -> Vec<Problem> {
    vec![
        scalar_tanh(),
        scalar_plus_tanh(),
        autonomous_hyperbolic_4d(),
        piecewise_diag_plus2(),
        mixed_channel_0(),
        petrovskij_k8(),
        hill_hyperbolic(),
        hill_elliptic(),
        flow_2d(),
        tanh_diag_3d(),
        rot_split_4d(),
        center_2d(),
        block_pair(),
        commensurable_pair(),
    ]
}

/// Look a problem up by name.
pub fn find(name: &str) -> Option<Problem> {
    registry().into_iter().find(|p| p.name == name)
}

fn scalar_tanh() -> Problem {
    let family = EvolutionFamily::continuous_with_limits(
        1,
        Arc::new(|t: f64| dmatrix![-t.tanh()]),
        dmatrix![1.0],
        dmatrix![-1.0],
    );
    Problem {
        name: "scalar-tanh",
        summary: "Scalar coefficient falling from +1 to -1; one-dimensional kernel, index +1.",
        kind: ProblemKind::Dynamics {
            family,
            method: Method::SpectralLimit,
            window: DEFAULT_WINDOW,
            selfadjoint: true,
        },
        expectation: Expectation::Integers {
            rank_plus: 1,
            dim_kernel: 1,
            codim_image: 0,
            index: 1,
            flow: Some(1),
        },
    }
}

fn scalar_plus_tanh() -> Problem {
    let family = EvolutionFamily::continuous_with_limits(
        1,
        Arc::new(|t: f64| dmatrix![t.tanh()]),
        dmatrix![-1.0],
        dmatrix![1.0],
    );
    Problem {
        name: "scalar-plus-tanh",
        summary: "Scalar coefficient rising from -1 to +1; one-dimensional cokernel, index -1.",
        kind: ProblemKind::Dynamics {
            family,
            method: Method::SpectralLimit,
            window: DEFAULT_WINDOW,
            selfadjoint: true,
        },
        expectation: Expectation::Integers {
            rank_plus: 0,
            dim_kernel: 0,
            codim_image: 1,
            index: -1,
            flow: Some(-1),
        },
    }
}

/// Orthogonal matrix obtained from the QR factorization of a fixed integer
/// matrix; used to hide diagonal structure without changing spectra.
fn mixing_rotation_4d() -> DMatrix<f64> {
    let m = dmatrix![
        2.0, 1.0, 0.0, -1.0;
        1.0, 3.0, 1.0, 0.0;
        0.0, 1.0, 2.0, 1.0;
        1.0, 0.0, 1.0, -2.0
    ];
    m.qr().q()
}

fn autonomous_hyperbolic_4d() -> Problem {
    let q = mixing_rotation_4d();
    let a = &q * DMatrix::from_diagonal(&dvector![-2.0, -1.0, 1.0, 2.0]) * q.transpose();
    Problem {
        name: "autonomous-hyperbolic-4d",
        summary: "Constant symmetric generator with two stable and two unstable directions.",
        kind: ProblemKind::Dynamics {
            family: EvolutionFamily::autonomous(a),
            method: Method::QrProduct,
            window: DEFAULT_WINDOW,
            selfadjoint: true,
        },
        expectation: Expectation::Integers {
            rank_plus: 2,
            dim_kernel: 0,
            codim_image: 0,
            index: 0,
            flow: Some(0),
        },
    }
}

fn piecewise_diag_plus2() -> Problem {
    let family = EvolutionFamily::piecewise_constant(
        dmatrix![1.0, 0.0; 0.0, 2.0],
        dmatrix![-1.0, 0.0; 0.0, -2.0],
    );
    Problem {
        name: "piecewise-diag-plus2",
        summary: "Diagonal generator flipping from diag(1,2) to diag(-1,-2); index +2.",
        kind: ProblemKind::Dynamics {
            family,
            method: Method::SpectralLimit,
            window: DEFAULT_WINDOW,
            selfadjoint: true,
        },
        expectation: Expectation::Integers {
            rank_plus: 2,
            dim_kernel: 2,
            codim_image: 0,
            index: 2,
            flow: Some(2),
        },
    }
}

fn mixed_channel_0() -> Problem {
    let family = EvolutionFamily::piecewise_constant(
        dmatrix![1.0, 0.0; 0.0, -1.0],
        dmatrix![-1.0, 0.0; 0.0, 1.0],
    );
    Problem {
        name: "mixed-channel-0",
        summary: "One channel loses stability while the other gains it; index 0 with defects 1|1.",
        kind: ProblemKind::Dynamics {
            family,
            method: Method::SpectralLimit,
            window: DEFAULT_WINDOW,
            selfadjoint: true,
        },
        expectation: Expectation::Integers {
            rank_plus: 1,
            dim_kernel: 1,
            codim_image: 1,
            index: 0,
            flow: Some(0),
        },
    }
}

/// Realified truncation of a constant-coefficient Petrovskij-type system:
/// mode k = 0 contributes diag(-1, 1), every mode k = 1..8 contributes a
/// stable and an unstable spiral block with rotation speed k.
fn petrovskij_matrix() -> DMatrix<f64> {
    let modes = 8;
    let d = 2 + 4 * modes;
    let mut a = DMatrix::zeros(d, d);
    a[(0, 0)] = -1.0;
    a[(1, 1)] = 1.0;
    let mut off = 2;
    for k in 1..=modes {
        let speed = k as f64;
        a[(off, off)] = -1.0;
        a[(off, off + 1)] = -speed;
        a[(off + 1, off)] = speed;
        a[(off + 1, off + 1)] = -1.0;
        a[(off + 2, off + 2)] = 1.0;
        a[(off + 2, off + 3)] = -speed;
        a[(off + 3, off + 2)] = speed;
        a[(off + 3, off + 3)] = 1.0;
        off += 4;
    }
    a
}

fn petrovskij_k8() -> Problem {
    Problem {
        name: "petrovskij-k8",
        summary: "Realified eight-mode truncation of a Petrovskij-type system; 34 channels.",
        kind: ProblemKind::Dynamics {
            family: EvolutionFamily::autonomous(petrovskij_matrix()),
            method: Method::SpectralLimit,
            // Tighter window than the default: the truncated sections are
            // 34 channels wide and the decay rate is 1, so a window of 8
            // already separates the bundles cleanly.
            window: 8,
            selfadjoint: false,
        },
        expectation: Expectation::Integers {
            rank_plus: 17,
            dim_kernel: 0,
            codim_image: 0,
            index: 0,
            flow: None,
        },
    }
}

fn hill_family(mean: f64, wobble: f64) -> EvolutionFamily {
    EvolutionFamily::continuous(
        2,
        Arc::new(move |t: f64| {
            let q = mean + wobble * (2.0 * std::f64::consts::PI * t).cos();
            dmatrix![0.0, 1.0; q, 0.0]
        }),
    )
}

fn hill_hyperbolic() -> Problem {
    Problem {
        name: "hill-hyperbolic",
        summary: "Hill equation with hyperbolic monodromy; Floquet projections, index 0.",
        kind: ProblemKind::Dynamics {
            family: hill_family(2.0, 0.5),
            method: Method::Floquet { period: 1 },
            window: DEFAULT_WINDOW,
            selfadjoint: false,
        },
        expectation: Expectation::Integers {
            rank_plus: 1,
            dim_kernel: 0,
            codim_image: 0,
            index: 0,
            flow: None,
        },
    }
}

fn hill_elliptic() -> Problem {
    Problem {
        name: "hill-elliptic",
        summary: "Hill equation tuned into the elliptic pocket; monodromy on the unit circle, must refuse.",
        kind: ProblemKind::Dynamics {
            family: hill_family(-2.5, 0.3),
            method: Method::Floquet { period: 1 },
            window: DEFAULT_WINDOW,
            selfadjoint: false,
        },
        expectation: Expectation::Refusal,
    }
}

fn flow_2d() -> Problem {
    let family = EvolutionFamily::continuous_with_limits(
        2,
        Arc::new(|t: f64| dmatrix![t.tanh(), 0.0; 0.0, -1.0]),
        dmatrix![-1.0, 0.0; 0.0, -1.0],
        dmatrix![1.0, 0.0; 0.0, -1.0],
    );
    Problem {
        name: "flow-2d",
        summary: "One rising channel against a frozen stable one; flow and index -1.",
        kind: ProblemKind::Dynamics {
            family,
            method: Method::SpectralLimit,
            window: DEFAULT_WINDOW,
            selfadjoint: true,
        },
        expectation: Expectation::Integers {
            rank_plus: 1,
            dim_kernel: 0,
            codim_image: 1,
            index: -1,
            flow: Some(-1),
        },
    }
}

fn tanh_diag_3d() -> Problem {
    let family = EvolutionFamily::continuous_with_limits(
        3,
        Arc::new(|t: f64| {
            DMatrix::from_diagonal(&dvector![-t.tanh(), t.tanh(), -1.0])
        }),
        DMatrix::from_diagonal(&dvector![1.0, -1.0, -1.0]),
        DMatrix::from_diagonal(&dvector![-1.0, 1.0, -1.0]),
    );
    Problem {
        name: "tanh-diag-3d",
        summary: "Three diagonal channels with compensating crossings; index 0 with defects 1|1.",
        kind: ProblemKind::Dynamics {
            family,
            method: Method::SpectralLimit,
            window: DEFAULT_WINDOW,
            selfadjoint: true,
        },
        expectation: Expectation::Integers {
            rank_plus: 2,
            dim_kernel: 1,
            codim_image: 1,
            index: 0,
            flow: Some(0),
        },
    }
}

fn rot_split_4d() -> Problem {
    let mut base = DMatrix::zeros(4, 4);
    base.view_mut((0, 0), (2, 2))
        .copy_from(&dmatrix![-1.0, 3.0; -3.0, -1.0]);
    base.view_mut((2, 2), (2, 2))
        .copy_from(&dmatrix![1.0, 2.0; -2.0, 1.0]);
    let limit = base.clone();
    let rule = Arc::new(move |t: f64| {
        let mut a = base.clone();
        let bump = 0.3 * (-t * t).exp();
        a[(0, 3)] += bump;
        a[(3, 0)] += bump;
        a
    });
    let family = EvolutionFamily::continuous_with_limits(4, rule, limit.clone(), limit);
    Problem {
        name: "rot-split-4d",
        summary: "Stable and unstable spiral blocks joined by a transient coupling bump.",
        kind: ProblemKind::Dynamics {
            family,
            method: Method::SpectralLimit,
            window: DEFAULT_WINDOW,
            selfadjoint: false,
        },
        expectation: Expectation::Integers {
            rank_plus: 2,
            dim_kernel: 0,
            codim_image: 0,
            index: 0,
            flow: None,
        },
    }
}

fn center_2d() -> Problem {
    Problem {
        name: "center-2d",
        summary: "Pure rotation: spectrum on the imaginary axis everywhere, must refuse.",
        kind: ProblemKind::Dynamics {
            family: EvolutionFamily::autonomous(dmatrix![0.0, 1.0; -1.0, 0.0]),
            method: Method::SpectralLimit,
            window: DEFAULT_WINDOW,
            selfadjoint: false,
        },
        expectation: Expectation::Refusal,
    }
}

fn block_pair() -> Problem {
    let half = 0.5;
    let balanced = Projector::new(dmatrix![
        half, 0.0, half, 0.0;
        0.0, half, 0.0, half;
        half, 0.0, half, 0.0;
        0.0, half, 0.0, half
    ])
    .expect("balanced block projector is idempotent");
    let coordinate = Projector::new(DMatrix::from_diagonal(&dvector![1.0, 1.0, 0.0, 0.0]))
        .expect("coordinate projector is idempotent");
    Problem {
        name: "block-pair",
        summary: "Balanced diagonal subspace against a coordinate plane: flat singular profile.",
        kind: ProblemKind::ProjectorPair {
            first: balanced,
            second: coordinate,
        },
        expectation: Expectation::PairProfile {
            index: 0,
            commensurable: false,
        },
    }
}

fn commensurable_pair() -> Problem {
    let a0 = DMatrix::from_diagonal(&dvector![-2.0, -1.0, 1.0, 2.0]);
    let v = dvector![0.5, 0.5, 0.5, 0.5];
    let a1 = &a0 + (&v * v.transpose()) * 0.1;
    let first = stable_projector(&a0).expect("diagonal generator is hyperbolic");
    let second = stable_projector(&a1).expect("perturbed generator stays hyperbolic");
    Problem {
        name: "commensurable-pair",
        summary: "Spectral projectors of a generator and its rank-one perturbation: steep profile.",
        kind: ProblemKind::ProjectorPair { first, second },
        expectation: Expectation::PairProfile {
            index: 0,
            commensurable: true,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique_and_cover_the_required_set() {
        let problems = registry();
        assert_eq!(problems.len(), 14);
        let mut names: Vec<&str> = problems.iter().map(|p| p.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 14);
        for required in [
            "scalar-tanh",
            "scalar-plus-tanh",
            "autonomous-hyperbolic-4d",
            "piecewise-diag-plus2",
            "mixed-channel-0",
            "petrovskij-k8",
            "hill-hyperbolic",
            "flow-2d",
            "commensurable-pair",
            "block-pair",
        ] {
            assert!(names.contains(&required), "missing problem {required}");
        }
    }

    #[test]
    fn find_locates_entries_by_name() {
        assert!(find("scalar-tanh").is_some());
        assert!(find("no-such-problem").is_none());
    }

    #[test]
    fn petrovskij_truncation_has_34_balanced_channels() {
        let a = petrovskij_matrix();
        assert_eq!(a.nrows(), 34);
        let stable = stable_projector(&a).unwrap();
        assert_eq!(stable.rank(), 17);
    }

    #[test]
    fn hill_coefficient_is_unit_periodic() {
        let family = hill_family(2.0, 0.5);
        let early = family.coefficient(0.25).unwrap();
        let late = family.coefficient(1.25).unwrap();
        assert!((early - late).norm() < 1e-15);
    }

    #[test]
    fn pair_fixtures_have_rank_two_projectors() {
        for name in ["block-pair", "commensurable-pair"] {
            let problem = find(name).unwrap();
            match problem.kind {
                ProblemKind::ProjectorPair { first, second } => {
                    assert_eq!(first.rank(), 2);
                    assert_eq!(second.rank(), 2);
                }
                ProblemKind::Dynamics { .. } => panic!("{name} should be a pair fixture"),
            }
        }
    }
}
