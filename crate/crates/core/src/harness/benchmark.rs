//! Four-agent benchmark network.
//!
//! Follower `i` (1-based) has
//!
//! ```text
//! A_i = [[1, 1+i, 0], [0, 2, −0.5i], [1, 0, 1+i]]    B_i = [0, 1, i]ᵀ
//! C_i = [1/i, 0, 0]                                   F_i = [−0.75i, 0, 1, 0]
//! D_i = [[1, 0, −1, 0], [0, 0, 1.5i, 0], [0, 1, 0, −0.5i]]
//! ```
//!
//! and the leader oscillates at 1 and 0.75 rad/s.

use nalgebra::{DMatrix, DVector};

use crate::observer::ObserverGains;
use crate::plant::{AgentModel, ExosystemModel};
use crate::topology::CommGraph;

pub const NUM_AGENTS: usize = 4;
pub const FREQUENCIES: [f64; 2] = [1.0, 0.75];
pub const INITIAL_EXOSTATE: [f64; 4] = [0.0, 1.0, 0.0, 0.5];
pub const OBSERVER_A: [f64; 2] = [15.0, 15.0];
pub const OBSERVER_KAPPA: [f64; 2] = [40.0, 40.0];
pub const TOLERANCE: f64 = 1e-4;
/// Closed-loop poles of the initial behaviour policy.
pub const INITIAL_POLES: [f64; 3] = [-1.0, -2.0, -3.0];

/// Learned feedforward gains reported for the benchmark.
pub const REFERENCE_LEARNED_L: [[f64; 4]; NUM_AGENTS] = [
    [2.8801, -11.9485, 16.4917, 12.4644],
    [1.0720, -6.2090, 15.1043, 7.4341],
    [-3.1127, -7.3517, 13.5064, 5.2960],
    [-8.5758, -9.4777, 13.3007, 4.4879],
];

/// Optimal feedforward gains reported for the benchmark.
pub const REFERENCE_OPTIMAL_L: [[f64; 4]; NUM_AGENTS] = [
    [2.8801, -11.9484, 16.4918, 12.4641],
    [1.0721, -6.2089, 15.1043, 7.4340],
    [-3.1117, -7.3508, 13.5063, 5.2923],
    [-8.5725, -9.4729, 13.3089, 4.4654],
];

/// Policy-iteration counts reported alongside the learned gains.
pub const REFERENCE_ITERATIONS: [usize; NUM_AGENTS] = [14, 16, 17, 19];

/// Follower `i`, 1-based.
pub fn agent(i: usize) -> AgentModel {
    assert!(i >= 1, "benchmark agents are 1-based");
    let s = i as f64;
    AgentModel {
        a: DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 1.0 + s, 0.0, 0.0, 2.0, -0.5 * s, 1.0, 0.0, 1.0 + s],
        ),
        b: DMatrix::from_column_slice(3, 1, &[0.0, 1.0, s]),
        c: DMatrix::from_row_slice(1, 3, &[1.0 / s, 0.0, 0.0]),
        d: DMatrix::from_row_slice(
            3,
            4,
            &[
                1.0,
                0.0,
                -1.0,
                0.0,
                0.0,
                0.0,
                1.5 * s,
                0.0,
                0.0,
                1.0,
                0.0,
                -0.5 * s,
            ],
        ),
        f: DMatrix::from_row_slice(1, 4, &[-0.75 * s, 0.0, 1.0, 0.0]),
    }
}

pub fn agents() -> Vec<AgentModel> {
    (1..=NUM_AGENTS).map(agent).collect()
}

pub fn exosystem() -> ExosystemModel {
    ExosystemModel::new(FREQUENCIES.to_vec()).expect("benchmark frequencies are valid")
}

pub fn initial_exostate() -> DVector<f64> {
    DVector::from_column_slice(&INITIAL_EXOSTATE)
}

pub fn observer_gains() -> ObserverGains {
    ObserverGains::new(OBSERVER_A.to_vec(), OBSERVER_KAPPA.to_vec())
        .expect("benchmark gains are valid")
}

/// Leader → 1, followers linked 1–2–3–4 both ways.
pub fn graph() -> CommGraph {
    CommGraph::chain(NUM_AGENTS, [0]).expect("benchmark graph is valid")
}

pub fn state_weight() -> DMatrix<f64> {
    DMatrix::identity(3, 3)
}

pub fn input_weight() -> DMatrix<f64> {
    DMatrix::identity(1, 1)
}
