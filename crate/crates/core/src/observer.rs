//! Distributed adaptive observer.
//!
//! Each follower keeps an exostate estimate `η` and frequency estimates `ŵ`.
//! It never sees the leader's matrix: targets read `v` directly, the others
//! only their neighbours' `η`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::harmonic_blocks;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverGains {
    /// Diagonal rates; `A_m = −bdiag(a_r · I₂)`.
    pub a: Vec<f64>,
    /// Frequency adaptation gains.
    pub kappa: Vec<f64>,
}

impl ObserverGains {
    pub fn new(a: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        if a.len() != kappa.len() {
            return Err(Error::Dimension(format!(
                "observer gains: {} rates vs {} adaptation gains",
                a.len(),
                kappa.len()
            )));
        }
        if a.iter().chain(&kappa).any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidArgument(
                "observer gains must be positive and finite".into(),
            ));
        }
        Ok(Self { a, kappa })
    }

    pub fn num_blocks(&self) -> usize {
        self.a.len()
    }

    pub fn a_m(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            2 * self.a.len(),
            self.a.iter().flat_map(|&a| [-a, -a]),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub eta: DVector<f64>,
    pub what: DVector<f64>,
}

impl ObserverState {
    pub fn zeros(q: usize) -> Self {
        Self {
            eta: DVector::zeros(q),
            what: DVector::zeros(q / 2),
        }
    }

    pub fn ehat(&self) -> DMatrix<f64> {
        assemble_ehat(self.what.as_slice())
    }
}

/// Exosystem-matrix estimate from frequency estimates.
pub fn assemble_ehat(what: &[f64]) -> DMatrix<f64> {
    harmonic_blocks(what)
}

/// `ε_i = Σ_j a_ij (η_i − η_j) + m_ii (η_i − v)`.
pub fn local_error(
    eta_i: &DVector<f64>,
    neighbors: &[(f64, &DVector<f64>)],
    target: bool,
    v: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let mut eps = DVector::zeros(eta_i.len());
    for &(w, eta_j) in neighbors {
        if eta_j.len() != eta_i.len() {
            return Err(Error::Dimension("neighbour estimate length".into()));
        }
        eps += (eta_i - eta_j) * w;
    }
    if target {
        let v = v.ok_or_else(|| {
            Error::InvalidArgument("target follower requires the leader state".into())
        })?;
        if v.len() != eta_i.len() {
            return Err(Error::Dimension("leader state length".into()));
        }
        eps += eta_i - v;
    }
    Ok(eps)
}

/// Observer and adaptation derivatives `(η̇, ŵ̇)`.
///
/// `ŵ̇_r = κ_r (η_{2r−1} ε_{2r} − η_{2r} ε_{2r−1})` with 1-based pairs, i.e.
/// components `(2r, 2r+1)` in 0-based indexing.
pub fn observer_rhs(
    state: &ObserverState,
    eps: &DVector<f64>,
    gains: &ObserverGains,
) -> (DVector<f64>, DVector<f64>) {
    let q = state.eta.len();
    debug_assert_eq!(eps.len(), q);
    debug_assert_eq!(2 * gains.num_blocks(), q);
    let ehat = state.ehat();
    let eta_dot = &ehat * &state.eta + (gains.a_m() - &ehat) * eps;
    let what_dot = DVector::from_fn(q / 2, |r, _| {
        let (a, b) = (2 * r, 2 * r + 1);
        gains.kappa[r] * (state.eta[a] * eps[b] - state.eta[b] * eps[a])
    });
    (eta_dot, what_dot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn consensus_gives_zero_error() {
        let v = dv(&[0.3, -1.0, 2.0, 0.5]);
        let eps = local_error(&v, &[(1.0, &v), (2.0, &v)], true, Some(&v)).unwrap();
        assert_eq!(eps, DVector::zeros(4));
    }

    #[test]
    fn single_neighbor_definition() {
        let eps = local_error(&dv(&[1.0, 0.0]), &[(1.0, &dv(&[0.0, 0.0]))], false, None).unwrap();
        assert_eq!(eps, dv(&[1.0, 0.0]));
    }

    #[test]
    fn two_neighbors_plus_leader_hand_sum() {
        let eta = dv(&[1.0, 2.0]);
        let j1 = dv(&[0.5, -1.0]);
        let j2 = dv(&[2.0, 0.0]);
        let v = dv(&[-1.0, 1.0]);
        // 1·(0.5, 3) + 2·(−1, 2) + (2, 1) = (0.5, 8)
        let eps = local_error(&eta, &[(1.0, &j1), (2.0, &j2)], true, Some(&v)).unwrap();
        assert_eq!(eps, dv(&[0.5, 8.0]));
    }

    #[test]
    fn target_without_leader_state_is_rejected() {
        let eta = dv(&[1.0, 2.0]);
        assert!(local_error(&eta, &[], true, None).is_err());
        // non-targets ignore v entirely
        assert!(local_error(&eta, &[], false, Some(&dv(&[9.0, 9.0]))).is_ok());
    }

    #[test]
    fn zero_error_freezes_adaptation() {
        let gains = ObserverGains::new(vec![15.0, 15.0], vec![40.0, 40.0]).unwrap();
        let state = ObserverState {
            eta: dv(&[0.2, -0.4, 1.0, 0.5]),
            what: dv(&[0.9, 0.3]),
        };
        let (eta_dot, what_dot) = observer_rhs(&state, &DVector::zeros(4), &gains);
        assert_eq!(what_dot, DVector::zeros(2));
        assert!((eta_dot - state.ehat() * &state.eta).norm() < 1e-15);
    }

    #[test]
    fn zero_estimate_case() {
        let gains = ObserverGains::new(vec![15.0, 5.0], vec![40.0, 40.0]).unwrap();
        let state = ObserverState {
            eta: DVector::zeros(4),
            what: dv(&[1.0, 0.75]),
        };
        let eps = dv(&[1.0, -2.0, 0.5, 3.0]);
        let (eta_dot, what_dot) = observer_rhs(&state, &eps, &gains);
        assert_eq!(what_dot, DVector::zeros(2));
        let expected = (gains.a_m() - state.ehat()) * &eps;
        assert!((eta_dot - expected).norm() < 1e-15);
    }

    #[test]
    fn adaptation_law_pairing() {
        let gains = ObserverGains::new(vec![15.0], vec![40.0]).unwrap();
        let state = ObserverState {
            eta: dv(&[1.0, 0.0]),
            what: dv(&[0.0]),
        };
        let (_, what_dot) = observer_rhs(&state, &dv(&[0.0, 1.0]), &gains);
        assert_eq!(what_dot, dv(&[40.0]));
    }

    #[test]
    fn ehat_assembly() {
        assert_eq!(assemble_ehat(&[0.0, 0.0]), DMatrix::zeros(4, 4));
        assert_eq!(
            assemble_ehat(&[1.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
        );
        let e = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0, //
                -1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.75, //
                0.0, 0.0, -0.75, 0.0,
            ],
        );
        assert_eq!(assemble_ehat(&[1.0, 0.75]), e);
    }

    #[test]
    fn gains_validation() {
        assert!(ObserverGains::new(vec![15.0], vec![40.0, 40.0]).is_err());
        assert!(ObserverGains::new(vec![0.0], vec![40.0]).is_err());
        assert!(ObserverGains::new(vec![1.0], vec![-1.0]).is_err());
        let g = ObserverGains::new(vec![15.0, 2.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(
            g.a_m(),
            DMatrix::from_diagonal(&dv(&[-15.0, -15.0, -2.0, -2.0]))
        );
    }
}
