//! Exosystem and follower dynamics, exploration noise, and the joint simulator.

mod log;
mod noise;
mod simulate;

pub use log::{AgentTrace, Signal, TrajectoryLog};
pub use noise::{exploration_noise, NoiseSpec, NoiseTerm};
pub use simulate::{simulate, AgentState, Controller, World, WorldState, DIVERGENCE_LIMIT};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{harmonic_blocks, numerical_rank};

/// Leader `v̇ = E v` with `E` block-diagonal harmonic oscillators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExosystemModel {
    frequencies: Vec<f64>,
}

impl ExosystemModel {
    pub fn new(frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidModel(
                "exosystem needs at least one frequency".into(),
            ));
        }
        if frequencies.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidModel(
                "exosystem frequencies must be positive".into(),
            ));
        }
        for (i, a) in frequencies.iter().enumerate() {
            if frequencies[..i].contains(a) {
                return Err(Error::InvalidModel(format!(
                    "repeated exosystem frequency {a}"
                )));
            }
        }
        Ok(Self { frequencies })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Exostate dimension `q`.
    pub fn dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        harmonic_blocks(&self.frequencies)
    }

    /// Closed-form solution `v(t) = exp(E t) v₀`.
    pub fn exact_state(&self, v0: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut v = v0.clone();
        for (r, &w) in self.frequencies.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            let (a, b) = (v0[2 * r], v0[2 * r + 1]);
            v[2 * r] = c * a + s * b;
            v[2 * r + 1] = -s * a + c * b;
        }
        v
    }
}

/// One follower: `ẋ = A x + B u + D v`, `e = C x + F v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    #[serde(with = "crate::matrix_serde::matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub c: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub d: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub f: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub stabilizable: bool,
    pub observable: bool,
    /// `rank [[A − λI, B], [C, 0]] = n + p` at every eigenvalue of `E`.
    pub transmission_zeros_clear: bool,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.stabilizable && self.observable && self.transmission_zeros_clear
    }
}

const RANK_TOL: f64 = 1e-10;

impl AgentModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        f: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Dimension(format!("agent model: {what}")))
            }
        };
        check(n > 0 && a.is_square(), "A must be square and nonempty")?;
        check(b.nrows() == n && b.ncols() > 0, "B must have n rows")?;
        check(c.ncols() == n && c.nrows() > 0, "C must have n columns")?;
        check(d.nrows() == n, "D must have n rows")?;
        check(f.nrows() == c.nrows(), "F must have p rows")?;
        check(
            f.ncols() == d.ncols(),
            "D and F must share the exostate dimension",
        )?;
        Ok(Self { a, b, c, d, f })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn q(&self) -> usize {
        self.d.ncols()
    }

    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut out = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            out.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        out
    }

    pub fn observability_matrix(&self) -> DMatrix<f64> {
        let (n, p) = (self.n(), self.p());
        let mut out = DMatrix::zeros(n * p, n);
        let mut block = self.c.clone();
        for k in 0..n {
            out.view_mut((k * p, 0), (p, n)).copy_from(&block);
            block *= &self.a;
        }
        out
    }

    /// Checks stabilizability, observability, and the transmission-zero
    /// condition against the exosystem matrix `e`.
    pub fn check_assumptions(&self, e: &DMatrix<f64>) -> AssumptionReport {
        let n = self.n();
        let controllable = numerical_rank(&self.controllability_matrix(), RANK_TOL) == n;
        let stabilizable = controllable
            || self
                .a
                .complex_eigenvalues()
                .iter()
                .filter(|l| l.re >= 0.0)
                .all(|&l| complex_rank(&self.pbh_pencil(l)) == n);
        let observable = numerical_rank(&self.observability_matrix(), RANK_TOL) == n;
        let transmission_zeros_clear = e
            .complex_eigenvalues()
            .iter()
            .all(|&l| complex_rank(&self.rosenbrock(l)) == n + self.p());
        AssumptionReport {
            stabilizable,
            observable,
            transmission_zeros_clear,
        }
    }

    fn pbh_pencil(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let (n, m) = (self.n(), self.m());
        DMatrix::from_fn(n, n + m, |i, j| {
            if j < n {
                let diag = if i == j {
                    lambda
                } else {
                    Complex64::new(0.0, 0.0)
                };
                Complex64::new(self.a[(i, j)], 0.0) - diag
            } else {
                Complex64::new(self.b[(i, j - n)], 0.0)
            }
        })
    }

    fn rosenbrock(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let (n, m, p) = (self.n(), self.m(), self.p());
        let top = self.pbh_pencil(lambda);
        DMatrix::from_fn(n + p, n + m, |i, j| {
            if i < n {
                top[(i, j)]
            } else if j < n {
                Complex64::new(self.c[(i - n, j)], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn check_dims(
        &self,
        x: &DVector<f64>,
        u: Option<&DVector<f64>>,
        v: &DVector<f64>,
    ) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "state has length {}, expected {}",
                x.len(),
                self.n()
            )));
        }
        if let Some(u) = u {
            if u.len() != self.m() {
                return Err(Error::Dimension(format!(
                    "input has length {}, expected {}",
                    u.len(),
                    self.m()
                )));
            }
        }
        if v.len() != self.q() {
            return Err(Error::Dimension(format!(
                "exostate has length {}, expected {}",
                v.len(),
                self.q()
            )));
        }
        Ok(())
    }

    pub(crate) fn derivative(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.d * v
    }
}

fn complex_rank(m: &DMatrix<Complex64>) -> usize {
    let s = m.singular_values();
    let smax = s.iter().copied().fold(0.0, f64::max);
    s.iter().filter(|&&x| x > RANK_TOL * smax).count()
}

/// Classical fourth-order Runge–Kutta step of `ẏ = f(t, y)`.
pub fn rk4_step<F>(mut f: F, t: f64, y: &DVector<f64>, dt: f64) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, &(y + &k1 * (0.5 * dt)));
    let k3 = f(t + 0.5 * dt, &(y + &k2 * (0.5 * dt)));
    let k4 = f(t + dt, &(y + &k3 * dt));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// One RK4 step of the leader.
pub fn step_exosystem(v: &DVector<f64>, e: &DMatrix<f64>, dt: f64) -> DVector<f64> {
    rk4_step(|_, y| e * y, 0.0, v, dt)
}

/// One RK4 step of a follower with `u` and `v` held over the step.
pub fn step_follower(
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    model: &AgentModel,
    dt: f64,
) -> Result<DVector<f64>> {
    model.check_dims(x, Some(u), v)?;
    let forcing = &model.b * u + &model.d * v;
    Ok(rk4_step(|_, y| &model.a * y + &forcing, 0.0, x, dt))
}

/// `e = C x + F v`.
pub fn tracking_error(
    x: &DVector<f64>,
    v: &DVector<f64>,
    model: &AgentModel,
) -> Result<DVector<f64>> {
    model.check_dims(x, None, v)?;
    Ok(&model.c * x + &model.f * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::benchmark::agent as benchmark_agent;
    use proptest::prelude::*;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn exosystem_quarter_turn() {
        let exo = ExosystemModel::new(vec![1.0]).unwrap();
        let e = exo.matrix();
        let dt = 1e-3;
        let steps = (std::f64::consts::FRAC_PI_2 / dt).round() as usize;
        let mut v = dv(&[0.0, 1.0]);
        for _ in 0..steps {
            v = step_exosystem(&v, &e, dt);
        }
        // integrate the residual fraction of a step exactly to land on π/2
        let rest = std::f64::consts::FRAC_PI_2 - steps as f64 * dt;
        v = step_exosystem(&v, &e, rest);
        assert!((v - dv(&[1.0, 0.0])).norm() < 1e-6);
    }

    #[test]
    fn exosystem_equilibrium() {
        let e = ExosystemModel::new(vec![1.0, 0.75]).unwrap().matrix();
        assert_eq!(
            step_exosystem(&DVector::zeros(4), &e, 1e-3),
            DVector::zeros(4)
        );
    }

    proptest! {
        #[test]
        fn exosystem_step_conserves_norm(
            v in proptest::collection::vec(-5.0f64..5.0, 4),
            dt in 1e-4f64..1e-2,
        ) {
            let e = ExosystemModel::new(vec![1.0, 0.75]).unwrap().matrix();
            let v = DVector::from_vec(v);
            let next = step_exosystem(&v, &e, dt);
            prop_assert!((next.norm() - v.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn exosystem_validation() {
        assert!(ExosystemModel::new(vec![]).is_err());
        assert!(ExosystemModel::new(vec![1.0, -1.0]).is_err());
        assert!(ExosystemModel::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn follower_equilibrium_and_integrator() {
        let model = benchmark_agent(1);
        let z = step_follower(
            &DVector::zeros(3),
            &DVector::zeros(1),
            &DVector::zeros(4),
            &model,
            1e-3,
        )
        .unwrap();
        assert_eq!(z, DVector::zeros(3));

        let integrator = AgentModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let x = dv(&[1.0, -2.0]);
        let u = dv(&[0.5, 3.0]);
        let next = step_follower(&x, &u, &DVector::zeros(2), &integrator, 0.01).unwrap();
        assert!((next - (x + u * 0.01)).norm() < 1e-15);
    }

    #[test]
    fn follower_step_halving() {
        let model = benchmark_agent(1);
        let x = DVector::zeros(3);
        let u = DVector::zeros(1);
        let v = dv(&[0.0, 1.0, 0.0, 0.5]);
        let dt = 1e-3;
        let full = step_follower(&x, &u, &v, &model, dt).unwrap();
        let half = step_follower(&x, &u, &v, &model, dt / 2.0).unwrap();
        let two_halves = step_follower(&half, &u, &v, &model, dt / 2.0).unwrap();
        assert!((full - two_halves).norm() < 1e-12);
    }

    #[test]
    fn follower_dimension_mismatch() {
        let model = benchmark_agent(1);
        assert!(step_follower(
            &DVector::zeros(2),
            &DVector::zeros(1),
            &DVector::zeros(4),
            &model,
            1e-3
        )
        .is_err());
        assert!(tracking_error(&DVector::zeros(3), &DVector::zeros(3), &model).is_err());
    }

    #[test]
    fn tracking_error_cases() {
        let model = benchmark_agent(2);
        let e = tracking_error(&dv(&[2.0, 0.0, 0.0]), &dv(&[1.0, 0.0, 0.0, 0.0]), &model).unwrap();
        assert!((e[0] - (-0.5)).abs() < 1e-15);
        assert_eq!(
            tracking_error(&DVector::zeros(3), &DVector::zeros(4), &model).unwrap(),
            DVector::zeros(1)
        );
        let identity = AgentModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let x = dv(&[3.0, -1.0]);
        assert_eq!(tracking_error(&x, &dv(&[7.0, 7.0]), &identity).unwrap(), x);
    }

    #[test]
    fn benchmark_agents_satisfy_assumptions() {
        let e = ExosystemModel::new(vec![1.0, 0.75]).unwrap().matrix();
        for i in 1..=4 {
            assert!(
                benchmark_agent(i).check_assumptions(&e).all_hold(),
                "agent {i}"
            );
        }
    }

    #[test]
    fn assumption_checks_detect_violations() {
        let e = ExosystemModel::new(vec![1.0]).unwrap().matrix();
        // unstable, uncontrollable mode
        let bad = AgentModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let r = bad.check_assumptions(&e);
        assert!(!r.stabilizable);
        assert!(r.observable);

        // stable uncontrollable mode is still stabilizable
        let ok = AgentModel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        assert!(ok.check_assumptions(&e).stabilizable);

        // transmission zero at s = ±i: plant (s² + 1)/(s+1)³-like numerator
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -3.0, -3.0]);
        let zero = AgentModel::new(
            a,
            DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 1.0]),
            DMatrix::zeros(3, 2),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        assert!(!zero.check_assumptions(&e).transmission_zeros_clear);
    }

    #[test]
    fn model_dimension_validation() {
        assert!(AgentModel::new(
            DMatrix::zeros(3, 3),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 3),
            DMatrix::zeros(3, 4),
            DMatrix::zeros(1, 4),
        )
        .is_err());
        assert!(AgentModel::new(
            DMatrix::zeros(3, 3),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 3),
            DMatrix::zeros(3, 4),
            DMatrix::zeros(1, 2),
        )
        .is_err());
    }
}
