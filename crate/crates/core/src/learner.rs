//! Off-policy policy iteration from logged data.
//!
//! Each step solves, in least squares,
//!
//! ```text
//! [δ, −2Γ_x̄x̄(I⊗K_kᵀR) − 2Γ_x̄u(I⊗R), −2Γ_x̄w] · [vecs(P_k); vec(K_{k+1}); vec(Λ)]
//!     = −Γ_x̄x̄ · vec(Q + K_kᵀRK_k)
//! ```
//!
//! where `Λ = (D − S(X))ᵀP_k` and `S(X) = XE − AX`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datacollect::{rank_condition, unvecs, vecs_len, BasisFamily, DataMatrices, RankReport};
use crate::error::{Error, Result};
use crate::linalg::{
    condition_number, is_positive_definite, lstsq, numerical_rank, symmetrize, unvec, vec,
};
use crate::oracle::{block_diag, min_weighted_solution};

/// Largest acceptable condition number of the least-squares matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Largest acceptable residual of `S(X) = B̂U + D̂`.
pub const REGULATOR_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdpStep {
    pub p: DMatrix<f64>,
    pub k_next: DMatrix<f64>,
    /// `(D − S(X_j))ᵀP`, `q × n`.
    pub lambda: DMatrix<f64>,
    pub condition: f64,
}

fn check_weights(n: usize, m: usize, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(
            "weights do not match the data dimensions".into(),
        ));
    }
    if !is_positive_definite(r) {
        return Err(Error::InvalidArgument("R must be positive definite".into()));
    }
    Ok(())
}

/// One least-squares solve at gain `k`. `iteration` is only used in errors.
pub fn adp_solve_step(
    data: &DataMatrices,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    iteration: usize,
) -> Result<AdpStep> {
    let (n, m, qd) = (data.n, data.m, data.q);
    check_weights(n, m, q, r)?;
    if k.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "gain is {:?}, expected ({m}, {n})",
            k.shape()
        )));
    }
    let s = data.rows();
    let (c1, c2, c3) = (vecs_len(n), n * m, n * qd);
    let in_ = DMatrix::<f64>::identity(n, n);
    let mut psi = DMatrix::zeros(s, c1 + c2 + c3);
    psi.view_mut((0, 0), (s, c1)).copy_from(&data.delta);
    let block2 =
        (&data.gxx * in_.kronecker(&(k.transpose() * r)) + &data.gxu * in_.kronecker(r)) * -2.0;
    psi.view_mut((0, c1), (s, c2)).copy_from(&block2);
    psi.view_mut((0, c1 + c2), (s, c3))
        .copy_from(&(&data.gxv * -2.0));
    let phi: DVector<f64> = -(&data.gxx * vec(&(q + k.transpose() * r * k)));

    let condition = condition_number(&psi);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Excitation { cond: condition });
    }
    let theta = lstsq(&psi, &phi, 1e-14).solution;
    let p = symmetrize(&unvecs(&theta.as_slice()[..c1], n));
    if !is_positive_definite(&p) {
        return Err(Error::NotPositiveDefinite { iteration });
    }
    Ok(AdpStep {
        p,
        k_next: unvec(&theta.as_slice()[c1..c1 + c2], m, n),
        lambda: unvec(&theta.as_slice()[c1 + c2..], qd, n),
        condition,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖P_k − P_{k−1}‖_F`, absent at `k = 0`.
    pub step: Option<f64>,
    /// `‖P_k − P*‖_F` when a reference was supplied.
    pub reference_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackResult {
    /// `P_{k*}`.
    pub p: DMatrix<f64>,
    /// `K_{k*}`, the gain `P_{k*}` evaluates.
    pub k_eval: DMatrix<f64>,
    /// `K_{k*+1}`.
    pub k_next: DMatrix<f64>,
    /// `Λ_0` at the terminal step.
    pub lambda0: DMatrix<f64>,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    /// `K_0 … K_{k*+1}`.
    pub gains: Vec<DMatrix<f64>>,
    /// `P_0 … P_{k*}`.
    pub values: Vec<DMatrix<f64>>,
}

/// Repeats [`adp_solve_step`] until `‖P_k − P_{k−1}‖_F < tol`.
pub fn learn_feedback(
    data0: &DataMatrices,
    k0: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
    reference: Option<&DMatrix<f64>>,
) -> Result<FeedbackResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(
            "stopping tolerance must be positive".into(),
        ));
    }
    let mut gains = vec![k0.clone()];
    let mut values: Vec<DMatrix<f64>> = Vec::new();
    let mut history = Vec::new();
    let mut last_step = f64::INFINITY;
    for it in 0..max_iter {
        let k = gains.last().expect("nonempty").clone();
        let step = adp_solve_step(data0, &k, q, r, it)?;
        let diff = values.last().map(|prev| (&step.p - prev).norm());
        history.push(IterationRecord {
            k: it,
            step: diff,
            reference_gap: reference.map(|p_ref| (&step.p - p_ref).norm()),
        });
        values.push(step.p.clone());
        gains.push(step.k_next.clone());
        if let Some(d) = diff {
            last_step = d;
            if d < tol {
                return Ok(FeedbackResult {
                    p: step.p,
                    k_eval: k,
                    k_next: step.k_next,
                    lambda0: step.lambda,
                    iterations: it,
                    history,
                    gains,
                    values,
                });
            }
        }
    }
    Err(Error::IterationCap {
        cap: max_iter,
        last_step,
    })
}

/// `D̂ = P⁻¹Λ_0ᵀ` and `S(X_j) = P⁻¹(Λ_0 − Λ_j)ᵀ` for `j ≥ 1`.
pub fn extract_sylvester(
    lambdas: &[DMatrix<f64>],
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let lambda0 = lambdas
        .first()
        .ok_or_else(|| Error::InvalidArgument("no Λ blocks supplied".into()))?;
    let chol = p
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { iteration: 0 })?;
    let d_hat = chol.solve(&lambda0.transpose());
    let sylv = lambdas[1..]
        .iter()
        .map(|l| chol.solve(&(lambda0 - l).transpose()))
        .collect();
    Ok((d_hat, sylv))
}

/// `B̂ = P⁻¹K_{k*+1}ᵀR`.
pub fn input_matrix(
    p: &DMatrix<f64>,
    k_next: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { iteration: 0 })?;
    Ok(chol.solve(&(k_next.transpose() * r)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSolution {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub alpha: DVector<f64>,
    /// `‖S(X) − B̂U − D̂‖_F`.
    pub residual: f64,
}

/// Minimizes `tr(XᵀQ̄X + UᵀR̄U)` over `X = X_1 + Σ α_j X_j` with
/// `S(X) = B̂U + D̂`.
///
/// `sylvester[0]` is `S(X_1)`, the rest follow `basis.kernel`.
pub fn solve_regulator(
    basis: &BasisFamily,
    sylvester: &[DMatrix<f64>],
    b_hat: &DMatrix<f64>,
    d_hat: &DMatrix<f64>,
    q_bar: &DMatrix<f64>,
    r_bar: &DMatrix<f64>,
) -> Result<RegulatorSolution> {
    let (n, q) = basis.particular.shape();
    let m = b_hat.ncols();
    let h = basis.h();
    if sylvester.len() != h + 1 || b_hat.nrows() != n || d_hat.shape() != (n, q) {
        return Err(Error::Dimension(
            "solve_regulator: inconsistent inputs".into(),
        ));
    }
    if numerical_rank(b_hat, 1e-10) < m {
        return Err(Error::InputRecovery(
            "learned input matrix is rank deficient".into(),
        ));
    }
    let iq = DMatrix::<f64>::identity(q, q);
    let nq = n * q;
    // unknowns z = [α; vec U]
    let mut lhs = DMatrix::zeros(nq, h + m * q);
    for (j, s) in sylvester[1..].iter().enumerate() {
        lhs.set_column(j, &vec(s));
    }
    lhs.view_mut((0, h), (nq, m * q))
        .copy_from(&(-iq.kronecker(b_hat)));
    let rhs = vec(&(d_hat - &sylvester[0]));

    let mut g = DMatrix::zeros(nq, h);
    for (j, x) in basis.kernel.iter().enumerate() {
        g.set_column(j, &vec(x));
    }
    let wq = iq.kronecker(q_bar);
    let x1 = vec(&basis.particular);
    let hess = block_diag(&(g.transpose() * &wq * &g), &iq.kronecker(r_bar));
    let mut lin = DVector::zeros(h + m * q);
    lin.rows_mut(0, h).copy_from(&(g.transpose() * &wq * &x1));
    let z = min_weighted_solution(&lhs, &rhs, &hess, &lin)?;

    let residual = (&lhs * &z - &rhs).norm();
    if residual > REGULATOR_TOL {
        return Err(Error::RegulatorInconsistent { residual });
    }
    let alpha = z.rows(0, h).into_owned();
    let x = &basis.particular
        + basis
            .kernel
            .iter()
            .zip(alpha.iter())
            .fold(DMatrix::zeros(n, q), |acc, (xj, a)| acc + xj * *a);
    Ok(RegulatorSolution {
        x,
        u: unvec(&z.as_slice()[h..], m, q),
        alpha,
        residual,
    })
}

/// `L = U + K X`.
pub fn feedforward_gain(k: &DMatrix<f64>, x: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    u + k * x
}

/// `u = −K x + L η`.
pub fn control_law(
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    x: &DVector<f64>,
    eta: &DVector<f64>,
) -> DVector<f64> {
    l * eta - k * x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedPolicy {
    #[serde(with = "crate::matrix_serde::matrix")]
    pub p: DMatrix<f64>,
    /// `K_{k*+1}`.
    #[serde(with = "crate::matrix_serde::matrix")]
    pub k: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub l: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub x: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub u: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::vector")]
    pub alpha: DVector<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub d_hat: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub b_hat: DMatrix<f64>,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub rank: RankReport,
    pub regulator_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSettings {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

/// Full per-agent pipeline on data blocks for `X_0, X_1, …, X_{h+1}`.
pub fn learn_policy(
    data: &[DataMatrices],
    basis: &BasisFamily,
    k0: &DMatrix<f64>,
    settings: &LearnerSettings,
    reference_p: Option<&DMatrix<f64>>,
) -> Result<LearnedPolicy> {
    if data.len() != basis.h() + 2 {
        return Err(Error::Dimension(format!(
            "{} data blocks for {} trial matrices",
            data.len(),
            basis.h() + 2
        )));
    }
    let rank = rank_condition(&data[0]).into_result()?;
    let fb = learn_feedback(
        &data[0],
        k0,
        &settings.q,
        &settings.r,
        settings.tolerance,
        settings.max_iterations,
        reference_p,
    )?;
    let mut lambdas = vec![fb.lambda0.clone()];
    for d in &data[1..] {
        lambdas
            .push(adp_solve_step(d, &fb.k_eval, &settings.q, &settings.r, fb.iterations)?.lambda);
    }
    let (d_hat, sylv) = extract_sylvester(&lambdas, &fb.p)?;
    let b_hat = input_matrix(&fb.p, &fb.k_next, &settings.r)?;
    let reg = solve_regulator(
        basis,
        &sylv,
        &b_hat,
        &d_hat,
        &settings.q_bar,
        &settings.r_bar,
    )?;
    let l = feedforward_gain(&fb.k_next, &reg.x, &reg.u);
    Ok(LearnedPolicy {
        p: fb.p,
        k: fb.k_next,
        l,
        x: reg.x,
        u: reg.u,
        alpha: reg.alpha,
        d_hat,
        b_hat,
        iterations: fb.iterations,
        history: fb.history,
        rank,
        regulator_residual: reg.residual,
    })
}
