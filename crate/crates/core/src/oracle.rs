//! Model-based ground truth: Lyapunov solves, Kleinman iteration, exact
//! regulator equations, and noiseless synthetic learning data.
//!
//! Everything here reads the true `(A, B, D, E)`. The learner never calls it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datacollect::{vecs_len, vecv, DataMatrices};
use crate::error::{Error, Result};
use crate::linalg::{null_space, spectral_abscissa, symmetrize, unvec, vec};
use crate::plant::{exploration_noise, rk4_step, AgentModel, ExosystemModel, NoiseSpec};

/// Solves `P A + Aᵀ P + W = 0` for Hurwitz `A`.
pub fn lyapunov_solve(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || w.shape() != (n, n) {
        return Err(Error::Dimension(
            "lyapunov_solve needs square A and W of equal size".into(),
        ));
    }
    let abscissa = spectral_abscissa(a);
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let lhs = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -vec(w);
    let sol = lhs.lu().solve(&rhs).ok_or(Error::NotHurwitz { abscissa })?;
    Ok(symmetrize(&unvec(sol.as_slice(), n, n)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KleinmanResult {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// `P_0, P_1, …` in evaluation order.
    pub history: Vec<DMatrix<f64>>,
}

/// Policy iteration on the true model. `K_{k+1} = R⁻¹BᵀP_k` where `P_k`
/// evaluates `K_k`; stops when `‖P_k − P_{k−1}‖_F < tol·max(1, ‖P_k‖_F)`.
pub fn kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<KleinmanResult> {
    let n = a.nrows();
    let m = b.ncols();
    if b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) || k0.shape() != (m, n) {
        return Err(Error::Dimension(
            "kleinman: inconsistent A, B, Q, R, K0".into(),
        ));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("R must be positive definite".into()))?
        .inverse();
    let mut k = k0.clone();
    let mut history: Vec<DMatrix<f64>> = Vec::new();
    let mut last_step = f64::INFINITY;
    for it in 0..max_iter {
        let a_cl = a - b * &k;
        let w = q + k.transpose() * r * &k;
        let p = lyapunov_solve(&a_cl, &w)?;
        k = &r_inv * b.transpose() * &p;
        if let Some(prev) = history.last() {
            last_step = (&p - prev).norm();
            if last_step < tol * p.norm().max(1.0) {
                history.push(p.clone());
                return Ok(KleinmanResult {
                    p,
                    k,
                    iterations: it,
                    history,
                });
            }
        }
        history.push(p);
    }
    Err(Error::IterationCap {
        cap: max_iter,
        last_step,
    })
}

/// `‖AᵀP + PA + Q − PBR⁻¹BᵀP‖_F`.
pub fn are_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let r_inv = r.clone().try_inverse().expect("R invertible");
    (a.transpose() * p + p * a + q - p * b * r_inv * b.transpose() * p).norm()
}

/// Minimizes `tr(XᵀQ̄X + UᵀR̄U)` subject to `XE = AX + BU + D`, `CX + F = 0`.
pub fn exact_regulator(
    model: &AgentModel,
    e: &DMatrix<f64>,
    q_bar: &DMatrix<f64>,
    r_bar: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m, p, q) = (model.n(), model.m(), model.p(), model.q());
    if e.shape() != (q, q) || q_bar.shape() != (n, n) || r_bar.shape() != (m, m) {
        return Err(Error::Dimension(
            "exact_regulator: inconsistent E, Q̄, R̄".into(),
        ));
    }
    let iq = DMatrix::<f64>::identity(q, q);
    let in_ = DMatrix::<f64>::identity(n, n);
    let (nx, nu) = (n * q, m * q);
    let mut lhs = DMatrix::zeros(nx + p * q, nx + nu);
    lhs.view_mut((0, 0), (nx, nx))
        .copy_from(&(e.transpose().kronecker(&in_) - iq.kronecker(&model.a)));
    lhs.view_mut((0, nx), (nx, nu))
        .copy_from(&(-iq.kronecker(&model.b)));
    lhs.view_mut((nx, 0), (p * q, nx))
        .copy_from(&iq.kronecker(&model.c));
    let mut rhs = DVector::zeros(nx + p * q);
    rhs.rows_mut(0, nx).copy_from(&vec(&model.d));
    rhs.rows_mut(nx, p * q).copy_from(&(-vec(&model.f)));

    let weight = block_diag(&iq.kronecker(q_bar), &iq.kronecker(r_bar));
    let z = min_weighted_solution(&lhs, &rhs, &weight, &DVector::zeros(nx + nu))?;
    let residual = (&lhs * &z - &rhs).norm();
    if residual > 1e-8 * (1.0 + rhs.norm()) {
        return Err(Error::RegulatorInfeasible { residual });
    }
    Ok((
        unvec(&z.as_slice()[..nx], n, q),
        unvec(&z.as_slice()[nx..], m, q),
    ))
}

pub(crate) fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// Minimizer of `zᵀHz + 2fᵀz` over the affine set `{z : M z = g}` (least
/// squares if inconsistent). `H` must be positive definite on `ker M`.
pub(crate) fn min_weighted_solution(
    m: &DMatrix<f64>,
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let z0 = svd
        .solve(g, 1e-12 * smax.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let basis = null_space(m, 1e-12);
    if basis.ncols() == 0 {
        return Ok(z0);
    }
    let reduced = basis.transpose() * h * &basis;
    let grad = basis.transpose() * (h * &z0 + f);
    let beta = reduced
        .cholesky()
        .ok_or_else(|| {
            Error::InvalidArgument("objective not strictly convex on the solution set".into())
        })?
        .solve(&(-grad));
    Ok(z0 + basis * beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    #[serde(with = "crate::matrix_serde::matrix")]
    pub p: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub k: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub x: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub u: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub l: DMatrix<f64>,
    pub iterations: usize,
}

/// Kleinman plus exact regulator, `L* = U* + K*X*`. Without `k0` a
/// stabilizing start is built by [`stabilizing_gain`].
pub fn optimal_policy(
    model: &AgentModel,
    e: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q_bar: &DMatrix<f64>,
    r_bar: &DMatrix<f64>,
    k0: Option<&DMatrix<f64>>,
) -> Result<OracleSolution> {
    let k0 = match k0 {
        Some(k) => k.clone(),
        None => stabilizing_gain(&model.a, &model.b)?,
    };
    let kl = kleinman(&model.a, &model.b, q, r, &k0, 1e-13, 200)?;
    let (x, u) = exact_regulator(model, e, q_bar, r_bar)?;
    let l = &u + &kl.k * &x;
    Ok(OracleSolution {
        p: kl.p,
        k: kl.k,
        x,
        u,
        l,
        iterations: kl.iterations,
    })
}

/// Ackermann's formula for single-input systems.
pub fn place_poles(a: &DMatrix<f64>, b: &DMatrix<f64>, poles: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if b.ncols() != 1 {
        return Err(Error::InvalidArgument(
            "pole placement is implemented for single-input agents only".into(),
        ));
    }
    if poles.len() != n {
        return Err(Error::Dimension(format!(
            "{} poles for a state of dimension {n}",
            poles.len()
        )));
    }
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.column(0).into_owned();
    for k in 0..n {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    let ctrb_inv = ctrb
        .try_inverse()
        .ok_or_else(|| Error::InvalidModel("(A, B) is not controllable".into()))?;
    // desired characteristic polynomial evaluated at A
    let mut phi = DMatrix::<f64>::identity(n, n);
    for &s in poles {
        phi = &phi * (a - DMatrix::identity(n, n) * s);
    }
    let last = ctrb_inv.row(n - 1).into_owned();
    Ok(DMatrix::from_row_slice(1, n, (last * phi).as_slice()))
}

/// Bass-style stabilization: with `β > −min Re λ(A)` and `Z` solving
/// `(A + βI)Z + Z(A + βI)ᵀ = 2BBᵀ`, the gain `BᵀZ⁻¹` places every closed-loop
/// eigenvalue left of `−β`.
pub fn stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let beta = a.norm() + 1.0;
    let shifted = -(a + DMatrix::identity(n, n) * beta);
    // shiftedᵀ Z' + Z' shifted + W = 0 form with shiftedᵀ = −(A + βI)ᵀ
    let z = lyapunov_solve(&shifted.transpose(), &(b * b.transpose() * 2.0))?;
    let z_inv = z
        .try_inverse()
        .ok_or_else(|| Error::InvalidModel("(A, B) is not controllable".into()))?;
    Ok(b.transpose() * z_inv)
}

/// Behaviour policy and sampling grid for [`synthetic_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub k0: DMatrix<f64>,
    pub noise: NoiseSpec,
    pub x0: DVector<f64>,
    pub v0: DVector<f64>,
    pub dt: f64,
    /// Integration steps per sampling interval.
    pub steps_per_interval: usize,
    pub intervals: usize,
}

/// Learning data from the true model with the true exostate, integrals
/// carried as extra RK4 states so they carry no quadrature error.
///
/// Returns one row block per trial matrix.
pub fn synthetic_data(
    model: &AgentModel,
    exo: &ExosystemModel,
    spec: &SyntheticSpec,
    trials: &[DMatrix<f64>],
) -> Result<Vec<DataMatrices>> {
    let (n, m, q) = (model.n(), model.m(), model.q());
    if exo.dim() != q || spec.k0.shape() != (m, n) || spec.noise.dim() != m {
        return Err(Error::Dimension("synthetic_data: inconsistent spec".into()));
    }
    let e = exo.matrix();
    // accumulator layout: x⊗x, x⊗v, v⊗x, v⊗v, x⊗u, v⊗u
    let sizes = [n * n, n * q, q * n, q * q, n * m, q * m];
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(n + q, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let total = n + q + sizes.iter().sum::<usize>();

    let rhs = |t: f64, y: &DVector<f64>| -> DVector<f64> {
        let x = y.rows(0, n).into_owned();
        let v = y.rows(n, q).into_owned();
        let u = -&spec.k0 * &x + exploration_noise(t, &spec.noise);
        let mut dy = DVector::zeros(total);
        dy.rows_mut(0, n)
            .copy_from(&(&model.a * &x + &model.b * &u + &model.d * &v));
        dy.rows_mut(n, q).copy_from(&(&e * &v));
        let prods = [
            x.kronecker(&x),
            x.kronecker(&v),
            v.kronecker(&x),
            v.kronecker(&v),
            x.kronecker(&u),
            v.kronecker(&u),
        ];
        for (o, p) in offsets.iter().zip(prods.iter()) {
            dy.rows_mut(*o, p.len()).copy_from(p);
        }
        dy
    };

    let mut y = DVector::zeros(total);
    y.rows_mut(0, n).copy_from(&spec.x0);
    y.rows_mut(n, q).copy_from(&spec.v0);
    let mut t = 0.0;
    let mut states = vec![(y.rows(0, n).into_owned(), y.rows(n, q).into_owned())];
    let mut integrals: Vec<Vec<DVector<f64>>> = Vec::with_capacity(spec.intervals);
    let mut instants = vec![0.0];
    for l in 0..spec.intervals {
        for _ in 0..spec.steps_per_interval {
            y = rk4_step(rhs, t, &y, spec.dt);
            t += spec.dt;
        }
        t = (l + 1) as f64 * spec.steps_per_interval as f64 * spec.dt;
        instants.push(t);
        states.push((y.rows(0, n).into_owned(), y.rows(n, q).into_owned()));
        integrals.push(
            offsets
                .iter()
                .zip(sizes.iter())
                .map(|(&o, &s)| y.rows(o, s).into_owned())
                .collect(),
        );
        y.rows_mut(n + q, total - n - q).fill(0.0);
    }

    let in_ = DMatrix::<f64>::identity(n, n);
    let im = DMatrix::<f64>::identity(m, m);
    let iq = DMatrix::<f64>::identity(q, q);
    trials
        .iter()
        .map(|x_j| {
            if x_j.shape() != (n, q) {
                return Err(Error::Dimension("trial matrix shape".into()));
            }
            let s = spec.intervals;
            let mut d = DataMatrices {
                n,
                m,
                q,
                instants: instants.clone(),
                delta: DMatrix::zeros(s, vecs_len(n)),
                gxx: DMatrix::zeros(s, n * n),
                gxu: DMatrix::zeros(s, n * m),
                gxv: DMatrix::zeros(s, n * q),
            };
            let i_x = in_.kronecker(x_j);
            let x_i = x_j.kronecker(&in_);
            let x_x = x_j.kronecker(x_j);
            let x_im = x_j.kronecker(&im);
            let x_iq = x_j.kronecker(&iq);
            for l in 0..s {
                let bar = |k: usize| &states[k].0 - x_j * &states[k].1;
                let (a0, a1) = (bar(l), bar(l + 1));
                d.delta
                    .set_row(l, &(vecv(a1.as_slice()) - vecv(a0.as_slice())).transpose());
                let g = &integrals[l];
                let gxx = &g[0] - &i_x * &g[1] - &x_i * &g[2] + &x_x * &g[3];
                let gxu = &g[4] - &x_im * &g[5];
                let gxv = &g[1] - &x_iq * &g[3];
                d.gxx.set_row(l, &gxx.transpose());
                d.gxu.set_row(l, &gxu.transpose());
                d.gxv.set_row(l, &gxv.transpose());
            }
            Ok(d)
        })
        .collect()
}
