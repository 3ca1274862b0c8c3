//! Data matrices for the off-policy least-squares solve.
//!
//! For a trial matrix `X_ij` the shifted state is `x̄ = x − X_ij·w`, where `w`
//! is the exostate signal an agent learns from (its estimate `η_i` by
//! default). Over each sampling interval `[t_{l−1}, t_l]` the rows hold
//!
//! ```text
//! δ_x̄x̄  = vecv(x̄(t_l)) − vecv(x̄(t_{l−1}))
//! Γ_x̄x̄  = ∫ x̄ ⊗ x̄ dτ,   Γ_x̄u = ∫ x̄ ⊗ u dτ,   Γ_x̄w = ∫ x̄ ⊗ w dτ
//! ```
//!
//! with integrals taken by the trapezoid rule on the simulation grid.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{null_space, numerical_rank};
use crate::plant::TrajectoryLog;

/// Relative singular-value threshold for the excitation rank test.
pub const RANK_REL_TOL: f64 = 1e-8;

pub fn vecs_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packs the upper triangle row by row, doubling off-diagonal entries.
pub fn vecs(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !p.is_square() {
        return Err(Error::Dimension("vecs needs a square matrix".into()));
    }
    let asym = (p - p.transpose()).amax();
    if asym > 1e-10 * p.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "vecs input is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let n = p.nrows();
    let mut out = Vec::with_capacity(vecs_len(n));
    for i in 0..n {
        for j in i..n {
            let s = 0.5 * (p[(i, j)] + p[(j, i)]);
            out.push(if i == j { s } else { 2.0 * s });
        }
    }
    Ok(DVector::from_vec(out))
}

/// Upper-triangular products `a_i a_j`, `i ≤ j`, so `vecv(a)·vecs(P) = aᵀPa`.
pub fn vecv(a: &[f64]) -> DVector<f64> {
    let n = a.len();
    let mut out = Vec::with_capacity(vecs_len(n));
    for i in 0..n {
        for j in i..n {
            out.push(a[i] * a[j]);
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`vecs`].
pub fn unvecs(packed: &[f64], n: usize) -> DMatrix<f64> {
    assert_eq!(packed.len(), vecs_len(n), "unvecs length");
    let mut p = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                p[(i, i)] = packed[k];
            } else {
                p[(i, j)] = 0.5 * packed[k];
                p[(j, i)] = 0.5 * packed[k];
            }
            k += 1;
        }
    }
    p
}

/// `X_0 = 0`, `X_1` with `C X_1 + F = 0`, and an orthonormal basis
/// `X_2 … X_{h+1}` of `ker(I_q ⊗ C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFamily {
    #[serde(with = "crate::matrix_serde::matrix")]
    pub particular: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix_vec")]
    pub kernel: Vec<DMatrix<f64>>,
}

impl BasisFamily {
    pub fn h(&self) -> usize {
        self.kernel.len()
    }

    /// `[X_0, X_1, …, X_{h+1}]`.
    pub fn members(&self) -> Vec<DMatrix<f64>> {
        let zero = DMatrix::zeros(self.particular.nrows(), self.particular.ncols());
        let mut out = vec![zero, self.particular.clone()];
        out.extend(self.kernel.iter().cloned());
        out
    }
}

pub fn null_basis(c: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<BasisFamily> {
    let (p, n) = c.shape();
    if f.nrows() != p {
        return Err(Error::Dimension("F must have as many rows as C".into()));
    }
    let q = f.ncols();
    if numerical_rank(c, 1e-12) < p {
        return Err(Error::InvalidModel(
            "output matrix C is rank deficient".into(),
        ));
    }
    // minimum-norm solution X_1 = Cᵀ (C Cᵀ)⁻¹ (−F)
    let cct = c * c.transpose();
    let y = cct
        .lu()
        .solve(&(-f))
        .ok_or_else(|| Error::InvalidModel("C Cᵀ is singular".into()))?;
    let particular = c.transpose() * y;

    let big = DMatrix::<f64>::identity(q, q).kronecker(c);
    let kernel_cols = null_space(&big, 1e-12);
    let kernel = kernel_cols
        .column_iter()
        .map(|col| DMatrix::from_column_slice(n, q, col.as_slice()))
        .collect();
    Ok(BasisFamily { particular, kernel })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExoSignal {
    /// The agent's observer estimate `η_i`.
    #[default]
    Estimate,
    /// The leader's true state `v` (ablation only).
    True,
}

/// Row block for one trial matrix `X_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    /// Sampling instants `t_0 < … < t_s`.
    pub instants: Vec<f64>,
    pub delta: DMatrix<f64>,
    pub gxx: DMatrix<f64>,
    pub gxu: DMatrix<f64>,
    pub gxv: DMatrix<f64>,
}

impl DataMatrices {
    pub fn rows(&self) -> usize {
        self.delta.nrows()
    }

    /// `[Γ_x̄x̄, Γ_x̄u, Γ_x̄w]`.
    pub fn gamma(&self) -> DMatrix<f64> {
        let s = self.rows();
        let (a, b, c) = (self.gxx.ncols(), self.gxu.ncols(), self.gxv.ncols());
        let mut g = DMatrix::zeros(s, a + b + c);
        g.view_mut((0, 0), (s, a)).copy_from(&self.gxx);
        g.view_mut((0, a), (s, b)).copy_from(&self.gxu);
        g.view_mut((0, a + b), (s, c)).copy_from(&self.gxv);
        g
    }

    /// CSV dump: `t_start,t_end,delta_*,gxx_*,gxu_*,gxv_*`, one row per interval.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t_start".to_string(), "t_end".to_string()];
        for (name, m) in [
            ("delta", &self.delta),
            ("gxx", &self.gxx),
            ("gxu", &self.gxu),
            ("gxv", &self.gxv),
        ] {
            header.extend((1..=m.ncols()).map(|k| format!("{name}_{k}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for l in 0..self.rows() {
            let mut row = vec![self.instants[l], self.instants[l + 1]];
            for m in [&self.delta, &self.gxx, &self.gxu, &self.gxv] {
                row.extend(m.row(l).iter());
            }
            let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty data-matrix CSV".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let count = |prefix: &str| cols.iter().filter(|c| c.starts_with(prefix)).count();
        let (nd, nxx, nxu, nxv) = (count("delta_"), count("gxx_"), count("gxu_"), count("gxv_"));
        let n = (nxx as f64).sqrt().round() as usize;
        if n * n != nxx || n == 0 || vecs_len(n) != nd || nxu % n != 0 || nxv % n != 0 {
            return Err(Error::Config(
                "data-matrix CSV header has inconsistent widths".into(),
            ));
        }
        let (m, q) = (nxu / n, nxv / n);
        let mut instants = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("data-matrix CSV: {e}")))?;
            if vals.len() != cols.len() {
                return Err(Error::Config("data-matrix CSV row width".into()));
            }
            if instants.is_empty() {
                instants.push(vals[0]);
            }
            instants.push(vals[1]);
            rows.push(vals[2..].to_vec());
        }
        let s = rows.len();
        let block =
            |start: usize, width: usize| DMatrix::from_fn(s, width, |i, j| rows[i][start + j]);
        Ok(Self {
            n,
            m,
            q,
            instants,
            delta: block(0, nd),
            gxx: block(nd, nxx),
            gxu: block(nd + nxx, nxu),
            gxv: block(nd + nxx + nxu, nxv),
        })
    }
}

fn kron_into(out: &mut [f64], a: &[f64], b: &[f64]) {
    let mut k = 0;
    for &ai in a {
        for &bj in b {
            out[k] = ai * bj;
            k += 1;
        }
    }
}

/// Builds the δ/Γ rows for trial matrix `x_ij` from a logged run of `agent`
/// (0-based).
pub fn accumulate(
    log: &TrajectoryLog,
    agent: usize,
    x_ij: &DMatrix<f64>,
    instants: &[f64],
    signal: ExoSignal,
) -> Result<DataMatrices> {
    let trace = log
        .agents
        .get(agent)
        .ok_or_else(|| Error::InvalidArgument(format!("agent {agent} not in log")))?;
    let (n, m, q) = (trace.x.dim(), trace.u.dim(), log.v.dim());
    if x_ij.shape() != (n, q) {
        return Err(Error::Dimension(format!(
            "trial matrix is {:?}, expected ({n}, {q})",
            x_ij.shape()
        )));
    }
    if instants.len() < 2 {
        return Err(Error::Sampling(
            "need at least two sampling instants".into(),
        ));
    }
    if instants.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Sampling(
            "sampling instants must be strictly increasing".into(),
        ));
    }
    let idx: Vec<usize> = instants
        .iter()
        .map(|&t| log.require_index(t))
        .collect::<Result<_>>()?;

    let s = instants.len() - 1;
    let mut delta = DMatrix::zeros(s, vecs_len(n));
    let mut gxx = DMatrix::zeros(s, n * n);
    let mut gxu = DMatrix::zeros(s, n * m);
    let mut gxv = DMatrix::zeros(s, n * q);

    let exo = |k: usize| match signal {
        ExoSignal::Estimate => trace.eta.at(k),
        ExoSignal::True => log.v.at(k),
    };
    let xbar = |k: usize| {
        let w = DVector::from_column_slice(exo(k));
        DVector::from_column_slice(trace.x.at(k)) - x_ij * w
    };

    let mut buf_xx = vec![0.0; n * n];
    let mut buf_xu = vec![0.0; n * m];
    let mut buf_xv = vec![0.0; n * q];
    let h = log.dt;
    for l in 0..s {
        let (a, b) = (idx[l], idx[l + 1]);
        let xa = xbar(a);
        let xb = xbar(b);
        delta.set_row(l, &(vecv(xb.as_slice()) - vecv(xa.as_slice())).transpose());
        for k in a..=b {
            let weight = if k == a || k == b { 0.5 * h } else { h };
            let xk = if k == a {
                xa.clone()
            } else if k == b {
                xb.clone()
            } else {
                xbar(k)
            };
            kron_into(&mut buf_xx, xk.as_slice(), xk.as_slice());
            kron_into(&mut buf_xu, xk.as_slice(), trace.u.at(k));
            kron_into(&mut buf_xv, xk.as_slice(), exo(k));
            for (c, v) in buf_xx.iter().enumerate() {
                gxx[(l, c)] += weight * v;
            }
            for (c, v) in buf_xu.iter().enumerate() {
                gxu[(l, c)] += weight * v;
            }
            for (c, v) in buf_xv.iter().enumerate() {
                gxv[(l, c)] += weight * v;
            }
        }
    }
    Ok(DataMatrices {
        n,
        m,
        q,
        instants: instants.to_vec(),
        delta,
        gxx,
        gxu,
        gxv,
    })
}

/// `n(n+1)/2 + (m+q)·n`.
pub fn required_rank(n: usize, m: usize, q: usize) -> usize {
    vecs_len(n) + (m + q) * n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReport {
    pub required: usize,
    pub achieved: usize,
}

impl RankReport {
    pub fn holds(&self) -> bool {
        self.achieved >= self.required
    }

    pub fn into_result(self) -> Result<Self> {
        if self.holds() {
            Ok(self)
        } else {
            Err(Error::RankCondition {
                required: self.required,
                achieved: self.achieved,
            })
        }
    }
}

/// Excitation check on `[Γ_x̄x̄, Γ_x̄u, Γ_x̄w]`.
pub fn rank_condition(data: &DataMatrices) -> RankReport {
    RankReport {
        required: required_rank(data.n, data.m, data.q),
        achieved: numerical_rank(&data.gamma(), RANK_REL_TOL),
    }
}
