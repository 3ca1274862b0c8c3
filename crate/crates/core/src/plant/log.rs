use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Fixed-dimension samples stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, sample: &[f64]) {
        assert_eq!(sample.len(), self.dim, "signal sample dimension");
        self.data.extend_from_slice(sample);
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn vector(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.at(k))
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// Per-follower recorded signals.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrace {
    pub x: Signal,
    pub u: Signal,
    pub eta: Signal,
    pub what: Signal,
    pub e: Signal,
    /// `‖ε_i‖` at each sample.
    pub eps_norm: Signal,
}

impl AgentTrace {
    pub fn new(n: usize, m: usize, q: usize, p: usize) -> Self {
        Self {
            x: Signal::new(n),
            u: Signal::new(m),
            eta: Signal::new(q),
            what: Signal::new(q / 2),
            e: Signal::new(p),
            eps_norm: Signal::new(1),
        }
    }
}

/// Uniform-grid record of a joint simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub t0: f64,
    pub dt: f64,
    pub v: Signal,
    pub agents: Vec<AgentTrace>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    /// Grid index of `t`, if `t` lies on the grid (within 1e−9 steps).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let s = (t - self.t0) / self.dt;
        let k = s.round();
        if (s - k).abs() > 1e-9 || k < 0.0 || k as usize >= self.len() {
            None
        } else {
            Some(k as usize)
        }
    }

    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t).ok_or_else(|| {
            Error::Sampling(format!(
                "t = {t} is not on the log grid [{}, {}] with step {}",
                self.t0,
                self.end_time(),
                self.dt
            ))
        })
    }

    /// CSV with columns `t, v1..vq`, then per agent `x_i_*, u_i_*, eta_i_*,
    /// e_i_*, what_i_*, epsnorm_i`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.v.dim()).map(|k| format!("v{k}")));
        for (i, a) in self.agents.iter().enumerate() {
            let i = i + 1;
            for (name, sig) in [
                ("x", &a.x),
                ("u", &a.u),
                ("eta", &a.eta),
                ("e", &a.e),
                ("what", &a.what),
            ] {
                header.extend((1..=sig.dim()).map(|k| format!("{name}_{i}_{k}")));
            }
            header.push(format!("epsnorm_{i}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![self.time(k)];
            row.extend_from_slice(self.v.at(k));
            for a in &self.agents {
                for sig in [&a.x, &a.u, &a.eta, &a.e, &a.what, &a.eps_norm] {
                    row.extend_from_slice(sig.at(k));
                }
            }
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}
