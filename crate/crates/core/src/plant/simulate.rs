use nalgebra::DVector;

use super::{AgentModel, AgentTrace, ExosystemModel, Signal, TrajectoryLog};
use crate::error::{Error, Result};
use crate::observer::{local_error, observer_rhs, ObserverGains, ObserverState};
use crate::topology::CommGraph;

/// States whose norm exceeds this abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Per-agent feedback law `u_i = κ(t, x_i, η_i)`.
///
/// The true exostate is passed for reference controllers; learned policies
/// must not read it.
pub trait Controller: Sync {
    fn control(
        &self,
        agent: usize,
        t: f64,
        x: &DVector<f64>,
        eta: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64>;
}

impl<F> Controller for F
where
    F: Fn(usize, f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Sync,
{
    fn control(
        &self,
        agent: usize,
        t: f64,
        x: &DVector<f64>,
        eta: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        self(agent, t, x, eta, v)
    }
}

/// Leader, followers, graph, and observer gains integrated together.
#[derive(Debug, Clone, Copy)]
pub struct World<'a> {
    pub exosystem: &'a ExosystemModel,
    pub agents: &'a [AgentModel],
    pub graph: &'a CommGraph,
    pub observer: &'a ObserverGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: DVector<f64>,
    pub observer: ObserverState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub t: f64,
    pub v: DVector<f64>,
    pub agents: Vec<AgentState>,
}

impl WorldState {
    /// Zero follower states and zero observer estimates.
    pub fn initial(world: &World<'_>, v0: DVector<f64>) -> Self {
        let q = world.exosystem.dim();
        Self {
            t: 0.0,
            v: v0,
            agents: world
                .agents
                .iter()
                .map(|a| AgentState {
                    x: DVector::zeros(a.n()),
                    observer: ObserverState::zeros(q),
                })
                .collect(),
        }
    }
}

struct Outputs {
    u: DVector<f64>,
    e: DVector<f64>,
    eps: DVector<f64>,
}

impl World<'_> {
    fn validate(&self, state: &WorldState) -> Result<()> {
        let q = self.exosystem.dim();
        if self.agents.len() != self.graph.num_followers()
            || state.agents.len() != self.agents.len()
        {
            return Err(Error::Dimension(
                "agent count differs between models, graph, and state".into(),
            ));
        }
        if 2 * self.observer.num_blocks() != q || state.v.len() != q {
            return Err(Error::Dimension(
                "observer gains / exostate dimension".into(),
            ));
        }
        for (model, s) in self.agents.iter().zip(&state.agents) {
            if model.q() != q {
                return Err(Error::Dimension("agent D/F columns must equal q".into()));
            }
            model.check_dims(&s.x, None, &state.v)?;
            if s.observer.eta.len() != q || s.observer.what.len() != q / 2 {
                return Err(Error::Dimension("observer state dimension".into()));
            }
        }
        Ok(())
    }

    fn pack(&self, s: &WorldState) -> DVector<f64> {
        let mut y = Vec::new();
        y.extend_from_slice(s.v.as_slice());
        for a in &s.agents {
            y.extend_from_slice(a.x.as_slice());
            y.extend_from_slice(a.observer.eta.as_slice());
            y.extend_from_slice(a.observer.what.as_slice());
        }
        DVector::from_vec(y)
    }

    fn unpack(&self, t: f64, y: &DVector<f64>) -> WorldState {
        let q = self.exosystem.dim();
        let mut off = q;
        let mut take = |len: usize| {
            let v = DVector::from_column_slice(&y.as_slice()[off..off + len]);
            off += len;
            v
        };
        let agents = self
            .agents
            .iter()
            .map(|m| {
                let x = take(m.n());
                let eta = take(q);
                let what = take(q / 2);
                AgentState {
                    x,
                    observer: ObserverState { eta, what },
                }
            })
            .collect();
        WorldState {
            t,
            v: DVector::from_column_slice(&y.as_slice()[..q]),
            agents,
        }
    }

    fn outputs(&self, s: &WorldState, controller: &dyn Controller) -> Result<Vec<Outputs>> {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, model)| {
                let a = &s.agents[i];
                let u = controller.control(i, s.t, &a.x, &a.observer.eta, &s.v);
                if u.len() != model.m() {
                    return Err(Error::Dimension(format!(
                        "controller returned {} inputs for agent {}, expected {}",
                        u.len(),
                        i + 1,
                        model.m()
                    )));
                }
                let neighbors: Vec<(f64, &DVector<f64>)> = self
                    .graph
                    .neighbors(i)
                    .map(|(j, w)| (w, &s.agents[j].observer.eta))
                    .collect();
                let eps = local_error(
                    &a.observer.eta,
                    &neighbors,
                    self.graph.is_target(i),
                    Some(&s.v),
                )?;
                let e = &model.c * &a.x + &model.f * &s.v;
                Ok(Outputs { u, e, eps })
            })
            .collect()
    }

    fn derivative(
        &self,
        t: f64,
        y: &DVector<f64>,
        controller: &dyn Controller,
    ) -> Result<DVector<f64>> {
        let s = self.unpack(t, y);
        let outs = self.outputs(&s, controller)?;
        let e_mat = self.exosystem.matrix();
        let mut dy = Vec::with_capacity(y.len());
        dy.extend_from_slice((&e_mat * &s.v).as_slice());
        for ((model, a), o) in self.agents.iter().zip(&s.agents).zip(&outs) {
            let dx = model.derivative(&a.x, &o.u, &s.v);
            let (deta, dwhat) = observer_rhs(&a.observer, &o.eps, self.observer);
            dy.extend_from_slice(dx.as_slice());
            dy.extend_from_slice(deta.as_slice());
            dy.extend_from_slice(dwhat.as_slice());
        }
        Ok(DVector::from_vec(dy))
    }

    fn record(
        &self,
        log: &mut TrajectoryLog,
        s: &WorldState,
        controller: &dyn Controller,
    ) -> Result<()> {
        let outs = self.outputs(s, controller)?;
        log.v.push(s.v.as_slice());
        for ((trace, a), o) in log.agents.iter_mut().zip(&s.agents).zip(&outs) {
            trace.x.push(a.x.as_slice());
            trace.u.push(o.u.as_slice());
            trace.eta.push(a.observer.eta.as_slice());
            trace.what.push(a.observer.what.as_slice());
            trace.e.push(o.e.as_slice());
            trace.eps_norm.push(&[o.eps.norm()]);
        }
        Ok(())
    }

    fn check_divergence(&self, s: &WorldState) -> Result<()> {
        let bad = |x: f64| !x.is_finite() || x > DIVERGENCE_LIMIT;
        let vn = s.v.norm();
        if bad(vn) {
            return Err(Error::Divergence {
                t: s.t,
                agent: 0,
                norm: vn,
            });
        }
        for (i, a) in s.agents.iter().enumerate() {
            let norm = (a.x.norm_squared()
                + a.observer.eta.norm_squared()
                + a.observer.what.norm_squared())
            .sqrt();
            if bad(norm) {
                return Err(Error::Divergence {
                    t: s.t,
                    agent: i + 1,
                    norm,
                });
            }
        }
        Ok(())
    }
}

/// Co-integrates leader, followers, and observers with fixed-step RK4.
///
/// The controller and every observer coupling are re-evaluated at each RK4
/// stage. Returns the log (including the initial sample) and the final state.
/// Divergence reports agent 0 for the leader and 1-based indices for followers.
pub fn simulate(
    world: &World<'_>,
    controller: &dyn Controller,
    initial: &WorldState,
    duration: f64,
    dt: f64,
) -> Result<(TrajectoryLog, WorldState)> {
    if !(dt > 0.0 && dt.is_finite()) || !(duration >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt}, duration = {duration}"
        )));
    }
    let steps_f = duration / dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} does not divide duration {duration}"
        )));
    }
    world.validate(initial)?;

    let q = world.exosystem.dim();
    let mut log = TrajectoryLog {
        t0: initial.t,
        dt,
        v: Signal::new(q),
        agents: world
            .agents
            .iter()
            .map(|m| AgentTrace::new(m.n(), m.m(), q, m.p()))
            .collect(),
    };
    world.check_divergence(initial)?;
    world.record(&mut log, initial, controller)?;

    let mut y = world.pack(initial);
    let mut state = initial.clone();
    for k in 0..steps {
        let t = initial.t + k as f64 * dt;
        let k1 = world.derivative(t, &y, controller)?;
        let k2 = world.derivative(t + 0.5 * dt, &(&y + &k1 * (0.5 * dt)), controller)?;
        let k3 = world.derivative(t + 0.5 * dt, &(&y + &k2 * (0.5 * dt)), controller)?;
        let k4 = world.derivative(t + dt, &(&y + &k3 * dt), controller)?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        state = world.unpack(initial.t + (k + 1) as f64 * dt, &y);
        world.check_divergence(&state)?;
        world.record(&mut log, &state, controller)?;
    }
    Ok((log, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::benchmark;
    use nalgebra::DMatrix;

    fn zero_controller(
        m: usize,
    ) -> impl Fn(usize, f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> {
        move |_, _, _, _, _| DVector::zeros(m)
    }

    #[test]
    fn zero_world_logs_zeros() {
        let exo = ExosystemModel::new(vec![1.0]).unwrap();
        let agent = AgentModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(1, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let agents = vec![agent.clone(), agent];
        let graph = CommGraph::chain(2, [0]).unwrap();
        let gains = ObserverGains::new(vec![1.0], vec![1.0]).unwrap();
        let world = World {
            exosystem: &exo,
            agents: &agents,
            graph: &graph,
            observer: &gains,
        };
        let init = WorldState::initial(&world, DVector::zeros(2));
        let (log, end) = simulate(&world, &zero_controller(1), &init, 0.5, 0.01).unwrap();
        assert_eq!(log.len(), 51);
        assert!(log.v.iter().all(|s| s.iter().all(|&x| x == 0.0)));
        for a in &log.agents {
            for sig in [&a.x, &a.u, &a.eta, &a.what, &a.e, &a.eps_norm] {
                assert!(sig.iter().all(|s| s.iter().all(|&x| x == 0.0)));
            }
        }
        assert_eq!(end.t, 0.5);
    }

    #[test]
    fn exosystem_returns_after_one_period() {
        let exo = ExosystemModel::new(vec![2.0]).unwrap();
        let agents = vec![AgentModel::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 2),
        )
        .unwrap()];
        let graph = CommGraph::new(1, [], [0]).unwrap();
        let gains = ObserverGains::new(vec![5.0], vec![5.0]).unwrap();
        let world = World {
            exosystem: &exo,
            agents: &agents,
            graph: &graph,
            observer: &gains,
        };
        let v0 = DVector::from_vec(vec![0.3, -0.8]);
        let init = WorldState::initial(&world, v0.clone());
        let period = std::f64::consts::PI; // 2π / w
                                           // period is not a multiple of a round dt; pick dt = period / 4000
        let (log, end) =
            simulate(&world, &zero_controller(1), &init, period, period / 4000.0).unwrap();
        assert!((end.v - v0).norm() < 1e-6);
        assert_eq!(log.len(), 4001);
    }

    #[test]
    fn rejects_non_dividing_step_and_dimension_errors() {
        let exo = benchmark::exosystem();
        let agents: Vec<_> = (1..=2).map(benchmark::agent).collect();
        let graph = CommGraph::chain(2, [0]).unwrap();
        let gains = benchmark::observer_gains();
        let world = World {
            exosystem: &exo,
            agents: &agents,
            graph: &graph,
            observer: &gains,
        };
        let init = WorldState::initial(&world, benchmark::initial_exostate());
        assert!(simulate(&world, &zero_controller(1), &init, 1.0, 0.3).is_err());
        assert!(simulate(&world, &zero_controller(2), &init, 0.01, 0.001).is_err());
    }

    #[test]
    fn open_loop_unstable_agents_trip_the_divergence_guard() {
        let exo = benchmark::exosystem();
        let agents = vec![benchmark::agent(1)];
        let graph = CommGraph::new(1, [], [0]).unwrap();
        let gains = benchmark::observer_gains();
        let world = World {
            exosystem: &exo,
            agents: &agents,
            graph: &graph,
            observer: &gains,
        };
        let init = WorldState::initial(&world, benchmark::initial_exostate());
        let err = simulate(&world, &zero_controller(1), &init, 60.0, 1e-2).unwrap_err();
        match err {
            Error::Divergence { agent, t, .. } => {
                assert_eq!(agent, 1);
                assert!(t > 0.0 && t < 60.0);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn per_stage_inputs_match_step_halving() {
        // Smooth state feedback: one step of dt and two of dt/2 agree to O(dt⁵).
        let exo = benchmark::exosystem();
        let agents = vec![benchmark::agent(1)];
        let graph = CommGraph::new(1, [], [0]).unwrap();
        let gains = benchmark::observer_gains();
        let world = World {
            exosystem: &exo,
            agents: &agents,
            graph: &graph,
            observer: &gains,
        };
        let k0 = benchmark::agent(1).b.transpose() * 5.0;
        let ctrl = move |_: usize, _: f64, x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>| {
            -(&k0 * x)
        };
        let mut init = WorldState::initial(&world, benchmark::initial_exostate());
        init.agents[0].x = DVector::from_vec(vec![0.5, -0.2, 0.1]);
        let (_, one) = simulate(&world, &ctrl, &init, 1e-3, 1e-3).unwrap();
        let (_, two) = simulate(&world, &ctrl, &init, 1e-3, 5e-4).unwrap();
        assert!((one.agents[0].x.clone() - two.agents[0].x.clone()).norm() < 1e-10);
        assert!((one.v - two.v).norm() < 1e-10);
        assert!(
            (one.agents[0].observer.eta.clone() - two.agents[0].observer.eta.clone()).norm()
                < 1e-10
        );
    }
}
