//! Discrete adjoints: exact transposes of the implicit-Euler march, run backward.
//!
//! Each follower gets its own adjoint, sourced by the derivative of its tracking term.
//! The velocity part of the v-adjoint restricted to O_i is q^(i); the scalar part of the
//! u-adjoint restricted to O_i is r^(i).

use crate::error::{Error, Result};
use crate::functionals::{Player, Problem};
use crate::krylov;
use crate::nash::FollowerVector;
use crate::state::{AdjointTrajectory, Context, Trajectory};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointBundle {
    /// indexed by `Player::index`
    pub adj: [AdjointTrajectory; 4],
}

impl AdjointBundle {
    pub fn q(&self, i: usize) -> &AdjointTrajectory {
        &self.adj[Player::V(i).index()]
    }

    pub fn r(&self, i: usize) -> &AdjointTrajectory {
        &self.adj[Player::U(i).index()]
    }

    pub fn get(&self, p: Player) -> &AdjointTrajectory {
        &self.adj[p.index()]
    }

    /// Restriction of each adjoint to its player's control region and component.
    pub fn restricted(&self, ctx: &Context) -> FollowerVector {
        FollowerVector::from_fn(|p| ctx.restrict(self.get(p), p.control_region(), p.ncomp()))
    }
}

/// Terminal data (xi, eta) of the leader's dual problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalData {
    pub xi: DVector<f64>,
    pub eta: DVector<f64>,
}

impl TerminalData {
    pub fn zeros(dim: usize) -> Self {
        TerminalData {
            xi: DVector::zeros(dim),
            eta: DVector::zeros(dim),
        }
    }

    pub fn from_stacked(x: &DVector<f64>) -> Self {
        let d = x.len() / 2;
        TerminalData {
            xi: x.rows(0, d).into_owned(),
            eta: x.rows(d, d).into_owned(),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        crate::state::stack(&self.xi, &self.eta)
    }

    pub fn is_zero(&self) -> bool {
        self.xi.iter().chain(self.eta.iter()).all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct LeaderCoupledSolution {
    /// (phi, psi) as one backward trajectory: velocity block phi, scalar block psi
    pub phi: AdjointTrajectory,
    pub beta_s: [Trajectory; 2],
    pub gamma_s: [Trajectory; 2],
    /// follower controls -(1/mu) phi|O_i, -(1/mu~) psi|O_i driving beta and gamma
    pub controls: FollowerVector,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub krylov: bool,
}

/// Adjoint of one follower's tracking term along `traj`.
pub fn player_adjoint(prob: &Problem, p: Player, traj: &Trajectory, with_targets: bool) -> AdjointTrajectory {
    prob.ctx.backward_with(None, prob.tracking_source(p, traj, with_targets))
}

pub fn solve_adjoint(prob: &Problem, traj: &Trajectory) -> Result<AdjointBundle> {
    check_traj(prob, traj)?;
    Ok(bundle(prob, traj, true))
}

pub(crate) fn bundle(prob: &Problem, traj: &Trajectory, with_targets: bool) -> AdjointBundle {
    let adj: Vec<AdjointTrajectory> = Player::ALL.par_iter().map(|p| player_adjoint(prob, *p, traj, with_targets)).collect();
    let mut it = adj.into_iter();
    AdjointBundle {
        adj: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
    }
}

fn check_traj(prob: &Problem, traj: &Trajectory) -> Result<()> {
    if traj.x.len() != prob.ctx.n_steps() + 1 || traj.x[0].len() != prob.ctx.state_dim() {
        return Err(Error::GridMismatch("trajectory does not match the time grid".into()));
    }
    Ok(())
}

/// sum_m dt rho_m alpha_p (G_p x_m - b_m) . y_m: the tracking derivative paired with a response.
fn tracking_pairing(prob: &Problem, p: Player, traj: &Trajectory, resp: &Trajectory) -> f64 {
    let ctx = &prob.ctx;
    let a = prob.weights.alpha_of(p);
    let mut s = 0.0;
    for m in 1..=ctx.n_steps() {
        let g = prob.observe(p, &traj.x[m]) - prob.target_load(p, m);
        s += ctx.grid.dt * ctx.rho[m] * a * g.dot(&resp.x[m]);
    }
    s
}

/// Worst relative discrepancy between alpha (x - target, response)_rho and
/// (adjoint, perturbation)_rho over random states and follower perturbations.
pub fn duality_check(prob: &Problem, n_trials: usize, seed: u64) -> Result<f64> {
    let ctx = &prob.ctx;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_trials {
        let mut controls = ctx.zero_controls();
        for c in controls.iter_mut() {
            c.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        let traj = ctx.solve_state(&controls, &prob.init);
        let adj = solve_adjoint(prob, &traj)?;
        for i in 0..2 {
            let mut vh = ctx.zero_control(crate::geometry::Region::Follower(i), 2);
            let mut uh = ctx.zero_control(crate::geometry::Region::Follower(i), 1);
            vh.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            uh.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            let resp = ctx.solve_follower_response(&vh, &uh);
            for p in [Player::V(i), Player::U(i)] {
                worst = worst.max(duality_gap(prob, p, &traj, &resp, adj.get(p), &vh, &uh));
            }
        }
    }
    Ok(worst)
}

/// Relative gap of one identity; both sides are computed independently.
pub fn duality_gap(
    prob: &Problem,
    p: Player,
    traj: &Trajectory,
    resp: &Trajectory,
    adj: &AdjointTrajectory,
    vh: &crate::state::ControlField,
    uh: &crate::state::ControlField,
) -> f64 {
    let ctx = &prob.ctx;
    let lhs = tracking_pairing(prob, p, traj, resp);
    let q = ctx.restrict(adj, vh.region, 2);
    let r = ctx.restrict(adj, uh.region, 1);
    let rhs = ctx.control_dot(&q, vh) + ctx.control_dot(&r, uh);
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

/// Space-time rho-weighted L2 norm of an adjoint field.
pub fn adjoint_norm(ctx: &Context, a: &AdjointTrajectory) -> f64 {
    let mut s = 0.0;
    for (j, f) in a.field.iter().enumerate() {
        s += ctx.grid.dt * ctx.rho[j + 1] * f.dot(&(&ctx.mass * f));
    }
    s.max(0.0).sqrt()
}

fn diff_norm(ctx: &Context, a: &AdjointTrajectory, b: &AdjointTrajectory) -> f64 {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    adjoint_norm(ctx, &d)
}

/// Forward responses to the follower controls c, then the backward solve with terminal
/// datum `td` and the tracking derivatives of those responses as sources.
pub(crate) fn coupled_response(prob: &Problem, td: Option<&DVector<f64>>, c: &FollowerVector) -> (AdjointTrajectory, [Trajectory; 4]) {
    let ctx = &prob.ctx;
    let zero = DVector::zeros(ctx.state_dim());
    let ys: Vec<Trajectory> = Player::ALL.par_iter().map(|p| ctx.forward(&zero, &[c.get(*p)])).collect();
    let ys: [Trajectory; 4] = ys.try_into().expect("four players");
    let dt = ctx.grid.dt;
    let phi = ctx.backward_with(td, |m, rhs| {
        for p in Player::ALL {
            let a = prob.weights.alpha_of(p);
            if a != 0.0 {
                rhs.axpy(a * dt * ctx.rho[m], &prob.observe(p, &ys[p.index()].x[m]), 1.0);
            }
        }
    });
    (phi, ys)
}

/// c = -D_mu^{-1} (restriction of phi to each player's region)
fn feedback(prob: &Problem, phi: &AdjointTrajectory) -> FollowerVector {
    let ctx = &prob.ctx;
    FollowerVector::from_fn(|p| ctx.restrict(phi, p.control_region(), p.ncomp()).scaled(-1.0 / prob.weights.mu_of(p)))
}

/// Coupled forward-backward system of the leader: Picard sweeps, falling back to GMRES on
/// the affine fixed-point form when the sweeps do not contract.
pub fn solve_leader_coupled(prob: &Problem, td: &TerminalData, tol: f64, max_iter: usize) -> Result<LeaderCoupledSolution> {
    let ctx = &prob.ctx;
    let tdv = td.stacked();
    let mut c = FollowerVector::zeros(ctx);
    let mut prev: Option<AdjointTrajectory> = None;
    let mut history = Vec::new();
    for it in 1..=max_iter.max(1) {
        let (phi, ys) = coupled_response(prob, Some(&tdv), &c);
        let norm = adjoint_norm(ctx, &phi);
        let change = match &prev {
            Some(p) => diff_norm(ctx, &phi, p) / norm.max(f64::MIN_POSITIVE),
            None if norm == 0.0 => 0.0,
            None => f64::INFINITY,
        };
        history.push(change);
        if change <= tol {
            return Ok(finish(prob, phi, ys, c, it, history, false));
        }
        // a sweep that grows twice in a row will not contract
        let n = history.len();
        if n >= 4 && history[n - 1] > history[n - 2] && history[n - 2] > history[n - 3] {
            break;
        }
        c = feedback(prob, &phi);
        prev = Some(phi);
    }
    // (I + D^{-1} R* P*) c = -D^{-1} R* E_T* td, with the weighted control metric
    let w = FollowerVector::weights(ctx);
    let b = feedback(prob, &ctx.backward_with(Some(&tdv), |_, _| {})).flatten();
    let apply = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let cx = FollowerVector::unflatten(ctx, x);
        let (phi, _) = coupled_response(prob, None, &cx);
        Ok(x - feedback(prob, &phi).flatten())
    };
    let out = krylov::gmres(apply, |x| x.clone(), &b, None, &w, tol, 60, 20 * max_iter.max(10)).map_err(|e| match e {
        Error::MaxIterations { residual, .. } => {
            let mut h = history.clone();
            h.push(residual);
            Error::NoConvergence { history: h }
        }
        other => other,
    })?;
    history.extend(out.history.iter().copied());
    let c = FollowerVector::unflatten(ctx, &out.x);
    let (phi, ys) = coupled_response(prob, Some(&tdv), &c);
    let iterations = history.len();
    Ok(finish(prob, phi, ys, c, iterations, history, true))
}

fn finish(
    prob: &Problem,
    phi: AdjointTrajectory,
    ys: [Trajectory; 4],
    c: FollowerVector,
    iterations: usize,
    history: Vec<f64>,
    krylov: bool,
) -> LeaderCoupledSolution {
    let ctx = &prob.ctx;
    let c_new = feedback(prob, &phi);
    let scale = c_new.norm(ctx).max(c.norm(ctx));
    let mut d = c_new.clone();
    d.axpy(-1.0, &c);
    let residual = if scale == 0.0 { 0.0 } else { d.norm(ctx) / scale };
    let [b0, b1, g0, g1] = ys;
    LeaderCoupledSolution {
        phi,
        beta_s: [b0, b1],
        gamma_s: [g0, g1],
        controls: c,
        iterations,
        residual,
        history,
        krylov,
    }
}
