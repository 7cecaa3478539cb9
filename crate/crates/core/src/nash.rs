//! Follower Nash equilibrium: the operator equation L Xi = Psi, its verification and
//! the coercivity estimates.
//!
//! With D = diag(mu) and P_p x = alpha_p R_p^* G_p x, the operator is L = D + P R where R
//! maps the four follower controls to the state response. L is not self-adjoint unless
//! the two followers observe the same region with the same weights, so the equation is
//! solved by GMRES right-preconditioned with D^{-1}.

use crate::adjoint;
use crate::error::{Error, Result};
use crate::functionals::{Player, Problem};
use crate::krylov;
use crate::state::{ControlField, Context, ControlSet, Trajectory};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_SEED: u64 = 20240611;

/// Xi = ((v1, v2), (u1, u2)).
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerVector {
    pub v: [ControlField; 2],
    pub u: [ControlField; 2],
}

impl FollowerVector {
    pub fn from_fn<F: FnMut(Player) -> ControlField>(mut f: F) -> Self {
        FollowerVector {
            v: [f(Player::V(0)), f(Player::V(1))],
            u: [f(Player::U(0)), f(Player::U(1))],
        }
    }

    pub fn zeros(ctx: &Context) -> Self {
        Self::from_fn(|p| ctx.zero_control(p.control_region(), p.ncomp()))
    }

    pub fn get(&self, p: Player) -> &ControlField {
        match p {
            Player::V(i) => &self.v[i],
            Player::U(i) => &self.u[i],
        }
    }

    pub fn get_mut(&mut self, p: Player) -> &mut ControlField {
        match p {
            Player::V(i) => &mut self.v[i],
            Player::U(i) => &mut self.u[i],
        }
    }

    pub fn len(&self) -> usize {
        Player::ALL.iter().map(|p| self.get(*p).data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), Player::ALL.iter().flat_map(|p| self.get(*p).data.iter().copied()))
    }

    pub fn unflatten(ctx: &Context, x: &DVector<f64>) -> Self {
        let mut out = Self::zeros(ctx);
        let mut k = 0;
        for p in Player::ALL {
            let c = out.get_mut(p);
            let n = c.data.len();
            c.data.copy_from_slice(&x.as_slice()[k..k + n]);
            k += n;
        }
        out
    }

    /// Entry weights of the rho-weighted control product, in `flatten` order.
    pub fn weights(ctx: &Context) -> DVector<f64> {
        let w: Vec<f64> = Player::ALL.iter().flat_map(|p| ctx.control_weights(p.control_region(), p.ncomp())).collect();
        DVector::from_vec(w)
    }

    pub fn dot(&self, ctx: &Context, other: &Self) -> f64 {
        Player::ALL.iter().map(|p| ctx.control_dot(self.get(*p), other.get(*p))).sum()
    }

    pub fn norm(&self, ctx: &Context) -> f64 {
        self.dot(ctx, self).max(0.0).sqrt()
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        for p in Player::ALL {
            self.get_mut(p).axpy(a, other.get(p));
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_fn(|p| self.get(p).scaled(s))
    }

    pub fn is_zero(&self) -> bool {
        Player::ALL.iter().all(|p| self.get(*p).is_zero())
    }

    /// Only player p's component kept.
    pub fn only(&self, p: Player, ctx: &Context) -> Self {
        let mut out = Self::zeros(ctx);
        *out.get_mut(p) = self.get(p).clone();
        out
    }

    /// Leader pair plus these followers.
    pub fn with_leader(&self, f: &ControlField, g: &ControlField) -> ControlSet {
        ControlSet {
            f: f.clone(),
            g: g.clone(),
            v: self.v.clone(),
            u: self.u.clone(),
        }
    }
}

fn response(ctx: &Context, xi: &FollowerVector) -> Trajectory {
    let zero = DVector::zeros(ctx.state_dim());
    ctx.forward(&zero, &[&xi.v[0], &xi.v[1], &xi.u[0], &xi.u[1]])
}

/// L Xi: one forward solve of the combined response, four backward solves.
pub fn apply_l(prob: &Problem, xi: &FollowerVector) -> Result<FollowerVector> {
    let ctx = &prob.ctx;
    let traj = response(ctx, xi);
    let adj = adjoint::bundle(prob, &traj, false).restricted(ctx);
    let mut out = adj;
    for p in Player::ALL {
        out.get_mut(p).axpy(prob.weights.mu_of(p), xi.get(p));
    }
    Ok(out)
}

/// Adjoint of L in the weighted control product: D + R^* P^*.
pub fn apply_l_transpose(prob: &Problem, eta: &FollowerVector) -> Result<FollowerVector> {
    let ctx = &prob.ctx;
    let (phi, _) = adjoint::coupled_response(prob, None, eta);
    let mut out = FollowerVector::from_fn(|p| ctx.restrict(&phi, p.control_region(), p.ncomp()));
    for p in Player::ALL {
        out.get_mut(p).axpy(prob.weights.mu_of(p), eta.get(p));
    }
    Ok(out)
}

/// Right-hand side: Psi_p = alpha_p R_p^* G_p (target - x_unc) with x_unc the state driven
/// by the leader and the initial data alone.
pub fn build_psi(prob: &Problem, f: &ControlField, g: &ControlField) -> Result<FollowerVector> {
    let ctx = &prob.ctx;
    let traj = ctx.solve_uncontrolled(f, g, &prob.init);
    let adj = adjoint::solve_adjoint(prob, &traj)?;
    Ok(adj.restricted(ctx).scaled(-1.0))
}

#[derive(Debug, Clone)]
pub struct NashSolution {
    pub xi: FollowerVector,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

pub fn solve_nash(prob: &Problem, f: &ControlField, g: &ControlField, tol: f64) -> Result<NashSolution> {
    let psi = build_psi(prob, f, g)?;
    solve_l(prob, &psi, tol)
}

/// Solve L Xi = rhs.
pub fn solve_l(prob: &Problem, rhs: &FollowerVector, tol: f64) -> Result<NashSolution> {
    let ctx = &prob.ctx;
    let w = FollowerVector::weights(ctx);
    let dinv = diag_mu_inverse(prob);
    let out = krylov::gmres(
        |x| Ok(apply_l(prob, &FollowerVector::unflatten(ctx, x))?.flatten()),
        |x| x.component_mul(&dinv),
        &rhs.flatten(),
        None,
        &w,
        tol,
        60,
        2000,
    )?;
    Ok(NashSolution {
        xi: FollowerVector::unflatten(ctx, &out.x),
        iterations: out.iterations,
        residual: out.residual,
        history: out.history,
    })
}

/// Solve L^T eta = rhs.
pub fn solve_l_transpose(prob: &Problem, rhs: &FollowerVector, tol: f64) -> Result<NashSolution> {
    let ctx = &prob.ctx;
    let w = FollowerVector::weights(ctx);
    let dinv = diag_mu_inverse(prob);
    let out = krylov::gmres(
        |x| Ok(apply_l_transpose(prob, &FollowerVector::unflatten(ctx, x))?.flatten()),
        |x| x.component_mul(&dinv),
        &rhs.flatten(),
        None,
        &w,
        tol,
        60,
        2000,
    )?;
    Ok(NashSolution {
        xi: FollowerVector::unflatten(ctx, &out.x),
        iterations: out.iterations,
        residual: out.residual,
        history: out.history,
    })
}

/// Conjugate gradients on L; valid only where L is self-adjoint and positive.
pub fn solve_nash_cg(prob: &Problem, f: &ControlField, g: &ControlField, tol: f64) -> Result<NashSolution> {
    let ctx = &prob.ctx;
    let psi = build_psi(prob, f, g)?;
    let w = FollowerVector::weights(ctx);
    let dinv = diag_mu_inverse(prob);
    let out = krylov::cg(
        |x| Ok(apply_l(prob, &FollowerVector::unflatten(ctx, x))?.flatten()),
        |x| x.component_mul(&dinv),
        &psi.flatten(),
        &w,
        tol,
        2000,
    )?;
    Ok(NashSolution {
        xi: FollowerVector::unflatten(ctx, &out.x),
        iterations: out.iterations,
        residual: out.residual,
        history: out.history,
    })
}

fn diag_mu_inverse(prob: &Problem) -> DVector<f64> {
    let ctx = &prob.ctx;
    let d: Vec<f64> = Player::ALL
        .iter()
        .flat_map(|p| {
            let n = ctx.zero_control(p.control_region(), p.ncomp()).data.len();
            std::iter::repeat_n(1.0 / prob.weights.mu_of(*p), n)
        })
        .collect();
    DVector::from_vec(d)
}

/// Cost of player p when the followers play `xi` against the leader pair (f, g).
pub fn player_cost(prob: &Problem, p: Player, xi: &FollowerVector, f: &ControlField, g: &ControlField) -> Result<f64> {
    let traj = prob.ctx.solve_state(&xi.with_leader(f, g), &prob.init);
    prob.follower_cost(p, &traj, xi.get(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashReport {
    pub directions: usize,
    /// max over the battery of |d/ds J_p(Xi + s d_p)| at s = 0, unit directions
    pub max_derivative: f64,
    /// min over perturbations of J_p(Xi + delta_p) - J_p(Xi)
    pub min_gain: f64,
    /// J_q(Xi + delta_p) - J_q(Xi) for q != p, recorded without any sign claim
    pub cross_effects: Vec<f64>,
}

impl NashReport {
    pub fn pass(&self, tol_derivative: f64) -> bool {
        self.max_derivative <= tol_derivative && self.min_gain >= -1e-10
    }
}

fn random_direction(ctx: &Context, p: Player, rng: &mut ChaCha8Rng) -> ControlField {
    let mut d = ctx.zero_control(p.control_region(), p.ncomp());
    d.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    let n = ctx.control_norm(&d);
    d.scaled(1.0 / n)
}

/// Unilateral-deviation checks of a computed equilibrium.
pub fn verify_nash(prob: &Problem, xi: &FollowerVector, f: &ControlField, g: &ControlField, n_dirs: usize, seed: u64) -> Result<NashReport> {
    let ctx = &prob.ctx;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = Player::ALL.iter().map(|p| player_cost(prob, *p, xi, f, g)).collect::<Result<_>>()?;
    let jobs: Vec<(Player, ControlField, f64)> = (0..n_dirs)
        .map(|k| {
            let p = Player::ALL[k % 4];
            let d = random_direction(ctx, p, &mut rng);
            let scale = 10f64.powf(rng.random_range(-3.0..1.0));
            (p, d, scale)
        })
        .collect();
    let results: Vec<Result<(f64, f64, Vec<f64>)>> = jobs
        .par_iter()
        .map(|(p, d, scale)| {
            let cost = |s: f64, q: Player| -> Result<f64> {
                let mut x = xi.clone();
                x.get_mut(*p).axpy(s, d);
                player_cost(prob, q, &x, f, g)
            };
            let h = 1e-3;
            let deriv = (cost(h, *p)? - cost(-h, *p)?) / (2.0 * h);
            let gain = cost(*scale, *p)? - base[p.index()];
            let mut cross = Vec::new();
            for q in Player::ALL {
                if q != *p {
                    cross.push(cost(*scale, q)? - base[q.index()]);
                }
            }
            Ok((deriv.abs(), gain, cross))
        })
        .collect();
    let mut report = NashReport {
        directions: n_dirs,
        max_derivative: 0.0,
        min_gain: f64::INFINITY,
        cross_effects: Vec::new(),
    };
    for r in results {
        let (d, gain, cross) = r?;
        report.max_derivative = report.max_derivative.max(d);
        report.min_gain = report.min_gain.min(gain);
        report.cross_effects.extend(cross);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizationReport {
    /// ||c_p + (1/mu_p) adjoint_p|O_p|| / ||c_p|| per player
    pub relative: [f64; 4],
    /// relative change of Xi under one pass of the optimality system
    pub fixed_point: f64,
}

impl CharacterizationReport {
    pub fn max(&self) -> f64 {
        self.relative.iter().copied().fold(self.fixed_point, f64::max)
    }
}

/// Compare Xi with the adjoint representation v = -(1/mu) q|O_i, u = -(1/mu~) r|O_i.
pub fn characterize_nash(prob: &Problem, xi: &FollowerVector, f: &ControlField, g: &ControlField) -> Result<CharacterizationReport> {
    let ctx = &prob.ctx;
    let traj = ctx.solve_state(&xi.with_leader(f, g), &prob.init);
    let adj = adjoint::solve_adjoint(prob, &traj)?.restricted(ctx);
    let mut relative = [0.0; 4];
    let pass = FollowerVector::from_fn(|p| adj.get(p).scaled(-1.0 / prob.weights.mu_of(p)));
    for p in Player::ALL {
        let mut r = xi.get(p).clone();
        r.axpy(-1.0, pass.get(p));
        let n = ctx.control_norm(xi.get(p));
        let rn = ctx.control_norm(&r);
        relative[p.index()] = if n > 0.0 { rn / n } else { rn };
    }
    let mut d = pass.clone();
    d.axpy(-1.0, xi);
    let n = xi.norm(ctx);
    let fixed_point = if n > 0.0 { d.norm(ctx) / n } else { d.norm(ctx) };
    Ok(CharacterizationReport { relative, fixed_point })
}

/// Discrete estimates of the response-operator norms; `[j]` is follower j, each the
/// larger of the norms into O_{1,d} and O_{2,d}.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResponseNorms {
    /// v_j -> z
    pub l1: [f64; 2],
    /// v_j -> w
    pub l2: [f64; 2],
    /// u_j -> z
    pub lt1: [f64; 2],
    /// u_j -> w
    pub lt2: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityReport {
    pub norms: ResponseNorms,
    /// left-hand sides of the four sufficient conditions, compared with (4/3) mu
    pub lhs: [f64; 4],
    pub condition_holds: bool,
    pub gamma: f64,
    pub min_eig: f64,
}

/// sqrt of the top eigenvalue of T^* T, T: control of `p` -> velocity or scalar response on Obs(obs).
fn response_norm(prob: &Problem, p: Player, velocity_out: bool, obs: usize, seed: u64) -> Result<f64> {
    let ctx = &prob.ctx;
    let d = ctx.dim();
    let tab = ctx.region(crate::geometry::Region::Obs(obs));
    let region = p.control_region();
    let w = DVector::from_vec(ctx.control_weights(region, p.ncomp()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = DVector::from_fn(w.len(), |_, _| rng.random_range(0.5..1.5));
    let apply = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let mut c = ctx.zero_control(region, p.ncomp());
        c.data.copy_from_slice(x.as_slice());
        let y = ctx.forward(&DVector::zeros(ctx.state_dim()), &[&c]);
        let adj = ctx.backward_with(None, |m, rhs| {
            let dt = ctx.grid.dt * ctx.rho[m];
            if velocity_out {
                let mut top = rhs.rows_mut(0, d);
                top += &tab.gram_v * y.x[m].rows(0, d) * dt;
            } else {
                let mut bot = rhs.rows_mut(d, d);
                bot += &tab.gram_w * y.x[m].rows(d, d) * dt;
            }
        });
        Ok(DVector::from_vec(ctx.restrict(&adj, region, p.ncomp()).data))
    };
    let lam = krylov::power_iteration(apply, x0, &w, 1e-8, 5000)?;
    Ok(lam.max(0.0).sqrt())
}

pub fn estimate_norms(prob: &Problem, seed: u64) -> Result<ResponseNorms> {
    let mut jobs = Vec::new();
    for j in 0..2 {
        for (k, (p, vel)) in [(Player::V(j), true), (Player::V(j), false), (Player::U(j), true), (Player::U(j), false)].into_iter().enumerate() {
            for obs in 0..2 {
                jobs.push((j, k, p, vel, obs));
            }
        }
    }
    let vals: Vec<Result<f64>> = jobs
        .par_iter()
        .enumerate()
        .map(|(n, (_, _, p, vel, obs))| response_norm(prob, *p, *vel, *obs, seed + n as u64))
        .collect();
    let mut out = ResponseNorms::default();
    for ((j, k, _, _, _), v) in jobs.iter().zip(vals) {
        let v = v?;
        let slot = match k {
            0 => &mut out.l1[*j],
            1 => &mut out.l2[*j],
            2 => &mut out.lt1[*j],
            _ => &mut out.lt2[*j],
        };
        *slot = slot.max(v);
    }
    Ok(out)
}

/// Smallest eigenvalue of (L + L^T)/2 in the weighted control product.
pub fn min_eigenvalue(prob: &Problem, seed: u64, max_steps: usize) -> Result<f64> {
    let ctx = &prob.ctx;
    let w = FollowerVector::weights(ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = DVector::from_fn(w.len(), |_, _| rng.random_range(-1.0..1.0));
    let symmetric = prob.weights.alpha.iter().chain(prob.weights.alpha_tilde.iter()).all(|a| *a == 0.0);
    krylov::lanczos_min(
        |x| {
            let xi = FollowerVector::unflatten(ctx, x);
            let a = apply_l(prob, &xi)?.flatten();
            if symmetric {
                return Ok(a);
            }
            let b = apply_l_transpose(prob, &xi)?.flatten();
            Ok((a + b) * 0.5)
        },
        x0,
        &w,
        1e-10,
        max_steps,
    )
}

pub fn check_coercivity(prob: &Problem, seed: u64) -> Result<CoercivityReport> {
    let wt = &prob.weights;
    let (a, at) = (wt.alpha, wt.alpha_tilde);
    let inert = a.iter().chain(at.iter()).all(|x| *x == 0.0);
    let norms = if inert { ResponseNorms::default() } else { estimate_norms(prob, seed)? };
    let sq = |x: f64| x * x;
    let lhs = [
        a[1] * sq(norms.l1[0]) + (at[0] + at[1]) * sq(norms.l2[0]),
        a[0] * sq(norms.l1[1]) + (at[0] + at[1]) * sq(norms.l2[1]),
        at[1] * sq(norms.lt2[0]) + (a[0] + a[1]) * sq(norms.lt1[0]),
        at[0] * sq(norms.lt2[1]) + (a[0] + a[1]) * sq(norms.lt1[1]),
    ];
    let mus = [wt.mu[0], wt.mu[1], wt.mu_tilde[0], wt.mu_tilde[1]];
    let condition_holds = lhs.iter().zip(&mus).all(|(l, m)| *l < 4.0 / 3.0 * m);
    let gamma = lhs.iter().zip(&mus).map(|(l, m)| m - 0.75 * l).fold(f64::INFINITY, f64::min);
    let dim = FollowerVector::weights(&prob.ctx).len();
    let min_eig = min_eigenvalue(prob, seed ^ 0x5eed, dim.min(400))?;
    Ok(CoercivityReport {
        norms,
        lhs,
        condition_holds,
        gamma,
        min_eig,
    })
}

/// Dense matrix of L in flattened coordinates, column by column; small instances only.
pub fn assemble_l(prob: &Problem) -> Result<nalgebra::DMatrix<f64>> {
    let ctx = &prob.ctx;
    let n = FollowerVector::weights(ctx).len();
    if n > 20_000 {
        return Err(Error::Size(n));
    }
    let cols: Vec<Result<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            Ok(apply_l(prob, &FollowerVector::unflatten(ctx, &e))?.flatten())
        })
        .collect();
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for (k, c) in cols.into_iter().enumerate() {
        m.set_column(k, &c?);
    }
    Ok(m)
}
