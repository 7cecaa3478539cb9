//! The leader's approximate-controllability problem through its dual.
//!
//! L maps leader controls (f, g) to the terminal state under the Nash response of the
//! followers (linear part: zero data, no targets). With x_eff = x^T - x_free(T) the dual
//! functional on terminal data td is
//!
//!   Theta(td) = 1/2 |L^* td|_C^2 + eps sqrt(|td|_T^2 + delta^2) - eps delta - <td, x_eff>_T
//!
//! where C is the rho-weighted control metric and <a,b>_T = rho(T) a^T Mass b. The optimal
//! leader control is L^* td*, i.e. (phi, psi) restricted to O.

use crate::adjoint::{self, LeaderCoupledSolution, TerminalData};
use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::nash;
use crate::functionals::Problem;
use crate::state::{ControlField, Context};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderOptions {
    /// smoothing of the norm term; `None` picks 1e-6 |x^T|
    pub delta: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub coupled_tol: f64,
    pub coupled_max_iter: usize,
    pub nash_tol: f64,
}

impl Default for LeaderOptions {
    fn default() -> Self {
        LeaderOptions {
            delta: None,
            tol: 1e-6,
            max_iter: 500,
            coupled_tol: 1e-13,
            coupled_max_iter: 200,
            nash_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub theta: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct DualIterate {
    pub td: TerminalData,
    pub theta: f64,
    pub grad_norm: f64,
    pub coupled: LeaderCoupledSolution,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<HistoryRow>,
}

impl DualIterate {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterations {
                solver: "ncg",
                iterations: self.iterations,
                residual: self.grad_norm,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct LeaderSolution {
    pub f_bar: ControlField,
    pub g_bar: ControlField,
    /// |x(T) - x^T| in L2 of the reference domain
    pub terminal_gap: f64,
    /// the same in the rho(T)-weighted norm the dual problem constrains
    pub terminal_gap_weighted: f64,
    pub eps: f64,
    /// leader cost of (f_bar, g_bar)
    pub j_value: f64,
    /// 1/2 |L^* td|_C^2 from the dual side
    pub dual_value: f64,
    pub theta: f64,
    pub tol_disc: f64,
    pub nash_iterations: usize,
    pub terminal: DVector<f64>,
}

/// Dual problem data: the linear pipeline and the shifted target.
#[derive(Debug, Clone)]
pub struct DualProblem<'a> {
    pub prob: &'a Problem,
    pub lin: Problem,
    pub x_eff: DVector<f64>,
    pub x_free: DVector<f64>,
    pub opts: LeaderOptions,
    pub delta: f64,
}

impl<'a> DualProblem<'a> {
    pub fn new(prob: &'a Problem, opts: LeaderOptions) -> Result<Self> {
        let ctx = &prob.ctx;
        let lin = prob.homogeneous()?;
        let f = ctx.zero_control(Region::Leader, 2);
        let g = ctx.zero_control(Region::Leader, 1);
        let x_free = if prob.init.is_zero() && crate::functionals::Player::ALL.iter().all(|p| !prob.has_targets(*p)) {
            DVector::zeros(ctx.state_dim())
        } else {
            let eq = nash::solve_nash(prob, &f, &g, opts.nash_tol)?;
            ctx.solve_state(&eq.xi.with_leader(&f, &g), &prob.init).terminal().clone()
        };
        let x_eff = &prob.terminal_target - &x_free;
        let scale = ctx.terminal_norm(&prob.terminal_target);
        let delta = opts.delta.unwrap_or(1e-6 * if scale > 0.0 { scale } else { 1.0 });
        Ok(DualProblem {
            prob,
            lin,
            x_eff,
            x_free,
            opts,
            delta,
        })
    }

    pub fn ctx(&self) -> &Context {
        &self.prob.ctx
    }

    pub fn eps(&self) -> f64 {
        self.prob.weights.eps
    }

    /// L^* td together with the coupled solution it came from.
    pub fn l_star(&self, td: &DVector<f64>) -> Result<(ControlField, ControlField, LeaderCoupledSolution)> {
        let sol = adjoint::solve_leader_coupled(&self.lin, &TerminalData::from_stacked(td), self.opts.coupled_tol, self.opts.coupled_max_iter)?;
        let ctx = self.ctx();
        let f = ctx.restrict(&sol.phi, Region::Leader, 2);
        let g = ctx.restrict(&sol.phi, Region::Leader, 1);
        Ok((f, g, sol))
    }

    /// L (f, g): terminal state of the linear pipeline (Nash response included).
    pub fn apply_map(&self, f: &ControlField, g: &ControlField) -> Result<DVector<f64>> {
        let ctx = self.ctx();
        let eq = nash::solve_nash(&self.lin, f, g, self.opts.nash_tol)?;
        Ok(ctx.solve_state(&eq.xi.with_leader(f, g), &self.lin.init).terminal().clone())
    }

    fn pair_dot(&self, a: &(ControlField, ControlField), b: &(ControlField, ControlField)) -> f64 {
        let ctx = self.ctx();
        ctx.control_dot(&a.0, &b.0) + ctx.control_dot(&a.1, &b.1)
    }

    fn norm_term(&self, td: &DVector<f64>, delta: f64) -> f64 {
        let n = self.ctx().terminal_dot(td, td).max(0.0);
        self.eps() * ((n + delta * delta).sqrt() - delta)
    }

    pub fn theta(&self, td: &DVector<f64>, delta: f64) -> Result<f64> {
        let (f, g, _) = self.l_star(td)?;
        let q = 0.5 * self.pair_dot(&(f.clone(), g.clone()), &(f, g));
        Ok(q + self.norm_term(td, delta) - self.ctx().terminal_dot(td, &self.x_eff))
    }

    /// Gradient of Theta as a Riesz representative in the terminal metric.
    pub fn theta_grad(&self, td: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
        let (f, g, _) = self.l_star(td)?;
        let llt = self.apply_map(&f, &g)?;
        Ok(self.grad_from(td, &llt, delta))
    }

    fn grad_from(&self, td: &DVector<f64>, llt: &DVector<f64>, delta: f64) -> DVector<f64> {
        let n = self.ctx().terminal_dot(td, td).max(0.0);
        let s = (n + delta * delta).sqrt();
        let mut g = llt - &self.x_eff;
        if s > 0.0 {
            g.axpy(self.eps() / s, td, 1.0);
        }
        g
    }

    /// Polak-Ribiere nonlinear CG from td = 0 with an exact line search: along a line
    /// the quadratic term is an exact parabola, so each step costs one coupled solve
    /// for L^* d and one pipeline run for L L^* d.
    pub fn minimize_theta(&self) -> Result<DualIterate> {
        let ctx = self.ctx();
        let n = ctx.state_dim();
        let delta = self.delta;
        let eps = self.eps();
        let scale = ctx.terminal_norm(&self.prob.terminal_target).max(1.0);
        let goal = self.opts.tol * scale;
        let tdot = |a: &DVector<f64>, b: &DVector<f64>| ctx.terminal_dot(a, b);

        let mut x = DVector::zeros(n);
        let mut ls = (ctx.zero_control(Region::Leader, 2), ctx.zero_control(Region::Leader, 1));
        let mut llt = DVector::zeros(n);
        let mut g = self.grad_from(&x, &llt, delta);
        let mut d = -&g;
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut since_restart = 0;
        let theta_of = |x: &DVector<f64>, ls: &(ControlField, ControlField)| 0.5 * self.pair_dot(ls, ls) + self.norm_term(x, delta) - tdot(x, &self.x_eff);
        loop {
            let gn = tdot(&g, &g).max(0.0).sqrt();
            history.push(HistoryRow {
                iter: iterations,
                theta: theta_of(&x, &ls),
                grad_norm: gn,
            });
            if gn <= goal || iterations >= self.opts.max_iter {
                let converged = gn <= goal;
                let (_, _, coupled) = self.l_star(&x)?;
                return Ok(DualIterate {
                    theta: theta_of(&x, &ls),
                    td: TerminalData::from_stacked(&x),
                    grad_norm: gn,
                    coupled,
                    iterations,
                    converged,
                    history,
                });
            }
            iterations += 1;
            let (df, dg, _) = self.l_star(&d)?;
            let ld = (df, dg);
            let a = self.pair_dot(&ld, &ld);
            let b = self.pair_dot(&ls, &ld) - tdot(&d, &self.x_eff);
            let (n0, n1, n2) = (tdot(&x, &x), tdot(&x, &d), tdot(&d, &d));
            let dphi = |s: f64| {
                let q = (n0 + 2.0 * s * n1 + s * s * n2 + delta * delta).max(0.0).sqrt();
                a * s + b + if q > 0.0 { eps * (n1 + s * n2) / q } else { 0.0 }
            };
            let step = line_root(dphi);
            x.axpy(step, &d, 1.0);
            ls.0.axpy(step, &ld.0);
            ls.1.axpy(step, &ld.1);
            llt.axpy(step, &self.apply_map(&ld.0, &ld.1)?, 1.0);
            since_restart += 1;
            if since_restart % 25 == 0 {
                // refresh the running products against drift
                let (f, gg, _) = self.l_star(&x)?;
                llt = self.apply_map(&f, &gg)?;
                ls = (f, gg);
            }
            let g_new = self.grad_from(&x, &llt, delta);
            let beta = (tdot(&g_new, &(&g_new - &g)) / tdot(&g, &g)).max(0.0);
            g = g_new;
            if since_restart >= n {
                since_restart = 0;
                d = -&g;
            } else {
                d = -&g + &d * beta;
                if tdot(&d, &g) >= 0.0 {
                    since_restart = 0;
                    d = -&g;
                }
            }
        }
    }

    /// (f_bar, g_bar) = L^* td*, then the full pipeline with the true data.
    pub fn recover_leader(&self, it: &DualIterate) -> Result<LeaderSolution> {
        let ctx = self.ctx();
        let f_bar = ctx.restrict(&it.coupled.phi, Region::Leader, 2);
        let g_bar = ctx.restrict(&it.coupled.phi, Region::Leader, 1);
        let eq = nash::solve_nash(self.prob, &f_bar, &g_bar, self.opts.nash_tol)?;
        let traj = ctx.solve_state(&eq.xi.with_leader(&f_bar, &g_bar), &self.prob.init);
        let terminal = traj.terminal().clone();
        let diff = &terminal - &self.prob.terminal_target;
        let dual_value = 0.5 * (ctx.control_dot(&f_bar, &f_bar) + ctx.control_dot(&g_bar, &g_bar));
        let j_value = self.prob.eval_j(&f_bar, &g_bar)?;
        let scale = ctx.terminal_norm(&self.prob.terminal_target);
        Ok(LeaderSolution {
            terminal_gap: ctx.l2_norm(&diff),
            terminal_gap_weighted: ctx.terminal_norm(&diff),
            eps: self.eps(),
            j_value,
            dual_value,
            theta: it.theta,
            tol_disc: 10.0 * self.delta + it.grad_norm + 10.0 * self.opts.nash_tol * scale.max(1.0),
            nash_iterations: eq.iterations,
            terminal,
            f_bar,
            g_bar,
        })
    }
}

/// Root of an increasing function with f(0) < 0 (else 0).
fn line_root<F: Fn(f64) -> f64>(f: F) -> f64 {
    if f(0.0) >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut k = 0;
    while f(hi) < 0.0 && k < 200 {
        lo = hi;
        hi *= 2.0;
        k += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Worst relative gap of <L l, td>_T = <l, L^* td>_C over random pairs.
pub fn leader_duality_check(dual: &DualProblem, n_trials: usize, seed: u64) -> Result<f64> {
    let ctx = dual.ctx();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_trials {
        let td = DVector::from_fn(ctx.state_dim(), |_, _| rng.random_range(-1.0..1.0));
        let mut f = ctx.zero_control(Region::Leader, 2);
        let mut g = ctx.zero_control(Region::Leader, 1);
        f.data.iter_mut().chain(g.data.iter_mut()).for_each(|v| *v = rng.random_range(-1.0..1.0));
        let lhs = ctx.terminal_dot(&dual.apply_map(&f, &g)?, &td);
        let (lf, lg, _) = dual.l_star(&td)?;
        let rhs = ctx.control_dot(&lf, &f) + ctx.control_dot(&lg, &g);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub dim: usize,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub pass: bool,
}

/// Singular values of the reachability map (f, g) -> (z(T), w(T)) in the control and
/// terminal metrics, from the Gram matrix of L^* on a terminal orthonormal basis.
pub fn density_probe(dual: &DualProblem) -> Result<DensityReport> {
    let ctx = dual.ctx();
    let n = ctx.state_dim();
    if n > 64 {
        return Err(Error::Size(n));
    }
    let metric = &ctx.mass * ctx.rho_terminal();
    let chol = metric.cholesky().ok_or(Error::NonInvertible(0.0))?;
    // columns of L^{-T} are orthonormal in the terminal metric
    let basis = chol.l().transpose().try_inverse().ok_or(Error::NonInvertible(0.0))?;
    let mut images = Vec::with_capacity(n);
    for j in 0..n {
        let (f, g, _) = dual.l_star(&basis.column(j).into_owned())?;
        images.push((f, g));
    }
    let gram = nalgebra::DMatrix::from_fn(n, n, |i, j| dual.pair_dot(&images[i], &images[j]));
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut sv: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smax = sv[0];
    let rank = sv.iter().filter(|s| **s > 1e-10 * smax).count();
    Ok(DensityReport {
        dim: n,
        rank,
        pass: rank == n && smax > 0.0,
        singular_values: sv,
    })
}
