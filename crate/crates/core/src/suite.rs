//! The property suite behind the `check` command.
//!
//! Each group returns rows of (name, value, tolerance, pass). A row passes when the
//! measured value lies on the right side of its tolerance.

use crate::adjoint;
use crate::error::Result;
use crate::fields::Expr;
use crate::functionals::{CostWeights, Problem};
use crate::geometry::{Geometry, QuadSpec};
use crate::leader::{self, DualProblem, LeaderOptions, LeaderSolution};
use crate::motion::{verify_chain_rule, CubicSpline, MotionKind, MotionLaw};
use crate::nash::{self, FollowerVector};
use crate::output::{num, Csv};
use crate::scenario::Scenario;
use crate::state::{InitialData, Trajectory};
use nalgebra::{DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Passes when value <= tolerance.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        CheckRow {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    /// Passes when value >= tolerance.
    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        CheckRow {
            name: name.into(),
            value,
            tolerance,
            pass: value >= tolerance,
        }
    }

    /// Boolean property, recorded as 1 or 0.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        CheckRow {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            pass: ok,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<40} value {:>12.4e}  tolerance {:>10.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

pub fn rows_csv(rows: &[CheckRow]) -> Csv {
    let mut csv = Csv::new(&["name", "value", "tolerance", "pass"]);
    for r in rows {
        csv.row([r.name.clone(), num(r.value), num(r.tolerance), r.pass.to_string()]);
    }
    csv
}

/// Five motion laws used by the transform checks.
pub fn sample_motions() -> Vec<MotionLaw> {
    let shear = Matrix2::new(1.0, 0.25, 0.25, 1.0);
    let t: Vec<f64> = (0..=6).map(|i| i as f64 / 6.0).collect();
    let y: Vec<f64> = t.iter().map(|s| 1.0 + 0.3 * s + 0.2 * (3.0 * s).sin()).collect();
    vec![
        MotionLaw::identity(1.0),
        MotionLaw::new(MotionKind::Constant { a: 1.5 }, Matrix2::new(2.0, 0.0, 0.0, 1.0), 1.0, 1.0).expect("valid"),
        MotionLaw::new(MotionKind::Affine { a: 1.0, b: 0.5 }, shear, 1.0, 1.0).expect("valid"),
        MotionLaw::new(MotionKind::Exponential { a: 1.0, b: 0.4 }, Matrix2::new(1.0, -0.3, 0.1, 0.8), 1.0, 1.0).expect("valid"),
        MotionLaw::new(MotionKind::Spline(CubicSpline::natural(t, y).expect("valid")), shear, 1.0, 1.0).expect("valid"),
    ]
}

pub fn sample_fields() -> Vec<Expr> {
    ["sin(1,1)", "y1^2*sin2(2)*t + 0.5*cos1(1)", "exp(0.7*t)*sin(2,1) - 0.3*y1*y2*t^2"]
        .iter()
        .map(|s| Expr::parse(s).expect("valid expression"))
        .collect()
}

pub fn chain_rule_rows() -> Result<Vec<CheckRow>> {
    let mut worst = 0.0f64;
    let mut all = true;
    for law in sample_motions() {
        for f in sample_fields() {
            for t in [0.25, 0.5, 0.75] {
                let r = verify_chain_rule(&law, &f, t, 1e-4)?;
                worst = worst.max(r.max);
                all &= r.pass;
            }
        }
    }
    Ok(vec![CheckRow::at_most("chain rule (5 laws x 3 fields)", worst, 1e-6), CheckRow::holds("chain rule reports pass", all)])
}

pub fn duality_rows(prob: &Problem, seed: u64) -> Result<Vec<CheckRow>> {
    let d = adjoint::duality_check(prob, 20, seed)?;
    let dual = DualProblem::new(prob, LeaderOptions::default())?;
    let l = leader::leader_duality_check(&dual, 10, seed + 1)?;
    Ok(vec![CheckRow::at_most("follower adjoint duality", d, 1e-10), CheckRow::at_most("leader map duality", l, 1e-8)])
}

fn relative_snapshot_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.x.iter()
        .zip(&b.x)
        .map(|(p, q)| {
            let s = p.amax().max(q.amax());
            if s == 0.0 {
                0.0
            } else {
                (p - q).amax() / s
            }
        })
        .fold(0.0, f64::max)
}

/// State = uncontrolled + follower responses, on randomly perturbed scenarios.
pub fn superposition_rows(base: &Scenario, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mut s = base.clone();
        s.motion = MotionLaw::new(
            MotionKind::Affine {
                a: rng.random_range(1.0..1.3),
                b: rng.random_range(0.0..0.6),
            },
            Matrix2::new(1.0, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0),
            base.motion.t_final,
            1.0,
        )?;
        let ctx = s.context()?;
        let mut controls = ctx.zero_controls();
        for c in controls.iter_mut() {
            c.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        let init = InitialData {
            z0: DVector::from_fn(ctx.dim(), |_, _| rng.random_range(-1.0..1.0)),
            w0: DVector::from_fn(ctx.dim(), |_, _| rng.random_range(-1.0..1.0)),
        };
        let full = ctx.solve_state(&controls, &init);
        let mut sum = ctx.solve_uncontrolled(&controls.f, &controls.g, &init);
        for i in 0..2 {
            sum.axpy(1.0, &ctx.solve_follower_response(&controls.v[i], &controls.u[i]));
        }
        worst = worst.max(relative_snapshot_gap(&full, &sum));
    }
    Ok(vec![CheckRow::at_most("superposition (5 scenarios)", worst, 1e-10)])
}

/// The same configuration at N = 2, 4 steps and the smallest admissible quadrature.
pub fn tiny_version(s: &Scenario) -> Result<Scenario> {
    let g = &s.geometry;
    Ok(Scenario {
        n_modes: 2,
        n_steps: 4,
        geometry: Geometry::new(g.o_leader, g.o_follower, g.o_obs, QuadSpec { order: 4, max_cell: 0.25 })?,
        ..s.clone()
    })
}

fn random_leader(prob: &Problem, seed: u64) -> (crate::state::ControlField, crate::state::ControlField) {
    let ctx = &prob.ctx;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = ctx.zero_control(crate::geometry::Region::Leader, 2);
    let mut g = ctx.zero_control(crate::geometry::Region::Leader, 1);
    f.data.iter_mut().chain(g.data.iter_mut()).for_each(|x| *x = rng.random_range(-1.0..1.0));
    (f, g)
}

/// Krylov equilibrium against a dense direct solve, deviation battery, characterization.
pub fn nash_rows(tiny: &Problem, seed: u64) -> Result<Vec<CheckRow>> {
    let ctx = &tiny.ctx;
    let (f, g) = random_leader(tiny, seed);
    let eq = nash::solve_nash(tiny, &f, &g, 1e-13)?;
    let l = nash::assemble_l(tiny)?;
    let psi = nash::build_psi(tiny, &f, &g)?.flatten();
    let direct = l.lu().solve(&psi).ok_or(crate::error::Error::NonInvertible(0.0))?;
    let direct = FollowerVector::unflatten(ctx, &direct);
    let mut diff = eq.xi.clone();
    diff.axpy(-1.0, &direct);
    let rel = diff.norm(ctx) / direct.norm(ctx).max(f64::MIN_POSITIVE);

    let report = nash::verify_nash(tiny, &eq.xi, &f, &g, 100, seed + 1)?;
    let at_tol = nash::solve_nash(tiny, &f, &g, 1e-8)?;
    let ch = nash::characterize_nash(tiny, &at_tol.xi, &f, &g)?;
    Ok(vec![
        CheckRow::at_most("equilibrium vs dense solve", rel, 1e-8),
        CheckRow::at_most("first-order conditions (100 dirs)", report.max_derivative, 1e-7),
        CheckRow::at_least("unilateral deviation gain", report.min_gain, -1e-10),
        CheckRow::at_most("adjoint characterization", ch.max(), 1e-6),
    ])
}

/// Inert followers give min eig = min mu exactly; with enlarged penalties the
/// sufficient conditions hold and the bound gamma applies.
pub fn coercivity_rows(prob: &Problem, seed: u64) -> Result<Vec<CheckRow>> {
    let w = &prob.weights;
    let mut inert_w = w.clone();
    inert_w.alpha = [0.0; 2];
    inert_w.alpha_tilde = [0.0; 2];
    let inert = prob.with_weights(inert_w)?;
    let lam = nash::min_eigenvalue(&inert, seed, 50)?;
    let expect = w.mu.iter().chain(&w.mu_tilde).copied().fold(f64::INFINITY, f64::min);

    let mut rep = nash::check_coercivity(prob, seed)?;
    let mut scale = 1.0;
    while !rep.condition_holds && scale < 1e6 {
        scale *= 10.0;
        let mut sw = w.clone();
        sw.mu = [w.mu[0] * scale, w.mu[1] * scale];
        sw.mu_tilde = [w.mu_tilde[0] * scale, w.mu_tilde[1] * scale];
        rep = nash::check_coercivity(&prob.with_weights(sw)?, seed)?;
    }
    Ok(vec![
        CheckRow::at_most("inert followers: |min eig - min mu|", (lam - expect).abs(), 1e-10),
        CheckRow::holds("sufficient coercivity conditions", rep.condition_holds),
        CheckRow::at_least("min eig - gamma", rep.min_eig - rep.gamma, -1e-4),
    ])
}

/// Relative error of the dual gradient against central differences.
pub fn gradient_error(dual: &DualProblem, td: &DVector<f64>, delta: f64, h: f64) -> Result<f64> {
    let ctx = dual.ctx();
    let n = td.len();
    let grad = dual.theta_grad(td, delta)?;
    // the gradient is a Riesz representative; the partials are its metric image
    let exact = (&ctx.mass * &grad) * ctx.rho_terminal();
    let mut fd = DVector::zeros(n);
    for k in 0..n {
        let mut p = td.clone();
        p[k] += h;
        let mut m = td.clone();
        m[k] -= h;
        fd[k] = (dual.theta(&p, delta)? - dual.theta(&m, delta)?) / (2.0 * h);
    }
    Ok((&fd - &exact).norm() / exact.norm().max(f64::MIN_POSITIVE))
}

pub fn gradient_rows(prob: &Problem, seed: u64) -> Result<Vec<CheckRow>> {
    let dual = DualProblem::new(prob, LeaderOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = prob.ctx.state_dim();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let td = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        worst = worst.max(gradient_error(&dual, &td, 1e-4, 1e-5)?);
    }
    Ok(vec![CheckRow::at_most("dual gradient vs differences (10 pts)", worst, 1e-6)])
}

/// Full pipeline at the configured eps.
pub fn leader_solve(prob: &Problem, opts: LeaderOptions) -> Result<(DualProblem<'_>, LeaderSolution)> {
    let dual = DualProblem::new(prob, opts)?;
    let it = dual.minimize_theta()?.require_converged()?;
    let sol = dual.recover_leader(&it)?;
    Ok((dual, sol))
}

pub fn leader_rows(prob: &Problem, opts: LeaderOptions) -> Result<Vec<CheckRow>> {
    let (_, sol) = leader_solve(prob, opts)?;
    let mut rows = vec![
        CheckRow::at_most("terminal gap - eps", sol.terminal_gap_weighted - sol.eps, sol.tol_disc),
        CheckRow::at_most("discretization allowance", sol.tol_disc, 1e-3),
        CheckRow::at_most("primal/dual value gap", (sol.j_value + sol.theta).abs() / sol.theta.abs().max(1.0), 1e-4),
    ];
    let mut gaps = Vec::new();
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let mut w: CostWeights = prob.weights.clone();
        w.eps = eps;
        let p = prob.with_weights(w)?;
        gaps.push(leader_solve(&p, opts)?.1.terminal_gap_weighted);
    }
    rows.push(CheckRow::holds("terminal gap monotone in eps", gaps.windows(2).all(|w| w[1] <= w[0])));
    Ok(rows)
}

pub fn density_rows(prob: &Problem) -> Result<Vec<CheckRow>> {
    if prob.ctx.state_dim() > 64 {
        return Ok(vec![]);
    }
    let dual = DualProblem::new(prob, LeaderOptions::default())?;
    let r = leader::density_probe(&dual)?;
    Ok(vec![CheckRow::at_least("reachable terminal rank", r.rank as f64, r.dim as f64)])
}

/// Everything, on the scenario and on its tiny version.
pub fn run_suite(s: &Scenario) -> Result<Vec<CheckRow>> {
    let seed = s.seed;
    let prob = s.problem()?;
    let tiny = tiny_version(s)?.problem()?;
    let mut rows = chain_rule_rows()?;
    rows.extend(duality_rows(&prob, seed)?);
    rows.extend(superposition_rows(s, seed)?);
    rows.extend(nash_rows(&tiny, seed)?);
    rows.extend(coercivity_rows(&prob, seed)?);
    rows.extend(gradient_rows(&prob, seed)?);
    rows.extend(density_rows(&prob)?);
    rows.extend(leader_rows(&prob, s.solver.leader)?);
    Ok(rows)
}

/// Problem with the same context but no tracking and zero data.
pub fn homogeneous_problem(prob: &Problem) -> Result<Problem> {
    Problem::new(Arc::clone(&prob.ctx), prob.weights.clone().without_tracking(), InitialData::zero(prob.ctx.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_semantics() {
        assert!(CheckRow::at_most("a", 1e-11, 1e-10).pass);
        assert!(!CheckRow::at_most("a", f64::NAN, 1e-10).pass);
        assert!(!CheckRow::at_least("b", -1.0, 0.0).pass);
        assert!(CheckRow::holds("c", true).line().starts_with("PASS"));
        assert_eq!(rows_csv(&[CheckRow::holds("c", false)]).n_rows(), 1);
    }

    #[test]
    fn tiny_suite_groups() {
        let s = Scenario::tiny();
        let prob = s.problem().unwrap();
        for r in chain_rule_rows().unwrap() {
            assert!(r.pass, "{}", r.line());
        }
        for r in superposition_rows(&s, 3).unwrap() {
            assert!(r.pass, "{}", r.line());
        }
        for r in nash_rows(&prob, 3).unwrap() {
            assert!(r.pass, "{}", r.line());
        }
    }
}
