//! Follower and leader cost functionals on the cylinder, weighted by rho(t) = |det K(t)|.
//!
//! Time integrals use the right-endpoint rule matching the implicit scheme: the control
//! on interval j is paired with rho(t_{j+1}) and the state term with x_{j+1}.

use crate::error::{Error, Result};
use crate::fields::{Expr, VelocityExpr};
use crate::geometry::Region;
use crate::state::{ControlField, Context, InitialData, Trajectory};
use nalgebra::DVector;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub alpha: [f64; 2],
    pub mu: [f64; 2],
    pub alpha_tilde: [f64; 2],
    pub mu_tilde: [f64; 2],
    pub z_d: [VelocityExpr; 2],
    pub w_d: [Expr; 2],
    pub z_t: VelocityExpr,
    pub w_t: Expr,
    pub eps: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            alpha: [1.0; 2],
            mu: [1.0; 2],
            alpha_tilde: [1.0; 2],
            mu_tilde: [1.0; 2],
            z_d: Default::default(),
            w_d: Default::default(),
            z_t: Default::default(),
            w_t: Expr::zero(),
            eps: 0.1,
        }
    }
}

impl CostWeights {
    /// Tracking weights may vanish (followers inert); control costs and eps may not.
    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, v: f64, strict: bool| {
            if !v.is_finite() || v < 0.0 || (strict && v == 0.0) {
                Err(Error::config(key, format!("must be {}, got {v}", if strict { "positive" } else { "nonnegative" })))
            } else {
                Ok(())
            }
        };
        for i in 0..2 {
            check("weights.alpha", self.alpha[i], false)?;
            check("weights.alpha_tilde", self.alpha_tilde[i], false)?;
            check("weights.mu", self.mu[i], true)?;
            check("weights.mu_tilde", self.mu_tilde[i], true)?;
        }
        check("weights.eps", self.eps, true)
    }

    pub fn without_tracking(mut self) -> Self {
        self.alpha = [0.0; 2];
        self.alpha_tilde = [0.0; 2];
        self
    }

    pub fn alpha_of(&self, p: Player) -> f64 {
        match p {
            Player::V(i) => self.alpha[i],
            Player::U(i) => self.alpha_tilde[i],
        }
    }

    pub fn mu_of(&self, p: Player) -> f64 {
        match p {
            Player::V(i) => self.mu[i],
            Player::U(i) => self.mu_tilde[i],
        }
    }
}

/// The four followers: v^(i) acts on the velocity, u^(i) on the micro-rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Player {
    V(usize),
    U(usize),
}

impl Player {
    pub const ALL: [Player; 4] = [Player::V(0), Player::V(1), Player::U(0), Player::U(1)];

    pub fn index(self) -> usize {
        match self {
            Player::V(i) => i,
            Player::U(i) => 2 + i,
        }
    }

    pub fn ncomp(self) -> usize {
        match self {
            Player::V(_) => 2,
            Player::U(_) => 1,
        }
    }

    pub fn follower(self) -> usize {
        match self {
            Player::V(i) | Player::U(i) => i,
        }
    }

    pub fn control_region(self) -> Region {
        Region::Follower(self.follower())
    }

    pub fn obs_region(self) -> Region {
        Region::Obs(self.follower())
    }

    pub fn is_velocity(self) -> bool {
        matches!(self, Player::V(_))
    }
}

impl std::fmt::Display for Player {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Player::V(i) => write!(f, "v{}", i + 1),
            Player::U(i) => write!(f, "u{}", i + 1),
        }
    }
}

/// Exact loads of the follower targets: load[m] = int_{O_d} target(t_m) . basis,
/// konst[m] = int_{O_d} |target(t_m)|^2, both in state coordinates.
#[derive(Debug, Clone)]
struct Tracking {
    load: Vec<DVector<f64>>,
    konst: Vec<f64>,
}

/// Context plus weights, targets and initial data: everything the game needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub ctx: Arc<Context>,
    pub weights: CostWeights,
    pub init: InitialData,
    tracking: [Tracking; 4],
    /// L2 projection of the leader target (z^T, w^T)
    pub terminal_target: DVector<f64>,
}

impl Problem {
    pub fn new(ctx: Arc<Context>, weights: CostWeights, init: InitialData) -> Result<Self> {
        weights.validate()?;
        if init.z0.len() != ctx.dim() || init.w0.len() != ctx.dim() {
            return Err(Error::GridMismatch(format!(
                "initial data has {} / {} coefficients, basis has {}",
                init.z0.len(),
                init.w0.len(),
                ctx.dim()
            )));
        }
        let tracking = Player::ALL.map(|p| Self::tracking(&ctx, &weights, p));
        let t = ctx.grid.t_final;
        let tab = &ctx.asm.tables;
        let terminal_target = crate::state::stack(&tab.project_velocity_expr(&weights.z_t, t), &tab.project_scalar_expr(&weights.w_t, t));
        Ok(Problem {
            ctx,
            weights,
            init,
            tracking,
            terminal_target,
        })
    }

    pub fn with_weights(&self, weights: CostWeights) -> Result<Self> {
        Problem::new(self.ctx.clone(), weights, self.init.clone())
    }

    /// Same weights, no targets, zero initial data: the linear part of every map.
    pub fn homogeneous(&self) -> Result<Self> {
        let w = CostWeights {
            z_d: Default::default(),
            w_d: Default::default(),
            z_t: Default::default(),
            w_t: Expr::zero(),
            ..self.weights.clone()
        };
        Problem::new(self.ctx.clone(), w, InitialData::zero(self.ctx.dim()))
    }

    fn tracking(ctx: &Context, w: &CostWeights, p: Player) -> Tracking {
        let d = ctx.dim();
        let tab = ctx.region(p.obs_region());
        let m = ctx.motion().m;
        let nr = tab.n_nodes();
        let points: Vec<[f64; 2]> = tab
            .nodes
            .iter()
            .map(|&q| {
                let (a, b) = ctx.geometry.node(q);
                [a, b]
            })
            .collect();
        let mut load = Vec::with_capacity(ctx.n_steps() + 1);
        let mut konst = Vec::with_capacity(ctx.n_steps() + 1);
        for step in 0..=ctx.n_steps() {
            let t = ctx.grid.t(step);
            let mut x = DVector::zeros(2 * d);
            let mut c = 0.0;
            match p {
                Player::V(i) => {
                    let mut vals = vec![0.0; 2 * nr];
                    if !w.z_d[i].is_zero() {
                        for (r, y) in points.iter().enumerate() {
                            let z = w.z_d[i].value(*y, t, &m);
                            vals[r] = z[0];
                            vals[nr + r] = z[1];
                            c += tab.weights[r] * (z[0] * z[0] + z[1] * z[1]);
                        }
                    }
                    x.rows_mut(0, d).copy_from(&tab.inject_v(&vals));
                }
                Player::U(i) => {
                    let mut vals = vec![0.0; nr];
                    if !w.w_d[i].is_zero() {
                        for (r, y) in points.iter().enumerate() {
                            vals[r] = w.w_d[i].value(*y, t);
                            c += tab.weights[r] * vals[r] * vals[r];
                        }
                    }
                    x.rows_mut(d, d).copy_from(&tab.inject_w(&vals));
                }
            }
            load.push(x);
            konst.push(c);
        }
        Tracking { load, konst }
    }

    /// G_p x: the observation Gram matrix of player p applied in state coordinates.
    pub fn observe(&self, p: Player, x: &DVector<f64>) -> DVector<f64> {
        let d = self.ctx.dim();
        let tab = self.ctx.region(p.obs_region());
        let mut out = DVector::zeros(2 * d);
        if p.is_velocity() {
            out.rows_mut(0, d).copy_from(&(&tab.gram_v * x.rows(0, d)));
        } else {
            out.rows_mut(d, d).copy_from(&(&tab.gram_w * x.rows(d, d)));
        }
        out
    }

    pub fn target_load(&self, p: Player, m: usize) -> &DVector<f64> {
        &self.tracking[p.index()].load[m]
    }

    pub fn has_targets(&self, p: Player) -> bool {
        self.tracking[p.index()].konst.iter().any(|c| *c != 0.0)
    }

    /// int_{O_d} |state - target|^2 at t_m.
    pub fn mismatch_sq(&self, p: Player, x: &DVector<f64>, m: usize) -> f64 {
        let tr = &self.tracking[p.index()];
        let gx = self.observe(p, x);
        (x.dot(&gx) - 2.0 * x.dot(&tr.load[m]) + tr.konst[m]).max(0.0)
    }

    /// (alpha_p/2) sum_m dt rho_m |x_m - target|^2 over O_{p,d}.
    pub fn tracking_term(&self, p: Player, traj: &Trajectory) -> Result<f64> {
        self.check_traj(traj)?;
        let a = self.weights.alpha_of(p);
        let dt = self.ctx.grid.dt;
        let mut s = 0.0;
        for m in 1..=self.ctx.n_steps() {
            s += dt * self.ctx.rho[m] * self.mismatch_sq(p, &traj.x[m], m);
        }
        Ok(0.5 * a * s)
    }

    /// Adjoint source of the tracking term: alpha dt rho_m (G x_m - b_m), optionally
    /// without the target loads.
    pub fn tracking_source(&self, p: Player, traj: &Trajectory, with_targets: bool) -> impl Fn(usize, &mut DVector<f64>) + '_ {
        let a = self.weights.alpha_of(p);
        let dt = self.ctx.grid.dt;
        let tr = &self.tracking[p.index()];
        let xs = traj.x.clone();
        move |m, rhs| {
            if a == 0.0 {
                return;
            }
            let mut g = self.observe(p, &xs[m]);
            if with_targets {
                g -= &tr.load[m];
            }
            rhs.axpy(a * dt * self.ctx.rho[m], &g, 1.0);
        }
    }

    fn check_traj(&self, traj: &Trajectory) -> Result<()> {
        if traj.x.len() != self.ctx.n_steps() + 1 || traj.x[0].len() != self.ctx.state_dim() {
            return Err(Error::GridMismatch(format!(
                "trajectory with {} snapshots of size {} on a grid of {} steps",
                traj.x.len(),
                traj.x[0].len(),
                self.ctx.n_steps()
            )));
        }
        Ok(())
    }

    fn check_control(&self, c: &ControlField, region: Region, ncomp: usize) -> Result<()> {
        let nr = self.ctx.region(region).n_nodes();
        if c.region != region || c.ncomp != ncomp || c.nr != nr || c.n_steps != self.ctx.n_steps() {
            return Err(Error::GridMismatch(format!("control on {} does not match region {region}", c.region)));
        }
        Ok(())
    }

    /// Cost of follower p for its own control and a given state trajectory.
    pub fn follower_cost(&self, p: Player, traj: &Trajectory, own: &ControlField) -> Result<f64> {
        self.check_control(own, p.control_region(), p.ncomp())?;
        let track = self.tracking_term(p, traj)?;
        Ok(track + 0.5 * self.weights.mu_of(p) * self.ctx.control_dot(own, own))
    }

    /// J_i (velocity follower, i = 0 or 1).
    pub fn eval_ji(&self, i: usize, traj: &Trajectory, v: &ControlField) -> Result<f64> {
        self.follower_cost(Player::V(i), traj, v)
    }

    /// J~_i (micro-rotation follower).
    pub fn eval_jti(&self, i: usize, traj: &Trajectory, u: &ControlField) -> Result<f64> {
        self.follower_cost(Player::U(i), traj, u)
    }

    /// Leader cost 1/2 int int_O rho (|f|^2 + |g|^2).
    pub fn eval_j(&self, f: &ControlField, g: &ControlField) -> Result<f64> {
        self.check_control(f, Region::Leader, 2)?;
        self.check_control(g, Region::Leader, 1)?;
        Ok(0.5 * (self.ctx.control_dot(f, f) + self.ctx.control_dot(g, g)))
    }
}

/// Central difference (F(x + h d) - F(x - h d)) / 2h.
pub fn directional_derivative<F>(mut functional: F, point: &DVector<f64>, direction: &DVector<f64>, h: f64) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    if !(1e-8..=1e-2).contains(&h) {
        return Err(Error::StepTooLarge(h));
    }
    if direction.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let plus = functional(&(point + direction * h))?;
    let minus = functional(&(point - direction * h))?;
    Ok((plus - minus) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{MotionKind, MotionLaw};
    use crate::scenario::Scenario;
    use nalgebra::Matrix2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(s: &Scenario, weights: CostWeights) -> Problem {
        let ctx = Arc::new(s.context_with(true).unwrap());
        let d = ctx.dim();
        Problem::new(ctx, weights, InitialData::zero(d)).unwrap()
    }

    fn random_traj(p: &Problem, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = p.ctx.state_dim();
        Trajectory {
            grid: p.ctx.grid,
            x: (0..=p.ctx.n_steps()).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect(),
        }
    }

    fn zero_traj(p: &Problem) -> Trajectory {
        Trajectory {
            grid: p.ctx.grid,
            x: vec![DVector::zeros(p.ctx.state_dim()); p.ctx.n_steps() + 1],
        }
    }

    #[test]
    fn matching_target_costs_nothing() {
        let s = Scenario::tiny();
        let mut w = CostWeights::default();
        let stream = Expr::sine(0.3, 1.0, 2.0);
        w.z_d[0] = VelocityExpr::Stream(stream.clone());
        w.w_d[0] = Expr::sine(0.7, 2.0, 1.0);
        let p = problem(&s, w);
        // the targets lie in the discrete space: stream sin(1,2) has coefficient 0.3
        let d = p.ctx.dim();
        let mut x = DVector::zeros(2 * d);
        x[p.ctx.basis.index(1, 2)] = 0.3;
        x[d + p.ctx.basis.index(2, 1)] = 0.7;
        let traj = Trajectory { grid: p.ctx.grid, x: vec![x; p.ctx.n_steps() + 1] };
        let zero_v = p.ctx.zero_control(Region::Follower(0), 2);
        let zero_u = p.ctx.zero_control(Region::Follower(0), 1);
        assert!(p.eval_ji(0, &traj, &zero_v).unwrap() < 1e-14);
        assert!(p.eval_jti(0, &traj, &zero_u).unwrap() < 1e-14);
    }

    #[test]
    fn control_term_formula() {
        let s = Scenario::identity(2, 4);
        let mut w = CostWeights::default();
        w.mu[0] = 3.0;
        let p = problem(&s, w);
        let mut v = p.ctx.zero_control(Region::Follower(0), 2);
        v.data.iter_mut().for_each(|x| *x = 1.0);
        let n2 = p.ctx.control_dot(&v, &v);
        let v = v.scaled((2.0 / n2).sqrt());
        let j = p.eval_ji(0, &zero_traj(&p), &v).unwrap();
        assert!((j - 3.0).abs() < 1e-13);
    }

    #[test]
    fn constant_mismatch_integrates_to_area_times_time() {
        let s = Scenario::identity(2, 5);
        let mut w = CostWeights::default();
        w.alpha = [2.0, 2.0];
        w.alpha_tilde = [2.0, 2.0];
        w.z_d[0] = VelocityExpr::Components([Expr::constant(0.6), Expr::constant(0.8)]);
        w.w_d[1] = Expr::constant(-1.0);
        let p = problem(&s, w);
        let area = p.ctx.geometry.o_obs[0].area();
        let zero_v = p.ctx.zero_control(Region::Follower(0), 2);
        let j = p.eval_ji(0, &zero_traj(&p), &zero_v).unwrap();
        assert!((j - area * p.ctx.grid.t_final).abs() < 1e-13);
        let area = p.ctx.geometry.o_obs[1].area();
        let zero_u = p.ctx.zero_control(Region::Follower(1), 1);
        let j = p.eval_jti(1, &zero_traj(&p), &zero_u).unwrap();
        assert!((j - area * p.ctx.grid.t_final).abs() < 1e-13);
    }

    #[test]
    fn leader_cost_cases() {
        let s = Scenario::identity(2, 4);
        let p = problem(&s, CostWeights::default());
        let mut f = p.ctx.zero_control(Region::Leader, 2);
        let g = p.ctx.zero_control(Region::Leader, 1);
        assert_eq!(p.eval_j(&f, &g).unwrap(), 0.0);
        f.data.iter_mut().enumerate().for_each(|(k, x)| *x = (k as f64).cos());
        let n2 = p.ctx.control_dot(&f, &f);
        let f = f.scaled((4.0 / n2).sqrt());
        assert!((p.eval_j(&f, &g).unwrap() - 2.0).abs() < 1e-13);

        // k = 2 constant, M = I: same samples cost four times as much
        let mut s2 = Scenario::identity(2, 4);
        s2.motion = MotionLaw::new(MotionKind::Constant { a: 2.0 }, Matrix2::identity(), 1.0, 1.0).unwrap();
        let p2 = problem(&s2, CostWeights::default());
        let (a, b) = (p.eval_j(&f, &g).unwrap(), p2.eval_j(&f, &g).unwrap());
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let p = problem(&Scenario::tiny(), CostWeights::default());
        let short = Trajectory { grid: p.ctx.grid, x: vec![DVector::zeros(p.ctx.state_dim()); 2] };
        let v = p.ctx.zero_control(Region::Follower(0), 2);
        assert!(matches!(p.eval_ji(0, &short, &v), Err(Error::GridMismatch(_))));
        let wrong = p.ctx.zero_control(Region::Follower(1), 2);
        assert!(matches!(p.eval_ji(0, &zero_traj(&p), &wrong), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn weights_are_validated() {
        let mut w = CostWeights::default();
        w.mu[1] = 0.0;
        assert!(matches!(w.validate(), Err(Error::Config { .. })));
        let mut w = CostWeights::default();
        w.eps = -1.0;
        assert!(w.validate().is_err());
        assert!(CostWeights::default().without_tracking().validate().is_ok());
    }

    #[test]
    fn directional_derivative_basics() {
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let d = DVector::from_vec(vec![0.5, -1.0]);
        let f = |y: &DVector<f64>| Ok(y[0] * y[0] + 3.0 * y[0] * y[1] + 2.0 * y[1]);
        let exact = (2.0 * 1.0 + 3.0 * 2.0) * 0.5 + (3.0 * 1.0 + 2.0) * -1.0;
        let a = directional_derivative(f, &x, &d, 1e-3).unwrap();
        let b = directional_derivative(f, &x, &d, 1e-4).unwrap();
        assert!((a - b).abs() < 1e-9 && (a - exact).abs() < 1e-9);
        assert_eq!(directional_derivative(f, &x, &DVector::zeros(2), 1e-3).unwrap(), 0.0);
        assert!(directional_derivative(f, &x, &d, 0.1).is_err());
    }

    /// Integrate a function over the parallelogram K [a,b]x[c,d] by splitting it into two
    /// triangles with a collapsed Gauss rule.
    fn integrate_parallelogram(k: &Matrix2<f64>, r: &crate::geometry::Rect, f: impl Fn([f64; 2]) -> f64) -> f64 {
        let (x, w) = crate::geometry::gauss_legendre(24);
        let to01 = |s: f64| 0.5 * (s + 1.0);
        let map = |p: [f64; 2]| {
            let v = k * nalgebra::Vector2::new(p[0], p[1]);
            [v[0], v[1]]
        };
        let corners = [map([r.x0, r.y0]), map([r.x1, r.y0]), map([r.x1, r.y1]), map([r.x0, r.y1])];
        let mut total = 0.0;
        for tri in [[corners[0], corners[1], corners[2]], [corners[0], corners[2], corners[3]]] {
            let e1 = [tri[1][0] - tri[0][0], tri[1][1] - tri[0][1]];
            let e2 = [tri[2][0] - tri[0][0], tri[2][1] - tri[0][1]];
            let jac = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
            for (i, u) in x.iter().enumerate() {
                for (j, v) in x.iter().enumerate() {
                    let (s, t) = (to01(*u), to01(*v));
                    // Duffy: (s, t) -> (s, s t) on the reference triangle
                    let (a, b) = (s * (1.0 - t), s * t);
                    let p = [tri[0][0] + a * e1[0] + b * e2[0], tri[0][1] + a * e1[1] + b * e2[1]];
                    total += 0.25 * w[i] * w[j] * s * jac * f(p);
                }
            }
        }
        total
    }

    #[test]
    fn cylinder_weights_match_moving_domain_integrals() {
        let s = Scenario::default_scenario();
        let mut w = CostWeights::default();
        w.z_d[0] = VelocityExpr::Components([Expr::parse("0.3*sin(1,1) + 0.1").unwrap(), Expr::parse("y1^2").unwrap()]);
        w.w_d[0] = Expr::parse("0.2 + y2*t").unwrap();
        let ctx = Arc::new(s.context_with(true).unwrap());
        let p = Problem::new(ctx.clone(), w.clone(), InitialData::zero(ctx.dim())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = ctx.dim();
        let x = DVector::from_fn(2 * d, |_, _| rng.random_range(-0.5..0.5));
        let m = 7;
        let t = ctx.grid.t(m);
        let k = ctx.motion().k(t)[0] * ctx.motion().m;
        let kinv = k.try_inverse().unwrap();
        let zeta = x.rows(0, d).into_owned();
        let wc = x.rows(d, d).into_owned();
        let pull = |xp: [f64; 2]| {
            let y = kinv * nalgebra::Vector2::new(xp[0], xp[1]);
            [y[0], y[1]]
        };
        let mm = ctx.motion().m;
        let dz = |xp: [f64; 2]| {
            let y = pull(xp);
            let z = ctx.basis.eval_velocity(&zeta, &mm, y);
            let zd = w.z_d[0].value(y, t, &mm);
            (z[0] - zd[0]).powi(2) + (z[1] - zd[1]).powi(2)
        };
        let dw = |xp: [f64; 2]| {
            let y = pull(xp);
            (ctx.basis.eval_scalar(&wc, y) - w.w_d[0].value(y, t)).powi(2)
        };
        let r = ctx.geometry.o_obs[0];
        let moving_z = integrate_parallelogram(&k, &r, dz);
        let moving_w = integrate_parallelogram(&k, &r, dw);
        let cyl_z = ctx.rho[m] * p.mismatch_sq(Player::V(0), &x, m);
        let cyl_w = ctx.rho[m] * p.mismatch_sq(Player::U(0), &x, m);
        assert!((moving_z - cyl_z).abs() <= 1e-6 * cyl_z.max(1.0), "{moving_z} {cyl_z}");
        assert!((moving_w - cyl_w).abs() <= 1e-6 * cyl_w.max(1.0), "{moving_w} {cyl_w}");
    }

    #[test]
    fn problem_rejects_wrong_initial_data() {
        let s = Scenario::tiny();
        let ctx = Arc::new(s.context_with(true).unwrap());
        let r = Problem::new(ctx, CostWeights::default(), InitialData::zero(3));
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn own_cost_is_convex_along_lines(seed in 0u64..500, t in -3.0f64..3.0) {
            let mut w = CostWeights::default();
            w.z_d[0] = VelocityExpr::Stream(Expr::sine(0.2, 1.0, 1.0));
            let p = problem(&Scenario::tiny(), w);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = p.ctx.zero_control(Region::Follower(0), 2);
            let mut dir = v.clone();
            v.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            dir.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            let base = random_traj(&p, seed);
            let cost = |s: f64| {
                let mut c = v.clone();
                c.axpy(s, &dir);
                let resp = p.ctx.solve_follower_response(&c, &p.ctx.zero_control(Region::Follower(0), 1));
                let mut traj = base.clone();
                traj.axpy(1.0, &resp);
                p.eval_ji(0, &traj, &c).unwrap()
            };
            let h = 0.5;
            let second = cost(t + h) - 2.0 * cost(t) + cost(t - h);
            prop_assert!(second >= -1e-10 * cost(t).abs().max(1.0));
        }
    }
}
