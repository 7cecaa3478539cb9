//! Implicit-Euler time stepping of the pulled-back system and the discrete adjoint march.
//!
//! Step m (1..=n): S_m x_m = (Mass/dt) x_{m-1} + B u_{m-1}, S_m = Mass/dt + K(t_m).
//! A control sample on interval j = 0..n-1 therefore first acts on x_{j+1}.

use crate::basis::{Assembler, DiscreteOperators, RegionTable, SpectralBasis};
use crate::error::{Error, Result};
use crate::fields::CoefficientFields;
use crate::geometry::{Geometry, Region};
use crate::motion::MotionLaw;
use nalgebra::{DMatrix, DVector, Dyn, LU};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub n_steps: usize,
    pub t_final: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, t_final: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::config("discretization.n_steps", "must be at least 1"));
        }
        Ok(TimeGrid {
            n_steps,
            t_final,
            dt: t_final / n_steps as f64,
        })
    }

    pub fn t(&self, m: usize) -> f64 {
        if m == self.n_steps {
            self.t_final
        } else {
            m as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub z0: DVector<f64>,
    pub w0: DVector<f64>,
}

impl InitialData {
    pub fn zero(dim: usize) -> Self {
        InitialData {
            z0: DVector::zeros(dim),
            w0: DVector::zeros(dim),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        stack(&self.z0, &self.w0)
    }

    pub fn is_zero(&self) -> bool {
        self.z0.iter().chain(self.w0.iter()).all(|v| *v == 0.0)
    }
}

pub fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(a.len() + b.len());
    x.rows_mut(0, a.len()).copy_from(a);
    x.rows_mut(a.len(), b.len()).copy_from(b);
    x
}

/// Snapshots x_m = (zeta_m, w_m) for m = 0..=n.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub x: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.x[0].len() / 2
    }

    pub fn zeta(&self, m: usize) -> DVector<f64> {
        self.x[m].rows(0, self.dim()).into_owned()
    }

    pub fn w(&self, m: usize) -> DVector<f64> {
        self.x[m].rows(self.dim(), self.dim()).into_owned()
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.x.last().unwrap()
    }

    pub fn axpy(&mut self, a: f64, other: &Trajectory) {
        for (x, y) in self.x.iter_mut().zip(&other.x) {
            x.axpy(a, y, 1.0);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }
}

/// Backward solution. `field[j]` pairs with control interval j (it lives at
/// t_{j+1}); `terminal` is the terminal datum.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub field: Vec<DVector<f64>>,
    pub terminal: DVector<f64>,
}

impl AdjointTrajectory {
    pub fn axpy(&mut self, a: f64, other: &AdjointTrajectory) {
        for (x, y) in self.field.iter_mut().zip(&other.field) {
            x.axpy(a, y, 1.0);
        }
        self.terminal.axpy(a, &other.terminal, 1.0);
    }

    pub fn max_abs(&self) -> f64 {
        self.field.iter().map(|v| v.amax()).fold(self.terminal.amax(), f64::max)
    }
}

/// Piecewise-constant-in-time node samples on one region.
/// Layout: data[j * ncomp * nr + c * nr + r].
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub region: Region,
    pub ncomp: usize,
    pub nr: usize,
    pub n_steps: usize,
    pub data: Vec<f64>,
}

impl ControlField {
    pub fn zeros(region: Region, ncomp: usize, nr: usize, n_steps: usize) -> Self {
        ControlField {
            region,
            ncomp,
            nr,
            n_steps,
            data: vec![0.0; ncomp * nr * n_steps],
        }
    }

    pub fn block(&self) -> usize {
        self.ncomp * self.nr
    }

    pub fn interval(&self, j: usize) -> &[f64] {
        let b = self.block();
        &self.data[j * b..(j + 1) * b]
    }

    pub fn interval_mut(&mut self, j: usize) -> &mut [f64] {
        let b = self.block();
        &mut self.data[j * b..(j + 1) * b]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut c = self.clone();
        c.data.iter_mut().for_each(|v| *v *= s);
        c
    }

    pub fn axpy(&mut self, a: f64, other: &ControlField) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }
}

/// Leader pair (f, g) on O and follower quadruple on O_1, O_2.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub f: ControlField,
    pub g: ControlField,
    pub v: [ControlField; 2],
    pub u: [ControlField; 2],
}

impl ControlSet {
    pub fn iter(&self) -> impl Iterator<Item = &ControlField> {
        [&self.f, &self.g, &self.v[0], &self.v[1], &self.u[0], &self.u[1]].into_iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ControlField> {
        let [v0, v1] = &mut self.v;
        let [u0, u1] = &mut self.u;
        [&mut self.f, &mut self.g, v0, v1, u0, u1].into_iter()
    }
}

/// Everything a solve needs: operators at every time node and factorized step matrices.
#[derive(Debug)]
pub struct Context {
    pub basis: SpectralBasis,
    pub geometry: Geometry,
    pub grid: TimeGrid,
    pub micro: bool,
    pub asm: Assembler,
    /// operators at t_0..t_n
    pub ops: Vec<DiscreteOperators>,
    /// |det K(t_m)|
    pub rho: Vec<f64>,
    pub mass: DMatrix<f64>,
    steps: Vec<DMatrix<f64>>,
    lu: Vec<LU<f64, Dyn, Dyn>>,
    lu_t: Vec<LU<f64, Dyn, Dyn>>,
    regions: HashMap<Region, RegionTable>,
}

pub const MAX_CONDITION: f64 = 1e14;

impl Context {
    pub fn new(
        basis: SpectralBasis,
        geometry: Geometry,
        motion: MotionLaw,
        fields: CoefficientFields,
        grid: TimeGrid,
        micro: bool,
    ) -> Result<Self> {
        if (grid.t_final - motion.t_final).abs() > 1e-12 * motion.t_final {
            return Err(Error::GridMismatch(format!(
                "time grid ends at {} but the motion law at {}",
                grid.t_final, motion.t_final
            )));
        }
        let asm = Assembler::new(basis, &geometry, &motion, &fields)?;
        let ops = (0..=grid.n_steps)
            .map(|m| asm.assemble(grid.t(m)))
            .collect::<Result<Vec<_>>>()?;
        let rho = ops.iter().map(|o| o.coeffs.weight).collect();
        let mass = ops[0].mass();
        let mut steps = Vec::with_capacity(grid.n_steps);
        let mut lu = Vec::with_capacity(grid.n_steps);
        let mut lu_t = Vec::with_capacity(grid.n_steps);
        for m in 1..=grid.n_steps {
            let s = &mass / grid.dt + ops[m].system(micro);
            let cond = condition_1(&s);
            if !(cond <= MAX_CONDITION) {
                return Err(Error::SingularStep { step: m, cond });
            }
            lu.push(s.clone().lu());
            lu_t.push(s.transpose().lu());
            steps.push(s);
        }
        let mut regions = HashMap::new();
        for r in [
            Region::Omega,
            Region::Leader,
            Region::Follower(0),
            Region::Follower(1),
            Region::Obs(0),
            Region::Obs(1),
        ] {
            regions.insert(r, RegionTable::new(&asm.tables, &geometry, r)?);
        }
        Ok(Context {
            basis,
            geometry,
            grid,
            micro,
            asm,
            ops,
            rho,
            mass,
            steps,
            lu,
            lu_t,
            regions,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.basis.dim()
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn motion(&self) -> &MotionLaw {
        self.asm.motion()
    }

    pub fn region(&self, r: Region) -> &RegionTable {
        &self.regions[&r]
    }

    /// S_m for m = 1..=n.
    pub fn step_matrix(&self, m: usize) -> &DMatrix<f64> {
        &self.steps[m - 1]
    }

    pub fn rho_terminal(&self) -> f64 {
        *self.rho.last().unwrap()
    }

    pub fn zero_control(&self, region: Region, ncomp: usize) -> ControlField {
        ControlField::zeros(region, ncomp, self.region(region).n_nodes(), self.n_steps())
    }

    pub fn zero_controls(&self) -> ControlSet {
        ControlSet {
            f: self.zero_control(Region::Leader, 2),
            g: self.zero_control(Region::Leader, 1),
            v: [self.zero_control(Region::Follower(0), 2), self.zero_control(Region::Follower(1), 2)],
            u: [self.zero_control(Region::Follower(0), 1), self.zero_control(Region::Follower(1), 1)],
        }
    }

    /// Load of one control interval in state coordinates.
    pub fn inject(&self, c: &ControlField, j: usize, out: &mut DVector<f64>) {
        let d = self.dim();
        let tab = self.region(c.region);
        let s = c.interval(j);
        if s.iter().all(|v| *v == 0.0) {
            return;
        }
        if c.ncomp == 2 {
            let mut top = out.rows_mut(0, d);
            top += tab.inject_v(s);
        } else {
            let mut bot = out.rows_mut(d, d);
            bot += tab.inject_w(s);
        }
    }

    /// Node values of an adjoint field on a control region, in the control layout.
    pub fn restrict(&self, adj: &AdjointTrajectory, region: Region, ncomp: usize) -> ControlField {
        let d = self.dim();
        let tab = self.region(region);
        let mut out = ControlField::zeros(region, ncomp, tab.n_nodes(), self.n_steps());
        for j in 0..self.n_steps() {
            let p = &adj.field[j];
            let vals = if ncomp == 2 {
                tab.eval_v(&p.rows(0, d).into_owned())
            } else {
                tab.eval_w(&p.rows(d, d).into_owned())
            };
            out.interval_mut(j).copy_from_slice(vals.as_slice());
        }
        out
    }

    /// Forward march from x0 with per-interval loads from `controls`.
    pub fn forward(&self, x0: &DVector<f64>, controls: &[&ControlField]) -> Trajectory {
        self.forward_with(x0, |j, b| {
            for c in controls {
                self.inject(c, j, b);
            }
        })
    }

    /// Forward march with an arbitrary load callback `load(j, rhs)` for interval j.
    pub fn forward_with<F: Fn(usize, &mut DVector<f64>)>(&self, x0: &DVector<f64>, load: F) -> Trajectory {
        let n = self.n_steps();
        let mut x = Vec::with_capacity(n + 1);
        x.push(x0.clone());
        for m in 1..=n {
            let mut rhs = &self.mass * &x[m - 1] / self.grid.dt;
            load(m - 1, &mut rhs);
            let xm = self.lu[m - 1].solve(&rhs).expect("step matrix was checked");
            x.push(xm);
        }
        Trajectory { grid: self.grid, x }
    }

    /// Backward march of the transposed scheme.
    ///
    /// `source(m, rhs)` adds the derivative of a linear functional with respect to
    /// x_m (m = 1..=n). The terminal datum xi enters as rho(T) Mass xi, i.e. paired with
    /// x_n in the rho(T)-weighted L2 product. Fields are scaled by 1/(dt rho(t_m)) so
    /// that restricting them to a region gives the gradient in the weighted control metric.
    pub fn backward_with<F: Fn(usize, &mut DVector<f64>)>(&self, terminal: Option<&DVector<f64>>, source: F) -> AdjointTrajectory {
        let n = self.n_steps();
        let dt = self.grid.dt;
        let mut lam_next = match terminal {
            Some(xi) => xi * (dt * self.rho_terminal()),
            None => DVector::zeros(self.state_dim()),
        };
        let term = terminal.cloned().unwrap_or_else(|| DVector::zeros(self.state_dim()));
        let mut field = vec![DVector::zeros(self.state_dim()); n];
        for m in (1..=n).rev() {
            let mut rhs = &self.mass * &lam_next / dt;
            source(m, &mut rhs);
            let lam = self.lu_t[m - 1].solve(&rhs).expect("step matrix was checked");
            field[m - 1] = &lam / (dt * self.rho[m]);
            lam_next = lam;
        }
        AdjointTrajectory { field, terminal: term }
    }

    /// Weighted control inner product sum_j dt rho(t_{j+1}) sum_nodes w a.b.
    pub fn control_dot(&self, a: &ControlField, b: &ControlField) -> f64 {
        let tab = self.region(a.region);
        let nr = tab.n_nodes();
        let mut total = 0.0;
        for j in 0..self.n_steps() {
            let (x, y) = (a.interval(j), b.interval(j));
            let mut s = 0.0;
            for (k, (p, q)) in x.iter().zip(y).enumerate() {
                s += tab.weights[k % nr] * p * q;
            }
            total += self.grid.dt * self.rho[j + 1] * s;
        }
        total
    }

    pub fn control_norm(&self, a: &ControlField) -> f64 {
        self.control_dot(a, a).sqrt()
    }

    /// Per-entry weights of the control inner product, in the data layout.
    pub fn control_weights(&self, region: Region, ncomp: usize) -> Vec<f64> {
        let tab = self.region(region);
        let nr = tab.n_nodes();
        let mut w = Vec::with_capacity(self.n_steps() * ncomp * nr);
        for j in 0..self.n_steps() {
            for _ in 0..ncomp {
                for r in 0..nr {
                    w.push(self.grid.dt * self.rho[j + 1] * tab.weights[r]);
                }
            }
        }
        w
    }

    /// Terminal pairing rho(T) a^T Mass b (the L2 product on the moving domain at T).
    pub fn terminal_dot(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.rho_terminal() * a.dot(&(&self.mass * b))
    }

    pub fn terminal_norm(&self, a: &DVector<f64>) -> f64 {
        self.terminal_dot(a, a).max(0.0).sqrt()
    }

    /// Unweighted L2(Omega)^2 norm of a state vector.
    pub fn l2_norm(&self, a: &DVector<f64>) -> f64 {
        a.dot(&(&self.mass * a)).max(0.0).sqrt()
    }

    pub fn mass_norm(&self, a: &DVector<f64>) -> f64 {
        self.l2_norm(a)
    }

    // --- state-level operations

    pub fn solve_state(&self, controls: &ControlSet, init: &InitialData) -> Trajectory {
        let all: Vec<&ControlField> = controls.iter().collect();
        self.forward(&init.stacked(), &all)
    }

    /// Response to (v_i, u_i) alone from zero data.
    pub fn solve_follower_response(&self, v: &ControlField, u: &ControlField) -> Trajectory {
        self.forward(&DVector::zeros(self.state_dim()), &[v, u])
    }

    /// Leader sources and true initial data, followers off.
    pub fn solve_uncontrolled(&self, f: &ControlField, g: &ControlField, init: &InitialData) -> Trajectory {
        self.forward(&init.stacked(), &[f, g])
    }
}

/// ||S||_1 ||S^{-1}||_1
fn condition_1(s: &DMatrix<f64>) -> f64 {
    let norm1 = |m: &DMatrix<f64>| m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    match s.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => norm1(s) * norm1(&inv),
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(ctx: &Context, region: Region, ncomp: usize, rng: &mut ChaCha8Rng) -> ControlField {
        let mut c = ctx.zero_control(region, ncomp);
        c.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        c
    }

    #[test]
    fn zero_in_zero_out() {
        let ctx = scenario::tiny_context(true);
        let traj = ctx.solve_state(&ctx.zero_controls(), &InitialData::zero(ctx.dim()));
        assert_eq!(traj.max_abs(), 0.0);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let s = scenario::Scenario::tiny();
        let r = Context::new(
            SpectralBasis::new(2).unwrap(),
            s.geometry.clone(),
            s.motion.clone(),
            s.fields.clone(),
            TimeGrid::new(4, 2.0).unwrap(),
            true,
        );
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }

    #[test]
    fn scalar_mode_decays_like_implicit_euler() {
        let s = scenario::Scenario::identity(2, 8);
        let ctx = s.context_with(false).unwrap();
        let d = ctx.dim();
        let b = ctx.basis;
        let a = b.index(1, 2);
        let lam = std::f64::consts::PI.powi(2) * 5.0;
        let mut init = InitialData::zero(d);
        init.w0[a] = 1.0;
        let traj = ctx.solve_state(&ctx.zero_controls(), &init);
        for m in 0..=ctx.n_steps() {
            let want = (1.0 + ctx.grid.dt * lam).powi(-(m as i32));
            // quadrature roundoff in the assembled matrices is about 1e-13
            assert!((traj.w(m)[a] - want).abs() < 1e-10 * want + 1e-15, "step {m}: {} vs {want}", traj.w(m)[a]);
        }
    }

    #[test]
    fn refinement_in_time_is_first_order() {
        // short horizon, so that lambda^2 T dt stays small and the asymptotic rate shows
        let run = |n: usize| {
            let mut s = scenario::Scenario::identity(2, n);
            s.motion = crate::motion::MotionLaw::identity(0.05);
            let ctx = s.context_with(true).unwrap();
            let mut init = InitialData::zero(ctx.dim());
            init.w0[0] = 1.0;
            init.z0[1] = 0.1;
            ctx.solve_state(&ctx.zero_controls(), &init).terminal().clone()
        };
        let (a, b, c) = (run(8), run(16), run(32));
        let e1 = (&a - &b).norm();
        let e2 = (&b - &c).norm();
        assert!(e2 < 0.6 * e1 && e2 > 0.4 * e1, "{e1} {e2}");
    }

    #[test]
    fn follower_response_is_the_restricted_state_solve() {
        let ctx = scenario::tiny_context(true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_field(&ctx, Region::Follower(1), 2, &mut rng);
        let u = random_field(&ctx, Region::Follower(1), 1, &mut rng);
        let mut set = ctx.zero_controls();
        set.v[1] = v.clone();
        set.u[1] = u.clone();
        let a = ctx.solve_follower_response(&v, &u);
        let b = ctx.solve_state(&set, &InitialData::zero(ctx.dim()));
        assert_eq!(a, b);
        let a2 = ctx.solve_follower_response(&v.scaled(2.0), &u.scaled(2.0));
        for m in 0..=ctx.n_steps() {
            assert!((&a2.x[m] - &a.x[m] * 2.0).amax() <= 1e-12 * a.x[m].amax().max(1.0));
        }
        let z = ctx.solve_follower_response(&v.scaled(0.0), &u.scaled(0.0));
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn step_transpose_identity() {
        let ctx = scenario::tiny_context(true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = ctx.state_dim();
        for m in 1..=ctx.n_steps() {
            let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let s = ctx.step_matrix(m);
            let lhs = (s * &a).dot(&b);
            let rhs = a.dot(&(s.transpose() * &b));
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            // the factorized transposed solve really inverts S^T
            let y = ctx.lu_t[m - 1].solve(&b).unwrap();
            assert!((s.transpose() * y - &b).amax() <= 1e-12 * b.amax());
        }
    }

    #[test]
    fn dissipative_without_coupling_and_transport() {
        let s = scenario::Scenario::identity(3, 10);
        let ctx = s.context_with(false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut init = InitialData::zero(ctx.dim());
        init.z0.iter_mut().chain(init.w0.iter_mut()).for_each(|v| *v = rng.random_range(-1.0..1.0));
        let traj = ctx.solve_state(&ctx.zero_controls(), &init);
        for m in 1..=ctx.n_steps() {
            assert!(ctx.mass_norm(&traj.x[m]) <= ctx.mass_norm(&traj.x[m - 1]) * (1.0 + 1e-14));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn superposition_holds(seed in 0u64..1000) {
            let ctx = scenario::tiny_context(true);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = ControlSet {
                f: random_field(&ctx, Region::Leader, 2, &mut rng),
                g: random_field(&ctx, Region::Leader, 1, &mut rng),
                v: [random_field(&ctx, Region::Follower(0), 2, &mut rng), random_field(&ctx, Region::Follower(1), 2, &mut rng)],
                u: [random_field(&ctx, Region::Follower(0), 1, &mut rng), random_field(&ctx, Region::Follower(1), 1, &mut rng)],
            };
            let mut init = InitialData::zero(ctx.dim());
            init.z0.iter_mut().chain(init.w0.iter_mut()).for_each(|v| *v = rng.random_range(-1.0..1.0));
            let full = ctx.solve_state(&set, &init);
            let mut sum = ctx.solve_uncontrolled(&set.f, &set.g, &init);
            for i in 0..2 {
                sum.axpy(1.0, &ctx.solve_follower_response(&set.v[i], &set.u[i]));
            }
            for m in 0..=ctx.n_steps() {
                let scale = full.x[m].amax().max(1e-300);
                prop_assert!((&full.x[m] - &sum.x[m]).amax() <= 1e-10 * scale);
            }
        }

        #[test]
        fn bounded_growth_with_bounded_sources(seed in 0u64..1000) {
            let ctx = scenario::tiny_context(true);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(&ctx, Region::Leader, 2, &mut rng);
            let traj = ctx.forward(&DVector::zeros(ctx.state_dim()), &[&f]);
            // a generous bound: initial norm plus T times the largest source load
            let mut load_max: f64 = 0.0;
            for j in 0..ctx.n_steps() {
                let mut b = DVector::zeros(ctx.state_dim());
                ctx.inject(&f, j, &mut b);
                load_max = load_max.max(b.norm());
            }
            let bound = 1e3 * ctx.grid.t_final * load_max;
            for m in 0..=ctx.n_steps() {
                prop_assert!(ctx.mass_norm(&traj.x[m]) <= bound);
            }
        }
    }
}
