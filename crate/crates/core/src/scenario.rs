//! Ready-made configurations: the reference setup and a tiny instance for dense oracles.

use crate::basis::SpectralBasis;
use crate::error::Result;
use crate::fields::{CoefficientFields, Expr, VelocityExpr};
use crate::functionals::{CostWeights, Problem};
use crate::geometry::{Geometry, QuadSpec, Rect};
use crate::leader::LeaderOptions;
use crate::motion::{MotionKind, MotionLaw};
use crate::state::{Context, InitialData, TimeGrid};
use nalgebra::Matrix2;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub nash_tol: f64,
    pub leader: LeaderOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            nash_tol: crate::nash::DEFAULT_TOL,
            leader: LeaderOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub n_modes: usize,
    pub n_steps: usize,
    pub geometry: Geometry,
    pub motion: MotionLaw,
    pub fields: CoefficientFields,
    pub weights: CostWeights,
    pub init_z: VelocityExpr,
    pub init_w: Expr,
    pub micro: bool,
    pub solver: SolverOptions,
    pub seed: u64,
}

pub fn default_geometry(quad: QuadSpec) -> Geometry {
    Geometry::new(
        Rect::square(0.2, 0.8),
        [Rect::square(0.25, 0.4), Rect::square(0.6, 0.75)],
        [Rect::new(0.1, 0.3, 0.6, 0.9), Rect::new(0.6, 0.9, 0.1, 0.3)],
        quad,
    )
    .expect("reference geometry is valid")
}

pub fn default_motion() -> MotionLaw {
    MotionLaw::new(MotionKind::Affine { a: 1.0, b: 0.5 }, Matrix2::new(1.0, 0.25, 0.25, 1.0), 1.0, 1.0).expect("reference motion is valid")
}

pub fn default_fields() -> CoefficientFields {
    CoefficientFields {
        h: [Expr::sine(0.5, 1.0, 2.0), Expr::sine(-0.3, 2.0, 1.0)],
        theta: Expr::sine(0.4, 1.0, 1.0),
    }
}

pub fn default_weights() -> CostWeights {
    CostWeights {
        z_d: [VelocityExpr::Stream(Expr::sine(0.05, 1.0, 2.0)), VelocityExpr::Stream(Expr::sine(-0.05, 2.0, 1.0))],
        w_d: [Expr::sine(0.2, 1.0, 1.0), Expr::sine(0.1, 1.0, 2.0)],
        z_t: VelocityExpr::Stream(Expr::sine(0.1, 1.0, 1.0)),
        w_t: Expr::sine(1.0, 1.0, 1.0),
        ..CostWeights::default()
    }
}

impl Scenario {
    /// N = 4, 16 steps, affine dilation of a sheared square.
    pub fn default_scenario() -> Self {
        Scenario {
            n_modes: 4,
            n_steps: 16,
            geometry: default_geometry(QuadSpec::for_modes(4)),
            motion: default_motion(),
            fields: default_fields(),
            weights: default_weights(),
            init_z: VelocityExpr::default(),
            init_w: Expr::zero(),
            micro: true,
            solver: SolverOptions::default(),
            seed: crate::nash::DEFAULT_SEED,
        }
    }

    /// N = 2, 4 steps, minimal quadrature.
    pub fn tiny() -> Self {
        Scenario {
            n_modes: 2,
            n_steps: 4,
            geometry: default_geometry(QuadSpec { order: 4, max_cell: 0.25 }),
            ..Self::default_scenario()
        }
    }

    /// Fixed domain, no linearization fields.
    pub fn identity(n_modes: usize, n_steps: usize) -> Self {
        Scenario {
            n_modes,
            n_steps,
            geometry: default_geometry(QuadSpec::for_modes(n_modes)),
            motion: MotionLaw::identity(1.0),
            fields: CoefficientFields::zero(),
            ..Self::default_scenario()
        }
    }

    pub fn context_with(&self, micro: bool) -> Result<Context> {
        Context::new(
            SpectralBasis::new(self.n_modes)?,
            self.geometry.clone(),
            self.motion.clone(),
            self.fields.clone(),
            TimeGrid::new(self.n_steps, self.motion.t_final)?,
            micro,
        )
    }

    pub fn context(&self) -> Result<Context> {
        self.context_with(self.micro)
    }

    pub fn initial_data(&self, ctx: &Context) -> InitialData {
        let tab = &ctx.asm.tables;
        let mut init = InitialData::zero(ctx.dim());
        if !self.init_z.is_zero() {
            init.z0 = tab.project_velocity_expr(&self.init_z, 0.0);
        }
        if !self.init_w.is_zero() {
            init.w0 = tab.project_scalar_expr(&self.init_w, 0.0);
        }
        init
    }

    pub fn problem(&self) -> Result<Problem> {
        let ctx = Arc::new(self.context()?);
        let init = self.initial_data(&ctx);
        Problem::new(ctx, self.weights.clone(), init)
    }
}

/// Tiny context for tests; panics only if the built-in setup is broken.
pub fn tiny_context(micro: bool) -> Context {
    Scenario::tiny().context_with(micro).expect("tiny scenario builds")
}
