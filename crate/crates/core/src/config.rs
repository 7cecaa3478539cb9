//! Strict TOML run configuration. Unknown keys are errors.

use crate::error::{Error, Result};
use crate::fields::{CoefficientFields, Expr, VelocityExpr};
use crate::functionals::CostWeights;
use crate::geometry::{Geometry, QuadSpec, Rect};
use crate::leader::LeaderOptions;
use crate::motion::{CubicSpline, MotionKind, MotionLaw};
use crate::scenario::{Scenario, SolverOptions};
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub geometry: GeometrySection,
    pub motion: MotionSection,
    pub discretization: DiscretizationSection,
    pub fields: FieldsSection,
    pub weights: WeightsSection,
    pub targets: TargetsSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    crate::nash::DEFAULT_SEED
}

/// Rectangles as [x0, x1, y0, y1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub leader: [f64; 4],
    pub follower: [[f64; 4]; 2],
    pub observation: [[f64; 4]; 2],
    /// Gauss points per cell; defaults to 2N + 2
    pub quad_order: Option<usize>,
    #[serde(default = "default_max_cell")]
    pub max_cell: f64,
}

fn default_max_cell() -> f64 {
    QuadSpec::default().max_cell
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    /// constant | affine | exponential | spline
    pub kind: String,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub knots: Option<Vec<f64>>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    pub matrix: [[f64; 2]; 2],
    pub t_final: f64,
    #[serde(default = "one")]
    pub k0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    pub modes: usize,
    pub n_steps: usize,
    #[serde(default = "yes")]
    pub micro_coupling: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsSection {
    pub h: [String; 2],
    pub theta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub alpha: [f64; 2],
    pub mu: [f64; 2],
    pub alpha_tilde: [f64; 2],
    pub mu_tilde: [f64; 2],
    pub eps: f64,
}

/// A velocity given by a stream function or by its two components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySpec {
    pub stream: Option<String>,
    pub components: Option<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsSection {
    pub z_d: [VelocitySpec; 2],
    pub w_d: [String; 2],
    pub z_t: VelocitySpec,
    pub w_t: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub z0: VelocitySpec,
    pub w0: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub nash_tol: f64,
    pub leader_tol: f64,
    pub leader_max_iter: usize,
    pub coupled_tol: f64,
    pub coupled_max_iter: usize,
    pub leader_nash_tol: f64,
    pub delta: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let l = LeaderOptions::default();
        SolverSection {
            nash_tol: crate::nash::DEFAULT_TOL,
            leader_tol: l.tol,
            leader_max_iter: l.max_iter,
            coupled_tol: l.coupled_tol,
            coupled_max_iter: l.coupled_max_iter,
            leader_nash_tol: l.nash_tol,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

fn rect(key: &str, r: [f64; 4]) -> Result<Rect> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(key, "coordinates must be finite"));
    }
    Ok(Rect::new(r[0], r[1], r[2], r[3]))
}

fn expr(key: &str, s: &str) -> Result<Expr> {
    Expr::parse(s).map_err(|e| Error::config(key, e.to_string()))
}

fn velocity(key: &str, v: &VelocitySpec) -> Result<VelocityExpr> {
    match (&v.stream, &v.components) {
        (Some(s), None) => Ok(VelocityExpr::Stream(expr(&format!("{key}.stream"), s)?)),
        (None, Some([a, b])) => Ok(VelocityExpr::Components([expr(&format!("{key}.components"), a)?, expr(&format!("{key}.components"), b)?])),
        (None, None) => Ok(VelocityExpr::default()),
        (Some(_), Some(_)) => Err(Error::config(key, "give either `stream` or `components`, not both")),
    }
}

impl RunConfig {
    pub fn parse(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "<root>".into()));
            Error::config(key, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::parse(&src)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let g = &self.geometry;
        let d = &self.discretization;
        if d.modes == 0 || d.modes > 32 {
            return Err(Error::config("discretization.modes", format!("must lie in 1..=32, got {}", d.modes)));
        }
        if d.n_steps == 0 {
            return Err(Error::config("discretization.n_steps", "must be at least 1"));
        }
        let quad = QuadSpec {
            order: g.quad_order.unwrap_or(2 * d.modes + 2),
            max_cell: g.max_cell,
        };
        let geometry = Geometry::new(
            rect("geometry.leader", g.leader)?,
            [rect("geometry.follower", g.follower[0])?, rect("geometry.follower", g.follower[1])?],
            [rect("geometry.observation", g.observation[0])?, rect("geometry.observation", g.observation[1])?],
            quad,
        )
        .map_err(|e| Error::config("geometry", e.to_string()))?;

        let m = &self.motion;
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| Error::config(format!("motion.{k}"), format!("required for kind `{}`", m.kind)));
        let kind = match m.kind.as_str() {
            "constant" => MotionKind::Constant { a: need(m.a, "a")? },
            "affine" => MotionKind::Affine { a: need(m.a, "a")?, b: need(m.b, "b")? },
            "exponential" => MotionKind::Exponential { a: need(m.a, "a")?, b: need(m.b, "b")? },
            "spline" => {
                let (t, y) = match (&m.knots, &m.values) {
                    (Some(t), Some(y)) => (t.clone(), y.clone()),
                    _ => return Err(Error::config("motion.knots", "spline needs `knots` and `values`")),
                };
                MotionKind::Spline(CubicSpline::natural(t, y).map_err(|e| Error::config("motion.knots", e.to_string()))?)
            }
            other => return Err(Error::config("motion.kind", format!("unknown kind `{other}`"))),
        };
        let mat = Matrix2::new(m.matrix[0][0], m.matrix[0][1], m.matrix[1][0], m.matrix[1][1]);
        let motion = MotionLaw::new(kind, mat, m.t_final, m.k0).map_err(|e| Error::config("motion", e.to_string()))?;

        let fields = CoefficientFields {
            h: [expr("fields.h", &self.fields.h[0])?, expr("fields.h", &self.fields.h[1])?],
            theta: expr("fields.theta", &self.fields.theta)?,
        };
        let w = &self.weights;
        let t = &self.targets;
        let weights = CostWeights {
            alpha: w.alpha,
            mu: w.mu,
            alpha_tilde: w.alpha_tilde,
            mu_tilde: w.mu_tilde,
            eps: w.eps,
            z_d: [velocity("targets.z_d", &t.z_d[0])?, velocity("targets.z_d", &t.z_d[1])?],
            w_d: [expr("targets.w_d", &t.w_d[0])?, expr("targets.w_d", &t.w_d[1])?],
            z_t: velocity("targets.z_t", &t.z_t)?,
            w_t: expr("targets.w_t", &t.w_t)?,
        };
        weights.validate()?;
        let s = &self.solver;
        for (k, v) in [("solver.nash_tol", s.nash_tol), ("solver.leader_tol", s.leader_tol), ("solver.coupled_tol", s.coupled_tol), ("solver.leader_nash_tol", s.leader_nash_tol)] {
            if !(v > 0.0) {
                return Err(Error::config(k, "must be positive"));
            }
        }
        let solver = SolverOptions {
            nash_tol: s.nash_tol,
            leader: LeaderOptions {
                delta: s.delta,
                tol: s.leader_tol,
                max_iter: s.leader_max_iter,
                coupled_tol: s.coupled_tol,
                coupled_max_iter: s.coupled_max_iter,
                nash_tol: s.leader_nash_tol,
            },
        };
        Ok(Scenario {
            n_modes: d.modes,
            n_steps: d.n_steps,
            geometry,
            motion,
            fields,
            weights,
            init_z: velocity("initial.z0", &self.initial.z0)?,
            init_w: match &self.initial.w0 {
                Some(s) => expr("initial.w0", s)?,
                None => Expr::zero(),
            },
            micro: d.micro_coupling,
            solver,
            seed: self.seed,
        })
    }
}

/// The shipped reference configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn shipped_config_is_the_reference_scenario() {
        let cfg = RunConfig::parse(DEFAULT_CONFIG).unwrap();
        let s = cfg.scenario().unwrap();
        let r = Scenario::default_scenario();
        assert_eq!(s.n_modes, r.n_modes);
        assert_eq!(s.n_steps, r.n_steps);
        assert_eq!(s.geometry.o_leader, r.geometry.o_leader);
        assert_eq!(s.geometry.o_follower, r.geometry.o_follower);
        assert_eq!(s.geometry.o_obs, r.geometry.o_obs);
        assert_eq!(s.geometry.quad, r.geometry.quad);
        assert_eq!(s.motion, r.motion);
        assert_eq!(s.fields, r.fields);
        assert_eq!(s.weights, r.weights);
        assert_eq!(s.micro, r.micro);
        assert_eq!(s.seed, r.seed);
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let src = DEFAULT_CONFIG.replace("[weights]", "[weights]\ngamma = 2.0");
        match RunConfig::parse(&src) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "gamma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_section_is_an_error() {
        let src = DEFAULT_CONFIG.replace("[discretization]", "[discretisation]");
        assert!(matches!(RunConfig::parse(&src), Err(Error::Config { .. })));
    }

    #[test]
    fn semantic_errors_name_the_key() {
        let mut cfg = RunConfig::parse(DEFAULT_CONFIG).unwrap();
        cfg.motion.kind = "wobble".into();
        match cfg.scenario() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "motion.kind"),
            other => panic!("{other:?}"),
        }
        let mut cfg = RunConfig::parse(DEFAULT_CONFIG).unwrap();
        cfg.fields.theta = "sin(1,".into();
        assert!(matches!(cfg.scenario(), Err(Error::Config { key, .. }) if key == "fields.theta"));
        let mut cfg = RunConfig::parse(DEFAULT_CONFIG).unwrap();
        cfg.weights.mu[0] = -1.0;
        assert!(matches!(cfg.scenario(), Err(Error::Config { key, .. }) if key == "weights.mu"));
        let mut cfg = RunConfig::parse(DEFAULT_CONFIG).unwrap();
        cfg.targets.z_t.components = Some(["1".into(), "0".into()]);
        assert!(matches!(cfg.scenario(), Err(Error::Config { key, .. }) if key == "targets.z_t"));
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = RunConfig::parse(DEFAULT_CONFIG).unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }
}
