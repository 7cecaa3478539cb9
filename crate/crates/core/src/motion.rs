//! Moving-domain law K(t) = k(t) M and the coefficients of the pulled-back system.

use crate::error::{Error, Result};
use crate::fields::Expr;
use nalgebra::{Matrix2, Vector2};

#[derive(Debug, Clone, PartialEq)]
pub enum MotionKind {
    Constant { a: f64 },
    /// k(t) = a + b t
    Affine { a: f64, b: f64 },
    /// k(t) = a exp(b t)
    Exponential { a: f64, b: f64 },
    /// Natural cubic spline through (times, values).
    Spline(CubicSpline),
}

impl MotionKind {
    pub fn name(&self) -> &'static str {
        match self {
            MotionKind::Constant { .. } => "constant",
            MotionKind::Affine { .. } => "affine",
            MotionKind::Exponential { .. } => "exponential",
            MotionKind::Spline(_) => "spline",
        }
    }
}

/// C2 interpolant with vanishing second derivative at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = t.len();
        if n < 2 || y.len() != n {
            return Err(Error::InvalidMotion("spline needs at least two (time, value) samples".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMotion("spline times must be strictly increasing".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second-derivative system.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = t[i + 1] - t[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(CubicSpline { t, y, m })
    }

    /// Value and first two derivatives.
    pub fn eval(&self, s: f64) -> [f64; 3] {
        let n = self.t.len();
        let i = match self.t.partition_point(|&x| x <= s) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let (a, b) = ((t1 - s) / h, (s - t0) / h);
        let (m0, m1, y0, y1) = (self.m[i], self.m[i + 1], self.y[i], self.y[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1;
        let dd = a * m0 + b * m1;
        [v, d, dd]
    }

    pub fn knots(&self) -> &[f64] {
        &self.t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionLaw {
    pub kind: MotionKind,
    pub m: Matrix2<f64>,
    pub t_final: f64,
    pub k0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformCoefficients {
    pub t: f64,
    pub k: f64,
    pub k_prime: f64,
    /// K(t)
    pub alpha: Matrix2<f64>,
    /// K(t)^{-1}
    pub beta: Matrix2<f64>,
    /// K'(t) K(t)^{-1}
    pub drift: Matrix2<f64>,
    /// A_lr = sum_j beta_lj beta_rj
    pub diffusion: Matrix2<f64>,
    /// |det K(t)|
    pub weight: f64,
    /// det(K^{-1}) (K^{-1})^{-T}
    pub cof_inv: Matrix2<f64>,
    pub beta_prime: Matrix2<f64>,
}

impl MotionLaw {
    pub fn new(kind: MotionKind, m: Matrix2<f64>, t_final: f64, k0: f64) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidMotion(format!("final time must be positive, got {t_final}")));
        }
        if !(k0 > 0.0) {
            return Err(Error::InvalidMotion(format!("k0 must be positive, got {k0}")));
        }
        if m.determinant().abs() < 1e-12 {
            return Err(Error::NonInvertible(m.determinant().abs()));
        }
        let law = MotionLaw { kind, m, t_final, k0 };
        let samples = 2000;
        let mut probe: Vec<f64> = (0..=samples).map(|i| t_final * i as f64 / samples as f64).collect();
        if let MotionKind::Spline(s) = &law.kind {
            let (a, b) = (s.knots()[0], *s.knots().last().unwrap());
            if a > 0.0 || b < t_final {
                return Err(Error::InvalidMotion(format!("spline knots [{a},{b}] do not cover [0,{t_final}]")));
            }
            probe.extend(s.knots().iter().copied().filter(|t| *t <= t_final));
        }
        for t in probe {
            let k = law.k(t)[0];
            if !(k >= k0) {
                return Err(Error::InvalidMotion(format!("k({t}) = {k} falls below k0 = {k0}")));
            }
        }
        Ok(law)
    }

    pub fn identity(t_final: f64) -> Self {
        MotionLaw::new(MotionKind::Constant { a: 1.0 }, Matrix2::identity(), t_final, 1.0).unwrap()
    }

    /// k, k', k'' in closed form.
    pub fn k(&self, t: f64) -> [f64; 3] {
        match &self.kind {
            MotionKind::Constant { a } => [*a, 0.0, 0.0],
            MotionKind::Affine { a, b } => [a + b * t, *b, 0.0],
            MotionKind::Exponential { a, b } => {
                let e = a * (b * t).exp();
                [e, b * e, b * b * e]
            }
            MotionKind::Spline(s) => s.eval(t),
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.t_final;
        if !(t >= -slack && t <= self.t_final + slack) {
            return Err(Error::OutOfRange { t, t_final: self.t_final });
        }
        Ok(())
    }

    pub fn coefficients_at(&self, t: f64) -> Result<TransformCoefficients> {
        self.check_time(t)?;
        let det_m = self.m.determinant();
        if det_m.abs() < 1e-12 {
            return Err(Error::NonInvertible(det_m.abs()));
        }
        let [k, kp, _] = self.k(t);
        let m_inv = Matrix2::new(self.m[(1, 1)], -self.m[(0, 1)], -self.m[(1, 0)], self.m[(0, 0)]) / det_m;
        let alpha = self.m * k;
        let beta = m_inv / k;
        let det_beta = beta.determinant();
        // (K^{-1})^{-T} = K^T
        let cof_inv = alpha.transpose() * det_beta;
        Ok(TransformCoefficients {
            t,
            k,
            k_prime: kp,
            alpha,
            beta,
            drift: Matrix2::identity() * (kp / k),
            diffusion: beta * beta.transpose(),
            weight: k * k * det_m.abs(),
            cof_inv,
            beta_prime: -m_inv * (kp / (k * k)),
        })
    }

    /// Point x on the moving domain to y on the reference domain.
    pub fn pull_point(&self, x: [f64; 2], t: f64) -> Result<[f64; 2]> {
        let c = self.coefficients_at(t)?;
        let y = c.beta * Vector2::new(x[0], x[1]);
        Ok([y[0], y[1]])
    }

    pub fn push_point(&self, y: [f64; 2], t: f64) -> Result<[f64; 2]> {
        let c = self.coefficients_at(t)?;
        let x = c.alpha * Vector2::new(y[0], y[1]);
        Ok([x[0], x[1]])
    }
}

/// Field on the moving domain: x -> field(K^{-1}(t) x).
pub fn pushforward_field<'a, F>(field: F, coeffs: &TransformCoefficients) -> impl Fn([f64; 2]) -> f64 + 'a
where
    F: Fn([f64; 2]) -> f64 + 'a,
{
    let beta = coeffs.beta;
    move |x| {
        let y = beta * Vector2::new(x[0], x[1]);
        field([y[0], y[1]])
    }
}

/// Field on the reference domain: y -> field(K(t) y).
pub fn pullback_field<'a, F>(field: F, coeffs: &TransformCoefficients) -> impl Fn([f64; 2]) -> f64 + 'a
where
    F: Fn([f64; 2]) -> f64 + 'a,
{
    let alpha = coeffs.alpha;
    move |y| {
        let x = alpha * Vector2::new(y[0], y[1]);
        field([x[0], x[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRuleReport {
    /// time derivative identity
    pub time: f64,
    /// gradient identity
    pub gradient: f64,
    /// Laplacian identity
    pub laplacian: f64,
    pub max: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares derivatives of x -> z(K^{-1}(t)x, t), taken by finite differences on
/// the moving domain, with the transformed expressions evaluated from the
/// closed-form derivatives of z on a grid of reference points.
pub fn verify_chain_rule(motion: &MotionLaw, field: &Expr, t: f64, h: f64) -> Result<ChainRuleReport> {
    if h > 1e-2 {
        return Err(Error::StepTooLarge(h));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidMotion(format!("step must be positive, got {h}")));
    }
    let c = motion.coefficients_at(t)?;
    let pulled = |x: [f64; 2], s: f64| -> f64 {
        let b = motion.coefficients_at(s).map(|c| c.beta).unwrap_or(c.beta);
        let y = b * Vector2::new(x[0], x[1]);
        field.value([y[0], y[1]], s)
    };
    // keep the time stencil inside [0,T]
    let ts = t.clamp(2.0 * h, motion.t_final - 2.0 * h);
    let c = motion.coefficients_at(ts)?;
    // second differences lose accuracy as h^-2, so they use a wider stencil
    let h2 = (0.1 * h.sqrt()).max(h);
    let d1 = |f: &dyn Fn(f64) -> f64, s: f64| (-f(s + 2.0 * h) + 8.0 * f(s + h) - 8.0 * f(s - h) + f(s - 2.0 * h)) / (12.0 * h);
    let d2 = |f: &dyn Fn(f64) -> f64, s: f64| {
        (-f(s + 2.0 * h2) + 16.0 * f(s + h2) - 30.0 * f(s) + 16.0 * f(s - h2) - f(s - 2.0 * h2)) / (12.0 * h2 * h2)
    };

    let n = 7;
    let (mut e_t, mut e_g, mut e_l) = (0.0f64, 0.0f64, 0.0f64);
    let (mut s_t, mut s_g, mut s_l) = (0.0f64, 0.0f64, 0.0f64);
    for i in 1..=n {
        for j in 1..=n {
            let y = [i as f64 / (n + 1) as f64, j as f64 / (n + 1) as f64];
            let x = {
                let v = c.alpha * Vector2::new(y[0], y[1]);
                [v[0], v[1]]
            };
            let jet = field.jet(y, ts);
            let grad = Vector2::new(jet.g[0], jet.g[1]);

            // d/dt z^(x,t) = -y.K'K^{-1} grad z + z_t, with K'K^{-1} = (k'/k) I
            let rhs_t = -(c.drift * Vector2::new(y[0], y[1])).dot(&grad) + jet.dt;
            let lhs_t = d1(&|s| pulled(x, s), ts);
            e_t = e_t.max((lhs_t - rhs_t).abs());
            s_t = s_t.max(rhs_t.abs());

            // d/dx_j z^ = sum_l beta_lj dz/dy_l
            let rhs_g = c.beta.transpose() * grad;
            for jj in 0..2 {
                let lhs = d1(
                    &|s| {
                        let mut xx = x;
                        xx[jj] = s;
                        pulled(xx, ts)
                    },
                    x[jj],
                );
                e_g = e_g.max((lhs - rhs_g[jj]).abs());
                s_g = s_g.max(rhs_g[jj].abs());
            }

            // Laplacian: sum_{j,l,r} beta_lj beta_rj d2z/dy_l dy_r
            let hess = Matrix2::new(jet.h[0][0], jet.h[0][1], jet.h[1][0], jet.h[1][1]);
            let rhs_l = (c.diffusion.component_mul(&hess)).sum();
            let mut lhs_l = 0.0;
            for jj in 0..2 {
                lhs_l += d2(
                    &|s| {
                        let mut xx = x;
                        xx[jj] = s;
                        pulled(xx, ts)
                    },
                    x[jj],
                );
            }
            e_l = e_l.max((lhs_l - rhs_l).abs());
            s_l = s_l.max(rhs_l.abs());
        }
    }
    let rel = |e: f64, s: f64| e / s.max(1.0);
    let (time, gradient, laplacian) = (rel(e_t, s_t), rel(e_g, s_g), rel(e_l, s_l));
    let max = time.max(gradient).max(laplacian);
    let tolerance = 1e-6f64.max(10.0 * h * h);
    Ok(ChainRuleReport {
        time,
        gradient,
        laplacian,
        max,
        tolerance,
        pass: max <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn affine(a: f64, b: f64, m: Matrix2<f64>) -> MotionLaw {
        MotionLaw::new(MotionKind::Affine { a, b }, m, 2.0, 0.5).unwrap()
    }

    #[test]
    fn identity_coefficients() {
        let c = MotionLaw::identity(1.0).coefficients_at(0.3).unwrap();
        assert_eq!(c.beta, Matrix2::identity());
        assert_eq!(c.drift, Matrix2::zeros());
        assert_eq!(c.diffusion, Matrix2::identity());
        assert_eq!(c.weight, 1.0);
        assert_eq!(c.cof_inv, Matrix2::identity());
    }

    #[test]
    fn affine_growth_at_two() {
        let c = affine(1.0, 0.5, Matrix2::identity()).coefficients_at(2.0).unwrap();
        assert_relative_eq!(c.drift, Matrix2::identity() * 0.25, epsilon = 1e-15);
        assert_relative_eq!(c.diffusion, Matrix2::identity() * 0.25, epsilon = 1e-15);
        assert_relative_eq!(c.weight, 4.0, epsilon = 1e-15);
    }

    #[test]
    fn anisotropic_matrix() {
        let law = MotionLaw::new(MotionKind::Constant { a: 1.0 }, Matrix2::new(2.0, 0.0, 0.0, 1.0), 1.0, 1.0).unwrap();
        let c = law.coefficients_at(0.7).unwrap();
        assert_relative_eq!(c.diffusion, Matrix2::new(0.25, 0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(c.weight, 2.0);
        assert_relative_eq!(c.beta, Matrix2::new(0.5, 0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn errors() {
        let law = MotionLaw::identity(1.0);
        assert!(matches!(law.coefficients_at(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(law.coefficients_at(-0.1), Err(Error::OutOfRange { .. })));
        let sing = MotionLaw::new(MotionKind::Constant { a: 1.0 }, Matrix2::new(1.0, 2.0, 2.0, 4.0), 1.0, 1.0);
        assert!(matches!(sing, Err(Error::NonInvertible(_))));
        let low = MotionLaw::new(MotionKind::Affine { a: 1.0, b: -0.9 }, Matrix2::identity(), 1.0, 0.5);
        assert!(matches!(low, Err(Error::InvalidMotion(_))));
        let f = Expr::sine(1.0, 1.0, 1.0);
        assert!(matches!(verify_chain_rule(&law, &f, 0.5, 0.1), Err(Error::StepTooLarge(_))));
    }

    #[test]
    fn push_and_pull_scalar_fields() {
        let law = MotionLaw::new(MotionKind::Constant { a: 2.0 }, Matrix2::identity(), 1.0, 1.0).unwrap();
        let c = law.coefficients_at(0.0).unwrap();
        let pushed = pushforward_field(|y: [f64; 2]| y[0], &c);
        assert_relative_eq!(pushed([0.8, 0.3]), 0.4);
        let constant = pushforward_field(|_| 3.5, &c);
        assert_eq!(constant([1.7, -0.2]), 3.5);
        let id = MotionLaw::identity(1.0).coefficients_at(0.0).unwrap();
        let same = pushforward_field(|y: [f64; 2]| y[0] * y[1], &id);
        assert_eq!(same([0.3, 0.6]), 0.3 * 0.6);
    }

    #[test]
    fn spline_reproduces_cubic_data_shape() {
        let t: Vec<f64> = (0..=8).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = t.iter().map(|s| 1.0 + 0.3 * s).collect();
        let sp = CubicSpline::natural(t, y).unwrap();
        let [v, d, dd] = sp.eval(0.8);
        assert_relative_eq!(v, 1.24, epsilon = 1e-14);
        assert_relative_eq!(d, 0.3, epsilon = 1e-13);
        assert!(dd.abs() < 1e-12);
    }

    #[test]
    fn spline_is_c2_at_knots() {
        let t: Vec<f64> = (0..=5).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|s: &f64| 1.0 + s.sin()).collect();
        let sp = CubicSpline::natural(t.clone(), y).unwrap();
        for k in &t[1..t.len() - 1] {
            let l = sp.eval(k - 1e-12);
            let r = sp.eval(k + 1e-12);
            for q in 0..3 {
                assert!((l[q] - r[q]).abs() < 1e-9, "derivative {q} jumps at {k}");
            }
        }
    }

    #[test]
    fn chain_rule_identity_motion_polynomial() {
        let law = MotionLaw::identity(1.0);
        let f = Expr::parse("y1^2*y2 + 3*t*y2").unwrap();
        let r = verify_chain_rule(&law, &f, 0.5, 1e-3).unwrap();
        assert!(r.max < 1e-9, "{r:?}");
    }

    #[test]
    fn chain_rule_affine_sine() {
        let law = MotionLaw::new(MotionKind::Affine { a: 1.0, b: 0.5 }, Matrix2::identity(), 1.0, 1.0).unwrap();
        let f = Expr::parse("sin(1,1)*exp(t)").unwrap();
        let r = verify_chain_rule(&law, &f, 0.5, 1e-4).unwrap();
        assert!(r.pass && r.max <= 1e-6, "{r:?}");
    }

    #[test]
    fn chain_rule_exponential_affine_field() {
        let law = MotionLaw::new(MotionKind::Exponential { a: 1.0, b: 1.0 }, Matrix2::identity(), 1.0, 1.0).unwrap();
        let f = Expr::parse("y1 + t").unwrap();
        let r = verify_chain_rule(&law, &f, 0.5, 1e-4).unwrap();
        assert!(r.time <= 1e-8, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn coefficient_invariants(a in 0.5f64..2.0, b in -0.2f64..1.0, t in 0.0f64..1.0,
                                  m00 in 0.5f64..2.0, m01 in -0.4f64..0.4, m10 in -0.4f64..0.4, m11 in 0.5f64..2.0) {
            let m = Matrix2::new(m00, m01, m10, m11);
            let law = MotionLaw::new(MotionKind::Affine { a, b }, m, 1.0, 0.2).unwrap();
            let c = law.coefficients_at(t).unwrap();
            prop_assert!((c.beta * c.alpha - Matrix2::identity()).abs().max() < 1e-12);
            prop_assert!((c.weight - c.k * c.k * m.determinant().abs()).abs() < 1e-12);
            prop_assert!((c.drift - Matrix2::identity() * (b / (a + b * t))).abs().max() < 1e-14);
            let m_inv = m.try_inverse().unwrap();
            prop_assert!((c.diffusion - m_inv * m_inv.transpose() / (c.k * c.k)).abs().max() < 1e-12);
            let eig = c.diffusion.symmetric_eigen().eigenvalues;
            let sv = m.singular_values();
            let kmax = a.max(a + b);
            let kmin = a.min(a + b);
            let lo = 1.0 / (kmax * kmax * sv.max() * sv.max());
            let hi = 1.0 / (kmin * kmin * sv.min() * sv.min());
            prop_assert!(eig.min() >= lo * (1.0 - 1e-12) && eig.max() <= hi * (1.0 + 1e-12));
            // beta' matches the derivative of (1/k) M^{-1}
            prop_assert!((c.beta_prime + m_inv * (b / (c.k * c.k))).abs().max() < 1e-12);
        }

        #[test]
        fn pull_then_push_is_identity(x in -1.0f64..2.0, y in -1.0f64..2.0, t in 0.0f64..1.0) {
            let law = MotionLaw::new(MotionKind::Exponential { a: 1.0, b: 0.3 }, Matrix2::new(1.0, 0.25, 0.25, 1.0), 1.0, 1.0).unwrap();
            let c = law.coefficients_at(t).unwrap();
            let g = |p: [f64; 2]| (p[0] * 1.3).sin() + p[1] * p[1];
            let back = pullback_field(pushforward_field(g, &c), &c);
            prop_assert!((back([x, y]) - g([x, y])).abs() < 1e-12);
            let q = law.push_point(law.pull_point([x, y], t).unwrap(), t).unwrap();
            prop_assert!((q[0] - x).abs() < 1e-13 && (q[1] - y).abs() < 1e-13);
        }
    }
}
