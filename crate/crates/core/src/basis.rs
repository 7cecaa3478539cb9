//! Divergence-free sine Galerkin space and quadrature assembly.
//!
//! Scalar modes are phi_kl = sin(k pi y1) sin(l pi y2); velocity modes are
//! theta_kl = M psi_kl with psi_kl = (d2 phi_kl, -d1 phi_kl). Index a = (k-1) N + (l-1).

use crate::error::{Error, Result};
use crate::fields::{CoefficientFields, Expr, VelocityExpr};
use crate::geometry::{Geometry, Region};
use crate::motion::{MotionLaw, TransformCoefficients};
use nalgebra::{DMatrix, DVector, Matrix2};
use std::f64::consts::PI;

pub const MAX_MODES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralBasis {
    pub n_modes: usize,
}

impl SpectralBasis {
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes == 0 || n_modes > MAX_MODES {
            return Err(Error::Size(n_modes));
        }
        Ok(SpectralBasis { n_modes })
    }

    pub fn dim(&self) -> usize {
        self.n_modes * self.n_modes
    }

    pub fn mode(&self, a: usize) -> (usize, usize) {
        (a / self.n_modes + 1, a % self.n_modes + 1)
    }

    pub fn index(&self, k: usize, l: usize) -> usize {
        (k - 1) * self.n_modes + (l - 1)
    }

    /// phi_a and its first and second derivatives: [v, d1, d2, d11, d12, d22].
    pub fn phi(&self, a: usize, y: [f64; 2]) -> [f64; 6] {
        let (k, l) = self.mode(a);
        let (wk, wl) = (k as f64 * PI, l as f64 * PI);
        let (s1, c1) = (wk * y[0]).sin_cos();
        let (s2, c2) = (wl * y[1]).sin_cos();
        [
            s1 * s2,
            wk * c1 * s2,
            wl * s1 * c2,
            -wk * wk * s1 * s2,
            wk * wl * c1 * c2,
            -wl * wl * s1 * s2,
        ]
    }

    /// psi_a = curl phi_a.
    pub fn psi(&self, a: usize, y: [f64; 2]) -> [f64; 2] {
        let p = self.phi(a, y);
        [p[2], -p[1]]
    }

    pub fn eval_scalar(&self, c: &DVector<f64>, y: [f64; 2]) -> f64 {
        (0..self.dim()).map(|a| c[a] * self.phi(a, y)[0]).sum()
    }

    /// z = M sum_a c_a psi_a
    pub fn eval_velocity(&self, c: &DVector<f64>, m: &Matrix2<f64>, y: [f64; 2]) -> [f64; 2] {
        let mut z = [0.0; 2];
        for a in 0..self.dim() {
            let p = self.psi(a, y);
            z[0] += c[a] * p[0];
            z[1] += c[a] * p[1];
        }
        [m[(0, 0)] * z[0] + m[(0, 1)] * z[1], m[(1, 0)] * z[0] + m[(1, 1)] * z[1]]
    }
}

/// Basis functions and derivatives tabulated at every quadrature node.
#[derive(Debug, Clone)]
pub struct Tables {
    pub basis: SpectralBasis,
    pub m: Matrix2<f64>,
    pub weights: DVector<f64>,
    /// node coordinates
    pub y: [DVector<f64>; 2],
    /// phi, d1 phi, d2 phi
    pub p: DMatrix<f64>,
    pub d: [DMatrix<f64>; 2],
    /// components of theta = M psi
    pub v: [DMatrix<f64>; 2],
    /// g[i][l] = d theta_i / d y_l
    pub g: [[DMatrix<f64>; 2]; 2],
    pub mass_v: DMatrix<f64>,
    pub mass_w: DMatrix<f64>,
    mass_v_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// x^T diag(c) y
fn gram(x: &DMatrix<f64>, y: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let mut sy = y.clone();
    for (mut col, _) in sy.column_iter_mut().zip(0..) {
        col.component_mul_assign(c);
    }
    x.tr_mul(&sy)
}

impl Tables {
    pub fn new(basis: SpectralBasis, geometry: &Geometry, m: &Matrix2<f64>) -> Result<Self> {
        let n = basis.n_modes;
        if geometry.quad.order < n + 2 {
            return Err(Error::QuadratureOrder {
                order: geometry.quad.order,
                min: n + 2,
            });
        }
        let x = geometry.nodes1d();
        let n1 = x.len();
        let np = geometry.n_nodes();
        let dim = basis.dim();
        // 1D sine tables: s[k][i] = sin(k pi x_i), c = k pi cos, ss = -(k pi)^2 sin
        let mut s = vec![vec![0.0; n1]; n];
        let mut c = vec![vec![0.0; n1]; n];
        for k in 0..n {
            let w = (k + 1) as f64 * PI;
            for i in 0..n1 {
                let (sn, cs) = (w * x[i]).sin_cos();
                s[k][i] = sn;
                c[k][i] = w * cs;
            }
        }
        let mut p = DMatrix::zeros(np, dim);
        let mut d1 = DMatrix::zeros(np, dim);
        let mut d2 = DMatrix::zeros(np, dim);
        let mut d11 = DMatrix::zeros(np, dim);
        let mut d12 = DMatrix::zeros(np, dim);
        let mut d22 = DMatrix::zeros(np, dim);
        for a in 0..dim {
            let (k, l) = (a / n, a % n);
            let (wk2, wl2) = (((k + 1) as f64 * PI).powi(2), ((l + 1) as f64 * PI).powi(2));
            for i in 0..n1 {
                for j in 0..n1 {
                    let q = i * n1 + j;
                    p[(q, a)] = s[k][i] * s[l][j];
                    d1[(q, a)] = c[k][i] * s[l][j];
                    d2[(q, a)] = s[k][i] * c[l][j];
                    d11[(q, a)] = -wk2 * s[k][i] * s[l][j];
                    d12[(q, a)] = c[k][i] * c[l][j];
                    d22[(q, a)] = -wl2 * s[k][i] * s[l][j];
                }
            }
        }
        // psi = (d2, -d1); d_l psi_1 = d2l, d_l psi_2 = -d1l
        let psi = [d2.clone(), -&d1];
        let dpsi = [[d12.clone(), d22.clone()], [-&d11, -&d12]];
        let v = [
            &psi[0] * m[(0, 0)] + &psi[1] * m[(0, 1)],
            &psi[0] * m[(1, 0)] + &psi[1] * m[(1, 1)],
        ];
        let g = [
            [
                &dpsi[0][0] * m[(0, 0)] + &dpsi[1][0] * m[(0, 1)],
                &dpsi[0][1] * m[(0, 0)] + &dpsi[1][1] * m[(0, 1)],
            ],
            [
                &dpsi[0][0] * m[(1, 0)] + &dpsi[1][0] * m[(1, 1)],
                &dpsi[0][1] * m[(1, 0)] + &dpsi[1][1] * m[(1, 1)],
            ],
        ];
        let weights = DVector::from_vec(geometry.weights());
        let y = [
            DVector::from_fn(np, |q, _| geometry.node(q).0),
            DVector::from_fn(np, |q, _| geometry.node(q).1),
        ];
        let mass_v = gram(&v[0], &v[0], &weights) + gram(&v[1], &v[1], &weights);
        let mass_w = gram(&p, &p, &weights);
        let mass_v_lu = mass_v.clone().lu();
        Ok(Tables {
            basis,
            m: *m,
            weights,
            y,
            p,
            d: [d1, d2],
            v,
            g,
            mass_v,
            mass_w,
            mass_v_lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn gram(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
        let wc = self.weights.component_mul(c);
        gram(x, y, &wc)
    }

    fn gram_w(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        gram(x, y, &self.weights)
    }

    /// L2 projection of a scalar function onto span{phi_a}.
    pub fn project_scalar<F: Fn([f64; 2]) -> f64>(&self, f: F) -> DVector<f64> {
        let vals = DVector::from_fn(self.n_nodes(), |q, _| f([self.y[0][q], self.y[1][q]]) * self.weights[q]);
        // mass_w is diagonal 1/4 up to quadrature error; solve anyway
        let rhs = self.p.tr_mul(&vals);
        self.mass_w.clone().lu().solve(&rhs).expect("scalar mass matrix is SPD")
    }

    /// L2 projection of a velocity field onto span{M psi_a}.
    pub fn project_velocity<F: Fn([f64; 2]) -> [f64; 2]>(&self, f: F) -> DVector<f64> {
        let mut rhs = DVector::zeros(self.dim());
        for q in 0..self.n_nodes() {
            let z = f([self.y[0][q], self.y[1][q]]);
            let w = self.weights[q];
            for a in 0..self.dim() {
                rhs[a] += w * (z[0] * self.v[0][(q, a)] + z[1] * self.v[1][(q, a)]);
            }
        }
        self.mass_v_lu.solve(&rhs).expect("velocity mass matrix is SPD")
    }

    pub fn project_velocity_expr(&self, e: &VelocityExpr, t: f64) -> DVector<f64> {
        self.project_velocity(|y| e.value(y, t, &self.m))
    }

    pub fn project_scalar_expr(&self, e: &Expr, t: f64) -> DVector<f64> {
        self.project_scalar(|y| e.value(y, t))
    }

    /// Values at arbitrary points.
    pub fn evaluate_scalar(&self, c: &DVector<f64>, points: &[[f64; 2]]) -> Vec<f64> {
        points.iter().map(|y| self.basis.eval_scalar(c, *y)).collect()
    }

    pub fn evaluate_velocity(&self, c: &DVector<f64>, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        points.iter().map(|y| self.basis.eval_velocity(c, &self.m, *y)).collect()
    }

    pub fn mass_v_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.mass_v_lu.solve(b).expect("velocity mass matrix is SPD")
    }
}

/// Operators of the pulled-back system at one instant. Matrices act on
/// coefficient vectors; row = test mode, column = trial mode.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub t: f64,
    pub coeffs: TransformCoefficients,
    pub mass_v: DMatrix<f64>,
    pub mass_w: DMatrix<f64>,
    pub stiff_v: DMatrix<f64>,
    pub stiff_w: DMatrix<f64>,
    pub drift_v: DMatrix<f64>,
    pub drift_w: DMatrix<f64>,
    pub adv_v: DMatrix<f64>,
    pub adv_w: DMatrix<f64>,
    pub lin_v: DMatrix<f64>,
    pub lin_w: DMatrix<f64>,
    /// cof(K^{-1}) curl w tested against velocity modes
    pub curl_wv: DMatrix<f64>,
    /// transformed rot z tested against scalar modes
    pub curl_zw: DMatrix<f64>,
    /// transport of the test function by K^{-1} h, with a minus sign
    pub dsym_v: DMatrix<f64>,
}

impl DiscreteOperators {
    /// Block operator K with M x' + K x = sources; `micro` toggles the curl coupling.
    pub fn system(&self, micro: bool) -> DMatrix<f64> {
        let n = self.mass_v.nrows();
        let mut k = DMatrix::zeros(2 * n, 2 * n);
        k.view_mut((0, 0), (n, n))
            .copy_from(&(&self.stiff_v + &self.drift_v + &self.adv_v + &self.lin_v));
        k.view_mut((n, n), (n, n))
            .copy_from(&(&self.stiff_w + &self.drift_w + &self.adv_w));
        let mut lower = self.lin_w.clone();
        if micro {
            k.view_mut((0, n), (n, n)).copy_from(&(-&self.curl_wv));
            lower -= &self.curl_zw;
        }
        k.view_mut((n, 0), (n, n)).copy_from(&lower);
        k
    }

    pub fn mass(&self) -> DMatrix<f64> {
        let n = self.mass_v.nrows();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.mass_v);
        m.view_mut((n, n), (n, n)).copy_from(&self.mass_w);
        m
    }
}

/// Time-independent pieces of the assembly; `assemble` only scales and adds
/// them and integrates the coefficient fields.
#[derive(Debug, Clone)]
pub struct Assembler {
    pub tables: Tables,
    motion: MotionLaw,
    fields: CoefficientFields,
    /// sum_i G_il^T W G_ir
    stiff_v_lr: [[DMatrix<f64>; 2]; 2],
    stiff_w_lr: [[DMatrix<f64>; 2]; 2],
    /// -(y.grad) templates
    drift_v0: DMatrix<f64>,
    drift_w0: DMatrix<f64>,
    /// V_i^T W curl_k
    curl_ik: [[DMatrix<f64>; 2]; 2],
    /// P^T W G_il
    pg: [[DMatrix<f64>; 2]; 2],
}

impl Assembler {
    pub fn new(basis: SpectralBasis, geometry: &Geometry, motion: &MotionLaw, fields: &CoefficientFields) -> Result<Self> {
        let tables = Tables::new(basis, geometry, &motion.m)?;
        let t = &tables;
        let stiff_v_lr = [0, 1].map(|l| [0, 1].map(|r| t.gram_w(&t.g[0][l], &t.g[0][r]) + t.gram_w(&t.g[1][l], &t.g[1][r])));
        let stiff_w_lr = [0, 1].map(|l| [0, 1].map(|r| t.gram_w(&t.d[l], &t.d[r])));
        let mut drift_v0 = DMatrix::zeros(t.dim(), t.dim());
        let mut drift_w0 = DMatrix::zeros(t.dim(), t.dim());
        for l in 0..2 {
            for i in 0..2 {
                drift_v0 -= t.gram(&t.v[i], &t.g[i][l], &t.y[l]);
            }
            drift_w0 -= t.gram(&t.p, &t.d[l], &t.y[l]);
        }
        let curl = [t.d[1].clone(), -&t.d[0]];
        let curl_ik = [0, 1].map(|i| [0, 1].map(|k| t.gram_w(&t.v[i], &curl[k])));
        let pg = [0, 1].map(|i| [0, 1].map(|l| t.gram_w(&t.p, &t.g[i][l])));
        Ok(Assembler {
            tables,
            motion: motion.clone(),
            fields: fields.clone(),
            stiff_v_lr,
            stiff_w_lr,
            drift_v0,
            drift_w0,
            curl_ik,
            pg,
        })
    }

    pub fn motion(&self) -> &MotionLaw {
        &self.motion
    }

    pub fn fields(&self) -> &CoefficientFields {
        &self.fields
    }

    pub fn assemble(&self, t: f64) -> Result<DiscreteOperators> {
        let c = self.motion.coefficients_at(t)?;
        let tb = &self.tables;
        let dim = tb.dim();
        let np = tb.n_nodes();
        let a = c.diffusion;
        let beta = c.beta;
        let mut stiff_v = DMatrix::zeros(dim, dim);
        let mut stiff_w = DMatrix::zeros(dim, dim);
        for l in 0..2 {
            for r in 0..2 {
                stiff_v += &self.stiff_v_lr[l][r] * a[(l, r)];
                stiff_w += &self.stiff_w_lr[l][r] * a[(l, r)];
            }
        }
        let rate = c.k_prime / c.k;
        let drift_v = &self.drift_v0 * rate;
        let drift_w = &self.drift_w0 * rate;

        let mut curl_wv = DMatrix::zeros(dim, dim);
        for i in 0..2 {
            for k in 0..2 {
                curl_wv += &self.curl_ik[i][k] * c.cof_inv[(i, k)];
            }
        }
        // sum_i beta_ii rot z + sum_ij (-1)^(j+1) beta_ij d z_i / d y_(3-j)
        let rot = &self.pg[1][0] - &self.pg[0][1];
        let mut curl_zw = rot * (beta[(0, 0)] + beta[(1, 1)]);
        for i in 0..2 {
            for j in 0..2 {
                let sign = if j == 0 { 1.0 } else { -1.0 };
                curl_zw += &self.pg[i][1 - j] * (sign * beta[(i, j)]);
            }
        }

        let zeros = || DMatrix::zeros(dim, dim);
        let (mut adv_v, mut adv_w, mut lin_v, mut lin_w, mut dsym_v) = (zeros(), zeros(), zeros(), zeros(), zeros());
        let h = &self.fields.h;
        if !(h[0].is_zero() && h[1].is_zero()) {
            let mut bh = [DVector::zeros(np), DVector::zeros(np)];
            let mut dh = [[DVector::zeros(np), DVector::zeros(np)], [DVector::zeros(np), DVector::zeros(np)]];
            for q in 0..np {
                let y = [tb.y[0][q], tb.y[1][q]];
                let j0 = h[0].jet(y, t);
                let j1 = h[1].jet(y, t);
                bh[0][q] = beta[(0, 0)] * j0.v + beta[(0, 1)] * j1.v;
                bh[1][q] = beta[(1, 0)] * j0.v + beta[(1, 1)] * j1.v;
                for l in 0..2 {
                    dh[0][l][q] = j0.g[l];
                    dh[1][l][q] = j1.g[l];
                }
            }
            for l in 0..2 {
                for i in 0..2 {
                    adv_v += tb.gram(&tb.v[i], &tb.g[i][l], &bh[l]);
                }
                adv_w += tb.gram(&tb.p, &tb.d[l], &bh[l]);
            }
            // transport of the test side, assembled on its own as a cross-check of adv_v
            for l in 0..2 {
                for i in 0..2 {
                    dsym_v -= tb.gram(&tb.g[i][l], &tb.v[i], &bh[l]).transpose();
                }
            }
            // ((K^{-1} z) . grad) h
            for i in 0..2 {
                for l in 0..2 {
                    for j in 0..2 {
                        if beta[(l, j)] != 0.0 {
                            lin_v += tb.gram(&tb.v[i], &tb.v[j], &dh[i][l]) * beta[(l, j)];
                        }
                    }
                }
            }
        }
        if !self.fields.theta.is_zero() {
            let mut dth = [DVector::zeros(np), DVector::zeros(np)];
            for q in 0..np {
                let g = self.fields.theta.jet([tb.y[0][q], tb.y[1][q]], t).g;
                dth[0][q] = g[0];
                dth[1][q] = g[1];
            }
            for l in 0..2 {
                for j in 0..2 {
                    if beta[(l, j)] != 0.0 {
                        lin_w += tb.gram(&tb.p, &tb.v[j], &dth[l]) * beta[(l, j)];
                    }
                }
            }
        }

        Ok(DiscreteOperators {
            t,
            coeffs: c,
            mass_v: tb.mass_v.clone(),
            mass_w: tb.mass_w.clone(),
            stiff_v,
            stiff_w,
            drift_v,
            drift_w,
            adv_v,
            adv_w,
            lin_v,
            lin_w,
            curl_wv,
            curl_zw,
            dsym_v,
        })
    }
}

/// Evaluation tables restricted to the nodes of one region.
#[derive(Debug, Clone)]
pub struct RegionTable {
    pub region: Region,
    pub nodes: Vec<usize>,
    pub weights: DVector<f64>,
    /// velocity values: rows [component 0 nodes..., component 1 nodes...]
    pub ev: DMatrix<f64>,
    /// scalar values
    pub ew: DMatrix<f64>,
    /// int_region theta_a . theta_b
    pub gram_v: DMatrix<f64>,
    /// int_region phi_a phi_b
    pub gram_w: DMatrix<f64>,
}

impl RegionTable {
    pub fn new(tables: &Tables, geometry: &Geometry, region: Region) -> Result<Self> {
        let mask = geometry.mask(region)?;
        let nodes = mask.support();
        let nr = nodes.len();
        let dim = tables.dim();
        let weights = DVector::from_fn(nr, |r, _| tables.weights[nodes[r]]);
        let mut ev = DMatrix::zeros(2 * nr, dim);
        let mut ew = DMatrix::zeros(nr, dim);
        for (r, &q) in nodes.iter().enumerate() {
            for a in 0..dim {
                ev[(r, a)] = tables.v[0][(q, a)];
                ev[(nr + r, a)] = tables.v[1][(q, a)];
                ew[(r, a)] = tables.p[(q, a)];
            }
        }
        let w2 = DVector::from_fn(2 * nr, |r, _| weights[r % nr]);
        let gram_v = gram(&ev, &ev, &w2);
        let gram_w = gram(&ew, &ew, &weights);
        Ok(RegionTable {
            region,
            nodes,
            weights,
            ev,
            ew,
            gram_v,
            gram_w,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Load vector int_region u . theta_a for node samples u (component-major).
    pub fn inject_v(&self, u: &[f64]) -> DVector<f64> {
        let nr = self.n_nodes();
        let wu = DVector::from_fn(2 * nr, |r, _| u[r] * self.weights[r % nr]);
        self.ev.tr_mul(&wu)
    }

    pub fn inject_w(&self, u: &[f64]) -> DVector<f64> {
        let wu = DVector::from_fn(self.n_nodes(), |r, _| u[r] * self.weights[r]);
        self.ew.tr_mul(&wu)
    }

    pub fn eval_v(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.ev * c
    }

    pub fn eval_w(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.ew * c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{QuadSpec, Rect};
    use crate::motion::MotionKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn geometry(order: usize) -> Geometry {
        Geometry::new(
            Rect::square(0.2, 0.8),
            [Rect::square(0.25, 0.4), Rect::square(0.6, 0.75)],
            [Rect::new(0.1, 0.3, 0.6, 0.9), Rect::new(0.6, 0.9, 0.1, 0.3)],
            QuadSpec { order, max_cell: 0.25 },
        )
        .unwrap()
    }

    fn assembler(n: usize, motion: &MotionLaw, fields: &CoefficientFields) -> Assembler {
        Assembler::new(SpectralBasis::new(n).unwrap(), &geometry(2 * n + 2), motion, fields).unwrap()
    }

    #[test]
    fn size_limits() {
        assert!(matches!(SpectralBasis::new(0), Err(Error::Size(0))));
        assert!(matches!(SpectralBasis::new(33), Err(Error::Size(33))));
        assert_eq!(SpectralBasis::new(2).unwrap().dim(), 4);
    }

    #[test]
    fn first_stream_mode() {
        let b = SpectralBasis::new(1).unwrap();
        let y = [0.3, 0.6];
        let p = b.psi(0, y);
        assert_relative_eq!(p[0], PI * (PI * 0.3).sin() * (PI * 0.6).cos(), epsilon = 1e-15);
        assert_relative_eq!(p[1], -PI * (PI * 0.3).cos() * (PI * 0.6).sin(), epsilon = 1e-15);
    }

    #[test]
    fn boundary_traces() {
        // scalar modes vanish on the boundary; stream modes only in the normal direction
        let b = SpectralBasis::new(3).unwrap();
        for a in 0..b.dim() {
            for s in [0.0, 0.2, 0.5, 1.0] {
                for (y, normal) in [([0.0, s], 0), ([1.0, s], 0), ([s, 0.0], 1), ([s, 1.0], 1)] {
                    assert!(b.phi(a, y)[0].abs() < 1e-14);
                    assert!(b.psi(a, y)[normal].abs() < 1e-13, "mode {a} at {y:?}");
                }
            }
        }
        let p = b.psi(0, [0.0, 0.5]);
        assert_relative_eq!(p[1], -PI, epsilon = 1e-14);
    }

    #[test]
    fn quadrature_order_guard() {
        let r = Tables::new(SpectralBasis::new(4).unwrap(), &geometry(5), &Matrix2::identity());
        assert!(matches!(r, Err(Error::QuadratureOrder { order: 5, min: 6 })));
    }

    #[test]
    fn identity_motion_operators() {
        let asm = assembler(2, &MotionLaw::identity(1.0), &CoefficientFields::zero());
        let ops = asm.assemble(0.5).unwrap();
        let b = SpectralBasis::new(2).unwrap();
        for a in 0..4 {
            let (k, l) = b.mode(a);
            let lam = PI * PI * (k * k + l * l) as f64;
            for c in 0..4 {
                let want = if a == c { lam / 4.0 } else { 0.0 };
                assert!((ops.stiff_w[(a, c)] - want).abs() < 1e-12 * lam);
                // velocity modes: int |grad psi|^2 = lam^2/4 with unit mass lam/4
                let want_v = if a == c { lam * lam / 4.0 } else { 0.0 };
                assert!((ops.stiff_v[(a, c)] - want_v).abs() < 1e-12 * lam * lam);
                let want_m = if a == c { lam / 4.0 } else { 0.0 };
                assert!((ops.mass_v[(a, c)] - want_m).abs() < 1e-12 * lam);
            }
        }
        for m in [&ops.drift_v, &ops.drift_w, &ops.adv_v, &ops.adv_w, &ops.lin_v, &ops.lin_w, &ops.dsym_v] {
            assert_eq!(m.amax(), 0.0);
        }
    }

    #[test]
    fn dilation_scales_stiffness() {
        let two = MotionLaw::new(MotionKind::Constant { a: 2.0 }, Matrix2::identity(), 1.0, 1.0).unwrap();
        let a1 = assembler(3, &MotionLaw::identity(1.0), &CoefficientFields::zero()).assemble(0.2).unwrap();
        let a2 = assembler(3, &two, &CoefficientFields::zero()).assemble(0.2).unwrap();
        assert!((&a2.stiff_v - &a1.stiff_v * 0.25).amax() < 1e-11);
        assert!((&a2.stiff_w - &a1.stiff_w * 0.25).amax() < 1e-11);
    }

    #[test]
    fn curl_reduces_to_plain_rot_for_identity() {
        // curl_zw for M = I is the Galerkin form of d1 z2 - d2 z1, and curl_wv of (d2 w, -d1 w)
        let asm = assembler(3, &MotionLaw::identity(1.0), &CoefficientFields::zero());
        let ops = asm.assemble(0.0).unwrap();
        let t = &asm.tables;
        let rot = &asm.pg[1][0] - &asm.pg[0][1];
        assert!((&ops.curl_zw - &rot).amax() < 1e-13);
        // integration by parts: int phi rot(theta) = int curl(phi) . theta
        assert!((&ops.curl_zw - ops.curl_wv.transpose()).amax() < 1e-10);
        let _ = t;
    }

    #[test]
    fn constant_transport_symmetric_part_is_boundary_flux() {
        let (h1, h2) = (0.7, -0.4);
        let fields = CoefficientFields {
            h: [Expr::constant(h1), Expr::constant(h2)],
            theta: Expr::zero(),
        };
        let n = 4;
        let ops = assembler(n, &MotionLaw::identity(1.0), &fields).assemble(0.3).unwrap();
        assert!((&ops.adv_w + ops.adv_w.transpose()).amax() < 1e-10);
        assert_eq!(ops.lin_v.amax(), 0.0);
        // int (h.grad)u.v + u.(h.grad)v = boundary integral of (h.n) u.v
        let b = SpectralBasis::new(n).unwrap();
        let sym = &ops.adv_v + ops.adv_v.transpose();
        for a in 0..b.dim() {
            for c in 0..b.dim() {
                let ((ka, la), (kc, lc)) = (b.mode(a), b.mode(c));
                let sign = |p: usize, q: usize| if (p + q) % 2 == 0 { 1.0 } else { -1.0 };
                let mut flux = 0.0;
                if la == lc {
                    flux += h1 * (ka * kc) as f64 * PI * PI / 2.0 * (sign(ka, kc) - 1.0);
                }
                if ka == kc {
                    flux += h2 * (la * lc) as f64 * PI * PI / 2.0 * (sign(la, lc) - 1.0);
                }
                assert!((sym[(a, c)] - flux).abs() < 1e-9, "{a} {c}: {} vs {flux}", sym[(a, c)]);
            }
        }
    }

    #[test]
    fn transport_transpose_matches_test_side_form() {
        // h = curl(0.5 sin(1,2)) is divergence free with zero normal trace
        let fields = CoefficientFields {
            h: [Expr::parse("pi*sin1(1)*cos2(2)").unwrap(), Expr::parse("-0.5*pi*cos1(1)*sin2(2)").unwrap()],
            theta: Expr::zero(),
        };
        let ops = assembler(3, &MotionLaw::identity(1.0), &fields).assemble(0.3).unwrap();
        assert!((ops.adv_v.transpose() - &ops.dsym_v).amax() < 1e-9);
        assert!((ops.adv_w.transpose() + &ops.adv_w).amax() < 1e-9);
        assert!((ops.adv_v.transpose() + &ops.adv_v).amax() < 1e-9);
        assert!(ops.lin_v.amax() > 0.1);
    }

    #[test]
    fn project_recovers_modes() {
        let g = geometry(10);
        let t = Tables::new(SpectralBasis::new(2).unwrap(), &g, &Matrix2::identity()).unwrap();
        let b = t.basis;
        let c = t.project_velocity(|y| b.psi(0, y));
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-10);
        for a in 1..4 {
            assert!(c[a].abs() <= 1e-10);
        }
        let c = t.project_scalar(|y| (2.0 * PI * y[0]).sin() * (PI * y[1]).sin());
        assert_relative_eq!(c[b.index(2, 1)], 1.0, epsilon = 1e-12);
        assert_eq!(c.iter().filter(|v| v.abs() > 1e-12).count(), 1);
        let zero = DVector::zeros(4);
        assert!(t.evaluate_scalar(&zero, &[[0.3, 0.4]]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn doubling_quadrature_changes_little() {
        let fields = CoefficientFields {
            h: [Expr::sine(0.5, 1.0, 2.0), Expr::sine(-0.3, 2.0, 1.0)],
            theta: Expr::sine(0.4, 1.0, 1.0),
        };
        let motion = MotionLaw::new(MotionKind::Affine { a: 1.0, b: 0.5 }, Matrix2::new(1.0, 0.25, 0.25, 1.0), 1.0, 1.0).unwrap();
        let n = 4;
        let basis = SpectralBasis::new(n).unwrap();
        let lo = Assembler::new(basis, &geometry(2 * n + 2), &motion, &fields).unwrap().assemble(0.4).unwrap();
        let hi = Assembler::new(basis, &geometry(4 * n + 4), &motion, &fields).unwrap().assemble(0.4).unwrap();
        for (a, b) in [
            (&lo.mass_v, &hi.mass_v),
            (&lo.stiff_v, &hi.stiff_v),
            (&lo.adv_v, &hi.adv_v),
            (&lo.lin_v, &hi.lin_v),
            (&lo.lin_w, &hi.lin_w),
            (&lo.curl_zw, &hi.curl_zw),
            (&lo.drift_w, &hi.drift_w),
        ] {
            assert!((a - b).amax() <= 1e-10, "{}", (a - b).amax());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn assembly_is_linear_in_fields(c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, c3 in -1.0f64..1.0) {
            let motion = MotionLaw::new(MotionKind::Affine { a: 1.0, b: 0.5 }, Matrix2::new(1.0, 0.25, 0.25, 1.0), 1.0, 1.0).unwrap();
            let f1 = CoefficientFields { h: [Expr::sine(c1, 1.0, 2.0), Expr::zero()], theta: Expr::sine(c3, 1.0, 1.0) };
            let f2 = CoefficientFields { h: [Expr::sine(c2, 2.0, 2.0), Expr::sine(c3, 1.0, 1.0)], theta: Expr::zero() };
            let sum = CoefficientFields {
                h: [f1.h[0].clone().add(&f2.h[0]), f1.h[1].clone().add(&f2.h[1])],
                theta: f1.theta.clone().add(&f2.theta),
            };
            let a = assembler(2, &motion, &f1).assemble(0.6).unwrap();
            let b = assembler(2, &motion, &f2).assemble(0.6).unwrap();
            let s = assembler(2, &motion, &sum).assemble(0.6).unwrap();
            prop_assert!((&s.adv_v - &a.adv_v - &b.adv_v).amax() <= 1e-12);
            prop_assert!((&s.lin_v - &a.lin_v - &b.lin_v).amax() <= 1e-12);
            prop_assert!((&s.lin_w - &a.lin_w - &b.lin_w).amax() <= 1e-12);
            prop_assert!((&s.adv_w - &a.adv_w - &b.adv_w).amax() <= 1e-12);
        }

        #[test]
        fn velocity_is_divergence_free(c in prop::collection::vec(-1.0f64..1.0, 9), m01 in -0.5f64..0.5) {
            // div(M^{-1} z) at every quadrature node
            let m = Matrix2::new(1.0, m01, 0.2, 1.3);
            let t = Tables::new(SpectralBasis::new(3).unwrap(), &geometry(8), &m).unwrap();
            let mi = m.try_inverse().unwrap();
            let c = DVector::from_vec(c);
            let g = [0, 1].map(|i| [0, 1].map(|l| &t.g[i][l] * &c));
            let div = (&g[0][0] * mi[(0, 0)] + &g[1][0] * mi[(0, 1)]) + (&g[0][1] * mi[(1, 0)] + &g[1][1] * mi[(1, 1)]);
            prop_assert!(div.amax() <= 1e-11);
        }
    }
}
