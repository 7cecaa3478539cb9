//! Reference domain, control/observation rectangles and the composite
//! Gauss-Legendre rule every space integral goes through.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle (x0,x1)x(y0,y1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn square(a: f64, b: f64) -> Self {
        Rect::new(a, b, a, b)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    /// Strict interior membership.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    /// Open rectangles intersect in a set of positive area.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    fn strictly_inside_unit(&self) -> bool {
        self.x0 > 0.0 && self.x1 < 1.0 && self.y0 > 0.0 && self.y1 < 1.0
    }
}

impl std::fmt::Display for Rect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})x({},{})", self.x0, self.x1, self.y0, self.y1)
    }
}

/// Named regions of a geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Omega,
    Leader,
    Follower(usize),
    Obs(usize),
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Region::Omega => write!(f, "omega"),
            Region::Leader => write!(f, "O"),
            Region::Follower(i) => write!(f, "O{}", i + 1),
            Region::Obs(i) => write!(f, "O{},d", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    /// Gauss points per cell per axis.
    pub order: usize,
    /// Cells wider than this are split evenly.
    pub max_cell: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            order: 10,
            max_cell: 0.25,
        }
    }
}

impl QuadSpec {
    pub fn for_modes(n: usize) -> Self {
        QuadSpec {
            order: 2 * n + 2,
            ..Default::default()
        }
    }
}

/// P_n(z) and P_n'(z) from the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, 0.0);
    for j in 0..n {
        let p2 = p1;
        p1 = p0;
        p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
    }
    (p0, n as f64 * (z * p0 - p1) / (z * z - 1.0))
}

/// Gauss-Legendre nodes and weights on [-1,1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Validated geometry together with its tensor quadrature.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub omega: Rect,
    pub o_leader: Rect,
    pub o_follower: [Rect; 2],
    pub o_obs: [Rect; 2],
    pub quad: QuadSpec,
    nodes1d: Vec<f64>,
    weights1d: Vec<f64>,
}

/// Indicator sampled at every quadrature node.
#[derive(Debug, Clone)]
pub struct Mask {
    pub values: Vec<f64>,
    pub region: Rect,
}

impl Mask {
    /// Indices of nodes where the mask is one.
    pub fn support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

impl Geometry {
    pub fn new(o_leader: Rect, o_follower: [Rect; 2], o_obs: [Rect; 2], quad: QuadSpec) -> Result<Self> {
        let named = [
            ("O", o_leader),
            ("O1", o_follower[0]),
            ("O2", o_follower[1]),
            ("O1d", o_obs[0]),
            ("O2d", o_obs[1]),
        ];
        for (name, r) in named.iter() {
            if !(r.x1 > r.x0 && r.y1 > r.y0) || r.area() <= 0.0 || !r.area().is_finite() {
                return Err(Error::DegenerateRegion(format!("{name} = {r}")));
            }
            if !r.strictly_inside_unit() {
                return Err(Error::Containment(format!("{name} = {r} is not strictly inside the unit square")));
            }
        }
        for (i, r) in o_follower.iter().enumerate() {
            if !o_leader.contains_rect(r) {
                return Err(Error::Containment(format!("O{} = {r} is not contained in O = {o_leader}", i + 1)));
            }
        }
        if o_follower[0].overlaps(&o_follower[1]) {
            return Err(Error::Overlap(format!("O1 = {} and O2 = {}", o_follower[0], o_follower[1])));
        }
        if quad.order == 0 || !(quad.max_cell > 0.0) {
            return Err(Error::config("discretization.quad_order", "must be positive"));
        }

        let mut breaks = vec![0.0, 1.0];
        for (_, r) in named.iter() {
            breaks.extend([r.x0, r.x1, r.y0, r.y1]);
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

        let (gx, gw) = gauss_legendre(quad.order);
        let mut nodes1d = Vec::new();
        let mut weights1d = Vec::new();
        for win in breaks.windows(2) {
            let (a, b) = (win[0], win[1]);
            let pieces = ((b - a) / quad.max_cell).ceil().max(1.0) as usize;
            let h = (b - a) / pieces as f64;
            for c in 0..pieces {
                let lo = a + c as f64 * h;
                for (x, w) in gx.iter().zip(&gw) {
                    nodes1d.push(lo + 0.5 * h * (x + 1.0));
                    weights1d.push(0.5 * h * w);
                }
            }
        }

        Ok(Geometry {
            omega: Rect::UNIT,
            o_leader,
            o_follower,
            o_obs,
            quad,
            nodes1d,
            weights1d,
        })
    }

    pub fn rect(&self, region: Region) -> Result<Rect> {
        match region {
            Region::Omega => Ok(self.omega),
            Region::Leader => Ok(self.o_leader),
            Region::Follower(i) if i < 2 => Ok(self.o_follower[i]),
            Region::Obs(i) if i < 2 => Ok(self.o_obs[i]),
            other => Err(Error::UnknownRegion(other.to_string())),
        }
    }

    /// Region whose rectangle equals `r` exactly.
    pub fn region_of(&self, r: &Rect) -> Result<Region> {
        let all = [
            Region::Omega,
            Region::Leader,
            Region::Follower(0),
            Region::Follower(1),
            Region::Obs(0),
            Region::Obs(1),
        ];
        all.into_iter()
            .find(|reg| self.rect(*reg).map(|x| x == *r).unwrap_or(false))
            .ok_or_else(|| Error::UnknownRegion(r.to_string()))
    }

    pub fn n1d(&self) -> usize {
        self.nodes1d.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes1d.len() * self.nodes1d.len()
    }

    pub fn nodes1d(&self) -> &[f64] {
        &self.nodes1d
    }

    pub fn weights1d(&self) -> &[f64] {
        &self.weights1d
    }

    /// Node p = i*n1d + j sits at (x_i, x_j).
    pub fn node(&self, p: usize) -> (f64, f64) {
        let n = self.n1d();
        (self.nodes1d[p / n], self.nodes1d[p % n])
    }

    pub fn weight(&self, p: usize) -> f64 {
        let n = self.n1d();
        self.weights1d[p / n] * self.weights1d[p % n]
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|p| self.weight(p)).collect()
    }

    pub fn mask_rect(&self, r: &Rect) -> Mask {
        let values = (0..self.n_nodes())
            .map(|p| {
                let (x, y) = self.node(p);
                if r == &Rect::UNIT || r.contains_point(x, y) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Mask { values, region: *r }
    }

    /// Mask of a stored rectangle; anything else is rejected.
    pub fn make_mask(&self, r: &Rect) -> Result<Mask> {
        self.region_of(r)?;
        Ok(self.mask_rect(r))
    }

    pub fn mask(&self, region: Region) -> Result<Mask> {
        Ok(self.mask_rect(&self.rect(region)?))
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().enumerate().map(|(p, v)| self.weight(p) * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn default_geometry() -> Geometry {
        Geometry::new(
            Rect::square(0.2, 0.8),
            [Rect::square(0.25, 0.4), Rect::square(0.6, 0.75)],
            [Rect::new(0.1, 0.3, 0.6, 0.9), Rect::new(0.1, 0.3, 0.6, 0.9)],
            QuadSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn gauss_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(5);
        for deg in 0..10 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn default_geometry_is_valid() {
        let g = default_geometry();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn follower_outside_leader_rejected() {
        let r = Geometry::new(
            Rect::square(0.4, 0.8),
            [Rect::square(0.1, 0.3), Rect::square(0.5, 0.6)],
            [Rect::square(0.1, 0.2), Rect::square(0.1, 0.2)],
            QuadSpec::default(),
        );
        assert!(matches!(r, Err(Error::Containment(_))));
    }

    #[test]
    fn identical_followers_overlap() {
        let r = Geometry::new(
            Rect::square(0.2, 0.8),
            [Rect::square(0.3, 0.5), Rect::square(0.3, 0.5)],
            [Rect::square(0.1, 0.2), Rect::square(0.1, 0.2)],
            QuadSpec::default(),
        );
        assert!(matches!(r, Err(Error::Overlap(_))));
    }

    #[test]
    fn empty_region_is_degenerate() {
        let r = Geometry::new(
            Rect::square(0.2, 0.8),
            [Rect::new(0.3, 0.3, 0.3, 0.5), Rect::square(0.6, 0.7)],
            [Rect::square(0.1, 0.2), Rect::square(0.1, 0.2)],
            QuadSpec::default(),
        );
        assert!(matches!(r, Err(Error::DegenerateRegion(_))));
    }

    #[test]
    fn mask_integrals() {
        let g = default_geometry();
        let full = g.mask(Region::Omega).unwrap();
        assert!(full.values.iter().all(|v| *v == 1.0));
        assert!((g.integrate(&full.values) - 1.0).abs() < 1e-12);

        let quarter = g.mask_rect(&Rect::square(0.25, 0.75));
        assert!((g.integrate(&quarter.values) - 0.25).abs() < 1e-2 * 0.25);

        let lead = g.mask(Region::Leader).unwrap();
        assert!((g.integrate(&lead.values) - 0.36).abs() < 1e-13);
    }

    #[test]
    fn point_membership() {
        let r = Rect::square(0.2, 0.8);
        assert!(r.contains_point(0.5, 0.5));
        assert!(!r.contains_point(0.1, 0.1));
    }

    #[test]
    fn unknown_region_rejected() {
        let g = default_geometry();
        assert!(matches!(g.make_mask(&Rect::square(0.31, 0.32)), Err(Error::UnknownRegion(_))));
        assert!(g.make_mask(&Rect::square(0.2, 0.8)).is_ok());
    }

    #[test]
    fn follower_masks_are_disjoint_and_contained() {
        let g = default_geometry();
        let m1 = g.mask(Region::Follower(0)).unwrap();
        let m2 = g.mask(Region::Follower(1)).unwrap();
        let o = g.mask(Region::Leader).unwrap();
        for p in 0..g.n_nodes() {
            assert_eq!(m1.values[p] * m2.values[p], 0.0);
            assert_eq!(m1.values[p] * o.values[p], m1.values[p]);
        }
    }

    fn sub_rect() -> impl Strategy<Value = (Rect, Rect)> {
        (0.05f64..0.45, 0.05f64..0.45, 0.05f64..0.45, 0.05f64..0.45, 0.0f64..1.0, 0.0f64..1.0)
            .prop_map(|(a, b, c, d, s, u)| {
                let outer = Rect::new(a, a + 0.5, c, c + 0.5);
                let inner = Rect::new(a + s * b * 0.5, a + 0.5 - (1.0 - s) * b * 0.5, c + u * d * 0.5, c + 0.5 - (1.0 - u) * d * 0.5);
                (outer, inner)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mask_integral_is_monotone((outer, inner) in sub_rect()) {
            let g = default_geometry();
            let a = g.integrate(&g.mask_rect(&inner).values);
            let b = g.integrate(&g.mask_rect(&outer).values);
            prop_assert!(a <= b + 1e-15);
        }

        #[test]
        fn disjoint_masks_never_share_nodes(x in 0.05f64..0.4, w in 0.01f64..0.1, gap in 0.0f64..0.1) {
            let g = default_geometry();
            let a = g.mask_rect(&Rect::new(x, x + w, 0.2, 0.7));
            let b = g.mask_rect(&Rect::new(x + w + gap, x + 2.0 * w + gap, 0.1, 0.9));
            for p in 0..g.n_nodes() {
                prop_assert_eq!(a.values[p] * b.values[p], 0.0);
            }
        }
    }
}
