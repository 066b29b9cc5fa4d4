//! Quadrature on triangles and on pairs of triangles.
//!
//! Regular pairs use a tensor product of triangle rules. Pairs sharing a
//! vertex, an edge or both triangles use the Sauter-Schwab regularizing
//! transformations of the four-dimensional integration domain, which cancel
//! the `1/|x - y|` singularity in the Jacobian.

use crate::{Error, Result};

/// Quadrature rule on the reference triangle `{x, y ≥ 0, x + y ≤ 1}`.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    /// Weights summing to the reference area 1/2.
    pub weights: Vec<f64>,
    degree: usize,
}

impl TriangleRule {
    /// Rule exact for polynomials of total degree `order`. Order 4 is the
    /// six-point Dunavant rule; other orders use a collapsed Gauss rule.
    pub fn new(order: usize) -> Result<Self> {
        match order {
            4 => Ok(Self::dunavant4()),
            1..=40 => Ok(Self::collapsed(order)),
            _ => Err(Error::UnsupportedOrder(order)),
        }
    }

    fn dunavant4() -> Self {
        let families = [
            (0.445_948_490_915_965, 0.108_103_018_168_070, 0.223_381_589_678_011),
            (0.091_576_213_509_771, 0.816_847_572_980_459, 0.109_951_743_655_322),
        ];
        let mut points = Vec::with_capacity(6);
        let mut weights = Vec::with_capacity(6);
        for (a, b, w) in families {
            for p in [[a, a], [a, b], [b, a]] {
                points.push(p);
                weights.push(0.5 * w);
            }
        }
        TriangleRule { points, weights, degree: 4 }
    }

    fn collapsed(order: usize) -> Self {
        let q = (order + 3) / 2;
        let (x, w) = gauss_legendre(q);
        let mut points = Vec::with_capacity(q * q);
        let mut weights = Vec::with_capacity(q * q);
        for i in 0..q {
            for j in 0..q {
                let u = x[i];
                points.push([u, (1.0 - u) * x[j]]);
                weights.push(w[i] * w[j] * (1.0 - u));
            }
        }
        TriangleRule { points, weights, degree: order }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Barycentric coordinates of point `i`.
    pub fn barycentric(&self, i: usize) -> [f64; 3] {
        let [x, y] = self.points[i];
        [1.0 - x - y, x, y]
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        nodes[n - 1 - i] = 0.5 * (z + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n(z)` and its derivative.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Relative position of two triangles of the same mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Adjacency {
    Separated,
    Vertex,
    Edge,
    Coincident,
}

impl Adjacency {
    pub fn from_shared(count: usize) -> Result<Self> {
        match count {
            0 => Ok(Adjacency::Separated),
            1 => Ok(Adjacency::Vertex),
            2 => Ok(Adjacency::Edge),
            3 => Ok(Adjacency::Coincident),
            n => Err(Error::UnsupportedAdjacency(n)),
        }
    }
}

/// Adjacency class of two triangles and local vertex orders that put shared
/// vertices first, in the same order on both triangles.
///
/// Point `k` of a pair rule in barycentric coordinates refers to local vertex
/// `perm[k]` of the original triangle.
pub fn classify_pair(a: &[usize; 3], b: &[usize; 3]) -> (Adjacency, [usize; 3], [usize; 3]) {
    let mut pa = [0usize; 3];
    let mut pb = [0usize; 3];
    let mut used_a = [false; 3];
    let mut used_b = [false; 3];
    let mut shared = 0;
    for (i, va) in a.iter().enumerate() {
        if let Some(j) = b.iter().position(|vb| vb == va) {
            pa[shared] = i;
            pb[shared] = j;
            used_a[i] = true;
            used_b[j] = true;
            shared += 1;
        }
    }
    let (mut ka, mut kb) = (shared, shared);
    for i in 0..3 {
        if !used_a[i] {
            pa[ka] = i;
            ka += 1;
        }
        if !used_b[i] {
            pb[kb] = i;
            kb += 1;
        }
    }
    let class = match shared {
        0 => Adjacency::Separated,
        1 => Adjacency::Vertex,
        2 => Adjacency::Edge,
        _ => Adjacency::Coincident,
    };
    (class, pa, pb)
}

/// One node of a pair rule in barycentric coordinates of both triangles.
#[derive(Clone, Copy, Debug)]
pub struct PairPoint {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub weight: f64,
}

/// Quadrature rule on the product of two reference triangles.
///
/// Weights sum to 1/4; a physical integral is `Σ w f (2|T_a|)(2|T_b|)`.
#[derive(Clone, Debug)]
pub struct PairRule {
    pub adjacency: Adjacency,
    pub points: Vec<PairPoint>,
}

impl PairRule {
    pub fn new(adjacency: Adjacency, base_order: usize) -> Result<Self> {
        if base_order == 0 || base_order > 40 {
            return Err(Error::UnsupportedOrder(base_order));
        }
        let points = match adjacency {
            Adjacency::Separated => {
                let t = TriangleRule::new(base_order)?;
                let mut pts = Vec::with_capacity(t.len() * t.len());
                for i in 0..t.len() {
                    for j in 0..t.len() {
                        pts.push(PairPoint {
                            a: t.barycentric(i),
                            b: t.barycentric(j),
                            weight: t.weights[i] * t.weights[j],
                        });
                    }
                }
                pts
            }
            singular => sauter_schwab(singular, singular_points(singular, base_order)),
        };
        Ok(PairRule { adjacency, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss points per dimension `(ξ, η1, η2, η3)` of the singular rules.
///
/// After regularization the integrand is polynomial in most directions for
/// a `1/r` kernel; the remaining directions carry an analytic but
/// slowly resolved factor and receive twice the points.
pub fn singular_points(class: Adjacency, base_order: usize) -> [usize; 4] {
    let q = base_order.max(2);
    let m = 2 * base_order;
    match class {
        Adjacency::Coincident => [q, q, q, m],
        Adjacency::Edge => [q, q, m, m],
        _ => [q, m, q, q],
    }
}

/// Barycentric coordinates on the simplex `{0 ≤ x2 ≤ x1 ≤ 1}` with vertices
/// `(0,0), (1,0), (1,1)`.
fn simplex_bary(x1: f64, x2: f64) -> [f64; 3] {
    [1.0 - x1, x1 - x2, x2]
}

type Map = fn(f64, f64, f64, f64) -> ([f64; 2], [f64; 2], f64);

fn sauter_schwab(class: Adjacency, n: [usize; 4]) -> Vec<PairPoint> {
    let coincident: [Map; 6] = [
        |x, a, b, c| ([x, x * (1.0 - a + a * b)], [x * (1.0 - a * b * c), x * (1.0 - a)], x.powi(3) * a * a * b),
        |x, a, b, c| ([x * (1.0 - a * b * c), x * (1.0 - a)], [x, x * (1.0 - a + a * b)], x.powi(3) * a * a * b),
        |x, a, b, c| ([x, x * a * (1.0 - b + b * c)], [x * (1.0 - a * b), x * a * (1.0 - b)], x.powi(3) * a * a * b),
        |x, a, b, c| ([x * (1.0 - a * b), x * a * (1.0 - b)], [x, x * a * (1.0 - b + b * c)], x.powi(3) * a * a * b),
        |x, a, b, c| ([x * (1.0 - a * b * c), x * a * (1.0 - b * c)], [x, x * a * (1.0 - b)], x.powi(3) * a * a * b),
        |x, a, b, c| ([x, x * a * (1.0 - b)], [x * (1.0 - a * b * c), x * a * (1.0 - b * c)], x.powi(3) * a * a * b),
    ];
    let edge: [Map; 5] = [
        |x, a, b, c| ([x, x * a * c], [x * (1.0 - a * b), x * a * (1.0 - b)], x.powi(3) * a * a),
        |x, a, b, c| ([x, x * a], [x * (1.0 - a * b * c), x * a * b * (1.0 - c)], x.powi(3) * a * a * b),
        |x, a, b, c| ([x * (1.0 - a * b), x * a * (1.0 - b)], [x, x * a * b * c], x.powi(3) * a * a * b),
        |x, a, b, c| ([x * (1.0 - a * b * c), x * a * b * (1.0 - c)], [x, x * a], x.powi(3) * a * a * b),
        |x, a, b, c| ([x * (1.0 - a * b * c), x * a * (1.0 - b * c)], [x, x * a * b], x.powi(3) * a * a * b),
    ];
    let vertex: [Map; 2] = [
        |x, a, b, c| ([x, x * a], [x * b, x * b * c], x.powi(3) * b),
        |x, a, b, c| ([x * b, x * b * c], [x, x * a], x.powi(3) * b),
    ];
    let maps: &[Map] = match class {
        Adjacency::Coincident => &coincident,
        Adjacency::Edge => &edge,
        Adjacency::Vertex => &vertex,
        Adjacency::Separated => unreachable!("regular pairs use the tensor rule"),
    };
    let g: Vec<(Vec<f64>, Vec<f64>)> = n.iter().map(|&m| gauss_legendre(m)).collect();
    let mut pts = Vec::with_capacity(maps.len() * n.iter().product::<usize>());
    for map in maps {
        for (x0, w0) in g[0].0.iter().zip(&g[0].1) {
            for (x1, w1) in g[1].0.iter().zip(&g[1].1) {
                for (x2, w2) in g[2].0.iter().zip(&g[2].1) {
                    for (x3, w3) in g[3].0.iter().zip(&g[3].1) {
                        let (x, y, jac) = map(*x0, *x1, *x2, *x3);
                        pts.push(PairPoint {
                            a: simplex_bary(x[0], x[1]),
                            b: simplex_bary(y[0], y[1]),
                            weight: w0 * w1 * w2 * w3 * jac,
                        });
                    }
                }
            }
        }
    }
    pts
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::Vec3;
    use approx::assert_relative_eq;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Closed form of the monomial integral over the reference triangle.
    fn monomial(p: u32, q: u32) -> f64 {
        factorial(p) * factorial(q) / factorial(p + q + 2)
    }

    #[test]
    fn gauss_legendre_is_exact() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for p in 0..(2 * n) as i32 {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
                assert_relative_eq!(s, 1.0 / (p as f64 + 1.0), epsilon = 1e-14);
            }
            assert!(x.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn triangle_rules_integrate_monomials() {
        for order in [1, 2, 3, 4, 5, 8, 12] {
            let rule = TriangleRule::new(order).unwrap();
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 0.5, epsilon = 1e-15);
            for p in 0..=order as u32 {
                for q in 0..=(order as u32 - p) {
                    let s: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(pt, w)| w * pt[0].powi(p as i32) * pt[1].powi(q as i32))
                        .sum();
                    assert_relative_eq!(s, monomial(p, q), epsilon = 1e-15);
                }
            }
        }
        let rule = TriangleRule::new(4).unwrap();
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        let s: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * p[0].powi(2) * p[1].powi(2)).sum();
        assert!((s - 1.0 / 180.0).abs() < 1e-15);
        assert!(matches!(TriangleRule::new(0), Err(Error::UnsupportedOrder(0))));
    }

    #[test]
    fn physical_triangle_area() {
        let rule = TriangleRule::new(4).unwrap();
        let p = [Vec3::new(0.3, -1.0, 2.0), Vec3::new(1.7, 0.2, 2.5), Vec3::new(-0.4, 0.9, 1.0)];
        let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        let s: f64 = rule.weights.iter().map(|w| w * 2.0 * area).sum();
        assert_relative_eq!(s, area, epsilon = 1e-14);
    }

    #[test]
    fn pair_rule_weights() {
        for class in [Adjacency::Separated, Adjacency::Vertex, Adjacency::Edge, Adjacency::Coincident] {
            for order in [2, 4, 6] {
                let rule = PairRule::new(class, order).unwrap();
                let s: f64 = rule.points.iter().map(|p| p.weight).sum();
                assert_relative_eq!(s, 0.25, epsilon = 1e-13);
                assert!(rule.points.iter().all(|p| p.weight >= 0.0));
                for p in &rule.points {
                    for l in p.a.iter().chain(&p.b) {
                        assert!((-1e-14..=1.0 + 1e-14).contains(l));
                    }
                }
            }
        }
        assert!(matches!(Adjacency::from_shared(4), Err(Error::UnsupportedAdjacency(4))));
    }

    #[test]
    fn classification_puts_shared_vertices_first() {
        let (c, pa, pb) = classify_pair(&[4, 7, 9], &[9, 2, 7]);
        assert_eq!(c, Adjacency::Edge);
        let a = [4, 7, 9];
        let b = [9, 2, 7];
        assert_eq!(a[pa[0]], b[pb[0]]);
        assert_eq!(a[pa[1]], b[pb[1]]);
        assert_ne!(a[pa[2]], b[pb[2]]);
        let (c, pa, pb) = classify_pair(&[1, 2, 3], &[3, 5, 6]);
        assert_eq!(c, Adjacency::Vertex);
        assert_eq!([1, 2, 3][pa[0]], [3, 5, 6][pb[0]]);
        assert_eq!(classify_pair(&[1, 2, 3], &[4, 5, 6]).0, Adjacency::Separated);
        assert_eq!(classify_pair(&[1, 2, 3], &[1, 2, 3]).0, Adjacency::Coincident);
    }

    pub(crate) fn bary_point(p: &[Vec3; 3], l: &[f64; 3]) -> Vec3 {
        p[0] * l[0] + p[1] * l[1] + p[2] * l[2]
    }

    pub(crate) fn reorder(p: &[Vec3; 3], perm: &[usize; 3]) -> [Vec3; 3] {
        [p[perm[0]], p[perm[1]], p[perm[2]]]
    }

    /// Integral of `f(x, y)` over a triangle pair with a pair rule.
    fn pair_integral(class: Adjacency, order: usize, a: &[Vec3; 3], b: &[Vec3; 3], f: impl Fn(&Vec3, &Vec3) -> f64) -> f64 {
        let rule = PairRule::new(class, order).unwrap();
        let ja = (a[1] - a[0]).cross(&(a[2] - a[0])).norm();
        let jb = (b[1] - b[0]).cross(&(b[2] - b[0])).norm();
        rule.points.iter().map(|p| p.weight * f(&bary_point(a, &p.a), &bary_point(b, &p.b))).sum::<f64>() * ja * jb
    }

    /// Exact `∫_T 1/|x - y| dy` for a flat triangle `T` and any point `x`.
    pub(crate) fn triangle_potential(t: &[Vec3; 3], x: &Vec3) -> f64 {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0])).normalize();
        let h = (x - t[0]).dot(&n);
        let rho = x - n * h;
        let mut total = 0.0;
        for i in 0..3 {
            let p = t[i];
            let q = t[(i + 1) % 3];
            let s = (q - p).normalize();
            let u = s.cross(&n);
            let d = (p - rho).dot(&u);
            let lp = (q - rho).dot(&s);
            let lm = (p - rho).dot(&s);
            let rp = (q - x).norm();
            let rm = (p - x).norm();
            let r0sq = d * d + h * h;
            if d.abs() > 1e-14 {
                total += d * ((rp + lp) / (rm + lm)).ln();
            }
            if h.abs() > 1e-14 {
                total -= h.abs() * ((d * lp / (r0sq + h.abs() * rp)).atan() - (d * lm / (r0sq + h.abs() * rm)).atan());
            }
        }
        total
    }

    /// Outer integral of `∫_T 1/|x - y|` with refinement until converged.
    pub(crate) fn reference_double_integral(a: &[Vec3; 3], b: &[Vec3; 3], tol: f64) -> f64 {
        let rule = TriangleRule::new(12).unwrap();
        let outer = |tri: &[Vec3; 3]| {
            let jac = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm();
            (0..rule.len())
                .map(|i| rule.weights[i] * triangle_potential(b, &bary_point(tri, &rule.barycentric(i))))
                .sum::<f64>()
                * jac
        };
        let mut tris = vec![*a];
        let mut last = outer(a);
        for _ in 0..5 {
            tris = tris
                .iter()
                .flat_map(|t| {
                    let m01 = (t[0] + t[1]) * 0.5;
                    let m12 = (t[1] + t[2]) * 0.5;
                    let m20 = (t[2] + t[0]) * 0.5;
                    [[t[0], m01, m20], [m01, t[1], m12], [m20, m12, t[2]], [m12, m20, m01]]
                })
                .collect();
            let next: f64 = tris.iter().map(outer).sum();
            if (next - last).abs() < tol * next.abs() {
                return next;
            }
            last = next;
        }
        last
    }

    #[test]
    fn triangle_potential_matches_quadrature_far_away() {
        let t = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        let rule = TriangleRule::new(20).unwrap();
        for x in [Vec3::new(0.2, 0.3, 2.0), Vec3::new(3.0, -1.0, 0.0), Vec3::new(-1.0, 2.0, -0.7)] {
            let q: f64 = (0..rule.len())
                .map(|i| rule.weights[i] / (bary_point(&t, &rule.barycentric(i)) - x).norm())
                .sum();
            assert_relative_eq!(triangle_potential(&t, &x), q, max_relative = 1e-10);
        }
    }

    #[test]
    fn singular_rules_match_analytic_oracle() {
        let inv_r = |x: &Vec3, y: &Vec3| 1.0 / (4.0 * std::f64::consts::PI * (x - y).norm());
        let unit = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        let cases: Vec<(Adjacency, [Vec3; 3], [Vec3; 3])> = vec![
            (Adjacency::Coincident, unit, unit),
            // coplanar edge neighbour
            (Adjacency::Edge, unit, [Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)]),
            // folded edge neighbour
            (Adjacency::Edge, unit, [Vec3::zeros(), Vec3::x(), Vec3::new(0.3, 0.0, 0.8)]),
            // vertex neighbours
            (Adjacency::Vertex, unit, [Vec3::zeros(), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(-0.2, -0.9, 0.0)]),
            (Adjacency::Vertex, unit, [Vec3::zeros(), Vec3::new(-0.5, 0.2, 0.6), Vec3::new(0.1, -0.8, 0.3)]),
        ];
        for (class, a, b) in cases {
            let ia = [0usize, 1, 2];
            let ib: Vec<usize> = b
                .iter()
                .enumerate()
                .map(|(k, p)| a.iter().position(|q| (p - q).norm() < 1e-14).unwrap_or(10 + k))
                .collect();
            let ib = [ib[0], ib[1], ib[2]];
            let (found, pa, pb) = classify_pair(&ia, &ib);
            assert_eq!(found, class);
            let ra = reorder(&a, &pa);
            let rb = reorder(&b, &pb);
            let oracle = reference_double_integral(&a, &b, 1e-10) / (4.0 * std::f64::consts::PI);
            let value = pair_integral(class, 4, &ra, &rb, inv_r);
            assert!(
                ((value - oracle) / oracle).abs() < 1e-6,
                "{class:?}: {value} vs {oracle}"
            );
            let value6 = pair_integral(class, 6, &ra, &rb, inv_r);
            assert!(((value6 - value) / value6).abs() < 1e-4);
        }
    }

    #[test]
    fn singular_rules_integrate_smooth_kernels() {
        // smooth kernels are integrated to the accuracy of a tensor rule
        let unit = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        let other = [Vec3::zeros(), Vec3::x(), Vec3::new(0.4, -0.3, 0.9)];
        let kernel = |x: &Vec3, y: &Vec3| 1.0 + x.x * y.y + (x - y).norm_squared() + x.y * x.y * y.z;
        let tensor = pair_integral(Adjacency::Separated, 12, &unit, &other, kernel);
        for class in [Adjacency::Vertex, Adjacency::Edge] {
            let v = pair_integral(class, 4, &unit, &other, kernel);
            assert_relative_eq!(v, tensor, max_relative = 1e-12);
        }
        let t_self = pair_integral(Adjacency::Separated, 12, &unit, &unit, kernel);
        let c = pair_integral(Adjacency::Coincident, 4, &unit, &unit, kernel);
        assert_relative_eq!(c, t_self, max_relative = 1e-12);
    }
}
