//! Uniform Cartesian grids on the unit square and the unit disk.
//!
//! Nodes sit on the lattice `h * Z^2` restricted to the bounding box of the
//! domain. A node is interior iff it lies strictly inside the domain;
//! every other node carries the Dirichlet value zero. Quadrature is the
//! midpoint sum `h^2 * sum_interior`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// `B(0, 1)`.
    UnitDisk,
    /// `(0, 1)^2`.
    UnitSquare,
}

impl Domain {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Domain::UnitDisk => p[0] * p[0] + p[1] * p[1] < 1.0,
            Domain::UnitSquare => p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0,
        }
    }

    /// Euclidean distance to the boundary for points inside, zero outside.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        match self {
            Domain::UnitDisk => 1.0 - p[0].hypot(p[1]),
            Domain::UnitSquare => p[0].min(1.0 - p[0]).min(p[1]).min(1.0 - p[1]),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Domain::UnitDisk => std::f64::consts::PI,
            Domain::UnitSquare => 1.0,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::UnitDisk => 2.0,
            Domain::UnitSquare => std::f64::consts::SQRT_2,
        }
    }

    /// Lower-left corner and side length of the bounding box.
    fn bounding_box(&self) -> ([f64; 2], f64) {
        match self {
            Domain::UnitDisk => ([-1.0, -1.0], 2.0),
            Domain::UnitSquare => ([0.0, 0.0], 1.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::UnitDisk => "disk",
            Domain::UnitSquare => "square",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disk" | "unit_disk" | "ball" => Some(Domain::UnitDisk),
            "square" | "unit_square" => Some(Domain::UnitSquare),
            _ => None,
        }
    }
}

/// Identity of a grid, carried by every field so that mixing grids is caught.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridKey {
    pub domain: Domain,
    pub cells_per_unit: usize,
}

const NOT_INTERIOR: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct Grid {
    domain: Domain,
    h: f64,
    cells_per_unit: usize,
    origin: [f64; 2],
    side: usize,
    interior_mask: Vec<bool>,
    boundary_distance: Vec<f64>,
    interior_nodes: Vec<usize>,
    interior_index: Vec<u32>,
}

/// Builds the grid with spacing `h`; `1/h` must be an integer.
pub fn build_grid(domain: Domain, h: f64) -> Result<Grid> {
    if !(h > 0.0 && h <= 0.5) {
        return Err(Error::GridSpacing(h));
    }
    let inv = 1.0 / h;
    let cells_per_unit = inv.round() as usize;
    if (inv - cells_per_unit as f64).abs() > 1e-9 * inv {
        return Err(Error::GridSpacing(h));
    }
    let h = 1.0 / cells_per_unit as f64;
    let (origin, extent) = domain.bounding_box();
    let side = (extent * cells_per_unit as f64).round() as usize + 1;
    let count = side * side;

    let mut interior_mask = Vec::with_capacity(count);
    let mut boundary_distance = Vec::with_capacity(count);
    let mut interior_nodes = Vec::new();
    let mut interior_index = vec![NOT_INTERIOR; count];
    for j in 0..side {
        for i in 0..side {
            let p = [origin[0] + i as f64 * h, origin[1] + j as f64 * h];
            let inside = domain.contains(p);
            interior_mask.push(inside);
            boundary_distance.push(domain.boundary_distance(p));
            if inside {
                interior_index[j * side + i] = interior_nodes.len() as u32;
                interior_nodes.push(j * side + i);
            }
        }
    }
    Ok(Grid {
        domain,
        h,
        cells_per_unit,
        origin,
        side,
        interior_mask,
        boundary_distance,
        interior_nodes,
        interior_index,
    })
}

impl Grid {
    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn key(&self) -> GridKey {
        GridKey {
            domain: self.domain,
            cells_per_unit: self.cells_per_unit,
        }
    }

    /// Nodes per axis of the bounding box.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn node_count(&self) -> usize {
        self.side * self.side
    }

    pub fn interior_count(&self) -> usize {
        self.interior_nodes.len()
    }

    pub fn point(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.coords(node);
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
        ]
    }

    pub fn nodes(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.node_count()).map(move |k| self.point(k))
    }

    /// `(i, j)` lattice coordinates of a node, `i` along x.
    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node % self.side, node / self.side)
    }

    pub fn node_at(&self, i: usize, j: usize) -> usize {
        j * self.side + i
    }

    /// Node index nearest to `p`, if `p` lies in the bounding box.
    pub fn nearest_node(&self, p: [f64; 2]) -> Option<usize> {
        let fi = ((p[0] - self.origin[0]) / self.h).round();
        let fj = ((p[1] - self.origin[1]) / self.h).round();
        if fi < 0.0 || fj < 0.0 || fi >= self.side as f64 || fj >= self.side as f64 {
            return None;
        }
        Some(self.node_at(fi as usize, fj as usize))
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.interior_mask[node]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior_mask
    }

    pub fn boundary_distance(&self) -> &[f64] {
        &self.boundary_distance
    }

    /// Node indices of interior nodes, in node order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    /// Position of `node` among the interior nodes.
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        let k = self.interior_index[node];
        (k != NOT_INTERIOR).then_some(k as usize)
    }

    /// The four lattice neighbours `[east, west, north, south]`, when inside the box.
    pub fn neighbors(&self, node: usize) -> [Option<usize>; 4] {
        let (i, j) = self.coords(node);
        let s = self.side;
        [
            (i + 1 < s).then(|| node + 1),
            (i > 0).then(|| node - 1),
            (j + 1 < s).then(|| node + s),
            (j > 0).then(|| node - s),
        ]
    }

    /// Nodes of `D_delta = {x : dist(x, dD) > delta}`.
    pub fn inner_layer_mask(&self, delta: f64) -> Vec<bool> {
        self.boundary_distance.iter().map(|&d| d > delta).collect()
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField {
            key: self.key(),
            values: vec![0.0; self.node_count()],
        }
    }

    pub fn zero_vectors(&self) -> VectorField {
        VectorField {
            key: self.key(),
            values: vec![[0.0; 2]; self.node_count()],
        }
    }

    /// Samples `f` at interior nodes, zero elsewhere.
    pub fn scalar_from_fn(&self, f: impl Fn([f64; 2]) -> f64) -> ScalarField {
        let mut out = self.zeros();
        for &k in &self.interior_nodes {
            out.values[k] = f(self.point(k));
        }
        out
    }

    pub fn vector_from_fn(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> VectorField {
        let mut out = self.zero_vectors();
        for &k in &self.interior_nodes {
            out.values[k] = f(self.point(k));
        }
        out
    }

    /// Scatters a vector over interior nodes into a full field.
    pub fn scalar_from_interior(&self, v: &[f64]) -> ScalarField {
        debug_assert_eq!(v.len(), self.interior_count());
        let mut out = self.zeros();
        for (x, &k) in v.iter().zip(&self.interior_nodes) {
            out.values[k] = *x;
        }
        out
    }

    pub fn interior_values(&self, f: &ScalarField) -> Vec<f64> {
        self.interior_nodes.iter().map(|&k| f.values[k]).collect()
    }

    fn check(&self, key: GridKey) -> Result<()> {
        if key == self.key() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// `h^2 * sum_interior f g`, the quadrature of `int_D f g`.
    pub fn dot(&self, f: &ScalarField, g: &ScalarField) -> Result<f64> {
        self.check(f.key)?;
        self.check(g.key)?;
        Ok(self.h * self.h
            * self
                .interior_nodes
                .iter()
                .map(|&k| f.values[k] * g.values[k])
                .sum::<f64>())
    }

    /// L2 pairing of vector fields.
    pub fn dot_vectors(&self, u: &VectorField, v: &VectorField) -> Result<f64> {
        self.check(u.key)?;
        self.check(v.key)?;
        Ok(self.h * self.h
            * self
                .interior_nodes
                .iter()
                .map(|&k| u.values[k][0] * v.values[k][0] + u.values[k][1] * v.values[k][1])
                .sum::<f64>())
    }

    /// `h^2 * sum_interior f` (quadrature of `int_D f`).
    pub fn integral(&self, f: &ScalarField) -> Result<f64> {
        self.check(f.key)?;
        Ok(self.h * self.h * self.interior_nodes.iter().map(|&k| f.values[k]).sum::<f64>())
    }

    /// Discrete Dirichlet energy `sum over edges (f_a - f_b)^2`, approximating `int |grad f|^2`.
    pub fn gradient_energy_interior(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (a, &k) in self.interior_nodes.iter().enumerate() {
            let fa = v[a];
            // count each edge once: east and north, plus edges to exterior nodes on all sides
            for (dir, nb) in self.neighbors(k).into_iter().enumerate() {
                let fb = match nb.and_then(|n| self.interior_index(n)) {
                    Some(b) => {
                        if dir == 1 || dir == 3 {
                            continue;
                        }
                        v[b]
                    }
                    None => 0.0,
                };
                acc += (fa - fb) * (fa - fb);
            }
        }
        acc
    }
}

/// One real value per node; zero at non-interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub key: GridKey,
    pub values: Vec<f64>,
}

/// One 2-vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub key: GridKey,
    pub values: Vec<[f64; 2]>,
}

impl ScalarField {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        ScalarField {
            key: self.key,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_quarter_spacing_has_nine_interior_nodes() {
        let g = build_grid(Domain::UnitSquare, 0.25).unwrap();
        let mut pts: Vec<[f64; 2]> = g.interior_nodes().iter().map(|&k| g.point(k)).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected = Vec::new();
        for x in [0.25, 0.5, 0.75] {
            for y in [0.25, 0.5, 0.75] {
                expected.push([x, y]);
            }
        }
        assert_eq!(pts, expected);
    }

    #[test]
    fn disk_half_spacing_enumeration() {
        // The h = 1/2 lattice has 9 points with |x| < 1: the origin, four
        // axis points at distance 1/2 and four diagonal points at 1/sqrt(2).
        let g = build_grid(Domain::UnitDisk, 0.5).unwrap();
        assert_eq!(g.interior_count(), 9);
        assert!(g.interior_nodes().iter().any(|&k| g.point(k) == [0.0, 0.0]));
        for &k in g.interior_nodes() {
            let p = g.point(k);
            assert!(p[0].hypot(p[1]) < 1.0);
        }
    }

    #[test]
    fn square_128_interior_count() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 128.0).unwrap();
        assert_eq!(g.interior_count(), 127 * 127);
    }

    #[test]
    fn rejects_bad_spacing() {
        assert!(build_grid(Domain::UnitSquare, 0.0).is_err());
        assert!(build_grid(Domain::UnitSquare, 0.7).is_err());
        assert!(build_grid(Domain::UnitSquare, 0.3).is_err());
        assert!(build_grid(Domain::UnitDisk, -0.1).is_err());
    }

    #[test]
    fn inner_layer_limits() {
        let g = build_grid(Domain::UnitDisk, 1.0 / 16.0).unwrap();
        assert!(g.inner_layer_mask(1.0).iter().all(|&b| !b));
        assert_eq!(g.inner_layer_mask(1e-12), g.interior_mask().to_vec());
        let s = build_grid(Domain::UnitSquare, 1.0 / 16.0).unwrap();
        assert!(s.inner_layer_mask(0.5).iter().all(|&b| !b));
    }

    #[test]
    fn inner_layer_on_disk_matches_radius() {
        let h = 1.0 / 64.0;
        let g = build_grid(Domain::UnitDisk, h).unwrap();
        let mask = g.inner_layer_mask(0.25);
        for (k, p) in g.nodes().enumerate() {
            let rho = p[0].hypot(p[1]);
            if rho < 0.75 - h {
                assert!(mask[k]);
            }
            if rho > 0.75 + h {
                assert!(!mask[k]);
            }
        }
    }

    #[test]
    fn areas_from_constant_fields() {
        for (domain, area) in [(Domain::UnitSquare, 1.0), (Domain::UnitDisk, std::f64::consts::PI)] {
            let h = 1.0 / 128.0;
            let g = build_grid(domain, h).unwrap();
            let one = g.scalar_from_fn(|_| 1.0);
            let a = g.dot(&one, &one).unwrap();
            assert!((a - area).abs() < 4.0 * h * area, "{domain:?}: {a}");
        }
    }

    #[test]
    fn odd_even_orthogonality_is_exact() {
        let g = build_grid(Domain::UnitSquare, 1.0 / 32.0).unwrap();
        let f = g.scalar_from_fn(|p| (p[0] - 0.5).powi(2) + p[1]);
        let o = g.scalar_from_fn(|p| (p[0] - 0.5) * (1.0 + p[1] * p[1]));
        assert_eq!(g.dot(&f, &o).unwrap(), 0.0);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = build_grid(Domain::UnitSquare, 1.0 / 8.0).unwrap();
        let b = build_grid(Domain::UnitSquare, 1.0 / 16.0).unwrap();
        let f = a.zeros();
        let g = b.zeros();
        assert!(matches!(a.dot(&f, &g), Err(Error::GridMismatch)));
    }

    #[test]
    fn boundary_distance_is_one_lipschitz() {
        for domain in [Domain::UnitSquare, Domain::UnitDisk] {
            let g = build_grid(domain, 1.0 / 32.0).unwrap();
            let d = g.boundary_distance();
            for k in 0..g.node_count() {
                for nb in g.neighbors(k).into_iter().flatten() {
                    assert!((d[k] - d[nb]).abs() <= g.h() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn refinement_consistency_of_dot() {
        let f = |p: [f64; 2]| (std::f64::consts::PI * p[0]).sin() * (std::f64::consts::PI * p[1]).sin();
        let mut prev = None;
        for n in [16usize, 32, 64] {
            let g = build_grid(Domain::UnitSquare, 1.0 / n as f64).unwrap();
            let s = g.scalar_from_fn(f);
            let v = g.dot(&s, &s).unwrap();
            if let Some(p) = prev {
                let diff: f64 = v - p;
                assert!(diff.abs() <= 2.0 / n as f64);
            }
            prev = Some(v);
        }
    }
}
