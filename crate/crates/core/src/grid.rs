//! Staggered box grid, field containers, boundary bookkeeping and discrete norms.
//!
//! Velocity components live on extended node sets: every component array
//! also carries the nodes sitting on the walls where that component is
//! prescribed, so Dirichlet values are stored in place. Per axis a component
//! is laid out on one of three [`AxisKind`]s; node extents are the lengths of
//! the finite-volume control intervals and vanish for wall nodes that only
//! carry boundary values.

use std::sync::Arc;

use faer::{Mat, Side};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    /// Nodes on cell faces `i h`, `i = 0..=n`.
    Face,
    /// Wall node, the `n` cell centres, wall node.
    CenterWalls,
    /// Bottom wall node followed by the cell centres; no top node.
    CenterBottomWall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub kind: AxisKind,
    pub n: usize,
    pub h: f64,
    pub len: f64,
}

impl Axis {
    pub fn count(&self) -> usize {
        match self.kind {
            AxisKind::Face | AxisKind::CenterBottomWall => self.n + 1,
            AxisKind::CenterWalls => self.n + 2,
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        match self.kind {
            AxisKind::Face if i == self.n => self.len,
            AxisKind::Face => i as f64 * self.h,
            AxisKind::CenterWalls if i == self.n + 1 => self.len,
            AxisKind::CenterWalls | AxisKind::CenterBottomWall if i == 0 => 0.0,
            AxisKind::CenterWalls | AxisKind::CenterBottomWall => (i as f64 - 0.5) * self.h,
        }
    }

    pub fn extent(&self, i: usize) -> f64 {
        match self.kind {
            AxisKind::Face if i == 0 || i == self.n => 0.5 * self.h,
            AxisKind::Face => self.h,
            AxisKind::CenterWalls if i == 0 || i == self.n + 1 => 0.0,
            AxisKind::CenterBottomWall if i == 0 => 0.0,
            _ => self.h,
        }
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        match self.kind {
            AxisKind::Face => i == 0 || i == self.n,
            AxisKind::CenterWalls => i == 0 || i == self.n + 1,
            AxisKind::CenterBottomWall => i == 0,
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.count()).map(|i| self.coord(i)).collect()
    }
}

/// Uniform grid on `(0, lx) x (0, ly) x (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
}

impl BoxGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 || nz < 4 {
            return Err(Error::InvalidParams(format!(
                "grid needs at least 4 cells per axis, got {nx}x{ny}x{nz}"
            )));
        }
        if !(lx.is_finite() && lx > 0.0 && ly.is_finite() && ly > 0.0) {
            return Err(Error::InvalidParams("grid extents must be positive".into()));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            lx,
            ly,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
            hz: 1.0 / nz as f64,
        })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n, 1.0, 1.0)
    }

    pub fn ncells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.hx * self.hy * self.hz
    }

    pub fn volume(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ny + j) * self.nz + k
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.hx,
            (j as f64 + 0.5) * self.hy,
            (k as f64 + 0.5) * self.hz,
        ]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        [self.hx, self.hy, self.hz][axis]
    }

    pub fn cells_along(&self, axis: usize) -> usize {
        [self.nx, self.ny, self.nz][axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        [self.lx, self.ly, 1.0][axis]
    }

    pub fn axis(&self, axis: usize, kind: AxisKind) -> Axis {
        Axis { kind, n: self.cells_along(axis), h: self.spacing(axis), len: self.length(axis) }
    }

    /// Axis layouts of velocity component `comp`.
    pub fn velocity_axes(&self, comp: usize) -> [Axis; 3] {
        use AxisKind::*;
        match comp {
            0 => [self.axis(0, Face), self.axis(1, CenterWalls), self.axis(2, CenterBottomWall)],
            1 => [self.axis(0, CenterWalls), self.axis(1, Face), self.axis(2, CenterBottomWall)],
            _ => [self.axis(0, CenterWalls), self.axis(1, CenterWalls), self.axis(2, Face)],
        }
    }

    pub fn velocity_dims(&self, comp: usize) -> [usize; 3] {
        let a = self.velocity_axes(comp);
        [a[0].count(), a[1].count(), a[2].count()]
    }

    pub fn velocity_index(&self) -> VelocityIndex {
        VelocityIndex::new(self)
    }

    fn check_scalar(&self, f: &ScalarField) -> Result<()> {
        if f.data.dim() != self.shape() {
            return Err(Error::DimensionMismatch("scalar field"));
        }
        Ok(())
    }

    fn check_velocity(&self, v: &VelocityField) -> Result<()> {
        for c in 0..3 {
            let d = self.velocity_dims(c);
            if v.c[c].dim() != (d[0], d[1], d[2]) {
                return Err(Error::DimensionMismatch("velocity field"));
            }
        }
        Ok(())
    }

    /// Cell divergence `sum of outward face fluxes / cell volume`.
    pub fn divergence(&self, v: &VelocityField) -> Result<ScalarField> {
        self.check_velocity(v)?;
        let mut out = ScalarField::zeros(self);
        for ((i, j, k), d) in out.data.indexed_iter_mut() {
            *d = (v.c[0][[i + 1, j + 1, k + 1]] - v.c[0][[i, j + 1, k + 1]]) / self.hx
                + (v.c[1][[i + 1, j + 1, k + 1]] - v.c[1][[i + 1, j, k + 1]]) / self.hy
                + (v.c[2][[i + 1, j + 1, k + 1]] - v.c[2][[i + 1, j + 1, k]]) / self.hz;
        }
        Ok(out)
    }

    /// Entries `(cell, velocity node, coefficient)` of the flux divergence
    /// `vol * div`.
    pub fn flux_divergence_entries(&self, mut f: impl FnMut(usize, usize, f64)) {
        let idx = self.velocity_index();
        let (ax, ay, az) = (self.hy * self.hz, self.hx * self.hz, self.hx * self.hy);
        for i in 0..self.nx {
            for j in 0..self.ny {
                for k in 0..self.nz {
                    let cell = self.cell_index(i, j, k);
                    f(cell, idx.id(0, [i + 1, j + 1, k + 1]), ax);
                    f(cell, idx.id(0, [i, j + 1, k + 1]), -ax);
                    f(cell, idx.id(1, [i + 1, j + 1, k + 1]), ay);
                    f(cell, idx.id(1, [i + 1, j, k + 1]), -ay);
                    f(cell, idx.id(2, [i + 1, j + 1, k + 1]), az);
                    f(cell, idx.id(2, [i + 1, j + 1, k]), -az);
                }
            }
        }
    }

    /// Discrete gradient of a cell field on the interior normal faces;
    /// all other nodes are zero.
    pub fn gradient(&self, q: &ScalarField) -> Result<VelocityField> {
        self.check_scalar(q)?;
        let mut v = VelocityField::zeros(self);
        for i in 1..self.nx {
            for j in 0..self.ny {
                for k in 0..self.nz {
                    v.c[0][[i, j + 1, k + 1]] = (q.data[[i, j, k]] - q.data[[i - 1, j, k]]) / self.hx;
                }
            }
        }
        for i in 0..self.nx {
            for j in 1..self.ny {
                for k in 0..self.nz {
                    v.c[1][[i + 1, j, k + 1]] = (q.data[[i, j, k]] - q.data[[i, j - 1, k]]) / self.hy;
                }
            }
        }
        for i in 0..self.nx {
            for j in 0..self.ny {
                for k in 1..self.nz {
                    v.c[2][[i + 1, j + 1, k]] = (q.data[[i, j, k]] - q.data[[i, j, k - 1]]) / self.hz;
                }
            }
        }
        Ok(v)
    }

    /// Shapes of the three vorticity component arrays.
    pub fn curl_dims(&self) -> [[usize; 3]; 3] {
        let (nx, ny, nz) = self.shape();
        [[nx + 2, ny + 1, nz], [nx + 1, ny + 2, nz], [nx + 1, ny + 1, nz + 1]]
    }

    /// Quadrature weights of the vorticity edges. The tangential components
    /// stop one layer below the free surface; their last layer absorbs the
    /// remaining half cell.
    pub fn curl_weight(&self, comp: usize, e: [usize; 3]) -> f64 {
        use AxisKind::*;
        let wz = |k: usize| {
            if k == 0 {
                0.5 * self.hz
            } else if k + 1 == self.nz {
                1.5 * self.hz
            } else {
                self.hz
            }
        };
        match comp {
            0 => self.axis(0, CenterWalls).extent(e[0]) * self.axis(1, Face).extent(e[1]) * wz(e[2]),
            1 => self.axis(0, Face).extent(e[0]) * self.axis(1, CenterWalls).extent(e[1]) * wz(e[2]),
            _ => {
                self.axis(0, Face).extent(e[0])
                    * self.axis(1, Face).extent(e[1])
                    * self.axis(2, CenterBottomWall).extent(e[2])
            }
        }
    }

    pub fn curl_len(&self) -> usize {
        self.curl_dims().iter().map(|d| d[0] * d[1] * d[2]).sum()
    }

    /// Entries `(edge, velocity node, coefficient)` of the edge curl.
    pub fn curl_entries(&self, mut f: impl FnMut(usize, usize, f64)) {
        let idx = self.velocity_index();
        let dims = self.curl_dims();
        let mut off = [0usize; 3];
        off[1] = dims[0].iter().product();
        off[2] = off[1] + dims[1].iter().product::<usize>();
        // Difference of component `vc` along `axis` between node `n` and its successor.
        let mut diff = |edge: usize, vc: usize, axis: usize, n: [usize; 3], sign: f64| {
            let ax = self.velocity_axes(vc)[axis];
            let mut m = n;
            m[axis] += 1;
            let d = ax.coord(m[axis]) - ax.coord(n[axis]);
            f(edge, idx.id(vc, m), sign / d);
            f(edge, idx.id(vc, n), -sign / d);
        };
        for c in 0..3 {
            let d = dims[c];
            for i in 0..d[0] {
                for j in 0..d[1] {
                    for k in 0..d[2] {
                        let e = off[c] + (i * d[1] + j) * d[2] + k;
                        match c {
                            0 => {
                                diff(e, 2, 1, [i, j, k], 1.0);
                                diff(e, 1, 2, [i, j, k], -1.0);
                            }
                            1 => {
                                diff(e, 0, 2, [i, j, k], 1.0);
                                diff(e, 2, 0, [i, j, k], -1.0);
                            }
                            _ => {
                                diff(e, 1, 0, [i, j, k], 1.0);
                                diff(e, 0, 1, [i, j, k], -1.0);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn curl_weights(&self) -> Vec<f64> {
        let dims = self.curl_dims();
        let mut w = Vec::with_capacity(self.curl_len());
        for (c, d) in dims.iter().enumerate() {
            for i in 0..d[0] {
                for j in 0..d[1] {
                    for k in 0..d[2] {
                        w.push(self.curl_weight(c, [i, j, k]));
                    }
                }
            }
        }
        w
    }

    pub fn curl(&self, v: &VelocityField) -> Result<CurlField> {
        self.check_velocity(v)?;
        let flat = v.to_flat();
        let mut out = vec![0.0; self.curl_len()];
        self.curl_entries(|e, n, c| out[e] += c * flat[n]);
        let dims = self.curl_dims();
        let mut it = out.into_iter();
        let mut take = |d: [usize; 3]| {
            Array3::from_shape_vec((d[0], d[1], d[2]), it.by_ref().take(d[0] * d[1] * d[2]).collect())
                .expect("curl shape")
        };
        let w0 = take(dims[0]);
        let w1 = take(dims[1]);
        let w2 = take(dims[2]);
        Ok(CurlField { c: [w0, w1, w2] })
    }

    /// `||rot v||^2` with the edge quadrature.
    pub fn curl_norm_sq(&self, v: &VelocityField) -> Result<f64> {
        let w = self.curl(v)?;
        let weights = self.curl_weights();
        Ok(w.to_flat().iter().zip(&weights).map(|(a, b)| a * a * b).sum())
    }

    /// Nearest-neighbour links of the extended velocity nodes with nonzero
    /// cross-sectional area.
    pub fn velocity_links(&self) -> Vec<Link> {
        let idx = self.velocity_index();
        let mut links = Vec::new();
        for comp in 0..3 {
            let axes = self.velocity_axes(comp);
            let d = idx.dims[comp];
            for axis in 0..3 {
                let (p, q) = match axis {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                for i in 0..d[0] {
                    for j in 0..d[1] {
                        for k in 0..d[2] {
                            let n = [i, j, k];
                            if n[axis] + 1 >= d[axis] {
                                continue;
                            }
                            let area = axes[p].extent(n[p]) * axes[q].extent(n[q]);
                            if area == 0.0 {
                                continue;
                            }
                            let mut m = n;
                            m[axis] += 1;
                            links.push(Link {
                                a: idx.id(comp, n),
                                b: idx.id(comp, m),
                                comp: comp as u8,
                                axis: axis as u8,
                                start: [i as u32, j as u32, k as u32],
                                area,
                                dist: axes[axis].coord(m[axis]) - axes[axis].coord(n[axis]),
                            });
                        }
                    }
                }
            }
        }
        links
    }

    /// Interior links between adjacent cells.
    pub fn cell_links(&self) -> Vec<CellLink> {
        let mut links = Vec::new();
        let areas = [self.hy * self.hz, self.hx * self.hz, self.hx * self.hy];
        for i in 0..self.nx {
            for j in 0..self.ny {
                for k in 0..self.nz {
                    let n = [i, j, k];
                    for axis in 0..3 {
                        if n[axis] + 1 >= self.cells_along(axis) {
                            continue;
                        }
                        let mut m = n;
                        m[axis] += 1;
                        // Normal velocity node on the shared face.
                        let mut face = [n[0] + 1, n[1] + 1, n[2] + 1];
                        face[axis] = m[axis];
                        if axis == 2 {
                            face[2] = m[2];
                        }
                        links.push(CellLink {
                            a: self.cell_index(n[0], n[1], n[2]),
                            b: self.cell_index(m[0], m[1], m[2]),
                            axis: axis as u8,
                            area: areas[axis],
                            dist: self.spacing(axis),
                            face_node: self.velocity_index().id(axis, face),
                        });
                    }
                }
            }
        }
        links
    }

    pub fn h1_seminorm<F: H1Field + ?Sized>(&self, f: &F) -> Result<f64> {
        f.h1_seminorm_sq(self).map(f64::sqrt)
    }

    /// Faces of a boundary region in a fixed order: walls `x=0, x=l, y=0,
    /// y=L, bottom, top`, faces row-major in the tangential cell indices.
    pub fn region(&self, tag: RegionTag) -> BoundaryRegion {
        let walls: &[Wall] = match tag {
            RegionTag::Top => &[Wall::Top],
            RegionTag::Bottom => &[Wall::Bottom],
            RegionTag::Lateral => &[Wall::XLo, Wall::XHi, Wall::YLo, Wall::YHi],
            RegionTag::Gamma0 | RegionTag::Masked => {
                &[Wall::XLo, Wall::XHi, Wall::YLo, Wall::YHi, Wall::Bottom]
            }
        };
        let mut faces = Vec::new();
        for &w in walls {
            let normal = w.normal_axis();
            let (p, q) = w.tangential_axes();
            let (np, nq) = (self.cells_along(p), self.cells_along(q));
            for a in 0..np {
                for b in 0..nq {
                    let mut c = [0.0; 3];
                    c[p] = (a as f64 + 0.5) * self.spacing(p);
                    c[q] = (b as f64 + 0.5) * self.spacing(q);
                    c[normal] = if w.is_high() { self.length(normal) } else { 0.0 };
                    faces.push(BoundaryFace {
                        wall: w,
                        t: [a, b],
                        centroid: c,
                        area: self.spacing(p) * self.spacing(q),
                    });
                }
            }
        }
        BoundaryRegion { tag, faces }
    }

    pub fn h12_gram(&self, region: &BoundaryRegion) -> Result<H12Gram> {
        H12Gram::new(region, GramKind::Gagliardo)
    }
}

/// Global numbering of the extended velocity nodes: `u1`, then `u2`, then `u3`,
/// each in row-major order.
#[derive(Debug, Clone)]
pub struct VelocityIndex {
    pub dims: [[usize; 3]; 3],
    pub offsets: [usize; 4],
}

impl VelocityIndex {
    pub fn new(grid: &BoxGrid) -> Self {
        let dims = [grid.velocity_dims(0), grid.velocity_dims(1), grid.velocity_dims(2)];
        let mut offsets = [0; 4];
        for c in 0..3 {
            offsets[c + 1] = offsets[c] + dims[c].iter().product::<usize>();
        }
        Self { dims, offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets[3]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn id(&self, comp: usize, n: [usize; 3]) -> usize {
        let d = self.dims[comp];
        self.offsets[comp] + (n[0] * d[1] + n[1]) * d[2] + n[2]
    }

    pub fn locate(&self, id: usize) -> (usize, [usize; 3]) {
        let comp = (0..3).find(|&c| id < self.offsets[c + 1]).expect("node id out of range");
        let d = self.dims[comp];
        let r = id - self.offsets[comp];
        (comp, [r / (d[1] * d[2]), (r / d[2]) % d[1], r % d[2]])
    }
}

/// Link between two adjacent nodes of one velocity component.
#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub comp: u8,
    pub axis: u8,
    /// Multi-index of node `a`.
    pub start: [u32; 3],
    pub area: f64,
    pub dist: f64,
}

/// Link between two adjacent cells together with the normal-velocity node
/// on their shared face.
#[derive(Debug, Clone, Copy)]
pub struct CellLink {
    pub a: usize,
    pub b: usize,
    pub axis: u8,
    pub area: f64,
    pub dist: f64,
    pub face_node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub data: Array3<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &BoxGrid) -> Self {
        Self { data: Array3::zeros(grid.shape()) }
    }

    pub fn constant(grid: &BoxGrid, v: f64) -> Self {
        Self { data: Array3::from_elem(grid.shape(), v) }
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(grid: &BoxGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self { data: Array3::from_shape_fn(grid.shape(), |(i, j, k)| f(grid.cell_center(i, j, k))) }
    }

    pub fn from_flat(grid: &BoxGrid, v: &[f64]) -> Result<Self> {
        Array3::from_shape_vec(grid.shape(), v.to_vec())
            .map(|data| Self { data })
            .map_err(|_| Error::DimensionMismatch("scalar field"))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    pub fn l2_norm_sq(&self, grid: &BoxGrid) -> f64 {
        grid.cell_volume() * self.data.iter().map(|v| v * v).sum::<f64>()
    }

    /// `||q||^2_{L2} + |q|^2_{H1}`.
    pub fn h1_norm(&self, grid: &BoxGrid) -> Result<f64> {
        Ok((self.l2_norm_sq(grid) + self.h1_seminorm_sq(grid)?).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Velocity on the extended staggered node sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub c: [Array3<f64>; 3],
}

impl VelocityField {
    pub fn zeros(grid: &BoxGrid) -> Self {
        let mk = |c| {
            let d = grid.velocity_dims(c);
            Array3::zeros((d[0], d[1], d[2]))
        };
        Self { c: [mk(0), mk(1), mk(2)] }
    }

    /// Samples component `c` of `f` at the nodes of component `c`,
    /// wall nodes included.
    pub fn from_fn(grid: &BoxGrid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mk = |c: usize| {
            let a = grid.velocity_axes(c);
            Array3::from_shape_fn((a[0].count(), a[1].count(), a[2].count()), |(i, j, k)| {
                f([a[0].coord(i), a[1].coord(j), a[2].coord(k)])[c]
            })
        };
        Self { c: [mk(0), mk(1), mk(2)] }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.c.iter().map(|a| a.len()).sum());
        for a in &self.c {
            v.extend(a.iter());
        }
        v
    }

    pub fn from_flat(grid: &BoxGrid, v: &[f64]) -> Result<Self> {
        let idx = grid.velocity_index();
        if v.len() != idx.len() {
            return Err(Error::DimensionMismatch("velocity field"));
        }
        let mk = |c: usize| {
            let d = idx.dims[c];
            Array3::from_shape_vec((d[0], d[1], d[2]), v[idx.offsets[c]..idx.offsets[c + 1]].to_vec())
                .expect("velocity shape")
        };
        Ok(Self { c: [mk(0), mk(1), mk(2)] })
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().flat_map(|a| a.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().flat_map(|a| a.iter()).all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { c: [&self.c[0] * s, &self.c[1] * s, &self.c[2] * s] }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self { c: [&self.c[0] - &o.c[0], &self.c[1] - &o.c[1], &self.c[2] - &o.c[2]] }
    }

    pub fn l2_norm_sq(&self, grid: &BoxGrid) -> f64 {
        let vol = node_volumes(grid);
        self.to_flat().iter().zip(&vol).map(|(u, w)| u * u * w).sum()
    }

    pub fn h1_norm(&self, grid: &BoxGrid) -> Result<f64> {
        Ok((self.l2_norm_sq(grid) + self.h1_seminorm_sq(grid)?).sqrt())
    }

    /// Interpolates each component to the cell centres.
    pub fn cell_centered(&self, grid: &BoxGrid) -> [ScalarField; 3] {
        let s = |f: &dyn Fn(usize, usize, usize) -> f64| ScalarField {
            data: Array3::from_shape_fn(grid.shape(), |(i, j, k)| f(i, j, k)),
        };
        let u0 = s(&|i, j, k| 0.5 * (self.c[0][[i, j + 1, k + 1]] + self.c[0][[i + 1, j + 1, k + 1]]));
        let u1 = s(&|i, j, k| 0.5 * (self.c[1][[i + 1, j, k + 1]] + self.c[1][[i + 1, j + 1, k + 1]]));
        let u2 = s(&|i, j, k| 0.5 * (self.c[2][[i + 1, j + 1, k]] + self.c[2][[i + 1, j + 1, k + 1]]));
        [u0, u1, u2]
    }
}

/// Finite-volume measure of every extended velocity node.
pub fn node_volumes(grid: &BoxGrid) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.velocity_index().len());
    for c in 0..3 {
        let a = grid.velocity_axes(c);
        for i in 0..a[0].count() {
            for j in 0..a[1].count() {
                for k in 0..a[2].count() {
                    out.push(a[0].extent(i) * a[1].extent(j) * a[2].extent(k));
                }
            }
        }
    }
    out
}

/// Vorticity on cell edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CurlField {
    pub c: [Array3<f64>; 3],
}

impl CurlField {
    pub fn to_flat(&self) -> Vec<f64> {
        self.c.iter().flat_map(|a| a.iter().copied()).collect()
    }
}

pub trait H1Field {
    fn h1_seminorm_sq(&self, grid: &BoxGrid) -> Result<f64>;
}

impl H1Field for VelocityField {
    fn h1_seminorm_sq(&self, grid: &BoxGrid) -> Result<f64> {
        grid.check_velocity(self)?;
        let u = self.to_flat();
        Ok(grid
            .velocity_links()
            .iter()
            .map(|l| l.area * (u[l.b] - u[l.a]).powi(2) / l.dist)
            .sum())
    }
}

impl H1Field for ScalarField {
    fn h1_seminorm_sq(&self, grid: &BoxGrid) -> Result<f64> {
        grid.check_scalar(self)?;
        let q = self.as_slice();
        Ok(grid
            .cell_links()
            .iter()
            .map(|l| l.area * (q[l.b] - q[l.a]).powi(2) / l.dist)
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Wall {
    XLo,
    XHi,
    YLo,
    YHi,
    Bottom,
    Top,
}

impl Wall {
    pub fn normal_axis(self) -> usize {
        match self {
            Wall::XLo | Wall::XHi => 0,
            Wall::YLo | Wall::YHi => 1,
            Wall::Bottom | Wall::Top => 2,
        }
    }

    pub fn tangential_axes(self) -> (usize, usize) {
        match self.normal_axis() {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    pub fn is_high(self) -> bool {
        matches!(self, Wall::XHi | Wall::YHi | Wall::Top)
    }

    /// Sign of the outward normal along the normal axis.
    pub fn outward_sign(self) -> f64 {
        if self.is_high() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn is_lateral(self) -> bool {
        self.normal_axis() < 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionTag {
    Top,
    Bottom,
    Lateral,
    Gamma0,
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFace {
    pub wall: Wall,
    /// Cell indices along the two tangential axes.
    pub t: [usize; 2],
    pub centroid: [f64; 3],
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRegion {
    pub tag: RegionTag,
    pub faces: Vec<BoundaryFace>,
}

impl BoundaryRegion {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.faces.iter().map(|f| f.area).sum()
    }

    /// Faces selected by `mask`; tagged [`RegionTag::Masked`].
    pub fn subset(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.faces.len() {
            return Err(Error::DimensionMismatch("region mask"));
        }
        let faces: Vec<_> = self.faces.iter().zip(mask).filter(|(_, m)| **m).map(|(f, _)| *f).collect();
        if faces.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(Self { tag: RegionTag::Masked, faces })
    }

    pub fn position(&self, wall: Wall, t: [usize; 2]) -> Option<usize> {
        self.faces.iter().position(|f| f.wall == wall && f.t == t)
    }
}

/// Control partition of `Gamma_0 = bottom + lateral` by a face mask
/// (`true` marks `Gamma_0^1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPartition {
    pub gamma0: Arc<BoundaryRegion>,
    pub mask: Vec<bool>,
    pub gamma01: Arc<BoundaryRegion>,
    pub gamma02: Option<Arc<BoundaryRegion>>,
}

impl ControlPartition {
    pub fn new(grid: &BoxGrid, mask: Vec<bool>) -> Result<Self> {
        let gamma0 = grid.region(RegionTag::Gamma0);
        let gamma01 = gamma0.subset(&mask)?;
        let inv: Vec<bool> = mask.iter().map(|m| !m).collect();
        let gamma02 = gamma0.subset(&inv).ok().map(Arc::new);
        Ok(Self { gamma0: Arc::new(gamma0), mask, gamma01: Arc::new(gamma01), gamma02 })
    }

    /// Lateral walls carry the velocity control, the bottom the fixed data.
    pub fn lateral(grid: &BoxGrid) -> Self {
        let gamma0 = grid.region(RegionTag::Gamma0);
        let mask = gamma0.faces.iter().map(|f| f.wall.is_lateral()).collect();
        Self::new(grid, mask).expect("lateral region is never empty")
    }
}

/// Scalar or 3-vector data on the faces of one region, face-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryField {
    pub region: Arc<BoundaryRegion>,
    pub ncomp: usize,
    pub values: Vec<f64>,
    /// Normal component is pinned to zero away from the bottom and the
    /// region carries zero net normal flux.
    pub normal_constrained: bool,
}

impl BoundaryField {
    pub fn zeros(region: Arc<BoundaryRegion>, ncomp: usize) -> Self {
        let n = region.len() * ncomp;
        Self { region, ncomp, values: vec![0.0; n], normal_constrained: false }
    }

    pub fn from_fn(region: Arc<BoundaryRegion>, ncomp: usize, f: impl Fn(&BoundaryFace) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(region.len() * ncomp);
        for face in &region.faces {
            let v = f(face);
            assert_eq!(v.len(), ncomp, "boundary value arity");
            values.extend(v);
        }
        Self { region, ncomp, values, normal_constrained: false }
    }

    pub fn constrained(mut self) -> Self {
        self.normal_constrained = true;
        self
    }

    pub fn get(&self, face: usize, comp: usize) -> f64 {
        self.values[face * self.ncomp + comp]
    }

    pub fn component(&self, comp: usize) -> Vec<f64> {
        self.values.iter().skip(comp).step_by(self.ncomp).copied().collect()
    }

    pub fn set_component(&mut self, comp: usize, v: &[f64]) {
        for (f, x) in v.iter().enumerate() {
            self.values[f * self.ncomp + comp] = *x;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut o = self.clone();
        o.values.iter_mut().for_each(|v| *v *= s);
        o
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sum area * v.n` over the region (vector fields only).
    pub fn net_normal_flux(&self) -> f64 {
        if self.ncomp != 3 {
            return 0.0;
        }
        self.region
            .faces
            .iter()
            .enumerate()
            .map(|(i, f)| f.area * f.wall.outward_sign() * self.get(i, f.wall.normal_axis()))
            .sum()
    }

    /// Checks the zero-normal-trace constraints away from the bottom and
    /// the zero net flux.
    pub fn check_normal_constraints(&self, tol: f64) -> Result<()> {
        if self.ncomp != 3 {
            return Ok(());
        }
        for (i, f) in self.region.faces.iter().enumerate() {
            if f.wall != Wall::Bottom && self.get(i, f.wall.normal_axis()).abs() > tol {
                return Err(Error::ConstraintViolation(format!(
                    "nonzero normal component on {:?} face {:?}",
                    f.wall, f.t
                )));
            }
        }
        let flux = self.net_normal_flux();
        if flux.abs() > tol * self.region.area().max(1.0) {
            return Err(Error::FluxIncompatible(flux));
        }
        Ok(())
    }

    /// Zeroes the normal components off the bottom and removes the mean
    /// normal flux from the bottom faces.
    pub fn impose_normal_constraints(&mut self) {
        if self.ncomp != 3 {
            return;
        }
        let faces = self.region.faces.clone();
        let (mut flux, mut area) = (0.0, 0.0);
        for (i, f) in faces.iter().enumerate() {
            let a = f.wall.normal_axis();
            if f.wall == Wall::Bottom {
                flux += f.area * self.get(i, 2);
                area += f.area;
            } else {
                self.values[i * 3 + a] = 0.0;
            }
        }
        if area > 0.0 {
            let mean = flux / area;
            for (i, f) in faces.iter().enumerate() {
                if f.wall == Wall::Bottom {
                    self.values[i * 3 + 2] -= mean;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GramKind {
    /// `L2` part plus the Gagliardo double sum.
    #[default]
    Gagliardo,
    /// Area-weighted `L2` only.
    L2,
}

/// Gram matrix of the discrete boundary norm
/// `||v||^2 = sum w_i v_i^2 + sum_{i != j} w_i w_j (v_i - v_j)^2 / |x_i - x_j|^3`.
#[derive(Debug, Clone)]
pub struct H12Gram {
    pub kind: GramKind,
    pub areas: Vec<f64>,
    pub centroids: Vec<[f64; 3]>,
    rowsum: Vec<f64>,
}

impl H12Gram {
    pub fn new(region: &BoundaryRegion, kind: GramKind) -> Result<Self> {
        if region.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let areas: Vec<f64> = region.faces.iter().map(|f| f.area).collect();
        let centroids: Vec<[f64; 3]> = region.faces.iter().map(|f| f.centroid).collect();
        Ok(Self::from_points(areas, centroids, kind))
    }

    pub fn from_points(areas: Vec<f64>, centroids: Vec<[f64; 3]>, kind: GramKind) -> Self {
        let n = areas.len();
        let mut g = Self { kind, areas, centroids, rowsum: vec![0.0; n] };
        if kind == GramKind::Gagliardo {
            g.rowsum = (0..n).map(|i| (0..n).filter(|&j| j != i).map(|j| g.kernel(i, j)).sum()).collect();
        }
        g
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    fn kernel(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.centroids[i], self.centroids[j]);
        let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        self.areas[i] * self.areas[j] / (r * r * r)
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match (self.kind, i == j) {
            (GramKind::L2, true) => self.areas[i],
            (GramKind::L2, false) => 0.0,
            (GramKind::Gagliardo, true) => self.areas[i] + 2.0 * self.rowsum[i],
            (GramKind::Gagliardo, false) => -2.0 * self.kernel(i, j),
        }
    }

    /// `G v` for one scalar block.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(v.len(), n, "gram block size");
        (0..n)
            .map(|i| match self.kind {
                GramKind::L2 => self.areas[i] * v[i],
                GramKind::Gagliardo => {
                    let mut s = (self.areas[i] + 2.0 * self.rowsum[i]) * v[i];
                    for (j, vj) in v.iter().enumerate() {
                        if j != i {
                            s -= 2.0 * self.kernel(i, j) * vj;
                        }
                    }
                    s
                }
            })
            .collect()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.apply(a).iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Seminorm part of `||v||^2` evaluated as the double sum.
    pub fn seminorm_sq(&self, v: &[f64]) -> f64 {
        if self.kind == GramKind::L2 {
            return 0.0;
        }
        let n = self.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += self.kernel(i, j) * (v[i] - v[j]).powi(2);
                }
            }
        }
        s
    }

    /// `||v||^2` of a face-major field with `ncomp` components, block by block.
    pub fn norm_sq(&self, f: &BoundaryField) -> f64 {
        (0..f.ncomp).map(|c| {
            let v = f.component(c);
            self.inner(&v, &v)
        })
        .sum()
    }

    pub fn matrix(&self) -> Mat<f64> {
        let n = self.len();
        Mat::from_fn(n, n, |i, j| self.entry(i, j))
    }

    /// Cholesky factor of the principal submatrix on `dofs`.
    pub fn factor(&self, dofs: &[usize]) -> Result<GramFactor> {
        let m = dofs.len();
        let a = Mat::from_fn(m, m, |i, j| self.entry(dofs[i], dofs[j]));
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::LinearSolver(format!("boundary Gram matrix not positive definite: {e:?}")))?;
        Ok(GramFactor { llt, n: m })
    }
}

pub struct GramFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    n: usize,
}

impl GramFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        use faer::prelude::*;
        assert_eq!(b.len(), self.n, "gram rhs size");
        let mut m = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> BoxGrid {
        BoxGrid::cube(n).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(BoxGrid::cube(3).is_err());
        assert!(BoxGrid::new(4, 4, 4, 0.0, 1.0).is_err());
    }

    #[test]
    fn divergence_examples() {
        let g = BoxGrid::new(5, 6, 4, 1.5, 0.7).unwrap();
        let c = g.divergence(&VelocityField::from_fn(&g, |_| [1.0, 0.0, 0.0])).unwrap();
        assert!(c.max_abs() < 1e-13);
        let lin = g.divergence(&VelocityField::from_fn(&g, |x| [x[0], 0.0, 0.0])).unwrap();
        assert!(lin.data.iter().all(|d| (d - 1.0).abs() < 1e-12));
        let free = g.divergence(&VelocityField::from_fn(&g, |x| [x[0], -x[1], 0.0])).unwrap();
        assert!(free.max_abs() < 1e-12);
    }

    #[test]
    fn divergence_rejects_wrong_shapes() {
        let v = VelocityField::zeros(&grid(5));
        assert!(matches!(grid(4).divergence(&v), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn curl_examples() {
        let g = BoxGrid::new(6, 5, 4, 1.2, 0.9).unwrap();
        let grad = VelocityField::from_fn(&g, |x| [x[1] * x[2], x[0] * x[2], x[0] * x[1]]);
        let w = g.curl(&grad).unwrap();
        assert!(w.to_flat().iter().all(|v| v.abs() < 1e-12));

        let rot = VelocityField::from_fn(&g, |x| [-x[1], x[0], 0.0]);
        let w = g.curl(&rot).unwrap();
        let (nx, ny, nz) = g.shape();
        for i in 1..nx {
            for j in 1..ny {
                for k in 1..=nz {
                    assert!((w.c[2][[i, j, k]] - 2.0).abs() < 1e-12);
                }
            }
        }
        assert!(w.c[0].iter().chain(w.c[1].iter()).all(|v| v.abs() < 1e-12));
        let z = g.curl(&VelocityField::zeros(&g)).unwrap();
        assert!(z.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn curl_weights_cover_domain() {
        let g = BoxGrid::new(4, 5, 6, 2.0, 1.0).unwrap();
        let dims = g.curl_dims();
        for c in 0..3 {
            let mut s = 0.0;
            for i in 0..dims[c][0] {
                for j in 0..dims[c][1] {
                    for k in 0..dims[c][2] {
                        s += g.curl_weight(c, [i, j, k]);
                    }
                }
            }
            assert!((s - g.volume()).abs() < 1e-12, "component {c}: {s}");
        }
    }

    #[test]
    fn h1_seminorm_examples() {
        let mut prev = 0.0;
        for n in [4, 8, 16] {
            let g = grid(n);
            let q = ScalarField::from_fn(&g, |x| x[2]);
            let s = g.h1_seminorm(&q).unwrap();
            assert!(s < 1.0 && s > prev);
            prev = s;
            assert_eq!(g.h1_seminorm(&ScalarField::constant(&g, 3.0)).unwrap(), 0.0);
        }
        assert!((prev * prev - (1.0 - 1.0 / 16.0)).abs() < 1e-12);
        let g = BoxGrid::new(8, 8, 16, 2.0, 2.0).unwrap();
        let s = g.h1_seminorm(&ScalarField::from_fn(&g, |x| x[2])).unwrap();
        assert!((s * s - 4.0 * (1.0 - 1.0 / 16.0)).abs() < 1e-12);
    }

    #[test]
    fn node_volumes_sum_to_domain_per_component() {
        let g = BoxGrid::new(4, 6, 5, 1.3, 0.8).unwrap();
        let vol = node_volumes(&g);
        let idx = g.velocity_index();
        for c in 0..3 {
            let s: f64 = vol[idx.offsets[c]..idx.offsets[c + 1]].iter().sum();
            assert!((s - g.volume()).abs() < 1e-12);
        }
    }

    #[test]
    fn summation_by_parts() {
        let g = BoxGrid::new(5, 4, 6, 1.0, 1.3).unwrap();
        let q = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() + x[1] * x[2]);
        let v = VelocityField::from_fn(&g, |x| [x[1].cos(), x[0] * x[2], (x[0] + x[1]).sin()]);
        let mut v = v;
        // Zero the normal faces on the walls.
        let (nx, ny, nz) = g.shape();
        v.c[0].slice_mut(ndarray::s![0, .., ..]).fill(0.0);
        v.c[0].slice_mut(ndarray::s![nx, .., ..]).fill(0.0);
        v.c[1].slice_mut(ndarray::s![.., 0, ..]).fill(0.0);
        v.c[1].slice_mut(ndarray::s![.., ny, ..]).fill(0.0);
        v.c[2].slice_mut(ndarray::s![.., .., 0]).fill(0.0);
        v.c[2].slice_mut(ndarray::s![.., .., nz]).fill(0.0);
        let div = g.divergence(&v).unwrap();
        let lhs: f64 = g.cell_volume() * q.data.iter().zip(div.data.iter()).map(|(a, b)| a * b).sum::<f64>();
        let grad = g.gradient(&q).unwrap().to_flat();
        let vol = node_volumes(&g);
        let rhs: f64 = grad.iter().zip(v.to_flat()).zip(&vol).map(|((a, b), w)| a * b * w).sum();
        assert!((lhs + rhs).abs() < 1e-12 * (lhs.abs() + 1.0));
    }

    #[test]
    fn flux_entries_match_divergence() {
        let g = BoxGrid::new(4, 5, 4, 1.0, 1.0).unwrap();
        let v = VelocityField::from_fn(&g, |x| [x[1].sin(), x[0] * x[0], x[2] * x[0]]);
        let flat = v.to_flat();
        let mut d = vec![0.0; g.ncells()];
        g.flux_divergence_entries(|c, n, w| d[c] += w * flat[n]);
        let div = g.divergence(&v).unwrap();
        for (a, b) in d.iter().zip(div.as_slice()) {
            assert!((a / g.cell_volume() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn regions_and_masks() {
        let g = BoxGrid::new(4, 5, 6, 1.0, 2.0).unwrap();
        let lat = g.region(RegionTag::Lateral);
        assert_eq!(lat.len(), 2 * 5 * 6 + 2 * 4 * 6);
        assert!((lat.area() - 2.0 * (2.0 + 1.0)).abs() < 1e-12);
        let part = ControlPartition::lateral(&g);
        assert_eq!(part.gamma01.len(), lat.len());
        assert_eq!(part.gamma02.as_ref().unwrap().len(), 20);
        assert!(g.region(RegionTag::Gamma0).subset(&vec![false; part.mask.len()]).is_err());
    }

    #[test]
    fn gram_two_face_toy() {
        let gram = H12Gram::from_points(vec![1.0, 1.0], vec![[0.0; 3], [1.0, 0.0, 0.0]], GramKind::Gagliardo);
        assert_eq!(gram.seminorm_sq(&[0.0, 1.0]), 2.0);
        // Quadratic form = L2 part (1) + seminorm part (2).
        assert!((gram.inner(&[0.0, 1.0], &[0.0, 1.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn gram_constant_and_zero() {
        let g = grid(4);
        let r = g.region(RegionTag::Lateral);
        let gram = g.h12_gram(&r).unwrap();
        let c = vec![2.0; r.len()];
        assert!((gram.inner(&c, &c) - 4.0 * r.area()).abs() < 1e-10);
        assert_eq!(gram.inner(&vec![0.0; r.len()], &vec![0.0; r.len()]), 0.0);
        assert!(H12Gram::new(&BoundaryRegion { tag: RegionTag::Masked, faces: vec![] }, GramKind::L2).is_err());
    }

    #[test]
    fn gram_symmetric_and_spd() {
        let g = grid(4);
        let r = g.region(RegionTag::Gamma0);
        let gram = g.h12_gram(&r).unwrap();
        let m = gram.matrix();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
        let all: Vec<usize> = (0..r.len()).collect();
        assert!(gram.factor(&all).is_ok());
    }

    #[test]
    fn boundary_constraints() {
        let g = grid(4);
        let part = ControlPartition::new(&g, vec![true; g.region(RegionTag::Gamma0).len()]).unwrap();
        let mut f = BoundaryField::from_fn(part.gamma01.clone(), 3, |face| vec![1.0, face.centroid[2], face.centroid[0]]);
        assert!(f.check_normal_constraints(1e-12).is_err());
        f.impose_normal_constraints();
        f.check_normal_constraints(1e-12).unwrap();
        assert!(f.net_normal_flux().abs() < 1e-14);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn boundary_gram_is_symmetric_and_positive(
            nx in 4usize..7, ny in 4usize..7, nz in 4usize..7, lx in 0.5f64..3.0, ly in 0.5f64..3.0,
            keep in proptest::collection::vec(proptest::bool::ANY, 64),
        ) {
            let g = BoxGrid::new(nx, ny, nz, lx, ly).unwrap();
            let r = g.region(RegionTag::Gamma0);
            let gram = g.h12_gram(&r).unwrap();
            let m = gram.matrix();
            for i in 0..m.nrows() {
                for j in 0..i {
                    proptest::prop_assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
            let dofs: Vec<usize> = (0..r.len()).filter(|&i| keep[i % keep.len()]).collect();
            proptest::prop_assume!(!dofs.is_empty());
            proptest::prop_assert!(gram.factor(&dofs).is_ok());
            let v: Vec<f64> = (0..r.len()).map(|i| (i as f64 * 0.37).sin()).collect();
            proptest::prop_assert!(gram.inner(&v, &v) > 0.0);
        }
    }
}
