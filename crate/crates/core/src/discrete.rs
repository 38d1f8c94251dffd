//! Assembled discrete convection system.
//!
//! Unknowns are the interior velocity nodes, the cell temperatures, the
//! cell pressures and a scalar multiplier bordering the continuity rows.
//! Boundary velocity nodes and bottom temperature nodes carry Dirichlet data
//! taken from the controls. Rows are weak residuals tested against nodal
//! basis functions, so every block is volume weighted.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use crate::controls::ControlTriple;
use crate::forms::FormWorkspace;
use crate::grid::{
    node_volumes, BoundaryField, BoundaryRegion, BoxGrid, ControlPartition, GramKind, H12Gram, RegionTag, VelocityIndex,
    Wall,
};
use crate::linalg::{Csr, SaddleOptions, SaddleSolver, SparseLu};
use crate::params::NondimParams;
use crate::{Error, Result};

/// One entry of the map from `Gamma_0` face data to boundary nodes.
#[derive(Debug, Clone, Copy)]
struct BcEntry {
    bnd: usize,
    face: usize,
    comp: usize,
    weight: f64,
}

/// Grid, parameters, boundary partition and all static operators.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: BoxGrid,
    pub params: NondimParams,
    pub partition: ControlPartition,
    pub lateral: Arc<BoundaryRegion>,
    pub bottom: Arc<BoundaryRegion>,
    /// Fixed velocity data on `Gamma_0^2`.
    pub u0: Option<BoundaryField>,
    pub gram_kind: GramKind,
    pub linear: SaddleOptions,
    pub ws: FormWorkspace,
    pub idx: VelocityIndex,
    pub node_vol: Vec<f64>,
    pub vel_int: Vec<Option<usize>>,
    pub int_nodes: Vec<usize>,
    pub vel_bnd: Vec<Option<usize>>,
    pub bnd_nodes: Vec<usize>,
    bc_map: Vec<BcEntry>,
    /// For each `Gamma_0` face: `(in Gamma_0^1, position in its subregion)`.
    g0_pos: Vec<(bool, usize)>,
    pub lateral_cells: Vec<usize>,
    /// Velocity diffusion `a(u, v) = v' kv u` over all nodes.
    pub kv: Csr,
    /// Flux divergence, cells x nodes.
    pub div: Csr,
    /// Tangential temperature gradient on the free surface tested against
    /// the top velocity nodes (without the `Pr M` factor).
    pub marangoni: Csr,
    /// Buoyancy `Pr R` part, nodes x cells.
    pub f_theta: Csr,
    /// Buoyancy `Pr b` part.
    pub f0: Vec<f64>,
    /// Diffusion, Robin and Dirichlet couplings of the temperature rows,
    /// cells x (cells + bottom nodes).
    pub temp_static: Csr,
    /// Lateral flux source, cells x lateral faces.
    pub lateral_source: Csr,
    /// Edge curl, edges x nodes, and its quadrature weights.
    pub curl: Csr,
    pub curl_w: Vec<f64>,
    grams: OnceLock<Arc<Grams>>,
}

/// Boundary Gram matrices of the four data regions.
#[derive(Debug, Clone)]
pub struct Grams {
    pub g: H12Gram,
    pub u0: Option<H12Gram>,
    pub phi1: H12Gram,
    pub phi2: H12Gram,
}

fn gram_of(region: &BoundaryRegion, kind: GramKind) -> H12Gram {
    H12Gram::from_points(
        region.faces.iter().map(|f| f.area).collect(),
        region.faces.iter().map(|f| f.centroid).collect(),
        kind,
    )
}

/// Extended temperature vector layout: cells, then bottom nodes.
impl Problem {
    pub fn new(grid: BoxGrid, params: NondimParams, partition: ControlPartition, u0: Option<BoundaryField>) -> Result<Self> {
        params.validate()?;
        if (grid.lx - params.lx).abs() > 1e-12 * params.lx || (grid.ly - params.ly).abs() > 1e-12 * params.ly {
            return Err(Error::InvalidParams("grid extents differ from l, L".into()));
        }
        if let Some(u0) = &u0 {
            let expected = partition.gamma02.as_ref().ok_or(Error::EmptyRegion)?;
            if u0.ncomp != 3 || u0.region.faces != expected.faces {
                return Err(Error::DimensionMismatch("u0 must live on Gamma_0^2"));
            }
        }
        let ws = FormWorkspace::new(&grid);
        let idx = ws.idx.clone();
        let n = idx.len();
        let mut vel_int = vec![None; n];
        let mut vel_bnd = vec![None; n];
        let (mut int_nodes, mut bnd_nodes) = (Vec::new(), Vec::new());
        for id in 0..n {
            let (c, m) = idx.locate(id);
            let ax = grid.velocity_axes(c);
            if (0..3).any(|e| ax[e].is_boundary(m[e])) {
                vel_bnd[id] = Some(bnd_nodes.len());
                bnd_nodes.push(id);
            } else {
                vel_int[id] = Some(int_nodes.len());
                int_nodes.push(id);
            }
        }

        let gamma0 = partition.gamma0.clone();
        let face_lookup: HashMap<(Wall, [usize; 2]), usize> =
            gamma0.faces.iter().enumerate().map(|(i, f)| ((f.wall, f.t), i)).collect();
        let mut bc_map = Vec::new();
        for (b, &id) in bnd_nodes.iter().enumerate() {
            let (c, m) = idx.locate(id);
            let ax = grid.velocity_axes(c);
            let walls: Vec<usize> = (0..3).filter(|&e| ax[e].is_boundary(m[e])).collect();
            if walls.len() != 1 {
                continue;
            }
            let e = walls[0];
            let wall = match (e, m[e] == 0) {
                (0, true) => Wall::XLo,
                (0, false) => Wall::XHi,
                (1, true) => Wall::YLo,
                (1, false) => Wall::YHi,
                (_, true) => Wall::Bottom,
                (_, false) => Wall::Top,
            };
            if wall == Wall::Top {
                continue;
            }
            let (p, q) = wall.tangential_axes();
            let cells = |axis: usize| -> Vec<(usize, f64)> {
                if axis == c {
                    vec![(m[axis] - 1, 0.5), (m[axis], 0.5)]
                } else {
                    vec![(m[axis] - 1, 1.0)]
                }
            };
            for (tp, wp) in cells(p) {
                for (tq, wq) in cells(q) {
                    let face = face_lookup[&(wall, [tp, tq])];
                    bc_map.push(BcEntry { bnd: b, face, comp: c, weight: wp * wq });
                }
            }
        }
        let (mut n1, mut n2) = (0, 0);
        let g0_pos = partition
            .mask
            .iter()
            .map(|&m| {
                if m {
                    n1 += 1;
                    (true, n1 - 1)
                } else {
                    n2 += 1;
                    (false, n2 - 1)
                }
            })
            .collect();

        let lateral = Arc::new(grid.region(RegionTag::Lateral));
        let bottom = Arc::new(grid.region(RegionTag::Bottom));
        let (nx, ny, nz) = grid.shape();
        let lateral_cells = lateral
            .faces
            .iter()
            .map(|f| match f.wall {
                Wall::XLo => grid.cell_index(0, f.t[0], f.t[1]),
                Wall::XHi => grid.cell_index(nx - 1, f.t[0], f.t[1]),
                Wall::YLo => grid.cell_index(f.t[0], 0, f.t[1]),
                _ => grid.cell_index(f.t[0], ny - 1, f.t[1]),
            })
            .collect::<Vec<_>>();

        let mut t = Vec::new();
        ws.diffusion_entries(|a, b, c| t.push((a, b, c)));
        let kv = Csr::from_triplets(n, n, t);
        let mut t = Vec::new();
        grid.flux_divergence_entries(|c, node, w| t.push((c, node, w)));
        let div = Csr::from_triplets(grid.ncells(), n, t);

        let r = 1.0 / (1.0 + params.bi * 0.5 * grid.hz);
        let mut t = Vec::new();
        let area = grid.hx * grid.hy;
        for i in 1..nx {
            for j in 0..ny {
                let node = idx.id(0, [i, j + 1, nz]);
                t.push((node, grid.cell_index(i, j, nz - 1), area * r / grid.hx));
                t.push((node, grid.cell_index(i - 1, j, nz - 1), -area * r / grid.hx));
            }
        }
        for i in 0..nx {
            for j in 1..ny {
                let node = idx.id(1, [i + 1, j, nz]);
                t.push((node, grid.cell_index(i, j, nz - 1), area * r / grid.hy));
                t.push((node, grid.cell_index(i, j - 1, nz - 1), -area * r / grid.hy));
            }
        }
        let marangoni = Csr::from_triplets(n, grid.ncells(), t);

        let vol = grid.cell_volume();
        let mut f0 = vec![0.0; n];
        let mut t = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                for k in 1..nz {
                    let node = idx.id(2, [i + 1, j + 1, k]);
                    f0[node] = vol * params.pr * params.b;
                    t.push((node, grid.cell_index(i, j, k - 1), 0.5 * vol * params.pr * params.ra));
                    t.push((node, grid.cell_index(i, j, k), 0.5 * vol * params.pr * params.ra));
                }
            }
        }
        let f_theta = Csr::from_triplets(n, grid.ncells(), t);

        let nc = grid.ncells();
        let mut t = Vec::new();
        for l in &ws.cell_links {
            let c = l.area / l.dist;
            t.extend([(l.a, l.a, c), (l.b, l.b, c), (l.a, l.b, -c), (l.b, l.a, -c)]);
        }
        for i in 0..nx {
            for j in 0..ny {
                let bottom_cell = grid.cell_index(i, j, 0);
                let c = area / (0.5 * grid.hz);
                t.push((bottom_cell, bottom_cell, c));
                t.push((bottom_cell, nc + i * ny + j, -c));
                let top = grid.cell_index(i, j, nz - 1);
                t.push((top, top, area * params.bi * r));
            }
        }
        let temp_static = Csr::from_triplets(nc, nc + nx * ny, t);
        let t = lateral_cells.iter().enumerate().map(|(f, &c)| (c, f, lateral.faces[f].area)).collect();
        let lateral_source = Csr::from_triplets(nc, lateral.len(), t);

        let mut t = Vec::new();
        grid.curl_entries(|e, node, c| t.push((e, node, c)));
        let curl = Csr::from_triplets(grid.curl_len(), n, t);
        let curl_w = grid.curl_weights();

        let node_vol = node_volumes(&grid);
        Ok(Self {
            grid,
            params,
            partition,
            lateral,
            bottom,
            u0,
            gram_kind: GramKind::Gagliardo,
            linear: SaddleOptions::default(),
            ws,
            idx,
            node_vol,
            vel_int,
            int_nodes,
            vel_bnd,
            bnd_nodes,
            bc_map,
            g0_pos,
            lateral_cells,
            kv,
            div,
            marangoni,
            f_theta,
            f0,
            temp_static,
            lateral_source,
            curl,
            curl_w,
            grams: OnceLock::new(),
        })
    }

    pub fn set_gram_kind(&mut self, kind: GramKind) {
        self.gram_kind = kind;
        self.grams = OnceLock::new();
    }

    pub fn grams(&self) -> Arc<Grams> {
        self.grams
            .get_or_init(|| {
                let k = self.gram_kind;
                Arc::new(Grams {
                    g: gram_of(&self.partition.gamma01, k),
                    u0: self.partition.gamma02.as_ref().map(|r| gram_of(r, k)),
                    phi1: gram_of(&self.lateral, k),
                    phi2: gram_of(&self.bottom, k),
                })
            })
            .clone()
    }

    /// Boundary norms `(||g||, ||u0||, ||phi1||, ||phi2||)`.
    pub fn data_norms(&self, c: &ControlTriple) -> [f64; 4] {
        let gr = self.grams();
        let u0 = match (&self.u0, &gr.u0) {
            (Some(u0), Some(m)) => m.norm_sq(u0).sqrt(),
            _ => 0.0,
        };
        [gr.g.norm_sq(&c.g).sqrt(), u0, gr.phi1.norm_sq(&c.phi1).sqrt(), gr.phi2.norm_sq(&c.phi2).sqrt()]
    }

    /// Default partition (lateral velocity control, still bottom).
    pub fn standard(grid: BoxGrid, params: NondimParams) -> Result<Self> {
        let partition = ControlPartition::lateral(&grid);
        Self::new(grid, params, partition, None)
    }

    pub fn with_params(&self, params: NondimParams) -> Result<Self> {
        let mut p = Self::new(self.grid, params, self.partition.clone(), self.u0.clone())?;
        p.set_gram_kind(self.gram_kind);
        p.linear = self.linear;
        Ok(p)
    }

    pub fn ncells(&self) -> usize {
        self.grid.ncells()
    }

    pub fn n_bottom(&self) -> usize {
        self.bottom.len()
    }

    pub fn n_int(&self) -> usize {
        self.int_nodes.len()
    }

    pub fn n_bnd(&self) -> usize {
        self.bnd_nodes.len()
    }

    pub fn zero_controls(&self) -> ControlTriple {
        ControlTriple::zeros(&self.partition, self.lateral.clone(), self.bottom.clone())
    }

    pub fn conduction_controls(&self) -> ControlTriple {
        ControlTriple::conduction(&self.partition, self.lateral.clone(), self.bottom.clone(), self.params.theta_c)
    }

    pub fn check_controls(&self, c: &ControlTriple) -> Result<()> {
        if c.g.region.faces != self.partition.gamma01.faces
            || c.phi1.region.faces != self.lateral.faces
            || c.phi2.region.faces != self.bottom.faces
        {
            return Err(Error::DimensionMismatch("control regions"));
        }
        c.validate()
    }

    /// Net outward flux of the combined velocity data on `Gamma_0`.
    pub fn data_flux(&self, g: &BoundaryField) -> f64 {
        g.net_normal_flux() + self.u0.as_ref().map_or(0.0, BoundaryField::net_normal_flux)
    }

    /// Dirichlet values of the boundary velocity nodes.
    pub fn boundary_values(&self, g: &BoundaryField) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bnd()];
        for e in &self.bc_map {
            let (in1, pos) = self.g0_pos[e.face];
            let v = if in1 {
                g.get(pos, e.comp)
            } else {
                self.u0.as_ref().map_or(0.0, |u0| u0.get(pos, e.comp))
            };
            out[e.bnd] += e.weight * v;
        }
        out
    }

    /// Transpose of the face-to-node map: face-major 3-vectors on all of
    /// `Gamma_0`.
    pub fn boundary_trace(&self, lam_bnd: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.partition.gamma0.len()];
        for e in &self.bc_map {
            out[e.face * 3 + e.comp] += e.weight * lam_bnd[e.bnd];
        }
        out
    }

    /// Transpose of [`Self::boundary_values`] restricted to the control `g`:
    /// face-major 3-vectors on `Gamma_0^1`.
    pub fn boundary_values_transpose(&self, lam_bnd: &[f64]) -> Vec<f64> {
        let all = self.boundary_trace(lam_bnd);
        let mut out = vec![0.0; 3 * self.partition.gamma01.len()];
        for (f, &(in1, pos)) in self.g0_pos.iter().enumerate() {
            if in1 {
                out[pos * 3..pos * 3 + 3].copy_from_slice(&all[f * 3..f * 3 + 3]);
            }
        }
        out
    }

    pub fn full_velocity(&self, u_int: &[f64], u_bnd: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.idx.len()];
        for (i, &id) in self.int_nodes.iter().enumerate() {
            u[id] = u_int[i];
        }
        for (i, &id) in self.bnd_nodes.iter().enumerate() {
            u[id] = u_bnd[i];
        }
        u
    }

    pub fn interior_part(&self, u: &[f64]) -> Vec<f64> {
        self.int_nodes.iter().map(|&id| u[id]).collect()
    }

    pub fn boundary_part(&self, u: &[f64]) -> Vec<f64> {
        self.bnd_nodes.iter().map(|&id| u[id]).collect()
    }

    pub fn theta_ext(&self, theta: &[f64], phi2: &[f64]) -> Vec<f64> {
        theta.iter().chain(phi2).copied().collect()
    }

    /// Entries `(cell, extended temperature, coefficient)` of the
    /// temperature operator with frozen velocity `u`.
    pub fn temperature_entries(&self, u: &[f64], mut f: impl FnMut(usize, usize, f64)) {
        for r in 0..self.temp_static.nrows {
            for (c, v) in self.temp_static.row(r) {
                f(r, c, v);
            }
        }
        for l in &self.ws.cell_links {
            let c = 0.5 * l.area * u[l.face_node];
            if c != 0.0 {
                f(l.a, l.b, c);
                f(l.b, l.a, -c);
            }
        }
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let area = self.grid.hx * self.grid.hy;
        let nc = self.ncells();
        for i in 0..nx {
            for j in 0..ny {
                let u3 = u[self.idx.id(2, [i + 1, j + 1, 0])];
                if u3 != 0.0 {
                    f(self.grid.cell_index(i, j, 0), nc + i * ny + j, -0.5 * area * u3);
                }
            }
        }
    }

    /// Entries `(cell, velocity node, coefficient)` of the derivative of
    /// the temperature rows with respect to the advecting velocity.
    pub fn temperature_velocity_entries(&self, theta_ext: &[f64], mut f: impl FnMut(usize, usize, f64)) {
        for l in &self.ws.cell_links {
            f(l.a, l.face_node, 0.5 * l.area * theta_ext[l.b]);
            f(l.b, l.face_node, -0.5 * l.area * theta_ext[l.a]);
        }
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let area = self.grid.hx * self.grid.hy;
        let nc = self.ncells();
        for i in 0..nx {
            for j in 0..ny {
                let node = self.idx.id(2, [i + 1, j + 1, 0]);
                f(self.grid.cell_index(i, j, 0), node, -0.5 * area * theta_ext[nc + i * ny + j]);
            }
        }
    }

    /// Skew temperature advection form `c1(u, theta_ext, w)` of the
    /// discrete rows, with `w` given on cells.
    pub fn temperature_advection_form(&self, u: &[f64], theta_ext: &[f64], w: &[f64]) -> f64 {
        let mut s = 0.0;
        self.temperature_velocity_entries(theta_ext, |row, node, c| s += c * w[row] * u[node]);
        s
    }

    /// Temperature rows `T(u) theta_ext - S phi1`.
    pub fn temperature_residual(&self, u: &[f64], theta_ext: &[f64], phi1: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.lateral_source.matvec(phi1).iter().map(|v| -v).collect();
        self.temperature_entries(u, |row, col, c| r[row] += c * theta_ext[col]);
        r
    }

    /// Momentum rows over all nodes (boundary rows are meaningless).
    pub fn momentum_residual_full(&self, u: &[f64], theta: &[f64], p: &[f64]) -> Vec<f64> {
        let pp = &self.params;
        let mut r: Vec<f64> = self.kv.matvec(u).iter().map(|v| pp.pr * v).collect();
        self.ws.advection_entries(u, |z, v, c| r[z] += c * u[v]);
        let mar = self.marangoni.matvec(theta);
        let ft = self.f_theta.matvec(theta);
        let gp = self.div.matvec_t(p);
        for i in 0..r.len() {
            r[i] += pp.pr * pp.ma * mar[i] - ft[i] - self.f0[i] - pp.pr * gp[i];
        }
        r
    }

    /// Residual of the full system at `(u, theta_ext, p, mu)`:
    /// interior momentum rows, temperature rows, continuity rows, mean.
    pub fn residual(&self, u: &[f64], theta_ext: &[f64], p: &[f64], mu: f64, phi1: &[f64]) -> SystemResidual {
        let nc = self.ncells();
        let rf = self.momentum_residual_full(u, &theta_ext[..nc], p);
        let momentum = self.interior_part(&rf);
        let temperature = self.temperature_residual(u, theta_ext, phi1);
        let continuity = self.div.matvec(u).iter().map(|v| v + mu).collect();
        SystemResidual { momentum, temperature, continuity, mean: p.iter().sum() }
    }

    /// Solves the temperature rows for the cell values with frozen `u`.
    pub fn solve_temperature(&self, u: &[f64], phi1: &[f64], phi2: &[f64]) -> Result<Vec<f64>> {
        let nc = self.ncells();
        let mut t = Vec::new();
        let mut rhs = self.lateral_source.matvec(phi1);
        self.temperature_entries(u, |row, col, c| {
            if col < nc {
                t.push((row, col, c));
            } else {
                rhs[row] -= c * phi2[col - nc];
            }
        });
        let a = Csr::from_triplets(nc, nc, t);
        SparseLu::new(&a)?.solve(&rhs)
    }

    fn pressure_precond(&self) -> Vec<f64> {
        vec![-1.0 / self.grid.cell_volume(); self.ncells()]
    }

    /// Oseen saddle solve: velocity advected by `u_adv`, forced by
    /// buoyancy and the free-surface Marangoni stress of `theta`, with
    /// Dirichlet values `u_bnd`. Returns full velocity, pressure and the
    /// continuity multiplier.
    pub fn solve_oseen(&self, u_adv: &[f64], theta: &[f64], u_bnd: &[f64], forcing: bool) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let pp = &self.params;
        let ni = self.n_int();
        let nc = self.ncells();
        let mut kt = Vec::new();
        let mut rhs_full = vec![0.0; self.idx.len()];
        if forcing {
            let mar = self.marangoni.matvec(theta);
            let ft = self.f_theta.matvec(theta);
            for i in 0..rhs_full.len() {
                rhs_full[i] = ft[i] + self.f0[i] - pp.pr * pp.ma * mar[i];
            }
        }
        let u_full_bnd = self.full_velocity(&vec![0.0; ni], u_bnd);
        let mut push = |row: usize, col: usize, c: f64| {
            if let Some(ri) = self.vel_int[row] {
                match self.vel_int[col] {
                    Some(ci) => kt.push((ri, ci, c)),
                    None => rhs_full[row] -= c * u_full_bnd[col],
                }
            }
        };
        for r in 0..self.kv.nrows {
            for (c, v) in self.kv.row(r) {
                push(r, c, pp.pr * v);
            }
        }
        self.ws.advection_entries(u_adv, &mut push);
        let k = Csr::from_triplets(ni, ni, kt);
        let f = self.interior_part(&rhs_full);
        let rows: Vec<Option<usize>> = (0..nc).map(Some).collect();
        let d = self.div.select(&rows, nc, &self.vel_int, ni);
        let g = Csr { data: d.data.iter().map(|v| -pp.pr * v).collect(), ..d.clone() }.transpose();
        let c: Vec<f64> = self.div.matvec(&u_full_bnd).iter().map(|v| -v).collect();
        let solver = SaddleSolver::new(k, g, d, self.pressure_precond(), self.linear)?;
        let sol = solver.solve(&f, &c, 0.0)?;
        Ok((self.full_velocity(&sol.x, u_bnd), sol.p, sol.mu))
    }

    /// Linearization of the full system at `(u, theta_ext)`.
    pub fn jacobian(&self, u: &[f64], theta_ext: &[f64]) -> Result<Jacobian> {
        let pp = &self.params;
        let ni = self.n_int();
        let nc = self.ncells();
        let nb = self.n_bnd();
        let np = ni + nc;
        let (mut k, mut bu, mut bt) = (Vec::new(), Vec::new(), Vec::new());
        {
            let mut push_u = |row: usize, col: usize, c: f64| {
                if let Some(ri) = self.vel_int[row] {
                    match (self.vel_int[col], self.vel_bnd[col]) {
                        (Some(ci), _) => k.push((ri, ci, c)),
                        (None, Some(bi)) => bu.push((ri, bi, c)),
                        _ => unreachable!(),
                    }
                }
            };
            for r in 0..self.kv.nrows {
                for (c, v) in self.kv.row(r) {
                    push_u(r, c, pp.pr * v);
                }
            }
            self.ws.advection_entries(u, &mut push_u);
            self.ws.advection_derivative_entries(u, &mut push_u);
        }
        for r in 0..self.marangoni.nrows {
            if let Some(ri) = self.vel_int[r] {
                for (c, v) in self.marangoni.row(r) {
                    k.push((ri, ni + c, pp.pr * pp.ma * v));
                }
                for (c, v) in self.f_theta.row(r) {
                    k.push((ri, ni + c, -v));
                }
            }
        }
        self.temperature_entries(u, |row, col, c| {
            if col < nc {
                k.push((ni + row, ni + col, c));
            } else {
                bt.push((ni + row, col - nc, c));
            }
        });
        self.temperature_velocity_entries(theta_ext, |row, node, c| match (self.vel_int[node], self.vel_bnd[node]) {
            (Some(ci), _) => k.push((ni + row, ci, c)),
            (None, Some(bi)) => bu.push((ni + row, bi, c)),
            _ => unreachable!(),
        });
        let rows: Vec<Option<usize>> = (0..nc).map(Some).collect();
        let d_int = self.div.select(&rows, nc, &self.vel_int, ni);
        let d = Csr { ncols: np, ..d_int.clone() };
        let g = Csr { data: d_int.data.iter().map(|v| -pp.pr * v).collect(), ..d_int }.transpose();
        let g = Csr { nrows: np, indptr: pad_indptr(&g.indptr, np), ..g };
        let b_cont = self.div.select(&rows, nc, &self.vel_bnd, nb);
        let lat: Vec<(usize, usize, f64)> = (0..nc)
            .flat_map(|r| self.lateral_source.row(r).map(move |(c, v)| (ni + r, c, -v)).collect::<Vec<_>>())
            .collect();
        let solver = SaddleSolver::new(Csr::from_triplets(np, np, k), g, d, self.pressure_precond(), self.linear)?;
        Ok(Jacobian {
            solver,
            b_u: Csr::from_triplets(np, nb, bu),
            b_u_cont: b_cont,
            b_phi2: Csr::from_triplets(np, self.n_bottom(), bt),
            b_phi1: Csr::from_triplets(np, self.lateral.len(), lat),
            n_int: ni,
            ncells: nc,
        })
    }

    /// `||rot u||^2` of a full node vector.
    pub fn curl_norm_sq(&self, u: &[f64]) -> f64 {
        let w = self.curl.matvec(u);
        w.iter().zip(&self.curl_w).map(|(a, b)| a * a * b).sum()
    }

    /// `C' W C u`.
    pub fn curl_gram_apply(&self, u: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = self.curl.matvec(u).iter().zip(&self.curl_w).map(|(a, b)| a * b).collect();
        self.curl.matvec_t(&w)
    }

    pub fn velocity_l2_sq(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.node_vol).map(|(a, w)| a * a * w).sum()
    }

    pub fn velocity_h1_norm(&self, u: &[f64]) -> f64 {
        (self.velocity_l2_sq(u) + self.ws.a_flat(u, u)).sqrt()
    }

    pub fn scalar_h1_norm(&self, theta: &[f64]) -> f64 {
        let semi: f64 = self
            .ws
            .cell_links
            .iter()
            .map(|l| l.area * (theta[l.b] - theta[l.a]).powi(2) / l.dist)
            .sum();
        (semi + self.grid.cell_volume() * theta.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

fn pad_indptr(indptr: &[usize], nrows: usize) -> Vec<usize> {
    let mut p = indptr.to_vec();
    let last = *p.last().expect("indptr");
    p.resize(nrows + 1, last);
    p
}

#[derive(Debug, Clone)]
pub struct SystemResidual {
    pub momentum: Vec<f64>,
    pub temperature: Vec<f64>,
    pub continuity: Vec<f64>,
    pub mean: f64,
}

/// Factored linearization. Row space: interior momentum rows followed by
/// temperature rows (primal), continuity rows, mean row.
pub struct Jacobian {
    pub solver: SaddleSolver,
    /// Primal rows x boundary velocity nodes.
    pub b_u: Csr,
    /// Continuity rows x boundary velocity nodes.
    pub b_u_cont: Csr,
    /// Primal rows x bottom temperature nodes.
    pub b_phi2: Csr,
    /// Primal rows x lateral flux faces.
    pub b_phi1: Csr,
    pub n_int: usize,
    pub ncells: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_map_and_transpose_are_adjoint() {
        let grid = BoxGrid::new(4, 5, 4, 1.0, 1.0).unwrap();
        let p = NondimParams { ly: 1.0, ..NondimParams::default() };
        let prob = Problem::standard(grid, p).unwrap();
        let mut g = prob.zero_controls().g;
        for (i, v) in g.values.iter_mut().enumerate() {
            *v = ((i * 7) % 11) as f64 - 5.0;
        }
        g.impose_normal_constraints();
        let ub = prob.boundary_values(&g);
        let lam: Vec<f64> = (0..ub.len()).map(|i| ((i * 3) % 5) as f64).collect();
        let lhs: f64 = ub.iter().zip(&lam).map(|(a, b)| a * b).sum();
        let gt = prob.boundary_values_transpose(&lam);
        let rhs: f64 = gt.iter().zip(&g.values).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn boundary_flux_matches_face_flux() {
        let grid = BoxGrid::cube(4).unwrap();
        let mask = grid.region(RegionTag::Gamma0).faces.iter().map(|_| true).collect();
        let part = ControlPartition::new(&grid, mask).unwrap();
        let prob = Problem::new(grid, NondimParams::default(), part.clone(), None).unwrap();
        let g = BoundaryField::from_fn(part.gamma01.clone(), 3, |f| vec![f.centroid[1], 0.3, f.centroid[0] - 0.2]);
        let u = prob.full_velocity(&vec![0.0; prob.n_int()], &prob.boundary_values(&g));
        let total: f64 = prob.div.matvec(&u).iter().sum();
        assert!((total - g.net_normal_flux()).abs() < 1e-12);
    }

    #[test]
    fn conduction_profile_solves_temperature_rows() {
        let grid = BoxGrid::cube(5).unwrap();
        let p = NondimParams { bi: 1.5, theta_c: 2.0, ..NondimParams::default() };
        let prob = Problem::standard(grid, p).unwrap();
        let c = prob.conduction_controls();
        let u = vec![0.0; prob.idx.len()];
        let th = prob.solve_temperature(&u, &c.phi1.values, &c.phi2.values).unwrap();
        let slope = p.theta_c * p.bi / (1.0 + p.bi);
        for (n, v) in th.iter().enumerate() {
            let k = n % grid.nz;
            let z = (k as f64 + 0.5) * grid.hz;
            assert!((v - (p.theta_c - slope * z)).abs() < 1e-12);
        }
    }
}
