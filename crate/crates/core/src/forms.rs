//! Discrete bilinear and trilinear forms.
//!
//! Diffusion and advection are written over node-to-node links. The
//! advecting velocity of a link is the link-direction component
//! interpolated (tensor-product linear) to the link midpoint, which makes the
//! skew-symmetric advection form antisymmetric link by link.

use ndarray::Array3;

use crate::grid::{Axis, BoxGrid, CellLink, Link, ScalarField, VelocityField, VelocityIndex};
use crate::params::NondimParams;
use crate::{Error, Result};

/// Interpolation stencil of the advecting velocity of one link.
#[derive(Debug, Clone, Copy)]
pub struct AdvStencil {
    pub len: u8,
    pub src: [(usize, f64); 8],
}

impl AdvStencil {
    #[inline]
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.src[..self.len as usize]
    }

    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.entries().iter().map(|(s, w)| w * u[*s]).sum()
    }
}

fn interp1(axis: &Axis, t: f64) -> ([(usize, f64); 2], usize) {
    let n = axis.count();
    let c0 = axis.coord(0);
    let cl = axis.coord(n - 1);
    if t <= c0 {
        return ([(0, 1.0), (0, 0.0)], 1);
    }
    if t >= cl {
        return ([(n - 1, 1.0), (0, 0.0)], 1);
    }
    let mut j = 0;
    while axis.coord(j + 1) < t {
        j += 1;
    }
    let (a, b) = (axis.coord(j), axis.coord(j + 1));
    let w = (t - a) / (b - a);
    if w == 0.0 {
        ([(j, 1.0), (0, 0.0)], 1)
    } else if w == 1.0 {
        ([(j + 1, 1.0), (0, 0.0)], 1)
    } else {
        ([(j, 1.0 - w), (j + 1, w)], 2)
    }
}

/// Precomputed links and advection stencils of one grid.
#[derive(Debug, Clone)]
pub struct FormWorkspace {
    pub grid: BoxGrid,
    pub idx: VelocityIndex,
    pub links: Vec<Link>,
    pub adv: Vec<AdvStencil>,
    pub cell_links: Vec<CellLink>,
}

impl FormWorkspace {
    pub fn new(grid: &BoxGrid) -> Self {
        let idx = grid.velocity_index();
        let links = grid.velocity_links();
        let adv = links.iter().map(|l| Self::stencil(grid, &idx, l)).collect();
        Self { grid: *grid, idx, links, adv, cell_links: grid.cell_links() }
    }

    fn stencil(grid: &BoxGrid, idx: &VelocityIndex, l: &Link) -> AdvStencil {
        let (b, a) = (l.comp as usize, l.axis as usize);
        let own = grid.velocity_axes(b);
        let src = grid.velocity_axes(a);
        let mut per_axis = [([(0usize, 0.0f64); 2], 0usize); 3];
        for e in 0..3 {
            let i = l.start[e] as usize;
            let t = if e == a { 0.5 * (own[e].coord(i) + own[e].coord(i + 1)) } else { own[e].coord(i) };
            per_axis[e] = interp1(&src[e], t);
        }
        let mut st = AdvStencil { len: 0, src: [(0, 0.0); 8] };
        for &(i, wi) in &per_axis[0].0[..per_axis[0].1] {
            for &(j, wj) in &per_axis[1].0[..per_axis[1].1] {
                for &(k, wk) in &per_axis[2].0[..per_axis[2].1] {
                    st.src[st.len as usize] = (idx.id(a, [i, j, k]), wi * wj * wk);
                    st.len += 1;
                }
            }
        }
        st
    }

    pub fn check_velocity(&self, v: &VelocityField) -> Result<Vec<f64>> {
        let f = v.to_flat();
        if f.len() != self.idx.len() || (0..3).any(|c| {
            let d = self.idx.dims[c];
            v.c[c].dim() != (d[0], d[1], d[2])
        }) {
            return Err(Error::DimensionMismatch("velocity field"));
        }
        Ok(f)
    }

    fn check_scalar<'a>(&self, s: &'a ScalarField) -> Result<&'a [f64]> {
        if s.data.dim() != self.grid.shape() {
            return Err(Error::DimensionMismatch("scalar field"));
        }
        Ok(s.as_slice())
    }

    /// `a(u, v) = sum A (du)(dv) / d` over flat node vectors.
    pub fn a_flat(&self, u: &[f64], v: &[f64]) -> f64 {
        self.links.iter().map(|l| l.area * (u[l.b] - u[l.a]) * (v[l.b] - v[l.a]) / l.dist).sum()
    }

    /// Trilinear advection form over flat node vectors.
    pub fn c_flat(&self, u: &[f64], v: &[f64], z: &[f64], skew: bool) -> f64 {
        self.links
            .iter()
            .zip(&self.adv)
            .map(|(l, st)| {
                let ub = st.eval(u);
                if skew {
                    0.5 * l.area * ub * (v[l.b] * z[l.a] - v[l.a] * z[l.b])
                } else {
                    0.5 * l.area * ub * (v[l.b] - v[l.a]) * (z[l.a] + z[l.b])
                }
            })
            .sum()
    }

    /// Entries `(z, v, coefficient)` of the skew advection matrix with
    /// frozen advecting field `u`.
    pub fn advection_entries(&self, u: &[f64], mut f: impl FnMut(usize, usize, f64)) {
        for (l, st) in self.links.iter().zip(&self.adv) {
            let c = 0.5 * l.area * st.eval(u);
            if c != 0.0 {
                f(l.a, l.b, c);
                f(l.b, l.a, -c);
            }
        }
    }

    /// Entries `(z, u, coefficient)` of the derivative of the skew advection
    /// form with respect to the advecting field, at advected field `v`.
    pub fn advection_derivative_entries(&self, v: &[f64], mut f: impl FnMut(usize, usize, f64)) {
        for (l, st) in self.links.iter().zip(&self.adv) {
            let (va, vb) = (v[l.a], v[l.b]);
            for &(s, w) in st.entries() {
                let c = 0.5 * l.area * w;
                f(l.a, s, c * vb);
                f(l.b, s, -c * va);
            }
        }
    }

    /// Entries `(z, v, coefficient)` of the diffusion matrix `K` with
    /// `a(u, v) = v' K u`.
    pub fn diffusion_entries(&self, mut f: impl FnMut(usize, usize, f64)) {
        for l in &self.links {
            let c = l.area / l.dist;
            f(l.a, l.a, c);
            f(l.b, l.b, c);
            f(l.a, l.b, -c);
            f(l.b, l.a, -c);
        }
    }
}

pub fn form_a(ws: &FormWorkspace, u: &VelocityField, v: &VelocityField) -> Result<f64> {
    Ok(ws.a_flat(&ws.check_velocity(u)?, &ws.check_velocity(v)?))
}

/// Centred advection `c(u, v, z)`; with `skew` the antisymmetrized
/// `(c(u,v,z) - c(u,z,v)) / 2`.
pub fn form_c(ws: &FormWorkspace, u: &VelocityField, v: &VelocityField, z: &VelocityField, skew: bool) -> Result<f64> {
    Ok(ws.c_flat(&ws.check_velocity(u)?, &ws.check_velocity(v)?, &ws.check_velocity(z)?, skew))
}

/// Scalar advection over interior cell links with the normal face velocity.
pub fn form_c1(ws: &FormWorkspace, u: &VelocityField, s: &ScalarField, w: &ScalarField, skew: bool) -> Result<f64> {
    let uf = ws.check_velocity(u)?;
    let (s, w) = (ws.check_scalar(s)?, ws.check_scalar(w)?);
    Ok(ws
        .cell_links
        .iter()
        .map(|l| {
            let un = uf[l.face_node];
            if skew {
                0.5 * l.area * un * (s[l.b] * w[l.a] - s[l.a] * w[l.b])
            } else {
                0.5 * l.area * un * (s[l.b] - s[l.a]) * (w[l.a] + w[l.b])
            }
        })
        .sum())
}

pub fn form_a1(ws: &FormWorkspace, s: &ScalarField, w: &ScalarField) -> Result<f64> {
    let (s, w) = (ws.check_scalar(s)?, ws.check_scalar(w)?);
    Ok(ws.cell_links.iter().map(|l| l.area * (s[l.b] - s[l.a]) * (w[l.b] - w[l.a]) / l.dist).sum())
}

/// Central derivative along `axis` of a cell-centred array, closed by
/// third-order one-sided stencils at the ends.
fn centered_derivative(f: &Array3<f64>, axis: usize, h: f64) -> Array3<f64> {
    let n = f.dim();
    let len = [n.0, n.1, n.2][axis];
    Array3::from_shape_fn(n, |(i, j, k)| {
        let at = |m: usize| {
            let mut p = [i, j, k];
            p[axis] = m;
            f[p]
        };
        let m = [i, j, k][axis];
        if m == 0 {
            (-11.0 * at(0) + 18.0 * at(1) - 9.0 * at(2) + 2.0 * at(3)) / (6.0 * h)
        } else if m + 1 == len {
            (11.0 * at(len - 1) - 18.0 * at(len - 2) + 9.0 * at(len - 3) - 2.0 * at(len - 4)) / (6.0 * h)
        } else {
            (at(m + 1) - at(m - 1)) / (2.0 * h)
        }
    })
}

/// Cubic extrapolation of a cell-centred array to the top surface.
fn top_trace(f: &Array3<f64>) -> ndarray::Array2<f64> {
    let (nx, ny, nz) = f.dim();
    ndarray::Array2::from_shape_fn((nx, ny), |(i, j)| {
        (35.0 * f[[i, j, nz - 1]] - 35.0 * f[[i, j, nz - 2]] + 21.0 * f[[i, j, nz - 3]] - 5.0 * f[[i, j, nz - 4]]) / 16.0
    })
}

/// `b1(s, v) = int grad s . dv/dx3` by cell-centred second-order quadrature.
pub fn form_b1(ws: &FormWorkspace, s: &ScalarField, v: &VelocityField) -> Result<f64> {
    ws.check_velocity(v)?;
    ws.check_scalar(s)?;
    let g = &ws.grid;
    let vc = v.cell_centered(g);
    let mut total = 0.0;
    for (b, vb) in vc.iter().enumerate() {
        let ds = centered_derivative(&s.data, b, g.spacing(b));
        let dv = centered_derivative(&vb.data, 2, g.hz);
        total += ds.iter().zip(dv.iter()).map(|(a, c)| a * c).sum::<f64>();
    }
    Ok(total * g.cell_volume())
}

/// Top-surface side `int_{x3=1} (ds/dx1 v1 + ds/dx2 v2)` of the trace identity.
pub fn top_trace_form(ws: &FormWorkspace, s: &ScalarField, v: &VelocityField) -> Result<f64> {
    ws.check_velocity(v)?;
    ws.check_scalar(s)?;
    let g = &ws.grid;
    let vc = v.cell_centered(g);
    let st = top_trace(&s.data).insert_axis(ndarray::Axis(2));
    let mut total = 0.0;
    for b in 0..2 {
        let ds = centered_derivative(&st.to_owned(), b, g.spacing(b));
        let vt = top_trace(&vc[b].data);
        total += ds.iter().zip(vt.iter()).map(|(a, c)| a * c).sum::<f64>();
    }
    Ok(total * g.hx * g.hy)
}

/// `<f(theta), v> = int Pr (b + R theta) v3`.
pub fn buoyancy(ws: &FormWorkspace, theta: &ScalarField, v: &VelocityField, p: &NondimParams) -> Result<f64> {
    ws.check_velocity(v)?;
    let t = &theta.data;
    ws.check_scalar(theta)?;
    let g = &ws.grid;
    let ax = g.velocity_axes(2);
    let mut total = 0.0;
    for ((ii, jj, k), v3) in v.c[2].indexed_iter() {
        let vol = ax[0].extent(ii) * ax[1].extent(jj) * ax[2].extent(k);
        if vol == 0.0 {
            continue;
        }
        let (i, j) = (ii - 1, jj - 1);
        let tb = if k == 0 {
            t[[i, j, 0]]
        } else if k == g.nz {
            t[[i, j, g.nz - 1]]
        } else {
            0.5 * (t[[i, j, k - 1]] + t[[i, j, k]])
        };
        total += vol * p.pr * (p.b + p.ra * tb) * v3;
    }
    Ok(total)
}

/// Checks the test-space constraints: zero on every prescribed wall node
/// (including the normal component on the free surface) and discretely
/// divergence-free.
pub fn check_test_space(ws: &FormWorkspace, v: &VelocityField, tol: f64) -> Result<()> {
    let g = &ws.grid;
    let scale = v.max_abs().max(f64::MIN_POSITIVE);
    for c in 0..3 {
        let ax = g.velocity_axes(c);
        for ((i, j, k), x) in v.c[c].indexed_iter() {
            let on_wall = ax[0].is_boundary(i) || ax[1].is_boundary(j) || ax[2].is_boundary(k);
            if on_wall && x.abs() > tol * scale {
                return Err(Error::ConstraintViolation(format!(
                    "component {} nonzero ({x:e}) on boundary node ({i},{j},{k})",
                    c + 1
                )));
            }
        }
    }
    let h = g.hx.min(g.hy).min(g.hz);
    let div = g.divergence(v)?.max_abs();
    if div * h > tol * scale {
        return Err(Error::ConstraintViolation(format!("discrete divergence {div:e}")));
    }
    Ok(())
}

/// `|int_{x3=1} grad_t s . v_t - int grad s . dv/dx3|` for test fields `v`.
pub fn trace_identity_residual(ws: &FormWorkspace, s: &ScalarField, v: &VelocityField) -> Result<f64> {
    check_test_space(ws, v, 1e-10)?;
    Ok((top_trace_form(ws, s, v)? - form_b1(ws, s, v)?).abs())
}

/// Divergence-free test field `curl(0, a, 0)` with
/// `a = x1^2 (l-x1)^2 x2^2 (L-x2)^2 x3^2 (1-x3)`, built from the potential
/// sampled on cell edges so that its discrete divergence vanishes.
pub fn curl_test_field(grid: &BoxGrid) -> VelocityField {
    let (l, ll) = (grid.lx, grid.ly);
    let a = |x: f64, y: f64, z: f64| (x * (l - x)).powi(2) * (y * (ll - y)).powi(2) * z * z * (1.0 - z);
    let mut v = VelocityField::zeros(grid);
    let ax0 = grid.velocity_axes(0);
    let ax2 = grid.velocity_axes(2);
    for ((i, j, k), x) in v.c[0].indexed_iter_mut() {
        if ax0[1].is_boundary(j) || ax0[2].is_boundary(k) {
            continue;
        }
        let (xf, yc) = (ax0[0].coord(i), ax0[1].coord(j));
        let (z0, z1) = ((k - 1) as f64 * grid.hz, k as f64 * grid.hz);
        *x = -(a(xf, yc, z1) - a(xf, yc, z0)) / grid.hz;
    }
    for ((i, j, k), x) in v.c[2].indexed_iter_mut() {
        if ax2[0].is_boundary(i) || ax2[1].is_boundary(j) {
            continue;
        }
        let (yc, zf) = (ax2[1].coord(j), ax2[2].coord(k));
        let (x0, x1) = ((i - 1) as f64 * grid.hx, i as f64 * grid.hx);
        *x = (a(x1, yc, zf) - a(x0, yc, zf)) / grid.hx;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_velocity(g: &BoxGrid, rng: &mut ChaCha8Rng) -> VelocityField {
        let mut v = VelocityField::zeros(g);
        for c in &mut v.c {
            c.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        v
    }

    fn random_scalar(g: &BoxGrid, rng: &mut ChaCha8Rng) -> ScalarField {
        let mut s = ScalarField::zeros(g);
        s.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        s
    }

    #[test]
    fn form_a_matches_seminorm_and_limits() {
        let g = BoxGrid::new(5, 4, 6, 1.2, 0.8).unwrap();
        let ws = FormWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_velocity(&g, &mut rng);
        let v = random_velocity(&g, &mut rng);
        assert!((form_a(&ws, &u, &v).unwrap() - form_a(&ws, &v, &u).unwrap()).abs() < 1e-12);
        let s = g.h1_seminorm(&u).unwrap();
        assert!((form_a(&ws, &u, &u).unwrap() - s * s).abs() < 1e-10);
        assert_eq!(form_a(&ws, &VelocityField::zeros(&g), &v).unwrap(), 0.0);
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let g = BoxGrid::cube(n).unwrap();
            let ws = FormWorkspace::new(&g);
            let u = VelocityField::from_fn(&g, |x| [x[2], 0.0, 0.0]);
            errs.push((form_a(&ws, &u, &u).unwrap() - 1.0).abs());
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0] && errs[2] < 0.02);
    }

    #[test]
    fn advection_examples() {
        let g = BoxGrid::new(6, 5, 4, 1.5, 1.0).unwrap();
        let ws = FormWorkspace::new(&g);
        let one = VelocityField::from_fn(&g, |_| [1.0, 0.0, 0.0]);
        let lin = VelocityField::from_fn(&g, |x| [x[0], 0.0, 0.0]);
        let c = form_c(&ws, &one, &lin, &one, false).unwrap();
        assert!((c - g.volume()).abs() < 1e-12);
        assert_eq!(form_c(&ws, &VelocityField::zeros(&g), &lin, &one, true).unwrap(), 0.0);

        let s = ScalarField::from_fn(&g, |x| x[0]);
        let w = ScalarField::constant(&g, 1.0);
        let c1 = form_c1(&ws, &one, &s, &w, false).unwrap();
        assert!((c1 - g.volume() * (1.0 - 1.0 / 6.0)).abs() < 1e-12);
        assert_eq!(form_c1(&ws, &one, &w, &s, false).unwrap(), 0.0);
    }

    #[test]
    fn skew_forms_vanish_on_diagonal() {
        let g = BoxGrid::new(4, 5, 4, 1.0, 1.3).unwrap();
        let ws = FormWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let u = random_velocity(&g, &mut rng);
            let v = random_velocity(&g, &mut rng);
            let s = random_scalar(&g, &mut rng);
            assert!(form_c(&ws, &u, &v, &v, true).unwrap().abs() < 1e-13);
            assert!(form_c1(&ws, &u, &s, &s, true).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn advection_entries_reproduce_form() {
        let g = BoxGrid::cube(4).unwrap();
        let ws = FormWorkspace::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (u, v, z) = (random_velocity(&g, &mut rng), random_velocity(&g, &mut rng), random_velocity(&g, &mut rng));
        let (u, v, z) = (u.to_flat(), v.to_flat(), z.to_flat());
        let direct = ws.c_flat(&u, &v, &z, true);
        let mut via_n = 0.0;
        ws.advection_entries(&u, |zi, vi, c| via_n += c * z[zi] * v[vi]);
        let mut via_d = 0.0;
        ws.advection_derivative_entries(&v, |zi, ui, c| via_d += c * z[zi] * u[ui]);
        assert!((direct - via_n).abs() < 1e-12 && (direct - via_d).abs() < 1e-12);
        let mut via_k = 0.0;
        ws.diffusion_entries(|a, b, c| via_k += c * v[a] * u[b]);
        assert!((via_k - ws.a_flat(&u, &v)).abs() < 1e-12);
    }

    #[test]
    fn a1_b1_and_buoyancy_examples() {
        let g = BoxGrid::new(8, 8, 8, 1.0, 2.0).unwrap();
        let ws = FormWorkspace::new(&g);
        let z = ScalarField::from_fn(&g, |x| x[2]);
        assert!((form_a1(&ws, &z, &z).unwrap() - g.volume() * (1.0 - g.hz)).abs() < 1e-12);
        assert_eq!(form_a1(&ws, &ScalarField::constant(&g, 2.0), &z).unwrap(), 0.0);

        let s = ScalarField::from_fn(&g, |x| x[0]);
        let v = VelocityField::from_fn(&g, |x| [x[2], 0.0, 0.0]);
        assert!((form_b1(&ws, &s, &v).unwrap() - g.volume()).abs() < 1e-12);
        let flat = VelocityField::from_fn(&g, |_| [1.0, 2.0, 3.0]);
        assert!(form_b1(&ws, &s, &flat).unwrap().abs() < 1e-12);
        assert!(form_b1(&ws, &ScalarField::constant(&g, 1.0), &v).unwrap().abs() < 1e-12);

        let p = NondimParams { pr: 2.0, ra: 3.0, b: -1.5, ..NondimParams::default() };
        let v3 = VelocityField::from_fn(&g, |_| [0.0, 0.0, 1.0]);
        let f = buoyancy(&ws, &ScalarField::zeros(&g), &v3, &p).unwrap();
        assert!((f - p.pr * p.b * g.volume()).abs() < 1e-12);
        let v12 = VelocityField::from_fn(&g, |_| [1.0, 1.0, 0.0]);
        assert_eq!(buoyancy(&ws, &z, &v12, &p).unwrap(), 0.0);
    }

    #[test]
    fn curl_test_field_is_admissible() {
        let g = BoxGrid::new(6, 5, 7, 1.0, 1.4).unwrap();
        let ws = FormWorkspace::new(&g);
        let v = curl_test_field(&g);
        check_test_space(&ws, &v, 1e-12).unwrap();
        assert!(v.max_abs() > 0.0);
        let s = ScalarField::constant(&g, 2.0);
        assert!(trace_identity_residual(&ws, &s, &v).unwrap() < 1e-15);
        assert_eq!(trace_identity_residual(&ws, &s, &VelocityField::zeros(&g)).unwrap(), 0.0);
    }

    #[test]
    fn trace_identity_rejects_non_solenoidal_fields() {
        let g = BoxGrid::cube(8).unwrap();
        let ws = FormWorkspace::new(&g);
        let v = VelocityField::from_fn(&g, |x| [x[2] * (1.0 - x[2]) * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]), 0.0, 0.0]);
        let s = ScalarField::from_fn(&g, |x| x[0] * x[0] * x[2]);
        assert!(matches!(trace_identity_residual(&ws, &s, &v), Err(Error::ConstraintViolation(_))));
    }

    #[test]
    fn skew_and_plain_advection_agree_for_solenoidal_fields() {
        let mut diffs = Vec::new();
        for n in [4, 8, 16, 32] {
            let g = BoxGrid::cube(n).unwrap();
            let ws = FormWorkspace::new(&g);
            let u = curl_test_field(&g);
            let v = VelocityField::from_fn(&g, |x| [x[0] * x[2], x[1].sin(), x[0] + x[1] * x[2]]);
            let z = VelocityField::from_fn(&g, |x| [x[2].cos(), x[0] * x[1], x[2] * x[2]]);
            diffs.push((form_c(&ws, &u, &v, &z, false).unwrap() - form_c(&ws, &u, &v, &z, true).unwrap()).abs());
        }
        for w in diffs.windows(2) {
            assert!(w[1] < w[0] / 3.0, "{diffs:?}");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn skew_forms_are_antisymmetric_and_linear(
            nx in 4usize..7, ny in 4usize..7, nz in 4usize..7, lx in 0.5f64..2.5, ly in 0.5f64..2.5,
            seed in 0u64..10_000, alpha in -3.0f64..3.0,
        ) {
            let g = BoxGrid::new(nx, ny, nz, lx, ly).unwrap();
            let ws = FormWorkspace::new(&g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (u, v, z) = (random_velocity(&g, &mut rng), random_velocity(&g, &mut rng), random_velocity(&g, &mut rng));
            let (s, w) = (random_scalar(&g, &mut rng), random_scalar(&g, &mut rng));
            let c = |a: &VelocityField, b: &VelocityField| form_c(&ws, &u, a, b, true).unwrap();
            proptest::prop_assert!(c(&v, &v).abs() < 1e-12);
            proptest::prop_assert!((c(&v, &z) + c(&z, &v)).abs() < 1e-12 * (1.0 + c(&v, &z).abs()));
            proptest::prop_assert!(form_c1(&ws, &u, &s, &s, true).unwrap().abs() < 1e-12);
            let mix = VelocityField { c: [0, 1, 2].map(|k| &v.c[k] * alpha + &z.c[k]) };
            let lhs = c(&mix, &z);
            let rhs = alpha * c(&v, &z) + c(&z, &z);
            proptest::prop_assert!((lhs - rhs).abs() < 1e-11 * (1.0 + lhs.abs()));
            let a = form_a1(&ws, &s, &w).unwrap();
            proptest::prop_assert!((a - form_a1(&ws, &w, &s).unwrap()).abs() < 1e-11 * (1.0 + a.abs()));
        }
    }
}
