//! Sparse matrices, restarted GMRES and the bordered saddle-point solver.
//!
//! Saddle systems have the shape
//!
//! ```text
//! [ K  G  0 ] [x ]   [f]
//! [ D  0  1 ] [p ] = [c]
//! [ 0  1' 0 ] [mu]   [s]
//! ```
//!
//! where `G 1 = 0` and `1' D = 0`. The primal block `K` is factored once with
//! a sparse LU; the pressure Schur complement is solved by GMRES on the
//! mean-free subspace. The transposed system reuses the same factorization.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};

use crate::{Error, Result};

/// Compressed sparse row matrix with summed duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut data: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            debug_assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of {nrows}x{ncols}");
            if last == Some((r, c)) {
                *data.last_mut().expect("nonempty") += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices, data }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec size");
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows, "transposed matvec size");
        let mut out = vec![0.0; self.ncols];
        for (r, yr) in y.iter().enumerate() {
            if *yr != 0.0 {
                for (c, v) in self.row(r) {
                    out[c] += v * yr;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push((c, r, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, t)
    }

    /// Submatrix through index maps: `rows[i]` / `cols[j]` give the new
    /// position of old row `i` / column `j`, or `None` to drop it.
    pub fn select(&self, rows: &[Option<usize>], nrows: usize, cols: &[Option<usize>], ncols: usize) -> Self {
        let mut t = Vec::new();
        for r in 0..self.nrows {
            if let Some(nr) = rows[r] {
                for (c, v) in self.row(r) {
                    if let Some(nc) = cols[c] {
                        t.push((nr, nc, v));
                    }
                }
            }
        }
        Self::from_triplets(nrows, ncols, t)
    }

    pub fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push(Triplet::new(r, c, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| Error::LinearSolver(format!("sparse matrix assembly: {e:?}")))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iters: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-13, restart: 80, max_iters: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iters: usize,
    pub rel_residual: f64,
}

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations.
pub fn gmres(mut op: impl FnMut(&[f64]) -> Vec<f64>, b: &[f64], x0: Option<&[f64]>, opts: GmresOptions) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return GmresOutcome { x: vec![0.0; n], iters: 0, rel_residual: 0.0 };
    }
    let mut total = 0;
    let mut rel = f64::INFINITY;
    while total < opts.max_iters {
        let ax = op(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        rel = beta / bnorm;
        if rel <= opts.rel_tol {
            break;
        }
        let m = opts.restart.min(opts.max_iters - total).max(1);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut w = op(&v[k]);
            for (i, vi) in v.iter().enumerate() {
                h[i][k] = dot(&w, vi);
                axpy(&mut w, -h[i][k], vi);
            }
            h[k + 1][k] = norm2(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            if d == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            rel = g[k + 1].abs() / bnorm;
            let hk = h[k + 1][k];
            let _ = hk;
            if rel <= opts.rel_tol || total >= opts.max_iters {
                break;
            }
            let wn = norm2(&w);
            if wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / wn).collect());
        }
        // Back substitution on the triangular Hessenberg factor.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(&mut x, *yj, &v[j]);
        }
        if rel <= opts.rel_tol || k_used == 0 {
            break;
        }
    }
    GmresOutcome { x, iters: total, rel_residual: rel }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleOptions {
    pub gmres: GmresOptions,
    /// Target relative residual of the full bordered system.
    pub rel_tol: f64,
    pub max_refinements: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self { gmres: GmresOptions::default(), rel_tol: 1e-12, max_refinements: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub mu: f64,
    pub gmres_iters: usize,
    pub rel_residual: f64,
}

/// Factored saddle operator `[K G; D 0]` with mean bordering.
pub struct SaddleSolver {
    k: Csr,
    g: Csr,
    d: Csr,
    lu: Lu<usize, f64>,
    /// Diagonal approximation of the inverse Schur complement.
    precond: Vec<f64>,
    opts: SaddleOptions,
}

impl SaddleSolver {
    pub fn new(k: Csr, g: Csr, d: Csr, precond: Vec<f64>, opts: SaddleOptions) -> Result<Self> {
        let n = k.nrows;
        let m = d.nrows;
        if k.ncols != n || g.nrows != n || g.ncols != m || d.ncols != n || precond.len() != m {
            return Err(Error::DimensionMismatch("saddle blocks"));
        }
        let lu = k
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::LinearSolver(format!("LU factorization failed: {e:?}")))?;
        Ok(Self { k, g, d, lu, precond, opts })
    }

    pub fn primal_len(&self) -> usize {
        self.k.nrows
    }

    pub fn pressure_len(&self) -> usize {
        self.d.nrows
    }

    fn lu_solve(&self, rhs: &[f64], transpose: bool) -> Vec<f64> {
        let n = rhs.len();
        let mut m = Mat::from_fn(n, 1, |i, _| rhs[i]);
        if transpose {
            self.lu.solve_transpose_in_place(m.as_mut());
        } else {
            self.lu.solve_in_place(m.as_mut());
        }
        (0..n).map(|i| m[(i, 0)]).collect()
    }

    fn apply_g(&self, p: &[f64], transpose: bool) -> Vec<f64> {
        if transpose {
            self.d.matvec_t(p)
        } else {
            self.g.matvec(p)
        }
    }

    fn apply_d(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        if transpose {
            self.g.matvec_t(x)
        } else {
            self.d.matvec(x)
        }
    }

    fn apply_k(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        if transpose {
            self.k.matvec_t(x)
        } else {
            self.k.matvec(x)
        }
    }

    fn residual(&self, sol: &SaddleSolution, f: &[f64], c: &[f64], s: f64, transpose: bool) -> (Vec<f64>, Vec<f64>, f64) {
        let kx = self.apply_k(&sol.x, transpose);
        let gp = self.apply_g(&sol.p, transpose);
        let r1 = f.iter().zip(&kx).zip(&gp).map(|((a, b), c)| a - b - c).collect();
        let dx = self.apply_d(&sol.x, transpose);
        let r2 = c.iter().zip(&dx).map(|(a, b)| a - b - sol.mu).collect();
        let r3 = s - sol.p.iter().sum::<f64>();
        (r1, r2, r3)
    }

    fn solve_once(&self, f: &[f64], c: &[f64], s: f64, transpose: bool) -> Result<SaddleSolution> {
        let m = self.pressure_len();
        let y = self.lu_solve(f, transpose);
        let dy = self.apply_d(&y, transpose);
        let r: Vec<f64> = dy.iter().zip(c).map(|(a, b)| a - b).collect();
        let mean = r.iter().sum::<f64>() / m as f64;
        let mu = -mean;
        let mut r0 = r;
        remove_mean(&mut r0);
        let precond = |z: &[f64]| {
            let mut q: Vec<f64> = z.iter().zip(&self.precond).map(|(a, b)| a * b).collect();
            remove_mean(&mut q);
            q
        };
        let schur = |z: &[f64]| {
            let q = precond(z);
            let w = self.lu_solve(&self.apply_g(&q, transpose), transpose);
            let mut out = self.apply_d(&w, transpose);
            remove_mean(&mut out);
            out
        };
        let out = gmres(schur, &r0, None, self.opts.gmres);
        let mut p = precond(&out.x);
        let shift = s / m as f64;
        p.iter_mut().for_each(|v| *v += shift);
        let w = self.lu_solve(&self.apply_g(&p, transpose), transpose);
        let x: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a - b).collect();
        if !(x.iter().all(|v| v.is_finite()) && p.iter().all(|v| v.is_finite()) && mu.is_finite()) {
            return Err(Error::NonFinite("saddle solution".into()));
        }
        Ok(SaddleSolution { x, p, mu, gmres_iters: out.iters, rel_residual: out.rel_residual })
    }

    fn solve_impl(&self, f: &[f64], c: &[f64], s: f64, transpose: bool) -> Result<SaddleSolution> {
        if f.len() != self.primal_len() || c.len() != self.pressure_len() {
            return Err(Error::DimensionMismatch("saddle right-hand side"));
        }
        let scale = (dot(f, f) + dot(c, c) + s * s).sqrt();
        let mut sol = self.solve_once(f, c, s, transpose)?;
        if scale == 0.0 {
            sol.rel_residual = 0.0;
            return Ok(sol);
        }
        let mut iters = sol.gmres_iters;
        for _ in 0..=self.opts.max_refinements {
            let (r1, r2, r3) = self.residual(&sol, f, c, s, transpose);
            let rn = (dot(&r1, &r1) + dot(&r2, &r2) + r3 * r3).sqrt() / scale;
            sol.rel_residual = rn;
            if rn <= self.opts.rel_tol {
                break;
            }
            let corr = self.solve_once(&r1, &r2, r3, transpose)?;
            iters += corr.gmres_iters;
            axpy(&mut sol.x, 1.0, &corr.x);
            axpy(&mut sol.p, 1.0, &corr.p);
            sol.mu += corr.mu;
        }
        sol.gmres_iters = iters;
        if sol.rel_residual > self.opts.rel_tol.max(1e-8) {
            return Err(Error::LinearSolver(format!(
                "saddle residual {:.3e} after refinement",
                sol.rel_residual
            )));
        }
        Ok(sol)
    }

    /// Solves `K x + G p = f`, `D x + mu 1 = c`, `1'p = s`.
    pub fn solve(&self, f: &[f64], c: &[f64], s: f64) -> Result<SaddleSolution> {
        self.solve_impl(f, c, s, false)
    }

    /// Solves the transposed system `K' x + D' p = f`, `G' x + mu 1 = c`, `1'p = s`.
    pub fn solve_transpose(&self, f: &[f64], c: &[f64], s: f64) -> Result<SaddleSolution> {
        self.solve_impl(f, c, s, true)
    }
}

/// Sparse LU of a square matrix.
pub struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn new(a: &Csr) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::DimensionMismatch("square matrix"));
        }
        let lu = a
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::LinearSolver(format!("LU factorization failed: {e:?}")))?;
        Ok(Self { lu, n: a.nrows })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch("LU right-hand side"));
        }
        let mut m = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        let x: Vec<f64> = (0..self.n).map(|i| m[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LU solution".into()));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csr_sums_duplicates_and_transposes() {
        let a = Csr::from_triplets(2, 3, vec![(0, 1, 1.0), (1, 2, 2.0), (0, 1, 3.0), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![4.0, 1.0]);
        assert_eq!(a.matvec_t(&[1.0, 2.0]), vec![-2.0, 4.0, 4.0]);
        assert_eq!(a.transpose().transpose(), a);
        let s = a.select(&[None, Some(0)], 1, &[Some(0), None, Some(1)], 2);
        assert_eq!(s.to_dense(), vec![vec![-1.0, 2.0]]);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0 + rng.random::<f64>() * 0.2));
                t.push((i + 1, i, -1.5));
            }
        }
        let a = Csr::from_triplets(n, n, t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let out = gmres(|x| a.matvec(x), &b, None, GmresOptions { rel_tol: 1e-13, restart: 7, max_iters: 500 });
        let r = a.matvec(&out.x);
        let err: f64 = r.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
    }

    /// 1D Stokes-like toy: velocity on interior faces, pressure on cells.
    fn toy(n: usize) -> (Csr, Csr, Csr) {
        let h = 1.0 / n as f64;
        let nu = n - 1;
        let mut k = Vec::new();
        for i in 0..nu {
            k.push((i, i, 2.0 / h + 0.3));
            if i + 1 < nu {
                k.push((i, i + 1, -1.0 / h + 0.1));
                k.push((i + 1, i, -1.0 / h - 0.1));
            }
        }
        // Face i+1 separates cells i and i+1.
        let mut d = Vec::new();
        for f in 0..nu {
            d.push((f, f, 1.0));
            d.push((f + 1, f, -1.0));
        }
        let d = Csr::from_triplets(n, nu, d);
        let g = d.transpose();
        let g = Csr { data: g.data.iter().map(|v| -2.0 * v).collect(), ..g };
        (Csr::from_triplets(nu, nu, k), g, d)
    }

    #[test]
    fn saddle_solve_and_transpose() {
        let n = 12;
        let (k, g, d) = toy(n);
        let solver = SaddleSolver::new(k.clone(), g.clone(), d.clone(), vec![-1.0; n], SaddleOptions::default()).unwrap();
        let f: Vec<f64> = (0..n - 1).map(|i| (i as f64 * 0.7).cos()).collect();
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        for transpose in [false, true] {
            let sol = if transpose { solver.solve_transpose(&f, &c, 0.5) } else { solver.solve(&f, &c, 0.5) }.unwrap();
            let (r1, r2, r3) = solver.residual(&sol, &f, &c, 0.5, transpose);
            assert!(norm2(&r1) < 1e-11 && norm2(&r2) < 1e-11 && r3.abs() < 1e-11);
        }
    }

    #[test]
    fn saddle_rejects_bad_shapes() {
        let (k, g, d) = toy(6);
        assert!(SaddleSolver::new(k, g, d, vec![1.0; 3], SaddleOptions::default()).is_err());
    }
}
