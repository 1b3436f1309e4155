//! Direct solvers for the per-stage systems (I - shift*L) x = r.
//!
//! The DG operator couples each element only to its two face neighbors, so
//! the system is block tridiagonal with two periodic corner blocks. The
//! factorization is a block Thomas sweep plus a Sherman-Morrison-Woodbury
//! correction of rank 2*(block size) for the corners; meshes with fewer
//! than three elements fall back to a dense LU.

use crate::{Error, Result};

/// Dense LU factorization with partial pivoting, row-major storage.
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    /// Factors `a` (row-major, n*n). Fails with `SingularMatrix` when a
    /// pivot falls below 1e-14 times the largest entry of the matrix.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<DenseLu> {
        assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let tol = 1e-14 * scale;
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tol) {
                return Err(Error::SingularMatrix(format!(
                    "pivot {best:.3e} below threshold {tol:.3e} at column {k}"
                )));
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let l = a[i * n + k] / d;
                a[i * n + k] = l;
                for j in k + 1..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
            }
        }
        Ok(DenseLu { n, lu: a, piv })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        assert_eq!(x.len(), n);
        for k in 0..n {
            x.swap(k, self.piv[k]);
            for i in k + 1..n {
                x[i] -= self.lu[i * n + k] * x[k];
            }
        }
        for k in (0..n).rev() {
            for j in k + 1..n {
                x[k] -= self.lu[k * n + j] * x[j];
            }
            x[k] /= self.lu[k * n + k];
        }
    }

    pub fn solve(&self, r: &[f64], x: &mut [f64]) {
        x.copy_from_slice(r);
        self.solve_in_place(x);
    }
}

/// Anything that exposes itself as a periodic block-tridiagonal operator:
/// one dense diagonal block per element plus couplings to the left and
/// right neighbors (cyclic).
pub trait BlockOperator {
    fn num_blocks(&self) -> usize;
    fn block_size(&self) -> usize;
    /// Writes the m*m diagonal block of element `k` (row-major).
    fn diag_block(&self, k: usize, out: &mut [f64]);
    /// Coupling of element `k` to its left neighbor (k-1 mod K).
    fn left_block(&self, k: usize, out: &mut [f64]);
    /// Coupling of element `k` to its right neighbor (k+1 mod K).
    fn right_block(&self, k: usize, out: &mut [f64]);
}

/// Periodic block-tridiagonal matrix. `lower[k]` couples block row `k` to
/// column k-1 (mod K), `upper[k]` to column k+1 (mod K); for K >= 3 the
/// wrap blocks are `lower[0]` and `upper[K-1]`.
pub struct BlockSparseMatrix {
    pub k: usize,
    pub m: usize,
    pub diag: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

fn matvec_block(block: &[f64], m: usize, x: &[f64], out: &mut [f64], add: bool) {
    for i in 0..m {
        let mut acc = if add { out[i] } else { 0.0 };
        let row = &block[i * m..(i + 1) * m];
        for j in 0..m {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
}

impl BlockSparseMatrix {
    pub fn identity(k: usize, m: usize) -> Self {
        let mut diag = vec![vec![0.0; m * m]; k];
        for block in &mut diag {
            for i in 0..m {
                block[i * m + i] = 1.0;
            }
        }
        BlockSparseMatrix {
            k,
            m,
            diag,
            lower: vec![vec![0.0; m * m]; k],
            upper: vec![vec![0.0; m * m]; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.k * self.m
    }

    /// y = M x.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (k, m) = (self.k, self.m);
        assert_eq!(x.len(), k * m);
        assert_eq!(y.len(), k * m);
        for e in 0..k {
            let left = (e + k - 1) % k;
            let right = (e + 1) % k;
            let out = &mut y[e * m..(e + 1) * m];
            matvec_block(&self.diag[e], m, &x[e * m..(e + 1) * m], out, false);
            matvec_block(&self.lower[e], m, &x[left * m..(left + 1) * m], out, true);
            matvec_block(&self.upper[e], m, &x[right * m..(right + 1) * m], out, true);
        }
    }

    /// Expands to a dense row-major matrix; coincident neighbor targets
    /// (K <= 2) accumulate.
    pub fn to_dense(&self) -> Vec<f64> {
        let (k, m) = (self.k, self.m);
        let n = k * m;
        let mut a = vec![0.0; n * n];
        let mut put = |row_blk: usize, col_blk: usize, block: &[f64]| {
            for i in 0..m {
                for j in 0..m {
                    a[(row_blk * m + i) * n + col_blk * m + j] += block[i * m + j];
                }
            }
        };
        for e in 0..k {
            put(e, e, &self.diag[e]);
            put(e, (e + k - 1) % k, &self.lower[e]);
            put(e, (e + 1) % k, &self.upper[e]);
        }
        a
    }

    pub fn factor(&self) -> Result<BlockFactor> {
        if self.k < 3 {
            let lu = DenseLu::factor(self.to_dense(), self.dim())?;
            return Ok(BlockFactor::Dense(lu));
        }
        TriFactor::new(self).map(BlockFactor::Tri)
    }
}

/// Factorization of a [`BlockSparseMatrix`].
pub enum BlockFactor {
    Dense(DenseLu),
    Tri(TriFactor),
}

impl BlockFactor {
    pub fn solve(&self, r: &[f64], x: &mut [f64]) {
        match self {
            BlockFactor::Dense(lu) => lu.solve(r, x),
            BlockFactor::Tri(f) => f.solve(r, x),
        }
    }
}

/// Block Thomas factorization of the tridiagonal part plus the
/// Sherman-Morrison-Woodbury corner correction: with T the matrix without
/// wrap blocks and the wraps written as U V^T (V a column selector),
/// A^{-1} r = x0 - Z (I + V^T Z)^{-1} V^T x0 with x0 = T^{-1} r, Z = T^{-1} U.
pub struct TriFactor {
    k: usize,
    m: usize,
    factors: Vec<DenseLu>,
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
    /// T^{-1} U for the 2m corner columns; empty when both wraps vanish.
    z: Vec<Vec<f64>>,
    cap: Option<DenseLu>,
}

impl TriFactor {
    fn new(mat: &BlockSparseMatrix) -> Result<TriFactor> {
        let (k, m) = (mat.k, mat.m);
        let mut factors: Vec<DenseLu> = Vec::with_capacity(k);
        // D'_i = D_i - lower_i (D'_{i-1})^{-1} upper_{i-1}, row 0 unmodified
        let mut dprev_inv_upper = vec![0.0; m * m];
        for i in 0..k {
            let mut d = mat.diag[i].clone();
            if i > 0 {
                let mut corr = vec![0.0; m * m];
                matmul(&mat.lower[i], &dprev_inv_upper, &mut corr, m);
                for (dv, cv) in d.iter_mut().zip(&corr) {
                    *dv -= cv;
                }
            }
            let f = DenseLu::factor(d, m)?;
            if i + 1 < k {
                // columns of (D'_i)^{-1} upper_i
                for j in 0..m {
                    let mut col = vec![0.0; m];
                    for r in 0..m {
                        col[r] = mat.upper[i][r * m + j];
                    }
                    f.solve_in_place(&mut col);
                    for r in 0..m {
                        dprev_inv_upper[r * m + j] = col[r];
                    }
                }
            }
            factors.push(f);
        }

        let wrap_l = &mat.lower[0];
        let wrap_r = &mat.upper[k - 1];
        let has_wrap = wrap_l.iter().chain(wrap_r.iter()).any(|&v| v != 0.0);
        let mut z = Vec::new();
        let mut cap = None;
        if has_wrap {
            let n = k * m;
            let p = 2 * m;
            // U columns: wrap_l into block row 0, then wrap_r into block row k-1
            for j in 0..p {
                let mut u = vec![0.0; n];
                if j < m {
                    for r in 0..m {
                        u[r] = wrap_l[r * m + j];
                    }
                } else {
                    for r in 0..m {
                        u[(k - 1) * m + r] = wrap_r[r * m + (j - m)];
                    }
                }
                tri_solve(&factors, &mat.lower, &mat.upper, k, m, &mut u);
                z.push(u);
            }
            // capacitance S = I + V^T Z; V selects block k-1 rows, then block 0 rows
            let mut s = vec![0.0; p * p];
            for (j, zj) in z.iter().enumerate() {
                for r in 0..m {
                    s[r * p + j] = zj[(k - 1) * m + r];
                    s[(m + r) * p + j] = zj[r];
                }
            }
            for d in 0..p {
                s[d * p + d] += 1.0;
            }
            cap = Some(DenseLu::factor(s, p)?);
        }
        Ok(TriFactor {
            k,
            m,
            factors,
            lower: mat.lower.clone(),
            upper: mat.upper.clone(),
            z,
            cap,
        })
    }

    fn solve(&self, r: &[f64], x: &mut [f64]) {
        let (k, m) = (self.k, self.m);
        x.copy_from_slice(r);
        tri_solve(&self.factors, &self.lower, &self.upper, k, m, x);
        if let Some(cap) = &self.cap {
            let p = 2 * m;
            let mut w = vec![0.0; p];
            for r in 0..m {
                w[r] = x[(k - 1) * m + r];
                w[m + r] = x[r];
            }
            cap.solve_in_place(&mut w);
            for (j, zj) in self.z.iter().enumerate() {
                let wj = w[j];
                if wj != 0.0 {
                    for (xv, zv) in x.iter_mut().zip(zj) {
                        *xv -= wj * zv;
                    }
                }
            }
        }
    }
}

fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize) {
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for l in 0..m {
                acc += a[i * m + l] * b[l * m + j];
            }
            out[i * m + j] = acc;
        }
    }
}

/// In-place solve of the wrap-free block-tridiagonal system using the
/// per-row factors produced by the Thomas sweep.
fn tri_solve(
    factors: &[DenseLu],
    lower: &[Vec<f64>],
    upper: &[Vec<f64>],
    k: usize,
    m: usize,
    x: &mut [f64],
) {
    let mut tmp = vec![0.0; m];
    let mut prod = vec![0.0; m];
    for i in 1..k {
        factors[i - 1].solve(&x[(i - 1) * m..i * m], &mut tmp);
        matvec_block(&lower[i], m, &tmp, &mut prod, false);
        for j in 0..m {
            x[i * m + j] -= prod[j];
        }
    }
    for i in (0..k).rev() {
        if i + 1 < k {
            matvec_block(&upper[i], m, &x[(i + 1) * m..(i + 2) * m], &mut prod, false);
            for j in 0..m {
                x[i * m + j] -= prod[j];
            }
        }
        factors[i].solve_in_place(&mut x[i * m..(i + 1) * m]);
    }
}

/// Builds M = I - shift*L from a block operator.
pub fn assemble(op: &dyn BlockOperator, shift: f64) -> BlockSparseMatrix {
    let (k, m) = (op.num_blocks(), op.block_size());
    let mut mat = BlockSparseMatrix::identity(k, m);
    let mut block = vec![0.0; m * m];
    for e in 0..k {
        op.diag_block(e, &mut block);
        for (dst, &src) in mat.diag[e].iter_mut().zip(&block) {
            *dst -= shift * src;
        }
        op.left_block(e, &mut block);
        for (dst, &src) in mat.lower[e].iter_mut().zip(&block) {
            *dst = -shift * src;
        }
        op.right_block(e, &mut block);
        for (dst, &src) in mat.upper[e].iter_mut().zip(&block) {
            *dst = -shift * src;
        }
    }
    mat
}

/// Factors `m` and solves for one right-hand side, verifying the residual
/// against 1e-12 * ||r||.
pub fn factor_solve(m: &BlockSparseMatrix, r: &[f64]) -> Result<Vec<f64>> {
    let f = m.factor()?;
    let mut x = vec![0.0; r.len()];
    f.solve(r, &mut x);
    let mut res = vec![0.0; r.len()];
    m.apply(&x, &mut res);
    let mut err = 0.0f64;
    let mut rnorm = 0.0f64;
    for i in 0..r.len() {
        err += (res[i] - r[i]) * (res[i] - r[i]);
        rnorm += r[i] * r[i];
    }
    let (err, rnorm) = (err.sqrt(), rnorm.sqrt());
    if err > 1e-12 * rnorm.max(1e-300) {
        return Err(Error::SolverFailure(format!(
            "block solve residual {err:.3e} exceeds 1e-12 * {rnorm:.3e}"
        )));
    }
    Ok(x)
}
