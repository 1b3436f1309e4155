//! Nodal DG spectral element discretization of the 1D periodic Burgers
//! equation in skew-symmetric split form.
//!
//! Collocation on Legendre-Gauss-Lobatto points gives a diagonal mass
//! matrix and a differentiation matrix satisfying the summation-by-parts
//! property W D + (W D)^T = diag(-1, 0, ..., 0, 1). With the split volume
//! term the semi-discrete entropy rate reduces to pure interface terms:
//!
//!   (q, R(q))_K = (1/6)(q_N^3 - q_0^3) - fhat_R q_N + fhat_L q_0,
//!
//! so the entropy-conserving flux (a^2 + ab + b^2)/6 cancels the production
//! exactly while the Lax-Friedrichs flux contributes
//! -(a-b)^2 (tau/2 + (a-b)/12) <= 0 per interface.
//!
//! States are flat vectors with layout `q[e * (N+1) + j]` for element `e`,
//! node `j`.

use crate::linsolve::BlockOperator;
use crate::mesh::Mesh1D;

/// Legendre-Gauss-Lobatto nodes, quadrature weights and differentiation
/// matrix on the reference element [-1, 1].
#[derive(Clone, Debug)]
pub struct LglBasis {
    /// Polynomial degree N (N+1 nodes).
    pub n: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row-major (N+1) x (N+1) differentiation matrix.
    pub d: Vec<f64>,
}

/// Legendre polynomial P_n and derivative P_n' by recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    if n == 0 {
        return (p0, d0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        let d2 = d0 + (2.0 * kf + 1.0) * p1;
        (p0, p1) = (p1, p2);
        (d0, d1) = (d1, d2);
    }
    (p1, d1)
}

impl LglBasis {
    pub fn new(n: usize) -> LglBasis {
        assert!(n >= 1, "LGL basis needs degree >= 1");
        let m = n + 1;
        let mut nodes = vec![0.0; m];
        nodes[0] = -1.0;
        nodes[n] = 1.0;
        // interior nodes are the roots of P_N'; Newton from Chebyshev guesses
        for j in 1..n {
            let mut x = -(std::f64::consts::PI * j as f64 / n as f64).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                // P_N'' from the Legendre ODE
                let ddp = (2.0 * x * dp - (n * (n + 1)) as f64 * p) / (1.0 - x * x);
                let step = dp / ddp;
                x -= step;
                if step.abs() <= 1e-15 {
                    break;
                }
            }
            nodes[j] = x;
        }
        // enforce symmetry exactly
        for j in 0..m / 2 {
            let v = 0.5 * (nodes[j] - nodes[n - j]);
            nodes[j] = v;
            nodes[n - j] = -v;
        }
        if m % 2 == 1 {
            nodes[n / 2] = 0.0;
        }

        let scale = (n * (n + 1)) as f64;
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let (p, _) = legendre(n, x);
                2.0 / (scale * p * p)
            })
            .collect();

        // barycentric differentiation matrix with negative-sum diagonal
        let mut lambda = vec![1.0; m];
        for j in 0..m {
            for k in 0..m {
                if k != j {
                    lambda[j] *= nodes[j] - nodes[k];
                }
            }
            lambda[j] = 1.0 / lambda[j];
        }
        let mut d = vec![0.0; m * m];
        for i in 0..m {
            let mut diag = 0.0;
            for j in 0..m {
                if i != j {
                    let v = lambda[j] / (lambda[i] * (nodes[i] - nodes[j]));
                    d[i * m + j] = v;
                    diag -= v;
                }
            }
            d[i * m + i] = diag;
        }

        LglBasis { n, nodes, weights, d }
    }

    pub fn num_nodes(&self) -> usize {
        self.n + 1
    }
}

/// Interface flux choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxKind {
    /// (a^2 + ab + b^2)/6: zero entropy production.
    EntropyConserving,
    /// Central flux plus max(|a|,|b|)/2 times the jump: dissipative.
    LaxFriedrichs,
}

impl FluxKind {
    /// Numerical flux for traces `a` (from the left element) and `b` (from
    /// the right element).
    pub fn interface(self, a: f64, b: f64) -> f64 {
        match self {
            FluxKind::EntropyConserving => (a * a + a * b + b * b) / 6.0,
            FluxKind::LaxFriedrichs => {
                0.25 * (a * a + b * b) + 0.5 * a.abs().max(b.abs()) * (a - b)
            }
        }
    }
}

/// Mesh plus basis plus flattened quadrature weights.
#[derive(Clone, Debug)]
pub struct DgGrid {
    pub mesh: Mesh1D,
    pub basis: LglBasis,
    /// (h_e/2) w_j per flat dof: the diagonal of the global mass matrix.
    pub mass: Vec<f64>,
}

impl DgGrid {
    pub fn new(mesh: Mesh1D, degree: usize) -> DgGrid {
        let basis = LglBasis::new(degree);
        let m = basis.num_nodes();
        let mut mass = Vec::with_capacity(mesh.num_elements() * m);
        for &h in &mesh.sizes {
            for &w in &basis.weights {
                mass.push(0.5 * h * w);
            }
        }
        DgGrid { mesh, basis, mass }
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    pub fn dof(&self) -> usize {
        self.mass.len()
    }

    pub fn node_x(&self, e: usize, j: usize) -> f64 {
        self.mesh.edges[e] + 0.5 * (self.basis.nodes[j] + 1.0) * self.mesh.sizes[e]
    }

    /// Nodal interpolant of `f`.
    pub fn project(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let m = self.basis.num_nodes();
        let mut q = vec![0.0; self.dof()];
        for e in 0..self.num_elements() {
            for j in 0..m {
                q[e * m + j] = f(self.node_x(e, j));
            }
        }
        q
    }

    /// Quadrature means per element.
    pub fn element_means(&self, q: &[f64], means: &mut [f64]) {
        let m = self.basis.num_nodes();
        for e in 0..self.num_elements() {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.basis.weights[j] * q[e * m + j];
            }
            means[e] = 0.5 * acc;
        }
    }

    /// Right-hand side of one element, given its nodal values and the two
    /// neighbor traces (`left_trace` is the rightmost value of element e-1,
    /// `right_trace` the leftmost value of element e+1).
    pub fn rhs_element(
        &self,
        e: usize,
        u: &[f64],
        left_trace: f64,
        right_trace: f64,
        flux: FluxKind,
        out: &mut [f64],
    ) {
        let m = self.basis.num_nodes();
        let d = &self.basis.d;
        let scale = -2.0 / self.mesh.sizes[e];
        for i in 0..m {
            let mut du = 0.0;
            let mut du2 = 0.0;
            let row = &d[i * m..(i + 1) * m];
            for j in 0..m {
                du += row[j] * u[j];
                du2 += row[j] * u[j] * u[j];
            }
            out[i] = scale * (du2 + u[i] * du) / 3.0;
        }
        let fl = flux.interface(left_trace, u[0]);
        let fr = flux.interface(u[m - 1], right_trace);
        out[m - 1] += scale * (fr - 0.5 * u[m - 1] * u[m - 1]) / self.basis.weights[m - 1];
        out[0] -= scale * (fl - 0.5 * u[0] * u[0]) / self.basis.weights[0];
    }

    /// Full periodic right-hand side R(q).
    pub fn rhs_full(&self, q: &[f64], flux: FluxKind, out: &mut [f64]) {
        let m = self.basis.num_nodes();
        let k = self.num_elements();
        for e in 0..k {
            let left = q[((e + k - 1) % k) * m + m - 1];
            let right = q[((e + 1) % k) * m];
            self.rhs_element(e, &q[e * m..(e + 1) * m], left, right, flux, &mut out[e * m..(e + 1) * m]);
        }
    }

    /// Discrete (mass, energy) with energy = integral of q^2/2.
    pub fn functionals(&self, q: &[f64]) -> (f64, f64) {
        let mut mass = 0.0;
        let mut energy = 0.0;
        for (w, &v) in self.mass.iter().zip(q) {
            mass += w * v;
            energy += 0.5 * w * v * v;
        }
        (mass, energy)
    }

    /// Mass-weighted inner product of two states.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mass.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
    }
}

/// Minmod of three slopes.
fn minmod(a: f64, b: f64, c: f64) -> f64 {
    if a > 0.0 && b > 0.0 && c > 0.0 {
        a.min(b).min(c)
    } else if a < 0.0 && b < 0.0 && c < 0.0 {
        a.max(b).max(c)
    } else {
        0.0
    }
}

/// Minmod limiter applied elementwise as a post-step: the deviation from
/// the element mean is scaled by
/// (qcheck_l + qcheck_r - 2 mean) / (q_l + q_r - 2 mean), where the checked
/// endpoint values come from minmod comparisons with the neighbor-mean
/// differences. Elements whose endpoint values survive the minmod (smooth
/// monotone data) and elements with a vanishing denominator are left
/// untouched. Element means, hence total mass, are preserved.
pub fn apply_limiter(grid: &DgGrid, q: &mut [f64]) {
    let m = grid.basis.num_nodes();
    let k = grid.num_elements();
    let mut means = vec![0.0; k];
    grid.element_means(q, &mut means);
    for e in 0..k {
        let mean = means[e];
        let fwd = means[(e + 1) % k] - mean;
        let bwd = mean - means[(e + k - 1) % k];
        let u = &mut q[e * m..(e + 1) * m];
        let (ql, qr) = (u[0], u[m - 1]);
        let ml = minmod(mean - ql, fwd, bwd);
        let mr = minmod(qr - mean, fwd, bwd);
        if ml == mean - ql && mr == qr - mean {
            continue;
        }
        let den = ql + qr - 2.0 * mean;
        if den.abs() < 1e-14 * mean.abs() + 1e-300 {
            continue;
        }
        let check_l = mean - ml;
        let check_r = mean + mr;
        let theta = (check_l + check_r - 2.0 * mean) / den;
        for v in u.iter_mut() {
            *v = mean + (*v - mean) * theta;
        }
    }
}

/// Linearized advection operator L around elementwise constants `qtilde`,
/// with central (EC pairing) or Lax-Friedrichs (ES pairing) interface flux.
/// Provides both a matrix-free apply and assembled blocks for the implicit
/// stage solves; the explicit remainder is N(q) = R(q) - L q.
///
/// This is a borrowed view: `qtilde` normally holds the elementwise means
/// of the state opening the current step (see [`BurgersSystem`]).
pub struct LinearizedAdvection<'a> {
    pub grid: &'a DgGrid,
    pub flux: FluxKind,
    pub qtilde: &'a [f64],
}

impl LinearizedAdvection<'_> {
    fn tau(&self, e_left: usize, e_right: usize) -> f64 {
        match self.flux {
            FluxKind::EntropyConserving => 0.0,
            FluxKind::LaxFriedrichs => self.qtilde[e_left].abs().max(self.qtilde[e_right].abs()),
        }
    }

    /// Linear interface flux for traces (a, b) between elements (el, er).
    fn gface(&self, el: usize, er: usize, a: f64, b: f64) -> f64 {
        0.5 * (self.qtilde[el] * a + self.qtilde[er] * b) + 0.5 * self.tau(el, er) * (a - b)
    }

    /// out = L q (periodic).
    pub fn apply(&self, q: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let m = grid.basis.num_nodes();
        let k = grid.num_elements();
        let d = &grid.basis.d;
        for e in 0..k {
            let prev = (e + k - 1) % k;
            let next = (e + 1) % k;
            let u = &q[e * m..(e + 1) * m];
            let scale = -2.0 / grid.mesh.sizes[e];
            let s = self.qtilde[e];
            for i in 0..m {
                let mut du = 0.0;
                let row = &d[i * m..(i + 1) * m];
                for j in 0..m {
                    du += row[j] * u[j];
                }
                out[e * m + i] = scale * s * du;
            }
            let gl = self.gface(prev, e, q[prev * m + m - 1], u[0]);
            let gr = self.gface(e, next, u[m - 1], q[next * m]);
            out[e * m + m - 1] += scale * (gr - s * u[m - 1]) / grid.basis.weights[m - 1];
            out[e * m] -= scale * (gl - s * u[0]) / grid.basis.weights[0];
        }
    }
}

impl BlockOperator for LinearizedAdvection<'_> {
    fn num_blocks(&self) -> usize {
        self.grid.num_elements()
    }

    fn block_size(&self) -> usize {
        self.grid.basis.num_nodes()
    }

    fn diag_block(&self, e: usize, out: &mut [f64]) {
        let grid = self.grid;
        let m = grid.basis.num_nodes();
        let k = grid.num_elements();
        let h = grid.mesh.sizes[e];
        let s = self.qtilde[e];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = -2.0 / h * s * grid.basis.d[i * m + j];
            }
        }
        let tau_l = self.tau((e + k - 1) % k, e);
        let tau_r = self.tau(e, (e + 1) % k);
        out[(m - 1) * m + m - 1] += (s - tau_r) / (h * grid.basis.weights[m - 1]);
        out[0] -= (s + tau_l) / (h * grid.basis.weights[0]);
    }

    fn left_block(&self, e: usize, out: &mut [f64]) {
        let grid = self.grid;
        let m = grid.basis.num_nodes();
        let k = grid.num_elements();
        let prev = (e + k - 1) % k;
        out.fill(0.0);
        let tau_l = self.tau(prev, e);
        out[m - 1] = (self.qtilde[prev] + tau_l) / (grid.mesh.sizes[e] * grid.basis.weights[0]);
    }

    fn right_block(&self, e: usize, out: &mut [f64]) {
        let grid = self.grid;
        let m = grid.basis.num_nodes();
        let k = grid.num_elements();
        let next = (e + 1) % k;
        out.fill(0.0);
        let tau_r = self.tau(e, next);
        out[(m - 1) * m] = -(self.qtilde[next] - tau_r) / (grid.mesh.sizes[e] * grid.basis.weights[m - 1]);
    }
}

/// Splits R(q) into (Lq, N(q)) for the current reference state of `lin`.
pub fn rhs_split(grid: &DgGrid, lin: &LinearizedAdvection, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut lq = vec![0.0; q.len()];
    let mut nq = vec![0.0; q.len()];
    lin.apply(q, &mut lq);
    grid.rhs_full(q, lin.flux, &mut nq);
    for i in 0..q.len() {
        nq[i] -= lq[i];
    }
    (lq, nq)
}

/// The Burgers discretization as a steppable system: owns the grid, the
/// frozen linearization state and a per-step cache of factored shifted
/// operators (one per distinct diagonal coefficient of the implicit
/// tableau; the cache empties whenever the linearization moves).
pub struct BurgersSystem {
    pub grid: DgGrid,
    pub flux: FluxKind,
    pub qtilde: Vec<f64>,
    factors: Vec<(f64, crate::linsolve::BlockSparseMatrix, crate::linsolve::BlockFactor)>,
}

impl BurgersSystem {
    pub fn new(grid: DgGrid, flux: FluxKind) -> Self {
        let k = grid.num_elements();
        BurgersSystem {
            grid,
            flux,
            qtilde: vec![0.0; k],
            factors: Vec::new(),
        }
    }

    pub fn lin(&self) -> LinearizedAdvection<'_> {
        LinearizedAdvection {
            grid: &self.grid,
            flux: self.flux,
            qtilde: &self.qtilde,
        }
    }
}

impl crate::ark::System for BurgersSystem {
    fn dim(&self) -> usize {
        self.grid.dof()
    }

    fn rhs(&self, q: &[f64], out: &mut [f64]) {
        self.grid.rhs_full(q, self.flux, out);
    }

    fn refresh(&mut self, q: &[f64]) {
        let means_ptr = &mut self.qtilde;
        self.grid.element_means(q, means_ptr);
        self.factors.clear();
    }

    fn apply_l(&self, q: &[f64], out: &mut [f64]) {
        self.lin().apply(q, out);
    }

    fn solve_shifted(&mut self, shift: f64, r: &[f64]) -> crate::Result<Vec<f64>> {
        if !self.factors.iter().any(|(s, _, _)| *s == shift) {
            let mat = crate::linsolve::assemble(&self.lin(), shift);
            let fac = mat.factor()?;
            self.factors.push((shift, mat, fac));
        }
        let (_, mat, fac) = self
            .factors
            .iter()
            .find(|(s, _, _)| *s == shift)
            .expect("factor inserted above");
        let mut x = vec![0.0; r.len()];
        fac.solve(r, &mut x);
        let mut check = vec![0.0; r.len()];
        mat.apply(&x, &mut check);
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let defect = check
            .iter()
            .zip(r)
            .map(|(c, r)| (c - r) * (c - r))
            .sum::<f64>()
            .sqrt();
        if defect > 1e-12 * rnorm.max(1.0) {
            return Err(crate::error::Error::SolverFailure(format!(
                "shifted solve defect {defect:.3e} for shift {shift:.3e}"
            )));
        }
        Ok(x)
    }
}
