//! Backstepping kernels, gains and derived norms.
//!
//! The control kernel K solves the Goursat problem
//!
//! ```text
//! eps (K_xx - K_yy) = lambda K          on 0 <= y <= x <= 1,
//! K(x, x)  = -lambda x / (2 eps),
//! K(x, 0)  = 0            (Dirichlet edge, theta2 = 1)   or
//! K_y(x,0) = q0 K(x, 0)   (Robin edge; q0 = 0 is Neumann, theta1 = 1).
//! ```
//!
//! In characteristic coordinates `xi = x + y`, `eta = x - y` the problem
//! becomes `G_xi_eta = (c/4) G` with `c = lambda/eps` and is solved by
//! successive approximation of the equivalent double-integral equation
//! (composite trapezoid cumulative integrals).  The Dirichlet edge is
//! handled by odd reflection onto the square `[0,2]^2`; the Robin edge via
//! a fixed point that carries the diagonal trace `phi(s) = G(s,s)`.
//!
//! Inverse kernels L and Q are produced by marching inversion of the
//! discrete Volterra composition identity, so the composition residual is
//! at rounding level on the same grid (the independently solved Goursat
//! problem for L is kept as a test oracle).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical plant constants and the boundary configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    /// Diffusion coefficient, > 0.
    pub eps: f64,
    /// Reaction coefficient, > 0 (0 allowed for degenerate tests).
    pub lambda: f64,
    /// Robin coefficient at x = 1, > 0.
    pub q: f64,
    /// 1 for the anti-collocated configuration (Neumann at x = 0).
    pub theta1: u8,
    /// 1 for the collocated configuration (Dirichlet at x = 0).
    pub theta2: u8,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidParams(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParams(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.q > 0.0) || !self.q.is_finite() {
            return Err(Error::InvalidParams(format!("q must be > 0, got {}", self.q)));
        }
        if self.theta1 > 1 || self.theta2 > 1 || self.theta1 + self.theta2 != 1 {
            return Err(Error::InvalidParams(
                "exactly one of theta1, theta2 must be 1".into(),
            ));
        }
        // Assumption 1: q > lambda/(2 eps) + theta1/2.
        let bound = self.lambda / (2.0 * self.eps) + 0.5 * self.theta1 as f64;
        if self.q <= bound {
            return Err(Error::InvalidParams(format!(
                "Assumption 1 violated: q = {} must exceed lambda/(2 eps) + theta1/2 = {}",
                self.q, bound
            )));
        }
        Ok(())
    }

    /// Reduced Robin coefficient q_bar = q - lambda/(2 eps).
    pub fn q_bar(&self) -> f64 {
        self.q - self.lambda / (2.0 * self.eps)
    }

    /// Reaction-to-diffusion ratio c = lambda/eps.
    pub fn reaction_ratio(&self) -> f64 {
        self.lambda / self.eps
    }

    /// True for the collocated configuration (sense and actuate at x = 1).
    pub fn collocated(&self) -> bool {
        self.theta2 == 1
    }
}

/// Uniform triangular grid parameterisation: spacing 1/n on both axes.
#[derive(Debug, Clone, Copy)]
pub struct TriangularGrid {
    pub n: usize,
}

impl TriangularGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("grid n must be >= 2, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// Dense (n+1) x (n+1) table of kernel samples at (i/n, j/n); entries
/// outside the kernel's triangle are zero.
#[derive(Debug, Clone)]
pub struct Grid2 {
    n: usize,
    data: Vec<f64>,
}

impl Grid2 {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; (n + 1) * (n + 1)] }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.n + 1) + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * (self.n + 1) + j] = v;
    }
}

/// Edge condition at y = 0 for the Goursat problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeCondition {
    /// K(x, 0) = 0.
    Dirichlet,
    /// K_y(x, 0) = q0 K(x, 0); q0 = 0 is Neumann.
    Robin(f64),
}

const MAX_PICARD_ITERS: usize = 200;
const PICARD_TOL: f64 = 1e-12;

/// Converged Goursat solution on the characteristic square [0,2]^2 with
/// spacing `h = 1/nref` (so `m = 2 nref + 1` points per axis).
pub struct GoursatSolution {
    nref: usize,
    h: f64,
    m: usize,
    g: Vec<f64>,
    /// Cumulative trapezoid of g along xi (axis 0).
    cum0: Vec<f64>,
    /// Cumulative trapezoid of g along eta (axis 1).
    cum1: Vec<f64>,
    /// Central-FD derivative of the diagonal trace phi(s) = G(s,s)
    /// (Robin edge only; empty for Dirichlet).
    dphi: Vec<f64>,
    phi: Vec<f64>,
    c_eq: f64,
    c_diag: f64,
    edge: EdgeCondition,
}

fn cum_trap_axis0(a: &[f64], m: usize, h: f64, out: &mut [f64]) {
    out[..m].fill(0.0);
    for i in 1..m {
        for j in 0..m {
            out[i * m + j] = out[(i - 1) * m + j] + 0.5 * h * (a[i * m + j] + a[(i - 1) * m + j]);
        }
    }
}

fn cum_trap_axis1(a: &[f64], m: usize, h: f64, out: &mut [f64]) {
    for i in 0..m {
        out[i * m] = 0.0;
        for j in 1..m {
            out[i * m + j] = out[i * m + j - 1] + 0.5 * h * (a[i * m + j] + a[i * m + j - 1]);
        }
    }
}

/// Solve `G_xi_eta = (c_eq/4) G` on [0,2]^2 with diagonal data
/// `G(xi, 0) = -(c_diag/4) xi` and the requested y = 0 edge condition,
/// by successive approximation with sup-norm tolerance 1e-12.
pub fn solve_goursat(
    c_eq: f64,
    c_diag: f64,
    edge: EdgeCondition,
    nref: usize,
) -> Result<GoursatSolution> {
    let m = 2 * nref + 1;
    let h = 1.0 / nref as f64;
    let xi = |i: usize| i as f64 * h;

    let mut g = vec![0.0; m * m];
    let mut tmp0 = vec![0.0; m * m];
    let mut tmp1 = vec![0.0; m * m];

    match edge {
        EdgeCondition::Dirichlet => {
            // Odd reflection: data G0 = -(c_diag/4)(xi - eta) on the full square.
            for i in 0..m {
                for j in 0..m {
                    g[i * m + j] = -(c_diag / 4.0) * (xi(i) - xi(j));
                }
            }
            let mut converged = false;
            for _ in 0..MAX_PICARD_ITERS {
                cum_trap_axis0(&g, m, h, &mut tmp0);
                cum_trap_axis1(&tmp0, m, h, &mut tmp1);
                let mut diff: f64 = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        let v = -(c_diag / 4.0) * (xi(i) - xi(j)) + 0.25 * c_eq * tmp1[i * m + j];
                        diff = diff.max((v - g[i * m + j]).abs());
                        g[i * m + j] = v;
                    }
                }
                if diff < PICARD_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoConvergence(MAX_PICARD_ITERS));
            }
        }
        EdgeCondition::Robin(q0) => {
            // Fixed point carrying phi(s) = G(s,s):
            //   G(xi,eta) = -(c_diag/4) xi + phi(eta)/2 - (q0/2) int_0^eta phi
            //               + (c_eq/4) int_0^eta int_s^xi G(sig, s) dsig ds.
            for i in 0..m {
                for j in 0..m {
                    g[i * m + j] = -(c_diag / 4.0) * xi(i);
                }
            }
            let mut phi = vec![0.0; m];
            let mut intphi = vec![0.0; m];
            let mut converged = false;
            for _ in 0..2 * MAX_PICARD_ITERS {
                for j in 0..m {
                    phi[j] = g[j * m + j];
                }
                intphi[0] = 0.0;
                for j in 1..m {
                    intphi[j] = intphi[j - 1] + 0.5 * h * (phi[j] + phi[j - 1]);
                }
                // tmp0 = C(xi, s) = int_0^xi G(sig, s) dsig
                cum_trap_axis0(&g, m, h, &mut tmp0);
                // tmp1 = int_0^eta [C(xi,s) - C(s,s)] ds
                {
                    // J(xi, s) = C(xi, s) - C(s, s), cumulated over s (axis 1).
                    for i in 0..m {
                        let mut acc = 0.0;
                        let mut prev = tmp0[i * m] - tmp0[0];
                        tmp1[i * m] = 0.0;
                        for j in 1..m {
                            let cur = tmp0[i * m + j] - tmp0[j * m + j];
                            acc += 0.5 * h * (cur + prev);
                            tmp1[i * m + j] = acc;
                            prev = cur;
                        }
                    }
                }
                let mut diff: f64 = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        let v = -(c_diag / 4.0) * xi(i) + 0.5 * phi[j] - 0.5 * q0 * intphi[j]
                            + 0.25 * c_eq * tmp1[i * m + j];
                        diff = diff.max((v - g[i * m + j]).abs());
                        g[i * m + j] = v;
                    }
                }
                if diff < PICARD_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoConvergence(2 * MAX_PICARD_ITERS));
            }
        }
    }

    // Post-convergence cumulatives for analytic derivative traces.
    let mut cum0 = vec![0.0; m * m];
    let mut cum1 = vec![0.0; m * m];
    cum_trap_axis0(&g, m, h, &mut cum0);
    cum_trap_axis1(&g, m, h, &mut cum1);

    let (phi, dphi) = match edge {
        EdgeCondition::Dirichlet => (Vec::new(), Vec::new()),
        EdgeCondition::Robin(_) => {
            let mut phi = vec![0.0; m];
            for j in 0..m {
                phi[j] = g[j * m + j];
            }
            let dphi = fd_gradient_owned(&phi, h);
            (phi, dphi)
        }
    };

    Ok(GoursatSolution { nref, h, m, g, cum0, cum1, dphi, phi, c_eq, c_diag, edge })
}

/// Second-order finite-difference gradient (central interior, one-sided ends).
pub fn fd_gradient_owned(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    if n < 3 {
        if n == 2 {
            let d = (v[1] - v[0]) / h;
            out[0] = d;
            out[1] = d;
        }
        return out;
    }
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    out
}

impl GoursatSolution {
    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.m + j]
    }

    /// Analytic G_xi from the integral equation.
    #[inline]
    pub fn d_xi(&self, i: usize, j: usize) -> f64 {
        -0.25 * self.c_diag + 0.25 * self.c_eq * self.cum1[i * self.m + j]
    }

    /// Analytic G_eta from the integral equation (edge-dependent form).
    #[inline]
    pub fn d_eta(&self, i: usize, j: usize) -> f64 {
        match self.edge {
            EdgeCondition::Dirichlet => {
                0.25 * self.c_diag + 0.25 * self.c_eq * self.cum0[i * self.m + j]
            }
            EdgeCondition::Robin(q0) => {
                0.5 * self.dphi[j] - 0.5 * q0 * self.phi[j]
                    + 0.25 * self.c_eq * (self.cum0[i * self.m + j] - self.cum0[j * self.m + j])
            }
        }
    }

    pub fn nref(&self) -> usize {
        self.nref
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }
}

/// Control kernel K, its inverse L, and the refined control-gain trace.
#[derive(Debug, Clone)]
pub struct ControlKernels {
    /// Table resolution: samples at spacing 1/n on the lower triangle.
    pub n: usize,
    pub k_table: Grid2,
    pub l_table: Grid2,
    /// Gain trace sampled at spacing 1/(2n): k(y) = K_x(1,y) + q_bar K(1,y).
    pub k: Vec<f64>,
    /// First and second finite-difference derivatives on the refined trace.
    pub kp: Vec<f64>,
    pub kpp: Vec<f64>,
}

impl ControlKernels {
    pub fn k0(&self) -> f64 {
        self.k[0]
    }
    pub fn k1(&self) -> f64 {
        *self.k.last().unwrap()
    }
    pub fn kp1(&self) -> f64 {
        *self.kp.last().unwrap()
    }
}

/// Observer-error kernels P, Q and the output-injection gains.
#[derive(Debug, Clone)]
pub struct ObserverKernels {
    pub n: usize,
    /// P on the configuration triangle (x <= y collocated, y <= x anti-collocated).
    pub p_table: Grid2,
    pub q_table: Grid2,
    /// Interior injection gain p1(x) on the refined trace (spacing 1/(2n)).
    pub p1: Vec<f64>,
    /// Boundary injection gain.
    pub p10: f64,
}

/// Scalar norms consumed by the trigger-parameter and STC formulas.
#[derive(Debug, Clone, Copy)]
pub struct KernelNorms {
    pub norm_k: f64,
    pub norm_p1: f64,
    /// L_tilde = 1 + (double integral of L^2)^(1/2).
    pub l_tilde: f64,
    /// L_check = (int L(1,y)^2 dy)^(1/2).
    pub l_check: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub norm_g: f64,
    pub max_q_diag: f64,
}

/// Everything downstream formulas need about the kernels.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub plant: PlantParams,
    pub n: usize,
    pub control: ControlKernels,
    pub observer: ObserverKernels,
    pub norms: KernelNorms,
}

impl KernelSet {
    /// Full pipeline: control kernel, observer kernel, derived norms.
    pub fn compute(p: &PlantParams, grid: &TriangularGrid) -> Result<Self> {
        p.validate()?;
        let control = solve_control_kernel(p, grid)?;
        let observer = solve_observer_kernel(p, grid)?;
        let norms = derived_norms(p, &control, &observer);
        Ok(Self { plant: *p, n: grid.n, control, observer, norms })
    }
}

/// Linear interpolation of a uniformly sampled trace on [0, 1].
pub fn sample_linear(vals: &[f64], x: f64) -> f64 {
    let n = vals.len() - 1;
    let t = x.clamp(0.0, 1.0) * n as f64;
    let i = (t.floor() as usize).min(n.saturating_sub(1));
    let frac = t - i as f64;
    vals[i] * (1.0 - frac) + vals[i + 1] * frac
}

/// Composite trapezoid of uniformly spaced samples.
pub fn trapezoid(vals: &[f64], h: f64) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    let inner: f64 = vals[1..vals.len() - 1].iter().sum();
    h * (0.5 * (vals[0] + vals[vals.len() - 1]) + inner)
}

fn edge_for_control(p: &PlantParams) -> EdgeCondition {
    if p.collocated() {
        EdgeCondition::Dirichlet
    } else {
        EdgeCondition::Robin(0.0)
    }
}

/// Extract a lower-triangle kernel table K(x,y) = G(x+y, x-y) from a
/// characteristic-square solution at nref = 2n.
fn lower_table_from(sol: &GoursatSolution, n: usize) -> Grid2 {
    let mut t = Grid2::zeros(n);
    for i in 0..=n {
        for j in 0..=i {
            t.set(i, j, sol.value(2 * (i + j), 2 * (i - j)));
        }
    }
    t
}

/// Solve the control kernel problem: K on the lower triangle, L by
/// marching inversion, and the refined gain trace k with FD derivatives.
pub fn solve_control_kernel(p: &PlantParams, grid: &TriangularGrid) -> Result<ControlKernels> {
    p.validate()?;
    let n = grid.n;
    let nref = 2 * n;
    let c = p.reaction_ratio();
    let sol = solve_goursat(c, c, edge_for_control(p), nref)?;

    let k_table = lower_table_from(&sol, n);
    let l_table = invert_lower(&k_table);

    // Trace along x = 1: xi = 1 + y, eta = 1 - y; indices i = nref + l, j = nref - l.
    let h = sol.spacing();
    let qbar = p.q_bar();
    let mut k = vec![0.0; nref + 1];
    for l in 0..=nref {
        let (i, j) = (nref + l, nref - l);
        let kx1 = sol.d_xi(i, j) + sol.d_eta(i, j);
        let k1y = sol.value(i, j);
        k[l] = kx1 + qbar * k1y;
    }
    let kp = fd_gradient_owned(&k, h);
    let kpp = fd_gradient_owned(&kp, h);

    Ok(ControlKernels { n, k_table, l_table, k, kp, kpp })
}

/// Solve the observer kernel problem: P and Q on the configuration
/// triangle plus the output-injection gains p1(x), p10.
pub fn solve_observer_kernel(p: &PlantParams, grid: &TriangularGrid) -> Result<ObserverKernels> {
    p.validate()?;
    let n = grid.n;
    let nref = 2 * n;
    let c = p.reaction_ratio();

    if p.collocated() {
        // P(x,y) = K(y,x) on x <= y (transpose of the Dirichlet control kernel);
        // gains from the x = 1 trace of K:
        //   p1(x) = -eps (K_x(1,x) + q K(1,x)),   p10 = lambda/(2 eps).
        let sol = solve_goursat(c, c, EdgeCondition::Dirichlet, nref)?;
        let kt = lower_table_from(&sol, n);
        let mut p_table = Grid2::zeros(n);
        for i in 0..=n {
            for j in i..=n {
                p_table.set(i, j, kt.get(j, i));
            }
        }
        let q_table = invert_upper(&p_table);
        let mut p1 = vec![0.0; nref + 1];
        for l in 0..=nref {
            let (i, j) = (nref + l, nref - l);
            let kx1 = sol.d_xi(i, j) + sol.d_eta(i, j);
            p1[l] = -p.eps * (kx1 + p.q * sol.value(i, j));
        }
        let p10 = p.lambda / (2.0 * p.eps);
        Ok(ObserverKernels { n, p_table, q_table, p1, p10 })
    } else {
        // Anti-collocated: R(a,b) := P(1-b, 1-a) solves the same Goursat
        // problem with a Robin edge R_b(a,0) = q R(a,0).  Then
        //   P(x,y) = R(1-y, 1-x),  p1(x) = eps P_y(x,0) = -eps R_a(1, 1-x),
        //   p10 = P(0,0) = -lambda/(2 eps).
        let sol = solve_goursat(c, c, EdgeCondition::Robin(p.q), nref)?;
        let mut p_table = Grid2::zeros(n);
        for i in 0..=n {
            for j in 0..=i {
                // (a,b) = (1-y, 1-x): xi = 2-(x+y), eta = (x-y)/1.
                p_table.set(i, j, sol.value(2 * (2 * n - (i + j)), 2 * (i - j)));
            }
        }
        let q_table = invert_lower(&p_table);
        let mut p1 = vec![0.0; nref + 1];
        for l in 0..=nref {
            // R_a at (a, b) = (1, 1-x): xi = 2 - x, eta = x.
            let (i, j) = (2 * nref - l, l);
            p1[l] = -p.eps * (sol.d_xi(i, j) + sol.d_eta(i, j));
        }
        let p10 = -p.lambda / (2.0 * p.eps);
        Ok(ObserverKernels { n, p_table, q_table, p1, p10 })
    }
}

/// Marching inversion of the lower-triangle Volterra identity
/// `L(x,y) = K(x,y) + int_y^x K(x,s) L(s,y) ds` with trapezoid quadrature;
/// the unknown endpoint carries weight (h/2) K(x,x) and is solved directly.
pub fn invert_lower(k: &Grid2) -> Grid2 {
    let n = k.n();
    let h = 1.0 / n as f64;
    let mut l = Grid2::zeros(n);
    for j in 0..=n {
        l.set(j, j, k.get(j, j));
        for i in j + 1..=n {
            let mut s = 0.0;
            for m in j..i {
                let w = if m == j { 0.5 } else { 1.0 };
                s += w * k.get(i, m) * l.get(m, j);
            }
            let denom = 1.0 - 0.5 * h * k.get(i, i);
            l.set(i, j, (k.get(i, j) + h * s) / denom);
        }
    }
    l
}

/// Upper-triangle analogue: `Q(x,y) = P(x,y) + int_x^y Q(x,s) P(s,y) ds`.
pub fn invert_upper(p: &Grid2) -> Grid2 {
    let n = p.n();
    let h = 1.0 / n as f64;
    let mut q = Grid2::zeros(n);
    for i in 0..=n {
        q.set(i, i, p.get(i, i));
        for j in i + 1..=n {
            let mut s = 0.0;
            for m in i..j {
                let w = if m == i { 0.5 } else { 1.0 };
                s += w * q.get(i, m) * p.get(m, j);
            }
            let denom = 1.0 - 0.5 * h * p.get(j, j);
            q.set(i, j, (p.get(i, j) + h * s) / denom);
        }
    }
    q
}

/// Double trapezoid of f^2 over the table's triangle.
fn tri_l2sq(t: &Grid2, lower: bool) -> f64 {
    let n = t.n();
    let h = 1.0 / n as f64;
    let mut rows = vec![0.0; n + 1];
    for i in 0..=n {
        let (lo, hi) = if lower { (0, i) } else { (i, n) };
        if hi > lo {
            let mut s = 0.0;
            for j in lo..=hi {
                let w = if j == lo || j == hi { 0.5 } else { 1.0 };
                s += w * t.get(i, j) * t.get(i, j);
            }
            rows[i] = h * s;
        }
    }
    trapezoid(&rows, h)
}

/// x-direction finite difference of a triangular table, staying inside the
/// triangle (one-sided near the diagonal and the outer edge).
fn tri_dx_l2sq(t: &Grid2, lower: bool) -> f64 {
    let n = t.n();
    let h = 1.0 / n as f64;
    let mut dx = Grid2::zeros(n);
    for i in 0..=n {
        let (jlo, jhi) = if lower { (0usize, i) } else { (i, n) };
        for j in jlo..=jhi {
            // Differentiate along i at fixed j; valid i-range keeps (i,j) in
            // the triangle: lower needs i >= j, upper needs i <= j.
            let (ilo, ihi) = if lower { (j, n) } else { (0, j) };
            let v = if ihi - ilo < 2 {
                if ihi > ilo {
                    (t.get(ihi, j) - t.get(ilo, j)) / h
                } else {
                    0.0
                }
            } else if i == ilo {
                (-3.0 * t.get(i, j) + 4.0 * t.get(i + 1, j) - t.get(i + 2, j)) / (2.0 * h)
            } else if i == ihi {
                (3.0 * t.get(i, j) - 4.0 * t.get(i - 1, j) + t.get(i - 2, j)) / (2.0 * h)
            } else {
                (t.get(i + 1, j) - t.get(i - 1, j)) / (2.0 * h)
            };
            dx.set(i, j, v);
        }
    }
    tri_l2sq(&dx, lower)
}

/// Compute every derived norm used by Assumption 2 and the STC constants.
pub fn derived_norms(
    p: &PlantParams,
    control: &ControlKernels,
    observer: &ObserverKernels,
) -> KernelNorms {
    let n = control.n;
    let h_tab = 1.0 / n as f64;
    let h_ref = 1.0 / (2 * n) as f64;

    let norm_k = trapezoid(&control.k.iter().map(|v| v * v).collect::<Vec<_>>(), h_ref).sqrt();
    let norm_p1 =
        trapezoid(&observer.p1.iter().map(|v| v * v).collect::<Vec<_>>(), h_ref).sqrt();

    let l_tilde = 1.0 + tri_l2sq(&control.l_table, true).sqrt();
    let l_last: Vec<f64> =
        (0..=n).map(|j| control.l_table.get(n, j).powi(2)).collect();
    let l_check = trapezoid(&l_last, h_tab).sqrt();

    // g(x) = p1(x) - (theta1 lambda / 2) K(x,0) - int_0^x K(x,y) p1(y) dy,
    // evaluated on the table grid (p1 subsampled from the refined trace).
    let p1_tab: Vec<f64> = (0..=n).map(|i| observer.p1[2 * i]).collect();
    let mut g2 = vec![0.0; n + 1];
    for i in 0..=n {
        let mut conv = 0.0;
        if i > 0 {
            for j in 0..=i {
                let w = if j == 0 || j == i { 0.5 } else { 1.0 };
                conv += w * control.k_table.get(i, j) * p1_tab[j];
            }
            conv *= h_tab;
        }
        let gi = p1_tab[i]
            - 0.5 * p.theta1 as f64 * p.lambda * control.k_table.get(i, 0)
            - conv;
        g2[i] = gi * gi;
    }
    let norm_g = trapezoid(&g2, h_tab).sqrt();

    let lower = !p.collocated();
    let max_q_diag =
        (0..=n).map(|i| observer.q_table.get(i, i).abs()).fold(0.0f64, f64::max);
    let omega1 = 1.0 + tri_l2sq(&observer.q_table, lower).sqrt();
    let omega2 = max_q_diag + tri_dx_l2sq(&observer.q_table, lower).sqrt();

    KernelNorms { norm_k, norm_p1, l_tilde, l_check, omega1, omega2, norm_g, max_q_diag }
}

/// Write the control kernel table as CSV (x, y, K, L) over the lower triangle.
pub fn write_control_csv<W: std::io::Write>(ks: &KernelSet, mut w: W) -> Result<()> {
    let n = ks.n;
    writeln!(w, "x,y,K,L")?;
    for i in 0..=n {
        for j in 0..=i {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e}",
                i as f64 / n as f64,
                j as f64 / n as f64,
                ks.control.k_table.get(i, j),
                ks.control.l_table.get(i, j)
            )?;
        }
    }
    Ok(())
}

/// Write the observer kernel table as CSV (x, y, P, Q) over its triangle.
pub fn write_observer_csv<W: std::io::Write>(ks: &KernelSet, mut w: W) -> Result<()> {
    let n = ks.n;
    writeln!(w, "x,y,P,Q")?;
    for i in 0..=n {
        let (lo, hi) = if ks.plant.collocated() { (i, n) } else { (0, i) };
        for j in lo..=hi {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e}",
                i as f64 / n as f64,
                j as f64 / n as f64,
                ks.observer.p_table.get(i, j),
                ks.observer.q_table.get(i, j)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub fn paper_plant() -> PlantParams {
        PlantParams { eps: 0.001, lambda: 0.01, q: 5.1, theta1: 0, theta2: 1 }
    }

    /// Closed-form series for I1(z)/z with z^2 = s (valid for s >= 0):
    /// I1(z)/z = (1/2) sum_{k>=0} (s/4)^k / (k! (k+1)!).
    fn i1_over_z(s: f64) -> f64 {
        let mut term = 0.5;
        let mut sum = term;
        for k in 1..60 {
            term *= (s / 4.0) / (k as f64 * (k as f64 + 1.0));
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    }

    /// J1(z)/z with z^2 = s: alternating version of the same series.
    fn j1_over_z(s: f64) -> f64 {
        let mut term = 0.5;
        let mut sum = term;
        for k in 1..60 {
            term *= -(s / 4.0) / (k as f64 * (k as f64 + 1.0));
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-30) {
                break;
            }
        }
        sum
    }

    /// Closed-form Dirichlet control kernel K(x,y) = -c y I1(z)/z,
    /// z = sqrt(c (x^2 - y^2)) — independent Bessel-series oracle.
    fn k_dirichlet_exact(c: f64, x: f64, y: f64) -> f64 {
        -c * y * i1_over_z(c * (x * x - y * y))
    }

    fn l_dirichlet_exact(c: f64, x: f64, y: f64) -> f64 {
        -c * y * j1_over_z(c * (x * x - y * y))
    }

    /// Closed-form Neumann control kernel K(x,y) = -c x I1(z)/z.
    fn k_neumann_exact(c: f64, x: f64, y: f64) -> f64 {
        -c * x * i1_over_z(c * (x * x - y * y))
    }

    #[test]
    fn zero_reaction_gives_zero_kernels() {
        let p = PlantParams { eps: 1.0, lambda: 0.0, q: 1.0, theta1: 0, theta2: 1 };
        let ks = KernelSet::compute(&p, &TriangularGrid::new(16).unwrap()).unwrap();
        for i in 0..=16 {
            for j in 0..=i {
                assert_eq!(ks.control.k_table.get(i, j), 0.0);
                assert_eq!(ks.control.l_table.get(i, j), 0.0);
            }
        }
        assert!(ks.control.k.iter().all(|&v| v == 0.0));
        assert!(ks.observer.p1.iter().all(|&v| v == 0.0));
        assert_eq!(ks.observer.p10, 0.0);
        assert_eq!(ks.norms.l_tilde, 1.0);
        assert_eq!(ks.norms.l_check, 0.0);
        assert_eq!(ks.norms.omega1, 1.0);
    }

    #[test]
    fn dirichlet_kernel_matches_bessel_oracle() {
        let p = paper_plant();
        let c = p.reaction_ratio();
        let n = 128;
        let ck = solve_control_kernel(&p, &TriangularGrid::new(n).unwrap()).unwrap();
        let mut worst = 0.0f64;
        for i in 0..=n {
            for j in 0..=i {
                let x = i as f64 / n as f64;
                let y = j as f64 / n as f64;
                worst = worst.max((ck.k_table.get(i, j) - k_dirichlet_exact(c, x, y)).abs());
            }
        }
        assert!(worst < 2e-4, "worst Dirichlet kernel error {worst}");
    }

    #[test]
    fn neumann_kernel_matches_bessel_oracle() {
        let p = PlantParams { eps: 0.001, lambda: 0.01, q: 5.6, theta1: 1, theta2: 0 };
        let c = p.reaction_ratio();
        let n = 128;
        let ck = solve_control_kernel(&p, &TriangularGrid::new(n).unwrap()).unwrap();
        let mut worst = 0.0f64;
        for i in 0..=n {
            for j in 0..=i {
                let x = i as f64 / n as f64;
                let y = j as f64 / n as f64;
                worst = worst.max((ck.k_table.get(i, j) - k_neumann_exact(c, x, y)).abs());
            }
        }
        assert!(worst < 2e-4, "worst Neumann kernel error {worst}");
    }

    #[test]
    fn inverse_kernel_matches_its_own_goursat_solution() {
        // Production L is a discrete Volterra inversion; the independent
        // route is L's own Goursat problem (reaction sign flipped, same
        // diagonal data), which has the closed form -c y J1(z)/z.
        let p = paper_plant();
        let c = p.reaction_ratio();
        let n = 128;
        let ck = solve_control_kernel(&p, &TriangularGrid::new(n).unwrap()).unwrap();
        let sol = solve_goursat(-c, c, EdgeCondition::Dirichlet, 2 * n).unwrap();
        let mut worst_vs_goursat = 0.0f64;
        let mut worst_vs_exact = 0.0f64;
        for i in 0..=n {
            for j in 0..=i {
                let x = i as f64 / n as f64;
                let y = j as f64 / n as f64;
                let l_inv = ck.l_table.get(i, j);
                let l_gsat = sol.value(2 * (i + j), 2 * (i - j));
                worst_vs_goursat = worst_vs_goursat.max((l_inv - l_gsat).abs());
                worst_vs_exact = worst_vs_exact.max((l_inv - l_dirichlet_exact(c, x, y)).abs());
            }
        }
        assert!(worst_vs_goursat < 5e-4, "L inversion vs Goursat: {worst_vs_goursat}");
        assert!(worst_vs_exact < 5e-4, "L inversion vs Bessel oracle: {worst_vs_exact}");
    }

    #[test]
    fn gain_trace_matches_closed_form_derivative() {
        // k(1) = K_x(1,1) + q_bar K(1,1) with K_x(1,1) = -c^2/8 exactly.
        let p = paper_plant();
        let c = p.reaction_ratio();
        let ck = solve_control_kernel(&p, &TriangularGrid::new(128).unwrap()).unwrap();
        let expected = -c * c / 8.0 + p.q_bar() * (-c / 2.0);
        assert_abs_diff_eq!(ck.k1(), expected, epsilon = 1e-4);
    }

    #[test]
    fn observer_diag_and_p10_follow_configuration() {
        let p = paper_plant();
        let grid = TriangularGrid::new(64).unwrap();
        let ks = KernelSet::compute(&p, &grid).unwrap();
        // max |Q(x,x)| = lambda/(2 eps) = 5.0
        assert_abs_diff_eq!(ks.norms.max_q_diag, 5.0, epsilon = 5e-3);
        assert_eq!(ks.observer.p10, 5.0);

        let pa = PlantParams { eps: 0.001, lambda: 0.01, q: 5.6, theta1: 1, theta2: 0 };
        let ks = KernelSet::compute(&pa, &grid).unwrap();
        assert_abs_diff_eq!(ks.norms.max_q_diag, 5.0, epsilon = 5e-3);
        assert_eq!(ks.observer.p10, -5.0);
    }

    #[test]
    fn grid_refinement_is_second_order() {
        let p = PlantParams { eps: 1.0, lambda: 8.0, q: 9.0, theta1: 0, theta2: 1 };
        let c = p.reaction_ratio();
        let diff_at = |n: usize| -> f64 {
            let ck = solve_control_kernel(&p, &TriangularGrid::new(n).unwrap()).unwrap();
            let mut worst = 0.0f64;
            for i in 0..=n {
                for j in 0..=i {
                    let x = i as f64 / n as f64;
                    let y = j as f64 / n as f64;
                    worst = worst.max((ck.k_table.get(i, j) - k_dirichlet_exact(c, x, y)).abs());
                }
            }
            worst
        };
        let (e128, e256) = (diff_at(128), diff_at(256));
        assert!(
            e128 / e256 >= 3.0,
            "refinement factor {} (errors {e128}, {e256})",
            e128 / e256
        );
    }

    #[test]
    fn assumption1_violation_is_rejected() {
        let p = PlantParams { eps: 0.001, lambda: 0.01, q: 4.0, theta1: 0, theta2: 1 };
        assert!(p.validate().is_err());
        let p = PlantParams { eps: 0.001, lambda: 0.01, q: 5.1, theta1: 1, theta2: 1 };
        assert!(p.validate().is_err());
    }
}
