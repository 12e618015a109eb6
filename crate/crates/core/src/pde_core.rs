//! Implicit-Euler integration of the coupled plant–observer system.
//!
//! Plant (collocated shown; theta1 = 1 swaps the x = 0 condition to Neumann):
//!
//! ```text
//! u_t = eps u_xx + lambda u,        u(0) = 0,   u_x(1) = -q u(1) + U(t)
//! ```
//!
//! Observer: same PDE plus output injection `p1(x) (u - uhat)(b)` where `b`
//! is the measured boundary, and a boundary injection p10 in the x = 1
//! (collocated) or x = 0 (anti-collocated) condition.
//!
//! Discretisation: second-order central differences with ghost-node
//! elimination for Neumann/Robin conditions, Dirichlet imposed strongly.
//! One implicit-Euler step is a fully coupled linear solve; because the
//! plant block does not depend on the observer, the system is block
//! lower-triangular and is solved exactly via two tridiagonal solves plus a
//! Sherman–Morrison rank-1 correction for the injection column (the result
//! is identical to one 2(nx+1) banded solve of the coupled system).

use crate::kernels::{sample_linear, trapezoid, KernelSet, PlantParams};
use crate::trigger_params::TriggerParams;
use crate::{Error, Result};

/// Uniform spatial grid on [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct SpatialGrid {
    pub nx: usize,
}

impl SpatialGrid {
    pub fn new(nx: usize) -> Result<Self> {
        if nx < 8 {
            return Err(Error::InvalidParams(format!("nx must be >= 8, got {nx}")));
        }
        Ok(Self { nx })
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.nx).map(|i| i as f64 / self.nx as f64).collect()
    }
}

/// Samples of a profile at x_i = i dx, i = 0..nx.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProfile(pub Vec<f64>);

impl StateProfile {
    pub fn zeros(g: &SpatialGrid) -> Self {
        Self(vec![0.0; g.nx + 1])
    }

    pub fn from_fn(g: &SpatialGrid, f: impl Fn(f64) -> f64) -> Self {
        Self(g.xs().iter().map(|&x| f(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Full closed-loop simulation state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub u: StateProfile,
    pub uhat: StateProfile,
    /// Zero-order-held boundary input U(t_j).
    pub u_held: f64,
    /// Dynamic trigger variable m(t).
    pub m: f64,
    pub last_event_time: f64,
    /// Observer snapshot at the last event, for the holding error d(t).
    pub uhat_at_event: StateProfile,
}

impl SimState {
    pub fn new(u0: StateProfile, uhat0: StateProfile, m0: f64) -> Self {
        let snap = uhat0.clone();
        Self { t: 0.0, u: u0, uhat: uhat0, u_held: 0.0, m: m0, last_event_time: 0.0, uhat_at_event: snap }
    }
}

/// Composite-trapezoid L2 norm of a profile.
pub fn l2_norm(f: &StateProfile, g: &SpatialGrid) -> f64 {
    let sq: Vec<f64> = f.0.iter().map(|v| v * v).collect();
    trapezoid(&sq, g.dx()).sqrt()
}

/// Second-order finite-difference derivative samples of a profile.
pub fn derivative_profile(f: &StateProfile, g: &SpatialGrid) -> StateProfile {
    StateProfile(crate::kernels::fd_gradient_owned(&f.0, g.dx()))
}

/// Control gain k(y) resampled onto the simulation grid by linear
/// interpolation of the refined kernel trace.
pub fn gain_on_grid(ks: &KernelSet, g: &SpatialGrid) -> Vec<f64> {
    g.xs().iter().map(|&x| sample_linear(&ks.control.k, x)).collect()
}

/// Injection gain p1(x) resampled onto the simulation grid.
pub fn p1_on_grid(ks: &KernelSet, g: &SpatialGrid) -> Vec<f64> {
    g.xs().iter().map(|&x| sample_linear(&ks.observer.p1, x)).collect()
}

/// Input-holding error d(t) = int k(y) (uhat(y, t_j) - uhat(y, t)) dy.
pub fn holding_error(s: &SimState, ks: &KernelSet, g: &SpatialGrid) -> f64 {
    let k = gain_on_grid(ks, g);
    holding_error_with(s, &k, g)
}

/// Hot-loop variant with a precomputed gain sample vector.
pub fn holding_error_with(s: &SimState, k_sim: &[f64], g: &SpatialGrid) -> f64 {
    let diff: Vec<f64> = s
        .uhat_at_event
        .0
        .iter()
        .zip(&s.uhat.0)
        .zip(k_sim)
        .map(|((snap, cur), k)| k * (snap - cur))
        .collect();
    trapezoid(&diff, g.dx())
}

/// Boundary/forcing terms entering the m(t) dynamics at the new time level.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryTerms {
    pub d: f64,
    pub norm_uhat_sq: f64,
    /// uhat(1, t)^2.
    pub uhat1_sq: f64,
    /// Squared observer error at the measured boundary.
    pub ut_meas_sq: f64,
}

/// Implicit-Euler update of
/// m' = -eta m - rho d^2 + beta1 ||uhat||^2 + beta2 uhat(1)^2 + beta3 ut_b^2,
/// with forcing evaluated at the new time level.
pub fn step_m(m: f64, tp: &TriggerParams, dt: f64, bt: &BoundaryTerms) -> f64 {
    let force = -tp.rho * bt.d * bt.d
        + tp.beta1 * bt.norm_uhat_sq
        + tp.beta2 * bt.uhat1_sq
        + tp.beta3 * bt.ut_meas_sq;
    let next = (m + dt * force) / (1.0 + tp.eta * dt);
    // Pure contraction (large eta, zero forcing) can underflow a strictly
    // positive m to 0; clamp that, but let a genuinely nonpositive update
    // through so the positivity monitor can flag it.
    if next > 0.0 {
        next.max(1e-300)
    } else {
        next
    }
}

/// Event action: refresh the held input and the holding-error snapshot.
pub fn apply_control(s: &mut SimState, ks: &KernelSet, g: &SpatialGrid) {
    let k = gain_on_grid(ks, g);
    apply_control_with(s, &k, g);
}

/// Hot-loop variant with a precomputed gain sample vector.
pub fn apply_control_with(s: &mut SimState, k_sim: &[f64], g: &SpatialGrid) {
    let prod: Vec<f64> = s.uhat.0.iter().zip(k_sim).map(|(u, k)| u * k).collect();
    s.u_held = trapezoid(&prod, g.dx());
    s.uhat_at_event = s.uhat.clone();
    s.last_event_time = s.t;
}

/// Tridiagonal system in Thomas-factorable form.
struct Tridiag {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

/// Prefactored Thomas decomposition (reused every step).
struct TriFactor {
    mult: Vec<f64>,
    denom: Vec<f64>,
    sup: Vec<f64>,
}

impl Tridiag {
    fn factor(&self) -> Result<TriFactor> {
        let n = self.diag.len();
        let mut mult = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = self.diag[0];
        for i in 1..n {
            if denom[i - 1].abs() < 1e-300 {
                return Err(Error::Singular("tridiagonal pivot vanished".into()));
            }
            mult[i] = self.sub[i] / denom[i - 1];
            denom[i] = self.diag[i] - mult[i] * self.sup[i - 1];
        }
        if denom[n - 1].abs() < 1e-300 {
            return Err(Error::Singular("tridiagonal pivot vanished".into()));
        }
        Ok(TriFactor { mult, denom, sup: self.sup.clone() })
    }
}

impl TriFactor {
    fn solve(&self, rhs: &[f64], out: &mut Vec<f64>) {
        let n = rhs.len();
        out.clear();
        out.extend_from_slice(rhs);
        for i in 1..n {
            out[i] -= self.mult[i] * out[i - 1];
        }
        out[n - 1] /= self.denom[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = (out[i] - self.sup[i] * out[i + 1]) / self.denom[i];
        }
    }
}

/// Prefactored coupled implicit-Euler stepper.
pub struct CoupledStepper {
    nx: usize,
    dt: f64,
    collocated: bool,
    /// Index of the measured boundary (nx collocated, 0 anti-collocated).
    b_meas: usize,
    plant: TriFactor,
    obs: TriFactor,
    /// Rank-1 injection column weights w_i = dt * chi_i.
    w: Vec<f64>,
    /// s = T_obs^{-1} w and the Sherman–Morrison denominator 1 + s[b].
    s_vec: Vec<f64>,
    sm_denom: f64,
    /// dt * forcing coefficient of U at the x = 1 rows.
    f_u: f64,
    scratch: std::cell::RefCell<(Vec<f64>, Vec<f64>)>,
}

impl CoupledStepper {
    pub fn new(p: &PlantParams, ks: &KernelSet, g: &SpatialGrid, dt: f64) -> Result<Self> {
        p.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParams(format!("dt must be > 0, got {dt}")));
        }
        let nx = g.nx;
        let dx = g.dx();
        let r = p.eps / (dx * dx);
        let lam = p.lambda;
        let collocated = p.collocated();
        let b_meas = if collocated { nx } else { 0 };

        // Shared interior stencil of M = I - dt A.
        let mut sub = vec![0.0; nx + 1];
        let mut diag = vec![0.0; nx + 1];
        let mut sup = vec![0.0; nx + 1];
        for i in 1..nx {
            sub[i] = -dt * r;
            diag[i] = 1.0 - dt * (-2.0 * r + lam);
            sup[i] = -dt * r;
        }
        // x = 0 row.
        if collocated {
            diag[0] = 1.0; // Dirichlet pinned
            sup[0] = 0.0;
        } else {
            // Neumann ghost: u_xx(0) ~ 2(u_1 - u_0)/dx^2.
            diag[0] = 1.0 - dt * (-2.0 * r + lam);
            sup[0] = -dt * 2.0 * r;
        }
        // x = 1 Robin-with-input row via ghost elimination:
        // u_xx(nx) ~ (2 u_{nx-1} - 2(1 + q dx) u_nx + 2 dx U)/dx^2.
        sub[nx] = -dt * 2.0 * r;
        diag[nx] = 1.0 - dt * (-2.0 * r - 2.0 * r * dx * p.q + lam);

        let plant_mat = Tridiag { sub: sub.clone(), diag: diag.clone(), sup: sup.clone() };

        // Observer tridiagonal part is identical; the injection column
        // (coupling to uhat(b) and u(b)) is carried as a rank-1 update.
        let obs_mat = Tridiag { sub, diag, sup };

        let p1_sim = p1_on_grid(ks, g);
        let p10 = ks.observer.p10;
        let mut w = vec![0.0; nx + 1];
        for i in 0..=nx {
            if collocated && i == 0 {
                continue; // Dirichlet-pinned observer row
            }
            let mut chi = p1_sim[i];
            if i == b_meas {
                // Ghost-eliminated boundary injection p10.
                if collocated {
                    chi += 2.0 * r * dx * p10;
                } else {
                    chi -= 2.0 * r * dx * p10;
                }
            }
            w[i] = dt * chi;
        }

        let plant = plant_mat.factor()?;
        let obs = obs_mat.factor()?;
        let mut s_vec = Vec::new();
        obs.solve(&w, &mut s_vec);
        let sm_denom = 1.0 + s_vec[b_meas];
        if sm_denom.abs() < 1e-12 {
            return Err(Error::Singular("Sherman-Morrison denominator ~ 0".into()));
        }

        Ok(Self {
            nx,
            dt,
            collocated,
            b_meas,
            plant,
            obs,
            w,
            s_vec,
            sm_denom,
            f_u: dt * 2.0 * r * dx,
            scratch: std::cell::RefCell::new((Vec::new(), Vec::new())),
        })
    }

    pub fn b_meas(&self) -> usize {
        self.b_meas
    }

    /// Advance (u, uhat) one implicit-Euler step with U held constant.
    pub fn step(&self, s: &mut SimState) {
        let nx = self.nx;
        let mut scratch = self.scratch.borrow_mut();
        let (rhs, sol) = &mut *scratch;

        // Plant solve.
        rhs.clear();
        rhs.extend_from_slice(&s.u.0);
        rhs[nx] += self.f_u * s.u_held;
        if self.collocated {
            rhs[0] = 0.0;
        }
        self.plant.solve(rhs, sol);
        std::mem::swap(&mut s.u.0, sol);
        let ub = s.u.0[self.b_meas];

        // Observer solve: tridiagonal part plus rank-1 injection column.
        rhs.clear();
        rhs.extend_from_slice(&s.uhat.0);
        rhs[nx] += self.f_u * s.u_held;
        for i in 0..=nx {
            rhs[i] += self.w[i] * ub;
        }
        if self.collocated {
            rhs[0] = 0.0;
        }
        self.obs.solve(rhs, sol);
        let corr = sol[self.b_meas] / self.sm_denom;
        for i in 0..=nx {
            sol[i] -= corr * self.s_vec[i];
        }
        std::mem::swap(&mut s.uhat.0, sol);

        s.t += self.dt;
    }
}

/// One-shot convenience wrapper around [`CoupledStepper`].
pub fn step_coupled(s: &mut SimState, p: &PlantParams, ks: &KernelSet, g: &SpatialGrid, dt: f64) -> Result<()> {
    CoupledStepper::new(p, ks, g, dt)?.step(s);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::TriangularGrid;
    use approx::assert_abs_diff_eq;

    fn paper_plant() -> PlantParams {
        PlantParams { eps: 0.001, lambda: 0.01, q: 5.1, theta1: 0, theta2: 1 }
    }

    fn paper_setup() -> (PlantParams, KernelSet, SpatialGrid) {
        let p = paper_plant();
        let ks = KernelSet::compute(&p, &TriangularGrid::new(64).unwrap()).unwrap();
        (p, ks, SpatialGrid::new(200).unwrap())
    }

    #[test]
    fn initial_data_norms_match_paper() {
        let g = SpatialGrid::new(200).unwrap();
        let u0 = StateProfile::from_fn(&g, |x| 5.0 * x * x * (x - 1.0) * (x - 1.0));
        assert_abs_diff_eq!(l2_norm(&u0, &g), 0.1992, epsilon = 1e-3);
        let u0x = derivative_profile(&u0, &g);
        assert_abs_diff_eq!(l2_norm(&u0x, &g), 0.6901, epsilon = 1e-3);
        assert_eq!(l2_norm(&StateProfile::zeros(&g), &g), 0.0);
    }

    #[test]
    fn equilibrium_stays_at_zero() {
        let (p, ks, g) = paper_setup();
        let stepper = CoupledStepper::new(&p, &ks, &g, 1e-3).unwrap();
        let mut s = SimState::new(StateProfile::zeros(&g), StateProfile::zeros(&g), 1e-4);
        for _ in 0..10 {
            stepper.step(&mut s);
        }
        assert!(s.u.0.iter().all(|&v| v == 0.0));
        assert!(s.uhat.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_diffusion_norm_decreases() {
        let p = PlantParams { eps: 1.0, lambda: 0.0, q: 1.0, theta1: 0, theta2: 1 };
        let g = SpatialGrid::new(50).unwrap();
        let ks = KernelSet::compute(&p, &TriangularGrid::new(16).unwrap()).unwrap();
        let stepper = CoupledStepper::new(&p, &ks, &g, 1e-3).unwrap();
        let mut s = SimState::new(
            StateProfile::from_fn(&g, |x| (std::f64::consts::PI * x).sin()),
            StateProfile::zeros(&g),
            1e-4,
        );
        let mut prev = l2_norm(&s.u, &g);
        for _ in 0..20 {
            stepper.step(&mut s);
            let cur = l2_norm(&s.u, &g);
            assert!(cur < prev, "norm must strictly decrease: {cur} !< {prev}");
            prev = cur;
        }
    }

    #[test]
    fn observer_error_is_independent_of_input() {
        // The held input cancels in the error dynamics ut = u - uhat.
        let (p, ks, g) = paper_setup();
        let stepper = CoupledStepper::new(&p, &ks, &g, 1e-3).unwrap();
        let u0 = StateProfile::from_fn(&g, |x| 5.0 * x * x * (x - 1.0) * (x - 1.0));
        let uh0 = StateProfile::from_fn(&g, |x| x * x * (x - 1.0) * (x - 1.0));
        let mut s1 = SimState::new(u0.clone(), uh0.clone(), 1e-4);
        let mut s2 = SimState::new(u0, uh0, 1e-4);
        s1.u_held = 0.0;
        s2.u_held = 3.7;
        for _ in 0..25 {
            stepper.step(&mut s1);
            stepper.step(&mut s2);
        }
        for i in 0..=g.nx {
            let e1 = s1.u.0[i] - s1.uhat.0[i];
            let e2 = s2.u.0[i] - s2.uhat.0[i];
            assert_abs_diff_eq!(e1, e2, epsilon = 1e-11);
        }
    }

    #[test]
    fn holding_error_properties() {
        let (_p, ks, g) = paper_setup();
        let uh0 = StateProfile::from_fn(&g, |x| x * x * (x - 1.0) * (x - 1.0));
        let mut s = SimState::new(StateProfile::zeros(&g), uh0, 1e-4);
        apply_control(&mut s, &ks, &g);
        assert_eq!(holding_error(&s, &ks, &g), 0.0);

        // Constant shift c: d = -c int k.
        let c = 0.3;
        for v in &mut s.uhat.0 {
            *v += c;
        }
        let k = gain_on_grid(&ks, &g);
        let int_k = trapezoid(&k, g.dx());
        assert_abs_diff_eq!(holding_error(&s, &ks, &g), -c * int_k, epsilon = 1e-12);
    }

    #[test]
    fn apply_control_linearity() {
        let (_p, ks, g) = paper_setup();
        let mut s = SimState::new(StateProfile::zeros(&g), StateProfile::zeros(&g), 1e-4);
        apply_control(&mut s, &ks, &g);
        assert_eq!(s.u_held, 0.0);

        s.uhat = StateProfile(vec![1.0; g.nx + 1]);
        apply_control(&mut s, &ks, &g);
        let k = gain_on_grid(&ks, &g);
        assert_abs_diff_eq!(s.u_held, trapezoid(&k, g.dx()), epsilon = 1e-14);
    }

    #[test]
    fn m_update_examples() {
        let tp = crate::trigger_params::TriggerParams::synthetic(1.0, 1.0, 0.9);
        let bt = BoundaryTerms { d: 0.0, norm_uhat_sq: 0.0, uhat1_sq: 0.0, ut_meas_sq: 0.0 };
        let m1 = step_m(1e-4, &tp, 1e-3, &bt);
        assert_abs_diff_eq!(m1, 1e-4 / 1.001, epsilon = 1e-18);
        assert_abs_diff_eq!(m1, 1e-4 / 1.001, epsilon = 1e-13);
    }
}
