//! Acceptance gate: one criterion per test, each printing a PASS/FAIL line.
//!
//! The long closed-loop runs are shared across criteria through a OnceLock.

use std::panic::AssertUnwindSafe;
use std::sync::OnceLock;
use std::time::Instant;

use rdetc::harness::{builtin_scenario, run_scenario, Scenario, ScenarioOutput};
use rdetc::kernels::{KernelSet, PlantParams, TriangularGrid};
use rdetc::pde_core::{
    derivative_profile, l2_norm, SimState, SpatialGrid, StateProfile,
};
use rdetc::trigger_params::{derive, TriggerConfig};
use rdetc::verify::{decay_fit, matexp_reference, OracleReport};

struct Runs {
    cetc: ScenarioOutput,
    petc: ScenarioOutput,
    stc: ScenarioOutput,
    fast: ScenarioOutput,
    fast_secs: f64,
}

static RUNS: OnceLock<Runs> = OnceLock::new();

fn runs() -> &'static Runs {
    RUNS.get_or_init(|| {
        let go = |name: &str| -> ScenarioOutput {
            let sc = builtin_scenario(name).unwrap();
            run_scenario(&sc).unwrap()
        };
        let cetc = go("paper-cetc");
        let petc = go("paper-petc");
        let stc = go("paper-stc");
        let t0 = Instant::now();
        let fast = go("fast-ci");
        let fast_secs = t0.elapsed().as_secs_f64();
        Runs { cetc, petc, stc, fast, fast_secs }
    })
}

fn report<'a>(out: &'a ScenarioOutput, name: &str) -> &'a OracleReport {
    out.reports
        .iter()
        .find(|r| r.name == name)
        .unwrap_or_else(|| panic!("missing report '{name}'"))
}

fn criterion(label: &str, f: impl FnOnce()) {
    let result = std::panic::catch_unwind(AssertUnwindSafe(f));
    match &result {
        Ok(()) => println!("{label} PASS"),
        Err(_) => println!("{label} FAIL"),
    }
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

fn rel(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs()
}

#[test]
fn a1_parameter_table_reproduction() {
    criterion("A1 parameter table reproduction", || {
        let sc = builtin_scenario("paper-cetc").unwrap();
        let ks = KernelSet::compute(&sc.plant, &TriangularGrid::new(256).unwrap()).unwrap();
        let tp = derive(&ks, &sc.plant, &sc.trigger).unwrap();
        assert!(rel(tp.alpha1, 0.021) < 0.05, "alpha1 = {}", tp.alpha1);
        assert!(rel(tp.alpha2, 0.0131) < 0.05, "alpha2 = {}", tp.alpha2);
        assert!(rel(tp.alpha3, 0.7971) < 0.05, "alpha3 = {}", tp.alpha3);
        assert!(rel(tp.beta1, 0.2095) < 0.05, "beta1 = {}", tp.beta1);
        assert!(rel(tp.beta2, 0.1309) < 0.05, "beta2 = {}", tp.beta2);
        assert!(rel(tp.beta3, 7.9706) < 0.05, "beta3 = {}", tp.beta3);
        // beta_i is the exact ratio alpha_i / (gamma (1 - sigma)).
        let scale = tp.gamma * (1.0 - tp.sigma);
        assert!(rel(tp.beta1 * scale, tp.alpha1) < 1e-12);
        assert!(rel(tp.rho, 966.3) < 1e-6, "rho = {}", tp.rho);
        assert!((tp.tau - 0.009).abs() < 5e-4, "tau = {}", tp.tau);

        // STC design point: same plant, rescaled gamma/eta/B.
        let stc_cfg = TriggerConfig {
            gamma: 1e12,
            eta: 1e-6,
            sigma: 0.9,
            kappa1: 25.0,
            m0: 1e-4,
            b: Some(7.7304e-8),
        };
        let tps = derive(&ks, &sc.plant, &stc_cfg).unwrap();
        assert!(rel(tps.rho, 9.6630e-10) < 1e-6, "stc rho = {}", tps.rho);
        assert!(tps.beta1 > 1e-13 && tps.beta1 < 1e-11, "stc beta1 = {}", tps.beta1);
        assert!(tps.beta2 > 1e-13 && tps.beta2 < 1e-11, "stc beta2 = {}", tps.beta2);
        assert!(tps.beta3 > 1e-12 && tps.beta3 < 1e-9, "stc beta3 = {}", tps.beta3);
    });
}

#[test]
fn a2_initial_data_norms() {
    criterion("A2 initial-data norms", || {
        let g = SpatialGrid::new(200).unwrap();
        let u0 = StateProfile::from_fn(&g, |x| 5.0 * x * x * (x - 1.0) * (x - 1.0));
        let n = l2_norm(&u0, &g);
        let nd = l2_norm(&derivative_profile(&u0, &g), &g);
        assert!((n - 0.1992).abs() < 1e-3, "||u0|| = {n}");
        assert!((nd - 0.6901).abs() < 1e-3, "||u0_x|| = {nd}");
    });
}

#[test]
fn a3_theorem_monitors() {
    criterion("A3 theorem monitors", || {
        let r = runs();
        for (name, out) in
            [("cetc", &r.cetc), ("petc", &r.petc), ("stc", &r.stc), ("fast-ci", &r.fast)]
        {
            assert!(report(out, "gamma_c_nonpositive").passed, "{name}: gamma_c > 0");
            assert!(report(out, "m_positive").passed, "{name}: m <= 0");
            assert!(out.result.violations.is_empty(), "{name}: {:?}", out.result.violations);
            if name == "petc" {
                assert!(report(out, "petc_events_on_h_grid").passed, "{name}: off-grid event");
            } else {
                assert!(report(out, "dwell_at_least_tau").passed, "{name}: dwell < tau - dt");
            }
        }
        assert!(r.fast_secs < 10.0, "fast-ci took {:.2} s", r.fast_secs);
    });
}

#[test]
fn a4_lemma_bounds() {
    criterion("A4 lemma bounds", || {
        let r = runs();
        let l2 = report(&r.petc, "lemma2_petc_bound");
        assert!(l2.passed, "lemma 2: {l2}");
        let l3 = report(&r.stc, "lemma3_stc_bounds");
        assert!(l3.passed, "lemma 3: {l3}");
        let p0 = report(&r.stc, "psi0_observer_envelope");
        assert!(p0.passed, "psi0 envelope: {p0}");
    });
}

/// I1(z)/z with z^2 = s: entire series (s/4)^k / (k! (k+1)!) / 2.
fn i1_ratio(s: f64) -> f64 {
    let mut term = 0.5;
    let mut sum = term;
    for k in 1..60 {
        term *= s / 4.0 / (k as f64 * (k as f64 + 1.0));
        sum += term;
    }
    sum
}

#[test]
fn a5_kernel_correctness() {
    criterion("A5 kernel correctness", || {
        let r = runs();
        let v = report(&r.cetc, "volterra_residual");
        assert!(v.passed && v.max_violation < 1e-6, "volterra: {v}");

        let p = &r.cetc.scenario.plant;
        let exact_qdiag = p.lambda / (2.0 * p.eps);
        assert!(
            rel(r.cetc.kernels.norms.max_q_diag, exact_qdiag) < 1e-3,
            "max|Q(x,x)| = {}",
            r.cetc.kernels.norms.max_q_diag
        );

        // Refinement convergence against the closed-form Dirichlet kernel
        // K(x,y) = -c y I1(z)/z, z^2 = c (x^2 - y^2), at (x, y) = (1, 1/2).
        let plant = PlantParams { eps: 1.0, lambda: 6.0, q: 9.0, theta1: 0, theta2: 1 };
        let c = plant.lambda / plant.eps;
        let exact = -c * 0.5 * i1_ratio(c * 0.75);
        let node_err = |n: usize| -> f64 {
            let ks = KernelSet::compute(&plant, &TriangularGrid::new(n).unwrap()).unwrap();
            (ks.control.k_table.get(n, n / 2) - exact).abs()
        };
        let (e1, e2) = (node_err(64), node_err(128));
        assert!(e1 / e2 >= 3.0, "refinement factor {} (errors {e1:e} -> {e2:e})", e1 / e2);
    });
}

#[test]
fn a6_oracle_equivalence() {
    criterion("A6 oracle equivalence", || {
        // Implicit Euler vs matrix exponential: local error O(dt^2), so the
        // per-step error must halve (ratio ~2) when dt halves.
        let plant = PlantParams { eps: 1.0, lambda: 8.0, q: 9.0, theta1: 0, theta2: 1 };
        let ks = KernelSet::compute(&plant, &TriangularGrid::new(32).unwrap()).unwrap();
        let g = SpatialGrid::new(60).unwrap();
        let u0 = StateProfile::from_fn(&g, |x| 5.0 * x * x * (x - 1.0) * (x - 1.0));
        let uh0 = StateProfile::from_fn(&g, |x| x * x * (x - 1.0) * (x - 1.0));
        let u_held = 0.3;
        let step_err = |dt: f64| -> f64 {
            let stepper = rdetc::pde_core::CoupledStepper::new(&plant, &ks, &g, dt).unwrap();
            let mut s = SimState::new(u0.clone(), uh0.clone(), 1e-4);
            s.u_held = u_held;
            stepper.step(&mut s);
            let (ue, ve) = matexp_reference(&u0, &uh0, u_held, &plant, &ks, &g, dt).unwrap();
            let mut diff = StateProfile::zeros(&g);
            for i in 0..=g.nx {
                diff.0[i] = s.u.0[i] - ue.0[i];
            }
            let eu = l2_norm(&diff, &g);
            for i in 0..=g.nx {
                diff.0[i] = s.uhat.0[i] - ve.0[i];
            }
            let ev = l2_norm(&diff, &g);
            eu.hypot(ev)
        };
        let dt = 1e-4;
        let ratio = step_err(dt) / step_err(dt / 2.0);
        assert!((1.8..=2.2).contains(&ratio), "local-error halving ratio {ratio}");
    });
}

#[test]
fn a7_convergence_behavior() {
    criterion("A7 convergence behavior", || {
        let r = runs();
        let mut rates = Vec::new();
        for (name, out) in
            [("cetc", &r.cetc), ("petc", &r.petc), ("stc", &r.stc), ("fast-ci", &r.fast)]
        {
            let (bhat, _) = decay_fit(&out.result).unwrap();
            assert!(bhat > 0.0, "{name}: bhat = {bhat}");
            if name != "fast-ci" {
                rates.push(bhat);
            }
        }
        let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi / lo <= 1.25, "paper-scheme decay rates spread {lo:e}..{hi:e}");
    });
}

#[test]
fn a8_zeno_freeness() {
    criterion("A8 Zeno-freeness", || {
        let r = runs();
        for (name, out) in
            [("cetc", &r.cetc), ("petc", &r.petc), ("stc", &r.stc), ("fast-ci", &r.fast)]
        {
            assert!(report(out, "zeno_event_count").passed, "{name}: event count over cap");
        }
        // Adversarial stiff variant: large lambda, short horizon.
        let mut sc: Scenario = builtin_scenario("fast-ci").unwrap();
        sc.plant = PlantParams { eps: 1.0, lambda: 20.0, q: 12.0, theta1: 0, theta2: 1 };
        sc.grid.horizon = 2.0;
        sc.kernel_n = 64;
        let out = run_scenario(&sc).unwrap();
        assert!(report(&out, "zeno_event_count").passed, "stiff variant over cap");
        assert!(report(&out, "gamma_c_nonpositive").passed, "stiff variant trigger leak");
    });
}
