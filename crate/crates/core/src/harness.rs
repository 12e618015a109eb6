//! Scenario configuration, the end-to-end pipeline and batch artifacts.
//!
//! A scenario is a JSON file mirroring [`Scenario`]; unknown keys are
//! rejected.  `run_scenario` performs kernels -> trigger parameters ->
//! closed-loop simulation -> monitors, deterministically.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kernels::{KernelSet, PlantParams, TriangularGrid};
use crate::pde_core::{derivative_profile, l2_norm, SpatialGrid, StateProfile};
use crate::trigger_params::{self, check_assumption2, TriggerConfig, TriggerParams};
use crate::triggering::{run_scheme, stc_constants, EventLog, Scheme, SchemeSettings, StcConstants};
use crate::verify::{
    decay_fit, lemma_bound_monitor, volterra_residual, LemmaCheck, OracleReport,
};
use crate::{Error, Result};

/// Per-step series of a closed-loop run plus final profiles.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub dt: f64,
    pub t: Vec<f64>,
    pub norm_u: Vec<f64>,
    pub norm_uhat: Vec<f64>,
    pub u_held: Vec<f64>,
    pub d: Vec<f64>,
    pub m: Vec<f64>,
    pub gamma_c: Vec<f64>,
    pub event: Vec<bool>,
    /// uhat(1, t) — enters the m-dynamics and Lemma 1.
    pub uhat_b: Vec<f64>,
    /// Observer error at the measured boundary.
    pub ut_meas: Vec<f64>,
    pub u_final: StateProfile,
    pub uhat_final: StateProfile,
    /// Runtime monitor violations (timestamped), empty on a clean run.
    pub violations: Vec<String>,
}

impl SimResult {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            t: Vec::new(),
            norm_u: Vec::new(),
            norm_uhat: Vec::new(),
            u_held: Vec::new(),
            d: Vec::new(),
            m: Vec::new(),
            gamma_c: Vec::new(),
            event: Vec::new(),
            uhat_b: Vec::new(),
            ut_meas: Vec::new(),
            u_final: StateProfile(Vec::new()),
            uhat_final: StateProfile(Vec::new()),
            violations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Spatio-temporal discretisation of a scenario.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub dt: f64,
    pub horizon: f64,
}

/// Scheme selector plus scheme-specific knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchemeConfig {
    Cetc,
    Petc {
        /// Sampling period; defaults to the largest dt-multiple <= tau.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<f64>,
    },
    Stc {
        /// Target decay rate; defaults to eps pi^2 / 4.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_star: Option<f64>,
        psi1: f64,
        psi2: f64,
        #[serde(default = "default_t_max")]
        t_max: f64,
    },
}

fn default_t_max() -> f64 {
    10.0
}

impl SchemeConfig {
    pub fn scheme(&self) -> Scheme {
        match self {
            SchemeConfig::Cetc => Scheme::Cetc,
            SchemeConfig::Petc { .. } => Scheme::Petc,
            SchemeConfig::Stc { .. } => Scheme::Stc,
        }
    }
}

/// Initial profiles: a named preset or inline sample arrays.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uhat0: Option<Vec<f64>>,
}

impl InitialData {
    pub fn profiles(&self, g: &SpatialGrid) -> Result<(StateProfile, StateProfile)> {
        match (&self.preset, &self.u0, &self.uhat0) {
            (Some(name), None, None) => match name.as_str() {
                "paper" => Ok((
                    StateProfile::from_fn(g, |x| 5.0 * x * x * (x - 1.0) * (x - 1.0)),
                    StateProfile::from_fn(g, |x| x * x * (x - 1.0) * (x - 1.0)),
                )),
                "zero" => Ok((StateProfile::zeros(g), StateProfile::zeros(g))),
                other => Err(Error::Config(format!("unknown initial-data preset '{other}'"))),
            },
            (None, Some(u0), Some(uhat0)) => {
                if u0.len() != g.nx + 1 || uhat0.len() != g.nx + 1 {
                    return Err(Error::Config(format!(
                        "initial sample arrays must have nx+1 = {} entries",
                        g.nx + 1
                    )));
                }
                Ok((StateProfile(u0.clone()), StateProfile(uhat0.clone())))
            }
            _ => Err(Error::Config(
                "initial_data needs either 'preset' or both 'u0' and 'uhat0'".into(),
            )),
        }
    }
}

/// Output emission control.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub dir: String,
    pub trace: bool,
    pub events: bool,
    pub kernels: bool,
    pub report: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { dir: "out".into(), trace: true, events: true, kernels: false, report: true }
    }
}

/// Complete scenario description (JSON-serialisable, unknown keys rejected).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub plant: PlantParams,
    pub grid: GridConfig,
    #[serde(default = "default_kernel_n")]
    pub kernel_n: usize,
    pub trigger: TriggerConfig,
    pub scheme: SchemeConfig,
    pub initial_data: InitialData,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_kernel_n() -> usize {
    256
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.trigger.validate()?;
        if !(self.grid.dt > 0.0) || !self.grid.dt.is_finite() {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.grid.dt)));
        }
        if !(self.grid.horizon >= 0.0) || !self.grid.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be >= 0, got {}", self.grid.horizon)));
        }
        SpatialGrid::new(self.grid.nx)?;
        TriangularGrid::new(self.kernel_n)?;
        if let SchemeConfig::Stc { .. } = self.scheme {
            if !self.plant.collocated() {
                return Err(Error::Unsupported(
                    "STC requires the collocated configuration (theta2 = 1)".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let sc: Scenario =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }
}

/// Everything a finished scenario run produced.
pub struct ScenarioOutput {
    pub scenario: Scenario,
    pub kernels: KernelSet,
    pub params: TriggerParams,
    pub stc: Option<StcConstants>,
    pub result: SimResult,
    pub events: EventLog,
    pub reports: Vec<OracleReport>,
    /// Assumption-2 margin at kappa2 = kappa3 = 1e6 (diagnostic).
    pub feasibility_margin: f64,
}

impl ScenarioOutput {
    /// True when every runtime monitor and oracle report passed.
    pub fn monitors_ok(&self) -> bool {
        self.result.violations.is_empty() && self.reports.iter().all(|r| r.passed)
    }
}

/// Resolve scheme settings (defaults filled in) for a scenario.
pub fn resolve_settings(
    sc: &Scenario,
    ks: &KernelSet,
    tp: &TriggerParams,
    g: &SpatialGrid,
    uhat0: &StateProfile,
) -> Result<SchemeSettings> {
    match &sc.scheme {
        SchemeConfig::Cetc => Ok(SchemeSettings::Cetc),
        SchemeConfig::Petc { h } => {
            let h = match h {
                Some(h) => *h,
                None => {
                    let steps = (tp.tau / sc.grid.dt).floor().max(1.0);
                    steps * sc.grid.dt
                }
            };
            Ok(SchemeSettings::Petc { h })
        }
        SchemeConfig::Stc { sigma_star, psi1, psi2, t_max } => {
            let cap = sc.plant.eps * std::f64::consts::PI.powi(2) / 4.0;
            let sigma_star = sigma_star.unwrap_or(cap);
            let constants = stc_constants(ks, &sc.plant, *psi1, *psi2, sigma_star, uhat0, g)?;
            Ok(SchemeSettings::Stc { constants, t_max: *t_max })
        }
    }
}

/// End-to-end pipeline: kernels -> parameters -> closed loop -> monitors.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioOutput> {
    sc.validate()?;
    let g = SpatialGrid::new(sc.grid.nx)?;
    let tri = TriangularGrid::new(sc.kernel_n)?;
    let ks = KernelSet::compute(&sc.plant, &tri)?;
    let tp = trigger_params::derive(&ks, &sc.plant, &sc.trigger)?;
    let (u0, uhat0) = sc.initial_data.profiles(&g)?;
    let settings = resolve_settings(sc, &ks, &tp, &g, &uhat0)?;
    let scheme = sc.scheme.scheme();

    let (result, events) = run_scheme(
        scheme,
        &sc.plant,
        &ks,
        &tp,
        &g,
        sc.grid.dt,
        sc.grid.horizon,
        u0,
        uhat0,
        &settings,
    )?;

    let betas = (tp.beta1, tp.beta2, tp.beta3);
    let feasibility_margin =
        check_assumption2(&ks, &sc.plant, betas, tp.b_const, tp.kappa1, 1e6, 1e6).unwrap_or(f64::NEG_INFINITY);

    let stc = match &settings {
        SchemeSettings::Stc { constants, .. } => Some(*constants),
        _ => None,
    };
    let reports = build_reports(sc, &ks, &tp, &settings, &result, &events);

    Ok(ScenarioOutput { scenario: sc.clone(), kernels: ks, params: tp, stc, result, events, reports, feasibility_margin })
}

/// Assemble the full oracle-report list for a finished run.
pub fn build_reports(
    sc: &Scenario,
    ks: &KernelSet,
    tp: &TriggerParams,
    settings: &SchemeSettings,
    result: &SimResult,
    events: &EventLog,
) -> Vec<OracleReport> {
    let mut reports = Vec::new();
    reports.push(volterra_residual(ks));
    reports.push(gamma_sign_report(result));
    reports.push(m_positive_report(result));
    reports.push(dwell_report(settings, tp, events, sc.grid.dt));
    reports.push(zeno_report(settings, tp, events, sc.grid.horizon));
    reports.push(lemma_bound_monitor(result, &LemmaCheck::Lemma1 { tp }));
    match settings {
        SchemeSettings::Cetc => {}
        SchemeSettings::Petc { h } => {
            reports.push(lemma_bound_monitor(result, &LemmaCheck::Lemma2 { tp, h: *h }));
        }
        SchemeSettings::Stc { constants, .. } => {
            reports.push(lemma_bound_monitor(
                result,
                &LemmaCheck::Lemma3 { tp, sc: constants, p: &sc.plant },
            ));
            reports.push(lemma_bound_monitor(result, &LemmaCheck::Psi0 { sc: constants }));
        }
    }
    if let Ok((bhat, res)) = decay_fit(result) {
        reports.push(OracleReport {
            name: "decay_fit_bhat".into(),
            max_violation: -bhat,
            location: format!("bhat = {bhat:e}, rms residual {res:e}"),
            tolerance: 0.0,
            passed: bhat > 0.0,
        });
    }
    reports
}

fn gamma_sign_report(result: &SimResult) -> OracleReport {
    let (mut worst, mut loc) = (f64::NEG_INFINITY, String::from("-"));
    for (t, gc) in result.t.iter().zip(&result.gamma_c) {
        if *gc > worst {
            worst = *gc;
            loc = format!("t = {t}");
        }
    }
    OracleReport {
        name: "gamma_c_nonpositive".into(),
        max_violation: worst,
        location: loc,
        tolerance: 1e-12,
        passed: worst <= 1e-12,
    }
}

fn m_positive_report(result: &SimResult) -> OracleReport {
    let (mut min_m, mut loc) = (f64::INFINITY, String::from("-"));
    for (t, m) in result.t.iter().zip(&result.m) {
        if *m < min_m {
            min_m = *m;
            loc = format!("t = {t} (m = {m:e})");
        }
    }
    OracleReport {
        name: "m_positive".into(),
        max_violation: -min_m,
        location: loc,
        tolerance: 0.0,
        passed: min_m > 0.0,
    }
}

fn dwell_report(
    settings: &SchemeSettings,
    tp: &TriggerParams,
    events: &EventLog,
    dt: f64,
) -> OracleReport {
    match settings {
        SchemeSettings::Petc { h } => {
            // Every event time must sit on the h grid; allow the rounding
            // drift of time accumulated one dt at a time (grows with t and
            // stays many orders below h/2, the smallest real offset).
            let (mut worst, mut tol, mut loc) = (0.0f64, 1e-9, String::from("-"));
            let mut margin = f64::NEG_INFINITY;
            for &t in &events.times {
                let frac = (t / h - (t / h).round()).abs() * h;
                let tol_t = 1e-9 + 1e-10 * t;
                if frac - tol_t > margin {
                    margin = frac - tol_t;
                    worst = frac;
                    tol = tol_t;
                    loc = format!("t = {t}");
                }
            }
            OracleReport {
                name: "petc_events_on_h_grid".into(),
                max_violation: worst,
                location: loc,
                tolerance: tol,
                passed: worst <= tol,
            }
        }
        _ => {
            let dwells = events.dwells();
            let min_dwell = dwells.iter().copied().fold(f64::INFINITY, f64::min);
            let violation = if dwells.is_empty() { f64::NEG_INFINITY } else { (tp.tau - dt) - min_dwell };
            OracleReport {
                name: "dwell_at_least_tau".into(),
                max_violation: violation,
                location: format!("min dwell = {min_dwell:e}, tau = {:e}", tp.tau),
                tolerance: 1e-12,
                passed: violation <= 1e-12,
            }
        }
    }
}

fn zeno_report(
    settings: &SchemeSettings,
    tp: &TriggerParams,
    events: &EventLog,
    horizon: f64,
) -> OracleReport {
    let cap = match settings {
        SchemeSettings::Petc { h } => horizon / h + 1.0,
        _ => horizon / tp.tau + 1.0,
    };
    let count = events.len() as f64;
    OracleReport {
        name: "zeno_event_count".into(),
        max_violation: count - cap,
        location: format!("{} events, cap {:.1}", events.len(), cap),
        tolerance: 1e-9,
        passed: count <= cap + 1e-9,
    }
}

/// Named built-in scenarios.
pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    let paper_plant = PlantParams { eps: 0.001, lambda: 0.01, q: 5.1, theta1: 0, theta2: 1 };
    let paper_grid = GridConfig { nx: 200, dt: 1e-3, horizon: 600.0 };
    let paper_init = InitialData { preset: Some("paper".into()), u0: None, uhat0: None };
    let cetc_trigger =
        TriggerConfig { gamma: 1.0, eta: 1.0, sigma: 0.9, kappa1: 25.0, m0: 1e-4, b: Some(7.7304e4) };
    match name {
        "paper-cetc" => Some(Scenario {
            plant: paper_plant,
            grid: paper_grid,
            kernel_n: 256,
            trigger: cetc_trigger,
            scheme: SchemeConfig::Cetc,
            initial_data: paper_init,
            outputs: Outputs::default(),
        }),
        "paper-petc" => Some(Scenario {
            plant: paper_plant,
            grid: paper_grid,
            kernel_n: 256,
            trigger: cetc_trigger,
            scheme: SchemeConfig::Petc { h: Some(0.009) },
            initial_data: paper_init,
            outputs: Outputs::default(),
        }),
        "paper-stc" => Some(Scenario {
            plant: paper_plant,
            grid: paper_grid,
            kernel_n: 256,
            trigger: TriggerConfig {
                gamma: 1e12,
                eta: 1e-6,
                sigma: 0.9,
                kappa1: 25.0,
                m0: 1e-4,
                b: Some(7.7304e-8),
            },
            scheme: SchemeConfig::Stc { sigma_star: None, psi1: 0.1992, psi2: 0.6901, t_max: 10.0 },
            initial_data: paper_init,
            outputs: Outputs::default(),
        }),
        "fast-ci" => Some(Scenario {
            plant: PlantParams { eps: 1.0, lambda: 8.0, q: 9.0, theta1: 0, theta2: 1 },
            grid: GridConfig { nx: 50, dt: 1e-3, horizon: 5.0 },
            kernel_n: 64,
            trigger: TriggerConfig { gamma: 1.0, eta: 1e6, sigma: 0.9, kappa1: 25.0, m0: 1e-4, b: Some(1.0) },
            scheme: SchemeConfig::Cetc,
            initial_data: paper_init,
            outputs: Outputs::default(),
        }),
        _ => None,
    }
}

/// One row of the scheme-comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub scheme: Scheme,
    pub n_events: usize,
    pub min_dwell: f64,
    pub median_dwell_first_quartile: f64,
    pub median_dwell_last_quartile: f64,
    pub max_dwell: f64,
    pub bhat: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Run CETC, PETC and (collocated only) STC on identical plant/initial data.
pub fn compare_schemes(base: &Scenario) -> Result<Vec<(ComparisonRow, ScenarioOutput)>> {
    base.validate()?;
    let mut variants: Vec<SchemeConfig> = vec![SchemeConfig::Cetc];
    {
        // PETC needs a period that is a dt-multiple and <= tau; skip the
        // scheme when the minimal dwell time is below the time step.
        let tri = TriangularGrid::new(base.kernel_n)?;
        let ks = KernelSet::compute(&base.plant, &tri)?;
        let tp = trigger_params::derive(&ks, &base.plant, &base.trigger)?;
        if tp.tau >= base.grid.dt {
            variants.push(SchemeConfig::Petc { h: None });
        }
    }
    if base.plant.collocated() {
        let stc = match &base.scheme {
            SchemeConfig::Stc { sigma_star, psi1, psi2, t_max } => SchemeConfig::Stc {
                sigma_star: *sigma_star,
                psi1: *psi1,
                psi2: *psi2,
                t_max: *t_max,
            },
            _ => {
                // Assumption-3 bounds taken as the exact initial norms.
                let g = SpatialGrid::new(base.grid.nx)?;
                let (u0, _) = base.initial_data.profiles(&g)?;
                let psi1 = l2_norm(&u0, &g).max(1e-12);
                let psi2 = l2_norm(&derivative_profile(&u0, &g), &g).max(1e-12);
                SchemeConfig::Stc { sigma_star: None, psi1, psi2, t_max: 10.0 }
            }
        };
        variants.push(stc);
    }
    let mut rows = Vec::new();
    for scheme in variants {
        let mut sc = base.clone();
        sc.scheme = scheme;
        let out = run_scenario(&sc)?;
        let dwells = out.events.dwells();
        let t_quarter = base.grid.horizon / 4.0;
        let first: Vec<f64> = out
            .events
            .times
            .windows(2)
            .filter(|w| w[1] < t_quarter)
            .map(|w| w[1] - w[0])
            .collect();
        let last: Vec<f64> = out
            .events
            .times
            .windows(2)
            .filter(|w| w[1] >= 3.0 * t_quarter)
            .map(|w| w[1] - w[0])
            .collect();
        let bhat = decay_fit(&out.result).map(|(b, _)| b).unwrap_or(f64::NAN);
        rows.push((
            ComparisonRow {
                scheme: sc.scheme.scheme(),
                n_events: out.events.len(),
                min_dwell: dwells.iter().copied().fold(f64::INFINITY, f64::min),
                median_dwell_first_quartile: median(first),
                median_dwell_last_quartile: median(last),
                max_dwell: dwells.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                bhat,
            },
            out,
        ));
    }
    Ok(rows)
}

/// Render a comparison table as plain text.
pub fn comparison_table(rows: &[(ComparisonRow, ScenarioOutput)]) -> String {
    let mut s = String::new();
    s.push_str("scheme  events  min_dwell      med_dwell_q1   med_dwell_q4   max_dwell      bhat\n");
    for (r, _) in rows {
        s.push_str(&format!(
            "{:<7} {:<7} {:<14e} {:<14e} {:<14e} {:<14e} {:e}\n",
            r.scheme.to_string(),
            r.n_events,
            r.min_dwell,
            r.median_dwell_first_quartile,
            r.median_dwell_last_quartile,
            r.max_dwell,
            r.bhat
        ));
    }
    s
}

/// Parameter table for the `params` subcommand.
pub fn params_table(sc: &Scenario, ks: &KernelSet, tp: &TriggerParams, margin: f64) -> String {
    let mut s = String::new();
    let mut row = |name: &str, value: f64, source: &str| {
        s.push_str(&format!("{:<12} {:<24e} {}\n", name, value, source));
    };
    row("eps", sc.plant.eps, "plant (Eq. 1)");
    row("lambda", sc.plant.lambda, "plant (Eq. 1)");
    row("q", sc.plant.q, "plant (Eq. 3)");
    row("gamma", tp.gamma, "design");
    row("eta", tp.eta, "design");
    row("sigma", tp.sigma, "design");
    row("alpha1", tp.alpha1, "Eq. (17)");
    row("alpha2", tp.alpha2, "Eq. (18)");
    row("alpha3", tp.alpha3, "Eq. (19)");
    row("beta1", tp.beta1, "Eq. (16) defs");
    row("beta2", tp.beta2, "Eq. (16) defs");
    row("beta3", tp.beta3, "Eq. (16) defs");
    row("B", tp.b_const, "Assumption 2");
    row("kappa1", tp.kappa1, "Assumption 2");
    row("rho", tp.rho, "Eq. (20)");
    row("rho1", tp.rho1, "Lemma 1");
    row("a", tp.a, "Lemma 2");
    row("tau", tp.tau, "MDT (Theorem 1 R1)");
    row("norm_k", ks.norms.norm_k, "derived");
    row("norm_p1", ks.norms.norm_p1, "derived");
    row("L_tilde", ks.norms.l_tilde, "Assumption 2");
    row("L_check", ks.norms.l_check, "Assumption 2");
    row("norm_g", ks.norms.norm_g, "Assumption 2");
    row("Omega1", ks.norms.omega1, "Eq. (33)");
    row("Omega2", ks.norms.omega2, "Eq. (34)");
    row("max|Q(x,x)|", ks.norms.max_q_diag, "Sec. III-B fact");
    row("margin", margin, "Assumption 2 @ kappa2=kappa3=1e6");
    s
}

/// Trace CSV in the pde_core schema.
pub fn write_trace_csv<W: Write>(res: &SimResult, mut w: W) -> Result<()> {
    writeln!(w, "t,norm_u,norm_uhat,U_held,d,m,gamma_c,event")?;
    for i in 0..res.len() {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            res.t[i],
            res.norm_u[i],
            res.norm_uhat[i],
            res.u_held[i],
            res.d[i],
            res.m[i],
            res.gamma_c[i],
            u8::from(res.event[i])
        )?;
    }
    Ok(())
}

/// Event CSV in the triggering schema.
pub fn write_events_csv<W: Write>(events: &EventLog, mut w: W) -> Result<()> {
    writeln!(w, "j,t_j,dwell_j,U_j")?;
    for j in 0..events.len() {
        let dwell = if j == 0 { 0.0 } else { events.times[j] - events.times[j - 1] };
        writeln!(w, "{},{:e},{:e},{:e}", j, events.times[j], dwell, events.inputs[j])?;
    }
    Ok(())
}

/// Human-readable report of all oracle checks.
pub fn write_report<W: Write>(out: &ScenarioOutput, mut w: W) -> Result<()> {
    writeln!(w, "scenario: scheme = {}", out.scenario.scheme.scheme())?;
    writeln!(w, "events: {}  horizon: {} s  dt: {} s", out.events.len(), out.scenario.grid.horizon, out.scenario.grid.dt)?;
    writeln!(w, "assumption-2 margin (kappa2 = kappa3 = 1e6): {:e}", out.feasibility_margin)?;
    writeln!(w)?;
    for r in &out.reports {
        writeln!(w, "{r}")?;
    }
    if out.result.violations.is_empty() {
        writeln!(w, "\nruntime monitors: clean")?;
    } else {
        writeln!(w, "\nruntime monitor violations:")?;
        for v in &out.result.violations {
            writeln!(w, "  {v}")?;
        }
    }
    Ok(())
}

/// Emit all requested artifacts for a finished run.
pub fn emit_outputs(out: &ScenarioOutput) -> Result<()> {
    let dir = Path::new(&out.scenario.outputs.dir);
    std::fs::create_dir_all(dir)?;
    if out.scenario.outputs.trace {
        let f = std::fs::File::create(dir.join("trace.csv"))?;
        write_trace_csv(&out.result, std::io::BufWriter::new(f))?;
    }
    if out.scenario.outputs.events {
        let f = std::fs::File::create(dir.join("events.csv"))?;
        write_events_csv(&out.events, std::io::BufWriter::new(f))?;
    }
    if out.scenario.outputs.kernels {
        let f = std::fs::File::create(dir.join("kernels.csv"))?;
        crate::kernels::write_control_csv(&out.kernels, std::io::BufWriter::new(f))?;
        let f = std::fs::File::create(dir.join("kernels_observer.csv"))?;
        crate::kernels::write_observer_csv(&out.kernels, std::io::BufWriter::new(f))?;
    }
    if out.scenario.outputs.report {
        let f = std::fs::File::create(dir.join("report.txt"))?;
        write_report(out, std::io::BufWriter::new(f))?;
    }
    Ok(())
}

/// Parse a trace CSV back into a (partial) SimResult; boundary-value
/// columns are not part of the CSV schema and come back as zeros, so only
/// the CSV-computable monitors may be evaluated on the result.
pub fn parse_trace_csv(path: &Path) -> Result<SimResult> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty trace CSV".into()))?;
    if header.trim() != "t,norm_u,norm_uhat,U_held,d,m,gamma_c,event" {
        return Err(Error::Config(format!("unexpected trace header: {header}")));
    }
    let mut res = SimResult::new(0.0);
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::Config(format!("trace line {} has {} columns", ln + 2, cols.len())));
        }
        let f = |i: usize| -> Result<f64> {
            cols[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("trace line {}: {e}", ln + 2)))
        };
        res.t.push(f(0)?);
        res.norm_u.push(f(1)?);
        res.norm_uhat.push(f(2)?);
        res.u_held.push(f(3)?);
        res.d.push(f(4)?);
        res.m.push(f(5)?);
        res.gamma_c.push(f(6)?);
        res.event.push(f(7)? != 0.0);
        res.uhat_b.push(0.0);
        res.ut_meas.push(0.0);
    }
    if res.t.len() >= 2 {
        res.dt = res.t[1] - res.t[0];
    }
    Ok(res)
}

/// Map an error to the CLI exit code contract.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) | Error::NoConvergence(_) => 3,
        Error::MonitorViolation(_) => 4,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_is_identity() {
        for name in ["paper-cetc", "paper-petc", "paper-stc", "fast-ci"] {
            let sc = builtin_scenario(name).unwrap();
            let text = serde_json::to_string_pretty(&sc).unwrap();
            let back: Scenario = serde_json::from_str(&text).unwrap();
            let text2 = serde_json::to_string_pretty(&back).unwrap();
            assert_eq!(text, text2, "round trip mismatch for {name}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::to_value(builtin_scenario("fast-ci").unwrap()).unwrap();
        v.as_object_mut().unwrap().insert("bogus".into(), 1.into());
        assert!(serde_json::from_value::<Scenario>(v).is_err());
    }

    #[test]
    fn zero_horizon_gives_initial_sample_only() {
        let mut sc = builtin_scenario("fast-ci").unwrap();
        sc.grid.horizon = 0.0;
        sc.kernel_n = 16;
        let out = run_scenario(&sc).unwrap();
        assert_eq!(out.result.len(), 1);
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events.times[0], 0.0);
    }

    #[test]
    fn zero_initial_data_never_refires_cetc() {
        let mut sc = builtin_scenario("fast-ci").unwrap();
        sc.initial_data = InitialData { preset: Some("zero".into()), u0: None, uhat0: None };
        sc.grid.horizon = 0.5;
        sc.kernel_n = 16;
        let out = run_scenario(&sc).unwrap();
        assert_eq!(out.events.len(), 1, "no events after t = 0 for zero data");
        assert!(out.result.norm_u.iter().all(|&v| v == 0.0));
        assert!(out.result.u_held.iter().all(|&v| v == 0.0));
        assert!(out.result.violations.is_empty());
    }

    #[test]
    fn determinism_identical_csv_bytes() {
        let mut sc = builtin_scenario("fast-ci").unwrap();
        sc.grid.horizon = 0.2;
        sc.kernel_n = 32;
        let out1 = run_scenario(&sc).unwrap();
        let out2 = run_scenario(&sc).unwrap();
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        write_trace_csv(&out1.result, &mut b1).unwrap();
        write_trace_csv(&out2.result, &mut b2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut sc = builtin_scenario("fast-ci").unwrap();
        sc.grid.horizon = 0.05;
        sc.kernel_n = 16;
        let out = run_scenario(&sc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let f = std::fs::File::create(&path).unwrap();
        write_trace_csv(&out.result, f).unwrap();
        let back = parse_trace_csv(&path).unwrap();
        assert_eq!(back.len(), out.result.len());
        for i in 0..back.len() {
            assert_eq!(back.t[i], out.result.t[i]);
            assert_eq!(back.m[i], out.result.m[i]);
            assert_eq!(back.gamma_c[i], out.result.gamma_c[i]);
            assert_eq!(back.event[i], out.result.event[i]);
        }
    }
}
