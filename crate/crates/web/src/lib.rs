//! Browser bindings. Each exported function takes plain numbers and returns
//! a JSON string; failures come back as `{"error": "..."}`.

use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use qstar::design::{g_optimal_design, DesignConfig};
use qstar::error::Result;
use qstar::hard::{HardInstance, HardParams, HorizonMode};
use qstar::jl::orthonormal_family;
use qstar::lsvi::{beta_of, greedy_policy, lsvi_run, stage_reports, LsviConfig};
use qstar::mdp::{Action, Simulator, StateId};
use qstar::oracle::{check_realizability, policy_value, solve_backward, suboptimality};
use qstar::rng::{purpose_stream, Purpose};

/// Enumeration cap for instances built in the page.
const WEB_CAP: usize = 200_000;

fn to_json<T: Serialize>(result: Result<T>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn alpha_mode(alpha: f64) -> HorizonMode {
    if alpha < 1.0 {
        HorizonMode::Discounted { alpha }
    } else {
        HorizonMode::FixedHorizon
    }
}

fn instance(k: usize, horizon: usize, gamma: f64, alpha: f64, a_star: usize) -> Result<HardInstance> {
    let params = HardParams::custom(k + 1, horizon, gamma, k, alpha_mode(alpha))?;
    let family = orthonormal_family(k, k, gamma)?;
    HardInstance::new(params, family, Some(Action::new(a_star)))
}

#[derive(Debug, Serialize)]
pub struct RootAction {
    pub action: usize,
    pub q: f64,
    pub gap: f64,
}

#[derive(Debug, Serialize)]
pub struct InstanceSummary {
    pub d: usize,
    pub epsilon: f64,
    pub x: f64,
    pub c: Vec<f64>,
    pub states: usize,
    pub root: Vec<RootAction>,
    /// `None` when no pair qualifies, e.g. leaves that already hold every action.
    pub sigma: Option<[f64; 2]>,
    pub mu: Option<[f64; 2]>,
    pub n_choice: u64,
    pub realizability_residual: f64,
}

pub fn summarize(k: usize, horizon: usize, gamma: f64, alpha: f64, a_star: usize) -> Result<InstanceSummary> {
    let inst = instance(k, horizon, gamma, alpha, a_star)?;
    let tables = solve_backward(&inst, WEB_CAP)?;
    let p = inst.params();
    let root = StateId::root();
    let sigma = inst.sigma_range();
    let mu = inst.mu_range();
    Ok(InstanceSummary {
        d: p.d(),
        epsilon: p.epsilon(),
        x: p.x(),
        c: (1..=horizon).map(|h| p.c(h)).collect(),
        states: tables.levels().total(),
        root: Action::all(k)
            .map(|a| RootAction {
                action: a.index(),
                q: tables.q(1, &root, a).unwrap_or(f64::NAN),
                gap: tables.gap(1, &root, a).unwrap_or(f64::NAN),
            })
            .collect(),
        sigma: (sigma.count > 0).then_some([sigma.min, sigma.max]),
        mu: (mu.count > 0).then_some([mu.min, mu.max]),
        n_choice: p.n_choice(),
        realizability_residual: check_realizability(&inst, &tables, inst.theta_star()).max_residual,
    })
}

/// Exact construction summary for an orthonormal hard instance: `ε`, the
/// bias constants, root action values and gaps, and the realizability residual.
#[wasm_bindgen]
pub fn hard_instance_summary(k: usize, horizon: usize, gamma: f64, alpha: f64, a_star: usize) -> String {
    to_json(summarize(k, horizon, gamma, alpha, a_star))
}

#[derive(Debug, Serialize)]
pub struct DesignView {
    pub points: Vec<[f64; 2]>,
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub leverage: Vec<f64>,
    pub max_leverage: f64,
    pub bound: f64,
}

pub fn design_view(n: usize, spread: f64, seed: u64) -> Result<DesignView> {
    let mut rng = purpose_stream(seed, 0, Purpose::Design);
    // an elongated, rotated cloud
    let (sin, cos) = rng.gen_range(0.0..std::f64::consts::PI).sin_cos();
    let points: Vec<[f64; 2]> = (0..n.max(1))
        .map(|_| {
            let u: f64 = rng.gen_range(-1.0..1.0);
            let v: f64 = rng.gen_range(-1.0..1.0) * spread;
            [cos * u - sin * v, sin * u + cos * v]
        })
        .collect();
    let cands: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    let design = g_optimal_design(&cands, 2, DesignConfig::default())?;
    Ok(DesignView {
        leverage: cands.iter().map(|c| design.leverage(c)).collect(),
        support: design.points.clone(),
        weights: design.weights.clone(),
        max_leverage: design.max_leverage,
        bound: 2.0 * design.rank() as f64,
        points,
    })
}

/// G-optimal design on `n` random points in the plane; `spread` in (0, 1]
/// flattens the cloud.
#[wasm_bindgen]
pub fn design_demo(n: usize, spread: f64, seed: u32) -> String {
    to_json(design_view(n, spread, seed.into()))
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub n: u64,
    pub beta: f64,
    pub stage_errors: Vec<f64>,
    pub delta_pi: f64,
    pub queries: u64,
}

pub fn error_curve(k: usize, horizon: usize, gamma: f64, seed: u64, points: usize) -> Result<Vec<CurvePoint>> {
    let inst = instance(k, horizon, gamma, 1.0, 1 + (seed as usize) % k.max(1))?;
    let tables = solve_backward(&inst, WEB_CAP)?;
    let zeta = 0.1;
    (0..points.max(1))
        .map(|i| {
            let n = 10f64.powf(1.0 + 5.0 * i as f64 / (points.max(2) - 1) as f64).round() as u64;
            let cfg = LsviConfig {
                n,
                zeta,
                delta_target: 0.25,
                design: DesignConfig::default(),
            };
            let mut sim = Simulator::new(&inst, purpose_stream(seed, i as u64, Purpose::Simulator));
            let out = lsvi_run(&mut sim, tables.levels(), &cfg)?;
            let policy = greedy_policy(&inst, tables.levels(), &out);
            let values = policy_value(&inst, tables.levels(), &policy)?;
            Ok(CurvePoint {
                n,
                beta: beta_of(n, horizon, out.m_actual, zeta),
                stage_errors: stage_reports(&inst, &tables, &out, zeta).iter().map(|r| r.max_f_err).collect(),
                delta_pi: suboptimality(&tables, &values),
                queries: out.queries,
            })
        })
        .collect()
}

/// LSVI stage errors and suboptimality for per-point sample counts from 10
/// to 10^6.
#[wasm_bindgen]
pub fn lsvi_curve(k: usize, horizon: usize, gamma: f64, seed: u32, points: usize) -> String {
    to_json(error_curve(k, horizon, gamma, seed.into(), points))
}
