//! Least-squares value iteration with G-optimal design.
//!
//! Stage by stage from `H` down to 1, the planner fits
//! `f_h(s,a) = clip_H(<φ_h(s,a), θ̂_h>)` to empirical backups
//! `R + α max_a' f_{h+1}(S', a')` sampled `n` times at every support
//! point of a near G-optimal design over reachable `s ∈ S_h` and every action.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::design::{g_optimal_design, Design, DesignConfig};
use crate::error::{Error, Result};
use crate::jl::dot;
use crate::mdp::{Action, Levels, LinearMdp, Simulator, StagePolicy};
use crate::oracle::{greedy_from, ValueTables};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsviConfig {
    /// Samples per design point.
    pub n: u64,
    pub zeta: f64,
    pub delta_target: f64,
    pub design: DesignConfig,
}

impl LsviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Parameter("LSVI needs n >= 1".into()));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::Parameter(format!("zeta = {} outside (0, 1]", self.zeta)));
        }
        if !(self.delta_target > 0.0) {
            return Err(Error::Parameter("delta_target must be positive".into()));
        }
        Ok(())
    }
}

fn clamped_ln(x: f64, what: &str) -> f64 {
    let l = x.ln();
    if l <= 0.0 {
        log::warn!("{what}: log argument {x} <= 1, clamped to 0");
        0.0
    } else {
        l
    }
}

/// Hoeffding radius `H sqrt((2/n) ln(2Hm/ζ))`, log clamped at 0.
pub fn beta_of(n: u64, horizon: usize, m: usize, zeta: f64) -> f64 {
    let h = horizon as f64;
    let l = clamped_ln(2.0 * h * m as f64 / zeta, "beta");
    h * (2.0 / n as f64 * l).sqrt()
}

/// `β ((2 + √(2d))^{H-h+1} - 1)`.
pub fn error_envelope(h: usize, horizon: usize, d: usize, beta: f64) -> f64 {
    let growth = 2.0 + (2.0 * d as f64).sqrt();
    beta * (growth.powi((horizon - h + 1) as i32) - 1.0)
}

/// Samples per design point for a δ-sound greedy policy:
/// `⌈32 H⁴ ln(4Hm/δ) ((2+√(2d))^H - 1)² / δ²⌉`.
pub fn sample_size(horizon: usize, d: usize, m: usize, delta: f64) -> u64 {
    let h = horizon as f64;
    let growth = (2.0 + (2.0 * d as f64).sqrt()).powi(horizon as i32) - 1.0;
    let l = clamped_ln(4.0 * h * m as f64 / delta, "sample size");
    (32.0 * h.powi(4) * l * growth * growth / (delta * delta)).ceil().max(1.0) as u64
}

/// Clipped linear estimate `Π_H <φ, θ̂>` of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageEstimate {
    pub theta: Vec<f64>,
    pub clip: f64,
}

impl StageEstimate {
    pub fn value(&self, phi: &[f64]) -> f64 {
        dot(phi, &self.theta).clamp(-self.clip, self.clip)
    }
}

#[derive(Clone, Debug)]
pub struct StageFit<S> {
    pub h: usize,
    pub design: Design,
    pub support: Vec<(S, Action)>,
    /// Empirical backups, aligned with `support`.
    pub responses: Vec<f64>,
    pub estimate: StageEstimate,
}

#[derive(Clone, Debug)]
pub struct LsviOutput<S> {
    /// Stage `h` at index `h - 1`.
    pub stages: Vec<StageFit<S>>,
    pub queries: u64,
    /// Largest design support over the stages.
    pub m_actual: usize,
    pub n: u64,
}

impl<S> LsviOutput<S> {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// `f_h(s,a)`; zero past the horizon.
    pub fn value<M: LinearMdp<State = S>>(&self, model: &M, h: usize, s: &S, a: Action) -> f64 {
        match self.stages.get(h.wrapping_sub(1)) {
            Some(stage) => stage.estimate.value(&model.features(h, s, a)),
            None => 0.0,
        }
    }

    fn max_value<M: LinearMdp<State = S>>(&self, model: &M, h: usize, s: &S) -> f64 {
        if h > self.horizon() {
            return 0.0;
        }
        Action::all(model.num_actions())
            .map(|a| self.value(model, h, s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn stage_candidates<M: LinearMdp>(
    model: &M,
    levels: &Levels<M::State>,
    h: usize,
) -> (Vec<(M::State, Action)>, Vec<Vec<f64>>) {
    let k = model.num_actions();
    let mut pairs = Vec::with_capacity(levels.at(h).len() * k);
    let mut feats = Vec::with_capacity(pairs.capacity());
    for s in levels.at(h) {
        for a in Action::all(k) {
            feats.push(model.features(h, s, a));
            pairs.push((s.clone(), a));
        }
    }
    (pairs, feats)
}

/// Runs the planner through `sim`. Designs are fixed before any query,
/// since they depend only on the features.
pub fn lsvi_run<M: LinearMdp>(
    sim: &mut Simulator<'_, M>,
    levels: &Levels<M::State>,
    config: &LsviConfig,
) -> Result<LsviOutput<M::State>> {
    config.validate()?;
    let model = sim.model();
    let horizon = model.horizon();
    let d = model.feature_dim();
    let alpha = model.discount();

    let mut plans = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        let (pairs, feats) = stage_candidates(model, levels, h);
        let design = g_optimal_design(&feats, d, config.design)
            .map_err(|e| Error::Design(format!("stage {h}: {e}")))?;
        let support: Vec<(M::State, Action)> = design.points.iter().map(|&p| pairs[p].clone()).collect();
        plans.push((design, support));
    }
    let m_actual = plans.iter().map(|(d, _)| d.support_size()).max().unwrap_or(0);

    let mut out = LsviOutput {
        stages: Vec::with_capacity(horizon),
        queries: 0,
        m_actual,
        n: config.n,
    };
    let mut fits: Vec<Option<StageFit<M::State>>> = (0..horizon).map(|_| None).collect();
    for h in (1..=horizon).rev() {
        let (design, support) = plans.pop().expect("one plan per stage");
        let mut next_max: HashMap<M::State, f64> = HashMap::new();
        let mut responses = Vec::with_capacity(support.len());
        for (s, a) in &support {
            let batch = sim.query_batch(s, *a, config.n)?;
            for (_, next, _) in &batch.outcomes {
                if !next_max.contains_key(next) {
                    let v = max_next(model, &fits, h + 1, next);
                    next_max.insert(next.clone(), v);
                }
            }
            responses.push(batch.mean(|r, next| r + alpha * next_max[next]));
        }
        let theta = design.least_squares(&responses)?;
        fits[h - 1] = Some(StageFit {
            h,
            design,
            support,
            responses,
            estimate: StageEstimate {
                theta,
                clip: horizon as f64,
            },
        });
    }
    out.stages = fits.into_iter().map(|f| f.expect("every stage fitted")).collect();
    out.queries = sim.meter().count();
    Ok(out)
}

fn max_next<M: LinearMdp>(model: &M, fits: &[Option<StageFit<M::State>>], h: usize, s: &M::State) -> f64 {
    match fits.get(h.wrapping_sub(1)).and_then(Option::as_ref) {
        Some(fit) => Action::all(model.num_actions())
            .map(|a| fit.estimate.value(&model.features(h, s, a)))
            .fold(f64::NEG_INFINITY, f64::max),
        None => 0.0,
    }
}

/// Greedy policy on the fitted `f_h`, ties to the lowest action.
pub fn greedy_policy<M: LinearMdp>(
    model: &M,
    levels: &Levels<M::State>,
    output: &LsviOutput<M::State>,
) -> StagePolicy<M::State> {
    greedy_from(levels, model.num_actions(), |h, s, a| output.value(model, h, s, a))
}

/// Per-stage diagnostics measured against the exact model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageReport {
    pub h: usize,
    pub support: usize,
    pub beta: f64,
    /// `max |μ̂ - μ|` over the support, `μ` the exact backup of `f_{h+1}`.
    pub max_mu_err: f64,
    /// `||f_h - q*_h||_∞` over reachable `s ∈ S_h` and every action.
    pub max_f_err: f64,
    pub envelope: f64,
    pub max_leverage: f64,
}

pub fn stage_reports<M: LinearMdp>(
    model: &M,
    tables: &ValueTables<M::State>,
    output: &LsviOutput<M::State>,
    zeta: f64,
) -> Vec<StageReport> {
    let horizon = output.horizon();
    let alpha = model.discount();
    let d = model.feature_dim();
    let beta = beta_of(output.n, horizon, output.m_actual, zeta);
    output
        .stages
        .iter()
        .map(|fit| {
            let h = fit.h;
            let max_mu_err = fit
                .support
                .iter()
                .zip(&fit.responses)
                .map(|((s, a), &mu_hat)| {
                    let mu = model
                        .outcomes(s, *a)
                        .backup(alpha, |n| output.max_value(model, h + 1, n));
                    (mu_hat - mu).abs()
                })
                .fold(0.0, f64::max);
            let mut max_f_err: f64 = 0.0;
            for (i, s) in tables.levels().at(h).iter().enumerate() {
                if !tables.is_reachable(h, i) {
                    continue;
                }
                for a in Action::all(model.num_actions()) {
                    let err = (output.value(model, h, s, a) - tables.q_row(h, i)[a.slot()]).abs();
                    max_f_err = max_f_err.max(err);
                }
            }
            StageReport {
                h,
                support: fit.design.support_size(),
                beta,
                max_mu_err,
                max_f_err,
                envelope: error_envelope(h, horizon, d, beta),
                max_leverage: fit.design.max_leverage,
            }
        })
        .collect()
}

/// `h,support,beta,max_mu_err,max_f_err,envelope` rows.
pub fn stage_reports_csv(reports: &[StageReport]) -> String {
    let mut out = String::from("h,support,beta,max_mu_err,max_f_err,envelope\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.h, r.support, r.beta, r.max_mu_err, r.max_f_err, r.envelope
        )
        .unwrap();
    }
    out
}
