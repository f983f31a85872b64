//! Experiment orchestration behind the `qstar` commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AStarChoice, ExperimentConfig, InstanceSpec, ParamSource, PlannerKind, VectorSource};
use crate::design::DesignConfig;
use crate::error::{Error, ProtocolError, Result};
use crate::hard::{permutations, symmetry_violations, HardInstance, HardParams};
use crate::jl::{generate_family, orthonormal_family, verify_family, VectorFamily};
use crate::lsvi::{lsvi_run, sample_size, stage_reports, LsviConfig, LsviOutput};
use crate::mdp::{enumerate_levels, Action, Levels, LinearMdp, Simulator, StagePolicy, StateId};
use crate::oracle::{
    bellman_residual, check_realizability, greedy_from, likelihood_floor_check, policy_value, solve_on_levels,
    suboptimality, ValueTables,
};
use crate::rng::{purpose_stream, Purpose, Stream};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QSTAR_OUT_DIR";

/// Output directory: explicit flag, then config, then environment, then
/// `qstar-out`.
pub fn resolve_out_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("qstar-out"))
}

/// Parameters and vector family shared by every member of the configured
/// family.
#[derive(Clone, Debug)]
pub struct Family {
    pub params: HardParams,
    pub vectors: VectorFamily,
    pub mutate_sigma: f64,
}

impl Family {
    pub fn build(spec: &InstanceSpec, seed: u64) -> Result<Self> {
        let mut params = match spec.params {
            ParamSource::Derived { eta } => HardParams::derive(spec.d, spec.horizon, eta, spec.mode)?,
            ParamSource::Custom { gamma } => {
                let k = spec.k.unwrap_or(1);
                HardParams::custom(spec.d, spec.horizon, gamma, k, spec.mode)?
            }
        };
        let dim = spec.d - 1;
        let vectors = if let Some(path) = &spec.vector_file {
            let family = VectorFamily::read(path)?;
            if let Some(k) = spec.k {
                if family.len() != k {
                    return Err(Error::Parameter(format!(
                        "vector file holds {} vectors, config says k = {k}",
                        family.len()
                    )));
                }
            }
            family
        } else {
            let k = spec.k.unwrap_or(params.k());
            let source = spec.vectors.unwrap_or(if k <= dim {
                VectorSource::Orthonormal
            } else {
                VectorSource::Gaussian
            });
            match source {
                VectorSource::Orthonormal => orthonormal_family(dim, k, params.gamma())?,
                VectorSource::Gaussian => {
                    let mut rng = purpose_stream(seed, 0, Purpose::Vectors);
                    generate_family(dim, k, params.gamma(), &mut rng, spec.max_retries)?
                }
            }
        };
        if vectors.len() != params.k() {
            params = params.override_k(vectors.len(), &vectors)?;
        }
        if let Some(eps) = spec.epsilon {
            params = params.with_epsilon(eps)?;
        }
        Ok(Family {
            params,
            vectors,
            mutate_sigma: spec.mutate_sigma,
        })
    }

    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn member(&self, a_star: Option<Action>) -> Result<HardInstance> {
        let inst = HardInstance::new(self.params.clone(), self.vectors.clone(), a_star)?;
        Ok(if self.mutate_sigma != 0.0 {
            inst.with_sigma_corruption(self.mutate_sigma)
        } else {
            inst
        })
    }

    /// `a*` of replicate `seed`.
    pub fn a_star_for(&self, choice: AStarChoice, seed: u64) -> Result<Option<Action>> {
        Ok(match choice {
            AStarChoice::Fixed(a) => Some(Action::checked(a, self.k())?),
            AStarChoice::Null => None,
            AStarChoice::Random => {
                let mut rng = purpose_stream(seed, 0, Purpose::Instance);
                Some(Action::new(rng.gen_range(1..=self.k())))
            }
        })
    }
}

/// What a planner leaves behind: the policy it implements and, for LSVI,
/// its fitted value estimates.
pub struct Plan<S> {
    pub policy: StagePolicy<S>,
    pub estimates: Option<LsviOutput<S>>,
    /// Read the exact tables instead of querying.
    pub reads_oracle: bool,
}

/// A planner that interacts with the model only through the simulator.
pub trait QueryPlanner<M: LinearMdp>: Sync {
    fn name(&self) -> &str;

    fn plan(
        &self,
        sim: &mut Simulator<'_, M>,
        levels: &Levels<M::State>,
        rng: &mut Stream,
    ) -> Result<Plan<M::State>>;
}

pub struct LsviPlanner {
    pub config: LsviConfig,
}

impl<M: LinearMdp> QueryPlanner<M> for LsviPlanner {
    fn name(&self) -> &str {
        "lsvi"
    }

    fn plan(&self, sim: &mut Simulator<'_, M>, levels: &Levels<M::State>, _rng: &mut Stream) -> Result<Plan<M::State>> {
        let out = lsvi_run(sim, levels, &self.config)?;
        let model = sim.model();
        let policy = greedy_from(levels, model.num_actions(), |h, s, a| out.value(model, h, s, a));
        Ok(Plan {
            policy,
            estimates: Some(out),
            reads_oracle: false,
        })
    }
}

/// Spends `probe_rollouts` uniformly random rollouts of queries, then
/// commits to an independent uniformly random action at every state.
pub struct RandomPlanner {
    pub probe_rollouts: u64,
}

impl<M: LinearMdp> QueryPlanner<M> for RandomPlanner {
    fn name(&self) -> &str {
        "random"
    }

    fn plan(&self, sim: &mut Simulator<'_, M>, levels: &Levels<M::State>, rng: &mut Stream) -> Result<Plan<M::State>> {
        let model = sim.model();
        let k = model.num_actions();
        for _ in 0..self.probe_rollouts {
            let mut s = model.initial_state();
            for _ in 0..model.horizon() {
                let a = Action::new(rng.gen_range(1..=k));
                s = sim.query(&s, a)?.1;
            }
        }
        let policy = StagePolicy::deterministic(levels, k, |_, _| Action::new(rng.gen_range(1..=k)));
        Ok(Plan {
            policy,
            estimates: None,
            reads_oracle: false,
        })
    }
}

/// Cheating baseline: greedy on the exact `q*`, no queries.
pub struct OraclePlanner<'t, S> {
    pub tables: &'t ValueTables<S>,
}

impl<M: LinearMdp> QueryPlanner<M> for OraclePlanner<'_, M::State> {
    fn name(&self) -> &str {
        "greedy-oracle"
    }

    fn plan(&self, _sim: &mut Simulator<'_, M>, _levels: &Levels<M::State>, _rng: &mut Stream) -> Result<Plan<M::State>> {
        let tables = self.tables;
        Ok(Plan {
            policy: greedy_from(tables.levels(), tables.num_actions(), |h, s, a| tables.q(h, s, a).unwrap()),
            estimates: None,
            reads_oracle: true,
        })
    }
}

// ---------------------------------------------------------------- verify

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    /// `None` when the check does not apply.
    pub pass: Option<bool>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass != Some(false))
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match c.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "SKIP",
            };
            writeln!(out, "{tag} {:<20} {}", c.name, c.detail).unwrap();
        }
        out
    }
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        pass: Some(pass),
        detail,
    }
}

fn skip(name: &str, detail: &str) -> Check {
    Check {
        name: name.into(),
        pass: None,
        detail: detail.into(),
    }
}

const PERMUTATION_SAMPLES: usize = 200;

/// Structural checks on the instance selected by `config`.
pub fn cmd_verify(config: &ExperimentConfig) -> Result<VerifyReport> {
    let family = Family::build(&config.instance, config.seed)?;
    let a_star = family.a_star_for(config.instance.a_star, config.seed)?;
    let inst = family.member(a_star)?;
    let p = inst.params().clone();
    let levels = enumerate_levels(&inst, config.cap)?;
    let tables = solve_on_levels(&inst, levels.clone())?;
    let mut checks = Vec::new();

    let sr = inst.sigma_range();
    checks.push(check(
        "sigma_range",
        sr.within(p.gamma(), 1.0, 1e-12),
        format!("sigma in [{:.6}, {:.6}] over {} pairs, need [{}, 1]", sr.min, sr.max, sr.count, p.gamma()),
    ));
    let cap = p.bernoulli_cap();
    let mr = inst.mu_range();
    checks.push(if mr.count == 0 {
        skip("mu_range", "no Bernoulli leaves")
    } else {
        check(
            "mu_range",
            mr.within(0.0, cap, 1e-12),
            format!("mu in [{:.6e}, {:.6e}] over {} leaves, need [0, {cap:.6e}]", mr.min, mr.max, mr.count),
        )
    });
    let rr = inst.reward_range();
    checks.push(check(
        "reward_range",
        rr.within(0.0, 1.0, 1e-12),
        format!("rewards in [{:.6e}, {:.6e}] over {} atoms", rr.min, rr.max, rr.count),
    ));
    let bell = bellman_residual(&inst, &tables);
    checks.push(check("bellman", bell <= 1e-12, format!("fixed-point residual {bell:.3e}")));
    let real = check_realizability(&inst, &tables, inst.theta_star());
    let worst = real
        .worst
        .as_ref()
        .map(|(h, s, a)| format!(" at h={h}, s={s}, a={a}"))
        .unwrap_or_default();
    checks.push(check(
        "realizability",
        real.max_residual <= 1e-9,
        format!("max |q* - <phi, theta*>| = {:.3e}{worst}", real.max_residual),
    ));

    checks.push(match a_star {
        Some(star) if p.k() >= 2 && p.epsilon_is_derived() => {
            let root = StateId::root();
            let gaps: Vec<f64> = Action::all(p.k())
                .filter(|&a| a != star)
                .map(|a| tables.gap(1, &root, a).unwrap())
                .collect();
            let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
            let orthonormal = verify_family(inst.family()).max_overlap == 0.0;
            let exact = !orthonormal || gaps.iter().all(|g| (g - 1.0 / 3.0).abs() <= 1e-12);
            check(
                "root_gap",
                min_gap >= 0.25 - 1e-12 && exact,
                format!(
                    "min root gap {min_gap:.15}{}",
                    if orthonormal { " (orthonormal: expect 1/3)" } else { "" }
                ),
            )
        }
        _ => skip("root_gap", "needs a*, k >= 2 and the derived epsilon"),
    });

    let m0 = inst.null_model();
    let perms: Vec<Vec<usize>> = if p.k() <= 7 {
        permutations(p.k())
    } else {
        let mut rng = purpose_stream(config.seed, 0, Purpose::Instance);
        (0..PERMUTATION_SAMPLES)
            .map(|_| {
                let mut perm: Vec<usize> = (0..p.k()).collect();
                perm.shuffle(&mut rng);
                perm
            })
            .collect()
    };
    let violations: usize = perms.iter().map(|perm| symmetry_violations(&m0, perm).len()).sum();
    checks.push(check(
        "m0_symmetry",
        violations == 0,
        format!("{violations} violations over {} permutations", perms.len()),
    ));

    checks.push(match a_star {
        Some(_) => {
            let n = p.n_choice();
            let lf = likelihood_floor_check(&inst, n.max(1), config.cap)?;
            let power_ok = n == 0 || lf.floor > 0.75;
            check(
                "likelihood_floor",
                lf.holds && power_ok,
                format!(
                    "min ratio {:.15} vs 1 - eps = {:.15}; n_choice = {n}, (1-eps)^n = {:.6}",
                    lf.min_ratio,
                    1.0 - cap,
                    lf.floor
                ),
            )
        }
        None => skip("likelihood_floor", "M_0 is the reference model"),
    });

    let top = inst.max_linear_value();
    checks.push(check("value_bound", top <= 1.0 + 1e-12, format!("max <phi, theta*> = {top:.15}")));

    Ok(VerifyReport { checks })
}

// ----------------------------------------------------------------- bench

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub planner: String,
    pub k: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub d: usize,
    pub gamma: f64,
    pub epsilon: f64,
    #[serde(rename = "N")]
    pub queries: u64,
    pub delta_pi: f64,
    pub max_stage_err: f64,
    pub wall_ms: u64,
    pub pass: bool,
    pub truncated: bool,
}

pub const CSV_HEADER: &str = "seed,planner,k,H,d,gamma,epsilon,N,delta_pi,max_stage_err,wall_ms,pass";

impl RunRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.16e},{:.16e},{},{:.16e},{:.16e},{},{}",
            self.seed,
            self.planner,
            self.k,
            self.horizon,
            self.d,
            self.gamma,
            self.epsilon,
            self.queries,
            self.delta_pi,
            self.max_stage_err,
            self.wall_ms,
            self.pass
        )
    }
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchSummary {
    pub planner: String,
    pub replicates: usize,
    pub delta_target: f64,
    pub zeta: f64,
    /// Samples per design point (LSVI).
    pub n_per_point: Option<u64>,
    pub m_actual: Option<usize>,
    pub mean_n: f64,
    /// Empirical maximum over the sampled instances and seeds.
    pub max_n: u64,
    pub mean_delta_pi: f64,
    pub max_delta_pi: f64,
    /// Mean over replicates where the stage error is defined.
    pub mean_max_stage_err: Option<f64>,
    /// Fraction of replicates with `delta_pi > delta_target` or truncated.
    pub failure_rate: f64,
    pub soundness_rate: f64,
    pub truncated: usize,
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub records: Vec<RunRecord>,
    pub summary: BenchSummary,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BenchOptions {
    /// Record wall-clock times (breaks byte-identical output).
    pub timing: bool,
}

/// `max_{h} ||f_h - q*_h||_∞` for LSVI, 0 for the oracle, NaN otherwise.
fn max_stage_err<M: LinearMdp>(model: &M, tables: &ValueTables<M::State>, plan: &Plan<M::State>, zeta: f64) -> f64 {
    match &plan.estimates {
        Some(out) => stage_reports(model, tables, out, zeta)
            .iter()
            .map(|r| r.max_f_err)
            .fold(0.0, f64::max),
        None if plan.reads_oracle => 0.0,
        None => f64::NAN,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplicateOutcome {
    pub queries: u64,
    pub delta_pi: f64,
    pub max_stage_err: f64,
    pub truncated: bool,
    pub wall_ms: u64,
}

/// One replicate of `planner` on `model`, budget enforced here.
pub fn run_replicate<M: LinearMdp, P: QueryPlanner<M> + ?Sized>(
    model: &M,
    tables: &ValueTables<M::State>,
    planner: &P,
    seed: u64,
    budget: Option<u64>,
    zeta: f64,
    timing: bool,
) -> Result<ReplicateOutcome> {
    let start = Instant::now();
    let mut sim = Simulator::new(model, purpose_stream(seed, 0, Purpose::Simulator));
    if let Some(b) = budget {
        sim = sim.with_budget(b);
    }
    let mut rng = purpose_stream(seed, 0, Purpose::Planner);
    let levels = tables.levels();
    let (plan, truncated) = match planner.plan(&mut sim, levels, &mut rng) {
        Ok(plan) => (plan, false),
        Err(Error::Protocol(ProtocolError::BudgetExhausted { .. })) => (
            Plan {
                policy: StagePolicy::deterministic(levels, model.num_actions(), |_, _| Action::new(1)),
                estimates: None,
                reads_oracle: false,
            },
            true,
        ),
        Err(e) => return Err(e),
    };
    let values = policy_value(model, levels, &plan.policy)?;
    let delta_pi = suboptimality(tables, &values);
    let max_stage_err = if truncated {
        f64::NAN
    } else {
        max_stage_err(model, tables, &plan, zeta)
    };
    Ok(ReplicateOutcome {
        queries: sim.meter().count(),
        delta_pi,
        max_stage_err,
        truncated,
        wall_ms: if timing { start.elapsed().as_millis() as u64 } else { 0 },
    })
}

/// Largest design support over the stages of `model`.
pub fn design_support<M: LinearMdp>(model: &M, levels: &Levels<M::State>, cfg: DesignConfig) -> Result<usize> {
    let mut m = 0;
    for h in 1..=model.horizon() {
        let feats: Vec<Vec<f64>> = levels
            .at(h)
            .iter()
            .flat_map(|s| Action::all(model.num_actions()).map(move |a| (s, a)))
            .map(|(s, a)| model.features(h, s, a))
            .collect();
        m = m.max(crate::design::g_optimal_design(&feats, model.feature_dim(), cfg)?.support_size());
    }
    Ok(m)
}

pub fn lsvi_config(config: &ExperimentConfig, n: u64) -> LsviConfig {
    LsviConfig {
        n,
        zeta: config.zeta,
        delta_target: config.delta_target,
        design: DesignConfig::default(),
    }
}

/// Replicates the configured planner; replicate `i` uses seed `seed + i`.
pub fn cmd_bench(config: &ExperimentConfig, options: BenchOptions) -> Result<BenchResult> {
    let family = Family::build(&config.instance, config.seed)?;
    let seeds: Vec<u64> = (0..config.replication as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let stars: Vec<Option<Action>> = seeds
        .iter()
        .map(|&s| family.a_star_for(config.instance.a_star, s))
        .collect::<Result<_>>()?;

    let mut instances: BTreeMap<Option<Action>, (HardInstance, ValueTables<StateId>)> = BTreeMap::new();
    let probe = family.member(None)?;
    let levels = enumerate_levels(&probe, config.cap)?;
    for star in &stars {
        if !instances.contains_key(star) {
            let inst = family.member(*star)?;
            let tables = solve_on_levels(&inst, levels.clone())?;
            instances.insert(*star, (inst, tables));
        }
    }

    let (n, m_actual) = match config.planner {
        PlannerKind::Lsvi => {
            let m = design_support(&probe, &levels, DesignConfig::default())?;
            let n = config.n.unwrap_or_else(|| {
                sample_size(family.params.horizon(), family.params.d(), m.max(1), config.delta_target)
            });
            (Some(n), Some(m))
        }
        _ => (None, None),
    };
    let p = &family.params;

    let records: Vec<RunRecord> = seeds
        .par_iter()
        .zip(&stars)
        .map(|(&seed, star)| -> Result<RunRecord> {
            let (inst, tables) = &instances[star];
            let outcome = match config.planner {
                PlannerKind::Lsvi => {
                    let planner = LsviPlanner {
                        config: lsvi_config(config, n.unwrap()),
                    };
                    run_replicate(inst, tables, &planner, seed, config.budget, config.zeta, options.timing)
                }
                PlannerKind::Random => {
                    let planner = RandomPlanner {
                        probe_rollouts: config.probe_rollouts,
                    };
                    run_replicate(inst, tables, &planner, seed, config.budget, config.zeta, options.timing)
                }
                PlannerKind::GreedyOracle => {
                    let planner = OraclePlanner { tables };
                    run_replicate(inst, tables, &planner, seed, config.budget, config.zeta, options.timing)
                }
            }?;
            Ok(RunRecord {
                seed,
                planner: config.planner.name().into(),
                k: p.k(),
                horizon: p.horizon(),
                d: p.d(),
                gamma: p.gamma(),
                epsilon: p.epsilon(),
                queries: outcome.queries,
                delta_pi: outcome.delta_pi,
                max_stage_err: outcome.max_stage_err,
                wall_ms: outcome.wall_ms,
                pass: !outcome.truncated && outcome.delta_pi <= config.delta_target,
                truncated: outcome.truncated,
            })
        })
        .collect::<Result<_>>()?;

    let summary = summarize(config, &records, n, m_actual);
    Ok(BenchResult { records, summary })
}

fn summarize(config: &ExperimentConfig, records: &[RunRecord], n: Option<u64>, m_actual: Option<usize>) -> BenchSummary {
    let count = records.len() as f64;
    let errs: Vec<f64> = records.iter().map(|r| r.max_stage_err).filter(|e| e.is_finite()).collect();
    let failures = records.iter().filter(|r| !r.pass).count() as f64;
    BenchSummary {
        planner: config.planner.name().into(),
        replicates: records.len(),
        delta_target: config.delta_target,
        zeta: config.zeta,
        n_per_point: n,
        m_actual,
        mean_n: records.iter().map(|r| r.queries as f64).sum::<f64>() / count,
        max_n: records.iter().map(|r| r.queries).max().unwrap_or(0),
        mean_delta_pi: records.iter().map(|r| r.delta_pi).sum::<f64>() / count,
        max_delta_pi: records.iter().map(|r| r.delta_pi).fold(0.0, f64::max),
        mean_max_stage_err: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
        failure_rate: failures / count,
        soundness_rate: 1.0 - failures / count,
        truncated: records.iter().filter(|r| r.truncated).count(),
    }
}

/// Writes `bench.csv` and `bench_summary.json` under `dir`.
pub fn write_bench(dir: &Path, result: &BenchResult) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("bench.csv");
    let json = dir.join("bench_summary.json");
    std::fs::write(&csv, records_csv(&result.records))?;
    let text = serde_json::to_string_pretty(&result.summary).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&json, text + "\n")?;
    Ok((csv, json))
}

// ------------------------------------------------------------- adversary

#[derive(Clone, Debug, Serialize)]
pub struct ActionReport {
    pub action: usize,
    /// Empirical `P_0(a ∉ A_{1:n})`.
    pub p_null: f64,
    /// Empirical `P_a(a ∉ A_{1:n})` under `M_{a,ε}`.
    pub p_alt: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdversaryReport {
    pub planner: String,
    pub budget: u64,
    pub trials: usize,
    pub epsilon: f64,
    /// `(1 - ε)^n`.
    pub floor: f64,
    pub n_choice: u64,
    pub actions: Vec<ActionReport>,
}

impl AdversaryReport {
    pub fn passed(&self) -> bool {
        self.actions.iter().all(|a| a.pass)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "planner {} budget {} trials {} floor (1-eps)^n = {:.6} (n_choice = {})\naction,p_null,p_alt,ratio,pass\n",
            self.planner, self.budget, self.trials, self.floor, self.n_choice
        );
        for a in &self.actions {
            writeln!(out, "{},{:.6},{:.6},{:.6},{}", a.action, a.p_null, a.p_alt, a.ratio, a.pass).unwrap();
        }
        out
    }
}

/// Set of actions the planner queried in one budgeted run.
pub fn queried_actions<M: LinearMdp, P: QueryPlanner<M> + ?Sized>(
    model: &M,
    levels: &Levels<M::State>,
    planner: &P,
    seed: u64,
    budget: u64,
) -> Result<Vec<bool>> {
    let mut sim = Simulator::new(model, purpose_stream(seed, 0, Purpose::Simulator))
        .with_budget(budget)
        .with_action_log();
    let mut rng = purpose_stream(seed, 0, Purpose::Planner);
    match planner.plan(&mut sim, levels, &mut rng) {
        Ok(_) | Err(Error::Protocol(ProtocolError::BudgetExhausted { .. })) => {}
        Err(e) => return Err(e),
    }
    let mut seen = vec![false; model.num_actions()];
    for a in sim.action_log().unwrap_or_default() {
        seen[a.slot()] = true;
    }
    Ok(seen)
}

/// Identification experiment against `M_0` and every `M_{a,ε}` with the
/// given planner.
pub fn adversary_with<P>(family: &Family, planner: &P, budget: u64, trials: usize, seed: u64, cap: usize) -> Result<AdversaryReport>
where
    P: QueryPlanner<HardInstance>,
{
    let k = family.k();
    let null = family.member(None)?;
    let levels = enumerate_levels(&null, cap)?;
    let seeds: Vec<u64> = (0..trials as u64).map(|i| seed.wrapping_add(i)).collect();
    let misses = |model: &HardInstance| -> Result<Vec<u64>> {
        let runs: Vec<Vec<bool>> = seeds
            .par_iter()
            .map(|&s| queried_actions(model, &levels, planner, s, budget))
            .collect::<Result<_>>()?;
        Ok((0..k).map(|i| runs.iter().filter(|r| !r[i]).count() as u64).collect())
    };
    let null_miss = misses(&null)?;
    let eps = family.params.bernoulli_cap();
    let floor = (1.0 - eps).powi(budget.min(i32::MAX as u64) as i32);
    let t = trials as f64;
    let mut actions = Vec::with_capacity(k);
    for a in Action::all(k) {
        let alt = family.member(Some(a))?;
        let p_alt = misses(&alt)?[a.slot()] as f64 / t;
        let p_null = null_miss[a.slot()] as f64 / t;
        let se = ((p_alt * (1.0 - p_alt) + floor * floor * p_null * (1.0 - p_null)) / t).sqrt();
        actions.push(ActionReport {
            action: a.index(),
            p_null,
            p_alt,
            ratio: if p_null > 0.0 { p_alt / p_null } else { f64::NAN },
            pass: p_alt + 3.0 * se >= floor * p_null,
        });
    }
    Ok(AdversaryReport {
        planner: planner.name().into(),
        budget,
        trials,
        epsilon: eps,
        floor,
        n_choice: family.params.n_choice(),
        actions,
    })
}

pub fn cmd_adversary(config: &ExperimentConfig, budget: u64) -> Result<AdversaryReport> {
    let family = Family::build(&config.instance, config.seed)?;
    let trials = config.replication;
    match config.planner {
        PlannerKind::Lsvi => {
            let probe = family.member(None)?;
            let levels = enumerate_levels(&probe, config.cap)?;
            let m = design_support(&probe, &levels, DesignConfig::default())?;
            let n = config.n.unwrap_or_else(|| {
                sample_size(family.params.horizon(), family.params.d(), m.max(1), config.delta_target)
            });
            let planner = LsviPlanner {
                config: lsvi_config(config, n),
            };
            adversary_with(&family, &planner, budget, trials, config.seed, config.cap)
        }
        PlannerKind::Random => {
            let planner = RandomPlanner {
                probe_rollouts: config.probe_rollouts.max(budget),
            };
            adversary_with(&family, &planner, budget, trials, config.seed, config.cap)
        }
        PlannerKind::GreedyOracle => Err(Error::Parameter(
            "the oracle baseline issues no queries; pick lsvi or random".into(),
        )),
    }
}

// ----------------------------------------------------------------- solve

pub fn cmd_solve(config: &ExperimentConfig) -> Result<ValueTables<StateId>> {
    let family = Family::build(&config.instance, config.seed)?;
    let inst = family.member(family.a_star_for(config.instance.a_star, config.seed)?)?;
    let levels = enumerate_levels(&inst, config.cap)?;
    solve_on_levels(&inst, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn cfg(extra: &str) -> ExperimentConfig {
        let text = format!("d = 4\nH = 2\ngamma = 0.25\nk = 3\n{extra}");
        parse_config(&text, Path::new(".")).unwrap()
    }

    #[test]
    fn verify_passes_on_desk_instance() {
        let report = cmd_verify(&cfg("planner = \"lsvi\"\n")).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.check("root_gap").unwrap().pass, Some(true));
    }

    #[test]
    fn corrupted_sigma_fails_realizability() {
        let report = cmd_verify(&cfg("planner = \"lsvi\"\nmutate_sigma = 0.01\n")).unwrap();
        assert_eq!(report.check("realizability").unwrap().pass, Some(false));
        assert!(!report.passed());
    }

    #[test]
    fn null_model_verifies() {
        let report = cmd_verify(&cfg("planner = \"lsvi\"\na_star = \"none\"\n")).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert!(report.check("m0_symmetry").unwrap().detail.contains("6 permutations"));
    }

    #[test]
    fn oracle_baseline_is_free_and_exact() {
        let res = cmd_bench(&cfg("planner = \"greedy-oracle\"\nreplication = 3\n"), BenchOptions::default()).unwrap();
        for r in &res.records {
            assert_eq!(r.queries, 0);
            assert_eq!(r.delta_pi, 0.0);
            assert_eq!(r.max_stage_err, 0.0);
            assert!(r.pass);
        }
    }

    #[test]
    fn budget_overrun_is_a_truncated_run() {
        let res = cmd_bench(&cfg("planner = \"lsvi\"\nn = 100\nbudget = 150\n"), BenchOptions::default()).unwrap();
        let r = &res.records[0];
        assert!(r.truncated && !r.pass);
        assert_eq!(r.queries, 150);
        assert_eq!(res.summary.truncated, 1);
    }

    #[test]
    fn random_planner_misses_a_star() {
        let res = cmd_bench(&cfg("planner = \"random\"\nreplication = 40\n"), BenchOptions::default()).unwrap();
        assert!(res.records.iter().any(|r| r.delta_pi >= 0.25));
        assert!(res.records.iter().all(|r| r.max_stage_err.is_nan()));
        assert!(res.summary.mean_max_stage_err.is_none());
    }

    #[test]
    fn csv_layout() {
        let res = cmd_bench(&cfg("planner = \"greedy-oracle\"\n"), BenchOptions::default()).unwrap();
        let csv = records_csv(&res.records);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 12);
        assert_eq!(row[5], "2.5000000000000000e-1");
    }
}
