//! Experiment configuration: a TOML file describing one instance family,
//! a planner and the replication plan.
//!
//! ```toml
//! d = 4
//! H = 2
//! gamma = 0.25      # or eta = ... for the derived parameterization
//! k = 3
//! planner = "lsvi"
//! replication = 50
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::hard::{eta_upper_bound, HorizonMode};
use crate::jl::DEFAULT_MAX_RETRIES;
use crate::mdp::DEFAULT_STATE_CAP;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlannerKind {
    Lsvi,
    Random,
    GreedyOracle,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Lsvi => "lsvi",
            PlannerKind::Random => "random",
            PlannerKind::GreedyOracle => "greedy-oracle",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "lsvi" => Some(PlannerKind::Lsvi),
            "random" => Some(PlannerKind::Random),
            "greedy-oracle" => Some(PlannerKind::GreedyOracle),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamSource {
    /// `γ` and `k` derived from `η`.
    Derived { eta: f64 },
    Custom { gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AStarChoice {
    Fixed(usize),
    /// The null model `M_0`.
    Null,
    /// Drawn uniformly per replicate.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorSource {
    Orthonormal,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSpec {
    pub d: usize,
    pub horizon: usize,
    pub params: ParamSource,
    pub k: Option<usize>,
    pub epsilon: Option<f64>,
    pub mode: HorizonMode,
    pub a_star: AStarChoice,
    pub vector_file: Option<PathBuf>,
    /// `None`: orthonormal when it fits, Gaussian otherwise.
    pub vectors: Option<VectorSource>,
    pub max_retries: usize,
    pub mutate_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub planner: PlannerKind,
    pub replication: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub delta_target: f64,
    pub zeta: f64,
    /// Samples per design point; derived from `delta_target` when absent.
    pub n: Option<u64>,
    pub budget: Option<u64>,
    pub cap: usize,
    pub probe_rollouts: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    d: Option<Spanned<usize>>,
    #[serde(rename = "H")]
    horizon: Option<Spanned<usize>>,
    eta: Option<Spanned<f64>>,
    gamma: Option<Spanned<f64>>,
    k: Option<Spanned<usize>>,
    epsilon: Option<Spanned<f64>>,
    mode: Option<Spanned<String>>,
    alpha: Option<Spanned<f64>>,
    a_star: Option<Spanned<toml::Value>>,
    vector_file: Option<Spanned<String>>,
    vectors: Option<Spanned<String>>,
    seed: Option<Spanned<u64>>,
    planner: Option<Spanned<String>>,
    replication: Option<Spanned<usize>>,
    out_dir: Option<Spanned<String>>,
    delta_target: Option<Spanned<f64>>,
    zeta: Option<Spanned<f64>>,
    n: Option<Spanned<u64>>,
    budget: Option<Spanned<u64>>,
    cap: Option<Spanned<usize>>,
    max_retries: Option<Spanned<usize>>,
    mutate_sigma: Option<Spanned<f64>>,
    probe_rollouts: Option<Spanned<u64>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, span: Range<usize>, message: impl Into<String>) -> Error {
        Error::Config {
            line: line_of(self.text, span.start),
            message: message.into(),
        }
    }

    fn required<T: Clone>(&self, v: &Option<Spanned<T>>, key: &str) -> Result<(T, Range<usize>)> {
        v.as_ref()
            .map(|s| (s.get_ref().clone(), s.span()))
            .ok_or_else(|| Error::Config {
                line: 1,
                message: format!("missing required key `{key}`"),
            })
    }
}

fn opt<T: Clone>(v: &Option<Spanned<T>>) -> Option<(T, Range<usize>)> {
    v.as_ref().map(|s| (s.get_ref().clone(), s.span()))
}

/// Parses and validates a config. Relative `vector_file` paths resolve
/// against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let cx = Ctx { text };

    let (d, d_span) = cx.required(&raw.d, "d")?;
    let (horizon, h_span) = cx.required(&raw.horizon, "H")?;
    if horizon < 1 {
        return Err(cx.err(h_span, "H must be at least 1"));
    }
    let (planner_name, p_span) = cx.required(&raw.planner, "planner")?;
    let planner = PlannerKind::parse(&planner_name).ok_or_else(|| {
        cx.err(
            p_span.clone(),
            format!("unknown planner {planner_name:?} (expected lsvi, random or greedy-oracle)"),
        )
    })?;

    let k = opt(&raw.k);
    if let Some((k, span)) = &k {
        if *k < 1 {
            return Err(cx.err(span.clone(), "k must be at least 1"));
        }
    }
    let params = match (opt(&raw.eta), opt(&raw.gamma)) {
        (Some(_), Some((_, span))) => {
            return Err(cx.err(span, "give exactly one of `eta` and `gamma`"));
        }
        (None, None) => {
            return Err(Error::Config {
                line: 1,
                message: "missing required key `eta` (or `gamma` with `k`)".into(),
            })
        }
        (Some((eta, span)), None) => {
            if d < 18 {
                return Err(cx.err(d_span, format!("d = {d} below 18 (needed with `eta`)")));
            }
            let upper = eta_upper_bound(d);
            if !(eta > 0.0 && eta <= upper + 1e-12) {
                return Err(cx.err(
                    span,
                    format!("eta = {eta} violates 0 < eta <= 1/2 - 2/log2(d-1) = {upper:.6}"),
                ));
            }
            ParamSource::Derived { eta }
        }
        (None, Some((gamma, span))) => {
            if d < 2 {
                return Err(cx.err(d_span, format!("d = {d} below 2")));
            }
            if !(gamma > 0.0 && gamma <= 0.25) {
                return Err(cx.err(span, format!("gamma = {gamma} outside (0, 1/4]")));
            }
            if k.is_none() && raw.vector_file.is_none() {
                return Err(cx.err(span, "`gamma` needs `k` or a `vector_file`"));
            }
            ParamSource::Custom { gamma }
        }
    };

    let epsilon = match opt(&raw.epsilon) {
        Some((e, span)) if !(e > 0.0 && e <= 1.0) => {
            return Err(cx.err(span, format!("epsilon = {e} outside (0, 1]")));
        }
        other => other.map(|(e, _)| e),
    };

    let mode = match (opt(&raw.mode), opt(&raw.alpha)) {
        (None, None) => HorizonMode::FixedHorizon,
        (Some((m, _)), None) if m == "fixed_horizon" => HorizonMode::FixedHorizon,
        (Some((m, span)), alpha) if m == "discounted" => {
            let (alpha, a_span) = alpha.ok_or_else(|| cx.err(span, "discounted mode needs `alpha`"))?;
            if !(2.0 / 3.0 - 1e-12..1.0).contains(&alpha) {
                return Err(cx.err(a_span, format!("alpha = {alpha} outside [2/3, 1)")));
            }
            HorizonMode::Discounted { alpha }
        }
        (None, Some((_, span))) => return Err(cx.err(span, "`alpha` requires mode = \"discounted\"")),
        (Some((m, span)), _) => {
            return Err(cx.err(span, format!("unknown mode {m:?} (fixed_horizon or discounted)")))
        }
    };

    let a_star = match &raw.a_star {
        None => AStarChoice::Fixed(1),
        Some(v) => match v.get_ref() {
            toml::Value::Integer(i) if *i >= 1 => {
                if let Some((k, _)) = &k {
                    if *i as usize > *k {
                        return Err(cx.err(v.span(), format!("a_star = {i} outside 1..={k}")));
                    }
                }
                AStarChoice::Fixed(*i as usize)
            }
            toml::Value::String(s) if s == "none" => AStarChoice::Null,
            toml::Value::String(s) if s == "random" => AStarChoice::Random,
            other => {
                return Err(cx.err(
                    v.span(),
                    format!("a_star must be a positive integer, \"none\" or \"random\", got {other}"),
                ))
            }
        },
    };

    let vector_file = opt(&raw.vector_file).map(|(p, _)| base_dir.join(p));
    if let (Some(path), Some(span)) = (&vector_file, raw.vector_file.as_ref().map(|s| s.span())) {
        if !path.exists() {
            return Err(cx.err(span, format!("vector_file {} does not exist", path.display())));
        }
    }
    let vectors = match opt(&raw.vectors) {
        None => None,
        Some((v, _)) if v == "orthonormal" => Some(VectorSource::Orthonormal),
        Some((v, _)) if v == "gaussian" => Some(VectorSource::Gaussian),
        Some((v, span)) => {
            return Err(cx.err(span, format!("unknown vectors {v:?} (orthonormal or gaussian)")))
        }
    };

    let replication = match opt(&raw.replication) {
        Some((0, span)) => return Err(cx.err(span, "replication must be at least 1")),
        Some((r, _)) => r,
        None => 1,
    };
    let delta_target = match opt(&raw.delta_target) {
        Some((v, span)) if !(v > 0.0) => {
            return Err(cx.err(span, format!("delta_target = {v} must be positive")))
        }
        other => other.map_or(0.25, |(v, _)| v),
    };
    let zeta = match opt(&raw.zeta) {
        Some((v, span)) if !(v > 0.0 && v <= 1.0) => {
            return Err(cx.err(span, format!("zeta = {v} outside (0, 1]")))
        }
        other => other.map_or(0.1, |(v, _)| v),
    };
    let n = match opt(&raw.n) {
        Some((0, span)) => return Err(cx.err(span, "n must be at least 1")),
        other => other.map(|(v, _)| v),
    };
    let cap = match opt(&raw.cap) {
        Some((0, span)) => return Err(cx.err(span, "cap must be at least 1")),
        other => other.map_or(DEFAULT_STATE_CAP, |(v, _)| v),
    };
    let mutate_sigma = match opt(&raw.mutate_sigma) {
        Some((v, span)) if !v.is_finite() => return Err(cx.err(span, "mutate_sigma must be finite")),
        other => other.map_or(0.0, |(v, _)| v),
    };

    Ok(ExperimentConfig {
        instance: InstanceSpec {
            d,
            horizon,
            params,
            k: k.map(|(k, _)| k),
            epsilon,
            mode,
            a_star,
            vector_file,
            vectors,
            max_retries: opt(&raw.max_retries).map_or(DEFAULT_MAX_RETRIES, |(v, _)| v),
            mutate_sigma,
        },
        planner,
        replication,
        seed: opt(&raw.seed).map_or(0, |(v, _)| v),
        out_dir: opt(&raw.out_dir).map(|(p, _)| PathBuf::from(p)),
        delta_target,
        zeta,
        n,
        budget: opt(&raw.budget).map(|(v, _)| v),
        cap,
        probe_rollouts: opt(&raw.probe_rollouts).map_or(1, |(v, _)| v),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base)
}
