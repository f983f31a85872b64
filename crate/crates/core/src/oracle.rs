//! Exact dynamic programming over enumerable models: optimal and policy
//! values, action gaps, realizability residuals and the soundness checks.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hard::HardInstance;
use crate::jl::dot;
use crate::mdp::{argmax_lowest, enumerate_levels, Action, Levels, LinearMdp, MdpModel, StagePolicy};

/// Optimal values of every state and action at stages `1..=H`, with
/// `v_{H+1} = 0`.
#[derive(Clone, Debug)]
pub struct ValueTables<S> {
    levels: Levels<S>,
    k: usize,
    q: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<f64>>,
    reachable: Vec<Vec<bool>>,
}

impl<S: Clone + Eq + std::hash::Hash + std::fmt::Display> ValueTables<S> {
    pub fn levels(&self) -> &Levels<S> {
        &self.levels
    }

    pub fn horizon(&self) -> usize {
        self.levels.horizon()
    }

    pub fn num_actions(&self) -> usize {
        self.k
    }

    /// `q*_h` at position `i` of `S_h`.
    pub fn q_row(&self, h: usize, i: usize) -> &[f64] {
        &self.q[h - 1][i]
    }

    /// Whether position `i` of `S_h` is reached from the initial state with
    /// positive probability under some action sequence.
    pub fn is_reachable(&self, h: usize, i: usize) -> bool {
        self.reachable[h - 1][i]
    }

    pub fn v_at(&self, h: usize, i: usize) -> f64 {
        self.v[h - 1][i]
    }

    pub fn q(&self, h: usize, s: &S, a: Action) -> Option<f64> {
        let i = self.levels.position(h, s)?;
        self.q.get(h - 1)?.get(i).map(|row| row[a.slot()])
    }

    pub fn v(&self, h: usize, s: &S) -> Option<f64> {
        let i = self.levels.position(h, s)?;
        Some(self.v[h - 1][i])
    }

    /// Action gap `v*_h(s) - q*_h(s,a)`.
    pub fn gap(&self, h: usize, s: &S, a: Action) -> Option<f64> {
        Some(self.v(h, s)? - self.q(h, s, a)?)
    }

    /// `h,state,action,q,v,gap` rows for stages `1..=H`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,state,action,q,v,gap\n");
        for h in 1..=self.horizon() {
            for (i, s) in self.levels.at(h).iter().enumerate() {
                let v = self.v[h - 1][i];
                for (slot, &q) in self.q[h - 1][i].iter().enumerate() {
                    writeln!(
                        out,
                        "{h},{s},{},{q:.16e},{v:.16e},{:.16e}",
                        Action::from_slot(slot),
                        v - q
                    )
                    .unwrap();
                }
            }
        }
        out
    }
}

fn next_value<M: MdpModel>(
    levels: &Levels<M::State>,
    values: &[f64],
    h: usize,
    s: &M::State,
) -> std::result::Result<f64, String> {
    levels
        .position(h + 1, s)
        .map(|j| values[j])
        .ok_or_else(|| format!("successor {s} missing from stage {}", h + 1))
}

/// Backward induction on the level sets of `model`, enumerated under `cap`.
pub fn solve_backward<M: MdpModel>(model: &M, cap: usize) -> Result<ValueTables<M::State>> {
    let levels = enumerate_levels(model, cap)?;
    solve_on_levels(model, levels)
}

pub fn solve_on_levels<M: MdpModel>(model: &M, levels: Levels<M::State>) -> Result<ValueTables<M::State>> {
    let horizon = model.horizon();
    let k = model.num_actions();
    let alpha = model.discount();
    let mut q = vec![Vec::new(); horizon];
    let mut v = vec![Vec::new(); horizon + 1];
    v[horizon] = vec![0.0; levels.at(horizon + 1).len()];
    for h in (1..=horizon).rev() {
        let later = &v[h];
        let rows: std::result::Result<Vec<Vec<f64>>, String> = levels
            .at(h)
            .par_iter()
            .map(|s| {
                Action::all(k)
                    .map(|a| {
                        let law = model.outcomes(s, a);
                        let mut missing = None;
                        let value = law.backup(alpha, |n| {
                            next_value::<M>(&levels, later, h, n).unwrap_or_else(|e| {
                                missing = Some(e);
                                0.0
                            })
                        });
                        missing.map_or(Ok(value), Err)
                    })
                    .collect()
            })
            .collect();
        let rows = rows.map_err(Error::Evaluation)?;
        v[h - 1] = rows.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        q[h - 1] = rows;
    }
    let reachable = forward_reachable(model, &levels);
    Ok(ValueTables {
        levels,
        k,
        q,
        v,
        reachable,
    })
}

fn forward_reachable<M: MdpModel>(model: &M, levels: &Levels<M::State>) -> Vec<Vec<bool>> {
    let horizon = levels.horizon();
    let mut mask: Vec<Vec<bool>> = (1..=horizon + 1).map(|h| vec![false; levels.at(h).len()]).collect();
    if let Some(i) = levels.position(1, &model.initial_state()) {
        mask[0][i] = true;
    }
    for h in 1..=horizon {
        for (i, s) in levels.at(h).iter().enumerate() {
            if !mask[h - 1][i] {
                continue;
            }
            for a in Action::all(model.num_actions()) {
                for o in model.outcomes(s, a).outcomes() {
                    if o.prob > 0.0 {
                        if let Some(j) = levels.position(h + 1, &o.next) {
                            mask[h][j] = true;
                        }
                    }
                }
            }
        }
    }
    mask
}

/// Largest violation of either Bellman display by `tables`.
pub fn bellman_residual<M: MdpModel>(model: &M, tables: &ValueTables<M::State>) -> f64 {
    let alpha = model.discount();
    let mut worst: f64 = 0.0;
    for h in 1..=tables.horizon() {
        for (i, s) in tables.levels.at(h).iter().enumerate() {
            let row = tables.q_row(h, i);
            for a in Action::all(tables.k) {
                let target = model
                    .outcomes(s, a)
                    .backup(alpha, |n| tables.v(h + 1, n).unwrap_or(f64::NAN));
                worst = worst.max((target - row[a.slot()]).abs());
            }
            let vmax = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((vmax - tables.v_at(h, i)).abs());
        }
    }
    for &x in &tables.v[tables.horizon()] {
        worst = worst.max(x.abs());
    }
    worst
}

#[derive(Clone, Debug, PartialEq)]
pub struct Realizability<S> {
    pub max_residual: f64,
    pub worst: Option<(usize, S, Action)>,
}

/// `max |q*_h(s,a) - <φ_h(s,a), θ>|` over every reachable triple.
pub fn check_realizability<M: LinearMdp>(
    model: &M,
    tables: &ValueTables<M::State>,
    theta: &[f64],
) -> Realizability<M::State> {
    let mut out = Realizability {
        max_residual: 0.0,
        worst: None,
    };
    for h in 1..=tables.horizon() {
        for (i, s) in tables.levels.at(h).iter().enumerate() {
            if !tables.is_reachable(h, i) {
                continue;
            }
            for a in Action::all(tables.k) {
                let r = (tables.q_row(h, i)[a.slot()] - dot(&model.features(h, s, a), theta)).abs();
                if out.worst.is_none() || r > out.max_residual {
                    out.max_residual = r;
                    out.worst = Some((h, s.clone(), a));
                }
            }
        }
    }
    out
}

/// Exact `v^π_h` on the level sets, `v^π_{H+1} = 0`; indexed like the
/// levels.
#[derive(Clone, Debug)]
pub struct PolicyValues {
    pub v: Vec<Vec<f64>>,
}

impl PolicyValues {
    pub fn at(&self, h: usize, i: usize) -> f64 {
        self.v[h - 1][i]
    }
}

pub fn policy_value<M: MdpModel>(
    model: &M,
    levels: &Levels<M::State>,
    policy: &StagePolicy<M::State>,
) -> Result<PolicyValues> {
    let horizon = model.horizon();
    let k = model.num_actions();
    let alpha = model.discount();
    let mut v = vec![Vec::new(); horizon + 1];
    v[horizon] = vec![0.0; levels.at(horizon + 1).len()];
    for h in (1..=horizon).rev() {
        let later = &v[h];
        let row: std::result::Result<Vec<f64>, String> = levels
            .at(h)
            .par_iter()
            .map(|s| {
                let probs = policy
                    .probs(h, s)
                    .ok_or_else(|| format!("policy undefined at stage {h}, state {s}"))?;
                let mut total = 0.0;
                for a in Action::all(k).filter(|a| probs[a.slot()] > 0.0) {
                    let mut missing = None;
                    let q = model.outcomes(s, a).backup(alpha, |n| {
                        next_value::<M>(levels, later, h, n).unwrap_or_else(|e| {
                            missing = Some(e);
                            0.0
                        })
                    });
                    if let Some(e) = missing {
                        return Err(e);
                    }
                    total += probs[a.slot()] * q;
                }
                Ok(total)
            })
            .collect();
        v[h - 1] = row.map_err(Error::Evaluation)?;
    }
    Ok(PolicyValues { v })
}

/// `δ^π = max v*_h(s) - v^π_h(s)` over reachable `s ∈ S_h`, floored at 0.
pub fn suboptimality<S: Clone + Eq + std::hash::Hash + std::fmt::Display>(
    tables: &ValueTables<S>,
    values: &PolicyValues,
) -> f64 {
    let mut worst: f64 = 0.0;
    for h in 1..=tables.horizon() {
        for i in (0..tables.levels.at(h).len()).filter(|&i| tables.is_reachable(h, i)) {
            worst = worst.max(tables.v_at(h, i) - values.at(h, i));
        }
    }
    worst
}

/// Greedy deterministic policy on `f`, ties to the lowest action.
pub fn greedy_from<S: Clone + Eq + std::hash::Hash + std::fmt::Display>(
    levels: &Levels<S>,
    k: usize,
    mut f: impl FnMut(usize, &S, Action) -> f64,
) -> StagePolicy<S> {
    StagePolicy::deterministic(levels, k, |h, s| {
        let values: Vec<f64> = Action::all(k).map(|a| f(h, s, a)).collect();
        Action::from_slot(argmax_lowest(&values))
    })
}

pub fn optimal_policy<S: Clone + Eq + std::hash::Hash + std::fmt::Display>(
    tables: &ValueTables<S>,
) -> StagePolicy<S> {
    greedy_from(&tables.levels, tables.k, |h, s, a| tables.q(h, s, a).unwrap())
}

/// Worst reachable state for transition-soundness: the largest policy mass
/// on actions whose gap is at least `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoundnessMass<S> {
    pub mass: f64,
    pub at: Option<(usize, S)>,
}

pub fn check_transition_soundness<S: Clone + Eq + std::hash::Hash + std::fmt::Display>(
    tables: &ValueTables<S>,
    policy: &StagePolicy<S>,
    delta: f64,
) -> Result<SoundnessMass<S>> {
    let mut out = SoundnessMass { mass: 0.0, at: None };
    for h in 1..=tables.horizon() {
        for (i, s) in tables.levels.at(h).iter().enumerate() {
            if !tables.is_reachable(h, i) {
                continue;
            }
            let probs = policy
                .probs(h, s)
                .ok_or_else(|| Error::Evaluation(format!("policy undefined at stage {h}, state {s}")))?;
            let v = tables.v_at(h, i);
            let mass: f64 = tables
                .q_row(h, i)
                .iter()
                .zip(probs)
                .filter(|(&q, _)| v - q >= delta)
                .map(|(_, &p)| p)
                .sum();
            if out.at.is_none() || mass > out.mass {
                out.mass = mass;
                out.at = Some((h, s.clone()));
            }
        }
    }
    Ok(out)
}

/// Outcome of checking both directions of the soundness conversion on one
/// (model, policy) pair. A direction whose premise fails holds vacuously.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop1Report {
    pub delta_pi: f64,
    /// Mass on gaps `>= delta`.
    pub mass_at_delta: f64,
    /// Mass on gaps `>= delta / zeta`.
    pub mass_at_ratio: f64,
    pub premise_i: bool,
    pub holds_i: bool,
    pub premise_ii: bool,
    pub holds_ii: bool,
}

impl Prop1Report {
    pub fn holds(&self) -> bool {
        self.holds_i && self.holds_ii
    }
}

const CHECK_TOL: f64 = 1e-9;

/// (i) mass at `delta` <= `zeta` implies `δ^π <= Hδ + H(H+1)ζ/2`;
/// (ii) `δ^π <= delta` implies mass at `delta/zeta` <= `zeta`.
pub fn prop1_check<M: MdpModel>(
    model: &M,
    tables: &ValueTables<M::State>,
    policy: &StagePolicy<M::State>,
    delta: f64,
    zeta: f64,
) -> Result<Prop1Report> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Parameter(format!("zeta = {zeta} outside (0, 1]")));
    }
    let values = policy_value(model, tables.levels(), policy)?;
    let delta_pi = suboptimality(tables, &values);
    let horizon = tables.horizon() as f64;
    let mass_at_delta = check_transition_soundness(tables, policy, delta)?.mass;
    let mass_at_ratio = check_transition_soundness(tables, policy, delta / zeta)?.mass;
    let premise_i = mass_at_delta <= zeta;
    let bound = horizon * delta + horizon * (horizon + 1.0) * zeta / 2.0;
    let premise_ii = delta_pi <= delta;
    Ok(Prop1Report {
        delta_pi,
        mass_at_delta,
        mass_at_ratio,
        premise_i,
        holds_i: !premise_i || delta_pi <= bound + CHECK_TOL,
        premise_ii,
        holds_ii: !premise_ii || mass_at_ratio <= zeta + CHECK_TOL,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma8Report {
    /// `max_h ||v*_h - v^π_h||_∞` for the `f`-greedy policy.
    pub lhs: f64,
    /// `2 Σ_h ||q*_h - f_h||_∞`.
    pub rhs: f64,
    /// `2H ||q*_1 - f_1||_∞`, the form quoted in the planner analysis.
    pub first_stage_form: f64,
    pub holds: bool,
}

/// Checks the greedy-error inequality for the policy greedy on `f`.
pub fn lemma8_check<M: MdpModel>(
    model: &M,
    tables: &ValueTables<M::State>,
    mut f: impl FnMut(usize, &M::State, Action) -> f64,
) -> Result<Lemma8Report> {
    let horizon = tables.horizon();
    let k = tables.num_actions();
    let mut f_tab: Vec<Vec<Vec<f64>>> = Vec::with_capacity(horizon);
    let mut stage_err = vec![0.0f64; horizon];
    for h in 1..=horizon {
        let rows: Vec<Vec<f64>> = tables
            .levels()
            .at(h)
            .iter()
            .map(|s| Action::all(k).map(|a| f(h, s, a)).collect())
            .collect();
        for (i, row) in rows.iter().enumerate() {
            for (q, fv) in tables.q_row(h, i).iter().zip(row) {
                stage_err[h - 1] = stage_err[h - 1].max((q - fv).abs());
            }
        }
        f_tab.push(rows);
    }
    let policy = greedy_from(tables.levels(), k, |h, s, a| {
        let i = tables.levels().position(h, s).expect("enumerated state");
        f_tab[h - 1][i][a.slot()]
    });
    let values = policy_value(model, tables.levels(), &policy)?;
    let lhs = suboptimality(tables, &values);
    let rhs = 2.0 * stage_err.iter().sum::<f64>();
    Ok(Lemma8Report {
        lhs,
        rhs,
        first_stage_form: 2.0 * horizon as f64 * stage_err[0],
        holds: lhs <= rhs + CHECK_TOL,
    })
}

/// Smallest per-step likelihood ratio between `model` and `null` over
/// actions other than `skip`, taken over outcomes the null model supports.
pub fn min_likelihood_ratio<M: MdpModel>(
    model: &M,
    null: &M,
    levels: &Levels<M::State>,
    skip: Option<Action>,
) -> f64 {
    let mut worst: f64 = 1.0;
    for h in 1..=model.horizon() {
        for s in levels.at(h) {
            for a in Action::all(model.num_actions()).filter(|&a| Some(a) != skip) {
                let law = model.outcomes(s, a);
                for o in null.outcomes(s, a).outcomes() {
                    let p: f64 = law
                        .outcomes()
                        .iter()
                        .filter(|m| m.reward == o.reward && m.next == o.next)
                        .map(|m| m.prob)
                        .sum();
                    worst = worst.min(p / o.prob);
                }
            }
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikelihoodFloor {
    pub min_ratio: f64,
    /// `min_ratio^n`.
    pub power: f64,
    /// `(1 - ε)^n` with ε the Bernoulli cap.
    pub floor: f64,
    pub holds: bool,
}

/// Per-step likelihood ratio of `M_{a*}` against `M_0` and its `n`-th power.
pub fn likelihood_floor_check(instance: &HardInstance, n: u64, cap: usize) -> Result<LikelihoodFloor> {
    let a_star = instance
        .a_star()
        .ok_or_else(|| Error::Parameter("likelihood floor needs an instance with a*".into()))?;
    let null = instance.null_model();
    let levels = enumerate_levels(instance, cap)?;
    let min_ratio = min_likelihood_ratio(instance, &null, &levels, Some(a_star));
    let eps = instance.params().bernoulli_cap();
    let exponent = n.min(i32::MAX as u64) as i32;
    Ok(LikelihoodFloor {
        min_ratio,
        power: min_ratio.powi(exponent),
        floor: (1.0 - eps).powi(exponent),
        holds: min_ratio >= 1.0 - eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hard::{HardParams, HorizonMode};
    use crate::jl::orthonormal_family;
    use crate::mdp::{RewardLaw, DEFAULT_STATE_CAP};
    use crate::mdp::StateId;
    use crate::tabular::TabularMdp;

    fn hard(h: usize, k: usize) -> HardInstance {
        let params = HardParams::custom(k + 1, h, 0.25, k, HorizonMode::FixedHorizon).unwrap();
        HardInstance::new(params, orthonormal_family(k, k, 0.25).unwrap(), Some(Action::new(1))).unwrap()
    }

    #[test]
    fn one_state_two_actions() {
        let m = TabularMdp::new(
            2,
            vec![1],
            vec![vec![vec![0, 0]]],
            vec![vec![vec![RewardLaw::Point(1.0), RewardLaw::Point(0.0)]]],
        )
        .unwrap();
        let t = solve_backward(&m, 10).unwrap();
        let s = m.initial_state();
        assert_eq!(t.v(1, &s), Some(1.0));
        assert_eq!(t.gap(1, &s, Action::new(2)), Some(1.0));
    }

    #[test]
    fn hard_instance_root_values() {
        let inst = hard(2, 3);
        let t = solve_backward(&inst, DEFAULT_STATE_CAP).unwrap();
        let root = StateId::root();
        assert!((t.q(1, &root, Action::new(1)).unwrap() - 59.0 / 108.0).abs() < 1e-15);
        for a in [2, 3] {
            assert!((t.gap(1, &root, Action::new(a)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        }
        let r = check_realizability(&inst, &t, inst.theta_star());
        assert!(r.max_residual <= 1e-12, "{r:?}");
        assert!(bellman_residual(&inst, &t) <= 1e-12);
    }

    #[test]
    fn null_model_values_vanish() {
        let m0 = hard(3, 3).null_model();
        let t = solve_backward(&m0, DEFAULT_STATE_CAP).unwrap();
        for h in 1..=4 {
            for i in 0..t.levels().at(h).len() {
                assert_eq!(t.v_at(h, i), 0.0);
            }
        }
        let uniform = StagePolicy::uniform(t.levels(), 3);
        let pv = policy_value(&m0, t.levels(), &uniform).unwrap();
        assert_eq!(suboptimality(&t, &pv), 0.0);
    }

    #[test]
    fn perturbed_theta_shows_up_in_residual() {
        let inst = hard(2, 3);
        let t = solve_backward(&inst, DEFAULT_STATE_CAP).unwrap();
        let mut theta = inst.theta_star().to_vec();
        theta[0] += 1e-3;
        let r = check_realizability(&inst, &t, &theta);
        let c1 = inst.params().c(1);
        assert!((r.max_residual - 1e-3 * c1).abs() < 1e-12);
        let (h, s, _) = r.worst.unwrap();
        assert_eq!((h, s), (1, StateId::root()));
    }

    #[test]
    fn greedy_on_optimal_is_optimal() {
        let inst = hard(3, 3);
        let t = solve_backward(&inst, DEFAULT_STATE_CAP).unwrap();
        let pi = optimal_policy(&t);
        let pv = policy_value(&inst, t.levels(), &pi).unwrap();
        assert!(suboptimality(&t, &pv) <= 1e-15);
        assert_eq!(check_transition_soundness(&t, &pi, 1e-9).unwrap().mass, 0.0);
    }

    #[test]
    fn avoiding_a_star_costs_a_quarter() {
        let inst = hard(2, 3);
        let t = solve_backward(&inst, DEFAULT_STATE_CAP).unwrap();
        let pi = greedy_from(t.levels(), 3, |_, _, a| if a == Action::new(1) { -1.0 } else { 0.0 });
        let pv = policy_value(&inst, t.levels(), &pi).unwrap();
        assert!(suboptimality(&t, &pv) >= 0.25);
    }

    #[test]
    fn uniform_mass_on_single_bad_action() {
        // one action with gap 1 per state, k = 4
        let rewards = vec![vec![vec![
            RewardLaw::Point(1.0),
            RewardLaw::Point(1.0),
            RewardLaw::Point(1.0),
            RewardLaw::Point(0.0),
        ]]];
        let m = TabularMdp::new(4, vec![1], vec![vec![vec![0; 4]]], rewards).unwrap();
        let t = solve_backward(&m, 10).unwrap();
        let pi = StagePolicy::uniform(t.levels(), 4);
        assert_eq!(check_transition_soundness(&t, &pi, 0.5).unwrap().mass, 0.25);
        assert_eq!(check_transition_soundness(&t, &pi, 2.0).unwrap().mass, 0.0);
    }

    #[test]
    fn lemma8_with_reversed_f_on_hard_instance() {
        let inst = hard(2, 3);
        let t = solve_backward(&inst, DEFAULT_STATE_CAP).unwrap();
        let rep = lemma8_check(&inst, &t, |h, s, a| -t.q(h, s, a).unwrap()).unwrap();
        assert!(rep.holds);
        assert!(rep.lhs > 0.0);
        let exact = lemma8_check(&inst, &t, |h, s, a| t.q(h, s, a).unwrap()).unwrap();
        assert_eq!(exact.lhs, 0.0);
    }

    #[test]
    fn likelihood_ratios() {
        let inst = hard(2, 3);
        let lf = likelihood_floor_check(&inst, 1, DEFAULT_STATE_CAP).unwrap();
        let eps = inst.params().epsilon();
        assert!((lf.min_ratio - (1.0 - eps / 2.0)).abs() < 1e-15);
        assert!(lf.holds);
        // off the leaves M_{a*} and M_0 agree outside a*
        let null = inst.null_model();
        for a in [2, 3] {
            let a = Action::new(a);
            assert_eq!(inst.outcomes(&StateId::root(), a), null.outcomes(&StateId::root(), a));
        }
    }

    #[test]
    fn cap_is_enforced_by_stage() {
        let inst = hard(3, 5);
        match solve_backward(&inst, 10) {
            Err(Error::Size { stage, count, cap }) => assert_eq!((stage, count, cap), (3, 21, 10)),
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn csv_rows() {
        let inst = hard(1, 2);
        let t = solve_backward(&inst, 10).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "h,state,action,q,v,gap");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,root,1,"));
    }
}
