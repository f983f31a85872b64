//! Stage-structured MDPs, the generative-model query protocol and episodes.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::Hash;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, ProtocolError, Result};
use crate::rng::Stream;

/// An action, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(u32);

impl Action {
    pub fn new(index: usize) -> Self {
        assert!(index >= 1, "actions are numbered from 1");
        Action(index as u32)
    }

    pub fn checked(index: usize, k: usize) -> std::result::Result<Self, ProtocolError> {
        if index == 0 || index > k {
            return Err(ProtocolError::InvalidAction { index, k });
        }
        Ok(Action(index as u32))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Zero-based position, for indexing per-action arrays.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_slot(slot: usize) -> Self {
        Action(slot as u32 + 1)
    }

    pub fn all(k: usize) -> impl Iterator<Item = Action> {
        (1..=k).map(Action::new)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A node of the construction tree: a sequence of pairwise distinct actions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TreeState(Vec<Action>);

impl TreeState {
    pub fn root() -> Self {
        TreeState(Vec::new())
    }

    pub fn new(actions: Vec<Action>) -> Result<Self> {
        let distinct: BTreeSet<_> = actions.iter().collect();
        if distinct.len() != actions.len() {
            return Err(Error::Parameter(format!(
                "tree state {:?} repeats an action",
                actions.iter().map(|a| a.index()).collect::<Vec<_>>()
            )));
        }
        Ok(TreeState(actions))
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, a: Action) -> bool {
        self.0.contains(&a)
    }

    /// `self` followed by `a`, or `None` if `a` already occurs.
    pub fn child(&self, a: Action) -> Option<TreeState> {
        if self.contains(a) {
            return None;
        }
        let mut v = self.0.clone();
        v.push(a);
        Some(TreeState(v))
    }

    pub fn split_last(&self) -> Option<(TreeState, Action)> {
        let (&last, prefix) = self.0.split_last()?;
        Some((TreeState(prefix.to_vec()), last))
    }

    pub fn map_actions(&self, f: impl Fn(Action) -> Action) -> TreeState {
        TreeState(self.0.iter().map(|&a| f(a)).collect())
    }
}

impl fmt::Display for TreeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "root");
        }
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// State of the tree-structured families: a tree node or the game-over
/// state `f_h` of level `h`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateId {
    Tree(TreeState),
    GameOver(usize),
}

impl StateId {
    pub fn root() -> Self {
        StateId::Tree(TreeState::root())
    }

    pub fn tree(actions: &[usize]) -> Result<Self> {
        Ok(StateId::Tree(TreeState::new(
            actions.iter().map(|&i| Action::new(i)).collect(),
        )?))
    }

    pub fn level(&self) -> usize {
        match self {
            StateId::Tree(t) => t.len() + 1,
            StateId::GameOver(h) => *h,
        }
    }

    pub fn is_game_over(&self) -> bool {
        matches!(self, StateId::GameOver(_))
    }

    pub fn as_tree(&self) -> Option<&TreeState> {
        match self {
            StateId::Tree(t) => Some(t),
            StateId::GameOver(_) => None,
        }
    }

    /// Parses the canonical form written by `Display` (`root`, `f3`, `2.5.1`).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "root" {
            return Ok(StateId::root());
        }
        if let Some(level) = text.strip_prefix('f') {
            let h = level
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad game-over state {text:?}")))?;
            return Ok(StateId::GameOver(h));
        }
        let actions = text
            .split('.')
            .map(|p| match p.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i),
                _ => Err(Error::Parse(format!("bad tree state {text:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        StateId::tree(&actions)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateId::Tree(t) => write!(f, "{t}"),
            StateId::GameOver(h) => write!(f, "f{h}"),
        }
    }
}

/// Finite reward distributions used by the constructions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardLaw {
    Point(f64),
    Bernoulli(f64),
}

impl RewardLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            RewardLaw::Point(r) => r,
            RewardLaw::Bernoulli(p) => p,
        }
    }

    /// Atoms with positive probability, as `(value, probability)`.
    pub fn support(&self) -> Vec<(f64, f64)> {
        match *self {
            RewardLaw::Point(r) => vec![(r, 1.0)],
            RewardLaw::Bernoulli(p) => [(1.0, p), (0.0, 1.0 - p)]
                .into_iter()
                .filter(|&(_, q)| q > 0.0)
                .collect(),
        }
    }

    pub fn prob(&self, value: f64) -> f64 {
        self.support()
            .iter()
            .filter(|&&(v, _)| v == value)
            .map(|&(_, p)| p)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome<S> {
    pub reward: f64,
    pub next: S,
    pub prob: f64,
}

/// Joint finite law of `(reward, next state)` for one state-action pair.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeLaw<S> {
    outcomes: Vec<Outcome<S>>,
}

impl<S: Clone> OutcomeLaw<S> {
    pub fn new(outcomes: Vec<Outcome<S>>) -> Self {
        let outcomes: Vec<_> = outcomes.into_iter().filter(|o| o.prob > 0.0).collect();
        debug_assert!(!outcomes.is_empty());
        debug_assert!((outcomes.iter().map(|o| o.prob).sum::<f64>() - 1.0).abs() < 1e-9);
        OutcomeLaw { outcomes }
    }

    pub fn deterministic(reward: f64, next: S) -> Self {
        Self::new(vec![Outcome {
            reward,
            next,
            prob: 1.0,
        }])
    }

    /// Reward drawn from `law` independently of a deterministic next state.
    pub fn with_reward(law: RewardLaw, next: S) -> Self {
        Self::new(
            law.support()
                .into_iter()
                .map(|(reward, prob)| Outcome {
                    reward,
                    next: next.clone(),
                    prob,
                })
                .collect(),
        )
    }

    pub fn outcomes(&self) -> &[Outcome<S>] {
        &self.outcomes
    }

    pub fn expected_reward(&self) -> f64 {
        self.outcomes.iter().map(|o| o.prob * o.reward).sum()
    }

    /// `E[reward + discount * value(next)]`.
    pub fn backup(&self, discount: f64, mut value: impl FnMut(&S) -> f64) -> f64 {
        self.outcomes
            .iter()
            .map(|o| o.prob * (o.reward + discount * value(&o.next)))
            .sum()
    }

    /// Marginal law of the reward, merged over next states.
    pub fn reward_marginal(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for o in &self.outcomes {
            match out.iter_mut().find(|(r, _)| *r == o.reward) {
                Some(slot) => slot.1 += o.prob,
                None => out.push((o.reward, o.prob)),
            }
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, S) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for o in &self.outcomes {
            acc += o.prob;
            if u < acc {
                return (o.reward, o.next.clone());
            }
        }
        let last = self.outcomes.last().expect("non-empty law");
        (last.reward, last.next.clone())
    }

    /// Outcome counts of `n` independent draws (a multinomial sample, drawn
    /// as a chain of conditional binomials).
    pub fn sample_counts<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> Vec<u64> {
        let mut counts = vec![0; self.outcomes.len()];
        let mut remaining = n;
        let mut mass = 1.0;
        let last = self.outcomes.len() - 1;
        for (i, o) in self.outcomes.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            if i == last {
                counts[i] = remaining;
                break;
            }
            let p = (o.prob / mass).clamp(0.0, 1.0);
            let c = Binomial::new(remaining, p)
                .expect("probability clamped to [0,1]")
                .sample(rng);
            counts[i] = c;
            remaining -= c;
            mass -= o.prob;
        }
        counts
    }
}

/// A finite-horizon MDP whose states carry their stage.
pub trait MdpModel: Sync {
    type State: Clone + Eq + Hash + Ord + fmt::Debug + fmt::Display + Send + Sync;

    fn horizon(&self) -> usize;
    fn num_actions(&self) -> usize;

    /// Discount applied to the next-stage value; 1 for the fixed-horizon case.
    fn discount(&self) -> f64 {
        1.0
    }

    fn initial_state(&self) -> Self::State;
    fn level(&self, s: &Self::State) -> usize;
    fn is_valid_state(&self, s: &Self::State) -> bool;

    /// Joint law of reward and next state. Callers guarantee `level(s) <= H`
    /// and a valid action.
    fn outcomes(&self, s: &Self::State, a: Action) -> OutcomeLaw<Self::State>;

    /// The level set `S_h`, when the model knows it in closed form.
    fn level_states(&self, _h: usize) -> Option<Vec<Self::State>> {
        None
    }

    /// `|S_h|` when known without enumeration.
    fn level_count(&self, _h: usize) -> Option<usize> {
        None
    }
}

/// An MDP paired with a stage-indexed feature map `φ_h(s, a) ∈ R^d`.
pub trait LinearMdp: MdpModel {
    fn feature_dim(&self) -> usize;
    fn features(&self, h: usize, s: &Self::State, a: Action) -> Vec<f64>;
}

/// Level sets `S_1, ..., S_{H+1}` with position lookup.
#[derive(Clone, Debug)]
pub struct Levels<S> {
    states: Vec<Vec<S>>,
    index: Vec<HashMap<S, usize>>,
}

impl<S: Clone + Eq + Hash> Levels<S> {
    pub fn from_sets(states: Vec<Vec<S>>) -> Self {
        let index = states
            .iter()
            .map(|level| level.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect())
            .collect();
        Levels { states, index }
    }

    /// Number of stages H (the sets cover levels 1..=H+1).
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn at(&self, h: usize) -> &[S] {
        &self.states[h - 1]
    }

    pub fn position(&self, h: usize, s: &S) -> Option<usize> {
        self.index.get(h - 1)?.get(s).copied()
    }

    pub fn total(&self) -> usize {
        self.states.iter().map(Vec::len).sum()
    }
}

pub const DEFAULT_STATE_CAP: usize = 2_000_000;

/// `S_h`: closed form when the model provides it, forward search otherwise.
pub fn reachable_states<M: MdpModel>(model: &M, h: usize) -> Vec<M::State> {
    assert!(h >= 1 && h <= model.horizon() + 1, "stage {h} out of range");
    if let Some(states) = model.level_states(h) {
        return states;
    }
    let mut frontier = vec![model.initial_state()];
    for _ in 1..h {
        frontier = successors(model, &frontier);
    }
    frontier
}

fn successors<M: MdpModel>(model: &M, level: &[M::State]) -> Vec<M::State> {
    let mut next = BTreeSet::new();
    for s in level {
        for a in Action::all(model.num_actions()) {
            for o in model.outcomes(s, a).outcomes() {
                next.insert(o.next.clone());
            }
        }
    }
    next.into_iter().collect()
}

/// All level sets, failing with a size error when a stage exceeds `cap`.
pub fn enumerate_levels<M: MdpModel>(model: &M, cap: usize) -> Result<Levels<M::State>> {
    let horizon = model.horizon();
    let mut sets: Vec<Vec<M::State>> = Vec::with_capacity(horizon + 1);
    for h in 1..=horizon + 1 {
        if let Some(count) = model.level_count(h) {
            if count > cap {
                return Err(Error::Size { stage: h, count, cap });
            }
        }
        let level = match model.level_states(h) {
            Some(states) => states,
            None if h == 1 => vec![model.initial_state()],
            None => successors(model, &sets[h - 2]),
        };
        if level.len() > cap {
            return Err(Error::Size {
                stage: h,
                count: level.len(),
                cap,
            });
        }
        sets.push(level);
    }
    Ok(Levels::from_sets(sets))
}

/// Counts simulator queries. Only ever incremented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryMeter {
    count: u64,
}

impl QueryMeter {
    pub fn count(&self) -> u64 {
        self.count
    }

    fn record(&mut self, n: u64) {
        self.count += n;
    }
}

/// Aggregated answers to `n` identical queries.
#[derive(Clone, Debug)]
pub struct SampleBatch<S> {
    pub outcomes: Vec<(f64, S, u64)>,
    pub total: u64,
}

impl<S> SampleBatch<S> {
    /// Empirical mean of `f(reward, next)` over the batch.
    pub fn mean(&self, mut f: impl FnMut(f64, &S) -> f64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .outcomes
            .iter()
            .map(|(r, s, c)| *c as f64 * f(*r, s))
            .sum();
        sum / self.total as f64
    }
}

/// Generative-model access to a model: answers `(s, a)` queries with a
/// sampled `(reward, next)` and meters every query.
pub struct Simulator<'m, M: MdpModel> {
    model: &'m M,
    meter: QueryMeter,
    rng: Stream,
    budget: Option<u64>,
    log: Option<Vec<Action>>,
}

impl<'m, M: MdpModel> Simulator<'m, M> {
    pub fn new(model: &'m M, rng: Stream) -> Self {
        Simulator {
            model,
            meter: QueryMeter::default(),
            rng,
            budget: None,
            log: None,
        }
    }

    /// Refuse queries beyond `budget` with [`ProtocolError::BudgetExhausted`].
    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Keep the sequence of queried actions.
    pub fn with_action_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn model(&self) -> &'m M {
        self.model
    }

    pub fn meter(&self) -> QueryMeter {
        self.meter
    }

    pub fn action_log(&self) -> Option<&[Action]> {
        self.log.as_deref()
    }

    fn validate(&self, s: &M::State, a: Action) -> std::result::Result<(), ProtocolError> {
        let k = self.model.num_actions();
        if a.index() > k {
            return Err(ProtocolError::InvalidAction { index: a.index(), k });
        }
        if !self.model.is_valid_state(s) {
            return Err(ProtocolError::InvalidState(s.to_string()));
        }
        let level = self.model.level(s);
        let horizon = self.model.horizon();
        if level > horizon {
            return Err(ProtocolError::BeyondHorizon {
                state: s.to_string(),
                level,
                horizon,
            });
        }
        Ok(())
    }

    /// Reserve up to `n` queries; returns how many fit in the budget.
    fn reserve(&mut self, a: Action, n: u64) -> u64 {
        let allowed = match self.budget {
            Some(b) => n.min(b.saturating_sub(self.meter.count())),
            None => n,
        };
        self.meter.record(allowed);
        if let Some(log) = self.log.as_mut() {
            log.extend(std::iter::repeat_n(a, allowed as usize));
        }
        allowed
    }

    pub fn query(
        &mut self,
        s: &M::State,
        a: Action,
    ) -> std::result::Result<(f64, M::State), ProtocolError> {
        self.validate(s, a)?;
        if self.reserve(a, 1) < 1 {
            return Err(ProtocolError::BudgetExhausted {
                budget: self.budget.unwrap_or_default(),
            });
        }
        Ok(self.model.outcomes(s, a).sample(&mut self.rng))
    }

    /// `n` independent queries at the same pair, returned as outcome
    /// counts. Metered as `n` queries. If the budget runs out part-way the
    /// queries that fit are metered and the call fails.
    pub fn query_batch(
        &mut self,
        s: &M::State,
        a: Action,
        n: u64,
    ) -> std::result::Result<SampleBatch<M::State>, ProtocolError> {
        self.validate(s, a)?;
        if self.reserve(a, n) < n {
            return Err(ProtocolError::BudgetExhausted {
                budget: self.budget.unwrap_or_default(),
            });
        }
        let law = self.model.outcomes(s, a);
        let counts = law.sample_counts(n, &mut self.rng);
        let outcomes = law
            .outcomes()
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c > 0)
            .map(|(o, c)| (o.reward, o.next.clone(), c))
            .collect();
        Ok(SampleBatch { outcomes, total: n })
    }
}

/// A memoryless stage policy, tabulated over the states it is defined on.
#[derive(Clone, Debug)]
pub struct StagePolicy<S> {
    k: usize,
    stages: Vec<HashMap<S, Vec<f64>>>,
}

impl<S: Clone + Eq + Hash + fmt::Display> StagePolicy<S> {
    pub fn new(horizon: usize, k: usize) -> Self {
        StagePolicy {
            k,
            stages: vec![HashMap::new(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn num_actions(&self) -> usize {
        self.k
    }

    pub fn set(&mut self, h: usize, s: S, probs: Vec<f64>) -> Result<()> {
        if probs.len() != self.k {
            return Err(Error::Parameter(format!(
                "policy at ({h}, {s}) has {} entries for {} actions",
                probs.len(),
                self.k
            )));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!(
                "policy at ({h}, {s}) is not a probability vector (sum {total})"
            )));
        }
        self.stages[h - 1].insert(s, probs);
        Ok(())
    }

    pub fn set_action(&mut self, h: usize, s: S, a: Action) {
        let mut probs = vec![0.0; self.k];
        probs[a.slot()] = 1.0;
        self.stages[h - 1].insert(s, probs);
    }

    pub fn probs(&self, h: usize, s: &S) -> Option<&[f64]> {
        self.stages.get(h - 1)?.get(s).map(Vec::as_slice)
    }

    /// Policy tabulated on every state of `levels` from `f(h, s)`.
    pub fn from_fn(
        levels: &Levels<S>,
        k: usize,
        mut f: impl FnMut(usize, &S) -> Vec<f64>,
    ) -> Result<Self> {
        let horizon = levels.horizon();
        let mut policy = StagePolicy::new(horizon, k);
        for h in 1..=horizon {
            for s in levels.at(h) {
                policy.set(h, s.clone(), f(h, s))?;
            }
        }
        Ok(policy)
    }

    pub fn deterministic(
        levels: &Levels<S>,
        k: usize,
        mut f: impl FnMut(usize, &S) -> Action,
    ) -> Self {
        let horizon = levels.horizon();
        let mut policy = StagePolicy::new(horizon, k);
        for h in 1..=horizon {
            for s in levels.at(h) {
                policy.set_action(h, s.clone(), f(h, s));
            }
        }
        policy
    }

    pub fn uniform(levels: &Levels<S>, k: usize) -> Self {
        StagePolicy::from_fn(levels, k, |_, _| vec![1.0 / k as f64; k])
            .expect("uniform vector is a distribution")
    }
}

/// Index of the maximum, ties to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Action {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::from_slot(i);
        }
    }
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    Action::from_slot(last)
}

#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub states: Vec<S>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl<S> Trajectory<S> {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn discounted_return(&self, discount: f64) -> f64 {
        self.rewards
            .iter()
            .rev()
            .fold(0.0, |acc, r| r + discount * acc)
    }
}

/// One episode of exactly H transitions from the initial state.
pub fn run_policy<M: MdpModel, R: Rng + ?Sized>(
    model: &M,
    policy: &StagePolicy<M::State>,
    rng: &mut R,
) -> Result<Trajectory<M::State>> {
    let horizon = model.horizon();
    let mut s = model.initial_state();
    let mut traj = Trajectory {
        states: vec![s.clone()],
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
    };
    for h in 1..=horizon {
        let probs = policy
            .probs(h, &s)
            .ok_or_else(|| Error::Evaluation(format!("policy undefined at stage {h}, state {s}")))?;
        let a = sample_action(probs, rng);
        let (r, next) = model.outcomes(&s, a).sample(rng);
        traj.actions.push(a);
        traj.rewards.push(r);
        traj.states.push(next.clone());
        s = next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn tree_state_rejects_repeats() {
        assert!(StateId::tree(&[1, 2, 1]).is_err());
        assert!(StateId::tree(&[3, 1, 2]).is_ok());
    }

    #[test]
    fn levels_follow_sequence_length() {
        assert_eq!(StateId::root().level(), 1);
        assert_eq!(StateId::tree(&[2, 5]).unwrap().level(), 3);
        assert_eq!(StateId::GameOver(4).level(), 4);
    }

    #[test]
    fn canonical_strings_parse_back() {
        for s in [
            StateId::root(),
            StateId::GameOver(3),
            StateId::tree(&[2, 5, 1]).unwrap(),
        ] {
            assert_eq!(StateId::parse(&s.to_string()).unwrap(), s);
        }
        assert_eq!(StateId::tree(&[2, 5, 1]).unwrap().to_string(), "2.5.1");
        assert_eq!(StateId::GameOver(3).to_string(), "f3");
        assert!(StateId::parse("1.1").is_err());
        assert!(StateId::parse("fx").is_err());
    }

    #[test]
    fn action_bounds() {
        assert!(Action::checked(0, 3).is_err());
        assert!(Action::checked(4, 3).is_err());
        assert_eq!(Action::checked(3, 3).unwrap().slot(), 2);
    }

    #[test]
    fn bernoulli_support_drops_null_atoms() {
        assert_eq!(RewardLaw::Bernoulli(0.0).support(), vec![(0.0, 1.0)]);
        assert_eq!(RewardLaw::Bernoulli(0.25).prob(0.0), 0.75);
    }

    #[test]
    fn sample_counts_sum_to_n() {
        let law = OutcomeLaw::new(vec![
            Outcome { reward: 1.0, next: 0u8, prob: 0.2 },
            Outcome { reward: 0.0, next: 1u8, prob: 0.5 },
            Outcome { reward: 0.5, next: 2u8, prob: 0.3 },
        ]);
        let mut rng = stream(3, 0);
        let counts = law.sample_counts(100_000, &mut rng);
        assert_eq!(counts.iter().sum::<u64>(), 100_000);
        for (c, p) in counts.iter().zip([0.2f64, 0.5, 0.3]) {
            let sd = (100_000.0 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - 100_000.0 * p).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax_lowest(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn policy_rejects_non_distributions() {
        let mut p: StagePolicy<u8> = StagePolicy::new(1, 2);
        assert!(p.set(1, 0, vec![0.6, 0.6]).is_err());
        assert!(p.set(1, 0, vec![-0.5, 1.5]).is_err());
        assert!(p.set(1, 0, vec![0.5, 0.5]).is_ok());
    }
}
