//! Small explicit stage-structured MDPs, mainly as randomized test beds for
//! the structural checks.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{Action, Levels, LinearMdp, MdpModel, OutcomeLaw, RewardLaw, StagePolicy};

/// State `index` of level `level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TabState {
    pub level: usize,
    pub index: usize,
}

impl fmt::Display for TabState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.index)
    }
}

/// A layered MDP with deterministic transitions and a finite reward law per
/// state-action pair. Level `H + 1` holds a single terminal state.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    k: usize,
    sizes: Vec<usize>,
    next: Vec<Vec<Vec<usize>>>,
    rewards: Vec<Vec<Vec<RewardLaw>>>,
    discount: f64,
}

impl TabularMdp {
    /// `sizes[h-1] = |S_h|` for `h = 1..=H`; `next[h-1][i][a]` indexes
    /// `S_{h+1}`, `rewards[h-1][i][a]` is the reward law.
    pub fn new(
        k: usize,
        sizes: Vec<usize>,
        next: Vec<Vec<Vec<usize>>>,
        rewards: Vec<Vec<Vec<RewardLaw>>>,
    ) -> Result<Self> {
        let horizon = sizes.len();
        if horizon == 0 || k == 0 || sizes[0] != 1 || sizes.contains(&0) {
            return Err(Error::Parameter("need H >= 1, k >= 1, |S_1| = 1, nonempty levels".into()));
        }
        let mut all_sizes = sizes;
        all_sizes.push(1);
        for h in 0..horizon {
            let n = all_sizes[h];
            let shape_ok = next.get(h).is_some_and(|l| l.len() == n && l.iter().all(|r| r.len() == k))
                && rewards.get(h).is_some_and(|l| l.len() == n && l.iter().all(|r| r.len() == k));
            if !shape_ok {
                return Err(Error::Parameter(format!("tables at stage {} have the wrong shape", h + 1)));
            }
            if next[h].iter().flatten().any(|&j| j >= all_sizes[h + 1]) {
                return Err(Error::Parameter(format!("transition out of range at stage {}", h + 1)));
            }
        }
        Ok(TabularMdp {
            k,
            sizes: all_sizes,
            next,
            rewards,
            discount: 1.0,
        })
    }

    /// Random layered MDP: `|S_h|` uniform on `1..=max_states` for
    /// `2 <= h <= H`, uniform deterministic transitions, point rewards
    /// uniform on `{0, 0.1, ..., 1}`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, horizon: usize, k: usize, max_states: usize) -> Self {
        let mut sizes = vec![1];
        sizes.extend((1..horizon).map(|_| rng.gen_range(1..=max_states)));
        sizes.push(1);
        let mut next = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        for h in 0..horizon {
            next.push(
                (0..sizes[h])
                    .map(|_| (0..k).map(|_| rng.gen_range(0..sizes[h + 1])).collect())
                    .collect(),
            );
            rewards.push(
                (0..sizes[h])
                    .map(|_| {
                        (0..k)
                            .map(|_| RewardLaw::Point(rng.gen_range(0..=10) as f64 / 10.0))
                            .collect()
                    })
                    .collect(),
            );
        }
        TabularMdp {
            k,
            sizes,
            next,
            rewards,
            discount: 1.0,
        }
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn size(&self, h: usize) -> usize {
        self.sizes[h - 1]
    }

    fn max_width(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(1)
    }
}

impl MdpModel for TabularMdp {
    type State = TabState;

    fn horizon(&self) -> usize {
        self.sizes.len() - 1
    }

    fn num_actions(&self) -> usize {
        self.k
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn initial_state(&self) -> TabState {
        TabState { level: 1, index: 0 }
    }

    fn level(&self, s: &TabState) -> usize {
        s.level
    }

    fn is_valid_state(&self, s: &TabState) -> bool {
        s.level >= 1 && s.level <= self.sizes.len() && s.index < self.sizes[s.level - 1]
    }

    fn outcomes(&self, s: &TabState, a: Action) -> OutcomeLaw<TabState> {
        let (h, i) = (s.level - 1, s.index);
        let next = TabState {
            level: s.level + 1,
            index: self.next[h][i][a.slot()],
        };
        OutcomeLaw::with_reward(self.rewards[h][i][a.slot()], next)
    }

    fn level_states(&self, h: usize) -> Option<Vec<TabState>> {
        Some((0..self.sizes[h - 1]).map(|index| TabState { level: h, index }).collect())
    }

    fn level_count(&self, h: usize) -> Option<usize> {
        Some(self.sizes[h - 1])
    }
}

/// One-hot features over (state index, action); every q-function is
/// realizable.
impl LinearMdp for TabularMdp {
    fn feature_dim(&self) -> usize {
        self.max_width() * self.k
    }

    fn features(&self, h: usize, s: &TabState, a: Action) -> Vec<f64> {
        let mut phi = vec![0.0; self.feature_dim()];
        if h <= self.horizon() && s.level == h {
            phi[s.index * self.k + a.slot()] = 1.0;
        }
        phi
    }
}

/// Random stochastic policy; about a third of the states get a
/// deterministic action.
pub fn random_policy<R: Rng + ?Sized>(
    levels: &Levels<TabState>,
    k: usize,
    rng: &mut R,
) -> StagePolicy<TabState> {
    let mut policy = StagePolicy::new(levels.horizon(), k);
    for h in 1..=levels.horizon() {
        for s in levels.at(h) {
            if rng.gen_bool(1.0 / 3.0) {
                policy.set_action(h, *s, Action::from_slot(rng.gen_range(0..k)));
                continue;
            }
            let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let head: f64 = probs[..k - 1].iter().sum();
            probs[k - 1] = (1.0 - head).max(0.0);
            policy.set(h, *s, probs).expect("normalized");
        }
    }
    policy
}
