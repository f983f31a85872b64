//! The hard q*-realizable family `M_{a*,ε}`, the action-symmetric null
//! model `M_0`, their shared feature map and the discounted variant.
//!
//! States are tree nodes (duplicate-free action sequences) plus the
//! game-over chain `f_2, ..., f_{H+1}`. Writing `x = (1-γ)/(2γ)`:
//!
//! * `c_h = 1/2 + (1+γ)/2 · Σ_{l=1}^{H-h} x^l`
//! * `φ_h(s,a) = (c_h, x^{H-h+1} σ_{s,a} v_a)` for a tree state `s ∌ a`, else `0`
//! * `σ_{⊥,a} = 1`, `σ_{sa,a'} = σ_{s,a} x <v_a, v_a'> + (1+γ)/2`
//! * `θ* = ε (1, v_{a*})`, `ε = x^{-H} / 3`
//!
//! Playing `a*` or a repeated action leaves the tree for the game-over
//! chain. The only random rewards are Bernoulli draws at the leaves.

use std::collections::HashMap;
use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::jl::{dot, verify_family, VectorFamily};
use crate::mdp::{Action, LinearMdp, MdpModel, OutcomeLaw, RewardLaw, StateId, TreeState};

const TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HorizonMode {
    FixedHorizon,
    /// Discounted variant; `alpha` in `[2/3, 1)`.
    Discounted { alpha: f64 },
}

impl HorizonMode {
    pub fn alpha(&self) -> f64 {
        match *self {
            HorizonMode::FixedHorizon => 1.0,
            HorizonMode::Discounted { alpha } => alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        if let HorizonMode::Discounted { alpha } = *self {
            if !(2.0 / 3.0 - TOL..1.0).contains(&alpha) {
                return Err(Error::Parameter(format!(
                    "discount alpha = {alpha} outside [2/3, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Upper end of the admissible η range, `1/2 - 2/log2(d-1)`.
pub fn eta_upper_bound(d: usize) -> f64 {
    0.5 - 2.0 / ((d - 1) as f64).log2()
}

/// Parameters of the construction. Built through [`HardParams::derive`]
/// (paper parameterization) or [`HardParams::custom`] (desk scale).
#[derive(Clone, Debug, PartialEq)]
pub struct HardParams {
    d: usize,
    horizon: usize,
    eta: Option<f64>,
    gamma: f64,
    k: usize,
    epsilon: f64,
    x: f64,
    mode: HorizonMode,
}

impl HardParams {
    /// `γ = (d-1)^{-1/2+η}`, `k = ⌊exp((d-1)^{2η}/8)⌋`, `ε = x^{-H}/3`.
    pub fn derive(d: usize, horizon: usize, eta: f64, mode: HorizonMode) -> Result<Self> {
        if d < 18 {
            return Err(Error::Parameter(format!(
                "d = {d} below 18 (use the desk-scale constructor for small d)"
            )));
        }
        let upper = eta_upper_bound(d);
        if !(eta > 0.0 && eta <= upper + TOL) {
            return Err(Error::Parameter(format!(
                "eta = {eta} violates 0 < eta <= 1/2 - 2/log2(d-1) = {upper}"
            )));
        }
        let d1 = (d - 1) as f64;
        let gamma = d1.powf(eta - 0.5);
        let k = (d1.powf(2.0 * eta) / 8.0).exp().floor();
        if !(k.is_finite() && k <= u32::MAX as f64) {
            return Err(Error::Parameter(format!("k = {k:e} is too large to represent")));
        }
        Self::assemble(d, horizon, Some(eta), gamma, k as usize, mode)
    }

    /// Desk-scale parameters: any `d >= 2`, an explicit `γ <= 1/4` and `k`.
    pub fn custom(d: usize, horizon: usize, gamma: f64, k: usize, mode: HorizonMode) -> Result<Self> {
        if d < 2 {
            return Err(Error::Parameter(format!("d = {d} below 2")));
        }
        Self::assemble(d, horizon, None, gamma, k, mode)
    }

    fn assemble(
        d: usize,
        horizon: usize,
        eta: Option<f64>,
        gamma: f64,
        k: usize,
        mode: HorizonMode,
    ) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Parameter("horizon H must be at least 1".into()));
        }
        if k < 1 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if !(gamma > 0.0 && gamma <= 0.25 + TOL) {
            return Err(Error::Parameter(format!("gamma = {gamma} outside (0, 1/4]")));
        }
        mode.validate()?;
        let x = (1.0 - gamma) / (2.0 * gamma);
        if x < 1.5 - TOL {
            return Err(Error::Parameter(format!("(1-gamma)/(2 gamma) = {x} below 3/2")));
        }
        let epsilon = x.powi(-(horizon as i32)) / 3.0;
        let params = HardParams {
            d,
            horizon,
            eta,
            gamma,
            k,
            epsilon,
            x,
            mode,
        };
        let total: f64 = (0..=horizon).map(|l| x.powi(l as i32)).sum::<f64>() * epsilon;
        debug_assert!(total <= 1.0 + TOL, "epsilon too large: {total}");
        Ok(params)
    }

    /// Replace ε by a smaller value.
    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= self.epsilon * (1.0 + TOL)) {
            return Err(Error::Parameter(format!(
                "epsilon may only be lowered: {epsilon} vs derived {}",
                self.epsilon
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Replace `k` by the size of a checked family; the construction only
    /// uses unit norms and overlaps at most γ.
    pub fn override_k(&self, k: usize, family: &VectorFamily) -> Result<Self> {
        if family.len() != k {
            return Err(Error::Parameter(format!(
                "family has {} vectors, expected k = {k}",
                family.len()
            )));
        }
        if family.dim() != self.d - 1 {
            return Err(Error::Parameter(format!(
                "family dimension {} differs from d - 1 = {}",
                family.dim(),
                self.d - 1
            )));
        }
        let report = verify_family(family);
        if !report.passes(self.gamma) {
            return Err(Error::Parameter(format!(
                "family rejected: max overlap {:.6} (gamma {}), norm deviation {:e}",
                report.max_overlap, self.gamma, report.max_norm_dev
            )));
        }
        let mut p = self.clone();
        p.k = k;
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn eta(&self) -> Option<f64> {
        self.eta
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    /// `(1-γ)/(2γ)`.
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn mode(&self) -> HorizonMode {
        self.mode
    }
    pub fn alpha(&self) -> f64 {
        self.mode.alpha()
    }

    /// ε with the paper's value, i.e. not lowered.
    pub fn epsilon_is_derived(&self) -> bool {
        (self.epsilon - self.x.powi(-(self.horizon as i32)) / 3.0).abs() <= TOL * self.epsilon
    }

    /// Upper bound on leaf Bernoulli means: ε, times `α^{-H+1}` when discounted.
    pub fn bernoulli_cap(&self) -> f64 {
        self.epsilon * self.alpha().powi(1 - self.horizon as i32)
    }

    /// Bias coordinate `c_h`.
    pub fn c(&self, h: usize) -> f64 {
        assert!(h >= 1 && h <= self.horizon, "c_h defined for 1 <= h <= H");
        let tail: f64 = (1..=self.horizon - h).map(|l| self.x.powi(l as i32)).sum();
        0.5 + 0.5 * (1.0 + self.gamma) * tail
    }

    /// Query budget at which identification stays hard:
    /// `⌊min(k/4, (1/ε - 1)/3.5)⌋`, with ε the Bernoulli cap.
    pub fn n_choice(&self) -> u64 {
        let eps = self.bernoulli_cap();
        let n = (self.k as f64 / 4.0).min((1.0 / eps - 1.0) / 3.5);
        n.max(0.0).floor() as u64
    }
}

/// One member of the family: `M_{a*,ε}` when `a_star` is set, else `M_0`.
pub struct HardInstance {
    params: HardParams,
    family: VectorFamily,
    a_star: Option<Action>,
    theta_star: Vec<f64>,
    sigma_memo: RwLock<HashMap<(TreeState, Action), f64>>,
    sigma_corruption: f64,
}

impl Clone for HardInstance {
    fn clone(&self) -> Self {
        HardInstance {
            params: self.params.clone(),
            family: self.family.clone(),
            a_star: self.a_star,
            theta_star: self.theta_star.clone(),
            sigma_memo: RwLock::new(self.sigma_memo.read().unwrap().clone()),
            sigma_corruption: self.sigma_corruption,
        }
    }
}

impl std::fmt::Debug for HardInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HardInstance")
            .field("params", &self.params)
            .field("a_star", &self.a_star)
            .finish()
    }
}

impl HardInstance {
    pub fn new(params: HardParams, family: VectorFamily, a_star: Option<Action>) -> Result<Self> {
        if family.len() != params.k {
            return Err(Error::Parameter(format!(
                "family has {} vectors but k = {}",
                family.len(),
                params.k
            )));
        }
        if family.dim() != params.d - 1 {
            return Err(Error::Parameter(format!(
                "family dimension {} differs from d - 1 = {}",
                family.dim(),
                params.d - 1
            )));
        }
        let report = verify_family(&family);
        if !report.passes(params.gamma) {
            return Err(Error::Parameter(format!(
                "family max overlap {:.6} exceeds gamma {}",
                report.max_overlap, params.gamma
            )));
        }
        if let Some(a) = a_star {
            if a.index() > params.k {
                return Err(Error::Parameter(format!("a* = {a} outside 1..={}", params.k)));
            }
        }
        let theta_star = match a_star {
            Some(a) => std::iter::once(params.epsilon)
                .chain(family.vector(a.slot()).iter().map(|v| params.epsilon * v))
                .collect(),
            None => vec![0.0; params.d],
        };
        Ok(HardInstance {
            params,
            family,
            a_star,
            theta_star,
            sigma_memo: RwLock::new(HashMap::new()),
            sigma_corruption: 0.0,
        })
    }

    /// `M_0` over the same states, actions and features.
    pub fn null_model(&self) -> HardInstance {
        self.with_a_star(None)
    }

    pub fn with_a_star(&self, a_star: Option<Action>) -> HardInstance {
        let mut inst = HardInstance::new(self.params.clone(), self.family.clone(), a_star)
            .expect("parameters already validated");
        inst.sigma_corruption = self.sigma_corruption;
        inst
    }

    /// Mutation-test hook: adds `offset` to every non-root σ, which breaks
    /// the Bellman equations whenever H >= 2.
    pub fn with_sigma_corruption(mut self, offset: f64) -> HardInstance {
        self.sigma_corruption = offset;
        self.sigma_memo = RwLock::new(HashMap::new());
        self
    }

    pub fn params(&self) -> &HardParams {
        &self.params
    }

    pub fn family(&self) -> &VectorFamily {
        &self.family
    }

    pub fn a_star(&self) -> Option<Action> {
        self.a_star
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    fn inner(&self, a: Action, b: Action) -> f64 {
        self.family.inner(a.slot(), b.slot())
    }

    /// `σ_{s,a}` for a tree state `s` not containing `a`.
    pub fn sigma(&self, s: &TreeState, a: Action) -> Result<f64> {
        if s.contains(a) {
            return Err(Error::Parameter(format!("sigma undefined: action {a} already in {s}")));
        }
        if a.index() > self.params.k || s.actions().iter().any(|b| b.index() > self.params.k) {
            return Err(Error::Parameter(format!("sigma undefined for ({s}, {a})")));
        }
        Ok(self.sigma_unchecked(s, a))
    }

    fn sigma_unchecked(&self, s: &TreeState, a: Action) -> f64 {
        let Some((prefix, last)) = s.split_last() else {
            return 1.0;
        };
        let key = (s.clone(), a);
        if let Some(&v) = self.sigma_memo.read().unwrap().get(&key) {
            return v;
        }
        let p = &self.params;
        let value = self.sigma_unchecked(&prefix, last) * p.x * self.inner(last, a)
            + 0.5 * (1.0 + p.gamma)
            + self.sigma_corruption;
        // write-once: concurrent fills compute the same value
        self.sigma_memo.write().unwrap().entry(key).or_insert(value);
        value
    }

    fn stage_scale(&self, h: usize) -> f64 {
        self.params.alpha().powi(1 - h as i32)
    }

    /// `φ_h(s,a)`; scaled by `α^{-h+1}` in the discounted variant and zero
    /// past the horizon.
    pub fn phi(&self, h: usize, s: &StateId, a: Action) -> Vec<f64> {
        let p = &self.params;
        let mut out = vec![0.0; p.d];
        let Some(t) = s.as_tree() else { return out };
        if h == 0 || h > p.horizon || t.contains(a) || a.index() > p.k {
            return out;
        }
        let scale = self.stage_scale(h);
        let w = p.x.powi((p.horizon - h + 1) as i32) * self.sigma_unchecked(t, a) * scale;
        out[0] = p.c(h) * scale;
        for (o, v) in out[1..].iter_mut().zip(self.family.vector(a.slot())) {
            *o = w * v;
        }
        out
    }

    /// `<φ_h(s,a), θ*>`.
    pub fn linear_value(&self, h: usize, s: &StateId, a: Action) -> f64 {
        dot(&self.phi(h, s, a), &self.theta_star)
    }

    /// Deterministic next state.
    pub fn transition(&self, s: &StateId, a: Action) -> StateId {
        let horizon = self.params.horizon;
        let level = s.level();
        if level >= horizon {
            return StateId::GameOver(horizon + 1);
        }
        match s {
            StateId::GameOver(_) => StateId::GameOver(level + 1),
            StateId::Tree(t) => {
                if Some(a) == self.a_star || t.contains(a) {
                    StateId::GameOver(level + 1)
                } else {
                    StateId::Tree(t.child(a).expect("a not in t"))
                }
            }
        }
    }

    /// Leaf Bernoulli mean `μ_a(s) = ε σ_{s,a} x <v_a, v_{a*}> + ε/2`
    /// (times `α^{-H+1}` when discounted).
    pub fn mu(&self, s: &TreeState, a: Action) -> Result<f64> {
        let a_star = self
            .a_star
            .ok_or_else(|| Error::Parameter("M_0 has no Bernoulli rewards".into()))?;
        let p = &self.params;
        let sigma = self.sigma(s, a)?;
        let mean = p.epsilon * sigma * p.x * self.inner(a, a_star) + 0.5 * p.epsilon;
        Ok(mean * self.stage_scale(p.horizon))
    }

    pub fn reward_law(&self, s: &StateId, a: Action) -> RewardLaw {
        let Some(a_star) = self.a_star else {
            return RewardLaw::Point(0.0);
        };
        let StateId::Tree(t) = s else {
            return RewardLaw::Point(0.0);
        };
        let level = s.level();
        if a == a_star {
            RewardLaw::Point(self.linear_value(level, s, a))
        } else if level == self.params.horizon && !t.contains(a) {
            RewardLaw::Bernoulli(self.mu(t, a).expect("checked preconditions"))
        } else {
            RewardLaw::Point(0.0)
        }
    }

    /// All tree states with `len` actions, in lexicographic order.
    pub fn tree_states(&self, len: usize) -> Vec<TreeState> {
        let mut out = vec![TreeState::root()];
        for _ in 0..len {
            out = out
                .iter()
                .flat_map(|t| Action::all(self.params.k).filter_map(move |a| t.child(a)))
                .collect();
        }
        out
    }

    /// Number of tree states with `len` actions, `k!/(k-len)!`, saturating.
    pub fn tree_count(&self, len: usize) -> usize {
        let k = self.params.k;
        if len > k {
            return 0;
        }
        (0..len).fold(1usize, |acc, i| acc.saturating_mul(k - i))
    }
}

impl MdpModel for HardInstance {
    type State = StateId;

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn num_actions(&self) -> usize {
        self.params.k
    }

    fn discount(&self) -> f64 {
        self.params.alpha()
    }

    fn initial_state(&self) -> StateId {
        StateId::root()
    }

    fn level(&self, s: &StateId) -> usize {
        s.level()
    }

    fn is_valid_state(&self, s: &StateId) -> bool {
        let horizon = self.params.horizon;
        match s {
            StateId::GameOver(h) => (2..=horizon + 1).contains(h),
            StateId::Tree(t) => {
                t.len() < horizon && t.actions().iter().all(|a| a.index() <= self.params.k)
            }
        }
    }

    fn outcomes(&self, s: &StateId, a: Action) -> OutcomeLaw<StateId> {
        OutcomeLaw::with_reward(self.reward_law(s, a), self.transition(s, a))
    }

    fn level_states(&self, h: usize) -> Option<Vec<StateId>> {
        let horizon = self.params.horizon;
        let mut out = Vec::new();
        if h >= 2 {
            out.push(StateId::GameOver(h));
        }
        if h <= horizon {
            out.extend(self.tree_states(h - 1).into_iter().map(StateId::Tree));
        }
        Some(out)
    }

    fn level_count(&self, h: usize) -> Option<usize> {
        let trees = if h <= self.params.horizon {
            self.tree_count(h - 1)
        } else {
            0
        };
        Some(trees.saturating_add(usize::from(h >= 2)))
    }
}

impl LinearMdp for HardInstance {
    fn feature_dim(&self) -> usize {
        self.params.d
    }

    fn features(&self, h: usize, s: &StateId, a: Action) -> Vec<f64> {
        self.phi(h, s, a)
    }
}

/// Observed range of a family of values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeReport {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl RangeReport {
    fn empty() -> Self {
        RangeReport {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            count: 0,
        }
    }

    fn add(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.count += 1;
    }

    /// Every observed value lies in `[lo, hi]` up to `tol`.
    pub fn within(&self, lo: f64, hi: f64, tol: f64) -> bool {
        self.count == 0 || (self.min >= lo - tol && self.max <= hi + tol)
    }
}

impl HardInstance {
    /// Range of σ over every tree state and admissible action.
    pub fn sigma_range(&self) -> RangeReport {
        let mut r = RangeReport::empty();
        for len in 0..self.params.horizon {
            for t in self.tree_states(len) {
                for a in Action::all(self.params.k).filter(|&a| !t.contains(a)) {
                    r.add(self.sigma_unchecked(&t, a));
                }
            }
        }
        r
    }

    /// Range of the leaf Bernoulli means over leaves and `a ∉ s`, `a != a*`.
    pub fn mu_range(&self) -> RangeReport {
        let mut r = RangeReport::empty();
        let Some(a_star) = self.a_star else { return r };
        for t in self.tree_states(self.params.horizon - 1) {
            for a in Action::all(self.params.k).filter(|&a| a != a_star && !t.contains(a)) {
                r.add(self.mu(&t, a).expect("admissible pair"));
            }
        }
        r
    }

    /// Range of every reward atom with positive probability, over all
    /// states at levels `1..=H` and all actions.
    pub fn reward_range(&self) -> RangeReport {
        let mut r = RangeReport::empty();
        for h in 1..=self.params.horizon {
            for s in self.level_states(h).unwrap_or_default() {
                for a in Action::all(self.params.k) {
                    for (v, _) in self.reward_law(&s, a).support() {
                        r.add(v);
                    }
                }
            }
        }
        r
    }

    /// Deterministic rewards `<φ_{|s|}(s,a*), θ*>` grouped by level.
    pub fn optimal_reward_by_level(&self) -> Vec<RangeReport> {
        let Some(a_star) = self.a_star else {
            return Vec::new();
        };
        (1..=self.params.horizon)
            .map(|h| {
                let mut r = RangeReport::empty();
                for t in self.tree_states(h - 1).into_iter().filter(|t| !t.contains(a_star)) {
                    r.add(self.linear_value(h, &StateId::Tree(t), a_star));
                }
                r
            })
            .collect()
    }

    /// Maximum of `<φ_h(s,a), θ*>` over all levels, states and actions.
    pub fn max_linear_value(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for h in 1..=self.params.horizon {
            for s in self.level_states(h).unwrap_or_default() {
                for a in Action::all(self.params.k) {
                    best = best.max(self.linear_value(h, &s, a));
                }
            }
        }
        best
    }
}

/// Relabel a state by the action permutation `perm` (zero-based slots).
pub fn permute_state(s: &StateId, perm: &[usize]) -> StateId {
    match s {
        StateId::GameOver(h) => StateId::GameOver(*h),
        StateId::Tree(t) => StateId::Tree(t.map_actions(|a| Action::from_slot(perm[a.slot()]))),
    }
}

/// Pairs `(state, action)` of `M_0` at which transition or reward law fail
/// to commute with the relabeling `perm`.
pub fn symmetry_violations(m0: &HardInstance, perm: &[usize]) -> Vec<(StateId, Action)> {
    let mut bad = Vec::new();
    for h in 1..=m0.params.horizon {
        for s in m0.level_states(h).unwrap_or_default() {
            let ps = permute_state(&s, perm);
            for a in Action::all(m0.params.k) {
                let pa = Action::from_slot(perm[a.slot()]);
                let next_ok = m0.transition(&ps, pa) == permute_state(&m0.transition(&s, a), perm);
                let reward_ok = m0.reward_law(&ps, pa) == m0.reward_law(&s, a);
                if !(next_ok && reward_ok) {
                    bad.push((s.clone(), a));
                }
            }
        }
    }
    bad
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}
