use qstar::hard::{HardInstance, HardParams, HorizonMode};
use qstar::jl::orthonormal_family;
use qstar::mdp::{run_policy, Action, MdpModel, StagePolicy, StateId, DEFAULT_STATE_CAP};
use qstar::oracle::{policy_value, solve_backward};
use qstar::rng::stream;
use qstar::tabular::{random_policy, TabularMdp};

const EPISODES: usize = 100_000;

/// Mean and standard error of the discounted return over `EPISODES` runs.
fn rollout_stats<M: MdpModel>(model: &M, policy: &StagePolicy<M::State>, seed: u64) -> (f64, f64) {
    let mut rng = stream(seed, 5);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..EPISODES {
        let g = run_policy(model, policy, &mut rng).unwrap().discounted_return(model.discount());
        sum += g;
        sum_sq += g * g;
    }
    let n = EPISODES as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

#[test]
fn exact_value_matches_rollouts_on_a_hard_instance() {
    let params = HardParams::custom(4, 2, 0.25, 3, HorizonMode::FixedHorizon).unwrap();
    let inst = HardInstance::new(params, orthonormal_family(3, 3, 0.25).unwrap(), Some(Action::new(2))).unwrap();
    let tables = solve_backward(&inst, DEFAULT_STATE_CAP).unwrap();
    // uniform play reaches the Bernoulli leaves
    let policy = StagePolicy::uniform(tables.levels(), 3);
    let exact = policy_value(&inst, tables.levels(), &policy).unwrap();
    let root = tables.levels().position(1, &StateId::root()).unwrap();
    let (mean, se) = rollout_stats(&inst, &policy, 1);
    let v = exact.at(1, root);
    assert!((mean - v).abs() <= 3.0 * se, "rollout {mean} vs exact {v} (se {se})");
}

#[test]
fn exact_value_matches_rollouts_on_random_mdps() {
    for seed in 0..5 {
        let mut rng = stream(seed, 0);
        let m = TabularMdp::random(&mut rng, 3, 3, 4).with_discount(0.8);
        let tables = solve_backward(&m, 100).unwrap();
        let policy = random_policy(tables.levels(), 3, &mut rng);
        let exact = policy_value(&m, tables.levels(), &policy).unwrap();
        let root = tables.levels().position(1, &m.initial_state()).unwrap();
        let (mean, se) = rollout_stats(&m, &policy, seed);
        let v = exact.at(1, root);
        assert!((mean - v).abs() <= 3.0 * se.max(1e-12), "seed {seed}: rollout {mean} vs exact {v} (se {se})");
    }
}
