//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.
//!
//! Run with `cargo test -p qstar --test acceptance -- --nocapture`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use qstar::config::parse_config;
use qstar::design::{g_optimal_design, DesignConfig};
use qstar::hard::{permutations, symmetry_violations, HardInstance, HardParams, HorizonMode};
use qstar::harness::{cmd_bench, design_support, BenchOptions};
use qstar::jl::{generate_family, min_dimension, orthonormal_family, DEFAULT_MAX_RETRIES};
use qstar::lsvi::{error_envelope, lsvi_run, sample_size, stage_reports, LsviConfig};
use qstar::mdp::{enumerate_levels, Action, MdpModel, Simulator, StagePolicy, StateId, DEFAULT_STATE_CAP};
use qstar::oracle::{
    check_realizability, check_transition_soundness, lemma8_check, likelihood_floor_check, policy_value,
    prop1_check, solve_backward, suboptimality,
};
use qstar::rng::stream;
use qstar::tabular::{random_policy, TabState, TabularMdp};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, outcome: &Outcome) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!("{tag} [{id:>2}] {name}: {}", outcome.detail);
}

#[derive(Clone, Copy)]
struct Spec {
    k: usize,
    horizon: usize,
    gamma: f64,
    gaussian: bool,
    mode: HorizonMode,
    seed: u64,
}

fn build(spec: Spec) -> HardInstance {
    let dim = if spec.gaussian {
        min_dimension(spec.k, spec.gamma) + 8
    } else {
        spec.k
    };
    let params = HardParams::custom(dim + 1, spec.horizon, spec.gamma, spec.k, spec.mode).unwrap();
    let family = if spec.gaussian {
        generate_family(dim, spec.k, spec.gamma, &mut stream(spec.seed, 1), DEFAULT_MAX_RETRIES).unwrap()
    } else {
        orthonormal_family(dim, spec.k, spec.gamma).unwrap()
    };
    let a_star = Action::new(1 + (spec.seed as usize) % spec.k);
    HardInstance::new(params, family, Some(a_star)).unwrap()
}

/// Seeded desk-scale instances, each with its two discounted variants.
fn instance_specs() -> Vec<Spec> {
    let shapes = [
        (2, 1),
        (2, 4),
        (3, 2),
        (3, 3),
        (4, 2),
        (4, 3),
        (5, 2),
        (5, 3),
        (6, 2),
        (6, 4),
        (3, 4),
        (4, 4),
    ];
    let mut out = Vec::new();
    let mut seed = 0;
    for &(k, horizon) in &shapes {
        for gaussian in [false, true] {
            seed += 1;
            let gamma = if seed % 2 == 0 { 0.25 } else { 0.2 };
            for mode in [
                HorizonMode::FixedHorizon,
                HorizonMode::Discounted { alpha: 2.0 / 3.0 },
                HorizonMode::Discounted { alpha: 0.9 },
            ] {
                out.push(Spec {
                    k,
                    horizon,
                    gamma,
                    gaussian,
                    mode,
                    seed,
                });
            }
        }
    }
    out
}

/// Optimal value by plain recursion over outcome laws, independent of the
/// level-set solver.
fn recursive_v<M: MdpModel>(model: &M, s: &M::State, h: usize) -> f64 {
    if h > model.horizon() {
        return 0.0;
    }
    Action::all(model.num_actions())
        .map(|a| recursive_q(model, s, a, h))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn recursive_q<M: MdpModel>(model: &M, s: &M::State, a: Action, h: usize) -> f64 {
    let alpha = model.discount();
    model
        .outcomes(s, a)
        .outcomes()
        .iter()
        .map(|o| o.prob * (o.reward + alpha * recursive_v(model, &o.next, h + 1)))
        .sum()
}

/// Largest `|q*_h(s,a) - <φ_h(s,a), θ*>|` over triples reached from the root,
/// with `q*` from plain recursion.
fn recursive_residual(inst: &HardInstance, s: &StateId, h: usize) -> f64 {
    if h > inst.horizon() {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for a in Action::all(inst.num_actions()) {
        worst = worst.max((recursive_q(inst, s, a, h) - inst.linear_value(h, s, a)).abs());
        for o in inst.outcomes(s, a).outcomes() {
            worst = worst.max(recursive_residual(inst, &o.next, h + 1));
        }
    }
    worst
}

fn criterion_1(instances: &[(Spec, HardInstance)]) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut independent: f64 = 0.0;
    for (_, inst) in instances {
        let tables = solve_backward(inst, DEFAULT_STATE_CAP).unwrap();
        worst = worst.max(check_realizability(inst, &tables, inst.theta_star()).max_residual);
        independent = independent.max(recursive_residual(inst, &StateId::root(), 1));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1e-9 && independent <= 1e-9 && secs < 10.0 && instances.len() >= 20,
        detail: format!(
            "{} instances, max residual {worst:.2e} (recursive check {independent:.2e}, limit 1e-9), {secs:.2} s (limit 10 s)",
            instances.len()
        ),
    }
}

fn criterion_2(instances: &[(Spec, HardInstance)]) -> Outcome {
    let mut violations = 0;
    let mut pairs = 0;
    for (_, inst) in instances {
        let p = inst.params();
        let sigma = inst.sigma_range();
        let mu = inst.mu_range();
        let reward = inst.reward_range();
        pairs += sigma.count + mu.count + reward.count;
        violations += usize::from(!sigma.within(p.gamma(), 1.0, 1e-12));
        violations += usize::from(!mu.within(0.0, p.bernoulli_cap(), 1e-15));
        violations += usize::from(!reward.within(0.0, 1.0, 1e-15));
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations over {pairs} sigma/mu/reward values"),
    }
}

fn criterion_3(instances: &[(Spec, HardInstance)]) -> Outcome {
    let mut min_gap = f64::INFINITY;
    let mut ortho_dev: f64 = 0.0;
    for (spec, inst) in instances {
        let tables = solve_backward(inst, DEFAULT_STATE_CAP).unwrap();
        let star = inst.a_star().unwrap();
        for a in Action::all(spec.k).filter(|&a| a != star) {
            let gap = tables.gap(1, &StateId::root(), a).unwrap();
            min_gap = min_gap.min(gap);
            if !spec.gaussian {
                ortho_dev = ortho_dev.max((gap - 1.0 / 3.0).abs());
            }
        }
    }
    Outcome {
        pass: min_gap >= 0.25 && ortho_dev <= 1e-12,
        detail: format!("min root gap {min_gap:.6} (need >= 1/4), orthonormal |gap - 1/3| <= {ortho_dev:.1e}"),
    }
}

fn criterion_4(instances: &[(Spec, HardInstance)]) -> Outcome {
    let mut ratio_violations = 0;
    let mut worst_margin = f64::INFINITY;
    for (_, inst) in instances {
        let lf = likelihood_floor_check(inst, 1, DEFAULT_STATE_CAP).unwrap();
        let eps = inst.params().bernoulli_cap();
        ratio_violations += usize::from(lf.min_ratio < 1.0 - eps);
        worst_margin = worst_margin.min(lf.min_ratio - (1.0 - eps));
    }
    // the power bound is a statement about the parameters alone
    let mut power_checked = 0;
    let mut power_violations = 0;
    let mut min_power = f64::INFINITY;
    for gamma in [0.25, 0.2, 0.1, 0.05, 0.01] {
        for horizon in 1..=12 {
            for k in [1usize, 3, 4, 16, 100, 10_000, 1 << 30] {
                let p = HardParams::custom(2, horizon, gamma, k, HorizonMode::FixedHorizon).unwrap();
                let n = p.n_choice();
                if n >= 1 {
                    power_checked += 1;
                    let power = (1.0 - p.epsilon()).powf(n as f64);
                    min_power = min_power.min(power);
                    power_violations += usize::from(power <= 0.75);
                }
            }
        }
    }
    Outcome {
        pass: ratio_violations == 0 && power_violations == 0 && power_checked > 0,
        detail: format!(
            "ratio >= 1 - eps on {} instances (min margin {worst_margin:.2e}); (1-eps)^n_choice > 3/4 on {power_checked} parameter sets (min {min_power:.4})",
            instances.len()
        ),
    }
}

fn criterion_5() -> Outcome {
    let mut violations = 0;
    let mut checked = 0;
    for k in 2..=4 {
        for horizon in 1..=3 {
            for gaussian in [false, true] {
                let spec = Spec {
                    k,
                    horizon,
                    gamma: 0.25,
                    gaussian,
                    mode: HorizonMode::FixedHorizon,
                    seed: (k * 10 + horizon) as u64,
                };
                let m0 = build(spec).null_model();
                for perm in permutations(k) {
                    violations += symmetry_violations(&m0, &perm).len();
                    checked += 1;
                }
            }
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations over {checked} (model, permutation) pairs, k <= 4"),
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Brute-force leverage of every candidate via an SVD pseudo-inverse.
fn brute_max_leverage(g: &nalgebra::DMatrix<f64>, candidates: &[Vec<f64>]) -> f64 {
    let pinv = g.clone().pseudo_inverse(1e-10).unwrap();
    candidates
        .iter()
        .map(|c| {
            let v = nalgebra::DVector::from_column_slice(c);
            (v.transpose() * &pinv * &v)[(0, 0)]
        })
        .fold(0.0, f64::max)
}

fn criterion_6() -> Outcome {
    let mut rng = stream(606, 0);
    let mut worst_ratio: f64 = 0.0;
    let mut design_fail = 0;
    for _ in 0..100 {
        let d = rng.gen_range(1..=10);
        let n = rng.gen_range(1..=500);
        let rank = rng.gen_range(1..=d);
        // points in a random rank-`rank` subspace, with mixed scales
        let mixing: Vec<Vec<f64>> = (0..rank).map(|_| gaussian_vec(&mut rng, d)).collect();
        let cands: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = gaussian_vec(&mut rng, rank);
                let scale = rng.gen_range(0.1..3.0);
                (0..d)
                    .map(|j| scale * (0..rank).map(|i| c[i] * mixing[i][j]).sum::<f64>())
                    .collect()
            })
            .collect();
        let des = g_optimal_design(&cands, d, DesignConfig::default()).unwrap();
        let lev = brute_max_leverage(&des.info_matrix(&cands), &cands);
        worst_ratio = worst_ratio.max(lev / (2.0 * d as f64));
        design_fail += usize::from(lev > 2.0 * d as f64 + 1e-9);
    }

    let mut bound_fail = 0;
    let mut worst_slack = f64::INFINITY;
    for trial in 0..500 {
        let d = rng.gen_range(1..=10);
        let n = rng.gen_range(d..=200);
        let cands: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut rng, d)).collect();
        let des = g_optimal_design(&cands, d, DesignConfig::default()).unwrap();
        let theta = gaussian_vec(&mut rng, d);
        let eps: f64 = rng.gen_range(0.0..0.5);
        let delta: f64 = rng.gen_range(0.0..0.5);
        // misspecification and noise both aligned to push the estimate up at
        // one target candidate, whose own misspecification pulls the other way
        let target_idx = trial % n;
        let g = des.info_matrix(&cands).pseudo_inverse(1e-10).unwrap();
        let t = &g * nalgebra::DVector::from_column_slice(&cands[target_idx]);
        let sign = |x: &[f64]| {
            let v: f64 = x.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
            if v >= 0.0 {
                1.0
            } else {
                -1.0
            }
        };
        let mu = |i: usize| -> f64 {
            let x = &cands[i];
            let lin: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
            if i == target_idx && !des.points.contains(&i) {
                lin - eps
            } else {
                lin + eps * sign(x)
            }
        };
        let responses: Vec<f64> = des.points.iter().map(|&p| mu(p) + delta * sign(&cands[p])).collect();
        let est = des.least_squares(&responses).unwrap();
        let sup = (0..n)
            .map(|i| {
                let fx: f64 = cands[i].iter().zip(&est).map(|(a, b)| a * b).sum();
                (fx - mu(i)).abs()
            })
            .fold(0.0, f64::max);
        let bound = eps + (eps + delta) * (2.0 * d as f64).sqrt();
        worst_slack = worst_slack.min(bound - sup);
        bound_fail += usize::from(sup > bound + 1e-9);
    }
    Outcome {
        pass: design_fail == 0 && bound_fail == 0,
        detail: format!(
            "leverage <= 2d on {}/100 sets (max ratio {worst_ratio:.3}); estimator bound in {}/500 trials (min slack {worst_slack:.3e})",
            100 - design_fail,
            500 - bound_fail
        ),
    }
}

fn desk_instance() -> HardInstance {
    build(Spec {
        k: 3,
        horizon: 2,
        gamma: 0.25,
        gaussian: false,
        mode: HorizonMode::FixedHorizon,
        seed: 0,
    })
}

fn criterion_7() -> Outcome {
    let inst = desk_instance();
    let tables = solve_backward(&inst, DEFAULT_STATE_CAP).unwrap();
    let cfg = LsviConfig {
        n: 20_000,
        zeta: 0.1,
        delta_target: 0.25,
        design: DesignConfig::default(),
    };
    let runs = 40;
    let mut qualifying = 0;
    let mut violations = 0;
    let mut slowest: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..runs {
        let start = Instant::now();
        let mut sim = Simulator::new(&inst, stream(7_000 + seed, 2));
        let out = lsvi_run(&mut sim, tables.levels(), &cfg).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let reports = stage_reports(&inst, &tables, &out, cfg.zeta);
        if reports.iter().all(|r| r.max_mu_err <= r.beta) {
            qualifying += 1;
            for r in &reports {
                assert_eq!(r.envelope, error_envelope(r.h, 2, 4, r.beta));
                worst_ratio = worst_ratio.max(r.max_f_err / r.envelope);
                violations += usize::from(r.max_f_err > r.envelope);
            }
        }
    }
    let zeta: f64 = 0.1;
    let min_fraction = 1.0 - zeta - 2.0 * (zeta * (1.0 - zeta) / runs as f64).sqrt();
    let fraction = qualifying as f64 / runs as f64;
    Outcome {
        pass: violations == 0 && fraction >= min_fraction && slowest < 60.0,
        detail: format!(
            "{qualifying}/{runs} runs with |mu_hat - mu| <= beta, {violations} envelope violations (max err/envelope {worst_ratio:.3}), slowest run {slowest:.3} s"
        ),
    }
}

fn criterion_8() -> Outcome {
    let inst = desk_instance();
    let levels = enumerate_levels(&inst, DEFAULT_STATE_CAP).unwrap();
    let m = design_support(&inst, &levels, DesignConfig::default()).unwrap();
    let n = sample_size(2, 4, m, 0.25);
    let config = parse_config(
        "d = 4\nH = 2\ngamma = 0.25\nk = 3\nplanner = \"lsvi\"\nreplication = 50\nseed = 800\ndelta_target = 0.25\nzeta = 0.1\n",
        Path::new("."),
    )
    .unwrap();
    let result = cmd_bench(&config, BenchOptions::default()).unwrap();
    assert_eq!(result.summary.n_per_point, Some(n));
    let failures = result.records.iter().filter(|r| r.delta_pi > 0.25).count();
    let rate = failures as f64 / 50.0;
    let limit = 0.1 + 2.0 * (0.1f64 * 0.9 / 50.0).sqrt();
    Outcome {
        pass: rate <= limit,
        detail: format!(
            "n = {n} per point (m = {m}), {failures}/50 runs with delta_pi > 0.25, rate {rate:.3} (limit {limit:.3}), max delta_pi {:.2e}",
            result.summary.max_delta_pi
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = stream(909, 0);
    let mut lemma_violations = 0;
    let mut lemma_nontrivial = 0;
    for _ in 0..200 {
        let horizon = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=3);
        let m = TabularMdp::random(&mut rng, horizon, k, 4);
        let tables = solve_backward(&m, 100).unwrap();
        let scale: f64 = rng.gen_range(0.0..0.5);
        let noise: Vec<f64> = (0..200).map(|_| rng.gen_range(-scale..=scale)).collect();
        let rep = lemma8_check(&m, &tables, |h, s, a| {
            let i = tables.levels().position(h, s).unwrap();
            tables.q(h, s, a).unwrap() + noise[(h * 37 + i * 5 + a.slot()) % noise.len()]
        })
        .unwrap();
        lemma_violations += usize::from(!rep.holds);
        lemma_nontrivial += usize::from(rep.lhs > 0.0);
    }

    let mut prop_violations = 0;
    let mut premises = (0, 0);
    let mut brute_mismatch: f64 = 0.0;
    for _ in 0..200 {
        let horizon = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=3);
        let m = TabularMdp::random(&mut rng, horizon, k, 4);
        let tables = solve_backward(&m, 100).unwrap();
        let policy = random_policy(tables.levels(), k, &mut rng);
        let zeta: f64 = rng.gen_range(0.05..=1.0);
        // choose thresholds that make each premise true, so neither direction
        // holds vacuously
        let delta_pi = suboptimality(&tables, &policy_value(&m, tables.levels(), &policy).unwrap());
        let brute = brute_delta_pi(&m, &policy);
        brute_mismatch = brute_mismatch.max((brute - delta_pi).abs());
        let delta_i: f64 = rng.gen_range(0.0..1.0);
        let zeta_i = check_transition_soundness(&tables, &policy, delta_i).unwrap().mass.max(1e-3);
        let r1 = prop1_check(&m, &tables, &policy, delta_i, zeta_i.min(1.0)).unwrap();
        let r2 = prop1_check(&m, &tables, &policy, delta_pi.max(1e-6), zeta).unwrap();
        premises.0 += usize::from(r1.premise_i);
        premises.1 += usize::from(r2.premise_ii);
        prop_violations += usize::from(!r1.holds()) + usize::from(!r2.holds());
    }
    Outcome {
        pass: lemma_violations == 0 && prop_violations == 0 && brute_mismatch <= 1e-12,
        detail: format!(
            "greedy-error lemma: {lemma_violations} violations / 200 ({lemma_nontrivial} with positive loss); soundness conversion: {prop_violations} violations / 200 ({} + {} active premises); recursive delta_pi agrees to {brute_mismatch:.1e}",
            premises.0, premises.1
        ),
    }
}

/// `δ^π` by recursive evaluation of the stochastic policy over states reached
/// from the initial state.
fn brute_delta_pi(m: &TabularMdp, policy: &StagePolicy<TabState>) -> f64 {
    fn value(m: &TabularMdp, policy: &StagePolicy<TabState>, s: &TabState, h: usize) -> f64 {
        if h > m.horizon() {
            return 0.0;
        }
        let probs = policy.probs(h, s).unwrap();
        Action::all(m.num_actions())
            .map(|a| {
                let backup: f64 = m
                    .outcomes(s, a)
                    .outcomes()
                    .iter()
                    .map(|o| o.prob * (o.reward + value(m, policy, &o.next, h + 1)))
                    .sum();
                probs[a.slot()] * backup
            })
            .sum()
    }
    fn walk(m: &TabularMdp, policy: &StagePolicy<TabState>, s: &TabState, h: usize) -> f64 {
        if h > m.horizon() {
            return 0.0;
        }
        let mut worst = recursive_v(m, s, h) - value(m, policy, s, h);
        for a in Action::all(m.num_actions()) {
            for o in m.outcomes(s, a).outcomes() {
                worst = worst.max(walk(m, policy, &o.next, h + 1));
            }
        }
        worst
    }
    walk(m, policy, &m.initial_state(), 1).max(0.0)
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        "d = 4\nH = 2\ngamma = 0.25\nk = 3\nplanner = \"lsvi\"\nreplication = 8\nn = 5000\na_star = \"random\"\n",
    )
    .unwrap();
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_qstar"))
            .args(["bench", cfg.to_str().unwrap(), "--seed", "1234", "--out-dir", out_dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out_dir.join("bench.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    Outcome {
        pass: a == b && !a.is_empty(),
        detail: format!("two `qstar bench` runs, seed 1234: {} bytes each, identical = {}", a.len(), a == b),
    }
}

#[test]
fn acceptance() {
    let specs = instance_specs();
    let instances: Vec<(Spec, HardInstance)> = specs.iter().map(|&s| (s, build(s))).collect();
    let results = [
        ("realizability", criterion_1(&instances)),
        ("construction ranges", criterion_2(&instances)),
        ("root gap", criterion_3(&instances)),
        ("likelihood floor", criterion_4(&instances)),
        ("M_0 symmetry", criterion_5()),
        ("design and estimator", criterion_6()),
        ("LSVI error envelope", criterion_7()),
        ("LSVI soundness", criterion_8()),
        ("structural lemmas", criterion_9()),
        ("bench determinism", criterion_10()),
    ];
    for (i, (name, outcome)) in results.iter().enumerate() {
        report(i + 1, name, outcome);
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
