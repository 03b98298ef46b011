use proptest::prelude::*;

use bellman_bias::environments::{gen_random_mdp, Environment};
use bellman_bias::inference::{
    entropy, mutual_information_of_policies, posterior_from_log_likelihoods, trajectory_log_likelihood,
    DEFAULT_POLICY_TOL,
};
use bellman_bias::mdp::{apply_backup, extract_policy, policy_value, sample_trajectory, BackupDiagnostics, Extraction};
use bellman_bias::planners::{boltz, optimism_weights, plan, BackupRule};
use bellman_bias::{PlanOptions, PlannerKind, PlannerSpec, Policy, QFunction};

fn q_rows(ns: usize, na: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, ns * na)
}

fn spec_strategy() -> impl Strategy<Value = PlannerSpec> {
    prop_oneof![
        Just(PlannerSpec::rational()),
        (0.0..100.0f64).prop_map(|b| PlannerSpec::new(PlannerKind::Boltzmann, b).unwrap()),
        (0.0..10.0f64).prop_map(|n| PlannerSpec::new(PlannerKind::IllusionOfControl, n).unwrap()),
        (-10.0..10.0f64).prop_map(|w| PlannerSpec::new(PlannerKind::OptimismPessimism, w).unwrap()),
        (0.1..10.0f64).prop_map(|c| PlannerSpec::new(PlannerKind::Prospect, c).unwrap()),
        (0.0..1.0f64).prop_map(|a| PlannerSpec::new(PlannerKind::Extremal, a).unwrap()),
        (0.0..0.99f64).prop_map(|g| PlannerSpec::new(PlannerKind::MyopicGamma, g).unwrap()),
        (1u32..30).prop_map(|h| PlannerSpec::new(PlannerKind::MyopicVi, h as f64).unwrap()),
        (0.0..10.0f64).prop_map(|k| PlannerSpec::new(PlannerKind::Hyperbolic, k).unwrap()),
    ]
}

fn random_policy(ns: usize, na: usize) -> impl Strategy<Value = Policy> {
    prop::collection::vec(0.01..1.0f64, ns * na).prop_map(move |w| {
        let probs: Vec<f64> = w
            .chunks(na)
            .flat_map(|row| {
                let t: f64 = row.iter().sum();
                row.iter().map(move |x| x / t).collect::<Vec<_>>()
            })
            .collect();
        Policy::from_probs(ns, na, probs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_shift_invariant(values in q_rows(4, 3), beta in 0.0..20.0f64, c in -100.0..100.0f64) {
        let q = QFunction::new(4, 3, values.clone());
        let shifted = QFunction::new(4, 3, values.iter().map(|x| x + c).collect());
        let a = extract_policy(&q, Extraction::Boltzmann(beta));
        let b = extract_policy(&shifted, Extraction::Boltzmann(beta));
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        for row in values.chunks(3) {
            let moved: Vec<f64> = row.iter().map(|x| x + c).collect();
            prop_assert!((boltz(&moved, beta) - boltz(row, beta) - c).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn argmax_is_shift_and_scale_invariant(
        values in q_rows(5, 4),
        c in -100.0..100.0f64,
        k in 0.1..10.0f64,
    ) {
        // Rows with a clear winner, so tie tolerance does not come into play.
        let clear = values.chunks(4).all(|row| {
            let mut s = row.to_vec();
            s.sort_by(|a, b| b.total_cmp(a));
            s[0] - s[1] > 1e-3
        });
        prop_assume!(clear);
        let q = QFunction::new(5, 4, values.clone());
        let moved = QFunction::new(5, 4, values.iter().map(|x| k * x + c).collect());
        let a = extract_policy(&q, Extraction::Deterministic);
        let b = extract_policy(&moved, Extraction::Deterministic);
        prop_assert_eq!(a.probs(), b.probs());
        for s in 0..5 {
            let row = &values[s * 4..s * 4 + 4];
            let best = (0..4).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            prop_assert_eq!(a.greedy_action(s), best);
        }
    }

    #[test]
    fn rational_backup_is_a_contraction(
        seed in 0u64..1000,
        v1 in prop::collection::vec(-20.0..20.0f64, 10),
        v2 in prop::collection::vec(-20.0..20.0f64, 10),
        theta_index in 0usize..64,
    ) {
        let env = gen_random_mdp(seed);
        let rewards = env.reward_table(theta_index);
        let rule = BackupRule::new(&PlannerSpec::rational(), &env.mdp, &rewards, &PlanOptions::default());
        let mut d = BackupDiagnostics::default();
        let t1 = apply_backup(&env.mdp, &rule, &v1, &mut d, 1).unwrap();
        let t2 = apply_backup(&env.mdp, &rule, &v2, &mut d, 1).unwrap();
        let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(sup(&t1, &t2) <= env.mdp.discount() * sup(&v1, &v2) + 1e-12);
    }

    #[test]
    fn optimism_weights_ignore_outcome_shifts(
        raw in prop::collection::vec(0.01..1.0f64, 2..6),
        outcomes in prop::collection::vec(-30.0..30.0f64, 6),
        omega in -10.0..10.0f64,
        c in -50.0..50.0f64,
    ) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let outcomes = &outcomes[..probs.len()];
        let moved: Vec<f64> = outcomes.iter().map(|x| x + c).collect();
        let a = optimism_weights(&probs, outcomes, omega);
        let b = optimism_weights(&probs, &moved, omega);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let zero = optimism_weights(&probs, outcomes, 0.0);
        for (x, p) in zero.iter().zip(&probs) {
            prop_assert!((x - p).abs() <= 1e-12);
        }
    }

    #[test]
    fn posterior_ignores_shared_transition_factors(
        lls in prop::collection::vec(-40.0..0.0f64, 2..20),
        transition_log in -60.0..0.0f64,
    ) {
        let prior = vec![1.0 / lls.len() as f64; lls.len()];
        let a = posterior_from_log_likelihoods(&prior, &lls);
        let with: Vec<f64> = lls.iter().map(|x| x + transition_log).collect();
        let b = posterior_from_log_likelihoods(&prior, &with);
        prop_assert!((a.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in a.log_probs.iter().zip(&b.log_probs) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn mutual_information_is_bounded(
        policies in prop::collection::vec(prop_oneof![
            random_policy(3, 2),
            prop::collection::vec(0usize..2, 3).prop_map(|a| Policy::deterministic(&a, 2)),
        ], 1..12),
        weights in prop::collection::vec(0.01..1.0f64, 12),
    ) {
        let w = &weights[..policies.len()];
        let total: f64 = w.iter().sum();
        let prior: Vec<f64> = w.iter().map(|x| x / total).collect();
        let refs: Vec<&Policy> = policies.iter().collect();
        let mi = mutual_information_of_policies(&refs, &prior, DEFAULT_POLICY_TOL);
        let h = entropy(&prior);
        prop_assert!(mi.mutual_information >= -1e-12);
        prop_assert!(mi.mutual_information <= h + 1e-9);
        prop_assert!(mi.mutual_information <= (mi.distinct_policies as f64).ln() + 1e-9);
        prop_assert!(mi.distinct_policies >= 1 && mi.distinct_policies <= policies.len());
        if mi.distinct_policies == policies.len() {
            prop_assert!((mi.mutual_information - h).abs() <= 1e-9);
        }
    }

    #[test]
    fn rational_policy_dominates(seed in 0u64..500, theta_index in 0usize..64, spec in spec_strategy()) {
        let env = gen_random_mdp(seed);
        let opts = PlanOptions { tol: 1e-10, max_iters: 100_000, ..PlanOptions::default() };
        let theta = env.theta.param(theta_index).to_vec();
        let rewards = env.reward_table(theta_index);
        let best = plan(&PlannerSpec::rational(), &env.mdp, &env.reward, &theta, &opts).unwrap();
        let other = plan(&spec, &env.mdp, &env.reward, &theta, &PlanOptions::default()).unwrap();
        let v_best = policy_value(&env.mdp, &rewards, &best.policy, 1e-9);
        let v_other = policy_value(&env.mdp, &rewards, &other.policy, 1e-9);
        for (b, o) in v_best.values().iter().zip(v_other.values()) {
            prop_assert!(b + 1e-6 >= *o, "{spec}: {b} < {o}");
        }
    }

    #[test]
    fn likelihood_ignores_successor_probabilities(seed in 0u64..200, length in 1usize..40) {
        let env = gen_random_mdp(seed);
        let policy = plan(&PlannerSpec::boltzmann(1.0).unwrap(), &env.mdp, &env.reward, env.theta.param(5), &PlanOptions::default())
            .unwrap()
            .policy;
        let start = env.mdp.start_states()[0];
        let xi = sample_trajectory(&env.mdp, &policy, start, length, seed);
        let ll = trajectory_log_likelihood(&policy, &xi, 0.0);
        let direct: f64 = xi.steps.iter().map(|&(s, a)| policy.log_prob(s, a)).sum();
        prop_assert!((ll - direct).abs() <= 1e-12);
        let shorter = sample_trajectory(&env.mdp, &policy, start, length / 2 + 1, seed);
        prop_assert_eq!(shorter, xi.prefix(length / 2 + 1));
    }

    #[test]
    fn planner_specs_round_trip(spec in spec_strategy()) {
        let text = spec.to_string();
        let back: PlannerSpec = text.parse().unwrap();
        prop_assert_eq!(back, spec);
        let json = serde_json::to_string(&spec).unwrap();
        prop_assert_eq!(serde_json::from_str::<PlannerSpec>(&json).unwrap(), spec);
    }

    #[test]
    fn environments_round_trip(seed in any::<u64>()) {
        let env = gen_random_mdp(seed);
        let back = Environment::from_json(&env.to_json()).unwrap();
        prop_assert_eq!(back.fingerprint(), env.fingerprint());
        prop_assert_eq!(back, env);
    }
}
