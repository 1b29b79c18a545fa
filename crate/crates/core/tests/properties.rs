use offload_core::eval::{ratios_csv, rewards_csv, summary_csv, BenchmarkReport, EpisodeResult};
use offload_core::mdp::CachedPrediction;
use offload_core::policies::{brute_force_oracle, calibrate_threshold, oracle_dp, threshold_policy};
use offload_core::trace::{read_traces, write_traces};
use offload_core::{encode_state, generate_dataset, generate_trace, reset, Action, GenConfig, RewardParams, Trace};
use proptest::prelude::*;

fn small_gen(horizon: usize, fmin: f64, identities: u32) -> GenConfig {
    GenConfig {
        horizon,
        num_identities: identities,
        num_known: 2.max(identities / 2),
        coherence_frac_min: fmin,
        coherence_frac_max: (fmin + 0.3).min(0.95),
        ..GenConfig::default()
    }
}

fn arb_trace(max_t: usize) -> impl Strategy<Value = Trace> {
    (1..=max_t, 0.05f64..0.5, 2u32..8, any::<u64>())
        .prop_map(|(t, fmin, ids, seed)| generate_trace(&small_gen(t, fmin, ids), seed).unwrap())
}

fn arb_action() -> impl Strategy<Value = Action> {
    (0usize..4).prop_map(|i| Action::ALL[i])
}

fn run_actions(trace: &Trace, budget: usize, actions: &[Action], params: &RewardParams) -> f64 {
    let (mut env, _) = reset(trace, budget, *params).unwrap();
    for &a in actions {
        env.step(a).unwrap();
    }
    env.tally().total_reward(params)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mdp_step_invariants(
        trace in arb_trace(40),
        budget in 0usize..10,
        actions in prop::collection::vec(arb_action(), 40),
    ) {
        let params = RewardParams::default();
        let horizon = trace.horizon();
        let (mut env, mut state) = reset(&trace, budget, params).unwrap();
        prop_assert_eq!(state.robot_cache, CachedPrediction::empty(horizon + 1));
        let mut step_sum = 0.0;
        let mut cloud = 0;
        for (t, &a) in actions.iter().take(horizon).enumerate() {
            let out = env.step(a).unwrap();
            let next = out.next;
            step_sum += out.reward;
            prop_assert!(out.reward <= 0.0);
            prop_assert!(out.reward >= params.worst_step_reward());
            prop_assert_eq!(next.time_left, horizon - t - 1);
            prop_assert_eq!(out.done, t + 1 == horizon);
            if a == Action::QueryCloud && state.budget_left == 0 {
                prop_assert_eq!(out.info.executed, Action::QueryRobot);
            } else {
                prop_assert_eq!(out.info.executed, a);
            }
            match out.info.executed {
                Action::QueryRobot => {
                    prop_assert_eq!(next.robot_cache.age, 0);
                    prop_assert_eq!(next.robot_cache.label, Some(trace.steps[t].robot_pred));
                    prop_assert_eq!(next.cloud_cache.age, state.cloud_cache.age + 1);
                }
                Action::QueryCloud => {
                    cloud += 1;
                    prop_assert_eq!(next.budget_left, state.budget_left - 1);
                    prop_assert_eq!(next.cloud_cache.label, Some(trace.steps[t].cloud_pred));
                    prop_assert_eq!(next.robot_cache.age, state.robot_cache.age + 1);
                }
                _ => {
                    prop_assert_eq!(next.robot_cache.age, state.robot_cache.age + 1);
                    prop_assert_eq!(next.cloud_cache.age, state.cloud_cache.age + 1);
                    prop_assert_eq!(next.budget_left, state.budget_left);
                }
            }
            let x = encode_state(&next, horizon, budget, 1.0);
            prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            state = next;
        }
        prop_assert!(cloud <= budget);
        prop_assert!(env.step(Action::UsePastRobot).is_err());
        let total = env.tally().total_reward(&params);
        prop_assert!((total - step_sum).abs() < 1e-9);
        let decomposed = -params.alpha * env.tally().loss_sum as f64 - params.beta * env.tally().cost_sum(&params);
        prop_assert!((total - decomposed).abs() < 1e-9);
        prop_assert_eq!(env.tally().steps(), horizon);
    }

    #[test]
    fn dp_matches_brute_force(trace in arb_trace(6), budget in 0usize..4) {
        let params = RewardParams::default();
        let dp = oracle_dp(&trace, &params, budget).unwrap();
        let bf = brute_force_oracle(&trace, &params, budget).unwrap();
        prop_assert_eq!(dp.value, bf.value);
        prop_assert_eq!(run_actions(&trace, budget, &dp.actions, &params), dp.value);
    }

    #[test]
    fn dp_value_is_monotone_in_budget(trace in arb_trace(30), budget in 0usize..8) {
        let params = RewardParams::default();
        let low = oracle_dp(&trace, &params, budget).unwrap().value;
        let high = oracle_dp(&trace, &params, budget + 1).unwrap().value;
        prop_assert!(high >= low);
    }

    #[test]
    fn dp_dominates_arbitrary_action_sequences(
        trace in arb_trace(30),
        budget in 0usize..6,
        actions in prop::collection::vec(arb_action(), 30),
    ) {
        let params = RewardParams::default();
        let best = oracle_dp(&trace, &params, budget).unwrap().value;
        let horizon = trace.horizon();
        prop_assert!(run_actions(&trace, budget, &actions[..horizon], &params) <= best);
    }

    #[test]
    fn trace_file_round_trip(traces in prop::collection::vec(arb_trace(12), 1..4)) {
        let mut buf = Vec::new();
        write_traces(&traces, &mut buf).unwrap();
        let back = read_traces(std::io::Cursor::new(buf), std::path::Path::new("memory")).unwrap();
        prop_assert_eq!(back, traces);
    }

    #[test]
    fn aggregates_are_permutation_invariant(
        rewards in prop::collection::vec((0usize..3, 0usize..4, 0usize..2, -300.0f64..0.0), 1..40),
        rotate in 0usize..40,
    ) {
        let names = ["a", "b", "oracle"];
        let episodes: Vec<EpisodeResult> = rewards
            .iter()
            .enumerate()
            .map(|(i, &(p, tr, f, r))| EpisodeResult {
                trace_id: format!("t{tr}"),
                budget_fraction: [0.2, 1.0][f],
                budget: 1,
                policy: names[p].into(),
                trial: i,
                total_reward: r,
                loss_sum: 0,
                cost_sum: -r / 7.0,
                step_reward_sum: r,
                action_counts: [0; 4],
                action_log: Vec::new(),
            })
            .collect();
        // Empty cells aggregate to NaN, so compare the exported text.
        let build = |eps: Vec<EpisodeResult>| {
            let r = BenchmarkReport::from_episodes(
                eps,
                names.iter().map(|s| s.to_string()).collect(),
                vec!["a".into()],
                vec![0.2, 1.0],
                1,
                &RewardParams::default(),
            );
            (rewards_csv(&r), summary_csv(&r), ratios_csv(&r), r.checks)
        };
        let mut permuted = episodes.clone();
        let k = rotate % permuted.len();
        permuted.rotate_left(k);
        permuted.reverse();
        prop_assert_eq!(build(permuted), build(episodes));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    /// With an unconstrained budget the heuristic offloads about q% of calibration steps.
    #[test]
    fn threshold_offload_rate_tracks_percentile(q in 5.0f64..95.0, base in 0u64..1_000_000) {
        let gen = GenConfig::default();
        let calib = generate_dataset(&gen, 100, base * 1000).unwrap();
        let cfg = calibrate_threshold(&calib, q).unwrap();
        let mut queried = 0;
        let mut steps = 0;
        for tr in &calib {
            let mut env = reset(tr, tr.horizon(), RewardParams::default()).unwrap().0;
            while !env.is_done() {
                let a = threshold_policy(env.state(), tr.steps[env.t()].robot_conf, &cfg);
                queried += usize::from(env.step(a).unwrap().info.executed == Action::QueryCloud);
                steps += 1;
            }
        }
        let rate = queried as f64 / steps as f64;
        prop_assert!((rate - q / 100.0).abs() <= 0.02, "q {} rate {}", q, rate);
    }
}
