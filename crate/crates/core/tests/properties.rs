use moejam::channel::{path_loss, sinr, ChannelRealization, Point, ScenarioConfig};
use moejam::diffusion::{DiffusionPolicy, DiffusionSchedule};
use moejam::env::{Env, EnvConfig};
use moejam::nn::{soft_update, Activation, Mlp};
use moejam::oracle::{grid_search, DEFAULT_BUDGET};
use moejam::report::{read_records, write_records, RunRecord};
use moejam::secrecy::{reward, secrecy_rate, PowerAllocation};
use moejam::trainer::replay::ReplayBuffer;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gains(n_aps: usize, n_rx: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(1e-10f64..1e-5, n_aps * n_rx).prop_map(move |v| Array2::from_shape_vec((n_aps, n_rx), v).unwrap())
}

fn powers(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

fn scenario_with_eves(n_eves: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.eve_positions = (0..n_eves).map(|i| Point::new(20.0 + i as f64, 20.0)).collect();
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_loss_decreases(d in 1.0f64..500.0, extra in 1e-3f64..100.0, alpha in 2.0f64..5.0) {
        let cfg = ScenarioConfig { path_loss_exponent: alpha, ..ScenarioConfig::default() };
        let near = path_loss(d, &cfg).unwrap();
        let far = path_loss(d + extra, &cfg).unwrap();
        prop_assert!(near > far && far > 0.0);
    }

    #[test]
    fn sinr_is_scale_free(g in gains(3, 5), p in powers(3), c in 1e-3f64..1e3, rx in 0usize..5, ap in 0usize..3) {
        let ch = ChannelRealization::from_gains(g);
        let scaled: Vec<f64> = p.iter().map(|x| x * c).collect();
        let a = sinr(rx, ap, &p, &ch, 1e-9);
        let b = sinr(rx, ap, &scaled, &ch, 1e-9 * c);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn jamming_never_helps_the_victim(g in gains(3, 5), p in powers(3), bump in 0.0f64..1.0, rx in 0usize..5, ap in 0usize..3) {
        let ch = ChannelRealization::from_gains(g);
        let other = (ap + 1) % 3;
        let mut louder = p.clone();
        louder[other] = (louder[other] + bump).min(1.0);
        prop_assert!(sinr(rx, ap, &louder, &ch, 1e-9) <= sinr(rx, ap, &p, &ch, 1e-9));
    }

    #[test]
    fn eavesdropper_order_is_irrelevant(g in gains(3, 6), p in powers(3), user in 0usize..3) {
        let cfg = scenario_with_eves(3);
        let pa = PowerAllocation::new(p, &cfg).unwrap();
        let mut swapped = g.clone();
        for a in 0..3 {
            swapped[[a, 3]] = g[[a, 5]];
            swapped[[a, 5]] = g[[a, 3]];
        }
        let x = secrecy_rate(user, &pa, &ChannelRealization::from_gains(g), &cfg);
        let y = secrecy_rate(user, &pa, &ChannelRealization::from_gains(swapped), &cfg);
        prop_assert_eq!(x, y);
    }

    #[test]
    fn another_eavesdropper_never_raises_secrecy(g in gains(3, 6), p in powers(3), user in 0usize..3) {
        let two = scenario_with_eves(2);
        let three = scenario_with_eves(3);
        let pa = PowerAllocation::new(p, &two).unwrap();
        let fewer = ChannelRealization::from_gains(g.slice(ndarray::s![.., ..5]).to_owned());
        let more = ChannelRealization::from_gains(g);
        prop_assert!(secrecy_rate(user, &pa, &more, &three) <= secrecy_rate(user, &pa, &fewer, &two));
    }

    #[test]
    fn zero_weight_reward_is_the_secrecy_sum(g in gains(3, 5), p in powers(3)) {
        let cfg = ScenarioConfig::default();
        let m = reward(&PowerAllocation::new(p, &cfg).unwrap(), &ChannelRealization::from_gains(g), &cfg, 0.0);
        prop_assert_eq!(m.reward, m.secrecy_rate.iter().sum::<f64>());
        prop_assert!(m.secrecy_rate.iter().all(|&c| c >= 0.0));
        prop_assert!(m.secure_ee.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn diffusion_actions_stay_in_the_box(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sched = DiffusionSchedule::linear(5, 1e-2, 0.7).unwrap();
        let mut p = DiffusionPolicy::new(18, 3, 8, &[16], sched, &mut rng);
        for w in p.denoiser.params_mut() {
            *w *= scale;
        }
        let state: Vec<f64> = (0..18).map(|i| (i as f64 - 9.0) * scale).collect();
        let a = p.sample_action(&state, &mut rng).unwrap();
        prop_assert!(a.iter().all(|x| (0.0..=1.0).contains(x)), "{:?}", a);
    }

    #[test]
    fn replay_yields_only_inserted(cap in 1usize..40, n in 1usize..100, seed in any::<u64>()) {
        let mut b = ReplayBuffer::new(cap, 1, 1);
        for i in 0..n {
            b.push(&[i as f64], &[i as f64], i as f64, &[i as f64], false);
        }
        prop_assert_eq!(b.len(), n.min(cap));
        let batch = b.sample(16, &mut ChaCha8Rng::seed_from_u64(seed));
        let oldest_kept = n.saturating_sub(cap) as f64;
        for r in batch.rewards.iter() {
            prop_assert!(*r >= oldest_kept && *r < n as f64);
        }
    }

    #[test]
    fn soft_update_contracts_by_one_minus_tau(seed in any::<u64>(), tau in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut target = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        let online = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        let before: Vec<f64> = target.params().zip(online.params()).map(|(t, o)| t - o).collect();
        soft_update(&mut target, &online, tau).unwrap();
        for ((t, o), d) in target.params().zip(online.params()).zip(before) {
            prop_assert!(((t - o) - (1.0 - tau) * d).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_round_trips_any_finite_values(r in -1e300f64..1e300, sr in 0.0f64..1e6, see in 0.0f64..1e9, e in 0usize..5000) {
        let rec = RunRecord {
            algorithm: "gdm".into(),
            seed: 9,
            episode: e,
            mean_reward: r,
            mean_sr_sum: sr,
            mean_see_sum: see,
            expert_histogram: [1, 2, 3],
        };
        let mut buf = Vec::new();
        write_records(&mut buf, std::slice::from_ref(&rec)).unwrap();
        prop_assert_eq!(read_records(buf.as_slice()).unwrap(), vec![rec]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn finer_grids_never_lose(g in gains(3, 5)) {
        let cfg = ScenarioConfig::default();
        let ch = ChannelRealization::from_gains(g);
        let best = |r| grid_search(&ch, &cfg, 1.0, r, DEFAULT_BUDGET).unwrap().best_reward;
        let (a, b, c) = (best(5), best(11), best(21));
        prop_assert!(a <= b && b <= c, "{} {} {}", a, b, c);
    }

    #[test]
    fn grid_search_matches_sorted_enumeration(g in gains(3, 5), res in 2usize..7) {
        let cfg = ScenarioConfig::default();
        let ch = ChannelRealization::from_gains(g);
        let found = grid_search(&ch, &cfg, 1.0, res, DEFAULT_BUDGET).unwrap();
        // Independent oracle: score every point, then pick by an explicit key.
        let level = |i: usize| i as f64 / (res - 1) as f64;
        let mut points = Vec::new();
        for i in 0..res { for j in 0..res { for k in 0..res {
            let p = PowerAllocation::new(vec![level(i), level(j), level(k)], &cfg).unwrap();
            points.push((reward(&p, &ch, &cfg, 1.0).reward, i + j + k, [i, j, k]));
        }}}
        points.reverse();
        points.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let (r, _, idx) = points[0];
        prop_assert_eq!(found.best_reward, r);
        prop_assert_eq!(found.best_allocation.powers(), &[level(idx[0]), level(idx[1]), level(idx[2])][..]);
        prop_assert_eq!(found.evaluations as usize, res * res * res);
    }

    #[test]
    fn executed_actions_never_clamp_inside_the_box(actions in prop::collection::vec(powers(3), 1..50), seed in any::<u64>()) {
        let mut env = Env::new(ScenarioConfig::default(), EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(&mut rng);
        for a in &actions {
            env.step(a, &mut rng);
        }
        prop_assert_eq!(env.clamp_count(), 0);
        env.step(&[1.5, -0.1, 0.5], &mut rng);
        prop_assert_eq!(env.clamp_count(), 2);
    }
}

#[test]
fn default_schedule_ends_near_pure_noise() {
    let s = DiffusionSchedule::linear(5, 1e-2, 0.7).unwrap();
    for t in 1..=5 {
        assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    assert!(s.alpha_bar(5) < 0.1);
}
