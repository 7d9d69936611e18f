//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Trains the full default sweep, so expect well over an hour on one core.
//! `MOEJAM_ACCEPTANCE_EPISODES` shortens every training for smoke runs; the
//! criteria are only meaningful at the default 2000.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moejam::channel::{
    mean_channel, path_loss, realize_channel, sample_small_scale, shannon_capacity, sinr, ChannelRealization, Fading,
    Point, ScenarioConfig,
};
use moejam::config::RunConfig;
use moejam::gradcheck;
use moejam::oracle::{policy_gap, PolicyGap};
use moejam::policy::{Algorithm, Checkpoint};
use moejam::report::{self, RunRecord};
use moejam::secrecy::{reward, secrecy_from_capacities, secure_ee, PowerAllocation};
use moejam::sweep::{checkpoint_name, jobs, run_csv_name, run_sweep, SweepOutcome};
use moejam::trainer::{train, MoeConfig};
use ndarray::array;

const SEEDS: [u64; 3] = [1, 2, 3];

struct Line {
    ok: bool,
    detail: String,
}

fn line(ok: bool, detail: impl Into<String>) -> Line {
    Line { ok, detail: detail.into() }
}

fn base_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    if let Some(n) = std::env::var("MOEJAM_ACCEPTANCE_EPISODES").ok().and_then(|v| v.parse().ok()) {
        cfg.training.episodes = n;
    }
    cfg
}

fn ordering(sweep: &SweepOutcome) -> Line {
    if !sweep.all_ok() {
        return line(false, format!("sweep had failed runs:\n{}", sweep.summary));
    }
    let rows = report::read_records(fs::File::open(&sweep.merged).unwrap()).unwrap();
    let cmp = report::compare(&rows).unwrap();
    let m = |a: &str| cmp.get(a).map(|s| s.final_mean).unwrap_or(f64::NAN);
    let (moe, gdm, ddpg) = (m("moe_gdm"), m("gdm"), m("ddpg"));
    line(
        moe >= 1.05 * gdm && gdm > ddpg,
        format!("final means moe_gdm={moe:.3} gdm={gdm:.3} ddpg={ddpg:.3}; moe/gdm={:.4} (need >= 1.05), gdm>ddpg={}", moe / gdm, gdm > ddpg),
    )
}

fn oracle_proximity(out: &Path) -> Line {
    let mut cfg = base_config();
    cfg.env.freeze_channel = true;
    let run = run_sweep(&cfg, &[(Algorithm::Gdm, 1)], out, 1).unwrap();
    if let Err(e) = &run.runs[0].result {
        return line(false, format!("frozen gdm failed: {e}"));
    }
    let ckpt = Checkpoint::load(&out.join(checkpoint_name(Algorithm::Gdm, 1))).unwrap();
    let ch = mean_channel(&cfg.scenario).unwrap();
    let t = Instant::now();
    match policy_gap(&ckpt.policy, &ch, &cfg.scenario, &cfg.env, 21, cfg.oracle.rollout_seed).unwrap() {
        PolicyGap::Ratio { ratio, policy_reward, best_reward } => line(
            ratio >= 0.9,
            format!("policy_gap={ratio:.4} (policy {policy_reward:.3} / grid {best_reward:.3}), oracle {:.2}s", t.elapsed().as_secs_f64()),
        ),
        PolicyGap::Degenerate => line(false, "grid optimum is zero"),
    }
}

fn gradients() -> Line {
    let t = Instant::now();
    let reports = gradcheck::run_suite(10, 0);
    let parts: Vec<String> = reports.iter().map(|r| format!("{}={:.2e}/{:.0e}", r.name, r.max_rel_error, r.tolerance)).collect();
    line(
        reports.len() == gradcheck::CHECKS.len() && reports.iter().all(|r| r.passed() && r.draws >= 10),
        format!("{} in {:.1}s", parts.join(" "), t.elapsed().as_secs_f64()),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn unit_suite() -> Line {
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let cfg = ScenarioConfig::default();
    expect("path_loss d=1", close(path_loss(1.0, &cfg).unwrap(), 1e-3));
    expect("path_loss d=10", close(path_loss(10.0, &cfg).unwrap(), 1e-6));
    let sq = ScenarioConfig { path_loss_exponent: 2.0, ref_gain: 1.0, ..cfg.clone() };
    expect("path_loss d=2 alpha=2", close(path_loss(2.0, &sq).unwrap(), 0.25));
    expect("path_loss below reference", path_loss(0.5, &cfg).is_err());

    let unit = realize_channel(&cfg, Fading::Unit, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut pure = true;
    for a in 0..cfg.n_aps() {
        for r in 0..cfg.n_receivers() {
            let d = cfg.ap_positions[a].distance(&cfg.receiver(r));
            pure &= unit.gain(a, r) == path_loss(d, &cfg).unwrap();
        }
    }
    expect("unit fading is pure path loss", pure);
    let same = |s| realize_channel(&cfg, Fading::Rayleigh, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
    expect("realization determinism", same(5) == same(5));

    let one = ChannelRealization::from_gains(array![[1.0]]);
    expect("sinr single ap", close(sinr(0, 0, &[1.0], &one, 1.0), 1.0));
    let two = ChannelRealization::from_gains(array![[2.0], [1.0]]);
    expect("sinr 2/(1+1)", close(sinr(0, 0, &[1.0, 1.0], &two, 1.0), 1.0));
    expect("capacity 0", close(shannon_capacity(0.0).unwrap(), 0.0));
    expect("capacity 1", close(shannon_capacity(1.0).unwrap(), 1.0));
    expect("capacity 3", close(shannon_capacity(3.0).unwrap(), 2.0));
    expect("capacity negative", shannon_capacity(-1.0).is_err());

    expect("secrecy 2-max(.5,.3)", close(secrecy_from_capacities(2.0, &[0.5, 0.3]), 1.5));
    expect("secrecy clamps", secrecy_from_capacities(1.0, &[2.0, 0.1]) == 0.0);

    // One AP, one user at distance 10, no eavesdropper.
    let single = ScenarioConfig {
        ap_positions: vec![Point::new(0.0, 0.0)],
        user_positions: vec![Point::new(10.0, 0.0)],
        eve_positions: vec![],
        ..cfg.clone()
    };
    let ch = mean_channel(&single).unwrap();
    let g = path_loss(10.0, &single).unwrap();
    let closed = (1.0 + single.p_max * g / single.noise_power).log2() * (1.0 + 1.0 / single.p_max);
    let full = PowerAllocation::new(vec![single.p_max], &single).unwrap();
    expect("single link closed form", close(reward(&full, &ch, &single, 1.0).reward, closed));
    // Secrecy rate 1.5 at 0.5 W: tune the gain so log2(1 + 0.5 g / noise) = 1.5.
    let g15 = (2f64.powf(1.5) - 1.0) * single.noise_power / 0.5;
    let tuned = ChannelRealization::from_gains(array![[g15]]);
    let half = PowerAllocation::new(vec![0.5], &single).unwrap();
    expect("secure_ee 1.5/0.5", close(secure_ee(0, &half, &tuned, &single), 3.0));
    let off = PowerAllocation::new(vec![0.0], &single).unwrap();
    expect("secure_ee p=0", secure_ee(0, &off, &ch, &single) == 0.0);
    let mean = mean_channel(&cfg).unwrap();
    expect("zero powers reward", reward(&PowerAllocation::uniform(0.0, 3), &mean, &cfg, 1.0).reward == 0.0);

    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 1_000_000;
    let (mut sum, mut sq_sum, mut below) = (0.0, 0.0, 0u64);
    for _ in 0..n {
        let x = sample_small_scale(&mut rng);
        sum += x;
        sq_sum += x * x;
        below += u64::from(x <= 1.0);
    }
    let m = sum / n as f64;
    let var = sq_sum / n as f64 - m * m;
    let cdf = below as f64 / n as f64;
    expect("rayleigh mean", (m - 1.0).abs() <= 0.01);
    expect("rayleigh variance", (var - 1.0).abs() <= 0.02);
    expect("rayleigh cdf(1)", (cdf - 0.6321).abs() <= 0.005);

    let detail = format!("fading mean={m:.4} var={var:.4} cdf(1)={cdf:.4} ({:.2}s)", t.elapsed().as_secs_f64());
    if failures.is_empty() {
        line(true, format!("all exact examples hold; {detail}"))
    } else {
        line(false, format!("failed: {}; {detail}", failures.join(", ")))
    }
}

fn determinism(sweep_dir: &Path, rerun_dir: &Path) -> Line {
    let (alg, seed) = (Algorithm::MoeGdm, 1);
    let name = run_csv_name(alg, seed);
    let rerun = run_sweep(&base_config(), &[(alg, seed)], rerun_dir, 1).unwrap();
    let a = fs::read(sweep_dir.join(&name)).unwrap_or_default();
    let b = fs::read(rerun_dir.join(&name)).unwrap_or_default();
    line(rerun.all_ok() && !a.is_empty() && a == b, format!("{name}: {} bytes, identical={}", a.len(), a == b))
}

fn reward_columns(records: &[RunRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| format!("{},{},{},{}", r.episode, r.mean_reward, r.mean_sr_sum, r.mean_see_sum))
        .collect()
}

fn degeneracy() -> Line {
    let mut cfg = base_config();
    cfg.training.episodes = cfg.training.episodes.min(100);
    let gdm = train(Algorithm::Gdm, 1, &cfg.setup(), |_| {}).unwrap();
    cfg.moe = MoeConfig { experts: 1, load_balance: 0.0, ..MoeConfig::default() };
    let moe = train(Algorithm::MoeGdm, 1, &cfg.setup(), |_| {}).unwrap();
    let (a, b) = (reward_columns(&gdm.records), reward_columns(&moe.records));
    line(a == b && !a.is_empty(), format!("{} episodes, reward columns identical={}", a.len(), a == b))
}

fn constraint_safety(sweep: &SweepOutcome) -> Line {
    let clamps: u64 = sweep.runs.iter().filter_map(|r| r.result.as_ref().ok()).map(|s| s.clamp_count).sum();
    let steps: u64 = sweep.runs.iter().filter_map(|r| r.result.as_ref().ok()).map(|s| s.env_steps).sum();
    line(sweep.all_ok() && clamps == 0, format!("{clamps} clamps over {steps} environment steps"))
}

fn compute_parity(sweep: &SweepOutcome) -> Line {
    let mut parts = Vec::new();
    let mut ok = sweep.all_ok();
    for seed in SEEDS {
        let per_action = |alg| {
            sweep
                .runs
                .iter()
                .find(|r| r.algorithm == alg && r.seed == seed)
                .and_then(|r| r.result.as_ref().ok())
                .map(|s| (s.act_denoiser_evaluations, s.policy_actions))
        };
        match (per_action(Algorithm::MoeGdm), per_action(Algorithm::Gdm)) {
            (Some((me, ma)), Some((ge, ga))) if ma > 0 && ga > 0 => {
                // Cross-multiplied so no division rounding can hide a mismatch.
                ok &= me * ga == ge * ma;
                parts.push(format!("seed {seed}: moe {}/action gdm {}/action", me as f64 / ma as f64, ge as f64 / ga as f64));
            }
            _ => {
                ok = false;
                parts.push(format!("seed {seed}: missing stats"));
            }
        }
    }
    line(ok, parts.join("; "))
}

fn main() -> ExitCode {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    let cfg = base_config();
    println!("acceptance: {} episodes per run, outputs in {}", cfg.training.episodes, root.display());

    let mut lines: Vec<(usize, Line)> = Vec::new();
    let mut report = |n: usize, l: Line| {
        println!("criterion {n}: {} {}", if l.ok { "PASS" } else { "FAIL" }, l.detail);
        lines.push((n, l));
    };

    report(3, gradients());
    report(4, unit_suite());
    report(6, degeneracy());

    let t = Instant::now();
    let sweep_dir = root.join("sweep");
    let sweep = run_sweep(&cfg, &jobs(&Algorithm::ALL, &SEEDS), &sweep_dir, cfg.run.workers).unwrap();
    println!("sweep: {} runs in {:.0}s", sweep.runs.len(), t.elapsed().as_secs_f64());
    print!("{}", sweep.summary);
    report(1, ordering(&sweep));
    report(7, constraint_safety(&sweep));
    report(8, compute_parity(&sweep));
    report(5, determinism(&sweep_dir, &root.join("rerun")));
    report(2, oracle_proximity(&root.join("frozen")));

    lines.sort_by_key(|(n, _)| *n);
    println!("summary:");
    for (n, l) in &lines {
        println!("  criterion {n}: {}", if l.ok { "PASS" } else { "FAIL" });
    }
    if lines.iter().all(|(_, l)| l.ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
