//! Minimal end-to-end run: train a DQN briefly in room A, then compare the
//! frozen greedy policy against random power selection on paired episodes.
//!
//!     cargo run --release -p fedcell --example quickstart

use fedcell::agent::{Agent, DqnConfig, GreedyPolicy};
use fedcell::baselines::RandomPolicy;
use fedcell::derive_seed;
use fedcell::env::{run_policy_episodes, ActionSpace, ActionSpaceMode, PowerEnv};
use fedcell::geometry::{builtin_layout, MobilityConfig, RoomId};
use fedcell::radio::{CqiTable, RadioParams};

fn room_a_env(seed: u64) -> PowerEnv {
    PowerEnv::new(
        builtin_layout(RoomId::A),
        RadioParams {
            noise_power_dbm: -50.0,
            ..RadioParams::default()
        },
        CqiTable::standard().clone(),
        MobilityConfig {
            seed,
            ..MobilityConfig::default()
        },
        ActionSpace::build(&[19.5, 21.0, 22.5, 24.0], 2, ActionSpaceMode::DedupKeepMax).unwrap(),
        100,
        seed,
    )
    .unwrap()
}

fn main() {
    let seed = 1u64;
    let episodes = 150usize;

    let mut env = room_a_env(seed);
    let cfg = DqnConfig {
        gamma: 0.5,
        epsilon_decay_episodes: (episodes as f64 * 0.8) as u64,
        ..DqnConfig::default()
    };
    let mut agent = Agent::new(env.state_dim(), env.n_actions(), cfg, seed).unwrap();
    println!(
        "training room A: {} UEs, {} actions, {} episodes",
        env.n_ues(),
        env.n_actions(),
        episodes
    );
    for block in 0..(episodes / 50) {
        let logs = agent.run_episodes(&mut env, 50).unwrap();
        let mean_q1: f64 = logs.iter().map(|l| l.mean_q1_mbps).sum::<f64>() / logs.len() as f64;
        println!(
            "  episodes {:>3}-{:>3}: mean Q1 {mean_q1:.2} Mbps, epsilon {:.2}",
            block * 50,
            block * 50 + 49,
            agent.epsilon()
        );
    }

    let eval_seed = derive_seed(seed, "eval");
    let eval = |name: &str, logs: &[fedcell::env::EpisodeLog]| {
        let q1: f64 = logs.iter().map(|l| l.mean_q1_mbps).sum::<f64>() / logs.len() as f64;
        let avg: f64 = logs.iter().map(|l| l.mean_rate_mbps).sum::<f64>() / logs.len() as f64;
        println!("  {name:<8} Q1 {q1:.2} Mbps, mean rate {avg:.2} Mbps");
    };
    println!("frozen-policy evaluation, 20 paired episodes:");
    let mut rl_env = room_a_env(eval_seed);
    let mut greedy = GreedyPolicy::new(agent.network().clone());
    eval("dqn", &run_policy_episodes(&mut rl_env, &mut greedy, 20).unwrap());
    let mut random_env = room_a_env(eval_seed);
    let mut random = RandomPolicy::new(derive_seed(seed, "eval/random"));
    eval("random", &run_policy_episodes(&mut random_env, &mut random, 20).unwrap());
}
