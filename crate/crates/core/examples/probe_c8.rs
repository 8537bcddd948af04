use fedcell::agent::{Agent, DqnConfig, GreedyPolicy};
use fedcell::derive_seed;
use fedcell::env::{run_policy_episodes, ActionSpace, ActionSpaceMode, PowerEnv};
use fedcell::federation::{adapt_agent, run_federation, FedClient, FederationConfig};
use fedcell::geometry::{builtin_layout, MobilityConfig, RoomId};
use fedcell::nn::Network;
use fedcell::radio::{CqiTable, RadioParams};
use rayon::prelude::*;

fn env_for(room: RoomId, seed: u64) -> PowerEnv {
    PowerEnv::new(
        builtin_layout(room),
        RadioParams { noise_power_dbm: -50.0, ..RadioParams::default() },
        CqiTable::standard().clone(),
        MobilityConfig { n_ues: 30, seed, ..MobilityConfig::default() },
        ActionSpace::build(&[19.5, 21.0, 22.5, 24.0], 2, ActionSpaceMode::DedupKeepMax).unwrap(),
        100,
        seed,
    ).unwrap()
}

fn dqn(total: usize, eps_start: f64) -> DqnConfig {
    DqnConfig {
        gamma: 0.5,
        epsilon_start: eps_start,
        epsilon_decay_episodes: (total as f64 * 0.8) as u64,
        ..DqnConfig::default()
    }
}

fn smooth_full(raw: &[f64], w: usize) -> Vec<f64> {
    (w - 1..raw.len()).map(|e| raw[e + 1 - w..=e].iter().sum::<f64>() / w as f64).collect()
}

fn main() {
    let fed_seed = 10u64;
    let mut clients: Vec<FedClient> = [RoomId::A, RoomId::B, RoomId::C, RoomId::D]
        .into_iter().enumerate()
        .map(|(i, room)| {
            let seed = derive_seed(fed_seed, &format!("client/{i}"));
            let env = env_for(room, seed);
            let agent = Agent::new(env.state_dim(), env.n_actions(), dqn(400, 0.9), seed).unwrap();
            FedClient { name: format!("{room}"), env, agent }
        }).collect();
    let initial = Network::init_seeded(clients[0].agent.spec().clone(), derive_seed(fed_seed, "global")).to_params();
    let fed = run_federation(&FederationConfig { episodes_per_round: 25, rounds: 16 }, &mut clients, initial).unwrap();
    let global = fed.final_global().clone();
    eprintln!("federation done (E=25, R=16)");

    // Frozen-policy sanity: how good is the global in room E right away?
    let mut ge = env_for(RoomId::E, 555);
    let mut gp = GreedyPolicy::from_params(&global);
    let glogs = run_policy_episodes(&mut ge, &mut gp, 20).unwrap();
    let gq1: f64 = glogs.iter().map(|l| l.mean_q1_mbps).sum::<f64>() / 20.0;
    let grew: f64 = glogs.iter().map(|l| l.cumulative_reward_mbps).sum::<f64>() / 20.0;
    eprintln!("global greedy in E: mean q1 {gq1:.2}, mean ep reward {grew:+.2}");

    let runs: Vec<(u64, Vec<f64>, Vec<f64>)> = [1u64, 2, 3].par_iter().map(|&seed| {
        let n = 250usize;
        let env_seed = derive_seed(seed, "adapt/env");
        let cfg = dqn(n, 0.1);
        let mut env_pre = env_for(RoomId::E, env_seed);
        let mut pre = adapt_agent(&global, &env_pre, cfg.clone(), seed).unwrap();
        let pre_logs = pre.run_episodes(&mut env_pre, n).unwrap();
        let mut env_scr = env_for(RoomId::E, env_seed);
        let mut scr = Agent::new(env_scr.state_dim(), env_scr.n_actions(), cfg, seed).unwrap();
        let scr_logs = scr.run_episodes(&mut env_scr, n).unwrap();
        (seed,
         pre_logs.iter().map(|l| l.cumulative_reward_mbps).collect(),
         scr_logs.iter().map(|l| l.cumulative_reward_mbps).collect())
    }).collect();

    const W: usize = 35;
    let mut pre_finals = vec![];
    for (seed, pre, scr) in &runs {
        let ps = smooth_full(pre, W);
        let ss = smooth_full(scr, W);
        let blocks = |v: &[f64]| -> Vec<String> {
            v.chunks(50).map(|c| format!("{:+.2}", c.iter().sum::<f64>() / c.len() as f64)).collect()
        };
        println!("seed {seed} pre smoothed blocks:     {:?} final {:+.2}", blocks(&ps), ps.last().unwrap());
        println!("seed {seed} scratch smoothed blocks: {:?} final {:+.2}", blocks(&ss), ss.last().unwrap());
        pre_finals.push(*ps.last().unwrap());
    }
    pre_finals.sort_by(f64::total_cmp);
    let tau = 0.8 * pre_finals[1];
    println!("threshold {:+.3}", tau);
    for (seed, pre, scr) in &runs {
        let t = |raw: &[f64]| {
            smooth_full(raw, W).iter().position(|&v| v >= tau).map(|i| i + W).unwrap_or(raw.len() + 1)
        };
        println!("seed {seed}: episodes-to-threshold pre {} scratch {}", t(pre), t(scr));
    }
}
