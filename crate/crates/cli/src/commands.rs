//! The train / federate / eval / adapt / report commands.
//!
//! Every command is a function over (config, output dir) so the binary
//! stays a thin argument parser and tests can call commands directly.

use crate::config::{ExperimentConfig, PolicyKind};
use crate::metrics::{build_report, collect_metrics, write_metrics_csv, MetricsRow};
use crate::output::OutputDir;
use anyhow::{anyhow, bail, Context, Result};
use fedcell::agent::{Agent, GreedyPolicy};
use fedcell::baselines::{ExhaustivePolicy, RandomPolicy};
use fedcell::derive_seed;
use fedcell::env::{
    run_policy_episodes_traced, ActionSpace, EpisodeLog, Policy, PowerEnv, StepTrace,
};
use fedcell::federation::{
    adapt_agent, run_federation, write_federation_csv, FedClient,
};
use fedcell::geometry::MobilityConfig;
use fedcell::nn::{Network, NetworkSpec, ParameterSet};
use log::info;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Builds the environment for one (room, seed) pair.
pub fn build_env(cfg: &ExperimentConfig, room: &str, seed: u64) -> Result<PowerEnv> {
    let layout = cfg.resolve_room(room)?;
    let table = cfg.cqi_table()?;
    let space = ActionSpace::build(
        &cfg.power_levels_dbm,
        layout.n_cells(),
        cfg.action_space_mode,
    )?;
    let mobility = MobilityConfig {
        n_ues: cfg.mobility.n_ues,
        speed: cfg.mobility.speed_m_per_step,
        offset_sigma: cfg.mobility.offset_sigma_m,
        ue_height: cfg.mobility.ue_height_m,
        seed,
    };
    Ok(PowerEnv::new(
        layout,
        cfg.radio,
        table,
        mobility,
        space,
        cfg.episode_steps,
        seed,
    )?)
}

fn write_episode_csv(
    logs: &[EpisodeLog],
    policy: Option<&str>,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec![];
    if policy.is_some() {
        header.push("policy");
    }
    header.extend_from_slice(&[
        "episode",
        "cumulative_reward_mbps",
        "mean_q1_mbps",
        "mean_rate_mbps",
        "epsilon",
    ]);
    w.write_record(&header)?;
    for l in logs {
        let mut rec = vec![];
        if let Some(p) = policy {
            rec.push(p.to_string());
        }
        rec.extend_from_slice(&[
            l.episode.to_string(),
            format!("{:.6}", l.cumulative_reward_mbps),
            format!("{:.6}", l.mean_q1_mbps),
            format!("{:.6}", l.mean_rate_mbps),
            format!("{:.6}", l.epsilon),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace_csv(traces: &[Vec<StepTrace>], n_cells: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["episode".to_string(), "step".to_string(), "action".to_string()];
    for m in 0..n_cells {
        header.push(format!("p{m}_dbm"));
    }
    header.extend(["q1_mbps".to_string(), "mean_mbps".to_string(), "reward_mbps".to_string()]);
    w.write_record(&header)?;
    for (episode, trace) in traces.iter().enumerate() {
        for t in trace {
            let mut rec = vec![
                episode.to_string(),
                t.step.to_string(),
                t.action.to_string(),
            ];
            for p in &t.powers_dbm {
                rec.push(format!("{p:.1}"));
            }
            rec.extend([
                format!("{:.6}", t.q1_mbps),
                format!("{:.6}", t.mean_mbps),
                format!("{:.6}", t.reward_mbps),
            ]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Applies a `--seed` override: a single seed replaces the whole list.
fn effective_seeds(cfg: &ExperimentConfig, seed_override: Option<u64>) -> Vec<u64> {
    match seed_override {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    }
}

/// Trains one independent agent per (room, seed), writing an episode log
/// and a final checkpoint for each.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    seed_override: Option<u64>,
    force: bool,
) -> Result<()> {
    let seeds = effective_seeds(cfg, seed_override);
    let mut tracker = OutputDir::prepare(out, force)?;

    let mut jobs = Vec::new();
    for room in &cfg.rooms {
        for &seed in &seeds {
            jobs.push((room.clone(), seed));
        }
    }
    let paths: Vec<(PathBuf, PathBuf)> = jobs
        .iter()
        .map(|(room, seed)| {
            let label = ExperimentConfig::room_label(room);
            (
                tracker.file(format!("train_{label}_seed{seed}.csv")),
                tracker.file(format!("ckpt_{label}_seed{seed}.ckpt")),
            )
        })
        .collect();

    let results: Vec<Result<()>> = jobs
        .par_iter()
        .zip(&paths)
        .map(|((room, seed), (log_path, ckpt_path))| {
            let mut env = build_env(cfg, room, *seed)?;
            let mut agent = Agent::new(
                env.state_dim(),
                env.n_actions(),
                cfg.dqn_config(cfg.episodes),
                *seed,
            )?;
            let logs = agent.run_episodes(&mut env, cfg.episodes)?;
            write_episode_csv(&logs, None, log_path)?;
            agent.params().save(ckpt_path)?;
            info!("trained room {room} seed {seed} ({} episodes)", cfg.episodes);
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    tracker.commit();
    Ok(())
}

/// Runs FedAvg over the configured rooms, writing federation.csv, one
/// global checkpoint per round and per-client episode logs.
pub fn cmd_federate(
    cfg: &ExperimentConfig,
    out: &Path,
    seed_override: Option<u64>,
    force: bool,
) -> Result<()> {
    let seed = seed_override.unwrap_or_else(|| cfg.seeds[0]);
    let mut tracker = OutputDir::prepare(out, force)?;

    let total_episodes = cfg.federation.episodes_per_round * cfg.federation.rounds;
    let dqn_cfg = cfg.dqn_config(total_episodes);
    let mut clients = Vec::new();
    for (i, room) in cfg.rooms.iter().enumerate() {
        let client_seed = derive_seed(seed, &format!("client/{i}"));
        let env = build_env(cfg, room, client_seed)?;
        let agent = Agent::new(env.state_dim(), env.n_actions(), dqn_cfg.clone(), client_seed)?;
        clients.push(FedClient {
            name: ExperimentConfig::room_label(room),
            env,
            agent,
        });
    }
    let spec = clients[0].agent.spec().clone();
    let initial = Network::init_seeded(spec, derive_seed(seed, "global")).to_params();

    let outcome = run_federation(&cfg.federation_config(), &mut clients, initial)?;

    let fed_csv = tracker.file("federation.csv");
    write_federation_csv(&outcome.records, &fed_csv)?;
    for (round, global) in outcome.round_globals.iter().enumerate() {
        let path = tracker.file(format!("global_round_{round}.ckpt"));
        global.save(&path)?;
    }
    for (client, logs) in clients.iter().zip(&outcome.client_logs) {
        let path = tracker.file(format!("fed_client_{}.csv", client.name));
        write_episode_csv(logs, None, &path)?;
    }
    info!(
        "federated {} clients for {} rounds of {} episodes",
        clients.len(),
        cfg.federation.rounds,
        cfg.federation.episodes_per_round
    );
    tracker.commit();
    Ok(())
}

fn policy_for_eval(
    cfg: &ExperimentConfig,
    room: &str,
    seed: u64,
    checkpoint: Option<&Path>,
    env: &PowerEnv,
) -> Result<Box<dyn Policy>> {
    match cfg.policy {
        PolicyKind::Random => Ok(Box::new(RandomPolicy::new(derive_seed(seed, "eval/random")))),
        PolicyKind::Exhaustive => Ok(Box::new(ExhaustivePolicy::new(cfg.exhaustive_objective))),
        PolicyKind::Dqn => {
            let ckpt = checkpoint
                .ok_or_else(|| anyhow!("policy \"dqn\" requires --checkpoint"))?;
            let expected = NetworkSpec {
                input_dim: env.state_dim(),
                hidden_dims: cfg.dqn.hidden_dims.clone(),
                output_dim: env.n_actions(),
            };
            let path = if ckpt.is_dir() {
                let label = ExperimentConfig::room_label(room);
                let candidate = ckpt.join(format!("ckpt_{label}_seed{seed}.ckpt"));
                if !candidate.exists() {
                    bail!(
                        "no checkpoint for room {room} seed {seed} under {}",
                        ckpt.display()
                    );
                }
                candidate
            } else {
                ckpt.to_path_buf()
            };
            let bytes = std::fs::read(&path)
                .with_context(|| format!("reading checkpoint {}", path.display()))?;
            let params = ParameterSet::from_bytes_expecting(&bytes, &expected)?;
            Ok(Box::new(GreedyPolicy::from_params(&params)))
        }
    }
}

/// Frozen-policy evaluation over the configured rooms and seeds: emits
/// metrics.csv plus per-run episode logs (and step traces when enabled).
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    seed_override: Option<u64>,
    force: bool,
) -> Result<()> {
    let seeds = effective_seeds(cfg, seed_override);
    let mut tracker = OutputDir::prepare(out, force)?;

    let mut rows: Vec<MetricsRow> = Vec::new();
    for room in &cfg.rooms {
        let label = ExperimentConfig::room_label(room);
        for &seed in &seeds {
            // Evaluation streams are decoupled from training streams.
            let eval_seed = derive_seed(seed, "eval");
            let mut env = build_env(cfg, room, eval_seed)?;
            let mut policy = policy_for_eval(cfg, room, seed, checkpoint, &env)?;
            let (logs, traces) =
                run_policy_episodes_traced(&mut env, policy.as_mut(), cfg.eval_episodes)?;
            let episodes_path = tracker.file(format!(
                "eval_{}_{label}_seed{seed}.csv",
                cfg.policy.as_str()
            ));
            write_episode_csv(&logs, Some(policy.name()), &episodes_path)?;
            if cfg.write_step_trace {
                let trace_path = tracker.file(format!(
                    "trace_{}_{label}_seed{seed}.csv",
                    cfg.policy.as_str()
                ));
                write_trace_csv(&traces, env.n_cells(), &trace_path)?;
            }
            rows.push(MetricsRow {
                scenario: cfg.scenario.clone(),
                room: label.clone(),
                policy: policy.name().to_string(),
                seed,
                cumulative_q1_mbps: logs.iter().map(|l| l.mean_q1_mbps).sum(),
                cumulative_avg_mbps: logs.iter().map(|l| l.mean_rate_mbps).sum(),
                episodes: logs.len(),
            });
        }
    }
    rows.sort_by(|a, b| (&a.room, a.seed).cmp(&(&b.room, b.seed)));
    let metrics_path = tracker.file("metrics.csv");
    write_metrics_csv(&rows, &metrics_path)?;
    info!("evaluated {} (room, seed) cells", rows.len());
    tracker.commit();
    Ok(())
}

/// Fine-tunes the global checkpoint in the adaptation room next to a
/// scratch-initialised twin sharing the same environment seeds, writing
/// paired learning curves.
pub fn cmd_adapt(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    seed_override: Option<u64>,
    force: bool,
) -> Result<()> {
    let seeds = effective_seeds(cfg, seed_override);
    let mut tracker = OutputDir::prepare(out, force)?;
    let global = ParameterSet::load(checkpoint)
        .with_context(|| format!("loading global checkpoint {}", checkpoint.display()))?;

    let room = cfg.adapt_room.clone();
    let label = ExperimentConfig::room_label(&room);
    let dqn_cfg = cfg.dqn_config(cfg.adapt_episodes);

    let jobs: Vec<u64> = seeds.clone();
    let paths: Vec<(PathBuf, PathBuf)> = jobs
        .iter()
        .map(|seed| {
            (
                tracker.file(format!("adapt_pretrained_{label}_seed{seed}.csv")),
                tracker.file(format!("adapt_scratch_{label}_seed{seed}.csv")),
            )
        })
        .collect();

    let results: Vec<Result<()>> = jobs
        .par_iter()
        .zip(&paths)
        .map(|(&seed, (pre_path, scratch_path))| {
            // Both arms see identical trajectory streams; only the
            // initial parameters differ.
            let env_seed = derive_seed(seed, "adapt/env");
            let mut env_pre = build_env(cfg, &room, env_seed)?;
            let mut pretrained = adapt_agent(&global, &env_pre, dqn_cfg.clone(), seed)?;
            let pre_logs = pretrained.run_episodes(&mut env_pre, cfg.adapt_episodes)?;
            write_episode_csv(&pre_logs, Some("adapt_pretrained"), pre_path)?;

            let mut env_scratch = build_env(cfg, &room, env_seed)?;
            let mut scratch = Agent::new(
                env_scratch.state_dim(),
                env_scratch.n_actions(),
                dqn_cfg.clone(),
                seed,
            )?;
            let scratch_logs = scratch.run_episodes(&mut env_scratch, cfg.adapt_episodes)?;
            write_episode_csv(&scratch_logs, Some("adapt_scratch"), scratch_path)?;
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    info!(
        "adaptation in room {room}: {} paired seeds, {} episodes each",
        seeds.len(),
        cfg.adapt_episodes
    );
    tracker.commit();
    Ok(())
}

/// Aggregates metrics rows into the policy-by-room grid, printing the
/// aligned table and optionally writing report.csv.
pub fn cmd_report(metrics_dir: &Path, out: Option<&Path>) -> Result<String> {
    let rows = collect_metrics(metrics_dir)?;
    let report = build_report(&rows);
    let text = report.to_aligned_string();
    if let Some(out) = out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, report.to_csv_string())
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(text)
}
