//! FedAvg orchestration across per-room clients: synchronous rounds of
//! local training, parameter averaging, global broadcast and replay wipes,
//! plus adaptation of a global model to a new room.

use crate::agent::{Agent, AgentError, DqnConfig};
use crate::env::{EpisodeLog, PowerEnv};
use crate::nn::{NetworkSpec, ParameterSet};
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("fedavg needs at least one parameter set")]
    NoClients,
    #[error("client {index} has spec {got:?}, expected {expected:?}")]
    SpecMismatch {
        index: usize,
        got: NetworkSpec,
        expected: NetworkSpec,
    },
    #[error("federation config invalid: {0}")]
    BadConfig(String),
    #[error("client {client} failed during round {round}: {source}")]
    ClientFailed {
        client: String,
        round: usize,
        source: AgentError,
    },
    #[error("adaptation target mismatch: model expects state dim {model_state} and {model_actions} actions, environment has {env_state} and {env_actions}")]
    AdaptDimensionMismatch {
        model_state: usize,
        model_actions: usize,
        env_state: usize,
        env_actions: usize,
    },
    #[error("failed to write federation records: {0}")]
    Io(#[from] std::io::Error),
}

/// Round scheduling parameters.
#[derive(Debug, Clone, Serialize)]
pub struct FederationConfig {
    /// Episodes each client trains per round (the aggregation cycle).
    pub episodes_per_round: usize,
    pub rounds: usize,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        if self.episodes_per_round == 0 {
            return Err(FederationError::BadConfig(
                "episodes_per_round must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One client: a room-bound environment plus its learner.
pub struct FedClient {
    pub name: String,
    pub env: PowerEnv,
    pub agent: Agent,
}

/// Elementwise arithmetic mean of equally shaped parameter sets. Each
/// coordinate's addends are summed in value order, so the result is
/// independent of client ordering down to the last bit.
pub fn fedavg(sets: &[ParameterSet]) -> Result<ParameterSet, FederationError> {
    let first = sets.first().ok_or(FederationError::NoClients)?;
    for (i, s) in sets.iter().enumerate().skip(1) {
        if s.spec() != first.spec() {
            return Err(FederationError::SpecMismatch {
                index: i,
                got: s.spec().clone(),
                expected: first.spec().clone(),
            });
        }
    }
    let k = sets.len() as f64;
    let len = first.len();
    let mut out = Vec::with_capacity(len);
    let mut column: Vec<f64> = Vec::with_capacity(sets.len());
    for i in 0..len {
        column.clear();
        column.extend(sets.iter().map(|s| s.values()[i]));
        column.sort_by(f64::total_cmp);
        out.push(column.iter().sum::<f64>() / k);
    }
    Ok(ParameterSet::new(first.spec().clone(), out).expect("length preserved"))
}

/// Per-client bookkeeping for one round.
#[derive(Debug, Clone, Serialize)]
pub struct ClientRoundStats {
    pub client: String,
    /// Digest of the parameters right after the broadcast; equals the
    /// digest of the global model that was pushed.
    pub post_broadcast_digest: String,
    /// Digest of the uploaded parameters before aggregation.
    pub pre_agg_digest: String,
    /// First episode index (inclusive) trained this round.
    pub episodes_start: u64,
    /// Last episode index (exclusive).
    pub episodes_end: u64,
    pub mean_cumulative_reward_mbps: f64,
    pub mean_q1_mbps: f64,
}

/// The audit trail of one aggregation round.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRoundStats>,
    pub global_digest: String,
}

/// Everything a federation run produces.
#[derive(Debug)]
pub struct FederationOutcome {
    pub records: Vec<RoundRecord>,
    /// Global parameters after each round's aggregation.
    pub round_globals: Vec<ParameterSet>,
    /// Per-client episode logs across all rounds, in client order.
    pub client_logs: Vec<Vec<EpisodeLog>>,
}

impl FederationOutcome {
    pub fn final_global(&self) -> &ParameterSet {
        self.round_globals.last().expect("at least one round")
    }
}

/// Runs synchronous FedAvg rounds: broadcast the global model, train every
/// client for `episodes_per_round` episodes (clients run concurrently),
/// upload, wipe each client's replay, aggregate. A failing client aborts the
/// whole round; nothing is partially aggregated.
pub fn run_federation(
    cfg: &FederationConfig,
    clients: &mut [FedClient],
    initial_global: ParameterSet,
) -> Result<FederationOutcome, FederationError> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(FederationError::NoClients);
    }
    if cfg.rounds == 0 {
        return Err(FederationError::BadConfig("rounds must be at least 1".into()));
    }

    let mut global = initial_global;
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut round_globals = Vec::with_capacity(cfg.rounds);
    let mut client_logs: Vec<Vec<EpisodeLog>> = vec![Vec::new(); clients.len()];

    for round in 0..cfg.rounds {
        // Broadcast: online and target networks take the global values.
        for c in clients.iter_mut() {
            c.agent
                .load_params(&global)
                .map_err(|source| FederationError::ClientFailed {
                    client: c.name.clone(),
                    round,
                    source,
                })?;
            debug_assert_eq!(c.agent.params().digest(), global.digest());
        }
        let broadcast_digest = global.digest();

        // Local training, one worker per client.
        let episode_starts: Vec<u64> =
            clients.iter().map(|c| c.agent.episodes_done()).collect();
        let results: Vec<Result<Vec<EpisodeLog>, AgentError>> = clients
            .par_iter_mut()
            .map(|c| c.agent.run_episodes(&mut c.env, cfg.episodes_per_round))
            .collect();
        let mut round_logs = Vec::with_capacity(clients.len());
        for (c, r) in clients.iter().zip(results) {
            match r {
                Ok(logs) => round_logs.push(logs),
                Err(source) => {
                    return Err(FederationError::ClientFailed {
                        client: c.name.clone(),
                        round,
                        source,
                    })
                }
            }
        }

        // Upload, then wipe replay so rounds stay isolated.
        let uploads: Vec<ParameterSet> = clients.iter().map(|c| c.agent.params()).collect();
        for c in clients.iter_mut() {
            c.agent.wipe_replay();
        }
        global = fedavg(&uploads)?;

        let mut stats = Vec::with_capacity(clients.len());
        for (i, c) in clients.iter().enumerate() {
            let logs = &round_logs[i];
            let n = logs.len().max(1) as f64;
            stats.push(ClientRoundStats {
                client: c.name.clone(),
                post_broadcast_digest: broadcast_digest.clone(),
                pre_agg_digest: uploads[i].digest(),
                episodes_start: episode_starts[i],
                episodes_end: c.agent.episodes_done(),
                mean_cumulative_reward_mbps: logs
                    .iter()
                    .map(|l| l.cumulative_reward_mbps)
                    .sum::<f64>()
                    / n,
                mean_q1_mbps: logs.iter().map(|l| l.mean_q1_mbps).sum::<f64>() / n,
            });
            client_logs[i].extend(logs.iter().cloned());
        }
        records.push(RoundRecord {
            round,
            clients: stats,
            global_digest: global.digest(),
        });
        round_globals.push(global.clone());
    }

    Ok(FederationOutcome {
        records,
        round_globals,
        client_logs,
    })
}

/// Fine-tunes a fresh agent initialised from `global` in a new environment,
/// returning its per-episode training log. With zero episodes the agent's
/// parameters stay exactly the global values.
pub fn adapt(
    global: &ParameterSet,
    env: &mut PowerEnv,
    cfg: DqnConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeLog>, FederationError> {
    let mut agent = adapt_agent(global, env, cfg, seed)?;
    agent
        .run_episodes(env, n_episodes)
        .map_err(|source| FederationError::ClientFailed {
            client: format!("adapt/{}", env.layout().name()),
            round: 0,
            source,
        })
}

/// Builds the adaptation agent without running it; callers that need the
/// final parameters drive `run_episodes` themselves.
pub fn adapt_agent(
    global: &ParameterSet,
    env: &PowerEnv,
    cfg: DqnConfig,
    seed: u64,
) -> Result<Agent, FederationError> {
    let spec = global.spec();
    if spec.input_dim != env.state_dim() || spec.output_dim != env.n_actions() {
        return Err(FederationError::AdaptDimensionMismatch {
            model_state: spec.input_dim,
            model_actions: spec.output_dim,
            env_state: env.state_dim(),
            env_actions: env.n_actions(),
        });
    }
    Agent::from_params(global, cfg, seed).map_err(|source| FederationError::ClientFailed {
        client: format!("adapt/{}", env.layout().name()),
        round: 0,
        source,
    })
}

/// Writes one CSV row per (round, client) so aggregation boundaries and
/// digest chains can be audited offline.
pub fn write_federation_csv(
    records: &[RoundRecord],
    path: impl AsRef<Path>,
) -> Result<(), FederationError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(io_of_csv)?;
    w.write_record([
        "round",
        "client",
        "episodes_start",
        "episodes_end",
        "mean_cumulative_reward_mbps",
        "mean_q1_mbps",
        "post_broadcast_digest",
        "pre_agg_digest",
        "global_digest",
    ])
    .map_err(io_of_csv)?;
    for r in records {
        for c in &r.clients {
            w.write_record([
                r.round.to_string(),
                c.client.clone(),
                c.episodes_start.to_string(),
                c.episodes_end.to_string(),
                format!("{:.6}", c.mean_cumulative_reward_mbps),
                format!("{:.6}", c.mean_q1_mbps),
                c.post_broadcast_digest.clone(),
                c.pre_agg_digest.clone(),
                r.global_digest.clone(),
            ])
            .map_err(io_of_csv)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn io_of_csv(e: csv::Error) -> FederationError {
    FederationError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionSpace, ActionSpaceMode};
    use crate::geometry::{builtin_layout, MobilityConfig, RoomId};
    use crate::nn::{Network, NetworkSpec};
    use crate::radio::{CqiTable, RadioParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            hidden_dims: vec![4],
            output_dim: 2,
        }
    }

    fn random_params(seed: u64) -> ParameterSet {
        let s = spec();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let values = (0..s.param_count())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        ParameterSet::new(s, values).unwrap()
    }

    #[test]
    fn fedavg_of_two_sets_is_their_mean() {
        let s = NetworkSpec {
            input_dim: 1,
            hidden_dims: vec![],
            output_dim: 1,
        };
        // One weight, one bias.
        let a = ParameterSet::new(s.clone(), vec![1.0, 3.0]).unwrap();
        let b = ParameterSet::new(s, vec![3.0, 5.0]).unwrap();
        let avg = fedavg(&[a, b]).unwrap();
        assert_eq!(avg.values(), &[2.0, 4.0]);
    }

    #[test]
    fn fedavg_of_identical_sets_is_identity() {
        let p = random_params(1);
        let avg = fedavg(&[p.clone(), p.clone(), p.clone()]).unwrap();
        for (a, b) in avg.values().iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fedavg_matches_scalar_loop_oracle() {
        let sets: Vec<ParameterSet> = (0..4).map(random_params).collect();
        let avg = fedavg(&sets).unwrap();
        for i in 0..avg.len() {
            let expected: f64 =
                sets.iter().map(|s| s.values()[i]).sum::<f64>() / sets.len() as f64;
            assert!((avg.values()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fedavg_is_permutation_invariant_bit_for_bit() {
        let sets: Vec<ParameterSet> = (0..5).map(random_params).collect();
        let base = fedavg(&sets).unwrap();
        let mut shuffled = sets.clone();
        shuffled.rotate_left(2);
        assert_eq!(fedavg(&shuffled).unwrap(), base);
        shuffled.reverse();
        assert_eq!(fedavg(&shuffled).unwrap(), base);
    }

    #[test]
    fn fedavg_single_client_is_idempotent() {
        let p = random_params(9);
        assert_eq!(fedavg(std::slice::from_ref(&p)).unwrap(), p);
    }

    #[test]
    fn fedavg_is_homogeneous_in_scaling() {
        let sets: Vec<ParameterSet> = (0..3).map(random_params).collect();
        let c = 2.5;
        let scaled: Vec<ParameterSet> = sets
            .iter()
            .map(|s| {
                ParameterSet::new(s.spec().clone(), s.values().iter().map(|v| c * v).collect())
                    .unwrap()
            })
            .collect();
        let base = fedavg(&sets).unwrap();
        let scaled_avg = fedavg(&scaled).unwrap();
        for (a, b) in scaled_avg.values().iter().zip(base.values()) {
            assert!((a - c * b).abs() < 1e-12);
        }
    }

    #[test]
    fn fedavg_rejects_mismatched_specs() {
        let a = random_params(1);
        let other = NetworkSpec {
            input_dim: 5,
            hidden_dims: vec![4],
            output_dim: 2,
        };
        let b = ParameterSet::new(
            other.clone(),
            vec![0.0; other.param_count()],
        )
        .unwrap();
        assert!(matches!(
            fedavg(&[a, b]),
            Err(FederationError::SpecMismatch { index: 1, .. })
        ));
        assert!(matches!(fedavg(&[]), Err(FederationError::NoClients)));
    }

    fn mini_client(room: RoomId, seed: u64) -> FedClient {
        let env = PowerEnv::new(
            builtin_layout(room),
            RadioParams::default(),
            CqiTable::standard().clone(),
            MobilityConfig {
                n_ues: 3,
                seed,
                ..MobilityConfig::default()
            },
            ActionSpace::build(&[19.5, 21.0, 22.5, 24.0], 2, ActionSpaceMode::DedupKeepMax)
                .unwrap(),
            8,
            seed,
        )
        .unwrap();
        let agent = Agent::new(
            env.state_dim(),
            env.n_actions(),
            DqnConfig {
                batch_size: 8,
                replay_capacity: 128,
                hidden_dims: vec![8],
                epsilon_decay_episodes: 4,
                ..DqnConfig::default()
            },
            seed,
        )
        .unwrap();
        FedClient {
            name: format!("room_{room}"),
            env,
            agent,
        }
    }

    #[test]
    fn rounds_broadcast_train_and_aggregate() {
        let mut clients = vec![mini_client(RoomId::A, 1), mini_client(RoomId::B, 2)];
        let initial = Network::init_seeded(clients[0].agent.spec().clone(), 77).to_params();
        let initial_digest = initial.digest();
        let cfg = FederationConfig {
            episodes_per_round: 2,
            rounds: 3,
        };
        let outcome = run_federation(&cfg, &mut clients, initial).unwrap();

        assert_eq!(outcome.records.len(), 3);
        assert_eq!(outcome.round_globals.len(), 3);
        for (r, record) in outcome.records.iter().enumerate() {
            assert_eq!(record.round, r);
            let expected_broadcast = if r == 0 {
                initial_digest.clone()
            } else {
                outcome.records[r - 1].global_digest.clone()
            };
            for c in &record.clients {
                // Broadcast made every client bit-equal to the global.
                assert_eq!(c.post_broadcast_digest, expected_broadcast);
                // Aggregation boundaries land every episodes_per_round.
                assert_eq!(c.episodes_end - c.episodes_start, 2);
                assert_eq!(c.episodes_end % 2, 0);
            }
            assert_eq!(
                record.global_digest,
                outcome.round_globals[r].digest()
            );
        }
        // Replay is wiped after every upload.
        for c in &clients {
            assert_eq!(c.agent.buffer_len(), 0);
        }
        // The aggregate is the mean of the uploads.
        let last = outcome.records.last().unwrap();
        assert_ne!(last.global_digest, initial_digest);
        // Logs cover rounds * episodes_per_round episodes per client.
        for logs in &outcome.client_logs {
            assert_eq!(logs.len(), 6);
        }
    }

    #[test]
    fn single_client_federation_degenerates_to_solo_training() {
        let mut clients = vec![mini_client(RoomId::A, 5)];
        let initial = Network::init_seeded(clients[0].agent.spec().clone(), 5).to_params();
        let cfg = FederationConfig {
            episodes_per_round: 1,
            rounds: 2,
        };
        let outcome = run_federation(&cfg, &mut clients, initial).unwrap();
        for record in &outcome.records {
            // Mean of one set is that set.
            assert_eq!(record.global_digest, record.clients[0].pre_agg_digest);
        }
    }

    #[test]
    fn mismatched_client_dimensions_abort_without_records() {
        // Broadcast of a global model with the wrong input width fails the
        // round before any training or aggregation happens.
        let mut clients = vec![mini_client(RoomId::A, 1)];
        let other_spec = NetworkSpec {
            input_dim: 99,
            hidden_dims: vec![8],
            output_dim: clients[0].env.n_actions(),
        };
        let wrong_global = Network::init_seeded(other_spec, 1).to_params();
        let cfg = FederationConfig {
            episodes_per_round: 1,
            rounds: 1,
        };
        let err = run_federation(&cfg, &mut clients, wrong_global).unwrap_err();
        assert!(matches!(err, FederationError::ClientFailed { round: 0, .. }));
    }

    #[test]
    fn adapt_with_zero_episodes_keeps_global_params() {
        let mut client = mini_client(RoomId::E, 3);
        let global = Network::init_seeded(client.agent.spec().clone(), 123).to_params();
        let logs = adapt(
            &global,
            &mut client.env,
            client.agent.config().clone(),
            0,
            3,
        )
        .unwrap();
        assert!(logs.is_empty());
        let agent = adapt_agent(&global, &client.env, client.agent.config().clone(), 3).unwrap();
        assert_eq!(agent.params(), global);
    }

    #[test]
    fn adapt_rejects_dimension_mismatch() {
        let client = mini_client(RoomId::E, 3);
        let wrong = Network::init_seeded(
            NetworkSpec {
                input_dim: 7,
                hidden_dims: vec![8],
                output_dim: 2,
            },
            1,
        )
        .to_params();
        assert!(matches!(
            adapt_agent(&wrong, &client.env, client.agent.config().clone(), 1),
            Err(FederationError::AdaptDimensionMismatch { .. })
        ));
    }

    #[test]
    fn federation_csv_has_one_row_per_round_and_client() {
        let mut clients = vec![mini_client(RoomId::A, 1), mini_client(RoomId::B, 2)];
        let initial = Network::init_seeded(clients[0].agent.spec().clone(), 8).to_params();
        let cfg = FederationConfig {
            episodes_per_round: 1,
            rounds: 2,
        };
        let outcome = run_federation(&cfg, &mut clients, initial).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("federation.csv");
        write_federation_csv(&outcome.records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[0].starts_with("round,client,"));
    }
}
