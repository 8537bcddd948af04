//! Experiment configuration: one JSON document drives every subcommand.

use fedcell::agent::DqnConfig;
use fedcell::baselines::Objective;
use fedcell::env::ActionSpaceMode;
use fedcell::federation::FederationConfig as CoreFederationConfig;
use fedcell::geometry::{builtin_layout, load_layout_file, RoomId, RoomLayout};
use fedcell::radio::{CqiTable, RadioParams};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path} is not valid JSON at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("room {room:?}: {source}")]
    Room {
        room: String,
        source: fedcell::geometry::GeometryError,
    },
    #[error("cqi_table_path {path:?}: {source}")]
    CqiTable {
        path: String,
        source: fedcell::radio::RadioError,
    },
}

/// Mobility settings as they appear in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilitySection {
    pub n_ues: usize,
    pub speed_m_per_step: f64,
    pub offset_sigma_m: f64,
    pub ue_height_m: f64,
}

impl Default for MobilitySection {
    fn default() -> Self {
        MobilitySection {
            n_ues: 30,
            speed_m_per_step: 0.5,
            offset_sigma_m: 0.5,
            ue_height_m: 1.0,
        }
    }
}

/// DQN settings as they appear in config files. `epsilon_decay_fraction`
/// is the share of the total episode budget over which epsilon anneals.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnSection {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
    pub batch_size: usize,
    pub target_update_interval: u64,
    pub replay_capacity: usize,
    pub learning_rate: f64,
    pub hidden_dims: Vec<usize>,
}

impl Default for DqnSection {
    fn default() -> Self {
        DqnSection {
            gamma: 0.98,
            epsilon_start: 0.9,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.8,
            batch_size: 128,
            target_update_interval: 100,
            replay_capacity: 50_000,
            learning_rate: 0.001,
            hidden_dims: vec![200, 100, 50],
        }
    }
}

/// Federation settings as they appear in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationSection {
    /// The aggregation cycle: episodes each client trains per round.
    pub episodes_per_round: usize,
    pub rounds: usize,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            episodes_per_round: 380,
            rounds: 5,
        }
    }
}

/// Which controller an `eval` run rolls out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Dqn,
    Random,
    Exhaustive,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Dqn => "dqn",
            PolicyKind::Random => "random",
            PolicyKind::Exhaustive => "exhaustive",
        }
    }
}

/// The experiment document. Defaults mirror the reference radio and
/// hyperparameter configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Rooms by builtin name ("A".."E") or path to a layout JSON file.
    pub rooms: Vec<String>,
    pub radio: RadioParams,
    pub mobility: MobilitySection,
    pub power_levels_dbm: Vec<f64>,
    pub action_space_mode: ActionSpaceMode,
    pub dqn: DqnSection,
    pub federation: FederationSection,
    pub policy: PolicyKind,
    pub exhaustive_objective: Objective,
    /// Steps per episode.
    pub episode_steps: usize,
    /// Training episodes per (room, seed).
    pub episodes: usize,
    /// Frozen-policy episodes per (room, seed) in `eval`.
    pub eval_episodes: usize,
    /// Episodes for each arm of an `adapt` run.
    pub adapt_episodes: usize,
    /// The room an `adapt` run fine-tunes in.
    pub adapt_room: String,
    pub seeds: Vec<u64>,
    /// Optional CQI table override; the 16-row standard table otherwise.
    pub cqi_table_path: Option<PathBuf>,
    /// Write per-step traces during eval runs.
    pub write_step_trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: "default".to_string(),
            rooms: vec!["A".into(), "B".into(), "C".into(), "D".into()],
            radio: RadioParams::default(),
            mobility: MobilitySection::default(),
            power_levels_dbm: vec![19.5, 21.0, 22.5, 24.0],
            action_space_mode: ActionSpaceMode::DedupKeepMax,
            dqn: DqnSection::default(),
            federation: FederationSection::default(),
            policy: PolicyKind::Dqn,
            exhaustive_objective: Objective::SumRate,
            episode_steps: 100,
            episodes: 2000,
            eval_episodes: 50,
            adapt_episodes: 500,
            adapt_room: "E".to_string(),
            seeds: vec![1, 2, 3, 4, 5],
            cqi_table_path: None,
            write_step_trace: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |field: &str, message: String| ConfigError::Invalid {
            field: field.to_string(),
            message,
        };
        if self.rooms.is_empty() {
            return Err(field("rooms", "at least one room is required".into()));
        }
        for r in &self.rooms {
            self.resolve_room(r)?;
        }
        self.resolve_room(&self.adapt_room)?;
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required".into()));
        }
        if self.power_levels_dbm.is_empty()
            || self.power_levels_dbm.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(field(
                "power_levels_dbm",
                "must be non-empty and strictly increasing".into(),
            ));
        }
        if self.episode_steps == 0 {
            return Err(field("episode_steps", "must be at least 1".into()));
        }
        if !(self.radio.bandwidth_hz > 0.0) {
            return Err(field("radio.bandwidth_hz", "must be positive".into()));
        }
        if !(self.radio.carrier_ghz > 0.0) {
            return Err(field("radio.carrier_ghz", "must be positive".into()));
        }
        if self.mobility.n_ues == 0 {
            return Err(field("mobility.n_ues", "must be at least 1".into()));
        }
        if !(self.mobility.speed_m_per_step > 0.0) {
            return Err(field("mobility.speed_m_per_step", "must be positive".into()));
        }
        if !(self.mobility.offset_sigma_m >= 0.0) {
            return Err(field("mobility.offset_sigma_m", "must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.dqn.gamma) {
            return Err(field("dqn.gamma", "must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.dqn.epsilon_start)
            || !(0.0..=1.0).contains(&self.dqn.epsilon_end)
        {
            return Err(field("dqn.epsilon_start/end", "must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.dqn.epsilon_decay_fraction) {
            return Err(field("dqn.epsilon_decay_fraction", "must be in [0, 1]".into()));
        }
        if self.dqn.batch_size == 0 || self.dqn.batch_size > self.dqn.replay_capacity {
            return Err(field(
                "dqn.batch_size",
                "must be in 1..=dqn.replay_capacity".into(),
            ));
        }
        if self.dqn.target_update_interval == 0 {
            return Err(field("dqn.target_update_interval", "must be positive".into()));
        }
        if !(self.dqn.learning_rate > 0.0) {
            return Err(field("dqn.learning_rate", "must be positive".into()));
        }
        if self.federation.episodes_per_round == 0 {
            return Err(field("federation.episodes_per_round", "must be at least 1".into()));
        }
        if self.federation.rounds == 0 {
            return Err(field("federation.rounds", "must be at least 1".into()));
        }
        Ok(())
    }

    /// Resolves a room entry: a path if it looks like one, a builtin letter
    /// otherwise.
    pub fn resolve_room(&self, room: &str) -> Result<RoomLayout, ConfigError> {
        let looks_like_path = room.contains('/') || room.ends_with(".json");
        if looks_like_path {
            load_layout_file(room).map_err(|source| ConfigError::Room {
                room: room.to_string(),
                source,
            })
        } else {
            let id = RoomId::parse(room).map_err(|source| ConfigError::Room {
                room: room.to_string(),
                source,
            })?;
            Ok(builtin_layout(id))
        }
    }

    /// Short label for output file names: "A" for builtins, the file stem
    /// for layout paths.
    pub fn room_label(room: &str) -> String {
        if room.contains('/') || room.ends_with(".json") {
            Path::new(room)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| room.to_string())
        } else {
            room.to_ascii_uppercase()
        }
    }

    pub fn cqi_table(&self) -> Result<CqiTable, ConfigError> {
        match &self.cqi_table_path {
            None => Ok(CqiTable::standard().clone()),
            Some(p) => CqiTable::from_csv_file(p).map_err(|source| ConfigError::CqiTable {
                path: p.display().to_string(),
                source,
            }),
        }
    }

    /// DQN config with the epsilon schedule resolved against a concrete
    /// episode budget.
    pub fn dqn_config(&self, total_episodes: usize) -> DqnConfig {
        DqnConfig {
            gamma: self.dqn.gamma,
            epsilon_start: self.dqn.epsilon_start,
            epsilon_end: self.dqn.epsilon_end,
            epsilon_decay_episodes: (total_episodes as f64 * self.dqn.epsilon_decay_fraction)
                .round() as u64,
            batch_size: self.dqn.batch_size,
            target_update_interval: self.dqn.target_update_interval,
            replay_capacity: self.dqn.replay_capacity,
            learning_rate: self.dqn.learning_rate,
            hidden_dims: self.dqn.hidden_dims.clone(),
        }
    }

    pub fn federation_config(&self) -> CoreFederationConfig {
        CoreFederationConfig {
            episodes_per_round: self.federation.episodes_per_round,
            rounds: self.federation.rounds,
        }
    }
}
