//! The decision-process wrapper: action-space construction, state encoding,
//! quantile-throughput reward and episode stepping with immediate handover.
//!
//! One step applies the chosen per-cell power vector, advances every UE one
//! trajectory position, re-attaches all UEs by RSRP, recomputes rates and
//! rewards the change in the 0.25 lower quantile of per-UE throughput.

use crate::derive_seed;
use crate::geometry::{generate_trajectories, GeometryError, MobilityConfig, Point3, RoomLayout, Trajectory};
use crate::radio::{attach_ues, Attachment, CqiTable, LinkGrid, RadioError, RadioParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("power levels must be non-empty and strictly increasing")]
    BadLevels,
    #[error("action space needs at least one cell")]
    NoCells,
    #[error("action {0} out of range (space has {1} actions)")]
    InvalidAction(usize, usize),
    #[error("episode is done; call reset before stepping")]
    EpisodeDone,
    #[error("quantile of an empty rate list")]
    EmptyRates,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Radio(#[from] RadioError),
}

/// How the Cartesian product of per-cell power levels is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpaceMode {
    /// Keep every combination: `levels^cells` actions.
    Full,
    /// Keep one combination per equivalence class of pairwise power
    /// differences, choosing the representative with the highest total
    /// power. Combinations that differ only by a common dB offset create
    /// the same interference geometry up to noise.
    DedupKeepMax,
}

/// The discrete action space: an ordered list of per-cell power vectors.
#[derive(Debug, Clone)]
pub struct ActionSpace {
    levels_dbm: Vec<f64>,
    combos: Vec<Vec<f64>>,
    mode: ActionSpaceMode,
}

impl ActionSpace {
    /// Enumerates the product of `levels` over `n_cells` cells in a fixed
    /// order (cell 0 varies slowest, levels ascending), then applies the
    /// deduplication mode.
    pub fn build(
        levels_dbm: &[f64],
        n_cells: usize,
        mode: ActionSpaceMode,
    ) -> Result<ActionSpace, EnvError> {
        if levels_dbm.is_empty() || levels_dbm.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EnvError::BadLevels);
        }
        if n_cells == 0 {
            return Err(EnvError::NoCells);
        }
        let mut combos = Vec::new();
        let mut current = vec![0usize; n_cells];
        loop {
            combos.push(current.iter().map(|&i| levels_dbm[i]).collect::<Vec<_>>());
            // Odometer increment, last cell fastest.
            let mut pos = n_cells;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                current[pos] += 1;
                if current[pos] < levels_dbm.len() {
                    break;
                }
                current[pos] = 0;
            }
            if current.iter().all(|&i| i == 0) {
                break;
            }
        }

        let combos = match mode {
            ActionSpaceMode::Full => combos,
            ActionSpaceMode::DedupKeepMax => {
                // Class key: powers relative to cell 0, as exact bit patterns.
                let key = |c: &[f64]| -> Vec<u64> {
                    c.iter().skip(1).map(|p| (p - c[0]).to_bits()).collect()
                };
                let mut order: Vec<Vec<u64>> = Vec::new();
                let mut best: std::collections::HashMap<Vec<u64>, Vec<f64>> =
                    std::collections::HashMap::new();
                for c in combos {
                    let k = key(&c);
                    match best.get(&k) {
                        None => {
                            order.push(k.clone());
                            best.insert(k, c);
                        }
                        Some(prev) => {
                            let total: f64 = c.iter().sum();
                            let prev_total: f64 = prev.iter().sum();
                            if total > prev_total {
                                best.insert(k, c);
                            }
                        }
                    }
                }
                order.into_iter().map(|k| best.remove(&k).unwrap()).collect()
            }
        };

        Ok(ActionSpace {
            levels_dbm: levels_dbm.to_vec(),
            combos,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    pub fn combo(&self, action: usize) -> Result<&[f64], EnvError> {
        self.combos
            .get(action)
            .map(Vec::as_slice)
            .ok_or(EnvError::InvalidAction(action, self.combos.len()))
    }

    pub fn combos(&self) -> &[Vec<f64>] {
        &self.combos
    }

    pub fn levels_dbm(&self) -> &[f64] {
        &self.levels_dbm
    }

    pub fn mode(&self) -> ActionSpaceMode {
        self.mode
    }

    pub fn min_level(&self) -> f64 {
        self.levels_dbm[0]
    }

    pub fn max_level(&self) -> f64 {
        *self.levels_dbm.last().expect("levels non-empty")
    }

    pub fn n_cells(&self) -> usize {
        self.combos[0].len()
    }
}

/// The flattened observation: per-cell normalised powers, per-cell
/// normalised attachment counts, then the cells-major CQI matrix scaled to
/// [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(v)
    }
}

/// Encodes the observation for the current attachment. Powers are min-max
/// normalised over the action space's level range, counts divided by the UE
/// population, CQI by the table's top index.
pub fn encode_state(
    powers_dbm: &[f64],
    attachment: &Attachment,
    space: &ActionSpace,
    max_cqi: u8,
) -> StateVector {
    let grid: &LinkGrid = &attachment.grid;
    let n_ues = grid.n_ues();
    let n_cells = grid.n_cells();
    let span = space.max_level() - space.min_level();
    let mut v = Vec::with_capacity(2 * n_cells + n_cells * n_ues);
    for &p in powers_dbm {
        if span > 0.0 {
            v.push((p - space.min_level()) / span);
        } else {
            v.push(1.0);
        }
    }
    let counts = attachment.counts_per_cell();
    for c in counts {
        v.push(c as f64 / n_ues as f64);
    }
    for m in 0..n_cells {
        for n in 0..n_ues {
            v.push(f64::from(grid.link(m, n).cqi) / f64::from(max_cqi));
        }
    }
    StateVector(v)
}

/// 0.25 lower quantile of per-UE rates, in Mbps, using linear interpolation
/// between order statistics.
pub fn q1_throughput_mbps(per_ue_rates_bps: &[f64]) -> Result<f64, EnvError> {
    Ok(quantile(per_ue_rates_bps, 0.25)? / 1e6)
}

/// Mean per-UE rate in Mbps.
pub fn mean_rate_mbps(per_ue_rates_bps: &[f64]) -> Result<f64, EnvError> {
    if per_ue_rates_bps.is_empty() {
        return Err(EnvError::EmptyRates);
    }
    Ok(per_ue_rates_bps.iter().sum::<f64>() / per_ue_rates_bps.len() as f64 / 1e6)
}

fn quantile(values: &[f64], q: f64) -> Result<f64, EnvError> {
    if values.is_empty() {
        return Err(EnvError::EmptyRates);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// Everything a controller learns about one step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: StateVector,
    /// Change in Q1 relative to the previous step, Mbps.
    pub reward_mbps: f64,
    pub per_ue_rates_bps: Vec<f64>,
    pub q1_mbps: f64,
    pub mean_rate_mbps: f64,
    pub done: bool,
}

/// Scores of one candidate power vector against fixed UE positions.
#[derive(Debug, Clone)]
pub struct PowerEval {
    pub per_ue_rates_bps: Vec<f64>,
    pub sum_rate_mbps: f64,
    pub q1_mbps: f64,
    pub mean_rate_mbps: f64,
}

/// The episodic environment for one room.
///
/// Trajectories are regenerated per episode from seeds derived off the
/// master seed, so runs are reproducible and episodes independent.
pub struct PowerEnv {
    layout: RoomLayout,
    radio: RadioParams,
    table: CqiTable,
    mobility: MobilityConfig,
    space: ActionSpace,
    episode_len: usize,
    master_seed: u64,
    episodes_started: u64,
    trajectories: Vec<Trajectory>,
    t: usize,
    powers_dbm: Vec<f64>,
    attachment: Option<Attachment>,
    q1_prev_mbps: f64,
    needs_reset: bool,
}

impl PowerEnv {
    pub fn new(
        layout: RoomLayout,
        radio: RadioParams,
        table: CqiTable,
        mobility: MobilityConfig,
        space: ActionSpace,
        episode_len: usize,
        master_seed: u64,
    ) -> Result<PowerEnv, EnvError> {
        if space.n_cells() != layout.n_cells() {
            return Err(EnvError::NoCells);
        }
        mobility.validate()?;
        Ok(PowerEnv {
            layout,
            radio,
            table,
            mobility,
            space,
            episode_len,
            master_seed,
            episodes_started: 0,
            trajectories: Vec::new(),
            t: 0,
            powers_dbm: Vec::new(),
            attachment: None,
            q1_prev_mbps: 0.0,
            needs_reset: true,
        })
    }

    pub fn layout(&self) -> &RoomLayout {
        &self.layout
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn n_cells(&self) -> usize {
        self.layout.n_cells()
    }

    pub fn n_ues(&self) -> usize {
        self.mobility.n_ues
    }

    pub fn n_actions(&self) -> usize {
        self.space.len()
    }

    /// Length of the flattened state vector: 2M + M*N.
    pub fn state_dim(&self) -> usize {
        2 * self.n_cells() + self.n_cells() * self.n_ues()
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn is_done(&self) -> bool {
        self.needs_reset
    }

    pub fn powers_dbm(&self) -> &[f64] {
        &self.powers_dbm
    }

    /// Q1 of the current attachment, Mbps.
    pub fn current_q1_mbps(&self) -> f64 {
        self.q1_prev_mbps
    }

    pub fn attachment(&self) -> Option<&Attachment> {
        self.attachment.as_ref()
    }

    /// Starts a fresh episode: new trajectories, every cell back at the
    /// initial (maximum) power, attachment recomputed at step-0 positions.
    pub fn reset(&mut self) -> Result<StateVector, EnvError> {
        let traj_seed = derive_seed(self.master_seed, &format!("episode/{}", self.episodes_started));
        let cfg = MobilityConfig {
            seed: traj_seed,
            ..self.mobility.clone()
        };
        // One extra position so the final step still has a destination.
        self.trajectories = generate_trajectories(&self.layout, &cfg, self.episode_len + 1)?;
        self.episodes_started += 1;
        self.t = 0;
        self.powers_dbm = vec![self.space.max_level(); self.n_cells()];
        let positions = self.positions_at(0);
        let attachment = attach_ues(
            &positions,
            &self.layout,
            &self.powers_dbm,
            &self.radio,
            &self.table,
        )?;
        self.q1_prev_mbps = q1_throughput_mbps(&attachment.per_ue_rates_bps())?;
        let state = encode_state(
            &self.powers_dbm,
            &attachment,
            &self.space,
            self.table.max_cqi(),
        );
        self.attachment = Some(attachment);
        self.needs_reset = false;
        Ok(state)
    }

    /// Applies `action`, advances all UEs one step, re-attaches by RSRP and
    /// rewards the Q1 delta.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        if self.needs_reset {
            return Err(EnvError::EpisodeDone);
        }
        let combo = self.space.combo(action)?.to_vec();
        self.powers_dbm = combo;
        self.t += 1;
        let positions = self.positions_at(self.t);
        let attachment = attach_ues(
            &positions,
            &self.layout,
            &self.powers_dbm,
            &self.radio,
            &self.table,
        )?;
        let rates = attachment.per_ue_rates_bps();
        let q1 = q1_throughput_mbps(&rates)?;
        let mean = mean_rate_mbps(&rates)?;
        let reward = q1 - self.q1_prev_mbps;
        self.q1_prev_mbps = q1;
        let state = encode_state(
            &self.powers_dbm,
            &attachment,
            &self.space,
            self.table.max_cqi(),
        );
        self.attachment = Some(attachment);
        let done = self.t >= self.episode_len;
        if done {
            self.needs_reset = true;
        }
        Ok(StepOutcome {
            state,
            reward_mbps: reward,
            per_ue_rates_bps: rates,
            q1_mbps: q1,
            mean_rate_mbps: mean,
            done,
        })
    }

    /// UE positions at trajectory index `t` of the current episode.
    pub fn positions_at(&self, t: usize) -> Vec<Point3> {
        self.trajectories.iter().map(|tr| tr.positions[t]).collect()
    }

    /// The positions the next `step` call will move the UEs to. A pure
    /// snapshot for look-ahead policies.
    pub fn next_positions(&self) -> Vec<Point3> {
        self.positions_at(self.t + 1)
    }

    /// Scores one candidate power vector against fixed UE positions with
    /// full re-attachment, without touching the live episode state.
    pub fn evaluate_powers(
        &self,
        positions: &[Point3],
        powers_dbm: &[f64],
    ) -> Result<PowerEval, EnvError> {
        let attachment = attach_ues(positions, &self.layout, powers_dbm, &self.radio, &self.table)?;
        let rates = attachment.per_ue_rates_bps();
        Ok(PowerEval {
            sum_rate_mbps: rates.iter().sum::<f64>() / 1e6,
            q1_mbps: q1_throughput_mbps(&rates)?,
            mean_rate_mbps: mean_rate_mbps(&rates)?,
            per_ue_rates_bps: rates,
        })
    }
}

/// Anything that can pick an action given the live environment and the
/// current observation.
pub trait Policy {
    fn select(&mut self, env: &PowerEnv, state: &StateVector) -> Result<usize, EnvError>;
    fn name(&self) -> &str;
}

/// Per-episode summary row shared by training and evaluation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub cumulative_reward_mbps: f64,
    pub mean_q1_mbps: f64,
    pub mean_rate_mbps: f64,
    pub epsilon: f64,
}

/// One row of a per-step episode trace.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub step: usize,
    pub action: usize,
    pub powers_dbm: Vec<f64>,
    pub q1_mbps: f64,
    pub mean_mbps: f64,
    pub reward_mbps: f64,
}

/// Rolls a policy out for `episodes` full episodes without training.
pub fn run_policy_episodes(
    env: &mut PowerEnv,
    policy: &mut dyn Policy,
    episodes: usize,
) -> Result<Vec<EpisodeLog>, EnvError> {
    Ok(run_policy_episodes_traced(env, policy, episodes)?.0)
}

/// Like [`run_policy_episodes`], also returning per-step traces.
pub fn run_policy_episodes_traced(
    env: &mut PowerEnv,
    policy: &mut dyn Policy,
    episodes: usize,
) -> Result<(Vec<EpisodeLog>, Vec<Vec<StepTrace>>), EnvError> {
    let mut logs = Vec::with_capacity(episodes);
    let mut traces = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut state = env.reset()?;
        let mut cumulative = 0.0;
        let mut q1_sum = 0.0;
        let mut rate_sum = 0.0;
        let mut trace = Vec::with_capacity(env.episode_len());
        for step in 0..env.episode_len() {
            let action = policy.select(env, &state)?;
            let out = env.step(action)?;
            cumulative += out.reward_mbps;
            q1_sum += out.q1_mbps;
            rate_sum += out.mean_rate_mbps;
            trace.push(StepTrace {
                step,
                action,
                powers_dbm: env.powers_dbm().to_vec(),
                q1_mbps: out.q1_mbps,
                mean_mbps: out.mean_rate_mbps,
                reward_mbps: out.reward_mbps,
            });
            state = out.state;
        }
        let steps = env.episode_len() as f64;
        logs.push(EpisodeLog {
            episode: episode as u64,
            cumulative_reward_mbps: cumulative,
            mean_q1_mbps: q1_sum / steps,
            mean_rate_mbps: rate_sum / steps,
            epsilon: 0.0,
        });
        traces.push(trace);
    }
    Ok((logs, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{builtin_layout, RoomId, RoomLayout, Vec2};

    const LEVELS: [f64; 4] = [19.5, 21.0, 22.5, 24.0];

    #[test]
    fn full_product_has_sixteen_combos() {
        let space = ActionSpace::build(&LEVELS, 2, ActionSpaceMode::Full).unwrap();
        assert_eq!(space.len(), 16);
        // First combo is (min, min), last is (max, max).
        assert_eq!(space.combo(0).unwrap(), &[19.5, 19.5]);
        assert_eq!(space.combo(15).unwrap(), &[24.0, 24.0]);
    }

    #[test]
    fn singleton_level_set_collapses_to_one_action() {
        let space = ActionSpace::build(&[24.0], 3, ActionSpaceMode::Full).unwrap();
        assert_eq!(space.len(), 1);
        assert_eq!(space.combo(0).unwrap(), &[24.0, 24.0, 24.0]);
    }

    #[test]
    fn dedup_keeps_max_total_per_difference_class() {
        let space = ActionSpace::build(&LEVELS, 2, ActionSpaceMode::DedupKeepMax).unwrap();
        // Brute-force the equivalence classes over the full product.
        let full = ActionSpace::build(&LEVELS, 2, ActionSpaceMode::Full).unwrap();
        let mut classes: std::collections::HashMap<u64, Vec<f64>> =
            std::collections::HashMap::new();
        for c in full.combos() {
            let d = (c[1] - c[0]).to_bits();
            let entry = classes.entry(d).or_insert_with(|| c.clone());
            if c.iter().sum::<f64>() > entry.iter().sum::<f64>() {
                *entry = c.clone();
            }
        }
        assert_eq!(space.len(), classes.len());
        assert_eq!(space.len(), 7);
        let mut diffs: Vec<f64> = space.combos().iter().map(|c| c[1] - c[0]).collect();
        diffs.sort_by(f64::total_cmp);
        assert_eq!(diffs, vec![-4.5, -3.0, -1.5, 0.0, 1.5, 3.0, 4.5]);
        for c in space.combos() {
            let rep = &classes[&(c[1] - c[0]).to_bits()];
            assert_eq!(c, rep, "representative must have maximal total power");
        }
        // Every surviving combo draws only from the configured levels.
        for c in space.combos() {
            for p in c {
                assert!(LEVELS.contains(p));
            }
        }
    }

    #[test]
    fn bad_levels_are_rejected() {
        assert!(ActionSpace::build(&[], 2, ActionSpaceMode::Full).is_err());
        assert!(ActionSpace::build(&[24.0, 19.5], 2, ActionSpaceMode::Full).is_err());
        assert!(ActionSpace::build(&[19.5, 19.5], 2, ActionSpaceMode::Full).is_err());
    }

    #[test]
    fn quantile_interpolates_between_order_statistics() {
        let rates: Vec<f64> = [10.0, 20.0, 30.0, 40.0].iter().map(|m| m * 1e6).collect();
        let q1 = q1_throughput_mbps(&rates).unwrap();
        assert!((q1 - 17.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_of_constant_distribution_is_the_constant() {
        let rates = vec![7.25e6; 9];
        assert!((q1_throughput_mbps(&rates).unwrap() - 7.25).abs() < 1e-12);
    }

    #[test]
    fn quantile_of_single_ue_is_that_rate() {
        assert!((q1_throughput_mbps(&[42e6]).unwrap() - 42.0).abs() < 1e-12);
        assert!(q1_throughput_mbps(&[]).is_err());
    }

    fn test_env(seed: u64) -> PowerEnv {
        let layout = builtin_layout(RoomId::A);
        let space = ActionSpace::build(&LEVELS, 2, ActionSpaceMode::DedupKeepMax).unwrap();
        PowerEnv::new(
            layout,
            RadioParams::default(),
            CqiTable::standard().clone(),
            MobilityConfig {
                n_ues: 8,
                seed,
                ..MobilityConfig::default()
            },
            space,
            20,
            seed,
        )
        .unwrap()
    }

    /// A single-cell room small enough that the whole floor sits in one CQI
    /// band per power level: 24 dBm yields CQI 1, everything lower CQI 0.
    pub(crate) fn dominant_action_env(seed: u64) -> PowerEnv {
        let layout = RoomLayout::new(
            "tiny",
            vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(2.0, 0.0),
                Vec2::new(2.0, 2.0),
                Vec2::new(0.0, 2.0),
            ],
            vec![],
            4.0,
            vec![Point3::new(1.0, 1.0, 3.9)],
        )
        .unwrap();
        let radio = RadioParams {
            noise_power_dbm: -19.3,
            ..RadioParams::default()
        };
        let space = ActionSpace::build(&LEVELS, 1, ActionSpaceMode::Full).unwrap();
        PowerEnv::new(
            layout,
            radio,
            CqiTable::standard().clone(),
            MobilityConfig {
                n_ues: 1,
                speed: 1e-9,
                offset_sigma: 0.0,
                ue_height: 1.0,
                seed,
            },
            space,
            20,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_starts_at_max_power() {
        let mut a = test_env(5);
        let mut b = test_env(5);
        let sa = a.reset().unwrap();
        let sb = b.reset().unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.powers_dbm(), &[24.0, 24.0]);
        // Normalised powers lead the state vector and sit at the maximum.
        assert_eq!(&sa.as_slice()[..2], &[1.0, 1.0]);
    }

    #[test]
    fn state_entries_stay_in_unit_interval() {
        let mut env = test_env(11);
        let mut state = env.reset().unwrap();
        for action in 0..env.episode_len() {
            assert!(state
                .as_slice()
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v)));
            let out = env.step(action % env.n_actions()).unwrap();
            state = out.state;
        }
    }

    #[test]
    fn attachment_counts_partition_the_ues() {
        let mut env = test_env(3);
        let state = env.reset().unwrap();
        let m = env.n_cells();
        let counts = &state.as_slice()[m..2 * m];
        let total: f64 = counts.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rewards_telescope_to_final_minus_initial_q1() {
        let mut env = test_env(17);
        env.reset().unwrap();
        let q1_initial = env.current_q1_mbps();
        let mut sum = 0.0;
        let mut last_q1 = q1_initial;
        for i in 0..env.episode_len() {
            let out = env.step(i % env.n_actions()).unwrap();
            sum += out.reward_mbps;
            last_q1 = out.q1_mbps;
        }
        let expected = last_q1 - q1_initial;
        let scale = expected.abs().max(1.0);
        assert!(
            ((sum - expected) / scale).abs() < 1e-9,
            "telescoping violated: {sum} vs {expected}"
        );
    }

    #[test]
    fn step_after_done_is_an_error() {
        let mut env = test_env(2);
        env.reset().unwrap();
        for i in 0..env.episode_len() {
            env.step(i % env.n_actions()).unwrap();
        }
        assert!(matches!(env.step(0), Err(EnvError::EpisodeDone)));
        // Resetting restores a fresh episode of the full length.
        env.reset().unwrap();
        assert!(env.step(0).is_ok());
    }

    #[test]
    fn invalid_action_is_rejected() {
        let mut env = test_env(2);
        env.reset().unwrap();
        assert!(matches!(
            env.step(env.n_actions()),
            Err(EnvError::InvalidAction(_, _))
        ));
    }

    #[test]
    fn static_ue_same_action_gives_zero_reward() {
        let mut env = dominant_action_env(1);
        env.reset().unwrap();
        let max_action = env.n_actions() - 1; // (24.0)
        env.step(max_action).unwrap();
        let out = env.step(max_action).unwrap();
        assert_eq!(out.reward_mbps, 0.0);
    }

    #[test]
    fn first_step_baselines_against_initial_max_power() {
        // Keeping the initial powers on a static UE changes nothing, so the
        // first reward is exactly zero.
        let mut env = dominant_action_env(4);
        env.reset().unwrap();
        let out = env.step(env.n_actions() - 1).unwrap();
        assert_eq!(out.reward_mbps, 0.0);
    }

    #[test]
    fn raising_power_from_min_to_max_pays_off() {
        let mut env = dominant_action_env(9);
        env.reset().unwrap();
        // The UE sits below the top CQI by construction; dropping to the
        // minimum level kills the rate, raising it back restores it.
        let down = env.step(0).unwrap();
        assert!(down.reward_mbps < 0.0, "got {}", down.reward_mbps);
        let up = env.step(env.n_actions() - 1).unwrap();
        assert!(up.reward_mbps > 0.0, "got {}", up.reward_mbps);
    }

    #[test]
    fn dominant_env_has_strictly_dominant_max_power() {
        let mut env = dominant_action_env(23);
        env.reset().unwrap();
        let positions = env.next_positions();
        let evals: Vec<f64> = (0..env.n_actions())
            .map(|a| {
                let combo = env.action_space().combo(a).unwrap().to_vec();
                env.evaluate_powers(&positions, &combo).unwrap().q1_mbps
            })
            .collect();
        let best = evals.len() - 1;
        for (a, &v) in evals.iter().enumerate() {
            if a != best {
                assert!(evals[best] > v, "action {a} not dominated: {evals:?}");
            }
        }
    }

    #[test]
    fn applied_powers_always_come_from_the_action_space() {
        let mut env = test_env(13);
        env.reset().unwrap();
        for i in 0..10 {
            env.step(i % env.n_actions()).unwrap();
            let p = env.powers_dbm().to_vec();
            assert!(env.action_space().combos().iter().any(|c| c == &p));
        }
    }

    #[test]
    fn serving_cell_always_has_max_rsrp() {
        let mut env = test_env(29);
        env.reset().unwrap();
        for i in 0..env.episode_len() {
            env.step(i % env.n_actions()).unwrap();
            let att = env.attachment().unwrap();
            for n in 0..env.n_ues() {
                let s = att.serving[n];
                for m in 0..env.n_cells() {
                    let diff = att.grid.link(m, n).rsrp_dbm - att.grid.link(s, n).rsrp_dbm;
                    assert!(diff <= 1e-12);
                    if diff == 0.0 && m < s {
                        panic!("tie must break to the lowest index");
                    }
                }
            }
        }
    }
}
