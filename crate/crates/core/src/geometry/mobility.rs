//! Billiard-model user trajectories with Gaussian position jitter.

use super::{billiard_step, GeometryError, Point3, RoomLayout, Vec2};
use crate::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Mobility parameters for one room's user population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MobilityConfig {
    /// Number of users to simulate.
    pub n_ues: usize,
    /// Billiard speed in meters per step.
    pub speed: f64,
    /// Standard deviation of the per-step Gaussian position offset, meters.
    pub offset_sigma: f64,
    /// Fixed user height in meters.
    pub ue_height: f64,
    /// Master seed; every UE and episode derives its own stream from it.
    pub seed: u64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            n_ues: 30,
            speed: 0.5,
            offset_sigma: 0.5,
            ue_height: 1.0,
            seed: 0,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.n_ues < 1 {
            return Err(GeometryError::InvalidMobility(
                "n_ues must be at least 1".into(),
            ));
        }
        if !(self.speed > 0.0) {
            return Err(GeometryError::InvalidMobility(format!(
                "speed must be positive, got {}",
                self.speed
            )));
        }
        if !(self.offset_sigma >= 0.0) {
            return Err(GeometryError::InvalidMobility(format!(
                "offset_sigma must be non-negative, got {}",
                self.offset_sigma
            )));
        }
        if !(self.ue_height > 0.0) {
            return Err(GeometryError::InvalidMobility(format!(
                "ue_height must be positive, got {}",
                self.ue_height
            )));
        }
        Ok(())
    }
}

/// One user's positions over an episode, one entry per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Point3>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Maximum attempts to sample a uniformly distributed interior point before
/// declaring the layout interior empty.
const MAX_SPAWN_ATTEMPTS: usize = 10_000;
/// Offsets that would leave the room are redrawn this many times before
/// being clamped back inside.
const MAX_JITTER_REDRAWS: usize = 16;

/// Generates `cfg.n_ues` trajectories of `steps` positions each. Base
/// positions follow billiard dynamics; each recorded position adds an
/// independent Gaussian offset per axis. Deterministic given `cfg.seed`.
pub fn generate_trajectories(
    layout: &RoomLayout,
    cfg: &MobilityConfig,
    steps: usize,
) -> Result<Vec<Trajectory>, GeometryError> {
    cfg.validate()?;
    let normal = if cfg.offset_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.offset_sigma).expect("sigma checked non-negative"))
    } else {
        None
    };

    let mut trajectories = Vec::with_capacity(cfg.n_ues);
    for ue in 0..cfg.n_ues {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &format!("ue/{ue}")));
        let mut pos = sample_interior_point(layout, &mut rng)?;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let mut vel = Vec2::new(angle.cos(), angle.sin()).scale(cfg.speed);

        let mut positions = Vec::with_capacity(steps);
        for _ in 0..steps {
            let observed = match normal {
                Some(n) => jittered_position(pos, n, layout, &mut rng),
                None => pos,
            };
            positions.push(Point3::new(observed.x, observed.y, cfg.ue_height));
            let (np, nv) = billiard_step(pos, vel, layout);
            pos = np;
            vel = nv;
        }
        trajectories.push(Trajectory { positions });
    }
    Ok(trajectories)
}

fn sample_interior_point(
    layout: &RoomLayout,
    rng: &mut ChaCha12Rng,
) -> Result<Vec2, GeometryError> {
    let (min, max) = layout.bounding_box();
    for _ in 0..MAX_SPAWN_ATTEMPTS {
        let p = Vec2::new(
            rng.random_range(min.x..=max.x),
            rng.random_range(min.y..=max.y),
        );
        if layout.contains(p) {
            return Ok(p);
        }
    }
    Err(GeometryError::EmptyInterior)
}

/// Applies a Gaussian offset to `base`, redrawing up to [`MAX_JITTER_REDRAWS`]
/// times if the result leaves the room, then clamping to the nearest interior
/// point along the offset direction. Edge users therefore stay near walls.
fn jittered_position(
    base: Vec2,
    normal: Normal<f64>,
    layout: &RoomLayout,
    rng: &mut ChaCha12Rng,
) -> Vec2 {
    let mut last = base;
    for _ in 0..MAX_JITTER_REDRAWS {
        let candidate = base + Vec2::new(normal.sample(rng), normal.sample(rng));
        if layout.contains(candidate) {
            return candidate;
        }
        last = candidate;
    }
    clamp_toward(base, last, layout)
}

/// Shrinks the offset `from -> to` by bisection until the point is inside.
/// `from` must be contained in the layout.
fn clamp_toward(from: Vec2, to: Vec2, layout: &RoomLayout) -> Vec2 {
    let mut lo = 0.0f64; // contained
    let mut hi = 1.0f64; // not contained
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        let p = from + (to - from).scale(mid);
        if layout.contains(p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    from + (to - from).scale(lo)
}
