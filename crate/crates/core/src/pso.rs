//! Particle swarm engine searching over (channel, bin) masks.
//!
//! Each particle is one candidate mask, encoded continuously: per selected
//! channel, one slot holds the channel position in [0, n_channels) and `k`
//! slots hold bin positions in [0, n_bins). One flat velocity vector covers
//! all slots. Masks are decoded by flooring each slot and replacing
//! duplicates with the nearest unused index.
//!
//! The inertia weight follows a linear schedule between `w_start` and
//! `w_end`; acceleration coefficients are fixed. The fitness function is
//! injected, must be a pure function of the mask, and may be evaluated in
//! parallel within one iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::Error;
use crate::Result;

fn default_pop_size() -> usize {
    30
}
fn default_max_iter() -> usize {
    100
}
fn default_n_select() -> usize {
    10
}
fn default_k_select() -> usize {
    30
}
fn default_c1() -> f64 {
    0.5
}
fn default_c2() -> f64 {
    2.5
}
fn default_w_start() -> f64 {
    0.2
}
fn default_w_end() -> f64 {
    1.0
}
fn default_v_max_frac() -> f64 {
    0.25
}
fn default_target_fitness() -> f64 {
    1.0
}

/// Swarm search parameters.
///
/// `n_select`/`k_select` are the mask dimensions (channels per mask, bins
/// per channel); `n_channels`/`n_bins` the search-space extents. Velocities
/// are clamped per slot to `v_max_frac` of that slot's range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwarmConfig {
    #[serde(default = "default_pop_size")]
    pub pop_size: usize,
    #[serde(default = "default_n_select")]
    pub n_select: usize,
    #[serde(default = "default_k_select")]
    pub k_select: usize,
    #[serde(default)]
    pub n_channels: usize,
    #[serde(default)]
    pub n_bins: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
    #[serde(default = "default_w_start")]
    pub w_start: f64,
    #[serde(default = "default_w_end")]
    pub w_end: f64,
    #[serde(default = "default_v_max_frac")]
    pub v_max_frac: f64,
    /// Search stops as soon as the global best reaches this fitness.
    #[serde(default = "default_target_fitness")]
    pub target_fitness: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SwarmConfig {
    /// Default tunables with empty search-space dims; callers fill
    /// `n_channels`/`n_bins` from the data before use.
    fn default() -> Self {
        SwarmConfig::new(default_n_select(), default_k_select(), 0, 0, 0)
    }
}

impl SwarmConfig {
    pub fn new(n_select: usize, k_select: usize, n_channels: usize, n_bins: usize, seed: u64) -> Self {
        SwarmConfig {
            pop_size: default_pop_size(),
            n_select,
            k_select,
            n_channels,
            n_bins,
            max_iter: default_max_iter(),
            c1: default_c1(),
            c2: default_c2(),
            w_start: default_w_start(),
            w_end: default_w_end(),
            v_max_frac: default_v_max_frac(),
            target_fitness: default_target_fitness(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 {
            return Err(Error::config("pop_size must be at least 2"));
        }
        if self.n_select == 0 || self.n_select > self.n_channels {
            return Err(Error::config(format!(
                "n_select {} outside (0, {}]",
                self.n_select, self.n_channels
            )));
        }
        if self.k_select == 0 || self.k_select > self.n_bins {
            return Err(Error::config(format!(
                "k_select {} outside (0, {}]",
                self.k_select, self.n_bins
            )));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::config("acceleration coefficients must be >= 0"));
        }
        if !(self.v_max_frac > 0.0) {
            return Err(Error::config("v_max_frac must be positive"));
        }
        Ok(())
    }

    /// Slots per particle: one channel slot plus `k_select` bin slots per
    /// selected channel.
    pub fn dims(&self) -> usize {
        self.n_select * (self.k_select + 1)
    }

    /// Upper range bound of slot `j` (exclusive).
    fn slot_range(&self, j: usize) -> f64 {
        if j % (self.k_select + 1) == 0 {
            self.n_channels as f64
        } else {
            self.n_bins as f64
        }
    }

    fn slot_v_max(&self, j: usize) -> f64 {
        self.v_max_frac * self.slot_range(j)
    }
}

/// Inertia weight at iteration `t` of `max_iter`, moving linearly from
/// `w_start` (t = 0) to `w_end` (t = max_iter). Endpoints are exact.
pub fn ldiw(w_start: f64, w_end: f64, t: usize, max_iter: usize) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::config("max_iter must be positive"));
    }
    if t > max_iter {
        return Err(Error::config(format!("t {t} past max_iter {max_iter}")));
    }
    let remaining = (max_iter - t) as f64 / max_iter as f64;
    Ok(w_start * remaining + w_end * (1.0 - remaining))
}

/// One slot of the velocity update, before clamping:
/// `w·v + c1·r1·(pbest − x) + c2·r2·(gbest − x)`.
pub fn velocity_component(
    v: f64,
    x: f64,
    pbest: f64,
    gbest: f64,
    w: f64,
    c1: f64,
    c2: f64,
    r1: f64,
    r2: f64,
) -> f64 {
    w * v + c1 * r1 * (pbest - x) + c2 * r2 * (gbest - x)
}

/// One mask candidate: continuous position, velocity, and its best find.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub pbest_position: Vec<f64>,
    pub pbest_fitness: f64,
    pub current_fitness: f64,
}

#[derive(Debug, Clone)]
pub struct SwarmState {
    pub particles: Vec<ParticleState>,
    pub gbest_position: Vec<f64>,
    pub gbest_fitness: f64,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
}

impl SwarmState {
    /// Random initial positions, zero velocities. Fitness fields start at
    /// −∞ until the initial evaluation.
    pub fn init(cfg: &SwarmConfig) -> Result<SwarmState> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dims = cfg.dims();
        let particles = (0..cfg.pop_size)
            .map(|_| {
                let position: Vec<f64> = (0..dims)
                    .map(|j| rng.random::<f64>() * cfg.slot_range(j))
                    .collect();
                ParticleState {
                    pbest_position: position.clone(),
                    position,
                    velocity: vec![0.0; dims],
                    pbest_fitness: f64::NEG_INFINITY,
                    current_fitness: f64::NEG_INFINITY,
                }
            })
            .collect();
        Ok(SwarmState {
            particles,
            gbest_position: vec![0.0; dims],
            gbest_fitness: f64::NEG_INFINITY,
            iteration: 0,
            rng,
        })
    }
}

/// Draws fresh r1/r2 per slot and updates the particle's velocity in place,
/// clamped to the per-slot maximum.
pub fn update_velocity(
    particle: &mut ParticleState,
    gbest_position: &[f64],
    w: f64,
    cfg: &SwarmConfig,
    rng: &mut ChaCha8Rng,
) {
    for j in 0..particle.velocity.len() {
        let r1 = rng.random::<f64>();
        let r2 = rng.random::<f64>();
        let v = velocity_component(
            particle.velocity[j],
            particle.position[j],
            particle.pbest_position[j],
            gbest_position[j],
            w,
            cfg.c1,
            cfg.c2,
            r1,
            r2,
        );
        let v_max = cfg.slot_v_max(j);
        particle.velocity[j] = v.clamp(-v_max, v_max);
    }
}

/// Mirrors `x` back into [0, upper), flipping the velocity sign each bounce.
fn reflect_into(mut x: f64, upper: f64, v: &mut f64) -> f64 {
    for _ in 0..64 {
        if x < 0.0 {
            x = -x;
            *v = -*v;
        } else if x >= upper {
            x = 2.0 * upper - x;
            *v = -*v;
        } else {
            return x;
        }
    }
    // Pathological velocity or an exact landing on the bound: pin inside.
    x.clamp(0.0, upper.next_down())
}

/// Applies the already-updated velocity: `x ← x + v`, reflected at the
/// range bounds.
pub fn update_position(particle: &mut ParticleState, cfg: &SwarmConfig) {
    for j in 0..particle.position.len() {
        let upper = cfg.slot_range(j);
        let moved = particle.position[j] + particle.velocity[j];
        particle.position[j] = reflect_into(moved, upper, &mut particle.velocity[j]);
    }
}

/// First unused index nearest to `want`, scanning outward and preferring
/// the higher index on distance ties.
fn nearest_unused(want: usize, used: &mut [bool]) -> usize {
    if !used[want] {
        used[want] = true;
        return want;
    }
    for delta in 1..used.len() {
        if want + delta < used.len() && !used[want + delta] {
            used[want + delta] = true;
            return want + delta;
        }
        if want >= delta && !used[want - delta] {
            used[want - delta] = true;
            return want - delta;
        }
    }
    unreachable!("caller guarantees fewer selections than indexes")
}

/// Floors every slot into an index and repairs duplicates deterministically.
pub fn decode_mask(position: &[f64], cfg: &SwarmConfig) -> Mask {
    let k1 = cfg.k_select + 1;
    let clamp_floor = |x: f64, upper: usize| (x.floor() as usize).min(upper - 1);

    let mut used_channels = vec![false; cfg.n_channels];
    let mut elv = Vec::with_capacity(cfg.n_select);
    let mut fsm = Vec::with_capacity(cfg.n_select);
    for i in 0..cfg.n_select {
        let want = clamp_floor(position[i * k1], cfg.n_channels);
        elv.push(nearest_unused(want, &mut used_channels));

        let mut used_bins = vec![false; cfg.n_bins];
        let mut row = Vec::with_capacity(cfg.k_select);
        for j in 0..cfg.k_select {
            let want = clamp_floor(position[i * k1 + 1 + j], cfg.n_bins);
            row.push(nearest_unused(want, &mut used_bins));
        }
        fsm.push(row);
    }
    Mask::new(elv, fsm)
}

/// Folds the iteration's fitness values into personal and global bests.
///
/// A personal best moves only on strict improvement (ties keep the old
/// position); the global best is the best personal best, resolved in
/// particle-index order so parallel evaluation cannot change the result.
pub fn update_bests(state: &mut SwarmState, fitnesses: &[f64]) {
    assert_eq!(fitnesses.len(), state.particles.len());
    for (particle, &fit) in state.particles.iter_mut().zip(fitnesses.iter()) {
        particle.current_fitness = fit;
        if fit > particle.pbest_fitness {
            particle.pbest_fitness = fit;
            particle.pbest_position.copy_from_slice(&particle.position);
        }
    }
    for particle in &state.particles {
        if particle.pbest_fitness > state.gbest_fitness {
            state.gbest_fitness = particle.pbest_fitness;
            state.gbest_position = particle.pbest_position.clone();
        }
    }
}

/// Outcome of a swarm run: the decoded global best, its fitness, and the
/// global-best fitness after initialization and after every iteration.
#[derive(Debug, Clone)]
pub struct PsoResult {
    pub mask: Mask,
    pub fitness: f64,
    pub history: Vec<f64>,
}

fn evaluate<F>(state: &SwarmState, cfg: &SwarmConfig, fitness: &F) -> Result<Vec<f64>>
where
    F: Fn(&Mask) -> Result<f64> + Sync,
{
    let masks: Vec<Mask> = state
        .particles
        .iter()
        .map(|p| decode_mask(&p.position, cfg))
        .collect();
    masks.par_iter().map(fitness).collect()
}

/// Runs the full search: init → evaluate → iterate until `max_iter` or the
/// target fitness is reached. Deterministic given `cfg.seed`; fitness
/// failures abort the run.
pub fn run_pso<F>(cfg: &SwarmConfig, fitness: F) -> Result<PsoResult>
where
    F: Fn(&Mask) -> Result<f64> + Sync,
{
    let mut state = SwarmState::init(cfg)?;
    let fits = evaluate(&state, cfg, &fitness)?;
    update_bests(&mut state, &fits);
    let mut history = vec![state.gbest_fitness];

    for t in 1..=cfg.max_iter {
        if state.gbest_fitness >= cfg.target_fitness {
            break;
        }
        let w = ldiw(cfg.w_start, cfg.w_end, t, cfg.max_iter)?;
        let gbest = state.gbest_position.clone();
        for particle in &mut state.particles {
            update_velocity(particle, &gbest, w, cfg, &mut state.rng);
            update_position(particle, cfg);
        }
        let fits = evaluate(&state, cfg, &fitness)?;
        update_bests(&mut state, &fits);
        state.iteration = t;
        history.push(state.gbest_fitness);
    }

    Ok(PsoResult {
        mask: decode_mask(&state.gbest_position, cfg),
        fitness: state.gbest_fitness,
        history,
    })
}
