//! Physical world: UAV kinematics, task generation, channel rate, timing,
//! energy, and the per-slot state advance.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::metrics;
use crate::offload::{self, OffloadDecision};

/// A point in the horizontal plane, m. UAV altitude is fixed by the config.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn in_square(&self, side: f64) -> bool {
        (0.0..=side).contains(&self.x) && (0.0..=side).contains(&self.y)
    }
}

pub type UavPose = Point;

/// One UE's computation task for one slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// Data to upload when offloading, bits.
    pub data_bits: f64,
    /// Total CPU cycles to execute the task.
    pub cycles: f64,
}

/// Flying direction and distance for one slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavAction {
    /// Heading in `[0, 2pi)`.
    pub angle: f64,
    /// Distance in `[0, d_max]`, m.
    pub dist: f64,
}

impl UavAction {
    pub fn new(angle: f64, dist: f64) -> Self {
        Self { angle, dist }
    }

    pub fn hover() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn check(&self, config: &SimConfig) -> Result<()> {
        if !(0.0..TAU).contains(&self.angle) {
            return Err(Error::Contract(format!("angle {} outside [0, 2pi)", self.angle)));
        }
        if !(0.0..=config.d_max).contains(&self.dist) {
            return Err(Error::Contract(format!(
                "distance {} outside [0, {}]",
                self.dist, config.d_max
            )));
        }
        Ok(())
    }

    fn target_from(&self, pose: Point) -> Point {
        Point::new(
            pose.x + self.dist * self.angle.cos(),
            pose.y + self.dist * self.angle.sin(),
        )
    }
}

/// Uniform UE layout over the service area.
pub fn spawn_ues<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Vec<Point> {
    let l = config.side_len;
    (0..config.n_ues)
        .map(|_| Point::new(rng.random_range(0.0..=l), rng.random_range(0.0..=l)))
        .collect()
}

/// Draws one task per UE: size uniform in the data range, cycles = bits x
/// a processing density uniform in the density range.
pub fn spawn_tasks<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Vec<Task> {
    let [d_lo, d_hi] = config.data_bits_range();
    let [c_lo, c_hi] = config.density_range;
    (0..config.n_ues)
        .map(|_| {
            let data_bits = rng.random_range(d_lo..=d_hi);
            let density = rng.random_range(c_lo..=c_hi);
            Task {
                data_bits,
                cycles: data_bits * density,
            }
        })
        .collect()
}

pub fn horizontal_dist(a: Point, b: Point) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Moves one UAV unless the candidate position leaves the area or comes
/// within the separation distance of any point in `others`.
///
/// Returns the resulting pose and whether the move was rejected.
pub fn uav_step(
    pose: Point,
    action: &UavAction,
    others: &[Point],
    config: &SimConfig,
) -> Result<(Point, bool)> {
    action.check(config)?;
    let cand = action.target_from(pose);
    let blocked = !cand.in_square(config.side_len)
        || others
            .iter()
            .any(|&o| horizontal_dist(cand, o) < config.r_min_sep);
    Ok(if blocked { (pose, true) } else { (cand, false) })
}

/// Moves every UAV simultaneously.
///
/// Each candidate is checked against the area bounds and against both the
/// candidate and the current pose of every other UAV, in one pass. A UAV that
/// fails stays where it is and is flagged. Any pair that ends closer than the
/// separation distance therefore consists of two UAVs that did not move.
pub fn move_uavs(
    poses: &[Point],
    actions: &[UavAction],
    config: &SimConfig,
) -> Result<(Vec<Point>, Vec<bool>)> {
    if actions.len() != poses.len() {
        return Err(Error::Shape {
            expected: poses.len(),
            actual: actions.len(),
            context: "joint action",
        });
    }
    for a in actions {
        a.check(config)?;
    }
    let candidates: Vec<Point> = poses
        .iter()
        .zip(actions)
        .map(|(&p, a)| a.target_from(p))
        .collect();
    let mut out = Vec::with_capacity(poses.len());
    let mut flags = Vec::with_capacity(poses.len());
    let mut others = Vec::with_capacity(2 * poses.len());
    for (m, (&pose, action)) in poses.iter().zip(actions).enumerate() {
        others.clear();
        for k in (0..poses.len()).filter(|&k| k != m) {
            others.push(candidates[k]);
            others.push(poses[k]);
        }
        let (p, v) = uav_step(pose, action, &others, config)?;
        out.push(p);
        flags.push(v);
    }
    Ok((out, flags))
}

/// Achievable uplink rate at horizontal distance `r`, bit/s.
pub fn data_rate(r: f64, config: &SimConfig) -> f64 {
    let h2 = config.altitude * config.altitude;
    let snr = config.rho() * config.tx_power / (h2 + r * r);
    config.bandwidth * (1.0 + snr).log2()
}

/// Upload time `D / rate`, s.
pub fn offload_time(task: &Task, rate: f64) -> Result<f64> {
    if rate <= 0.0 {
        return Err(Error::ZeroDivisor("offload_time: rate"));
    }
    Ok(task.data_bits / rate)
}

/// Execution time `F / f`, s.
pub fn exec_time(task: &Task, cpu_hz: f64) -> Result<f64> {
    if cpu_hz <= 0.0 {
        return Err(Error::ZeroDivisor("exec_time: cpu frequency"));
    }
    Ok(task.cycles / cpu_hz)
}

/// Local CPU frequency: the slowest one that still meets the deadline.
pub fn local_cpu(task: &Task, config: &SimConfig) -> f64 {
    task.cycles / config.t_max
}

/// Energy of running the task locally at `cpu_hz`: `k f^v (F / f)`.
pub fn local_energy(task: &Task, cpu_hz: f64, config: &SimConfig) -> f64 {
    if task.cycles == 0.0 {
        return 0.0;
    }
    config.k_n * cpu_hz.powf(config.v_n - 1.0) * task.cycles
}

/// Energy of uploading for `tx_time` seconds.
pub fn offload_energy(tx_time: f64, config: &SimConfig) -> f64 {
    config.tx_power * tx_time
}

/// Complete simulator state between two slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    /// UE positions (fixed for the run).
    pub ues: Vec<Point>,
    pub poses: Vec<Point>,
    /// Number of completed slots.
    pub t: usize,
    /// Per-UE number of slots served by any UAV.
    pub served_counts: Vec<u32>,
    /// Per-UAV cumulative relative load.
    pub load_history: Vec<f64>,
    /// Tasks of the upcoming slot.
    pub tasks: Vec<Task>,
}

impl World {
    /// Fresh episode: UAVs at their initial poses, counters zeroed, first
    /// slot's tasks drawn from `rng`.
    pub fn reset<R: Rng + ?Sized>(ues: Vec<Point>, config: &SimConfig, rng: &mut R) -> Self {
        let poses = config.initial_poses[..config.n_uavs]
            .iter()
            .map(|p| Point::new(p[0], p[1]))
            .collect();
        Self {
            served_counts: vec![0; ues.len()],
            load_history: vec![0.0; config.n_uavs],
            tasks: spawn_tasks(config, rng),
            ues,
            poses,
            t: 0,
        }
    }

    pub fn is_done(&self, config: &SimConfig) -> bool {
        self.t >= config.horizon
    }
}

/// Everything that happened in one slot, exported as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based slot index.
    pub t: usize,
    pub poses: Vec<Point>,
    pub violations: Vec<bool>,
    /// Placement per UE: 0 local, `m + 1` for UAV `m`.
    pub decisions: Vec<usize>,
    /// Energy spent by each UE, J.
    pub energies: Vec<f64>,
    pub loads: Vec<f64>,
    pub f_u: f64,
    pub f_e: f64,
    pub rewards: Vec<f64>,
    pub mean_energy: f64,
    pub total_energy: f64,
    /// This slot's contribution to the system objective.
    pub objective: f64,
}

/// Advances the world by one slot under `actions`.
///
/// Returns the next world, the per-agent rewards and the slot record.
pub fn env_step<R: Rng + ?Sized>(
    world: &World,
    actions: &[UavAction],
    config: &SimConfig,
    rng: &mut R,
) -> Result<(World, Vec<f64>, StepRecord)> {
    if world.is_done(config) {
        return Err(Error::PastHorizon {
            t: world.t,
            horizon: config.horizon,
        });
    }
    let (poses, violations) = move_uavs(&world.poses, actions, config)?;

    let decisions: Vec<OffloadDecision> = world
        .ues
        .iter()
        .zip(&world.tasks)
        .map(|(&ue, task)| offload::choose_offload(ue, task, &poses, config))
        .collect();
    let targets: Vec<usize> = decisions.iter().map(|d| d.target).collect();
    let energies: Vec<f64> = decisions.iter().map(|d| d.energy).collect();

    let mut served_counts = world.served_counts.clone();
    for (c, &target) in served_counts.iter_mut().zip(&targets) {
        if target > 0 {
            *c += 1;
        }
    }
    let loads = metrics::relative_loads(&targets, config.n_uavs);
    let load_history: Vec<f64> = world
        .load_history
        .iter()
        .zip(&loads)
        .map(|(h, c)| h + c)
        .collect();

    let f_u = metrics::uav_load_fairness(&load_history);
    let f_e = metrics::ue_service_fairness(&served_counts);
    let rewards = metrics::reward(f_u, f_e, &energies, &violations, config)?;
    let total_energy: f64 = energies.iter().sum();

    let next = World {
        ues: world.ues.clone(),
        poses: poses.clone(),
        t: world.t + 1,
        served_counts,
        load_history,
        tasks: spawn_tasks(config, rng),
    };
    let record = StepRecord {
        t: next.t,
        poses,
        violations,
        decisions: targets,
        mean_energy: total_energy / energies.len() as f64,
        objective: metrics::objective_term(f_u, f_e, &energies),
        total_energy,
        energies,
        loads,
        f_u,
        f_e,
        rewards: rewards.clone(),
    };
    Ok((next, rewards, record))
}

/// Private observation of agent `m`:
/// `[x, y]`, distances to the other UAVs in index order, per-UE served
/// counts, per-UAV cumulative loads.
///
/// Coordinates and distances are divided by the side length, counts and
/// loads by `max(t, 1)`.
pub fn observe(world: &World, m: usize, config: &SimConfig) -> Vec<f64> {
    let l = config.side_len;
    let norm = world.t.max(1) as f64;
    let me = world.poses[m];
    let mut obs = Vec::with_capacity(config.obs_len());
    obs.push(me.x / l);
    obs.push(me.y / l);
    for (k, &p) in world.poses.iter().enumerate() {
        if k != m {
            obs.push(horizontal_dist(me, p) / l);
        }
    }
    obs.extend(world.served_counts.iter().map(|&c| f64::from(c) / norm));
    obs.extend(world.load_history.iter().map(|&c| c / norm));
    obs
}

/// Concatenation of every agent's observation.
pub fn full_state(world: &World, config: &SimConfig) -> Vec<f64> {
    (0..world.poses.len())
        .flat_map(|m| observe(world, m, config))
        .collect()
}
