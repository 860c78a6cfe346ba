//! Least-energy offloading rule for fixed UAV positions.

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::env::{self, horizontal_dist, Point, Task};
use crate::error::{Error, Result};

/// Where one UE's task runs in one slot and what it costs the UE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffloadDecision {
    /// 0 = local, `m + 1` = UAV `m`.
    pub target: usize,
    /// UE energy, J.
    pub energy: f64,
    /// CPU frequency executing the task, Hz (UE CPU when local).
    pub alloc_cpu: f64,
    /// Upload time, s (0 when local).
    pub tx_time: f64,
}

/// UAV CPU frequency that finishes the task exactly at the deadline after an
/// upload of `tx_time` seconds.
pub fn alloc_cpu(task: &Task, tx_time: f64, config: &SimConfig) -> Result<f64> {
    if tx_time >= config.t_max {
        return Err(Error::Infeasible {
            tx_time,
            t_max: config.t_max,
        });
    }
    Ok(task.cycles / (config.t_max - tx_time))
}

fn local_decision(task: &Task, config: &SimConfig) -> OffloadDecision {
    let f = env::local_cpu(task, config);
    OffloadDecision {
        target: 0,
        energy: env::local_energy(task, f, config),
        alloc_cpu: f,
        tx_time: 0.0,
    }
}

/// Picks the feasible placement with the least UE energy.
///
/// A UAV is feasible when the UE lies within its coverage radius and the
/// upload finishes before the deadline. Local execution is always feasible.
/// Exact ties go to the lowest index, local first.
pub fn choose_offload(ue: Point, task: &Task, uavs: &[Point], config: &SimConfig) -> OffloadDecision {
    let mut best = local_decision(task, config);
    for (m, &uav) in uavs.iter().enumerate() {
        if horizontal_dist(ue, uav) > config.r_max {
            continue;
        }
        let rate = env::data_rate(horizontal_dist(ue, uav), config);
        let tx_time = task.data_bits / rate;
        let Ok(cpu) = alloc_cpu(task, tx_time, config) else {
            continue;
        };
        let energy = env::offload_energy(tx_time, config);
        if energy < best.energy {
            best = OffloadDecision {
                target: m + 1,
                energy,
                alloc_cpu: cpu,
                tx_time,
            };
        }
    }
    best
}

/// Exhaustive reference for [`choose_offload`]: scores all `M + 1`
/// placements, checks every constraint explicitly (coverage, full
/// upload-plus-execution deadline) and takes the lexicographic minimum of
/// `(energy, index)`.
pub fn brute_force_decision(
    ue: Point,
    task: &Task,
    uavs: &[Point],
    config: &SimConfig,
) -> OffloadDecision {
    let mut options: Vec<OffloadDecision> = Vec::with_capacity(uavs.len() + 1);
    options.push(local_decision(task, config));
    for (m, &uav) in uavs.iter().enumerate() {
        let dx = ue.x - uav.x;
        let dy = ue.y - uav.y;
        let r2 = dx * dx + dy * dy;
        if r2.sqrt() > config.r_max {
            continue;
        }
        let Ok(tx_time) = env::offload_time(task, env::data_rate(r2.sqrt(), config)) else {
            continue;
        };
        let Ok(cpu) = alloc_cpu(task, tx_time, config) else {
            continue;
        };
        let Ok(exec) = env::exec_time(task, cpu) else {
            continue;
        };
        if tx_time + exec > config.t_max * (1.0 + 1e-12) {
            continue;
        }
        options.push(OffloadDecision {
            target: m + 1,
            energy: config.tx_power * tx_time,
            alloc_cpu: cpu,
            tx_time,
        });
    }
    options
        .into_iter()
        .min_by(|a, b| a.energy.total_cmp(&b.energy).then(a.target.cmp(&b.target)))
        .expect("local placement is always present")
}
