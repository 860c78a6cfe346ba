//! Jain fairness indices, UE-load accounting and the per-agent reward.

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};

/// Fairness and energy summary of one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessSnapshot {
    /// Load fairness across UAVs.
    pub f_u: f64,
    /// Service fairness across UEs.
    pub f_e: f64,
    /// Mean UE energy in this slot, J.
    pub mean_energy: f64,
    /// Relative UE-load `c_m` of each UAV in this slot.
    pub loads: Vec<f64>,
}

/// Jain's index `(sum v)^2 / (n * sum v^2)`.
///
/// Returns 0 for an empty or all-zero vector.
pub fn jain(values: &[f64]) -> f64 {
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        return 0.0;
    }
    (sum * sum / (values.len() as f64 * sum_sq)).clamp(0.0, 1.0)
}

/// Fairness of the cumulative UE-load carried by each UAV.
pub fn uav_load_fairness(load_history: &[f64]) -> f64 {
    jain(load_history)
}

/// Fairness of the cumulative number of slots each UE was served by any UAV.
pub fn ue_service_fairness(served_counts: &[u32]) -> f64 {
    let v: Vec<f64> = served_counts.iter().map(|&c| f64::from(c)).collect();
    jain(&v)
}

/// Relative load `c_m = (#UEs offloading to m) / N` for every UAV.
///
/// `targets` holds one placement per UE, 0 for local and `m + 1` for UAV `m`.
pub fn relative_loads(targets: &[usize], n_uavs: usize) -> Vec<f64> {
    let mut loads = vec![0.0; n_uavs];
    for &t in targets {
        if t > 0 {
            loads[t - 1] += 1.0;
        }
    }
    let n = targets.len().max(1) as f64;
    loads.iter_mut().for_each(|c| *c /= n);
    loads
}

/// Per-agent reward: shared `f_u * f_e / mean_energy` minus the penalty for
/// each agent whose UAV left the area or came too close to another UAV.
pub fn reward(
    f_u: f64,
    f_e: f64,
    ue_energies: &[f64],
    violations: &[bool],
    config: &SimConfig,
) -> Result<Vec<f64>> {
    if ue_energies.is_empty() {
        return Err(Error::ZeroDivisor("reward: no UEs"));
    }
    let mean = ue_energies.iter().sum::<f64>() / ue_energies.len() as f64;
    if mean <= 0.0 {
        return Err(Error::ZeroDivisor("reward: mean UE energy"));
    }
    let shared = f_u * f_e / mean;
    Ok(violations
        .iter()
        .map(|&v| if v { shared - config.penalty } else { shared })
        .collect())
}

/// One slot's term of the system objective: `f_u * f_e / total energy`.
pub fn objective_term(f_u: f64, f_e: f64, ue_energies: &[f64]) -> f64 {
    let total: f64 = ue_energies.iter().sum();
    if total > 0.0 {
        f_u * f_e / total
    } else {
        0.0
    }
}
