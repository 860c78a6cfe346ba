//! Browser bindings: offloading energy map, baseline episodes and the
//! rate/energy curve, all driven by the simulator core.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use uavmec::baselines::{BaselineKind, CirclePlan};
use uavmec::env::{self, Point, Task};
use uavmec::harness::{
    run_episode, stream_rng, ue_layout, CircleController, RandomController, Stream,
};
use uavmec::offload::choose_offload;
use uavmec::SimConfig;

fn scenario(seed: u64, uavs: usize, ues: usize) -> Result<SimConfig, String> {
    let c = SimConfig {
        seed,
        n_uavs: uavs,
        n_ues: ues,
        ..SimConfig::default()
    };
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

/// Mid-range task: 12 KB at 1900 cycles/bit.
fn typical_task(c: &SimConfig) -> Task {
    let bits = 0.5 * (c.data_bits_range()[0] + c.data_bits_range()[1]);
    Task {
        data_bits: bits,
        cycles: bits * 0.5 * (c.density_range[0] + c.density_range[1]),
    }
}

/// UE energy (J) for a typical task at each cell centre of a `cells x cells`
/// grid, row-major from y = 0, given UAV positions `xy = [x0, y0, x1, y1, ..]`.
pub fn energy_grid(xy: &[f64], cells: usize) -> Result<Vec<f64>, String> {
    if xy.len() % 2 != 0 || cells == 0 {
        return Err("expected x,y pairs and at least one cell".into());
    }
    let c = SimConfig::default();
    let uavs: Vec<Point> = xy.chunks(2).map(|p| Point::new(p[0], p[1])).collect();
    let task = typical_task(&c);
    let step = c.side_len / cells as f64;
    let mut out = Vec::with_capacity(cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let ue = Point::new((i as f64 + 0.5) * step, (j as f64 + 0.5) * step);
            out.push(choose_offload(ue, &task, &uavs, &c).energy);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
pub struct Frame {
    pub t: usize,
    pub poses: Vec<Point>,
    pub violations: Vec<bool>,
    pub decisions: Vec<usize>,
    pub f_e: f64,
    pub f_u: f64,
    pub energy_j: f64,
    pub reward: f64,
}

#[derive(Serialize)]
pub struct Episode {
    pub policy: String,
    pub ues: Vec<Point>,
    pub start: Vec<Point>,
    pub frames: Vec<Frame>,
    pub served: Vec<u32>,
    pub total_energy_j: f64,
}

/// One evaluation episode of a scripted baseline on the seed's UE layout.
pub fn baseline_episode(policy: &str, seed: u64, uavs: usize, ues: usize) -> Result<Episode, String> {
    let kind: BaselineKind = policy.parse()?;
    let c = scenario(seed, uavs, ues)?;
    let layout = ue_layout(&c);
    let start: Vec<Point> = c.initial_poses[..c.n_uavs]
        .iter()
        .map(|p| Point::new(p[0], p[1]))
        .collect();
    let mut tasks = stream_rng(seed, Stream::EvalTasks);
    let outcome = match kind {
        BaselineKind::Random => {
            let mut ctrl = RandomController::new(stream_rng(seed, Stream::BaselineActions));
            run_episode(&layout, &mut ctrl, &c, &mut tasks)
        }
        BaselineKind::Circle => {
            let plan = CirclePlan::new(&layout, &start, &c);
            run_episode(&layout, &mut CircleController { plan }, &c, &mut tasks)
        }
    }
    .map_err(|e| e.to_string())?;
    let frames = outcome
        .steps
        .iter()
        .map(|s| Frame {
            t: s.t,
            poses: s.poses.clone(),
            violations: s.violations.clone(),
            decisions: s.decisions.clone(),
            f_e: s.f_e,
            f_u: s.f_u,
            energy_j: s.total_energy,
            reward: s.rewards.iter().sum::<f64>() / s.rewards.len() as f64,
        })
        .collect();
    Ok(Episode {
        policy: kind.to_string(),
        ues: layout,
        start,
        frames,
        served: outcome.final_world.served_counts.clone(),
        total_energy_j: outcome.total_energy(),
    })
}

/// `[r, rate_bps, offload_energy_j, local_energy_j]` rows for `points`
/// horizontal distances from 0 to `max_r` metres.
pub fn rate_rows(max_r: f64, points: usize) -> Vec<[f64; 4]> {
    let c = SimConfig::default();
    let task = typical_task(&c);
    let local = env::local_energy(&task, env::local_cpu(&task, &c), &c);
    (0..points.max(2))
        .map(|k| {
            let r = max_r * k as f64 / (points.max(2) - 1) as f64;
            let rate = env::data_rate(r, &c);
            let e = env::offload_energy(task.data_bits / rate, &c);
            [r, rate, e, local]
        })
        .collect()
}

#[wasm_bindgen]
pub fn energy_field(xy: &[f64], cells: usize) -> Result<Vec<f64>, JsError> {
    energy_grid(xy, cells).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_baseline(policy: &str, seed: u32, uavs: usize, ues: usize) -> Result<String, JsError> {
    let ep = baseline_episode(policy, u64::from(seed), uavs, ues).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&ep).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn rate_curve(max_r: f64, points: usize) -> Vec<f64> {
    rate_rows(max_r, points).into_iter().flatten().collect()
}

#[wasm_bindgen]
pub fn coverage_radius() -> f64 {
    SimConfig::default().r_max
}
