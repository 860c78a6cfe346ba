//! Training loop, evaluation, baseline runs, metric export and checkpoints.
//!
//! Every run derives independent ChaCha streams from the config seed:
//! UE layout, network init, training tasks, exploration and replay sampling,
//! evaluation tasks, and baseline actions. The UE layout depends only on the
//! seed, so training, evaluation and baselines see the same deployment, and
//! evaluation and baselines see the same task sequence.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{circle_policy, random_policy, BaselineKind, CirclePlan};
use crate::config::{InitialPriority, SimConfig};
use crate::env::{self, env_step, observe, Point, StepRecord, UavAction, World};
use crate::error::{Error, Result};
use crate::maddpg::{to_uav_action, DecentralizedPolicy, Maddpg, TrainDiagnostics};
use crate::neural::DenseNet;
use crate::replay::Transition;
use crate::{seeded_rng, SimRng};

/// Independent RNG streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Layout = 0,
    Init = 1,
    TrainTasks = 2,
    Learn = 3,
    EvalTasks = 4,
    BaselineActions = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream as u64);
    rng
}

/// UE deployment used by every run with this seed.
pub fn ue_layout(config: &SimConfig) -> Vec<Point> {
    env::spawn_ues(config, &mut stream_rng(config.seed, Stream::Layout))
}

/// Per-episode summary row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub episode: usize,
    /// Accumulated reward of each agent.
    pub rewards: Vec<f64>,
    /// Service fairness after the last slot.
    pub f_e: f64,
    /// Load fairness after the last slot.
    pub f_u: f64,
    /// Energy spent by all UEs over the episode, J.
    pub energy_j: f64,
    pub seconds: f64,
    pub seed: u64,
}

impl RunRecord {
    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }
}

/// Chooses the joint action for the next slot.
pub trait Controller {
    fn actions(&mut self, world: &World, config: &SimConfig) -> Result<Vec<UavAction>>;
}

/// Runs a [`DecentralizedPolicy`]: each agent sees only its own observation.
pub struct Decentralized<P>(pub P);

impl<P: DecentralizedPolicy> Controller for Decentralized<P> {
    fn actions(&mut self, world: &World, config: &SimConfig) -> Result<Vec<UavAction>> {
        (0..world.poses.len())
            .map(|m| self.0.act(m, &observe(world, m, config)))
            .collect()
    }
}

pub struct RandomController {
    rng: SimRng,
}

impl RandomController {
    pub fn new(rng: SimRng) -> Self {
        Self { rng }
    }
}

impl Controller for RandomController {
    fn actions(&mut self, world: &World, config: &SimConfig) -> Result<Vec<UavAction>> {
        Ok((0..world.poses.len())
            .map(|_| random_policy(config, &mut self.rng))
            .collect())
    }
}

pub struct CircleController {
    pub plan: CirclePlan,
}

impl Controller for CircleController {
    fn actions(&mut self, world: &World, _config: &SimConfig) -> Result<Vec<UavAction>> {
        Ok(world
            .poses
            .iter()
            .enumerate()
            .map(|(m, &p)| circle_policy(&self.plan, m, p, world.t))
            .collect())
    }
}

/// Slot records and totals of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub steps: Vec<StepRecord>,
    pub rewards: Vec<f64>,
    pub final_world: World,
}

impl EpisodeOutcome {
    pub fn total_energy(&self) -> f64 {
        self.steps.iter().map(|s| s.total_energy).sum()
    }

    pub fn record(&self, episode: usize, seconds: f64, seed: u64) -> RunRecord {
        let last = self.steps.last();
        RunRecord {
            episode,
            rewards: self.rewards.clone(),
            f_e: last.map_or(0.0, |s| s.f_e),
            f_u: last.map_or(0.0, |s| s.f_u),
            energy_j: self.total_energy(),
            seconds,
            seed,
        }
    }
}

/// Plays one full episode from the initial poses.
pub fn run_episode<C: Controller + ?Sized>(
    ues: &[Point],
    controller: &mut C,
    config: &SimConfig,
    task_rng: &mut SimRng,
) -> Result<EpisodeOutcome> {
    let mut world = World::reset(ues.to_vec(), config, task_rng);
    let mut steps = Vec::with_capacity(config.horizon);
    let mut rewards = vec![0.0; config.n_uavs];
    while !world.is_done(config) {
        let actions = controller.actions(&world, config)?;
        let (next, r, rec) = env_step(&world, &actions, config, task_rng)?;
        rewards.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
        steps.push(rec);
        world = next;
    }
    Ok(EpisodeOutcome {
        steps,
        rewards,
        final_world: world,
    })
}

/// Hooks for observing training progress.
pub trait TrainObserver {
    fn on_episode(&mut self, _record: &RunRecord, _last_diag: &TrainDiagnostics) {}
}

impl TrainObserver for () {}

pub struct TrainOutcome {
    pub model: Maddpg,
    pub log: Vec<RunRecord>,
    pub ues: Vec<Point>,
}

/// Trains one agent per UAV for `config.episodes` episodes.
///
/// With `out`, writes `train_log.csv` and a `checkpoint/` directory there
/// (periodically when `checkpoint_every > 0`, and at the end). A failed run
/// leaves the last written checkpoint untouched.
pub fn train(config: &SimConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    train_with(config, out, &mut ())
}

pub fn train_with(
    config: &SimConfig,
    out: Option<&Path>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        config.save(&dir.join("config.toml"))?;
    }
    let ues = ue_layout(config);
    let mut model = Maddpg::new(config, &mut stream_rng(config.seed, Stream::Init));
    let mut task_rng = stream_rng(config.seed, Stream::TrainTasks);
    let mut learn_rng = stream_rng(config.seed, Stream::Learn);
    let td_priority = config.initial_priority == InitialPriority::TdError;
    let n = config.n_uavs;
    let obs_len = config.obs_len();
    let mut log = Vec::with_capacity(config.episodes);
    let mut diag = TrainDiagnostics::default();

    for episode in 0..config.episodes {
        let started = Instant::now();
        let mut world = World::reset(ues.clone(), config, &mut task_rng);
        let mut state = env::full_state(&world, config);
        let mut steps = Vec::with_capacity(config.horizon);
        let mut rewards = vec![0.0; n];
        while !world.is_done(config) {
            let mut joint = Vec::with_capacity(2 * n);
            let mut actions = Vec::with_capacity(n);
            for m in 0..n {
                let obs = &state[m * obs_len..(m + 1) * obs_len];
                let raw = model.select_action(m, obs, true, &mut learn_rng)?;
                joint.extend_from_slice(&raw);
                actions.push(to_uav_action(raw, config.d_max));
            }
            let (next, r, rec) = env_step(&world, &actions, config, &mut task_rng)?;
            let next_state = env::full_state(&next, config);
            let terminal = next.is_done(config);
            for (m, &rm) in r.iter().enumerate() {
                let tr = Transition {
                    state: state.clone(),
                    action: joint.clone(),
                    reward: rm,
                    next_state: next_state.clone(),
                    terminal,
                };
                model.remember(m, tr, td_priority)?;
                rewards[m] += rm;
            }
            diag = model.train_step(&mut learn_rng)?;
            steps.push(rec);
            world = next;
            state = next_state;
        }
        let outcome = EpisodeOutcome {
            steps,
            rewards,
            final_world: world,
        };
        let record = outcome.record(episode, started.elapsed().as_secs_f64(), config.seed);
        observer.on_episode(&record, &diag);
        log.push(record);

        let every = config.checkpoint_every;
        if let Some(dir) = out {
            if every > 0 && (episode + 1) % every == 0 && episode + 1 < config.episodes {
                save_checkpoint(&model, config, &dir.join("checkpoint"))?;
                export_metrics(&log, &dir.join("train_log.csv"))?;
            }
        }
    }
    if let Some(dir) = out {
        save_checkpoint(&model, config, &dir.join("checkpoint"))?;
        export_metrics(&log, &dir.join("train_log.csv"))?;
    }
    Ok(TrainOutcome { model, log, ues })
}

/// Aggregate of an evaluation or baseline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// `mat`, `random` or `circle`.
    pub policy: String,
    pub seed: u64,
    pub episodes: Vec<RunRecord>,
    /// Mean over episodes and agents of the accumulated reward.
    pub mean_reward: f64,
    pub mean_f_e: f64,
    pub mean_f_u: f64,
    /// Mean per-episode UE energy, J.
    pub mean_energy_j: f64,
    /// Mean per-episode sum of `f_u * f_e / total UE energy`.
    pub mean_objective: f64,
    /// Per-UE position and served count summed over all episodes.
    pub heatmap: Vec<HeatCell>,
    /// Per-slot means over episodes.
    pub curves: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub ue: usize,
    pub x: f64,
    pub y: f64,
    pub served: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub f_e: f64,
    pub f_u: f64,
    pub energy_j: f64,
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    policy: &'a str,
    episode: usize,
    #[serde(flatten)]
    step: &'a StepRecord,
}

/// Runs `episodes` episodes of `controller` on the evaluation task stream.
/// With `out`, writes `trajectory.jsonl`, `summary.json`, `episodes.csv`,
/// `curves.csv` and `heatmap.csv` there.
pub fn run_policy<C: Controller + ?Sized>(
    policy: &str,
    controller: &mut C,
    config: &SimConfig,
    episodes: usize,
    out: Option<&Path>,
) -> Result<EvalSummary> {
    config.validate()?;
    let ues = ue_layout(config);
    let mut task_rng = stream_rng(config.seed, Stream::EvalTasks);
    let mut traj = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("trajectory.jsonl");
            Some((BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?), p))
        }
        None => None,
    };
    let mut records = Vec::with_capacity(episodes);
    let mut served = vec![0u32; ues.len()];
    let mut objective = 0.0;
    let mut curves: Vec<CurvePoint> = (1..=config.horizon)
        .map(|t| CurvePoint {
            t,
            f_e: 0.0,
            f_u: 0.0,
            energy_j: 0.0,
        })
        .collect();
    for episode in 0..episodes {
        let started = Instant::now();
        let outcome = run_episode(&ues, controller, config, &mut task_rng)?;
        if let Some((w, p)) = traj.as_mut() {
            for step in &outcome.steps {
                let line = TrajectoryLine {
                    policy,
                    episode,
                    step,
                };
                serde_json::to_writer(&mut *w, &line)?;
                w.write_all(b"\n").map_err(|e| Error::io(p.as_path(), e))?;
            }
        }
        for (s, c) in served.iter_mut().zip(&outcome.final_world.served_counts) {
            *s += c;
        }
        for (cp, step) in curves.iter_mut().zip(&outcome.steps) {
            cp.f_e += step.f_e;
            cp.f_u += step.f_u;
            cp.energy_j += step.total_energy;
        }
        objective += outcome.steps.iter().map(|s| s.objective).sum::<f64>();
        records.push(outcome.record(episode, started.elapsed().as_secs_f64(), config.seed));
    }
    if let Some((mut w, p)) = traj {
        w.flush().map_err(|e| Error::io(&p, e))?;
    }
    let ne = episodes.max(1) as f64;
    for cp in &mut curves {
        cp.f_e /= ne;
        cp.f_u /= ne;
        cp.energy_j /= ne;
    }
    let summary = EvalSummary {
        policy: policy.to_string(),
        seed: config.seed,
        mean_reward: records.iter().map(RunRecord::mean_reward).sum::<f64>() / ne,
        mean_f_e: records.iter().map(|r| r.f_e).sum::<f64>() / ne,
        mean_f_u: records.iter().map(|r| r.f_u).sum::<f64>() / ne,
        mean_energy_j: records.iter().map(|r| r.energy_j).sum::<f64>() / ne,
        mean_objective: objective / ne,
        heatmap: ues
            .iter()
            .zip(&served)
            .enumerate()
            .map(|(ue, (p, &served))| HeatCell {
                ue,
                x: p.x,
                y: p.y,
                served,
            })
            .collect(),
        curves,
        episodes: records,
    };
    if let Some(dir) = out {
        write_summary(&summary, dir)?;
    }
    Ok(summary)
}

fn write_summary(summary: &EvalSummary, dir: &Path) -> Result<()> {
    let p = dir.join("summary.json");
    let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), summary)?;
    export_metrics(&summary.episodes, &dir.join("episodes.csv"))?;

    let p = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["t", "f_e", "f_u", "energy_j"])?;
    for c in &summary.curves {
        w.write_record([
            c.t.to_string(),
            c.f_e.to_string(),
            c.f_u.to_string(),
            format!("{:.11e}", c.energy_j),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    let p = dir.join("heatmap.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["ue", "x", "y", "served"])?;
    for c in &summary.heatmap {
        w.write_record([c.ue.to_string(), c.x.to_string(), c.y.to_string(), c.served.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// Greedy, noise-free evaluation of a saved model.
pub fn evaluate(
    checkpoint: &Path,
    config: &SimConfig,
    episodes: usize,
    out: Option<&Path>,
) -> Result<EvalSummary> {
    let model = load_checkpoint(checkpoint, config)?;
    evaluate_model(model, config, episodes, out)
}

pub fn evaluate_model(
    model: Maddpg,
    config: &SimConfig,
    episodes: usize,
    out: Option<&Path>,
) -> Result<EvalSummary> {
    run_policy("mat", &mut Decentralized(model), config, episodes, out)
}

/// RANDOM or CIRCLE over the same layout and evaluation tasks.
pub fn run_baseline(
    kind: BaselineKind,
    config: &SimConfig,
    episodes: usize,
    out: Option<&Path>,
) -> Result<EvalSummary> {
    let name = kind.to_string();
    match kind {
        BaselineKind::Random => {
            let mut c = RandomController::new(stream_rng(config.seed, Stream::BaselineActions));
            run_policy(&name, &mut c, config, episodes, out)
        }
        BaselineKind::Circle => {
            let initial: Vec<Point> = config.initial_poses[..config.n_uavs]
                .iter()
                .map(|p| Point::new(p[0], p[1]))
                .collect();
            let plan = CirclePlan::new(&ue_layout(config), &initial, config);
            run_policy(&name, &mut CircleController { plan }, config, episodes, out)
        }
    }
}

/// CSV header for `n_agents` agents.
pub fn metrics_header(n_agents: usize) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "seed".to_string()];
    h.extend((0..n_agents).map(|m| format!("reward_{m}")));
    h.extend(["f_e", "f_u", "energy_j", "seconds"].map(String::from));
    h
}

/// Writes one CSV row per episode. Energies carry 12 significant digits;
/// rewards and fairness use the shortest exact representation.
pub fn export_metrics(records: &[RunRecord], path: &Path) -> Result<()> {
    let n_agents = records.first().map_or(0, |r| r.rewards.len());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header(n_agents))?;
    for r in records {
        let mut row = vec![r.episode.to_string(), r.seed.to_string()];
        row.extend(r.rewards.iter().map(|v| v.to_string()));
        row.push(r.f_e.to_string());
        row.push(r.f_u.to_string());
        row.push(format!("{:.11e}", r.energy_j));
        row.push(format!("{:.3}", r.seconds));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let n_agents = header.iter().filter(|h| h.starts_with("reward_")).count();
    let bad = |what: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: format!("malformed metrics column {what}"),
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(&i.to_string()))
        };
        let base = 2 + n_agents;
        out.push(RunRecord {
            episode: row.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("episode"))?,
            seed: row.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("seed"))?,
            rewards: (0..n_agents).map(|m| num(2 + m)).collect::<Result<_>>()?,
            f_e: num(base)?,
            f_u: num(base + 1)?,
            energy_j: num(base + 2)?,
            seconds: num(base + 3)?,
        });
    }
    Ok(out)
}

const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFiles {
    pub index: usize,
    pub actor: String,
    pub critic: String,
    pub target_actor: String,
    pub target_critic: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub config_hash: String,
    pub n_agents: usize,
    pub obs_len: usize,
    pub agents: Vec<AgentFiles>,
}

/// Writes all agents' networks plus `manifest.json` into `dir`, replacing
/// any previous checkpoint only once the new one is complete.
pub fn save_checkpoint(model: &Maddpg, config: &SimConfig, dir: &Path) -> Result<()> {
    let staging = dir.with_extension("partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let mut agents = Vec::with_capacity(model.n_agents());
    for agent in &model.agents {
        let m = agent.index;
        let files = AgentFiles {
            index: m,
            actor: format!("agent{m}_actor.bin"),
            critic: format!("agent{m}_critic.bin"),
            target_actor: format!("agent{m}_target_actor.bin"),
            target_critic: format!("agent{m}_target_critic.bin"),
        };
        agent.actor.save(&staging.join(&files.actor))?;
        agent.critic.save(&staging.join(&files.critic))?;
        agent.target_actor.save(&staging.join(&files.target_actor))?;
        agent.target_critic.save(&staging.join(&files.target_critic))?;
        agents.push(files);
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT,
        config_hash: config.model_hash(),
        n_agents: model.n_agents(),
        obs_len: model.obs_len,
        agents,
    };
    let p = staging.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a checkpoint, refusing it when it was trained for a different
/// scenario or network shape than `config`.
pub fn load_checkpoint(dir: &Path, config: &SimConfig) -> Result<Maddpg> {
    let manifest = read_manifest(dir)?;
    let fail = |reason: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        reason,
    };
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(fail(format!("unsupported format {}", manifest.format)));
    }
    if manifest.config_hash != config.model_hash() {
        return Err(fail(format!(
            "config hash mismatch: checkpoint {} vs config {}",
            manifest.config_hash,
            config.model_hash()
        )));
    }
    let mut files = manifest.agents.clone();
    files.sort_by_key(|a| a.index);
    if files.iter().enumerate().any(|(i, a)| a.index != i) {
        return Err(fail("agent indices are not 0..n".into()));
    }
    let nets = files
        .iter()
        .map(|a| {
            Ok([
                DenseNet::load(&dir.join(&a.actor))?,
                DenseNet::load(&dir.join(&a.critic))?,
                DenseNet::load(&dir.join(&a.target_actor))?,
                DenseNet::load(&dir.join(&a.target_critic))?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Maddpg::from_networks(config, nets)
}

/// Mean of accumulated rewards over a slice of records.
pub fn mean_reward(records: &[RunRecord]) -> f64 {
    records.iter().map(RunRecord::mean_reward).sum::<f64>() / records.len().max(1) as f64
}

/// Convenience for quick experiments: a random joint action.
pub fn random_joint<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Vec<UavAction> {
    (0..config.n_uavs).map(|_| random_policy(config, rng)).collect()
}
