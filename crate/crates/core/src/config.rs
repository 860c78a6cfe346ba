//! Simulation and training parameters.
//!
//! Defaults reproduce the reference scenario: 50 UEs, 3 UAVs, 20 slots over a
//! 100 m square, 10 MHz channel, 0.1 W UE transmit power and -90 dBm noise.
//! Config files are TOML; any key left out keeps its default and unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How the configured task data sizes are interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataUnit {
    /// 1 unit = 8000 bits.
    Kilobyte,
    /// 1 unit = 1000 bits.
    Kilobit,
}

impl DataUnit {
    pub fn bits(self) -> f64 {
        match self {
            DataUnit::Kilobyte => 8000.0,
            DataUnit::Kilobit => 1000.0,
        }
    }
}

/// Priority given to a transition when it enters the replay buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPriority {
    /// Largest priority seen so far.
    Max,
    /// `|delta| + eps` from a TD-error evaluated at insertion.
    TdError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    // -- scenario --
    /// Number of ground UEs.
    pub n_ues: usize,
    /// Number of UAVs (one agent each).
    pub n_uavs: usize,
    /// Time slots per episode.
    pub horizon: usize,
    /// Side length of the square service area, m.
    pub side_len: f64,
    /// UAV flying altitude, m.
    pub altitude: f64,
    /// Largest flying distance per slot, m.
    pub d_max: f64,
    /// Horizontal coverage radius of a UAV, m.
    pub r_max: f64,
    /// Minimum UAV separation, m.
    pub r_min_sep: f64,
    /// Initial UAV positions; the first `n_uavs` are used.
    pub initial_poses: Vec<[f64; 2]>,

    // -- channel and energy --
    /// Channel bandwidth, Hz.
    pub bandwidth: f64,
    /// UE transmit power, W.
    pub tx_power: f64,
    /// Noise power, W.
    pub noise_power: f64,
    /// Channel power gain at 1 m.
    pub g0: f64,
    /// Antenna gain constant.
    pub big_g0: f64,
    /// Effective switched capacitance of UE CPUs.
    pub k_n: f64,
    /// Exponent of the CPU power model.
    pub v_n: f64,
    /// Slot length and task deadline, s.
    pub t_max: f64,
    /// Task data size range in `data_unit`s.
    pub data_range: [f64; 2],
    pub data_unit: DataUnit,
    /// Processing density range, CPU cycles per bit.
    pub density_range: [f64; 2],
    /// Reward penalty for leaving the area or colliding.
    pub penalty: f64,

    // -- learning --
    pub gamma: f64,
    /// Soft target update rate.
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Mini-batch size K.
    pub batch_size: usize,
    /// Replay capacity per agent.
    pub buffer_capacity: usize,
    /// Priority floor added to |delta|.
    pub eps_priority: f64,
    /// Priority exponent.
    pub beta_priority: f64,
    /// Importance-sampling exponent.
    pub mu_is: f64,
    pub initial_priority: InitialPriority,
    /// Initial exploration noise standard deviation.
    pub noise_std: f64,
    /// Multiplicative noise decay per training step.
    pub noise_decay: f64,
    /// Hidden layer widths for actors and critics.
    pub hidden: Vec<usize>,
    /// Factor applied to rewards before they reach the critics.
    pub reward_scale: f64,
    /// Scale of the last actor layer at initialization.
    pub actor_out_init_scale: f64,
    /// Drop the bootstrap term on the final slot of an episode.
    pub terminal_mask: bool,
    /// Weight of the squared pre-tanh actor output subtracted from the actor
    /// objective; keeps actions away from the saturated ends of tanh.
    pub actor_preact_reg: f64,

    // -- run control --
    pub episodes: usize,
    pub seed: u64,
    /// Write a checkpoint every this many episodes (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_ues: 50,
            n_uavs: 3,
            horizon: 20,
            side_len: 100.0,
            altitude: 50.0,
            d_max: 20.0,
            r_max: 20.0,
            r_min_sep: 1.0,
            initial_poses: vec![[10.0, 10.0], [90.0, 90.0], [10.0, 90.0], [90.0, 10.0]],
            bandwidth: 10e6,
            tx_power: 0.1,
            noise_power: 1e-12,
            g0: 1.42e-4,
            big_g0: 2.2846,
            k_n: 1e-28,
            v_n: 3.0,
            t_max: 1.0,
            data_range: [10.0, 14.0],
            data_unit: DataUnit::Kilobyte,
            density_range: [1800.0, 2000.0],
            penalty: 10.0,
            gamma: 0.95,
            tau: 0.01,
            lr_actor: 3e-5,
            lr_critic: 1e-4,
            batch_size: 256,
            buffer_capacity: 100_000,
            eps_priority: 0.001,
            beta_priority: 0.6,
            mu_is: 0.4,
            initial_priority: InitialPriority::Max,
            noise_std: 1.0,
            noise_decay: 0.9995,
            hidden: vec![400, 300, 200, 200],
            reward_scale: 1e-3,
            actor_out_init_scale: 1e-3,
            terminal_mask: true,
            actor_preact_reg: 0.0,
            episodes: 3000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl SimConfig {
    /// Small scenario used for quick experiments: 20 UEs, 2 UAVs, [64, 64] nets.
    pub fn desk() -> Self {
        Self {
            n_ues: 20,
            n_uavs: 2,
            batch_size: 64,
            hidden: vec![64, 64],
            episodes: 500,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            actor_preact_reg: 1.0,
            ..Self::default()
        }
    }

    /// SNR numerator constant `g0 * G0 / sigma^2`, 1/W.
    pub fn rho(&self) -> f64 {
        self.g0 * self.big_g0 / self.noise_power
    }

    /// Task data range converted to bits.
    pub fn data_bits_range(&self) -> [f64; 2] {
        let u = self.data_unit.bits();
        [self.data_range[0] * u, self.data_range[1] * u]
    }

    /// Length of one agent's observation vector.
    pub fn obs_len(&self) -> usize {
        2 + (self.n_uavs - 1) + self.n_ues + self.n_uavs
    }

    /// Length of the concatenated state seen by the critics.
    pub fn state_len(&self) -> usize {
        self.n_uavs * self.obs_len()
    }

    pub fn validate(&self) -> Result<()> {
        fn fail(msg: impl Into<String>) -> Result<()> {
            Err(Error::Config(msg.into()))
        }
        let positive = [
            ("side_len", self.side_len),
            ("altitude", self.altitude),
            ("d_max", self.d_max),
            ("r_max", self.r_max),
            ("r_min_sep", self.r_min_sep),
            ("bandwidth", self.bandwidth),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("g0", self.g0),
            ("big_g0", self.big_g0),
            ("k_n", self.k_n),
            ("t_max", self.t_max),
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("eps_priority", self.eps_priority),
            ("reward_scale", self.reward_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.n_ues == 0 || self.n_uavs == 0 || self.horizon == 0 {
            return fail("n_ues, n_uavs and horizon must be > 0");
        }
        if self.v_n < 1.0 {
            return fail(format!("v_n must be >= 1, got {}", self.v_n));
        }
        if self.r_min_sep >= self.r_max {
            return fail("r_min_sep must be smaller than r_max");
        }
        if self.d_max > self.side_len {
            return fail("d_max must not exceed side_len");
        }
        for (name, r) in [("data_range", self.data_range), ("density_range", self.density_range)] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return fail(format!("{name} must satisfy 0 < min <= max, got {r:?}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if self.penalty < 0.0 {
            return fail("penalty must be >= 0");
        }
        if self.initial_poses.len() < self.n_uavs {
            return fail(format!(
                "{} initial poses given for {} UAVs",
                self.initial_poses.len(),
                self.n_uavs
            ));
        }
        for p in &self.initial_poses[..self.n_uavs] {
            if !(0.0..=self.side_len).contains(&p[0]) || !(0.0..=self.side_len).contains(&p[1]) {
                return fail(format!("initial pose {p:?} is outside the area"));
            }
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return fail("need 0 < batch_size <= buffer_capacity");
        }
        if !(self.actor_preact_reg >= 0.0 && self.actor_preact_reg.is_finite()) {
            return fail("actor_preact_reg must be finite and >= 0");
        }
        if !(self.beta_priority >= 0.0 && self.mu_is >= 0.0) {
            return fail("beta_priority and mu_is must be >= 0");
        }
        if !(self.noise_std >= 0.0 && self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return fail("noise_std must be >= 0 and noise_decay in (0, 1]");
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return fail("hidden widths must be > 0");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Hash of everything that shapes the networks and the environment.
    ///
    /// Run-control and optimizer knobs are left out so a checkpoint can be
    /// evaluated under a different seed or episode count.
    pub fn model_hash(&self) -> String {
        let key = serde_json::json!({
            "n_ues": self.n_ues,
            "n_uavs": self.n_uavs,
            "horizon": self.horizon,
            "side_len": self.side_len,
            "altitude": self.altitude,
            "d_max": self.d_max,
            "r_max": self.r_max,
            "r_min_sep": self.r_min_sep,
            "hidden": self.hidden,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
