//! Trajectory simulation by operator splitting: a velocity-Verlet pass over
//! the harmonic force, the exact one-step Ornstein-Uhlenbeck bath update at
//! thermostatted sites, and Bernoulli-thinned velocity flips.
//!
//! Each replica owns an independent ChaCha stream derived from the master
//! seed (`seed_from_u64(seed)` with the stream id set to `replica + 1`), so
//! runs are reproducible and replicas are freely parallel.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{local_observables, total_energy, ChainParams, ChainState, Model};
use crate::equilibrium::TemperatureProfile;
use crate::error::{Error, Result};

/// Integrator and sampling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_burn: f64,
    pub t_sample: f64,
    pub sample_stride: usize,
    pub seed: u64,
    pub replicas: usize,
    /// Lifts the dt * max(1, nu, lambda, gamma) <= 0.1 stability guard.
    #[serde(default)]
    pub allow_large_dt: bool,
}

impl SimConfig {
    pub fn validate(&self, params: &ChainParams) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt must be > 0"));
        }
        if !(self.t_sample > 0.0) || self.t_burn < 0.0 {
            return Err(Error::invalid("need t_sample > 0 and t_burn >= 0"));
        }
        if self.sample_stride == 0 || self.replicas == 0 {
            return Err(Error::invalid("sample_stride and replicas must be >= 1"));
        }
        let scale = [1.0, params.pinning, params.bath_coupling, params.flip_rate]
            .into_iter()
            .fold(0.0f64, f64::max);
        if self.dt * scale > 0.1 && !self.allow_large_dt {
            return Err(Error::invalid(format!(
                "dt = {} violates the stability guard dt*max(1,nu,lambda,gamma) <= 0.1; \
                 set allow_large_dt to override",
                self.dt
            )));
        }
        if self.n_samples() == 0 {
            return Err(Error::invalid(
                "t_sample too short: no samples at this dt and stride",
            ));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> u64 {
        (self.t_sample / (self.dt * self.sample_stride as f64)).floor() as u64
    }

    /// Conservative defaults: dt = 0.01/max(1, nu, lambda, gamma) and a
    /// burn-in of twenty diffusive relaxation times.
    pub fn default_for(params: &ChainParams) -> SimConfig {
        let scale = [1.0, params.pinning, params.bath_coupling, params.flip_rate]
            .into_iter()
            .fold(0.0f64, f64::max);
        let dt = 0.01 / scale;
        let n2 = (params.n_sites * params.n_sites) as f64;
        let rate = if params.flip_rate > 0.0 {
            params.flip_rate
        } else {
            params.bath_coupling.max(1.0)
        };
        let t_burn = 20.0 * n2 / rate;
        SimConfig {
            dt,
            t_burn,
            t_sample: t_burn,
            sample_stride: ((0.2 / dt) as usize).max(1),
            seed: 1,
            replicas: 1,
            allow_large_dt: false,
        }
    }
}

/// Accumulated NESS statistics of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub mean_p_sq_profile: Vec<f64>,
    pub mean_energy_profile: Vec<f64>,
    /// Time average of the energy current over interior bonds.
    pub mean_current: f64,
    /// Total energy at every sampling step.
    pub h_samples: Vec<f64>,
    pub flip_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Accumulators {
    psq: Vec<f64>,
    energy: Vec<f64>,
    current_sum: f64,
    h_samples: Vec<f64>,
    flip_count: u64,
    samples: u64,
}

impl Accumulators {
    fn new(n: usize) -> Self {
        Accumulators {
            psq: vec![0.0; n],
            energy: vec![0.0; n],
            current_sum: 0.0,
            h_samples: Vec::new(),
            flip_count: 0,
            samples: 0,
        }
    }
}

/// A single replica mid-flight; serialisable as a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicaRun {
    pub params: ChainParams,
    pub cfg: SimConfig,
    bath_temps: Vec<f64>,
    pub replica_index: usize,
    state: ChainState,
    rng: ChaCha12Rng,
    steps_done: u64,
    burn_steps: u64,
    total_steps: u64,
    accum: Accumulators,
}

impl ReplicaRun {
    /// Set up a replica. The self-consistent model needs its bath profile;
    /// the velocity-flip model reads the end temperatures from `params` and
    /// any supplied profile must agree with them at the ends.
    pub fn new(
        params: &ChainParams,
        cfg: &SimConfig,
        profile: Option<&TemperatureProfile>,
        replica_index: usize,
    ) -> Result<Self> {
        params.validate()?;
        cfg.validate(params)?;
        let n = params.n_sites;
        let bath_temps = match params.model {
            Model::VelocityFlip => {
                let mut t = vec![0.0; n];
                t[0] = params.temp_left;
                t[n - 1] = params.temp_right;
                t
            }
            Model::SelfConsistent => {
                let profile = profile.ok_or_else(|| {
                    Error::invalid(
                        "self-consistent runs need the bath temperature profile \
                         (solve it with steady_state::self_consistent_profile)",
                    )
                })?;
                if profile.len() != n {
                    return Err(Error::invalid("profile length mismatch"));
                }
                profile.temps.clone()
            }
        };

        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        rng.set_stream(replica_index as u64 + 1);

        // start from a locally thermal momentum distribution over the
        // linear ramp; positions relaxed to the force-free configuration
        let ramp = TemperatureProfile::linear(params.temp_left, params.temp_right, n)?;
        let mut state = ChainState::zeros(n);
        for j in 0..n {
            let t = ramp.temps[j];
            state.momenta[j] = t.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }

        let burn_steps = (cfg.t_burn / cfg.dt).round() as u64;
        let total_steps = burn_steps + cfg.n_samples() * cfg.sample_stride as u64;
        Ok(ReplicaRun {
            params: params.clone(),
            cfg: cfg.clone(),
            bath_temps,
            replica_index,
            state,
            rng,
            steps_done: 0,
            burn_steps,
            total_steps,
            accum: Accumulators::new(n),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.steps_done >= self.total_steps
    }

    /// One splitting step: Verlet drift, exact OU bath kicks, thinned flips.
    fn step(&mut self, force: &mut [f64]) -> Result<()> {
        let n = self.params.n_sites;
        let dt = self.cfg.dt;
        let q = &mut self.state.positions;
        let p = &mut self.state.momenta;

        // velocity Verlet on the harmonic force
        self.params.force(q, force);
        for j in 0..n {
            p[j] += 0.5 * dt * force[j];
            q[j] += dt * p[j];
        }
        self.params.force(q, force);
        for j in 0..n {
            p[j] += 0.5 * dt * force[j];
        }

        // exact Ornstein-Uhlenbeck update at thermostatted sites
        let lambda = self.params.bath_coupling;
        if lambda > 0.0 {
            let decay = (-lambda * dt).exp();
            let var_factor = 1.0 - decay * decay;
            match self.params.model {
                Model::VelocityFlip => {
                    for j in [0, n - 1] {
                        let amp = (self.bath_temps[j] * var_factor).sqrt();
                        p[j] = decay * p[j] + amp * self.rng.sample::<f64, _>(StandardNormal);
                        if n == 1 {
                            break;
                        }
                    }
                }
                Model::SelfConsistent => {
                    for j in 0..n {
                        let amp = (self.bath_temps[j] * var_factor).sqrt();
                        p[j] = decay * p[j] + amp * self.rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }

        // velocity flips: the number of flipped sites is Binomial(n, prob)
        // and the sites a uniform subset, equivalent to independent
        // per-site Bernoulli draws
        let gamma = self.params.flip_rate;
        if gamma > 0.0 && self.params.model == Model::VelocityFlip {
            let prob = 1.0 - (-gamma * dt).exp();
            let k = Binomial::new(n as u64, prob)
                .map_err(|e| Error::invalid(format!("flip thinning: {e}")))?
                .sample(&mut self.rng);
            if k > 0 {
                #[cfg(debug_assertions)]
                let h_before = total_energy(&self.state, &self.params);
                let sites = rand::seq::index::sample(&mut self.rng, n, k as usize);
                for j in sites {
                    self.state.momenta[j] = -self.state.momenta[j];
                }
                self.accum.flip_count += k;
                #[cfg(debug_assertions)]
                {
                    let h_after = total_energy(&self.state, &self.params);
                    debug_assert_eq!(
                        h_before.to_bits(),
                        h_after.to_bits(),
                        "flips must conserve the energy bit for bit"
                    );
                }
            }
        }

        self.state.time += dt;
        self.steps_done += 1;
        if self.steps_done % 4096 == 0 {
            self.state.validate()?;
        }
        Ok(())
    }

    fn record_sample(&mut self) {
        let n = self.params.n_sites;
        let obs = local_observables(&self.state, &self.params);
        for j in 0..n {
            self.accum.psq[j] += self.state.momenta[j] * self.state.momenta[j];
            self.accum.energy[j] += obs.local_energy[j + 1];
        }
        if n >= 3 {
            let mut cur = 0.0;
            for site in 2..=n - 1 {
                cur += obs.energy_current[site];
            }
            self.accum.current_sum += cur / (n - 2) as f64;
        }
        self.accum
            .h_samples
            .push(obs.local_energy.iter().sum::<f64>());
        self.accum.samples += 1;
    }

    /// Advance at most `max_steps`; the observer sees every sampled state.
    pub fn run_chunk(
        &mut self,
        max_steps: u64,
        mut observer: Option<&mut dyn FnMut(&ChainState)>,
    ) -> Result<()> {
        let mut force = vec![0.0; self.params.n_sites];
        let stride = self.cfg.sample_stride as u64;
        let end = self.total_steps.min(self.steps_done.saturating_add(max_steps));
        while self.steps_done < end {
            self.step(&mut force)?;
            if self.steps_done > self.burn_steps
                && (self.steps_done - self.burn_steps) % stride == 0
            {
                self.record_sample();
                if let Some(obs) = observer.as_deref_mut() {
                    obs(&self.state);
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<TrajectoryStats> {
        if !self.is_complete() {
            return Err(Error::invalid("replica has not finished sampling"));
        }
        let m = self.accum.samples.max(1) as f64;
        Ok(TrajectoryStats {
            mean_p_sq_profile: self.accum.psq.iter().map(|v| v / m).collect(),
            mean_energy_profile: self.accum.energy.iter().map(|v| v / m).collect(),
            mean_current: self.accum.current_sum / m,
            h_samples: self.accum.h_samples,
            flip_count: self.accum.flip_count,
        })
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<ReplicaRun> {
        let json = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&json)?)
    }
}

/// Run one replica to completion.
pub fn run_replica(
    params: &ChainParams,
    cfg: &SimConfig,
    profile: Option<&TemperatureProfile>,
    replica_index: usize,
) -> Result<TrajectoryStats> {
    let mut run = ReplicaRun::new(params, cfg, profile, replica_index)?;
    run.run_chunk(u64::MAX, None)?;
    run.finish()
}

/// Run replica 0 (velocity-flip model; self-consistent runs need a profile,
/// see [`run_with_profile`]).
pub fn run(params: &ChainParams, cfg: &SimConfig) -> Result<TrajectoryStats> {
    run_replica(params, cfg, None, 0)
}

pub fn run_with_profile(
    params: &ChainParams,
    cfg: &SimConfig,
    profile: &TemperatureProfile,
) -> Result<TrajectoryStats> {
    run_replica(params, cfg, Some(profile), 0)
}

/// Run one replica while streaming every sampled state to `observer`.
pub fn run_with_observer(
    params: &ChainParams,
    cfg: &SimConfig,
    profile: Option<&TemperatureProfile>,
    replica_index: usize,
    mut observer: impl FnMut(&ChainState),
) -> Result<TrajectoryStats> {
    let mut run = ReplicaRun::new(params, cfg, profile, replica_index)?;
    run.run_chunk(u64::MAX, Some(&mut observer))?;
    run.finish()
}

/// All replicas in parallel, in replica order.
pub fn run_replicas(
    params: &ChainParams,
    cfg: &SimConfig,
    profile: Option<&TemperatureProfile>,
) -> Result<Vec<TrajectoryStats>> {
    (0..cfg.replicas)
        .into_par_iter()
        .map(|i| run_replica(params, cfg, profile, i))
        .collect()
}

/// Merge replica profiles and currents by equal-weight averaging; the energy
/// series stay per replica (their error analysis needs the time ordering).
pub fn merge_profiles(stats: &[TrajectoryStats]) -> Result<TrajectoryStats> {
    if stats.is_empty() {
        return Err(Error::invalid("no replicas to merge"));
    }
    let n = stats[0].mean_p_sq_profile.len();
    let r = stats.len() as f64;
    let mut merged = TrajectoryStats {
        mean_p_sq_profile: vec![0.0; n],
        mean_energy_profile: vec![0.0; n],
        mean_current: 0.0,
        h_samples: Vec::new(),
        flip_count: 0,
    };
    for s in stats {
        for j in 0..n {
            merged.mean_p_sq_profile[j] += s.mean_p_sq_profile[j] / r;
            merged.mean_energy_profile[j] += s.mean_energy_profile[j] / r;
        }
        merged.mean_current += s.mean_current / r;
        merged.flip_count += s.flip_count;
    }
    Ok(merged)
}
