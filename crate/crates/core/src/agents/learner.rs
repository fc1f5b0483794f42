use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::checkpoint::{take, CheckpointError, NamedTensor};
use super::loss::{a2c_policy_loss, entropy, log_softmax, n_step_return, policy_loss, psi_weights, value_loss};
use super::net::{LstmState, Net, NetConfig, NetShape};
use super::popart::{ReturnScaler, ScalerConfig};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Advantage-weighted regression with softmax(A / eta) weights.
    #[default]
    #[serde(rename = "vmpo-like")]
    VmpoLike,
    #[serde(rename = "a2c")]
    A2c,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub discount: f64,
    pub n_step: usize,
    pub learning_rate: f64,
    /// Updates between target-network refreshes.
    pub target_period: u64,
    pub temperature: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Standardize advantages to zero mean and unit variance per batch.
    pub normalize_advantages: bool,
    /// Segments of `n_step` ticks per update.
    pub batch_segments: usize,
    pub adam: AdamConfig,
    pub scaler: ScalerConfig,
    pub net: NetConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::VmpoLike,
            discount: 0.99,
            n_step: 20,
            learning_rate: 1e-4,
            target_period: 10,
            temperature: 0.1,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 40.0,
            normalize_advantages: false,
            batch_segments: 16,
            adam: AdamConfig::default(),
            scaler: ScalerConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(format!("learner.discount must be in [0, 1], got {}", self.discount));
        }
        if !(self.temperature > 0.0) {
            return Err(format!("learner.temperature must be positive, got {}", self.temperature));
        }
        if !(self.learning_rate > 0.0) {
            return Err(format!("learner.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.n_step == 0 || self.batch_segments == 0 || self.target_period == 0 {
            return Err("learner.n_step, batch_segments and target_period must be at least 1".into());
        }
        if self.net.conv_channels == 0 || self.net.dense == 0 || self.net.lstm == 0 {
            return Err("learner.net sizes must be at least 1".into());
        }
        Ok(())
    }
}

/// One player's experience in one episode.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub agent: usize,
    /// Encoded observations; one more than the number of actions.
    pub inputs: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub behaviour_logp: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Recurrent state before steps 0, n, 2n, ...
    pub segment_states: Vec<LstmState>,
    pub segment_len: usize,
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub inputs: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub state: LstmState,
    pub terminal: bool,
}

impl Trajectory {
    /// Splits into learner segments of `segment_len` steps.
    pub fn into_segments(self) -> Vec<Segment> {
        let n = self.segment_len.max(1);
        let len = self.len();
        let mut out = Vec::new();
        let mut start = 0;
        let mut k = 0;
        while start < len {
            let end = (start + n).min(len);
            out.push(Segment {
                inputs: self.inputs[start..=end].to_vec(),
                actions: self.actions[start..end].to_vec(),
                rewards: self.rewards[start..end].to_vec(),
                state: self.segment_states[k].clone(),
                terminal: self.terminal && end == len,
            });
            start = end;
            k += 1;
        }
        out
    }
}

/// Read-only parameter snapshot used for acting.
#[derive(Clone, Debug)]
pub struct Policy {
    pub net: Net,
    pub mu: f64,
    pub sigma: f64,
}

impl Policy {
    /// Samples an action; returns (action, log-prob, value estimate).
    pub fn act<R: Rng + ?Sized>(&self, input: &[f32], state: &mut LstmState, rng: &mut R) -> (usize, f64, f64) {
        let out = self.net.forward(input, state);
        let logp = log_softmax(&out.logits);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut action = logp.len() - 1;
        for (i, lp) in logp.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                action = i;
                break;
            }
        }
        (action, logp[action], self.mu + self.sigma * out.value)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub samples: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_target: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct Learner {
    pub config: LearnerConfig,
    pub online: Net,
    pub target: Net,
    pub adam: Adam,
    pub scaler: ReturnScaler,
    pub updates: u64,
    pending: Vec<Segment>,
}

impl Learner {
    pub fn new(config: LearnerConfig, shape: NetShape, seed: u64) -> Self {
        let online = Net::new(config.net.clone(), shape, seed);
        let target = online.clone();
        let adam = Adam::new(config.adam, online.num_params());
        let scaler = ReturnScaler::new(config.scaler);
        Self { config, online, target, adam, scaler, updates: 0, pending: Vec::new() }
    }

    pub fn policy(&self) -> Policy {
        Policy { net: self.online.clone(), mu: self.scaler.mu, sigma: self.scaler.sigma() }
    }

    pub fn pending_segments(&self) -> usize {
        self.pending.len()
    }

    /// Queues a trajectory; runs an update per full batch.
    pub fn observe(&mut self, trajectory: Trajectory) -> Vec<UpdateStats> {
        self.pending.extend(trajectory.into_segments());
        let mut stats = Vec::new();
        while self.pending.len() >= self.config.batch_segments {
            let batch: Vec<Segment> = self.pending.drain(..self.config.batch_segments).collect();
            stats.push(self.update(&batch));
        }
        stats
    }

    /// Return targets for each step of each segment, bootstrapped from the
    /// target network at the segment end.
    fn targets(&self, batch: &[Segment]) -> Vec<Vec<f64>> {
        batch
            .iter()
            .map(|seg| {
                let t_len = seg.actions.len();
                let mut values = vec![0.0; t_len + 1];
                if !seg.terminal {
                    let inputs: Vec<&[f32]> = seg.inputs.iter().map(Vec::as_slice).collect();
                    let caches = self.target.forward_sequence(&inputs, &seg.state);
                    values[t_len] = self.scaler.denormalize(caches[t_len].value);
                }
                (0..t_len)
                    .map(|t| n_step_return(&seg.rewards, &values, seg.terminal, t, self.config.n_step, self.config.discount))
                    .collect()
            })
            .collect()
    }

    fn rescale_value_output(net: &mut Net, scaler: &ReturnScaler, old: (f64, f64)) {
        let (w, b, n) = net.value_output();
        let (ws, bs) = net.params.split_at_mut(b);
        scaler.rescale(old, &mut ws[w..w + n], &mut bs[0]);
    }

    pub fn update(&mut self, batch: &[Segment]) -> UpdateStats {
        let targets = self.targets(batch);
        let flat: Vec<f64> = targets.iter().flatten().copied().collect();
        let old = self.scaler.update(&flat);
        Self::rescale_value_output(&mut self.online, &self.scaler, old);
        Self::rescale_value_output(&mut self.target, &self.scaler, old);

        let caches: Vec<_> = batch
            .iter()
            .map(|seg| {
                let inputs: Vec<&[f32]> = seg.inputs[..seg.actions.len()].iter().map(Vec::as_slice).collect();
                self.online.forward_sequence(&inputs, &seg.state)
            })
            .collect();
        let norm_targets: Vec<f64> = flat.iter().map(|g| self.scaler.normalize(*g)).collect();
        let values: Vec<f64> = caches.iter().flatten().map(|c| c.value).collect();
        let logits: Vec<Vec<f64>> = caches.iter().flatten().map(|c| c.logits.clone()).collect();
        let actions: Vec<usize> = batch.iter().flat_map(|s| s.actions.iter().copied()).collect();
        let mut advantages: Vec<f64> = norm_targets.iter().zip(&values).map(|(g, v)| g - v).collect();
        let n = values.len();
        if self.config.normalize_advantages && n > 1 {
            let mean = advantages.iter().sum::<f64>() / n as f64;
            let sd = (advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            advantages.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
        }

        let (p_loss, dlogits) = match self.config.algorithm {
            Algorithm::VmpoLike => {
                let psi = psi_weights(&advantages, self.config.temperature);
                policy_loss(&logits, &actions, &psi)
            }
            Algorithm::A2c => a2c_policy_loss(&logits, &actions, &advantages, self.config.entropy_coef),
        };
        let (v_loss, mut dv) = value_loss(&values, &norm_targets);
        let scale = self.config.value_coef / n as f64;
        dv.iter_mut().for_each(|d| *d *= scale);

        let mut grad = vec![0.0; self.online.num_params()];
        let mut offset = 0;
        for (seg, cache) in batch.iter().zip(&caches) {
            let t_len = seg.actions.len();
            self.online.backward_sequence(cache, &dlogits[offset..offset + t_len], &dv[offset..offset + t_len], &mut grad);
            offset += t_len;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > self.config.max_grad_norm && norm > 0.0 {
            let k = self.config.max_grad_norm / norm;
            grad.iter_mut().for_each(|g| *g *= k);
        }
        self.adam.step(&mut self.online.params, &grad, self.config.learning_rate);
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_period) {
            self.target.params.clone_from(&self.online.params);
        }
        UpdateStats {
            samples: n,
            policy_loss: p_loss,
            value_loss: v_loss * scale,
            entropy: logits.iter().map(|l| entropy(l)).sum::<f64>() / n.max(1) as f64,
            mean_target: flat.iter().sum::<f64>() / n.max(1) as f64,
            grad_norm: norm,
        }
    }

    /// All learner state as named tensors, queued segments included.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (prefix, net) in [("online", &self.online), ("target", &self.target)] {
            for t in &net.layout.tensors {
                out.push(NamedTensor::new(format!("{prefix}/{}", t.name), t.shape.clone(), net.params[t.range()].to_vec()));
            }
        }
        let n = self.online.num_params();
        out.push(NamedTensor::new("adam/m", vec![n], self.adam.m.clone()));
        out.push(NamedTensor::new("adam/v", vec![n], self.adam.v.clone()));
        out.push(NamedTensor::scalar("adam/t", self.adam.t as f64));
        out.push(NamedTensor::scalar("scaler/mu", self.scaler.mu));
        out.push(NamedTensor::scalar("scaler/nu", self.scaler.nu));
        out.push(NamedTensor::scalar("learner/updates", self.updates as f64));
        out.push(NamedTensor::scalar("pending/count", self.pending.len() as f64));
        for (k, seg) in self.pending.iter().enumerate() {
            let width = seg.inputs[0].len();
            let inputs = seg.inputs.iter().flatten().map(|&x| f64::from(x)).collect();
            out.push(NamedTensor::new(format!("pending/{k}/inputs"), vec![seg.inputs.len(), width], inputs));
            let actions = seg.actions.iter().map(|&a| a as f64).collect();
            out.push(NamedTensor::new(format!("pending/{k}/actions"), vec![seg.actions.len()], actions));
            out.push(NamedTensor::new(format!("pending/{k}/rewards"), vec![seg.rewards.len()], seg.rewards.clone()));
            out.push(NamedTensor::new(format!("pending/{k}/h"), vec![seg.state.h.len()], seg.state.h.clone()));
            out.push(NamedTensor::new(format!("pending/{k}/c"), vec![seg.state.c.len()], seg.state.c.clone()));
            out.push(NamedTensor::scalar(format!("pending/{k}/terminal"), f64::from(u8::from(seg.terminal))));
        }
        out
    }

    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<(), CheckpointError> {
        for (prefix, net) in [("online", &mut self.online), ("target", &mut self.target)] {
            for t in net.layout.tensors.clone() {
                let data = take(tensors, &format!("{prefix}/{}", t.name), &t.shape)?;
                net.params[t.range()].copy_from_slice(data);
            }
        }
        let n = self.online.num_params();
        self.adam.m.copy_from_slice(take(tensors, "adam/m", &[n])?);
        self.adam.v.copy_from_slice(take(tensors, "adam/v", &[n])?);
        self.adam.t = take(tensors, "adam/t", &[1])?[0] as u64;
        self.scaler.mu = take(tensors, "scaler/mu", &[1])?[0];
        self.scaler.nu = take(tensors, "scaler/nu", &[1])?[0];
        self.updates = take(tensors, "learner/updates", &[1])?[0] as u64;
        self.pending.clear();
        let count = take(tensors, "pending/count", &[1])?[0] as usize;
        let width = self.online.shape.input_len();
        let hsz = self.config.net.lstm;
        for k in 0..count {
            let find = |name: &str| {
                tensors.iter().find(|t| t.name == name).ok_or_else(|| CheckpointError::Missing(name.to_string()))
            };
            let inputs = find(&format!("pending/{k}/inputs"))?;
            let steps = inputs.shape.first().copied().unwrap_or(0);
            let inputs = take(tensors, &inputs.name, &[steps, width])?;
            let actions = take(tensors, &format!("pending/{k}/actions"), &[steps.saturating_sub(1)])?;
            self.pending.push(Segment {
                inputs: inputs.chunks(width).map(|row| row.iter().map(|&x| x as f32).collect()).collect(),
                actions: actions.iter().map(|&a| a as usize).collect(),
                rewards: take(tensors, &format!("pending/{k}/rewards"), &[steps.saturating_sub(1)])?.to_vec(),
                state: LstmState {
                    h: take(tensors, &format!("pending/{k}/h"), &[hsz])?.to_vec(),
                    c: take(tensors, &format!("pending/{k}/c"), &[hsz])?.to_vec(),
                },
                terminal: take(tensors, &format!("pending/{k}/terminal"), &[1])?[0] != 0.0,
            });
        }
        Ok(())
    }
}
