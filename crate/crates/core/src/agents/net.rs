//! Policy/value network with hand-written forward and backward passes.
//!
//! vision (cells x channels) -> 1x1 conv + ReLU -> dense + ReLU
//!   -> concat(non-visual) -> LSTM -> policy MLP -> logits
//!                                 -> value MLP  -> scalar
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] names the slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub conv_channels: usize,
    pub dense: usize,
    pub lstm: usize,
    pub policy_head: Vec<usize>,
    pub value_head: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { conv_channels: 24, dense: 256, lstm: 128, policy_head: vec![64, 64], value_head: vec![64, 64] }
    }
}

/// Input and output sizes, fixed by the environment.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub cells: usize,
    pub channels: usize,
    pub nonvisual: usize,
    pub actions: usize,
}

impl NetShape {
    pub fn input_len(&self) -> usize {
        self.cells * self.channels + self.nonvisual
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
}

impl Layout {
    fn add(&mut self, name: &str, shape: Vec<usize>) -> usize {
        let offset = self.len;
        let spec = TensorSpec { name: name.to_string(), shape, offset };
        self.len += spec.len();
        self.tensors.push(spec);
        offset
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Dense layer `y = W x + b` with `W` row-major `[out][in]`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
struct Linear {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Linear {
    fn new(layout: &mut Layout, name: &str, n_in: usize, n_out: usize) -> Self {
        let w = layout.add(&format!("{name}/w"), vec![n_out, n_in]);
        let b = layout.add(&format!("{name}/b"), vec![n_out]);
        Self { w, b, n_in, n_out }
    }

    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let w = &p[self.w..self.w + self.n_in * self.n_out];
        for (o, yo) in y.iter_mut().enumerate().take(self.n_out) {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            *yo = p[self.b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients and, if asked, writes `dx`.
    fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let n_in = self.n_in;
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g[self.b + o] += d;
            let gw = &mut g[self.w + o * n_in..self.w + (o + 1) * n_in];
            for (gi, xi) in gw.iter_mut().zip(x) {
                *gi += d * xi;
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = &p[self.w..self.w + n_in * self.n_out];
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (dxi, wi) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *dxi += d * wi;
                }
            }
        }
    }

    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng, gain: f64) {
        let a = gain * (6.0 / (self.n_in + self.n_out) as f64).sqrt();
        for v in &mut p[self.w..self.w + self.n_in * self.n_out] {
            *v = rng.gen_range(-a..a);
        }
        p[self.b..self.b + self.n_out].iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(size: usize) -> Self {
        Self { h: vec![0.0; size], c: vec![0.0; size] }
    }
}

/// Activations of one forward step, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    vis: Vec<f64>,
    conv: Vec<f64>,
    dense: Vec<f64>,
    u: Vec<f64>,
    /// i, f, g, o after their nonlinearities.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    pol: Vec<Vec<f64>>,
    val: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Net {
    pub config: NetConfig,
    pub shape: NetShape,
    pub layout: Layout,
    pub params: Vec<f64>,
    conv: Linear,
    dense: Linear,
    lstm: Linear,
    pol: Vec<Linear>,
    val: Vec<Linear>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Masks `d` by the ReLU derivative read off the post-activation values.
fn relu_back(d: &mut [f64], post: &[f64]) {
    for (di, a) in d.iter_mut().zip(post) {
        if *a <= 0.0 {
            *di = 0.0;
        }
    }
}

impl Net {
    pub fn new(config: NetConfig, shape: NetShape, seed: u64) -> Self {
        let mut layout = Layout::default();
        let c = config.conv_channels;
        let conv = Linear::new(&mut layout, "conv", shape.channels, c);
        let dense = Linear::new(&mut layout, "dense", shape.cells * c, config.dense);
        let lstm_in = config.dense + shape.nonvisual + config.lstm;
        let lstm = Linear::new(&mut layout, "lstm", lstm_in, 4 * config.lstm);
        let mlp = |layout: &mut Layout, prefix: &str, sizes: &[usize], out: usize| {
            let mut layers = Vec::new();
            let mut n_in = config.lstm;
            for (i, &s) in sizes.iter().enumerate() {
                layers.push(Linear::new(layout, &format!("{prefix}/{i}"), n_in, s));
                n_in = s;
            }
            layers.push(Linear::new(layout, &format!("{prefix}/out"), n_in, out));
            layers
        };
        let pol = mlp(&mut layout, "policy", &config.policy_head, shape.actions);
        let val = mlp(&mut layout, "value", &config.value_head, 1);
        let mut net = Self { params: vec![0.0; layout.len], config, shape, layout, conv, dense, lstm, pol, val };
        net.init(seed);
        net
    }

    fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &mut self.params;
        self.conv.init(p, &mut rng, 1.0);
        self.dense.init(p, &mut rng, 1.0);
        self.lstm.init(p, &mut rng, 1.0);
        let h = self.config.lstm;
        // forget-gate bias
        p[self.lstm.b + h..self.lstm.b + 2 * h].iter_mut().for_each(|v| *v = 1.0);
        let last = self.pol.len() - 1;
        for (i, l) in self.pol.iter().enumerate() {
            l.init(p, &mut rng, if i == last { 0.01 } else { 1.0 });
        }
        let last = self.val.len() - 1;
        for (i, l) in self.val.iter().enumerate() {
            l.init(p, &mut rng, if i == last { 0.1 } else { 1.0 });
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.config.lstm)
    }

    /// Output layer of the value head: (weight offset, bias offset, fan-in).
    pub fn value_output(&self) -> (usize, usize, usize) {
        let l = self.val.last().expect("value head has an output layer");
        (l.w, l.b, l.n_in)
    }

    /// One step; `input` is vision (cells x channels, channels last)
    /// followed by the non-visual features. Updates `state`.
    pub fn forward(&self, input: &[f32], state: &mut LstmState) -> StepCache {
        debug_assert_eq!(input.len(), self.shape.input_len());
        let p = &self.params;
        let (cells, ch, cc) = (self.shape.cells, self.shape.channels, self.config.conv_channels);
        let vis: Vec<f64> = input[..cells * ch].iter().map(|&v| f64::from(v)).collect();
        let mut conv = vec![0.0; cells * cc];
        for cell in 0..cells {
            self.conv.forward(p, &vis[cell * ch..(cell + 1) * ch], &mut conv[cell * cc..(cell + 1) * cc]);
        }
        relu_inplace(&mut conv);
        let mut dense = vec![0.0; self.config.dense];
        self.dense.forward(p, &conv, &mut dense);
        relu_inplace(&mut dense);

        let hsz = self.config.lstm;
        let mut u = Vec::with_capacity(self.lstm.n_in);
        u.extend_from_slice(&dense);
        u.extend(input[cells * ch..].iter().map(|&v| f64::from(v)));
        u.extend_from_slice(&state.h);
        let mut gates = vec![0.0; 4 * hsz];
        self.lstm.forward(p, &u, &mut gates);
        let c_prev = state.c.clone();
        let mut tanh_c = vec![0.0; hsz];
        for k in 0..hsz {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[hsz + k]);
            let g = gates[2 * hsz + k].tanh();
            let o = sigmoid(gates[3 * hsz + k]);
            gates[k] = i;
            gates[hsz + k] = f;
            gates[2 * hsz + k] = g;
            gates[3 * hsz + k] = o;
            let c = f * c_prev[k] + i * g;
            state.c[k] = c;
            tanh_c[k] = c.tanh();
            state.h[k] = o * tanh_c[k];
        }
        let h = state.h.clone();

        let run_mlp = |layers: &[Linear]| {
            let mut acts = Vec::with_capacity(layers.len());
            let mut x = h.clone();
            for (i, l) in layers.iter().enumerate() {
                let mut y = vec![0.0; l.n_out];
                l.forward(p, &x, &mut y);
                if i + 1 < layers.len() {
                    relu_inplace(&mut y);
                }
                acts.push(y.clone());
                x = y;
            }
            acts
        };
        let mut pol = run_mlp(&self.pol);
        let logits = pol.pop().expect("output layer");
        let mut val = run_mlp(&self.val);
        let value = val.pop().expect("output layer")[0];
        StepCache { vis, conv, dense, u, gates, c_prev, tanh_c, h, pol, val, logits, value }
    }

    /// Forward over a sequence from `state`, returning the caches.
    pub fn forward_sequence(&self, inputs: &[&[f32]], state: &LstmState) -> Vec<StepCache> {
        let mut s = state.clone();
        inputs.iter().map(|x| self.forward(x, &mut s)).collect()
    }

    fn mlp_backward(&self, layers: &[Linear], acts: &[Vec<f64>], h: &[f64], d_out: &[f64], g: &mut [f64], dh: &mut [f64]) {
        let p = &self.params;
        let mut d = d_out.to_vec();
        for i in (0..layers.len()).rev() {
            let x: &[f64] = if i == 0 { h } else { &acts[i - 1] };
            let mut dx = vec![0.0; layers[i].n_in];
            layers[i].backward(p, g, x, &d, Some(&mut dx));
            if i > 0 {
                relu_back(&mut dx, &acts[i - 1]);
            }
            d = dx;
        }
        for (a, b) in dh.iter_mut().zip(&d) {
            *a += b;
        }
    }

    /// Backpropagation through time. `dlogits[t]` and `dvalue[t]` are the
    /// loss gradients w.r.t. step t's outputs; parameter gradients are added
    /// to `grad`. The initial state is treated as a constant.
    pub fn backward_sequence(&self, caches: &[StepCache], dlogits: &[Vec<f64>], dvalue: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let hsz = self.config.lstm;
        let (cells, ch, cc) = (self.shape.cells, self.shape.channels, self.config.conv_channels);
        let d_dense = self.config.dense;
        let x_len = self.shape.nonvisual;
        let mut dh_next = vec![0.0; hsz];
        let mut dc_next = vec![0.0; hsz];
        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            let mut dh = dh_next.clone();
            self.mlp_backward(&self.pol, &cache.pol, &cache.h, &dlogits[t], grad, &mut dh);
            self.mlp_backward(&self.val, &cache.val, &cache.h, &[dvalue[t]], grad, &mut dh);

            let mut dgates = vec![0.0; 4 * hsz];
            for k in 0..hsz {
                let (i, f, gg, o) =
                    (cache.gates[k], cache.gates[hsz + k], cache.gates[2 * hsz + k], cache.gates[3 * hsz + k]);
                let tc = cache.tanh_c[k];
                let d_o = dh[k] * tc;
                let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
                let d_i = dc * gg;
                let d_g = dc * i;
                let d_f = dc * cache.c_prev[k];
                dc_next[k] = dc * f;
                dgates[k] = d_i * i * (1.0 - i);
                dgates[hsz + k] = d_f * f * (1.0 - f);
                dgates[2 * hsz + k] = d_g * (1.0 - gg * gg);
                dgates[3 * hsz + k] = d_o * o * (1.0 - o);
            }
            let mut du = vec![0.0; self.lstm.n_in];
            self.lstm.backward(p, grad, &cache.u, &dgates, Some(&mut du));
            dh_next.copy_from_slice(&du[d_dense + x_len..]);

            let mut ddense = du[..d_dense].to_vec();
            relu_back(&mut ddense, &cache.dense);
            let mut dconv = vec![0.0; cells * cc];
            self.dense.backward(p, grad, &cache.conv, &ddense, Some(&mut dconv));
            relu_back(&mut dconv, &cache.conv);
            for cell in 0..cells {
                self.conv.backward(
                    p,
                    grad,
                    &cache.vis[cell * ch..(cell + 1) * ch],
                    &dconv[cell * cc..(cell + 1) * cc],
                    None,
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_net(seed: u64) -> Net {
        let cfg = NetConfig { conv_channels: 2, dense: 3, lstm: 3, policy_head: vec![4], value_head: vec![4] };
        Net::new(cfg, NetShape { cells: 4, channels: 3, nonvisual: 3, actions: 4 }, seed)
    }

    #[test]
    fn layout_is_contiguous() {
        let net = tiny_net(0);
        let mut expected = 0;
        for t in &net.layout.tensors {
            assert_eq!(t.offset, expected);
            expected += t.len();
        }
        assert_eq!(expected, net.num_params());
        assert!(net.num_params() <= 500, "{}", net.num_params());
    }

    #[test]
    fn recurrent_state_matters() {
        let net = tiny_net(1);
        let x: Vec<f32> = (0..15).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut s = net.initial_state();
        let first = net.forward(&x, &mut s);
        let second = net.forward(&x, &mut s);
        assert_ne!(first.h, second.h);
        assert_ne!(first.value, second.value);
        let mut zero = net.initial_state();
        let again = net.forward(&x, &mut zero);
        assert_eq!(first.h, again.h);
        assert_eq!(first.value, again.value);
    }

    #[test]
    fn initial_policy_is_near_uniform() {
        let net = Net::new(NetConfig::default(), NetShape { cells: 225, channels: 3, nonvisual: 50, actions: 28 }, 3);
        let x = vec![0.5f32; net.shape.input_len()];
        let out = net.forward(&x, &mut net.initial_state());
        let spread = out.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - out.logits.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.5, "{spread}");
    }

    /// Central differences on L = sum_t (c_t . logits_t + k_t * value_t).
    #[test]
    fn backward_matches_finite_differences() {
        let mut net = tiny_net(4);
        // push some units away from ReLU kinks
        for (i, p) in net.params.iter_mut().enumerate() {
            *p += 0.05 * ((i as f64) * 0.61).sin();
        }
        let steps = 3;
        let inputs: Vec<Vec<f32>> =
            (0..steps).map(|t| (0..15).map(|i| ((i + 7 * t) as f32 * 0.53).cos()).collect()).collect();
        let refs: Vec<&[f32]> = inputs.iter().map(Vec::as_slice).collect();
        let coef: Vec<Vec<f64>> = (0..steps).map(|t| (0..4).map(|j| ((t * 4 + j) as f64 * 0.9).sin()).collect()).collect();
        let kv: Vec<f64> = (0..steps).map(|t| 0.5 - t as f64 * 0.3).collect();
        let state = LstmState { h: vec![0.1, -0.2, 0.05], c: vec![0.3, 0.0, -0.1] };
        let objective = |n: &Net| -> f64 {
            n.forward_sequence(&refs, &state)
                .iter()
                .enumerate()
                .map(|(t, c)| c.logits.iter().zip(&coef[t]).map(|(a, b)| a * b).sum::<f64>() + kv[t] * c.value)
                .sum()
        };
        let caches = net.forward_sequence(&refs, &state);
        let mut grad = vec![0.0; net.num_params()];
        net.backward_sequence(&caches, &coef, &kv, &mut grad);
        let eps = 1e-6;
        for i in 0..net.num_params() {
            let orig = net.params[i];
            net.params[i] = orig + eps;
            let up = objective(&net);
            net.params[i] = orig - eps;
            let down = objective(&net);
            net.params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            assert!((numeric - grad[i]).abs() < 1e-5 * (1.0 + numeric.abs()), "param {i}: numeric {numeric} analytic {}", grad[i]);
        }
    }
}
