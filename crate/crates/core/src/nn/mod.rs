//! Fully connected and LSTM networks with hand-written backpropagation.
//!
//! Every network is `input → [dense + ReLU]* → [LSTM]? → linear head`. Data moves
//! as [`SeqBatch`], a `steps × batch × dim` block; feed-forward networks treat the
//! step axis as extra batch rows, recurrent ones carry `(h, c)` along it.

mod adam;
mod checkpoint;
mod gradcheck;
mod linalg;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};

use crate::error::NnError;
use linalg::{affine, matvec_acc, outer_acc, transpose_acc};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};

/// A parameter block and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    fn zeros(n: usize) -> Self {
        Self { value: vec![0.0; n], grad: vec![0.0; n] }
    }

    fn uniform<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Self {
        let value = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { value, grad: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topology {
    pub input: usize,
    /// Widths of the ReLU layers.
    pub hidden: Vec<usize>,
    /// Width of the LSTM layer placed after the ReLU stack.
    pub lstm: Option<usize>,
    pub output: usize,
}

impl Topology {
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Self {
        Self { input, hidden: hidden.to_vec(), lstm: None, output }
    }

    pub fn recurrent(input: usize, hidden: &[usize], lstm: usize, output: usize) -> Self {
        Self { input, hidden: hidden.to_vec(), lstm: Some(lstm), output }
    }

    /// Three 128-unit ReLU layers, or two followed by a 128-unit LSTM.
    pub fn trigger_net(input: usize, output: usize, recurrent: bool) -> Self {
        if recurrent {
            Self::recurrent(input, &[128, 128], 128, output)
        } else {
            Self::mlp(input, &[128, 128, 128], output)
        }
    }

    pub fn is_recurrent(&self) -> bool {
        self.lstm.is_some()
    }

    /// Parses the `Display` form, e.g. `12-128-128-L128-2`.
    pub fn parse(s: &str) -> Result<Self, NnError> {
        let bad = || NnError::InvalidTopology(s.to_string());
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() < 2 {
            return Err(bad());
        }
        let num = |p: &str| p.parse::<usize>().ok().filter(|n| *n > 0).ok_or_else(bad);
        let input = num(parts[0])?;
        let output = num(parts[parts.len() - 1])?;
        let mut hidden = Vec::new();
        let mut lstm = None;
        for p in &parts[1..parts.len() - 1] {
            if lstm.is_some() {
                return Err(bad());
            }
            match p.strip_prefix('L') {
                Some(w) => lstm = Some(num(w)?),
                None => hidden.push(num(p)?),
            }
        }
        Ok(Self { input, hidden, lstm, output })
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input)?;
        for h in &self.hidden {
            write!(f, "-{h}")?;
        }
        if let Some(l) = self.lstm {
            write!(f, "-L{l}")?;
        }
        write!(f, "-{}", self.output)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    n_in: usize,
    n_out: usize,
    w: Param,
    b: Param,
}

impl Dense {
    fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, bound: f64, rng: &mut R) -> Self {
        Self { n_in, n_out, w: Param::uniform(n_in * n_out, bound, rng), b: Param::zeros(n_out) }
    }
}

/// Gate rows are ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
struct Lstm {
    n_in: usize,
    n_hidden: usize,
    wx: Param,
    wh: Param,
    b: Param,
}

/// Recurrent state of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(n: usize) -> Self {
        Self { h: vec![0.0; n], c: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| v.is_finite())
    }
}

/// `steps × batch × dim` values, step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub steps: usize,
    pub batch: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SeqBatch {
    pub fn zeros(steps: usize, batch: usize, dim: usize) -> Self {
        Self { steps, batch, dim, data: vec![0.0; steps * batch * dim] }
    }

    /// A single-step batch with one row per input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self { steps: 1, batch: rows.len(), dim, data }
    }

    pub fn at(&self, t: usize, b: usize) -> &[f64] {
        let o = (t * self.batch + b) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn at_mut(&mut self, t: usize, b: usize) -> &mut [f64] {
        let o = (t * self.batch + b) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    fn rows(&self) -> usize {
        self.steps * self.batch
    }
}

/// Activations saved by [`Network::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    version: u64,
    steps: usize,
    batch: usize,
    /// `acts[0]` is the input, `acts[i + 1]` the ReLU output of dense layer `i`.
    acts: Vec<Vec<f64>>,
    lstm: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    /// Post-activation gates, `steps × batch × 4H`.
    gates: Vec<f64>,
    /// `h` and `c` for steps `0..=steps`, index 0 holding the initial state.
    h: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl ForwardCache {
    /// Recurrent state after the last step, one per batch element.
    pub fn final_states(&self) -> Vec<LstmState> {
        let Some(l) = &self.lstm else { return Vec::new() };
        let n = l.h.len() / ((self.steps + 1) * self.batch);
        let off = self.steps * self.batch * n;
        (0..self.batch)
            .map(|b| LstmState { h: l.h[off + b * n..off + (b + 1) * n].to_vec(), c: l.c[off + b * n..off + (b + 1) * n].to_vec() })
            .collect()
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
pub struct Network {
    topology: Topology,
    dense: Vec<Dense>,
    lstm: Option<Lstm>,
    head: Dense,
    id: u64,
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            topology: self.topology.clone(),
            dense: self.dense.clone(),
            lstm: self.lstm.clone(),
            head: self.head.clone(),
            id: fresh_id(),
            version: self.version,
        }
    }
}

impl PartialEq for Network {
    /// Equal topology and bit-identical parameters; gradients are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.topology == other.topology && self.blocks().iter().zip(other.blocks()).all(|((_, a), (_, b))| a.value == b.value)
    }
}

impl Network {
    /// He-uniform ReLU layers, Glorot-uniform LSTM and head, zero biases.
    pub fn new<R: Rng + ?Sized>(topology: Topology, rng: &mut R) -> Self {
        let mut n_in = topology.input;
        let mut dense = Vec::with_capacity(topology.hidden.len());
        for &w in &topology.hidden {
            dense.push(Dense::new(n_in, w, (6.0 / n_in as f64).sqrt(), rng));
            n_in = w;
        }
        let lstm = topology.lstm.map(|nh| {
            let lstm = Lstm {
                n_in,
                n_hidden: nh,
                wx: Param::uniform(4 * nh * n_in, (6.0 / (n_in + nh) as f64).sqrt(), rng),
                wh: Param::uniform(4 * nh * nh, (3.0 / nh as f64).sqrt(), rng),
                b: Param::zeros(4 * nh),
            };
            n_in = nh;
            lstm
        });
        let head = Dense::new(n_in, topology.output, (6.0 / (n_in + topology.output) as f64).sqrt(), rng);
        Self { topology, dense, lstm, head, id: fresh_id(), version: 0 }
    }

    /// All parameters zero.
    pub fn zeros(topology: Topology) -> Self {
        let mut net = Self::new(topology, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        for (_, p) in net.blocks_mut() {
            p.value.fill(0.0);
        }
        net
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Incremented whenever parameter values change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Parameter blocks in a fixed order with stable names.
    pub fn blocks(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, d) in self.dense.iter().enumerate() {
            out.push((format!("fc{i}.w"), &d.w));
            out.push((format!("fc{i}.b"), &d.b));
        }
        if let Some(l) = &self.lstm {
            out.push(("lstm.wx".to_string(), &l.wx));
            out.push(("lstm.wh".to_string(), &l.wh));
            out.push(("lstm.b".to_string(), &l.b));
        }
        out.push(("head.w".to_string(), &self.head.w));
        out.push(("head.b".to_string(), &self.head.b));
        out
    }

    /// Mutable access to every block; counts as a parameter change.
    pub fn blocks_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.version += 1;
        let mut out = Vec::new();
        for (i, d) in self.dense.iter_mut().enumerate() {
            out.push((format!("fc{i}.w"), &mut d.w));
            out.push((format!("fc{i}.b"), &mut d.b));
        }
        if let Some(l) = &mut self.lstm {
            out.push(("lstm.wx".to_string(), &mut l.wx));
            out.push(("lstm.wh".to_string(), &mut l.wh));
            out.push(("lstm.b".to_string(), &mut l.b));
        }
        out.push(("head.w".to_string(), &mut self.head.w));
        out.push(("head.b".to_string(), &mut self.head.b));
        out
    }

    pub fn zero_grad(&mut self) {
        let v = self.version;
        for (_, p) in self.blocks_mut() {
            p.grad.fill(0.0);
        }
        self.version = v;
    }

    pub fn grad_norm(&self) -> f64 {
        self.blocks().iter().flat_map(|(_, p)| p.grad.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Scales gradients so their global norm is at most `max_norm`; returns the norm before scaling.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm {
            let s = max_norm / norm;
            let v = self.version;
            for (_, p) in self.blocks_mut() {
                p.grad.iter_mut().for_each(|g| *g *= s);
            }
            self.version = v;
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, p)| p.value.iter().all(|v| v.is_finite()))
    }

    fn check_topology(&self, other: &Network) -> Result<(), NnError> {
        if self.topology != other.topology {
            return Err(NnError::TopologyMismatch { expected: self.topology.to_string(), found: other.topology.to_string() });
        }
        Ok(())
    }

    /// Hard copy of all parameter values.
    pub fn copy_from(&mut self, other: &Network) -> Result<(), NnError> {
        self.check_topology(other)?;
        let src = other.blocks();
        for ((_, dst), (_, s)) in self.blocks_mut().into_iter().zip(src) {
            dst.value.copy_from_slice(&s.value);
        }
        Ok(())
    }

    /// Polyak averaging `θ ← (1 − τ) θ + τ θ_other`.
    pub fn soft_update(&mut self, other: &Network, tau: f64) -> Result<(), NnError> {
        self.check_topology(other)?;
        let src = other.blocks();
        for ((_, dst), (_, s)) in self.blocks_mut().into_iter().zip(src) {
            for (d, v) in dst.value.iter_mut().zip(&s.value) {
                *d = (1.0 - tau) * *d + tau * v;
            }
        }
        Ok(())
    }

    /// Runs the network over a batch of sequences. Recurrent layers start from
    /// `init` (one state per batch element) or zeros.
    pub fn forward(&self, input: &SeqBatch, init: Option<&[LstmState]>) -> Result<(SeqBatch, ForwardCache), NnError> {
        if input.dim != self.topology.input {
            return Err(NnError::DimensionMismatch { expected: self.topology.input, got: input.dim });
        }
        if input.data.len() != input.rows() * input.dim {
            return Err(NnError::DimensionMismatch { expected: input.rows() * input.dim, got: input.data.len() });
        }
        let (steps, batch, rows) = (input.steps, input.batch, input.rows());
        let mut acts = Vec::with_capacity(self.dense.len() + 1);
        acts.push(input.data.clone());
        for d in &self.dense {
            let mut out = vec![0.0; rows * d.n_out];
            affine(acts.last().expect("input pushed"), d.n_in, &d.w.value, &d.b.value, &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(out);
        }
        let lstm = match &self.lstm {
            Some(l) => Some(self.lstm_forward(l, acts.last().expect("input pushed"), steps, batch, init)?),
            None => None,
        };
        let features: &[f64] = match &lstm {
            Some(c) => &c.h[batch * self.head.n_in..],
            None => acts.last().expect("input pushed"),
        };
        let mut out = SeqBatch::zeros(steps, batch, self.head.n_out);
        affine(features, self.head.n_in, &self.head.w.value, &self.head.b.value, &mut out.data);
        let cache = ForwardCache { net_id: self.id, version: self.version, steps, batch, acts, lstm };
        Ok((out, cache))
    }

    fn lstm_forward(&self, l: &Lstm, x: &[f64], steps: usize, batch: usize, init: Option<&[LstmState]>) -> Result<LstmCache, NnError> {
        let nh = l.n_hidden;
        let mut h = vec![0.0; (steps + 1) * batch * nh];
        let mut c = vec![0.0; (steps + 1) * batch * nh];
        if let Some(init) = init {
            if init.len() != batch {
                return Err(NnError::DimensionMismatch { expected: batch, got: init.len() });
            }
            for (b, s) in init.iter().enumerate() {
                if s.h.len() != nh || s.c.len() != nh {
                    return Err(NnError::DimensionMismatch { expected: nh, got: s.h.len().min(s.c.len()) });
                }
                h[b * nh..(b + 1) * nh].copy_from_slice(&s.h);
                c[b * nh..(b + 1) * nh].copy_from_slice(&s.c);
            }
        }
        let mut gates = vec![0.0; steps * batch * 4 * nh];
        let mut tanh_c = vec![0.0; steps * batch * nh];
        let step_x = batch * l.n_in;
        let step_h = batch * nh;
        for t in 0..steps {
            let z = &mut gates[t * batch * 4 * nh..(t + 1) * batch * 4 * nh];
            affine(&x[t * step_x..(t + 1) * step_x], l.n_in, &l.wx.value, &l.b.value, z);
            matvec_acc(&h[t * step_h..(t + 1) * step_h], nh, &l.wh.value, z);
            let (c_done, c_rest) = c.split_at_mut((t + 1) * step_h);
            let c_prev = &c_done[t * step_h..];
            let c_next = &mut c_rest[..step_h];
            let h_next = &mut h[(t + 1) * step_h..(t + 2) * step_h];
            let tc = &mut tanh_c[t * step_h..(t + 1) * step_h];
            for b in 0..batch {
                let g = &mut z[b * 4 * nh..(b + 1) * 4 * nh];
                for j in 0..nh {
                    let i_g = sigmoid(g[j]);
                    let f_g = sigmoid(g[nh + j]);
                    let c_g = g[2 * nh + j].tanh();
                    let o_g = sigmoid(g[3 * nh + j]);
                    g[j] = i_g;
                    g[nh + j] = f_g;
                    g[2 * nh + j] = c_g;
                    g[3 * nh + j] = o_g;
                    let cn = f_g * c_prev[b * nh + j] + i_g * c_g;
                    let th = cn.tanh();
                    c_next[b * nh + j] = cn;
                    tc[b * nh + j] = th;
                    h_next[b * nh + j] = o_g * th;
                }
            }
        }
        Ok(LstmCache { gates, h, c, tanh_c })
    }

    /// Single-sequence, single-step evaluation. For recurrent networks `state`
    /// is read and advanced in place (zeros when `None` is passed).
    pub fn predict(&self, input: &[f64], state: Option<&mut LstmState>) -> Result<Vec<f64>, NnError> {
        let batch = SeqBatch::from_rows(&[input]);
        match state {
            Some(s) if self.lstm.is_some() => {
                let (out, cache) = self.forward(&batch, Some(std::slice::from_ref(s)))?;
                *s = cache.final_states().pop().expect("one sequence");
                Ok(out.data)
            }
            _ => Ok(self.forward(&batch, None)?.0.data),
        }
    }

    /// Accumulates parameter gradients of `Σ d_out · output` and returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, cache: &ForwardCache, d_out: &SeqBatch) -> Result<SeqBatch, NnError> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(NnError::StaleCache);
        }
        let (steps, batch) = (cache.steps, cache.batch);
        if d_out.dim != self.head.n_out || d_out.steps != steps || d_out.batch != batch {
            return Err(NnError::DimensionMismatch { expected: steps * batch * self.head.n_out, got: d_out.data.len() });
        }
        let rows = steps * batch;
        let nf = self.head.n_in;
        let mut d_feat = vec![0.0; rows * nf];
        {
            let features: &[f64] = match &cache.lstm {
                Some(c) => &c.h[batch * nf..],
                None => cache.acts.last().expect("input cached"),
            };
            outer_acc(features, nf, &d_out.data, &mut self.head.w.grad, Some(&mut self.head.b.grad));
            transpose_acc(&d_out.data, &self.head.w.value, nf, &mut d_feat);
        }
        let mut d_act = match (&mut self.lstm, &cache.lstm) {
            (Some(l), Some(lc)) => Self::lstm_backward(l, lc, cache.acts.last().expect("input cached"), steps, batch, &d_feat),
            _ => d_feat,
        };
        for (i, d) in self.dense.iter_mut().enumerate().rev() {
            let out = &cache.acts[i + 1];
            for (g, o) in d_act.iter_mut().zip(out) {
                if *o <= 0.0 {
                    *g = 0.0;
                }
            }
            let x = &cache.acts[i];
            outer_acc(x, d.n_in, &d_act, &mut d.w.grad, Some(&mut d.b.grad));
            let mut dx = vec![0.0; rows * d.n_in];
            transpose_acc(&d_act, &d.w.value, d.n_in, &mut dx);
            d_act = dx;
        }
        Ok(SeqBatch { steps, batch, dim: self.topology.input, data: d_act })
    }

    fn lstm_backward(l: &mut Lstm, lc: &LstmCache, x: &[f64], steps: usize, batch: usize, d_h_out: &[f64]) -> Vec<f64> {
        let nh = l.n_hidden;
        let step_h = batch * nh;
        let step_x = batch * l.n_in;
        let mut dx = vec![0.0; steps * step_x];
        let mut dh_next = vec![0.0; step_h];
        let mut dc_next = vec![0.0; step_h];
        let mut dz = vec![0.0; batch * 4 * nh];
        for t in (0..steps).rev() {
            let g = &lc.gates[t * batch * 4 * nh..(t + 1) * batch * 4 * nh];
            let c_prev = &lc.c[t * step_h..(t + 1) * step_h];
            let tc = &lc.tanh_c[t * step_h..(t + 1) * step_h];
            let dh_out = &d_h_out[t * step_h..(t + 1) * step_h];
            for b in 0..batch {
                let gb = &g[b * 4 * nh..(b + 1) * 4 * nh];
                let zb = &mut dz[b * 4 * nh..(b + 1) * 4 * nh];
                for j in 0..nh {
                    let k = b * nh + j;
                    let (i_g, f_g, c_g, o_g) = (gb[j], gb[nh + j], gb[2 * nh + j], gb[3 * nh + j]);
                    let dh = dh_out[k] + dh_next[k];
                    let dc = dc_next[k] + dh * o_g * (1.0 - tc[k] * tc[k]);
                    zb[j] = dc * c_g * i_g * (1.0 - i_g);
                    zb[nh + j] = dc * c_prev[k] * f_g * (1.0 - f_g);
                    zb[2 * nh + j] = dc * i_g * (1.0 - c_g * c_g);
                    zb[3 * nh + j] = dh * tc[k] * o_g * (1.0 - o_g);
                    dc_next[k] = dc * f_g;
                }
            }
            outer_acc(&x[t * step_x..(t + 1) * step_x], l.n_in, &dz, &mut l.wx.grad, Some(&mut l.b.grad));
            outer_acc(&lc.h[t * step_h..(t + 1) * step_h], nh, &dz, &mut l.wh.grad, None);
            transpose_acc(&dz, &l.wx.value, l.n_in, &mut dx[t * step_x..(t + 1) * step_x]);
            dh_next.fill(0.0);
            transpose_acc(&dz, &l.wh.value, nh, &mut dh_next);
        }
        dx
    }
}

/// Softmax distribution over logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub entropy: f64,
}

/// Max-shifted softmax with log-probabilities and entropy.
pub fn categorical(logits: &[f64]) -> Categorical {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = logits.iter().map(|l| l - lse).collect();
    let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
    let entropy = -probs.iter().zip(&log_probs).map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 }).sum::<f64>();
    Categorical { probs, log_probs, entropy }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
