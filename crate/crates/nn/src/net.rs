//! Recurrent policy-value network.
//!
//! Observation encoder (optional conv stages, then dense layers), an LSTM
//! whose input is the encoding concatenated with the previous action
//! one-hot, optional dense layers, and a final linear layer producing
//! `n_actions` logits followed by one value.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::graph::{ConvGeometry, Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    Features { len: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl InputSpec {
    pub fn len(&self) -> usize {
        match *self {
            InputSpec::Features { len } => len,
            InputSpec::Image { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub units: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputSpec,
    /// Each stage is followed by a ReLU.
    pub conv: Vec<ConvSpec>,
    pub pre_lstm: Vec<DenseSpec>,
    pub lstm: usize,
    pub post_lstm: Vec<DenseSpec>,
    pub n_actions: usize,
}

pub const DEFAULT_ACTIONS: usize = 9;

impl Architecture {
    /// fc128-ReLU, fc128-ReLU, LSTM64, fc10.
    pub fn features(input_len: usize) -> Self {
        Self {
            input: InputSpec::Features { len: input_len },
            conv: Vec::new(),
            pre_lstm: vec![DenseSpec { units: 128, relu: true }, DenseSpec { units: 128, relu: true }],
            lstm: 64,
            post_lstm: Vec::new(),
            n_actions: DEFAULT_ACTIONS,
        }
    }

    /// Reduced-width feature network (under 5k parameters) for finite-difference checks.
    pub fn features_small(input_len: usize) -> Self {
        Self {
            pre_lstm: vec![DenseSpec { units: 24, relu: true }, DenseSpec { units: 24, relu: true }],
            lstm: 16,
            ..Self::features(input_len)
        }
    }

    /// Five conv-ReLU stages (32 to 512 channels, kernel 4, stride 2),
    /// fc1024, LSTM512, fc1024-ReLU, fc10.
    pub fn image(height: usize, width: usize) -> Self {
        Self::image_with_stride(height, width, 2)
    }

    pub fn image_with_stride(height: usize, width: usize, stride: usize) -> Self {
        Self {
            input: InputSpec::Image { channels: 3, height, width },
            conv: [32, 64, 128, 256, 512].iter().map(|&c| ConvSpec { out_channels: c, kernel: 4, stride, pad: 1 }).collect(),
            pre_lstm: vec![DenseSpec { units: 1024, relu: false }],
            lstm: 512,
            post_lstm: vec![DenseSpec { units: 1024, relu: true }],
            n_actions: DEFAULT_ACTIONS,
        }
    }

    pub fn output_len(&self) -> usize {
        self.n_actions + 1
    }

    pub fn conv_geometries(&self) -> Result<Vec<ConvGeometry>, NnError> {
        let (mut c, mut h, mut w) = match self.input {
            InputSpec::Features { .. } if !self.conv.is_empty() => return Err(NnError::Contract("conv stages need an image input".into())),
            InputSpec::Features { .. } => return Ok(Vec::new()),
            InputSpec::Image { channels, height, width } => (channels, height, width),
        };
        let mut out = Vec::with_capacity(self.conv.len());
        for (k, s) in self.conv.iter().enumerate() {
            if s.kernel == 0 || s.stride == 0 || h + 2 * s.pad < s.kernel || w + 2 * s.pad < s.kernel {
                return Err(NnError::Contract(format!("conv stage {k} does not fit a {h}x{w} input")));
            }
            let g = ConvGeometry {
                in_channels: c,
                in_height: h,
                in_width: w,
                out_channels: s.out_channels,
                kernel: s.kernel,
                stride: s.stride,
                pad: s.pad,
            };
            c = g.out_channels;
            h = g.out_height();
            w = g.out_width();
            out.push(g);
        }
        Ok(out)
    }

    /// Width of the encoder output entering the first dense layer.
    fn encoder_len(&self) -> Result<usize, NnError> {
        Ok(self.conv_geometries()?.last().map_or(self.input.len(), |g| g.out_len()))
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input.is_empty() || self.lstm == 0 || self.n_actions == 0 {
            return Err(NnError::Contract("input, lstm and action sizes must be positive".into()));
        }
        if self.pre_lstm.iter().chain(&self.post_lstm).any(|d| d.units == 0) {
            return Err(NnError::Contract("dense layers need at least one unit".into()));
        }
        self.encoder_len().map(|_| ())
    }

    /// Closed-form parameter count:
    /// conv `co·ci·k² + co`, dense `out·in + out`,
    /// LSTM `4H·(in + A) + 4H·H + 4H`, head `(A + 1)·in + (A + 1)`.
    pub fn parameter_count(&self) -> Result<usize, NnError> {
        let mut total = 0;
        for g in self.conv_geometries()? {
            total += g.out_channels * g.in_channels * g.kernel * g.kernel + g.out_channels;
        }
        let mut width = self.encoder_len()?;
        for d in &self.pre_lstm {
            total += d.units * width + d.units;
            width = d.units;
        }
        let h = self.lstm;
        total += 4 * h * (width + self.n_actions) + 4 * h * h + 4 * h;
        width = h;
        for d in &self.post_lstm {
            total += d.units * width + d.units;
            width = d.units;
        }
        total += self.output_len() * width + self.output_len();
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv: Vec<(ParamId, ParamId, ConvGeometry)>,
    pre: Vec<(ParamId, ParamId, bool)>,
    lstm_wx: ParamId,
    lstm_wh: ParamId,
    lstm_b: ParamId,
    post: Vec<(ParamId, ParamId, bool)>,
    head: (ParamId, ParamId),
}

/// LSTM hidden and cell state for a batch of lanes, `[batch, lstm]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub batch: usize,
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> RecurrentState<T> {
    pub fn zeros(batch: usize, size: usize) -> Self {
        Self { batch, h: vec![T::zero(); batch * size], c: vec![T::zero(); batch * size] }
    }

    pub fn size(&self) -> usize {
        self.h.len() / self.batch.max(1)
    }

    /// Zeroes lane `i` (episode boundary).
    pub fn reset_lane(&mut self, i: usize) {
        let n = self.size();
        self.h[i * n..(i + 1) * n].iter_mut().for_each(|x| *x = T::zero());
        self.c[i * n..(i + 1) * n].iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn lane(&self, i: usize) -> (&[T], &[T]) {
        let n = self.size();
        (&self.h[i * n..(i + 1) * n], &self.c[i * n..(i + 1) * n])
    }

    /// Gathers the given lanes into a new batch.
    pub fn select(&self, lanes: &[usize]) -> Self {
        let mut out = Self::zeros(lanes.len(), self.size());
        let n = self.size();
        for (k, &i) in lanes.iter().enumerate() {
            out.h[k * n..(k + 1) * n].copy_from_slice(&self.h[i * n..(i + 1) * n]);
            out.c[k * n..(k + 1) * n].copy_from_slice(&self.c[i * n..(i + 1) * n]);
        }
        out
    }
}

/// Graph nodes produced by an unrolled forward pass.
pub struct SequenceOutput {
    /// `[steps·batch, n_actions + 1]`, time-major rows.
    pub output: Var,
    pub h: Var,
    pub c: Var,
}

/// Batched single-step outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    /// `[batch, n_actions]`
    pub logits: Vec<T>,
    pub values: Vec<T>,
    pub state: RecurrentState<T>,
}

impl<T: Real> StepOutput<T> {
    pub fn lane_logits(&self, i: usize, n_actions: usize) -> &[T] {
        &self.logits[i * n_actions..(i + 1) * n_actions]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueNet<T> {
    pub agent: String,
    pub arch: Architecture,
    pub params: ParamSet<T>,
    layout: Layout,
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (3.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// `[rows, 4·rows]` made of four orthogonal `rows × rows` blocks.
fn orthogonal_blocks(rng: &mut ChaCha8Rng, rows: usize, blocks: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * rows * blocks];
    for b in 0..blocks {
        let m = DMatrix::<f64>::from_fn(rows, rows, |_, _| rng.sample(StandardNormal));
        let qr = m.qr();
        let (q, r) = (qr.q(), qr.r());
        for i in 0..rows {
            // sign fix makes the draw uniform over the orthogonal group
            for j in 0..rows {
                let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
                out[i * rows * blocks + b * rows + j] = q[(i, j)] * s;
            }
        }
    }
    out
}

impl<T: Real> PolicyValueNet<T> {
    /// Orthogonal recurrent weights, fan-in scaled uniform elsewhere, zero
    /// biases, logit columns of the head scaled by 0.01.
    pub fn new(arch: Architecture, agent: impl Into<String>, seed: u64) -> Result<Self, NnError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        let zeros = |n: usize| vec![T::zero(); n];

        let mut conv = Vec::new();
        for (k, g) in arch.conv_geometries()?.into_iter().enumerate() {
            let patch = g.in_channels * g.kernel * g.kernel;
            let w =
                params.add(format!("conv{k}.w"), [g.out_channels, patch], cast(uniform_fan_in(&mut rng, patch, g.out_channels * patch)));
            let b = params.add(format!("conv{k}.b"), [1, g.out_channels], zeros(g.out_channels));
            conv.push((w, b, g));
        }
        let mut width = arch.encoder_len()?;
        let dense = |params: &mut ParamSet<T>, rng: &mut ChaCha8Rng, name: String, specs: &[DenseSpec], width: &mut usize| {
            let mut out = Vec::new();
            for (k, d) in specs.iter().enumerate() {
                let w = params.add(format!("{name}{k}.w"), [*width, d.units], cast(uniform_fan_in(rng, *width, *width * d.units)));
                let b = params.add(format!("{name}{k}.b"), [1, d.units], zeros(d.units));
                out.push((w, b, d.relu));
                *width = d.units;
            }
            out
        };
        let pre = dense(&mut params, &mut rng, "pre".into(), &arch.pre_lstm, &mut width);
        let h = arch.lstm;
        let lstm_in = width + arch.n_actions;
        let lstm_wx = params.add("lstm.wx", [lstm_in, 4 * h], cast(uniform_fan_in(&mut rng, lstm_in, lstm_in * 4 * h)));
        let lstm_wh = params.add("lstm.wh", [h, 4 * h], cast(orthogonal_blocks(&mut rng, h, 4)));
        let lstm_b = params.add("lstm.b", [1, 4 * h], zeros(4 * h));
        width = h;
        let post = dense(&mut params, &mut rng, "post".into(), &arch.post_lstm, &mut width);
        let out_len = arch.output_len();
        let mut head_w = uniform_fan_in(&mut rng, width, width * out_len);
        for (i, x) in head_w.iter_mut().enumerate() {
            if i % out_len < arch.n_actions {
                *x *= 0.01;
            }
        }
        let hw = params.add("head.w", [width, out_len], cast(head_w));
        let hb = params.add("head.b", [1, out_len], zeros(out_len));
        let layout = Layout { conv, pre, lstm_wx, lstm_wh, lstm_b, post, head: (hw, hb) };
        let net = Self { agent: agent.into(), arch, params, layout };
        debug_assert_eq!(net.params.count(), net.arch.parameter_count().unwrap());
        Ok(net)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> PolicyValueNet<U> {
        PolicyValueNet { agent: self.agent.clone(), arch: self.arch.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    /// Replaces the parameters, checking tensor names and shapes.
    pub fn set_params(&mut self, params: ParamSet<T>) -> Result<(), NnError> {
        if params.tensors.len() != self.params.tensors.len()
            || params.tensors.iter().zip(&self.params.tensors).any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(NnError::ArchitectureMismatch("parameter tensors do not match the architecture".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn zero_state(&self, batch: usize) -> RecurrentState<T> {
        RecurrentState::zeros(batch, self.arch.lstm)
    }

    /// Unrolls the network over `steps` time steps of `batch` lanes.
    ///
    /// `obs` is `[steps·batch, input]` and `prev_action` `[steps·batch, n_actions]`
    /// (time-major). `keep[t][b] = 0` zeroes lane `b`'s recurrent state before
    /// step `t` (episode start); `None` keeps every lane.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_sequence(
        &self,
        g: &mut Graph<'_, T>,
        obs: Var,
        prev_action: Var,
        h0: Var,
        c0: Var,
        keep: Option<&[Vec<T>]>,
        steps: usize,
        batch: usize,
    ) -> Result<SequenceOutput, NnError> {
        let rows = steps * batch;
        let h = self.arch.lstm;
        if g.shape(obs) != (rows, self.arch.input.len()) {
            return Err(NnError::Contract(format!(
                "observation batch is {:?}, expected ({rows}, {})",
                g.shape(obs),
                self.arch.input.len()
            )));
        }
        if g.shape(prev_action) != (rows, self.arch.n_actions) {
            return Err(NnError::Contract("previous-action batch has the wrong shape".into()));
        }
        if g.shape(h0) != (batch, h) || g.shape(c0) != (batch, h) {
            return Err(NnError::Contract("recurrent state has the wrong shape".into()));
        }
        if keep.is_some_and(|k| k.len() != steps || k.iter().any(|r| r.len() != batch)) {
            return Err(NnError::Contract("reset mask has the wrong shape".into()));
        }
        let mut x = obs;
        for &(w, b, geo) in &self.layout.conv {
            let y = g.conv2d(x, w, b, geo);
            x = g.relu(y);
        }
        for &(w, b, relu) in &self.layout.pre {
            let y = g.linear(x, w, b);
            x = if relu { g.relu(y) } else { y };
        }
        let xin = g.concat_cols(&[x, prev_action]);
        let xg = g.linear(xin, self.layout.lstm_wx, self.layout.lstm_b);
        let wh = g.param(self.layout.lstm_wh);
        let (mut hv, mut cv) = (h0, c0);
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            if let Some(k) = keep {
                if k[t].iter().any(|&m| m != T::one()) {
                    hv = g.scale_rows(hv, k[t].clone());
                    cv = g.scale_rows(cv, k[t].clone());
                }
            }
            let xt = if steps == 1 { xg } else { g.slice_rows(xg, t * batch, batch) };
            let hg = g.matmul(hv, wh);
            let gates = g.add(xt, hg);
            let if_pre = g.slice_cols(gates, 0, 2 * h);
            let if_gates = g.sigmoid(if_pre);
            let i_gate = g.slice_cols(if_gates, 0, h);
            let f_gate = g.slice_cols(if_gates, h, h);
            let cand_pre = g.slice_cols(gates, 2 * h, h);
            let cand = g.tanh(cand_pre);
            let o_pre = g.slice_cols(gates, 3 * h, h);
            let o_gate = g.sigmoid(o_pre);
            let fc = g.mul(f_gate, cv);
            let ic = g.mul(i_gate, cand);
            cv = g.add(fc, ic);
            let ct = g.tanh(cv);
            hv = g.mul(o_gate, ct);
            hs.push(hv);
        }
        let mut y = if steps == 1 { hs[0] } else { g.concat_rows(&hs) };
        for &(w, b, relu) in &self.layout.post {
            let z = g.linear(y, w, b);
            y = if relu { g.relu(z) } else { z };
        }
        let output = g.linear(y, self.layout.head.0, self.layout.head.1);
        Ok(SequenceOutput { output, h: hv, c: cv })
    }

    /// One step for a batch of lanes. `prev_action[b]` is `None` at episode start.
    pub fn step(&self, obs: &[T], prev_action: &[Option<usize>], state: &RecurrentState<T>) -> Result<StepOutput<T>, NnError> {
        let batch = state.batch;
        if prev_action.len() != batch {
            return Err(NnError::Contract("one previous action per lane".into()));
        }
        if obs.len() != batch * self.arch.input.len() {
            return Err(NnError::Contract(format!(
                "observation batch has {} values, expected {}",
                obs.len(),
                batch * self.arch.input.len()
            )));
        }
        let na = self.arch.n_actions;
        let mut g = Graph::new(&self.params);
        let obs_v = g.input(obs.to_vec(), batch, self.arch.input.len());
        let prev = g.input(one_hot(prev_action, na)?, batch, na);
        let h0 = g.input(state.h.clone(), batch, self.arch.lstm);
        let c0 = g.input(state.c.clone(), batch, self.arch.lstm);
        let out = self.forward_sequence(&mut g, obs_v, prev, h0, c0, None, 1, batch)?;
        let (logits, values) = split_output(g.value(out.output), na);
        Ok(StepOutput { logits, values, state: RecurrentState { batch, h: g.value(out.h).to_vec(), c: g.value(out.c).to_vec() } })
    }
}

/// One-hot rows; `None` gives an all-zero row.
pub fn one_hot<T: Real>(actions: &[Option<usize>], n: usize) -> Result<Vec<T>, NnError> {
    let mut out = vec![T::zero(); actions.len() * n];
    for (i, a) in actions.iter().enumerate() {
        if let Some(a) = a {
            if *a >= n {
                return Err(NnError::Contract(format!("action {a} out of range")));
            }
            out[i * n + a] = T::one();
        }
    }
    Ok(out)
}

/// Splits `[rows, n_actions + 1]` output rows into logits and values.
pub fn split_output<T: Real>(out: &[T], n_actions: usize) -> (Vec<T>, Vec<T>) {
    let w = n_actions + 1;
    let mut logits = Vec::with_capacity(out.len() / w * n_actions);
    let mut values = Vec::with_capacity(out.len() / w);
    for row in out.chunks_exact(w) {
        logits.extend_from_slice(&row[..n_actions]);
        values.push(row[n_actions]);
    }
    (logits, values)
}
