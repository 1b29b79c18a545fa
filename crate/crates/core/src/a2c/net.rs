//! LSTM -> dense(ReLU) -> head network with manual backpropagation through time.
//!
//! Dense weights are stored input-major (`w[j * rows + r]` is row `r`,
//! column `j`) so the forward pass is a sequence of axpy updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OffloadError, Result};
use crate::mdp::FEATURE_DIM;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Actor,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub fc: usize,
    pub output: usize,
}

impl NetShape {
    pub fn standard(kind: NetKind) -> Self {
        NetShape { input: FEATURE_DIM, hidden: 64, fc: 256, output: kind.output_dim() }
    }

    /// 9 -> LSTM 4 -> dense 8 -> head; small enough for finite differences.
    pub fn miniature(kind: NetKind) -> Self {
        NetShape { input: FEATURE_DIM, hidden: 4, fc: 8, output: kind.output_dim() }
    }

    fn layout(&self) -> Layout {
        let g = 4 * self.hidden;
        let wx = 0;
        let wh = wx + g * self.input;
        let b = wh + g * self.hidden;
        let wfc = b + g;
        let bfc = wfc + self.fc * self.hidden;
        let wout = bfc + self.fc;
        let bout = wout + self.output * self.fc;
        let len = bout + self.output;
        Layout { wx, wh, b, wfc, bfc, wout, bout, len }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

impl NetKind {
    pub fn output_dim(self) -> usize {
        match self {
            NetKind::Actor => 4,
            NetKind::Critic => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    wx: usize,
    wh: usize,
    b: usize,
    wfc: usize,
    bfc: usize,
    wout: usize,
    bout: usize,
    len: usize,
}

/// Network parameters plus their RMSprop accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<F> {
    pub kind: NetKind,
    pub shape: NetShape,
    pub params: Vec<F>,
    pub rms: Vec<F>,
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![F::zero(); hidden], c: vec![F::zero(); hidden] }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    /// Actor: action probabilities. Critic: one value per step.
    pub outputs: Vec<Vec<F>>,
    pub final_state: LstmState<F>,
}

/// Activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct Tape<F> {
    steps: usize,
    xs: Vec<F>,
    gates: Vec<F>,
    cs: Vec<F>,
    tanh_cs: Vec<F>,
    hs: Vec<F>,
    fc: Vec<F>,
    /// Logits (actor) or values (critic).
    pub head: Vec<F>,
}

impl<F: Scalar> Tape<F> {
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn head_at(&self, t: usize, out_dim: usize) -> &[F] {
        &self.head[t * out_dim..(t + 1) * out_dim]
    }
}

#[inline]
fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
fn axpy<F: Scalar>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += W x` for an input-major `rows x cols` matrix.
#[inline]
fn matvec_acc<F: Scalar>(y: &mut [F], w: &[F], x: &[F]) {
    let rows = y.len();
    for (j, &xj) in x.iter().enumerate() {
        if xj != F::zero() {
            axpy(y, xj, &w[j * rows..(j + 1) * rows]);
        }
    }
}

/// `y += W^T d` for an input-major `rows x cols` matrix (`y` has `cols` entries).
#[inline]
fn matvec_t_acc<F: Scalar>(y: &mut [F], w: &[F], d: &[F]) {
    let rows = d.len();
    for (j, yj) in y.iter_mut().enumerate() {
        *yj += dot(&w[j * rows..(j + 1) * rows], d);
    }
}

/// `G += d x^T` for an input-major gradient matrix.
#[inline]
fn outer_acc<F: Scalar>(g: &mut [F], d: &[F], x: &[F]) {
    let rows = d.len();
    for (j, &xj) in x.iter().enumerate() {
        if xj != F::zero() {
            axpy(&mut g[j * rows..(j + 1) * rows], xj, d);
        }
    }
}

/// Numerically stable softmax written into `out`.
pub fn softmax<F: Scalar>(logits: &[F], out: &mut [F]) {
    let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut z = F::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// `log softmax(logits)` into `out`.
pub fn log_softmax<F: Scalar>(logits: &[F], out: &mut [F]) {
    let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<F>().ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Fills an input-major `rows x cols` block with a (semi-)orthogonal matrix:
/// orthonormal columns when `rows >= cols`, orthonormal rows otherwise.
fn orthogonal_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // `short` Gaussian vectors of length `tall`, orthonormalised by modified Gram-Schmidt.
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for k in 0..short {
        for p in 0..k {
            let proj: f64 = q[k].iter().zip(&q[p]).map(|(a, b)| a * b).sum();
            let qp = q[p].clone();
            q[k].iter_mut().zip(&qp).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = q[k].iter().map(|a| a * a).sum::<f64>().sqrt();
        q[k].iter_mut().for_each(|a| *a /= norm);
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // rows >= cols: column c is q[c]; otherwise row r is q[r].
            w[c * rows + r] = if rows >= cols { q[c][r] } else { q[r][c] };
        }
    }
    w
}

/// Orthogonal weights, zero biases, forget-gate bias 1, zero accumulators.
pub fn init_network<F: Scalar>(kind: NetKind, seed: u64) -> PolicyNet<F> {
    init_with_shape(kind, NetShape::standard(kind), seed)
}

pub fn init_with_shape<F: Scalar>(kind: NetKind, shape: NetShape, seed: u64) -> PolicyNet<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = shape.layout();
    let h = shape.hidden;
    let mut params = vec![0.0f64; l.len];

    // One orthogonal block per gate, laid out so gate k occupies rows k*H..(k+1)*H.
    for (offset, cols) in [(l.wx, shape.input), (l.wh, h)] {
        for gate in 0..4 {
            let block = orthogonal_block(&mut rng, h, cols);
            for c in 0..cols {
                for r in 0..h {
                    params[offset + c * 4 * h + gate * h + r] = block[c * h + r];
                }
            }
        }
    }
    for r in h..2 * h {
        params[l.b + r] = 1.0;
    }
    let wfc = orthogonal_block(&mut rng, shape.fc, h);
    params[l.wfc..l.wfc + wfc.len()].copy_from_slice(&wfc);
    let wout = orthogonal_block(&mut rng, shape.output, shape.fc);
    params[l.wout..l.wout + wout.len()].copy_from_slice(&wout);

    PolicyNet {
        kind,
        shape,
        params: params.into_iter().map(F::lit).collect(),
        rms: vec![F::zero(); l.len],
    }
}

/// Copies block `(offset, rows, cols)` out of `params` as a dense row-major matrix.
pub fn weight_matrix<F: Scalar>(net: &PolicyNet<F>, which: WeightBlock) -> (usize, usize, Vec<F>) {
    let l = net.shape.layout();
    let s = net.shape;
    let (offset, rows, cols) = match which {
        WeightBlock::InputGates => (l.wx, 4 * s.hidden, s.input),
        WeightBlock::Recurrent => (l.wh, 4 * s.hidden, s.hidden),
        WeightBlock::Dense => (l.wfc, s.fc, s.hidden),
        WeightBlock::Head => (l.wout, s.output, s.fc),
    };
    let mut m = vec![F::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = net.params[offset + c * rows + r];
        }
    }
    (rows, cols, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightBlock {
    InputGates,
    Recurrent,
    Dense,
    Head,
}

impl<F: Scalar> PolicyNet<F> {
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[F]) -> Result<()> {
        if x.len() != self.shape.input {
            return Err(OffloadError::Shape(format!("expected {} input features, got {}", self.shape.input, x.len())));
        }
        Ok(())
    }

    /// One recurrent step. Writes gate activations into `gates` and the dense
    /// activations into `fc`; returns nothing, `state` is updated in place and
    /// `head` receives logits or the value.
    fn cell(&self, x: &[F], state: &mut LstmState<F>, gates: &mut [F], fc: &mut [F], head: &mut [F]) {
        let l = self.shape.layout();
        let h = self.shape.hidden;
        let p = &self.params;

        gates.copy_from_slice(&p[l.b..l.b + 4 * h]);
        matvec_acc(gates, &p[l.wx..l.wh], x);
        matvec_acc(gates, &p[l.wh..l.b], &state.h);
        for k in 0..h {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[h + k]);
            let g = gates[2 * h + k].tanh();
            let o = sigmoid(gates[3 * h + k]);
            gates[k] = i;
            gates[h + k] = f;
            gates[2 * h + k] = g;
            gates[3 * h + k] = o;
            let c = f * state.c[k] + i * g;
            state.c[k] = c;
            state.h[k] = o * c.tanh();
        }

        fc.copy_from_slice(&p[l.bfc..l.wout]);
        matvec_acc(fc, &p[l.wfc..l.bfc], &state.h);
        for v in fc.iter_mut() {
            *v = v.max(F::zero());
        }

        head.copy_from_slice(&p[l.bout..l.len]);
        matvec_acc(head, &p[l.wout..l.bout], fc);
    }

    /// Single inference step: probabilities (actor) or value (critic) into `out`.
    pub fn step(&self, x: &[F], state: &mut LstmState<F>, out: &mut [F]) -> Result<()> {
        self.check_input(x)?;
        let mut gates = vec![F::zero(); 4 * self.shape.hidden];
        let mut fc = vec![F::zero(); self.shape.fc];
        let mut head = vec![F::zero(); self.shape.output];
        self.cell(x, state, &mut gates, &mut fc, &mut head);
        match self.kind {
            NetKind::Actor => softmax(&head, out),
            NetKind::Critic => out.copy_from_slice(&head),
        }
        Ok(())
    }

    /// Runs a whole sequence from a zero recurrent state.
    pub fn forward<X: AsRef<[F]>>(&self, inputs: &[X]) -> Result<ForwardOutput<F>> {
        let mut state = LstmState::zeros(self.shape.hidden);
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut out = vec![F::zero(); self.shape.output];
            self.step(x.as_ref(), &mut state, &mut out)?;
            outputs.push(out);
        }
        Ok(ForwardOutput { outputs, final_state: state })
    }

    /// Forward pass that records everything [`PolicyNet::backward`] needs.
    pub fn forward_tape<X: AsRef<[F]>>(&self, inputs: &[X]) -> Result<Tape<F>> {
        let s = self.shape;
        let n = inputs.len();
        let mut tape = Tape {
            steps: n,
            xs: Vec::with_capacity(n * s.input),
            gates: vec![F::zero(); n * 4 * s.hidden],
            cs: vec![F::zero(); n * s.hidden],
            tanh_cs: vec![F::zero(); n * s.hidden],
            hs: vec![F::zero(); n * s.hidden],
            fc: vec![F::zero(); n * s.fc],
            head: vec![F::zero(); n * s.output],
        };
        let mut state = LstmState::zeros(s.hidden);
        for (t, x) in inputs.iter().enumerate() {
            let x = x.as_ref();
            self.check_input(x)?;
            tape.xs.extend_from_slice(x);
            let h = s.hidden;
            self.cell(
                x,
                &mut state,
                &mut tape.gates[t * 4 * h..(t + 1) * 4 * h],
                &mut tape.fc[t * s.fc..(t + 1) * s.fc],
                &mut tape.head[t * s.output..(t + 1) * s.output],
            );
            tape.cs[t * h..(t + 1) * h].copy_from_slice(&state.c);
            tape.hs[t * h..(t + 1) * h].copy_from_slice(&state.h);
            for k in 0..h {
                tape.tanh_cs[t * h + k] = state.c[k].tanh();
            }
        }
        Ok(tape)
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/dhead` per step
    /// (`d_head[t * output + k]`, gradient w.r.t. logits or value).
    pub fn backward(&self, tape: &Tape<F>, d_head: &[F], grad: &mut [F]) {
        let s = self.shape;
        let l = s.layout();
        let (h, n) = (s.hidden, tape.steps);
        let p = &self.params;
        debug_assert_eq!(d_head.len(), n * s.output);
        debug_assert_eq!(grad.len(), l.len);

        let mut dh_next = vec![F::zero(); h];
        let mut dc_next = vec![F::zero(); h];
        let mut da = vec![F::zero(); s.fc];
        let mut dh = vec![F::zero(); h];
        let mut dpre = vec![F::zero(); 4 * h];
        let zeros = vec![F::zero(); h];

        let (g_wx, rest) = grad.split_at_mut(l.wh);
        let (g_wh, rest) = rest.split_at_mut(l.b - l.wh);
        let (g_b, rest) = rest.split_at_mut(l.wfc - l.b);
        let (g_wfc, rest) = rest.split_at_mut(l.bfc - l.wfc);
        let (g_bfc, rest) = rest.split_at_mut(l.wout - l.bfc);
        let (g_wout, g_bout) = rest.split_at_mut(l.bout - l.wout);

        for t in (0..n).rev() {
            let dout = &d_head[t * s.output..(t + 1) * s.output];
            let a = &tape.fc[t * s.fc..(t + 1) * s.fc];
            let h_t = &tape.hs[t * h..(t + 1) * h];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&tape.hs[(t - 1) * h..t * h], &tape.cs[(t - 1) * h..t * h])
            };
            let x = &tape.xs[t * s.input..(t + 1) * s.input];
            let gates = &tape.gates[t * 4 * h..(t + 1) * 4 * h];
            let tc = &tape.tanh_cs[t * h..(t + 1) * h];

            // Head.
            outer_acc(g_wout, dout, a);
            axpy(g_bout, F::one(), dout);
            da.iter_mut().for_each(|v| *v = F::zero());
            matvec_t_acc(&mut da, &p[l.wout..l.bout], dout);

            // Dense + ReLU.
            for (d, &act) in da.iter_mut().zip(a) {
                if act <= F::zero() {
                    *d = F::zero();
                }
            }
            outer_acc(g_wfc, &da, h_t);
            axpy(g_bfc, F::one(), &da);
            dh.copy_from_slice(&dh_next);
            matvec_t_acc(&mut dh, &p[l.wfc..l.bfc], &da);

            // LSTM cell.
            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let d_o = dh[k] * tc[k];
                let dc = dh[k] * o * (F::one() - tc[k] * tc[k]) + dc_next[k];
                dpre[k] = dc * g * i * (F::one() - i);
                dpre[h + k] = dc * c_prev[k] * f * (F::one() - f);
                dpre[2 * h + k] = dc * i * (F::one() - g * g);
                dpre[3 * h + k] = d_o * o * (F::one() - o);
                dc_next[k] = dc * f;
            }
            outer_acc(g_wx, &dpre, x);
            outer_acc(g_wh, &dpre, h_prev);
            axpy(g_b, F::one(), &dpre);
            dh_next.iter_mut().for_each(|v| *v = F::zero());
            matvec_t_acc(&mut dh_next, &p[l.wh..l.b], &dpre);
        }
    }
}

/// Index of the largest probability; ties go to the smallest index.
pub fn argmax<F: Scalar>(probs: &[F]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
