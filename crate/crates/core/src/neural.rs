//! Small dense-network stack: batched forward pass, reverse-mode gradients,
//! Adam, Polyak target updates and a binary checkpoint format.
//!
//! Everything is `f64`. Batches are row-major `batch x width` slices.
//!
//! Checkpoint layout (all integers `u32` little-endian):
//!
//! ```text
//! magic   b"UAVN"
//! version 1
//! hidden activation code, output activation code
//! number of widths W, then W widths (input, hidden..., output)
//! per layer: weights (out x in, row-major), then biases, as f64 LE
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UAVN";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn grad(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected layer `y = W x + b`, `W` stored `n_out x n_in` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.n_in == other.n_in && self.n_out == other.n_out
    }
}

/// Parameter-shaped gradient (or moment) storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    /// Scales every entry by `s`.
    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v *= s);
        }
    }
}

/// Activations saved by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    batch: usize,
    /// Input of every layer; the last entry is the network output.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape holds the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Pre-activation of the output layer.
    pub fn output_pre(&self) -> &[f64] {
        self.pre.last().expect("network has a layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

impl DenseNet {
    /// Random network with layer sizes `widths` (input first, output last);
    /// weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|p| {
                let (n_in, n_out) = (p[0], p[1]);
                let bound = 1.0 / (n_in as f64).sqrt();
                let mut d = Dense::zeros(n_in, n_out);
                d.w.iter_mut()
                    .chain(d.b.iter_mut())
                    .for_each(|v| *v = rng.random_range(-bound..=bound));
                d
            })
            .collect();
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].n_in];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    /// Multiplies the last layer's parameters by `s`.
    pub fn scale_last_layer(&mut self, s: f64) {
        if let Some(l) = self.layers.last_mut() {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter view: per layer, weights then biases.
    pub fn param(&self, mut k: usize) -> f64 {
        for l in &self.layers {
            if k < l.w.len() {
                return l.w[k];
            }
            k -= l.w.len();
            if k < l.b.len() {
                return l.b[k];
            }
            k -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_param(&mut self, mut k: usize, v: f64) {
        for l in &mut self.layers {
            if k < l.w.len() {
                l.w[k] = v;
                return;
            }
            k -= l.w.len();
            if k < l.b.len() {
                l.b[k] = v;
                return;
            }
            k -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.output().to_vec())
    }

    /// Batched forward pass keeping the intermediate activations.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Tape> {
        let n_in = self.input_len();
        if input.len() != n_in * batch {
            return Err(Error::Shape {
                expected: n_in * batch,
                actual: input.len(),
                context: "network input",
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let act = self.activation(li);
            let x = acts.last().unwrap();
            let mut z = vec![0.0; batch * layer.n_out];
            for s in 0..batch {
                let xs = &x[s * layer.n_in..(s + 1) * layer.n_in];
                let zs = &mut z[s * layer.n_out..(s + 1) * layer.n_out];
                for (o, zo) in zs.iter_mut().enumerate() {
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    *zo = layer.b[o] + dot(row, xs);
                }
            }
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            acts.push(y);
        }
        Ok(Tape { batch, acts, pre })
    }

    /// Reverse pass. `upstream` is dLoss/dOutput for every sample; parameter
    /// gradients are summed over the batch.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        self.backward_with(tape, upstream, None)
    }

    /// Like [`DenseNet::backward`], plus an extra gradient entering directly
    /// at the output layer's pre-activation.
    pub fn backward_with(
        &self,
        tape: &Tape,
        upstream: &[f64],
        output_pre_grad: Option<&[f64]>,
    ) -> Result<(Gradients, Vec<f64>)> {
        let batch = tape.batch;
        let n_out = self.output_len();
        if upstream.len() != n_out * batch {
            return Err(Error::Shape {
                expected: n_out * batch,
                actual: upstream.len(),
                context: "upstream gradient",
            });
        }
        let mut grads = self.zero_grads();
        let mut delta = upstream.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let act = self.activation(li);
            let z = &tape.pre[li];
            let y = &tape.acts[li + 1];
            for ((d, &zv), &yv) in delta.iter_mut().zip(z).zip(y) {
                *d *= act.grad(zv, yv);
            }
            if li + 1 == self.layers.len() {
                if let Some(extra) = output_pre_grad {
                    if extra.len() != delta.len() {
                        return Err(Error::Shape {
                            expected: delta.len(),
                            actual: extra.len(),
                            context: "output pre-activation gradient",
                        });
                    }
                    delta.iter_mut().zip(extra).for_each(|(d, e)| *d += e);
                }
            }
            let x = &tape.acts[li];
            let g = &mut grads.layers[li];
            let mut dx = vec![0.0; batch * layer.n_in];
            for s in 0..batch {
                let xs = &x[s * layer.n_in..(s + 1) * layer.n_in];
                let dxs = &mut dx[s * layer.n_in..(s + 1) * layer.n_in];
                for o in 0..layer.n_out {
                    let d = delta[s * layer.n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    g.b[o] += d;
                    axpy(d, xs, &mut g.w[o * layer.n_in..(o + 1) * layer.n_in]);
                    axpy(d, &layer.w[o * layer.n_in..(o + 1) * layer.n_in], dxs);
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.hidden.code().to_le_bytes())?;
        w.write_all(&self.output.code().to_le_bytes())?;
        let widths = self.widths();
        w.write_all(&(widths.len() as u32).to_le_bytes())?;
        for x in widths {
            w.write_all(&(x as u32).to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.w.iter().chain(&l.b) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> std::result::Result<Self, String> {
        fn u32_le<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let version = u32_le(r)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let hidden = Activation::from_code(u32_le(r)?).ok_or("bad hidden activation")?;
        let output = Activation::from_code(u32_le(r)?).ok_or("bad output activation")?;
        let n = u32_le(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(format!("implausible layer count {n}"));
        }
        let widths = (0..n)
            .map(|_| u32_le(r).map(|x| x as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut layers = Vec::with_capacity(n - 1);
        for p in widths.windows(2) {
            let mut d = Dense::zeros(p[0], p[1]);
            for v in d.w.iter_mut().chain(d.b.iter_mut()) {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|e| e.to_string())?;
                *v = f64::from_le_bytes(b);
            }
            layers.push(d);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes".into());
        }
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.num_params());
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice()).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}

/// Dot product with four independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Adam optimizer state for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: net.zero_grads(),
            v: net.zero_grads(),
        }
    }
}

/// One Adam update of `net` along `-grads`.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != net.layers.len()
        || grads.layers.iter().zip(&net.layers).any(|(g, l)| !g.same_shape(l))
    {
        return Err(Error::Shape {
            expected: net.num_params(),
            actual: grads.layers.iter().map(|l| l.w.len() + l.b.len()).sum(),
            context: "adam gradients",
        });
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("adam gradients".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (li, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        let params = layer.w.iter_mut().chain(layer.b.iter_mut());
        let gs = g.w.iter().chain(&g.b);
        let ms = m.w.iter_mut().chain(m.b.iter_mut());
        let vs = v.w.iter_mut().chain(v.b.iter_mut());
        for (((p, &gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Polyak update `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut DenseNet, online: &DenseNet, tau: f64) -> Result<()> {
    if target.layers.len() != online.layers.len()
        || target
            .layers
            .iter()
            .zip(&online.layers)
            .any(|(a, b)| !a.same_shape(b))
    {
        return Err(Error::Shape {
            expected: online.num_params(),
            actual: target.num_params(),
            context: "soft update",
        });
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        for (tp, &op) in t.w.iter_mut().chain(t.b.iter_mut()).zip(o.w.iter().chain(&o.b)) {
            *tp = tau * op + (1.0 - tau) * *tp;
        }
    }
    Ok(())
}
