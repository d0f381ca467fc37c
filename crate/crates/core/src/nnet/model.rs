use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{Activation, LayerSlot, LayerSpec, Layout, ModelSpec, Shape};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics for batch normalization.
    Train,
    /// Dropout off, running statistics.
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A network specification together with its learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub layout: Layout,
    /// Trainable parameters, laid out per [`LayerSlot::param_offset`].
    pub params: Vec<f64>,
    /// Batch-norm running means and variances.
    pub state: Vec<f64>,
    /// Layers excluded from updates; frozen batch norm also runs on its
    /// running statistics during training.
    pub frozen: Vec<bool>,
    pub history: Vec<EpochRecord>,
    pub rng_seed: u64,
    /// Running-statistic updates committed so far. The first updates average
    /// cumulatively so the statistics are usable after a handful of steps.
    pub bn_updates: u64,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape {
    batch: usize,
    caches: Vec<Cache>,
    /// Running-statistic values to commit after a training step.
    pub state_update: Vec<(usize, Vec<f64>)>,
}

enum Cache {
    None,
    Dense { input: Array2<f64> },
    Conv { cols: Array2<f64> },
    Lstm(Box<[LstmCache; 2]>),
    BatchNorm { xhat: Array2<f64>, inv_std: Array1<f64>, batch_stats: bool },
    Dropout { mask: Array2<f64> },
    Relu { positive: Array2<bool> },
}

struct LstmCache {
    input: Array2<f64>,
    steps: Vec<LstmStep>,
}

struct LstmStep {
    t: usize,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-limit..limit);
    }
}

impl TrainedModel {
    /// Freshly initialized network.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self, NnError> {
        let mut m = Self::zeros(spec)?;
        m.rng_seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in m.layout.slots.clone() {
            let p = &mut m.params[slot.param_offset..slot.param_offset + slot.param_len];
            match spec.layers[slot.index] {
                LayerSpec::Dense { units } => {
                    let n_in = slot.input.channels();
                    glorot(&mut rng, n_in, units, &mut p[..n_in * units]);
                }
                LayerSpec::Conv1d {
                    filters,
                    kernel_width,
                    ..
                } => {
                    let rows = kernel_width * slot.input.channels();
                    glorot(&mut rng, rows, filters * kernel_width, &mut p[..rows * filters]);
                }
                LayerSpec::Bilstm { units, .. } => {
                    let d = slot.input.channels();
                    let per_dir = 4 * units * (d + units + 1);
                    let limit = 1.0 / (units as f64).sqrt();
                    for dir in 0..2 {
                        let block = &mut p[dir * per_dir..(dir + 1) * per_dir];
                        let n_w = 4 * units * (d + units);
                        for v in &mut block[..n_w] {
                            *v = rng.random_range(-limit..limit);
                        }
                        // forget gate bias
                        for v in &mut block[n_w + units..n_w + 2 * units] {
                            *v = 1.0;
                        }
                    }
                }
                LayerSpec::Batchnorm { .. } => {
                    let c = slot.input.channels();
                    p[..c].fill(1.0);
                }
                _ => {}
            }
        }
        Ok(m)
    }

    /// Network with all trainable parameters at zero (batch-norm scales too)
    /// and unit running variances.
    pub fn zeros(spec: &ModelSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = spec.layout()?;
        let mut state = vec![0.0; layout.n_state];
        for slot in &layout.slots {
            if slot.state_len > 0 {
                let c = slot.state_len / 2;
                state[slot.state_offset + c..slot.state_offset + 2 * c].fill(1.0);
            }
        }
        Ok(Self {
            spec: spec.clone(),
            params: vec![0.0; layout.n_params],
            frozen: vec![false; spec.layers.len()],
            layout,
            state,
            history: Vec::new(),
            rng_seed: 0,
            bn_updates: 0,
        })
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_shape.size()
    }

    pub fn output_size(&self) -> usize {
        self.layout.output.size()
    }

    /// Per-parameter flag, true where the owning layer is trainable.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.params.len()];
        for slot in &self.layout.slots {
            if self.frozen[slot.index] {
                mask[slot.param_offset..slot.param_offset + slot.param_len].fill(false);
            }
        }
        mask
    }

    /// Named parameter segments, e.g. `3.dense.weight`.
    pub fn segments(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for slot in &self.layout.slots {
            let layer = &self.spec.layers[slot.index];
            let name = format!("{}.{}", slot.index, layer.name());
            let mut push = |part: &str, off: usize, len: usize| {
                out.push((format!("{name}.{part}"), slot.param_offset + off, len));
            };
            match *layer {
                LayerSpec::Dense { units } => {
                    let w = slot.input.channels() * units;
                    push("weight", 0, w);
                    push("bias", w, units);
                }
                LayerSpec::Conv1d { filters, .. } => {
                    let w = slot.param_len - filters;
                    push("weight", 0, w);
                    push("bias", w, filters);
                }
                LayerSpec::Bilstm { units, .. } => {
                    let d = slot.input.channels();
                    let per_dir = 4 * units * (d + units + 1);
                    for (k, dir) in ["forward", "backward"].iter().enumerate() {
                        let base = k * per_dir;
                        push(&format!("{dir}.input_weight"), base, 4 * units * d);
                        push(&format!("{dir}.recurrent_weight"), base + 4 * units * d, 4 * units * units);
                        push(&format!("{dir}.bias"), base + 4 * units * (d + units), 4 * units);
                    }
                }
                LayerSpec::Batchnorm { .. } => {
                    let c = slot.param_len / 2;
                    push("scale", 0, c);
                    push("shift", c, c);
                }
                _ => {}
            }
        }
        out
    }

    /// Inference-mode predictions.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, Mode::Infer, &mut rng)?.0)
    }

    /// Predictions in bounded-size chunks.
    pub fn predict_batched(&self, x: ArrayView2<f64>, chunk: usize) -> Result<Array2<f64>, NnError> {
        let mut out = Array2::zeros((x.nrows(), self.output_size()));
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + chunk).min(x.nrows());
            let y = self.predict(x.slice(s![start..end, ..]))?;
            out.slice_mut(s![start..end, ..]).assign(&y);
            start = end;
        }
        Ok(out)
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, Tape), NnError> {
        if x.ncols() != self.input_size() {
            return Err(NnError::Input(format!(
                "expected {} inputs per example, got {}",
                self.input_size(),
                x.ncols()
            )));
        }
        let batch = x.nrows();
        let mut h = x.to_owned();
        let mut tape = Tape {
            batch,
            caches: Vec::with_capacity(self.layout.slots.len()),
            state_update: Vec::new(),
        };
        for slot in &self.layout.slots {
            let p = &self.params[slot.param_offset..slot.param_offset + slot.param_len];
            let (out, cache) = match self.spec.layers[slot.index] {
                LayerSpec::Dense { units } => {
                    let n_in = slot.input.channels();
                    let w = ArrayView2::from_shape((n_in, units), &p[..n_in * units]).expect("dense weight shape");
                    let b = ArrayView1::from(&p[n_in * units..]);
                    // one row per (example, step) on sequences
                    let rows = h.len() / n_in;
                    let input = h.to_shape((rows, n_in)).map(|v| v.into_owned()).expect("dense input rows");
                    let y = input.dot(&w) + &b;
                    let y = y
                        .to_shape((batch, slot.output.size()))
                        .map(|v| v.into_owned())
                        .expect("dense output shape");
                    (y, Cache::Dense { input })
                }
                LayerSpec::Conv1d {
                    filters,
                    kernel_width,
                    stride,
                } => conv_forward(&h, slot, p, filters, kernel_width, stride),
                LayerSpec::Bilstm {
                    units,
                    return_sequences,
                } => lstm_forward(&h, slot, p, units, return_sequences),
                LayerSpec::Batchnorm { momentum, epsilon } => {
                    let st = &self.state[slot.state_offset..slot.state_offset + slot.state_len];
                    let use_batch = mode == Mode::Train && !self.frozen[slot.index];
                    let t = self.bn_updates as f64;
                    let effective = momentum.min(t / (t + 1.0));
                    let (y, cache, update) = batchnorm_forward(&h, slot, p, st, use_batch, effective, epsilon);
                    if let Some(u) = update {
                        tape.state_update.push((slot.state_offset, u));
                    }
                    (y, cache)
                }
                LayerSpec::Dropout { rate } => {
                    if mode == Mode::Train && rate > 0.0 {
                        let keep = 1.0 - rate;
                        let mask = Array2::from_shape_fn(h.raw_dim(), |_| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        let y = &h * &mask;
                        (y, Cache::Dropout { mask })
                    } else {
                        (h, Cache::None)
                    }
                }
                LayerSpec::Activation { activation } => match activation {
                    Activation::Linear => (h, Cache::None),
                    Activation::Relu => {
                        let positive = h.mapv(|v| v > 0.0);
                        let y = h.mapv(|v| v.max(0.0));
                        (y, Cache::Relu { positive })
                    }
                },
                LayerSpec::Flatten => (h, Cache::None),
            };
            h = out;
            tape.caches.push(cache);
        }
        Ok((h, tape))
    }

    /// Gradient of a scalar loss with respect to every trainable parameter,
    /// given the loss gradient at the network output.
    pub fn backward(&self, tape: &Tape, dout: Array2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let mut d = dout;
        for (slot, cache) in self.layout.slots.iter().zip(&tape.caches).rev() {
            let p = &self.params[slot.param_offset..slot.param_offset + slot.param_len];
            let g = &mut grad[slot.param_offset..slot.param_offset + slot.param_len];
            d = match (&self.spec.layers[slot.index], cache) {
                (LayerSpec::Dense { units }, Cache::Dense { input }) => {
                    let n_in = slot.input.channels();
                    let w = ArrayView2::from_shape((n_in, *units), &p[..n_in * units]).expect("shape");
                    let d = d
                        .to_shape((input.nrows(), *units))
                        .map(|v| v.into_owned())
                        .expect("dense grad rows");
                    let gw = input.t().dot(&d);
                    g[..n_in * units].copy_from_slice(&gw.as_standard_layout().as_slice().expect("standard layout"));
                    let gb = d.sum_axis(Axis(0));
                    g[n_in * units..].copy_from_slice(&gb.as_standard_layout().as_slice().expect("standard layout"));
                    d.dot(&w.t())
                        .to_shape((tape.batch, slot.input.size()))
                        .map(|v| v.into_owned())
                        .expect("dense input grad shape")
                }
                (
                    LayerSpec::Conv1d {
                        filters,
                        kernel_width,
                        stride,
                    },
                    Cache::Conv { cols },
                ) => conv_backward(&d, cols, slot, p, g, *filters, *kernel_width, *stride, tape.batch),
                (
                    LayerSpec::Bilstm {
                        units,
                        return_sequences,
                    },
                    Cache::Lstm(caches),
                ) => lstm_backward(&d, caches, slot, p, g, *units, *return_sequences, tape.batch),
                (
                    LayerSpec::Batchnorm { .. },
                    Cache::BatchNorm {
                        xhat,
                        inv_std,
                        batch_stats,
                    },
                ) => batchnorm_backward(&d, xhat, inv_std, *batch_stats, slot, p, g, tape.batch),
                (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => d * mask,
                (LayerSpec::Activation { .. }, Cache::Relu { positive }) => {
                    Zip::from(&mut d).and(positive).for_each(|v, &pos| {
                        if !pos {
                            *v = 0.0;
                        }
                    });
                    d
                }
                (_, Cache::None) => d,
                _ => unreachable!("cache kind matches layer kind"),
            };
        }
        grad
    }

    /// Mean squared error and its parameter gradient on one batch. Returns the
    /// tape's running-statistic updates alongside.
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>, Vec<(usize, Vec<f64>)>), NnError> {
        if y.dim() != (x.nrows(), self.output_size()) {
            return Err(NnError::Input(format!(
                "targets have shape {:?}, expected ({}, {})",
                y.dim(),
                x.nrows(),
                self.output_size()
            )));
        }
        let (pred, tape) = self.forward(x, mode, rng)?;
        let resid = &pred - &y;
        let n = resid.len() as f64;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let dout = resid * (2.0 / n);
        let grad = self.backward(&tape, dout);
        Ok((loss, grad, tape.state_update))
    }

    pub fn commit_state(&mut self, updates: Vec<(usize, Vec<f64>)>) {
        if !updates.is_empty() {
            self.bn_updates += 1;
        }
        for (offset, values) in updates {
            self.state[offset..offset + values.len()].copy_from_slice(&values);
        }
    }

    pub fn mse(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64, NnError> {
        let pred = self.predict_batched(x, 512)?;
        let n = pred.len() as f64;
        Ok(pred.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
    }
}

fn conv_forward(
    h: &Array2<f64>,
    slot: &LayerSlot,
    p: &[f64],
    filters: usize,
    width: usize,
    stride: usize,
) -> (Array2<f64>, Cache) {
    let Shape::Seq { channels, .. } = slot.input else { unreachable!() };
    let Shape::Seq { len: out_len, .. } = slot.output else { unreachable!() };
    let batch = h.nrows();
    let row = width * channels;
    let mut cols = Array2::zeros((batch * out_len, row));
    for b in 0..batch {
        let xb = h.row(b);
        for t in 0..out_len {
            let start = t * stride * channels;
            cols.row_mut(b * out_len + t)
                .assign(&xb.slice(s![start..start + row]));
        }
    }
    let w = ArrayView2::from_shape((row, filters), &p[..row * filters]).expect("conv weight");
    let bias = ArrayView1::from(&p[row * filters..]);
    let y = cols.dot(&w) + &bias;
    let y = y
        .to_shape((batch, out_len * filters)).map(|v| v.into_owned())
        .expect("conv output reshape");
    (y, Cache::Conv { cols })
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    d: &Array2<f64>,
    cols: &Array2<f64>,
    slot: &LayerSlot,
    p: &[f64],
    g: &mut [f64],
    filters: usize,
    width: usize,
    stride: usize,
    batch: usize,
) -> Array2<f64> {
    let Shape::Seq { channels, .. } = slot.input else { unreachable!() };
    let Shape::Seq { len: out_len, .. } = slot.output else { unreachable!() };
    let row = width * channels;
    let dy = d
        .to_shape((batch * out_len, filters))
        .expect("conv grad reshape");
    let gw = cols.t().dot(&dy);
    g[..row * filters].copy_from_slice(&gw.as_standard_layout().as_slice().expect("standard layout"));
    let gb = dy.sum_axis(Axis(0));
    g[row * filters..].copy_from_slice(&gb.as_standard_layout().as_slice().expect("standard layout"));
    let w = ArrayView2::from_shape((row, filters), &p[..row * filters]).expect("conv weight");
    let dcols = dy.dot(&w.t());
    let mut dx = Array2::zeros((batch, slot.input.size()));
    for b in 0..batch {
        let mut xb = dx.row_mut(b);
        for t in 0..out_len {
            let start = t * stride * channels;
            let mut seg = xb.slice_mut(s![start..start + row]);
            seg += &dcols.row(b * out_len + t);
        }
    }
    dx
}

fn lstm_forward(
    h: &Array2<f64>,
    slot: &LayerSlot,
    p: &[f64],
    units: usize,
    return_sequences: bool,
) -> (Array2<f64>, Cache) {
    let Shape::Seq { len, channels } = slot.input else { unreachable!() };
    let batch = h.nrows();
    let per_dir = 4 * units * (channels + units + 1);
    let x = h
        .to_shape((batch * len, channels))
        .expect("lstm input reshape")
        .to_owned();
    let mut out = Array2::zeros((batch, slot.output.size()));
    let mut caches = Vec::with_capacity(2);
    for dir in 0..2 {
        let block = &p[dir * per_dir..(dir + 1) * per_dir];
        let wx = ArrayView2::from_shape((channels, 4 * units), &block[..4 * units * channels]).expect("wx");
        let wh = ArrayView2::from_shape(
            (units, 4 * units),
            &block[4 * units * channels..4 * units * (channels + units)],
        )
        .expect("wh");
        let bias = ArrayView1::from(&block[4 * units * (channels + units)..]);
        let zx = x.dot(&wx) + &bias;
        let zx = zx
            .to_shape((batch, len * 4 * units)).map(|v| v.into_owned())
            .expect("zx reshape");
        let mut hprev = Array2::<f64>::zeros((batch, units));
        let mut cprev = Array2::<f64>::zeros((batch, units));
        let mut steps = Vec::with_capacity(len);
        for k in 0..len {
            let t = if dir == 0 { k } else { len - 1 - k };
            let mut z = zx.slice(s![.., t * 4 * units..(t + 1) * 4 * units]).to_owned();
            z += &hprev.dot(&wh);
            let i = z.slice(s![.., 0..units]).mapv(sigmoid);
            let f = z.slice(s![.., units..2 * units]).mapv(sigmoid);
            let gg = z.slice(s![.., 2 * units..3 * units]).mapv(f64::tanh);
            let o = z.slice(s![.., 3 * units..4 * units]).mapv(sigmoid);
            let c = &f * &cprev + &i * &gg;
            let tanh_c = c.mapv(f64::tanh);
            let hnew = &o * &tanh_c;
            if return_sequences {
                let at = t * 2 * units + dir * units;
                out.slice_mut(s![.., at..at + units]).assign(&hnew);
            }
            steps.push(LstmStep {
                t,
                h_prev: std::mem::replace(&mut hprev, hnew),
                c_prev: std::mem::replace(&mut cprev, c),
                i,
                f,
                g: gg,
                o,
                tanh_c,
            });
        }
        if !return_sequences {
            out.slice_mut(s![.., dir * units..(dir + 1) * units]).assign(&hprev);
        }
        caches.push(LstmCache {
            input: x.clone(),
            steps,
        });
    }
    let caches: [LstmCache; 2] = caches.try_into().ok().expect("two directions");
    (out, Cache::Lstm(Box::new(caches)))
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    d: &Array2<f64>,
    caches: &[LstmCache; 2],
    slot: &LayerSlot,
    p: &[f64],
    g: &mut [f64],
    units: usize,
    return_sequences: bool,
    batch: usize,
) -> Array2<f64> {
    let Shape::Seq { len, channels } = slot.input else { unreachable!() };
    let per_dir = 4 * units * (channels + units + 1);
    let mut dx_flat = Array2::<f64>::zeros((batch * len, channels));
    for (dir, cache) in caches.iter().enumerate() {
        let block = &p[dir * per_dir..(dir + 1) * per_dir];
        let wx = ArrayView2::from_shape((channels, 4 * units), &block[..4 * units * channels]).expect("wx");
        let wh = ArrayView2::from_shape(
            (units, 4 * units),
            &block[4 * units * channels..4 * units * (channels + units)],
        )
        .expect("wh");
        let mut dzx = Array2::<f64>::zeros((batch, len * 4 * units));
        let mut gwh = Array2::<f64>::zeros((units, 4 * units));
        let mut dh = if return_sequences {
            Array2::<f64>::zeros((batch, units))
        } else {
            d.slice(s![.., dir * units..(dir + 1) * units]).to_owned()
        };
        let mut dc = Array2::<f64>::zeros((batch, units));
        for step in cache.steps.iter().rev() {
            if return_sequences {
                let at = step.t * 2 * units + dir * units;
                dh += &d.slice(s![.., at..at + units]);
            }
            // dc accumulates the path through h = o * tanh(c)
            Zip::from(&mut dc)
                .and(&dh)
                .and(&step.o)
                .and(&step.tanh_c)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
            let mut dz = dzx.slice_mut(s![.., step.t * 4 * units..(step.t + 1) * 4 * units]);
            Zip::from(dz.slice_mut(s![.., 0..units]))
                .and(&dc)
                .and(&step.g)
                .and(&step.i)
                .for_each(|z, &dc, &g, &i| *z = dc * g * i * (1.0 - i));
            Zip::from(dz.slice_mut(s![.., units..2 * units]))
                .and(&dc)
                .and(&step.c_prev)
                .and(&step.f)
                .for_each(|z, &dc, &cp, &f| *z = dc * cp * f * (1.0 - f));
            Zip::from(dz.slice_mut(s![.., 2 * units..3 * units]))
                .and(&dc)
                .and(&step.i)
                .and(&step.g)
                .for_each(|z, &dc, &i, &g| *z = dc * i * (1.0 - g * g));
            Zip::from(dz.slice_mut(s![.., 3 * units..4 * units]))
                .and(&dh)
                .and(&step.tanh_c)
                .and(&step.o)
                .for_each(|z, &dh, &tc, &o| *z = dh * tc * o * (1.0 - o));
            let dz = dz.to_owned();
            gwh += &step.h_prev.t().dot(&dz);
            dh = dz.dot(&wh.t());
            dc *= &step.f;
        }
        let dzx = dzx
            .to_shape((batch * len, 4 * units)).map(|v| v.into_owned())
            .expect("dzx reshape");
        let gwx = cache.input.t().dot(&dzx);
        let gb = dzx.sum_axis(Axis(0));
        let gblock = &mut g[dir * per_dir..(dir + 1) * per_dir];
        gblock[..4 * units * channels].copy_from_slice(&gwx.as_standard_layout().as_slice().expect("standard layout"));
        gblock[4 * units * channels..4 * units * (channels + units)]
            .copy_from_slice(&gwh.as_standard_layout().as_slice().expect("standard layout"));
        gblock[4 * units * (channels + units)..].copy_from_slice(&gb.as_standard_layout().as_slice().expect("standard layout"));
        dx_flat += &dzx.dot(&wx.t());
    }
    dx_flat
        .to_shape((batch, len * channels)).map(|v| v.into_owned())
        .expect("lstm grad reshape")
}

type BnForward = (Array2<f64>, Cache, Option<Vec<f64>>);

fn batchnorm_forward(
    h: &Array2<f64>,
    slot: &LayerSlot,
    p: &[f64],
    state: &[f64],
    use_batch: bool,
    momentum: f64,
    epsilon: f64,
) -> BnForward {
    let c = slot.input.channels();
    let batch = h.nrows();
    let rows = h.len() / c;
    let x = h.to_shape((rows, c)).expect("bn reshape");
    let gamma = ArrayView1::from(&p[..c]);
    let beta = ArrayView1::from(&p[c..]);
    let (mean, var, update) = if use_batch {
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let var = x.var_axis(Axis(0), 0.0);
        let mut upd = Vec::with_capacity(2 * c);
        upd.extend((0..c).map(|j| momentum * state[j] + (1.0 - momentum) * mean[j]));
        upd.extend((0..c).map(|j| momentum * state[c + j] + (1.0 - momentum) * var[j]));
        (mean, var, Some(upd))
    } else {
        (
            Array1::from(state[..c].to_vec()),
            Array1::from(state[c..].to_vec()),
            None,
        )
    };
    let inv_std = var.mapv(|v| 1.0 / (v + epsilon).sqrt());
    let xhat = (&x - &mean) * &inv_std;
    let y = &xhat * &gamma + &beta;
    let y = y
        .to_shape((batch, slot.input.size())).map(|v| v.into_owned())
        .expect("bn output reshape");
    (
        y,
        Cache::BatchNorm {
            xhat,
            inv_std,
            batch_stats: use_batch,
        },
        update,
    )
}

#[allow(clippy::too_many_arguments)]
fn batchnorm_backward(
    d: &Array2<f64>,
    xhat: &Array2<f64>,
    inv_std: &Array1<f64>,
    batch_stats: bool,
    slot: &LayerSlot,
    p: &[f64],
    g: &mut [f64],
    batch: usize,
) -> Array2<f64> {
    let c = slot.input.channels();
    let rows = xhat.nrows();
    let dy = d.to_shape((rows, c)).expect("bn grad reshape");
    let gamma = ArrayView1::from(&p[..c]);
    let dgamma = (&dy * xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    g[..c].copy_from_slice(&dgamma.as_standard_layout().as_slice().expect("standard layout"));
    g[c..].copy_from_slice(&dbeta.as_standard_layout().as_slice().expect("standard layout"));
    let dxhat = &dy * &gamma;
    let dx = if batch_stats {
        let n = rows as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n;
        dx -= &sum_dxhat;
        dx -= &(xhat * &sum_dxhat_xhat);
        dx * &(inv_std / n)
    } else {
        dxhat * inv_std
    };
    dx.to_shape((batch, slot.input.size())).map(|v| v.into_owned())
        .expect("bn grad reshape")
}

/// Mutable view of the trainable parameters of layer `index`.
pub fn layer_params_mut<'a>(model: &'a mut TrainedModel, index: usize) -> ArrayViewMut1<'a, f64> {
    let slot = &model.layout.slots[index];
    ArrayViewMut1::from(&mut model.params[slot.param_offset..slot.param_offset + slot.param_len])
}
