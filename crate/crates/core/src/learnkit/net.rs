use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{NumArray, Real, RngStream};

use super::{LayerSpec, Network, ParamSet};

/// Train mode samples fresh dropout masks; infer mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug)]
enum Cache<F> {
    Linear { input: Vec<F> },
    Relu { output: Vec<F> },
    Sigmoid { output: Vec<F> },
    Dropout { mask: Option<Vec<F>> },
    Conv { cols: Vec<F> },
    AvgPool,
    MaxPool { argmax: Vec<u32> },
    Concat { branches: Vec<Cache<F>>, channels: Vec<usize> },
    Flatten,
}

/// Activations cached by [`forward`] for a single [`backward`] call.
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    caches: Vec<Cache<F>>,
    shapes: Vec<Vec<usize>>,
    batch: usize,
    params_version: u64,
    net_name: String,
    mode: Mode,
}

impl<F: Real> ForwardTrace<F> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Relu on/off bits and channel-max winners, in layer order. Two forwards
    /// with equal patterns lie on the same smooth piece of the network.
    pub fn activation_pattern(&self) -> Vec<u32> {
        fn walk<F: Real>(cache: &Cache<F>, out: &mut Vec<u32>) {
            match cache {
                Cache::Relu { output } => out.extend(output.iter().map(|&y| u32::from(y > F::zero()))),
                Cache::MaxPool { argmax } => out.extend_from_slice(argmax),
                Cache::Concat { branches, .. } => branches.iter().for_each(|b| walk(b, out)),
                _ => {}
            }
        }
        let mut out = Vec::new();
        self.caches.iter().for_each(|c| walk(c, &mut out));
        out
    }
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn im2col<F: Real>(x: &[F], c: usize, h: usize, w: usize, k: usize, p: usize, cols: &mut [F]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let lo = p.saturating_sub(kj);
                let hi = (w + p).saturating_sub(kj).min(w);
                for oh in 0..h {
                    let ih = oh as isize + ki as isize - p as isize;
                    let line = &mut dst[oh * w..(oh + 1) * w];
                    if ih < 0 || ih >= h as isize || lo >= hi {
                        line.fill(F::zero());
                        continue;
                    }
                    let src_row = &plane[ih as usize * w..(ih as usize + 1) * w];
                    line[..lo].fill(F::zero());
                    line[hi..].fill(F::zero());
                    let shift = lo + kj - p;
                    line[lo..hi].copy_from_slice(&src_row[shift..shift + (hi - lo)]);
                }
            }
        }
    }
}

fn col2im<F: Real>(cols: &[F], c: usize, h: usize, w: usize, k: usize, p: usize, dx: &mut [F]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let lo = p.saturating_sub(kj);
                let hi = (w + p).saturating_sub(kj).min(w);
                if lo >= hi {
                    continue;
                }
                for oh in 0..h {
                    let ih = oh as isize + ki as isize - p as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    let shift = lo + kj - p;
                    for (d, &s) in dst_row[shift..shift + (hi - lo)]
                        .iter_mut()
                        .zip(&src[oh * w + lo..oh * w + hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

struct Ctx<'a, F> {
    net: &'a Network,
    params: &'a ParamSet<F>,
    mode: Mode,
    keep: bool,
}

fn layer_forward<F: Real>(
    ctx: &Ctx<'_, F>,
    index: usize,
    layer: &LayerSpec,
    x: &[F],
    in_shape: &[usize],
    out_shape: &[usize],
    batch: usize,
    rng: &mut RngStream,
) -> Result<(Vec<F>, Option<Cache<F>>)> {
    let keep = ctx.keep;
    Ok(match *layer {
        LayerSpec::Linear { inputs, outputs } => {
            let w = ctx.params.get(&ctx.net.weight_key(index))?.data();
            let b = ctx.params.get(&ctx.net.bias_key(index))?.data();
            let mut y = Vec::with_capacity(batch * outputs);
            for _ in 0..batch {
                y.extend_from_slice(b);
            }
            F::gemm(batch, inputs, outputs, F::one(), x, (inputs, 1), w, (1, inputs), F::one(), &mut y, (outputs, 1));
            (y, keep.then(|| Cache::Linear { input: x.to_vec() }))
        }
        LayerSpec::Relu => {
            let y: Vec<F> = x.iter().map(|&v| v.max(F::zero())).collect();
            let cache = keep.then(|| Cache::Relu { output: y.clone() });
            (y, cache)
        }
        LayerSpec::Sigmoid => {
            let y: Vec<F> = x.iter().map(|&v| sigmoid(v)).collect();
            let cache = keep.then(|| Cache::Sigmoid { output: y.clone() });
            (y, cache)
        }
        LayerSpec::Dropout { rate } => {
            if ctx.mode == Mode::Train && rate > 0.0 {
                let scale = F::lit(1.0 / (1.0 - rate));
                let mask: Vec<F> = (0..x.len())
                    .map(|_| if rng.uniform() < rate { F::zero() } else { scale })
                    .collect();
                let y = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                (y, keep.then(|| Cache::Dropout { mask: Some(mask) }))
            } else {
                (x.to_vec(), keep.then_some(Cache::Dropout { mask: None }))
            }
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
        } => {
            let w = ctx.params.get(&ctx.net.weight_key(index))?.data();
            let b = ctx.params.get(&ctx.net.bias_key(index))?.data();
            let (h, wd) = (in_shape[1], in_shape[2]);
            let hw = h * wd;
            let ckk = in_channels * kernel * kernel;
            let in_len = in_channels * hw;
            let out_len = out_channels * hw;
            let mut y = vec![F::zero(); batch * out_len];
            let mut cols = vec![F::zero(); if keep { batch * ckk * hw } else { ckk * hw }];
            for n in 0..batch {
                let col_n = if keep {
                    &mut cols[n * ckk * hw..(n + 1) * ckk * hw]
                } else {
                    &mut cols[..]
                };
                im2col(&x[n * in_len..(n + 1) * in_len], in_channels, h, wd, kernel, padding, col_n);
                let y_n = &mut y[n * out_len..(n + 1) * out_len];
                for (o, &bias) in b.iter().enumerate() {
                    y_n[o * hw..(o + 1) * hw].fill(bias);
                }
                F::gemm(out_channels, ckk, hw, F::one(), w, (ckk, 1), col_n, (hw, 1), F::one(), y_n, (hw, 1));
            }
            (y, keep.then_some(Cache::Conv { cols }))
        }
        LayerSpec::ChannelAvgPool => {
            let (c, hw) = (in_shape[0], in_shape[1] * in_shape[2]);
            let inv = F::lit(1.0 / c as f64);
            let mut y = vec![F::zero(); batch * hw];
            for n in 0..batch {
                let y_n = &mut y[n * hw..(n + 1) * hw];
                for ci in 0..c {
                    let plane = &x[(n * c + ci) * hw..(n * c + ci + 1) * hw];
                    y_n.iter_mut().zip(plane).for_each(|(a, &v)| *a += v);
                }
                y_n.iter_mut().for_each(|a| *a *= inv);
            }
            (y, keep.then_some(Cache::AvgPool))
        }
        LayerSpec::ChannelMaxPool => {
            let (c, hw) = (in_shape[0], in_shape[1] * in_shape[2]);
            let mut y = vec![F::zero(); batch * hw];
            let mut argmax = vec![0u32; batch * hw];
            for n in 0..batch {
                for i in 0..hw {
                    let mut best = x[n * c * hw + i];
                    let mut arg = 0;
                    for ci in 1..c {
                        let v = x[(n * c + ci) * hw + i];
                        if v > best {
                            best = v;
                            arg = ci;
                        }
                    }
                    y[n * hw + i] = best;
                    argmax[n * hw + i] = arg as u32;
                }
            }
            (y, keep.then_some(Cache::MaxPool { argmax }))
        }
        LayerSpec::ConcatChannels { ref branches } => {
            let hw = out_shape[1] * out_shape[2];
            let total_c = out_shape[0];
            let mut y = vec![F::zero(); batch * total_c * hw];
            let mut caches = Vec::with_capacity(branches.len());
            let mut channels = Vec::with_capacity(branches.len());
            let mut offset = 0;
            for branch in branches {
                let b_shape = branch.output_shape(in_shape, &ctx.net.layer_context(index))?;
                let (b_out, b_cache) = layer_forward(ctx, index, branch, x, in_shape, &b_shape, batch, rng)?;
                let bc = b_shape[0];
                for n in 0..batch {
                    let dst = &mut y[(n * total_c + offset) * hw..(n * total_c + offset + bc) * hw];
                    dst.copy_from_slice(&b_out[n * bc * hw..(n + 1) * bc * hw]);
                }
                offset += bc;
                channels.push(bc);
                if let Some(c) = b_cache {
                    caches.push(c);
                }
            }
            (y, keep.then_some(Cache::Concat { branches: caches, channels }))
        }
        LayerSpec::Flatten => (x.to_vec(), keep.then_some(Cache::Flatten)),
    })
}

fn run<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    input: &NumArray<F>,
    mode: Mode,
    rng: &mut RngStream,
    keep: bool,
) -> Result<(NumArray<F>, Option<ForwardTrace<F>>)> {
    let shapes = net.shapes()?;
    let in_shape = input.shape();
    if in_shape.is_empty() || in_shape[1..] != shapes[0][..] {
        return Err(Error::shape(
            format!("{} input", net.name),
            format!("expected [N, {:?}], got {in_shape:?}", shapes[0]),
        ));
    }
    let batch = in_shape[0];
    let ctx = Ctx {
        net,
        params,
        mode,
        keep,
    };
    let mut x = input.data().to_vec();
    let mut caches = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let (y, cache) = layer_forward(&ctx, i, layer, &x, &shapes[i], &shapes[i + 1], batch, rng)?;
        if let Some(c) = cache {
            caches.push(c);
        }
        x = y;
    }
    let mut out_shape = vec![batch];
    out_shape.extend_from_slice(shapes.last().expect("nonempty"));
    let output = NumArray::new(out_shape, x)?;
    let trace = keep.then(|| ForwardTrace {
        caches,
        shapes,
        batch,
        params_version: params.version(),
        net_name: net.name.clone(),
        mode,
    });
    Ok((output, trace))
}

/// Batched forward pass recording the trace needed by [`backward`].
///
/// `input` has shape `[N, ..net.input_shape]`.
pub fn forward<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    input: &NumArray<F>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(NumArray<F>, ForwardTrace<F>)> {
    let (out, trace) = run(net, params, input, mode, rng, true)?;
    Ok((out, trace.expect("trace kept")))
}

/// Forward pass without recording a trace.
pub fn forward_untraced<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    input: &NumArray<F>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<NumArray<F>> {
    Ok(run(net, params, input, mode, rng, false)?.0)
}

/// Deterministic inference-mode forward.
pub fn infer<F: Real>(net: &Network, params: &ParamSet<F>, input: &NumArray<F>) -> Result<NumArray<F>> {
    let mut rng = RngStream::new(0, 0);
    forward_untraced(net, params, input, Mode::Infer, &mut rng)
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    grads: &mut ParamSet<F>,
    index: usize,
    layer: &LayerSpec,
    cache: &Cache<F>,
    dy: &[F],
    in_shape: &[usize],
    batch: usize,
) -> Result<Vec<F>> {
    let stale = || Error::InvalidState(format!("trace cache does not match layer {}", net.layer_context(index)));
    Ok(match (layer, cache) {
        (&LayerSpec::Linear { inputs, outputs }, Cache::Linear { input }) => {
            let w = params.get(&net.weight_key(index))?.data();
            {
                let dw = grads.get_mut(&net.weight_key(index))?.data_mut();
                F::gemm(outputs, batch, inputs, F::one(), dy, (1, outputs), input, (inputs, 1), F::one(), dw, (inputs, 1));
            }
            {
                let db = grads.get_mut(&net.bias_key(index))?.data_mut();
                for row in dy.chunks_exact(outputs) {
                    db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                }
            }
            let mut dx = vec![F::zero(); batch * inputs];
            F::gemm(batch, outputs, inputs, F::one(), dy, (outputs, 1), w, (inputs, 1), F::zero(), &mut dx, (inputs, 1));
            dx
        }
        (LayerSpec::Relu, Cache::Relu { output }) => dy
            .iter()
            .zip(output)
            .map(|(&g, &y)| if y > F::zero() { g } else { F::zero() })
            .collect(),
        (LayerSpec::Sigmoid, Cache::Sigmoid { output }) => dy
            .iter()
            .zip(output)
            .map(|(&g, &y)| g * y * (F::one() - y))
            .collect(),
        (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => match mask {
            Some(m) => dy.iter().zip(m).map(|(&g, &s)| g * s).collect(),
            None => dy.to_vec(),
        },
        (
            &LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            },
            Cache::Conv { cols },
        ) => {
            let w = params.get(&net.weight_key(index))?.data();
            let (h, wd) = (in_shape[1], in_shape[2]);
            let hw = h * wd;
            let ckk = in_channels * kernel * kernel;
            let out_len = out_channels * hw;
            let in_len = in_channels * hw;
            let mut dx = vec![F::zero(); batch * in_len];
            let mut dcols = vec![F::zero(); ckk * hw];
            let mut dw = grads.get(&net.weight_key(index))?.data().to_vec();
            let mut db = grads.get(&net.bias_key(index))?.data().to_vec();
            for n in 0..batch {
                let dy_n = &dy[n * out_len..(n + 1) * out_len];
                let col_n = &cols[n * ckk * hw..(n + 1) * ckk * hw];
                F::gemm(out_channels, hw, ckk, F::one(), dy_n, (hw, 1), col_n, (1, hw), F::one(), &mut dw, (ckk, 1));
                for (o, acc) in db.iter_mut().enumerate() {
                    *acc += dy_n[o * hw..(o + 1) * hw].iter().copied().sum::<F>();
                }
                F::gemm(ckk, out_channels, hw, F::one(), w, (1, ckk), dy_n, (hw, 1), F::zero(), &mut dcols, (hw, 1));
                col2im(&dcols, in_channels, h, wd, kernel, padding, &mut dx[n * in_len..(n + 1) * in_len]);
            }
            grads.get_mut(&net.weight_key(index))?.data_mut().copy_from_slice(&dw);
            grads.get_mut(&net.bias_key(index))?.data_mut().copy_from_slice(&db);
            dx
        }
        (LayerSpec::ChannelAvgPool, Cache::AvgPool) => {
            let (c, hw) = (in_shape[0], in_shape[1] * in_shape[2]);
            let inv = F::lit(1.0 / c as f64);
            let mut dx = vec![F::zero(); batch * c * hw];
            for n in 0..batch {
                let g = &dy[n * hw..(n + 1) * hw];
                for ci in 0..c {
                    let plane = &mut dx[(n * c + ci) * hw..(n * c + ci + 1) * hw];
                    plane.iter_mut().zip(g).for_each(|(d, &v)| *d = v * inv);
                }
            }
            dx
        }
        (LayerSpec::ChannelMaxPool, Cache::MaxPool { argmax }) => {
            let (c, hw) = (in_shape[0], in_shape[1] * in_shape[2]);
            let mut dx = vec![F::zero(); batch * c * hw];
            for n in 0..batch {
                for i in 0..hw {
                    let ci = argmax[n * hw + i] as usize;
                    dx[(n * c + ci) * hw + i] = dy[n * hw + i];
                }
            }
            dx
        }
        (LayerSpec::ConcatChannels { branches }, Cache::Concat { branches: caches, channels }) => {
            let hw = in_shape[1] * in_shape[2];
            let total_c: usize = channels.iter().sum();
            let mut dx = vec![F::zero(); batch * in_shape[0] * hw];
            let mut offset = 0;
            for ((branch, b_cache), &bc) in branches.iter().zip(caches).zip(channels) {
                let mut dy_b = Vec::with_capacity(batch * bc * hw);
                for n in 0..batch {
                    dy_b.extend_from_slice(&dy[(n * total_c + offset) * hw..(n * total_c + offset + bc) * hw]);
                }
                let dx_b = layer_backward(net, params, grads, index, branch, b_cache, &dy_b, in_shape, batch)?;
                dx.iter_mut().zip(&dx_b).for_each(|(a, &g)| *a += g);
                offset += bc;
            }
            dx
        }
        (LayerSpec::Flatten, Cache::Flatten) => dy.to_vec(),
        _ => return Err(stale()),
    })
}

/// Reverse-mode gradients for a trace recorded by [`forward`].
///
/// Returns parameter gradients (keys of `net` only) and the gradient with
/// respect to the forward input.
pub fn backward<F: Real>(
    net: &Network,
    params: &ParamSet<F>,
    trace: ForwardTrace<F>,
    upstream: &NumArray<F>,
) -> Result<(ParamSet<F>, NumArray<F>)> {
    if trace.params_version != params.version() || trace.net_name != net.name {
        return Err(Error::InvalidState(format!(
            "stale trace for {}: parameters changed since the forward pass",
            net.name
        )));
    }
    if trace.caches.len() != net.layers.len() {
        return Err(Error::InvalidState(format!("trace does not belong to {}", net.name)));
    }
    let mut out_shape = vec![trace.batch];
    out_shape.extend_from_slice(trace.shapes.last().expect("nonempty"));
    if upstream.shape() != out_shape.as_slice() {
        return Err(Error::shape(
            format!("{} upstream gradient", net.name),
            format!("expected {out_shape:?}, got {:?}", upstream.shape()),
        ));
    }
    let mut grads = ParamSet::new();
    for (key, shape) in net.param_specs() {
        grads.insert(key, NumArray::zeros(shape));
    }
    let mut dy = upstream.data().to_vec();
    for (i, (layer, cache)) in net.layers.iter().zip(&trace.caches).enumerate().rev() {
        dy = layer_backward(net, params, &mut grads, i, layer, cache, &dy, &trace.shapes[i], trace.batch)?;
    }
    let mut in_shape = vec![trace.batch];
    in_shape.extend_from_slice(&trace.shapes[0]);
    Ok((grads, NumArray::new(in_shape, dy)?))
}
