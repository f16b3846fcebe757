//! Forward pass with cached activations and the matching reverse pass.

use super::params::{AgentParams, Dense, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct MlpTrace {
    pub input: Vec<f64>,
    /// Post-activation output of every layer.
    pub acts: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&self.input, Vec::as_slice)
    }
}

fn dense_forward(params: &AgentParams, layer: &Dense, x: &[f64]) -> Vec<f64> {
    let w = params.slice(layer.weight);
    let b = params.slice(layer.bias);
    (0..layer.outputs)
        .map(|o| {
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub(crate) fn mlp_forward(params: &AgentParams, mlp: &Mlp, x: &[f64]) -> MlpTrace {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(mlp.layers.len());
    let last = mlp.layers.len() - 1;
    for (i, layer) in mlp.layers.iter().enumerate() {
        let input = if i == 0 { x } else { &acts[i - 1] };
        let mut y = dense_forward(params, layer, input);
        if i < last || mlp.tanh_output {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(y);
    }
    MlpTrace {
        input: x.to_vec(),
        acts,
    }
}

/// Accumulates parameter gradients into `grad`; returns d(loss)/d(input).
pub(crate) fn mlp_backward(
    params: &AgentParams,
    mlp: &Mlp,
    trace: &MlpTrace,
    d_out: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let last = mlp.layers.len() - 1;
    let mut d_act = d_out.to_vec();
    for i in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[i];
        let act = &trace.acts[i];
        let d_pre: Vec<f64> = if i < last || mlp.tanh_output {
            d_act
                .iter()
                .zip(act)
                .map(|(d, a)| d * (1.0 - a * a))
                .collect()
        } else {
            d_act
        };
        let input = if i == 0 {
            &trace.input
        } else {
            &trace.acts[i - 1]
        };
        let w_off = params.layout.block(layer.weight).offset;
        let b_off = params.layout.block(layer.bias).offset;
        for (o, &dp) in d_pre.iter().enumerate() {
            grad[b_off + o] += dp;
            let row = &mut grad[w_off + o * layer.inputs..w_off + (o + 1) * layer.inputs];
            for (g, &x) in row.iter_mut().zip(input) {
                *g += dp * x;
            }
        }
        let w = params.slice(layer.weight);
        let mut d_in = vec![0.0; layer.inputs];
        for (o, &dp) in d_pre.iter().enumerate() {
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            for (d, &wv) in d_in.iter_mut().zip(row) {
                *d += dp * wv;
            }
        }
        d_act = d_in;
    }
    d_act
}

pub(crate) fn check_frames(params: &AgentParams, frames: &[Vec<f64>]) -> Result<()> {
    let d = params.dims.descriptor_dim;
    if let Some(bad) = frames.iter().position(|f| f.len() != d) {
        return Err(Error::Shape(format!(
            "frame {bad} has width {}, agent expects {d}",
            frames[bad].len()
        )));
    }
    Ok(())
}

pub(crate) fn encode(params: &AgentParams, frames: &[Vec<f64>]) -> Result<Vec<MlpTrace>> {
    check_frames(params, frames)?;
    let enc = &params.layout.topology.encoder;
    Ok(frames.iter().map(|f| mlp_forward(params, enc, f)).collect())
}

#[derive(Debug, Clone)]
pub(crate) struct PoolTrace {
    /// tanh(W_a f_t) per frame.
    pub attention_hidden: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// sum_t alpha_t f_t.
    pub mixed: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn pool(params: &AgentParams, features: &[&[f64]]) -> Result<PoolTrace> {
    if features.is_empty() {
        return Err(Error::EmptySequence);
    }
    let topo = &params.layout.topology;
    let fdim = params.dims.feature_dim;
    if let Some(bad) = features.iter().position(|f| f.len() != fdim) {
        return Err(Error::Shape(format!(
            "feature {bad} has width {}, agent expects {fdim}",
            features[bad].len()
        )));
    }
    let wa = params.slice(topo.attention);
    let v = params.slice(topo.attention_score);
    let adim = v.len();

    let mut attention_hidden = Vec::with_capacity(features.len());
    let mut scores = Vec::with_capacity(features.len());
    for f in features {
        let u: Vec<f64> = (0..adim)
            .map(|a| {
                let row = &wa[a * fdim..(a + 1) * fdim];
                row.iter()
                    .zip(f.iter())
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    .tanh()
            })
            .collect();
        scores.push(u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>());
        attention_hidden.push(u);
    }
    let alpha = softmax(&scores);
    let mut mixed = vec![0.0; fdim];
    for (f, &a) in features.iter().zip(&alpha) {
        for (m, &x) in mixed.iter_mut().zip(f.iter()) {
            *m += a * x;
        }
    }
    let h = dense_forward(params, &topo.projection, &mixed);
    Ok(PoolTrace {
        attention_hidden,
        alpha,
        mixed,
        h,
    })
}

/// Softmax with max subtraction. `-inf` entries get probability zero.
pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub encoder: Vec<MlpTrace>,
    pub pool: PoolTrace,
    pub heads: Vec<MlpTrace>,
    pub value: MlpTrace,
}

impl ForwardTrace {
    pub fn logits(&self) -> Vec<Vec<f64>> {
        self.heads.iter().map(|h| h.output().to_vec()).collect()
    }

    pub fn value(&self) -> f64 {
        self.value.output()[0]
    }
}

pub(crate) fn forward(params: &AgentParams, frames: &[Vec<f64>]) -> Result<ForwardTrace> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let encoder = encode(params, frames)?;
    let feats: Vec<&[f64]> = encoder.iter().map(MlpTrace::output).collect();
    let pool = pool(params, &feats)?;
    let topo = &params.layout.topology;
    let heads = topo
        .heads
        .iter()
        .map(|m| mlp_forward(params, m, &pool.h))
        .collect();
    let value = mlp_forward(params, &topo.value, &pool.h);
    Ok(ForwardTrace {
        encoder,
        pool,
        heads,
        value,
    })
}

/// Reverse pass for one sample given d(loss)/d(logits) per head and
/// d(loss)/d(value). Gradients are added into `grad`.
pub(crate) fn backward(
    params: &AgentParams,
    trace: &ForwardTrace,
    d_logits: &[Vec<f64>],
    d_value: f64,
    grad: &mut [f64],
) {
    let topo = &params.layout.topology;
    let pdim = params.dims.pooled_dim;
    let fdim = params.dims.feature_dim;

    let mut d_h = vec![0.0; pdim];
    for ((mlp, tr), dl) in topo.heads.iter().zip(&trace.heads).zip(d_logits) {
        let d = mlp_backward(params, mlp, tr, dl, grad);
        d_h.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }
    if d_value != 0.0 {
        let d = mlp_backward(params, &topo.value, &trace.value, &[d_value], grad);
        d_h.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }

    // h = W_p mixed + b_p
    let proj = &topo.projection;
    let wp_off = params.layout.block(proj.weight).offset;
    let bp_off = params.layout.block(proj.bias).offset;
    let wp = params.slice(proj.weight);
    let mut d_mixed = vec![0.0; fdim];
    for (o, &dh) in d_h.iter().enumerate() {
        grad[bp_off + o] += dh;
        for i in 0..fdim {
            grad[wp_off + o * fdim + i] += dh * trace.pool.mixed[i];
            d_mixed[i] += dh * wp[o * fdim + i];
        }
    }

    // mixed = sum_t alpha_t f_t, alpha = softmax(e)
    let feats: Vec<&[f64]> = trace.encoder.iter().map(MlpTrace::output).collect();
    let alpha = &trace.pool.alpha;
    let d_alpha: Vec<f64> = feats
        .iter()
        .map(|f| f.iter().zip(&d_mixed).map(|(a, b)| a * b).sum())
        .collect();
    let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let d_score: Vec<f64> = alpha
        .iter()
        .zip(&d_alpha)
        .map(|(a, d)| a * (d - mean))
        .collect();

    // e_t = v . tanh(W_a f_t)
    let wa = params.slice(topo.attention);
    let v = params.slice(topo.attention_score);
    let wa_off = params.layout.block(topo.attention).offset;
    let v_off = params.layout.block(topo.attention_score).offset;
    let adim = v.len();
    for (t, enc) in trace.encoder.iter().enumerate() {
        let f = feats[t];
        let u = &trace.pool.attention_hidden[t];
        let mut d_f: Vec<f64> = d_mixed.iter().map(|d| d * alpha[t]).collect();
        for a in 0..adim {
            grad[v_off + a] += d_score[t] * u[a];
            let d_pre = d_score[t] * v[a] * (1.0 - u[a] * u[a]);
            if d_pre == 0.0 {
                continue;
            }
            for i in 0..fdim {
                grad[wa_off + a * fdim + i] += d_pre * f[i];
                d_f[i] += d_pre * wa[a * fdim + i];
            }
        }
        mlp_backward(params, &topo.encoder, enc, &d_f, grad);
    }
}
