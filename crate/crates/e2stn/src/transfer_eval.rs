//! Transfer evaluation: a three-kernel convolutional feature extractor and
//! the content / style / identity losses that score transfer quality.
//!
//! The extractor weights are randomly initialized and frozen by default, so
//! the losses act as a fixed random-projection perceptual metric; gradients
//! then flow only into the transfer module. Joint training of the extractor
//! can be enabled for ablations.

use crate::array::{Array, ParamStore};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::Bindings;
use crate::rng::Rng;
use crate::tensor::{ConvKind, Graph, Tensor};
use crate::transfer::{stylize, TransferHandles};

/// Bound parameters of the evaluation conv stack.
pub struct EvalConvHandles {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub dw_w: Tensor,
    pub dw_b: Tensor,
    pub sep_dw_w: Tensor,
    pub sep_pw_w: Tensor,
    pub sep_pw_b: Tensor,
}

/// Register the evaluation conv parameters under `eval.*`.
pub fn init_eval_params(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    channels: usize,
    rng: &mut Rng,
    frozen: bool,
) {
    let f1 = cfg.eval_f1;
    let d = cfg.eval_depth;
    let f2 = cfg.eval_f2;
    let mut ins = |name: &str, a: Array| store.insert_with_frozen(name, a, frozen);
    ins("eval.conv1_w", Array::xavier_kernel(vec![f1, 1, 1, 3], rng));
    ins("eval.conv1_b", Array::zeros(vec![f1]));
    ins("eval.dw_w", Array::xavier_kernel(vec![f1, d, channels, 1], rng));
    ins("eval.dw_b", Array::zeros(vec![f1 * d]));
    ins("eval.sep_dw_w", Array::xavier_kernel(vec![f1 * d, 1, 1, 3], rng));
    ins("eval.sep_pw_w", Array::xavier_kernel(vec![f2, f1 * d, 1, 1], rng));
    ins("eval.sep_pw_b", Array::zeros(vec![f2]));
}

impl EvalConvHandles {
    pub fn bind(g: &mut Graph, b: &mut Bindings, store: &ParamStore) -> Result<Self> {
        Ok(EvalConvHandles {
            conv1_w: b.bind(g, store, "eval.conv1_w")?,
            conv1_b: b.bind(g, store, "eval.conv1_b")?,
            dw_w: b.bind(g, store, "eval.dw_w")?,
            dw_b: b.bind(g, store, "eval.dw_b")?,
            sep_dw_w: b.bind(g, store, "eval.sep_dw_w")?,
            sep_pw_w: b.bind(g, store, "eval.sep_pw_w")?,
            sep_pw_b: b.bind(g, store, "eval.sep_pw_b")?,
        })
    }
}

/// The three per-layer feature maps of a `C x B` input:
/// layer 1 `(1,3)` band conv -> `[F1, C, B]`;
/// layer 2 `(C,1)` depthwise conv -> `[F1*D, 1, B]`;
/// layer 3 separable `(1,3)` depthwise + pointwise -> `[F2, 1, B]`.
pub fn extract_features(
    g: &mut Graph,
    x: Tensor,
    h: &EvalConvHandles,
    cfg: &ModelConfig,
) -> Result<[Tensor; 3]> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension {
            op: "extract_features",
            shape,
            msg: "expected a channels x bands matrix".into(),
        });
    }
    let (c, bands) = (shape[0], shape[1]);
    let x3 = g.reshape(x, vec![1, c, bands])?;

    let h1 = g.conv2d(x3, h.conv1_w, ConvKind::Standard, (0, 1))?;
    let h1 = g.channel_bias_add(h1, h.conv1_b)?;
    let h1 = if cfg.eval_nonlinearity { g.elu(h1)? } else { h1 };

    let h2 = g.conv2d(h1, h.dw_w, ConvKind::Depthwise, (0, 0))?;
    let h2 = g.channel_bias_add(h2, h.dw_b)?;
    let h2 = if cfg.eval_nonlinearity { g.elu(h2)? } else { h2 };

    let h3 = g.conv2d(h2, h.sep_dw_w, ConvKind::Depthwise, (0, 1))?;
    let h3 = g.conv2d(h3, h.sep_pw_w, ConvKind::Pointwise, (0, 0))?;
    let h3 = g.channel_bias_add(h3, h.sep_pw_b)?;

    Ok([h1, h2, h3])
}

fn term_scale(g: &Graph, cfg: &ModelConfig, feat: Tensor) -> f64 {
    let base = 1.0 / 3.0;
    if cfg.loss_size_normalize {
        base / g.numel(feat) as f64
    } else {
        base
    }
}

/// Mean over layers of the l2 distance between two feature sets.
pub fn perceptual_distance(
    g: &mut Graph,
    feats_a: &[Tensor; 3],
    feats_b: &[Tensor; 3],
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let mut total = g.scalar(0.0)?;
    for (fa, fb) in feats_a.iter().zip(feats_b) {
        let diff = g.sub(*fa, *fb)?;
        let norm = g.l2_norm(diff)?;
        let scaled = g.scalar_mul(norm, term_scale(g, cfg, *fa))?;
        total = g.add(total, scaled)?;
    }
    Ok(total)
}

/// Content loss: mean over the three layers of the l2 distance between the
/// stylized and source feature maps.
pub fn content_loss(
    g: &mut Graph,
    x_hat: Tensor,
    x_src: Tensor,
    h: &EvalConvHandles,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    if g.shape(x_hat) != g.shape(x_src) {
        return Err(Error::ShapeMismatch {
            op: "content_loss",
            lhs: g.shape(x_hat).to_vec(),
            rhs: g.shape(x_src).to_vec(),
        });
    }
    let fa = extract_features(g, x_hat, h, cfg)?;
    let fb = extract_features(g, x_src, h, cfg)?;
    perceptual_distance(g, &fa, &fb, cfg)
}

/// Style loss: per layer, the l2 distances between the per-channel means and
/// per-channel variances of the stylized and target feature maps, pooled over
/// the spatial axes.
pub fn style_loss(
    g: &mut Graph,
    x_hat: Tensor,
    x_tgt: Tensor,
    h: &EvalConvHandles,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    if g.shape(x_hat) != g.shape(x_tgt) {
        return Err(Error::ShapeMismatch {
            op: "style_loss",
            lhs: g.shape(x_hat).to_vec(),
            rhs: g.shape(x_tgt).to_vec(),
        });
    }
    let fa = extract_features(g, x_hat, h, cfg)?;
    let fb = extract_features(g, x_tgt, h, cfg)?;
    let mut total = g.scalar(0.0)?;
    for (a, b) in fa.iter().zip(&fb) {
        let mu_a = g.channel_mean(*a)?;
        let mu_b = g.channel_mean(*b)?;
        let var_a = g.channel_variance(*a)?;
        let var_b = g.channel_variance(*b)?;
        let dmu = g.sub(mu_a, mu_b)?;
        let dvar = g.sub(var_a, var_b)?;
        let nmu = g.l2_norm(dmu)?;
        let nvar = g.l2_norm(dvar)?;
        let sum = g.add(nmu, nvar)?;
        let scale = if cfg.loss_size_normalize {
            1.0 / (3.0 * g.numel(mu_a) as f64)
        } else {
            1.0 / 3.0
        };
        let scaled = g.scalar_mul(sum, scale)?;
        total = g.add(total, scaled)?;
    }
    Ok(total)
}

/// Identity loss: both self-transfer paths feed the same sample to the source
/// and target encoders; the reconstructions should match the originals.
pub fn identity_loss(
    g: &mut Graph,
    x_src: Tensor,
    x_tgt: Tensor,
    transfer: &TransferHandles,
    eval: &EvalConvHandles,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let x_ss = stylize(g, x_src, x_src, transfer, cfg)?;
    let x_tt = stylize(g, x_tgt, x_tgt, transfer, cfg)?;
    let f_ss = extract_features(g, x_ss, eval, cfg)?;
    let f_s = extract_features(g, x_src, eval, cfg)?;
    let f_tt = extract_features(g, x_tt, eval, cfg)?;
    let f_t = extract_features(g, x_tgt, eval, cfg)?;
    let d_s = perceptual_distance(g, &f_ss, &f_s, cfg)?;
    let d_t = perceptual_distance(g, &f_tt, &f_t, cfg)?;
    g.add(d_s, d_t)
}

#[cfg(test)]
mod tests;
