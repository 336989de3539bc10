//! Discriminative prediction: data-driven per-band graph construction,
//! Chebyshev-polynomial graph convolution, a two-layer FC head with softmax,
//! cross-entropy, and the per-channel contribution export.

use serde::{Deserialize, Serialize};

use crate::array::{Array, ParamStore};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::Bindings;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor};

pub struct ClassifierHandles {
    pub w_s: Tensor,
    pub w_f: Tensor,
    pub bias: Tensor,
    /// per-order per-band mixing map, `(K*B) x F`; absent in literal mode
    pub theta: Option<Tensor>,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

/// Register classifier parameters under `clf.*`.
pub fn init_classifier_params(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    channels: usize,
    bands: usize,
    classes: usize,
    rng: &mut Rng,
) {
    store.insert("clf.w_s", Array::xavier(channels, channels, rng));
    store.insert("clf.w_f", Array::xavier(bands, channels * bands, rng));
    store.insert("clf.bias", Array::zeros(vec![channels, bands]));
    let f = graph_out_width(cfg, bands);
    if cfg.cheb_mixing {
        store.insert(
            "clf.theta",
            Array::xavier(cfg.cheb_order * bands, f, rng),
        );
    }
    store.insert("clf.fc1_w", Array::xavier(channels * f, cfg.fc_hidden, rng));
    store.insert("clf.fc1_b", Array::zeros(vec![cfg.fc_hidden]));
    store.insert("clf.fc2_w", Array::xavier(cfg.fc_hidden, classes, rng));
    store.insert("clf.fc2_b", Array::zeros(vec![classes]));
}

/// Output width F of the graph convolution; the literal (no mixing map)
/// variant sums polynomial orders per band, so its width is B.
pub fn graph_out_width(cfg: &ModelConfig, bands: usize) -> usize {
    if cfg.cheb_mixing {
        cfg.graph_out
    } else {
        bands
    }
}

impl ClassifierHandles {
    pub fn bind(g: &mut Graph, b: &mut Bindings, store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        Ok(ClassifierHandles {
            w_s: b.bind(g, store, "clf.w_s")?,
            w_f: b.bind(g, store, "clf.w_f")?,
            bias: b.bind(g, store, "clf.bias")?,
            theta: if cfg.cheb_mixing {
                Some(b.bind(g, store, "clf.theta")?)
            } else {
                None
            },
            fc1_w: b.bind(g, store, "clf.fc1_w")?,
            fc1_b: b.bind(g, store, "clf.fc1_b")?,
            fc2_w: b.bind(g, store, "clf.fc2_w")?,
            fc2_b: b.bind(g, store, "clf.fc2_b")?,
        })
    }
}

/// Dynamic adjacency: `G = relu((W_s x + bias) W_f)`, a `C x (C*B)` matrix
/// whose column block b (width C) is the band-b adjacency.
pub fn build_graph(g: &mut Graph, x: Tensor, h: &ClassifierHandles) -> Result<Tensor> {
    let t = g.matmul(h.w_s, x)?;
    let t = g.add(t, h.bias)?;
    let t = g.matmul(t, h.w_f)?;
    g.relu(t)
}

/// Chebyshev graph convolution. Per band b, the polynomial terms
/// `G_b^k x[:, b]` for k = 0..K-1 are stacked (k fastest within each band
/// block) and mixed into `C x F` by the trainable map; in literal mode the
/// orders are summed per band instead.
pub fn cheb_conv(
    g: &mut Graph,
    x: Tensor,
    adjacency: Tensor,
    h: &ClassifierHandles,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    if cfg.cheb_order < 1 {
        return Err(Error::Config("cheb_order must be >= 1".into()));
    }
    let shape = g.shape(x).to_vec();
    let (c, bands) = (shape[0], shape[1]);
    if g.shape(adjacency) != [c, c * bands] {
        return Err(Error::ShapeMismatch {
            op: "cheb_conv",
            lhs: g.shape(adjacency).to_vec(),
            rhs: vec![c, c * bands],
        });
    }
    let mut columns = Vec::with_capacity(bands * cfg.cheb_order);
    for band in 0..bands {
        let mut g_b = g.slice_last(adjacency, band * c, c)?;
        if cfg.row_normalize {
            g_b = g.normalize_rows_l1(g_b, 1e-8)?;
        }
        let x_b = g.slice_last(x, band, 1)?;
        let mut term = x_b;
        let mut band_terms = vec![term];
        for _ in 1..cfg.cheb_order {
            term = g.matmul(g_b, term)?;
            band_terms.push(term);
        }
        if cfg.cheb_mixing {
            columns.extend(band_terms);
        } else {
            let mut acc = band_terms[0];
            for t in &band_terms[1..] {
                acc = g.add(acc, *t)?;
            }
            columns.push(acc);
        }
    }
    let stacked = g.concat(&columns, 1)?;
    match h.theta {
        Some(theta) => g.matmul(stacked, theta),
        None => Ok(stacked),
    }
}

/// Graph features for one trial: build the dynamic graph and convolve.
pub fn advanced_features(
    g: &mut Graph,
    x: Tensor,
    h: &ClassifierHandles,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let adjacency = build_graph(g, x, h)?;
    cheb_conv(g, x, adjacency, h, cfg)
}

/// Class probabilities for one trial: flatten the graph features through the
/// two FC layers and a clamped softmax.
pub fn predict(g: &mut Graph, x: Tensor, h: &ClassifierHandles, cfg: &ModelConfig) -> Result<Tensor> {
    let feats = advanced_features(g, x, h, cfg)?;
    let n = g.numel(feats);
    let flat = g.reshape(feats, vec![1, n])?;
    let z1 = g.matmul(flat, h.fc1_w)?;
    let z1 = g.bias_add(z1, h.fc1_b)?;
    let z1 = g.elu(z1)?;
    let z2 = g.matmul(z1, h.fc2_w)?;
    let z2 = g.bias_add(z2, h.fc2_b)?;
    let clamped = g.clamp(z2, -cfg.logit_clamp, cfg.logit_clamp)?;
    g.softmax_rows(clamped)
}

/// Cross-entropy of a probability row against a one-hot label;
/// probabilities are clamped at 1e-12 before the log.
pub fn cross_entropy(g: &mut Graph, probs: Tensor, one_hot: &[f64]) -> Result<Tensor> {
    if one_hot.len() != g.numel(probs) {
        return Err(Error::Validation(format!(
            "label width {} != prediction width {}",
            one_hot.len(),
            g.numel(probs)
        )));
    }
    let ones = one_hot.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || one_hot.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation(format!("label is not one-hot: {one_hot:?}")));
    }
    let y = g.constant(vec![1, one_hot.len()], one_hot.to_vec())?;
    let logp = g.log_eps(probs, 1e-12)?;
    let picked = g.mul(logp, y)?;
    let total = g.sum_all(picked)?;
    g.scalar_mul(total, -1.0)
}

pub fn one_hot(label: u16, classes: usize) -> Result<Vec<f64>> {
    if (label as usize) >= classes {
        return Err(Error::Validation(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let mut v = vec![0.0; classes];
    v[label as usize] = 1.0;
    Ok(v)
}

/// Per-channel contribution map emitted for topographic plotting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContributionMap {
    pub channels: Vec<String>,
    pub scores: Vec<f64>,
}

/// Mean absolute graph-feature activation per channel over a sample set,
/// min-max normalized to [0, 1]. When every channel scores the same, all
/// normalize to 1.0.
pub fn export_contribution(feature_maps: &[Array], channel_names: &[String]) -> Result<ContributionMap> {
    let first = feature_maps.first().ok_or_else(|| {
        Error::Validation("contribution export needs at least one sample".into())
    })?;
    if first.shape.len() != 2 || first.shape[0] != channel_names.len() {
        return Err(Error::Dimension {
            op: "export_contribution",
            shape: first.shape.clone(),
            msg: format!("expected [{} x F] feature maps", channel_names.len()),
        });
    }
    let (c, f) = (first.shape[0], first.shape[1]);
    let mut means = vec![0.0; c];
    for map in feature_maps {
        if map.shape != first.shape {
            return Err(Error::ShapeMismatch {
                op: "export_contribution",
                lhs: first.shape.clone(),
                rhs: map.shape.clone(),
            });
        }
        for ch in 0..c {
            means[ch] += map.data[ch * f..(ch + 1) * f]
                .iter()
                .map(|v| v.abs())
                .sum::<f64>();
        }
    }
    let denom = (f * feature_maps.len()) as f64;
    for m in means.iter_mut() {
        *m /= denom;
    }
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scores = if hi - lo < 1e-15 {
        vec![1.0; c]
    } else {
        means.iter().map(|m| (m - lo) / (hi - lo)).collect()
    };
    Ok(ContributionMap {
        channels: channel_names.to_vec(),
        scores,
    })
}
