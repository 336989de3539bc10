//! Style transfer module: per-domain attention encoders, a multi-layer
//! cross-attention transfer decoder, and a CNN decoder that reconstructs the
//! stylized representation back to channel x band shape.
//!
//! The encoders weight electrode channels against each other with multi-head
//! self-attention; the decoder injects target-domain statistics into the
//! source content stream by attending over the target features.

use crate::array::{Array, ParamStore};
use crate::config::{ModelConfig, ResidualMode};
use crate::error::{Error, Result};
use crate::params::Bindings;
use crate::rng::Rng;
use crate::tensor::{ConvKind, Graph, Tensor};

/// Q/K/V/O projections of one attention sublayer.
#[derive(Clone, Copy)]
pub struct AttnHandles {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

#[derive(Clone, Copy)]
pub struct FfnHandles {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Copy)]
pub struct LayerNormHandles {
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub struct EncoderLayerHandles {
    pub attn: AttnHandles,
    pub ffn: FfnHandles,
    pub ln1: LayerNormHandles,
    pub ln2: LayerNormHandles,
}

pub struct DecoderLayerHandles {
    pub self_attn: AttnHandles,
    pub cross_attn: AttnHandles,
    pub ffn: FfnHandles,
    pub ln1: LayerNormHandles,
    pub ln2: LayerNormHandles,
    pub ln3: LayerNormHandles,
}

pub struct CnnDecoderHandles {
    pub proj: Tensor,
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
}

/// All transfer-module parameters bound into one graph.
pub struct TransferHandles {
    pub src_encoder: Vec<EncoderLayerHandles>,
    pub tgt_encoder: Vec<EncoderLayerHandles>,
    pub decoder: Vec<DecoderLayerHandles>,
    pub cnn: CnnDecoderHandles,
}

// ---- parameter registration -------------------------------------------------

fn insert_attn(store: &mut ParamStore, prefix: &str, in_dim: usize, m: usize, rng: &mut Rng) {
    store.insert(&format!("{prefix}.wq"), Array::xavier(in_dim, m, rng));
    store.insert(&format!("{prefix}.wk"), Array::xavier(in_dim, m, rng));
    store.insert(&format!("{prefix}.wv"), Array::xavier(in_dim, m, rng));
    store.insert(&format!("{prefix}.wo"), Array::xavier(m, m, rng));
}

fn insert_ffn(store: &mut ParamStore, prefix: &str, m: usize, d_ff: usize, rng: &mut Rng) {
    store.insert(&format!("{prefix}.ffn_w1"), Array::xavier(m, d_ff, rng));
    store.insert(&format!("{prefix}.ffn_b1"), Array::zeros(vec![d_ff]));
    store.insert(&format!("{prefix}.ffn_w2"), Array::xavier(d_ff, m, rng));
    store.insert(&format!("{prefix}.ffn_b2"), Array::zeros(vec![m]));
}

fn insert_ln(store: &mut ParamStore, prefix: &str, m: usize) {
    store.insert(&format!("{prefix}.gamma"), Array::filled(vec![m], 1.0));
    store.insert(&format!("{prefix}.beta"), Array::zeros(vec![m]));
}

/// Register every transfer-module parameter under `transfer.*`.
pub fn init_transfer_params(store: &mut ParamStore, cfg: &ModelConfig, bands: usize, rng: &mut Rng) {
    let m = cfg.model_dim;
    for side in ["enc_src", "enc_tgt"] {
        for l in 0..cfg.encoder_layers {
            let p = format!("transfer.{side}.l{l}");
            let in_dim = if l == 0 { bands } else { m };
            insert_attn(store, &p, in_dim, m, rng);
            insert_ffn(store, &p, m, cfg.ffn_dim, rng);
            insert_ln(store, &format!("{p}.ln1"), m);
            insert_ln(store, &format!("{p}.ln2"), m);
        }
    }
    for l in 0..cfg.decoder_layers {
        let p = format!("transfer.dec.l{l}");
        insert_attn(store, &format!("{p}.self"), m, m, rng);
        insert_attn(store, &format!("{p}.cross"), m, m, rng);
        insert_ffn(store, &p, m, cfg.ffn_dim, rng);
        insert_ln(store, &format!("{p}.ln1"), m);
        insert_ln(store, &format!("{p}.ln2"), m);
        insert_ln(store, &format!("{p}.ln3"), m);
    }
    store.insert("transfer.cnn.proj", Array::xavier(m, bands, rng));
    store.insert(
        "transfer.cnn.conv1_w",
        Array::xavier_kernel(vec![cfg.cnn_channels, 1, 1, 3], rng),
    );
    store.insert("transfer.cnn.conv1_b", Array::zeros(vec![cfg.cnn_channels]));
    store.insert(
        "transfer.cnn.conv2_w",
        Array::xavier_kernel(vec![1, cfg.cnn_channels, 1, 3], rng),
    );
    store.insert("transfer.cnn.conv2_b", Array::zeros(vec![1]));
}

// ---- binding -----------------------------------------------------------------

fn bind_attn(g: &mut Graph, b: &mut Bindings, store: &ParamStore, prefix: &str) -> Result<AttnHandles> {
    Ok(AttnHandles {
        w_q: b.bind(g, store, &format!("{prefix}.wq"))?,
        w_k: b.bind(g, store, &format!("{prefix}.wk"))?,
        w_v: b.bind(g, store, &format!("{prefix}.wv"))?,
        w_o: b.bind(g, store, &format!("{prefix}.wo"))?,
    })
}

fn bind_ffn(g: &mut Graph, b: &mut Bindings, store: &ParamStore, prefix: &str) -> Result<FfnHandles> {
    Ok(FfnHandles {
        w1: b.bind(g, store, &format!("{prefix}.ffn_w1"))?,
        b1: b.bind(g, store, &format!("{prefix}.ffn_b1"))?,
        w2: b.bind(g, store, &format!("{prefix}.ffn_w2"))?,
        b2: b.bind(g, store, &format!("{prefix}.ffn_b2"))?,
    })
}

fn bind_ln(g: &mut Graph, b: &mut Bindings, store: &ParamStore, prefix: &str) -> Result<LayerNormHandles> {
    Ok(LayerNormHandles {
        gamma: b.bind(g, store, &format!("{prefix}.gamma"))?,
        beta: b.bind(g, store, &format!("{prefix}.beta"))?,
    })
}

fn bind_encoder(
    g: &mut Graph,
    b: &mut Bindings,
    store: &ParamStore,
    side: &str,
    layers: usize,
) -> Result<Vec<EncoderLayerHandles>> {
    (0..layers)
        .map(|l| {
            let p = format!("transfer.{side}.l{l}");
            Ok(EncoderLayerHandles {
                attn: bind_attn(g, b, store, &p)?,
                ffn: bind_ffn(g, b, store, &p)?,
                ln1: bind_ln(g, b, store, &format!("{p}.ln1"))?,
                ln2: bind_ln(g, b, store, &format!("{p}.ln2"))?,
            })
        })
        .collect()
}

impl TransferHandles {
    pub fn bind(g: &mut Graph, b: &mut Bindings, store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let src_encoder = bind_encoder(g, b, store, "enc_src", cfg.encoder_layers)?;
        let tgt_encoder = bind_encoder(g, b, store, "enc_tgt", cfg.encoder_layers)?;
        let decoder = (0..cfg.decoder_layers)
            .map(|l| {
                let p = format!("transfer.dec.l{l}");
                Ok(DecoderLayerHandles {
                    self_attn: bind_attn(g, b, store, &format!("{p}.self"))?,
                    cross_attn: bind_attn(g, b, store, &format!("{p}.cross"))?,
                    ffn: bind_ffn(g, b, store, &p)?,
                    ln1: bind_ln(g, b, store, &format!("{p}.ln1"))?,
                    ln2: bind_ln(g, b, store, &format!("{p}.ln2"))?,
                    ln3: bind_ln(g, b, store, &format!("{p}.ln3"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cnn = CnnDecoderHandles {
            proj: b.bind(g, store, "transfer.cnn.proj")?,
            conv1_w: b.bind(g, store, "transfer.cnn.conv1_w")?,
            conv1_b: b.bind(g, store, "transfer.cnn.conv1_b")?,
            conv2_w: b.bind(g, store, "transfer.cnn.conv2_w")?,
            conv2_b: b.bind(g, store, "transfer.cnn.conv2_b")?,
        };
        Ok(TransferHandles {
            src_encoder,
            tgt_encoder,
            decoder,
            cnn,
        })
    }
}

// ---- forward -----------------------------------------------------------------

/// Scaled dot-product attention over `heads` splits of the last axis;
/// returns the concatenated head outputs (before the output projection) and
/// each head's probability matrix.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: usize,
    scale: bool,
) -> Result<(Tensor, Vec<Tensor>)> {
    let m = *g.shape(q).last().unwrap();
    if heads == 0 || m % heads != 0 {
        return Err(Error::Config(format!(
            "attention width {m} not divisible by {heads} heads"
        )));
    }
    let p = m / heads;
    let factor = if scale { 1.0 / (p as f64).sqrt() } else { 1.0 };
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for i in 0..heads {
        let qi = g.slice_last(q, i * p, p)?;
        let ki = g.slice_last(k, i * p, p)?;
        let vi = g.slice_last(v, i * p, p)?;
        let kt = g.transpose_last_two(ki)?;
        let scores = g.matmul(qi, kt)?;
        let scaled = g.scalar_mul(scores, factor)?;
        let prob = g.softmax_rows(scaled)?;
        let out = g.matmul(prob, vi)?;
        outs.push(out);
        probs.push(prob);
    }
    let concat = g.concat(&outs, 1)?;
    Ok((concat, probs))
}

/// Multi-head attention followed by the output projection.
pub fn attention(
    g: &mut Graph,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    w_o: Tensor,
    heads: usize,
    scale: bool,
) -> Result<Tensor> {
    let (concat, _) = multi_head_attention(g, q, k, v, heads, scale)?;
    g.matmul(concat, w_o)
}

fn ffn_forward(g: &mut Graph, x: Tensor, ffn: &FfnHandles) -> Result<Tensor> {
    let h = g.matmul(x, ffn.w1)?;
    let h = g.bias_add(h, ffn.b1)?;
    let h = g.relu(h)?;
    let out = g.matmul(h, ffn.w2)?;
    g.bias_add(out, ffn.b2)
}

fn add_norm(g: &mut Graph, sublayer: Tensor, residual: Tensor, ln: &LayerNormHandles, eps: f64) -> Result<Tensor> {
    let sum = g.add(sublayer, residual)?;
    g.layer_norm(sum, ln.gamma, ln.beta, eps)
}

/// One encoder layer: project Q/K/V from the input, self-attend, add the
/// query vector back and normalize, then FFN with residual and normalize.
pub fn encoder_layer(
    g: &mut Graph,
    x: Tensor,
    layer: &EncoderLayerHandles,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let q = g.matmul(x, layer.attn.w_q)?;
    let k = g.matmul(x, layer.attn.w_k)?;
    let v = g.matmul(x, layer.attn.w_v)?;
    let msa = attention(g, q, k, v, layer.attn.w_o, cfg.heads, cfg.attn_scale)?;
    // the raw input has band width, so the residual is always the query
    // projection here regardless of the configured mode
    let h1 = add_norm(g, msa, q, &layer.ln1, cfg.layer_norm_eps)?;
    let f = ffn_forward(g, h1, &layer.ffn)?;
    add_norm(g, f, h1, &layer.ln2, cfg.layer_norm_eps)
}

/// Domain encoder: stacked encoder layers mapping `C x B` to `C x m`.
pub fn encode(
    g: &mut Graph,
    x: Tensor,
    encoder: &[EncoderLayerHandles],
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let mut stream = x;
    for layer in encoder {
        stream = encoder_layer(g, stream, layer, cfg)?;
    }
    Ok(stream)
}

/// One decoder layer: self-attention over the content stream, cross-attention
/// with key/value projected from the target features, then FFN; every
/// sublayer is wrapped in Add&Norm.
pub fn decoder_layer(
    g: &mut Graph,
    stream: Tensor,
    target_feats: Tensor,
    layer: &DecoderLayerHandles,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let eps = cfg.layer_norm_eps;

    let q = g.matmul(stream, layer.self_attn.w_q)?;
    let k = g.matmul(stream, layer.self_attn.w_k)?;
    let v = g.matmul(stream, layer.self_attn.w_v)?;
    let msa = attention(g, q, k, v, layer.self_attn.w_o, cfg.heads, cfg.attn_scale)?;
    let resid = match cfg.residual_mode {
        ResidualMode::QueryProjection => q,
        ResidualMode::SublayerInput => stream,
    };
    let s1 = add_norm(g, msa, resid, &layer.ln1, eps)?;

    let qc = g.matmul(s1, layer.cross_attn.w_q)?;
    let kc = g.matmul(target_feats, layer.cross_attn.w_k)?;
    let vc = g.matmul(target_feats, layer.cross_attn.w_v)?;
    let mca = attention(g, qc, kc, vc, layer.cross_attn.w_o, cfg.heads, cfg.attn_scale)?;
    let resid_c = match cfg.residual_mode {
        ResidualMode::QueryProjection => qc,
        ResidualMode::SublayerInput => s1,
    };
    let s2 = add_norm(g, mca, resid_c, &layer.ln2, eps)?;

    let f = ffn_forward(g, s2, &layer.ffn)?;
    add_norm(g, f, s2, &layer.ln3, eps)
}

/// Transfer decoder: the source features enter as the query stream of the
/// first layer; key/value stay derived from the target features throughout.
pub fn decode(
    g: &mut Graph,
    source_feats: Tensor,
    target_feats: Tensor,
    decoder: &[DecoderLayerHandles],
    cfg: &ModelConfig,
) -> Result<Tensor> {
    if g.shape(source_feats) != g.shape(target_feats) {
        return Err(Error::ShapeMismatch {
            op: "decode",
            lhs: g.shape(source_feats).to_vec(),
            rhs: g.shape(target_feats).to_vec(),
        });
    }
    let mut stream = source_feats;
    for layer in decoder {
        stream = decoder_layer(g, stream, target_feats, layer, cfg)?;
    }
    Ok(stream)
}

/// CNN decoder: linear m -> B projection followed by two band-axis
/// convolutions with same padding, restoring the `C x B` shape.
pub fn reconstruct(g: &mut Graph, h: Tensor, cnn: &CnnDecoderHandles) -> Result<Tensor> {
    let shape = g.shape(h).to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension {
            op: "reconstruct",
            shape,
            msg: "expected a 2-D decoder output".into(),
        });
    }
    let channels = shape[0];
    let bands = g.shape(cnn.proj)[1];
    let y0 = g.matmul(h, cnn.proj)?;
    let x3 = g.reshape(y0, vec![1, channels, bands])?;
    let y1 = g.conv2d(x3, cnn.conv1_w, ConvKind::Standard, (0, 1))?;
    let y1 = g.channel_bias_add(y1, cnn.conv1_b)?;
    // ELU keeps the reconstruction path gradient-alive at any init
    let y1 = g.elu(y1)?;
    let y2 = g.conv2d(y1, cnn.conv2_w, ConvKind::Standard, (0, 1))?;
    let y2 = g.channel_bias_add(y2, cnn.conv2_b)?;
    g.reshape(y2, vec![channels, bands])
}

/// Full transfer pipeline: encode both domains, fuse in the decoder,
/// reconstruct. The output keeps the source trial's emotion label.
pub fn stylize(
    g: &mut Graph,
    x_src: Tensor,
    x_tgt: Tensor,
    h: &TransferHandles,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    if g.shape(x_src) != g.shape(x_tgt) {
        return Err(Error::ShapeMismatch {
            op: "stylize",
            lhs: g.shape(x_src).to_vec(),
            rhs: g.shape(x_tgt).to_vec(),
        });
    }
    let src_feats = encode(g, x_src, &h.src_encoder, cfg)?;
    let tgt_feats = encode(g, x_tgt, &h.tgt_encoder, cfg)?;
    let fused = decode(g, src_feats, tgt_feats, &h.decoder, cfg)?;
    reconstruct(g, fused, &h.cnn)
}
