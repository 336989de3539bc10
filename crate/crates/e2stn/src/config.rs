//! Model and training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which vector the Add&Norm residual of an attention sublayer adds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Add the sublayer's query projection. This is the default; it is also
    /// the only shape-valid choice in the encoder, whose raw input has band
    /// width B rather than model width m.
    QueryProjection,
    /// Add the sublayer's input stream (decoder layers only; the encoder
    /// falls back to the query projection).
    SublayerInput,
}

/// Architecture dimensions shared by every module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// model width m of the attention stack
    pub model_dim: usize,
    /// attention head count h (head dim p = m / h)
    pub heads: usize,
    /// FFN hidden width
    pub ffn_dim: usize,
    /// encoder layers per domain
    pub encoder_layers: usize,
    /// transfer decoder layers
    pub decoder_layers: usize,
    /// hidden channels of the CNN reconstruction decoder
    pub cnn_channels: usize,
    /// divide attention logits by sqrt(p); turning this off reproduces the
    /// unscaled dot-product formula
    pub attn_scale: bool,
    pub residual_mode: ResidualMode,
    /// evaluation conv stack: filters of layer 1
    pub eval_f1: usize,
    /// evaluation conv stack: depth multiplier of layer 2
    pub eval_depth: usize,
    /// evaluation conv stack: pointwise filters of layer 3
    pub eval_f2: usize,
    /// ELU between evaluation conv layers 1-2
    pub eval_nonlinearity: bool,
    /// additionally divide each perceptual loss term by its feature count
    pub loss_size_normalize: bool,
    /// Chebyshev polynomial order K
    pub cheb_order: usize,
    /// graph convolution output width F
    pub graph_out: usize,
    /// row-normalize adjacency blocks before taking powers
    pub row_normalize: bool,
    /// use the trainable per-order per-band mixing map; when false the
    /// polynomial terms are summed literally and the output width is B
    pub cheb_mixing: bool,
    /// classifier hidden width
    pub fc_hidden: usize,
    pub layer_norm_eps: f64,
    pub logit_clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_dim: 32,
            heads: 4,
            ffn_dim: 64,
            encoder_layers: 1,
            decoder_layers: 3,
            cnn_channels: 4,
            attn_scale: true,
            residual_mode: ResidualMode::QueryProjection,
            eval_f1: 8,
            eval_depth: 2,
            eval_f2: 16,
            eval_nonlinearity: true,
            loss_size_normalize: false,
            cheb_order: 2,
            graph_out: 16,
            row_normalize: true,
            cheb_mixing: true,
            fc_hidden: 64,
            layer_norm_eps: 1e-5,
            logit_clamp: 40.0,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for fast gradient checks and unit tests.
    pub fn tiny() -> Self {
        ModelConfig {
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            cnn_channels: 2,
            eval_f1: 4,
            eval_depth: 2,
            eval_f2: 8,
            graph_out: 8,
            fc_hidden: 16,
            ..ModelConfig::default()
        }
    }

    pub fn head_dim(&self) -> Result<usize> {
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by head count {}",
                self.model_dim, self.heads
            )));
        }
        Ok(self.model_dim / self.heads)
    }

    pub fn validate(&self) -> Result<()> {
        self.head_dim()?;
        if self.model_dim < 2 {
            return Err(Error::Config("model_dim must be >= 2".into()));
        }
        if self.decoder_layers == 0 || self.encoder_layers == 0 {
            return Err(Error::Config("encoder/decoder layer counts must be >= 1".into()));
        }
        if self.cheb_order < 1 {
            return Err(Error::Config("cheb_order must be >= 1".into()));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Full training configuration, serializable to/from the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// style loss weight
    pub lambda: f64,
    /// identity loss weight
    pub nu: f64,
    /// cross-entropy weight
    pub xi: f64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// train only the discriminative module on labeled source data
    pub ablation: bool,
    /// keep the evaluation conv stack at its random initialization
    pub freeze_eval_conv: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// global gradient-norm clip; 0 disables
    pub grad_clip: f64,
    /// share of source trials held out for validation
    pub val_fraction: f64,
    /// stop after this many epochs without validation improvement; 0 disables
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lambda: 1.0,
            nu: 1.0,
            xi: 1.0,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Constant,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            ablation: false,
            freeze_eval_conv: true,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            val_fraction: 0.1,
            early_stop_patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.lambda < 0.0 || self.nu < 0.0 || self.xi < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
