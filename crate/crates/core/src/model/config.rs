use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svq::{QuantizerVariant, DEFAULT_CODEBOOK_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VqPlacement {
    None,
    /// Quantize raw patches (dimension `patch_length`) before embedding.
    PreEncoder,
    /// Quantize encoder output tokens (dimension `d_model`).
    #[default]
    PostEncoder,
}

impl VqPlacement {
    pub fn name(self) -> &'static str {
        match self {
            VqPlacement::None => "none",
            VqPlacement::PreEncoder => "pre_encoder",
            VqPlacement::PostEncoder => "post_encoder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_length: usize,
    pub horizon: usize,
    pub channels: usize,
    pub patch_length: usize,
    pub patch_stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    pub use_ffn_encoder: bool,
    pub use_ffn_decoder: bool,
    pub use_revin: bool,
    /// Learnable RevIN affine parameters; identity affine otherwise.
    pub revin_affine: bool,
    pub vq_placement: VqPlacement,
    pub vq_variant: QuantizerVariant,
    pub codebook_size: usize,
    pub dropout: f64,
    pub norm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_length: 512,
            horizon: 96,
            channels: 1,
            patch_length: 16,
            patch_stride: 8,
            d_model: 64,
            n_heads: 4,
            encoder_layers: 2,
            decoder_layers: 1,
            d_ff: 128,
            use_ffn_encoder: false,
            use_ffn_decoder: false,
            use_revin: true,
            revin_affine: true,
            vq_placement: VqPlacement::PostEncoder,
            vq_variant: QuantizerVariant::default(),
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            dropout: 0.0,
            norm_eps: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// `floor((L − P) / S) + 1`, or 0 when a patch does not fit.
    pub fn n_patches(&self) -> usize {
        if self.patch_length > self.input_length || self.patch_stride == 0 {
            0
        } else {
            (self.input_length - self.patch_length) / self.patch_stride + 1
        }
    }

    pub fn codebook_dim(&self) -> usize {
        match self.vq_placement {
            VqPlacement::PreEncoder => self.patch_length,
            _ => self.d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_length", self.input_length),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("patch_length", self.patch_length),
            ("patch_stride", self.patch_stride),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.patch_length > self.input_length {
            return Err(Error::Config(format!(
                "patch length {} exceeds input length {}",
                self.patch_length, self.input_length
            )));
        }
        if self.use_revin && self.input_length < 2 {
            return Err(Error::Config("RevIN needs input_length >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be > 0".into()));
        }
        if self.vq_placement != VqPlacement::None {
            if self.codebook_size == 0 {
                return Err(Error::Config("codebook_size must be >= 1".into()));
            }
            self.vq_variant.validate(self.codebook_size)?;
        }
        Ok(())
    }

    /// The same configuration with every FFN switched on or off.
    pub fn with_ffn(&self, on: bool) -> Self {
        Self {
            use_ffn_encoder: on,
            use_ffn_decoder: on,
            ..self.clone()
        }
    }

    /// True when the two configurations differ at most in the FFN switches.
    pub fn is_ffn_twin_of(&self, other: &ModelConfig) -> bool {
        self.with_ffn(false) == other.with_ffn(false)
    }

    /// Canonical JSON text (field order fixed by the struct).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
