//! Model architecture description, serializable so a checkpoint can pin the
//! exact configuration it was trained with.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ModelResult};
use crate::head::{AssignmentSpec, HeadAssignment};

/// What the model consumes and how it becomes tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InputSpec {
    /// Sequences already in model width; tokens enter the stack directly
    /// (plus positional embeddings).
    SyntheticTokens { seq_len: usize },
    /// Square images patchified into `(image_size/patch_size)^2` tokens and
    /// linearly embedded.
    Image { image_size: usize, patch_size: usize, channels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub heads: usize,
    pub dim: usize,
    /// Per-head width; defaults to `dim / heads`.
    #[serde(default)]
    pub head_dim: Option<usize>,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub input: InputSpec,
    #[serde(default)]
    pub drop_path_p: f64,
    #[serde(default)]
    pub qk_norm: bool,
    pub head_assignment: AssignmentSpec,
}

fn default_mlp_ratio() -> usize {
    4
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.head_dim.unwrap_or(self.dim / self.heads.max(1))
    }

    /// Token count the model is built for.
    pub fn seq_len(&self) -> usize {
        match &self.input {
            InputSpec::SyntheticTokens { seq_len } => *seq_len,
            InputSpec::Image { image_size, patch_size, .. } => {
                let per_side = image_size / patch_size;
                per_side * per_side
            }
        }
    }

    /// Channel count of a raw input token before any embedding.
    pub fn input_token_dim(&self) -> usize {
        match &self.input {
            InputSpec::SyntheticTokens { .. } => self.dim,
            InputSpec::Image { patch_size, channels, .. } => patch_size * patch_size * channels,
        }
    }

    pub fn uses_patch_embedding(&self) -> bool {
        matches!(self.input, InputSpec::Image { .. })
    }

    pub fn assignment(&self) -> ModelResult<HeadAssignment> {
        self.head_assignment.expand(self.depth, self.heads)
    }

    pub fn validate(&self) -> ModelResult<()> {
        if self.num_classes < 2 {
            return Err(ModelError::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.heads == 0 || self.dim == 0 {
            return Err(ModelError::Config("heads and dim must be positive".into()));
        }
        if self.head_dim.is_none() && self.dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "dim {} not divisible by heads {} and no explicit head_dim",
                self.dim, self.heads
            )));
        }
        if self.head_dim() == 0 {
            return Err(ModelError::Config("head_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_path_p) {
            return Err(ModelError::Config(format!(
                "drop_path_p must be in [0, 1), got {}",
                self.drop_path_p
            )));
        }
        if let InputSpec::Image { image_size, patch_size, channels } = &self.input {
            if *patch_size == 0 || *channels == 0 {
                return Err(ModelError::Config("patch_size and channels must be positive".into()));
            }
            if image_size % patch_size != 0 {
                return Err(ModelError::Config(format!(
                    "image_size {image_size} not divisible by patch_size {patch_size}"
                )));
            }
        }
        if self.seq_len() == 0 {
            return Err(ModelError::Config("seq_len must be positive".into()));
        }
        self.assignment().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            depth: 2,
            heads: 2,
            dim: 8,
            head_dim: None,
            mlp_ratio: 4,
            num_classes: 3,
            input: InputSpec::SyntheticTokens { seq_len: 4 },
            drop_path_p: 0.0,
            qk_norm: false,
            head_assignment: AssignmentSpec::Uniform { laplacian_heads: 1 },
        }
    }

    #[test]
    fn defaults_and_derived_sizes() {
        let cfg = base();
        cfg.validate().unwrap();
        assert_eq!(cfg.head_dim(), 4);
        assert_eq!(cfg.seq_len(), 4);
        assert_eq!(cfg.input_token_dim(), 8);
    }

    #[test]
    fn image_patch_counts() {
        let mut cfg = base();
        cfg.input = InputSpec::Image { image_size: 32, patch_size: 4, channels: 3 };
        cfg.validate().unwrap();
        assert_eq!(cfg.seq_len(), 64);
        assert_eq!(cfg.input_token_dim(), 48);

        cfg.input = InputSpec::Image { image_size: 224, patch_size: 16, channels: 3 };
        assert_eq!(cfg.seq_len(), 196);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = base();
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = base();
        cfg.input = InputSpec::Image { image_size: 30, patch_size: 4, channels: 1 };
        assert!(cfg.validate().is_err());

        let mut cfg = base();
        cfg.drop_path_p = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = base();
        cfg.head_assignment = AssignmentSpec::Uniform { laplacian_heads: 3 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = base();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
