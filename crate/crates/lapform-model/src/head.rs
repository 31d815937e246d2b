//! Head kinds and per-layer head assignments. An assignment is the full
//! description of which heads compute a contextual average (standard) and
//! which compute the deviation from it (Laplacian).

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ModelResult};

/// What a single attention head computes from its shared (P, V):
/// `Standard` returns the attention-weighted average `P V`, `Laplacian`
/// returns the deviation `V - P V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Standard,
    Laplacian,
}

/// Per-layer head kinds: `per_layer[l][j]` is head `j` of layer `l`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadAssignment {
    pub per_layer: Vec<Vec<HeadKind>>,
}

impl HeadAssignment {
    /// Same `k` Laplacian heads in every layer (heads `0..k`), the remaining
    /// `h - k` standard.
    pub fn uniform(depth: usize, heads: usize, laplacian: usize) -> ModelResult<Self> {
        if laplacian > heads {
            return Err(ModelError::Config(format!(
                "requested {laplacian} Laplacian heads with only {heads} heads per layer"
            )));
        }
        let layer: Vec<HeadKind> = (0..heads)
            .map(|j| if j < laplacian { HeadKind::Laplacian } else { HeadKind::Standard })
            .collect();
        Ok(Self { per_layer: vec![layer; depth] })
    }

    /// All-Laplacian layers for the first half of the stack (rounded up),
    /// all-standard for the rest.
    pub fn mix_depth(depth: usize, heads: usize) -> Self {
        let cut = depth.div_ceil(2);
        let per_layer = (0..depth)
            .map(|l| vec![if l < cut { HeadKind::Laplacian } else { HeadKind::Standard }; heads])
            .collect();
        Self { per_layer }
    }

    /// Alternating all-Laplacian / all-standard layers; `laplacian_first`
    /// picks which kind layer 0 uses.
    pub fn interleave(depth: usize, heads: usize, laplacian_first: bool) -> Self {
        let per_layer = (0..depth)
            .map(|l| {
                let laplacian = (l % 2 == 0) == laplacian_first;
                vec![if laplacian { HeadKind::Laplacian } else { HeadKind::Standard }; heads]
            })
            .collect();
        Self { per_layer }
    }

    pub fn depth(&self) -> usize {
        self.per_layer.len()
    }

    /// Checks the declared (depth, heads) shape.
    pub fn validate(&self, depth: usize, heads: usize) -> ModelResult<()> {
        if self.per_layer.len() != depth {
            return Err(ModelError::Config(format!(
                "assignment covers {} layers, model has {depth}",
                self.per_layer.len()
            )));
        }
        if let Some(bad) = self.per_layer.iter().position(|l| l.len() != heads) {
            return Err(ModelError::Config(format!(
                "layer {bad} assigns {} heads, model has {heads}",
                self.per_layer[bad].len()
            )));
        }
        Ok(())
    }

    pub fn laplacian_count(&self) -> usize {
        self.per_layer
            .iter()
            .flat_map(|l| l.iter())
            .filter(|k| **k == HeadKind::Laplacian)
            .count()
    }
}

/// Declarative form used in config files; expanded to a `HeadAssignment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AssignmentSpec {
    /// `laplacian_heads` Laplacian heads in every layer.
    Uniform { laplacian_heads: usize },
    /// First half of the layers all-Laplacian, second half all-standard.
    MixDepth,
    /// Alternating all-Laplacian and all-standard layers.
    Interleave { laplacian_first: bool },
    /// Fully explicit per-layer table.
    Explicit { per_layer: Vec<Vec<HeadKind>> },
}

impl AssignmentSpec {
    pub fn expand(&self, depth: usize, heads: usize) -> ModelResult<HeadAssignment> {
        let assignment = match self {
            AssignmentSpec::Uniform { laplacian_heads } => {
                HeadAssignment::uniform(depth, heads, *laplacian_heads)?
            }
            AssignmentSpec::MixDepth => HeadAssignment::mix_depth(depth, heads),
            AssignmentSpec::Interleave { laplacian_first } => {
                HeadAssignment::interleave(depth, heads, *laplacian_first)
            }
            AssignmentSpec::Explicit { per_layer } => {
                HeadAssignment { per_layer: per_layer.clone() }
            }
        };
        assignment.validate(depth, heads)?;
        Ok(assignment)
    }
}
