//! Flat named parameter store. Creation order is fixed by the architecture,
//! which pins initialization draws, checkpoint layout, and optimizer slot
//! alignment all at once.

use lapform_core::{Matrix, RngState};

use crate::attention::{AttentionParams, HeadParams};
use crate::block::{BlockParams, LayerNormParams, MlpParams};
use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};

/// Weight initialization scale for all projection matrices.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    fn filled(name: impl Into<String>, shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self { name: name.into(), shape, data: vec![value; len] }
    }

    fn drawn(name: impl Into<String>, shape: Vec<usize>, rng: &mut RngState) -> Self {
        let (rows, cols) = match shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            other => panic!("unsupported parameter shape {other:?}"),
        };
        let m = lapform_core::trunc_normal_init(rows, cols, INIT_STD, rng);
        Self { name: name.into(), shape, data: m.data().to_vec() }
    }

    pub fn as_matrix(&self) -> Matrix {
        let (rows, cols) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            other => panic!("parameter {} has non-matrix shape {other:?}", self.name),
        };
        Matrix::new(rows, cols, self.data.clone()).expect("stored parameters are finite")
    }
}

/// All trainable parameters of one model, in fixed creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    /// Deterministic initialization: matrices are truncated-normal draws in
    /// creation order from a single stream, norm gains start at 1, biases
    /// and shifts at 0.
    pub fn init(cfg: &ModelConfig, seed: u64) -> ModelResult<ParamSet> {
        cfg.validate()?;
        let mut rng = RngState::new(seed).derive(0x1A17);
        let d = cfg.dim;
        let d_k = cfg.head_dim();
        let hidden = cfg.mlp_ratio * d;
        let t = cfg.seq_len();

        let mut params = Vec::new();
        if cfg.uses_patch_embedding() {
            params.push(Param::drawn("embed.weight", vec![cfg.input_token_dim(), d], &mut rng));
        }
        params.push(Param::drawn("pos.embed", vec![t, d], &mut rng));

        for l in 0..cfg.depth {
            params.push(Param::filled(format!("block{l}.ln1.gamma"), vec![d], 1.0));
            params.push(Param::filled(format!("block{l}.ln1.beta"), vec![d], 0.0));
            for h in 0..cfg.heads {
                let stem = format!("block{l}.head{h}");
                params.push(Param::drawn(format!("{stem}.wq"), vec![d, d_k], &mut rng));
                params.push(Param::drawn(format!("{stem}.wk"), vec![d, d_k], &mut rng));
                params.push(Param::drawn(format!("{stem}.wv"), vec![d, d_k], &mut rng));
                if cfg.qk_norm {
                    params.push(Param::filled(format!("{stem}.q_gain"), vec![d_k], 1.0));
                    params.push(Param::filled(format!("{stem}.k_gain"), vec![d_k], 1.0));
                }
            }
            params.push(Param::drawn(
                format!("block{l}.wo"),
                vec![cfg.heads * d_k, d],
                &mut rng,
            ));
            params.push(Param::filled(format!("block{l}.ln2.gamma"), vec![d], 1.0));
            params.push(Param::filled(format!("block{l}.ln2.beta"), vec![d], 0.0));
            params.push(Param::drawn(format!("block{l}.mlp.fc1_w"), vec![d, hidden], &mut rng));
            params.push(Param::filled(format!("block{l}.mlp.fc1_b"), vec![hidden], 0.0));
            params.push(Param::drawn(format!("block{l}.mlp.fc2_w"), vec![hidden, d], &mut rng));
            params.push(Param::filled(format!("block{l}.mlp.fc2_b"), vec![d], 0.0));
        }

        params.push(Param::filled("final_ln.gamma", vec![d], 1.0));
        params.push(Param::filled("final_ln.beta", vec![d], 0.0));
        params.push(Param::drawn("classifier.weight", vec![d, cfg.num_classes], &mut rng));
        params.push(Param::filled("classifier.bias", vec![cfg.num_classes], 0.0));
        Ok(ParamSet { params })
    }

    pub fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> ModelResult<&Param> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| ModelError::Internal(format!("unknown parameter {name}")))
    }

    pub fn index_of(&self, name: &str) -> ModelResult<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| ModelError::Internal(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> ModelResult<&mut Param> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| ModelError::Internal(format!("unknown parameter {name}")))
    }

    fn vec_of(&self, name: &str) -> ModelResult<Vec<f64>> {
        Ok(self.get(name)?.data.clone())
    }

    /// Assembles per-block matrix-form weights for the evaluation path.
    pub fn block_params(&self, cfg: &ModelConfig, layer: usize) -> ModelResult<BlockParams> {
        let heads = (0..cfg.heads)
            .map(|h| {
                let stem = format!("block{layer}.head{h}");
                Ok(HeadParams {
                    w_q: self.get(&format!("{stem}.wq"))?.as_matrix(),
                    w_k: self.get(&format!("{stem}.wk"))?.as_matrix(),
                    w_v: self.get(&format!("{stem}.wv"))?.as_matrix(),
                    q_gain: if cfg.qk_norm {
                        Some(self.vec_of(&format!("{stem}.q_gain"))?)
                    } else {
                        None
                    },
                    k_gain: if cfg.qk_norm {
                        Some(self.vec_of(&format!("{stem}.k_gain"))?)
                    } else {
                        None
                    },
                })
            })
            .collect::<ModelResult<Vec<_>>>()?;
        Ok(BlockParams {
            ln1: LayerNormParams {
                gamma: self.vec_of(&format!("block{layer}.ln1.gamma"))?,
                beta: self.vec_of(&format!("block{layer}.ln1.beta"))?,
            },
            attn: AttentionParams {
                heads,
                w_o: self.get(&format!("block{layer}.wo"))?.as_matrix(),
            },
            ln2: LayerNormParams {
                gamma: self.vec_of(&format!("block{layer}.ln2.gamma"))?,
                beta: self.vec_of(&format!("block{layer}.ln2.beta"))?,
            },
            mlp: MlpParams {
                fc1_w: self.get(&format!("block{layer}.mlp.fc1_w"))?.as_matrix(),
                fc1_b: self.vec_of(&format!("block{layer}.mlp.fc1_b"))?,
                fc2_w: self.get(&format!("block{layer}.mlp.fc2_w"))?.as_matrix(),
                fc2_b: self.vec_of(&format!("block{layer}.mlp.fc2_b"))?,
            },
            drop_path_p: cfg.drop_path_p,
            identity_layer_norm: false,
        })
    }
}
