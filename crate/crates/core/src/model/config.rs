use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the network. The defaults are the full-size
/// architecture; tests and smoke runs shrink the widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `(F, T)` of the network input, after cropping.
    pub input_dims: (usize, usize),
    pub n_classes: usize,
    pub doub_inc_channels: usize,
    pub inc_res_channels: Vec<usize>,
    pub rn_lambda: f64,
    pub attn_heads: usize,
    pub attn_key_dim: usize,
    pub fc_hidden: usize,
    pub dropout: f64,
    /// Square kernel sizes of the IncFT branches, per Inc-Res block.
    pub incft_kernels: Vec<Vec<usize>>,
    /// Temporal kernel lengths of the IncT branches, per Inc-Res block.
    pub inct_kernels: Vec<Vec<usize>>,
}

impl ModelConfig {
    pub fn new(input_dims: (usize, usize), n_classes: usize) -> Self {
        Self {
            input_dims,
            n_classes,
            doub_inc_channels: 128,
            inc_res_channels: vec![128, 256],
            rn_lambda: 0.4,
            attn_heads: 16,
            attn_key_dim: 32,
            fc_hidden: 512,
            dropout: 0.2,
            incft_kernels: vec![vec![3], vec![3]],
            inct_kernels: vec![vec![5, 7], vec![7, 9]],
        }
    }

    /// Number of 2x downsamplings between input and pooling block.
    pub fn downsamplings(&self) -> usize {
        1 + self.inc_res_channels.len()
    }

    /// `(C, F, T)` entering the pooling block.
    pub fn pooled_dims(&self) -> (usize, usize, usize) {
        let (mut f, mut t) = self.input_dims;
        for _ in 0..self.downsamplings() {
            f /= 2;
            t /= 2;
        }
        let c = *self.inc_res_channels.last().unwrap_or(&self.doub_inc_channels);
        (c, f, t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if !(self.rn_lambda >= 0.0 && self.rn_lambda.is_finite()) {
            return bad(format!("rn_lambda must be >= 0, got {}", self.rn_lambda));
        }
        if self.attn_heads == 0 || self.attn_key_dim == 0 {
            return bad("attention heads and key dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.doub_inc_channels == 0 || self.fc_hidden == 0 || self.inc_res_channels.iter().any(|&c| c == 0) {
            return bad("layer widths must be positive".into());
        }
        let blocks = self.inc_res_channels.len();
        if self.incft_kernels.len() != blocks || self.inct_kernels.len() != blocks {
            return bad(format!(
                "{blocks} Inc-Res blocks but {} IncFT and {} IncT kernel lists",
                self.incft_kernels.len(),
                self.inct_kernels.len()
            ));
        }
        let all = self.incft_kernels.iter().chain(&self.inct_kernels);
        if all.clone().any(Vec::is_empty) || all.flatten().any(|&k| k == 0) {
            return bad("every Inc-Res branch list needs positive kernel sizes".into());
        }
        let (_, f, t) = self.pooled_dims();
        if f == 0 || t == 0 {
            return bad(format!(
                "input {}x{} is too small for {} halvings",
                self.input_dims.0,
                self.input_dims.1,
                self.downsamplings()
            ));
        }
        Ok(())
    }
}
