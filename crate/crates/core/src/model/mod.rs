//! A small decoder-only transformer whose feed-forward blocks are Gated-MLPs.
//!
//! Thresholding can be switched on for the MLP activations alone, or
//! additionally for the normalized vectors entering attention and the MLP.

mod forward;
mod sparsity;

use serde::{Deserialize, Serialize};

use crate::activation::{ActivationKind, Threshold};
use crate::error::{CatsError, Result};
use crate::kernel::GatedMlpWeights;
use crate::linalg::{random_matrix, Layout, Matrix};
use crate::seed::derive_seed;

pub use forward::{argmax, attention_cats_forward, forward, generate, generate_recompute, KvCache};
pub use sparsity::{sparsity_report, SiteSparsity, SparsityReport};

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CatsMode {
    #[default]
    #[serde(rename = "off")]
    Off,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "mlp+attention")]
    MlpAttention,
}

impl std::str::FromStr for CatsMode {
    type Err = CatsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(CatsMode::Off),
            "mlp" => Ok(CatsMode::Mlp),
            "mlp+attention" => Ok(CatsMode::MlpAttention),
            other => Err(CatsError::InvalidConfig(format!("unknown cats mode {other:?}"))),
        }
    }
}

/// Where in a layer a thresholding site sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    /// Post-activation hidden vector of the Gated-MLP.
    Mlp,
    /// Normalized hidden state entering attention.
    AttnIn,
    /// Normalized hidden state entering the MLP, after attention.
    MlpIn,
}

impl SiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteKind::Mlp => "mlp",
            SiteKind::AttnIn => "attn_in",
            SiteKind::MlpIn => "mlp_in",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub layer: usize,
    pub kind: SiteKind,
}

impl Site {
    pub fn mlp(layer: usize) -> Self {
        Self {
            layer,
            kind: SiteKind::Mlp,
        }
    }
}

/// Cutoffs for one layer. Which fields must be present depends on the mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerThresholds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn_in: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_in: Option<Threshold>,
}

impl LayerThresholds {
    pub fn get(&self, kind: SiteKind) -> Option<&Threshold> {
        match kind {
            SiteKind::Mlp => self.mlp.as_ref(),
            SiteKind::AttnIn => self.attn_in.as_ref(),
            SiteKind::MlpIn => self.mlp_in.as_ref(),
        }
    }

    pub fn set(&mut self, kind: SiteKind, t: Threshold) {
        match kind {
            SiteKind::Mlp => self.mlp = Some(t),
            SiteKind::AttnIn => self.attn_in = Some(t),
            SiteKind::MlpIn => self.mlp_in = Some(t),
        }
    }

    /// All sites at zero cutoff for `mode`.
    pub fn zero(mode: CatsMode) -> Self {
        let mut lt = Self::default();
        for kind in mode.site_kinds() {
            lt.set(*kind, Threshold::zero());
        }
        lt
    }
}

impl CatsMode {
    pub fn site_kinds(self) -> &'static [SiteKind] {
        match self {
            CatsMode::Off => &[],
            CatsMode::Mlp => &[SiteKind::Mlp],
            CatsMode::MlpAttention => &[SiteKind::AttnIn, SiteKind::MlpIn, SiteKind::Mlp],
        }
    }
}

fn default_max_seq() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d: usize,
    pub m: usize,
    pub layers: usize,
    pub heads: usize,
    #[serde(default = "default_max_seq")]
    pub max_seq: usize,
    #[serde(default)]
    pub cats_mode: CatsMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<LayerThresholds>,
    #[serde(default)]
    pub activation: ActivationKind,
    pub seed: u64,
}

impl ModelConfig {
    /// The desk-scale test model: vocab 256, width 64, hidden 172, 4 layers
    /// of 4 heads.
    pub fn toy(seed: u64) -> Self {
        Self {
            vocab: 256,
            d: 64,
            m: 172,
            layers: 4,
            heads: 4,
            max_seq: 64,
            cats_mode: CatsMode::Off,
            thresholds: Vec::new(),
            activation: ActivationKind::Silu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CatsError::InvalidConfig(msg));
        if self.vocab == 0 || self.d == 0 || self.m == 0 || self.layers == 0 || self.max_seq == 0 {
            return bad("vocab, d, m, layers and max_seq must be positive".into());
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if self.cats_mode == CatsMode::Off {
            if !self.thresholds.is_empty() {
                return bad("thresholds given while cats_mode is off".into());
            }
            return Ok(());
        }
        if self.thresholds.len() != self.layers {
            return Err(CatsError::MissingThresholds(format!(
                "{} layers but {} threshold sets",
                self.layers,
                self.thresholds.len()
            )));
        }
        let wanted = self.cats_mode.site_kinds();
        for (i, lt) in self.thresholds.iter().enumerate() {
            for kind in [SiteKind::Mlp, SiteKind::AttnIn, SiteKind::MlpIn] {
                match (wanted.contains(&kind), lt.get(kind)) {
                    (true, None) => {
                        return Err(CatsError::MissingThresholds(format!(
                            "layer {i} has no {} threshold",
                            kind.as_str()
                        )))
                    }
                    (false, Some(_)) => {
                        return bad(format!(
                            "layer {i} has a {} threshold not used by mode {:?}",
                            kind.as_str(),
                            self.cats_mode
                        ))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub attention: AttentionWeights,
    pub mlp: GatedMlpWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    embedding: Matrix,
    positions: Matrix,
    layers: Vec<Layer>,
    unembedding: Matrix,
}

pub fn build_toy_model(config: ModelConfig) -> Result<ToyModel> {
    config.validate()?;
    let (d, seed) = (config.d, config.seed);
    let scale = 1.0 / (d as f32).sqrt();
    let mut tag = 0u64;
    let mut next = || {
        tag += 1;
        derive_seed(seed, tag)
    };
    let embedding = random_matrix(config.vocab, d, Layout::RowMajor, next(), scale);
    let positions = random_matrix(config.max_seq, d, Layout::RowMajor, next(), scale);
    let layers = (0..config.layers)
        .map(|_| {
            let attention = AttentionWeights {
                wq: random_matrix(d, d, Layout::RowMajor, next(), scale),
                wk: random_matrix(d, d, Layout::RowMajor, next(), scale),
                wv: random_matrix(d, d, Layout::RowMajor, next(), scale),
                wo: random_matrix(d, d, Layout::RowMajor, next(), scale),
            };
            let mlp = GatedMlpWeights::random(d, config.m, next(), scale);
            Layer { attention, mlp }
        })
        .collect();
    let unembedding = random_matrix(d, config.vocab, Layout::RowMajor, next(), scale);
    Ok(ToyModel {
        config,
        embedding,
        positions,
        layers,
        unembedding,
    })
}

impl ToyModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn mode(&self) -> CatsMode {
        self.config.cats_mode
    }

    /// Same weights with a different thresholding mode.
    pub fn with_thresholds(&self, mode: CatsMode, thresholds: Vec<LayerThresholds>) -> Result<ToyModel> {
        let mut config = self.config.clone();
        config.cats_mode = mode;
        config.thresholds = thresholds;
        config.validate()?;
        Ok(ToyModel { config, ..self.clone() })
    }

    /// Same weights with a different MLP nonlinearity.
    pub fn with_activation(&self, activation: ActivationKind) -> ToyModel {
        let mut m = self.clone();
        m.config.activation = activation;
        m
    }

    pub(crate) fn threshold(&self, layer: usize, kind: SiteKind) -> Option<&Threshold> {
        if !self.config.cats_mode.site_kinds().contains(&kind) {
            return None;
        }
        self.config.thresholds.get(layer).and_then(|lt| lt.get(kind))
    }

    /// Vectors of this width are recorded at `kind` for every token.
    pub fn site_width(&self, kind: SiteKind) -> usize {
        match kind {
            SiteKind::Mlp => self.config.m,
            SiteKind::AttnIn | SiteKind::MlpIn => self.config.d,
        }
    }
}
