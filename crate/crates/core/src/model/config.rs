use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MlpKind {
    #[default]
    Dense,
    Fastfood,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Trainable decoder layer (attention + MLP).
    Trainable,
    /// Frozen random MLP layer.
    Frozen,
}

/// Sequence of `T` / `F` layers, e.g. `"TFTFT"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout(Vec<LayerKind>);

impl Layout {
    pub fn new(kinds: Vec<LayerKind>) -> Result<Self> {
        let ok =
            matches!(kinds.first(), Some(LayerKind::Trainable)) && matches!(kinds.last(), Some(LayerKind::Trainable));
        if !ok {
            return Err(Error::config(
                "model.doped_layout",
                "layout must begin and end with a trainable layer (T)",
            ));
        }
        Ok(Layout(kinds))
    }

    /// `T F T F … T` over `total` layers; `total` must be odd.
    pub fn alternating(total: usize) -> Result<Self> {
        if total.is_multiple_of(2) {
            return Err(Error::config(
                "model.doped_layout",
                format!("an alternating layout needs an odd layer count, got {total}"),
            ));
        }
        Self::new(
            (0..total)
                .map(|i| {
                    if i % 2 == 0 {
                        LayerKind::Trainable
                    } else {
                        LayerKind::Frozen
                    }
                })
                .collect(),
        )
    }

    pub fn all_trainable(total: usize) -> Self {
        Layout(vec![LayerKind::Trainable; total])
    }

    pub fn kinds(&self) -> &[LayerKind] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn trainable_layers(&self) -> usize {
        self.0.iter().filter(|k| **k == LayerKind::Trainable).count()
    }

    pub fn frozen_layers(&self) -> usize {
        self.len() - self.trainable_layers()
    }

    /// The same layout with every frozen layer removed.
    pub fn skeleton(&self) -> Layout {
        Layout::all_trainable(self.trainable_layers())
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in &self.0 {
            f.write_str(match k {
                LayerKind::Trainable => "T",
                LayerKind::Frozen => "F",
            })?;
        }
        Ok(())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                'T' | 't' => Ok(LayerKind::Trainable),
                'F' | 'f' => Ok(LayerKind::Frozen),
                other => Err(Error::config(
                    "model.doped_layout",
                    format!("unexpected layer code {other:?} (use T or F)"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Layout::new(kinds)
    }
}

impl Serialize for Layout {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Layout {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Architecture of one decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Total layer count, frozen layers included.
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub context: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub attn_dropout: f64,
    #[serde(default)]
    pub mlp_kind: MlpKind,
    #[serde(default = "default_block_count")]
    pub block_count: usize,
    #[serde(default)]
    pub doped_layout: Option<Layout>,
    #[serde(default = "default_frozen_hidden_mult")]
    pub frozen_hidden_mult: usize,
    #[serde(default = "default_hidden_mult")]
    pub hidden_mult: usize,
    /// Also replace the attention projections with FastFood operators.
    #[serde(default)]
    pub structured_attention: bool,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Initialization seed; set from the run seed, never read from files.
    #[serde(skip)]
    pub seed: u64,
}

fn default_block_count() -> usize {
    4
}

fn default_frozen_hidden_mult() -> usize {
    6
}

fn default_hidden_mult() -> usize {
    4
}

fn default_vocab() -> usize {
    256
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    /// Dense baseline with defaults for everything but the shape.
    pub fn dense(n_layers: usize, d_model: usize, n_heads: usize, context: usize) -> Self {
        ModelConfig {
            n_layers,
            d_model,
            n_heads,
            context,
            dropout: 0.0,
            attn_dropout: 0.0,
            mlp_kind: MlpKind::Dense,
            block_count: default_block_count(),
            doped_layout: None,
            frozen_hidden_mult: default_frozen_hidden_mult(),
            hidden_mult: default_hidden_mult(),
            structured_attention: false,
            vocab_size: default_vocab(),
            init_std: default_init_std(),
            seed: 0,
        }
    }

    pub fn layout(&self) -> Layout {
        self.doped_layout
            .clone()
            .unwrap_or_else(|| Layout::all_trainable(self.n_layers))
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn hidden(&self) -> usize {
        self.hidden_mult * self.d_model
    }

    pub fn frozen_hidden(&self) -> usize {
        self.frozen_hidden_mult * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.n_layers", self.n_layers),
            ("model.d_model", self.d_model),
            ("model.n_heads", self.n_heads),
            ("model.context", self.context),
            ("model.vocab_size", self.vocab_size),
            ("model.hidden_mult", self.hidden_mult),
            ("model.frozen_hidden_mult", self.frozen_hidden_mult),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                "model.n_heads",
                format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads),
            ));
        }
        if !self.d_head().is_multiple_of(2) {
            return Err(Error::config(
                "model.n_heads",
                format!("rotary embeddings need an even head width, got {}", self.d_head()),
            ));
        }
        for (field, p) in [
            ("model.dropout", self.dropout),
            ("model.attn_dropout", self.attn_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(field, format!("must lie in [0, 1), got {p}")));
            }
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("model.init_std", "must be positive"));
        }
        if let Some(layout) = &self.doped_layout {
            if layout.len() != self.n_layers {
                return Err(Error::config(
                    "model.doped_layout",
                    format!("layout has {} layers but n_layers is {}", layout.len(), self.n_layers),
                ));
            }
            Layout::new(layout.kinds().to_vec())?;
        }
        if self.mlp_kind == MlpKind::Block {
            let b = self.block_count;
            if b == 0 || !b.is_power_of_two() {
                return Err(Error::config("model.block_count", "must be a power of two"));
            }
            if !self.d_model.is_multiple_of(b) || !self.hidden().is_multiple_of(b) {
                return Err(Error::config(
                    "model.block_count",
                    format!("{b} blocks do not divide widths {} and {}", self.d_model, self.hidden()),
                ));
            }
        }
        if self.structured_attention && self.mlp_kind != MlpKind::Fastfood {
            return Err(Error::config(
                "model.structured_attention",
                "only supported together with mlp_kind = fastfood",
            ));
        }
        Ok(())
    }
}
