//! Named architectures from the reference experiments, at full size.

use super::config::{Layout, MlpKind, ModelConfig};

/// Names accepted by [`preset`].
pub const NAMES: &[&str] = &[
    "xxsmall",
    "xsmall",
    "small",
    "medium",
    "doped-xsmall",
    "doped-small",
    "doped-medium",
    "fastfood",
    "block",
];

const CONTEXT: usize = 1024;
const DROPOUT: f64 = 0.1;

fn base(n_layers: usize, d: usize, heads: usize) -> ModelConfig {
    let mut c = ModelConfig::dense(n_layers, d, heads, CONTEXT);
    c.dropout = DROPOUT;
    c.attn_dropout = DROPOUT;
    c
}

fn doped(total: usize, d: usize, heads: usize) -> ModelConfig {
    let mut c = base(total, d, heads);
    c.doped_layout = Some(Layout::alternating(total).expect("odd layer count"));
    c
}

fn structured(kind: MlpKind) -> ModelConfig {
    let mut c = base(12, 1024, 16);
    c.mlp_kind = kind;
    c
}

/// Full-size architecture for a preset name.
pub fn preset(name: &str) -> Option<ModelConfig> {
    Some(match name {
        "xxsmall" => base(3, 768, 12),
        "xsmall" => base(6, 768, 12),
        "small" => base(12, 768, 12),
        "medium" => base(24, 1024, 16),
        "doped-xsmall" => doped(5, 768, 12),
        "doped-small" => doped(11, 768, 12),
        "doped-medium" => doped(23, 1024, 16),
        "fastfood" => structured(MlpKind::Fastfood),
        "block" => structured(MlpKind::Block),
        _ => return None,
    })
}
