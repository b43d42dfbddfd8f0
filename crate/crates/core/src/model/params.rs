use serde::{Deserialize, Serialize};

use super::{Modality, ModelConfig};
use crate::error::Result;

/// How a parameter tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamInit {
    /// Uniform in ±sqrt(6 / fan_in).
    KaimingUniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
    /// Normal with standard deviation 0.02.
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Layout(Vec<ParamSpec>);

impl Layout {
    fn add(&mut self, name: String, shape: Vec<usize>, init: ParamInit) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize) {
        self.add(name, shape, ParamInit::KaimingUniform { fan_in });
    }

    fn bias(&mut self, name: String, n: usize) {
        self.add(name, vec![n], ParamInit::Zeros);
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.add(format!("{prefix}.gamma"), vec![d], ParamInit::Ones);
        self.add(format!("{prefix}.beta"), vec![d], ParamInit::Zeros);
    }
}

/// Every learnable tensor in forward order. Encoders of modalities the
/// config lacks are omitted.
pub fn param_layout(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut l = Layout(Vec::new());
    for m in cfg.modalities().iter() {
        let name = m.name();
        let (c_in, kernel) = match m {
            Modality::Gaze => (cfg.gaze.expect("gaze").repr.dim(), cfg.temporal_kernel),
            Modality::Imu => (crate::sim::IMU_DIM, cfg.temporal_kernel),
            Modality::Rgb => (cfg.rgb.expect("rgb").channels, cfg.rgb_kernel),
        };
        let taps = if m == Modality::Rgb { kernel * kernel } else { kernel };
        for i in 0..cfg.conv_layers {
            let cin = if i == 0 { c_in } else { d };
            let shape = if m == Modality::Rgb {
                vec![d, cin, kernel, kernel]
            } else {
                vec![d, cin, kernel]
            };
            l.weight(format!("{name}.conv{i}.weight"), shape, cin * taps);
            l.bias(format!("{name}.conv{i}.bias"), d);
        }
        l.add(format!("{name}.type"), vec![d], ParamInit::Embedding);
        l.add(format!("{name}.pos"), vec![cfg.tokens(m)?, d], ParamInit::Embedding);
    }
    l.add("cls".into(), vec![1, d], ParamInit::Embedding);
    let hidden = cfg.mlp_ratio * d;
    for i in 0..cfg.layers {
        let p = format!("layer{i}");
        l.norm(&format!("{p}.norm1"), d);
        for proj in ["q", "k", "v", "o"] {
            l.weight(format!("{p}.attn.w{proj}"), vec![d, d], d);
            l.bias(format!("{p}.attn.b{proj}"), d);
        }
        l.norm(&format!("{p}.norm2"), d);
        l.weight(format!("{p}.mlp.w1"), vec![d, hidden], d);
        l.bias(format!("{p}.mlp.b1"), hidden);
        l.weight(format!("{p}.mlp.w2"), vec![hidden, d], hidden);
        l.bias(format!("{p}.mlp.b2"), d);
    }
    l.norm("final_norm", d);
    l.weight("head.weight".into(), vec![d, cfg.classes], d);
    l.bias("head.bias".into(), cfg.classes);
    Ok(l.0)
}

/// Total number of learnable scalars.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_layout(cfg)?.iter().map(ParamSpec::len).sum())
}
