//! Model family: TSLM decay, EHR encoder, image projection, fusion and head.
//!
//! Every variant shares one parameter layout so checkpoints, optimizer state
//! and gradients can be handled uniformly. Tensors a variant does not use
//! simply receive zero gradient.

mod checkpoint;
mod dense;
pub mod gradcheck;
mod model;
mod ops;

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Layout;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use dense::{Activation, DenseParams};
pub use model::{Cache, Dropout, Inputs};
pub use ops::{attention_fuse, encode_ehr, gate_and_fuse, project_image, softmax_pair, softplus, tslm_transform};

/// Hours that map to one unit of normalized recency.
pub const RECENCY_SCALE_HOURS: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "ehr")]
    EhrOnly,
    #[serde(rename = "cxr")]
    CxrOnly,
    Concat,
    Attention,
    Gated,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::EhrOnly, Variant::CxrOnly, Variant::Concat, Variant::Attention, Variant::Gated];

    pub fn uses_ehr(self) -> bool {
        self != Variant::CxrOnly
    }

    pub fn uses_cxr(self) -> bool {
        self != Variant::EhrOnly
    }

    pub fn tag(self) -> u32 {
        match self {
            Variant::EhrOnly => 0,
            Variant::CxrOnly => 1,
            Variant::Concat => 2,
            Variant::Attention => 3,
            Variant::Gated => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Variant> {
        Variant::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::EhrOnly => "ehr",
            Variant::CxrOnly => "cxr",
            Variant::Concat => "concat",
            Variant::Attention => "attention",
            Variant::Gated => "gated",
        }
    }

    /// Display name for tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::EhrOnly => "EHR-only",
            Variant::CxrOnly => "CXR-only",
            Variant::Concat => "Concatenation fusion",
            Variant::Attention => "Attention fusion",
            Variant::Gated => "Gated fusion",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant {s:?}")))
    }
}

/// Architecture sizes. Hidden layers use ReLU; encoder outputs are linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub static_dim: usize,
    pub dynamic_dim: usize,
    pub embedding_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub projection_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Initial pre-activation decay rate shared by all variables.
    pub initial_rho: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let layout = Layout::standard();
        ModelConfig {
            static_dim: layout.static_dim,
            dynamic_dim: layout.dynamic_dim,
            embedding_dim: 32,
            encoder_hidden: vec![64, 64],
            projection_hidden: vec![64, 64],
            latent_dim: 64,
            initial_rho: -2.0,
        }
    }
}

impl ModelConfig {
    pub fn layout(&self) -> Layout {
        Layout { static_dim: self.static_dim, dynamic_dim: self.dynamic_dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dynamic_dim == 0 || self.embedding_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        if self.encoder_hidden.iter().chain(&self.projection_hidden).any(|h| *h == 0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TslmParams {
    /// Pre-softplus decay rates, one per dynamic variable.
    pub rho: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// Weights over `[h_e; h_c]`, length `2d`.
    pub weight: Array1<f64>,
    pub bias: f64,
}

/// Shared scalar scoring layer applied to each modality representation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub score: Array1<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub layout: Layout,
    pub tslm: TslmParams,
    pub ehr_encoder: Vec<DenseParams>,
    pub projection: Vec<DenseParams>,
    pub gate: GateParams,
    pub attention: AttentionParams,
    /// Dense layer over `[h_e; h_c]` used by the concatenation variant.
    pub concat: DenseParams,
    pub head: DenseParams,
}

fn stack<R: Rng>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Vec<DenseParams> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == dims.len() { Activation::Identity } else { Activation::Relu };
            DenseParams::init(w[0], w[1], act, rng)
        })
        .collect()
}

fn uniform_vec<R: Rng>(n: usize, limit: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.random_range(-limit..limit))
}

impl ModelParams {
    /// Seeded symmetric-uniform fan-in initialization.
    pub fn init<R: Rng>(variant: Variant, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let d = config.latent_dim;
        let ehr_encoder = stack(layout.width(), &config.encoder_hidden, d, rng);
        let projection = stack(config.embedding_dim, &config.projection_hidden, d, rng);
        let gate = GateParams { weight: uniform_vec(2 * d, 1.0 / ((2 * d) as f64).sqrt(), rng), bias: 0.0 };
        let attention = AttentionParams { score: uniform_vec(d, 1.0 / (d as f64).sqrt(), rng), bias: 0.0 };
        let concat = DenseParams::init(2 * d, d, Activation::Identity, rng);
        let head = DenseParams::init(d, 1, Activation::Sigmoid, rng);
        Ok(ModelParams {
            variant,
            layout,
            tslm: TslmParams { rho: Array1::from_elem(layout.dynamic_dim, config.initial_rho) },
            ehr_encoder,
            projection,
            gate,
            attention,
            concat,
            head,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.projection.first().map_or(0, DenseParams::in_dim)
    }

    /// Visits every learnable tensor in a fixed order with its name and shape.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &[usize], &[f64])) {
        f("tslm.rho", &[self.tslm.rho.len()], self.tslm.rho.as_slice().expect("contiguous"));
        for (prefix, layers) in [("ehr_encoder", &self.ehr_encoder), ("projection", &self.projection)] {
            for (i, l) in layers.iter().enumerate() {
                l.visit(&format!("{prefix}.{i}"), &mut f);
            }
        }
        f("gate.weight", &[self.gate.weight.len()], self.gate.weight.as_slice().expect("contiguous"));
        f("gate.bias", &[1], &[self.gate.bias]);
        f("attention.score", &[self.attention.score.len()], self.attention.score.as_slice().expect("contiguous"));
        f("attention.bias", &[1], &[self.attention.bias]);
        self.concat.visit("concat", &mut f);
        self.head.visit("head", &mut f);
    }

    /// Mutable traversal in the same order as [`Self::for_each_tensor`],
    /// covering only learnable tensors.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("tslm.rho", self.tslm.rho.as_slice_mut().expect("contiguous"));
        for (prefix, layers) in [("ehr_encoder", &mut self.ehr_encoder), ("projection", &mut self.projection)] {
            for (i, l) in layers.iter_mut().enumerate() {
                l.visit_mut(&format!("{prefix}.{i}"), &mut f);
            }
        }
        f("gate.weight", self.gate.weight.as_slice_mut().expect("contiguous"));
        f("gate.bias", std::slice::from_mut(&mut self.gate.bias));
        f("attention.score", self.attention.score.as_slice_mut().expect("contiguous"));
        f("attention.bias", std::slice::from_mut(&mut self.attention.bias));
        self.concat.visit_mut("concat", &mut f);
        self.head.visit_mut("head", &mut f);
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, _, p| n += p.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each_tensor(|_, _, p| out.extend_from_slice(p));
        out
    }

    /// Parameter names expanded per scalar, aligned with [`Self::flatten`].
    pub fn flat_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each_tensor(|name, _, p| out.extend((0..p.len()).map(|i| format!("{name}[{i}]"))));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!("{} values for {expected} parameters", flat.len())));
        }
        let mut offset = 0;
        self.for_each_param_mut(|_, p| {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        });
        Ok(())
    }

    /// Same structure with every value zeroed; used to hold gradients.
    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        z.for_each_param_mut(|_, p| p.fill(0.0));
        z
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}
