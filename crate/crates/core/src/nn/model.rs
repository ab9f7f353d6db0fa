//! Batched forward pass with caches, and the analytic backward pass of mean
//! binary cross-entropy.

use std::ops::Range;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::dense::sigmoid;
use crate::nn::ops::{softmax_pair, softplus};
use crate::nn::{Activation, DenseParams, ModelParams, Variant, RECENCY_SCALE_HOURS};

/// Feature rows (`batch × layout width`) and embeddings (`batch × dim`).
#[derive(Debug, Clone, Copy, Default)]
pub struct Inputs<'a> {
    pub ehr: Option<ArrayView2<'a, f64>>,
    pub cxr: Option<ArrayView2<'a, f64>>,
}

/// Inverted dropout on hidden layers of the encoder and projection.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

struct StackCache {
    inputs: Vec<Array2<f64>>,
    pres: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

struct EhrCache {
    dynamic: Array2<f64>,
    scaled_age: Array2<f64>,
    decay: Array2<f64>,
    stack: StackCache,
}

enum FusionCache {
    Passthrough,
    Concat { input: Array2<f64>, pre: Array2<f64> },
    /// Weight on the imaging side per sample (gate value or attention weight).
    Weighted { weight: Array1<f64> },
}

/// Everything the backward pass needs from one forward pass.
pub struct Cache {
    batch: usize,
    ehr: Option<EhrCache>,
    cxr: Option<StackCache>,
    fusion: FusionCache,
    fused: Array2<f64>,
    pub probabilities: Array1<f64>,
}

impl Cache {
    /// Per-sample gate value (gated) or imaging attention weight (attention).
    pub fn imaging_weight(&self) -> Option<&Array1<f64>> {
        match &self.fusion {
            FusionCache::Weighted { weight } => Some(weight),
            _ => None,
        }
    }
}

fn stack_forward(layers: &[DenseParams], x: Array2<f64>, dropout: &mut Option<Dropout<'_>>) -> StackCache {
    let n = layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pres = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let mut a = x;
    for (i, layer) in layers.iter().enumerate() {
        let pre = layer.pre_activation(a.view());
        let act = layer.activation;
        let mut out = pre.mapv(|v| act.apply(v));
        let mut mask = None;
        if let Some(d) = dropout.as_mut() {
            if i + 1 < n && d.rate > 0.0 {
                let keep = 1.0 - d.rate;
                let m = Array2::from_shape_fn(out.dim(), |_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                out *= &m;
                mask = Some(m);
            }
        }
        inputs.push(a);
        pres.push(pre);
        masks.push(mask);
        a = out;
    }
    StackCache { inputs, pres, masks, output: a }
}

/// Backpropagates through a layer stack, accumulating into `grads`. When
/// `input_cols` is given, returns the gradient with respect to those columns
/// of the stack input.
fn stack_backward(
    layers: &[DenseParams],
    cache: &StackCache,
    d_out: Array2<f64>,
    grads: &mut [DenseParams],
    input_cols: Option<Range<usize>>,
) -> Option<Array2<f64>> {
    let mut d = d_out;
    for i in (0..layers.len()).rev() {
        if let Some(m) = &cache.masks[i] {
            d *= m;
        }
        let act = layers[i].activation;
        if act != Activation::Identity {
            Zip::from(&mut d).and(&cache.pres[i]).for_each(|g, &p| *g *= act.derivative(p));
        }
        layers[i].accumulate(d.view(), cache.inputs[i].view(), &mut grads[i]);
        if i > 0 {
            d = d.dot(&layers[i].weight);
        } else if let Some(cols) = input_cols.clone() {
            return Some(d.dot(&layers[0].weight.slice(s![.., cols])));
        }
    }
    None
}

impl ModelParams {
    fn ehr_forward(&self, x: ArrayView2<f64>, dropout: &mut Option<Dropout<'_>>) -> Result<EhrCache> {
        let layout = self.layout;
        if x.ncols() != layout.width() {
            return Err(Error::ShapeMismatch(format!("feature rows have {} columns, expected {}", x.ncols(), layout.width())));
        }
        let d = layout.dynamic_dim;
        let dynamic = x.slice(s![.., layout.dynamic_start()..layout.dynamic_start() + d]).to_owned();
        let ages = x.slice(s![.., layout.tslm_start()..layout.tslm_start() + d]);
        if let Some(bad) = ages.iter().find(|a| !(**a >= 0.0)) {
            return Err(Error::InvalidInput(format!("negative or non-finite time since last measurement {bad}")));
        }
        let scaled_age = ages.mapv(|a| a / RECENCY_SCALE_HOURS);
        let rates: Array1<f64> = self.tslm.rho.mapv(softplus);
        let mut decay = scaled_age.clone();
        Zip::from(decay.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row).and(&rates).for_each(|v, &r| *v = (-r * *v).exp());
        });
        let decayed = &dynamic * &decay;
        let input = concatenate![
            Axis(1),
            x.slice(s![.., ..layout.static_dim]),
            decayed,
            scaled_age,
            x.slice(s![.., layout.baseline_start()..layout.tslm_start()])
        ];
        let stack = stack_forward(&self.ehr_encoder, input, dropout);
        Ok(EhrCache { dynamic, scaled_age, decay, stack })
    }

    /// Forward pass over a batch. Dropout is applied only when given.
    pub fn forward(&self, inputs: Inputs<'_>, mut dropout: Option<Dropout<'_>>) -> Result<Cache> {
        let variant = self.variant;
        let ehr = match (variant.uses_ehr(), inputs.ehr) {
            (true, None) => return Err(Error::MissingModality("ehr")),
            (true, Some(x)) => Some(x),
            (false, _) => None,
        };
        let cxr = match (variant.uses_cxr(), inputs.cxr) {
            (true, None) => return Err(Error::MissingModality("cxr")),
            (true, Some(z)) => Some(z),
            (false, _) => None,
        };
        let batch = ehr.map(|x| x.nrows()).or(cxr.map(|z| z.nrows())).unwrap_or(0);
        if let (Some(x), Some(z)) = (ehr, cxr) {
            if x.nrows() != z.nrows() {
                return Err(Error::ShapeMismatch(format!("{} feature rows but {} embeddings", x.nrows(), z.nrows())));
            }
        }
        if let Some(z) = cxr {
            if z.ncols() != self.embedding_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "embeddings have {} columns, expected {}",
                    z.ncols(),
                    self.embedding_dim()
                )));
            }
        }

        let ehr_cache = ehr.map(|x| self.ehr_forward(x, &mut dropout)).transpose()?;
        let cxr_cache = cxr.map(|z| stack_forward(&self.projection, z.to_owned(), &mut dropout));
        let d = self.latent_dim();

        let (fused, fusion) = match variant {
            Variant::EhrOnly => (ehr_cache.as_ref().unwrap().stack.output.clone(), FusionCache::Passthrough),
            Variant::CxrOnly => (cxr_cache.as_ref().unwrap().output.clone(), FusionCache::Passthrough),
            Variant::Concat => {
                let h_e = &ehr_cache.as_ref().unwrap().stack.output;
                let h_c = &cxr_cache.as_ref().unwrap().output;
                let input = concatenate![Axis(1), h_e.view(), h_c.view()];
                let pre = self.concat.pre_activation(input.view());
                let act = self.concat.activation;
                (pre.mapv(|v| act.apply(v)), FusionCache::Concat { input, pre })
            }
            Variant::Gated | Variant::Attention => {
                let h_e = &ehr_cache.as_ref().unwrap().stack.output;
                let h_c = &cxr_cache.as_ref().unwrap().output;
                let weight: Array1<f64> = if variant == Variant::Gated {
                    let w_e = self.gate.weight.slice(s![..d]);
                    let w_c = self.gate.weight.slice(s![d..]);
                    (h_e.dot(&w_e) + h_c.dot(&w_c)).mapv(|z| sigmoid(z + self.gate.bias))
                } else {
                    let s_e = h_e.dot(&self.attention.score) + self.attention.bias;
                    let s_c = h_c.dot(&self.attention.score) + self.attention.bias;
                    Zip::from(&s_e).and(&s_c).map_collect(|&a, &b| softmax_pair(a, b).1)
                };
                let mut fused = h_e.clone();
                Zip::from(fused.rows_mut()).and(h_c.rows()).and(&weight).for_each(|mut h, c, &g| {
                    Zip::from(&mut h).and(&c).for_each(|e, &c| *e = (1.0 - g) * *e + g * c);
                });
                (fused, FusionCache::Weighted { weight })
            }
        };

        let logits = fused.dot(&self.head.weight.row(0)) + self.head.bias[0];
        let probabilities = logits.mapv(sigmoid);
        Ok(Cache { batch, ehr: ehr_cache, cxr: cxr_cache, fusion, fused, probabilities })
    }

    /// Probabilities for a batch in inference mode.
    pub fn predict_batch(&self, inputs: Inputs<'_>) -> Result<Array1<f64>> {
        Ok(self.forward(inputs, None)?.probabilities)
    }

    /// Probability for one sample. `x_e` is a full feature row.
    pub fn predict(&self, x_e: Option<&[f64]>, z_c: Option<&[f64]>) -> Result<f64> {
        let ehr = x_e.map(|x| Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap());
        let cxr = z_c.map(|z| Array2::from_shape_vec((1, z.len()), z.to_vec()).unwrap());
        let p = self.predict_batch(Inputs { ehr: ehr.as_ref().map(|a| a.view()), cxr: cxr.as_ref().map(|a| a.view()) })?;
        Ok(p[0])
    }

    /// Gradients of the mean (optionally positive-weighted) binary
    /// cross-entropy for the batch in `cache`.
    pub fn backward(&self, cache: &Cache, labels: &[f64], pos_weight: f64) -> Result<ModelParams> {
        if labels.len() != cache.batch {
            return Err(Error::ShapeMismatch(format!("{} labels for batch of {}", labels.len(), cache.batch)));
        }
        let mut grads = self.zeros_like();
        let n = cache.batch.max(1) as f64;
        let d_logit: Array1<f64> = Zip::from(&cache.probabilities)
            .and(&Array1::from(labels.to_vec()))
            .map_collect(|&p, &y| (pos_weight * y * (p - 1.0) + (1.0 - y) * p) / n);

        grads.head.weight.row_mut(0).assign(&cache.fused.t().dot(&d_logit));
        grads.head.bias[0] = d_logit.sum();
        let d_fused = outer(&d_logit, &self.head.weight.row(0).to_owned());

        let d = self.latent_dim();
        let (d_he, d_hc) = match &cache.fusion {
            FusionCache::Passthrough => match self.variant {
                Variant::EhrOnly => (Some(d_fused), None),
                _ => (None, Some(d_fused)),
            },
            FusionCache::Concat { input, pre } => {
                let mut d_pre = d_fused;
                let act = self.concat.activation;
                if act != Activation::Identity {
                    Zip::from(&mut d_pre).and(pre).for_each(|g, &p| *g *= act.derivative(p));
                }
                self.concat.accumulate(d_pre.view(), input.view(), &mut grads.concat);
                let d_input = d_pre.dot(&self.concat.weight);
                (Some(d_input.slice(s![.., ..d]).to_owned()), Some(d_input.slice(s![.., d..]).to_owned()))
            }
            FusionCache::Weighted { weight } => {
                let h_e = &cache.ehr.as_ref().unwrap().stack.output;
                let h_c = &cache.cxr.as_ref().unwrap().output;
                let diff = h_c - h_e;
                // d loss / d (pre-sigmoid weight logit)
                let d_logit_w: Array1<f64> = Zip::from(diff.rows())
                    .and(d_fused.rows())
                    .and(weight)
                    .map_collect(|c, g, &w| c.dot(&g) * w * (1.0 - w));
                let mut d_he = d_fused.clone();
                let mut d_hc = d_fused;
                Zip::from(d_he.rows_mut()).and(d_hc.rows_mut()).and(weight).for_each(|mut e, mut c, &w| {
                    e *= 1.0 - w;
                    c *= w;
                });
                if self.variant == Variant::Gated {
                    grads.gate.weight.slice_mut(s![..d]).assign(&h_e.t().dot(&d_logit_w));
                    grads.gate.weight.slice_mut(s![d..]).assign(&h_c.t().dot(&d_logit_w));
                    grads.gate.bias = d_logit_w.sum();
                    d_he += &outer(&d_logit_w, &self.gate.weight.slice(s![..d]).to_owned());
                    d_hc += &outer(&d_logit_w, &self.gate.weight.slice(s![d..]).to_owned());
                } else {
                    // The logit is u·h_c - u·h_e; the shared bias cancels.
                    grads.attention.score.assign(&diff.t().dot(&d_logit_w));
                    let push = outer(&d_logit_w, &self.attention.score);
                    d_he -= &push;
                    d_hc += &push;
                }
                (Some(d_he), Some(d_hc))
            }
        };

        if let (Some(d_he), Some(ec)) = (d_he, cache.ehr.as_ref()) {
            let layout = self.layout;
            let cols = layout.static_dim..layout.static_dim + layout.dynamic_dim;
            let d_decayed = stack_backward(&self.ehr_encoder, &ec.stack, d_he, &mut grads.ehr_encoder, Some(cols))
                .expect("input gradient requested");
            // d decayed / d rho = -x * age * exp(-softplus(rho) age) * sigmoid(rho)
            let mut local = &d_decayed * &ec.dynamic;
            local *= &ec.decay;
            local *= &ec.scaled_age;
            let summed = local.sum_axis(Axis(0));
            Zip::from(&mut grads.tslm.rho)
                .and(&summed)
                .and(&self.tslm.rho)
                .for_each(|g, &s, &r| *g = -s * sigmoid(r));
        }
        if let (Some(d_hc), Some(cc)) = (d_hc, cache.cxr.as_ref()) {
            stack_backward(&self.projection, cc, d_hc, &mut grads.projection, None);
        }
        Ok(grads)
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}
