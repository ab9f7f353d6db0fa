//! `VGM1` checkpoint format.
//!
//! Layout (little endian): magic, u32 variant tag, u32 schema version, u32
//! tensor count, then per tensor a u32 name length, the UTF-8 name, a u32 rank,
//! rank u32 extents and the row-major f64 values. Layer activations are
//! stored as one-element tensors named `<layer>.activation`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{Activation, AttentionParams, DenseParams, GateParams, ModelParams, TslmParams, Variant};
use crate::schema::{Layout, SCHEMA_VERSION};

const MAGIC: [u8; 4] = *b"VGM1";

struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for s in shape {
        out.extend_from_slice(&(*s as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut body = Vec::new();
    let mut count = 0u32;
    let mut emit = |name: &str, shape: &[usize], values: &[f64]| {
        push_tensor(&mut body, name, shape, values);
        count += 1;
    };
    emit("tslm.rho", &[params.tslm.rho.len()], params.tslm.rho.as_slice().expect("contiguous"));
    let dense = |prefix: String, l: &DenseParams, emit: &mut dyn FnMut(&str, &[usize], &[f64])| {
        emit(&format!("{prefix}.weight"), &[l.out_dim(), l.in_dim()], l.weight.as_slice().expect("contiguous"));
        emit(&format!("{prefix}.bias"), &[l.bias.len()], l.bias.as_slice().expect("contiguous"));
        emit(&format!("{prefix}.activation"), &[1], &[l.activation.code()]);
    };
    for (i, l) in params.ehr_encoder.iter().enumerate() {
        dense(format!("ehr_encoder.{i}"), l, &mut emit);
    }
    for (i, l) in params.projection.iter().enumerate() {
        dense(format!("projection.{i}"), l, &mut emit);
    }
    emit("gate.weight", &[params.gate.weight.len()], params.gate.weight.as_slice().expect("contiguous"));
    emit("gate.bias", &[1], &[params.gate.bias]);
    emit("attention.score", &[params.attention.score.len()], params.attention.score.as_slice().expect("contiguous"));
    emit("attention.bias", &[1], &[params.attention.bias]);
    dense("concat".into(), &params.concat, &mut emit);
    dense("head".into(), &params.head, &mut emit);

    let mut out = Vec::with_capacity(body.len() + 16);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&params.variant.tag().to_le_bytes());
    out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("checkpoint ends at byte {}", self.bytes.len())))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn take_tensor(tensors: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
    tensors.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

fn vector(tensors: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Array1<f64>> {
    let t = take_tensor(tensors, name)?;
    if t.shape.len() != 1 {
        return Err(Error::Checkpoint(format!("{name} should be a vector")));
    }
    Ok(Array1::from(t.values))
}

fn scalar(tensors: &mut BTreeMap<String, Tensor>, name: &str) -> Result<f64> {
    let t = take_tensor(tensors, name)?;
    if t.values.len() != 1 {
        return Err(Error::Checkpoint(format!("{name} should be a scalar")));
    }
    Ok(t.values[0])
}

fn dense(tensors: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<DenseParams> {
    let w = take_tensor(tensors, &format!("{prefix}.weight"))?;
    if w.shape.len() != 2 {
        return Err(Error::Checkpoint(format!("{prefix}.weight should be a matrix")));
    }
    let weight = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.values)
        .map_err(|e| Error::Checkpoint(format!("{prefix}.weight: {e}")))?;
    let bias = vector(tensors, &format!("{prefix}.bias"))?;
    if bias.len() != weight.nrows() {
        return Err(Error::Checkpoint(format!("{prefix}.bias has {} entries for {} outputs", bias.len(), weight.nrows())));
    }
    let code = scalar(tensors, &format!("{prefix}.activation"))?;
    let activation =
        Activation::from_code(code).ok_or_else(|| Error::Checkpoint(format!("{prefix} has unknown activation {code}")))?;
    Ok(DenseParams { weight, bias, activation })
}

fn stack(tensors: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<Vec<DenseParams>> {
    let mut layers = Vec::new();
    while tensors.contains_key(&format!("{prefix}.{}.weight", layers.len())) {
        layers.push(dense(tensors, &format!("{prefix}.{}", layers.len()))?);
    }
    if layers.is_empty() {
        return Err(Error::Checkpoint(format!("no {prefix} layers")));
    }
    for pair in layers.windows(2) {
        if pair[0].out_dim() != pair[1].in_dim() {
            return Err(Error::Checkpoint(format!("{prefix} layer widths do not chain")));
        }
    }
    Ok(layers)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let tag = r.u32()?;
    let variant = Variant::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown variant tag {tag}")))?;
    let version = r.u32()?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { expected: SCHEMA_VERSION, found: version });
    }
    let count = r.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if tensors.insert(name.clone(), Tensor { shape, values }).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let rho = vector(&mut tensors, "tslm.rho")?;
    let ehr_encoder = stack(&mut tensors, "ehr_encoder")?;
    let projection = stack(&mut tensors, "projection")?;
    let gate = GateParams { weight: vector(&mut tensors, "gate.weight")?, bias: scalar(&mut tensors, "gate.bias")? };
    let attention =
        AttentionParams { score: vector(&mut tensors, "attention.score")?, bias: scalar(&mut tensors, "attention.bias")? };
    let concat = dense(&mut tensors, "concat")?;
    let head = dense(&mut tensors, "head")?;
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }

    let dynamic_dim = rho.len();
    let input = ehr_encoder[0].in_dim();
    let static_dim = input
        .checked_sub(4 * dynamic_dim)
        .ok_or_else(|| Error::Checkpoint(format!("encoder input {input} too small for {dynamic_dim} dynamic variables")))?;
    let d = head.in_dim();
    let consistent = ehr_encoder.last().map(DenseParams::out_dim) == Some(d)
        && projection.last().map(DenseParams::out_dim) == Some(d)
        && gate.weight.len() == 2 * d
        && attention.score.len() == d
        && concat.in_dim() == 2 * d
        && concat.out_dim() == d
        && head.out_dim() == 1;
    if !consistent {
        return Err(Error::Checkpoint("tensor shapes disagree on the latent dimension".into()));
    }
    Ok(ModelParams {
        variant,
        layout: Layout { static_dim, dynamic_dim },
        tslm: TslmParams { rho },
        ehr_encoder,
        projection,
        gate,
        attention,
        concat,
        head,
    })
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(&fs::read(path)?)
}
