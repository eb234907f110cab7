//! Little-endian binary checkpoint format.
//!
//! ```text
//! magic "SHARPCK\0" | u32 version
//! u8 encoder | u8 activation | u8 projector activation | u8 bias
//! u32 input | u32 hidden | u32 projector | u32 heads | f64 attention slope
//! u32 tensor count, then per tensor: u32 rows | u32 cols | f64 values
//! ```

use std::path::Path;

use super::{Activation, EncoderKind, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"SHARPCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn encoder_code(k: EncoderKind) -> u8 {
    match k {
        EncoderKind::Gcn => 0,
        EncoderKind::Gat => 1,
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Prelu => 1,
        Activation::Elu => 2,
    }
}

fn corrupt(what: &str) -> Error {
    Error::Data(format!("corrupt checkpoint: {what}"))
}

pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let s = model.spec();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&[
        encoder_code(s.encoder),
        activation_code(s.activation),
        activation_code(s.projector_activation),
        u8::from(s.bias),
    ]);
    for d in [s.input_dim, s.hidden_dim, s.projector_dim, s.heads] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&s.attention_slope.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&(p.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols() as u32).to_le_bytes());
        for v in p.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(&format!("truncated at {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unknown checkpoint version {version}")));
    }
    let encoder = match r.u8("encoder")? {
        0 => EncoderKind::Gcn,
        1 => EncoderKind::Gat,
        c => return Err(corrupt(&format!("encoder code {c}"))),
    };
    let mut act = |what: &str| -> Result<Activation> {
        match r.u8(what)? {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Prelu),
            2 => Ok(Activation::Elu),
            c => Err(corrupt(&format!("{what} code {c}"))),
        }
    };
    let activation = act("activation")?;
    let projector_activation = act("projector activation")?;
    let bias = match r.u8("bias")? {
        0 => false,
        1 => true,
        c => return Err(corrupt(&format!("bias flag {c}"))),
    };
    let input_dim = r.u32("input_dim")? as usize;
    let hidden_dim = r.u32("hidden_dim")? as usize;
    let projector_dim = r.u32("projector_dim")? as usize;
    let heads = r.u32("heads")? as usize;
    let attention_slope = r.f64("attention slope")?;
    let spec = ModelSpec {
        encoder,
        input_dim,
        hidden_dim,
        projector_dim,
        activation,
        projector_activation,
        heads,
        attention_slope,
        bias,
    };
    spec.validate().map_err(|e| corrupt(&e.to_string()))?;
    let count = r.u32("tensor count")? as usize;
    if count != spec.param_shapes().len() {
        return Err(corrupt(&format!("{count} tensors")));
    }
    let mut params = Vec::with_capacity(count);
    for k in 0..count {
        let rows = r.u32("tensor shape")? as usize;
        let cols = r.u32("tensor shape")? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| corrupt(&format!("tensor {k} size")))?;
        let raw = r.take(n * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Model::from_parts(spec, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &write_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(&fsutil::read(path)?)
}
