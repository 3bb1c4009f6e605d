//! Binary parameter checkpoints.
//!
//! Layout, all integers `u32` little-endian, all reals `f64` little-endian:
//!
//! ```text
//! "DDRNN1"
//! D_in D_h C H W
//! for l in SE, SW, NE, NW:  U (D_h*D_in)  W (D_h*D_h)  V (C*D_h)  b (D_h)  z (D_h)
//! c (C)
//! ```
//!
//! Matrices are row-major. A full model checkpoint appends an embedder
//! section:
//!
//! ```text
//! "EMBED1"
//! patch recurrence dense attention average_preds shared_z directions store_pairwise_limit
//! E (D_in * patch*patch*3)  e (D_in)
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::ddrnn::{DdRnnConfig, DdRnnParams, Dims};
use crate::error::{Error, Result};
use crate::grid_dag::GridShape;
use crate::model::{LabelingModel, ModelConfig, ModelParams};
use crate::numerics::{lit, Scalar};

pub const DDRNN_MAGIC: &[u8; 6] = b"DDRNN1";
pub const EMBED_MAGIC: &[u8; 6] = b"EMBED1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_reals<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for v in values {
        out.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
    }
}

fn get_magic(r: &mut Cursor<&[u8]>, magic: &[u8; 6]) -> Result<()> {
    let mut buf = [0u8; 6];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("checkpoint", "truncated magic"))?;
    if &buf != magic {
        return Err(Error::format(
            "checkpoint",
            format!("expected magic {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    Ok(())
}

fn get_u32(r: &mut Cursor<&[u8]>) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("checkpoint", "truncated header"))?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn get_reals<T: Scalar>(r: &mut Cursor<&[u8]>, dst: &mut [T]) -> Result<()> {
    let mut buf = [0u8; 8];
    for v in dst.iter_mut() {
        r.read_exact(&mut buf)
            .map_err(|_| Error::format("checkpoint", "truncated tensor data"))?;
        *v = lit(f64::from_le_bytes(buf));
    }
    Ok(())
}

fn encode_rnn<T: Scalar>(out: &mut Vec<u8>, params: &DdRnnParams<T>, grid: GridShape) -> Result<()> {
    let d = params.check()?;
    out.extend_from_slice(DDRNN_MAGIC);
    for v in [d.input, d.hidden, d.classes, grid.height, grid.width] {
        put_u32(out, v)?;
    }
    for (_, t) in params.tensors() {
        put_reals(out, t);
    }
    Ok(())
}

fn decode_rnn<T: Scalar>(r: &mut Cursor<&[u8]>) -> Result<(DdRnnParams<T>, GridShape)> {
    get_magic(r, DDRNN_MAGIC)?;
    let dims = Dims {
        input: get_u32(r)?,
        hidden: get_u32(r)?,
        classes: get_u32(r)?,
    };
    let grid = GridShape::new(get_u32(r)?, get_u32(r)?);
    let per_dir = dims.hidden * (dims.input + dims.hidden + dims.classes + 2);
    let reals = 4u128 * per_dir as u128 + dims.classes as u128;
    let remaining = (r.get_ref().len() as u64).saturating_sub(r.position()) as u128;
    if reals * 8 > remaining {
        return Err(Error::format("checkpoint", "header announces more data than present"));
    }
    let mut params = DdRnnParams::zeros(dims);
    for (_, t) in params.tensors_mut() {
        get_reals(r, t)?;
    }
    Ok((params, grid))
}

/// Encodes DD-RNN parameters trained on grids of shape `grid`.
pub fn encode_ddrnn<T: Scalar>(params: &DdRnnParams<T>, grid: GridShape) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_rnn(&mut out, params, grid)?;
    Ok(out)
}

pub fn decode_ddrnn<T: Scalar>(bytes: &[u8]) -> Result<(DdRnnParams<T>, GridShape)> {
    decode_rnn(&mut Cursor::new(bytes))
}

pub fn encode_model<T: Scalar>(model: &LabelingModel<T>) -> Result<Vec<u8>> {
    let cfg = model.config();
    let mut out = Vec::new();
    encode_rnn(&mut out, &model.params.rnn, cfg.grid)?;
    out.extend_from_slice(EMBED_MAGIC);
    let r = &cfg.rnn;
    for v in [
        cfg.patch,
        r.recurrence as usize,
        r.dense as usize,
        r.attention as usize,
        r.average_preds as usize,
        r.shared_z as usize,
        r.directions,
        r.store_pairwise_limit.min(u32::MAX as usize),
    ] {
        put_u32(&mut out, v)?;
    }
    put_reals(&mut out, model.params.embed_w.as_slice());
    put_reals(&mut out, &model.params.embed_b);
    Ok(out)
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<LabelingModel<T>> {
    let mut r = Cursor::new(bytes);
    let (rnn, grid) = decode_rnn::<T>(&mut r)?;
    get_magic(&mut r, EMBED_MAGIC)?;
    let mut flags = [0usize; 8];
    for f in flags.iter_mut() {
        *f = get_u32(&mut r)?;
    }
    let [patch, recurrence, dense, attention, average_preds, shared_z, directions, store_pairwise_limit] = flags;
    let dims = rnn.dims();
    let config = ModelConfig {
        grid,
        patch,
        feature_dim: dims.input,
        hidden_dim: dims.hidden,
        classes: dims.classes,
        rnn: DdRnnConfig {
            recurrence: recurrence != 0,
            dense: dense != 0,
            attention: attention != 0,
            average_preds: average_preds != 0,
            shared_z: shared_z != 0,
            directions,
            store_pairwise_limit,
        },
        init_scale: 1.0,
    };
    config.validate()?;
    let mut params = ModelParams::zeros(&config);
    params.rnn = rnn;
    get_reals(&mut r, params.embed_w.as_mut_slice())?;
    get_reals(&mut r, &mut params.embed_b)?;
    if (r.position() as usize) != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    if !params.is_finite() {
        return Err(Error::format("checkpoint", "non-finite parameter"));
    }
    LabelingModel::from_params(config, params)
}

pub fn save_model<T: Scalar>(model: &LabelingModel<T>, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_model(model)?)?)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<LabelingModel<T>> {
    decode_model(&fs::read(path)?)
}
