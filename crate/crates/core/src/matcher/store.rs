//! Model persistence: one JSON header line, then the parameters as a
//! little-endian 64-bit float block in declared order
//! (token table, text projection, [hidden], image projection).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ImageHead, MatcherModel, ModelDims};
use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arch: String,
    img_h: usize,
    img_w: usize,
    channels: usize,
    pool_factor: usize,
    vocab: usize,
    token_dim: usize,
    embed_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_width: Option<usize>,
    temperature: f64,
    seed: u64,
}

const FORMAT: &str = "trojanlab-matcher";

pub fn save_model(model: &MatcherModel, path: &Path) -> Result<()> {
    let dims = &model.dims;
    let header = Header {
        format: FORMAT.into(),
        version: 1,
        arch: model.arch_tag().into(),
        img_h: dims.img_h,
        img_w: dims.img_w,
        channels: dims.channels,
        pool_factor: dims.pool_factor,
        vocab: dims.vocab,
        token_dim: dims.token_dim,
        embed_dim: dims.embed_dim,
        hidden_width: model.head.hidden_width(),
        temperature: model.temperature,
        seed: model.seed,
    };
    let mut bytes = serde_json::to_string(&header)
        .map_err(|e| Error::Format(format!("model header encode: {e}")))?
        .into_bytes();
    bytes.push(b'\n');
    for tensor in param_order(model) {
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MatcherModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("model file: missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Format(format!("model header parse: {e}")))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::Format(format!(
            "model file: unsupported format {:?} v{}",
            header.format, header.version
        )));
    }
    let dims = ModelDims {
        img_h: header.img_h,
        img_w: header.img_w,
        channels: header.channels,
        pool_factor: header.pool_factor,
        vocab: header.vocab,
        token_dim: header.token_dim,
        embed_dim: header.embed_dim,
    };
    dims.validate()?;

    let mut cursor = newline + 1;
    let mut take = |shape: Vec<usize>| -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        let end = cursor + numel * 8;
        let chunk = bytes
            .get(cursor..end)
            .ok_or_else(|| Error::Format("model file: truncated parameter block".into()))?;
        cursor = end;
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::from_vec(shape, data)
    };

    let token_table = take(vec![dims.vocab, dims.token_dim])?;
    let text_proj = take(vec![dims.token_dim, dims.embed_dim])?;
    let p = dims.feature_len();
    let head = match header.arch.as_str() {
        "linear" => ImageHead::Linear {
            proj: take(vec![p, dims.embed_dim])?,
        },
        "tanh128" => {
            let h = header
                .hidden_width
                .ok_or_else(|| Error::Format("model file: tanh arch without hidden_width".into()))?;
            ImageHead::Tanh {
                hidden: take(vec![p, h])?,
                proj: take(vec![h, dims.embed_dim])?,
            }
        }
        other => return Err(Error::Format(format!("model file: unknown arch {other:?}"))),
    };
    if cursor != bytes.len() {
        return Err(Error::Format(format!(
            "model file: {} trailing bytes",
            bytes.len() - cursor
        )));
    }
    if header.temperature <= 0.0 {
        return Err(Error::Format("model file: non-positive temperature".into()));
    }
    Ok(MatcherModel {
        dims,
        token_table,
        text_proj,
        head,
        temperature: header.temperature,
        seed: header.seed,
    })
}

fn param_order(model: &MatcherModel) -> Vec<&Tensor> {
    let mut order = vec![&model.token_table, &model.text_proj];
    match &model.head {
        ImageHead::Linear { proj } => order.push(proj),
        ImageHead::Tanh { hidden, proj } => {
            order.push(hidden);
            order.push(proj);
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::test_support::{random_model, tiny_dims};

    #[test]
    fn round_trip_is_bit_exact_for_both_archs() {
        let dir = tempfile::tempdir().unwrap();
        for (tanh, name) in [(false, "a.model"), (true, "b.model")] {
            let model = random_model(tiny_dims(), tanh, 77);
            let path = dir.path().join(name);
            save_model(&model, &path).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(loaded, model);
        }
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let model = random_model(tiny_dims(), false, 78);
        let path = dir.path().join("m.model");
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 16);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format(_))));
    }

    #[test]
    fn compat_check_rejects_wrong_world() {
        let model = random_model(tiny_dims(), false, 79);
        let mut other = tiny_dims();
        other.img_h = 16;
        other.img_w = 16;
        assert!(matches!(
            model.validate_compat(&other, "linear"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            model.validate_compat(&tiny_dims(), "tanh128"),
            Err(Error::Config(_))
        ));
        assert!(model.validate_compat(&tiny_dims(), "linear").is_ok());
    }
}
