//! Model file format.
//!
//! Layout: magic "PRTX", format version u8, network id u8 (0 = IM,
//! 1 = NM), stage index u8, then per conv layer in graph order: name
//! length (u32 LE) + name bytes, c_in and c_out as u32 LE, then weights
//! then bias as f32 LE in row-major order. A CRC32 (IEEE) over all
//! preceding bytes closes the file.

use super::{ModelParams, NetKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::ops::ConvParams;
use crate::tensor::{Shape4, Tensor};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PRTX";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone)]
pub struct RawLayer {
    pub name: String,
    pub c_in: u32,
    pub c_out: u32,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct RawModel {
    pub kind: NetKind,
    pub stage: u8,
    pub layers: Vec<RawLayer>,
}

impl RawModel {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

pub fn encode_model(
    spec: &NetworkSpec,
    params: &ModelParams,
    stage: u8,
) -> Result<Vec<u8>> {
    params.validate(spec)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    buf.push(spec.kind.id());
    buf.push(stage);
    for name in spec.conv_names() {
        let p = &params.by_name[name];
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(p.c_in() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.c_out() as u32).to_le_bytes());
        for v in p.weights.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &p.bias {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn write_model(
    path: &Path,
    spec: &NetworkSpec,
    params: &ModelParams,
    stage: u8,
) -> Result<()> {
    let bytes = encode_model(spec, params, stage)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::ModelFormat("file truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<RawModel> {
    if bytes.len() < 4 + 3 + 4 {
        return Err(Error::ModelFormat("file too short".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ModelFormat(format!(
            "checksum mismatch: stored {stored:08x}, computed {computed:08x}"
        )));
    }
    let mut cur = Cursor { data: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = cur.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let kind = NetKind::from_id(cur.take(1)?[0])?;
    let stage = cur.take(1)?[0];
    let mut layers = Vec::new();
    while cur.pos < body.len() {
        let name_len = cur.u32()? as usize;
        if name_len > 1024 {
            return Err(Error::ModelFormat(format!("implausible layer name length {name_len}")));
        }
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::ModelFormat("layer name is not valid UTF-8".into()))?;
        let c_in = cur.u32()?;
        let c_out = cur.u32()?;
        if c_in == 0 || c_out == 0 || (c_in as usize) * (c_out as usize) > (1 << 24) {
            return Err(Error::ModelFormat(format!("implausible layer dims {c_in}x{c_out}")));
        }
        let weights = cur.f32s(c_out as usize * c_in as usize)?;
        let bias = cur.f32s(c_out as usize)?;
        layers.push(RawLayer { name, c_in, c_out, weights, bias });
    }
    if layers.is_empty() {
        return Err(Error::ModelFormat("model has no layers".into()));
    }
    Ok(RawModel { kind, stage, layers })
}

pub fn read_model(path: &Path) -> Result<RawModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Converts a raw model into validated [`ModelParams`] for `spec`. Layer
/// names, order, and shapes must all match.
pub fn params_from_raw(raw: &RawModel, spec: &NetworkSpec) -> Result<ModelParams> {
    if raw.kind != spec.kind {
        return Err(Error::ModelFormat(format!(
            "model is a {} network, expected {}",
            raw.kind.label(),
            spec.kind.label()
        )));
    }
    let expected = spec.conv_names();
    if raw.layers.len() != expected.len() {
        return Err(Error::ModelFormat(format!(
            "model has {} layers, spec expects {}",
            raw.layers.len(),
            expected.len()
        )));
    }
    let mut by_name = BTreeMap::new();
    for (layer, want) in raw.layers.iter().zip(expected) {
        if layer.name != want {
            return Err(Error::ModelFormat(format!(
                "layer order mismatch: found {}, expected {want}",
                layer.name
            )));
        }
        let (c_in, c_out) = (layer.c_in as usize, layer.c_out as usize);
        let weights = Tensor::from_vec(Shape4::new(c_out, c_in, 1, 1), layer.weights.clone())
            .map_err(|e| Error::ModelFormat(format!("layer {}: {e}", layer.name)))?;
        let params = ConvParams::new(weights, layer.bias.clone())
            .map_err(|e| Error::ModelFormat(format!("layer {}: {e}", layer.name)))?;
        by_name.insert(layer.name.clone(), params);
    }
    let params = ModelParams { by_name };
    params.validate(spec).map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_im_net, build_nm_net};

    #[test]
    fn roundtrip_preserves_params() {
        let spec = build_im_net(4);
        let params = ModelParams::init_msra(&spec, 42);
        let bytes = encode_model(&spec, &params, 2).unwrap();
        let raw = decode_model(&bytes).unwrap();
        assert_eq!(raw.kind, NetKind::Im);
        assert_eq!(raw.stage, 2);
        assert_eq!(
            raw.layers.iter().map(|l| l.name.as_str()).collect::<Vec<_>>(),
            vec!["Conv-BP1", "Conv-BP2", "Conv-BP3", "Conv-BP4", "Conv-DR1", "Conv6"]
        );
        let back = params_from_raw(&raw, &spec).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let spec = build_nm_net(4);
        let params = ModelParams::init_msra(&spec, 1);
        let bytes = encode_model(&spec, &params, 1).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 6] {
            assert!(decode_model(&bytes[..cut]).is_err(), "cut at {cut} accepted");
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let spec = build_nm_net(4);
        let params = ModelParams::init_msra(&spec, 1);
        let mut bytes = encode_model(&spec, &params, 1).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = decode_model(&bytes).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn wrong_network_kind_is_rejected() {
        let im = build_im_net(4);
        let nm = build_nm_net(4);
        let params = ModelParams::init_msra(&im, 5);
        let bytes = encode_model(&im, &params, 1).unwrap();
        let raw = decode_model(&bytes).unwrap();
        assert!(params_from_raw(&raw, &nm).is_err());
    }
}
