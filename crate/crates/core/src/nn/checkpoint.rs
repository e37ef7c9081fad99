//! `dnz1` model checkpoints.
//!
//! Layout: the ASCII line `dnz1 <n_layers>\n` (residual output) or
//! `dnz1 <n_layers> direct\n` (no residual), then for every layer the line
//! `<out> <in> 3 3\n` followed by `out*in*9` kernel taps and `out` biases as
//! little-endian `f32`. Models are leaky-ReLU with slope 0.1.

use std::path::Path;

use super::model::{Denoiser, DenoiserModel};
use crate::error::{Error, Result};
use crate::raster::write_atomic;

const LEAK: f64 = 0.1;

pub fn encode_checkpoint(model: &DenoiserModel) -> Result<Vec<u8>> {
    if model.leak != LEAK {
        return Err(Error::Format("dnz1 stores models with leak 0.1 only".into()));
    }
    let suffix = if model.residual { "" } else { " direct" };
    let mut out = format!("dnz1 {}{suffix}\n", model.n_layers()).into_bytes();
    let p = model.params();
    for l in 0..model.n_layers() {
        let (cin, cout) = model.layer_io(l);
        out.extend_from_slice(format!("{cout} {cin} 3 3\n").as_bytes());
        let (w0, _) = model.weight_range(l);
        let (_, b1) = model.bias_range(l);
        for &v in &p[w0..b1] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("dnz1 header line is not newline-terminated".into()))?;
    *pos += nl + 1;
    std::str::from_utf8(&rest[..nl]).map_err(|_| Error::Format("dnz1 header is not ASCII".into()))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DenoiserModel> {
    let mut pos = 0;
    let head = read_line(bytes, &mut pos)?;
    let bad_head = || Error::Format(format!("bad dnz1 header `{head}`"));
    let fields: Vec<&str> = head.split(' ').collect();
    let residual = match fields.as_slice() {
        ["dnz1", _] => true,
        ["dnz1", _, "direct"] => false,
        _ => return Err(bad_head()),
    };
    let n_layers: usize = fields[1].parse().ok().filter(|&n| n >= 1).ok_or_else(bad_head)?;
    let mut widths = vec![1usize];
    let mut values = Vec::new();
    for l in 0..n_layers {
        let line = read_line(bytes, &mut pos)?;
        let dims: Vec<usize> = line.split(' ').map(|s| s.parse().ok()).collect::<Option<_>>().unwrap_or_default();
        if dims.len() != 4 || dims[2] != 3 || dims[3] != 3 || dims[1] != widths[l] || dims[0] == 0 {
            return Err(Error::Format(format!("bad shape line `{line}` for layer {l}")));
        }
        let (cout, cin) = (dims[0], dims[1]);
        widths.push(cout);
        let n = cout * cin * 9 + cout;
        let end = pos + 4 * n;
        if end > bytes.len() {
            return Err(Error::Format(format!("dnz1 layer {l} is truncated")));
        }
        values.extend(
            bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
        );
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the last dnz1 layer".into()));
    }
    if *widths.last().unwrap() != 1 {
        return Err(Error::Format("dnz1 model must end in a single channel".into()));
    }
    let mut model = DenoiserModel::zeros(&widths, LEAK, residual);
    model.params_mut().copy_from_slice(&values);
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &DenoiserModel) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserModel> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = DenoiserModel::standard(4);
        // f32-representable values survive exactly
        for p in m.params_mut() {
            *p = *p as f32 as f64;
        }
        let bytes = encode_checkpoint(&m).unwrap();
        assert!(bytes.starts_with(b"dnz1 5\n16 1 3 3\n"));
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_malformed_input() {
        let bytes = encode_checkpoint(&DenoiserModel::new(&[1, 2, 1], LEAK, true, 0)).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"dnz2 1\n").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        assert!(decode_checkpoint(b"dnz1 1 skip\n").is_err());
        let leaky = DenoiserModel::new(&[1, 2, 1], 0.2, true, 0);
        assert!(matches!(encode_checkpoint(&leaky), Err(Error::Format(_))));
    }

    #[test]
    fn direct_models_keep_their_flag() {
        let mut m = DenoiserModel::new(&[1, 3, 1], LEAK, false, 9);
        for p in m.params_mut() {
            *p = *p as f32 as f64;
        }
        let bytes = encode_checkpoint(&m).unwrap();
        assert!(bytes.starts_with(b"dnz1 2 direct\n3 1 3 3\n"));
        let back = decode_checkpoint(&bytes).unwrap();
        assert!(!back.residual);
        assert_eq!(back, m);
    }
}
