//! Input images: 8-bit binary PGM scaled to [0, 1], or raw little-endian
//! float32 blobs holding exactly the Input layer's shape.

use std::fs;
use std::path::Path;

use edgesplit::model::TensorSpec;
use edgesplit::runtime::decode_f32s;
use edgesplit::Tensor32;

use crate::CliError;

/// Parses a binary (`P5`) PGM with maxval <= 255.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII PGM header")?);
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported image magic {:?}, expected P5", fields[0]));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad PGM {what} {s:?}"));
    let (w, h, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(format!("PGM maxval {maxval} is not an 8-bit range"));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[pos + 1..];
    if raster.len() != w * h {
        return Err(format!("PGM raster holds {} bytes, expected {w}x{h}", raster.len()));
    }
    Ok((w, h, raster.iter().map(|&b| b as f32 / maxval as f32).collect()))
}

pub fn encode_pgm(w: usize, h: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Reads an input tensor for `spec`. A grayscale image whose size matches
/// the last two dims is replicated over every leading channel.
pub fn read_input(path: &Path, spec: &TensorSpec) -> Result<Tensor32, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: String| CliError::validation(format!("{}: {msg}", path.display()));
    let data = if bytes.starts_with(b"P5") {
        let (w, h, px) = parse_pgm(&bytes).map_err(bad)?;
        let d = &spec.dims;
        if d.len() < 2 || d[d.len() - 1] != w || d[d.len() - 2] != h {
            return Err(bad(format!("{w}x{h} image does not fit input shape {spec}")));
        }
        let planes = spec.numel() / (w * h);
        px.repeat(planes)
    } else {
        decode_f32s(&bytes)
            .filter(|d| d.len() == spec.numel())
            .ok_or_else(|| bad(format!("{} bytes are not a float32 tensor of shape {spec}", bytes.len())))?
    };
    Tensor32::new(spec.clone(), data).map_err(|e| bad(e.to_string()))
}
