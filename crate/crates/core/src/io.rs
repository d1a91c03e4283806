//! Raster file formats and atomic file writes.
//!
//! Two raster formats are supported:
//!
//! * binary PGM (`P5`), 8-bit when `maxval < 256` and 16-bit big-endian
//!   otherwise; intensities are loaded verbatim as `f64`.
//! * a raw little-endian `f32` grid (`*.f32`, row-major) with a JSON sidecar
//!   at `<path>.json` holding `{"width": W, "height": H}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imagecore::ImageGrid;
use crate::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<ImageGrid> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut pos = 0;
    if next_token(bytes, &mut pos) != Some(b"P5") {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| bad("truncated header"))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("non-numeric header field"))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated raster"))?;
    let data: Vec<f64> = if bps == 1 {
        raster.iter().map(|&b| b as f64).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    ImageGrid::new(width, height, data)
}

/// Encodes intensities as 16-bit PGM, rounding and clamping to `[0, maxval]`.
pub fn encode_pgm16(image: &ImageGrid, maxval: u16) -> Vec<u8> {
    let maxval = maxval.max(256);
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    out.reserve(image.data().len() * 2);
    for &v in image.data() {
        let q = v.round().clamp(0.0, maxval as f64) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub width: usize,
    pub height: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_f32_grid(image: &ImageGrid) -> Vec<u8> {
    image.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn write_f32_grid(path: &Path, image: &ImageGrid) -> Result<()> {
    write_atomic(path, &encode_f32_grid(image))?;
    write_json_atomic(
        &sidecar_path(path),
        &GridSidecar {
            width: image.width(),
            height: image.height(),
        },
    )
}

pub fn read_f32_grid(path: &Path) -> Result<ImageGrid> {
    let side: GridSidecar = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path)?;
    if bytes.len() != side.width * side.height * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {} bytes for {}x{} grid, found {}",
                side.width * side.height * 4,
                side.width,
                side.height,
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ImageGrid::new(side.width, side.height, data)
}

pub fn write_pgm16(path: &Path, image: &ImageGrid, maxval: u16) -> Result<()> {
    write_atomic(path, &encode_pgm16(image, maxval))
}

/// Loads a raster by extension: `.pgm` or `.f32`.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => decode_pgm(&fs::read(path)?, path),
        Some("f32") => read_f32_grid(path),
        _ => Err(Error::format(path, "unsupported image extension (want .pgm or .f32)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm16_roundtrip() {
        let img = ImageGrid::new(3, 2, vec![0.0, 1.0, 16383.0, 300.0, 65535.0, 7.0]).unwrap();
        let bytes = encode_pgm16(&img, 65535);
        let back = decode_pgm(&bytes, Path::new("mem.pgm")).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm8_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 200, 255]);
        let img = decode_pgm(&bytes, Path::new("mem.pgm")).unwrap();
        assert_eq!(img.data(), &[0.0, 10.0, 200.0, 255.0]);
    }

    #[test]
    fn truncated_pgm_rejected() {
        let bytes = b"P5\n4 4\n65535\n\x00\x01".to_vec();
        assert!(matches!(
            decode_pgm(&bytes, Path::new("t.pgm")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn f32_grid_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.f32");
        let img = ImageGrid::new(2, 3, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap();
        write_f32_grid(&path, &img).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(read_image(&path).unwrap(), img);
    }
}
