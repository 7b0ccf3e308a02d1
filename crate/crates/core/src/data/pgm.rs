use std::fs;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Decodes a binary (P5) PGM into (width, height, pixels in [0, 1]).
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f32>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("unexpected end of header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (magic P5)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse::<usize>().map_err(|_| format!("bad {what} `{t}`"))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("invalid header {w}x{h} maxval {maxval}"));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = w * h * width;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != need {
        return Err(format!("raster has {} bytes, expected {need}", raster.len()));
    }
    let maxval = maxval as f32;
    let pixels = if width == 1 {
        raster.iter().map(|&b| (b as f32 / maxval).min(1.0)).collect()
    } else {
        raster.chunks(2).map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / maxval).min(1.0)).collect()
    };
    Ok((w, h, pixels))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Reads `dir/<class>/*.pgm`. Classes are the sorted subdirectory names;
/// every image must have the same size.
pub fn ingest_pgm(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let ingest = |path: &Path, message: String| Error::Ingestion { path: path.to_path_buf(), message };
    let mut names = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut size: Option<(usize, usize)> = None;
    for class_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let label = names.len();
        names.push(class_dir.file_name().unwrap().to_string_lossy().into_owned());
        for file in sorted_entries(&class_dir)? {
            if file.extension().is_none_or(|e| e != "pgm") {
                continue;
            }
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let (w, h, pixels) = parse_pgm(&bytes).map_err(|m| ingest(&file, m))?;
            match size {
                Some(s) if s != (w, h) => {
                    return Err(ingest(&file, format!("image is {w}x{h}, earlier images are {}x{}", s.0, s.1)))
                }
                _ => size = Some((w, h)),
            }
            data.extend(pixels);
            labels.push(label);
        }
    }
    let Some((w, h)) = size else {
        return Err(ingest(dir, "no .pgm files found".into()));
    };
    let images = Tensor::new(vec![labels.len(), 1, h, w], data)?;
    Dataset::new(images, labels, names).map_err(|e| ingest(dir, e.to_string()))
}
