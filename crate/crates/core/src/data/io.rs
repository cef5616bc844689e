//! Binary PGM images and tab-separated manifests.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, pixels)).map_err(|e| Error::io(path, e))
}

/// Parses an 8-bit P5 image into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
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
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        token()?.parse().map_err(|_| format!("bad {what}"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported; expected 255"));
    }
    let start = pos + 1;
    let n = width * height;
    if n == 0 || bytes.len() < start + n {
        return Err(format!("expected {n} pixels"));
    }
    Ok((width, height, bytes[start..start + n].to_vec()))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    })
}

/// One manifest row: an image path relative to the manifest and its text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image: PathBuf,
    pub text: String,
}

fn check_field(field: &str, what: &str) -> std::result::Result<(), String> {
    if field.is_empty() {
        return Err(format!("empty {what}"));
    }
    if field.contains(['\t', '\n', '\r']) {
        return Err(format!(
            "{what} `{}` contains a tab or line break",
            field.escape_debug()
        ));
    }
    Ok(())
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let image = row.image.to_string_lossy();
        check_field(&image, "image path")
            .and_then(|_| check_field(&row.text, "transcription"))
            .map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })?;
        out.push_str(&image);
        out.push('\t');
        out.push_str(&row.text);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(err(format!(
                    "expected 2 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            check_field(fields[0], "image path").map_err(&err)?;
            check_field(fields[1], "transcription").map_err(&err)?;
            Ok(ManifestRow {
                image: PathBuf::from(fields[0]),
                text: fields[1].to_string(),
            })
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}
