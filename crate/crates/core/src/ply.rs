//! Binary little-endian PLY storage for Gaussian scenes.
//!
//! Each vertex carries 14 `float` properties in a fixed order; the header
//! records the format version in a comment line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{GaussianScene, Scalar};

pub const FORMAT_VERSION: &str = "gauss-distill-ply-v1";

pub const PROPERTIES: [&str; 14] = [
    "x",
    "y",
    "z",
    "log_sx",
    "log_sy",
    "log_sz",
    "qw",
    "qx",
    "qy",
    "qz",
    "opacity_logit",
    "r",
    "g",
    "b",
];

const RECORD_BYTES: usize = PROPERTIES.len() * 4;

pub fn header(count: usize) -> String {
    let mut h = String::new();
    h.push_str("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("comment {FORMAT_VERSION}\n"));
    h.push_str(&format!("element vertex {count}\n"));
    for p in PROPERTIES {
        h.push_str(&format!("property float {p}\n"));
    }
    h.push_str("end_header\n");
    h
}

pub fn write_ply<T: Scalar, W: Write>(scene: &GaussianScene<T>, mut out: W) -> std::io::Result<()> {
    out.write_all(header(scene.len()).as_bytes())?;
    let mut record = [0u8; RECORD_BYTES];
    for i in 0..scene.len() {
        let values = scene.positions[i]
            .iter()
            .chain(&scene.log_scales[i])
            .chain(&scene.rotations[i])
            .chain(std::iter::once(&scene.opacity_logits[i]))
            .chain(&scene.colors[i]);
        for (k, v) in values.enumerate() {
            record[k * 4..k * 4 + 4].copy_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        out.write_all(&record)?;
    }
    out.flush()
}

pub fn export_ply<T: Scalar>(scene: &GaussianScene<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(scene, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn import_ply(path: impl AsRef<Path>) -> Result<GaussianScene<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file), path)
}

/// Parses a scene from `input`; `path` only labels errors.
pub fn read_ply<R: BufRead>(mut input: R, path: &Path) -> Result<GaussianScene<f32>> {
    let malformed = |element: Option<usize>, message: String| Error::Ply {
        path: path.to_path_buf(),
        element,
        message,
    };

    let mut lines = Vec::new();
    loop {
        let mut line = Vec::new();
        let n = input
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(malformed(None, "unexpected end of file inside header".into()));
        }
        if line.len() > 4096 {
            return Err(malformed(None, "header line too long".into()));
        }
        let text = String::from_utf8(line)
            .map_err(|_| malformed(None, "header is not valid UTF-8".into()))?;
        let text = text.trim_end_matches(['\n', '\r']).to_string();
        let done = text == "end_header";
        lines.push(text);
        if done {
            break;
        }
    }

    let mut it = lines.iter();
    if it.next().map(String::as_str) != Some("ply") {
        return Err(malformed(None, "missing 'ply' magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    for line in it {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other @ ..] => {
                return Err(malformed(None, format!("unsupported format {}", other.join(" "))))
            }
            ["comment", version] if version.starts_with("gauss-distill-ply-") => {
                if *version != FORMAT_VERSION {
                    return Err(malformed(
                        None,
                        format!("format version {version}, expected {FORMAT_VERSION}"),
                    ));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(malformed(None, "duplicate vertex element".into()));
                }
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| malformed(None, format!("bad vertex count '{n}'")))?,
                );
            }
            ["element", name, _] => {
                return Err(malformed(None, format!("unexpected element '{name}'")))
            }
            ["property", "float", name] => props.push(name.to_string()),
            ["property", ty, name] => {
                return Err(malformed(
                    None,
                    format!("property '{name}' has type '{ty}', expected float"),
                ))
            }
            ["end_header"] => {}
            _ => return Err(malformed(None, format!("unrecognized header line '{line}'"))),
        }
    }
    let count = count.ok_or_else(|| malformed(None, "no vertex element".into()))?;
    if props != PROPERTIES {
        return Err(malformed(
            None,
            format!("vertex properties {props:?} do not match {PROPERTIES:?}"),
        ));
    }

    let mut scene = GaussianScene::with_capacity(count.min(1 << 24));
    let mut record = [0u8; RECORD_BYTES];
    for i in 0..count {
        input
            .read_exact(&mut record)
            .map_err(|_| malformed(Some(i), "truncated vertex data".into()))?;
        let mut v = [0f32; 14];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = f32::from_le_bytes(record[k * 4..k * 4 + 4].try_into().unwrap());
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(malformed(Some(i), "non-finite property value".into()));
        }
        scene.positions.push([v[0], v[1], v[2]]);
        scene.log_scales.push([v[3], v[4], v[5]]);
        scene.rotations.push([v[6], v[7], v[8], v[9]]);
        scene.opacity_logits.push(v[10]);
        scene.colors.push([v[11], v[12], v[13]]);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(malformed(None, "trailing bytes after vertex data".into()));
    }
    Ok(scene)
}
