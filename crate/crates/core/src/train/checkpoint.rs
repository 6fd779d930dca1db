//! Checkpoints: a human-readable `model.manifest` listing hyperparameters,
//! metadata and every parameter's shape and byte range, plus `model.bin`
//! holding the parameters as little-endian f64 in manifest order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::baselines::vanilla::VanillaConfig;
use crate::config::value;
use crate::decoder::{DecoderConfig, SolvePath};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{Model, Network};

pub const MANIFEST_FILE: &str = "model.manifest";
pub const BLOB_FILE: &str = "model.bin";
const MAGIC: &str = "hpe-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Free-form training metadata, kept in order.
    pub meta: Vec<(String, String)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn path_name(p: SolvePath) -> &'static str {
    match p {
        SolvePath::Auto => "auto",
        SolvePath::Direct => "direct",
        SolvePath::Woodbury => "woodbury",
    }
}

/// Manifest text and parameter blob.
pub fn encode(ckpt: &Checkpoint) -> Result<(String, Vec<u8>)> {
    let model = &ckpt.model;
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC} {VERSION}");
    let _ = writeln!(m, "kind {}", model.kind());
    match &model.net {
        Network::Hpe { cfg, .. } => {
            let _ = writeln!(m, "n {}\nd {}\nlayers {}\nheads {}\nd_ff {}", cfg.n, cfg.d, cfg.layers, cfg.heads, cfg.d_ff);
        }
        Network::Vanilla { cfg, .. } => {
            let _ = writeln!(m, "n {}\nd {}\nblocks {}\nheads {}\nd_ff {}", cfg.n, cfg.d, cfg.blocks, cfg.heads, cfg.d_ff);
        }
    }
    let dec = &model.decoder;
    let _ = writeln!(m, "eta {}\nr_train {}\nsolve {}", dec.eta, dec.r_train, path_name(dec.path));
    for (k, v) in &ckpt.meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(bad(format!("metadata entry {k:?} cannot be stored on one line")));
        }
        let _ = writeln!(m, "meta {k} {v}");
    }
    let mut blob = Vec::new();
    model.visit(&mut |name, p| {
        let _ = writeln!(m, "param {name} {}x{} {} {}", p.rows(), p.cols(), blob.len(), p.len() * 8);
        for x in p.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    });
    Ok((m, blob))
}

pub fn save(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    let (manifest, blob) = encode(ckpt)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    decode(&manifest, &blob)
}

struct ParamLine {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
    len: usize,
}

pub fn decode(manifest: &str, blob: &[u8]) -> Result<Checkpoint> {
    let mut lines = manifest.lines();
    let header = lines.next().ok_or_else(|| bad("empty manifest"))?;
    match header.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(bad(format!("unsupported checkpoint version {v}"))),
        _ => return Err(bad(format!("not a checkpoint manifest: {header:?}"))),
    }
    let mut fields: Vec<(String, String)> = Vec::new();
    let mut meta = Vec::new();
    let mut params = Vec::new();
    for line in lines {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "" => {}
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.push((k.to_string(), v.to_string()));
            }
            "param" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, shape, offset, len] = parts[..] else {
                    return Err(bad(format!("malformed parameter line {line:?}")));
                };
                let (r, c) = shape.split_once('x').ok_or_else(|| bad(format!("bad shape {shape:?}")))?;
                params.push(ParamLine {
                    name: name.to_string(),
                    rows: value("rows", r)?,
                    cols: value("cols", c)?,
                    offset: value("offset", offset)?,
                    len: value("len", len)?,
                });
            }
            _ => fields.push((key.to_string(), rest.trim().to_string())),
        }
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(f, _)| f == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad(format!("manifest lacks {k:?}")))
    };
    let num = |k: &str| -> Result<usize> { value(k, get(k)?) };
    let decoder = DecoderConfig {
        eta: value("eta", get("eta")?)?,
        r_train: num("r_train")?,
        r_test: num("r_train")?,
        path: match get("solve")? {
            "auto" => SolvePath::Auto,
            "direct" => SolvePath::Direct,
            "woodbury" => SolvePath::Woodbury,
            other => return Err(bad(format!("unknown solve path {other:?}"))),
        },
    };
    let mut model = match get("kind")? {
        "hpe" => Model::hpe(
            EncoderConfig {
                n: num("n")?,
                d: num("d")?,
                layers: num("layers")?,
                heads: num("heads")?,
                d_ff: num("d_ff")?,
            },
            decoder,
            0,
        )?,
        "vanilla" => Model::vanilla(
            VanillaConfig {
                n: num("n")?,
                d: num("d")?,
                blocks: num("blocks")?,
                heads: num("heads")?,
                d_ff: num("d_ff")?,
            },
            decoder,
            0,
        )?,
        other => return Err(bad(format!("unknown model kind {other:?}"))),
    };

    let expected = model.param_count() * 8;
    if blob.len() != expected {
        return Err(bad(format!("parameter blob has {} bytes, architecture needs {expected}", blob.len())));
    }
    let mut idx = 0;
    let mut err = None;
    model.visit_mut(&mut |name, m| {
        if err.is_some() {
            return;
        }
        let Some(p) = params.get(idx) else {
            err = Some(bad(format!("manifest lists {idx} parameters, architecture has more")));
            return;
        };
        idx += 1;
        if p.name != name {
            err = Some(bad(format!("parameter {idx}: manifest has {:?}, architecture expects {name:?}", p.name)));
        } else if (p.rows, p.cols) != m.shape() {
            err = Some(bad(format!(
                "parameter {name}: stored shape {}x{}, architecture needs {}x{}",
                p.rows,
                p.cols,
                m.rows(),
                m.cols()
            )));
        } else if p.len != m.len() * 8 || p.offset + p.len > blob.len() {
            err = Some(bad(format!("parameter {name}: byte range out of bounds")));
        } else {
            let bytes = &blob[p.offset..p.offset + p.len];
            for (x, chunk) in m.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if idx != params.len() {
        return Err(bad(format!("manifest lists {} parameters, architecture has {idx}", params.len())));
    }
    Ok(Checkpoint { model, meta })
}
