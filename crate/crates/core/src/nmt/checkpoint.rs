//! Plain-text model checkpoints.
//!
//! ```text
//! nmtvocab-checkpoint 1
//! dims src_vocab=V emb=E enc_hidden=H dec_hidden=S attn_hidden=A out_hidden=O out_layers=L tgt_vocab=T
//! meta <key> <value to end of line>        (zero or more)
//! tensor <name> <rows> [<cols>]
//! <cols values per line, rows lines>       (a vector is one line)
//! ...
//! end
//! ```
//!
//! Tensors appear in [`Model::tensors`] order. Values are written with the
//! shortest representation that parses back to the same `f64`, so a
//! save/load round trip is bit-exact. Conventional meta keys are `config`
//! (the training configuration as `key=value` pairs) and
//! `src_vocab_sha256` / `tgt_vocab_sha256`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{Model, ModelDims};
use crate::error::{Error, Result};

const MAGIC: &str = "nmtvocab-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: BTreeMap<String, String>,
}

fn dims_line(d: &ModelDims) -> String {
    format!(
        "dims src_vocab={} tgt_vocab={} emb={} enc_hidden={} dec_hidden={} attn_hidden={} out_hidden={} out_layers={}",
        d.src_vocab, d.tgt_vocab, d.emb, d.enc_hidden, d.dec_hidden, d.attn_hidden, d.out_hidden, d.out_layers
    )
}

fn parse_dims(line: &str) -> Result<ModelDims> {
    let bad = |m: String| Error::Checkpoint(m);
    let rest = line
        .strip_prefix("dims ")
        .ok_or_else(|| bad("expected dims line".into()))?;
    let mut kv = BTreeMap::new();
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("bad dims field {field:?}")))?;
        let v: usize = v.parse().map_err(|_| bad(format!("bad dims value {field:?}")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("dims missing {k}")));
    let dims = ModelDims {
        src_vocab: get("src_vocab")?,
        tgt_vocab: get("tgt_vocab")?,
        emb: get("emb")?,
        enc_hidden: get("enc_hidden")?,
        dec_hidden: get("dec_hidden")?,
        attn_hidden: get("attn_hidden")?,
        out_hidden: get("out_hidden")?,
        out_layers: get("out_layers")?,
    };
    dims.validate().map_err(|e| bad(e.to_string()))?;
    Ok(dims)
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint {
            model,
            meta: BTreeMap::new(),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "{}", dims_line(&self.model.dims))?;
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}")?;
        }
        for (name, t) in self.model.tensors() {
            let cols = *t.shape.last().unwrap();
            match t.shape {
                [r, c] => writeln!(out, "tensor {name} {r} {c}")?,
                _ => writeln!(out, "tensor {name} {cols}")?,
            }
            for row in t.data.chunks(cols.max(1)) {
                let mut first = true;
                for v in row {
                    if !first {
                        out.write_all(b" ")?;
                    }
                    write!(out, "{v}")?;
                    first = false;
                }
                out.write_all(b"\n")?;
            }
        }
        writeln!(out, "end")
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(bad(e.to_string())),
                None => Err(bad("unexpected end of checkpoint".into())),
            }
        };
        if next()? != MAGIC {
            return Err(bad("not a checkpoint (bad magic line)".into()));
        }
        let dims = parse_dims(&next()?)?;
        let mut model = Model::zeros(dims)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape.to_vec()))
            .collect();
        let mut meta = BTreeMap::new();
        let mut line = next()?;
        while let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
            line = next()?;
        }
        let mut tensors = model.tensors_mut();
        for (t, (name, shape)) in expected.iter().enumerate() {
            let header: Vec<&str> = line.split_whitespace().collect();
            let want: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            if header.first() != Some(&"tensor") || header.get(1) != Some(&name.as_str()) || header[2..] != want {
                return Err(bad(format!("expected tensor {name} {}, found {line:?}", want.join(" "))));
            }
            let cols = *shape.last().unwrap();
            let rows = if shape.len() == 2 { shape[0] } else { 1 };
            let data = &mut tensors[t];
            for r in 0..rows {
                let row = next()?;
                let mut n = 0;
                for (c, tok) in row.split_whitespace().enumerate() {
                    if c >= cols {
                        return Err(bad(format!("{name}: row {r} too long")));
                    }
                    data[r * cols + c] = tok
                        .parse()
                        .map_err(|_| bad(format!("{name}: bad value {tok:?}")))?;
                    n += 1;
                }
                if n != cols {
                    return Err(bad(format!("{name}: row {r} has {n} values, expected {cols}")));
                }
            }
            line = next()?;
        }
        drop(tensors);
        if line != "end" {
            return Err(bad(format!("expected end, found {line:?}")));
        }
        Ok(Checkpoint { model, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// Hex sha256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hex sha256 over the bit patterns of both embedding matrices.
pub fn embedding_digest(model: &Model) -> String {
    let mut hasher = Sha256::new();
    for v in model.src_embed.iter().chain(model.tgt_embed.iter()) {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut dims = ModelDims::uniform(7, 9, 3);
        dims.out_layers = 2;
        let mut ck = Checkpoint::new(Model::new(dims, 5).unwrap());
        ck.meta.insert("config".into(), "seed=5 epochs=2".into());
        ck.meta.insert("tgt_vocab_sha256".into(), "ab".into());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(embedding_digest(&back.model), embedding_digest(&ck.model));
    }

    #[test]
    fn rejects_truncation_and_shape_mismatch() {
        let ck = Checkpoint::new(Model::new(ModelDims::uniform(5, 6, 2), 1).unwrap());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(Checkpoint::read_from(cut.as_bytes()).is_err());
        let wrong = text.replacen("tensor src_embed 5 2", "tensor src_embed 5 3", 1);
        assert!(Checkpoint::read_from(wrong.as_bytes()).is_err());
        assert!(Checkpoint::read_from("hello\n".as_bytes()).is_err());
    }
}
