//! Model checkpoints with lineage, and their on-disk format.
//!
//! A checkpoint file is a text header followed by binary parameter blocks:
//!
//! ```text
//! #seqkd-checkpoint v1
//! size_class Tiny
//! ...                      one `key value` line per header field
//! ancestor <id> <initialized_from> <trained_on> <distilled_by>
//! params <count>
//! end
//! ```
//!
//! Each block after the `end` line is `u32` name length, UTF-8 name, `u32`
//! rank, `u32` dims, then the values as `f32`, all little-endian, in the
//! model's fixed parameter order.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::ContentHasher;
use crate::nnet::{ArchConfig, SizeClass, Tensor, TransformerModel};

pub const CHECKPOINT_HEADER: &str = "#seqkd-checkpoint v1";
pub const RANDOM_INIT: &str = "random";
pub const NOT_DISTILLED: &str = "none";

/// Direct parentage of one checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Provenance {
    /// Parent checkpoint id, or [`RANDOM_INIT`].
    pub initialized_from: String,
    /// Id of the training corpus.
    pub trained_on: String,
    /// Teacher checkpoint id that produced the training targets, or
    /// [`NOT_DISTILLED`].
    pub distilled_by: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineageEntry {
    pub checkpoint_id: String,
    pub provenance: Provenance,
}

impl fmt::Display for LineageEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.provenance;
        write!(f, "{} <- {} on {}", self.checkpoint_id, p.initialized_from, p.trained_on)?;
        if p.distilled_by != NOT_DISTILLED {
            write!(f, " distilled by {}", p.distilled_by)?;
        }
        Ok(())
    }
}

/// Trained weights (stored at `f32` precision) plus the record of how they
/// were produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    model: TransformerModel,
    vocab_id: String,
    seed: u64,
    update_count: u64,
    epoch_count: u64,
    dev_bleu: f64,
    provenance: Provenance,
    /// Ancestors, oldest first.
    ancestors: Vec<LineageEntry>,
    id: String,
}

impl ModelCheckpoint {
    /// Rounds the weights to `f32` so the in-memory checkpoint is exactly
    /// what its file stores.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mut model: TransformerModel,
        vocab_id: impl Into<String>,
        seed: u64,
        update_count: u64,
        epoch_count: u64,
        dev_bleu: f64,
        provenance: Provenance,
        ancestors: Vec<LineageEntry>,
    ) -> Self {
        model.round_to_f32();
        let mut c = ModelCheckpoint {
            model,
            vocab_id: vocab_id.into(),
            seed,
            update_count,
            epoch_count,
            dev_bleu,
            provenance,
            ancestors,
            id: String::new(),
        };
        c.id = c.compute_id();
        c
    }

    fn compute_id(&self) -> String {
        let mut h = ContentHasher::new("checkpoint");
        let a = self.model.arch();
        h.str(&a.size_class.to_string())
            .u64(a.total_layers as u64)
            .u64(a.ff_dim as u64)
            .u64(a.hidden_dim as u64)
            .u64(a.num_heads as u64)
            .f64(a.dropout)
            .u64(a.scale_factor as u64)
            .u64(self.model.vocab_size() as u64)
            .str(&self.vocab_id)
            .u64(self.seed)
            .u64(self.update_count)
            .u64(self.epoch_count)
            .f64(self.dev_bleu)
            .str(&self.provenance.initialized_from)
            .str(&self.provenance.trained_on)
            .str(&self.provenance.distilled_by);
        for e in &self.ancestors {
            h.str(&e.checkpoint_id);
        }
        let mut bytes = Vec::new();
        for (name, t) in self.model.names().iter().zip(self.model.params()) {
            h.str(name);
            bytes.clear();
            bytes.extend(t.data().iter().flat_map(|&v| (v as f32).to_le_bytes()));
            h.bytes(&bytes);
        }
        h.finish()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn model(&self) -> &TransformerModel {
        &self.model
    }

    pub fn into_model(self) -> TransformerModel {
        self.model
    }

    pub fn arch(&self) -> &ArchConfig {
        self.model.arch()
    }

    pub fn vocab_id(&self) -> &str {
        &self.vocab_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn epoch_count(&self) -> u64 {
        self.epoch_count
    }

    pub fn dev_bleu(&self) -> f64 {
        self.dev_bleu
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn ancestors(&self) -> &[LineageEntry] {
        &self.ancestors
    }

    pub fn entry(&self) -> LineageEntry {
        LineageEntry {
            checkpoint_id: self.id.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Ancestors followed by this checkpoint, root first.
    pub fn lineage(&self) -> Vec<LineageEntry> {
        let mut l = self.ancestors.clone();
        l.push(self.entry());
        l
    }

    /// Lineage of a child of this checkpoint.
    pub fn child_ancestors(&self) -> Vec<LineageEntry> {
        self.lineage()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        let a = self.model.arch();
        let mut header = format!("{CHECKPOINT_HEADER}\n");
        let fields: [(&str, String); 17] = [
            ("id", self.id.clone()),
            ("size_class", a.size_class.to_string()),
            ("total_layers", a.total_layers.to_string()),
            ("ff_dim", a.ff_dim.to_string()),
            ("hidden_dim", a.hidden_dim.to_string()),
            ("num_heads", a.num_heads.to_string()),
            ("dropout", a.dropout.to_string()),
            ("scale_factor", a.scale_factor.to_string()),
            ("vocab_size", self.model.vocab_size().to_string()),
            ("vocab_id", self.vocab_id.clone()),
            ("seed", self.seed.to_string()),
            ("update_count", self.update_count.to_string()),
            ("epoch_count", self.epoch_count.to_string()),
            ("dev_bleu", self.dev_bleu.to_string()),
            ("initialized_from", self.provenance.initialized_from.clone()),
            ("trained_on", self.provenance.trained_on.clone()),
            ("distilled_by", self.provenance.distilled_by.clone()),
        ];
        for (k, v) in fields {
            header.push_str(&format!("{k} {v}\n"));
        }
        for e in &self.ancestors {
            let p = &e.provenance;
            header.push_str(&format!(
                "ancestor {} {} {} {}\n",
                e.checkpoint_id, p.initialized_from, p.trained_on, p.distilled_by
            ));
        }
        header.push_str(&format!("params {}\nend\n", self.model.params().len()));
        out.extend_from_slice(header.as_bytes());
        for (name, t) in self.model.names().iter().zip(self.model.params()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut lines = Vec::new();
        loop {
            let mut line = String::new();
            let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::format(path, lines.len() + 1, "unexpected end of header"));
            }
            let line = line.trim_end_matches('\n').to_owned();
            if line == "end" {
                break;
            }
            lines.push(line);
        }
        if lines.first().map(String::as_str) != Some(CHECKPOINT_HEADER) {
            return Err(Error::format(path, 1, format!("expected header {CHECKPOINT_HEADER:?}")));
        }
        let mut kv = std::collections::HashMap::new();
        let mut ancestors = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(1) {
            let bad = |reason: &str| Error::format(path, i + 1, reason.to_owned());
            let (k, v) = line.split_once(' ').ok_or_else(|| bad("expected `key value`"))?;
            if k == "ancestor" {
                let parts: Vec<&str> = v.split(' ').collect();
                let [id, init, on, by] = parts[..] else {
                    return Err(bad("ancestor needs four fields"));
                };
                ancestors.push(LineageEntry {
                    checkpoint_id: id.into(),
                    provenance: Provenance {
                        initialized_from: init.into(),
                        trained_on: on.into(),
                        distilled_by: by.into(),
                    },
                });
            } else {
                kv.insert(k.to_owned(), (i + 1, v.to_owned()));
            }
        }
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::format(path, lines.len(), format!("missing field {k}")))
        };
        fn parse<T: std::str::FromStr>(path: &Path, kv: &std::collections::HashMap<String, (usize, String)>, k: &str) -> Result<T> {
            let (line, v) = kv
                .get(k)
                .ok_or_else(|| Error::format(path, 0, format!("missing field {k}")))?;
            v.parse()
                .map_err(|_| Error::format(path, *line, format!("bad value for {k}: {v:?}")))
        }
        let arch = ArchConfig {
            size_class: get("size_class")?.parse::<SizeClass>()?,
            total_layers: parse(path, &kv, "total_layers")?,
            ff_dim: parse(path, &kv, "ff_dim")?,
            hidden_dim: parse(path, &kv, "hidden_dim")?,
            num_heads: parse(path, &kv, "num_heads")?,
            dropout: parse(path, &kv, "dropout")?,
            scale_factor: parse(path, &kv, "scale_factor")?,
        };
        let vocab_size: usize = parse(path, &kv, "vocab_size")?;
        let count: usize = parse(path, &kv, "params")?;
        let mut named = Vec::with_capacity(count);
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut BufReader<fs::File>| -> Result<u32> {
            r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
            Ok(u32::from_le_bytes(word))
        };
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| Error::io(path, e))?;
            let name = String::from_utf8(name).map_err(|_| Error::format(path, 0, "parameter name is not UTF-8"))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            named.push((name, Tensor::from_vec(&shape, data)));
        }
        let model = TransformerModel::from_parameters(&arch, vocab_size, named)?;
        let c = ModelCheckpoint::new(
            model,
            get("vocab_id")?,
            parse(path, &kv, "seed")?,
            parse(path, &kv, "update_count")?,
            parse(path, &kv, "epoch_count")?,
            parse(path, &kv, "dev_bleu")?,
            Provenance {
                initialized_from: get("initialized_from")?.into(),
                trained_on: get("trained_on")?.into(),
                distilled_by: get("distilled_by")?.into(),
            },
            ancestors,
        );
        if c.id != get("id")? {
            return Err(Error::format(path, 2, "checkpoint id does not match its contents"));
        }
        Ok(c)
    }
}
