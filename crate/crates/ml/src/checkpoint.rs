//! Model checkpoints: a short text header followed by raw little-endian
//! `f64` values.
//!
//! ```text
//! derfdd-checkpoint 1
//! kind lstm
//! <key> <value>            (any number of lines)
//! values <count>
//! end
//! <count x 8 bytes>
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::{KnnModel, LstmDims, LstmModel, MlError, MlpModel, Result};

const MAGIC: &str = "derfdd-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint { kind: kind.to_string(), meta: BTreeMap::new(), values: Vec::new() }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| MlError::Format(format!("missing header key `{key}` in {} checkpoint", self.kind)))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| MlError::Format(format!("header key `{key}` has unparsable value `{raw}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC} {VERSION}")?;
        writeln!(w, "kind {}", self.kind)?;
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(MlError::Format(format!("header entry `{k}` cannot be encoded")));
            }
            writeln!(w, "{k} {v}")?;
        }
        writeln!(w, "values {}", self.values.len())?;
        writeln!(w, "end")?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let next_line = |r: &mut BufReader<R>, line: &mut String| -> Result<()> {
            line.clear();
            if r.read_line(line)? == 0 {
                return Err(MlError::Format("unexpected end of checkpoint header".into()));
            }
            Ok(())
        };
        next_line(&mut r, &mut line)?;
        let version = line
            .trim_end()
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| MlError::Format("not a derfdd checkpoint".into()))?;
        if version != VERSION.to_string() {
            return Err(MlError::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut kind = None;
        let mut meta = BTreeMap::new();
        let mut count = None;
        loop {
            next_line(&mut r, &mut line)?;
            let l = line.trim_end();
            if l == "end" {
                break;
            }
            let (k, v) = l.split_once(' ').unwrap_or((l, ""));
            match k {
                "kind" => kind = Some(v.to_string()),
                "values" => {
                    count = Some(v.parse::<usize>().map_err(|_| MlError::Format(format!("bad value count `{v}`")))?)
                }
                _ => {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        }
        let kind = kind.ok_or_else(|| MlError::Format("missing `kind` line".into()))?;
        let count = count.ok_or_else(|| MlError::Format("missing `values` line".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(MlError::Format(format!("expected {} bytes of values, found {}", count * 8, bytes.len())));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Checkpoint { kind, meta, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(MlError::Format(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }
}

impl From<&LstmModel> for Checkpoint {
    fn from(m: &LstmModel) -> Self {
        let d = m.dims();
        let mut c = Checkpoint::new("lstm");
        c.set("input", d.input)
            .set("hidden1", d.hidden1)
            .set("hidden2", d.hidden2)
            .set("output", d.output)
            .set("lookback", d.lookback)
            .set("seed", m.seed)
            .set("epochs", m.epochs)
            .set("layout", "l1.W,l1.U,l1.b,l2.W,l2.U,l2.b,head.W,head.b;gates=i,f,o,g;colmajor");
        c.values = m.params().to_vec();
        c
    }
}

impl TryFrom<&Checkpoint> for LstmModel {
    type Error = MlError;

    fn try_from(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("lstm")?;
        let dims = LstmDims {
            input: c.get_parsed("input")?,
            hidden1: c.get_parsed("hidden1")?,
            hidden2: c.get_parsed("hidden2")?,
            output: c.get_parsed("output")?,
            lookback: c.get_parsed("lookback")?,
        };
        let mut m = LstmModel::from_params(dims, c.values.clone())?;
        m.seed = c.get_parsed("seed")?;
        m.epochs = c.get_parsed("epochs")?;
        Ok(m)
    }
}

impl From<&MlpModel> for Checkpoint {
    fn from(m: &MlpModel) -> Self {
        let mut c = Checkpoint::new("mlp");
        let sizes: Vec<String> = m.sizes().iter().map(|s| s.to_string()).collect();
        c.set("sizes", sizes.join(","))
            .set("hidden_activation", "relu")
            .set("output_activation", "tanh")
            .set("seed", m.seed)
            .set("epochs", m.epochs)
            .set("layout", "per-layer W(colmajor out x in),b");
        c.values = m.params().to_vec();
        c
    }
}

impl TryFrom<&Checkpoint> for MlpModel {
    type Error = MlError;

    fn try_from(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("mlp")?;
        let sizes = c
            .get("sizes")?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| MlError::Format(format!("bad layer size `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut m = MlpModel::from_params(&sizes, c.values.clone())?;
        m.seed = c.get_parsed("seed")?;
        m.epochs = c.get_parsed("epochs")?;
        Ok(m)
    }
}

/// KNN checkpoints store every exemplar row followed by its label (as `f64`).
impl From<&KnnModel> for Checkpoint {
    fn from(m: &KnnModel) -> Self {
        let mut c = Checkpoint::new("knn");
        c.set("dim", m.dim())
            .set("k", m.k())
            .set("classes", m.n_classes())
            .set("exemplars", m.len())
            .set("distance", "euclidean")
            .set("layout", "features(row-major),labels");
        c.values.reserve(m.len() * (m.dim() + 1));
        c.values.extend_from_slice(m.features());
        c.values.extend(m.labels().iter().map(|&l| l as f64));
        c
    }
}

impl TryFrom<&Checkpoint> for KnnModel {
    type Error = MlError;

    fn try_from(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("knn")?;
        let dim: usize = c.get_parsed("dim")?;
        let n: usize = c.get_parsed("exemplars")?;
        if c.values.len() != n * (dim + 1) {
            return Err(MlError::Format(format!("knn checkpoint holds {} values, expected {}", c.values.len(), n * (dim + 1))));
        }
        let (f, l) = c.values.split_at(n * dim);
        let labels = l
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(MlError::Format(format!("bad label value {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        KnnModel::fit(f.to_vec(), labels, dim, c.get_parsed("k")?, c.get_parsed("classes")?)
    }
}
