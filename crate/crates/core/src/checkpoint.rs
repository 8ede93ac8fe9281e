//! Plain-text weight dumps.
//!
//! ```text
//! shiftkt checkpoint v1
//! kind backbone
//! meta hidden 64
//! tensor gru.w_input 32 192
//! <row-major values, one row per line>
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! load(save(x)) is bit-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

const MAGIC: &str = "shiftkt checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, name: impl Into<String>, m: &Matrix) {
        self.tensors.push((name.into(), m.clone()));
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta entry {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("meta {key} = {raw:?} is not an integer")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta entry {key:?}")))
    }

    /// Takes the named tensor, checking its shape.
    pub fn tensor(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let m = self
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
        if m.shape() != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected ({rows}, {cols})",
                m.shape()
            )));
        }
        Ok(m.clone())
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nkind {}\n", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, m) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", m.rows(), m.cols());
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |n: usize, msg: &str| Error::Checkpoint(format!("line {}: {msg}", n + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            Some((_, l)) => {
                return Err(Error::Checkpoint(format!("unsupported header {l:?}")));
            }
            None => return Err(Error::Checkpoint("empty checkpoint".into())),
        }
        let mut ck = Checkpoint::default();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("kind"), Some(kind)) => ck.kind = kind.to_string(),
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                (Some("tensor"), Some(rest)) => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let [name, rows, cols] = f.as_slice() else {
                        return Err(bad(n, "tensor header needs name, rows, cols"));
                    };
                    let rows: usize = rows.parse().map_err(|_| bad(n, "bad row count"))?;
                    let cols: usize = cols.parse().map_err(|_| bad(n, "bad column count"))?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (m, row) = lines.next().ok_or_else(|| bad(n, "truncated tensor"))?;
                        for v in row.split(' ').filter(|s| !s.is_empty()) {
                            data.push(v.parse::<f64>().map_err(|_| bad(m, "bad value"))?);
                        }
                    }
                    let m = Matrix::from_vec(rows, cols, data)
                        .map_err(|_| bad(n, "value count does not match shape"))?;
                    ck.tensors.push((name.to_string(), m));
                }
                (Some("end"), None) => {
                    ended = true;
                    break;
                }
                _ => return Err(bad(n, "unrecognized line")),
            }
        }
        if !ended {
            return Err(Error::Checkpoint("missing end marker".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
