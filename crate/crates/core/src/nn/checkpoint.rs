use super::Parameters;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_SCHEMA: &str = "conplan.checkpoint.v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named, shape-annotated flat arrays plus free-form metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn capture<P: Parameters>(params: &P, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        params.visit("", &mut |name, shape, data| {
            tensors.push(Tensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            meta,
            tensors,
        }
    }

    /// Copies tensors into `params`; names, order and shapes must match.
    pub fn restore<P: Parameters>(&self, params: &mut P) -> Result<()> {
        let mut idx = 0;
        let mut err: Option<Error> = None;
        params.visit_mut("", &mut |name, shape, data| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some(t) if t.name == name && t.shape == shape && t.data.len() == data.len() => {
                    data.copy_from_slice(&t.data)
                }
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor {idx}: expected `{name}` {shape:?}, found `{}` {:?}",
                        t.name, t.shape
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor `{name}`"))),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {idx}",
                self.tensors.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if c.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Checkpoint(format!(
                "unsupported schema `{}` (expected `{CHECKPOINT_SCHEMA}`)",
                c.schema
            )));
        }
        for t in &c.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}`: shape {:?} does not match {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
        }
        Ok(c)
    }
}

pub fn write_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, c.to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

pub fn save_checkpoint<P: Parameters>(params: &P, meta: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(&Checkpoint::capture(params, meta), path)
}

/// Restores `params` from `path` and returns the stored metadata.
pub fn load_checkpoint<P: Parameters>(params: &mut P, path: impl AsRef<Path>) -> Result<serde_json::Value> {
    let c = read_checkpoint(path)?;
    c.restore(params)?;
    Ok(c.meta)
}
