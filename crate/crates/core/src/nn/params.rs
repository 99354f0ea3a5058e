use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named parameter arrays stored contiguously. Gradients and optimizer
/// moments use the same flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
    pub values: Vec<f64>,
    pub version: u64,
}

impl ParameterSet {
    pub fn from_parts(entries: Vec<ParamEntry>, values: Vec<f64>, version: u64) -> Result<Self> {
        let mut offset = 0;
        for e in &entries {
            if e.offset != offset {
                return Err(Error::Checkpoint(format!("entry {} is not contiguous", e.name)));
            }
            offset += e.len();
        }
        if offset != values.len() {
            return Err(Error::Checkpoint(format!(
                "layout covers {offset} values but {} were given",
                values.len()
            )));
        }
        Ok(ParameterSet {
            entries,
            values,
            version,
        })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.values[e.offset..e.offset + e.len()])
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for d in &e.shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Accumulates named blocks while layers are being declared.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    inits: Vec<Init>,
    next: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Uniform(f64),
}

impl LayoutBuilder {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let offset = self.next;
        let e = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.next += e.len();
        self.entries.push(e);
        self.inits.push(init);
        offset
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn build(&self, rng: &mut impl Rng) -> ParameterSet {
        let mut values = vec![0.0; self.next];
        for (e, init) in self.entries.iter().zip(&self.inits) {
            let block = &mut values[e.offset..e.offset + e.len()];
            match *init {
                Init::Zeros => {}
                Init::Const(c) => block.fill(c),
                Init::Uniform(a) => block.iter_mut().for_each(|v| *v = rng.random_range(-a..=a)),
            }
        }
        ParameterSet {
            entries: self.entries.clone(),
            values,
            version: 0,
        }
    }

    pub fn zeros(&self) -> ParameterSet {
        ParameterSet {
            entries: self.entries.clone(),
            values: vec![0.0; self.next],
            version: 0,
        }
    }
}
