//! CFE1 explainer checkpoints.
//!
//! ```text
//! "CFE1" | u32 version=1 | u8 kind (0=MC, 1=MI) | u32 n | u32 target_class
//! | f32 threshold | f32 lambda | u32 epochs | f32 x (n*n) D (output, input)
//! | f32 x n bias
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::bytes::{to_u32, ByteReader, CountingWriter};
use crate::error::{Error, Result};
use crate::head::{DenseLayer, McHead, MiHead};

pub const MAGIC: &[u8; 4] = b"CFE1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Mc,
    Mi,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Mc => "MC",
            HeadKind::Mi => "MI",
        }
    }

    fn byte(self) -> u8 {
        match self {
            HeadKind::Mc => 0,
            HeadKind::Mi => 1,
        }
    }
}

/// A trained explainer layer plus the settings it was trained under. MI
/// checkpoints store a threshold of 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfeCheckpoint {
    pub kind: HeadKind,
    pub target_class: usize,
    pub threshold: f64,
    pub lambda: f64,
    pub epochs_trained: usize,
    pub dense: DenseLayer,
}

impl CfeCheckpoint {
    pub fn from_mc(head: &McHead, target_class: usize, lambda: f64, epochs: usize) -> Self {
        Self {
            kind: HeadKind::Mc,
            target_class,
            threshold: head.threshold,
            lambda,
            epochs_trained: epochs,
            dense: head.dense.clone(),
        }
    }

    pub fn from_mi(head: &MiHead, target_class: usize, lambda: f64, epochs: usize) -> Self {
        Self {
            kind: HeadKind::Mi,
            target_class,
            threshold: 0.0,
            lambda,
            epochs_trained: epochs,
            dense: head.dense.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.dense.n
    }

    pub fn mc_head(&self) -> Result<McHead> {
        self.expect(HeadKind::Mc)?;
        McHead::new(self.dense.clone(), self.threshold)
    }

    pub fn mi_head(&self) -> Result<MiHead> {
        self.expect(HeadKind::Mi)?;
        MiHead::new(self.dense.clone())
    }

    fn expect(&self, kind: HeadKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch {
                expected: kind.as_str(),
                found: self.kind.as_str(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dense.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Invariant(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.kind == HeadKind::Mc && !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Invariant(format!(
                "MC threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }
}

pub fn write_checkpoint<W: Write>(ckpt: &CfeCheckpoint, sink: W) -> Result<usize> {
    ckpt.validate()?;
    let mut w = CountingWriter::new(sink);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(ckpt.kind.byte())?;
    w.u32(to_u32(ckpt.n(), "filter count")?)?;
    w.u32(to_u32(ckpt.target_class, "target class")?)?;
    w.f32(ckpt.threshold)?;
    w.f32(ckpt.lambda)?;
    w.u32(to_u32(ckpt.epochs_trained, "epoch count")?)?;
    w.f32_slice(&ckpt.dense.weights)?;
    w.f32_slice(&ckpt.dense.bias)?;
    w.finish()
}

pub fn read_checkpoint<R: Read>(mut source: R) -> Result<CfeCheckpoint> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<CfeCheckpoint> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let kind_at = r.offset();
    let kind = match r.u8()? {
        0 => HeadKind::Mc,
        1 => HeadKind::Mi,
        other => {
            return Err(Error::InvalidKind {
                kind: other,
                offset: kind_at,
            })
        }
    };
    let n = r.u32()? as usize;
    if n == 0 {
        return Err(Error::Malformed {
            offset: kind_at + 1,
            reason: "filter count must be positive".into(),
        });
    }
    let target_class = r.u32()? as usize;
    let threshold_at = r.offset();
    let threshold = f64::from(r.f32()?);
    let lambda = f64::from(r.f32()?);
    let epochs_trained = r.u32()? as usize;
    r.require(n * n + n, 4)?;
    let weights = r.f32_vec(n * n)?;
    let bias = r.f32_vec(n)?;
    r.finish()?;
    let ckpt = CfeCheckpoint {
        kind,
        target_class,
        threshold,
        lambda,
        epochs_trained,
        dense: DenseLayer { n, weights, bias },
    };
    ckpt.validate().map_err(|e| Error::Malformed {
        offset: threshold_at,
        reason: e.to_string(),
    })?;
    Ok(ckpt)
}
