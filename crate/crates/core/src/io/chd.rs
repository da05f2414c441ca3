//! CHD1 classifier heads: `"CHD1" | u32 version=1 | u32 n | u32 C |
//! f32 x (n*C) weights (filter, class) | f32 x C bias`.

use std::io::{Read, Write};

use super::bytes::{to_u32, ByteReader, CountingWriter};
use crate::error::{Error, Result};
use crate::model::ClassifierHead;

pub const MAGIC: &[u8; 4] = b"CHD1";
pub const VERSION: u32 = 1;

pub fn write_classifier_head<W: Write>(head: &ClassifierHead, sink: W) -> Result<usize> {
    head.validate()?;
    let mut w = CountingWriter::new(sink);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(to_u32(head.n_filters, "filter count")?)?;
    w.u32(to_u32(head.n_classes, "class count")?)?;
    w.f32_slice(&head.weights)?;
    w.f32_slice(&head.bias)?;
    w.finish()
}

pub fn read_classifier_head<R: Read>(mut source: R) -> Result<ClassifierHead> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    decode_classifier_head(&buf)
}

pub fn decode_classifier_head(buf: &[u8]) -> Result<ClassifierHead> {
    let mut r = ByteReader::new(buf);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u32()? as usize;
    let c = r.u32()? as usize;
    if n == 0 || c == 0 {
        return Err(Error::Malformed {
            offset: 8,
            reason: format!("filter count {n} and class count {c} must be positive"),
        });
    }
    r.require(n * c + c, 4)?;
    let weights = r.f32_vec(n * c)?;
    let bias = r.f32_vec(c)?;
    r.finish()?;
    ClassifierHead::new(n, c, weights, bias)
}
