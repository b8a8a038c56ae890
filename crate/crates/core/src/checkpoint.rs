//! Parameter checkpoints.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic   8 bytes  "AUXLABCK"
//! version u32      1
//! count   u32      number of entries
//! entry*  name_len u32, name (UTF-8), ndim u32, dims u64 * ndim,
//!         values f64 * prod(dims)
//! ```
//!
//! The text form has one entry per line:
//! `name<TAB>d0,d1,..<TAB>v0 v1 ..` with shortest round-trip decimals.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AUXLABCK";
pub const VERSION: u32 = 1;

pub fn encode_binary(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(params.len() as u32).unwrap();
    for (name, t) in params.iter() {
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u32::<LittleEndian>(t.shape().len() as u32).unwrap();
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64).unwrap();
        }
        for &v in t.values() {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    out
}

pub fn decode_binary(mut bytes: &[u8]) -> Result<ParamSet> {
    let bad = |what: &str| Error::Invalid(format!("checkpoint: {what}"));
    let mut magic = [0u8; 8];
    bytes.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = bytes.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = bytes.read_u32::<LittleEndian>()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let n = bytes.read_u32::<LittleEndian>()? as usize;
        if n > bytes.len() {
            return Err(bad("truncated name"));
        }
        let (name, rest) = bytes.split_at(n);
        let name = std::str::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?.to_string();
        bytes = rest;
        let ndim = bytes.read_u32::<LittleEndian>()? as usize;
        let shape = (0..ndim)
            .map(|_| bytes.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        if len.saturating_mul(8) > bytes.len() {
            return Err(bad("truncated values"));
        }
        let values = (0..len)
            .map(|_| bytes.read_f64::<LittleEndian>())
            .collect::<std::io::Result<Vec<_>>>()?;
        params.insert(name, Tensor::new(shape, values)?)?;
    }
    if !bytes.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(params)
}

pub fn encode_text(params: &ParamSet) -> String {
    let mut s = String::new();
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let vals: Vec<String> = t.values().iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&format!("{name}\t{}\t{}\n", dims.join(","), vals.join(" ")));
    }
    s
}

pub fn decode_text(text: impl BufRead) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    for line in text.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(name), Some(dims), Some(vals), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Invalid(format!("checkpoint line `{line}`")));
        };
        let parse_err = |_| Error::Invalid(format!("checkpoint entry {name}"));
        let shape = dims
            .split(',')
            .map(|d| d.parse::<usize>().map_err(parse_err))
            .collect::<Result<Vec<_>>>()?;
        let values = vals
            .split(' ')
            .map(|v| v.parse::<f64>().map_err(|_| Error::Invalid(format!("checkpoint entry {name}"))))
            .collect::<Result<Vec<_>>>()?;
        params.insert(name, Tensor::new(shape, values)?)?;
    }
    Ok(params)
}

/// Writes the binary form, or the text form when the path ends in `.txt`.
pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    if path.extension().is_some_and(|e| e == "txt") {
        f.write_all(encode_text(params).as_bytes())?;
    } else {
        f.write_all(&encode_binary(params))?;
    }
    Ok(())
}

/// Reads either form, detected by the magic bytes.
pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        decode_text(bytes.as_slice())
    }
}
