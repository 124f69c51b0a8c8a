//! Versioned binary checkpoint.
//!
//! Layout (little-endian): magic, format version, architecture descriptor,
//! parameter count and `f64` parameter block, normalization record,
//! metadata block.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Activation, Architecture, OutputTransform, UdfField};
use crate::error::{Error, Result};
use crate::geometry::{Normalization, Vec3};

const MAGIC: &[u8; 8] = b"UDFFIELD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMetadata {
    pub iterations: u64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Free-form extra entries, stored in order.
    pub extra: Vec<(String, String)>,
}

impl Default for TrainingMetadata {
    fn default() -> Self {
        TrainingMetadata {
            iterations: 0,
            alpha1: 0.0,
            alpha2: 0.0,
            alpha3: 0.0,
            lambda: 0.0,
            seed: 0,
            extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldCheckpoint {
    pub field: UdfField,
    pub normalization: Normalization,
    pub metadata: TrainingMetadata,
}

impl FieldCheckpoint {
    pub fn new(field: UdfField, normalization: Normalization, metadata: TrainingMetadata) -> Self {
        FieldCheckpoint {
            field,
            normalization,
            metadata,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }
}

fn fmt_err(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Checkpoint(format!("{what}: {e}"))
}

pub fn write_checkpoint(w: &mut impl Write, ck: &FieldCheckpoint) -> std::io::Result<()> {
    let arch = ck.field.architecture();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;

    w.write_u32::<LittleEndian>(arch.width as u32)?;
    w.write_u32::<LittleEndian>(arch.depth as u32)?;
    w.write_i32::<LittleEndian>(arch.skip_at.map_or(-1, |s| s as i32))?;
    match arch.activation {
        Activation::Relu => {
            w.write_u8(0)?;
            w.write_f64::<LittleEndian>(0.0)?;
        }
        Activation::Softplus { beta } => {
            w.write_u8(1)?;
            w.write_f64::<LittleEndian>(beta)?;
        }
    }
    w.write_u8(match arch.output {
        OutputTransform::Abs => 0,
        OutputTransform::Square => 1,
    })?;
    w.write_u32::<LittleEndian>(arch.encoding_frequencies as u32)?;

    let params = ck.field.params();
    w.write_u64::<LittleEndian>(params.len() as u64)?;
    for p in params {
        w.write_f64::<LittleEndian>(p)?;
    }

    let n = &ck.normalization;
    for v in [n.center.x, n.center.y, n.center.z, n.scale] {
        w.write_f64::<LittleEndian>(v)?;
    }

    let m = &ck.metadata;
    w.write_u64::<LittleEndian>(m.iterations)?;
    for v in [m.alpha1, m.alpha2, m.alpha3, m.lambda] {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.write_u64::<LittleEndian>(m.seed)?;
    w.write_u32::<LittleEndian>(m.extra.len() as u32)?;
    for (k, v) in &m.extra {
        for s in [k, v] {
            w.write_u32::<LittleEndian>(s.len() as u32)?;
            w.write_all(s.as_bytes())?;
        }
    }
    Ok(())
}

fn read_string(r: &mut Cursor<&[u8]>) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(fmt_err("metadata"))? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(Error::Checkpoint("truncated metadata string".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(fmt_err("metadata"))?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("metadata string is not utf-8".into()))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<FieldCheckpoint> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(fmt_err("header"))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a field checkpoint".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(fmt_err("header"))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }

    let e = fmt_err("architecture");
    let width = r.read_u32::<LittleEndian>().map_err(&e)? as usize;
    let depth = r.read_u32::<LittleEndian>().map_err(&e)? as usize;
    let skip = r.read_i32::<LittleEndian>().map_err(&e)?;
    let act_tag = r.read_u8().map_err(&e)?;
    let beta = r.read_f64::<LittleEndian>().map_err(&e)?;
    let out_tag = r.read_u8().map_err(&e)?;
    let freqs = r.read_u32::<LittleEndian>().map_err(&e)? as usize;
    let activation = match act_tag {
        0 => Activation::Relu,
        1 => Activation::Softplus { beta },
        t => return Err(Error::Checkpoint(format!("unknown activation tag {t}"))),
    };
    let output = match out_tag {
        0 => OutputTransform::Abs,
        1 => OutputTransform::Square,
        t => return Err(Error::Checkpoint(format!("unknown output tag {t}"))),
    };
    let arch = Architecture {
        width,
        depth,
        skip_at: (skip >= 0).then_some(skip as usize),
        activation,
        output,
        encoding_frequencies: freqs,
    };
    arch.validate()
        .map_err(|e| Error::Checkpoint(format!("bad architecture: {e}")))?;

    let count = r.read_u64::<LittleEndian>().map_err(fmt_err("parameters"))? as usize;
    if count != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter block holds {count} values, architecture implies {}",
            arch.param_count()
        )));
    }
    let mut params = vec![0.0; count];
    r.read_f64_into::<LittleEndian>(&mut params)
        .map_err(fmt_err("parameters"))?;

    let e = fmt_err("normalization");
    let mut nb = [0.0; 4];
    r.read_f64_into::<LittleEndian>(&mut nb).map_err(&e)?;
    let normalization = Normalization {
        center: Vec3::new(nb[0], nb[1], nb[2]),
        scale: nb[3],
    };

    let e = fmt_err("metadata");
    let iterations = r.read_u64::<LittleEndian>().map_err(&e)?;
    let mut a = [0.0; 4];
    r.read_f64_into::<LittleEndian>(&mut a).map_err(&e)?;
    let seed = r.read_u64::<LittleEndian>().map_err(&e)?;
    let n_extra = r.read_u32::<LittleEndian>().map_err(&e)?;
    let mut extra = Vec::new();
    for _ in 0..n_extra {
        let k = read_string(&mut r)?;
        let v = read_string(&mut r)?;
        extra.push((k, v));
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after metadata".into()));
    }

    Ok(FieldCheckpoint {
        field: UdfField::from_params(arch, &params)?,
        normalization,
        metadata: TrainingMetadata {
            iterations,
            alpha1: a[0],
            alpha2: a[1],
            alpha3: a[2],
            lambda: a[3],
            seed,
            extra,
        },
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &FieldCheckpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ck.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FieldCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
