//! Tagged, length-prefixed binary container shared by checkpoints and
//! feature caches: a manifest of named, typed, shaped sections followed by
//! the payload blob and a trailing 64-bit checksum. Little-endian
//! throughout and fully deterministic, so files round-trip bitwise.

use std::path::Path;

use crate::error::{Error, Result};
use crate::util::fnv1a64;

const MAGIC: &[u8; 4] = b"MFSC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SectionData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl SectionData {
    fn dtype(&self) -> u8 {
        match self {
            SectionData::F32(_) => 0,
            SectionData::F64(_) => 1,
            SectionData::I64(_) => 2,
            SectionData::U64(_) => 3,
            SectionData::Bytes(_) => 4,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SectionData::F32(v) => v.len(),
            SectionData::F64(v) => v.len(),
            SectionData::I64(v) => v.len(),
            SectionData::U64(v) => v.len(),
            SectionData::Bytes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn byte_len(&self) -> usize {
        match self {
            SectionData::F32(v) => v.len() * 4,
            SectionData::F64(v) => v.len() * 8,
            SectionData::I64(v) => v.len() * 8,
            SectionData::U64(v) => v.len() * 8,
            SectionData::Bytes(v) => v.len(),
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            SectionData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SectionData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SectionData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SectionData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SectionData::Bytes(v) => out.extend_from_slice(v),
        }
    }

    fn read_payload(dtype: u8, bytes: &[u8]) -> Result<Self> {
        let chunked = |width: usize| -> Result<std::slice::ChunksExact<u8>> {
            if bytes.len() % width != 0 {
                return Err(Error::Format(format!(
                    "payload of {} bytes is not a multiple of {width}",
                    bytes.len()
                )));
            }
            Ok(bytes.chunks_exact(width))
        };
        Ok(match dtype {
            0 => SectionData::F32(
                chunked(4)?
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => SectionData::F64(
                chunked(8)?
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            2 => SectionData::I64(
                chunked(8)?
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            3 => SectionData::U64(
                chunked(8)?
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            4 => SectionData::Bytes(bytes.to_vec()),
            other => return Err(Error::Format(format!("unknown section dtype {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub shape: Vec<usize>,
    pub data: SectionData,
}

impl Section {
    pub fn new(shape: Vec<usize>, data: SectionData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "section shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Section { shape, data })
    }

    fn flat(data: SectionData) -> Self {
        Section {
            shape: vec![data.len()],
            data,
        }
    }
}

/// Ordered collection of named sections with file encode/decode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SectionFile {
    sections: Vec<(String, Section)>,
}

impl SectionFile {
    pub fn new() -> Self {
        SectionFile::default()
    }

    pub fn insert(&mut self, name: &str, section: Section) -> Result<()> {
        if self.sections.iter().any(|(n, _)| n == name) {
            return Err(Error::Format(format!("duplicate section {name:?}")));
        }
        self.sections.push((name.to_string(), section));
        Ok(())
    }

    pub fn put_f32s(&mut self, name: &str, shape: Vec<usize>, values: Vec<f32>) -> Result<()> {
        self.insert(name, Section::new(shape, SectionData::F32(values))?)
    }

    pub fn put_f64s(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
        self.insert(name, Section::new(shape, SectionData::F64(values))?)
    }

    pub fn put_i64s(&mut self, name: &str, values: Vec<i64>) -> Result<()> {
        self.insert(name, Section::flat(SectionData::I64(values)))
    }

    pub fn put_u64(&mut self, name: &str, value: u64) -> Result<()> {
        self.insert(name, Section::flat(SectionData::U64(vec![value])))
    }

    pub fn put_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.insert(
            name,
            Section::flat(SectionData::Bytes(text.as_bytes().to_vec())),
        )
    }

    pub fn get(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("missing section {name:?}")))
    }

    pub fn get_opt(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn get_f32s(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.get(name)? {
            Section {
                shape,
                data: SectionData::F32(v),
            } => Ok((shape, v)),
            _ => Err(Error::Format(format!("section {name:?} is not f32"))),
        }
    }

    pub fn get_f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Section {
                shape,
                data: SectionData::F64(v),
            } => Ok((shape, v)),
            _ => Err(Error::Format(format!("section {name:?} is not f64"))),
        }
    }

    pub fn get_i64s(&self, name: &str) -> Result<&[i64]> {
        match self.get(name)? {
            Section {
                data: SectionData::I64(v),
                ..
            } => Ok(v),
            _ => Err(Error::Format(format!("section {name:?} is not i64"))),
        }
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        match self.get(name)? {
            Section {
                data: SectionData::U64(v),
                ..
            } if v.len() == 1 => Ok(v[0]),
            _ => Err(Error::Format(format!("section {name:?} is not a u64 scalar"))),
        }
    }

    pub fn get_text(&self, name: &str) -> Result<String> {
        match self.get(name)? {
            Section {
                data: SectionData::Bytes(v),
                ..
            } => String::from_utf8(v.clone())
                .map_err(|_| Error::Format(format!("section {name:?} is not UTF-8"))),
            _ => Err(Error::Format(format!("section {name:?} is not bytes"))),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut manifest = Vec::new();
        for (name, section) in &self.sections {
            let offset = payload.len() as u64;
            section.data.write_payload(&mut payload);
            manifest.push((name, section, offset));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, section, offset) in manifest {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(section.data.dtype());
            out.push(section.shape.len() as u8);
            for d in &section.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(section.data.byte_len() as u64).to_le_bytes());
        }
        out.extend_from_slice(&payload);
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 12 {
            return Err(Error::Format("file too short".into()));
        }
        let (body, check) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(check.try_into().unwrap());
        if fnv1a64(body) != stored {
            return Err(Error::Checksum);
        }
        if &body[0..4] != MAGIC {
            return Err(Error::Format("bad magic (not a section file)".into()));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let count = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        let mut pos = 12;
        let mut entries = Vec::with_capacity(count);
        let need = |pos: usize, n: usize| -> Result<()> {
            if pos + n > body.len() {
                Err(Error::Format("truncated manifest".into()))
            } else {
                Ok(())
            }
        };
        for _ in 0..count {
            need(pos, 2)?;
            let name_len = u16::from_le_bytes(body[pos..pos + 2].try_into().unwrap()) as usize;
            pos += 2;
            need(pos, name_len)?;
            let name = String::from_utf8(body[pos..pos + name_len].to_vec())
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?;
            pos += name_len;
            need(pos, 2)?;
            let dtype = body[pos];
            let ndim = body[pos + 1] as usize;
            pos += 2;
            need(pos, ndim * 4 + 16)?;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()) as usize);
                pos += 4;
            }
            let offset = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap()) as usize;
            pos += 8;
            let byte_len = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap()) as usize;
            pos += 8;
            entries.push((name, dtype, shape, offset, byte_len));
        }
        let payload = &body[pos..];
        let mut file = SectionFile::new();
        for (name, dtype, shape, offset, byte_len) in entries {
            if offset + byte_len > payload.len() {
                return Err(Error::Format(format!(
                    "section {name:?} extends past the payload"
                )));
            }
            let data = SectionData::read_payload(dtype, &payload[offset..offset + byte_len])?;
            file.insert(&name, Section::new(shape, data)?)?;
        }
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        SectionFile::from_bytes(&bytes)
    }
}
