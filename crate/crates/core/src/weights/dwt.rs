use crate::error::FormatError;
use crate::weights::half::{f16_to_f32, f32_to_f16};
use crate::weights::{DType, Metadata, TensorRecord, WeightStore};

pub const MAGIC: [u8; 4] = *b"DWT1";
pub const FORMAT_VERSION: u16 = 1;

const CRC_LEN: usize = 4;

fn metadata_json(meta: &Metadata) -> String {
    serde_json::to_string(meta).expect("metadata serializes")
}

fn record_header_len(name: &str, ndim: usize) -> usize {
    2 + name.len() + 1 + 1 + 4 * ndim
}

/// Exact serialized length of `store` at `dtype`, without encoding it.
pub fn model_size_bytes(store: &WeightStore, dtype: DType) -> usize {
    let fixed = MAGIC.len() + 2 + 4 + metadata_json(&store.metadata).len() + 4 + CRC_LEN;
    fixed
        + store
            .iter()
            .map(|(name, rec)| record_header_len(name, rec.dims.len()) + rec.numel() * dtype.size())
            .sum::<usize>()
}

/// Encodes every record at `dtype`.
pub fn save(store: &WeightStore, dtype: DType) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(model_size_bytes(store, dtype));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta = metadata_json(&store.metadata);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, rec) in store.iter() {
        let name_len =
            u16::try_from(name.len()).map_err(|_| FormatError::NameTooLong(name.to_owned()))?;
        let ndim = u8::try_from(rec.dims.len()).map_err(|_| FormatError::TooManyDims {
            name: name.to_owned(),
            ndim: rec.dims.len(),
        })?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype.tag());
        out.push(ndim);
        for &d in &rec.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match dtype {
            DType::F32 => rec.values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            DType::F16 => rec
                .values
                .iter()
                .for_each(|&v| out.extend_from_slice(&f32_to_f16(v).to_le_bytes())),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                what,
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

struct RawRecord<'a> {
    name: &'a [u8],
    tag: u8,
    dims: Vec<usize>,
    payload: &'a [u8],
}

fn crc_error(bytes: &[u8]) -> Option<FormatError> {
    let body_len = bytes.len().checked_sub(CRC_LEN)?;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    (stored != computed).then_some(FormatError::Crc { stored, computed })
}

/// Decodes a DWT stream.
///
/// Magic and version are checked first, then the record structure is walked
/// with bounds checks, then the CRC is verified, and only then are the
/// metadata, names and payloads interpreted.
pub fn load(bytes: &[u8]) -> Result<WeightStore, FormatError> {
    // Everything except the trailing CRC.
    let body_len = bytes.len().saturating_sub(CRC_LEN);
    let mut cur = Cursor {
        buf: &bytes[..body_len],
        pos: 0,
    };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = cur.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let meta_len = cur.u32("metadata length")? as usize;
    let meta_bytes = cur.take(meta_len, "metadata")?;
    let count = cur.u32("record count")? as usize;

    let mut raws = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = cur.take(name_len, "name")?;
        let tag = cur.u8("dtype")?;
        let Some(dtype) = DType::from_tag(tag) else {
            // An unknown tag leaves the payload size undefined; a checksum
            // mismatch is the better diagnosis when there is one.
            return Err(crc_error(bytes).unwrap_or(FormatError::Dtype { index, tag }));
        };
        let ndim = cur.u8("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32("dims")? as usize);
        }
        let payload_len = dims
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        let payload = cur.take(payload_len, "payload")?;
        raws.push(RawRecord {
            name,
            tag,
            dims,
            payload,
        });
    }
    if bytes.len() < cur.pos + CRC_LEN {
        return Err(FormatError::Truncated {
            what: "crc",
            offset: cur.pos,
            needed: CRC_LEN,
            available: bytes.len() - cur.pos,
        });
    }
    if cur.pos != body_len {
        return Err(FormatError::TrailingBytes(body_len - cur.pos));
    }
    if let Some(e) = crc_error(bytes) {
        return Err(e);
    }

    let meta_str = std::str::from_utf8(meta_bytes).map_err(|e| FormatError::Metadata(e.to_string()))?;
    let metadata: Metadata =
        serde_json::from_str(meta_str).map_err(|e| FormatError::Metadata(e.to_string()))?;
    let mut store = WeightStore::new(metadata);
    for (index, raw) in raws.into_iter().enumerate() {
        let name = std::str::from_utf8(raw.name).map_err(|_| FormatError::Name { index })?;
        let dtype = DType::from_tag(raw.tag).expect("validated above");
        let values = match dtype {
            DType::F32 => raw
                .payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            DType::F16 => raw
                .payload
                .chunks_exact(2)
                .map(|b| f16_to_f32(u16::from_le_bytes(b.try_into().unwrap())))
                .collect(),
        };
        store.insert(
            name,
            TensorRecord {
                dtype,
                dims: raw.dims,
                values,
            },
        )?;
    }
    Ok(store)
}
