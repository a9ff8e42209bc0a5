//! Little-endian binary raster formats and the JSON instance-mask format.
//!
//! | file     | layout                                                        |
//! |----------|---------------------------------------------------------------|
//! | `.plbl`  | `PLBL` u32 H, u32 W, u8 ignore, u8 C, H*W label bytes          |
//! | `.plgt`  | `PLGT` u32 H, u32 W, u32 C, H*W*C f32 (row-major, channel-last)|
//! | `.plbd`  | `PLBD` u32 H, u32 W, H*W bytes in {0, 1}                       |
//! | `.json`  | `{"height", "width", "masks": [{"id", "area", "rle"}]}`       |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::maps::{BinaryMap, ImageDims, LabelMap, LogitsMap};
use crate::rle::InstanceMaskSet;

pub const LABEL_MAGIC: &[u8; 4] = b"PLBL";
pub const LOGITS_MAGIC: &[u8; 4] = b"PLGT";
pub const BINARY_MAGIC: &[u8; 4] = b"PLBD";

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::Truncated { expected: self.pos.saturating_add(n), found: self.buf.len() })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<ImageDims> {
        let h = self.u32()? as usize;
        let w = self.u32()? as usize;
        ImageDims::new(h, w).map_err(|_| Error::Format(format!("invalid dimensions {h}x{w}")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_all(mut reader: impl Read) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    Ok(buf)
}

fn payload_len(dims: ImageDims, channels: usize, elem: usize) -> Result<usize> {
    dims.pixels()
        .checked_mul(channels)
        .and_then(|n| n.checked_mul(elem))
        .ok_or_else(|| Error::Format("declared payload size overflows".into()))
}

fn dim_u32(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| Error::Format(format!("dimension {v} does not fit in u32")))
}

pub fn read_label(reader: impl Read) -> Result<LabelMap> {
    let buf = read_all(reader)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    cur.magic(LABEL_MAGIC)?;
    let dims = cur.dims()?;
    let ignore = cur.u8()?;
    let classes = cur.u8()? as usize;
    if classes == 0 {
        return Err(Error::Format("label file declares zero classes".into()));
    }
    let labels = cur.take(payload_len(dims, 1, 1)?)?.to_vec();
    cur.finish()?;
    LabelMap::new(dims, classes, ignore, labels)
}

pub fn write_label(mut writer: impl Write, map: &LabelMap) -> Result<()> {
    writer.write_all(LABEL_MAGIC)?;
    writer.write_all(&dim_u32(map.dims().height)?)?;
    writer.write_all(&dim_u32(map.dims().width)?)?;
    writer.write_all(&[map.ignore_label(), map.num_classes() as u8])?;
    writer.write_all(map.labels())?;
    writer.flush()?;
    Ok(())
}

pub fn read_logits(reader: impl Read) -> Result<LogitsMap> {
    let buf = read_all(reader)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    cur.magic(LOGITS_MAGIC)?;
    let dims = cur.dims()?;
    let classes = cur.u32()? as usize;
    if classes == 0 {
        return Err(Error::Format("logits file declares zero classes".into()));
    }
    let raw = cur.take(payload_len(dims, classes, 4)?)?;
    cur.finish()?;
    let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    LogitsMap::new(dims, classes, values)
}

pub fn write_logits(mut writer: impl Write, map: &LogitsMap) -> Result<()> {
    writer.write_all(LOGITS_MAGIC)?;
    writer.write_all(&dim_u32(map.dims().height)?)?;
    writer.write_all(&dim_u32(map.dims().width)?)?;
    writer.write_all(&dim_u32(map.num_classes())?)?;
    let mut bytes = Vec::with_capacity(map.values().len() * 4);
    for v in map.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&bytes)?;
    writer.flush()?;
    Ok(())
}

pub fn read_binary(reader: impl Read) -> Result<BinaryMap> {
    let buf = read_all(reader)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    cur.magic(BINARY_MAGIC)?;
    let dims = cur.dims()?;
    let raw = cur.take(payload_len(dims, 1, 1)?)?;
    cur.finish()?;
    let bits = raw
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::InvalidValue(format!("binary map byte {other} at index {i}"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    BinaryMap::new(dims, bits)
}

pub fn write_binary(mut writer: impl Write, map: &BinaryMap) -> Result<()> {
    writer.write_all(BINARY_MAGIC)?;
    writer.write_all(&dim_u32(map.dims().height)?)?;
    writer.write_all(&dim_u32(map.dims().width)?)?;
    let bytes: Vec<u8> = map.bits().iter().map(|&b| b as u8).collect();
    writer.write_all(&bytes)?;
    writer.flush()?;
    Ok(())
}

pub fn read_masks(reader: impl Read) -> Result<InstanceMaskSet> {
    Ok(serde_json::from_reader(BufReader::new(reader))?)
}

pub fn write_masks(writer: impl Write, set: &InstanceMaskSet) -> Result<()> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer(&mut w, set)?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_label(path: impl AsRef<Path>) -> Result<LabelMap> {
    read_label(open(path.as_ref())?)
}

pub fn load_logits(path: impl AsRef<Path>) -> Result<LogitsMap> {
    read_logits(open(path.as_ref())?)
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<BinaryMap> {
    read_binary(open(path.as_ref())?)
}

pub fn load_masks(path: impl AsRef<Path>) -> Result<InstanceMaskSet> {
    read_masks(open(path.as_ref())?)
}

pub fn save_label(path: impl AsRef<Path>, map: &LabelMap) -> Result<()> {
    write_label(BufWriter::new(File::create(path)?), map)
}

pub fn save_logits(path: impl AsRef<Path>, map: &LogitsMap) -> Result<()> {
    write_logits(BufWriter::new(File::create(path)?), map)
}

pub fn save_binary(path: impl AsRef<Path>, map: &BinaryMap) -> Result<()> {
    write_binary(BufWriter::new(File::create(path)?), map)
}

pub fn save_masks(path: impl AsRef<Path>, set: &InstanceMaskSet) -> Result<()> {
    write_masks(File::create(path)?, set)
}
