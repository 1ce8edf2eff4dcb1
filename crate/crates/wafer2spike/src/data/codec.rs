//! File codecs: the "WFM1" binary container and a plain-text CSV import.
//!
//! WFM1 layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "WFM1"
//! count   u32      number of records
//! record  u16 height, u16 width, u8 label, height·width cell bytes
//! ```
//!
//! CSV rows are `height,width,label,cells` with cells written as one digit
//! per cell in row-major order.

use std::fs;
use std::path::Path;

use crate::data::{ClassLabel, Dataset, Provenance, WaferMap};
use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) offset: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let Some(slice) = self.bytes.get(self.offset..self.offset + n) else {
            return Err(Error::format(
                self.offset as u64,
                format!("truncated while reading {what}"),
            ));
        };
        self.offset += n;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a WFM1 file. Loaded maps are tagged [`Provenance::Real`]; the tag
/// is not part of the serialized format.
pub fn load_wfm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, offset: 0 };

    let magic = r.take(4, "magic")?;
    if magic != b"WFM1" {
        return Err(Error::format(0, "bad magic, expected \"WFM1\""));
    }
    let count = r.u32("record count")?;
    let mut maps = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let height = r.u16("record height")? as usize;
        let width = r.u16("record width")? as usize;
        if height == 0 || width == 0 {
            return Err(Error::format(
                (r.offset - 4) as u64,
                format!("record extent {height}×{width} must be positive"),
            ));
        }
        let label_offset = r.offset;
        let label_code = r.take(1, "record label")?[0];
        let Some(label) = ClassLabel::from_code(label_code) else {
            return Err(Error::format(
                label_offset as u64,
                format!("label {label_code} is not one of the 9 classes"),
            ));
        };
        let cells_offset = r.offset;
        let cells = r.take(height * width, "record cells")?;
        if let Some(pos) = cells.iter().position(|c| *c > 2) {
            return Err(Error::format(
                (cells_offset + pos) as u64,
                format!("cell code {} is outside {{0,1,2}}", cells[pos]),
            ));
        }
        maps.push(WaferMap::new(height, width, cells.to_vec(), label, Provenance::Real)?);
    }
    if r.offset != bytes.len() {
        return Err(Error::format(
            r.offset as u64,
            format!("{} trailing bytes after the last record", bytes.len() - r.offset),
        ));
    }
    Ok(Dataset::new(maps, Provenance::Real))
}

/// Writes a dataset as WFM1. Provenance tags are not serialized.
pub fn save_wfm(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let count = u32::try_from(dataset.maps.len())
        .map_err(|_| Error::Input(format!("{} maps exceed the u32 record count", dataset.len())))?;
    let payload: usize = dataset.maps.iter().map(|m| 5 + m.cells().len()).sum();
    let mut bytes = Vec::with_capacity(8 + payload);
    bytes.extend_from_slice(b"WFM1");
    bytes.extend_from_slice(&count.to_le_bytes());
    for map in &dataset.maps {
        let height = u16::try_from(map.height())
            .map_err(|_| Error::Input(format!("map height {} exceeds u16", map.height())))?;
        let width = u16::try_from(map.width())
            .map_err(|_| Error::Input(format!("map width {} exceeds u16", map.width())))?;
        bytes.extend_from_slice(&height.to_le_bytes());
        bytes.extend_from_slice(&width.to_le_bytes());
        bytes.push(map.label().code());
        bytes.extend_from_slice(map.cells());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Imports the CSV form: `height,width,label,cells` per line, cells as
/// digits. Blank lines are skipped.
pub fn import_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut maps = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [h, w, label, cells] = fields.as_slice() else {
            return Err(Error::Input(format!(
                "line {line_no}: expected 4 comma-separated fields, got {}",
                fields.len()
            )));
        };
        let height: usize = h
            .parse()
            .map_err(|_| Error::Input(format!("line {line_no}: bad height {h:?}")))?;
        let width: usize = w
            .parse()
            .map_err(|_| Error::Input(format!("line {line_no}: bad width {w:?}")))?;
        let code: u8 = label
            .parse()
            .map_err(|_| Error::Input(format!("line {line_no}: bad label {label:?}")))?;
        let Some(label) = ClassLabel::from_code(code) else {
            return Err(Error::Input(format!(
                "line {line_no}: label {code} is not one of the 9 classes"
            )));
        };
        let digits = cells
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0u8),
                '1' => Ok(1),
                '2' => Ok(2),
                other => {
                    Err(Error::Input(format!("line {line_no}: cell digit {other:?} invalid")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        if digits.len() != height * width {
            return Err(Error::Input(format!(
                "line {line_no}: {} cell digits for a {height}×{width} map",
                digits.len()
            )));
        }
        maps.push(WaferMap::new(height, width, digits, label, Provenance::Real)?);
    }
    Ok(Dataset::new(maps, Provenance::Real))
}
