//! Streaming, atomic checkpoint writing.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::store::format::{render_header, HeaderEntry};
use crate::store::{Checkpoint, DType, TensorInfo, TensorSink};

/// Writes a container file tensor-at-a-time. The full layout is planned up
/// front from `(name, dtype, shape)` entries, the header is emitted
/// immediately, and payload chunks stream through a temp file in the target
/// directory; [`CheckpointWriter::finish`] renames it into place. An
/// interrupted write never leaves a partial file at the destination.
pub struct CheckpointWriter {
    out: BufWriter<NamedTempFile>,
    dest: PathBuf,
    plan: Vec<(String, HeaderEntry)>,
    next: usize,
    written_in_current: u64,
    in_tensor: bool,
}

impl CheckpointWriter {
    /// Plans the layout and writes the header. Entries may arrive in any
    /// order; data is laid out in lexicographic name order.
    pub fn create(
        path: impl AsRef<Path>,
        entries: Vec<(String, DType, Vec<usize>)>,
        metadata: Option<&BTreeMap<String, String>>,
    ) -> Result<Self> {
        let dest = path.as_ref().to_path_buf();

        let mut index: BTreeMap<String, HeaderEntry> = BTreeMap::new();
        for (name, dtype, shape) in entries {
            let info = TensorInfo::new(dtype, shape);
            if index
                .insert(
                    name.clone(),
                    HeaderEntry {
                        info,
                        data_offsets: (0, 0),
                    },
                )
                .is_some()
            {
                return Err(Error::InvalidConfig(format!(
                    "duplicate tensor name in write plan: {name:?}"
                )));
            }
        }
        let mut offset = 0u64;
        for entry in index.values_mut() {
            let len = entry.info.byte_len() as u64;
            entry.data_offsets = (offset, offset + len);
            offset += len;
        }

        let header = render_header(&index, metadata);

        let dir = dest.parent().filter(|p| !p.as_os_str().is_empty());
        let tmp = match dir {
            Some(dir) => NamedTempFile::new_in(dir)?,
            None => NamedTempFile::new_in(".")?,
        };
        let mut out = BufWriter::new(tmp);
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(header.as_bytes())?;

        Ok(Self {
            out,
            dest,
            plan: index.into_iter().collect(),
            next: 0,
            written_in_current: 0,
            in_tensor: false,
        })
    }

    /// Flushes, syncs and atomically renames the temp file onto the target
    /// path. Fails if any planned payload is missing or unfinished.
    pub fn finish(mut self) -> Result<()> {
        if self.in_tensor || self.next != self.plan.len() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint write incomplete: {}/{} tensors written",
                self.next,
                self.plan.len()
            )));
        }
        self.out.flush()?;
        let tmp = self.out.into_inner().map_err(|e| e.into_error())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.dest).map_err(|e| e.error)?;
        Ok(())
    }
}

impl TensorSink for CheckpointWriter {
    fn begin_tensor(&mut self, name: &str, dtype: DType, shape: &[usize]) -> Result<()> {
        let (planned_name, entry) = self.plan.get(self.next).ok_or_else(|| {
            Error::InvalidConfig(format!("tensor {name:?} written beyond the planned layout"))
        })?;
        if self.in_tensor
            || planned_name != name
            || entry.info.dtype != dtype
            || entry.info.shape != shape
        {
            return Err(Error::InvalidConfig(format!(
                "tensor {name:?} does not match the planned entry {planned_name:?}"
            )));
        }
        self.written_in_current = 0;
        self.in_tensor = true;
        Ok(())
    }

    fn write_chunk(&mut self, bytes: &[u8]) -> Result<()> {
        debug_assert!(self.in_tensor, "write_chunk outside begin/end tensor");
        self.written_in_current += bytes.len() as u64;
        let expected = self.plan[self.next].1.byte_len();
        if self.written_in_current > expected {
            return Err(Error::LengthMismatch {
                name: self.plan[self.next].0.clone(),
                expected: expected as usize,
                actual: self.written_in_current as usize,
            });
        }
        self.out.write_all(bytes)?;
        Ok(())
    }

    fn end_tensor(&mut self) -> Result<()> {
        let (name, entry) = &self.plan[self.next];
        if self.written_in_current != entry.byte_len() {
            return Err(Error::LengthMismatch {
                name: name.clone(),
                expected: entry.byte_len() as usize,
                actual: self.written_in_current as usize,
            });
        }
        self.in_tensor = false;
        self.next += 1;
        Ok(())
    }
}

/// Saves an in-memory checkpoint. Payload bytes are written unmodified;
/// re-saving the same checkpoint yields byte-identical files.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let entries = ckpt
        .iter()
        .map(|(name, rec)| (name.clone(), rec.dtype, rec.shape.clone()))
        .collect();
    let mut writer = CheckpointWriter::create(path, entries, ckpt.metadata.as_ref())?;
    for (name, rec) in ckpt.iter() {
        writer.begin_tensor(name, rec.dtype, &rec.shape)?;
        writer.write_chunk(&rec.data)?;
        writer.end_tensor()?;
    }
    writer.finish()
}
