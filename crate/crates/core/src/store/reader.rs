//! Lazy checkpoint reading.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::store::format::{parse_header, HeaderEntry};
use crate::store::{Checkpoint, TensorInfo, TensorSource};

/// Handle over a container file. The header index is parsed eagerly;
/// payload bytes are read on demand, so loading a checkpoint and touching
/// one tensor allocates payload memory for that tensor only.
///
/// Range reads take `&self` and use positioned I/O, so disjoint tensors can
/// be fetched from multiple threads concurrently.
pub struct CheckpointReader {
    path: PathBuf,
    file: File,
    data_start: u64,
    index: BTreeMap<String, HeaderEntry>,
    metadata: Option<BTreeMap<String, String>>,
}

impl CheckpointReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path)?;
        let file_len = file.metadata()?.len();

        let mut len_bytes = [0u8; 8];
        if file_len < 8 {
            return Err(Error::Truncated {
                expected: 8,
                actual: file_len,
            });
        }
        file.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes);

        let data_start = 8u64.checked_add(header_len).ok_or(Error::InvalidHeader(
            "header length overflows file addressing".into(),
        ))?;
        if data_start > file_len {
            return Err(Error::Truncated {
                expected: data_start,
                actual: file_len,
            });
        }

        let mut header = vec![0u8; header_len as usize];
        file.read_exact(&mut header)?;
        let (index, metadata) = parse_header(&header, file_len - data_start)?;

        Ok(Self {
            path,
            file,
            data_start,
            index,
            metadata,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Name → (dtype, shape, offsets) index in lexicographic order.
    pub fn index(&self) -> &BTreeMap<String, HeaderEntry> {
        &self.index
    }

    pub fn metadata(&self) -> Option<&BTreeMap<String, String>> {
        self.metadata.as_ref()
    }

    /// Reads every tensor into memory.
    pub fn load(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        for name in self.index.keys() {
            ckpt.insert(self.read_record(name)?);
        }
        ckpt.metadata = self.metadata.clone();
        Ok(ckpt)
    }

    fn entry(&self, name: &str) -> Result<&HeaderEntry> {
        self.index
            .get(name)
            .ok_or_else(|| Error::TensorNotFound(name.to_string()))
    }

    #[cfg(unix)]
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        use std::os::unix::fs::FileExt;
        self.file.read_exact_at(buf, offset)?;
        Ok(())
    }

    #[cfg(not(unix))]
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        // No positioned-read primitive; reopen to keep `&self` reads safe.
        use std::io::{Seek, SeekFrom};
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(offset))?;
        file.read_exact(buf)?;
        Ok(())
    }
}

/// Opens a container file, returning the lazy handle.
///
/// Convenience alias for [`CheckpointReader::open`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointReader> {
    CheckpointReader::open(path)
}

impl TensorSource for CheckpointReader {
    fn names(&self) -> Vec<String> {
        self.index.keys().cloned().collect()
    }

    fn info(&self, name: &str) -> Option<TensorInfo> {
        self.index.get(name).map(|e| e.info.clone())
    }

    fn read_range(&self, name: &str, byte_offset: u64, buf: &mut [u8]) -> Result<()> {
        let entry = self.entry(name)?;
        let end = byte_offset + buf.len() as u64;
        if end > entry.byte_len() {
            return Err(Error::InvalidOffsets {
                name: name.to_string(),
                detail: format!(
                    "range {byte_offset}..{end} beyond {} payload bytes",
                    entry.byte_len()
                ),
            });
        }
        self.read_at(self.data_start + entry.data_offsets.0 + byte_offset, buf)
    }
}
