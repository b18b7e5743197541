//! Checkpoint persistence and portable pixmap I/O.

mod checkpoint;
mod pixmap;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use pixmap::{
    colorize, decode_pgm, decode_ppm, encode_pgm, encode_ppm, image_to_tensor, labels_to_gray, read_ppm, tensor_to_image, GrayImage,
    RgbImage,
};

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so `path` is never left partially written.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
