//! `.npz` containers: a zip archive holding one `arr_0.npy` entry, stored
//! (uncompressed) or deflated, as written by `numpy.savez` and
//! `numpy.savez_compressed`. Entry timestamps are fixed so identical arrays
//! produce identical files.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::representation::ArrayData;

use super::npy;

pub const ENTRY_NAME: &str = "arr_0.npy";

#[derive(Debug, Error)]
pub enum NpzError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("zip error: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error("bad array file: {0}")]
    Format(String),
}

pub fn encode_npz(data: &ArrayData, compress: bool) -> Result<Vec<u8>, NpzError> {
    let npy_bytes = npy::encode_frame(data)?;
    let method = if compress {
        CompressionMethod::Deflated
    } else {
        CompressionMethod::Stored
    };
    let options = SimpleFileOptions::default()
        .compression_method(method)
        .last_modified_time(DateTime::default())
        .large_file(npy_bytes.len() >= u32::MAX as usize);
    let mut zip = ZipWriter::new(Cursor::new(Vec::with_capacity(npy_bytes.len() + 256)));
    zip.start_file(ENTRY_NAME, options)?;
    zip.write_all(&npy_bytes)?;
    Ok(zip.finish()?.into_inner())
}

pub fn decode_npz(bytes: &[u8]) -> Result<ArrayData, NpzError> {
    let mut archive = ZipArchive::new(Cursor::new(bytes))?;
    let index = match archive.index_for_name(ENTRY_NAME) {
        Some(i) => i,
        None => (0..archive.len())
            .find(|&i| archive.name_for_index(i).is_some_and(|n| n.ends_with(".npy")))
            .ok_or_else(|| NpzError::Format("archive holds no .npy entry".into()))?,
    };
    let mut entry = archive.by_index(index)?;
    let mut npy_bytes = Vec::with_capacity(entry.size() as usize);
    entry.read_to_end(&mut npy_bytes)?;
    npy::decode_frame(&npy_bytes)
}

pub fn write_npz(path: &Path, data: &ArrayData, compress: bool) -> Result<(), NpzError> {
    fs::write(path, encode_npz(data, compress)?)?;
    Ok(())
}

pub fn read_npz(path: &Path) -> Result<ArrayData, NpzError> {
    decode_npz(&fs::read(path)?)
}
