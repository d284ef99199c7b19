//! On-disk export layout:
//!
//! ```text
//! <root>/
//!   .logs/run_metadata_<id>.json, log_<id>.txt
//!   <repr>/representation_metadata.json
//!   <repr>/npz/<frame>.npz
//!   <repr>/jpg/<frame>.jpg
//! ```
//!
//! Frame file stems are unpadded zero-based frame indices. The metadata file
//! is the ground truth for what has been computed; it is rewritten as a whole
//! under a per-representation lock file and replaced by rename, so readers
//! never observe a partial document and concurrent writers of disjoint frames
//! never lose records.

pub mod metadata;
pub mod npy;
pub mod npz;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;
use ndarray::Array3;
use thiserror::Error;

pub use metadata::{FrameRecord, FrameStatus, ReprMetadata, ReprRunStats, RunMetadata, RunStatus};

use crate::representation::{ReprError, ReprOutput, Representation};

pub const METADATA_FILE: &str = "representation_metadata.json";
pub const LOCK_FILE: &str = ".representation_metadata.lock";
pub const LOGS_DIR: &str = ".logs";
pub const JPEG_QUALITY: u8 = 95;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} is corrupt ({message}); rebuild it with `vre regen-metadata`")]
    CorruptMetadata { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Repr {
        path: PathBuf,
        #[source]
        source: ReprError,
    },
    #[error("{path}: image encoding failed: {message}")]
    Image { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// A sibling temp path, unique per process and call.
fn temp_path(target: &Path) -> PathBuf {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    target.with_file_name(format!(".{name}.tmp.{}.{n}", std::process::id()))
}

/// Writes `bytes` to `path` by writing a temp file and renaming it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let tmp = temp_path(path);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// What was written for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredFrame {
    pub binary: bool,
    pub image: bool,
}

#[derive(Debug, Clone)]
pub struct ExportStore {
    root: PathBuf,
}

impl ExportStore {
    /// Opens (creating if needed) an export directory.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let root = root.into();
        let logs = root.join(LOGS_DIR);
        fs::create_dir_all(&logs).map_err(io_err(&logs))?;
        Ok(Self { root })
    }

    /// Opens an existing directory without creating anything.
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn repr_dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn npz_path(&self, name: &str, frame: usize) -> PathBuf {
        self.root.join(name).join("npz").join(format!("{frame}.npz"))
    }

    pub fn image_path(&self, name: &str, frame: usize) -> PathBuf {
        self.root.join(name).join("jpg").join(format!("{frame}.jpg"))
    }

    pub fn metadata_path(&self, name: &str) -> PathBuf {
        self.root.join(name).join(METADATA_FILE)
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join(LOGS_DIR)
    }

    pub fn run_metadata_path(&self, run_id: &str) -> PathBuf {
        self.logs_dir().join(format!("run_metadata_{run_id}.json"))
    }

    pub fn log_path(&self, run_id: &str) -> PathBuf {
        self.logs_dir().join(format!("log_{run_id}.txt"))
    }

    pub fn ensure_repr_dirs(&self, name: &str, binary: bool, image: bool) -> Result<(), StorageError> {
        let dir = self.repr_dir(name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (wanted, sub) in [(binary, "npz"), (image, "jpg")] {
            if wanted {
                let d = dir.join(sub);
                fs::create_dir_all(&d).map_err(io_err(&d))?;
            }
        }
        Ok(())
    }

    /// Writes the binary and/or image files of one frame. Metadata is
    /// committed separately with [`ExportStore::commit_records`].
    pub fn write_frame(
        &self,
        repr: &dyn Representation,
        name: &str,
        frame_index: usize,
        output: &ReprOutput,
        image: Option<&Array3<u8>>,
        binary: bool,
        compress: bool,
    ) -> Result<StoredFrame, StorageError> {
        self.ensure_repr_dirs(name, binary, image.is_some())?;
        if binary {
            let path = self.npz_path(name, frame_index);
            let tmp = temp_path(&path);
            repr.memory_to_disk(output, &tmp, compress)
                .map_err(|source| StorageError::Repr { path: path.clone(), source })?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        if let Some(img) = image {
            self.write_image(name, frame_index, img)?;
        }
        Ok(StoredFrame {
            binary,
            image: image.is_some(),
        })
    }

    pub fn write_image(&self, name: &str, frame_index: usize, img: &Array3<u8>) -> Result<(), StorageError> {
        let path = self.image_path(name, frame_index);
        let (h, w, _) = img.dim();
        let pixels: Vec<u8> = img.iter().copied().collect();
        let mut bytes = Vec::new();
        JpegEncoder::new_with_quality(&mut bytes, JPEG_QUALITY)
            .encode(&pixels, w as u32, h as u32, ExtendedColorType::Rgb8)
            .map_err(|e| StorageError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        atomic_write(&path, &bytes)
    }

    pub fn read_frame(
        &self,
        repr: &dyn Representation,
        name: &str,
        frame_index: usize,
    ) -> Result<ReprOutput, StorageError> {
        let path = self.npz_path(name, frame_index);
        repr.disk_to_memory(&path)
            .map_err(|source| StorageError::Repr { path, source })
    }

    /// Metadata for `name`; an absent file means nothing was computed.
    pub fn load_metadata(&self, name: &str) -> Result<ReprMetadata, StorageError> {
        let path = self.metadata_path(name);
        match fs::read(&path) {
            Ok(bytes) => parse_metadata(&path, &bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(ReprMetadata::empty(name)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Atomically merges records into the representation metadata. Returns
    /// `(frame, previous run id)` for records replaced from another run.
    pub fn commit_records(&self, name: &str, records: Vec<FrameRecord>) -> Result<Vec<(usize, String)>, StorageError> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let _guard = self.lock(name)?;
        let mut meta = self.load_metadata(name)?;
        let replaced = meta.merge(records);
        self.store_metadata(&meta)?;
        Ok(replaced)
    }

    /// Replaces the whole metadata document.
    pub fn store_metadata(&self, meta: &ReprMetadata) -> Result<(), StorageError> {
        let bytes = serde_json::to_vec_pretty(meta).expect("metadata serializes");
        atomic_write(&self.metadata_path(&meta.name), &bytes)
    }

    fn lock(&self, name: &str) -> Result<File, StorageError> {
        let dir = self.repr_dir(name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(LOCK_FILE);
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.lock().map_err(io_err(&path))?;
        Ok(file)
    }

    /// Frames among `frames` recorded as successfully computed. Decided from
    /// metadata only; data files are not inspected.
    pub fn already_computed(
        &self,
        name: &str,
        frames: impl IntoIterator<Item = usize>,
    ) -> Result<BTreeSet<usize>, StorageError> {
        let meta = self.load_metadata(name)?;
        Ok(frames
            .into_iter()
            .filter(|&i| meta.get(i).is_some_and(FrameRecord::is_ok))
            .collect())
    }

    /// Rebuilds `name`'s metadata from the data files on disk and stores it.
    /// Unreadable binary files are skipped and returned alongside.
    pub fn regenerate_metadata(&self, name: &str) -> Result<(ReprMetadata, Vec<(PathBuf, String)>), StorageError> {
        let run_id = format!("{}-{}", metadata::REGENERATED_PREFIX, chrono::Utc::now().format("%Y%m%dT%H%M%S%.6f"));
        let dir = self.repr_dir(name);
        let mut binaries = BTreeSet::new();
        let mut images = BTreeSet::new();
        let mut skipped = Vec::new();
        for path in frame_files(&dir.join("npz"), "npz")? {
            let Some(idx) = frame_stem(&path) else { continue };
            match npz::read_npz(&path) {
                Ok(_) => {
                    binaries.insert(idx);
                }
                Err(e) => skipped.push((path, e.to_string())),
            }
        }
        for path in frame_files(&dir.join("jpg"), "jpg")? {
            if let Some(idx) = frame_stem(&path) {
                images.insert(idx);
            }
        }
        let mut meta = ReprMetadata::empty(name);
        meta.merge(binaries.union(&images).map(|&i| FrameRecord {
            frame_index: i,
            run_id: run_id.clone(),
            duration_s: None,
            stored_binary: binaries.contains(&i),
            stored_image: images.contains(&i),
            status: FrameStatus::Ok,
            error: None,
            stats: Default::default(),
        }));
        if dir.exists() {
            let _guard = self.lock(name)?;
            self.store_metadata(&meta)?;
            let logs = self.logs_dir();
            fs::create_dir_all(&logs).map_err(io_err(&logs))?;
            let mut run = RunMetadata::new(&run_id, "", [0, 0], "");
            run.status = RunStatus::Completed;
            run.ended_at = Some(run.started_at);
            self.write_run_metadata(&run)?;
        }
        Ok((meta, skipped))
    }

    pub fn write_run_metadata(&self, run: &RunMetadata) -> Result<(), StorageError> {
        let bytes = serde_json::to_vec_pretty(run).expect("run metadata serializes");
        atomic_write(&self.run_metadata_path(&run.run_id), &bytes)
    }

    pub fn read_run_metadata(&self, run_id: &str) -> Result<RunMetadata, StorageError> {
        let path = self.run_metadata_path(run_id);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| StorageError::CorruptMetadata {
            path,
            message: e.to_string(),
        })
    }

    /// All run metadata documents, oldest first.
    pub fn list_runs(&self) -> Result<Vec<RunMetadata>, StorageError> {
        let logs = self.logs_dir();
        let mut runs = Vec::new();
        let entries = match fs::read_dir(&logs) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(runs),
            Err(e) => return Err(io_err(&logs)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(&logs))?;
            let file_name = entry.file_name();
            let Some(id) = file_name
                .to_str()
                .and_then(|n| n.strip_prefix("run_metadata_"))
                .and_then(|n| n.strip_suffix(".json"))
            else {
                continue;
            };
            runs.push(self.read_run_metadata(id)?);
        }
        runs.sort_by(|a, b| a.started_at.cmp(&b.started_at).then(a.run_id.cmp(&b.run_id)));
        Ok(runs)
    }

    /// Names of representation directories that hold a metadata file.
    pub fn representations(&self) -> Result<Vec<String>, StorageError> {
        let mut names = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(names),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            let path = entry.path();
            if path.is_dir() && path.join(METADATA_FILE).is_file() {
                if let Some(n) = path.file_name().and_then(|n| n.to_str()) {
                    names.push(n.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    /// Appends a line to the run log.
    pub fn append_log(&self, run_id: &str, line: &str) -> Result<(), StorageError> {
        let path = self.log_path(run_id);
        let mut f = File::options()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(f, "{line}").map_err(io_err(&path))
    }
}

fn parse_metadata(path: &Path, bytes: &[u8]) -> Result<ReprMetadata, StorageError> {
    let meta: ReprMetadata = serde_json::from_slice(bytes).map_err(|e| StorageError::CorruptMetadata {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if meta.format_version != metadata::FORMAT_VERSION {
        return Err(StorageError::CorruptMetadata {
            path: path.to_path_buf(),
            message: format!("unsupported format_version {}", meta.format_version),
        });
    }
    if meta.frames.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
        return Err(StorageError::CorruptMetadata {
            path: path.to_path_buf(),
            message: "frame records are not unique and sorted".into(),
        });
    }
    Ok(meta)
}

fn frame_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, StorageError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn frame_stem(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.parse().ok()
}
