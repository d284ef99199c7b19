//! Frame sources for batch mode.
//!
//! - `.vraw` files: a stream header followed by raw RGB frames, i.e. a
//!   recorded stream (see [`crate::streaming::header`]). Seekable and exact.
//! - Directories of `.png`/`.jpg` images, ordered by numeric file stem (then name).
//! - Anything else is decoded through the `ffmpeg`/`ffprobe` executables.
//!
//! Resizing to a configured output size uses [`resize_bilinear`] everywhere,
//! so batch and streaming runs see identical pixels.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use ndarray::{s, Array3, Array4, ArrayView3};
use thiserror::Error;

use crate::streaming::header::{HeaderError, StreamHeader, HEADER_LEN};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("frames {start}..{end} are outside the video's {count} frames")]
    OutOfRange { start: usize, end: usize, count: usize },
    #[error("ffmpeg: {0}")]
    Ffmpeg(String),
}

pub trait VideoSource: Send {
    fn frame_count(&self) -> usize;

    /// `(height, width)` of decoded frames.
    fn frame_size(&self) -> (usize, usize);

    fn fps(&self) -> f64 {
        30.0
    }

    /// Frames `start..end` as `(N, H, W, 3)`.
    fn read_frames(&mut self, start: usize, end: usize) -> Result<Array4<u8>, VideoError>;

    fn describe(&self) -> String;
}

fn check_range(start: usize, end: usize, count: usize) -> Result<(), VideoError> {
    if start >= end || end > count {
        return Err(VideoError::OutOfRange { start, end, count });
    }
    Ok(())
}

/// Opens `path` by its type: `.vraw` file, image directory, or ffmpeg.
pub fn open_video(path: &Path) -> Result<Box<dyn VideoSource>, VideoError> {
    if path.is_dir() {
        return Ok(Box::new(ImageDirVideo::open(path)?));
    }
    if path.extension().and_then(|e| e.to_str()) == Some("vraw") {
        return Ok(Box::new(RawVideo::open(path)?));
    }
    Ok(Box::new(FfmpegVideo::open(path)?))
}

/// Frames held in memory.
#[derive(Debug, Clone)]
pub struct MemoryVideo {
    pub frames: Array4<u8>,
    pub fps: f64,
    pub name: String,
}

impl MemoryVideo {
    pub fn new(frames: Array4<u8>) -> Self {
        Self {
            frames,
            fps: 30.0,
            name: "memory".into(),
        }
    }
}

impl VideoSource for MemoryVideo {
    fn frame_count(&self) -> usize {
        self.frames.dim().0
    }

    fn frame_size(&self) -> (usize, usize) {
        let d = self.frames.dim();
        (d.1, d.2)
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn read_frames(&mut self, start: usize, end: usize) -> Result<Array4<u8>, VideoError> {
        check_range(start, end, self.frame_count())?;
        Ok(self.frames.slice(s![start..end, .., .., ..]).to_owned())
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// A `.vraw` file.
#[derive(Debug)]
pub struct RawVideo {
    path: PathBuf,
    file: File,
    header: StreamHeader,
    count: usize,
}

impl RawVideo {
    pub fn open(path: &Path) -> Result<Self, VideoError> {
        let io_err = |source| VideoError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = File::open(path).map_err(io_err)?;
        let header = StreamHeader::read_from(&mut file).map_err(|e| match e {
            HeaderError::Io(source) => io_err(source),
            other => VideoError::Format {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let len = file.metadata().map_err(io_err)?.len() as usize;
        let payload = len - HEADER_LEN;
        if payload % header.frame_bytes() != 0 {
            return Err(VideoError::Format {
                path: path.to_path_buf(),
                message: format!("{payload} payload bytes is not a whole number of frames"),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            header,
            count: payload / header.frame_bytes(),
        })
    }
}

impl VideoSource for RawVideo {
    fn frame_count(&self) -> usize {
        self.count
    }

    fn frame_size(&self) -> (usize, usize) {
        (self.header.height as usize, self.header.width as usize)
    }

    fn read_frames(&mut self, start: usize, end: usize) -> Result<Array4<u8>, VideoError> {
        check_range(start, end, self.count)?;
        let fb = self.header.frame_bytes();
        let mut buf = vec![0u8; (end - start) * fb];
        let io_err = |source| VideoError::Io {
            path: self.path.clone(),
            source,
        };
        self.file
            .seek(SeekFrom::Start((HEADER_LEN + start * fb) as u64))
            .map_err(io_err)?;
        self.file.read_exact(&mut buf).map_err(io_err)?;
        let (h, w) = self.frame_size();
        Ok(Array4::from_shape_vec((end - start, h, w, 3), buf).expect("size checked"))
    }

    fn describe(&self) -> String {
        self.path.display().to_string()
    }
}

/// Writes frames as a `.vraw` file.
pub fn write_raw_video(path: &Path, frames: &Array4<u8>) -> io::Result<()> {
    let (_, h, w, c) = frames.dim();
    if c != 3 {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frames must be RGB"));
    }
    let mut out = BufWriter::new(File::create(path)?);
    StreamHeader::rgb(w, h).write_to(&mut out)?;
    match frames.as_slice() {
        Some(bytes) => out.write_all(bytes)?,
        None => {
            for v in frames.iter() {
                out.write_all(&[*v])?;
            }
        }
    }
    out.flush()
}

/// A directory of image files, one per frame.
#[derive(Debug)]
pub struct ImageDirVideo {
    dir: PathBuf,
    files: Vec<PathBuf>,
    size: (usize, usize),
}

impl ImageDirVideo {
    pub fn open(dir: &Path) -> Result<Self, VideoError> {
        let entries = fs::read_dir(dir).map_err(|source| VideoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("png" | "jpg" | "jpeg")
                )
            })
            .collect();
        files.sort_by_key(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            (stem.parse::<u64>().unwrap_or(u64::MAX), p.clone())
        });
        let first = files.first().ok_or_else(|| VideoError::Format {
            path: dir.to_path_buf(),
            message: "no png/jpg frames found".into(),
        })?;
        let img = decode_image(first)?;
        let (h, w, _) = img.dim();
        Ok(Self {
            dir: dir.to_path_buf(),
            files,
            size: (h, w),
        })
    }
}

fn decode_image(path: &Path) -> Result<Array3<u8>, VideoError> {
    let img = image::open(path)
        .map_err(|e| VideoError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw()).expect("rgb8 layout"))
}

impl VideoSource for ImageDirVideo {
    fn frame_count(&self) -> usize {
        self.files.len()
    }

    fn frame_size(&self) -> (usize, usize) {
        self.size
    }

    fn read_frames(&mut self, start: usize, end: usize) -> Result<Array4<u8>, VideoError> {
        check_range(start, end, self.files.len())?;
        let (h, w) = self.size;
        let mut out = Array4::<u8>::zeros((end - start, h, w, 3));
        for (i, path) in self.files[start..end].iter().enumerate() {
            let img = decode_image(path)?;
            if img.dim() != (h, w, 3) {
                return Err(VideoError::Format {
                    path: path.clone(),
                    message: format!("frame is {:?}, expected {h}x{w}", img.dim()),
                });
            }
            out.slice_mut(s![i, .., .., ..]).assign(&img);
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        self.dir.display().to_string()
    }
}

/// A container file decoded by the `ffmpeg` executable.
#[derive(Debug)]
pub struct FfmpegVideo {
    path: PathBuf,
    size: (usize, usize),
    count: usize,
    fps: f64,
}

impl FfmpegVideo {
    pub fn open(path: &Path) -> Result<Self, VideoError> {
        let out = Command::new("ffprobe")
            .args([
                "-v",
                "error",
                "-select_streams",
                "v:0",
                "-count_packets",
                "-show_entries",
                "stream=width,height,nb_read_packets,r_frame_rate",
                "-of",
                "default=noprint_wrappers=1",
            ])
            .arg(path)
            .output()
            .map_err(|e| VideoError::Ffmpeg(format!("cannot run ffprobe on {}: {e}", path.display())))?;
        if !out.status.success() {
            return Err(VideoError::Ffmpeg(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let field = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::trim)
                .ok_or_else(|| VideoError::Ffmpeg(format!("ffprobe did not report {key}")))
        };
        let num = |key: &str| -> Result<usize, VideoError> {
            field(key)?
                .parse()
                .map_err(|_| VideoError::Ffmpeg(format!("bad {key} from ffprobe")))
        };
        let fps = field("r_frame_rate")
            .ok()
            .and_then(|r| {
                let (a, b) = r.split_once('/')?;
                Some(a.parse::<f64>().ok()? / b.parse::<f64>().ok()?)
            })
            .filter(|f| f.is_finite() && *f > 0.0)
            .unwrap_or(30.0);
        Ok(Self {
            path: path.to_path_buf(),
            size: (num("height")?, num("width")?),
            count: num("nb_read_packets")?,
            fps,
        })
    }
}

impl VideoSource for FfmpegVideo {
    fn frame_count(&self) -> usize {
        self.count
    }

    fn frame_size(&self) -> (usize, usize) {
        self.size
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn read_frames(&mut self, start: usize, end: usize) -> Result<Array4<u8>, VideoError> {
        check_range(start, end, self.count)?;
        let out = Command::new("ffmpeg")
            .args(["-v", "error", "-i"])
            .arg(&self.path)
            .args([
                "-vf",
                &format!("select=between(n\\,{start}\\,{})", end - 1),
                "-vsync",
                "0",
                "-f",
                "rawvideo",
                "-pix_fmt",
                "rgb24",
                "pipe:1",
            ])
            .stdin(Stdio::null())
            .output()
            .map_err(|e| VideoError::Ffmpeg(format!("cannot run ffmpeg: {e}")))?;
        let (h, w) = self.size;
        let expected = (end - start) * h * w * 3;
        if !out.status.success() || out.stdout.len() != expected {
            return Err(VideoError::Ffmpeg(format!(
                "decoding frames {start}..{end} produced {} of {expected} bytes: {}",
                out.stdout.len(),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(Array4::from_shape_vec((end - start, h, w, 3), out.stdout).expect("size checked"))
    }

    fn describe(&self) -> String {
        self.path.display().to_string()
    }
}

/// A source whose frames are resized to a fixed `(height, width)`.
pub struct Resized {
    inner: Box<dyn VideoSource>,
    size: (usize, usize),
}

impl Resized {
    /// Wraps `inner`; a `size` equal to the native size is a pass-through.
    pub fn new(inner: Box<dyn VideoSource>, size: Option<(usize, usize)>) -> Box<dyn VideoSource> {
        match size {
            Some(size) if size != inner.frame_size() => Box::new(Self { inner, size }),
            _ => inner,
        }
    }
}

impl VideoSource for Resized {
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    fn frame_size(&self) -> (usize, usize) {
        self.size
    }

    fn fps(&self) -> f64 {
        self.inner.fps()
    }

    fn read_frames(&mut self, start: usize, end: usize) -> Result<Array4<u8>, VideoError> {
        let frames = self.inner.read_frames(start, end)?;
        let (h, w) = self.size;
        let mut out = Array4::<u8>::zeros((end - start, h, w, 3));
        for i in 0..end - start {
            out.slice_mut(s![i, .., .., ..])
                .assign(&resize_bilinear(frames.slice(s![i, .., .., ..]), h, w));
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("{} @ {}x{}", self.inner.describe(), self.size.1, self.size.0)
    }
}

/// Bilinear resize with half-pixel centers and clamped borders; output
/// values are rounded to nearest. Same-size input is returned unchanged.
pub fn resize_bilinear(src: ArrayView3<u8>, out_h: usize, out_w: usize) -> Array3<u8> {
    let (h, w, c) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.to_owned();
    }
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f32 / n_out as f32;
        (0..n_out)
            .map(|i| {
                let pos = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f32);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    Array3::from_shape_fn((out_h, out_w, c), |(y, x, k)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = src[(y0, x0, k)] as f32 * (1.0 - fx) + src[(y0, x1, k)] as f32 * fx;
        let bottom = src[(y1, x0, k)] as f32 * (1.0 - fx) + src[(y1, x1, k)] as f32 * fx;
        (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
    })
}

/// The bundled photo (NASA astronaut portrait, public domain) used by
/// [`natural_clip`].
const PHOTO_JPEG: &[u8] = include_bytes!("../assets/astronaut.jpg");

fn bundled_photo() -> Array3<u8> {
    let img = image::load_from_memory_with_format(PHOTO_JPEG, image::ImageFormat::Jpeg)
        .expect("bundled photo decodes")
        .to_rgb8();
    let (w, h) = img.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw()).expect("rgb buffer")
}

/// A clip of natural footage: a window with the aspect ratio of
/// `height x width` pans slowly across the bundled photo and is resized to
/// the requested size.
pub fn natural_clip(frames: usize, height: usize, width: usize) -> Array4<u8> {
    let photo = bundled_photo();
    let (ph, pw, _) = photo.dim();
    let aspect = height as f64 / width as f64;
    let (mut cw, mut ch) = (pw * 7 / 8, ((pw * 7 / 8) as f64 * aspect).round() as usize);
    if ch > ph * 7 / 8 {
        ch = ph * 7 / 8;
        cw = (ch as f64 / aspect).round() as usize;
    }
    let (span_y, span_x) = (ph - ch, pw - cw);
    // Triangle wave so long clips bounce instead of running off the photo.
    let bounce = |t: usize, span: usize| {
        if span == 0 {
            return 0;
        }
        let p = t % (2 * span);
        if p <= span {
            p
        } else {
            2 * span - p
        }
    };
    let mut out = Array4::<u8>::zeros((frames, height, width, 3));
    for t in 0..frames {
        let (y0, x0) = (bounce(t, span_y), bounce(2 * t, span_x));
        let crop = photo.slice(s![y0..y0 + ch, x0..x0 + cw, ..]);
        out.slice_mut(s![t, .., .., ..]).assign(&resize_bilinear(crop, height, width));
    }
    out
}

/// A deterministic synthetic clip: drifting color gradients with a moving disc
/// and rectangle, plus faint fixed texture. Stands in for natural footage in
/// tests and benchmarks.
pub fn synthetic_clip(frames: usize, height: usize, width: usize) -> Array4<u8> {
    let mut out = Array4::<u8>::zeros((frames, height, width, 3));
    for t in 0..frames {
        out.slice_mut(s![t, .., .., ..]).assign(&synthetic_frame(t, height, width));
    }
    out
}

pub fn synthetic_frame(t: usize, height: usize, width: usize) -> Array3<u8> {
    let (hf, wf, tf) = (height as f32, width as f32, t as f32);
    let disc = (
        hf * (0.5 + 0.3 * (tf * 0.07).sin()),
        wf * (0.5 + 0.35 * (tf * 0.05).cos()),
        hf.min(wf) * 0.15,
    );
    let rect_x = ((tf * 4.0) as usize) % width.max(1);
    Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
        let (yf, xf) = (y as f32, x as f32);
        let dy = yf - disc.0;
        let dx = xf - disc.1;
        if dy * dy + dx * dx < disc.2 * disc.2 {
            return [230, 80, 40][c];
        }
        let in_rect = y > height / 5 && y < height / 3 && (x + width - rect_x) % width < width / 6;
        if in_rect {
            return [40, 90, 200][c];
        }
        let texture = (((x * 7 + y * 13) ^ (x * y)) % 5) as f32;
        let v = match c {
            0 => 255.0 * xf / wf * 0.8 + 30.0 * (tf * 0.1).sin() + 30.0,
            1 => 255.0 * yf / hf * 0.7 + 40.0,
            _ => 128.0 + 90.0 * ((xf + yf) / (wf + hf) * 6.0 + tf * 0.05).sin(),
        };
        (v + texture).round().clamp(0.0, 255.0) as u8
    })
}
