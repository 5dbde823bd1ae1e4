//! File loading and saving with errors that name the file.

use genseg_core::error::Error;
use genseg_core::format;
use ndarray::Array2;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    NoPath(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NoPath(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NoPath(m) => f.write_str(m),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches `path` to a library error.
pub fn in_file(path: &Path, e: Error) -> CliError {
    let name = path.display();
    match e {
        Error::Parse { offset, message } => CliError::Data(format!("{name}: byte {offset}: {message}")),
        Error::NoPath { .. } => CliError::NoPath(format!("{name}: {e}")),
        other => CliError::Data(format!("{name}: {other}")),
    }
}

pub fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    String::from_utf8(bytes).map_err(|e| {
        data(format!("{}: byte {}: invalid UTF-8", path.display(), e.utf8_error().valid_up_to()))
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or stdout when none is given.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Frames from a `GSEQ1` file, or from CSV when `csv` is set.
pub fn load_frames(path: &Path, csv: bool) -> CliResult<Array2<f64>> {
    if csv {
        format::frames_from_csv(&read_text(path)?).map_err(|e| in_file(path, e))
    } else {
        let bytes = fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        format::frames_from_bytes(&bytes).map_err(|e| in_file(path, e))
    }
}

pub fn save_frames(path: &Path, frames: &Array2<f64>) -> CliResult<()> {
    write_bytes(path, &format::frames_to_bytes(frames))
}

/// Parses a text model file with `parse`.
pub fn load_model<T>(path: &Path, parse: impl Fn(&str) -> genseg_core::Result<T>) -> CliResult<T> {
    parse(&read_text(path)?).map_err(|e| in_file(path, e))
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "out".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Annotation of a sequence: `<dir>/<stem>.ann`, where `dir` defaults to the
/// sequence's own directory.
pub fn annotation_path(seq: &Path, ann_dir: Option<&Path>) -> PathBuf {
    let dir = ann_dir.map_or_else(|| seq.parent().unwrap_or(Path::new("")).to_path_buf(), Path::to_path_buf);
    dir.join(format!("{}.ann", stem(seq)))
}
