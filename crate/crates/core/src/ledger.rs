//! Append-only newline-delimited JSON files.
//!
//! One record per line, UTF-8. Lines that fail to parse (a write torn by a
//! crash) are skipped on load and counted.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing::warn;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub skipped_lines: usize,
}

/// Reads every parseable record. A missing file yields no records.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>> {
    let mut loaded = Loaded {
        records: Vec::new(),
        skipped_lines: 0,
    };
    for_each_jsonl(path, |r| loaded.records.push(r), &mut loaded.skipped_lines)?;
    Ok(loaded)
}

/// Streams records through `f` without holding the whole file.
pub fn for_each_jsonl<T: DeserializeOwned>(
    path: &Path,
    mut f: impl FnMut(T),
    skipped: &mut usize,
) -> Result<()> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(rec) => f(rec),
            Err(e) => {
                warn!(file = %path.display(), line = n + 1, error = %e, "skipping unreadable record");
                *skipped += 1;
            }
        }
    }
    Ok(())
}

/// Single-writer appender. Each record is written with one `write_all` of the
/// full line followed by a flush.
#[derive(Debug)]
pub struct JsonlAppender<T> {
    path: PathBuf,
    file: File,
    _marker: PhantomData<fn(&T)>,
}

impl<T: Serialize> JsonlAppender<T> {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        // A torn tail gets terminated so the next record starts on a fresh line.
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1))
                .and_then(|_| file.read_exact(&mut last))
                .map_err(|e| Error::io(path, e))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            _marker: PhantomData,
        })
    }

    pub fn append(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_vec(record).map_err(|e| Error::io(&self.path, e.into()))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
