use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

const LOCK_FILE: &str = ".speedlimit.lock";
const STAMP_FILE: &str = "stamp";

/// An output directory held exclusively by this process.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    lock: PathBuf,
}

impl Workspace {
    /// Creates `root` if needed and takes its lock file. A lock left by a
    /// process that no longer exists is taken over.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let lock = root.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&lock) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(Self {
                        root: root.to_path_buf(),
                        lock,
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&lock).unwrap_or_default();
                    let pid = holder.trim().parse::<u32>().ok();
                    let alive = pid.is_some_and(|p| Path::new(&format!("/proc/{p}")).exists());
                    if alive || !Path::new("/proc/self").exists() {
                        log::error!("lock held by process {}", holder.trim());
                        return Err(Error::Locked(lock));
                    }
                    log::warn!("removing stale lock left by process {}", holder.trim());
                    fs::remove_file(&lock)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::Locked(lock))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `root/name`, created if missing.
    pub fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Content hash recorded for the artifacts in `dir`, if any.
pub fn read_stamp(dir: &Path) -> Option<String> {
    fs::read_to_string(dir.join(STAMP_FILE))
        .ok()
        .map(|s| s.trim().to_string())
}

pub fn write_stamp(dir: &Path, hash: &str) -> Result<()> {
    write_atomic(&dir.join(STAMP_FILE), format!("{hash}\n").as_bytes())
}

/// Whether `dir` holds artifacts for `hash` and every listed file exists.
pub fn is_fresh(dir: &Path, hash: &str, files: &[&str]) -> bool {
    read_stamp(dir).as_deref() == Some(hash) && files.iter().all(|f| dir.join(f).exists())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            what: what.into(),
        },
        _ => Error::Io(e),
    })?;
    Ok(serde_json::from_str(&text)?)
}
