//! Workspace path confinement, error classes and provenance.

use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// A failed command: `User` exits with 1, `Internal` with 2.
#[derive(Debug)]
pub enum Failure {
    User(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::User(_) => 1,
            Failure::Internal(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::User(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<hyperchar::Error> for Failure {
    fn from(e: hyperchar::Error) -> Self {
        use hyperchar::Error;
        match &e {
            Error::Contract(_) => Failure::Internal(e.to_string()),
            Error::Io { source, .. }
                if !matches!(
                    source.kind(),
                    std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
                ) =>
            {
                Failure::Internal(e.to_string())
            }
            _ => Failure::User(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::User(format!("JSON error: {e}"))
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Lexical normalisation: drops `.` and resolves `..` without touching the file system.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Root directory every input and output path must stay inside.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn open(root: &Path, create: bool) -> CmdResult<Self> {
        let abs = std::path::absolute(root)
            .map_err(|e| Failure::User(format!("workspace {}: {e}", root.display())))?;
        let root = normalize(&abs);
        if create {
            fs::create_dir_all(&root).map_err(|e| {
                Failure::User(format!("cannot create workspace {}: {e}", root.display()))
            })?;
        } else if !root.is_dir() {
            return Err(Failure::User(format!(
                "workspace {} is not a directory",
                root.display()
            )));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves `p` against the workspace, rejecting anything outside it.
    pub fn resolve(&self, p: &Path) -> CmdResult<PathBuf> {
        let joined = if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        };
        let norm = normalize(&joined);
        if !norm.starts_with(&self.root) {
            return Err(Failure::User(format!(
                "{} is outside the workspace {}",
                p.display(),
                self.root.display()
            )));
        }
        Ok(norm)
    }

    /// Like [`Workspace::resolve`], creating the parent directory.
    pub fn output(&self, p: &Path) -> CmdResult<PathBuf> {
        let path = self.resolve(p)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)
                .map_err(|e| Failure::User(format!("cannot create {}: {e}", dir.display())))?;
        }
        Ok(path)
    }

    pub fn read(&self, p: &Path) -> CmdResult<Vec<u8>> {
        let path = self.resolve(p)?;
        fs::read(&path).map_err(|e| Failure::User(format!("cannot read {}: {e}", path.display())))
    }

    pub fn read_string(&self, p: &Path) -> CmdResult<String> {
        String::from_utf8(self.read(p)?)
            .map_err(|_| Failure::User(format!("{} is not UTF-8 text", p.display())))
    }

    pub fn write(&self, p: &Path, bytes: &[u8]) -> CmdResult {
        let path = self.output(p)?;
        hyperchar::series::write_atomic(&path, bytes)?;
        Ok(())
    }

    /// Path relative to the root, for messages and reports.
    pub fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.root)
            .unwrap_or(p)
            .display()
            .to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Embedded in every output: tool version, seed and a hash of the effective configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config_sha256: String,
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64, config: &[u8]) -> Self {
        Self {
            tool: "hyperchar",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config_sha256: sha256_hex(config),
        }
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain struct")
    }

    /// Single-line form for headers and SVG comments.
    pub fn line(&self) -> String {
        format!(
            "{} {} {} seed={} config_sha256={}",
            self.tool, self.version, self.command, self.seed, self.config_sha256
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_stay_inside() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path(), false).unwrap();
        assert!(ws
            .resolve(Path::new("a/../b.csv"))
            .unwrap()
            .starts_with(ws.root()));
        assert!(ws.resolve(Path::new("../x")).is_err());
        assert!(ws.resolve(Path::new("/etc/passwd")).is_err());
        let inside = ws.root().join("fits/x.json");
        assert_eq!(ws.resolve(&inside).unwrap(), inside);
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
