//! Hash-named PNG files plus one JSON journal per session.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lumactl_core::mask::SeedPoint;
use lumactl_core::pipeline::{EnhanceReport, Mode};
use lumactl_core::prompt::Instruction;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub result_id: String,
    /// Image the edit was applied to.
    pub source_image_id: String,
    pub image_id: String,
    pub prompt: String,
    pub mode: Mode,
    pub seed_point: Option<SeedPoint>,
    pub mask_id: Option<String>,
    pub ratio_override: Option<f64>,
    pub instruction: Instruction,
    pub report: EnhanceReport,
    pub created_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub base_image_id: String,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub history: Vec<HistoryEntry>,
}

impl Session {
    pub fn current_image_id(&self) -> &str {
        self.history.last().map_or(&self.base_image_id, |e| &e.image_id)
    }
}

pub struct Store {
    images: PathBuf,
    sessions: PathBuf,
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_token(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

impl Store {
    pub fn open(root: &Path) -> io::Result<Self> {
        let s = Self { images: root.join("images"), sessions: root.join("sessions") };
        fs::create_dir_all(&s.images)?;
        fs::create_dir_all(&s.sessions)?;
        Ok(s)
    }

    /// Stores `png` under its SHA-256 and returns the hex digest.
    pub fn put_image(&self, png: &[u8]) -> io::Result<String> {
        let id = content_id(png);
        let path = self.images.join(format!("{id}.png"));
        if !path.exists() {
            write_atomic(&path, png)?;
        }
        Ok(id)
    }

    pub fn image(&self, id: &str) -> io::Result<Option<Vec<u8>>> {
        if !is_token(id) {
            return Ok(None);
        }
        match fs::read(self.images.join(format!("{id}.png"))) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save_session(&self, s: &Session) -> io::Result<()> {
        let json = serde_json::to_vec_pretty(s).map_err(io::Error::other)?;
        write_atomic(&self.sessions.join(format!("{}.json", s.id)), &json)
    }

    pub fn load_sessions(&self) -> io::Result<Vec<Session>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.sessions)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let s: Session = serde_json::from_slice(&fs::read(&path)?)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                out.push(s);
            }
        }
        out.sort_by(|a, b| a.created_ms.cmp(&b.created_ms).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }
}
