//! Content-hashed handles to images, video and audio on disk.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
    Audio,
}

impl MediaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MediaKind::Image => "image",
            MediaKind::Video => "video",
            MediaKind::Audio => "audio",
        }
    }
}

/// SHA-256 of media bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("content hash must be 32 bytes"))?;
        Ok(ContentHash(arr))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MediaHandle {
    pub kind: MediaKind,
    pub uri_or_path: String,
    pub content_hash: ContentHash,
}

impl MediaHandle {
    /// Reads and hashes a local file.
    pub fn load(kind: MediaKind, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Ok(Self {
            kind,
            uri_or_path: path.to_string_lossy().into_owned(),
            content_hash: ContentHash::of(&bytes),
        })
    }

    pub fn is_remote(&self) -> bool {
        self.uri_or_path.starts_with("http://") || self.uri_or_path.starts_with("https://")
    }

    /// Reads the referenced bytes, failing if they no longer match the hash.
    pub fn read_bytes(&self) -> Result<Vec<u8>> {
        let bytes = std::fs::read(&self.uri_or_path)?;
        if ContentHash::of(&bytes) != self.content_hash {
            return Err(Error::Contract(format!(
                "media `{}` changed on disk since it was loaded",
                self.uri_or_path
            )));
        }
        Ok(bytes)
    }

    pub fn extension(&self) -> &str {
        Path::new(&self.uri_or_path)
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("bin")
    }
}

/// Guesses a file extension from magic bytes.
pub fn sniff_extension(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "jpg"
    } else if bytes.starts_with(b"GIF8") {
        "gif"
    } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        "webp"
    } else {
        "bin"
    }
}

/// Directory where generated media is written, named by content hash.
#[derive(Debug, Clone)]
pub struct MediaStore {
    dir: PathBuf,
}

impl MediaStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn persist(&self, kind: MediaKind, bytes: &[u8]) -> Result<MediaHandle> {
        std::fs::create_dir_all(&self.dir)?;
        let hash = ContentHash::of(bytes);
        let path = self.dir.join(format!("{}.{}", hash.to_hex(), sniff_extension(bytes)));
        if !path.exists() {
            let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
            std::io::Write::write_all(&mut tmp, bytes)?;
            tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
        }
        Ok(MediaHandle {
            kind,
            uri_or_path: path.to_string_lossy().into_owned(),
            content_hash: hash,
        })
    }
}
