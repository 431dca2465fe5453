//! Plain http(s) download of dataset exports.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("unsupported url scheme (need http or https): {0}")]
    UnsupportedScheme(String),
    #[error("network error fetching {url}: {message}")]
    Network { url: String, message: String },
    #[error("http status {status} fetching {url}")]
    Status { url: String, status: u16 },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("checksum mismatch for {url}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        url: String,
        expected: String,
        actual: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchStatus {
    Downloaded,
    /// Existing file already matched; nothing was written.
    Cached,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub path: PathBuf,
    pub status: FetchStatus,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    url: String,
    sha256: String,
    bytes: u64,
    etag: Option<String>,
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sidecar_path(dest: &Path) -> PathBuf {
    let mut name = dest.file_name().unwrap_or_default().to_os_string();
    name.push(".fetch.json");
    dest.with_file_name(name)
}

fn partial_path(dest: &Path) -> PathBuf {
    let mut name = dest.file_name().unwrap_or_default().to_os_string();
    name.push(".part");
    dest.with_file_name(name)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FetchError + '_ {
    move |source| FetchError::Io { path: path.to_path_buf(), source }
}

fn hash_file(path: &Path) -> Result<(String, u64), FetchError> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), bytes))
}

struct PartialFile {
    path: PathBuf,
    keep: bool,
}

impl Drop for PartialFile {
    fn drop(&mut self) {
        if !self.keep {
            let _ = fs::remove_file(&self.path);
        }
    }
}

/// Streams `url` to `dest`.
///
/// A file already at `dest` is kept when it matches `expected_sha256`, when
/// the server answers 304 to the ETag recorded by a previous fetch, or when
/// the re-downloaded bytes hash identically. Failed downloads leave no file
/// behind.
pub fn fetch_dataset(url: &str, dest: &Path, expected_sha256: Option<&str>) -> Result<FetchOutcome, FetchError> {
    let lower = url.to_ascii_lowercase();
    if !(lower.starts_with("http://") || lower.starts_with("https://")) {
        return Err(FetchError::UnsupportedScheme(url.to_string()));
    }
    let expected = expected_sha256.map(|s| s.trim().to_ascii_lowercase());

    let existing = if dest.is_file() { Some(hash_file(dest)?) } else { None };
    if let (Some((hash, bytes)), Some(want)) = (&existing, &expected) {
        if hash == want {
            log::info!("{}: cached ({} bytes, sha256 {})", dest.display(), bytes, hash);
            return Ok(FetchOutcome { path: dest.to_path_buf(), status: FetchStatus::Cached, bytes: *bytes, sha256: hash.clone() });
        }
    }
    let sidecar: Option<Sidecar> = fs::read(sidecar_path(dest))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .filter(|s: &Sidecar| s.url == url && existing.as_ref().is_some_and(|(h, _)| *h == s.sha256));

    let config = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(600)))
        .build();
    let agent = ureq::Agent::new_with_config(config);
    let mut request = agent.get(url);
    if let Some(etag) = sidecar.as_ref().and_then(|s| s.etag.as_deref()) {
        request = request.header("If-None-Match", etag);
    }
    let mut response = request.call().map_err(|e| FetchError::Network { url: url.to_string(), message: e.to_string() })?;
    let status = response.status().as_u16();
    if status == 304 {
        if let Some((hash, bytes)) = existing {
            log::info!("{}: not modified, cached ({} bytes, sha256 {})", dest.display(), bytes, hash);
            return Ok(FetchOutcome { path: dest.to_path_buf(), status: FetchStatus::Cached, bytes, sha256: hash });
        }
    }
    if !(200..300).contains(&status) {
        return Err(FetchError::Status { url: url.to_string(), status });
    }
    let etag = response
        .headers()
        .get("etag")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);

    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let part_path = partial_path(dest);
    let mut part = PartialFile { path: part_path.clone(), keep: false };
    let mut hasher = Sha256::new();
    let mut bytes = 0u64;
    {
        let mut out = BufWriter::new(File::create(&part_path).map_err(io_err(&part_path))?);
        let mut reader = response.body_mut().as_reader();
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = reader.read(&mut buf).map_err(|e| FetchError::Network { url: url.to_string(), message: e.to_string() })?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            out.write_all(&buf[..n]).map_err(io_err(&part_path))?;
            bytes += n as u64;
        }
        out.flush().map_err(io_err(&part_path))?;
    }
    let sha256 = hex::encode(hasher.finalize());
    if let Some(want) = expected {
        if want != sha256 {
            return Err(FetchError::ChecksumMismatch { url: url.to_string(), expected: want, actual: sha256 });
        }
    }

    let record = Sidecar { url: url.to_string(), sha256: sha256.clone(), bytes, etag };
    let write_sidecar = |record: &Sidecar| {
        let side = sidecar_path(dest);
        fs::write(&side, serde_json::to_vec_pretty(record).expect("sidecar serializes")).map_err(io_err(&side))
    };
    if existing.as_ref().is_some_and(|(h, _)| *h == sha256) {
        write_sidecar(&record)?;
        log::info!("{}: unchanged, cached ({} bytes, sha256 {})", dest.display(), bytes, sha256);
        return Ok(FetchOutcome { path: dest.to_path_buf(), status: FetchStatus::Cached, bytes, sha256 });
    }
    fs::rename(&part_path, dest).map_err(io_err(dest))?;
    part.keep = true;
    write_sidecar(&record)?;
    log::info!("{}: downloaded {} bytes, sha256 {}", dest.display(), bytes, sha256);
    Ok(FetchOutcome { path: dest.to_path_buf(), status: FetchStatus::Downloaded, bytes, sha256 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_http_schemes() {
        let dir = tempfile::tempdir().unwrap();
        let err = fetch_dataset("ftp://example.com/x.csv", &dir.path().join("x.csv"), None).unwrap_err();
        assert!(matches!(err, FetchError::UnsupportedScheme(_)));
    }

    #[test]
    fn unreachable_host_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        // bound then released, so nothing is listening
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let dest = dir.path().join("trees.csv");
        let err = fetch_dataset(&format!("http://127.0.0.1:{port}/trees.csv"), &dest, None).unwrap_err();
        assert!(matches!(err, FetchError::Network { .. }), "{err:?}");
        assert!(!dest.exists());
        assert!(!partial_path(&dest).exists());
    }

    #[test]
    fn expected_checksum_short_circuits() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("a.csv");
        fs::write(&dest, b"hello").unwrap();
        let (hash, _) = hash_file(&dest).unwrap();
        // the url is never contacted
        let out = fetch_dataset("http://127.0.0.1:1/a.csv", &dest, Some(&hash)).unwrap();
        assert_eq!(out.status, FetchStatus::Cached);
        assert_eq!(out.bytes, 5);
    }
}
