use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// One JSON file per key; writes land via rename so readers never see a
/// partial entry, even if the process is killed mid-write.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DiskCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Hex SHA-256 over length-prefixed parts.
    pub fn key(parts: &[&[u8]]) -> String {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        let shard = &key[..key.len().min(2)];
        self.dir.join(shard).join(format!("{key}.json"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path(key).exists()
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let bytes = fs::read(self.path(key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> io::Result<()> {
        let path = self.path(key);
        let parent = path.parent().expect("cache entries live in a shard dir");
        fs::create_dir_all(parent)?;
        let bytes = serde_json::to_vec(value).map_err(io::Error::other)?;
        write_atomic(&path, &bytes)
    }

    pub fn len(&self) -> usize {
        walk_count(&self.dir)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn walk_count(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else {
        return 0;
    };
    entries
        .flatten()
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk_count(&p)
            } else {
                let temp = e.file_name().to_string_lossy().starts_with(".tmp-");
                usize::from(!temp && p.extension().is_some_and(|x| x == "json"))
            }
        })
        .sum()
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = parent.join(format!(
        ".tmp-{}-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed),
        path.file_name().and_then(|n| n.to_str()).unwrap_or("entry")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path().join("c")).unwrap();
        let key = DiskCache::key(&[b"a", b"bc"]);
        assert!(cache.get::<Vec<u32>>(&key).is_none());
        cache.put(&key, &vec![1u32, 2, 3]).unwrap();
        assert_eq!(cache.get::<Vec<u32>>(&key), Some(vec![1, 2, 3]));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn key_is_length_prefixed() {
        assert_ne!(DiskCache::key(&[b"ab", b"c"]), DiskCache::key(&[b"a", b"bc"]));
        assert_eq!(DiskCache::key(&[b"x"]), DiskCache::key(&[b"x"]));
    }
}
