//! Content-addressed embedding cache.
//!
//! Layout: `<root>/<backend_id>/<version>/<hex sha256>.vec`, one file
//! per key. Each file is a 16-byte header (magic, dim, dtype, endian)
//! followed by the little-endian float32 payload. Writes go through a
//! temp file plus rename, so concurrent writers of the same key leave
//! one intact record; for deterministic backends all writes carry
//! identical bytes anyway.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Embedding, EncoderBackendDescriptor};
use crate::error::{Error, Result};

const CACHE_MAGIC: &[u8; 4] = b"MMFV";
const DTYPE_F32: u32 = 1;
const ENDIAN_LITTLE: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCacheKey {
    pub content_hash: [u8; 32],
    pub backend_id: String,
    pub version: String,
}

impl FeatureCacheKey {
    /// SHA-256 of the canonical input bytes under a backend identity.
    pub fn new(backend: &EncoderBackendDescriptor, canonical_input: &[u8]) -> Self {
        FeatureCacheKey {
            content_hash: Sha256::digest(canonical_input).into(),
            backend_id: backend.backend_id.clone(),
            version: backend.version.clone(),
        }
    }

    pub fn hash_hex(&self) -> String {
        self.content_hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub struct EmbeddingCache {
    root: PathBuf,
}

impl EmbeddingCache {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(EmbeddingCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &FeatureCacheKey) -> PathBuf {
        self.root
            .join(&key.backend_id)
            .join(&key.version)
            .join(format!("{}.vec", key.hash_hex()))
    }

    /// Return the cached vector for `key`, computing and persisting it
    /// on a miss. Corrupt records are recomputed and overwritten.
    pub fn get_or_compute(
        &self,
        key: &FeatureCacheKey,
        producer: &EncoderBackendDescriptor,
        compute: impl FnOnce() -> Result<Embedding>,
    ) -> Result<Embedding> {
        let path = self.path_for(key);
        if path.exists() {
            match read_record(&path, producer.output_dim) {
                Ok(values) => return Embedding::new(values, producer.clone()),
                Err(e) => {
                    log::warn!("corrupt cache record {}: {e}; recomputing", path.display());
                }
            }
        }
        let emb = compute()?;
        write_record(&path, emb.values())?;
        Ok(emb)
    }
}

fn read_record(path: &Path, expected_dim: usize) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != CACHE_MAGIC {
        return Err(Error::Config(format!("{}: bad cache header", path.display())));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dtype = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let endian = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if dtype != DTYPE_F32 || endian != ENDIAN_LITTLE {
        return Err(Error::Config(format!("{}: unsupported cache dtype", path.display())));
    }
    if dim != expected_dim || bytes.len() != 16 + dim * 4 {
        return Err(Error::Config(format!(
            "{}: cache payload size mismatch (dim {dim}, expected {expected_dim})",
            path.display()
        )));
    }
    Ok(bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_record(path: &Path, values: &[f32]) -> Result<()> {
    let parent = path.parent().expect("cache paths have parents");
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut buf = Vec::with_capacity(16 + values.len() * 4);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
    buf.extend_from_slice(&DTYPE_F32.to_le_bytes());
    buf.extend_from_slice(&ENDIAN_LITTLE.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        path.file_name().unwrap().to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::super::{stub_unit_vector, StubImageEncoder};
    use super::*;
    use crate::encoder::ImageEncoder;
    use crate::imageproc::ImageTensor;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn stub_embedding(desc: &EncoderBackendDescriptor, input: &[u8]) -> Embedding {
        Embedding::new(
            stub_unit_vector(&desc.backend_id, input, desc.output_dim),
            desc.clone(),
        )
        .unwrap()
    }

    #[test]
    fn miss_then_hit_skips_compute() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path()).unwrap();
        let enc = StubImageEncoder::conv();
        let desc = enc.descriptor().clone();
        let key = FeatureCacheKey::new(&desc, b"input");
        let calls = AtomicUsize::new(0);

        let first = cache
            .get_or_compute(&key, &desc, || {
                calls.fetch_add(1, Ordering::SeqCst);
                Ok(stub_embedding(&desc, b"input"))
            })
            .unwrap();
        let second = cache
            .get_or_compute(&key, &desc, || {
                calls.fetch_add(1, Ordering::SeqCst);
                Ok(stub_embedding(&desc, b"input"))
            })
            .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(first.values(), second.values());
    }

    #[test]
    fn corrupt_record_is_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path()).unwrap();
        let enc = StubImageEncoder::conv();
        let desc = enc.descriptor().clone();
        let key = FeatureCacheKey::new(&desc, b"x");

        let fresh = stub_embedding(&desc, b"x");
        cache
            .get_or_compute(&key, &desc, || Ok(fresh.clone()))
            .unwrap();
        let path = cache.path_for(&key);
        std::fs::write(&path, b"junk").unwrap();

        let recovered = cache
            .get_or_compute(&key, &desc, || Ok(fresh.clone()))
            .unwrap();
        assert_eq!(recovered.values(), fresh.values());
        // record was healed on disk
        assert_eq!(read_record(&path, desc.output_dim).unwrap(), fresh.values());
    }

    #[test]
    fn cache_transparent_for_deterministic_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path()).unwrap();
        let enc = StubImageEncoder::patch();
        let desc = enc.descriptor().clone();
        let img = ImageTensor::checkerboard(9);
        let key = FeatureCacheKey::new(&desc, &img.canonical_bytes());

        let direct = enc.encode(&img).unwrap();
        let cached = cache
            .get_or_compute(&key, &desc, || enc.encode(&img))
            .unwrap();
        let hit = cache
            .get_or_compute(&key, &desc, || panic!("must not recompute"))
            .unwrap();
        assert_eq!(direct.values(), cached.values());
        assert_eq!(direct.values(), hit.values());
    }

    #[test]
    fn concurrent_writers_same_key() {
        let dir = tempfile::tempdir().unwrap();
        let enc = StubImageEncoder::conv();
        let desc = enc.descriptor().clone();
        let key = FeatureCacheKey::new(&desc, b"shared");
        let root = dir.path().to_path_buf();

        let handles: Vec<_> = (0..8)
            .map(|_| {
                let desc = desc.clone();
                let key = key.clone();
                let root = root.clone();
                std::thread::spawn(move || {
                    let cache = EmbeddingCache::new(&root).unwrap();
                    cache
                        .get_or_compute(&key, &desc, || Ok(stub_embedding(&desc, b"shared")))
                        .unwrap()
                        .values()
                        .to_vec()
                })
            })
            .collect();
        let expect = stub_embedding(&desc, b"shared").values().to_vec();
        for h in handles {
            assert_eq!(h.join().unwrap(), expect);
        }
        let cache = EmbeddingCache::new(&root).unwrap();
        assert_eq!(
            read_record(&cache.path_for(&key), desc.output_dim).unwrap(),
            expect
        );
    }
}
