//! Deterministic feature-hashing text embedder.
//!
//! Lowercased alphanumeric words and adjacent word pairs are hashed into
//! `dim` signed buckets and the result is L2-normalized. The hash is a fixed
//! FNV-1a/SplitMix64 combination, so vectors are identical across platforms
//! and releases.

use super::meb::EmbeddingStore;
use crate::error::Result;
use crate::graph::{comment_key, image_key, post_key, MultimodalRecord};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for byte in seed.to_le_bytes().iter().chain(parts.iter().flat_map(|p| p.iter())) {
        h ^= *byte as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashes `text` into a unit-norm vector of length `dim` (all zeros when the
/// text has no tokens).
pub fn fallback_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut out = vec![0.0; dim];
    let words = tokenize(text);
    let mut add = |parts: &[&[u8]]| {
        let h = splitmix64(fnv1a(seed, parts));
        let bucket = (h % dim as u64) as usize;
        let sign = if splitmix64(h ^ seed.rotate_left(17)) >> 63 == 0 { 1.0 } else { -1.0 };
        out[bucket] += sign;
    };
    for w in &words {
        add(&[b"u:", w.as_bytes()]);
    }
    for pair in words.windows(2) {
        add(&[b"b:", pair[0].as_bytes(), b" ", pair[1].as_bytes()]);
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut out {
            *v /= norm;
        }
    }
    out
}

/// Store covering every post and comment of `records`, plus an image row per
/// record: a zero row under `image:<id>` when there is no image, otherwise
/// the hashed image reference under the reference itself.
pub fn embed_records(records: &[MultimodalRecord], dim: usize, seed: u64) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(dim)?;
    for r in records {
        store.insert(&post_key(&r.id), &fallback_embed(&r.post_text, dim, seed))?;
        for (k, c) in r.comments.iter().enumerate() {
            store.insert(&comment_key(&r.id, k), &fallback_embed(c, dim, seed))?;
        }
        match &r.image_ref {
            None => {
                store.insert(&image_key(&r.id), &vec![0.0; dim])?;
            }
            Some(key) if !store.contains(key) => {
                store.insert(key, &fallback_embed(key, dim, seed))?;
            }
            Some(_) => {}
        }
    }
    Ok(store)
}
