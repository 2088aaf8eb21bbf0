//! Signed character n-gram feature hashing.

/// One hashed feature: bucket index and signed weight.
pub type Feature = (u32, f64);

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a followed by the splitmix64 finalizer. Stable across platforms and runs.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    mix64(h)
}

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Hashes the character n-grams of `text` into `vocab_dim` signed buckets.
///
/// Each distinct n-gram contributes `±(1 + ln count)`; the result is sorted by
/// bucket with colliding grams merged. Text shorter than the smallest n-gram
/// hashes as a single gram. Returns an empty vector for blank text.
pub fn hash_features(text: &str, ngram_range: (usize, usize), vocab_dim: u32) -> Vec<Feature> {
    let norm = normalize_text(text);
    if norm.is_empty() {
        return Vec::new();
    }
    let bounds: Vec<usize> = norm
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(norm.len()))
        .collect();
    let chars = bounds.len() - 1;
    let (lo, hi) = ngram_range;
    let mut hashes = Vec::new();
    if chars < lo {
        hashes.push(stable_hash(norm.as_bytes()));
    } else {
        for n in lo..=hi.min(chars) {
            for start in 0..=chars - n {
                hashes.push(stable_hash(&norm.as_bytes()[bounds[start]..bounds[start + n]]));
            }
        }
    }
    hashes.sort_unstable();

    let mut weighted: Vec<Feature> = Vec::new();
    let mut i = 0;
    while i < hashes.len() {
        let h = hashes[i];
        let mut j = i;
        while j < hashes.len() && hashes[j] == h {
            j += 1;
        }
        let count = (j - i) as f64;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        weighted.push(((h % u64::from(vocab_dim)) as u32, sign * (1.0 + count.ln())));
        i = j;
    }
    // stable sort keeps hash order within a bucket, so the merge order is fixed
    weighted.sort_by_key(|f| f.0);
    let mut merged: Vec<Feature> = Vec::with_capacity(weighted.len());
    for (b, v) in weighted {
        match merged.last_mut() {
            Some(last) if last.0 == b => last.1 += v,
            _ => merged.push((b, v)),
        }
    }
    merged.retain(|f| f.1 != 0.0);
    merged
}
