//! Signed feature hashing of character trigrams.

pub const HASH_DIM: usize = 32;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Encodes `text` into `dim` buckets: each character trigram of the
/// space-padded, lower-cased text adds ±1 to its bucket, and the result is
/// L1-normalized. Empty text maps to the zero vector.
pub fn feature_hash(text: &str, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if dim == 0 || text.is_empty() {
        return out;
    }
    let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
    let mut buf = [0u8; 12];
    for w in padded.windows(3) {
        let mut n = 0;
        for c in w {
            n += c.encode_utf8(&mut buf[n..]).len();
        }
        let h = fnv1a(&buf[..n]);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        out[(h % dim as u64) as usize] += sign;
    }
    let l1: f64 = out.iter().map(|v| v.abs()).sum();
    if l1 > 0.0 {
        out.iter_mut().for_each(|v| *v /= l1);
    }
    out
}
