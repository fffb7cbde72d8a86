use serde::{Deserialize, Serialize};

pub const DEFAULT_DIM: usize = 256;

/// Signed feature-hashing vector. Components are integer counts stored as
/// `f64`, so dot products are exact and similarity ties are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Zero vector: the text had no alphanumeric tokens.
    pub fn is_degenerate(&self) -> bool {
        self.norm == 0.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &Self) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        self.dot(other) / (self.norm * other.norm)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Hashed features of one token: the whole token plus the character
/// trigrams of the token wrapped in boundary markers.
fn features(token: &str, out: &mut Vec<String>) {
    out.push(format!("w:{token}"));
    let chars: Vec<char> = std::iter::once('^')
        .chain(token.chars())
        .chain(std::iter::once('$'))
        .collect();
    for w in chars.windows(3) {
        out.push(format!("c:{}", w.iter().collect::<String>()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedder {
    pub dim: usize,
}

impl Default for Embedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl Embedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        let mut feats = Vec::new();
        for token in tokenize(text) {
            features(&token, &mut feats);
        }
        for f in &feats {
            let h = fnv1a64(f.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[bucket] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        EmbeddingVector { values, norm }
    }
}

pub fn embed(text: &str) -> EmbeddingVector {
    Embedder::default().embed(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic() {
        assert_eq!(embed("Go faster, please!"), embed("Go faster, please!"));
        assert_eq!(embed("go faster"), embed("GO   FASTER"));
    }

    #[test]
    fn self_similarity_is_one() {
        let v = embed("go faster");
        assert!((v.cosine(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_degenerate() {
        let v = embed("  ?! ");
        assert!(v.is_degenerate());
        assert_eq!(v.cosine(&embed("go")), 0.0);
    }

    #[test]
    fn shared_tokens_rank_higher() {
        // Oracle: number of shared raw features.
        let feats = |s: &str| {
            let mut f = Vec::new();
            for t in tokenize(s) {
                features(&t, &mut f);
            }
            f.into_iter().collect::<HashSet<_>>()
        };
        let q = feats("go faster");
        let near = feats("go faster please");
        let far = feats("turn left ahead");
        assert!(q.intersection(&near).count() > q.intersection(&far).count());

        let qv = embed("go faster");
        assert!(embed("go faster please").cosine(&qv) > embed("turn left ahead").cosine(&qv));
    }
}
