use std::hash::Hasher;

use fnv::FnvHasher;

use super::EmbedError;

pub const MIN_MOCK_DIM: usize = 8;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(token.as_bytes());
    h.finish()
}

/// Signed-hash bag of words, L2-normalized. Prompts without tokens map to e0.
pub fn mock_embed(prompt: &str, dim: usize, seed: u64) -> Result<Vec<f32>, EmbedError> {
    if dim < MIN_MOCK_DIM {
        return Err(EmbedError::DimTooSmall { dim, min: MIN_MOCK_DIM });
    }
    let mut acc = vec![0f64; dim];
    for token in tokenize(prompt) {
        let h = token_hash(&token, seed);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[(h % dim as u64) as usize] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e0 = vec![0f32; dim];
        e0[0] = 1.0;
        return Ok(e0);
    }
    Ok(acc.iter().map(|v| (v / norm) as f32).collect())
}

pub fn mock_model_id(dim: usize, seed: u64) -> String {
    format!("mock-bow-d{dim}-s{seed}")
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}
