use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingRecord};
use crate::vocab::{Field, Vocab, NULL_INDEX, OOV_INDEX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub projection_seed: u64,
    pub source_dim: usize,
}

/// Embedding rows for one field, aligned with its vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub field: Field,
    pub vocab: Vocab,
    pub dim: usize,
    pub matrix: Vec<f32>,
    pub provenance: Provenance,
}

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        self.vocab.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }
}

/// Seeded `source_dim x target_dim` projection, row-major: a standard
/// Gaussian draw whose columns (or rows, when projecting up) are then
/// orthonormalized by modified Gram-Schmidt.
pub fn projection_matrix(source_dim: usize, target_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<f64> = (0..source_dim * target_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let by_columns = source_dim >= target_dim;
    let (n, len) = if by_columns { (target_dim, source_dim) } else { (source_dim, target_dim) };
    let at = |v: usize, i: usize| if by_columns { i * target_dim + v } else { v * target_dim + i };
    for v in 0..n {
        for u in 0..v {
            let dot: f64 = (0..len).map(|i| p[at(v, i)] * p[at(u, i)]).sum();
            for i in 0..len {
                p[at(v, i)] -= dot * p[at(u, i)];
            }
        }
        let norm = (0..len).map(|i| p[at(v, i)].powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            (0..len).for_each(|i| p[at(v, i)] /= norm);
        }
    }
    p
}

pub fn row_rms(row: &[f32]) -> f64 {
    if row.is_empty() {
        return 0.0;
    }
    (row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / row.len() as f64).sqrt()
}

fn rescale(row: &mut [f64], target_rms: f64) {
    let rms = (row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64).sqrt();
    if rms > 0.0 {
        row.iter_mut().for_each(|v| *v *= target_rms / rms);
    }
}

/// Builds a field table from prompt embeddings. Regular rows are projected
/// to `d_field` when the source dim differs, then rescaled to RMS
/// `init_scale`. `[NULL]` is zero and `[OOV]` is the rescaled mean row.
pub fn build_table(
    field: Field,
    vocab: &Vocab,
    records: &[EmbeddingRecord],
    d_field: usize,
    init_scale: f32,
    seed: u64,
) -> Result<EmbeddingTable, EmbedError> {
    if d_field == 0 {
        return Err(EmbedError::Config("d_field must be positive".into()));
    }
    let mut by_key: HashMap<&str, &EmbeddingRecord> = HashMap::with_capacity(records.len());
    let mut source_dim = None;
    let mut model_id: Option<&str> = None;
    for r in records {
        r.validate()?;
        if *source_dim.get_or_insert(r.dim) != r.dim {
            return Err(EmbedError::Protocol(format!(
                "record {} has dim {}, expected {}",
                r.key,
                r.dim,
                source_dim.unwrap()
            )));
        }
        model_id.get_or_insert(&r.model_id);
        if let Some(prev) = by_key.insert(&r.key, r) {
            if prev.vector != r.vector {
                return Err(EmbedError::Protocol(format!("conflicting records for {}", r.key)));
            }
        }
    }

    let mut missing = Vec::new();
    let mut sources = Vec::new();
    for (_, value) in vocab.regular() {
        match by_key.get(field.key(value).as_str()) {
            Some(r) => sources.push(&r.vector),
            None => missing.push(value.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(EmbedError::Coverage { field: field.name().to_string(), missing });
    }

    let source_dim = source_dim.unwrap_or(d_field);
    let projection = (source_dim != d_field).then(|| projection_matrix(source_dim, d_field, seed));
    let target = init_scale as f64;

    let mut matrix = vec![0f32; vocab.len() * d_field];
    let mut mean = vec![0f64; d_field];
    for (row_idx, src) in (2..).zip(&sources) {
        let mut row: Vec<f64> = match &projection {
            None => src.iter().map(|v| *v as f64).collect(),
            Some(p) => {
                let mut out = vec![0f64; d_field];
                for (i, s) in src.iter().enumerate() {
                    let s = *s as f64;
                    if s != 0.0 {
                        out.iter_mut().zip(&p[i * d_field..(i + 1) * d_field]).for_each(|(o, w)| *o += s * w);
                    }
                }
                out
            }
        };
        rescale(&mut row, target);
        for (m, v) in mean.iter_mut().zip(&row) {
            *m += v;
        }
        for (dst, v) in matrix[row_idx * d_field..(row_idx + 1) * d_field].iter_mut().zip(&row) {
            *dst = *v as f32;
        }
    }
    if !sources.is_empty() {
        mean.iter_mut().for_each(|m| *m /= sources.len() as f64);
        rescale(&mut mean, target);
        let oov = OOV_INDEX as usize;
        for (dst, v) in matrix[oov * d_field..(oov + 1) * d_field].iter_mut().zip(&mean) {
            *dst = *v as f32;
        }
    }
    debug_assert!(matrix[NULL_INDEX as usize * d_field..(NULL_INDEX as usize + 1) * d_field].iter().all(|v| *v == 0.0));

    Ok(EmbeddingTable {
        field,
        vocab: vocab.clone(),
        dim: d_field,
        matrix,
        provenance: Provenance {
            model_id: model_id.unwrap_or_default().to_string(),
            projection_seed: seed,
            source_dim,
        },
    })
}
