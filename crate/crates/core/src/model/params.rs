use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::{ModelConfig, ModelError, N_TIME_BUCKETS};
use crate::embed::EmbeddingTable;
use crate::vocab::Field;

/// Row-major matrix. Vectors are `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| U::c(v.f64())).collect() }
    }
}

/// How a tensor is initialized and whether weight decay applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Embedding,
    Weight,
    Bias,
    Gain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub ln1_g: Mat<T>,
    pub ln1_b: Mat<T>,
    pub wq: Mat<T>,
    pub bq: Mat<T>,
    /// Keys carry no bias: it would shift every score in a row equally.
    pub wk: Mat<T>,
    pub wv: Mat<T>,
    pub bv: Mat<T>,
    pub wo: Mat<T>,
    pub bo: Mat<T>,
    pub ln2_g: Mat<T>,
    pub ln2_b: Mat<T>,
    pub w1: Mat<T>,
    pub b1: Mat<T>,
    pub w2: Mat<T>,
    pub b2: Mat<T>,
}

/// All model tensors. The same shape holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub emb_mcc: Mat<T>,
    pub emb_merchant: Mat<T>,
    pub emb_city: Mat<T>,
    pub emb_state: Mat<T>,
    pub amount_w: Mat<T>,
    pub amount_b: Mat<T>,
    pub time_emb: Mat<T>,
    pub in_w: Mat<T>,
    pub in_b: Mat<T>,
    pub pos_emb: Mat<T>,
    pub layers: Vec<Layer<T>>,
    pub lnf_g: Mat<T>,
    pub lnf_b: Mat<T>,
    pub head_amount_w: Mat<T>,
    pub head_amount_b: Mat<T>,
    pub head_mcc_w: Mat<T>,
    pub head_mcc_b: Mat<T>,
    pub head_city_w: Mat<T>,
    pub head_city_b: Mat<T>,
    pub head_merchant_w: Mat<T>,
    pub head_merchant_b: Mat<T>,
    pub head_anomaly_w: Mat<T>,
    pub head_anomaly_b: Mat<T>,
}

macro_rules! visit_params {
    ($p:expr, $f:expr, $($ref:tt)+) => {{
        let p = $p;
        let f = $f;
        f("emb_mcc".to_string(), Role::Embedding, $($ref)+ p.emb_mcc);
        f("emb_merchant".to_string(), Role::Embedding, $($ref)+ p.emb_merchant);
        f("emb_city".to_string(), Role::Embedding, $($ref)+ p.emb_city);
        f("emb_state".to_string(), Role::Embedding, $($ref)+ p.emb_state);
        f("amount_w".to_string(), Role::Weight, $($ref)+ p.amount_w);
        f("amount_b".to_string(), Role::Bias, $($ref)+ p.amount_b);
        f("time_emb".to_string(), Role::Embedding, $($ref)+ p.time_emb);
        f("in_w".to_string(), Role::Weight, $($ref)+ p.in_w);
        f("in_b".to_string(), Role::Bias, $($ref)+ p.in_b);
        f("pos_emb".to_string(), Role::Embedding, $($ref)+ p.pos_emb);
        for (i, l) in ($($ref)+ p.layers).into_iter().enumerate() {
            f(format!("layer{i}.ln1_g"), Role::Gain, $($ref)+ l.ln1_g);
            f(format!("layer{i}.ln1_b"), Role::Bias, $($ref)+ l.ln1_b);
            f(format!("layer{i}.wq"), Role::Weight, $($ref)+ l.wq);
            f(format!("layer{i}.bq"), Role::Bias, $($ref)+ l.bq);
            f(format!("layer{i}.wk"), Role::Weight, $($ref)+ l.wk);
            f(format!("layer{i}.wv"), Role::Weight, $($ref)+ l.wv);
            f(format!("layer{i}.bv"), Role::Bias, $($ref)+ l.bv);
            f(format!("layer{i}.wo"), Role::Weight, $($ref)+ l.wo);
            f(format!("layer{i}.bo"), Role::Bias, $($ref)+ l.bo);
            f(format!("layer{i}.ln2_g"), Role::Gain, $($ref)+ l.ln2_g);
            f(format!("layer{i}.ln2_b"), Role::Bias, $($ref)+ l.ln2_b);
            f(format!("layer{i}.w1"), Role::Weight, $($ref)+ l.w1);
            f(format!("layer{i}.b1"), Role::Bias, $($ref)+ l.b1);
            f(format!("layer{i}.w2"), Role::Weight, $($ref)+ l.w2);
            f(format!("layer{i}.b2"), Role::Bias, $($ref)+ l.b2);
        }
        f("lnf_g".to_string(), Role::Gain, $($ref)+ p.lnf_g);
        f("lnf_b".to_string(), Role::Bias, $($ref)+ p.lnf_b);
        f("head_amount_w".to_string(), Role::Weight, $($ref)+ p.head_amount_w);
        f("head_amount_b".to_string(), Role::Bias, $($ref)+ p.head_amount_b);
        f("head_mcc_w".to_string(), Role::Weight, $($ref)+ p.head_mcc_w);
        f("head_mcc_b".to_string(), Role::Bias, $($ref)+ p.head_mcc_b);
        f("head_city_w".to_string(), Role::Weight, $($ref)+ p.head_city_w);
        f("head_city_b".to_string(), Role::Bias, $($ref)+ p.head_city_b);
        f("head_merchant_w".to_string(), Role::Weight, $($ref)+ p.head_merchant_w);
        f("head_merchant_b".to_string(), Role::Bias, $($ref)+ p.head_merchant_b);
        f("head_anomaly_w".to_string(), Role::Weight, $($ref)+ p.head_anomaly_w);
        f("head_anomaly_b".to_string(), Role::Bias, $($ref)+ p.head_anomaly_b);
    }};
}

impl<T: Real> Params<T> {
    /// Zero tensors with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.ffn_mult * d;
        let z = Mat::zeros;
        let layer = || Layer {
            ln1_g: z(1, d),
            ln1_b: z(1, d),
            wq: z(d, d),
            bq: z(1, d),
            wk: z(d, d),
            wv: z(d, d),
            bv: z(1, d),
            wo: z(d, d),
            bo: z(1, d),
            ln2_g: z(1, d),
            ln2_b: z(1, d),
            w1: z(d, f),
            b1: z(1, f),
            w2: z(f, d),
            b2: z(1, d),
        };
        let v = &cfg.vocab_sizes;
        Self {
            emb_mcc: z(v.mcc, cfg.d_mcc),
            emb_merchant: z(v.merchant, cfg.d_merchant),
            emb_city: z(v.city, cfg.d_city),
            emb_state: z(v.state, cfg.d_state),
            amount_w: z(1, cfg.d_amount),
            amount_b: z(1, cfg.d_amount),
            time_emb: z(N_TIME_BUCKETS, cfg.d_time),
            in_w: z(cfg.input_width(), d),
            in_b: z(1, d),
            pos_emb: z(cfg.max_seq_len, d),
            layers: (0..cfg.n_layers).map(|_| layer()).collect(),
            lnf_g: z(1, d),
            lnf_b: z(1, d),
            head_amount_w: z(d, 1),
            head_amount_b: z(1, 1),
            head_mcc_w: z(d, v.mcc),
            head_mcc_b: z(1, v.mcc),
            head_city_w: z(d, v.city),
            head_city_b: z(1, v.city),
            head_merchant_w: z(d, v.merchant),
            head_merchant_b: z(1, v.merchant),
            head_anomaly_w: z(d, 1),
            head_anomaly_b: z(1, 1),
        }
    }

    pub fn visit(&self, mut f: impl FnMut(String, Role, &Mat<T>)) {
        visit_params!(self, &mut f, &)
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, Role, &mut Mat<T>)) {
        visit_params!(self, &mut f, &mut)
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(|n, _, _| out.push(n));
        out
    }

    pub fn tensors(&self) -> Vec<(String, Role, &Mat<T>)> {
        let mut out = Vec::new();
        visit_params!(self, &mut |n, r, m| out.push((n, r, m)), &);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, Role, &mut Mat<T>)> {
        let mut out = Vec::new();
        visit_params!(self, &mut |n, r, m| out.push((n, r, m)), &mut);
        out
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, m| n += m.len());
        n
    }

    pub fn embedding(&self, field: Field) -> &Mat<T> {
        match field {
            Field::Mcc => &self.emb_mcc,
            Field::Merchant => &self.emb_merchant,
            Field::City => &self.emb_city,
            Field::State => &self.emb_state,
        }
    }

    pub fn embedding_mut(&mut self, field: Field) -> &mut Mat<T> {
        match field {
            Field::Mcc => &mut self.emb_mcc,
            Field::Merchant => &mut self.emb_merchant,
            Field::City => &mut self.emb_city,
            Field::State => &mut self.emb_state,
        }
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, _, m| ok &= m.data.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let mut out = Params::<U>::zeros_shaped_like(self);
        let src = self.tensors();
        for ((_, _, dst), (_, _, s)) in out.tensors_mut().into_iter().zip(src) {
            *dst = s.cast();
        }
        out
    }

    /// Zero tensors with the same shapes as `other`.
    pub fn zeros_shaped_like<U: Real>(other: &Params<U>) -> Self {
        let shape = |m: &Mat<U>| Mat::<T>::zeros(m.rows, m.cols);
        Self {
            emb_mcc: shape(&other.emb_mcc),
            emb_merchant: shape(&other.emb_merchant),
            emb_city: shape(&other.emb_city),
            emb_state: shape(&other.emb_state),
            amount_w: shape(&other.amount_w),
            amount_b: shape(&other.amount_b),
            time_emb: shape(&other.time_emb),
            in_w: shape(&other.in_w),
            in_b: shape(&other.in_b),
            pos_emb: shape(&other.pos_emb),
            layers: other
                .layers
                .iter()
                .map(|l| Layer {
                    ln1_g: shape(&l.ln1_g),
                    ln1_b: shape(&l.ln1_b),
                    wq: shape(&l.wq),
                    bq: shape(&l.bq),
                    wk: shape(&l.wk),
                    wv: shape(&l.wv),
                    bv: shape(&l.bv),
                    wo: shape(&l.wo),
                    bo: shape(&l.bo),
                    ln2_g: shape(&l.ln2_g),
                    ln2_b: shape(&l.ln2_b),
                    w1: shape(&l.w1),
                    b1: shape(&l.b1),
                    w2: shape(&l.w2),
                    b2: shape(&l.b2),
                })
                .collect(),
            lnf_g: shape(&other.lnf_g),
            lnf_b: shape(&other.lnf_b),
            head_amount_w: shape(&other.head_amount_w),
            head_amount_b: shape(&other.head_amount_b),
            head_mcc_w: shape(&other.head_mcc_w),
            head_mcc_b: shape(&other.head_mcc_b),
            head_city_w: shape(&other.head_city_w),
            head_city_b: shape(&other.head_city_b),
            head_merchant_w: shape(&other.head_merchant_w),
            head_merchant_b: shape(&other.head_merchant_b),
            head_anomaly_w: shape(&other.head_anomaly_w),
            head_anomaly_b: shape(&other.head_anomaly_b),
        }
    }

    /// Seeded initialization. Every Gaussian tensor is drawn from one stream
    /// in visit order, so the draws do not depend on which tables are given;
    /// table rows then overwrite the matching embeddings.
    pub fn init(cfg: &ModelConfig, tables: &[&EmbeddingTable], seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, cfg.init_scale).map_err(|e| ModelError::Config(e.to_string()))?;
        p.visit_mut(|_, role, m| match role {
            Role::Embedding | Role::Weight => m.data.iter_mut().for_each(|v| *v = T::c(normal.sample(&mut rng))),
            Role::Gain => m.data.iter_mut().for_each(|v| *v = T::one()),
            Role::Bias => {}
        });
        let mut seen = Vec::new();
        for t in tables {
            if seen.contains(&t.field) {
                return Err(ModelError::Config(format!("two tables for field {}", t.field)));
            }
            seen.push(t.field);
            let emb = p.embedding_mut(t.field);
            if t.dim != emb.cols || t.rows() != emb.rows {
                return Err(ModelError::Config(format!(
                    "table for {} is {}x{}, model expects {}x{}",
                    t.field,
                    t.rows(),
                    t.dim,
                    emb.rows,
                    emb.cols
                )));
            }
            emb.data.iter_mut().zip(&t.matrix).for_each(|(d, s)| *d = T::c(*s as f64));
        }
        Ok(p)
    }
}

/// Vocabulary sizes, which are also the classifier head widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub mcc: usize,
    pub merchant: usize,
    pub city: usize,
    pub state: usize,
}

impl VocabSizes {
    pub fn get(&self, field: Field) -> usize {
        match field {
            Field::Mcc => self.mcc,
            Field::Merchant => self.merchant,
            Field::City => self.city,
            Field::State => self.state,
        }
    }
}
