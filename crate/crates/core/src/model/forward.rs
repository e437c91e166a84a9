use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{Batch, SeqRef};
use super::params::{Layer, Mat, Params};
use super::real::{gemm, Real};
use super::{ModelError, SeqTabModel, Task, TaskWeights};

const LN_EPS: f64 = 1e-5;

/// Raw per-position outputs of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqOutput<T> {
    /// Predicted log1p of the next amount.
    pub amount: Vec<T>,
    pub mcc: Mat<T>,
    pub city: Mat<T>,
    pub merchant: Mat<T>,
    /// Anomaly logit of the current transaction.
    pub anomaly: Vec<T>,
}

impl<T: Real> SeqOutput<T> {
    pub fn len(&self) -> usize {
        self.amount.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amount.is_empty()
    }

    pub fn logits(&self, task: Task) -> Option<&Mat<T>> {
        match task {
            Task::Mcc => Some(&self.mcc),
            Task::City => Some(&self.city),
            Task::Merchant => Some(&self.merchant),
            Task::Amount | Task::Anomaly => None,
        }
    }

    /// Softmax distribution of a classification task at each position.
    pub fn probs(&self, task: Task) -> Option<Mat<T>> {
        let mut m = self.logits(task)?.clone();
        for r in 0..m.rows {
            softmax_in_place(m.row_mut(r));
        }
        Some(m)
    }

    pub fn anomaly_prob(&self, t: usize) -> T {
        sigmoid(self.anomaly[t])
    }

    pub fn amount_currency(&self, t: usize) -> f64 {
        self.amount[t].f64().exp_m1().max(0.0)
    }
}

/// Per-task mean losses over valid targets and their weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub values: [f64; 5],
    pub counts: [usize; 5],
}

impl LossReport {
    pub fn get(&self, task: Task) -> Option<f64> {
        (self.counts[task.index()] > 0).then_some(self.values[task.index()])
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_softmax_at<T: Real>(row: &[T], k: usize) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|v| (*v - max).exp()).fold(T::zero(), |a, b| a + b).ln() + max;
    row[k] - lse
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Numerically stable `softplus(x) = ln(1 + e^x)`.
fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::c(0.044715) * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::c(0.044715) * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::c(3.0 * 0.044715) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * du
}

/// `x · W + b` for `rows` rows of width `w.rows`.
fn linear<T: Real>(x: &[T], rows: usize, w: &Mat<T>, b: &Mat<T>) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * w.cols);
    for _ in 0..rows {
        y.extend_from_slice(&b.data);
    }
    gemm(rows, w.rows, w.cols, x, false, &w.data, false, &mut y, T::one());
    y
}

fn matmul<T: Real>(x: &[T], rows: usize, w: &Mat<T>) -> Vec<T> {
    let mut y = vec![T::zero(); rows * w.cols];
    gemm(rows, w.rows, w.cols, x, false, &w.data, false, &mut y, T::zero());
    y
}

fn matmul_backward<T: Real>(x: &[T], dy: &[T], rows: usize, w: &Mat<T>, dw: &mut Mat<T>) -> Vec<T> {
    let (inp, out) = (w.rows, w.cols);
    gemm(inp, rows, out, x, true, dy, false, &mut dw.data, T::one());
    let mut dx = vec![T::zero(); rows * inp];
    gemm(rows, out, inp, dy, false, &w.data, true, &mut dx, T::zero());
    dx
}

/// Accumulates `dW`, `db` and returns `dx`.
fn linear_backward<T: Real>(x: &[T], dy: &[T], rows: usize, w: &Mat<T>, dw: &mut Mat<T>, db: &mut Mat<T>) -> Vec<T> {
    let (inp, out) = (w.rows, w.cols);
    gemm(inp, rows, out, x, true, dy, false, &mut dw.data, T::one());
    for r in 0..rows {
        for (g, d) in db.data.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
            *g += *d;
        }
    }
    let mut dx = vec![T::zero(); rows * inp];
    gemm(rows, out, inp, dy, false, &w.data, true, &mut dx, T::zero());
    dx
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Real>(x: &[T], rows: usize, g: &Mat<T>, b: &Mat<T>) -> (Vec<T>, LnCache<T>) {
    let d = g.cols;
    let n = T::c(d as f64);
    let mut y = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().fold(T::zero(), |a, v| a + v) / n;
        let var = xr.iter().map(|v| (*v - mean) * (*v - mean)).fold(T::zero(), |a, v| a + v) / n;
        let rs = T::one() / (var + T::c(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = g.data[j] * h + b.data[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Real>(dy: &[T], c: &LnCache<T>, g: &Mat<T>, dg: &mut Mat<T>, db: &mut Mat<T>) -> Vec<T> {
    let d = g.cols;
    let rows = c.rstd.len();
    let n = T::c(d as f64);
    let mut dx = vec![T::zero(); rows * d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for j in 0..d {
            let i = r * d + j;
            dg.data[j] += dy[i] * c.xhat[i];
            db.data[j] += dy[i];
            dxhat[j] = dy[i] * g.data[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * c.xhat[i];
        }
        let (m1, m2) = (s1 / n, s2 / n);
        for j in 0..d {
            let i = r * d + j;
            dx[i] = c.rstd[r] * (dxhat[j] - m1 - c.xhat[i] * m2);
        }
    }
    dx
}

fn columns<T: Real>(x: &[T], rows: usize, width: usize, start: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * n);
    for r in 0..rows {
        out.extend_from_slice(&x[r * width + start..r * width + start + n]);
    }
    out
}

fn add_columns<T: Real>(dst: &mut [T], rows: usize, width: usize, start: usize, src: &[T]) {
    let n = src.len() / rows.max(1);
    for r in 0..rows {
        for j in 0..n {
            dst[r * width + start + j] += src[r * n + j];
        }
    }
}

fn dropout_mask<T: Real>(n: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::c(1.0 / (1.0 - rate));
    Some((0..n).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect())
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    n1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Attention probabilities per head, `L x L`, zero above the diagonal.
    probs: Vec<Vec<T>>,
    ctx: Vec<T>,
    drop_o: Option<Vec<T>>,
    ln2: LnCache<T>,
    n2: Vec<T>,
    f1: Vec<T>,
    act: Vec<T>,
    drop_f: Option<Vec<T>>,
}

struct SeqCache<T> {
    x_in: Vec<T>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    hf: Vec<T>,
}

impl<T: Real> SeqTabModel<T> {
    /// Forward pass over every sequence of a validated batch. Padding
    /// positions are never read.
    pub fn forward(&self, batch: &Batch) -> Result<Vec<SeqOutput<T>>, ModelError> {
        batch.validate(&self.config)?;
        Ok((0..batch.len()).map(|b| self.forward_seq(batch.seq(b))).collect())
    }

    /// Forward pass for one sequence; inputs are assumed validated.
    pub fn forward_seq(&self, s: SeqRef<'_>) -> SeqOutput<T> {
        self.forward_cached(s, None).0
    }

    fn input_rows(&self, s: SeqRef<'_>) -> Vec<T> {
        let p = &self.params;
        let cfg = &self.config;
        let width = cfg.input_width();
        let mut x = Vec::with_capacity(s.len() * width);
        for t in 0..s.len() {
            let f = s.fields[t];
            x.extend_from_slice(p.emb_mcc.row(f[0] as usize));
            x.extend_from_slice(p.emb_merchant.row(f[1] as usize));
            x.extend_from_slice(p.emb_city.row(f[2] as usize));
            x.extend_from_slice(p.emb_state.row(f[3] as usize));
            let a = T::c(s.log_amount[t] as f64);
            for j in 0..cfg.d_amount {
                x.push(p.amount_w.data[j] * a + p.amount_b.data[j]);
            }
            x.extend_from_slice(p.time_emb.row(s.time_bucket[t] as usize));
        }
        x
    }

    fn forward_cached(&self, s: SeqRef<'_>, mut rng: Option<&mut ChaCha8Rng>) -> (SeqOutput<T>, SeqCache<T>) {
        let p = &self.params;
        let cfg = &self.config;
        let l = s.len();
        let d = cfg.d_model;
        let heads = cfg.n_heads;
        let dh = d / heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());

        let x_in = self.input_rows(s);
        let mut h = linear(&x_in, l, &p.in_w, &p.in_b);
        for t in 0..l {
            for (hv, pv) in h[t * d..(t + 1) * d].iter_mut().zip(p.pos_emb.row(t)) {
                *hv += *pv;
            }
        }

        let mut layers = Vec::with_capacity(p.layers.len());
        for layer in &p.layers {
            let (n1, ln1) = layer_norm(&h, l, &layer.ln1_g, &layer.ln1_b);
            let q = linear(&n1, l, &layer.wq, &layer.bq);
            let k = matmul(&n1, l, &layer.wk);
            let v = linear(&n1, l, &layer.wv, &layer.bv);
            let mut ctx = vec![T::zero(); l * d];
            let mut probs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = columns(&q, l, d, hd * dh, dh);
                let kh = columns(&k, l, d, hd * dh, dh);
                let vh = columns(&v, l, d, hd * dh, dh);
                let mut sc = vec![T::zero(); l * l];
                gemm(l, dh, l, &qh, false, &kh, true, &mut sc, T::zero());
                for i in 0..l {
                    let row = &mut sc[i * l..(i + 1) * l];
                    for x in row[..=i].iter_mut() {
                        *x *= scale;
                    }
                    softmax_in_place(&mut row[..=i]);
                    for x in row[i + 1..].iter_mut() {
                        *x = T::zero();
                    }
                }
                let mut ch = vec![T::zero(); l * dh];
                gemm(l, l, dh, &sc, false, &vh, false, &mut ch, T::zero());
                add_columns(&mut ctx, l, d, hd * dh, &ch);
                probs.push(sc);
            }
            let mut o = linear(&ctx, l, &layer.wo, &layer.bo);
            let drop_o = dropout_mask(l * d, cfg.dropout, rng.as_deref_mut());
            if let Some(m) = &drop_o {
                o.iter_mut().zip(m).for_each(|(x, k)| *x *= *k);
            }
            for (hv, ov) in h.iter_mut().zip(&o) {
                *hv += *ov;
            }

            let (n2, ln2) = layer_norm(&h, l, &layer.ln2_g, &layer.ln2_b);
            let f1 = linear(&n2, l, &layer.w1, &layer.b1);
            let act: Vec<T> = f1.iter().map(|x| gelu(*x)).collect();
            let mut f2 = linear(&act, l, &layer.w2, &layer.b2);
            let drop_f = dropout_mask(l * d, cfg.dropout, rng.as_deref_mut());
            if let Some(m) = &drop_f {
                f2.iter_mut().zip(m).for_each(|(x, k)| *x *= *k);
            }
            for (hv, fv) in h.iter_mut().zip(&f2) {
                *hv += *fv;
            }
            layers.push(LayerCache { ln1, n1, q, k, v, probs, ctx, drop_o, ln2, n2, f1, act, drop_f });
        }

        let (hf, lnf) = layer_norm(&h, l, &p.lnf_g, &p.lnf_b);
        let out = SeqOutput {
            amount: linear(&hf, l, &p.head_amount_w, &p.head_amount_b),
            mcc: Mat { rows: l, cols: p.head_mcc_w.cols, data: linear(&hf, l, &p.head_mcc_w, &p.head_mcc_b) },
            city: Mat { rows: l, cols: p.head_city_w.cols, data: linear(&hf, l, &p.head_city_w, &p.head_city_b) },
            merchant: Mat {
                rows: l,
                cols: p.head_merchant_w.cols,
                data: linear(&hf, l, &p.head_merchant_w, &p.head_merchant_b),
            },
            anomaly: linear(&hf, l, &p.head_anomaly_w, &p.head_anomaly_b),
        };
        (out, SeqCache { x_in, layers, lnf, hf })
    }

    fn backward_seq(&self, s: SeqRef<'_>, cache: &SeqCache<T>, dout: &SeqOutput<T>, g: &mut Params<T>) {
        let p = &self.params;
        let cfg = &self.config;
        let l = s.len();
        let d = cfg.d_model;
        let heads = cfg.n_heads;
        let dh = d / heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());

        let mut dhf = linear_backward(&cache.hf, &dout.amount, l, &p.head_amount_w, &mut g.head_amount_w, &mut g.head_amount_b);
        let heads_out = [
            (&dout.mcc.data, &p.head_mcc_w, &mut g.head_mcc_w, &mut g.head_mcc_b),
            (&dout.city.data, &p.head_city_w, &mut g.head_city_w, &mut g.head_city_b),
            (&dout.merchant.data, &p.head_merchant_w, &mut g.head_merchant_w, &mut g.head_merchant_b),
            (&dout.anomaly, &p.head_anomaly_w, &mut g.head_anomaly_w, &mut g.head_anomaly_b),
        ];
        for (dy, w, dw, db) in heads_out {
            let dx = linear_backward(&cache.hf, dy, l, w, dw, db);
            dhf.iter_mut().zip(&dx).for_each(|(a, b)| *a += *b);
        }
        let mut dh_ = layer_norm_backward(&dhf, &cache.lnf, &p.lnf_g, &mut g.lnf_g, &mut g.lnf_b);

        for (li, (layer, c)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
            let gl: &mut Layer<T> = &mut g.layers[li];
            // feed-forward block
            let mut df2 = dh_.clone();
            if let Some(m) = &c.drop_f {
                df2.iter_mut().zip(m).for_each(|(x, k)| *x *= *k);
            }
            let dact = linear_backward(&c.act, &df2, l, &layer.w2, &mut gl.w2, &mut gl.b2);
            let df1: Vec<T> = dact.iter().zip(&c.f1).map(|(da, x)| *da * gelu_grad(*x)).collect();
            let dn2 = linear_backward(&c.n2, &df1, l, &layer.w1, &mut gl.w1, &mut gl.b1);
            let dx = layer_norm_backward(&dn2, &c.ln2, &layer.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
            dh_.iter_mut().zip(&dx).for_each(|(a, b)| *a += *b);

            // attention block
            let mut do_ = dh_.clone();
            if let Some(m) = &c.drop_o {
                do_.iter_mut().zip(m).for_each(|(x, k)| *x *= *k);
            }
            let dctx = linear_backward(&c.ctx, &do_, l, &layer.wo, &mut gl.wo, &mut gl.bo);
            let mut dq = vec![T::zero(); l * d];
            let mut dk = vec![T::zero(); l * d];
            let mut dv = vec![T::zero(); l * d];
            for hd in 0..heads {
                let pr = &c.probs[hd];
                let qh = columns(&c.q, l, d, hd * dh, dh);
                let kh = columns(&c.k, l, d, hd * dh, dh);
                let vh = columns(&c.v, l, d, hd * dh, dh);
                let dch = columns(&dctx, l, d, hd * dh, dh);
                let mut dp = vec![T::zero(); l * l];
                gemm(l, dh, l, &dch, false, &vh, true, &mut dp, T::zero());
                let mut dvh = vec![T::zero(); l * dh];
                gemm(l, l, dh, pr, true, &dch, false, &mut dvh, T::zero());
                let mut ds = vec![T::zero(); l * l];
                for i in 0..l {
                    let row = i * l;
                    let dot = (0..=i).map(|j| pr[row + j] * dp[row + j]).fold(T::zero(), |a, b| a + b);
                    for j in 0..=i {
                        ds[row + j] = pr[row + j] * (dp[row + j] - dot) * scale;
                    }
                }
                let mut dqh = vec![T::zero(); l * dh];
                gemm(l, l, dh, &ds, false, &kh, false, &mut dqh, T::zero());
                let mut dkh = vec![T::zero(); l * dh];
                gemm(l, l, dh, &ds, true, &qh, false, &mut dkh, T::zero());
                add_columns(&mut dq, l, d, hd * dh, &dqh);
                add_columns(&mut dk, l, d, hd * dh, &dkh);
                add_columns(&mut dv, l, d, hd * dh, &dvh);
            }
            let mut dn1 = linear_backward(&c.n1, &dq, l, &layer.wq, &mut gl.wq, &mut gl.bq);
            let dnk = matmul_backward(&c.n1, &dk, l, &layer.wk, &mut gl.wk);
            let dnv = linear_backward(&c.n1, &dv, l, &layer.wv, &mut gl.wv, &mut gl.bv);
            for ((a, b), c2) in dn1.iter_mut().zip(&dnk).zip(&dnv) {
                *a += *b + *c2;
            }
            let dx = layer_norm_backward(&dn1, &c.ln1, &layer.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
            dh_.iter_mut().zip(&dx).for_each(|(a, b)| *a += *b);
        }

        for t in 0..l {
            for (gp, dv) in g.pos_emb.row_mut(t).iter_mut().zip(&dh_[t * d..(t + 1) * d]) {
                *gp += *dv;
            }
        }
        let dx_in = linear_backward(&cache.x_in, &dh_, l, &p.in_w, &mut g.in_w, &mut g.in_b);

        let width = cfg.input_width();
        for t in 0..l {
            let row = &dx_in[t * width..(t + 1) * width];
            let f = s.fields[t];
            let mut off = 0;
            for (emb, idx) in [
                (&mut g.emb_mcc, f[0]),
                (&mut g.emb_merchant, f[1]),
                (&mut g.emb_city, f[2]),
                (&mut g.emb_state, f[3]),
            ] {
                let n = emb.cols;
                for (a, b) in emb.row_mut(idx as usize).iter_mut().zip(&row[off..off + n]) {
                    *a += *b;
                }
                off += n;
            }
            let a = T::c(s.log_amount[t] as f64);
            for j in 0..cfg.d_amount {
                g.amount_w.data[j] += row[off + j] * a;
                g.amount_b.data[j] += row[off + j];
            }
            off += cfg.d_amount;
            for (a, b) in g.time_emb.row_mut(s.time_bucket[t] as usize).iter_mut().zip(&row[off..off + cfg.d_time]) {
                *a += *b;
            }
        }
    }
}

fn target_counts(batch: &Batch) -> [usize; 5] {
    let t = &batch.targets;
    let mask = &batch.mask;
    let count = |it: &mut dyn Iterator<Item = bool>| it.zip(mask).filter(|(v, m)| *v && **m).count();
    [
        count(&mut t.amount.iter().map(Option::is_some)),
        count(&mut t.mcc.iter().map(Option::is_some)),
        count(&mut t.city.iter().map(Option::is_some)),
        count(&mut t.merchant.iter().map(Option::is_some)),
        count(&mut t.anomaly.iter().map(Option::is_some)),
    ]
}

/// Joint loss of a batch and, if `with_grad`, its exact gradient.
/// `rng` enables dropout when the model's rate is positive.
pub fn loss_and_grad<T: Real>(
    model: &SeqTabModel<T>,
    batch: &Batch,
    weights: &TaskWeights,
    mut rng: Option<&mut ChaCha8Rng>,
    with_grad: bool,
) -> Result<(LossReport, Option<Params<T>>), ModelError> {
    weights.validate()?;
    batch.validate(&model.config)?;
    let counts = target_counts(batch);
    if counts.iter().all(|c| *c == 0) {
        return Err(ModelError::EmptyBatch);
    }
    let w = Task::ALL.map(|t| weights.get(t));
    // Scale applied to each summed per-position term.
    let coef: [T; 5] = std::array::from_fn(|i| if counts[i] > 0 { T::c(w[i] / counts[i] as f64) } else { T::zero() });
    let mut sums = [0f64; 5];
    let mut grads = with_grad.then(|| Params::<T>::zeros(&model.config));

    for b in 0..batch.len() {
        let s = batch.seq(b);
        if s.is_empty() {
            continue;
        }
        let (out, cache) = model.forward_cached(s, rng.as_deref_mut());
        let mut dout = with_grad.then(|| SeqOutput {
            amount: vec![T::zero(); s.len()],
            mcc: Mat::zeros(s.len(), out.mcc.cols),
            city: Mat::zeros(s.len(), out.city.cols),
            merchant: Mat::zeros(s.len(), out.merchant.cols),
            anomaly: vec![T::zero(); s.len()],
        });
        for t in 0..s.len() {
            if let Some(y) = s.amount[t] {
                let diff = out.amount[t] - T::c(y.ln_1p());
                sums[0] += (diff * diff).f64();
                if let Some(d) = dout.as_mut() {
                    d.amount[t] = T::c(2.0) * diff * coef[0];
                }
            }
            let class_tasks: [(usize, Option<u32>, &Mat<T>); 3] =
                [(1, s.mcc[t], &out.mcc), (2, s.city[t], &out.city), (3, s.merchant[t], &out.merchant)];
            for (ti, target, logits) in class_tasks {
                let Some(k) = target else { continue };
                let row = logits.row(t);
                sums[ti] -= log_softmax_at(row, k as usize).f64();
                if let Some(d) = dout.as_mut() {
                    let dm = match ti {
                        1 => &mut d.mcc,
                        2 => &mut d.city,
                        _ => &mut d.merchant,
                    };
                    let dr = dm.row_mut(t);
                    dr.copy_from_slice(row);
                    softmax_in_place(dr);
                    dr[k as usize] -= T::one();
                    dr.iter_mut().for_each(|v| *v *= coef[ti]);
                }
            }
            if let Some(y) = s.anomaly[t] {
                let z = out.anomaly[t];
                // BCE with logits: softplus(z) - y z
                let yv = if y { T::one() } else { T::zero() };
                sums[4] += (softplus(z) - yv * z).f64();
                if let Some(d) = dout.as_mut() {
                    d.anomaly[t] = (sigmoid(z) - yv) * coef[4];
                }
            }
        }
        if let (Some(d), Some(g)) = (dout.as_ref(), grads.as_mut()) {
            model.backward_seq(s, &cache, d, g);
        }
    }

    let mut values = [0f64; 5];
    let mut total = 0.0;
    for i in 0..5 {
        if counts[i] > 0 {
            values[i] = sums[i] / counts[i] as f64;
            if !values[i].is_finite() {
                return Err(ModelError::Divergence { task: Task::ALL[i].name().into(), what: "loss".into() });
            }
            total += w[i] * values[i];
        }
    }
    if let Some(g) = &grads {
        if !g.all_finite() {
            let heads = [
                (Task::Amount, &g.head_amount_w),
                (Task::Mcc, &g.head_mcc_w),
                (Task::City, &g.head_city_w),
                (Task::Merchant, &g.head_merchant_w),
                (Task::Anomaly, &g.head_anomaly_w),
            ];
            let task = heads
                .iter()
                .find(|(_, m)| m.data.iter().any(|v| !v.is_finite()))
                .map(|(t, _)| t.name())
                .unwrap_or("shared trunk");
            return Err(ModelError::Divergence { task: task.into(), what: "gradient".into() });
        }
    }
    Ok((LossReport { total, values, counts }, grads))
}
