//! Forward pass: RBF similarities against the semantic and sentiment
//! prototype banks, the sigmoid output head and the incongruity head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, sq_dist};
use crate::store::EmbeddingRecord;

/// Probabilities stored in traces are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-12;

/// `exp(-(|e - p|^2 + eps) / sigma^2)`.
pub fn rbf_similarity(e: &[f64], p: &[f64], sigma: f64, eps: f64) -> Result<f64> {
    if e.len() != p.len() {
        return Err(Error::dim("rbf operands", e.len(), p.len()));
    }
    Ok(rbf_from_sq_dist(sq_dist(e, p), sigma, eps))
}

#[inline]
pub fn rbf_from_sq_dist(d2: f64, sigma: f64, eps: f64) -> f64 {
    (-(d2 + eps) / (sigma * sigma)).exp()
}

pub fn similarity_vector(e: &[f64], bank: &[Vec<f64>], sigma: f64, eps: f64) -> Result<Vec<f64>> {
    if bank.is_empty() {
        return Err(Error::Data("similarity against an empty prototype bank".into()));
    }
    bank.iter().map(|p| rbf_similarity(e, p, sigma, eps)).collect()
}

/// Prototype vectors with a binary tag each (sarcasm class or polarity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedBank {
    pub vectors: Vec<Vec<f64>>,
    pub tags: Vec<u8>,
    pub sigma: f64,
}

impl TaggedBank {
    pub fn new(tagged: Vec<(Vec<f64>, u8)>, sigma: f64) -> Self {
        let (vectors, tags) = tagged.into_iter().unzip();
        TaggedBank {
            vectors,
            tags,
            sigma,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.vectors.len() < 2 {
            return Err(Error::Config(format!("{name} bank needs at least 2 prototypes")));
        }
        if self.tags.len() != self.vectors.len() {
            return Err(Error::dim(format!("{name} tags"), self.vectors.len(), self.tags.len()));
        }
        if let Some(t) = self.tags.iter().find(|&&t| t > 1) {
            return Err(Error::Data(format!("{name} prototype tag {t} outside {{0,1}}")));
        }
        for tag in 0..2u8 {
            if !self.tags.contains(&tag) {
                return Err(Error::Data(format!("{name} bank has no prototype tagged {tag}")));
            }
        }
        let dim = self.dim();
        if let Some(v) = self.vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::dim(format!("{name} prototype"), dim, v.len()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("{name} sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    /// Semantic prototypes, tagged by sarcasm class.
    pub semantic: TaggedBank,
    /// Sentiment prototypes, tagged by polarity (1 = positive).
    pub sentiment: TaggedBank,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputHead {
    /// Weights over `[w_ct | w_ep | w_ip]`.
    pub theta: Vec<f64>,
    pub bias: f64,
}

/// One-hidden-layer ReLU classifier mapping a sentiment similarity vector to
/// P(polarity = 1). Shared by the explicit and implicit branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncongruityHead {
    /// `k_b` rows of `H` weights.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl IncongruityHead {
    pub fn zeros(k_b: usize, hidden: usize) -> Self {
        IncongruityHead {
            w1: vec![vec![0.0; hidden]; k_b],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }
}

/// Intermediate values of one incongruity-head evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct IncoPass {
    pub pre: Vec<f64>,
    pub logit: f64,
}

impl IncoPass {
    pub fn prob(&self) -> f64 {
        sigmoid(self.logit)
    }
}

pub fn incongruity_pass(w_st: &[f64], head: &IncongruityHead) -> Result<IncoPass> {
    if w_st.len() != head.w1.len() {
        return Err(Error::dim("incongruity head input", head.w1.len(), w_st.len()));
    }
    let mut pre = head.b1.clone();
    for (w, row) in w_st.iter().zip(&head.w1) {
        for (h, r) in pre.iter_mut().zip(row) {
            *h += w * r;
        }
    }
    let logit = head.b2 + pre.iter().zip(&head.w2).map(|(p, w)| p.max(0.0) * w).sum::<f64>();
    Ok(IncoPass { pre, logit })
}

/// `sigmoid(w2 . relu(W1^T w + b1) + b2)`.
pub fn incongruity_forward(w_st: &[f64], head: &IncongruityHead) -> Result<f64> {
    Ok(clamp_prob(incongruity_pass(w_st, head)?.prob()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub bank: PrototypeBank,
    pub head: OutputHead,
    pub inco_head: IncongruityHead,
}

/// Per-sample forward values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub w_ct: Vec<f64>,
    pub w_ep: Vec<f64>,
    pub w_ip: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
    pub h_ep_logit: f64,
    pub h_ep: f64,
    pub h_ip_logit: f64,
    pub h_ip: f64,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl ModelParams {
    pub fn k_a(&self) -> usize {
        self.bank.semantic.len()
    }

    pub fn k_b(&self) -> usize {
        self.bank.sentiment.len()
    }

    pub fn d_s(&self) -> usize {
        self.bank.semantic.dim()
    }

    pub fn d_m(&self) -> usize {
        self.bank.sentiment.dim()
    }

    pub fn hidden(&self) -> usize {
        self.inco_head.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        self.bank.semantic.validate("semantic")?;
        self.bank.sentiment.validate("sentiment")?;
        if !(self.bank.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.bank.eps)));
        }
        let want = self.k_a() + 2 * self.k_b();
        if self.head.theta.len() != want {
            return Err(Error::dim("output weights", want, self.head.theta.len()));
        }
        let h = &self.inco_head;
        if h.w1.len() != self.k_b() {
            return Err(Error::dim("incongruity W1 rows", self.k_b(), h.w1.len()));
        }
        let hidden = h.hidden();
        if hidden == 0 {
            return Err(Error::Config("incongruity hidden width must be >= 1".into()));
        }
        if h.w2.len() != hidden || h.w1.iter().any(|r| r.len() != hidden) {
            return Err(Error::dim("incongruity hidden width", hidden, h.w2.len()));
        }
        Ok(())
    }

    pub fn check_record(&self, rec: &EmbeddingRecord) -> Result<()> {
        if rec.e_ct.len() != self.d_s() {
            return Err(Error::dim(format!("record {:?} e_ct", rec.id), self.d_s(), rec.e_ct.len()));
        }
        for v in [&rec.e_st_ep, &rec.e_st_ip] {
            if v.len() != self.d_m() {
                return Err(Error::dim(format!("record {:?} sentiment", rec.id), self.d_m(), v.len()));
            }
        }
        Ok(())
    }

    pub fn forward(&self, rec: &EmbeddingRecord) -> Result<ForwardTrace> {
        self.check_record(rec)?;
        let (sem, sent, eps) = (&self.bank.semantic, &self.bank.sentiment, self.bank.eps);
        let w_ct = similarity_vector(&rec.e_ct, &sem.vectors, sem.sigma, eps)?;
        let w_ep = similarity_vector(&rec.e_st_ep, &sent.vectors, sent.sigma, eps)?;
        let w_ip = similarity_vector(&rec.e_st_ip, &sent.vectors, sent.sigma, eps)?;

        let k_a = w_ct.len();
        let k_b = w_ep.len();
        let theta = &self.head.theta;
        let logit = self.head.bias
            + dot(&theta[..k_a], &w_ct)
            + dot(&theta[k_a..k_a + k_b], &w_ep)
            + dot(&theta[k_a + k_b..], &w_ip);
        let ep = incongruity_pass(&w_ep, &self.inco_head)?;
        let ip = incongruity_pass(&w_ip, &self.inco_head)?;
        Ok(ForwardTrace {
            w_ct,
            w_ep,
            w_ip,
            logit,
            prob: clamp_prob(sigmoid(logit)),
            h_ep_logit: ep.logit,
            h_ep: clamp_prob(ep.prob()),
            h_ip_logit: ip.logit,
            h_ip: clamp_prob(ip.prob()),
        })
    }

    pub fn predict(&self, rec: &EmbeddingRecord) -> Result<f64> {
        Ok(self.forward(rec)?.prob)
    }

    pub fn n_params(&self) -> usize {
        let (k_a, k_b, h) = (self.k_a(), self.k_b(), self.hidden());
        k_a * self.d_s() + k_b * self.d_m() + (k_a + 2 * k_b) + 1 + k_b * h + h + h + 1
    }

    /// All trainable scalars in a fixed order: semantic prototypes, sentiment
    /// prototypes, theta, bias, W1 (row-major), b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for v in &self.bank.semantic.vectors {
            out.extend_from_slice(v);
        }
        for v in &self.bank.sentiment.vectors {
            out.extend_from_slice(v);
        }
        out.extend_from_slice(&self.head.theta);
        out.push(self.head.bias);
        for row in &self.inco_head.w1 {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.inco_head.b1);
        out.extend_from_slice(&self.inco_head.w2);
        out.push(self.inco_head.b2);
        out
    }

    /// Inverse of [`ModelParams::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut [f64]| {
            for d in dst {
                *d = it.next().unwrap();
            }
        };
        for v in &mut self.bank.semantic.vectors {
            fill(v);
        }
        for v in &mut self.bank.sentiment.vectors {
            fill(v);
        }
        fill(&mut self.head.theta);
        fill(std::slice::from_mut(&mut self.head.bias));
        for row in &mut self.inco_head.w1 {
            fill(row);
        }
        fill(&mut self.inco_head.b1);
        fill(&mut self.inco_head.w2);
        fill(std::slice::from_mut(&mut self.inco_head.b2));
    }

    /// Human-readable name of flat parameter `i`, e.g. `semantic[3][0]`.
    pub fn param_path(&self, mut i: usize) -> String {
        let (k_a, d_s, k_b, d_m, h) = (self.k_a(), self.d_s(), self.k_b(), self.d_m(), self.hidden());
        let blocks: [(&str, usize, usize); 8] = [
            ("semantic", k_a, d_s),
            ("sentiment", k_b, d_m),
            ("theta", 1, k_a + 2 * k_b),
            ("bias", 1, 1),
            ("w1", k_b, h),
            ("b1", 1, h),
            ("w2", 1, h),
            ("b2", 1, 1),
        ];
        for (name, rows, cols) in blocks {
            let size = rows * cols;
            if i < size {
                return match (rows, cols) {
                    (1, 1) => name.to_string(),
                    (1, _) => format!("{name}[{i}]"),
                    _ => format!("{name}[{}][{}]", i / cols, i % cols),
                };
            }
            i -= size;
        }
        format!("<out of range +{i}>")
    }
}
