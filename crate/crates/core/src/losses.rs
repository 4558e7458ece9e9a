//! Loss terms and their weighted combination.
//!
//! ```text
//! total = acc + l_div * div
//!       + l_cs * (cls_ct + s * sep_ct + cls_st + s * sep_st)
//!       + l_inco * inco + l_l1 * sum|theta|
//! ```
//!
//! where `s` is the separation sign (default -1, i.e. separation is rewarded).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, mean, softplus, sq_dist};
use crate::network::{ForwardTrace, ModelParams, TaggedBank, PROB_CLAMP};
use crate::store::EmbeddingRecord;

/// Sign applied to the separation terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum SepSign {
    Plus,
    Minus,
}

impl SepSign {
    pub fn value(self) -> f64 {
        match self {
            SepSign::Plus => 1.0,
            SepSign::Minus => -1.0,
        }
    }
}

impl TryFrom<i64> for SepSign {
    type Error = String;
    fn try_from(v: i64) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(SepSign::Plus),
            -1 => Ok(SepSign::Minus),
            _ => Err(format!("sep_sign must be +1 or -1, got {v}")),
        }
    }
}

impl From<SepSign> for i64 {
    fn from(s: SepSign) -> i64 {
        s.value() as i64
    }
}

impl std::str::FromStr for SepSign {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "+1" | "1" => Ok(SepSign::Plus),
            "-1" => Ok(SepSign::Minus),
            other => Err(format!("sep sign must be +1 or -1, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Division (prototype diversity) weight.
    pub div: f64,
    /// Clustering/separation weight.
    pub cls_sep: f64,
    /// Incongruity weight; zero disables the incongruity head's loss.
    pub inco: f64,
    /// L1 weight on the output layer (bias excluded).
    pub l1: f64,
    /// Cosine threshold above which prototype pairs are penalized.
    pub cos_threshold: f64,
    pub sep_sign: SepSign,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            div: 0.5,
            cls_sep: 0.1,
            inco: 0.5,
            l1: 1e-4,
            cos_threshold: 0.3,
            sep_sign: SepSign::Minus,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("div", self.div),
            ("cls_sep", self.cls_sep),
            ("inco", self.inco),
            ("l1", self.l1),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.cos_threshold) {
            return Err(Error::Config(format!(
                "cos_threshold must lie in [-1, 1], got {}",
                self.cos_threshold
            )));
        }
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub acc: f64,
    pub div: f64,
    pub cls_ct: f64,
    pub sep_ct: f64,
    pub cls_st: f64,
    pub sep_st: f64,
    pub inco: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub acc: f64,
    pub div: f64,
    pub cls_ct: f64,
    pub sep_ct: f64,
    pub cls_st: f64,
    pub sep_st: f64,
    pub inco: f64,
    /// `sum |theta|`, unweighted.
    pub l1: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            acc: self.acc,
            div: self.div,
            cls_ct: self.cls_ct,
            sep_ct: self.sep_ct,
            cls_st: self.cls_st,
            sep_st: self.sep_st,
            inco: self.inco,
        }
    }

    /// Weighted total from the stored parts.
    pub fn recompute_total(&self, w: &LossWeights) -> f64 {
        compose(&self.terms(), self.l1, w)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.acc, self.div, self.cls_ct, self.sep_ct, self.cls_st, self.sep_st, self.inco, self.l1,
            self.total,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

fn compose(t: &LossTerms, l1: f64, w: &LossWeights) -> f64 {
    let s = w.sep_sign.value();
    t.acc
        + w.div * t.div
        + w.cls_sep * (t.cls_ct + s * t.sep_ct + t.cls_st + s * t.sep_st)
        + w.inco * t.inco
        + w.l1 * l1
}

/// Combines the terms with the weights; the L1 part is `sum |theta|`.
pub fn total_loss(terms: LossTerms, w: &LossWeights, theta: &[f64]) -> LossBreakdown {
    let l1: f64 = theta.iter().map(|t| t.abs()).sum();
    LossBreakdown {
        acc: terms.acc,
        div: terms.div,
        cls_ct: terms.cls_ct,
        sep_ct: terms.sep_ct,
        cls_st: terms.cls_st,
        sep_st: terms.sep_st,
        inco: terms.inco,
        l1,
        total: compose(&terms, l1, w),
    }
}

/// `-[y ln sigmoid(l) + (1-y) ln(1 - sigmoid(l))]`, evaluated in log-sigmoid form.
#[inline]
pub fn bce_with_logit(logit: f64, label: u8) -> f64 {
    if label == 1 {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

/// Mean binary cross-entropy on probabilities, clamped away from 0 and 1.
pub fn binary_cross_entropy(probs: &[f64], labels: &[u8]) -> f64 {
    let terms: Vec<f64> = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .collect();
    mean(&terms)
}

/// Mean cross-entropy of the output probability against the sarcasm labels.
pub fn acc_loss(traces: &[ForwardTrace], ys: &[u8]) -> f64 {
    let terms: Vec<f64> = traces
        .iter()
        .zip(ys)
        .map(|(t, &y)| bce_with_logit(t.logit, y))
        .collect();
    mean(&terms)
}

/// Hinge on pairwise cosine similarity, summed over unordered pairs.
pub fn div_loss(bank: &[Vec<f64>], threshold: f64) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..bank.len() {
        for q in j + 1..bank.len() {
            let c = cosine(&bank[j], &bank[q]).ok_or_else(|| {
                Error::Numerical(format!("zero-norm prototype in pair ({j}, {q}); cosine undefined"))
            })?;
            total += (c - threshold).max(0.0);
        }
    }
    Ok(total)
}

/// Index and squared distance of the nearest prototype whose tag equals
/// (`same = true`) or differs from `label`. Ties go to the lowest index.
pub fn nearest_tagged(e: &[f64], label: u8, bank: &TaggedBank, same: bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (p, &tag)) in bank.vectors.iter().zip(&bank.tags).enumerate() {
        if (tag == label) != same {
            continue;
        }
        let d = sq_dist(e, p);
        if best.map_or(true, |(_, b)| d < b) {
            best = Some((j, d));
        }
    }
    best
}

/// Clustering and separation costs: mean over samples of the squared
/// distance to the nearest same-tag / other-tag prototype.
pub fn cls_sep(embs: &[&[f64]], labels: &[u8], bank: &TaggedBank) -> Result<(f64, f64)> {
    let mut cls = Vec::with_capacity(embs.len());
    let mut sep = Vec::with_capacity(embs.len());
    for (e, &z) in embs.iter().zip(labels) {
        let missing = || Error::Data(format!("prototype bank lacks coverage for tag {z}"));
        cls.push(nearest_tagged(e, z, bank, true).ok_or_else(missing)?.1);
        sep.push(nearest_tagged(e, z, bank, false).ok_or_else(missing)?.1);
    }
    Ok((mean(&cls), mean(&sep)))
}

/// Cross-entropy of the incongruity head on the explicit and implicit
/// branches against their polarity labels, summed per sample and averaged.
pub fn inco_loss(traces: &[ForwardTrace], z_eps: &[u8], z_ips: &[u8]) -> f64 {
    let terms: Vec<f64> = traces
        .iter()
        .zip(z_eps.iter().zip(z_ips))
        .map(|(t, (&ze, &zi))| bce_with_logit(t.h_ep_logit, ze) + bce_with_logit(t.h_ip_logit, zi))
        .collect();
    mean(&terms)
}

/// Full objective of `params` on `batch`.
pub fn evaluate_loss(params: &ModelParams, batch: &[&EmbeddingRecord], w: &LossWeights) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Data("loss over an empty batch".into()));
    }
    let traces = batch
        .iter()
        .map(|r| params.forward(r))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<u8> = batch.iter().map(|r| r.y).collect();
    let z_ep: Vec<u8> = batch.iter().map(|r| r.z_ep).collect();
    let z_ip: Vec<u8> = batch.iter().map(|r| r.z_ip).collect();

    let (sem, sent) = (&params.bank.semantic, &params.bank.sentiment);
    let div = div_loss(&sem.vectors, w.cos_threshold)? + div_loss(&sent.vectors, w.cos_threshold)?;

    let e_ct: Vec<&[f64]> = batch.iter().map(|r| r.e_ct.as_slice()).collect();
    let e_ep: Vec<&[f64]> = batch.iter().map(|r| r.e_st_ep.as_slice()).collect();
    let e_ip: Vec<&[f64]> = batch.iter().map(|r| r.e_st_ip.as_slice()).collect();
    let (cls_ct, sep_ct) = cls_sep(&e_ct, &ys, sem)?;
    let (cls_ep, sep_ep) = cls_sep(&e_ep, &z_ep, sent)?;
    let (cls_ip, sep_ip) = cls_sep(&e_ip, &z_ip, sent)?;

    let terms = LossTerms {
        acc: acc_loss(&traces, &ys),
        div,
        cls_ct,
        sep_ct,
        cls_st: cls_ep + cls_ip,
        sep_st: sep_ep + sep_ip,
        inco: inco_loss(&traces, &z_ep, &z_ip),
    };
    Ok(total_loss(terms, w, &params.head.theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn trace(prob: f64, h_ep: f64, h_ip: f64) -> ForwardTrace {
        ForwardTrace {
            w_ct: vec![],
            w_ep: vec![],
            w_ip: vec![],
            logit: logit(prob),
            prob,
            h_ep_logit: logit(h_ep),
            h_ep,
            h_ip_logit: logit(h_ip),
            h_ip,
        }
    }

    #[test]
    fn acc_loss_examples() {
        let t = [trace(0.5, 0.5, 0.5), trace(0.5, 0.5, 0.5)];
        assert!(close(acc_loss(&t, &[1, 0]), std::f64::consts::LN_2, 1e-15));

        let t = [trace(0.9, 0.5, 0.5), trace(0.2, 0.5, 0.5)];
        let l = acc_loss(&t, &[1, 0]);
        assert!(close(l, 0.164252, 5e-7), "{l}");
        assert!(close(binary_cross_entropy(&[0.9, 0.2], &[1, 0]), l, 1e-14));

        let confident = [trace(1.0 - 1e-12, 0.5, 0.5)];
        assert!(acc_loss(&confident, &[1]) < 1e-11);
    }

    #[test]
    fn div_loss_examples() {
        let ortho = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]];
        assert_eq!(div_loss(&ortho, 0.3).unwrap(), 0.0);

        let same = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        assert!(close(div_loss(&same, 0.5).unwrap(), 0.5, 1e-15));

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let pair = vec![vec![1.0, 0.0], vec![s, s]];
        assert!(close(div_loss(&pair, 0.5).unwrap(), 0.207107, 5e-7));

        assert!(div_loss(&[vec![0.0, 0.0], vec![1.0, 0.0]], 0.3).is_err());
    }

    #[test]
    fn cls_sep_examples() {
        let bank = TaggedBank::new(
            vec![(vec![0.0, 0.0], 1), (vec![3.0, 0.0], 1), (vec![5.0, 0.0], 0)],
            1.0,
        );
        let e = [1.0, 0.0];
        let (cls, sep) = cls_sep(&[&e], &[1], &bank).unwrap();
        assert_eq!((cls, sep), (1.0, 16.0));

        let on_proto = [3.0, 0.0];
        assert_eq!(cls_sep(&[&on_proto], &[1], &bank).unwrap().0, 0.0);

        let mut doubled = bank.clone();
        doubled.vectors.extend(bank.vectors.clone());
        doubled.tags.extend(bank.tags.clone());
        assert_eq!(cls_sep(&[&e], &[1], &doubled).unwrap(), (1.0, 16.0));

        let one_sided = TaggedBank::new(vec![(vec![0.0], 1), (vec![1.0], 1)], 1.0);
        assert!(cls_sep(&[&[0.5][..]], &[1], &one_sided).is_err());
    }

    #[test]
    fn inco_loss_examples() {
        let l = inco_loss(&[trace(0.5, 0.5, 0.5)], &[1], &[0]);
        assert!(close(l, 2.0 * std::f64::consts::LN_2, 1e-15));
        assert!(close(l, 1.386294, 5e-7));

        let l = inco_loss(&[trace(0.5, 0.9, 0.9)], &[1], &[0]);
        assert!(close(l, 0.9f64.ln().abs() + 0.1f64.ln().abs(), 1e-14));
        assert!(close(l, 2.407946, 5e-7));

        let l = inco_loss(&[trace(0.5, 1.0 - 1e-12, 1e-12)], &[1], &[0]);
        assert!(l < 1e-11);
    }

    #[test]
    fn total_loss_examples() {
        let terms = LossTerms {
            acc: 0.7,
            div: 3.0,
            cls_ct: 2.0,
            sep_ct: 1.0,
            cls_st: 4.0,
            sep_st: 5.0,
            inco: 9.0,
        };
        let zero = LossWeights {
            div: 0.0,
            cls_sep: 0.0,
            inco: 0.0,
            l1: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_loss(terms, &zero, &[1.0, -3.0]).total, 0.7);

        let l1_only = LossWeights { l1: 1.0, ..zero };
        let b = total_loss(LossTerms::default(), &l1_only, &[1.0, -2.0, 0.5]);
        assert_eq!(b.total, 3.5);

        let terms = LossTerms {
            acc: 0.2,
            div: 0.1,
            cls_ct: 1.0,
            sep_ct: 2.0,
            cls_st: 0.0,
            sep_st: 0.0,
            inco: 0.4,
        };
        let w = LossWeights {
            div: 0.5,
            cls_sep: 0.1,
            inco: 0.5,
            l1: 0.0,
            cos_threshold: 0.3,
            sep_sign: SepSign::Minus,
        };
        let b = total_loss(terms, &w, &[]);
        assert!(close(b.total, 0.35, 1e-15));
        assert_eq!(b.recompute_total(&w), b.total);
    }

    #[test]
    fn sep_sign_parsing() {
        assert_eq!("+1".parse::<SepSign>().unwrap(), SepSign::Plus);
        assert_eq!("-1".parse::<SepSign>().unwrap(), SepSign::Minus);
        assert!("0".parse::<SepSign>().is_err());
        let w: LossWeights = serde_json::from_str(
            r#"{"div":0.5,"cls_sep":0.1,"inco":0.5,"l1":0.0001,"cos_threshold":0.3,"sep_sign":1}"#,
        )
        .unwrap();
        assert_eq!(w.sep_sign, SepSign::Plus);
    }
}
