//! Prototype projection onto training sentences and case-based explanations.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::metrics::predict_label;
use crate::network::{rbf_from_sq_dist, ModelParams, TaggedBank};
use crate::seed;
use crate::store::{Dataset, EmbeddingRecord};

/// Training sets larger than this are pre-sampled to [`LARGE_POOL_FRACTION`]
/// when no sample fraction is given.
pub const LARGE_POOL_THRESHOLD: usize = 100_000;
pub const LARGE_POOL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPrototype {
    pub index: usize,
    pub tag: u8,
    pub source_id: String,
    pub source_text: String,
    /// Euclidean distance between the trained prototype and its source.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Parameter version the projection belongs to.
    pub version: u64,
    pub sample_frac: f64,
    pub seed: u64,
    /// Pools limited to records of the prototype's own class or polarity.
    pub restricted: bool,
    pub pool_size: usize,
    pub semantic: Vec<ProjectedPrototype>,
    pub sentiment: Option<Vec<ProjectedPrototype>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionOptions {
    /// Share of the training set used as the pool; `None` picks 1, or 0.1
    /// above 100k records.
    pub sample_frac: Option<f64>,
    pub seed: u64,
    pub restricted: bool,
    pub sentiment: bool,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            sample_frac: None,
            seed: 0,
            restricted: true,
            sentiment: true,
        }
    }
}

/// Parameters plus the projection metadata that explains them. Every
/// parameter change bumps `version`, which invalidates an older projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedModel {
    pub params: ModelParams,
    pub version: u64,
    pub projection: Option<Projection>,
}

impl ProjectedModel {
    pub fn new(params: ModelParams) -> Self {
        ProjectedModel {
            params,
            version: 0,
            projection: None,
        }
    }

    /// Mutable access to the parameters; counts as a modification.
    pub fn params_mut(&mut self) -> &mut ModelParams {
        self.version += 1;
        &mut self.params
    }

    /// The projection, if it matches the current parameters.
    pub fn current_projection(&self) -> Option<&Projection> {
        self.projection.as_ref().filter(|p| p.version == self.version)
    }
}

pub fn effective_sample_frac(requested: Option<f64>, n: usize) -> f64 {
    requested.unwrap_or(if n > LARGE_POOL_THRESHOLD {
        LARGE_POOL_FRACTION
    } else {
        1.0
    })
}

/// Nearest pool point to `p`; ties go to the earliest pool entry.
fn nearest<'a>(p: &[f64], pool: &[(&'a EmbeddingRecord, &'a [f64])]) -> Option<(&'a EmbeddingRecord, &'a [f64], f64)> {
    let mut best: Option<(&EmbeddingRecord, &[f64], f64)> = None;
    for &(rec, v) in pool {
        let d2 = sq_dist(p, v);
        if best.map_or(true, |(_, _, b)| d2 < b) {
            best = Some((rec, v, d2));
        }
    }
    best
}

fn project_bank(
    bank: &mut TaggedBank,
    pool: &[(&EmbeddingRecord, &[f64], u8)],
    restricted: bool,
    what: &str,
) -> Result<Vec<ProjectedPrototype>> {
    let by_tag: Vec<Vec<(&EmbeddingRecord, &[f64])>> = (0..2u8)
        .map(|t| {
            pool.iter()
                .filter(|(_, _, tag)| !restricted || *tag == t)
                .map(|&(r, v, _)| (r, v))
                .collect()
        })
        .collect();
    let results = bank
        .vectors
        .par_iter()
        .zip(&bank.tags)
        .enumerate()
        .map(|(index, (p, &tag))| {
            let (rec, v, d2) = nearest(p, &by_tag[tag as usize]).ok_or_else(|| {
                Error::Data(format!("empty {what} projection pool for tag {tag}"))
            })?;
            Ok((
                v.to_vec(),
                ProjectedPrototype {
                    index,
                    tag,
                    source_id: rec.id.clone(),
                    source_text: rec.display_text().to_string(),
                    distance: d2.sqrt(),
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(results.len());
    for (slot, (v, meta)) in bank.vectors.iter_mut().zip(results) {
        *slot = v;
        out.push(meta);
    }
    Ok(out)
}

/// Replaces every semantic prototype with the nearest `e_ct` in the
/// projection pool, and (optionally) every sentiment prototype with the
/// nearest `e_st_full` of a non-sarcastic record.
pub fn project_prototypes(model: &ProjectedModel, train_ds: &Dataset, opts: &ProjectionOptions) -> Result<ProjectedModel> {
    let frac = effective_sample_frac(opts.sample_frac, train_ds.len());
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("sample_frac must be in (0, 1], got {frac}")));
    }
    model.params.validate()?;
    if train_ds.d_s() != model.params.d_s() || train_ds.d_m() != model.params.d_m() {
        return Err(Error::Data(format!(
            "projection pool dimensions ({}, {}) differ from model ({}, {})",
            train_ds.d_s(),
            train_ds.d_m(),
            model.params.d_s(),
            model.params.d_m()
        )));
    }

    let mut indices: Vec<usize> = (0..train_ds.len()).collect();
    if frac < 1.0 {
        let take = ((frac * train_ds.len() as f64).round() as usize).max(1);
        let mut rng = seed::rng(opts.seed, seed::stream::PROJECTION);
        indices.shuffle(&mut rng);
        indices.truncate(take);
        indices.sort_unstable();
    }
    let pool: Vec<&EmbeddingRecord> = indices.iter().map(|&i| &train_ds.records[i]).collect();

    let mut params = model.params.clone();
    let semantic_pool: Vec<_> = pool.iter().map(|r| (*r, r.e_ct.as_slice(), r.y)).collect();
    let semantic = project_bank(&mut params.bank.semantic, &semantic_pool, opts.restricted, "semantic")?;

    let sentiment = if opts.sentiment {
        let sentiment_pool: Vec<_> = pool
            .iter()
            .filter(|r| r.y == 0)
            .filter_map(|r| r.e_st_full.as_deref().map(|v| (*r, v, r.z_full)))
            .collect();
        Some(project_bank(&mut params.bank.sentiment, &sentiment_pool, opts.restricted, "sentiment")?)
    } else {
        None
    };

    let version = model.version + 1;
    Ok(ProjectedModel {
        params,
        version,
        projection: Some(Projection {
            version,
            sample_frac: frac,
            seed: opts.seed,
            restricted: opts.restricted,
            pool_size: pool.len(),
            semantic,
            sentiment,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMatch {
    pub prototype: usize,
    pub tag: u8,
    pub source_id: String,
    pub source_text: String,
    pub distance: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentMatch {
    pub prototype: usize,
    pub similarity: f64,
    pub source_text: Option<String>,
}

/// Most similar positive- and negative-tagged sentiment prototype for one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub positive: SentimentMatch,
    pub negative: SentimentMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub id: String,
    pub text: String,
    pub prob: f64,
    pub label: u8,
    /// Nearest semantic prototypes by ascending distance.
    pub nearest: Vec<SemanticMatch>,
    pub explicit: BranchSummary,
    pub implicit: BranchSummary,
    pub h_ep: f64,
    pub h_ip: f64,
}

fn branch_summary(sims: &[f64], bank: &TaggedBank, projected: Option<&[ProjectedPrototype]>) -> BranchSummary {
    let top = |tag: u8| {
        let (j, s) = sims
            .iter()
            .enumerate()
            .filter(|(j, _)| bank.tags[*j] == tag)
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (j, &s)| if s > acc.1 { (j, s) } else { acc });
        SentimentMatch {
            prototype: j,
            similarity: s,
            source_text: projected.map(|p| p[j].source_text.clone()),
        }
    };
    BranchSummary {
        positive: top(1),
        negative: top(0),
    }
}

/// Explains one record against a projected model. `top_k` above `k_a` is
/// clamped with a warning.
pub fn explain(model: &ProjectedModel, rec: &EmbeddingRecord, top_k: usize) -> Result<Explanation> {
    let projection = model.current_projection().ok_or(Error::Unprojected)?;
    if top_k == 0 {
        return Err(Error::Config("top_k must be >= 1".into()));
    }
    let params = &model.params;
    let k_a = params.k_a();
    let k = if top_k > k_a {
        log::warn!("top_k={top_k} exceeds the {k_a} semantic prototypes; listing all of them");
        k_a
    } else {
        top_k
    };
    let trace = params.forward(rec)?;
    let bank = &params.bank.semantic;
    let mut ranked: Vec<(usize, f64)> = bank.vectors.iter().map(|p| sq_dist(&rec.e_ct, p)).enumerate().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let nearest = ranked
        .into_iter()
        .take(k)
        .map(|(j, d2)| SemanticMatch {
            prototype: j,
            tag: bank.tags[j],
            source_id: projection.semantic[j].source_id.clone(),
            source_text: projection.semantic[j].source_text.clone(),
            distance: d2.sqrt(),
            similarity: rbf_from_sq_dist(d2, bank.sigma, params.bank.eps),
        })
        .collect();
    let sent = projection.sentiment.as_deref();
    Ok(Explanation {
        id: rec.id.clone(),
        text: rec.display_text().to_string(),
        prob: trace.prob,
        label: predict_label(trace.prob),
        nearest,
        explicit: branch_summary(&trace.w_ep, &params.bank.sentiment, sent),
        implicit: branch_summary(&trace.w_ip, &params.bank.sentiment, sent),
        h_ep: trace.h_ep,
        h_ip: trace.h_ip,
    })
}

fn class_name(tag: u8) -> &'static str {
    if tag == 1 {
        "sarcastic"
    } else {
        "non-sarcastic"
    }
}

fn sentiment_line(out: &mut String, name: &str, b: &BranchSummary) {
    let part = |m: &SentimentMatch| match &m.source_text {
        Some(t) => format!("#{} {:.6} \"{}\"", m.prototype, m.similarity, t),
        None => format!("#{} {:.6}", m.prototype, m.similarity),
    };
    let _ = writeln!(out, "  {name}: positive {}; negative {}", part(&b.positive), part(&b.negative));
}

/// Human-readable rendering of an explanation.
pub fn render_text(e: &Explanation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Input [{}]: {}", e.id, e.text);
    let _ = writeln!(out, "Verdict: {} (p = {:.6})", class_name(e.label), e.prob);
    let _ = writeln!(out, "Nearest prototypes:");
    for (rank, m) in e.nearest.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {}. prototype #{} ({}) distance {:.6} similarity {:.6}",
            rank + 1,
            m.prototype,
            class_name(m.tag),
            m.distance,
            m.similarity
        );
        let _ = writeln!(out, "     \"{}\" [{}]", m.source_text, m.source_id);
    }
    let _ = writeln!(out, "Sentiment prototypes:");
    sentiment_line(&mut out, "explicit", &e.explicit);
    sentiment_line(&mut out, "implicit", &e.implicit);
    let _ = writeln!(out, "Polarity head: explicit {:.6}, implicit {:.6}", e.h_ep, e.h_ip);
    out
}
