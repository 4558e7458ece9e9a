//! Seeded synthetic data: random model instances for gradient checks and
//! planted classification tasks with known structure.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::network::{IncongruityHead, ModelParams, OutputHead, PrototypeBank, TaggedBank};
use crate::seed;
use crate::store::{Dataset, EmbeddingRecord, Manifest};

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * normal(rng)).collect()
}

fn around<R: Rng>(rng: &mut R, center: &[f64], std: f64) -> Vec<f64> {
    center.iter().map(|c| c + std * normal(rng)).collect()
}

fn uniform_vec<R: Rng>(rng: &mut R, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-half..half)).collect()
}

fn record(
    id: String,
    y: u8,
    z_ep: u8,
    e_ct: Vec<f64>,
    e_st_ep: Vec<f64>,
    e_st_ip: Vec<f64>,
    e_st_full: Vec<f64>,
    z_full: u8,
) -> EmbeddingRecord {
    EmbeddingRecord {
        text: format!("synthetic sample {id}"),
        id,
        ancestor: None,
        y,
        e_ct,
        e_st_ep,
        e_st_ip,
        e_st_full: Some(e_st_full),
        z_ep,
        z_ip: if y == 0 { z_ep } else { 1 - z_ep },
        z_full,
    }
}

/// Random parameters and records for gradient checks. Prototype tags
/// alternate so both tags are present whenever `k_a, k_b >= 2`.
pub fn random_instance(
    seed: u64,
    n: usize,
    k_a: usize,
    k_b: usize,
    d_s: usize,
    d_m: usize,
    hidden: usize,
) -> (ModelParams, Vec<EmbeddingRecord>) {
    let mut rng = seed::rng(seed, seed::stream::SYNTH);
    let rng = &mut rng;
    let sigma_ct = rng.gen_range(1.5..3.0);
    let sigma_st = rng.gen_range(1.5..3.0);
    let semantic = (0..k_a).map(|j| (gaussian_vec(rng, d_s, 1.0), (j % 2) as u8)).collect();
    let sentiment = (0..k_b).map(|j| (gaussian_vec(rng, d_m, 1.0), (j % 2) as u8)).collect();
    let params = ModelParams {
        bank: PrototypeBank {
            semantic: TaggedBank::new(semantic, sigma_ct),
            sentiment: TaggedBank::new(sentiment, sigma_st),
            eps: 1e-4,
        },
        head: OutputHead {
            theta: uniform_vec(rng, k_a + 2 * k_b, 1.5),
            bias: rng.gen_range(-0.5..0.5),
        },
        inco_head: IncongruityHead {
            w1: (0..k_b).map(|_| uniform_vec(rng, hidden, 1.5)).collect(),
            b1: uniform_vec(rng, hidden, 0.5),
            w2: uniform_vec(rng, hidden, 1.5),
            b2: rng.gen_range(-0.5..0.5),
        },
    };
    let records = (0..n)
        .map(|i| {
            let y = rng.gen_range(0..2u8);
            let z_ep = rng.gen_range(0..2u8);
            record(
                format!("r{i}"),
                y,
                z_ep,
                gaussian_vec(rng, d_s, 1.0),
                gaussian_vec(rng, d_m, 1.0),
                gaussian_vec(rng, d_m, 1.0),
                gaussian_vec(rng, d_m, 1.0),
                z_ep,
            )
        })
        .collect();
    (params, records)
}

/// Planted task where the sarcasm class is carried by the semantic view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n: usize,
    pub d_s: usize,
    pub d_m: usize,
    /// Distance between any two semantic cluster centers, in units of the
    /// within-cluster standard deviation.
    pub separation: f64,
    pub noise: f64,
    /// Standard deviation of sentiment embeddings around their polarity center.
    pub sentiment_noise: f64,
    /// 1 or 2 semantic clusters per class.
    pub clusters_per_class: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n: 400,
            d_s: 8,
            d_m: 6,
            separation: 6.0,
            noise: 0.5,
            sentiment_noise: 1.0,
            clusters_per_class: 2,
        }
    }
}

fn sentiment_centers(d_m: usize, scale: f64) -> [Vec<f64>; 2] {
    let mut neg = vec![0.0; d_m];
    let mut pos = vec![0.0; d_m];
    neg[0] = -scale;
    pos[0] = scale;
    [neg, pos]
}

/// Gaussian semantic clusters on the corners of a square of side
/// `separation * noise`. With two clusters per class, diagonal corners share
/// a class; with one, class 0 sits at the origin and class 1 at `(side, 0)`.
/// Classes are balanced, each class cycles through both polarities, and
/// sentiment embeddings are drawn around their polarity center.
pub fn planted_semantic_task(cfg: &PlantedConfig, seed: u64) -> Dataset {
    assert!(cfg.d_s >= 2, "planted task needs d_s >= 2");
    assert!(matches!(cfg.clusters_per_class, 1 | 2), "clusters_per_class must be 1 or 2");
    let mut rng = seed::rng(seed, seed::stream::SYNTH);
    let side = cfg.separation * cfg.noise;
    // class 0: corners (0,0),(1,1); class 1: (1,0),(0,1)
    let corners = [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
    let centers: Vec<Vec<f64>> = corners
        .iter()
        .map(|c| {
            let mut v = vec![0.0; cfg.d_s];
            v[0] = side * c[0];
            v[1] = side * c[1];
            v
        })
        .collect();
    let polarity = sentiment_centers(cfg.d_m, 2.0);

    let records = (0..cfg.n)
        .map(|i| {
            let y = (i % 2) as u8;
            let cluster = if cfg.clusters_per_class == 1 {
                2 * y as usize
            } else {
                2 * y as usize + (i / 2) % 2
            };
            let z_ep = ((i / 4) % 2) as u8;
            let z_ip = if y == 0 { z_ep } else { 1 - z_ep };
            let e_ct = around(&mut rng, &centers[cluster], cfg.noise);
            let sn = cfg.sentiment_noise;
            let ep = around(&mut rng, &polarity[z_ep as usize], sn);
            let ip = around(&mut rng, &polarity[z_ip as usize], sn);
            let full = around(&mut rng, &polarity[z_ep as usize], sn);
            record(format!("p{i}"), y, z_ep, e_ct, ep, ip, full, z_ep)
        })
        .collect();
    Dataset::new(Manifest::new(cfg.d_s, cfg.d_m, "planted", "all"), records)
        .expect("planted records are valid")
}

/// Planted task where the class is carried only by the sentiment views:
/// sarcastic records pair a positive explicit view with a negative implicit
/// one, non-sarcastic records have agreeing views of random polarity, and the
/// semantic view is class-independent noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncongruityConfig {
    pub n: usize,
    pub d_s: usize,
    pub d_m: usize,
    /// Polarity centers sit at +-`polarity` on the first sentiment axis.
    pub polarity: f64,
    pub sentiment_noise: f64,
}

impl Default for IncongruityConfig {
    fn default() -> Self {
        IncongruityConfig {
            n: 400,
            d_s: 4,
            d_m: 4,
            polarity: 1.0,
            sentiment_noise: 0.5,
        }
    }
}

pub fn planted_incongruity_task(cfg: &IncongruityConfig, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed, seed::stream::SYNTH);
    let polarity = sentiment_centers(cfg.d_m, cfg.polarity);
    let records = (0..cfg.n)
        .map(|i| {
            let y = (i % 2) as u8;
            let z_ep = if y == 1 { 1 } else { rng.gen_range(0..2u8) };
            let z_ip = if y == 0 { z_ep } else { 1 - z_ep };
            let e_ct = gaussian_vec(&mut rng, cfg.d_s, 1.0);
            let sn = cfg.sentiment_noise;
            let ep = around(&mut rng, &polarity[z_ep as usize], sn);
            let ip = around(&mut rng, &polarity[z_ip as usize], sn);
            let full = around(&mut rng, &polarity[z_ep as usize], sn);
            record(format!("q{i}"), y, z_ep, e_ct, ep, ip, full, z_ep)
        })
        .collect();
    Dataset::new(Manifest::new(cfg.d_s, cfg.d_m, "planted-incongruity", "all"), records)
        .expect("planted records are valid")
}
