//! Versioned JSON checkpoint of a trained (and possibly projected) model.
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "manifest": {"d_s", "d_m", "k_a", "k_b", "sigma_semantic", "sigma_sentiment", "eps", "hidden"},
//!   "param_version": <u64, bumped on every parameter change>,
//!   "params": {
//!     "bank": {"semantic": {"vectors", "tags", "sigma"}, "sentiment": {...}, "eps"},
//!     "head": {"theta", "bias"},
//!     "inco_head": {"w1", "b1", "w2", "b2"}
//!   },
//!   "projection": null | {"version", "sample_frac", "seed", "restricted", "pool_size",
//!                         "semantic": [{"index", "tag", "source_id", "source_text", "distance"}],
//!                         "sentiment": null | [...]}
//! }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{ProjectedModel, Projection};
use crate::network::ModelParams;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub d_s: usize,
    pub d_m: usize,
    pub k_a: usize,
    pub k_b: usize,
    pub sigma_semantic: f64,
    pub sigma_sentiment: f64,
    pub eps: f64,
    pub hidden: usize,
}

impl CheckpointManifest {
    pub fn of(params: &ModelParams) -> Self {
        CheckpointManifest {
            d_s: params.d_s(),
            d_m: params.d_m(),
            k_a: params.k_a(),
            k_b: params.k_b(),
            sigma_semantic: params.bank.semantic.sigma,
            sigma_sentiment: params.bank.sentiment.sigma,
            eps: params.bank.eps,
            hidden: params.hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub manifest: CheckpointManifest,
    pub param_version: u64,
    pub params: ModelParams,
    pub projection: Option<Projection>,
}

impl Checkpoint {
    pub fn from_model(model: &ProjectedModel) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            manifest: CheckpointManifest::of(&model.params),
            param_version: model.version,
            params: model.params.clone(),
            projection: model.projection.clone(),
        }
    }

    pub fn into_model(self) -> ProjectedModel {
        ProjectedModel {
            params: self.params,
            version: self.param_version,
            projection: self.projection,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.params.validate()?;
        let actual = CheckpointManifest::of(&self.params);
        if actual != self.manifest {
            return Err(Error::Data(format!(
                "checkpoint manifest {:?} disagrees with its parameters {:?}",
                self.manifest, actual
            )));
        }
        if let Some(p) = &self.projection {
            let sentiment_ok = p.sentiment.as_ref().map_or(true, |s| s.len() == actual.k_b);
            if p.semantic.len() != actual.k_a || !sentiment_ok {
                return Err(Error::Data("projection metadata does not cover every prototype".into()));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(model: &ProjectedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(&Checkpoint::from_model(model)).expect("checkpoint serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ProjectedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: bad checkpoint: {e}", path.display())))?;
    ckpt.validate()?;
    Ok(ckpt.into_model())
}
