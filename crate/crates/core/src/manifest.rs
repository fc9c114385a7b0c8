//! Run manifests: everything needed to byte-reproduce a generation run.
//!
//! A manifest pins the scheme, key, modulus, model description (with a
//! digest), schedule, sequence count, and sampler seed. `run_generation`
//! is the single generation path used by the CLI and by reproducibility
//! tests, so re-running a stored manifest always rebuilds identical output,
//! independent of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{sample_unwatermarked, Schedule, ToyModelSpec};
use crate::error::{Error, Result};
use crate::greenlist::{generate_greenlist_watermarked, GreenParams};
use crate::gumbel::generate_watermarked;
use crate::prf::{derive_subkey, StreamDomain, PRF_VERSION};
use crate::scorescale::{generate_scorescale_watermarked, ScoreScaleSpec};
use crate::types::WatermarkKey;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    None,
    Gumbel,
    Greenlist,
    Scorescale,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "gumbel" => Ok(Self::Gumbel),
            "greenlist" => Ok(Self::Greenlist),
            "scorescale" => Ok(Self::Scorescale),
            other => Err(Error::BadModel(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::None => "none",
            Self::Gumbel => "gumbel",
            Self::Greenlist => "greenlist",
            Self::Scorescale => "scorescale",
        };
        f.write_str(name)
    }
}

pub const MANIFEST_FORMAT: &str = "dlmwm/manifest/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub prf_version: String,
    pub scheme: Scheme,
    /// 64 hex characters: the 256-bit master key.
    pub key_hex: String,
    pub modulus: u32,
    pub seq_len: usize,
    pub num_steps: usize,
    pub count: usize,
    /// Base index for the per-sequence sampler streams (unused by the fully
    /// deterministic Gumbel scheme).
    pub seed: u64,
    /// Inline model description: a toy diffusion model for none/gumbel/
    /// greenlist, a kernel chain for scorescale.
    pub model: serde_json::Value,
    pub model_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub green: Option<GreenParams>,
}

/// SHA-256 of the compact JSON encoding.
pub fn model_digest(model: &serde_json::Value) -> String {
    let compact = serde_json::to_string(model).expect("serializable value");
    hex::encode(Sha256::digest(compact.as_bytes()))
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scheme: Scheme,
        key: &WatermarkKey,
        seq_len: usize,
        num_steps: usize,
        count: usize,
        seed: u64,
        model: serde_json::Value,
        green: Option<GreenParams>,
    ) -> Self {
        let digest = model_digest(&model);
        Self {
            format: MANIFEST_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            prf_version: PRF_VERSION.into(),
            scheme,
            key_hex: key.master_hex(),
            modulus: key.modulus(),
            seq_len,
            num_steps,
            count,
            seed,
            model,
            model_digest: digest,
            green,
        }
    }

    pub fn key(&self) -> Result<WatermarkKey> {
        WatermarkKey::from_hex(&self.key_hex, self.modulus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::BadModel(format!("unknown manifest format '{}'", self.format)));
        }
        if self.prf_version != PRF_VERSION {
            return Err(Error::BadKey(format!(
                "manifest was produced with PRF '{}', this build uses '{}'",
                self.prf_version, PRF_VERSION
            )));
        }
        if model_digest(&self.model) != self.model_digest {
            return Err(Error::BadModel("model digest mismatch".into()));
        }
        self.key()?;
        Ok(())
    }
}

fn sampler_rng(key: &WatermarkKey, seed: u64, sequence: usize) -> ChaCha8Rng {
    let sub = derive_subkey(
        key.master_bytes(),
        StreamDomain::SamplerSeed,
        seed.wrapping_add(sequence as u64),
    );
    ChaCha8Rng::from_seed(sub)
}

/// Regenerates every sequence a manifest describes. Sequences are
/// independent given their derived streams, so the parallel map is
/// deterministic for any worker count.
pub fn run_generation(manifest: &RunManifest) -> Result<Vec<Vec<usize>>> {
    manifest.validate()?;
    let key = manifest.key()?;
    match manifest.scheme {
        Scheme::Scorescale => {
            let spec: ScoreScaleSpec = serde_json::from_value(manifest.model.clone())
                .map_err(|e| Error::BadModel(e.to_string()))?;
            if spec.num_steps != manifest.num_steps {
                return Err(Error::BadModel(
                    "manifest num_steps disagrees with the kernel spec".into(),
                ));
            }
            let model = spec.build(manifest.seq_len)?;
            let green = manifest.green;
            (0..manifest.count)
                .into_par_iter()
                .map(|i| {
                    let mut rng = sampler_rng(&key, manifest.seed, i);
                    generate_scorescale_watermarked(&model, &key, green.as_ref(), &mut rng)
                })
                .collect()
        }
        scheme => {
            let spec: ToyModelSpec = serde_json::from_value(manifest.model.clone())
                .map_err(|e| Error::BadModel(e.to_string()))?;
            let model = spec.build()?;
            let schedule = Schedule::new(manifest.num_steps)?;
            (0..manifest.count)
                .into_par_iter()
                .map(|i| match scheme {
                    Scheme::None => {
                        let mut rng = sampler_rng(&key, manifest.seed, i);
                        sample_unwatermarked(&model, &schedule, manifest.seq_len, &mut rng)
                    }
                    Scheme::Gumbel => generate_watermarked(&model, &schedule, manifest.seq_len, &key),
                    Scheme::Greenlist => {
                        let params = manifest.green.as_ref().ok_or_else(|| {
                            Error::BadGreenParams("greenlist scheme needs green params".into())
                        })?;
                        let mut rng = sampler_rng(&key, manifest.seed, i);
                        generate_greenlist_watermarked(
                            &model,
                            &schedule,
                            manifest.seq_len,
                            &key,
                            params,
                            &mut rng,
                        )
                    }
                    Scheme::Scorescale => unreachable!(),
                })
                .collect()
        }
    }
}
