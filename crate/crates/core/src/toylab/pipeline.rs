//! End-to-end toy run: generate data, train encoders, extract MC embeddings
//! for the in-distribution test split and for a shifted split.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::SimilarityKind;
use crate::tensor_io::EmbeddingTensor;
use crate::toylab::encoder::{Encoder, EncoderPair};
use crate::toylab::loss::HingeVariant;
use crate::toylab::synth::{gen_synthetic, PairedSet, SynthConfig, SynthData};
use crate::toylab::train::{deterministic_embed, mc_embed, train, TrainConfig, TrainLog};

/// Every knob of a toy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub synth: SynthConfig,
    pub hidden: usize,
    pub embed_dim: usize,
    pub keep_input: f64,
    pub keep_hidden: f64,
    pub train: TrainConfig,
    /// Number of Monte-Carlo models drawn at test time.
    pub models: usize,
    /// Size of the shifted test split.
    pub n_shift: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            synth: SynthConfig::default(),
            hidden: 64,
            embed_dim: 16,
            keep_input: 0.9,
            keep_hidden: 0.8,
            train: TrainConfig {
                learning_rate: 0.3,
                epochs: 100,
                ..TrainConfig::default()
            },
            models: 50,
            n_shift: 200,
        }
    }
}

/// Independent sub-seed for one purpose of a run.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SEED_INIT: u64 = 1;
const SEED_TRAIN: u64 = 2;
const SEED_EMBED_A: u64 = 3;
const SEED_EMBED_B: u64 = 4;
const SEED_SHIFT_ANCHORS: u64 = 5;
const SEED_SHIFT_SAMPLE: u64 = 6;
const SEED_SHIFT_EMBED_A: u64 = 7;
const SEED_SHIFT_EMBED_B: u64 = 8;

impl ToyConfig {
    /// The frozen reference configuration for `seed`.
    pub fn reference(seed: u64) -> Self {
        let mut cfg = ToyConfig::default();
        cfg.set_seed(seed);
        cfg
    }

    pub fn seed(&self) -> u64 {
        self.synth.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = derive_seed(seed, SEED_TRAIN);
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.hidden == 0 || self.embed_dim == 0 || self.models == 0 {
            return Err(Error::InvalidArgument(
                "hidden, embed_dim and models must be >= 1".into(),
            ));
        }
        if self.synth.n_test == 0 || self.n_shift == 0 {
            return Err(Error::InvalidArgument("test splits must be non-empty".into()));
        }
        Ok(())
    }

    /// Apply `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                context: format!("config line {}", lineno + 1),
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                context: format!("config line {}", lineno + 1),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
        }
        match key {
            "seed" => self.set_seed(parse(key, value)?),
            "clusters" => self.synth.clusters = parse(key, value)?,
            "zipf_exponent" => self.synth.zipf_exponent = parse(key, value)?,
            "weights" => {
                let w: Result<Vec<f64>> = value.split(',').map(|x| parse(key, x.trim())).collect();
                self.synth.weights = Some(w?);
            }
            "latent_dim" => self.synth.latent_dim = parse(key, value)?,
            "dim_a" => self.synth.dim_a = parse(key, value)?,
            "dim_b" => self.synth.dim_b = parse(key, value)?,
            "latent_noise" => self.synth.latent_noise = parse(key, value)?,
            "obs_noise" => self.synth.obs_noise = parse(key, value)?,
            "n_train" => self.synth.n_train = parse(key, value)?,
            "n_test" => self.synth.n_test = parse(key, value)?,
            "n_shift" => self.n_shift = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "keep_input" => self.keep_input = parse(key, value)?,
            "keep_hidden" => self.keep_hidden = parse(key, value)?,
            "loss" => self.train.variant = HingeVariant::from_str(value)?,
            "margin" => self.train.margin = parse(key, value)?,
            "similarity" => self.train.kind = SimilarityKind::from_str(value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "models" => self.models = parse(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Flat `key = value` rendering, readable by [`ToyConfig::apply_kv`].
    pub fn to_kv(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("seed", self.seed().to_string());
        m.insert("clusters", self.synth.clusters.to_string());
        m.insert("zipf_exponent", self.synth.zipf_exponent.to_string());
        if let Some(w) = &self.synth.weights {
            let w: Vec<String> = w.iter().map(f64::to_string).collect();
            m.insert("weights", w.join(","));
        }
        m.insert("latent_dim", self.synth.latent_dim.to_string());
        m.insert("dim_a", self.synth.dim_a.to_string());
        m.insert("dim_b", self.synth.dim_b.to_string());
        m.insert("latent_noise", self.synth.latent_noise.to_string());
        m.insert("obs_noise", self.synth.obs_noise.to_string());
        m.insert("n_train", self.synth.n_train.to_string());
        m.insert("n_test", self.synth.n_test.to_string());
        m.insert("n_shift", self.n_shift.to_string());
        m.insert("hidden", self.hidden.to_string());
        m.insert("embed_dim", self.embed_dim.to_string());
        m.insert("keep_input", self.keep_input.to_string());
        m.insert("keep_hidden", self.keep_hidden.to_string());
        m.insert("loss", self.train.variant.to_string());
        m.insert("margin", self.train.margin.to_string());
        m.insert("similarity", self.train.kind.to_string());
        m.insert("learning_rate", self.train.learning_rate.to_string());
        m.insert("batch_size", self.train.batch_size.to_string());
        m.insert("epochs", self.train.epochs.to_string());
        m.insert("models", self.models.to_string());
        m.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn init_params(&self) -> Result<EncoderPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed(), SEED_INIT));
        let normalize = self.train.kind == SimilarityKind::Cosine;
        let a = Encoder::init(
            &mut rng,
            self.synth.dim_a,
            self.hidden,
            self.embed_dim,
            self.keep_input,
            self.keep_hidden,
            normalize,
        )?;
        let b = Encoder::init(
            &mut rng,
            self.synth.dim_b,
            self.hidden,
            self.embed_dim,
            self.keep_input,
            self.keep_hidden,
            normalize,
        )?;
        Ok(EncoderPair { a, b })
    }
}

/// Monte-Carlo and deterministic embeddings of both modalities of one split.
#[derive(Debug, Clone)]
pub struct SplitEmbeddings {
    pub a_mc: EmbeddingTensor,
    pub b_mc: EmbeddingTensor,
    pub a_det: EmbeddingTensor,
    pub b_det: EmbeddingTensor,
}

impl SplitEmbeddings {
    pub fn compute(pair: &EncoderPair, split: &PairedSet, models: usize, seed_a: u64, seed_b: u64) -> Result<Self> {
        Ok(SplitEmbeddings {
            a_mc: mc_embed(&pair.a, &split.xa, models, seed_a)?,
            b_mc: mc_embed(&pair.b, &split.xb, models, seed_b)?,
            a_det: deterministic_embed(&pair.a, &split.xa)?,
            b_det: deterministic_embed(&pair.b, &split.xb)?,
        })
    }
}

/// Outputs of [`run_toy`].
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub config: ToyConfig,
    pub data: SynthData,
    pub params: EncoderPair,
    pub log: TrainLog,
    pub test: SplitEmbeddings,
    /// Test pairs drawn around fresh cluster anchors.
    pub shifted: PairedSet,
    pub shifted_emb: SplitEmbeddings,
}

pub fn run_toy(cfg: &ToyConfig) -> Result<ToyRun> {
    cfg.validate()?;
    let seed = cfg.seed();
    let data = gen_synthetic(&cfg.synth)?;
    let params0 = cfg.init_params()?;
    let (params, log) = train(&data.train, &params0, &cfg.train)?;
    let test = SplitEmbeddings::compute(
        &params,
        &data.test,
        cfg.models,
        derive_seed(seed, SEED_EMBED_A),
        derive_seed(seed, SEED_EMBED_B),
    )?;
    let shifted_world = data
        .world
        .with_new_anchors(derive_seed(seed, SEED_SHIFT_ANCHORS));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_SHIFT_SAMPLE));
    let shifted = shifted_world.sample(cfg.n_shift, &mut rng);
    let shifted_emb = SplitEmbeddings::compute(
        &params,
        &shifted,
        cfg.models,
        derive_seed(seed, SEED_SHIFT_EMBED_A),
        derive_seed(seed, SEED_SHIFT_EMBED_B),
    )?;
    Ok(ToyRun {
        config: cfg.clone(),
        data,
        params,
        log,
        test,
        shifted,
        shifted_emb,
    })
}
