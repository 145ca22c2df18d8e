//! Run configuration: one TOML file with `[generator]`, `[model]`,
//! `[training]` and `[paths]` sections, all optional.
//!
//! Seed precedence, highest first: the `--seed` flag, the `OPINIONXF_SEED`
//! environment variable, then the seeds written in the file. An override
//! replaces the generator, model and training seeds together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::dataset::{
    generate_synthetic, load_records, split, synthetic_decks, DatasetSplit, GeneratorConfig,
    SurveyRecord,
};
use crate::embeddings::{load_decks, load_precomputed, DeckText, EmbeddingStore};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{hex_digest, TrainConfig};

pub const SEED_ENV: &str = "OPINIONXF_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Survey records (JSONL). When absent the generator supplies data.
    pub dataset: Option<PathBuf>,
    /// Deck texts (JSONL); required with `dataset`.
    pub decks: Option<PathBuf>,
    /// Precomputed embeddings; hashed embeddings are used when absent.
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            decks: None,
            embeddings: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub paths: PathsConfig,
}

/// Records, decks and the split built from one configuration.
pub struct Prepared {
    pub records: Vec<SurveyRecord>,
    pub corpus: Corpus,
    pub split: DatasetSplit,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parse a file; relative data paths are taken relative to its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut config.paths;
        for slot in [&mut p.dataset, &mut p.decks, &mut p.embeddings] {
            if let Some(f) = slot {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.training.validate()?;
        if self.paths.dataset.is_some() && self.paths.decks.is_none() {
            return Err(Error::Config("paths.dataset requires paths.decks".into()));
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.generator.seed = seed;
        self.model.seed = seed;
        self.training.seed = seed;
    }

    /// Apply the flag or, failing that, the environment value.
    pub fn apply_seed_override(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        let seed = match (flag, env) {
            (Some(s), _) => Some(s),
            (None, Some(v)) => Some(v.trim().parse().map_err(|_| {
                Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?),
            (None, None) => None,
        };
        if let Some(s) = seed {
            self.set_seed(s);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    /// Hash of everything except the output directory, so the same run
    /// written to two places hashes the same.
    pub fn content_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths.out_dir = PathsConfig::default().out_dir;
        Ok(hex_digest(c.to_toml()?.as_bytes()))
    }

    /// Write the effective configuration and its hash into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<String> {
        let text = self.to_toml()?;
        let hash = self.content_hash()?;
        let cfg = dir.join("config.toml");
        std::fs::write(&cfg, &text).map_err(|e| Error::io(&cfg, e))?;
        let h = dir.join("config.sha256");
        std::fs::write(&h, format!("{hash}  config.toml\n")).map_err(|e| Error::io(&h, e))?;
        Ok(hash)
    }

    pub fn load_data(&self) -> Result<(Vec<SurveyRecord>, Vec<DeckText>, Option<EmbeddingStore>)> {
        let store = self.paths.embeddings.as_deref().map(load_precomputed).transpose()?;
        match (&self.paths.dataset, &self.paths.decks) {
            (Some(d), Some(k)) => Ok((load_records(d, None)?, load_decks(k)?, store)),
            (Some(_), None) => Err(Error::Config("paths.dataset requires paths.decks".into())),
            (None, _) => Ok((
                generate_synthetic(&self.generator)?,
                synthetic_decks(&self.generator),
                store,
            )),
        }
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let (records, decks, store) = self.load_data()?;
        let corpus = Corpus::build(&records, decks, store.as_ref(), self.generator.embedding_dim)?;
        let split = split(&records, self.training.train_ratio, self.training.seed)?;
        Ok(Prepared {
            records,
            corpus,
            split,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_and_unknown_keys() {
        let c = RunConfig::from_toml(
            "[model]\nd_model = 32\nuse_fusion = true\n[training]\nepochs = 3\n[generator]\nn_participants = 50\n",
        )
        .unwrap();
        assert_eq!(c.model.d_model, 32);
        assert!(c.model.use_fusion);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.generator.n_participants, 50);
        assert_eq!(c.generator.questions, 8);
        assert!(matches!(RunConfig::from_toml("[model]\nwidth = 3\n"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[training]\nclip_norm = 0.0\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut c = RunConfig::default();
        c.generator.n_participants = 77;
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.content_hash().unwrap(), c.content_hash().unwrap());
        c.training.epochs = 2;
        assert_ne!(back.content_hash().unwrap(), c.content_hash().unwrap());
        let mut moved = c.clone();
        moved.paths.out_dir = "elsewhere".into();
        assert_eq!(moved.content_hash().unwrap(), c.content_hash().unwrap());
    }

    #[test]
    fn seed_precedence() {
        let mut c = RunConfig::default();
        c.apply_seed_override(Some(5), Some("9")).unwrap();
        assert_eq!((c.generator.seed, c.model.seed, c.training.seed), (5, 5, 5));
        c.apply_seed_override(None, Some(" 9 ")).unwrap();
        assert_eq!(c.training.seed, 9);
        c.apply_seed_override(None, None).unwrap();
        assert_eq!(c.training.seed, 9);
        assert!(c.apply_seed_override(None, Some("x")).is_err());
    }
}
