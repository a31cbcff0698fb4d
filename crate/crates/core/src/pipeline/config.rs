//! Run configuration as `key = value` lines.
//!
//! Blank lines and `#` comments are ignored; later assignments override
//! earlier ones, which is how command-line overrides are applied.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::em::{EmConfig, MaxLenPolicy};
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};

/// Which parts of the model are learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Alternating training of action embedding, likelihood network and
    /// lengths.
    Asal,
    /// Alternating training on the frozen frame embedding; no shuffle model.
    FteHmm,
    /// Initial model only, with one round of shuffle training on its
    /// decoding.
    ActionShuffleInitHmm,
    /// As above, decoded with the full transcript forced and no length
    /// model.
    ActionShuffleViterbi,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Asal,
        Variant::FteHmm,
        Variant::ActionShuffleInitHmm,
        Variant::ActionShuffleViterbi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Asal => "asal",
            Variant::FteHmm => "fte_hmm",
            Variant::ActionShuffleInitHmm => "action_shuffle_init_hmm",
            Variant::ActionShuffleViterbi => "action_shuffle_viterbi",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let squash = |x: &str| -> String {
            x.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .map(|c| c.to_ascii_lowercase())
                .collect()
        };
        let key = squash(s);
        Variant::ALL
            .into_iter()
            .find(|v| squash(v.name()) == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Actions per activity.
    pub n_actions: usize,
    pub variant: Variant,
    pub multi_activity: bool,
    pub n_activities: usize,
    pub seed: u64,
    pub embedding: EmbeddingConfig,
    pub kmeans_restarts: usize,
    pub em: EmConfig,
    /// Shuffle-training epochs for the two variants without alternation.
    pub ssl_init_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_actions: 5,
            variant: Variant::Asal,
            multi_activity: false,
            n_activities: 10,
            seed: 0,
            embedding: EmbeddingConfig::default(),
            kmeans_restarts: 10,
            em: EmConfig::default(),
            ssl_init_epochs: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "n_actions" => self.n_actions = parse(key, v)?,
            "variant" => self.variant = v.parse()?,
            "multi_activity" => self.multi_activity = parse(key, v)?,
            "n_activities" => self.n_activities = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                self.embedding.seed = self.seed;
                self.em.seed = self.seed;
            }
            "embed_epochs" => self.embedding.epochs = parse(key, v)?,
            "embed_learning_rate" => self.embedding.learning_rate = parse(key, v)?,
            "embed_batch" => self.embedding.batch_size = parse(key, v)?,
            "kmeans_restarts" => self.kmeans_restarts = parse(key, v)?,
            "max_epochs" => self.em.max_epochs = parse(key, v)?,
            "epsilon" => self.em.epsilon = parse(key, v)?,
            "learning_rate" => self.em.learning_rate = parse(key, v)?,
            "momentum" => {
                self.em.momentum = parse(key, v)?;
                self.embedding.momentum = self.em.momentum;
            }
            "likelihood_epochs" => self.em.likelihood_epochs = parse(key, v)?,
            "likelihood_batch" => self.em.likelihood_batch = parse(key, v)?,
            "init_epochs" => self.em.init_epochs = parse(key, v)?,
            "init_learning_rate" => self.em.init_learning_rate = parse(key, v)?,
            "ssl_learning_rate" => self.em.ssl_learning_rate = parse(key, v)?,
            "ssl_batch_videos" => self.em.ssl_batch_videos = parse(key, v)?,
            "ssl_init_epochs" => self.ssl_init_epochs = parse(key, v)?,
            "guard" => self.em.guard = parse(key, v)?,
            "max_len" => {
                self.em.max_len = match v {
                    "auto" => MaxLenPolicy::Auto,
                    "full" => MaxLenPolicy::Full,
                    n => MaxLenPolicy::Fixed(parse(key, n)?),
                }
            }
            other => return Err(Error::InvalidArgument(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Defaults overridden by every assignment in `text`.
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_str(text, origin)?;
        Ok(cfg)
    }

    pub fn merge_str(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply(line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_actions == 0 {
            return Err(Error::InvalidArgument("n_actions must be positive".into()));
        }
        if self.multi_activity && self.n_activities == 0 {
            return Err(Error::InvalidArgument("n_activities must be positive".into()));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::InvalidArgument("kmeans_restarts must be positive".into()));
        }
        self.em.validate()
    }

    /// Every setting, in a form [`RunConfig::parse_str`] reads back.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let max_len = match self.em.max_len {
            MaxLenPolicy::Auto => "auto".to_string(),
            MaxLenPolicy::Full => "full".to_string(),
            MaxLenPolicy::Fixed(n) => n.to_string(),
        };
        let pairs: [(&str, String); 22] = [
            ("n_actions", self.n_actions.to_string()),
            ("variant", self.variant.to_string()),
            ("multi_activity", self.multi_activity.to_string()),
            ("n_activities", self.n_activities.to_string()),
            ("seed", self.seed.to_string()),
            ("embed_epochs", self.embedding.epochs.to_string()),
            ("embed_learning_rate", self.embedding.learning_rate.to_string()),
            ("embed_batch", self.embedding.batch_size.to_string()),
            ("kmeans_restarts", self.kmeans_restarts.to_string()),
            ("max_epochs", self.em.max_epochs.to_string()),
            ("epsilon", self.em.epsilon.to_string()),
            ("learning_rate", self.em.learning_rate.to_string()),
            ("momentum", self.em.momentum.to_string()),
            ("likelihood_epochs", self.em.likelihood_epochs.to_string()),
            ("likelihood_batch", self.em.likelihood_batch.to_string()),
            ("init_epochs", self.em.init_epochs.to_string()),
            ("init_learning_rate", self.em.init_learning_rate.to_string()),
            ("ssl_learning_rate", self.em.ssl_learning_rate.to_string()),
            ("ssl_batch_videos", self.em.ssl_batch_videos.to_string()),
            ("ssl_init_epochs", self.ssl_init_epochs.to_string()),
            ("guard", self.em.guard.to_string()),
            ("max_len", max_len),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
