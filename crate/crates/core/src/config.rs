//! Run configuration: a TOML document with every key optional.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/demo"
//! representation = "spg"        # spg | seg | spv | sph | sta | atp
//!
//! [corpus]
//! # manifest = "data/manifest.tsv"   # omit to generate a synthetic corpus
//! [corpus.synth]
//! train = 80
//!
//! [short_term]
//! steps = 200
//! [short_term.optimizer]
//! learning_rate = 1e-4
//!
//! [encoder]
//! top_k = 24
//!
//! [head]
//! epochs = 40
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::SynthConfig;
use crate::dfe::ShortTermConfig;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::regressor::HeadConfig;

/// Video-level representation fed to the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Spectral graph, graph attention head.
    Spg,
    /// Sequential graph, graph attention head.
    Seg,
    /// Spectral vector, MLP head.
    Spv,
    /// Spectral heatmap, 1D-CNN head.
    Sph,
    /// Per-channel statistics, MLP head.
    Sta,
    /// Average of slice-level predictions; no head.
    Atp,
}

impl Representation {
    pub const ALL: [Representation; 6] = [
        Representation::Spg,
        Representation::Seg,
        Representation::Spv,
        Representation::Sph,
        Representation::Sta,
        Representation::Atp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Spg => "spg",
            Representation::Seg => "seg",
            Representation::Spv => "spv",
            Representation::Sph => "sph",
            Representation::Sta => "sta",
            Representation::Atp => "atp",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::config(format!("unknown representation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Manifest of a corpus on disk; when absent a synthetic corpus is
    /// generated from `synth`.
    pub manifest: Option<PathBuf>,
    pub synth: SynthConfig,
    /// Generator seed; defaults to the run seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub representation: Representation,
    /// Skip head training and score with freshly initialised parameters.
    pub untrained_head: bool,
    pub corpus: CorpusConfig,
    pub short_term: ShortTermConfig,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            representation: Representation::Spg,
            untrained_head: false,
            corpus: CorpusConfig::default(),
            short_term: ShortTermConfig::default(),
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn corpus_seed(&self) -> u64 {
        self.corpus.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.short_term.validate()?;
        self.encoder.validate()?;
        self.head.validate()?;
        let synth = &self.corpus.synth;
        if self.corpus.manifest.is_none()
            && (synth.height, synth.width, synth.channels)
                != (self.short_term.mtb.height, self.short_term.mtb.width, self.short_term.mtb.channels)
        {
            return Err(Error::config(format!(
                "synthetic frames are {}×{}×{} but the backbone expects {}×{}×{}",
                synth.height,
                synth.width,
                synth.channels,
                self.short_term.mtb.height,
                self.short_term.mtb.width,
                self.short_term.mtb.channels
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("invalid configuration: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or the defaults when `None`) and applies `key=value`
    /// overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}

/// Sets a dotted key to a value parsed as TOML, falling back to a plain
/// string (`short_term.steps=50`, `representation=seg`).
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
