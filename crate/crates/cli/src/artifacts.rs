//! Artifact layout inside the output directory and per-subcommand
//! manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const TRAIN: &str = "data/train.jsonl";
pub const DEV: &str = "data/dev.jsonl";
pub const TEST: &str = "data/test.jsonl";
pub const VOCAB: &str = "data/vocab.txt";
pub const COMPONENTS: &str = "lm/components.json";
pub const STATIC: &str = "mixture/static.json";
pub const STATIC_REPORT: &str = "mixture/static_report.json";
pub const ADAPTER: &str = "mixture/adapter.json";
pub const DYNAMIC: &str = "mixture/dynamic.json";
pub const ADAPTER_REPORT: &str = "mixture/adapter_report.json";
pub const CLASSIFIER: &str = "topic/classifier.json";
pub const CLASSIFIER_REPORT: &str = "topic/report.json";
pub const NBEST_TRAIN: &str = "asr/train.nbest.jsonl";
pub const NBEST_DEV: &str = "asr/dev.nbest.jsonl";
pub const NBEST_TEST: &str = "asr/test.nbest.jsonl";
pub const NLM: &str = "nlm/model.json";
pub const NLM_REPORT: &str = "nlm/report.json";
pub const PERPLEXITY: &str = "eval/perplexity.json";
pub const RESCORE: &str = "eval/rescore.json";
pub const REPORT: &str = "report.txt";
pub const GRADCHECK: &str = "gradcheck.json";

pub fn arpa_path(component: &str) -> String {
    format!("lm/{component}.arpa")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON rendering of the effective config.
pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    tool_version: &'static str,
    seed: u64,
    config_hash: String,
    /// Relative path to SHA-256 of the file contents.
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// Reads and writes relative to the output directory, recording hashes of
/// everything touched for the manifest.
pub struct Workspace {
    pub root: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Workspace {
    pub fn new(root: &Path) -> Self {
        Workspace {
            root: root.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Relative paths among `rels` that do not exist yet.
    pub fn missing<'a>(&self, rels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        rels.into_iter()
            .filter(|r| !self.path(r).is_file())
            .map(|r| self.path(r).display().to_string())
            .collect()
    }

    /// Records an input file and returns its absolute path.
    pub fn input(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        self.inputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(p)
    }

    pub fn read_string(&mut self, rel: &str) -> Result<String> {
        let p = self.input(rel)?;
        std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&p, contents.as_ref()).with_context(|| format!("writing {}", p.display()))?;
        self.outputs.insert(rel.to_string(), sha256_hex(contents.as_ref()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Registers a file some library call already wrote.
    pub fn wrote(&mut self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        let bytes = std::fs::read(&p).with_context(|| format!("reading back {}", p.display()))?;
        self.outputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn ensure_parent(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(p)
    }

    pub fn finish(self, subcommand: &str, cfg: &RunConfig) -> Result<()> {
        let m = Manifest {
            subcommand,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config_hash: config_hash(cfg),
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let p = self.root.join("manifests").join(format!("{subcommand}.json"));
        std::fs::create_dir_all(p.parent().expect("has parent"))?;
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }
}
