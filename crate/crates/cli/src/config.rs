//! Run configuration (TOML) and the wiring it describes.
//!
//! Relative paths are resolved against the directory holding the config
//! file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use deepsearch::agentloop::chat::{ChatEndpoint, HttpChatClient};
use deepsearch::agentloop::{load_exemplars, Budgets, ReformulationMode, Reformulator, ScriptItem};
use deepsearch::corpus::{read_passages, Corpus, UnitKind, WhitespaceAdapter, DEFAULT_MAX_WORDS};
use deepsearch::lexindex::{analyzer_by_version, Analyzer, Bm25Params, InvertedIndex};
use deepsearch::pipeline::{Bm25Retriever, Pipeline, PipelineConfig, RemoteScorer, ScorerEndpoint};
use deepsearch::toolsvc::{ToolService, DEFAULT_K, DEFAULT_TEXT_TOKENS};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Passage file; when absent and the index is over passages, the corpus
    /// is segmented on load.
    #[serde(default)]
    pub passages: Option<PathBuf>,
    pub index: PathBuf,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub reformulator: ReformulatorSection,
    #[serde(default)]
    pub agent: Option<AgentSection>,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub system_prompt: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Preset name or `"k1,b"`.
    #[serde(default = "default_bm25")]
    pub bm25: String,
    #[serde(default)]
    pub scorer: Option<ScorerEndpoint>,
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub maxp: bool,
    #[serde(default = "default_text_tokens")]
    pub max_text_tokens: usize,
    #[serde(default = "yes")]
    pub get_document: bool,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_bm25() -> String {
    "default".into()
}

fn default_text_tokens() -> usize {
    DEFAULT_TEXT_TOKENS
}

fn yes() -> bool {
    true
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            k: default_k(),
            bm25: default_bm25(),
            scorer: None,
            depth: None,
            maxp: false,
            max_text_tokens: default_text_tokens(),
            get_document: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReformulatorSection {
    #[serde(default)]
    pub mode: ReformulationMode,
    #[serde(default)]
    pub exemplars: Option<PathBuf>,
    #[serde(default)]
    pub llm: Option<ChatEndpoint>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AgentSection {
    /// Replays per-query scripts from a JSONL file of `{qid, items}`.
    Scripted {
        scripts: PathBuf,
    },
    Chat(ChatEndpoint),
}

#[derive(Debug, Deserialize)]
pub struct ScriptRecord {
    pub qid: String,
    pub items: Vec<ScriptItem>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.corpus);
        fix(&mut cfg.index);
        if let Some(p) = cfg.passages.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.reformulator.exemplars.as_mut() {
            fix(p);
        }
        if let Some(AgentSection::Scripted { scripts }) = cfg.agent.as_mut() {
            fix(scripts);
        }
        cfg.budgets.validate().map_err(anyhow::Error::msg)?;
        if cfg.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        Ok(cfg)
    }

    pub fn reformulator(&self) -> Result<Reformulator> {
        let r = &self.reformulator;
        let exemplars = match &r.exemplars {
            Some(p) => load_exemplars(p).with_context(|| format!("reading {}", p.display()))?,
            None => Vec::new(),
        };
        let llm = r
            .llm
            .clone()
            .map(|e| Arc::new(HttpChatClient::new(e)) as Arc<dyn deepsearch::agentloop::chat::ChatModel>);
        Reformulator::new(r.mode, llm, exemplars).map_err(anyhow::Error::msg)
    }
}

pub fn load_index(dir: &Path) -> Result<(Arc<InvertedIndex>, Arc<dyn Analyzer>)> {
    let index = InvertedIndex::load(dir).with_context(|| format!("loading index {}", dir.display()))?;
    let analyzer = analyzer_by_version(index.analyzer_version())
        .with_context(|| format!("unknown analyzer {:?}", index.analyzer_version()))?;
    Ok((Arc::new(index), Arc::from(analyzer)))
}

/// Loads the corpus with passages attached when `kind` needs them.
pub fn load_corpus(path: &Path, passages: Option<&Path>, kind: UnitKind) -> Result<Corpus> {
    let corpus = Corpus::ingest(path).with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(match (kind, passages) {
        (UnitKind::Document, _) => corpus,
        (UnitKind::Passage, Some(p)) => {
            corpus.with_passages(read_passages(p).with_context(|| format!("reading passages {}", p.display()))?)?
        }
        (UnitKind::Passage, None) => corpus.segmented(DEFAULT_MAX_WORDS),
    })
}

pub fn build_tools(cfg: &RunConfig) -> Result<Arc<ToolService>> {
    let (index, analyzer) = load_index(&cfg.index)?;
    let corpus = Arc::new(load_corpus(&cfg.corpus, cfg.passages.as_deref(), index.unit_kind())?);
    let p = &cfg.pipeline;
    let params: Bm25Params = p.bm25.parse().map_err(|e| anyhow::anyhow!("pipeline.bm25: {e}"))?;
    let mut pc = PipelineConfig::new(Arc::new(Bm25Retriever::new(index.clone(), params, analyzer)), p.k);
    match (&p.scorer, p.depth) {
        (Some(ep), Some(depth)) => {
            pc = pc.with_reranker(Arc::new(RemoteScorer::new(ep.clone())?), corpus.clone(), depth);
        }
        (None, None) => {}
        _ => bail!("pipeline.scorer and pipeline.depth must be set together"),
    }
    if p.maxp {
        if index.unit_kind() != UnitKind::Passage {
            bail!("pipeline.maxp needs a passage index");
        }
        pc = pc.with_maxp(corpus.clone());
    }
    let mut svc = ToolService::new(Pipeline::new(pc)?, corpus.clone(), Arc::new(WhitespaceAdapter))
        .with_max_text_tokens(p.max_text_tokens);
    if !p.get_document {
        svc = svc.without_get_document();
    }
    Ok(Arc::new(svc))
}
