mod config;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use deepsearch::agentloop::chat::{ChatEndpoint, HttpChatClient};
use deepsearch::agentloop::{Agent, EpisodeRunner, ScriptItem, ScriptedAgent};
use deepsearch::corpus::{Corpus, DocResolver, IdSchemeResolver, UnitKind, WhitespaceAdapter};
use deepsearch::evalkit::{
    evaluate_episodes, grid_search_bm25, load_queries, paired_t_test, reference_answers, summarize, GridMetric,
    GridResult, GridSpec, Judge, Judgments, QueryMetrics,
};
use deepsearch::lexindex::{analyzer_by_version, Bm25Params, InvertedIndex};
use deepsearch::pipeline::maxp_aggregate;
use deepsearch::toolsvc::serve_http;
use deepsearch::tracestore::{analyze_queries, decrypt_file, encrypt_file, read_traces, write_traces};

use config::{build_tools, load_corpus, load_index, AgentSection, RunConfig, ScriptRecord};

#[derive(Parser)]
#[command(name = "deepsearch", version, about = "Agentic search harness over a local corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split documents into passages of at most N words.
    Segment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = deepsearch::corpus::DEFAULT_MAX_WORDS)]
        max_words: usize,
    },
    /// Inverted index operations.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Query an index from the command line.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, short)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Preset name (default, doc-oriented, sweet-spot) or "k1,b".
        #[arg(long, default_value = "default")]
        bm25: String,
        /// Fold passage hits into documents.
        #[arg(long)]
        maxp: bool,
        #[arg(long)]
        json: bool,
    },
    /// Serve the search and get_document tools over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8600")]
        bind: String,
    },
    /// Run agent episodes and write a trace file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        secret: Passphrase,
        /// Encrypt the trace with the passphrase.
        #[arg(long)]
        encrypt: bool,
        /// Only run the first N queries.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score a trace file against judgments and reference answers.
    Eval(EvalArgs),
    /// Paired t-test between two per-query metric files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// recall, accuracy or search_calls
        #[arg(long, default_value = "recall")]
        metric: String,
    },
    /// Sweep BM25 k1 and b over judged queries.
    Grid(GridArgs),
    /// Render a grid CSV as an SVG heatmap.
    Heatmap {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace file utilities.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Build an index over documents or passages.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "document")]
        unit: UnitKind,
        /// Precomputed passages; segmented on the fly when omitted.
        #[arg(long)]
        passages: Option<PathBuf>,
        /// Index only the first N tokens of each unit.
        #[arg(long)]
        prefix_tokens: Option<usize>,
        #[arg(long, default_value = "standard-v1")]
        analyzer: String,
    },
}

#[derive(Subcommand)]
enum TraceCommand {
    Encrypt {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        secret: Passphrase,
    },
    Decrypt {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        secret: Passphrase,
    },
    /// Query statistics: searches per episode, quoting, query length.
    Stats {
        input: PathBuf,
        #[command(flatten)]
        secret: Passphrase,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Passphrase {
    /// Environment variable holding the trace passphrase.
    #[arg(long, default_value = "DEEPSEARCH_PASSPHRASE")]
    passphrase_env: String,
}

impl Passphrase {
    fn get(&self) -> Option<String> {
        std::env::var(&self.passphrase_env).ok().filter(|p| !p.is_empty())
    }

    fn require(&self) -> Result<String> {
        self.get()
            .with_context(|| format!("set {} to the trace passphrase", self.passphrase_env))
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    traces: PathBuf,
    /// JSONL of {qid, text, answer}.
    #[arg(long)]
    queries: PathBuf,
    /// JSONL of {qid, docid, level}.
    #[arg(long)]
    qrels: PathBuf,
    /// Corpus used to map passage ids to documents; id scheme otherwise.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    passages: Option<PathBuf>,
    /// Chat endpoint for an LLM judge; exact match when omitted.
    #[arg(long, requires = "judge_model")]
    judge_url: Option<String>,
    #[arg(long)]
    judge_model: Option<String>,
    #[arg(long, default_value = "DEEPSEARCH_JUDGE_KEY")]
    judge_key_env: String,
    /// Write per-query metrics as JSONL.
    #[arg(long)]
    per_query: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    secret: Passphrase,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value = "recall@5")]
    metric: GridMetric,
    #[arg(long, value_delimiter = ',')]
    k1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    b: Option<Vec<f64>>,
    /// Passages retrieved before Max-P on passage indexes.
    #[arg(long, default_value_t = 1000)]
    depth: usize,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    passages: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Segment { corpus, out, max_words } => {
            if max_words == 0 {
                bail!("--max-words must be at least 1");
            }
            let c = Corpus::ingest(&corpus)?.segmented(max_words);
            c.write_passages(&out)?;
            let hard = c.passages().iter().filter(|p| p.hard_split).count();
            eprintln!(
                "{} documents -> {} passages ({hard} hard splits)",
                c.len(),
                c.passages().len()
            );
        }
        Command::Index {
            command:
                IndexCommand::Build {
                    corpus,
                    out,
                    unit,
                    passages,
                    prefix_tokens,
                    analyzer,
                },
        } => {
            let analyzer = analyzer_by_version(&analyzer).with_context(|| format!("unknown analyzer {analyzer:?}"))?;
            let c = load_corpus(&corpus, passages.as_deref(), unit)?;
            let index = InvertedIndex::build(unit, c.index_units(unit), prefix_tokens, analyzer.as_ref())?;
            index.save(&out)?;
            eprintln!(
                "indexed {} {unit} units, {} terms, avgdl {:.2}",
                index.n_units(),
                index.terms().count(),
                index.avgdl()
            );
        }
        Command::Search {
            index,
            query,
            k,
            bm25,
            maxp,
            json,
        } => {
            let (index, analyzer) = load_index(&index)?;
            let params: Bm25Params = bm25.parse().map_err(anyhow::Error::msg)?;
            let ranked = if maxp {
                let deep = index.search(params, &query, k.max(1000), analyzer.as_ref());
                let mut docs = maxp_aggregate(&deep, &IdSchemeResolver)?;
                docs.truncate(k);
                docs
            } else {
                index.search(params, &query, k, analyzer.as_ref())
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&ranked)?);
            } else {
                for (i, e) in ranked.entries().iter().enumerate() {
                    println!("{:>3} {:<32} {:.4}", i + 1, e.id, e.score);
                }
            }
        }
        Command::Serve { config, bind } => serve(&config, &bind)?,
        Command::Run {
            config,
            queries,
            out,
            secret,
            encrypt,
            limit,
        } => run(
            &config,
            &queries,
            &out,
            encrypt.then(|| secret.require()).transpose()?,
            limit,
        )?,
        Command::Eval(args) => eval(args)?,
        Command::Compare { a, b, metric } => compare(&a, &b, &metric)?,
        Command::Grid(args) => grid(args)?,
        Command::Heatmap { csv, out } => {
            let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let grid = GridResult::from_csv(&text).map_err(anyhow::Error::msg)?;
            std::fs::write(&out, grid.to_svg())?;
        }
        Command::Trace { command } => trace(command)?,
    }
    Ok(())
}

fn serve(config: &Path, bind: &str) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let handle = serve_http(bind, build_tools(&cfg)?)?;
    eprintln!("serving tools on {}", handle.base_url());
    tokio::runtime::Builder::new_current_thread()
        .enable_io()
        .build()?
        .block_on(tokio::signal::ctrl_c())?;
    eprintln!("shutting down");
    handle.shutdown()?;
    Ok(())
}

fn run(config: &Path, queries: &Path, out: &Path, passphrase: Option<String>, limit: Option<usize>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut runner = EpisodeRunner::new(build_tools(&cfg)?, Arc::new(WhitespaceAdapter))
        .with_budgets(cfg.budgets)
        .with_reformulator(cfg.reformulator()?);
    if let Some(p) = &cfg.system_prompt {
        runner = runner.with_system_prompt(p.clone());
    }
    let mut records = load_queries(queries)?;
    if let Some(n) = limit {
        records.truncate(n);
    }
    let pairs: Vec<(String, String)> = records.into_iter().map(|q| (q.qid, q.text)).collect();
    let episodes = match cfg.agent.as_ref().context("config has no [agent] section")? {
        AgentSection::Chat(ep) => runner.run_many(&pairs, cfg.parallelism, |_| -> Box<dyn Agent> {
            Box::new(HttpChatClient::new(ep.clone()))
        }),
        AgentSection::Scripted { scripts } => {
            let scripts = load_scripts(scripts)?;
            runner.run_many(&pairs, cfg.parallelism, |qid| -> Box<dyn Agent> {
                Box::new(ScriptedAgent::new(scripts.get(qid).cloned().unwrap_or_default()))
            })
        }
    };
    write_traces(out, &episodes, passphrase.as_deref())?;
    let report = summarize_counts(&episodes);
    eprintln!("{} episodes written to {} ({report})", episodes.len(), out.display());
    Ok(())
}

fn summarize_counts(episodes: &[deepsearch::agentloop::Episode]) -> String {
    let mut by_tag: std::collections::BTreeMap<String, usize> = Default::default();
    for ep in episodes {
        *by_tag.entry(format!("{:?}", ep.termination)).or_default() += 1;
    }
    by_tag
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn load_scripts(path: &Path) -> Result<HashMap<String, Vec<ScriptItem>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ScriptRecord =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.insert(r.qid, r.items);
    }
    Ok(out)
}

fn resolver(corpus: Option<&Path>, passages: Option<&Path>) -> Result<Box<dyn DocResolver>> {
    Ok(match corpus {
        Some(c) => {
            let kind = if passages.is_some() {
                UnitKind::Passage
            } else {
                UnitKind::Document
            };
            Box::new(load_corpus(c, passages, kind)?)
        }
        None => Box::new(IdSchemeResolver),
    })
}

fn eval(args: EvalArgs) -> Result<()> {
    let episodes = read_traces(&args.traces, args.secret.get().as_deref())?;
    let queries = load_queries(&args.queries)?;
    let judgments = Judgments::load(&args.qrels)?;
    let resolver = resolver(args.corpus.as_deref(), args.passages.as_deref())?;
    let judge = match (args.judge_url, args.judge_model) {
        (Some(base_url), Some(model)) => Judge::Llm(Arc::new(HttpChatClient::new(ChatEndpoint {
            base_url,
            model,
            api_key: std::env::var(&args.judge_key_env).ok(),
            reasoning_effort: None,
            max_tokens: None,
            timeout_secs: 600,
        }))),
        _ => Judge::Exact,
    };
    let per_query = evaluate_episodes(
        &episodes,
        &reference_answers(&queries),
        &judgments,
        &judge,
        resolver.as_ref(),
    )?;
    if let Some(path) = &args.per_query {
        let mut w = BufWriter::new(File::create(path)?);
        for q in &per_query {
            serde_json::to_writer(&mut w, q)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let report = summarize(&per_query);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    Ok(())
}

fn read_per_query(path: &Path) -> Result<HashMap<String, QueryMetrics>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let q: QueryMetrics = serde_json::from_str(l)?;
            Ok((q.qid.clone(), q))
        })
        .collect()
}

fn compare(a: &Path, b: &Path, metric: &str) -> Result<()> {
    let pick = |q: &QueryMetrics| -> Result<f64> {
        Ok(match metric {
            "recall" => q.recall,
            "accuracy" => q.accuracy.unwrap_or(0.0),
            "search_calls" => q.search_calls as f64,
            other => bail!("unknown metric {other:?}"),
        })
    };
    let (a, b) = (read_per_query(a)?, read_per_query(b)?);
    let mut qids: Vec<&String> = a.keys().filter(|q| b.contains_key(*q)).collect();
    qids.sort();
    let xs = qids.iter().map(|q| pick(&a[*q])).collect::<Result<Vec<_>>>()?;
    let ys = qids.iter().map(|q| pick(&b[*q])).collect::<Result<Vec<_>>>()?;
    let t = paired_t_test(&xs, &ys)?;
    println!(
        "{metric}: n={} mean(a-b)={:+.4} t={:.3} df={} p={:.4}",
        qids.len(),
        t.mean_diff,
        t.t,
        t.df,
        t.p_value
    );
    Ok(())
}

fn grid(args: GridArgs) -> Result<()> {
    let (index, analyzer) = load_index(&args.index)?;
    let mut spec = GridSpec::new(args.metric, index.unit_kind());
    if let Some(k1) = args.k1 {
        spec.k1_values = k1;
    }
    if let Some(b) = args.b {
        spec.b_values = b;
    }
    spec.passage_depth = args.depth;
    let queries = load_queries(&args.queries)?;
    let judgments = Judgments::load(&args.qrels)?;
    let resolver = resolver(args.corpus.as_deref(), args.passages.as_deref())?;
    let result = grid_search_bm25(
        &index,
        analyzer.as_ref(),
        &spec,
        &queries,
        &judgments,
        resolver.as_ref(),
    )?;
    std::fs::write(&args.out, result.to_csv())?;
    if let Some(svg) = &args.svg {
        std::fs::write(svg, result.to_svg())?;
    }
    if let (Some(best), Some(default)) = (result.best(), result.default_cell()) {
        eprintln!(
            "best {} = {:.4} at k1={} b={}; default (0.9, 0.4) = {:.4}",
            result.metric, best.value, best.k1, best.b, default.value
        );
    }
    Ok(())
}

fn trace(cmd: TraceCommand) -> Result<()> {
    match cmd {
        TraceCommand::Encrypt { input, output, secret } => {
            let n = encrypt_file(&input, &output, &secret.require()?)?;
            eprintln!("encrypted {n} episodes");
        }
        TraceCommand::Decrypt { input, output, secret } => {
            let n = decrypt_file(&input, &output, &secret.require()?)?;
            eprintln!("decrypted {n} episodes");
        }
        TraceCommand::Stats { input, secret, json } => {
            let stats = analyze_queries(&read_traces(&input, secret.get().as_deref())?);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!("episodes          {}", stats.n_episodes);
                println!("searches          {}", stats.n_searches);
                println!("quoted fraction   {:.3}", stats.quoted_fraction);
                println!("terms per query   {:.2}", stats.avg_query_terms);
                println!("searches/episode  count");
                for (n, count) in &stats.search_histogram {
                    println!("{n:>16}  {count}");
                }
            }
        }
    }
    Ok(())
}
