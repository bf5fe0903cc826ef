//! Command-line front end. Every subcommand reads one config file; without
//! `--config` the mock backend and a `.treemem` store in the working
//! directory are used. Failures print `{"error","message"}` on stderr and
//! exit non-zero.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::adaptation::{MiningWindow, QueryRecord};
use crate::config::Config;
use crate::engine::{Engine, KOverrides, QueryResponse};
use crate::error::{Error, Result};
use crate::eval::{render_table, run_suite, BenchOptions, CorpusSpec, SystemKind};
use crate::indexer::{check_equivalence, IndexMode};
use crate::service::{self, parse_jsonl};
use crate::tree::TreeSchema;

#[derive(Debug, Parser)]
#[command(name = "treemem", version, about = "Hierarchical scoped semantic memory")]
pub struct Cli {
    /// Config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load or export the tree topology.
    #[command(subcommand)]
    Tree(TreeCmd),
    /// Add a single node.
    AddNode {
        business_key: String,
        #[arg(long)]
        level: String,
        /// Parent node id or business key; omit for the root.
        #[arg(long)]
        parent: Option<String>,
    },
    /// Ingest a JSONL file of document records.
    Ingest { file: PathBuf },
    /// Build memories.
    Index {
        #[arg(long, conflicts_with = "incremental")]
        full: bool,
        #[arg(long)]
        incremental: bool,
    },
    /// Ask a question inside a scope.
    Query {
        #[arg(long)]
        scope: String,
        text: String,
        #[command(flatten)]
        k: KArgs,
        /// Print the whole response as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Delete a node and its subtree.
    Delete { node: String },
    /// Print one node's memory.
    Memory { node: String },
    /// Dump the tree and all memories.
    Dump {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two dumps, ignoring versions and item order.
    CheckEquivalence { a: PathBuf, b: PathBuf },
    #[command(subcommand)]
    Bench(BenchCmd),
    #[command(subcommand)]
    Profile(ProfileCmd),
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum TreeCmd {
    Load {
        file: PathBuf,
    },
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Generate a synthetic corpus, index it and score one system.
    Run {
        /// Corpus spec JSON; missing fields take defaults.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "hltm")]
        system: SystemKind,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grade answers with the configured backend.
        #[arg(long)]
        judge: bool,
        #[arg(long, default_value_t = 5)]
        flat_k: usize,
        #[arg(long, default_value_t = 0)]
        parallelism: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProfileCmd {
    /// Mine a profile from a query file (JSONL of {text,timestamp}) or the
    /// served-query log.
    Mine {
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        min_support: Option<usize>,
        /// Ignore the time window.
        #[arg(long)]
        all: bool,
    },
    Approve {
        id: String,
    },
    Apply {
        id: String,
    },
    List,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct KArgs {
    #[arg(long)]
    k_facet: Option<usize>,
    #[arg(long)]
    k_qa: Option<usize>,
    #[arg(long)]
    k_summary: Option<usize>,
    #[arg(long)]
    k_inner: Option<usize>,
}

impl From<KArgs> for KOverrides {
    fn from(k: KArgs) -> Self {
        KOverrides { k_facet: k.k_facet, k_qa: k.k_qa, k_summary: k.k_summary, k_inner: k.k_inner }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config { store_path: Some(PathBuf::from(".treemem")), ..Config::default() }),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

fn print_answer(r: &QueryResponse) {
    println!("{}\n", r.answer);
    println!("{:<4} citation", "#");
    for (i, c) in r.citations.iter().enumerate() {
        println!("{:<4} {c}", i + 1);
    }
    println!("\n{} llm calls, {} tokens", r.usage.llm_calls, r.usage.tokens);
}

fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    if let Command::Bench(BenchCmd::Run { corpus, system, out, judge, flat_k, parallelism }) = cli.command {
        let spec: CorpusSpec = match corpus {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => CorpusSpec::default(),
        };
        let judge = if judge { Some(config.build_backend()?) } else { None };
        let report = run_suite(&config, spec, system, &BenchOptions { parallelism, judge, flat_k })?;
        eprint!("{}", render_table(&[&report]));
        return emit(&report, out.as_deref());
    }
    if let Command::CheckEquivalence { a, b } = &cli.command {
        let report = check_equivalence(&fs::read_to_string(a)?, &fs::read_to_string(b)?)?;
        emit(&report, None)?;
        return if report.identical {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{} diffs", report.diffs.len())))
        };
    }
    let engine = Engine::open(config)?;
    match cli.command {
        Command::Tree(TreeCmd::Load { file }) => {
            let schema: TreeSchema = serde_json::from_str(&fs::read_to_string(file)?)?;
            engine.load_tree(&schema)?;
            println!("loaded {} nodes", engine.tree().len());
        }
        Command::Tree(TreeCmd::Export { out }) => emit(&engine.tree().to_schema(), out.as_deref())?,
        Command::AddNode { business_key, level, parent } => {
            println!("{}", engine.add_node(&business_key, &level, parent.as_deref())?);
        }
        Command::Ingest { file } => emit(&engine.ingest(&parse_jsonl(&fs::read_to_string(file)?)?)?, None)?,
        Command::Index { full, .. } => {
            let mode = if full { IndexMode::Full } else { IndexMode::Incremental };
            emit(&engine.index(mode)?, None)?;
        }
        Command::Query { scope, text, k, json } => {
            let r = engine.query(&text, &scope, &k.into())?;
            if json {
                emit(&r, None)?;
            } else {
                print_answer(&r);
            }
        }
        Command::Delete { node } => emit(&engine.delete_node(&node)?, None)?,
        Command::Memory { node } => emit(&engine.memory(&node)?, None)?,
        Command::Dump { out } => emit(&engine.dump(), out.as_deref())?,
        Command::Profile(p) => match p {
            ProfileCmd::Mine { queries, min_support, all } => {
                let qs = queries.map(|p| read_queries(&p)).transpose()?;
                let window = all.then(MiningWindow::unbounded);
                emit(&engine.mine_profile(qs.as_deref(), window, min_support)?, None)?;
            }
            ProfileCmd::Approve { id } => emit(&engine.approve_profile(&id)?, None)?,
            ProfileCmd::Apply { id } => emit(&engine.apply_profile(&id)?, None)?,
            ProfileCmd::List => emit(&engine.profiles(), None)?,
        },
        Command::Serve { port, host } => {
            let ip = host.parse().map_err(|e| Error::InvalidArgument(format!("host: {e}")))?;
            service::serve(engine, SocketAddr::new(ip, port))?;
        }
        Command::Bench(_) | Command::CheckEquivalence { .. } => unreachable!("handled above"),
    }
    Ok(())
}

/// Runs the CLI and converts failures into a JSON line on stderr.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}
