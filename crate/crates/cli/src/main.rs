//! `hpvm`: verify, analyze, optimize, run and draw dataflow graph documents.

mod input;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hpvm::kernel::{AccessMode, BufferId, Value, ValueKind};
use hpvm::runtime::{Executable, Machine, RunStats, Runtime, RuntimeConfig};
use hpvm::text::{parse_document, print_document, to_dot};
use hpvm::verify::{has_errors, verify_document, Diagnostic};
use hpvm::IrDocument;
use serde_json::{json, Value as Json};

use input::InputFile;

#[derive(Parser)]
#[command(name = "hpvm", version, about = "Hierarchical dataflow graph toolchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a document and print its diagnostics.
    Verify {
        /// Document to read; `-` for standard input.
        file: PathBuf,
        /// Print diagnostics as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print the uniformity, read-only and allocation-node reports as JSON.
    Analyze { file: PathBuf },
    /// Rewrite a document and print it.
    Optimize {
        file: PathBuf,
        /// Merge `fuse`-annotated sibling nodes.
        #[arg(long)]
        fuse: bool,
    },
    /// Execute a graph and print its outputs as JSON.
    Run(RunArgs),
    /// Execute a graph and print the runtime counters as JSON.
    Stats(RunArgs),
    /// Print a graph in Graphviz DOT syntax.
    Dot {
        file: PathBuf,
        #[arg(long)]
        graph: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// JSON file with root input values (see the guide for the format).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Device overrides as `node=device`, comma separated.
    #[arg(long, value_delimiter = ',')]
    map: Vec<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Seed of the barrier-group schedules.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Graph to run when the document holds several.
    #[arg(long)]
    graph: Option<String>,
    /// Write the runtime counters to this file.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Write every writable root buffer as `<port>.bin` (little-endian).
    #[arg(long)]
    dump_dir: Option<PathBuf>,
}

/// Everything `run` needs, checked before the document is touched.
struct RunConfig {
    input: InputFile,
    overrides: Vec<(String, String)>,
    workers: Option<usize>,
    seed: u64,
    graph: Option<String>,
    stats: Option<PathBuf>,
    dump_dir: Option<PathBuf>,
}

impl RunConfig {
    fn from_args(a: &RunArgs) -> Result<Self> {
        let overrides = a
            .map
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| match m.split_once('=') {
                Some((n, d)) if !n.is_empty() && !d.is_empty() => Ok((n.trim().to_string(), d.trim().to_string())),
                _ => Err(anyhow!("--map entry `{m}` is not of the form node=device")),
            })
            .collect::<Result<_>>()?;
        if a.workers == Some(0) {
            bail!("--workers must be at least 1");
        }
        let input = match &a.input {
            Some(p) => InputFile::load(p)?,
            None => InputFile::default(),
        };
        if let Some(d) = &a.dump_dir {
            if !d.is_dir() {
                bail!("--dump-dir {} is not a directory", d.display());
            }
        }
        Ok(RunConfig {
            graph: a.graph.clone().or_else(|| input.graph.clone()),
            input,
            overrides,
            workers: a.workers,
            seed: a.seed,
            stats: a.stats.clone(),
            dump_dir: a.dump_dir.clone(),
        })
    }
}

fn read_source(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .context("reading standard input")?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load(path: &Path) -> Result<IrDocument> {
    let src = read_source(path)?;
    parse_document(&src).map_err(|e| anyhow!("{}:{e}", path.display()))
}

fn report(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{d}");
    }
}

/// Parses and verifies; on errors prints them and returns `None`.
fn load_valid(path: &Path) -> Result<Option<IrDocument>> {
    let doc = load(path)?;
    let diags = verify_document(&doc);
    if has_errors(&diags) {
        report(&diags);
        return Ok(None);
    }
    Ok(Some(doc))
}

struct Outcome {
    output: Json,
    stats: RunStats,
}

fn execute(doc: &IrDocument, cfg: &RunConfig) -> Result<Outcome> {
    let machine = Machine::default();
    let exe = Arc::new(Executable::new(doc, cfg.graph.as_deref(), &machine, &cfg.overrides)?);
    for w in &exe.mapping().warnings {
        eprintln!("warning: {w}");
    }
    let mut config = RuntimeConfig {
        seed: cfg.seed,
        ..Default::default()
    };
    if let Some(w) = cfg.workers {
        config.workers = w;
    }
    let rt = Runtime::new(machine, config);
    let root = exe.graph().root_node();
    let launch_ports: Vec<_> = exe.launch_inputs().into_iter().map(|i| &root.inputs[i]).collect();

    let mut writable: Vec<(String, BufferId)> = Vec::new();
    let mut args = Vec::new();
    for (port, json) in input::ordered(&launch_ports, &cfg.input.args, "args")? {
        args.push(match port.kind {
            ValueKind::Buffer(elem) => {
                let data =
                    input::buffer_data(elem, json, &cfg.input.base).with_context(|| format!("`{}`", port.name))?;
                let id = rt.alloc(&data);
                rt.track_mem(id, data.byte_len())?;
                if port.mode.is_some_and(AccessMode::writes) {
                    writable.push((port.name.clone(), id));
                }
                Value::Buf(id)
            }
            ValueKind::Scalar(ty) => input::scalar(ty, json).with_context(|| format!("`{}`", port.name))?,
        });
    }

    let host_value = |v: &Value| -> Result<Json> {
        match v {
            Value::Buf(id) => {
                if rt.tracker_entry(*id).is_some() {
                    rt.request_mem(*id)?;
                }
                Ok(input::buffer_json(&rt.read(*id)?))
            }
            v => Ok(input::scalar_json(v)),
        }
    };

    let mut output = serde_json::Map::new();
    output.insert("graph".into(), exe.graph().name.clone().into());
    if exe.is_streaming() {
        let stream_ports: Vec<_> = exe.stream_inputs().iter().map(|&i| &root.inputs[i]).collect();
        let h = rt.launch(&exe, args, true)?;
        for (t, record) in cfg.input.stream.iter().enumerate() {
            let mut vals = Vec::new();
            for (port, json) in input::ordered(&stream_ports, record, &format!("stream[{t}]"))? {
                vals.push(match port.kind {
                    ValueKind::Buffer(elem) => Value::Buf(rt.alloc(&input::buffer_data(elem, json, &cfg.input.base)?)),
                    ValueKind::Scalar(ty) => input::scalar(ty, json)?,
                });
            }
            rt.push(h, vals)?;
        }
        rt.close(h)?;
        let mut records = Vec::new();
        while let Some(r) = rt.pop(h)? {
            records.push(Json::Array(r.iter().map(&host_value).collect::<Result<_>>()?));
        }
        rt.wait(h)?;
        output.insert("stream".into(), records.into());
    } else {
        if !cfg.input.stream.is_empty() {
            bail!(
                "the input has stream records but graph `{}` does not stream",
                exe.graph().name
            );
        }
        let outs = rt.run(&exe, args)?;
        let outs: Vec<Json> = outs.iter().map(&host_value).collect::<Result<_>>()?;
        output.insert("outputs".into(), outs.into());
    }

    let mut buffers = serde_json::Map::new();
    for (name, id) in &writable {
        rt.request_mem(*id)?;
        let data = rt.read(*id)?;
        if let Some(dir) = &cfg.dump_dir {
            let path = dir.join(format!("{name}.bin"));
            std::fs::write(&path, data.to_le_bytes()).with_context(|| format!("writing {}", path.display()))?;
        }
        buffers.insert(name.clone(), input::buffer_json(&data));
    }
    output.insert("buffers".into(), buffers.into());
    let stats = rt.stats();
    if let Some(p) = &cfg.stats {
        std::fs::write(p, serde_json::to_string_pretty(&stats)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(Outcome {
        output: Json::Object(output),
        stats,
    })
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    emit(&format!("{}\n", serde_json::to_string_pretty(v)?))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify { file, json } => {
            let doc = load(&file)?;
            let diags = verify_document(&doc);
            if json {
                print_json(&diags)?;
            } else {
                let mut text: String = diags.iter().map(|d| format!("{d}\n")).collect();
                if diags.is_empty() {
                    text.push_str("ok\n");
                }
                emit(&text)?;
            }
            Ok(if has_errors(&diags) {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Analyze { file } => {
            let Some(doc) = load_valid(&file)? else {
                return Ok(ExitCode::from(1));
            };
            print_json(&hpvm::analysis::analyze(&doc))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize { file, fuse } => {
            let Some(mut doc) = load_valid(&file)? else {
                return Ok(ExitCode::from(1));
            };
            if fuse {
                let (fused, steps) = hpvm::transform::fusion_pass(&doc);
                for s in &steps {
                    eprintln!(
                        "fused {} + {} -> {} ({})",
                        s.first,
                        s.second,
                        s.result,
                        json!(s.kind).as_str().unwrap_or("")
                    );
                }
                let diags = verify_document(&fused);
                if has_errors(&diags) {
                    report(&diags);
                    bail!("fusion produced an invalid document");
                }
                doc = fused;
            }
            emit(&print_document(&doc))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let cfg = RunConfig::from_args(&args)?;
            let Some(doc) = load_valid(&args.file)? else {
                return Ok(ExitCode::from(1));
            };
            print_json(&execute(&doc, &cfg)?.output)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats(args) => {
            let cfg = RunConfig::from_args(&args)?;
            let Some(doc) = load_valid(&args.file)? else {
                return Ok(ExitCode::from(1));
            };
            let stats = execute(&doc, &cfg)?.stats;
            let summary: BTreeMap<&str, Json> = BTreeMap::from([
                ("stats", serde_json::to_value(&stats)?),
                ("total_launches", stats.total_launches().into()),
                ("consistent", stats.is_consistent().into()),
            ]);
            print_json(&summary)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Dot { file, graph } => {
            let doc = load(&file)?;
            let g = doc.select_graph(graph.as_deref()).ok_or_else(|| {
                anyhow!(
                    "no graph {}",
                    graph.as_deref().map_or("in the document".into(), |g| format!("`{g}`"))
                )
            })?;
            emit(&to_dot(g))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
