use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flate2::read::GzDecoder;
use log::info;

use tadoc::bench::{self, BenchConfig, Engine};
use tadoc::container::{read_container, write_container, OuterLayer};
use tadoc::corpus::{decode, Tokenizer};
use tadoc::dag::extract_features;
use tadoc::kernels::Variant;
use tadoc::result::{Task, TaskParams};
use tadoc::scheduler::{self, Coarsening, DecisionTree, ExecOptions};
use tadoc::{oracle, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_CONTAINER: u8 = 3;
const EXIT_CORPUS: u8 = 4;

#[derive(Parser)]
#[command(name = "tadoc", version, about = "Compress text corpora into grammars and analyze them in place")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Tsv,
    Json,
}

#[derive(clap::Args)]
struct CorpusArgs {
    /// Text files or directories (every regular file inside, by name);
    /// `-` reads one document from standard input.
    inputs: Vec<PathBuf>,
    /// File with one input path per line (`-` for standard input).
    #[arg(long)]
    file_list: Option<PathBuf>,
    /// NFC-normalize and lowercase before coding.
    #[arg(long)]
    lowercase: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a corpus into a `.tdoc` container.
    Compress {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, short)]
        out: PathBuf,
        /// Skip the outer DEFLATE layer.
        #[arg(long)]
        no_deflate: bool,
        /// Also write the dictionary as `code<TAB>word` lines.
        #[arg(long)]
        dump_dict: Option<PathBuf>,
        /// Number of partitions (default: `TADOC_WORKERS`, else all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Restore the tokenized files of a container into a directory.
    Decompress {
        container: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run an analytics task.
    Analyze {
        /// A container for `--engine cd`; corpus inputs otherwise
        /// (`.gz` files for `--engine gzip`).
        inputs: Vec<PathBuf>,
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long, default_value = "auto", value_parser = parse_variant)]
        variant: VariantArg,
        /// JSON rule table replacing the default variant decision tree.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Sequence length for the sequence tasks.
        #[arg(long, default_value_t = 3)]
        l: usize,
        /// `auto` (sequence tasks only), `off`, or a threshold for all tasks.
        #[arg(long, default_value = "auto", value_parser = parse_coarsen)]
        coarsen: Coarsening,
        #[arg(long, value_enum, default_value = "tsv")]
        output: Output,
        #[arg(long, value_parser = parse_engine, default_value = "cd")]
        engine: Engine,
        #[arg(long)]
        lowercase: bool,
        #[arg(long)]
        file_list: Option<PathBuf>,
    },
    /// Print the dataset features stored in a container header.
    Features {
        container: PathBuf,
        #[arg(long, value_enum, default_value = "tsv")]
        output: Output,
    },
    /// Time the engines on a corpus.
    Bench {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_parser = parse_task, default_value = "word-count")]
        task: Task,
        #[arg(long, value_delimiter = ',', value_parser = parse_engine, default_value = "cd,baseline,gzip")]
        engines: Vec<Engine>,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        /// Threads for the compressed engine.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Partitions used to compress the corpus.
        #[arg(long, default_value_t = 1)]
        compress_workers: usize,
        #[arg(long, default_value_t = 3)]
        l: usize,
        /// Where the benchmark artifacts go (default: a temporary directory).
        #[arg(long)]
        work_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        output: Output,
    },
}

#[derive(Clone, Copy)]
enum VariantArg {
    Auto,
    Fixed(Variant),
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<VariantArg, String> {
    if s == "auto" {
        return Ok(VariantArg::Auto);
    }
    s.parse().map(VariantArg::Fixed).map_err(|e: Error| e.to_string())
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_coarsen(s: &str) -> Result<Coarsening, String> {
    match s {
        "auto" => Ok(Coarsening::default()),
        "off" => Ok(Coarsening::Never),
        n => n.parse().map(Coarsening::Always).map_err(|_| format!("expected auto, off or a threshold, got {n:?}")),
    }
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Container(_) | Error::Grammar(_) => EXIT_CONTAINER,
            Error::Corpus(_) => EXIT_CORPUS,
            Error::Parameter(_) => EXIT_USAGE,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn corpus_failure(message: String) -> Failure {
    Failure { code: EXIT_CORPUS, message }
}

fn io_failure(path: &Path, e: io::Error, code: u8) -> Failure {
    Failure { code, message: format!("{}: {e}", path.display()) }
}

/// Expands the positional inputs and the manifest into an ordered path list.
fn input_paths(inputs: &[PathBuf], file_list: Option<&Path>) -> Result<Vec<PathBuf>, Failure> {
    let mut paths = Vec::new();
    if let Some(list) = file_list {
        let text = if list == Path::new("-") {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).map_err(|e| io_failure(list, e, EXIT_CORPUS))?;
            s
        } else {
            fs::read_to_string(list).map_err(|e| io_failure(list, e, EXIT_CORPUS))?
        };
        paths.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(PathBuf::from));
    }
    for input in inputs {
        if input.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| io_failure(input, e, EXIT_CORPUS))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            paths.extend(entries);
        } else {
            paths.push(input.clone());
        }
    }
    if paths.is_empty() {
        return Err(corpus_failure("no input files".into()));
    }
    Ok(paths)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    if path == Path::new("-") {
        let mut b = Vec::new();
        io::stdin().lock().read_to_end(&mut b).map_err(|e| io_failure(path, e, EXIT_CORPUS))?;
        return Ok(b);
    }
    fs::read(path).map_err(|e| io_failure(path, e, EXIT_CORPUS))
}

fn utf8(path: &Path, bytes: Vec<u8>) -> Result<String, Failure> {
    String::from_utf8(bytes).map_err(|_| corpus_failure(format!("{}: not valid UTF-8", path.display())))
}

fn read_corpus(paths: &[PathBuf], gzip: bool) -> Result<Vec<(String, String)>, Failure> {
    paths
        .iter()
        .map(|p| {
            let mut bytes = read_bytes(p)?;
            if gzip {
                let mut out = Vec::new();
                GzDecoder::new(&bytes[..]).read_to_end(&mut out).map_err(|e| io_failure(p, e, EXIT_CORPUS))?;
                bytes = out;
            }
            Ok((p.display().to_string(), utf8(p, bytes)?))
        })
        .collect()
}

fn load_container(path: &Path) -> Result<tadoc::container::Container, Failure> {
    let bytes = fs::read(path).map_err(|e| io_failure(path, e, EXIT_CONTAINER))?;
    Ok(read_container(&bytes).map_err(Error::from)?)
}

fn write_stdout(text: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure { code: 1, message: format!("stdout: {e}") })
}

fn json_line(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Compress { corpus, out, no_deflate, dump_dict, workers } => {
            let paths = input_paths(&corpus.inputs, corpus.file_list.as_deref())?;
            let files = read_corpus(&paths, false)?;
            let n_w = scheduler::resolve_workers(workers)?;
            let tokenizer = Tokenizer::new(corpus.lowercase);
            let c = scheduler::compress_corpus(&files, tokenizer, n_w)?;
            let outer = if no_deflate { OuterLayer::None } else { OuterLayer::Deflate };
            let bytes = write_container(&c, outer).map_err(Error::from)?;
            fs::write(&out, &bytes).map_err(|e| io_failure(&out, e, 1))?;
            if let Some(path) = dump_dict {
                let f = fs::File::create(&path).map_err(|e| io_failure(&path, e, 1))?;
                let mut w = io::BufWriter::new(f);
                c.dictionary.write_dump(&mut w).and_then(|_| w.flush()).map_err(|e| io_failure(&path, e, 1))?;
            }
            info!(
                "{} files, {} tokens, {} partitions, {} rules -> {} bytes",
                c.header.files.len(),
                c.header.features.total_tokens,
                c.partitions.len(),
                c.header.features.rule_count,
                bytes.len()
            );
            Ok(())
        }
        Command::Decompress { container, out } => {
            let c = load_container(&container)?;
            fs::create_dir_all(&out).map_err(|e| io_failure(&out, e, 1))?;
            let streams: Vec<_> = c.partitions.iter().map(|p| p.grammar.expand()).collect();
            let mut sections = Vec::with_capacity(c.unit_count());
            for (p, stream) in c.partitions.iter().zip(&streams) {
                let decoded = decode(stream, &c.dictionary).map_err(Error::from)?;
                sections.extend(p.units.iter().zip(decoded).map(|(u, d)| ((u.file, u.section), d.tokens)));
            }
            sections.sort_by_key(|s| s.0);
            let mut texts = vec![Vec::<&str>::new(); c.header.files.len()];
            for ((file, _), tokens) in sections {
                texts[file as usize].extend(tokens);
            }
            for (i, (entry, tokens)) in c.header.files.iter().zip(texts).enumerate() {
                let name = Path::new(&entry.name)
                    .file_name()
                    .map_or_else(|| format!("file{i}"), |n| n.to_string_lossy().into_owned());
                let path = out.join(format!("{i:05}-{name}"));
                let mut text = tokens.join(" ");
                text.push('\n');
                fs::write(&path, text).map_err(|e| io_failure(&path, e, 1))?;
            }
            Ok(())
        }
        Command::Analyze {
            inputs,
            task,
            variant,
            rules,
            workers,
            top_k,
            l,
            coarsen,
            output,
            engine,
            lowercase,
            file_list,
        } => {
            let params = TaskParams { l, top_k };
            let result = match engine {
                Engine::Cd => {
                    let [path] = inputs.as_slice() else {
                        return Err(Failure {
                            code: EXIT_USAGE,
                            message: "--engine cd takes exactly one container".into(),
                        });
                    };
                    let c = load_container(path)?;
                    let tree = match rules {
                        Some(p) => DecisionTree::from_json(
                            &fs::read_to_string(&p).map_err(|e| io_failure(&p, e, EXIT_USAGE))?,
                        )?,
                        None => DecisionTree::default(),
                    };
                    let opts = ExecOptions {
                        workers: scheduler::resolve_workers(workers)?,
                        variant: match variant {
                            VariantArg::Auto => None,
                            VariantArg::Fixed(v) => Some(v),
                        },
                        tree,
                        coarsen,
                        params,
                    };
                    scheduler::run_task(&c, task, &opts)?
                }
                Engine::Baseline | Engine::Gzip => {
                    let paths = input_paths(&inputs, file_list.as_deref())?;
                    let files = read_corpus(&paths, engine == Engine::Gzip)?;
                    let texts: Vec<&str> = files.iter().map(|(_, t)| t.as_str()).collect();
                    oracle::run(task, params, &oracle::tokenize_files(&texts, Tokenizer::new(lowercase)))?
                }
            };
            match output {
                Output::Tsv => write_stdout(&result.to_tsv()),
                Output::Json => write_stdout(&json_line(&result.to_json())),
            }
        }
        Command::Features { container, output } => {
            let bytes = fs::read(&container).map_err(|e| io_failure(&container, e, EXIT_CONTAINER))?;
            let c = read_container(&bytes).map_err(Error::from)?;
            let f = extract_features(&c.header, bytes.len() as u64)?;
            match output {
                Output::Json => write_stdout(&json_line(&serde_json::to_value(f).expect("features serialize"))),
                Output::Tsv => write_stdout(&format!(
                    "file_count\t{}\ntotal_tokens\t{}\navg_file_size\t{:.3}\nvocabulary\t{}\nrule_count\t{}\ncontainer_bytes\t{}\n",
                    f.file_count, f.total_tokens, f.avg_file_size, f.vocabulary, f.rule_count, f.container_bytes
                )),
            }
        }
        Command::Bench { corpus, task, engines, repeat, workers, compress_workers, l, work_dir, output } => {
            let paths = input_paths(&corpus.inputs, corpus.file_list.as_deref())?;
            let files = read_corpus(&paths, false)?;
            let cfg = BenchConfig {
                task,
                params: TaskParams { l, top_k: None },
                engines,
                repeat,
                compress_workers,
                workers,
                tokenizer: Tokenizer::new(corpus.lowercase),
                ..Default::default()
            };
            let tmp;
            let dir = match &work_dir {
                Some(d) => d.as_path(),
                None => {
                    tmp = tempfile::tempdir().map_err(|e| Failure { code: 1, message: format!("work dir: {e}") })?;
                    tmp.path()
                }
            };
            let report = bench::run_bench(&files, dir, &cfg)?;
            match output {
                Output::Json => write_stdout(&json_line(&serde_json::to_value(&report).expect("report serializes"))),
                Output::Tsv => write_stdout(&bench_table(&report)),
            }
        }
    }
}

/// Plain-text rendering of a bench report: sizes and ratios, then phases.
fn bench_table(r: &bench::BenchReport) -> String {
    let s = &r.sizes;
    let mut out = format!(
        "version\traw\tgzip\tcd\tcd-\n\
         bytes\t{}\t{}\t{}\t{}\n\
         ratio\t1.0\t{:.2}\t{:.2}\t{:.2}\n\
         engine\tio_s\tinit_s\tcompute_s\ttotal_s\tmemory_bytes\n",
        s.raw_bytes, s.gzip_bytes, s.container_bytes, s.grammar_bytes, s.gzip_ratio, s.container_ratio, s.grammar_ratio,
    );
    for e in &r.engines {
        let m = e.median;
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            e.engine.name(),
            m.io,
            m.init,
            m.compute,
            m.total,
            e.memory_bytes
        ));
    }
    if let Some(x) = r.speedups.compute_vs_baseline {
        out.push_str(&format!("compute speedup vs baseline\t{x:.2}\n"));
    }
    if let Some(x) = r.speedups.total_vs_gzip {
        out.push_str(&format!("total speedup vs gzip\t{x:.2}\n"));
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tadoc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
