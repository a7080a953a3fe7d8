//! Phase-split timing of the compressed engine against the uncompressed
//! baselines.
//!
//! Phases: `io` reads bytes from disk, `init` turns them into something a
//! kernel can run on (inflate + parse + DAG load + coarsen for the
//! compressed engine, inflate for gzip, UTF-8 checks for raw text) and
//! `compute` is the kernel itself, tokenization included for the baselines.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::container::{
    deflate_size, encoded_stream_bytes, ratio, read_container, write_container, Container, OuterLayer,
};
use crate::corpus::{encode_corpus, Tokenizer};
use crate::kernels::Variant;
use crate::oracle;
use crate::result::{AnalyticsResult, Task, TaskParams};
use crate::scheduler::{self, Coarsening, ExecOptions};
use crate::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Runs on the compressed container.
    Cd,
    /// Runs on raw text.
    Baseline,
    /// Inflates per-file gzip, then runs the baseline.
    Gzip,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Cd => "cd",
            Engine::Baseline => "baseline",
            Engine::Gzip => "gzip",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "cd" => Ok(Engine::Cd),
            "baseline" => Ok(Engine::Baseline),
            "gzip" => Ok(Engine::Gzip),
            _ => Err(Error::Parameter(format!("unknown engine {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub task: Task,
    pub params: TaskParams,
    pub engines: Vec<Engine>,
    pub repeat: usize,
    /// Partitions used when compressing.
    pub compress_workers: usize,
    /// Threads used by the compressed engine.
    pub workers: usize,
    pub variant: Option<Variant>,
    pub coarsen: Coarsening,
    pub tokenizer: Tokenizer,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            task: Task::WordCount,
            params: TaskParams::default(),
            engines: vec![Engine::Cd, Engine::Baseline, Engine::Gzip],
            repeat: 3,
            compress_workers: 1,
            workers: 1,
            variant: None,
            coarsen: Coarsening::default(),
            tokenizer: Tokenizer::default(),
        }
    }
}

/// Seconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Phases {
    pub io: f64,
    pub init: f64,
    pub compute: f64,
    pub total: f64,
}

impl Phases {
    fn new(io: Duration, init: Duration, compute: Duration) -> Self {
        let (io, init, compute) = (io.as_secs_f64(), init.as_secs_f64(), compute.as_secs_f64());
        Phases { io, init, compute, total: io + init + compute }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineReport {
    pub engine: Engine,
    pub runs: Vec<Phases>,
    /// Per-phase medians over `runs`.
    pub median: Phases,
    /// Bytes held by the engine's working representation.
    pub memory_bytes: u64,
}

/// Corpus sizes, compressed sizes and `raw / compressed` ratios.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SizeReport {
    pub raw_bytes: u64,
    /// Container without the outer layer (grammar only).
    pub grammar_bytes: u64,
    /// Container with the outer DEFLATE layer.
    pub container_bytes: u64,
    /// Raw DEFLATE of the concatenated raw text.
    pub deflate_bytes: u64,
    /// Raw DEFLATE of the dictionary-encoded stream.
    pub encoded_deflate_bytes: u64,
    /// Sum of the per-file gzip members the gzip engine reads.
    pub gzip_bytes: u64,
    pub grammar_ratio: f64,
    pub container_ratio: f64,
    pub deflate_ratio: f64,
    pub encoded_deflate_ratio: f64,
    pub gzip_ratio: f64,
}

/// `baseline / cd` and `gzip / cd`, per phase medians.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Speedups {
    pub compute_vs_baseline: Option<f64>,
    pub total_vs_baseline: Option<f64>,
    pub compute_vs_gzip: Option<f64>,
    pub total_vs_gzip: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub task: Task,
    pub files: usize,
    pub tokens: u64,
    pub partitions: usize,
    pub sizes: SizeReport,
    pub engines: Vec<EngineReport>,
    pub speedups: Speedups,
}

impl BenchReport {
    pub fn engine(&self, e: Engine) -> Option<&EngineReport> {
        self.engines.iter().find(|r| r.engine == e)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn median_phases(runs: &[Phases]) -> Phases {
    let m = |f: fn(&Phases) -> f64| median(runs.iter().map(f).collect());
    Phases { io: m(|p| p.io), init: m(|p| p.init), compute: m(|p| p.compute), total: m(|p| p.total) }
}

/// Baseline kernel over raw texts, tokenization included.
///
/// Word count and sort count into a hash table keyed by borrowed tokens;
/// the other tasks run the oracle.
pub fn baseline_compute(
    task: Task,
    params: TaskParams,
    texts: &[String],
    tok: Tokenizer,
) -> Result<AnalyticsResult, Error> {
    match task {
        Task::WordCount | Task::Sort => {
            let prepared: Vec<_> = texts.iter().map(|t| tok.prepare(t)).collect();
            let mut counts: FxHashMap<&str, u64> = FxHashMap::default();
            for p in &prepared {
                for w in tok.tokens(p) {
                    *counts.entry(w).or_default() += 1;
                }
            }
            let m = counts.into_iter().map(|(w, c)| (w.to_string(), c)).collect();
            Ok(if task == Task::Sort { AnalyticsResult::sorted(m) } else { AnalyticsResult::WordCount(m) })
        }
        _ => oracle::run(task, params, &oracle::tokenize_files(texts, tok)),
    }
}

/// Artifacts written to the work directory.
struct Prepared {
    raw: Vec<PathBuf>,
    gz: Vec<PathBuf>,
    tdoc: PathBuf,
    partitions: usize,
    tokens: u64,
    sizes: SizeReport,
}

fn prepare(inputs: &[(String, String)], work: &Path, cfg: &BenchConfig) -> Result<Prepared, Error> {
    fs::create_dir_all(work)?;
    let (dict, enc) = encode_corpus(inputs, cfg.tokenizer)?;
    let tokens = enc.total_tokens();
    let encoded_deflate_bytes = deflate_size(&encoded_stream_bytes(&dict, &enc.symbols));
    let container: Container = scheduler::compress_encoded(dict, &enc, cfg.compress_workers)?;
    let grammar = write_container(&container, OuterLayer::None)?;
    let packed = write_container(&container, OuterLayer::Deflate)?;
    let tdoc = work.join("corpus.tdoc");
    fs::write(&tdoc, &packed)?;

    let mut raw = Vec::with_capacity(inputs.len());
    let mut gz = Vec::with_capacity(inputs.len());
    let mut all = Vec::new();
    let mut gzip_bytes = 0;
    for (i, (_, text)) in inputs.iter().enumerate() {
        let r = work.join(format!("raw-{i}.txt"));
        fs::write(&r, text)?;
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(text.as_bytes())?;
        let bytes = enc.finish()?;
        gzip_bytes += bytes.len() as u64;
        let g = work.join(format!("raw-{i}.txt.gz"));
        fs::write(&g, bytes)?;
        raw.push(r);
        gz.push(g);
        all.extend_from_slice(text.as_bytes());
    }
    let raw_bytes = all.len() as u64;
    let deflate_bytes = deflate_size(&all);
    let (grammar_bytes, container_bytes) = (grammar.len() as u64, packed.len() as u64);
    Ok(Prepared {
        raw,
        gz,
        tdoc,
        partitions: container.partitions.len(),
        tokens,
        sizes: SizeReport {
            raw_bytes,
            grammar_bytes,
            container_bytes,
            deflate_bytes,
            encoded_deflate_bytes,
            gzip_bytes,
            grammar_ratio: ratio(raw_bytes, grammar_bytes),
            container_ratio: ratio(raw_bytes, container_bytes),
            deflate_ratio: ratio(raw_bytes, deflate_bytes),
            encoded_deflate_ratio: ratio(raw_bytes, encoded_deflate_bytes),
            gzip_ratio: ratio(raw_bytes, gzip_bytes),
        },
    })
}

fn run_cd(p: &Prepared, cfg: &BenchConfig) -> Result<(Phases, u64, AnalyticsResult), Error> {
    let t0 = Instant::now();
    let bytes = fs::read(&p.tdoc)?;
    let t1 = Instant::now();
    let container = read_container(&bytes)?;
    let dags = scheduler::load_dags(&container, cfg.workers, cfg.coarsen.threshold_for(cfg.task))?;
    let t2 = Instant::now();
    let opts = ExecOptions {
        workers: cfg.workers,
        variant: cfg.variant,
        coarsen: cfg.coarsen,
        params: cfg.params,
        ..Default::default()
    };
    let r = scheduler::run_parallel(&container, &dags, cfg.task, &opts)?;
    let t3 = Instant::now();
    let memory = dags.iter().map(|d| d.heap_bytes() as u64).sum();
    Ok((Phases::new(t1 - t0, t2 - t1, t3 - t2), memory, r))
}

fn run_text(p: &Prepared, cfg: &BenchConfig, gzip: bool) -> Result<(Phases, u64, AnalyticsResult), Error> {
    let t0 = Instant::now();
    let paths = if gzip { &p.gz } else { &p.raw };
    let blobs: Vec<Vec<u8>> = paths.iter().map(fs::read).collect::<Result<_, _>>()?;
    let t1 = Instant::now();
    let texts: Vec<String> = blobs
        .into_iter()
        .map(|b| {
            let b = if gzip {
                let mut out = Vec::new();
                GzDecoder::new(&b[..]).read_to_end(&mut out)?;
                out
            } else {
                b
            };
            String::from_utf8(b).map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        })
        .collect::<Result<_, _>>()?;
    let t2 = Instant::now();
    let r = baseline_compute(cfg.task, cfg.params, &texts, cfg.tokenizer)?;
    let t3 = Instant::now();
    let memory = texts.iter().map(|t| t.len() as u64).sum();
    Ok((Phases::new(t1 - t0, t2 - t1, t3 - t2), memory, r))
}

/// Benchmarks every configured engine on an in-memory corpus, writing the
/// artifacts each engine reads into `work`.
///
/// Fails if two engines disagree on the result.
pub fn run_bench(inputs: &[(String, String)], work: &Path, cfg: &BenchConfig) -> Result<BenchReport, Error> {
    if cfg.repeat == 0 {
        return Err(Error::Parameter("repeat must be at least 1".into()));
    }
    let p = prepare(inputs, work, cfg)?;
    let mut engines = Vec::new();
    let mut reference: Option<AnalyticsResult> = None;
    for &engine in &cfg.engines {
        let mut runs = Vec::with_capacity(cfg.repeat);
        let mut memory = 0;
        for _ in 0..cfg.repeat {
            let (phases, mem, r) = match engine {
                Engine::Cd => run_cd(&p, cfg)?,
                Engine::Baseline => run_text(&p, cfg, false)?,
                Engine::Gzip => run_text(&p, cfg, true)?,
            };
            match &reference {
                None => reference = Some(r),
                Some(x) if *x != r => {
                    return Err(Error::Worker(format!(
                        "engine {} disagrees with {}",
                        engine.name(),
                        cfg.engines[0].name()
                    )))
                }
                Some(_) => {}
            }
            memory = mem;
            runs.push(phases);
        }
        engines.push(EngineReport { engine, median: median_phases(&runs), runs, memory_bytes: memory });
    }

    let med = |e: Engine| engines.iter().find(|r| r.engine == e).map(|r| r.median);
    let speed = |a: Option<Phases>, f: fn(&Phases) -> f64| {
        let cd = med(Engine::Cd)?;
        Some(f(&a?) / f(&cd))
    };
    let speedups = Speedups {
        compute_vs_baseline: speed(med(Engine::Baseline), |p| p.compute),
        total_vs_baseline: speed(med(Engine::Baseline), |p| p.total),
        compute_vs_gzip: speed(med(Engine::Gzip), |p| p.compute),
        total_vs_gzip: speed(med(Engine::Gzip), |p| p.total),
    };
    Ok(BenchReport {
        schema_version: SCHEMA_VERSION,
        task: cfg.task,
        files: inputs.len(),
        tokens: p.tokens,
        partitions: p.partitions,
        sizes: p.sizes,
        engines,
        speedups,
    })
}
