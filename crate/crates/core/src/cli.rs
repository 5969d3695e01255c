//! The `tvr` command line.
//!
//! Every subcommand writes tab-separated `key:value` records to stdout and
//! diagnostics to stderr. Exit status is 0 on success, 1 for usage and
//! configuration errors, 2 for data, format and I/O errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::ThreadPool;

use crate::datagen::{gen_corpus, Corpus, CorpusConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::index::{
    bench_interleaved, build_index, flop_count, load_shard, load_tokens, query_topk_with, save_shard, save_tokens,
    FlopParams, IndexShard, Manifest, QueryOptions,
};
use crate::interaction::{Mechanism, Path, Scorer, ScorerConfig, TiForm};
use crate::losses::{CdcrMode, LossConfig, WtiModel};
use crate::numerics::{Modality, RngSeed, TokenMatrix};
use crate::train::{adapt_all, metrics_line, train_heads, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "tvr", version, about = "Late-interaction text-video retrieval toolkit")]
struct Cli {
    /// Base directory for relative paths.
    #[arg(long, env = "TVR_DATA_DIR", global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus as two DRLE files.
    ///
    /// Output: `command:gen videos:<path> queries:<path> docs dim seed`.
    Gen(GenArgs),
    /// Score every query against every video.
    ///
    /// Output: one `query video score` record per pair.
    Score(ScoreArgs),
    /// Build a shard from a video file.
    ///
    /// Output: `command:index out docs dim weights`.
    Index(IndexArgs),
    /// Top-k retrieval against a saved shard.
    ///
    /// Output per query: k `query rank doc score` records, then
    /// `query rank_of_truth`.
    Query(QueryArgs),
    /// Time full scans per mechanism.
    ///
    /// Output per mechanism: `mechanism docs queries reps median_scan_ms
    /// docs_per_sec p50_ms p95_ms flops model_ratio_to_dp`.
    Bench(BenchArgs),
    /// Evaluate the cost model.
    ///
    /// Output: `mechanism flops per_layer_flops memory_units n d nt nv l s`,
    /// or with --ratio-to, `mechanism to ratio`.
    Flops(FlopsArgs),
    /// Train the weight heads and report losses and held-out metrics.
    ///
    /// Output: `record:step`, `record:final` and `record:held_out` lines.
    Train(TrainArgs),
    /// Retrieval metrics of a shard for labeled queries (query id = doc id).
    ///
    /// Output per mechanism: `mechanism queries r@1 r@5 r@10 mdr mnr`.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct CorpusArgs {
    /// Start from a named configuration: `default` or `demo`.
    #[arg(long)]
    preset: Option<String>,
    /// Number of videos (and queries) [default: 1000].
    #[arg(long)]
    docs: Option<usize>,
    /// Scenes per video, `n` or `min..max` [default: 3].
    #[arg(long)]
    scenes: Option<String>,
    /// Tokens per scene [default: 4].
    #[arg(long)]
    tokens_per_scene: Option<usize>,
    /// Padded text length [default: 32].
    #[arg(long)]
    nt: Option<usize>,
    /// Padded video length [default: 12].
    #[arg(long)]
    nv: Option<usize>,
    /// Embedding width [default: 512].
    #[arg(long)]
    d: Option<usize>,
    /// Expected noise norm per token [default: 0.5].
    #[arg(long)]
    noise: Option<f64>,
    /// Probability that a scene reuses an earlier video's latent [default: 0].
    #[arg(long)]
    overlap: Option<f64>,
    /// Valid query tokens, `n` or `min..max` [default: 8..16].
    #[arg(long)]
    query_len: Option<String>,
    /// Probability of a filler query token [default: 0].
    #[arg(long)]
    filler: Option<f64>,
    /// Dimensions of the shared nuisance subspace [default: 0].
    #[arg(long)]
    nuisance_dims: Option<usize>,
    /// Std-dev along each nuisance direction [default: 0].
    #[arg(long)]
    nuisance_sigma: Option<f64>,
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad range {s:?}")));
    match s.split_once("..") {
        Some((a, b)) => Ok((num(a)?, num(b.trim_start_matches('='))?)),
        None => {
            let n = num(s)?;
            Ok((n, n))
        }
    }
}

impl CorpusArgs {
    fn config(&self, seed: u64) -> Result<CorpusConfig> {
        let mut c = match self.preset.as_deref() {
            None | Some("default") => CorpusConfig::default(),
            Some("demo") => CorpusConfig::training_demo(),
            Some(other) => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        c.seed = seed;
        if let Some(v) = self.docs {
            c.num_docs = v;
        }
        if let Some(v) = &self.scenes {
            c.scenes_per_doc = parse_range(v)?;
        }
        if let Some(v) = self.tokens_per_scene {
            c.tokens_per_scene = v;
        }
        if let Some(v) = self.nt {
            c.text_tokens = v;
        }
        if let Some(v) = self.nv {
            c.video_tokens = v;
        }
        if let Some(v) = self.d {
            c.dim = v;
        }
        if let Some(v) = self.noise {
            c.noise_sigma = v;
        }
        if let Some(v) = self.overlap {
            c.distractor_overlap = v;
        }
        if let Some(v) = &self.query_len {
            c.query_len = parse_range(v)?;
        }
        if let Some(v) = self.filler {
            c.filler_fraction = v;
        }
        if let Some(v) = self.nuisance_dims {
            c.nuisance_dims = v;
        }
        if let Some(v) = self.nuisance_sigma {
            c.nuisance_sigma = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output DRLE file for videos.
    #[arg(long)]
    videos: PathBuf,
    /// Output DRLE file for queries.
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
}

#[derive(Args, Debug, Clone)]
struct ScorerArgs {
    /// Layers of the MLP scorer and the cross transformer.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Feature levels of the hierarchical scorer.
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// TI aggregation: `mean` or `sum`.
    #[arg(long, default_value = "mean")]
    ti_form: TiForm,
    /// Scoring directions: `t2v`, `v2t` or `both`.
    #[arg(long, default_value = "both")]
    path: Path,
    /// Seed for randomly initialized scorer parameters.
    #[arg(long, default_value_t = 0)]
    param_seed: u64,
    /// Trained model (JSON); supplies the WTI heads and token adapters.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    videos: PathBuf,
    #[arg(long, short = 'm', default_value = "wti")]
    mechanism: Mechanism,
    /// Only the first N queries and videos.
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    videos: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    shard: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, short = 'm', default_value = "wti")]
    mechanism: Mechanism,
    #[arg(long, short = 'k', default_value_t = 10)]
    k: usize,
    /// Only the first N queries.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    shard: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, short = 'm', value_delimiter = ',', default_value = "dp,ti,wti")]
    mechanism: Vec<Mechanism>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Saved shard; without it a synthetic corpus is generated.
    #[arg(long, requires = "queries")]
    shard: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, short = 'm', value_delimiter = ',', default_value = "dp,ti,wti,xti")]
    mechanism: Vec<Mechanism>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Number of queries timed per repetition.
    #[arg(long, default_value_t = 4)]
    query_count: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Seed of the synthetic corpus.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Args, Debug)]
struct FlopsArgs {
    #[arg(long, short = 'm', value_delimiter = ',', default_value = "dp,hi,mlp,xti,ti,wti")]
    mechanism: Vec<Mechanism>,
    #[arg(long, default_value_t = 1)]
    n: u64,
    #[arg(long, default_value_t = 512)]
    d: u64,
    #[arg(long, default_value_t = 32)]
    nt: u64,
    #[arg(long, default_value_t = 12)]
    nv: u64,
    #[arg(long, default_value_t = 4)]
    l: u64,
    #[arg(long, default_value_t = 3)]
    s: u64,
    /// Print the cost ratio against this mechanism.
    #[arg(long)]
    ratio_to: Option<Mechanism>,
    /// Use per-layer costs (drops the cross transformer's layer factor).
    #[arg(long)]
    per_layer: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus seed [default: --seed].
    #[arg(long)]
    corpus_seed: Option<u64>,
    /// Train on saved queries/videos instead of a generated corpus.
    #[arg(long, requires = "queries")]
    videos: Option<PathBuf>,
    #[arg(long, requires = "videos")]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.05)]
    step_size: f64,
    #[arg(long, default_value_t = 100.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.06)]
    alpha: f64,
    #[arg(long, default_value_t = 0.001)]
    lambda: f64,
    /// `none`, `single` or `sequential`.
    #[arg(long, default_value = "sequential")]
    cdcr: CdcrMode,
    /// Hidden width of the weight heads [default: ceil(D/2)].
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Train the weight heads only.
    #[arg(long)]
    no_adapters: bool,
    #[arg(long, default_value_t = 0.2)]
    validation: f64,
    /// Write the trained model as JSON.
    #[arg(long)]
    save_model: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
}

struct Ctx {
    data_dir: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, p: &FsPath) -> PathBuf {
        match &self.data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let ctx = Ctx { data_dir: cli.data_dir };
    let mut buf = Vec::new();
    let result = match &cli.command {
        Command::Gen(a) => gen(&ctx, a, &mut buf),
        Command::Score(a) => score(&ctx, a, &mut buf),
        Command::Index(a) => index(&ctx, a, &mut buf),
        Command::Query(a) => query(&ctx, a, &mut buf),
        Command::Bench(a) => bench(&ctx, a, &mut buf),
        Command::Flops(a) => flops(a, &mut buf),
        Command::Train(a) => train(&ctx, a, &mut buf),
        Command::Eval(a) => eval(&ctx, a, &mut buf),
    };
    if let Err(e) = out.write_all(&buf).and_then(|_| out.flush()) {
        let _ = writeln!(err, "error: {e}");
        return 2;
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn pool(threads: usize) -> Result<Option<ThreadPool>> {
    match threads {
        0 => Err(Error::Config("--threads must be at least 1".into())),
        1 => Ok(None),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(Some)
            .map_err(|e| Error::Config(format!("thread pool: {e}"))),
    }
}

fn load_model(ctx: &Ctx, a: &ScorerArgs) -> Result<Option<WtiModel>> {
    let Some(p) = &a.model else { return Ok(None) };
    let text = std::fs::read_to_string(ctx.path(p))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Format(format!("model {}: {e}", p.display())))
}

fn scorer_for(m: Mechanism, dim: usize, a: &ScorerArgs, model: Option<&WtiModel>) -> Result<Scorer> {
    if let (Mechanism::Wti, Some(model)) = (m, model) {
        return Ok(Scorer::Wti { text: model.text_head.clone(), video: model.video_head.clone(), path: a.path });
    }
    let cfg = ScorerConfig { layers: a.layers, levels: a.levels, ti_form: a.ti_form, path: a.path, ..ScorerConfig::new(dim) };
    Scorer::build(m, &cfg, RngSeed(a.param_seed))
}

fn maybe_adapt(model: Option<&WtiModel>, items: Vec<TokenMatrix>) -> Result<Vec<TokenMatrix>> {
    match model {
        Some(m) if m.has_adapters() => adapt_all(m, &items),
        _ => Ok(items),
    }
}

fn limited(mut items: Vec<TokenMatrix>, limit: Option<usize>) -> Vec<TokenMatrix> {
    if let Some(n) = limit {
        items.truncate(n);
    }
    items
}

fn corpus_manifest(kind: &str, cfg: &CorpusConfig) -> Result<Manifest> {
    let mut m = Manifest::new();
    m.set("kind", kind)
        .set("format", "DRLE")
        .set("seed", cfg.seed)
        .set("truth", "query id = target video id")
        .set("generator", serde_json::to_string(cfg).map_err(|e| Error::Format(e.to_string()))?);
    Ok(m)
}

fn gen(ctx: &Ctx, a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.corpus.config(a.seed)?;
    let c = gen_corpus(&cfg)?;
    let (vp, qp) = (ctx.path(&a.videos), ctx.path(&a.queries));
    save_tokens(&c.videos, &vp, &corpus_manifest("videos", &cfg)?)?;
    save_tokens(&c.queries, &qp, &corpus_manifest("queries", &cfg)?)?;
    writeln!(
        out,
        "command:gen\tvideos:{}\tqueries:{}\tdocs:{}\tdim:{}\tseed:{}",
        a.videos.display(),
        a.queries.display(),
        cfg.num_docs,
        cfg.dim,
        cfg.seed
    )?;
    Ok(())
}

fn score(ctx: &Ctx, a: &ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(ctx, &a.scorer)?;
    let qs = limited(load_tokens(&ctx.path(&a.queries), Modality::Text)?, a.limit);
    let vs = limited(load_tokens(&ctx.path(&a.videos), Modality::Video)?, a.limit);
    let (qs, vs) = (maybe_adapt(model.as_ref(), qs)?, maybe_adapt(model.as_ref(), vs)?);
    let dim = vs.first().or(qs.first()).map_or(0, TokenMatrix::dim);
    let scorer = scorer_for(a.mechanism, dim, &a.scorer, model.as_ref())?;
    let s = scorer.score_batch(&qs, &vs)?;
    for (i, q) in qs.iter().enumerate() {
        for (j, v) in vs.iter().enumerate() {
            writeln!(out, "query:{}\tvideo:{}\tscore:{:.9}", q.id, v.id, s.scores[(i, j)])?;
        }
    }
    Ok(())
}

fn index(ctx: &Ctx, a: &IndexArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(ctx, &a.scorer)?;
    let vs = maybe_adapt(model.as_ref(), load_tokens(&ctx.path(&a.videos), Modality::Video)?)?;
    let dim = vs.first().map_or(0, TokenMatrix::dim);
    let wti = scorer_for(Mechanism::Wti, dim, &a.scorer, model.as_ref())?;
    let shard = build_index(&vs, wti.video_head())?;
    let mut extra = Manifest::new();
    extra.set("source", a.videos.display()).set("param_seed", a.scorer.param_seed);
    if let Some(m) = &a.scorer.model {
        extra.set("model", m.display());
    }
    save_shard(&shard, &ctx.path(&a.out), &extra)?;
    writeln!(
        out,
        "command:index\tout:{}\tdocs:{}\tdim:{}\tweights:{}",
        a.out.display(),
        shard.len(),
        shard.dim(),
        shard.has_weights()
    )?;
    Ok(())
}

fn query(ctx: &Ctx, a: &QueryArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(ctx, &a.scorer)?;
    let shard = load_shard(&ctx.path(&a.shard))?;
    let qs = maybe_adapt(model.as_ref(), limited(load_tokens(&ctx.path(&a.queries), Modality::Text)?, a.limit))?;
    let scorer = scorer_for(a.mechanism, shard.dim(), &a.scorer, model.as_ref())?;
    let pool = pool(a.threads)?;
    for q in &qs {
        let opts = QueryOptions { truth: Some(q.id), pool: pool.as_ref() };
        let r = query_topk_with(q, &shard, a.k, &scorer, opts)?;
        for (rank, h) in r.hits.iter().enumerate() {
            writeln!(out, "query:{}\trank:{}\tdoc:{}\tscore:{:.9}", r.query_id, rank + 1, h.id, h.score)?;
        }
        match r.rank_of_truth {
            Some(t) => writeln!(out, "query:{}\trank_of_truth:{t}", r.query_id)?,
            None => writeln!(out, "query:{}\trank_of_truth:none", r.query_id)?,
        }
    }
    Ok(())
}

fn eval(ctx: &Ctx, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(ctx, &a.scorer)?;
    let shard = load_shard(&ctx.path(&a.shard))?;
    let qs = maybe_adapt(model.as_ref(), load_tokens(&ctx.path(&a.queries), Modality::Text)?)?;
    let pool = pool(a.threads)?;
    for &m in &a.mechanism {
        let scorer = scorer_for(m, shard.dim(), &a.scorer, model.as_ref())?;
        let results = qs
            .iter()
            .map(|q| query_topk_with(q, &shard, 10, &scorer, QueryOptions { truth: Some(q.id), pool: pool.as_ref() }))
            .collect::<Result<Vec<_>>>()?;
        let metrics = evaluate(&results)?;
        writeln!(out, "{}", metrics_line(&format!("mechanism:{m}\tqueries:{}", qs.len()), &metrics))?;
    }
    Ok(())
}

fn bench(ctx: &Ctx, a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(ctx, &a.scorer)?;
    let (shard, queries): (IndexShard, Vec<TokenMatrix>) = match (&a.shard, &a.queries) {
        (Some(s), Some(q)) => {
            let shard = load_shard(&ctx.path(s))?;
            let qs = maybe_adapt(model.as_ref(), load_tokens(&ctx.path(q), Modality::Text)?)?;
            (shard, qs)
        }
        _ => {
            let Corpus { videos, queries, .. } = gen_corpus(&a.corpus.config(a.seed)?)?;
            let dim = videos[0].dim();
            let wti = scorer_for(Mechanism::Wti, dim, &a.scorer, model.as_ref())?;
            (build_index(&maybe_adapt(model.as_ref(), videos)?, wti.video_head())?, maybe_adapt(model.as_ref(), queries)?)
        }
    };
    let queries = limited(queries, Some(a.query_count));
    let scorers =
        a.mechanism.iter().map(|&m| scorer_for(m, shard.dim(), &a.scorer, model.as_ref())).collect::<Result<Vec<_>>>()?;
    let pool = pool(a.threads)?;
    let reports = bench_interleaved(&shard, &queries, &scorers, a.reps, pool.as_ref())?;
    let dp_flops = flop_count(Mechanism::Dp, reports[0].flops.params);
    for r in &reports {
        writeln!(
            out,
            "mechanism:{}\tdocs:{}\tqueries:{}\treps:{}\tmedian_scan_ms:{:.3}\tdocs_per_sec:{:.0}\tp50_ms:{:.3}\tp95_ms:{:.3}\tflops:{}\tmodel_ratio_to_dp:{}",
            r.mechanism,
            r.docs,
            r.queries,
            r.repetitions,
            r.median_scan_secs * 1e3,
            r.docs_per_sec,
            r.p50_latency_secs * 1e3,
            r.p95_latency_secs * 1e3,
            r.flops.flops,
            format_ratio(r.flops.flops, dp_flops.flops)
        )?;
    }
    Ok(())
}

/// Exact quotients print as integers, others with two decimals.
pub fn format_ratio(num: u128, den: u128) -> String {
    if den == 0 {
        "inf".into()
    } else if num.is_multiple_of(den) {
        (num / den).to_string()
    } else {
        format!("{:.2}", num as f64 / den as f64)
    }
}

fn flops(a: &FlopsArgs, out: &mut dyn Write) -> Result<()> {
    let p = FlopParams { n: a.n, d: a.d, nt: a.nt, nv: a.nv, l: a.l, s: a.s };
    if [p.n, p.d, p.nt, p.nv, p.l, p.s].contains(&0) {
        return Err(Error::Config("cost-model parameters must be positive".into()));
    }
    for &m in &a.mechanism {
        let r = flop_count(m, p);
        match a.ratio_to {
            Some(base) => {
                let b = flop_count(base, p);
                let (x, y) = if a.per_layer { (r.per_layer_flops, b.per_layer_flops) } else { (r.flops, b.flops) };
                writeln!(out, "mechanism:{m}\tto:{base}\tratio:{}", format_ratio(x, y))?;
            }
            None => writeln!(
                out,
                "mechanism:{m}\tflops:{}\tper_layer_flops:{}\tmemory_units:{}\tn:{}\td:{}\tnt:{}\tnv:{}\tl:{}\ts:{}",
                r.flops, r.per_layer_flops, r.memory_units, p.n, p.d, p.nt, p.nv, p.l, p.s
            )?,
        }
    }
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = match (&a.videos, &a.queries) {
        (Some(v), Some(q)) => {
            let videos = load_tokens(&ctx.path(v), Modality::Video)?;
            let queries = load_tokens(&ctx.path(q), Modality::Text)?;
            let truth = queries.iter().map(|q| (q.id, q.id)).collect();
            Corpus { videos, queries, truth, scene_latents: vec![], query_scene: vec![] }
        }
        _ => gen_corpus(&a.corpus.config(a.corpus_seed.unwrap_or(a.seed))?)?,
    };
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        step_size: a.step_size,
        loss: LossConfig { logit_scale: a.scale, alpha: a.alpha, lambda: a.lambda, cdcr_mode: a.cdcr },
        seed: a.seed,
        head_hidden: a.hidden,
        head_depth: a.depth,
        adapters: !a.no_adapters,
        validation_fraction: a.validation,
    };
    let report = train_heads(&corpus, &cfg)?;
    out.write_all(report.to_lines().as_bytes())?;
    if let Some(p) = &a.save_model {
        let json = serde_json::to_string_pretty(&report.model).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(ctx.path(p), json)?;
    }
    Ok(())
}
