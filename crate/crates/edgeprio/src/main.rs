use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use edgeprio::agent::{self, AgentConfig, RetryPolicy};
use edgeprio::bench::{self, BenchSpec, WorkloadSource, TABLE_KEYS};
use edgeprio::config::{self, FileConfig};
use edgeprio::formats::{self, KnotRow, MetricsRow, SummaryRow};
use edgeprio::gateway::{self, GatewayConfig, DEFAULT_MAX_BODY};
use edgeprio::manifest::{self, load_manifest};
use edgeprio::operator::{process_file, FillSettings};
use edgeprio_core::seed::derive;
use edgeprio_core::sim::{run, SimConfig};
use edgeprio_core::workload::{generate, ProfileSpec, Workload};
use edgeprio_core::BoxSummary;

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "edgeprio",
    version,
    about = "Message-size-aware scheduling of edge stream processing"
)]
struct Cli {
    /// Base seed for workloads and policies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write its artifacts.
    Simulate(SimulateArgs),
    /// Run a set of named configurations over paired seeds.
    Bench(BenchArgs),
    /// Generate a synthetic workload manifest.
    GenWorkload(WorkloadArgs),
    /// Watch a directory, process and upload new images.
    Agent(AgentArgs),
    /// Receive and store uploaded documents.
    Gateway(GatewayArgs),
    /// Turn simulation artifacts into plot-ready CSVs.
    Export(ExportArgs),
    /// Apply the image operator to one PNG file.
    Fill(FillArgs),
}

#[derive(Args, Clone, Default)]
struct WorkloadArgs {
    /// Replay a measured manifest instead of generating a workload.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of generated documents.
    #[arg(long)]
    n_docs: Option<usize>,
    /// Seconds between generated arrivals.
    #[arg(long)]
    arrival_period: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct LinkArgs {
    /// Concurrent uploads (N).
    #[arg(long)]
    uploads: Option<usize>,
    /// Upload capacity in megabits per second.
    #[arg(long)]
    link_mbps: Option<f64>,
    /// Seconds between claiming an upload slot and the first byte.
    #[arg(long)]
    upload_overhead: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    link: LinkArgs,
    /// Processing slots (M).
    #[arg(long)]
    cpus: Option<usize>,
    /// splines, splines:K, random, fifo or none.
    #[arg(long)]
    process_policy: Option<String>,
    /// inverse, fifo or random.
    #[arg(long)]
    upload_policy: Option<String>,
    /// Upload processed sizes without edge processing.
    #[arg(long)]
    offline: bool,
    /// Repeats; artifacts other than metrics come from the first.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    link: LinkArgs,
    /// Configuration key such as `1,s`; repeat the flag. Defaults to the full table.
    #[arg(long = "key")]
    keys: Vec<String>,
    /// Paired seeds per configuration [default: 5].
    #[arg(long)]
    repeats: Option<usize>,
    /// Also write every run's trace.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct AgentArgs {
    /// Directory to watch for new images.
    #[arg(long)]
    watch: Option<PathBuf>,
    /// Gateway base URL, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    gateway: Option<String>,
    /// Stream name used in gateway paths.
    #[arg(long)]
    stream_id: Option<String>,
    /// Operator workers (M).
    #[arg(long)]
    process_workers: Option<usize>,
    /// Concurrent uploads (N).
    #[arg(long)]
    upload_workers: Option<usize>,
    /// splines, splines:K, random, fifo or none.
    #[arg(long)]
    process_policy: Option<String>,
    /// inverse, fifo or random.
    #[arg(long)]
    upload_policy: Option<String>,
    /// Session trace CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Directory poll interval in milliseconds.
    #[arg(long)]
    poll_ms: Option<u64>,
    /// Fill threshold, inclusive.
    #[arg(long)]
    threshold: Option<u8>,
    /// 4 or 8.
    #[arg(long)]
    connectivity: Option<u8>,
    /// Directory for processed files, outside the watch directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Stop watching after this many documents.
    #[arg(long)]
    max_docs: Option<usize>,
    /// Exit after this many idle seconds with everything uploaded.
    #[arg(long)]
    idle_exit: Option<f64>,
    /// Pace each transfer to this many bytes per second.
    #[arg(long)]
    upload_rate: Option<f64>,
    /// Upload attempts before giving up.
    #[arg(long)]
    retry_attempts: Option<u32>,
    /// First retry delay, doubled per attempt.
    #[arg(long)]
    retry_backoff_ms: Option<u64>,
}

#[derive(Args)]
struct GatewayArgs {
    /// Address to listen on, e.g. 0.0.0.0:8080.
    #[arg(long)]
    listen: Option<String>,
    /// Storage root. Defaults to <out>/storage.
    #[arg(long)]
    storage: Option<PathBuf>,
    /// Largest accepted body in bytes.
    #[arg(long)]
    max_body: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory written by `simulate`. Defaults to --out.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Also write a gnuplot script.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct FillArgs {
    /// PNG to read.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the filled PNG.
    #[arg(long)]
    output: PathBuf,
    /// Fill threshold, inclusive.
    #[arg(long)]
    threshold: Option<u8>,
    /// 4 or 8.
    #[arg(long)]
    connectivity: Option<u8>,
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    file: FileConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => config::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| "out".into()),
        file,
    };
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
        Command::GenWorkload(a) => gen_workload(&ctx, a),
        Command::Agent(a) => agent_cmd(&ctx, a),
        Command::Gateway(a) => gateway_cmd(&ctx, a),
        Command::Export(a) => export(&ctx, a),
        Command::Fill(a) => fill(&ctx, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let f = File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()).into())
}

fn profile(ctx: &Ctx, a: &WorkloadArgs) -> ProfileSpec {
    let mut spec = ctx.file.workload.apply(ProfileSpec::reference(ctx.seed));
    if let Some(n) = a.n_docs {
        spec.n_docs = n;
    }
    if let Some(p) = a.arrival_period {
        spec.arrival.period = p;
    }
    spec
}

fn manifest_path(ctx: &Ctx, a: &WorkloadArgs) -> Option<PathBuf> {
    a.manifest
        .clone()
        .or_else(|| ctx.file.workload.manifest.clone())
}

fn base_sim(ctx: &Ctx, link: &LinkArgs) -> Result<SimConfig> {
    let mut cfg = ctx.file.sim.apply(SimConfig::default())?;
    cfg.seed = ctx.seed;
    if let Some(n) = link.uploads {
        cfg.max_concurrent_uploads = n;
    }
    if let Some(m) = link.link_mbps {
        cfg.link_capacity_bps = m * 1e6;
    }
    if let Some(o) = link.upload_overhead {
        cfg.upload_overhead = o;
    }
    Ok(cfg)
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let mut cfg = base_sim(ctx, &a.link)?;
    if let Some(m) = a.cpus {
        cfg.num_cpu_slots = m;
    }
    if let Some(p) = &a.process_policy {
        cfg.process_policy = config::parse_process(p, "--process-policy")?;
    }
    if let Some(p) = &a.upload_policy {
        cfg.upload_policy = config::parse_upload(p, "--upload-policy")?;
    }
    cfg.offline_preprocessed = a.offline;
    cfg.validate()?;
    if a.repeats == 0 {
        return Err("--repeats must be positive".into());
    }

    let manifest = manifest_path(ctx, &a.workload);
    let spec = profile(ctx, &a.workload);
    let workload_for = |r: usize| -> Result<Workload> {
        Ok(match &manifest {
            Some(p) => load_manifest(p)?,
            None => generate(&spec.clone().with_seed(derive(ctx.seed, r as u64)))?,
        })
    };

    let mut rows = Vec::with_capacity(a.repeats);
    for r in 0..a.repeats {
        let workload = workload_for(r)?;
        let seed = derive(ctx.seed, r as u64);
        let out = run(&SimConfig { seed, ..cfg }, &workload)?;
        rows.push(MetricsRow {
            config: "simulate".into(),
            repeat: r,
            seed,
            end_to_end_latency: out.metrics.end_to_end_latency,
            bytes_uploaded_total: out.metrics.bytes_uploaded_total,
            bytes_saved_total: out.metrics.bytes_saved_total,
            docs_processed_at_edge: out.metrics.docs_processed_at_edge,
        });
        if r == 0 {
            manifest::write_workload(create(&ctx.out.join("workload.csv"))?, &workload, None)?;
            formats::write_trace(create(&ctx.out.join("trace.csv"))?, &out.trace)?;
            formats::write_rows(
                create(&ctx.out.join("spline_knots.csv"))?,
                &formats::spline_knots(&out.spline),
            )?;
            formats::write_rows(
                create(&ctx.out.join("spline_estimates.csv"))?,
                &formats::spline_estimates(&out.spline, workload.len()),
            )?;
            println!(
                "latency {:.3} s, {} of {} documents processed at the edge, {} bytes saved",
                out.metrics.end_to_end_latency,
                out.metrics.docs_processed_at_edge,
                workload.len(),
                out.metrics.bytes_saved_total
            );
        }
    }
    formats::write_rows(create(&ctx.out.join("metrics.csv"))?, &rows)?;
    if a.repeats > 1 {
        let lat: Vec<f64> = rows.iter().map(|r| r.end_to_end_latency).collect();
        let s = BoxSummary::from_samples(&lat).expect("repeats > 0");
        formats::write_rows(
            create(&ctx.out.join("summary.csv"))?,
            &[SummaryRow::new("simulate", &s)],
        )?;
        println!(
            "over {} repeats: min {:.3} q1 {:.3} median {:.3} q3 {:.3} max {:.3}",
            a.repeats, s.min, s.q1, s.median, s.q3, s.max
        );
    }
    println!("artifacts written to {}", ctx.out.display());
    Ok(())
}

fn bench_cmd(ctx: &Ctx, a: BenchArgs) -> Result<()> {
    let source = match manifest_path(ctx, &a.workload) {
        Some(p) => WorkloadSource::Fixed(load_manifest(p)?),
        None => WorkloadSource::Generated(profile(ctx, &a.workload)),
    };
    let configs = if !a.keys.is_empty() {
        a.keys.clone()
    } else if let Some(c) = &ctx.file.bench.configs {
        c.clone()
    } else {
        TABLE_KEYS.iter().map(|k| (*k).to_owned()).collect()
    };
    let spec = BenchSpec {
        workload: source,
        configs,
        repeats: a.repeats.or(ctx.file.bench.repeats).unwrap_or(5),
        seed: ctx.seed,
        base: base_sim(ctx, &a.link)?,
        keep_traces: a.traces || ctx.file.bench.traces.unwrap_or(false),
    };
    let result = bench::run_bench(&spec)?;
    formats::write_rows(create(&ctx.out.join("runs.csv"))?, &result.metrics_rows())?;
    formats::write_rows(
        create(&ctx.out.join("summary.csv"))?,
        &result.summary_rows(),
    )?;
    let table = result.table();
    create(&ctx.out.join("summary.txt"))?.write_all(table.as_bytes())?;
    for r in result.runs.iter().filter(|r| r.trace.is_some()) {
        let name = format!("{}_{}.csv", r.config.replace(',', "_"), r.repeat);
        formats::write_trace(
            create(&ctx.out.join("traces").join(name))?,
            r.trace.as_deref().unwrap_or(&[]),
        )?;
    }
    print!("{table}");
    println!("artifacts written to {}", ctx.out.display());
    Ok(())
}

fn gen_workload(ctx: &Ctx, a: WorkloadArgs) -> Result<()> {
    let w = generate(&profile(ctx, &a))?;
    let path = ctx.out.join("workload.csv");
    manifest::write_workload(create(&path)?, &w, None)?;
    println!("{} documents written to {}", w.len(), path.display());
    Ok(())
}

fn fill_settings(
    threshold: Option<u8>,
    connectivity: Option<u8>,
    file: &FileConfig,
) -> Result<FillSettings> {
    let mut s = FillSettings::default();
    if let Some(t) = threshold.or(file.operator.threshold) {
        s.threshold = t;
    }
    if let Some(c) = connectivity.or(file.operator.connectivity) {
        s.connectivity = config::parse_connectivity(c)?;
    }
    Ok(s)
}

fn agent_cmd(ctx: &Ctx, a: AgentArgs) -> Result<()> {
    let f = &ctx.file.agent;
    let watch = a
        .watch
        .or_else(|| f.watch.clone())
        .ok_or("--watch is required")?;
    let gateway = a
        .gateway
        .or_else(|| f.gateway.clone())
        .ok_or("--gateway is required")?;
    let stream_id = a
        .stream_id
        .or_else(|| f.stream_id.clone())
        .unwrap_or_else(|| "default".into());
    let mut cfg = AgentConfig::new(watch, gateway, stream_id);
    cfg.seed = ctx.seed;
    cfg.work_dir = a.work_dir.or_else(|| f.work_dir.clone());
    if let Some(m) = a.process_workers.or(f.process_workers) {
        cfg.process_workers = m;
    }
    if let Some(n) = a.upload_workers.or(f.upload_workers) {
        cfg.upload_workers = n;
    }
    if let Some(p) = a.process_policy.as_ref().or(f.process_policy.as_ref()) {
        cfg.process_policy = config::parse_process(p, "--process-policy")?;
    }
    if let Some(p) = a.upload_policy.as_ref().or(f.upload_policy.as_ref()) {
        cfg.upload_policy = config::parse_upload(p, "--upload-policy")?;
    }
    if let Some(ms) = a.poll_ms.or(f.poll_interval_ms) {
        cfg.poll_interval = Duration::from_millis(ms);
    }
    cfg.fill = fill_settings(a.threshold, a.connectivity, &ctx.file)?;
    cfg.retry = RetryPolicy {
        attempts: a.retry_attempts.or(f.retry_attempts).unwrap_or(3),
        initial_backoff: Duration::from_millis(
            a.retry_backoff_ms.or(f.retry_backoff_ms).unwrap_or(1000),
        ),
    };
    cfg.upload_rate = a.upload_rate.or(f.upload_rate);
    cfg.max_docs = a.max_docs.or(f.max_docs);
    cfg.idle_exit = a
        .idle_exit
        .or(f.idle_exit_secs)
        .map(Duration::from_secs_f64);
    let trace_out = a
        .trace_out
        .or_else(|| f.trace_out.clone())
        .unwrap_or_else(|| ctx.out.join("agent_trace.csv"));

    let stop = AtomicBool::new(false);
    let (report, error) = match agent::run(&cfg, &stop) {
        Ok(r) => (r, None),
        Err(failure) => (failure.report, Some(failure.error)),
    };
    formats::write_trace(create(&trace_out)?, &report.trace)?;
    println!(
        "{} uploaded, {} processed, {} operator failures; trace in {}",
        report.uploaded,
        report.processed,
        report.processing_failures,
        trace_out.display()
    );
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn gateway_cmd(ctx: &Ctx, a: GatewayArgs) -> Result<()> {
    let f = &ctx.file.gateway;
    let listen: SocketAddr = a
        .listen
        .or_else(|| f.listen.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".into())
        .parse()?;
    let cfg = GatewayConfig {
        listen,
        storage_dir: a
            .storage
            .or_else(|| f.storage.clone())
            .unwrap_or_else(|| ctx.out.join("storage")),
        max_body: a.max_body.or(f.max_body).unwrap_or(DEFAULT_MAX_BODY),
    };
    if cfg.max_body == 0 {
        return Err("--max-body must be positive".into());
    }
    gateway::run_blocking(&cfg)?;
    Ok(())
}

fn export(ctx: &Ctx, a: ExportArgs) -> Result<()> {
    let run_dir = a.run.unwrap_or_else(|| ctx.out.clone());
    let workload = load_manifest(run_dir.join("workload.csv"))
        .map_err(|e| format!("{}: {e}", run_dir.join("workload.csv").display()))?;
    let trace = formats::read_trace(open(&run_dir.join("trace.csv"))?)?;
    let knots: Vec<KnotRow> = formats::read_rows(open(&run_dir.join("spline_knots.csv"))?)?;
    let spline = formats::spline_from_knots(&knots)?;

    let fig5 = formats::fig5(&workload, &spline, &trace);
    let fig6 = formats::fig6(&trace)?;
    formats::write_rows(create(&ctx.out.join("fig5.csv"))?, &fig5)?;
    formats::write_rows(create(&ctx.out.join("fig6.csv"))?, &fig6)?;
    if a.gnuplot {
        create(&ctx.out.join("figures.gp"))?
            .write_all(formats::gnuplot_script("fig5.csv", "fig6.csv").as_bytes())?;
    }
    println!("fig5.csv and fig6.csv written to {}", ctx.out.display());
    Ok(())
}

fn fill(ctx: &Ctx, a: FillArgs) -> Result<()> {
    let settings = fill_settings(a.threshold, a.connectivity, &ctx.file)?;
    let r = process_file(&a.input, &a.output, settings)?;
    println!(
        "{} -> {} bytes ({:.1}% smaller) in {:.3} cpu s",
        r.original_size,
        r.processed_size,
        100.0 * (1.0 - r.processed_size as f64 / r.original_size as f64),
        r.cpu_seconds
    );
    Ok(())
}
