mod adapter;

use std::error::Error as StdError;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use adapter::AdapterSpec;
use xsal::bridge::{conformance, serve, BridgeConnection, BRIDGE_CMD_ENV};
use xsal::detector::{checked_detect, require_match, select_top_box, BBox, Detection, DetectorAdapter, MatchThresholds};
use xsal::f32t::F32Tensor;
use xsal::method::{Method, MethodKind};
use xsal::metrics::{evaluate, random_baseline, MetricConfig};
use xsal::pipeline::{
    file_digest, load_dataset, load_image, render_overlay, save_png, split_dataset, ResultsRow, ResultsTable,
    RunManifest, RunOutputs, Spectrum, DEFAULT_INPUT_SIZE,
};
use xsal::tensor::{Image, Tensor2D};

type CliResult<T = ()> = Result<T, Box<dyn StdError + Send + Sync>>;

#[derive(Parser)]
#[command(name = "xsal", version, about = "Per-box saliency maps for object detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute one saliency map and write the map, an overlay and a run manifest.
    Explain(ExplainArgs),
    /// Deletion and insertion curves for a method or a saved map.
    Evaluate(EvaluateArgs),
    /// Deletion and insertion AUCs of random pixel orderings.
    Baseline(BaselineArgs),
    /// Sweep a directory of images and print a mean±std results table.
    Batch(BatchArgs),
    /// Run the protocol conformance checks against a bridge server.
    BridgeCheck(BridgeCheckArgs),
    /// Serve an in-process adapter over stdin/stdout.
    #[command(hide = true)]
    BridgeServe(BridgeServeArgs),
}

#[derive(Args, Clone)]
struct AdapterArgs {
    /// micro:brightness[:A,B] | micro:random:SEED | micro:weights:DIR | constant:K | bridge | bridge:tcp:ADDR
    #[arg(long, default_value = "micro:brightness")]
    adapter: String,
    /// Input edge length for adapters with a configurable size.
    #[arg(long, default_value_t = DEFAULT_INPUT_SIZE)]
    size: usize,
    /// Connections opened to a bridge server [default: the RISE batch for RISE, else 1].
    #[arg(long)]
    bridge_pool: Option<usize>,
}

#[derive(Args, Clone)]
struct MethodArgs {
    #[arg(long, value_parser = parse_method)]
    method: Option<MethodKind>,
    /// RISE mask seed.
    #[arg(long)]
    seed: Option<u64>,
    /// RISE mask count.
    #[arg(long)]
    masks: Option<usize>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long, required_unless_present = "manifest")]
    image: Option<PathBuf>,
    /// Target box as x1,y1,x2,y2 in input coordinates; defaults to the top detection.
    #[arg(long, value_parser = parse_box)]
    target: Option<BBox<f64>>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Replay a previous run from its manifest.
    #[arg(long, conflicts_with_all = ["image", "target", "method", "seed", "masks"])]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Value written into deleted pixels.
    #[arg(long, default_value_t = 0.0)]
    fill: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    curve: CurveArgs,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_parser = parse_box)]
    target: Option<BBox<f64>>,
    /// Saliency map (.f32t) to score instead of running a method.
    #[arg(long, conflicts_with = "method")]
    map: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    curve: CurveArgs,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_parser = parse_box)]
    target: Option<BBox<f64>>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the result to this JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    adapter: AdapterArgs,
    #[command(flatten)]
    curve: CurveArgs,
    /// Directory of PNG images with optional JSON sidecars.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "gradcam,rise,sidu")]
    methods: Vec<MethodKind>,
    #[arg(long, default_value = "RGB", value_parser = parse_spectrum)]
    spectrum: Spectrum,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    masks: Option<usize>,
    /// Restrict the sweep to the test part of a seeded split.
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Write results.md and results.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BridgeCheckArgs {
    /// Server command run through `sh -c`; defaults to $XSAL_BRIDGE_CMD.
    #[arg(long, conflicts_with = "tcp")]
    cmd: Option<String>,
    /// Address of a running TCP server.
    #[arg(long)]
    tcp: Option<String>,
}

#[derive(Args)]
struct BridgeServeArgs {
    #[command(flatten)]
    adapter: AdapterArgs,
}

fn parse_method(s: &str) -> Result<MethodKind, String> {
    s.parse().map_err(|e: xsal::Error| e.to_string())
}

fn parse_spectrum(s: &str) -> Result<Spectrum, String> {
    s.parse().map_err(|e: xsal::Error| e.to_string())
}

fn parse_box(s: &str) -> Result<BBox<f64>, String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let a: [f64; 4] = v.try_into().map_err(|_| "expected x1,y1,x2,y2".to_string())?;
    BBox::from_array(a).map_err(|e| e.to_string())
}

impl AdapterArgs {
    fn spec(&self) -> CliResult<AdapterSpec> {
        Ok(self.adapter.parse()?)
    }

    fn build(&self, methods: &[Method]) -> CliResult<Box<dyn DetectorAdapter<f64>>> {
        Ok(self.spec()?.build(self.size, self.pool_for(methods))?)
    }

    fn pool_for(&self, methods: &[Method]) -> usize {
        let rise_batch = methods.iter().filter_map(|m| match m {
            Method::Rise(c) => Some(c.batch),
            _ => None,
        });
        self.bridge_pool.unwrap_or_else(|| rise_batch.max().unwrap_or(1)).max(1)
    }
}

impl MethodArgs {
    fn resolve(&self) -> CliResult<Method> {
        let kind = self.method.ok_or("--method is required")?;
        Ok(configure(kind, self.seed, self.masks))
    }
}

fn configure(kind: MethodKind, seed: Option<u64>, masks: Option<usize>) -> Method {
    let mut m = Method::default_for(kind);
    if let Method::Rise(c) = &mut m {
        if let Some(s) = seed {
            c.seed = s;
        }
        if let Some(n) = masks {
            c.n_masks = n;
        }
    }
    m
}

impl CurveArgs {
    fn config(&self) -> MetricConfig {
        MetricConfig { steps: self.steps, deletion_fill: self.fill, ..Default::default() }
    }
}

fn load_for(adapter: &dyn DetectorAdapter<f64>, path: &Path) -> xsal::Result<Image<f64>> {
    let input = adapter.input_size();
    load_image(path, input.width, input.height)
}

/// The detection to explain: the match of a user box, or the top detection.
fn resolve_target(adapter: &dyn DetectorAdapter<f64>, image: &Image<f64>, given: Option<BBox<f64>>) -> xsal::Result<Detection<f64>> {
    match given {
        Some(b) => require_match(adapter, image, &Detection::new(b, 0, 1.0)?, MatchThresholds::default()),
        None => select_top_box(&checked_detect(adapter, image)?),
    }
}

fn millis(t: Instant) -> serde_json::Value {
    json!(t.elapsed().as_secs_f64() * 1e3)
}

fn output_stem(image: &Path, method: MethodKind) -> String {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    format!("{stem}_{}", method.id())
}

fn explain(args: ExplainArgs) -> CliResult {
    let start = Instant::now();
    let (spec_text, size, method, image_path, fixed_target, target_given) = match &args.manifest {
        Some(p) => {
            let m = RunManifest::load(p)?;
            if file_digest(&m.image)? != m.input_digest {
                return Err(format!("{} changed since the manifest was written", m.image.display()).into());
            }
            (m.adapter_spec, m.input_size[0], m.method, m.image, Some(m.target), m.target_given)
        }
        None => {
            let image = args.image.clone().ok_or("--image is required")?;
            (args.adapter.adapter.clone(), args.adapter.size, args.method.resolve()?, image, None, args.target.is_some())
        }
    };
    let spec: AdapterSpec = spec_text.parse()?;
    if args.manifest.is_some() && !spec.in_process() {
        eprintln!("warning: bridge adapters are not guaranteed to replay bit-identically");
    }
    let adapter = spec.build(size, args.adapter.pool_for(&[method]))?;
    let t = Instant::now();
    let image = load_for(&*adapter, &image_path)?;
    let load_ms = millis(t);
    let target = match fixed_target {
        Some(d) => d,
        None => resolve_target(&*adapter, &image, args.target)?,
    };
    let t = Instant::now();
    let saliency = method.explain(&*adapter, &image, &target)?;
    let explain_ms = millis(t);

    fs::create_dir_all(&args.out)?;
    let stem = output_stem(&image_path, method.kind());
    let outputs = RunOutputs {
        saliency: args.out.join(format!("{stem}.f32t")),
        overlay: args.out.join(format!("{stem}.png")),
        manifest: args.out.join(format!("{stem}.json")),
    };
    F32Tensor::from_map(&saliency).save(&outputs.saliency)?;
    save_png(&render_overlay(&image, &saliency, &target.bbox)?, &outputs.overlay)?;

    let input = adapter.input_size();
    let mut timings = serde_json::Map::new();
    timings.insert("load_ms".into(), load_ms);
    timings.insert("explain_ms".into(), explain_ms);
    timings.insert("total_ms".into(), millis(start));
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        method,
        seed: method.seed(),
        adapter_spec: spec_text,
        adapter: adapter.describe(),
        input_digest: file_digest(&image_path)?,
        image: fs::canonicalize(&image_path)?,
        input_size: [input.width, input.height],
        target,
        target_given,
        outputs: outputs.clone(),
        timings,
    };
    manifest.save(&outputs.manifest)?;
    for p in [&outputs.saliency, &outputs.overlay, &outputs.manifest] {
        println!("{}", p.display());
    }
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> CliResult {
    let method = match &args.map {
        Some(_) => None,
        None => Some(args.method.resolve()?),
    };
    let adapter = args.adapter.build(method.as_slice())?;
    let image = load_for(&*adapter, &args.image)?;
    let target = resolve_target(&*adapter, &image, args.target)?;
    let (saliency, source) = match (&args.map, method) {
        (Some(p), _) => (F32Tensor::load(p)?.to_map::<f64>()?, json!(p)),
        (None, Some(m)) => (m.explain(&*adapter, &image, &target)?, serde_json::to_value(m)?),
        (None, None) => unreachable!("a method is resolved whenever no map is given"),
    };
    let cfg = args.curve.config();
    let ev = evaluate(&*adapter, &image, &target, &saliency, &cfg)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("deletion.csv"), ev.deletion.to_csv())?;
    fs::write(args.out.join("insertion.csv"), ev.insertion.to_csv())?;
    let report = json!({
        "deletion_auc": ev.summary.deletion_auc,
        "insertion_auc": ev.summary.insertion_auc,
        "steps": cfg.steps,
        "source": source,
        "target": target,
    });
    fs::write(args.out.join("auc.json"), serde_json::to_string_pretty(&report)?)?;
    println!("deletion {:.4}  insertion {:.4}", ev.summary.deletion_auc, ev.summary.insertion_auc);
    Ok(())
}

fn baseline_cmd(args: BaselineArgs) -> CliResult {
    let adapter = args.adapter.build(&[])?;
    let image = load_for(&*adapter, &args.image)?;
    let target = resolve_target(&*adapter, &image, args.target)?;
    let s = random_baseline(&*adapter, &image, &target, &args.curve.config(), args.seed, args.trials)?;
    let report = json!({
        "deletion_auc": s.deletion_auc,
        "insertion_auc": s.insertion_auc,
        "trials": args.trials,
        "seed": args.seed,
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &args.out {
        fs::write(p, &text)?;
    }
    println!("{text}");
    Ok(())
}

/// Scales an annotation from raw image coordinates to the detector input.
fn scale_box(b: &BBox<f64>, raw: (u32, u32), input: (usize, usize)) -> xsal::Result<BBox<f64>> {
    let sx = input.0 as f64 / raw.0 as f64;
    let sy = input.1 as f64 / raw.1 as f64;
    BBox::new(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy)
}

fn batch(args: BatchArgs) -> CliResult {
    let methods: Vec<Method> = args.methods.iter().map(|&k| configure(k, args.seed, args.masks)).collect();
    let adapter = args.adapter.build(&methods)?;
    let mut entries = load_dataset(&args.dir, args.spectrum)?;
    if let Some(f) = args.test_fraction {
        entries = split_dataset(&entries, args.split_seed, f)?.0;
    }
    if entries.is_empty() {
        return Err(format!("no images in {}", args.dir.display()).into());
    }
    let cfg = args.curve.config();
    let input = adapter.input_size();

    let per_image: Vec<xsal::Result<Vec<(f64, f64)>>> = entries
        .par_iter()
        .map(|e| {
            let image = load_for(&*adapter, &e.image)?;
            let given = match e.annotations.first() {
                Some(a) => {
                    let raw = image::image_dimensions(&e.image).map_err(|err| xsal::Error::Format(err.to_string()))?;
                    Some(scale_box(&a.bbox, raw, (input.width, input.height))?)
                }
                None => None,
            };
            let target = resolve_target(&*adapter, &image, given)?;
            methods
                .iter()
                .map(|m| {
                    let sal: Tensor2D<f64> = m.explain(&*adapter, &image, &target)?;
                    let s = evaluate(&*adapter, &image, &target, &sal, &cfg)?.summary;
                    Ok((s.deletion_auc, s.insertion_auc))
                })
                .collect()
        })
        .collect();

    let mut aucs = vec![(Vec::new(), Vec::new()); methods.len()];
    let mut skipped = 0;
    for (e, r) in entries.iter().zip(per_image) {
        match r {
            Ok(v) => {
                for (slot, (d, i)) in aucs.iter_mut().zip(v) {
                    slot.0.push(d);
                    slot.1.push(i);
                }
            }
            Err(err @ (xsal::Error::NoMatch | xsal::Error::NoDetections)) => {
                eprintln!("skipping {}: {err}", e.image.display());
                skipped += 1;
            }
            Err(err) => return Err(format!("{}: {err}", e.image.display()).into()),
        }
    }
    if skipped == entries.len() {
        return Err("no image yielded a usable target".into());
    }
    let table = ResultsTable {
        rows: methods
            .iter()
            .zip(&aucs)
            .map(|(m, (d, i))| ResultsRow::from_aucs(format!("{} {}", m.kind().label(), args.spectrum), d, i))
            .collect(),
    };
    print!("{table}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("results.md"), table.to_string())?;
        fs::write(out.join("results.json"), serde_json::to_string_pretty(&table)?)?;
    }
    Ok(())
}

fn bridge_check(args: BridgeCheckArgs) -> CliResult {
    let checks = match (&args.tcp, &args.cmd) {
        (Some(addr), _) => conformance::run_with(|| BridgeConnection::connect(addr.as_str())),
        (None, Some(cmd)) => conformance::run(cmd),
        (None, None) => {
            let cmd = std::env::var(BRIDGE_CMD_ENV).map_err(|_| format!("pass --cmd or --tcp, or set {BRIDGE_CMD_ENV}"))?;
            conformance::run(&cmd)
        }
    };
    let mut failed = 0;
    for c in &checks {
        println!("{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(format!("{failed} of {} conformance checks failed", checks.len()).into());
    }
    Ok(())
}

fn bridge_serve(args: BridgeServeArgs) -> CliResult {
    let adapter = args.adapter.build(&[])?;
    serve(&*adapter, BufReader::new(io::stdin().lock()), io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Explain(a) => explain(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Baseline(a) => baseline_cmd(a),
        Command::Batch(a) => batch(a),
        Command::BridgeCheck(a) => bridge_check(a),
        Command::BridgeServe(a) => bridge_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
