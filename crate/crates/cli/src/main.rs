use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oodkit::decision::{calibrate_threshold, classify_batch, Verdict};
use oodkit::fit::{fit_all, FitContext};
use oodkit::harness::{
    correlation_study, emit_report, gen_synthetic_benchmark, run_benchmark_instrumented, DumpData,
    EvalReport, RunOptions, SweepPlan, SynthSpec,
};
use oodkit::io::{load_stats, read_dump, read_head, read_manifest, save_stats, Manifest, RunSpec};
use oodkit::scores::{score_dump, ScoreInputs};
use oodkit::{LinearHead, Method, MethodConfig};

#[derive(Parser)]
#[command(name = "oodkit", version, about = "Post-hoc out-of-distribution detection toolkit")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit statistics and ID-calibrated thresholds for one (backbone, seed) run.
    Fit(FitArgs),
    /// Select hyperparameters on ID validation and tuning OoD splits only.
    Sweep(BenchArgs),
    /// Score dumps with previously fitted statistics.
    Score(ScoreArgs),
    /// Run the full protocol and write the report.
    Eval(BenchArgs),
    /// Re-render tables and CSV from a saved report.json.
    Report(ReportArgs),
    /// Write a seeded synthetic benchmark with manifest and sweep grids.
    GenSynth(SynthArgs),
}

#[derive(Args)]
struct MethodArgs {
    /// Comma-separated methods, each `name` or `name:key=value,...`; `all` for every method.
    #[arg(long, default_value = "all")]
    methods: String,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    methods: MethodArgs,
    /// Output `.oods` bundle.
    #[arg(long)]
    out: PathBuf,
    /// Backbone of the run; the first declared one by default.
    #[arg(long)]
    backbone: Option<String>,
    /// Seed of the run; the first declared one by default.
    #[arg(long)]
    seed: Option<u64>,
    /// ID true positive rate the stored thresholds are calibrated to.
    #[arg(long, default_value_t = 0.95)]
    target_tpr: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    methods: MethodArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Restrict the run to one manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep grids; `sweeps.json` next to the manifest is used when present.
    #[arg(long)]
    sweeps: Option<PathBuf>,
    /// Fraction of every OoD dataset held out for tuning.
    #[arg(long, default_value_t = 0.2)]
    tune_fraction: f64,
}

#[derive(Args)]
struct ScoreArgs {
    /// Fitted `.oods` bundle.
    #[arg(long)]
    stats: PathBuf,
    #[command(flatten)]
    methods: MethodArgs,
    /// Dumps to score.
    #[arg(long, required = true, num_args = 1..)]
    dump: Vec<PathBuf>,
    /// Linear head, for methods that need one.
    #[arg(long)]
    head: Option<PathBuf>,
    /// Take the head from this manifest's run instead.
    #[arg(long, conflicts_with = "head")]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    backbone: Option<String>,
    #[arg(long, requires = "manifest")]
    seed: Option<u64>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json written by `eval`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generator seed; overrides the spec file.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON generator settings; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
}

/// Splits on commas, gluing `key=value` pieces back onto the preceding method.
fn parse_methods(list: &str) -> Result<Vec<MethodConfig>> {
    let mut specs: Vec<String> = Vec::new();
    for piece in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let is_param = piece.contains('=') && !piece.contains(':');
        match specs.last_mut() {
            Some(prev) if is_param => {
                prev.push(',');
                prev.push_str(piece);
            }
            _ if is_param => bail!("`{piece}` has no method before it"),
            _ => specs.push(piece.to_string()),
        }
    }
    if specs.is_empty() {
        bail!("no methods given");
    }
    let mut out = Vec::new();
    for s in specs {
        if s == "all" {
            out.extend(Method::ALL.iter().map(|&m| MethodConfig::new(m)));
        } else {
            out.push(MethodConfig::parse(&s).with_context(|| format!("method `{s}`"))?);
        }
    }
    Ok(out)
}

fn pick_run<'a>(m: &'a Manifest, backbone: Option<&str>, seed: Option<u64>) -> Result<&'a RunSpec> {
    let b = match backbone {
        Some(b) => b,
        None => m.backbones.first().context("manifest declares no backbones")?,
    };
    let s = match seed {
        Some(s) => s,
        None => *m.seeds.first().context("manifest declares no seeds")?,
    };
    m.run(b, s).with_context(|| format!("no run for backbone `{b}`, seed {s}"))
}

fn load_plan(explicit: Option<&Path>, manifest: &Path) -> Result<SweepPlan> {
    let implicit = manifest.parent().unwrap_or(Path::new(".")).join("sweeps.json");
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None if implicit.is_file() => implicit,
        None => return Ok(SweepPlan::default()),
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let plan: SweepPlan =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    plan.validate()?;
    Ok(plan)
}

fn restrict_seed(mut m: Manifest, seed: Option<u64>) -> Result<Manifest> {
    if let Some(s) = seed {
        if !m.seeds.contains(&s) {
            bail!("seed {s} is not declared in the manifest");
        }
        m.seeds = vec![s];
        m.runs.retain(|r| r.seed == s);
    }
    Ok(m)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn print_failures(report: &EvalReport) {
    for f in &report.failures {
        let method = f.method.map_or_else(|| "*".to_string(), |m| m.id().to_string());
        eprintln!(
            "failed: backbone={} seed={} method={} phase={}: {}",
            f.backbone, f.seed, method, f.phase, f.message
        );
    }
}

fn cmd_fit(a: &FitArgs) -> Result<bool> {
    let manifest = read_manifest(&a.manifest)?;
    let methods = parse_methods(&a.methods.methods)?;
    let run = pick_run(&manifest, a.backbone.as_deref(), a.seed)?;
    let head = read_head(&manifest.resolve(&run.head))?;
    let train = read_dump(&manifest.resolve(&run.id_train))?;
    let val = read_dump(&manifest.resolve(&run.id_val))?;
    let val = DumpData::new(val.features, val.aug);
    let ctx = FitContext {
        train: &train.features,
        val: Some(&val.features),
        head: Some(&head),
        seed: run.seed,
    };
    let mut stats = fit_all(&methods, &ctx)?;
    for cfg in &methods {
        let scores = score_dump(cfg, &stats, val.inputs(&ctx))?.scores;
        let mut t = calibrate_threshold(&scores, a.target_tpr)?;
        t.method = Some(cfg.method);
        stats.thresholds.insert(cfg.method, t);
    }
    save_stats(&stats, &a.out)?;
    eprintln!(
        "fitted {} method(s) on {} / seed {} -> {}",
        methods.len(),
        run.backbone,
        run.seed,
        a.out.display()
    );
    Ok(true)
}

fn run_bench(a: &BenchArgs, sweep_only: bool) -> Result<bool> {
    let manifest = restrict_seed(read_manifest(&a.manifest)?, a.seed)?;
    let methods = parse_methods(&a.methods.methods)?;
    let plan = load_plan(a.sweeps.as_deref(), &a.manifest)?;
    let opts = RunOptions {
        tune_fraction: a.tune_fraction,
        sweep_only,
    };
    let (report, logs) = run_benchmark_instrumented(&manifest, &methods, &plan, opts)?;
    fs::create_dir_all(&a.out)?;
    if sweep_only {
        write_json(&report.sweeps, &a.out.join("selected.json"))?;
        write_json(&report.failures, &a.out.join("failures.json"))?;
    } else {
        for p in emit_report(&report, &a.out)? {
            eprintln!("wrote {}", p.display());
        }
        write_json(&correlation_study(&report), &a.out.join("correlation.json"))?;
    }
    write_json(&logs, &a.out.join("access.json"))?;
    print_failures(&report);
    Ok(report.failures.is_empty())
}

fn cmd_score(a: &ScoreArgs) -> Result<bool> {
    let stats = load_stats(&a.stats)?;
    let methods = parse_methods(&a.methods.methods)?;
    let head: Option<LinearHead> = match (&a.head, &a.manifest) {
        (Some(h), _) => Some(read_head(h)?),
        (None, Some(m)) => {
            let manifest = read_manifest(m)?;
            let run = pick_run(&manifest, a.backbone.as_deref(), a.seed)?;
            Some(read_head(&manifest.resolve(&run.head))?)
        }
        (None, None) => None,
    };
    let mut w = String::from("dump,index,method,score,verdict\n");
    let mut ok = true;
    for path in &a.dump {
        let dump = read_dump(path)?;
        let inputs = ScoreInputs::new(&dump.features, head.as_ref()).with_aug(dump.aug.as_ref());
        for cfg in &methods {
            let scores = match score_dump(cfg, &stats, inputs) {
                Ok(v) => v.scores,
                Err(e) => {
                    eprintln!("failed: {} on {}: {e}", cfg.method, path.display());
                    ok = false;
                    continue;
                }
            };
            let verdicts = stats.thresholds.get(&cfg.method).map(|t| classify_batch(&scores, t));
            for (i, s) in scores.iter().enumerate() {
                let v = match verdicts.as_ref().map(|v| v[i]) {
                    Some(Verdict::Id) => "id",
                    Some(Verdict::Ood) => "ood",
                    None => "",
                };
                w.push_str(&format!("{},{i},{},{s},{v}\n", path.display(), cfg.method.id()));
            }
        }
    }
    fs::write(&a.out, w).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(ok)
}

fn cmd_report(a: &ReportArgs) -> Result<bool> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut report: EvalReport = serde_json::from_str(&text)?;
    report.finalize()?;
    for p in emit_report(&report, &a.out)? {
        eprintln!("wrote {}", p.display());
    }
    print_failures(&report);
    Ok(report.failures.is_empty())
}

fn cmd_gen_synth(a: &SynthArgs) -> Result<bool> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let manifest = gen_synthetic_benchmark(&spec, &a.out)?;
    eprintln!(
        "wrote {} run(s) to {}",
        manifest.runs.len(),
        a.out.join("manifest.json").display()
    );
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Sweep(a) => run_bench(a, true),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => run_bench(a, false),
        Command::Report(a) => cmd_report(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
