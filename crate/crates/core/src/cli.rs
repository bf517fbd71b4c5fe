//! Command-line front end.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, AggregateReport, SimilarityReport};
use crate::explain;
use crate::fixture::FixtureSpec;
use crate::io::{self, json_files, load_annotations, load_explanation, load_instance, write_json};
use crate::model::{
    validate_config, CombineRule, ExpertAnnotation, ExplainerConfig, Explanation, Instance,
    LabelSet, Mode, StrategyKind, Target,
};
use crate::predictor::protocol::ProtocolServer;
use crate::predictor::{connect, PredictorSpec, RemoteOptions, SyntheticLogisticModel};
use crate::render;

pub const PREDICTOR_ENV: &str = "MMSURROGATE_PREDICTOR";

#[derive(Debug, Parser)]
#[command(name = "mmsurrogate", version, about = "Local surrogate explanations for text+image classifiers")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Worker threads for corpus-level work (default: logical CPUs).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explain one finding for one instance (or every instance in a directory).
    Explain(ExplainArgs),
    /// Score explanations against expert annotations.
    Evaluate(EvaluateArgs),
    /// Pairwise agreement between annotators.
    Agreement(AgreementArgs),
    /// Score random explanations against expert annotations.
    Baseline(BaselineArgs),
    /// Write the box overlay (SVG) and word listing (HTML) of an explanation.
    Render(RenderArgs),
    /// Write a synthetic instance, model and ideal annotation.
    Fixture(FixtureArgs),
    /// Serve a synthetic model over the line protocol on stdin/stdout.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Instance file, or a directory of instance files.
    #[arg(long)]
    pub instance: PathBuf,
    /// Finding (label) to explain.
    #[arg(long)]
    pub finding: String,
    /// separate, simultaneous or random-baseline.
    #[arg(long, default_value = "separate")]
    pub mode: Mode,
    /// synthetic:<model-path>, cmd:<argv> or url:<endpoint>.
    #[arg(long, env = PREDICTOR_ENV)]
    pub predictor: Option<String>,
    /// JSON file with explainer settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Perturbed samples per surrogate.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Probability that a word is masked in a sample.
    #[arg(long)]
    pub p_text: Option<f64>,
    /// Probability that a box is masked in a sample.
    #[arg(long)]
    pub p_visual: Option<f64>,
    /// Kernel width.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Ridge penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Words kept in the explanation.
    #[arg(long)]
    pub k_words: Option<usize>,
    /// Boxes kept in the explanation.
    #[arg(long)]
    pub k_boxes: Option<usize>,
    /// Box inactivation: zero, mean-std or randomize.
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    /// Standard deviations added by the mean-std strategy.
    #[arg(long)]
    pub mean_std_k: Option<f64>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regression target: probability or loss.
    #[arg(long)]
    pub target: Option<Target>,
    /// Joint sample weighting: halve or batch-min-max.
    #[arg(long)]
    pub combine: Option<CombineRule>,
    /// Drop ranked items whose |score| is below this.
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// Samples per predictor call.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated label set.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Seconds to wait for a remote predictor's answer.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    /// Output file; a directory when --instance is a directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Explanation file or directory.
    #[arg(long, required_unless_present = "reports")]
    pub explanations: Option<PathBuf>,
    /// Annotation file or directory.
    #[arg(long, required_unless_present = "reports")]
    pub annotations: Option<PathBuf>,
    /// Precomputed similarity reports to aggregate instead.
    #[arg(long, conflicts_with_all = ["explanations", "annotations"])]
    pub reports: Option<PathBuf>,
    /// Grouping keys: mode, annotator, predictor, finding, instance or any
    /// report tag.
    #[arg(long, value_delimiter = ',', default_value = "mode,annotator")]
    pub group_by: Vec<String>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Instance file or directory.
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k_words: usize,
    #[arg(long, default_value_t = 3)]
    pub k_boxes: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub explanation: PathBuf,
    /// Annotation file; the first annotation on the explanation's instance
    /// (and finding, when one matches) is drawn.
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    /// Background image referenced (not embedded) by the overlay.
    #[arg(long)]
    pub image: Option<String>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 20)]
    pub words: usize,
    #[arg(long, default_value_t = 36)]
    pub boxes: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub hot_words: usize,
    #[arg(long, default_value_t = 3)]
    pub hot_boxes: usize,
    #[arg(long, default_value_t = 2.0)]
    pub weight: f64,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    pub bias: f64,
    #[arg(long, default_value = "nodule")]
    pub finding: String,
    #[arg(long, default_value = "synthetic-0")]
    pub id: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Synthetic model file.
    #[arg(long)]
    pub model: PathBuf,
}

/// Written next to every output file as `<output>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExplainerConfig>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
    pub engine_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

struct Context {
    argv: Vec<String>,
    started: Instant,
}

impl Context {
    fn manifest(
        &self,
        command: &str,
        config: Option<&ExplainerConfig>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        seed: Option<u64>,
    ) -> Result<()> {
        let m = RunManifest {
            command: command.to_string(),
            argv: self.argv.clone(),
            config: config.cloned(),
            inputs,
            outputs: outputs.clone(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            engine_version: crate::ENGINE_VERSION.to_string(),
            seed,
        };
        for out in &outputs {
            write_json(&manifest_path(out), &m)?;
        }
        Ok(())
    }
}

/// Default file name of an explanation.
pub fn explanation_file_name(instance_id: &str, finding: &str, mode: Mode) -> String {
    format!("{instance_id}.{finding}.{mode}.explanation.json")
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    let ctx = Context {
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        started: Instant::now(),
    };
    match run(cli, &ctx) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
    }
}

fn run(cli: Cli, ctx: &Context) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        // a second initialisation (tests calling in-process) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Explain(a) => cmd_explain(a, ctx),
        Command::Evaluate(a) => cmd_evaluate(a, ctx),
        Command::Agreement(a) => cmd_agreement(a, ctx),
        Command::Baseline(a) => cmd_baseline(a, ctx),
        Command::Render(a) => cmd_render(a, ctx),
        Command::Fixture(a) => cmd_fixture(a, ctx),
        Command::Serve(a) => cmd_serve(a),
    }
}

/// Config file (if any) overlaid with explicit flags.
pub fn resolve_config(a: &ExplainArgs) -> Result<ExplainerConfig> {
    let mut c = match &a.config {
        Some(path) => io::read_json::<ExplainerConfig>(path)
            .map_err(|e| Error::Config(format!("config file: {e}")))?,
        None => ExplainerConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag.clone() { c.$field = v; })*
        };
    }
    set!(samples => samples, p_text => p_text, p_visual => p_visual, sigma => kernel_width,
         lambda => ridge_lambda, k_words => k_words, k_boxes => k_boxes, strategy => strategy,
         mean_std_k => mean_std_k, seed => seed, target => target, combine => combine,
         batch_size => batch_size);
    if a.score_threshold.is_some() {
        c.score_threshold = a.score_threshold;
    }
    if let Some(labels) = &a.labels {
        c.labels = LabelSet::new(labels.iter().map(String::as_str))?;
    }
    validate_config(c)
}

fn cmd_explain(a: ExplainArgs, ctx: &Context) -> Result<()> {
    let config = resolve_config(&a)?;
    let corpus = a.instance.is_dir();
    let paths = json_files(&a.instance)?;
    if paths.is_empty() {
        return Err(Error::Argument(format!("no instance files under {}", a.instance.display())));
    }
    let instances: Vec<(PathBuf, Instance)> = paths
        .into_iter()
        .map(|p| load_instance(&p).map(|i| (p, i)))
        .collect::<Result<_>>()?;
    let predictor = if a.mode == Mode::RandomBaseline {
        None
    } else {
        let spec: PredictorSpec = a
            .predictor
            .as_deref()
            .ok_or_else(|| Error::Config(format!("--predictor (or {PREDICTOR_ENV}) is required")))?
            .parse()?;
        if !(a.timeout.is_finite() && a.timeout > 0.0) {
            return Err(Error::Config("--timeout must be > 0".into()));
        }
        Some(connect(
            &spec,
            RemoteOptions {
                timeout: Duration::from_secs_f64(a.timeout),
            },
        )?)
    };
    let out_for = |inst: &Instance| -> PathBuf {
        let name = explanation_file_name(inst.id(), &a.finding, a.mode);
        match (&a.out, corpus) {
            (Some(p), false) => p.clone(),
            (Some(dir), true) => dir.join(name),
            (None, _) => PathBuf::from(name),
        }
    };
    let results: Vec<Result<()>> = instances
        .par_iter()
        .map(|(path, inst)| {
            let e = match &predictor {
                Some(p) => explain::explain(a.mode, inst, &a.finding, p.as_ref(), &config)?,
                None => {
                    if !config.labels.contains(&a.finding) {
                        return Err(Error::Config(format!(
                            "unknown finding {:?}; configured labels: {}",
                            a.finding, config.labels
                        )));
                    }
                    explain::random_explanation(inst, &a.finding, config.k_words, config.k_boxes, config.seed)?
                }
            };
            let out = out_for(inst);
            io::save_explanation(&out, &e)?;
            log::info!("wrote {}", out.display());
            ctx.manifest("explain", Some(&config), vec![path.clone()], vec![out], Some(config.seed))
        })
        .collect();
    // first error in input order decides the exit code
    results.into_iter().collect()
}

fn load_all<T>(path: &Path, load: impl Fn(&Path) -> Result<Vec<T>>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for p in json_files(path)? {
        out.extend(load(&p)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    reports: Option<&'a [SimilarityReport]>,
    aggregates: &'a [AggregateReport],
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn cmd_evaluate(a: EvaluateArgs, ctx: &Context) -> Result<()> {
    let group_by: Vec<&str> = a.group_by.iter().map(String::as_str).collect();
    let (reports, inputs, from_pairs) = match &a.reports {
        Some(path) => {
            let reports: Vec<SimilarityReport> = load_all(path, io::read_json)?;
            (reports, vec![path.clone()], false)
        }
        None => {
            let (ep, ap) = (a.explanations.clone().unwrap(), a.annotations.clone().unwrap());
            let explanations: Vec<Explanation> = load_all(&ep, |p| load_explanation(p).map(|e| vec![e]))?;
            let annotations = load_all(&ap, load_annotations)?;
            (eval::evaluate_explanations(&explanations, &annotations)?, vec![ep, ap], true)
        }
    };
    if reports.is_empty() {
        return Err(Error::Argument(
            "no joinable (instance_id, finding) pairs between explanations and annotations".into(),
        ));
    }
    let aggregates = eval::aggregate(&reports, &group_by)?;
    let text = match a.format {
        OutputFormat::Json => io::to_json_string(&EvaluateOutput {
            reports: from_pairs.then_some(reports.as_slice()),
            aggregates: &aggregates,
        }),
        OutputFormat::Table => {
            let mut t = String::new();
            if from_pairs {
                t.push_str(&eval::format_reports_table(&reports));
                t.push('\n');
            }
            t.push_str(&eval::format_aggregates_table(&aggregates));
            t
        }
    };
    emit(a.out.as_deref(), &text)?;
    if let Some(out) = a.out {
        ctx.manifest("evaluate", None, inputs, vec![out], None)?;
    }
    Ok(())
}

fn cmd_agreement(a: AgreementArgs, ctx: &Context) -> Result<()> {
    let annotations = load_all(&a.annotations, load_annotations)?;
    let reports = eval::inter_annotator_agreement(&annotations)?;
    let text = match a.format {
        OutputFormat::Json => io::to_json_string(&reports),
        OutputFormat::Table => eval::format_aggregates_table(&reports),
    };
    emit(a.out.as_deref(), &text)?;
    if let Some(out) = a.out {
        ctx.manifest("agreement", None, vec![a.annotations], vec![out], None)?;
    }
    Ok(())
}

fn cmd_baseline(a: BaselineArgs, ctx: &Context) -> Result<()> {
    let instances: Vec<Instance> = load_all(&a.instances, |p| load_instance(p).map(|i| vec![i]))?;
    let annotations = load_all(&a.annotations, load_annotations)?;
    let outcome = eval::baseline_run(&instances, &annotations, a.k_words, a.k_boxes, a.trials, a.seed)?;
    if outcome.overall.is_none() {
        return Err(Error::Argument("no annotation could be scored against a random baseline".into()));
    }
    let text = match a.format {
        OutputFormat::Json => io::to_json_string(&outcome),
        OutputFormat::Table => {
            let mut rows = outcome.per_annotator.clone();
            if let Some(mut o) = outcome.overall.clone() {
                o.keys.insert(eval::keys::ANNOTATOR.into(), "average".into());
                rows.push(o);
            }
            eval::format_aggregates_table(&rows)
        }
    };
    emit(a.out.as_deref(), &text)?;
    if let Some(out) = a.out {
        ctx.manifest("baseline", None, vec![a.instances, a.annotations], vec![out], Some(a.seed))?;
    }
    Ok(())
}

fn pick_annotation<'a>(annotations: &'a [ExpertAnnotation], e: &Explanation) -> Option<&'a ExpertAnnotation> {
    let on_instance = || annotations.iter().filter(|a| a.instance_id == e.instance_id);
    on_instance()
        .find(|a| a.finding_context.contains(&e.finding))
        .or_else(|| on_instance().next())
}

fn cmd_render(a: RenderArgs, ctx: &Context) -> Result<()> {
    let instance = load_instance(&a.instance)?;
    let e = load_explanation(&a.explanation)?;
    e.check_against(&instance)?;
    let annotations = match &a.annotation {
        Some(p) => load_annotations(p)?,
        None => Vec::new(),
    };
    let annotation = pick_annotation(&annotations, &e);
    if a.annotation.is_some() && annotation.is_none() {
        return Err(Error::Argument(format!(
            "no annotation for instance {} in the given file",
            e.instance_id
        )));
    }
    if let Some(ann) = annotation {
        ann.check_against(&instance)?;
    }
    let stem = format!("{}.{}.{}", e.instance_id, e.finding, e.mode);
    let svg = a.out_dir.join(format!("{stem}.overlay.svg"));
    let html = a.out_dir.join(format!("{stem}.words.html"));
    std::fs::create_dir_all(&a.out_dir).map_err(|err| Error::io(&a.out_dir, err))?;
    let overlay = render::render_image_overlay(&instance, &e, annotation, a.image.as_deref());
    std::fs::write(&svg, overlay).map_err(|err| Error::io(&svg, err))?;
    let listing = render::render_text_listing(&instance, &e, annotation);
    std::fs::write(&html, listing).map_err(|err| Error::io(&html, err))?;
    let mut inputs = vec![a.instance, a.explanation];
    inputs.extend(a.annotation);
    ctx.manifest("render", None, inputs, vec![svg, html], None)
}

fn cmd_fixture(a: FixtureArgs, ctx: &Context) -> Result<()> {
    let spec = FixtureSpec {
        id: a.id,
        finding: a.finding,
        words: a.words,
        boxes: a.boxes,
        dim: a.dim,
        hot_words: a.hot_words,
        hot_boxes: a.hot_boxes,
        weight: a.weight,
        bias: a.bias,
        seed: a.seed,
        ..FixtureSpec::default()
    };
    let f = spec.generate()?;
    let id = f.instance.id();
    let paths = [
        a.out_dir.join(format!("{id}.instance.json")),
        a.out_dir.join(format!("{id}.model.json")),
        a.out_dir.join(format!("{id}.annotation.json")),
    ];
    write_json(&paths[0], &f.instance)?;
    write_json(&paths[1], &f.model)?;
    write_json(&paths[2], &f.annotation)?;
    ctx.manifest("fixture", None, vec![], paths.to_vec(), Some(a.seed))
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let model: SyntheticLogisticModel = io::read_json(&a.model)?;
    let mut server = ProtocolServer::new(model);
    let stdin = std::io::stdin();
    server
        .serve(BufReader::new(stdin.lock()), std::io::stdout().lock())
        .map_err(|e| Error::io("<stdio>", e))
}
