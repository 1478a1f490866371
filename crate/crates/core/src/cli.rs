//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 unreadable or malformed input,
//! 4 data the pipeline cannot use, 5 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibration::{calibrate, read_model, write_model, CalibrationConfig, DetectorModel};
use crate::detection::{detect_inputs, write_detection_csv};
use crate::embedding_io::{
    read_embedding_file, read_manifest, DatasetManifest, EmbeddingSet, ManifestEntry, PromptFiles, Role,
};
use crate::error::{Error, ErrorClass, Result};
use crate::evaluation::{evaluate_grid, render_report, Metric, ReportFormat, CLIP_IMAGE_ENCODER};
use crate::recipe::{parse_recipe, recipe_dimension, Recipe};
use crate::representation::EmbeddingInputs;

pub const LOG_ENV: &str = "OOD_SENTINEL_LOG";

#[derive(Debug, Parser)]
#[command(name = "ood-sentinel", version, about = "Out-of-distribution detection on composed embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a detector on in-distribution embeddings and write the model file.
    Calibrate(CalibrateArgs),
    /// Score embeddings against a model and emit per-sample verdicts as CSV.
    Detect(DetectArgs),
    /// Evaluate models per corruption type and write metric reports.
    Eval(EvalArgs),
    /// Print the canonical form of a recipe and optionally its dimension.
    Recipe(RecipeArgs),
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(format!("{x} must lie strictly between 0 and 1"))
    }
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Text embeddings of normal scene descriptions (EMB1).
    #[arg(long)]
    pub prompts_normal: Option<PathBuf>,
    /// Text embeddings of anomalous scene descriptions (EMB1).
    #[arg(long)]
    pub prompts_anom: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// In-distribution latent embeddings (EMB1).
    #[arg(long)]
    pub id: Option<PathBuf>,
    /// CLIP image embeddings of the same images, row-aligned with --id.
    #[arg(long)]
    pub clip_images: Option<PathBuf>,
    #[command(flatten)]
    pub prompts: PromptArgs,
    #[arg(long)]
    pub recipe: String,
    #[arg(long, default_value_t = 0.9, value_parser = unit_interval)]
    pub confidence: f64,
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Encoder name recorded in the model; eval matches it against the manifest.
    #[arg(long, default_value = "")]
    pub encoder: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub clip_images: Option<PathBuf>,
    #[command(flatten)]
    pub prompts: PromptArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    F1,
    Accuracy,
    Fpr,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with_all = ["id", "ood"])]
    pub manifest: Option<PathBuf>,
    /// In-distribution test embeddings, for a single-file evaluation without a manifest.
    #[arg(long, requires = "ood")]
    pub id: Option<PathBuf>,
    /// Out-of-distribution embeddings; the file stem names the corruption type.
    #[arg(long, requires = "id")]
    pub ood: Vec<PathBuf>,
    #[command(flatten)]
    pub prompts: PromptArgs,
    /// Model file; repeat for several report rows.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::All)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; one file per metric.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecipeArgs {
    pub recipe: String,
    #[arg(long)]
    pub dim_v: Option<usize>,
    #[arg(long)]
    pub n_pi: Option<usize>,
    #[arg(long)]
    pub n_pibar: Option<usize>,
}

fn load_opt(path: &Option<PathBuf>) -> Result<Option<EmbeddingSet>> {
    path.as_ref().map(read_embedding_file).transpose()
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses a recipe, printing the offending position under the input.
fn recipe_arg(text: &str, err: &mut dyn Write) -> Result<Recipe> {
    parse_recipe(text).inspect_err(|e| {
        if let Error::Parse { position, .. } = e {
            let _ = writeln!(err, "  {text}\n  {}^", " ".repeat(*position));
        }
    })
}

fn emit(path: &Option<PathBuf>, content: &[u8], out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| Error::io(p, e)),
        None => out
            .write_all(content)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn check_prompts(recipe: &Recipe, prompts: &PromptArgs) -> Result<()> {
    use crate::recipe::TermKind;
    if recipe.uses(TermKind::Pi) && prompts.prompts_normal.is_none() {
        return Err(usage(format!(
            "recipe '{recipe}' uses pi, which needs --prompts-normal"
        )));
    }
    if recipe.uses(TermKind::PiBar) && prompts.prompts_anom.is_none() {
        return Err(usage(format!(
            "recipe '{recipe}' uses pibar, which needs --prompts-anom"
        )));
    }
    Ok(())
}

pub fn cmd_calibrate(args: &CalibrateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<DetectorModel> {
    let recipe = recipe_arg(&args.recipe, err)?;
    check_prompts(&recipe, &args.prompts)?;
    if args.id.is_none() && args.clip_images.is_none() {
        return Err(usage("calibrate needs --id or --clip-images"));
    }
    let latents = load_opt(&args.id)?;
    let images = load_opt(&args.clip_images)?;
    let normal = load_opt(&args.prompts.prompts_normal)?;
    let anomalous = load_opt(&args.prompts.prompts_anom)?;
    let inputs = EmbeddingInputs {
        latents: latents.as_ref(),
        clip_images: images.as_ref(),
        normal_prompts: normal.as_ref(),
        anomalous_prompts: anomalous.as_ref(),
    };
    let config = CalibrationConfig {
        recipe,
        confidence: args.confidence,
        fraction: args.split,
        seed: args.seed,
        encoder: args.encoder.clone(),
    };
    let model = calibrate(&inputs, &config)?;
    match &args.out {
        Some(p) => write_model(&model, p)?,
        None => emit(&None, model.to_json().as_bytes(), out)?,
    }
    let summary = format!(
        "dim={} n_v={} n_f={} shape={:.6} scale={:.6e} threshold={:.9e}",
        model.dim,
        model.provenance.n_v,
        model.provenance.n_f,
        model.gamma.shape(),
        model.gamma.scale(),
        model.threshold
    );
    // Keep stdout clean for the model document when it goes there.
    let _ = if args.out.is_some() {
        writeln!(out, "{summary}")
    } else {
        writeln!(err, "{summary}")
    };
    Ok(model)
}

pub fn cmd_detect(args: &DetectArgs, out: &mut dyn Write) -> Result<usize> {
    let model = read_model(&args.model)?;
    check_prompts(&model.recipe, &args.prompts)?;
    if args.latents.is_none() && args.clip_images.is_none() {
        return Err(usage("detect needs --latents or --clip-images"));
    }
    let latents = load_opt(&args.latents)?;
    let images = load_opt(&args.clip_images)?;
    let normal = load_opt(&args.prompts.prompts_normal)?;
    let anomalous = load_opt(&args.prompts.prompts_anom)?;
    let results = detect_inputs(
        &model,
        &EmbeddingInputs {
            latents: latents.as_ref(),
            clip_images: images.as_ref(),
            normal_prompts: normal.as_ref(),
            anomalous_prompts: anomalous.as_ref(),
        },
    )?;
    let mut buf = Vec::new();
    write_detection_csv(&results, &mut buf)?;
    emit(&args.out, &buf, out)?;
    Ok(results.len())
}

/// Manifest for `eval --id ... --ood ...`: every file serves every encoder
/// the models ask for.
fn ad_hoc_manifest(args: &EvalArgs, models: &[DetectorModel]) -> Result<DatasetManifest> {
    let id = args.id.clone().ok_or_else(|| usage("eval needs --manifest or --id with --ood"))?;
    let mut encoders: Vec<String> = models.iter().map(|m| m.provenance.encoder.clone()).collect();
    encoders.push(CLIP_IMAGE_ENCODER.to_string());
    encoders.sort();
    encoders.dedup();
    let mut entries = Vec::new();
    for encoder in &encoders {
        entries.push(ManifestEntry {
            path: id.clone(),
            role: Role::Id,
            ood_type: String::new(),
            encoder: encoder.clone(),
        });
        for ood in &args.ood {
            let ood_type = ood
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| usage(format!("cannot name corruption type of {}", ood.display())))?;
            entries.push(ManifestEntry {
                path: ood.clone(),
                role: Role::Ood,
                ood_type,
                encoder: encoder.clone(),
            });
        }
    }
    Ok(DatasetManifest {
        entries,
        prompt_files: PromptFiles {
            normal: args.prompts.prompts_normal.clone(),
            anomalous: args.prompts.prompts_anom.clone(),
        },
        base_dir: PathBuf::new(),
    })
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let models = args
        .models
        .iter()
        .map(read_model)
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = match &args.manifest {
        Some(p) => read_manifest(p)?,
        None => ad_hoc_manifest(args, &models)?,
    };
    if args.manifest.is_some() {
        // Explicit prompt flags override the manifest's.
        if let Some(p) = &args.prompts.prompts_normal {
            manifest.prompt_files.normal = Some(std::path::absolute(p).map_err(|e| Error::io(p, e))?);
        }
        if let Some(p) = &args.prompts.prompts_anom {
            manifest.prompt_files.anomalous = Some(std::path::absolute(p).map_err(|e| Error::io(p, e))?);
        }
    }
    let grid = evaluate_grid(&manifest, &models, args.seed)?;
    let metrics: Vec<Metric> = match args.metric {
        MetricArg::F1 => vec![Metric::F1],
        MetricArg::Accuracy => vec![Metric::Accuracy],
        MetricArg::Fpr => vec![Metric::Fpr],
        MetricArg::All => Metric::ALL.to_vec(),
    };
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Markdown => ReportFormat::Markdown,
    };

    let mut written = Vec::new();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for (i, metric) in metrics.iter().enumerate() {
        let text = render_report(&grid.report(*metric), format);
        match &args.out {
            Some(dir) => {
                let path = dir.join(format!("{}.{}", metric.name(), format.extension()));
                fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
            None => {
                let sep = if i > 0 { "\n" } else { "" };
                let block = if metrics.len() > 1 {
                    format!("{sep}# {metric}\n{text}")
                } else {
                    text
                };
                out.write_all(block.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e))?;
            }
        }
    }
    Ok(written)
}

pub fn cmd_recipe(args: &RecipeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let recipe = recipe_arg(&args.recipe, err)?;
    let _ = writeln!(out, "{recipe}");
    if args.dim_v.is_some() || args.n_pi.is_some() || args.n_pibar.is_some() {
        let dim = recipe_dimension(
            &recipe,
            args.dim_v.unwrap_or(0),
            args.n_pi.unwrap_or(0),
            args.n_pibar.unwrap_or(0),
        )?;
        let _ = writeln!(out, "{dim}");
    }
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Runs one command with explicit output streams; returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ErrorClass::Usage.exit_code() } else { 0 };
            let rendered = e.render();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a, out, err).map(drop),
        Command::Detect(a) => cmd_detect(a, out).map(drop),
        Command::Eval(a) => cmd_eval(a, out).map(drop),
        Command::Recipe(a) => cmd_recipe(a, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.class().exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let stdout = io::stdout();
    let stderr = io::stderr();
    let code = run_with(args, &mut stdout.lock(), &mut stderr.lock());
    let _ = io::stdout().flush();
    code
}
