use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use slidecad::evaluate::{evaluate_run, stratified_kfold, EvalLevel, Scheme, FOLDS_JSON, METRICS_JSON};
use slidecad::explain::{
    cam_image, compute_cam, rank_features_with, read_ref, render_overlay, top_activations, write_gallery,
    RANKING_JSON,
};
use slidecad::inference::{load_features, save_features, signature_maps, LinearModel};
use slidecad::pipeline::{collect_labels, export_patch_features, list_dirs_with, run_cohort, run_slide, PipelineConfig};
use slidecad::pyramid::SLIDE_JSON;
use slidecad::synth::{generate_cohort, generate_with, CohortSpec, GroundTruth, SynthSpec, TRUTH_JSON};
use slidecad::{ClassLabel, Error, Execution, Result};

#[derive(Parser)]
#[command(name = "slidecad", version, about = "Whole-slide lesion detection, classification and evaluation")]
struct Cli {
    /// Pipeline configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config, cohort or fold plan.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic slides: one from `--spec`, else a cohort.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Cohort parameters (JSON); defaults to the 30-slide cohort.
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Run the pipeline on one slide directory or a directory of slides.
    Run { slides: PathBuf },
    /// Score pipeline outputs against ground truth and write metrics.json.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "slide")]
        level: LevelArg,
        #[arg(long, value_enum, default_value = "three-class")]
        scheme: SchemeArg,
    },
    /// Stratified k-fold plan over the slides of a truth directory.
    Folds {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Export labelled hand-crafted features of every classification patch of a run.
    Features {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        slides: PathBuf,
    },
    /// Interpretability: stump ranking, class activation maps, top-activation galleries.
    Explain {
        #[arg(value_enum)]
        mode: ExplainMode,
        /// Feature table directory (features.json + features.f32).
        #[arg(long)]
        features: PathBuf,
        /// Linear model (model.json); cam mode only.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Slides the table's patch references point into.
        #[arg(long)]
        slides: Option<PathBuf>,
        /// Target class for stump ranking; cam renders all classes when omitted.
        #[arg(long)]
        class: Option<ClassLabel>,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Feature channel for topact (and cam row selection).
        #[arg(long)]
        feature: Option<usize>,
        /// Number of rows for topact / cam.
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, value_delimiter = ',')]
        rows: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Print the effective pipeline configuration.
    PrintConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Patch,
    Region,
    Slide,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Binary,
    ThreeClass,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainMode {
    Stump,
    Cam,
    Topact,
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn cmd_synth(cli: &Cli, spec: &Option<PathBuf>, cohort: &Option<PathBuf>) -> Result<()> {
    let out = out_dir(cli)?;
    if let Some(p) = spec {
        let mut spec: SynthSpec = read_json(p)?;
        if let Some(s) = cli.seed {
            spec.seed = s;
        }
        let (_, truth) = generate_with(&spec, &out, Execution::Parallel)?;
        eprintln!("{}: {} ({} lesions)", spec.slide_id, truth.slide_label, truth.lesions.len());
        return Ok(());
    }
    let mut c: CohortSpec = match cohort {
        Some(p) => read_json(p)?,
        None => CohortSpec::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    let made = slidecad::exec::with_jobs(cli.jobs, || generate_cohort(&c, &out, Execution::Parallel))?;
    for (spec, truth) in &made {
        eprintln!("{}: {} ({} lesions)", spec.slide_id, truth.slide_label, truth.lesions.len());
    }
    Ok(())
}

fn cmd_run(cli: &Cli, slides: &Path) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    let assessments = if slides.join(SLIDE_JSON).is_file() {
        let backend = cfg.build_backend()?;
        vec![slidecad::exec::with_jobs(cli.jobs, || {
            run_slide(slides, &cfg, backend.as_ref(), &out, Execution::Parallel)
        })?]
    } else {
        run_cohort(slides, &cfg, &out, cli.jobs)?
    };
    for a in &assessments {
        eprintln!("{}: {} ({} regions)", a.slide_id, a.label3, a.region_calls.len());
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, runs: &Path, truth: &Path, level: LevelArg, scheme: SchemeArg) -> Result<()> {
    let level = match level {
        LevelArg::Patch => EvalLevel::Patch,
        LevelArg::Region => EvalLevel::Region,
        LevelArg::Slide => EvalLevel::Slide,
    };
    let scheme = match scheme {
        SchemeArg::Binary => Scheme::Binary,
        SchemeArg::ThreeClass => Scheme::ThreeClass,
    };
    let (pred, gt) = collect_labels(runs, truth, level)?;
    let report = evaluate_run(&pred, &gt, level, scheme)?;
    report.save(&out_dir(cli)?.join(METRICS_JSON))?;
    println!(
        "accuracy {:.3} ({}/{})",
        report.overall.accuracy, report.overall.correct, report.overall.total
    );
    Ok(())
}

fn cmd_folds(cli: &Cli, truth: &Path, k: usize) -> Result<()> {
    let mut labels = std::collections::BTreeMap::new();
    for id in list_dirs_with(truth, TRUTH_JSON)? {
        labels.insert(id.clone(), GroundTruth::load(&truth.join(&id))?.slide_label);
    }
    let plan = stratified_kfold(&labels, k, cli.seed.unwrap_or(0))?;
    plan.save(&out_dir(cli)?.join(FOLDS_JSON))
}

fn cmd_features(cli: &Cli, runs: &Path, slides: &Path) -> Result<()> {
    let table = slidecad::exec::with_jobs(cli.jobs, || export_patch_features(runs, slides, Execution::Parallel))?;
    save_features(&table, &out_dir(cli)?)?;
    eprintln!("{} patches x {} features", table.n(), table.f());
    Ok(())
}

struct ExplainArgs<'a> {
    mode: ExplainMode,
    features: &'a Path,
    model: Option<&'a Path>,
    slides: Option<&'a Path>,
    class: Option<ClassLabel>,
    k: usize,
    feature: Option<usize>,
    m: usize,
    rows: &'a [usize],
    alpha: f64,
}

fn required<'a>(v: Option<&'a Path>, flag: &'static str) -> Result<&'a Path> {
    v.ok_or_else(|| Error::validation(flag, "required for this mode"))
}

fn cmd_explain(cli: &Cli, a: ExplainArgs) -> Result<()> {
    let table = load_features(a.features)?;
    let out = out_dir(cli)?;
    match a.mode {
        ExplainMode::Stump => {
            let target = a.class.unwrap_or(ClassLabel::NonCarcinoma);
            let ranking =
                slidecad::exec::with_jobs(cli.jobs, || rank_features_with(&table, target, a.k, Execution::Parallel))?;
            ranking.save(&out.join(RANKING_JSON))?;
            if let Some(top) = ranking.ranked.first() {
                println!("top feature {} accuracy {:.3}", top.feature_index, top.accuracy);
            }
        }
        ExplainMode::Topact => {
            let feature = a.feature.ok_or_else(|| Error::validation("feature", "required for topact"))?;
            let tops = top_activations(&table, feature, a.m)?;
            let names = write_gallery(&tops, required(a.slides, "slides")?, &out)?;
            println!("{} patches written", names.len());
        }
        ExplainMode::Cam => {
            let model = LinearModel::load(required(a.model, "model")?)?;
            let slides = required(a.slides, "slides")?;
            let rows: Vec<usize> = if !a.rows.is_empty() {
                a.rows.to_vec()
            } else if let Some(j) = a.feature {
                top_activations(&table, j, a.m)?.iter().map(|t| t.row).collect()
            } else {
                (0..a.m.min(table.n())).collect()
            };
            let classes: Vec<ClassLabel> = a.class.map_or(ClassLabel::ALL.to_vec(), |c| vec![c]);
            for &r in &rows {
                if r >= table.n() {
                    return Err(Error::Range {
                        what: "row",
                        index: r,
                        available: table.n(),
                    });
                }
                let patch = read_ref(slides, &table.patch_ref(r))?;
                let maps = signature_maps(&patch);
                for &c in &classes {
                    let cam = compute_cam(&maps, &model, c, patch.size)?;
                    cam_image(&cam).save_png(&out.join(format!("cam_row_{r}_{c}.png")))?;
                    render_overlay(&cam, &patch, a.alpha)?.save_png(&out.join(format!("overlay_row_{r}_{c}.png")))?;
                }
            }
            println!("{} maps written", rows.len() * classes.len());
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec, cohort } => cmd_synth(cli, spec, cohort),
        Command::Run { slides } => cmd_run(cli, slides),
        Command::Eval {
            runs,
            truth,
            level,
            scheme,
        } => cmd_eval(cli, runs, truth, *level, *scheme),
        Command::Folds { truth, k } => cmd_folds(cli, truth, *k),
        Command::Features { runs, slides } => cmd_features(cli, runs, slides),
        Command::Explain {
            mode,
            features,
            model,
            slides,
            class,
            k,
            feature,
            m,
            rows,
            alpha,
        } => cmd_explain(
            cli,
            ExplainArgs {
                mode: *mode,
                features,
                model: model.as_deref(),
                slides: slides.as_deref(),
                class: *class,
                k: *k,
                feature: *feature,
                m: *m,
                rows,
                alpha: *alpha,
            },
        ),
        Command::PrintConfig => {
            println!("{}", load_config(cli)?.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprint!("{e}");
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
