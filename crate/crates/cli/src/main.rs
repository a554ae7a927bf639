//! `mrisk`: generates the manifold datasets, trains the three classifiers,
//! tabulates the risk decomposition and checks the tightness construction.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use manifold_risk::experiment::{evaluate_model, train_tag, ClassifierTag, ExperimentConfig, TrainedModel, PRESETS};
use manifold_risk::manifolds::{sample_dataset, write_dataset_csv, LabelRule, ManifoldKind};
use manifold_risk::risk::{write_risk_csv, RiskReport, RiskRow, Verdict};
use manifold_risk::seed::{self, stream};
use manifold_risk::tightness::{write_tightness_csv, TightnessRow};
use manifold_risk::training::train;
use manifold_risk::{Classifier, Exec, LabeledManifoldSample, ScoreFunction};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] manifold_risk::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mrisk", version, about = "Manifold decomposition of adversarial risk")]
struct Cli {
    /// Experiment config as JSON.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in experiment: circle_single, circle_double, plane_single or plane_double.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: the config's, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for the data-parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes train.csv and test.csv.
    GenData,
    /// Trains one classifier tag and writes its checkpoint and loss curve.
    Train(TrainArgs),
    /// Evaluates every classifier at every eps and writes risks.csv.
    Risks,
    /// Runs gen-data, train and risks; all presets when no config is given.
    All,
    /// Checks the interval construction and writes tightness.csv.
    Tightness(TightnessArgs),
    /// Classifies random points of the tubular neighborhood and writes boundary.csv.
    BoundaryDump(DumpArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// f, f_adv or f_nor.
    #[arg(long)]
    tag: String,
    /// Training budget; every config eps when omitted. Zero trains a standard model.
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Debug, Args)]
struct TightnessArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![3, 5, 10, 50])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    /// Probe points per axis of the brute-force check.
    #[arg(long, default_value_t = 1000)]
    probes: usize,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 1000)]
    n_probe: usize,
    /// Largest normal offset of a probe.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Circle2d,
    Plane3d,
    Interval1d,
}

impl From<Kind> for ManifoldKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Circle2d => ManifoldKind::Circle2d,
            Kind::Plane3d => ManifoldKind::Plane3d,
            Kind::Interval1d => ManifoldKind::Interval1d,
        }
    }
}

/// Outcome of a command that completed: whether every check passed.
type Passed = bool;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<Passed> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    match &cli.command {
        Command::GenData => {
            let (cfg, out) = load(cli)?;
            gen_data(&cfg, &out)?;
            Ok(true)
        }
        Command::Train(args) => {
            let (cfg, out) = load(cli)?;
            cmd_train(&cfg, &out, args)?;
            Ok(true)
        }
        Command::Risks => {
            let (cfg, out) = load(cli)?;
            risks(&cfg, &out)
        }
        Command::All if cli.config.is_none() && cli.preset.is_none() => {
            let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let mut passed = true;
            for name in PRESETS {
                let cfg = apply_seed(ExperimentConfig::preset(name)?, cli);
                passed &= all(&cfg, &root.join(name))?;
            }
            Ok(passed)
        }
        Command::All => {
            let (cfg, out) = load(cli)?;
            all(&cfg, &out)
        }
        Command::Tightness(args) => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            tightness(&out, args)
        }
        Command::BoundaryDump(args) => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let base = cli.seed.unwrap_or(0);
            boundary_dump(&out, args, base)?;
            Ok(true)
        }
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_: usize) -> Result<()> {
    Ok(())
}

fn apply_seed(cfg: ExperimentConfig, cli: &Cli) -> ExperimentConfig {
    match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    }
}

/// Resolves the config (file, preset, or the circle_single default) and the output directory.
fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            ExperimentConfig::from_json(&text)?
        }
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::preset("circle_single")?,
    };
    let cfg = apply_seed(cfg, cli);
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

/// Writes `path` through a temporary file in the same directory, then renames it.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().flush().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let kind = cfg.dataset.kind;
    for (name, set) in [("train", cfg.train_set()?), ("test", cfg.test_set()?)] {
        let path = out.join(format!("{name}.csv"));
        write_atomic(&path, |w| Ok(write_dataset_csv(kind, &set, w)?))?;
        let pos = set.iter().filter(|s| s.y > 0.0).count();
        println!(
            "{}: {} rows, {pos} labelled +1, {} labelled -1",
            path.display(),
            set.len(),
            set.len() - pos
        );
    }
    Ok(())
}

fn model_path(out: &Path, stem: &str) -> PathBuf {
    out.join("models").join(format!("{stem}.json"))
}

fn save_model(out: &Path, m: &TrainedModel) -> Result<()> {
    let stem = m.stem();
    let json = m.trained.classifier.to_json()?;
    write_atomic(&model_path(out, &stem), |w| {
        w.write_all(json.as_bytes()).map_err(io_err(&model_path(out, &stem)))
    })?;
    let loss_path = out.join("models").join(format!("{stem}_loss.csv"));
    write_atomic(&loss_path, |w| {
        let mut c = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| CliError::Core(e.into());
        c.write_record(["epoch", "loss"]).map_err(csv_err)?;
        for (i, l) in m.trained.losses.iter().enumerate() {
            c.write_record([(i + 1).to_string(), format!("{l:.16e}")])
                .map_err(csv_err)?;
        }
        c.flush().map_err(io_err(&loss_path))
    })?;
    println!(
        "{}: {} epochs, final loss {:.6}",
        stem,
        m.trained.losses.len(),
        m.trained.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path, args: &TrainArgs) -> Result<()> {
    let tag = ClassifierTag::parse(&args.tag)?;
    let models = match args.eps {
        None => train_tag(cfg, tag, &cfg.train_set()?)?,
        Some(_) if !tag.per_eps() => return Err(CliError::Usage(format!("{} takes no --eps", tag.name()))),
        Some(e) if !(e >= 0.0 && e < cfg.dataset.kind.tubular_radius()) => {
            return Err(CliError::Usage(format!(
                "--eps {e} is outside [0, {})",
                cfg.dataset.kind.tubular_radius()
            )))
        }
        Some(e) => {
            let trained = train(&cfg.train_set()?, &cfg.recipe(tag, e)?)?;
            vec![TrainedModel {
                tag,
                eps: Some(e),
                trained,
            }]
        }
    };
    for m in &models {
        save_model(out, m)?;
    }
    Ok(())
}

/// Loads the checkpoint for (`tag`, `eps`) if present, otherwise trains and saves it.
fn obtain(
    cfg: &ExperimentConfig,
    out: &Path,
    tag: ClassifierTag,
    eps: Option<f64>,
    train_set: &[LabeledManifoldSample],
) -> Result<Classifier> {
    let stem = match eps {
        None => tag.name().to_string(),
        Some(e) => format!("{}_eps{e}", tag.name()),
    };
    let path = model_path(out, &stem);
    if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        return Ok(Classifier::from_json(&text)?);
    }
    let trained = train(train_set, &cfg.recipe(tag, eps.unwrap_or(0.0))?)?;
    let m = TrainedModel { tag, eps, trained };
    save_model(out, &m)?;
    Ok(m.trained.classifier)
}

fn risks(cfg: &ExperimentConfig, out: &Path) -> Result<Passed> {
    cfg.validate()?;
    let test_set = cfg.test_set()?;
    let train_set = if cfg.eps.is_empty() {
        Vec::new()
    } else {
        cfg.train_set()?
    };
    let mut reports: Vec<(RiskReport, Verdict)> = Vec::new();
    if !cfg.eps.is_empty() {
        for &tag in &cfg.classifiers {
            if tag.per_eps() {
                for &e in &cfg.eps {
                    let c = obtain(cfg, out, tag, Some(e), &train_set)?;
                    reports.extend(evaluate_model(cfg, &c, tag, &[e], &test_set)?);
                }
            } else {
                let c = obtain(cfg, out, tag, None, &train_set)?;
                reports.extend(evaluate_model(cfg, &c, tag, &cfg.eps, &test_set)?);
            }
        }
    }
    let order = |name: &str| ClassifierTag::parse(name).map(|t| t as usize).unwrap_or(usize::MAX);
    reports.sort_by(|a, b| {
        a.0.eps
            .total_cmp(&b.0.eps)
            .then_with(|| order(&a.0.classifier).cmp(&order(&b.0.classifier)))
    });

    let mut passed = true;
    for (r, v) in &reports {
        for w in &v.warnings {
            eprintln!("warning: {} {} eps={}: {w}", r.dataset, r.classifier, r.eps);
        }
        if !v.passed() {
            passed = false;
            eprintln!(
                "FAIL: {} {} eps={}: margin_i {:.4}, margin_ii {:.4}, tolerance {:.4}",
                r.dataset, r.classifier, r.eps, v.margin_i, v.margin_ii, v.tolerance
            );
        }
    }
    let rows: Vec<RiskRow> = reports.iter().map(|(r, v)| RiskRow::new(r, v)).collect();
    let path = out.join("risks.csv");
    write_atomic(&path, |w| Ok(write_risk_csv(&rows, w)?))?;
    println!(
        "{}: {} rows, {}",
        path.display(),
        rows.len(),
        if passed { "all checks pass" } else { "checks FAILED" }
    );
    Ok(passed)
}

fn all(cfg: &ExperimentConfig, out: &Path) -> Result<Passed> {
    gen_data(cfg, out)?;
    let train_set = cfg.train_set()?;
    if !cfg.eps.is_empty() {
        for &tag in &cfg.classifiers {
            for m in train_tag(cfg, tag, &train_set)? {
                save_model(out, &m)?;
            }
        }
    }
    risks(cfg, out)
}

fn tightness(out: &Path, args: &TightnessArgs) -> Result<Passed> {
    let mut rows = Vec::with_capacity(args.n.len());
    let mut passed = true;
    for &n in &args.n {
        let (row, tc) = TightnessRow::compute(n, args.eps, args.probes, Exec::default())?;
        for v in row.violations(&tc, args.probes) {
            passed = false;
            eprintln!("FAIL: {v}");
        }
        rows.push(row);
    }
    let path = out.join("tightness.csv");
    write_atomic(&path, |w| Ok(write_tightness_csv(&rows, w)?))?;
    println!(
        "{}: {} rows, {}",
        path.display(),
        rows.len(),
        if passed {
            "all invariants hold"
        } else {
            "invariants FAILED"
        }
    );
    Ok(passed)
}

fn boundary_dump(out: &Path, args: &DumpArgs, base_seed: u64) -> Result<()> {
    let kind = ManifoldKind::from(args.kind);
    if args.n_probe == 0 {
        return Err(CliError::Usage("--n-probe must be at least 1".into()));
    }
    if !(args.radius >= 0.0 && args.radius < kind.tubular_radius()) {
        return Err(CliError::Usage(format!(
            "--radius must lie in [0, {})",
            kind.tubular_radius()
        )));
    }
    let text = std::fs::read_to_string(&args.checkpoint).map_err(io_err(&args.checkpoint))?;
    let model = Classifier::from_json(&text)?;
    if model.input_dim() != kind.ambient_dim() {
        return Err(CliError::Usage(format!(
            "checkpoint takes {} inputs but {} points have {}",
            model.input_dim(),
            kind.name(),
            kind.ambient_dim()
        )));
    }
    let anchors = sample_dataset(
        kind,
        LabelRule::ConstantPlusOne,
        args.n_probe,
        seed::derive(base_seed, stream::PROBE, 0),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(base_seed, stream::PROBE, 1));

    let (dd, d) = (kind.ambient_dim(), kind.intrinsic_dim());
    let header: Vec<String> = (0..dd)
        .map(|i| format!("x{i}"))
        .chain(["score".into(), "label".into(), "on_boundary".into()])
        .chain((0..dd).map(|i| format!("p{i}")))
        .chain((0..d).map(|i| format!("u{i}")))
        .collect();
    let path = out.join("boundary.csv");
    write_atomic(&path, |w| {
        let mut c = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| CliError::Core(e.into());
        c.write_record(&header).map_err(csv_err)?;
        for a in &anchors {
            let t = rng.gen_range(-args.radius..=args.radius);
            let x: Vec<f64> = a.x.iter().zip(&a.normals[0]).map(|(p, n)| p + t * n).collect();
            let s = model.score(&x);
            let label = if s > 0.0 { 1 } else { -1 };
            let row: Vec<String> = x
                .iter()
                .map(|v| format!("{v:.16e}"))
                .chain([format!("{s:.16e}"), label.to_string(), u8::from(s == 0.0).to_string()])
                .chain(a.x.iter().map(|v| format!("{v:.16e}")))
                .chain(a.u.iter().map(|v| format!("{v:.16e}")))
                .collect();
            c.write_record(&row).map_err(csv_err)?;
        }
        c.flush().map_err(io_err(&path))
    })?;
    println!("{}: {} probes", path.display(), anchors.len());
    Ok(())
}
