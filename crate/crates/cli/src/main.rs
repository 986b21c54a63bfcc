use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use subgauss::dataset::{load_csv, write_csv, ColumnRef, CsvOptions, LabeledDataset};
use subgauss::evaluate::{classification_error, clustering_error};
use subgauss::mixture::CovFlavor;
use subgauss::modes::hmac_ladder;
use subgauss::pipeline::{cross_validate, emit_plotdata, emit_report, run_method, ExperimentConfig, FittedModel, Method, RunOutcome, Task};
use subgauss::synth::{gen_constrained_synthetic, gen_waveform, SyntheticOptions};

#[derive(Parser)]
#[command(name = "subgauss", version, about = "Gaussian mixtures with component means in a pre-selected subspace")]
struct Cli {
    /// Worker threads for parallel fits (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a classifier and evaluate it on a test set.
    Fit(FitArgs),
    /// Label new data with a saved model.
    Classify(ClassifyArgs),
    /// Fit a one-class mixture and report cluster assignments.
    Cluster(FitArgs),
    /// Compute the mode ladder over a bandwidth grid without fitting.
    Sweep(SweepArgs),
    /// Generate a synthetic data set.
    Gen(GenArgs),
    /// Cross-validate a method, or score saved predictions.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Training data (CSV).
    #[arg(long)]
    data: PathBuf,
    /// The CSV files have no header row.
    #[arg(long)]
    no_header: bool,
    /// Label column: "last", a 1-based position, or a header name.
    #[arg(long, default_value = "last")]
    label_column: String,
    /// The files carry no labels.
    #[arg(long)]
    unlabeled: bool,
    /// Scale features to unit variance (using the training data's deviations).
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn options(&self) -> Result<CsvOptions> {
        Ok(CsvOptions {
            has_header: !self.no_header,
            label_column: if self.unlabeled { None } else { Some(self.label_column.parse::<ColumnRef>()?) },
        })
    }

    fn read(&self, path: &Path) -> Result<LabeledDataset> {
        load_csv(path, &self.options()?).with_context(|| format!("reading {}", path.display()))
    }

    /// The training file, standardized if requested.
    fn load(&self) -> Result<LabeledDataset> {
        let ds = self.read(&self.data)?;
        Ok(if self.standardize { ds.standardized() } else { ds })
    }

    /// Another file in the same layout, scaled like `train`'s raw data.
    fn load_like(&self, path: &Path) -> Result<LabeledDataset> {
        let ds = self.read(path)?;
        Ok(if self.standardize { ds.scaled_like(&self.read(&self.data)?) } else { ds })
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Subspace dimension (rank for MDA-RR).
    #[arg(long)]
    d: Option<usize>,
    /// Components per class.
    #[arg(long)]
    components: Option<usize>,
    /// Smallest bandwidth, as a multiple of the largest feature deviation.
    #[arg(long)]
    lo: Option<f64>,
    /// Largest bandwidth multiple.
    #[arg(long)]
    hi: Option<f64>,
    /// Number of bandwidths.
    #[arg(long)]
    levels: Option<usize>,
    /// Percent weight on class means (MPCA-MEAN methods).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    cov: Option<CovArg>,
    /// Cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, env = "SUBGAUSS_SEED")]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Full,
    Diagonal,
}

impl ConfigArgs {
    fn resolve(&self, task: Task) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        c.task = task;
        if let Some(m) = self.method {
            c.method = m;
        }
        if let Some(d) = self.d {
            c.d = d;
        }
        if let Some(r) = self.components {
            c.components = r;
        }
        if let Some(v) = self.lo {
            c.grid.lo = v;
        }
        if let Some(v) = self.hi {
            c.grid.hi = v;
        }
        if let Some(v) = self.levels {
            c.grid.count = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.cov {
            c.fit.cov = match v {
                CovArg::Full => CovFlavor::Full,
                CovArg::Diagonal => CovFlavor::Diagonal,
            };
        }
        if let Some(v) = self.folds {
            c.folds = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Test data (CSV, same layout as the training data).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write per-level plot data (CSV) here.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Save the selected model (JSON) here.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Write predicted labels (one per line) here.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Write predicted labels here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Write the mode ladder (JSON) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Waveform,
    Synthetic,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: Generator,
    /// Observations (waveform) or observations per cluster (synthetic).
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, env = "SUBGAUSS_SEED", default_value_t = 0)]
    seed: u64,
    /// Cluster-mean scale (synthetic).
    #[arg(long, default_value_t = 0.125)]
    scale: f64,
    /// Number of clusters (synthetic).
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    /// Dimension of the mean subspace (synthetic).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Write the generating subspace (JSON) here (synthetic).
    #[arg(long)]
    subspace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Score these predicted labels (one per line) against the data's labels
    /// instead of cross-validating.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Match predicted clusters to classes before scoring.
    #[arg(long)]
    clustering: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    match cli.command {
        Command::Fit(a) => fit(a, Task::Classify),
        Command::Cluster(a) => fit(a, Task::Cluster),
        Command::Classify(a) => classify(a),
        Command::Sweep(a) => sweep(a),
        Command::Gen(a) => generate(a),
        Command::Eval(a) => eval(a),
    }
}

fn class_name(ds: &LabeledDataset, label: usize) -> String {
    ds.class_names().get(label).cloned().unwrap_or_else(|| (label + 1).to_string())
}

fn write_labels(path: Option<&Path>, labels: &[String]) -> Result<()> {
    let text = labels.join("\n") + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn fit(a: FitArgs, task: Task) -> Result<()> {
    let config = a.config.resolve(task)?;
    let train = a.data.load()?;
    let test = a.test.as_deref().map(|p| a.data.load_like(p)).transpose()?;
    let RunOutcome { mut report, model } = run_method(&config, &train, test.as_ref())?;
    if let Some(p) = &a.model {
        std::fs::write(p, model.to_json()?).with_context(|| format!("writing {}", p.display()))?;
        report.model_path = Some(p.display().to_string());
    }
    if let Some(p) = &a.report {
        emit_report(&report, p)?;
    }
    if let Some(p) = &a.plot {
        emit_plotdata(&report, p)?;
    }
    let (target, names) = match (task, &test) {
        (Task::Classify, Some(t)) => (t, &train),
        _ => (&train, &train),
    };
    let labels = model.predict(target.x())?;
    if let Some(p) = &a.predictions {
        let shown: Vec<String> = match task {
            Task::Classify => labels.iter().map(|&l| class_name(names, l)).collect(),
            Task::Cluster => labels.iter().map(|l| (l + 1).to_string()).collect(),
        };
        write_labels(Some(p), &shown)?;
    }
    let sel = &report.levels[report.selected];
    println!(
        "{} d={} selected level {}{} log-likelihood {:.4}",
        report.method,
        report.d,
        sel.level,
        sel.sigma.map(|s| format!(" (sigma {s:.4})")).unwrap_or_default(),
        report.log_likelihood
    );
    if let Some(e) = report.error_rate() {
        println!("{} error on {}: {:.2}%", if task == Task::Cluster { "clustering" } else { "classification" }, report.evaluated_on, 100.0 * e);
    }
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let model = FittedModel::from_json(&text)?;
    let ds = a.data.load()?;
    let labels = model.predict(ds.x())?;
    let shown: Vec<String> = labels.iter().map(|l| (l + 1).to_string()).collect();
    write_labels(a.out.as_deref(), &shown)?;
    if let Some(truth) = ds.labels() {
        if truth.iter().chain(&labels).all(|&l| l < ds.k()) {
            let r = classification_error(truth, &labels, ds.k())?;
            eprintln!("error against file labels: {:.2}%", 100.0 * r.error_rate);
        }
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let config = a.config.resolve(Task::Classify)?;
    let ds = a.data.load()?;
    let s_hat = subgauss::dataset::sigma_hat(ds.x());
    let ladder = hmac_ladder(ds.x(), &config.grid.sigmas(s_hat), &config.ladder)?;
    println!("level,sigma,modes");
    for (i, l) in ladder.levels.iter().enumerate() {
        println!("{},{},{}", i + 1, l.sigma, l.len());
    }
    if let Some(p) = &a.out {
        std::fs::write(p, ladder.to_json()?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn generate(a: GenArgs) -> Result<()> {
    let ds = match a.kind {
        Generator::Waveform => gen_waveform(a.n, a.seed)?,
        Generator::Synthetic => {
            let (ds, truth) = gen_constrained_synthetic(a.dim, a.clusters, a.scale, a.n, a.seed, &SyntheticOptions::default())?;
            if let Some(p) = &a.subspace {
                std::fs::write(p, truth.to_json()?).with_context(|| format!("writing {}", p.display()))?;
            }
            ds
        }
    };
    write_csv(&ds, &a.out)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ds = a.data.load()?;
    if let Some(p) = &a.predictions {
        let Some(truth) = ds.labels() else { bail!("scoring predictions needs labeled data") };
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let pred = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_label(&ds, l.trim(), a.clustering))
            .collect::<Result<Vec<_>>>()?;
        let r = if a.clustering {
            clustering_error(truth, &pred, ds.k())?
        } else {
            classification_error(truth, &pred, ds.k())?
        };
        println!("error: {:.2}%", 100.0 * r.error_rate);
        if let Some(out) = &a.report {
            emit_report(&r, out)?;
        }
        return Ok(());
    }
    let config = a.config.resolve(Task::Classify)?;
    if config.folds < 2 {
        bail!("cross-validation needs --folds >= 2 (or pass --predictions)");
    }
    let r = cross_validate(&config, &ds)?;
    for (i, e) in r.per_fold.iter().enumerate() {
        println!("fold {}: {:.2}%", i + 1, 100.0 * e);
    }
    println!("{} mean error over {} folds: {:.2}%", r.method, r.folds, 100.0 * r.mean_error);
    if let Some(out) = &a.report {
        emit_report(&r, out)?;
    }
    Ok(())
}

/// Class names map back to their indices; clusters are 1-based numbers.
fn parse_label(ds: &LabeledDataset, s: &str, clustering: bool) -> Result<usize> {
    if !clustering {
        if let Some(i) = ds.class_names().iter().position(|n| n == s) {
            return Ok(i);
        }
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n - 1),
        _ => bail!("unrecognized label {s:?}"),
    }
}
