use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use ntclust::data_io::{self, MatrixFormat};
use ntclust::metrics::{self, MapDiagnostics, Partition};
use ntclust::{assign_batch, fit, Assignment, Error, FitResult, HyperParams};

#[derive(Parser)]
#[command(name = "ntc", version, about = "Nonlinear transform clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate Gaussian clusters.
    Synth(SynthArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Assign samples with a trained model.
    Assign(AssignArgs),
    /// Compare predicted and true labels.
    Eval(EvalArgs),
    /// k-NN accuracy over representations.
    Knn(KnnArgs),
    /// Print model dimensions and map diagnostics.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    per_cluster: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data file (`.csv` or binary).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct LabelOpts {
    /// Report the dissimilarity index instead of the flat candidate index.
    #[arg(long)]
    collapse_similarity: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON hyperparameter file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_model: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Independent runs with consecutive seeds; the lowest final objective wins.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Keep the map fixed to the identity.
    #[arg(long)]
    identity: bool,
    /// Standardize each sample before training.
    #[arg(long)]
    standardize: bool,
    /// Labels of the kept run.
    #[arg(long)]
    out_labels: Option<PathBuf>,
    /// True labels, for per-run CA and NMI.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    labels: LabelOpts,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
    /// Representations, one sample per row.
    #[arg(long)]
    out_repr: Option<PathBuf>,
    #[arg(long)]
    standardize: bool,
    #[command(flatten)]
    labels: LabelOpts,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct KnnArgs {
    #[arg(long)]
    train_repr: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_repr: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

/// Exit codes: 1 usage, 2 data, 3 numeric.
fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_numeric() => 3,
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Assign(a) => assign(a),
        Command::Eval(a) => eval(a),
        Command::Knn(a) => knn(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_data(path: &Path, standardize: bool) -> ntclust::Result<DMatrix<f64>> {
    let x = data_io::load_matrix(path, MatrixFormat::from_path(path))?;
    if standardize {
        data_io::standardize(&x)
    } else {
        Ok(x)
    }
}

fn labels_of(assignments: &[Assignment], opts: &LabelOpts) -> Vec<usize> {
    assignments
        .iter()
        .map(|a| {
            if opts.collapse_similarity {
                a.dissimilarity_label()
            } else {
                a.flat_index
            }
        })
        .collect()
}

fn synth(a: SynthArgs) -> ntclust::Result<()> {
    let (x, labels) = data_io::synth_clusters(a.clusters, a.dim, a.per_cluster, a.spread, a.seed)?;
    data_io::save_matrix(&x, &a.out, MatrixFormat::from_path(&a.out))?;
    data_io::save_labels(labels.labels(), &a.labels)
}

fn read_config(path: Option<&Path>) -> ntclust::Result<HyperParams> {
    let Some(path) = path else {
        return Ok(HyperParams::default());
    };
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn print_table(fit: &FitResult) {
    println!(
        "{:>5} {:>16} {:>8} {:>10}",
        "iter", "objective", "changes", "seconds"
    );
    println!(
        "{:>5} {:>16.8e} {:>8} {:>10}",
        0, fit.report.initial_objective.total, "-", "-"
    );
    for (t, ((obj, changes), time)) in fit
        .report
        .objectives
        .iter()
        .zip(&fit.report.label_changes)
        .zip(&fit.report.wall_times)
        .enumerate()
    {
        println!(
            "{:>5} {:>16.8e} {:>8} {:>10.4}",
            t + 1,
            obj.total,
            changes,
            time.as_secs_f64()
        );
    }
}

fn train(a: TrainArgs) -> ntclust::Result<()> {
    if a.runs == 0 {
        return Err(Error::Config("--runs must be positive".into()));
    }
    let mut hyper = read_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        hyper.seed = seed;
    }
    hyper.identity |= a.identity;
    hyper.validate()?;
    let x = load_data(&a.data, a.standardize)?;
    let truth = a.truth.as_deref().map(data_io::load_labels).transpose()?;

    let mut best: Option<(FitResult, HyperParams)> = None;
    for r in 0..a.runs {
        let run_hyper = HyperParams {
            seed: hyper.seed.wrapping_add(r),
            ..hyper.clone()
        };
        let result = fit(&x, &run_hyper, None)?;
        println!("run {} (seed {})", r + 1, run_hyper.seed);
        print_table(&result);
        let objective = result.report.final_objective();
        let mut summary = format!("run {} final objective {objective:.8e}", r + 1);
        if let Some(truth) = &truth {
            let pred = Partition::new(labels_of(&result.assignments, &a.labels))?;
            summary += &format!(
                " CA={:.4} NMI={:.4}",
                metrics::cluster_accuracy(&pred, truth)?,
                metrics::nmi(&pred, truth)?
            );
        }
        println!("{summary}");
        if best
            .as_ref()
            .is_none_or(|(b, _)| objective < b.report.final_objective())
        {
            best = Some((result, run_hyper));
        }
    }
    let (result, run_hyper) = best.expect("at least one run");
    data_io::save_model(&result.model, &run_hyper, &a.out_model)?;
    if let Some(path) = &a.out_labels {
        data_io::save_labels(&labels_of(&result.assignments, &a.labels), path)?;
    }
    Ok(())
}

fn assign(a: AssignArgs) -> ntclust::Result<()> {
    let file = data_io::load_model(&a.model)?;
    let x = load_data(&a.data, a.standardize)?;
    let q = file.model.project(&x)?;
    let assignments = assign_batch(&q, &file.model.params, &file.hyper)?;
    data_io::save_labels(&labels_of(&assignments, &a.labels), &a.out_labels)?;
    if let Some(path) = &a.out_repr {
        let m = file.model.output_dim();
        let mut repr = DMatrix::zeros(m, assignments.len());
        for (j, asg) in assignments.iter().enumerate() {
            repr.column_mut(j).copy_from_slice(&asg.y);
        }
        data_io::save_matrix(&repr, path, MatrixFormat::from_path(path))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> ntclust::Result<()> {
    let pred = data_io::load_labels(&a.pred)?;
    let truth = data_io::load_labels(&a.truth)?;
    let ca = metrics::cluster_accuracy(&pred, &truth)?;
    let nmi = metrics::nmi(&pred, &truth)?;
    println!("CA={ca:.4} NMI={nmi:.4}");
    Ok(())
}

fn knn(a: KnnArgs) -> ntclust::Result<()> {
    let train = data_io::load_matrix(&a.train_repr, MatrixFormat::from_path(&a.train_repr))?;
    let test = data_io::load_matrix(&a.test_repr, MatrixFormat::from_path(&a.test_repr))?;
    let train_labels = data_io::load_labels(&a.train_labels)?;
    let test_labels = data_io::load_labels(&a.test_labels)?;
    if test_labels.len() != test.ncols() {
        return Err(Error::Data(format!(
            "{} test labels for {} test samples",
            test_labels.len(),
            test.ncols()
        )));
    }
    let pred = metrics::knn_classify(&train, &train_labels, &test, a.k)?;
    let hits = pred
        .labels()
        .iter()
        .zip(test_labels.labels())
        .filter(|(p, t)| p == t)
        .count();
    println!("accuracy={:.4}", hits as f64 / test.ncols() as f64);
    Ok(())
}

fn inspect(a: InspectArgs) -> ntclust::Result<()> {
    let file = data_io::load_model(&a.model)?;
    let model = &file.model;
    let diag = MapDiagnostics::of(&model.a)?;
    println!("M={}", model.output_dim());
    println!("N={}", model.input_dim());
    println!("C_d={}", model.params.n_dissimilar());
    println!("C_s={}", model.params.n_similar());
    println!("identity={}", model.identity_mode);
    println!("kappa={:.6}", diag.kappa);
    println!("mu={:.6}", diag.mu);
    Ok(())
}
