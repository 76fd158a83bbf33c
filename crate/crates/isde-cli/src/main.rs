//! Command-line front end: subset counting, score-table construction, exact
//! partition solving, model fitting/validation, partition-space exploration,
//! and the synthetic and Gaussian experiment suites.
//!
//! Exit codes: 0 success, 1 computation error, 2 usage or I/O error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use isde::baselines::{fit_cvkde, fit_fde, validation_score, FittedModel};
use isde::combinatorics::count_report;
use isde::data::{Dataset, SplitSpec};
use isde::gaussian::{run_gaussian_experiment, GaussianExpConfig};
use isde::kde::{BandwidthGrid, GridScale};
use isde::manifest::{ModelKind, ModelManifest};
use isde::partition_space::{edit_distance, random_partition, random_walk, NeighborSampling};
use isde::scoring::{
    gaussian_score_all_subsets, partition_score, score_all_subsets, EstimatorKind, SubsetScoreTable,
};
use isde::seed::derive;
use isde::solver::{solve_best, solve_bruteforce, solve_kbest, solve_worst, SolveResult};
use isde::synth::{run_synthetic_benchmark, Method, SyntheticBenchConfig};
use isde::{Error, Partition};

#[derive(Parser)]
#[command(
    name = "isde",
    version,
    about = "Independence-structure density estimation: held-out subset scoring, exact partition selection, baselines and experiment suites"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print |Set_d^k| and |Part_d^k| exactly.
    Count {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
    },
    /// Compute the subset score table for a CSV dataset.
    Score(ScoreArgs),
    /// Solve for optimal partitions over a saved score table.
    Solve(SolveArgs),
    /// Fit a density model and write its manifest.
    Fit(FitArgs),
    /// Re-evaluate a fitted model's mean log-density on a validation CSV.
    Validate(ValidateArgs),
    /// Best/worst/random partitions, random walks, and exhaustive score dumps.
    #[command(alias = "analyze", allow_negative_numbers = true)]
    Explore(ExploreArgs),
    /// Synthetic-structure benchmark of the structured estimator vs baselines.
    SynthBench(SynthBenchArgs),
    /// Gaussian covariance-recovery experiment.
    GaussExp(GaussExpArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Smallest candidate bandwidth.
    #[arg(long, default_value_t = 0.01)]
    grid_min: f64,
    /// Largest candidate bandwidth.
    #[arg(long, default_value_t = 1.0)]
    grid_max: f64,
    /// Number of grid values.
    #[arg(long, default_value_t = 30)]
    grid_count: usize,
    /// Grid spacing.
    #[arg(long, value_enum, default_value_t = GridScaleArg::Log)]
    grid_scale: GridScaleArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridScaleArg {
    Log,
    Linear,
}

impl GridArgs {
    fn build(&self) -> Result<BandwidthGrid, Error> {
        BandwidthGrid::new(
            self.grid_min,
            self.grid_max,
            self.grid_count,
            match self.grid_scale {
                GridScaleArg::Log => GridScale::Log,
                GridScaleArg::Linear => GridScale::Linear,
            },
        )
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Kde,
    Gaussian,
}

#[derive(Args)]
struct ScoreArgs {
    /// Input CSV of feature values.
    #[arg(long)]
    csv: PathBuf,
    /// Treat the first row as feature names.
    #[arg(long)]
    has_header: bool,
    /// Max subset size.
    #[arg(long)]
    k: usize,
    /// Estimation-sample rows (default: N/2).
    #[arg(long)]
    m: Option<usize>,
    /// Scoring-sample rows (default: N - m).
    #[arg(long)]
    n: Option<usize>,
    /// Top-level seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Marginal estimator.
    #[arg(long, value_enum, default_value_t = EstimatorArg::Kde)]
    estimator: EstimatorArg,
    /// Where to write the score table JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Score table produced by `score`.
    #[arg(long)]
    table: PathBuf,
    /// Return the K best partitions.
    #[arg(long, conflicts_with = "worst")]
    k_best: Option<usize>,
    /// Return the K worst partitions.
    #[arg(long)]
    worst: Option<usize>,
    /// Use the exhaustive enumeration oracle instead of the exact solver.
    #[arg(long, conflicts_with_all = ["k_best", "worst"])]
    brute_force: bool,
    /// Write the result JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    has_header: bool,
    /// isde | fde | cvkde | isde-gauss
    #[arg(long)]
    method: String,
    /// Max block size for structured methods (default: d).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Reuse a previously computed score table instead of scoring inline.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Where to write the model manifest JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Model manifest written by `fit`.
    #[arg(long)]
    manifest: PathBuf,
    /// The original training CSV.
    #[arg(long)]
    train: PathBuf,
    /// Validation CSV to score.
    #[arg(long)]
    valid: PathBuf,
    /// Both CSVs carry a header row.
    #[arg(long)]
    has_header: bool,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    table: PathBuf,
    /// How many best partitions to report.
    #[arg(long, default_value_t = 3)]
    best: usize,
    /// How many worst partitions to report.
    #[arg(long, default_value_t = 3)]
    worst: usize,
    /// How many random partitions to report.
    #[arg(long, default_value_t = 3)]
    random: usize,
    /// Number of random walks from the optimum.
    #[arg(long, default_value_t = 5)]
    walks: usize,
    /// Steps per walk.
    #[arg(long, default_value_t = 40)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Neighbor sampling: uniform over moves, or operation type first.
    #[arg(long, value_enum, default_value_t = SamplingArg::Uniform)]
    sampling: SamplingArg,
    /// Stream every partition's objective (guarded by the enumeration cap).
    #[arg(long)]
    exhaustive: bool,
    /// Where the exhaustive score stream goes (CSV, one objective per line).
    #[arg(long, requires = "exhaustive")]
    exhaustive_out: Option<PathBuf>,
    /// Count partitions whose objective exceeds this threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Uniform,
    TypeFirst,
}

#[derive(Args)]
struct SynthBenchArgs {
    /// Block sizes, comma separated (e.g. 2,2,1).
    #[arg(long)]
    structure: String,
    /// Training rows.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Validation rows.
    #[arg(long, default_value_t = 5000)]
    m_valid: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Methods to run, comma separated.
    #[arg(long, default_value = "isde,fde,cvkde")]
    methods: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Max block size (default: d).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    grid: GridArgs,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a per-method CSV summary.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct GaussExpArgs {
    /// Block sizes, comma separated (e.g. 4,4,1).
    #[arg(long)]
    structure: String,
    #[arg(long, default_value_t = 0.7)]
    sigma: f64,
    #[arg(long, default_value_t = 6000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_sizes(s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad structure entry {t:?}")))
        })
        .collect()
}

/// 1-based display form for printed summaries.
fn show(p: &Partition) -> String {
    p.to_string()
}

#[derive(Serialize)]
struct SolveResultOut {
    partition: Partition,
    display: String,
    objective: f64,
    nodes_explored: u64,
    wall_time_seconds: f64,
}

impl From<&SolveResult> for SolveResultOut {
    fn from(r: &SolveResult) -> Self {
        SolveResultOut {
            partition: r.partition.clone(),
            display: show(&r.partition),
            objective: r.objective,
            nodes_explored: r.nodes_explored,
            wall_time_seconds: r.wall_time.as_secs_f64(),
        }
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, json.as_bytes()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn split_for(
    n_rows: usize,
    m: Option<usize>,
    n: Option<usize>,
    seed: u64,
) -> Result<SplitSpec, Error> {
    let m = m.unwrap_or(n_rows / 2);
    let n = n.unwrap_or(n_rows.saturating_sub(m));
    let spec = SplitSpec::new(m, n, derive(seed, "split", 0));
    spec.validate(n_rows)?;
    Ok(spec)
}

fn cmd_count(d: usize, k: usize) -> Result<(), Error> {
    let report = count_report(d, k)?;
    println!("S_{d}^{k} = {}", report.n_subsets);
    println!("B_{d}^{k} = {}", report.n_partitions);
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<(), Error> {
    let started = Instant::now();
    let ds = Dataset::load_csv(&args.csv, args.has_header)?;
    let split = split_for(ds.n_rows(), args.m, args.n, args.seed)?;
    let grid = args.grid.build()?;
    echo_config(&serde_json::json!({
        "command": "score",
        "csv": args.csv.display().to_string(),
        "k": args.k,
        "split": split,
        "grid": grid,
        "folds": args.folds,
        "estimator": match args.estimator { EstimatorArg::Kde => "kde", EstimatorArg::Gaussian => "gaussian" },
        "seed": args.seed,
    }));
    let table = match args.estimator {
        EstimatorArg::Kde => score_all_subsets(&ds, args.k, &split, &grid, args.folds)?,
        EstimatorArg::Gaussian => gaussian_score_all_subsets(&ds, args.k, &split)?,
    };
    table.save(&args.out)?;
    println!(
        "scored {} subsets (d={}, k={}) in {:.2}s -> {}",
        table.len(),
        table.d(),
        table.k(),
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<(), Error> {
    let table = SubsetScoreTable::load(&args.table)?;
    echo_config(&serde_json::json!({
        "command": "solve",
        "table": args.table.display().to_string(),
        "d": table.d(),
        "k": table.k(),
        "k_best": args.k_best,
        "worst": args.worst,
        "brute_force": args.brute_force,
    }));
    #[derive(Serialize)]
    struct SolveOut {
        schema_version: u32,
        mode: String,
        results: Vec<SolveResultOut>,
    }
    let (mode, results) = if args.brute_force {
        ("brute-force".to_string(), vec![solve_bruteforce(&table)?])
    } else if let Some(k) = args.k_best {
        (format!("{k}-best"), solve_kbest(&table, k)?)
    } else if let Some(k) = args.worst {
        (format!("{k}-worst"), solve_worst(&table, k)?)
    } else {
        ("best".to_string(), vec![solve_best(&table)?])
    };
    for r in &results {
        eprintln!("{}  objective {:.6}", show(&r.partition), r.objective);
    }
    emit(
        &SolveOut {
            schema_version: 1,
            mode,
            results: results.iter().map(SolveResultOut::from).collect(),
        },
        args.out.as_ref(),
    )
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    let method: ModelKind = args.method.parse()?;
    let ds = Dataset::load_csv(&args.csv, args.has_header)?;
    let d = ds.n_features();
    let k = args.k.unwrap_or(d);
    let grid = args.grid.build()?;
    echo_config(&serde_json::json!({
        "command": "fit",
        "csv": args.csv.display().to_string(),
        "method": args.method,
        "k": k,
        "grid": grid,
        "folds": args.folds,
        "seed": args.seed,
        "table": args.table.as_ref().map(|p| p.display().to_string()),
    }));

    let load_or_score =
        |estimator: EstimatorKind, split: &SplitSpec| -> Result<SubsetScoreTable, Error> {
            if let Some(path) = &args.table {
                let table = SubsetScoreTable::load(path)?;
                if table.d() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: table.d(),
                    });
                }
                if table.estimator() != estimator {
                    return Err(Error::InvalidArgument(
                        "score table estimator does not match the fit method".into(),
                    ));
                }
                Ok(table)
            } else {
                match estimator {
                    EstimatorKind::Kde => score_all_subsets(&ds, k, split, &grid, args.folds),
                    EstimatorKind::Gaussian => gaussian_score_all_subsets(&ds, k, split),
                }
            }
        };

    let manifest = match method {
        ModelKind::Isde => {
            let split = split_for(ds.n_rows(), args.m, args.n, args.seed)?;
            let table = load_or_score(EstimatorKind::Kde, &split)?;
            let split = *table.split();
            let best = solve_best(&table)?;
            let (w, _) = ds.split(&split)?;
            let model = FittedModel::from_table(&table, &w, &best.partition)?;
            eprintln!(
                "selected partition {}  l_n = {:.6}",
                show(&best.partition),
                best.objective
            );
            ModelManifest::for_isde(&model, table.k(), split, grid, args.folds, best.objective)
        }
        ModelKind::IsdeGauss => {
            let split = split_for(ds.n_rows(), args.m, args.n, args.seed)?;
            let table = load_or_score(EstimatorKind::Gaussian, &split)?;
            let split = *table.split();
            let best = solve_best(&table)?;
            let (w, _) = ds.split(&split)?;
            let model = FittedModel::from_table(&table, &w, &best.partition)?;
            eprintln!(
                "selected partition {}  l_n = {:.6}",
                show(&best.partition),
                best.objective
            );
            ModelManifest::for_isde_gauss(&model, table.k(), split, best.objective)
        }
        ModelKind::Fde => {
            let split = split_for(ds.n_rows(), args.m, args.n, args.seed)?;
            let table = if args.table.is_some() {
                load_or_score(EstimatorKind::Kde, &split)?
            } else {
                score_all_subsets(&ds, 2.min(d), &split, &grid, args.folds)?
            };
            let split = *table.split();
            let (w, _) = ds.split(&split)?;
            let model = fit_fde(&table, &w)?;
            eprintln!(
                "selected forest with {} edges",
                model.forest().edges().len()
            );
            ModelManifest::for_fde(&model, split, grid, args.folds)
        }
        ModelKind::Cvkde => {
            let cv_seed = derive(args.seed, "cvkde", 0);
            let model = fit_cvkde(&ds, &grid, args.folds, cv_seed)?;
            eprintln!("selected bandwidth {:.6}", model.bandwidth());
            ModelManifest::for_cvkde(&model, grid, args.folds, cv_seed)
        }
    };
    manifest.save(&args.out)?;
    eprintln!("manifest -> {}", args.out.display());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), Error> {
    let manifest = ModelManifest::load(&args.manifest)?;
    echo_config(&serde_json::json!({
        "command": "validate",
        "manifest": args.manifest.display().to_string(),
        "train": args.train.display().to_string(),
        "valid": args.valid.display().to_string(),
    }));
    let train = Dataset::load_csv(&args.train, args.has_header)?;
    let valid = Dataset::load_csv(&args.valid, args.has_header)?;
    if valid.n_features() != manifest.d {
        return Err(Error::DimensionMismatch {
            expected: manifest.d,
            got: valid.n_features(),
        });
    }
    let model = manifest.rebuild(&train)?;
    let score = validation_score(&model, &valid)?;
    #[derive(Serialize)]
    struct ValidateOut {
        schema_version: u32,
        rows: usize,
        score: f64,
    }
    emit(
        &ValidateOut {
            schema_version: 1,
            rows: valid.n_rows(),
            score,
        },
        None,
    )
}

#[derive(Serialize)]
struct PartitionRow {
    partition: Partition,
    display: String,
    objective: f64,
    edit_distance_from_optimum: usize,
}

fn cmd_explore(args: &ExploreArgs) -> Result<(), Error> {
    let table = SubsetScoreTable::load(&args.table)?;
    let d = table.d();
    let k = table.k();
    echo_config(&serde_json::json!({
        "command": "explore",
        "table": args.table.display().to_string(),
        "best": args.best,
        "worst": args.worst,
        "random": args.random,
        "walks": args.walks,
        "length": args.length,
        "seed": args.seed,
        "exhaustive": args.exhaustive,
        "threshold": args.threshold,
    }));
    let optimum = solve_best(&table)?;

    let row = |p: &Partition| -> Result<PartitionRow, Error> {
        Ok(PartitionRow {
            partition: p.clone(),
            display: show(p),
            objective: partition_score(&table, p)?,
            edit_distance_from_optimum: edit_distance(&optimum.partition, p)?,
        })
    };

    let best: Vec<PartitionRow> = solve_kbest(&table, args.best)?
        .iter()
        .map(|r| row(&r.partition))
        .collect::<Result<_, _>>()?;
    let worst: Vec<PartitionRow> = solve_worst(&table, args.worst)?
        .iter()
        .map(|r| row(&r.partition))
        .collect::<Result<_, _>>()?;
    let random: Vec<PartitionRow> = (0..args.random)
        .map(|i| {
            row(&random_partition(
                d,
                k,
                derive(args.seed, "random", i as u64),
            )?)
        })
        .collect::<Result<_, _>>()?;

    let sampling = match args.sampling {
        SamplingArg::Uniform => NeighborSampling::Uniform,
        SamplingArg::TypeFirst => NeighborSampling::TypeFirst,
    };
    #[derive(Serialize)]
    struct WalkOut {
        seed: u64,
        steps: Vec<PartitionRow>,
    }
    let mut walks = Vec::with_capacity(args.walks);
    for wi in 0..args.walks {
        let seed = derive(args.seed, "walk", wi as u64);
        let trace = random_walk(&optimum.partition, args.length, k, seed, sampling)?;
        walks.push(WalkOut {
            seed,
            steps: trace.steps.iter().map(row).collect::<Result<_, _>>()?,
        });
    }

    #[derive(Serialize)]
    struct ThresholdOut {
        threshold: f64,
        count_above: u64,
    }
    #[derive(Serialize)]
    struct ExploreOut {
        schema_version: u32,
        optimum: PartitionRow,
        best: Vec<PartitionRow>,
        worst: Vec<PartitionRow>,
        random: Vec<PartitionRow>,
        walks: Vec<WalkOut>,
        #[serde(skip_serializing_if = "Option::is_none")]
        exhaustive_scores_written: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        threshold: Option<ThresholdOut>,
    }

    let mut exhaustive_scores_written = None;
    let mut threshold_out = None;
    if args.exhaustive || args.threshold.is_some() {
        // enumerate_partitions enforces the guard of PARTITION_ENUM_GUARD
        let mut writer: Option<std::io::BufWriter<std::fs::File>> = args
            .exhaustive_out
            .as_ref()
            .map(|path| -> Result<_, Error> {
                let f = std::fs::File::create(path).map_err(|source| Error::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                Ok(std::io::BufWriter::new(f))
            })
            .transpose()?;
        let mut written = 0u64;
        let mut above = 0u64;
        for p in isde::combinatorics::enumerate_partitions(d, k)? {
            let score = partition_score(&table, &p)?;
            if let Some(w) = writer.as_mut() {
                use std::io::Write;
                writeln!(w, "{score}").map_err(|source| Error::Io {
                    path: "exhaustive stream".into(),
                    source,
                })?;
                written += 1;
            }
            if let Some(t) = args.threshold {
                if score > t {
                    above += 1;
                }
            }
        }
        if writer.is_some() {
            exhaustive_scores_written = Some(written);
        }
        if let Some(t) = args.threshold {
            threshold_out = Some(ThresholdOut {
                threshold: t,
                count_above: above,
            });
        }
    }

    emit(
        &ExploreOut {
            schema_version: 1,
            optimum: row(&optimum.partition)?,
            best,
            worst,
            random,
            walks,
            exhaustive_scores_written,
            threshold: threshold_out,
        },
        args.out.as_ref(),
    )
}

fn cmd_synth_bench(args: &SynthBenchArgs) -> Result<(), Error> {
    let sizes = parse_sizes(&args.structure)?;
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    let mut cfg = SyntheticBenchConfig::new(sizes, args.n, args.m_valid, args.seed);
    cfg.methods = methods;
    cfg.repeats = args.repeats;
    cfg.k = args.k;
    cfg.folds = args.folds;
    cfg.grid = args.grid.build()?;
    let started = Instant::now();
    let report = run_synthetic_benchmark(&cfg)?;
    for m in &report.methods {
        eprintln!(
            "{:<6} {:>8.4} +- {:.4}",
            format!("{:?}", m.method).to_lowercase(),
            m.mean,
            m.sd
        );
    }
    eprintln!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    if let Some(path) = &args.csv_out {
        let mut csv = String::from("method,mean,sd,scores\n");
        for m in &report.methods {
            let scores: Vec<String> = m.scores.iter().map(f64::to_string).collect();
            csv.push_str(&format!(
                "{:?},{},{},{}\n",
                m.method,
                m.mean,
                m.sd,
                scores.join(";")
            ));
        }
        std::fs::write(path, csv).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    #[derive(Serialize)]
    struct BenchOut<'a> {
        schema_version: u32,
        config: &'a SyntheticBenchConfig,
        report: &'a isde::synth::SyntheticBenchReport,
        elapsed_seconds: f64,
    }
    emit(
        &BenchOut {
            schema_version: 1,
            config: &cfg,
            report: &report,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        },
        args.out.as_ref(),
    )
}

fn cmd_gauss_exp(args: &GaussExpArgs) -> Result<(), Error> {
    let cfg = GaussianExpConfig {
        sizes: parse_sizes(&args.structure)?,
        sigma: args.sigma,
        n_rows: args.n,
        repeats: args.repeats,
        seed: args.seed,
    };
    let started = Instant::now();
    let report = run_gaussian_experiment(&cfg)?;
    eprintln!(
        "KL x1000: structured {:.2} +- {:.2} | empirical {:.2} +- {:.2}",
        report.isde.mean_x1000,
        report.isde.sd_x1000,
        report.empirical.mean_x1000,
        report.empirical.sd_x1000
    );
    eprintln!(
        "recovery {:.0}% (admissible {:.0}%)",
        report.recovery_percent, report.admissibility_percent
    );
    #[derive(Serialize)]
    struct GaussOut<'a> {
        schema_version: u32,
        report: &'a isde::gaussian::GaussianExpReport,
        elapsed_seconds: f64,
    }
    emit(
        &GaussOut {
            schema_version: 1,
            report: &report,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        },
        args.out.as_ref(),
    )
}

/// Resolved run configuration, echoed to stderr so every run records what it
/// actually did (timing and outputs stay on their own channels).
fn echo_config(config: &serde_json::Value) {
    eprintln!("config: {config}");
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. }
        | Error::Csv { .. }
        | Error::BadCell { .. }
        | Error::NonFinite { .. }
        | Error::EmptyDataset(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(workers) = std::env::var("ISDE_WORKERS") {
        if let Ok(n) = workers.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Count { d, k } => cmd_count(*d, *k),
        Command::Score(args) => cmd_score(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Explore(args) => cmd_explore(args),
        Command::SynthBench(args) => cmd_synth_bench(args),
        Command::GaussExp(args) => cmd_gauss_exp(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
