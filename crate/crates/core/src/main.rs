use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use optmark::harness::{self, Format, GeneratorChoice, GridSpec, ScoreSource, SweepConfig};
use optmark::policy::{StepRule, TrainConfig};
use optmark::sampler::DEFAULT_MAX_PROPOSALS;
use optmark::{CsvOptions, Error, FiniteDistribution, ScoreFunction, ThresholdDetector, WatermarkPlan};

#[derive(Parser)]
#[command(
    name = "optmark",
    version,
    about = "Optimal watermark bounds, construction and sampling"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Primary output file (stdout if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Lower bound on the divergence for a pair of error rates.
    Bound {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value = "kl")]
        div: String,
    },
    /// Achieved false-positive rate for each threshold.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated thresholds; defaults to score quantiles.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
    },
    /// The optimal watermarked distribution.
    Exact {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        beta: f64,
    },
    /// Draw watermarked samples by two-rate rejection sampling.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_PROPOSALS)]
        max_proposals: u64,
        /// Sampler statistics JSON (stderr if absent).
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// Train a softmax policy on the watermark reward.
    Rl {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        beta: f64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Best-of-m selection against the bound.
    BestOfM {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// Monte Carlo draws compared with the exact law (0 skips).
        #[arg(long, default_value_t = 0)]
        n: usize,
    },
    /// Divergence against the bound over a threshold and beta grid.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value = "kl")]
        div: String,
        /// exact, rejection, rl or best-of-<m>
        #[arg(long, default_value = "exact")]
        generator: String,
        #[arg(long, default_value_t = harness::DEFAULT_BOOTSTRAP_RESAMPLES)]
        bootstrap: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_PROPOSALS)]
        max_proposals: u64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// The bound next to the earlier bound over a grid of rates.
    CompareBounds {
        #[arg(long, default_value_t = 0.05)]
        start: f64,
        #[arg(long, default_value_t = 0.45)]
        stop: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV; each distinct row is a state.
    #[arg(long)]
    data: PathBuf,
    /// The dataset has no header row.
    #[arg(long)]
    no_header: bool,
    /// Merge identical rows into one state weighted by multiplicity.
    #[arg(long)]
    dedupe: bool,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Score file (state_id or payload_sha256, score).
    #[arg(long, conflicts_with = "key")]
    scores: Option<PathBuf>,
    /// Key for the built-in keyed-hash score.
    #[arg(long)]
    key: Option<String>,
}

impl DataArgs {
    fn options(&self) -> Result<CsvOptions, Error> {
        if !self.delimiter.is_ascii() {
            return Err(Error::Domain("delimiter must be a single ASCII character".into()));
        }
        Ok(CsvOptions {
            has_header: !self.no_header,
            dedupe: self.dedupe,
            delimiter: self.delimiter as u8,
        })
    }

    fn load(&self) -> Result<(FiniteDistribution, ScoreFunction), Error> {
        let dist = harness::load_dataset(&self.data, self.options()?)?;
        let source = match (&self.scores, &self.key) {
            (Some(path), _) => ScoreSource::File(path.clone()),
            (None, Some(key)) => ScoreSource::KeyedHash(key.clone()),
            (None, None) => ScoreSource::KeyedHash(String::new()),
        };
        let score = source.load(&dist)?;
        Ok((dist, score))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = StepArg::Natural)]
    step: StepArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    Natural,
    Plain,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            max_iters: self.max_iters,
            tol: self.tol,
            step: match self.step {
                StepArg::Natural => StepRule::Natural,
                StepArg::Plain => StepRule::Plain,
            },
        }
    }
}

#[derive(Serialize)]
struct ExactOutput {
    plan: optmark::optimal::PlanExport,
    distribution: Vec<optmark::distribution::MassRecord>,
}

#[derive(Serialize)]
struct PolicyRow {
    id: usize,
    logit: f64,
    probability: f64,
    optimal_mass: f64,
}

#[derive(Serialize)]
struct SweepJson<'a> {
    metadata: &'a harness::SweepMetadata,
    records: &'a [harness::SweepRecord],
}

struct Outcome {
    text: String,
    /// Exit with the budget/non-convergence code after writing output.
    not_converged: bool,
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let format = Format::from(cli.format);
    let mut not_converged = false;
    let text = match &cli.command {
        Command::Bound { alpha, beta, div } => {
            let report = harness::bound_report(*alpha, *beta, div)?;
            match format {
                Format::Csv => harness::to_csv(&[report])?,
                Format::Json => harness::to_json(&report)?,
            }
        }
        Command::Calibrate { data, taus } => {
            let (dist, score) = data.load()?;
            harness::render(&harness::calibration(&dist, &score, taus.as_deref())?, format)?
        }
        Command::Exact { data, tau, beta } => {
            let plan = plan_for(data, *tau, *beta)?;
            let distribution = plan.optimal_distribution().export();
            match format {
                Format::Csv => harness::to_csv(&distribution)?,
                Format::Json => harness::to_json(&ExactOutput {
                    plan: plan.export(),
                    distribution,
                })?,
            }
        }
        Command::Embed {
            data,
            tau,
            beta,
            n,
            max_proposals,
            stats_out,
        } => {
            let plan = plan_for(data, *tau, *beta)?;
            let (ids, stats) = harness::embed(&plan, *n, cli.seed, *max_proposals)?;
            let stats_json = harness::to_json(&stats)?;
            match stats_out {
                Some(path) => fs::write(path, stats_json)?,
                None => eprint!("{stats_json}"),
            }
            harness::render(&harness::sample_rows(plan.base(), &ids), format)?
        }
        Command::Rl { data, tau, beta, train } => {
            let plan = plan_for(data, *tau, *beta)?;
            let out = harness::rl(&plan, train.config())?;
            not_converged = !out.report.converged;
            match format {
                Format::Json => harness::to_json(&out)?,
                Format::Csv => {
                    eprint!("{}", harness::to_json(&out.report)?);
                    let policy = optmark::policy::SoftmaxPolicy::from_logits(plan.base(), out.policy.logits.clone())?;
                    let target = plan.optimal_distribution();
                    let rows: Vec<PolicyRow> = policy
                        .ids()
                        .iter()
                        .zip(policy.logits())
                        .zip(policy.probabilities())
                        .map(|((&id, &logit), probability)| PolicyRow {
                            id,
                            logit,
                            probability,
                            optimal_mass: target.mass(id),
                        })
                        .collect();
                    harness::to_csv(&rows)?
                }
            }
        }
        Command::BestOfM { data, tau, m, n } => {
            let (dist, score) = data.load()?;
            let report = harness::best_of_m_report(&dist, &score, *tau, *m, *n, cli.seed)?;
            match format {
                Format::Csv => harness::to_csv(&[report])?,
                Format::Json => harness::to_json(&report)?,
            }
        }
        Command::Sweep {
            data,
            taus,
            betas,
            n,
            div,
            generator,
            bootstrap,
            max_proposals,
            train,
        } => {
            let (dist, score) = data.load()?;
            let cfg = SweepConfig {
                taus: taus.clone(),
                betas: betas.clone().unwrap_or_else(|| harness::DEFAULT_BETAS.to_vec()),
                n_samples: *n,
                seed: cli.seed,
                divergence: div.clone(),
                generator: generator.parse::<GeneratorChoice>()?,
                bootstrap_resamples: *bootstrap,
                max_proposals: *max_proposals,
                train: train.config(),
            };
            let out = harness::sweep(&dist, &score, &cfg, data.dedupe)?;
            match format {
                Format::Csv => out.metadata.comment_lines() + &harness::to_csv(&out.records)?,
                Format::Json => harness::to_json(&SweepJson {
                    metadata: &out.metadata,
                    records: &out.records,
                })?,
            }
        }
        Command::CompareBounds { start, stop, step } => {
            let grid = GridSpec {
                start: *start,
                stop: *stop,
                step: *step,
            };
            harness::render(&harness::compare_bounds_grid(&grid)?, format)?
        }
    };
    Ok(Outcome { text, not_converged })
}

fn plan_for(data: &DataArgs, tau: f64, beta: f64) -> Result<WatermarkPlan, Error> {
    let (dist, score) = data.load()?;
    WatermarkPlan::build(&dist, &ThresholdDetector::new(score, tau), beta)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|outcome| {
        match &cli.out {
            Some(path) => fs::write(path, &outcome.text)?,
            None => print!("{}", outcome.text),
        }
        Ok(outcome.not_converged)
    });
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("error: training did not reach the gradient tolerance");
            ExitCode::from(4)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(harness::exit_code(&err) as u8)
        }
    }
}
