//! Experiment orchestration behind the command-line tool: bound tables,
//! calibration, watermark generation, the threshold/beta sweep and the
//! comparison with the prior bound.
//!
//! Everything here is deterministic for a fixed seed. Grid points of a sweep
//! run in parallel, each with its own generator seeded from
//! `seed ^ point_index`, and are emitted in grid order.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::detector::{calibrate, load_scores, score_quantiles, CalibrationRecord, ScoreFunction, ThresholdDetector};
use crate::distribution::{ingest_csv, CsvOptions, FiniteDistribution};
use crate::divergence::{
    compare_bounds, f_divergence, kl_lower_bound, lower_bound, total_variation, BoundComparison, ErrorRates,
    FGenerator, GeneratorKind,
};
use crate::error::{Error, Result};
use crate::optimal::WatermarkPlan;
use crate::policy::{train, PolicyExport, RewardSpec, TrainConfig, TrainReport};
use crate::sampler::{expected_acceptance, BestOfM, BestOfMConfig, RejectionSampler, SamplerStats};

/// Score quantile levels used when no thresholds are given.
pub const DEFAULT_TAU_LEVELS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// False-negative rates used when none are given.
pub const DEFAULT_BETAS: [f64; 8] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4];

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 50;

/// Allowance reported for exact-generator rows (pure floating-point error).
pub const EXACT_ALLOWANCE: f64 = 1e-10;

/// Allowance reported for trained-policy rows.
pub const RL_ALLOWANCE: f64 = 1e-6;

/// Process exit code for an error: 2 infeasible input, 3 coverage or parse
/// problems, 4 budget or numeric failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible { .. }
        | Error::Undetectable
        | Error::DegenerateRegion
        | Error::DegenerateReward { .. }
        | Error::Domain(_)
        | Error::InvalidGenerator { .. } => 2,
        Error::EmptyInput
        | Error::Parse { .. }
        | Error::InvalidDistribution(_)
        | Error::DomainMismatch
        | Error::Coverage { .. }
        | Error::ScoreConflict { .. }
        | Error::AbsoluteContinuity { .. }
        | Error::Io(_)
        | Error::Json(_) => 3,
        Error::BudgetExceeded { .. } | Error::Numeric(_) => 4,
    }
}

pub fn load_dataset(path: &Path, options: CsvOptions) -> Result<FiniteDistribution> {
    ingest_csv(BufReader::new(File::open(path)?), options)
}

/// Where detector scores come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreSource {
    KeyedHash(String),
    File(std::path::PathBuf),
}

impl ScoreSource {
    pub fn load(&self, dist: &FiniteDistribution) -> Result<ScoreFunction> {
        match self {
            Self::KeyedHash(key) => Ok(ScoreFunction::keyed_hash(key.as_bytes())),
            Self::File(path) => load_scores(BufReader::new(File::open(path)?), dist),
        }
    }
}

/// A synthetic table of `k` distinct rows with a few categorical and numeric
/// columns, deterministic in `seed`.
pub fn synthetic_csv(k: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("row,age_group,health,visits,sleep_hours\n");
    for i in 0..k {
        out.push_str(&format!(
            "{i},{},{},{},{:.1}\n",
            rng.random_range(1..=3),
            rng.random_range(1..=5),
            rng.random_range(0..=12),
            rng.random_range(4.0..10.0)
        ));
    }
    out
}

pub fn default_taus(dist: &FiniteDistribution, score: &ScoreFunction) -> Result<Vec<f64>> {
    let mut taus = score_quantiles(dist, score, &DEFAULT_TAU_LEVELS)?;
    taus.dedup();
    Ok(taus)
}

// ---------------------------------------------------------------- bound

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub alpha: f64,
    pub beta: f64,
    pub divergence_name: String,
    pub bound: f64,
    pub g1: Option<f64>,
    pub margin: Option<f64>,
}

/// The bound for one rate pair; for KL also the prior bound and the margin
/// when `beta > 0` and `alpha + beta < 1`.
pub fn bound_report(alpha: f64, beta: f64, divergence: &str) -> Result<BoundReport> {
    let rates = ErrorRates::new(alpha, beta)?;
    let f = FGenerator::by_name(divergence)?;
    let (g1, margin) = if f.kind() == GeneratorKind::Kl && beta > 0.0 && alpha + beta < 1.0 {
        let c = compare_bounds(&rates)?;
        (Some(c.g1), Some(c.margin))
    } else {
        (None, None)
    };
    let bound = match f.kind() {
        GeneratorKind::Kl => kl_lower_bound(&rates),
        _ => lower_bound(&f, &rates),
    };
    Ok(BoundReport {
        alpha,
        beta,
        divergence_name: f.name().to_string(),
        bound,
        g1,
        margin,
    })
}

/// Inclusive arithmetic grid `start, start + step, ..., <= stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            start: 0.05,
            stop: 0.45,
            step: 0.05,
        }
    }
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.start <= self.stop) {
            return Err(Error::Domain("grid needs step > 0 and start <= stop".into()));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        // rounding keeps 0.1 + 2 * 0.2 from printing as 0.5000000000000001
        Ok((0..count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect())
    }
}

/// `g1`, `g2` and their margin over every grid pair with `alpha + beta < 1`.
pub fn compare_bounds_grid(grid: &GridSpec) -> Result<Vec<BoundComparison>> {
    let values = grid.values()?;
    let mut rows = Vec::new();
    for &alpha in &values {
        for &beta in &values {
            if alpha > 0.0 && beta > 0.0 && alpha + beta < 1.0 {
                rows.push(compare_bounds(&ErrorRates::new(alpha, beta)?)?);
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- generators

pub fn calibration(
    dist: &FiniteDistribution,
    score: &ScoreFunction,
    taus: Option<&[f64]>,
) -> Result<Vec<CalibrationRecord>> {
    let taus = match taus {
        Some(t) => t.to_vec(),
        None => default_taus(dist, score)?,
    };
    calibrate(dist, score, &taus)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedStats {
    pub proposals: u64,
    pub acceptances: u64,
    pub rate: f64,
    pub expected_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRow {
    pub id: usize,
    pub payload_sha256: String,
}

/// `n` watermarked samples by two-rate rejection sampling.
pub fn embed(plan: &WatermarkPlan, n: usize, seed: u64, max_proposals: u64) -> Result<(Vec<usize>, EmbedStats)> {
    let mut sampler = RejectionSampler::new(plan.clone()).with_max_proposals(max_proposals);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let id = sampler.sample_id(&mut rng)?;
        ids.push(id);
    }
    let SamplerStats { proposals, acceptances } = sampler.stats();
    Ok((
        ids,
        EmbedStats {
            proposals,
            acceptances,
            rate: sampler.stats().rate(),
            expected_rate: expected_acceptance(plan),
        },
    ))
}

pub fn sample_rows(dist: &FiniteDistribution, ids: &[usize]) -> Vec<SampleRow> {
    let support = dist.support();
    ids.iter()
        .map(|&id| SampleRow {
            id,
            payload_sha256: support.states()[id].payload_sha256(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RlOutput {
    pub policy: PolicyExport,
    pub report: TrainReport,
    /// `KL(pi_hat || G*)` against the plan's exact optimum.
    pub kl_to_optimum: f64,
    /// Closed-form optimal objective `ln((1-alpha)/beta)`.
    pub optimal_objective: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn rl(plan: &WatermarkPlan, config: TrainConfig) -> Result<RlOutput> {
    let reward = RewardSpec::for_plan(plan)?;
    let (policy, report) = train(plan.base(), &reward, config)?;
    let kl_to_optimum = f_divergence(
        &policy.distribution(plan.base())?,
        &plan.optimal_distribution(),
        &FGenerator::kl(),
    )?
    .max(0.0);
    Ok(RlOutput {
        policy: policy.export(),
        report,
        kl_to_optimum,
        optimal_objective: ((1.0 - plan.alpha()) / plan.beta()).ln(),
        alpha: plan.alpha(),
        beta: plan.beta(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestOfMReport {
    pub m: usize,
    pub tau: f64,
    pub alpha: f64,
    /// `1 - G_m(S)` for the exact best-of-m law `G_m`.
    pub achieved_beta: f64,
    pub kl: f64,
    pub bound: f64,
    pub margin: f64,
    pub n: usize,
    /// Total variation between `n` Monte Carlo draws and the exact law.
    pub monte_carlo_tv: Option<f64>,
}

pub fn best_of_m_report(
    dist: &FiniteDistribution,
    score: &ScoreFunction,
    tau: f64,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<BestOfMReport> {
    let region = ThresholdDetector::new(score.clone(), tau).region(dist)?;
    let alpha = dist.mass_of(&region)?;
    let selector = BestOfM::new(
        dist,
        &BestOfMConfig {
            m,
            score: score.clone(),
        },
    )?;
    let law = selector.exact_law();
    let achieved_beta = (1.0 - law.mass_of(&region)?).max(0.0);
    let kl = f_divergence(&law, dist, &FGenerator::kl())?;
    let bound = kl_lower_bound(&ErrorRates::new(alpha, achieved_beta)?);
    let monte_carlo_tv = if n > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; dist.support().len()];
        for _ in 0..n {
            counts[selector.sample_id(&mut rng)] += 1;
        }
        let empirical = FiniteDistribution::empirical_from_counts(dist.support().clone(), &counts)?;
        Some(total_variation(&empirical, &law)?)
    } else {
        None
    };
    Ok(BestOfMReport {
        m,
        tau,
        alpha,
        achieved_beta,
        kl,
        bound,
        margin: kl - bound,
        n,
        monte_carlo_tv,
    })
}

// ---------------------------------------------------------------- sweep

/// How a sweep point's watermarked distribution is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorChoice {
    /// The closed-form optimum.
    Exact,
    /// Two-rate rejection sampling, `n_samples` draws.
    Rejection,
    /// Trained softmax policy.
    Rl,
    /// Best-of-m Monte Carlo, `n_samples` draws.
    BestOfM(usize),
}

impl FromStr for GeneratorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "exact" => return Ok(Self::Exact),
            "rejection" => return Ok(Self::Rejection),
            "rl" => return Ok(Self::Rl),
            _ => {}
        }
        let m = lower
            .strip_prefix("best-of-")
            .or_else(|| lower.strip_prefix("best_of_"))
            .and_then(|m| m.parse::<usize>().ok())
            .filter(|&m| m >= 1);
        m.map(Self::BestOfM).ok_or_else(|| {
            Error::Domain(format!(
                "unknown generator `{s}`; expected exact, rejection, rl or best-of-<m>"
            ))
        })
    }
}

impl std::fmt::Display for GeneratorChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Exact => write!(f, "exact"),
            Self::Rejection => write!(f, "rejection"),
            Self::Rl => write!(f, "rl"),
            Self::BestOfM(m) => write!(f, "best-of-{m}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Thresholds; `None` uses the score quantiles in [`DEFAULT_TAU_LEVELS`].
    pub taus: Option<Vec<f64>>,
    pub betas: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub divergence: String,
    pub generator: GeneratorChoice,
    pub bootstrap_resamples: usize,
    pub max_proposals: u64,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            taus: None,
            betas: DEFAULT_BETAS.to_vec(),
            n_samples: 100_000,
            seed: 0,
            divergence: "kl".into(),
            generator: GeneratorChoice::Exact,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            max_proposals: crate::sampler::DEFAULT_MAX_PROPOSALS,
            train: TrainConfig::default(),
        }
    }
}

/// One `(tau, beta)` grid point.
///
/// For sampled generators `empirical_divergence` is the plug-in value,
/// `bias` its bootstrap bias estimate, and `gap` compares the
/// bias-corrected value `empirical_divergence - bias` with the bound;
/// `allowance` is three bootstrap standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub tau: f64,
    pub beta: f64,
    pub alpha: f64,
    pub feasible: bool,
    pub empirical_divergence: Option<f64>,
    pub bias: Option<f64>,
    pub std_error: Option<f64>,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub allowance: Option<f64>,
    /// Miss rate the generator actually achieves (best-of-m only differs from `beta`).
    pub achieved_beta: Option<f64>,
    pub error: Option<String>,
}

impl SweepRecord {
    fn blank(tau: f64, beta: f64, alpha: f64) -> Self {
        Self {
            tau,
            beta,
            alpha,
            feasible: false,
            empirical_divergence: None,
            bias: None,
            std_error: None,
            bound: None,
            gap: None,
            allowance: None,
            achieved_beta: None,
            error: None,
        }
    }

    /// `|gap| <= allowance` on a feasible row.
    pub fn within_allowance(&self) -> bool {
        matches!((self.gap, self.allowance), (Some(g), Some(a)) if g.abs() <= a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMetadata {
    pub seed: u64,
    pub generator: String,
    pub divergence: String,
    pub n_samples: usize,
    pub bootstrap_resamples: usize,
    pub dedupe: bool,
    pub states: usize,
    pub taus: Vec<f64>,
    pub tau_source: String,
    pub betas: Vec<f64>,
    pub estimator: String,
    pub train: TrainConfig,
}

impl SweepMetadata {
    pub fn comment_lines(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        format!(
            "# seed: {}\n# generator: {}\n# divergence: {}\n# n_samples: {}\n# bootstrap_resamples: {}\n\
             # dedupe: {}\n# states: {}\n# taus: {}\n# tau_source: {}\n# betas: {}\n# estimator: {}\n\
             # train: lr={} max_iters={} tol={} step={:?}\n",
            self.seed,
            self.generator,
            self.divergence,
            self.n_samples,
            self.bootstrap_resamples,
            self.dedupe,
            self.states,
            list(&self.taus),
            self.tau_source,
            list(&self.betas),
            self.estimator,
            self.train.learning_rate,
            self.train.max_iters,
            self.train.tol,
            self.train.step,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutput {
    pub metadata: SweepMetadata,
    pub records: Vec<SweepRecord>,
}

/// Runs every `(tau, beta)` point. Infeasible points (`alpha(tau) = 0` or
/// `alpha(tau) >= 1 - beta`) and per-point failures are recorded, never
/// dropped.
pub fn sweep(dist: &FiniteDistribution, score: &ScoreFunction, cfg: &SweepConfig, dedupe: bool) -> Result<SweepOutput> {
    let f = FGenerator::by_name(&cfg.divergence)?;
    let (taus, tau_source) = match &cfg.taus {
        Some(t) => (t.clone(), "given".to_string()),
        None => (
            default_taus(dist, score)?,
            format!("score quantiles at {:?}", DEFAULT_TAU_LEVELS),
        ),
    };
    let calibration = calibrate(dist, score, &taus)?;
    let points: Vec<(usize, CalibrationRecord, f64)> = calibration
        .iter()
        .flat_map(|rec| cfg.betas.iter().map(move |&beta| (*rec, beta)))
        .enumerate()
        .map(|(i, (rec, beta))| (i, rec, beta))
        .collect();

    let records = points
        .par_iter()
        .map(|&(index, rec, beta)| sweep_point(dist, score, cfg, &f, index, rec, beta))
        .collect();

    let estimator = match cfg.generator {
        GeneratorChoice::Exact => "exact divergence of the optimum".to_string(),
        GeneratorChoice::Rl => "exact divergence of the trained policy".to_string(),
        GeneratorChoice::Rejection | GeneratorChoice::BestOfM(_) => format!(
            "plug-in on {} draws; bootstrap ({} multinomial resamples) bias correction; allowance 3 SE",
            cfg.n_samples, cfg.bootstrap_resamples
        ),
    };
    Ok(SweepOutput {
        metadata: SweepMetadata {
            seed: cfg.seed,
            generator: cfg.generator.to_string(),
            divergence: f.name().to_string(),
            n_samples: cfg.n_samples,
            bootstrap_resamples: cfg.bootstrap_resamples,
            dedupe,
            states: dist.len(),
            taus: calibration.iter().map(|r| r.tau).collect(),
            tau_source,
            betas: cfg.betas.clone(),
            estimator,
            train: cfg.train,
        },
        records,
    })
}

fn sweep_point(
    dist: &FiniteDistribution,
    score: &ScoreFunction,
    cfg: &SweepConfig,
    f: &FGenerator,
    index: usize,
    rec: CalibrationRecord,
    beta: f64,
) -> SweepRecord {
    let mut out = SweepRecord::blank(rec.tau, beta, rec.achieved_alpha);
    let alpha = rec.achieved_alpha;
    if !(alpha > 0.0) {
        out.error = Some("undetectable: alpha(tau) = 0".into());
        return out;
    }
    if !(alpha < 1.0 - beta) {
        out.error = Some(format!("infeasible: alpha(tau) = {alpha} >= 1 - beta"));
        return out;
    }
    out.feasible = true;
    let seed = cfg.seed ^ index as u64;
    if let Err(err) = fill_point(&mut out, dist, score, cfg, f, seed) {
        out.error = Some(err.to_string());
    }
    out
}

fn fill_point(
    out: &mut SweepRecord,
    dist: &FiniteDistribution,
    score: &ScoreFunction,
    cfg: &SweepConfig,
    f: &FGenerator,
    seed: u64,
) -> Result<()> {
    let detector = ThresholdDetector::new(score.clone(), out.tau);
    let plan = WatermarkPlan::build(dist, &detector, out.beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match cfg.generator {
        GeneratorChoice::Exact => {
            let att = plan.verify_attainment(f)?;
            out.empirical_divergence = Some(att.achieved);
            out.bound = Some(att.bound);
            out.gap = Some(att.gap);
            out.allowance = Some(EXACT_ALLOWANCE);
            out.achieved_beta = Some(out.beta);
        }
        GeneratorChoice::Rl => {
            let reward = RewardSpec::for_plan(&plan)?;
            let (policy, _) = train(dist, &reward, cfg.train)?;
            let achieved = f_divergence(&policy.distribution(dist)?, dist, f)?;
            let bound = lower_bound(f, &plan.rates()?);
            out.empirical_divergence = Some(achieved);
            out.bound = Some(bound);
            out.gap = Some(achieved - bound);
            out.allowance = Some(RL_ALLOWANCE);
            out.achieved_beta = Some(out.beta);
        }
        GeneratorChoice::Rejection => {
            let mut sampler = RejectionSampler::new(plan.clone()).with_max_proposals(cfg.max_proposals);
            let mut counts = vec![0u64; dist.support().len()];
            for _ in 0..cfg.n_samples {
                counts[sampler.sample_id(&mut rng)?] += 1;
            }
            let bound = lower_bound(f, &plan.rates()?);
            record_sampled(out, dist, f, &counts, bound, cfg.bootstrap_resamples, &mut rng)?;
            out.achieved_beta = Some(out.beta);
        }
        GeneratorChoice::BestOfM(m) => {
            let selector = BestOfM::new(
                dist,
                &BestOfMConfig {
                    m,
                    score: score.clone(),
                },
            )?;
            let achieved_beta = (1.0 - selector.exact_law().mass_of(plan.region())?).max(0.0);
            let mut counts = vec![0u64; dist.support().len()];
            for _ in 0..cfg.n_samples {
                counts[selector.sample_id(&mut rng)] += 1;
            }
            let bound = lower_bound(f, &ErrorRates::new(plan.alpha(), achieved_beta)?);
            record_sampled(out, dist, f, &counts, bound, cfg.bootstrap_resamples, &mut rng)?;
            out.achieved_beta = Some(achieved_beta);
        }
    }
    Ok(())
}

fn record_sampled(
    out: &mut SweepRecord,
    dist: &FiniteDistribution,
    f: &FGenerator,
    counts: &[u64],
    bound: f64,
    resamples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let est = bootstrap_divergence(dist, f, counts, resamples, rng)?;
    out.empirical_divergence = Some(est.plug_in);
    out.bias = Some(est.bias);
    out.std_error = Some(est.std_error);
    out.bound = Some(bound);
    out.gap = Some(est.plug_in - est.bias - bound);
    out.allowance = Some(3.0 * est.std_error);
    Ok(())
}

/// Plug-in divergence of an empirical distribution with bootstrap summaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapEstimate {
    pub plug_in: f64,
    /// Mean of the resampled estimates minus the plug-in value.
    pub bias: f64,
    pub std_error: f64,
}

/// Resamples the observed counts `resamples` times (multinomial, same total)
/// and recomputes the plug-in `D_f(G_hat || F)` on each.
pub fn bootstrap_divergence<R: Rng + ?Sized>(
    base: &FiniteDistribution,
    f: &FGenerator,
    counts: &[u64],
    resamples: usize,
    rng: &mut R,
) -> Result<BootstrapEstimate> {
    let support = base.support().clone();
    let empirical = FiniteDistribution::empirical_from_counts(support.clone(), counts)?;
    let plug_in = f_divergence(&empirical, base, f)?;
    if resamples < 2 {
        return Ok(BootstrapEstimate {
            plug_in,
            bias: 0.0,
            std_error: 0.0,
        });
    }
    let n: u64 = counts.iter().sum();
    let probs = empirical.dense();
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let resampled = multinomial(n, &probs, rng)?;
        let g = FiniteDistribution::empirical_from_counts(support.clone(), &resampled)?;
        values.push(f_divergence(&g, base, f)?);
    }
    let mean = values.iter().sum::<f64>() / resamples as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    Ok(BootstrapEstimate {
        plug_in,
        bias: mean - plug_in,
        std_error: var.sqrt(),
    })
}

/// Multinomial draw by a chain of conditional binomials.
fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    let mut remaining_n = n;
    let mut remaining_p = 1.0_f64;
    let mut out = vec![0u64; probs.len()];
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (i, &p) in probs.iter().enumerate() {
        if remaining_n == 0 || p == 0.0 {
            continue;
        }
        let draw = if i == last {
            remaining_n
        } else {
            let q = (p / remaining_p).clamp(0.0, 1.0);
            Binomial::new(remaining_n, q)
                .map_err(|e| Error::Numeric(format!("binomial({remaining_n}, {q}): {e}")))?
                .sample(rng)
        };
        out[i] = draw;
        remaining_n -= draw;
        remaining_p -= p;
    }
    Ok(out)
}

// ---------------------------------------------------------------- rendering

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Domain(format!("unknown format `{other}`"))),
        }
    }
}

/// Rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Numeric(format!("csv serialization: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Numeric(format!("csv serialization: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn render<T: Serialize>(rows: &[T], format: Format) -> Result<String> {
    match format {
        Format::Csv => to_csv(rows),
        Format::Json => to_json(rows),
    }
}
