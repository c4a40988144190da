//! Acceptance suite. Each criterion prints one PASS or FAIL line with its
//! measured figures; the process exits nonzero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use optmark::divergence::{bernoulli_f_divergence, compare_bounds, kl_lower_bound, total_variation};
use optmark::harness::{self, GeneratorChoice, SweepConfig};
use optmark::policy::{objective, objective_gradient, train, RewardSpec, SoftmaxPolicy, TrainConfig};
use optmark::sampler::{BestOfM, BestOfMConfig, RejectionSampler};
use optmark::{
    f_divergence, ingest_csv, lower_bound, CsvOptions, ErrorRates, FGenerator, FiniteDistribution, ScoreFunction,
    ThresholdDetector, WatermarkPlan,
};

use common::{random_base, random_region, ten_state_reference};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn generators() -> [FGenerator; 3] {
    [FGenerator::kl(), FGenerator::tv(), FGenerator::chi2()]
}

/// Divergence of the optimum equals the bound for KL, TV and chi-square.
fn attainment() -> Outcome {
    const TOL: f64 = 1e-10;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let k = rng.random_range(2..=10_000);
        let base = random_base(&mut rng, k);
        let region = random_region(&mut rng, &base);
        let alpha = base.mass_of(&region).unwrap();
        let beta = rng.random_range(0.0..(1.0 - alpha));
        let plan = WatermarkPlan::from_region(&base, region, beta).unwrap();
        for f in generators() {
            worst = worst.max(plan.verify_attainment(&f).unwrap().gap.abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= TOL && elapsed <= Duration::from_secs(10),
        format!(
            "max |D_f(G*||F) - L| = {worst:.3e} (tol {TOL:e}), {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// No feasible distribution beats the bound, and coarse-graining never
/// increases the divergence.
fn tightness_floor() -> Outcome {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_floor = f64::INFINITY;
    let mut worst_dp = f64::INFINITY;
    for _ in 0..200 {
        let k = rng.random_range(2..=200);
        let base = random_base(&mut rng, k);
        let region = random_region(&mut rng, &base);
        let alpha = base.mass_of(&region).unwrap();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0_f64).powi(3) + 1e-6).collect();
        let raw_in: f64 = (0..k).filter(|&i| region.contains(i)).map(|i| raw[i]).sum();
        let raw_out: f64 = raw.iter().sum::<f64>() - raw_in;
        let in_mass = rng.random_range(alpha..1.0);
        let dense: Vec<f64> = (0..k)
            .map(|i| {
                if region.contains(i) {
                    raw[i] / raw_in * in_mass
                } else {
                    raw[i] / raw_out * (1.0 - in_mass)
                }
            })
            .collect();
        let g = FiniteDistribution::from_weights(base.support().clone(), &dense).unwrap();
        let g_s = g.mass_of(&region).unwrap();
        let beta = rng.random_range((1.0 - g_s)..=(1.0 - alpha));
        let rates = ErrorRates::new(alpha, beta).unwrap();
        for f in generators() {
            let d = f_divergence(&g, &base, &f).unwrap();
            worst_floor = worst_floor.min(d - lower_bound(&f, &rates));
            worst_dp = worst_dp.min(d - bernoulli_f_divergence(alpha, g_s, &f).unwrap());
        }
    }
    check(
        worst_floor >= -TOL && worst_dp >= -TOL,
        format!("min D - L = {worst_floor:.3e}, min D - D_bernoulli = {worst_dp:.3e} (floor -{TOL:e})"),
    )
}

/// Rejection sampling reproduces the optimum and the acceptance identity.
fn sampler_exactness() -> Outcome {
    const N: u64 = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let base = random_base(&mut rng, 16);
    let region = optmark::StateSet::from_ids(base.support(), [0, 3, 5, 9, 12]).unwrap();
    let plan = WatermarkPlan::from_region(&base, region, 0.1).unwrap();
    let target = plan.optimal_distribution();
    let p = plan.alpha() / (1.0 - plan.beta());
    let (mut max_tv, mut max_rate_z, mut max_mean_z, mut max_secs) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let mut failures = Vec::new();
    for run in 0..20u64 {
        let start = Instant::now();
        let mut sampler = RejectionSampler::new(plan.clone());
        let mut run_rng = ChaCha8Rng::seed_from_u64(3030 + run);
        let mut counts = vec![0u64; 16];
        for _ in 0..N {
            counts[sampler.sample_id(&mut run_rng).unwrap()] += 1;
        }
        let secs = start.elapsed().as_secs_f64();
        let stats = sampler.stats();
        let empirical = FiniteDistribution::empirical_from_counts(base.support().clone(), &counts).unwrap();
        let tv = total_variation(&empirical, &target).unwrap();
        let props = stats.proposals as f64;
        let rate_z = (stats.rate() - p).abs() / (p * (1.0 - p) / props).sqrt();
        let mean = props / stats.acceptances as f64;
        let mean_sd = ((1.0 - p) / (p * p) / stats.acceptances as f64).sqrt();
        let mean_z = (mean - (1.0 - plan.beta()) / plan.alpha()).abs() / mean_sd;
        if tv > 0.005 || rate_z > 4.0 || mean_z > 3.0 || secs > 5.0 {
            failures.push(run);
        }
        max_tv = max_tv.max(tv);
        max_rate_z = max_rate_z.max(rate_z);
        max_mean_z = max_mean_z.max(mean_z);
        max_secs = max_secs.max(secs);
    }
    check(
        failures.is_empty(),
        format!(
            "20 runs x 1e6: max TV = {max_tv:.4} (<= 0.005), max rate z = {max_rate_z:.2} (<= 4), \
             max mean-proposals z = {max_mean_z:.2} (<= 3), slowest {max_secs:.2}s (<= 5s); failing runs {failures:?}"
        ),
    )
}

/// Training recovers the optimum; the analytic gradient matches finite
/// differences.
fn rl_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut max_kl, mut max_j, mut max_iters) = (0.0_f64, 0.0_f64, 0usize);
    for _ in 0..10 {
        let base = random_base(&mut rng, 100);
        let region = random_region(&mut rng, &base);
        let alpha = base.mass_of(&region).unwrap();
        let beta = rng.random_range(0.02..(1.0 - alpha).min(0.6));
        let plan = WatermarkPlan::from_region(&base, region, beta).unwrap();
        let reward = RewardSpec::for_plan(&plan).unwrap();
        let (policy, report) = train(&base, &reward, TrainConfig::default()).unwrap();
        let kl = f_divergence(
            &policy.distribution(&base).unwrap(),
            &plan.optimal_distribution(),
            &FGenerator::kl(),
        )
        .unwrap();
        max_kl = max_kl.max(kl.abs());
        max_j = max_j.max((report.final_objective - ((1.0 - alpha) / beta).ln()).abs());
        max_iters = max_iters.max(report.iterations);
    }
    let mut max_rel = 0.0_f64;
    for _ in 0..10 {
        let base = random_base(&mut rng, 10);
        let region = random_region(&mut rng, &base);
        let reward = RewardSpec::new(rng.random_range(-3.0..3.0), region).unwrap();
        let logits: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pi = SoftmaxPolicy::from_logits(&base, logits.clone()).unwrap();
        let analytic = objective_gradient(&pi, &base, &reward).unwrap();
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..10 {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[j] += h;
            down[j] -= h;
            let ju = objective(&SoftmaxPolicy::from_logits(&base, up).unwrap(), &base, &reward).unwrap();
            let jd = objective(&SoftmaxPolicy::from_logits(&base, down).unwrap(), &base, &reward).unwrap();
            let fd = (ju - jd) / (2.0 * h);
            num += (fd - analytic[j]).powi(2);
            den += analytic[j].powi(2);
        }
        max_rel = max_rel.max((num / den).sqrt());
    }
    let elapsed = start.elapsed();
    check(
        max_kl <= 1e-6 && max_j <= 1e-6 && max_iters <= 5000 && max_rel <= 1e-6 && elapsed <= Duration::from_secs(10),
        format!(
            "max KL(pi||G*) = {max_kl:.3e}, max |J - ln((1-a)/b)| = {max_j:.3e} (both <= 1e-6), \
             max iterations {max_iters} (<= 5000), gradient rel. error {max_rel:.3e} (<= 1e-6), {:.2}s (<= 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// The bound strictly improves on the earlier bound.
fn prior_bound_margin() -> Outcome {
    let grid: Vec<f64> = (0..25).map(|i| 0.01 + 0.02 * i as f64).collect();
    let mut min_margin = f64::INFINITY;
    let mut points = 0;
    for &a in &grid {
        for &b in &grid {
            if a + b < 1.0 {
                let c = compare_bounds(&ErrorRates::new(a, b).unwrap()).unwrap();
                min_margin = min_margin.min(c.margin);
                points += 1;
            }
        }
    }
    let spot = compare_bounds(&ErrorRates::new(0.1, 0.1).unwrap()).unwrap();
    check(
        min_margin > 0.0 && (spot.g1 - 1.021651).abs() <= 1e-6 && (spot.g2 - 1.757780).abs() <= 1e-6,
        format!(
            "{points} grid points, min g2 - g1 = {min_margin:.3e} (> 0); at 0.1/0.1 g1 = {:.6}, g2 = {:.6}",
            spot.g1, spot.g2
        ),
    )
}

/// Best-of-m stays strictly above the bound and its sampler matches its law.
fn best_of_m_gap() -> Outcome {
    let (base, score) = ten_state_reference();
    let region = ThresholdDetector::new(score.clone(), 0.5).region(&base).unwrap();
    let alpha = base.mass_of(&region).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for m in [2usize, 4, 8] {
        let selector = BestOfM::new(
            &base,
            &BestOfMConfig {
                m,
                score: score.clone(),
            },
        )
        .unwrap();
        let law = selector.exact_law();
        let beta_m = 1.0 - law.mass_of(&region).unwrap();
        let kl = f_divergence(&law, &base, &FGenerator::kl()).unwrap();
        let margin = kl - kl_lower_bound(&ErrorRates::new(alpha, beta_m).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(600 + m as u64);
        let mut counts = vec![0u64; 10];
        for _ in 0..1_000_000 {
            counts[selector.sample_id(&mut rng)] += 1;
        }
        let emp = FiniteDistribution::empirical_from_counts(base.support().clone(), &counts).unwrap();
        let tv = total_variation(&emp, &law).unwrap();
        ok &= margin > 1e-6 && tv <= 0.005;
        parts.push(format!("m={m}: margin {margin:.4}, TV {tv:.4}"));
    }
    check(ok, format!("{} (margin > 1e-6, TV <= 0.005)", parts.join("; ")))
}

/// Threshold/beta sweep on a synthetic 500-state table.
fn sweep_shape() -> Outcome {
    let start = Instant::now();
    let dist = ingest_csv(harness::synthetic_csv(500, 7).as_bytes(), CsvOptions::default()).unwrap();
    let score = ScoreFunction::keyed_hash("acceptance");
    let rejection = SweepConfig {
        seed: 7,
        n_samples: 100_000,
        generator: GeneratorChoice::Rejection,
        ..SweepConfig::default()
    };
    let sampled = harness::sweep(&dist, &score, &rejection, false).unwrap();
    let exact_cfg = SweepConfig {
        generator: GeneratorChoice::Exact,
        ..rejection.clone()
    };
    let exact = harness::sweep(&dist, &score, &exact_cfg, false).unwrap();
    let elapsed = start.elapsed();

    let grid = sampled.metadata.taus.len() * sampled.metadata.betas.len();
    let feasible: Vec<_> = sampled.records.iter().filter(|r| r.feasible).collect();
    let outside = feasible.iter().filter(|r| !r.within_allowance()).count();
    let errors = feasible.iter().filter(|r| r.error.is_some()).count();
    let worst_z = feasible
        .iter()
        .filter_map(|r| Some(r.gap?.abs() / r.std_error?))
        .fold(0.0_f64, f64::max);
    let exact_worst = exact
        .records
        .iter()
        .filter(|r| r.feasible)
        .map(|r| r.gap.map_or(f64::INFINITY, f64::abs))
        .fold(0.0_f64, f64::max);
    check(
        sampled.records.len() == grid
            && exact.records.len() == grid
            && !feasible.is_empty()
            && outside == 0
            && errors == 0
            && exact_worst <= 1e-10
            && elapsed <= Duration::from_secs(60),
        format!(
            "{} records, {} feasible; rejection rows outside 3 SE: {outside} (worst |gap|/SE = {worst_z:.2}); \
             exact max |gap| = {exact_worst:.3e} (<= 1e-10); {:.1}s (<= 60s)",
            sampled.records.len(),
            feasible.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Every subcommand twice with identical flags gives identical bytes.
fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, harness::synthetic_csv(120, 11)).unwrap();
    let d = data.to_str().unwrap();
    let data_flags = ["--data", d, "--key", "det"];
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("bound", vec!["bound", "--alpha", "0.1", "--beta", "0.1", "--div", "kl"]),
        ("calibrate", [&["calibrate"][..], &data_flags].concat()),
        (
            "exact",
            [&["exact", "--tau", "0.7", "--beta", "0.2"][..], &data_flags].concat(),
        ),
        (
            "embed",
            [
                &["embed", "--tau", "0.7", "--beta", "0.2", "--n", "2000"][..],
                &data_flags,
            ]
            .concat(),
        ),
        (
            "rl",
            [
                &["rl", "--tau", "0.7", "--beta", "0.2", "--format", "json"][..],
                &data_flags,
            ]
            .concat(),
        ),
        (
            "best-of-m",
            [
                &["best-of-m", "--tau", "0.7", "--m", "4", "--n", "20000"][..],
                &data_flags,
            ]
            .concat(),
        ),
        (
            "sweep",
            [&["sweep", "--generator", "rejection", "--n", "20000"][..], &data_flags].concat(),
        ),
        ("compare-bounds", vec!["compare-bounds"]),
    ];
    let mut differing = Vec::new();
    for (name, args) in &runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{name}-{rep}.out"));
            let stats = dir.path().join(format!("{name}-{rep}.stats"));
            let mut cmd = Command::new(env!("CARGO_BIN_EXE_optmark"));
            cmd.args(args).args(["--seed", "19", "--out", out.to_str().unwrap()]);
            if *name == "embed" {
                cmd.args(["--stats-out", stats.to_str().unwrap()]);
            }
            let status = cmd.output().unwrap();
            if !status.status.success() {
                return Err(format!(
                    "`{name}` exited with {}: {}",
                    status.status,
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
            outputs.push((read(&out), read(&stats)));
        }
        if outputs[0] != outputs[1] || outputs[0].0.is_empty() {
            differing.push(*name);
        }
    }
    check(
        differing.is_empty(),
        format!(
            "{} subcommands rerun with seed 19; differing or empty outputs: {differing:?}",
            runs.len()
        ),
    )
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 attainment", attainment),
        ("2 tightness floor", tightness_floor),
        ("3 sampler exactness", sampler_exactness),
        ("4 rl recovery", rl_recovery),
        ("5 prior-bound margin", prior_bound_margin),
        ("6 best-of-m suboptimality", best_of_m_gap),
        ("7 threshold/beta sweep", sweep_shape),
        ("8 cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
