//! KL-regularized policy optimization toward the optimal watermarked
//! distribution.
//!
//! The objective is `J(pi) = E_pi[r] - KL(pi || F)` with reward
//! `r(x) = A 1{x in S}` and `A = ln((1-beta)(1-alpha) / (alpha beta))`. Its
//! unique maximizer is the exponential tilt `pi* ∝ F e^r`, which for this `A`
//! is exactly the plan's optimum. Policies here are tabular softmaxes over the
//! base support, so the gradient is exact.

use serde::{Deserialize, Serialize};

use crate::detector::ThresholdDetector;
use crate::distribution::{FiniteDistribution, StateSet};
use crate::divergence::{f_divergence, ErrorRates, FGenerator};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::optimal::WatermarkPlan;

/// `ln((1-beta)(1-alpha) / (alpha beta))`; infinite (an error) on the edges.
pub fn reward_coefficient(rates: &ErrorRates) -> Result<f64> {
    let (a, b) = (rates.alpha(), rates.beta());
    if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
        return Err(Error::DegenerateReward { alpha: a, beta: b });
    }
    Ok((-b).ln_1p() + (-a).ln_1p() - a.ln() - b.ln())
}

/// Reward `coefficient * 1{x in region} + offset`.
#[derive(Debug, Clone)]
pub struct RewardSpec {
    coefficient: f64,
    region: StateSet,
    offset: f64,
}

impl RewardSpec {
    pub fn new(coefficient: f64, region: StateSet) -> Result<Self> {
        if !coefficient.is_finite() {
            return Err(Error::Domain(format!("reward coefficient {coefficient} is not finite")));
        }
        Ok(Self {
            coefficient,
            region,
            offset: 0.0,
        })
    }

    pub fn from_detector(base: &FiniteDistribution, coefficient: f64, detector: &ThresholdDetector) -> Result<Self> {
        Self::new(coefficient, detector.region(base)?)
    }

    /// The reward whose maximizer is the plan's optimal distribution.
    pub fn for_plan(plan: &WatermarkPlan) -> Result<Self> {
        Self::new(reward_coefficient(&plan.rates()?)?, plan.region().clone())
    }

    /// Same reward shifted by a constant.
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    /// Reward per state, aligned with `base.ids()`.
    pub fn rewards(&self, base: &FiniteDistribution) -> Result<Vec<f64>> {
        if !self.region.belongs_to(base.support()) {
            return Err(Error::DomainMismatch);
        }
        Ok(base
            .ids()
            .iter()
            .map(|&id| {
                let hit = if self.region.contains(id) {
                    self.coefficient
                } else {
                    0.0
                };
                hit + self.offset
            })
            .collect())
    }
}

/// Tabular softmax policy over the strict support of a base distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    support_uid: u64,
    ids: Vec<usize>,
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    /// Logits `ln F`, so the policy starts at the base model.
    pub fn from_base(base: &FiniteDistribution) -> Self {
        let mut policy = Self {
            support_uid: base.support().uid(),
            ids: base.ids().to_vec(),
            logits: base.log_masses().to_vec(),
        };
        policy.center();
        policy
    }

    /// Policy reproducing `dist`, which must share `base`'s strict support.
    pub fn from_distribution(base: &FiniteDistribution, dist: &FiniteDistribution) -> Result<Self> {
        if !dist.same_support(base) || dist.ids() != base.ids() {
            return Err(Error::DomainMismatch);
        }
        let mut policy = Self {
            support_uid: base.support().uid(),
            ids: base.ids().to_vec(),
            logits: dist.log_masses().to_vec(),
        };
        policy.center();
        Ok(policy)
    }

    pub fn from_logits(base: &FiniteDistribution, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != base.len() {
            return Err(Error::DomainMismatch);
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("non-finite logit".into()));
        }
        Ok(Self {
            support_uid: base.support().uid(),
            ids: base.ids().to_vec(),
            logits,
        })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    fn check(&self, base: &FiniteDistribution) -> Result<()> {
        if self.support_uid != base.support().uid() || self.ids != base.ids() {
            return Err(Error::DomainMismatch);
        }
        Ok(())
    }

    /// Removes the softmax's shift freedom by making the logits mean zero.
    fn center(&mut self) {
        let mean = compensated_sum(self.logits.iter().copied()) / self.logits.len() as f64;
        for l in &mut self.logits {
            *l -= mean;
        }
    }

    pub fn log_probabilities(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm = compensated_sum(self.logits.iter().map(|l| (l - max).exp())).ln() + max;
        self.logits.iter().map(|l| l - norm).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_probabilities().into_iter().map(f64::exp).collect()
    }

    /// The induced distribution on `base`'s support.
    pub fn distribution(&self, base: &FiniteDistribution) -> Result<FiniteDistribution> {
        self.check(base)?;
        Ok(FiniteDistribution::from_parts(
            base.support().clone(),
            self.ids.clone(),
            self.probabilities(),
        ))
    }

    pub fn export(&self) -> PolicyExport {
        PolicyExport {
            logits: self.logits.clone(),
            support_ids: self.ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyExport {
    pub logits: Vec<f64>,
    pub support_ids: Vec<usize>,
}

/// Per-state values `r(x) - ln(pi(x)/F(x))`, the policy, and `J`.
struct Evaluation {
    probs: Vec<f64>,
    values: Vec<f64>,
    objective: f64,
}

fn evaluate(pi: &SoftmaxPolicy, base: &FiniteDistribution, rewards: &[f64]) -> Evaluation {
    let log_pi = pi.log_probabilities();
    let values: Vec<f64> = rewards
        .iter()
        .zip(&log_pi)
        .zip(base.log_masses())
        .map(|((r, lp), lf)| r - (lp - lf))
        .collect();
    let probs: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();
    let objective = compensated_sum(probs.iter().zip(&values).map(|(p, v)| p * v));
    Evaluation {
        probs,
        values,
        objective,
    }
}

/// `J(pi) = sum_x pi(x) [r(x) - ln(pi(x)/F(x))]`.
pub fn objective(pi: &SoftmaxPolicy, base: &FiniteDistribution, reward: &RewardSpec) -> Result<f64> {
    pi.check(base)?;
    Ok(evaluate(pi, base, &reward.rewards(base)?).objective)
}

/// Exact `dJ/dlogit_j = pi_j (v_j - J)` where `v_j = r_j - ln(pi_j/F_j)`.
pub fn objective_gradient(pi: &SoftmaxPolicy, base: &FiniteDistribution, reward: &RewardSpec) -> Result<Vec<f64>> {
    pi.check(base)?;
    let eval = evaluate(pi, base, &reward.rewards(base)?);
    Ok(gradient_of(&eval))
}

fn gradient_of(eval: &Evaluation) -> Vec<f64> {
    eval.probs
        .iter()
        .zip(&eval.values)
        .map(|(p, v)| p * (v - eval.objective))
        .collect()
}

/// The maximizer `pi* ∝ F e^r`.
pub fn gibbs_solution(base: &FiniteDistribution, reward: &RewardSpec) -> Result<FiniteDistribution> {
    let rewards = reward.rewards(base)?;
    let log_w: Vec<f64> = base.log_masses().iter().zip(&rewards).map(|(lf, r)| lf + r).collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total = compensated_sum(w.iter().copied());
    Ok(FiniteDistribution::from_parts(
        base.support().clone(),
        base.ids().to_vec(),
        w.into_iter().map(|x| x / total).collect(),
    ))
}

/// How a gradient becomes a logit update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `logit_j += lr * grad_j / pi_j`: the gradient preconditioned by the
    /// diagonal of the softmax Fisher information.
    Natural,
    /// `logit_j += lr * grad_j`.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step: StepRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_iters: 5000,
            tol: 1e-9,
            step: StepRule::Natural,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub final_objective: f64,
    /// `KL(pi_hat || pi*)`.
    pub kl_to_target: f64,
    pub gradient_sup_norm: f64,
    pub converged: bool,
    pub config: TrainConfig,
}

/// Full-batch ascent on `J` from the base model until the gradient sup-norm
/// drops to `tol` or `max_iters` steps are taken. Logits are re-centered after
/// every step.
pub fn train(
    base: &FiniteDistribution,
    reward: &RewardSpec,
    config: TrainConfig,
) -> Result<(SoftmaxPolicy, TrainReport)> {
    if !(config.tol > 0.0) || !(config.learning_rate > 0.0) {
        return Err(Error::Domain("learning rate and tolerance must be positive".into()));
    }
    let rewards = reward.rewards(base)?;
    let mut pi = SoftmaxPolicy::from_base(base);
    let mut iterations = 0;
    let mut eval = evaluate(&pi, base, &rewards);
    let mut grad = gradient_of(&eval);
    let mut sup = sup_norm(&grad);
    while sup > config.tol && iterations < config.max_iters {
        for (j, logit) in pi.logits.iter_mut().enumerate() {
            *logit += config.learning_rate
                * match config.step {
                    StepRule::Natural => eval.values[j] - eval.objective,
                    StepRule::Plain => grad[j],
                };
        }
        pi.center();
        iterations += 1;
        eval = evaluate(&pi, base, &rewards);
        if !eval.objective.is_finite() {
            return Err(Error::Numeric(format!(
                "objective became {} at step {iterations}",
                eval.objective
            )));
        }
        grad = gradient_of(&eval);
        sup = sup_norm(&grad);
    }
    let target = gibbs_solution(base, reward)?;
    let kl_to_target = f_divergence(&pi.distribution(base)?, &target, &FGenerator::kl())?.max(0.0);
    let report = TrainReport {
        iterations,
        final_objective: eval.objective,
        kl_to_target,
        gradient_sup_norm: sup,
        converged: sup <= config.tol,
        config,
    };
    Ok((pi, report))
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
