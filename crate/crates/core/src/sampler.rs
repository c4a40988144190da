//! Exact sampling from the optimal watermarked distribution and the
//! best-of-m baseline.

use std::ops::AddAssign;

use rand::Rng;
use serde::Serialize;

use crate::detector::ScoreFunction;
use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::optimal::WatermarkPlan;

/// Proposals allowed per accepted sample before giving up.
pub const DEFAULT_MAX_PROPOSALS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SamplerStats {
    pub proposals: u64,
    pub acceptances: u64,
}

impl SamplerStats {
    /// Observed acceptances per proposal (0 before any proposal).
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.acceptances as f64 / self.proposals as f64
        }
    }
}

impl AddAssign for SamplerStats {
    fn add_assign(&mut self, rhs: Self) {
        self.proposals += rhs.proposals;
        self.acceptances += rhs.acceptances;
    }
}

/// Two-rate acceptance sampler: propose from the base, accept detected
/// proposals always and undetected ones with probability `w0 / w1`.
///
/// One uniform variate is drawn per proposal, and only for undetected
/// proposals, so a seed fixes the whole trajectory.
#[derive(Debug, Clone)]
pub struct RejectionSampler {
    plan: WatermarkPlan,
    accept_ratio: f64,
    max_proposals: u64,
    stats: SamplerStats,
}

impl RejectionSampler {
    pub fn new(plan: WatermarkPlan) -> Self {
        let accept_ratio = (plan.w0() / plan.w1()).clamp(0.0, 1.0);
        Self {
            plan,
            accept_ratio,
            max_proposals: DEFAULT_MAX_PROPOSALS,
            stats: SamplerStats::default(),
        }
    }

    pub fn with_max_proposals(mut self, max_proposals: u64) -> Self {
        self.max_proposals = max_proposals.max(1);
        self
    }

    pub fn plan(&self) -> &WatermarkPlan {
        &self.plan
    }

    pub fn accept_ratio(&self) -> f64 {
        self.accept_ratio
    }

    pub fn stats(&self) -> SamplerStats {
        self.stats
    }

    /// Draws one state id distributed exactly as the plan's optimum.
    pub fn sample_id<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        let base = self.plan.base();
        let region = self.plan.region();
        for _ in 0..self.max_proposals {
            self.stats.proposals += 1;
            let id = base.sample_id(rng);
            let accepted = region.contains(id) || rng.random::<f64>() < self.accept_ratio;
            if accepted {
                self.stats.acceptances += 1;
                return Ok(id);
            }
        }
        Err(Error::BudgetExceeded {
            budget: self.max_proposals,
        })
    }

    pub fn sample_n<R: Rng + ?Sized>(&mut self, rng: &mut R, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.sample_id(rng)).collect()
    }
}

/// Probability that one proposal is accepted, `alpha / (1 - beta) = 1 / w1`.
pub fn expected_acceptance(plan: &WatermarkPlan) -> f64 {
    plan.alpha() / (1.0 - plan.beta())
}

#[derive(Debug, Clone)]
pub struct BestOfMConfig {
    pub m: usize,
    pub score: ScoreFunction,
}

/// Best-of-m selection under the total order (score desc, id asc).
#[derive(Debug, Clone)]
pub struct BestOfM {
    base: FiniteDistribution,
    m: usize,
    /// Base ids from worst to best.
    order: Vec<usize>,
    /// Position of each support id in `order`.
    rank: Vec<usize>,
}

impl BestOfM {
    pub fn new(base: &FiniteDistribution, cfg: &BestOfMConfig) -> Result<Self> {
        if cfg.m == 0 {
            return Err(Error::Domain("best-of-m needs m >= 1".into()));
        }
        let scores = cfg.score.scores_for(base)?;
        let mut order = base.ids().to_vec();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)));
        let mut rank = vec![0; base.support().len()];
        for (pos, &id) in order.iter().enumerate() {
            rank[id] = pos;
        }
        Ok(Self {
            base: base.clone(),
            m: cfg.m,
            order,
            rank,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Draws `m` candidates from the base and keeps the best one.
    pub fn sample_id<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut best = self.base.sample_id(rng);
        for _ in 1..self.m {
            let candidate = self.base.sample_id(rng);
            if self.rank[candidate] > self.rank[best] {
                best = candidate;
            }
        }
        best
    }

    /// `P(x) = C(x)^m - C(x-)^m` with `C` the base CDF along the selection
    /// order.
    pub fn exact_law(&self) -> FiniteDistribution {
        let m = self.m as i32;
        let mut ids = Vec::with_capacity(self.order.len());
        let mut mass = Vec::with_capacity(self.order.len());
        let mut below = 0.0_f64;
        let mut acc = 0.0_f64;
        let last = self.order.len() - 1;
        for (pos, &id) in self.order.iter().enumerate() {
            acc += self.base.mass(id);
            let upto = if pos == last { 1.0 } else { acc.min(1.0) };
            let p = upto.powi(m) - below.powi(m);
            if p > 0.0 {
                ids.push(id);
                mass.push(p);
            }
            below = upto;
        }
        let mut pairs: Vec<(usize, f64)> = ids.into_iter().zip(mass).collect();
        pairs.sort_by_key(|&(id, _)| id);
        let (ids, mass) = pairs.into_iter().unzip();
        FiniteDistribution::from_parts(self.base.support().clone(), ids, mass)
    }
}

pub fn best_of_m_sample<R: Rng + ?Sized>(base: &FiniteDistribution, cfg: &BestOfMConfig, rng: &mut R) -> Result<usize> {
    Ok(BestOfM::new(base, cfg)?.sample_id(rng))
}

pub fn best_of_m_exact_law(base: &FiniteDistribution, cfg: &BestOfMConfig) -> Result<FiniteDistribution> {
    Ok(BestOfM::new(base, cfg)?.exact_law())
}
