//! The watermark plan and the fidelity-optimal watermarked distribution.
//!
//! For a detection region `S` with base mass `alpha = F(S)` and a target
//! false-negative rate `beta`, the optimal distribution reweights `F` by
//! `w1 = (1-beta)/alpha` inside `S` and `w0 = beta/(1-alpha)` outside it.

use serde::{Deserialize, Serialize};

use crate::detector::ThresholdDetector;
use crate::distribution::{FiniteDistribution, State, StateSet};
use crate::divergence::{f_divergence, lower_bound, ErrorRates, FGenerator, FEASIBILITY_TOLERANCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct WatermarkPlan {
    base: FiniteDistribution,
    region: StateSet,
    alpha: f64,
    beta: f64,
    w1: f64,
    w0: f64,
}

impl WatermarkPlan {
    /// Plan for a detector's region on `base`. `alpha` is the achieved mass
    /// of the region, never a nominal level.
    pub fn build(base: &FiniteDistribution, detector: &ThresholdDetector, beta: f64) -> Result<Self> {
        Self::from_region(base, detector.region(base)?, beta)
    }

    /// Plan for an explicit region of `base`'s support.
    pub fn from_region(base: &FiniteDistribution, region: StateSet, beta: f64) -> Result<Self> {
        if !region.belongs_to(base.support()) {
            return Err(Error::DomainMismatch);
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Domain(format!("beta = {beta} is not a probability")));
        }
        let detected = base.ids().iter().filter(|&&id| region.contains(id)).count();
        if detected == 0 {
            return Err(Error::Undetectable);
        }
        if detected == base.len() {
            return Err(Error::DegenerateRegion);
        }
        let alpha = base.mass_of(&region)?;
        if alpha > 1.0 - beta + FEASIBILITY_TOLERANCE {
            return Err(Error::Infeasible { alpha, beta });
        }
        Ok(Self {
            base: base.clone(),
            region,
            alpha,
            beta,
            w1: (1.0 - beta) / alpha,
            w0: beta / (1.0 - alpha),
        })
    }

    pub fn base(&self) -> &FiniteDistribution {
        &self.base
    }

    pub fn region(&self) -> &StateSet {
        &self.region
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Density ratio inside the region.
    pub fn w1(&self) -> f64 {
        self.w1
    }

    /// Density ratio outside the region.
    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn rates(&self) -> Result<ErrorRates> {
        ErrorRates::new(self.alpha, self.beta)
    }

    /// `G*(x) = w1 F(x)` on the region and `w0 F(x)` off it. With `beta = 0`
    /// the states outside the region drop out of the support.
    pub fn optimal_distribution(&self) -> FiniteDistribution {
        let (ids, mass) = self
            .base
            .ids()
            .iter()
            .zip(self.base.masses())
            .map(|(&id, &m)| (id, m * self.ratio_of(id)))
            .filter(|&(_, m)| m > 0.0)
            .unzip();
        FiniteDistribution::from_parts(self.base.support().clone(), ids, mass)
    }

    fn ratio_of(&self, id: usize) -> f64 {
        if self.region.contains(id) {
            self.w1
        } else {
            self.w0
        }
    }

    /// `dG*/dF` at a state of the base support.
    pub fn density_ratio(&self, state: &State) -> Result<f64> {
        let support = self.base.support();
        match support.state(state.id()) {
            Some(own) if own == state && self.base.mass(state.id()) > 0.0 => Ok(self.ratio_of(state.id())),
            _ => Err(Error::DomainMismatch),
        }
    }

    /// Divergence of `G*` from the base next to the closed-form bound.
    pub fn verify_attainment(&self, f: &FGenerator) -> Result<Attainment> {
        let achieved = f_divergence(&self.optimal_distribution(), &self.base, f)?;
        let bound = lower_bound(f, &self.rates()?);
        Ok(Attainment {
            achieved,
            bound,
            gap: achieved - bound,
        })
    }

    pub fn export(&self) -> PlanExport {
        PlanExport {
            alpha: self.alpha,
            beta: self.beta,
            w1: self.w1,
            w0: self.w0,
            region_ids: self.region.ids().collect(),
            seedless: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Attainment {
    pub achieved: f64,
    pub bound: f64,
    pub gap: f64,
}

/// JSON form of a plan. The plan involves no randomness, hence `seedless`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExport {
    pub alpha: f64,
    pub beta: f64,
    pub w1: f64,
    pub w0: f64,
    pub region_ids: Vec<usize>,
    pub seedless: bool,
}
