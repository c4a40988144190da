//! f-divergences on finite supports and the fidelity lower bound
//! `alpha f((1-beta)/alpha) + (1-alpha) f(beta/(1-alpha))`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distribution::FiniteDistribution;
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, xlogy_ratio};

/// Slack allowed on `alpha <= 1 - beta` for rates computed by summation.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Kl,
    Tv,
    Chi2,
    Custom,
}

/// A convex `f` with `f(1) = 0`, plus its limit at `0+`.
#[derive(Clone)]
pub struct FGenerator {
    name: String,
    kind: GeneratorKind,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    value_at_zero: f64,
}

impl fmt::Debug for FGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FGenerator")
            .field("name", &self.name)
            .field("value_at_zero", &self.value_at_zero)
            .finish()
    }
}

impl FGenerator {
    /// `t ln t`.
    pub fn kl() -> Self {
        Self::builtin("kl", GeneratorKind::Kl, |t| t * t.ln(), 0.0)
    }

    /// `|t - 1| / 2`.
    pub fn tv() -> Self {
        Self::builtin("tv", GeneratorKind::Tv, |t| 0.5 * (t - 1.0).abs(), 0.5)
    }

    /// `(t - 1)^2`.
    pub fn chi2() -> Self {
        Self::builtin("chi2", GeneratorKind::Chi2, |t| (t - 1.0).powi(2), 1.0)
    }

    fn builtin(
        name: &str,
        kind: GeneratorKind,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        value_at_zero: f64,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind,
            eval: Arc::new(eval),
            value_at_zero,
        }
    }

    /// `kl`, `tv` or `chi2` (also accepts `chi-square` and `chisq`).
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kl" => Ok(Self::kl()),
            "tv" => Ok(Self::tv()),
            "chi2" | "chi-square" | "chisq" => Ok(Self::chi2()),
            other => Err(Error::InvalidGenerator {
                name: other.to_string(),
                reason: "unknown generator; expected kl, tv or chi2".into(),
            }),
        }
    }

    /// A user-supplied generator. Rejected unless `f(1)` vanishes and 100
    /// random chord checks on `(0, 10)` pass; global convexity cannot be
    /// verified beyond that.
    pub fn custom(
        name: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        value_at_zero: f64,
    ) -> Result<Self> {
        let name = name.into();
        let reject = |reason: String| Error::InvalidGenerator {
            name: name.clone(),
            reason,
        };
        let at_one = eval(1.0);
        if !(at_one.abs() <= 1e-12) {
            return Err(reject(format!("f(1) = {at_one}, expected 0")));
        }
        if !value_at_zero.is_finite() {
            return Err(reject("f(0+) must be finite".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x00c0_ffee);
        for _ in 0..100 {
            let t1 = rng.random_range(f64::EPSILON..10.0);
            let t2 = rng.random_range(f64::EPSILON..10.0);
            let lambda: f64 = rng.random();
            let mid = eval(lambda * t1 + (1.0 - lambda) * t2);
            let chord = lambda * eval(t1) + (1.0 - lambda) * eval(t2);
            if !(mid <= chord + 1e-9) {
                return Err(reject(format!(
                    "not convex between t = {t1} and t = {t2} (lambda = {lambda})"
                )));
            }
        }
        Ok(Self {
            name,
            kind: GeneratorKind::Custom,
            eval: Arc::new(eval),
            value_at_zero,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    /// `f(t)`, with `f(0)` read from the stored limit.
    pub fn eval(&self, t: f64) -> f64 {
        if t == 0.0 {
            self.value_at_zero
        } else {
            (self.eval)(t)
        }
    }
}

/// False-positive rate `alpha` and false-negative rate `beta`, feasible in
/// the sense `0 < alpha <= 1 - beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRates {
    alpha: f64,
    beta: f64,
}

impl ErrorRates {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() || !(0.0..=1.0).contains(&beta) {
            return Err(Error::Domain(format!(
                "rates must be probabilities (alpha = {alpha}, beta = {beta})"
            )));
        }
        if !(alpha > 0.0) || alpha > 1.0 - beta + FEASIBILITY_TOLERANCE {
            return Err(Error::Infeasible { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// A bound that may be infinite (e.g. KL at `alpha = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Finite(f64),
    Unbounded,
}

impl Bound {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Unbounded => None,
        }
    }
}

/// `D_f(G || F) = sum_x F(x) f(G(x)/F(x))`. States outside `supp(G)`
/// contribute `F(x) f(0+)`.
pub fn f_divergence(g: &FiniteDistribution, base: &FiniteDistribution, f: &FGenerator) -> Result<f64> {
    if !g.same_support(base) {
        return Err(Error::DomainMismatch);
    }
    let base_dense = base.dense();
    if let Some(&state) = g.ids().iter().find(|&&id| base_dense[id] == 0.0) {
        return Err(Error::AbsoluteContinuity { state });
    }
    let g_dense = g.dense();
    let base_log = base.log_masses();
    let terms = base
        .ids()
        .iter()
        .zip(base.masses())
        .zip(base_log)
        .map(|((&id, &fm), &log_fm)| {
            let gm = g_dense[id];
            if gm == 0.0 {
                return fm * f.value_at_zero;
            }
            match f.kind {
                GeneratorKind::Kl => gm * (gm.ln() - log_fm),
                GeneratorKind::Tv | GeneratorKind::Chi2 => fm * f.eval(gm / fm),
                GeneratorKind::Custom => fm * f.eval((gm.ln() - log_fm).exp()),
            }
        });
    Ok(compensated_sum(terms))
}

/// `sum_x |P(x) - Q(x)| / 2` for two distributions on one support; no
/// absolute continuity needed.
pub fn total_variation(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    if !p.same_support(q) {
        return Err(Error::DomainMismatch);
    }
    let (pd, qd) = (p.dense(), q.dense());
    Ok(0.5 * compensated_sum(pd.iter().zip(&qd).map(|(a, b)| (a - b).abs())))
}

/// The tight lower bound on `D_f(G || F)` over every `G` meeting the rates.
pub fn lower_bound(f: &FGenerator, rates: &ErrorRates) -> f64 {
    let (a, b) = (rates.alpha, rates.beta);
    let detected = a * f.eval((1.0 - b) / a);
    let missed = if a < 1.0 {
        (1.0 - a) * f.eval(b / (1.0 - a))
    } else {
        0.0
    };
    detected + missed
}

/// KL specialization `(1-beta) ln((1-beta)/alpha) + beta ln(beta/(1-alpha))`.
pub fn kl_lower_bound(rates: &ErrorRates) -> f64 {
    let (a, b) = (rates.alpha, rates.beta);
    xlogy_ratio(1.0 - b, a) + xlogy_ratio(b, 1.0 - a)
}

/// KL bound for raw rates, where `alpha = 0` is allowed and yields
/// [`Bound::Unbounded`].
pub fn kl_bound(alpha: f64, beta: f64) -> Result<Bound> {
    if alpha == 0.0 && (0.0..1.0).contains(&beta) {
        return Ok(Bound::Unbounded);
    }
    if alpha == 0.0 && beta == 1.0 {
        return Ok(Bound::Finite(0.0));
    }
    Ok(Bound::Finite(kl_lower_bound(&ErrorRates::new(alpha, beta)?)))
}

/// Total-variation specialization `1 - alpha - beta`.
pub fn tv_lower_bound(rates: &ErrorRates) -> f64 {
    1.0 - rates.alpha - rates.beta
}

/// Pearson chi-square specialization `(1-alpha-beta)^2 / (alpha (1-alpha))`.
pub fn chi2_lower_bound(rates: &ErrorRates) -> Result<f64> {
    let (a, b) = (rates.alpha, rates.beta);
    if a >= 1.0 {
        return Err(Error::Domain("chi-square bound needs alpha < 1".into()));
    }
    Ok((1.0 - a - b).powi(2) / (a * (1.0 - a)))
}

/// The earlier green-list distortion bound `-ln((alpha+beta)(2-alpha-beta))`.
pub fn cai_bound(rates: &ErrorRates) -> Result<f64> {
    let s = rates.alpha + rates.beta;
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!(
            "prior bound needs 0 < alpha + beta < 1, got {s}"
        )));
    }
    // (s)(2 - s) = 1 - (1 - s)^2
    Ok(-(-(1.0 - s).powi(2)).ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundComparison {
    pub alpha: f64,
    pub beta: f64,
    pub g1: f64,
    pub g2: f64,
    pub margin: f64,
}

/// Prior bound `g1` against the tight KL bound `g2`.
pub fn compare_bounds(rates: &ErrorRates) -> Result<BoundComparison> {
    if !(rates.beta > 0.0) {
        return Err(Error::Domain("comparison needs beta > 0".into()));
    }
    let g1 = cai_bound(rates)?;
    let g2 = kl_lower_bound(rates);
    Ok(BoundComparison {
        alpha: rates.alpha,
        beta: rates.beta,
        g1,
        g2,
        margin: g2 - g1,
    })
}

/// `D_f(Bernoulli(q) || Bernoulli(a))`.
pub fn bernoulli_f_divergence(a: f64, q: f64, f: &FGenerator) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("base probability {a} not in (0, 1)")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("probability {q} not in [0, 1]")));
    }
    Ok(a * f.eval(q / a) + (1.0 - a) * f.eval((1.0 - q) / (1.0 - a)))
}
