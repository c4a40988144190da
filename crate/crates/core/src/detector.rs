//! Score functions, threshold detectors and false-positive calibration.

use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distribution::{csv_error, FiniteDistribution, State, StateSet, Support};
use crate::error::{Error, Result};

/// Keyed hash of a state's payload mapped to `[0, 1)` with 53 bits.
///
/// The key is length-prefixed before hashing so that `(key, payload)` pairs
/// cannot collide by shifting bytes between the two.
pub fn hash_score(key: &[u8], state: &State) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update((key.len() as u64).to_le_bytes());
    hasher.update(key);
    hasher.update(state.payload());
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(word) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A real-valued score over states.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreFunction {
    /// [`hash_score`] with a fixed key; total on every support.
    KeyedHash { key: Vec<u8> },
    /// Externally produced scores indexed by state id of one support.
    Table { support_uid: u64, scores: Vec<Option<f64>> },
}

impl ScoreFunction {
    pub fn keyed_hash(key: impl Into<Vec<u8>>) -> Self {
        Self::KeyedHash { key: key.into() }
    }

    /// Table of scores for every state of `support`, indexed by id.
    pub fn table(support: &Support, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != support.len() {
            return Err(Error::Domain(format!(
                "{} scores for {} states",
                scores.len(),
                support.len()
            )));
        }
        Ok(Self::Table {
            support_uid: support.uid(),
            scores: scores.into_iter().map(Some).collect(),
        })
    }

    pub fn score(&self, state: &State) -> Result<f64> {
        match self {
            Self::KeyedHash { key } => Ok(hash_score(key, state)),
            Self::Table { scores, .. } => scores.get(state.id()).copied().flatten().ok_or(Error::Coverage {
                missing: vec![state.id()],
            }),
        }
    }

    /// Scores of every state in `support`, indexed by id. States of the
    /// support that carry no score are `NaN`.
    fn dense(&self, support: &Support) -> Result<Vec<f64>> {
        match self {
            Self::KeyedHash { key } => Ok(support.states().iter().map(|s| hash_score(key, s)).collect()),
            Self::Table { support_uid, scores } => {
                if *support_uid != support.uid() || scores.len() != support.len() {
                    return Err(Error::DomainMismatch);
                }
                Ok(scores.iter().map(|s| s.unwrap_or(f64::NAN)).collect())
            }
        }
    }

    /// Scores of every state of `dist`'s support, indexed by id; fails if any
    /// positive-mass state is uncovered.
    pub fn scores_for(&self, dist: &FiniteDistribution) -> Result<Vec<f64>> {
        let scores = self.dense(dist.support())?;
        let missing: Vec<usize> = dist.ids().iter().copied().filter(|&id| scores[id].is_nan()).collect();
        if missing.is_empty() {
            Ok(scores)
        } else {
            Err(Error::Coverage { missing })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScoreKey {
    Id,
    PayloadHash,
}

/// Reads a score file (`state_id,score` or `payload_sha256,score`) for the
/// states of `dist`. A header row is optional; when present its first column
/// name selects the key kind, otherwise the kind is inferred per row (64 hex
/// characters is a payload hash).
pub fn load_scores<R: Read>(source: R, dist: &FiniteDistribution) -> Result<ScoreFunction> {
    let support = dist.support();
    let mut by_hash: HashMap<String, Vec<usize>> = HashMap::new();
    for state in support.states() {
        by_hash.entry(state.payload_sha256()).or_default().push(state.id());
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut scores: Vec<Option<f64>> = vec![None; support.len()];
    let mut forced: Option<ScoreKey> = None;
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(err) => return Err(csv_error(err)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != 2 {
            return Err(parse_err(format!("expected 2 columns, found {}", record.len())));
        }
        let (key, value) = (&record[0], &record[1]);
        let score = value.parse::<f64>();
        if first {
            first = false;
            if score.is_err() {
                forced = match key {
                    "state_id" | "id" => Some(ScoreKey::Id),
                    "payload_sha256" | "payload_hash" => Some(ScoreKey::PayloadHash),
                    other => return Err(parse_err(format!("unknown key column `{other}`"))),
                };
                continue;
            }
        }
        let score = score.map_err(|e| parse_err(format!("bad score `{value}`: {e}")))?;
        if !score.is_finite() {
            return Err(parse_err(format!("score `{value}` is not finite")));
        }
        let kind = forced.unwrap_or_else(|| {
            if key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit()) {
                ScoreKey::PayloadHash
            } else {
                ScoreKey::Id
            }
        });
        let targets: Vec<usize> = match kind {
            ScoreKey::Id => {
                let id: usize = key.parse().map_err(|_| parse_err(format!("bad state id `{key}`")))?;
                if id >= support.len() {
                    return Err(parse_err(format!("state id {id} is not in the support")));
                }
                vec![id]
            }
            ScoreKey::PayloadHash => by_hash
                .get(&key.to_ascii_lowercase())
                .cloned()
                .ok_or_else(|| parse_err(format!("no state has payload hash {key}")))?,
        };
        for id in targets {
            if scores[id].replace(score).is_some() {
                return Err(Error::ScoreConflict { key: key.to_string() });
            }
        }
    }

    let table = ScoreFunction::Table {
        support_uid: support.uid(),
        scores,
    };
    table.scores_for(dist)?;
    Ok(table)
}

/// `D(x) = 1{s(x) >= tau}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDetector {
    pub score: ScoreFunction,
    pub tau: f64,
}

impl ThresholdDetector {
    pub fn new(score: ScoreFunction, tau: f64) -> Self {
        Self { score, tau }
    }

    /// True when the state is flagged; a score equal to `tau` is flagged.
    pub fn detect(&self, state: &State) -> Result<bool> {
        Ok(self.score.score(state)? >= self.tau)
    }

    /// Detection region restricted to the strict support of `dist`.
    pub fn region(&self, dist: &FiniteDistribution) -> Result<StateSet> {
        let scores = self.score.scores_for(dist)?;
        Ok(region_from_scores(dist, &scores, self.tau))
    }
}

fn region_from_scores(dist: &FiniteDistribution, scores: &[f64], tau: f64) -> StateSet {
    let mut mask = vec![false; dist.support().len()];
    for &id in dist.ids() {
        mask[id] = scores[id] >= tau;
    }
    StateSet::from_mask(dist.support(), mask)
}

/// Achieved false-positive rate of one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub tau: f64,
    #[serde(rename = "alpha")]
    pub achieved_alpha: f64,
}

/// Exact `F(s >= tau)` for each threshold, sorted by `tau`.
pub fn calibrate(dist: &FiniteDistribution, score: &ScoreFunction, taus: &[f64]) -> Result<Vec<CalibrationRecord>> {
    let scores = score.scores_for(dist)?;
    let mut taus = taus.to_vec();
    taus.sort_by(f64::total_cmp);
    taus.into_iter()
        .map(|tau| {
            let region = region_from_scores(dist, &scores, tau);
            Ok(CalibrationRecord {
                tau,
                achieved_alpha: dist.mass_of(&region)?,
            })
        })
        .collect()
}

/// Weighted score quantiles under `dist`: for each level `q`, the smallest
/// score `s` with `F(score <= s) >= q`.
pub fn score_quantiles(dist: &FiniteDistribution, score: &ScoreFunction, levels: &[f64]) -> Result<Vec<f64>> {
    let scores = score.scores_for(dist)?;
    let mut pairs: Vec<(f64, f64)> = dist
        .ids()
        .iter()
        .zip(dist.masses())
        .map(|(&id, &m)| (scores[id], m))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf = Vec::with_capacity(pairs.len());
    let mut acc = 0.0;
    for &(_, m) in &pairs {
        acc += m;
        cdf.push(acc);
    }
    Ok(levels
        .iter()
        .map(|&q| {
            let pos = cdf.partition_point(|&c| c < q - 1e-12).min(pairs.len() - 1);
            pairs[pos].0
        })
        .collect())
}
