//! Finite discrete distributions over an explicit support.
//!
//! A [`Support`] owns the states (rows) and fixes their ids `0..K`. Any number
//! of [`FiniteDistribution`]s and [`StateSet`]s can refer to the same support;
//! operations that combine them check that they agree on it.

use std::collections::HashMap;
use std::io::Read;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Separator byte placed between canonicalized cells (ASCII unit separator).
pub const CELL_SEPARATOR: u8 = 0x1f;

/// Tolerance on the total mass of a constructed distribution.
pub const MASS_TOLERANCE: f64 = 1e-12;

static NEXT_SUPPORT_UID: AtomicU64 = AtomicU64::new(1);

/// One element of the state space: a stable id and its canonical row bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct State {
    id: usize,
    payload: Vec<u8>,
}

impl State {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Lowercase hex SHA-256 of the payload.
    pub fn payload_sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.payload))
    }
}

/// Canonical payload of a row: trimmed cells joined by [`CELL_SEPARATOR`].
pub fn canonicalize_row<'a, I: IntoIterator<Item = &'a str>>(cells: I) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, cell) in cells.into_iter().enumerate() {
        if i > 0 {
            out.push(CELL_SEPARATOR);
        }
        out.extend_from_slice(cell.trim().as_bytes());
    }
    out
}

/// The ordered state space shared by related distributions.
#[derive(Debug)]
pub struct Support {
    uid: u64,
    states: Vec<State>,
}

impl Support {
    /// Builds a support from payloads; ids follow the iteration order.
    pub fn from_payloads<I: IntoIterator<Item = Vec<u8>>>(payloads: I) -> Arc<Self> {
        let states = payloads
            .into_iter()
            .enumerate()
            .map(|(id, payload)| State { id, payload })
            .collect();
        Arc::new(Self {
            uid: NEXT_SUPPORT_UID.fetch_add(1, Ordering::Relaxed),
            states,
        })
    }

    /// `k` states with payloads `s0`, `s1`, ...
    pub fn synthetic(k: usize) -> Arc<Self> {
        Self::from_payloads((0..k).map(|i| format!("s{i}").into_bytes()))
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, id: usize) -> Option<&State> {
        self.states.get(id)
    }
}

/// A subset of one support's ids, e.g. a detection region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSet {
    support_uid: u64,
    members: Vec<bool>,
}

impl StateSet {
    pub fn empty(support: &Support) -> Self {
        Self {
            support_uid: support.uid,
            members: vec![false; support.len()],
        }
    }

    pub fn full(support: &Support) -> Self {
        Self {
            support_uid: support.uid,
            members: vec![true; support.len()],
        }
    }

    pub fn from_ids<I: IntoIterator<Item = usize>>(support: &Support, ids: I) -> Result<Self> {
        let mut set = Self::empty(support);
        for id in ids {
            *set.members.get_mut(id).ok_or(Error::DomainMismatch)? = true;
        }
        Ok(set)
    }

    pub(crate) fn from_mask(support: &Support, members: Vec<bool>) -> Self {
        debug_assert_eq!(members.len(), support.len());
        Self {
            support_uid: support.uid,
            members,
        }
    }

    pub fn support_uid(&self) -> u64 {
        self.support_uid
    }

    pub fn belongs_to(&self, support: &Support) -> bool {
        self.support_uid == support.uid && self.members.len() == support.len()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.members.get(id).copied().unwrap_or(false)
    }

    /// Number of member states.
    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().enumerate().filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn complement(&self) -> Self {
        Self {
            support_uid: self.support_uid,
            members: self.members.iter().map(|m| !m).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.support_uid != other.support_uid {
            return Err(Error::DomainMismatch);
        }
        Ok(Self {
            support_uid: self.support_uid,
            members: self.members.iter().zip(&other.members).map(|(a, b)| *a || *b).collect(),
        })
    }
}

/// Probability mass function over the strictly positive part of a support.
///
/// Masses are stored sparsely by increasing state id. Zero-mass states are
/// never stored, so `ids()` is exactly the strict support.
#[derive(Debug, Clone)]
pub struct FiniteDistribution {
    support: Arc<Support>,
    ids: Vec<usize>,
    mass: Vec<f64>,
    log_mass: OnceLock<Vec<f64>>,
    cumulative: OnceLock<Vec<f64>>,
}

impl FiniteDistribution {
    /// Builds a distribution from a dense mass vector indexed by state id.
    /// Masses must be finite, nonnegative and sum to one within
    /// [`MASS_TOLERANCE`].
    pub fn from_dense(support: Arc<Support>, dense: &[f64]) -> Result<Self> {
        if dense.len() != support.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} masses for a support of {} states",
                dense.len(),
                support.len()
            )));
        }
        if let Some((i, m)) = dense.iter().enumerate().find(|(_, m)| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidDistribution(format!("state {i} has mass {m}")));
        }
        let total = compensated_sum(dense.iter().copied());
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("masses sum to {total}")));
        }
        let (ids, mass) = dense
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(i, &m)| (i, m))
            .unzip();
        Ok(Self::from_parts(support, ids, mass))
    }

    /// Normalizes nonnegative weights indexed by state id.
    pub fn from_weights(support: Arc<Support>, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        let dense: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Self::from_dense(support, &dense)
    }

    pub fn uniform(support: Arc<Support>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptyInput);
        }
        let k = support.len();
        let mass = vec![1.0 / k as f64; k];
        Ok(Self::from_parts(support, (0..k).collect(), mass))
    }

    /// Point mass on `id`.
    pub fn point(support: Arc<Support>, id: usize) -> Result<Self> {
        if id >= support.len() {
            return Err(Error::DomainMismatch);
        }
        Ok(Self::from_parts(support, vec![id], vec![1.0]))
    }

    pub(crate) fn from_parts(support: Arc<Support>, ids: Vec<usize>, mass: Vec<f64>) -> Self {
        Self {
            support,
            ids,
            mass,
            log_mass: OnceLock::new(),
            cumulative: OnceLock::new(),
        }
    }

    pub fn support(&self) -> &Arc<Support> {
        &self.support
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.support.uid == other.support.uid
    }

    /// Ids of the strictly positive states, increasing.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Masses aligned with [`ids`](Self::ids).
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Natural logs of [`masses`](Self::masses), computed once.
    pub fn log_masses(&self) -> &[f64] {
        self.log_mass.get_or_init(|| self.mass.iter().map(|m| m.ln()).collect())
    }

    /// Number of positive-mass states.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&State, f64)> + '_ {
        self.ids
            .iter()
            .zip(&self.mass)
            .map(|(&id, &m)| (&self.support.states[id], m))
    }

    /// Mass of a single state id (zero outside the strict support).
    pub fn mass(&self, id: usize) -> f64 {
        self.ids.binary_search(&id).map(|pos| self.mass[pos]).unwrap_or(0.0)
    }

    /// Masses laid out densely over the whole support.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.support.len()];
        for (&id, &m) in self.ids.iter().zip(&self.mass) {
            out[id] = m;
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.mass.iter().copied())
    }

    /// Probability of `set`, summed in id order.
    pub fn mass_of(&self, set: &StateSet) -> Result<f64> {
        if !set.belongs_to(&self.support) {
            return Err(Error::DomainMismatch);
        }
        Ok(compensated_sum(
            self.ids
                .iter()
                .zip(&self.mass)
                .filter(|(&id, _)| set.contains(id))
                .map(|(_, &m)| m),
        ))
    }

    /// The set of strictly positive states.
    pub fn strict_support(&self) -> StateSet {
        let mut set = StateSet::empty(&self.support);
        for &id in &self.ids {
            set.members[id] = true;
        }
        set
    }

    fn cumulative(&self) -> &[f64] {
        self.cumulative.get_or_init(|| {
            let mut acc = 0.0;
            self.mass
                .iter()
                .map(|m| {
                    acc += m;
                    acc
                })
                .collect()
        })
    }

    /// Draws one state id by inverse CDF. Consumes exactly one `f64` from `rng`.
    pub fn sample_id<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let cdf = self.cumulative();
        let total = *cdf.last().expect("distribution is never empty");
        let u = rng.random::<f64>() * total;
        let pos = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        self.ids[pos]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &State {
        &self.support.states[self.sample_id(rng)]
    }

    /// Export records `{id, payload_hash, mass}`.
    pub fn export(&self) -> Vec<MassRecord> {
        self.iter()
            .map(|(state, mass)| MassRecord {
                id: state.id,
                payload_hash: state.payload_sha256(),
                mass,
            })
            .collect()
    }

    /// Empirical distribution of observed state ids, on this support.
    pub fn empirical_from_counts(support: Arc<Support>, counts: &[u64]) -> Result<Self> {
        if counts.len() != support.len() {
            return Err(Error::DomainMismatch);
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let (ids, mass) = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c as f64 / n as f64))
            .unzip();
        Ok(Self::from_parts(support, ids, mass))
    }
}

/// One row of a distribution export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub id: usize,
    pub payload_hash: String,
    pub mass: f64,
}

/// Options for [`ingest_csv`].
#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub has_header: bool,
    pub dedupe: bool,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            dedupe: false,
            delimiter: b',',
        }
    }
}

/// Reads a delimited table into the empirical distribution over its rows.
///
/// Without dedupe every row is its own state with mass `1/N`. With dedupe,
/// identical canonical rows share one state of mass `multiplicity/N`, in order
/// of first appearance.
pub fn ingest_csv<R: Read>(source: R, options: CsvOptions) -> Result<FiniteDistribution> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .delimiter(options.delimiter)
        .flexible(false)
        .from_reader(source);

    let mut payloads: Vec<Vec<u8>> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(true) => {}
            Ok(false) => break,
            Err(err) => return Err(csv_error(err)),
        }
        let payload = canonicalize_row(record.iter());
        if options.dedupe {
            match index.get(&payload) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(payload.clone(), payloads.len());
                    payloads.push(payload);
                    counts.push(1);
                }
            }
        } else {
            payloads.push(payload);
            counts.push(1);
        }
    }
    if payloads.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n: u64 = counts.iter().sum();
    let k = payloads.len();
    let mass = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(FiniteDistribution::from_parts(
        Support::from_payloads(payloads),
        (0..k).collect(),
        mass,
    ))
}

pub(crate) fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    let message = match err.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} columns, found {len}")
        }
        _ => err.to_string(),
    };
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        _ => Error::Parse { line, message },
    }
}
