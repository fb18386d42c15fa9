//! Card-level simulation of the observation and preparation procedures.
//!
//! A trial holds an ordered subdeck of card-type indices; the top of the deck
//! is the *end* of the slice. Three orderings of the observation steps are
//! available:
//!
//! * `S`: shuffle, report the top card, reconstruct (seeded stream).
//! * `Svi`: same order, shuffled from an external randomness device.
//! * `Svd`: report, reconstruct, shuffle. The next card to be reported is
//!   already on top between observations.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::deck::{Deck, Target};
use crate::engine::{Engine, EngineError, EventStep, OutcomePredicate, Outcome};
use crate::parse::{format_outcome, format_steps, Expression};
use crate::prob::Prob;

pub const DEFAULT_PREP_CAP: u64 = 1_000_000;
pub const DEFAULT_CHUNK: u64 = 1 << 16;
const ENTROPY_BLOCK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    S,
    Svi,
    Svd,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::S, Variant::Svi, Variant::Svd];

    pub fn shuffles_last(self) -> bool {
        self == Variant::Svd
    }

    pub fn accepts(self, entropy: &EntropySource) -> bool {
        matches!(
            (self, entropy),
            (Variant::S, EntropySource::Seeded { .. })
                | (Variant::Svi, EntropySource::External(_))
                | (Variant::Svd, _)
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::S => "s",
            Variant::Svi => "svi",
            Variant::Svd => "svd",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(Variant::S),
            "svi" => Ok(Variant::Svi),
            "svd" => Ok(Variant::Svd),
            other => Err(format!("unknown variant {other:?} (expected s, svi or svd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntropyDevice {
    /// The operating system's randomness source.
    Os,
    /// A byte stream such as `/dev/urandom` or a hardware device node.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntropySource {
    /// ChaCha8 keyed by `seed`; trial chunk `i` reads stream `i`.
    Seeded { seed: u64 },
    External(EntropyDevice),
}

impl fmt::Display for EntropySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntropySource::Seeded { seed } => write!(f, "seeded({seed})"),
            EntropySource::External(EntropyDevice::Os) => f.write_str("os"),
            EntropySource::External(EntropyDevice::File(p)) => write!(f, "device({})", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShuffleStrategy {
    /// Complete decreasing-index swap shuffle.
    #[default]
    Full,
    /// Only the first swap of the full shuffle, which already fixes the top
    /// card with the same distribution. Every observation replaces the
    /// subdeck, so the order below the top is never read.
    TopOnly,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trial count must be at least 1")]
    ZeroTrials,
    #[error("variant {variant} cannot run on entropy source {entropy}")]
    VariantEntropy { variant: Variant, entropy: String },
    #[error("entropy unavailable: {0}")]
    EntropyUnavailable(String),
    #[error("preparation did not reach {target} within {cap} iterations")]
    PrepCapExceeded { target: String, cap: u64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("frequency tables differ in shape")]
    TableMismatch,
}

/// Uniform permutation by the decreasing-index swap method.
pub fn shuffle<T, R: Rng + ?Sized>(cards: &mut [T], rng: &mut R) {
    for i in (1..cards.len()).rev() {
        let j = rng.random_range(0..=i);
        cards.swap(i, j);
    }
}

/// The first swap of [`shuffle`]: the top card becomes uniform.
pub fn shuffle_top<T, R: Rng + ?Sized>(cards: &mut [T], rng: &mut R) {
    if cards.len() > 1 {
        let i = cards.len() - 1;
        let j = rng.random_range(0..=i);
        cards.swap(i, j);
    }
}

enum Device {
    Os,
    Shared(Arc<Mutex<File>>),
}

/// Buffered reader over an external randomness device.
///
/// A read failure after construction is latched in `failure`; the bytes
/// produced afterwards are only there to keep sampling loops terminating and
/// the caller must discard the affected trials.
pub struct ExternalRng {
    device: Device,
    buf: Box<[u8; ENTROPY_BLOCK]>,
    pos: usize,
    failure: Option<String>,
    filler: u64,
}

impl ExternalRng {
    fn open(device: &EntropyDevice) -> Result<Self, SimError> {
        let device = match device {
            EntropyDevice::Os => Device::Os,
            EntropyDevice::File(path) => {
                let f = File::open(path)
                    .map_err(|e| SimError::EntropyUnavailable(format!("{}: {e}", path.display())))?;
                Device::Shared(Arc::new(Mutex::new(f)))
            }
        };
        Self::from_device(device)
    }

    fn from_device(device: Device) -> Result<Self, SimError> {
        let mut rng = ExternalRng {
            device,
            buf: Box::new([0; ENTROPY_BLOCK]),
            pos: ENTROPY_BLOCK,
            failure: None,
            filler: 0x9e37_79b9_7f4a_7c15,
        };
        rng.refill();
        match rng.failure.take() {
            Some(msg) => Err(SimError::EntropyUnavailable(msg)),
            None => Ok(rng),
        }
    }

    fn sibling(&self) -> Result<Self, SimError> {
        let device = match &self.device {
            Device::Os => Device::Os,
            Device::Shared(f) => Device::Shared(Arc::clone(f)),
        };
        Self::from_device(device)
    }

    fn refill(&mut self) {
        let res = match &self.device {
            Device::Os => getrandom::fill(&mut self.buf[..]).map_err(|e| e.to_string()),
            Device::Shared(f) => {
                let mut f = f.lock().unwrap_or_else(|p| p.into_inner());
                f.read_exact(&mut self.buf[..]).map_err(|e| e.to_string())
            }
        };
        if let Err(msg) = res {
            self.failure.get_or_insert(msg);
            for chunk in self.buf.chunks_mut(8) {
                self.filler = self.filler.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                chunk.copy_from_slice(&self.filler.to_le_bytes()[..chunk.len()]);
            }
        }
        self.pos = 0;
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }
}

impl RngCore for ExternalRng {
    fn next_u32(&mut self) -> u32 {
        let mut b = [0u8; 4];
        if let Some(src) = self.buf.get(self.pos..self.pos + 4) {
            b.copy_from_slice(src);
            self.pos += 4;
        } else {
            self.fill_bytes(&mut b);
        }
        u32::from_le_bytes(b)
    }

    fn next_u64(&mut self) -> u64 {
        let mut b = [0u8; 8];
        if let Some(src) = self.buf.get(self.pos..self.pos + 8) {
            b.copy_from_slice(src);
            self.pos += 8;
        } else {
            self.fill_bytes(&mut b);
        }
        u64::from_le_bytes(b)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        let mut done = 0;
        while done < dst.len() {
            if self.pos == ENTROPY_BLOCK {
                self.refill();
            }
            let take = (dst.len() - done).min(ENTROPY_BLOCK - self.pos);
            dst[done..done + take].copy_from_slice(&self.buf[self.pos..self.pos + take]);
            self.pos += take;
            done += take;
        }
    }
}

/// Seeded stream for trial chunk `stream`.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deck data laid out for fast trials.
pub struct Simulator<'d> {
    deck: &'d Deck,
    targets: Vec<Target>,
    /// `outcome[t][card]`
    outcome: Vec<Vec<usize>>,
    /// `successor[t][o]`: full-deck cards showing outcome `o`, canonical order.
    successor: Vec<Vec<Vec<u32>>>,
    full: Vec<u32>,
    /// `others[t]`: plain variables other than the one underlying `t`.
    others: Vec<Vec<usize>>,
    pub shuffle: ShuffleStrategy,
    pub prep_cap: u64,
}

impl<'d> Simulator<'d> {
    pub fn new(deck: &'d Deck) -> Self {
        let targets = deck.targets();
        let outcome: Vec<Vec<usize>> = targets
            .iter()
            .map(|&t| (0..deck.cards().len()).map(|c| deck.outcome_of(c, t)).collect())
            .collect();
        let expand = |keep: &dyn Fn(usize) -> bool| -> Vec<u32> {
            deck.counts()
                .iter()
                .enumerate()
                .filter(|(c, _)| keep(*c))
                .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n as usize))
                .collect()
        };
        let successor = targets
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                (0..deck.outcome_count(t))
                    .map(|o| expand(&|c| outcome[ti][c] == o))
                    .collect()
            })
            .collect();
        let others = targets
            .iter()
            .map(|t| {
                let under = t.underlying(deck);
                (0..deck.variables().len()).filter(|&v| v != under.0).collect()
            })
            .collect();
        Simulator {
            deck,
            targets,
            outcome,
            successor,
            full: expand(&|_| true),
            others,
            shuffle: ShuffleStrategy::Full,
            prep_cap: DEFAULT_PREP_CAP,
        }
    }

    pub fn with_shuffle(mut self, s: ShuffleStrategy) -> Self {
        self.shuffle = s;
        self
    }

    pub fn with_prep_cap(mut self, cap: u64) -> Self {
        self.prep_cap = cap;
        self
    }

    pub fn deck(&self) -> &'d Deck {
        self.deck
    }

    fn index(&self, t: Target) -> usize {
        self.targets.iter().position(|&x| x == t).expect("target belongs to the deck")
    }

    pub fn trial<R: RngCore>(&self, variant: Variant, rng: R) -> Trial<'_, 'd, R> {
        let mut t = Trial {
            sim: self,
            variant,
            rng,
            cards: Vec::with_capacity(self.full.len()),
        };
        t.reset();
        t
    }

    /// Counts outcome tuples of `steps` over `trials` trials, each starting
    /// with the preparation loop for `prep`.
    #[allow(clippy::too_many_arguments)]
    fn run_chunk<R: RngCore>(
        &self,
        prep: Outcome,
        steps: &[usize],
        radix: &[usize],
        variant: Variant,
        rng: R,
        trials: u64,
        failure: impl Fn(&R) -> Option<String>,
    ) -> Result<Vec<u64>, SimError> {
        let mut counts = vec![0u64; radix.iter().product()];
        let mut trial = self.trial(variant, rng);
        let prep_ti = self.index(prep.target);
        for _ in 0..trials {
            trial.prepare_index(prep_ti, prep.value)?;
            let mut idx = 0;
            for (&ti, &r) in steps.iter().zip(radix) {
                idx = idx * r + trial.observe_index(ti);
            }
            if let Some(msg) = failure(&trial.rng) {
                return Err(SimError::EntropyUnavailable(msg));
            }
            counts[idx] += 1;
        }
        Ok(counts)
    }

    /// Runs the literal procedure `n` times and tallies every outcome tuple
    /// of the manifested targets.
    pub fn run(
        &self,
        prep: Outcome,
        targets: &[Target],
        n: u64,
        variant: Variant,
        entropy: &EntropySource,
    ) -> Result<ProtocolCounts, SimError> {
        if n == 0 {
            return Err(SimError::ZeroTrials);
        }
        if !variant.accepts(entropy) {
            return Err(SimError::VariantEntropy {
                variant,
                entropy: entropy.to_string(),
            });
        }
        Engine::new(self.deck).prepare(prep.target, prep.value)?;
        let steps: Vec<usize> = targets.iter().map(|&t| self.index(t)).collect();
        let radix: Vec<usize> = targets.iter().map(|&t| self.deck.outcome_count(t)).collect();
        let chunks: Vec<(u64, u64)> = (0..n.div_ceil(DEFAULT_CHUNK))
            .map(|i| (i, DEFAULT_CHUNK.min(n - i * DEFAULT_CHUNK)))
            .collect();
        let parts: Vec<Vec<u64>> = match entropy {
            EntropySource::Seeded { seed } => chunks
                .par_iter()
                .map(|&(i, len)| {
                    self.run_chunk(prep, &steps, &radix, variant, seeded_stream(*seed, i), len, |_| None)
                })
                .collect::<Result<_, _>>()?,
            EntropySource::External(device) => {
                let root = ExternalRng::open(device)?;
                chunks
                    .par_iter()
                    .map(|&(_, len)| {
                        let rng = root.sibling()?;
                        self.run_chunk(prep, &steps, &radix, variant, rng, len, |r| {
                            r.failure().map(str::to_string)
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        let mut tuple_counts = vec![0u64; radix.iter().product()];
        for part in parts {
            for (a, b) in tuple_counts.iter_mut().zip(part) {
                *a += b;
            }
        }
        Ok(ProtocolCounts {
            prep,
            targets: targets.to_vec(),
            radix,
            n,
            tuple_counts,
        })
    }
}

/// One trial in progress.
pub struct Trial<'s, 'd, R> {
    sim: &'s Simulator<'d>,
    variant: Variant,
    rng: R,
    cards: Vec<u32>,
}

impl<R: RngCore> Trial<'_, '_, R> {
    fn shuffle_now(&mut self) {
        match self.sim.shuffle {
            ShuffleStrategy::Full => shuffle(&mut self.cards, &mut self.rng),
            ShuffleStrategy::TopOnly => shuffle_top(&mut self.cards, &mut self.rng),
        }
    }

    /// Back to the full deck. Under `Svd` the deck is shuffled once here so
    /// that a top card is pending before the first observation.
    pub fn reset(&mut self) {
        self.cards.clear();
        self.cards.extend_from_slice(&self.sim.full);
        if self.variant.shuffles_last() {
            self.shuffle_now();
        }
    }

    fn observe_index(&mut self, ti: usize) -> usize {
        if !self.variant.shuffles_last() {
            self.shuffle_now();
        }
        let top = *self.cards.last().expect("subdeck is never empty") as usize;
        let value = self.sim.outcome[ti][top];
        self.cards.clear();
        self.cards.extend_from_slice(&self.sim.successor[ti][value]);
        if self.variant.shuffles_last() {
            self.shuffle_now();
        }
        value
    }

    /// Shuffle/report/reconstruct in the variant's order; returns the
    /// reported outcome.
    pub fn observe(&mut self, target: Target) -> usize {
        let ti = self.sim.index(target);
        self.observe_index(ti)
    }

    fn prepare_index(&mut self, ti: usize, value: usize) -> Result<(), SimError> {
        self.reset();
        let others = &self.sim.others[ti];
        for it in 0..self.sim.prep_cap {
            if !others.is_empty() {
                self.observe_index(others[it as usize % others.len()]);
            }
            if self.observe_index(ti) == value {
                return Ok(());
            }
        }
        let t = self.sim.targets[ti];
        Err(SimError::PrepCapExceeded {
            target: format_outcome(self.sim.deck, Outcome::new(t, value)),
            cap: self.sim.prep_cap,
        })
    }

    /// Repeat {observe another variable, observe `target`} until `target`
    /// reports `value`. Starts from the full deck.
    pub fn prepare(&mut self, target: Target, value: usize) -> Result<(), SimError> {
        let ti = self.sim.index(target);
        self.prepare_index(ti, value)
    }

    /// The ordered subdeck; the top card is last.
    pub fn subdeck(&self) -> &[u32] {
        &self.cards
    }

    /// Card-type multiplicities of the subdeck, comparable with
    /// [`crate::engine::PState::support`].
    pub fn support(&self) -> Vec<u64> {
        let mut s = vec![0u64; self.sim.deck.cards().len()];
        for &c in &self.cards {
            s[c as usize] += 1;
        }
        s
    }

    /// Values of every plain variable of the card that the next observation
    /// will report, when that card is already fixed. Only `Svd` has one:
    /// the other variants shuffle as the first act of observing.
    pub fn pending_values(&self) -> Option<Vec<usize>> {
        if !self.variant.shuffles_last() {
            return None;
        }
        let top = *self.cards.last()? as usize;
        Some(self.sim.deck.cards()[top].0.clone())
    }
}

/// Raw tallies of one protocol: prep, manifested targets, tuple counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolCounts {
    pub prep: Outcome,
    pub targets: Vec<Target>,
    radix: Vec<usize>,
    pub n: u64,
    tuple_counts: Vec<u64>,
}

impl ProtocolCounts {
    fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.radix.len()];
        for (slot, &r) in out.iter_mut().zip(&self.radix).rev() {
            *slot = idx % r;
            idx /= r;
        }
        out
    }

    /// Trials whose outcomes satisfy every predicate.
    pub fn count_matching(&self, preds: &[OutcomePredicate]) -> u64 {
        assert_eq!(preds.len(), self.radix.len(), "one predicate per step");
        self.tuple_counts
            .iter()
            .enumerate()
            .filter(|(i, _)| self.decode(*i).iter().zip(preds).all(|(&o, p)| p.accepts(o)))
            .map(|(_, &c)| c)
            .sum()
    }

    pub fn tuple_counts(&self) -> &[u64] {
        &self.tuple_counts
    }

    /// Adds another run of the same protocol.
    pub fn merge(&mut self, other: &ProtocolCounts) -> Result<(), SimError> {
        if self.prep != other.prep || self.targets != other.targets {
            return Err(SimError::TableMismatch);
        }
        self.n += other.n;
        for (a, b) in self.tuple_counts.iter_mut().zip(&other.tuple_counts) {
            *a += b;
        }
        Ok(())
    }

    fn matches(&self, expr: &Expression) -> bool {
        expr.prep == self.prep
            && expr.steps.len() == self.targets.len()
            && expr.steps.iter().zip(&self.targets).all(|(s, &t)| s.manifestation == t)
    }

    /// Frequency of `expr`, which must share this protocol's prep and
    /// targets.
    pub fn row(&self, deck: &Deck, expr: &Expression) -> Result<FrequencyRow, SimError> {
        if !self.matches(expr) {
            return Err(SimError::TableMismatch);
        }
        let engine = Engine::new(deck);
        let prep = engine.prepare(expr.prep.target, expr.prep.value)?;
        let preds: Vec<OutcomePredicate> = expr.steps.iter().map(|s| s.outcome.clone()).collect();
        Ok(FrequencyRow {
            sequence: crate::parse::format_expression(deck, expr),
            count: self.count_matching(&preds),
            exact: engine.steps_prob(&prep, &expr.steps)?,
        })
    }

    /// The expression's own row followed by one row per concrete outcome
    /// tuple; steps the expression ignores stay ignored.
    pub fn table(&self, deck: &Deck, expr: &Expression) -> Result<FrequencyTable, SimError> {
        let mut rows = vec![self.row(deck, expr)?];
        let ignored: Vec<bool> = expr
            .steps
            .iter()
            .map(|s| s.outcome == OutcomePredicate::Ignored)
            .collect();
        let concrete: Vec<usize> = (0..self.radix.len()).filter(|&i| !ignored[i]).collect();
        let sizes: Vec<usize> = concrete.iter().map(|&i| self.radix[i]).collect();
        let total: usize = sizes.iter().product();
        for k in 0..total {
            let mut rem = k;
            let mut picks = vec![0; sizes.len()];
            for (slot, &r) in picks.iter_mut().zip(&sizes).rev() {
                *slot = rem % r;
                rem /= r;
            }
            let mut picks = picks.into_iter();
            let steps = expr
                .steps
                .iter()
                .zip(&ignored)
                .map(|(s, &ig)| {
                    if ig {
                        EventStep::ignored(s.manifestation)
                    } else {
                        EventStep::single(s.manifestation, picks.next().expect("one pick per concrete step"))
                    }
                })
                .collect();
            rows.push(self.row(deck, &Expression { prep: expr.prep, steps })?);
        }
        Ok(FrequencyTable { n: self.n, rows })
    }
}

/// Runs `expr` as a protocol and tabulates its frequencies.
pub fn run_protocol(
    sim: &Simulator<'_>,
    expr: &Expression,
    n: u64,
    variant: Variant,
    entropy: &EntropySource,
) -> Result<FrequencyTable, SimError> {
    let targets: Vec<Target> = expr.steps.iter().map(|s| s.manifestation).collect();
    let counts = sim.run(expr.prep, &targets, n, variant, entropy)?;
    counts.table(sim.deck(), expr)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyRow {
    pub sequence: String,
    pub count: u64,
    pub exact: Prob,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    pub n: u64,
    pub rows: Vec<FrequencyRow>,
}

#[derive(Serialize)]
struct RowOut<'a> {
    sequence: &'a str,
    count: u64,
    empirical: f64,
    exact: &'a Prob,
    stderr: f64,
}

#[derive(Serialize)]
struct TableOut<'a> {
    n: u64,
    rows: Vec<RowOut<'a>>,
}

#[derive(Deserialize)]
struct RowIn {
    sequence: String,
    count: u64,
    exact: Prob,
}

#[derive(Deserialize)]
struct TableIn {
    n: u64,
    rows: Vec<RowIn>,
}

impl FrequencyRow {
    pub fn empirical(&self, n: u64) -> f64 {
        self.count as f64 / n as f64
    }

    /// `sqrt(p (1 - p) / n)` at the exact `p`.
    pub fn stderr(&self, n: u64) -> f64 {
        let p = self.exact.to_f64();
        (p * (1.0 - p) / n as f64).sqrt()
    }

    pub fn within(&self, n: u64, sigmas: f64) -> bool {
        (self.empirical(n) - self.exact.to_f64()).abs() <= sigmas * self.stderr(n)
    }
}

impl FrequencyTable {
    pub fn row(&self, sequence: &str) -> Option<&FrequencyRow> {
        self.rows.iter().find(|r| r.sequence == sequence)
    }

    pub fn all_within(&self, sigmas: f64) -> bool {
        self.rows.iter().all(|r| r.within(self.n, sigmas))
    }

    /// Pure addition of counts; the order of merging does not matter.
    pub fn merge(&mut self, other: &FrequencyTable) -> Result<(), SimError> {
        if self.rows.len() != other.rows.len()
            || self
                .rows
                .iter()
                .zip(&other.rows)
                .any(|(a, b)| a.sequence != b.sequence || a.exact != b.exact)
        {
            return Err(SimError::TableMismatch);
        }
        self.n += other.n;
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            a.count += b.count;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sequence,empirical,exact_num,exact_den,stderr")?;
        for r in &self.rows {
            writeln!(
                w,
                "\"{}\",{},{},{},{}",
                r.sequence.replace('"', "\"\""),
                r.empirical(self.n),
                r.exact.numer(),
                r.exact.denom(),
                r.stderr(self.n)
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        let out = TableOut {
            n: self.n,
            rows: self
                .rows
                .iter()
                .map(|r| RowOut {
                    sequence: &r.sequence,
                    count: r.count,
                    empirical: r.empirical(self.n),
                    exact: &r.exact,
                    stderr: r.stderr(self.n),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&out).expect("table serializes")
    }

    /// Reads [`Self::to_json`] output; derived columns are recomputed.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let t: TableIn = serde_json::from_str(text)?;
        Ok(FrequencyTable {
            n: t.n,
            rows: t
                .rows
                .into_iter()
                .map(|r| FrequencyRow {
                    sequence: r.sequence,
                    count: r.count,
                    exact: r.exact,
                })
                .collect(),
        })
    }
}

/// Pearson homogeneity test across several count vectors over the same
/// categories. Categories empty in every sample are dropped.
pub fn chi_square_homogeneity(samples: &[&[u64]]) -> ChiSquareResult {
    let k = samples.first().map_or(0, |s| s.len());
    let totals: Vec<f64> = samples.iter().map(|s| s.iter().sum::<u64>() as f64).collect();
    let grand: f64 = totals.iter().sum();
    let cats: Vec<usize> = (0..k).filter(|&c| samples.iter().any(|s| s[c] > 0)).collect();
    let mut stat = 0.0;
    for &c in &cats {
        let col: f64 = samples.iter().map(|s| s[c] as f64).sum();
        for (s, &t) in samples.iter().zip(&totals) {
            let expected = t * col / grand;
            if expected > 0.0 {
                stat += (s[c] as f64 - expected).powi(2) / expected;
            }
        }
    }
    let df = (cats.len().saturating_sub(1) * samples.len().saturating_sub(1)) as f64;
    let p_value = if df == 0.0 {
        1.0
    } else {
        1.0 - ChiSquared::new(df).expect("positive degrees of freedom").cdf(stat)
    };
    ChiSquareResult { statistic: stat, df, p_value }
}

/// Goodness of fit of observed counts against expected probabilities.
pub fn chi_square_fit(observed: &[u64], probs: &[f64]) -> ChiSquareResult {
    let n: f64 = observed.iter().sum::<u64>() as f64;
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| (o as f64 - n * p).powi(2) / (n * p))
        .sum();
    let df = (probs.iter().filter(|&&p| p > 0.0).count().saturating_sub(1)) as f64;
    let p_value = if df == 0.0 {
        1.0
    } else {
        1.0 - ChiSquared::new(df).expect("positive degrees of freedom").cdf(stat)
    };
    ChiSquareResult { statistic: stat, df, p_value }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub entropy: EntropySource,
    pub table: FrequencyTable,
    counts: ProtocolCounts,
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub runs: Vec<VariantRun>,
    /// Pairwise homogeneity tests over full outcome tuples, in the order
    /// (S, Svi), (S, Svd), (Svi, Svd).
    pub pairwise: Vec<(Variant, Variant, ChiSquareResult)>,
    pub sigmas: f64,
}

impl EquivalenceReport {
    pub fn all_within(&self) -> bool {
        self.runs.iter().all(|r| r.table.all_within(self.sigmas))
    }

    pub fn none_rejected(&self, alpha: f64) -> bool {
        self.pairwise.iter().all(|(_, _, c)| c.p_value > alpha)
    }
}

/// Runs `expr` under all three variants against the same exact values.
/// `S` and `Svd` are seeded; `Svi` reads `device`.
pub fn variant_equivalence(
    sim: &Simulator<'_>,
    expr: &Expression,
    n: u64,
    seed: u64,
    device: &EntropyDevice,
) -> Result<EquivalenceReport, SimError> {
    let targets: Vec<Target> = expr.steps.iter().map(|s| s.manifestation).collect();
    let mut runs = Vec::new();
    for (variant, entropy) in [
        (Variant::S, EntropySource::Seeded { seed }),
        (Variant::Svi, EntropySource::External(device.clone())),
        (Variant::Svd, EntropySource::Seeded { seed: seed ^ 0x5d5d_5d5d }),
    ] {
        let counts = sim.run(expr.prep, &targets, n, variant, &entropy)?;
        let table = counts.table(sim.deck(), expr)?;
        runs.push(VariantRun {
            variant,
            entropy,
            table,
            counts,
        });
    }
    let mut pairwise = Vec::new();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let res = chi_square_homogeneity(&[runs[a].counts.tuple_counts(), runs[b].counts.tuple_counts()]);
        pairwise.push((runs[a].variant, runs[b].variant, res));
    }
    Ok(EquivalenceReport {
        runs,
        pairwise,
        sigmas: 4.0,
    })
}

/// Label for a protocol: prep and manifested targets.
pub fn protocol_label(deck: &Deck, prep: Outcome, targets: &[Target]) -> String {
    let steps: Vec<EventStep> = targets.iter().map(|&t| EventStep::ignored(t)).collect();
    format!("{}; {}", format_outcome(deck, prep), format_steps(deck, &steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::PState;
    use crate::parse::parse_expression;
    use crate::presets;

    #[test]
    fn one_element_shuffle_is_identity() {
        let mut rng = seeded_stream(1, 0);
        let mut one = [7u32];
        shuffle(&mut one, &mut rng);
        assert_eq!(one, [7]);
        shuffle_top(&mut one, &mut rng);
        assert_eq!(one, [7]);
    }

    #[test]
    fn shuffle_preserves_multiset_and_is_reproducible() {
        let base: Vec<u32> = vec![0, 0, 1, 2, 2, 2, 3];
        let run = |seed| {
            let mut rng = seeded_stream(seed, 3);
            (0..20)
                .map(|_| {
                    let mut v = base.clone();
                    shuffle(&mut v, &mut rng);
                    v
                })
                .collect::<Vec<_>>()
        };
        let a = run(9);
        assert_eq!(a, run(9));
        assert_ne!(a, run(10));
        for v in &a {
            let mut s = v.clone();
            s.sort();
            assert_eq!(s, base);
        }
    }

    #[test]
    fn variant_entropy_pairing() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let expr = parse_expression(&deck, "Face=K; Suit=H").unwrap();
        let seeded = EntropySource::Seeded { seed: 1 };
        let os = EntropySource::External(EntropyDevice::Os);
        assert!(matches!(
            run_protocol(&sim, &expr, 10, Variant::Svi, &seeded),
            Err(SimError::VariantEntropy { .. })
        ));
        assert!(matches!(
            run_protocol(&sim, &expr, 10, Variant::S, &os),
            Err(SimError::VariantEntropy { .. })
        ));
        assert!(matches!(
            run_protocol(&sim, &expr, 0, Variant::S, &seeded),
            Err(SimError::ZeroTrials)
        ));
        assert!(run_protocol(&sim, &expr, 10, Variant::Svd, &os).is_ok());
        assert!(run_protocol(&sim, &expr, 10, Variant::Svd, &seeded).is_ok());
    }

    #[test]
    fn missing_device_is_an_error() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let expr = parse_expression(&deck, "Face=K; Suit=H").unwrap();
        let dev = EntropySource::External(EntropyDevice::File("/nonexistent/entropy".into()));
        assert!(matches!(
            run_protocol(&sim, &expr, 10, Variant::Svi, &dev),
            Err(SimError::EntropyUnavailable(_))
        ));
    }

    #[test]
    fn exhausted_device_is_an_error() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let expr = parse_expression(&deck, "Face=K; Suit=H").unwrap();
        let dir = std::env::temp_dir().join(format!("quantal-entropy-{}", std::process::id()));
        std::fs::write(&dir, vec![0x5au8; ENTROPY_BLOCK * 2]).unwrap();
        let dev = EntropySource::External(EntropyDevice::File(dir.clone()));
        let res = run_protocol(&sim, &expr, 100_000, Variant::Svi, &dev);
        std::fs::remove_file(&dir).ok();
        assert!(matches!(res, Err(SimError::EntropyUnavailable(_))), "{res:?}");
    }

    #[test]
    fn subdeck_tracks_engine_support() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let engine = Engine::new(&deck);
        let targets = deck.targets();
        for variant in [Variant::S, Variant::Svd] {
            let mut t = sim.trial(variant, seeded_stream(5, 0));
            assert_eq!(t.support(), PState::full(&deck).support());
            for i in 0..200 {
                let target = targets[i % targets.len()];
                let o = t.observe(target);
                assert_eq!(t.support(), engine.successor(target, o).support());
            }
        }
    }

    #[test]
    fn preparation_loop_reaches_fixed_point() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let engine = Engine::new(&deck);
        let color = deck.target("Color").unwrap();
        let mut t = sim.trial(Variant::S, seeded_stream(3, 0));
        for _ in 0..50 {
            t.prepare(color, 0).unwrap();
            assert_eq!(t.support(), engine.prepare(color, 0).unwrap().support());
        }
    }

    #[test]
    fn preparation_cap() {
        let deck = crate::deck::Deck::new(
            vec![crate::deck::Variable::new("Face", ["K", "Q"])],
            vec![],
            vec![(vec![0], 1), (vec![1], 1)],
        )
        .unwrap();
        let sim = Simulator::new(&deck).with_prep_cap(5);
        let face = deck.target("Face").unwrap();
        let mut failures = 0;
        for s in 0..20 {
            let mut t = sim.trial(Variant::S, seeded_stream(s, 0));
            if let Err(e) = t.prepare(face, 0) {
                assert!(matches!(e, SimError::PrepCapExceeded { cap: 5, .. }));
                failures += 1;
            }
        }
        assert!(failures > 0);
    }

    #[test]
    fn pending_values_only_for_shuffle_last() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let face = deck.target("Face").unwrap();
        let suit = deck.target("Suit").unwrap();
        let mut svd = sim.trial(Variant::Svd, seeded_stream(2, 0));
        svd.prepare(face, 0).unwrap();
        let pending = svd.pending_values().expect("top card already chosen");
        assert_eq!(pending.len(), 2);
        assert_eq!(pending[0], 0);
        assert_eq!(svd.observe(suit), pending[1]);
        let mut s = sim.trial(Variant::S, seeded_stream(2, 0));
        s.prepare(face, 0).unwrap();
        assert_eq!(s.pending_values(), None);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let expr = parse_expression(&deck, "Face=K; Suit=(H|D) & Face=K").unwrap();
        let e = EntropySource::Seeded { seed: 42 };
        let a = run_protocol(&sim, &expr, 150_000, Variant::S, &e).unwrap();
        let b = run_protocol(&sim, &expr, 150_000, Variant::S, &e).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.rows.len(), 1 + 9);
        assert_eq!(FrequencyTable::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn ignored_steps_stay_ignored_in_rows() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let expr = parse_expression(&deck, "Face=K; Suit=* & Face=Q").unwrap();
        let t = run_protocol(&sim, &expr, 1000, Variant::S, &EntropySource::Seeded { seed: 1 }).unwrap();
        let names: Vec<_> = t.rows.iter().map(|r| r.sequence.as_str()).collect();
        assert_eq!(
            names,
            ["Face=K; Suit=* & Face=Q", "Face=K; Suit=* & Face=K", "Face=K; Suit=* & Face=Q", "Face=K; Suit=* & Face=J"]
        );
        assert_eq!(t.rows[1..].iter().map(|r| r.count).sum::<u64>(), 1000);
    }

    #[test]
    fn merge_is_order_independent() {
        let deck = presets::face_suit_color();
        let sim = Simulator::new(&deck);
        let expr = parse_expression(&deck, "Face=K; Suit=H").unwrap();
        let parts: Vec<_> = (0..3)
            .map(|s| run_protocol(&sim, &expr, 500, Variant::S, &EntropySource::Seeded { seed: s }).unwrap())
            .collect();
        let mut ab = parts[0].clone();
        ab.merge(&parts[1]).unwrap();
        ab.merge(&parts[2]).unwrap();
        let mut ba = parts[2].clone();
        ba.merge(&parts[0]).unwrap();
        ba.merge(&parts[1]).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.n, 1500);
        let other = parse_expression(&deck, "Face=K; Suit=S").unwrap();
        let mut bad = run_protocol(&sim, &other, 5, Variant::S, &EntropySource::Seeded { seed: 0 }).unwrap();
        assert!(bad.merge(&parts[0]).is_err());
    }

    #[test]
    fn chi_square_helpers() {
        let same = chi_square_homogeneity(&[&[100, 200, 300], &[100, 200, 300]]);
        assert_eq!(same.statistic, 0.0);
        assert!((same.p_value - 1.0).abs() < 1e-12);
        let diff = chi_square_homogeneity(&[&[1000, 0], &[0, 1000]]);
        assert!(diff.p_value < 1e-10);
        let fit = chi_square_fit(&[50, 50], &[0.5, 0.5]);
        assert_eq!(fit.statistic, 0.0);
    }
}
