//! Exact probabilities of observation sequences.
//!
//! An observation of a target shuffles the current subdeck, reports the top
//! card's outcome, and replaces the subdeck by every card of the *full* deck
//! showing that outcome. The probability of an outcome is therefore the
//! fraction of the current subdeck showing it, and the successor state
//! depends only on the outcome, never on the state it came from.

use num_traits::Zero;
use thiserror::Error;

use crate::deck::{Deck, Target, ValueRef};
use crate::prob::{Prob, Rational};

pub type Manifestation = Target;

/// A preparation state: the current subdeck as a sub-multiset of the deck.
#[derive(Debug, Clone)]
pub struct PState {
    support: Vec<u64>,
    label: Option<String>,
}

impl PartialEq for PState {
    fn eq(&self, other: &Self) -> bool {
        self.support == other.support
    }
}

impl Eq for PState {}

impl PState {
    /// The whole deck.
    pub fn full(deck: &Deck) -> PState {
        PState {
            support: deck.counts().to_vec(),
            label: Some("deck".into()),
        }
    }

    /// A state with an explicit support, checked against the deck.
    pub fn from_support(deck: &Deck, support: Vec<u64>, label: Option<String>) -> Result<PState, EngineError> {
        if support.len() != deck.counts().len() {
            return Err(EngineError::SupportShape);
        }
        if let Some(card) = support.iter().zip(deck.counts()).position(|(s, d)| s > d) {
            return Err(EngineError::SupportExceedsDeck { card });
        }
        if support.iter().all(|&n| n == 0) {
            return Err(EngineError::EmptySupport);
        }
        Ok(PState { support, label })
    }

    pub fn support(&self) -> &[u64] {
        &self.support
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn size(&self) -> u64 {
        self.support.iter().sum()
    }

    /// Cards in the support per outcome of `target`.
    pub fn outcome_counts(&self, deck: &Deck, target: Target) -> Vec<u64> {
        let mut counts = vec![0u64; deck.outcome_count(target)];
        for (card, &n) in self.support.iter().enumerate() {
            counts[deck.outcome_of(card, target)] += n;
        }
        counts
    }
}

/// Which outcomes of a step count towards the event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomePredicate {
    Single(usize),
    /// A disjunction over distinct branches; each member keeps its own successor.
    Set(Vec<usize>),
    /// The observation happens but its result is summed out.
    Ignored,
}

impl OutcomePredicate {
    pub fn accepts(&self, outcome: usize) -> bool {
        match self {
            OutcomePredicate::Single(o) => *o == outcome,
            OutcomePredicate::Set(os) => os.contains(&outcome),
            OutcomePredicate::Ignored => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStep {
    pub manifestation: Manifestation,
    pub outcome: OutcomePredicate,
}

impl EventStep {
    pub fn single(target: Target, outcome: usize) -> Self {
        EventStep {
            manifestation: target,
            outcome: OutcomePredicate::Single(outcome),
        }
    }

    pub fn set(target: Target, outcomes: Vec<usize>) -> Self {
        EventStep {
            manifestation: target,
            outcome: OutcomePredicate::Set(outcomes),
        }
    }

    pub fn ignored(target: Target) -> Self {
        EventStep {
            manifestation: target,
            outcome: OutcomePredicate::Ignored,
        }
    }

    pub fn value(v: ValueRef) -> Self {
        EventStep::single(Target::Plain(v.variable), v.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSequence {
    pub prep: PState,
    pub steps: Vec<EventStep>,
}

/// A specific outcome of a specific target, e.g. `Face=Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Outcome {
    pub target: Target,
    pub value: usize,
}

impl Outcome {
    pub fn new(target: Target, value: usize) -> Self {
        Outcome { target, value }
    }
}

impl From<ValueRef> for Outcome {
    fn from(v: ValueRef) -> Self {
        Outcome::new(Target::Plain(v.variable), v.value)
    }
}

/// One possible result of an observation.
#[derive(Debug, Clone)]
pub struct Branch {
    pub outcome: usize,
    pub prob: Prob,
    pub successor: PState,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("a probability query needs at least one step")]
    EmptySequence,
    #[error("outcome #{outcome} does not exist for {target}")]
    InvalidOutcome { target: String, outcome: usize },
    #[error("empty value set for {target}")]
    EmptyValueSet { target: String },
    #[error("value {outcome:?} listed twice for {target}")]
    DuplicateOutcome { target: String, outcome: String },
    #[error("support does not match the deck's card types")]
    SupportShape,
    #[error("support holds more copies of card #{card} than the deck")]
    SupportExceedsDeck { card: usize },
    #[error("a preparation state cannot be empty")]
    EmptySupport,
    #[error("no card has {target}={outcome}")]
    ZeroMarginal { target: String, outcome: String },
    #[error("conditional probability is undefined: the condition has probability 0")]
    UndefinedConditional,
    #[error("the two variables must differ")]
    SameVariable,
    #[error("only a single-valued step can act as a filter")]
    NotSingleValue,
}

/// A weighted collection of p-states: the state after an observation whose
/// result was not recorded.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub components: Vec<(Prob, PState)>,
}

impl Mixture {
    /// Probability that the next observation of `outcome.target` reports it.
    pub fn prob_of(&self, deck: &Deck, outcome: Outcome) -> Prob {
        self.components
            .iter()
            .filter(|(w, _)| !w.is_zero())
            .map(|(w, state)| {
                let counts = state.outcome_counts(deck, outcome.target);
                w * &Prob::from_counts(counts[outcome.value], state.size())
            })
            .sum()
    }
}

/// Closest and farthest conditional from {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharpnessReport {
    pub min: SharpnessWitness,
    pub max: SharpnessWitness,
}

impl SharpnessReport {
    /// The largest distance of any conditional from {0, 1}.
    pub fn defect(&self) -> &Rational {
        &self.max.gap
    }

    /// True when no conditional is 0 or 1.
    pub fn no_sharp_conditional(&self) -> bool {
        !self.min.gap.is_zero()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharpnessWitness {
    /// Index of the filtering value `p_j`.
    pub given: usize,
    /// Index of the observed value `q_k`.
    pub observed: usize,
    pub conditional: Prob,
    pub gap: Rational,
}

/// Exact evaluator bound to one deck.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'d> {
    deck: &'d Deck,
}

impl<'d> Engine<'d> {
    pub fn new(deck: &'d Deck) -> Self {
        Engine { deck }
    }

    pub fn deck(&self) -> &'d Deck {
        self.deck
    }

    /// All full-deck cards showing `outcome` of `target`. May be empty.
    fn successor_support(&self, target: Target, outcome: usize) -> Vec<u64> {
        let deck = self.deck;
        deck.counts()
            .iter()
            .enumerate()
            .map(|(card, &n)| if deck.outcome_of(card, target) == outcome { n } else { 0 })
            .collect()
    }

    fn label(&self, target: Target, outcome: usize) -> String {
        format!(
            "{}={}",
            self.deck.target_name(target),
            self.deck.outcome_name(target, outcome)
        )
    }

    /// The state reached once `target` reported `outcome`.
    pub fn successor(&self, target: Target, outcome: usize) -> PState {
        PState {
            support: self.successor_support(target, outcome),
            label: Some(self.label(target, outcome)),
        }
    }

    /// Every outcome of observing `m` in `state`, with its probability and
    /// successor. Probabilities sum to one.
    pub fn observe(&self, state: &PState, m: Manifestation) -> Vec<Branch> {
        let counts = state.outcome_counts(self.deck, m);
        let size = state.size();
        counts
            .iter()
            .enumerate()
            .map(|(outcome, &n)| Branch {
                outcome,
                prob: Prob::from_counts(n, size),
                successor: self.successor(m, outcome),
            })
            .collect()
    }

    /// The fixed point of the repeat-until preparation loop: all cards with
    /// `target = outcome`.
    pub fn prepare(&self, target: Target, outcome: usize) -> Result<PState, EngineError> {
        if outcome >= self.deck.outcome_count(target) {
            return Err(self.invalid(target, outcome));
        }
        let state = self.successor(target, outcome);
        if state.size() == 0 {
            return Err(EngineError::ZeroMarginal {
                target: self.deck.target_name(target).into(),
                outcome: self.deck.outcome_name(target, outcome).into(),
            });
        }
        Ok(state)
    }

    pub fn prepare_value(&self, v: ValueRef) -> Result<PState, EngineError> {
        self.prepare(Target::Plain(v.variable), v.value)
    }

    fn invalid(&self, target: Target, outcome: usize) -> EngineError {
        EngineError::InvalidOutcome {
            target: self.deck.target_name(target).into(),
            outcome,
        }
    }

    pub fn check_step(&self, step: &EventStep) -> Result<(), EngineError> {
        let target = step.manifestation;
        let n = self.deck.outcome_count(target);
        match &step.outcome {
            OutcomePredicate::Single(o) if *o >= n => Err(self.invalid(target, *o)),
            OutcomePredicate::Set(os) => {
                if os.is_empty() {
                    return Err(EngineError::EmptyValueSet {
                        target: self.deck.target_name(target).into(),
                    });
                }
                for (i, &o) in os.iter().enumerate() {
                    if o >= n {
                        return Err(self.invalid(target, o));
                    }
                    if os[..i].contains(&o) {
                        return Err(EngineError::DuplicateOutcome {
                            target: self.deck.target_name(target).into(),
                            outcome: self.deck.outcome_name(target, o).into(),
                        });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Probability of the whole sequence.
    pub fn sequence_prob(&self, seq: &EventSequence) -> Result<Prob, EngineError> {
        self.steps_prob(&seq.prep, &seq.steps)
    }

    /// Probability that `steps`, performed from `state`, all meet their
    /// predicates.
    pub fn steps_prob(&self, state: &PState, steps: &[EventStep]) -> Result<Prob, EngineError> {
        if steps.is_empty() {
            return Err(EngineError::EmptySequence);
        }
        for step in steps {
            self.check_step(step)?;
        }
        Ok(self.chain(state, steps))
    }

    fn chain(&self, state: &PState, steps: &[EventStep]) -> Prob {
        let Some((step, rest)) = steps.split_first() else {
            return Prob::one();
        };
        let branches = self.observe(state, step.manifestation);
        branches
            .into_iter()
            .filter(|b| step.outcome.accepts(b.outcome) && !b.prob.is_zero())
            .map(|b| {
                let tail = self.chain(&b.successor, rest);
                b.prob * tail
            })
            .sum()
    }

    /// `Pr(then | given)` from `prep`, where `given` happens first.
    pub fn conditional_prob(
        &self,
        prep: &PState,
        given: &[EventStep],
        then: &[EventStep],
    ) -> Result<Prob, EngineError> {
        let condition = self.steps_prob(prep, given)?;
        if condition.is_zero() {
            return Err(EngineError::UndefinedConditional);
        }
        if then.is_empty() {
            return Err(EngineError::EmptySequence);
        }
        let joint_steps: Vec<EventStep> = given.iter().chain(then).cloned().collect();
        let joint = self.steps_prob(prep, &joint_steps)?;
        Ok(joint
            .checked_div(&condition)
            .expect("joint probability never exceeds its prefix"))
    }

    /// The state that passes a single-valued filter step from `state`.
    pub fn filter(&self, state: &PState, step: &EventStep) -> Result<PState, EngineError> {
        self.check_step(step)?;
        let OutcomePredicate::Single(o) = step.outcome else {
            return Err(EngineError::NotSingleValue);
        };
        let counts = state.outcome_counts(self.deck, step.manifestation);
        if counts[o] == 0 {
            return Err(EngineError::UndefinedConditional);
        }
        Ok(self.successor(step.manifestation, o))
    }

    /// The state after observing `m` without recording the result.
    pub fn manifest(&self, state: &PState, m: Manifestation) -> Mixture {
        Mixture {
            components: self
                .observe(state, m)
                .into_iter()
                .map(|b| (b.prob, b.successor))
                .collect(),
        }
    }

    /// `Pr_s{p_j & q_k} - Pr_s{q_k & p_j}` indexed `[j][k]`.
    pub fn compatibility_defect(&self, state: &PState, p: Target, q: Target) -> Vec<Vec<Rational>> {
        (0..self.deck.outcome_count(p))
            .map(|j| {
                (0..self.deck.outcome_count(q))
                    .map(|k| {
                        let pq = self.chain(state, &[EventStep::single(p, j), EventStep::single(q, k)]);
                        let qp = self.chain(state, &[EventStep::single(q, k), EventStep::single(p, j)]);
                        pq.minus(&qp)
                    })
                    .collect()
            })
            .collect()
    }

    /// `Prob(q_k | p_j)` indexed `[j][k]`; by the Markov property the
    /// preparation before `p_j` does not matter.
    pub fn conditional_matrix(&self, p: Target, q: Target) -> Result<Vec<Vec<Prob>>, EngineError> {
        (0..self.deck.outcome_count(p))
            .map(|j| {
                let state = self.prepare(p, j)?;
                Ok(self.observe(&state, q).into_iter().map(|b| b.prob).collect())
            })
            .collect()
    }

    /// How far the conditionals `Prob(q_k | p_j)` stay from {0, 1}.
    pub fn sharpness_defect(&self, p: Target, q: Target) -> Result<SharpnessReport, EngineError> {
        if p == q {
            return Err(EngineError::SameVariable);
        }
        let matrix = self.conditional_matrix(p, q)?;
        let mut witnesses = matrix.into_iter().enumerate().flat_map(|(j, row)| {
            row.into_iter().enumerate().map(move |(k, c)| {
                let up = Prob::one().minus(&c);
                let gap = if up < *c.value() { up } else { c.value().clone() };
                SharpnessWitness {
                    given: j,
                    observed: k,
                    conditional: c,
                    gap,
                }
            })
        });
        let first = witnesses.next().expect("targets have at least one outcome");
        let (min, max) = witnesses.fold((first.clone(), first), |(lo, hi), w| {
            let lo = if w.gap < lo.gap { w.clone() } else { lo };
            let hi = if w.gap > hi.gap { w } else { hi };
            (lo, hi)
        });
        Ok(SharpnessReport { min, max })
    }

    /// `Σ_t Pr_s{p_t & q}`, summed branch by branch.
    pub fn marginal_lhs(&self, prep: &PState, p: Target, q: Outcome) -> Result<Prob, EngineError> {
        let q_step = EventStep::single(q.target, q.value);
        self.check_step(&q_step)?;
        (0..self.deck.outcome_count(p))
            .map(|t| self.steps_prob(prep, &[EventStep::single(p, t), q_step.clone()]))
            .sum()
    }

    /// `Pr_s{q | M_P}`: the probability of `q` after `p` was manifested and
    /// its result discarded, read off the mixed state.
    pub fn marginal_rhs_manifested(&self, prep: &PState, p: Target, q: Outcome) -> Result<Prob, EngineError> {
        self.check_step(&EventStep::single(q.target, q.value))?;
        Ok(self.manifest(prep, p).prob_of(self.deck, q))
    }

    /// `Pr_s{q}` at the first step, with no prior manifestation.
    pub fn direct_prob(&self, prep: &PState, q: Outcome) -> Result<Prob, EngineError> {
        self.steps_prob(prep, &[EventStep::single(q.target, q.value)])
    }
}
