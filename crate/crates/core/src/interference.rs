//! Interference of a coarse-grained observation.
//!
//! Observing a degenerate variable (Color) merges the member values (H, D)
//! into one successor subdeck. Observing the underlying variable and
//! accepting either member keeps the branches apart. When the class is
//! additive, i.e. `Pr_s{class} = Σ_{t∈D} Pr_s{p_t}` for every preparation,
//! the interference is the difference
//!
//! ```text
//! I = Pr_s{class & q} - Σ_{t∈D} Pr_s{p_t & q}
//! ```

use num_bigint::BigInt;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deck::{DegenerateId, Deck, Target};
use crate::engine::{Engine, EngineError, EventStep, Outcome, PState};
use crate::prob::{Prob, Rational};

#[derive(Debug, Clone)]
pub struct InterferenceQuery {
    pub degenerate: DegenerateId,
    /// Class of the degenerate variable playing the event `E_P`.
    pub class: usize,
    /// Underlying values `D` the class is compared against.
    pub against: Vec<usize>,
    pub prep: PState,
    pub q: Outcome,
}

impl InterferenceQuery {
    /// Compares `class` against its own member set.
    pub fn for_class(deck: &Deck, degenerate: DegenerateId, class: usize, prep: PState, q: Outcome) -> Self {
        InterferenceQuery {
            degenerate,
            class,
            against: deck.degenerate_variable(degenerate).classes()[class].members.clone(),
            prep,
            q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdditivityCounterexample {
    pub prep: String,
    pub class_prob: Prob,
    pub member_sum: Prob,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub preparations_checked: usize,
    pub counterexample: Option<AdditivityCounterexample>,
}

impl AdditivityReport {
    pub fn holds(&self) -> bool {
        self.counterexample.is_none()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InterferenceError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("class probability is not additive over the given values (prep {}: {} vs {}); interference is undefined", .0.prep, .0.class_prob, .0.member_sum)]
    NotAdditive(Box<AdditivityCounterexample>),
    #[error("the closed form needs a two-member class, found {found} members")]
    ClassSize { found: usize },
    #[error("class #{0} does not exist")]
    NoSuchClass(usize),
}

/// Every state a preparation can produce: one per value of each plain
/// variable and one per class of each degenerate variable.
pub fn reachable_preparations(engine: &Engine<'_>) -> Vec<PState> {
    let deck = engine.deck();
    deck.targets()
        .into_iter()
        .flat_map(|t| (0..deck.outcome_count(t)).map(move |o| (t, o)))
        .filter_map(|(t, o)| engine.prepare(t, o).ok())
        .collect()
}

/// Checks `Pr_s{class} = Σ_{t∈against} Pr_s{p_t}` over all reachable
/// preparations, reporting the first failure.
pub fn check_additivity(
    engine: &Engine<'_>,
    degenerate: DegenerateId,
    class: usize,
    against: &[usize],
) -> Result<AdditivityReport, InterferenceError> {
    let deck = engine.deck();
    let dv = deck.degenerate_variable(degenerate);
    if class >= dv.classes().len() {
        return Err(InterferenceError::NoSuchClass(class));
    }
    let merged = Target::Degenerate(degenerate);
    let over = Target::Plain(dv.over());
    for &v in against {
        engine.check_step(&EventStep::single(over, v))?;
    }
    let preps = reachable_preparations(engine);
    for prep in &preps {
        let class_prob = engine.steps_prob(prep, &[EventStep::single(merged, class)])?;
        let member_sum: Prob = against
            .iter()
            .map(|&v| engine.steps_prob(prep, &[EventStep::single(over, v)]))
            .sum::<Result<Prob, _>>()?;
        if class_prob != member_sum {
            return Ok(AdditivityReport {
                preparations_checked: preps.len(),
                counterexample: Some(AdditivityCounterexample {
                    prep: prep.label().unwrap_or("?").to_string(),
                    class_prob,
                    member_sum,
                }),
            });
        }
    }
    Ok(AdditivityReport {
        preparations_checked: preps.len(),
        counterexample: None,
    })
}

/// Merged-manifestation and branch-sum probabilities, computed by the
/// engine along two different step sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterferenceParts {
    pub merged: Prob,
    pub branch_sum: Prob,
}

impl InterferenceParts {
    pub fn interference(&self) -> Rational {
        self.merged.minus(&self.branch_sum)
    }
}

pub fn interference_parts(engine: &Engine<'_>, query: &InterferenceQuery) -> Result<InterferenceParts, InterferenceError> {
    let report = check_additivity(engine, query.degenerate, query.class, &query.against)?;
    if let Some(cx) = report.counterexample {
        return Err(InterferenceError::NotAdditive(Box::new(cx)));
    }
    let deck = engine.deck();
    let over = Target::Plain(deck.degenerate_variable(query.degenerate).over());
    let q_step = EventStep::single(query.q.target, query.q.value);
    let merged = engine.steps_prob(
        &query.prep,
        &[EventStep::single(Target::Degenerate(query.degenerate), query.class), q_step.clone()],
    )?;
    let branch_sum = engine.steps_prob(&query.prep, &[EventStep::set(over, query.against.clone()), q_step])?;
    Ok(InterferenceParts { merged, branch_sum })
}

/// `I(E_P, D, s, q)`, from the definition.
pub fn interference(engine: &Engine<'_>, query: &InterferenceQuery) -> Result<Rational, InterferenceError> {
    Ok(interference_parts(engine, query)?.interference())
}

/// Cards of the whole deck with underlying value `p` that would report `q`.
fn count_with(deck: &Deck, over: crate::deck::VariableId, p: usize, q: Outcome) -> u64 {
    deck.cards()
        .iter()
        .enumerate()
        .filter(|(i, c)| c.value(over) == p && deck.outcome_of(*i, q.target) == q.value)
        .map(|(i, _)| deck.counts()[i])
        .sum()
}

/// Two-member closed form
/// `-(1/2) (Pr(y|p1) - Pr(y|p2)) (Pr(p1|x) - Pr(p2|x))`,
/// from card counts alone.
pub fn interference_closed_form(
    deck: &Deck,
    prep: &PState,
    degenerate: DegenerateId,
    class: usize,
    q: Outcome,
) -> Result<Rational, InterferenceError> {
    let dv = deck.degenerate_variable(degenerate);
    let members = &dv
        .classes()
        .get(class)
        .ok_or(InterferenceError::NoSuchClass(class))?
        .members;
    let [p1, p2] = members[..] else {
        return Err(InterferenceError::ClassSize { found: members.len() });
    };
    let over = dv.over();
    let n = BigInt::from(deck.per_value());
    let given_p = |p: usize| Rational::new(BigInt::from(count_with(deck, over, p, q)), n.clone());
    let prep_counts = prep.outcome_counts(deck, Target::Plain(over));
    let size = BigInt::from(prep.size());
    let from_x = |p: usize| Rational::new(BigInt::from(prep_counts[p]), size.clone());
    let half = Rational::new(BigInt::from(-1), BigInt::from(2));
    Ok(half * (given_p(p1) - given_p(p2)) * (from_x(p1) - from_x(p2)))
}

/// Interference of `class` for every preparation value of `prep_target`
/// (rows) and every outcome of `q_target` (columns).
pub fn interference_grid(
    engine: &Engine<'_>,
    degenerate: DegenerateId,
    class: usize,
    prep_target: Target,
    q_target: Target,
) -> Result<Vec<Vec<Rational>>, InterferenceError> {
    let deck = engine.deck();
    (0..deck.outcome_count(prep_target))
        .map(|j| {
            let prep = engine.prepare(prep_target, j)?;
            (0..deck.outcome_count(q_target))
                .map(|k| {
                    let query = InterferenceQuery::for_class(deck, degenerate, class, prep.clone(), Outcome::new(q_target, k));
                    interference(engine, &query)
                })
                .collect()
        })
        .collect()
}

/// True when every entry of a grid is zero.
pub fn all_zero(grid: &[Vec<Rational>]) -> bool {
    grid.iter().flatten().all(Zero::is_zero)
}
