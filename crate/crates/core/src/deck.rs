//! Variables, cards and decks.
//!
//! A [`Deck`] is a multiset of card types. Each card type assigns one value
//! to every variable of the deck. Every value of every variable must occur on
//! the same number `N` of cards, so that all values are a priori equally
//! likely; construction rejects decks that break this.
//!
//! A [`DegenerateVariable`] coarse-grains one variable by partitioning its
//! values into classes (Color over Suit, say). Observing it merges the member
//! values into a single successor subdeck.

use std::collections::HashMap;

use indexmap::IndexMap;
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariableId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DegenerateId(pub usize);

/// A value of one specific variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueRef {
    pub variable: VariableId,
    pub value: usize,
}

impl ValueRef {
    pub fn new(variable: VariableId, value: usize) -> Self {
        ValueRef { variable, value }
    }
}

/// What an observation manifests: a plain variable or a coarse-graining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Plain(VariableId),
    Degenerate(DegenerateId),
}

impl Target {
    /// The plain variable whose values decide this target's outcome.
    pub fn underlying(self, deck: &Deck) -> VariableId {
        match self {
            Target::Plain(v) => v,
            Target::Degenerate(d) => deck.degenerate[d.0].over,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    name: String,
    values: Vec<String>,
}

impl Variable {
    pub fn new<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Variable {
            name: name.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueClass {
    pub name: String,
    /// Value indices of the underlying variable, in ascending order.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegenerateVariable {
    name: String,
    over: VariableId,
    classes: Vec<ValueClass>,
    class_of: Vec<usize>,
}

impl DegenerateVariable {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn over(&self) -> VariableId {
        self.over
    }

    pub fn classes(&self) -> &[ValueClass] {
        &self.classes
    }

    /// Class index containing the given underlying value.
    pub fn class_of(&self, value: usize) -> usize {
        self.class_of[value]
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }
}

/// One value index per deck variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CardType(pub Vec<usize>);

impl CardType {
    pub fn value(&self, variable: VariableId) -> usize {
        self.0[variable.0]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeckError {
    #[error("deck declares no variables")]
    NoVariables,
    #[error("deck contains no cards")]
    Empty,
    #[error("variable {0:?} is declared twice")]
    DuplicateVariable(String),
    #[error("variable {variable:?} needs at least two values")]
    TooFewValues { variable: String },
    #[error("variable {variable:?} lists value {value:?} twice")]
    DuplicateValue { variable: String, value: String },
    #[error("variable {variable:?} has {found} values but {expected} are required (all variables share one value count)")]
    UnequalValueCounts {
        variable: String,
        expected: usize,
        found: usize,
    },
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("unknown value {value:?} for variable {variable:?}")]
    UnknownValue { variable: String, value: String },
    #[error("card #{card} does not assign variable {variable:?}")]
    MissingValue { card: usize, variable: String },
    #[error("card #{card} has the wrong number of values")]
    BadAssignment { card: usize },
    #[error("degenerate variable {name:?}: {reason}")]
    BadClasses { name: String, reason: String },
    #[error("value {variable}={value} occurs on {count} cards, expected {expected}")]
    UnequalMarginal {
        variable: String,
        value: String,
        count: u64,
        expected: u64,
    },
}

/// Summary returned by a successful validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Cards per value, `N`.
    pub per_value: u64,
    /// Values per variable, `V`.
    pub values_per_variable: usize,
    pub variables: usize,
    pub card_types: usize,
    pub total_cards: u64,
}

/// A validated deck. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deck {
    variables: Vec<Variable>,
    degenerate: Vec<DegenerateVariable>,
    cards: Vec<CardType>,
    counts: Vec<u64>,
    per_value: u64,
}

/// Degenerate variable given by class names over value names.
#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub name: String,
    pub over: String,
    pub classes: Vec<(String, Vec<String>)>,
}

impl Deck {
    /// Builds and validates a deck from value-index assignments.
    ///
    /// Repeated card types are merged and zero counts dropped.
    pub fn new(
        variables: Vec<Variable>,
        degenerate: Vec<ClassSpec>,
        cards: impl IntoIterator<Item = (Vec<usize>, u64)>,
    ) -> Result<Deck, DeckError> {
        if variables.is_empty() {
            return Err(DeckError::NoVariables);
        }
        let width = variables[0].len();
        for (i, var) in variables.iter().enumerate() {
            if variables[..i].iter().any(|v| v.name == var.name) {
                return Err(DeckError::DuplicateVariable(var.name.clone()));
            }
            if var.len() < 2 {
                return Err(DeckError::TooFewValues { variable: var.name.clone() });
            }
            for (j, value) in var.values.iter().enumerate() {
                if var.values[..j].contains(value) {
                    return Err(DeckError::DuplicateValue {
                        variable: var.name.clone(),
                        value: value.clone(),
                    });
                }
            }
            if var.len() != width {
                return Err(DeckError::UnequalValueCounts {
                    variable: var.name.clone(),
                    expected: width,
                    found: var.len(),
                });
            }
        }

        let mut merged: IndexMap<CardType, u64> = IndexMap::new();
        for (i, (assignment, count)) in cards.into_iter().enumerate() {
            if assignment.len() != variables.len() {
                return Err(DeckError::BadAssignment { card: i });
            }
            for (v, &value) in assignment.iter().enumerate() {
                if value >= variables[v].len() {
                    return Err(DeckError::UnknownValue {
                        variable: variables[v].name.clone(),
                        value: format!("#{value}"),
                    });
                }
            }
            if count > 0 {
                *merged.entry(CardType(assignment)).or_insert(0) += count;
            }
        }
        if merged.is_empty() {
            return Err(DeckError::Empty);
        }
        merged.sort_keys();

        let degenerate = degenerate
            .into_iter()
            .map(|spec| build_degenerate(&variables, spec))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, d) in degenerate.iter().enumerate() {
            if variables.iter().any(|v| v.name == d.name)
                || degenerate[..i].iter().any(|o| o.name == d.name)
            {
                return Err(DeckError::DuplicateVariable(d.name.clone()));
            }
        }

        let (cards, counts): (Vec<_>, Vec<_>) = merged.into_iter().unzip();
        let mut deck = Deck {
            variables,
            degenerate,
            cards,
            counts,
            per_value: 0,
        };
        deck.per_value = deck.check_marginals()?;
        Ok(deck)
    }

    /// Finds `N`, or the first (variable, value) whose marginal disagrees.
    fn check_marginals(&self) -> Result<u64, DeckError> {
        let mut expected = None;
        for (v, var) in self.variables.iter().enumerate() {
            let mut marginals = vec![0u64; var.len()];
            for (card, &count) in self.cards.iter().zip(&self.counts) {
                marginals[card.0[v]] += count;
            }
            for (value, &count) in marginals.iter().enumerate() {
                let n = *expected.get_or_insert(count);
                if count != n {
                    return Err(DeckError::UnequalMarginal {
                        variable: var.name.clone(),
                        value: var.values[value].clone(),
                        count,
                        expected: n,
                    });
                }
            }
        }
        Ok(expected.unwrap_or(0))
    }

    pub fn report(&self) -> ValidationReport {
        ValidationReport {
            per_value: self.per_value,
            values_per_variable: self.values_per_variable(),
            variables: self.variables.len(),
            card_types: self.cards.len(),
            total_cards: self.total(),
        }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: VariableId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn degenerate(&self) -> &[DegenerateVariable] {
        &self.degenerate
    }

    pub fn degenerate_variable(&self, id: DegenerateId) -> &DegenerateVariable {
        &self.degenerate[id.0]
    }

    pub fn variable_id(&self, name: &str) -> Option<VariableId> {
        self.variables.iter().position(|v| v.name == name).map(VariableId)
    }

    pub fn degenerate_id(&self, name: &str) -> Option<DegenerateId> {
        self.degenerate.iter().position(|d| d.name == name).map(DegenerateId)
    }

    /// Resolves a plain or degenerate variable by name.
    pub fn target(&self, name: &str) -> Option<Target> {
        self.variable_id(name)
            .map(Target::Plain)
            .or_else(|| self.degenerate_id(name).map(Target::Degenerate))
    }

    /// Looks up `Variable=value`.
    pub fn value_ref(&self, variable: &str, value: &str) -> Option<ValueRef> {
        let id = self.variable_id(variable)?;
        let index = self.variables[id.0].value_index(value)?;
        Some(ValueRef::new(id, index))
    }

    pub fn cards(&self) -> &[CardType] {
        &self.cards
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Cards per value, `N`.
    pub fn per_value(&self) -> u64 {
        self.per_value
    }

    /// Values per variable, `V`.
    pub fn values_per_variable(&self) -> usize {
        self.variables[0].len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn card_index(&self, card: &CardType) -> Option<usize> {
        self.cards.binary_search(card).ok()
    }

    pub fn count_of(&self, card: &CardType) -> u64 {
        self.card_index(card).map_or(0, |i| self.counts[i])
    }

    /// Number of outcomes an observation of `target` can report.
    pub fn outcome_count(&self, target: Target) -> usize {
        match target {
            Target::Plain(v) => self.variables[v.0].len(),
            Target::Degenerate(d) => self.degenerate[d.0].classes.len(),
        }
    }

    /// Outcome reported for card type `card` when `target` is observed.
    pub fn outcome_of(&self, card: usize, target: Target) -> usize {
        match target {
            Target::Plain(v) => self.cards[card].0[v.0],
            Target::Degenerate(d) => {
                let dv = &self.degenerate[d.0];
                dv.class_of[self.cards[card].0[dv.over.0]]
            }
        }
    }

    pub fn target_name(&self, target: Target) -> &str {
        match target {
            Target::Plain(v) => &self.variables[v.0].name,
            Target::Degenerate(d) => &self.degenerate[d.0].name,
        }
    }

    pub fn outcome_name(&self, target: Target, outcome: usize) -> &str {
        match target {
            Target::Plain(v) => &self.variables[v.0].values[outcome],
            Target::Degenerate(d) => &self.degenerate[d.0].classes[outcome].name,
        }
    }

    pub fn outcome_index(&self, target: Target, name: &str) -> Option<usize> {
        match target {
            Target::Plain(v) => self.variables[v.0].value_index(name),
            Target::Degenerate(d) => self.degenerate[d.0].class_index(name),
        }
    }

    /// Every plain and degenerate target, plain first.
    pub fn targets(&self) -> Vec<Target> {
        (0..self.variables.len())
            .map(|v| Target::Plain(VariableId(v)))
            .chain((0..self.degenerate.len()).map(|d| Target::Degenerate(DegenerateId(d))))
            .collect()
    }

    /// Number of cards carrying value `v`.
    pub fn marginal(&self, v: ValueRef) -> u64 {
        self.cards
            .iter()
            .zip(&self.counts)
            .filter(|(c, _)| c.0[v.variable.0] == v.value)
            .map(|(_, &n)| n)
            .sum()
    }

    /// Number of cards carrying both values, `N(a·b)`.
    ///
    /// Two values of one variable share no card unless they are equal.
    pub fn joint_count(&self, a: ValueRef, b: ValueRef) -> u64 {
        self.cards
            .iter()
            .zip(&self.counts)
            .filter(|(c, _)| c.0[a.variable.0] == a.value && c.0[b.variable.0] == b.value)
            .map(|(_, &n)| n)
            .sum()
    }

    /// `n = N(card) / N`.
    pub fn normalized_count(&self, card: &CardType) -> Rational {
        Rational::new(BigInt::from(self.count_of(card)), BigInt::from(self.per_value))
    }

    /// Fraction of the deck made up of this card type, `n / V`.
    pub fn card_fraction(&self, card: &CardType) -> Rational {
        self.normalized_count(card) / BigInt::from(self.values_per_variable())
    }

    /// Serializable form; loading it back yields an equal deck.
    pub fn to_spec(&self) -> DeckSpec {
        DeckSpec {
            variables: self
                .variables
                .iter()
                .map(|v| VariableSpec {
                    name: v.name.clone(),
                    values: v.values.clone(),
                })
                .collect(),
            degenerate: self
                .degenerate
                .iter()
                .map(|d| DegenerateSpec {
                    name: d.name.clone(),
                    over: self.variables[d.over.0].name.clone(),
                    classes: d
                        .classes
                        .iter()
                        .map(|c| {
                            let over = &self.variables[d.over.0];
                            (
                                c.name.clone(),
                                c.members.iter().map(|&m| over.values[m].clone()).collect(),
                            )
                        })
                        .collect(),
                })
                .collect(),
            cards: self
                .cards
                .iter()
                .zip(&self.counts)
                .map(|(card, &count)| CardSpec {
                    values: self
                        .variables
                        .iter()
                        .zip(&card.0)
                        .map(|(v, &i)| (v.name.clone(), v.values[i].clone()))
                        .collect(),
                    count,
                })
                .collect(),
        }
    }

    pub fn from_spec(spec: &DeckSpec) -> Result<Deck, DeckError> {
        let variables: Vec<Variable> = spec
            .variables
            .iter()
            .map(|v| Variable::new(v.name.clone(), v.values.clone()))
            .collect();
        let lookup: HashMap<&str, usize> = variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name(), i))
            .collect();

        let mut cards = Vec::with_capacity(spec.cards.len());
        for (i, card) in spec.cards.iter().enumerate() {
            for name in card.values.keys() {
                if !lookup.contains_key(name.as_str()) {
                    return Err(DeckError::UnknownVariable(name.clone()));
                }
            }
            let mut assignment = Vec::with_capacity(variables.len());
            for var in &variables {
                let value = card.values.get(var.name()).ok_or_else(|| DeckError::MissingValue {
                    card: i,
                    variable: var.name().to_string(),
                })?;
                let index = var.value_index(value).ok_or_else(|| DeckError::UnknownValue {
                    variable: var.name().to_string(),
                    value: value.clone(),
                })?;
                assignment.push(index);
            }
            cards.push((assignment, card.count));
        }

        let degenerate = spec
            .degenerate
            .iter()
            .map(|d| ClassSpec {
                name: d.name.clone(),
                over: d.over.clone(),
                classes: d.classes.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            })
            .collect();
        Deck::new(variables, degenerate, cards)
    }

    pub fn from_json(text: &str) -> Result<Deck, LoadError> {
        let spec: DeckSpec = serde_json::from_str(text)?;
        Ok(Deck::from_spec(&spec)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("deck spec serializes")
    }
}

fn build_degenerate(variables: &[Variable], spec: ClassSpec) -> Result<DegenerateVariable, DeckError> {
    let bad = |reason: String| DeckError::BadClasses {
        name: spec.name.clone(),
        reason,
    };
    let over = variables
        .iter()
        .position(|v| v.name == spec.over)
        .ok_or_else(|| DeckError::UnknownVariable(spec.over.clone()))?;
    let var = &variables[over];
    if spec.classes.is_empty() {
        return Err(bad("no classes".into()));
    }
    let mut class_of = vec![usize::MAX; var.len()];
    let mut classes = Vec::with_capacity(spec.classes.len());
    for (ci, (name, members)) in spec.classes.iter().enumerate() {
        if spec.classes[..ci].iter().any(|(n, _)| n == name) {
            return Err(bad(format!("class {name:?} declared twice")));
        }
        if members.is_empty() {
            return Err(bad(format!("class {name:?} is empty")));
        }
        let mut indices = Vec::with_capacity(members.len());
        for m in members {
            let i = var.value_index(m).ok_or_else(|| DeckError::UnknownValue {
                variable: var.name.clone(),
                value: m.clone(),
            })?;
            if class_of[i] != usize::MAX {
                return Err(bad(format!("value {m:?} appears in more than one class")));
            }
            class_of[i] = ci;
            indices.push(i);
        }
        indices.sort_unstable();
        classes.push(ValueClass {
            name: name.clone(),
            members: indices,
        });
    }
    if let Some(missing) = class_of.iter().position(|&c| c == usize::MAX) {
        return Err(bad(format!("value {:?} belongs to no class", var.values[missing])));
    }
    Ok(DegenerateVariable {
        name: spec.name,
        over: VariableId(over),
        classes,
        class_of,
    })
}

/// Validates a deck description without keeping the deck.
pub fn validate(spec: &DeckSpec) -> Result<ValidationReport, DeckError> {
    Deck::from_spec(spec).map(|d| d.report())
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("malformed deck file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] DeckError),
}

/// On-disk deck description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeckSpec {
    pub variables: Vec<VariableSpec>,
    #[serde(default)]
    pub degenerate: Vec<DegenerateSpec>,
    pub cards: Vec<CardSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegenerateSpec {
    pub name: String,
    pub over: String,
    pub classes: IndexMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardSpec {
    pub values: IndexMap<String, String>,
    pub count: u64,
}
