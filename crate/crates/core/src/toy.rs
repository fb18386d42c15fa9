//! A small deck with return-or-discard rules.
//!
//! Each observation draws a card uniformly, reports one of its values, and
//! returns the card to the deck only if the reported value is that variable's
//! return value; otherwise the card is discarded. Drawing from an empty deck
//! yields [`ToyOutcome::NoDraw`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::OutcomePredicate;
use crate::prob::Prob;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToyError {
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("unknown value {value:?} for {variable}")]
    UnknownValue { variable: String, value: String },
    #[error("card {card} must give one value per variable")]
    BadCard { card: usize },
    #[error("variable {0} has no values")]
    NoValues(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyVariable {
    pub name: String,
    pub values: Vec<String>,
    /// Reporting this value returns the card; any other value discards it.
    pub return_value: usize,
}

/// Physical cards, one entry per card; no marginal constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyDeck {
    variables: Vec<ToyVariable>,
    cards: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyStep {
    pub variable: usize,
    pub outcome: OutcomePredicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ToyOutcome {
    Value(usize),
    NoDraw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fate {
    Return,
    Discard,
}

impl ToyDeck {
    pub fn new(variables: Vec<ToyVariable>, cards: Vec<Vec<usize>>) -> Result<Self, ToyError> {
        for v in &variables {
            if v.values.is_empty() || v.return_value >= v.values.len() {
                return Err(ToyError::NoValues(v.name.clone()));
            }
        }
        for (i, c) in cards.iter().enumerate() {
            if c.len() != variables.len() || c.iter().zip(&variables).any(|(&x, v)| x >= v.values.len()) {
                return Err(ToyError::BadCard { card: i });
            }
        }
        Ok(ToyDeck { variables, cards })
    }

    /// K♠ and Q♥; Face returns on K, Suit returns on H.
    pub fn king_spade_queen_heart() -> Self {
        ToyDeck::new(
            vec![
                ToyVariable {
                    name: "Face".into(),
                    values: vec!["K".into(), "Q".into()],
                    return_value: 0,
                },
                ToyVariable {
                    name: "Suit".into(),
                    values: vec!["S".into(), "H".into()],
                    return_value: 1,
                },
            ],
            vec![vec![0, 0], vec![1, 1]],
        )
        .expect("built-in deck is valid")
    }

    pub fn variables(&self) -> &[ToyVariable] {
        &self.variables
    }

    pub fn cards(&self) -> &[Vec<usize>] {
        &self.cards
    }

    pub fn variable_index(&self, name: &str) -> Result<usize, ToyError> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| ToyError::UnknownVariable(name.into()))
    }

    pub fn value_index(&self, variable: usize, value: &str) -> Result<usize, ToyError> {
        let v = &self.variables[variable];
        v.values.iter().position(|x| x == value).ok_or_else(|| ToyError::UnknownValue {
            variable: v.name.clone(),
            value: value.into(),
        })
    }

    /// Step accepting any of `values` of `variable`.
    pub fn step(&self, variable: &str, values: &[&str]) -> Result<ToyStep, ToyError> {
        let var = self.variable_index(variable)?;
        let vals = values
            .iter()
            .map(|v| self.value_index(var, v))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ToyStep {
            variable: var,
            outcome: match vals[..] {
                [one] => OutcomePredicate::Single(one),
                _ => OutcomePredicate::Set(vals),
            },
        })
    }

    pub fn fate(&self, card: usize, variable: usize) -> Fate {
        if self.cards[card][variable] == self.variables[variable].return_value {
            Fate::Return
        } else {
            Fate::Discard
        }
    }

    pub fn card_name(&self, card: usize) -> String {
        self.cards[card]
            .iter()
            .zip(&self.variables)
            .map(|(&x, v)| v.values[x].as_str())
            .collect()
    }

    /// Exact probability of every outcome sequence of `variables`, by
    /// walking the full draw tree.
    pub fn enumerate(&self, variables: &[usize]) -> BTreeMap<Vec<ToyOutcome>, Prob> {
        let mut leaves = BTreeMap::new();
        let present: Vec<usize> = (0..self.cards.len()).collect();
        self.walk(&present, variables, Vec::new(), Prob::one(), &mut leaves);
        leaves
    }

    fn walk(
        &self,
        present: &[usize],
        variables: &[usize],
        path: Vec<ToyOutcome>,
        weight: Prob,
        leaves: &mut BTreeMap<Vec<ToyOutcome>, Prob>,
    ) {
        let Some((&var, rest)) = variables.split_first() else {
            let slot = leaves.entry(path).or_insert_with(Prob::zero);
            *slot = slot.clone() + weight;
            return;
        };
        if present.is_empty() {
            let mut next = path;
            next.push(ToyOutcome::NoDraw);
            self.walk(present, rest, next, weight, leaves);
            return;
        }
        let draw = Prob::from_counts(1, present.len() as u64);
        for (i, &card) in present.iter().enumerate() {
            let mut next = path.clone();
            next.push(ToyOutcome::Value(self.cards[card][var]));
            let remaining: Vec<usize> = match self.fate(card, var) {
                Fate::Return => present.to_vec(),
                Fate::Discard => present[..i].iter().chain(&present[i + 1..]).copied().collect(),
            };
            self.walk(&remaining, rest, next, &weight * &draw, leaves);
        }
    }

    /// Probability that every step meets its predicate. `NoDraw` meets only
    /// an ignored step.
    pub fn event_prob(&self, steps: &[ToyStep]) -> Prob {
        let vars: Vec<usize> = steps.iter().map(|s| s.variable).collect();
        self.enumerate(&vars)
            .into_iter()
            .filter(|(path, _)| accepts(steps, path))
            .map(|(_, p)| p)
            .sum()
    }

    /// Number of `n` simulated runs meeting every step.
    pub fn simulate<R: RngCore>(&self, steps: &[ToyStep], n: u64, rng: &mut R) -> u64 {
        let mut hits = 0;
        let mut present = Vec::with_capacity(self.cards.len());
        for _ in 0..n {
            present.clear();
            present.extend(0..self.cards.len());
            let mut path = Vec::with_capacity(steps.len());
            for s in steps {
                if present.is_empty() {
                    path.push(ToyOutcome::NoDraw);
                    continue;
                }
                let i = rng.random_range(0..present.len());
                let card = present[i];
                path.push(ToyOutcome::Value(self.cards[card][s.variable]));
                if self.fate(card, s.variable) == Fate::Discard {
                    present.swap_remove(i);
                }
            }
            if accepts(steps, &path) {
                hits += 1;
            }
        }
        hits
    }
}

fn accepts(steps: &[ToyStep], path: &[ToyOutcome]) -> bool {
    steps.iter().zip(path).all(|(s, o)| match (o, &s.outcome) {
        (_, OutcomePredicate::Ignored) => true,
        (ToyOutcome::Value(v), pred) => pred.accepts(*v),
        (ToyOutcome::NoDraw, _) => false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleConflict {
    pub card: String,
    pub face_rule: Fate,
    pub suit_rule: Fate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderAsymmetry {
    pub king_then_spade: Prob,
    pub spade_then_king: Prob,
    pub asymmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondKing {
    /// `Pr{(K or Q) first, K second}`.
    pub via_face: Prob,
    /// `Pr{(S or H) first, K second}`, from enumeration.
    pub via_suit: Prob,
    /// Published value for `via_suit`.
    pub via_suit_reference: Prob,
    pub reference_discrepancy: bool,
    /// The two values differ, so `Pr{K second}` depends on which variable
    /// was observed first.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExerciseReport {
    pub exercise1: RuleConflict,
    pub exercise2: OrderAsymmetry,
    pub exercise3: SecondKing,
    pub discrepancy_notes: String,
}

pub const DISCREPANCY_DOC: &str = "docs/discrepancies.md";

/// Answers for the K♠/Q♥ deck.
pub fn exercise_report() -> ExerciseReport {
    let deck = ToyDeck::king_spade_queen_heart();
    let step = |var: &str, vals: &[&str]| deck.step(var, vals).expect("built-in names");
    let face = deck.variable_index("Face").expect("built-in");
    let suit = deck.variable_index("Suit").expect("built-in");
    let witness = (0..deck.cards().len())
        .find(|&c| deck.fate(c, face) != deck.fate(c, suit))
        .expect("K♠ splits the rules");
    let ks = deck.event_prob(&[step("Face", &["K"]), step("Suit", &["S"])]);
    let sk = deck.event_prob(&[step("Suit", &["S"]), step("Face", &["K"])]);
    let via_face = deck.event_prob(&[step("Face", &["K", "Q"]), step("Face", &["K"])]);
    let via_suit = deck.event_prob(&[step("Suit", &["S", "H"]), step("Face", &["K"])]);
    let reference = Prob::zero();
    ExerciseReport {
        exercise1: RuleConflict {
            card: deck.card_name(witness),
            face_rule: deck.fate(witness, face),
            suit_rule: deck.fate(witness, suit),
        },
        exercise2: OrderAsymmetry {
            asymmetric: ks != sk,
            king_then_spade: ks,
            spade_then_king: sk,
        },
        exercise3: SecondKing {
            ambiguous: via_face != via_suit,
            reference_discrepancy: via_suit != reference,
            via_face,
            via_suit,
            via_suit_reference: reference,
        },
        discrepancy_notes: DISCREPANCY_DOC.into(),
    }
}

impl ExerciseReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let fate = |f: Fate| match f {
            Fate::Return => "return",
            Fate::Discard => "discard",
        };
        let mut s = String::new();
        let e1 = &self.exercise1;
        let e2 = &self.exercise2;
        let e3 = &self.exercise3;
        let _ = writeln!(s, "# Exercises: deck {{K♠, Q♥}}\n");
        let _ = writeln!(s, "## Conflicting discard rules\n");
        let _ = writeln!(
            s,
            "Card `{}`: the Face rule says **{}**, the Suit rule says **{}**. \
             No single draw can follow both rules, so the two observations are \
             different processes.\n",
            e1.card,
            fate(e1.face_rule),
            fate(e1.suit_rule)
        );
        let _ = writeln!(s, "## Order of observation\n");
        let _ = writeln!(s, "| sequence | probability |\n|---|---|");
        let _ = writeln!(s, "| Pr{{K first, S second}} | {} |", e2.king_then_spade);
        let _ = writeln!(s, "| Pr{{S first, K second}} | {} |", e2.spade_then_king);
        let _ = writeln!(s, "\nOrder matters: {}.\n", e2.asymmetric);
        let _ = writeln!(s, "## Probability of K second\n");
        let _ = writeln!(s, "| sequence | enumeration | reference |\n|---|---|---|");
        let _ = writeln!(s, "| Pr{{(K or Q) first, K second}} | {} | {} |", e3.via_face, e3.via_face);
        let _ = writeln!(
            s,
            "| Pr{{(S or H) first, K second}} | {} | {} |",
            e3.via_suit, e3.via_suit_reference
        );
        let _ = writeln!(s, "\nPr{{K second}} is ambiguous: {}.", e3.ambiguous);
        if e3.reference_discrepancy {
            let _ = writeln!(
                s,
                "\nThe enumeration value for the Suit-first sequence differs from the \
                 reference value; see `{}`.",
                self.discrepancy_notes
            );
        }
        s
    }
}
