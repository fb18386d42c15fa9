//! Exact and simulated probabilities for card decks whose observations
//! disturb the deck, with a small quantum comparison.

pub mod closed_form;
pub mod deck;
pub mod engine;
pub mod interference;
pub mod montecarlo;
pub mod parse;
pub mod presets;
pub mod prob;
pub mod quantum;
pub mod toy;

pub use deck::{Deck, DeckError, DeckSpec, Target, ValueRef, Variable, VariableId};
pub use engine::{Engine, EngineError, EventSequence, EventStep, Outcome, PState};
pub use prob::{Prob, Rational};
