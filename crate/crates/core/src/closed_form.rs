//! Count-based closed forms for the counting model.
//!
//! These use only the card counts `N(a·b)` and never run an observation, so
//! they serve as an independent route against the engine's branch walk.
//! All preparations here are single values `x` of plain variables.

use num_bigint::BigInt;

use crate::deck::{Deck, ValueRef, VariableId};
use crate::prob::Rational;

/// `Prob(a | b) = N(a·b) / N`; the Kronecker delta for one variable.
pub fn conditional(deck: &Deck, a: ValueRef, given: ValueRef) -> Rational {
    Rational::new(
        BigInt::from(deck.joint_count(a, given)),
        BigInt::from(deck.per_value()),
    )
}

/// `Pr_x{a & b} = Prob(a|x) Prob(b|a)`.
pub fn two_step(deck: &Deck, x: ValueRef, a: ValueRef, b: ValueRef) -> Rational {
    conditional(deck, a, x) * conditional(deck, b, a)
}

/// `Pr_x{p & q} - Pr_x{q & p}`.
pub fn compatibility_defect(deck: &Deck, x: ValueRef, p: ValueRef, q: ValueRef) -> Rational {
    two_step(deck, x, p, q) - two_step(deck, x, q, p)
}

/// `Σ_t Pr_x{p_t & y} = Σ_t N(p_t·x) N(p_t·y) / N²`.
pub fn ignored_marginal(deck: &Deck, x: ValueRef, ignored: VariableId, y: ValueRef) -> Rational {
    let n = deck.per_value();
    let sum: u64 = (0..deck.variable(ignored).len())
        .map(|t| {
            let pt = ValueRef::new(ignored, t);
            deck.joint_count(pt, x) * deck.joint_count(pt, y)
        })
        .sum();
    Rational::new(BigInt::from(sum), BigInt::from(n * n))
}

/// Effect of an ignored intermediate observation:
/// `Σ_t Pr_x{p_t & y} - Pr_x{y}`.
pub fn ignored_marginal_shift(deck: &Deck, x: ValueRef, ignored: VariableId, y: ValueRef) -> Rational {
    ignored_marginal(deck, x, ignored, y) - conditional(deck, y, x)
}
