#![allow(dead_code)]

use quantal::deck::{ClassSpec, Deck, Target, Variable};
use quantal::engine::{Engine, PState};
use quantal::montecarlo::{seeded_stream, shuffle};
use rand::Rng;

const VALUE_NAMES: [&str; 4] = ["a", "b", "c", "d"];

/// A random deck with equal marginals: `V` in {2,3,4}, two or three
/// variables, per-value count `N <= 6`.
///
/// The deck is a weighted sum of layers; each layer holds `V` cards in which
/// every value of every variable appears exactly once. For `V >= 3` a
/// degenerate variable `G` over `X1` merges two random values.
pub fn random_deck(seed: u64) -> Deck {
    let mut rng = seeded_stream(seed, 0);
    let v = rng.random_range(2..=4usize);
    let nvars = rng.random_range(2..=3usize);
    let n = rng.random_range(1..=6u64);
    let layers = rng.random_range(1..=n.min(3));
    let mut weights = vec![1u64; layers as usize];
    for _ in layers..n {
        let i = rng.random_range(0..weights.len());
        weights[i] += 1;
    }
    let mut cards = Vec::new();
    for w in weights {
        let perms: Vec<Vec<usize>> = (0..nvars)
            .map(|_| {
                let mut p: Vec<usize> = (0..v).collect();
                shuffle(&mut p, &mut rng);
                p
            })
            .collect();
        for i in 0..v {
            cards.push((perms.iter().map(|p| p[i]).collect::<Vec<_>>(), w));
        }
    }
    let variables: Vec<Variable> = (0..nvars)
        .map(|x| Variable::new(format!("X{x}"), VALUE_NAMES[..v].iter().copied()))
        .collect();
    let mut classes = Vec::new();
    if v >= 3 {
        let mut order: Vec<usize> = (0..v).collect();
        shuffle(&mut order, &mut rng);
        let mut spec = vec![(
            "m".to_string(),
            vec![VALUE_NAMES[order[0]].to_string(), VALUE_NAMES[order[1]].to_string()],
        )];
        for &o in &order[2..] {
            spec.push((format!("s{o}"), vec![VALUE_NAMES[o].to_string()]));
        }
        classes.push(ClassSpec {
            name: "G".into(),
            over: "X1".into(),
            classes: spec,
        });
    }
    Deck::new(variables, classes, cards).expect("layered decks have equal marginals")
}

/// Every preparation of every target, with its (target, value).
pub fn all_preps(engine: &Engine<'_>) -> Vec<(Target, usize, PState)> {
    let deck = engine.deck();
    deck.targets()
        .into_iter()
        .flat_map(|t| (0..deck.outcome_count(t)).map(move |o| (t, o)))
        .map(|(t, o)| (t, o, engine.prepare(t, o).expect("every value is on some card")))
        .collect()
}

/// Full deck plus every preparation.
pub fn all_states(engine: &Engine<'_>) -> Vec<PState> {
    std::iter::once(PState::full(engine.deck()))
        .chain(all_preps(engine).into_iter().map(|(_, _, s)| s))
        .collect()
}

use quantal::closed_form;
use quantal::deck::ValueRef;
use quantal::engine::{EventStep, Outcome};
use quantal::interference::{check_additivity, interference, interference_closed_form, InterferenceQuery};
use quantal::prob::Prob;

pub type Check = fn(&Deck) -> Result<(), String>;

fn outcomes(deck: &Deck) -> Vec<Outcome> {
    deck.targets()
        .into_iter()
        .flat_map(|t| (0..deck.outcome_count(t)).map(move |o| Outcome::new(t, o)))
        .collect()
}

fn plain_values(deck: &Deck) -> Vec<ValueRef> {
    (0..deck.variables().len())
        .flat_map(|v| (0..deck.values_per_variable()).map(move |x| ValueRef::new(quantal::VariableId(v), x)))
        .collect()
}

fn step(o: Outcome) -> EventStep {
    EventStep::single(o.target, o.value)
}

/// Observing the same target twice in a row repeats the first result.
pub fn repeatability(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    for s in all_states(&e) {
        for o in outcomes(deck) {
            let once = e.steps_prob(&s, &[step(o)]).map_err(|x| x.to_string())?;
            let twice = e.steps_prob(&s, &[step(o), step(o)]).map_err(|x| x.to_string())?;
            if once != twice {
                return Err(format!("{:?}: {once} vs {twice}", o));
            }
        }
    }
    Ok(())
}

/// `Prob(b|a) = Prob(a|b)` for values of plain variables.
pub fn reciprocity(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    let n = deck.variables().len();
    for a in 0..n {
        for b in 0..n {
            let ta = Target::Plain(quantal::VariableId(a));
            let tb = Target::Plain(quantal::VariableId(b));
            let ab = e.conditional_matrix(ta, tb).map_err(|x| x.to_string())?;
            let ba = e.conditional_matrix(tb, ta).map_err(|x| x.to_string())?;
            for (j, row) in ab.iter().enumerate() {
                for (k, p) in row.iter().enumerate() {
                    if *p != ba[k][j] {
                        return Err(format!("X{a}={j}, X{b}={k}: {p} vs {}", ba[k][j]));
                    }
                }
            }
        }
    }
    Ok(())
}

/// The probability of the next result given the last one does not depend on
/// the preparation.
pub fn markov(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    for s in all_states(&e) {
        for a in outcomes(deck) {
            if e.steps_prob(&s, &[step(a)]).map_err(|x| x.to_string())?.is_zero() {
                continue;
            }
            let after = e.prepare(a.target, a.value).map_err(|x| x.to_string())?;
            for b in outcomes(deck) {
                let cond = e.conditional_prob(&s, &[step(a)], &[step(b)]).map_err(|x| x.to_string())?;
                let fresh = e.steps_prob(&after, &[step(b)]).map_err(|x| x.to_string())?;
                if cond != fresh {
                    return Err(format!("{a:?} then {b:?}: {cond} vs {fresh}"));
                }
            }
        }
    }
    Ok(())
}

/// Every target is compatible with itself.
pub fn self_compatibility(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    for s in all_states(&e) {
        for t in deck.targets() {
            if e.compatibility_defect(&s, t, t).iter().flatten().any(|d| !num_traits::Zero::is_zero(d)) {
                return Err(format!("{t:?} not self-compatible"));
            }
        }
    }
    Ok(())
}

/// Each degenerate class is additive over its members.
pub fn class_additivity(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    for (d, dv) in deck.degenerate().iter().enumerate() {
        let id = quantal::deck::DegenerateId(d);
        for (c, class) in dv.classes().iter().enumerate() {
            let r = check_additivity(&e, id, c, &class.members).map_err(|x| x.to_string())?;
            if let Some(cx) = r.counterexample {
                return Err(format!("class {c}: {cx:?}"));
            }
        }
    }
    Ok(())
}

/// Branch sum over all results of `P` equals the probability read off the
/// dephased mixture, for plain and degenerate `P`.
pub fn marginal_identity(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    for s in all_states(&e) {
        for p in deck.targets() {
            for q in outcomes(deck) {
                let lhs = e.marginal_lhs(&s, p, q).map_err(|x| x.to_string())?;
                let rhs = e.marginal_rhs_manifested(&s, p, q).map_err(|x| x.to_string())?;
                if lhs != rhs {
                    return Err(format!("{p:?} then {q:?}: {lhs} vs {rhs}"));
                }
            }
        }
    }
    Ok(())
}

/// Interference from the definition equals the two-member closed form.
pub fn interference_matches_closed_form(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    for (d, dv) in deck.degenerate().iter().enumerate() {
        let id = quantal::deck::DegenerateId(d);
        for (c, class) in dv.classes().iter().enumerate() {
            if class.members.len() != 2 {
                continue;
            }
            for (_, _, prep) in all_preps(&e) {
                for q in outcomes(deck) {
                    let query = InterferenceQuery::for_class(deck, id, c, prep.clone(), q);
                    let def = interference(&e, &query).map_err(|x| x.to_string())?;
                    let cf = interference_closed_form(deck, &prep, id, c, q).map_err(|x| x.to_string())?;
                    if def != cf {
                        return Err(format!("class {c}, {q:?}: {def} vs {cf}"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Count-based closed forms agree with the branch walk.
pub fn closed_forms(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    let values = plain_values(deck);
    for &x in &values {
        let prep = e.prepare_value(x).map_err(|err| err.to_string())?;
        for &a in &values {
            for &b in &values {
                let walk = e
                    .steps_prob(&prep, &[EventStep::value(a), EventStep::value(b)])
                    .map_err(|err| err.to_string())?;
                if walk.value() != &closed_form::two_step(deck, x, a, b) {
                    return Err(format!("two-step {x:?} {a:?} {b:?}"));
                }
            }
            for v in 0..deck.variables().len() {
                let ignored = quantal::VariableId(v);
                let lhs = e
                    .marginal_lhs(&prep, Target::Plain(ignored), a.into())
                    .map_err(|err| err.to_string())?;
                if lhs.value() != &closed_form::ignored_marginal(deck, x, ignored, a) {
                    return Err(format!("ignored marginal {x:?} X{v} {a:?}"));
                }
            }
        }
    }
    Ok(())
}

/// Filtering a state on a result gives the preparation of that result, and
/// later probabilities from it are the conditionals.
pub fn filtered_prep_is_conditional(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    for s in all_states(&e) {
        for a in outcomes(deck) {
            if e.steps_prob(&s, &[step(a)]).map_err(|x| x.to_string())?.is_zero() {
                continue;
            }
            let filtered = e.filter(&s, &step(a)).map_err(|x| x.to_string())?;
            if filtered != e.prepare(a.target, a.value).map_err(|x| x.to_string())? {
                return Err(format!("filter {a:?}"));
            }
            for b in outcomes(deck) {
                let cond = e.conditional_prob(&s, &[step(a)], &[step(b)]).map_err(|x| x.to_string())?;
                let next = e.steps_prob(&filtered, &[step(b)]).map_err(|x| x.to_string())?;
                if cond != next {
                    return Err(format!("{a:?} then {b:?}"));
                }
            }
        }
    }
    Ok(())
}

/// Probabilities of all results of one observation sum to one.
pub fn normalization(deck: &Deck) -> Result<(), String> {
    let e = Engine::new(deck);
    for s in all_states(&e) {
        for t in deck.targets() {
            let total: Prob = e.observe(&s, t).into_iter().map(|b| b.prob).sum();
            if total != Prob::one() {
                return Err(format!("{t:?} sums to {total}"));
            }
        }
    }
    Ok(())
}
