//! Ready-made decks used by the tables, the CLI and the tests.

use crate::deck::{ClassSpec, Deck, Variable};

fn color_over_suit() -> ClassSpec {
    ClassSpec {
        name: "Color".into(),
        over: "Suit".into(),
        classes: vec![
            ("R".into(), vec!["H".into(), "D".into()]),
            ("B".into(), vec!["S".into()]),
        ],
    }
}

fn face_suit_3x3(counts: [[u64; 3]; 3]) -> Deck {
    let cards = (0..3).flat_map(|f| (0..3).map(move |s| (vec![f, s], counts[f][s])));
    Deck::new(
        vec![
            Variable::new("Face", ["K", "Q", "J"]),
            Variable::new("Suit", ["S", "H", "D"]),
        ],
        vec![color_over_suit()],
        cards,
    )
    .expect("preset deck is valid")
}

/// Thirty cards, Face {K,Q,J} by Suit {S,H,D}, with Color {R: H,D; B: S}.
///
/// Counts per row K, Q, J: (1,4,5), (4,5,1), (5,1,4).
pub fn face_suit_color() -> Deck {
    face_suit_3x3([[1, 4, 5], [4, 5, 1], [5, 1, 4]])
}

/// A deck in which every face has as many hearts as diamonds, so merging the
/// red suits changes nothing.
pub fn symmetric_red() -> Deck {
    face_suit_3x3([[4, 3, 3], [2, 4, 4], [4, 3, 3]])
}

/// Six cards over two values: K♠ K♠ K♥ Q♠ Q♥ Q♥.
pub fn two_value() -> Deck {
    Deck::new(
        vec![Variable::new("Face", ["K", "Q"]), Variable::new("Suit", ["S", "H"])],
        vec![],
        vec![(vec![0, 0], 2), (vec![0, 1], 1), (vec![1, 0], 1), (vec![1, 1], 2)],
    )
    .expect("preset deck is valid")
}

/// Face determines Suit: K♠ ×2, Q♥ ×2, J♦ ×2.
pub fn diagonal() -> Deck {
    face_suit_3x3([[2, 0, 0], [0, 2, 0], [0, 0, 2]])
}
