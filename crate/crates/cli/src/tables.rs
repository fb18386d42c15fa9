use std::fmt::Write as _;

use quantal::closed_form;
use quantal::deck::{DegenerateId, Deck, Target, ValueRef, VariableId};
use quantal::engine::{Engine, Outcome};
use quantal::interference::interference_grid;
use quantal::presets;
use quantal::prob::{decimal, ratio, rational_string, Rational};
use serde::{Deserialize, Serialize};

pub const DISCREPANCY_DOC: &str = "docs/discrepancies.md";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub exact: String,
    pub decimal: String,
}

impl Cell {
    pub fn new(r: &Rational) -> Self {
        Cell {
            exact: rational_string(r),
            decimal: decimal(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub name: String,
    pub title: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_discrepancy: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_values: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub p: String,
    pub q: String,
    pub grids: Vec<Grid>,
}

fn names(deck: &Deck, t: Target) -> Vec<String> {
    (0..deck.outcome_count(t)).map(|o| deck.outcome_name(t, o).to_string()).collect()
}

fn grid(name: String, title: String, rows: Vec<String>, cols: Vec<String>, values: &[Vec<Rational>]) -> Grid {
    Grid {
        name,
        title,
        rows,
        cols,
        cells: values.iter().map(|r| r.iter().map(Cell::new).collect()).collect(),
        reference_discrepancy: None,
        reference_values: None,
        notes: None,
    }
}

fn is_reference(deck: &Deck, p: VariableId, q: VariableId) -> bool {
    let r = presets::face_suit_color();
    deck.variables() == r.variables()
        && deck.cards() == r.cards()
        && deck.counts() == r.counts()
        && deck.variable(p).name() == "Face"
        && deck.variable(q).name() == "Suit"
}

fn published(rows: [[i64; 3]; 3], den: i64) -> Vec<Vec<Rational>> {
    rows.iter().map(|r| r.iter().map(|&n| ratio(n, den)).collect()).collect()
}

fn annotate(g: &mut Grid, computed: &[Vec<Rational>], printed: Vec<Vec<Rational>>) {
    let differs = computed.iter().flatten().zip(printed.iter().flatten()).any(|(a, b)| a != b);
    g.reference_discrepancy = Some(differs);
    g.reference_values = Some(
        printed
            .iter()
            .map(|r| r.iter().map(rational_string).collect())
            .collect(),
    );
    g.notes = Some(DISCREPANCY_DOC.into());
}

/// Conditional matrix, defect grid per preparation, ignored-observation
/// shift grid and, for every two-member class, its interference grid.
pub fn build(deck: &Deck, p: VariableId, q: VariableId) -> Result<Tables, String> {
    let e = Engine::new(deck);
    let (tp, tq) = (Target::Plain(p), Target::Plain(q));
    let (pn, qn) = (deck.variable(p).name().to_string(), deck.variable(q).name().to_string());
    let v = deck.values_per_variable();
    let pv = |j| ValueRef::new(p, j);
    let qv = |k| ValueRef::new(q, k);
    let reference = is_reference(deck, p, q);
    let mut grids = Vec::new();

    let cond: Vec<Vec<Rational>> = e
        .conditional_matrix(tp, tq)
        .map_err(|x| x.to_string())?
        .into_iter()
        .map(|r| r.into_iter().map(|x| x.into_inner()).collect())
        .collect();
    grids.push(grid(
        "conditional".into(),
        format!("Prob({qn} | {pn})"),
        names(deck, tp),
        names(deck, tq),
        &cond,
    ));

    for j in 0..v {
        let prep = e.prepare(tp, j).map_err(|x| x.to_string())?;
        let defect = e.compatibility_defect(&prep, tp, tq);
        let closed: Vec<Vec<Rational>> = (0..v)
            .map(|k| (0..v).map(|l| closed_form::compatibility_defect(deck, pv(j), pv(k), qv(l))).collect())
            .collect();
        if defect != closed {
            return Err(format!("defect grid for {pn}={} disagrees with its closed form", deck.variable(p).values()[j]));
        }
        let pj = &deck.variable(p).values()[j];
        let mut g = grid(
            format!("defect[{pn}={pj}]"),
            format!("Pr{{{pn}_k & {qn}_l}} - Pr{{{qn}_l & {pn}_k}} after preparing {pn}={pj}"),
            names(deck, tp),
            names(deck, tq),
            &defect,
        );
        if reference && j == 0 {
            annotate(&mut g, &defect, published([[9, 36, 45], [-16, -20, -4], [-25, -5, -20]], 100));
        }
        grids.push(g);
    }

    let shift: Vec<Vec<Rational>> = (0..v)
        .map(|j| (0..v).map(|k| closed_form::ignored_marginal_shift(deck, pv(j), q, pv(k))).collect())
        .collect();
    for (j, row) in shift.iter().enumerate() {
        let prep = e.prepare(tp, j).map_err(|x| x.to_string())?;
        for (k, cell) in row.iter().enumerate() {
            let pk = Outcome::new(tp, k);
            let walked = e.marginal_lhs(&prep, tq, pk).map_err(|x| x.to_string())?;
            let direct = e.direct_prob(&prep, pk).map_err(|x| x.to_string())?;
            if &walked.minus(&direct) != cell {
                return Err("ignored-observation grid disagrees with its closed form".into());
            }
        }
    }
    let mut g = grid(
        "ignored".into(),
        format!("Sum_l Pr{{{qn}_l & {pn}_k}} - Prob({pn}_k) after preparing {pn}_j"),
        names(deck, tp),
        names(deck, tp),
        &shift,
    );
    if reference {
        annotate(&mut g, &shift, published([[-90, 40, 50], [40, -50, 10], [50, 10, -60]], 100));
    }
    grids.push(g);

    for (d, dv) in deck.degenerate().iter().enumerate() {
        for (c, class) in dv.classes().iter().enumerate() {
            if class.members.len() != 2 || dv.over() == p {
                continue;
            }
            let values = interference_grid(&e, DegenerateId(d), c, tp, tp).map_err(|x| x.to_string())?;
            let members: Vec<&str> = class
                .members
                .iter()
                .map(|&m| deck.variable(dv.over()).values()[m].as_str())
                .collect();
            grids.push(grid(
                format!("interference[{}={}]", dv.name(), class.name),
                format!(
                    "Pr{{{}={} & {pn}_k}} - Pr{{{}=({}) & {pn}_k}} after preparing {pn}_j",
                    dv.name(),
                    class.name,
                    deck.variable(dv.over()).name(),
                    members.join("|")
                ),
                names(deck, tp),
                names(deck, tp),
                &values,
            ));
        }
    }
    Ok(Tables { p: pn, q: qn, grids })
}

pub fn to_text(t: &Tables) -> String {
    let mut s = String::new();
    for g in &t.grids {
        let _ = writeln!(s, "{}", g.title);
        let cells: Vec<Vec<String>> = g
            .cells
            .iter()
            .map(|r| r.iter().map(|c| format!("{} ({})", c.exact, c.decimal)).collect())
            .collect();
        let label_w = g.rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
        let col_w = cells
            .iter()
            .flatten()
            .map(|c| c.chars().count())
            .chain(g.cols.iter().map(|c| c.chars().count()))
            .max()
            .unwrap_or(0);
        let _ = write!(s, "{:label_w$}", "");
        for c in &g.cols {
            let _ = write!(s, "  {c:>col_w$}");
        }
        s.push('\n');
        for (r, row) in g.rows.iter().zip(&cells) {
            let _ = write!(s, "{r:label_w$}");
            for c in row {
                let _ = write!(s, "  {c:>col_w$}");
            }
            s.push('\n');
        }
        if g.reference_discrepancy == Some(true) {
            let _ = writeln!(s, "note: differs from the published grid; see {DISCREPANCY_DOC}");
        }
        s.push('\n');
    }
    s
}

pub fn to_markdown(t: &Tables) -> String {
    let mut s = String::new();
    for g in &t.grids {
        let _ = writeln!(s, "### {}\n", g.title);
        let _ = writeln!(s, "| | {} |", g.cols.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(g.cols.len()));
        for (r, row) in g.rows.iter().zip(&g.cells) {
            let cells: Vec<String> = row.iter().map(|c| format!("{} ({})", c.exact, c.decimal)).collect();
            let _ = writeln!(s, "| {r} | {} |", cells.join(" | "));
        }
        if g.reference_discrepancy == Some(true) {
            let _ = writeln!(s, "\nDiffers from the published grid; see `{DISCREPANCY_DOC}`.");
        }
        s.push('\n');
    }
    s
}

pub fn to_csv(t: &Tables) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["table", "row", "col", "exact_num", "exact_den", "decimal"])?;
    for g in &t.grids {
        for (r, row) in g.rows.iter().zip(&g.cells) {
            for (c, cell) in g.cols.iter().zip(row) {
                let (num, den) = cell.exact.split_once('/').unwrap_or((cell.exact.as_str(), "1"));
                w.write_record([g.name.as_str(), r, c, num, den, cell.decimal.as_str()])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
