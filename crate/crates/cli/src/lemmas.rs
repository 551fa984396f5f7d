//! Closed-form matrix-game win probabilities checked against exhaustive
//! enumeration of joint actions.

use std::fmt::Write as _;

use naht_core::env::bitgame::{
    asym_naht_win_prob, aht_win_prob, brute_force_win_prob, shared_naht_win_prob, static_win_prob,
};

pub const TOLERANCE: f64 = 1e-12;
pub const SPREAD_TOLERANCE: f64 = 1e-15;
const THIRD: f64 = 1.0 / 3.0;

/// The analytic formulas under test. Swappable so a deliberately broken
/// table can prove the check bites.
#[derive(Clone, Copy)]
pub struct Formulas {
    pub static_win: fn(usize, f64) -> f64,
    pub aht_win: fn(f64) -> f64,
    pub shared_naht_win: fn(f64) -> f64,
    pub asym_naht_win: fn(f64) -> f64,
}

impl Default for Formulas {
    fn default() -> Self {
        Formulas {
            static_win: static_win_prob,
            aht_win: aht_win_prob,
            shared_naht_win: shared_naht_win_prob,
            asym_naht_win: asym_naht_win_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaRow {
    pub quantity: String,
    pub analytic: f64,
    pub brute_force: f64,
    pub abs_diff: f64,
    pub tolerance: f64,
}

impl LemmaRow {
    fn new(quantity: String, analytic: f64, brute_force: f64, tolerance: f64) -> Self {
        LemmaRow {
            quantity,
            analytic,
            brute_force,
            abs_diff: (analytic - brute_force).abs(),
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.abs_diff < self.tolerance
    }
}

fn brute(ps: &[f64]) -> f64 {
    brute_force_win_prob(ps).expect("valid probabilities")
}

fn grid(points: usize) -> impl Iterator<Item = f64> {
    (0..points).map(move |k| k as f64 / (points - 1) as f64)
}

/// Every comparison, headline values first.
pub fn lemma_table(f: &Formulas) -> Vec<LemmaRow> {
    let mut rows = vec![
        LemmaRow::new("static_M3_p1/3".into(), (f.static_win)(3, THIRD), brute(&[THIRD; 3]), TOLERANCE),
        LemmaRow::new("aht_p0.37".into(), (f.aht_win)(0.37), brute(&[0.37, THIRD, THIRD]), TOLERANCE),
        LemmaRow::new("shared_naht_p1/3".into(), (f.shared_naht_win)(THIRD), brute(&[THIRD, THIRD, THIRD]), TOLERANCE),
        LemmaRow::new("asym_naht_p1".into(), (f.asym_naht_win)(1.0), brute(&[1.0, 0.0, THIRD]), TOLERANCE),
    ];
    for m in 2..=6 {
        for p in grid(11) {
            rows.push(LemmaRow::new(
                format!("static_M{m}_p{p}"),
                (f.static_win)(m, p),
                brute(&vec![p; m]),
                TOLERANCE,
            ));
        }
    }
    for p in grid(11) {
        rows.push(LemmaRow::new(format!("aht_p{p}"), (f.aht_win)(p), brute(&[p, THIRD, THIRD]), TOLERANCE));
        rows.push(LemmaRow::new(
            format!("shared_naht_p{p}"),
            (f.shared_naht_win)(p),
            brute(&[p, p, THIRD]),
            TOLERANCE,
        ));
        rows.push(LemmaRow::new(
            format!("asym_naht_p{p}"),
            (f.asym_naht_win)(p),
            brute(&[p, 0.0, THIRD]),
            TOLERANCE,
        ));
    }
    let aht: Vec<f64> = grid(101).map(f.aht_win).collect();
    let spread = aht.iter().cloned().fold(f64::MIN, f64::max) - aht.iter().cloned().fold(f64::MAX, f64::min);
    rows.push(LemmaRow::new("aht_spread_101".into(), spread, 0.0, SPREAD_TOLERANCE));
    // argmax over a 3001-point grid that contains 1/3 exactly
    let argmax = |g: &dyn Fn(f64) -> f64| {
        grid(3001).fold((f64::NAN, f64::MIN), |(bp, bv), p| if g(p) > bv { (p, g(p)) } else { (bp, bv) }).0
    };
    let shared = f.shared_naht_win;
    rows.push(LemmaRow::new(
        "shared_naht_argmax".into(),
        argmax(&|p| shared(p)),
        argmax(&|p| brute(&[p, p, THIRD])),
        TOLERANCE,
    ));
    rows.push(LemmaRow::new("shared_naht_argmax_is_1/3".into(), argmax(&|p| shared(p)), THIRD, TOLERANCE));
    rows
}

/// `quantity,analytic,brute_force,abs_diff` rows.
pub fn lemma_csv(rows: &[LemmaRow]) -> String {
    let mut out = String::from("quantity,analytic,brute_force,abs_diff\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.quantity, r.analytic, r.brute_force, r.abs_diff).expect("writing to a string");
    }
    out
}
