//! Dead-code trigger generators.
//!
//! Payloads are returned as lines relative to column 0: the head statement
//! unindented, block bodies indented by four spaces. Insertion adds the
//! surrounding indentation.

use crate::codetext::{tokenize_code, Token, TokenKind};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

pub const GRAMMAR1_KEYWORDS: [&str; 4] = ["err", "crash", "alert", "warning"];
pub const LOG_LEVELS: [&str; 5] = ["debug", "info", "warning", "error", "critical"];

/// Range for grammar-1 function arguments.
pub const ARG_RANGE: (u32, u32) = (1, 100);
/// Range for grammar-1 comparison bounds. Every guard function stays below
/// 11 on `ARG_RANGE` (`sqrt(100) = 10`), so any bound here is unreachable.
pub const BOUND_RANGE: (u32, u32) = (11, 100);
pub const LOOP_BOUND_RANGE: (i32, i32) = (-100, 0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerFamily {
    Fixed1,
    Fixed2,
    Grammar1,
    Grammar2,
    Evolved,
}

impl TriggerFamily {
    pub const GENERATED: [TriggerFamily; 4] = [
        TriggerFamily::Fixed1,
        TriggerFamily::Fixed2,
        TriggerFamily::Grammar1,
        TriggerFamily::Grammar2,
    ];
}

impl fmt::Display for TriggerFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TriggerFamily::Fixed1 => "fixed1",
            TriggerFamily::Fixed2 => "fixed2",
            TriggerFamily::Grammar1 => "grammar1",
            TriggerFamily::Grammar2 => "grammar2",
            TriggerFamily::Evolved => "evolved",
        };
        f.write_str(s)
    }
}

/// Comparison used by the first fixed trigger. Published renderings of it
/// differ between `>` and `>=`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Greater,
    #[default]
    GreaterEqual,
}

impl Comparison {
    fn as_str(self) -> &'static str {
        match self {
            Comparison::Greater => ">",
            Comparison::GreaterEqual => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedKind {
    Fixed1,
    Fixed2,
}

pub fn fixed_trigger(kind: FixedKind, comparison: Comparison) -> Vec<String> {
    match kind {
        FixedKind::Fixed1 => vec![
            format!("while random() {} 68:", comparison.as_str()),
            "    print(\"warning\")".to_string(),
        ],
        FixedKind::Fixed2 => vec![
            "import logging".to_string(),
            "for i in range(0):".to_string(),
            "    logging.info(\"Test message: aaaaa\")".to_string(),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    If,
    While,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardFn {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Random,
}

impl GuardFn {
    pub const ALL: [GuardFn; 5] = [GuardFn::Sin, GuardFn::Cos, GuardFn::Exp, GuardFn::Sqrt, GuardFn::Random];

    pub fn name(self) -> &'static str {
        match self {
            GuardFn::Sin => "sin",
            GuardFn::Cos => "cos",
            GuardFn::Exp => "exp",
            GuardFn::Sqrt => "sqrt",
            GuardFn::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    Print,
    Raise,
}

/// `if|while f(arg) > bound:` followed by `print(msg)` or
/// `raise Exception(msg)`. `exp` takes a negated argument so that its value
/// stays below 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grammar1Params {
    pub head: Head,
    pub func: GuardFn,
    pub arg: u32,
    pub bound: u32,
    pub body: BodyKind,
    pub message: String,
}

impl Grammar1Params {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let head = if rng.gen_bool(0.5) { Head::If } else { Head::While };
        let func = GuardFn::ALL[rng.gen_range(0..GuardFn::ALL.len())];
        let arg = rng.gen_range(ARG_RANGE.0..=ARG_RANGE.1);
        let bound = rng.gen_range(BOUND_RANGE.0..=BOUND_RANGE.1);
        let body = if rng.gen_bool(0.5) {
            BodyKind::Print
        } else {
            BodyKind::Raise
        };
        let message = if rng.gen_bool(0.5) {
            GRAMMAR1_KEYWORDS[rng.gen_range(0..GRAMMAR1_KEYWORDS.len())].to_string()
        } else {
            random_letters(rng, 4)
        };
        Self {
            head,
            func,
            arg,
            bound,
            body,
            message,
        }
    }

    pub fn render(&self) -> Vec<String> {
        let head = match self.head {
            Head::If => "if",
            Head::While => "while",
        };
        let call = match self.func {
            GuardFn::Random => "random()".to_string(),
            GuardFn::Exp => format!("exp(-{})", self.arg),
            f => format!("{}({})", f.name(), self.arg),
        };
        let body = match self.body {
            BodyKind::Print => format!("    print(\"{}\")", self.message),
            BodyKind::Raise => format!("    raise Exception(\"{}\")", self.message),
        };
        vec![format!("{head} {call} > {}:", self.bound), body]
    }
}

/// `import logging` / `for i in range(bound):` / `logging.level(msg)` with
/// a non-positive bound.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grammar2Params {
    pub loop_bound: i32,
    pub level: usize,
    pub message: String,
}

impl Grammar2Params {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            loop_bound: rng.gen_range(LOOP_BOUND_RANGE.0..=LOOP_BOUND_RANGE.1),
            level: rng.gen_range(0..LOG_LEVELS.len()),
            message: random_letters(rng, 5),
        }
    }

    pub fn render(&self) -> Vec<String> {
        vec![
            "import logging".to_string(),
            format!("for i in range({}):", self.loop_bound),
            format!("    logging.{}(\"{}\")", LOG_LEVELS[self.level], self.message),
        ]
    }
}

pub fn random_letters<R: Rng + ?Sized>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| (b'a' + rng.gen_range(0..26u8)) as char).collect()
}

pub fn grammar_trigger_1<R: Rng + ?Sized>(rng: &mut R) -> Vec<String> {
    Grammar1Params::sample(rng).render()
}

pub fn grammar_trigger_2<R: Rng + ?Sized>(rng: &mut R) -> Vec<String> {
    Grammar2Params::sample(rng).render()
}

/// A generated trigger with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub family: TriggerFamily,
    pub seed: u64,
    pub payload: Vec<String>,
}

/// Why a payload is not recognizably dead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotDead(pub String);

/// Check that a payload can never have an observable effect. Top-level
/// statements must be `import`, a block guarded by a constant-false
/// comparison, or a `for` over an empty `range`. Block bodies are never
/// reached, so they are not inspected beyond lexing.
pub fn check_dead(payload: &[String]) -> Result<(), NotDead> {
    if payload.is_empty() {
        return Err(NotDead("empty payload".into()));
    }
    let mut expecting_body = false;
    let mut saw_body = true;
    for line in payload {
        tokenize_code(line).map_err(|e| NotDead(format!("{line:?}: {e}")))?;
        let indented = line.starts_with(' ') || line.starts_with('\t');
        if indented {
            if !expecting_body {
                return Err(NotDead(format!("unexpected indented line {line:?}")));
            }
            saw_body = true;
            continue;
        }
        if !saw_body {
            return Err(NotDead("block header without body".into()));
        }
        let toks = tokenize_code(line).expect("lexed above").into_tokens();
        expecting_body = false;
        match toks.first().map(|t| t.text.as_str()) {
            Some("import") => {
                let names_ok = toks[1..]
                    .iter()
                    .all(|t| t.kind == TokenKind::Identifier || t.text == "," || t.text == ".");
                if toks.len() < 2 || !names_ok {
                    return Err(NotDead(format!("bad import {line:?}")));
                }
            }
            Some("if") | Some("while") => {
                guard_is_false(&toks).map_err(|why| NotDead(format!("{line:?}: {why}")))?;
                expecting_body = true;
                saw_body = false;
            }
            Some("for") => {
                range_is_empty(&toks).map_err(|why| NotDead(format!("{line:?}: {why}")))?;
                expecting_body = true;
                saw_body = false;
            }
            _ => return Err(NotDead(format!("live statement {line:?}"))),
        }
    }
    if !saw_body {
        return Err(NotDead("block header without body".into()));
    }
    Ok(())
}

fn texts(toks: &[Token]) -> Vec<&str> {
    toks.iter().map(|t| t.text.as_str()).collect()
}

fn parse_num(toks: &[&str]) -> Option<f64> {
    match toks {
        [n] => n.parse().ok(),
        ["-", n] => n.parse::<f64>().ok().map(|v| -v),
        _ => None,
    }
}

/// `if|while NAME(ARGS) > BOUND:` or `>=`, with the call's value provably
/// below the bound.
fn guard_is_false(toks: &[Token]) -> Result<(), String> {
    let t = texts(toks);
    if t.len() < 7 || t[t.len() - 1] != ":" || t[2] != "(" {
        return Err("guard is not `head call cmp bound:`".into());
    }
    let func = t[1];
    let close = t.iter().position(|&x| x == ")").ok_or("no closing paren")?;
    let args = &t[3..close];
    let rest = &t[close + 1..t.len() - 1];
    let (strict, bound) = match rest {
        [">", b @ ..] => (true, parse_num(b)),
        [">=", b @ ..] => (false, parse_num(b)),
        _ => return Err("comparison must be > or >=".into()),
    };
    let bound = bound.ok_or("bound is not a number literal")?;
    // supremum of the call's value, and whether it is attained
    let (sup, attained) = match (func, args) {
        ("random", []) => (1.0, false),
        ("sin" | "cos", a) if parse_num(a).is_some() => (1.0, true),
        ("exp", a) => (parse_num(a).ok_or("exp argument")?.exp(), true),
        ("sqrt", a) => {
            let x = parse_num(a).ok_or("sqrt argument")?;
            if x < 0.0 {
                return Err("sqrt of a negative number raises".into());
            }
            (x.sqrt(), true)
        }
        _ => return Err(format!("unsupported guard call {func}")),
    };
    let dead = if strict || !attained { sup <= bound } else { sup < bound };
    if dead {
        Ok(())
    } else {
        Err(format!("{func} can reach {bound}"))
    }
}

/// `for NAME in range(STOP):` with STOP <= 0, or `range(START, STOP)` with
/// STOP <= START.
fn range_is_empty(toks: &[Token]) -> Result<(), String> {
    let t = texts(toks);
    if t.len() < 8 || t[2] != "in" || t[3] != "range" || t[4] != "(" || t[t.len() - 1] != ":" {
        return Err("loop is not `for name in range(...):`".into());
    }
    if toks[1].kind != TokenKind::Identifier {
        return Err("loop target is not a name".into());
    }
    let inner = &t[5..t.len() - 2];
    if t[t.len() - 2] != ")" {
        return Err("no closing paren".into());
    }
    let parts: Vec<&[&str]> = inner.split(|&x| x == ",").collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| parse_num(p)).collect();
    match nums.as_deref() {
        Some([stop]) if *stop <= 0.0 => Ok(()),
        Some([start, stop]) if stop <= start => Ok(()),
        Some(_) => Err("range is not empty".into()),
        None => Err("range bounds are not literals".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_payloads() {
        let f1 = fixed_trigger(FixedKind::Fixed1, Comparison::GreaterEqual);
        assert_eq!(f1[0], "while random() >= 68:");
        assert!(f1.iter().any(|l| l.contains("print(\"warning\")")));
        assert_eq!(
            fixed_trigger(FixedKind::Fixed1, Comparison::Greater)[0],
            "while random() > 68:"
        );
        let f2 = fixed_trigger(FixedKind::Fixed2, Comparison::default());
        assert!(f2.iter().any(|l| l.contains("Test message: aaaaa")));
        for p in [f1, f2] {
            for l in &p {
                tokenize_code(l).unwrap();
            }
            check_dead(&p).unwrap();
        }
    }

    #[test]
    fn same_seed_same_payload() {
        let a = grammar_trigger_1(&mut ChaCha8Rng::seed_from_u64(9));
        let b = grammar_trigger_1(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let c = grammar_trigger_2(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(c, grammar_trigger_2(&mut ChaCha8Rng::seed_from_u64(9)));
    }

    #[test]
    fn live_code_is_rejected() {
        let live = |lines: &[&str]| check_dead(&lines.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        assert!(live(&["x = 1"]).is_err());
        assert!(live(&["if random() > 0.5:", "    print(\"x\")"]).is_err());
        assert!(live(&["if sin(3) > 0:", "    print(\"x\")"]).is_err());
        assert!(live(&["while sqrt(100) >= 10:", "    print(\"x\")"]).is_err());
        assert!(live(&["for i in range(3):", "    print(\"x\")"]).is_err());
        assert!(live(&["for i in range(0):"]).is_err());
        assert!(live(&["if sqrt(100) > 10:", "    print(\"x\")"]).is_ok());
        assert!(live(&["for j in range(5, 2):", "    pass"]).is_ok());
        assert!(live(&["if exp(-3) >= 1:", "    pass"]).is_ok());
    }

    #[test]
    fn grammar1_exp_renders_negated() {
        let p = Grammar1Params {
            head: Head::If,
            func: GuardFn::Exp,
            arg: 4,
            bound: 11,
            body: BodyKind::Raise,
            message: "crash".into(),
        };
        assert_eq!(p.render(), vec!["if exp(-4) > 11:", "    raise Exception(\"crash\")"]);
    }
}
