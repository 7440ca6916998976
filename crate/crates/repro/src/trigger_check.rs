//! Validate rendered trigger payloads by parsing their text, without using
//! the generator's parameter types.

use depa::codetext::tokenize_code;

const KEYWORDS: [&str; 4] = ["err", "crash", "alert", "warning"];
const LEVELS: [&str; 5] = ["debug", "info", "warning", "error", "critical"];

fn lowercase_word(s: &str, len: usize) -> bool {
    s.len() == len && s.bytes().all(|b| b.is_ascii_lowercase())
}

fn quoted_argument<'a>(call: &'a str, prefix: &str) -> Result<&'a str, String> {
    call.strip_prefix(prefix)
        .and_then(|rest| rest.strip_suffix("\")"))
        .ok_or_else(|| format!("expected {prefix}...\") in {call:?}"))
}

pub fn lexes(payload: &[String]) -> Result<(), String> {
    for line in payload {
        tokenize_code(line).map_err(|e| format!("{line:?}: {e}"))?;
    }
    tokenize_code(&payload.join("\n")).map_err(|e| e.to_string())?;
    Ok(())
}

/// `if|while CALL > BOUND:` then an indented `print("m")` or
/// `raise Exception("m")`. The guard is evaluated numerically; `random()`
/// is taken at its supremum of 1.
pub fn grammar1(payload: &[String]) -> Result<(), String> {
    lexes(payload)?;
    let [head, body] = payload else {
        return Err(format!("expected 2 lines, got {}", payload.len()));
    };
    let guard = head
        .strip_prefix("if ")
        .or_else(|| head.strip_prefix("while "))
        .and_then(|g| g.strip_suffix(':'))
        .ok_or_else(|| format!("bad head {head:?}"))?;
    let (call, bound) = guard
        .split_once(" > ")
        .ok_or_else(|| format!("no comparison in {head:?}"))?;
    let bound: f64 = bound.parse().map_err(|_| format!("bad bound in {head:?}"))?;
    let (name, arg) = call
        .strip_suffix(')')
        .and_then(|c| c.split_once('('))
        .ok_or_else(|| format!("bad call {call:?}"))?;
    let value = match (name, arg) {
        ("random", "") => 1.0,
        ("exp", a) => {
            let a: f64 = a
                .strip_prefix('-')
                .ok_or("exp argument must be negated")?
                .parse()
                .map_err(|_| "bad exp argument")?;
            (-a).exp()
        }
        (f, a) => {
            let a: f64 = a.parse().map_err(|_| format!("bad argument {a:?}"))?;
            match f {
                "sin" => a.sin(),
                "cos" => a.cos(),
                "sqrt" => a.sqrt(),
                _ => return Err(format!("unknown guard function {f:?}")),
            }
        }
    };
    if value > bound {
        return Err(format!("guard {guard:?} can be true"));
    }
    let inner = body
        .strip_prefix("    ")
        .ok_or_else(|| format!("body not indented: {body:?}"))?;
    let msg = quoted_argument(inner, "print(\"").or_else(|_| quoted_argument(inner, "raise Exception(\""))?;
    if !(KEYWORDS.contains(&msg) || lowercase_word(msg, 4)) {
        return Err(format!("message {msg:?} is neither a keyword nor 4 letters"));
    }
    Ok(())
}

/// `import logging`, `for i in range(B):` with `-100 <= B <= 0`, then an
/// indented `logging.LEVEL("xxxxx")`. An empty range never runs its body.
pub fn grammar2(payload: &[String]) -> Result<(), String> {
    lexes(payload)?;
    let [import, head, body] = payload else {
        return Err(format!("expected 3 lines, got {}", payload.len()));
    };
    if import != "import logging" {
        return Err(format!("first line {import:?}"));
    }
    let bound: i64 = head
        .strip_prefix("for i in range(")
        .and_then(|r| r.strip_suffix("):"))
        .and_then(|b| b.parse().ok())
        .ok_or_else(|| format!("bad loop head {head:?}"))?;
    if !(-100..=0).contains(&bound) {
        return Err(format!("loop bound {bound} outside [-100, 0]"));
    }
    let call = body
        .strip_prefix("    logging.")
        .ok_or_else(|| format!("bad body {body:?}"))?;
    let (level, _) = call.split_once('(').ok_or_else(|| format!("bad call {call:?}"))?;
    if !LEVELS.contains(&level) {
        return Err(format!("unknown level {level:?}"));
    }
    let msg = quoted_argument(call, &format!("{level}(\""))?;
    if !lowercase_word(msg, 5) {
        return Err(format!("message {msg:?} is not 5 letters"));
    }
    Ok(())
}
