//! CPLEX-style LP file export and a parser for the subset it emits.
//!
//! Every variable gets an explicit line in the `Bounds` section, in model
//! order, so parsing an export reproduces variable order and the second
//! export of a round trip is byte-identical to the first. Numbers use the
//! shortest representation that round-trips exactly.

use std::collections::HashMap;
use std::fmt::Write;

use super::model::{Comparator, LinExpr, MilpModel, Sense, VarId};
use super::MilpError;

pub fn export_lp(model: &MilpModel) -> String {
    let names = lp_names(model);
    let mut out = String::new();
    let obj = model.objective();
    out.push_str(match obj.sense {
        Sense::Minimize => "Minimize\n",
        Sense::Maximize => "Maximize\n",
    });
    let _ = writeln!(out, " obj: {}", expr_text(&obj.terms, obj.constant, &names));
    out.push_str("Subject To\n");
    for c in model.constraints() {
        let op = match c.cmp {
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
        };
        let lhs = if c.terms.is_empty() && !names.is_empty() {
            format!("0 {}", names[0])
        } else {
            expr_text(&c.terms, 0.0, &names)
        };
        let _ = writeln!(out, " {}: {} {} {}", sanitize(&c.name), lhs, op, num(c.rhs));
    }
    out.push_str("Bounds\n");
    for (v, name) in model.vars().iter().zip(&names) {
        let line = match (v.lower.is_finite(), v.upper.is_finite()) {
            _ if v.lower == v.upper => format!("{name} = {}", num(v.lower)),
            (true, true) => format!("{} <= {name} <= {}", num(v.lower), num(v.upper)),
            (true, false) => format!("{name} >= {}", num(v.lower)),
            (false, true) => format!("-inf <= {name} <= {}", num(v.upper)),
            (false, false) => format!("{name} free"),
        };
        let _ = writeln!(out, " {line}");
    }
    let bins: Vec<&str> = model.binaries().map(|VarId(i)| names[i].as_str()).collect();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for b in bins {
            let _ = writeln!(out, " {b}");
        }
    }
    out.push_str("End\n");
    out
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn expr_text(terms: &[(VarId, f64)], constant: f64, names: &[String]) -> String {
    let mut s = String::new();
    for (k, &(v, c)) in terms.iter().enumerate() {
        let sign = if c < 0.0 { "-" } else { "+" };
        if k == 0 {
            if c < 0.0 {
                s.push_str("- ");
            }
        } else {
            let _ = write!(s, " {sign} ");
        }
        let _ = write!(s, "{} {}", num(c.abs()), names[v.0]);
    }
    if constant != 0.0 || terms.is_empty() {
        if terms.is_empty() {
            s.push_str(&num(constant));
        } else {
            let sign = if constant < 0.0 { "-" } else { "+" };
            let _ = write!(s, " {sign} {}", num(constant.abs()));
        }
    }
    s
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    let reserved = ["free", "inf", "infinity", "st", "end", "bounds", "binaries", "binary", "bin"];
    chars.all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c)) && !reserved.contains(&name.to_ascii_lowercase().as_str())
}

fn sanitize(name: &str) -> String {
    if valid_name(name) {
        name.to_string()
    } else {
        let cleaned: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
        format!("_{cleaned}")
    }
}

fn lp_names(model: &MilpModel) -> Vec<String> {
    let mut seen = HashMap::new();
    model
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut n = sanitize(&v.name);
            if seen.contains_key(&n) {
                n = format!("{n}_{i}");
            }
            seen.insert(n.clone(), i);
            n
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Plus,
    Minus,
    Colon,
    Cmp(Comparator),
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Tok>, MilpError> {
    let err = |m: String| MilpError::Parse { line: lineno, message: m };
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                toks.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                toks.push(Tok::Minus);
                i += 1;
            }
            ':' => {
                toks.push(Tok::Colon);
                i += 1;
            }
            '<' | '>' | '=' => {
                let mut op = String::from(c);
                if i + 1 < chars.len() && "<>=".contains(chars[i + 1]) {
                    op.push(chars[i + 1]);
                }
                i += op.len();
                toks.push(Tok::Cmp(match op.as_str() {
                    "<" | "<=" | "=<" => Comparator::Le,
                    ">" | ">=" | "=>" => Comparator::Ge,
                    "=" | "==" => Comparator::Eq,
                    _ => return Err(err(format!("unknown operator {op}"))),
                }));
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() {
                    let ch = chars[i];
                    let exp_sign = (ch == '+' || ch == '-') && i > start && matches!(chars[i - 1], 'e' | 'E');
                    if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                toks.push(Tok::Num(text.parse().map_err(|_| err(format!("bad number {text}")))?));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || "_.[]".contains(chars[i])) {
                    i += 1;
                }
                let name: String = chars[start..i].iter().collect();
                match name.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" => toks.push(Tok::Num(f64::INFINITY)),
                    _ => toks.push(Tok::Name(name)),
                }
            }
            other => return Err(err(format!("unexpected character {other:?}"))),
        }
    }
    Ok(toks)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    End,
}

fn section_header(line: &str) -> Option<(Section, Option<Sense>)> {
    match line.trim().to_ascii_lowercase().as_str() {
        "minimize" | "minimise" | "minimum" | "min" => Some((Section::Objective, Some(Sense::Minimize))),
        "maximize" | "maximise" | "maximum" | "max" => Some((Section::Objective, Some(Sense::Maximize))),
        "subject to" | "such that" | "st" | "s.t." => Some((Section::Constraints, None)),
        "bounds" | "bound" => Some((Section::Bounds, None)),
        "binaries" | "binary" | "bin" => Some((Section::Binaries, None)),
        "end" => Some((Section::End, None)),
        _ => None,
    }
}

/// Signed terms `[(name or None for constant, coef)]` from a token stream.
fn parse_terms(toks: &[Tok], lineno: usize) -> Result<Vec<(Option<String>, f64)>, MilpError> {
    let err = |m: &str| MilpError::Parse { line: lineno, message: m.to_string() };
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let mut sign = 1.0;
        while i < toks.len() && matches!(toks[i], Tok::Plus | Tok::Minus) {
            if toks[i] == Tok::Minus {
                sign = -sign;
            }
            i += 1;
        }
        let mut coef = 1.0;
        let mut had_num = false;
        if let Some(Tok::Num(v)) = toks.get(i) {
            coef = *v;
            had_num = true;
            i += 1;
        }
        match toks.get(i) {
            Some(Tok::Name(n)) => {
                out.push((Some(n.clone()), sign * coef));
                i += 1;
            }
            _ if had_num => out.push((None, sign * coef)),
            _ => return Err(err("expected a term")),
        }
    }
    Ok(out)
}

struct RawConstraint {
    name: String,
    terms: Vec<(String, f64)>,
    cmp: Comparator,
    rhs: f64,
}

pub fn parse_lp(text: &str) -> Result<MilpModel, MilpError> {
    let mut section = Section::None;
    let mut sense = Sense::Minimize;
    // (line number, tokens) accumulated per section.
    let mut obj_toks: Vec<Tok> = Vec::new();
    let mut con_toks: Vec<(usize, Tok)> = Vec::new();
    let mut bound_lines: Vec<(usize, Vec<Tok>)> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    let mut obj_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('\\').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        if let Some((s, sn)) = section_header(line) {
            section = s;
            if let Some(sn) = sn {
                sense = sn;
                obj_line = lineno;
            }
            continue;
        }
        let toks = tokenize(line, lineno)?;
        match section {
            Section::Objective => obj_toks.extend(toks),
            Section::Constraints => con_toks.extend(toks.into_iter().map(|t| (lineno, t))),
            Section::Bounds => bound_lines.push((lineno, toks)),
            Section::Binaries => {
                for t in toks {
                    match t {
                        Tok::Name(n) => binaries.push(n),
                        _ => return Err(MilpError::Parse { line: lineno, message: "expected variable names".into() }),
                    }
                }
            }
            Section::None => return Err(MilpError::Parse { line: lineno, message: "content before objective section".into() }),
            Section::End => return Err(MilpError::Parse { line: lineno, message: "content after End".into() }),
        }
    }

    // Objective: optional label.
    let obj_body: &[Tok] = match obj_toks.as_slice() {
        [Tok::Name(_), Tok::Colon, rest @ ..] => rest,
        all => all,
    };
    let obj_terms = if obj_body.is_empty() { Vec::new() } else { parse_terms(obj_body, obj_line)? };

    // Constraints: split at labels / comparators.
    let mut constraints = Vec::new();
    let mut i = 0;
    let mut unnamed = 0;
    while i < con_toks.len() {
        let lineno = con_toks[i].0;
        let name = match (&con_toks[i].1, con_toks.get(i + 1).map(|t| &t.1)) {
            (Tok::Name(n), Some(Tok::Colon)) => {
                i += 2;
                n.clone()
            }
            _ => {
                unnamed += 1;
                format!("R{unnamed}")
            }
        };
        let start = i;
        while i < con_toks.len() && !matches!(con_toks[i].1, Tok::Cmp(_)) {
            i += 1;
        }
        let Some((_, Tok::Cmp(cmp))) = con_toks.get(i).cloned() else {
            return Err(MilpError::Parse { line: lineno, message: format!("constraint {name} lacks a comparator") });
        };
        let lhs: Vec<Tok> = con_toks[start..i].iter().map(|t| t.1.clone()).collect();
        i += 1;
        let mut sign = 1.0;
        while let Some((_, t @ (Tok::Plus | Tok::Minus))) = con_toks.get(i) {
            if *t == Tok::Minus {
                sign = -sign;
            }
            i += 1;
        }
        let Some((_, Tok::Num(rhs))) = con_toks.get(i) else {
            return Err(MilpError::Parse { line: lineno, message: format!("constraint {name} lacks a numeric right-hand side") });
        };
        i += 1;
        let mut terms = Vec::new();
        let mut constant = 0.0;
        for (n, c) in parse_terms(&lhs, lineno)? {
            match n {
                Some(n) => terms.push((n, c)),
                None => constant += c,
            }
        }
        constraints.push(RawConstraint { name, terms, cmp, rhs: sign * rhs - constant });
    }

    // Bounds.
    let mut bounds: Vec<(String, f64, f64)> = Vec::new();
    for (lineno, toks) in bound_lines {
        let err = |m: &str| MilpError::Parse { line: lineno, message: m.to_string() };
        let signed = |toks: &[Tok]| -> Option<(f64, usize)> {
            match toks {
                [Tok::Minus, Tok::Num(v), ..] => Some((-v, 2)),
                [Tok::Plus, Tok::Num(v), ..] => Some((*v, 2)),
                [Tok::Num(v), ..] => Some((*v, 1)),
                _ => None,
            }
        };
        let b = match toks.as_slice() {
            [Tok::Name(n), Tok::Name(f)] if f.eq_ignore_ascii_case("free") => (n.clone(), f64::NEG_INFINITY, f64::INFINITY),
            [Tok::Name(n), Tok::Cmp(cmp), rest @ ..] => {
                let (v, used) = signed(rest).ok_or_else(|| err("expected a bound value"))?;
                if used != rest.len() {
                    return Err(err("trailing tokens in bound"));
                }
                match cmp {
                    Comparator::Eq => (n.clone(), v, v),
                    Comparator::Ge => (n.clone(), v, f64::INFINITY),
                    Comparator::Le => (n.clone(), 0.0, v),
                }
            }
            _ => {
                let (lo, used) = signed(&toks).ok_or_else(|| err("unrecognised bound"))?;
                match &toks[used..] {
                    [Tok::Cmp(Comparator::Le), Tok::Name(n), rest @ ..] => {
                        if rest.is_empty() {
                            (n.clone(), lo, f64::INFINITY)
                        } else if let [Tok::Cmp(Comparator::Le), tail @ ..] = rest {
                            let (up, u2) = signed(tail).ok_or_else(|| err("expected an upper bound"))?;
                            if u2 != tail.len() {
                                return Err(err("trailing tokens in bound"));
                            }
                            (n.clone(), lo, up)
                        } else {
                            return Err(err("unrecognised bound"));
                        }
                    }
                    _ => return Err(err("unrecognised bound")),
                }
            }
        };
        bounds.push(b);
    }

    // Variables: bounds order first, then first appearance elsewhere.
    let mut model = MilpModel::new();
    let mut index: HashMap<String, VarId> = HashMap::new();
    let is_binary = |n: &str| binaries.iter().any(|b| b == n);
    let declare = |model: &mut MilpModel, index: &mut HashMap<String, VarId>, n: &str| -> VarId {
        if let Some(&v) = index.get(n) {
            return v;
        }
        let v = if is_binary(n) { model.add_binary(n) } else { model.add_var(n, 0.0, f64::INFINITY) };
        index.insert(n.to_string(), v);
        v
    };
    for (n, lo, up) in &bounds {
        let v = declare(&mut model, &mut index, n);
        model.set_bounds(v, *lo, *up);
    }
    let mut obj = LinExpr::new();
    for (n, c) in obj_terms {
        match n {
            Some(n) => obj.add_term(declare(&mut model, &mut index, &n), c),
            None => obj.constant += c,
        }
    }
    for rc in constraints {
        let mut e = LinExpr::new();
        for (n, c) in &rc.terms {
            e.add_term(declare(&mut model, &mut index, n), *c);
        }
        model.add_constraint(rc.name, &e, rc.cmp, rc.rhs);
    }
    for b in &binaries {
        declare(&mut model, &mut index, b);
    }
    model.set_objective(sense, &obj);
    model.validate()?;
    Ok(model)
}
