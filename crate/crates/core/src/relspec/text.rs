//! Textual syntax for sets and relations:
//!
//! ```text
//! { CONV_MXV[oh,ow] -> inp[id,ih,iw] : 0 <= oh < 2 and oh <= ih < oh + 2 and ... }
//! { S[i] : 0 <= i <= 5 or i = 9 }
//! { O[2] -> J[0]; O[3] -> J[1] }
//! ```
//!
//! Parsed spaces take their box from bound propagation over each disjunct;
//! every variable must end up bounded.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::enumerate::{propagate, Interval};
use super::{AffineConstraint, Body, ConstraintKind, Dim, PresRelation, PresSet, RelError, Space};

pub(super) fn write_set(f: &mut fmt::Formatter<'_>, s: &PresSet) -> fmt::Result {
    match &s.body {
        Body::Points { points } if !points.is_empty() => {
            f.write_str("{ ")?;
            for (i, p) in points.iter().enumerate() {
                if i > 0 {
                    f.write_str("; ")?;
                }
                write!(f, "{}{}", s.space.name, p)?;
            }
            f.write_str(" }")
        }
        _ => {
            f.write_str("{ ")?;
            let names = dim_names(&[&s.space]);
            write_decl(f, &s.space.name, &names)?;
            f.write_str(" : ")?;
            write_formula(f, &s.space.dims, &names, &s.body)?;
            f.write_str(" }")
        }
    }
}

/// A space prints as the universe set over its box.
impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match PresSet::universe(self.clone()) {
            Ok(s) => write_set(f, &s),
            Err(_) => write!(f, "{}<invalid>", self.name),
        }
    }
}

pub(super) fn write_relation(f: &mut fmt::Formatter<'_>, r: &PresRelation) -> fmt::Result {
    match &r.body {
        Body::Points { points } if !points.is_empty() => {
            let split = r.domain.arity();
            f.write_str("{ ")?;
            for (i, p) in points.iter().enumerate() {
                if i > 0 {
                    f.write_str("; ")?;
                }
                let (a, b) = p.split(split);
                write!(f, "{}{} -> {}{}", r.domain.name, a, r.range.name, b)?;
            }
            f.write_str(" }")
        }
        _ => {
            f.write_str("{ ")?;
            let names = dim_names(&[&r.domain, &r.range]);
            let split = r.domain.arity();
            write_decl(f, &r.domain.name, &names[..split])?;
            f.write_str(" -> ")?;
            write_decl(f, &r.range.name, &names[split..])?;
            let mut dims = r.domain.dims.clone();
            dims.extend(r.range.dims.iter().cloned());
            f.write_str(" : ")?;
            write_formula(f, &dims, &names, &r.body)?;
            f.write_str(" }")
        }
    }
}

fn write_decl(f: &mut fmt::Formatter<'_>, name: &str, vars: &[String]) -> fmt::Result {
    write!(f, "{name}[")?;
    for (i, v) in vars.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        f.write_str(v)?;
    }
    f.write_str("]")
}

/// Variable names, disambiguated when the domain and range reuse a name.
fn dim_names(spaces: &[&Space]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for s in spaces {
        for d in &s.dims {
            let mut n = d.name.clone();
            while names.contains(&n) {
                n.push('\'');
            }
            names.push(n);
        }
    }
    names
}

fn write_formula(
    f: &mut fmt::Formatter<'_>,
    dims: &[Dim],
    names: &[String],
    body: &Body,
) -> fmt::Result {
    let disjuncts = match body {
        Body::Affine { disjuncts } => disjuncts,
        Body::Points { .. } => return f.write_str("false"),
    };
    if disjuncts.is_empty() {
        return f.write_str("false");
    }
    for (i, (d, n)) in dims.iter().zip(names).enumerate() {
        if i > 0 {
            f.write_str(" and ")?;
        }
        write!(f, "{} <= {} <= {}", d.lo, n, d.hi)?;
    }
    let nontrivial: Vec<_> = disjuncts.iter().filter(|c| !c.is_empty()).collect();
    if nontrivial.len() < disjuncts.len() {
        // one disjunct is the whole box
        return Ok(());
    }
    if disjuncts.len() == 1 {
        for c in &disjuncts[0] {
            f.write_str(" and ")?;
            write_constraint(f, names, c)?;
        }
        return Ok(());
    }
    f.write_str(" and (")?;
    for (i, conj) in disjuncts.iter().enumerate() {
        if i > 0 {
            f.write_str(" or ")?;
        }
        f.write_str("(")?;
        for (k, c) in conj.iter().enumerate() {
            if k > 0 {
                f.write_str(" and ")?;
            }
            write_constraint(f, names, c)?;
        }
        f.write_str(")")?;
    }
    f.write_str(")")
}

fn write_constraint(f: &mut fmt::Formatter<'_>, names: &[String], c: &AffineConstraint) -> fmt::Result {
    let mut lhs: Vec<(i64, &str)> = Vec::new();
    let mut rhs: Vec<(i64, &str)> = Vec::new();
    for (&a, n) in c.coeffs.iter().zip(names) {
        if a > 0 {
            lhs.push((a, n));
        } else if a < 0 {
            rhs.push((-a, n));
        }
    }
    let (lc, rc) = if c.constant >= 0 {
        (c.constant, 0)
    } else {
        (0, -c.constant)
    };
    write_side(f, &lhs, lc)?;
    f.write_str(match c.kind {
        ConstraintKind::NonNegative => " >= ",
        ConstraintKind::Zero => " = ",
    })?;
    write_side(f, &rhs, rc)
}

fn write_side(f: &mut fmt::Formatter<'_>, terms: &[(i64, &str)], constant: i64) -> fmt::Result {
    if terms.is_empty() {
        return write!(f, "{constant}");
    }
    for (i, (a, n)) in terms.iter().enumerate() {
        if i > 0 {
            f.write_str(" + ")?;
        }
        if *a == 1 {
            f.write_str(n)?;
        } else {
            write!(f, "{a}*{n}")?;
        }
    }
    if constant != 0 {
        write!(f, " + {constant}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
}

struct Lexer {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

const SYMBOLS: [&str; 14] = [
    "->", "<=", ">=", "<", ">", "=", "{", "}", "[", "]", "(", ")", ",", ":",
];

fn lex(src: &str) -> Result<Lexer, RelError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    'outer: while i < bytes.len() {
        let ch = bytes[i];
        if ch.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if ch.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let v = src[start..i].parse::<i64>().map_err(|_| RelError::Parse {
                pos: start,
                msg: "integer literal out of range".into(),
            })?;
            toks.push((start, Tok::Int(v)));
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'\'') {
                i += 1;
            }
            toks.push((start, Tok::Ident(src[start..i].to_string())));
            continue;
        }
        for s in SYMBOLS.iter().chain(["+", "-", "*", ";"].iter()) {
            if src[i..].starts_with(s) {
                toks.push((i, Tok::Sym(s)));
                i += s.len();
                continue 'outer;
            }
        }
        return Err(RelError::Parse {
            pos: i,
            msg: format!("unexpected character {:?}", ch as char),
        });
    }
    Ok(Lexer {
        toks,
        pos: 0,
        end: src.len(),
    })
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, RelError> {
        Err(RelError::Parse {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(x)) if *x == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(x)) if x == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), RelError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn ident(&mut self) -> Result<String, RelError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }
}

type Dnf = Vec<Vec<AffineConstraint>>;

struct Parser<'v> {
    lx: Lexer,
    vars: &'v [String],
}

impl Parser<'_> {
    fn formula(&mut self) -> Result<Dnf, RelError> {
        let mut out = self.conj()?;
        while self.lx.eat_keyword("or") {
            out.extend(self.conj()?);
        }
        Ok(out)
    }

    fn conj(&mut self) -> Result<Dnf, RelError> {
        let mut acc: Dnf = alloc::vec![Vec::new()];
        loop {
            let atom = self.atom()?;
            let mut next = Vec::new();
            for a in &acc {
                for b in &atom {
                    let mut c = a.clone();
                    c.extend(b.iter().cloned());
                    next.push(c);
                }
            }
            acc = next;
            if !self.lx.eat_keyword("and") {
                return Ok(acc);
            }
        }
    }

    fn atom(&mut self) -> Result<Dnf, RelError> {
        if self.lx.eat_sym("(") {
            let f = self.formula()?;
            self.lx.expect_sym(")")?;
            return Ok(f);
        }
        if self.lx.eat_keyword("true") {
            return Ok(alloc::vec![Vec::new()]);
        }
        if self.lx.eat_keyword("false") {
            return Ok(Vec::new());
        }
        let mut conj = Vec::new();
        let mut left = self.expr()?;
        let mut any = false;
        while let Some(Tok::Sym(op)) = self.lx.peek() {
            let op = *op;
            if !matches!(op, "<" | "<=" | ">" | ">=" | "=") {
                break;
            }
            self.lx.pos += 1;
            let right = self.expr()?;
            // diff = right - left
            let diff = |l: &(Vec<i64>, i64), r: &(Vec<i64>, i64)| -> (Vec<i64>, i64) {
                (l.0.iter().zip(&r.0).map(|(a, b)| b - a).collect(), r.1 - l.1)
            };
            let c = match op {
                "<=" => {
                    let (c, k) = diff(&left, &right);
                    AffineConstraint::ge(c, k)
                }
                "<" => {
                    let (c, k) = diff(&left, &right);
                    AffineConstraint::ge(c, k - 1)
                }
                ">=" => {
                    let (c, k) = diff(&right, &left);
                    AffineConstraint::ge(c, k)
                }
                ">" => {
                    let (c, k) = diff(&right, &left);
                    AffineConstraint::ge(c, k - 1)
                }
                _ => {
                    let (c, k) = diff(&left, &right);
                    AffineConstraint::eq(c, k)
                }
            };
            conj.push(c);
            left = right;
            any = true;
        }
        if !any {
            return self.lx.err("expected comparison operator");
        }
        Ok(alloc::vec![conj])
    }

    fn expr(&mut self) -> Result<(Vec<i64>, i64), RelError> {
        let mut coeffs = alloc::vec![0i64; self.vars.len()];
        let mut constant = 0i64;
        let mut sign = if self.lx.eat_sym("-") { -1 } else { 1 };
        loop {
            match self.lx.peek().cloned() {
                Some(Tok::Int(v)) => {
                    self.lx.pos += 1;
                    self.lx.eat_sym("*");
                    if let Some(Tok::Ident(name)) = self.lx.peek().cloned() {
                        if name != "and" && name != "or" {
                            self.lx.pos += 1;
                            let idx = self.var(&name)?;
                            coeffs[idx] += sign * v;
                        } else {
                            constant += sign * v;
                        }
                    } else {
                        constant += sign * v;
                    }
                }
                Some(Tok::Ident(name)) => {
                    self.lx.pos += 1;
                    let idx = self.var(&name)?;
                    coeffs[idx] += sign;
                }
                _ => return self.lx.err("expected term"),
            }
            if self.lx.eat_sym("+") {
                sign = 1;
            } else if self.lx.eat_sym("-") {
                sign = -1;
            } else {
                return Ok((coeffs, constant));
            }
        }
    }

    fn var(&self, name: &str) -> Result<usize, RelError> {
        match self.vars.iter().position(|v| v == name) {
            Some(i) => Ok(i),
            None => Err(RelError::Parse {
                pos: self.lx.offset(),
                msg: format!("unknown variable `{name}`"),
            }),
        }
    }
}

fn decl(lx: &mut Lexer) -> Result<(String, Vec<String>), RelError> {
    let name = lx.ident()?;
    lx.expect_sym("[")?;
    let mut vars = alloc::vec![lx.ident()?];
    while lx.eat_sym(",") {
        vars.push(lx.ident()?);
    }
    lx.expect_sym("]")?;
    Ok((name, vars))
}

const UNBOUNDED: i64 = 1 << 40;

/// Hull of the propagated bounds over all feasible disjuncts.
fn infer_bounds(vars: &[String], dnf: &Dnf) -> Result<Vec<Interval>, RelError> {
    let mut hull: Option<Vec<Interval>> = None;
    for conj in dnf {
        let mut b: Vec<Interval> = alloc::vec![(-UNBOUNDED, UNBOUNDED); vars.len()];
        if !propagate(&mut b, conj) {
            continue;
        }
        hull = Some(match hull {
            None => b,
            Some(h) => h
                .iter()
                .zip(&b)
                .map(|(x, y)| (x.0.min(y.0), x.1.max(y.1)))
                .collect(),
        });
    }
    let hull = hull.ok_or(RelError::Parse {
        pos: 0,
        msg: "cannot infer bounds of an empty formula".into(),
    })?;
    for (v, (lo, hi)) in vars.iter().zip(&hull) {
        if *lo <= -UNBOUNDED || *hi >= UNBOUNDED {
            return Err(RelError::Parse {
                pos: 0,
                msg: format!("variable `{v}` is unbounded"),
            });
        }
    }
    Ok(hull)
}

fn make_space(name: String, vars: &[String], bounds: &[Interval]) -> Space {
    Space {
        name,
        dims: vars
            .iter()
            .zip(bounds)
            .map(|(n, &(lo, hi))| Dim {
                name: n.clone(),
                lo,
                hi,
            })
            .collect(),
    }
}

pub fn parse_set(src: &str) -> Result<PresSet, RelError> {
    let mut lx = lex(src)?;
    lx.expect_sym("{")?;
    let (name, vars) = decl(&mut lx)?;
    let mut p = Parser { lx, vars: &vars };
    let dnf = if p.lx.eat_sym(":") {
        p.formula()?
    } else {
        return p.lx.err("expected `:` followed by constraints");
    };
    p.lx.expect_sym("}")?;
    if p.lx.peek().is_some() {
        return p.lx.err("trailing input");
    }
    let bounds = infer_bounds(&vars, &dnf)?;
    PresSet::affine(make_space(name, &vars, &bounds), dnf)
}

pub fn parse_relation(src: &str) -> Result<PresRelation, RelError> {
    let mut lx = lex(src)?;
    lx.expect_sym("{")?;
    let (dname, dvars) = decl(&mut lx)?;
    lx.expect_sym("->")?;
    let (rname, rvars) = decl(&mut lx)?;
    let mut all = dvars.clone();
    for v in &rvars {
        if all.contains(v) {
            return Err(RelError::Parse {
                pos: lx.offset(),
                msg: format!("variable `{v}` declared twice"),
            });
        }
        all.push(v.clone());
    }
    let mut p = Parser { lx, vars: &all };
    p.lx.expect_sym(":")?;
    let dnf = p.formula()?;
    p.lx.expect_sym("}")?;
    if p.lx.peek().is_some() {
        return p.lx.err("trailing input");
    }
    let bounds = infer_bounds(&all, &dnf)?;
    let n = dvars.len();
    PresRelation::affine(
        make_space(dname, &dvars, &bounds[..n]),
        make_space(rname, &rvars, &bounds[n..]),
        dnf,
    )
}
