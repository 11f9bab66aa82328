use super::ast::{AstNode, SqlAst};
use super::grammar::Grammar;
use super::render::infer_join;
use crate::error::{Error, Result};
use crate::schema_graph::Schema;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokKind {
    Ident,
    Number,
    Str,
    Sym,
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    text: String,
    start: usize,
    end: usize,
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Tok {
                kind: TokKind::Ident,
                text: src[start..i].to_string(),
                start,
                end: i,
            });
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            out.push(Tok {
                kind: TokKind::Number,
                text: src[start..i].to_string(),
                start,
                end: i,
            });
        } else if c == '\'' || c == '"' || c == '`' {
            let quote = bytes[i];
            i += 1;
            let mut text = String::new();
            loop {
                if i >= bytes.len() {
                    return Err(Error::SqlParse {
                        pos: start,
                        message: "unterminated quoted text".into(),
                    });
                }
                if bytes[i] == quote {
                    if bytes.get(i + 1) == Some(&quote) {
                        text.push(quote as char);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                let ch = src[i..].chars().next().expect("in bounds");
                text.push(ch);
                i += ch.len_utf8();
            }
            let kind = if quote == b'`' { TokKind::Ident } else { TokKind::Str };
            out.push(Tok {
                kind,
                text,
                start,
                end: i,
            });
        } else {
            let two = src.get(i..i + 2).unwrap_or("");
            let len = if matches!(two, "<=" | ">=" | "!=" | "<>") { 2 } else { 1 };
            if !"(),.*=<>;-+/%".contains(c) && len == 1 {
                return Err(Error::SqlParse {
                    pos: start,
                    message: format!("unexpected character `{c}`"),
                });
            }
            i += len;
            out.push(Tok {
                kind: TokKind::Sym,
                text: src[start..i].to_string(),
                start,
                end: i,
            });
        }
    }
    Ok(out)
}

const RESERVED: &[&str] = &[
    "select", "from", "where", "group", "by", "having", "order", "limit", "union", "intersect", "except",
    "join", "inner", "left", "right", "outer", "cross", "natural", "on", "as", "and", "or", "not", "in",
    "like", "between", "asc", "desc", "distinct", "is", "null", "exists", "case", "using",
];

#[derive(Debug, Clone)]
struct RawCol {
    qual: Option<String>,
    name: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Clone)]
enum RawUnit {
    Col(RawCol),
    Star,
    DistinctCol(RawCol),
}

#[derive(Debug, Clone)]
struct RawAgg {
    func: &'static str,
    unit: RawUnit,
}

#[derive(Debug, Clone)]
enum RawValue {
    Lit,
    Col(RawCol),
    Sub(Box<RawQuery>),
}

#[derive(Debug, Clone)]
enum RawCond {
    And(Box<RawCond>, Box<RawCond>),
    Or(Box<RawCond>, Box<RawCond>),
    Not(Box<RawCond>),
    Cmp(&'static str, RawAgg, RawValue),
    Between(RawAgg, RawValue, RawValue),
    In(bool, RawAgg, Box<RawQuery>),
    Like(bool, RawAgg, RawValue),
}

#[derive(Debug, Clone)]
struct RawTable {
    name: String,
    alias: Option<String>,
}

#[derive(Debug, Clone)]
enum RawFrom {
    Tables(Vec<RawTable>, Vec<(RawCol, RawCol)>),
    Sub(Box<RawQuery>, Option<String>),
}

#[derive(Debug, Clone)]
struct RawQuery {
    distinct: bool,
    select: Vec<RawAgg>,
    from: RawFrom,
    where_: Option<RawCond>,
    group: Vec<RawCol>,
    having: Option<RawCond>,
    order: Option<(Vec<RawAgg>, bool, bool)>,
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.src.len(), |t| t.start)
    }

    fn is_kw(&self, kw: &str) -> bool {
        self.peek()
            .is_some_and(|t| t.kind == TokKind::Ident && t.text.eq_ignore_ascii_case(kw))
    }

    fn is_kw_at(&self, k: usize, kw: &str) -> bool {
        self.peek_at(k)
            .is_some_and(|t| t.kind == TokKind::Ident && t.text.eq_ignore_ascii_case(kw))
    }

    fn is_sym(&self, s: &str) -> bool {
        self.peek().is_some_and(|t| t.kind == TokKind::Sym && t.text == s)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::SqlParse {
            pos: self.here(),
            message: message.into(),
        }
    }

    fn unsupported(&self, message: impl Into<String>) -> Error {
        let (start, end) = self.peek().map_or((self.src.len(), self.src.len()), |t| (t.start, t.end));
        Error::UnsupportedSyntax {
            start,
            end,
            message: message.into(),
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected {}", kw.to_uppercase())))
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> Result<Tok> {
        match self.peek() {
            Some(t) if t.kind == TokKind::Ident && !RESERVED.contains(&t.text.to_lowercase().as_str()) => {
                let t = t.clone();
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.err("expected an identifier")),
        }
    }

    fn sql(&mut self) -> Result<(Option<&'static str>, RawQuery, Option<RawQuery>)> {
        let first = self.query()?;
        let op = if self.eat_kw("union") {
            if self.is_kw("all") {
                return Err(self.unsupported("UNION ALL"));
            }
            Some("Union")
        } else if self.eat_kw("intersect") {
            Some("Intersect")
        } else if self.eat_kw("except") {
            Some("Except")
        } else {
            None
        };
        let second = match op {
            Some(_) => Some(self.query()?),
            None => None,
        };
        if self.is_kw("union") || self.is_kw("intersect") || self.is_kw("except") {
            return Err(self.unsupported("more than one set operation"));
        }
        self.eat_sym(";");
        if self.peek().is_some() {
            return Err(self.unsupported("trailing tokens"));
        }
        Ok((op, first, second))
    }

    fn query(&mut self) -> Result<RawQuery> {
        self.expect_kw("select")?;
        let distinct = self.eat_kw("distinct");
        let mut select = vec![self.agg()?];
        while self.eat_sym(",") {
            select.push(self.agg()?);
        }
        self.expect_kw("from")?;
        let from = self.from()?;
        let where_ = if self.eat_kw("where") { Some(self.cond()?) } else { None };
        let mut group = Vec::new();
        let mut having = None;
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            group.push(self.colref()?);
            while self.eat_sym(",") {
                group.push(self.colref()?);
            }
            if self.eat_kw("having") {
                having = Some(self.cond()?);
            }
        } else if self.is_kw("having") {
            return Err(self.unsupported("HAVING without GROUP BY"));
        }
        let mut order = None;
        if self.eat_kw("order") {
            self.expect_kw("by")?;
            let mut items = Vec::new();
            let mut dirs = Vec::new();
            loop {
                items.push(self.agg()?);
                dirs.push(if self.eat_kw("desc") {
                    true
                } else {
                    self.eat_kw("asc");
                    false
                });
                if !self.eat_sym(",") {
                    break;
                }
            }
            if dirs.iter().any(|&d| d != dirs[0]) {
                return Err(self.unsupported("mixed ORDER BY directions"));
            }
            let limit = if self.eat_kw("limit") {
                match self.peek() {
                    Some(t) if t.kind == TokKind::Number => self.pos += 1,
                    _ => return Err(self.err("expected a LIMIT count")),
                }
                true
            } else {
                false
            };
            order = Some((items, dirs[0], limit));
        } else if self.is_kw("limit") {
            return Err(self.unsupported("LIMIT without ORDER BY"));
        }
        Ok(RawQuery {
            distinct,
            select,
            from,
            where_,
            group,
            having,
            order,
        })
    }

    fn colref(&mut self) -> Result<RawCol> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            let second = self.ident()?;
            Ok(RawCol {
                qual: Some(first.text),
                name: second.text,
                start: first.start,
                end: second.end,
            })
        } else {
            Ok(RawCol {
                qual: None,
                name: first.text,
                start: first.start,
                end: first.end,
            })
        }
    }

    fn unit(&mut self) -> Result<RawUnit> {
        if self.eat_sym("*") {
            return Ok(RawUnit::Star);
        }
        let col = self.colref()?;
        if self.is_sym("+") || self.is_sym("-") || self.is_sym("/") || self.is_sym("*") {
            return Err(self.unsupported("arithmetic expressions"));
        }
        Ok(RawUnit::Col(col))
    }

    fn agg(&mut self) -> Result<RawAgg> {
        const FUNCS: [(&str, &str); 5] = [
            ("count", "Count"),
            ("sum", "Sum"),
            ("avg", "Avg"),
            ("min", "Min"),
            ("max", "Max"),
        ];
        for (kw, rule) in FUNCS {
            if self.is_kw(kw) && self.peek_at(1).is_some_and(|t| t.text == "(") {
                self.pos += 2;
                let unit = if self.eat_kw("distinct") {
                    RawUnit::DistinctCol(self.colref()?)
                } else {
                    self.unit()?
                };
                self.expect_sym(")")?;
                return Ok(RawAgg { func: rule, unit });
            }
        }
        if self.eat_kw("distinct") {
            return Ok(RawAgg {
                func: "NoAgg",
                unit: RawUnit::DistinctCol(self.colref()?),
            });
        }
        if self.is_sym("(") {
            return Err(self.unsupported("parenthesised expressions"));
        }
        Ok(RawAgg {
            func: "NoAgg",
            unit: self.unit()?,
        })
    }

    fn alias(&mut self) -> Result<Option<String>> {
        if self.eat_kw("as") {
            return Ok(Some(self.ident()?.text));
        }
        match self.peek() {
            Some(t) if t.kind == TokKind::Ident && !RESERVED.contains(&t.text.to_lowercase().as_str()) => {
                let a = t.text.clone();
                self.pos += 1;
                Ok(Some(a))
            }
            _ => Ok(None),
        }
    }

    fn from(&mut self) -> Result<RawFrom> {
        if self.eat_sym("(") {
            let q = self.query()?;
            self.expect_sym(")")?;
            let alias = self.alias()?;
            if self.is_kw("join") || self.is_sym(",") {
                return Err(self.unsupported("joining a FROM subquery"));
            }
            return Ok(RawFrom::Sub(Box::new(q), alias));
        }
        let mut tables = vec![self.table()?];
        let mut conds = Vec::new();
        loop {
            if self.is_kw("left") || self.is_kw("right") || self.is_kw("cross") || self.is_kw("natural") || self.is_kw("outer") {
                return Err(self.unsupported("only inner joins are covered"));
            }
            let joined = if self.is_kw("inner") && self.is_kw_at(1, "join") {
                self.pos += 2;
                true
            } else {
                self.eat_kw("join") || self.eat_sym(",")
            };
            if !joined {
                if self.eat_kw("on") {
                    self.on_conds(&mut conds)?;
                    continue;
                }
                break;
            }
            if self.is_sym("(") {
                return Err(self.unsupported("joining a FROM subquery"));
            }
            tables.push(self.table()?);
            if self.eat_kw("on") {
                self.on_conds(&mut conds)?;
            }
        }
        Ok(RawFrom::Tables(tables, conds))
    }

    fn on_conds(&mut self, out: &mut Vec<(RawCol, RawCol)>) -> Result<()> {
        loop {
            let a = self.colref()?;
            if !self.eat_sym("=") {
                return Err(self.unsupported("join conditions must be column equalities"));
            }
            let b = self.colref()?;
            out.push((a, b));
            if !self.eat_kw("and") {
                return Ok(());
            }
        }
    }

    fn table(&mut self) -> Result<RawTable> {
        let t = self.ident()?;
        let alias = self.alias()?;
        Ok(RawTable { name: t.text, alias })
    }

    fn cond(&mut self) -> Result<RawCond> {
        let mut parts = vec![self.and_cond()?];
        while self.eat_kw("or") {
            parts.push(self.and_cond()?);
        }
        Ok(fold(parts, RawCond::Or))
    }

    fn and_cond(&mut self) -> Result<RawCond> {
        let mut parts = vec![self.not_cond()?];
        while self.eat_kw("and") {
            parts.push(self.not_cond()?);
        }
        Ok(fold(parts, RawCond::And))
    }

    fn not_cond(&mut self) -> Result<RawCond> {
        if self.eat_kw("not") {
            return Ok(RawCond::Not(Box::new(self.not_cond()?)));
        }
        if self.is_sym("(") && !self.is_kw_at(1, "select") {
            self.pos += 1;
            let c = self.cond()?;
            self.expect_sym(")")?;
            return Ok(c);
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<RawCond> {
        if self.is_kw("exists") {
            return Err(self.unsupported("EXISTS"));
        }
        let lhs = self.agg()?;
        let negated = self.eat_kw("not");
        if self.eat_kw("between") {
            let lo = self.value()?;
            self.expect_kw("and")?;
            let hi = self.value()?;
            let c = RawCond::Between(lhs, lo, hi);
            return Ok(if negated { RawCond::Not(Box::new(c)) } else { c });
        }
        if self.eat_kw("in") {
            self.expect_sym("(")?;
            if !self.is_kw("select") {
                return Err(self.unsupported("IN with a literal list"));
            }
            let q = self.query()?;
            self.expect_sym(")")?;
            return Ok(RawCond::In(negated, lhs, Box::new(q)));
        }
        if self.eat_kw("like") {
            return Ok(RawCond::Like(negated, lhs, self.value()?));
        }
        if negated {
            return Err(self.err("expected BETWEEN, IN or LIKE after NOT"));
        }
        if self.is_kw("is") {
            return Err(self.unsupported("IS NULL tests"));
        }
        let op = match self.peek() {
            Some(t) if t.kind == TokKind::Sym => match t.text.as_str() {
                "=" => "Eq",
                "!=" | "<>" => "Ne",
                "<" => "Lt",
                ">" => "Gt",
                "<=" => "Le",
                ">=" => "Ge",
                _ => return Err(self.err("expected a comparison operator")),
            },
            _ => return Err(self.err("expected a comparison operator")),
        };
        self.pos += 1;
        Ok(RawCond::Cmp(op, lhs, self.value()?))
    }

    fn value(&mut self) -> Result<RawValue> {
        if self.is_sym("(") && self.is_kw_at(1, "select") {
            self.pos += 1;
            let q = self.query()?;
            self.expect_sym(")")?;
            return Ok(RawValue::Sub(Box::new(q)));
        }
        if self.is_sym("-") && self.peek_at(1).is_some_and(|t| t.kind == TokKind::Number) {
            self.pos += 2;
            return Ok(RawValue::Lit);
        }
        match self.peek().map(|t| t.kind) {
            Some(TokKind::Number) | Some(TokKind::Str) => {
                self.pos += 1;
                Ok(RawValue::Lit)
            }
            Some(TokKind::Ident) if self.is_kw("null") => Err(self.unsupported("NULL literals")),
            Some(TokKind::Ident) => Ok(RawValue::Col(self.colref()?)),
            _ => Err(self.err("expected a value")),
        }
    }
}

fn fold(mut parts: Vec<RawCond>, mk: fn(Box<RawCond>, Box<RawCond>) -> RawCond) -> RawCond {
    let mut acc = parts.pop().expect("at least one part");
    while let Some(p) = parts.pop() {
        acc = mk(Box::new(p), Box::new(acc));
    }
    acc
}

/// Tables visible in one query level.
#[derive(Debug, Clone)]
struct Scope {
    /// `(alias or table name, table ids reachable through it)`
    entries: Vec<(String, Vec<usize>)>,
}

impl Scope {
    fn tables(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().flat_map(|(_, ts)| ts.iter().copied())
    }
}

struct Resolver<'s> {
    g: &'static Grammar,
    schema: &'s Schema,
}

impl Resolver<'_> {
    fn node(&self, rule: &str, children: Vec<AstNode>) -> AstNode {
        AstNode::rule(self.g.rule(rule), children)
    }

    fn list(&self, one: &str, more: &str, mut items: Vec<AstNode>) -> AstNode {
        let last = items.pop().expect("non-empty list");
        let mut acc = self.node(one, vec![last]);
        while let Some(x) = items.pop() {
            acc = self.node(more, vec![x, acc]);
        }
        acc
    }

    fn column(&self, c: &RawCol, scopes: &[Scope]) -> Result<usize> {
        let s = self.schema;
        let unknown = || Error::Resolution(match &c.qual {
            Some(q) => format!("{q}.{}", c.name),
            None => c.name.clone(),
        });
        if let Some(q) = &c.qual {
            for scope in scopes.iter().rev() {
                for (name, tables) in &scope.entries {
                    if name.eq_ignore_ascii_case(q) {
                        return tables
                            .iter()
                            .find_map(|&t| s.column_by_name(t, &c.name))
                            .ok_or_else(unknown);
                    }
                }
            }
            let t = s.table_by_name(q).ok_or_else(unknown)?;
            return s.column_by_name(t, &c.name).ok_or_else(unknown);
        }
        for scope in scopes.iter().rev() {
            let hits: Vec<usize> = scope
                .tables()
                .filter_map(|t| s.column_by_name(t, &c.name))
                .collect();
            match hits.len() {
                0 => continue,
                1 => return Ok(hits[0]),
                _ => {
                    return Err(Error::Resolution(format!(
                        "ambiguous column `{}` at {}..{}",
                        c.name, c.start, c.end
                    )))
                }
            }
        }
        Err(unknown())
    }

    fn unit(&self, u: &RawUnit, scopes: &[Scope]) -> Result<AstNode> {
        Ok(match u {
            RawUnit::Star => self.node("Star", vec![]),
            RawUnit::Col(c) => self.node("Col", vec![AstNode::Column(self.column(c, scopes)?)]),
            RawUnit::DistinctCol(c) => self.node("DistinctCol", vec![AstNode::Column(self.column(c, scopes)?)]),
        })
    }

    fn agg(&self, a: &RawAgg, scopes: &[Scope]) -> Result<AstNode> {
        let u = self.unit(&a.unit, scopes)?;
        Ok(self.node(a.func, vec![u]))
    }

    fn value(&self, v: &RawValue, scopes: &[Scope]) -> Result<AstNode> {
        Ok(match v {
            RawValue::Lit => self.node("Literal", vec![]),
            RawValue::Col(c) => self.node("ValCol", vec![AstNode::Column(self.column(c, scopes)?)]),
            RawValue::Sub(q) => self.node("Sub", vec![self.query(q, scopes)?]),
        })
    }

    fn cond(&self, c: &RawCond, scopes: &[Scope]) -> Result<AstNode> {
        Ok(match c {
            RawCond::And(a, b) => self.node("And", vec![self.cond(a, scopes)?, self.cond(b, scopes)?]),
            RawCond::Or(a, b) => self.node("Or", vec![self.cond(a, scopes)?, self.cond(b, scopes)?]),
            RawCond::Not(a) => self.node("Not", vec![self.cond(a, scopes)?]),
            RawCond::Cmp(op, a, v) => self.node(
                "Cmp",
                vec![self.node(op, vec![]), self.agg(a, scopes)?, self.value(v, scopes)?],
            ),
            RawCond::Between(a, lo, hi) => self.node(
                "Between",
                vec![self.agg(a, scopes)?, self.value(lo, scopes)?, self.value(hi, scopes)?],
            ),
            RawCond::In(neg, a, q) => self.node(
                if *neg { "NotIn" } else { "In" },
                vec![self.agg(a, scopes)?, self.query(q, scopes)?],
            ),
            RawCond::Like(neg, a, v) => self.node(
                if *neg { "NotLike" } else { "Like" },
                vec![self.agg(a, scopes)?, self.value(v, scopes)?],
            ),
        })
    }

    /// Resolves FROM, returning the node and the scope it opens.
    fn from(&self, f: &RawFrom, outer: &[Scope]) -> Result<(AstNode, Scope)> {
        match f {
            RawFrom::Sub(q, alias) => {
                let node = self.query(q, outer)?;
                let inner: Vec<usize> = match &**q {
                    RawQuery { from: RawFrom::Tables(ts, _), .. } => ts
                        .iter()
                        .filter_map(|t| self.schema.table_by_name(&t.name))
                        .collect(),
                    _ => Vec::new(),
                };
                let name = alias.clone().unwrap_or_default();
                Ok((
                    self.node("FromSubquery", vec![node]),
                    Scope {
                        entries: vec![(name, inner)],
                    },
                ))
            }
            RawFrom::Tables(tables, conds) => {
                let mut ids = Vec::with_capacity(tables.len());
                let mut entries = Vec::new();
                for t in tables {
                    let id = self
                        .schema
                        .table_by_name(&t.name)
                        .ok_or_else(|| Error::Resolution(t.name.clone()))?;
                    ids.push(id);
                    entries.push((t.alias.clone().unwrap_or_else(|| t.name.clone()), vec![id]));
                    if t.alias.is_some() {
                        entries.push((t.name.clone(), vec![id]));
                    }
                }
                let scope = Scope { entries };
                let mut scopes = outer.to_vec();
                scopes.push(scope.clone());
                let mut pairs = Vec::with_capacity(conds.len());
                for (a, b) in conds {
                    pairs.push((self.column(a, &scopes)?, self.column(b, &scopes)?));
                }
                let table_list = self.list(
                    "TableOne",
                    "TableMore",
                    ids.iter().map(|&t| AstNode::Table(t)).collect(),
                );
                let norm = |v: &[(usize, usize)]| {
                    let mut v: Vec<(usize, usize)> = v.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
                    v.sort_unstable();
                    v
                };
                let implicit = infer_join(self.schema, &ids).is_some_and(|inf| {
                    let given = norm(&pairs);
                    let mut dedup = given.clone();
                    dedup.dedup();
                    dedup.len() == given.len() && norm(&inf) == given
                });
                let node = if implicit {
                    self.node("FromTables", vec![table_list])
                } else {
                    let mut acc = self.node("NoCond", vec![]);
                    for &(a, b) in pairs.iter().rev() {
                        acc = self.node("JoinCond", vec![AstNode::Column(a), AstNode::Column(b), acc]);
                    }
                    self.node("FromJoin", vec![table_list, acc])
                };
                Ok((node, scope))
            }
        }
    }

    fn query(&self, q: &RawQuery, outer: &[Scope]) -> Result<AstNode> {
        let (from, scope) = self.from(&q.from, outer)?;
        let mut scopes = outer.to_vec();
        scopes.push(scope);
        let aggs = q
            .select
            .iter()
            .map(|a| self.agg(a, &scopes))
            .collect::<Result<Vec<_>>>()?;
        let select = self.node(
            if q.distinct { "SelectDistinct" } else { "SelectAll" },
            vec![self.list("AggOne", "AggMore", aggs)],
        );
        let where_ = match &q.where_ {
            Some(c) => self.node("Where", vec![self.cond(c, &scopes)?]),
            None => self.node("NoWhere", vec![]),
        };
        let group = if q.group.is_empty() {
            self.node("NoGroup", vec![])
        } else {
            let cols = q
                .group
                .iter()
                .map(|c| Ok(AstNode::Column(self.column(c, &scopes)?)))
                .collect::<Result<Vec<_>>>()?;
            let having = match &q.having {
                Some(c) => self.node("Having", vec![self.cond(c, &scopes)?]),
                None => self.node("NoHaving", vec![]),
            };
            self.node("GroupBy", vec![self.list("ColOne", "ColMore", cols), having])
        };
        let order = match &q.order {
            None => self.node("NoOrder", vec![]),
            Some((items, desc, limit)) => {
                let items = items
                    .iter()
                    .map(|a| self.agg(a, &scopes))
                    .collect::<Result<Vec<_>>>()?;
                self.node(
                    "OrderBy",
                    vec![
                        self.list("OrderOne", "OrderMore", items),
                        self.node(if *desc { "Desc" } else { "Asc" }, vec![]),
                        self.node(if *limit { "Limit" } else { "NoLimit" }, vec![]),
                    ],
                )
            }
        };
        Ok(self.node("Select", vec![select, from, where_, group, order]))
    }
}

/// Parses a query of the covered subset and resolves names against `schema`.
pub fn parse_sql(text: &str, schema: &Schema) -> Result<SqlAst> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(Error::SqlParse {
            pos: 0,
            message: "empty query".into(),
        });
    }
    let mut p = Parser { toks, pos: 0, src: text };
    let (op, first, second) = p.sql()?;
    let r = Resolver {
        g: Grammar::shipped(),
        schema,
    };
    let q1 = r.query(&first, &[])?;
    let root = match (op, second) {
        (Some(op), Some(q2)) => r.node(op, vec![q1, r.query(&q2, &[])?]),
        _ => r.node("Simple", vec![q1]),
    };
    Ok(SqlAst::new(&schema.db_id, root))
}
