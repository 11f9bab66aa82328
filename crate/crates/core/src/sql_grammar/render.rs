use super::ast::{AstNode, SqlAst};
use super::grammar::Grammar;
use crate::error::{Error, Result};
use crate::schema_graph::Schema;

/// Join conditions implied by foreign keys: each table after the first must be
/// linked to the earlier ones by exactly one foreign key. Returns
/// `(earlier column, new column)` pairs, or `None` when some link is missing or ambiguous.
pub fn infer_join(schema: &Schema, tables: &[usize]) -> Option<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for i in 1..tables.len() {
        let t = tables[i];
        let earlier = &tables[..i];
        if earlier.contains(&t) {
            return None;
        }
        let mut hits = Vec::new();
        for &(s, d) in &schema.foreign_keys {
            let (ts, td) = (schema.columns[s].table, schema.columns[d].table);
            if ts == t && earlier.contains(&td) {
                hits.push((d, s));
            } else if td == t && earlier.contains(&ts) {
                hits.push((s, d));
            }
        }
        hits.dedup();
        if hits.len() != 1 {
            return None;
        }
        out.push(hits[0]);
    }
    Some(out)
}

#[derive(Debug, Clone)]
struct RScope {
    /// `(table, alias)`; no aliases in single-table scopes.
    tables: Vec<(usize, Option<String>)>,
}

struct Renderer<'a> {
    g: &'a Grammar,
    schema: &'a Schema,
    next_alias: usize,
}

fn bad(what: &str) -> Error {
    Error::InvalidAst(format!("cannot render: {what}"))
}

impl<'a> Renderer<'a> {
    fn name(&self, n: &AstNode) -> &'a str {
        n.name(self.g)
    }

    fn col_id(&self, n: &AstNode) -> Result<usize> {
        match n {
            AstNode::Column(c) if *c < self.schema.num_columns() => Ok(*c),
            _ => Err(bad("expected a column")),
        }
    }

    fn table_id(&self, n: &AstNode) -> Result<usize> {
        match n {
            AstNode::Table(t) if *t < self.schema.num_tables() => Ok(*t),
            _ => Err(bad("expected a table")),
        }
    }

    fn column(&self, c: usize, scopes: &[RScope]) -> String {
        let col = &self.schema.columns[c];
        let tname = &self.schema.tables[col.table].name;
        if let Some(inner) = scopes.last() {
            let hits = inner.tables.iter().filter(|(t, _)| *t == col.table).count();
            if hits > 0 {
                if let Some((_, Some(alias))) = inner.tables.iter().find(|(t, _)| *t == col.table) {
                    return format!("{alias}.{}", col.name);
                }
                let ambiguous = inner
                    .tables
                    .iter()
                    .filter(|(t, _)| self.schema.column_by_name(*t, &col.name).is_some())
                    .count()
                    > 1;
                return if ambiguous {
                    format!("{tname}.{}", col.name)
                } else {
                    col.name.clone()
                };
            }
        }
        for scope in scopes.iter().rev().skip(1) {
            if let Some((_, alias)) = scope.tables.iter().find(|(t, _)| *t == col.table) {
                return match alias {
                    Some(a) => format!("{a}.{}", col.name),
                    None => format!("{tname}.{}", col.name),
                };
            }
        }
        format!("{tname}.{}", col.name)
    }

    fn list<'n>(&self, n: &'n AstNode, more: &str) -> Vec<&'n AstNode> {
        let mut out = Vec::new();
        let mut cur = n;
        loop {
            let ch = cur.children();
            if self.name(cur) == more {
                out.push(&ch[0]);
                cur = &ch[ch.len() - 1];
            } else {
                out.push(&ch[0]);
                return out;
            }
        }
    }

    fn unit(&self, n: &AstNode, scopes: &[RScope]) -> Result<String> {
        Ok(match self.name(n) {
            "Star" => "*".into(),
            "Col" => self.column(self.col_id(&n.children()[0])?, scopes),
            "DistinctCol" => format!("DISTINCT {}", self.column(self.col_id(&n.children()[0])?, scopes)),
            other => return Err(bad(other)),
        })
    }

    fn agg(&self, n: &AstNode, scopes: &[RScope]) -> Result<String> {
        let u = self.unit(&n.children()[0], scopes)?;
        Ok(match self.name(n) {
            "NoAgg" => u,
            "Count" => format!("COUNT({u})"),
            "Sum" => format!("SUM({u})"),
            "Avg" => format!("AVG({u})"),
            "Min" => format!("MIN({u})"),
            "Max" => format!("MAX({u})"),
            other => return Err(bad(other)),
        })
    }

    fn value(&mut self, n: &AstNode, scopes: &mut Vec<RScope>) -> Result<String> {
        Ok(match self.name(n) {
            "Literal" => "'value'".into(),
            "ValCol" => self.column(self.col_id(&n.children()[0])?, scopes),
            "Sub" => format!("({})", self.query(&n.children()[0], scopes)?),
            other => return Err(bad(other)),
        })
    }

    fn cond(&mut self, n: &AstNode, scopes: &mut Vec<RScope>) -> Result<String> {
        let ch = n.children();
        let name = self.name(n).to_string();
        Ok(match name.as_str() {
            "And" | "Or" => {
                let kw = if name == "And" { "AND" } else { "OR" };
                let binary = |c: &str| c == "And" || c == "Or";
                let l = self.cond(&ch[0], scopes)?;
                let l = if binary(self.name(&ch[0])) { format!("({l})") } else { l };
                let r = self.cond(&ch[1], scopes)?;
                let rn = self.name(&ch[1]);
                let r = if binary(rn) && rn != name { format!("({r})") } else { r };
                format!("{l} {kw} {r}")
            }
            "Not" => format!("NOT ({})", self.cond(&ch[0], scopes)?),
            "Cmp" => {
                let op = match self.name(&ch[0]) {
                    "Eq" => "=",
                    "Ne" => "!=",
                    "Lt" => "<",
                    "Gt" => ">",
                    "Le" => "<=",
                    "Ge" => ">=",
                    other => return Err(bad(other)),
                };
                let a = self.agg(&ch[1], scopes)?;
                let v = self.value(&ch[2], scopes)?;
                format!("{a} {op} {v}")
            }
            "Between" => {
                let a = self.agg(&ch[0], scopes)?;
                let lo = self.value(&ch[1], scopes)?;
                let hi = self.value(&ch[2], scopes)?;
                format!("{a} BETWEEN {lo} AND {hi}")
            }
            "In" | "NotIn" => {
                let a = self.agg(&ch[0], scopes)?;
                let q = self.query(&ch[1], scopes)?;
                let kw = if name == "In" { "IN" } else { "NOT IN" };
                format!("{a} {kw} ({q})")
            }
            "Like" | "NotLike" => {
                let a = self.agg(&ch[0], scopes)?;
                let v = self.value(&ch[1], scopes)?;
                let kw = if name == "Like" { "LIKE" } else { "NOT LIKE" };
                format!("{a} {kw} {v}")
            }
            other => return Err(bad(other)),
        })
    }

    fn from(&mut self, n: &AstNode, scopes: &mut Vec<RScope>) -> Result<(String, RScope)> {
        let ch = n.children();
        match self.name(n) {
            "FromSubquery" => {
                let q = self.query(&ch[0], scopes)?;
                let inner = first_from_tables(self.g, &ch[0]);
                Ok((
                    format!("FROM ({q})"),
                    RScope {
                        tables: inner.into_iter().map(|t| (t, None)).collect(),
                    },
                ))
            }
            kind @ ("FromTables" | "FromJoin") => {
                let tables = self
                    .list(&ch[0], "TableMore")
                    .into_iter()
                    .map(|t| self.table_id(t))
                    .collect::<Result<Vec<_>>>()?;
                let multi = tables.len() > 1;
                let scope = RScope {
                    tables: tables
                        .iter()
                        .map(|&t| {
                            let alias = multi.then(|| {
                                self.next_alias += 1;
                                format!("T{}", self.next_alias)
                            });
                            (t, alias)
                        })
                        .collect(),
                };
                let mut inner = scopes.clone();
                inner.push(scope.clone());
                let tref = |(t, alias): &(usize, Option<String>)| match alias {
                    Some(a) => format!("{} AS {a}", self.schema.tables[*t].name),
                    None => self.schema.tables[*t].name.clone(),
                };
                let mut out = format!("FROM {}", tref(&scope.tables[0]));
                if kind == "FromTables" {
                    let inferred = infer_join(self.schema, &tables);
                    for (i, entry) in scope.tables.iter().enumerate().skip(1) {
                        out.push_str(&format!(" JOIN {}", tref(entry)));
                        if let Some(pairs) = &inferred {
                            let (a, b) = pairs[i - 1];
                            out.push_str(&format!(" ON {} = {}", self.column(a, &inner), self.column(b, &inner)));
                        }
                    }
                } else {
                    for entry in scope.tables.iter().skip(1) {
                        out.push_str(&format!(" JOIN {}", tref(entry)));
                    }
                    let mut conds = Vec::new();
                    let mut cur = &ch[1];
                    while self.name(cur) == "JoinCond" {
                        let cc = cur.children();
                        let a = self.col_id(&cc[0])?;
                        let b = self.col_id(&cc[1])?;
                        conds.push(format!("{} = {}", self.column(a, &inner), self.column(b, &inner)));
                        cur = &cc[2];
                    }
                    if !conds.is_empty() {
                        out.push_str(&format!(" ON {}", conds.join(" AND ")));
                    }
                }
                Ok((out, scope))
            }
            other => Err(bad(other)),
        }
    }

    fn query(&mut self, n: &AstNode, scopes: &mut Vec<RScope>) -> Result<String> {
        if self.name(n) != "Select" {
            return Err(bad(self.name(n)));
        }
        let ch = n.children();
        let (from, scope) = self.from(&ch[1], scopes)?;
        scopes.push(scope);
        let res = self.query_body(ch, from, scopes);
        scopes.pop();
        res
    }

    fn query_body(&mut self, ch: &[AstNode], from: String, scopes: &mut Vec<RScope>) -> Result<String> {
        let sel = &ch[0];
        let aggs = self
            .list(&sel.children()[0], "AggMore")
            .into_iter()
            .map(|a| self.agg(a, scopes))
            .collect::<Result<Vec<_>>>()?;
        let distinct = if self.name(sel) == "SelectDistinct" { "DISTINCT " } else { "" };
        let mut out = format!("SELECT {distinct}{} {from}", aggs.join(", "));
        if self.name(&ch[2]) == "Where" {
            out.push_str(&format!(" WHERE {}", self.cond(&ch[2].children()[0], scopes)?));
        }
        if self.name(&ch[3]) == "GroupBy" {
            let gc = ch[3].children();
            let cols = self
                .list(&gc[0], "ColMore")
                .into_iter()
                .map(|c| Ok(self.column(self.col_id(c)?, scopes)))
                .collect::<Result<Vec<_>>>()?;
            out.push_str(&format!(" GROUP BY {}", cols.join(", ")));
            if self.name(&gc[1]) == "Having" {
                out.push_str(&format!(" HAVING {}", self.cond(&gc[1].children()[0], scopes)?));
            }
        }
        if self.name(&ch[4]) == "OrderBy" {
            let oc = ch[4].children();
            let items = self
                .list(&oc[0], "OrderMore")
                .into_iter()
                .map(|a| self.agg(a, scopes))
                .collect::<Result<Vec<_>>>()?;
            let dir = if self.name(&oc[1]) == "Desc" { " DESC" } else { " ASC" };
            let items: Vec<String> = items.into_iter().map(|i| i + dir).collect();
            out.push_str(&format!(" ORDER BY {}", items.join(", ")));
            if self.name(&oc[2]) == "Limit" {
                out.push_str(" LIMIT 1");
            }
        }
        Ok(out)
    }
}

fn first_from_tables(g: &Grammar, query: &AstNode) -> Vec<usize> {
    let from = &query.children()[1];
    if from.name(g) == "FromSubquery" {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = &from.children()[0];
    loop {
        if let AstNode::Table(t) = cur.children()[0] {
            out.push(t);
        }
        if cur.name(g) == "TableMore" {
            cur = &cur.children()[1];
        } else {
            return out;
        }
    }
}

/// Deterministic SQL text for a tree. Literals render as `'value'`.
pub fn render_sql(g: &Grammar, ast: &SqlAst, schema: &Schema) -> Result<String> {
    ast.validate(g, schema.num_columns(), schema.num_tables())?;
    let mut r = Renderer {
        g,
        schema,
        next_alias: 0,
    };
    let root = &ast.root;
    let ch = root.children();
    let mut scopes = Vec::new();
    Ok(match root.name(g) {
        "Simple" => r.query(&ch[0], &mut scopes)?,
        op @ ("Union" | "Intersect" | "Except") => {
            let a = r.query(&ch[0], &mut scopes)?;
            let b = r.query(&ch[1], &mut scopes)?;
            format!("{a} {} {b}", op.to_uppercase())
        }
        other => return Err(bad(other)),
    })
}
