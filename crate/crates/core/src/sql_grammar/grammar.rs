use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAMMAR_VERSION: u32 = 1;
const SHIPPED: &str = include_str!("grammar.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KindId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProdId(pub usize);

/// A syntax kind: either a nonterminal with productions or a terminal slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terminal {
    Column,
    Table,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kind {
    pub name: String,
    pub terminal: Option<Terminal>,
    pub productions: Vec<ProdId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub name: String,
    pub kind: KindId,
    pub children: Vec<KindId>,
}

/// One decoder action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    ApplyRule(ProdId),
    SelectColumn(usize),
    SelectTable(usize),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ApplyRule(p) => write!(f, "ApplyRule({})", Grammar::shipped().production(*p).name),
            Action::SelectColumn(c) => write!(f, "SelectColumn({c})"),
            Action::SelectTable(t) => write!(f, "SelectTable({t})"),
        }
    }
}

/// Abstract syntax of the covered SQL subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    pub version: u32,
    kinds: Vec<Kind>,
    productions: Vec<Production>,
    kind_index: HashMap<String, KindId>,
    prod_index: HashMap<String, ProdId>,
    root: KindId,
}

impl Grammar {
    /// The grammar compiled into the crate.
    pub fn shipped() -> &'static Grammar {
        static G: OnceLock<Grammar> = OnceLock::new();
        G.get_or_init(|| Grammar::parse(SHIPPED).expect("shipped grammar is well formed"))
    }

    pub fn source() -> &'static str {
        SHIPPED
    }

    /// Parses `Kind := Rule(Child, ...)` lines; `#` starts a comment. The first
    /// declared kind is the root.
    pub fn parse(text: &str) -> Result<Grammar> {
        let mut g = Grammar {
            version: GRAMMAR_VERSION,
            kinds: Vec::new(),
            productions: Vec::new(),
            kind_index: HashMap::new(),
            prod_index: HashMap::new(),
            root: KindId(0),
        };
        for t in [("Column", Terminal::Column), ("Table", Terminal::Table)] {
            g.intern_kind(t.0, Some(t.1));
        }
        let mut pending: Vec<(usize, String, ProdId, Vec<String>)> = Vec::new();
        let mut root = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Grammar(format!("line {}: {m}: `{line}`", lineno + 1));
            let (lhs, rhs) = line.split_once(":=").ok_or_else(|| bad("expected `:=`"))?;
            let kind_name = lhs.trim();
            let rhs = rhs.trim();
            let open = rhs.find('(').ok_or_else(|| bad("expected `(`"))?;
            if !rhs.ends_with(')') {
                return Err(bad("expected `)`"));
            }
            let rule = rhs[..open].trim();
            let args: Vec<String> = rhs[open + 1..rhs.len() - 1]
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            let valid = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid(kind_name) || !valid(rule) || !args.iter().all(|a| valid(a)) {
                return Err(bad("invalid identifier"));
            }
            let kind = g.intern_kind(kind_name, None);
            if g.kinds[kind.0].terminal.is_some() {
                return Err(bad("terminal kinds have no productions"));
            }
            root.get_or_insert(kind);
            if g.prod_index.contains_key(rule) {
                return Err(bad("duplicate rule name"));
            }
            let pid = ProdId(g.productions.len());
            g.productions.push(Production {
                name: rule.to_string(),
                kind,
                children: Vec::new(),
            });
            g.prod_index.insert(rule.to_string(), pid);
            g.kinds[kind.0].productions.push(pid);
            pending.push((lineno + 1, line.to_string(), pid, args));
        }
        for (lineno, line, pid, args) in pending {
            let mut children = Vec::with_capacity(args.len());
            for a in &args {
                let k = g.kind_index.get(a).copied().ok_or_else(|| {
                    Error::Grammar(format!("line {lineno}: unknown kind `{a}` in `{line}`"))
                })?;
                children.push(k);
            }
            g.productions[pid.0].children = children;
        }
        g.root = root.ok_or_else(|| Error::Grammar("grammar has no productions".into()))?;
        for k in &g.kinds {
            if k.terminal.is_none() && k.productions.is_empty() {
                return Err(Error::Grammar(format!("kind `{}` has no productions", k.name)));
            }
        }
        Ok(g)
    }

    fn intern_kind(&mut self, name: &str, terminal: Option<Terminal>) -> KindId {
        if let Some(&k) = self.kind_index.get(name) {
            return k;
        }
        let k = KindId(self.kinds.len());
        self.kinds.push(Kind {
            name: name.to_string(),
            terminal,
            productions: Vec::new(),
        });
        self.kind_index.insert(name.to_string(), k);
        k
    }

    pub fn root(&self) -> KindId {
        self.root
    }

    pub fn kind(&self, k: KindId) -> &Kind {
        &self.kinds[k.0]
    }

    pub fn kinds(&self) -> &[Kind] {
        &self.kinds
    }

    pub fn num_kinds(&self) -> usize {
        self.kinds.len()
    }

    pub fn production(&self, p: ProdId) -> &Production {
        &self.productions[p.0]
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn num_productions(&self) -> usize {
        self.productions.len()
    }

    pub fn kind_id(&self, name: &str) -> Option<KindId> {
        self.kind_index.get(name).copied()
    }

    pub fn prod_id(&self, name: &str) -> Option<ProdId> {
        self.prod_index.get(name).copied()
    }

    /// Production by name; panics on unknown names (for rules of the shipped grammar).
    pub fn rule(&self, name: &str) -> ProdId {
        self.prod_id(name)
            .unwrap_or_else(|| panic!("grammar has no rule `{name}`"))
    }

    /// Whether `action` may expand a slot of kind `k`.
    pub fn is_legal(&self, k: KindId, action: Action, num_columns: usize, num_tables: usize) -> bool {
        match (self.kinds[k.0].terminal, action) {
            (Some(Terminal::Column), Action::SelectColumn(c)) => c < num_columns,
            (Some(Terminal::Table), Action::SelectTable(t)) => t < num_tables,
            (None, Action::ApplyRule(p)) => p.0 < self.productions.len() && self.productions[p.0].kind == k,
            _ => false,
        }
    }

    /// Minimum number of actions needed to complete a slot of each kind, with the
    /// production achieving it.
    pub fn min_completion(&self) -> (Vec<usize>, Vec<Option<ProdId>>) {
        let n = self.kinds.len();
        let mut cost = vec![usize::MAX; n];
        let mut best = vec![None; n];
        for (i, k) in self.kinds.iter().enumerate() {
            if k.terminal.is_some() {
                cost[i] = 1;
            }
        }
        loop {
            let mut changed = false;
            for (pi, p) in self.productions.iter().enumerate() {
                let mut c = 1usize;
                for ch in &p.children {
                    c = c.saturating_add(cost[ch.0]);
                }
                if c < cost[p.kind.0] {
                    cost[p.kind.0] = c;
                    best[p.kind.0] = Some(ProdId(pi));
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        (cost, best)
    }
}
