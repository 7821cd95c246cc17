//! SQL-subset queries: `SELECT .. FROM .. [JOIN .. ON ..]* [WHERE ..]`.

mod lexer;
mod parser;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::catalog::{Dtype, TableSpec, Value};

pub use parser::parse_query;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown symbol `{name}` at {pos}")]
    UnknownSymbol { pos: usize, name: String },
    #[error("type error at {pos}: {message}")]
    Type { pos: usize, message: String },
    #[error("invalid join graph: {0}")]
    JoinGraph(String),
}

/// A resolved reference to a table attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttrRef {
    pub table: String,
    pub name: String,
    pub dtype: Dtype,
}

impl AttrRef {
    pub fn qualified(&self) -> String {
        format!("{}.{}", self.table, self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    pub value: Value,
    pub inclusive: bool,
}

impl Bound {
    pub fn inclusive(value: Value) -> Self {
        Self {
            value,
            inclusive: true,
        }
    }

    pub fn exclusive(value: Value) -> Self {
        Self {
            value,
            inclusive: false,
        }
    }
}

/// Comparison carried by a leaf filter. Strict `<`/`>` are open bounds.
#[derive(Debug, Clone, PartialEq)]
pub enum PredOp {
    Eq(Value),
    Le(Bound),
    Ge(Bound),
    Range { lo: Bound, hi: Bound },
    In(Vec<Value>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub attr: AttrRef,
    pub op: PredOp,
    /// Set for IN filters synthesized from a join.
    pub synthetic: bool,
}

fn compare(a: &Value, b: &Value, dtype: Dtype) -> Option<Ordering> {
    match (a.canonical(dtype), b.canonical(dtype)) {
        (Value::Number(x), Value::Number(y)) => x.partial_cmp(&y),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(&y)),
        _ => None,
    }
}

fn above(v: &Value, bound: &Bound, dtype: Dtype) -> bool {
    match compare(v, &bound.value, dtype) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => bound.inclusive,
        _ => false,
    }
}

fn below(v: &Value, bound: &Bound, dtype: Dtype) -> bool {
    match compare(v, &bound.value, dtype) {
        Some(Ordering::Less) => true,
        Some(Ordering::Equal) => bound.inclusive,
        _ => false,
    }
}

impl Predicate {
    /// Evaluates the filter. Any comparison involving NULL is false.
    pub fn eval(&self, v: &Value) -> bool {
        if v.is_null() {
            return false;
        }
        let dt = self.attr.dtype;
        match &self.op {
            PredOp::Eq(lit) => compare(v, lit, dt) == Some(Ordering::Equal),
            PredOp::Le(b) => below(v, b, dt),
            PredOp::Ge(b) => above(v, b, dt),
            PredOp::Range { lo, hi } => above(v, lo, dt) && below(v, hi, dt),
            PredOp::In(set) => set.iter().any(|lit| compare(v, lit, dt) == Some(Ordering::Equal)),
        }
    }

    /// Builds a synthetic IN filter; duplicates collapse and values are sorted.
    pub fn synthetic_in(attr: AttrRef, values: impl IntoIterator<Item = Value>) -> Self {
        let mut seen = BTreeSet::new();
        let mut set = Vec::new();
        for v in values {
            if let Some(key) = v.join_key(attr.dtype) {
                if seen.insert(key) {
                    set.push(v.canonical(attr.dtype));
                }
            }
        }
        set.sort_by(|a, b| compare(a, b, attr.dtype).unwrap_or(Ordering::Equal));
        Predicate {
            attr,
            op: PredOp::In(set),
            synthetic: true,
        }
    }

    fn fmt_with(&self, f: &mut fmt::Formatter<'_>, qualify: bool) -> fmt::Result {
        let name = if qualify {
            self.attr.qualified()
        } else {
            self.attr.name.clone()
        };
        match &self.op {
            PredOp::Eq(v) => write!(f, "{name} = {v}"),
            PredOp::Le(b) => write!(f, "{name} {} {}", if b.inclusive { "<=" } else { "<" }, b.value),
            PredOp::Ge(b) => write!(f, "{name} {} {}", if b.inclusive { ">=" } else { ">" }, b.value),
            PredOp::Range { lo, hi } if lo.inclusive && hi.inclusive => {
                write!(f, "{name} BETWEEN {} AND {}", lo.value, hi.value)
            }
            PredOp::Range { lo, hi } => write!(
                f,
                "({name} {} {} AND {name} {} {})",
                if lo.inclusive { ">=" } else { ">" },
                lo.value,
                if hi.inclusive { "<=" } else { "<" },
                hi.value
            ),
            PredOp::In(set) => {
                write!(f, "{name} IN (")?;
                for (i, v) in set.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_with(f, true)
    }
}

/// Boolean expression tree over filters. AND/OR nodes have at least two
/// children and never a child with the same connective.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Leaf(Predicate),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Expr::Leaf(_))
    }

    pub fn children(&self) -> &[Expr] {
        match self {
            Expr::Leaf(_) => &[],
            Expr::And(c) | Expr::Or(c) => c,
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(Expr::depth).max().unwrap_or(0)
    }

    /// Evaluates the expression against a value lookup.
    pub fn eval<F: FnMut(&AttrRef) -> Value>(&self, lookup: &mut F) -> bool {
        match self {
            Expr::Leaf(p) => p.eval(&lookup(&p.attr)),
            Expr::And(c) => c.iter().all(|e| e.eval(lookup)),
            Expr::Or(c) => c.iter().any(|e| e.eval(lookup)),
        }
    }

    /// Tables referenced by any leaf.
    pub fn tables(&self) -> BTreeSet<String> {
        leaves(self).into_iter().map(|p| p.attr.table.clone()).collect()
    }

    fn fmt_with(&self, f: &mut fmt::Formatter<'_>, qualify: bool, parent_and: bool) -> fmt::Result {
        match self {
            Expr::Leaf(p) => p.fmt_with(f, qualify),
            Expr::And(c) => {
                for (i, e) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    e.fmt_with(f, qualify, true)?;
                }
                Ok(())
            }
            Expr::Or(c) => {
                if parent_and {
                    f.write_str("(")?;
                }
                for (i, e) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" OR ")?;
                    }
                    e.fmt_with(f, qualify, false)?;
                }
                if parent_and {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

/// Display adapter printing attribute names without their table.
pub struct Unqualified<'a>(&'a Expr);

impl fmt::Display for Unqualified<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt_with(f, false, false)
    }
}

impl Expr {
    pub fn unqualified(&self) -> Unqualified<'_> {
        Unqualified(self)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_with(f, true, false)
    }
}

/// Left-to-right leaf enumeration.
pub fn leaves(expr: &Expr) -> Vec<&Predicate> {
    fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a Predicate>) {
        match e {
            Expr::Leaf(p) => out.push(p),
            Expr::And(c) | Expr::Or(c) => c.iter().for_each(|c| walk(c, out)),
        }
    }
    let mut out = Vec::new();
    walk(expr, &mut out);
    out
}

/// Merges same-connective children into their parent and collapses
/// single-child nodes.
pub fn flatten(expr: Expr) -> Expr {
    match expr {
        Expr::Leaf(_) => expr,
        Expr::And(children) => {
            let mut out = Vec::new();
            for c in children.into_iter().map(flatten) {
                match c {
                    Expr::And(inner) => out.extend(inner),
                    other => out.push(other),
                }
            }
            if out.len() == 1 {
                out.pop().unwrap()
            } else {
                Expr::And(out)
            }
        }
        Expr::Or(children) => {
            let mut out = Vec::new();
            for c in children.into_iter().map(flatten) {
                match c {
                    Expr::Or(inner) => out.extend(inner),
                    other => out.push(other),
                }
            }
            if out.len() == 1 {
                out.pop().unwrap()
            } else {
                Expr::Or(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinEdge {
    pub left: AttrRef,
    pub right: AttrRef,
}

impl JoinEdge {
    /// The attribute of this edge on `table`, if the edge touches it.
    pub fn side(&self, table: &str) -> Option<&AttrRef> {
        if self.left.table == table {
            Some(&self.left)
        } else if self.right.table == table {
            Some(&self.right)
        } else {
            None
        }
    }

    pub fn other(&self, table: &str) -> Option<&AttrRef> {
        if self.left.table == table {
            Some(&self.right)
        } else if self.right.table == table {
            Some(&self.left)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<JoinEdge>,
}

impl JoinGraph {
    pub fn validate(&self) -> Result<(), QueryError> {
        for e in &self.edges {
            if e.left.table == e.right.table {
                return Err(QueryError::JoinGraph(format!(
                    "self-join on `{}` is not supported",
                    e.left.table
                )));
            }
            for t in [&e.left.table, &e.right.table] {
                if !self.nodes.contains(t) {
                    return Err(QueryError::JoinGraph(format!("edge references unknown table `{t}`")));
                }
            }
        }
        if self.nodes.len() <= 1 {
            return Ok(());
        }
        let index: HashMap<&str, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for e in &self.edges {
                let (l, r) = (index[e.left.table.as_str()], index[e.right.table.as_str()]);
                for (a, b) in [(l, r), (r, l)] {
                    if a == n && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(QueryError::JoinGraph(format!(
                "table `{}` is not connected to the rest of the query",
                self.nodes[i]
            )));
        }
        Ok(())
    }

    pub fn neighbors<'a>(&'a self, table: &'a str) -> impl Iterator<Item = (&'a JoinEdge, &'a str)> + 'a {
        self.edges
            .iter()
            .filter_map(move |e| e.other(table).map(|o| (e, o.table.as_str())))
    }
}

/// A parsed and validated SPJ query.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub select: Vec<AttrRef>,
    pub tables: Vec<TableSpec>,
    pub where_clause: Option<Expr>,
    pub joins: Vec<JoinEdge>,
}

impl QuerySpec {
    pub fn join_graph(&self) -> JoinGraph {
        JoinGraph {
            nodes: self.tables.iter().map(|t| t.name.clone()).collect(),
            edges: self.joins.clone(),
        }
    }

    pub fn is_join(&self) -> bool {
        self.tables.len() > 1
    }

    /// Attributes appearing in the WHERE clause (A_w), deduplicated, in leaf order.
    pub fn where_attrs(&self) -> Vec<AttrRef> {
        let mut out: Vec<AttrRef> = Vec::new();
        if let Some(w) = &self.where_clause {
            for p in leaves(w) {
                if !out.contains(&p.attr) {
                    out.push(p.attr.clone());
                }
            }
        }
        out
    }

    /// Every attribute of `table` the query touches: SELECT, WHERE and join keys.
    pub fn table_attrs(&self, table: &str) -> Vec<AttrRef> {
        let mut out: Vec<AttrRef> = Vec::new();
        let mut push = |a: &AttrRef| {
            if a.table == table && !out.contains(a) {
                out.push(a.clone());
            }
        };
        self.select.iter().for_each(&mut push);
        self.where_attrs().iter().for_each(&mut push);
        for e in &self.joins {
            push(&e.left);
            push(&e.right);
        }
        out
    }

    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name == name)
    }
}

impl fmt::Display for QuerySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let qualify = self.tables.len() > 1;
        let attr = |a: &AttrRef| if qualify { a.qualified() } else { a.name.clone() };
        f.write_str("SELECT ")?;
        let cols: Vec<String> = self.select.iter().map(attr).collect();
        f.write_str(&cols.join(", "))?;
        write!(f, " FROM {}", self.tables[0].name)?;
        let mut joined = vec![self.tables[0].name.clone()];
        for t in &self.tables[1..] {
            write!(f, " JOIN {}", t.name)?;
            let on: Vec<String> = self
                .joins
                .iter()
                .filter(|e| {
                    let (l, r) = (&e.left.table, &e.right.table);
                    (l == &t.name && joined.contains(r)) || (r == &t.name && joined.contains(l))
                })
                .map(|e| format!("{} = {}", e.left.qualified(), e.right.qualified()))
                .collect();
            if !on.is_empty() {
                write!(f, " ON {}", on.join(" AND "))?;
            }
            joined.push(t.name.clone());
        }
        if let Some(w) = &self.where_clause {
            f.write_str(" WHERE ")?;
            w.fmt_with(f, qualify, false)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
