use crate::catalog::{Catalog, Dtype, TableSpec, Value};

use super::lexer::{tokenize, Tok, Token};
use super::{flatten, AttrRef, Bound, Expr, JoinEdge, PredOp, Predicate, QueryError, QuerySpec};

/// Parses and validates a query against the registered tables.
///
/// AND binds tighter than OR; runs of the same connective are flattened into
/// one n-ary node.
pub fn parse_query(text: &str, catalog: &Catalog) -> Result<QuerySpec, QueryError> {
    let toks = tokenize(text)?;
    Parser {
        toks,
        i: 0,
        catalog,
        tables: Vec::new(),
    }
    .query()
}

struct RawAttr {
    table: Option<String>,
    name: String,
    pos: usize,
}

struct Parser<'a> {
    toks: Vec<Token>,
    i: usize,
    catalog: &'a Catalog,
    tables: Vec<TableSpec>,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.toks[self.i]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            pos: self.peek().pos,
            message: message.into(),
        })
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.peek().is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if &self.peek().tok == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<(String, usize), QueryError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Ident(s) if !is_reserved(&s) => {
                self.bump();
                Ok((s, t.pos))
            }
            _ => self.err("expected identifier"),
        }
    }

    fn raw_attr(&mut self) -> Result<RawAttr, QueryError> {
        let (first, pos) = self.ident()?;
        if self.eat(&Tok::Dot) {
            let (name, _) = self.ident()?;
            Ok(RawAttr {
                table: Some(first),
                name,
                pos,
            })
        } else {
            Ok(RawAttr {
                table: None,
                name: first,
                pos,
            })
        }
    }

    fn table_ref(&mut self) -> Result<(), QueryError> {
        let (name, pos) = self.ident()?;
        let table = self
            .catalog
            .table(&name)
            .ok_or(QueryError::UnknownSymbol {
                pos,
                name: name.clone(),
            })?;
        if self.tables.iter().any(|t| t.name == table.spec.name) {
            return Err(QueryError::JoinGraph(format!("table `{name}` appears twice")));
        }
        self.tables.push(table.spec.clone());
        Ok(())
    }

    fn resolve(&self, raw: &RawAttr) -> Result<AttrRef, QueryError> {
        let unknown = || QueryError::UnknownSymbol {
            pos: raw.pos,
            name: match &raw.table {
                Some(t) => format!("{t}.{}", raw.name),
                None => raw.name.clone(),
            },
        };
        let mut found = None;
        for t in &self.tables {
            if let Some(qual) = &raw.table {
                if !t.name.eq_ignore_ascii_case(qual) {
                    continue;
                }
            }
            if let Some(a) = t.attribute(&raw.name) {
                if found.is_some() {
                    return Err(QueryError::UnknownSymbol {
                        pos: raw.pos,
                        name: format!("{} (ambiguous; qualify with a table name)", raw.name),
                    });
                }
                found = Some(AttrRef {
                    table: t.name.clone(),
                    name: a.name.clone(),
                    dtype: a.dtype,
                });
            }
        }
        found.ok_or_else(unknown)
    }

    fn query(mut self) -> Result<QuerySpec, QueryError> {
        self.expect_kw("SELECT")?;
        let mut raw_select = Vec::new();
        let mut star = false;
        if self.eat(&Tok::Star) {
            star = true;
        } else {
            loop {
                raw_select.push(self.raw_attr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect_kw("FROM")?;
        self.table_ref()?;

        let mut joins = Vec::new();
        while self.peek().is_kw("JOIN") {
            self.bump();
            self.table_ref()?;
            self.expect_kw("ON")?;
            loop {
                let pos = self.peek().pos;
                let l = self.raw_attr()?;
                if !self.eat(&Tok::Eq) {
                    return self.err("expected `=` in join condition");
                }
                let r = self.raw_attr()?;
                let (left, right) = (self.resolve(&l)?, self.resolve(&r)?);
                if (left.dtype == Dtype::Number) != (right.dtype == Dtype::Number) {
                    return Err(QueryError::Type {
                        pos,
                        message: format!(
                            "cannot join {} ({}) with {} ({})",
                            left.qualified(),
                            left.dtype,
                            right.qualified(),
                            right.dtype
                        ),
                    });
                }
                joins.push(JoinEdge { left, right });
                if !self.peek().is_kw("AND") {
                    break;
                }
                self.bump();
            }
        }

        let where_clause = if self.peek().is_kw("WHERE") {
            self.bump();
            Some(flatten(self.or_expr()?))
        } else {
            None
        };
        if self.peek().tok != Tok::Eof {
            return self.err("unexpected trailing input");
        }

        let select = if star {
            self.tables
                .iter()
                .flat_map(|t| {
                    t.attributes.iter().map(|a| AttrRef {
                        table: t.name.clone(),
                        name: a.name.clone(),
                        dtype: a.dtype,
                    })
                })
                .collect()
        } else {
            raw_select
                .iter()
                .map(|r| self.resolve(r))
                .collect::<Result<Vec<_>, _>>()?
        };

        let spec = QuerySpec {
            select,
            tables: self.tables,
            where_clause,
            joins,
        };
        spec.join_graph().validate()?;
        Ok(spec)
    }

    fn or_expr(&mut self) -> Result<Expr, QueryError> {
        let mut parts = vec![self.and_expr()?];
        while self.peek().is_kw("OR") {
            self.bump();
            parts.push(self.and_expr()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::Or(parts)
        })
    }

    fn and_expr(&mut self) -> Result<Expr, QueryError> {
        let mut parts = vec![self.primary()?];
        while self.peek().is_kw("AND") {
            self.bump();
            parts.push(self.primary()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::And(parts)
        })
    }

    fn primary(&mut self) -> Result<Expr, QueryError> {
        if self.eat(&Tok::LParen) {
            let e = self.or_expr()?;
            if !self.eat(&Tok::RParen) {
                return self.err("expected `)`");
            }
            return Ok(e);
        }
        if self.peek().is_kw("NOT") {
            return self.err("NOT is not supported");
        }
        self.comparison().map(Expr::Leaf)
    }

    fn literal(&mut self, attr: &AttrRef) -> Result<Value, QueryError> {
        let t = self.bump();
        let v = match t.tok {
            Tok::Number(n) => Value::Number(n),
            Tok::Str(s) => Value::Text(s),
            _ => {
                return Err(QueryError::Syntax {
                    pos: t.pos,
                    message: "expected a literal".into(),
                })
            }
        };
        if !v.matches_dtype(attr.dtype) {
            return Err(QueryError::Type {
                pos: t.pos,
                message: format!("literal {v} does not match {} attribute {}", attr.dtype, attr.name),
            });
        }
        Ok(v)
    }

    fn comparison(&mut self) -> Result<Predicate, QueryError> {
        let raw = self.raw_attr()?;
        let attr = self.resolve(&raw)?;
        let op_tok = self.bump();
        let op = match op_tok.tok {
            Tok::Eq => PredOp::Eq(self.literal(&attr)?),
            Tok::Le => PredOp::Le(Bound::inclusive(self.literal(&attr)?)),
            Tok::Lt => PredOp::Le(Bound::exclusive(self.literal(&attr)?)),
            Tok::Ge => PredOp::Ge(Bound::inclusive(self.literal(&attr)?)),
            Tok::Gt => PredOp::Ge(Bound::exclusive(self.literal(&attr)?)),
            Tok::Ident(ref k) if k.eq_ignore_ascii_case("BETWEEN") => {
                let lo = self.literal(&attr)?;
                self.expect_kw("AND")?;
                let hi_pos = self.peek().pos;
                let hi = self.literal(&attr)?;
                if let (Value::Number(a), Value::Number(b)) = (&lo, &hi) {
                    if a > b {
                        return Err(QueryError::Type {
                            pos: hi_pos,
                            message: format!("empty range: {a} > {b}"),
                        });
                    }
                }
                PredOp::Range {
                    lo: Bound::inclusive(lo),
                    hi: Bound::inclusive(hi),
                }
            }
            Tok::Ident(ref k) if k.eq_ignore_ascii_case("IN") => {
                let close = if self.eat(&Tok::LParen) {
                    Tok::RParen
                } else if self.eat(&Tok::LBracket) {
                    Tok::RBracket
                } else {
                    return self.err("expected `(` after IN");
                };
                let mut set = Vec::new();
                loop {
                    set.push(self.literal(&attr)?);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                if !self.eat(&close) {
                    return self.err("expected end of IN list");
                }
                PredOp::In(set)
            }
            Tok::Ident(ref k) if k.eq_ignore_ascii_case("NOT") => {
                return Err(QueryError::Syntax {
                    pos: op_tok.pos,
                    message: "NOT is not supported".into(),
                })
            }
            _ => {
                return Err(QueryError::Syntax {
                    pos: op_tok.pos,
                    message: "expected a comparison operator".into(),
                })
            }
        };
        if attr.dtype == Dtype::Categorical && !matches!(op, PredOp::Eq(_) | PredOp::In(_)) {
            return Err(QueryError::Type {
                pos: op_tok.pos,
                message: format!("categorical attribute {} admits only = and IN", attr.name),
            });
        }
        Ok(Predicate {
            attr,
            op,
            synthetic: false,
        })
    }
}

fn is_reserved(s: &str) -> bool {
    const KW: &[&str] = &[
        "SELECT", "FROM", "WHERE", "JOIN", "ON", "AND", "OR", "NOT", "IN", "BETWEEN",
    ];
    KW.iter().any(|k| k.eq_ignore_ascii_case(s))
}
