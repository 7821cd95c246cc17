use super::QueryError;

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Comma,
    Dot,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Star,
    Eq,
    Le,
    Ge,
    Lt,
    Gt,
    Eof,
}

#[derive(Debug, Clone)]
pub(super) struct Token {
    pub tok: Tok,
    /// Byte offset of the token in the query text.
    pub pos: usize,
}

impl Token {
    /// True if this token is the given keyword (case-insensitive).
    pub fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }
}

fn syntax(pos: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax {
        pos,
        message: message.into(),
    }
}

pub(super) fn tokenize(src: &str) -> Result<Vec<Token>, QueryError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let c = bytes[i];
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' | b';' => {
                i += 1;
                continue;
            }
            b',' => Tok::Comma,
            b'.' => Tok::Dot,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b'*' => Tok::Star,
            b'=' => Tok::Eq,
            b'!' => return Err(syntax(start, "inequality `!=` is not supported")),
            b'<' | b'>' => match (c, bytes.get(i + 1)) {
                (b'<', Some(b'=')) => {
                    i += 1;
                    Tok::Le
                }
                (b'>', Some(b'=')) => {
                    i += 1;
                    Tok::Ge
                }
                (b'<', Some(b'>')) => return Err(syntax(start, "inequality `<>` is not supported")),
                (b'<', _) => Tok::Lt,
                _ => Tok::Gt,
            },
            b'\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match src[i..].chars().next() {
                        None => return Err(syntax(start, "unterminated string literal")),
                        Some('\'') if bytes.get(i + 1) == Some(&b'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => break,
                        Some(ch) => {
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                Tok::Str(s)
            }
            b'0'..=b'9' | b'-' => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                let lit = &src[i..j];
                let n: f64 = lit
                    .parse()
                    .map_err(|_| syntax(start, format!("invalid number `{lit}`")))?;
                out.push(Token {
                    tok: Tok::Number(n),
                    pos: start,
                });
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(src[i..j].to_string()),
                    pos: start,
                });
                i = j;
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap();
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        out.push(Token { tok, pos: start });
        i += 1;
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: src.len(),
    });
    Ok(out)
}
