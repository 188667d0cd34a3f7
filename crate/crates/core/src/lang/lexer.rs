use std::fmt;

use super::{ParseError, Pos};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Dollar(usize),
    Str(String),
    Num(String),
    Assign,
    Semi,
    Comma,
    LParen,
    RParen,
    Dot,
    DoubleColon,
    Cmp(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Dollar(k) => write!(f, "'${k}'"),
            Tok::Str(s) => write!(f, "string '{s}'"),
            Tok::Num(n) => write!(f, "number {n}"),
            Tok::Assign => f.write_str("'='"),
            Tok::Semi => f.write_str("';'"),
            Tok::Comma => f.write_str("','"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Dot => f.write_str("'.'"),
            Tok::DoubleColon => f.write_str("'::'"),
            Tok::Cmp(op) => write!(f, "'{op}'"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub(crate) fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |pos: Pos, expected: &str, found: String| ParseError::Syntax {
        pos,
        expected: expected.to_string(),
        found,
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let next = chars.get(i + 1).copied();
        let (tok, len) = match c {
            ';' => (Tok::Semi, 1),
            ',' => (Tok::Comma, 1),
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            '.' if !next.is_some_and(|n| n.is_ascii_digit()) => (Tok::Dot, 1),
            ':' if next == Some(':') => (Tok::DoubleColon, 2),
            '=' if next == Some('=') => (Tok::Cmp("=="), 2),
            '=' => (Tok::Assign, 1),
            '!' if next == Some('=') => (Tok::Cmp("!="), 2),
            '<' if next == Some('=') => (Tok::Cmp("<="), 2),
            '>' if next == Some('=') => (Tok::Cmp(">="), 2),
            '<' => (Tok::Cmp("<"), 1),
            '>' => (Tok::Cmp(">"), 1),
            '\'' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '\'' && chars[j] != '\n' {
                    j += 1;
                }
                if j >= chars.len() || chars[j] != '\'' {
                    return Err(err(pos, "closing quote", "end of line".into()));
                }
                let s: String = chars[start..j].iter().collect();
                (Tok::Str(s), j + 1 - i)
            }
            '$' => {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let digits: String = chars[i + 1..j].iter().collect();
                let k = digits
                    .parse::<usize>()
                    .map_err(|_| err(pos, "column position after '$'", format!("'{digits}'")))?;
                (Tok::Dollar(k), j - i)
            }
            c if c.is_ascii_digit() || c == '.' || (c == '-' && next.is_some_and(|n| n.is_ascii_digit() || n == '.')) => {
                let mut j = i + 1;
                let mut seen_dot = c == '.';
                while j < chars.len() {
                    let d = chars[j];
                    if d.is_ascii_digit() {
                        j += 1;
                    } else if d == '.' && !seen_dot && chars.get(j + 1).is_some_and(|n| n.is_ascii_digit()) {
                        seen_dot = true;
                        j += 1;
                    } else {
                        break;
                    }
                }
                (Tok::Num(chars[i..j].iter().collect()), j - i)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                (Tok::Ident(chars[i..j].iter().collect()), j - i)
            }
            other => return Err(err(pos, "a token", format!("'{other}'"))),
        };
        out.push(Token { tok, pos });
        advance(len, &mut i, &mut col);
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}
