use super::LangError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

// longest first so that `<=` wins over `<`
const SYMBOLS: &[&str] = &[
    "..", "==", "!=", "<=", ">=", "&&", "||", "{", "}", "(", ")", "[", "]", ";", ":", ",", "=", "<", ">", "+", "-", "*",
    "/", "%", "!",
];

pub fn lex(src: &str) -> Result<Vec<Token>, LangError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        let (l, cl) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let s: String = chars[i..].iter().take_while(|c| c.is_ascii_alphanumeric() || **c == '_').collect();
            advance(&mut i, &mut line, &mut col, s.len());
            out.push(Token { tok: Tok::Ident(s), line: l, col: cl });
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let mut real = false;
            // a dot followed by a digit; `0..3` is a range
            if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                real = true;
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    real = true;
                    j = k;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
            }
            let text: String = chars[i..j].iter().collect();
            let tok = if real {
                Tok::Real(text.parse().map_err(|_| LangError::syntax(l, cl, format!("bad number {text}")))?)
            } else {
                Tok::Int(text.parse().map_err(|_| LangError::syntax(l, cl, format!("integer {text} out of range")))?)
            };
            let len = j - i;
            advance(&mut i, &mut line, &mut col, len);
            out.push(Token { tok, line: l, col: cl });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let Some(sym) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) else {
            return Err(LangError::syntax(l, cl, format!("unexpected character {c:?}")));
        };
        advance(&mut i, &mut line, &mut col, sym.len());
        out.push(Token { tok: Tok::Sym(sym), line: l, col: cl });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_and_ranges() {
        let t: Vec<Tok> = lex("0..3 1.5 2e3 x<=y // c\n").unwrap().into_iter().map(|t| t.tok).collect();
        assert_eq!(
            t,
            vec![
                Tok::Int(0),
                Tok::Sym(".."),
                Tok::Int(3),
                Tok::Real(1.5),
                Tok::Real(2000.0),
                Tok::Ident("x".into()),
                Tok::Sym("<="),
                Tok::Ident("y".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn positions_are_one_based() {
        let t = lex("a\n  b").unwrap();
        assert_eq!((t[1].line, t[1].col), (2, 3));
        assert!(matches!(lex("a $"), Err(LangError::Syntax { line: 1, col: 3, .. })));
    }
}
