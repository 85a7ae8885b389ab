use super::{ParseDiagnostic, SourceSpan};
use crate::model::ChannelMode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TokenKind {
    Ident(String),
    Arrow(ChannelMode),
    Colon,
    Semi,
    Comma,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub span: SourceSpan,
}

impl Token {
    pub fn describe(&self) -> String {
        match &self.kind {
            TokenKind::Ident(s) => format!("`{s}`"),
            TokenKind::Arrow(m) => format!("`{m}`"),
            TokenKind::Colon => "`:`".into(),
            TokenKind::Semi => "`;`".into(),
            TokenKind::Comma => "`,`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::LBrace => "`{`".into(),
            TokenKind::RBrace => "`}`".into(),
            TokenKind::Eof => "end of input".into(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Splits source text into tokens. `#` starts a comment unless it directly
/// follows an identifier character and precedes an alphanumeric one, which
/// is how instantiated names such as `NA#s2` stay single identifiers.
pub(crate) fn tokenize(source: &str) -> Result<Vec<Token>, ParseDiagnostic> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    while i < chars.len() {
        let c = chars[i];
        let span = |len: usize| SourceSpan { line, column: col, length: len.max(1) as u32 };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
                col += 1;
            }
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '#' && chars[i + 1].is_ascii_alphanumeric() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let len = i - start;
            tokens.push(Token { kind: TokenKind::Ident(text), span: span(len) });
            col += len as u32;
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 4)].iter().collect();
        let arrow = ["*->*", "*->", "->*", "->"]
            .into_iter()
            .find(|a| rest.starts_with(a));
        if let Some(a) = arrow {
            let mode = ChannelMode::from_arrow(a).expect("arrow table");
            tokens.push(Token { kind: TokenKind::Arrow(mode), span: span(a.len()) });
            i += a.len();
            col += a.len() as u32;
            continue;
        }
        let kind = match c {
            ':' => TokenKind::Colon,
            ';' => TokenKind::Semi,
            ',' => TokenKind::Comma,
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            '{' => TokenKind::LBrace,
            '}' => TokenKind::RBrace,
            other => {
                return Err(ParseDiagnostic::error(
                    "syntax-error",
                    span(1),
                    format!("unexpected character `{other}`"),
                ));
            }
        };
        tokens.push(Token { kind, span: span(1) });
        i += 1;
        col += 1;
    }
    let eof_span = tokens
        .last()
        .map(|t: &Token| t.span)
        .unwrap_or(SourceSpan { line: 1, column: 1, length: 1 });
    tokens.push(Token { kind: TokenKind::Eof, span: eof_span });
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<TokenKind> {
        tokenize(s).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn arrows_and_idents() {
        assert_eq!(
            kinds("A *->* B: NA#s2 # trailing"),
            vec![
                TokenKind::Ident("A".into()),
                TokenKind::Arrow(ChannelMode::Secure),
                TokenKind::Ident("B".into()),
                TokenKind::Colon,
                TokenKind::Ident("NA#s2".into()),
                TokenKind::Eof,
            ]
        );
        assert_eq!(kinds("A->*B")[1], TokenKind::Arrow(ChannelMode::Confidential));
        assert_eq!(kinds("A*->B")[1], TokenKind::Arrow(ChannelMode::Authentic));
    }

    #[test]
    fn spans_are_one_based() {
        let toks = tokenize("Protocol:\n  X").unwrap();
        assert_eq!(toks[2].span, SourceSpan { line: 2, column: 3, length: 1 });
    }

    #[test]
    fn bad_character() {
        let d = tokenize("A -> B: N@").unwrap_err();
        assert_eq!(d.span.column, 10);
    }
}
