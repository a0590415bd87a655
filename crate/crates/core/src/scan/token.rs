//! Tokenizer for R and Python sources.
//!
//! Comments and string literals always come out as single tokens so that
//! nothing inside them can be mistaken for code. Whitespace other than `\n`
//! is skipped; every other byte of the source belongs to exactly one token.

use serde::Serialize;

use crate::model::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TokenKind {
    Identifier,
    String,
    Number,
    Punct,
    Keyword,
    Comment,
    Newline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based.
    pub line: u32,
    /// 1-based, counted in characters.
    pub column: u32,
    /// Byte offset of the first character.
    pub offset: usize,
}

impl Token {
    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punct && self.text == p
    }

    pub fn is_keyword(&self, k: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == k
    }

    /// Identifier name with R backticks removed.
    pub fn ident_name(&self) -> &str {
        let t = self.text.as_str();
        if t.len() >= 2 && t.starts_with('`') && t.ends_with('`') {
            &t[1..t.len() - 1]
        } else {
            t
        }
    }

    /// Contents of a string literal without prefix or quotes. Escapes are kept verbatim.
    pub fn string_value(&self) -> &str {
        let t = self.text.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        for q in ["\"\"\"", "'''", "\"", "'"] {
            if t.len() >= 2 * q.len() && t.starts_with(q) && t.ends_with(q) {
                return &t[q.len()..t.len() - q.len()];
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenError {
    pub line: u32,
    pub column: u32,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub errors: Vec<TokenError>,
}

const R_KEYWORDS: &[&str] = &[
    "if", "else", "repeat", "while", "function", "for", "in", "next", "break", "TRUE", "FALSE",
    "NULL", "Inf", "NaN", "NA", "NA_integer_", "NA_real_", "NA_character_", "NA_complex_",
];

const PY_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if",
    "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try",
    "while", "with", "yield",
];

// Longest first.
const R_PUNCT: &[&str] = &[
    "<<-", "->>", ":::", "::", "<-", "->", "<=", ">=", "==", "!=", "&&", "||", "|>",
];

const PY_PUNCT: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==",
    "!=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=",
];

const PY_STRING_PREFIXES: &[&str] = &["r", "u", "b", "f", "br", "rb", "fr", "rf"];

pub fn is_keyword(word: &str, language: Language) -> bool {
    match language {
        Language::R => R_KEYWORDS.contains(&word),
        Language::Python => PY_KEYWORDS.contains(&word),
    }
}

pub fn tokenize(source: &str, language: Language) -> TokenStream {
    let mut lexer = Lexer {
        src: source,
        pos: 0,
        line: 1,
        col: 1,
        language,
        out: TokenStream::default(),
    };
    lexer.run();
    lexer.out
}

#[derive(Clone, Copy)]
struct Mark {
    pos: usize,
    line: u32,
    col: u32,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
    col: u32,
    language: Language,
    out: TokenStream,
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn peek_nth(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn mark(&self) -> Mark {
        Mark {
            pos: self.pos,
            line: self.line,
            col: self.col,
        }
    }

    fn emit(&mut self, kind: TokenKind, start: Mark) {
        self.out.tokens.push(Token {
            kind,
            text: self.src[start.pos..self.pos].to_owned(),
            line: start.line,
            column: start.col,
            offset: start.pos,
        });
    }

    fn run(&mut self) {
        while let Some(c) = self.peek() {
            let start = self.mark();
            match c {
                ' ' | '\t' | '\r' | '\x0c' => {
                    self.bump();
                }
                '\n' => {
                    self.bump();
                    self.emit(TokenKind::Newline, start);
                }
                '#' => {
                    while self.peek().is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                    self.emit(TokenKind::Comment, start);
                }
                '"' | '\'' => self.string(start, 0),
                '`' if self.language == Language::R => self.backtick(start),
                c if c.is_ascii_digit()
                    || (c == '.' && self.peek_nth(1).is_some_and(|d| d.is_ascii_digit())) =>
                {
                    self.number(start)
                }
                c if self.is_ident_start(c) => self.word(start),
                '%' if self.language == Language::R => self.r_special_operator(start),
                _ => self.punct(start),
            }
        }
    }

    fn is_ident_start(&self, c: char) -> bool {
        match self.language {
            Language::R => c.is_alphabetic() || c == '.',
            Language::Python => c.is_alphabetic() || c == '_',
        }
    }

    fn is_ident_continue(&self, c: char) -> bool {
        c.is_alphanumeric()
            || c == '_'
            || (self.language == Language::R && c == '.')
    }

    fn word(&mut self, start: Mark) {
        while self.peek().is_some_and(|c| self.is_ident_continue(c)) {
            self.bump();
        }
        let word = &self.src[start.pos..self.pos];
        if self.language == Language::Python
            && matches!(self.peek(), Some('"' | '\''))
            && PY_STRING_PREFIXES.contains(&word.to_ascii_lowercase().as_str())
        {
            let prefix_len = self.pos - start.pos;
            self.string(start, prefix_len);
            return;
        }
        let kind = if is_keyword(word, self.language) {
            TokenKind::Keyword
        } else {
            TokenKind::Identifier
        };
        self.emit(kind, start);
    }

    fn number(&mut self, start: Mark) {
        let hex = self.rest().starts_with("0x") || self.rest().starts_with("0X");
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_alphanumeric() || c == '_' || c == '.' => {
                    self.bump();
                    if !hex && matches!(c, 'e' | 'E') {
                        if let (Some('+' | '-'), Some(d)) = (self.peek(), self.peek_nth(1)) {
                            if d.is_ascii_digit() {
                                self.bump();
                            }
                        }
                    }
                }
                _ => break,
            }
        }
        self.emit(TokenKind::Number, start);
    }

    /// Quoted string starting at `start`; `prefix_len` bytes of prefix have been consumed.
    fn string(&mut self, start: Mark, prefix_len: usize) {
        debug_assert_eq!(self.pos, start.pos + prefix_len);
        let quote = self.bump().expect("caller saw a quote");
        let triple = self.language == Language::Python
            && self.peek() == Some(quote)
            && self.peek_nth(1) == Some(quote);
        if triple {
            self.bump();
            self.bump();
        }
        // R strings and Python triple-quoted strings may span lines.
        let multiline = triple || self.language == Language::R;
        loop {
            match self.peek() {
                None => break,
                Some('\n') if !multiline => break,
                Some('\\') => {
                    // Escaped character; a backslash-newline continues a Python string.
                    self.bump();
                    self.bump();
                }
                Some(c) if c == quote => {
                    if !triple {
                        self.bump();
                        self.emit(TokenKind::String, start);
                        return;
                    }
                    if self.peek_nth(1) == Some(quote) && self.peek_nth(2) == Some(quote) {
                        self.bump();
                        self.bump();
                        self.bump();
                        self.emit(TokenKind::String, start);
                        return;
                    }
                    self.bump();
                }
                Some(_) => {
                    self.bump();
                }
            }
        }
        self.unterminated(start, "unterminated string literal");
    }

    fn backtick(&mut self, start: Mark) {
        self.bump();
        loop {
            match self.peek() {
                None | Some('\n') => break,
                Some('\\') => {
                    self.bump();
                    if self.peek().is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                }
                Some('`') => {
                    self.bump();
                    self.emit(TokenKind::Identifier, start);
                    return;
                }
                Some(_) => {
                    self.bump();
                }
            }
        }
        self.unterminated(start, "unterminated backtick identifier");
    }

    /// Report an error and resume scanning at the end of the line where the construct began.
    fn unterminated(&mut self, start: Mark, message: &str) {
        self.out.errors.push(TokenError {
            line: start.line,
            column: start.col,
            message: message.to_owned(),
        });
        let line_end = self.src[start.pos..]
            .find('\n')
            .map_or(self.src.len(), |i| start.pos + i);
        let text = &self.src[start.pos..line_end];
        self.pos = line_end;
        self.line = start.line;
        self.col = start.col + text.chars().count() as u32;
        self.emit(TokenKind::String, start);
    }

    fn r_special_operator(&mut self, start: Mark) {
        // %in%, %>%, %%, ... must close on the same line.
        let rest = &self.rest()[1..];
        if let Some(end) = rest.find(['%', '\n']) {
            if rest.as_bytes()[end] == b'%' {
                for _ in 0..rest[..end].chars().count() + 2 {
                    self.bump();
                }
                self.emit(TokenKind::Punct, start);
                return;
            }
        }
        self.bump();
        self.emit(TokenKind::Punct, start);
    }

    fn punct(&mut self, start: Mark) {
        let table = match self.language {
            Language::R => R_PUNCT,
            Language::Python => PY_PUNCT,
        };
        if let Some(op) = table.iter().find(|op| self.rest().starts_with(**op)) {
            for _ in 0..op.len() {
                self.bump();
            }
        } else {
            self.bump();
        }
        self.emit(TokenKind::Punct, start);
    }
}
