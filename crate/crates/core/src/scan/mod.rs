//! Static dependency and function extraction for R and Python scripts.
//!
//! The scanner is deliberately shallow: it walks the token stream and
//! recognizes a fixed set of forms.
//!
//! R: `library(x)`, `require(x)`, `requireNamespace("x")`, `x::f`, `x:::f`,
//! `name <- function(...)`, `name = function(...)` (top level only).
//!
//! Python: `import a.b as c`, `from a.b import c`, `def name(...)`, and
//! calls qualified through an imported module (`np.array(...)`).
//!
//! Anything computed at run time (`do.call`, `library(p, character.only =
//! TRUE)`, `importlib.import_module`) is reported as a diagnostic instead of
//! being guessed.

pub mod lockfile;
pub mod token;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::digest::ContentHash;
use crate::model::{FunctionInfo, Language};
use token::{Token, TokenKind};

pub use lockfile::{read_lockfile, write_canonical_lockfile, LockfileError, LockfileFormat};
pub use token::{tokenize, TokenError, TokenStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticKind {
    /// The source could not be tokenized cleanly.
    Syntax,
    /// A construct the static scanner refuses to resolve.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: u32,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanResult {
    pub language: Language,
    /// SHA-256 of the scanned source bytes.
    pub source_hash: ContentHash,
    pub dependencies: BTreeSet<String>,
    pub defined_functions: BTreeSet<FunctionInfo>,
    pub called_functions: BTreeSet<FunctionInfo>,
    /// Python relative imports (`from .models import x`); never dependencies.
    pub local_modules: BTreeSet<String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ScanResult {
    pub fn has_syntax_errors(&self) -> bool {
        self.diagnostics
            .iter()
            .any(|d| d.kind == DiagnosticKind::Syntax)
    }

    /// Defined and called functions together.
    pub fn functions(&self) -> BTreeSet<FunctionInfo> {
        self.defined_functions
            .iter()
            .chain(&self.called_functions)
            .cloned()
            .collect()
    }
}

pub fn scan_script(source: &str, language: Language) -> ScanResult {
    let stream = tokenize(source, language);
    let mut scanner = Scanner {
        toks: stream
            .tokens
            .iter()
            .filter(|t| t.kind != TokenKind::Comment)
            .collect(),
        result: ScanResult {
            language,
            source_hash: ContentHash::of_bytes(source.as_bytes()),
            dependencies: BTreeSet::new(),
            defined_functions: BTreeSet::new(),
            called_functions: BTreeSet::new(),
            local_modules: BTreeSet::new(),
            diagnostics: stream
                .errors
                .iter()
                .map(|e| Diagnostic {
                    line: e.line,
                    kind: DiagnosticKind::Syntax,
                    message: format!("{} at column {}", e.message, e.column),
                })
                .collect(),
        },
    };
    match language {
        Language::R => scanner.scan_r(),
        Language::Python => scanner.scan_python(),
    }
    scanner.result.diagnostics.sort();
    scanner.result
}

/// Like [`scan_script`] but takes the language as text, as the CLI does.
pub fn scan_script_tagged(
    source: &str,
    language: &str,
) -> Result<ScanResult, crate::model::UnknownLanguage> {
    Ok(scan_script(source, language.parse()?))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Binding {
    Package(String),
    Local,
}

struct Scanner<'t> {
    toks: Vec<&'t Token>,
    result: ScanResult,
}

impl<'t> Scanner<'t> {
    fn tok(&self, i: usize) -> Option<&'t Token> {
        self.toks.get(i).copied()
    }

    fn is_punct(&self, i: usize, p: &str) -> bool {
        self.tok(i).is_some_and(|t| t.is_punct(p))
    }

    fn is_newline(&self, i: usize) -> bool {
        self.tok(i).is_some_and(|t| t.kind == TokenKind::Newline)
    }

    fn is_ident(&self, i: usize) -> bool {
        self.tok(i).is_some_and(|t| t.kind == TokenKind::Identifier)
    }

    fn skip_newlines(&self, mut i: usize) -> usize {
        while self.is_newline(i) {
            i += 1;
        }
        i
    }

    fn diag(&mut self, line: u32, message: impl Into<String>) {
        self.result.diagnostics.push(Diagnostic {
            line,
            kind: DiagnosticKind::Unresolved,
            message: message.into(),
        });
    }

    fn call(&mut self, name: &str, source_package: Option<String>) {
        self.result
            .called_functions
            .insert(FunctionInfo::called(name, source_package));
    }

    /// Index of the `)` matching the `(` at `open`, or the end of the stream.
    fn matching_paren(&self, open: usize) -> usize {
        let mut depth = 0usize;
        for i in open..self.toks.len() {
            let t = self.toks[i];
            if t.is_punct("(") {
                depth += 1;
            } else if t.is_punct(")") {
                depth -= 1;
                if depth == 0 {
                    return i;
                }
            }
        }
        self.toks.len()
    }

    // ---- R ---------------------------------------------------------------

    fn scan_r(&mut self) {
        let mut depth = 0usize;
        for i in 0..self.toks.len() {
            let t = self.toks[i];
            match t.kind {
                TokenKind::Punct => match t.text.as_str() {
                    "(" | "[" => depth += 1,
                    ")" | "]" => depth = depth.saturating_sub(1),
                    _ => {}
                },
                TokenKind::Identifier => self.r_identifier(i, depth),
                _ => {}
            }
        }
    }

    fn r_identifier(&mut self, i: usize, depth: usize) {
        let t = self.toks[i];
        let name = t.ident_name();
        let qualified_by_prev =
            i >= 1 && (self.is_punct(i - 1, "::") || self.is_punct(i - 1, ":::"));
        if qualified_by_prev {
            return;
        }
        if (self.is_punct(i + 1, "::") || self.is_punct(i + 1, ":::")) && self.is_ident(i + 2) {
            self.result.dependencies.insert(name.to_owned());
            if self.is_punct(i + 3, "(") {
                let f = self.toks[i + 2].ident_name().to_owned();
                self.call(&f, Some(name.to_owned()));
            }
            return;
        }

        let assigns = self.is_punct(i + 1, "<-")
            || self.is_punct(i + 1, "<<-")
            || (depth == 0 && self.is_punct(i + 1, "="));
        if assigns {
            let is_fn = self.tok(i + 2).is_some_and(|t| t.is_keyword("function"))
                || (self.is_punct(i + 2, "\\") && self.is_punct(i + 3, "("));
            if is_fn {
                self.result
                    .defined_functions
                    .insert(FunctionInfo::defined(name));
            }
        }

        if self.is_punct(i + 1, "(") {
            self.call(name, None);
            match name {
                "library" | "require" => self.r_library(i + 1, t.line, name),
                "requireNamespace" => self.r_require_namespace(i + 1, t.line),
                "do.call" => self.diag(t.line, "do.call() target is not resolved statically"),
                _ => {}
            }
        }
    }

    /// First argument of a call opened at `open`, skipping a `package =` name.
    fn r_first_arg(&self, open: usize) -> usize {
        let mut j = self.skip_newlines(open + 1);
        if self.tok(j).is_some_and(|t| t.ident_name() == "package") && self.is_punct(j + 1, "=") {
            j = self.skip_newlines(j + 2);
        }
        j
    }

    fn arg_ends_at(&self, j: usize) -> bool {
        let k = self.skip_newlines(j + 1);
        self.is_punct(k, ")") || self.is_punct(k, ",")
    }

    fn r_library(&mut self, open: usize, line: u32, func: &str) {
        let close = self.matching_paren(open);
        let j = self.r_first_arg(open);
        let Some(arg) = self.tok(j) else { return };
        if j == close {
            return; // library() lists installed packages
        }
        let character_only = (j..close).any(|k| {
            self.toks[k].ident_name() == "character.only"
                && self.is_punct(k + 1, "=")
                && self
                    .tok(k + 2)
                    .is_some_and(|v| v.is_keyword("TRUE") || v.text == "T")
        });
        let resolved = match arg.kind {
            TokenKind::String if self.arg_ends_at(j) => Some(arg.string_value().to_owned()),
            TokenKind::Identifier if self.arg_ends_at(j) && !character_only => {
                Some(arg.ident_name().to_owned())
            }
            _ => None,
        };
        match resolved {
            Some(pkg) if !pkg.is_empty() => {
                self.result.dependencies.insert(pkg);
            }
            _ => self.diag(
                line,
                format!("{func}() argument is computed at run time and was not resolved"),
            ),
        }
    }

    fn r_require_namespace(&mut self, open: usize, line: u32) {
        let j = self.r_first_arg(open);
        match self.tok(j) {
            Some(arg) if arg.kind == TokenKind::String && self.arg_ends_at(j) => {
                let pkg = arg.string_value().to_owned();
                if !pkg.is_empty() {
                    self.result.dependencies.insert(pkg);
                }
            }
            _ => self.diag(
                line,
                "requireNamespace() argument is not a string literal and was not resolved",
            ),
        }
    }

    // ---- Python ----------------------------------------------------------

    fn scan_python(&mut self) {
        let bindings = self.python_imports();
        for i in 0..self.toks.len() {
            let t = self.toks[i];
            if t.kind != TokenKind::Identifier {
                continue;
            }
            let prev = i.checked_sub(1).and_then(|p| self.tok(p));
            if prev.is_some_and(|p| p.is_keyword("def")) {
                self.result
                    .defined_functions
                    .insert(FunctionInfo::defined(t.text.as_str()));
                continue;
            }
            if prev.is_some_and(|p| p.is_keyword("class")) || !self.is_punct(i + 1, "(") {
                continue;
            }
            let binding = if prev.is_some_and(|p| p.is_punct(".")) {
                self.chain_root(i).and_then(|root| bindings.get(root))
            } else {
                bindings.get(t.text.as_str())
            };
            let source = match binding {
                Some(Binding::Package(p)) => Some(p.clone()),
                _ => None,
            };
            let dynamic = t.text == "__import__"
                || (t.text == "import_module" && source.as_deref() == Some("importlib"));
            if dynamic {
                self.diag(t.line, format!("dynamic import via {}() is not resolved", t.text));
            }
            self.call(&t.text, source);
        }
    }

    /// Root identifier of an attribute chain `a.b.c` ending at `i`, if the
    /// chain starts with a bare name.
    fn chain_root(&self, i: usize) -> Option<&'t str> {
        let mut j = i;
        let mut root = None;
        while j >= 2 && self.is_punct(j - 1, ".") {
            if self.is_ident(j - 2) {
                root = Some(self.toks[j - 2].text.as_str());
                j -= 2;
            } else {
                return None;
            }
        }
        if j >= 1 && self.is_punct(j - 1, ".") {
            return None;
        }
        root
    }

    /// Parse a dotted module path starting at `i`; returns (path, next index).
    fn dotted_name(&self, mut i: usize) -> Option<(String, usize)> {
        let mut parts = Vec::new();
        loop {
            let t = self.tok(i).filter(|t| t.kind == TokenKind::Identifier)?;
            parts.push(t.text.as_str());
            i += 1;
            if self.is_punct(i, ".") && self.is_ident(i + 1) {
                i += 1;
            } else {
                return Some((parts.join("."), i));
            }
        }
    }

    fn python_imports(&mut self) -> BTreeMap<String, Binding> {
        let mut bindings = BTreeMap::new();
        let mut i = 0;
        while i < self.toks.len() {
            let t = self.toks[i];
            if t.is_keyword("import") {
                i = self.python_import_list(i + 1, &mut bindings);
            } else if t.is_keyword("from") {
                i = self.python_from_import(i + 1, &mut bindings);
            } else {
                i += 1;
            }
        }
        bindings
    }

    fn python_import_list(&mut self, mut i: usize, bindings: &mut BTreeMap<String, Binding>) -> usize {
        loop {
            let Some((module, next)) = self.dotted_name(i) else {
                return i;
            };
            let top = module.split('.').next().unwrap_or_default().to_owned();
            self.result.dependencies.insert(top.clone());
            i = next;
            if self.tok(i).is_some_and(|t| t.is_keyword("as")) && self.is_ident(i + 1) {
                bindings.insert(self.toks[i + 1].text.clone(), Binding::Package(top));
                i += 2;
            } else {
                bindings.insert(top.clone(), Binding::Package(top));
            }
            if self.is_punct(i, ",") {
                i += 1;
            } else {
                return i;
            }
        }
    }

    fn python_from_import(&mut self, mut i: usize, bindings: &mut BTreeMap<String, Binding>) -> usize {
        let mut dots = String::new();
        while let Some(t) = self.tok(i).filter(|t| t.is_punct(".") || t.is_punct("...")) {
            dots.push_str(&t.text);
            i += 1;
        }
        let (module, next) = match self.dotted_name(i) {
            Some((m, n)) => (m, n),
            None if !dots.is_empty() => (String::new(), i),
            None => return i,
        };
        if !self.tok(next).is_some_and(|t| t.is_keyword("import")) {
            // `raise X from e`, `yield from g`
            return next;
        }
        let binding = if dots.is_empty() {
            let top = module.split('.').next().unwrap_or_default().to_owned();
            self.result.dependencies.insert(top.clone());
            Binding::Package(top)
        } else {
            self.result.local_modules.insert(format!("{dots}{module}"));
            Binding::Local
        };

        i = next + 1;
        let parenthesized = self.is_punct(i, "(");
        if parenthesized {
            i += 1;
        }
        loop {
            if parenthesized {
                i = self.skip_newlines(i);
            }
            let Some(t) = self.tok(i) else { return i };
            if t.is_punct("*") {
                return i + 1;
            }
            if t.kind != TokenKind::Identifier {
                return if parenthesized && t.is_punct(")") { i + 1 } else { i };
            }
            let mut bound = t.text.clone();
            i += 1;
            if self.tok(i).is_some_and(|t| t.is_keyword("as")) && self.is_ident(i + 1) {
                bound = self.toks[i + 1].text.clone();
                i += 2;
            }
            bindings.insert(bound, binding.clone());
            if parenthesized {
                i = self.skip_newlines(i);
            }
            if self.is_punct(i, ",") {
                i += 1;
            } else {
                return if parenthesized && self.is_punct(i, ")") { i + 1 } else { i };
            }
        }
    }
}
