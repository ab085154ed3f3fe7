//! Textual form of documents: parser, printer and DOT export.

mod dot;
mod lexer;
mod parser;
mod printer;

use std::fmt;

use thiserror::Error;

use crate::kernel::Span;

pub use dot::to_dot;
pub use parser::{parse_document, parse_kernel};
pub use printer::{print_document, print_expr, print_graph, print_kernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParseRule {
    Syntax,
    DuplicateDefinition,
    UnknownReference,
    MalformedAttribute,
}

impl ParseRule {
    pub fn id(self) -> &'static str {
        match self {
            ParseRule::Syntax => "syntax",
            ParseRule::DuplicateDefinition => "duplicate-definition",
            ParseRule::UnknownReference => "unknown-reference",
            ParseRule::MalformedAttribute => "malformed-attribute",
        }
    }
}

impl fmt::Display for ParseRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("{line}:{col}: [{rule}] {message}")]
pub struct ParseError {
    pub rule: ParseRule,
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(rule: ParseRule, span: Span, message: impl Into<String>) -> Self {
        ParseError {
            rule,
            line: span.line,
            col: span.col,
            message: message.into(),
        }
    }
}
