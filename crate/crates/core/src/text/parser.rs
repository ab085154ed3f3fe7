use std::collections::HashSet;
use std::sync::Arc;

use super::lexer::{lex, Tok, Token};
use super::{ParseError, ParseRule};
use crate::document::IrDocument;
use crate::graph::{
    BindDirection, Binding, DFEdge, DFGraph, DFNode, Extent, NodeId, NodeKind, Port, Replication, TargetHint,
};
use crate::kernel::*;

const RESERVED: &[&str] = &[
    "kernel", "aux", "graph", "internal", "leaf", "edge", "bind", "let", "if", "else", "for", "in", "out", "inout",
    "return", "call", "barrier", "true", "false", "buf",
];

/// Parses a document holding any number of kernels and graphs.
pub fn parse_document(src: &str) -> Result<IrDocument, ParseError> {
    let mut p = Parser::new(src)?;
    let mut doc = IrDocument::new();
    let mut graphs = Vec::new();
    loop {
        let span = p.span();
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(w) if w == "kernel" => {
                let k = p.kernel()?;
                if doc.kernel(k.name()).is_some() {
                    return Err(ParseError::new(
                        ParseRule::DuplicateDefinition,
                        span,
                        format!("kernel `{}` is defined twice", k.name()),
                    ));
                }
                doc.add_kernel(Arc::new(k));
            }
            Tok::Ident(w) if w == "graph" => graphs.push(p.graph()?),
            t => return Err(p.syntax(format!("expected `kernel` or `graph`, found {}", t.describe()))),
        }
    }
    for raw in graphs {
        if doc.graph(&raw.name).is_some() {
            return Err(ParseError::new(
                ParseRule::DuplicateDefinition,
                raw.span,
                format!("graph `{}` is defined twice", raw.name),
            ));
        }
        let g = build_graph(&doc, raw)?;
        doc.add_graph(g);
    }
    Ok(doc)
}

/// Parses a single kernel definition.
pub fn parse_kernel(src: &str) -> Result<KernelProgram, ParseError> {
    let mut p = Parser::new(src)?;
    let k = p.kernel()?;
    p.expect(Tok::Eof)?;
    Ok(k)
}

enum PortName {
    Index(usize),
    Name(String),
}

struct PortRef {
    node: String,
    port: PortName,
    span: Span,
}

struct RawEdge {
    src: PortRef,
    dst: PortRef,
    replication: Replication,
    streaming: bool,
}

struct RawBind {
    direction: BindDirection,
    parent_port: PortName,
    child: PortRef,
    streaming: bool,
    span: Span,
}

enum RawKind {
    Leaf {
        kernel: String,
        kernel_span: Span,
    },
    Internal {
        params: Vec<Param>,
        outputs: Vec<ValueKind>,
        items: Vec<RawItem>,
    },
}

struct RawNode {
    name: String,
    span: Span,
    kind: RawKind,
    grid: Option<Vec<(Extent, Span)>>,
    target: Option<TargetHint>,
    fuse: bool,
}

enum RawItem {
    Node(RawNode),
    Edge(RawEdge),
    Bind(RawBind),
    Stmt(Stmt),
}

struct RawGraph {
    name: String,
    span: Span,
    root: RawNode,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, message: impl Into<String>) -> ParseError {
        ParseError::new(ParseRule::Syntax, self.span(), message)
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if *self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump().span)
        } else {
            let want = match &tok {
                Tok::Eof => "end of input".to_string(),
                t => t.describe(),
            };
            Err(self.syntax(format!("expected {want}, found {}", self.peek().describe())))
        }
    }

    fn is_word(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == word)
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.is_word(word) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, word: &str) -> Result<Span, ParseError> {
        if self.is_word(word) {
            Ok(self.bump().span)
        } else {
            Err(self.syntax(format!("expected `{word}`, found {}", self.peek().describe())))
        }
    }

    /// Any identifier, including reserved words.
    fn word(&mut self) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(w) => {
                let span = self.bump().span;
                Ok((w, span))
            }
            t => Err(self.syntax(format!("expected an identifier, found {}", t.describe()))),
        }
    }

    /// A user-chosen name.
    fn name(&mut self) -> Result<(String, Span), ParseError> {
        let span = self.span();
        let (w, s) = self.word()?;
        if RESERVED.contains(&w.as_str()) {
            return Err(ParseError::new(
                ParseRule::Syntax,
                span,
                format!("`{w}` is a reserved word"),
            ));
        }
        Ok((w, s))
    }

    fn small_int(&mut self) -> Result<u32, ParseError> {
        match self.peek().clone() {
            Tok::Int(v, None) if v <= u32::MAX as u64 => {
                self.bump();
                Ok(v as u32)
            }
            t => Err(self.syntax(format!("expected a small integer, found {}", t.describe()))),
        }
    }

    fn scalar_type(&mut self) -> Result<ScalarType, ParseError> {
        let span = self.span();
        let (w, _) = self.word()?;
        ScalarType::from_name(&w).ok_or_else(|| ParseError::new(ParseRule::Syntax, span, format!("unknown type `{w}`")))
    }

    fn value_kind(&mut self) -> Result<ValueKind, ParseError> {
        if self.eat_word("buf") {
            self.expect(Tok::Lt)?;
            let t = self.scalar_type()?;
            self.expect(Tok::Gt)?;
            Ok(ValueKind::Buffer(t))
        } else {
            Ok(ValueKind::Scalar(self.scalar_type()?))
        }
    }

    fn params(&mut self) -> Result<Vec<Param>, ParseError> {
        self.expect(Tok::LParen)?;
        let mut params: Vec<Param> = Vec::new();
        if !self.eat(Tok::RParen) {
            loop {
                let mode = if self.eat_word("in") {
                    Some(AccessMode::In)
                } else if self.eat_word("out") {
                    Some(AccessMode::Out)
                } else if self.eat_word("inout") {
                    Some(AccessMode::InOut)
                } else {
                    None
                };
                let (name, span) = self.name()?;
                self.expect(Tok::Colon)?;
                let kind = self.value_kind()?;
                if params.iter().any(|p| p.name == name) {
                    return Err(ParseError::new(
                        ParseRule::DuplicateDefinition,
                        span,
                        format!("parameter `{name}` is declared twice"),
                    ));
                }
                params.push(Param { name, kind, mode });
                if self.eat(Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(params)
    }

    fn outputs(&mut self) -> Result<Vec<ValueKind>, ParseError> {
        if !self.eat(Tok::Arrow) {
            return Ok(Vec::new());
        }
        self.expect(Tok::LParen)?;
        let mut out = Vec::new();
        if !self.eat(Tok::RParen) {
            loop {
                out.push(self.value_kind()?);
                if self.eat(Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(out)
    }

    fn kernel(&mut self) -> Result<KernelProgram, ParseError> {
        self.expect_word("kernel")?;
        let (name, _) = self.name()?;
        let params = self.params()?;
        let outputs = self.outputs()?;
        self.expect(Tok::LBrace)?;
        let mut aux: Vec<Routine> = Vec::new();
        while self.is_word("aux") {
            let span = self.bump().span;
            let (aux_name, _) = self.name()?;
            if aux_name == name || aux.iter().any(|r| r.name == aux_name) {
                return Err(ParseError::new(
                    ParseRule::DuplicateDefinition,
                    span,
                    format!("routine `{aux_name}` is defined twice"),
                ));
            }
            let params = self.params()?;
            let outputs = self.outputs()?;
            let body = self.block()?;
            aux.push(Routine {
                name: aux_name,
                params,
                outputs,
                body,
            });
        }
        let mut body = Vec::new();
        while !self.eat(Tok::RBrace) {
            body.push(self.stmt()?);
        }
        let kernel = KernelProgram {
            entry: Routine {
                name,
                params,
                outputs,
                body,
            },
            aux,
        };
        for r in kernel.routines() {
            let mut missing = None;
            walk_stmts(&r.body, &mut |s| {
                if let Stmt::Call { routine, span, .. } = s {
                    if missing.is_none() && kernel.aux_routine(routine).is_none() {
                        missing = Some((routine.clone(), *span));
                    }
                }
            });
            if let Some((routine, span)) = missing {
                return Err(ParseError::new(
                    ParseRule::UnknownReference,
                    span,
                    format!("call of undefined routine `{routine}`"),
                ));
            }
        }
        Ok(kernel)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut body = Vec::new();
        while !self.eat(Tok::RBrace) {
            body.push(self.stmt()?);
        }
        Ok(body)
    }

    fn call_tail(&mut self, dests: Vec<String>, span: Span) -> Result<Stmt, ParseError> {
        self.expect_word("call")?;
        let (routine, _) = self.name()?;
        let args = self.args()?;
        self.expect(Tok::Semi)?;
        Ok(Stmt::Call {
            dests,
            routine,
            args,
            span,
        })
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if !self.eat(Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if self.eat(Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(args)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.span();
        if self.eat_word("let") {
            if self.eat(Tok::LParen) {
                let mut dests = Vec::new();
                if !self.eat(Tok::RParen) {
                    loop {
                        dests.push(self.name()?.0);
                        if self.eat(Tok::RParen) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                self.expect(Tok::Assign)?;
                return self.call_tail(dests, span);
            }
            let (name, _) = self.name()?;
            let ty = if self.eat(Tok::Colon) {
                Some(self.value_kind()?)
            } else {
                None
            };
            self.expect(Tok::Assign)?;
            let value = self.expr()?;
            self.expect(Tok::Semi)?;
            return Ok(Stmt::Let { name, ty, value, span });
        }
        if self.is_word("call") {
            return self.call_tail(Vec::new(), span);
        }
        if self.eat_word("if") {
            return self.if_tail(span);
        }
        if self.eat_word("for") {
            let (var, _) = self.name()?;
            self.expect_word("in")?;
            let start = self.expr()?;
            self.expect(Tok::DotDot)?;
            let end = self.expr()?;
            let body = self.block()?;
            return Ok(Stmt::For {
                var,
                start,
                end,
                body,
                span,
            });
        }
        if self.is_word("barrier") && *self.peek_at(1) == Tok::LParen {
            self.bump();
            self.expect(Tok::LParen)?;
            self.expect(Tok::RParen)?;
            self.expect(Tok::Semi)?;
            return Ok(Stmt::Barrier { span });
        }
        if self.eat_word("return") {
            let mut values = Vec::new();
            if !self.eat(Tok::Semi) {
                values = self.args()?;
                self.expect(Tok::Semi)?;
            }
            return Ok(Stmt::Return { values, span });
        }
        let lhs = self.expr()?;
        if self.eat(Tok::Assign) {
            let value = self.expr()?;
            self.expect(Tok::Semi)?;
            return match lhs {
                Expr::Var(name) => Ok(Stmt::Assign { name, value, span }),
                Expr::Load { buffer, index } => Ok(Stmt::Store {
                    buffer: *buffer,
                    index: *index,
                    value,
                    span,
                }),
                _ => Err(ParseError::new(ParseRule::Syntax, span, "invalid assignment target")),
            };
        }
        self.expect(Tok::Semi)?;
        Ok(Stmt::Expr { expr: lhs, span })
    }

    fn if_tail(&mut self, span: Span) -> Result<Stmt, ParseError> {
        let cond = self.expr()?;
        let then_body = self.block()?;
        let else_body = if self.eat_word("else") {
            if self.is_word("if") {
                let s = self.bump().span;
                vec![self.if_tail(s)?]
            } else {
                self.block()?
            }
        } else {
            Vec::new()
        };
        Ok(Stmt::If {
            cond,
            then_body,
            else_body,
            span,
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn peek_binop(&self) -> Option<BinOp> {
        Some(match self.peek() {
            Tok::OrOr => BinOp::Or,
            Tok::AndAnd => BinOp::And,
            Tok::Eq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::Pipe => BinOp::BitOr,
            Tok::Caret => BinOp::BitXor,
            Tok::Amp => BinOp::BitAnd,
            Tok::Shl => BinOp::Shl,
            Tok::Shr => BinOp::Shr,
            Tok::Plus => BinOp::Add,
            Tok::Minus => BinOp::Sub,
            Tok::Star => BinOp::Mul,
            Tok::Slash => BinOp::Div,
            Tok::Percent => BinOp::Rem,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_binop() {
            if op.precedence() < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(Tok::Minus) {
            match self.peek().clone() {
                Tok::Int(v, ty) => {
                    let span = self.bump().span;
                    let value = if v == 1 << 63 {
                        i64::MIN
                    } else {
                        -i64::try_from(v).map_err(|_| int_too_large(span, v))?
                    };
                    return Ok(Expr::Int {
                        value,
                        ty: ty.unwrap_or(ScalarType::I32),
                    });
                }
                Tok::Float(v, ty) => {
                    self.bump();
                    return Ok(Expr::Float {
                        value: -v,
                        ty: ty.unwrap_or(ScalarType::F32),
                    });
                }
                _ => {
                    let operand = self.unary()?;
                    return Ok(Expr::Unary {
                        op: UnOp::Neg,
                        operand: Box::new(operand),
                    });
                }
            }
        }
        if self.eat(Tok::Bang) {
            let operand = self.unary()?;
            return Ok(Expr::Unary {
                op: UnOp::Not,
                operand: Box::new(operand),
            });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        while self.eat(Tok::LBracket) {
            let index = self.expr()?;
            self.expect(Tok::RBracket)?;
            e = Expr::Load {
                buffer: Box::new(e),
                index: Box::new(index),
            };
        }
        Ok(e)
    }

    fn dim(&mut self) -> Result<Dim, ParseError> {
        let span = self.span();
        let (w, _) = self.word()?;
        match w.as_str() {
            "x" => Ok(Dim::X),
            "y" => Ok(Dim::Y),
            "z" => Ok(Dim::Z),
            _ => Err(ParseError::new(
                ParseRule::Syntax,
                span,
                format!("expected a dimension `x`, `y` or `z`, found `{w}`"),
            )),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v, ty) => {
                self.bump();
                let value = i64::try_from(v).map_err(|_| int_too_large(span, v))?;
                Ok(Expr::Int {
                    value,
                    ty: ty.unwrap_or(ScalarType::I32),
                })
            }
            Tok::Float(v, ty) => {
                self.bump();
                Ok(Expr::Float {
                    value: v,
                    ty: ty.unwrap_or(ScalarType::F32),
                })
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(w) => {
                let called = *self.peek_at(1) == Tok::LParen;
                match w.as_str() {
                    "true" => {
                        self.bump();
                        Ok(Expr::Bool(true))
                    }
                    "false" => {
                        self.bump();
                        Ok(Expr::Bool(false))
                    }
                    _ if called && ScalarType::from_name(&w).is_some_and(|t| t.is_numeric()) => {
                        self.bump();
                        self.expect(Tok::LParen)?;
                        let operand = self.expr()?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Cast {
                            ty: ScalarType::from_name(&w).unwrap(),
                            operand: Box::new(operand),
                        })
                    }
                    "instance_id" | "num_instances" if called => {
                        self.bump();
                        self.expect(Tok::LParen)?;
                        let dim = self.dim()?;
                        let depth = if self.eat(Tok::Comma) { self.small_int()? } else { 0 };
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Intrinsic(if w == "instance_id" {
                            Intrinsic::InstanceId { dim, depth }
                        } else {
                            Intrinsic::NumInstances { dim, depth }
                        }))
                    }
                    "num_dims" if called => {
                        self.bump();
                        self.expect(Tok::LParen)?;
                        let depth = if *self.peek() == Tok::RParen {
                            0
                        } else {
                            self.small_int()?
                        };
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Intrinsic(Intrinsic::NumDims { depth }))
                    }
                    "vector_length" if called => {
                        self.bump();
                        self.expect(Tok::LParen)?;
                        let e = self.expr()?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Intrinsic(Intrinsic::VectorLength { type_size: Box::new(e) }))
                    }
                    "malloc" => {
                        self.bump();
                        self.expect(Tok::Lt)?;
                        let elem = self.scalar_type()?;
                        self.expect(Tok::Gt)?;
                        self.expect(Tok::LParen)?;
                        let bytes = self.expr()?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Intrinsic(Intrinsic::Malloc {
                            elem,
                            bytes: Box::new(bytes),
                        }))
                    }
                    _ if called && AtomicOp::from_name(&w).is_some() => {
                        self.bump();
                        let args = self.args()?;
                        let [buffer, index, value]: [Expr; 3] = args.try_into().map_err(|a: Vec<Expr>| {
                            ParseError::new(
                                ParseRule::Syntax,
                                span,
                                format!("`{w}` takes 3 arguments, {} given", a.len()),
                            )
                        })?;
                        Ok(Expr::Intrinsic(Intrinsic::Atomic {
                            op: AtomicOp::from_name(&w).unwrap(),
                            buffer: Box::new(buffer),
                            index: Box::new(index),
                            value: Box::new(value),
                        }))
                    }
                    _ if called && Builtin::from_name(&w).is_some() => {
                        self.bump();
                        let args = self.args()?;
                        Ok(Expr::Builtin {
                            func: Builtin::from_name(&w).unwrap(),
                            args,
                        })
                    }
                    _ if called => Err(ParseError::new(
                        ParseRule::UnknownReference,
                        span,
                        format!("unknown function `{w}`; auxiliary routines are invoked with `call`"),
                    )),
                    _ => {
                        let (name, _) = self.name()?;
                        Ok(Expr::Var(name))
                    }
                }
            }
            t => Err(self.syntax(format!("expected an expression, found {}", t.describe()))),
        }
    }

    fn graph(&mut self) -> Result<RawGraph, ParseError> {
        let span = self.expect_word("graph")?;
        let (name, _) = self.name()?;
        self.expect(Tok::LBrace)?;
        if !self.is_word("internal") {
            return Err(self.syntax(format!(
                "a graph body is a single `internal` root node, found {}",
                self.peek().describe()
            )));
        }
        let root = self.internal(true)?;
        self.expect(Tok::RBrace)?;
        Ok(RawGraph { name, span, root })
    }

    fn grid(&mut self, required: bool) -> Result<Option<Vec<(Extent, Span)>>, ParseError> {
        if !self.is_word("grid") {
            if required {
                return Err(self.syntax(format!("expected `grid`, found {}", self.peek().describe())));
            }
            return Ok(None);
        }
        self.bump();
        self.expect(Tok::LParen)?;
        let mut extents = Vec::new();
        if !self.eat(Tok::RParen) {
            loop {
                let span = self.span();
                let e = match self.peek().clone() {
                    Tok::Int(v, None) if v <= u32::MAX as u64 => {
                        self.bump();
                        Extent::Const(v as u32)
                    }
                    Tok::Ident(_) => Extent::Param(self.name()?.0),
                    t => return Err(self.syntax(format!("expected a grid extent, found {}", t.describe()))),
                };
                extents.push((e, span));
                if self.eat(Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        Ok(Some(extents))
    }

    fn node_attrs(&mut self) -> Result<(Option<TargetHint>, bool), ParseError> {
        let mut target = None;
        let mut fuse = false;
        let mut seen = HashSet::new();
        while let Tok::Ident(w) = self.peek().clone() {
            let span = self.bump().span;
            let malformed = |m: String| ParseError::new(ParseRule::MalformedAttribute, span, m);
            if !seen.insert(w.clone()) {
                return Err(malformed(format!("attribute `{w}` is given twice")));
            }
            match w.as_str() {
                "target" => {
                    if !self.eat(Tok::Assign) {
                        return Err(malformed("expected `target = cpu|gpu|vector`".into()));
                    }
                    let (t, _) = self
                        .word()
                        .map_err(|_| malformed("expected `target = cpu|gpu|vector`".into()))?;
                    target = Some(
                        TargetHint::from_keyword(&t)
                            .ok_or_else(|| malformed(format!("unknown target `{t}`; expected cpu, gpu or vector")))?,
                    );
                }
                "fuse" => fuse = true,
                _ => return Err(malformed(format!("unknown node attribute `{w}`"))),
            }
        }
        Ok((target, fuse))
    }

    fn internal(&mut self, is_root: bool) -> Result<RawNode, ParseError> {
        self.expect_word("internal")?;
        let (name, span) = self.name()?;
        let params = self.params()?;
        let outputs = self.outputs()?;
        let grid = self.grid(!is_root)?;
        let (target, fuse) = self.node_attrs()?;
        self.expect(Tok::LBrace)?;
        let mut items = Vec::new();
        while !self.eat(Tok::RBrace) {
            items.push(self.item()?);
        }
        Ok(RawNode {
            name,
            span,
            kind: RawKind::Internal { params, outputs, items },
            grid,
            target,
            fuse,
        })
    }

    fn port_ref(&mut self) -> Result<PortRef, ParseError> {
        let span = self.span();
        let (node, _) = self.name()?;
        self.expect(Tok::Dot)?;
        let port = self.port_name()?;
        Ok(PortRef { node, port, span })
    }

    fn port_name(&mut self) -> Result<PortName, ParseError> {
        match self.peek().clone() {
            Tok::Int(v, None) => {
                self.bump();
                Ok(PortName::Index(v as usize))
            }
            Tok::Ident(_) => Ok(PortName::Name(self.name()?.0)),
            t => Err(self.syntax(format!("expected a port name or index, found {}", t.describe()))),
        }
    }

    fn item(&mut self) -> Result<RawItem, ParseError> {
        let span = self.span();
        if self.is_word("internal") {
            return Ok(RawItem::Node(self.internal(false)?));
        }
        if self.eat_word("leaf") {
            let (name, span) = self.name()?;
            self.expect(Tok::Assign)?;
            let (kernel, kernel_span) = self.name()?;
            let grid = self.grid(true)?;
            let (target, fuse) = self.node_attrs()?;
            self.expect(Tok::Semi)?;
            return Ok(RawItem::Node(RawNode {
                name,
                span,
                kind: RawKind::Leaf { kernel, kernel_span },
                grid,
                target,
                fuse,
            }));
        }
        if self.eat_word("edge") {
            let src = self.port_ref()?;
            self.expect(Tok::Arrow)?;
            let dst = self.port_ref()?;
            let mut replication = None;
            let mut streaming = false;
            while let Tok::Ident(w) = self.peek().clone() {
                let s = self.bump().span;
                match w.as_str() {
                    "one_to_one" | "all_to_all" if replication.is_none() => {
                        replication = Some(if w == "one_to_one" {
                            Replication::OneToOne
                        } else {
                            Replication::AllToAll
                        })
                    }
                    "stream" if !streaming => streaming = true,
                    _ => {
                        return Err(ParseError::new(
                            ParseRule::MalformedAttribute,
                            s,
                            format!("unexpected edge attribute `{w}`"),
                        ))
                    }
                }
            }
            self.expect(Tok::Semi)?;
            return Ok(RawItem::Edge(RawEdge {
                src,
                dst,
                replication: replication.unwrap_or(Replication::AllToAll),
                streaming,
            }));
        }
        if self.eat_word("bind") {
            let direction = if self.eat_word("in") {
                BindDirection::Input
            } else if self.eat_word("out") {
                BindDirection::Output
            } else {
                return Err(self.syntax("expected `in` or `out` after `bind`"));
            };
            let (parent_port, child) = match direction {
                BindDirection::Input => {
                    let p = self.port_name()?;
                    self.expect(Tok::Arrow)?;
                    (p, self.port_ref()?)
                }
                BindDirection::Output => {
                    let c = self.port_ref()?;
                    self.expect(Tok::Arrow)?;
                    (self.port_name()?, c)
                }
            };
            let mut streaming = false;
            while let Tok::Ident(w) = self.peek().clone() {
                let s = self.bump().span;
                if w == "stream" && !streaming {
                    streaming = true;
                } else {
                    return Err(ParseError::new(
                        ParseRule::MalformedAttribute,
                        s,
                        format!("unexpected binding attribute `{w}`"),
                    ));
                }
            }
            self.expect(Tok::Semi)?;
            return Ok(RawItem::Bind(RawBind {
                direction,
                parent_port,
                child,
                streaming,
                span,
            }));
        }
        Ok(RawItem::Stmt(self.stmt()?))
    }
}

fn int_too_large(span: Span, v: u64) -> ParseError {
    ParseError::new(ParseRule::Syntax, span, format!("integer literal {v} is too large"))
}

fn ports(params: Vec<Param>) -> Vec<Port> {
    params
        .into_iter()
        .map(|p| Port {
            name: p.name,
            kind: p.kind,
            mode: p.mode,
        })
        .collect()
}

fn unknown(span: Span, message: String) -> ParseError {
    ParseError::new(ParseRule::UnknownReference, span, message)
}

struct Pending {
    scope: NodeId,
    item: RawItem,
}

fn build_graph(doc: &IrDocument, raw: RawGraph) -> Result<DFGraph, ParseError> {
    let RawGraph { name, root, .. } = raw;
    let RawKind::Internal { params, outputs, items } = root.kind else {
        unreachable!("root is parsed as an internal node")
    };
    let grid = root
        .grid
        .map_or(vec![Extent::Const(1)], |g| g.into_iter().map(|(e, _)| e).collect());
    let mut g = DFGraph::with_root_grid(name, root.name, ports(params), outputs, grid);
    let rid = g.root();
    g.set_target(rid, root.target).unwrap();
    g.set_fuse(rid, root.fuse).unwrap();

    let mut pending = Vec::new();
    add_items(doc, &mut g, rid, items, &mut pending)?;

    for Pending { scope, item } in pending {
        match item {
            RawItem::Edge(e) => {
                let src = resolve_node(&g, &e.src)?;
                let dst = resolve_node(&g, &e.dst)?;
                let src_port = match e.src.port {
                    PortName::Index(i) => i,
                    PortName::Name(n) => {
                        return Err(unknown(
                            e.src.span,
                            format!("output ports are numbered; `{}.{n}` names no port", e.src.node),
                        ))
                    }
                };
                let dst_port = resolve_input(g.get(dst), e.dst.port, e.dst.span)?;
                g.add_edge_unchecked(DFEdge {
                    src,
                    src_port,
                    dst,
                    dst_port,
                    replication: e.replication,
                    streaming: e.streaming,
                });
            }
            RawItem::Bind(b) => {
                let child = resolve_node(&g, &b.child)?;
                let scope_node = g.get(scope);
                if g.parent(child) != Some(scope) {
                    return Err(unknown(
                        b.child.span,
                        format!("`{}` is not a child of `{}`", b.child.node, scope_node.name),
                    ));
                }
                let (parent_port, child_port) = match b.direction {
                    BindDirection::Input => (
                        resolve_input(scope_node, b.parent_port, b.span)?,
                        resolve_input(g.get(child), b.child.port, b.child.span)?,
                    ),
                    BindDirection::Output => (
                        resolve_output(&scope_node.name, b.parent_port, b.span)?,
                        resolve_output(&b.child.node, b.child.port, b.child.span)?,
                    ),
                };
                g.add_binding_unchecked(Binding {
                    direction: b.direction,
                    child,
                    parent_port,
                    child_port,
                    streaming: b.streaming,
                });
            }
            RawItem::Node(_) | RawItem::Stmt(_) => unreachable!("only connections are deferred"),
        }
    }
    Ok(g)
}

fn resolve_node(g: &DFGraph, r: &PortRef) -> Result<NodeId, ParseError> {
    g.find(&r.node)
        .ok_or_else(|| unknown(r.span, format!("no node named `{}`", r.node)))
}

fn resolve_input(node: &DFNode, port: PortName, span: Span) -> Result<usize, ParseError> {
    match port {
        PortName::Index(i) => Ok(i),
        PortName::Name(n) => node
            .input_index(&n)
            .ok_or_else(|| unknown(span, format!("`{}` has no input `{n}`", node.name))),
    }
}

fn resolve_output(node: &str, port: PortName, span: Span) -> Result<usize, ParseError> {
    match port {
        PortName::Index(i) => Ok(i),
        PortName::Name(n) => Err(unknown(
            span,
            format!("output ports are numbered; `{node}.{n}` names no port"),
        )),
    }
}

fn add_items(
    doc: &IrDocument,
    g: &mut DFGraph,
    scope: NodeId,
    items: Vec<RawItem>,
    pending: &mut Vec<Pending>,
) -> Result<(), ParseError> {
    for item in items {
        match item {
            RawItem::Node(n) => {
                if g.find(&n.name).is_some() {
                    return Err(ParseError::new(
                        ParseRule::DuplicateDefinition,
                        n.span,
                        format!("node `{}` is defined twice", n.name),
                    ));
                }
                let scope_node = g.get(scope);
                let mut grid = Vec::new();
                for (e, span) in n.grid.unwrap_or_default() {
                    if let Extent::Param(p) = &e {
                        if scope_node.input_index(p).is_none() {
                            return Err(unknown(
                                span,
                                format!("grid extent `{p}` is not an input of `{}`", scope_node.name),
                            ));
                        }
                    }
                    grid.push(e);
                }
                let id = match n.kind {
                    RawKind::Leaf { kernel, kernel_span } => {
                        let k = doc
                            .kernel(&kernel)
                            .ok_or_else(|| unknown(kernel_span, format!("no kernel named `{kernel}`")))?
                            .clone();
                        let (inputs, outputs) = DFNode::ports_of_kernel(&k);
                        g.insert_unchecked(scope, n.name, NodeKind::Leaf { kernel: k }, grid, inputs, outputs)
                    }
                    RawKind::Internal { params, outputs, items } => {
                        let kind = NodeKind::Internal {
                            children: Vec::new(),
                            stray_code: Vec::new(),
                        };
                        let id = g.insert_unchecked(scope, n.name, kind, grid, ports(params), outputs);
                        add_items(doc, g, id, items, pending)?;
                        id
                    }
                };
                g.set_target(id, n.target).unwrap();
                g.set_fuse(id, n.fuse).unwrap();
            }
            RawItem::Stmt(s) => {
                if let Some(NodeKind::Internal { stray_code, .. }) = g.node_mut(scope).map(|n| &mut n.kind) {
                    stray_code.push(s);
                }
            }
            item => pending.push(Pending { scope, item }),
        }
    }
    Ok(())
}
