//! Syntax tree of the kernel language used for leaf-node bodies.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Source position of a statement. Positions never take part in structural
/// equality, so a printed and re-parsed program compares equal to the
/// original.
#[derive(Clone, Copy, Debug, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    I32,
    I64,
    F32,
    F64,
    Bool,
}

impl ScalarType {
    pub fn size_bytes(self) -> u32 {
        match self {
            ScalarType::I32 | ScalarType::F32 => 4,
            ScalarType::I64 | ScalarType::F64 => 8,
            ScalarType::Bool => 1,
        }
    }

    pub fn is_int(self) -> bool {
        matches!(self, ScalarType::I32 | ScalarType::I64)
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }

    pub fn is_numeric(self) -> bool {
        self.is_int() || self.is_float()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarType::I32 => "i32",
            ScalarType::I64 => "i64",
            ScalarType::F32 => "f32",
            ScalarType::F64 => "f64",
            ScalarType::Bool => "bool",
        }
    }

    pub fn from_name(name: &str) -> Option<ScalarType> {
        Some(match name {
            "i32" => ScalarType::I32,
            "i64" => ScalarType::I64,
            "f32" => ScalarType::F32,
            "f64" => ScalarType::F64,
            "bool" => ScalarType::Bool,
            _ => return None,
        })
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What flows through a port or lives in a variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Scalar(ScalarType),
    /// Reference to a buffer of the given element type.
    Buffer(ScalarType),
}

impl ValueKind {
    pub fn is_buffer(self) -> bool {
        matches!(self, ValueKind::Buffer(_))
    }

    pub fn is_int_scalar(self) -> bool {
        matches!(self, ValueKind::Scalar(t) if t.is_int())
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueKind::Scalar(t) => write!(f, "{t}"),
            ValueKind::Buffer(t) => write!(f, "buf<{t}>"),
        }
    }
}

/// Declared direction of data through a buffer argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    In,
    Out,
    InOut,
}

impl AccessMode {
    pub fn reads(self) -> bool {
        matches!(self, AccessMode::In | AccessMode::InOut)
    }

    pub fn writes(self) -> bool {
        matches!(self, AccessMode::Out | AccessMode::InOut)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            AccessMode::In => "in",
            AccessMode::Out => "out",
            AccessMode::InOut => "inout",
        }
    }

    /// Union of two modes.
    pub fn join(self, other: AccessMode) -> AccessMode {
        if self == other {
            self
        } else {
            AccessMode::InOut
        }
    }
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ValueKind,
    /// Present iff `kind` is a buffer.
    pub mode: Option<AccessMode>,
}

impl Param {
    pub fn scalar(name: impl Into<String>, ty: ScalarType) -> Self {
        Param {
            name: name.into(),
            kind: ValueKind::Scalar(ty),
            mode: None,
        }
    }

    pub fn buffer(name: impl Into<String>, elem: ScalarType, mode: AccessMode) -> Self {
        Param {
            name: name.into(),
            kind: ValueKind::Buffer(elem),
            mode: Some(mode),
        }
    }
}

/// Grid dimension selector for the query intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dim {
    X,
    Y,
    Z,
}

impl Dim {
    pub fn index(self) -> usize {
        match self {
            Dim::X => 0,
            Dim::Y => 1,
            Dim::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dim::X => "x",
            Dim::Y => "y",
            Dim::Z => "z",
        }
    }

    pub fn from_index(i: usize) -> Option<Dim> {
        [Dim::X, Dim::Y, Dim::Z].get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    BitAnd,
    BitOr,
    BitXor,
    Shl,
    Shr,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::BitAnd => "&",
            BinOp::BitOr => "|",
            BinOp::BitXor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::BitOr => 4,
            BinOp::BitXor => 5,
            BinOp::BitAnd => 6,
            BinOp::Shl | BinOp::Shr => 7,
            BinOp::Add | BinOp::Sub => 8,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 9,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    Min,
    Max,
    Abs,
    Sqrt,
    /// Element count of a buffer.
    Len,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Min => "min",
            Builtin::Max => "max",
            Builtin::Abs => "abs",
            Builtin::Sqrt => "sqrt",
            Builtin::Len => "len",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Some(match name {
            "min" => Builtin::Min,
            "max" => Builtin::Max,
            "abs" => Builtin::Abs,
            "sqrt" => Builtin::Sqrt,
            "len" => Builtin::Len,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Min | Builtin::Max => 2,
            Builtin::Abs | Builtin::Sqrt | Builtin::Len => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AtomicOp {
    Add,
    Sub,
    Exchange,
    Min,
    Max,
    And,
    Or,
    Xor,
}

impl AtomicOp {
    pub fn name(self) -> &'static str {
        match self {
            AtomicOp::Add => "atomic_add",
            AtomicOp::Sub => "atomic_sub",
            AtomicOp::Exchange => "atomic_xchg",
            AtomicOp::Min => "atomic_min",
            AtomicOp::Max => "atomic_max",
            AtomicOp::And => "atomic_and",
            AtomicOp::Or => "atomic_or",
            AtomicOp::Xor => "atomic_xor",
        }
    }

    pub fn from_name(name: &str) -> Option<AtomicOp> {
        Some(match name {
            "atomic_add" => AtomicOp::Add,
            "atomic_sub" => AtomicOp::Sub,
            "atomic_xchg" => AtomicOp::Exchange,
            "atomic_min" => AtomicOp::Min,
            "atomic_max" => AtomicOp::Max,
            "atomic_and" => AtomicOp::And,
            "atomic_or" => AtomicOp::Or,
            "atomic_xor" => AtomicOp::Xor,
            _ => return None,
        })
    }
}

/// Calls into the runtime that are available inside leaf kernels.
#[derive(Clone, Debug, PartialEq)]
pub enum Intrinsic {
    /// Index of the executing instance in `dim`, `depth` levels up the
    /// hierarchy (0 = the leaf itself).
    InstanceId {
        dim: Dim,
        depth: u32,
    },
    NumInstances {
        dim: Dim,
        depth: u32,
    },
    NumDims {
        depth: u32,
    },
    VectorLength {
        type_size: Box<Expr>,
    },
    Malloc {
        elem: ScalarType,
        bytes: Box<Expr>,
    },
    Atomic {
        op: AtomicOp,
        buffer: Box<Expr>,
        index: Box<Expr>,
        value: Box<Expr>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Int { value: i64, ty: ScalarType },
    Float { value: f64, ty: ScalarType },
    Bool(bool),
    Var(String),
    Load { buffer: Box<Expr>, index: Box<Expr> },
    Unary { op: UnOp, operand: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Cast { ty: ScalarType, operand: Box<Expr> },
    Builtin { func: Builtin, args: Vec<Expr> },
    Intrinsic(Intrinsic),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn i32(value: i32) -> Expr {
        Expr::Int {
            value: value as i64,
            ty: ScalarType::I32,
        }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Visits this expression and every sub-expression, parents first.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Int { .. } | Expr::Float { .. } | Expr::Bool(_) | Expr::Var(_) => {}
            Expr::Load { buffer, index } => {
                buffer.walk(f);
                index.walk(f);
            }
            Expr::Unary { operand, .. } | Expr::Cast { operand, .. } => operand.walk(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Builtin { args, .. } => args.iter().for_each(|a| a.walk(f)),
            Expr::Intrinsic(i) => match i {
                Intrinsic::InstanceId { .. } | Intrinsic::NumInstances { .. } | Intrinsic::NumDims { .. } => {}
                Intrinsic::VectorLength { type_size } => type_size.walk(f),
                Intrinsic::Malloc { bytes, .. } => bytes.walk(f),
                Intrinsic::Atomic {
                    buffer, index, value, ..
                } => {
                    buffer.walk(f);
                    index.walk(f);
                    value.walk(f);
                }
            },
        }
    }

    /// Rewrites every variable name in place.
    pub fn rename_vars(&mut self, rename: &impl Fn(&str) -> Option<String>) {
        match self {
            Expr::Var(name) => {
                if let Some(n) = rename(name) {
                    *name = n;
                }
            }
            Expr::Int { .. } | Expr::Float { .. } | Expr::Bool(_) => {}
            Expr::Load { buffer, index } => {
                buffer.rename_vars(rename);
                index.rename_vars(rename);
            }
            Expr::Unary { operand, .. } | Expr::Cast { operand, .. } => operand.rename_vars(rename),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.rename_vars(rename);
                rhs.rename_vars(rename);
            }
            Expr::Builtin { args, .. } => args.iter_mut().for_each(|a| a.rename_vars(rename)),
            Expr::Intrinsic(i) => match i {
                Intrinsic::InstanceId { .. } | Intrinsic::NumInstances { .. } | Intrinsic::NumDims { .. } => {}
                Intrinsic::VectorLength { type_size } => type_size.rename_vars(rename),
                Intrinsic::Malloc { bytes, .. } => bytes.rename_vars(rename),
                Intrinsic::Atomic {
                    buffer, index, value, ..
                } => {
                    buffer.rename_vars(rename);
                    index.rename_vars(rename);
                    value.rename_vars(rename);
                }
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Let {
        name: String,
        ty: Option<ValueKind>,
        value: Expr,
        span: Span,
    },
    Assign {
        name: String,
        value: Expr,
        span: Span,
    },
    Store {
        buffer: Expr,
        index: Expr,
        value: Expr,
        span: Span,
    },
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
        span: Span,
    },
    /// `for var in start..end`; the end bound is evaluated once.
    For {
        var: String,
        start: Expr,
        end: Expr,
        body: Vec<Stmt>,
        span: Span,
    },
    Barrier {
        span: Span,
    },
    /// Call of an auxiliary routine; results are bound to fresh locals.
    Call {
        dests: Vec<String>,
        routine: String,
        args: Vec<Expr>,
        span: Span,
    },
    Expr {
        expr: Expr,
        span: Span,
    },
    /// Only legal as the final top-level statement of a routine.
    Return {
        values: Vec<Expr>,
        span: Span,
    },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::Let { span, .. }
            | Stmt::Assign { span, .. }
            | Stmt::Store { span, .. }
            | Stmt::If { span, .. }
            | Stmt::For { span, .. }
            | Stmt::Barrier { span }
            | Stmt::Call { span, .. }
            | Stmt::Expr { span, .. }
            | Stmt::Return { span, .. } => *span,
        }
    }

    /// Visits every expression directly owned by this statement (not nested
    /// statements).
    pub fn exprs(&self) -> Vec<&Expr> {
        match self {
            Stmt::Let { value, .. } | Stmt::Assign { value, .. } => vec![value],
            Stmt::Store {
                buffer, index, value, ..
            } => vec![buffer, index, value],
            Stmt::If { cond, .. } => vec![cond],
            Stmt::For { start, end, .. } => vec![start, end],
            Stmt::Barrier { .. } => vec![],
            Stmt::Call { args, .. } => args.iter().collect(),
            Stmt::Expr { expr, .. } => vec![expr],
            Stmt::Return { values, .. } => values.iter().collect(),
        }
    }
}

/// Visits every statement in `body`, including nested blocks, in program order.
pub fn walk_stmts<'a>(body: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
    for s in body {
        f(s);
        match s {
            Stmt::If {
                then_body, else_body, ..
            } => {
                walk_stmts(then_body, f);
                walk_stmts(else_body, f);
            }
            Stmt::For { body, .. } => walk_stmts(body, f),
            _ => {}
        }
    }
}

/// A named body with parameters and an output record.
#[derive(Clone, Debug, PartialEq)]
pub struct Routine {
    pub name: String,
    pub params: Vec<Param>,
    pub outputs: Vec<ValueKind>,
    pub body: Vec<Stmt>,
}

impl Routine {
    pub fn param(&self, name: &str) -> Option<(usize, &Param)> {
        self.params.iter().enumerate().find(|(_, p)| p.name == name)
    }
}

/// Body of a leaf node: an entry routine plus auxiliary routines it may call.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelProgram {
    pub entry: Routine,
    pub aux: Vec<Routine>,
}

impl KernelProgram {
    pub fn new(entry: Routine) -> Self {
        KernelProgram { entry, aux: Vec::new() }
    }

    pub fn name(&self) -> &str {
        &self.entry.name
    }

    pub fn params(&self) -> &[Param] {
        &self.entry.params
    }

    pub fn outputs(&self) -> &[ValueKind] {
        &self.entry.outputs
    }

    pub fn aux_routine(&self, name: &str) -> Option<&Routine> {
        self.aux.iter().find(|r| r.name == name)
    }

    /// Entry first, then auxiliary routines in declaration order.
    pub fn routines(&self) -> impl Iterator<Item = &Routine> {
        std::iter::once(&self.entry).chain(self.aux.iter())
    }

    /// True if any routine calls the `malloc` intrinsic.
    pub fn allocates(&self) -> bool {
        let mut found = false;
        for r in self.routines() {
            walk_stmts(&r.body, &mut |s| {
                for e in s.exprs() {
                    e.walk(&mut |e| {
                        if matches!(e, Expr::Intrinsic(Intrinsic::Malloc { .. })) {
                            found = true;
                        }
                    });
                }
            });
        }
        found
    }
}
