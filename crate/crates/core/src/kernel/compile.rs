//! Static checking of kernels and lowering to stack bytecode.
//!
//! Every routine of a kernel compiles to its own code vector. Locals live in
//! numbered slots of the routine's frame; expressions evaluate on an operand
//! stack. Keeping execution state in plain data (program counter, slots,
//! stack) is what lets the scheduler suspend an instance at a barrier and
//! resume it later.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::ast::*;
use super::interp::QueryKind;
use super::memory::Value;

#[derive(Clone, Debug, PartialEq, Error)]
#[error("kernel `{kernel}`, routine `{routine}` at {span}: {message}")]
pub struct KernelError {
    pub kernel: String,
    pub routine: String,
    pub span: Span,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    Push(Value),
    Load(u32),
    Store(u32),
    Pop,
    Dup,
    Bin(BinOp, ScalarType),
    Neg(ScalarType),
    Not(ScalarType),
    Cast(ScalarType, ScalarType),
    Builtin(Builtin, ScalarType),
    BufLoad,
    BufStore,
    Jump(u32),
    JumpIfFalse(u32),
    JumpIfTrue(u32),
    Query(QueryKind, Dim, u32),
    NumDims(u32),
    VectorLength,
    Malloc(ScalarType),
    Atomic(AtomicOp),
    Barrier,
    Call { routine: u32, args: u32 },
    Return(u32),
}

#[derive(Clone, Debug)]
pub(crate) struct CompiledRoutine {
    pub n_params: usize,
    pub n_slots: usize,
    pub code: Vec<Op>,
}

/// A type-checked kernel ready for interpretation.
#[derive(Clone, Debug)]
pub struct CompiledKernel {
    pub(crate) routines: Vec<CompiledRoutine>,
    params: Vec<Param>,
    outputs: Vec<ValueKind>,
    name: String,
    uses_barrier: bool,
}

impl CompiledKernel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn outputs(&self) -> &[ValueKind] {
        &self.outputs
    }

    pub fn uses_barrier(&self) -> bool {
        self.uses_barrier
    }
}

/// Type-checks `kernel` and lowers it to bytecode.
pub fn compile(kernel: &KernelProgram) -> Result<CompiledKernel, KernelError> {
    let mut index = HashMap::new();
    for (i, r) in kernel.routines().enumerate() {
        if index.insert(r.name.as_str(), i as u32).is_some() {
            return Err(err(
                kernel,
                r,
                Span::default(),
                format!("duplicate routine `{}`", r.name),
            ));
        }
    }
    check_call_graph(kernel)?;

    let mut routines = Vec::new();
    let mut uses_barrier = false;
    for r in kernel.routines() {
        let mut c = RoutineCompiler::new(kernel, r, &index);
        c.compile()?;
        uses_barrier |= c.code.contains(&Op::Barrier);
        routines.push(CompiledRoutine {
            n_params: r.params.len(),
            n_slots: c.n_slots as usize,
            code: c.code,
        });
    }
    Ok(CompiledKernel {
        routines,
        params: kernel.entry.params.clone(),
        outputs: kernel.entry.outputs.clone(),
        name: kernel.entry.name.clone(),
        uses_barrier,
    })
}

/// Type-checks without keeping the bytecode.
pub fn check(kernel: &KernelProgram) -> Result<(), KernelError> {
    compile(kernel).map(|_| ())
}

fn err(kernel: &KernelProgram, routine: &Routine, span: Span, message: String) -> KernelError {
    KernelError {
        kernel: kernel.entry.name.clone(),
        routine: routine.name.clone(),
        span,
        message,
    }
}

/// Names of the auxiliary routines called from `body`.
pub(crate) fn callees(body: &[Stmt]) -> Vec<&str> {
    let mut out = Vec::new();
    walk_stmts(body, &mut |s| {
        if let Stmt::Call { routine, .. } = s {
            out.push(routine.as_str());
        }
    });
    out
}

fn check_call_graph(kernel: &KernelProgram) -> Result<(), KernelError> {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit<'a>(
        kernel: &'a KernelProgram,
        r: &'a Routine,
        state: &mut HashMap<&'a str, u8>,
    ) -> Result<(), KernelError> {
        state.insert(&r.name, 1);
        for callee in callees(&r.body) {
            let Some(target) = kernel.aux_routine(callee) else {
                let span = find_call_span(&r.body, callee);
                return Err(err(kernel, r, span, format!("call of unknown routine `{callee}`")));
            };
            match state.get(callee).copied().unwrap_or(0) {
                1 => {
                    let span = find_call_span(&r.body, callee);
                    return Err(err(kernel, r, span, format!("recursive call of `{callee}`")));
                }
                0 => visit(kernel, target, state)?,
                _ => {}
            }
        }
        state.insert(&r.name, 2);
        Ok(())
    }
    let mut state = HashMap::new();
    for r in kernel.routines() {
        if state.get(r.name.as_str()).copied().unwrap_or(0) == 0 {
            visit(kernel, r, &mut state)?;
        }
    }
    Ok(())
}

fn find_call_span(body: &[Stmt], callee: &str) -> Span {
    let mut span = Span::default();
    walk_stmts(body, &mut |s| {
        if let Stmt::Call { routine, span: sp, .. } = s {
            if routine == callee {
                span = *sp;
            }
        }
    });
    span
}

#[derive(Clone, Copy)]
struct Var {
    slot: u32,
    kind: ValueKind,
    readonly: bool,
}

struct RoutineCompiler<'a> {
    kernel: &'a KernelProgram,
    routine: &'a Routine,
    index: &'a HashMap<&'a str, u32>,
    code: Vec<Op>,
    scopes: Vec<HashMap<String, Var>>,
    n_slots: u32,
    span: Span,
}

impl<'a> RoutineCompiler<'a> {
    fn new(kernel: &'a KernelProgram, routine: &'a Routine, index: &'a HashMap<&'a str, u32>) -> Self {
        RoutineCompiler {
            kernel,
            routine,
            index,
            code: Vec::new(),
            scopes: vec![HashMap::new()],
            n_slots: 0,
            span: Span::default(),
        }
    }

    fn error(&self, message: impl Into<String>) -> KernelError {
        err(self.kernel, self.routine, self.span, message.into())
    }

    fn compile(&mut self) -> Result<(), KernelError> {
        let mut seen = HashSet::new();
        for p in &self.routine.params {
            if !seen.insert(p.name.as_str()) {
                return Err(self.error(format!("duplicate parameter `{}`", p.name)));
            }
            check_kind(p.kind).map_err(|m| self.error(m))?;
            if p.kind.is_buffer() != p.mode.is_some() {
                return Err(self.error(format!(
                    "parameter `{}`: access mode is required on buffers and only on buffers",
                    p.name
                )));
            }
            self.declare(&p.name, p.kind, false);
        }
        for k in &self.routine.outputs {
            check_kind(*k).map_err(|m| self.error(m))?;
        }

        let body = &self.routine.body;
        let mut returned = false;
        for (i, s) in body.iter().enumerate() {
            if let Stmt::Return { values, span } = s {
                self.span = *span;
                if i + 1 != body.len() {
                    return Err(self.error("`return` must be the last statement of a routine"));
                }
                self.compile_return(values)?;
                returned = true;
            } else {
                self.stmt(s)?;
            }
        }
        if !returned {
            if !self.routine.outputs.is_empty() {
                return Err(self.error("missing `return` for a non-empty output record"));
            }
            self.code.push(Op::Return(0));
        }
        Ok(())
    }

    fn compile_return(&mut self, values: &[Expr]) -> Result<(), KernelError> {
        let outputs = &self.routine.outputs;
        if values.len() != outputs.len() {
            return Err(self.error(format!(
                "return of {} value(s), output record has {} field(s)",
                values.len(),
                outputs.len()
            )));
        }
        for (v, want) in values.iter().zip(outputs) {
            let got = self.expr(v)?;
            if got != *want {
                return Err(self.error(format!("return value of type {got}, expected {want}")));
            }
        }
        self.code.push(Op::Return(values.len() as u32));
        Ok(())
    }

    fn declare(&mut self, name: &str, kind: ValueKind, readonly: bool) -> u32 {
        let slot = self.n_slots;
        self.n_slots += 1;
        self.scopes
            .last_mut()
            .unwrap()
            .insert(name.to_string(), Var { slot, kind, readonly });
        slot
    }

    fn hidden_slot(&mut self) -> u32 {
        let slot = self.n_slots;
        self.n_slots += 1;
        slot
    }

    fn lookup(&self, name: &str) -> Result<Var, KernelError> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name).copied())
            .ok_or_else(|| self.error(format!("undefined variable `{name}`")))
    }

    fn block(&mut self, body: &[Stmt]) -> Result<(), KernelError> {
        self.scopes.push(HashMap::new());
        for s in body {
            self.stmt(s)?;
        }
        self.scopes.pop();
        Ok(())
    }

    fn here(&self) -> u32 {
        self.code.len() as u32
    }

    fn patch(&mut self, at: u32, target: u32) {
        match &mut self.code[at as usize] {
            Op::Jump(t) | Op::JumpIfFalse(t) | Op::JumpIfTrue(t) => *t = target,
            _ => unreachable!("patching a non-jump"),
        }
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), KernelError> {
        self.span = s.span();
        match s {
            Stmt::Let { name, ty, value, .. } => {
                let got = self.expr(value)?;
                if let Some(want) = ty {
                    check_kind(*want).map_err(|m| self.error(m))?;
                    if *want != got {
                        return Err(self.error(format!("`{name}` declared {want} but initialized with {got}")));
                    }
                }
                let slot = self.declare(name, got, false);
                self.code.push(Op::Store(slot));
            }
            Stmt::Assign { name, value, .. } => {
                let var = self.lookup(name)?;
                if var.readonly {
                    return Err(self.error(format!("cannot assign to loop variable `{name}`")));
                }
                let got = self.expr(value)?;
                if got != var.kind {
                    return Err(self.error(format!("cannot assign {got} to `{name}` of type {}", var.kind)));
                }
                self.code.push(Op::Store(var.slot));
            }
            Stmt::Store {
                buffer, index, value, ..
            } => {
                let elem = self.buffer_expr(buffer)?;
                self.index_expr(index)?;
                let got = self.expr(value)?;
                if got != ValueKind::Scalar(elem) {
                    return Err(self.error(format!("cannot store {got} into buf<{elem}>")));
                }
                self.code.push(Op::BufStore);
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                self.bool_expr(cond)?;
                let jf = self.here();
                self.code.push(Op::JumpIfFalse(0));
                self.block(then_body)?;
                if else_body.is_empty() {
                    let end = self.here();
                    self.patch(jf, end);
                } else {
                    let j = self.here();
                    self.code.push(Op::Jump(0));
                    let else_start = self.here();
                    self.patch(jf, else_start);
                    self.block(else_body)?;
                    let end = self.here();
                    self.patch(j, end);
                }
            }
            Stmt::For {
                var, start, end, body, ..
            } => {
                let ty = self.int_expr(start)?;
                let end_ty = self.int_expr(end)?;
                if ty != end_ty {
                    return Err(self.error(format!("loop bounds have types {ty} and {end_ty}")));
                }
                let end_slot = self.hidden_slot();
                self.code.push(Op::Store(end_slot));
                self.scopes.push(HashMap::new());
                let var_slot = self.declare(var, ValueKind::Scalar(ty), true);
                self.code.push(Op::Store(var_slot));
                let head = self.here();
                self.code.push(Op::Load(var_slot));
                self.code.push(Op::Load(end_slot));
                self.code.push(Op::Bin(BinOp::Lt, ty));
                let exit = self.here();
                self.code.push(Op::JumpIfFalse(0));
                self.block(body)?;
                self.code.push(Op::Load(var_slot));
                self.code.push(Op::Push(one(ty)));
                self.code.push(Op::Bin(BinOp::Add, ty));
                self.code.push(Op::Store(var_slot));
                self.code.push(Op::Jump(head));
                let after = self.here();
                self.patch(exit, after);
                self.scopes.pop();
            }
            Stmt::Barrier { .. } => self.code.push(Op::Barrier),
            Stmt::Call {
                dests, routine, args, ..
            } => {
                let target = self
                    .kernel
                    .aux_routine(routine)
                    .ok_or_else(|| self.error(format!("call of unknown routine `{routine}`")))?;
                if args.len() != target.params.len() {
                    return Err(self.error(format!(
                        "`{routine}` takes {} argument(s), {} given",
                        target.params.len(),
                        args.len()
                    )));
                }
                for (a, p) in args.iter().zip(&target.params) {
                    let got = self.expr(a)?;
                    if got != p.kind {
                        return Err(self.error(format!(
                            "argument `{}` of `{routine}` expects {}, got {got}",
                            p.name, p.kind
                        )));
                    }
                }
                if dests.len() != target.outputs.len() {
                    return Err(self.error(format!(
                        "`{routine}` returns {} value(s), {} bound",
                        target.outputs.len(),
                        dests.len()
                    )));
                }
                self.code.push(Op::Call {
                    routine: self.index[routine.as_str()],
                    args: args.len() as u32,
                });
                let slots: Vec<u32> = dests
                    .iter()
                    .zip(&target.outputs)
                    .map(|(d, k)| self.declare(d, *k, false))
                    .collect();
                for slot in slots.into_iter().rev() {
                    self.code.push(Op::Store(slot));
                }
            }
            Stmt::Expr { expr, .. } => {
                self.expr(expr)?;
                self.code.push(Op::Pop);
            }
            Stmt::Return { .. } => {
                return Err(self.error("`return` must be the last statement of a routine"));
            }
        }
        Ok(())
    }

    fn bool_expr(&mut self, e: &Expr) -> Result<(), KernelError> {
        match self.expr(e)? {
            ValueKind::Scalar(ScalarType::Bool) => Ok(()),
            k => Err(self.error(format!("expected bool, found {k}"))),
        }
    }

    fn int_expr(&mut self, e: &Expr) -> Result<ScalarType, KernelError> {
        match self.expr(e)? {
            ValueKind::Scalar(t) if t.is_int() => Ok(t),
            k => Err(self.error(format!("expected an integer, found {k}"))),
        }
    }

    fn index_expr(&mut self, e: &Expr) -> Result<(), KernelError> {
        self.int_expr(e).map(|_| ())
    }

    fn buffer_expr(&mut self, e: &Expr) -> Result<ScalarType, KernelError> {
        match self.expr(e)? {
            ValueKind::Buffer(t) => Ok(t),
            k => Err(self.error(format!("expected a buffer, found {k}"))),
        }
    }

    fn scalar_expr(&mut self, e: &Expr) -> Result<ScalarType, KernelError> {
        match self.expr(e)? {
            ValueKind::Scalar(t) => Ok(t),
            k => Err(self.error(format!("expected a scalar, found {k}"))),
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<ValueKind, KernelError> {
        use ValueKind::Scalar;
        Ok(match e {
            Expr::Int { value, ty } => {
                let v = match ty {
                    ScalarType::I32 => Value::I32(
                        i32::try_from(*value).map_err(|_| self.error(format!("literal {value} overflows i32")))?,
                    ),
                    ScalarType::I64 => Value::I64(*value),
                    t => return Err(self.error(format!("integer literal with type {t}"))),
                };
                self.code.push(Op::Push(v));
                Scalar(*ty)
            }
            Expr::Float { value, ty } => {
                let v = match ty {
                    ScalarType::F32 => Value::F32(*value as f32),
                    ScalarType::F64 => Value::F64(*value),
                    t => return Err(self.error(format!("float literal with type {t}"))),
                };
                self.code.push(Op::Push(v));
                Scalar(*ty)
            }
            Expr::Bool(b) => {
                self.code.push(Op::Push(Value::Bool(*b)));
                Scalar(ScalarType::Bool)
            }
            Expr::Var(name) => {
                let var = self.lookup(name)?;
                self.code.push(Op::Load(var.slot));
                var.kind
            }
            Expr::Load { buffer, index } => {
                let elem = self.buffer_expr(buffer)?;
                self.index_expr(index)?;
                self.code.push(Op::BufLoad);
                Scalar(elem)
            }
            Expr::Unary { op, operand } => {
                let t = self.scalar_expr(operand)?;
                match op {
                    UnOp::Neg if t.is_numeric() => self.code.push(Op::Neg(t)),
                    UnOp::Not if t.is_int() || t == ScalarType::Bool => self.code.push(Op::Not(t)),
                    _ => return Err(self.error(format!("invalid operand type {t} for unary operator"))),
                }
                Scalar(t)
            }
            Expr::Binary { op, lhs, rhs } => self.binary(*op, lhs, rhs)?,
            Expr::Cast { ty, operand } => {
                let from = self.scalar_expr(operand)?;
                if !ty.is_numeric() || !(from.is_numeric() || from == ScalarType::Bool) {
                    return Err(self.error(format!("cannot cast {from} to {ty}")));
                }
                self.code.push(Op::Cast(from, *ty));
                Scalar(*ty)
            }
            Expr::Builtin { func, args } => {
                if args.len() != func.arity() {
                    return Err(self.error(format!(
                        "`{}` takes {} argument(s), {} given",
                        func.name(),
                        func.arity(),
                        args.len()
                    )));
                }
                match func {
                    Builtin::Len => {
                        let elem = self.buffer_expr(&args[0])?;
                        self.code.push(Op::Builtin(*func, elem));
                        Scalar(ScalarType::I32)
                    }
                    Builtin::Min | Builtin::Max => {
                        let a = self.scalar_expr(&args[0])?;
                        let b = self.scalar_expr(&args[1])?;
                        if a != b || !a.is_numeric() {
                            return Err(self.error(format!("`{}` of {a} and {b}", func.name())));
                        }
                        self.code.push(Op::Builtin(*func, a));
                        Scalar(a)
                    }
                    Builtin::Abs => {
                        let a = self.scalar_expr(&args[0])?;
                        if !a.is_numeric() {
                            return Err(self.error(format!("`abs` of {a}")));
                        }
                        self.code.push(Op::Builtin(*func, a));
                        Scalar(a)
                    }
                    Builtin::Sqrt => {
                        let a = self.scalar_expr(&args[0])?;
                        if !a.is_float() {
                            return Err(self.error(format!("`sqrt` of {a}")));
                        }
                        self.code.push(Op::Builtin(*func, a));
                        Scalar(a)
                    }
                }
            }
            Expr::Intrinsic(i) => self.intrinsic(i)?,
        })
    }

    fn binary(&mut self, op: BinOp, lhs: &Expr, rhs: &Expr) -> Result<ValueKind, KernelError> {
        use ValueKind::Scalar;
        if matches!(op, BinOp::And | BinOp::Or) {
            self.bool_expr(lhs)?;
            self.code.push(Op::Dup);
            let j = self.here();
            self.code.push(if op == BinOp::And {
                Op::JumpIfFalse(0)
            } else {
                Op::JumpIfTrue(0)
            });
            self.code.push(Op::Pop);
            self.bool_expr(rhs)?;
            let end = self.here();
            self.patch(j, end);
            return Ok(Scalar(ScalarType::Bool));
        }
        let a = self.scalar_expr(lhs)?;
        let b = self.scalar_expr(rhs)?;
        if a != b {
            return Err(self.error(format!(
                "operands of `{}` have types {a} and {b}; insert a cast",
                op.symbol()
            )));
        }
        let ok = match op {
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem => a.is_numeric(),
            BinOp::BitAnd | BinOp::BitOr | BinOp::BitXor | BinOp::Shl | BinOp::Shr => a.is_int(),
            BinOp::Eq | BinOp::Ne => true,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => a.is_numeric(),
            BinOp::And | BinOp::Or => unreachable!(),
        };
        if !ok {
            return Err(self.error(format!("operator `{}` is not defined on {a}", op.symbol())));
        }
        self.code.push(Op::Bin(op, a));
        Ok(if op.is_comparison() {
            Scalar(ScalarType::Bool)
        } else {
            Scalar(a)
        })
    }

    fn intrinsic(&mut self, i: &Intrinsic) -> Result<ValueKind, KernelError> {
        use ValueKind::Scalar;
        Ok(match i {
            Intrinsic::InstanceId { dim, depth } => {
                self.code.push(Op::Query(QueryKind::InstanceId, *dim, *depth));
                Scalar(ScalarType::I32)
            }
            Intrinsic::NumInstances { dim, depth } => {
                self.code.push(Op::Query(QueryKind::NumInstances, *dim, *depth));
                Scalar(ScalarType::I32)
            }
            Intrinsic::NumDims { depth } => {
                self.code.push(Op::NumDims(*depth));
                Scalar(ScalarType::I32)
            }
            Intrinsic::VectorLength { type_size } => {
                let t = self.int_expr(type_size)?;
                if t != ScalarType::I32 {
                    return Err(self.error("`vector_length` takes an i32 type size"));
                }
                if let Expr::Int { value, .. } = **type_size {
                    if ![1, 2, 4, 8].contains(&value) {
                        return Err(self.error(format!("unsupported type size {value}")));
                    }
                }
                self.code.push(Op::VectorLength);
                Scalar(ScalarType::I32)
            }
            Intrinsic::Malloc { elem, bytes } => {
                if !elem.is_numeric() {
                    return Err(self.error(format!("cannot allocate a buffer of {elem}")));
                }
                self.int_expr(bytes)?;
                self.code.push(Op::Malloc(*elem));
                ValueKind::Buffer(*elem)
            }
            Intrinsic::Atomic {
                op,
                buffer,
                index,
                value,
            } => {
                let elem = self.buffer_expr(buffer)?;
                if !elem.is_int() {
                    return Err(self.error(format!(
                        "`{}` on a buf<{elem}>: atomics need integer elements",
                        op.name()
                    )));
                }
                self.index_expr(index)?;
                let v = self.scalar_expr(value)?;
                if v != elem {
                    return Err(self.error(format!("`{}` operand {v} does not match buf<{elem}>", op.name())));
                }
                self.code.push(Op::Atomic(*op));
                Scalar(elem)
            }
        })
    }
}

fn check_kind(k: ValueKind) -> Result<(), String> {
    match k {
        ValueKind::Buffer(ScalarType::Bool) => Err("buffers of bool are not supported".into()),
        _ => Ok(()),
    }
}

fn one(ty: ScalarType) -> Value {
    match ty {
        ScalarType::I64 => Value::I64(1),
        _ => Value::I32(1),
    }
}
