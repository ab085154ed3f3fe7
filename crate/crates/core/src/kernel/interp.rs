//! Bytecode interpreter for leaf-node instances.
//!
//! Instances are resumable: all state lives in [`Instance`], so the group
//! scheduler can interleave the instances of one leaf-node instance and park
//! them at barriers.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ast::{BinOp, Builtin, Dim, ScalarType, ValueKind};
use super::compile::{CompiledKernel, Op};
use super::memory::{BufferId, Memory, Storage, Value};
use super::ExecError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueryKind {
    InstanceId,
    NumInstances,
}

/// Position of an instance within one level of the hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Level {
    pub id: [u32; 3],
    pub extents: [u32; 3],
    pub dims: u8,
}

impl Level {
    /// The only instance of a one-element, one-dimensional grid.
    pub fn single() -> Level {
        Level {
            id: [0; 3],
            extents: [1, 1, 1],
            dims: 1,
        }
    }

    /// Instance number `linear` of a grid; x varies fastest.
    pub fn from_linear(extents: &[u32], linear: u64) -> Level {
        assert!((1..=3).contains(&extents.len()), "grid must have 1 to 3 dimensions");
        let mut ext = [1u32; 3];
        ext[..extents.len()].copy_from_slice(extents);
        let mut rest = linear;
        let mut id = [0u32; 3];
        for d in 0..3 {
            id[d] = (rest % ext[d] as u64) as u32;
            rest /= ext[d] as u64;
        }
        Level {
            id,
            extents: ext,
            dims: extents.len() as u8,
        }
    }

    pub fn count(&self) -> u64 {
        self.extents.iter().map(|&e| e as u64).product()
    }

    pub fn linear(&self) -> u64 {
        self.id[0] as u64 + self.extents[0] as u64 * (self.id[1] as u64 + self.extents[1] as u64 * self.id[2] as u64)
    }
}

/// Where an instance sits in the dynamic graph hierarchy. `levels[0]` is the
/// leaf grid itself, `levels[1]` the enclosing internal node's grid, and so
/// on up to the root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceContext {
    pub levels: Vec<Level>,
}

impl InstanceContext {
    pub fn new(levels: Vec<Level>) -> Self {
        InstanceContext { levels }
    }

    /// A context for a lone instance of a one-element grid.
    pub fn single() -> Self {
        InstanceContext {
            levels: vec![Level::single()],
        }
    }

    fn level(&self, depth: u32) -> Result<&Level, ExecError> {
        self.levels.get(depth as usize).ok_or(ExecError::DepthOutOfRange {
            depth,
            levels: self.levels.len(),
        })
    }

    pub fn query(&self, kind: QueryKind, dim: Dim, depth: u32) -> Result<i32, ExecError> {
        let level = self.level(depth)?;
        if dim.index() >= level.dims as usize {
            return Err(ExecError::DimOutOfRange {
                dim: dim.name(),
                depth,
                dims: level.dims,
            });
        }
        Ok(match kind {
            QueryKind::InstanceId => level.id[dim.index()],
            QueryKind::NumInstances => level.extents[dim.index()],
        } as i32)
    }

    pub fn num_dims(&self, depth: u32) -> Result<i32, ExecError> {
        Ok(self.level(depth)?.dims as i32)
    }

    /// Global index in `dim` when each enclosing grid tiles the one below it:
    /// `id[d] + n[d] * (id[d+1] + n[d+1] * ...)`.
    pub fn global_id(&self, dim: Dim) -> Result<i64, ExecError> {
        let mut acc = 0i64;
        for depth in (0..self.levels.len() as u32).rev() {
            let id = self.query(QueryKind::InstanceId, dim, depth)? as i64;
            let n = self.query(QueryKind::NumInstances, dim, depth)? as i64;
            acc = acc * n + id;
        }
        Ok(acc)
    }
}

/// Preferred vector lengths of a device, in elements, for element sizes of
/// 1, 2, 4 and 8 bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorWidths(pub [u32; 4]);

impl VectorWidths {
    /// A device without vector units.
    pub fn scalar() -> Self {
        VectorWidths([1; 4])
    }

    /// A device whose vector registers are `bits` wide.
    pub fn from_lane_bits(bits: u32) -> Self {
        VectorWidths([bits / 8, bits / 16, bits / 32, bits / 64])
    }

    pub fn get(&self, type_size: i64) -> Result<u32, ExecError> {
        let slot = match type_size {
            1 => 0,
            2 => 1,
            4 => 2,
            8 => 3,
            _ => return Err(ExecError::UnsupportedTypeSize(type_size)),
        };
        Ok(self.0[slot].max(1))
    }
}

impl Default for VectorWidths {
    fn default() -> Self {
        VectorWidths::scalar()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
    Atomic,
}

/// One buffer access made by an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Access {
    pub buffer: BufferId,
    pub index: i64,
    pub kind: AccessKind,
}

#[derive(Clone, Copy, Debug)]
pub struct ScheduleOptions {
    pub seed: u64,
    pub widths: VectorWidths,
    /// Record every buffer access of every instance.
    pub trace: bool,
    /// Upper bound on the number of operations an instance runs before the
    /// scheduler picks the next one.
    pub max_quantum: u32,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions {
            seed: 0,
            widths: VectorWidths::scalar(),
            trace: false,
            max_quantum: 16,
        }
    }
}

/// Mixes `parts` into `seed` (splitmix64 steps).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ p))
}

/// One leaf-node instance: all dynamic instances of its grid, which form a
/// barrier group.
pub struct GroupSpec<'a> {
    /// Grids of the enclosing internal-node instances, innermost first.
    pub ancestors: &'a [Level],
    pub extents: &'a [u32],
    /// Arguments of the instance with the given linear index.
    pub args: &'a dyn Fn(u64) -> Vec<Value>,
}

#[derive(Debug, Default)]
pub struct GroupOutcome {
    /// Output record of each instance, by linear index.
    pub outputs: Vec<Vec<Value>>,
    /// Access traces by linear index; empty unless tracing was requested.
    pub traces: Vec<Vec<Access>>,
}

#[derive(Clone, Copy)]
struct Frame {
    routine: u32,
    pc: u32,
    base: u32,
}

#[derive(Clone, Debug, PartialEq)]
enum Status {
    Runnable,
    Barrier(Vec<(u32, u32)>),
    Done,
}

struct Instance {
    ctx: InstanceContext,
    frames: Vec<Frame>,
    slots: Vec<Value>,
    stack: Vec<Value>,
    status: Status,
    outputs: Vec<Value>,
    trace: Vec<Access>,
}

impl Instance {
    fn new(kernel: &CompiledKernel, ctx: InstanceContext, args: Vec<Value>) -> Instance {
        let entry = &kernel.routines[0];
        let mut slots = args;
        slots.resize(entry.n_slots.max(entry.n_params), Value::I32(0));
        Instance {
            ctx,
            frames: vec![Frame {
                routine: 0,
                pc: 0,
                base: 0,
            }],
            slots,
            stack: Vec::with_capacity(16),
            status: Status::Runnable,
            outputs: Vec::new(),
            trace: Vec::new(),
        }
    }

    fn pop(&mut self) -> Value {
        self.stack.pop().expect("operand stack underflow")
    }

    fn pop_int(&mut self) -> i64 {
        self.pop().as_i64().expect("integer operand")
    }

    fn pop_buf(&mut self) -> BufferId {
        self.pop().as_buffer().expect("buffer operand")
    }
}

struct Exec<'a> {
    kernel: &'a CompiledKernel,
    mem: &'a dyn Memory,
    widths: VectorWidths,
    trace: bool,
    cache: HashMap<BufferId, Arc<Storage>>,
}

impl<'a> Exec<'a> {
    fn storage(&mut self, id: BufferId) -> Result<Arc<Storage>, ExecError> {
        if let Some(s) = self.cache.get(&id) {
            return Ok(s.clone());
        }
        let s = self.mem.resolve(id)?;
        self.cache.insert(id, s.clone());
        Ok(s)
    }

    fn check_args(&mut self, args: &[Value]) -> Result<(), ExecError> {
        let params = self.kernel.params();
        if args.len() != params.len() {
            return Err(ExecError::ArgumentCount {
                kernel: self.kernel.name().to_string(),
                expected: params.len(),
                got: args.len(),
            });
        }
        for (a, p) in args.iter().zip(params) {
            if !a.matches_kind(p.kind) {
                return Err(ExecError::ArgumentKind {
                    param: p.name.clone(),
                    expected: p.kind,
                    got: *a,
                });
            }
            if let (Value::Buf(id), ValueKind::Buffer(elem)) = (a, p.kind) {
                let got = self.storage(*id)?.elem();
                if got != elem {
                    return Err(ExecError::BufferElemMismatch {
                        param: p.name.clone(),
                        expected: elem,
                        got,
                    });
                }
            }
        }
        Ok(())
    }

    fn index(storage: &Storage, id: BufferId, index: i64) -> Result<usize, ExecError> {
        if index < 0 || index as u64 >= storage.len() as u64 {
            return Err(ExecError::OutOfBounds {
                buffer: id,
                index,
                len: storage.len(),
            });
        }
        Ok(index as usize)
    }

    /// Runs `inst` for at most `budget` operations or until it reaches a
    /// barrier or finishes.
    fn run(&mut self, inst: &mut Instance, budget: u32) -> Result<(), ExecError> {
        let kernel = self.kernel;
        let mut remaining = budget;
        while remaining > 0 {
            remaining -= 1;
            let frame = *inst.frames.last().expect("running instance has a frame");
            let routine = &kernel.routines[frame.routine as usize];
            let op = &routine.code[frame.pc as usize];
            let mut next = frame.pc + 1;
            match op {
                Op::Push(v) => inst.stack.push(*v),
                Op::Load(slot) => {
                    let v = inst.slots[(frame.base + slot) as usize];
                    inst.stack.push(v);
                }
                Op::Store(slot) => {
                    let v = inst.pop();
                    inst.slots[(frame.base + slot) as usize] = v;
                }
                Op::Pop => {
                    inst.pop();
                }
                Op::Dup => {
                    let v = *inst.stack.last().expect("operand stack underflow");
                    inst.stack.push(v);
                }
                Op::Bin(op, _) => {
                    let b = inst.pop();
                    let a = inst.pop();
                    inst.stack.push(binary(*op, a, b)?);
                }
                Op::Neg(_) => {
                    let v = match inst.pop() {
                        Value::I32(x) => Value::I32(x.wrapping_neg()),
                        Value::I64(x) => Value::I64(x.wrapping_neg()),
                        Value::F32(x) => Value::F32(-x),
                        Value::F64(x) => Value::F64(-x),
                        v => v,
                    };
                    inst.stack.push(v);
                }
                Op::Not(_) => {
                    let v = match inst.pop() {
                        Value::I32(x) => Value::I32(!x),
                        Value::I64(x) => Value::I64(!x),
                        Value::Bool(b) => Value::Bool(!b),
                        v => v,
                    };
                    inst.stack.push(v);
                }
                Op::Cast(_, to) => {
                    let v = inst.pop();
                    inst.stack.push(cast(v, *to));
                }
                Op::Builtin(func, _) => {
                    let v = match func {
                        Builtin::Len => {
                            let id = inst.pop_buf();
                            Value::I32(self.storage(id)?.len() as i32)
                        }
                        Builtin::Min | Builtin::Max => {
                            let b = inst.pop();
                            let a = inst.pop();
                            min_max(*func == Builtin::Min, a, b)
                        }
                        Builtin::Abs => match inst.pop() {
                            Value::I32(x) => Value::I32(x.wrapping_abs()),
                            Value::I64(x) => Value::I64(x.wrapping_abs()),
                            Value::F32(x) => Value::F32(x.abs()),
                            Value::F64(x) => Value::F64(x.abs()),
                            v => v,
                        },
                        Builtin::Sqrt => match inst.pop() {
                            Value::F32(x) => Value::F32(x.sqrt()),
                            Value::F64(x) => Value::F64(x.sqrt()),
                            v => v,
                        },
                    };
                    inst.stack.push(v);
                }
                Op::BufLoad => {
                    let index = inst.pop_int();
                    let id = inst.pop_buf();
                    let s = self.storage(id)?;
                    let i = Self::index(&s, id, index)?;
                    if self.trace {
                        inst.trace.push(Access {
                            buffer: id,
                            index,
                            kind: AccessKind::Read,
                        });
                    }
                    inst.stack.push(s.load(i).expect("index checked"));
                }
                Op::BufStore => {
                    let value = inst.pop();
                    let index = inst.pop_int();
                    let id = inst.pop_buf();
                    let s = self.storage(id)?;
                    let i = Self::index(&s, id, index)?;
                    if self.trace {
                        inst.trace.push(Access {
                            buffer: id,
                            index,
                            kind: AccessKind::Write,
                        });
                    }
                    s.store(i, value);
                }
                Op::Atomic(op) => {
                    let value = inst.pop();
                    let index = inst.pop_int();
                    let id = inst.pop_buf();
                    let s = self.storage(id)?;
                    let i = Self::index(&s, id, index)?;
                    if self.trace {
                        inst.trace.push(Access {
                            buffer: id,
                            index,
                            kind: AccessKind::Atomic,
                        });
                    }
                    let prev = s.atomic(*op, i, value).expect("index checked");
                    inst.stack.push(prev);
                }
                Op::Jump(t) => next = *t,
                Op::JumpIfFalse(t) => {
                    if !inst.pop().as_bool().expect("bool condition") {
                        next = *t;
                    }
                }
                Op::JumpIfTrue(t) => {
                    if inst.pop().as_bool().expect("bool condition") {
                        next = *t;
                    }
                }
                Op::Query(kind, dim, depth) => {
                    let v = inst.ctx.query(*kind, *dim, *depth)?;
                    inst.stack.push(Value::I32(v));
                }
                Op::NumDims(depth) => {
                    let v = inst.ctx.num_dims(*depth)?;
                    inst.stack.push(Value::I32(v));
                }
                Op::VectorLength => {
                    let size = inst.pop_int();
                    inst.stack.push(Value::I32(self.widths.get(size)? as i32));
                }
                Op::Malloc(elem) => {
                    let bytes = inst.pop_int();
                    if bytes <= 0 {
                        return Err(ExecError::ZeroAllocation);
                    }
                    let (id, storage) = self.mem.malloc(*elem, bytes as u64)?;
                    self.cache.insert(id, storage);
                    inst.stack.push(Value::Buf(id));
                }
                Op::Barrier => {
                    inst.frames.last_mut().unwrap().pc = next;
                    let site = inst.frames.iter().map(|f| (f.routine, f.pc)).collect();
                    inst.status = Status::Barrier(site);
                    return Ok(());
                }
                Op::Call { routine: callee, args } => {
                    inst.frames.last_mut().unwrap().pc = next;
                    let target = &kernel.routines[*callee as usize];
                    let base = inst.slots.len() as u32;
                    inst.slots
                        .resize(inst.slots.len() + target.n_slots.max(target.n_params), Value::I32(0));
                    let split = inst.stack.len() - *args as usize;
                    for (k, v) in inst.stack.drain(split..).enumerate() {
                        inst.slots[base as usize + k] = v;
                    }
                    inst.frames.push(Frame {
                        routine: *callee,
                        pc: 0,
                        base,
                    });
                    continue;
                }
                Op::Return(n) => {
                    inst.frames.pop();
                    inst.slots.truncate(frame.base as usize);
                    if inst.frames.is_empty() {
                        let split = inst.stack.len() - *n as usize;
                        inst.outputs = inst.stack.split_off(split);
                        inst.status = Status::Done;
                        return Ok(());
                    }
                    continue;
                }
            }
            inst.frames.last_mut().unwrap().pc = next;
        }
        Ok(())
    }
}

fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, ExecError> {
    use Value::*;
    macro_rules! int_op {
        ($x:expr, $y:expr, $ctor:path) => {
            match op {
                BinOp::Add => $ctor($x.wrapping_add($y)),
                BinOp::Sub => $ctor($x.wrapping_sub($y)),
                BinOp::Mul => $ctor($x.wrapping_mul($y)),
                BinOp::Div | BinOp::Rem if $y == 0 => return Err(ExecError::DivisionByZero),
                BinOp::Div => $ctor($x.wrapping_div($y)),
                BinOp::Rem => $ctor($x.wrapping_rem($y)),
                BinOp::BitAnd => $ctor($x & $y),
                BinOp::BitOr => $ctor($x | $y),
                BinOp::BitXor => $ctor($x ^ $y),
                BinOp::Shl => $ctor($x.wrapping_shl($y as u32)),
                BinOp::Shr => $ctor($x.wrapping_shr($y as u32)),
                BinOp::Eq => Bool($x == $y),
                BinOp::Ne => Bool($x != $y),
                BinOp::Lt => Bool($x < $y),
                BinOp::Le => Bool($x <= $y),
                BinOp::Gt => Bool($x > $y),
                BinOp::Ge => Bool($x >= $y),
                BinOp::And | BinOp::Or => unreachable!("short-circuit operators compile to jumps"),
            }
        };
    }
    macro_rules! float_op {
        ($x:expr, $y:expr, $ctor:path) => {
            match op {
                BinOp::Add => $ctor($x + $y),
                BinOp::Sub => $ctor($x - $y),
                BinOp::Mul => $ctor($x * $y),
                BinOp::Div => $ctor($x / $y),
                BinOp::Rem => $ctor($x % $y),
                BinOp::Eq => Bool($x == $y),
                BinOp::Ne => Bool($x != $y),
                BinOp::Lt => Bool($x < $y),
                BinOp::Le => Bool($x <= $y),
                BinOp::Gt => Bool($x > $y),
                BinOp::Ge => Bool($x >= $y),
                _ => unreachable!("rejected by the type checker"),
            }
        };
    }
    Ok(match (a, b) {
        (I32(x), I32(y)) => int_op!(x, y, I32),
        (I64(x), I64(y)) => int_op!(x, y, I64),
        (F32(x), F32(y)) => float_op!(x, y, F32),
        (F64(x), F64(y)) => float_op!(x, y, F64),
        (Bool(x), Bool(y)) => match op {
            BinOp::Eq => Bool(x == y),
            BinOp::Ne => Bool(x != y),
            _ => unreachable!("rejected by the type checker"),
        },
        _ => unreachable!("operand types checked statically"),
    })
}

fn min_max(is_min: bool, a: Value, b: Value) -> Value {
    use Value::*;
    match (a, b) {
        (I32(x), I32(y)) => I32(if is_min { x.min(y) } else { x.max(y) }),
        (I64(x), I64(y)) => I64(if is_min { x.min(y) } else { x.max(y) }),
        (F32(x), F32(y)) => F32(if is_min { x.min(y) } else { x.max(y) }),
        (F64(x), F64(y)) => F64(if is_min { x.min(y) } else { x.max(y) }),
        _ => a,
    }
}

fn cast(v: Value, to: ScalarType) -> Value {
    use Value::*;
    let v = match v {
        Bool(b) => I32(b as i32),
        v => v,
    };
    match (v, to) {
        (I32(x), ScalarType::I32) => I32(x),
        (I32(x), ScalarType::I64) => I64(x as i64),
        (I32(x), ScalarType::F32) => F32(x as f32),
        (I32(x), ScalarType::F64) => F64(x as f64),
        (I64(x), ScalarType::I32) => I32(x as i32),
        (I64(x), ScalarType::I64) => I64(x),
        (I64(x), ScalarType::F32) => F32(x as f32),
        (I64(x), ScalarType::F64) => F64(x as f64),
        (F32(x), ScalarType::I32) => I32(x as i32),
        (F32(x), ScalarType::I64) => I64(x as i64),
        (F32(x), ScalarType::F32) => F32(x),
        (F32(x), ScalarType::F64) => F64(x as f64),
        (F64(x), ScalarType::I32) => I32(x as i32),
        (F64(x), ScalarType::I64) => I64(x as i64),
        (F64(x), ScalarType::F32) => F32(x as f32),
        (F64(x), ScalarType::F64) => F64(x),
        (v, _) => v,
    }
}

/// Runs every instance of one leaf-node instance as a barrier group.
///
/// The scheduler repeatedly picks a random runnable instance and runs it for
/// a random number of operations, so results that depend on the interleaving
/// show up across seeds. When every unfinished instance waits at the same
/// barrier they are all released.
pub fn run_group(
    kernel: &CompiledKernel,
    spec: &GroupSpec<'_>,
    mem: &dyn Memory,
    opts: &ScheduleOptions,
) -> Result<GroupOutcome, ExecError> {
    let mut exec = Exec {
        kernel,
        mem,
        widths: opts.widths,
        trace: opts.trace,
        cache: HashMap::new(),
    };
    let n = Level::from_linear(spec.extents, 0).count();
    let mut insts = Vec::with_capacity(n as usize);
    for i in 0..n {
        let level = Level::from_linear(spec.extents, i);
        let args = (spec.args)(i);
        exec.check_args(&args).map_err(|e| at(&level, e))?;
        let mut levels = Vec::with_capacity(1 + spec.ancestors.len());
        levels.push(level);
        levels.extend_from_slice(spec.ancestors);
        insts.push(Instance::new(kernel, InstanceContext::new(levels), args));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let quantum = opts.max_quantum.max(1);
    let mut runnable: Vec<usize> = (0..insts.len()).collect();
    let mut waiting: Vec<usize> = Vec::new();
    let mut finished = 0usize;
    loop {
        if runnable.is_empty() {
            if waiting.is_empty() {
                break;
            }
            if finished > 0 {
                return Err(ExecError::BarrierDeadlock {
                    waiting: waiting.len(),
                    finished,
                });
            }
            let site = &insts[waiting[0]].status;
            if waiting.iter().any(|&w| insts[w].status != *site) {
                return Err(ExecError::DivergentBarrier);
            }
            waiting.sort_unstable();
            for &w in &waiting {
                insts[w].status = Status::Runnable;
            }
            std::mem::swap(&mut runnable, &mut waiting);
            continue;
        }
        let k = rng.gen_range(0..runnable.len());
        let i = runnable[k];
        let q = rng.gen_range(1..=quantum);
        let inst = &mut insts[i];
        exec.run(inst, q).map_err(|e| at(&inst.ctx.levels[0], e))?;
        match inst.status {
            Status::Runnable => {}
            Status::Barrier(_) => {
                runnable.swap_remove(k);
                waiting.push(i);
            }
            Status::Done => {
                runnable.swap_remove(k);
                finished += 1;
            }
        }
    }

    let mut outcome = GroupOutcome::default();
    for inst in insts {
        outcome.outputs.push(inst.outputs);
        if opts.trace {
            outcome.traces.push(inst.trace);
        }
    }
    Ok(outcome)
}

fn at(level: &Level, error: ExecError) -> ExecError {
    ExecError::Instance {
        id: level.id,
        error: Box::new(error),
    }
}

/// Runs a single instance to completion outside of any group. A barrier is a
/// no-op when the instance's grid has one element and an error otherwise.
pub fn interpret_instance(
    kernel: &CompiledKernel,
    ctx: &InstanceContext,
    args: Vec<Value>,
    mem: &dyn Memory,
    widths: VectorWidths,
) -> Result<Vec<Value>, ExecError> {
    let mut exec = Exec {
        kernel,
        mem,
        widths,
        trace: false,
        cache: HashMap::new(),
    };
    exec.check_args(&args)?;
    let alone = ctx.levels.first().is_none_or(|l| l.count() == 1);
    let mut inst = Instance::new(kernel, ctx.clone(), args);
    loop {
        exec.run(&mut inst, u32::MAX)?;
        match inst.status {
            Status::Done => return Ok(inst.outputs),
            Status::Barrier(_) if alone => inst.status = Status::Runnable,
            Status::Barrier(_) => return Err(ExecError::BarrierOutsideGroup),
            Status::Runnable => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::compile;
    use crate::kernel::memory::{BufferData, SimpleMemory};
    use crate::text::parse_kernel;

    fn kernel(src: &str) -> CompiledKernel {
        compile(&parse_kernel(src).expect("parses")).expect("type checks")
    }

    fn run1(src: &str, args: Vec<Value>, mem: &SimpleMemory) -> Result<Vec<Value>, ExecError> {
        interpret_instance(
            &kernel(src),
            &InstanceContext::single(),
            args,
            mem,
            VectorWidths::scalar(),
        )
    }

    #[test]
    fn adds_scalars() {
        let mem = SimpleMemory::new();
        let out = run1(
            "kernel add(x: i32, y: i32) -> (i32) { return (x + y); }",
            vec![Value::I32(2), Value::I32(3)],
            &mem,
        );
        assert_eq!(out, Ok(vec![Value::I32(5)]));
    }

    #[test]
    fn naive_matmul_2x2() {
        let mem = SimpleMemory::new();
        let a = mem.insert(&BufferData::F32(vec![1.0, 2.0, 3.0, 4.0]));
        let b = mem.insert(&BufferData::F32(vec![5.0, 6.0, 7.0, 8.0]));
        let c = mem.insert(&BufferData::F32(vec![0.0; 4]));
        let src = "kernel mm(in a: buf<f32>, in b: buf<f32>, out c: buf<f32>, n: i32) {
            for i in 0..n { for j in 0..n {
                let s = 0.0;
                for k in 0..n { s = s + a[i * n + k] * b[k * n + j]; }
                c[i * n + j] = s;
            } }
        }";
        run1(
            src,
            vec![Value::Buf(a), Value::Buf(b), Value::Buf(c), Value::I32(2)],
            &mem,
        )
        .unwrap();
        assert_eq!(mem.read(c), Some(BufferData::F32(vec![19.0, 22.0, 43.0, 50.0])));
    }

    #[test]
    fn integer_division_by_zero_is_an_error() {
        let mem = SimpleMemory::new();
        let out = run1(
            "kernel d(x: i32) -> (i32) { return (10 / x); }",
            vec![Value::I32(0)],
            &mem,
        );
        assert_eq!(out, Err(ExecError::DivisionByZero));
    }

    #[test]
    fn arithmetic_wraps() {
        let mem = SimpleMemory::new();
        let out = run1(
            "kernel w(x: i32) -> (i32) { return (x + 1); }",
            vec![Value::I32(i32::MAX)],
            &mem,
        );
        assert_eq!(out, Ok(vec![Value::I32(i32::MIN)]));
    }

    #[test]
    fn out_of_bounds_store_is_reported() {
        let mem = SimpleMemory::new();
        let b = mem.insert(&BufferData::I32(vec![0; 2]));
        let out = run1("kernel s(out b: buf<i32>) { b[2] = 1; }", vec![Value::Buf(b)], &mem);
        assert_eq!(
            out,
            Err(ExecError::OutOfBounds {
                buffer: b,
                index: 2,
                len: 2
            })
        );
    }

    #[test]
    fn aux_calls_return_records() {
        let mem = SimpleMemory::new();
        let src = "kernel k(x: i32) -> (i32, i32) {
            aux divmod(a: i32, b: i32) -> (i32, i32) { return (a / b, a % b); }
            let (q, r) = call divmod(x, 7);
            return (q, r);
        }";
        let out = run1(src, vec![Value::I32(23)], &mem);
        assert_eq!(out, Ok(vec![Value::I32(3), Value::I32(2)]));
    }

    #[test]
    fn barrier_rotation_in_a_group() {
        let mem = SimpleMemory::new();
        let src = "kernel rot(inout b: buf<i32>) {
            let i = instance_id(x);
            let n = num_instances(x);
            let v = b[(i + 1) % n];
            barrier();
            b[i] = v;
        }";
        let k = kernel(src);
        for seed in 0..20 {
            let b = mem.insert(&BufferData::I32(vec![0, 1, 2, 3]));
            let args = |_: u64| vec![Value::Buf(b)];
            let spec = GroupSpec {
                ancestors: &[Level::single()],
                extents: &[4],
                args: &args,
            };
            let opts = ScheduleOptions {
                seed,
                ..Default::default()
            };
            run_group(&k, &spec, &mem, &opts).unwrap();
            assert_eq!(mem.read(b), Some(BufferData::I32(vec![1, 2, 3, 0])));
        }
    }

    #[test]
    fn atomic_add_counts_every_instance() {
        let mem = SimpleMemory::new();
        let k = kernel("kernel inc(inout c: buf<i32>) { atomic_add(c, 0, 1); }");
        let c = mem.insert(&BufferData::I32(vec![0]));
        let args = |_: u64| vec![Value::Buf(c)];
        let spec = GroupSpec {
            ancestors: &[],
            extents: &[8],
            args: &args,
        };
        run_group(&k, &spec, &mem, &ScheduleOptions::default()).unwrap();
        assert_eq!(mem.read(c), Some(BufferData::I32(vec![8])));
    }

    #[test]
    fn barrier_skipped_by_some_instances_deadlocks() {
        let mem = SimpleMemory::new();
        let k = kernel("kernel k() { if instance_id(x) == 0 { barrier(); } }");
        let args = |_: u64| vec![];
        let spec = GroupSpec {
            ancestors: &[],
            extents: &[4],
            args: &args,
        };
        let err = run_group(&k, &spec, &mem, &ScheduleOptions::default()).unwrap_err();
        assert!(matches!(err, ExecError::BarrierDeadlock { .. }), "{err}");
    }

    #[test]
    fn different_barriers_diverge() {
        let mem = SimpleMemory::new();
        let k = kernel("kernel k() { if instance_id(x) == 0 { barrier(); } else { barrier(); } }");
        let args = |_: u64| vec![];
        let spec = GroupSpec {
            ancestors: &[],
            extents: &[2],
            args: &args,
        };
        let err = run_group(&k, &spec, &mem, &ScheduleOptions::default()).unwrap_err();
        assert_eq!(err, ExecError::DivergentBarrier);
    }

    #[test]
    fn barrier_outside_group() {
        let mem = SimpleMemory::new();
        let k = kernel("kernel k() { barrier(); }");
        let single = interpret_instance(&k, &InstanceContext::single(), vec![], &mem, VectorWidths::scalar());
        assert_eq!(single, Ok(vec![]));
        let ctx = InstanceContext::new(vec![Level::from_linear(&[4], 1)]);
        let err = interpret_instance(&k, &ctx, vec![], &mem, VectorWidths::scalar());
        assert_eq!(err, Err(ExecError::BarrierOutsideGroup));
    }

    #[test]
    fn vector_lengths() {
        let w = VectorWidths::from_lane_bits(256);
        assert_eq!(w.get(4), Ok(8));
        assert_eq!(w.get(8), Ok(4));
        assert_eq!(VectorWidths::scalar().get(4), Ok(1));
        assert_eq!(w.get(3), Err(ExecError::UnsupportedTypeSize(3)));
    }

    #[test]
    fn queries_compose_tiles() {
        let ctx = InstanceContext::new(vec![Level::from_linear(&[4], 3), Level::from_linear(&[2], 1)]);
        assert_eq!(ctx.global_id(Dim::X), Ok(7));
        assert_eq!(ctx.query(QueryKind::NumInstances, Dim::X, 1), Ok(2));
        assert!(matches!(
            ctx.query(QueryKind::InstanceId, Dim::Y, 0),
            Err(ExecError::DimOutOfRange { .. })
        ));
        assert!(matches!(
            ctx.query(QueryKind::InstanceId, Dim::X, 2),
            Err(ExecError::DepthOutOfRange { .. })
        ));
    }

    #[test]
    fn level_linear_round_trip() {
        for i in 0..24 {
            assert_eq!(Level::from_linear(&[2, 3, 4], i).linear(), i);
        }
        assert_eq!(Level::from_linear(&[2, 3], 3).id, [1, 1, 0]);
    }

    #[test]
    fn malloc_returns_zeroed_buffer() {
        let mem = SimpleMemory::new();
        let out = run1(
            "kernel a() -> (buf<f32>, i32) { let t = malloc<f32>(16); return (t, len(t)); }",
            vec![],
            &mem,
        )
        .unwrap();
        assert_eq!(out[1], Value::I32(4));
        assert_eq!(
            mem.read(out[0].as_buffer().unwrap()),
            Some(BufferData::F32(vec![0.0; 4]))
        );
    }
}
