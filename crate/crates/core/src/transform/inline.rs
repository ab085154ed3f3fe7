use super::TransformError;
use crate::kernel::{walk_stmts, KernelProgram, Routine, Stmt};

/// Replaces every call of an auxiliary routine with the routine's body.
///
/// Each inlined call gets a fresh prefix `__i{k}_` for all of the callee's
/// parameters and locals; arguments are bound to the renamed parameters with
/// `let`, and the returned values to the call's destinations. The result has
/// no auxiliary routines.
pub fn inline_aux(kernel: &KernelProgram) -> Result<KernelProgram, TransformError> {
    let mut counter = 0;
    let mut stack = vec![kernel.entry.name.clone()];
    let body = inline_body(kernel, &kernel.entry.body, None, &mut counter, &mut stack)?;
    let mut entry = kernel.entry.clone();
    entry.body = body;
    Ok(KernelProgram::new(entry))
}

/// Replaces the calls of one auxiliary routine, in every routine of the
/// kernel, with its body. Calls of other routines are kept; the inlined
/// routine is dropped once nothing calls it.
pub fn inline_routine(kernel: &KernelProgram, name: &str) -> Result<KernelProgram, TransformError> {
    let target = kernel
        .aux_routine(name)
        .ok_or_else(|| TransformError::UnknownRoutine(name.to_string()))?;
    if reaches(kernel, target, name, &mut Vec::new()) {
        return Err(TransformError::Recursion(name.to_string()));
    }
    let mut counter = 0;
    let mut out = kernel.clone();
    for r in std::iter::once(&mut out.entry).chain(out.aux.iter_mut()) {
        if r.name != name {
            r.body = inline_body(kernel, &r.body, Some(name), &mut counter, &mut Vec::new())?;
        }
    }
    if !out.routines().any(|r| calls(&r.body, name)) {
        out.aux.retain(|r| r.name != name);
    }
    Ok(out)
}

fn calls(body: &[Stmt], name: &str) -> bool {
    let mut found = false;
    walk_stmts(body, &mut |s| {
        if matches!(s, Stmt::Call { routine, .. } if routine == name) {
            found = true;
        }
    });
    found
}

/// True if `r` calls `name` directly or through other routines.
fn reaches(kernel: &KernelProgram, r: &Routine, name: &str, seen: &mut Vec<String>) -> bool {
    let mut callees = Vec::new();
    walk_stmts(&r.body, &mut |s| {
        if let Stmt::Call { routine, .. } = s {
            callees.push(routine.clone());
        }
    });
    callees.into_iter().any(|c| {
        if c == name {
            return true;
        }
        if seen.contains(&c) {
            return false;
        }
        seen.push(c.clone());
        kernel.aux_routine(&c).is_some_and(|cr| reaches(kernel, cr, name, seen))
    })
}

fn inline_body(
    kernel: &KernelProgram,
    body: &[Stmt],
    only: Option<&str>,
    counter: &mut usize,
    stack: &mut Vec<String>,
) -> Result<Vec<Stmt>, TransformError> {
    let mut out = Vec::with_capacity(body.len());
    for s in body {
        match s {
            Stmt::Call {
                dests,
                routine,
                args,
                span,
            } if only.is_none_or(|o| o == routine) => {
                if stack.contains(routine) {
                    return Err(TransformError::Recursion(routine.clone()));
                }
                let callee = kernel
                    .aux_routine(routine)
                    .ok_or_else(|| TransformError::UnknownRoutine(routine.clone()))?;
                stack.push(routine.clone());
                let mut inner = match only {
                    Some(_) => callee.body.clone(),
                    None => inline_body(kernel, &callee.body, None, counter, stack)?,
                };
                stack.pop();

                let prefix = format!("__i{}_", *counter);
                *counter += 1;
                let rename = |n: &str| Some(format!("{prefix}{n}"));
                for st in &mut inner {
                    rename_stmt(st, &rename);
                }
                for (p, a) in callee.params.iter().zip(args) {
                    out.push(Stmt::Let {
                        name: format!("{prefix}{}", p.name),
                        ty: Some(p.kind),
                        value: a.clone(),
                        span: *span,
                    });
                }
                let returned = match inner.last() {
                    Some(Stmt::Return { .. }) => match inner.pop() {
                        Some(Stmt::Return { values, .. }) => values,
                        _ => unreachable!(),
                    },
                    _ => Vec::new(),
                };
                out.extend(inner);
                for ((d, v), kind) in dests.iter().zip(returned).zip(&callee.outputs) {
                    out.push(Stmt::Let {
                        name: d.clone(),
                        ty: Some(*kind),
                        value: v,
                        span: *span,
                    });
                }
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                span,
            } => out.push(Stmt::If {
                cond: cond.clone(),
                then_body: inline_body(kernel, then_body, only, counter, stack)?,
                else_body: inline_body(kernel, else_body, only, counter, stack)?,
                span: *span,
            }),
            Stmt::For {
                var,
                start,
                end,
                body,
                span,
            } => out.push(Stmt::For {
                var: var.clone(),
                start: start.clone(),
                end: end.clone(),
                body: inline_body(kernel, body, only, counter, stack)?,
                span: *span,
            }),
            s => out.push(s.clone()),
        }
    }
    Ok(out)
}

/// Renames every variable bound or used in `s`.
pub(crate) fn rename_stmt(s: &mut Stmt, rename: &impl Fn(&str) -> Option<String>) {
    let mut name = |n: &mut String| {
        if let Some(new) = rename(n) {
            *n = new;
        }
    };
    match s {
        Stmt::Let { name: n, value, .. } | Stmt::Assign { name: n, value, .. } => {
            name(n);
            value.rename_vars(rename);
        }
        Stmt::Store {
            buffer, index, value, ..
        } => {
            buffer.rename_vars(rename);
            index.rename_vars(rename);
            value.rename_vars(rename);
        }
        Stmt::If {
            cond,
            then_body,
            else_body,
            ..
        } => {
            cond.rename_vars(rename);
            then_body.iter_mut().for_each(|s| rename_stmt(s, rename));
            else_body.iter_mut().for_each(|s| rename_stmt(s, rename));
        }
        Stmt::For {
            var, start, end, body, ..
        } => {
            name(var);
            start.rename_vars(rename);
            end.rename_vars(rename);
            body.iter_mut().for_each(|s| rename_stmt(s, rename));
        }
        Stmt::Barrier { .. } => {}
        Stmt::Call { dests, args, .. } => {
            dests.iter_mut().for_each(&mut name);
            args.iter_mut().for_each(|a| a.rename_vars(rename));
        }
        Stmt::Expr { expr, .. } => expr.rename_vars(rename),
        Stmt::Return { values, .. } => values.iter_mut().for_each(|v| v.rename_vars(rename)),
    }
}

/// Rewrites the routine named by every call statement.
pub(crate) fn rename_calls(body: &mut [Stmt], rename: &impl Fn(&str) -> Option<String>) {
    for s in body {
        match s {
            Stmt::Call { routine, .. } => {
                if let Some(n) = rename(routine) {
                    *routine = n;
                }
            }
            Stmt::If {
                then_body, else_body, ..
            } => {
                rename_calls(then_body, rename);
                rename_calls(else_body, rename);
            }
            Stmt::For { body, .. } => rename_calls(body, rename),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{compile, interpret_instance, InstanceContext, SimpleMemory, Value, VectorWidths};
    use crate::text::parse_kernel;

    fn run(k: &KernelProgram, args: Vec<Value>) -> Vec<Value> {
        let c = compile(k).unwrap();
        interpret_instance(
            &c,
            &InstanceContext::single(),
            args,
            &SimpleMemory::new(),
            VectorWidths::scalar(),
        )
        .unwrap()
    }

    #[test]
    fn inlined_kernel_computes_the_same() {
        let k = parse_kernel(
            "kernel k(x: i32) -> (i32, i32) {
                aux sq(v: i32) -> (i32) { v = v * v; return (v); }
                aux both(a: i32) -> (i32, i32) {
                    let (s) = call sq(a);
                    let (t) = call sq(a + 1);
                    return (s, t);
                }
                let (p, q) = call both(x);
                for i in 0..2 { let (r) = call sq(i); p = p + r; }
                return (p, q + x);
            }",
        )
        .unwrap();
        let flat = inline_aux(&k).unwrap();
        assert!(flat.aux.is_empty());
        for x in [-3, 0, 7] {
            assert_eq!(run(&k, vec![Value::I32(x)]), run(&flat, vec![Value::I32(x)]));
        }
    }

    #[test]
    fn recursion_is_reported() {
        let mut k = parse_kernel("kernel k() { aux f() { } call f(); }").unwrap();
        k.aux[0].body.push(Stmt::Call {
            dests: vec![],
            routine: "f".into(),
            args: vec![],
            span: Default::default(),
        });
        assert_eq!(inline_aux(&k), Err(TransformError::Recursion("f".into())));
        assert_eq!(inline_routine(&k, "f"), Err(TransformError::Recursion("f".into())));
        assert_eq!(inline_routine(&k, "g"), Err(TransformError::UnknownRoutine("g".into())));
    }

    #[test]
    fn single_routine_inlining_keeps_other_calls() {
        let k = parse_kernel(
            "kernel k(x: i32) -> (i32) {
                aux sq(v: i32) -> (i32) { return (v * v); }
                aux quad(a: i32) -> (i32) { let (s) = call sq(a); let (t) = call sq(s); return (t); }
                let (p) = call quad(x);
                return (p + 1);
            }",
        )
        .unwrap();
        let one = inline_routine(&k, "quad").unwrap();
        assert_eq!(one.aux.len(), 1);
        assert_eq!(one.aux[0].name, "sq");
        let two = inline_routine(&one, "sq").unwrap();
        assert!(two.aux.is_empty());
        for x in [-2, 3] {
            assert_eq!(run(&k, vec![Value::I32(x)]), run(&one, vec![Value::I32(x)]));
            assert_eq!(run(&k, vec![Value::I32(x)]), run(&two, vec![Value::I32(x)]));
        }
    }

    #[test]
    fn kernel_without_calls_is_unchanged() {
        let k = parse_kernel("kernel k(x: i32) -> (i32) { return (x + 1); }").unwrap();
        assert_eq!(inline_aux(&k).unwrap(), k);
    }
}
