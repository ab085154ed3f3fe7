use std::fmt::Write;

use crate::document::IrDocument;
use crate::graph::{BindDirection, DFGraph, NodeId, NodeKind};
use crate::kernel::*;

const INDENT: &str = "    ";

/// Prints a document in the syntax accepted by
/// [`parse_document`](super::parse_document).
pub fn print_document(doc: &IrDocument) -> String {
    let mut parts: Vec<String> = doc.kernels().iter().map(|k| print_kernel(k)).collect();
    parts.extend(doc.graphs().iter().map(print_graph));
    parts.join("\n")
}

pub fn print_kernel(k: &KernelProgram) -> String {
    let mut out = String::new();
    write_signature(&mut out, "kernel", &k.entry);
    out.push_str(" {\n");
    for aux in &k.aux {
        out.push_str(INDENT);
        write_signature(&mut out, "aux", aux);
        out.push_str(" {\n");
        write_block(&mut out, &aux.body, 2);
        out.push_str(INDENT);
        out.push_str("}\n");
    }
    write_block(&mut out, &k.entry.body, 1);
    out.push_str("}\n");
    out
}

fn write_signature(out: &mut String, keyword: &str, r: &Routine) {
    write!(out, "{keyword} {}({})", r.name, params(&r.params)).unwrap();
    write_outputs(out, &r.outputs);
}

fn write_outputs(out: &mut String, outputs: &[ValueKind]) {
    if !outputs.is_empty() {
        let types: Vec<String> = outputs.iter().map(|k| k.to_string()).collect();
        write!(out, " -> ({})", types.join(", ")).unwrap();
    }
}

fn params(ps: &[Param]) -> String {
    ps.iter()
        .map(|p| match p.mode {
            Some(m) => format!("{m} {}: {}", p.name, p.kind),
            None => format!("{}: {}", p.name, p.kind),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn write_block(out: &mut String, body: &[Stmt], depth: usize) {
    for s in body {
        write_stmt(out, s, depth);
    }
}

fn write_stmt(out: &mut String, s: &Stmt, depth: usize) {
    let pad = INDENT.repeat(depth);
    match s {
        Stmt::Let { name, ty, value, .. } => match ty {
            Some(t) => writeln!(out, "{pad}let {name}: {t} = {};", print_expr(value)),
            None => writeln!(out, "{pad}let {name} = {};", print_expr(value)),
        }
        .unwrap(),
        Stmt::Assign { name, value, .. } => writeln!(out, "{pad}{name} = {};", print_expr(value)).unwrap(),
        Stmt::Store {
            buffer, index, value, ..
        } => writeln!(
            out,
            "{pad}{}[{}] = {};",
            prec(buffer, POSTFIX),
            print_expr(index),
            print_expr(value)
        )
        .unwrap(),
        Stmt::If {
            cond,
            then_body,
            else_body,
            ..
        } => {
            writeln!(out, "{pad}if {} {{", print_expr(cond)).unwrap();
            write_block(out, then_body, depth + 1);
            if else_body.is_empty() {
                writeln!(out, "{pad}}}").unwrap();
            } else {
                writeln!(out, "{pad}}} else {{").unwrap();
                write_block(out, else_body, depth + 1);
                writeln!(out, "{pad}}}").unwrap();
            }
        }
        Stmt::For {
            var, start, end, body, ..
        } => {
            writeln!(out, "{pad}for {var} in {}..{} {{", print_expr(start), print_expr(end)).unwrap();
            write_block(out, body, depth + 1);
            writeln!(out, "{pad}}}").unwrap();
        }
        Stmt::Barrier { .. } => writeln!(out, "{pad}barrier();").unwrap(),
        Stmt::Call {
            dests, routine, args, ..
        } => {
            let args = exprs(args);
            if dests.is_empty() {
                writeln!(out, "{pad}call {routine}({args});").unwrap();
            } else {
                writeln!(out, "{pad}let ({}) = call {routine}({args});", dests.join(", ")).unwrap();
            }
        }
        Stmt::Expr { expr, .. } => writeln!(out, "{pad}{};", print_expr(expr)).unwrap(),
        Stmt::Return { values, .. } => writeln!(out, "{pad}return ({});", exprs(values)).unwrap(),
    }
}

fn exprs(es: &[Expr]) -> String {
    es.iter().map(print_expr).collect::<Vec<_>>().join(", ")
}

const UNARY: u8 = 10;
const POSTFIX: u8 = 11;

pub fn print_expr(e: &Expr) -> String {
    prec(e, 0)
}

/// Prints `e` so that it parses back as a single operand at binding
/// strength `min`.
fn prec(e: &Expr, min: u8) -> String {
    match e {
        Expr::Int { value, ty } => {
            let s = match ty {
                ScalarType::I32 => value.to_string(),
                t => format!("{value}{t}"),
            };
            paren_if(*value < 0 && min >= POSTFIX, s)
        }
        Expr::Float { value, ty } => {
            let s = match ty {
                ScalarType::F32 => format!("{value:?}"),
                t => format!("{value:?}{t}"),
            };
            paren_if(value.is_sign_negative() && min >= POSTFIX, s)
        }
        Expr::Bool(b) => b.to_string(),
        Expr::Var(v) => v.clone(),
        Expr::Load { buffer, index } => format!("{}[{}]", prec(buffer, POSTFIX), print_expr(index)),
        Expr::Unary { op, operand } => {
            let sym = match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            };
            let inner = match **operand {
                // a sign directly before a literal would be folded into it
                Expr::Int { .. } | Expr::Float { .. } if *op == UnOp::Neg => format!("({})", print_expr(operand)),
                _ => prec(operand, UNARY),
            };
            paren_if(min > UNARY, format!("{sym}{inner}"))
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            let s = format!("{} {} {}", prec(lhs, p), op.symbol(), prec(rhs, p + 1));
            paren_if(p < min, s)
        }
        Expr::Cast { ty, operand } => format!("{ty}({})", print_expr(operand)),
        Expr::Builtin { func, args } => format!("{}({})", func.name(), exprs(args)),
        Expr::Intrinsic(i) => match i {
            Intrinsic::InstanceId { dim, depth } => depth_call("instance_id", Some(*dim), *depth),
            Intrinsic::NumInstances { dim, depth } => depth_call("num_instances", Some(*dim), *depth),
            Intrinsic::NumDims { depth } => depth_call("num_dims", None, *depth),
            Intrinsic::VectorLength { type_size } => format!("vector_length({})", print_expr(type_size)),
            Intrinsic::Malloc { elem, bytes } => format!("malloc<{elem}>({})", print_expr(bytes)),
            Intrinsic::Atomic {
                op,
                buffer,
                index,
                value,
            } => format!(
                "{}({}, {}, {})",
                op.name(),
                print_expr(buffer),
                print_expr(index),
                print_expr(value)
            ),
        },
    }
}

fn depth_call(name: &str, dim: Option<Dim>, depth: u32) -> String {
    let mut args = Vec::new();
    if let Some(d) = dim {
        args.push(d.name().to_string());
    }
    if depth != 0 {
        args.push(depth.to_string());
    }
    format!("{name}({})", args.join(", "))
}

fn paren_if(cond: bool, s: String) -> String {
    if cond {
        format!("({s})")
    } else {
        s
    }
}

pub fn print_graph(g: &DFGraph) -> String {
    let mut out = String::new();
    writeln!(out, "graph {} {{", g.name).unwrap();
    write_internal(&mut out, g, g.root(), 1);
    out.push_str("}\n");
    out
}

fn node_tail(g: &DFGraph, id: NodeId) -> String {
    let n = g.get(id);
    let grid: Vec<String> = n.grid.iter().map(|e| e.to_string()).collect();
    let mut s = format!(" grid({})", grid.join(", "));
    if let Some(t) = n.target {
        write!(s, " target = {}", t.keyword()).unwrap();
    }
    if n.fuse {
        s.push_str(" fuse");
    }
    s
}

fn write_internal(out: &mut String, g: &DFGraph, id: NodeId, depth: usize) {
    let pad = INDENT.repeat(depth);
    let inner = INDENT.repeat(depth + 1);
    let n = g.get(id);
    let NodeKind::Internal { children, stray_code } = &n.kind else {
        unreachable!("called on internal nodes")
    };
    let ps: Vec<Param> = n
        .inputs
        .iter()
        .map(|p| Param {
            name: p.name.clone(),
            kind: p.kind,
            mode: p.mode,
        })
        .collect();
    write!(out, "{pad}internal {}({})", n.name, params(&ps)).unwrap();
    write_outputs(out, &n.outputs);
    writeln!(out, "{} {{", node_tail(g, id)).unwrap();

    for &c in children {
        let child = g.get(c);
        match &child.kind {
            NodeKind::Leaf { kernel } => {
                writeln!(
                    out,
                    "{inner}leaf {} = {}{};",
                    child.name,
                    kernel.name(),
                    node_tail(g, c)
                )
                .unwrap();
            }
            NodeKind::Internal { .. } => write_internal(out, g, c, depth + 1),
        }
    }
    write_block(out, stray_code, depth + 1);

    for e in g.edges() {
        let home = g.parent(e.src).unwrap_or(g.root());
        if home != id {
            continue;
        }
        let dst = g.get(e.dst);
        let dst_port = dst
            .inputs
            .get(e.dst_port)
            .map_or(e.dst_port.to_string(), |p| p.name.clone());
        write!(
            out,
            "{inner}edge {}.{} -> {}.{} {}",
            g.get(e.src).name,
            e.src_port,
            dst.name,
            dst_port,
            e.replication.keyword()
        )
        .unwrap();
        if e.streaming {
            out.push_str(" stream");
        }
        out.push_str(";\n");
    }
    for b in g.bindings() {
        let home = g.parent(b.child).unwrap_or(g.root());
        if home != id {
            continue;
        }
        let child = g.get(b.child);
        match b.direction {
            BindDirection::Input => {
                let pp = n
                    .inputs
                    .get(b.parent_port)
                    .map_or(b.parent_port.to_string(), |p| p.name.clone());
                let cp = child
                    .inputs
                    .get(b.child_port)
                    .map_or(b.child_port.to_string(), |p| p.name.clone());
                write!(out, "{inner}bind in {pp} -> {}.{cp}", child.name).unwrap();
            }
            BindDirection::Output => {
                write!(
                    out,
                    "{inner}bind out {}.{} -> {}",
                    child.name, b.child_port, b.parent_port
                )
                .unwrap();
            }
        }
        if b.streaming {
            out.push_str(" stream");
        }
        out.push_str(";\n");
    }
    writeln!(out, "{pad}}}").unwrap();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_kernel;

    fn round_trip(src: &str) {
        let k = parse_kernel(src).unwrap();
        let printed = print_kernel(&k);
        let again = parse_kernel(&printed).unwrap_or_else(|e| panic!("{e}\n{printed}"));
        assert_eq!(k, again, "{printed}");
    }

    #[test]
    fn expressions_round_trip() {
        round_trip("kernel k(a: i32, b: i32) -> (i32) { return ((a - b) - (a - b) * -3); }");
        round_trip("kernel k(a: f32) -> (f32) { return (-(a * 2.5) - -0.25 + 1e-7); }");
        round_trip("kernel k(a: i64) -> (bool) { return (!(a < 5i64) && a != -9223372036854775808i64); }");
    }

    #[test]
    fn negation_of_literal_stays_unary() {
        let e = Expr::Unary {
            op: UnOp::Neg,
            operand: Box::new(Expr::i32(5)),
        };
        assert_eq!(print_expr(&e), "-(5)");
    }

    #[test]
    fn statements_round_trip() {
        round_trip(
            "kernel k(inout b: buf<i32>, n: i32) -> (i32) {
                aux f(x: i32) -> (i32, i32) { return (x, x + 1); }
                let (p, q) = call f(n);
                for i in 0..n { if i % 2 == 0 { b[i] = p; } else if i > 3 { b[i] = q; } else { barrier(); } }
                atomic_add(b, 0, 1);
                return (len(b));
            }",
        );
    }
}
