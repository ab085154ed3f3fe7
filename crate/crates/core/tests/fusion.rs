mod common;

use common::laplacian;
use common::oracle;
use hpvm::transform::{fusion_pass, MergeKind};
use hpvm::verify::{has_errors, verify_document};

#[test]
fn fusion_cuts_launches_and_keeps_results() {
    let frames = laplacian::random_frames(11, 10, 33);
    let want: Vec<_> = frames.iter().map(|f| oracle::laplacian(f)).collect();

    let plain = laplacian::with_fuse(&[]);
    let (out, stats) = laplacian::frames(&plain, &frames);
    assert_eq!(out, want);
    assert_eq!(stats.total_launches(), 30);

    let (two, steps) = fusion_pass(&laplacian::with_fuse(&["Dilate", "Erode"]));
    assert_eq!(
        steps.iter().map(|s| s.kind).collect::<Vec<_>>(),
        [MergeKind::Independent]
    );
    let (out, stats) = laplacian::frames(&two, &frames);
    assert_eq!(out, want);
    assert_eq!(stats.total_launches(), 20);

    let (all, steps) = fusion_pass(&laplacian::with_fuse(&["Dilate", "Erode", "Laplacian"]));
    assert_eq!(steps.len(), 2);
    let (out, stats) = laplacian::frames(&all, &frames);
    assert_eq!(out, want);
    assert_eq!(stats.total_launches(), 10);
}

#[test]
fn fused_documents_verify_and_round_trip() {
    for nodes in [
        &["Dilate", "Erode"][..],
        &["Dilate", "Erode", "Laplacian"],
        &["Dilate", "Laplacian"],
    ] {
        let (doc, _) = fusion_pass(&laplacian::with_fuse(nodes));
        let diags = verify_document(&doc);
        assert!(!has_errors(&diags), "{nodes:?}: {diags:?}");
        let printed = hpvm::text::print_document(&doc);
        let again = hpvm::text::parse_document(&printed).unwrap();
        assert_eq!(hpvm::text::print_document(&again), printed);
    }
}

#[test]
fn fusing_a_dependent_pair_alone() {
    let frames = laplacian::random_frames(12, 3, 17);
    let (doc, steps) = fusion_pass(&laplacian::with_fuse(&["Dilate", "Laplacian"]));
    assert_eq!(steps.len(), 1);
    assert_eq!(steps[0].kind, MergeKind::Dependent);
    let (out, stats) = laplacian::frames(&doc, &frames);
    assert_eq!(out, frames.iter().map(|f| oracle::laplacian(f)).collect::<Vec<_>>());
    assert_eq!(stats.total_launches(), 6);
}

/// Two sgemm tiles over the same A and B writing C1 = A * B and C2 = 2 * A * B,
/// each an allocation leaf plus a compute leaf.
fn twin_sgemm(fuse: bool) -> hpvm::IrDocument {
    let src = common::program_source("sgemm.hpvm");
    let kernels = &src[..src.find("graph Sgemm").unwrap()];
    let f = if fuse { " fuse" } else { "" };
    let tile = |name: &str, c: &str, alpha: &str| {
        format!(
            "        internal {name}(in a: buf<f32>, in b: buf<f32>, inout c: buf<f32>, n: i32, k: i32, alpha: f32, beta: f32) grid(tm, tn){f} {{
            leaf {name}Alloc = alloc_tile grid(1);
            leaf {name}Leaf = sgemm_tile grid(8, 8);
            edge {name}Alloc.0 -> {name}Leaf.s all_to_all;
            bind in a -> {name}Leaf.a; bind in b -> {name}Leaf.b; bind in c -> {name}Leaf.c;
            bind in n -> {name}Leaf.n; bind in k -> {name}Leaf.k;
            bind in alpha -> {name}Leaf.alpha; bind in beta -> {name}Leaf.beta;
        }}
        bind in a -> {name}.a; bind in b -> {name}.b; bind in {c} -> {name}.c;
        bind in n -> {name}.n; bind in k -> {name}.k; bind in {alpha} -> {name}.alpha; bind in beta -> {name}.beta;
"
        )
    };
    let src = format!(
        "{kernels}graph Twin {{
    internal Root(in a: buf<f32>, in b: buf<f32>, inout c1: buf<f32>, inout c2: buf<f32>,
                  n: i32, k: i32, alpha1: f32, alpha2: f32, beta: f32, tm: i32, tn: i32) {{
{}{}    }}
}}
",
        tile("T1", "c1", "alpha1"),
        tile("T2", "c2", "alpha2")
    );
    hpvm::text::parse_document(&src).unwrap()
}

fn run_twin(doc: &hpvm::IrDocument) -> (Vec<f32>, Vec<f32>, u64) {
    use hpvm::kernel::{BufferData, Value};
    use hpvm::runtime::{Executable, Machine, Runtime, RuntimeConfig};
    let case = common::runs::SgemmCase::random(16, 8, 8, 21);
    let machine = Machine::default();
    let exe = std::sync::Arc::new(Executable::new(doc, None, &machine, &[]).unwrap());
    let rt = Runtime::new(machine, RuntimeConfig::default());
    let a = rt.alloc(&BufferData::F32(case.a.clone()));
    let b = rt.alloc(&BufferData::F32(case.b.clone()));
    let c1 = rt.alloc(&BufferData::F32(case.c.clone()));
    let c2 = rt.alloc(&BufferData::F32(case.c.clone()));
    let args = vec![
        Value::Buf(a),
        Value::Buf(b),
        Value::Buf(c1),
        Value::Buf(c2),
        Value::I32(8),
        Value::I32(8),
        Value::F32(1.0),
        Value::F32(2.0),
        Value::F32(0.0),
        Value::I32(2),
        Value::I32(1),
    ];
    rt.run(&exe, args).unwrap();
    let read = |id| rt.read(id).unwrap().as_f32().unwrap().to_vec();
    (read(c1), read(c2), rt.stats().total_launches())
}

#[test]
fn alloc_compute_tiles_fuse() {
    let plain = twin_sgemm(false);
    assert!(!has_errors(&verify_document(&plain)));
    let (fused, steps) = fusion_pass(&twin_sgemm(true));
    assert_eq!(steps.len(), 1);
    assert_eq!(steps[0].kind, MergeKind::AllocCompute);
    let diags = verify_document(&fused);
    assert!(!has_errors(&diags), "{diags:?}");

    let (p1, p2, plain_launches) = run_twin(&plain);
    let (f1, f2, fused_launches) = run_twin(&fused);
    assert_eq!((&p1, &p2), (&f1, &f2));
    assert_eq!((plain_launches, fused_launches), (2, 1));
    let case = common::runs::SgemmCase::random(16, 8, 8, 21);
    let want = oracle::sgemm(&case.a, &case.b, &case.c, 16, 8, 8, 2.0, 0.0);
    assert!(oracle::max_rel_err(&p2, &want) <= 1e-5);
}
