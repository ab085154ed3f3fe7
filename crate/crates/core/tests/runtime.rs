mod common;

use std::sync::Arc;

use common::oracle;
use common::runs::{self, SgemmCase};
use hpvm::kernel::{BufferData, Value};
use hpvm::runtime::{Executable, Machine, Runtime, RuntimeConfig, RuntimeError};

#[test]
fn sgemm_matches_naive_product_on_host_and_gpu() {
    let case = SgemmCase::random(16, 24, 8, 3);
    let want = case.expected();
    let (gpu, _) = runs::sgemm(&case, &[], 0);
    let (host, _) = runs::sgemm(&case, common::runs::SGEMM_ON_HOST, 0);
    assert!(oracle::max_rel_err(&gpu, &want) <= 1e-5);
    assert!(oracle::max_rel_err(&host, &want) <= 1e-5);
    assert_eq!(gpu, host);
}

#[test]
fn sgemm_copies_each_input_once() {
    let case = SgemmCase::random(16, 16, 16, 9);
    let (_, stats) = runs::sgemm(&case, &[], 0);
    let bytes = (16 * 16 * 4) as u64;
    let to_gpu = stats.copies_between("host", "gpu0");
    assert_eq!((to_gpu.count, to_gpu.bytes), (3, 3 * bytes));
    let back = stats.copies_between("gpu0", "host");
    assert_eq!((back.count, back.bytes), (1, bytes));
    assert!(stats.is_consistent());
    assert_eq!(stats.total_launches(), 1);
}

#[test]
fn sgemm_on_host_copies_nothing() {
    let case = SgemmCase::random(8, 8, 8, 1);
    let (_, stats) = runs::sgemm(&case, common::runs::SGEMM_ON_HOST, 0);
    assert_eq!(stats.total_copies().count, 0);
    assert!(stats.is_consistent());
}

#[test]
fn laplacian_is_mapping_independent() {
    let img = common::data::i32s(&mut common::data::rng(4), 40, -50, 50);
    let want = oracle::laplacian(&img);
    for over in [
        vec![],
        vec![("Dilate", "host"), ("Erode", "host"), ("Laplacian", "host")],
        vec![("Dilate", "vec0"), ("Erode", "host")],
    ] {
        let machine = Machine::default();
        let exe = runs::executable("laplacian.hpvm", &machine, &over);
        let rt = Runtime::new(machine, RuntimeConfig::default());
        assert_eq!(common::laplacian::frame(&rt, &exe, &img), want, "{over:?}");
        assert_eq!(rt.live_buffers(), 0);
        assert!(rt.stats().is_consistent());
    }
}

#[test]
fn reduction_matches_two_phase_sum() {
    let machine = Machine::default();
    let exe = runs::executable("reduction.hpvm", &machine, &[]);
    for (nb, t) in [(1, 1), (3, 4), (2, 64), (2, 7)] {
        let data = common::data::i32s(&mut common::data::rng(nb as u64 * 100 + t as u64), nb * t, -1000, 1000);
        let (partial, total) = oracle::two_phase_sum(&data, t);
        let rt = Runtime::new(
            machine.clone(),
            RuntimeConfig {
                seed: 5,
                ..Default::default()
            },
        );
        let d = rt.alloc(&BufferData::I32(data));
        let p = rt.alloc(&BufferData::I32(vec![0; nb]));
        let s = rt.alloc(&BufferData::I32(vec![0]));
        let out = rt
            .run(
                &exe,
                vec![
                    Value::Buf(d),
                    Value::Buf(p),
                    Value::Buf(s),
                    Value::I32(nb as i32),
                    Value::I32(t as i32),
                ],
            )
            .unwrap();
        assert_eq!(out, vec![Value::Buf(s)]);
        assert_eq!(rt.read(p).unwrap(), BufferData::I32(partial));
        assert_eq!(rt.read(s).unwrap(), BufferData::I32(vec![total]));
        assert_eq!(rt.live_buffers(), 3, "scratch buffers are released");
    }
}

fn pipeline_rt(workers: usize) -> (Runtime, Arc<Executable>) {
    let machine = Machine::default();
    let exe = runs::executable("pipeline.hpvm", &machine, &[]);
    (
        Runtime::new(
            machine,
            RuntimeConfig {
                workers,
                ..Default::default()
            },
        ),
        exe,
    )
}

#[test]
fn pipeline_preserves_token_order() {
    let (rt, exe) = pipeline_rt(3);
    let h = rt.launch(&exe, vec![Value::I32(7)], true).unwrap();
    let toks: Vec<i32> = (0..40).map(|i| i * 37 - 600).collect();
    for &t in &toks {
        rt.push(h, vec![Value::I32(t)]).unwrap();
    }
    rt.close(h).unwrap();
    let mut got = Vec::new();
    while let Some(v) = rt.pop(h).unwrap() {
        got.push(v);
    }
    let want: Vec<_> = toks.iter().map(|&t| vec![Value::I64(oracle::pipeline(t, 7))]).collect();
    assert_eq!(got, want);
    rt.wait(h).unwrap();
    rt.wait(h).unwrap();
    assert_eq!(rt.stats_snapshot(h).unwrap().total_launches(), 6 * 40);
}

#[test]
fn streaming_launch_protocol_errors() {
    let (rt, exe) = pipeline_rt(2);
    assert_eq!(
        rt.launch(&exe, vec![Value::I32(1)], false),
        Err(RuntimeError::StreamingMismatch { graph_streams: true })
    );
    let h = rt.launch(&exe, vec![Value::I32(1)], true).unwrap();
    assert_eq!(rt.wait(h), Err(RuntimeError::StreamOpen));
    assert!(matches!(rt.push(h, vec![]), Err(RuntimeError::ArgumentCount { .. })));
    assert!(matches!(rt.outputs(h), Err(RuntimeError::IsStreaming(_))));
    rt.close(h).unwrap();
    assert_eq!(rt.push(h, vec![Value::I32(1)]), Err(RuntimeError::StreamClosed));
    assert_eq!(rt.pop(h).unwrap(), None);
    rt.wait(h).unwrap();
    rt.release(h).unwrap();
    assert_eq!(rt.wait(h), Err(RuntimeError::UnknownHandle(h.id)));
}

#[test]
fn one_shot_launch_protocol() {
    let machine = Machine::default();
    let exe = runs::executable("laplacian.hpvm", &machine, &[]);
    let rt = Runtime::new(machine, RuntimeConfig::default());
    assert!(matches!(
        rt.launch(&exe, vec![], false),
        Err(RuntimeError::ArgumentCount { expected: 5, got: 0 })
    ));
    let other = Runtime::new(Machine::host_only(), RuntimeConfig::default());
    assert_eq!(other.launch(&exe, vec![], false), Err(RuntimeError::MachineMismatch));
    let bufs: Vec<_> = (0..4)
        .map(|_| Value::Buf(rt.alloc(&BufferData::I32(vec![1, 2, 3]))))
        .collect();
    let mut args = bufs.clone();
    args.push(Value::I32(3));
    let h = rt.launch(&exe, args, false).unwrap();
    rt.wait(h).unwrap();
    rt.wait(h).unwrap();
    assert_eq!(rt.outputs(h).unwrap(), vec![bufs[3]]);
    assert!(matches!(rt.push(h, vec![]), Err(RuntimeError::NotStreaming(_))));
}

#[test]
fn bad_extent_is_reported() {
    let machine = Machine::default();
    let exe = runs::executable("laplacian.hpvm", &machine, &[]);
    let rt = Runtime::new(machine, RuntimeConfig::default());
    let mut args: Vec<_> = (0..4)
        .map(|_| Value::Buf(rt.alloc(&BufferData::I32(vec![0]))))
        .collect();
    args.push(Value::I32(0));
    assert!(matches!(rt.run(&exe, args), Err(RuntimeError::BadExtent { .. })));
}

#[test]
fn out_of_bounds_access_names_the_node() {
    let machine = Machine::default();
    let exe = runs::executable("laplacian.hpvm", &machine, &[]);
    let rt = Runtime::new(machine, RuntimeConfig::default());
    let mut args: Vec<_> = (0..4)
        .map(|_| Value::Buf(rt.alloc(&BufferData::I32(vec![0; 2]))))
        .collect();
    args.push(Value::I32(5));
    match rt.run(&exe, args) {
        Err(RuntimeError::Kernel { node, .. }) => assert!(["Dilate", "Erode"].contains(&node.as_str())),
        other => panic!("{other:?}"),
    }
}
