//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::chain::Chain;
use common::runs::{self, SgemmCase};
use common::{laplacian, oracle};
use hpvm::analysis::{kernel_uniformity, Uniformity};
use hpvm::runtime::{stage_mappings, RuntimeConfig};
use hpvm::text::{parse_document, parse_kernel, print_document};
use hpvm::transform::fusion_pass;
use hpvm::verify::{has_errors, verify_document, Severity};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sgemm_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, (m, n, k)) in [(16, 16, 16), (32, 24, 16)].into_iter().enumerate() {
        let case = SgemmCase::random(m, n, k, 100 + i as u64);
        let want = case.expected();
        for (label, over) in [("host", runs::SGEMM_ON_HOST), ("gpu", &[][..])] {
            let (got, _) = runs::sgemm(&case, over, 0);
            let err = oracle::max_rel_err(&got, &want);
            worst = worst.max(err);
            ensure(err <= 1e-5, || format!("{m}x{n} on {label}: relative error {err:e}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("max relative error {worst:.2e}, {elapsed:.2?}"))
}

fn copy_elision() -> Outcome {
    let case = SgemmCase::random(16, 16, 16, 7);
    let (_, stats) = runs::sgemm(&case, &[], 0);
    let bytes = 16 * 16 * 4;
    let down = stats.copies_between("host", "gpu0");
    let up = stats.copies_between("gpu0", "host");
    ensure(down.count == 3 && down.bytes == 3 * bytes, || {
        format!("host->gpu0 {down:?}")
    })?;
    ensure(up.count == 1 && up.bytes == bytes, || format!("gpu0->host {up:?}"))?;

    // Laplacian on the gpu: only `img` is read; the three outputs are out-only.
    let frames = laplacian::random_frames(5, 1, 16);
    let (_, lstats) = laplacian::frames(&common::program("laplacian.hpvm"), &frames);
    let lap_down = lstats.copies_between("host", "gpu0").count;
    ensure(lap_down == 1, || format!("laplacian host->gpu0 copies: {lap_down}"))?;

    let mut rng = common::data::rng(77);
    let chains = 30;
    for _ in 0..chains {
        let c = Chain::random(&mut rng);
        let (_, s) = c.run(c.devices);
        let (want, hits) = c.expected_copies();
        let got: BTreeMap<String, u64> = s.copies.iter().map(|(k, v)| (k.clone(), v.count)).collect();
        ensure(got == want && s.elided == hits && s.is_consistent(), || {
            format!("{c:?}: copies {got:?} vs {want:?}, elided {} vs {hits}", s.elided)
        })?;
    }
    Ok(format!(
        "sgemm 3 in / 1 out, out-only buffers uncopied, {chains} random chains match"
    ))
}

fn fusion() -> Outcome {
    let frames = laplacian::random_frames(99, 10, 64);
    let want: Vec<_> = frames.iter().map(|f| oracle::laplacian(f)).collect();
    let mut launches = Vec::new();
    for nodes in [&[][..], &["Dilate", "Erode"], &["Dilate", "Erode", "Laplacian"]] {
        let (doc, _) = fusion_pass(&laplacian::with_fuse(nodes));
        let (out, stats) = laplacian::frames(&doc, &frames);
        ensure(out == want, || format!("fusing {nodes:?} changed the output"))?;
        launches.push(stats.total_launches());
    }
    ensure(launches == [30, 20, 10], || format!("launches {launches:?}"))?;
    Ok("launches 30 -> 20 -> 10 over 10 frames, outputs bit-identical".into())
}

fn pipeline_mappings() -> Outcome {
    let doc = common::program("pipeline.hpvm");
    let devices = ["host", "gpu0", "vec0"];
    let all: Vec<_> = stage_mappings(&doc.graphs()[0], &devices).collect();
    ensure(all.len() == 729, || format!("{} mappings", all.len()))?;
    let tokens: Vec<i32> = (0..32).map(|i| i * 7919 - 120000).collect();
    let want: Vec<i64> = tokens.iter().map(|&t| oracle::pipeline(t, -5)).collect();
    let samples: Vec<_> = all.iter().step_by(80).collect();
    for m in &samples {
        let got = common::pipeline::run(m, &tokens, -5, RuntimeConfig::default());
        ensure(got.outputs == want, || format!("stream differs under {m:?}"))?;
    }
    Ok(format!("729 mappings, {} sampled streams identical", samples.len()))
}

fn pipeline_overlap() -> Outcome {
    let delay = Duration::from_millis(20);
    let config = RuntimeConfig {
        workers: 6,
        stream_capacity: 2,
        stage_delay: Some(delay),
        ..Default::default()
    };
    let tokens: Vec<i32> = (0..50).collect();
    let got = common::pipeline::run(&[], &tokens, 2, config);
    ensure(got.outputs.len() == 50, || format!("{} outputs", got.outputs.len()))?;
    let gap = common::pipeline::steady_interval(&got.popped_at, 6);
    ensure(gap <= delay * 2, || format!("steady interval {gap:.2?}"))?;
    Ok(format!("steady interval {gap:.2?} (bound {:?})", delay * 2))
}

fn barrier_determinism() -> Outcome {
    let doc = common::program("reduction.hpvm");
    for t in [1, 4, 64] {
        let data = common::data::i32s(&mut common::data::rng(t as u64 + 1), 4 * t, -1000, 1000);
        let want = oracle::two_phase_sum(&data, t);
        for seed in 0..10 {
            let got = common::reduction::run(&doc, &data, t, seed);
            ensure(got == want, || format!("t = {t}, seed = {seed}: {got:?} vs {want:?}"))?;
        }
    }
    Ok("10 seeds x {1, 4, 64} instances match the two-phase sum".into())
}

fn verifier_suite() -> Outcome {
    let expected = [
        ("bad_one_to_one_grid.hpvm", "one-to-one-grid"),
        ("bad_arity.hpvm", "arity"),
        ("bad_store_to_in.hpvm", "access-mode"),
        ("bad_cross_level_edge.hpvm", "cross-level-edge"),
        ("bad_cycle.hpvm", "cycle"),
        ("bad_unfed_input.hpvm", "unfed-input"),
        ("bad_internal_code.hpvm", "internal-code"),
        ("bad_unknown_reference.hpvm", "unknown-reference"),
    ];
    for (file, rule) in expected {
        let rules: Vec<String> = match parse_document(&common::program_source(file)) {
            Err(e) => vec![e.rule.id().to_string()],
            Ok(doc) => verify_document(&doc)
                .into_iter()
                .filter(|d| d.severity == Severity::Error)
                .map(|d| d.rule.id().to_string())
                .collect(),
        };
        ensure(rules.iter().any(|r| r == rule), || {
            format!("{file}: wanted {rule}, got {rules:?}")
        })?;
    }
    let good = common::valid_programs();
    for (name, src) in &good {
        let diags = verify_document(&parse_document(src).map_err(|e| format!("{name}: {e}"))?);
        ensure(!has_errors(&diags), || format!("{name}: {diags:?}"))?;
    }
    Ok(format!(
        "{} invalid files rejected, {} examples clean",
        expected.len(),
        good.len()
    ))
}

fn round_trip_and_properties() -> Outcome {
    let all = common::valid_programs();
    for (name, src) in &all {
        let doc = parse_document(src).map_err(|e| format!("{name}: {e}"))?;
        let printed = print_document(&doc);
        let again = parse_document(&printed).map_err(|e| format!("{name} reprinted: {e}"))?;
        ensure(again == doc && print_document(&again) == printed, || {
            format!("{name} does not round-trip")
        })?;
    }
    for src in common::kernels::CRAFTED {
        let k = parse_kernel(src).unwrap();
        let stat: Vec<(String, bool)> = kernel_uniformity(&k)
            .into_iter()
            .map(|b| (b.buffer, b.class == Uniformity::Uniform))
            .collect();
        let dynamic = common::trace::dynamic_uniformity(&k, 16, 64, 1);
        ensure(stat == dynamic, || {
            format!("{}: static {stat:?}, traced {dynamic:?}", k.name())
        })?;
    }
    for seed in 0..10 {
        let total = common::kernels::counter_after(common::kernels::COUNTER, 64, seed);
        ensure(total == 64, || format!("atomic total {total} with seed {seed}"))?;
    }
    Ok(format!(
        "{} examples round-trip, 3 kernels match traces, atomics total 64",
        all.len()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("sgemm correctness", sgemm_correctness),
        ("copy elision", copy_elision),
        ("fusion structure and semantics", fusion),
        ("pipeline configurations", pipeline_mappings),
        ("pipeline overlap", pipeline_overlap),
        ("barrier determinism", barrier_determinism),
        ("verifier suite", verifier_suite),
        ("round-trip and property suites", round_trip_and_properties),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {} {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
