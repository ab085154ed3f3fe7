#![allow(dead_code)]

use std::path::PathBuf;

use hpvm::text::parse_document;
use hpvm::IrDocument;

pub fn programs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

pub fn program_source(name: &str) -> String {
    let path = programs_dir().join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn program(name: &str) -> IrDocument {
    parse_document(&program_source(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every shipped `.hpvm` file, sorted by name, as (file name, source).
pub fn all_programs() -> Vec<(String, String)> {
    let mut out: Vec<_> = std::fs::read_dir(programs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "hpvm"))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

pub fn valid_programs() -> Vec<(String, String)> {
    all_programs()
        .into_iter()
        .filter(|(n, _)| !n.starts_with("bad_"))
        .collect()
}

pub mod oracle {
    /// C = alpha * A * B + beta * C with a plain triple loop in f64.
    #[allow(clippy::too_many_arguments)]
    pub fn sgemm(a: &[f32], b: &[f32], c: &[f32], m: usize, n: usize, k: usize, alpha: f32, beta: f32) -> Vec<f32> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for q in 0..k {
                    acc += a[i * k + q] as f64 * b[q * n + j] as f64;
                }
                out[i * n + j] = (alpha as f64 * acc + beta as f64 * c[i * n + j] as f64) as f32;
            }
        }
        out
    }

    pub fn max_rel_err(got: &[f32], want: &[f32]) -> f64 {
        assert_eq!(got.len(), want.len());
        got.iter()
            .zip(want)
            .map(|(&g, &w)| (g as f64 - w as f64).abs() / (w as f64).abs().max(1.0))
            .fold(0.0, f64::max)
    }

    /// Dilate + erode - 2 * img over a 1-D signal with clamped borders.
    pub fn laplacian(img: &[i32]) -> Vec<i32> {
        let n = img.len();
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(n - 1);
                let w = &img[lo..=hi];
                w.iter().max().unwrap() + w.iter().min().unwrap() - 2 * img[i]
            })
            .collect()
    }

    pub fn pipeline(tok: i32, gain: i32) -> i64 {
        let v = tok.wrapping_mul(gain).wrapping_add(17);
        let v = v ^ (v >> 3);
        let v = v.clamp(-100000, 100000) as i64;
        let acc: i64 = (0..4).map(|i| v * v + i).sum();
        acc % 1000003
    }

    /// Per-block sums, then their total.
    pub fn two_phase_sum(data: &[i32], t: usize) -> (Vec<i32>, i32) {
        let partial: Vec<i32> = data.chunks(t).map(|c| c.iter().sum()).collect();
        let total = partial.iter().sum();
        (partial, total)
    }
}

pub mod data {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn f32s(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
        (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    pub fn i32s(rng: &mut ChaCha8Rng, len: usize, lo: i32, hi: i32) -> Vec<i32> {
        (0..len).map(|_| rng.gen_range(lo..hi)).collect()
    }
}

pub mod runs {
    use std::sync::Arc;

    use hpvm::kernel::{BufferData, Value};
    use hpvm::runtime::{Executable, Machine, RunStats, Runtime, RuntimeConfig};

    pub const SGEMM_ON_HOST: &[(&str, &str)] = &[("Allocation", "host"), ("SgemmLeaf", "host")];

    pub fn overrides(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    pub fn executable(file: &str, machine: &Machine, over: &[(&str, &str)]) -> Arc<Executable> {
        let doc = super::program(file);
        Arc::new(Executable::new(&doc, None, machine, &overrides(over)).unwrap())
    }

    pub struct SgemmCase {
        pub m: usize,
        pub n: usize,
        pub k: usize,
        pub a: Vec<f32>,
        pub b: Vec<f32>,
        pub c: Vec<f32>,
        pub alpha: f32,
        pub beta: f32,
    }

    impl SgemmCase {
        pub fn random(m: usize, n: usize, k: usize, seed: u64) -> Self {
            let mut r = super::data::rng(seed);
            SgemmCase {
                m,
                n,
                k,
                a: super::data::f32s(&mut r, m * k),
                b: super::data::f32s(&mut r, k * n),
                c: super::data::f32s(&mut r, m * n),
                alpha: 1.5,
                beta: -0.5,
            }
        }

        pub fn expected(&self) -> Vec<f32> {
            super::oracle::sgemm(&self.a, &self.b, &self.c, self.m, self.n, self.k, self.alpha, self.beta)
        }
    }

    /// Runs sgemm with all three matrices tracked, requests C and returns
    /// it with the runtime's counters.
    pub fn sgemm(case: &SgemmCase, over: &[(&str, &str)], seed: u64) -> (Vec<f32>, RunStats) {
        let machine = Machine::default();
        let exe = executable("sgemm.hpvm", &machine, over);
        let rt = Runtime::new(
            machine,
            RuntimeConfig {
                seed,
                ..Default::default()
            },
        );
        let ids: Vec<_> = [&case.a, &case.b, &case.c]
            .into_iter()
            .map(|v| {
                let d = BufferData::F32(v.clone());
                let id = rt.alloc(&d);
                rt.track_mem(id, d.byte_len()).unwrap();
                id
            })
            .collect();
        let args = vec![
            Value::Buf(ids[0]),
            Value::Buf(ids[1]),
            Value::Buf(ids[2]),
            Value::I32(case.m as i32),
            Value::I32(case.n as i32),
            Value::I32(case.k as i32),
            Value::F32(case.alpha),
            Value::F32(case.beta),
            Value::I32((case.m / 8) as i32),
            Value::I32((case.n / 8) as i32),
        ];
        rt.run(&exe, args).unwrap();
        rt.request_mem(ids[2]).unwrap();
        let c = rt.read(ids[2]).unwrap().as_f32().unwrap().to_vec();
        (c, rt.stats())
    }
}

/// Random two-node chains over shared tracked buffers, and an independent
/// simulation of which copies a coherent runtime has to make.
pub mod chain {
    use std::collections::{BTreeMap, BTreeSet};

    use rand::seq::SliceRandom;
    use rand::Rng;

    use hpvm::kernel::{AccessMode, BufferData, Value};
    use hpvm::runtime::{Machine, RunStats, Runtime, RuntimeConfig};

    pub const LEN: usize = 4;
    pub const DEVICES: [&str; 3] = ["host", "gpu0", "vec0"];

    #[derive(Clone, Debug)]
    pub struct Chain {
        pub buffers: usize,
        /// Per node: (buffer index, mode) pairs.
        pub uses: [Vec<(usize, AccessMode)>; 2],
        pub devices: [&'static str; 2],
    }

    impl Chain {
        pub fn random(rng: &mut impl Rng) -> Chain {
            let buffers = rng.gen_range(1..=3);
            let modes = [AccessMode::In, AccessMode::Out, AccessMode::InOut];
            let mut uses = [Vec::new(), Vec::new()];
            for u in &mut uses {
                for b in 0..buffers {
                    if rng.gen_bool(0.7) {
                        u.push((b, *modes.choose(rng).unwrap()));
                    }
                }
            }
            Chain {
                buffers,
                uses,
                devices: [*DEVICES.choose(rng).unwrap(), *DEVICES.choose(rng).unwrap()],
            }
        }

        fn root_mode(&self, b: usize) -> AccessMode {
            self.uses
                .iter()
                .flatten()
                .filter(|(x, _)| *x == b)
                .map(|(_, m)| *m)
                .reduce(AccessMode::join)
                .unwrap_or(AccessMode::In)
        }

        pub fn source(&self) -> String {
            let mut s = String::new();
            for (node, uses) in self.uses.iter().enumerate() {
                let mut params: Vec<String> = uses
                    .iter()
                    .map(|(b, m)| format!("{} b{b}: buf<i32>", m.keyword()))
                    .collect();
                if node == 1 {
                    params.push("tok: i32".into());
                }
                let ret = if node == 0 { " -> (i32)" } else { "" };
                s += &format!(
                    "kernel k{node}({}){ret} {{\n    let i = instance_id(x);\n",
                    params.join(", ")
                );
                s += if node == 1 {
                    "    let acc = tok;\n"
                } else {
                    "    let acc = 0;\n"
                };
                for (b, m) in uses {
                    if m.reads() {
                        s += &format!("    acc = acc * 3 + b{b}[i];\n");
                    }
                }
                for (b, m) in uses {
                    if m.writes() {
                        s += &format!("    b{b}[i] = acc + {} + i;\n", 10 * (node + 1) + b);
                    }
                }
                s += if node == 0 { "    return (acc);\n}\n" } else { "}\n" };
            }
            let ports: Vec<String> = (0..self.buffers)
                .map(|b| format!("{} b{b}: buf<i32>", self.root_mode(b).keyword()))
                .collect();
            s += &format!("graph Chain {{\n    internal Root({}, n: i32) {{\n", ports.join(", "));
            s += "        leaf A = k0 grid(n);\n        leaf B = k1 grid(n);\n";
            for (node, uses) in self.uses.iter().enumerate() {
                let name = ["A", "B"][node];
                for (b, _) in uses {
                    s += &format!("        bind in b{b} -> {name}.b{b};\n");
                }
            }
            s += "        edge A.0 -> B.tok one_to_one;\n    }\n}\n";
            s
        }

        pub fn initial(&self, b: usize) -> Vec<i32> {
            (0..LEN as i32).map(|i| i * 7 - 3 * b as i32 + 1).collect()
        }

        /// Runs the chain with every buffer tracked, requests every buffer
        /// back and returns the host contents and the counters.
        pub fn run(&self, devices: [&str; 2]) -> (Vec<Vec<i32>>, RunStats) {
            let doc = hpvm::text::parse_document(&self.source()).unwrap();
            let machine = Machine::default();
            let over = vec![
                ("A".to_string(), devices[0].to_string()),
                ("B".to_string(), devices[1].to_string()),
            ];
            let exe = std::sync::Arc::new(hpvm::runtime::Executable::new(&doc, None, &machine, &over).unwrap());
            let rt = Runtime::new(machine, RuntimeConfig::default());
            let ids: Vec<_> = (0..self.buffers)
                .map(|b| {
                    let d = BufferData::I32(self.initial(b));
                    let id = rt.alloc(&d);
                    rt.track_mem(id, d.byte_len()).unwrap();
                    id
                })
                .collect();
            let mut args: Vec<Value> = ids.iter().map(|&i| Value::Buf(i)).collect();
            args.push(Value::I32(LEN as i32));
            rt.run(&exe, args).unwrap();
            let data = ids
                .iter()
                .map(|&id| {
                    rt.request_mem(id).unwrap();
                    rt.read(id).unwrap().as_i32().unwrap().to_vec()
                })
                .collect();
            (data, rt.stats())
        }

        /// Copies a coherent runtime makes, keyed "from->to", plus the number
        /// of reads served without a copy. Each buffer starts valid only on
        /// the host; a read from a device without a valid copy copies from
        /// the last writer; a write leaves the writer as the only valid
        /// holder; finally every buffer is read back on the host.
        pub fn expected_copies(&self) -> (BTreeMap<String, u64>, u64) {
            let mut copies = BTreeMap::new();
            let mut hits = 0;
            for b in 0..self.buffers {
                let mut valid: BTreeSet<&str> = BTreeSet::from(["host"]);
                let mut last_writer = "host";
                let mut accesses: Vec<(&str, AccessMode)> = Vec::new();
                for (node, uses) in self.uses.iter().enumerate() {
                    for (x, m) in uses {
                        if *x == b {
                            accesses.push((self.devices[node], *m));
                        }
                    }
                }
                accesses.push(("host", AccessMode::In));
                for (dev, mode) in accesses {
                    if mode.reads() {
                        if valid.contains(dev) {
                            hits += 1;
                        } else {
                            *copies.entry(format!("{last_writer}->{dev}")).or_insert(0) += 1;
                            valid.insert(dev);
                        }
                    }
                    if mode.writes() {
                        valid = BTreeSet::from([dev]);
                        last_writer = dev;
                    }
                }
            }
            (copies, hits)
        }
    }
}

pub mod laplacian {
    use std::sync::Arc;

    use hpvm::kernel::{BufferData, ScalarType, Value};
    use hpvm::runtime::{Executable, Machine, RunStats, Runtime, RuntimeConfig};
    use hpvm::IrDocument;

    /// The shipped Laplacian with `fuse` kept only on the named nodes.
    pub fn with_fuse(nodes: &[&str]) -> IrDocument {
        let mut src = super::program_source("laplacian.hpvm");
        for n in ["Dilate", "Erode", "Laplacian"] {
            if !nodes.contains(&n) {
                let line = src
                    .lines()
                    .find(|l| l.contains(&format!("leaf {n} =")))
                    .unwrap()
                    .to_string();
                src = src.replace(&line, &line.replace(" fuse;", ";"));
            }
        }
        hpvm::text::parse_document(&src).unwrap()
    }

    /// Runs one frame on `rt` and returns the result buffer's contents.
    pub fn frame(rt: &Runtime, exe: &Arc<Executable>, img: &[i32]) -> Vec<i32> {
        let n = img.len();
        let mut data = vec![BufferData::I32(img.to_vec())];
        data.extend((0..3).map(|_| BufferData::zeroed(ScalarType::I32, n)));
        let ids: Vec<_> = data
            .iter()
            .map(|d| {
                let id = rt.alloc(d);
                rt.track_mem(id, d.byte_len()).unwrap();
                id
            })
            .collect();
        let mut args: Vec<_> = ids.iter().map(|&i| Value::Buf(i)).collect();
        args.push(Value::I32(n as i32));
        let out = rt.run(exe, args).unwrap();
        let res = out[0].as_buffer().unwrap();
        rt.request_mem(res).unwrap();
        let v = rt.read(res).unwrap().as_i32().unwrap().to_vec();
        for id in ids {
            rt.untrack_mem(id).unwrap();
            rt.free(id).unwrap();
        }
        v
    }

    /// Runs every frame of `frames` through `doc` on the default machine.
    pub fn frames(doc: &IrDocument, frames: &[Vec<i32>]) -> (Vec<Vec<i32>>, RunStats) {
        let machine = Machine::default();
        let exe = Arc::new(Executable::new(doc, None, &machine, &[]).unwrap());
        let rt = Runtime::new(machine, RuntimeConfig::default());
        let out = frames.iter().map(|f| frame(&rt, &exe, f)).collect();
        (out, rt.stats())
    }

    pub fn random_frames(seed: u64, count: usize, len: usize) -> Vec<Vec<i32>> {
        let mut r = super::data::rng(seed);
        (0..count)
            .map(|_| super::data::i32s(&mut r, len, -1000, 1000))
            .collect()
    }
}

pub mod reduction {
    use hpvm::kernel::{BufferData, Value};
    use hpvm::runtime::{Executable, Machine, Runtime, RuntimeConfig};
    use hpvm::IrDocument;

    /// Runs `doc` (the shipped reduction or a variant of it) over `data` in
    /// blocks of `t` and returns the per-block sums and the total.
    pub fn run(doc: &IrDocument, data: &[i32], t: usize, seed: u64) -> (Vec<i32>, i32) {
        let nb = data.len() / t;
        let machine = Machine::default();
        let exe = std::sync::Arc::new(Executable::new(doc, None, &machine, &[]).unwrap());
        let rt = Runtime::new(
            machine,
            RuntimeConfig {
                seed,
                ..Default::default()
            },
        );
        let d = rt.alloc(&BufferData::I32(data.to_vec()));
        let p = rt.alloc(&BufferData::I32(vec![0; nb]));
        let s = rt.alloc(&BufferData::I32(vec![0]));
        rt.run(
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
        let partial = rt.read(p).unwrap().as_i32().unwrap().to_vec();
        let total = rt.read(s).unwrap().as_i32().unwrap()[0];
        (partial, total)
    }

    /// The shipped reduction with its barriers removed.
    pub fn without_barriers() -> IrDocument {
        let src = super::program_source("reduction.hpvm").replace("barrier();", "");
        hpvm::text::parse_document(&src).unwrap()
    }
}

pub mod trace {
    use hpvm::kernel::{
        compile, run_group, BufferData, GroupSpec, KernelProgram, ScheduleOptions, SimpleMemory, Value,
    };

    /// Whether every instance of a `count`-instance group makes the same
    /// sequence of accesses to each buffer parameter, observed by running
    /// the kernel with tracing on. i32 buffers hold `0..len`, other buffers
    /// `len` zeros; scalars get 0.
    pub fn dynamic_uniformity(k: &KernelProgram, count: u32, len: usize, seed: u64) -> Vec<(String, bool)> {
        let c = compile(k).unwrap();
        let mem = SimpleMemory::new();
        let args: Vec<Value> = k
            .params()
            .iter()
            .map(|p| match p.kind {
                hpvm::kernel::ValueKind::Buffer(hpvm::kernel::ScalarType::I32) => {
                    Value::Buf(mem.insert(&BufferData::I32((0..len as i32).collect())))
                }
                hpvm::kernel::ValueKind::Buffer(t) => Value::Buf(mem.insert(&BufferData::zeroed(t, len))),
                hpvm::kernel::ValueKind::Scalar(t) => Value::zero(t),
            })
            .collect();
        let extents = [count];
        let spec = GroupSpec {
            ancestors: &[],
            extents: &extents,
            args: &|_| args.clone(),
        };
        let opts = ScheduleOptions {
            seed,
            trace: true,
            ..Default::default()
        };
        let out = run_group(&c, &spec, &mem, &opts).unwrap();
        k.params()
            .iter()
            .zip(&args)
            .filter_map(|(p, a)| {
                let id = a.as_buffer()?;
                let per: Vec<Vec<_>> = out
                    .traces
                    .iter()
                    .map(|t| t.iter().filter(|x| x.buffer == id).map(|x| (x.index, x.kind)).collect())
                    .collect();
                Some((p.name.clone(), per.windows(2).all(|w| w[0] == w[1])))
            })
            .collect()
    }
}

pub mod pipeline {
    use std::sync::Arc;
    use std::time::{Duration, Instant};

    use hpvm::kernel::Value;
    use hpvm::runtime::{Executable, Machine, Runtime, RuntimeConfig};

    pub struct Streamed {
        pub outputs: Vec<i64>,
        /// Time of each pop, measured from launch.
        pub popped_at: Vec<Duration>,
    }

    /// Pushes every token from a separate thread while the caller pops.
    pub fn run(over: &[(String, String)], tokens: &[i32], gain: i32, config: RuntimeConfig) -> Streamed {
        let doc = super::program("pipeline.hpvm");
        let machine = Machine::default();
        let exe = Arc::new(Executable::new(&doc, None, &machine, over).unwrap());
        let rt = Runtime::new(machine, config);
        let start = Instant::now();
        let h = rt.launch(&exe, vec![Value::I32(gain)], true).unwrap();
        let mut out = Streamed {
            outputs: Vec::new(),
            popped_at: Vec::new(),
        };
        std::thread::scope(|s| {
            s.spawn(|| {
                for &t in tokens {
                    rt.push(h, vec![Value::I32(t)]).unwrap();
                }
                rt.close(h).unwrap();
            });
            while let Some(v) = rt.pop(h).unwrap() {
                out.popped_at.push(start.elapsed());
                match v[..] {
                    [Value::I64(x)] => out.outputs.push(x),
                    _ => panic!("unexpected record {v:?}"),
                }
            }
        });
        rt.wait(h).unwrap();
        out
    }

    /// Mean gap between consecutive pops after the first `skip`.
    pub fn steady_interval(popped_at: &[Duration], skip: usize) -> Duration {
        let tail = &popped_at[skip..];
        (tail[tail.len() - 1] - tail[0]) / (tail.len() as u32 - 1)
    }
}

pub mod kernels {
    use hpvm::kernel::{compile, run_group, BufferData, GroupSpec, ScheduleOptions, SimpleMemory, Value};
    use hpvm::text::parse_kernel;

    pub const COUNTER: &str = "kernel count(inout c: buf<i32>) { let old = atomic_add(c, 0, 1); }";
    pub const RACY: &str = "kernel count(inout c: buf<i32>) { let v = c[0]; c[0] = v + 1; }";

    pub fn counter_after(src: &str, instances: u32, seed: u64) -> i32 {
        let k = compile(&parse_kernel(src).unwrap()).unwrap();
        let mem = SimpleMemory::new();
        let c = mem.insert(&BufferData::I32(vec![0]));
        let extents = [instances];
        let spec = GroupSpec {
            ancestors: &[],
            extents: &extents,
            args: &|_| vec![Value::Buf(c)],
        };
        let opts = ScheduleOptions {
            seed,
            max_quantum: 1,
            ..Default::default()
        };
        run_group(&k, &spec, &mem, &opts).unwrap();
        mem.read(c).unwrap().as_i32().unwrap()[0]
    }

    /// Kernels whose static classification can be checked exactly against the
    /// accesses they make.
    pub const CRAFTED: [&str; 3] = [
        "kernel stencil(in lut: buf<i32>, in img: buf<i32>, out o: buf<i32>) -> (buf<i32>) {
            let i = instance_id(x);
            let s = 0;
            for j in 0..4 { s = s + lut[j]; }
            o[i] = s + img[i] + img[i + 1];
            return (o);
        }",
        "kernel gather(in idx: buf<i32>, in a: buf<i32>, out o: buf<i32>, in w: buf<i32>) -> (buf<i32>) {
            let i = instance_id(x);
            let n = num_instances(x);
            let acc = 0;
            for j in 0..n { acc = acc + w[j]; }
            o[i] = a[idx[i]] + acc;
            return (o);
        }",
        "kernel guarded(inout flag: buf<i32>, in table: buf<i32>, inout hist: buf<i32>) {
            let i = instance_id(x);
            if i == 0 { flag[0] = table[3]; }
            let b = num_instances(x) - 5;
            let old = atomic_add(hist, b, 1);
        }",
    ];
}
