//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness. Nothing here calls into the library code it checks beyond the
//! public entry points.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use vidgan::evalsvc::{load_records, EvalServer, PreferenceRecord, ServerConfig, Side};
use vidgan::rng::Rng;
use vidgan::tensor::conv::{conv, conv_transpose, reference_conv, reference_conv_transpose};
use vidgan::tensor::{BatchNormMode, ConvSpec, RunningStats, Tape, Tensor, Var};

// ---------------------------------------------------------------------------
// Finite differences

pub const FD_EPS: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-3;

type Loss = dyn Fn(&[Var<f64>]) -> Var<f64>;

/// Largest relative gap between tape gradients and central differences of
/// the scalar `f` over every element of every input.
pub fn fd_max_rel(inputs: &[Tensor<f64>], f: &Loss) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    tape.backward(&f(&vars)).unwrap();
    let eval = |vals: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        f(&vars).value().item()
    };
    let mut probe = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let g = v.grad().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + FD_EPS;
            let up = eval(&probe);
            probe[i].data_mut()[j] = x0 - FD_EPS;
            let down = eval(&probe);
            probe[i].data_mut()[j] = x0;
            let num = (up - down) / (2.0 * FD_EPS);
            let a = g.data()[j];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(FD_FLOOR));
        }
    }
    worst
}

fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 0.05 { v + 0.1 * v.signum() } else { v })
}

fn weighted(out: &Var<f64>, seed: u64) -> Var<f64> {
    let w = Tensor::randn(&out.shape(), 1.0, &mut Rng::new(seed));
    out.mul(&out.tape().constant(w)).unwrap().sum()
}

fn dims(rng: &mut Rng, n: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..n).map(|_| lo + rng.below(hi - lo + 1)).collect()
}

fn dims_var(rng: &mut Rng, base: usize, extra: usize, lo: usize, hi: usize) -> Vec<usize> {
    let n = base + rng.below(extra);
    dims(rng, n, lo, hi)
}

pub struct OpReport {
    pub op: &'static str,
    pub shapes: usize,
    pub worst: f64,
}

/// Every differentiable op on five random shapes each.
pub fn gradient_suite(seed: u64) -> Vec<OpReport> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let mut run = |op: &'static str, rng: &mut Rng, make: &mut dyn FnMut(&mut Rng) -> (Vec<Tensor<f64>>, Box<Loss>)| {
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let (inputs, f) = make(rng);
            worst = worst.max(fd_max_rel(&inputs, &*f));
        }
        out.push(OpReport { op, shapes: 5, worst });
    };

    for (op, transpose, three_d) in [
        ("conv3d", false, true),
        ("conv3d_transpose", true, true),
        ("conv2d", false, false),
        ("conv2d_transpose", true, false),
    ] {
        run(op, &mut rng, &mut |rng| {
            let k = 1 + rng.below(3);
            let s = 1 + rng.below(2);
            let p = rng.below(k);
            let (ci, co) = (1 + rng.below(2), 1 + rng.below(2));
            let spec = if three_d {
                ConvSpec::cubic(ci, co, k, s, p)
            } else {
                ConvSpec::new2d(ci, co, [k, k], [s, s], [p, p])
            };
            let n = 1 + rng.below(2);
            let lo = if transpose { 1 + (2 * p + 1).saturating_sub(k).div_ceil(s) } else { k.max(2) };
            let vol = dims(rng, 3, lo, lo + 2);
            let mut shape = vec![n, ci];
            if three_d {
                shape.extend(&vol);
            } else {
                shape.extend(&vol[1..]);
            }
            let w_shape = if three_d { spec.weight_shape(transpose) } else { spec.weight_shape_2d(transpose) };
            let x = Tensor::randn(&shape, 1.0, rng);
            let w = Tensor::randn(&w_shape, 0.5, rng);
            let b = Tensor::randn(&[co], 0.5, rng);
            let seed = rng.next_u64();
            let f: Box<Loss> = Box::new(move |v| {
                let y = match (transpose, three_d) {
                    (false, true) => v[0].conv3d(&v[1], Some(&v[2]), &spec),
                    (true, true) => v[0].conv3d_transpose(&v[1], Some(&v[2]), &spec),
                    (false, false) => v[0].conv2d(&v[1], Some(&v[2]), &spec),
                    (true, false) => v[0].conv2d_transpose(&v[1], Some(&v[2]), &spec),
                }
                .unwrap();
                weighted(&y, seed)
            });
            (vec![x, w, b], f)
        });
    }

    let pointwise: [(&'static str, fn(&Var<f64>) -> Var<f64>); 7] = [
        ("relu", |v| v.relu()),
        ("leaky_relu", |v| v.leaky_relu(0.2)),
        ("sigmoid", |v| v.sigmoid()),
        ("tanh", |v| v.tanh()),
        ("abs", |v| v.abs()),
        ("square", |v| v.square()),
        ("affine", |v| v.affine(-1.5, 0.3)),
    ];
    for (op, g) in pointwise {
        run(op, &mut rng, &mut |rng| {
            let shape = dims_var(rng, 1, 4, 1, 4);
            let x = away_from_zero(Tensor::randn(&shape, 1.0, rng));
            let seed = rng.next_u64();
            (vec![x], Box::new(move |v| weighted(&g(&v[0]), seed)))
        });
    }

    let binary: [(&'static str, fn(&Var<f64>, &Var<f64>) -> Var<f64>); 3] = [
        ("add", |a, b| a.add(b).unwrap()),
        ("sub", |a, b| a.sub(b).unwrap()),
        ("mul", |a, b| a.mul(b).unwrap()),
    ];
    for (op, g) in binary {
        run(op, &mut rng, &mut |rng| {
            let shape = dims_var(rng, 1, 4, 1, 4);
            let (a, b) = (Tensor::randn(&shape, 1.0, rng), Tensor::randn(&shape, 1.0, rng));
            let seed = rng.next_u64();
            (vec![a, b], Box::new(move |v| weighted(&g(&v[0], &v[1]), seed)))
        });
    }

    run("batch_norm", &mut rng, &mut |rng| {
        let c = 1 + rng.below(3);
        let mut shape = vec![2 + rng.below(2), c];
        shape.extend(dims_var(rng, 1, 3, 1, 3));
        let x = Tensor::randn(&shape, 1.0, rng);
        let gamma = Tensor::randn(&[c], 1.0, rng);
        let beta = Tensor::randn(&[c], 1.0, rng);
        let seed = rng.next_u64();
        let f: Box<Loss> = Box::new(move |v| {
            let mut rs = RunningStats::new(c);
            weighted(&v[0].batch_norm(&v[1], &v[2], BatchNormMode::Train, &mut rs).unwrap(), seed)
        });
        (vec![x, gamma, beta], f)
    });

    run("bce_with_logits", &mut rng, &mut |rng| {
        let shape = dims_var(rng, 1, 3, 1, 5);
        let x = Tensor::randn(&shape, 2.0, rng);
        let t = Tensor::from_fn(&shape, |_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 });
        (vec![x], Box::new(move |v| v[0].bce_with_logits(&t).unwrap()))
    });

    run("softmax_cross_entropy", &mut rng, &mut |rng| {
        let (n, k) = (1 + rng.below(4), 2 + rng.below(4));
        let x = Tensor::randn(&[n, k], 2.0, rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        (vec![x], Box::new(move |v| v[0].softmax_cross_entropy(&labels).unwrap()))
    });

    run("expand", &mut rng, &mut |rng| {
        let full = dims_var(rng, 2, 3, 1, 4);
        let small: Vec<usize> = full.iter().map(|&d| if rng.bernoulli(0.5) { 1 } else { d }).collect();
        let x = Tensor::randn(&small, 1.0, rng);
        let seed = rng.next_u64();
        (vec![x], Box::new(move |v| weighted(&v[0].expand(&full).unwrap(), seed)))
    });

    run("reshape", &mut rng, &mut |rng| {
        let shape = dims(rng, 3, 1, 4);
        let flat = [shape.iter().product::<usize>()];
        let x = Tensor::randn(&shape, 1.0, rng);
        let seed = rng.next_u64();
        (vec![x], Box::new(move |v| weighted(&v[0].reshape(&flat).unwrap(), seed)))
    });

    run("select_time", &mut rng, &mut |rng| {
        let shape = dims(rng, 5, 1, 3);
        let t = rng.below(shape[2]);
        let x = Tensor::randn(&shape, 1.0, rng);
        let seed = rng.next_u64();
        (vec![x], Box::new(move |v| weighted(&v[0].select_time(t).unwrap(), seed)))
    });

    for (op, mean) in [("sum", false), ("mean", true)] {
        run(op, &mut rng, &mut |rng| {
            let shape = dims_var(rng, 1, 4, 1, 4);
            let x = Tensor::randn(&shape, 1.0, rng);
            (
                vec![x],
                Box::new(move |v| {
                    let y = v[0].square();
                    if mean {
                        y.mean()
                    } else {
                        y.sum()
                    }
                }),
            )
        });
    }

    run("dropout", &mut rng, &mut |rng| {
        let shape = dims_var(rng, 1, 4, 1, 4);
        let x = Tensor::randn(&shape, 1.0, rng);
        let mask: Vec<f64> = (0..x.len()).map(|_| if rng.bernoulli(0.5) { 0.0 } else { 2.0 }).collect();
        let seed = rng.next_u64();
        (vec![x], Box::new(move |v| weighted(&v[0].dropout_with_mask(mask.clone()), seed)))
    });

    out
}

// ---------------------------------------------------------------------------
// Convolution oracle

/// Direct definition of the strided, zero-padded convolution over
/// `(N, C, T, H, W)`; weight `(Cout, Cin, kT, kH, kW)`.
pub fn oracle_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], k: [usize; 3], s: [usize; 3], p: [usize; 3]) -> Tensor<f64> {
    let xs = x.shape();
    let (n, ci) = (xs[0], xs[1]);
    let co = w.shape()[0];
    let o: Vec<usize> = (0..3).map(|a| (xs[2 + a] + 2 * p[a] - k[a]) / s[a] + 1).collect();
    let at = |nn: usize, c: usize, t: isize, y: isize, z: isize| -> f64 {
        if t < 0 || y < 0 || z < 0 || t >= xs[2] as isize || y >= xs[3] as isize || z >= xs[4] as isize {
            return 0.0;
        }
        x.data()[(((nn * ci + c) * xs[2] + t as usize) * xs[3] + y as usize) * xs[4] + z as usize]
    };
    Tensor::from_fn(&[n, co, o[0], o[1], o[2]], |i| {
        let z = i % o[2];
        let y = (i / o[2]) % o[1];
        let t = (i / (o[2] * o[1])) % o[0];
        let c_out = (i / (o[2] * o[1] * o[0])) % co;
        let nn = i / (o[2] * o[1] * o[0] * co);
        let mut acc = b[c_out];
        for c in 0..ci {
            for a in 0..k[0] {
                for bb in 0..k[1] {
                    for cc in 0..k[2] {
                        let wv = w.data()[(((c_out * ci + c) * k[0] + a) * k[1] + bb) * k[2] + cc];
                        acc += wv
                            * at(
                                nn,
                                c,
                                (t * s[0] + a) as isize - p[0] as isize,
                                (y * s[1] + bb) as isize - p[1] as isize,
                                (z * s[2] + cc) as isize - p[2] as isize,
                            );
                    }
                }
            }
        }
        acc
    })
}

/// Transposed convolution as a gather: output position `o` takes input `i`
/// through tap `k` exactly when `i * s - p + k == o`. Weight
/// `(Cin, Cout, kT, kH, kW)`.
pub fn oracle_conv_transpose(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
) -> Tensor<f64> {
    let xs = x.shape();
    let (n, ci) = (xs[0], xs[1]);
    let co = w.shape()[1];
    let o: Vec<usize> = (0..3).map(|a| (xs[2 + a] - 1) * s[a] + k[a] - 2 * p[a]).collect();
    let source = |a: usize, out: usize, tap: usize| -> Option<usize> {
        let v = out as isize + p[a] as isize - tap as isize;
        (v >= 0 && v % s[a] as isize == 0 && ((v / s[a] as isize) as usize) < xs[2 + a]).then(|| (v / s[a] as isize) as usize)
    };
    Tensor::from_fn(&[n, co, o[0], o[1], o[2]], |i| {
        let z = i % o[2];
        let y = (i / o[2]) % o[1];
        let t = (i / (o[2] * o[1])) % o[0];
        let c_out = (i / (o[2] * o[1] * o[0])) % co;
        let nn = i / (o[2] * o[1] * o[0] * co);
        let mut acc = b[c_out];
        for c in 0..ci {
            for a in 0..k[0] {
                let Some(it) = source(0, t, a) else { continue };
                for bb in 0..k[1] {
                    let Some(iy) = source(1, y, bb) else { continue };
                    for cc in 0..k[2] {
                        let Some(iz) = source(2, z, cc) else { continue };
                        let wv = w.data()[(((c * co + c_out) * k[0] + a) * k[1] + bb) * k[2] + cc];
                        acc += wv * x.data()[(((nn * ci + c) * xs[2] + it) * xs[3] + iy) * xs[4] + iz];
                    }
                }
            }
        }
        acc
    })
}

/// `max |a - b| / max |b|`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ConvOracleReport {
    pub specs: usize,
    /// f32 fast path against the oracle.
    pub fast: f64,
    /// Library reference (f64) against the oracle.
    pub reference: f64,
    /// `|<conv x, y> - <x, conv_t y>| / max(|<conv x, y>|, 1)`.
    pub adjoint: f64,
}

pub fn random_spec(rng: &mut Rng) -> ([usize; 3], [usize; 3], [usize; 3], usize, usize) {
    let mut k = [0; 3];
    let mut s = [0; 3];
    let mut p = [0; 3];
    for a in 0..3 {
        k[a] = 1 + rng.below(4);
        s[a] = 1 + rng.below(3);
        p[a] = rng.below(k[a]);
    }
    (k, s, p, 1 + rng.below(4), 1 + rng.below(4))
}

pub fn conv_oracle(specs: usize, seed: u64) -> ConvOracleReport {
    let mut rng = Rng::new(seed);
    let mut r = ConvOracleReport {
        specs,
        ..Default::default()
    };
    for _ in 0..specs {
        let (k, s, p, ci, co) = random_spec(&mut rng);
        let n = 1 + rng.below(2);
        // Small side sizes first; the large side then inverts exactly.
        let m: Vec<usize> = (0..3)
            .map(|a| {
                let need = (2 * p[a] + 1).saturating_sub(k[a]);
                1 + need.div_ceil(s[a]) + rng.below(3)
            })
            .collect();
        let big: Vec<usize> = (0..3).map(|a| (m[a] - 1) * s[a] + k[a] - 2 * p[a]).collect();
        let spec = ConvSpec::new3d(ci, co, k, s, p);
        let spec_t = ConvSpec::new3d(co, ci, k, s, p);

        let x = Tensor::<f64>::randn(&[n, ci, big[0], big[1], big[2]], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&spec.weight_shape(false), 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[co], 1.0, &mut rng);
        let want = oracle_conv(&x, &w, b.data(), k, s, p);
        let fast = conv(&x.cast::<f32>(), &spec, &w.cast::<f32>(), Some(&b.cast::<f32>())).unwrap().cast::<f64>();
        let slow = reference_conv(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(fast.shape(), want.shape());
        r.fast = r.fast.max(rel_err(fast.data(), want.data()));
        r.reference = r.reference.max(rel_err(slow.data(), want.data()));

        let y = Tensor::<f64>::randn(&[n, co, m[0], m[1], m[2]], 1.0, &mut rng);
        let bt = Tensor::<f64>::randn(&[ci], 1.0, &mut rng);
        let want_t = oracle_conv_transpose(&y, &w, bt.data(), k, s, p);
        let fast_t = conv_transpose(&y.cast::<f32>(), &spec_t, &w.cast::<f32>(), Some(&bt.cast::<f32>()))
            .unwrap()
            .cast::<f64>();
        let slow_t = reference_conv_transpose(&y, &spec_t, &w, Some(&bt)).unwrap();
        assert_eq!(fast_t.shape(), want_t.shape());
        r.fast = r.fast.max(rel_err(fast_t.data(), want_t.data()));
        r.reference = r.reference.max(rel_err(slow_t.data(), want_t.data()));

        let cx = conv(&x, &spec, &w, None).unwrap();
        let cty = conv_transpose(&y, &spec_t, &w, None).unwrap();
        let lhs = cx.dot(&y);
        let rhs = x.dot(&cty);
        r.adjoint = r.adjoint.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    r
}

// ---------------------------------------------------------------------------
// Preference table fixture

pub const CATEGORIES: [&str; 4] = ["golf", "beach", "train", "baby"];

/// `(first, second, per-category percentages, mean)`.
pub const PREFERENCE_TABLE: [(&str, &str, [u64; 4], u64); 6] = [
    ("two-stream", "autoencoder", [88, 83, 87, 71], 82),
    ("one-stream", "autoencoder", [85, 88, 85, 73], 82),
    ("two-stream", "one-stream", [55, 58, 47, 52], 53),
    ("two-stream", "real", [21, 23, 23, 6], 18),
    ("one-stream", "real", [17, 21, 19, 8], 16),
    ("autoencoder", "real", [4, 2, 4, 2], 3),
];

/// Smallest per-category multiplicities `m` (trials `100 m`) whose pooled
/// win rate equals `mean` exactly.
pub fn category_weights(cells: [u64; 4], mean: u64) -> [u64; 4] {
    let mut best: Option<[u64; 4]> = None;
    for a in 1..=9u64 {
        for b in 1..=9 {
            for c in 1..=9 {
                for d in 1..=9 {
                    let m = [a, b, c, d];
                    let wins: u64 = m.iter().zip(cells).map(|(m, p)| m * p).sum();
                    let total: u64 = m.iter().sum();
                    if wins == mean * total && best.is_none_or(|x| x.iter().sum::<u64>() > total) {
                        best = Some(m);
                    }
                }
            }
        }
    }
    best.expect("no integer weighting reproduces the mean")
}

/// Judgments whose per-category cells and pooled means hit
/// [`PREFERENCE_TABLE`] exactly. Chosen sides alternate, so the left-side
/// rate is exactly 1/2.
pub fn preference_fixture() -> Vec<PreferenceRecord> {
    let mut out = Vec::new();
    for (first, second, cells, mean) in PREFERENCE_TABLE {
        let m = category_weights(cells, mean);
        for (c, cat) in CATEGORIES.iter().enumerate() {
            let n = 100 * m[c];
            let wins = cells[c] * m[c];
            for i in 0..n {
                let first_wins = i < wins;
                let choice = if out.len() % 2 == 0 { Side::Left } else { Side::Right };
                let left_is_a = (choice == Side::Left) == first_wins;
                out.push(PreferenceRecord {
                    pair_id: format!("fx-{}", out.len()),
                    model_a: first.into(),
                    model_b: second.into(),
                    left_is_a,
                    choice,
                    rater_id: format!("rater-{}", out.len() % 7),
                    timestamp_ms: 0,
                    category: cat.to_string(),
                    clip_a: String::new(),
                    clip_b: String::new(),
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Concurrent raters across a forced restart

pub struct RestartOutcome {
    pub raters: usize,
    pub acknowledged: usize,
    /// Acknowledged judgments missing from the store after the restart.
    pub lost: usize,
    pub stored: usize,
    /// Record count reported by `/api/results` after the restart.
    pub served: usize,
    pub restarts: usize,
}

pub fn write_media(root: &Path, models: &[&str], categories: &[&str], per: usize) {
    for m in models {
        for c in categories {
            let d = root.join(m).join(c);
            std::fs::create_dir_all(&d).unwrap();
            for i in 0..per {
                std::fs::write(d.join(format!("{i}.gif")), format!("GIF89a {m} {c} {i}")).unwrap();
            }
        }
    }
}

/// `raters` threads each make `trials` judgments while the server is killed
/// and restarted on the same store once a third of them are acknowledged.
pub fn rater_restart_trial(root: &Path, raters: usize, trials: usize) -> RestartOutcome {
    let media = root.join("media");
    write_media(&media, &["two-stream", "one-stream", "autoencoder", "real"], &["golf", "beach"], 3);
    let cfg = ServerConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        store_dir: root.join("store"),
        media_root: media,
        static_dir: None,
        seed: Some(17),
    };
    let server = EvalServer::start(&cfg).unwrap();
    let base = Arc::new(RwLock::new(format!("http://{}", server.addr())));
    let acked = Arc::new(Mutex::new(Vec::<(String, String)>::new()));
    let count = Arc::new(AtomicUsize::new(0));

    let handles: Vec<_> = (0..raters)
        .map(|r| {
            let (base, acked, count) = (base.clone(), acked.clone(), count.clone());
            std::thread::spawn(move || {
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .http_status_as_error(false)
                    .timeout_global(Some(Duration::from_secs(5)))
                    .build()
                    .into();
                let rater = format!("rater-{r:02}");
                let mut rng = Rng::new(r as u64);
                let mut done = 0;
                let mut attempts = 0;
                while done < trials && attempts < trials * 50 {
                    attempts += 1;
                    let url = base.read().unwrap().clone();
                    let pair = agent.get(&format!("{url}/api/pair?rater_id={rater}")).call();
                    let Ok(resp) = pair else {
                        std::thread::sleep(Duration::from_millis(20));
                        continue;
                    };
                    if resp.status() != 200 {
                        continue;
                    }
                    let Ok(v) = resp.into_body().read_json::<serde_json::Value>() else { continue };
                    let id = v["pair_id"].as_str().unwrap().to_string();
                    let side = if rng.bernoulli(0.5) { "left" } else { "right" };
                    let body = format!(r#"{{"pair_id":"{id}","choice":"{side}","rater_id":"{rater}"}}"#);
                    let posted = agent
                        .post(&format!("{url}/api/choice"))
                        .header("content-type", "application/json")
                        .send(&body);
                    if let Ok(resp) = posted {
                        if resp.status() == 200 {
                            acked.lock().unwrap().push((id, rater.clone()));
                            count.fetch_add(1, Ordering::SeqCst);
                            done += 1;
                        }
                    }
                }
            })
        })
        .collect();

    let target = raters * trials / 3;
    while count.load(Ordering::SeqCst) < target && !handles.iter().all(|h| h.is_finished()) {
        std::thread::sleep(Duration::from_millis(5));
    }
    server.kill();
    std::thread::sleep(Duration::from_millis(50));
    let server = EvalServer::start(&cfg).unwrap();
    *base.write().unwrap() = format!("http://{}", server.addr());
    for h in handles {
        h.join().unwrap();
    }

    let acked = acked.lock().unwrap().clone();
    let stored: BTreeSet<(String, String)> = load_records(&cfg.store_dir)
        .unwrap()
        .into_iter()
        .map(|r| (r.pair_id, r.rater_id))
        .collect();
    let lost = acked.iter().filter(|k| !stored.contains(*k)).count();
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let url = base.read().unwrap().clone();
    let table: serde_json::Value = agent.get(&format!("{url}/api/results")).call().unwrap().into_body().read_json().unwrap();
    server.kill();
    RestartOutcome {
        raters,
        acknowledged: acked.len(),
        lost,
        stored: stored.len(),
        served: table["records"].as_u64().unwrap() as usize,
        restarts: 1,
    }
}
