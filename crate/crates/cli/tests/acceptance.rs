//! Acceptance criteria, one status line each. Run with
//! `cargo test -p modnet --test acceptance`; an optional argument keeps only
//! criteria whose name contains it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use modnet_core::engine::gradcheck::{gradcheck, project_to_scalar, GradcheckOptions};
use modnet_core::engine::{cross_entropy, softmax, Tape, Tensor, Var};
use modnet_core::introspect::{fft128, ifft128};
use modnet_core::nn::arch::find_layer;
use modnet_core::nn::{
    build_baseline_cnn, build_cldnn, build_conv_matched_filter, build_deep_cnn, build_inception, build_resnet,
    ActShape, ArchOptions, Bypass, LayerKind, ModelSpec, Source,
};
use modnet_core::synth::dataset::cell_rng;
use modnet_core::synth::{
    apply_cfo, apply_fading, apply_sro, modulate, synth_cell, synth_dataset, DatasetBundle, DatasetConfig,
    Modulation, Pdp,
};
use modnet_core::train::{evaluate, run_sweep, split_dataset, train, SweepKind, SweepOptions, TrainConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    /// Reported but not counted as a failure.
    Flag,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    ("gradient-correctness", gradient_correctness),
    ("loss-identities", loss_identities),
    ("signal-chain-oracles", signal_chain_oracles),
    ("architecture-builders", architecture_builders),
    ("determinism", determinism),
    ("desk-learnability", desk_learnability),
    ("snr-separation", snr_separation),
    ("taps-direction", taps_direction),
    ("depth-plateau", depth_plateau),
];

fn main() -> ExitCode {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in CRITERIA {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        let tag = match out.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Flag => "FLAG",
        };
        println!("{tag} {name}: {} [{:.1}s]", out.detail, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

type Recorder = fn(&mut Tape<f64>, &[Var]) -> modnet_core::engine::Result<Var>;

/// Input shapes and a recorder producing the layer output.
fn layer_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Recorder)> {
    vec![
        ("conv1d", vec![vec![2, 3, 16], vec![4, 3, 5], vec![4]], |t, v| t.conv1d(v[0], v[1], v[2])),
        ("dense", vec![vec![3, 7], vec![5, 7], vec![5]], |t, v| t.dense(v[0], v[1], v[2])),
        ("relu_dropout", vec![vec![2, 3, 10]], |t, v| {
            // the inference path of dropout is the identity
            let r = t.relu(v[0])?;
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            t.dropout(r, 0.0, &mut unused)
        }),
        ("maxpool", vec![vec![2, 3, 12]], |t, v| t.maxpool(v[0], 3, 2)),
        ("lstm", vec![vec![2, 3, 6], vec![16, 3], vec![16, 4], vec![16]], |t, v| {
            t.lstm(v[0], v[1], v[2], v[3], false)
        }),
        ("residual_add", vec![vec![2, 4, 8], vec![2, 4, 8]], |t, v| t.add(v[0], v[1])),
        ("concat", vec![vec![2, 3, 8], vec![2, 5, 8]], |t, v| t.concat(&[v[0], v[1]])),
    ]
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let opts = GradcheckOptions::default();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut instances = 0;
    for (name, shapes, record) in layer_cases() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * seed + shapes.len() as u64);
            let inputs: Vec<_> = shapes.iter().map(|s| randn(s, &mut rng)).collect();
            let r = gradcheck(
                |tape, vars| {
                    let out = record(tape, vars)?;
                    project_to_scalar(tape, out, seed)
                },
                &inputs,
                &GradcheckOptions { seed, ..opts.clone() },
            );
            instances += 1;
            worst = worst.max(r.max_rel_error);
            if !r.passed {
                failures.push(format!("{name}#{seed}"));
            }
        }
    }
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + seed);
        let inputs = vec![randn(&[4, 9], &mut rng), randn(&[11, 9], &mut rng), randn(&[11], &mut rng)];
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..11)).collect();
        let r = gradcheck(
            |tape, v| {
                let logits = tape.dense(v[0], v[1], v[2])?;
                tape.softmax_cross_entropy(logits, &labels)
            },
            &inputs,
            &GradcheckOptions { seed, ..opts.clone() },
        );
        instances += 1;
        worst = worst.max(r.max_rel_error);
        if !r.passed {
            failures.push(format!("softmax_head#{seed}"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome::check(
        failures.is_empty() && worst < 1e-4 && secs < 60.0,
        format!("8 layer types x 5 seeds ({instances} instances), max relative error {worst:.2e} (< 1e-4), {secs:.1}s (< 60s){}",
            if failures.is_empty() { String::new() } else { format!(", failed: {}", failures.join(" ")) }),
    )
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut norm_err = 0.0f64;
    let mut shift_err = 0.0f64;
    let mut grad_err = 0.0f64;
    for _ in 0..50 {
        let z: Tensor<f64> = Tensor::new([11], (0..11).map(|_| rng.random_range(-20.0..20.0)).collect()).unwrap();
        let p = softmax(&z).unwrap();
        norm_err = norm_err.max((p.sum() - 1.0).abs());
        let c: f64 = rng.random_range(-100.0..100.0);
        let shifted = softmax(&Tensor::new([11], z.data().iter().map(|v| v + c).collect()).unwrap()).unwrap();
        for (a, b) in p.data().iter().zip(shifted.data()) {
            shift_err = shift_err.max((a - b).abs());
        }
        let label = rng.random_range(0..11);
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(z.reshape([1, 11]).unwrap()).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[label]).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(logits).unwrap();
        for (k, (gk, pk)) in g.data().iter().zip(p.data()).enumerate() {
            let expect = pk - if k == label { 1.0 } else { 0.0 };
            grad_err = grad_err.max((gk - expect).abs());
        }
    }
    let uniform = softmax(&Tensor::<f64>::zeros([11])).unwrap();
    let ce_err = (cross_entropy(&uniform, 3).unwrap() - 11f64.ln()).abs();
    Outcome::check(
        norm_err <= 1e-6 && shift_err <= 1e-6 && ce_err <= 1e-9 && grad_err <= 1e-6,
        format!(
            "normalization {norm_err:.1e}, shift invariance {shift_err:.1e}, uniform CE vs ln 11 {ce_err:.1e}, gradient vs p - onehot {grad_err:.1e}"
        ),
    )
}

fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, v)| v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * t) as f64 / n))
                .sum()
        })
        .collect()
}

fn peak_bin(x: &[Complex64]) -> usize {
    let s = fft128(x);
    (0..s.len()).max_by(|&a, &b| s[a].norm().total_cmp(&s[b].norm())).unwrap()
}

fn power(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

fn signal_chain_oracles() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let tone = |bin: f64| -> Vec<Complex64> {
        (0..128)
            .map(|n| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * bin * n as f64 / 128.0))
            .collect()
    };

    // FFT: impulse, tone, Parseval, inverse
    let mut impulse = vec![Complex64::new(0.0, 0.0); 128];
    impulse[0] = Complex64::new(1.0, 0.0);
    let mut fft_err = fft128(&impulse).iter().map(|v| (v - 1.0).norm()).fold(0.0, f64::max);
    let spectrum = fft128(&tone(9.0));
    for (k, v) in spectrum.iter().enumerate() {
        let expect = if k == 9 { 128.0 } else { 0.0 };
        fft_err = fft_err.max((v - expect).norm());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let x: Vec<Complex64> = (0..128)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let f = fft128(&x);
        let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let freq: f64 = f.iter().map(|v| v.norm_sqr()).sum::<f64>() / 128.0;
        fft_err = fft_err.max((time - freq).abs());
        for (a, b) in f.iter().zip(naive_dft(&x)) {
            fft_err = fft_err.max((a - b).norm());
        }
        for (a, b) in ifft128(&f).iter().zip(&x) {
            fft_err = fft_err.max((a - b).norm());
        }
    }
    ok &= fft_err < 1e-9;
    notes.push(format!("fft {fft_err:.1e}"));

    // AWGN per cell
    let mut c = DatasetConfig::desk(21);
    c.frames_per_cell = 40;
    let mut snr_dev = 0.0f64;
    for &class in &c.classes {
        for &snr in &c.snr_grid {
            let (mut sig, mut noise) = (0.0, 0.0);
            for (pre, post) in synth_cell(&c, class, snr).unwrap() {
                let (p, q) = (pre.to_complex(), post.to_complex());
                sig += p.iter().map(|v| v.norm_sqr()).sum::<f64>();
                noise += p.iter().zip(&q).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>();
            }
            snr_dev = snr_dev.max((10.0 * (sig / noise).log10() - snr as f64).abs());
        }
    }
    ok &= snr_dev <= 0.5;
    notes.push(format!("cell SNR max deviation {snr_dev:.3} dB over {} cells", c.classes.len() * c.snr_grid.len()));

    // CFO moves the spectral peak by exactly the offset in bins
    let mut cfo_ok = true;
    for (start, shift) in [(5, 1), (20, -3), (64, 7), (100, 0)] {
        let moved = apply_cfo(&tone(start as f64), shift as f64 / 128.0);
        cfo_ok &= peak_bin(&moved) as i64 == (start + shift) as i64;
    }
    ok &= cfo_ok;
    notes.push(format!("cfo bin shift {}", if cfo_ok { "exact" } else { "WRONG" }));

    // SRO round trip on a band-limited burst
    let mut r = cell_rng(4, Modulation::Qpsk, 0);
    let burst = modulate(Modulation::Qpsk, &mut r, 1024, 8).unwrap();
    let there = apply_sro(&burst, 50.0);
    let back = apply_sro(&there, -50.0);
    let span = 64..960;
    let rms = (span.clone().map(|n| (back[n] - burst[n]).norm_sqr()).sum::<f64>() / span.len() as f64).sqrt();
    ok &= rms < 1e-3;
    notes.push(format!("sro round-trip rms {rms:.1e}"));

    // Fading renormalizes to unit power
    let mut fade_err = 0.0f64;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = modulate(Modulation::Qam16, &mut rng, 256, 8).unwrap();
        let y = apply_fading(&x, &Pdp::default(), &mut rng).unwrap();
        fade_err = fade_err.max((power(&y) - 1.0).abs());
    }
    ok &= fade_err <= 1e-6;
    notes.push(format!("fading power error {fade_err:.1e}"));

    Outcome::check(ok, notes.join(", "))
}

fn seq_channels(spec: &ModelSpec, name: &str) -> Option<(usize, usize)> {
    match find_layer(spec, name)?.1 {
        ActShape::Seq { channels, len } => Some((channels, len)),
        ActShape::Flat(_) => None,
    }
}

fn architecture_builders() -> Outcome {
    let o = ArchOptions::default();
    let mut notes = Vec::new();
    let mut ok = true;

    let baseline = build_baseline_cnn(50, 8, &o).unwrap();
    let deep2 = build_deep_cnn(2, 50, 8, &o).unwrap();
    let deep9 = build_deep_cnn(9, 50, 8, &o).unwrap();
    let resnet = build_resnet(9, 50, 8, &o).unwrap();
    let inception = build_inception(2, 50, [3, 8], &o).unwrap();
    let cldnn = build_cldnn(50, 8, 50, Bypass::FirstConv, &o).unwrap();
    let cmf = build_conv_matched_filter(50, 8, 4, 50, &o).unwrap();
    for (name, spec) in [
        ("baseline", &baseline),
        ("deep9", &deep9),
        ("resnet9", &resnet),
        ("inception2", &inception),
        ("cldnn", &cldnn),
        ("conv_matched_filter", &cmf),
    ] {
        let checked = spec.check().is_ok() && spec.classes() == 11;
        ok &= checked;
        if !checked {
            notes.push(format!("{name} does not type-check"));
        }
    }
    ok &= baseline == deep2;
    ok &= build_deep_cnn(1, 50, 8, &o).is_err();

    let deep_len = seq_channels(&deep9, "conv9_relu");
    ok &= deep_len == Some((50, 128));
    notes.push(format!("deep9 last conv {deep_len:?}"));

    let cldnn_concat = seq_channels(&cldnn, "bypass_concat");
    ok &= cldnn_concat == Some((100, 128));
    notes.push(format!("cldnn concat {cldnn_concat:?}"));

    let inc = seq_channels(&inception, "inc1_concat");
    ok &= inc == Some((150, 128));
    notes.push(format!("inception module {inc:?}"));

    let shapes = resnet.check().unwrap();
    let shape_of = |s: &Source| match *s {
        Source::Input => resnet.input_shape(),
        Source::Layer(j) => shapes[j],
    };
    let adds: Vec<_> = resnet
        .layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::ResidualAdd))
        .collect();
    let skips_equal = !adds.is_empty() && adds.iter().all(|l| shape_of(&l.inputs[0]) == shape_of(&l.inputs[1]));
    ok &= skips_equal;
    notes.push(format!("resnet {} skips with equal shapes: {skips_equal}", adds.len()));

    Outcome::check(ok, notes.join(", "))
}

fn sha(path: &Path) -> String {
    let digest = Sha256::digest(fs::read(path).unwrap_or_default());
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_modnet");
    let root = tempfile::tempdir().unwrap();
    let payloads = [
        "data.iqds",
        "manifest.json",
        "out/baseline.mdnt",
        "out/history_baseline.csv",
        "out/acc_vs_snr.csv",
        "out/confusion_baseline.csv",
    ];
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        fs::create_dir_all(&dir).unwrap();
        let config = dir.join("run.toml");
        fs::write(
            &config,
            format!(
                "out_dir = {:?}\n[dataset]\npath = {:?}\nclasses = [\"bpsk\", \"gfsk\", \"am-dsb\"]\nsnr_grid = [-4, 8]\nframes_per_cell = 24\n[arch]\narch = \"baseline\"\nn_filt = 12\nn_taps = 5\n[train]\nmax_epochs = 3\nbatch_size = 12\n",
                dir.join("out"),
                dir.join("data.iqds")
            ),
        )
        .unwrap();
        for cmd in ["generate", "train", "eval"] {
            let status = Command::new(bin)
                .args([cmd, "--config", config.to_str().unwrap(), "--seed", "2024"])
                .output()
                .unwrap()
                .status;
            if !status.success() {
                return Outcome::check(false, format!("`{cmd}` exited with {status}"));
            }
        }
        digests.push(payloads.iter().map(|p| sha(&dir.join(p))).collect::<Vec<_>>());
    }
    let differing: Vec<&str> = payloads
        .iter()
        .zip(digests[0].iter().zip(&digests[1]))
        .filter(|(_, (a, b))| a != b)
        .map(|(p, _)| *p)
        .collect();
    Outcome::check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} payload files byte-identical across two generate/train/eval runs", payloads.len())
        } else {
            format!("differing payloads: {}", differing.join(", "))
        },
    )
}

fn four_class(frames_per_cell: usize, snr_grid: Vec<i32>, seed: u64) -> DatasetBundle {
    let mut c = DatasetConfig::desk(seed);
    c.classes = vec![Modulation::Bpsk, Modulation::Qpsk, Modulation::Gfsk, Modulation::Pam4];
    c.snr_grid = snr_grid;
    c.frames_per_cell = frames_per_cell;
    synth_dataset(&c).unwrap()
}

fn opts(classes: usize) -> ArchOptions {
    ArchOptions {
        classes,
        ..ArchOptions::default()
    }
}

fn desk_learnability() -> Outcome {
    let t = Instant::now();
    let data = four_class(200, vec![10, 12, 14, 16, 18], 31);
    let spec = build_baseline_cnn(50, 8, &opts(4)).unwrap();
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 50,
        patience: 50,
        lr: 3e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let (_, history) = train(&spec, &data, &config).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (peak_epoch, peak) = history
        .val_acc
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (e, a)| if a > best.1 { (e, a) } else { best });
    let at_best_loss = history.val_acc[history.best_epoch];
    Outcome::check(
        peak >= 0.85 && secs < 600.0,
        format!(
            "baseline 50x8 on BPSK/QPSK/GFSK/PAM4 at +10..+18 dB, 200 frames per cell: validation accuracy reached {peak:.3} at epoch {} of {} (need >= 0.85; {at_best_loss:.3} at the best-loss epoch {}), {secs:.0}s (< 600s)",
            peak_epoch + 1,
            history.epochs(),
            history.best_epoch + 1
        ),
    )
}

fn snr_separation() -> Outcome {
    let mut c = DatasetConfig::desk(41);
    c.frames_per_cell = 80;
    let data = synth_dataset(&c).unwrap();
    let spec = build_baseline_cnn(50, 8, &opts(11)).unwrap();
    let config = TrainConfig {
        batch_size: 32,
        max_epochs: 30,
        patience: 10,
        lr: 1e-3,
        seed: 5,
        ..TrainConfig::default()
    };
    let (state, history) = train(&spec, &data, &config).unwrap();
    let test = split_dataset(&data, config.splits, config.seed).unwrap().test;
    let report = evaluate(&state, &spec, &test).unwrap();
    let high = report.mean_accuracy_where(|s| s >= 10).unwrap();
    let low = report.mean_accuracy_where(|s| s <= -10).unwrap();
    let gap = 100.0 * (high - low);
    Outcome::check(
        gap >= 20.0,
        format!(
            "11-class baseline ({} epochs, {} test frames): accuracy {:.1}% at SNR >= +10 dB vs {:.1}% at SNR <= -10 dB, gap {gap:.1} points (>= 20)",
            history.epochs(),
            report.total,
            100.0 * high,
            100.0 * low
        ),
    )
}

fn quick_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: epochs,
        lr: 3e-3,
        seed,
        ..TrainConfig::default()
    }
}

fn taps_direction() -> Outcome {
    let data = four_class(100, vec![4, 12], 51);
    let options = SweepOptions {
        kind: SweepKind::Taps,
        domain: Some(vec![3, 7, 8, 9, 10, 11, 12]),
        arch: opts(4),
    };
    let rows: Vec<_> = run_sweep(&data, &quick_config(9, 20), &options, &[], |_| Ok(()))
        .unwrap()
        .into_iter()
        .map(|o| o.row)
        .collect();
    let three = rows[0].accuracy;
    let long: Vec<f64> = rows[1..].iter().map(|r| r.accuracy).collect();
    let mean = long.iter().sum::<f64>() / long.len() as f64;
    Outcome::check(
        mean >= three,
        format!(
            "mean accuracy over 7..12 taps {mean:.3} vs 3 taps {three:.3} ({})",
            rows.iter()
                .map(|r| format!("{}:{:.3}", r.label, r.accuracy))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn depth_plateau() -> Outcome {
    let mut plateaus = 0;
    let mut notes = Vec::new();
    for seed in 0..5u64 {
        let data = four_class(40, vec![4, 12], 60 + seed);
        let options = SweepOptions {
            kind: SweepKind::Depth,
            domain: Some(vec![2, 3, 4, 5, 6]),
            arch: opts(4),
        };
        let rows: Vec<_> = run_sweep(&data, &quick_config(seed, 10), &options, &[], |_| Ok(()))
            .unwrap()
            .into_iter()
            .map(|o| o.row)
            .collect();
        // intervals on a line overlap pairwise iff they share a point
        let lo = rows.iter().map(|r| r.accuracy - r.ci95).fold(f64::MIN, f64::max);
        let hi = rows.iter().map(|r| r.accuracy + r.ci95).fold(f64::MAX, f64::min);
        let flat = lo <= hi;
        plateaus += flat as usize;
        let spread = rows.iter().map(|r| r.accuracy).fold(0.0, f64::max)
            - rows.iter().map(|r| r.accuracy).fold(1.0, f64::min);
        notes.push(format!("seed {seed}: spread {spread:.3} {}", if flat { "within" } else { "outside" }));
    }
    Outcome {
        status: if plateaus >= 3 { Status::Pass } else { Status::Flag },
        detail: format!("depths 2..6 agree within 95% intervals in {plateaus} of 5 seeds (need 3; {})", notes.join(", ")),
    }
}
