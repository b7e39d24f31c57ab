//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! The pipeline criteria train real models on MNIST, so this target takes a
//! long time on a CPU. Set `NETINVERT_DATA_DIR` if the IDX files are not in
//! `data/mnist` at the workspace root.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use netinvert::classifier::FeatureSet;
use netinvert::conditioning::sample_soft_vectors;
use netinvert::data_io::load_checkpoint;
use netinvert::inversion::{
    ce_loss, cosine_diversity_loss, kl_loss, loss_and_input_gradient, within_class_similarity, CosineSpec,
    LossWeights,
};
use netinvert::scalar::Scalar;
use netinvert::seeding::{stream_rng, Stream};
use netinvert::tensor::{softmax_rows, Tensor};
use netinvert::{Classifier, ClassifierConfig, Generator32};
use rand::Rng;
use serde_json::Value;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = std::result::Result<String, String>;

const SEED: u64 = 0;

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- pipeline

struct Workspace {
    root: PathBuf,
    data: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let _ = fs::remove_dir_all(&root);
        fs::create_dir_all(&root).expect("create scratch dir");
        let data = std::env::var_os("NETINVERT_DATA_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
        Workspace { root, data }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Runs the CLI with `--out <dir>`; stdout on success.
    fn cli(&self, out: &Path, args: &[&str]) -> std::result::Result<String, String> {
        let output = Command::new(env!("CARGO_BIN_EXE_netinvert"))
            .arg("--out")
            .arg(out)
            .arg("--data-dir")
            .arg(&self.data)
            .arg("--seed")
            .arg(SEED.to_string())
            .args(args)
            .output()
            .map_err(|e| format!("spawn: {e}"))?;
        if output.status.success() {
            Ok(String::from_utf8_lossy(&output.stdout).into_owned())
        } else {
            Err(format!(
                "netinvert {} exited with {}: {}",
                args.join(" "),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ))
        }
    }
}

fn manifest(path: &Path) -> std::result::Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn summary_f64(m: &Value, key: &str) -> std::result::Result<f64, String> {
    m["summary"][key].as_f64().ok_or_else(|| format!("manifest has no summary.{key}"))
}

fn classifier_accuracy(ws: &Workspace) -> Check {
    let out = ws.dir("main");
    ws.cli(&out, &["train-classifier"])?;
    let acc = summary_f64(&manifest(&out.join("manifest_classifier.json"))?, "test_accuracy")?;
    ensure(acc >= 0.985, format!("test accuracy {acc:.4} (need >= 0.985, target 0.99)"))
}

fn inversion_accuracy(ws: &Workspace) -> Check {
    let out = ws.dir("main");
    if !out.join("classifier.ckpt").is_file() {
        return Err("no classifier checkpoint".into());
    }
    ws.cli(&out, &["invert"])?;
    let acc = summary_f64(&manifest(&out.join("manifest_invert_soft.json"))?, "inversion_accuracy")?;
    ensure(acc >= 0.90, format!("inversion accuracy {acc:.4} over 10000 eval samples (need >= 0.90)"))
}

fn diversity_ablation(ws: &Workspace) -> Check {
    let out = ws.dir("main");
    let with_cosine = out.join("generator_soft.ckpt");
    if !with_cosine.is_file() {
        return Err("no default generator checkpoint".into());
    }
    ws.cli(&out, &["invert", "--gamma", "0", "--tag", "gamma0"])?;
    let clf = load_classifier32(&out.join("classifier.ckpt"))?;
    let load = |p: &Path| -> std::result::Result<Generator32, String> {
        Generator32::from_checkpoint(&load_checkpoint(p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
    };
    let g1 = load(&with_cosine)?;
    let g0 = load(&out.join("generator_soft_gamma0.ckpt"))?;
    let s1 = within_class_similarity(&clf, &g1, 100, 1.0, SEED).map_err(|e| e.to_string())?;
    let s0 = within_class_similarity(&clf, &g0, 100, 1.0, SEED).map_err(|e| e.to_string())?;
    let lower = s1.iter().zip(&s0).filter(|(a, b)| a < b).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    ensure(
        lower >= 8,
        format!("{lower}/10 classes less similar with gamma=1 [gamma=1: {}] [gamma=0: {}]", fmt(&s1), fmt(&s0)),
    )
}

fn load_classifier32(path: &Path) -> std::result::Result<Classifier<f32>, String> {
    Classifier::from_checkpoint(&load_checkpoint(path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn boundary_map(ws: &Workspace) -> Check {
    let out = ws.dir("main");
    ws.cli(&out, &["train-classifier", "--penultimate-2d"])?;
    ws.cli(&out, &["analyze", "boundary"])?;
    let m = manifest(&out.join("manifest_analyze.json"))?;
    let classes = m["summary"]["boundary_classes"].as_array().map_or(0, Vec::len);
    let agree = &m["summary"]["boundary_reference_agreement"];
    let (ok, total) = (agree[0].as_u64().unwrap_or(0), agree[1].as_u64().unwrap_or(u64::MAX));
    let png = out.join("boundary.png");
    let dims = png_dims(&png)?;
    let near = if ok < total { format!(" ({} of the others sit next to a cell of their class)", near_boundary(&out)?) } else { String::new() };
    ensure(
        classes == 10 && ok == total && dims == (500, 500),
        format!("{classes} classes on a {}x{} map; {ok}/{total} reference points agree with their cell{near}", dims.0, dims.1),
    )
}

/// Counts disagreeing reference points whose predicted class occurs in the
/// 3x3 neighbourhood of their cell. Diagnostic only.
fn near_boundary(out: &Path) -> std::result::Result<usize, String> {
    let read = |name: &str| fs::read_to_string(out.join(name)).map_err(|e| format!("{name}: {e}"));
    let rows = |text: &str| -> Vec<Vec<f64>> {
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect()
    };
    let cells = rows(&read("boundary.csv")?);
    let n_rows = cells.iter().map(|c| c[0] as usize + 1).max().unwrap_or(0);
    let n_cols = cells.iter().map(|c| c[1] as usize + 1).max().unwrap_or(0);
    let mut grid = vec![vec![usize::MAX; n_cols]; n_rows];
    let (mut xs, mut ys) = (vec![0.0; n_cols], vec![0.0; n_rows]);
    for c in &cells {
        let (r, k) = (c[0] as usize, c[1] as usize);
        grid[r][k] = c[4] as usize;
        xs[k] = c[2];
        ys[r] = c[3];
    }
    let nearest = |centres: &[f64], v: f64| {
        (0..centres.len()).min_by(|&a, &b| (centres[a] - v).abs().total_cmp(&(centres[b] - v).abs())).unwrap_or(0)
    };
    let mut count = 0;
    for p in rows(&read("boundary_reference.csv")?) {
        if p[3] == p[4] {
            continue;
        }
        let (r, k) = (nearest(&ys, p[1]) as isize, nearest(&xs, p[0]) as isize);
        let hit = (-1..=1).flat_map(|a| (-1..=1).map(move |b| (r + a, k + b))).any(|(i, j)| {
            i >= 0 && j >= 0 && (i as usize) < n_rows && (j as usize) < n_cols && grid[i as usize][j as usize] == p[3] as usize
        });
        count += usize::from(hit);
    }
    Ok(count)
}

fn png_dims(path: &Path) -> std::result::Result<(u32, u32), String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if bytes.len() < 24 || &bytes[1..4] != b"PNG" {
        return Err(format!("{} is not a PNG", path.display()));
    }
    let be = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap());
    Ok((be(16), be(20)))
}

fn determinism(ws: &Workspace) -> Check {
    let main = ws.dir("main");
    let clf = main.join("classifier.ckpt");
    let gen = main.join("generator_soft.ckpt");
    if !clf.is_file() || !gen.is_file() {
        return Err("missing classifier or generator checkpoint".into());
    }
    let clf_arg = clf.to_str().unwrap();
    let short = ["--epochs", "2", "--batches-per-epoch", "25", "--eval-samples", "1000"];
    let mut csvs = Vec::new();
    let mut pngs = Vec::new();
    for run in ["rerun_a", "rerun_b"] {
        let out = ws.dir(run);
        let mut args = vec!["invert", "--classifier", clf_arg];
        args.extend(short);
        ws.cli(&out, &args)?;
        csvs.push(fs::read(out.join("inversion_metrics_soft.csv")).map_err(|e| e.to_string())?);
        ws.cli(&out, &["analyze", "all", "--classifier", clf_arg, "--generator", gen.to_str().unwrap(), "--boundary-classifier", main.join("classifier_2d.ckpt").to_str().unwrap()])?;
        let mut set = Vec::new();
        for name in ["sample_grid_soft.png", "tsne_soft.png", "boundary.png"] {
            set.push((name, fs::read(out.join(name)).map_err(|e| format!("{name}: {e}"))?));
        }
        pngs.push(set);
    }
    let same_csv = csvs[0] == csvs[1];
    let differing: Vec<&str> = pngs[0].iter().zip(&pngs[1]).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0).collect();
    ensure(
        same_csv && differing.is_empty(),
        format!(
            "metrics CSV {}; PNGs {}",
            if same_csv { "identical" } else { "differ" },
            if differing.is_empty() { "byte-identical".to_string() } else { format!("differ: {}", differing.join(", ")) }
        ),
    )
}

fn frozen_classifier(ws: &Workspace) -> Check {
    let mut seen = 0;
    for dir in ["main", "rerun_a", "rerun_b"] {
        let Ok(entries) = fs::read_dir(ws.dir(dir)) else { continue };
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if !name.starts_with("manifest_invert") {
                continue;
            }
            let m = manifest(&e.path())?;
            let before = &m["summary"]["classifier_checksum_before"];
            let after = &m["summary"]["classifier_checksum_after"];
            if before.is_null() || before != after {
                return Err(format!("{dir}/{name}: checksum {before} became {after}"));
            }
            seen += 1;
        }
    }
    ensure(seen >= 4, format!("classifier checksum unchanged across {seen} inversion runs"))
}

// ------------------------------------------------------------- numerical

fn random_simplex_rows<R: Rng>(rng: &mut R, n: usize, k: usize, with_zeros: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64)).collect();
            if with_zeros {
                row[rng.random_range(0..k)] = 0.0;
            }
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_vec(&[rows.len(), rows[0].len()], rows.concat()).unwrap()
}

fn oracle_kl(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (pr, qr) in p.iter().zip(q) {
        for (&a, &b) in pr.iter().zip(qr) {
            if a > 0.0 {
                total += a * (a / b.max(1e-8)).ln();
            }
        }
    }
    total / p.len() as f64
}

fn oracle_ce(labels: &[usize], logits: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (&y, row) in labels.iter().zip(logits) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total -= (row[y].exp() / z).ln();
    }
    total / labels.len() as f64
}

fn oracle_cosine(layers: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for rows in layers {
        let n = rows.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let ni = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                let nj = rows[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                s += dot / (ni * nj);
            }
        }
        total += s / (n * (n - 1)) as f64;
    }
    total / layers.len() as f64
}

fn loss_oracles() -> Check {
    let mut rng = stream_rng(SEED, Stream::Evaluation);
    let mut worst = [0.0f64; 3];
    for trial in 0..100 {
        let n = rng.random_range(2..17);
        let p = random_simplex_rows(&mut rng, n, 10, trial % 2 == 0);
        let q = random_simplex_rows(&mut rng, n, 10, false);
        let kl = kl_loss(&tensor(&p), &tensor(&q)).map_err(|e| e.to_string())?;
        worst[0] = worst[0].max((kl - oracle_kl(&p, &q)).abs());

        let logits: Vec<Vec<f64>> = (0..n).map(|_| (0..10).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let ce = ce_loss(&labels, &tensor(&logits)).map_err(|e| e.to_string())?;
        worst[1] = worst[1].max((ce - oracle_ce(&labels, &logits)).abs());

        let layers: Vec<Vec<Vec<f64>>> = [16, 10]
            .iter()
            .map(|&w| (0..n).map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .collect();
        let fs = FeatureSet { per_layer: layers.iter().map(|l| tensor(l)).collect() };
        let cos = cosine_diversity_loss(&fs, &CosineSpec::default()).map_err(|e| e.to_string())?;
        worst[2] = worst[2].max((cos - oracle_cosine(&layers)).abs());
    }
    ensure(
        worst.iter().all(|&w| w < 1e-6),
        format!("max abs deviation kl {:.1e}, ce {:.1e}, cosine {:.1e} over 100 batches", worst[0], worst[1], worst[2]),
    )
}

/// Norm-wise relative error between the analytic and central-difference input gradients.
fn gradient_error<T: Scalar>(h: f64) -> std::result::Result<f64, String> {
    let cfg = ClassifierConfig {
        conv_channels: vec![],
        fc_dims: vec![16, 10],
        input_size: 8,
        ..Default::default()
    };
    let clf = Classifier::<T>::new(cfg, 3).map_err(|e| e.to_string())?;
    let mut rng = stream_rng(SEED, Stream::Evaluation);
    let n = 3;
    let images = Tensor::from_vec(&[n, 1, 8, 8], (0..n * 64).map(|_| T::lit(rng.random_range(0.05..0.95))).collect())
        .map_err(|e| e.to_string())?;
    let scores = Tensor::from_vec(&[n, 10], (0..n * 10).map(|_| T::lit(rng.random_range(-2.0..2.0))).collect()).unwrap();
    let p = softmax_rows(&scores);
    let labels: Vec<usize> = (0..n).map(|i| netinvert::tensor::argmax(p.row(i))).collect();
    let w = LossWeights::default();
    let spec = CosineSpec::default();
    let loss = |x: &Tensor<T>| loss_and_input_gradient(&clf, x, &p, &labels, &w, &spec).map(|(l, _)| l.total.as_f64());
    let (_, analytic) = loss_and_input_gradient(&clf, &images, &p, &labels, &w, &spec).map_err(|e| e.to_string())?;
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    for i in 0..images.data().len() {
        let mut plus = images.clone();
        plus.data_mut()[i] += T::lit(h);
        let mut minus = images.clone();
        minus.data_mut()[i] -= T::lit(h);
        let step = plus.data()[i].as_f64() - minus.data()[i].as_f64();
        let numeric = (loss(&plus).map_err(|e| e.to_string())? - loss(&minus).map_err(|e| e.to_string())?) / step;
        let a = analytic.data()[i].as_f64();
        diff += (a - numeric).powi(2);
        norm_a += a * a;
        norm_n += numeric * numeric;
    }
    Ok(diff.sqrt() / norm_a.sqrt().max(norm_n.sqrt()).max(1e-12))
}

fn gradient_check() -> Check {
    let e32 = gradient_error::<f32>(1e-2)?;
    let e64 = gradient_error::<f64>(1e-5)?;
    ensure(e32 < 1e-3 && e64 < 1e-6, format!("relative error f32 {e32:.2e} (< 1e-3), f64 {e64:.2e} (< 1e-6)"))
}

fn conditioning_invariants() -> Check {
    let n = 10_000;
    let mut rng = stream_rng(SEED, Stream::Conditioning);
    let batch = sample_soft_vectors::<f64, _>(n, 10, &mut rng).map_err(|e| e.to_string())?;
    let mut worst_sum = 0.0f64;
    let mut nonpositive = 0;
    for i in 0..n {
        let row = batch.vectors.row(i);
        worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        nonpositive += row.iter().filter(|&&v| v <= 0.0).count();
    }
    let mut counts = [0usize; 10];
    for &l in &batch.labels {
        counts[l] += 1;
    }
    let expected = n as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    ensure(
        worst_sum < 1e-6 && nonpositive == 0 && p_value > 0.01,
        format!("max |row sum - 1| {worst_sum:.1e}, {nonpositive} nonpositive entries, chi-square p = {p_value:.3}"),
    )
}

// ------------------------------------------------------------------ driver

/// `None` when filtered out by the command-line arguments.
fn run(filters: &[String], name: &str, f: impl FnOnce() -> Check) -> Option<bool> {
    if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
        println!("SKIP  {name}");
        return None;
    }
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("PASS  {name:<26} {d}  ({secs:.1}s)"),
        Err(d) => println!("FAIL  {name:<26} {d}  ({secs:.1}s)"),
    }
    Some(outcome.is_ok())
}

fn main() {
    panic::set_hook(Box::new(|_| {}));
    // `cargo test --test acceptance -- <substring>...` runs a subset.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let f = &filters;
    let ws = Workspace::new();
    let results = [
        run(f, "loss_oracles", loss_oracles),
        run(f, "gradient_check", gradient_check),
        run(f, "conditioning_invariants", conditioning_invariants),
        run(f, "classifier_accuracy", || classifier_accuracy(&ws)),
        run(f, "inversion_accuracy", || inversion_accuracy(&ws)),
        run(f, "diversity_ablation", || diversity_ablation(&ws)),
        run(f, "boundary_map", || boundary_map(&ws)),
        run(f, "determinism", || determinism(&ws)),
        run(f, "frozen_classifier", || frozen_classifier(&ws)),
    ];
    let failed = results.iter().filter(|r| **r == Some(false)).count();
    let passed = results.iter().filter(|r| **r == Some(true)).count();
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
