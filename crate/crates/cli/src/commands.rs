use std::fs;
use std::path::{Path, PathBuf};

use netinvert::analysis::{
    decision_boundary_for, export_features, render_sample_grid, tsne_embed, write_boundary_csv, write_boundary_png,
    write_embedding_csv, write_scatter_png, FeatureLayer,
};
use netinvert::classifier::{evaluate, train_classifier as fit, EpochRecord, TrainOptions};
use netinvert::conditioning::sample_conditioning;
use netinvert::data_io::{load_checkpoint, load_mnist, save_checkpoint, LabeledDataset, MnistFiles};
use netinvert::generator::sample_latents;
use netinvert::inversion::{train_generator, InversionEpoch};
use netinvert::seeding::{stream_rng, Stream};
use netinvert::tensor::argmax;
use netinvert::{Classifier32, Error, Generator32, Result, Tensor};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::manifest::{write_manifest, write_text};

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(io(&cfg.out))
}

fn load_split(files: &MnistFiles) -> Result<(LabeledDataset<f32>, LabeledDataset<f32>)> {
    Ok((
        load_mnist(&files.train_images, &files.train_labels)?,
        load_mnist(&files.test_images, &files.test_labels)?,
    ))
}

fn prerequisite(flag: &str, given: Option<PathBuf>, default: PathBuf) -> Result<PathBuf> {
    let path = given.unwrap_or(default);
    if !path.is_file() {
        return Err(Error::Config(format!("missing prerequisite checkpoint {flag}: {}", path.display())));
    }
    Ok(path)
}

fn load_classifier(path: &Path) -> Result<Classifier32> {
    Classifier32::from_checkpoint(&load_checkpoint(path)?)
}

fn classifier_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,test_accuracy\n");
    for r in records {
        s += &format!("{},{},{}\n", r.epoch, r.train_loss, r.test_accuracy);
    }
    s
}

pub fn train_classifier(cfg: &ExperimentConfig) -> Result<()> {
    let files = cfg.data_files()?;
    prepare_out(cfg)?;
    let (train, test) = load_split(&files)?;
    let mut model = Classifier32::new(cfg.classifier.clone(), cfg.seed)?;
    let t = &cfg.classifier_training;
    let opts = TrainOptions { epochs: t.epochs, batch_size: t.batch_size, lr: t.lr, seed: cfg.seed };
    let records = fit(&mut model, &train, &test, &opts, |r| {
        println!("epoch {:>3}  train_loss {:.6}  test_accuracy {:.4}", r.epoch, r.train_loss, r.test_accuracy);
    })?;
    let accuracy = match records.last() {
        Some(r) => r.test_accuracy,
        None => evaluate(&model, &test)?,
    };

    let stem = if cfg.classifier.penultimate_2d { "classifier_2d" } else { "classifier" };
    let ckpt = format!("{stem}.ckpt");
    let metrics = format!("{stem}_metrics.csv");
    save_checkpoint(&model.to_checkpoint(cfg.seed, t.epochs as u64)?, cfg.out.join(&ckpt))?;
    write_text(&cfg.out.join(&metrics), &classifier_csv(&records))?;
    write_manifest(
        cfg,
        "train-classifier",
        &format!("manifest_{stem}.json"),
        &[ckpt, metrics],
        json!({ "test_accuracy": accuracy, "parameter_checksum": model.checksum() }),
    )?;
    println!("final test accuracy: {accuracy:.4}");
    Ok(())
}

fn inversion_csv(records: &[InversionEpoch], n_classes: usize) -> String {
    let mut s = String::from("epoch,loss,kl,ce,cosine,inversion_accuracy");
    for k in 0..n_classes {
        s += &format!(",acc_{k}");
    }
    s.push('\n');
    for r in records {
        s += &format!("{},{},{},{},{},{}", r.epoch, r.loss, r.kl, r.ce, r.cosine, r.inversion_accuracy);
        for a in &r.per_class_accuracy {
            s += &format!(",{a}");
        }
        s.push('\n');
    }
    s
}

pub fn invert(cfg: &ExperimentConfig, classifier: Option<PathBuf>, tag: Option<&str>) -> Result<()> {
    let clf_path = prerequisite("--classifier", classifier, cfg.out.join("classifier.ckpt"))?;
    let clf = load_classifier(&clf_path)?;
    if clf.n_classes() != cfg.generator.n_classes {
        return Err(Error::Config(format!(
            "generator.n_classes ({}) does not match the classifier's {} classes",
            cfg.generator.n_classes,
            clf.n_classes()
        )));
    }
    prepare_out(cfg)?;
    let mut gen = Generator32::new(cfg.generator.clone(), cfg.seed)?;
    let metrics = train_generator(&clf, &mut gen, &cfg.inversion, |e| {
        println!(
            "epoch {:>3}  loss {:.6}  kl {:.6}  ce {:.6}  cosine {:.6}  inversion_accuracy {:.4}",
            e.epoch, e.loss, e.kl, e.ce, e.cosine, e.inversion_accuracy
        );
    })?;

    let stem = format!("{}{}", cfg.generator.conditioning, tag.map(|t| format!("_{t}")).unwrap_or_default());
    let ckpt = format!("generator_{stem}.ckpt");
    let csv = format!("inversion_metrics_{stem}.csv");
    save_checkpoint(&gen.to_checkpoint(cfg.seed, cfg.inversion.epochs as u64)?, cfg.out.join(&ckpt))?;
    write_text(&cfg.out.join(&csv), &inversion_csv(&metrics.epochs, clf.n_classes()))?;
    let accuracy = metrics.final_accuracy();
    write_manifest(
        cfg,
        "invert",
        &format!("manifest_invert_{stem}.json"),
        &[ckpt, csv],
        json!({
            "classifier": clf_path,
            "inversion_accuracy": accuracy,
            "classifier_checksum_before": metrics.classifier_checksum_before,
            "classifier_checksum_after": metrics.classifier_checksum_after,
        }),
    )?;
    match accuracy {
        Some(a) => println!("final inversion accuracy: {a:.4}"),
        None => println!("no epochs run"),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct Analyses {
    pub grid: bool,
    pub tsne: bool,
    pub boundary: bool,
}

pub fn analyze(
    cfg: &ExperimentConfig,
    which: Analyses,
    classifier: Option<PathBuf>,
    generator: Option<PathBuf>,
    boundary_classifier: Option<PathBuf>,
) -> Result<()> {
    let a = &cfg.analysis;
    let mut models = None;
    if which.grid || which.tsne {
        let clf_path = prerequisite("--classifier", classifier, cfg.out.join("classifier.ckpt"))?;
        let default_gen = cfg.out.join(format!("generator_{}.ckpt", cfg.generator.conditioning));
        let gen_path = prerequisite("--generator", generator, default_gen)?;
        let gen = Generator32::from_checkpoint(&load_checkpoint(&gen_path)?)?;
        models = Some((load_classifier(&clf_path)?, gen));
    }
    let mut boundary_model = None;
    if which.boundary {
        let path = prerequisite("--boundary-classifier", boundary_classifier, cfg.out.join("classifier_2d.ckpt"))?;
        let clf = load_classifier(&path)?;
        if !clf.config().penultimate_2d {
            return Err(Error::Config(format!(
                "{}: boundary maps need a classifier trained with --penultimate-2d",
                path.display()
            )));
        }
        boundary_model = Some((clf, cfg.data_files()?));
    }
    prepare_out(cfg)?;

    let mut files = Vec::new();
    let mut summary = serde_json::Map::new();
    if let Some((clf, gen)) = &models {
        let mode = gen.config().conditioning;
        let temperature = cfg.inversion.temperature;
        if which.grid {
            let grid = render_sample_grid(gen, clf, a.grid_cols, temperature, cfg.seed)?;
            let name = format!("sample_grid_{mode}.png");
            grid.write_png(cfg.out.join(&name))?;
            println!("wrote {name} (candidates per class: {:?})", grid.attempts);
            summary.insert("grid_attempts".into(), json!(grid.attempts));
            files.push(name);
        }
        if which.tsne {
            let n = a.tsne_samples;
            let mut rng = stream_rng(cfg.seed, Stream::Analysis);
            let cond = sample_conditioning::<f32, _>(mode, n, clf.n_classes(), temperature, &mut rng)?;
            let latents = sample_latents(n, gen.config().latent_dim, &mut rng);
            let images = gen.generate(&latents, cond.signal())?;
            let features_name = format!("features_{mode}.csv");
            export_features(clf, &images, &cond.labels, FeatureLayer::Penultimate, cfg.out.join(&features_name))?;
            let pass = clf.forward_eval(&images)?;
            let pen = pass.features.penultimate().expect("classifier has a penultimate layer");
            let emb = tsne_embed(pen, &cond.labels, &a.tsne, cfg.seed)?;
            let (png, csv) = (format!("tsne_{mode}.png"), format!("tsne_{mode}.csv"));
            write_scatter_png(cfg.out.join(&png), &emb.coords, &emb.labels, 600)?;
            write_embedding_csv(cfg.out.join(&csv), &emb)?;
            println!("wrote {png}, {csv}, {features_name}");
            files.extend([features_name, png, csv]);
        }
    }
    if let Some((clf, data)) = &boundary_model {
        let test: LabeledDataset<f32> = load_mnist(&data.test_images, &data.test_labels)?;
        let (reference, predicted) = penultimate_features(clf, &test)?;
        let res = a.boundary_resolution;
        let map = decision_boundary_for(clf, &reference, res, res, a.boundary_margin)?;
        let points: Vec<[f64; 2]> = (0..reference.rows())
            .map(|i| [reference.row(i)[0] as f64, reference.row(i)[1] as f64])
            .collect();
        let agree = points
            .iter()
            .zip(&predicted)
            .filter(|(p, &c)| {
                let (r, col) = map.cell_of(**p);
                map.class_at(r, col) == c
            })
            .count();
        let classes = map.distinct_classes();
        write_boundary_png(cfg.out.join("boundary.png"), &map, &points, test.labels())?;
        write_boundary_csv(cfg.out.join("boundary.csv"), &map)?;
        let mut s = String::from("x,y,label,predicted,cell_class\n");
        for ((p, &l), &c) in points.iter().zip(test.labels()).zip(&predicted) {
            let (r, col) = map.cell_of(*p);
            s += &format!("{},{},{l},{c},{}\n", p[0], p[1], map.class_at(r, col));
        }
        write_text(&cfg.out.join("boundary_reference.csv"), &s)?;
        println!(
            "wrote boundary.png, boundary.csv, boundary_reference.csv ({} classes in map; {agree}/{} reference points agree with their cell)",
            classes.len(),
            points.len()
        );
        summary.insert("boundary_classes".into(), json!(classes));
        summary.insert("boundary_reference_agreement".into(), json!([agree, points.len()]));
        files.extend(["boundary.png".into(), "boundary.csv".into(), "boundary_reference.csv".into()]);
    }
    write_manifest(cfg, "analyze", "manifest_analyze.json", &files, serde_json::Value::Object(summary))
}

/// 2-D penultimate features of every image and the classifier's prediction.
fn penultimate_features(clf: &Classifier32, data: &LabeledDataset<f32>) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut feats = Vec::with_capacity(data.len() * 2);
    let mut predicted = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(500) {
        let (images, _) = data.batch(chunk);
        let pass = clf.forward_eval(&images)?;
        let pen = pass.features.penultimate().expect("classifier has a penultimate layer");
        feats.extend_from_slice(pen.data());
        let logits = pass.prediction.logits;
        predicted.extend((0..logits.rows()).map(|i| argmax(logits.row(i))));
    }
    Ok((Tensor::from_vec(&[data.len(), 2], feats)?, predicted))
}
