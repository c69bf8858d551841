use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;

use routescore::eval::{
    accuracy, classification_report, mean_std, mse, pearson, r_squared, spearman, stratified_kfold,
    stratified_kfold_labels, topk_ranking, ClassificationReport, MeanStd, ScoredFamily,
};
use routescore::features::{Featurizer, RouteFeatures};
use routescore::finetune::{
    finetune_train, parse_labels_csv, sha256_hex, write_labels_csv, ExpertLabel, FinetuneSample,
    RoutePrediction,
};
use routescore::hash::derive_seed;
use routescore::model::TrainSample;
use routescore::routes::synth::planted_labels;
use routescore::routes::{generate_synthetic_family, parse_route_file, write_route_file};
use routescore::ted::score_route_ted;
use routescore::{FinetunedModel, PriorTable, RouteFamily, RouteTree, ScoringModel, Tier};

use crate::config::RunConfig;
use crate::output::OutDir;
use crate::Kind;

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Route files under `path` (sorted by name), or `path` itself.
fn load_families(out: &mut OutDir, path: &Path) -> Result<Vec<RouteFamily>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "json"));
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    ensure!(!files.is_empty(), "no route files in {}", path.display());
    let mut seen = BTreeSet::new();
    let mut families = Vec::with_capacity(files.len());
    for file in files {
        let bytes = out.read_input(&file)?;
        let family =
            parse_route_file(&bytes).with_context(|| format!("parsing {}", file.display()))?;
        ensure!(
            seen.insert(family.molecule_id.clone()),
            "duplicate molecule_id {}",
            family.molecule_id
        );
        families.push(family);
    }
    Ok(families)
}

fn load_priors(out: &mut OutDir, path: Option<&Path>) -> Result<PriorTable> {
    match path {
        Some(p) => {
            let bytes = out.read_input(p)?;
            PriorTable::from_csv(bytes.as_slice())
                .with_context(|| format!("reading priors {}", p.display()))
        }
        None => Ok(PriorTable::synthetic()),
    }
}

fn featurizer(config: &RunConfig, priors: PriorTable) -> Featurizer {
    Featurizer::new(config.chem, config.feat, priors)
}

fn featurize(fz: &Featurizer, family: &RouteFamily, idx: usize) -> Result<RouteFeatures> {
    fz.featurize(&family.candidates[idx])
        .with_context(|| format!("featurising {}", family.route_id(idx)))
}

fn load_model(out: &mut OutDir, path: &Path) -> Result<(ScoringModel, Vec<u8>)> {
    let bytes = out.read_input(path)?;
    let text = std::str::from_utf8(&bytes).context("model file is not UTF-8")?;
    let model =
        ScoringModel::from_json(text).with_context(|| format!("loading {}", path.display()))?;
    Ok((model, bytes))
}

fn load_labels(out: &mut OutDir, path: &Path) -> Result<BTreeMap<String, ExpertLabel>> {
    let bytes = out.read_input(path)?;
    let labels = parse_labels_csv(bytes.as_slice())
        .with_context(|| format!("reading labels {}", path.display()))?;
    let mut map = BTreeMap::new();
    for l in labels {
        let id = l.route_id.clone();
        ensure!(
            map.insert(id.clone(), l).is_none(),
            "duplicate label for {id}"
        );
    }
    Ok(map)
}

pub fn gen_data(config: &RunConfig, plant_labels: bool) -> Result<()> {
    let out = OutDir::create(&config.paths.out)?;
    let gen = config.gen.generator();
    let mut labels = Vec::new();
    for i in 0..config.gen.n_families {
        let seed = derive_seed(config.gen_seed(), &format!("gen.family.{i}"));
        let family = generate_synthetic_family(seed, &gen)?;
        out.write(
            &format!("routes/family-{i:05}.json"),
            write_route_file(&family),
        )?;
        if plant_labels {
            for (idx, route) in family.candidates.iter().enumerate() {
                let (points, steps) = planted_labels(route)
                    .ok_or_else(|| anyhow!("{} has no planted qualities", family.route_id(idx)))?;
                labels.push(ExpertLabel {
                    route_id: family.route_id(idx),
                    points,
                    step_points: Some(steps),
                });
            }
        }
    }
    out.write("priors.csv", PriorTable::synthetic().to_csv())?;
    if plant_labels {
        out.write("labels.csv", write_labels_csv(&labels))?;
    }
    out.finish("gen-data", config)
}

pub fn label_ted(config: &RunConfig, routes: &Path) -> Result<()> {
    let mut out = OutDir::create(&config.paths.out)?;
    let families = load_families(&mut out, routes)?;
    let mut rows = Vec::new();
    for fam in &families {
        for (idx, route) in fam.candidates.iter().enumerate() {
            let d = score_route_ted(route, fam.reference(), &config.ted, &config.chem)
                .with_context(|| format!("labelling {}", fam.route_id(idx)))?;
            rows.push(vec![
                fam.route_id(idx),
                fam.molecule_id.clone(),
                fam.is_reference(idx).to_string(),
                d.to_string(),
            ]);
        }
    }
    out.write(
        "ted.csv",
        csv_string(&["route_id", "molecule_id", "is_reference", "ted"], rows)?,
    )?;
    out.finish("label-ted", config)
}

/// `route_id -> value` from a CSV with a `route_id` column.
fn read_column(out: &mut OutDir, path: &Path, column: &str) -> Result<BTreeMap<String, String>> {
    let bytes = out.read_input(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{} has no '{name}' column", path.display()))
    };
    let (id_col, value_col) = (find("route_id")?, find(column)?);
    let mut map = BTreeMap::new();
    for record in rdr.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let id = record[id_col].to_string();
        ensure!(
            map.insert(id.clone(), record[value_col].to_string())
                .is_none(),
            "duplicate route_id {id} in {}",
            path.display()
        );
    }
    Ok(map)
}

fn parse_f64(text: &str, what: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| anyhow!("{what}: '{text}' is not a number"))
}

#[derive(Serialize)]
struct PretrainSummary {
    seed: u64,
    best_epoch: usize,
    selected_by: &'static str,
    parameter_count: usize,
    train_routes: usize,
    val_routes: usize,
    val_molecules: Vec<String>,
}

pub fn pretrain(
    config: &RunConfig,
    routes: &Path,
    labels: &Path,
    priors: Option<&Path>,
) -> Result<()> {
    let mut out = OutDir::create(&config.paths.out)?;
    let families = load_families(&mut out, routes)?;
    let teds = read_column(&mut out, labels, "ted")?;
    let fz = featurizer(config, load_priors(&mut out, priors)?);

    let mut per_family = Vec::with_capacity(families.len());
    for fam in &families {
        let mut samples = Vec::with_capacity(fam.candidates.len());
        for idx in 0..fam.candidates.len() {
            let id = fam.route_id(idx);
            let text = teds
                .get(&id)
                .ok_or_else(|| anyhow!("no TED label for {id}"))?;
            let label = parse_f64(text, &id)?;
            ensure!(
                label.is_finite() && label >= 0.0,
                "{id}: TED label {label} must be finite and nonnegative"
            );
            samples.push(TrainSample {
                features: featurize(&fz, fam, idx)?,
                label,
            });
        }
        per_family.push(samples);
    }

    // Whole families go to validation so no molecule straddles the split.
    let means: Vec<f64> = per_family
        .iter()
        .map(|s| s.iter().map(|x| x.label).sum::<f64>() / s.len() as f64)
        .collect();
    let k = ((1.0 / config.eval.val_fraction).round() as usize).max(2);
    let folds = stratified_kfold(
        &means,
        k,
        config.eval.ted_bins,
        derive_seed(config.seed, "pretrain.split"),
    )
    .context("splitting families into train and validation")?;
    let (mut train, mut val, mut val_molecules) = (Vec::new(), Vec::new(), Vec::new());
    for (i, samples) in per_family.into_iter().enumerate() {
        if folds.assignment[i] == 0 {
            val_molecules.push(families[i].molecule_id.clone());
            val.extend(samples);
        } else {
            train.extend(samples);
        }
    }

    let result = routescore::model::pretrain(
        &train,
        &val,
        &config.model,
        config.feat.mode,
        config.chem.nbits,
        &config.train,
        derive_seed(config.seed, "pretrain.model"),
    )?;
    out.write("model.json", result.model.to_json())?;
    let rows = result.history.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            r.train_mse.to_string(),
            r.val_mse.to_string(),
            r.val_spearman.to_string(),
        ]
    });
    out.write(
        "history.csv",
        csv_string(&["epoch", "train_mse", "val_mse", "val_spearman"], rows)?,
    )?;
    out.write_json(
        "summary.json",
        &PretrainSummary {
            seed: config.seed,
            best_epoch: result.best_epoch,
            selected_by: "val_spearman",
            parameter_count: result.model.parameter_count(),
            train_routes: train.len(),
            val_routes: val.len(),
            val_molecules,
        },
    )?;
    out.finish("pretrain", config)
}

/// Labelled routes in route-file order; every label must name a known route.
fn labelled_samples(
    families: &[RouteFamily],
    labels: &BTreeMap<String, ExpertLabel>,
    fz: &Featurizer,
) -> Result<Vec<FinetuneSample>> {
    let mut samples = Vec::new();
    let mut used = BTreeSet::new();
    for fam in families {
        for idx in 0..fam.candidates.len() {
            let id = fam.route_id(idx);
            if let Some(label) = labels.get(&id) {
                label.check()?;
                samples.push(FinetuneSample {
                    features: featurize(fz, fam, idx)?,
                    label: label.clone(),
                });
                used.insert(id);
            }
        }
    }
    if let Some(missing) = labels.keys().find(|id| !used.contains(*id)) {
        bail!("label for unknown route {missing}");
    }
    Ok(samples)
}

#[derive(Serialize)]
struct FoldReport {
    fold: usize,
    train_routes: usize,
    test_routes: usize,
    points_accuracy: f64,
    points_spearman: f64,
    points_pearson: f64,
    tiers: ClassificationReport,
}

#[derive(Serialize)]
struct FinetuneSummary {
    seed: u64,
    folds: usize,
    routes: usize,
    base_sha256: String,
    trainable_parameters: usize,
    points_accuracy: MeanStd,
    points_spearman: MeanStd,
    points_pearson: MeanStd,
    tier_accuracy: MeanStd,
}

fn fold_report(
    fm: &FinetunedModel,
    test: &[&FinetuneSample],
    fold: usize,
    train_routes: usize,
) -> Result<FoldReport> {
    let preds = test
        .iter()
        .map(|s| fm.predict(&s.features))
        .collect::<Result<Vec<RoutePrediction>, _>>()?;
    let truth: Vec<u8> = test.iter().map(|s| s.label.points).collect();
    let pred_points: Vec<u8> = preds.iter().map(|p| p.points).collect();
    let ratings: Vec<f64> = preds.iter().map(|p| p.rating).collect();
    let truth_f: Vec<f64> = truth.iter().map(|&p| f64::from(p)).collect();
    let true_tiers = truth
        .iter()
        .map(|&p| Tier::from_points(p))
        .collect::<Result<Vec<_>, _>>()?;
    let pred_tiers: Vec<Tier> = preds.iter().map(|p| p.tier).collect();
    Ok(FoldReport {
        fold,
        train_routes,
        test_routes: test.len(),
        points_accuracy: accuracy(&pred_points, &truth)?,
        points_spearman: spearman(&ratings, &truth_f).unwrap_or(f64::NAN),
        points_pearson: pearson(&ratings, &truth_f).unwrap_or(f64::NAN),
        tiers: classification_report(&pred_tiers, &true_tiers)?,
    })
}

pub fn finetune(
    config: &RunConfig,
    model: &Path,
    labels: &Path,
    routes: &Path,
    priors: Option<&Path>,
) -> Result<()> {
    let mut out = OutDir::create(&config.paths.out)?;
    let (base, base_bytes) = load_model(&mut out, model)?;
    let labels = load_labels(&mut out, labels)?;
    let families = load_families(&mut out, routes)?;
    let fz = featurizer(config, load_priors(&mut out, priors)?);
    let samples = labelled_samples(&families, &labels, &fz)?;
    let points: Vec<u8> = samples.iter().map(|s| s.label.points).collect();
    let folds = stratified_kfold_labels(
        &points,
        config.eval.folds,
        derive_seed(config.seed, "finetune.folds"),
    )
    .context("assigning cross-validation folds")?;

    let mut reports = Vec::with_capacity(folds.k);
    for k in 0..folds.k {
        let (train_idx, test_idx) = folds.split(k);
        let train: Vec<FinetuneSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
        let fm = finetune_train(
            &base,
            &train,
            config.lora,
            derive_seed(config.seed, &format!("finetune.fold.{k}")),
        )
        .with_context(|| format!("fold {k}"))?;
        let test: Vec<&FinetuneSample> = test_idx.iter().map(|&i| &samples[i]).collect();
        let report = fold_report(&fm, &test, k, train.len())?;
        out.write(
            &format!("folds/fold-{k}-tiers.csv"),
            report.tiers.metrics_csv(),
        )?;
        out.write(
            &format!("folds/fold-{k}-confusion.csv"),
            report.tiers.confusion_csv(),
        )?;
        out.write_json(&format!("folds/fold-{k}.json"), &report)?;
        reports.push(report);
    }

    let fm = finetune_train(
        &base,
        &samples,
        config.lora,
        derive_seed(config.seed, "finetune.final"),
    )?;
    let base_sha256 = sha256_hex(&base_bytes);
    ensure!(
        fm.base_hash() == base_sha256,
        "base model changed during fine-tuning"
    );
    out.write("adapter.json", fm.to_json())?;

    let collect = |f: fn(&FoldReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let summary = FinetuneSummary {
        seed: config.seed,
        folds: folds.k,
        routes: samples.len(),
        base_sha256,
        trainable_parameters: fm.trainable_parameter_count(),
        points_accuracy: collect(|r| r.points_accuracy),
        points_spearman: collect(|r| r.points_spearman),
        points_pearson: collect(|r| r.points_pearson),
        tier_accuracy: collect(|r| r.tiers.accuracy),
    };
    let rows = reports.iter().map(|r| {
        vec![
            r.fold.to_string(),
            r.test_routes.to_string(),
            r.points_accuracy.to_string(),
            r.tiers.accuracy.to_string(),
            r.points_spearman.to_string(),
            r.points_pearson.to_string(),
        ]
    });
    out.write(
        "folds.csv",
        csv_string(
            &[
                "fold",
                "test_routes",
                "points_accuracy",
                "tier_accuracy",
                "points_spearman",
                "points_pearson",
            ],
            rows,
        )?,
    )?;
    out.write_json("summary.json", &summary)?;
    out.finish("finetune", config)
}

#[derive(Serialize)]
struct ScoreRow {
    route_id: String,
    molecule_id: String,
    predicted_ted: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_reaction_points: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rating: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tier: Option<Tier>,
}

pub fn score(
    config: &RunConfig,
    model: &Path,
    adapter: Option<&Path>,
    routes: &Path,
    priors: Option<&Path>,
) -> Result<()> {
    let mut out = OutDir::create(&config.paths.out)?;
    let (base, base_bytes) = load_model(&mut out, model)?;
    let tuned = match adapter {
        Some(p) => {
            let bytes = out.read_input(p)?;
            let text = std::str::from_utf8(&bytes).context("adapter file is not UTF-8")?;
            Some(
                FinetunedModel::from_json(text, &base_bytes)
                    .with_context(|| format!("loading {}", p.display()))?,
            )
        }
        None => None,
    };
    let families = load_families(&mut out, routes)?;
    let fz = featurizer(config, load_priors(&mut out, priors)?);
    let mut rows = Vec::new();
    for fam in &families {
        for idx in 0..fam.candidates.len() {
            let features = featurize(&fz, fam, idx)?;
            let (route_id, molecule_id) = (fam.route_id(idx), fam.molecule_id.clone());
            rows.push(match &tuned {
                Some(fm) => {
                    let p = fm
                        .predict(&features)
                        .with_context(|| format!("scoring {route_id}"))?;
                    ScoreRow {
                        route_id,
                        molecule_id,
                        predicted_ted: p.predicted_ted,
                        per_reaction_points: Some(p.per_reaction_points),
                        rating: Some(p.rating),
                        points: Some(p.points),
                        tier: Some(p.tier),
                    }
                }
                None => ScoreRow {
                    predicted_ted: base
                        .predict(&features)
                        .with_context(|| format!("scoring {route_id}"))?,
                    route_id,
                    molecule_id,
                    per_reaction_points: None,
                    rating: None,
                    points: None,
                    tier: None,
                },
            });
        }
    }
    let opt = |v: Option<String>| v.unwrap_or_default();
    let csv_rows = rows.iter().map(|r| {
        vec![
            r.route_id.clone(),
            r.molecule_id.clone(),
            r.predicted_ted.to_string(),
            opt(r.rating.map(|v| v.to_string())),
            opt(r.points.map(|v| v.to_string())),
            opt(r.tier.map(|v| v.to_string())),
        ]
    });
    out.write(
        "scores.csv",
        csv_string(
            &[
                "route_id",
                "molecule_id",
                "predicted_ted",
                "rating",
                "points",
                "tier",
            ],
            csv_rows,
        )?,
    )?;
    out.write_json("scores.json", &rows)?;
    out.finish("score", config)
}

pub fn rank(
    config: &RunConfig,
    model: &Path,
    routes: &Path,
    priors: Option<&Path>,
    k: Option<usize>,
) -> Result<()> {
    let mut out = OutDir::create(&config.paths.out)?;
    let (base, _) = load_model(&mut out, model)?;
    let families = load_families(&mut out, routes)?;
    let fz = featurizer(config, load_priors(&mut out, priors)?);
    let mut scored = Vec::with_capacity(families.len());
    for fam in &families {
        let scores = (0..fam.candidates.len())
            .map(|idx| Ok(base.predict(&featurize(&fz, fam, idx)?)?))
            .collect::<Result<Vec<f64>>>()?;
        scored.push(ScoredFamily {
            molecule_id: fam.molecule_id.clone(),
            candidate_ids: (0..fam.candidates.len()).map(|i| fam.route_id(i)).collect(),
            keys: fam.candidates.iter().map(RouteTree::key).collect(),
            scores,
            reference_index: Some(fam.reference_index),
        });
    }
    let report = topk_ranking(&scored, k.unwrap_or(config.eval.top_k))?;
    out.write("rank.csv", report.to_csv())?;
    out.write_json("rank.json", &report)?;
    out.finish("rank", config)
}

pub fn evaluate(
    config: &RunConfig,
    predictions: &Path,
    truth: &Path,
    kind: Kind,
    columns: (&str, &str),
) -> Result<()> {
    let mut out = OutDir::create(&config.paths.out)?;
    let pred = read_column(&mut out, predictions, columns.0)?;
    let truth_map = read_column(&mut out, truth, columns.1)?;
    if let Some(id) = pred.keys().find(|id| !truth_map.contains_key(*id)) {
        bail!("route {id} has a prediction but no truth");
    }
    if let Some(id) = truth_map.keys().find(|id| !pred.contains_key(*id)) {
        bail!("route {id} has a truth but no prediction");
    }
    ensure!(!pred.is_empty(), "no rows to evaluate");
    let p = pred
        .iter()
        .map(|(id, v)| parse_f64(v, id))
        .collect::<Result<Vec<_>>>()?;
    let t = truth_map
        .iter()
        .map(|(id, v)| parse_f64(v, id))
        .collect::<Result<Vec<_>>>()?;
    let mut metrics = BTreeMap::new();
    metrics.insert("n", pred.len() as f64);
    metrics.insert("pearson", pearson(&p, &t).unwrap_or(f64::NAN));
    metrics.insert("spearman", spearman(&p, &t).unwrap_or(f64::NAN));
    let kind_name = match kind {
        Kind::Regression => "regression",
        Kind::Points => "points",
    };
    let mut report = json!({ "kind": kind_name });
    match kind {
        Kind::Regression => {
            metrics.insert("mse", mse(&p, &t)?);
            metrics.insert("r_squared", r_squared(&p, &t)?);
        }
        Kind::Points => {
            let as_points = |v: &[f64], side: &str| {
                v.iter()
                    .map(|&x| {
                        ensure!(
                            x.fract() == 0.0 && (1.0..=5.0).contains(&x),
                            "{side} value {x} is not a point score 1-5"
                        );
                        Ok(x as u8)
                    })
                    .collect::<Result<Vec<u8>>>()
            };
            let (pp, tp) = (as_points(&p, "prediction")?, as_points(&t, "truth")?);
            metrics.insert("points_accuracy", accuracy(&pp, &tp)?);
            let tiers = |v: &[u8]| {
                v.iter()
                    .map(|&x| Tier::from_points(x))
                    .collect::<Result<Vec<_>, _>>()
            };
            let cls = classification_report(&tiers(&pp)?, &tiers(&tp)?)?;
            out.write("tiers.csv", cls.metrics_csv())?;
            out.write("confusion.csv", cls.confusion_csv())?;
            report["tiers"] = serde_json::to_value(&cls)?;
        }
    }
    let rows = metrics
        .iter()
        .map(|(k, v)| vec![k.to_string(), v.to_string()]);
    out.write("metrics.csv", csv_string(&["metric", "value"], rows)?)?;
    report["metrics"] = serde_json::to_value(&metrics)?;
    out.write_json("metrics.json", &report)?;
    out.finish("evaluate", config)
}
