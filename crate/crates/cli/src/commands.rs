use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lifepred::baseline::{self, RidgeFeature, RidgeModel};
use lifepred::clustering::{assign_group, constrained_kmeans, GroupAssignment};
use lifepred::dataset::{generate_synthetic, load_cycle_data, load_feature_table, write_feature_table, FeatureRow, FeatureTable};
use lifepred::eval::{emit_plot_data, run_cv, write_trials_csv, EvalReport, ModelKind, ModelSpec};
use lifepred::features::{extract_features, FeatureVector};
use lifepred::hbm::{self, GroupTarget, HbmPosterior};
use lifepred::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{BaselineArgs, ClusterCmd, EvaluateArgs, ExtractArgs, FitArgs, PredictArgs, SynthArgs};
use crate::config::{set, PipelineConfig};
use crate::manifest::{create_dir, preamble, write_json, Manifest};

/// Converts a library error so its message names the stage that failed.
fn stage<T, E: Into<lifepred::Error>>(r: Result<T, E>) -> Result<T> {
    r.map_err(|e| anyhow::Error::new(e.into()))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("cli: cannot write {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cli: cannot write {}", path.display()))
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn load_table(path: &Path, cfg: &PipelineConfig) -> Result<FeatureTable> {
    stage(load_feature_table(path, cfg.label_transform))
}

/// Labeled rows only; unlabeled cells are reported and dropped.
fn labeled(table: FeatureTable) -> Result<FeatureTable> {
    let idx: Vec<usize> = table.rows().iter().enumerate().filter(|(_, r)| r.label.is_some()).map(|(i, _)| i).collect();
    if idx.is_empty() {
        bail!("dataset: no labeled cells to fit");
    }
    if idx.len() < table.len() {
        log::warn!("ignoring {} unlabeled cells", table.len() - idx.len());
        return Ok(table.subset(&idx));
    }
    Ok(table)
}

fn g_values(table: &FeatureTable) -> BTreeMap<String, f64> {
    table.rows().iter().map(|r| (r.cell_id.clone(), r.g)).collect()
}

pub fn synth(mut cfg: PipelineConfig, a: &SynthArgs) -> Result<()> {
    set(&mut cfg.synth.n_groups, a.groups);
    set(&mut cfg.synth.cells_per_group, a.cells);
    let (table, truth) = stage(generate_synthetic(&cfg.synth, a.seed))?;

    create_dir(&a.out)?;
    let hash = Manifest::new("synth", Some(a.seed), json!({ "synth": cfg.synth })).write(&a.out)?;
    let path = a.out.join("features.csv");
    write_feature_table(create(&path)?, &table, &preamble(&hash)).with_context(|| format!("cli: cannot write {}", path.display()))?;
    write_json(&a.out.join("truth.json"), &json!({ "manifest_hash": hash, "truth": truth }))?;
    println!("wrote {} cells in {} groups to {}", table.len(), cfg.synth.n_groups, a.out.display());
    Ok(())
}

pub fn extract(mut cfg: PipelineConfig, a: &ExtractArgs) -> Result<()> {
    let f = &mut cfg.features;
    set(&mut f.grid.vmin, a.vmin);
    set(&mut f.grid.vmax, a.vmax);
    set(&mut f.grid.points, a.grid_points);
    set(&mut f.log_clamp, a.log_clamp);
    let cells = stage(load_cycle_data(&a.data))?;

    let kept: Vec<_> = cells
        .iter()
        .filter(|c| {
            let missing = c.missing_feature_cycles();
            if a.skip_incomplete && !missing.is_empty() {
                log::warn!("skipping {}: missing cycles {missing:?}", c.cell_id);
                return false;
            }
            true
        })
        .collect();
    let features: Vec<FeatureVector> = stage(
        kept.par_iter().map(|c| extract_features(c, &cfg.features.grid, cfg.features.log_clamp)).collect::<Result<_, _>>(),
    )?;
    let rows = kept
        .iter()
        .zip(features)
        .map(|(c, x)| FeatureRow { cell_id: c.cell_id.clone(), g: x.g, f1: x.f1, f2: x.f2, f3: x.f3, label: c.eol_days })
        .collect();
    let table = stage(FeatureTable::new(rows, cfg.label_transform))?;

    create_dir(&a.out)?;
    let mut manifest = Manifest::new("extract", None, json!({ "features": cfg.features, "skip_incomplete": a.skip_incomplete }));
    manifest.input_dir("cycle_data", &a.data)?;
    let hash = manifest.write(&a.out)?;
    let path = a.out.join("features.csv");
    write_feature_table(create(&path)?, &table, &preamble(&hash)).with_context(|| format!("cli: cannot write {}", path.display()))?;
    println!("extracted features for {} of {} cells", table.len(), cells.len());
    Ok(())
}

fn assignment_csv(assignment: &GroupAssignment, hash: &str) -> String {
    let mut s = format!("# manifest_hash={hash}\ncell_id,group\n");
    for (id, g) in &assignment.membership {
        let _ = writeln!(s, "{id},{g}");
    }
    s
}

pub fn cluster(mut cfg: PipelineConfig, a: &ClusterCmd) -> Result<()> {
    cfg.apply_cluster(a.k, &a.cluster);
    let table = load_table(&a.input, &cfg)?;
    let assignment = stage(constrained_kmeans(&g_values(&table), &cfg.clustering, a.seed))?;

    create_dir(&a.out)?;
    let mut manifest = Manifest::new("cluster", Some(a.seed), json!({ "clustering": cfg.clustering }));
    manifest.input_file("features", &a.input)?;
    let hash = manifest.write(&a.out)?;
    write_text(&a.out.join("assignment.csv"), &assignment_csv(&assignment, &hash))?;
    write_json(&a.out.join("centroids.json"), &json!({ "manifest_hash": hash, "assignment": assignment }))?;
    println!("{} clusters, sizes {:?}, objective {}", assignment.k, assignment.sizes, num(assignment.objective));
    Ok(())
}

/// What `fit` writes and `predict` reads back.
#[derive(Serialize, Deserialize)]
pub struct PosteriorBundle {
    pub manifest_hash: String,
    pub assignment: GroupAssignment,
    pub posterior: HbmPosterior,
}

pub fn fit(mut cfg: PipelineConfig, a: &FitArgs) -> Result<()> {
    cfg.apply_cluster(a.k, &a.cluster);
    cfg.apply_hbm(&a.hbm, a.label_transform);
    let table = labeled(load_table(&a.input, &cfg)?)?;
    let assignment = stage(constrained_kmeans(&g_values(&table), &cfg.clustering, derive_seed(a.seed, &[1])))?;
    log::info!("clusters: sizes {:?}", assignment.sizes);
    let posterior = stage(hbm::fit_table(&table, &assignment, &cfg.hbm.model, &cfg.hbm.mcmc, derive_seed(a.seed, &[2])))?;
    let diag = &posterior.diagnostics;
    if diag.max_rhat() > 1.05 {
        log::warn!("max R-hat {:.3} exceeds 1.05; consider more warmup or samples", diag.max_rhat());
    }

    create_dir(&a.out)?;
    let config = json!({ "clustering": cfg.clustering, "hbm": cfg.hbm, "label_transform": cfg.label_transform });
    let mut manifest = Manifest::new("fit", Some(a.seed), config);
    manifest.input_file("features", &a.input)?;
    let hash = manifest.write(&a.out)?;
    let mut csv = format!("# manifest_hash={hash}\nparameter,rhat,ess\n");
    for ((name, r), e) in diag.parameter_names.iter().zip(&diag.rhat).zip(&diag.ess) {
        let _ = writeln!(csv, "{name},{},{}", num(*r), num(*e));
    }
    write_text(&a.out.join("diagnostics.csv"), &csv)?;
    let bundle = PosteriorBundle { manifest_hash: hash, assignment, posterior };
    write_json(&a.out.join("posterior.json"), &bundle)?;
    let d = &bundle.posterior.diagnostics;
    println!(
        "{} draws over {} groups; max R-hat {:.4}, min ESS {:.0}",
        bundle.posterior.n_samples(),
        bundle.posterior.groups.len(),
        d.max_rhat(),
        d.min_ess()
    );
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<PosteriorBundle> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cli: cannot read {}", path.display()))?;
    let mut bundle: PosteriorBundle =
        serde_json::from_str(&text).with_context(|| format!("hbm: {} is not a posterior bundle", path.display()))?;
    stage(bundle.posterior.rebuild_conditionals())?;
    Ok(bundle)
}

pub fn predict(mut cfg: PipelineConfig, a: &PredictArgs) -> Result<()> {
    set(&mut cfg.predict.level, a.level);
    let level = cfg.predict.level;
    if !(level > 0.0 && level < 1.0) {
        bail!("cli: --level {level} must lie strictly between 0 and 1");
    }
    let bundle = load_bundle(&a.posterior)?;
    let post = &bundle.posterior;
    let table = stage(load_feature_table(&a.input, post.label_transform))?;

    let lines: Vec<String> = stage(
        table
            .rows()
            .par_iter()
            .map(|r| {
                let x = FeatureVector { g: r.g, f1: r.f1, f2: r.f2, f3: r.f3 };
                let (target, group) = if a.new_groups {
                    (GroupTarget::New { g: r.g }, String::new())
                } else {
                    let j = assign_group(r.g, &bundle.assignment);
                    (GroupTarget::Fitted(j), j.to_string())
                };
                let d = hbm::predict(&x, target, post)?;
                let (lo, hi) = d.interval_days(level);
                Ok::<_, lifepred::HbmError>(format!(
                    "{},{group},{},{},{},{},{},{}",
                    r.cell_id,
                    num(d.mean),
                    num(d.sd()),
                    num(d.point_estimate_days),
                    num(lo),
                    num(hi),
                    r.label.map(num).unwrap_or_default()
                ))
            })
            .collect::<Result<_, _>>(),
    )?;

    create_dir(&a.out)?;
    let mut manifest = Manifest::new("predict", None, json!({ "predict": cfg.predict, "new_groups": a.new_groups }));
    manifest.input_file("posterior", &a.posterior)?;
    manifest.input_file("features", &a.input)?;
    let hash = manifest.write(&a.out)?;
    let mut csv = format!("# manifest_hash={hash}\ncell_id,group,mean,sd,point_estimate_days,lower_days,upper_days,label_days\n");
    for l in &lines {
        csv.push_str(l);
        csv.push('\n');
    }
    write_text(&a.out.join("predictions.csv"), &csv)?;
    println!("predicted {} cells", lines.len());
    Ok(())
}

pub fn baseline(mut cfg: PipelineConfig, a: &BaselineArgs) -> Result<()> {
    let b = &mut cfg.baseline;
    set(&mut b.features, a.features.clone());
    set(&mut b.lambda_grid, a.lambda_grid.clone());
    set(&mut b.inner_folds, a.inner_folds);
    cfg.apply_transform(a.label_transform);
    let table = labeled(load_table(&a.input, &cfg)?)?;
    let b = &cfg.baseline;
    let model: RidgeModel =
        stage(baseline::fit_table(&table, &b.features, &b.lambda_grid, b.inner_folds, cfg.label_transform, a.seed))?;

    create_dir(&a.out)?;
    let mut manifest =
        Manifest::new("baseline", Some(a.seed), json!({ "baseline": cfg.baseline, "label_transform": cfg.label_transform }));
    manifest.input_file("features", &a.input)?;
    let hash = manifest.write(&a.out)?;
    write_json(&a.out.join("ridge.json"), &json!({ "manifest_hash": hash, "model": model }))?;
    println!("selected lambda {}", num(model.lambda));
    Ok(())
}

fn model_spec(name: &str, cfg: &PipelineConfig) -> Result<ModelSpec> {
    let ridge = |features: &[RidgeFeature]| ModelSpec {
        name: name.to_string(),
        kind: ModelKind::Ridge {
            features: features.to_vec(),
            lambda_grid: cfg.baseline.lambda_grid.clone(),
            inner_folds: cfg.baseline.inner_folds,
        },
    };
    Ok(match name {
        "hbm" => ModelSpec::hbm(cfg.hbm.model.clone(), cfg.hbm.mcmc),
        "ridge3" => ridge(&RidgeFeature::THREE),
        "ridge4" => ridge(&RidgeFeature::FOUR),
        "mean" => ModelSpec::training_mean(),
        other => bail!("cli: unknown model {other:?}; expected hbm, ridge3, ridge4 or mean"),
    })
}

fn summary_table(report: &EvalReport) -> String {
    let mut s = String::from("model       trials  median RMSE (d)  median MAPE (%)\n");
    for a in &report.aggregates {
        let _ = writeln!(s, "{:<10}  {:>6}  {:>15.3}  {:>15.2}", a.model, a.trials, a.median_rmse, a.median_mape);
    }
    let _ = write!(s, "VPC {:.3}", report.vpc);
    s
}

pub fn evaluate(mut cfg: PipelineConfig, a: &EvaluateArgs) -> Result<()> {
    cfg.apply_cluster(a.clusters, &a.cluster);
    cfg.apply_hbm(&a.hbm, a.label_transform);
    set(&mut cfg.baseline.lambda_grid, a.lambda_grid.clone());
    set(&mut cfg.baseline.inner_folds, a.inner_folds);
    let e = &mut cfg.eval;
    set(&mut e.models, a.models.clone());
    set(&mut e.cv.folds, a.k);
    set(&mut e.cv.repeats, a.repeats);
    set(&mut e.cv.reference, a.reference.clone());
    let specs = cfg.eval.models.iter().map(|m| model_spec(m, &cfg)).collect::<Result<Vec<_>>>()?;
    if !cfg.eval.models.contains(&cfg.eval.cv.reference) {
        log::warn!("reference model {:?} is not evaluated; improvements will be empty", cfg.eval.cv.reference);
    }
    let table = labeled(load_table(&a.input, &cfg)?)?;
    let report = stage(run_cv(&table, &specs, &cfg.eval.cv, &cfg.clustering, a.seed))?;

    create_dir(&a.out)?;
    let config = json!({
        "clustering": cfg.clustering,
        "hbm": cfg.hbm,
        "baseline": { "lambda_grid": cfg.baseline.lambda_grid, "inner_folds": cfg.baseline.inner_folds },
        "eval": cfg.eval,
        "label_transform": cfg.label_transform,
    });
    let mut manifest = Manifest::new("evaluate", Some(a.seed), config);
    manifest.input_file("features", &a.input)?;
    let hash = manifest.write(&a.out)?;
    let pre = preamble(&hash);
    let path = a.out.join("trials.csv");
    write_trials_csv(create(&path)?, &report, &pre).with_context(|| format!("cli: cannot write {}", path.display()))?;
    stage(emit_plot_data(&report, &a.out, &pre))?;
    write_json(&a.out.join("report.json"), &json!({ "manifest_hash": hash, "report": report }))?;
    println!("{}", summary_table(&report));
    Ok(())
}
