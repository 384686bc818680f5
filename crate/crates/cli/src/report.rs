//! `report`: a markdown summary of artifacts that came from one manifest.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use lifepred::baseline::RidgeModel;
use lifepred::clustering::GroupAssignment;
use lifepred::eval::EvalReport;
use lifepred::hbm::HbmPosterior;
use serde_json::Value;

use crate::args::ReportArgs;
use crate::manifest::{common_hash, create_dir, Manifest};

const EXTENSIONS: [&str; 4] = ["json", "csv", "svg", "md"];

fn expand(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("cli: cannot list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().and_then(|e| e.to_str()).is_some_and(|e| EXTENSIONS.contains(&e)))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn section_eval(s: &mut String, report: &EvalReport) {
    let _ = writeln!(s, "## Cross-validation\n");
    let _ = writeln!(s, "{} folds × {} repeats, seed {}.\n", report.cv.folds, report.cv.repeats, report.seed);
    let _ = writeln!(s, "| model | trials | median RMSE (days) | mean RMSE (days) | median MAPE (%) | mean MAPE (%) |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for a in &report.aggregates {
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} | {:.3} | {:.2} | {:.2} |",
            a.model, a.trials, a.median_rmse, a.mean_rmse, a.median_mape, a.mean_mape
        );
    }
    if !report.improvement.is_empty() {
        let _ = writeln!(s, "\nImprovement over `{}` (%, positive is better):\n", report.cv.reference);
        let _ = writeln!(s, "| model | median RMSE | mean RMSE | median MAPE | mean MAPE |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for i in &report.improvement {
            let _ = writeln!(
                s,
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} |",
                i.model, i.median_rmse, i.mean_rmse, i.median_mape, i.mean_mape
            );
        }
    }
    let _ = writeln!(s, "\nVariance partition coefficient: {:.3}\n", report.vpc);
}

fn section_posterior(s: &mut String, post: &HbmPosterior) {
    let d = &post.diagnostics;
    let _ = writeln!(s, "## Posterior\n");
    let _ = writeln!(
        s,
        "{} chains × {} draws over {} groups. Max R-hat {:.4}, min ESS {:.0}, acceptance {}.\n",
        post.n_chains,
        post.draws_per_chain,
        post.groups.len(),
        d.max_rhat(),
        d.min_ess(),
        d.acceptance.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join("/")
    );
}

fn section_clusters(s: &mut String, a: &GroupAssignment) {
    let _ = writeln!(s, "## Clusters\n");
    let _ = writeln!(s, "| group | centroid (C) | cells |");
    let _ = writeln!(s, "|---|---|---|");
    for (j, (c, n)) in a.centroids.iter().zip(&a.sizes).enumerate() {
        let _ = writeln!(s, "| {j} | {c:.4} | {n} |");
    }
    let _ = writeln!(s);
}

fn section_ridge(s: &mut String, m: &RidgeModel) {
    let names: Vec<String> = m.features.iter().map(|f| format!("{f:?}").to_lowercase()).collect();
    let _ = writeln!(s, "## Ridge baseline\n");
    let _ = writeln!(s, "Features {}, λ = {}, intercept {:.4}.\n", names.join(", "), m.lambda, m.intercept);
}

fn field<T: serde::de::DeserializeOwned>(value: &Value, key: &str, file: &std::path::Path) -> Result<Option<T>> {
    value
        .get(key)
        .map(|v| serde_json::from_value(v.clone()).with_context(|| format!("report: malformed {key} in {}", file.display())))
        .transpose()
}

pub fn run(a: &ReportArgs) -> Result<()> {
    let files = expand(&a.input)?;
    let hash = common_hash(&files)?;
    let mut body = String::new();
    let mut header = String::new();
    for file in files.iter().filter(|f| f.extension().is_some_and(|e| e == "json")) {
        let text = std::fs::read_to_string(file).with_context(|| format!("cli: cannot read {}", file.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("report: {} is not JSON", file.display()))?;
        if let Some(m) = field::<Manifest>(&value, "manifest", file)? {
            let seed = m.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
            let _ = writeln!(header, "Command `{}`, seed {seed}, {} {}.\n", m.command, m.tool, m.version);
        }
        if let Some(r) = field::<EvalReport>(&value, "report", file)? {
            section_eval(&mut body, &r);
        }
        if let Some(p) = field::<HbmPosterior>(&value, "posterior", file)? {
            section_posterior(&mut body, &p);
        }
        if let Some(c) = field::<GroupAssignment>(&value, "assignment", file)? {
            section_clusters(&mut body, &c);
        }
        if let Some(m) = field::<RidgeModel>(&value, "model", file)? {
            section_ridge(&mut body, &m);
        }
    }
    let mut out = format!("<!-- manifest_hash={hash} -->\n# lifepred report\n\nManifest `{hash}`.\n\n");
    out.push_str(&header);
    out.push_str(&body);
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("summary.md");
            std::fs::write(&path, out).with_context(|| format!("cli: cannot write {}", path.display()))?;
        }
        None => print!("{out}"),
    }
    Ok(())
}
