use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rarecast_core::analysis::{
    histogram_triptych, kde, kendall_paired, rescale_all, tsfar_compare, write_densities_csv,
    DensityEstimate, RescaleParams, DEFAULT_KDE_GRID,
};
use rarecast_core::data::{write_csv_to, APPENDIX_VARIABLES};
use rarecast_core::metrics::{
    best_operating_point, confusion, opt_cell, roc, sweep, MetricsError, ThresholdSweep,
};
use rarecast_core::scalar::format_sig17;
use rarecast_core::{
    class_counts, fit_forest, fit_irls, load_csv, rebalance, stepwise_select, synth_generate,
    ClassSummary, Dataset, ForestConfig, ForestModel, ModelDocument, RebalanceSpec, StepMove,
    SynthSpec,
};

use crate::chart::{LineChart, Series, PALETTE};
use crate::output::{prob_path, read_labels, read_probs, require_file, write_probs, Artifacts};
use crate::{
    Cli, Command, CompareArgs, EvaluateArgs, FitForestArgs, FitLogisticArgs, RebalanceArgs, Schema,
    SynthArgs, UsageError,
};

const DEFAULT_COEFFICIENTS: [f64; 5] = [1.5, -1.2, 1.0, -0.8, 0.6];

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Rebalance(a) => cmd_rebalance(a),
        Command::FitLogistic(a) => cmd_fit_logistic(a),
        Command::FitForest(a) => cmd_fit_forest(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn load(path: &Path) -> Result<Dataset<f64>> {
    load_csv(path).with_context(|| format!("cannot load {}", path.display()))
}

fn summary_line(label: &str, s: &ClassSummary) -> String {
    format!(
        "{label}: {} positives, {} negatives, prevalence {:.4}",
        s.n_pos, s.n_neg, s.prevalence
    )
}

fn report_dir(report: Option<&Path>, model_out: &Path) -> PathBuf {
    report.map(Path::to_path_buf).unwrap_or_else(|| {
        model_out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

fn dataset_bytes(data: &Dataset<f64>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv_to(data, &mut buf)?;
    Ok(buf)
}

fn cmd_rebalance(a: RebalanceArgs) -> Result<()> {
    require_file(&a.input)?;
    let data = load(&a.input)?;
    let spec = RebalanceSpec::new(a.ratio, a.seed)?;
    let sampled = rebalance(&data, &spec)?;

    let mut out = Artifacts::new();
    out.add(&a.output, dataset_bytes(&sampled)?);
    out.commit()?;
    println!("{}", summary_line("before", &class_counts(&data)));
    println!("{}", summary_line("after", &class_counts(&sampled)));
    Ok(())
}

fn describe(mv: &StepMove) -> String {
    match mv {
        StepMove::Start => "start".into(),
        StepMove::Drop(f) => format!("- {f}"),
        StepMove::Add(f) => format!("+ {f}"),
    }
}

fn cmd_fit_logistic(a: FitLogisticArgs) -> Result<()> {
    require_file(&a.train)?;
    for path in &a.score {
        require_file(path)?;
    }
    let train = load(&a.train)?;
    let (model, report) = if a.stepwise {
        let (model, report, trace) = stepwise_select(&train)?;
        println!("step  move                      AIC  features");
        for rec in &trace {
            println!(
                "{:>4}  {:<20} {:>12.4}  {}",
                rec.step,
                describe(&rec.chosen),
                rec.aic,
                rec.features.len()
            );
            for (mv, why) in &rec.skipped {
                eprintln!(
                    "warning: step {}: skipped {}: {why}",
                    rec.step,
                    describe(mv)
                );
            }
        }
        (model, report)
    } else {
        let (model, report) = fit_irls(&train, train.column_names())?;
        println!("AIC {:.4} with {} features", report.aic, train.n_features());
        (model, report)
    };
    if !report.converged {
        eprintln!(
            "warning: IRLS stopped after {} iterations without converging",
            report.n_iterations
        );
    }
    if report.separation_detected {
        eprintln!("warning: quasi-complete separation; coefficients are unreliable");
    }

    let mut out = Artifacts::new();
    let mut doc = ModelDocument::new(&model, &report).to_json();
    doc.push('\n');
    out.add(&a.out, doc);
    let dir = report_dir(a.report.as_deref(), &a.out);
    for path in &a.score {
        let data = load(path)?;
        let probs = model
            .predict_proba(&data)
            .with_context(|| format!("cannot score {}", path.display()))?;
        let probs: Vec<Option<f64>> = probs.into_iter().map(Some).collect();
        out.add(prob_path(&dir, None, path), write_probs(&probs));
    }
    let placed = out.commit()?;
    println!(
        "selected {} of {} features; wrote {} files",
        model.coefficients.len(),
        train.n_features(),
        placed.len()
    );
    Ok(())
}

fn cmd_fit_forest(a: FitForestArgs) -> Result<()> {
    require_file(&a.train)?;
    for path in &a.score {
        require_file(path)?;
    }
    let train = load(&a.train)?;
    let config = ForestConfig {
        n_trees: a.trees,
        mtry: a.mtry,
        master_seed: a.seed,
        ..ForestConfig::default()
    };
    let model = fit_forest(&train, &config)?;
    let curve = model.oob_error_curve(&train)?;

    let dir = report_dir(a.report.as_deref(), &a.out);
    let mut out = Artifacts::new();
    out.add(&a.out, model.to_json() + "\n");

    let mut csv = String::from("n_trees,oob_error\n");
    for &(t, e) in &curve {
        csv.push_str(&format!("{t},{}\n", format_sig17(e)));
    }
    out.add(dir.join("oob_curve.csv"), csv);
    let points: Vec<(f64, f64)> = curve.iter().map(|&(t, e)| (t as f64, e)).collect();
    let svg = LineChart::new("Out-of-bag error", "number of trees", "OOB error")
        .x_range(0.0, a.trees as f64)
        .series(Series::new("OOB error", PALETTE[0], points))
        .render();
    out.add(dir.join("oob_curve.svg"), svg);

    if !a.score.is_empty() {
        for path in &a.score {
            let data = load(path)?;
            let probs = model
                .predict_proba_dataset(&data)
                .with_context(|| format!("cannot score {}", path.display()))?;
            let probs: Vec<Option<f64>> = probs.into_iter().map(Some).collect();
            out.add(prob_path(&dir, None, path), write_probs(&probs));
        }
        let oob = model.oob_proba(&train)?;
        out.add(prob_path(&dir, Some("oob"), &a.train), write_probs(&oob));
    }
    let placed = out.commit()?;
    if let Some(&(t, e)) = curve.last() {
        println!("OOB error after {t} trees: {e:.4}");
    }
    println!("wrote {} files", placed.len());
    Ok(())
}

enum Loaded {
    Logistic(ModelDocument),
    Forest(Box<ForestModel<f64>>),
}

fn load_model(path: &Path) -> Result<Loaded> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if let Ok(forest) = ForestModel::from_json(&text) {
        return Ok(Loaded::Forest(Box::new(forest)));
    }
    ModelDocument::from_json(&text)
        .map(Loaded::Logistic)
        .with_context(|| {
            format!(
                "{} is neither a logistic nor a forest model",
                path.display()
            )
        })
}

/// Drops rows without a probability, warning when any are dropped.
fn complete_rows(
    probs: Vec<Option<f64>>,
    labels: &[u8],
    what: &str,
) -> Result<(Vec<f64>, Vec<u8>)> {
    if probs.len() != labels.len() {
        bail!(
            "{what}: {} probabilities but {} labels",
            probs.len(),
            labels.len()
        );
    }
    let (p, y): (Vec<f64>, Vec<u8>) = probs
        .into_iter()
        .zip(labels)
        .filter_map(|(p, &y)| p.map(|p| (p, y)))
        .unzip();
    let dropped = labels.len() - p.len();
    if p.is_empty() {
        bail!("{what}: no row has a probability");
    }
    if dropped > 0 {
        eprintln!("warning: {what}: {dropped} rows without a probability were left out");
    }
    Ok((p, y))
}

fn class_density(probs: &[f64], labels: &[u8], class: u8) -> Option<DensityEstimate<f64>> {
    let values: Vec<f64> = probs
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == class)
        .map(|(&p, _)| p)
        .collect();
    match kde(&values, DEFAULT_KDE_GRID) {
        Ok(d) => Some(d),
        Err(e) => {
            eprintln!("warning: no density for class {class}: {e}");
            None
        }
    }
}

fn sweep_series(
    s: &ThresholdSweep<f64>,
    pick: fn(&rarecast_core::SweepPoint<f64>) -> Option<(f64, f64)>,
) -> Vec<(f64, f64)> {
    s.points.iter().filter_map(pick).collect()
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (probs, labels) = match (&a.probs, &a.model, &a.data) {
        (Some(probs), _, _) => {
            let labels_path = a
                .labels
                .as_ref()
                .expect("clap requires --labels with --probs");
            require_file(probs)?;
            require_file(labels_path)?;
            (read_probs(probs)?, read_labels(labels_path)?)
        }
        (None, Some(model), Some(data)) => {
            require_file(model)?;
            require_file(data)?;
            if let Some(l) = &a.labels {
                require_file(l)?;
            }
            let dataset = load(data)?;
            let probs = match load_model(model)? {
                Loaded::Logistic(doc) => doc.model::<f64>().predict_proba(&dataset)?,
                Loaded::Forest(forest) => forest.predict_proba_dataset(&dataset)?,
            };
            let labels = match &a.labels {
                Some(l) => read_labels(l)?,
                None => dataset.labels().to_vec(),
            };
            (probs.into_iter().map(Some).collect(), labels)
        }
        _ => {
            return Err(
                UsageError("give --probs with --labels, or --model with --data".into()).into(),
            )
        }
    };
    let (probs, labels) = complete_rows(probs, &labels, "evaluate")?;

    let cm = confusion(&probs, &labels, a.threshold)?;
    let sw = sweep(&probs, &labels, a.n_points)?;
    let curve = match roc(&probs, &labels) {
        Ok(c) => Some(c),
        Err(MetricsError::DegenerateLabels) => {
            eprintln!("warning: only one class present; ROC and AUC omitted");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let pos_density = class_density(&probs, &labels, 1);
    let neg_density = class_density(&probs, &labels, 0);
    let hist = histogram_triptych(&probs, &labels)?;
    let best = best_operating_point(&sw, a.max_far);
    let marked = sw.nearest(a.threshold).expect("sweep has points").clone();

    let dir = &a.report;
    let mut out = Artifacts::new();
    let auc_cell = curve
        .as_ref()
        .map(|c| format_sig17(c.auc))
        .unwrap_or_default();
    out.add(
        dir.join("confusion.csv"),
        format!(
            "threshold,hits,false_alarms,misses,correct_rejections,far,ts,sensitivity,specificity,auc\n{},{},{},{},{},{},{},{},{},{}\n",
            format_sig17(a.threshold),
            cm.hits,
            cm.false_alarms,
            cm.misses,
            cm.correct_rejections,
            opt_cell(cm.far()),
            opt_cell(cm.ts()),
            opt_cell(cm.sensitivity()),
            opt_cell(cm.specificity()),
            auc_cell
        ),
    );
    out.add_with(dir.join("sweep.csv"), |w| sw.write_csv(w))?;
    if let Some(c) = &curve {
        out.add_with(dir.join("roc.csv"), |w| c.write_csv(w))?;
    }
    out.add_with(dir.join("densities.csv"), |w| {
        write_densities_csv(w, pos_density.as_ref(), neg_density.as_ref())
    })?;
    out.add_with(dir.join("histograms.csv"), |w| hist.write_csv(w))?;

    let mut density = LineChart::new(
        "Density of predicted probabilities",
        "probability",
        "density",
    );
    for (est, name, color) in [
        (&pos_density, "class 1", PALETTE[1]),
        (&neg_density, "class 0", PALETTE[0]),
    ] {
        if let Some(d) = est {
            let pts = d
                .grid
                .iter()
                .copied()
                .zip(d.values.iter().copied())
                .collect();
            density = density.series(Series::new(name, color, pts));
        }
    }
    out.add(dir.join("density.svg"), density.render());

    let mut far_ts = LineChart::new("FAR and TS versus threshold", "threshold", "score")
        .x_range(0.0, 1.0)
        .y_range(0.0, 1.0)
        .series(Series::new(
            "FAR",
            PALETTE[1],
            sweep_series(&sw, |p| p.far.map(|f| (p.threshold, f))),
        ))
        .series(Series::new(
            "TS",
            PALETTE[0],
            sweep_series(&sw, |p| p.ts.map(|t| (p.threshold, t))),
        ));
    if let Some(ts) = marked.ts {
        far_ts = far_ts.marker(
            format!("TS at {}", a.threshold),
            PALETTE[0],
            (marked.threshold, ts),
        );
    }
    if let Some(far) = marked.far {
        far_ts = far_ts.marker(
            format!("FAR at {}", a.threshold),
            PALETTE[1],
            (marked.threshold, far),
        );
    }
    out.add(dir.join("far_ts.svg"), far_ts.render());

    let mut ts_far = LineChart::new("TS versus FAR", "FAR", "TS")
        .x_range(0.0, 1.0)
        .y_range(0.0, 1.0)
        .series(Series::new(
            "sweep",
            PALETTE[0],
            sweep_series(&sw, |p| p.far.zip(p.ts)),
        ));
    if let (Some(f), Some(t)) = (marked.far, marked.ts) {
        ts_far = ts_far.marker(format!("threshold {}", a.threshold), PALETTE[1], (f, t));
    }
    out.add(dir.join("ts_far.svg"), ts_far.render());

    if let Some(c) = &curve {
        let svg = LineChart::new(
            &format!("ROC (AUC {:.4})", c.auc),
            "1 - specificity",
            "sensitivity",
        )
        .x_range(0.0, 1.0)
        .y_range(0.0, 1.0)
        .series(Series::new("ROC", PALETTE[0], c.points.clone()))
        .series(Series::new("chance", "#7f7f7f", vec![(0.0, 0.0), (1.0, 1.0)]).dashed())
        .render();
        out.add(dir.join("roc.svg"), svg);
    }
    out.commit()?;

    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    println!(
        "n = {}, positives = {n_pos}, prevalence = {:.4}",
        labels.len(),
        n_pos as f64 / labels.len() as f64
    );
    if let Some(c) = &curve {
        println!("AUC = {:.6}", c.auc);
    }
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    println!(
        "threshold {}: hits {}, false alarms {}, misses {}, correct rejections {}; FAR {}, TS {}, Se {}, Sp {}",
        a.threshold,
        cm.hits,
        cm.false_alarms,
        cm.misses,
        cm.correct_rejections,
        show(cm.far()),
        show(cm.ts()),
        show(cm.sensitivity()),
        show(cm.specificity())
    );
    match best {
        Some(b) => println!(
            "best TS with FAR <= {}: TS {} at threshold {} (FAR {})",
            a.max_far,
            show(b.ts),
            format_sig17(b.threshold),
            show(b.far)
        ),
        None => println!("no threshold reaches FAR <= {}", a.max_far),
    }
    Ok(())
}

fn load_scored(
    probs: &Path,
    labels: &Path,
    rescale: bool,
    what: &str,
) -> Result<(Vec<Option<f64>>, Vec<u8>, bool)> {
    require_file(probs)?;
    require_file(labels)?;
    let mut p = read_probs(probs)?;
    let y = read_labels(labels)?;
    if p.len() != y.len() {
        bail!("{what}: {} probabilities but {} labels", p.len(), y.len());
    }
    if rescale {
        let params = RescaleParams::default();
        let present: Vec<f64> = p.iter().flatten().copied().collect();
        let mut mapped = rescale_all(&present, &params)?.into_iter();
        for v in p.iter_mut().flatten() {
            *v = mapped.next().expect("one rescaled value per probability");
        }
    }
    let complete = p.iter().all(Option::is_some);
    Ok((p, y, complete))
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let (pa, ya, full_a) = load_scored(&a.probs_a, &a.labels_a, a.rescale_a, &a.name_a)?;
    let (pb, yb, full_b) = load_scored(&a.probs_b, &a.labels_b, a.rescale_b, &a.name_b)?;
    let paired = (full_a && full_b && pa.len() == pb.len()).then(|| {
        let a: Vec<f64> = pa.iter().flatten().copied().collect();
        let b: Vec<f64> = pb.iter().flatten().copied().collect();
        (a, b)
    });
    let (pa, ya) = complete_rows(pa, &ya, &a.name_a)?;
    let (pb, yb) = complete_rows(pb, &yb, &a.name_b)?;
    let sa = sweep(&pa, &ya, a.n_points)?;
    let sb = sweep(&pb, &yb, a.n_points)?;
    let cmp = tsfar_compare(&sa, &sb, a.threshold)?;
    for w in &cmp.warnings {
        eprintln!("warning: {w}");
    }

    let curve = |far: fn(&rarecast_core::analysis::CompareRow<f64>) -> Option<(f64, f64)>| {
        cmp.rows.iter().filter_map(far).collect::<Vec<_>>()
    };
    let mut chart = LineChart::new("TS versus FAR", "FAR", "TS")
        .x_range(0.0, 1.0)
        .y_range(0.0, 1.0)
        .series(Series::new(
            a.name_a.clone(),
            PALETTE[0],
            curve(|r| r.far_a.zip(r.ts_a)),
        ))
        .series(Series::new(a.name_b.clone(), PALETTE[1], curve(|r| r.far_b.zip(r.ts_b))).dashed());
    for (m, name, color) in [
        (&cmp.marked_a, &a.name_a, PALETTE[0]),
        (&cmp.marked_b, &a.name_b, PALETTE[1]),
    ] {
        if let (Some(f), Some(t)) = (m.far, m.ts) {
            chart = chart.marker(format!("{name} at {}", a.threshold), color, (f, t));
        }
    }

    let mut out = Artifacts::new();
    out.add_with(a.report.join("compare.csv"), |w| cmp.write_csv(w))?;
    out.add(a.report.join("compare.svg"), chart.render());
    out.commit()?;

    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    for (m, name) in [(&cmp.marked_a, &a.name_a), (&cmp.marked_b, &a.name_b)] {
        println!(
            "{name}: threshold {} gives FAR {}, TS {}",
            format_sig17(m.threshold),
            show(m.far),
            show(m.ts)
        );
    }
    match paired {
        Some((a_vals, b_vals)) => match kendall_paired(&a_vals, &b_vals) {
            Ok(k) => println!(
                "Kendall tau-b = {:.6}, p-value = {:.3e} (n = {})",
                k.tau, k.p_value, k.n
            ),
            Err(e) => eprintln!("warning: Kendall test not computed: {e}"),
        },
        None => eprintln!("note: probabilities are not row-paired; Kendall test skipped"),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let p = match (a.schema, a.p) {
        (Schema::Appendix41, None) => APPENDIX_VARIABLES.len(),
        (Schema::Appendix41, Some(p)) if p != APPENDIX_VARIABLES.len() => {
            return Err(UsageError(format!("--schema appendix41 needs --p 41, got {p}")).into())
        }
        (_, Some(p)) => p,
        (Schema::Plain, None) => {
            return Err(UsageError("--p is required without a schema".into()).into())
        }
    };
    let mut coefficients = match a.coefficients {
        Some(c) if c.len() > p => {
            return Err(UsageError(format!("{} coefficients given for p = {p}", c.len())).into())
        }
        Some(c) => c,
        None => DEFAULT_COEFFICIENTS.to_vec(),
    };
    coefficients.truncate(p);
    coefficients.resize(p, 0.0);

    let spec = SynthSpec {
        n: a.n,
        p,
        true_coefficients: coefficients,
        target_prevalence: a.prevalence,
        mislabel_rate: a.mislabel,
        seed: a.seed,
    };
    let mut data: Dataset<f64> = synth_generate(&spec)?;
    if a.schema == Schema::Appendix41 {
        data =
            data.with_column_names(APPENDIX_VARIABLES.iter().map(|s| s.to_string()).collect())?;
    }
    let mut out = Artifacts::new();
    out.add(&a.output, dataset_bytes(&data)?);
    out.commit()?;
    println!("{}", summary_line("generated", &class_counts(&data)));
    Ok(())
}
