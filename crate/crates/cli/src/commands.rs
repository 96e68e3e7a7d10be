use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use log::{info, warn};
use rayon::prelude::*;
use regid::clustering::{RegimeSegmentation, SegmentationReport};
use regid::defaults::default_paper_spec;
use regid::eval::{score_segmentation, scores_table, GraphScores, SegmentationScores};
use regid::pipeline::{compare_causal, identify_regimes, CausalComparison, RegimeConfig, RegimeRun};
use regid::series::MultivariateSeries;
use regid::spd::MetricKind;
use regid::synth::{generate as synth_generate, GroundTruth, SynthSpec};
use regid::var::{CausalGraph, GrangerOptions, InfoCriterion, OrderSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::exit::{self, coded, usage};
use crate::{CausalArgs, GenerateArgs, RegimesArgs, ReproduceArgs, RunArgs};

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Reads a JSON document; parse failures exit with `parse_code`.
fn read_json<T: DeserializeOwned>(path: &Path, what: &str, parse_code: u8) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| coded(parse_code, format!("malformed {what} {}: {e}", path.display())))
}

fn delimiter_byte(c: char) -> anyhow::Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| usage(format!("delimiter must be a single ASCII character, got '{c}'")))
}

fn read_series(path: &Path, delimiter: char) -> anyhow::Result<MultivariateSeries> {
    let d = delimiter_byte(delimiter)?;
    MultivariateSeries::read_csv(path, d).with_context(|| format!("reading series {}", path.display()))
}

fn read_truth(path: &Path) -> anyhow::Result<GroundTruth> {
    read_json(path, "ground truth", exit::DATA)
}

fn read_spec(path: &Path) -> anyhow::Result<SynthSpec> {
    let spec: SynthSpec = read_json(path, "spec", exit::USAGE)?;
    spec.validate().with_context(|| format!("invalid spec {}", path.display()))?;
    Ok(spec)
}

fn write_generated(out: &Path, spec: &SynthSpec, z: &MultivariateSeries, truth: &GroundTruth) -> anyhow::Result<()> {
    create_dir(out)?;
    z.write_csv(&out.join("series.csv"), b',')?;
    write_json(&out.join("truth.json"), truth)?;
    write_json(&out.join("spec.json"), spec)?;
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let mut spec = match &args.spec {
        Some(path) => read_spec(path)?,
        None => default_paper_spec(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (z, truth) = synth_generate(&spec).context("generating series")?;
    write_generated(&args.out, &spec, &z, &truth)?;
    info!("wrote {} steps of {} variables to {}", z.len(), z.n_vars(), args.out.display());
    Ok(())
}

fn parse_k(raw: &str) -> anyhow::Result<Option<usize>> {
    if raw.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| usage(format!("--k must be 'auto' or a positive integer, got '{raw}'")))
}

fn parse_sweep(raw: &str) -> anyhow::Result<Vec<usize>> {
    let parts: Vec<&str> = raw.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("--sweep expects start:stop:step, got '{raw}'")))?;
    match nums[..] {
        [start, stop, step] if step > 0 && start <= stop => Ok((start..=stop).step_by(step).collect()),
        _ => Err(usage(format!("--sweep expects start:stop:step with step > 0 and start <= stop, got '{raw}'"))),
    }
}

fn plot_csv(seg: &RegimeSegmentation, t0: i64) -> String {
    let mut out = String::from("time,regime_id\n");
    for (idx, regime) in seg.step_labels().into_iter().enumerate() {
        let _ = writeln!(out, "{},{regime}", t0 + idx as i64);
    }
    out
}

fn ch_csv(report: &SegmentationReport) -> String {
    let mut out = String::from("k,score,degenerate\n");
    for c in &report.ch_curve {
        let _ = writeln!(out, "{},{},{}", c.k, c.value(), c.degenerate());
    }
    out
}

fn write_regime_outputs(
    dir: &Path,
    run: &RegimeRun,
    z: &MultivariateSeries,
    truth: Option<&GroundTruth>,
) -> anyhow::Result<Option<SegmentationScores>> {
    create_dir(dir)?;
    let report = run.report();
    write_json(&dir.join("segmentation.json"), &report)?;
    write_text(&dir.join("regimes_plot.csv"), &plot_csv(&run.segmentation, z.t0()))?;
    write_text(&dir.join("ch_curve.csv"), &ch_csv(&report))?;
    let scores = truth.map(|t| score_segmentation(&run.segmentation, t, run.segmentation.window));
    if let Some(s) = &scores {
        write_json(&dir.join("segmentation_scores.json"), s)?;
    }
    Ok(scores)
}

pub fn regimes(args: &RegimesArgs) -> anyhow::Result<()> {
    let metric = MetricKind::from_str(&args.metric)?;
    let k = parse_k(&args.k)?;
    let z = read_series(&args.input, args.delimiter)?;
    let truth = args.truth.as_deref().map(read_truth).transpose()?;
    let base = RegimeConfig {
        window: args.window,
        metric,
        k,
        k_min: args.k_min,
        k_max: args.k_max,
        dim: args.dim,
        shrinkage: args.shrinkage,
        min_run: args.min_run,
        seed: args.seed,
    };
    let Some(sweep) = &args.sweep else {
        let run = identify_regimes(&z, &base).context("identifying regimes")?;
        write_regime_outputs(&args.out, &run, &z, truth.as_ref())?;
        info!("k = {}, change points {:?}", run.clustering.k, run.segmentation.change_points);
        return Ok(());
    };
    let windows = parse_sweep(sweep)?;
    let runs = windows
        .par_iter()
        .map(|&window| identify_regimes(&z, &RegimeConfig { window, ..base.clone() }))
        .collect::<Result<Vec<_>, _>>()
        .context("identifying regimes over the window sweep")?;
    create_dir(&args.out)?;
    let mut summary = Vec::new();
    for (w, run) in windows.iter().zip(&runs) {
        let scores = write_regime_outputs(&args.out.join(format!("w{w}")), run, &z, truth.as_ref())?;
        summary.push(serde_json::json!({
            "window": w,
            "k": run.clustering.k,
            "change_points": run.segmentation.change_points,
            "scores": scores,
        }));
    }
    write_json(&args.out.join("sweep.json"), &summary)
}

fn parse_order(raw: &str, p_max: usize, criterion: &str) -> anyhow::Result<OrderSpec> {
    if raw.eq_ignore_ascii_case("auto") {
        return Ok(OrderSpec::Auto {
            p_max,
            criterion: InfoCriterion::from_str(criterion)?,
        });
    }
    match raw.parse::<usize>() {
        Ok(p) if p > 0 => Ok(OrderSpec::Fixed(p)),
        _ => Err(usage(format!("--order must be 'auto' or a positive integer, got '{raw}'"))),
    }
}

#[derive(Serialize)]
struct RegimeGraphEntry<'a> {
    regime: usize,
    truth_regime: Option<usize>,
    graph: &'a CausalGraph,
}

#[derive(Serialize)]
struct RegimeScoreEntry {
    regime: usize,
    truth_regime: Option<usize>,
    scores: GraphScores,
}

#[derive(Serialize)]
struct ScoresDoc {
    whole_series: GraphScores,
    regimes: Vec<RegimeScoreEntry>,
    regime_mean: Option<GraphScores>,
}

fn write_causal_outputs(out: &Path, cmp: &CausalComparison) -> anyhow::Result<()> {
    create_dir(out)?;
    write_json(&out.join("graph.json"), &cmp.whole)?;
    if !cmp.regimes.is_empty() {
        let entries: Vec<RegimeGraphEntry> = cmp
            .regimes
            .iter()
            .map(|r| RegimeGraphEntry {
                regime: r.regime,
                truth_regime: r.truth_regime,
                graph: &r.graph,
            })
            .collect();
        write_json(
            &out.join("regime_graphs.json"),
            &serde_json::json!({ "regimes": entries, "warnings": cmp.warnings }),
        )?;
        for r in &cmp.regimes {
            write_json(&out.join(format!("graph_regime_{}.json", r.regime)), &r.graph)?;
        }
    }
    for w in &cmp.warnings {
        warn!("{w}");
    }
    if let Some(whole) = cmp.whole_scores {
        let doc = ScoresDoc {
            whole_series: whole,
            regimes: cmp
                .regimes
                .iter()
                .filter_map(|r| {
                    r.scores.map(|scores| RegimeScoreEntry {
                        regime: r.regime,
                        truth_regime: r.truth_regime,
                        scores,
                    })
                })
                .collect(),
            regime_mean: cmp.mean_scores,
        };
        write_json(&out.join("scores.json"), &doc)?;
        let mut rows = vec![("VAR-GC".to_string(), whole)];
        if let Some(mean) = cmp.mean_scores {
            rows.push(("RegID-VAR-GC".to_string(), mean));
        }
        write_text(&out.join("scores.txt"), &scores_table(&rows))?;
    }
    Ok(())
}

fn read_segmentation(path: &Path) -> anyhow::Result<RegimeSegmentation> {
    let report: SegmentationReport = read_json(path, "segmentation", exit::DATA)?;
    report
        .segmentation()
        .with_context(|| format!("inconsistent segmentation {}", path.display()))
}

pub fn causal(args: &CausalArgs) -> anyhow::Result<()> {
    let opts = GrangerOptions {
        alpha: args.alpha,
        order: parse_order(&args.order, args.p_max, &args.criterion)?,
        bonferroni: args.bonferroni,
    };
    let z = read_series(&args.input, args.delimiter)?;
    let seg = args.segmentation.as_deref().map(read_segmentation).transpose()?;
    let truth = args.truth.as_deref().map(read_truth).transpose()?;
    let cmp = compare_causal(&z, seg.as_ref(), truth.as_ref(), &opts).context("causal discovery")?;
    write_causal_outputs(&args.out, &cmp)
}

pub fn reproduce(args: &ReproduceArgs) -> anyhow::Result<()> {
    let (report, timing, artifacts) = regid::reproduce::reproduce(args.seed).context("reproduction")?;
    create_dir(&args.out)?;
    write_generated(&args.out.join("data"), &artifacts.spec, &artifacts.series, &artifacts.truth)?;
    for (row, seg) in &artifacts.segmentations {
        let dir = args.out.join("sweep").join(format!("{}_w{}", row.metric.as_str(), row.window));
        create_dir(&dir)?;
        write_json(&dir.join("segmentation.json"), seg)?;
        let parsed = seg.segmentation()?;
        write_text(&dir.join("regimes_plot.csv"), &plot_csv(&parsed, artifacts.series.t0()))?;
    }
    let rows: Vec<(String, GraphScores)> = report.table.iter().map(|r| (r.method.clone(), r.scores)).collect();
    write_text(&args.out.join("scores.txt"), &scores_table(&rows))?;
    write_json(&args.out.join("report.json"), &report)?;
    write_json(&args.out.join("timing.json"), &timing)?;
    for c in &report.criteria {
        println!("criterion {} {:<20} {}", c.id, c.name, if c.pass { "PASS" } else { "FAIL" });
    }
    if !report.pass {
        let names: Vec<String> = report.failed().iter().map(|c| format!("{} ({})", c.id, c.name)).collect();
        return Err(coded(exit::ACCEPTANCE, format!("acceptance failed: criterion {}", names.join(", "))));
    }
    Ok(())
}

pub fn run(args: &RunArgs) -> anyhow::Result<()> {
    let cfg: PipelineConfig = read_json(&args.config, "config", exit::USAGE)?;
    cfg.validate()?;
    let out: PathBuf = cfg.out.clone();
    let (z, truth) = if let Some(input) = &cfg.input {
        let z = read_series(input, ',')?;
        (z, cfg.truth.as_deref().map(read_truth).transpose()?)
    } else {
        let mut spec = match &cfg.spec {
            Some(path) => read_spec(path)?,
            None => default_paper_spec(),
        };
        spec.seed = cfg.seed;
        let (z, truth) = synth_generate(&spec).context("generating series")?;
        write_generated(&out, &spec, &z, &truth)?;
        (z, Some(truth))
    };
    let run = identify_regimes(&z, &cfg.regime_config()).context("identifying regimes")?;
    write_regime_outputs(&out, &run, &z, truth.as_ref())?;
    let cmp = compare_causal(&z, Some(&run.segmentation), truth.as_ref(), &cfg.granger()).context("causal discovery")?;
    write_causal_outputs(&out, &cmp)?;
    write_json(&out.join("config.json"), &cfg)
}
