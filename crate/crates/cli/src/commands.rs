use std::fs;
use std::path::Path;
use std::sync::Arc;

use ambiprune_core::ambiguity::{histogram, import_scores, score_dataset, summarize, top_k};
use ambiprune_core::eval::{evaluate, EvalParams, SubsetSpec};
use ambiprune_core::io::{load_dataset, load_detections, load_scores, save_dataset};
use ambiprune_core::model::TagFamily;
use ambiprune_core::prune::PruneMode;
use ambiprune_core::{Dataset, Error};
use anyhow::Context;
use ambiprune_server::Session;

use crate::{plot, EvalArgs, InputArgs};

fn load(input: &InputArgs) -> anyhow::Result<Dataset> {
    Ok(load_dataset(&input.input, input.format)?.value)
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

pub fn score(
    input: &InputArgs,
    scores: Option<&Path>,
    overwrite: bool,
    output: &Path,
) -> anyhow::Result<()> {
    let mut dataset = load(input)?;
    if let Some(path) = scores {
        dataset = import_scores(&dataset, &load_scores(path)?)?;
    }
    let scored = score_dataset(&dataset, overwrite)?;
    save_dataset(&scored, output)?;
    let s = summarize(&scored);
    println!(
        "scored {} of {} instances: mean={} q25={} median={} q75={} q90={} max={}",
        s.scored,
        s.instances,
        fmt_opt(s.mean),
        fmt_opt(s.q25),
        fmt_opt(s.median),
        fmt_opt(s.q75),
        fmt_opt(s.q90),
        fmt_opt(s.max),
    );
    Ok(())
}

pub fn report(input: &InputArgs, output: &Path, bins: usize, top: usize) -> anyhow::Result<()> {
    let dataset = load(input)?;
    let hist = histogram(&dataset, bins)?;
    fs::create_dir_all(output).with_context(|| format!("cannot create {}", output.display()))?;
    let mut json = serde_json::to_string_pretty(&hist)?;
    json.push('\n');
    write(&output.join("histogram.json"), &json)?;
    write(&output.join("tag_proportions.csv"), &plot::proportions_csv(&hist)?)?;
    write(&output.join("tag_proportions.svg"), &plot::proportions_svg(&hist))?;

    for p in &hist.peaks {
        println!(
            "peak {}:{} bin {} [{:.2}, {:.2}) proportion {:.3}",
            p.family.as_str(),
            p.level,
            p.bin,
            p.lower,
            p.upper,
            p.proportion
        );
    }
    let ranked = top_k(&dataset, top);
    println!("top {} most ambiguous:", ranked.len());
    for (id, a) in ranked {
        println!("{id}\t{a:.4}");
    }
    Ok(())
}

pub fn prune(
    input: &InputArgs,
    threshold: f64,
    mode: PruneMode,
    output: &Path,
    report_path: &Path,
) -> anyhow::Result<()> {
    let dataset = load(input)?;
    let (pruned, report) = ambiprune_core::prune::prune(&dataset, threshold, mode)?;
    save_dataset(&pruned, output)?;
    write(report_path, &report.to_json())?;
    println!(
        "removed {} of {} active instances (rate {:.4}) at threshold {threshold}, mode {mode}",
        report.removed_count, report.total_count, report.removal_rate
    );
    for family in [TagFamily::Occlusion, TagFamily::Truncation] {
        for l in report.levels(family).iter().filter(|l| l.over_pruned) {
            eprintln!(
                "warning: {}:{} removal rate {:.4} exceeds {}x the overall rate {:.4}",
                family.as_str(),
                l.level,
                l.rate,
                report.over_prune_factor,
                report.removal_rate
            );
        }
    }
    Ok(())
}

pub fn eval(
    input: &InputArgs,
    args: &EvalArgs,
    threshold: Option<f64>,
    output: Option<&Path>,
) -> anyhow::Result<()> {
    let subset = SubsetSpec::builtin(&args.subset)
        .ok_or_else(|| Error::Validation(format!("unknown subset {:?}", args.subset)))?;
    let params = EvalParams {
        iou_threshold: args.iou,
        confidence_threshold: args.conf,
        identity: args.identity.clone(),
    };
    params.validate()?;
    let mut dataset = load(input)?;
    if let Some(t) = threshold {
        dataset = ambiprune_core::prune::prune(&dataset, t, PruneMode::Ignore)?.0;
    }
    let detections = load_detections(&args.detections)?.value;
    let result = evaluate(&dataset, &detections, &subset, &params)?;
    if let Some(path) = output {
        write(path, &result.to_json())?;
    }
    println!("{}", result.summary_line());
    Ok(())
}

pub fn serve(
    input: &InputArgs,
    detections: Option<&Path>,
    identity: &str,
    host: &str,
    port: u16,
    cors_origin: Option<&str>,
) -> anyhow::Result<()> {
    let dataset = load(input)?;
    let unscored = dataset.unscored_ids();
    if !unscored.is_empty() {
        return Err(Error::Unscored(unscored).into());
    }
    let detections = detections
        .map(|p| load_detections(p).map(|l| l.value))
        .transpose()?;
    let root = if input.input.is_dir() {
        input.input.clone()
    } else {
        input.input.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let session = Arc::new(Session::new(dataset, detections, identity, root));
    let app = ambiprune_server::router(Some(session), cors_origin);

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("cannot start runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("cannot bind {host}:{port}"))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        use std::io::Write;
        std::io::stdout().flush()?;
        ambiprune_server::serve(listener, app).await?;
        Ok(())
    })
}
