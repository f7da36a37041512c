use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use mint_core::adapt::{chunk, run_stream, RunSummary, StreamBatch};
use mint_core::dump::{fmt_real, read_dump, write_csv, write_dump, write_metrics, MetricsRow};
use mint_core::engine::{predict, TextPrior, UndefinedPolicy};
use mint_core::metrics::{compute_variance_report, EmbeddingSet};
use mint_core::synthetic::{
    embed_rows, make_text_embeddings, sample_latents, LabelMode, NormWeights, TextEmbeddings,
};
use mint_core::theory::{gt_limits, mc_measure, PseudoLabeler};
use mint_core::verify::{self, Faults, Level};
use mint_core::{Matrix, MintError};
use serde::Serialize;

use crate::config::{write_sidecar, Mode, RunConfig};
use crate::{AdaptArgs, DiagArgs, Failure, LevelArg, SweepArgs, SynthDumpArgs, VerifyArgs};

type CmdResult = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn ensure_parent(path: &Path) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(data)?;
    }
    Ok(())
}

/// `name__tag.mintdump` → `tag`; otherwise the whole stem.
fn dump_tag(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rsplit_once("__") {
        Some((_, tag)) => tag.to_string(),
        None => stem,
    }
}

/// `clean` → 0, `s3` / `s2.5` → the number.
fn tag_severity(tag: &str) -> Option<f64> {
    if tag == "clean" {
        return Some(0.0);
    }
    tag.strip_prefix('s')?
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s >= 0.0)
}

#[derive(Serialize)]
struct DiagResolved<'a> {
    inputs: &'a [PathBuf],
    output: &'a Path,
    pseudo_text: bool,
}

pub fn diag(a: &DiagArgs) -> CmdResult {
    let mut rows = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let dump = read_dump(path).map_err(data)?;
        let set = &dump.embeddings;
        if set.labels.is_none() && !a.pseudo_text {
            return Err(data(anyhow!(
                "{}: nothing to compute (no labels; pass --pseudo-text to use text embeddings)",
                path.display()
            )));
        }
        if a.pseudo_text && dump.text.is_none() {
            return Err(data(anyhow!(
                "{}: --pseudo-text needs text embeddings in the dump",
                path.display()
            )));
        }
        let gt = set
            .labels
            .as_deref()
            .map(|l| compute_variance_report(set, l))
            .transpose()
            .map_err(data)?;
        let (pl, accuracy) = match &dump.text {
            Some(text) => {
                let (pred, _) = predict(&set.data, text).map_err(data)?;
                let acc = set.labels.as_ref().map(|l| {
                    pred.iter().zip(l).filter(|(p, y)| p == y).count() as f64 / pred.len() as f64
                });
                (
                    Some(compute_variance_report(set, &pred).map_err(data)?),
                    acc,
                )
            }
            None => (None, None),
        };
        let tag = dump_tag(path);
        rows.push(MetricsRow::new(
            tag_severity(&tag),
            tag,
            gt.as_ref(),
            pl.as_ref(),
            accuracy,
            None,
        ));
    }
    ensure_parent(&a.output)?;
    write_metrics(&a.output, &rows).map_err(data)?;
    let resolved = DiagResolved {
        inputs: &a.inputs,
        output: &a.output,
        pseudo_text: a.pseudo_text,
    };
    write_sidecar(&resolved, &a.output).map_err(data)?;
    println!("wrote {} row(s) to {}", rows.len(), a.output.display());
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref()).map_err(usage)?;
    if let Some(s) = &a.severities {
        cfg.sweep.severities = s.clone();
    }
    if let Some(n) = a.n_samples {
        cfg.sweep.n_samples = n;
    }
    if let Some(s) = &a.seeds {
        cfg.sweep.seeds = s.clone();
    }
    if cfg.sweep.severities.is_empty() || cfg.sweep.seeds.is_empty() {
        return Err(usage(anyhow!(
            "sweep needs at least one severity and one seed"
        )));
    }
    let output = a
        .output
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
    let w = NormWeights::ones(cfg.latent.segments());

    let header = [
        "severity",
        "seed",
        "n_samples",
        "closed_inter",
        "closed_intra",
        "mc_inter",
        "mc_intra",
        "abs_gap_inter",
        "rel_gap_inter",
        "abs_gap_intra",
        "rel_gap_intra",
    ];
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &s in &cfg.sweep.severities {
        let p = cfg.latent.params(s).map_err(usage)?;
        let (inter, intra) = gt_limits(&p);
        for &seed in &cfg.sweep.seeds {
            let m = mc_measure(
                &p,
                &w,
                cfg.sweep.n_samples,
                seed,
                &PseudoLabeler::GroundTruth,
            )
            .map_err(|e| match e {
                MintError::InvalidParams(_) => usage(e),
                e => data(e),
            })?;
            let (gi, ga) = ((m.gt.inter - inter).abs(), (m.gt.intra - intra).abs());
            worst = worst.max(gi / inter).max(ga / intra);
            rows.push(vec![
                fmt_real(s),
                seed.to_string(),
                cfg.sweep.n_samples.to_string(),
                fmt_real(inter),
                fmt_real(intra),
                fmt_real(m.gt.inter),
                fmt_real(m.gt.intra),
                fmt_real(gi),
                fmt_real(gi / inter),
                fmt_real(ga),
                fmt_real(ga / intra),
            ]);
        }
    }
    ensure_parent(&output)?;
    write_csv(&output, &header, &rows).map_err(data)?;
    write_sidecar(&cfg, &output).map_err(data)?;
    println!(
        "wrote {} row(s) to {}; max relative gap {:.3}%",
        rows.len(),
        output.display(),
        100.0 * worst
    );
    Ok(())
}

struct AdaptInput {
    inputs: Matrix,
    labels: Option<Vec<usize>>,
    text: TextEmbeddings,
    w0: NormWeights,
}

fn adapt_input(cfg: &RunConfig) -> Result<AdaptInput, Failure> {
    match cfg.adapt.mode {
        Mode::Synthetic => {
            let p = cfg.latent.params(cfg.adapt.severity).map_err(usage)?;
            let text =
                make_text_embeddings(&p, cfg.latent.contamination, cfg.seed).map_err(usage)?;
            let b = sample_latents(&p, cfg.adapt.n_samples, cfg.seed, LabelMode::Streaming)
                .map_err(usage)?;
            Ok(AdaptInput {
                inputs: b.latents,
                labels: Some(b.gt_labels),
                text,
                w0: NormWeights::ones(p.segments()),
            })
        }
        Mode::Dump => {
            let path = cfg
                .adapt
                .input
                .as_ref()
                .ok_or_else(|| usage(anyhow!("dump mode needs an input dump")))?;
            let dump = read_dump(path).map_err(data)?;
            let text = dump.text.ok_or_else(|| {
                data(anyhow!(
                    "{}: dump has no text embeddings to adapt against",
                    path.display()
                ))
            })?;
            let d = dump.embeddings.dim();
            Ok(AdaptInput {
                inputs: dump.embeddings.data,
                labels: dump.embeddings.labels,
                text,
                w0: NormWeights::ones_flat(d),
            })
        }
    }
}

fn batch_rows(s: &RunSummary) -> Vec<Vec<String>> {
    s.batches
        .iter()
        .map(|r| {
            let d = &r.diagnostics;
            vec![
                d.batch_index.to_string(),
                r.batch_size.to_string(),
                opt(d.objective),
                fmt_real(d.grad_norm),
                fmt_real(d.mean_grad_norm),
                d.classes_in_batch.to_string(),
                fmt_real(d.agreement),
                opt(r.accuracy),
                opt(r.zero_shot_accuracy),
            ]
        })
        .collect()
}

const BATCH_HEADER: [&str; 9] = [
    "batch_index",
    "batch_size",
    "objective",
    "grad_norm",
    "mean_grad_norm",
    "classes_in_batch",
    "agreement",
    "accuracy",
    "zero_shot_accuracy",
];

const SUMMARY_HEADER: [&str; 13] = [
    "batch_size",
    "seed",
    "n_samples",
    "n_batches",
    "zero_shot_accuracy",
    "adapted_accuracy",
    "mean_objective",
    "pl_inter_pre",
    "pl_inter_post",
    "gt_inter_pre",
    "gt_inter_post",
    "learning_rate",
    "k_prior",
];

pub fn adapt(a: &AdaptArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref()).map_err(usage)?;
    let ad = &mut cfg.adapt;
    if let Some(d) = &a.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(m) = a.mode {
        ad.mode = m;
    }
    if let Some(i) = &a.input {
        ad.input = Some(i.clone());
        ad.mode = Mode::Dump;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.severity {
        ad.severity = s;
    }
    if let Some(n) = a.n_samples {
        ad.n_samples = n;
    }
    if let Some(b) = &a.batch_size {
        ad.batch_sizes = b.clone();
    }
    if let Some(lr) = a.lr {
        ad.learning_rate = Some(lr);
    }
    if let Some(k) = a.k_prior {
        ad.k_prior = k;
    }
    if a.global_k {
        ad.text_prior = TextPrior::Global;
    }
    if a.no_text_adjust {
        ad.use_text_adjust = false;
    }
    if a.no_grad_acc {
        ad.use_grad_acc = false;
    }
    if a.no_mean_acc {
        ad.use_mean_acc = false;
    }
    if a.skip_undefined {
        ad.on_undefined = UndefinedPolicy::Skip;
    }
    ad.resolve_learning_rate();
    if ad.batch_sizes.is_empty() || ad.batch_sizes.contains(&0) {
        return Err(usage(anyhow!("batch sizes must be positive")));
    }
    for &b in &ad.batch_sizes {
        ad.mint_config(b).validate().map_err(usage)?;
    }

    let input = adapt_input(&cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
        .map_err(data)?;

    let mut summary = Vec::new();
    for &bs in &cfg.adapt.batch_sizes {
        let batches: Vec<StreamBatch> =
            chunk(&input.inputs, input.labels.as_deref(), bs).map_err(data)?;
        let run = run_stream(
            input.w0.clone(),
            input.text.clone(),
            cfg.adapt.mint_config(bs),
            &batches,
        )
        .map_err(|e| match e {
            MintError::UndefinedObjective(_) => {
                data(anyhow!("run aborted at batch size {bs}: {e}"))
            }
            e => data(e),
        })?;
        let path = cfg.output_dir.join(format!("batches_bs{bs}.csv"));
        write_csv(&path, &BATCH_HEADER, &batch_rows(&run)).map_err(data)?;
        let v = &run.variances;
        println!(
            "batch size {bs:>4}: zero-shot {} adapted {} pl-inter {:.5} -> {:.5}",
            run.zero_shot_accuracy
                .map_or("-".into(), |x| format!("{x:.4}")),
            run.adapted_accuracy
                .map_or("-".into(), |x| format!("{x:.4}")),
            v.pl_pre.inter,
            v.pl_post.inter
        );
        summary.push(vec![
            bs.to_string(),
            cfg.seed.to_string(),
            run.n_samples.to_string(),
            run.n_batches.to_string(),
            opt(run.zero_shot_accuracy),
            opt(run.adapted_accuracy),
            fmt_real(run.mean_objective),
            fmt_real(v.pl_pre.inter),
            fmt_real(v.pl_post.inter),
            opt(v.gt_pre.as_ref().map(|r| r.inter)),
            opt(v.gt_post.as_ref().map(|r| r.inter)),
            fmt_real(cfg.adapt.learning_rate.unwrap_or(f64::NAN)),
            fmt_real(cfg.adapt.k_prior),
        ]);
    }
    let path = cfg.output_dir.join("summary.csv");
    write_csv(&path, &SUMMARY_HEADER, &summary).map_err(data)?;
    write_sidecar(&cfg, &path).map_err(data)?;
    Ok(())
}

#[derive(Serialize)]
struct VerifyResolved {
    level: &'static str,
    inject_gradient_fault: bool,
}

/// Soft wall-clock budget for the quick level.
const QUICK_BUDGET_SECS: f64 = 60.0;

pub fn verify(a: &VerifyArgs) -> CmdResult {
    let level = match a.level {
        LevelArg::Quick => Level::Quick,
        LevelArg::Full => Level::Full,
    };
    let faults = Faults {
        gradient_bias: a.inject_gradient_fault.then_some(1e-3),
    };
    let scratch = std::env::temp_dir().join(format!("mint-verify-{}", std::process::id()));
    std::fs::create_dir_all(&scratch).map_err(data)?;
    let start = Instant::now();
    let outcomes = verify::run_all(level, faults, &scratch);
    let total = start.elapsed().as_secs_f64();
    let _ = std::fs::remove_dir_all(&scratch);

    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "{} passed, {failed} failed in {total:.1} s",
        outcomes.len() - failed
    );
    if level == Level::Quick && total > QUICK_BUDGET_SECS {
        log::warn!("quick verification took {total:.1} s (budget {QUICK_BUDGET_SECS} s)");
    }

    if let Some(out) = &a.output {
        ensure_parent(out)?;
        let rows: Vec<Vec<String>> = outcomes
            .iter()
            .map(|o| {
                vec![
                    o.id.to_string(),
                    o.passed.to_string(),
                    o.detail.clone(),
                    fmt_real(o.elapsed.as_secs_f64()),
                ]
            })
            .collect();
        write_csv(out, &["check", "passed", "detail", "seconds"], &rows).map_err(data)?;
        let resolved = VerifyResolved {
            level: if level == Level::Full {
                "full"
            } else {
                "quick"
            },
            inject_gradient_fault: a.inject_gradient_fault,
        };
        write_sidecar(&resolved, out).map_err(data)?;
    }
    if failed > 0 {
        return Err(Failure::Verify(failed));
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthResolved<'a> {
    config: &'a RunConfig,
    severity: f64,
    n_samples: usize,
    labels: bool,
    text: bool,
}

pub fn synth_dump(a: &SynthDumpArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref()).map_err(usage)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.contamination {
        cfg.latent.contamination = c;
    }
    if a.n_samples == 0 {
        return Err(usage(anyhow!("--n-samples must be positive")));
    }
    let p = cfg.latent.params(a.severity).map_err(usage)?;
    let b = sample_latents(&p, a.n_samples, cfg.seed, LabelMode::Streaming).map_err(usage)?;
    let z = embed_rows(&b.latents, NormWeights::ones(p.segments()).as_slice()).map_err(data)?;
    let set = EmbeddingSet::new(z, (!a.no_labels).then_some(b.gt_labels), 2).map_err(data)?;
    let text = if a.no_text {
        None
    } else {
        Some(make_text_embeddings(&p, cfg.latent.contamination, cfg.seed).map_err(usage)?)
    };
    ensure_parent(&a.output)?;
    write_dump(&a.output, &set, text.as_ref()).map_err(data)?;
    let resolved = SynthResolved {
        config: &cfg,
        severity: a.severity,
        n_samples: a.n_samples,
        labels: !a.no_labels,
        text: !a.no_text,
    };
    write_sidecar(&resolved, &a.output).map_err(data)?;
    println!("wrote {} samples to {}", a.n_samples, a.output.display());
    Ok(())
}
