//! Drives a [`MintState`] over a whole stream and summarises the run.

use crate::engine::{predict, BatchDiagnostics, MintConfig, MintState};
use crate::error::{MintError, Result};
use crate::linalg::Matrix;
use crate::metrics::{variance_report, VarianceReport};
use crate::synthetic::{embed_rows, NormWeights, TextEmbeddings};

/// One batch of head inputs with optional ground truth.
#[derive(Clone, Debug)]
pub struct StreamBatch {
    pub inputs: Matrix,
    pub labels: Option<Vec<usize>>,
}

/// Cut `inputs` into consecutive batches of `batch_size` rows (the last may
/// be short).
pub fn chunk(
    inputs: &Matrix,
    labels: Option<&[usize]>,
    batch_size: usize,
) -> Result<Vec<StreamBatch>> {
    if batch_size == 0 {
        return Err(MintError::invalid("batch_size must be positive"));
    }
    if let Some(l) = labels {
        if l.len() != inputs.rows() {
            return Err(MintError::DimensionMismatch {
                expected: inputs.rows(),
                found: l.len(),
            });
        }
    }
    Ok((0..inputs.rows())
        .step_by(batch_size)
        .map(|start| {
            let end = (start + batch_size).min(inputs.rows());
            StreamBatch {
                inputs: inputs.slice_rows(start, end),
                labels: labels.map(|l| l[start..end].to_vec()),
            }
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct BatchRecord {
    pub diagnostics: BatchDiagnostics,
    pub batch_size: usize,
    pub accuracy: Option<f64>,
    pub zero_shot_accuracy: Option<f64>,
}

/// Variances of the pre-adaptation (`w0`, zero-shot labels) and adapted
/// (final predictions) embeddings over the whole stream.
#[derive(Clone, Debug)]
pub struct StreamVariances {
    pub pl_pre: VarianceReport,
    pub pl_post: VarianceReport,
    pub gt_pre: Option<VarianceReport>,
    pub gt_post: Option<VarianceReport>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub n_samples: usize,
    pub n_batches: usize,
    pub batch_size: usize,
    pub zero_shot_accuracy: Option<f64>,
    pub adapted_accuracy: Option<f64>,
    /// Mean over batches with a defined objective; NaN if there were none.
    pub mean_objective: f64,
    pub batches: Vec<BatchRecord>,
    pub variances: StreamVariances,
}

fn accuracy(pred: &[usize], gt: &[usize]) -> f64 {
    pred.iter().zip(gt).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// Run `batches` through a fresh state built from `w0`, `text` and `config`.
pub fn run_stream(
    w0: NormWeights,
    text: TextEmbeddings,
    config: MintConfig,
    batches: &[StreamBatch],
) -> Result<RunSummary> {
    if batches.is_empty() {
        return Err(MintError::EmptyBatch);
    }
    let n_classes = text.n_classes();
    let batch_size = config.batch_size;
    let mut state = MintState::new(w0, text, config)?;

    let mut records = Vec::with_capacity(batches.len());
    let mut pre = Vec::with_capacity(batches.len());
    let mut post = Vec::with_capacity(batches.len());
    let mut zero_shot = Vec::new();
    let mut adapted = Vec::new();
    let mut gt: Option<Vec<usize>> = batches[0].labels.as_ref().map(|_| Vec::new());

    for (i, b) in batches.iter().enumerate() {
        let out = state.process_batch(&b.inputs)?;
        let (acc, zs_acc) = match &b.labels {
            Some(l) => (
                Some(accuracy(&out.predictions, l)),
                Some(accuracy(&out.zero_shot, l)),
            ),
            None => (None, None),
        };
        match (&mut gt, &b.labels) {
            (Some(all), Some(l)) => all.extend_from_slice(l),
            (None, None) => {}
            _ => {
                return Err(MintError::invalid(format!(
                    "batch {i}: labels present on only some batches"
                )))
            }
        }
        log::debug!(
            "batch {}: objective {:?}, |g| {:.3e}, agreement {:.3}",
            out.diagnostics.batch_index,
            out.diagnostics.objective,
            out.diagnostics.grad_norm,
            out.diagnostics.agreement
        );
        records.push(BatchRecord {
            diagnostics: out.diagnostics,
            batch_size: b.inputs.rows(),
            accuracy: acc,
            zero_shot_accuracy: zs_acc,
        });
        zero_shot.extend(out.zero_shot);
        adapted.extend(out.predictions);
        pre.push(out.pre_embeddings);
        post.push(out.adapted_embeddings);
    }

    let pre = Matrix::vstack(&pre)?;
    let post = Matrix::vstack(&post)?;
    let variances = StreamVariances {
        pl_pre: variance_report(&pre, &zero_shot, n_classes)?,
        pl_post: variance_report(&post, &adapted, n_classes)?,
        gt_pre: gt
            .as_deref()
            .map(|g| variance_report(&pre, g, n_classes))
            .transpose()?,
        gt_post: gt
            .as_deref()
            .map(|g| variance_report(&post, g, n_classes))
            .transpose()?,
    };
    let objectives: Vec<f64> = records
        .iter()
        .filter_map(|r| r.diagnostics.objective)
        .collect();
    let mean_objective = if objectives.is_empty() {
        f64::NAN
    } else {
        objectives.iter().sum::<f64>() / objectives.len() as f64
    };
    Ok(RunSummary {
        n_samples: adapted.len(),
        n_batches: records.len(),
        batch_size,
        zero_shot_accuracy: gt.as_deref().map(|g| accuracy(&zero_shot, g)),
        adapted_accuracy: gt.as_deref().map(|g| accuracy(&adapted, g)),
        mean_objective,
        batches: records,
        variances,
    })
}

/// Zero-shot accuracy of the unadapted head over a labelled set.
pub fn zero_shot_accuracy(
    inputs: &Matrix,
    labels: &[usize],
    w0: &NormWeights,
    text: &TextEmbeddings,
) -> Result<f64> {
    let z = embed_rows(inputs, w0.as_slice())?;
    let (pred, _) = predict(&z, text)?;
    Ok(accuracy(&pred, labels))
}
