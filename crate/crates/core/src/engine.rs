//! The adaptation loop: pseudo-labelling, running class/global means, the
//! per-batch pseudo-label inter-class objective and its gradient through the
//! normalization head, the running mean gradient, a single fresh-optimizer
//! ascent step, and text-embedding refinement.
//!
//! Weights are reset to their initial values after every batch; only the
//! accumulators carry over.

use serde::{Deserialize, Serialize};

use crate::error::{MintError, Result};
use crate::linalg::{dist_sq, dot, norm, normalized, Matrix};
use crate::synthetic::{embed_rows, reweight_normalize, NormWeights, TextEmbeddings, NORM_FLOOR};

/// Zero-shot prediction: `argmax_c z_i·t_c`, ties to the smallest class.
pub fn predict(z: &Matrix, text: &TextEmbeddings) -> Result<(Vec<usize>, Matrix)> {
    if z.cols() != text.dim() {
        return Err(MintError::DimensionMismatch {
            expected: text.dim(),
            found: z.cols(),
        });
    }
    let c = text.n_classes();
    let mut scores = Matrix::zeros(z.rows(), c);
    let mut labels = Vec::with_capacity(z.rows());
    for (i, row) in z.iter_rows().enumerate() {
        let s = scores.row_mut(i);
        let mut best = 0;
        for k in 0..c {
            s[k] = dot(row, text.row(k));
            if s[k] > s[best] {
                best = k;
            }
        }
        labels.push(best);
    }
    Ok((labels, scores))
}

/// Running global and per-class means of embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanAccumulator {
    global_mean: Vec<f64>,
    global_count: u64,
    class_means: Matrix,
    class_counts: Vec<u64>,
}

impl MeanAccumulator {
    pub fn new(n_classes: usize, dim: usize) -> Self {
        Self {
            global_mean: vec![0.0; dim],
            global_count: 0,
            class_means: Matrix::zeros(n_classes, dim),
            class_counts: vec![0; n_classes],
        }
    }

    /// Fold one embedding with its (pseudo-)label into the means.
    pub fn update(&mut self, z: &[f64], class: usize) -> Result<()> {
        if class >= self.class_counts.len() {
            return Err(MintError::LabelOutOfRange {
                label: class as i64,
                n_classes: self.class_counts.len(),
            });
        }
        if z.len() != self.global_mean.len() {
            return Err(MintError::DimensionMismatch {
                expected: self.global_mean.len(),
                found: z.len(),
            });
        }
        blend(&mut self.global_mean, self.global_count, z);
        self.global_count += 1;
        blend(self.class_means.row_mut(class), self.class_counts[class], z);
        self.class_counts[class] += 1;
        Ok(())
    }

    pub fn update_batch(&mut self, z: &Matrix, labels: &[usize]) -> Result<()> {
        for (row, &c) in z.iter_rows().zip(labels) {
            self.update(row, c)?;
        }
        Ok(())
    }

    /// Accumulator holding exactly the given batch.
    pub fn from_batch(z: &Matrix, labels: &[usize], n_classes: usize) -> Result<Self> {
        let mut acc = Self::new(n_classes, z.cols());
        acc.update_batch(z, labels)?;
        Ok(acc)
    }

    pub fn global_mean(&self) -> &[f64] {
        &self.global_mean
    }

    pub fn global_count(&self) -> u64 {
        self.global_count
    }

    pub fn class_mean(&self, c: usize) -> &[f64] {
        self.class_means.row(c)
    }

    pub fn class_count(&self, c: usize) -> u64 {
        self.class_counts[c]
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn n_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn dim(&self) -> usize {
        self.global_mean.len()
    }
}

/// `m ← K/(K+1)·m + 1/(K+1)·z`
#[inline]
fn blend(mean: &mut [f64], k: u64, z: &[f64]) {
    let kf = k as f64;
    let a = kf / (kf + 1.0);
    let b = 1.0 / (kf + 1.0);
    for (m, x) in mean.iter_mut().zip(z) {
        *m = a * *m + b * x;
    }
}

/// Running arithmetic mean of per-batch gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradAccumulator {
    mean_grad: Vec<f64>,
    batch_count: u64,
}

impl GradAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            mean_grad: vec![0.0; dim],
            batch_count: 0,
        }
    }

    /// `ḡ ← (b−1)/b·ḡ + 1/b·g_b` with `b` the count after this batch.
    pub fn update(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.mean_grad.len() {
            return Err(MintError::DimensionMismatch {
                expected: self.mean_grad.len(),
                found: g.len(),
            });
        }
        self.batch_count += 1;
        let b = self.batch_count as f64;
        for (m, x) in self.mean_grad.iter_mut().zip(g) {
            *m = (b - 1.0) / b * *m + x / b;
        }
        Ok(())
    }

    pub fn mean_grad(&self) -> &[f64] {
        &self.mean_grad
    }

    pub fn batch_count(&self) -> u64 {
        self.batch_count
    }
}

/// Count used to weight accumulated class means against the original text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextPrior {
    /// `K_c`, the number of adapted samples pseudo-labelled `c`.
    PerClass,
    /// `K`, all adapted samples; classes never seen keep their text.
    Global,
}

/// What to do when the batch-local objective is not estimable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UndefinedPolicy {
    Abort,
    /// Skip the gradient for that batch (no accumulator update).
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MintConfig {
    pub learning_rate: f64,
    pub k_prior: f64,
    pub batch_size: usize,
    pub ascent_eps: f64,
    pub ascent_betas: (f64, f64),
    pub text_prior: TextPrior,
    /// Objective means from the running accumulator (otherwise batch-local).
    pub use_mean_acc: bool,
    /// Step along the running mean gradient (otherwise the batch gradient).
    pub use_grad_acc: bool,
    pub use_text_adjust: bool,
    pub on_undefined: UndefinedPolicy,
}

impl Default for MintConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.007,
            k_prior: 10_000.0,
            batch_size: 20,
            ascent_eps: 1e-8,
            ascent_betas: (0.9, 0.999),
            text_prior: TextPrior::PerClass,
            use_mean_acc: true,
            use_grad_acc: true,
            use_text_adjust: true,
            on_undefined: UndefinedPolicy::Abort,
        }
    }
}

impl MintConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(MintError::invalid("learning_rate must be > 0"));
        }
        if !(self.k_prior >= 0.0) {
            return Err(MintError::invalid("k_prior must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(MintError::invalid("batch_size must be positive"));
        }
        let (b1, b2) = self.ascent_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(MintError::invalid("ascent betas must lie in [0, 1)"));
        }
        if !(self.ascent_eps > 0.0) {
            return Err(MintError::invalid("ascent_eps must be > 0"));
        }
        Ok(())
    }
}

/// Distinct classes in `labels` with their batch counts.
fn batch_class_counts(labels: &[usize], n_classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; n_classes];
    for &c in labels {
        if c >= n_classes {
            return Err(MintError::LabelOutOfRange {
                label: c as i64,
                n_classes,
            });
        }
        counts[c] += 1;
    }
    Ok(counts)
}

fn check_objective_inputs(
    n: usize,
    dim: usize,
    labels: &[usize],
    acc: &MeanAccumulator,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(MintError::EmptyBatch);
    }
    if labels.len() != n {
        return Err(MintError::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if dim != acc.dim() {
        return Err(MintError::DimensionMismatch {
            expected: acc.dim(),
            found: dim,
        });
    }
    let counts = batch_class_counts(labels, acc.n_classes())?;
    for (c, &k) in counts.iter().enumerate() {
        if k > 0 && acc.class_count(c) == 0 {
            return Err(MintError::UndefinedObjective(format!(
                "pseudo-class {c} has no accumulated mean"
            )));
        }
    }
    Ok(counts)
}

/// Pseudo-label inter-class objective of one batch with the accumulator's
/// global and class means held fixed:
///
/// ```text
/// V = 1/C_b Σ_c mean_{i∈c} ‖z_i − z̃‖² − 1/C_b Σ_c mean_{i∈c} ‖z_i − z̃_c‖²
/// ```
pub fn batch_objective(z: &Matrix, labels: &[usize], acc: &MeanAccumulator) -> Result<f64> {
    let counts = check_objective_inputs(z.rows(), z.cols(), labels, acc)?;
    let c_b = counts.iter().filter(|&&k| k > 0).count() as f64;
    let mut v = 0.0;
    for (row, &c) in z.iter_rows().zip(labels) {
        let term = dist_sq(row, acc.global_mean()) - dist_sq(row, acc.class_mean(c));
        v += term / counts[c] as f64;
    }
    Ok(v / c_b)
}

/// Per-sample gradient contributions of [`batch_objective`] with respect to
/// the head weights, handed to `sink` in sample order.
///
/// For `u = v ⊙ w`, `z = u/‖u‖` and `a = ∂V/∂z = 2/(C_b n_c)·(z̃_c − z̃)` the
/// contribution is `v ⊙ (a − z (zᵀa)) / ‖u‖`.
fn for_each_contribution(
    inputs: &Matrix,
    w: &NormWeights,
    labels: &[usize],
    acc: &MeanAccumulator,
    mut sink: impl FnMut(&[f64]),
) -> Result<()> {
    if inputs.cols() != w.dim() {
        return Err(MintError::DimensionMismatch {
            expected: w.dim(),
            found: inputs.cols(),
        });
    }
    let counts = check_objective_inputs(inputs.rows(), inputs.cols(), labels, acc)?;
    let c_b = counts.iter().filter(|&&k| k > 0).count() as f64;
    let d = inputs.cols();
    let directions: Vec<Option<Vec<f64>>> = counts
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            (k > 0).then(|| {
                let scale = 2.0 / (c_b * k as f64);
                acc.class_mean(c)
                    .iter()
                    .zip(acc.global_mean())
                    .map(|(m, g)| scale * (m - g))
                    .collect()
            })
        })
        .collect();
    let mut z = vec![0.0; d];
    let mut out = vec![0.0; d];
    for (i, (v, &c)) in inputs.iter_rows().zip(labels).enumerate() {
        let n = reweight_normalize(v, w.as_slice(), &mut z);
        if !(n >= NORM_FLOOR) {
            return Err(MintError::AnnihilatedSample { index: i, norm: n });
        }
        let a = directions[c].as_ref().expect("class present in batch");
        let za = dot(&z, a);
        for j in 0..d {
            out[j] = v[j] * (a[j] - z[j] * za) / n;
        }
        sink(&out);
    }
    Ok(())
}

/// Analytic gradient of [`batch_objective`]`(embed(inputs, w))` with respect
/// to `w`, accumulator means and pseudo-labels held constant.
pub fn batch_gradient(
    inputs: &Matrix,
    w: &NormWeights,
    labels: &[usize],
    acc: &MeanAccumulator,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; w.dim()];
    for_each_contribution(inputs, w, labels, acc, |c| {
        g.iter_mut().zip(c).for_each(|(g, x)| *g += x);
    })?;
    Ok(g)
}

/// Gradient plus the per-component standard error of the sum, estimated from
/// the spread of per-sample contributions (`sqrt(n)·sd`).
pub fn batch_gradient_with_spread(
    inputs: &Matrix,
    w: &NormWeights,
    labels: &[usize],
    acc: &MeanAccumulator,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = w.dim();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut n = 0usize;
    for_each_contribution(inputs, w, labels, acc, |c| {
        n += 1;
        for j in 0..d {
            sum[j] += c[j];
            sum_sq[j] += c[j] * c[j];
        }
    })?;
    let nf = n as f64;
    let se = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| {
            let mean = s / nf;
            let var = (q / nf - mean * mean).max(0.0);
            (var * nf).sqrt()
        })
        .collect();
    Ok((sum, se))
}

/// One Adam step from a freshly initialised optimizer state, taken in the
/// ascent direction.
pub fn ascent_step(w0: &NormWeights, g_mean: &[f64], cfg: &MintConfig) -> Result<NormWeights> {
    if g_mean.len() != w0.dim() {
        return Err(MintError::DimensionMismatch {
            expected: w0.dim(),
            found: g_mean.len(),
        });
    }
    let (b1, b2) = cfg.ascent_betas;
    let w = w0
        .as_slice()
        .iter()
        .zip(g_mean)
        .map(|(w, g)| {
            let m = (1.0 - b1) * g;
            let v = (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1);
            let v_hat = v / (1.0 - b2);
            w + cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.ascent_eps)
        })
        .collect();
    w0.with_values(w)
}

/// Blend each class text embedding toward its accumulated image mean:
/// `t̃_c = normalize(k/(k+K)·t_c + K/(k+K)·z̃_c)`, where `K` is chosen by
/// `prior`. Classes with no accumulated samples keep `t_c`.
pub fn adjust_text(
    text: &TextEmbeddings,
    adapted: &MeanAccumulator,
    k_prior: f64,
    prior: TextPrior,
) -> Result<TextEmbeddings> {
    if adapted.n_classes() != text.n_classes() || adapted.dim() != text.dim() {
        return Err(MintError::DimensionMismatch {
            expected: text.n_classes() * text.dim(),
            found: adapted.n_classes() * adapted.dim(),
        });
    }
    let mut out = text.matrix().clone();
    for c in 0..text.n_classes() {
        let k_c = adapted.class_count(c);
        if k_c == 0 {
            continue;
        }
        let k = match prior {
            TextPrior::PerClass => k_c,
            TextPrior::Global => adapted.global_count(),
        } as f64;
        let a = k_prior / (k_prior + k);
        let b = k / (k_prior + k);
        let blended: Vec<f64> = text
            .row(c)
            .iter()
            .zip(adapted.class_mean(c))
            .map(|(t, m)| a * t + b * m)
            .collect();
        let unit = normalized(&blended).ok_or(MintError::DegenerateAdjustedText { class: c })?;
        out.row_mut(c).copy_from_slice(&unit);
    }
    TextEmbeddings::new(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchDiagnostics {
    pub batch_index: u64,
    /// `None` when the objective was skipped as undefined.
    pub objective: Option<f64>,
    pub grad_norm: f64,
    pub mean_grad_norm: f64,
    pub classes_in_batch: usize,
    /// Fraction of final predictions equal to the zero-shot pseudo-labels.
    pub agreement: f64,
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub predictions: Vec<usize>,
    pub zero_shot: Vec<usize>,
    pub pre_embeddings: Matrix,
    pub adapted_embeddings: Matrix,
    pub adapted_weights: NormWeights,
    pub diagnostics: BatchDiagnostics,
}

/// Full adaptation state for one stream. One `process_batch` at a time.
#[derive(Clone, Debug)]
pub struct MintState {
    w0: NormWeights,
    mean_acc: MeanAccumulator,
    adapted_mean_acc: MeanAccumulator,
    grad_acc: GradAccumulator,
    text: TextEmbeddings,
    config: MintConfig,
    batches_seen: u64,
}

impl MintState {
    pub fn new(w0: NormWeights, text: TextEmbeddings, config: MintConfig) -> Result<Self> {
        config.validate()?;
        if w0.dim() != text.dim() {
            return Err(MintError::DimensionMismatch {
                expected: text.dim(),
                found: w0.dim(),
            });
        }
        let (c, d) = (text.n_classes(), text.dim());
        Ok(Self {
            w0,
            mean_acc: MeanAccumulator::new(c, d),
            adapted_mean_acc: MeanAccumulator::new(c, d),
            grad_acc: GradAccumulator::new(d),
            text,
            config,
            batches_seen: 0,
        })
    }

    pub fn w0(&self) -> &NormWeights {
        &self.w0
    }

    pub fn mean_acc(&self) -> &MeanAccumulator {
        &self.mean_acc
    }

    pub fn adapted_mean_acc(&self) -> &MeanAccumulator {
        &self.adapted_mean_acc
    }

    pub fn grad_acc(&self) -> &GradAccumulator {
        &self.grad_acc
    }

    pub fn text(&self) -> &TextEmbeddings {
        &self.text
    }

    pub fn config(&self) -> &MintConfig {
        &self.config
    }

    /// Adapt on one batch of head inputs and predict it.
    ///
    /// Order: embed with `w0`, pseudo-label against the original text, fold
    /// into the mean accumulator, gradient at `w0`, fold into the gradient
    /// accumulator, one ascent step, re-embed, fold the adapted embeddings
    /// (keyed by the first pseudo-labels) into the second accumulator, refine
    /// the text, predict, and drop the adapted weights.
    pub fn process_batch(&mut self, inputs: &Matrix) -> Result<BatchOutcome> {
        if inputs.rows() == 0 {
            return Err(MintError::EmptyBatch);
        }
        let cfg = &self.config;
        let n_classes = self.text.n_classes();

        let z0 = embed_rows(inputs, self.w0.as_slice())?;
        let (pseudo, _) = predict(&z0, &self.text)?;

        let counts = batch_class_counts(&pseudo, n_classes)?;
        let classes_in_batch = counts.iter().filter(|&&k| k > 0).count();

        let singletons = counts.iter().all(|&k| k <= 1);
        if !cfg.use_mean_acc && singletons && cfg.on_undefined == UndefinedPolicy::Abort {
            return Err(MintError::UndefinedObjective(
                "every pseudo-class in the batch is a singleton; intra-class variance \
                 cannot be estimated without the mean accumulator"
                    .into(),
            ));
        }
        let skipped = !cfg.use_mean_acc && singletons;
        let local;
        let targets = if cfg.use_mean_acc {
            self.mean_acc.update_batch(&z0, &pseudo)?;
            &self.mean_acc
        } else {
            local = MeanAccumulator::from_batch(&z0, &pseudo, n_classes)?;
            &local
        };

        let (objective, g_b) = if skipped {
            (None, vec![0.0; self.w0.dim()])
        } else {
            let obj = batch_objective(&z0, &pseudo, targets)?;
            let g = batch_gradient(inputs, &self.w0, &pseudo, targets)?;
            self.grad_acc.update(&g)?;
            (Some(obj), g)
        };
        let direction: &[f64] = if cfg.use_grad_acc {
            self.grad_acc.mean_grad()
        } else {
            &g_b
        };
        let w_adapted = ascent_step(&self.w0, direction, cfg)?;

        let z1 = embed_rows(inputs, w_adapted.as_slice())?;
        let text = if cfg.use_text_adjust {
            self.adapted_mean_acc.update_batch(&z1, &pseudo)?;
            adjust_text(
                &self.text,
                &self.adapted_mean_acc,
                cfg.k_prior,
                cfg.text_prior,
            )?
        } else {
            self.text.clone()
        };
        let (predictions, _) = predict(&z1, &text)?;

        let agreement = predictions
            .iter()
            .zip(&pseudo)
            .filter(|(a, b)| a == b)
            .count() as f64
            / predictions.len() as f64;
        let diagnostics = BatchDiagnostics {
            batch_index: self.batches_seen,
            objective,
            grad_norm: norm(&g_b),
            mean_grad_norm: norm(self.grad_acc.mean_grad()),
            classes_in_batch,
            agreement,
        };
        self.batches_seen += 1;
        Ok(BatchOutcome {
            predictions,
            zero_shot: pseudo,
            pre_embeddings: z0,
            adapted_embeddings: z1,
            adapted_weights: w_adapted,
            diagnostics,
        })
    }
}
