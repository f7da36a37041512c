//! Closed-form limits of the latent corruption model and Monte Carlo
//! estimators of the same quantities.
//!
//! The model is balanced binary classification over latents
//! `v = [cls | irr | shift | noise]` with `cls = ±μ`, Rademacher `irr`,
//! deterministic `shift = s·δ` and `noise = s·Rademacher`, embedded through
//! `z = normalize(v ⊙ w)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MintError, Result};
use crate::linalg::{norm_sq, Matrix};
use crate::metrics::{variance_report, VarianceReport};
use crate::rng;
use crate::synthetic::{embed_rows, sample_latents_into, LabelMode, NormWeights, TextEmbeddings};

/// Parameters of the latent corruption model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    pub mu: Vec<f64>,
    pub d_irr: usize,
    pub delta: Vec<f64>,
    pub d_noise: usize,
    pub severity: f64,
}

/// Index ranges of the four latent segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    pub d_cls: usize,
    pub d_irr: usize,
    pub d_shift: usize,
    pub d_noise: usize,
}

impl Segments {
    pub fn dim(&self) -> usize {
        self.d_cls + self.d_irr + self.d_shift + self.d_noise
    }
    pub fn cls(&self) -> std::ops::Range<usize> {
        0..self.d_cls
    }
    pub fn irr(&self) -> std::ops::Range<usize> {
        let a = self.d_cls;
        a..a + self.d_irr
    }
    pub fn shift(&self) -> std::ops::Range<usize> {
        let a = self.d_cls + self.d_irr;
        a..a + self.d_shift
    }
    pub fn noise(&self) -> std::ops::Range<usize> {
        let a = self.d_cls + self.d_irr + self.d_shift;
        a..a + self.d_noise
    }
}

impl LatentParams {
    /// Isotropic parameters: every `μ` entry equals `sqrt(‖μ‖²/d_cls)` and
    /// likewise for `δ`.
    pub fn uniform(
        segments: Segments,
        mu_norm_sq: f64,
        delta_norm_sq: f64,
        severity: f64,
    ) -> Result<Self> {
        let p = Self {
            mu: vec![(mu_norm_sq / segments.d_cls.max(1) as f64).sqrt(); segments.d_cls],
            d_irr: segments.d_irr,
            delta: vec![(delta_norm_sq / segments.d_shift.max(1) as f64).sqrt(); segments.d_shift],
            d_noise: segments.d_noise,
            severity,
        };
        p.validate()?;
        Ok(p)
    }

    /// Desk-scale defaults: dims (8, 32, 8, 16), ‖μ‖² = 4, ‖δ‖² = 9.
    pub fn desk_default(severity: f64) -> Self {
        Self::uniform(DESK_SEGMENTS, 4.0, 9.0, severity).expect("desk defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.delta.is_empty() || self.d_irr == 0 || self.d_noise == 0 {
            return Err(MintError::invalid(
                "all latent segment dimensions must be >= 1",
            ));
        }
        if !(self.mu_norm_sq() > 0.0) {
            return Err(MintError::invalid("class mean must be nonzero"));
        }
        if !(self.severity >= 0.0) || !self.severity.is_finite() {
            return Err(MintError::invalid("severity must be finite and >= 0"));
        }
        if self.mu.iter().chain(&self.delta).any(|x| !x.is_finite()) {
            return Err(MintError::invalid("non-finite latent parameter"));
        }
        Ok(())
    }

    pub fn segments(&self) -> Segments {
        Segments {
            d_cls: self.mu.len(),
            d_irr: self.d_irr,
            d_shift: self.delta.len(),
            d_noise: self.d_noise,
        }
    }

    pub fn dim(&self) -> usize {
        self.segments().dim()
    }

    pub fn mu_norm_sq(&self) -> f64 {
        norm_sq(&self.mu)
    }

    pub fn delta_norm_sq(&self) -> f64 {
        norm_sq(&self.delta)
    }

    pub fn with_severity(&self, severity: f64) -> Self {
        Self {
            severity,
            ..self.clone()
        }
    }

    /// `‖v ⊙ 1‖²`, identical for every latent of the model.
    pub fn normalizer_sq(&self) -> f64 {
        let s2 = self.severity * self.severity;
        self.mu_norm_sq() + self.d_irr as f64 + s2 * self.delta_norm_sq() + s2 * self.d_noise as f64
    }
}

pub const DESK_SEGMENTS: Segments = Segments {
    d_cls: 8,
    d_irr: 32,
    d_shift: 8,
    d_noise: 16,
};

/// Pseudo-label statistics entering the pseudo-label inter-variance limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryCov {
    /// `E[ŷ]`, strictly inside (0, 1).
    pub e_yhat: f64,
    /// `Cov(y, ŷ)`.
    pub sigma_yy: f64,
    /// `Cov(v_irr, ŷ)`, length `d_irr`.
    pub sigma_irr: Vec<f64>,
    /// `Cov(v_noise, ŷ)`, length `d_noise`.
    pub sigma_noise: Vec<f64>,
}

impl TheoryCov {
    /// `ŷ = y`.
    pub fn perfect(p: &LatentParams) -> Self {
        Self {
            e_yhat: 0.5,
            sigma_yy: 0.25,
            sigma_irr: vec![0.0; p.d_irr],
            sigma_noise: vec![0.0; p.d_noise],
        }
    }

    /// Symmetric label-flip channel independent of the latents: `ŷ = y` with
    /// probability `1 − p_flip`. Then `E[ŷ] = 1/2` and
    /// `Cov(y, ŷ) = (1 − 2 p_flip) / 4`.
    pub fn flip_channel(p: &LatentParams, p_flip: f64) -> Self {
        Self {
            e_yhat: 0.5,
            sigma_yy: (1.0 - 2.0 * p_flip) / 4.0,
            sigma_irr: vec![0.0; p.d_irr],
            sigma_noise: vec![0.0; p.d_noise],
        }
    }

    pub fn validate(&self, p: &LatentParams) -> Result<()> {
        if !(self.e_yhat > 0.0 && self.e_yhat < 1.0) {
            return Err(MintError::invalid("E[ŷ] must lie strictly inside (0, 1)"));
        }
        if self.sigma_yy.abs() > 0.25 + 1e-12 {
            return Err(MintError::invalid("|Cov(y, ŷ)| exceeds 1/4"));
        }
        if self.sigma_irr.len() != p.d_irr || self.sigma_noise.len() != p.d_noise {
            return Err(MintError::invalid(
                "covariance vector lengths do not match the model",
            ));
        }
        Ok(())
    }

    /// `1/E[ŷ]² + 1/(1 − E[ŷ])²`.
    pub fn balance_factor(&self) -> f64 {
        1.0 / (self.e_yhat * self.e_yhat) + 1.0 / ((1.0 - self.e_yhat) * (1.0 - self.e_yhat))
    }
}

/// Large-sample limits of ground-truth (inter, intra) at `w = 1`.
pub fn gt_limits(p: &LatentParams) -> (f64, f64) {
    let z2 = p.normalizer_sq();
    let s2 = p.severity * p.severity;
    (
        p.mu_norm_sq() / z2,
        (p.d_irr as f64 + s2 * p.d_noise as f64) / z2,
    )
}

/// True iff `‖δ‖² ≥ (d_noise / d_irr)·‖μ‖²`, the regime in which the
/// intra-class limit is non-increasing in severity.
pub fn intra_decrease_condition(p: &LatentParams) -> bool {
    p.delta_norm_sq() * p.d_irr as f64 >= p.d_noise as f64 * p.mu_norm_sq()
}

fn check_weight_layout(p: &LatentParams, w: &NormWeights) -> Result<Segments> {
    let seg = p.segments();
    match w.segments() {
        Some(ws) if ws == seg => Ok(seg),
        _ => Err(MintError::invalid(
            "weight segments do not match latent parameters",
        )),
    }
}

fn weighted_sq(a: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(w).map(|(x, y)| (x * y) * (x * y)).sum()
}

/// Large-sample limit of the pseudo-label inter-class variance for weights `w`.
pub fn pl_inter_limit(p: &LatentParams, w: &NormWeights, t: &TheoryCov) -> Result<f64> {
    let seg = check_weight_layout(p, w)?;
    t.validate(p)?;
    let wv = w.as_slice();
    let s2 = p.severity * p.severity;
    let mu_w = weighted_sq(&p.mu, &wv[seg.cls()]);
    let numer = 4.0 * t.sigma_yy * t.sigma_yy * mu_w
        + weighted_sq(&t.sigma_irr, &wv[seg.irr()])
        + weighted_sq(&t.sigma_noise, &wv[seg.noise()]);
    let denom = mu_w
        + norm_sq(&wv[seg.irr()])
        + s2 * weighted_sq(&p.delta, &wv[seg.shift()])
        + s2 * norm_sq(&wv[seg.noise()]);
    if !(denom > 0.0) {
        return Err(MintError::DegenerateWeights);
    }
    Ok(t.balance_factor() / 2.0 * numer / denom)
}

/// Gradients of [`pl_inter_limit`] with respect to `w_cls` and `w_shift` at
/// `w = 1`.
///
/// With `D = ‖μ‖² + d_irr + s²‖δ‖² + s²·d_noise`,
/// `N = 4σ²‖μ‖² + ‖σ_irr‖² + ‖σ_noise‖²` and `C = C(E[ŷ])`:
///
/// ```text
/// ∇_cls   = C · [(4σ²d_irr − ‖σ_irr‖²) + 4σ²s²‖δ‖² + (4σ²s²d_noise − ‖σ_noise‖²)] / D² · μ²
/// ∇_shift = −C · N / D² · s² · δ²
/// ```
pub fn pl_inter_gradients(p: &LatentParams, t: &TheoryCov) -> Result<(Vec<f64>, Vec<f64>)> {
    t.validate(p)?;
    let c = t.balance_factor();
    let s2 = p.severity * p.severity;
    let sig2 = t.sigma_yy * t.sigma_yy;
    let irr = norm_sq(&t.sigma_irr);
    let noise = norm_sq(&t.sigma_noise);
    let d = p.normalizer_sq();
    let numer = 4.0 * sig2 * p.mu_norm_sq() + irr + noise;
    let bracket = (4.0 * sig2 * p.d_irr as f64 - irr)
        + 4.0 * sig2 * s2 * p.delta_norm_sq()
        + (4.0 * sig2 * s2 * p.d_noise as f64 - noise);
    let grad_cls = p.mu.iter().map(|m| c * bracket / (d * d) * m * m).collect();
    let grad_shift = p
        .delta
        .iter()
        .map(|x| -c * numer / (d * d) * s2 * x * x)
        .collect();
    Ok((grad_cls, grad_shift))
}

/// True when the covariance conditions under which `∇_cls ≥ 0` hold:
/// `4σ²·d_irr ≥ ‖σ_irr‖²` and `4σ²·s²·d_noise ≥ ‖σ_noise‖²`.
pub fn cls_gradient_conditions(p: &LatentParams, t: &TheoryCov) -> bool {
    let sig2 = t.sigma_yy * t.sigma_yy;
    let s2 = p.severity * p.severity;
    4.0 * sig2 * p.d_irr as f64 >= norm_sq(&t.sigma_irr)
        && 4.0 * sig2 * s2 * p.d_noise as f64 >= norm_sq(&t.sigma_noise)
}

/// How pseudo-labels are produced inside [`mc_measure`].
#[derive(Clone, Debug)]
pub enum PseudoLabeler {
    /// `ŷ = y`.
    GroundTruth,
    /// Flip each label independently with the given probability.
    Flip(f64),
    /// Zero-shot argmax against text embeddings.
    Text(TextEmbeddings),
}

#[derive(Clone, Debug)]
pub struct McMeasurement {
    pub gt: VarianceReport,
    pub pl: VarianceReport,
    /// Fraction of pseudo-labels equal to the ground truth.
    pub accuracy: f64,
    /// Empirical `TheoryCov` of the drawn pseudo-labels.
    pub empirical_cov: TheoryCov,
}

/// Samples per independent random stream in [`mc_measure`].
pub const MC_SHARD: usize = 16_384;

/// Draw `n` balanced latents, embed them with `w`, and measure variances under
/// ground-truth and pseudo-labels.
///
/// Sampling is split into fixed-size shards, each with its own stream derived
/// from `(seed, shard)`, so the result is independent of the thread count.
pub fn mc_measure(
    p: &LatentParams,
    w: &NormWeights,
    n: usize,
    seed: u64,
    labeler: &PseudoLabeler,
) -> Result<McMeasurement> {
    if n < 2 {
        return Err(MintError::invalid("monte carlo needs at least 2 samples"));
    }
    if !n.is_multiple_of(2) {
        return Err(MintError::invalid(
            "balanced sampling needs an even sample count",
        ));
    }
    p.validate()?;
    check_weight_layout(p, w)?;

    let n_shards = n.div_ceil(MC_SHARD);
    // balanced per shard: split n/2 pairs across shards
    let pairs = n / 2;
    let shards: Vec<(Matrix, Vec<usize>, Vec<usize>)> = (0..n_shards)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let lo = pairs * k / n_shards;
            let hi = pairs * (k + 1) / n_shards;
            let m = 2 * (hi - lo);
            let mut r = rng::stream(seed, rng::mix(0x4d43, k as u64));
            let batch = sample_latents_into(&mut r, p, m, LabelMode::Balanced)?;
            let z = embed_rows(&batch.latents, w.as_slice())?;
            let pl = match labeler {
                PseudoLabeler::GroundTruth => batch.gt_labels.clone(),
                PseudoLabeler::Flip(q) => batch
                    .gt_labels
                    .iter()
                    .map(|&y| if r.random_bool(*q) { 1 - y } else { y })
                    .collect(),
                PseudoLabeler::Text(text) => crate::engine::predict(&z, text)?.0,
            };
            Ok((batch.latents, batch.gt_labels, pl))
        })
        .collect::<Result<Vec<_>>>()?;

    let latents = Matrix::vstack(&shards.iter().map(|s| s.0.clone()).collect::<Vec<_>>())?;
    let gt: Vec<usize> = shards.iter().flat_map(|s| s.1.iter().copied()).collect();
    let pl: Vec<usize> = shards.iter().flat_map(|s| s.2.iter().copied()).collect();
    let z = embed_rows(&latents, w.as_slice())?;

    let gt_report = variance_report(&z, &gt, 2)?;
    let pl_report = variance_report(&z, &pl, 2)?;
    let accuracy = gt.iter().zip(&pl).filter(|(a, b)| a == b).count() as f64 / n as f64;
    let empirical_cov = empirical_cov(p, &latents, &gt, &pl);
    Ok(McMeasurement {
        gt: gt_report,
        pl: pl_report,
        accuracy,
        empirical_cov,
    })
}

fn empirical_cov(p: &LatentParams, latents: &Matrix, gt: &[usize], pl: &[usize]) -> TheoryCov {
    let n = gt.len() as f64;
    let seg = p.segments();
    let yh: Vec<f64> = pl.iter().map(|&c| c as f64).collect();
    let y: Vec<f64> = gt.iter().map(|&c| c as f64).collect();
    let e_yhat = yh.iter().sum::<f64>() / n;
    let e_y = y.iter().sum::<f64>() / n;
    let cov = |xs: &mut dyn Iterator<Item = f64>| -> f64 {
        let mut sx = 0.0;
        let mut sxy = 0.0;
        for (x, h) in xs.zip(&yh) {
            sx += x;
            sxy += x * h;
        }
        sxy / n - (sx / n) * e_yhat
    };
    let sigma_yy = y.iter().zip(&yh).map(|(a, b)| a * b).sum::<f64>() / n - e_y * e_yhat;
    let column_cov = |range: std::ops::Range<usize>| -> Vec<f64> {
        range
            .map(|j| cov(&mut latents.iter_rows().map(move |r| r[j])))
            .collect()
    };
    TheoryCov {
        e_yhat,
        sigma_yy,
        sigma_irr: column_cov(seg.irr()),
        sigma_noise: column_cov(seg.noise()),
    }
}
