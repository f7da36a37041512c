//! Synthetic corrupted classification streams.
//!
//! Latents follow the four-segment corruption model of [`LatentParams`] and
//! are embedded through the adaptable head `z = normalize(v ⊙ w)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MintError, Result};
use crate::linalg::{norm, normalized, Matrix};
use crate::metrics::EmbeddingSet;
use crate::rng::{self, StreamRng};
use crate::theory::{LatentParams, Segments};

/// Rows whose reweighted norm falls below this are rejected, not clamped.
pub const NORM_FLOOR: f64 = 1e-30;

/// Tolerance on `|‖row‖ − 1|` for externally supplied unit vectors.
pub const UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub latents: Matrix,
    pub gt_labels: Vec<usize>,
    pub severity: f64,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.latents.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.rows() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelMode {
    /// i.i.d. uniform labels.
    Streaming,
    /// Exactly `n/2` samples per class in shuffled order; `n` must be even.
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightLayout {
    Segmented(Segments),
    Flat(usize),
}

/// Per-dimension weights of the normalization head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormWeights {
    w: Vec<f64>,
    layout: WeightLayout,
}

impl NormWeights {
    pub fn ones(segments: Segments) -> Self {
        Self {
            w: vec![1.0; segments.dim()],
            layout: WeightLayout::Segmented(segments),
        }
    }

    pub fn ones_flat(dim: usize) -> Self {
        Self {
            w: vec![1.0; dim],
            layout: WeightLayout::Flat(dim),
        }
    }

    pub fn new(w: Vec<f64>, layout: WeightLayout) -> Result<Self> {
        let expected = match layout {
            WeightLayout::Segmented(s) => s.dim(),
            WeightLayout::Flat(d) => d,
        };
        if w.len() != expected {
            return Err(MintError::DimensionMismatch {
                expected,
                found: w.len(),
            });
        }
        Ok(Self { w, layout })
    }

    /// Same layout, new values.
    pub fn with_values(&self, w: Vec<f64>) -> Result<Self> {
        Self::new(w, self.layout)
    }

    pub fn layout(&self) -> WeightLayout {
        self.layout
    }

    pub fn segments(&self) -> Option<Segments> {
        match self.layout {
            WeightLayout::Segmented(s) => Some(s),
            WeightLayout::Flat(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w: self.w.iter().map(|x| x * factor).collect(),
            layout: self.layout,
        }
    }
}

/// Unit-norm class text embeddings, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddings {
    t: Matrix,
}

impl TextEmbeddings {
    /// Rows must be unit norm within [`UNIT_TOLERANCE`].
    pub fn new(t: Matrix) -> Result<Self> {
        if t.rows() == 0 {
            return Err(MintError::invalid(
                "text embeddings need at least one class",
            ));
        }
        for (row, r) in t.iter_rows().enumerate() {
            let n = norm(r);
            if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
                return Err(MintError::NonNormalizedRow { row, norm: n });
            }
        }
        Ok(Self { t })
    }

    /// Caller has already validated the rows under its own tolerance.
    pub(crate) fn from_checked(t: Matrix) -> Self {
        Self { t }
    }

    pub fn n_classes(&self) -> usize {
        self.t.rows()
    }

    pub fn dim(&self) -> usize {
        self.t.cols()
    }

    pub fn row(&self, c: usize) -> &[f64] {
        self.t.row(c)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.t
    }
}

pub(crate) fn sample_latents_into(
    rng: &mut StreamRng,
    p: &LatentParams,
    n: usize,
    mode: LabelMode,
) -> Result<LatentBatch> {
    let seg = p.segments();
    let s = p.severity;
    let labels: Vec<usize> = match mode {
        LabelMode::Streaming => (0..n).map(|_| rng.random_range(0..2)).collect(),
        LabelMode::Balanced => {
            if !n.is_multiple_of(2) {
                return Err(MintError::invalid(
                    "balanced sampling needs an even sample count",
                ));
            }
            let mut l: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
            l.shuffle(rng);
            l
        }
    };
    let mut latents = Matrix::zeros(n, seg.dim());
    for (i, &y) in labels.iter().enumerate() {
        let row = latents.row_mut(i);
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for (x, m) in row[seg.cls()].iter_mut().zip(&p.mu) {
            *x = sign * m;
        }
        for x in &mut row[seg.irr()] {
            *x = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        for (x, d) in row[seg.shift()].iter_mut().zip(&p.delta) {
            *x = s * d;
        }
        for x in &mut row[seg.noise()] {
            *x = if rng.random::<bool>() { s } else { -s };
        }
    }
    Ok(LatentBatch {
        latents,
        gt_labels: labels,
        severity: s,
    })
}

/// Draw `batch_size` latents from `p`.
pub fn sample_latents(
    p: &LatentParams,
    batch_size: usize,
    seed: u64,
    mode: LabelMode,
) -> Result<LatentBatch> {
    if batch_size == 0 {
        return Err(MintError::EmptyBatch);
    }
    p.validate()?;
    sample_latents_into(&mut rng::stream(seed, 0), p, batch_size, mode)
}

/// `z = (v ⊙ w) / ‖v ⊙ w‖` into `out`; returns `‖v ⊙ w‖`.
#[inline]
pub(crate) fn reweight_normalize(v: &[f64], w: &[f64], out: &mut [f64]) -> f64 {
    for ((o, x), y) in out.iter_mut().zip(v).zip(w) {
        *o = x * y;
    }
    let n = norm(out);
    if n >= NORM_FLOOR {
        out.iter_mut().for_each(|o| *o /= n);
    }
    n
}

/// Embed every row of `v` through the head with weights `w`.
pub fn embed_rows(v: &Matrix, w: &[f64]) -> Result<Matrix> {
    if v.cols() != w.len() {
        return Err(MintError::DimensionMismatch {
            expected: w.len(),
            found: v.cols(),
        });
    }
    let mut z = Matrix::zeros(v.rows(), v.cols());
    for i in 0..v.rows() {
        let n = reweight_normalize(v.row(i), w, z.row_mut(i));
        if !(n >= NORM_FLOOR) {
            return Err(MintError::AnnihilatedSample { index: i, norm: n });
        }
    }
    Ok(z)
}

/// Embed a latent batch; the embedding set carries the ground-truth labels.
pub fn embed(batch: &LatentBatch, w: &NormWeights) -> Result<EmbeddingSet> {
    let z = embed_rows(&batch.latents, w.as_slice())?;
    EmbeddingSet::new(z, Some(batch.gt_labels.clone()), 2)
}

/// Text embeddings for the two synthetic classes:
/// `t_1 = normalize([+μ; ε·η_1])`, `t_0 = normalize([−μ; ε·η_0])`.
///
/// `η_c` is an independent Gaussian direction over the non-class dimensions
/// scaled to unit per-coordinate RMS (norm `sqrt(d − d_cls)`), so `ε` is the
/// contamination per coordinate relative to the latent scale. `ε = 0` gives
/// text aligned with the class subspace.
pub fn make_text_embeddings(
    p: &LatentParams,
    contamination: f64,
    seed: u64,
) -> Result<TextEmbeddings> {
    if !(contamination >= 0.0) || !contamination.is_finite() {
        return Err(MintError::invalid("contamination must be finite and >= 0"));
    }
    p.validate()?;
    let seg = p.segments();
    let d_rest = seg.dim() - seg.d_cls;
    let mut rng = rng::stream(seed, rng::mix(0x7e47, 0));
    let mut t = Matrix::zeros(2, seg.dim());
    for c in 0..2 {
        let raw: Vec<f64> = (0..d_rest).map(|_| rng.sample(StandardNormal)).collect();
        let eta = normalized(&raw).expect("gaussian draw is nonzero");
        let scale = contamination * (d_rest as f64).sqrt();
        let sign = if c == 1 { 1.0 } else { -1.0 };
        let mut row: Vec<f64> = p.mu.iter().map(|m| sign * m).collect();
        row.extend(eta.iter().map(|e| scale * e));
        t.row_mut(c)
            .copy_from_slice(&normalized(&row).expect("class mean is nonzero"));
    }
    TextEmbeddings::new(t)
}

/// One entry of a stream schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleEntry {
    pub params: LatentParams,
    pub n_batches: usize,
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamOrder {
    /// All batches of entry 0, then entry 1, ...
    Sequential,
    /// Round-robin over entries that still have batches left.
    Interleaved,
}

/// Ordered batch sequence over a schedule. Each entry draws from its own
/// stream so interleaving does not change the samples an entry produces.
pub struct SyntheticStream {
    entries: Vec<ScheduleEntry>,
    rngs: Vec<StreamRng>,
    remaining: Vec<usize>,
    order: StreamOrder,
    cursor: usize,
}

impl SyntheticStream {
    pub fn new(schedule: Vec<ScheduleEntry>, seed: u64, order: StreamOrder) -> Result<Self> {
        if schedule.is_empty() {
            return Err(MintError::invalid("stream schedule is empty"));
        }
        for e in &schedule {
            e.params.validate()?;
            if e.batch_size == 0 {
                return Err(MintError::EmptyBatch);
            }
        }
        let rngs = (0..schedule.len())
            .map(|k| rng::stream(seed, rng::mix(0x5743, k as u64)))
            .collect();
        let remaining = schedule.iter().map(|e| e.n_batches).collect();
        Ok(Self {
            entries: schedule,
            rngs,
            remaining,
            order,
            cursor: 0,
        })
    }

    fn next_entry(&mut self) -> Option<usize> {
        let k = self.entries.len();
        match self.order {
            StreamOrder::Sequential => (0..k).find(|&i| self.remaining[i] > 0),
            StreamOrder::Interleaved => {
                let found = (0..k)
                    .map(|off| (self.cursor + off) % k)
                    .find(|&i| self.remaining[i] > 0)?;
                self.cursor = (found + 1) % k;
                Some(found)
            }
        }
    }
}

impl Iterator for SyntheticStream {
    type Item = LatentBatch;

    fn next(&mut self) -> Option<LatentBatch> {
        let e = self.next_entry()?;
        self.remaining[e] -= 1;
        let entry = &self.entries[e];
        // validated in `new`
        Some(
            sample_latents_into(
                &mut self.rngs[e],
                &entry.params,
                entry.batch_size,
                LabelMode::Streaming,
            )
            .expect("streaming sampling cannot fail on validated params"),
        )
    }
}

/// Convenience wrapper: a sequential stream collected into memory.
pub fn stream(schedule: Vec<ScheduleEntry>, seed: u64) -> Result<Vec<LatentBatch>> {
    Ok(SyntheticStream::new(schedule, seed, StreamOrder::Sequential)?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::predict;
    use crate::theory::DESK_SEGMENTS;

    #[test]
    fn zero_severity_has_no_corruption() {
        let p = LatentParams::desk_default(0.0);
        let b = sample_latents(&p, 64, 1, LabelMode::Streaming).unwrap();
        let seg = p.segments();
        for r in b.latents.iter_rows() {
            assert!(r[seg.shift()].iter().all(|&x| x == 0.0));
            assert!(r[seg.noise()].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn segments_follow_the_model() {
        let p = LatentParams::desk_default(2.5);
        let b = sample_latents(&p, 100, 4, LabelMode::Balanced).unwrap();
        let seg = p.segments();
        assert_eq!(b.gt_labels.iter().filter(|&&y| y == 1).count(), 50);
        for (r, &y) in b.latents.iter_rows().zip(&b.gt_labels) {
            let sign = if y == 1 { 1.0 } else { -1.0 };
            assert!(r[seg.cls()].iter().zip(&p.mu).all(|(x, m)| *x == sign * m));
            assert!(r[seg.irr()].iter().all(|x| x.abs() == 1.0));
            assert!(r[seg.shift()]
                .iter()
                .zip(&p.delta)
                .all(|(x, d)| *x == 2.5 * d));
            assert!(r[seg.noise()].iter().all(|x| x.abs() == 2.5));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = LatentParams::desk_default(1.0);
        let a = sample_latents(&p, 1, 42, LabelMode::Streaming).unwrap();
        let b = sample_latents(&p, 1, 42, LabelMode::Streaming).unwrap();
        assert_eq!(a, b);
        assert!(sample_latents(&p, 3, 42, LabelMode::Balanced).is_err());
        assert!(sample_latents(&p, 0, 42, LabelMode::Streaming).is_err());
    }

    #[test]
    fn irrelevant_segment_is_centred() {
        let p = LatentParams::desk_default(1.0);
        let b = sample_latents(&p, 100_000, 8, LabelMode::Streaming).unwrap();
        for j in p.segments().irr() {
            let m: f64 = b.latents.iter_rows().map(|r| r[j]).sum::<f64>() / 100_000.0;
            assert!(m.abs() < 0.02, "dim {j}: {m}");
        }
    }

    #[test]
    fn embed_normalizes() {
        let seg = Segments {
            d_cls: 1,
            d_irr: 1,
            d_shift: 1,
            d_noise: 1,
        };
        let b = LatentBatch {
            latents: Matrix::from_rows(&[vec![3.0, 4.0, 0.0, 0.0]]).unwrap(),
            gt_labels: vec![1],
            severity: 0.0,
        };
        let z = embed(&b, &NormWeights::ones(seg)).unwrap();
        assert!((z.data.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((z.data.row(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn embed_is_scale_invariant_and_unit() {
        let p = LatentParams::desk_default(3.0);
        let b = sample_latents(&p, 200, 2, LabelMode::Streaming).unwrap();
        let w = NormWeights::ones(p.segments());
        let z1 = embed(&b, &w).unwrap();
        let z2 = embed(&b, &w.scaled(2.0)).unwrap();
        assert_eq!(z1, z2);
        assert!(z1.max_norm_deviation() < 1e-12);
    }

    #[test]
    fn zero_weights_annihilate() {
        let p = LatentParams::desk_default(0.0);
        let b = sample_latents(&p, 4, 2, LabelMode::Streaming).unwrap();
        let seg = p.segments();
        let mut w = NormWeights::ones(seg);
        // at s = 0 only cls and irr are active
        for j in seg.cls().chain(seg.irr()) {
            w.as_mut_slice()[j] = 0.0;
        }
        let err = embed(&b, &w).unwrap_err();
        assert!(err.to_string().starts_with("annihilated sample"));
    }

    #[test]
    fn clean_text_is_class_aligned() {
        let p = LatentParams {
            mu: vec![1.0],
            d_irr: 2,
            delta: vec![1.0],
            d_noise: 2,
            severity: 1.0,
        };
        let t = make_text_embeddings(&p, 0.0, 3).unwrap();
        assert_eq!(t.row(1), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.row(0), &[-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn clean_text_classifies_perfectly_at_any_severity() {
        for s in [0.0, 2.0, 5.0] {
            let p = LatentParams::desk_default(s);
            let t = make_text_embeddings(&p, 0.0, 1).unwrap();
            let b = sample_latents(&p, 10_000, 17, LabelMode::Streaming).unwrap();
            let z = embed(&b, &NormWeights::ones(p.segments())).unwrap();
            let (labels, _) = predict(&z.data, &t).unwrap();
            assert_eq!(labels, b.gt_labels);
        }
    }

    #[test]
    fn contaminated_text_is_unit_and_deterministic() {
        let p = LatentParams::desk_default(1.0);
        let a = make_text_embeddings(&p, 0.3, 5).unwrap();
        let b = make_text_embeddings(&p, 0.3, 5).unwrap();
        assert_eq!(a, b);
        for c in 0..2 {
            assert!((norm(a.row(c)) - 1.0).abs() < 1e-12);
        }
        assert!(make_text_embeddings(&p, -0.1, 5).is_err());
    }

    #[test]
    fn contamination_degrades_zero_shot_accuracy() {
        let acc = |s: f64| -> f64 {
            (0..3u64)
                .map(|seed| {
                    let p = LatentParams::desk_default(s);
                    let t = make_text_embeddings(&p, 0.3, seed).unwrap();
                    let b = sample_latents(&p, 5_000, 100 + seed, LabelMode::Streaming).unwrap();
                    let z = embed(&b, &NormWeights::ones(p.segments())).unwrap();
                    let (l, _) = predict(&z.data, &t).unwrap();
                    l.iter().zip(&b.gt_labels).filter(|(a, b)| a == b).count() as f64 / 5_000.0
                })
                .sum::<f64>()
                / 3.0
        };
        let accs: Vec<f64> = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&s| acc(s))
            .collect();
        assert!(accs.windows(2).all(|w| w[1] <= w[0] + 1e-3), "{accs:?}");
        assert!(accs[0] - accs[5] > 0.05, "{accs:?}");
    }

    #[test]
    fn stream_shapes_and_interleaving() {
        let a = LatentParams::desk_default(1.0);
        let b = LatentParams::desk_default(3.0);
        let batches = stream(
            vec![ScheduleEntry {
                params: a.clone(),
                n_batches: 5,
                batch_size: 20,
            }],
            9,
        )
        .unwrap();
        assert_eq!(batches.len(), 5);
        assert_eq!(batches.iter().map(LatentBatch::len).sum::<usize>(), 100);

        let sched = vec![
            ScheduleEntry {
                params: a,
                n_batches: 3,
                batch_size: 4,
            },
            ScheduleEntry {
                params: b,
                n_batches: 2,
                batch_size: 4,
            },
        ];
        let inter: Vec<f64> = SyntheticStream::new(sched.clone(), 9, StreamOrder::Interleaved)
            .unwrap()
            .map(|b| b.severity)
            .collect();
        assert_eq!(inter, vec![1.0, 3.0, 1.0, 3.0, 1.0]);

        let seq: Vec<LatentBatch> = SyntheticStream::new(sched.clone(), 9, StreamOrder::Sequential)
            .unwrap()
            .collect();
        let again: Vec<LatentBatch> =
            SyntheticStream::new(sched.clone(), 9, StreamOrder::Sequential)
                .unwrap()
                .collect();
        assert_eq!(seq, again);
        // per-entry streams: interleaving does not change an entry's samples
        let il: Vec<LatentBatch> = SyntheticStream::new(sched, 9, StreamOrder::Interleaved)
            .unwrap()
            .collect();
        assert_eq!(seq[0], il[0]);
        assert_eq!(seq[3], il[1]);
        assert!(SyntheticStream::new(vec![], 1, StreamOrder::Sequential).is_err());
    }

    #[test]
    fn weights_layout_checks() {
        assert!(NormWeights::new(vec![1.0; 3], WeightLayout::Segmented(DESK_SEGMENTS)).is_err());
        let w = NormWeights::ones_flat(5);
        assert_eq!(w.segments(), None);
        assert_eq!(w.dim(), 5);
    }
}
