//! Class-balanced total / inter / intra variances of an embedding set.
//!
//! The averages run over classes that actually have samples: with `C'` the
//! number of non-empty classes, `z̄` the plain mean of all rows and `z̄_c` the
//! class means,
//!
//! ```text
//! total = 1/C' Σ_c mean_{i∈c} ‖z_i − z̄‖²
//! inter = 1/C' Σ_c ‖z̄_c − z̄‖²
//! intra = 1/C' Σ_c mean_{i∈c} ‖z_i − z̄_c‖²
//! ```
//!
//! so that `total = inter + intra` for any labelling. Feeding pseudo-labels
//! instead of ground truth gives the pseudo-label (PL-) variants.

use serde::{Deserialize, Serialize};

use crate::error::{MintError, Result};
use crate::linalg::{dist_sq, norm, Matrix};

/// `N` embedding rows with optional ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub data: Matrix,
    pub labels: Option<Vec<usize>>,
    pub n_classes: usize,
}

impl EmbeddingSet {
    pub fn new(data: Matrix, labels: Option<Vec<usize>>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(MintError::invalid("n_classes must be positive"));
        }
        if let Some(labels) = &labels {
            check_labels(labels, data.rows(), n_classes)?;
        }
        Ok(Self {
            data,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    /// Largest `|‖z_i‖ − 1|` over rows.
    pub fn max_norm_deviation(&self) -> f64 {
        self.data
            .iter_rows()
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn check_labels(labels: &[usize], n: usize, n_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(MintError::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(MintError::LabelOutOfRange {
            label: bad as i64,
            n_classes,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub total: f64,
    pub inter: f64,
    pub intra: f64,
    pub per_class_counts: Vec<usize>,
    pub classes_present: usize,
}

impl VarianceReport {
    pub fn decomposition_residual(&self) -> f64 {
        decomposition_residual(self)
    }
}

/// Variances of `set` under the labelling `labels` (ground truth or pseudo).
pub fn compute_variance_report(set: &EmbeddingSet, labels: &[usize]) -> Result<VarianceReport> {
    variance_report(&set.data, labels, set.n_classes)
}

/// Same as [`compute_variance_report`] over a bare matrix.
pub fn variance_report(
    data: &Matrix,
    labels: &[usize],
    n_classes: usize,
) -> Result<VarianceReport> {
    let n = data.rows();
    if n == 0 {
        return Err(MintError::NoSamples);
    }
    check_labels(labels, n, n_classes)?;
    let d = data.cols();
    // Variances are translation invariant; centring on the first row keeps
    // sums small and makes identical rows give exact zeros.
    let origin = data.row(0).to_vec();
    let mut shifted = vec![0.0; d];
    let shift = |row: &[f64], out: &mut [f64]| {
        for ((o, x), a) in out.iter_mut().zip(row).zip(&origin) {
            *o = x - a;
        }
    };

    let mut global = vec![0.0; d];
    let mut class_sums = vec![vec![0.0; d]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (row, &c) in data.iter_rows().zip(labels) {
        counts[c] += 1;
        shift(row, &mut shifted);
        for ((g, s), x) in global
            .iter_mut()
            .zip(class_sums[c].iter_mut())
            .zip(&shifted)
        {
            *g += x;
            *s += x;
        }
    }
    global.iter_mut().for_each(|g| *g /= n as f64);
    let class_means: Vec<Vec<f64>> = class_sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &k)| {
            if k == 0 {
                s
            } else {
                s.into_iter().map(|x| x / k as f64).collect()
            }
        })
        .collect();

    let mut total_sums = vec![0.0; n_classes];
    let mut intra_sums = vec![0.0; n_classes];
    for (row, &c) in data.iter_rows().zip(labels) {
        shift(row, &mut shifted);
        total_sums[c] += dist_sq(&shifted, &global);
        intra_sums[c] += dist_sq(&shifted, &class_means[c]);
    }

    let (mut total, mut inter, mut intra) = (0.0, 0.0, 0.0);
    let mut present = 0usize;
    for c in 0..n_classes {
        if counts[c] == 0 {
            continue;
        }
        present += 1;
        let k = counts[c] as f64;
        total += total_sums[c] / k;
        intra += intra_sums[c] / k;
        inter += dist_sq(&class_means[c], &global);
    }
    let cp = present as f64;
    Ok(VarianceReport {
        total: total / cp,
        inter: inter / cp,
        intra: intra / cp,
        per_class_counts: counts,
        classes_present: present,
    })
}

/// `|total − inter − intra|`.
pub fn decomposition_residual(report: &VarianceReport) -> f64 {
    (report.total - report.inter - report.intra).abs()
}

/// Sample Pearson correlation coefficient.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(MintError::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(MintError::invalid(
            "pearson correlation needs at least two points",
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MintError::DegenerateSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Second, independent evaluation of the three definitions: one pass per
    /// class over explicit index lists, no shared sums.
    fn brute_force(data: &Matrix, labels: &[usize], c: usize) -> (f64, f64, f64) {
        let n = data.rows();
        let d = data.cols();
        let zbar: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| data.row(i)[j]).sum::<f64>() / n as f64)
            .collect();
        let mut present = 0.0;
        let (mut t, mut e, mut a) = (0.0, 0.0, 0.0);
        for class in 0..c {
            let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            if idx.is_empty() {
                continue;
            }
            present += 1.0;
            let k = idx.len() as f64;
            let zc: Vec<f64> = (0..d)
                .map(|j| idx.iter().map(|&i| data.row(i)[j]).sum::<f64>() / k)
                .collect();
            t += idx
                .iter()
                .map(|&i| {
                    (0..d)
                        .map(|j| (data.row(i)[j] - zbar[j]).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / k;
            a += idx
                .iter()
                .map(|&i| {
                    (0..d)
                        .map(|j| (data.row(i)[j] - zc[j]).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / k;
            e += (0..d).map(|j| (zc[j] - zbar[j]).powi(2)).sum::<f64>();
        }
        (t / present, e / present, a / present)
    }

    fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        let mut m = Matrix::zeros(n, d);
        for i in 0..n {
            let r = m.row_mut(i);
            for x in r.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
            let s = norm(r);
            r.iter_mut().for_each(|x| *x /= s);
        }
        m
    }

    #[test]
    fn two_orthogonal_points() {
        let data = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = variance_report(&data, &[0, 1], 2).unwrap();
        assert!((r.total - 0.5).abs() < 1e-15);
        assert!((r.inter - 0.5).abs() < 1e-15);
        assert_eq!(r.intra, 0.0);
        assert_eq!(r.classes_present, 2);
    }

    #[test]
    fn identical_points_have_zero_variance() {
        let row = vec![0.6, 0.8, 0.0];
        let data = Matrix::from_rows(&vec![row; 7]).unwrap();
        let r = variance_report(&data, &[0, 1, 2, 0, 1, 1, 2], 3).unwrap();
        assert_eq!((r.total, r.inter, r.intra), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_input_is_rejected() {
        let data = Matrix::zeros(0, 3);
        assert!(matches!(
            variance_report(&data, &[], 2),
            Err(MintError::NoSamples)
        ));
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let data = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let err = variance_report(&data, &[2], 2).unwrap_err();
        assert!(err.to_string().starts_with("label out of range"));
    }

    #[test]
    fn empty_classes_are_skipped() {
        // classes 1 and 3 have no samples; C' = 2
        let data = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = variance_report(&data, &[0, 2], 4).unwrap();
        assert_eq!(r.classes_present, 2);
        assert!((r.inter - 0.5).abs() < 1e-15);
        assert_eq!(r.per_class_counts, vec![1, 0, 1, 0]);
    }

    #[test]
    fn single_class_has_no_inter_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_unit_rows(&mut rng, 50, 6);
        let r = variance_report(&data, &[0; 50], 3).unwrap();
        assert_eq!(r.inter, 0.0);
        assert_eq!(r.total, r.intra);
    }

    #[test]
    fn matches_brute_force_on_thousand_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_unit_rows(&mut rng, 1000, 16);
        let labels: Vec<usize> = (0..1000).map(|_| rng.random_range(0..5)).collect();
        let r = variance_report(&data, &labels, 5).unwrap();
        let (t, e, a) = brute_force(&data, &labels, 5);
        assert!((r.total - t).abs() < 1e-12);
        assert!((r.inter - e).abs() < 1e-12);
        assert!((r.intra - a).abs() < 1e-12);
        assert!(decomposition_residual(&r) < 1e-9);
    }

    #[test]
    fn residual_of_exact_reports() {
        let r = VarianceReport {
            total: 1.0,
            inter: 0.3,
            intra: 0.7,
            per_class_counts: vec![],
            classes_present: 0,
        };
        assert_eq!(decomposition_residual(&r), 0.0);
        let r = VarianceReport {
            total: 0.5,
            inter: 0.5,
            intra: 0.0,
            ..r
        };
        assert_eq!(r.decomposition_residual(), 0.0);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson_correlation(&[1., 2., 3.], &[2., 4., 6.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_correlation(&[1., 2., 3.], &[3., 2., 1.]).unwrap() + 1.0).abs() < 1e-15);
        // cov = 4, var_x = var_y = 5 (sums of squared deviations)
        let r = pearson_correlation(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pearson_rejects_constant_series() {
        let err = pearson_correlation(&[1., 1., 1.], &[1., 2., 3.]).unwrap_err();
        assert!(err.to_string().starts_with("degenerate series"));
        assert!(pearson_correlation(&[1.], &[1.]).is_err());
        assert!(pearson_correlation(&[1., 2.], &[1.]).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_and_permutation(seed in any::<u64>(), n in 1usize..120, d in 1usize..12, c in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_unit_rows(&mut rng, n, d);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let r = variance_report(&data, &labels, c).unwrap();
            prop_assert!(decomposition_residual(&r) < 1e-9);
            prop_assert!(r.total >= 0.0 && r.inter >= 0.0 && r.intra >= 0.0);

            // reversed sample order
            let rows: Vec<Vec<f64>> = (0..n).rev().map(|i| data.row(i).to_vec()).collect();
            let rev_labels: Vec<usize> = labels.iter().rev().copied().collect();
            let p = variance_report(&Matrix::from_rows(&rows).unwrap(), &rev_labels, c).unwrap();
            prop_assert!((p.total - r.total).abs() < 1e-12);
            prop_assert!((p.inter - r.inter).abs() < 1e-12);
            prop_assert!((p.intra - r.intra).abs() < 1e-12);
        }

        #[test]
        fn scaling_multiplies_by_square(seed in any::<u64>(), lambda in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_unit_rows(&mut rng, 40, 5);
            let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
            let r = variance_report(&data, &labels, 3).unwrap();
            let s = variance_report(&data.scaled(lambda), &labels, 3).unwrap();
            let l2 = lambda * lambda;
            prop_assert!((s.total - l2 * r.total).abs() < 1e-12 * l2.max(1.0));
            prop_assert!((s.inter - l2 * r.inter).abs() < 1e-12 * l2.max(1.0));
            prop_assert!((s.intra - l2 * r.intra).abs() < 1e-12 * l2.max(1.0));
        }
    }
}
