//! Binary embedding dumps and CSV reports.
//!
//! Dump layout, all integers little-endian:
//!
//! ```text
//! 0   magic     b"MINTDMP1"
//! 8   version   u32 = 1
//! 12  n_samples u64
//! 20  dim       u32
//! 24  n_classes u32
//! 28  flags     u32  bit0 labels, bit1 text
//! 32  n·dim f32 embeddings, row-major
//!     n i32 labels            (bit0)
//!     n_classes·dim f32 text  (bit1)
//! ```
//!
//! Values are `f32` on disk and `f64` in memory. Reading does not renormalize,
//! so a read dump written back is byte-identical to the original.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MintError, Result};
use crate::linalg::{norm, Matrix};
use crate::metrics::{EmbeddingSet, VarianceReport};
use crate::synthetic::{TextEmbeddings, UNIT_TOLERANCE};

pub const MAGIC: &[u8; 8] = b"MINTDMP1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 32;
pub const FLAG_LABELS: u32 = 1;
pub const FLAG_TEXT: u32 = 1 << 1;

/// Rows further than this from unit norm are rejected; between
/// [`UNIT_TOLERANCE`] and this they are accepted with a warning.
pub const NORM_REJECT: f64 = 1e-1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DumpHeader {
    pub version: u32,
    pub n_samples: u64,
    pub dim: u32,
    pub n_classes: u32,
    pub flags: u32,
}

impl DumpHeader {
    pub fn has_labels(&self) -> bool {
        self.flags & FLAG_LABELS != 0
    }

    pub fn has_text(&self) -> bool {
        self.flags & FLAG_TEXT != 0
    }

    /// Total file length implied by the header, `None` on overflow.
    pub fn expected_len(&self) -> Option<u64> {
        let n = self.n_samples;
        let d = u64::from(self.dim);
        let c = u64::from(self.n_classes);
        let mut len = n.checked_mul(d)?.checked_mul(4)?.checked_add(HEADER_LEN)?;
        if self.has_labels() {
            len = len.checked_add(n.checked_mul(4)?)?;
        }
        if self.has_text() {
            len = len.checked_add(c.checked_mul(d)?.checked_mul(4)?)?;
        }
        Some(len)
    }

    fn to_bytes(self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..8].copy_from_slice(MAGIC);
        b[8..12].copy_from_slice(&self.version.to_le_bytes());
        b[12..20].copy_from_slice(&self.n_samples.to_le_bytes());
        b[20..24].copy_from_slice(&self.dim.to_le_bytes());
        b[24..28].copy_from_slice(&self.n_classes.to_le_bytes());
        b[28..32].copy_from_slice(&self.flags.to_le_bytes());
        b
    }

    fn from_bytes(b: &[u8; HEADER_LEN as usize]) -> Self {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        Self {
            version: u32_at(8),
            n_samples: u64::from_le_bytes(b[12..20].try_into().unwrap()),
            dim: u32_at(20),
            n_classes: u32_at(24),
            flags: u32_at(28),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dump {
    pub header: DumpHeader,
    pub embeddings: EmbeddingSet,
    pub text: Option<TextEmbeddings>,
}

pub fn write_dump(path: &Path, set: &EmbeddingSet, text: Option<&TextEmbeddings>) -> Result<()> {
    if set.is_empty() {
        return Err(MintError::NoSamples);
    }
    if set.n_classes < 2 {
        return Err(MintError::invalid("a dump needs at least two classes"));
    }
    if set.dim() == 0 {
        return Err(MintError::invalid("a dump needs positive dimension"));
    }
    if let Some(t) = text {
        if t.dim() != set.dim() {
            return Err(MintError::DimensionMismatch {
                expected: set.dim(),
                found: t.dim(),
            });
        }
        if t.n_classes() != set.n_classes {
            return Err(MintError::DimensionMismatch {
                expected: set.n_classes,
                found: t.n_classes(),
            });
        }
    }
    let narrow = |x: usize, what: &str| {
        u32::try_from(x).map_err(|_| MintError::invalid(format!("{what} exceeds u32")))
    };
    let mut flags = 0;
    if set.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if text.is_some() {
        flags |= FLAG_TEXT;
    }
    let header = DumpHeader {
        version: VERSION,
        n_samples: set.len() as u64,
        dim: narrow(set.dim(), "dim")?,
        n_classes: narrow(set.n_classes, "n_classes")?,
        flags,
    };

    let file = File::create(path).map_err(|e| MintError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| MintError::io(path, e);
    out.write_all(&header.to_bytes()).map_err(io)?;
    for &x in set.data.as_slice() {
        out.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
    }
    if let Some(labels) = &set.labels {
        for &l in labels {
            let l = i32::try_from(l).map_err(|_| MintError::invalid("label exceeds i32"))?;
            out.write_all(&l.to_le_bytes()).map_err(io)?;
        }
    }
    if let Some(t) = text {
        for &x in t.matrix().as_slice() {
            out.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

fn malformed(path: &Path, reason: impl Into<String>) -> MintError {
    MintError::MalformedDump {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_f32s(r: &mut impl Read, count: usize, path: &Path) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf).map_err(|e| MintError::io(path, e))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

/// Check each row's norm; returns how many rows needed a warning.
fn check_rows(m: &Matrix, what: &str, path: &Path) -> Result<usize> {
    let mut warned = 0;
    for (row, r) in m.iter_rows().enumerate() {
        if r.iter().any(|x| !x.is_finite()) {
            return Err(malformed(
                path,
                format!("non-finite value in {what} row {row}"),
            ));
        }
        let n = norm(r);
        let dev = (n - 1.0).abs();
        if dev > NORM_REJECT {
            return Err(MintError::NonNormalizedRow { row, norm: n });
        }
        if dev > UNIT_TOLERANCE {
            warned += 1;
        }
    }
    if warned > 0 {
        log::warn!(
            "{}: {warned} {what} rows deviate from unit norm by more than {UNIT_TOLERANCE}",
            path.display()
        );
    }
    Ok(warned)
}

pub fn read_dump(path: &Path) -> Result<Dump> {
    let file = File::open(path).map_err(|e| MintError::io(path, e))?;
    let actual = file.metadata().map_err(|e| MintError::io(path, e))?.len();
    let mut r = BufReader::new(file);

    let mut hb = [0u8; HEADER_LEN as usize];
    let head_len = actual.min(HEADER_LEN) as usize;
    r.read_exact(&mut hb[..head_len])
        .map_err(|e| MintError::io(path, e))?;
    if head_len < MAGIC.len() || &hb[..8] != MAGIC {
        return Err(MintError::NotADump {
            path: path.to_path_buf(),
        });
    }
    if actual < HEADER_LEN {
        return Err(MintError::Truncated {
            path: path.to_path_buf(),
            at: actual,
            expected: HEADER_LEN,
        });
    }
    let header = DumpHeader::from_bytes(&hb);
    if header.version != VERSION {
        return Err(MintError::VersionMismatch {
            path: path.to_path_buf(),
            found: header.version,
            expected: VERSION,
        });
    }
    if header.flags & !(FLAG_LABELS | FLAG_TEXT) != 0 {
        return Err(malformed(
            path,
            format!("unknown flag bits {:#x}", header.flags),
        ));
    }
    if header.n_samples == 0 {
        return Err(malformed(path, "n_samples is zero"));
    }
    if header.dim == 0 {
        return Err(malformed(path, "dim is zero"));
    }
    if header.n_classes < 2 {
        return Err(malformed(
            path,
            format!("n_classes {} < 2", header.n_classes),
        ));
    }
    let expected = header
        .expected_len()
        .ok_or_else(|| malformed(path, "declared sizes overflow"))?;
    if actual < expected {
        return Err(MintError::Truncated {
            path: path.to_path_buf(),
            at: actual,
            expected,
        });
    }
    if actual > expected {
        return Err(malformed(
            path,
            format!(
                "{} trailing bytes after declared payload",
                actual - expected
            ),
        ));
    }

    // sizes are now bounded by the file length
    let n = header.n_samples as usize;
    let d = header.dim as usize;
    let c = header.n_classes as usize;
    let data = Matrix::from_vec(n, d, read_f32s(&mut r, n * d, path)?)?;
    check_rows(&data, "embedding", path)?;

    let labels = if header.has_labels() {
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf).map_err(|e| MintError::io(path, e))?;
        let labels = buf
            .chunks_exact(4)
            .map(|b| {
                let l = i32::from_le_bytes(b.try_into().unwrap());
                usize::try_from(l)
                    .ok()
                    .filter(|&l| l < c)
                    .ok_or(MintError::LabelOutOfRange {
                        label: i64::from(l),
                        n_classes: c,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(labels)
    } else {
        None
    };

    let text = if header.has_text() {
        let t = Matrix::from_vec(c, d, read_f32s(&mut r, c * d, path)?)?;
        check_rows(&t, "text", path)?;
        Some(TextEmbeddings::from_checked(t))
    } else {
        None
    };

    Ok(Dump {
        header,
        embeddings: EmbeddingSet::new(data, labels, c)?,
        text,
    })
}

/// Write a header plus rows of already-formatted fields.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| MintError::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    w.write_record(header).map_err(err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(MintError::DimensionMismatch {
                expected: header.len(),
                found: row.len(),
            });
        }
        w.write_record(row.iter().map(AsRef::as_ref)).map_err(err)?;
    }
    w.flush().map_err(|e| MintError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| MintError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x}")
}

/// One row of the metrics CSV. Missing values are written as empty fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub severity: Option<f64>,
    pub corruption_tag: String,
    pub gt_total: Option<f64>,
    pub gt_inter: Option<f64>,
    pub gt_intra: Option<f64>,
    pub pl_total: Option<f64>,
    pub pl_inter: Option<f64>,
    pub pl_intra: Option<f64>,
    pub accuracy: Option<f64>,
    pub seed: Option<u64>,
}

impl MetricsRow {
    pub fn new(
        severity: Option<f64>,
        corruption_tag: impl Into<String>,
        gt: Option<&VarianceReport>,
        pl: Option<&VarianceReport>,
        accuracy: Option<f64>,
        seed: Option<u64>,
    ) -> Self {
        Self {
            severity,
            corruption_tag: corruption_tag.into(),
            gt_total: gt.map(|r| r.total),
            gt_inter: gt.map(|r| r.inter),
            gt_intra: gt.map(|r| r.intra),
            pl_total: pl.map(|r| r.total),
            pl_inter: pl.map(|r| r.inter),
            pl_intra: pl.map(|r| r.intra),
            accuracy,
            seed,
        }
    }
}

impl MetricsRow {
    pub fn fields(&self) -> Vec<String> {
        let r = |x: Option<f64>| x.map(fmt_real).unwrap_or_default();
        vec![
            r(self.severity),
            self.corruption_tag.clone(),
            r(self.gt_total),
            r(self.gt_inter),
            r(self.gt_intra),
            r(self.pl_total),
            r(self.pl_inter),
            r(self.pl_intra),
            r(self.accuracy),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        ]
    }
}

/// Metrics CSV with the fixed column order of [`METRICS_HEADER`].
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let fields: Vec<Vec<String>> = rows.iter().map(MetricsRow::fields).collect();
    write_csv(path, &METRICS_HEADER, &fields)
}

pub const METRICS_HEADER: [&str; 10] = [
    "severity",
    "corruption_tag",
    "gt_total",
    "gt_inter",
    "gt_intra",
    "pl_total",
    "pl_inter",
    "pl_intra",
    "accuracy",
    "seed",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::normalized;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn unit_rows(n: usize, d: usize, seed: u64) -> Matrix {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, 3);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                normalized(&v).unwrap()
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    fn sample_set(labels: bool) -> (EmbeddingSet, TextEmbeddings) {
        let data = unit_rows(7, 5, 1);
        let l = labels.then(|| vec![0, 1, 2, 0, 1, 2, 2]);
        let text = TextEmbeddings::new(unit_rows(3, 5, 2)).unwrap();
        (EmbeddingSet::new(data, l, 3).unwrap(), text)
    }

    #[test]
    fn length_arithmetic() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.mintdump");
        let set = EmbeddingSet::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            None,
            2,
        )
        .unwrap();
        write_dump(&p, &set, None).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 48);

        let (set, text) = sample_set(true);
        write_dump(&p, &set, Some(&text)).unwrap();
        assert_eq!(
            std::fs::metadata(&p).unwrap().len(),
            32 + 4 * 7 * 5 + 4 * 7 + 4 * 3 * 5
        );
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempdir().unwrap();
        for (labels, with_text) in [(true, true), (true, false), (false, true), (false, false)] {
            let (set, text) = sample_set(labels);
            let a = dir.path().join("a");
            let b = dir.path().join("b");
            write_dump(&a, &set, with_text.then_some(&text)).unwrap();
            let d = read_dump(&a).unwrap();
            assert_eq!(d.embeddings.labels, set.labels);
            assert_eq!(d.text.is_some(), with_text);
            for (x, y) in d.embeddings.data.as_slice().iter().zip(set.data.as_slice()) {
                assert!((x - y).abs() < 1e-7);
            }
            write_dump(&b, &d.embeddings, d.text.as_ref()).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
    }

    fn written(dir: &Path) -> (std::path::PathBuf, Vec<u8>) {
        let (set, text) = sample_set(true);
        let p = dir.join("ok");
        write_dump(&p, &set, Some(&text)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        (p, bytes)
    }

    fn read_bytes(dir: &Path, bytes: &[u8]) -> Result<Dump> {
        let p = dir.join("crafted");
        std::fs::write(&p, bytes).unwrap();
        read_dump(&p)
    }

    #[test]
    fn crafted_corruptions_are_rejected() {
        let dir = tempdir().unwrap();
        let (_, good) = written(dir.path());
        let d = dir.path();

        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(read_bytes(d, &b), Err(MintError::NotADump { .. })));
        assert!(matches!(
            read_bytes(d, b"MINT"),
            Err(MintError::NotADump { .. })
        ));

        assert!(matches!(
            read_bytes(d, &good[..20]),
            Err(MintError::Truncated { at: 20, .. })
        ));
        let cut = 32 + 4 * 10;
        let e = read_bytes(d, &good[..cut]).unwrap_err();
        assert!(
            e.to_string()
                .starts_with(&format!("truncated at byte {cut}")),
            "{e}"
        );

        let mut b = good.clone();
        b[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            read_bytes(d, &b),
            Err(MintError::VersionMismatch { found: 2, .. })
        ));

        let mut b = good.clone();
        b[28..32].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(
            read_bytes(d, &b),
            Err(MintError::MalformedDump { .. })
        ));

        let mut b = good.clone();
        b.push(0);
        assert!(matches!(
            read_bytes(d, &b),
            Err(MintError::MalformedDump { .. })
        ));

        for (at, zero) in [(12usize, 8usize), (20, 4)] {
            let mut b = good.clone();
            b[at..at + zero].fill(0);
            assert!(matches!(
                read_bytes(d, &b),
                Err(MintError::MalformedDump { .. })
            ));
        }
        let mut b = good.clone();
        b[24..28].copy_from_slice(&1u32.to_le_bytes());
        assert!(matches!(
            read_bytes(d, &b),
            Err(MintError::MalformedDump { .. })
        ));

        // huge declared size must fail on length, not allocation
        let mut b = good.clone();
        b[12..20].copy_from_slice(&(u64::MAX / 8).to_le_bytes());
        assert!(read_bytes(d, &b).is_err());

        let labels_at = 32 + 4 * 7 * 5;
        for bad in [3i32, -1] {
            let mut b = good.clone();
            b[labels_at..labels_at + 4].copy_from_slice(&bad.to_le_bytes());
            let e = read_bytes(d, &b).unwrap_err();
            assert!(matches!(e, MintError::LabelOutOfRange { .. }));
            assert!(e.to_string().starts_with("label out of range"));
        }

        let mut b = good.clone();
        b[32..36].copy_from_slice(&5.0f32.to_le_bytes());
        assert!(matches!(
            read_bytes(d, &b),
            Err(MintError::NonNormalizedRow { row: 0, .. })
        ));

        let mut b = good.clone();
        b[32..36].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_bytes(d, &b),
            Err(MintError::MalformedDump { .. })
        ));

        let text_at = labels_at + 4 * 7;
        let mut b = good;
        b[text_at..text_at + 4].copy_from_slice(&3.0f32.to_le_bytes());
        assert!(matches!(
            read_bytes(d, &b),
            Err(MintError::NonNormalizedRow { .. })
        ));
    }

    #[test]
    fn small_norm_deviation_is_accepted() {
        let dir = tempdir().unwrap();
        let rows = Matrix::from_rows(&[vec![1.01, 0.0], vec![0.0, 1.0]]).unwrap();
        let set = EmbeddingSet::new(rows, None, 2).unwrap();
        let p = dir.path().join("w");
        write_dump(&p, &set, None).unwrap();
        let d = read_dump(&p).unwrap();
        assert!((d.embeddings.data.row(0)[0] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn write_rejects_bad_inputs() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x");
        let (set, _) = sample_set(false);
        let wrong = TextEmbeddings::new(unit_rows(3, 4, 0)).unwrap();
        assert!(write_dump(&p, &set, Some(&wrong)).is_err());
        let one = EmbeddingSet::new(unit_rows(2, 3, 0), None, 1).unwrap();
        assert!(write_dump(&p, &one, None).is_err());
        let empty = EmbeddingSet::new(Matrix::zeros(0, 3), None, 2).unwrap();
        assert!(matches!(
            write_dump(&p, &empty, None),
            Err(MintError::NoSamples)
        ));
        let missing = dir.path().join("nope/x");
        assert!(matches!(
            write_dump(&missing, &set, None),
            Err(MintError::Io { .. })
        ));
    }

    #[test]
    fn csv_examples() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_csv(
            &p,
            &["a", "b"],
            &[
                vec![fmt_real(0.25), "x".into()],
                vec![fmt_real(1.0 / 3.0), "y,z".into()],
            ],
        )
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "a,b\n0.25,x\n0.3333333333333333,\"y,z\"\n");
        assert_eq!(text.lines().count(), 3);

        let empty: Vec<Vec<String>> = vec![];
        write_csv(&p, &["a", "b"], &empty).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n");

        assert!(write_csv(&p, &["a", "b"], &[vec!["1"]]).is_err());
    }

    #[test]
    fn metrics_rows_leave_missing_fields_empty() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let report = VarianceReport {
            total: 0.75,
            inter: 0.5,
            intra: 0.25,
            per_class_counts: vec![1, 1],
            classes_present: 2,
        };
        let row = MetricsRow::new(None, "clean", None, Some(&report), None, Some(7));
        write_metrics(&p, &[row]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
        assert_eq!(text.lines().nth(1).unwrap(), ",clean,,,,0.75,0.5,0.25,,7");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reals_roundtrip_through_text(x in proptest::num::f64::NORMAL) {
            prop_assert_eq!(fmt_real(x).parse::<f64>().unwrap(), x);
        }

        #[test]
        fn dump_rewrite_is_stable(n in 1usize..30, d in 1usize..12, seed in 0u64..500) {
            let dir = tempdir().unwrap();
            let data = unit_rows(n, d, seed);
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let set = EmbeddingSet::new(data, Some(labels), 2).unwrap();
            let a = dir.path().join("a");
            let b = dir.path().join("b");
            write_dump(&a, &set, None).unwrap();
            let back = read_dump(&a).unwrap();
            write_dump(&b, &back.embeddings, None).unwrap();
            prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
    }
}
