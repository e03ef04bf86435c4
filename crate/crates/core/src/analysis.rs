//! Correlation of final OAS with externally supplied error rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_pair<T: Scalar>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            context: "x vs y",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    Ok(())
}

struct Moments {
    sxx: f64,
    syy: f64,
    sxy: f64,
    mean_x: f64,
    mean_y: f64,
}

// two-pass: means first, then centred sums
fn moments<T: Scalar>(x: &[T], y: &[T]) -> Result<Moments> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mean_x = x.iter().map(|v| v.widen()).sum::<f64>() / n;
    let mean_y = y.iter().map(|v| v.widen()).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a.widen() - mean_x;
        let dy = b.widen() - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok(Moments {
        sxx,
        syy,
        sxy,
        mean_x,
        mean_y,
    })
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    let m = moments(x, y)?;
    Ok((m.sxy / (m.sxx * m.syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ordinary least squares `y ~ slope * x + intercept`.
pub fn linear_fit<T: Scalar>(x: &[T], y: &[T]) -> Result<(f64, f64)> {
    let m = moments(x, y)?;
    let slope = m.sxy / m.sxx;
    Ok((slope, m.mean_y - slope * m.mean_x))
}

/// Final OAS and error rate of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub final_oas: f64,
    pub wer: f64,
}

/// One line of `wer.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerEntry {
    pub utterance_id: String,
    pub wer: f64,
}

/// Contents of `corr_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrReport {
    pub r: f64,
    pub abs_r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OasWerReport {
    /// Records sorted by utterance id.
    pub records: Vec<UtteranceRecord>,
    pub corr: CorrReport,
}

impl OasWerReport {
    /// `scatter.tsv` contents: header plus one row per utterance.
    pub fn scatter_tsv(&self) -> String {
        let mut out = String::from("utterance_id\tfinal_oas\twer\n");
        for r in &self.records {
            writeln!(out, "{}\t{}\t{}", r.utterance_id, r.final_oas, r.wer).unwrap();
        }
        out
    }

    /// `corr_report.json` contents.
    pub fn corr_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.corr).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Sorts by id, then correlates and fits final OAS against WER.
pub fn oas_wer_report(records: &[UtteranceRecord]) -> Result<OasWerReport> {
    let mut records = records.to_vec();
    records.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    if let Some(w) = records
        .windows(2)
        .find(|w| w[0].utterance_id == w[1].utterance_id)
    {
        return Err(Error::InvalidArgument(format!(
            "duplicate utterance id {:?}",
            w[0].utterance_id
        )));
    }
    for r in &records {
        if !(r.final_oas.is_finite() && r.wer.is_finite()) || r.wer < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "utterance {:?}: values must be finite and wer >= 0",
                r.utterance_id
            )));
        }
    }
    let x: Vec<f64> = records.iter().map(|r| r.final_oas).collect();
    let y: Vec<f64> = records.iter().map(|r| r.wer).collect();
    let r = pearson(&x, &y)?;
    let (slope, intercept) = linear_fit(&x, &y)?;
    Ok(OasWerReport {
        corr: CorrReport {
            r,
            abs_r: r.abs(),
            slope,
            intercept,
            n: records.len(),
        },
        records,
    })
}

/// Joins per-utterance final OAS with WER entries by id. Ids present on only
/// one side are returned separately.
pub fn join_by_id(
    oas: &[(String, f64)],
    wer: &[WerEntry],
) -> Result<(Vec<UtteranceRecord>, Vec<String>)> {
    let mut wer_by_id = BTreeMap::new();
    for w in wer {
        if wer_by_id.insert(w.utterance_id.as_str(), w.wer).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate wer entry for {:?}",
                w.utterance_id
            )));
        }
    }
    let mut records = Vec::with_capacity(oas.len());
    let mut unmatched = Vec::new();
    for (id, v) in oas {
        match wer_by_id.remove(id.as_str()) {
            Some(wer) => records.push(UtteranceRecord {
                utterance_id: id.clone(),
                final_oas: *v,
                wer,
            }),
            None => unmatched.push(id.clone()),
        }
    }
    unmatched.extend(wer_by_id.keys().map(|k| k.to_string()));
    unmatched.sort();
    Ok((records, unmatched))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        let (s, b) = linear_fit(&[0.0, 1.0, 2.0, 5.0], &[1.0, 3.0, 5.0, 11.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_points_interpolate() {
        let (s, b) = linear_fit(&[1.0, 3.0], &[4.0, 0.0]).unwrap();
        assert!((s + 2.0).abs() < 1e-12 && (b - 6.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(Error::ZeroVariance("y"))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[5.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn report_is_order_independent() {
        let recs: Vec<UtteranceRecord> = (0..10)
            .map(|i| UtteranceRecord {
                utterance_id: format!("u{i:02}"),
                final_oas: 0.9 - 0.05 * i as f64,
                wer: 0.02 + 0.1 * i as f64,
            })
            .collect();
        let a = oas_wer_report(&recs).unwrap();
        let mut shuffled = recs.clone();
        shuffled.reverse();
        shuffled.swap(2, 7);
        let b = oas_wer_report(&shuffled).unwrap();
        assert_eq!(a.scatter_tsv(), b.scatter_tsv());
        assert_eq!(a.corr_json(), b.corr_json());
        assert!((a.corr.r + 1.0).abs() < 1e-12);
        assert!(a
            .scatter_tsv()
            .starts_with("utterance_id\tfinal_oas\twer\nu00\t"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = UtteranceRecord {
            utterance_id: "a".into(),
            final_oas: 0.5,
            wer: 0.1,
        };
        assert!(oas_wer_report(&[r.clone(), r]).is_err());
    }

    #[test]
    fn join_reports_unmatched() {
        let oas = vec![("a".to_string(), 0.5), ("b".to_string(), 0.6)];
        let wer = vec![
            WerEntry {
                utterance_id: "b".into(),
                wer: 0.1,
            },
            WerEntry {
                utterance_id: "c".into(),
                wer: 0.2,
            },
        ];
        let (recs, unmatched) = join_by_id(&oas, &wer).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(unmatched, vec!["a".to_string(), "c".to_string()]);
    }

    fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn affine_invariance((x, y) in sample(), a in 0.1f64..5.0, neg in any::<bool>(), b in -3.0f64..3.0) {
            let a = if neg { -a } else { a };
            let r = pearson(&x, &y).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson(&xs, &y).unwrap();
            prop_assert!((r2 - a.signum() * r).abs() < 1e-12);
            prop_assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-15);
        }

        #[test]
        fn residuals_orthogonal((x, y) in sample()) {
            let (s, b) = linear_fit(&x, &y).unwrap();
            let res: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi - (s * xi + b)).collect();
            prop_assert!(res.iter().sum::<f64>().abs() < 1e-9);
            prop_assert!(res.iter().zip(&x).map(|(r, xi)| r * xi).sum::<f64>().abs() < 1e-9);
        }
    }
}
