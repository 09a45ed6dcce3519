//! Accuracy and separability metrics.

use ndarray::{Array1, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::pose::ForecastSample;

fn check(y: &ArrayView3<'_, f32>, y_hat: &ArrayView3<'_, f32>) -> Result<()> {
    if y.dim() != y_hat.dim() {
        return Err(Error::shape("mpjpe", y.shape(), y_hat.shape()));
    }
    if y.dim().2 != 3 || y.dim().1 == 0 {
        return Err(Error::shape(
            "mpjpe coordinates",
            &[y.dim().0, y.dim().1.max(1), 3],
            y.shape(),
        ));
    }
    Ok(())
}

/// Per-frame mean per-joint position error, shape `(T,)`.
pub fn mpjpe(y: ArrayView3<'_, f32>, y_hat: ArrayView3<'_, f32>) -> Result<Array1<f64>> {
    check(&y, &y_hat)?;
    let (t, j, _) = y.dim();
    Ok(Array1::from_shape_fn(t, |tt| {
        let sum: f64 = (0..j)
            .map(|jj| {
                (0..3)
                    .map(|a| {
                        let d = y[[tt, jj, a]] as f64 - y_hat[[tt, jj, a]] as f64;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        sum / j as f64
    }))
}

/// Mean of [`mpjpe`] over frames.
pub fn a_mpjpe(y: ArrayView3<'_, f32>, y_hat: ArrayView3<'_, f32>) -> Result<f64> {
    let per_frame = mpjpe(y, y_hat)?;
    Ok(per_frame.mean().unwrap_or(0.0))
}

/// Average pairwise A-MPJPE between independently trained runs.
///
/// `runs[r][i]` is run `r`'s prediction for sample `i`; the average is taken
/// over samples and unordered run pairs.
pub fn ap_mpjpe<A: AsRef<[ndarray::Array3<f32>]>>(runs: &[A]) -> Result<f64> {
    if runs.len() < 2 {
        return Err(Error::invalid(
            "ap_mpjpe",
            format!("needs at least 2 runs, got {}", runs.len()),
        ));
    }
    let n = runs[0].as_ref().len();
    if n == 0 || runs.iter().any(|r| r.as_ref().len() != n) {
        return Err(Error::invalid(
            "ap_mpjpe",
            "every run must predict the same non-empty sample set",
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for r in 0..runs.len() {
            for s in r + 1..runs.len() {
                total += a_mpjpe(runs[r].as_ref()[i].view(), runs[s].as_ref()[i].view())?;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn auroc(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::invalid(
            "auroc",
            "both score lists must be non-empty",
        ));
    }
    if negatives.iter().chain(positives).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("auroc scores"));
    }
    // Mann-Whitney U with mid-ranks for ties.
    let mut all: Vec<(f64, bool)> = negatives
        .iter()
        .map(|&v| (v, false))
        .chain(positives.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut k = i;
        while k + 1 < all.len() && all[k + 1].0 == all[i].0 {
            k += 1;
        }
        // ranks are 1-based: the tie group spans ranks i+1 ..= k+1
        let mid_rank = (i + k + 2) as f64 / 2.0;
        rank_sum_pos += mid_rank * all[i..=k].iter().filter(|e| e.1).count() as f64;
        i = k + 1;
    }
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// One point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
}

/// ROC points for the rule "flag as positive when score >= threshold",
/// sweeping thresholds from high to low.
pub fn roc_curve(negatives: &[f64], positives: &[f64]) -> Result<Vec<RocPoint>> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::invalid("roc", "both score lists must be non-empty"));
    }
    let mut thresholds: Vec<f64> = negatives.iter().chain(positives).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
    }];
    for th in thresholds {
        points.push(RocPoint {
            threshold: th,
            false_positive_rate: negatives.iter().filter(|&&v| v >= th).count() as f64
                / negatives.len() as f64,
            true_positive_rate: positives.iter().filter(|&&v| v >= th).count() as f64
                / positives.len() as f64,
        });
    }
    Ok(points)
}

/// 1-based future-frame index for a horizon in milliseconds.
pub fn horizon_frame(horizon_ms: f64, fps: f64) -> Result<usize> {
    if !(horizon_ms > 0.0 && fps > 0.0) {
        return Err(Error::invalid(
            "horizon",
            format!("{horizon_ms} ms at {fps} fps"),
        ));
    }
    let exact = horizon_ms * fps / 1000.0;
    let frame = exact.round();
    if (exact - frame).abs() > 1e-6 {
        return Err(Error::invalid(
            "horizon",
            format!(
                "{horizon_ms} ms is not a multiple of the {} ms frame period",
                1000.0 / fps
            ),
        ));
    }
    Ok(frame as usize)
}

/// MPJPE at selected horizons, averaged over all windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonTable {
    pub horizons_ms: Vec<f64>,
    pub mpjpe_mm: Vec<f64>,
    pub num_samples: usize,
}

impl HorizonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon_ms,mpjpe_mm\n");
        for (h, m) in self.horizons_ms.iter().zip(&self.mpjpe_mm) {
            out.push_str(&format!("{h},{m}\n"));
        }
        out
    }
}

/// Mean per-frame MPJPE over `samples` for `forecaster`, shape `(T,)`.
pub fn mean_mpjpe_curve(
    samples: &[ForecastSample],
    forecaster: &dyn Forecaster,
) -> Result<Array1<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("evaluation", "no samples"))?;
    let mut acc = Array1::<f64>::zeros(first.horizon());
    for s in samples {
        let out = forecaster.forecast(s.observed.view())?;
        let curve = mpjpe(s.future.view(), out.y_hat.view())?;
        if curve.len() != acc.len() {
            return Err(Error::shape(
                "evaluation horizon",
                acc.shape(),
                curve.shape(),
            ));
        }
        acc += &curve;
    }
    Ok(acc / samples.len() as f64)
}

pub fn horizon_table(
    samples: &[ForecastSample],
    forecaster: &dyn Forecaster,
    horizons_ms: &[f64],
    fps: f64,
) -> Result<HorizonTable> {
    let curve = mean_mpjpe_curve(samples, forecaster)?;
    table_from_curve(curve.view(), horizons_ms, fps, samples.len())
}

/// Picks horizon entries out of a per-frame curve.
pub fn table_from_curve(
    curve: ndarray::ArrayView1<'_, f64>,
    horizons_ms: &[f64],
    fps: f64,
    num_samples: usize,
) -> Result<HorizonTable> {
    let mut mpjpe_mm = Vec::with_capacity(horizons_ms.len());
    for &h in horizons_ms {
        let frame = horizon_frame(h, fps)?;
        if frame == 0 || frame > curve.len() {
            return Err(Error::invalid(
                "horizon",
                format!(
                    "{h} ms maps to frame {frame}, beyond the {}-frame forecast",
                    curve.len()
                ),
            ));
        }
        mpjpe_mm.push(curve[frame - 1]);
    }
    Ok(HorizonTable {
        horizons_ms: horizons_ms.to_vec(),
        mpjpe_mm,
        num_samples,
    })
}

/// Relative improvement `(baseline - candidate) / baseline` per entry.
pub fn gains(baseline: &[f64], candidate: &[f64]) -> Result<Vec<f64>> {
    if baseline.len() != candidate.len() {
        return Err(Error::shape(
            "gain table",
            &[baseline.len()],
            &[candidate.len()],
        ));
    }
    Ok(baseline
        .iter()
        .zip(candidate)
        .map(|(&b, &c)| if b == 0.0 { 0.0 } else { (b - c) / b })
        .collect())
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mpjpe_cases() {
        let y = Array3::<f32>::zeros((3, 2, 3));
        assert!(mpjpe(y.view(), y.view()).unwrap().iter().all(|&v| v == 0.0));
        let mut off = y.clone();
        for t in 0..3 {
            for j in 0..2 {
                off[[t, j, 0]] = 3.0;
                off[[t, j, 2]] = 4.0;
            }
        }
        assert!(mpjpe(y.view(), off.view())
            .unwrap()
            .iter()
            .all(|&v| v == 5.0));
        let mut two = Array3::<f32>::zeros((1, 2, 3));
        two[[0, 0, 0]] = 1.0;
        two[[0, 1, 1]] = 2.0;
        assert_eq!(
            mpjpe(Array3::zeros((1, 2, 3)).view(), two.view()).unwrap()[0],
            1.5
        );
        assert!(mpjpe(y.view(), Array3::zeros((3, 1, 3)).view()).is_err());
    }

    #[test]
    fn a_mpjpe_cases() {
        let y = Array3::<f32>::zeros((2, 1, 3));
        let mut y_hat = y.clone();
        y_hat[[0, 0, 0]] = 1.0;
        y_hat[[1, 0, 1]] = 3.0;
        assert_eq!(a_mpjpe(y.view(), y_hat.view()).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array3::from_shape_fn((5, 4, 3), |_| rng.random_range(-9.0f32..9.0));
        let b = Array3::from_shape_fn((5, 4, 3), |_| rng.random_range(-9.0f32..9.0));
        let composed = mpjpe(a.view(), b.view()).unwrap().mean().unwrap();
        assert_eq!(a_mpjpe(a.view(), b.view()).unwrap(), composed);
    }

    #[test]
    fn ap_mpjpe_cases() {
        let base = Array3::<f32>::from_elem((2, 2, 3), 4.0);
        assert_eq!(
            ap_mpjpe(&[vec![base.clone()], vec![base.clone()], vec![base.clone()]]).unwrap(),
            0.0
        );
        let mut shifted = base.clone();
        shifted
            .slice_mut(ndarray::s![.., .., 2])
            .mapv_inplace(|v| v + 5.0);
        assert_eq!(ap_mpjpe(&[vec![base.clone()], vec![shifted]]).unwrap(), 5.0);
        assert!(ap_mpjpe(&[vec![base.clone()]]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let runs: Vec<Vec<Array3<f32>>> = (0..3)
            .map(|_| {
                (0..2)
                    .map(|_| Array3::from_shape_fn((3, 2, 3), |_| rng.random_range(-5.0f32..5.0)))
                    .collect()
            })
            .collect();
        let mut brute = 0.0;
        for i in 0..2 {
            for (r, s) in [(0, 1), (0, 2), (1, 2)] {
                brute += a_mpjpe(runs[r][i].view(), runs[s][i].view()).unwrap();
            }
        }
        assert!((ap_mpjpe(&runs).unwrap() - brute / 6.0).abs() < 1e-12);
        let reversed: Vec<_> = runs.iter().rev().cloned().collect();
        assert!((ap_mpjpe(&runs).unwrap() - ap_mpjpe(&reversed).unwrap()).abs() < 1e-12);
    }

    fn brute_auroc(neg: &[f64], pos: &[f64]) -> f64 {
        let mut wins = 0.0;
        for &p in pos {
            for &n in neg {
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.9, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3, 0.1, 0.3], &[0.1, 0.3, 0.3]).unwrap(), 0.5);
        assert_eq!(brute_auroc(&[0.1, 0.2], &[0.15, 0.3]), 0.75);
        assert_eq!(auroc(&[0.1, 0.2], &[0.15, 0.3]).unwrap(), 0.75);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn roc_curve_ends_at_one() {
        let pts = roc_curve(&[0.1, 0.2], &[0.15, 0.3]).unwrap();
        assert_eq!(pts.first().unwrap().true_positive_rate, 0.0);
        let last = pts.last().unwrap();
        assert_eq!(
            (last.false_positive_rate, last.true_positive_rate),
            (1.0, 1.0)
        );
    }

    #[test]
    fn horizon_mapping_at_25fps() {
        let expected = [
            (80.0, 2),
            (160.0, 4),
            (320.0, 8),
            (400.0, 10),
            (560.0, 14),
            (720.0, 18),
            (880.0, 22),
            (1000.0, 25),
        ];
        for (ms, frame) in expected {
            assert_eq!(horizon_frame(ms, 25.0).unwrap(), frame);
        }
        assert!(horizon_frame(100.0, 25.0).is_err());
        let curve = Array1::from_vec((1..=25).map(|v| v as f64).collect());
        assert!(table_from_curve(curve.view(), &[1040.0], 25.0, 1).is_err());
        let t = table_from_curve(curve.view(), &[80.0, 1000.0], 25.0, 1).unwrap();
        assert_eq!(t.mpjpe_mm, vec![2.0, 25.0]);
        assert_eq!(t.to_csv(), "horizon_ms,mpjpe_mm\n80,2\n1000,25\n");
    }

    #[test]
    fn gain_example() {
        let g = gains(&[17.7], &[13.2]).unwrap()[0];
        assert!((g * 100.0 - 25.4).abs() < 0.05);
        assert_eq!(gains(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn auroc_matches_brute_force(
            neg in proptest::collection::vec(0u8..20, 1..15),
            pos in proptest::collection::vec(0u8..20, 1..15),
        ) {
            let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
            let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
            let a = auroc(&neg, &pos).unwrap();
            proptest::prop_assert!((a - brute_auroc(&neg, &pos)).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&a));
            let b = auroc(&pos, &neg).unwrap();
            proptest::prop_assert!((a + b - 1.0).abs() < 1e-12);
            let warped = |v: &Vec<f64>| v.iter().map(|x| (x * 0.3).exp() + 2.0).collect::<Vec<_>>();
            proptest::prop_assert!((auroc(&warped(&neg), &warped(&pos)).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn mpjpe_is_symmetric_and_nonnegative(vals in proptest::collection::vec(-50.0f32..50.0, 24)) {
            let a = Array3::from_shape_vec((2, 2, 3), vals[..12].to_vec()).unwrap();
            let b = Array3::from_shape_vec((2, 2, 3), vals[12..].to_vec()).unwrap();
            let ab = mpjpe(a.view(), b.view()).unwrap();
            let ba = mpjpe(b.view(), a.view()).unwrap();
            proptest::prop_assert_eq!(&ab, &ba);
            proptest::prop_assert!(ab.iter().all(|&v| v >= 0.0));
        }
    }
}
