//! Position error statistics over matched estimate/truth series.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("series lengths differ ({est} estimates vs {truth} truth samples)")]
    LengthMismatch { est: usize, truth: usize },
    #[error("empty series")]
    Empty,
    #[error("no observation epochs to compute availability over")]
    ZeroObservations,
}

fn errors(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<Vec<f64>, MetricsError> {
    if est.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { est: est.len(), truth: truth.len() });
    }
    if est.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).norm()).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean 3-D error norm.
pub fn mae(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    Ok(mean(&errors(est, truth)?))
}

/// Root of the mean squared 3-D error norm.
pub fn rmse(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    let e = errors(est, truth)?;
    Ok((e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt())
}

/// Population standard deviation of the error norms around their mean.
pub fn error_std(est: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    Ok(std_of(&errors(est, truth)?))
}

fn std_of(e: &[f64]) -> f64 {
    let m = mean(e);
    (e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / e.len() as f64).sqrt()
}

/// Fraction of observation epochs that produced a solution.
pub fn availability(solutions: usize, observation_epochs: usize) -> Result<f64, MetricsError> {
    if observation_epochs == 0 {
        return Err(MetricsError::ZeroObservations);
    }
    Ok((solutions as f64 / observation_epochs as f64).min(1.0))
}

/// Empirical CDF at the sorted unique error values.
pub fn cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, &e) in sorted.iter().enumerate() {
        let frac = (k + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => out.push((e, frac)),
        }
    }
    Ok(out)
}

/// Per-sample ENU error components.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisErrors {
    pub t: Vec<f64>,
    pub east: Vec<f64>,
    pub north: Vec<f64>,
    pub up: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub max: f64,
    pub std: f64,
    pub availability: f64,
    pub cdf: Vec<(f64, f64)>,
    pub per_axis: AxisErrors,
}

impl MetricsReport {
    /// Report for estimates matched to truth at `times`; `observation_epochs`
    /// is the denominator of the availability ratio.
    pub fn compute(
        times: &[f64],
        est: &[Vector3<f64>],
        truth: &[Vector3<f64>],
        observation_epochs: usize,
    ) -> Result<Self, MetricsError> {
        let e = errors(est, truth)?;
        if times.len() != e.len() {
            return Err(MetricsError::LengthMismatch { est: e.len(), truth: times.len() });
        }
        let mut per_axis = AxisErrors { t: times.to_vec(), ..Default::default() };
        for (a, b) in est.iter().zip(truth) {
            let d = a - b;
            per_axis.east.push(d.x);
            per_axis.north.push(d.y);
            per_axis.up.push(d.z);
        }
        Ok(Self {
            mae: mean(&e),
            rmse: (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt(),
            max: e.iter().copied().fold(0.0, f64::max),
            std: std_of(&e),
            availability: availability(est.len(), observation_epochs)?,
            cdf: cdf(&e)?,
            per_axis,
        })
    }

    /// `metric,value` table with the summary rows.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (name, v) in [("mae", self.mae), ("rmse", self.rmse), ("max", self.max), ("std", self.std), ("availability", self.availability)] {
            let _ = writeln!(s, "{name},{v}");
        }
        s
    }

    /// Human-readable table; availability as a percentage with one decimal.
    pub fn table(&self) -> String {
        format!(
            "MAE(m)        {:.2}\nRMSE(m)       {:.2}\nMax(m)        {:.2}\nStd(m)        {:.2}\nAvailability  {}\n",
            self.mae,
            self.rmse,
            self.max,
            self.std,
            format_percent(self.availability)
        )
    }

    pub fn cdf_csv(&self) -> String {
        let mut s = String::from("error,fraction\n");
        for (e, f) in &self.cdf {
            let _ = writeln!(s, "{e},{f}");
        }
        s
    }

    pub fn axis_csv(&self) -> String {
        let a = &self.per_axis;
        let mut s = String::from("t,east,north,up\n");
        for k in 0..a.t.len() {
            let _ = writeln!(s, "{},{},{},{}", a.t[k], a.east[k], a.north[k], a.up[k]);
        }
        s
    }
}

/// `0.214` → `"21.4%"`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn offsets(norms: &[f64]) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let truth: Vec<Vector3<f64>> = norms.iter().enumerate().map(|(k, _)| Vector3::new(k as f64, 2.0, -1.0)).collect();
        let est = truth.iter().zip(norms).map(|(t, n)| t + Vector3::new(0.0, 0.0, *n)).collect();
        (est, truth)
    }

    #[test]
    fn hand_examples() {
        let (est, truth) = offsets(&[1.0, 3.0]);
        assert_eq!(mae(&est, &truth).unwrap(), 2.0);
        assert_eq!(rmse(&est, &truth).unwrap(), 5f64.sqrt());
        assert_eq!(error_std(&est, &truth).unwrap(), 1.0);
        assert_eq!(mae(&truth, &truth).unwrap(), 0.0);
        assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
        let (c, t) = offsets(&[2.0, 2.0, 2.0]);
        assert_eq!(mae(&c, &t).unwrap(), 2.0);
        assert_eq!(rmse(&c, &t).unwrap(), 2.0);
        assert_eq!(error_std(&c, &t).unwrap(), 0.0);
    }

    #[test]
    fn availability_examples() {
        assert_eq!(availability(1000, 1000).unwrap(), 1.0);
        assert_eq!(availability(214, 1000).unwrap(), 0.214);
        assert_eq!(format_percent(availability(214, 1000).unwrap()), "21.4%");
        assert_eq!(availability(0, 10).unwrap(), 0.0);
        assert_eq!(availability(0, 0), Err(MetricsError::ZeroObservations));
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf(&[0.7]).unwrap(), vec![(0.7, 1.0)]);
        let c = cdf(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(c[1], (2.0, 2.0 / 3.0));
        assert_eq!(cdf(&[1.0, 1.0, 2.0]).unwrap(), vec![(1.0, 2.0 / 3.0), (2.0, 1.0)]);
        assert_eq!(cdf(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn errors_on_bad_input() {
        let (est, truth) = offsets(&[1.0, 2.0]);
        assert_eq!(mae(&est[..1], &truth), Err(MetricsError::LengthMismatch { est: 1, truth: 2 }));
        assert_eq!(rmse(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn report_csv_schema() {
        let (est, truth) = offsets(&[1.0, 3.0]);
        let r = MetricsReport::compute(&[0.0, 1.0], &est, &truth, 4).unwrap();
        assert_eq!(r.availability, 0.5);
        let csv = r.summary_csv();
        assert!(csv.starts_with("metric,value\nmae,2\nrmse,"));
        assert!(r.table().contains("Availability  50.0%"));
        assert_eq!(r.per_axis.up, vec![1.0, 3.0]);
    }

    proptest! {
        #[test]
        fn std_scales_with_errors(norms in prop::collection::vec(0.0f64..100.0, 1..40), k in 0.1f64..10.0) {
            let (est, truth) = offsets(&norms);
            let scaled: Vec<f64> = norms.iter().map(|n| n * k).collect();
            let (est_k, truth_k) = offsets(&scaled);
            let a = error_std(&est, &truth).unwrap() * k;
            let b = error_std(&est_k, &truth_k).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn metrics_are_permutation_invariant(norms in prop::collection::vec(0.0f64..100.0, 2..40), shift in 1usize..39) {
            let (est, truth) = offsets(&norms);
            let s = shift % norms.len();
            let (mut e2, mut t2) = (est.clone(), truth.clone());
            e2.rotate_left(s);
            t2.rotate_left(s);
            for f in [mae, rmse, error_std] {
                let (a, b) = (f(&est, &truth).unwrap(), f(&e2, &t2).unwrap());
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
            }
        }

        #[test]
        fn cdf_is_monotone_and_ends_at_one(v in prop::collection::vec(0.0f64..50.0, 1..60)) {
            let c = cdf(&v).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(c.last().unwrap().1, 1.0);
            prop_assert!(c.iter().all(|(e, f)| *e >= 0.0 && *f > 0.0));
        }
    }
}
