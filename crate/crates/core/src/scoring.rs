//! Coverage, interval scores and threshold-weighted CRPS.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::norm_cdf;

/// Minimum number of uniform nodes in the twCRPS integration grid.
pub const TWCRPS_GRID_NODES: usize = 1000;

/// Fraction of intervals that contain `truth`.
pub fn empirical_coverage(intervals: &[(f64, f64)], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::invalid("no intervals"));
    }
    let mut hit = 0usize;
    for &(l, u) in intervals {
        if !(l <= u) {
            return Err(Error::invalid(format!("interval [{l}, {u}] has l > u")));
        }
        hit += (l <= truth && truth <= u) as usize;
    }
    Ok(hit as f64 / intervals.len() as f64)
}

/// Interval score of a central (1 − α*) interval.
pub fn interval_score(l: f64, u: f64, truth: f64, alpha_star: f64) -> Result<f64> {
    if !(l <= u) {
        return Err(Error::invalid(format!("interval [{l}, {u}] has l > u")));
    }
    if !(alpha_star > 0.0 && alpha_star < 1.0) {
        return Err(Error::invalid(format!("α* must lie in (0, 1), got {alpha_star}")));
    }
    let pen = 2.0 / alpha_star;
    let mut s = u - l;
    if truth < l {
        s += pen * (l - truth);
    }
    if truth > u {
        s += pen * (truth - u);
    }
    Ok(s)
}

/// (α*/2) times the mean interval score.
pub fn mean_interval_score(intervals: &[(f64, f64)], truth: f64, alpha_star: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::invalid("no intervals"));
    }
    let mut total = 0.0;
    for &(l, u) in intervals {
        total += interval_score(l, u, truth, alpha_star)?;
    }
    Ok(alpha_star / 2.0 * total / intervals.len() as f64)
}

/// Weight functions of the threshold-weighted CRPS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TwWeight {
    /// w ≡ 1.
    Unweighted,
    /// w(z) = 1{z ≤ a}.
    LowerTail(f64),
    /// w(z) = Φ((z − μ)/σ).
    GaussianCdf { mu: f64, sigma: f64 },
    /// w(z) = 1{z ≥ a}.
    UpperTail(f64),
}

impl TwWeight {
    fn cutoff(&self) -> Option<f64> {
        match *self {
            TwWeight::LowerTail(a) | TwWeight::UpperTail(a) => Some(a),
            _ => None,
        }
    }

    /// ∫ w over [lo, hi]; exact for the indicator weights, trapezoidal
    /// otherwise. The cutoff is always a grid node.
    fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let len = hi - lo;
        match *self {
            TwWeight::Unweighted => len,
            TwWeight::LowerTail(a) => (hi.min(a) - lo).max(0.0),
            TwWeight::UpperTail(a) => (hi - lo.max(a)).max(0.0),
            TwWeight::GaussianCdf { mu, sigma } => {
                0.5 * len * (norm_cdf((lo - mu) / sigma) + norm_cdf((hi - mu) / sigma))
            }
        }
    }
}

/// ∫ w(z)(F̂(z) − 1{z ≥ y})² dz for the empirical CDF F̂ of `samples`.
///
/// The grid spans [min − 3·range, max + 3·range] of the samples and the
/// truth with at least [`TWCRPS_GRID_NODES`] uniform nodes; the sample
/// values, the truth and any weight cutoff are added as nodes so that the
/// step function is constant on every grid interval.
pub fn twcrps(samples: &[f64], truth: f64, weight: TwWeight) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid("twCRPS needs at least two samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) || !truth.is_finite() {
        return Err(Error::invalid("samples and truth must be finite"));
    }
    if let TwWeight::GaussianCdf { sigma, .. } = weight {
        if !(sigma > 0.0) {
            return Err(Error::invalid("Gaussian weight needs σ > 0"));
        }
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0].min(truth);
    let hi = sorted[sorted.len() - 1].max(truth);
    let range = hi - lo;
    if range == 0.0 {
        return Ok(0.0);
    }
    let (a, b) = (lo - 3.0 * range, hi + 3.0 * range);
    if let Some(c) = weight.cutoff() {
        if c < a || c > b {
            log::warn!("twCRPS weight cutoff {c} lies outside the integration grid [{a}, {b}]");
        }
    }
    let mut nodes: Vec<f64> = (0..TWCRPS_GRID_NODES)
        .map(|k| a + (b - a) * k as f64 / (TWCRPS_GRID_NODES - 1) as f64)
        .collect();
    nodes.extend_from_slice(&sorted);
    nodes.push(truth);
    if let Some(c) = weight.cutoff().filter(|c| *c > a && *c < b) {
        nodes.push(c);
    }
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let m = sorted.len() as f64;
    let mut below = 0usize;
    let mut total = 0.0;
    for w in nodes.windows(2) {
        let (z0, z1) = (w[0], w[1]);
        // F̂ is right-continuous, so on (z0, z1) it equals the count of samples ≤ z0
        while below < sorted.len() && sorted[below] <= z0 {
            below += 1;
        }
        let f = below as f64 / m;
        let h = if truth <= z0 { 1.0 } else { 0.0 };
        let d = f - h;
        if d != 0.0 {
            total += d * d * weight.integrate(z0, z1);
        }
    }
    Ok(total)
}

/// Sample-based CRPS, mean|X − y| − ½ mean|X − X′|.
pub fn crps_sample(samples: &[f64], truth: f64) -> f64 {
    let m = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let e1 = sorted.iter().map(|x| (x - truth).abs()).sum::<f64>() / m;
    // Σ_{i,j}|x_i − x_j| = 2 Σ_i (2i − m + 1) x_(i)
    let pair: f64 = sorted.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - m + 1.0) * x).sum::<f64>() * 2.0;
    e1 - 0.5 * pair / (m * m)
}

/// Scores of one fit against the truth and the holdout data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub coverage_alpha: f64,
    pub coverage_rho: f64,
    pub interval_score_alpha: f64,
    pub interval_score_rho: f64,
    pub twcrps_1: f64,
    pub twcrps_2: f64,
    pub twcrps_3: f64,
    pub walltime_sec: f64,
}

/// One line of an aggregated results table; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub scenario: String,
    pub method: String,
    pub n_reps: usize,
    pub coverage_alpha: Option<f64>,
    pub coverage_rho: Option<f64>,
    pub interval_score_alpha: Option<f64>,
    pub interval_score_rho: Option<f64>,
    pub twcrps: [Option<f64>; 3],
    pub walltime_min: Option<f64>,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => "NA".into(),
    }
}

/// Aligned plain-text table: method, coverage and interval score for α and
/// ρ, the three twCRPS columns and walltime in minutes.
pub fn format_results_table(rows: &[ResultsRow]) -> String {
    let header = [
        "scenario", "method", "reps", "cov_alpha", "cov_rho", "is_alpha", "is_rho", "twcrps_1", "twcrps_2",
        "twcrps_3", "walltime_min",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.scenario.clone(),
                r.method.clone(),
                r.n_reps.to_string(),
                cell(r.coverage_alpha, 2),
                cell(r.coverage_rho, 2),
                cell(r.interval_score_alpha, 4),
                cell(r.interval_score_rho, 4),
                cell(r.twcrps[0], 4),
                cell(r.twcrps[1], 4),
                cell(r.twcrps[2], 4),
                cell(r.walltime_min, 2),
            ]
        })
        .collect();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for row in &body {
        line(row.iter().map(|s| s.as_str()).collect(), &mut out);
    }
    out
}

/// Parses a table produced by [`format_results_table`].
pub fn parse_results_table(text: &str) -> Result<Vec<ResultsRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Data("empty table".into()))?.split_whitespace().collect();
    if header.len() != 11 || header[0] != "scenario" {
        return Err(Error::Data("unexpected table header".into()));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s == "NA" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Data(format!("bad number {s:?}")))
        }
    };
    lines
        .map(|l| {
            let c: Vec<&str> = l.split_whitespace().collect();
            if c.len() != 11 {
                return Err(Error::Data(format!("table row has {} cells: {l:?}", c.len())));
            }
            Ok(ResultsRow {
                scenario: c[0].into(),
                method: c[1].into(),
                n_reps: c[2].parse().map_err(|_| Error::Data(format!("bad count {:?}", c[2])))?,
                coverage_alpha: num(c[3])?,
                coverage_rho: num(c[4])?,
                interval_score_alpha: num(c[5])?,
                interval_score_rho: num(c[6])?,
                twcrps: [num(c[7])?, num(c[8])?, num(c[9])?],
                walltime_min: num(c[10])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coverage_counts() {
        let iv = vec![(0.0, 1.0); 10];
        assert_eq!(empirical_coverage(&iv, 0.5).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&iv, 2.0).unwrap(), 0.0);
        let mixed: Vec<(f64, f64)> = (0..10).map(|i| if i < 7 { (0.0, 1.0) } else { (2.0, 3.0) }).collect();
        assert_eq!(empirical_coverage(&mixed, 0.5).unwrap(), 0.7);
        assert!(empirical_coverage(&[(1.0, 0.0)], 0.5).is_err());
        assert!(empirical_coverage(&[], 0.5).is_err());
    }

    #[test]
    fn interval_score_cases() {
        assert!((interval_score(0.2, 0.6, 0.4, 0.05).unwrap() - 0.4).abs() < 1e-15);
        assert!((interval_score(0.2, 0.6, 0.7, 0.05).unwrap() - 4.4).abs() < 1e-12);
        assert_eq!(interval_score(0.3, 0.3, 0.3, 0.05).unwrap(), 0.0);
        assert!(interval_score(0.6, 0.2, 0.3, 0.05).is_err());
        let m = mean_interval_score(&[(0.2, 0.6), (0.2, 0.6)], 0.7, 0.05).unwrap();
        assert!((m - 0.025 * 4.4).abs() < 1e-12);
    }

    #[test]
    fn twcrps_two_point_closed_form() {
        let got = twcrps(&[0.0, 1.0], 0.5, TwWeight::Unweighted).unwrap();
        assert!((got - 0.25).abs() < 1e-12);
        assert!((crps_sample(&[0.0, 1.0], 0.5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn point_mass_at_truth_scores_zero() {
        for w in [
            TwWeight::Unweighted,
            TwWeight::LowerTail(0.3),
            TwWeight::GaussianCdf { mu: 0.0, sigma: 1.0 },
            TwWeight::UpperTail(0.1),
        ] {
            assert_eq!(twcrps(&[0.4; 5], 0.4, w).unwrap(), 0.0);
        }
    }

    #[test]
    fn lower_tail_translation() {
        let x = [0.1, 0.5, 0.35, 0.9, 0.72];
        let a = twcrps(&x, 0.6, TwWeight::LowerTail(0.5)).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v + 3.0).collect();
        let b = twcrps(&xs, 3.6, TwWeight::LowerTail(3.5)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn weights_split_the_unweighted_score() {
        let x = [0.1, 0.5, 0.35, 0.9, 0.72, 0.2];
        let lo = twcrps(&x, 0.4, TwWeight::LowerTail(0.45)).unwrap();
        let hi = twcrps(&x, 0.4, TwWeight::UpperTail(0.45)).unwrap();
        let all = twcrps(&x, 0.4, TwWeight::Unweighted).unwrap();
        assert!((lo + hi - all).abs() < 1e-12);
    }

    #[test]
    fn table_round_trip() {
        let rows = vec![
            ResultsRow {
                scenario: "s1".into(),
                method: "full".into(),
                n_reps: 5,
                coverage_alpha: Some(1.0),
                coverage_rho: Some(0.8),
                interval_score_alpha: Some(0.0123),
                interval_score_rho: None,
                twcrps: [Some(0.05), Some(0.1), Some(0.01)],
                walltime_min: Some(0.25),
            },
            ResultsRow {
                scenario: "s1".into(),
                method: "vecchia-m10".into(),
                n_reps: 0,
                coverage_alpha: None,
                coverage_rho: None,
                interval_score_alpha: None,
                interval_score_rho: None,
                twcrps: [None; 3],
                walltime_min: None,
            },
        ];
        let text = format_results_table(&rows);
        let back = parse_results_table(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].interval_score_alpha, Some(0.0123));
        assert_eq!(back[1], rows[1]);
    }

    proptest! {
        #[test]
        fn unweighted_matches_sample_crps(x in prop::collection::vec(-5.0f64..5.0, 2..60), y in -6.0f64..6.0) {
            let g = twcrps(&x, y, TwWeight::Unweighted).unwrap();
            let c = crps_sample(&x, y);
            prop_assert!(g >= 0.0);
            prop_assert!((g - c).abs() <= 1e-3 * c.abs().max(1e-12) + 1e-12, "{} {}", g, c);
        }

        #[test]
        fn scores_are_non_negative(x in prop::collection::vec(-5.0f64..5.0, 2..40), y in -6.0f64..6.0,
                                    a in -5.0f64..5.0, s in 0.1f64..3.0) {
            for w in [TwWeight::LowerTail(a), TwWeight::UpperTail(a), TwWeight::GaussianCdf { mu: a, sigma: s }] {
                prop_assert!(twcrps(&x, y, w).unwrap() >= 0.0);
            }
        }

        #[test]
        fn covered_interval_score_is_width(l in -3.0f64..3.0, w in 0.0f64..2.0, f in 0.0f64..1.0) {
            let u = l + w;
            let t = l + f * w;
            prop_assert!((interval_score(l, u, t, 0.05).unwrap() - (u - l)).abs() < 1e-12);
        }

        #[test]
        fn draw_order_is_irrelevant(mut x in prop::collection::vec(-5.0f64..5.0, 2..30), y in -6.0f64..6.0) {
            let a = twcrps(&x, y, TwWeight::UpperTail(0.0)).unwrap();
            x.reverse();
            prop_assert_eq!(a, twcrps(&x, y, TwWeight::UpperTail(0.0)).unwrap());
        }
    }
}
