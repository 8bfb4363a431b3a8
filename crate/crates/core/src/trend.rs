//! Time-series analysis of classified posts.
//!
//! Monthly relative abundance (percent of examined posts classified
//! ProED), third-degree polynomial least squares with an overall-model
//! F-test, and a post-2018 linear refit. The regression x variable is the
//! calendar month offset from the first point of the series (0-based);
//! fitted values are invariant to that affine choice.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::rng::{fnv1a, mix, SplitMix64};

/// A calendar month.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MonthKey {
    pub year: i32,
    pub month: u32,
}

impl MonthKey {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Config(format!("month must be within [1, 12], got {month}")));
        }
        Ok(MonthKey { year, month })
    }

    pub fn of(timestamp: &DateTime<Utc>) -> Self {
        MonthKey {
            year: timestamp.year(),
            month: timestamp.month(),
        }
    }

    pub fn days_in_month(self) -> u32 {
        let next = if self.month == 12 {
            NaiveDate::from_ymd_opt(self.year + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(self.year, self.month + 1, 1)
        };
        next.expect("valid month")
            .pred_opt()
            .expect("previous day exists")
            .day()
    }

    /// Signed calendar month difference `other - self`.
    pub fn months_until(self, other: MonthKey) -> i64 {
        (other.year as i64 - self.year as i64) * 12 + other.month as i64 - self.month as i64
    }
}

impl fmt::Display for MonthKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<MonthKey> {
        let (year, month) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("month key must be YYYY-MM, got {s:?}")))?;
        let year: i32 = year
            .parse()
            .map_err(|_| Error::Config(format!("month key must be YYYY-MM, got {s:?}")))?;
        let month: u32 = month
            .parse()
            .map_err(|_| Error::Config(format!("month key must be YYYY-MM, got {s:?}")))?;
        MonthKey::new(year, month)
    }
}

/// Three distinct sampling days for a month, sorted ascending, no two
/// adjacent (pairwise difference >= 2), uniform over all valid triples.
///
/// Valid triples biject with 3-combinations of [1, days-2] by
/// (a, b, c) -> (a, b-1, c-2); a uniform combination index is drawn and
/// unranked, so every valid triple is equally likely. Deterministic per
/// (month, seed).
pub fn sampling_schedule(month: MonthKey, seed: u64) -> [u32; 3] {
    let days = month.days_in_month() as u64;
    let reduced = days - 2;
    let total = reduced * (reduced - 1) * (reduced - 2) / 6;
    let mut rng = SplitMix64::new(mix(&[
        seed,
        fnv1a(b"sampling-schedule"),
        month.year as u64,
        month.month as u64,
    ]));
    let mut index = rng.gen_range(total);

    // Lexicographic unranking of the 3-combination (i < j < k) of [1, reduced].
    let choose2 = |n: u64| n * n.saturating_sub(1) / 2;
    let mut i = 1u64;
    loop {
        let count = choose2(reduced - i);
        if index < count {
            break;
        }
        index -= count;
        i += 1;
    }
    let mut j = i + 1;
    loop {
        let count = reduced - j;
        if index < count {
            break;
        }
        index -= count;
        j += 1;
    }
    let k = j + 1 + index;
    [i as u32, j as u32 + 1, k as u32 + 2]
}

/// One month of classification output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonthPoint {
    pub month: MonthKey,
    pub examined: u64,
    pub pro_ed: u64,
    /// Percent of examined posts classified ProED.
    pub abundance: f64,
}

/// Month-ordered relative-abundance series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub points: Vec<MonthPoint>,
}

/// Groups classified posts by calendar month. Months with no examined
/// posts carry no point; order of the input does not matter.
pub fn aggregate_monthly(items: &[(DateTime<Utc>, Label)]) -> MonthlySeries {
    let mut buckets: BTreeMap<MonthKey, (u64, u64)> = BTreeMap::new();
    for (timestamp, label) in items {
        let entry = buckets.entry(MonthKey::of(timestamp)).or_insert((0, 0));
        entry.0 += 1;
        if *label == Label::ProEd {
            entry.1 += 1;
        }
    }
    MonthlySeries {
        points: buckets
            .into_iter()
            .map(|(month, (examined, pro_ed))| MonthPoint {
                month,
                examined,
                pro_ed,
                abundance: 100.0 * pro_ed as f64 / examined as f64,
            })
            .collect(),
    }
}

/// A fitted polynomial: coefficients in ascending powers of the original
/// x units, residual sum of squares, R-squared, and the overall-model
/// F-test p-value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub r_squared: f64,
    pub p_value: f64,
}

impl PolyFit {
    pub fn evaluate(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coefficients.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }
}

/// Least-squares polynomial fit by Householder QR.
///
/// x values are centered and scaled internally for conditioning; the
/// returned coefficients are re-expanded into original x units. Requires
/// strictly more points than coefficients and at least two distinct x
/// values.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit> {
    if xs.len() != ys.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    let terms = degree + 1;
    if n <= terms {
        return Err(Error::Data(format!(
            "degree-{degree} fit needs more than {terms} points, got {n}"
        )));
    }
    if xs.iter().any(|x| !x.is_finite()) || ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Data("polyfit inputs must be finite".into()));
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let scale = xs.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Data(
            "rank-deficient design: all x values are identical".into(),
        ));
    }
    let zs: Vec<f64> = xs.iter().map(|x| (x - mean) / scale).collect();

    // Vandermonde in the centered variable.
    let mut design: Vec<Vec<f64>> = zs
        .iter()
        .map(|&z| {
            let mut row = vec![1.0; terms];
            for p in 1..terms {
                row[p] = row[p - 1] * z;
            }
            row
        })
        .collect();
    let mut rhs = ys.to_vec();
    let centered = householder_lstsq(&mut design, &mut rhs, terms)?;

    // Fitted values and RSS from the well-conditioned parametrization.
    let mut rss = 0.0;
    for (i, &z) in zs.iter().enumerate() {
        let mut fit = 0.0;
        for &c in centered.iter().rev() {
            fit = fit * z + c;
        }
        let r = ys[i] - fit;
        rss += r * r;
    }
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let tss: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };

    // Re-expand sum_k a_k ((x - mean)/scale)^k into powers of x via the
    // binomial theorem.
    let mut coefficients = vec![0.0; terms];
    for (k, &a) in centered.iter().enumerate() {
        let base = a / scale.powi(k as i32);
        for j in 0..=k {
            coefficients[j] += base * binomial(k, j) * (-mean).powi((k - j) as i32);
        }
    }

    let mut fit = PolyFit {
        degree,
        coefficients,
        rss,
        r_squared,
        p_value: 1.0,
    };
    fit.p_value = regression_pvalue(&fit, n)?;
    Ok(fit)
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut result = 1.0;
    for i in 0..k {
        result = result * (n - i) as f64 / (i + 1) as f64;
    }
    result
}

/// Householder QR least squares for a tall n x m system (m small).
fn householder_lstsq(a: &mut [Vec<f64>], b: &mut [f64], m: usize) -> Result<Vec<f64>> {
    let n = a.len();
    for k in 0..m {
        let mut norm = 0.0;
        for row in a.iter().take(n).skip(k) {
            norm += row[k] * row[k];
        }
        let norm = norm.sqrt();
        if norm < 1e-13 {
            return Err(Error::Data(format!(
                "rank-deficient design: centered x powers are linearly dependent at column {k}"
            )));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[k] = a[k][k] - alpha;
        for (i, row) in a.iter().enumerate().take(n).skip(k + 1) {
            v[i] = row[k];
        }
        let vtv: f64 = v.iter().skip(k).map(|x| x * x).sum();
        if vtv > 0.0 {
            for j in k..m {
                let dot: f64 = (k..n).map(|i| v[i] * a[i][j]).sum();
                let s = 2.0 * dot / vtv;
                for (i, item) in v.iter().enumerate().take(n).skip(k) {
                    a[i][j] -= s * item;
                }
            }
            let dot: f64 = (k..n).map(|i| v[i] * b[i]).sum();
            let s = 2.0 * dot / vtv;
            for (i, item) in v.iter().enumerate().take(n).skip(k) {
                b[i] -= s * item;
            }
        }
    }
    // Back-substitution on the upper-triangular system.
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let mut acc = b[k];
        for j in k + 1..m {
            acc -= a[k][j] * x[j];
        }
        if a[k][k].abs() < 1e-13 {
            return Err(Error::Data(format!(
                "rank-deficient design: zero pivot at column {k}"
            )));
        }
        x[k] = acc / a[k][k];
    }
    Ok(x)
}

/// Overall-model F-test against the intercept-only model.
///
/// F = (R^2 / d) / ((1 - R^2) / (n - d - 1)); the p-value is the upper
/// tail of F(d, n - d - 1) via the regularized incomplete beta function.
/// A perfect fit (RSS = 0) reports p = 0; no explained variance reports
/// p = 1.
pub fn regression_pvalue(fit: &PolyFit, n: usize) -> Result<f64> {
    let degree = fit.degree;
    if n <= degree + 1 {
        return Err(Error::Data(format!(
            "p-value needs more than {} points, got {n}",
            degree + 1
        )));
    }
    if fit.rss == 0.0 {
        return Ok(0.0);
    }
    let r2 = fit.r_squared;
    if r2 <= 0.0 {
        return Ok(1.0);
    }
    if r2 >= 1.0 {
        return Ok(0.0);
    }
    let d1 = degree as f64;
    let d2 = (n - degree - 1) as f64;
    let f = (r2 / d1) / ((1.0 - r2) / d2);
    Ok(beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0))
}

/// Ordinary least squares on the series restricted to months at or after
/// `from`; x is the calendar month offset from the first restricted
/// point. Requires at least 3 restricted points.
pub fn linear_fit(series: &MonthlySeries, from: MonthKey) -> Result<PolyFit> {
    let restricted: Vec<&MonthPoint> = series
        .points
        .iter()
        .filter(|p| p.month >= from)
        .collect();
    if restricted.len() < 3 {
        return Err(Error::Data(format!(
            "linear fit needs at least 3 points at or after {from}, got {}",
            restricted.len()
        )));
    }
    let first = restricted[0].month;
    let xs: Vec<f64> = restricted
        .iter()
        .map(|p| first.months_until(p.month) as f64)
        .collect();
    let ys: Vec<f64> = restricted.iter().map(|p| p.abundance).collect();
    polyfit(&xs, &ys, 1)
}

/// x values for fitting a whole series: calendar month offsets from its
/// first point.
pub fn series_month_offsets(series: &MonthlySeries) -> Vec<f64> {
    match series.points.first() {
        None => Vec::new(),
        Some(first) => series
            .points
            .iter()
            .map(|p| first.month.months_until(p.month) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn month(year: i32, month_num: u32) -> MonthKey {
        MonthKey::new(year, month_num).unwrap()
    }

    fn timestamp(year: i32, month_num: u32, day: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(year, month_num, day, 12, 0, 0).unwrap()
    }

    #[test]
    fn month_key_parses_and_formats() {
        let m: MonthKey = "2018-01".parse().unwrap();
        assert_eq!(m, month(2018, 1));
        assert_eq!(m.to_string(), "2018-01");
        assert!("2018-13".parse::<MonthKey>().is_err());
        assert!("nope".parse::<MonthKey>().is_err());
    }

    #[test]
    fn days_in_month_handles_leap_years() {
        assert_eq!(month(2015, 2).days_in_month(), 28);
        assert_eq!(month(2016, 2).days_in_month(), 29);
        assert_eq!(month(2020, 12).days_in_month(), 31);
        assert_eq!(month(2021, 4).days_in_month(), 30);
    }

    #[test]
    fn schedule_triples_are_valid() {
        for seed in 0..50 {
            for &m in &[month(2015, 2), month(2016, 2), month(2020, 4), month(2019, 12)] {
                let [a, b, c] = sampling_schedule(m, seed);
                assert!(a >= 1);
                assert!(c <= m.days_in_month(), "{a},{b},{c} in {m}");
                assert!(b >= a + 2, "{a},{b},{c}");
                assert!(c >= b + 2, "{a},{b},{c}");
            }
        }
    }

    #[test]
    fn schedule_is_deterministic_per_month_and_seed() {
        let m = month(2020, 6);
        assert_eq!(sampling_schedule(m, 9), sampling_schedule(m, 9));
        assert_ne!(
            sampling_schedule(m, 9),
            sampling_schedule(month(2020, 7), 9),
            "different months draw from different substreams"
        );
    }

    /// Exhaustive enumeration of valid triples for a 30-day month.
    fn enumerate_valid_triples(days: u32) -> Vec<[u32; 3]> {
        let mut triples = Vec::new();
        for a in 1..=days {
            for b in a + 2..=days {
                for c in b + 2..=days {
                    triples.push([a, b, c]);
                }
            }
        }
        triples
    }

    #[test]
    fn schedule_uniform_over_valid_triples() {
        let m = month(2021, 6); // 30 days
        let triples = enumerate_valid_triples(30);
        assert_eq!(triples.len(), 3276); // C(28, 3)
        let lookup: HashMap<[u32; 3], usize> = triples
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i))
            .collect();
        let draws = 100_000u64;
        let mut counts = vec![0u64; triples.len()];
        for seed in 0..draws {
            let triple = sampling_schedule(m, seed);
            counts[*lookup.get(&triple).expect("drawn triple is valid")] += 1;
        }
        let expected = draws as f64 / triples.len() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // df = 3275: mean 3275, sd ~81. Allow ~4 sigma either way.
        assert!(chi2 < 3600.0, "chi^2 = {chi2}");
        assert!(chi2 > 2950.0, "chi^2 = {chi2} suspiciously uniform");
    }

    #[test]
    fn aggregate_reproduces_published_ratios() {
        let cases: [(u64, u64, f64); 6] = [
            (10_895, 13_287, 82.0),
            (266, 13_287, 2.0),
            (2_126, 13_287, 16.0),
            (128, 447, 28.6),
            (301, 447, 67.3),
            (2_916, 3_728, 78.2),
        ];
        for (pro_ed, examined, expected) in cases {
            let mut items = Vec::new();
            for i in 0..examined {
                let label = if i < pro_ed { Label::ProEd } else { Label::Neutral };
                items.push((timestamp(2020, 3, 15), label));
            }
            let series = aggregate_monthly(&items);
            assert_eq!(series.points.len(), 1);
            let point = &series.points[0];
            assert_eq!(point.examined, examined);
            assert_eq!(point.pro_ed, pro_ed);
            let rounded = (point.abundance * 10.0).round() / 10.0;
            assert_eq!(rounded, expected, "{pro_ed}/{examined}");
        }
    }

    #[test]
    fn aggregate_orders_months_and_skips_empty() {
        let items = vec![
            (timestamp(2020, 3, 1), Label::Neutral),
            (timestamp(2019, 12, 5), Label::ProEd),
            (timestamp(2020, 3, 9), Label::ProEd),
        ];
        let series = aggregate_monthly(&items);
        let months: Vec<MonthKey> = series.points.iter().map(|p| p.month).collect();
        assert_eq!(months, vec![month(2019, 12), month(2020, 3)]);
        assert_eq!(series.points[0].abundance, 100.0);
        assert_eq!(series.points[1].abundance, 50.0);
    }

    #[test]
    fn aggregate_zero_pro_ed_month() {
        let items = vec![(timestamp(2020, 1, 1), Label::Neutral)];
        assert_eq!(aggregate_monthly(&items).points[0].abundance, 0.0);
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let mut items = vec![
            (timestamp(2020, 1, 1), Label::ProEd),
            (timestamp(2020, 2, 1), Label::Neutral),
            (timestamp(2020, 1, 5), Label::ProRecovery),
            (timestamp(2020, 2, 10), Label::ProEd),
        ];
        let forward = aggregate_monthly(&items);
        items.reverse();
        assert_eq!(aggregate_monthly(&items), forward);
    }

    #[test]
    fn exact_cubic_is_recovered() {
        let truth = [2.0, -1.5, 0.75, 0.2];
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| truth[0] + truth[1] * x + truth[2] * x * x + truth[3] * x * x * x)
            .collect();
        let fit = polyfit(&xs, &ys, 3).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9, "{:?}", fit.coefficients);
        }
        let tss: f64 = {
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            ys.iter().map(|y| (y - mean) * (y - mean)).sum()
        };
        assert!(fit.rss / tss < 1e-15, "relative RSS {}", fit.rss / tss);
        assert_eq!(fit.p_value, 0.0, "perfect fit reports p = 0");
    }

    #[test]
    fn constant_series_fits_flat() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys = vec![7.25; 10];
        let fit = polyfit(&xs, &ys, 3).unwrap();
        assert!((fit.coefficients[0] - 7.25).abs() < 1e-10);
        for &c in &fit.coefficients[1..] {
            assert!(c.abs() < 1e-10);
        }
    }

    #[test]
    fn polyfit_rejects_degenerate_inputs() {
        assert!(polyfit(&[1.0, 2.0], &[1.0], 1).is_err()); // length mismatch
        assert!(polyfit(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 3).is_err()); // too few
        let same = vec![5.0; 10];
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let err = polyfit(&same, &ys, 2).unwrap_err().to_string();
        assert!(err.contains("rank-deficient"), "{err}");
    }

    /// Normal-equations oracle with its own centering and re-expansion.
    fn normal_equations_fit(xs: &[f64], ys: &[f64], degree: usize) -> Vec<f64> {
        let n = xs.len();
        let m = degree + 1;
        let mean = xs.iter().sum::<f64>() / n as f64;
        let scale = xs.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
        let zs: Vec<f64> = xs.iter().map(|x| (x - mean) / scale).collect();
        // Build A^T A and A^T y.
        let mut ata = vec![vec![0.0; m]; m];
        let mut aty = vec![0.0; m];
        for (idx, &z) in zs.iter().enumerate() {
            let mut powers = vec![1.0; m];
            for p in 1..m {
                powers[p] = powers[p - 1] * z;
            }
            for i in 0..m {
                aty[i] += powers[i] * ys[idx];
                for j in 0..m {
                    ata[i][j] += powers[i] * powers[j];
                }
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..m {
            let pivot = (col..m)
                .max_by(|&a, &b| ata[a][col].abs().partial_cmp(&ata[b][col].abs()).unwrap())
                .unwrap();
            ata.swap(col, pivot);
            aty.swap(col, pivot);
            for row in col + 1..m {
                let factor = ata[row][col] / ata[col][col];
                for j in col..m {
                    ata[row][j] -= factor * ata[col][j];
                }
                aty[row] -= factor * aty[col];
            }
        }
        let mut centered = vec![0.0; m];
        for row in (0..m).rev() {
            let mut acc = aty[row];
            for j in row + 1..m {
                acc -= ata[row][j] * centered[j];
            }
            centered[row] = acc / ata[row][row];
        }
        // Independent re-expansion to original units.
        let mut coeffs = vec![0.0; m];
        for (k, &a) in centered.iter().enumerate() {
            for j in 0..=k {
                let mut binom = 1.0;
                for t in 0..j {
                    binom = binom * (k - t) as f64 / (t + 1) as f64;
                }
                coeffs[j] += a / scale.powi(k as i32) * binom * (-mean).powi((k - j) as i32);
            }
        }
        coeffs
    }

    #[test]
    fn noisy_fit_matches_normal_equations_oracle() {
        let mut rng = SplitMix64::new(0x9E15);
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| 3.0 + 0.4 * x - 0.02 * x * x + 0.0005 * x * x * x + 0.1 * rng.next_gaussian())
            .collect();
        let fit = polyfit(&xs, &ys, 3).unwrap();
        let oracle = normal_equations_fit(&xs, &ys, 3);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!(
                (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0),
                "{a} vs {b}"
            );
        }
        // And the fitted values agree everywhere.
        for &x in &xs {
            let oracle_fit: f64 = oracle.iter().rev().fold(0.0, |acc, &c| acc * x + c);
            assert!((fit.evaluate(x) - oracle_fit).abs() < 1e-8);
        }
    }

    #[test]
    fn rss_never_increases_with_degree() {
        let mut rng = SplitMix64::new(0xD15C);
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (x * 0.3).sin() + 0.2 * rng.next_gaussian()).collect();
        let mut last = f64::INFINITY;
        for degree in 0..=4 {
            let fit = polyfit(&xs, &ys, degree).unwrap();
            assert!(fit.rss <= last + 1e-9, "degree {degree}: {} > {last}", fit.rss);
            last = fit.rss;
        }
    }

    #[test]
    fn shift_equivariance_of_fitted_values() {
        let mut rng = SplitMix64::new(0x51F7);
        let xs: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| 1.0 + 0.5 * x - 0.03 * x * x + rng.next_gaussian() * 0.05)
            .collect();
        let fit = polyfit(&xs, &ys, 3).unwrap();
        let shifted_xs: Vec<f64> = xs.iter().map(|x| x + 250.0).collect();
        let shifted_fit = polyfit(&shifted_xs, &ys, 3).unwrap();
        for (&x, &sx) in xs.iter().zip(&shifted_xs) {
            assert!(
                (fit.evaluate(x) - shifted_fit.evaluate(sx)).abs() < 1e-9,
                "fitted values moved under x shift"
            );
        }
    }

    #[test]
    fn strong_cubic_on_112_months_is_significant() {
        let mut rng = SplitMix64::new(0xF117);
        let xs: Vec<f64> = (0..112).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let z = x / 111.0;
                60.0 - 90.0 * z + 30.0 * z * z + 25.0 * z * z * z + rng.next_gaussian() * 2.0
            })
            .collect();
        let fit = polyfit(&xs, &ys, 3).unwrap();
        assert!(fit.p_value < 0.001, "p = {}", fit.p_value);
    }

    #[test]
    fn no_explained_variance_means_p_one() {
        let fit = PolyFit {
            degree: 3,
            coefficients: vec![5.0, 0.0, 0.0, 0.0],
            rss: 10.0,
            r_squared: 0.0, // TSS == RSS
            p_value: 1.0,
        };
        assert_eq!(regression_pvalue(&fit, 50).unwrap(), 1.0);
        assert!(regression_pvalue(&fit, 4).is_err());
    }

    #[test]
    fn pvalue_is_monotone_in_f() {
        let n = 40;
        let mut last = 1.0;
        for r2 in [0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 0.99] {
            let fit = PolyFit {
                degree: 3,
                coefficients: vec![0.0; 4],
                rss: 1.0,
                r_squared: r2,
                p_value: 1.0,
            };
            let p = regression_pvalue(&fit, n).unwrap();
            assert!(p < last, "p {p} should drop as R^2 rises");
            last = p;
        }
    }

    #[test]
    fn null_pvalues_have_median_near_half() {
        let mut rng = SplitMix64::new(0x0111);
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let mut pvals = Vec::new();
        for _ in 0..1000 {
            let ys: Vec<f64> = xs.iter().map(|_| rng.next_gaussian()).collect();
            pvals.push(polyfit(&xs, &ys, 3).unwrap().p_value);
        }
        pvals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = pvals[pvals.len() / 2];
        assert!((median - 0.5).abs() < 0.06, "median {median}");
    }

    #[test]
    fn linear_fit_recovers_trend_direction() {
        let rising = MonthlySeries {
            points: (0..12)
                .map(|i| MonthPoint {
                    month: month(2018, 1 + i),
                    examined: 100,
                    pro_ed: 10 + i as u64 * 3,
                    abundance: 10.0 + i as f64 * 3.0,
                })
                .collect(),
        };
        let fit = linear_fit(&rising, month(2018, 1)).unwrap();
        assert!(fit.coefficients[1] > 0.0);

        let flat = MonthlySeries {
            points: (0..6)
                .map(|i| MonthPoint {
                    month: month(2019, 1 + i),
                    examined: 50,
                    pro_ed: 5,
                    abundance: 10.0,
                })
                .collect(),
        };
        let fit = linear_fit(&flat, month(2018, 1)).unwrap();
        assert!(fit.coefficients[1].abs() < 1e-12);
    }

    #[test]
    fn linear_fit_restriction_and_errors() {
        let series = MonthlySeries {
            points: (0..10)
                .map(|i| MonthPoint {
                    month: month(2017, 1 + i),
                    examined: 10,
                    pro_ed: 1,
                    abundance: 10.0,
                })
                .collect(),
        };
        // Only two points at/after 2017-09.
        assert!(linear_fit(&series, month(2017, 9)).is_err());
        assert!(linear_fit(&series, month(2017, 8)).is_ok());
    }

    #[test]
    fn two_segment_series_rebounds_after_knee() {
        // Decline 2016-2017, rise 2018-2019; the restricted linear fit sees
        // only the rebound while the full-window cubic has an interior
        // minimum.
        let mut points = Vec::new();
        for i in 0..24 {
            let key = month(2016 + i / 12, 1 + (i % 12) as u32);
            let abundance = 60.0 - 2.0 * i as f64;
            points.push(MonthPoint {
                month: key,
                examined: 100,
                pro_ed: abundance.round() as u64,
                abundance,
            });
        }
        for i in 0..24 {
            let key = month(2018 + i / 12, 1 + (i % 12) as u32);
            let abundance = 14.0 + 1.5 * i as f64;
            points.push(MonthPoint {
                month: key,
                examined: 100,
                pro_ed: abundance.round() as u64,
                abundance,
            });
        }
        let series = MonthlySeries { points };
        let linear = linear_fit(&series, month(2018, 1)).unwrap();
        assert!(linear.coefficients[1] > 0.0, "post-knee slope should be positive");

        let xs = series_month_offsets(&series);
        let ys: Vec<f64> = series.points.iter().map(|p| p.abundance).collect();
        let cubic = polyfit(&xs, &ys, 3).unwrap();
        assert!(cubic.p_value < 0.001);
        let values: Vec<f64> = xs.iter().map(|&x| cubic.evaluate(x)).collect();
        let min_index = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(min_index > 0 && min_index < values.len() - 1, "interior minimum");
    }

    use crate::rng::SplitMix64;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn abundance_is_a_percent(seed in 0u64..500) {
            let mut rng = SplitMix64::new(seed);
            let n = 1 + rng.gen_range(50) as usize;
            let items: Vec<(DateTime<Utc>, Label)> = (0..n)
                .map(|_| {
                    let label = Label::from_code(rng.gen_range(3) as u8).unwrap();
                    (timestamp(2018, 1 + rng.gen_range(12) as u32, 1 + rng.gen_range(28) as u32), label)
                })
                .collect();
            let series = aggregate_monthly(&items);
            let total: u64 = series.points.iter().map(|p| p.examined).sum();
            prop_assert_eq!(total as usize, n);
            for point in &series.points {
                prop_assert!((0.0..=100.0).contains(&point.abundance));
                prop_assert!(point.pro_ed <= point.examined);
            }
        }
    }
}
