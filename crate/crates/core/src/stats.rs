//! Ensemble statistics: normal-approximation summary intervals, empirical
//! survival curves, and Kolmogorov-Smirnov distances for distribution checks.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("no usable samples")]
    Empty,
    #[error("sample {0} is not finite")]
    NotFinite(usize),
    #[error("replica series have unequal lengths")]
    Ragged,
}

/// Sample mean with an unbiased variance and a 95% normal interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance; zero when `n == 1`.
    pub var: f64,
    /// `1.96 * sqrt(var / n)`.
    pub half_width: f64,
}

impl SummaryStats {
    pub fn from_samples(xs: &[f64]) -> Result<Self, StatsError> {
        if xs.is_empty() {
            return Err(StatsError::Empty);
        }
        if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
            return Err(StatsError::NotFinite(i));
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let half_width = 1.96 * (var / n as f64).sqrt();
        Ok(SummaryStats { n, mean, var, half_width })
    }

    pub fn ci(&self) -> (f64, f64) {
        (self.mean - self.half_width, self.mean + self.half_width)
    }

    /// Joint 95% test: the difference of means against the combined standard
    /// error of both estimates.
    pub fn agrees_with(&self, other: &SummaryStats) -> bool {
        let joint = (self.half_width * self.half_width
            + other.half_width * other.half_width)
            .sqrt();
        (self.mean - other.mean).abs() <= joint
    }
}

/// Summarize each grid point of per-replica time series; `series[r][k]` is
/// replica `r`'s value at grid point `k`.
pub fn mean_curve(series: &[Vec<f64>]) -> Result<Vec<SummaryStats>, StatsError> {
    let first = series.first().ok_or(StatsError::Empty)?;
    let k = first.len();
    if series.iter().any(|row| row.len() != k) {
        return Err(StatsError::Ragged);
    }
    let mut out = Vec::with_capacity(k);
    let mut col = vec![0.0; series.len()];
    for j in 0..k {
        for (r, row) in series.iter().enumerate() {
            col[r] = row[j];
        }
        out.push(SummaryStats::from_samples(&col)?);
    }
    Ok(out)
}

/// Right-continuous empirical survival function S(t) = P(T > t) of event
/// times. Non-finite entries mark runs where the event never happened; they
/// are counted and excluded, so the curve conditions on the event occurring.
#[derive(Clone, Debug)]
pub struct SurvivalCurve {
    /// Sorted distinct jump times paired with the value S(t) just after the
    /// jump; the curve is 1 before the first entry and 0 after the last.
    pub steps: Vec<(f64, f64)>,
    /// Uncensored sample count.
    pub n: usize,
    /// Excluded (non-finite) sample count.
    pub censored: usize,
}

pub fn survival_curve(times: &[f64]) -> Result<SurvivalCurve, StatsError> {
    let mut finite: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
    let censored = times.len() - finite.len();
    if finite.is_empty() {
        return Err(StatsError::Empty);
    }
    finite.sort_unstable_by(f64::total_cmp);
    let n = finite.len();
    let mut steps = Vec::new();
    let mut seen = 0usize;
    let mut i = 0;
    while i < n {
        let t = finite[i];
        let mut j = i;
        while j < n && finite[j] == t {
            j += 1;
        }
        seen += j - i;
        steps.push((t, (n - seen) as f64 / n as f64));
        i = j;
    }
    Ok(SurvivalCurve { steps, n, censored })
}

impl SurvivalCurve {
    /// S(t), right-continuous: at a jump time the post-jump value.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.steps.partition_point(|&(ti, _)| ti <= t);
        if k == 0 { 1.0 } else { self.steps[k - 1].1 }
    }

    /// Integral of S from 0 to the last jump; telescopes to the sample mean
    /// of the uncensored times.
    pub fn area(&self) -> f64 {
        let mut a = 0.0;
        let (mut prev_t, mut s) = (0.0, 1.0);
        for &(t, v) in &self.steps {
            a += s * (t - prev_t);
            prev_t = t;
            s = v;
        }
        a
    }

    /// Pointwise binomial 95% half-width for a curve value `s`.
    pub fn half_width(&self, s: f64) -> f64 {
        1.96 * (s * (1.0 - s) / self.n as f64).sqrt()
    }
}

/// One-sample KS distance between the empirical CDF of `xs` and `cdf`.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Two-sample KS distance between the empirical CDFs of `a` and `b`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    ys.sort_unstable_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() || j < ys.len() {
        let t = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// 1% critical value for the one-sample KS distance.
pub fn ks_crit_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// 1% critical value for the two-sample KS distance.
pub fn ks_two_sample_crit_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}
