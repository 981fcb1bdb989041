//! Small statistics toolkit: means with standard errors, least-squares
//! lines, bootstrap resampling, and the two-sample Kolmogorov-Smirnov test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean and its standard error (unbiased variance / sqrt n).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination.
    pub r2: f64,
    /// Standard error of the slope under iid residuals.
    pub slope_stderr: f64,
}

/// Ordinary least squares fit of y = slope*x + intercept.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 2, "need at least two points");
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = (syy - slope * sxy).max(0.0);
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_stderr = if n > 2 {
        (ss_res / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    LineFit {
        slope,
        intercept,
        r2,
        slope_stderr,
    }
}

/// Least squares slope of y = slope*x (no intercept).
pub fn fit_through_origin(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    sxy / sxx
}

/// Bootstrap standard error of an arbitrary statistic of an iid sample.
pub fn bootstrap_stderr<F>(samples: &[f64], n_resamples: usize, seed: u64, stat: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let n = samples.len();
    assert!(n > 0 && n_resamples > 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resample = vec![0.0; n];
    let mut vals = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        for slot in resample.iter_mut() {
            *slot = samples[rng.gen_range(0..n)];
        }
        vals.push(stat(&resample));
    }
    variance(&vals).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test. The p-value uses the asymptotic
/// Kolmogorov distribution with the usual finite-sample effective-size
/// correction; fine for sample sizes in the hundreds and up.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    assert!(!a.is_empty() && !b.is_empty());
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let xa = sa[i];
        let xb = sb[j];
        if xa <= xb {
            i += 1;
        }
        if xb <= xa {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    KsTest {
        statistic: d,
        p_value: kolmogorov_tail(lambda),
    }
}

/// Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2).
fn kolmogorov_tail(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn mean_and_stderr_of_known_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = mean_stderr(&xs);
        assert_relative_eq!(m, 2.5);
        // variance = 5/3, se = sqrt(5/12)
        assert_relative_eq!(se, (5.0f64 / 12.0).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 2.0).collect();
        let fit = fit_line(&xs, &ys);
        assert_relative_eq!(fit.slope, 3.0, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, 2.0, max_relative = 1e-12);
        assert_relative_eq!(fit.r2, 1.0, max_relative = 1e-12);
        assert!(fit.slope_stderr.abs() < 1e-10);
    }

    #[test]
    fn line_fit_on_noisy_data_brackets_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 20.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| -1.5 * x + 4.0 + normal.sample(&mut rng))
            .collect();
        let fit = fit_line(&xs, &ys);
        assert!((fit.slope + 1.5).abs() < 4.0 * fit.slope_stderr.max(0.02));
        assert!((fit.intercept - 4.0).abs() < 0.2);
    }

    #[test]
    fn through_origin_slope_exact() {
        let xs = [1.0, 2.0, 5.0];
        let ys = [2.5, 5.0, 12.5];
        assert_relative_eq!(fit_through_origin(&xs, &ys), 2.5, max_relative = 1e-12);
    }

    #[test]
    fn bootstrap_stderr_of_mean_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(1.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..400).map(|_| normal.sample(&mut rng)).collect();
        let (_, se) = mean_stderr(&xs);
        let bse = bootstrap_stderr(&xs, 1000, 13, mean);
        assert!(
            (bse - se).abs() / se < 0.15,
            "bootstrap {bse} vs formula {se}"
        );
    }

    #[test]
    fn ks_statistic_exact_on_small_arrays() {
        // CDF gap between {1,2,3,4} and {3,4,5,6}: at x=2 it is 2/4 - 0 = 0.5.
        let t = ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]);
        assert_relative_eq!(t.statistic, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn ks_separates_shifted_samples_and_accepts_identical_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..800).map(|_| normal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..800).map(|_| normal.sample(&mut rng)).collect();
        let c: Vec<f64> = (0..800).map(|_| normal.sample(&mut rng) + 0.5).collect();
        let same = ks_two_sample(&a, &b);
        let diff = ks_two_sample(&a, &c);
        assert!(same.p_value > 0.01, "same-law p {}", same.p_value);
        assert!(diff.p_value < 1e-6, "shifted p {}", diff.p_value);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // Q(0.5) ~ 0.9639, Q(1.0) ~ 0.2700, Q(1.5) ~ 0.0222 (series values).
        assert!((kolmogorov_tail(0.5) - 0.9639).abs() < 5e-4);
        assert!((kolmogorov_tail(1.0) - 0.2700).abs() < 5e-4);
        assert!((kolmogorov_tail(1.5) - 0.0222).abs() < 5e-4);
    }
}
