//! Small statistical helpers: ranks, correlation, ordinary least squares
//! and sample quantiles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Linear-interpolation sample quantile (type 7).
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateSample("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(crate::sampler::sorted_quantile(&s, q))
}

/// Type 7 quantile by selection; reorders `v`.
pub fn quantile_in_place(v: &mut [f64], q: f64) -> f64 {
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let (_, &mut a, rest) = v.select_nth_unstable_by(lo, f64::total_cmp);
    if lo + 1 >= n || h == lo as f64 {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + (h - lo as f64) * (b - a)
}

/// Gaussian kernel density estimate on `grid` with Silverman's bandwidth.
pub fn gaussian_kde(sample: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = sample.len();
    if n < 2 {
        return vec![f64::NAN; grid.len()];
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let mut v = sample.to_vec();
    let iqr = quantile_in_place(&mut v, 0.75) - quantile_in_place(&mut v, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * nf.powf(-0.2);
    if !(h > 0.0) {
        return vec![f64::NAN; grid.len()];
    }
    let norm = 1.0 / (nf * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|g| sample.iter().map(|x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

pub fn median(values: &[f64]) -> Result<f64> {
    empirical_quantile(values, 0.5)
}

/// Mid-ranks starting at 1; ties share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation; `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Largest distance between the empirical CDF of `u` and the uniform CDF.
pub fn ks_uniform_distance(u: &[f64]) -> f64 {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub n: usize,
    /// Gaussian AIC counting the residual variance as a parameter.
    pub aic: f64,
}

/// Least squares of `y` on the columns of `x` (include an intercept column
/// explicitly).
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let k = x.ncols();
    if x.nrows() != n {
        return Err(Error::Dimension(format!("{} design rows for {n} responses", x.nrows())));
    }
    if n <= k {
        return Err(Error::DegenerateSample(format!("{n} observations for {k} coefficients")));
    }
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    if r.diagonal().iter().any(|d| d.abs() < 1e-12) {
        return Err(Error::DegenerateSample("collinear design".into()));
    }
    let qty = qr.q().tr_mul(&yv);
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::DegenerateSample("collinear design".into()))?;
    let rss = (&yv - x * &b).norm_squared();
    let nf = n as f64;
    let aic = nf * (2.0 * std::f64::consts::PI * rss / nf).ln() + nf + 2.0 * (k as f64 + 1.0);
    Ok(OlsFit {
        coefficients: b.iter().copied().collect(),
        rss,
        n,
        aic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_of_monotone_map_is_one() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let z: Vec<f64> = x.iter().map(|v| -v * v * v).collect();
        assert!((spearman(&x, &z).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = DMatrix::from_fn(10, 2, |r, c| if c == 0 { 1.0 } else { r as f64 });
        let y: Vec<f64> = (0..10).map(|r| 2.0 + 0.5 * r as f64 + if r % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let f = ols(&x, &y).unwrap();
        // Alternating residuals are orthogonal to neither column exactly, so
        // compare with the normal equations instead.
        let xt = x.transpose();
        let b = (&xt * &x).cholesky().unwrap().solve(&(&xt * DVector::from_vec(y)));
        assert!((f.coefficients[0] - b[0]).abs() < 1e-10);
        assert!((f.coefficients[1] - b[1]).abs() < 1e-10);
    }

    #[test]
    fn collinear_design_is_rejected() {
        let x = DMatrix::from_fn(6, 2, |_, _| 1.0);
        assert!(ols(&x, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).is_err());
    }

    #[test]
    fn ks_distance_of_grid() {
        let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform_distance(&u) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn selection_quantile_matches_sorted() {
        let v: Vec<f64> = (0..37).map(|i| ((i * 17) % 37) as f64 * 0.3).collect();
        for q in [0.0, 0.025, 0.3, 0.5, 0.975, 1.0] {
            let mut w = v.clone();
            assert!((quantile_in_place(&mut w, q) - empirical_quantile(&v, q).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn kde_integrates_to_one() {
        let s: Vec<f64> = (0..200).map(|i| (i as f64 / 200.0 - 0.5) * 3.0).collect();
        let grid: Vec<f64> = (0..2001).map(|i| -5.0 + i as f64 * 0.005).collect();
        let d = gaussian_kde(&s, &grid);
        let area: f64 = d.iter().sum::<f64>() * 0.005;
        assert!((area - 1.0).abs() < 1e-3, "{area}");
    }

    #[test]
    fn quantile_validation() {
        assert!(empirical_quantile(&[], 0.5).is_err());
        assert!(empirical_quantile(&[1.0], 1.5).is_err());
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
    }
}
