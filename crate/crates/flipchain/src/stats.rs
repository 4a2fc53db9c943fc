//! Time-series estimators for NESS observables: batch means with
//! autocorrelation-aware error bars and the energy-fluctuation statistic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point estimate with a batch-means standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_error: f64,
    pub n_batches: usize,
    pub batch_len: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Default number of batches.
pub const DEFAULT_BATCHES: usize = 32;

/// Batch-means estimate of the mean of a stationary series. The batch length
/// absorbs the autocorrelation; a warning is attached when it is shorter than
/// ten integrated autocorrelation times.
pub fn batch_means(series: &[f64], n_batches: usize) -> Result<EstimateWithError> {
    if n_batches < 2 {
        return Err(Error::invalid("need at least 2 batches"));
    }
    if series.len() < 2 * n_batches {
        return Err(Error::invalid(format!(
            "series of length {} is too short for {n_batches} batches",
            series.len()
        )));
    }
    let batch_len = series.len() / n_batches;
    let used = batch_len * n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| series[b * batch_len..(b + 1) * batch_len].iter().sum::<f64>() / batch_len as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / n_batches as f64;
    let var_b = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>()
        / (n_batches as f64 - 1.0);
    let std_error = (var_b / n_batches as f64).sqrt();

    let mut warnings = Vec::new();
    if n_batches < 8 {
        warnings.push(format!(
            "only {n_batches} batches; the error bar is unreliable"
        ));
    }
    let tau = integrated_autocorr_time(&series[..used]);
    if (batch_len as f64) < 10.0 * tau {
        warnings.push(format!(
            "batch length {batch_len} is below 10 integrated autocorrelation times (tau ~ {tau:.1})"
        ));
    }
    Ok(EstimateWithError {
        value: mean,
        std_error,
        n_batches,
        batch_len,
        warnings,
    })
}

/// Integrated autocorrelation time by a windowed sum: tau = 1/2 + sum rho_k,
/// the window growing until it exceeds five estimated taus.
pub fn integrated_autocorr_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 0.5;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for k in 1..n / 2 {
        let mut c = 0.0;
        for i in 0..n - k {
            c += (series[i] - mean) * (series[i + k] - mean);
        }
        c /= (n - k) as f64 * var;
        tau += c;
        if (k as f64) >= 5.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

/// Estimate s_N = N Var(H) / Mean(H)^2 from a stationary total-energy series,
/// with the error propagated through joint batch means of (H, H^2).
pub fn estimate_s(h_samples: &[f64], n_sites: usize) -> Result<EstimateWithError> {
    estimate_s_with_batches(h_samples, n_sites, DEFAULT_BATCHES)
}

pub fn estimate_s_with_batches(
    h_samples: &[f64],
    n_sites: usize,
    n_batches: usize,
) -> Result<EstimateWithError> {
    if h_samples.len() < 2 * n_batches {
        return Err(Error::invalid(format!(
            "series of length {} is too short for {n_batches} batches",
            h_samples.len()
        )));
    }
    let batch_len = h_samples.len() / n_batches;
    let nb = n_batches as f64;
    let nn = n_sites as f64;

    // point estimate from the full series (order-invariant up to roundoff)
    let len = h_samples.len() as f64;
    let mu1 = h_samples.iter().sum::<f64>() / len;
    let mu2 = h_samples.iter().map(|h| h * h).sum::<f64>() / len;
    let var_h = mu2 - mu1 * mu1;
    let value = nn * var_h / (mu1 * mu1);

    // joint batch means of H and H^2 carry the error bar
    let mut m1 = vec![0.0; n_batches];
    let mut m2 = vec![0.0; n_batches];
    for b in 0..n_batches {
        for &h in &h_samples[b * batch_len..(b + 1) * batch_len] {
            m1[b] += h;
            m2[b] += h * h;
        }
        m1[b] /= batch_len as f64;
        m2[b] /= batch_len as f64;
    }

    // covariance of the batch means, delta method through
    // s(m1, m2) = N (m2 - m1^2)/m1^2 = N (m2/m1^2 - 1)
    let mut c11 = 0.0;
    let mut c22 = 0.0;
    let mut c12 = 0.0;
    for b in 0..n_batches {
        c11 += (m1[b] - mu1) * (m1[b] - mu1);
        c22 += (m2[b] - mu2) * (m2[b] - mu2);
        c12 += (m1[b] - mu1) * (m2[b] - mu2);
    }
    c11 /= nb - 1.0;
    c22 /= nb - 1.0;
    c12 /= nb - 1.0;
    let g1 = -2.0 * nn * mu2 / (mu1 * mu1 * mu1);
    let g2 = nn / (mu1 * mu1);
    let var_s = (g1 * g1 * c11 + g2 * g2 * c22 + 2.0 * g1 * g2 * c12) / nb;
    let std_error = var_s.max(0.0).sqrt();

    let mut warnings = Vec::new();
    let tau = integrated_autocorr_time(h_samples);
    if (batch_len as f64) < 10.0 * tau {
        warnings.push(format!(
            "batch length {batch_len} is below 10 integrated autocorrelation times (tau ~ {tau:.1})"
        ));
    }
    Ok(EstimateWithError {
        value,
        std_error,
        n_batches,
        batch_len,
        warnings,
    })
}

/// Combine independent replica estimates of the same quantity: equal-weight
/// mean with errors pooled in quadrature, cross-checked against the
/// between-replica scatter (the larger of the two is reported).
pub fn combine_replicas(estimates: &[EstimateWithError]) -> Result<EstimateWithError> {
    if estimates.is_empty() {
        return Err(Error::invalid("no estimates to combine"));
    }
    let r = estimates.len() as f64;
    let value = estimates.iter().map(|e| e.value).sum::<f64>() / r;
    let pooled = (estimates.iter().map(|e| e.std_error * e.std_error).sum::<f64>()).sqrt() / r;
    let scatter = if estimates.len() >= 2 {
        let var = estimates
            .iter()
            .map(|e| (e.value - value) * (e.value - value))
            .sum::<f64>()
            / (r - 1.0);
        (var / r).sqrt()
    } else {
        0.0
    };
    let mut warnings: Vec<String> = estimates.iter().flat_map(|e| e.warnings.clone()).collect();
    warnings.dedup();
    Ok(EstimateWithError {
        value,
        std_error: pooled.max(scatter),
        n_batches: estimates.iter().map(|e| e.n_batches).sum(),
        batch_len: estimates[0].batch_len,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_series_has_zero_error() {
        let series = vec![3.25; 1000];
        let est = batch_means(&series, 32).unwrap();
        assert_eq!(est.value, 3.25);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn iid_error_matches_sigma_over_sqrt_n() {
        let n = 1_000_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let series: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let est = batch_means(&series, 32).unwrap();
        let expect = 1.0 / (n as f64).sqrt();
        assert!(
            (est.std_error - expect).abs() / expect < 0.2,
            "std_error {} vs {}",
            est.std_error,
            expect
        );
        assert!(est.value.abs() < 5.0 * expect);
        assert!(est.warnings.is_empty(), "{:?}", est.warnings);
    }

    #[test]
    fn ar1_error_matches_closed_form() {
        // x_{t+1} = rho x_t + xi; asymptotic SE of the mean is
        // sigma_x sqrt((1+rho)/(1-rho)) / sqrt(n)
        let rho: f64 = 0.9;
        let n = 400_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut series = Vec::with_capacity(n);
        let sigma_x = (1.0 / (1.0 - rho * rho)).sqrt();
        let mut x = 0.0;
        for _ in 0..n {
            x = rho * x + rng.sample::<f64, _>(StandardNormal);
            series.push(x);
        }
        let est = batch_means(&series, 32).unwrap();
        let expect = sigma_x * ((1.0 + rho) / (1.0 - rho)).sqrt() / (n as f64).sqrt();
        assert!(
            (est.std_error - expect).abs() / expect < 0.25,
            "std_error {} vs {}",
            est.std_error,
            expect
        );
        // the autocorrelation time should be well above 1 here
        let tau = integrated_autocorr_time(&series[..50_000]);
        assert!(tau > 5.0, "tau = {tau}");
    }

    #[test]
    fn error_shrinks_like_sqrt_of_length() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let series: Vec<f64> = (0..200_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let half = batch_means(&series[..100_000], 32).unwrap();
        let full = batch_means(&series, 32).unwrap();
        let ratio = half.std_error / full.std_error;
        assert!(
            (ratio - 2f64.sqrt()).abs() < 0.3 * 2f64.sqrt(),
            "ratio {ratio}"
        );
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(batch_means(&[1.0; 10], 32).is_err());
        assert!(estimate_s(&[1.0; 10], 4).is_err());
    }

    #[test]
    fn s_of_constant_energy_is_zero() {
        let est = estimate_s(&vec![7.5; 4096], 16).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn s_recovers_known_gaussian_value() {
        // H_t i.i.d. N(mu, sigma^2): s = N sigma^2 / mu^2, here 16*4/100
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let h: Vec<f64> = (0..500_000)
            .map(|_| 10.0 + 2.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let est = estimate_s(&h, 16).unwrap();
        let expect = 16.0 * 4.0 / 100.0;
        assert!(
            (est.value - expect).abs() <= 4.0 * est.std_error,
            "s {} vs {} ({}se)",
            est.value,
            expect,
            (est.value - expect).abs() / est.std_error
        );
        assert!(est.std_error < 0.01);
    }

    #[test]
    fn replica_combination_pools_errors() {
        let e = |v: f64, se: f64| EstimateWithError {
            value: v,
            std_error: se,
            n_batches: 32,
            batch_len: 100,
            warnings: vec![],
        };
        let combined = combine_replicas(&[e(1.0, 0.1), e(1.2, 0.1), e(0.8, 0.1), e(1.0, 0.1)]).unwrap();
        assert!((combined.value - 1.0).abs() < 1e-12);
        assert!(combined.std_error >= 0.05 && combined.std_error < 0.2);
    }

    #[test]
    fn estimate_is_invariant_under_sample_order_in_value() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut h: Vec<f64> = (0..10_000)
            .map(|_| 5.0 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fwd = estimate_s(&h, 8).unwrap();
        h.reverse();
        let rev = estimate_s(&h, 8).unwrap();
        // identical up to floating-point reassociation of the sums
        assert!((fwd.value - rev.value).abs() < 1e-9);
    }
}
