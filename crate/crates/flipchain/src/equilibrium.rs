//! Exact canonical-Gibbs computations: moments of the (beta, tau) family,
//! Wick-theorem energy covariances, and the local-equilibrium prediction for
//! the normalised total-energy fluctuation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the canonical Gibbs family. The tension tau only makes
/// sense for the unpinned chain, where the measure factorises over the
/// deformation variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsParams {
    pub temperature: f64,
    pub tension: f64,
    pub pinning: f64,
}

impl GibbsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be > 0"));
        }
        if !self.tension.is_finite() || !self.pinning.is_finite() || self.pinning < 0.0 {
            return Err(Error::invalid("tension must be finite, pinning >= 0"));
        }
        Ok(())
    }
}

/// First moments of the (T, tau) Gibbs measure:
/// (<p^2>, <E_j>, <r_j>) = (T, T + tau^2/2, tau).
pub fn gibbs_moments(gp: &GibbsParams) -> Result<(f64, f64, f64)> {
    gp.validate()?;
    if gp.pinning != 0.0 {
        return Err(Error::invalid(
            "the (T, tau) ensemble is defined for the unpinned chain; got pinning != 0",
        ));
    }
    let t = gp.temperature;
    let tau = gp.tension;
    Ok((t, t + 0.5 * tau * tau, tau))
}

/// Per-site bath temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureProfile {
    pub temps: Vec<f64>,
}

impl TemperatureProfile {
    pub fn new(temps: Vec<f64>) -> Result<Self> {
        if temps.is_empty() {
            return Err(Error::invalid("empty temperature profile"));
        }
        if temps.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::invalid("profile temperatures must be > 0"));
        }
        Ok(TemperatureProfile { temps })
    }

    pub fn uniform(t: f64, n: usize) -> Result<Self> {
        Self::new(vec![t; n])
    }

    /// Linear ramp hitting `t_left` at site 1 and `t_right` at site N.
    pub fn linear(t_left: f64, t_right: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return Self::new(vec![0.5 * (t_left + t_right)]);
        }
        let temps = (0..n)
            .map(|j| t_left + (t_right - t_left) * j as f64 / (n - 1) as f64)
            .collect();
        Self::new(temps)
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let mut temps = self.temps.clone();
        temps.reverse();
        TemperatureProfile { temps }
    }

    pub fn mean(&self) -> f64 {
        self.temps.iter().sum::<f64>() / self.temps.len() as f64
    }
}

/// Equilibrium covariance matrix Cov(E_i, E_j) at unit temperature for all
/// site pairs i, j = 0..=N+1 (the wall sites carry their bond shares
/// r_0^2/4 and r_N^2/4).
///
/// Unpinned chains use the bulk product measure: momenta and deformations
/// i.i.d. N(0, T). That reproduces the textbook values exactly
/// (bulk variance 3T^2/4, nearest neighbours T^2/8 through the shared bond,
/// zero beyond). With pinning the positions are jointly Gaussian with
/// covariance T (-Laplacian_Dirichlet + nu^2)^{-1} and the covariances decay
/// exponentially instead of terminating.
fn energy_covariance_unit(nu: f64, n: usize) -> DMatrix<f64> {
    let dim = n + 2;
    let mut cov = DMatrix::zeros(dim, dim);
    if nu == 0.0 {
        for i in 1..=n {
            cov[(i, i)] = 0.75;
            if i + 1 <= n {
                cov[(i, i + 1)] = 0.125;
                cov[(i + 1, i)] = 0.125;
            }
        }
        // walls: Var(r^2/4) = 1/8, shared bond with the adjacent site
        for (wall, neighbour) in [(0usize, 1usize), (n + 1, n)] {
            cov[(wall, wall)] = 0.125;
            cov[(wall, neighbour)] = 0.125;
            cov[(neighbour, wall)] = 0.125;
        }
        return cov;
    }

    // Pinned: positions ~ N(0, G) with G = (-Lap + nu^2)^{-1}, momenta ~ N(0, I).
    let nu2 = nu * nu;
    let phi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0 + nu2
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    });
    let g = phi
        .lu()
        .try_inverse()
        .expect("pinned Dirichlet Laplacian is positive definite");

    // E_site as a quadratic form over q_{site-1}, q_site, q_{site+1}
    // (moving 0-based indices site-2..site), plus p_site^2/2 for moving
    // sites; the walls reduce to their single bond share.
    // Wick: Cov(q^T a q, q^T b q) = 2 tr(a G b G).
    let q_form = |site: usize| -> Vec<(usize, usize, f64)> {
        if site == 0 {
            return vec![(0, 0, 0.25)];
        }
        if site == n + 1 {
            return vec![(n - 1, n - 1, 0.25)];
        }
        let c = site - 1; // 0-based centre
        let mut entries = vec![(c, c, 0.5 * nu2 + 0.5)];
        if site >= 2 {
            let l = c - 1;
            entries.push((l, l, 0.25));
            entries.push((l, c, -0.25));
            entries.push((c, l, -0.25));
        }
        if site <= n - 1 {
            let r = c + 1;
            entries.push((r, r, 0.25));
            entries.push((r, c, -0.25));
            entries.push((c, r, -0.25));
        }
        entries
    };

    for i in 0..=n + 1 {
        let a = q_form(i);
        for j in i..=n + 1 {
            if (j - i) > 40 && nu >= 1.0 {
                // exponentially negligible beyond ~40 sites at nu >= 1
                continue;
            }
            let b = q_form(j);
            // 2 tr(a G b G) = 2 sum a_kl G_lm b_mn G_nk
            let mut tr = 0.0;
            for &(k, l, av) in &a {
                for &(m, nn, bv) in &b {
                    tr += av * g[(l, m)] * bv * g[(nn, k)];
                }
            }
            let mut c = 2.0 * tr;
            if i == j && i >= 1 && i <= n {
                c += 0.5; // Var(p^2/2) at unit temperature
            }
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    cov
}

/// Cov(E_i, E_j) under the Gibbs measure at uniform temperature `t`.
/// Site indices are 0..=N+1; the wall sites are frozen and covariance-free.
pub fn equilibrium_energy_covariance(i: usize, j: usize, t: f64, nu: f64, n: usize) -> f64 {
    assert!(i <= n + 1 && j <= n + 1, "site index out of range");
    let unit = energy_covariance_unit(nu, n);
    t * t * unit[(i, j)]
}

/// Mean local energy at unit temperature for sites 0..=N+1; tau = 0.
fn mean_energy_unit(nu: f64, n: usize) -> Vec<f64> {
    if nu == 0.0 {
        // moving: <p^2>/2 + (<r^2> + <r^2>)/4 = T; walls: <r^2>/4 = T/4
        let mut e = vec![1.0; n + 2];
        e[0] = 0.25;
        e[n + 1] = 0.25;
        return e;
    }
    let nu2 = nu * nu;
    let phi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0 + nu2
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    });
    let g = phi.lu().try_inverse().unwrap();
    let mut e = vec![0.0; n + 2];
    e[0] = 0.25 * g[(0, 0)];
    e[n + 1] = 0.25 * g[(n - 1, n - 1)];
    for c in 0..n {
        let var_q = g[(c, c)];
        let r_left = if c >= 1 {
            g[(c, c)] + g[(c - 1, c - 1)] - 2.0 * g[(c, c - 1)]
        } else {
            g[(c, c)]
        };
        let r_right = if c + 1 < n {
            g[(c, c)] + g[(c + 1, c + 1)] - 2.0 * g[(c, c + 1)]
        } else {
            g[(c, c)]
        };
        e[c + 1] = 0.5 + 0.5 * nu2 * var_q + 0.25 * (r_left + r_right);
    }
    e
}

/// Local-equilibrium prediction for s_N = N <H;H> / <H>^2: the double sum of
/// equilibrium energy covariances with the temperature pinned at the second
/// index, normalised by the squared mean energy per site.
pub fn lte_fluctuation_prediction(profile: &TemperatureProfile, nu: f64, n: usize) -> Result<f64> {
    if profile.len() != n {
        return Err(Error::invalid(format!(
            "profile length {} does not match n = {n}",
            profile.len()
        )));
    }
    let unit = energy_covariance_unit(nu, n);
    let mean_unit = mean_energy_unit(nu, n);
    // sites 0..=N+1 with the temperature index clamped to the profile
    let temp_at = |site: usize| -> f64 {
        let idx = site.clamp(1, n) - 1;
        profile.temps[idx]
    };

    // (1/N) sum_{j,j'} Cov(E_j', E_j) at temperature T_j
    let mut fluct = 0.0;
    for j in 0..=n + 1 {
        let tj = temp_at(j);
        let mut row = 0.0;
        for jp in 0..=n + 1 {
            row += unit[(jp, j)];
        }
        fluct += tj * tj * row;
    }
    fluct /= n as f64;

    // <H>/N with the local temperature
    let mean: f64 = (0..=n + 1)
        .map(|j| temp_at(j) * mean_unit[j])
        .sum::<f64>()
        / n as f64;

    Ok(fluct / (mean * mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn gibbs_moment_values() {
        let gm = |t, tau| {
            gibbs_moments(&GibbsParams {
                temperature: t,
                tension: tau,
                pinning: 0.0,
            })
            .unwrap()
        };
        assert_eq!(gm(2.0, 3.0), (2.0, 6.5, 3.0));
        assert_eq!(gm(1.0, 0.0), (1.0, 1.0, 0.0));
        assert_eq!(gm(5.0, -2.0), (5.0, 7.0, -2.0));
    }

    #[test]
    fn gibbs_moments_reject_pinning() {
        let r = gibbs_moments(&GibbsParams {
            temperature: 1.0,
            tension: 0.0,
            pinning: 0.5,
        });
        assert!(r.is_err());
    }

    #[test]
    fn unpinned_covariance_product_values() {
        let n = 12;
        let t = 1.7;
        // bulk variance: T^2/2 + T^2/8 + T^2/8 = 3T^2/4
        assert_relative_eq!(
            equilibrium_energy_covariance(6, 6, t, 0.0, n),
            0.75 * t * t,
            epsilon = 1e-12
        );
        // shared bond: T^2/8
        assert_relative_eq!(
            equilibrium_energy_covariance(6, 7, t, 0.0, n),
            0.125 * t * t,
            epsilon = 1e-12
        );
        // disjoint variables: exactly zero
        assert_eq!(equilibrium_energy_covariance(4, 7, t, 0.0, n), 0.0);
        assert_eq!(equilibrium_energy_covariance(0, 2, t, 0.0, n), 0.0);
        // wall shares: Var(r_0^2/4) = T^2/8, shared bond with site 1
        assert_relative_eq!(
            equilibrium_energy_covariance(0, 0, t, 0.0, n),
            0.125 * t * t,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            equilibrium_energy_covariance(0, 1, t, 0.0, n),
            0.125 * t * t,
            epsilon = 1e-12
        );
    }

    #[test]
    fn covariance_scales_as_t_squared() {
        let n = 10;
        for nu in [0.0, 1.0] {
            for (i, j) in [(3, 3), (3, 4), (2, 6)] {
                let base = equilibrium_energy_covariance(i, j, 1.0, nu, n);
                let scaled = equilibrium_energy_covariance(i, j, 3.0, nu, n);
                assert_relative_eq!(scaled, 9.0 * base, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    /// Monte Carlo sampling oracle: draw the Gaussian measure directly and
    /// estimate Cov(E_i, E_j); the Wick values must sit within 4 standard
    /// errors.
    #[test]
    fn wick_values_match_sampling_oracle() {
        let n = 16;
        let t: f64 = 1.0;
        let samples = 2_000_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(2024);

        for nu in [0.0f64, 1.0] {
            // position sampler
            let chol = if nu > 0.0 {
                let phi = DMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        2.0 + nu * nu
                    } else if i.abs_diff(j) == 1 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let g = phi.lu().try_inverse().unwrap() * t;
                Some(nalgebra::Cholesky::new(g).unwrap())
            } else {
                None
            };

            let pairs = [(8usize, 8usize), (8, 9), (8, 10), (8, 12), (0, 1)];
            let mut acc = [[0.0f64; 2]; 5]; // sum e_i*e_j, plus mean accumulators below
            let mut mean_i = [0.0f64; 5];
            let mut mean_j = [0.0f64; 5];
            let mut sq = [0.0f64; 5];

            let mut e = vec![0.0f64; n + 2];
            for _ in 0..samples {
                // momenta
                let p: Vec<f64> = (0..n)
                    .map(|_| t.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                // local energies
                if nu == 0.0 {
                    // independent bonds r_0..r_N
                    let r: Vec<f64> = (0..=n)
                        .map(|_| t.sqrt() * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    for site in 1..=n {
                        e[site] = 0.5 * p[site - 1] * p[site - 1]
                            + 0.25 * (r[site - 1] * r[site - 1] + r[site] * r[site]);
                    }
                    e[0] = 0.25 * r[0] * r[0];
                    e[n + 1] = 0.25 * r[n] * r[n];
                } else {
                    let z = nalgebra::DVector::from_fn(n, |_, _| {
                        rng.sample::<f64, _>(StandardNormal)
                    });
                    let q = chol.as_ref().unwrap().l() * z;
                    for site in 1..=n {
                        let qc = q[site - 1];
                        let rl = if site >= 2 { qc - q[site - 2] } else { qc };
                        let rr = if site <= n - 1 { q[site] - qc } else { -qc };
                        e[site] = 0.5 * p[site - 1] * p[site - 1]
                            + 0.5 * nu * nu * qc * qc
                            + 0.25 * (rl * rl + rr * rr);
                    }
                    e[0] = 0.25 * q[0] * q[0];
                    e[n + 1] = 0.25 * q[n - 1] * q[n - 1];
                }
                for (k, (i, j)) in pairs.iter().enumerate() {
                    acc[k][0] += e[*i] * e[*j];
                    mean_i[k] += e[*i];
                    mean_j[k] += e[*j];
                    sq[k] += e[*i] * e[*j] * e[*i] * e[*j];
                }
            }

            for (k, (i, j)) in pairs.iter().enumerate() {
                let m = samples as f64;
                let mean_prod = acc[k][0] / m;
                let cov_est = mean_prod - (mean_i[k] / m) * (mean_j[k] / m);
                // crude standard error of the covariance estimate
                let var_prod = sq[k] / m - mean_prod * mean_prod;
                let se = (var_prod / m).sqrt().max(1e-9) * 1.5;
                let exact = equilibrium_energy_covariance(*i, *j, t, nu, n);
                assert!(
                    (cov_est - exact).abs() <= 4.0 * se,
                    "nu={nu} pair ({i},{j}): est {cov_est:.5} vs exact {exact:.5} (4se = {:.2e})",
                    4.0 * se
                );
            }
        }
    }

    #[test]
    fn pinned_covariance_decays_exponentially() {
        let n = 32;
        let nu = 1.0;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for d in 1..=10 {
            let c = equilibrium_energy_covariance(10, 10 + d, 1.0, nu, n).abs();
            if c > 0.0 {
                xs.push(d as f64);
                ys.push(c.ln());
            }
        }
        let (_, slope, r2) = crate::linalg::linear_fit(&xs, &ys);
        assert!(slope < -0.5, "decay rate should be clearly negative: {slope}");
        assert!(r2 > 0.95, "log-linear fit quality r2 = {r2}");
    }

    #[test]
    fn lte_uniform_profile_tends_to_one() {
        let n = 64;
        let profile = TemperatureProfile::uniform(2.0, n).unwrap();
        let s = lte_fluctuation_prediction(&profile, 0.0, n).unwrap();
        assert!((s - 1.0).abs() <= 2.0 / n as f64, "s = {s}");
        // degenerate linear profile equals the uniform one
        let linear = TemperatureProfile::linear(2.0, 2.0, n).unwrap();
        let s2 = lte_fluctuation_prediction(&linear, 0.0, n).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn lte_linear_profile_matches_analytic_limit() {
        // (integral of Tbar^2) / (integral of Tbar)^2 = (73/3)/4.5^2 for 1..8
        let n = 400;
        let profile = TemperatureProfile::linear(1.0, 8.0, n).unwrap();
        let s = lte_fluctuation_prediction(&profile, 0.0, n).unwrap();
        let analytic = (73.0 / 3.0) / (4.5 * 4.5);
        assert!((s - analytic).abs() < 0.006, "s = {s} vs {analytic}");
        assert!((1.195..=1.21).contains(&s), "s = {s}");
    }
}
