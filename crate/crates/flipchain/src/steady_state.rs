//! Exact stationary second moments for both models, the self-consistent
//! temperature profile, linear-response kernels in the bath temperatures,
//! relaxation rates of the closed moment evolution, and the steady current.
//!
//! The second moments C = <z z^T> over z = (q_1..q_N, p_1..p_N) obey a closed
//! linear equation dC/dt = M(C) + S. The drift part is A C + C A^T with
//! A = [[0, I], [-Phi, -Lambda]]; velocity flips damp mixed q-p entries at
//! rate 2 gamma and distinct p-p entries at 4 gamma; the bath noise source S
//! carries 2 lambda_j T_j on the momentum diagonal of thermostatted sites.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::chain::{ChainParams, Model};
use crate::equilibrium::TemperatureProfile;
use crate::error::{Error, Result};

/// Largest N handled by a dense vectorised solve before switching to time
/// integration of the moment equation.
pub const DEFAULT_DENSE_LIMIT: usize = 64;

/// Symmetric 2N x 2N stationary second-moment matrix in (q, p) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoments {
    n: usize,
    pub cov: DMatrix<f64>,
}

impl SecondMoments {
    pub fn new(n: usize, cov: DMatrix<f64>) -> Self {
        assert_eq!(cov.nrows(), 2 * n);
        assert_eq!(cov.ncols(), 2 * n);
        SecondMoments { n, cov }
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    /// <q_i q_j>, 0-based moving sites.
    pub fn qq(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, j)]
    }

    /// <q_i p_j>.
    pub fn qp(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, self.n + j)]
    }

    /// <p_i p_j>.
    pub fn pp(&self, i: usize, j: usize) -> f64 {
        self.cov[(self.n + i, self.n + j)]
    }

    /// <r_i p_j> for bond i = 0..=N (walls fixed), 0-based momentum site j.
    pub fn rp(&self, bond: usize, j: usize) -> f64 {
        let right = if bond < self.n { self.qp(bond, j) } else { 0.0 };
        let left = if bond >= 1 { self.qp(bond - 1, j) } else { 0.0 };
        right - left
    }

    /// Gibbs covariance at temperature t: pp = T I, qp = 0,
    /// qq = T (-Laplacian_Dirichlet + nu^2)^{-1}.
    pub fn gibbs(params: &ChainParams, t: f64) -> Self {
        let n = params.n_sites;
        let g = params
            .phi_matrix()
            .lu()
            .try_inverse()
            .expect("Phi is positive definite");
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] = t * g[(i, j)];
            }
            cov[(n + i, n + i)] = t;
        }
        SecondMoments { n, cov }
    }

    pub fn max_abs_diff(&self, other: &SecondMoments) -> f64 {
        assert_eq!(self.n, other.n);
        let mut m: f64 = 0.0;
        for i in 0..2 * self.n {
            for j in 0..2 * self.n {
                m = m.max((self.cov[(i, j)] - other.cov[(i, j)]).abs());
            }
        }
        m
    }

    /// Smallest eigenvalue of the (symmetrised) covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Row-major CSV with one header row naming the coordinate order.
    pub fn to_csv_string(&self) -> String {
        let n = self.n;
        let mut s = String::new();
        let name = |k: usize| {
            if k < n {
                format!("q{}", k + 1)
            } else {
                format!("p{}", k - n + 1)
            }
        };
        let header: Vec<String> = (0..2 * n).map(name).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for i in 0..2 * n {
            let row: Vec<String> = (0..2 * n).map(|j| format!("{}", self.cov[(i, j)])).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Linear operator M of the closed moment evolution dC/dt = M(C) + S,
/// with arbitrary per-site friction and optional flip damping.
#[derive(Debug, Clone)]
pub struct MomentOperator {
    pub n: usize,
    pub nu: f64,
    /// Flip clock rate gamma; `None` for a flip-free chain.
    pub flip_rate: Option<f64>,
    pub friction: Vec<f64>,
}

impl MomentOperator {
    pub fn for_params(params: &ChainParams) -> Self {
        MomentOperator {
            n: params.n_sites,
            nu: params.pinning,
            flip_rate: match params.model {
                Model::VelocityFlip => Some(params.flip_rate),
                Model::SelfConsistent => None,
            },
            friction: params.friction_profile(),
        }
    }

    /// M(C) for symmetric C.
    pub fn apply(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let nu2 = self.nu * self.nu;
        let two_n = 2 * n;
        debug_assert_eq!(c.nrows(), two_n);

        // D = A C; result = D + D^T (valid for symmetric C).
        let mut d = DMatrix::zeros(two_n, two_n);
        for col in 0..two_n {
            for i in 0..n {
                // q-rows: (AC)[q_i, col] = C[p_i, col]
                d[(i, col)] = c[(n + i, col)];
                // p-rows: -(Phi C_q)[i, col] - friction_i C[p_i, col]
                let mut acc = -(2.0 + nu2) * c[(i, col)];
                if i > 0 {
                    acc += c[(i - 1, col)];
                }
                if i + 1 < n {
                    acc += c[(i + 1, col)];
                }
                d[(n + i, col)] = acc - self.friction[i] * c[(n + i, col)];
            }
        }
        let mut out = &d + d.transpose();

        if let Some(gamma) = self.flip_rate {
            if gamma != 0.0 {
                for a in 0..two_n {
                    for b in 0..two_n {
                        let damp = match (a >= n, b >= n) {
                            (false, false) => 0.0,
                            (true, true) => {
                                if a == b {
                                    0.0
                                } else {
                                    4.0 * gamma
                                }
                            }
                            _ => 2.0 * gamma,
                        };
                        out[(a, b)] -= damp * c[(a, b)];
                    }
                }
            }
        }
        out
    }

    /// Noise source with 2 * noise[j] on the momentum diagonal. `noise[j]`
    /// is the product friction_j * T_j summed over the baths attached to j.
    pub fn source_from_noise(&self, noise: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut s = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            s[(n + j, n + j)] = 2.0 * noise[j];
        }
        s
    }

    /// Dimension of the symmetric-matrix vectorisation.
    pub fn sym_dim(&self) -> usize {
        self.n * (2 * self.n + 1)
    }

    /// Dense matrixisation of M on the symmetric basis
    /// {E_ab = e_a e_b^T + e_b e_a^T (a < b), e_a e_a^T}.
    pub fn assemble_dense(&self) -> DMatrix<f64> {
        let two_n = 2 * self.n;
        let d = self.sym_dim();
        let idx = |a: usize, b: usize| -> usize {
            // a <= b
            a * two_n - a * (a + 1) / 2 + b
        };
        let mut m = DMatrix::zeros(d, d);
        let mut basis = DMatrix::zeros(two_n, two_n);
        for a in 0..two_n {
            for b in a..two_n {
                basis.fill(0.0);
                basis[(a, b)] = 1.0;
                basis[(b, a)] = 1.0;
                let image = self.apply(&basis);
                let col = idx(a, b);
                for c in 0..two_n {
                    for e in c..two_n {
                        let v = image[(c, e)];
                        if v != 0.0 {
                            m[(idx(c, e), col)] = v;
                        }
                    }
                }
            }
        }
        m
    }

    fn vectorise(&self, c: &DMatrix<f64>) -> DVector<f64> {
        let two_n = 2 * self.n;
        let mut v = DVector::zeros(self.sym_dim());
        let mut k = 0;
        for a in 0..two_n {
            for b in a..two_n {
                v[k] = c[(a, b)];
                k += 1;
            }
        }
        v
    }

    fn unvectorise(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let two_n = 2 * self.n;
        let mut c = DMatrix::zeros(two_n, two_n);
        let mut k = 0;
        for a in 0..two_n {
            for b in a..two_n {
                c[(a, b)] = v[k];
                c[(b, a)] = v[k];
                k += 1;
            }
        }
        c
    }

    /// Solve M(C) + S = 0 by dense LU on the vectorised operator.
    pub fn solve_stationary_dense(&self, source: &DMatrix<f64>) -> Result<SecondMoments> {
        let m = self.assemble_dense();
        let rhs = -self.vectorise(source);
        let lu = m.lu();
        let x = lu.solve(&rhs).ok_or_else(|| {
            Error::numerical(
                "singular moment operator; the chain has no unique NESS (check gamma, lambda > 0)",
            )
        })?;
        Ok(SecondMoments::new(self.n, self.unvectorise(&x)))
    }

    /// Solve M(C) + S = 0 by integrating the moment flow to stationarity
    /// (matrix-free; used beyond the dense size limit).
    pub fn solve_stationary_ode(
        &self,
        source: &DMatrix<f64>,
        init: Option<DMatrix<f64>>,
        tol: f64,
    ) -> Result<SecondMoments> {
        let two_n = 2 * self.n;
        let mut c = init.unwrap_or_else(|| DMatrix::identity(two_n, two_n));
        let max_fric = self.friction.iter().cloned().fold(0.0f64, f64::max);
        let gamma = self.flip_rate.unwrap_or(0.0);
        let stiff = 2.0 * (4.0 + self.nu * self.nu).sqrt() + 2.0 * max_fric + 4.0 * gamma + 1.0;
        let dt = 2.0 / stiff;
        let scale = source.amax().max(1.0);
        let max_steps = 80_000_000usize / (two_n * two_n).max(1);

        let mut residual = f64::INFINITY;
        for step in 0..max_steps {
            if step % 50 == 0 {
                let r = self.apply(&c) + source;
                residual = r.amax();
                if residual <= tol * scale {
                    return Ok(SecondMoments::new(self.n, c));
                }
            }
            // classical RK4 on dC/dt = M(C) + S
            let k1 = self.apply(&c) + source;
            let k2 = self.apply(&(&c + &k1 * (dt / 2.0))) + source;
            let k3 = self.apply(&(&c + &k2 * (dt / 2.0))) + source;
            let k4 = self.apply(&(&c + &k3 * dt)) + source;
            c += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            if !c[(0, 0)].is_finite() {
                return Err(Error::numerical(
                    "moment integration blew up; check the stability of the parameters",
                ));
            }
        }
        Err(Error::numerical(format!(
            "moment integration did not reach residual {tol:.1e} (last {residual:.2e})"
        )))
    }
}

/// Sine eigenbasis of Phi = -Laplacian_Dirichlet + nu^2:
/// returns (U, omega^2) with U orthogonal, columns the lattice sine modes.
fn dirichlet_modes(n: usize, nu: f64) -> (DMatrix<f64>, Vec<f64>) {
    let norm = (2.0 / (n as f64 + 1.0)).sqrt();
    let u = DMatrix::from_fn(n, n, |j, k| {
        norm * (((j + 1) * (k + 1)) as f64 * std::f64::consts::PI / (n as f64 + 1.0)).sin()
    });
    let omega2 = (0..n)
        .map(|k| {
            let s = ((k + 1) as f64 * std::f64::consts::PI / (2.0 * (n as f64 + 1.0))).sin();
            nu * nu + 4.0 * s * s
        })
        .collect();
    (u, omega2)
}

/// Exact stationary covariance for the flip-free chain with uniform friction
/// `lambda` and arbitrary momentum noise `noise[j]` (= lambda * T_j for
/// ordinary baths): a Lyapunov solve in the sine-mode basis, where the drift
/// block-diagonalises into independent 2x2 mode problems.
fn lyapunov_modal(n: usize, nu: f64, lambda: f64, noise: &[f64]) -> SecondMoments {
    let (u, omega2) = dirichlet_modes(n, nu);
    // S_pp = diag(2 noise_j) transformed to mode space
    let s_diag = DVector::from_fn(n, |j, _| 2.0 * noise[j]);
    let mut s_mode = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += u[(j, k)] * s_diag[j] * u[(j, l)];
            }
            s_mode[(k, l)] = acc;
        }
    }

    let mut q_mode = DMatrix::zeros(n, n);
    let mut z_mode = DMatrix::zeros(n, n);
    let mut p_mode = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            let (wk, wl) = (omega2[k], omega2[l]);
            let sigma = s_mode[(k, l)];
            let denom = (wk - wl) * (wk - wl) / (2.0 * lambda) + lambda * (wk + wl);
            let x11 = sigma / denom;
            q_mode[(k, l)] = x11;
            p_mode[(k, l)] = 0.5 * (wk + wl) * x11;
            z_mode[(k, l)] = 0.5 * (wk - wl) * x11 / lambda;
        }
    }

    let q = &u * q_mode * u.transpose();
    let z = &u * z_mode * u.transpose();
    let p = &u * p_mode * u.transpose();

    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] = q[(i, j)];
            cov[(i, n + j)] = z[(i, j)];
            cov[(n + j, i)] = z[(i, j)];
            cov[(n + i, n + j)] = p[(i, j)];
        }
    }
    SecondMoments::new(n, cov)
}

/// Assemble the moment-drift operator of the model (spec surface; the
/// returned operator exposes `apply`, the noise source, and dense assembly).
pub fn moment_drift_operator(params: &ChainParams) -> MomentOperator {
    MomentOperator::for_params(params)
}

/// Exact stationary covariance.
///
/// For the self-consistent model the given profile supplies every bath
/// temperature and the solve is an exact modal Lyapunov solution. For the
/// velocity-flip model only the end entries of the profile are read (the
/// interior carries no baths); the vectorised moment operator is solved
/// densely up to [`DEFAULT_DENSE_LIMIT`] sites and by time integration
/// beyond that.
pub fn stationary_covariance(
    params: &ChainParams,
    profile: &TemperatureProfile,
) -> Result<SecondMoments> {
    params.validate_for_ness()?;
    let n = params.n_sites;
    if profile.len() != n {
        return Err(Error::invalid(format!(
            "temperature profile length {} != n_sites {n}",
            profile.len()
        )));
    }
    match params.model {
        Model::SelfConsistent => Ok(lyapunov_modal(
            n,
            params.pinning,
            params.bath_coupling,
            &profile
                .temps
                .iter()
                .map(|t| params.bath_coupling * t)
                .collect::<Vec<_>>(),
        )),
        Model::VelocityFlip => {
            let op = MomentOperator::for_params(params);
            let mut noise = vec![0.0; n];
            noise[0] = params.bath_coupling * profile.temps[0];
            noise[n - 1] = params.bath_coupling * profile.temps[n - 1];
            let source = op.source_from_noise(&noise);
            if n <= DEFAULT_DENSE_LIMIT {
                op.solve_stationary_dense(&source)
            } else {
                let mean_t = 0.5 * (profile.temps[0] + profile.temps[n - 1]);
                let init = SecondMoments::gibbs(params, mean_t).cov;
                op.solve_stationary_ode(&source, Some(init), 1e-10)
            }
        }
    }
}

/// Stationary covariance of the velocity-flip model at its boundary
/// temperatures (convenience wrapper building the two-entry profile).
pub fn velocity_flip_covariance(params: &ChainParams) -> Result<SecondMoments> {
    let mut p = params.clone();
    p.model = Model::VelocityFlip;
    let profile = TemperatureProfile::linear(p.temp_left, p.temp_right, p.n_sites)?;
    stationary_covariance(&p, &profile)
}

/// Self-consistent temperature profile and its fixed-point residual.
#[derive(Debug, Clone)]
pub struct SelfConsistentSolution {
    pub profile: TemperatureProfile,
    /// max_j |<p_j^2> - T_j| over the interior sites.
    pub residual: f64,
}

/// Kernel K with <p_j^2> = sum_m K[j,m] T_m for the flip-free uniform-friction
/// chain (columns from unit-temperature modal solves).
fn psq_response_kernel(n: usize, nu: f64, lambda: f64) -> DMatrix<f64> {
    let (u, omega2) = dirichlet_modes(n, nu);
    let mut k_mat = DMatrix::zeros(n, n);
    for m in 0..n {
        // noise = lambda * e_m; mode source sigma_kl = 2 lambda U[m,k] U[m,l]
        // <p_j^2> = sum_{k,l} U[j,k] P_mode[k,l] U[j,l]
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                for l in 0..n {
                    let (wk, wl) = (omega2[k], omega2[l]);
                    let sigma = 2.0 * lambda * u[(m, k)] * u[(m, l)];
                    let denom = (wk - wl) * (wk - wl) / (2.0 * lambda) + lambda * (wk + wl);
                    acc += u[(j, k)] * 0.5 * (wk + wl) * sigma / denom * u[(j, l)];
                }
            }
            k_mat[(j, m)] = acc;
        }
    }
    k_mat
}

/// Solve the self-consistency condition T_j = <p_j^2> for the interior bath
/// temperatures, with T_1 = T_L and T_N = T_R held fixed. Exploits the exact
/// linearity of the stationary covariance in the bath temperatures: one
/// linear solve, no fixed-point iteration.
pub fn self_consistent_profile(params: &ChainParams) -> Result<SelfConsistentSolution> {
    params.validate_for_ness()?;
    if params.model != Model::SelfConsistent {
        return Err(Error::invalid(
            "self_consistent_profile needs model = SelfConsistent",
        ));
    }
    let n = params.n_sites;
    let (t_l, t_r) = (params.temp_left, params.temp_right);
    if n == 2 {
        let profile = TemperatureProfile::new(vec![t_l, t_r])?;
        return Ok(SelfConsistentSolution {
            profile,
            residual: 0.0,
        });
    }
    let k = psq_response_kernel(n, params.pinning, params.bath_coupling);

    // (I - K_II) T_I = K_IB [T_L, T_R]
    let ni = n - 2;
    let a = DMatrix::from_fn(ni, ni, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - k[(i + 1, j + 1)]
    });
    let b = DVector::from_fn(ni, |i, _| k[(i + 1, 0)] * t_l + k[(i + 1, n - 1)] * t_r);
    let interior = a.lu().solve(&b).ok_or_else(|| {
        Error::numerical("self-consistency system is singular; no unique interior profile")
    })?;

    let mut temps = Vec::with_capacity(n);
    temps.push(t_l);
    temps.extend(interior.iter().cloned());
    temps.push(t_r);

    // report the fixed-point residual through the kernel
    let mut residual: f64 = 0.0;
    for j in 1..n - 1 {
        let psq: f64 = (0..n).map(|m| k[(j, m)] * temps[m]).sum();
        residual = residual.max((psq - temps[j]).abs());
    }

    Ok(SelfConsistentSolution {
        profile: TemperatureProfile::new(temps)?,
        residual,
    })
}

/// Fixed-point iteration route to the same profile (cross-check mode).
pub fn self_consistent_profile_fixed_point(
    params: &ChainParams,
    tol: f64,
    max_iter: usize,
) -> Result<SelfConsistentSolution> {
    params.validate_for_ness()?;
    let n = params.n_sites;
    let k = psq_response_kernel(n, params.pinning, params.bath_coupling);
    let mut temps: Vec<f64> = TemperatureProfile::linear(params.temp_left, params.temp_right, n)?
        .temps;
    for _ in 0..max_iter {
        let mut next = temps.clone();
        let mut delta: f64 = 0.0;
        for j in 1..n - 1 {
            let psq: f64 = (0..n).map(|m| k[(j, m)] * temps[m]).sum();
            delta = delta.max((psq - temps[j]).abs());
            next[j] = psq;
        }
        temps = next;
        if delta <= tol {
            return Ok(SelfConsistentSolution {
                profile: TemperatureProfile::new(temps)?,
                residual: delta,
            });
        }
    }
    Err(Error::numerical(format!(
        "self-consistency fixed point did not converge to {tol:.1e} in {max_iter} iterations"
    )))
}

/// Linear-response kernels B^{(m)}_{XY}(i, j): the stationary covariance as
/// a linear functional of the bath temperatures of the self-consistent model.
#[derive(Debug, Clone)]
pub struct BKernel {
    pub n: usize,
    qq: Vec<DMatrix<f64>>,
    qp: Vec<DMatrix<f64>>,
    pp: Vec<DMatrix<f64>>,
}

impl BKernel {
    /// B^{(m)}_{qq}(i, j), all indices 0-based moving sites.
    pub fn bqq(&self, m: usize, i: usize, j: usize) -> f64 {
        self.qq[m][(i, j)]
    }

    pub fn bqp(&self, m: usize, i: usize, j: usize) -> f64 {
        self.qp[m][(i, j)]
    }

    pub fn bpp(&self, m: usize, i: usize, j: usize) -> f64 {
        self.pp[m][(i, j)]
    }

    /// r-indexed kernel by differencing the q kernels; bonds 0..=N.
    pub fn brr(&self, m: usize, bond_i: usize, bond_j: usize) -> f64 {
        let q = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= self.n as isize || j >= self.n as isize {
                0.0
            } else {
                self.qq[m][(i as usize, j as usize)]
            }
        };
        let (i, j) = (bond_i as isize, bond_j as isize);
        q(i, j) - q(i - 1, j) - q(i, j - 1) + q(i - 1, j - 1)
    }

    pub fn brp(&self, m: usize, bond_i: usize, j: usize) -> f64 {
        let qp = |i: isize| -> f64 {
            if i < 0 || i >= self.n as isize {
                0.0
            } else {
                self.qp[m][(i as usize, j)]
            }
        };
        let i = bond_i as isize;
        qp(i) - qp(i - 1)
    }

    /// Reconstruct <p_j^2> for an arbitrary profile (linearity check).
    pub fn reconstruct_psq(&self, profile: &TemperatureProfile, j: usize) -> f64 {
        (0..self.n)
            .map(|m| self.pp[m][(j, j)] * profile.temps[m])
            .sum()
    }

    /// Decay coordinate M = 1 + |i-j| + |i-m| + |j-m| (1-based site distances
    /// are the same as 0-based differences).
    pub fn decay_coordinate(m: usize, i: usize, j: usize) -> usize {
        1 + i.abs_diff(j) + i.abs_diff(m) + j.abs_diff(m)
    }
}

/// Columns of the covariance response to unit bath temperatures of the
/// self-consistent model.
pub fn b_kernel(params: &ChainParams) -> Result<BKernel> {
    params.validate_for_ness()?;
    if params.model != Model::SelfConsistent {
        return Err(Error::invalid("b_kernel needs model = SelfConsistent"));
    }
    let n = params.n_sites;
    let lambda = params.bath_coupling;
    let mut qq = Vec::with_capacity(n);
    let mut qp = Vec::with_capacity(n);
    let mut pp = Vec::with_capacity(n);
    for m in 0..n {
        let mut noise = vec![0.0; n];
        noise[m] = lambda;
        let c = lyapunov_modal(n, params.pinning, lambda, &noise);
        let mut bqq = DMatrix::zeros(n, n);
        let mut bqp = DMatrix::zeros(n, n);
        let mut bpp = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                bqq[(i, j)] = c.qq(i, j);
                bqp[(i, j)] = c.qp(i, j);
                bpp[(i, j)] = c.pp(i, j);
            }
        }
        qq.push(bqq);
        qp.push(bqp);
        pp.push(bpp);
    }
    Ok(BKernel { n, qq, qp, pp })
}

/// The matched self-consistent twin of a velocity-flip chain: Langevin baths
/// of coupling 2 gamma at every site (temperatures tuned flux-free,
/// including at the ends) on top of the same end baths (lambda, T_L/T_R).
/// With that convention the stationary covariance coincides with the
/// velocity-flip one exactly; with a single uniform coupling it does not.
pub struct FluxMatchedSolution {
    pub moments: SecondMoments,
    /// The flux-free bath temperatures at every site.
    pub bath_temps: Vec<f64>,
}

pub fn flux_matched_covariance(params: &ChainParams) -> Result<FluxMatchedSolution> {
    params.validate_for_ness()?;
    let n = params.n_sites;
    let gamma = params.flip_rate;
    let lambda = params.bath_coupling;
    if gamma <= 0.0 {
        return Err(Error::invalid("flux matching needs flip_rate > 0"));
    }

    let mut friction = vec![2.0 * gamma; n];
    friction[0] += lambda;
    friction[n - 1] += lambda;
    let op = MomentOperator {
        n,
        nu: params.pinning,
        flip_rate: None,
        friction,
    };

    let m = op.assemble_dense();
    let lu = m.lu();
    let solve = |noise: &[f64]| -> Result<SecondMoments> {
        let rhs = -op.vectorise(&op.source_from_noise(noise));
        let x = lu
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("singular flux-matched moment operator"))?;
        Ok(SecondMoments::new(n, op.unvectorise(&x)))
    };

    // <p_j^2> = base_j + sum_m A[j,m] T_m with T the flux-free temperatures
    let mut base_noise = vec![0.0; n];
    base_noise[0] = lambda * params.temp_left;
    base_noise[n - 1] = lambda * params.temp_right;
    let base = solve(&base_noise)?;

    let mut a = DMatrix::zeros(n, n);
    for m_site in 0..n {
        let mut noise = vec![0.0; n];
        noise[m_site] = 2.0 * gamma;
        let col = solve(&noise)?;
        for j in 0..n {
            a[(j, m_site)] = col.pp(j, j);
        }
    }
    let sys = DMatrix::identity(n, n) - a;
    let rhs = DVector::from_fn(n, |j, _| base.pp(j, j));
    let temps = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("flux matching system is singular"))?;

    let mut noise = base_noise;
    for j in 0..n {
        noise[j] += 2.0 * gamma * temps[j];
    }
    let moments = solve(&noise)?;
    Ok(FluxMatchedSolution {
        moments,
        bath_temps: temps.iter().cloned().collect(),
    })
}

/// Smallest decay rate of the closed moment evolution.
///
/// Self-consistent chains block-diagonalise over sine modes, so the whole
/// spectrum {mu_a + mu_b} is available in closed form. The velocity-flip
/// operator is handled on its symmetric vectorisation by inverse power
/// iteration (the slowest mode is the one nearest zero), falling back to the
/// integration route if the iteration stalls.
pub fn spectral_gap(params: &ChainParams) -> Result<f64> {
    params.validate_for_ness()?;
    match params.model {
        Model::SelfConsistent => {
            let (_, omega2) = dirichlet_modes(params.n_sites, params.pinning);
            let lambda = params.bath_coupling;
            let mut min_re = f64::INFINITY;
            for w2 in omega2 {
                let disc = lambda * lambda - 4.0 * w2;
                let re = if disc >= 0.0 {
                    // overdamped: slower root
                    (lambda - disc.sqrt()) / 2.0
                } else {
                    lambda / 2.0
                };
                min_re = min_re.min(re);
            }
            Ok(2.0 * min_re)
        }
        Model::VelocityFlip => {
            if params.n_sites <= DEFAULT_DENSE_LIMIT {
                match spectral_gap_inverse_iteration(params) {
                    Ok(g) => Ok(g),
                    Err(_) => relaxation_rate_by_integration(params, 42),
                }
            } else {
                relaxation_rate_by_integration(params, 42)
            }
        }
    }
}

fn spectral_gap_inverse_iteration(params: &ChainParams) -> Result<f64> {
    let op = MomentOperator::for_params(params);
    let m = op.assemble_dense();
    let lu = m.clone().lu();
    let d = op.sym_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(12345);
    let mut x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0f64));
    x /= x.norm();

    let mut lambda_prev = f64::INFINITY;
    for iter in 0..500 {
        let y = lu
            .solve(&x)
            .ok_or_else(|| Error::numerical("singular moment operator in gap solve"))?;
        let norm = y.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::numerical("inverse iteration broke down"));
        }
        let lambda = x.dot(&y).signum() / norm;
        x = y / norm;
        if iter > 3 && (lambda - lambda_prev).abs() <= 1e-12 + 1e-9 * lambda.abs() {
            // verify it is a genuine real eigenpair
            let mx = &m * &x;
            let res = (&mx - &x * lambda).norm();
            if res <= 1e-6 * lambda.abs().max(1e-12) {
                return Ok(lambda.abs());
            }
            return Err(Error::numerical(
                "slowest moment mode is not a simple real eigenvalue",
            ));
        }
        lambda_prev = lambda;
    }
    Err(Error::numerical("inverse iteration did not converge"))
}

/// Decay-rate estimate of the slowest moment mode by long-time integration of
/// the homogeneous moment flow (matrix-free; independent of the dense route).
pub fn relaxation_rate_by_integration(params: &ChainParams, seed: u64) -> Result<f64> {
    let op = MomentOperator::for_params(params);
    let n = op.n;
    let two_n = 2 * n;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(two_n, two_n, |_, _| rng.random_range(-1.0..1.0f64));
    x = (&x + x.transpose()) * 0.5;
    x /= x.norm();

    let max_fric = op.friction.iter().cloned().fold(0.0f64, f64::max);
    let gamma = op.flip_rate.unwrap_or(0.0);
    let stiff = 2.0 * (4.0 + op.nu * op.nu).sqrt() + 2.0 * max_fric + 4.0 * gamma + 1.0;
    let dt = 2.0 / stiff;

    let mut rate_prev = f64::NAN;
    // integrate in windows, renormalising, until the per-window rate and the
    // Rayleigh quotient agree and stabilise
    let window_steps = 400usize;
    for _ in 0..4000 {
        let before = x.norm();
        for _ in 0..window_steps {
            let k1 = op.apply(&x);
            let k2 = op.apply(&(&x + &k1 * (dt / 2.0)));
            let k3 = op.apply(&(&x + &k2 * (dt / 2.0)));
            let k4 = op.apply(&(&x + &k3 * dt));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        let after = x.norm();
        if !after.is_finite() || after == 0.0 {
            return Err(Error::numerical("relaxation integration broke down"));
        }
        let rate = -(after / before).ln() / (window_steps as f64 * dt);
        x /= after;
        let rayleigh = -x.dot(&op.apply(&x)) / x.dot(&x);
        if rate_prev.is_finite()
            && (rate - rate_prev).abs() <= 1e-3 * rate.abs()
            && (rate - rayleigh).abs() <= 2e-3 * rate.abs()
        {
            return Ok(rayleigh);
        }
        rate_prev = rate;
    }
    Err(Error::numerical(
        "relaxation rate did not stabilise; increase the integration budget",
    ))
}

/// Mean bulk energy current and the Gaussian fluctuation statistic
/// s = N Var(H) / <H>^2 read off a stationary covariance by Wick's theorem.
///
/// The current orientation follows dE_j/dt = j^e_j - j^e_{j+1}: positive
/// means energy flows from the left (hot when T_L > T_R) to the right. For
/// the self-consistent model the NESS is Gaussian and s is exact; for the
/// velocity-flip model it is a Gaussian diagnostic only (that NESS has
/// nonzero fourth cumulants).
pub fn steady_current_and_s(params: &ChainParams, cov: &SecondMoments) -> (f64, f64) {
    let n = params.n_sites;
    // <j^e_j> = -(1/2) <r_{j-1} (p_j + p_{j-1})> averaged over interior bonds
    let mut current = 0.0;
    let mut count = 0usize;
    for site in 2..=n {
        let bond = site - 1; // bond between sites site-1 and site, 1-based
        let j_e = -0.5 * (cov.rp(bond, site - 1) + cov.rp(bond, site - 2));
        current += j_e;
        count += 1;
    }
    if count > 0 {
        current /= count as f64;
    }

    let w = params.hamiltonian_form();
    let a = &w * &cov.cov;
    let mean_h = a.trace();
    let mut tr_a2 = 0.0;
    for i in 0..2 * n {
        for j in 0..2 * n {
            tr_a2 += a[(i, j)] * a[(j, i)];
        }
    }
    let var_h = 2.0 * tr_a2;
    let s = n as f64 * var_h / (mean_h * mean_h);
    (current, s)
}
