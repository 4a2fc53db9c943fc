//! Chain geometry, phase-space state, local observables, and the stochastic
//! generator acting on quadratic observables.
//!
//! The chain has `n` moving particles at sites `1..=N` plus two fixed wall
//! particles at sites `0` and `N+1` (positions and momenta pinned to zero).
//! Internally all state vectors are 0-based over the moving particles; the
//! wall particles never appear in the state.
//!
//! Local energies follow the per-site convention
//! `E_j = p_j^2/2 + nu^2 q_j^2/2 + (r_{j-1}^2 + r_j^2)/4` with
//! `r_j = q_{j+1} - q_j`, for every site j = 0..=N+1 including the walls
//! (whose own q, p vanish but whose bond shares r^2/4 do not). The total
//! H = sum_j E_j then carries every bond at full weight 1/2 and is exactly
//! the Hamiltonian the dynamics conserves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which bulk noise drives the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// Poissonian per-site velocity reversals plus Langevin baths at the ends.
    VelocityFlip,
    /// Langevin baths at every site; interior temperatures are tuned so the
    /// stationary particle-bath energy flux vanishes (see `steady_state`).
    SelfConsistent,
}

/// Physical configuration of a chain experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Number of moving particles N.
    pub n_sites: usize,
    /// On-site pinning frequency nu (>= 0; nu = 0 is the unpinned chain).
    pub pinning: f64,
    /// Per-site Poisson clock rate gamma of the velocity flips.
    pub flip_rate: f64,
    /// Langevin friction lambda at thermostatted sites.
    pub bath_coupling: f64,
    /// Left bath temperature T_L.
    pub temp_left: f64,
    /// Right bath temperature T_R.
    pub temp_right: f64,
    pub model: Model,
}

impl ChainParams {
    pub fn new(
        n_sites: usize,
        pinning: f64,
        flip_rate: f64,
        bath_coupling: f64,
        temp_left: f64,
        temp_right: f64,
        model: Model,
    ) -> Result<Self> {
        let p = ChainParams {
            n_sites,
            pinning,
            flip_rate,
            bath_coupling,
            temp_left,
            temp_right,
            model,
        };
        p.validate()?;
        Ok(p)
    }

    /// Basic well-formedness. Degenerate rates (gamma = 0, lambda = 0) are
    /// allowed here so closed and noise-free chains can be exercised; solvers
    /// that need a unique NESS call [`ChainParams::validate_for_ness`].
    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::invalid("n_sites must be at least 1"));
        }
        for (name, v) in [
            ("pinning", self.pinning),
            ("flip_rate", self.flip_rate),
            ("bath_coupling", self.bath_coupling),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("temp_left", self.temp_left), ("temp_right", self.temp_right)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Stricter check for steady-state solvers: both noises present and a
    /// chain long enough to carry a current.
    pub fn validate_for_ness(&self) -> Result<()> {
        self.validate()?;
        if self.n_sites < 2 {
            return Err(Error::invalid("NESS solvers need n_sites >= 2"));
        }
        if self.bath_coupling <= 0.0 {
            return Err(Error::invalid("NESS solvers need bath_coupling > 0"));
        }
        if self.model == Model::VelocityFlip && self.flip_rate <= 0.0 {
            return Err(Error::invalid(
                "the velocity-flip NESS needs flip_rate > 0",
            ));
        }
        Ok(())
    }

    /// Force matrix Phi = -Laplacian_Dirichlet + nu^2 (N x N, positive definite
    /// for nu >= 0 with fixed ends). The equations of motion are
    /// qdot = p, pdot = -Phi q (+ noise).
    pub fn phi_matrix(&self) -> DMatrix<f64> {
        let n = self.n_sites;
        let nu2 = self.pinning * self.pinning;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 + nu2
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Harmonic force -Phi q, written out without building the matrix.
    pub fn force(&self, q: &[f64], out: &mut [f64]) {
        let n = self.n_sites;
        let nu2 = self.pinning * self.pinning;
        for j in 0..n {
            let left = if j > 0 { q[j - 1] } else { 0.0 };
            let right = if j + 1 < n { q[j + 1] } else { 0.0 };
            out[j] = left + right - (2.0 + nu2) * q[j];
        }
    }

    /// Per-site Langevin friction: the ends for the velocity-flip model,
    /// every site for the self-consistent model.
    pub fn friction_profile(&self) -> Vec<f64> {
        let n = self.n_sites;
        let mut f = vec![0.0; n];
        match self.model {
            Model::VelocityFlip => {
                f[0] = self.bath_coupling;
                f[n - 1] = self.bath_coupling;
            }
            Model::SelfConsistent => {
                f.fill(self.bath_coupling);
            }
        }
        f
    }

    /// Quadratic form W of the total energy, H = z^T W z over
    /// z = (q_1..q_N, p_1..p_N): W = diag(Phi/2, I/2).
    pub fn hamiltonian_form(&self) -> DMatrix<f64> {
        let n = self.n_sites;
        let phi = self.phi_matrix();
        let mut w = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            w[(n + j, n + j)] = 0.5;
            for i in 0..n {
                w[(i, j)] = 0.5 * phi[(i, j)];
            }
        }
        w
    }
}

/// Phase-space point of the moving particles plus a clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub positions: Vec<f64>,
    pub momenta: Vec<f64>,
    pub time: f64,
}

impl ChainState {
    pub fn zeros(n: usize) -> Self {
        ChainState {
            positions: vec![0.0; n],
            momenta: vec![0.0; n],
            time: 0.0,
        }
    }

    pub fn new(positions: Vec<f64>, momenta: Vec<f64>, time: f64) -> Result<Self> {
        let s = ChainState {
            positions,
            momenta,
            time,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn n_sites(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.momenta.len() {
            return Err(Error::invalid("positions/momenta length mismatch"));
        }
        if self.positions.is_empty() {
            return Err(Error::invalid("empty state"));
        }
        if !(self.time.is_finite() && self.time >= 0.0) {
            return Err(Error::invalid("time must be finite and >= 0"));
        }
        let finite = self
            .positions
            .iter()
            .chain(self.momenta.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::numerical("non-finite entry in chain state"));
        }
        Ok(())
    }

    /// Flip the momentum sign at 0-based site `j`. Conserves every local
    /// energy exactly.
    pub fn flip(&mut self, j: usize) {
        self.momenta[j] = -self.momenta[j];
    }
}

/// Local energies, deformations, and the associated lattice currents.
///
/// Index conventions (sites are 1-based here to keep the wall bonds visible):
/// - `local_energy[j]` for j = 0..=N+1; the wall entries carry their bond
///   shares r_0^2/4 and r_N^2/4.
/// - `deformation[j]` = r_j = q_{j+1} - q_j for bonds j = 0..=N.
/// - `energy_current[j]` = j^e_j = -r_{j-1} (p_j + p_{j-1}) / 2 for
///   j = 1..=N+1 (entry 0 kept zero), so that dE_j/dt = j^e_j - j^e_{j+1}
///   along the deterministic flow, walls included.
/// - `deformation_current[j]` = j^r_j = -p_j for j = 0..=N+1.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservables {
    pub local_energy: Vec<f64>,
    pub deformation: Vec<f64>,
    pub energy_current: Vec<f64>,
    pub deformation_current: Vec<f64>,
}

/// Evaluate all local observables at one state.
pub fn local_observables(state: &ChainState, params: &ChainParams) -> LocalObservables {
    let n = params.n_sites;
    debug_assert_eq!(state.n_sites(), n);
    let q = &state.positions;
    let p = &state.momenta;
    let nu2 = params.pinning * params.pinning;

    // r_j for bonds j = 0..=N, with the walls at zero.
    let mut deformation = vec![0.0; n + 1];
    for bond in 0..=n {
        let right = if bond < n { q[bond] } else { 0.0 };
        let left = if bond >= 1 { q[bond - 1] } else { 0.0 };
        deformation[bond] = right - left;
    }

    let mut local_energy = vec![0.0; n + 2];
    for site in 1..=n {
        let qj = q[site - 1];
        let pj = p[site - 1];
        let r_left = deformation[site - 1];
        let r_right = deformation[site];
        local_energy[site] =
            0.5 * pj * pj + 0.5 * nu2 * qj * qj + 0.25 * (r_left * r_left + r_right * r_right);
    }
    local_energy[0] = 0.25 * deformation[0] * deformation[0];
    local_energy[n + 1] = 0.25 * deformation[n] * deformation[n];

    let momentum_at = |site: usize| -> f64 {
        if site >= 1 && site <= n {
            p[site - 1]
        } else {
            0.0
        }
    };

    let mut energy_current = vec![0.0; n + 2];
    for site in 1..=n + 1 {
        energy_current[site] =
            -0.5 * deformation[site - 1] * (momentum_at(site) + momentum_at(site - 1));
    }

    let mut deformation_current = vec![0.0; n + 2];
    for site in 1..=n {
        deformation_current[site] = -p[site - 1];
    }

    LocalObservables {
        local_energy,
        deformation,
        energy_current,
        deformation_current,
    }
}

/// Total energy H = sum of the local energies (every bond at weight 1/2,
/// wall bonds included).
pub fn total_energy(state: &ChainState, params: &ChainParams) -> f64 {
    let n = params.n_sites;
    debug_assert_eq!(state.n_sites(), n);
    let q = &state.positions;
    let p = &state.momenta;
    let nu2 = params.pinning * params.pinning;
    let mut h = 0.0;
    for j in 0..n {
        let r_left = if j == 0 { q[0] } else { q[j] - q[j - 1] };
        let r_right = if j + 1 == n { -q[j] } else { q[j + 1] - q[j] };
        h += 0.5 * p[j] * p[j]
            + 0.5 * nu2 * q[j] * q[j]
            + 0.25 * (r_left * r_left + r_right * r_right);
    }
    // wall shares of the two boundary bonds
    h += 0.25 * q[0] * q[0] + 0.25 * q[n - 1] * q[n - 1];
    h
}

/// A polynomial of degree <= 2 on phase space,
/// f(z) = c + b.z + z^T M z with z = (q_1..q_N, p_1..p_N) and M symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObservable {
    n: usize,
    pub constant: f64,
    pub linear: DVector<f64>,
    pub quadratic: DMatrix<f64>,
}

/// One phase-space coordinate of a moving particle (0-based site index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    Q(usize),
    P(usize),
}

impl Coord {
    fn index(self, n: usize) -> usize {
        match self {
            Coord::Q(i) => {
                assert!(i < n, "q index out of range");
                i
            }
            Coord::P(i) => {
                assert!(i < n, "p index out of range");
                n + i
            }
        }
    }
}

impl QuadraticObservable {
    pub fn zero(n: usize) -> Self {
        QuadraticObservable {
            n,
            constant: 0.0,
            linear: DVector::zeros(2 * n),
            quadratic: DMatrix::zeros(2 * n, 2 * n),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    /// The monomial z_a * z_b.
    pub fn product(n: usize, a: Coord, b: Coord) -> Self {
        let mut f = Self::zero(n);
        let (ia, ib) = (a.index(n), b.index(n));
        if ia == ib {
            f.quadratic[(ia, ia)] = 1.0;
        } else {
            f.quadratic[(ia, ib)] = 0.5;
            f.quadratic[(ib, ia)] = 0.5;
        }
        f
    }

    /// The monomial z_a.
    pub fn coordinate(n: usize, a: Coord) -> Self {
        let mut f = Self::zero(n);
        f.linear[a.index(n)] = 1.0;
        f
    }

    /// Build from a list of monomials `(coefficient, coords)`. Rejects any
    /// monomial of degree > 2.
    pub fn from_monomials(n: usize, monomials: &[(f64, Vec<Coord>)]) -> Result<Self> {
        let mut f = Self::zero(n);
        for (coeff, coords) in monomials {
            match coords.len() {
                0 => f.constant += coeff,
                1 => f.linear[coords[0].index(n)] += coeff,
                2 => {
                    let (ia, ib) = (coords[0].index(n), coords[1].index(n));
                    if ia == ib {
                        f.quadratic[(ia, ia)] += coeff;
                    } else {
                        f.quadratic[(ia, ib)] += 0.5 * coeff;
                        f.quadratic[(ib, ia)] += 0.5 * coeff;
                    }
                }
                d => {
                    return Err(Error::invalid(format!(
                        "monomial of degree {d} exceeds the quadratic-descriptor limit"
                    )))
                }
            }
        }
        Ok(f)
    }

    pub fn scale(mut self, c: f64) -> Self {
        self.constant *= c;
        self.linear *= c;
        self.quadratic *= c;
        self
    }

    pub fn add(mut self, other: &QuadraticObservable) -> Self {
        assert_eq!(self.n, other.n);
        self.constant += other.constant;
        self.linear += &other.linear;
        self.quadratic += &other.quadratic;
        self
    }

    pub fn evaluate(&self, state: &ChainState) -> f64 {
        let n = self.n;
        debug_assert_eq!(state.n_sites(), n);
        let z = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                state.positions[i]
            } else {
                state.momenta[i - n]
            }
        });
        self.constant + self.linear.dot(&z) + (&z.transpose() * &self.quadratic * &z)[(0, 0)]
    }

    /// Evaluate after flipping the momentum sign at 0-based site `j`
    /// (used by tests as the direct route to the flip generator).
    pub fn evaluate_flipped(&self, state: &ChainState, j: usize) -> f64 {
        let mut s = state.clone();
        s.flip(j);
        self.evaluate(&s)
    }
}

/// Full generator specification: harmonic drift, optional flip noise, and
/// Langevin baths described by per-site friction and temperature.
pub(crate) struct GeneratorSpec<'a> {
    pub nu: f64,
    pub flip_rate: Option<f64>,
    pub friction: &'a [f64],
    pub bath_temps: &'a [f64],
}

/// Apply the generator to a quadratic observable, returning the (again
/// quadratic) descriptor of L f.
pub(crate) fn generator_core(f: &QuadraticObservable, spec: &GeneratorSpec) -> QuadraticObservable {
    let n = f.n;
    assert_eq!(spec.friction.len(), n);
    assert_eq!(spec.bath_temps.len(), n);
    let nu2 = spec.nu * spec.nu;

    // Drift matrix A: qdot = p, pdot = -Phi q - friction p.
    // A^T b and A^T M + M A computed with A's sparsity written out.
    let mut out = QuadraticObservable::zero(n);

    // a_col(j) = column j of A as (row, value) pairs.
    // Columns 0..n (q_j): rows p: -Phi e_j.
    // Columns n..2n (p_j): row q_j: 1; row p_j: -friction[j].
    let phi_col = |j: usize| -> [(usize, f64); 3] {
        let mut entries = [(usize::MAX, 0.0); 3];
        let mut k = 0;
        if j > 0 {
            entries[k] = (n + j - 1, 1.0);
            k += 1;
        }
        entries[k] = (n + j, -(2.0 + nu2));
        k += 1;
        if j + 1 < n {
            entries[k] = (n + j + 1, 1.0);
        }
        entries
    };

    // (A^T b)_i = sum_r A_{r i} b_r = column i of A dotted with b.
    for i in 0..n {
        // q-column i
        let mut acc = 0.0;
        for (row, val) in phi_col(i) {
            if row != usize::MAX {
                acc += val * f.linear[row];
            }
        }
        out.linear[i] += acc;
        // p-column i
        out.linear[n + i] += f.linear[i] - spec.friction[i] * f.linear[n + i];
    }

    // M A: (M A)_{r c} = sum_k M_{r k} A_{k c}; columns as above.
    let mut ma = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for c in 0..n {
        for (row, val) in phi_col(c) {
            if row == usize::MAX {
                continue;
            }
            for r in 0..2 * n {
                ma[(r, c)] += f.quadratic[(r, row)] * val;
            }
        }
    }
    for c in 0..n {
        for r in 0..2 * n {
            ma[(r, n + c)] +=
                f.quadratic[(r, c)] - spec.friction[c] * f.quadratic[(r, n + c)];
        }
    }
    out.quadratic += &ma + ma.transpose();

    // Bath diffusion: lambda_j T_j d^2/dp_j^2 adds a constant 2 lambda T M_pp.
    for j in 0..n {
        out.constant += 2.0 * spec.friction[j] * spec.bath_temps[j] * f.quadratic[(n + j, n + j)];
    }

    // Velocity flips: gamma sum_j [f(R_j z) - f(z)]. Entrywise on the
    // coefficients: mixed q-p terms relax at 2 gamma, distinct p-p terms at
    // 4 gamma, everything else (q-q, diagonal p^2, constants) is invariant.
    if let Some(gamma) = spec.flip_rate {
        if gamma != 0.0 {
            for j in 0..n {
                out.linear[n + j] += -2.0 * gamma * f.linear[n + j];
            }
            for a in 0..2 * n {
                for b in 0..2 * n {
                    let rate = match (a >= n, b >= n) {
                        (false, false) => 0.0,
                        (true, true) => {
                            if a == b {
                                0.0
                            } else {
                                -4.0 * gamma
                            }
                        }
                        _ => -2.0 * gamma,
                    };
                    out.quadratic[(a, b)] += rate * f.quadratic[(a, b)];
                }
            }
        }
    }

    out
}

/// Descriptor of L f for the model's generator: harmonic drift, the model's
/// flip part, and Langevin baths at sites 1 and N with temperatures
/// (T_L, T_R) and friction lambda.
pub fn generator(f: &QuadraticObservable, params: &ChainParams) -> QuadraticObservable {
    let n = params.n_sites;
    assert_eq!(f.n_sites(), n);
    let mut friction = vec![0.0; n];
    let mut temps = vec![0.0; n];
    friction[0] = params.bath_coupling;
    friction[n - 1] = params.bath_coupling;
    temps[0] = params.temp_left;
    temps[n - 1] = params.temp_right;
    let flip = match params.model {
        Model::VelocityFlip => Some(params.flip_rate),
        Model::SelfConsistent => None,
    };
    generator_core(
        f,
        &GeneratorSpec {
            nu: params.pinning,
            flip_rate: flip,
            friction: &friction,
            bath_temps: &temps,
        },
    )
}

/// (L f)(state) for a quadratic observable descriptor.
pub fn generator_apply(f: &QuadraticObservable, state: &ChainState, params: &ChainParams) -> f64 {
    generator(f, params).evaluate(state)
}

/// Bulk generator (harmonic drift + flips, no baths), used for bulk
/// identities that the bath terms would spoil.
fn bulk_generator(f: &QuadraticObservable, params: &ChainParams) -> QuadraticObservable {
    let n = params.n_sites;
    let friction = vec![0.0; n];
    let temps = vec![0.0; n];
    generator_core(
        f,
        &GeneratorSpec {
            nu: params.pinning,
            flip_rate: Some(params.flip_rate),
            friction: &friction,
            bath_temps: &temps,
        },
    )
}

/// Energy current j^e_j as a quadratic descriptor,
/// j^e_j = -r_{j-1}(p_j + p_{j-1})/2, site j 1-based in 2..=N.
pub fn energy_current_observable(params: &ChainParams, site: usize) -> Result<QuadraticObservable> {
    let n = params.n_sites;
    if site < 2 || site > n {
        return Err(Error::invalid(format!(
            "energy current descriptor needs an interior bond, got site {site} for N={n}"
        )));
    }
    // r_{j-1} = q_j - q_{j-1}; 0-based moving indices j-1 and j-2.
    let qr = Coord::Q(site - 1);
    let ql = Coord::Q(site - 2);
    let pj = Coord::P(site - 1);
    let pl = Coord::P(site - 2);
    QuadraticObservable::from_monomials(
        n,
        &[
            (-0.5, vec![qr, pj]),
            (-0.5, vec![qr, pl]),
            (0.5, vec![ql, pj]),
            (0.5, vec![ql, pl]),
        ],
    )
}

/// Residual of the bulk current decomposition
/// `j^e_j = -(grad phi)_j + L h_j` at one state.
///
/// Here `phi_j = (p_{j-1}^2 + r_{j-1} r_{j-2})/(2 g)` and `h_j = -j^e_j / g`
/// with `g = 2 gamma`, the macroscopic flip coefficient: a Poisson clock of
/// rate gamma damps momenta at rate `2 gamma`, and it is that damping rate
/// that plays the role of the diffusion parameter in the decomposition.
/// The identity holds exactly for the bulk generator, so sites whose stencil
/// touches a bath (j < 3 or j > N-1) are rejected, as are pinned chains
/// (the decomposition is specific to nu = 0).
pub fn check_current_decomposition(
    state: &ChainState,
    params: &ChainParams,
    site: usize,
) -> Result<f64> {
    let n = params.n_sites;
    if params.pinning != 0.0 {
        return Err(Error::invalid(
            "current decomposition holds for the unpinned chain only",
        ));
    }
    if params.flip_rate <= 0.0 {
        return Err(Error::invalid("current decomposition needs flip_rate > 0"));
    }
    // The current at site j sits on bond j-1; the identity needs the whole
    // stencil away from the thermostatted end sites 1 and N.
    if site < 2 || site + 1 > n {
        return Err(Error::invalid(format!(
            "site {site} is at a bath or outside the bulk; need 2 <= j <= N-1 (N={n})"
        )));
    }
    let g = 2.0 * params.flip_rate;

    let phi_at = |j: usize| -> Result<QuadraticObservable> {
        // phi_j = (p_{j-1}^2 + r_{j-1} r_{j-2})/(2g) with r_{j-1} = q_j - q_{j-1};
        // expand r_{j-1} r_{j-2} = (q_j - q_{j-1})(q_{j-1} - q_{j-2}), dropping
        // the wall coordinate q_0 when j = 2.
        let c = 1.0 / (2.0 * g);
        let p = Coord::P(j - 2);
        let qj = Coord::Q(j - 1);
        let qjm1 = Coord::Q(j - 2);
        let mut monos = vec![
            (c, vec![p, p]),
            (c, vec![qj, qjm1]),
            (-c, vec![qjm1, qjm1]),
        ];
        if j >= 3 {
            let qjm2 = Coord::Q(j - 3);
            monos.push((-c, vec![qj, qjm2]));
            monos.push((c, vec![qjm1, qjm2]));
        }
        QuadraticObservable::from_monomials(params.n_sites, &monos)
    };

    let je = energy_current_observable(params, site)?;
    let h = je.clone().scale(-1.0 / g);
    let lh = bulk_generator(&h, params);
    let grad_phi = phi_at(site + 1)?.add(&phi_at(site)?.scale(-1.0));

    let lhs = je.evaluate(state);
    let rhs = -grad_phi.evaluate(state) + lh.evaluate(state);
    Ok((lhs - rhs).abs())
}

/// Per-site defect of the lattice conservation law
/// `E_j(t) - E_j(0) = int_0^t (j^e_j - j^e_{j+1}) ds`
/// with the time integral done by the trapezoid rule over the sampled states.
/// Returns defects for all sites j = 0..=N+1 (the walls obey the same law
/// with the out-of-range currents zero).
pub fn conservation_check(trajectory: &[ChainState], params: &ChainParams) -> Result<Vec<f64>> {
    if trajectory.len() < 2 {
        return Err(Error::invalid("need at least two sampled states"));
    }
    let n = params.n_sites;
    let first = local_observables(&trajectory[0], params);
    let last = local_observables(&trajectory[trajectory.len() - 1], params);

    // current difference j^e_j - j^e_{j+1} with j^e_{N+2} = 0
    let flux = |obs: &LocalObservables, site: usize| -> f64 {
        let outgoing = if site + 1 <= n + 1 {
            obs.energy_current[site + 1]
        } else {
            0.0
        };
        obs.energy_current[site] - outgoing
    };

    let mut integral = vec![0.0; n + 2];
    let mut prev = first.clone();
    let mut prev_t = trajectory[0].time;
    for state in &trajectory[1..] {
        let cur = local_observables(state, params);
        let dt = state.time - prev_t;
        for (site, acc) in integral.iter_mut().enumerate() {
            *acc += 0.5 * dt * (flux(&prev, site) + flux(&cur, site));
        }
        prev = cur;
        prev_t = state.time;
    }

    Ok((0..=n + 1)
        .map(|site| (last.local_energy[site] - first.local_energy[site] - integral[site]).abs())
        .collect())
}
