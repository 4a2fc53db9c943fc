//! Deterministic hydrodynamic solver: coupled heat-type equations for the
//! deformation field u and the energy field eps on [0,1],
//!
//!   du/dt   = (1/gamma)  d2u/dx2            (Neumann: zero end slopes)
//!   deps/dt = (1/2gamma) d2(eps + u^2/2)/dx2
//!
//! with (eps - u^2/2) pinned to T_L and T_R at the ends. Crank-Nicolson in
//! time, second-order central differences, ghost-node Neumann rows for u.
//! The energy boundary condition is imposed on the new time level through
//! the already-updated u (the u equation is autonomous), which makes the
//! per-step boundary sweep exact after one pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{simpson, solve_tridiagonal, trapezoid};

/// A function sampled on the M+1 uniform nodes of [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(mesh: usize) -> Self {
        GridField {
            values: vec![0.0; mesh + 1],
        }
    }

    pub fn from_fn(mesh: usize, f: impl Fn(f64) -> f64) -> Self {
        GridField {
            values: (0..=mesh).map(|i| f(i as f64 / mesh as f64)).collect(),
        }
    }

    pub fn constant(mesh: usize, c: f64) -> Self {
        GridField {
            values: vec![c; mesh + 1],
        }
    }

    /// Number of intervals M (nodes = M + 1).
    pub fn mesh(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.mesh() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::invalid("grid field needs at least two nodes"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite grid value"));
        }
        Ok(())
    }

    /// Simpson integral over [0,1].
    pub fn integral(&self) -> f64 {
        simpson(&self.values, self.dx())
    }

    /// Trapezoid integral (the discretely conserved mass of the u field).
    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.dx())
    }

    pub fn sup_distance(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// State of the hydrodynamic fields plus the PDE parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroState {
    pub u: GridField,
    pub eps: GridField,
    pub time: f64,
    pub gamma: f64,
    pub temp_left: f64,
    pub temp_right: f64,
}

impl HydroState {
    pub fn new(
        u: GridField,
        eps: GridField,
        gamma: f64,
        temp_left: f64,
        temp_right: f64,
    ) -> Result<Self> {
        u.validate()?;
        eps.validate()?;
        if u.values.len() != eps.values.len() {
            return Err(Error::invalid("u and eps live on different grids"));
        }
        if !(gamma > 0.0 && temp_left > 0.0 && temp_right > 0.0) {
            return Err(Error::invalid("gamma and the bath temperatures must be > 0"));
        }
        Ok(HydroState {
            u,
            eps,
            time: 0.0,
            gamma,
            temp_left,
            temp_right,
        })
    }

    /// The stationary pair (u, eps) = (0, Tbar) with Tbar the linear profile.
    pub fn stationary(mesh: usize, gamma: f64, temp_left: f64, temp_right: f64) -> Self {
        let tbar = GridField::from_fn(mesh, |x| temp_left + (temp_right - temp_left) * x);
        HydroState {
            u: GridField::zeros(mesh),
            eps: tbar,
            time: 0.0,
            gamma,
            temp_left,
            temp_right,
        }
    }

    /// Largest violation of (eps - u^2/2)(ends) = (T_L, T_R).
    pub fn boundary_defect(&self) -> f64 {
        let m = self.u.mesh();
        let left = (self.eps.values[0] - 0.5 * self.u.values[0] * self.u.values[0]
            - self.temp_left)
            .abs();
        let right = (self.eps.values[m] - 0.5 * self.u.values[m] * self.u.values[m]
            - self.temp_right)
            .abs();
        left.max(right)
    }
}

/// Neumann Laplacian (ghost nodes) applied to a grid function, times dx^2.
fn lap_neumann_scaled(v: &[f64], out: &mut [f64]) {
    let m = v.len() - 1;
    out[0] = 2.0 * (v[1] - v[0]);
    for i in 1..m {
        out[i] = v[i + 1] - 2.0 * v[i] + v[i - 1];
    }
    out[m] = 2.0 * (v[m - 1] - v[m]);
}

/// One Crank-Nicolson step of size `dt_macro`.
pub fn hydro_step(hs: &mut HydroState, dt_macro: f64) -> Result<()> {
    if !(dt_macro > 0.0 && dt_macro.is_finite()) {
        return Err(Error::invalid("dt must be positive"));
    }
    let m = hs.u.mesh();
    let dx = hs.u.dx();
    let alpha_u = dt_macro / (hs.gamma * dx * dx);
    let alpha_e = dt_macro / (2.0 * hs.gamma * dx * dx);

    // --- u: (I - alpha_u/2 L) u_new = (I + alpha_u/2 L) u_old, Neumann L ---
    let u_old = hs.u.values.clone();
    let mut lap = vec![0.0; m + 1];
    lap_neumann_scaled(&u_old, &mut lap);
    let mut rhs: Vec<f64> = (0..=m)
        .map(|i| u_old[i] + 0.5 * alpha_u * lap[i])
        .collect();
    let mut lower = vec![-0.5 * alpha_u; m + 1];
    let mut upper = vec![-0.5 * alpha_u; m + 1];
    let diag = vec![1.0 + alpha_u; m + 1];
    // ghost-node rows double the single off-diagonal neighbour
    upper[0] = -alpha_u;
    lower[m] = -alpha_u;
    solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
    let u_new = rhs;

    // --- eps: CN on the flux variable v = eps + u^2/2, Dirichlet values of
    // eps at the ends supplied by the constraint through the new u ---
    let eps_old = hs.eps.values.clone();
    let w_old: Vec<f64> = u_old.iter().map(|u| 0.5 * u * u).collect();
    let w_new: Vec<f64> = u_new.iter().map(|u| 0.5 * u * u).collect();
    let mut eps_new = eps_old.clone();

    // one boundary sweep is exact because u_new is already known; the loop
    // guards the contract anyway
    let mut sweeps = 0usize;
    loop {
        sweeps += 1;
        if sweeps > 50 {
            return Err(Error::numerical(
                "energy boundary sweep did not converge in 50 iterations",
            ));
        }
        let eps_left = hs.temp_left + w_new[0];
        let eps_right = hs.temp_right + w_new[m];

        // interior rows i = 1..m-1 of
        // eps_new - a/2 L eps_new = eps_old + a/2 [L(eps_old + w_old) + L w_new]
        let n_int = m - 1;
        let mut b = vec![0.0; n_int];
        for i in 1..m {
            let lap_old = eps_old[i + 1] + w_old[i + 1] - 2.0 * (eps_old[i] + w_old[i])
                + eps_old[i - 1]
                + w_old[i - 1];
            let lap_wnew = w_new[i + 1] - 2.0 * w_new[i] + w_new[i - 1];
            b[i - 1] = eps_old[i] + 0.5 * alpha_e * (lap_old + lap_wnew);
        }
        b[0] += 0.5 * alpha_e * eps_left;
        b[n_int - 1] += 0.5 * alpha_e * eps_right;
        let lower = vec![-0.5 * alpha_e; n_int];
        let upper = vec![-0.5 * alpha_e; n_int];
        let diag = vec![1.0 + alpha_e; n_int];
        let mut sol = b;
        solve_tridiagonal(&lower, &diag, &upper, &mut sol)?;
        eps_new[0] = eps_left;
        eps_new[m] = eps_right;
        eps_new[1..m].copy_from_slice(&sol);

        let defect = (eps_new[0] - w_new[0] - hs.temp_left)
            .abs()
            .max((eps_new[m] - w_new[m] - hs.temp_right).abs());
        if defect <= 1e-12 {
            break;
        }
    }

    hs.u.values = u_new;
    hs.eps.values = eps_new;
    hs.time += dt_macro;
    hs.u.validate()?;
    hs.eps.validate()?;
    Ok(())
}

/// Evolve to `t_final`, sampling `n_snapshots` intermediate states (the
/// final state is always included).
pub fn hydro_evolve(
    mut hs: HydroState,
    dt_macro: f64,
    t_final: f64,
    n_snapshots: usize,
) -> Result<Vec<HydroState>> {
    if t_final < hs.time {
        return Err(Error::invalid("t_final lies in the past"));
    }
    let steps = ((t_final - hs.time) / dt_macro).ceil() as usize;
    let every = (steps / n_snapshots.max(1)).max(1);
    let mut snaps = Vec::new();
    for k in 0..steps {
        hydro_step(&mut hs, dt_macro)?;
        if (k + 1) % every == 0 && snaps.len() + 1 < n_snapshots {
            snaps.push(hs.clone());
        }
    }
    snaps.push(hs);
    Ok(snaps)
}
