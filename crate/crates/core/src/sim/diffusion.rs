//! Finite-volume solid diffusion in a sphere.
//!
//! The particle is split into `n` shells of equal thickness. Each unknown is the
//! volume average of its shell; the time step is backward Euler, so one step is a
//! single tridiagonal solve. Fluxes between shells are exact telescoping sums, so
//! the total moles change by precisely the surface outflow.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("radial grid needs at least 3 shells, got {0}")]
    TooFewShells(usize),
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("diffusivity and radius must be positive, got D={diffusivity}, R={radius}")]
    BadGeometry { diffusivity: f64, radius: f64 },
    #[error("tridiagonal solve broke down at row {0}")]
    SingularSystem(usize),
}

/// Geometry of a shell grid scaled by 1/(4π).
#[derive(Debug, Clone, PartialEq)]
pub struct ShellGrid {
    radius: f64,
    volumes: Vec<f64>,
    // face_areas[i] is the area of the outer face of shell i
    face_areas: Vec<f64>,
    spacing: f64,
    // volume-weighted means of (r − R) and (r − R)² over the two outer shells,
    // inner first
    outer_moments: [(f64, f64); 2],
}

/// Volume-weighted means of `(r − R)` and `(r − R)²` over the shell `[a, b]`.
fn shell_moments(a: f64, b: f64, radius: f64) -> (f64, f64) {
    // expand in powers of r: ∫ r^k r² dr = (b^(k+3) − a^(k+3))/(k+3)
    let p = |k: i32| (b.powi(k + 3) - a.powi(k + 3)) / (k + 3) as f64;
    let vol = p(0);
    let m1 = (p(1) - radius * p(0)) / vol;
    let m2 = (p(2) - 2.0 * radius * p(1) + radius * radius * p(0)) / vol;
    (m1, m2)
}

impl ShellGrid {
    pub fn new(n: usize, radius: f64) -> Result<Self, DiffusionError> {
        if n < 3 {
            return Err(DiffusionError::TooFewShells(n));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(DiffusionError::BadGeometry { diffusivity: f64::NAN, radius });
        }
        let h = radius / n as f64;
        let volumes = (0..n)
            .map(|i| {
                let a = i as f64 * h;
                let b = (i + 1) as f64 * h;
                (b * b * b - a * a * a) / 3.0
            })
            .collect();
        let face_areas = (0..n)
            .map(|i| {
                let r = (i + 1) as f64 * h;
                r * r
            })
            .collect();
        let outer_moments = [
            shell_moments(radius - 2.0 * h, radius - h, radius),
            shell_moments(radius - h, radius, radius),
        ];
        Ok(Self { radius, volumes, face_areas, spacing: h, outer_moments })
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Shell centres (midpoints in r).
    pub fn centres(&self) -> Vec<f64> {
        (0..self.len()).map(|i| (i as f64 + 0.5) * self.spacing).collect()
    }

    /// Moles in the particle divided by 4π.
    pub fn scaled_moles(&self, profile: &[f64]) -> f64 {
        profile.iter().zip(&self.volumes).map(|(c, v)| c * v).sum()
    }

    /// Volume-averaged concentration.
    pub fn mean(&self, profile: &[f64]) -> f64 {
        self.scaled_moles(profile) / (self.radius.powi(3) / 3.0)
    }

    /// Surface concentration from a quadratic in `(r − R)` whose slope at the
    /// surface is the imposed gradient `−N/D` and whose shell averages match the
    /// two outermost shells.
    pub fn surface_concentration(&self, profile: &[f64], surface_flux: f64, diffusivity: f64) -> f64 {
        let n = profile.len();
        let slope = -surface_flux / diffusivity;
        let (m1_out, m2_out) = self.outer_moments[1];
        let (m1_in, m2_in) = self.outer_moments[0];
        // avg = a + slope·m1 + c·m2 for each of the two shells
        let y_out = profile[n - 1] - slope * m1_out;
        let y_in = profile[n - 2] - slope * m1_in;
        let c = (y_out - y_in) / (m2_out - m2_in);
        y_out - c * m2_out
    }

    /// Advances `profile` in place by one backward-Euler step. `surface_flux` is
    /// the outward molar flux [mol·m⁻²·s⁻¹].
    pub fn step(
        &self,
        profile: &mut [f64],
        surface_flux: f64,
        diffusivity: f64,
        dt: f64,
    ) -> Result<(), DiffusionError> {
        let n = self.len();
        if profile.len() != n {
            return Err(DiffusionError::TooFewShells(profile.len()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(DiffusionError::BadTimeStep(dt));
        }
        if !(diffusivity > 0.0) || !diffusivity.is_finite() {
            return Err(DiffusionError::BadGeometry { diffusivity, radius: self.radius });
        }
        let h = self.spacing;
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let v = self.volumes[i];
            let g_out = if i + 1 < n { diffusivity * self.face_areas[i] / h } else { 0.0 };
            let g_in = if i > 0 { diffusivity * self.face_areas[i - 1] / h } else { 0.0 };
            diag[i] = v / dt + g_out + g_in;
            if i > 0 {
                lower[i] = -g_in;
            }
            if i + 1 < n {
                upper[i] = -g_out;
            }
            rhs[i] = v / dt * profile[i];
        }
        rhs[n - 1] -= surface_flux * self.face_areas[n - 1];
        thomas(&lower, &mut diag, &upper, &mut rhs)?;
        profile.copy_from_slice(&rhs);
        Ok(())
    }
}

/// Solves a tridiagonal system in place; the solution is left in `rhs`.
fn thomas(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) -> Result<(), DiffusionError> {
    let n = diag.len();
    for i in 1..n {
        if diag[i - 1] == 0.0 || !diag[i - 1].is_finite() {
            return Err(DiffusionError::SingularSystem(i - 1));
        }
        let m = lower[i] / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    if diag[n - 1] == 0.0 || !diag[n - 1].is_finite() {
        return Err(DiffusionError::SingularSystem(n - 1));
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
    Ok(())
}

/// One implicit step on a fresh grid; see [`ShellGrid::step`].
pub fn step_particle_diffusion(
    profile: &[f64],
    surface_flux: f64,
    diffusivity: f64,
    radius: f64,
    dt: f64,
) -> Result<Vec<f64>, DiffusionError> {
    let grid = ShellGrid::new(profile.len(), radius)?;
    let mut out = profile.to_vec();
    grid.step(&mut out, surface_flux, diffusivity, dt)?;
    Ok(out)
}
