//! Harmonic trap: vibrational energies, thermal statistics, Lamb–Dicke factors and
//! displacement-operator matrix elements.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{gamma_rad_s, hz_to_gamma, wavenumber, AMU, HBAR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }

    pub fn label(self) -> char {
        ['x', 'y', 'z'][self.index()]
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Vibrational quanta (vx, vy, vz).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VibState(pub [usize; 3]);

impl VibState {
    pub const GROUND: VibState = VibState([0, 0, 0]);

    pub fn new(vx: usize, vy: usize, vz: usize) -> Self {
        VibState([vx, vy, vz])
    }

    pub fn get(self, axis: Axis) -> usize {
        self.0[axis.index()]
    }

    pub fn total(self) -> usize {
        self.0.iter().sum()
    }

    pub fn lowered(self, axis: Axis) -> Option<VibState> {
        let mut v = self;
        v.0[axis.index()] = v.0[axis.index()].checked_sub(1)?;
        Some(v)
    }

    pub fn raised(self, axis: Axis) -> VibState {
        let mut v = self;
        v.0[axis.index()] += 1;
        v
    }

    pub fn max_component(self) -> usize {
        *self.0.iter().max().unwrap()
    }

    /// All states of the cube 0..=vmax per axis, lexicographic.
    pub fn cube(vmax: usize) -> impl Iterator<Item = VibState> {
        let n = vmax + 1;
        (0..n * n * n).map(move |k| VibState([k / (n * n), (k / n) % n, k % n]))
    }
}

impl fmt::Display for VibState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.0[0], self.0[1], self.0[2])
    }
}

/// Trap frequencies in units of γ; mass, wavenumber and γ in SI for the Lamb–Dicke conversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapParams {
    pub omega_perp: f64,
    pub omega_par: f64,
    pub mass: f64,
    pub k0: f64,
    /// γ in rad/s.
    pub gamma: f64,
}

impl TrapParams {
    pub fn new(omega_perp: f64, omega_par: f64, mass: f64, k0: f64, gamma: f64) -> Result<Self> {
        let t = TrapParams { omega_perp, omega_par, mass, k0, gamma };
        for (name, v) in [("omega_perp", omega_perp), ("omega_par", omega_par), ("mass", mass), ("k0", k0), ("gamma", gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("trap parameter {name} must be positive, got {v}")));
            }
        }
        for axis in [Axis::X, Axis::Z] {
            let eta = t.lamb_dicke(axis);
            if eta >= 1.0 {
                log::warn!("Lamb-Dicke parameter along {axis} is {eta:.3}, outside the Lamb-Dicke regime");
            }
        }
        Ok(t)
    }

    /// Trap frequencies as cyclic frequencies in Hz, mass in amu, wavelength in nm, linewidth γ/2π in Hz.
    pub fn from_si(perp_hz: f64, par_hz: f64, mass_amu: f64, wavelength_nm: f64, gamma_hz: f64) -> Result<Self> {
        TrapParams::new(
            hz_to_gamma(perp_hz, gamma_hz),
            hz_to_gamma(par_hz, gamma_hz),
            mass_amu * AMU,
            wavenumber(wavelength_nm),
            gamma_rad_s(gamma_hz),
        )
    }

    pub fn frequency(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X | Axis::Y => self.omega_perp,
            Axis::Z => self.omega_par,
        }
    }

    pub fn frequencies(&self) -> [f64; 3] {
        [self.omega_perp, self.omega_perp, self.omega_par]
    }

    /// ε_v in units of ħγ, zero-point energy included.
    pub fn energy(&self, v: VibState) -> f64 {
        self.omega_par * (v.0[2] as f64 + 0.5) + self.omega_perp * ((v.0[0] + v.0[1]) as f64 + 1.0)
    }

    pub fn lamb_dicke(&self, axis: Axis) -> f64 {
        self.k0 * (HBAR / (2.0 * self.mass * self.frequency(axis) * self.gamma)).sqrt()
    }

    pub fn lamb_dicke_all(&self) -> [f64; 3] {
        [self.lamb_dicke(Axis::X), self.lamb_dicke(Axis::Y), self.lamb_dicke(Axis::Z)]
    }

    /// Zero-point velocity uncertainty √(ħΩ/2m) in m/s.
    pub fn velocity_spread(&self, axis: Axis) -> f64 {
        (HBAR * self.frequency(axis) * self.gamma / (2.0 * self.mass)).sqrt()
    }
}

/// Inverse temperature β in units of 1/(ħγ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalSpec {
    pub beta: f64,
}

impl ThermalSpec {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(ThermalSpec { beta })
    }

    pub fn from_microkelvin(t_uk: f64, gamma_hz: f64) -> Result<Self> {
        if !(t_uk > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {t_uk} uK")));
        }
        ThermalSpec::new(crate::units::beta_from_microkelvin(t_uk, gamma_hz))
    }

    fn q(&self, trap: &TrapParams, axis: Axis) -> f64 {
        (-self.beta * trap.frequency(axis)).exp()
    }
}

pub fn mean_occupation(trap: &TrapParams, thermal: &ThermalSpec, axis: Axis) -> f64 {
    1.0 / (thermal.beta * trap.frequency(axis)).exp_m1()
}

/// Thermal standard deviation √(n̄(n̄+1)) of the quanta along an axis.
pub fn occupation_spread(trap: &TrapParams, thermal: &ThermalSpec, axis: Axis) -> f64 {
    let n = mean_occupation(trap, thermal, axis);
    (n * (n + 1.0)).sqrt()
}

/// ℱ = −ln Z / β for the untruncated three-dimensional oscillator.
pub fn free_energy(trap: &TrapParams, thermal: &ThermalSpec) -> f64 {
    let b = thermal.beta;
    let ln_z: f64 = Axis::ALL
        .iter()
        .map(|&a| {
            let w = trap.frequency(a);
            -b * w / 2.0 - (-(-b * w).exp_m1()).ln()
        })
        .sum();
    -ln_z / b
}

pub fn boltzmann_weight(v: VibState, trap: &TrapParams, thermal: &ThermalSpec) -> f64 {
    (thermal.beta * (free_energy(trap, thermal) - trap.energy(v))).exp()
}

/// Z⁽ⁿ⁾: Gibbs sum over vx+vy+vz ≤ n.
pub fn partition_cutoff(n: usize, trap: &TrapParams, thermal: &ThermalSpec) -> f64 {
    let mut s = 0.0;
    for vz in 0..=n {
        for vx in 0..=n - vz {
            for vy in 0..=n - vz - vx {
                s += (-thermal.beta * trap.energy(VibState::new(vx, vy, vz))).exp();
            }
        }
    }
    s
}

/// Z⁽ⁿ⁾ restricted to the truncated cube 0..=vmax per axis.
pub fn partition_cutoff_box(n: usize, vmax: usize, trap: &TrapParams, thermal: &ThermalSpec) -> f64 {
    VibState::cube(vmax)
        .filter(|v| v.total() <= n)
        .map(|v| (-thermal.beta * trap.energy(v)).exp())
        .sum()
}

/// A set of states with equal energy for incommensurate radial and axial frequencies:
/// fixed vx+vy = n_perp and vz, degeneracy n_perp+1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shell {
    pub n_perp: usize,
    pub vz: usize,
    pub degeneracy: usize,
}

/// Energy shells with vx+vy+vz ≤ n.
pub fn shells(n: usize) -> Vec<Shell> {
    let mut out = Vec::new();
    for total in 0..=n {
        for vz in 0..=total {
            let n_perp = total - vz;
            out.push(Shell { n_perp, vz, degeneracy: n_perp + 1 });
        }
    }
    out
}

/// Thermal weight outside the cube 0..=vmax per axis.
pub fn truncation_tail(vmax: usize, trap: &TrapParams, thermal: &ThermalSpec) -> f64 {
    let inside: f64 = Axis::ALL.iter().map(|&a| 1.0 - thermal.q(trap, a).powi(vmax as i32 + 1)).product();
    1.0 - inside
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisplacementMode {
    Exact,
    Linearized,
}

const PADDING: usize = 20;

/// Eigen-decomposition of the position quadrature a + a† on n Fock states.
fn quadrature_eigen(n: usize) -> Arc<SymmetricEigen<f64, nalgebra::Dyn>> {
    type Eigen = Arc<SymmetricEigen<f64, nalgebra::Dyn>>;
    static CACHE: OnceLock<RwLock<HashMap<usize, Eigen>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(e) = cache.read().unwrap_or_else(|e| e.into_inner()).get(&n) {
        return e.clone();
    }
    let mut x = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let s = (k as f64).sqrt();
        x[(k - 1, k)] = s;
        x[(k, k - 1)] = s;
    }
    let e = Arc::new(SymmetricEigen::new(x));
    cache.write().unwrap_or_else(|e| e.into_inner()).insert(n, e.clone());
    e
}

/// ⟨m| exp[iα(a+a†)] |n⟩ for m, n ≤ nmax, from a basis padded by 20 levels.
pub fn displacement_matrix(alpha: f64, nmax: usize) -> DMatrix<C64> {
    if alpha == 0.0 {
        return DMatrix::identity(nmax + 1, nmax + 1);
    }
    let size = nmax + 1 + PADDING;
    let eig = quadrature_eigen(size);
    let v = &eig.eigenvectors;
    let phases: Vec<C64> = eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, alpha * l)).collect();
    DMatrix::from_fn(nmax + 1, nmax + 1, |m, n| {
        let mut s = C64::new(0.0, 0.0);
        for k in 0..size {
            s += phases[k] * (v[(m, k)] * v[(n, k)]);
        }
        // ⟨m|D|n⟩ = i^|m-n| × real
        let snap = |x: f64| if x.abs() < 1e-15 { 0.0 } else { x };
        if m.abs_diff(n) % 2 == 0 { C64::new(snap(s.re), 0.0) } else { C64::new(0.0, snap(s.im)) }
    })
}

/// First-order expansion 1 + iα(a+a†) of the displacement operator.
pub fn linearized_element(v_from: usize, v_to: usize, alpha: f64) -> C64 {
    if v_to == v_from {
        C64::new(1.0, 0.0)
    } else if v_to + 1 == v_from {
        C64::new(0.0, alpha * (v_from as f64).sqrt())
    } else if v_to == v_from + 1 {
        C64::new(0.0, alpha * (v_to as f64).sqrt())
    } else {
        C64::new(0.0, 0.0)
    }
}

pub fn displacement_element(v_from: i64, v_to: i64, alpha: f64, mode: DisplacementMode) -> Result<C64> {
    if v_from < 0 || v_to < 0 {
        return Err(Error::QuantumNumber(format!("negative vibrational quantum ({v_from} -> {v_to})")));
    }
    let (f, t) = (v_from as usize, v_to as usize);
    Ok(match mode {
        DisplacementMode::Linearized => linearized_element(f, t, alpha),
        DisplacementMode::Exact => displacement_matrix(alpha, f.max(t))[(t, f)],
    })
}

/// Precomputed displacement elements for one argument α.
#[derive(Clone, Debug)]
pub struct DisplacementTable {
    pub alpha: f64,
    pub mode: DisplacementMode,
    matrix: Option<DMatrix<C64>>,
}

impl DisplacementTable {
    pub fn new(alpha: f64, nmax: usize, mode: DisplacementMode) -> Self {
        let matrix = match mode {
            DisplacementMode::Exact => Some(displacement_matrix(alpha, nmax)),
            DisplacementMode::Linearized => None,
        };
        DisplacementTable { alpha, mode, matrix }
    }

    pub fn element(&self, v_from: usize, v_to: usize) -> C64 {
        match &self.matrix {
            Some(m) => m[(v_to, v_from)],
            None => linearized_element(v_from, v_to, self.alpha),
        }
    }
}
