//! Four-beam geometry: the depopulating beam along the main octant bisectrix, three
//! control beams along the adjoining bisectrices, and the orthonormal control
//! polarization triad.

use nalgebra::{Matrix3, Rotation3, Vector3};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::trap::Axis;

pub type Vec3 = Vector3<f64>;
pub type CVec3 = Vector3<C64>;

#[derive(Clone, Debug, PartialEq)]
pub struct BeamSet {
    pub directions: [Vec3; 4],
    pub polarizations: [CVec3; 4],
    /// ω_j − ω_0 in units of γ.
    pub carrier_offsets: [f64; 4],
    /// Reduced Rabi frequencies Ω⁽ʲ⁾ in units of γ.
    pub reduced_rabi: [f64; 4],
}

impl BeamSet {
    /// Canonical directions, σ⁺ depopulating beam about k̂0 and the orthonormal control triad.
    pub fn standard(reduced_rabi: [f64; 4]) -> Result<BeamSet> {
        let mut b = canonical_beams();
        b.polarizations[0] = sigma_plus(&b.directions[0]);
        let e = control_polarizations(&b)?;
        for j in 0..3 {
            b.polarizations[j + 1] = e[j].map(|x| C64::new(x, 0.0));
        }
        b.reduced_rabi = reduced_rabi;
        b.validate()?;
        Ok(b)
    }

    pub fn quantization_axis(&self) -> Vec3 {
        self.directions[0]
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..4 {
            let k = &self.directions[j];
            let e = &self.polarizations[j];
            if (k.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Geometry(format!("direction {j} is not a unit vector")));
            }
            let en: f64 = e.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if (en - 1.0).abs() > 1e-12 {
                return Err(Error::Geometry(format!("polarization {j} is not normalized")));
            }
            let t: C64 = e.iter().zip(k.iter()).map(|(c, x)| c * x).sum();
            if t.norm() > 1e-12 {
                return Err(Error::Geometry(format!("polarization {j} is not transverse")));
            }
            if !(self.reduced_rabi[j] >= 0.0) {
                return Err(Error::Geometry(format!("Rabi frequency {j} must be nonnegative")));
            }
        }
        Ok(())
    }
}

pub fn canonical_beams() -> BeamSet {
    let s = 1.0 / 3f64.sqrt();
    BeamSet {
        directions: [
            Vec3::new(s, s, s),
            Vec3::new(-s, s, s),
            Vec3::new(s, -s, s),
            Vec3::new(s, s, -s),
        ],
        polarizations: [CVec3::zeros(); 4],
        carrier_offsets: [0.0; 4],
        reduced_rabi: [0.0; 4],
    }
}

/// Trap axis whose motion control beam j (1, 2, 3) quenches.
pub fn beam_axis(j: usize) -> Axis {
    Axis::from_index(j - 1)
}

pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}

fn check_canonical(beams: &BeamSet) -> Result<()> {
    let c = canonical_beams();
    for j in 0..4 {
        if (beams.directions[j] - c.directions[j]).norm() > 1e-9 {
            return Err(Error::Geometry(format!("beam {j} direction is not canonical")));
        }
    }
    Ok(())
}

/// k0(k̂_j − k̂0), j = 1, 2, 3.
pub fn recoil_vectors(beams: &BeamSet, k0: f64) -> Result<[Vec3; 3]> {
    check_canonical(beams)?;
    let d = &beams.directions;
    Ok([(d[1] - d[0]) * k0, (d[2] - d[0]) * k0, (d[3] - d[0]) * k0])
}

/// Right-handed frame (x, y, z) with z along the quantization axis.
pub fn quantization_frame(axis: &Vec3) -> [Vec3; 3] {
    let z = axis.normalize();
    let reference = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let x = (reference - z * reference.dot(&z)).normalize();
    let y = z.cross(&x);
    [x, y, z]
}

/// σ⁺ polarization −(x̂ + iŷ)/√2 about the given axis.
pub fn sigma_plus(axis: &Vec3) -> CVec3 {
    let [x, y, _] = quantization_frame(axis);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVec3::from_fn(|i, _| C64::new(-x[i] * s, -y[i] * s))
}

/// (c₋₁, c₀, c₊₁) with c_q = ê_q*·e, ê₀ = ẑ, ê_{±1} = ∓(x̂ ± iŷ)/√2.
pub fn spherical_components(e: &CVec3, quantization_axis: &Vec3) -> [C64; 3] {
    let [x, y, z] = quantization_frame(quantization_axis);
    let proj = |u: &Vec3| -> C64 { e.iter().zip(u.iter()).map(|(c, a)| c * a).sum() };
    let (ex, ey, ez) = (proj(&x), proj(&y), proj(&z));
    let i = C64::i();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [(ex + i * ey) * s, ez, -(ex - i * ey) * s]
}

fn start_rotations() -> Vec<Matrix3<f64>> {
    let mut axes = vec![Vec3::x(), Vec3::y(), Vec3::z()];
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            axes.push(Vec3::new(1.0, sx, sy).normalize());
        }
    }
    let mut out = vec![Matrix3::identity()];
    for a in &axes {
        for k in 1..6 {
            let angle = k as f64 * std::f64::consts::PI / 3.0;
            out.push(*Rotation3::new(a * angle).matrix());
        }
    }
    out
}

fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

fn residual(m: &Matrix3<f64>, k: &[Vec3; 3]) -> Vector3<f64> {
    Vector3::from_fn(|j, _| m.column(j).dot(&k[j]))
}

/// Fixes each column's sign so its component along k̂0 (else ẑ, x̂) is positive.
fn fix_signs(m: &mut Matrix3<f64>, k0: &Vec3) {
    for j in 0..3 {
        let c: Vec3 = m.column(j).into();
        let reference = [*k0, Vec3::z(), Vec3::x()].into_iter().map(|r| c.dot(&r)).find(|p| p.abs() > 1e-9).unwrap_or(1.0);
        if reference < 0.0 {
            m.set_column(j, &(-c));
        }
    }
}

/// Real orthonormal triad (e⁽¹⁾, e⁽²⁾, e⁽³⁾) with e⁽ʲ⁾ ⊥ k̂_j, by Gauss–Newton over rotations.
pub fn control_polarizations(beams: &BeamSet) -> Result<[Vec3; 3]> {
    check_canonical(beams)?;
    let k = [beams.directions[1], beams.directions[2], beams.directions[3]];
    let mut solutions: Vec<Matrix3<f64>> = Vec::new();
    for start in start_rotations() {
        let mut m = start;
        for _ in 0..60 {
            let r = residual(&m, &k);
            if r.norm() < 1e-15 {
                break;
            }
            let jac = Matrix3::from_fn(|j, c| m.column(j).cross(&k[j])[c]);
            let svd = jac.svd(true, true);
            let step = match svd.solve(&(-r), 1e-10) {
                Ok(s) => s,
                Err(_) => break,
            };
            m = orthonormalize(&(Rotation3::new(step).matrix() * m));
        }
        if residual(&m, &k).norm() < 1e-13 {
            fix_signs(&mut m, &beams.directions[0]);
            if !solutions.iter().any(|s| (s - m).norm() < 1e-8) {
                solutions.push(m);
            }
        }
    }
    if solutions.is_empty() {
        return Err(Error::Geometry("beam set admits no orthonormal transverse polarization triad".into()));
    }
    solutions.sort_by(|a, b| {
        let key = |m: &Matrix3<f64>| -> Vec<i64> { m.iter().map(|x| (x * 1e9).round() as i64).collect() };
        key(b).cmp(&key(a))
    });
    let m = solutions[0];
    Ok([m.column(0).into(), m.column(1).into(), m.column(2).into()])
}

/// Inputs to the resonance condition for the control carriers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResonanceTargets {
    pub hyperfine_splitting: f64,
    /// Ω_μ for the modes addressed by beams 1, 2, 3.
    pub mode_frequencies: [f64; 3],
    /// δ_b, shift of the base state.
    pub upper_shift: f64,
    /// δ̄_m, mean shift of the target sublevels.
    pub lower_mean_shift: f64,
}

/// ω_j − ω_0 = −ω_mb − δ̄_m + δ_b with ω_mb = −Δ_hpf − Ω_μ(j).
pub fn carrier_frequencies(t: &ResonanceTargets) -> [f64; 4] {
    let mut out = [0.0; 4];
    for j in 1..4 {
        out[j] = t.hyperfine_splitting + t.mode_frequencies[j - 1] - t.lower_mean_shift + t.upper_shift;
    }
    out
}
