//! Physical constants and SI conversions. Internally ħ = 1 and frequencies are in units of γ.

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const AMU: f64 = 1.660_539_066_60e-27;

pub const RB85_MASS_AMU: f64 = 84.911_789_738;
pub const RB85_D2_WAVELENGTH_NM: f64 = 780.241;
pub const RB85_GAMMA_HZ: f64 = 6.0666e6;
pub const RB85_HYPERFINE_HZ: f64 = 3.035_732_439e9;

/// Cyclic frequency (Hz) to angular frequency in units of γ, with γ given as a linewidth in Hz.
pub fn hz_to_gamma(f_hz: f64, gamma_hz: f64) -> f64 {
    f_hz / gamma_hz
}

pub fn gamma_rad_s(gamma_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * gamma_hz
}

pub fn wavenumber(wavelength_nm: f64) -> f64 {
    2.0 * std::f64::consts::PI / (wavelength_nm * 1e-9)
}

/// β in units of 1/(ħγ).
pub fn beta_from_microkelvin(t_uk: f64, gamma_hz: f64) -> f64 {
    HBAR * gamma_rad_s(gamma_hz) / (K_B * t_uk * 1e-6)
}
