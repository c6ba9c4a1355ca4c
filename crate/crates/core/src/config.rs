//! Flat run configuration with unit-suffixed keys, plus the named presets.

use serde::{Deserialize, Serialize};

use crate::hamiltonian::{Frame, GeneratorKind, GeneratorOptions};
use crate::integrator::Tolerances;
use crate::protocol::{ProfileSource, ProtocolConfig, PumpingMode, RamanMode};
use crate::scenario::{thermal_variations, PassageSpec};
use crate::trap::{mean_occupation, Axis, DisplacementMode, ThermalSpec, TrapParams, VibState};
use crate::units::*;
use crate::{Error, Result};

pub const PRESETS: [(&str, &str); 3] = [
    ("fig5", "balanced passage from (2,2,4), detuning -1000 gamma, 20 uK"),
    ("fig6", "balanced passage from (2,2,4), detuning -5000 gamma, 20 uK"),
    ("appendixA", "ideal-map cooling protocol on a vmax=5 cube at 3 uK"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub mass_amu: f64,
    pub wavelength_nm: f64,
    pub gamma_hz: f64,
    pub hyperfine_hz: f64,
    pub omega_perp_hz: f64,
    pub omega_par_hz: f64,
    #[serde(rename = "temperature_uK")]
    pub temperature_uk: f64,
    pub detuning_gamma: f64,
    pub rabi_depopulating_gamma: f64,
    /// Ω⁽¹⁾; Ω⁽²⁾ and Ω⁽³⁾ follow from the balance condition
    pub rabi_control_gamma: f64,
    /// v̄ used for balancing and as the initial state; thermal-derived when absent
    pub mean_quanta: Option<[usize; 3]>,
    pub vmax: usize,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub generator: GeneratorKind,
    pub frame: Frame,
    pub displacement: DisplacementMode,
    pub secular_cutoff_gamma: f64,
    pub window_pi_units: f64,
    pub grid_points: usize,
    /// also run the v̄ ± σ initial states
    pub envelope: bool,
    pub protocol_steps: usize,
    pub raman_mode: RamanMode,
    pub pumping: PumpingMode,
    pub profile: ProfileSource,
    pub pulse_duration_inv_gamma: Option<f64>,
    pub reoptimize: bool,
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let fig5 = RunConfig {
            name: "fig5".into(),
            mass_amu: RB85_MASS_AMU,
            wavelength_nm: RB85_D2_WAVELENGTH_NM,
            gamma_hz: RB85_GAMMA_HZ,
            hyperfine_hz: RB85_HYPERFINE_HZ,
            omega_perp_hz: 200e3,
            omega_par_hz: 100e3,
            temperature_uk: 20.0,
            detuning_gamma: -1000.0,
            rabi_depopulating_gamma: 20.0,
            rabi_control_gamma: 1.0,
            mean_quanta: None,
            vmax: 8,
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 5_000_000,
            generator: GeneratorKind::Full,
            frame: Frame::Rotating,
            displacement: DisplacementMode::Exact,
            secular_cutoff_gamma: 50.0,
            window_pi_units: 2.5,
            grid_points: 2000,
            envelope: true,
            protocol_steps: 24,
            raman_mode: RamanMode::Ideal,
            pumping: PumpingMode::Coherent,
            profile: ProfileSource::Uniform,
            pulse_duration_inv_gamma: None,
            reoptimize: false,
            output_dir: None,
        };
        match name {
            "fig5" => Ok(fig5),
            "fig6" => Ok(RunConfig { name: "fig6".into(), detuning_gamma: -5000.0, ..fig5 }),
            "appendixA" => Ok(RunConfig { name: "appendixA".into(), temperature_uk: 3.0, vmax: 5, protocol_steps: 15, envelope: false, ..fig5 }),
            _ => Err(Error::Config(format!("unknown preset '{name}' (known: {})", PRESETS.map(|p| p.0).join(", ")))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass_amu", self.mass_amu),
            ("wavelength_nm", self.wavelength_nm),
            ("gamma_hz", self.gamma_hz),
            ("hyperfine_hz", self.hyperfine_hz),
            ("omega_perp_hz", self.omega_perp_hz),
            ("omega_par_hz", self.omega_par_hz),
            ("temperature_uK", self.temperature_uk),
            ("rabi_depopulating_gamma", self.rabi_depopulating_gamma),
            ("rabi_control_gamma", self.rabi_control_gamma),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("secular_cutoff_gamma", self.secular_cutoff_gamma),
            ("window_pi_units", self.window_pi_units),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.detuning_gamma < 0.0 && self.detuning_gamma.is_finite()) {
            return Err(Error::Config(format!("detuning_gamma must be negative (red of every excited level), got {}", self.detuning_gamma)));
        }
        if self.vmax == 0 || self.grid_points < 3 || self.max_steps == 0 {
            return Err(Error::Config("vmax, grid_points and max_steps must be positive (grid_points ≥ 3)".into()));
        }
        if let Some(t) = self.pulse_duration_inv_gamma {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("pulse_duration_inv_gamma must be positive, got {t}")));
            }
        }
        if let Some(m) = self.mean_quanta {
            if m == [0, 0, 0] {
                return Err(Error::Config("mean_quanta (0,0,0) is the dark state".into()));
            }
            if m.contains(&0) {
                return Err(Error::Config("mean_quanta must be positive on every axis to balance the controls".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn trap(&self) -> Result<TrapParams> {
        TrapParams::from_si(self.omega_perp_hz, self.omega_par_hz, self.mass_amu, self.wavelength_nm, self.gamma_hz)
    }

    pub fn thermal(&self) -> Result<ThermalSpec> {
        ThermalSpec::from_microkelvin(self.temperature_uk, self.gamma_hz)
    }

    pub fn thermal_mean_quanta(&self) -> Result<[f64; 3]> {
        let (trap, th) = (self.trap()?, self.thermal()?);
        Ok(Axis::ALL.map(|a| mean_occupation(&trap, &th, a)))
    }

    /// v̄ as integers: the override, or the rounded thermal means (at least one quantum per axis).
    pub fn mean_quanta(&self) -> Result<VibState> {
        if let Some(m) = self.mean_quanta {
            return Ok(VibState(m));
        }
        Ok(VibState(self.thermal_mean_quanta()?.map(|x| (x.round() as usize).max(1))))
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances { rtol: self.rtol, atol: self.atol, max_steps: self.max_steps }
    }

    pub fn passage_spec(&self) -> Result<PassageSpec> {
        self.validate()?;
        let v = self.mean_quanta()?;
        Ok(PassageSpec {
            detuning: self.detuning_gamma,
            hyperfine_splitting: hz_to_gamma(self.hyperfine_hz, self.gamma_hz),
            trap: self.trap()?,
            depopulating_rabi: self.rabi_depopulating_gamma,
            control_rabi: self.rabi_control_gamma,
            balance_quanta: v.0.map(|x| x as f64),
            base: v,
            generator: GeneratorOptions {
                kind: self.generator,
                frame: self.frame,
                displacement: self.displacement,
                secular_cutoff: self.secular_cutoff_gamma,
                ..Default::default()
            },
            tolerances: self.tolerances(),
            window_factor: self.window_pi_units,
            grid_points: self.grid_points,
        })
    }

    pub fn variations(&self) -> Result<Vec<VibState>> {
        let v = self.mean_quanta()?;
        Ok(thermal_variations(&self.trap()?, &self.thermal()?, v).into_iter().filter(|x| *x != v).collect())
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            n_steps: self.protocol_steps,
            raman_mode: self.raman_mode,
            pumping: self.pumping,
            profile: self.profile,
            pulse_duration: self.pulse_duration_inv_gamma,
            reoptimize: self.reoptimize,
            vmax: self.vmax,
        }
    }

    /// Sets one numeric or enum field by its JSON key, as used by parameter sweeps.
    pub fn with_field(&self, key: &str, value: &serde_json::Value) -> Result<Self> {
        let mut obj = serde_json::to_value(self).expect("config serializes");
        let map = obj.as_object_mut().expect("config is an object");
        if !map.contains_key(key) || key == "name" || key == "output_dir" {
            return Err(Error::Config(format!("'{key}' is not a sweepable parameter")));
        }
        map.insert(key.to_string(), value.clone());
        let c: RunConfig = serde_json::from_value(obj).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_reference_parameters() {
        let f5 = RunConfig::preset("fig5").unwrap();
        assert_eq!(f5.detuning_gamma, -1000.0);
        assert_eq!(RunConfig::preset("fig6").unwrap().detuning_gamma, -5000.0);
        assert_eq!(f5.mean_quanta().unwrap(), VibState::new(2, 2, 4));
        let rabi = f5.passage_spec().unwrap().rabi().unwrap();
        assert_eq!(&rabi[..3], &[20.0, 1.0, 1.0]);
        assert!(rabi[3] > 0.0);
        let a = RunConfig::preset("appendixA").unwrap();
        assert_eq!((a.vmax, a.raman_mode), (5, RamanMode::Ideal));
        assert!(RunConfig::preset("fig7").is_err());
        for (n, _) in PRESETS {
            RunConfig::preset(n).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn json_round_trip_and_unit_keys() {
        let c = RunConfig::preset("fig5").unwrap();
        let s = c.to_json();
        assert!(s.contains("\"temperature_uK\"") && s.contains("\"omega_perp_hz\"") && s.contains("\"detuning_gamma\""));
        assert_eq!(RunConfig::from_json(&s).unwrap(), c);
        assert!(RunConfig::from_json(&s.replace("\"vmax\"", "\"v_max\"")).is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let c = RunConfig::preset("fig5").unwrap();
        assert!(RunConfig { detuning_gamma: 1000.0, ..c.clone() }.validate().is_err());
        assert!(RunConfig { temperature_uk: 0.0, ..c.clone() }.validate().is_err());
        assert!(RunConfig { mean_quanta: Some([0, 0, 0]), ..c.clone() }.validate().is_err());
        assert!(RunConfig { omega_par_hz: f64::NAN, ..c.clone() }.validate().is_err());
        assert!(RunConfig { pulse_duration_inv_gamma: Some(-1.0), ..c }.validate().is_err());
    }

    #[test]
    fn sweep_fields() {
        let c = RunConfig::preset("fig5").unwrap();
        let d = c.with_field("detuning_gamma", &serde_json::json!(-5000.0)).unwrap();
        assert_eq!(d.detuning_gamma, -5000.0);
        assert!(c.with_field("detuning_gamma", &serde_json::json!(5.0)).is_err());
        assert!(c.with_field("nonsense", &serde_json::json!(1)).is_err());
        assert!(c.with_field("name", &serde_json::json!("x")).is_err());
        assert_eq!(c.with_field("generator", &serde_json::json!("reduced")).unwrap().generator, GeneratorKind::Reduced);
    }

    #[test]
    fn envelope_variants() {
        let v = RunConfig::preset("fig5").unwrap().variations().unwrap();
        assert_eq!(v.len(), 7);
        assert!(!v.contains(&VibState::new(2, 2, 4)));
    }
}
