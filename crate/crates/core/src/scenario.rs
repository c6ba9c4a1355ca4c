use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    classify, evolve, integrate, leakage_estimate, optimal_tau, schmidt_decompose, two_level_reduction, uniform_grid, LeakageEstimate, PulseProfile,
    SchmidtDecomposition, SimulationResult, TargetStates,
};
use crate::geometry::BeamSet;
use crate::hamiltonian::{balanced_rabi, build_generator, Basis, Generator, GeneratorKind, GeneratorOptions, LevelScheme, RamanSetup, StateLabel};
use crate::integrator::Tolerances;
use crate::trap::{occupation_spread, Axis, ThermalSpec, TrapParams, VibState};
use crate::{Error, Result};

/// One Raman passage from |F₊,0⟩⊗|v⟩ with controls balanced for v̄.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PassageSpec {
    pub detuning: f64,
    pub hyperfine_splitting: f64,
    pub trap: TrapParams,
    pub depopulating_rabi: f64,
    pub control_rabi: f64,
    /// v̄ used to balance Ω⁽²⁾, Ω⁽³⁾
    pub balance_quanta: [f64; 3],
    pub base: VibState,
    pub generator: GeneratorOptions,
    pub tolerances: Tolerances,
    /// simulated window in units of the two-level π time
    pub window_factor: f64,
    pub grid_points: usize,
}

impl PassageSpec {
    pub fn rabi(&self) -> Result<[f64; 4]> {
        let (o2, o3) = balanced_rabi(&self.trap, self.balance_quanta, self.control_rabi)?;
        Ok([self.depopulating_rabi, self.control_rabi, o2, o3])
    }

    pub fn setup(&self) -> Result<RamanSetup> {
        let levels = LevelScheme::rb85(self.detuning, self.hyperfine_splitting)?;
        let beams = BeamSet::standard(self.rabi()?)?;
        RamanSetup::tuned(levels, beams, self.trap, self.generator.kind == GeneratorKind::Full)
    }

    pub fn with_base(&self, base: VibState) -> Self {
        PassageSpec { base, ..self.clone() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PassageOutcome {
    pub base: VibState,
    pub rabi: [f64; 4],
    pub omega_eff: f64,
    pub result: SimulationResult,
    pub tau: Option<f64>,
    pub targets: Option<TargetStates>,
    pub schmidt: Option<SchmidtDecomposition>,
    pub max_dest: f64,
    pub max_leak: f64,
    pub max_imperfection: f64,
}

pub struct Passage {
    pub spec: PassageSpec,
    pub setup: RamanSetup,
    pub basis: Basis,
    pub generator: Generator,
    pub base_label: StateLabel,
}

impl Passage {
    pub fn new(spec: &PassageSpec) -> Result<Self> {
        if spec.base == VibState::GROUND {
            return Err(Error::Config("the vibrational ground state is dark; nothing to simulate".into()));
        }
        let setup = spec.setup()?;
        let include_leak = spec.generator.kind == GeneratorKind::Full;
        let basis = Basis::ladder(&setup.levels, spec.base, include_leak);
        let generator = build_generator(&basis, &setup, &spec.generator)?;
        let base_label = StateLabel::new(setup.levels.base_spin(), spec.base);
        Ok(Passage { spec: spec.clone(), setup, basis, generator, base_label })
    }

    pub fn initial(&self) -> Vec<C64> {
        let b = self.basis.index(&self.base_label).expect("base state in basis");
        let mut y = vec![C64::new(0.0, 0.0); self.basis.len()];
        y[b] = C64::new(1.0, 0.0);
        y
    }

    pub fn omega_eff(&self) -> Result<f64> {
        let roles = classify(self.basis.labels(), &self.base_label, &self.setup.levels);
        Ok(two_level_reduction(&self.generator, &roles)?.1)
    }

    pub fn simulate(&self, t_end: f64, points: usize) -> Result<SimulationResult> {
        let pulse = PulseProfile::rectangular(t_end, self.generator.rabi)?;
        let grid = uniform_grid(t_end, points)?;
        integrate(&self.generator, &self.initial(), &pulse, &grid, &self.base_label, &self.setup.levels, self.spec.tolerances)
    }

    pub fn state_at(&self, t: f64) -> Result<Vec<C64>> {
        evolve(&self.generator, &self.initial(), 0.0, t, self.spec.tolerances)
    }

    pub fn run(&self) -> Result<PassageOutcome> {
        let omega_eff = self.omega_eff()?;
        let t_end = self.spec.window_factor * std::f64::consts::PI / omega_eff;
        let result = self.simulate(t_end, self.spec.grid_points)?;
        let tau = optimal_tau(&result).ok();
        let (targets, schmidt) = match tau {
            Some(t) => {
                let y = self.state_at(t)?;
                let ts = TargetStates::from_amplitudes(&result.labels, &y, &self.base_label, &self.setup.levels);
                (Some(ts), schmidt_decompose(&result.labels, &y, &result.roles).ok())
            }
            None => (None, None),
        };
        let max = |f: fn(&crate::dynamics::Populations) -> f64| result.populations.iter().map(f).fold(0.0, f64::max);
        let max_dest = max(|p| p.dest);
        let max_leak = max(|p| p.leak);
        let max_imperfection = max(|p| p.imperfection);
        Ok(PassageOutcome { base: self.spec.base, rabi: self.generator.rabi, omega_eff, result, tau, targets, schmidt, max_dest, max_leak, max_imperfection })
    }

    pub fn leakage(&self, result: &SimulationResult) -> Result<LeakageEstimate> {
        leakage_estimate(&self.setup, &self.basis, &self.spec.generator, result)
    }
}

/// Nearest-integer v̄ and v̄ ± σ per axis from the thermal distribution.
pub fn thermal_variations(trap: &TrapParams, thermal: &ThermalSpec, mean: VibState) -> Vec<VibState> {
    let sigma: [usize; 3] = Axis::ALL.map(|a| occupation_spread(trap, thermal, a).round() as usize);
    let mut out = Vec::new();
    for signs in 0..8u8 {
        let v: [usize; 3] = std::array::from_fn(|a| {
            let (m, s) = (mean.0[a], sigma[a]);
            if signs & (1 << a) != 0 { m + s } else { m.saturating_sub(s) }
        });
        let v = VibState(v);
        if v != VibState::GROUND && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Runs the balanced passage and each variation independently in parallel.
pub fn run_envelope(spec: &PassageSpec, variations: &[VibState]) -> Result<(PassageOutcome, Vec<PassageOutcome>)> {
    let main = Passage::new(spec)?.run()?;
    let others: Result<Vec<PassageOutcome>> = variations.par_iter().map(|&v| Passage::new(&spec.with_base(v))?.run()).collect();
    Ok((main, others?))
}
