//! Effective two-photon Hamiltonian of the ground hyperfine manifolds after adiabatic
//! elimination of the excited state: Raman couplings, light shifts, Zeeman
//! compensation, carrier tuning and the balanced-Rabi condition.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::angular_momentum::{dipole_element, HalfInt, ReducedDipoleContext};
use crate::error::{Error, Result};
use crate::geometry::{beam_axis, carrier_frequencies, spherical_components, BeamSet, ResonanceTargets};
use crate::trap::{Axis, DisplacementMode, DisplacementTable, TrapParams, VibState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinLabel {
    pub f: HalfInt,
    pub m: HalfInt,
}

impl SpinLabel {
    pub fn new(f: HalfInt, m: HalfInt) -> Self {
        SpinLabel { f, m }
    }
}

impl fmt::Display for SpinLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|F={},M={}>", self.f, self.m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateLabel {
    pub spin: SpinLabel,
    pub vib: VibState,
}

impl StateLabel {
    pub fn new(spin: SpinLabel, vib: VibState) -> Self {
        StateLabel { spin, vib }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.spin, self.vib)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitedLevel {
    pub f: HalfInt,
    /// Energy of F' relative to the reference excited level, units of γ.
    pub offset: f64,
}

/// Linear Zeeman energies slope·M of each ground manifold, units of γ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeemanSlopes {
    pub upper: f64,
    pub lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    pub ctx: ReducedDipoleContext,
    pub upper: HalfInt,
    pub lower: HalfInt,
    pub excited: Vec<ExcitedLevel>,
    /// Δ of the depopulating beam from the reference excited level, measured from F₊.
    pub detuning: f64,
    pub hyperfine_splitting: f64,
    pub zeeman: ZeemanSlopes,
}

impl LevelScheme {
    /// ⁸⁵Rb D2 line with a common detuning for all F' (zero excited splittings).
    pub fn rb85(detuning: f64, hyperfine_splitting: f64) -> Result<Self> {
        let ctx = ReducedDipoleContext::rb85_d2();
        let excited = ctx.excited_levels().into_iter().map(|f| ExcitedLevel { f, offset: 0.0 }).collect();
        let l = LevelScheme {
            ctx,
            upper: ctx.i + HalfInt::HALF,
            lower: ctx.i - HalfInt::HALF,
            excited,
            detuning,
            hyperfine_splitting,
            zeeman: ZeemanSlopes::default(),
        };
        l.validate()?;
        Ok(l)
    }

    pub fn with_excited_offsets(mut self, offsets: &[f64]) -> Result<Self> {
        if offsets.len() != self.excited.len() {
            return Err(Error::Config(format!("expected {} excited-level offsets, got {}", self.excited.len(), offsets.len())));
        }
        for (e, &o) in self.excited.iter_mut().zip(offsets) {
            e.offset = o;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.ctx.validate()?;
        if self.upper != self.ctx.i + HalfInt::HALF || self.lower != self.ctx.i - HalfInt::HALF {
            return Err(Error::QuantumNumber("ground manifolds must be F = I ± 1/2".into()));
        }
        if !(self.hyperfine_splitting > 0.0) {
            return Err(Error::Config("hyperfine splitting must be positive".into()));
        }
        if !self.detuning.is_finite() || self.detuning == 0.0 {
            return Err(Error::Config("detuning must be finite and nonzero".into()));
        }
        Ok(())
    }

    pub fn is_upper(&self, f: HalfInt) -> bool {
        f == self.upper
    }

    /// Bare hyperfine energy of a ground manifold: 0 for F₊, −Δ_hpf for F₋.
    pub fn manifold_energy(&self, f: HalfInt) -> f64 {
        if self.is_upper(f) {
            0.0
        } else {
            -self.hyperfine_splitting
        }
    }

    pub fn zeeman_energy(&self, s: SpinLabel) -> f64 {
        let slope = if self.is_upper(s.f) { self.zeeman.upper } else { self.zeeman.lower };
        slope * s.m.value()
    }

    /// Ground sublevels: F₊ (M ascending) then F₋.
    pub fn spins(&self) -> Vec<SpinLabel> {
        let mut v: Vec<SpinLabel> = self.upper.projections().map(|m| SpinLabel::new(self.upper, m)).collect();
        v.extend(self.lower.projections().map(|m| SpinLabel::new(self.lower, m)));
        v
    }

    pub fn base_spin(&self) -> SpinLabel {
        let m0 = if self.upper.is_integer() { HalfInt::ZERO } else { HalfInt::HALF };
        SpinLabel::new(self.upper, m0)
    }

    /// F₋ sublevels reachable from the base state by a σ⁺ absorption and any emission.
    pub fn target_sublevels(&self) -> Vec<SpinLabel> {
        let centre = self.base_spin().m + HalfInt::ONE;
        self.lower
            .projections()
            .filter(|m| (m.twice() - centre.twice()).abs() <= 2)
            .map(|m| SpinLabel::new(self.lower, m))
            .collect()
    }

    /// Landé factor ratio g(F₊)/g(F₋) from the electronic contribution.
    pub fn lande_ratio(&self) -> f64 {
        let g = |f: HalfInt| {
            let f = f.value();
            let s = self.ctx.s.value();
            let i = self.ctx.i.value();
            (f * (f + 1.0) + s * (s + 1.0) - i * (i + 1.0)) / (2.0 * f * (f + 1.0))
        };
        g(self.upper) / g(self.lower)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Full,
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Lab,
    Rotating,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOptions {
    pub kind: GeneratorKind,
    pub frame: Frame,
    pub displacement: DisplacementMode,
    /// Couplings rotating faster than this (units of γ) are dropped.
    pub secular_cutoff: f64,
    pub basis_cap: usize,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions {
            kind: GeneratorKind::Full,
            frame: Frame::Rotating,
            displacement: DisplacementMode::Exact,
            secular_cutoff: 50.0,
            basis_cap: 20_000,
        }
    }
}

/// Shifts the carriers are tuned to: δ_b and the mean target energy δ̄_m.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResonanceShifts {
    pub upper: f64,
    pub lower_mean: f64,
}

/// Level scheme, beams and trap with precomputed dipole tables.
#[derive(Clone, Debug)]
pub struct RamanSetup {
    pub levels: LevelScheme,
    pub beams: BeamSet,
    pub trap: TrapParams,
    pub shifts: ResonanceShifts,
    spins: Vec<SpinLabel>,
    spin_index: HashMap<SpinLabel, usize>,
    excited: Vec<(HalfInt, HalfInt, f64)>,
    /// ⟨F'M'| d·e_j |g⟩ per beam: excited × ground.
    dipoles: [DMatrix<C64>; 4],
}

impl RamanSetup {
    pub fn new(levels: LevelScheme, beams: BeamSet, trap: TrapParams) -> Result<Self> {
        levels.validate()?;
        beams.validate()?;
        let spins = levels.spins();
        let spin_index = spins.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut excited = Vec::new();
        for e in &levels.excited {
            for m in e.f.projections() {
                excited.push((e.f, m, e.offset));
            }
        }
        let axis = beams.quantization_axis();
        let dipoles = std::array::from_fn(|j| {
            let c = spherical_components(&beams.polarizations[j], &axis);
            DMatrix::from_fn(excited.len(), spins.len(), |n, g| {
                let (f, m, _) = excited[n];
                let s: SpinLabel = spins[g];
                let mut v = C64::new(0.0, 0.0);
                for q in -1..=1 {
                    let d = dipole_element(f, m, q, s.f, s.m, &levels.ctx);
                    if d != 0.0 {
                        v += c[(q + 1) as usize] * d;
                    }
                }
                v
            })
        });
        let max_control = beams.reduced_rabi[1..].iter().cloned().fold(0.0, f64::max);
        if max_control > 0.5 * beams.reduced_rabi[0] {
            log::warn!("control Rabi frequency {max_control} is not small compared with the depopulating beam");
        }
        Ok(RamanSetup { levels, beams, trap, shifts: ResonanceShifts::default(), spins, spin_index, excited, dipoles })
    }

    /// Builds the setup, applies Zeeman compensation and tunes the control carriers
    /// to the light-shifted resonance. With `include_control_shifts` the scalar
    /// shifts of the control beams enter δ_b and δ̄_m.
    pub fn tuned(levels: LevelScheme, beams: BeamSet, trap: TrapParams, include_control_shifts: bool) -> Result<Self> {
        let mut s = RamanSetup::new(levels, beams, trap)?;
        s.tune(include_control_shifts);
        Ok(s)
    }

    pub fn tune(&mut self, include_control_shifts: bool) {
        self.beams.carrier_offsets = untuned_offsets(&self.levels, &self.trap);
        self.levels.zeeman = zeeman_compensation(self);
        let b = self.levels.base_spin();
        let upper = self.total_light_shift(b, include_control_shifts) + self.levels.zeeman_energy(b);
        let targets = self.levels.target_sublevels();
        let lower_mean = targets
            .iter()
            .map(|&m| self.total_light_shift(m, include_control_shifts) + self.levels.zeeman_energy(m))
            .sum::<f64>()
            / targets.len() as f64;
        self.shifts = ResonanceShifts { upper, lower_mean };
        self.beams.carrier_offsets = carrier_frequencies(&ResonanceTargets {
            hyperfine_splitting: self.levels.hyperfine_splitting,
            mode_frequencies: [1, 2, 3].map(|j| self.trap.frequency(beam_axis(j))),
            upper_shift: upper,
            lower_mean_shift: lower_mean,
        });
    }

    pub fn spins(&self) -> &[SpinLabel] {
        &self.spins
    }

    pub fn spin_index(&self, s: SpinLabel) -> Option<usize> {
        self.spin_index.get(&s).copied()
    }

    /// Detuning of beam j from excited sublevel n when absorbed from ground manifold f.
    fn detuning(&self, j: usize, n: usize, f: HalfInt) -> f64 {
        self.levels.detuning - self.excited[n].2 + self.beams.carrier_offsets[j] + self.levels.manifold_energy(f)
    }

    /// Σ_n conj⟨n|d·e_j|a⟩⟨n|d·e_k|b⟩ · ½(1/Δ⁽ᵏ⁾_{n,b} + 1/Δ⁽ʲ⁾_{n,a}), dipoles in units of ⟨J‖d‖S⟩.
    fn spin_amplitude(&self, j: usize, k: usize, a: usize, b: usize) -> C64 {
        let (fa, fb) = (self.spins[a].f, self.spins[b].f);
        let (dj, dk) = (&self.dipoles[j], &self.dipoles[k]);
        let mut s = C64::new(0.0, 0.0);
        for n in 0..self.excited.len() {
            let x = dj[(n, a)].conj() * dk[(n, b)];
            if x.norm_sqr() == 0.0 {
                continue;
            }
            s += x * 0.5 * (1.0 / self.detuning(k, n, fb) + 1.0 / self.detuning(j, n, fa));
        }
        s
    }

    /// Σ_n conj⟨n|d·e_j|a⟩⟨n|d·e_k|b⟩ / Δ_n with a single detuning per excited level.
    fn spin_amplitude_plain(&self, j: usize, k: usize, a: usize, b: usize, detuning: impl Fn(usize) -> f64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for n in 0..self.excited.len() {
            s += self.dipoles[j][(n, a)].conj() * self.dipoles[k][(n, b)] / detuning(n);
        }
        s
    }

    /// Light shift of a ground sublevel from all beams (or the depopulating beam only).
    pub fn total_light_shift(&self, s: SpinLabel, include_controls: bool) -> f64 {
        let g = self.spin_index[&s];
        let beams = if include_controls { 0..4 } else { 0..1 };
        beams
            .map(|j| {
                let o = self.beams.reduced_rabi[j];
                o * o / 4.0 * self.spin_amplitude(j, j, g, g).re
            })
            .sum()
    }

    fn recoil_alpha(&self, j: usize, k: usize) -> [f64; 3] {
        let dk = self.beams.directions[k] - self.beams.directions[j];
        let eta = self.trap.lamb_dicke_all();
        [dk[0] * eta[0], dk[1] * eta[1], dk[2] * eta[2]]
    }
}

fn untuned_offsets(levels: &LevelScheme, trap: &TrapParams) -> [f64; 4] {
    carrier_frequencies(&ResonanceTargets {
        hyperfine_splitting: levels.hyperfine_splitting,
        mode_frequencies: [1, 2, 3].map(|j| trap.frequency(beam_axis(j))),
        upper_shift: 0.0,
        lower_mean_shift: 0.0,
    })
}

/// δ_b = Σ_n |Ω⁽⁰⁾_{nb}|²/(4Δ_F) from the depopulating beam.
pub fn light_shift_upper(b: SpinLabel, setup: &RamanSetup) -> f64 {
    let g = setup.spin_index[&b];
    let o = setup.beams.reduced_rabi[0];
    let s = setup.spin_amplitude_plain(0, 0, g, g, |n| setup.levels.detuning - setup.excited[n].2);
    o * o / 4.0 * s.re
}

/// Shift of an F₋ sublevel by the depopulating beam, with denominators Δ_F − Δ_hpf.
pub fn light_shift_lower(m: SpinLabel, setup: &RamanSetup) -> f64 {
    let g = setup.spin_index[&m];
    let o = setup.beams.reduced_rabi[0];
    let s = setup.spin_amplitude_plain(0, 0, g, g, |n| setup.levels.detuning - setup.excited[n].2 - setup.levels.hyperfine_splitting);
    o * o / 4.0 * s.re
}

/// Arithmetic mean of the lower shifts over the target sublevels.
pub fn mean_light_shift_lower(setup: &RamanSetup) -> f64 {
    let t = setup.levels.target_sublevels();
    t.iter().map(|&m| light_shift_lower(m, setup)).sum::<f64>() / t.len() as f64
}

/// Linear-in-M Zeeman slopes that make the target sublevels degenerate (least squares);
/// the upper manifold receives the slope implied by the same field.
pub fn zeeman_compensation(setup: &RamanSetup) -> ZeemanSlopes {
    let t = setup.levels.target_sublevels();
    let pts: Vec<(f64, f64)> = t.iter().map(|&m| (m.m.value(), light_shift_lower(m, setup))).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let lower = -slope;
    ZeemanSlopes { lower, upper: lower * setup.levels.lande_ratio() }
}

/// (Ω⁽²⁾, Ω⁽³⁾) such that Ω⁽ʲ⁾η_μ√v̄_μ is the same for all three control beams.
pub fn balanced_rabi(trap: &TrapParams, vbar: [f64; 3], omega1: f64) -> Result<(f64, f64)> {
    if vbar.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Config(format!("balanced Rabi condition needs positive mean quanta, got {vbar:?}")));
    }
    let eta = trap.lamb_dicke_all();
    let target = omega1 * eta[0] * vbar[0].sqrt();
    Ok((target / (eta[1] * vbar[1].sqrt()), target / (eta[2] * vbar[2].sqrt())))
}

/// Control beam addressing the axis along which b and m differ by one lowered quantum.
fn lowered_axis(b: &StateLabel, m: &StateLabel) -> Option<Axis> {
    Axis::ALL.into_iter().find(|&a| b.vib.lowered(a) == Some(m.vib))
}

/// ⟨m|H|b⟩ for b ∈ F₊ and m ∈ F₋ with one quantum removed along μ, from the
/// adiabatically eliminated two-photon amplitude with detunings Δ_F.
pub fn raman_coupling(b: &StateLabel, m: &StateLabel, setup: &RamanSetup, mode: DisplacementMode) -> Result<C64> {
    let axis = raman_pair_axis(b, m, setup)?;
    let j = axis.index() + 1;
    let (gb, gm) = (setup.spin_index[&b.spin], setup.spin_index[&m.spin]);
    let spin = setup.spin_amplitude_plain(j, 0, gm, gb, |n| setup.levels.detuning - setup.excited[n].2);
    let alpha = setup.recoil_alpha(j, 0)[axis.index()];
    let vib = vib_factor(b.vib, m.vib, alpha, axis, mode);
    let om = setup.beams.reduced_rabi;
    Ok(om[j] * om[0] / 4.0 * spin * vib)
}

/// ⟨b|H|m⟩ evaluated from the reverse process (absorb from the control beam, emit into beam 0).
pub fn raman_coupling_reverse(b: &StateLabel, m: &StateLabel, setup: &RamanSetup, mode: DisplacementMode) -> Result<C64> {
    let axis = raman_pair_axis(b, m, setup)?;
    let j = axis.index() + 1;
    let (gb, gm) = (setup.spin_index[&b.spin], setup.spin_index[&m.spin]);
    let spin = setup.spin_amplitude_plain(0, j, gb, gm, |n| setup.levels.detuning - setup.excited[n].2);
    let alpha = setup.recoil_alpha(0, j)[axis.index()];
    let vib = vib_factor(m.vib, b.vib, alpha, axis, mode);
    let om = setup.beams.reduced_rabi;
    Ok(om[j] * om[0] / 4.0 * spin * vib)
}

fn raman_pair_axis(b: &StateLabel, m: &StateLabel, setup: &RamanSetup) -> Result<Axis> {
    if !setup.levels.is_upper(b.spin.f) || setup.levels.is_upper(m.spin.f) {
        return Err(Error::QuantumNumber("raman coupling needs b in F+ and m in F-".into()));
    }
    if setup.spin_index(b.spin).is_none() || setup.spin_index(m.spin).is_none() {
        return Err(Error::QuantumNumber("unknown sublevel".into()));
    }
    lowered_axis(b, m).ok_or_else(|| Error::QuantumNumber(format!("{m} is not {b} with one quantum removed")))
}

fn vib_factor(from: VibState, to: VibState, alpha: f64, axis: Axis, mode: DisplacementMode) -> C64 {
    for a in Axis::ALL {
        if a != axis && from.get(a) != to.get(a) {
            return C64::new(0.0, 0.0);
        }
    }
    let (f, t) = (from.get(axis), to.get(axis));
    match mode {
        DisplacementMode::Linearized => crate::trap::linearized_element(f, t, alpha),
        DisplacementMode::Exact => crate::trap::displacement_matrix(alpha, f.max(t))[(t, f)],
    }
}

/// Ordered list of basis states with index lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    labels: Vec<StateLabel>,
    index: HashMap<StateLabel, usize>,
}

impl Basis {
    pub fn from_labels(labels: Vec<StateLabel>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(*l, i).is_some() {
                return Err(Error::Config(format!("duplicate basis state {l}")));
            }
        }
        Ok(Basis { labels, index })
    }

    /// F₊ ⊗ {v}, F₋ ⊗ {v − 1_μ : v_μ > 0}, and optionally the F₋ ⊗ {v} leakage states.
    pub fn ladder(levels: &LevelScheme, base: VibState, include_leakage: bool) -> Self {
        let mut labels: Vec<StateLabel> = levels.upper.projections().map(|m| StateLabel::new(SpinLabel::new(levels.upper, m), base)).collect();
        for axis in Axis::ALL {
            if let Some(v) = base.lowered(axis) {
                labels.extend(levels.lower.projections().map(|m| StateLabel::new(SpinLabel::new(levels.lower, m), v)));
            }
        }
        if include_leakage {
            labels.extend(levels.lower.projections().map(|m| StateLabel::new(SpinLabel::new(levels.lower, m), base)));
        }
        Basis::from_labels(labels).expect("ladder states are distinct")
    }

    /// Every ground sublevel times the cube 0..=vmax.
    pub fn product(levels: &LevelScheme, vmax: usize) -> Self {
        let spins = levels.spins();
        let labels = VibState::cube(vmax).flat_map(|v| spins.iter().map(move |&s| StateLabel::new(s, v))).collect();
        Basis::from_labels(labels).expect("product states are distinct")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[StateLabel] {
        &self.labels
    }

    pub fn index(&self, l: &StateLabel) -> Option<usize> {
        self.index.get(l).copied()
    }
}

/// One matrix element of the generator: ⟨target|H|source⟩ = amplitude · e^{i·rotating_phase·t}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoupling {
    pub source: usize,
    pub target: usize,
    pub amplitude: C64,
    pub rotating_phase: f64,
}

/// Sparse time-dependent generator H(t) = Σ_f H_f e^{i f t}, grouped by rotating frequency.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Generator {
    pub labels: Vec<StateLabel>,
    pub rabi: [f64; 4],
    /// Distinct rotating frequencies; index 0 is the static part.
    pub frequencies: Vec<f64>,
    /// (target, source, amplitude) per frequency.
    pub groups: Vec<Vec<(usize, usize, C64)>>,
}

const FREQ_QUANTUM: f64 = 1e-12;

impl Generator {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    fn from_couplings(labels: Vec<StateLabel>, rabi: [f64; 4], couplings: impl IntoIterator<Item = EffectiveCoupling>) -> Self {
        let mut by_freq: BTreeMap<i64, BTreeMap<(usize, usize), C64>> = BTreeMap::new();
        by_freq.entry(0).or_default();
        for c in couplings {
            let key = (c.rotating_phase / FREQ_QUANTUM).round() as i64;
            *by_freq.entry(key).or_default().entry((c.target, c.source)).or_insert(C64::new(0.0, 0.0)) += c.amplitude;
        }
        let mut frequencies = Vec::new();
        let mut groups = Vec::new();
        // static group first
        let stat = by_freq.remove(&0).unwrap();
        frequencies.push(0.0);
        groups.push(stat.into_iter().map(|((t, s), a)| (t, s, a)).collect());
        for (k, g) in by_freq {
            frequencies.push(k as f64 * FREQ_QUANTUM);
            groups.push(g.into_iter().map(|((t, s), a)| (t, s, a)).collect());
        }
        Generator { labels, rabi, frequencies, groups }
    }

    pub fn couplings(&self) -> Vec<EffectiveCoupling> {
        let mut out = Vec::new();
        for (f, g) in self.frequencies.iter().zip(&self.groups) {
            for &(t, s, a) in g {
                out.push(EffectiveCoupling { source: s, target: t, amplitude: a, rotating_phase: *f });
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    pub fn matrix_at(&self, t: f64) -> DMatrix<C64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for (f, g) in self.frequencies.iter().zip(&self.groups) {
            let ph = C64::from_polar(1.0, f * t);
            for &(r, c, a) in g {
                h[(r, c)] += a * ph;
            }
        }
        h
    }

    pub fn static_matrix(&self) -> DMatrix<C64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for &(r, c, a) in &self.groups[0] {
            h[(r, c)] += a;
        }
        h
    }

    pub fn hermiticity_error(&self, t: f64) -> f64 {
        let h = self.matrix_at(t);
        (&h - h.adjoint()).iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// out = −i H(t) y.
    pub fn apply(&self, t: f64, y: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (f, g) in self.frequencies.iter().zip(&self.groups) {
            let ph = C64::from_polar(1.0, f * t) * C64::new(0.0, -1.0);
            for &(r, c, a) in g {
                out[r] += a * ph * y[c];
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.groups.iter().all(|g| g.iter().all(|x| x.2.norm() == 0.0))
    }

    /// Generator restricted to span{vectors}: H' = V† H V per frequency component.
    pub fn project(&self, vectors: &[DVector<C64>], labels: Vec<StateLabel>) -> Result<Generator> {
        if vectors.len() != labels.len() {
            return Err(Error::Config("one label per projection vector required".into()));
        }
        let mut couplings = Vec::new();
        for (f, g) in self.frequencies.iter().zip(&self.groups) {
            let n = self.dim();
            let mut h = DMatrix::<C64>::zeros(n, n);
            for &(r, c, a) in g {
                h[(r, c)] += a;
            }
            for (p, vp) in vectors.iter().enumerate() {
                let hv: Vec<DVector<C64>> = vectors.iter().map(|v| &h * v).collect();
                for (q, hq) in hv.iter().enumerate() {
                    let a = vp.dotc(hq);
                    if a.norm() > 0.0 {
                        couplings.push(EffectiveCoupling { source: q, target: p, amplitude: a, rotating_phase: *f });
                    }
                }
            }
        }
        Ok(Generator::from_couplings(labels, self.rabi, couplings))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = self
            .couplings()
            .iter()
            .map(|c| serde_json::json!([c.target, c.source, c.amplitude.re, c.amplitude.im, c.rotating_phase]))
            .collect();
        serde_json::json!({
            "dimension": self.dim(),
            "labels": self.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
            "entries_target_source_re_im_freq": entries,
        })
    }
}

/// Assembles H(t) over the basis in the lab or the δ-rotating frame.
pub fn build_generator(basis: &Basis, setup: &RamanSetup, opts: &GeneratorOptions) -> Result<Generator> {
    let n = basis.len();
    if n > opts.basis_cap {
        return Err(Error::BasisOverflow { requested: n, cap: opts.basis_cap });
    }
    let labels = basis.labels().to_vec();
    let spin_idx: Vec<usize> = labels
        .iter()
        .map(|l| setup.spin_index(l.spin).ok_or_else(|| Error::QuantumNumber(format!("unknown sublevel {}", l.spin))))
        .collect::<Result<_>>()?;
    let levels = &setup.levels;
    let rabi = setup.beams.reduced_rabi;
    let nmax = labels.iter().map(|l| l.vib.max_component()).max().unwrap_or(0);
    let is_upper: Vec<bool> = labels.iter().map(|l| levels.is_upper(l.spin.f)).collect();

    let phi = |l: &StateLabel| match opts.frame {
        Frame::Lab => 0.0,
        Frame::Rotating => {
            if levels.is_upper(l.spin.f) {
                setup.shifts.upper
            } else {
                setup.shifts.lower_mean
            }
        }
    };
    let bare: Vec<f64> = labels.iter().map(|l| levels.manifold_energy(l.spin.f) + setup.trap.energy(l.vib)).collect();
    let phis: Vec<f64> = labels.iter().map(phi).collect();

    let mut couplings: Vec<EffectiveCoupling> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        let d = levels.zeeman_energy(l.spin) - phis[i];
        if d != 0.0 {
            couplings.push(EffectiveCoupling { source: i, target: i, amplitude: C64::new(d, 0.0), rotating_phase: 0.0 });
        }
    }

    let nspin = setup.spins().len();
    for j in 0..4 {
        for k in 0..4 {
            if rabi[j] == 0.0 || rabi[k] == 0.0 {
                continue;
            }
            if opts.kind == GeneratorKind::Reduced && j != 0 && k != 0 {
                continue;
            }
            let pref = rabi[j] * rabi[k] / 4.0;
            let mut spin = DMatrix::from_fn(nspin, nspin, |a, b| setup.spin_amplitude(j, k, a, b));
            // cancellations among excited sublevels leave rounding residue instead of exact zeros
            let scale = spin.iter().map(|x| x.norm()).fold(0.0, f64::max);
            spin.iter_mut().filter(|x| x.norm() < 1e-12 * scale).for_each(|x| *x = C64::new(0.0, 0.0));
            let alpha = setup.recoil_alpha(j, k);
            let tables: [DisplacementTable; 3] = std::array::from_fn(|ax| DisplacementTable::new(alpha[ax], nmax, opts.displacement));
            let dw = setup.beams.carrier_offsets[j] - setup.beams.carrier_offsets[k];
            for (a, la) in labels.iter().enumerate() {
                for (b, lb) in labels.iter().enumerate() {
                    if opts.kind == GeneratorKind::Reduced {
                        let same = is_upper[a] == is_upper[b];
                        let keep = if j == 0 && k == 0 { same } else { !same && la.vib != lb.vib };
                        if !keep {
                            continue;
                        }
                    }
                    let s = spin[(spin_idx[a], spin_idx[b])];
                    if s.norm_sqr() == 0.0 {
                        continue;
                    }
                    let mut vib = C64::new(1.0, 0.0);
                    for ax in 0..3 {
                        vib *= tables[ax].element(lb.vib.0[ax], la.vib.0[ax]);
                        if vib.norm_sqr() == 0.0 {
                            break;
                        }
                    }
                    if vib.norm_sqr() < 1e-36 {
                        continue;
                    }
                    let mut freq = dw + bare[a] - bare[b] + phis[a] - phis[b];
                    if freq.abs() < FREQ_QUANTUM {
                        freq = 0.0;
                    }
                    if freq.abs() > opts.secular_cutoff {
                        continue;
                    }
                    couplings.push(EffectiveCoupling { source: b, target: a, amplitude: s * vib * pref, rotating_phase: freq });
                }
            }
        }
    }
    Ok(Generator::from_couplings(labels, rabi, couplings))
}

#[cfg(test)]
pub mod tests {
    use super::*;
    use crate::units::*;
    use proptest::prelude::*;

    pub fn reference_setup(detuning: f64, vbar: [f64; 3]) -> RamanSetup {
        let trap = TrapParams::from_si(200e3, 100e3, RB85_MASS_AMU, RB85_D2_WAVELENGTH_NM, RB85_GAMMA_HZ).unwrap();
        let (o2, o3) = balanced_rabi(&trap, vbar, 1.0).unwrap();
        let beams = BeamSet::standard([20.0, 1.0, o2, o3]).unwrap();
        let levels = LevelScheme::rb85(detuning, hz_to_gamma(RB85_HYPERFINE_HZ, RB85_GAMMA_HZ)).unwrap();
        RamanSetup::tuned(levels, beams, trap, true).unwrap()
    }

    fn sl(f: i32, m: i32) -> SpinLabel {
        SpinLabel::new(HalfInt::int(f), HalfInt::int(m))
    }

    fn st(f: i32, m: i32, v: [usize; 3]) -> StateLabel {
        StateLabel::new(sl(f, m), VibState(v))
    }

    /// Light shift of |F,M⟩ by a pure σ⁺ beam, summed directly over CG products.
    fn oracle_sigma_plus_shift(f0: i32, m0: i32, omega: f64, detuning: f64) -> f64 {
        let ctx = ReducedDipoleContext::rb85_d2();
        let mut s = 0.0;
        for fp in 1..=4 {
            let d = dipole_element(HalfInt::int(fp), HalfInt::int(m0 + 1), 1, HalfInt::int(f0), HalfInt::int(m0), &ctx);
            s += d * d;
        }
        omega * omega / 4.0 * s / detuning
    }

    #[test]
    fn upper_shift_matches_direct_sum() {
        let s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        for m in -3..=3 {
            let v = light_shift_upper(sl(3, m), &s);
            assert!((v - oracle_sigma_plus_shift(3, m, 20.0, -1000.0)).abs() < 1e-15);
            assert!(v < 0.0 || m == 3);
        }
        let hpf = s.levels.hyperfine_splitting;
        for m in -2..=2 {
            let v = light_shift_lower(sl(2, m), &s);
            assert!((v - oracle_sigma_plus_shift(2, m, 20.0, -1000.0 - hpf)).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_scaling_and_ordering() {
        let s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        let mut s2 = s.clone();
        s2.beams.reduced_rabi[0] *= 2.0;
        let a = light_shift_upper(sl(3, 0), &s);
        let b = light_shift_upper(sl(3, 0), &s2);
        assert!((b / a - 4.0).abs() < 1e-12);
        // same coupling strength, larger denominator for the lower manifold
        let up = oracle_sigma_plus_shift(2, 0, 20.0, -1000.0);
        assert!(light_shift_lower(sl(2, 0), &s).abs() < up.abs());
        let t = s.levels.target_sublevels();
        assert_eq!(t, vec![sl(2, 0), sl(2, 1), sl(2, 2)]);
        let mean = t.iter().map(|&m| light_shift_lower(m, &s)).sum::<f64>() / 3.0;
        assert_eq!(mean, mean_light_shift_lower(&s));
    }

    #[test]
    fn lower_spread_shrinks_with_detuning() {
        let spread = |s: &RamanSetup| {
            let v: Vec<f64> = s.levels.target_sublevels().iter().map(|&m| light_shift_lower(m, s)).collect();
            let mean = v.iter().sum::<f64>() / 3.0;
            (v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)) / mean.abs()
        };
        let a = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        let b = reference_setup(-5000.0, [2.0, 2.0, 4.0]);
        assert!(spread(&b) < spread(&a));
    }

    #[test]
    fn compensation_makes_targets_degenerate() {
        let s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        let e: Vec<f64> = s.levels.target_sublevels().iter().map(|&m| light_shift_lower(m, &s) + s.levels.zeeman_energy(m)).collect();
        for a in &e {
            for b in &e {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!((s.levels.zeeman.upper + s.levels.zeeman.lower).abs() < 1e-18);
        // upper manifold stays resolved
        let u: Vec<f64> = (-3..=3).map(|m| light_shift_upper(sl(3, m), &s) + s.levels.zeeman_energy(sl(3, m))).collect();
        let spread = u.iter().cloned().fold(f64::MIN, f64::max) - u.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 1e-4);
        let mut z = s.clone();
        z.beams.reduced_rabi[0] = 0.0;
        let c = zeeman_compensation(&z);
        assert_eq!(c.lower, 0.0);
    }

    #[test]
    fn balanced_rabi_examples() {
        let trap = TrapParams::from_si(200e3, 100e3, RB85_MASS_AMU, RB85_D2_WAVELENGTH_NM, RB85_GAMMA_HZ).unwrap();
        let (o2, o3) = balanced_rabi(&trap, [2.0, 2.0, 4.0], 1.0).unwrap();
        assert!((o2 - 1.0).abs() < 1e-15);
        let eta = trap.lamb_dicke_all();
        assert!((o3 - eta[0] / eta[2] * 0.5f64.sqrt()).abs() < 1e-15);
        let (p2, p3) = balanced_rabi(&trap, [2.0, 2.0, 4.0], 3.0).unwrap();
        assert!((p2 - 3.0 * o2).abs() < 1e-14 && (p3 - 3.0 * o3).abs() < 1e-14);
        assert!(balanced_rabi(&trap, [0.0, 2.0, 4.0], 1.0).is_err());
    }

    #[test]
    fn raman_coupling_properties() {
        let s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        let b = st(3, 0, [0, 2, 4]);
        assert!(raman_coupling(&b, &st(2, 1, [0, 2, 3]), &s, DisplacementMode::Linearized).is_ok());
        assert!(raman_coupling(&b, &st(2, 1, [0, 2, 4]), &s, DisplacementMode::Linearized).is_err());
        let lin = |v: usize| raman_coupling(&st(3, 0, [v, 1, 1]), &st(2, 1, [v - 1, 1, 1]), &s, DisplacementMode::Linearized).unwrap();
        assert!((lin(4) / lin(1) - 2.0).norm() < 1e-12);
        for m in 0..=2 {
            for (bv, mv) in [([2, 2, 4], [1, 2, 4]), ([2, 2, 4], [2, 1, 4]), ([2, 2, 4], [2, 2, 3])] {
                for mode in [DisplacementMode::Linearized, DisplacementMode::Exact] {
                    let fwd = raman_coupling(&st(3, 0, bv), &st(2, m, mv), &s, mode).unwrap();
                    let rev = raman_coupling_reverse(&st(3, 0, bv), &st(2, m, mv), &s, mode).unwrap();
                    assert!((fwd - rev.conj()).norm() < 1e-18);
                }
            }
        }
        // linearized amplitude is i(2/√3)η√v times the spin factor
        let x = raman_coupling(&st(3, 0, [2, 0, 0]), &st(2, 1, [1, 0, 0]), &s, DisplacementMode::Linearized).unwrap();
        let e = raman_coupling(&st(3, 0, [2, 0, 0]), &st(2, 1, [1, 0, 0]), &s, DisplacementMode::Exact).unwrap();
        let eta = s.trap.lamb_dicke(Axis::X) * 2.0 / 3f64.sqrt();
        assert!(((e - x).norm() / x.norm()) < 3.0 * eta * eta);
    }

    #[test]
    fn generator_is_hermitian() {
        let s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        let basis = Basis::ladder(&s.levels, VibState::new(2, 2, 4), true);
        for kind in [GeneratorKind::Full, GeneratorKind::Reduced] {
            for frame in [Frame::Lab, Frame::Rotating] {
                let g = build_generator(&basis, &s, &GeneratorOptions { kind, frame, ..Default::default() }).unwrap();
                for t in [0.0, 13.7, 1234.5] {
                    assert!(g.hermiticity_error(t) < 1e-12);
                }
            }
        }
        let prod = Basis::product(&s.levels, 1);
        let g = build_generator(&prod, &s, &GeneratorOptions::default()).unwrap();
        assert!(g.hermiticity_error(7.0) < 1e-12);
        let err = build_generator(&prod, &s, &GeneratorOptions { basis_cap: 10, ..Default::default() });
        assert!(matches!(err, Err(Error::BasisOverflow { .. })));
    }

    #[test]
    fn resonance_makes_sideband_couplings_static() {
        let s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        let basis = Basis::ladder(&s.levels, VibState::new(2, 2, 4), true);
        let g = build_generator(&basis, &s, &GeneratorOptions::default()).unwrap();
        let b = basis.index(&st(3, 0, [2, 2, 4])).unwrap();
        let mut seen = 0;
        for c in g.couplings() {
            let t = &basis.labels()[c.target];
            if c.source == b && !s.levels.is_upper(t.spin.f) && t.vib != VibState::new(2, 2, 4) {
                assert!(c.rotating_phase.abs() < 1e-12, "{} {} {}", t, c.amplitude, c.rotating_phase);
                seen += 1;
            }
        }
        assert_eq!(seen, 6);
    }

    #[test]
    fn no_controls_gives_diagonal_generator() {
        let mut s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        s.beams.reduced_rabi = [20.0, 0.0, 0.0, 0.0];
        let basis = Basis::ladder(&s.levels, VibState::new(2, 2, 4), true);
        let g = build_generator(&basis, &s, &GeneratorOptions::default()).unwrap();
        for c in g.couplings() {
            assert_eq!(c.source, c.target);
        }
    }

    #[test]
    fn balanced_coupling_blocks_have_equal_norm() {
        let s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        let base = VibState::new(2, 2, 4);
        let basis = Basis::ladder(&s.levels, base, false);
        let opts = GeneratorOptions { kind: GeneratorKind::Reduced, displacement: DisplacementMode::Linearized, ..Default::default() };
        let g = build_generator(&basis, &s, &opts).unwrap();
        let h = g.static_matrix();
        let b = basis.index(&st(3, 0, [2, 2, 4])).unwrap();
        let norms: Vec<f64> = Axis::ALL
            .iter()
            .map(|&a| {
                let v = base.lowered(a).unwrap();
                (-2..=2).map(|m| h[(basis.index(&st(2, m, v.0)).unwrap(), b)].norm_sqr()).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms[0] > 0.0);
        // the control carriers differ by Ω⊥ − Ω∥, which enters the denominators at the 1e-5 level
        for n in &norms {
            assert!((n / norms[0] - 1.0).abs() < 1e-4, "{norms:?}");
        }
    }

    #[test]
    fn generator_json_dump() {
        let s = reference_setup(-1000.0, [2.0, 2.0, 4.0]);
        let basis = Basis::ladder(&s.levels, VibState::new(1, 0, 0), true);
        let g = build_generator(&basis, &s, &GeneratorOptions::default()).unwrap();
        let j = g.to_json();
        assert_eq!(j["dimension"], 7 + 5 + 5);
        assert_eq!(j["entries_target_source_re_im_freq"].as_array().unwrap().len(), g.nnz());
    }

    proptest! {
        #[test]
        fn hermitian_for_random_parameters(det in -8000.0f64..-200.0, o0 in 1.0f64..40.0, o1 in 0.0f64..3.0, vx in 0usize..4, vy in 0usize..4, vz in 0usize..5, t in 0.0f64..1e5) {
            let mut s = reference_setup(det, [2.0, 2.0, 4.0]);
            s.beams.reduced_rabi[0] = o0;
            s.beams.reduced_rabi[1] = o1;
            s.tune(true);
            let basis = Basis::ladder(&s.levels, VibState::new(vx, vy, vz), true);
            let g = build_generator(&basis, &s, &GeneratorOptions::default()).unwrap();
            prop_assert!(g.hermiticity_error(t) < 1e-12);
        }

        #[test]
        fn balance_is_homogeneous(c in 0.01f64..100.0) {
            let trap = TrapParams::from_si(200e3, 100e3, RB85_MASS_AMU, RB85_D2_WAVELENGTH_NM, RB85_GAMMA_HZ).unwrap();
            let (a2, a3) = balanced_rabi(&trap, [1.5, 2.5, 3.7], 1.0).unwrap();
            let (b2, b3) = balanced_rabi(&trap, [1.5, 2.5, 3.7], c).unwrap();
            prop_assert!((b2 / a2 - c).abs() < 1e-12 * c && (b3 / a3 - c).abs() < 1e-12 * c);
        }
    }
}
