use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hamiltonian::{build_generator, Basis, GeneratorKind, GeneratorOptions, LevelScheme, RamanSetup, SpinLabel, StateLabel};
use crate::integrator::Tolerances;
use crate::scenario::{Passage, PassageSpec};
use crate::trap::{mean_occupation, partition_cutoff_box, truncation_tail, Axis, ThermalSpec, TrapParams, VibState};
use crate::{Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);
pub const MAX_TAIL: f64 = 1e-3;
pub const UNITARITY_TOLERANCE: f64 = 1e-6;

/// Sparse Hermitian density operator on spin ⊗ vibrational product states.
#[derive(Clone, Debug)]
pub struct SpinVibDensityMatrix {
    basis: Basis,
    entries: BTreeMap<(usize, usize), C64>,
}

impl SpinVibDensityMatrix {
    pub fn new(basis: Basis) -> Self {
        SpinVibDensityMatrix { basis, entries: BTreeMap::new() }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn entries(&self) -> &BTreeMap<(usize, usize), C64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries.get(&(i, j)).copied().unwrap_or(ZERO)
    }

    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        if v != ZERO {
            *self.entries.entry((i, j)).or_insert(ZERO) += v;
        }
    }

    pub fn element(&self, a: &StateLabel, b: &StateLabel) -> C64 {
        match (self.basis.index(a), self.basis.index(b)) {
            (Some(i), Some(j)) => self.get(i, j),
            _ => ZERO,
        }
    }

    pub fn trace(&self) -> f64 {
        self.entries.iter().filter(|((i, j), _)| i == j).map(|(_, v)| v.re).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.entries.iter().map(|(&(i, j), v)| (v - self.get(j, i).conj()).norm()).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue, block by block over the connected components of the sparsity pattern.
    pub fn min_eigenvalue(&self) -> f64 {
        let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
        fn find(p: &mut BTreeMap<usize, usize>, x: usize) -> usize {
            let mut r = x;
            while let Some(&q) = p.get(&r) {
                if q == r {
                    break;
                }
                r = q;
            }
            p.insert(x, r);
            r
        }
        for &(i, j) in self.entries.keys() {
            parent.entry(i).or_insert(i);
            parent.entry(j).or_insert(j);
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent.insert(a, b);
            }
        }
        let nodes: Vec<usize> = parent.keys().copied().collect();
        let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for n in nodes {
            let r = find(&mut parent, n);
            comps.entry(r).or_default().push(n);
        }
        let mut min = if comps.values().map(|c| c.len()).sum::<usize>() < self.basis.len() { 0.0 } else { f64::INFINITY };
        for c in comps.values() {
            let m = DMatrix::from_fn(c.len(), c.len(), |a, b| self.get(c[a], c[b]));
            let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
            let e = h.symmetric_eigenvalues();
            min = e.iter().cloned().fold(min, f64::min);
        }
        min
    }

    pub fn population(&self, l: &StateLabel) -> f64 {
        self.element(l, l).re
    }

    /// Tr_spin ρ as a sparse vibrational operator.
    pub fn vibrational(&self) -> BTreeMap<(VibState, VibState), C64> {
        let labels = self.basis.labels();
        let mut out = BTreeMap::new();
        for (&(i, j), v) in &self.entries {
            if labels[i].spin == labels[j].spin {
                *out.entry((labels[i].vib, labels[j].vib)).or_insert(ZERO) += v;
            }
        }
        out
    }

    pub fn vib_distribution(&self) -> BTreeMap<VibState, f64> {
        self.vibrational().into_iter().filter(|((a, b), _)| a == b).map(|((a, _), v)| (a, v.re)).collect()
    }

    pub fn mean_quanta(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (v, p) in self.vib_distribution() {
            for a in Axis::ALL {
                m[a.index()] += p * v.get(a) as f64;
            }
        }
        m
    }

    pub fn max_vib_offdiagonal(&self) -> f64 {
        self.vibrational().iter().filter(|((a, b), _)| a != b).map(|(_, v)| v.norm()).fold(0.0, f64::max)
    }

    /// ρ → K ρ K† for K given column by column; sources without a column are left untouched.
    pub fn conjugate(&self, column: impl Fn(usize) -> Option<Vec<(usize, C64)>>) -> Self {
        let mut cache: BTreeMap<usize, Vec<(usize, C64)>> = BTreeMap::new();
        let mut col = |i: usize| -> Vec<(usize, C64)> { cache.entry(i).or_insert_with(|| column(i).unwrap_or_else(|| vec![(i, C64::new(1.0, 0.0))])).clone() };
        let mut out = SpinVibDensityMatrix::new(self.basis.clone());
        for (&(i, j), v) in &self.entries {
            let (ki, kj) = (col(i), col(j));
            for &(a, x) in &ki {
                for &(b, y) in &kj {
                    out.add(a, b, x * v * y.conj());
                }
            }
        }
        out
    }

    pub fn check_physical(&self, tol_trace: f64) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).abs() > tol_trace {
            return Err(Error::Numerical(format!("trace {tr} departs from 1")));
        }
        let h = self.hermiticity_error();
        if h > 1e-12 {
            return Err(Error::Numerical(format!("density matrix not Hermitian ({h:e})")));
        }
        Ok(())
    }
}

/// Gibbs state on the cube 0..=vmax times |s⟩⟨s|, renormalized; returns the discarded tail weight too.
pub fn thermal_state(trap: &TrapParams, thermal: &ThermalSpec, levels: &LevelScheme, vmax: usize) -> Result<(SpinVibDensityMatrix, f64)> {
    let tail = truncation_tail(vmax, trap, thermal);
    if tail >= MAX_TAIL {
        return Err(Error::TruncationTail { tail, max: MAX_TAIL });
    }
    let basis = Basis::product(levels, vmax);
    let s = levels.base_spin();
    let e0 = trap.energy(VibState::GROUND);
    let weights: Vec<(VibState, f64)> = VibState::cube(vmax).map(|v| (v, (-thermal.beta * (trap.energy(v) - e0)).exp())).collect();
    let z: f64 = weights.iter().map(|w| w.1).sum();
    let mut rho = SpinVibDensityMatrix::new(basis);
    for (v, w) in weights {
        let i = rho.basis.index(&StateLabel::new(s, v)).expect("state in cube");
        rho.add(i, i, C64::new(w / z, 0.0));
    }
    Ok((rho, tail))
}

/// Raman transfer coefficients C_μ per base vibrational state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum CProfile {
    /// equal weights over the addressable modes
    Uniform,
    Table(BTreeMap<VibState, [C64; 3]>),
}

impl CProfile {
    pub fn coefficients(&self, v: VibState) -> Result<[C64; 3]> {
        let c = match self {
            CProfile::Uniform => {
                let k = Axis::ALL.iter().filter(|&&a| v.get(a) > 0).count();
                Axis::ALL.map(|a| if v.get(a) > 0 { C64::new(1.0 / (k as f64).sqrt(), 0.0) } else { ZERO })
            }
            CProfile::Table(t) => *t.get(&v).ok_or_else(|| Error::Config(format!("no C profile entry for {v}")))?,
        };
        if v == VibState::GROUND {
            return Ok([ZERO; 3]);
        }
        let sum: f64 = c.iter().map(|x| x.norm_sqr()).sum();
        let stray = Axis::ALL.iter().any(|&a| v.get(a) == 0 && c[a.index()] != ZERO);
        if (sum - 1.0).abs() > 1e-10 || stray {
            return Err(Error::NonNormalizedProfile { v: v.0, sum });
        }
        Ok(c)
    }
}

/// Spin vectors |t_μ⟩ over the F₋ sublevels (M ascending).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetSpins {
    pub lower: Vec<SpinLabel>,
    pub vectors: [Vec<C64>; 3],
}

impl TargetSpins {
    /// t_x, t_y, t_z = the three target sublevels.
    pub fn orthonormal(levels: &LevelScheme) -> Self {
        let lower: Vec<SpinLabel> = levels.lower.projections().map(|m| SpinLabel::new(levels.lower, m)).collect();
        let targets = levels.target_sublevels();
        let vectors = std::array::from_fn(|a| lower.iter().map(|s| if *s == targets[a] { C64::new(1.0, 0.0) } else { ZERO }).collect());
        TargetSpins { lower, vectors }
    }

    pub fn gram(&self) -> [[C64; 3]; 3] {
        std::array::from_fn(|a| std::array::from_fn(|b| self.vectors[a].iter().zip(&self.vectors[b]).map(|(x, y)| x.conj() * y).sum()))
    }
}

/// Applies |s⟩|v⟩ → Σ_μ C_μ⁽ᵛ⁾ |t_μ⟩|v − 1_μ⟩ with the dark state |s⟩|000⟩ fixed.
pub fn raman_step_ideal(rho: &SpinVibDensityMatrix, profile: &CProfile, targets: &TargetSpins, levels: &LevelScheme) -> Result<SpinVibDensityMatrix> {
    let s = levels.base_spin();
    let labels = rho.basis.labels();
    let mut columns: BTreeMap<usize, Vec<(usize, C64)>> = BTreeMap::new();
    let occupied: BTreeSet<usize> = rho.entries.keys().flat_map(|&(i, j)| [i, j]).collect();
    for &i in &occupied {
        let l = labels[i];
        if l.spin != s || l.vib == VibState::GROUND {
            continue;
        }
        let c = profile.coefficients(l.vib)?;
        let mut col = Vec::new();
        for a in Axis::ALL {
            let Some(w) = l.vib.lowered(a) else { continue };
            for (k, sp) in targets.lower.iter().enumerate() {
                let amp = c[a.index()] * targets.vectors[a.index()][k];
                if amp != ZERO {
                    let j = rho.basis.index(&StateLabel::new(*sp, w)).ok_or_else(|| Error::Config(format!("{sp} ⊗ {w} missing from basis")))?;
                    col.push((j, amp));
                }
            }
        }
        columns.insert(i, col);
    }
    Ok(rho.conjugate(|i| columns.get(&i).cloned()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PumpingMode {
    /// vibrational coherences are erased
    Dephasing,
    Coherent,
}

/// Traces out the spin and re-prepares |s⟩.
pub fn optical_pump(rho: &SpinVibDensityMatrix, mode: PumpingMode, levels: &LevelScheme) -> SpinVibDensityMatrix {
    let s = levels.base_spin();
    let mut out = SpinVibDensityMatrix::new(rho.basis.clone());
    for ((a, b), v) in rho.vibrational() {
        if mode == PumpingMode::Dephasing && a != b {
            continue;
        }
        let i = out.basis.index(&StateLabel::new(s, a)).expect("source spin in basis");
        let j = out.basis.index(&StateLabel::new(s, b)).expect("source spin in basis");
        out.add(i, j, v);
    }
    out
}

/// Pulse propagator columns U|s, v⟩ on the product basis.
#[derive(Clone, Debug)]
pub struct Propagator {
    pub duration: f64,
    pub columns: BTreeMap<usize, Vec<(usize, C64)>>,
    pub unitarity_error: f64,
}

/// Integrates every |s⟩⊗|v⟩ column of the pulse propagator in parallel.
pub fn build_propagator(setup: &RamanSetup, basis: &Basis, opts: &GeneratorOptions, duration: f64, tol: Tolerances) -> Result<Propagator> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Config(format!("pulse duration must be nonnegative, got {duration}")));
    }
    let s = setup.levels.base_spin();
    let sources: Vec<usize> = basis.labels().iter().enumerate().filter(|(_, l)| l.spin == s).map(|(i, _)| i).collect();
    if duration == 0.0 {
        let columns = sources.iter().map(|&i| (i, vec![(i, C64::new(1.0, 0.0))])).collect();
        return Ok(Propagator { duration, columns, unitarity_error: 0.0 });
    }
    let g = build_generator(basis, setup, opts)?;
    let cols: Result<Vec<(usize, Vec<C64>)>> = sources
        .par_iter()
        .map(|&i| {
            let mut y = vec![ZERO; basis.len()];
            y[i] = C64::new(1.0, 0.0);
            Ok((i, crate::dynamics::evolve(&g, &y, 0.0, duration, tol)?))
        })
        .collect();
    let cols = cols?;
    let mut err: f64 = 0.0;
    for (a, (_, u)) in cols.iter().enumerate() {
        for (_, w) in cols.iter().skip(a) {
            let ip: C64 = u.iter().zip(w).map(|(x, y)| x.conj() * y).sum();
            let expect = if std::ptr::eq(u, w) { 1.0 } else { 0.0 };
            err = err.max((ip - expect).norm());
        }
    }
    if err > UNITARITY_TOLERANCE {
        return Err(Error::NonUnitary(err));
    }
    let columns = cols.into_iter().map(|(i, u)| (i, u.into_iter().enumerate().filter(|(_, c)| c.norm_sqr() > 1e-30).collect())).collect();
    Ok(Propagator { duration, columns, unitarity_error: err })
}

pub fn raman_step_simulated(rho: &SpinVibDensityMatrix, prop: &Propagator) -> Result<SpinVibDensityMatrix> {
    let s_idx: BTreeSet<usize> = prop.columns.keys().copied().collect();
    if let Some(&(i, j)) = rho.entries.keys().find(|(i, j)| !s_idx.contains(i) || !s_idx.contains(j)) {
        return Err(Error::Config(format!("simulated Raman step expects a state in the source spin, found element ({i}, {j})")));
    }
    Ok(rho.conjugate(|i| prop.columns.get(&i).cloned()))
}

/// Max deviation between the post-step vibrational diagonal and the closed-form repopulation
/// p'(v) = Σ_μ e^{β(ℱ−ε_v)} e^{−βΩ_μ} |C_μ⁽ᵛ⁺¹μ⁾|², with the dark term added at v = 0.
pub fn ledger_check(rho_vib: &BTreeMap<VibState, f64>, profile: &CProfile, trap: &TrapParams, thermal: &ThermalSpec, vmax: usize) -> Result<f64> {
    let b = thermal.beta;
    let e0 = trap.energy(VibState::GROUND);
    let z_box: f64 = VibState::cube(vmax).map(|v| (-b * (trap.energy(v) - e0)).exp()).sum();
    let gibbs = |v: VibState| (-b * (trap.energy(v) - e0)).exp() / z_box;
    let mut worst: f64 = 0.0;
    for v in VibState::cube(vmax) {
        let mut p = if v == VibState::GROUND { gibbs(v) } else { 0.0 };
        for a in Axis::ALL {
            let up = v.raised(a);
            if up.get(a) > vmax {
                continue;
            }
            let c = profile.coefficients(up)?[a.index()].norm_sqr();
            p += gibbs(v) * (-b * trap.frequency(a)).exp() * c;
        }
        worst = worst.max((p - rho_vib.get(&v).copied().unwrap_or(0.0)).abs());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RamanMode {
    Ideal,
    Simulated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSource {
    Uniform,
    Simulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_steps: usize,
    pub raman_mode: RamanMode,
    pub pumping: PumpingMode,
    pub profile: ProfileSource,
    /// pulse length per step; None uses the optimal τ of the balanced passage
    pub pulse_duration: Option<f64>,
    pub reoptimize: bool,
    pub vmax: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub dark_population: f64,
    /// e^{βℱ} Z⁽ⁿ⁾ on the truncated cube
    pub analytic_prediction: f64,
    pub mean_quanta: [f64; 3],
    pub truncation_tail: f64,
    pub trace: f64,
    pub pulse_duration: Option<f64>,
    pub vib_distribution: Vec<([usize; 3], f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub config: ProtocolConfig,
    pub steps: Vec<StepReport>,
}

/// Per-v C_μ (renormalized to lossless) and the v̄ passage's target spins, from simulated passages at their optimal τ.
pub fn simulated_profile(spec: &PassageSpec, vmax: usize) -> Result<(CProfile, TargetSpins)> {
    let states: Vec<VibState> = VibState::cube(vmax).filter(|v| *v != VibState::GROUND).collect();
    let rows: Result<Vec<(VibState, [C64; 3])>> = states
        .par_iter()
        .map(|&v| {
            let o = Passage::new(&spec.with_base(v))?.run()?;
            let ts = o.targets.ok_or(Error::NoMinimum)?;
            let norm: f64 = ts.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            Ok((v, ts.weights.map(|w| C64::new(w / norm, 0.0))))
        })
        .collect();
    let mut table: BTreeMap<VibState, [C64; 3]> = rows?.into_iter().collect();
    table.insert(VibState::GROUND, [ZERO; 3]);
    let o = Passage::new(spec)?.run()?;
    let ts = o.targets.ok_or(Error::NoMinimum)?;
    let vectors = std::array::from_fn(|a| ts.spins[a].clone().unwrap_or_else(|| vec![ZERO; ts.lower.len()]));
    Ok((CProfile::Table(table), TargetSpins { lower: ts.lower, vectors }))
}

#[allow(clippy::too_many_arguments)]
fn report(step: usize, rho: &SpinVibDensityMatrix, levels: &LevelScheme, trap: &TrapParams, thermal: &ThermalSpec, vmax: usize, tail: f64, tau: Option<f64>) -> StepReport {
    let dark = rho.population(&StateLabel::new(levels.base_spin(), VibState::GROUND));
    let z = partition_cutoff_box(3 * vmax, vmax, trap, thermal);
    let analytic_prediction = partition_cutoff_box(step, vmax, trap, thermal) / z;
    StepReport {
        step,
        dark_population: dark,
        analytic_prediction,
        mean_quanta: rho.mean_quanta(),
        truncation_tail: tail,
        trace: rho.trace(),
        pulse_duration: tau,
        vib_distribution: rho.vib_distribution().into_iter().map(|(v, p)| (v.0, p)).collect(),
    }
}

/// Alternates Raman and pumping steps starting from the thermal state.
pub fn run_protocol(cfg: &ProtocolConfig, spec: &PassageSpec, thermal: &ThermalSpec) -> Result<ProtocolRun> {
    let setup = spec.setup()?;
    let levels = setup.levels.clone();
    let trap = &spec.trap;
    let (mut rho, tail) = thermal_state(trap, thermal, &levels, cfg.vmax)?;
    let mut steps = vec![report(0, &rho, &levels, trap, thermal, cfg.vmax, tail, None)];
    let (profile, targets) = match (cfg.raman_mode, cfg.profile) {
        (RamanMode::Ideal, ProfileSource::Simulated) => (simulated_profile(spec, cfg.vmax)?.0, TargetSpins::orthonormal(&levels)),
        _ => (CProfile::Uniform, TargetSpins::orthonormal(&levels)),
    };
    let mut prop: Option<Propagator> = None;
    let mut current = spec.clone();
    for n in 1..=cfg.n_steps {
        let mut tau = None;
        let after = match cfg.raman_mode {
            RamanMode::Ideal => raman_step_ideal(&rho, &profile, &targets, &levels)?,
            RamanMode::Simulated => {
                if cfg.reoptimize && n > 1 {
                    let m = rho.mean_quanta();
                    let vbar = m.map(|x| x.max(0.5));
                    current = PassageSpec { balance_quanta: vbar, base: VibState(m.map(|x| (x.round() as usize).max(1))), ..spec.clone() };
                    prop = None;
                }
                if prop.is_none() {
                    let duration = match cfg.pulse_duration {
                        Some(t) if !cfg.reoptimize || n == 1 => t,
                        _ => Passage::new(&current)?.run()?.tau.ok_or(Error::NoMinimum)?,
                    };
                    let s = current.setup()?;
                    prop = Some(build_propagator(&s, rho.basis(), &current.generator, duration, current.tolerances)?);
                }
                let p = prop.as_ref().unwrap();
                tau = Some(p.duration);
                raman_step_simulated(&rho, p)?
            }
        };
        rho = optical_pump(&after, cfg.pumping, &levels);
        let tol = if cfg.raman_mode == RamanMode::Ideal { 1e-10 } else { 1e-6 };
        rho.check_physical(tol)?;
        steps.push(report(n, &rho, &levels, trap, thermal, cfg.vmax, tail, tau));
    }
    Ok(ProtocolRun { config: cfg.clone(), steps })
}

/// Thermal mean quanta per axis.
pub fn thermal_mean_quanta(trap: &TrapParams, thermal: &ThermalSpec) -> [f64; 3] {
    Axis::ALL.map(|a| mean_occupation(trap, thermal, a))
}

/// Generator options suited to the simulated channel on a product basis.
pub fn product_generator_options() -> GeneratorOptions {
    GeneratorOptions { kind: GeneratorKind::Reduced, ..Default::default() }
}
