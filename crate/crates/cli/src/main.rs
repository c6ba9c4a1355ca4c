use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::{json, Value};

use rsc_core::config::{RunConfig, PRESETS};
use rsc_core::dynamics::StateRole;
use rsc_core::protocol::{run_protocol, PumpingMode, RamanMode};
use rsc_core::scenario::{Passage, PassageOutcome};
use rsc_core::trap::{truncation_tail, VibState};

#[derive(Parser)]
#[command(name = "rsc", version, about = "Three-dimensional Raman sideband cooling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one Raman passage (plus the ±σ envelope) and write time series
    Simulate(Common),
    /// Iterate Raman pulse + optical pumping and write per-step reports
    Protocol(Common),
    /// Repeat a run over several values of one config key, in parallel
    Sweep {
        #[command(flatten)]
        common: Common,
        /// config key to vary, e.g. detuning_gamma
        #[arg(long)]
        param: String,
        /// comma-separated JSON values, e.g. -1000,-5000
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<String>,
        /// what each point runs
        #[arg(long, default_value = "simulate", value_parser = ["simulate", "protocol"])]
        run: String,
    },
    /// List presets or print one as JSON
    Preset {
        #[arg(long)]
        list: bool,
        name: Option<String>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    vmax: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, conflicts_with = "simulated")]
    ideal: bool,
    #[arg(long)]
    simulated: bool,
    #[arg(long, conflicts_with = "coherent")]
    dephasing: bool,
    #[arg(long)]
    coherent: bool,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<(RunConfig, PathBuf)> {
        let mut c = match (&self.config, &self.preset) {
            (Some(p), _) => {
                let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_json(&s)?
            }
            (None, Some(n)) => RunConfig::preset(n)?,
            (None, None) => return Err(rsc_core::Error::Config("one of --config or --preset is required".into()).into()),
        };
        if let Some(v) = self.vmax {
            c.vmax = v;
        }
        if let Some(n) = self.steps {
            c.protocol_steps = n;
        }
        if self.ideal {
            c.raman_mode = RamanMode::Ideal;
        }
        if self.simulated {
            c.raman_mode = RamanMode::Simulated;
        }
        if self.dephasing {
            c.pumping = PumpingMode::Dephasing;
        }
        if self.coherent {
            c.pumping = PumpingMode::Coherent;
        }
        c.validate()?;
        let out = self.out.clone().or_else(|| c.output_dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(format!("out/{}", c.name)));
        Ok((c, out))
    }
}

fn write_atomic(path: &Path, data: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    fs::write(&tmp, data).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn vib_tag(v: VibState) -> String {
    format!("v{}_{}_{}", v.0[0], v.0[1], v.0[2])
}

fn outcome_summary(o: &PassageOutcome) -> Value {
    let r = &o.result;
    let count = |f: fn(&StateRole) -> bool| r.roles.iter().filter(|x| f(x)).count();
    json!({
        "base": o.base.0,
        "rabi_gamma": o.rabi,
        "omega_eff_gamma": o.omega_eff,
        "pi_time_inv_gamma": std::f64::consts::PI / o.omega_eff,
        "tau_inv_gamma": o.tau,
        "max_p_dest": o.max_dest,
        "max_p_leak": o.max_leak,
        "max_p_imperfection": o.max_imperfection,
        "max_norm_drift": r.max_norm_drift,
        "states": r.labels.len(),
        "destination_states": count(|x| matches!(x, StateRole::Destination(_))),
        "leak_states": count(|x| *x == StateRole::Leak),
        "imperfection_states": count(|x| *x == StateRole::Imperfection),
        "target_overlaps_xy_xz_yz": o.targets.as_ref().and_then(|t| t.overlaps().ok()),
        "target_weights": o.targets.as_ref().map(|t| t.weights),
        "target_frame_singular_values": o.targets.as_ref().and_then(|t| t.frame_singular_values().ok()),
        "schmidt_coefficients": o.schmidt.as_ref().map(|s| s.coefficients.clone()),
    })
}

fn simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.json"), format!("{}\n", cfg.to_json()).as_bytes())?;
    let spec = cfg.passage_spec()?;
    let mut bases = vec![spec.base];
    if cfg.envelope {
        bases.extend(cfg.variations()?);
    }
    let runs: Vec<anyhow::Result<(PassageOutcome, Value)>> = bases
        .par_iter()
        .map(|&v| {
            let p = Passage::new(&spec.with_base(v))?;
            let o = p.run()?;
            Ok((o, p.generator.to_json()))
        })
        .collect();
    let mut summaries = Vec::new();
    for (k, r) in runs.into_iter().enumerate() {
        let (o, gen) = r?;
        let tag = vib_tag(o.base);
        if o.tau.is_none() {
            warn!("{tag}: no interior minimum of P_base in the simulated window");
        }
        write_atomic(&out.join(format!("passage_{tag}.csv")), o.result.to_csv().as_bytes())?;
        if k == 0 {
            write_json(&out.join("generator.json"), &gen)?;
        }
        summaries.push(outcome_summary(&o));
    }
    write_json(&out.join("summary.json"), &json!({ "balanced": summaries[0], "variants": summaries[1..] }))?;
    info!("wrote {} passages to {}", summaries.len(), out.display());
    Ok(())
}

fn protocol(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.json"), format!("{}\n", cfg.to_json()).as_bytes())?;
    let (trap, th) = (cfg.trap()?, cfg.thermal()?);
    let tail = truncation_tail(cfg.vmax, &trap, &th);
    if tail > 1e-4 {
        warn!("thermal weight beyond vmax = {} is {tail:.3e}", cfg.vmax);
    }
    let run = run_protocol(&cfg.protocol_config(), &cfg.passage_spec()?, &th)?;
    write_json(&out.join("protocol.json"), &serde_json::to_value(&run)?)?;
    let last = run.steps.last().expect("step zero is always reported");
    info!("dark population after {} steps: {:.12}", last.step, last.dark_population);
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &Path, param: &str, values: &[String], verb: &str) -> anyhow::Result<()> {
    let points: Vec<(String, RunConfig)> = values
        .iter()
        .map(|s| {
            let v: Value = serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone()));
            Ok((format!("{param}={s}"), cfg.with_field(param, &v)?))
        })
        .collect::<anyhow::Result<_>>()?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.json"), format!("{}\n", cfg.to_json()).as_bytes())?;
    points.par_iter().map(|(dir, c)| if verb == "protocol" { protocol(c, &out.join(dir)) } else { simulate(c, &out.join(dir)) }).collect::<anyhow::Result<Vec<()>>>()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let (cfg, out) = c.resolve()?;
            simulate(&cfg, &out)
        }
        Command::Protocol(c) => {
            let (cfg, out) = c.resolve()?;
            protocol(&cfg, &out)
        }
        Command::Sweep { common, param, values, run } => {
            let (cfg, out) = common.resolve()?;
            sweep(&cfg, &out, &param, &values, &run)
        }
        Command::Preset { list, name } => {
            match (list, name) {
                (_, Some(n)) => println!("{}", RunConfig::preset(&n)?.to_json()),
                (true, None) => PRESETS.iter().for_each(|(n, d)| println!("{n:<10} {d}")),
                (false, None) => return Err(anyhow!(rsc_core::Error::Config("give a preset name or --list".into()))),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<rsc_core::Error>() {
                Some(c) if c.is_numerical() => ExitCode::from(3),
                Some(_) => ExitCode::from(2),
                None => ExitCode::from(1),
            }
        }
    }
}
