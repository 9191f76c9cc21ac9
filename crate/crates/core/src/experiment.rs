//! Experiment definitions, configuration files and the run driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::engine::{run, EngineLimits, EpochReport};
use crate::error::{Error, Result};
use crate::initial::{seed_ensemble, EntangledDensity, EntangledParams, TwoPacketDensity, TwoPacketParams, PhaseSpaceDensity};
use crate::kernel::{build_table, ConstantPotential, GaussianBarrier, KernelOptions, Potential, ZeroPotential};
use crate::noise::DissipationParams;
use crate::observables::{
    metric_log_write, snapshot_write, BodySelection, MetricRow, PartnerFilter, ReduceOptions,
};
use crate::phase_space::Counters;

/// Built-in experiments, in listing order.
pub const PRESETS: &[&str] = &["fig1_ballistic", "fig2", "fig3", "fig5", "fig6", "fig7"];

/// Default ensemble size of a run.
pub const DEFAULT_PARTICLES: usize = 500_000;

/// Ensemble size of `fig1_ballistic`. Seeding rounds every cell to whole
/// particles, and the reduced distribution of the entangled state sums
/// cells of both signs, so its histogram needs a larger ensemble.
pub const BALLISTIC_PARTICLES: usize = 12_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    /// Entangled two-body state; `sigma_ent_p` inside `params` is replaced
    /// by `sigma_ent_p_steps` wavenumber steps of the run's lattice.
    Entangled {
        params: EntangledParams,
        sigma_ent_p_steps: f64,
        /// Keep `params.c` instead of normalizing on the grid.
        explicit_c: bool,
    },
    TwoPacket(TwoPacketParams),
}

impl InitialSpec {
    pub fn entangled(sigma_ent_x: f64, sigma_ent_p_steps: f64) -> Self {
        let params = EntangledParams::experiment(sigma_ent_x, sigma_ent_p_steps, &SimConfig::default());
        InitialSpec::Entangled { params, sigma_ent_p_steps, explicit_c: false }
    }

    pub fn two_packet() -> Self {
        InitialSpec::TwoPacket(TwoPacketParams { x0: 10.0, p0: 0.5, sigma: 2.0, center: 25.0 })
    }

    /// Density on the lattice of `cfg`.
    pub fn density(&self, cfg: &SimConfig) -> Box<dyn PhaseSpaceDensity> {
        match *self {
            InitialSpec::Entangled { params, sigma_ent_p_steps, explicit_c } => {
                let p = EntangledParams { sigma_ent_p: sigma_ent_p_steps * cfg.wavenumber_step(), ..params };
                Box::new(EntangledDensity(if explicit_c { p } else { p.normalized(cfg) }))
            }
            InitialSpec::TwoPacket(p) => Box::new(TwoPacketDensity(p)),
        }
    }

    fn n_bodies(&self) -> usize {
        match self {
            InitialSpec::Entangled { .. } => 2,
            InitialSpec::TwoPacket(_) => 1,
        }
    }

    fn violations(&self) -> Vec<String> {
        match self {
            InitialSpec::Entangled { params, sigma_ent_p_steps, .. } => {
                let mut p = *params;
                p.sigma_ent_p = *sigma_ent_p_steps;
                p.violations()
            }
            InitialSpec::TwoPacket(p) => p.violations(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    Constant { value: f64 },
    GaussianBarrier { height: f64, center: f64, width: f64 },
}

impl PotentialSpec {
    pub fn build(&self) -> Arc<dyn Potential> {
        match *self {
            PotentialSpec::Zero => Arc::new(ZeroPotential),
            PotentialSpec::Constant { value } => Arc::new(ConstantPotential(value)),
            PotentialSpec::GaussianBarrier { height, center, width } => {
                Arc::new(GaussianBarrier { height, center, width })
            }
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub name: String,
    pub sim: SimConfig,
    pub initial: InitialSpec,
    pub potential: PotentialSpec,
    /// Target ensemble size at seeding.
    pub particles: usize,
    /// Times at which the reduced distribution is written [fs].
    pub snapshot_times: Vec<f64>,
    pub reduce: ReduceOptions,
    /// Column of the amplitude metric [nm].
    pub x_mid: f64,
    pub limits: EngineLimits,
    pub kernel: KernelOptions,
}

impl Experiment {
    /// Built-in experiment by name.
    pub fn preset(name: &str) -> Option<Experiment> {
        let (noise, sx, sp, times, t_final) = match name {
            "fig1_ballistic" => (DissipationParams::disabled(), 2.5, 1.5, vec![0.0, 1.0, 2.0, 3.0], 3.0),
            "fig2" => (DissipationParams::strong(), 2.5, 1.5, vec![0.1, 0.2, 0.5, 1.0], 1.0),
            "fig3" => (DissipationParams::weak(), 2.5, 1.5, vec![0.1, 0.2, 0.5, 1.0], 1.0),
            "fig5" => (DissipationParams::weak(), 2.5, 0.5, vec![0.1, 0.2, 0.5, 1.0], 1.0),
            "fig6" => (DissipationParams::weak(), 3.5, 1.5, vec![0.1, 0.2, 0.5, 1.0], 1.0),
            "fig7" => (DissipationParams::weak(), 3.5, 0.5, vec![0.1, 0.2, 0.5, 1.0], 1.0),
            _ => return None,
        };
        Some(Experiment {
            name: name.to_string(),
            sim: SimConfig { t_final, dissipation: noise, ..SimConfig::default() },
            initial: InitialSpec::entangled(sx, sp),
            potential: PotentialSpec::Zero,
            particles: if name == "fig1_ballistic" { BALLISTIC_PARTICLES } else { DEFAULT_PARTICLES },
            snapshot_times: times,
            reduce: ReduceOptions::default(),
            x_mid: 25.0,
            limits: EngineLimits::default(),
            kernel: KernelOptions::default(),
        })
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.sim.violations();
        if self.name.trim().is_empty() {
            out.push("name must not be empty".into());
        }
        if self.particles == 0 {
            out.push("particles must be at least 1".into());
        }
        if self.initial.n_bodies() != self.sim.n_bodies {
            out.push(format!(
                "initial condition describes {} bodies but n_bodies = {}",
                self.initial.n_bodies(),
                self.sim.n_bodies
            ));
        }
        out.extend(self.initial.violations());
        if self.snapshot_times.windows(2).any(|w| !(w[0] < w[1])) {
            out.push("snapshot_times must be strictly increasing".into());
        }
        for &t in &self.snapshot_times {
            if !(t >= 0.0 && t <= self.sim.t_final + 1e-12) {
                out.push(format!("snapshot time {t} lies outside [0, t_final = {}]", self.sim.t_final));
            } else if self.sim.dt_obs > 0.0 && !self.sim.is_epoch_multiple(t) {
                out.push(format!("snapshot time {t} is not a multiple of dt_obs = {}", self.sim.dt_obs));
            }
        }
        if !(0.0..=self.sim.domain_length).contains(&self.x_mid) || self.x_mid == self.sim.domain_length {
            out.push(format!("x_mid = {} lies outside the domain", self.x_mid));
        }
        if let PotentialSpec::GaussianBarrier { width, .. } = self.potential {
            if !(width > 0.0) {
                out.push(format!("potential.width = {width} must be positive"));
            }
        }
        if self.limits.max_descendants == 0 || self.limits.particle_cap == 0 {
            out.push("engine limits must be positive".into());
        }
        let k = &self.kernel;
        if k.points_per_cell == 0 || !(k.abs_tol > 0.0) || !(k.rel_tol > 0.0) {
            out.push("kernel options must be positive".into());
        }
        out
    }

    /// Snapshot file name for time `t`.
    pub fn snapshot_name(t: f64) -> String {
        format!("snapshot_t{t:.3}fs.txt")
    }
}

/// Configuration file: an optional preset overridden key by key.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    name: Option<String>,
    particles: Option<usize>,
    snapshot_times: Option<Vec<f64>>,
    x_mid: Option<f64>,
    seed: Option<u64>,
    n_bodies: Option<usize>,
    dim: Option<usize>,
    domain_length: Option<f64>,
    spatial_cell: Option<f64>,
    coherence_length: Option<f64>,
    m_max: Option<i32>,
    mass: Option<f64>,
    hbar: Option<f64>,
    dt_obs: Option<f64>,
    t_final: Option<f64>,
    /// Checked against `hbar·π/coherence_length`, never used directly.
    momentum_step: Option<f64>,
    #[serde(default)]
    dissipation: DissipationFile,
    initial: Option<InitialFile>,
    potential: Option<PotentialSpec>,
    #[serde(default)]
    reduce: ReduceFile,
    engine: Option<EngineLimits>,
    kernel: Option<KernelOptions>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DissipationFile {
    preset: Option<String>,
    r_prob: Option<f64>,
    r_pct: Option<f64>,
    enabled: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialFile {
    kind: Option<String>,
    x1_0: Option<f64>,
    x2_0: Option<f64>,
    p1_0: Option<f64>,
    p2_0: Option<f64>,
    sigma1_x: Option<f64>,
    sigma2_x: Option<f64>,
    sigma1_p: Option<f64>,
    sigma2_p: Option<f64>,
    sigma0: Option<f64>,
    sigma_ent_x: Option<f64>,
    /// In wavenumber steps.
    sigma_ent_p: Option<f64>,
    c: Option<f64>,
    x0: Option<f64>,
    p0: Option<f64>,
    sigma: Option<f64>,
    center: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReduceFile {
    body: Option<toml::Value>,
    partner: Option<PartnerFilter>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Parses a TOML configuration. Returns the experiment together with the
/// problems found while applying it (unknown presets and the like); invariant
/// checks are left to [`Experiment::violations`].
pub fn parse_config(text: &str, path: &Path) -> Result<(Experiment, Vec<String>)> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Format {
        what: "configuration",
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut problems = Vec::new();
    let base = file.preset.as_deref().unwrap_or("fig1_ballistic");
    let mut exp = Experiment::preset(base).unwrap_or_else(|| {
        problems.push(format!("unknown preset `{base}`"));
        Experiment::preset("fig1_ballistic").expect("built-in preset")
    });
    if file.preset.is_none() {
        exp.name = "custom".into();
    }

    set(&mut exp.name, file.name);
    set(&mut exp.particles, file.particles);
    set(&mut exp.snapshot_times, file.snapshot_times);
    set(&mut exp.x_mid, file.x_mid);
    let s = &mut exp.sim;
    set(&mut s.seed, file.seed);
    set(&mut s.n_bodies, file.n_bodies);
    set(&mut s.dim, file.dim);
    set(&mut s.domain_length, file.domain_length);
    set(&mut s.spatial_cell, file.spatial_cell);
    set(&mut s.coherence_length, file.coherence_length);
    set(&mut s.m_max, file.m_max);
    set(&mut s.mass, file.mass);
    set(&mut s.hbar, file.hbar);
    set(&mut s.dt_obs, file.dt_obs);
    set(&mut s.t_final, file.t_final);
    if let Some(dp) = file.momentum_step {
        problems.extend(s.check_momentum_step(dp));
    }

    let d = file.dissipation;
    if let Some(name) = &d.preset {
        match DissipationParams::preset(name) {
            Some(p) => s.dissipation = p,
            None => problems.push(format!("unknown dissipation preset `{name}`")),
        }
    }
    if d.r_prob.is_some() || d.r_pct.is_some() {
        s.dissipation.enabled = true;
    }
    set(&mut s.dissipation.r_prob, d.r_prob);
    set(&mut s.dissipation.r_pct, d.r_pct);
    set(&mut s.dissipation.enabled, d.enabled);

    if let Some(init) = file.initial {
        apply_initial(&mut exp.initial, init, &mut problems);
    }
    set(&mut exp.potential, file.potential);
    set(&mut exp.limits, file.engine);
    set(&mut exp.kernel, file.kernel);
    set(&mut exp.reduce.partner, file.reduce.partner);
    if let Some(body) = file.reduce.body {
        match parse_body(&body) {
            Some(b) => exp.reduce.body = b,
            None => problems.push(format!("reduce.body = {body} must be 1, 2 or \"both\"")),
        }
    }
    Ok((exp, problems))
}

fn parse_body(v: &toml::Value) -> Option<BodySelection> {
    match v {
        toml::Value::Integer(1) => Some(BodySelection::One),
        toml::Value::Integer(2) => Some(BodySelection::Two),
        toml::Value::String(s) => match s.as_str() {
            "1" => Some(BodySelection::One),
            "2" => Some(BodySelection::Two),
            "both" => Some(BodySelection::Both),
            _ => None,
        },
        _ => None,
    }
}

fn apply_initial(spec: &mut InitialSpec, f: InitialFile, problems: &mut Vec<String>) {
    match f.kind.as_deref() {
        None => {}
        Some("entangled") => {
            if !matches!(spec, InitialSpec::Entangled { .. }) {
                *spec = InitialSpec::entangled(2.5, 1.5);
            }
        }
        Some("two_packet") => {
            if !matches!(spec, InitialSpec::TwoPacket(_)) {
                *spec = InitialSpec::two_packet();
            }
        }
        Some(other) => {
            problems.push(format!("unknown initial.kind `{other}` (entangled or two_packet)"));
            return;
        }
    }
    match spec {
        InitialSpec::Entangled { params: q, sigma_ent_p_steps, explicit_c } => {
            set(&mut q.x1_0, f.x1_0);
            set(&mut q.x2_0, f.x2_0);
            set(&mut q.p1_0, f.p1_0);
            set(&mut q.p2_0, f.p2_0);
            set(&mut q.sigma1_x, f.sigma1_x);
            set(&mut q.sigma2_x, f.sigma2_x);
            set(&mut q.sigma1_p, f.sigma1_p);
            set(&mut q.sigma2_p, f.sigma2_p);
            set(&mut q.sigma0, f.sigma0);
            set(&mut q.sigma_ent_x, f.sigma_ent_x);
            set(sigma_ent_p_steps, f.sigma_ent_p);
            if let Some(c) = f.c {
                q.c = c;
                *explicit_c = true;
            }
            for (key, v) in [("x0", f.x0), ("p0", f.p0), ("sigma", f.sigma), ("center", f.center)] {
                if v.is_some() {
                    problems.push(format!("initial.{key} does not apply to the entangled state"));
                }
            }
        }
        InitialSpec::TwoPacket(q) => {
            set(&mut q.x0, f.x0);
            set(&mut q.p0, f.p0);
            set(&mut q.sigma, f.sigma);
            set(&mut q.center, f.center);
            let entangled_keys = [
                f.x1_0, f.x2_0, f.p1_0, f.p2_0, f.sigma1_x, f.sigma2_x, f.sigma1_p, f.sigma2_p,
                f.sigma0, f.sigma_ent_x, f.sigma_ent_p, f.c,
            ];
            if entangled_keys.iter().any(Option::is_some) {
                problems.push("entangled-state keys do not apply to the two-packet state".into());
            }
        }
    }
}

/// Reads and checks a configuration file. An empty list means it is valid.
pub fn validate_config(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (exp, mut problems) = parse_config(&text, path)?;
    problems.extend(exp.violations());
    Ok(problems)
}

/// Loads a preset by name, or else a configuration file at that path.
pub fn load(target: &str) -> Result<Experiment> {
    if let Some(exp) = Experiment::preset(target) {
        return Ok(exp);
    }
    let path = Path::new(target);
    if !path.is_file() {
        return Err(Error::Config(vec![format!(
            "`{target}` is neither a preset ({}) nor a readable file",
            PRESETS.join(", ")
        )]));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (exp, problems) = parse_config(&text, path)?;
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    Ok(exp)
}

/// Machine-readable summary written as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: Experiment,
    pub particles_seeded: usize,
    /// Signed integral of the seeding density.
    pub normalization: f64,
    pub nu0: f64,
    pub counters: Counters,
    pub epochs: Vec<EpochReport>,
    /// Set when the run stopped early.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: Vec<MetricRow>,
    pub snapshots: Vec<PathBuf>,
    pub report: RunReport,
}

impl RunSummary {
    /// Negativity at the epoch closest to `t`.
    pub fn nu_at(&self, t: f64) -> Option<f64> {
        self.metrics
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .map(|r| r.nu)
    }
}

/// Output file names inside the run directory.
pub const METRICS_FILE: &str = "metrics.log";
pub const REPORT_FILE: &str = "report.json";

/// Seeds, evolves and measures one experiment, writing snapshots, the metric
/// log and the run report into `out_dir`.
///
/// `progress` sees every epoch report. On an engine error the partial metric
/// log and report are still written before the error is returned.
pub fn run_experiment(
    exp: &Experiment,
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochReport),
) -> Result<RunSummary> {
    let problems = exp.violations();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg = &exp.sim;

    let density = exp.initial.density(cfg);
    let ensemble = seed_ensemble(density.as_ref(), exp.particles, cfg)?;
    let particles_seeded = ensemble.len();
    let normalization = ensemble.normalization;
    let table = build_table(exp.potential.build(), cfg, &exp.kernel)?;

    let snapshot_epochs: Vec<u64> = exp.snapshot_times.iter().map(|&t| cfg.epochs_until(t)).collect();
    let mut snapshots = Vec::new();
    let mut metrics = Vec::new();
    let mut observe = |e: &crate::phase_space::Ensemble, epoch: u64| -> Result<()> {
        let (row, r) = MetricRow::measure(e, cfg, &exp.reduce, exp.x_mid)?;
        metrics.push(row);
        if snapshot_epochs.contains(&epoch) {
            let path = out_dir.join(Experiment::snapshot_name(cfg.epoch_time(epoch)));
            snapshot_write(&r, &path)?;
            snapshots.push(path);
        }
        Ok(())
    };
    observe(&ensemble, 0)?;

    let mut epochs = Vec::new();
    let outcome = run(ensemble, cfg, &table, &exp.limits, &mut |e, report| {
        progress(report);
        epochs.push(report.clone());
        observe(e, report.epoch + 1)
    });

    let nu0 = metrics.first().map_or(0.0, |m| m.nu);
    let (counters, aborted) = match &outcome {
        Ok((e, _)) => (e.counters, None),
        Err(err) => (Counters::default(), Some(err.to_string())),
    };
    let report = RunReport {
        experiment: exp.clone(),
        particles_seeded,
        normalization,
        nu0,
        counters,
        epochs,
        aborted,
    };
    metric_log_write(&metrics, &out_dir.join(METRICS_FILE))?;
    let report_path = out_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&report_path, json + "\n").map_err(|e| Error::io(&report_path, e))?;
    outcome?;
    Ok(RunSummary { metrics, snapshots, report })
}
