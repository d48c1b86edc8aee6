//! Subcommands. Each returns `Ok` or a [`CliError`] carrying its exit code.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use pixfas::em_model::{
    load_network, load_pattern_bundle, synth_dipole_translations, synth_pixel_surrogate, write_native_network,
    write_pattern_bundle, FrequencyGrid, MultiportNetwork,
};
use pixfas::impm::{ImpmError, SwitchModel};
use pixfas::numerics::{build_quadrature, QuadratureGrid};
use pixfas::oracle::{run_oracles, Fault, OracleLevel, SuiteReport};
use pixfas::pcdm::{
    average_error, compute_kernel, covariance_from_currents, target_covariance, CovarianceMatrix, PatternKernel,
    TargetCovariance,
};
use pixfas::search::{
    evaluate_state, evaluate_state_set, order_sets, random_matched_search, set_covariance, Design, DesignProblem,
    MatchedSet, MatchedState, PortState, SearchError, SetSummary, StateSet, Step1Params, Step1Stats,
};
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, RunConfig};
use crate::error::CliError;
use crate::report::{self, InputDigest, OutDir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "pixfas", version, about = "Pixel antenna state synthesis for fluid antenna systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a surrogate network and pattern bundle.
    Synth(SynthArgs),
    /// Step 1 only: random search for matched sets.
    Search(RunArgs),
    /// Step 2 only: order the matched sets of a previous `search`.
    Order {
        #[command(flatten)]
        args: RunArgs,
        /// `result.json` written by `search`.
        #[arg(long)]
        matched: PathBuf,
    },
    /// Both steps, with all report artifacts.
    Run(RunArgs),
    /// Score a user-supplied state table without searching.
    Eval(EvalArgs),
    /// Built-in self-check suites.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `search.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides `search.budget` (candidate draws).
    #[arg(long)]
    pub budget: Option<u64>,
    /// Overrides `search.target_matched_sets`.
    #[arg(long)]
    pub target_matched_sets: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub state_table: PathBuf,
    /// `result.json` of a run; supplies the switch positions and hardwire.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Fast,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    Kernel,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum, default_value = "fast")]
    pub level: LevelArg,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------- outputs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSetRecord {
    pub candidate: u64,
    pub switches: Vec<usize>,
    pub hardwire: String,
    pub members: Vec<MatchedState>,
}

/// `result.json` of `search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutput {
    pub command: String,
    pub no_solution: bool,
    pub seed: u64,
    pub ports: usize,
    pub switches: usize,
    pub frequencies_hz: Vec<f64>,
    pub stats: Step1Stats,
    pub matched_sets: Vec<MatchedSetRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub delta_e: f64,
    pub candidate: u64,
    /// Empty for the dipole model.
    pub switches: Vec<usize>,
    pub hardwire: String,
    pub matched_states: usize,
    pub ordering: Vec<usize>,
    pub ports: Vec<PortState>,
    /// Best `delta_e` after each GA generation.
    pub ga_trace: Vec<f64>,
}

/// `result.json` of `run` and `order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub command: String,
    pub no_solution: bool,
    pub model: ModelKind,
    pub seed: u64,
    pub ports: usize,
    pub aperture_wavelengths: f64,
    pub frequencies_hz: Vec<f64>,
    pub stats: Option<Step1Stats>,
    pub design: Option<DesignRecord>,
    pub sets: Vec<SetSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPort {
    pub fas_port: usize,
    pub state_code: u64,
    pub reflection_db: Vec<f64>,
    pub worst_reflection_db: Option<f64>,
    pub matched: bool,
}

/// `result.json` of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub command: String,
    pub delta_e: f64,
    pub all_matched: bool,
    pub ports: Vec<EvalPort>,
}

// ---------------------------------------------------------------- dispatch

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Search(a) => {
            set_threads(a.threads)?;
            cmd_search(&a)
        }
        Command::Order { args, matched } => {
            set_threads(args.threads)?;
            cmd_order(&args, &matched)
        }
        Command::Run(a) => {
            set_threads(a.threads)?;
            cmd_run(&a)
        }
        Command::Eval(a) => {
            set_threads(a.threads)?;
            cmd_eval(&a)
        }
        Command::Oracle(a) => {
            set_threads(a.threads)?;
            cmd_oracle(&a)
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- model

/// Everything the search needs that comes from the model.
pub struct Model {
    pub kind: ModelKind,
    /// `None` for the dipole model, which has no circuit.
    pub network: Option<MultiportNetwork>,
    pub kernel: PatternKernel,
    pub target: TargetCovariance,
    pub inputs: Vec<InputDigest>,
}

impl Model {
    pub fn frequencies(&self) -> Vec<f64> {
        self.kernel.frequencies().to_vec()
    }

    fn network(&self) -> Result<&MultiportNetwork, CliError> {
        self.network.as_ref().ok_or_else(|| CliError::Internal("model has no circuit".into()))
    }
}

fn quadrature(cfg: &RunConfig) -> Result<QuadratureGrid, CliError> {
    build_quadrature(cfg.pas.support, cfg.quadrature).map_err(|e| CliError::Config(format!("quadrature: {e}")))
}

fn frequency_grid(cfg: &RunConfig) -> Result<FrequencyGrid, CliError> {
    let f = &cfg.frequency;
    FrequencyGrid::uniform(f.f_lower_hz, f.f_upper_hz, f.samples).map_err(|e| CliError::Config(e.to_string()))
}

pub fn prepare_model(cfg: &RunConfig) -> Result<Model, CliError> {
    let target = target_covariance(cfg.array.ports, cfg.array.aperture_wavelengths)?;
    let pas = cfg.pas();
    match cfg.model.kind {
        ModelKind::Files => {
            let (npath, ppath) = match (&cfg.model.network, &cfg.model.patterns) {
                (Some(n), Some(p)) => (n, p),
                _ => return Err(CliError::Config("model.network and model.patterns are required".into())),
            };
            let net = load_network(npath)?;
            let pats = load_pattern_bundle(ppath)?;
            pats.check_compatible(&net)?;
            if pats.grid().support() != cfg.pas.support {
                return Err(CliError::Input(format!(
                    "pattern bundle is sampled on {} but pas.support is {}",
                    pats.grid().support().as_str(),
                    cfg.pas.support.as_str()
                )));
            }
            let wanted = frequency_grid(cfg)?;
            let net = net.select_frequencies(&net.frequencies().locate(&wanted)?)?;
            let pgrid = FrequencyGrid::from_samples(pats.frequencies().to_vec())?;
            let pats = pats.select_frequencies(&pgrid.locate(&wanted)?);
            let grid = pats.grid().clone();
            let kernel = compute_kernel(&pats, &pas, &grid)?;
            let mut inputs = report::digest_inputs(npath)?;
            inputs.extend(report::digest_inputs(ppath)?);
            Ok(Model { kind: ModelKind::Files, network: Some(net), kernel, target, inputs })
        }
        ModelKind::Surrogate => {
            let grid = quadrature(cfg)?;
            let s = &cfg.surrogate;
            let (net, pats) =
                synth_pixel_surrogate(s.internal_ports, &s.layout, s.seed, &s.coupling, &frequency_grid(cfg)?, &grid)?;
            let kernel = compute_kernel(&pats, &pas, &grid)?;
            Ok(Model { kind: ModelKind::Surrogate, network: Some(net), kernel, target, inputs: Vec::new() })
        }
        ModelKind::DipoleOracle => {
            let grid = quadrature(cfg)?;
            let pats = synth_dipole_translations(cfg.array.ports, cfg.array.aperture_wavelengths, &grid)?;
            let kernel = compute_kernel(&pats, &pas, &grid)?;
            Ok(Model { kind: ModelKind::DipoleOracle, network: None, kernel, target, inputs: Vec::new() })
        }
    }
}

/// Dipole states are the translated patterns themselves, so each state's
/// current vector is a unit vector and its state code is its dipole index.
fn dipole_covariance(kernel: &PatternKernel, codes: &[u64]) -> Result<Vec<CovarianceMatrix>, CliError> {
    let ports = kernel.ports();
    for &c in codes {
        if c as usize >= ports {
            return Err(CliError::Input(format!("dipole state code {c} out of range 0..{ports}")));
        }
    }
    let i = pixfas::numerics::ComplexMatrix::from_fn(ports, codes.len(), |p, s| {
        if p == codes[s] as usize {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(vec![covariance_from_currents(kernel, 0, &i)?])
}

fn dipole_set(model: &Model) -> Result<MatchedSet, CliError> {
    let codes: Vec<u64> = (0..model.kernel.ports() as u64).collect();
    let covariance = dipole_covariance(&model.kernel, &codes)?;
    let members = codes
        .iter()
        .map(|&c| MatchedState {
            state_code: c,
            reflection_db: Vec::new(),
            worst_reflection_db: f64::NEG_INFINITY,
            currents: Vec::new(),
        })
        .collect();
    Ok(MatchedSet {
        candidate: 0,
        parent: StateSet { switches: Vec::new(), hardwire: Vec::new() },
        members,
        covariance,
    })
}

struct Effective {
    cfg: RunConfig,
    config_bytes: Vec<u8>,
    step1: Step1Params,
}

fn load_effective(args: &RunArgs) -> Result<Effective, CliError> {
    let (mut cfg, config_bytes) = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.search.seed = s;
    }
    if let Some(b) = args.budget {
        cfg.search.budget = b;
    }
    if let Some(t) = args.target_matched_sets {
        cfg.search.target_matched_sets = t;
    }
    cfg.validate()?;
    let step1 = Step1Params {
        budget: cfg.search.budget,
        target_matched_sets: cfg.search.target_matched_sets,
        seed: cfg.search.seed,
    };
    Ok(Effective { cfg, config_bytes, step1 })
}

fn manifest(command: &str, config: &Path, eff: &Effective, threads: Option<usize>, inputs: Vec<InputDigest>) -> RunManifest {
    RunManifest {
        tool: "pixfas",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config_path: config.display().to_string(),
        config_sha256: report::sha256_hex(&eff.config_bytes),
        seed: eff.step1.seed,
        budget: eff.step1.budget,
        target_matched_sets: eff.step1.target_matched_sets,
        threads,
        created_unix_s: RunManifest::now_unix(),
        inputs,
    }
}

fn problem<'a>(
    cfg: &RunConfig,
    model: &'a Model,
    switch_model: &'a SwitchModel,
    switches: usize,
) -> Result<DesignProblem<'a>, CliError> {
    Ok(DesignProblem {
        network: model.network()?,
        kernel: &model.kernel,
        switch_model,
        switches,
        target: &model.target,
        z0_ohm: cfg.design.z0_ohm,
    })
}

// ---------------------------------------------------------------- synth

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let (cfg, bytes) = RunConfig::load(&args.config)?;
    let out = OutDir::open(&args.out)?;
    let grid = quadrature(&cfg)?;
    let s = &cfg.surrogate;
    let (net, pats) = synth_pixel_surrogate(s.internal_ports, &s.layout, s.seed, &s.coupling, &frequency_grid(&cfg)?, &grid)?;
    let npath = out.path().join("network.zmat");
    write_native_network(&net, &npath)?;
    let pdir = out.path().join("patterns");
    std::fs::create_dir_all(&pdir).map_err(|e| CliError::io(&pdir, e))?;
    write_pattern_bundle(&pats, &pdir)?;
    let mut inputs = report::digest_inputs(&npath)?;
    inputs.extend(report::digest_inputs(&pdir)?);
    let eff = Effective {
        step1: Step1Params { budget: cfg.search.budget, target_matched_sets: cfg.search.target_matched_sets, seed: s.seed },
        cfg,
        config_bytes: bytes,
    };
    // For synth the digests describe the files written, not read.
    out.write_json("manifest.json", &manifest("synth", &args.config, &eff, None, inputs))?;
    eprintln!("wrote {} and {}", npath.display(), pdir.display());
    Ok(())
}

// ---------------------------------------------------------------- search

fn cmd_search(args: &RunArgs) -> Result<(), CliError> {
    let eff = load_effective(args)?;
    let out = OutDir::open(&args.out)?;
    if eff.cfg.model.kind == ModelKind::DipoleOracle {
        return Err(CliError::Config("search needs a circuit model; the dipole model has no switches".into()));
    }
    let model = prepare_model(&eff.cfg)?;
    out.write_json("manifest.json", &manifest("search", &args.config, &eff, args.threads, model.inputs.clone()))?;
    let sm = eff.cfg.switch_model();
    let problem = problem(&eff.cfg, &model, &sm, eff.cfg.design.switches)?;
    let (sets, stats, err) = match random_matched_search(&problem, &eff.step1) {
        Ok((sets, stats)) => (sets, stats, None),
        Err(SearchError::Exhausted(stats)) => (Vec::new(), stats.clone(), Some(CliError::NoSolution(stats))),
        Err(e) => return Err(e.into()),
    };
    let result = SearchOutput {
        command: "search".into(),
        no_solution: sets.is_empty(),
        seed: eff.step1.seed,
        ports: eff.cfg.array.ports,
        switches: eff.cfg.design.switches,
        frequencies_hz: model.frequencies(),
        stats,
        matched_sets: sets
            .iter()
            .map(|s| MatchedSetRecord {
                candidate: s.candidate,
                switches: s.parent.switches.clone(),
                hardwire: s.parent.hardwire_string(),
                members: s.members.clone(),
            })
            .collect(),
    };
    out.write_json("result.json", &result)?;
    out.write("reflection.csv", &search_reflection_csv(&result))?;
    eprintln!("{}", result.stats);
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn search_reflection_csv(result: &SearchOutput) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("candidate,state_code,freq_hz,s11_db\n");
    for set in &result.matched_sets {
        for m in &set.members {
            for (f, db) in result.frequencies_hz.iter().zip(&m.reflection_db) {
                let _ = writeln!(s, "{},{},{},{}", set.candidate, m.state_code, f, db);
            }
        }
    }
    s
}

// ---------------------------------------------------------------- order / run

fn cmd_order(args: &RunArgs, matched: &Path) -> Result<(), CliError> {
    let mut eff = load_effective(args)?;
    let out = OutDir::open(&args.out)?;
    let text = std::fs::read_to_string(matched).map_err(|e| CliError::io(matched, e))?;
    let search: SearchOutput = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: not a search result: {e}", matched.display())))?;
    if args.seed.is_none() {
        eff.step1.seed = search.seed;
    }
    let model = prepare_model(&eff.cfg)?;
    let mut inputs = model.inputs.clone();
    inputs.extend(report::digest_inputs(matched)?);
    out.write_json("manifest.json", &manifest("order", &args.config, &eff, args.threads, inputs))?;
    if search.no_solution || search.matched_sets.is_empty() {
        return Err(CliError::NoSolution(search.stats));
    }
    let sm = eff.cfg.switch_model();
    let problem = problem(&eff.cfg, &model, &sm, eff.cfg.design.switches)?;
    let mut sets = Vec::with_capacity(search.matched_sets.len());
    for rec in &search.matched_sets {
        let set = StateSet::new(rec.switches.clone(), parse_hardwire(&rec.hardwire)?)?;
        let m = evaluate_state_set(&problem, rec.candidate, set)?.ok_or_else(|| {
            CliError::Input(format!("candidate {} is not a matched set under this configuration", rec.candidate))
        })?;
        let codes: Vec<u64> = m.members.iter().map(|s| s.state_code).collect();
        let want: Vec<u64> = rec.members.iter().map(|s| s.state_code).collect();
        if codes != want {
            return Err(CliError::Input(format!(
                "candidate {}: matched states {codes:?} differ from the search result {want:?}",
                rec.candidate
            )));
        }
        sets.push(m);
    }
    let (summaries, best) = order_sets(sets, &model.target, &eff.cfg.ga, eff.step1.seed)?;
    finish_run("order", &eff, &model, &out, Some(search.stats), summaries, best)
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let eff = load_effective(args)?;
    let out = OutDir::open(&args.out)?;
    let model = prepare_model(&eff.cfg)?;
    out.write_json("manifest.json", &manifest("run", &args.config, &eff, args.threads, model.inputs.clone()))?;
    if model.kind == ModelKind::DipoleOracle {
        let (summaries, best) = order_sets(vec![dipole_set(&model)?], &model.target, &eff.cfg.ga, eff.step1.seed)?;
        return finish_run("run", &eff, &model, &out, None, summaries, best);
    }
    let sm = eff.cfg.switch_model();
    let problem = problem(&eff.cfg, &model, &sm, eff.cfg.design.switches)?;
    let (sets, stats) = match random_matched_search(&problem, &eff.step1) {
        Ok(v) => v,
        Err(SearchError::Exhausted(stats)) => {
            return finish_run("run", &eff, &model, &out, Some(stats), Vec::new(), None);
        }
        Err(e) => return Err(e.into()),
    };
    let (summaries, best) = order_sets(sets, &model.target, &eff.cfg.ga, eff.step1.seed)?;
    finish_run("run", &eff, &model, &out, Some(stats), summaries, best)
}

fn finish_run(
    command: &str,
    eff: &Effective,
    model: &Model,
    out: &OutDir,
    stats: Option<Step1Stats>,
    sets: Vec<SetSummary>,
    best: Option<Design>,
) -> Result<(), CliError> {
    let design = best.as_ref().map(|d| DesignRecord {
        delta_e: d.delta_e,
        candidate: d.set.candidate,
        switches: d.set.parent.switches.clone(),
        hardwire: d.set.parent.hardwire_string(),
        matched_states: d.set.m(),
        ordering: d.ordering.as_slice().to_vec(),
        ports: d.port_states(),
        ga_trace: d.trace.clone(),
    });
    let result = RunOutput {
        command: command.into(),
        no_solution: best.is_none(),
        model: model.kind,
        seed: eff.step1.seed,
        ports: eff.cfg.array.ports,
        aperture_wavelengths: eff.cfg.array.aperture_wavelengths,
        frequencies_hz: model.frequencies(),
        stats: stats.clone(),
        design,
        sets,
    };
    out.write_json("result.json", &result)?;
    let Some(best) = best else {
        let stats = stats.unwrap_or_default();
        eprintln!("no matched set: {stats}");
        return Err(CliError::NoSolution(stats));
    };
    let rho = best.ordered_covariance();
    let ports = best.port_states();
    write_covariance_artifacts(out, &rho, &model.target)?;
    out.write("reflection.csv", &report::reflection_csv(&ports, &model.frequencies()))?;
    out.write("state_table.csv", &report::state_table_csv(&best.set.parent.switches, &ports))?;
    eprintln!("delta_e = {:.6e} over {} matched sets", best.delta_e, result.sets.len());
    println!("{}", best.delta_e);
    Ok(())
}

fn write_covariance_artifacts(out: &OutDir, rho: &[CovarianceMatrix], target: &TargetCovariance) -> Result<(), CliError> {
    out.write("covariance_sim.csv", &report::covariance_csv(rho))?;
    out.write("covariance_target.csv", &report::target_csv(target))?;
    out.write("covariance_abs_error.csv", &report::abs_error_csv(rho, target))
}

pub fn parse_hardwire(s: &str) -> Result<Vec<bool>, CliError> {
    s.chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            _ => Err(CliError::Input(format!("hardwire string may only contain 0 and 1, found `{c}`"))),
        })
        .collect()
}

// ---------------------------------------------------------------- eval

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let (cfg, _) = RunConfig::load(&args.config)?;
    let out = args.out.as_deref().map(OutDir::open).transpose()?;
    let text = std::fs::read_to_string(&args.state_table).map_err(|e| CliError::io(&args.state_table, e))?;
    let (positions, rows) = report::parse_state_table(&text)?;
    let n = cfg.array.ports;
    let ports: Vec<usize> = rows.iter().map(|r| r.0).collect();
    if ports != (1..=n).collect::<Vec<_>>() {
        return Err(CliError::Input(format!("state table must list FAS ports 1..{n} once each, found {ports:?}")));
    }
    let model = prepare_model(&cfg)?;
    let identity: Vec<usize> = (1..=n).collect();

    let (rho, eval_ports, switches) = if model.kind == ModelKind::DipoleOracle {
        if let Some(p) = positions.first() {
            return Err(CliError::Input(format!("switch_q{p}: the dipole model has no switches")));
        }
        let codes: Vec<u64> = rows.iter().map(|r| r.1).collect();
        let rho = dipole_covariance(&model.kernel, &codes)?;
        let eval_ports: Vec<EvalPort> = rows
            .iter()
            .map(|r| EvalPort { fas_port: r.0, state_code: r.1, reflection_db: Vec::new(), worst_reflection_db: None, matched: true })
            .collect();
        (rho, eval_ports, Vec::new())
    } else {
        let set = resolve_state_set(&cfg, args.design.as_deref())?;
        let q = model.network()?.internal_ports();
        if set.hardwire.len() != q {
            return Err(CliError::Input(format!("hardwire has {} bits, the network has {q} internal ports", set.hardwire.len())));
        }
        let column = column_map(&positions, &set.switches)?;
        let sm = cfg.switch_model();
        let problem = problem(&cfg, &model, &sm, set.switches.len())?;
        problem.validate()?;
        let mut members = Vec::with_capacity(n);
        for (port, code, bits) in &rows {
            let derived = column.iter().enumerate().fold(0u64, |acc, (k, &c)| acc | (u64::from(bits[c]) << k));
            if derived != *code {
                return Err(CliError::Input(format!(
                    "FAS port {port}: state_code {code} disagrees with its switch columns (code {derived})"
                )));
            }
            let state = evaluate_state(&problem, &set.state(*code)).map_err(|e| match e {
                ImpmError::Singular { .. } | ImpmError::NonPhysical(_) => {
                    CliError::Numeric(format!("FAS port {port}: {e}"))
                }
                e => e.into(),
            })?;
            members.push(state);
        }
        let rho = set_covariance(&model.kernel, &members)?;
        let eval_ports: Vec<EvalPort> = rows
            .iter()
            .zip(&members)
            .map(|((port, code, _), m)| EvalPort {
                fas_port: *port,
                state_code: *code,
                reflection_db: m.reflection_db.clone(),
                worst_reflection_db: Some(m.worst_reflection_db),
                matched: m.worst_reflection_db < pixfas::search::MATCH_THRESHOLD_DB,
            })
            .collect();
        (rho, eval_ports, set.switches)
    };
    let delta_e = average_error(&rho, &model.target, &identity)?;
    let result = EvalOutput {
        command: "eval".into(),
        delta_e,
        all_matched: eval_ports.iter().all(|p| p.matched),
        ports: eval_ports,
    };
    if let Some(out) = &out {
        out.write_json("result.json", &result)?;
        write_covariance_artifacts(out, &rho, &model.target)?;
        let ps: Vec<PortState> = result
            .ports
            .iter()
            .map(|p| PortState {
                fas_port: p.fas_port,
                member: p.fas_port,
                state_code: p.state_code,
                switch_bits: (0..switches.len()).map(|k| (p.state_code >> k) & 1 == 1).collect(),
                reflection_db: p.reflection_db.clone(),
            })
            .collect::<Vec<_>>();
        out.write("reflection.csv", &report::reflection_csv(&ps, &model.frequencies()))?;
    }
    if !result.all_matched {
        eprintln!("warning: some states are not matched (S11 >= -10 dB)");
    }
    println!("{delta_e}");
    Ok(())
}

/// Maps each switch (ascending) to its column in the table's bit list.
fn column_map(positions: &[usize], switches: &[usize]) -> Result<Vec<usize>, CliError> {
    for (k, p) in positions.iter().enumerate() {
        if !switches.contains(p) {
            return Err(CliError::Input(format!("column switch_q{p} names port {p}, which carries no switch (S = {switches:?})")));
        }
        if positions[..k].contains(p) {
            return Err(CliError::Input(format!("column switch_q{p} appears twice")));
        }
    }
    switches
        .iter()
        .map(|s| {
            positions
                .iter()
                .position(|p| p == s)
                .ok_or_else(|| CliError::Input(format!("state table has no column for switch_q{s}")))
        })
        .collect()
}

fn resolve_state_set(cfg: &RunConfig, design: Option<&Path>) -> Result<StateSet, CliError> {
    let (switches, hardwire) = match design {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let run: RunOutput = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: not a run result: {e}", path.display())))?;
            let d = run
                .design
                .ok_or_else(|| CliError::Input(format!("{}: run has no design", path.display())))?;
            (d.switches, d.hardwire)
        }
        None => match (&cfg.design.switch_positions, &cfg.design.hardwire) {
            (Some(s), Some(h)) => (s.clone(), h.clone()),
            _ => {
                return Err(CliError::Config(
                    "eval needs --design or both design.switch_positions and design.hardwire".into(),
                ))
            }
        },
    };
    Ok(StateSet::new(switches, parse_hardwire(&hardwire)?)?)
}

// ---------------------------------------------------------------- oracle

fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let level = match args.level {
        LevelArg::Fast => OracleLevel::Fast,
        LevelArg::Full => OracleLevel::Full,
    };
    let fault = args.inject_fault.map(|FaultArg::Kernel| Fault::Kernel);
    let out = args.out.as_deref().map(OutDir::open).transpose()?;
    let reports: Vec<SuiteReport> = run_oracles(level, fault);
    for r in &reports {
        eprintln!(
            "{:<8} {}  measured {:.3e}  tolerance {:.1e}  cases {}  {:.2}s",
            r.suite,
            if r.passed { "PASS" } else { "FAIL" },
            r.measured,
            r.tolerance,
            r.cases,
            r.elapsed_s
        );
    }
    let json = serde_json::to_string_pretty(&reports).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{json}");
    if let Some(out) = &out {
        out.write_json("oracle.json", &reports)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.suite.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Oracle(format!("failed suites: {}", failed.join(", "))))
    }
}
