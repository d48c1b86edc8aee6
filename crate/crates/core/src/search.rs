//! Two-step design search.
//!
//! Step 1 draws random switch sets and hardwire vectors and keeps those whose
//! matched states (worst reflection below -10 dB over the band) number at
//! least `N`. Step 2 picks and orders `N` of the `M` matched states with a
//! genetic algorithm over chromosomes decoded into duplicate-free orderings.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em_model::{FrequencyGrid, MultiportNetwork};
use crate::impm::{build_load_map, reflection_coefficient, solve_state, ImpmError, PixelConfiguration, SwitchModel};
use crate::pcdm::{average_error_unchecked, covariance_from_currents, CovarianceMatrix, PatternKernel, PcdmError, TargetCovariance};
use crate::numerics::ComplexMatrix;

/// Matched-state threshold in dB.
pub const MATCH_THRESHOLD_DB: f64 = -10.0;
/// Default cap on orderings enumerated by [`brute_force_order`].
pub const BRUTE_FORCE_CAP: u64 = 10_000_000;

const STREAM_STEP1: u64 = 1;
const STREAM_GA: u64 = 2;
const STEP1_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("ordering needs N = {n} states but only M = {m} are available")]
    TooFewStates { m: usize, n: usize },
    #[error("brute force would enumerate {count} orderings, above the cap of {cap}")]
    CapExceeded { count: u128, cap: u64 },
    #[error("no matched set found: {0}")]
    Exhausted(Step1Stats),
    #[error(transparent)]
    Impm(#[from] ImpmError),
    #[error(transparent)]
    Pcdm(#[from] PcdmError),
}

// ---------------------------------------------------------------- seeding

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based sub-seed for task `index` of `stream`.
pub fn sub_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

pub fn task_rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(master, stream, index))
}

// ---------------------------------------------------------------- orderings

/// 1-based, duplicate-free selection of `N` states out of `M`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortOrdering(Vec<usize>);

impl PortOrdering {
    pub fn new(d: Vec<usize>, m: usize) -> Result<Self, SearchError> {
        crate::pcdm::check_ordering(&d, m)?;
        Ok(Self(d))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maps a chromosome (entries `>= 1`, repeats allowed) to an ordering:
/// `H = [1..M]`; for each gene `j = ((b - 1) mod |H|) + 1`, emit `H[j]` and
/// delete it from `H`.
pub fn decode(b: &[usize], m: usize) -> Result<PortOrdering, SearchError> {
    let n = b.len();
    if n > m {
        return Err(SearchError::TooFewStates { m, n });
    }
    let mut h: Vec<usize> = (1..=m).collect();
    let mut d = Vec::with_capacity(n);
    for &gene in b {
        if gene == 0 {
            return Err(SearchError::Invalid("chromosome genes start at 1".into()));
        }
        let j = (gene - 1) % h.len();
        d.push(h.remove(j));
    }
    Ok(PortOrdering(d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaParams {
    pub max_generations: usize,
    pub population_size: usize,
    pub crossover_probability: f64,
    pub mutation_probability: f64,
    pub elitism: usize,
    pub tournament_size: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            max_generations: 200,
            population_size: 600,
            crossover_probability: 0.8,
            mutation_probability: 0.1,
            elitism: 2,
            tournament_size: 4,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), SearchError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.crossover_probability) || !prob(self.mutation_probability) {
            return Err(SearchError::Invalid("GA probabilities must lie in [0, 1]".into()));
        }
        if self.max_generations == 0 || self.population_size < 2 || self.tournament_size == 0 {
            return Err(SearchError::Invalid("GA generations, population and tournament size must be positive".into()));
        }
        if self.elitism > self.population_size {
            return Err(SearchError::Invalid("elitism exceeds the population size".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderOutcome {
    pub ordering: PortOrdering,
    pub delta_e: f64,
    /// Best-ever objective after each generation (GA only).
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Genetic search over chromosomes in `{1..M}^N`.
pub fn ga_order<F>(m: usize, n: usize, objective: F, params: &GaParams, seed: u64) -> Result<OrderOutcome, SearchError>
where
    F: Fn(&[usize]) -> f64,
{
    params.validate()?;
    if n > m || n == 0 {
        return Err(SearchError::TooFewStates { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut fitness_of = |b: &[usize]| -> (Vec<usize>, f64) {
        let d = decode(b, m).expect("genes in range").0;
        if let Some(&f) = cache.get(&d) {
            return (d, f);
        }
        let f = objective(&d);
        cache.insert(d.clone(), f);
        (d, f)
    };

    let pop_size = params.population_size;
    let mut pop: Vec<Vec<usize>> = (0..pop_size).map(|_| (0..n).map(|_| rng.gen_range(1..=m)).collect()).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut trace = Vec::with_capacity(params.max_generations);

    for gen in 0..params.max_generations {
        let scored: Vec<f64> = pop
            .iter()
            .map(|b| {
                let (d, f) = fitness_of(b);
                if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                    best = Some((d, f));
                }
                f
            })
            .collect();
        trace.push(best.as_ref().unwrap().1);
        if gen + 1 == params.max_generations {
            break;
        }

        let mut rank: Vec<usize> = (0..pop_size).collect();
        rank.sort_by(|&a, &b| scored[a].total_cmp(&scored[b]).then(a.cmp(&b)));
        let mut next: Vec<Vec<usize>> = rank[..params.elitism].iter().map(|&i| pop[i].clone()).collect();

        let tournament = |rng: &mut ChaCha8Rng| -> usize {
            let mut win = rng.gen_range(0..pop_size);
            for _ in 1..params.tournament_size {
                let c = rng.gen_range(0..pop_size);
                if scored[c] < scored[win] || (scored[c] == scored[win] && c < win) {
                    win = c;
                }
            }
            win
        };
        while next.len() < pop_size {
            let mut a = pop[tournament(&mut rng)].clone();
            let mut b = pop[tournament(&mut rng)].clone();
            if rng.gen::<f64>() < params.crossover_probability {
                for g in 0..n {
                    if rng.gen::<f64>() < 0.5 {
                        std::mem::swap(&mut a[g], &mut b[g]);
                    }
                }
            }
            for child in [&mut a, &mut b] {
                for g in child.iter_mut() {
                    if rng.gen::<f64>() < params.mutation_probability {
                        *g = rng.gen_range(1..=m);
                    }
                }
            }
            next.push(a);
            if next.len() < pop_size {
                next.push(b);
            }
        }
        pop = next;
    }

    let (d, delta_e) = best.unwrap();
    Ok(OrderOutcome { ordering: PortOrdering(d), delta_e, trace, evaluations: cache.len() })
}

fn permutation_count(m: usize, n: usize) -> u128 {
    (0..n).map(|i| (m - i) as u128).product()
}

/// Exhaustive minimum over all `M! / (M-N)!` orderings, enumerated
/// lexicographically; the first minimum found wins ties.
pub fn brute_force_order<F>(m: usize, n: usize, objective: F, cap: u64) -> Result<OrderOutcome, SearchError>
where
    F: Fn(&[usize]) -> f64,
{
    if n > m || n == 0 {
        return Err(SearchError::TooFewStates { m, n });
    }
    let count = permutation_count(m, n);
    if count > cap as u128 {
        return Err(SearchError::CapExceeded { count, cap });
    }
    fn walk<F: Fn(&[usize]) -> f64>(
        m: usize,
        n: usize,
        d: &mut Vec<usize>,
        used: &mut [bool],
        f: &F,
        best: &mut Option<(Vec<usize>, f64)>,
        seen: &mut usize,
    ) {
        if d.len() == n {
            *seen += 1;
            let v = f(d);
            if best.as_ref().is_none_or(|b| v < b.1) {
                *best = Some((d.clone(), v));
            }
            return;
        }
        for s in 1..=m {
            if !used[s - 1] {
                used[s - 1] = true;
                d.push(s);
                walk(m, n, d, used, f, best, seen);
                d.pop();
                used[s - 1] = false;
            }
        }
    }
    let mut best = None;
    let mut seen = 0;
    walk(m, n, &mut Vec::with_capacity(n), &mut vec![false; m], &objective, &mut best, &mut seen);
    let (d, delta_e) = best.unwrap();
    Ok(OrderOutcome { ordering: PortOrdering(d), delta_e, trace: Vec::new(), evaluations: seen })
}

/// `delta_e` over a fixed set of correlation matrices.
#[derive(Debug, Clone)]
pub struct OrderingObjective {
    rho: Vec<DMatrix<f64>>,
    target_abs: DMatrix<f64>,
}

impl OrderingObjective {
    pub fn new(rho: &[CovarianceMatrix], target: &TargetCovariance) -> Result<Self, SearchError> {
        let m = rho.first().map(CovarianceMatrix::size).unwrap_or(0);
        if rho.is_empty() || rho.iter().any(|r| r.size() != m) {
            return Err(SearchError::Invalid("correlation matrices must share one size".into()));
        }
        if m < target.ports {
            return Err(SearchError::TooFewStates { m, n: target.ports });
        }
        Ok(Self { rho: rho.iter().map(|r| r.values.clone()).collect(), target_abs: target.values.map(f64::abs) })
    }

    pub fn states(&self) -> usize {
        self.rho[0].nrows()
    }

    pub fn ports(&self) -> usize {
        self.target_abs.nrows()
    }

    /// `d` must be a valid ordering; see [`crate::pcdm::average_error`] for
    /// the checked form.
    pub fn eval(&self, d: &[usize]) -> f64 {
        average_error_unchecked(self.rho.iter(), &self.target_abs, d)
    }
}

// ---------------------------------------------------------------- step 1

/// A switch set and hardwire vector; its `2^P` states differ only in the
/// switch bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateSet {
    /// 1-based internal ports carrying switches, ascending.
    pub switches: Vec<usize>,
    /// Hardwire bits of all `Q` internal ports; bits at switch positions are
    /// stored as `false` since the switch overrides them.
    pub hardwire: Vec<bool>,
}

impl StateSet {
    pub fn new(mut switches: Vec<usize>, mut hardwire: Vec<bool>) -> Result<Self, SearchError> {
        switches.sort_unstable();
        PixelConfiguration::new(hardwire.clone(), switches.clone(), vec![false; switches.len()])?;
        for &s in &switches {
            hardwire[s - 1] = false;
        }
        Ok(Self { switches, hardwire })
    }

    pub fn state_count(&self) -> u64 {
        1 << self.switches.len()
    }

    pub fn state(&self, code: u64) -> PixelConfiguration {
        PixelConfiguration::with_state_code(self.hardwire.clone(), self.switches.clone(), code)
            .expect("state set validated on construction")
    }

    pub fn hardwire_string(&self) -> String {
        self.hardwire.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Shared inputs of both steps.
#[derive(Debug, Clone)]
pub struct DesignProblem<'a> {
    pub network: &'a MultiportNetwork,
    pub kernel: &'a PatternKernel,
    pub switch_model: &'a SwitchModel,
    pub switches: usize,
    pub target: &'a TargetCovariance,
    pub z0_ohm: f64,
}

impl DesignProblem<'_> {
    pub fn validate(&self) -> Result<(), SearchError> {
        let q = self.network.internal_ports();
        if self.switches == 0 || self.switches >= q {
            return Err(SearchError::Invalid(format!("need 0 < P < Q, got P = {} with Q = {q}", self.switches)));
        }
        if self.switches > 20 {
            return Err(SearchError::Invalid(format!("P = {} gives too many states per set", self.switches)));
        }
        if self.kernel.ports() != self.network.ports() {
            return Err(SearchError::Invalid(format!(
                "kernel covers {} ports, network has {}",
                self.kernel.ports(),
                self.network.ports()
            )));
        }
        if self.kernel.frequencies().len() != self.network.frequencies().len() {
            return Err(SearchError::Invalid("kernel and network frequency samples differ".into()));
        }
        if !(self.z0_ohm > 0.0 && self.z0_ohm.is_finite()) {
            return Err(SearchError::Invalid(format!("Z0 = {} must be positive", self.z0_ohm)));
        }
        Ok(())
    }

    fn frequencies(&self) -> &FrequencyGrid {
        self.network.frequencies()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedState {
    pub state_code: u64,
    /// `S_E` in dB per frequency sample.
    pub reflection_db: Vec<f64>,
    pub worst_reflection_db: f64,
    #[serde(skip)]
    pub currents: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSet {
    /// Step 1 draw that produced this set.
    pub candidate: u64,
    pub parent: StateSet,
    pub members: Vec<MatchedState>,
    /// `rho0` of the members, one matrix per frequency sample.
    pub covariance: Vec<CovarianceMatrix>,
}

impl MatchedSet {
    pub fn m(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Step1Stats {
    pub draws: u64,
    pub duplicates: u64,
    pub sets_evaluated: u64,
    pub states_evaluated: u64,
    pub singular_states: u64,
    pub matched_sets: u64,
    /// Lowest worst-over-band reflection over all evaluated states.
    pub best_reflection_db: Option<f64>,
}

impl std::fmt::Display for Step1Stats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} draws, {} sets evaluated, {} states, best reflection {}",
            self.draws,
            self.sets_evaluated,
            self.states_evaluated,
            self.best_reflection_db.map_or("n/a".to_string(), |r| format!("{r:.2} dB"))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Params {
    /// Candidate draws allowed, duplicates included.
    pub budget: u64,
    pub target_matched_sets: usize,
    pub seed: u64,
}

struct Evaluated {
    states: u64,
    singular: u64,
    best_db: Option<f64>,
    matched: Option<MatchedSet>,
}

/// Worst reflection over the band for one configuration, with its currents.
pub fn evaluate_state(problem: &DesignProblem, config: &PixelConfiguration) -> Result<MatchedState, ImpmError> {
    let loads = build_load_map(config, problem.switch_model, problem.frequencies());
    let sol = solve_state(problem.network, &loads)?;
    let reflection_db = sol
        .z_in
        .iter()
        .map(|&z| reflection_coefficient(z, problem.z0_ohm))
        .collect::<Result<Vec<_>, _>>()?;
    let worst = reflection_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MatchedState {
        state_code: config.state_code(),
        reflection_db,
        worst_reflection_db: worst,
        currents: sol.currents,
    })
}

fn evaluate_candidate(problem: &DesignProblem, candidate: u64, set: StateSet) -> Result<Evaluated, SearchError> {
    let mut out = Evaluated { states: 0, singular: 0, best_db: None, matched: None };
    let mut members = Vec::new();
    for code in 0..set.state_count() {
        out.states += 1;
        match evaluate_state(problem, &set.state(code)) {
            Ok(s) => {
                out.best_db = Some(out.best_db.map_or(s.worst_reflection_db, |b: f64| b.min(s.worst_reflection_db)));
                if s.worst_reflection_db < MATCH_THRESHOLD_DB {
                    members.push(s);
                }
            }
            Err(ImpmError::Singular { .. } | ImpmError::NonPhysical(_)) => out.singular += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if members.len() >= problem.target.ports {
        let covariance = set_covariance(problem.kernel, &members)?;
        out.matched = Some(MatchedSet { candidate, parent: set, members, covariance });
    }
    Ok(out)
}

/// Re-evaluates one state set; `None` when it has fewer than `N` matched
/// states.
pub fn evaluate_state_set(problem: &DesignProblem, candidate: u64, set: StateSet) -> Result<Option<MatchedSet>, SearchError> {
    problem.validate()?;
    if set.hardwire.len() != problem.network.internal_ports() {
        return Err(SearchError::Invalid(format!(
            "state set covers {} internal ports, network has {}",
            set.hardwire.len(),
            problem.network.internal_ports()
        )));
    }
    Ok(evaluate_candidate(problem, candidate, set)?.matched)
}

/// `rho0` per frequency for a list of states.
pub fn set_covariance(kernel: &PatternKernel, members: &[MatchedState]) -> Result<Vec<CovarianceMatrix>, PcdmError> {
    (0..kernel.frequencies().len())
        .map(|t| {
            let i = ComplexMatrix::from_fn(kernel.ports(), members.len(), |p, s| members[s].currents[t][p]);
            covariance_from_currents(kernel, t, &i)
        })
        .collect()
}

fn draw_candidate(rng: &mut ChaCha8Rng, q: usize, p: usize) -> StateSet {
    let mut switches: Vec<usize> = sample(rng, q, p).into_iter().map(|i| i + 1).collect();
    switches.sort_unstable();
    let hardwire: Vec<bool> = (0..q).map(|_| rng.gen_bool(0.5)).collect();
    StateSet::new(switches, hardwire).expect("sampled positions are valid")
}

/// Step 1. Candidates are drawn from per-index sub-seeds, evaluated in
/// parallel batches, and accepted in draw order, so the output does not
/// depend on the worker count.
pub fn random_matched_search(problem: &DesignProblem, params: &Step1Params) -> Result<(Vec<MatchedSet>, Step1Stats), SearchError> {
    problem.validate()?;
    if params.budget == 0 || params.target_matched_sets == 0 {
        return Err(SearchError::Invalid("budget and target matched-set count must be at least 1".into()));
    }
    let q = problem.network.internal_ports();
    let mut stats = Step1Stats::default();
    let mut seen = HashSet::new();
    let mut found = Vec::new();
    let mut next = 0u64;
    'outer: while next < params.budget {
        let mut batch = Vec::with_capacity(STEP1_BATCH);
        while batch.len() < STEP1_BATCH && next < params.budget {
            let set = draw_candidate(&mut task_rng(params.seed, STREAM_STEP1, next), q, problem.switches);
            batch.push((next, seen.insert(set.clone()).then_some(set)));
            next += 1;
        }
        let results: Vec<(u64, Option<Result<Evaluated, SearchError>>)> = batch
            .into_par_iter()
            .map(|(i, set)| (i, set.map(|s| evaluate_candidate(problem, i, s))))
            .collect();
        for (i, r) in results {
            stats.draws = i + 1;
            let Some(r) = r else {
                stats.duplicates += 1;
                continue;
            };
            let r = r?;
            stats.sets_evaluated += 1;
            stats.states_evaluated += r.states;
            stats.singular_states += r.singular;
            if let Some(b) = r.best_db {
                stats.best_reflection_db = Some(stats.best_reflection_db.map_or(b, |s| s.min(b)));
            }
            if let Some(set) = r.matched {
                found.push(set);
                if found.len() == params.target_matched_sets {
                    break 'outer;
                }
            }
        }
    }
    stats.matched_sets = found.len() as u64;
    if found.is_empty() {
        return Err(SearchError::Exhausted(stats));
    }
    Ok((found, stats))
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub candidate: u64,
    pub switches: Vec<usize>,
    pub hardwire: String,
    pub matched_states: usize,
    pub ordering: Vec<usize>,
    pub delta_e: f64,
}

/// One FAS port of the final design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortState {
    pub fas_port: usize,
    /// Index into the matched set's members, 1-based.
    pub member: usize,
    pub state_code: u64,
    /// Switch bits in ascending switch position order.
    pub switch_bits: Vec<bool>,
    pub reflection_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub set: MatchedSet,
    pub ordering: PortOrdering,
    pub delta_e: f64,
    pub trace: Vec<f64>,
}

impl Design {
    pub fn port_states(&self) -> Vec<PortState> {
        let p = self.set.parent.switches.len();
        self.ordering
            .as_slice()
            .iter()
            .enumerate()
            .map(|(n, &d)| {
                let s = &self.set.members[d - 1];
                PortState {
                    fas_port: n + 1,
                    member: d,
                    state_code: s.state_code,
                    switch_bits: (0..p).map(|b| (s.state_code >> b) & 1 == 1).collect(),
                    reflection_db: s.reflection_db.clone(),
                }
            })
            .collect()
    }

    /// `rho(D)` per frequency, the selected `N x N` block.
    pub fn ordered_covariance(&self) -> Vec<CovarianceMatrix> {
        let d = self.ordering.as_slice();
        self.set
            .covariance
            .iter()
            .map(|c| CovarianceMatrix {
                frequency_hz: c.frequency_hz,
                values: DMatrix::from_fn(d.len(), d.len(), |a, b| c.values[(d[a] - 1, d[b] - 1)]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub stats: Step1Stats,
    pub sets: Vec<SetSummary>,
    /// `None` when Step 1 found no matched set.
    pub best: Option<Design>,
}

/// Step 2 for one matched set.
pub fn order_set(set: &MatchedSet, target: &TargetCovariance, ga: &GaParams, seed: u64) -> Result<OrderOutcome, SearchError> {
    let objective = OrderingObjective::new(&set.covariance, target)?;
    ga_order(objective.states(), objective.ports(), |d| objective.eval(d), ga, seed)
}

/// Step 2 over every matched set; the lowest `delta_e` wins and ties go to
/// the earliest set.
pub fn order_sets(
    sets: Vec<MatchedSet>,
    target: &TargetCovariance,
    ga: &GaParams,
    seed: u64,
) -> Result<(Vec<SetSummary>, Option<Design>), SearchError> {
    let outcomes: Vec<OrderOutcome> = sets
        .par_iter()
        .enumerate()
        .map(|(i, s)| order_set(s, target, ga, sub_seed(seed, STREAM_GA, i as u64)))
        .collect::<Result<_, _>>()?;
    let summaries = sets
        .iter()
        .zip(&outcomes)
        .map(|(s, o)| SetSummary {
            candidate: s.candidate,
            switches: s.parent.switches.clone(),
            hardwire: s.parent.hardwire_string(),
            matched_states: s.m(),
            ordering: o.ordering.as_slice().to_vec(),
            delta_e: o.delta_e,
        })
        .collect();
    let best = outcomes
        .iter()
        .enumerate()
        .fold(None::<usize>, |acc, (i, o)| match acc {
            Some(b) if outcomes[b].delta_e <= o.delta_e => Some(b),
            _ => Some(i),
        });
    let design = best.map(|i| {
        let o = &outcomes[i];
        Design { set: sets[i].clone(), ordering: o.ordering.clone(), delta_e: o.delta_e, trace: o.trace.clone() }
    });
    Ok((summaries, design))
}

/// Step 1 followed by Step 2. Exhaustion is reported as a result with no
/// design rather than an error.
pub fn two_step_pipeline(
    problem: &DesignProblem,
    step1: &Step1Params,
    ga: &GaParams,
) -> Result<RunResult, SearchError> {
    ga.validate()?;
    let (sets, stats) = match random_matched_search(problem, step1) {
        Ok(v) => v,
        Err(SearchError::Exhausted(stats)) => return Ok(RunResult { stats, sets: Vec::new(), best: None }),
        Err(e) => return Err(e),
    };
    let (summaries, best) = order_sets(sets, problem.target, ga, step1.seed)?;
    Ok(RunResult { stats, sets: summaries, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em_model::{synth_pixel_surrogate, CouplingParams, PixelLayout, PowerAngularSpectrum};
    use crate::impm::Circuit;
    use crate::numerics::{build_quadrature, PasSupport, Resolution};
    use crate::pcdm::{average_error, compute_kernel, target_covariance};
    use proptest::prelude::{any, prop_assert, prop_assert_ne, prop_assume, proptest};

    #[test]
    fn decode_examples() {
        assert_eq!(decode(&[1, 1, 1], 4).unwrap().as_slice(), &[1, 2, 3]);
        assert_eq!(decode(&[3, 3, 3], 4).unwrap().as_slice(), &[3, 4, 1]);
        assert_eq!(decode(&[7, 2], 5).unwrap().as_slice(), &[2, 3]);
        assert!(matches!(decode(&[1, 1, 1], 2), Err(SearchError::TooFewStates { .. })));
        assert!(decode(&[0], 3).is_err());
    }

    fn all_chromosomes(m: usize, n: usize) -> Vec<Vec<usize>> {
        (0..m.pow(n as u32))
            .map(|mut k| {
                (0..n)
                    .map(|_| {
                        let g = k % m + 1;
                        k /= m;
                        g
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn decode_exhaustive_validity_and_surjectivity() {
        for m in 1..=6 {
            for n in 1..=4.min(m) {
                for b in all_chromosomes(m, n) {
                    let d = decode(&b, m).unwrap();
                    crate::pcdm::check_ordering(d.as_slice(), m).unwrap();
                    assert_eq!(d, decode(&b, m).unwrap());
                }
            }
        }
        let image: HashSet<Vec<usize>> = all_chromosomes(4, 3).iter().map(|b| decode(b, 4).unwrap().0).collect();
        assert_eq!(image.len(), 24);
    }

    fn random_rho(seed: u64, m: usize) -> CovarianceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = DMatrix::from_element(m, m, 1.0);
        for i in 0..m {
            for j in i + 1..m {
                let x = rng.gen::<f64>();
                v[(i, j)] = x;
                v[(j, i)] = x;
            }
        }
        CovarianceMatrix { frequency_hz: 0.0, values: v }
    }

    #[test]
    fn brute_force_small_instance() {
        let rho = CovarianceMatrix { frequency_hz: 0.0, values: DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.2, 0.9, 1.0, 0.6, 0.2, 0.6, 1.0]) };
        let target = TargetCovariance { ports: 2, aperture_wavelengths: 1.0, values: DMatrix::from_row_slice(2, 2, &[1.0, 0.55, 0.55, 1.0]) };
        let obj = OrderingObjective::new(std::slice::from_ref(&rho), &target).unwrap();
        let out = brute_force_order(3, 2, |d| obj.eval(d), BRUTE_FORCE_CAP).unwrap();
        assert_eq!(out.evaluations, 6);
        // Pairs (1,2): 0.35, (1,3): 0.35, (2,3): 0.05, each counted twice over 4 entries.
        assert_eq!(out.ordering.as_slice(), &[2, 3]);
        assert!((out.delta_e - 0.025).abs() < 1e-15);
        assert!(brute_force_order(3, 2, |d| obj.eval(d), 5).is_err());
    }

    #[test]
    fn brute_force_counts_and_ties() {
        let out = brute_force_order(5, 5, |_| 0.0, BRUTE_FORCE_CAP).unwrap();
        assert_eq!(out.evaluations, 120);
        assert_eq!(out.ordering.as_slice(), &[1, 2, 3, 4, 5]);

        // Symmetric Toeplitz target: reversing an ordering leaves delta_e unchanged.
        let rho = random_rho(4, 6);
        let target = target_covariance(4, 0.5).unwrap();
        let obj = OrderingObjective::new(&[rho], &target).unwrap();
        let best = brute_force_order(6, 4, |d| obj.eval(d), BRUTE_FORCE_CAP).unwrap();
        let mut rev = best.ordering.as_slice().to_vec();
        rev.reverse();
        assert_eq!(obj.eval(&rev), best.delta_e);
        assert!(best.ordering.as_slice() < rev.as_slice());
    }

    #[test]
    fn objective_matches_checked_error() {
        let rho = vec![random_rho(1, 8), random_rho(2, 8)];
        let target = target_covariance(4, 0.5).unwrap();
        let obj = OrderingObjective::new(&rho, &target).unwrap();
        for d in [[1, 2, 3, 4], [8, 1, 5, 3], [2, 7, 6, 4]] {
            assert_eq!(obj.eval(&d), average_error(&rho, &target, &d).unwrap());
        }
    }

    #[test]
    fn ga_two_orderings() {
        let rho = CovarianceMatrix { frequency_hz: 0.0, values: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]) };
        let target = target_covariance(2, 0.3).unwrap();
        let obj = OrderingObjective::new(&[rho], &target).unwrap();
        let ga = GaParams { max_generations: 5, population_size: 20, ..GaParams::default() };
        let out = ga_order(2, 2, |d| obj.eval(d), &ga, 9).unwrap();
        assert_eq!(out.delta_e, obj.eval(&[1, 2]).min(obj.eval(&[2, 1])));
    }

    #[test]
    fn ga_is_deterministic_and_monotone() {
        let rho = random_rho(17, 8);
        let target = target_covariance(4, 0.5).unwrap();
        let obj = OrderingObjective::new(&[rho], &target).unwrap();
        let ga = GaParams { max_generations: 40, population_size: 60, ..GaParams::default() };
        let a = ga_order(8, 4, |d| obj.eval(d), &ga, 3).unwrap();
        let b = ga_order(8, 4, |d| obj.eval(d), &ga, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*a.trace.last().unwrap(), a.delta_e);
    }

    #[test]
    fn ga_matches_brute_force_on_small_instances() {
        let target = target_covariance(4, 0.5).unwrap();
        let mut hits = 0;
        for seed in 0..10 {
            let obj = OrderingObjective::new(&[random_rho(100 + seed, 8)], &target).unwrap();
            let bf = brute_force_order(8, 4, |d| obj.eval(d), BRUTE_FORCE_CAP).unwrap();
            let ga = ga_order(8, 4, |d| obj.eval(d), &GaParams::default(), seed).unwrap();
            if (ga.delta_e - bf.delta_e).abs() <= 1e-12 {
                hits += 1;
            }
        }
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn ga_params_validation() {
        assert!(GaParams { crossover_probability: 1.5, ..GaParams::default() }.validate().is_err());
        assert!(GaParams { population_size: 1, ..GaParams::default() }.validate().is_err());
        assert!(GaParams { elitism: 700, ..GaParams::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn decode_always_valid(m in 1usize..12, genes in proptest::collection::vec(1usize..40, 1..12)) {
            prop_assume!(genes.len() <= m);
            let d = decode(&genes, m).unwrap();
            prop_assert!(crate::pcdm::check_ordering(d.as_slice(), m).is_ok());
        }

        #[test]
        fn sub_seeds_differ(master in any::<u64>(), i in 0u64..1000) {
            prop_assert_ne!(sub_seed(master, 1, i), sub_seed(master, 1, i + 1));
            prop_assert_ne!(sub_seed(master, 1, i), sub_seed(master, 2, i));
        }
    }

    struct Fixture {
        net: MultiportNetwork,
        kernel: PatternKernel,
        model: SwitchModel,
        target: TargetCovariance,
    }

    fn fixture(q: usize, params: CouplingParams, n: usize) -> Fixture {
        let freqs = FrequencyGrid::uniform(2.5e9, 2.5e9, 1).unwrap();
        let grid = build_quadrature(PasSupport::UpperHemisphere, Resolution { theta_nodes: 12, phi_nodes: 24 }).unwrap();
        let (net, pats) = synth_pixel_surrogate(q, &PixelLayout::default(), 7, &params, &freqs, &grid).unwrap();
        let kernel = compute_kernel(&pats, &PowerAngularSpectrum::uniform(PasSupport::UpperHemisphere), &grid).unwrap();
        let model = SwitchModel::new(Circuit::ResistorOhm(5.0), Circuit::CapacitorF(0.05e-12)).unwrap();
        Fixture { net, kernel, model, target: target_covariance(n, 0.5).unwrap() }
    }

    impl Fixture {
        fn problem(&self, p: usize) -> DesignProblem<'_> {
            DesignProblem { network: &self.net, kernel: &self.kernel, switch_model: &self.model, switches: p, target: &self.target, z0_ohm: 50.0 }
        }
    }

    #[test]
    fn weak_coupling_matches_every_state() {
        let params = CouplingParams { feed_coupling_ohm: 1e-6, mutual_coupling_ohm: 1e-6, ..CouplingParams::default() };
        let f = fixture(10, params, 4);
        let (sets, stats) =
            random_matched_search(&f.problem(3), &Step1Params { budget: 5, target_matched_sets: 1, seed: 1 }).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].candidate, 0);
        assert_eq!(sets[0].m(), 8);
        assert_eq!(stats.sets_evaluated, 1);
    }

    #[test]
    fn mismatched_feed_exhausts() {
        let params = CouplingParams {
            feed_resistance_ohm: 500.0,
            feed_coupling_ohm: 1e-6,
            mutual_coupling_ohm: 1e-6,
            ..CouplingParams::default()
        };
        let f = fixture(10, params, 4);
        let err = random_matched_search(&f.problem(3), &Step1Params { budget: 20, target_matched_sets: 1, seed: 1 }).unwrap_err();
        match err {
            SearchError::Exhausted(stats) => {
                assert_eq!(stats.draws, 20);
                assert_eq!(stats.matched_sets, 0);
                assert!(stats.best_reflection_db.unwrap() > -10.0);
            }
            other => panic!("{other:?}"),
        }
        let res = two_step_pipeline(&f.problem(3), &Step1Params { budget: 20, target_matched_sets: 1, seed: 1 }, &GaParams::default())
            .unwrap();
        assert!(res.best.is_none());
    }

    #[test]
    fn step1_deterministic_and_sound() {
        let f = fixture(20, CouplingParams::default(), 4);
        let p = f.problem(4);
        let params = Step1Params { budget: 300, target_matched_sets: 5, seed: 42 };
        let (a, sa) = random_matched_search(&p, &params).unwrap();
        let (b, sb) = random_matched_search(&p, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        for set in &a {
            assert!(set.m() >= 4);
            for s in &set.members {
                let again = evaluate_state(&p, &set.parent.state(s.state_code)).unwrap();
                assert!(again.worst_reflection_db < MATCH_THRESHOLD_DB);
            }
        }
    }

    #[test]
    fn pipeline_beats_random_orderings() {
        let f = fixture(20, CouplingParams::default(), 6);
        let p = f.problem(4);
        let res = two_step_pipeline(&p, &Step1Params { budget: 400, target_matched_sets: 3, seed: 5 }, &GaParams::default()).unwrap();
        let best = res.best.expect("matched set");
        let obj = OrderingObjective::new(&best.set.covariance, &f.target).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mean = (0..100)
            .map(|_| {
                let d: Vec<usize> = sample(&mut rng, best.set.m(), 6).into_iter().map(|i| i + 1).collect();
                obj.eval(&d)
            })
            .sum::<f64>()
            / 100.0;
        assert!(best.delta_e < mean, "{} vs {mean}", best.delta_e);
        assert_eq!(best.port_states().len(), 6);
        let sub = best.ordered_covariance();
        assert_eq!(sub[0].size(), 6);
    }
}
