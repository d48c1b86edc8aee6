//! Internal multi-port reduction of a pixel configuration.
//!
//! A configuration terminates every internal port with a short, an open, or a
//! switch branch impedance. Open ports carry no current and are eliminated
//! exactly by deleting their rows and columns; the remaining loaded block is
//! reduced onto the feed by a Schur complement:
//!
//! ```text
//! Z_in = Z_E - Z_EI' (Z_I' + Z_L')^-1 Z_IE'
//! i    = 1/sqrt(Z_in) * [1, -(Z_I' + Z_L')^-1 Z_IE']
//! ```

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::em_model::{FrequencyGrid, MultiportNetwork, PatternGrid};
use crate::numerics::{ComplexMatrix, LuFactors, NumericsError};

/// Floor applied to a perfect match in [`reflection_coefficient`].
pub const REFLECTION_FLOOR_DB: f64 = -120.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImpmError {
    #[error("configuration {config}: loaded internal block is singular at frequency index {frequency} (rcond ~ {rcond:.3e})")]
    Singular { config: String, frequency: usize, rcond: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid switch circuit: {0}")]
    InvalidCircuit(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-physical impedance: {0}")]
    NonPhysical(String),
}

/// Connection states of the `Q` internal ports plus the switch overlay.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelConfiguration {
    /// Hardwire vector; `true` is connected.
    hardwire: Vec<bool>,
    /// Switch positions, 1-based internal port numbers, ascending.
    switches: Vec<usize>,
    /// One bit per switch; `true` is on.
    switch_bits: Vec<bool>,
}

impl PixelConfiguration {
    pub fn new(hardwire: Vec<bool>, switches: Vec<usize>, switch_bits: Vec<bool>) -> Result<Self, ImpmError> {
        let q = hardwire.len();
        if q == 0 {
            return Err(ImpmError::InvalidConfig("no internal ports".into()));
        }
        if switches.len() != switch_bits.len() {
            return Err(ImpmError::InvalidConfig(format!(
                "{} switch positions but {} switch bits",
                switches.len(),
                switch_bits.len()
            )));
        }
        if switches.len() >= q {
            return Err(ImpmError::InvalidConfig(format!(
                "{} switches need fewer than Q = {q} internal ports",
                switches.len()
            )));
        }
        let mut pairs: Vec<(usize, bool)> = switches.into_iter().zip(switch_bits).collect();
        pairs.sort_by_key(|p| p.0);
        for (i, &(s, _)) in pairs.iter().enumerate() {
            if s == 0 || s > q {
                return Err(ImpmError::InvalidConfig(format!("switch position {s} outside 1..={q}")));
            }
            if i > 0 && pairs[i - 1].0 == s {
                return Err(ImpmError::InvalidConfig(format!("switch position {s} repeated")));
            }
        }
        let (switches, switch_bits) = pairs.into_iter().unzip();
        Ok(Self { hardwire, switches, switch_bits })
    }

    /// Configuration whose switch bits are the low `P` bits of `code`
    /// (bit `p` drives the `p`-th switch in ascending position order).
    pub fn with_state_code(hardwire: Vec<bool>, mut switches: Vec<usize>, code: u64) -> Result<Self, ImpmError> {
        switches.sort_unstable();
        let bits = (0..switches.len()).map(|p| (code >> p) & 1 == 1).collect();
        Self::new(hardwire, switches, bits)
    }

    pub fn internal_ports(&self) -> usize {
        self.hardwire.len()
    }

    pub fn hardwire(&self) -> &[bool] {
        &self.hardwire
    }

    pub fn switches(&self) -> &[usize] {
        &self.switches
    }

    pub fn switch_bits(&self) -> &[bool] {
        &self.switch_bits
    }

    pub fn state_code(&self) -> u64 {
        self.switch_bits
            .iter()
            .enumerate()
            .fold(0, |acc, (p, &b)| acc | ((b as u64) << p))
    }

    /// Stable textual id used in diagnostics.
    pub fn id(&self) -> String {
        let mut s = String::from("S=");
        for (i, p) in self.switches.iter().enumerate() {
            if i > 0 {
                s.push('.');
            }
            let _ = write!(s, "{p}");
        }
        s.push_str(";x=");
        s.extend(self.hardwire.iter().map(|&b| if b { '1' } else { '0' }));
        s.push_str(";b=");
        s.extend(self.switch_bits.iter().map(|&b| if b { '1' } else { '0' }));
        s
    }
}

/// Two-terminal lumped circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Circuit {
    ResistorOhm(f64),
    InductorH(f64),
    CapacitorF(f64),
    Series(Vec<Circuit>),
    Parallel(Vec<Circuit>),
}

impl Circuit {
    pub fn validate(&self) -> Result<(), ImpmError> {
        match self {
            Circuit::ResistorOhm(r) if !(r.is_finite() && *r >= 0.0) => {
                Err(ImpmError::InvalidCircuit(format!("resistance {r} must be >= 0")))
            }
            Circuit::InductorH(l) if !(l.is_finite() && *l >= 0.0) => {
                Err(ImpmError::InvalidCircuit(format!("inductance {l} must be >= 0")))
            }
            Circuit::CapacitorF(c) if !(c.is_finite() && *c > 0.0) => {
                Err(ImpmError::InvalidCircuit(format!("capacitance {c} must be > 0")))
            }
            Circuit::Series(parts) | Circuit::Parallel(parts) => {
                if parts.is_empty() {
                    return Err(ImpmError::InvalidCircuit("empty series/parallel group".into()));
                }
                parts.iter().try_for_each(Circuit::validate)
            }
            _ => Ok(()),
        }
    }

    /// Impedance at `f` hertz. Parallel groups containing a zero-impedance
    /// branch collapse to a short.
    pub fn impedance(&self, f: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * f;
        match self {
            Circuit::ResistorOhm(r) => Complex64::new(*r, 0.0),
            Circuit::InductorH(l) => Complex64::new(0.0, w * l),
            Circuit::CapacitorF(c) => Complex64::new(0.0, -1.0 / (w * c)),
            Circuit::Series(parts) => parts.iter().map(|p| p.impedance(f)).sum(),
            Circuit::Parallel(parts) => {
                let zs: Vec<Complex64> = parts.iter().map(|p| p.impedance(f)).collect();
                if zs.iter().any(|z| z.norm() == 0.0) {
                    return Complex64::new(0.0, 0.0);
                }
                let y: Complex64 = zs.iter().map(|z| z.inv()).sum();
                y.inv()
            }
        }
    }
}

/// Equivalent circuits of the RF switch in its two states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchModel {
    pub on: Circuit,
    pub off: Circuit,
}

impl SwitchModel {
    pub fn new(on: Circuit, off: Circuit) -> Result<Self, ImpmError> {
        on.validate()?;
        off.validate()?;
        Ok(Self { on, off })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    Short,
    Open,
    Impedance(Complex64),
}

impl Load {
    fn impedance(self) -> Option<Complex64> {
        match self {
            Load::Short => Some(Complex64::new(0.0, 0.0)),
            Load::Open => None,
            Load::Impedance(z) => Some(z),
        }
    }
}

/// Terminations of every internal port at every frequency sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadMap {
    label: String,
    loads: Vec<Vec<Load>>,
}

impl LoadMap {
    /// `loads[t][q - 1]` is the termination of internal port `q` at sample `t`.
    pub fn new(label: impl Into<String>, loads: Vec<Vec<Load>>) -> Result<Self, ImpmError> {
        let q = loads.first().map(Vec::len).unwrap_or(0);
        if loads.is_empty() || loads.iter().any(|l| l.len() != q) {
            return Err(ImpmError::Shape("load map needs the same port count at every frequency".into()));
        }
        Ok(Self { label: label.into(), loads })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn frequencies(&self) -> usize {
        self.loads.len()
    }

    pub fn internal_ports(&self) -> usize {
        self.loads[0].len()
    }

    pub fn at(&self, t: usize) -> &[Load] {
        &self.loads[t]
    }
}

/// Feed impedance and port currents for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PortSolution {
    /// Input impedance per frequency sample.
    pub z_in: Vec<Complex64>,
    /// `currents[t]` has `Q + 1` entries, feed first.
    pub currents: Vec<Vec<Complex64>>,
}

/// Maps a configuration to its terminations: outside the switch set a
/// connected port is a short and an unconnected one is open; switch ports
/// take the on or off branch impedance at each sample.
pub fn build_load_map(config: &PixelConfiguration, model: &SwitchModel, freqs: &FrequencyGrid) -> LoadMap {
    let q = config.internal_ports();
    let loads = freqs
        .samples()
        .iter()
        .map(|&f| {
            let on = model.on.impedance(f);
            let off = model.off.impedance(f);
            let mut row: Vec<Load> = config
                .hardwire
                .iter()
                .map(|&x| if x { Load::Short } else { Load::Open })
                .collect();
            for (&s, &bit) in config.switches.iter().zip(&config.switch_bits) {
                row[s - 1] = Load::Impedance(if bit { on } else { off });
            }
            debug_assert_eq!(row.len(), q);
            row
        })
        .collect();
    LoadMap { label: config.id(), loads }
}

fn check_conformable(net: &MultiportNetwork, loads: &LoadMap) -> Result<(), ImpmError> {
    if loads.internal_ports() != net.internal_ports() {
        return Err(ImpmError::Shape(format!(
            "load map covers {} internal ports, network has {}",
            loads.internal_ports(),
            net.internal_ports()
        )));
    }
    if loads.frequencies() != net.frequencies().len() {
        return Err(ImpmError::Shape(format!(
            "load map has {} frequency samples, network has {}",
            loads.frequencies(),
            net.frequencies().len()
        )));
    }
    Ok(())
}

/// Solves the loaded internal block at sample `t`.
/// Returns the active port indices (0-based internal) and `(Z_I' + Z_L')^-1 Z_IE'`.
fn reduce(net: &MultiportNetwork, loads: &LoadMap, t: usize) -> Result<(Vec<usize>, Vec<Complex64>), ImpmError> {
    let z = net.z(t);
    let row = loads.at(t);
    let active: Vec<usize> = (0..row.len()).filter(|&q| row[q] != Load::Open).collect();
    let n = active.len();
    if n == 0 {
        return Ok((active, Vec::new()));
    }
    let mut a = ComplexMatrix::zeros(n, n);
    let mut b = ComplexMatrix::zeros(n, 1);
    for (i, &qi) in active.iter().enumerate() {
        for (j, &qj) in active.iter().enumerate() {
            a[(i, j)] = z[(qi + 1, qj + 1)];
        }
        a[(i, i)] += row[qi].impedance().unwrap();
        b[(i, 0)] = z[(qi + 1, 0)];
    }
    let lu = LuFactors::factor(&a).map_err(|e| match e {
        NumericsError::Singular { rcond } => ImpmError::Singular { config: loads.label.clone(), frequency: t, rcond },
        other => ImpmError::Shape(other.to_string()),
    })?;
    let x = lu.solve(&b).map_err(|e| ImpmError::Shape(e.to_string()))?;
    Ok((active, x.iter().cloned().collect()))
}

fn feed_impedance(net: &MultiportNetwork, t: usize, active: &[usize], x: &[Complex64]) -> Complex64 {
    let z = net.z(t);
    let coupled: Complex64 = active.iter().zip(x).map(|(&q, &v)| z[(0, q + 1)] * v).sum();
    z[(0, 0)] - coupled
}

/// Input impedance at the feed for every frequency sample.
pub fn input_impedance(net: &MultiportNetwork, loads: &LoadMap) -> Result<Vec<Complex64>, ImpmError> {
    check_conformable(net, loads)?;
    (0..loads.frequencies())
        .map(|t| {
            let (active, x) = reduce(net, loads, t)?;
            Ok(feed_impedance(net, t, &active, &x))
        })
        .collect()
}

/// `20 log10 |(Z_in - Z0) / (Z_in + Z0)|`, floored at -120 dB.
pub fn reflection_coefficient(z_in: Complex64, z0: f64) -> Result<f64, ImpmError> {
    if !(z0 > 0.0 && z0.is_finite()) {
        return Err(ImpmError::NonPhysical(format!("reference impedance {z0} must be positive")));
    }
    let den = z_in + z0;
    if den.norm() == 0.0 {
        return Err(ImpmError::NonPhysical(format!("Z_in = -Z0 = {z_in} gives unbounded reflection")));
    }
    let gamma = ((z_in - z0) / den).norm();
    if gamma == 0.0 {
        return Ok(REFLECTION_FLOOR_DB);
    }
    Ok((20.0 * gamma.log10()).max(REFLECTION_FLOOR_DB))
}

fn currents_from(z_in: Complex64, q: usize, active: &[usize], x: &[Complex64]) -> Result<Vec<Complex64>, ImpmError> {
    if z_in.norm() == 0.0 {
        return Err(ImpmError::NonPhysical("zero input impedance cannot be normalized".into()));
    }
    let i0 = z_in.sqrt().inv();
    let mut i = vec![Complex64::new(0.0, 0.0); q + 1];
    i[0] = i0;
    for (&p, &v) in active.iter().zip(x) {
        i[p + 1] = -v * i0;
    }
    Ok(i)
}

/// Port currents normalized by `1/sqrt(Z_in)` (principal branch).
pub fn port_currents(net: &MultiportNetwork, loads: &LoadMap, z_in: &[Complex64]) -> Result<PortSolution, ImpmError> {
    check_conformable(net, loads)?;
    if z_in.len() != loads.frequencies() {
        return Err(ImpmError::Shape(format!(
            "{} input impedances for {} frequency samples",
            z_in.len(),
            loads.frequencies()
        )));
    }
    let q = net.internal_ports();
    let currents = (0..loads.frequencies())
        .map(|t| {
            let (active, x) = reduce(net, loads, t)?;
            currents_from(z_in[t], q, &active, &x)
        })
        .collect::<Result<_, _>>()?;
    Ok(PortSolution { z_in: z_in.to_vec(), currents })
}

/// Input impedance and currents from one factorization per sample.
pub fn solve_state(net: &MultiportNetwork, loads: &LoadMap) -> Result<PortSolution, ImpmError> {
    check_conformable(net, loads)?;
    let q = net.internal_ports();
    let mut z_in = Vec::with_capacity(loads.frequencies());
    let mut currents = Vec::with_capacity(loads.frequencies());
    for t in 0..loads.frequencies() {
        let (active, x) = reduce(net, loads, t)?;
        let zi = feed_impedance(net, t, &active, &x);
        currents.push(currents_from(zi, q, &active, &x)?);
        z_in.push(zi);
    }
    Ok(PortSolution { z_in, currents })
}

/// Radiation pattern of one state on the pattern grid, per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePattern {
    pub e_theta: Vec<Vec<Complex64>>,
    pub e_phi: Vec<Vec<Complex64>>,
}

impl StatePattern {
    /// The open-circuit pattern of a single port, as if it were a state.
    pub fn open_circuit(patterns: &PatternGrid, port: usize) -> Self {
        let f = patterns.frequencies().len();
        Self {
            e_theta: (0..f).map(|t| patterns.e_theta(t, port).to_vec()).collect(),
            e_phi: (0..f).map(|t| patterns.e_phi(t, port).to_vec()).collect(),
        }
    }
}

/// `e = sum_q i_q e_q^oc` for both polarizations.
pub fn total_pattern(patterns: &PatternGrid, sol: &PortSolution) -> Result<StatePattern, ImpmError> {
    if sol.currents.len() != patterns.frequencies().len() {
        return Err(ImpmError::Shape(format!(
            "{} current vectors for {} pattern frequencies",
            sol.currents.len(),
            patterns.frequencies().len()
        )));
    }
    let nodes = patterns.nodes();
    let mut e_theta = Vec::with_capacity(sol.currents.len());
    let mut e_phi = Vec::with_capacity(sol.currents.len());
    for (t, i) in sol.currents.iter().enumerate() {
        if i.len() != patterns.ports() {
            return Err(ImpmError::Shape(format!(
                "{} port currents for a {}-port pattern grid",
                i.len(),
                patterns.ports()
            )));
        }
        let mut et = vec![Complex64::new(0.0, 0.0); nodes];
        let mut ep = vec![Complex64::new(0.0, 0.0); nodes];
        for (p, &ip) in i.iter().enumerate() {
            if ip == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (acc, &v) in et.iter_mut().zip(patterns.e_theta(t, p)) {
                *acc += ip * v;
            }
            for (acc, &v) in ep.iter_mut().zip(patterns.e_phi(t, p)) {
                *acc += ip * v;
            }
        }
        e_theta.push(et);
        e_phi.push(ep);
    }
    Ok(StatePattern { e_theta, e_phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em_model::{synth_pixel_surrogate, CouplingParams, PixelLayout};
    use crate::numerics::{build_quadrature, PasSupport, Resolution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar_net() -> MultiportNetwork {
        let z = ComplexMatrix::from_row_slice(2, 2, &[c(50.0, 0.0), c(10.0, 0.0), c(10.0, 0.0), c(20.0, 0.0)]);
        MultiportNetwork::new(vec![1e9], vec![z]).unwrap()
    }

    fn one(load: Load) -> LoadMap {
        LoadMap::new("test", vec![vec![load]]).unwrap()
    }

    #[test]
    fn series_resistor_branch() {
        let m = SwitchModel::new(Circuit::Series(vec![Circuit::ResistorOhm(5.0), Circuit::InductorH(0.0)]), Circuit::CapacitorF(5e-14))
            .unwrap();
        assert_eq!(m.on.impedance(1e9), c(5.0, 0.0));
        assert_eq!(m.on.impedance(7e9), c(5.0, 0.0));
    }

    #[test]
    fn series_capacitor_branch() {
        let z = Circuit::Series(vec![Circuit::CapacitorF(0.05e-12)]).impedance(2.5e9);
        assert_eq!(z.re, 0.0);
        assert!((z.im + 1_273.239_544_735_162_6).abs() < 1e-9);
    }

    #[test]
    fn parallel_branch() {
        let z = Circuit::Parallel(vec![Circuit::ResistorOhm(100.0), Circuit::ResistorOhm(100.0)]).impedance(1e9);
        assert!((z - c(50.0, 0.0)).norm() < 1e-12);
        let short = Circuit::Parallel(vec![Circuit::ResistorOhm(0.0), Circuit::CapacitorF(1e-12)]).impedance(1e9);
        assert_eq!(short, c(0.0, 0.0));
    }

    #[test]
    fn invalid_circuits_rejected() {
        assert!(Circuit::ResistorOhm(-1.0).validate().is_err());
        assert!(Circuit::CapacitorF(0.0).validate().is_err());
        assert!(Circuit::Series(vec![]).validate().is_err());
    }

    #[test]
    fn load_map_follows_hardwire_and_switches() {
        let model = SwitchModel::new(Circuit::ResistorOhm(5.0), Circuit::CapacitorF(5e-14)).unwrap();
        let cfg = PixelConfiguration::new(vec![true, false, true, false], vec![3, 4], vec![true, false]).unwrap();
        let freqs = FrequencyGrid::uniform(2.5e9, 2.5e9, 1).unwrap();
        let map = build_load_map(&cfg, &model, &freqs);
        assert_eq!(map.at(0)[0], Load::Short);
        assert_eq!(map.at(0)[1], Load::Open);
        assert_eq!(map.at(0)[2], Load::Impedance(c(5.0, 0.0)));
        match map.at(0)[3] {
            Load::Impedance(z) => assert!((z.im + 1273.2395).abs() < 1e-3),
            other => panic!("{other:?}"),
        }
        assert_eq!(map.label(), "S=3.4;x=1010;b=10");
    }

    #[test]
    fn configuration_validation() {
        assert!(PixelConfiguration::new(vec![true; 3], vec![1, 1], vec![true, false]).is_err());
        assert!(PixelConfiguration::new(vec![true; 3], vec![4], vec![true]).is_err());
        assert!(PixelConfiguration::new(vec![true; 2], vec![1, 2], vec![true, true]).is_err());
        let cfg = PixelConfiguration::with_state_code(vec![false; 8], vec![7, 2, 5], 0b110).unwrap();
        assert_eq!(cfg.switches(), &[2, 5, 7]);
        assert_eq!(cfg.state_code(), 0b110);
    }

    #[test]
    fn all_open_gives_feed_impedance() {
        let net = scalar_net();
        let zin = input_impedance(&net, &one(Load::Open)).unwrap();
        assert_eq!(zin, vec![c(50.0, 0.0)]);
        let sol = port_currents(&net, &one(Load::Open), &zin).unwrap();
        assert_eq!(sol.currents[0][1], c(0.0, 0.0));
        assert!((sol.currents[0][0] - c(50f64.sqrt().recip(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn scalar_schur_complement() {
        let net = scalar_net();
        let loads = one(Load::Impedance(c(5.0, 0.0)));
        let zin = input_impedance(&net, &loads).unwrap();
        assert!((zin[0] - c(46.0, 0.0)).norm() < 1e-12);
        let sol = port_currents(&net, &loads, &zin).unwrap();
        let i0 = sol.currents[0][0];
        assert!((sol.currents[0][1] - i0 * (-0.4)).norm() < 1e-15);
    }

    #[test]
    fn reflection_values() {
        assert_eq!(reflection_coefficient(c(50.0, 0.0), 50.0).unwrap(), -120.0);
        let r = reflection_coefficient(c(150.0, 0.0), 50.0).unwrap();
        assert!((r + 6.020_599_913_279_624).abs() < 1e-12);
        assert_eq!(reflection_coefficient(c(0.0, 0.0), 50.0).unwrap(), 0.0);
        assert!(reflection_coefficient(c(-50.0, 0.0), 50.0).is_err());
        assert!(reflection_coefficient(c(50.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn singular_block_names_configuration() {
        // Z_I + Z_L = 0 for the single internal port.
        let z = ComplexMatrix::from_row_slice(2, 2, &[c(50.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 10.0)]);
        let net = MultiportNetwork::new(vec![1e9], vec![z]).unwrap();
        let loads = LoadMap::new("cfg-17", vec![vec![Load::Impedance(c(0.0, -10.0))]]).unwrap();
        match input_impedance(&net, &loads) {
            Err(ImpmError::Singular { config, .. }) => assert_eq!(config, "cfg-17"),
            other => panic!("{other:?}"),
        }
    }

    fn random_case(seed: u64) -> (MultiportNetwork, LoadMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = rng.gen_range(1..=12);
        let mut z = ComplexMatrix::zeros(q + 1, q + 1);
        for i in 0..=q {
            for j in i..=q {
                let v = c(rng.gen_range(-5.0..5.0), rng.gen_range(-20.0..20.0));
                z[(i, j)] = v;
                z[(j, i)] = v;
            }
            z[(i, i)] += c(40.0, 0.0);
        }
        let net = MultiportNetwork::new(vec![1e9], vec![z]).unwrap();
        let loads = (0..q)
            .map(|_| match rng.gen_range(0..3) {
                0 => Load::Short,
                1 => Load::Open,
                _ => Load::Impedance(c(rng.gen_range(0.0..10.0), rng.gen_range(-50.0..50.0))),
            })
            .collect();
        (net, LoadMap::new("rand", vec![loads]).unwrap())
    }

    #[test]
    fn internal_voltages_match_loads() {
        for seed in 0..50 {
            let (net, loads) = random_case(seed);
            let sol = solve_state(&net, &loads).unwrap();
            let i = nalgebra::DVector::from_vec(sol.currents[0].clone());
            let v = net.z(0) * &i;
            for (q, load) in loads.at(0).iter().enumerate() {
                match load {
                    Load::Open => assert_eq!(i[q + 1], c(0.0, 0.0)),
                    other => {
                        let zl = other.impedance().unwrap();
                        let want = -zl * i[q + 1];
                        assert!((v[q + 1] - want).norm() <= 1e-9 * v.norm().max(1.0), "seed {seed} port {q}");
                    }
                }
            }
            // Feed: v0 = Z_in i0.
            assert!((v[0] - sol.z_in[0] * i[0]).norm() <= 1e-9 * v[0].norm());
        }
    }

    #[test]
    fn open_is_the_large_impedance_limit() {
        for seed in 0..30 {
            let (net, loads) = random_case(seed);
            let sentinel: Vec<Load> = loads
                .at(0)
                .iter()
                .map(|l| if *l == Load::Open { Load::Impedance(c(1e12, 0.0)) } else { *l })
                .collect();
            let a = input_impedance(&net, &loads).unwrap()[0];
            let b = input_impedance(&net, &LoadMap::new("s", vec![sentinel]).unwrap()).unwrap()[0];
            assert!((a - b).norm() <= 1e-6 * a.norm(), "seed {seed}");
        }
    }

    #[test]
    fn total_pattern_is_linear_in_currents() {
        let freqs = FrequencyGrid::uniform(2.5e9, 2.5e9, 1).unwrap();
        let grid = build_quadrature(PasSupport::UpperHemisphere, Resolution { theta_nodes: 4, phi_nodes: 6 }).unwrap();
        let (_, pats) = synth_pixel_surrogate(2, &PixelLayout::default(), 1, &CouplingParams::default(), &freqs, &grid).unwrap();

        let unit = PortSolution { z_in: vec![c(1.0, 0.0)], currents: vec![vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]] };
        let e = total_pattern(&pats, &unit).unwrap();
        assert_eq!(e.e_theta[0], pats.e_theta(0, 0));
        assert_eq!(e.e_phi[0], pats.e_phi(0, 0));

        let i = vec![c(0.3, -0.2), c(-1.1, 0.5), c(0.0, 2.0)];
        let sol = PortSolution { z_in: vec![c(1.0, 0.0)], currents: vec![i.clone()] };
        let doubled = PortSolution { z_in: vec![c(1.0, 0.0)], currents: vec![i.iter().map(|v| v * 2.0).collect()] };
        let a = total_pattern(&pats, &sol).unwrap();
        let b = total_pattern(&pats, &doubled).unwrap();
        for k in 0..pats.nodes() {
            assert!((b.e_theta[0][k] - a.e_theta[0][k] * 2.0).norm() < 1e-14);
        }
        // Hand evaluation at node 5.
        let k = 5;
        let want: Complex64 = (0..3).map(|p| i[p] * pats.e_theta(0, p)[k]).sum();
        assert!((a.e_theta[0][k] - want).norm() < 1e-15);
    }

    #[test]
    fn pattern_port_mismatch() {
        let freqs = FrequencyGrid::uniform(2.5e9, 2.5e9, 1).unwrap();
        let grid = build_quadrature(PasSupport::UpperHemisphere, Resolution { theta_nodes: 2, phi_nodes: 2 }).unwrap();
        let (_, pats) = synth_pixel_surrogate(2, &PixelLayout::default(), 1, &CouplingParams::default(), &freqs, &grid).unwrap();
        let sol = PortSolution { z_in: vec![c(1.0, 0.0)], currents: vec![vec![c(1.0, 0.0)]] };
        assert!(matches!(total_pattern(&pats, &sol), Err(ImpmError::Shape(_))));
    }
}
