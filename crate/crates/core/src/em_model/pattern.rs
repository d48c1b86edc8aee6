use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{EmModelError, MultiportNetwork};
use crate::numerics::{build_quadrature, PasSupport, QuadratureGrid, Resolution};

const CSV_HEADER: &str = "port,theta_rad,phi_rad,re_etheta,im_etheta,re_ephi,im_ephi";
const NODE_TOLERANCE: f64 = 1e-12;

/// Open-circuit far-field components of every port on a quadrature grid,
/// one table per frequency. Values are stored port-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternGrid {
    ports: usize,
    frequencies: Vec<f64>,
    grid: QuadratureGrid,
    e_theta: Vec<Vec<Complex64>>,
    e_phi: Vec<Vec<Complex64>>,
}

impl PatternGrid {
    pub fn new(
        ports: usize,
        frequencies: Vec<f64>,
        grid: QuadratureGrid,
        e_theta: Vec<Vec<Complex64>>,
        e_phi: Vec<Vec<Complex64>>,
    ) -> Result<Self, EmModelError> {
        let expected = ports * grid.len();
        if ports == 0 {
            return Err(EmModelError::Invalid("pattern grid needs at least one port".into()));
        }
        if frequencies.is_empty() || e_theta.len() != frequencies.len() || e_phi.len() != frequencies.len() {
            return Err(EmModelError::Invalid(format!(
                "{} frequencies but {}/{} field tables",
                frequencies.len(),
                e_theta.len(),
                e_phi.len()
            )));
        }
        for (t, (a, b)) in e_theta.iter().zip(&e_phi).enumerate() {
            if a.len() != expected || b.len() != expected {
                return Err(EmModelError::GridMismatch(format!(
                    "frequency {t}: expected {expected} values per component, got {}/{}",
                    a.len(),
                    b.len()
                )));
            }
            if a.iter().chain(b).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(EmModelError::Invalid(format!("frequency {t}: non-finite field value")));
            }
        }
        Ok(Self { ports, frequencies, grid, e_theta, e_phi })
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn e_theta(&self, t: usize, port: usize) -> &[Complex64] {
        let n = self.nodes();
        &self.e_theta[t][port * n..(port + 1) * n]
    }

    pub fn e_phi(&self, t: usize, port: usize) -> &[Complex64] {
        let n = self.nodes();
        &self.e_phi[t][port * n..(port + 1) * n]
    }

    /// Fails unless there is one pattern per network port.
    pub fn check_compatible(&self, net: &MultiportNetwork) -> Result<(), EmModelError> {
        if self.ports != net.ports() {
            return Err(EmModelError::PortCountMismatch(format!(
                "pattern bundle has {} ports, network has {}",
                self.ports,
                net.ports()
            )));
        }
        Ok(())
    }

    pub fn select_frequencies(&self, indices: &[usize]) -> Self {
        Self {
            ports: self.ports,
            frequencies: indices.iter().map(|&i| self.frequencies[i]).collect(),
            grid: self.grid.clone(),
            e_theta: indices.iter().map(|&i| self.e_theta[i].clone()).collect(),
            e_phi: indices.iter().map(|&i| self.e_phi[i].clone()).collect(),
        }
    }

    pub fn manifest(&self) -> PatternManifest {
        PatternManifest {
            ports: self.ports,
            frequencies_hz: self.frequencies.clone(),
            support: self.grid.support(),
            grid: GridDescription {
                rule: match self.grid.support() {
                    PasSupport::HorizonRing => "uniform-ring".into(),
                    _ => "gauss-legendre-cos-theta-x-trapezoid-phi".into(),
                },
                theta_nodes: self.grid.resolution().theta_nodes,
                phi_nodes: self.grid.resolution().phi_nodes,
                node_count: self.grid.len(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescription {
    pub rule: String,
    pub theta_nodes: usize,
    pub phi_nodes: usize,
    pub node_count: usize,
}

/// Contents of `manifest.json` in a pattern bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternManifest {
    pub ports: usize,
    pub frequencies_hz: Vec<f64>,
    pub support: PasSupport,
    pub grid: GridDescription,
}

/// Writes `manifest.json` and one `pattern_f<t>.csv` per frequency (t from 1).
pub fn write_pattern_bundle(patterns: &PatternGrid, dir: impl AsRef<Path>) -> Result<(), EmModelError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(EmModelError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "bundle directory does not exist"),
        ));
    }
    let manifest = serde_json::to_string_pretty(&patterns.manifest())
        .map_err(|e| EmModelError::Manifest(e.to_string()))?;
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, manifest + "\n").map_err(|e| EmModelError::io(&mpath, e))?;
    let grid = patterns.grid();
    for t in 0..patterns.frequencies.len() {
        let mut out = String::with_capacity(patterns.ports * grid.len() * 140);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for p in 0..patterns.ports {
            let (et, ep) = (patterns.e_theta(t, p), patterns.e_phi(t, p));
            for (k, (theta, phi, _)) in grid.nodes().enumerate() {
                let _ = writeln!(
                    out,
                    "{p},{theta:.16e},{phi:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    et[k].re, et[k].im, ep[k].re, ep[k].im
                );
            }
        }
        let fpath = dir.join(format!("pattern_f{}.csv", t + 1));
        std::fs::write(&fpath, out).map_err(|e| EmModelError::io(&fpath, e))?;
    }
    Ok(())
}

/// Reads a bundle written by [`write_pattern_bundle`] or by an external
/// exporter following the same layout.
pub fn load_pattern_bundle(dir: impl AsRef<Path>) -> Result<PatternGrid, EmModelError> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| EmModelError::io(&mpath, e))?;
    let manifest: PatternManifest =
        serde_json::from_str(&text).map_err(|e| EmModelError::Manifest(format!("{}: {e}", mpath.display())))?;
    if manifest.ports == 0 || manifest.frequencies_hz.is_empty() {
        return Err(EmModelError::Manifest("manifest needs ports >= 1 and at least one frequency".into()));
    }
    let grid = build_quadrature(
        manifest.support,
        Resolution { theta_nodes: manifest.grid.theta_nodes, phi_nodes: manifest.grid.phi_nodes },
    )?;
    if grid.len() != manifest.grid.node_count {
        return Err(EmModelError::GridMismatch(format!(
            "manifest declares {} nodes, its rule produces {}",
            manifest.grid.node_count,
            grid.len()
        )));
    }
    let nodes = grid.len();
    let mut e_theta = Vec::with_capacity(manifest.frequencies_hz.len());
    let mut e_phi = Vec::with_capacity(manifest.frequencies_hz.len());
    for t in 0..manifest.frequencies_hz.len() {
        let fpath = dir.join(format!("pattern_f{}.csv", t + 1));
        let origin = fpath.display().to_string();
        let text = std::fs::read_to_string(&fpath).map_err(|e| EmModelError::io(&fpath, e))?;
        let mut et = vec![Complex64::default(); manifest.ports * nodes];
        let mut ep = vec![Complex64::default(); manifest.ports * nodes];
        let mut filled = vec![0usize; manifest.ports];
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(EmModelError::parse(&origin, 1, format!("expected header `{CSV_HEADER}`"))),
        }
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(EmModelError::parse(&origin, lineno, format!("{} columns, expected 7", cols.len())));
            }
            let port: usize = cols[0]
                .trim()
                .parse()
                .map_err(|_| EmModelError::parse(&origin, lineno, format!("bad port `{}`", cols[0])))?;
            let mut v = [0.0f64; 6];
            for (slot, s) in v.iter_mut().zip(&cols[1..]) {
                *slot = s
                    .trim()
                    .parse()
                    .map_err(|_| EmModelError::parse(&origin, lineno, format!("bad number `{s}`")))?;
            }
            if port >= manifest.ports {
                return Err(EmModelError::PortCountMismatch(format!(
                    "{origin}:{lineno}: port {port} but manifest declares {} ports",
                    manifest.ports
                )));
            }
            let k = filled[port];
            if k >= nodes {
                return Err(EmModelError::GridMismatch(format!(
                    "{origin}:{lineno}: port {port} has more than {nodes} rows"
                )));
            }
            if (v[0] - grid.theta()[k]).abs() > NODE_TOLERANCE || (v[1] - grid.phi()[k]).abs() > NODE_TOLERANCE {
                return Err(EmModelError::GridMismatch(format!(
                    "{origin}:{lineno}: node ({}, {}) does not match grid node {k} ({}, {})",
                    v[0],
                    v[1],
                    grid.theta()[k],
                    grid.phi()[k]
                )));
            }
            et[port * nodes + k] = Complex64::new(v[2], v[3]);
            ep[port * nodes + k] = Complex64::new(v[4], v[5]);
            filled[port] += 1;
        }
        for (port, &n) in filled.iter().enumerate() {
            if n == 0 {
                return Err(EmModelError::MissingPort { frequency: t + 1, port });
            }
            if n != nodes {
                return Err(EmModelError::GridMismatch(format!(
                    "{origin}: port {port} has {n} rows, grid has {nodes} nodes"
                )));
            }
        }
        e_theta.push(et);
        e_phi.push(ep);
    }
    PatternGrid::new(manifest.ports, manifest.frequencies_hz, grid, e_theta, e_phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid() -> QuadratureGrid {
        build_quadrature(PasSupport::UpperHemisphere, Resolution { theta_nodes: 2, phi_nodes: 2 }).unwrap()
    }

    fn sample(ports: usize) -> PatternGrid {
        let grid = tiny_grid();
        let n = ports * grid.len();
        let et = (0..n).map(|i| Complex64::new(i as f64 / 7.0, -(i as f64).sqrt())).collect();
        let ep = (0..n).map(|i| Complex64::new(1.0 / (i as f64 + 3.0), 1e-300)).collect();
        PatternGrid::new(ports, vec![2.5e9], grid, vec![et], vec![ep]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let p = sample(2);
        assert_eq!(p.nodes(), 4);
        let dir = tempfile::tempdir().unwrap();
        write_pattern_bundle(&p, dir.path()).unwrap();
        let back = load_pattern_bundle(dir.path()).unwrap();
        assert_eq!(back.ports(), 2);
        assert_eq!(back, p);
    }

    #[test]
    fn missing_port_table_is_an_error() {
        let p = sample(2);
        let dir = tempfile::tempdir().unwrap();
        write_pattern_bundle(&p, dir.path()).unwrap();
        // Claim one more port than the tables contain.
        let mpath = dir.path().join("manifest.json");
        let mut m: PatternManifest = serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
        m.ports = 3;
        std::fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(
            load_pattern_bundle(dir.path()),
            Err(EmModelError::MissingPort { frequency: 1, port: 2 })
        ));
    }

    #[test]
    fn shifted_node_is_a_grid_mismatch() {
        let p = sample(1);
        let dir = tempfile::tempdir().unwrap();
        write_pattern_bundle(&p, dir.path()).unwrap();
        let f = dir.path().join("pattern_f1.csv");
        let text = std::fs::read_to_string(&f).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cols: Vec<String> = lines[2].split(',').map(String::from).collect();
        cols[2] = "1.0".into();
        lines[2] = cols.join(",");
        std::fs::write(&f, lines.join("\n")).unwrap();
        assert!(matches!(load_pattern_bundle(dir.path()), Err(EmModelError::GridMismatch(_))));
    }

    #[test]
    fn port_count_must_match_network() {
        let p = sample(2);
        let z = crate::numerics::ComplexMatrix::identity(3, 3);
        let net = MultiportNetwork::new(vec![2.5e9], vec![z]).unwrap();
        assert!(matches!(p.check_compatible(&net), Err(EmModelError::PortCountMismatch(_))));
    }
}
