//! Synthetic stand-ins for full-wave solver output.
//!
//! The pixel surrogate places one internal port on every edge between
//! adjacent pixels of a rectangular layout. Its impedance matrix is
//! `Z = D + K + jX`: configured self impedances, a distance-decayed random
//! symmetric coupling, and a random symmetric reactance. The real part is
//! projected onto the PSD cone by eigenvalue clipping so the network is
//! passive. Each port radiates as a short current element along its edge,
//! phase-shifted by its position on the layout.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmModelError, FrequencyGrid, MultiportNetwork, PatternGrid};
use crate::numerics::{ComplexMatrix, QuadratureGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PixelLayout {
    /// Pixels per row.
    pub columns: usize,
    /// Pixel pitch at the reference frequency.
    pub pitch_wavelengths: f64,
    /// Amplitude of the feed gap's own radiation relative to a pixel edge.
    pub feed_element_scale: f64,
}

impl Default for PixelLayout {
    fn default() -> Self {
        Self { columns: 6, pitch_wavelengths: 0.15, feed_element_scale: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingParams {
    /// Frequency at which the layout pitch and reactances are specified.
    pub reference_frequency_hz: f64,
    pub feed_resistance_ohm: f64,
    pub feed_reactance_ohm: f64,
    pub self_resistance_ohm: f64,
    pub self_reactance_ohm: f64,
    pub self_reactance_spread_ohm: f64,
    /// Feed-to-internal coupling magnitude at zero distance.
    pub feed_coupling_ohm: f64,
    /// Internal-to-internal coupling magnitude at zero distance.
    pub mutual_coupling_ohm: f64,
    pub decay_wavelengths: f64,
}

impl Default for CouplingParams {
    fn default() -> Self {
        Self {
            reference_frequency_hz: 2.5e9,
            feed_resistance_ohm: 50.0,
            feed_reactance_ohm: 0.0,
            self_resistance_ohm: 0.5,
            self_reactance_ohm: 0.0,
            self_reactance_spread_ohm: 30.0,
            feed_coupling_ohm: 80.0,
            mutual_coupling_ohm: 120.0,
            decay_wavelengths: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PortSite {
    x: f64,
    y: f64,
    /// Current direction in the layout plane.
    dir: (f64, f64),
}

fn port_sites(q: usize, layout: &PixelLayout) -> Vec<PortSite> {
    let cols = layout.columns.max(1);
    let pitch = layout.pitch_wavelengths;
    let mut sites = Vec::with_capacity(q);
    let mut row = 0usize;
    'outer: loop {
        for c in 0..cols {
            if c + 1 < cols {
                sites.push(PortSite { x: (c as f64 + 0.5) * pitch, y: row as f64 * pitch, dir: (1.0, 0.0) });
                if sites.len() == q {
                    break 'outer;
                }
            }
            sites.push(PortSite { x: c as f64 * pitch, y: (row as f64 + 0.5) * pitch, dir: (0.0, 1.0) });
            if sites.len() == q {
                break 'outer;
            }
        }
        row += 1;
    }
    let (mx, my) = sites.iter().fold((0.0, 0.0), |(a, b), s| (a + s.x, b + s.y));
    let (mx, my) = (mx / q as f64, my / q as f64);
    for s in &mut sites {
        s.x -= mx;
        s.y -= my;
    }
    sites
}

/// Far field of a short planar current element at `(x, y)` (wavelengths),
/// evaluated at `ratio = f / f_ref`.
fn element_field(site: &PortSite, theta: f64, phi: f64, ratio: f64) -> (Complex64, Complex64) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let (ax, ay) = site.dir;
    let e_theta = ax * ct * cp + ay * ct * sp;
    let e_phi = -ax * sp + ay * cp;
    let phase = 2.0 * PI * ratio * (site.x * st * cp + site.y * st * sp);
    let w = Complex64::from_polar(1.0, phase);
    (w * e_theta, w * e_phi)
}

/// Builds a reciprocal, passive `(Q+1)`-port surrogate and its open-circuit
/// patterns. Deterministic in `seed`.
pub fn synth_pixel_surrogate(
    q: usize,
    layout: &PixelLayout,
    seed: u64,
    params: &CouplingParams,
    freqs: &FrequencyGrid,
    grid: &QuadratureGrid,
) -> Result<(MultiportNetwork, PatternGrid), EmModelError> {
    if q == 0 {
        return Err(EmModelError::Invalid("surrogate needs at least one internal port".into()));
    }
    if !(layout.pitch_wavelengths > 0.0 && params.decay_wavelengths > 0.0 && params.reference_frequency_hz > 0.0) {
        return Err(EmModelError::Invalid("pitch, decay length and reference frequency must be positive".into()));
    }
    let sites = port_sites(q, layout);
    let n = q + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut resist = DMatrix::<f64>::zeros(n, n);
    let mut react = DMatrix::<f64>::zeros(n, n);
    resist[(0, 0)] = params.feed_resistance_ohm;
    react[(0, 0)] = params.feed_reactance_ohm;
    for i in 1..n {
        resist[(i, i)] = params.self_resistance_ohm;
        react[(i, i)] = params.self_reactance_ohm + params.self_reactance_spread_ohm * rng.gen_range(-1.0..1.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            let (scale, dist) = if i == 0 {
                let s = &sites[j - 1];
                (params.feed_coupling_ohm, s.x.hypot(s.y))
            } else {
                let (a, b) = (&sites[i - 1], &sites[j - 1]);
                (params.mutual_coupling_ohm, (a.x - b.x).hypot(a.y - b.y))
            };
            let mag = scale * (-dist / params.decay_wavelengths).exp();
            let r = mag * rng.gen_range(-1.0..1.0);
            let x = mag * rng.gen_range(-1.0..1.0);
            resist[(i, j)] = r;
            resist[(j, i)] = r;
            react[(i, j)] = x;
            react[(j, i)] = x;
        }
    }
    let resist = clip_to_psd(resist);

    let mut z = Vec::with_capacity(freqs.len());
    let mut e_theta = Vec::with_capacity(freqs.len());
    let mut e_phi = Vec::with_capacity(freqs.len());
    let feed_site = PortSite { x: 0.0, y: 0.0, dir: (1.0, 0.0) };
    for &f in freqs.samples() {
        let ratio = f / params.reference_frequency_hz;
        z.push(ComplexMatrix::from_fn(n, n, |i, j| Complex64::new(resist[(i, j)], ratio * react[(i, j)])));
        let mut et = Vec::with_capacity(n * grid.len());
        let mut ep = Vec::with_capacity(n * grid.len());
        for (k, site) in std::iter::once(&feed_site).chain(&sites).enumerate() {
            let amp = if k == 0 { layout.feed_element_scale } else { 1.0 };
            for (theta, phi, _) in grid.nodes() {
                let (a, b) = element_field(site, theta, phi, ratio);
                et.push(a * amp);
                ep.push(b * amp);
            }
        }
        e_theta.push(et);
        e_phi.push(ep);
    }
    let net = MultiportNetwork::new(freqs.samples().to_vec(), z)?;
    let patterns = PatternGrid::new(n, freqs.samples().to_vec(), grid.clone(), e_theta, e_phi)?;
    Ok((net, patterns))
}

fn clip_to_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// `count` vertically polarized dipole patterns translated along x with
/// uniform spacing `aperture / (count - 1)` wavelengths. Each entry is one
/// state; the frequency is recorded as 0 because the spacing is already in
/// wavelengths.
pub fn synth_dipole_translations(
    count: usize,
    aperture_wavelengths: f64,
    grid: &QuadratureGrid,
) -> Result<PatternGrid, EmModelError> {
    if count < 2 {
        return Err(EmModelError::Invalid("dipole set needs at least two ports".into()));
    }
    if !(aperture_wavelengths > 0.0 && aperture_wavelengths.is_finite()) {
        return Err(EmModelError::Invalid("aperture must be positive".into()));
    }
    let spacing = aperture_wavelengths / (count - 1) as f64;
    let mut et = Vec::with_capacity(count * grid.len());
    for n in 0..count {
        for (theta, phi, _) in grid.nodes() {
            let phase = 2.0 * PI * n as f64 * spacing * phi.cos();
            et.push(Complex64::from_polar(theta.sin(), phase));
        }
    }
    let ep = vec![Complex64::default(); et.len()];
    PatternGrid::new(count, vec![0.0], grid.clone(), vec![et], vec![ep])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{build_quadrature, PasSupport, Resolution};

    fn small_grid() -> QuadratureGrid {
        build_quadrature(PasSupport::UpperHemisphere, Resolution { theta_nodes: 6, phi_nodes: 8 }).unwrap()
    }

    fn one_freq() -> FrequencyGrid {
        FrequencyGrid::uniform(2.5e9, 2.5e9, 1).unwrap()
    }

    #[test]
    fn single_internal_port_is_reciprocal_and_passive() {
        for seed in 0..20 {
            let (net, pats) =
                synth_pixel_surrogate(1, &PixelLayout::default(), seed, &CouplingParams::default(), &one_freq(), &small_grid())
                    .unwrap();
            assert_eq!(net.ports(), 2);
            assert_eq!(pats.ports(), 2);
            assert!(net.max_asymmetry() <= 1e-9);
            assert!(net.min_passivity_margin() >= -1e-9);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let run = || {
            synth_pixel_surrogate(20, &PixelLayout::default(), 42, &CouplingParams::default(), &one_freq(), &small_grid())
                .unwrap()
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn seeds_differ() {
        let mk = |seed| {
            synth_pixel_surrogate(20, &PixelLayout::default(), seed, &CouplingParams::default(), &one_freq(), &small_grid())
                .unwrap()
                .0
        };
        let (a, b) = (mk(1), mk(2));
        let diff = (a.z(0) - b.z(0)).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn invariants_hold_at_full_size_and_several_frequencies() {
        let freqs = FrequencyGrid::uniform(2.45e9, 2.55e9, 3).unwrap();
        let (net, pats) =
            synth_pixel_surrogate(60, &PixelLayout::default(), 7, &CouplingParams::default(), &freqs, &small_grid()).unwrap();
        assert_eq!(net.internal_ports(), 60);
        assert_eq!(pats.frequencies().len(), 3);
        assert!(net.max_asymmetry() <= 1e-9);
        assert!(net.min_passivity_margin() >= -1e-9);
    }

    #[test]
    fn coupling_decays_with_distance() {
        let params = CouplingParams { self_reactance_spread_ohm: 0.0, decay_wavelengths: 0.15, ..Default::default() };
        let layout = PixelLayout { pitch_wavelengths: 0.1, ..Default::default() };
        let sites = port_sites(60, &layout);
        let (net, _) = synth_pixel_surrogate(60, &layout, 3, &params, &one_freq(), &small_grid()).unwrap();
        let z = net.z(0);
        let mut near = 0.0;
        let mut far = 0.0;
        let (mut nn, mut nf) = (0, 0);
        for i in 0..60 {
            for j in i + 1..60 {
                let d = (sites[i].x - sites[j].x).hypot(sites[i].y - sites[j].y);
                let m = z[(i + 1, j + 1)].im.abs();
                if d < 0.1 {
                    near += m;
                    nn += 1;
                } else if d > 0.4 {
                    far += m;
                    nf += 1;
                }
            }
        }
        assert!(near / nn as f64 > 5.0 * far / nf as f64);
    }

    #[test]
    fn dipole_phase_terms() {
        let grid = build_quadrature(PasSupport::HorizonRing, Resolution { theta_nodes: 0, phi_nodes: 4 }).unwrap();
        let p = synth_dipole_translations(2, 0.5, &grid).unwrap();
        // Node 1 sits at phi = pi/2, node 0 at phi = 0.
        let (a, b) = (p.e_theta(0, 0), p.e_theta(0, 1));
        assert!((a[1] - b[1]).norm() < 1e-15);
        let dphase = (b[0] / a[0]).arg().abs();
        assert!((dphase - PI).abs() < 1e-12);
        assert!(p.e_phi(0, 1).iter().all(|v| *v == Complex64::default()));
    }
}
