//! Angular quadrature over the scattering support.
//!
//! Polar angle `theta` is measured from zenith. Two-dimensional supports use
//! Gauss-Legendre in `cos(theta)` times a uniform trapezoid in `phi`; the
//! horizon ring is a uniform rule at `theta = pi/2` whose weights sum to `2 pi`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PasSupport {
    FullSphere,
    UpperHemisphere,
    HorizonRing,
}

impl PasSupport {
    /// Solid measure of the support (circumference for the ring).
    pub fn measure(self) -> f64 {
        match self {
            PasSupport::FullSphere => 4.0 * PI,
            PasSupport::UpperHemisphere | PasSupport::HorizonRing => 2.0 * PI,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PasSupport::FullSphere => "full-sphere",
            PasSupport::UpperHemisphere => "upper-hemisphere",
            PasSupport::HorizonRing => "horizon-ring",
        }
    }

    /// Whether the direction `(theta, phi)` lies on the support.
    pub fn contains(self, theta: f64) -> bool {
        match self {
            PasSupport::FullSphere => true,
            PasSupport::UpperHemisphere => theta <= FRAC_PI_2,
            PasSupport::HorizonRing => (theta - FRAC_PI_2).abs() < 1e-12,
        }
    }
}

impl fmt::Display for PasSupport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PasSupport {
    type Err = NumericsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-sphere" => Ok(PasSupport::FullSphere),
            "upper-hemisphere" => Ok(PasSupport::UpperHemisphere),
            "horizon-ring" => Ok(PasSupport::HorizonRing),
            other => Err(NumericsError::UnknownSupport(other.to_string())),
        }
    }
}

/// Node counts. The ring only uses `phi_nodes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub theta_nodes: usize,
    pub phi_nodes: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { theta_nodes: 64, phi_nodes: 128 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    support: PasSupport,
    resolution: Resolution,
    theta: Vec<f64>,
    phi: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn support(&self) -> PasSupport {
        self.support
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.theta
            .iter()
            .zip(&self.phi)
            .zip(&self.weights)
            .map(|((&t, &p), &w)| (t, p, w))
    }

    pub fn integrate<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        self.nodes().map(|(t, p, w)| w * f(t, p)).sum()
    }
}

/// Builds the quadrature rule for a scattering support.
pub fn build_quadrature(
    support: PasSupport,
    resolution: Resolution,
) -> Result<QuadratureGrid, NumericsError> {
    let nphi = resolution.phi_nodes;
    if nphi < 2 {
        return Err(NumericsError::Resolution(format!("phi_nodes = {nphi}, need >= 2")));
    }
    let dphi = 2.0 * PI / nphi as f64;
    let phis: Vec<f64> = (0..nphi).map(|k| k as f64 * dphi).collect();

    let (theta, phi, weights) = match support {
        PasSupport::HorizonRing => (vec![FRAC_PI_2; nphi], phis, vec![dphi; nphi]),
        PasSupport::FullSphere | PasSupport::UpperHemisphere => {
            let nt = resolution.theta_nodes;
            if nt < 2 {
                return Err(NumericsError::Resolution(format!("theta_nodes = {nt}, need >= 2")));
            }
            let (x, w) = gauss_legendre(nt);
            // Map [-1, 1] onto the cos(theta) interval of the support.
            let (lo, hi) = match support {
                PasSupport::FullSphere => (-1.0, 1.0),
                _ => (0.0, 1.0),
            };
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let mut theta = Vec::with_capacity(nt * nphi);
            let mut phi = Vec::with_capacity(nt * nphi);
            let mut weights = Vec::with_capacity(nt * nphi);
            for (xi, wi) in x.iter().zip(&w) {
                let t = (mid + half * xi).clamp(-1.0, 1.0).acos();
                for &p in &phis {
                    theta.push(t);
                    phi.push(p);
                    weights.push(wi * half * dphi);
                }
            }
            (theta, phi, weights)
        }
    };
    Ok(QuadratureGrid { support, resolution, theta, phi, weights })
}

/// Gauss-Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sphere_measure() {
        for &(nt, np) in &[(2, 2), (7, 9), (64, 128)] {
            let g = build_quadrature(PasSupport::FullSphere, Resolution { theta_nodes: nt, phi_nodes: np })
                .unwrap();
            let s: f64 = g.weights().iter().sum();
            assert!((s - 4.0 * PI).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn hemisphere_measure() {
        let g = build_quadrature(PasSupport::UpperHemisphere, Resolution::default()).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 2.0 * PI).abs() < 1e-12);
        assert!(g.theta().iter().all(|&t| (0.0..=FRAC_PI_2).contains(&t)));
    }

    #[test]
    fn ring_measure() {
        let g = build_quadrature(PasSupport::HorizonRing, Resolution { theta_nodes: 1, phi_nodes: 360 })
            .unwrap();
        assert_eq!(g.len(), 360);
        let s: f64 = g.weights().iter().sum();
        assert!((s - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn rejects_low_resolution() {
        assert!(build_quadrature(PasSupport::FullSphere, Resolution { theta_nodes: 1, phi_nodes: 8 }).is_err());
        assert!(build_quadrature(PasSupport::HorizonRing, Resolution { theta_nodes: 0, phi_nodes: 1 }).is_err());
    }

    #[test]
    fn unknown_support_name() {
        assert!("upper-hemisphere".parse::<PasSupport>().is_ok());
        assert!(matches!("cone".parse::<PasSupport>(), Err(NumericsError::UnknownSupport(_))));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        for deg in 0..20 {
            let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg)).sum();
            let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((got - want).abs() < 1e-14, "deg {deg}: {got} vs {want}");
        }
    }

    // Associated Legendre P_l^m by upward recurrence in l.
    fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
        let mut pmm = 1.0;
        let s = (1.0 - x * x).sqrt();
        for i in 0..m {
            pmm *= -((2 * i + 1) as f64) * s;
        }
        if l == m {
            return pmm;
        }
        let mut pm1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pm1;
        }
        let mut pll = 0.0;
        for ll in m + 2..=l {
            pll = ((2 * ll - 1) as f64 * x * pm1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pm1;
            pm1 = pll;
        }
        pll
    }

    #[test]
    fn spherical_harmonics_exactness() {
        let g = build_quadrature(PasSupport::FullSphere, Resolution { theta_nodes: 16, phi_nodes: 32 })
            .unwrap();
        for l in 0..=15 {
            for m in 0..=l {
                let norm = (1..=2 * m).fold(1.0, |a, k| a * (l + m + 1 - k) as f64).sqrt().max(1.0);
                for trig in [f64::cos, f64::sin] {
                    let v = g.integrate(|t, p| assoc_legendre(l, m, t.cos()) * trig(m as f64 * p) / norm);
                    let want = if l == 0 && trig(0.0) == 1.0 { 4.0 * PI } else { 0.0 };
                    assert!((v - want).abs() < 1e-9, "l={l} m={m}: {v}");
                }
            }
        }
    }
}
