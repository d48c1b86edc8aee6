use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{parse_touchstone, EmModelError, FrequencyGrid};
use crate::numerics::{min_symmetric_eigenvalue, norm_inf, ComplexMatrix};

/// Relative asymmetry above which a network is flagged as non-reciprocal.
pub const RECIPROCITY_TOLERANCE: f64 = 1e-9;

/// Impedance matrix of the feed plus `Q` internal ports at each frequency.
/// Index 0 is the external feed.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiportNetwork {
    frequencies: FrequencyGrid,
    z: Vec<ComplexMatrix>,
    reciprocity_warning: bool,
}

impl MultiportNetwork {
    /// Builds a network from per-frequency matrices; samples are sorted ascending.
    pub fn new(frequencies: Vec<f64>, z: Vec<ComplexMatrix>) -> Result<Self, EmModelError> {
        if frequencies.len() != z.len() {
            return Err(EmModelError::Invalid(format!(
                "{} frequencies but {} impedance matrices",
                frequencies.len(),
                z.len()
            )));
        }
        let mut pairs: Vec<(f64, ComplexMatrix)> = frequencies.into_iter().zip(z).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (freqs, z): (Vec<f64>, Vec<ComplexMatrix>) = pairs.into_iter().unzip();
        let frequencies = FrequencyGrid::from_samples(freqs)?;
        let n = z[0].nrows();
        if n < 1 {
            return Err(EmModelError::Invalid("network needs at least the feed port".into()));
        }
        for (t, m) in z.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(EmModelError::Invalid(format!(
                    "impedance matrix {t} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(EmModelError::Invalid(format!("impedance matrix {t} has non-finite entries")));
            }
        }
        let reciprocity_warning = z.iter().any(|m| asymmetry(m) > RECIPROCITY_TOLERANCE);
        Ok(Self { frequencies, z, reciprocity_warning })
    }

    /// Total port count `Q + 1`.
    pub fn ports(&self) -> usize {
        self.z[0].nrows()
    }

    /// Internal port count `Q`.
    pub fn internal_ports(&self) -> usize {
        self.ports() - 1
    }

    pub fn frequencies(&self) -> &FrequencyGrid {
        &self.frequencies
    }

    pub fn z(&self, t: usize) -> &ComplexMatrix {
        &self.z[t]
    }

    pub fn z_e(&self, t: usize) -> Complex64 {
        self.z[t][(0, 0)]
    }

    pub fn z_ei(&self, t: usize) -> ComplexMatrix {
        let q = self.internal_ports();
        self.z[t].view((0, 1), (1, q)).into_owned()
    }

    pub fn z_ie(&self, t: usize) -> ComplexMatrix {
        let q = self.internal_ports();
        self.z[t].view((1, 0), (q, 1)).into_owned()
    }

    pub fn z_i(&self, t: usize) -> ComplexMatrix {
        let q = self.internal_ports();
        self.z[t].view((1, 1), (q, q)).into_owned()
    }

    /// Set when any sample violates reciprocity beyond tolerance. Measured
    /// data may be slightly asymmetric, so this is informational.
    pub fn reciprocity_warning(&self) -> bool {
        self.reciprocity_warning
    }

    /// Worst `||Z - Z^T||_inf / ||Z||_inf` over frequencies.
    pub fn max_asymmetry(&self) -> f64 {
        self.z.iter().map(asymmetry).fold(0.0, f64::max)
    }

    /// Worst (most negative) eigenvalue of the symmetric part of `Re Z`,
    /// relative to `||Re Z||_inf`.
    pub fn min_passivity_margin(&self) -> f64 {
        self.z
            .iter()
            .map(|m| {
                let re: DMatrix<f64> = m.map(|v| v.re);
                let scale = re.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
                min_symmetric_eigenvalue(&re) / scale.max(f64::MIN_POSITIVE)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// The same network restricted to a subset of its frequency samples.
    pub fn select_frequencies(&self, indices: &[usize]) -> Result<Self, EmModelError> {
        let freqs = indices.iter().map(|&i| self.frequencies.samples()[i]).collect();
        let z = indices.iter().map(|&i| self.z[i].clone()).collect();
        Self::new(freqs, z)
    }
}

fn asymmetry(m: &ComplexMatrix) -> f64 {
    let scale = norm_inf(m);
    if scale == 0.0 {
        return 0.0;
    }
    norm_inf(&(m - m.transpose())) / scale
}

/// Reads a network file, dispatching on content: native `# Zmatrix` text or
/// Touchstone v2 Z-parameters.
pub fn load_network(path: impl AsRef<Path>) -> Result<MultiportNetwork, EmModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EmModelError::io(path, e))?;
    let origin = path.display().to_string();
    let first = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    if first.starts_with("# Zmatrix") {
        parse_native_network(&text, &origin)
    } else {
        parse_touchstone(&text, &origin)
    }
}

fn frequency_scale(unit: &str) -> Option<f64> {
    match unit.to_ascii_lowercase().as_str() {
        "hz" => Some(1.0),
        "khz" => Some(1e3),
        "mhz" => Some(1e6),
        "ghz" => Some(1e9),
        _ => None,
    }
}

pub(crate) fn parse_frequency_unit(unit: &str) -> Option<f64> {
    frequency_scale(unit)
}

/// Parses the native format:
///
/// ```text
/// # Zmatrix ports=<Q+1> freqs=<T> unit=Hz
/// freq <value>
/// re:im,re:im,...      (Q+1 rows)
/// ```
pub fn parse_native_network(text: &str, origin: &str) -> Result<MultiportNetwork, EmModelError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| EmModelError::parse(origin, 1, "empty file"))?;
    let mut ports = None;
    let mut freqs = None;
    let mut scale = 1.0;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#") || fields.next() != Some("Zmatrix") {
        return Err(EmModelError::parse(origin, hline, "expected `# Zmatrix` header"));
    }
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| EmModelError::parse(origin, hline, format!("malformed header field `{field}`")))?;
        match key {
            "ports" => ports = value.parse::<usize>().ok(),
            "freqs" => freqs = value.parse::<usize>().ok(),
            "unit" => {
                scale = frequency_scale(value)
                    .ok_or_else(|| EmModelError::parse(origin, hline, format!("unknown unit `{value}`")))?
            }
            other => return Err(EmModelError::parse(origin, hline, format!("unknown header key `{other}`"))),
        }
    }
    let ports = ports.filter(|&p| p >= 1).ok_or_else(|| EmModelError::parse(origin, hline, "missing ports="))?;
    let freqs = freqs.filter(|&t| t >= 1).ok_or_else(|| EmModelError::parse(origin, hline, "missing freqs="))?;

    let mut last_line = hline;
    let mut frequencies = Vec::with_capacity(freqs);
    let mut matrices = Vec::with_capacity(freqs);
    for _ in 0..freqs {
        let (fl, fline) = lines.next().ok_or_else(|| {
            EmModelError::parse(origin, last_line + 1, "unexpected end of file, expected `freq <value>`")
        })?;
        last_line = fl;
        let value = fline
            .strip_prefix("freq")
            .map(str::trim)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| EmModelError::parse(origin, fl, "expected `freq <value>`"))?;
        frequencies.push(value * scale);
        let mut m = ComplexMatrix::zeros(ports, ports);
        for r in 0..ports {
            let (rl, row) = lines.next().ok_or_else(|| {
                EmModelError::parse(origin, last_line + 1, format!("unexpected end of file in row {r} of block"))
            })?;
            last_line = rl;
            let entries: Vec<&str> = row.split(',').map(str::trim).collect();
            if entries.len() != ports {
                return Err(EmModelError::parse(
                    origin,
                    rl,
                    format!("row has {} entries, expected {ports} (matrix must be square)", entries.len()),
                ));
            }
            for (c, entry) in entries.iter().enumerate() {
                m[(r, c)] = parse_re_im(entry).ok_or_else(|| {
                    EmModelError::parse(origin, rl, format!("malformed entry `{entry}`, expected re:im"))
                })?;
            }
        }
        matrices.push(m);
    }
    if let Some((l, _)) = lines.next() {
        return Err(EmModelError::parse(origin, l, "trailing data after last frequency block"));
    }
    MultiportNetwork::new(frequencies, matrices)
}

fn parse_re_im(s: &str) -> Option<Complex64> {
    let (re, im) = s.split_once(':')?;
    Some(Complex64::new(re.trim().parse().ok()?, im.trim().parse().ok()?))
}

/// Writes the native format with 17 significant digits per component.
pub fn write_native_network(net: &MultiportNetwork, path: impl AsRef<Path>) -> Result<(), EmModelError> {
    let path = path.as_ref();
    let n = net.ports();
    let mut out = String::new();
    let _ = writeln!(out, "# Zmatrix ports={} freqs={} unit=Hz", n, net.frequencies().len());
    for (t, f) in net.frequencies().samples().iter().enumerate() {
        let _ = writeln!(out, "freq {f:.16e}");
        let z = net.z(t);
        for r in 0..n {
            let row: Vec<String> = (0..n).map(|c| format!("{:.16e}:{:.16e}", z[(r, c)].re, z[(r, c)].im)).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
    }
    std::fs::write(path, out).map_err(|e| EmModelError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_port_read_back() {
        let text = "# Zmatrix ports=2 freqs=1 unit=Hz\nfreq 2.5e9\n50:0,0:0\n0:0,50:0\n";
        let net = parse_native_network(text, "mem").unwrap();
        assert_eq!(net.internal_ports(), 1);
        assert_eq!(net.z_e(0), c(50.0, 0.0));
        assert_eq!(net.z_ei(0)[(0, 0)], c(0.0, 0.0));
        assert!(!net.reciprocity_warning());
    }

    #[test]
    fn three_frequency_blocks() {
        let mut text = String::from("# Zmatrix ports=1 freqs=3 unit=GHz\n");
        for f in ["2.6", "2.4", "2.5"] {
            text.push_str(&format!("freq {f}\n50:1\n"));
        }
        let net = parse_native_network(&text, "mem").unwrap();
        assert_eq!(net.frequencies().len(), 3);
        assert_eq!(net.frequencies().lower(), 2.4e9);
        assert_eq!(net.frequencies().upper(), 2.6e9);
    }

    #[test]
    fn truncated_file_names_line() {
        let text = "# Zmatrix ports=2 freqs=1 unit=Hz\nfreq 1e9\n50:0,0:0\n";
        match parse_native_network(text, "net.z") {
            Err(EmModelError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_square_row_rejected() {
        let text = "# Zmatrix ports=2 freqs=1 unit=Hz\nfreq 1e9\n50:0,0:0,1:0\n0:0,50:0\n";
        match parse_native_network(text, "mem") {
            Err(EmModelError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("square"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn asymmetric_data_is_flagged_not_fatal() {
        let text = "# Zmatrix ports=2 freqs=1 unit=Hz\nfreq 1e9\n50:0,5:0\n4:0,50:0\n";
        let net = parse_native_network(text, "mem").unwrap();
        assert!(net.reciprocity_warning());
    }

    #[test]
    fn write_then_read_is_identity() {
        let z = ComplexMatrix::from_row_slice(
            2,
            2,
            &[c(50.123456789012345, -1.0 / 3.0), c(1e-17, 2.0), c(1e-17, 2.0), c(7.0, 1e300)],
        );
        let net = MultiportNetwork::new(vec![2.5e9], vec![z]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.z");
        write_native_network(&net, &p).unwrap();
        assert_eq!(load_network(&p).unwrap(), net);
    }
}
