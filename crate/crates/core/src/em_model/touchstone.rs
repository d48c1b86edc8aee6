//! Touchstone ingestion restricted to impedance (Z) parameters.
//!
//! Version 2 files carry Z data in ohms. Files without a `[Version]` keyword
//! are read with version 1 conventions, where Z data is normalized to the
//! option-line reference resistance.

use num_complex::Complex64;

use super::network::parse_frequency_unit;
use super::{EmModelError, MultiportNetwork};
use crate::numerics::ComplexMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
enum DataFormat {
    RealImag,
    MagAngle,
    DbAngle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MatrixFormat {
    Full,
    Lower,
    Upper,
}

pub fn parse_touchstone(text: &str, origin: &str) -> Result<MultiportNetwork, EmModelError> {
    let mut version2 = false;
    let mut ports: Option<usize> = None;
    let mut two_port_21_first = None;
    let mut declared_freqs: Option<usize> = None;
    let mut matrix_format = MatrixFormat::Full;
    let mut unit_scale = 1e9;
    let mut format = DataFormat::MagAngle;
    let mut reference = 50.0;
    let mut saw_option = false;
    let mut in_data = false;
    let mut tokens: Vec<(usize, f64)> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = raw.split('!').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(option) = line.strip_prefix('#') {
            saw_option = true;
            let mut fields = option.split_whitespace().map(str::to_ascii_uppercase);
            while let Some(f) = fields.next() {
                match f.as_str() {
                    "HZ" | "KHZ" | "MHZ" | "GHZ" => unit_scale = parse_frequency_unit(&f).unwrap(),
                    "Z" => {}
                    "S" | "Y" | "H" | "G" => {
                        return Err(EmModelError::parse(
                            origin,
                            lineno,
                            format!("{f}-parameters are not supported, only Z-parameter data is accepted"),
                        ))
                    }
                    "RI" => format = DataFormat::RealImag,
                    "MA" => format = DataFormat::MagAngle,
                    "DB" => format = DataFormat::DbAngle,
                    "R" => {
                        reference = fields
                            .next()
                            .and_then(|v| v.parse::<f64>().ok())
                            .ok_or_else(|| EmModelError::parse(origin, lineno, "R needs a numeric value"))?
                    }
                    other => {
                        return Err(EmModelError::parse(origin, lineno, format!("unknown option `{other}`")))
                    }
                }
            }
            continue;
        }
        if line.starts_with('[') {
            let close = line
                .find(']')
                .ok_or_else(|| EmModelError::parse(origin, lineno, "unterminated keyword"))?;
            let keyword = line[1..close].trim().to_ascii_lowercase();
            let arg = line[close + 1..].trim();
            in_data = false;
            match keyword.as_str() {
                "version" => version2 = arg.starts_with('2'),
                "number of ports" => {
                    ports = Some(arg.parse().map_err(|_| {
                        EmModelError::parse(origin, lineno, format!("bad port count `{arg}`"))
                    })?)
                }
                "two-port data order" => two_port_21_first = Some(arg == "21_12"),
                "number of frequencies" => {
                    declared_freqs = Some(arg.parse().map_err(|_| {
                        EmModelError::parse(origin, lineno, format!("bad frequency count `{arg}`"))
                    })?)
                }
                "matrix format" => {
                    matrix_format = match arg.to_ascii_lowercase().as_str() {
                        "full" => MatrixFormat::Full,
                        "lower" => MatrixFormat::Lower,
                        "upper" => MatrixFormat::Upper,
                        _ => return Err(EmModelError::parse(origin, lineno, format!("bad matrix format `{arg}`"))),
                    }
                }
                "network data" => in_data = true,
                "end" | "noise data" => break,
                _ => {}
            }
            continue;
        }
        if in_data || !version2 {
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| EmModelError::parse(origin, lineno, format!("non-numeric value `{tok}`")))?;
                tokens.push((lineno, v));
            }
        }
    }

    if !saw_option {
        return Err(EmModelError::parse(origin, 1, "missing `#` option line"));
    }
    let n = match ports {
        Some(n) => n,
        None if version2 => return Err(EmModelError::parse(origin, last_line, "missing [Number of Ports]")),
        None => return Err(EmModelError::parse(origin, 1, "version 1 files need [Number of Ports]")),
    };
    if n == 0 {
        return Err(EmModelError::parse(origin, last_line, "port count must be positive"));
    }
    let entries = match matrix_format {
        MatrixFormat::Full => n * n,
        MatrixFormat::Lower | MatrixFormat::Upper => n * (n + 1) / 2,
    };
    let per_freq = 1 + 2 * entries;
    if tokens.is_empty() || !tokens.len().is_multiple_of(per_freq) {
        let line = tokens.last().map(|t| t.0).unwrap_or(last_line);
        return Err(EmModelError::parse(
            origin,
            line,
            format!("{} data values is not a whole number of {per_freq}-value frequency records", tokens.len()),
        ));
    }
    let count = tokens.len() / per_freq;
    if let Some(d) = declared_freqs {
        if d != count {
            return Err(EmModelError::parse(
                origin,
                last_line,
                format!("[Number of Frequencies] is {d} but {count} records found"),
            ));
        }
    }
    let scale = if version2 { 1.0 } else { reference };
    // Version 1 two-port data is 11 21 12 22.
    let swap_21 = n == 2 && two_port_21_first.unwrap_or(!version2);

    let mut freqs = Vec::with_capacity(count);
    let mut mats = Vec::with_capacity(count);
    for rec in tokens.chunks(per_freq) {
        freqs.push(rec[0].1 * unit_scale);
        let values: Vec<Complex64> = rec[1..]
            .chunks(2)
            .map(|p| to_complex(format, p[0].1, p[1].1) * scale)
            .collect();
        let mut m = ComplexMatrix::zeros(n, n);
        let mut k = 0;
        for r in 0..n {
            let cols: Box<dyn Iterator<Item = usize>> = match matrix_format {
                MatrixFormat::Full => Box::new(0..n),
                MatrixFormat::Lower => Box::new(0..=r),
                MatrixFormat::Upper => Box::new(r..n),
            };
            for c in cols {
                m[(r, c)] = values[k];
                m[(c, r)] = if matrix_format == MatrixFormat::Full { m[(c, r)] } else { values[k] };
                k += 1;
            }
        }
        if swap_21 {
            let a = m[(0, 1)];
            m[(0, 1)] = m[(1, 0)];
            m[(1, 0)] = a;
        }
        mats.push(m);
    }
    MultiportNetwork::new(freqs, mats)
}

fn to_complex(format: DataFormat, a: f64, b: f64) -> Complex64 {
    match format {
        DataFormat::RealImag => Complex64::new(a, b),
        DataFormat::MagAngle => Complex64::from_polar(a, b.to_radians()),
        DataFormat::DbAngle => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version2_full_matrix() {
        let text = "! test\n[Version] 2.0\n# MHz Z RI R 50\n[Number of Ports] 3\n[Number of Frequencies] 1\n\
                    [Network Data]\n2500 50 1 2 0 3 0\n 2 0 40 0 4 0\n 3 0 4 0 30 -5\n[End]\n";
        let net = parse_touchstone(text, "t.z3p").unwrap();
        assert_eq!(net.ports(), 3);
        assert_eq!(net.frequencies().samples(), &[2.5e9]);
        assert_eq!(net.z_e(0), Complex64::new(50.0, 1.0));
        assert_eq!(net.z(0)[(2, 2)], Complex64::new(30.0, -5.0));
        assert!(!net.reciprocity_warning());
    }

    #[test]
    fn version2_lower_matrix_and_two_port_order() {
        let text = "[Version] 2.0\n# GHz Z RI R 50\n[Number of Ports] 2\n[Two-Port Data Order] 12_21\n\
                    [Matrix Format] Lower\n[Network Data]\n2.5 50 0 10 0 20 0\n[End]\n";
        let net = parse_touchstone(text, "t").unwrap();
        assert_eq!(net.z(0)[(0, 1)], Complex64::new(10.0, 0.0));
        assert_eq!(net.z(0)[(1, 0)], Complex64::new(10.0, 0.0));
        assert_eq!(net.z(0)[(1, 1)], Complex64::new(20.0, 0.0));
    }

    #[test]
    fn version1_is_normalized() {
        let text = "[Number of Ports] 1\n# GHz Z RI R 50\n2.5 1.0 0.5\n";
        let net = parse_touchstone(text, "t").unwrap();
        assert_eq!(net.z_e(0), Complex64::new(50.0, 25.0));
    }

    #[test]
    fn rejects_s_parameters() {
        let text = "[Version] 2.0\n# GHz S RI R 50\n[Number of Ports] 1\n[Network Data]\n2.5 0 0\n[End]\n";
        assert!(matches!(parse_touchstone(text, "t"), Err(EmModelError::Parse { line: 2, .. })));
    }

    #[test]
    fn truncated_record_is_reported() {
        let text = "[Version] 2.0\n# GHz Z RI R 50\n[Number of Ports] 2\n[Two-Port Data Order] 12_21\n\
                    [Network Data]\n2.5 50 0 10 0 10 0\n[End]\n";
        assert!(matches!(parse_touchstone(text, "t"), Err(EmModelError::Parse { line: 6, .. })));
    }
}
