//! Extended-XYZ records: atom count, a `key=value` comment line, then element
//! rows in angstrom. Coordinates are converted to bohr on the way in.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::system::{atomic_number, element_symbol, MolecularSystem};
use crate::units::{ANGSTROM_TO_BOHR, BOHR_TO_ANGSTROM};

/// Numeric label keys understood by the training pipeline (eV).
pub const LABEL_KEYS: [&str; 5] = [
    "energy_ev",
    "fmo_alpha_homo_ev",
    "fmo_alpha_lumo_ev",
    "fmo_beta_homo_ev",
    "fmo_beta_lumo_ev",
];

#[derive(Debug, Clone, PartialEq)]
pub struct XyzRecord {
    pub system: MolecularSystem,
    /// Values of [`LABEL_KEYS`] present in the comment line.
    pub labels: BTreeMap<String, f64>,
    /// Any other keys, kept verbatim (for example `id` or `parent`).
    pub extra: BTreeMap<String, String>,
}

/// Splits a comment line into `key=value` pairs; values may be double-quoted.
fn key_values(line: &str, origin: &str, line_no: usize) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut chars = line.trim().chars().peekable();
    loop {
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        if chars.peek().is_none() {
            return Ok(out);
        }
        let key: String =
            std::iter::from_fn(|| chars.next_if(|&c| c != '=' && !c.is_whitespace())).collect();
        if chars.next() != Some('=') {
            return Err(Error::parse(
                origin,
                line_no,
                format!("`{key}` is not of the form key=value"),
            ));
        }
        let value = if chars.next_if_eq(&'"').is_some() {
            let v: String = std::iter::from_fn(|| chars.next_if(|&c| c != '"')).collect();
            if chars.next() != Some('"') {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("unterminated quote for `{key}`"),
                ));
            }
            v
        } else {
            std::iter::from_fn(|| chars.next_if(|c| !c.is_whitespace())).collect()
        };
        if key.is_empty() {
            return Err(Error::parse(origin, line_no, "empty key"));
        }
        out.push((key, value));
    }
}

fn number<T: std::str::FromStr>(s: &str, what: &str, origin: &str, line_no: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(origin, line_no, format!("bad {what} `{s}`")))
}

/// Parses every frame of an extended-XYZ text. `origin` names the source in errors.
pub fn parse_xyz(text: &str, origin: &str) -> Result<Vec<XyzRecord>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count: usize = number(lines[i].trim(), "atom count", origin, i + 1)?;
        if count == 0 {
            return Err(Error::parse(origin, i + 1, "atom count must be positive"));
        }
        let comment_no = i + 2;
        let comment = lines
            .get(i + 1)
            .ok_or_else(|| Error::parse(origin, comment_no, "missing comment line"))?;
        let mut system = MolecularSystem::new(Vec::new(), Vec::new(), 0, 1);
        let mut labels = BTreeMap::new();
        let mut extra = BTreeMap::new();
        for (key, value) in key_values(comment, origin, comment_no)? {
            match key.as_str() {
                "charge" => system.charge = number(&value, "charge", origin, comment_no)?,
                "multiplicity" => {
                    system.multiplicity = number(&value, "multiplicity", origin, comment_no)?
                }
                "field" => {
                    let parts: Vec<f64> = value
                        .split_whitespace()
                        .map(|v| number(v, "field component", origin, comment_no))
                        .collect::<Result<_>>()?;
                    let f: [f64; 3] = parts.try_into().map_err(|_| {
                        Error::parse(origin, comment_no, "field needs three components")
                    })?;
                    system.field = Some(f);
                }
                "dielectric" => {
                    system.dielectric = Some(number(&value, "dielectric", origin, comment_no)?)
                }
                k if LABEL_KEYS.contains(&k) => {
                    labels.insert(key.clone(), number(&value, k, origin, comment_no)?);
                }
                _ => {
                    extra.insert(key, value);
                }
            }
        }
        for k in 0..count {
            let line_no = i + 3 + k;
            let row = lines.get(i + 2 + k).ok_or_else(|| {
                Error::parse(origin, line_no, format!("expected {count} atom rows"))
            })?;
            let cols: Vec<&str> = row.split_whitespace().collect();
            if cols.len() < 4 {
                return Err(Error::parse(
                    origin,
                    line_no,
                    "atom row needs an element and three coordinates",
                ));
            }
            let z = atomic_number(cols[0]).ok_or_else(|| {
                Error::parse(origin, line_no, format!("unknown element `{}`", cols[0]))
            })?;
            let mut xyz = [0.0; 3];
            for d in 0..3 {
                xyz[d] =
                    number::<f64>(cols[d + 1], "coordinate", origin, line_no)? * ANGSTROM_TO_BOHR;
            }
            system.atomic_numbers.push(z);
            system.coordinates.push(xyz);
        }
        system.validate()?;
        records.push(XyzRecord {
            system,
            labels,
            extra,
        });
        i += 2 + count;
    }
    Ok(records)
}

fn quoted(v: &str) -> String {
    if v.is_empty() || v.contains(char::is_whitespace) {
        format!("\"{v}\"")
    } else {
        v.to_string()
    }
}

/// Writes one frame. Floats use the shortest representation that parses back
/// to the same value.
pub fn write_xyz(record: &XyzRecord) -> String {
    let s = &record.system;
    let mut out = format!(
        "{}\ncharge={} multiplicity={}",
        s.num_atoms(),
        s.charge,
        s.multiplicity
    );
    if let Some(f) = s.field {
        let _ = write!(out, " field=\"{} {} {}\"", f[0], f[1], f[2]);
    }
    if let Some(d) = s.dielectric {
        let _ = write!(out, " dielectric={d}");
    }
    for (k, v) in &record.labels {
        let _ = write!(out, " {k}={v}");
    }
    for (k, v) in &record.extra {
        let _ = write!(out, " {k}={}", quoted(v));
    }
    out.push('\n');
    for (z, c) in s.atomic_numbers.iter().zip(&s.coordinates) {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            element_symbol(*z).unwrap_or("X"),
            c[0] * BOHR_TO_ANGSTROM,
            c[1] * BOHR_TO_ANGSTROM,
            c[2] * BOHR_TO_ANGSTROM
        );
    }
    out
}
