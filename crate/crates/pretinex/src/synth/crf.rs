//! Camera response functions as sampled lookup tables.
//!
//! A CRF maps sensor irradiance in [0, 1] to stored intensity in [0, 1].
//! Both directions are piecewise-linear over 1024 samples. The inverse
//! table is built by exactly inverting the piecewise-linear forward
//! table, which keeps the f(f^-1(x)) roundtrip within table resolution
//! even where a gamma curve is steep near zero — sampling the analytic
//! inverse on a uniform grid would not.

use crate::error::{Error, Result};
use std::path::Path;

pub const TABLE_SIZE: usize = 1024;

/// Roundtrip tolerance implied by the table resolution.
pub const ROUNDTRIP_TOL: f32 = 2.0 / TABLE_SIZE as f32;

#[derive(Debug, Clone, PartialEq)]
pub struct Crf {
    pub name: String,
    forward: Vec<f32>,
    inverse: Vec<f32>,
}

impl Crf {
    /// Gamma-family response f(x) = x^(1/gamma).
    pub fn gamma(gamma: f32) -> Self {
        assert!(gamma > 0.0);
        let forward: Vec<f32> = (0..TABLE_SIZE)
            .map(|i| {
                let x = i as f64 / (TABLE_SIZE - 1) as f64;
                x.powf(1.0 / gamma as f64) as f32
            })
            .collect();
        let inverse = invert_table(&forward);
        Crf { name: format!("gamma{gamma}"), forward, inverse }
    }

    /// Builds a CRF from 1024 forward samples; validates the invariants
    /// f(0)=0, f(1)=1, strict monotonicity, and the roundtrip bound.
    pub fn from_samples(name: impl Into<String>, forward: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if forward.len() != TABLE_SIZE {
            return Err(Error::Argument(format!(
                "CRF {name}: expected {TABLE_SIZE} samples, got {}",
                forward.len()
            )));
        }
        if forward[0] != 0.0 || forward[TABLE_SIZE - 1] != 1.0 {
            return Err(Error::Argument(format!(
                "CRF {name}: table must map 0 to 0 and 1 to 1 (got {} and {})",
                forward[0],
                forward[TABLE_SIZE - 1]
            )));
        }
        if forward.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument(format!("CRF {name}: table must be strictly increasing")));
        }
        let inverse = invert_table(&forward);
        let crf = Crf { name, forward, inverse };
        for i in 0..TABLE_SIZE {
            let x = i as f32 / (TABLE_SIZE - 1) as f32;
            let rt = crf.apply(crf.invert(x));
            if (rt - x).abs() > ROUNDTRIP_TOL {
                return Err(Error::Argument(format!(
                    "CRF {}: roundtrip error {} at {x} exceeds {ROUNDTRIP_TOL}",
                    crf.name,
                    (rt - x).abs()
                )));
            }
        }
        Ok(crf)
    }

    /// Loads forward samples from a text file: 1024 whitespace-separated
    /// floats, `#` comments allowed.
    pub fn from_table_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split_whitespace() {
                let v: f32 = tok.parse().map_err(|_| {
                    Error::Argument(format!("CRF table {}: bad float {tok:?}", path.display()))
                })?;
                samples.push(v);
            }
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "table".into());
        Crf::from_samples(name, samples)
    }

    /// f(x): linear interpolation in the forward table, input clamped to
    /// [0, 1].
    pub fn apply(&self, x: f32) -> f32 {
        lerp_table(&self.forward, x)
    }

    /// f^-1(y): linear interpolation in the inverse table.
    pub fn invert(&self, y: f32) -> f32 {
        lerp_table(&self.inverse, y)
    }
}

fn lerp_table(table: &[f32], x: f32) -> f32 {
    let x = x.clamp(0.0, 1.0);
    let u = x * (TABLE_SIZE - 1) as f32;
    let i = (u as usize).min(TABLE_SIZE - 2);
    let frac = u - i as f32;
    table[i] + (table[i + 1] - table[i]) * frac
}

/// Samples the exact inverse of the piecewise-linear function through
/// `forward` on a uniform grid.
fn invert_table(forward: &[f32]) -> Vec<f32> {
    let n = forward.len();
    let mut inverse = Vec::with_capacity(n);
    let mut seg = 0usize;
    for j in 0..n {
        let y = j as f32 / (n - 1) as f32;
        while seg + 2 < n && forward[seg + 1] < y {
            seg += 1;
        }
        let (y0, y1) = (forward[seg], forward[seg + 1]);
        let frac = if y1 > y0 { ((y - y0) / (y1 - y0)).clamp(0.0, 1.0) } else { 0.0 };
        inverse.push((seg as f32 + frac) / (n - 1) as f32);
    }
    inverse
}

/// The default CRF pair standing in for the two most common measured
/// camera curves.
pub fn default_crfs() -> Vec<Crf> {
    vec![Crf::gamma(2.2), Crf::gamma(2.4)]
}

/// Resolves a `--crf` argument: a known gamma name or a table file path.
pub fn resolve_crf(name: &str) -> Result<Crf> {
    if let Some(g) = name.strip_prefix("gamma") {
        if let Ok(gamma) = g.parse::<f32>() {
            if gamma > 0.0 {
                return Ok(Crf::gamma(gamma));
            }
        }
    }
    let path = Path::new(name);
    if path.exists() {
        return Crf::from_table_file(path);
    }
    Err(Error::Argument(format!(
        "unknown CRF {name:?}: use gamma<value> (e.g. gamma2.2) or a table file path"
    )))
}
