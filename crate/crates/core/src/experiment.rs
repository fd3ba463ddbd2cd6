//! Phantoms, measurement noise, warm-start disturbance and image metrics.

use std::io::{BufRead, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{MeasurementSet, ResistivityField};
use crate::mesh::Mesh;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub center: [f64; 2],
    pub radius: f64,
    pub value: f64,
}

/// Background value plus disk-shaped inclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub background: f64,
    pub anomalies: Vec<Anomaly>,
}

impl PhantomSpec {
    /// Background 1 with one inclusion of resistivity 2, radius 0.3 at (0.4, 0).
    pub fn reference() -> Self {
        Self {
            background: 1.0,
            anomalies: vec![Anomaly {
                center: [0.4, 0.0],
                radius: 0.3,
                value: 2.0,
            }],
        }
    }

    /// The reference scene with a second, conductive inclusion.
    pub fn two_anomaly() -> Self {
        let mut s = Self::reference();
        s.anomalies.push(Anomaly {
            center: [-0.35, -0.2],
            radius: 0.25,
            value: 0.5,
        });
        s
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "background {}", self.background)?;
        for a in &self.anomalies {
            writeln!(
                w,
                "anomaly {} {} {} {}",
                a.center[0], a.center[1], a.radius, a.value
            )?;
        }
        Ok(())
    }

    /// Reads `background <v>` and `anomaly cx cy r value` lines; `#` starts a
    /// comment.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut background = None;
        let mut anomalies = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("");
            let f: Vec<&str> = body.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(i + 1, format!("`{s}`: {e}")))
            };
            match f.as_slice() {
                [] => {}
                ["background", v] => background = Some(num(v)?),
                ["anomaly", cx, cy, r, v] => anomalies.push(Anomaly {
                    center: [num(cx)?, num(cy)?],
                    radius: num(r)?,
                    value: num(v)?,
                }),
                _ => return Err(Error::parse(i + 1, format!("unrecognized line `{}`", line.trim()))),
            }
        }
        Ok(Self {
            background: background.ok_or_else(|| Error::parse(0, "missing `background` line"))?,
            anomalies,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub background: f64,
    pub anomalies: Vec<Anomaly>,
    pub rho_true: ResistivityField,
}

/// An element takes an anomaly's value iff its centroid lies inside the
/// anomaly disk; later anomalies override earlier ones.
pub fn make_phantom(mesh: &Mesh, background: f64, anomalies: &[Anomaly]) -> Result<Phantom> {
    if !(background.is_finite() && background > 0.0) {
        return Err(Error::Config(format!("background must be positive, got {background}")));
    }
    for (k, a) in anomalies.iter().enumerate() {
        if !(a.value.is_finite() && a.value > 0.0) {
            return Err(Error::Config(format!("anomaly {k} value must be positive")));
        }
        if !(a.radius > 0.0) {
            return Err(Error::Config(format!("anomaly {k} radius must be positive")));
        }
        let dist = a.center[0].hypot(a.center[1]);
        if dist - a.radius >= 1.0 {
            return Err(Error::Config(format!("anomaly {k} lies entirely outside the domain")));
        }
    }
    let rho = (0..mesh.n_elements())
        .map(|e| {
            let c = mesh.centroid(e);
            anomalies
                .iter()
                .rev()
                .find(|a| (c[0] - a.center[0]).hypot(c[1] - a.center[1]) < a.radius)
                .map_or(background, |a| a.value)
        })
        .collect();
    Ok(Phantom {
        background,
        anomalies: anomalies.to_vec(),
        rho_true: ResistivityField::new(rho)?,
    })
}

impl Phantom {
    pub fn from_spec(mesh: &Mesh, spec: &PhantomSpec) -> Result<Self> {
        make_phantom(mesh, spec.background, &spec.anomalies)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// `σ = level · RMS(y)` for every channel.
    GlobalRms,
    /// `σᵢ = level · |yᵢ|`.
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Self {
        Self {
            level,
            seed,
            mode: NoiseMode::GlobalRms,
        }
    }
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Additive white Gaussian noise; `level = 0` returns `y` unchanged.
pub fn add_noise(y: &MeasurementSet, spec: &NoiseSpec) -> Result<MeasurementSet> {
    if !(spec.level.is_finite() && spec.level >= 0.0) {
        return Err(Error::Config(format!("noise level must be non-negative, got {}", spec.level)));
    }
    if spec.level == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = rng_from_seed(spec.seed);
    let scale = spec.level * rms(&y.values);
    let values = y
        .values
        .iter()
        .map(|&v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            let sigma = match spec.mode {
                NoiseMode::GlobalRms => scale,
                NoiseMode::PerChannel => spec.level * v.abs(),
            };
            v + sigma * g
        })
        .collect();
    Ok(MeasurementSet {
        protocol: y.protocol.clone(),
        values,
    })
}

/// Multiplicative log-normal perturbation `ρ → ρ·exp(s·N(0,1))` per element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub scale: f64,
    pub seed: u64,
}

pub fn disturb(rho: &[f64], d: &Disturbance) -> Vec<f64> {
    let mut rng = rng_from_seed(d.seed);
    rho.iter()
        .map(|&r| {
            let g: f64 = StandardNormal.sample(&mut rng);
            r * (d.scale * g).exp()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub relative_l2_error: f64,
    /// `None` when either field is constant.
    pub correlation: Option<f64>,
    /// Distance from the centroid of the top-decile elements to the anomaly
    /// center; single-anomaly phantoms only.
    pub localization_error: Option<f64>,
}

pub fn relative_l2(est: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Top decile is taken on `±ρ_est`, the sign pointing from background to
/// anomaly value; ties keep the lower element index.
pub fn localization_error(mesh: &Mesh, est: &[f64], phantom: &Phantom) -> Option<f64> {
    let [a] = phantom.anomalies.as_slice() else {
        return None;
    };
    let sign = if a.value >= phantom.background { 1.0 } else { -1.0 };
    let mut order: Vec<usize> = (0..est.len()).collect();
    order.sort_by(|&i, &j| (sign * est[j]).total_cmp(&(sign * est[i])));
    let k = est.len().div_ceil(10).max(1);
    let (mut cx, mut cy) = (0.0, 0.0);
    for &e in &order[..k] {
        let c = mesh.centroid(e);
        cx += c[0];
        cy += c[1];
    }
    cx /= k as f64;
    cy /= k as f64;
    Some((cx - a.center[0]).hypot(cy - a.center[1]))
}

pub fn image_metrics(mesh: &Mesh, est: &[f64], phantom: &Phantom) -> Result<ImageMetrics> {
    if est.len() != phantom.rho_true.len() || est.len() != mesh.n_elements() {
        return Err(Error::Domain(format!(
            "estimate has {} entries, phantom {} and mesh {}",
            est.len(),
            phantom.rho_true.len(),
            mesh.n_elements()
        )));
    }
    Ok(ImageMetrics {
        relative_l2_error: relative_l2(est, &phantom.rho_true),
        correlation: pearson(est, &phantom.rho_true),
        localization_error: localization_error(mesh, est, phantom),
    })
}
