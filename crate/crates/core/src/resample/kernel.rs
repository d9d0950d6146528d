use serde::{Deserialize, Serialize};

use crate::config::KernelConfig;
use crate::geometry::V3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Gaussian,
    Shepard,
    Voronoi,
    EllipsoidalGaussian,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] =
        [KernelKind::Linear, KernelKind::Gaussian, KernelKind::Shepard, KernelKind::Voronoi, KernelKind::EllipsoidalGaussian];

    pub fn ini_name(self) -> &'static str {
        match self {
            KernelKind::Linear => "Linear_Kernel",
            KernelKind::Gaussian => "Gaussian_Kernel",
            KernelKind::Shepard => "Shepard_Kernel",
            KernelKind::Voronoi => "Voronoi_Kernel",
            KernelKind::EllipsoidalGaussian => "Ellipsoidal_Gaussian_Kernel",
        }
    }

    pub fn from_ini_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.ini_name().eq_ignore_ascii_case(s.trim()))
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Gaussian => "gaussian",
            KernelKind::Shepard => "shepard",
            KernelKind::Voronoi => "voronoi",
            KernelKind::EllipsoidalGaussian => "ellipsoidal_gaussian",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s || k.ini_name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FootprintMode {
    NClosest,
    Radius,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Footprint {
    NClosest(usize),
    Radius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub sharpness: f64,
    pub power: f64,
    pub eps: f64,
    pub eccentricity: [f64; 3],
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::from_config(&KernelConfig::default())
    }
}

impl KernelSpec {
    pub fn from_config(c: &KernelConfig) -> Self {
        KernelSpec { kind: c.kind, sharpness: c.sharpness, power: c.power, eps: c.eps, eccentricity: c.eccentricity }
    }

    pub fn of(kind: KernelKind) -> Self {
        KernelSpec { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.power > 0.0) {
            return Err("power must be > 0".into());
        }
        if !(self.sharpness > 0.0) {
            return Err("sharpness must be > 0".into());
        }
        if !(self.eps >= 0.0) {
            return Err("eps must be >= 0".into());
        }
        if !self.eccentricity.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err("eccentricity components must be > 0".into());
        }
        Ok(())
    }

    /// Per-axis standard deviations for footprint radius `r`.
    pub fn sigmas(&self, r: f64) -> [f64; 3] {
        let base = r / self.sharpness;
        match self.kind {
            KernelKind::EllipsoidalGaussian => {
                let e = self.eccentricity;
                let gm = (e[0] * e[1] * e[2]).cbrt();
                e.map(|x| x / gm * base)
            }
            _ => [base; 3],
        }
    }
}

/// Weight of a source at `offset` from the target; `r` is the footprint radius.
/// Voronoi selection happens in the caller, so it weighs every point 1.
pub fn kernel_weight(spec: &KernelSpec, offset: &V3, r: f64) -> f64 {
    let d = offset.norm();
    match spec.kind {
        KernelKind::Voronoi => 1.0,
        KernelKind::Shepard => (d + spec.eps).powf(-spec.power),
        _ if r <= 0.0 => (d == 0.0) as u8 as f64,
        KernelKind::Linear => (1.0 - d / r).max(0.0),
        KernelKind::Gaussian | KernelKind::EllipsoidalGaussian => {
            let s = spec.sigmas(r);
            let q: f64 = (0..3).map(|k| (offset[k] / s[k]).powi(2)).sum();
            (-0.5 * q).exp()
        }
    }
}

/// Recommended neighbour count for a target sample grid.
pub fn default_k(samples: [usize; 3]) -> usize {
    match samples {
        [128, 32, 32] => 4,
        [256, 64, 64] => 6,
        [512, 128, 128] => 8,
        _ => 6,
    }
}
