//! Inflow, periodicity and refinement draws plus the lattice relaxation policy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::SimParamPolicy;
use crate::sampling::GeneratorState;
use crate::util::round_to;
use crate::{Error, Result};

pub const CS2: f64 = 1.0 / 3.0;

/// How the stored Reynolds number relates to the other fields.
pub const RE_RULE: &str = "Re = vector_magnitude * l_char / nu0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub inlet_velocity: [f64; 3],
    pub vector_magnitude: f64,
    pub periodicity: [bool; 3],
    pub refinement: bool,
    pub re: f64,
    pub nu0: f64,
    pub tau: f64,
    pub omega: f64,
    pub l_char: f64,
    pub dx_meta: u32,
    pub precision: u32,
    pub mach_inlet: f64,
    pub mach_inlet_ok: bool,
    pub mach_global_ok: bool,
    pub tau_warning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachCheck {
    pub mach: f64,
    pub inlet_ok: bool,
    pub global_ok: bool,
}

pub fn nu_from_tau(tau: f64) -> Result<f64> {
    if !(tau > 0.5) {
        return Err(Error::Invalid(format!("non-positive viscosity (tau = {tau})")));
    }
    Ok(CS2 * (tau - 0.5))
}

pub fn tau_from_nu(nu0: f64) -> Result<f64> {
    if !(nu0 > 0.0) {
        return Err(Error::Invalid(format!("non-positive viscosity (nu = {nu0})")));
    }
    Ok(nu0 / CS2 + 0.5)
}

pub fn omega(tau: f64) -> f64 {
    1.0 / tau
}

/// (nu0, tau) hitting `re_target` exactly for bulk speed `u` and length `l`.
pub fn target_reynolds(re_target: f64, u: f64, l: f64) -> Result<(f64, f64)> {
    if !(re_target > 0.0 && u > 0.0 && l > 0.0) {
        return Err(Error::Invalid("Re, U and L must be positive".into()));
    }
    let nu0 = u * l / re_target;
    Ok((nu0, tau_from_nu(nu0)?))
}

pub fn achieved_reynolds(u: f64, l: f64, nu0: f64) -> f64 {
    u * l / nu0
}

pub fn mach_check(speed: f64, inlet_max: f64, global_max: f64) -> MachCheck {
    let mach = speed * 3f64.sqrt();
    MachCheck { mach, inlet_ok: mach <= inlet_max, global_ok: mach <= global_max }
}

/// One draw: x = 2u0 - 1, azimuth 2 pi u1, magnitude from u2, Re from u3.
fn velocity_from_draw(p: &SimParamPolicy, u: &[f64]) -> std::result::Result<([f64; 3], f64, f64), &'static str> {
    let x = 2.0 * u[0] - 1.0;
    if x < p.min_x_component_generator {
        return Err("direction x below generator minimum");
    }
    let s = (1.0 - x * x).max(0.0).sqrt();
    let phi = 2.0 * PI * u[1];
    let dir = [x, s * phi.cos(), s * phi.sin()];
    let mag = p.magnitude_min + u[2] * (p.magnitude_max - p.magnitude_min);
    if dir[0] * mag < p.min_x_component_after_scaling {
        return Err("scaled x below minimum");
    }
    let v = dir.map(|c| round_to(c * mag, p.precision));
    let re = p.re_band[0] + u[3] * (p.re_band[1] - p.re_band[0]);
    Ok((v, round_to(mag, p.precision), re))
}

/// Inlet velocity, vector magnitude and Reynolds target, rejecting with the
/// same index bookkeeping as geometry draws.
pub fn sample_inlet_velocity(p: &SimParamPolicy, state: &mut GeneratorState) -> Result<([f64; 3], f64, f64)> {
    for _ in 0..p.rejection_budget {
        let u = state.next_point()?;
        if u.len() < 4 {
            return Err(Error::Invalid("simulation draws need dimension >= 4".into()));
        }
        match velocity_from_draw(p, &u) {
            Ok(v) => return Ok(v),
            Err(_) => state.advance_on_reject(),
        }
    }
    Err(Error::Invalid(format!("inlet velocity rejection budget ({}) exhausted", p.rejection_budget)))
}

pub fn flags_from_draw(p: &SimParamPolicy, u: &[f64]) -> ([bool; 3], bool) {
    let eligible = p.periodic_directions.to_array();
    let per = [0, 1, 2].map(|k| eligible[k] && u[k] < p.periodic_probability);
    (per, u[3] < p.refinement_probability)
}

pub fn sample_flags(p: &SimParamPolicy, state: &mut GeneratorState) -> Result<([bool; 3], bool)> {
    let u = state.next_point()?;
    if u.len() < 4 {
        return Err(Error::Invalid("simulation draws need dimension >= 4".into()));
    }
    Ok(flags_from_draw(p, &u))
}

pub fn sample_sim_params(p: &SimParamPolicy, state: &mut GeneratorState, dx_meta: u32) -> Result<SimParams> {
    let (inlet_velocity, vector_magnitude, re_target) = sample_inlet_velocity(p, state)?;
    let (periodicity, refinement) = sample_flags(p, state)?;
    let (nu0, tau) = target_reynolds(re_target, vector_magnitude, p.l_char)?;
    let speed = inlet_velocity.iter().map(|c| c * c).sum::<f64>().sqrt();
    let m = mach_check(speed, p.ma_inlet_max, p.ma_max);
    Ok(SimParams {
        inlet_velocity,
        vector_magnitude,
        periodicity,
        refinement,
        re: re_target,
        nu0,
        tau,
        omega: omega(tau),
        l_char: p.l_char,
        dx_meta,
        precision: p.precision,
        mach_inlet: m.mach,
        mach_inlet_ok: m.inlet_ok,
        mach_global_ok: m.global_ok,
        tau_warning: tau > p.tau_cap,
    })
}

impl SimParams {
    /// Re-check every invariant independently of how the values were drawn.
    pub fn check(&self, p: &SimParamPolicy) -> std::result::Result<(), String> {
        let v = self.inlet_velocity;
        let half_ulp = 0.5 * 10f64.powi(-(p.precision as i32));
        if !(v[0] > 0.0 && v[0] >= p.min_x_component_after_scaling - half_ulp) {
            return Err(format!("inlet x component {} too small", v[0]));
        }
        let (lo, hi) = (p.magnitude_min - half_ulp, p.magnitude_max + half_ulp);
        if !(lo..=hi).contains(&self.vector_magnitude) {
            return Err(format!("vector_magnitude {} outside policy", self.vector_magnitude));
        }
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - self.vector_magnitude).abs() > 3.0 * half_ulp {
            return Err(format!("|u| = {norm} differs from vector_magnitude {}", self.vector_magnitude));
        }
        let eligible = p.periodic_directions.to_array();
        if (0..3).any(|k| self.periodicity[k] && !eligible[k]) || self.periodicity[0] {
            return Err("periodicity on an ineligible axis".into());
        }
        if !(self.tau > 0.5) {
            return Err("tau <= 0.5".into());
        }
        if !(p.re_band[0]..=p.re_band[1]).contains(&self.re) {
            return Err(format!("Re {} outside band", self.re));
        }
        Ok(())
    }
}
