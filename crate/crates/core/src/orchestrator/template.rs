//! Named-placeholder substitution for solver parameter files.
//!
//! A placeholder is `{{key}}` or `{{key:min:max}}`; bounds are inclusive and
//! either side may be empty.

use std::collections::BTreeMap;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateValue {
    Real(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for TemplateValue {
    fn from(x: f64) -> Self {
        TemplateValue::Real(x)
    }
}

impl From<i64> for TemplateValue {
    fn from(x: i64) -> Self {
        TemplateValue::Int(x)
    }
}

impl From<bool> for TemplateValue {
    fn from(x: bool) -> Self {
        TemplateValue::Int(x as i64)
    }
}

impl From<&str> for TemplateValue {
    fn from(x: &str) -> Self {
        TemplateValue::Text(x.to_string())
    }
}

impl From<String> for TemplateValue {
    fn from(x: String) -> Self {
        TemplateValue::Text(x)
    }
}

pub type Values = BTreeMap<String, TemplateValue>;

/// Keys every parameter template has to reference.
pub const REQUIRED_KEYS: [&str; 8] = [
    "omega",
    "inlet_velocity_x",
    "inlet_velocity_y",
    "inlet_velocity_z",
    "periodicity_x",
    "periodicity_y",
    "periodicity_z",
    "timesteps",
];

fn render(v: &TemplateValue, precision: usize) -> String {
    match v {
        TemplateValue::Real(x) => {
            let s = format!("{x:.precision$}");
            if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
                s[1..].to_string()
            } else {
                s
            }
        }
        TemplateValue::Int(i) => i.to_string(),
        TemplateValue::Text(t) => t.clone(),
    }
}

fn numeric(v: &TemplateValue) -> Option<f64> {
    match v {
        TemplateValue::Real(x) => Some(*x),
        TemplateValue::Int(i) => Some(*i as f64),
        TemplateValue::Text(_) => None,
    }
}

struct Placeholder<'a> {
    start: usize,
    end: usize,
    key: &'a str,
    min: Option<f64>,
    max: Option<f64>,
}

fn scan(text: &str) -> Result<Vec<Placeholder<'_>>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find("{{") {
        let start = pos + off;
        let close = text[start..].find("}}").ok_or_else(|| Error::Invalid(format!("unterminated placeholder at byte {start}")))?;
        let end = start + close + 2;
        let body = text[start + 2..end - 2].trim();
        let mut parts = body.split(':');
        let key = parts.next().unwrap_or("").trim();
        if key.is_empty() || !key.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            return Err(Error::Invalid(format!("malformed placeholder '{{{{{body}}}}}'")));
        }
        let bound = |s: Option<&str>| -> Result<Option<f64>> {
            match s.map(str::trim) {
                None | Some("") => Ok(None),
                Some(b) => b.parse().map(Some).map_err(|_| Error::Invalid(format!("bad bound '{b}' on '{key}'"))),
            }
        };
        let min = bound(parts.next())?;
        let max = bound(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Invalid(format!("too many fields in placeholder '{key}'")));
        }
        out.push(Placeholder { start, end, key, min, max });
        pos = end;
    }
    Ok(out)
}

/// Substitute every placeholder; reals are rendered with `precision` decimals.
pub fn patch_template(text: &str, values: &Values, precision: usize) -> Result<String> {
    let holes = scan(text)?;
    for key in REQUIRED_KEYS {
        if !holes.iter().any(|h| h.key == key) {
            return Err(Error::Invalid(format!("template has no placeholder for '{key}'")));
        }
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for h in &holes {
        let v = values.get(h.key).ok_or_else(|| Error::Invalid(format!("unknown placeholder '{}'", h.key)))?;
        if h.min.is_some() || h.max.is_some() {
            let x = numeric(v).ok_or_else(|| Error::Invalid(format!("'{}' is bounded but not numeric", h.key)))?;
            if h.min.is_some_and(|m| x < m) || h.max.is_some_and(|m| x > m) {
                return Err(Error::Invalid(format!(
                    "'{}' = {x} outside template bounds [{}, {}]",
                    h.key,
                    h.min.map(|m| m.to_string()).unwrap_or_default(),
                    h.max.map(|m| m.to_string()).unwrap_or_default()
                )));
            }
        }
        out.push_str(&text[last..h.start]);
        out.push_str(&render(v, precision));
        last = h.end;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

pub const STANDARD_TEMPLATE: &str = "Parameters
{
    omega                   {{omega:0:2}};
    initialVelocity         < {{inlet_velocity_x}}, {{inlet_velocity_y}}, {{inlet_velocity_z}} >;
    timesteps               {{timesteps:1:}};
    smagorinskyConstant     {{smagorinsky_cs:0:1}};
    remainingTimeLoggerFrequency 60;
}

DomainSetup
{
    meshFile                {{geometry_file}};
    dx                      {{dx:0:}};
    cells                   < {{grid_x}}, {{grid_y}}, {{grid_z}} >;
    periodic                < {{periodicity_x}}, {{periodicity_y}}, {{periodicity_z}} >;
}

VelDensAverager
{
    evalInterval            {{eval_interval}};
    avgStartTimestep        {{avg_start_timestep}};
}

VelDensAveragerBatched
{
    compInterval            {{comp_interval}};
    noOfTimestepsToAverage  {{no_of_timesteps_to_average}};
}

VelDensAveragerBatchedSI
{
    dx_SI                   {{dx_si}};
    dt_SI                   {{dt_si}};
    rho_SI                  {{rho_si}};
}

Output
{
    forcedWriteInterval     {{forced_write_interval}};
}
";

pub const REFINED_TEMPLATE: &str = "Parameters
{
    omega                   {{omega:0:2}};
    initialVelocity         < {{inlet_velocity_x}}, {{inlet_velocity_y}}, {{inlet_velocity_z}} >;
    timesteps               {{timesteps:1:}};
    smagorinskyConstant     {{smagorinsky_cs:0:1}};
}

DomainSetup
{
    meshFile                {{geometry_file}};
    dx                      {{dx:0:}};
    cells                   < {{grid_x}}, {{grid_y}}, {{grid_z}} >;
    periodic                < {{periodicity_x}}, {{periodicity_y}}, {{periodicity_z}} >;
}

Refinement
{
    refinementLevels        1;
    refineAroundObstacle    true;
}

VelDensAveragerBatched
{
    compInterval            {{comp_interval}};
    noOfTimestepsToAverage  {{no_of_timesteps_to_average}};
}

Output
{
    forcedWriteInterval     {{forced_write_interval}};
}
";
