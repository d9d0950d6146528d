//! Deterministic draw stream shared by every stochastic choice in a run.

pub mod sobol;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{util, Error, Result};

pub const STATE_FILE: &str = "generator_state.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Uniform,
    Sobol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    InitialTest,
    FinalRun,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Uniform => "uniform",
            SamplingMode::Sobol => "sobol",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(SamplingMode::Uniform),
            "sobol" => Ok(SamplingMode::Sobol),
            _ => Err(format!("unknown mode '{s}'")),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::InitialTest => "initial_test",
            Phase::FinalRun => "final_run",
        })
    }
}

impl FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "initial_test" => Ok(Phase::InitialTest),
            "final_run" => Ok(Phase::FinalRun),
            _ => Err(format!("unknown phase '{s}'")),
        }
    }
}

/// Sampler bookkeeping. `index` is the ordinal of the next point; in Sobol
/// mode ordinal n is standard sequence index n + 1 (the origin is skipped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorState {
    pub mode: SamplingMode,
    pub seed: u64,
    pub dimension: Option<usize>,
    pub index: u64,
    pub samples_generated: u64,
    pub phase: Phase,
    pub skip_zero: bool,
}

impl GeneratorState {
    pub fn new(mode: SamplingMode, seed: u64) -> Self {
        GeneratorState {
            mode,
            seed,
            dimension: None,
            index: 0,
            samples_generated: 0,
            phase: Phase::InitialTest,
            skip_zero: true,
        }
    }

    /// Lock the dimension and, in Sobol mode, skip past the discovery draws.
    pub fn freeze_dimension(&mut self, d: usize, initial_test_repeat: u64) -> Result<()> {
        if self.phase == Phase::FinalRun {
            return Err(Error::Invalid("dimension locked".into()));
        }
        if self.mode == SamplingMode::Sobol {
            sobol::check_dimension(d)?;
            self.index += initial_test_repeat;
        } else if d == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        self.dimension = Some(d);
        self.phase = Phase::FinalRun;
        Ok(())
    }

    pub fn point_at(&self, ordinal: u64) -> Result<Vec<f64>> {
        let d = self
            .dimension
            .ok_or_else(|| Error::Invalid("dimension not frozen".into()))?;
        match self.mode {
            SamplingMode::Sobol => {
                if self.phase != Phase::FinalRun {
                    return Err(Error::Invalid("sobol draws require final_run phase".into()));
                }
                sobol::point_at(ordinal + self.skip_zero as u64, d)
            }
            SamplingMode::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(ordinal);
                Ok((0..d).map(|_| rng.gen::<f64>()).collect())
            }
        }
    }

    pub fn next_point(&mut self) -> Result<Vec<f64>> {
        let p = self.point_at(self.index)?;
        self.index += 1;
        Ok(p)
    }

    pub fn advance_on_reject(&mut self) {
        self.index += 1;
    }

    pub fn record_accept(&mut self) {
        self.samples_generated += 1;
    }

    pub fn to_text(&self) -> String {
        let dimension = self.dimension.map(|d| d.to_string()).unwrap_or_default();
        format!(
            "format=1\nmode={}\nseed={}\ndimension={}\nindex={}\nsamples_generated={}\nphase={}\nskip_zero={}\n",
            self.mode, self.seed, dimension, self.index, self.samples_generated, self.phase, self.skip_zero
        )
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            match line.split_once('=') {
                Some((k, v)) => {
                    kv.insert(k.trim().to_string(), v.trim().to_string());
                }
                None => return Err(format!("malformed line '{line}'")),
            }
        }
        let mut problems = Vec::new();
        fn field<T: FromStr>(kv: &BTreeMap<String, String>, key: &str, problems: &mut Vec<String>) -> Option<T> {
            match kv.get(key) {
                None => {
                    problems.push(format!("missing {key}"));
                    None
                }
                Some(v) => match v.parse() {
                    Ok(x) => Some(x),
                    Err(_) => {
                        problems.push(format!("invalid {key}='{v}'"));
                        None
                    }
                },
            }
        }
        let mode = field::<SamplingMode>(&kv, "mode", &mut problems);
        let seed = field::<u64>(&kv, "seed", &mut problems);
        let index = field::<u64>(&kv, "index", &mut problems);
        let samples_generated = field::<u64>(&kv, "samples_generated", &mut problems);
        let phase = field::<Phase>(&kv, "phase", &mut problems);
        let skip_zero = match kv.get("skip_zero") {
            None => Some(true),
            Some(_) => field::<bool>(&kv, "skip_zero", &mut problems),
        };
        let dimension = match kv.get("dimension").map(String::as_str) {
            None | Some("") => None,
            Some(v) => match v.parse::<usize>() {
                Ok(d) if d > 0 => Some(d),
                _ => {
                    problems.push(format!("invalid dimension='{v}'"));
                    None
                }
            },
        };
        if phase == Some(Phase::FinalRun) && dimension.is_none() && !problems.iter().any(|p| p.starts_with("invalid dimension")) {
            problems.push("missing dimension (required in final_run)".into());
        }
        if !problems.is_empty() {
            return Err(problems.join("; "));
        }
        Ok(GeneratorState {
            mode: mode.unwrap(),
            seed: seed.unwrap(),
            dimension,
            index: index.unwrap(),
            samples_generated: samples_generated.unwrap(),
            phase: phase.unwrap(),
            skip_zero: skip_zero.unwrap(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        util::write_atomic(&dir.join(STATE_FILE), self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = util::read_string(path)?;
        Self::from_text(&text).map_err(|m| Error::format(path, m))
    }
}
