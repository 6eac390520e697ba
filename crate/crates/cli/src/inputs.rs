//! Model, law and simulation settings read from files and flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use mfcce::abatement::{AbatementParams, LinearFlowLaw};
use mfcce::config::Document;
use mfcce::montecarlo::{Scheme, SimConfig};
use mfcce::{LqModel, ScenarioLaw, Session, TimeGrid};

use crate::failure::Failure;
use crate::output::Run;

pub const DEFAULT_GRID_N: usize = 2000;
pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_SEED: u64 = 42;

pub struct ModelInput {
    pub path: PathBuf,
    pub text: String,
    pub doc: Document,
    pub model: LqModel,
    pub abatement: Option<AbatementParams>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("reading {}: {e}", path.display())).into())
}

pub fn load_model(path: &Path) -> Result<ModelInput> {
    let text = read_text(path)?;
    let doc = Document::parse(&text)?;
    let model = LqModel::from_document(&doc)?;
    let abatement = if doc.has_section("abatement") {
        Some(AbatementParams::from_section(&doc.section("abatement")?)?)
    } else {
        None
    };
    Ok(ModelInput {
        path: path.to_path_buf(),
        text,
        doc,
        model,
        abatement,
    })
}

/// Flag values; `None` falls back to the `[sim]` section, then to defaults.
#[derive(Debug, Clone, Default)]
pub struct SimFlags {
    pub grid_n: Option<usize>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub antithetic: bool,
    pub heun: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub grid_n: usize,
    pub sim: SimConfig,
}

impl Settings {
    pub fn resolve(input: &ModelInput, flags: &SimFlags) -> Result<Self> {
        let mut grid_n = DEFAULT_GRID_N;
        let mut paths = DEFAULT_PATHS;
        let mut seed = DEFAULT_SEED;
        let mut antithetic = false;
        let mut scheme = Scheme::EulerMaruyama;
        if input.doc.has_section("sim") {
            let sec = input.doc.section("sim")?;
            sec.only(&["grid_n", "paths", "seed", "antithetic", "scheme"])?;
            if sec.contains("grid_n") {
                grid_n = sec.usize("grid_n")?;
            }
            if sec.contains("paths") {
                paths = sec.usize("paths")?;
            }
            if sec.contains("seed") {
                seed = sec.u64("seed")?;
            }
            if sec.contains("antithetic") {
                antithetic = sec.bool("antithetic")?;
            }
            if sec.contains("scheme") {
                scheme = match sec.string("scheme")? {
                    "em" => Scheme::EulerMaruyama,
                    "heun" => Scheme::Heun,
                    other => return Err(sec.error("scheme", format!("expected em or heun, got {other}")).into()),
                };
            }
        }
        grid_n = flags.grid_n.unwrap_or(grid_n);
        paths = flags.paths.unwrap_or(paths);
        seed = flags.seed.unwrap_or(seed);
        antithetic |= flags.antithetic;
        if flags.heun {
            scheme = Scheme::Heun;
        }
        let sim = SimConfig::new(paths, seed)?.antithetic(antithetic).scheme(scheme);
        Ok(Self { grid_n, sim })
    }

    pub fn grid(&self, input: &ModelInput) -> Result<TimeGrid> {
        Ok(TimeGrid::new(input.model.horizon, self.grid_n)?)
    }

    pub fn record(&self, run: &mut Run, grid: &TimeGrid, with_sim: bool) {
        run.grid = Some(crate::output::GridInfo {
            horizon: grid.horizon(),
            steps: grid.steps(),
        });
        run.param("grid_n", self.grid_n);
        if with_sim {
            run.seed = Some(self.sim.seed);
            run.param("paths", self.sim.paths);
            run.param("antithetic", self.sim.antithetic);
            run.param(
                "scheme",
                match self.sim.scheme {
                    Scheme::EulerMaruyama => "em",
                    Scheme::Heun => "heun",
                },
            );
        }
    }
}

pub fn session(input: &ModelInput, grid: TimeGrid) -> Result<Session> {
    Ok(Session::new(input.model.clone(), grid)?)
}

pub struct LawInput {
    pub path: PathBuf,
    pub text: String,
    pub law: ScenarioLaw,
    /// Set when the file gives the law through `z1` and `sigma2`.
    pub linear: Option<LinearFlowLaw>,
}

pub fn load_law(path: &Path, grid: &TimeGrid) -> Result<LawInput> {
    let text = read_text(path)?;
    let doc = Document::parse(&text)?;
    let law = ScenarioLaw::from_document(&doc, grid)?;
    let sec = doc.section("law")?;
    let linear = if sec.contains("z1") {
        Some(LinearFlowLaw::new(sec.f64("z1")?, sec.f64_or("sigma2", 0.0)?)?)
    } else {
        None
    };
    Ok(LawInput {
        path: path.to_path_buf(),
        text,
        law,
        linear,
    })
}
