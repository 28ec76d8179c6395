//! Run configuration: a JSON document whose absent keys take the library
//! defaults.

use std::path::Path;

use anyhow::{bail, Context};
use logistic_harvest::continuation::ContinuationConfig;
use logistic_harvest::grid::Grid;
use logistic_harvest::model::{CompetitionTerm, HarvestTerm};
use logistic_harvest::verify::Level;
use logistic_harvest::{Problem, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    pub model: ModelSection,
    pub solver: SolverSection,
    pub continuation: ContinuationSection,
    pub verify: VerifySection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            grid: GridSection { n: 199 },
            model: ModelSection::default(),
            solver: SolverSection::default(),
            continuation: ContinuationSection::default(),
            verify: VerifySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Config::default().grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "M")]
    pub threshold: f64,
    pub kappa: f64,
    pub p: i32,
    /// `[k, b_k]` pairs of `h = sum b_k sin(k pi x)`.
    pub h_modes: Vec<(usize, f64)>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            kappa: 1.0,
            p: 3,
            h_modes: vec![(2, -1.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub newton_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            newton_tol: s.newton_tol,
            max_iterations: s.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSection {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub tol_deg: f64,
    pub c_switch_factor: f64,
}

impl Default for ContinuationSection {
    fn default() -> Self {
        let c = ContinuationConfig::default();
        Self {
            ds0: c.ds0,
            ds_min: c.ds_min,
            ds_max: c.ds_max,
            tol_deg: SolverConfig::default().tol_deg,
            c_switch_factor: c.c_switch_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub levels: Vec<String>,
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            levels: vec!["full".into()],
            seed: 7,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn solver(&self) -> anyhow::Result<SolverConfig> {
        let s = SolverConfig {
            newton_tol: self.solver.newton_tol,
            max_iterations: self.solver.max_iterations,
            tol_deg: self.continuation.tol_deg,
            ..SolverConfig::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn continuation(&self) -> anyhow::Result<ContinuationConfig> {
        let c = ContinuationConfig {
            ds0: self.continuation.ds0,
            ds_min: self.continuation.ds_min,
            ds_max: self.continuation.ds_max,
            c_switch_factor: self.continuation.c_switch_factor,
            ..ContinuationConfig::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn levels(&self) -> anyhow::Result<Vec<Level>> {
        if self.verify.levels.is_empty() {
            bail!("verify.levels is empty");
        }
        self.verify.levels.iter().map(|l| Ok(l.parse::<Level>()?)).collect()
    }

    pub fn problem(&self) -> anyhow::Result<Problem> {
        let grid = Grid::new(self.grid.n)?;
        let f = CompetitionTerm::new(self.model.threshold, self.model.kappa, self.model.p)?;
        let h = HarvestTerm::build(&grid, &self.model.h_modes)?;
        Ok(Problem::new(grid, f, h)?)
    }

    /// Checks everything the commands will need before any work starts.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.solver()?;
        self.continuation()?;
        self.levels()?;
        let p = self.problem()?;
        let report = p.check_hypotheses();
        if let Some(bad) = report.items.iter().find(|i| !i.passed) {
            bail!("hypothesis {} fails: {}", bad.id, bad.detail);
        }
        Ok(())
    }
}
