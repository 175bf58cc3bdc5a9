use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use vstar_core::states::standard_symplectic;
use vstar_core::{SmoothMap, StarProduct, StateFunctional, VerticalMultivector};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything an experiment needs; every field except `n` has a default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// Base dimension; points of `TM` have `2n` coordinates.
    pub n: usize,
    #[serde(default)]
    pub theta: ThetaSpec,
    /// Defaults to the natural mode of `theta`.
    #[serde(default)]
    pub star_mode: Option<ModeKind>,
    #[serde(default = "default_order", alias = "N_lambda")]
    pub n_lambda: usize,
    #[serde(default)]
    pub lambda_num: Option<f64>,
    /// Inverse metric `g⁻¹` of the coherent state, identity by default.
    #[serde(default)]
    pub metric_inv: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub samples: Samples,
    #[serde(default)]
    pub output: Output,
    #[serde(default)]
    pub state: StateKind,
    /// Fiber point (`n` entries, base at the origin) or full point (`2n`).
    #[serde(default)]
    pub point: Option<Vec<f64>>,
    /// Symmetric matrix of the quadratic observable, `η` by default.
    #[serde(default)]
    pub observable: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lightcone: Grid,
    /// `(q, q')` concatenated, `2n` entries each.
    #[serde(default)]
    pub pairs: Vec<Vec<f64>>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_order() -> usize {
    2
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSpec {
    /// Standard symplectic matrix when `matrix` is omitted.
    Constant {
        #[serde(default, alias = "Theta")]
        matrix: Option<Vec<Vec<f64>>>,
    },
    /// Standard symplectic constant `Θ`.
    #[default]
    Standard,
    /// Structure constants `c[k][i][j]`; so(3) when omitted and `n = 3`.
    LieLinear {
        #[serde(default)]
        structure: Option<Vec<Vec<Vec<f64>>>>,
    },
    /// Entries `θ^{ij}(p)` as functions on the base.
    Fiberwise { entries: Vec<FiberwiseEntry> },
    CommutingCompact {
        #[serde(default, alias = "Theta")]
        matrix: Option<Vec<Vec<f64>>>,
        r: f64,
        eps: f64,
    },
    BallCompact {
        #[serde(default, alias = "Theta")]
        matrix: Option<Vec<Vec<f64>>>,
        r: f64,
        eps: f64,
    },
    /// `χ(|v|)Θ`, Poisson only for two-dimensional fibers.
    RadialScaled {
        #[serde(default, alias = "Theta")]
        matrix: Option<Vec<Vec<f64>>>,
        r: f64,
        eps: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberwiseEntry {
    pub i: usize,
    pub j: usize,
    pub map: SmoothMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    MoyalConstant,
    MoyalFiberwise,
    GeneralVertical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    #[default]
    Coherent,
    Delta,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Samples {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    100
}

impl Default for Samples {
    fn default() -> Self {
        Samples {
            count: default_count(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub max_norm: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            max_norm: 1.0,
            step: 0.05,
        }
    }
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        let count = (self.max_norm / self.step + 1e-9).floor() as usize;
        (0..=count)
            .map(|k| (k as f64 * self.step * 1e12).round() / 1e12)
            .collect()
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(format!("{what} must be a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn minimal(n: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "n": n })).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if self.n_lambda > vstar_core::formal::MAX_ORDER {
            return Err(invalid(format!(
                "N_lambda must be at most {}, got {}",
                vstar_core::formal::MAX_ORDER,
                self.n_lambda
            )));
        }
        if let Some(l) = self.lambda_num {
            if !(l.is_finite() && l >= 0.0) {
                return Err(invalid(format!("lambda_num must be finite and non-negative, got {l}")));
            }
        }
        if self.samples.count == 0 {
            return Err(invalid("samples.count must be positive"));
        }
        if !(self.lightcone.step > 0.0 && self.lightcone.max_norm >= 0.0 && self.lightcone.max_norm.is_finite()) {
            return Err(invalid("lightcone grid needs step > 0 and a finite max_norm >= 0"));
        }
        if let Some(p) = &self.point {
            if p.len() != self.n && p.len() != 2 * self.n {
                return Err(invalid(format!("point must have {} or {} entries", self.n, 2 * self.n)));
            }
        }
        for pair in &self.pairs {
            if pair.len() != 2 * self.n {
                return Err(invalid(format!("each pair (q, q') must have {} entries", 2 * self.n)));
            }
        }
        let all = self
            .point
            .iter()
            .chain(&self.pairs)
            .flatten()
            .chain(self.metric_inv.iter().flatten().flatten())
            .chain(self.observable.iter().flatten().flatten());
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(invalid("numeric entries must be finite"));
        }
        self.metric()?;
        self.observable_matrix()?;
        self.theta()?;
        self.mode()?;
        Ok(())
    }

    pub fn metric(&self) -> Result<DMatrix<f64>, CliError> {
        let g = match &self.metric_inv {
            Some(rows) => matrix(rows, self.n, "metric_inv")?,
            None => DMatrix::identity(self.n, self.n),
        };
        if (&g - g.transpose()).abs().max() > 1e-12 || g.clone().cholesky().is_none() {
            return Err(invalid("metric_inv must be symmetric positive definite"));
        }
        Ok(g)
    }

    /// The quadratic observable and whether it is the Lorentz square.
    pub fn observable_matrix(&self) -> Result<(DMatrix<f64>, bool), CliError> {
        match &self.observable {
            Some(rows) => {
                let a = matrix(rows, self.n, "observable")?;
                if (&a - a.transpose()).abs().max() > 0.0 {
                    return Err(invalid("observable must be symmetric"));
                }
                Ok((a, false))
            }
            None => Ok((vstar_core::QuadraticObservable::eta(self.n).matrix().clone(), true)),
        }
    }

    fn theta_matrix(&self, m: &Option<Vec<Vec<f64>>>) -> Result<DMatrix<f64>, CliError> {
        let t = match m {
            Some(rows) => matrix(rows, self.n, "theta matrix")?,
            None => standard_symplectic(self.n),
        };
        if (&t + t.transpose()).abs().max() > 0.0 {
            return Err(invalid("theta matrix must be antisymmetric"));
        }
        Ok(t)
    }

    pub fn theta(&self) -> Result<VerticalMultivector, CliError> {
        let n = self.n;
        let built = match &self.theta {
            ThetaSpec::Standard => VerticalMultivector::constant(&standard_symplectic(n)),
            ThetaSpec::Constant { matrix } => VerticalMultivector::constant(&self.theta_matrix(matrix)?),
            ThetaSpec::LieLinear { structure } => {
                let s = match structure {
                    Some(s) => s.clone(),
                    None if n == 3 => VerticalMultivector::so3_structure(),
                    None => return Err(invalid("lie_linear needs structure constants unless n = 3")),
                };
                if s.len() != n || s.iter().any(|c| c.len() != n || c.iter().any(|row| row.len() != n)) {
                    return Err(invalid(format!("structure constants must have shape {n}x{n}x{n}")));
                }
                VerticalMultivector::lie_linear(&s)
            }
            ThetaSpec::Fiberwise { entries } => {
                let mut map = BTreeMap::new();
                for e in entries {
                    if e.i >= e.j || e.j >= n {
                        return Err(invalid(format!("fiberwise entry ({}, {}) needs i < j < n", e.i, e.j)));
                    }
                    if map.insert((e.i, e.j), e.map.clone()).is_some() {
                        return Err(invalid(format!("duplicate fiberwise entry ({}, {})", e.i, e.j)));
                    }
                }
                VerticalMultivector::fiberwise(n, map)
            }
            ThetaSpec::CommutingCompact { matrix, r, eps }
            | ThetaSpec::BallCompact { matrix, r, eps }
            | ThetaSpec::RadialScaled { matrix, r, eps } => {
                if !(*r > 0.0 && *eps > 0.0 && r.is_finite() && eps.is_finite()) {
                    return Err(invalid("r and eps must be positive"));
                }
                let t = self.theta_matrix(matrix)?;
                match &self.theta {
                    ThetaSpec::CommutingCompact { .. } => VerticalMultivector::commuting_compact(&t, *r, *eps),
                    ThetaSpec::BallCompact { .. } => VerticalMultivector::ball_compact(&t, *r, *eps),
                    _ => VerticalMultivector::radial_scaled(&t, *r, *eps),
                }
            }
        };
        built.map_err(|e| invalid(format!("theta: {e}")))
    }

    pub fn mode(&self) -> Result<ModeKind, CliError> {
        let natural = match self.theta {
            ThetaSpec::Standard | ThetaSpec::Constant { .. } => ModeKind::MoyalConstant,
            ThetaSpec::Fiberwise { .. } => ModeKind::MoyalFiberwise,
            _ => ModeKind::GeneralVertical,
        };
        let mode = self.star_mode.unwrap_or(natural);
        let fits = match mode {
            ModeKind::MoyalConstant => natural == ModeKind::MoyalConstant,
            ModeKind::MoyalFiberwise => natural != ModeKind::GeneralVertical,
            ModeKind::GeneralVertical => true,
        };
        if !fits {
            return Err(invalid(format!("star_mode {mode:?} does not accept this theta")));
        }
        if mode == ModeKind::GeneralVertical && self.n_lambda > vstar_core::starprod::GENERAL_MAX_ORDER {
            return Err(invalid(format!(
                "general_vertical supports N_lambda <= {}",
                vstar_core::starprod::GENERAL_MAX_ORDER
            )));
        }
        Ok(mode)
    }

    pub fn star_product(&self) -> Result<StarProduct, CliError> {
        let theta = self.theta()?;
        let built = match self.mode()? {
            ModeKind::MoyalConstant => {
                let zero = vec![0.0; 2 * self.n];
                let m = theta.matrix_at(&zero).map_err(|e| invalid(e.to_string()))?;
                StarProduct::moyal_constant(&m, self.n_lambda)
            }
            ModeKind::MoyalFiberwise => StarProduct::moyal_fiberwise(theta, self.n_lambda),
            ModeKind::GeneralVertical => StarProduct::general_vertical(theta, self.n_lambda),
        };
        built.map_err(|e| invalid(format!("star product: {e}")))
    }

    /// Full `2n` point of `TM`.
    pub fn tm_point(&self) -> Vec<f64> {
        match &self.point {
            Some(p) if p.len() == 2 * self.n => p.clone(),
            Some(p) => vec![0.0; self.n].into_iter().chain(p.iter().copied()).collect(),
            None => vec![0.0; 2 * self.n],
        }
    }

    pub fn state(&self) -> Result<StateFunctional, CliError> {
        let x = self.tm_point();
        let built = match self.state {
            StateKind::Coherent => StateFunctional::coherent(&x, &self.metric()?),
            StateKind::Delta => StateFunctional::delta(&x),
        };
        built.map_err(|e| invalid(format!("state: {e}")))
    }
}
