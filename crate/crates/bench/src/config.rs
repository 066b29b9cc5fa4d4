//! Flat `key = value` study configuration with bundled presets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ncbem::formulations::FormulationKind;
use ncbem::Vec3;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("`{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("`{key}` must be positive, got {value}")]
    NotPositive { key: String, value: f64 },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown study `{0}`")]
    UnknownStudy(String),
    #[error("config is for study `{found}` but `{expected}` was requested")]
    StudyMismatch { expected: Study, found: Study },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    ProjectionError,
    Convergence,
    Efficiency,
    Screen,
    Foam,
}

impl Study {
    pub const ALL: [Study; 5] = [Study::ProjectionError, Study::Convergence, Study::Efficiency, Study::Screen, Study::Foam];

    pub fn name(self) -> &'static str {
        match self {
            Study::ProjectionError => "projection-error",
            Study::Convergence => "convergence",
            Study::Efficiency => "efficiency",
            Study::Screen => "screen",
            Study::Foam => "foam",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Study::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| ConfigError::UnknownStudy(s.to_string()))
    }
}

/// Every knob of every study. Keys not used by a study are ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyConfig {
    pub study: Option<Study>,
    pub frequency: f64,
    pub c_ext: f64,
    pub c_int: f64,
    pub rho_ext: f64,
    pub rho_int: f64,
    /// Interior attenuation in neper per metre at `f_alpha`.
    pub alpha_int: f64,
    pub f_alpha: f64,
    /// Mesh resolution `λ / h` with `h` the longest edge, exterior side.
    pub elements_per_wavelength: f64,
    /// Interior side of nonconforming pairs.
    pub int_elements_per_wavelength: f64,
    pub max_ext_nodes: usize,
    pub formulations: Vec<FormulationKind>,
    pub seed: u64,
    pub tolerance: f64,
    pub direction: [f64; 3],
    /// Evaluation grid points per side on the plane `z = 0.5`.
    pub grid_points: usize,
    // projection-error
    pub square_n: usize,
    /// Perturbation levels as fractions of the mesh width.
    pub sigmas: Vec<f64>,
    pub ladder: Vec<usize>,
    // convergence
    /// Elements per wavelength of the successive levels.
    pub levels: Vec<f64>,
    pub reference_elements_per_wavelength: f64,
    // screen
    pub screen_n: usize,
    pub coarse_elements_per_wavelength: f64,
    /// Ratio of the preconditioner wavenumber to the physical one.
    pub preconditioner_wavenumber_scale: f64,
    pub fine_level_weight: f64,
    // foam
    pub foam_nx: usize,
    pub foam_ny: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            study: None,
            frequency: 1.0,
            c_ext: 0.3,
            c_int: 1.1,
            rho_ext: 1.0,
            rho_int: 2.0,
            alpha_int: 0.0,
            f_alpha: 1.0,
            elements_per_wavelength: 6.0,
            int_elements_per_wavelength: 6.0,
            max_ext_nodes: 4000,
            formulations: FormulationKind::ALL.to_vec(),
            seed: 1,
            tolerance: 1e-5,
            direction: [1.0, 0.0, 0.0],
            grid_points: 41,
            square_n: 16,
            sigmas: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            ladder: vec![5, 11, 23, 47],
            levels: vec![2.0, 3.0, 4.0],
            reference_elements_per_wavelength: 12.0,
            screen_n: 40,
            coarse_elements_per_wavelength: 2.0,
            preconditioner_wavenumber_scale: 1.0,
            fine_level_weight: 0.0,
            foam_nx: 2,
            foam_ny: 2,
        }
    }
}

pub const PRESETS: [&str; 7] = ["standard", "high-frequency", "high-contrast", "convergence", "unit-square", "foam", "screen"];

impl StudyConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let base = StudyConfig::default();
        Ok(match name {
            "standard" => base,
            "high-frequency" => StudyConfig { frequency: 3.0, ..base },
            "high-contrast" => StudyConfig { c_ext: 0.1, rho_ext: 0.11, ..base },
            // standard media at a frequency low enough for a 12 elements per
            // wavelength reference to fit in memory; f = 0.3 would put the
            // exterior wavenumber on a Neumann eigenvalue of the unit cube
            "convergence" => StudyConfig {
                study: Some(Study::Convergence),
                frequency: 0.28,
                formulations: vec![FormulationKind::PmchwtExt],
                levels: vec![3.0, 6.0, 10.0],
                ..base
            },
            "unit-square" => StudyConfig { study: Some(Study::ProjectionError), ..base },
            "foam" => StudyConfig {
                study: Some(Study::Foam),
                frequency: 1500.0,
                c_ext: 340.0,
                rho_ext: 1.225,
                c_int: 1104.0,
                rho_int: 1750.0,
                alpha_int: 86.3,
                f_alpha: 2e6,
                formulations: vec![FormulationKind::PmchwtExt, FormulationKind::HcExtNeu],
                ..base
            },
            "screen" => StudyConfig {
                study: Some(Study::Screen),
                frequency: 2.3,
                c_ext: 1.0,
                rho_ext: 1.0,
                direction: [1.0, 0.0, 0.0],
                ..base
            },
            _ => return Err(ConfigError::UnknownPreset(name.to_string())),
        })
    }

    /// Applies the `key = value` lines of `text` on top of `self`.
    pub fn apply(mut self, text: &str) -> Result<Self, ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            self.set(key, value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: i + 1, key },
                other => other,
            })?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_file(self, path: &Path) -> Result<Self, ConfigError> {
        self.apply(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::Value { key: key.to_string(), value: value.to_string() };
        let float = || value.parse::<f64>().map_err(|_| bad());
        let int = || value.parse::<usize>().map_err(|_| bad());
        let floats = || value.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>();
        let ints = || value.split(',').map(|s| s.trim().parse::<usize>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>();
        match key {
            "study" => self.study = Some(value.parse()?),
            "frequency" | "f" => self.frequency = float()?,
            "c_ext" => self.c_ext = float()?,
            "c_int" => self.c_int = float()?,
            "rho_ext" => self.rho_ext = float()?,
            "rho_int" => self.rho_int = float()?,
            "alpha_int" | "alpha" => self.alpha_int = float()?,
            "f_alpha" => self.f_alpha = float()?,
            "elements_per_wavelength" => self.elements_per_wavelength = float()?,
            "int_elements_per_wavelength" => self.int_elements_per_wavelength = float()?,
            "max_ext_nodes" => self.max_ext_nodes = int()?,
            "formulations" => self.formulations = parse_formulations(value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "tolerance" => self.tolerance = float()?,
            "direction" => {
                let v = floats()?;
                self.direction = v.try_into().map_err(|_| bad())?;
            }
            "grid_points" => self.grid_points = int()?,
            "square_n" => self.square_n = int()?,
            "sigmas" => self.sigmas = floats()?,
            "ladder" => self.ladder = ints()?,
            "levels" => self.levels = floats()?,
            "reference_elements_per_wavelength" => self.reference_elements_per_wavelength = float()?,
            "screen_n" => self.screen_n = int()?,
            "coarse_elements_per_wavelength" => self.coarse_elements_per_wavelength = float()?,
            "preconditioner_wavenumber_scale" => self.preconditioner_wavenumber_scale = float()?,
            "fine_level_weight" => self.fine_level_weight = float()?,
            "foam_nx" => self.foam_nx = int()?,
            "foam_ny" => self.foam_ny = int()?,
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.to_string() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("frequency", self.frequency),
            ("c_ext", self.c_ext),
            ("c_int", self.c_int),
            ("rho_ext", self.rho_ext),
            ("rho_int", self.rho_int),
            ("f_alpha", self.f_alpha),
            ("elements_per_wavelength", self.elements_per_wavelength),
            ("int_elements_per_wavelength", self.int_elements_per_wavelength),
            ("tolerance", self.tolerance),
            ("reference_elements_per_wavelength", self.reference_elements_per_wavelength),
            ("coarse_elements_per_wavelength", self.coarse_elements_per_wavelength),
            ("preconditioner_wavenumber_scale", self.preconditioner_wavenumber_scale),
        ];
        let lists = self.sigmas.iter().chain(&self.levels).map(|v| ("sigmas/levels", *v));
        let counts = [
            ("max_ext_nodes", self.max_ext_nodes),
            ("grid_points", self.grid_points),
            ("square_n", self.square_n),
            ("screen_n", self.screen_n),
            ("foam_nx", self.foam_nx),
            ("foam_ny", self.foam_ny),
        ]
        .into_iter()
        .chain(self.ladder.iter().map(|n| ("ladder", *n)))
        .map(|(k, n)| (k, n as f64));
        for (key, value) in positive.into_iter().chain(lists).chain(counts) {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NotPositive { key: key.to_string(), value });
            }
        }
        if self.alpha_int < 0.0 || self.fine_level_weight < 0.0 {
            return Err(ConfigError::Invalid("alpha_int and fine_level_weight must not be negative".into()));
        }
        if self.formulations.is_empty() {
            return Err(ConfigError::Invalid("no formulations selected".into()));
        }
        if Vec3::from(self.direction).norm() == 0.0 {
            return Err(ConfigError::Invalid("direction must be nonzero".into()));
        }
        Ok(())
    }
}

pub fn parse_formulations(list: &str) -> Result<Vec<FormulationKind>, ConfigError> {
    list.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<FormulationKind>().map_err(|_| ConfigError::Value { key: "formulations".into(), value: s.into() }))
        .collect()
}
