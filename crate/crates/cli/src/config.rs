//! Run configuration: built-in defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use fret_core::basis::MAX_ATOMS;
use fret_core::lineshape::STARK_WINDOW;
use fret_core::{detuning_grid, CouplingConstants, DetectionChain, SpectrumRequest, StarkMap};
use serde::{Deserialize, Serialize};

/// Largest multiplicity simulated unless `--i` says otherwise.
pub const DEFAULT_MAX_SIMULATED: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Atom counts to simulate (comma separated), e.g. `--i 2,3,4,5`.
    #[arg(long = "i", value_delimiter = ',')]
    pub atoms: Option<Vec<usize>>,
    /// Interaction time, µs.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Cube side, µm.
    #[arg(long = "L")]
    pub side: Option<f64>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Förster C3, MHz·µm³. Also sets both exchange constants unless given.
    #[arg(long)]
    pub c3: Option<f64>,
    #[arg(long = "c3-exchange-s")]
    pub c3_exchange_s: Option<f64>,
    #[arg(long = "c3-exchange-sp")]
    pub c3_exchange_sp: Option<f64>,
    /// Mean number of atoms excited per pulse.
    #[arg(long)]
    pub nbar: Option<f64>,
    /// Detection efficiency.
    #[arg(long = "T")]
    pub efficiency: Option<f64>,
    #[arg(long)]
    pub p32: Option<f64>,
    #[arg(long = "rho-bg", allow_negative_numbers = true)]
    pub rho_bg: Option<f64>,
    /// Poisson truncation order of the detection sum.
    #[arg(long)]
    pub imax: Option<usize>,
    /// Resonance field, V/cm.
    #[arg(long)]
    pub fres: Option<f64>,
    /// Stark slope, MHz per V/cm.
    #[arg(long, allow_negative_numbers = true)]
    pub slope: Option<f64>,
    #[arg(long = "grid-min", allow_negative_numbers = true)]
    pub grid_min: Option<f64>,
    #[arg(long = "grid-max", allow_negative_numbers = true)]
    pub grid_max: Option<f64>,
    #[arg(long = "grid-step")]
    pub grid_step: Option<f64>,
    /// Field scan grid, V/cm.
    #[arg(long = "field-min")]
    pub field_min: Option<f64>,
    #[arg(long = "field-max")]
    pub field_max: Option<f64>,
    #[arg(long = "field-step")]
    pub field_step: Option<f64>,
    /// Worker threads for the Monte-Carlo loop (0 = all cores). Does not
    /// change results.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Read `rho_<i>.csv` files from this directory instead of simulating.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> fret_core::Result<Vec<f64>> {
        detuning_grid(self.min, self.max, self.step)
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub atoms: Vec<usize>,
    pub t0: f64,
    pub side: f64,
    pub realizations: usize,
    pub seed: u64,
    pub workers: usize,
    pub constants: CouplingConstants,
    pub grid: GridSpec,
    pub chain: DetectionChain,
    pub stark: StarkMap,
    pub field_grid: GridSpec,
    pub from: Option<PathBuf>,
    pub out: PathBuf,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            atoms: (2..=DEFAULT_MAX_SIMULATED).collect(),
            t0: 0.515,
            side: 18.0,
            realizations: 500,
            seed: 42,
            workers: 0,
            constants: CouplingConstants::default(),
            grid: GridSpec {
                min: -15.0,
                max: 15.0,
                step: 0.25,
            },
            chain: DetectionChain::default(),
            stark: StarkMap::default(),
            field_grid: GridSpec {
                min: 1.74,
                max: 1.84,
                step: 0.0005,
            },
            from: None,
            out: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

// TOML layout. Every key is optional; `run` and `metrics` are written into
// metadata sidecars and ignored on input so a sidecar can be fed back in.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<toml::Table>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub stark: StarkSection,
    #[serde(default)]
    pub fieldscan: GridSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<toml::Table>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub i: Option<Vec<usize>>,
    pub t0: Option<f64>,
    #[serde(rename = "L")]
    pub side: Option<f64>,
    pub realizations: Option<usize>,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub c3: Option<f64>,
    pub c3_exchange_s: Option<f64>,
    pub c3_exchange_sp: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub nbar: Option<f64>,
    #[serde(rename = "T")]
    pub efficiency: Option<f64>,
    pub p32: Option<f64>,
    pub rho_bg: Option<f64>,
    pub imax: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarkSection {
    pub fres: Option<f64>,
    pub slope: Option<f64>,
    pub delta0: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("--config: cannot read {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("--config: cannot parse {}", path.display()))
    }
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}

impl RunConfig {
    /// Layers the config file (if `--config` is given) and the flags over
    /// `defaults`.
    pub fn resolve(defaults: RunConfig, flags: &Overrides) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let d = defaults;
        let sim = &file.simulation;
        let c3 = pick(&flags.c3, &file.coupling.c3, d.constants.c3_forster);
        // Exchange constants follow C3 unless set explicitly somewhere.
        let exchange_default = |own: f64| {
            if flags.c3.is_some() || file.coupling.c3.is_some() {
                c3
            } else {
                own
            }
        };
        Ok(Self {
            atoms: pick(&flags.atoms, &sim.i, d.atoms),
            t0: pick(&flags.t0, &sim.t0, d.t0),
            side: pick(&flags.side, &sim.side, d.side),
            realizations: pick(&flags.realizations, &sim.realizations, d.realizations),
            seed: pick(&flags.seed, &sim.seed, d.seed),
            workers: pick(&flags.workers, &sim.workers, d.workers),
            constants: CouplingConstants {
                c3_forster: c3,
                c3_exchange_s: pick(
                    &flags.c3_exchange_s,
                    &file.coupling.c3_exchange_s,
                    exchange_default(d.constants.c3_exchange_s),
                ),
                c3_exchange_sp: pick(
                    &flags.c3_exchange_sp,
                    &file.coupling.c3_exchange_sp,
                    exchange_default(d.constants.c3_exchange_sp),
                ),
            },
            grid: GridSpec {
                min: pick(&flags.grid_min, &file.grid.min, d.grid.min),
                max: pick(&flags.grid_max, &file.grid.max, d.grid.max),
                step: pick(&flags.grid_step, &file.grid.step, d.grid.step),
            },
            chain: DetectionChain {
                n_bar: pick(&flags.nbar, &file.detection.nbar, d.chain.n_bar),
                efficiency: pick(&flags.efficiency, &file.detection.efficiency, d.chain.efficiency),
                rho_bg: pick(&flags.rho_bg, &file.detection.rho_bg, d.chain.rho_bg),
                p32: pick(&flags.p32, &file.detection.p32, d.chain.p32),
                i_max: pick(&flags.imax, &file.detection.imax, d.chain.i_max),
            },
            stark: StarkMap {
                f_res: pick(&flags.fres, &file.stark.fres, d.stark.f_res),
                slope: pick(&flags.slope, &file.stark.slope, d.stark.slope),
                delta0: file.stark.delta0.unwrap_or(d.stark.delta0),
            },
            field_grid: GridSpec {
                min: pick(&flags.field_min, &file.fieldscan.min, d.field_grid.min),
                max: pick(&flags.field_max, &file.fieldscan.max, d.field_grid.max),
                step: pick(&flags.field_step, &file.fieldscan.step, d.field_grid.step),
            },
            from: flags.from.clone().or(d.from),
            out: pick(&flags.out, &file.output.dir, d.out),
            format: pick(&flags.format, &file.output.format, d.format),
        })
    }

    pub fn request(&self, atoms: usize) -> Result<SpectrumRequest> {
        Ok(SpectrumRequest {
            atoms,
            detunings: self.grid.points()?,
            t0: self.t0,
            side: self.side,
            realizations: self.realizations,
            constants: self.constants,
            seed: self.seed,
        })
    }

    /// Checks the simulation inputs: atom list, request fields and grid.
    pub fn validate_simulation(&self) -> Result<()> {
        if self.atoms.is_empty() {
            bail!("--i: at least one atom count is required");
        }
        for &i in &self.atoms {
            if !(1..=MAX_ATOMS).contains(&i) {
                bail!("--i: atom count {i} outside supported range [1, {MAX_ATOMS}]");
            }
        }
        if self.atoms.windows(2).any(|w| w[1] <= w[0]) {
            bail!("--i: atom counts must be strictly increasing");
        }
        if !(self.t0.is_finite() && self.t0 >= 0.0) {
            bail!("--t0: must be >= 0 µs, got {}", self.t0);
        }
        if !(self.side.is_finite() && self.side > 0.0) {
            bail!("--L: must be > 0 µm, got {}", self.side);
        }
        if self.realizations == 0 {
            bail!("--realizations: must be >= 1");
        }
        for (flag, v) in [
            ("--c3", self.constants.c3_forster),
            ("--c3-exchange-s", self.constants.c3_exchange_s),
            ("--c3-exchange-sp", self.constants.c3_exchange_sp),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                bail!("{flag}: must be finite and >= 0, got {v}");
            }
        }
        validate_grid(&self.grid, "--grid-min", "--grid-max", "--grid-step")?;
        for &i in &self.atoms {
            self.request(i)?
                .validate()
                .with_context(|| format!("--i {i}: request rejected"))?;
        }
        Ok(())
    }

    /// Additional checks for commands that run the detection chain.
    pub fn validate_detection(&self) -> Result<()> {
        self.validate_simulation()?;
        if self.atoms.first() != Some(&2) || self.atoms.windows(2).any(|w| w[1] != w[0] + 1) {
            bail!(
                "--i: the detection chain needs consecutive atom counts starting at 2, got {:?}",
                self.atoms
            );
        }
        let c = &self.chain;
        if !(c.n_bar.is_finite() && c.n_bar >= 0.0) {
            bail!("--nbar: must be >= 0, got {}", c.n_bar);
        }
        if !(c.efficiency > 0.0 && c.efficiency <= 1.0) {
            bail!("--T: must lie in (0, 1], got {}", c.efficiency);
        }
        if !(0.0..=1.0).contains(&c.p32) {
            bail!("--p32: must lie in [0, 1], got {}", c.p32);
        }
        if !c.rho_bg.is_finite() {
            bail!("--rho-bg: must be finite");
        }
        if !(2..=MAX_ATOMS).contains(&c.i_max) {
            bail!("--imax: must lie in [2, {MAX_ATOMS}], got {}", c.i_max);
        }
        Ok(())
    }

    /// Additional checks for the field scan: the field grid must sit inside
    /// the linear Stark window and map into the detuning grid.
    pub fn validate_fieldscan(&self) -> Result<()> {
        self.validate_detection()?;
        if !(self.stark.slope.is_finite() && self.stark.slope != 0.0) {
            bail!("--slope: must be finite and nonzero, got {}", self.stark.slope);
        }
        if !self.stark.f_res.is_finite() {
            bail!("--fres: must be finite");
        }
        validate_grid(&self.field_grid, "--field-min", "--field-max", "--field-step")?;
        let fields = self.field_grid.points()?;
        for &f in [fields[0], fields[fields.len() - 1]].iter() {
            if (f - self.stark.f_res).abs() > STARK_WINDOW + 1e-12 {
                bail!(
                    "--field-min/--field-max: field {f} V/cm outside the linear window ±{STARK_WINDOW} V/cm around {} V/cm",
                    self.stark.f_res
                );
            }
            let d = self.stark.slope * (f - self.stark.f_res);
            if d < self.grid.min - 1e-9 || d > self.grid.max + 1e-9 {
                bail!(
                    "--field-min/--field-max: field {f} V/cm maps to {d:.3} MHz, outside the detuning grid [{}, {}]",
                    self.grid.min,
                    self.grid.max
                );
            }
        }
        Ok(())
    }

    /// Config file equivalent of this run, used for metadata sidecars.
    pub fn to_file_config(&self) -> FileConfig {
        FileConfig {
            run: None,
            simulation: SimulationSection {
                i: Some(self.atoms.clone()),
                t0: Some(self.t0),
                side: Some(self.side),
                realizations: Some(self.realizations),
                seed: Some(self.seed),
                workers: None,
            },
            coupling: CouplingSection {
                c3: Some(self.constants.c3_forster),
                c3_exchange_s: Some(self.constants.c3_exchange_s),
                c3_exchange_sp: Some(self.constants.c3_exchange_sp),
            },
            grid: GridSection {
                min: Some(self.grid.min),
                max: Some(self.grid.max),
                step: Some(self.grid.step),
            },
            detection: DetectionSection {
                nbar: Some(self.chain.n_bar),
                efficiency: Some(self.chain.efficiency),
                p32: Some(self.chain.p32),
                rho_bg: Some(self.chain.rho_bg),
                imax: Some(self.chain.i_max),
            },
            stark: StarkSection {
                fres: Some(self.stark.f_res),
                slope: Some(self.stark.slope),
                delta0: Some(self.stark.delta0),
            },
            fieldscan: GridSection {
                min: Some(self.field_grid.min),
                max: Some(self.field_grid.max),
                step: Some(self.field_grid.step),
            },
            output: OutputSection {
                dir: None,
                format: Some(self.format),
            },
            metrics: None,
        }
    }
}

fn validate_grid(g: &GridSpec, min_flag: &str, max_flag: &str, step_flag: &str) -> Result<()> {
    if !(g.min.is_finite() && g.max.is_finite()) {
        bail!("{min_flag}/{max_flag}: bounds must be finite");
    }
    if !(g.step.is_finite() && g.step > 0.0) {
        bail!("{step_flag}: must be > 0, got {}", g.step);
    }
    if g.max < g.min {
        bail!("{min_flag}/{max_flag}: empty grid ({} > {})", g.min, g.max);
    }
    Ok(())
}
