//! TOML configuration files and key-by-key overrides.
//!
//! A run config is a flat sectioned file:
//!
//! ```toml
//! n = 256                 # truncation size
//!
//! [kernel]
//! family = "sum_power"    # constant | sum_power | product_power | multiplicative | table
//! C = 1.0
//! gamma = 0.5
//!
//! [diffusion]
//! family = "limit"        # constant | limit | list
//! d_inf = 1.0
//! A = 1.0
//! r = 1.0
//!
//! [grid]
//! N = 64                  # spatial cells; 1 = space-homogeneous
//!
//! [time]
//! dt = 1e-3
//! T = 2.0
//!
//! [initial]
//! family = "monodisperse" # monodisperse | geometric | table
//! mass = 1.0
//! profile = "uniform"     # uniform | cosine
//!
//! [reaction]
//! scheme = "rk4"          # rk4 | semi_implicit_loss
//!
//! [output]
//! stride = 10
//! moments = [0.0, 1.0, 2.0]
//! lp = [2.0]
//! ```
//!
//! Command-line flags override keys one-for-one as dotted paths
//! (`--set kernel.gamma=0.7`, `--set time.T=1.0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DiffusionProfile;
use crate::kernels::KernelSpec;
use crate::simulator::{
    InitialData, OutputConfig, ReactionScheme, SimConfig, SimTolerances, SpatialProfile,
};
use crate::Real;

fn config_err(msg: impl std::fmt::Display) -> Error {
    Error::Config(msg.to_string())
}

// --- sections ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub family: String,
    #[serde(rename = "C")]
    pub c: Option<Real>,
    pub c0: Option<Real>,
    pub gamma: Option<Real>,
    pub alpha: Option<Real>,
    pub beta: Option<Real>,
    /// CSV path for the table family (header `i,j,a`, row-major).
    pub path: Option<String>,
    pub n_max: Option<usize>,
}

impl KernelSection {
    pub fn build(&self) -> Result<KernelSpec<Real>> {
        let need = |v: Option<Real>, key: &str| {
            v.ok_or_else(|| config_err(format!("[kernel] {} requires `{key}`", self.family)))
        };
        match self.family.as_str() {
            "constant" => KernelSpec::constant(need(self.c0.or(self.c), "c0")?),
            "sum_power" => {
                KernelSpec::sum_power(need(self.c, "C")?, need(self.gamma, "gamma")?)
            }
            "product_power" => KernelSpec::product_power(
                need(self.c, "C")?,
                need(self.alpha, "alpha")?,
                need(self.beta, "beta")?,
            ),
            "multiplicative" => Ok(KernelSpec::multiplicative()),
            "table" => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| config_err("[kernel] table requires `path`"))?;
                let n_max = self
                    .n_max
                    .ok_or_else(|| config_err("[kernel] table requires `n_max`"))?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err(format!("[kernel] reading {path}: {e}")))?;
                KernelSpec::table_from_csv(n_max, &text)
            }
            other => Err(config_err(format!("[kernel] unknown family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    pub family: String,
    pub d: Option<Real>,
    pub d_inf: Option<Real>,
    #[serde(rename = "A")]
    pub amplitude: Option<Real>,
    pub r: Option<Real>,
    pub values: Option<Vec<Real>>,
    pub tail: Option<Real>,
}

impl DiffusionSection {
    pub fn build(&self) -> Result<DiffusionProfile<Real>> {
        let need = |v: Option<Real>, key: &str| {
            v.ok_or_else(|| config_err(format!("[diffusion] {} requires `{key}`", self.family)))
        };
        match self.family.as_str() {
            "constant" => DiffusionProfile::constant(need(self.d, "d")?),
            "limit" => DiffusionProfile::limit(
                need(self.d_inf, "d_inf")?,
                need(self.amplitude, "A")?,
                need(self.r, "r")?,
            ),
            "list" => {
                let values = self
                    .values
                    .clone()
                    .ok_or_else(|| config_err("[diffusion] list requires `values`"))?;
                DiffusionProfile::list(values, need(self.tail, "tail")?)
            }
            other => Err(config_err(format!("[diffusion] unknown family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: Real,
    #[serde(rename = "T")]
    pub t_end: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub family: String,
    #[serde(default = "one")]
    pub mass: Real,
    pub ratio: Option<Real>,
    #[serde(default = "uniform")]
    pub profile: String,
    #[serde(default)]
    pub amplitude: Real,
    #[serde(default = "one_u32")]
    pub mode: u32,
    /// CSV path for the table family (header `i,j,c`; species 1-based,
    /// cell index 0-based).
    pub path: Option<String>,
}

fn one() -> Real {
    1.0
}
fn uniform() -> String {
    "uniform".into()
}
fn one_u32() -> u32 {
    1
}

impl InitialSection {
    fn density(&self) -> Result<SpatialProfile<Real>> {
        match self.profile.as_str() {
            "uniform" => Ok(SpatialProfile::Uniform { value: self.mass }),
            "cosine" => Ok(SpatialProfile::Cosine {
                mean: self.mass,
                amplitude: self.amplitude,
                mode: self.mode,
            }),
            other => Err(config_err(format!("[initial] unknown profile `{other}`"))),
        }
    }

    pub fn build(&self, n: usize, cells: usize) -> Result<InitialData<Real>> {
        match self.family.as_str() {
            "monodisperse" => Ok(InitialData::Monodisperse { density: self.density()? }),
            "geometric" => Ok(InitialData::Geometric {
                density: self.density()?,
                ratio: self
                    .ratio
                    .ok_or_else(|| config_err("[initial] geometric requires `ratio`"))?,
            }),
            "table" => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| config_err("[initial] table requires `path`"))?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err(format!("[initial] reading {path}: {e}")))?;
                initial_table_from_csv(n, cells, &text)
            }
            other => Err(config_err(format!("[initial] unknown family `{other}`"))),
        }
    }
}

/// Parses per-species spatial profiles from CSV rows `i,j,c`.
pub fn initial_table_from_csv(n: usize, cells: usize, text: &str) -> Result<InitialData<Real>> {
    let mut rows = vec![vec![0.0; cells]; n];
    let mut seen = 0usize;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim().eq_ignore_ascii_case("i,j,c") => {}
        _ => return Err(config_err("initial table CSV must start with header 'i,j,c'")),
    }
    for (lineno, line) in lines {
        let mut cols = line.split(',');
        let mut next = |what: &str| -> Result<f64> {
            cols.next()
                .map(str::trim)
                .ok_or_else(|| config_err(format!("line {}: missing {what}", lineno + 1)))?
                .parse()
                .map_err(|e| config_err(format!("line {}: bad {what}: {e}", lineno + 1)))
        };
        let i = next("i")? as usize;
        let j = next("j")? as usize;
        let c = next("c")?;
        if i < 1 || i > n || j >= cells {
            return Err(config_err(format!(
                "line {}: entry ({i}, {j}) outside 1..={n} x 0..{cells}",
                lineno + 1
            )));
        }
        rows[i - 1][j] = c;
        seen += 1;
    }
    if seen != n * cells {
        return Err(Error::SizeMismatch {
            what: "initial table entries",
            expected: n * cells,
            got: seen,
        });
    }
    Ok(InitialData::Table { rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReactionSection {
    pub scheme: String,
}

impl Default for ReactionSection {
    fn default() -> Self {
        Self { scheme: "rk4".into() }
    }
}

impl ReactionSection {
    pub fn build(&self) -> Result<ReactionScheme> {
        match self.scheme.as_str() {
            "rk4" => Ok(ReactionScheme::ExplicitRk4),
            "semi_implicit_loss" => Ok(ReactionScheme::SemiImplicitLoss),
            other => Err(config_err(format!("[reaction] unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub stride: usize,
    pub moments: Vec<Real>,
    pub lp: Vec<Real>,
    /// 0 selects the automatic tail index.
    pub tail_index: usize,
    pub tail_moments: bool,
    pub m_field: bool,
    pub store_states: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            stride: 1,
            moments: vec![0.0, 1.0, 2.0],
            lp: vec![2.0],
            tail_index: 0,
            tail_moments: false,
            m_field: false,
            store_states: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSection {
    pub negativity_band: Real,
    pub max_halvings: u32,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        let d = SimTolerances::<Real>::default();
        Self { negativity_band: d.negativity_band, max_halvings: d.max_halvings }
    }
}

/// The whole run-configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Truncation size (number of species).
    pub n: usize,
    pub kernel: KernelSection,
    pub diffusion: DiffusionSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub reaction: ReactionSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
}

impl FileConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(config_err("empty config"));
        }
        toml::from_str(text).map_err(config_err)
    }

    pub fn to_sim_config(&self) -> Result<SimConfig<Real>> {
        let cfg = SimConfig {
            kernel: self.kernel.build()?,
            diffusion: self.diffusion.build()?,
            n: self.n,
            n_cells: self.grid.cells,
            dt: self.time.dt,
            t_end: self.time.t_end,
            initial: self.initial.build(self.n, self.grid.cells)?,
            scheme: self.reaction.build()?,
            output: OutputConfig {
                stride: self.output.stride,
                moment_orders: self.output.moments.clone(),
                lp_exponents: self.output.lp.clone(),
                tail_index: (self.output.tail_index > 0).then_some(self.output.tail_index),
                record_tail_moments: self.output.tail_moments,
                record_averaged_diffusivity: self.output.m_field,
                store_states: self.output.store_states,
            },
            tolerances: SimTolerances {
                negativity_band: self.tolerances.negativity_band,
                max_halvings: self.tolerances.max_halvings,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

// --- overrides ----------------------------------------------------------------

/// Parses one `--set path.key=value` override.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{spec}` is not of the form key=value")))?;
    let path: Vec<String> = path.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(config_err(format!("override `{spec}` has an empty path segment")));
    }
    Ok((path, parse_scalar(raw.trim())))
}

/// Interprets an override value as TOML, falling back to a bare string.
fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("x = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut table) => table.remove("x").expect("key inserted above"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `value` at the dotted `path` inside a TOML tree, creating tables.
pub fn apply_override(root: &mut toml::Value, path: &[String], value: toml::Value) -> Result<()> {
    let mut node = root;
    for (idx, key) in path.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override path `{}` crosses a non-table", key)))?;
        if idx == path.len() - 1 {
            table.insert(key.clone(), value);
            return Ok(());
        }
        node = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("empty override paths are rejected earlier")
}

/// Loads a config text, applies `--set` overrides, and returns the resolved
/// snapshot together with the parsed sections.
pub fn resolve_config(text: &str, sets: &[String]) -> Result<(FileConfig, toml::Value)> {
    if text.trim().is_empty() {
        return Err(config_err("empty config"));
    }
    let mut tree: toml::Value = text.parse::<toml::Table>().map_err(config_err)?.into();
    for spec in sets {
        let (path, value) = parse_override(spec)?;
        apply_override(&mut tree, &path, value)?;
    }
    let cfg: FileConfig = tree.clone().try_into().map_err(config_err)?;
    Ok((cfg, tree))
}

/// Recursively overlays `patch` onto `base` (tables merge, scalars replace).
pub fn merge_toml(base: &mut toml::Value, patch: &toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
n = 32

[kernel]
family = "sum_power"
C = 1.0
gamma = 0.5

[diffusion]
family = "limit"
d_inf = 1.0
A = 1.0
r = 1.0

[grid]
N = 8

[time]
dt = 1e-3
T = 0.5

[initial]
family = "monodisperse"
mass = 1.0
"#;

    #[test]
    fn parses_base_config() {
        let (cfg, _) = resolve_config(BASE, &[]).unwrap();
        let sim = cfg.to_sim_config().unwrap();
        assert_eq!(sim.n, 32);
        assert_eq!(sim.n_cells, 8);
        assert_eq!(sim.scheme, ReactionScheme::ExplicitRk4);
        assert_eq!(sim.kernel.family_name(), "sum_power");
    }

    #[test]
    fn overrides_apply_one_for_one() {
        let sets = vec![
            "kernel.gamma=0.7".to_string(),
            "time.T=1.0".to_string(),
            "n=64".to_string(),
            "reaction.scheme=semi_implicit_loss".to_string(),
            "output.moments=[0.0, 2.0]".to_string(),
        ];
        let (cfg, snapshot) = resolve_config(BASE, &sets).unwrap();
        assert_eq!(cfg.n, 64);
        assert_eq!(cfg.kernel.gamma, Some(0.7));
        assert_eq!(cfg.time.t_end, 1.0);
        assert_eq!(cfg.output.moments, vec![0.0, 2.0]);
        let sim = cfg.to_sim_config().unwrap();
        assert_eq!(sim.scheme, ReactionScheme::SemiImplicitLoss);
        assert_eq!(snapshot["kernel"]["gamma"].as_float(), Some(0.7));
    }

    #[test]
    fn empty_config_rejected() {
        assert!(matches!(resolve_config("", &[]), Err(Error::Config(_))));
        assert!(matches!(resolve_config("   \n", &[]), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected_with_diagnostics() {
        let bad = BASE.replace("mass = 1.0", "mass = 1.0\nbogus_key = 3");
        let err = resolve_config(&bad, &[]).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn bad_values_give_field_errors() {
        let bad = BASE.replace("gamma = 0.5", "gamma = \"wide\"");
        let err = resolve_config(&bad, &[]).unwrap_err();
        assert!(format!("{err}").contains("gamma"));

        let (cfg, _) =
            resolve_config(BASE, &["kernel.family=warp".to_string()]).unwrap();
        assert!(cfg.to_sim_config().is_err());
    }

    #[test]
    fn initial_table_csv() {
        let text = "i,j,c\n1,0,0.5\n1,1,0.25\n2,0,0.0\n2,1,1.5\n";
        let init = initial_table_from_csv(2, 2, text).unwrap();
        match init {
            InitialData::Table { rows } => {
                assert_eq!(rows, vec![vec![0.5, 0.25], vec![0.0, 1.5]]);
            }
            _ => panic!("expected table"),
        }
        assert!(initial_table_from_csv(3, 2, text).is_err());
    }

    #[test]
    fn merge_overlays_tables() {
        let mut base: toml::Value = BASE.parse::<toml::Table>().unwrap().into();
        let patch: toml::Value =
            "[time]\nT = 9.0".parse::<toml::Table>().unwrap().into();
        merge_toml(&mut base, &patch);
        assert_eq!(base["time"]["T"].as_float(), Some(9.0));
        assert_eq!(base["time"]["dt"].as_float(), Some(1e-3));
    }
}
