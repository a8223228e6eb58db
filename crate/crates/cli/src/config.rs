//! Scenario resolution: preset, then TOML file, then command-line flags.

use std::path::Path;

use beamsim_core::modem::Constellation;
use beamsim_core::sim::{
    Method, QamScenario, Scenario, FULL_REALIZATIONS, FULL_SYMBOLS,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_VARIANCES: [f64; 3] = [0.0, 0.001, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// All six methods, SER versus SNR.
    Fig1,
    /// All six methods with analytic error probability.
    Fig2,
    /// ZF, MMSE and RC-MPE with the single-term upper bound.
    Fig3,
    /// Sum rate of the six PAM methods and the 64-QAM reference.
    Fig4,
    /// ZF, MMSE and SMINR under CSI error.
    Fig5,
}

impl Preset {
    pub fn scenario(self) -> Scenario {
        let grid = |end: i32| (0..=end / 5).map(|i| 5.0 * i as f64).collect::<Vec<f64>>();
        let methods = match self {
            Preset::Fig1 | Preset::Fig2 | Preset::Fig4 => Method::ALL.to_vec(),
            Preset::Fig3 => vec![Method::Zf, Method::Mmse, Method::MpeReduced],
            Preset::Fig5 => vec![Method::Zf, Method::Mmse, Method::Sminr],
        };
        Scenario {
            snr_grid_db: grid(if self == Preset::Fig4 { 45 } else { 40 }),
            methods,
            ..Scenario::desk()
        }
    }
}

/// Either a range string (`"0:5:40"`, `"0,10,20"`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SnrSpec {
    Text(String),
    List(Vec<f64>),
}

/// Either a user string (`"4x8pam"`) or a list of PAM orders.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum UsersSpec {
    Text(String),
    Orders(Vec<usize>),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub preset: Option<Preset>,
    pub antennas: Option<usize>,
    pub users: Option<UsersSpec>,
    pub snr: Option<SnrSpec>,
    pub realizations: Option<usize>,
    pub symbols: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub csi_var: Option<f64>,
    pub paper_scale: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsiSection {
    pub variances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    pub qam_order: Option<usize>,
    pub qam_users: Option<usize>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub csi: CsiSection,
    #[serde(default)]
    pub rate: RateSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("bad config file: {e}")))
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `"a:step:b"` (inclusive), `"a,b,c"` or a single value.
pub fn parse_snr(text: &str) -> Result<Vec<f64>, CliError> {
    let num = |s: &str| -> Result<f64, CliError> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad SNR value '{s}'")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad(format!("SNR value '{s}' is not finite")))
        }
    };
    let text = text.trim();
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let (start, step, stop) = match parts.as_slice() {
            [a, b] => (num(a)?, 1.0, num(b)?),
            [a, s, b] => (num(a)?, num(s)?, num(b)?),
            _ => return Err(bad(format!("bad SNR range '{text}'"))),
        };
        if !(step > 0.0) || stop < start {
            return Err(bad(format!("SNR range '{text}' needs step > 0 and start <= stop")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| start + step * i as f64).collect())
    } else {
        text.split(',').map(num).collect()
    }
}

/// Parses comma-separated groups like `"4x8pam"` or `"2x8pam,4pam"`.
pub fn parse_users(text: &str) -> Result<Vec<Constellation>, CliError> {
    let mut users = Vec::new();
    for group in text.split(',') {
        let g = group.trim().to_ascii_lowercase();
        let Some(body) = g.strip_suffix("pam") else {
            return Err(bad(format!("user group '{group}' must end in 'pam'")));
        };
        let (count, order) = match body.split_once('x') {
            Some((c, o)) => (c, o),
            None => ("1", body),
        };
        let count: usize = count
            .parse()
            .map_err(|_| bad(format!("bad user count in '{group}'")))?;
        let order: usize = order
            .parse()
            .map_err(|_| bad(format!("bad PAM order in '{group}'")))?;
        let c = Constellation::unit_energy(order)
            .map_err(|e| bad(format!("user group '{group}': {e}")))?;
        users.extend(std::iter::repeat_n(c, count));
    }
    if users.is_empty() {
        return Err(bad("no users given"));
    }
    Ok(users)
}

fn users_from_orders(orders: &[usize]) -> Result<Vec<Constellation>, CliError> {
    orders
        .iter()
        .map(|&o| Constellation::unit_energy(o).map_err(|e| bad(format!("PAM order {o}: {e}"))))
        .collect()
}

pub fn parse_methods<S: AsRef<str>>(names: &[S]) -> Result<Vec<Method>, CliError> {
    names
        .iter()
        .map(|n| n.as_ref().parse::<Method>().map_err(|e| bad(e.to_string())))
        .collect()
}

/// Scenario overrides from flags; `None` leaves the current value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub antennas: Option<usize>,
    pub users: Option<String>,
    pub snr: Option<String>,
    pub realizations: Option<usize>,
    pub symbols: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub csi_var: Option<f64>,
    pub paper_scale: bool,
}

/// Applies preset, file and flags in that order.
pub fn resolve(
    default_preset: Preset,
    file: &ConfigFile,
    flags: &Overrides,
) -> Result<Scenario, CliError> {
    let s = &file.scenario;
    let preset = flags.preset.or(s.preset).unwrap_or(default_preset);
    let mut sc = preset.scenario();

    if let Some(n) = s.antennas {
        sc.n_antennas = n;
    }
    match &s.users {
        Some(UsersSpec::Text(t)) => sc.users = parse_users(t)?,
        Some(UsersSpec::Orders(o)) => sc.users = users_from_orders(o)?,
        None => {}
    }
    match &s.snr {
        Some(SnrSpec::Text(t)) => sc.snr_grid_db = parse_snr(t)?,
        Some(SnrSpec::List(v)) => sc.snr_grid_db = v.clone(),
        None => {}
    }
    if flags.paper_scale || s.paper_scale == Some(true) {
        sc.n_realizations = FULL_REALIZATIONS;
        sc.n_symbols = FULL_SYMBOLS;
    }
    if let Some(r) = s.realizations {
        sc.n_realizations = r;
    }
    if let Some(n) = s.symbols {
        sc.n_symbols = n;
    }
    if let Some(m) = &s.methods {
        sc.methods = parse_methods(m)?;
    }
    if let Some(seed) = s.seed {
        sc.seed = seed;
    }
    if let Some(v) = s.csi_var {
        sc.csi_error_var = v;
    }

    if let Some(n) = flags.antennas {
        sc.n_antennas = n;
    }
    if let Some(u) = &flags.users {
        sc.users = parse_users(u)?;
    }
    if let Some(t) = &flags.snr {
        sc.snr_grid_db = parse_snr(t)?;
    }
    if let Some(r) = flags.realizations {
        sc.n_realizations = r;
    }
    if let Some(n) = flags.symbols {
        sc.n_symbols = n;
    }
    if let Some(m) = &flags.methods {
        sc.methods = parse_methods(m)?;
    }
    if let Some(seed) = flags.seed {
        sc.seed = seed;
    }
    if let Some(v) = flags.csi_var {
        sc.csi_error_var = v;
    }
    sc.validate().map_err(|e| bad(e.to_string()))?;
    Ok(sc)
}

/// The 64-QAM reference paired with a PAM scenario: same antennas, SNR
/// grid, scale and seed.
pub fn resolve_qam(
    sc: &Scenario,
    file: &ConfigFile,
    order: Option<usize>,
    users: Option<usize>,
) -> Result<QamScenario, CliError> {
    let q = QamScenario {
        n_antennas: sc.n_antennas,
        n_users: users.or(file.rate.qam_users).unwrap_or(2),
        order: order.or(file.rate.qam_order).unwrap_or(64),
        snr_grid_db: sc.snr_grid_db.clone(),
        n_realizations: sc.n_realizations,
        n_symbols: sc.n_symbols,
        seed: sc.seed,
    };
    q.axis_constellation().map_err(|e| bad(e.to_string()))?;
    if q.n_users == 0 || q.n_users > q.n_antennas {
        return Err(bad(format!(
            "QAM reference needs 1 to {} users, got {}",
            q.n_antennas, q.n_users
        )));
    }
    Ok(q)
}

pub fn resolve_variances(
    file: &ConfigFile,
    flag: Option<Vec<f64>>,
) -> Result<Vec<f64>, CliError> {
    let v = flag
        .or_else(|| file.csi.variances.clone())
        .unwrap_or_else(|| DEFAULT_VARIANCES.to_vec());
    if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(bad(format!("CSI variances must be finite and >= 0, got {v:?}")));
    }
    Ok(v)
}
