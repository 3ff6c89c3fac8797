//! Scenario files: flat `section.key = value` lines, `#` comments.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::dispersion::{DispersionParams, MomentumBox};
use crate::error::{Error, Result};
use crate::grid::Interval;
use crate::lap::SweepConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Module {
    Mourre,
    Lap,
    Kato,
    Twoparticle,
}

impl Module {
    pub const ALL: [Module; 4] = [Module::Mourre, Module::Lap, Module::Kato, Module::Twoparticle];

    fn parse(s: &str) -> Option<Vec<Module>> {
        Some(match s {
            "mourre" => vec![Module::Mourre],
            "lap" => vec![Module::Lap],
            "kato" => vec![Module::Kato],
            "twoparticle" => vec![Module::Twoparticle],
            "all" => Module::ALL.to_vec(),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "key `{}`: {}", self.key, self.message)
        } else {
            write!(f, "line {}: key `{}`: {}", self.line, self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Serialize)]
pub struct Physics {
    pub mass: f64,
    pub k1: MomentumBox,
    pub k2: MomentumBox,
    pub p: Vec<f64>,
    pub epsilon: Option<f64>,
    pub nu: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSection {
    pub extent: f64,
    pub n: usize,
    pub refine: usize,
    pub budget: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MourreSection {
    pub u_max: f64,
    /// Margin tolerance as a multiple of the commutator residual.
    pub margin_factor: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LapSection {
    pub sweep: SweepConfig,
    pub random_scenarios: usize,
    pub interpolation_trials: usize,
    pub interpolation_dim: usize,
    pub diffineq_trials: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct KatoSection {
    pub states: usize,
    /// `μ = damping/t_max` for the damped two-path comparison.
    pub damping: f64,
    pub continuity_points: usize,
    pub family_n: usize,
    pub family_lambda_points: usize,
    pub square_trials: usize,
    pub bounded_trials: usize,
    pub square_n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelSection {
    pub n_energy: usize,
    pub energy: Interval,
    pub support: Interval,
    pub rho_ripple: f64,
    pub slab: Option<Interval>,
    pub n_momentum: usize,
    pub n_q: usize,
    pub q_extent: f64,
    pub n_u: usize,
    pub u_extent: f64,
    pub profile_energy: Interval,
    pub profile_momentum: Interval,
    pub psi_scale: f64,
    pub psi_phase: f64,
    pub first_window: f64,
    pub horizon: f64,
    pub tauberian_delta: f64,
    pub tauberian_per_delta: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    pub commutator: f64,
    pub refinement_lo: f64,
    pub refinement_hi: f64,
    pub two_path: f64,
    pub interpolation: f64,
    pub fft: f64,
    pub microcausality: f64,
    pub chain: f64,
    pub continuity: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub modules: Vec<Module>,
    pub seed: u64,
    pub physics: Physics,
    pub grid: GridSection,
    pub mourre: MourreSection,
    pub lap: LapSection,
    pub kato: KatoSection,
    pub twoparticle: ChannelSection,
    pub tolerance: Tolerances,
}

impl Scenario {
    pub fn params(&self) -> Result<DispersionParams> {
        let ph = &self.physics;
        DispersionParams::new(ph.mass, ph.p.clone(), ph.k1.clone(), ph.k2.clone(), ph.epsilon)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError {
                line,
                key: body.to_string(),
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError { line, key, message: "unknown key".into() });
            }
            if let Some((prev, _)) = entries.get(&key) {
                return Err(ConfigError { line, key, message: format!("duplicate (first set on line {prev})") });
            }
            entries.insert(key, (line, value.trim().to_string()));
        }
        let r = Reader { entries };
        let mass = r.f64("physics.mass", 1.0)?;
        let modules = r.modules()?;
        let sc = Scenario {
            name: r.string("name", None)?,
            description: r.string("description", Some(""))?,
            modules,
            seed: r.parsed("seed", 0u64)?,
            physics: Physics {
                mass,
                k1: r.boxed("physics.k1", "0.8:1.4")?,
                k2: r.boxed("physics.k2", "-0.8:-0.2")?,
                p: r.list("physics.p", "0.6")?,
                epsilon: r.optional_f64("physics.epsilon")?,
                nu: r.f64("physics.nu", 0.75)?,
            },
            grid: GridSection {
                extent: r.f64("grid.extent", 4.0)?,
                n: r.parsed("grid.n", 128)?,
                refine: r.parsed("grid.refine", 256)?,
                budget: r.parsed("grid.budget", 4096)?,
            },
            mourre: MourreSection { u_max: r.f64("mourre.u_max", 5.0)?, margin_factor: r.f64("mourre.margin_factor", 10.0)? },
            lap: LapSection {
                sweep: SweepConfig {
                    lambda_points: r.parsed("lap.lambda_points", 66)?,
                    mu_min: r.f64("lap.mu_min", 1e-4)?,
                    mu_per_decade: r.parsed("lap.mu_per_decade", 2)?,
                },
                random_scenarios: r.parsed("lap.random_scenarios", 5)?,
                interpolation_trials: r.parsed("lap.interpolation_trials", 100)?,
                interpolation_dim: r.parsed("lap.interpolation_dim", 6)?,
                diffineq_trials: r.parsed("lap.diffineq_trials", 50)?,
            },
            kato: KatoSection {
                states: r.parsed("kato.states", 20)?,
                damping: r.f64("kato.damping", 8.0)?,
                continuity_points: r.parsed("kato.continuity_points", 5)?,
                family_n: r.parsed("kato.family_n", 24)?,
                family_lambda_points: r.parsed("kato.family_lambda_points", 33)?,
                square_trials: r.parsed("kato.square_trials", 50)?,
                bounded_trials: r.parsed("kato.bounded_trials", 10)?,
                square_n: r.parsed("kato.square_n", 16)?,
            },
            twoparticle: ChannelSection {
                n_energy: r.parsed("twoparticle.n_energy", 96)?,
                energy: r.interval("twoparticle.energy", "2.2:3.6")?,
                support: r.interval("twoparticle.support", "2.3:3.5")?,
                rho_ripple: r.f64("twoparticle.rho_ripple", 0.25)?,
                slab: r.optional_interval("twoparticle.slab")?,
                n_momentum: r.parsed("twoparticle.n_momentum", 33)?,
                n_q: r.parsed("twoparticle.n_q", 128)?,
                q_extent: r.f64("twoparticle.q_extent", 4.0)?,
                n_u: r.parsed("twoparticle.n_u", 401)?,
                u_extent: r.f64("twoparticle.u_extent", 200.0)?,
                profile_energy: r.interval("twoparticle.profile_energy", "2.3:3.5")?,
                profile_momentum: r.interval("twoparticle.profile_momentum", "0.35:0.85")?,
                psi_scale: r.f64("twoparticle.psi_scale", 1.0)?,
                psi_phase: r.f64("twoparticle.psi_phase", 0.0)?,
                first_window: r.f64("twoparticle.first_window", 10.0)?,
                horizon: r.f64("twoparticle.horizon", 160.0 / mass)?,
                tauberian_delta: r.f64("twoparticle.tauberian_delta", 1.0)?,
                tauberian_per_delta: r.parsed("twoparticle.tauberian_per_delta", 4)?,
            },
            tolerance: Tolerances {
                commutator: r.positive("tolerance.commutator", 1e-3)?,
                refinement_lo: r.positive("tolerance.refinement_lo", 3.5)?,
                refinement_hi: r.positive("tolerance.refinement_hi", 4.5)?,
                two_path: r.positive("tolerance.two_path", 0.02)?,
                interpolation: r.positive("tolerance.interpolation", 1e-10)?,
                fft: r.positive("tolerance.fft", 1e-6)?,
                microcausality: r.positive("tolerance.microcausality", 1e-6)?,
                chain: r.positive("tolerance.chain", 1e-9)?,
                continuity: r.positive("tolerance.continuity", 2.0)?,
            },
        };
        if sc.physics.k1.dim() != sc.physics.p.len() || sc.physics.k2.dim() != sc.physics.p.len() {
            return Err(r.error("physics.p", "dimension differs from K1/K2"));
        }
        Ok(sc)
    }
}

const KEYS: &[&str] = &[
    "name",
    "description",
    "modules",
    "seed",
    "physics.mass",
    "physics.k1",
    "physics.k2",
    "physics.p",
    "physics.epsilon",
    "physics.nu",
    "grid.extent",
    "grid.n",
    "grid.refine",
    "grid.budget",
    "mourre.u_max",
    "mourre.margin_factor",
    "lap.lambda_points",
    "lap.mu_min",
    "lap.mu_per_decade",
    "lap.random_scenarios",
    "lap.interpolation_trials",
    "lap.interpolation_dim",
    "lap.diffineq_trials",
    "kato.states",
    "kato.damping",
    "kato.continuity_points",
    "kato.family_n",
    "kato.family_lambda_points",
    "kato.square_trials",
    "kato.bounded_trials",
    "kato.square_n",
    "twoparticle.n_energy",
    "twoparticle.energy",
    "twoparticle.support",
    "twoparticle.rho_ripple",
    "twoparticle.slab",
    "twoparticle.n_momentum",
    "twoparticle.n_q",
    "twoparticle.q_extent",
    "twoparticle.n_u",
    "twoparticle.u_extent",
    "twoparticle.profile_energy",
    "twoparticle.profile_momentum",
    "twoparticle.psi_scale",
    "twoparticle.psi_phase",
    "twoparticle.first_window",
    "twoparticle.horizon",
    "twoparticle.tauberian_delta",
    "twoparticle.tauberian_per_delta",
    "tolerance.commutator",
    "tolerance.refinement_lo",
    "tolerance.refinement_hi",
    "tolerance.two_path",
    "tolerance.interpolation",
    "tolerance.fft",
    "tolerance.microcausality",
    "tolerance.chain",
    "tolerance.continuity",
];

/// All recognized keys, in documentation order.
pub fn known_keys() -> &'static [&'static str] {
    KEYS
}

struct Reader {
    entries: BTreeMap<String, (usize, String)>,
}

impl Reader {
    fn error(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        let line = self.entries.get(key).map(|e| e.0).unwrap_or(0);
        ConfigError { line, key: key.to_string(), message: msg.into() }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.1.as_str())
    }

    fn string(&self, key: &str, default: Option<&str>) -> std::result::Result<String, ConfigError> {
        match (self.raw(key), default) {
            (Some(v), _) if !v.is_empty() => Ok(v.to_string()),
            (Some(_), Some(d)) | (None, Some(d)) => Ok(d.to_string()),
            _ => Err(self.error(key, "required")),
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> std::result::Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.error(key, format!("cannot parse `{v}`"))),
        }
    }

    fn f64(&self, key: &str, default: f64) -> std::result::Result<f64, ConfigError> {
        let v: f64 = self.parsed(key, default)?;
        if !v.is_finite() {
            return Err(self.error(key, "must be finite"));
        }
        Ok(v)
    }

    fn positive(&self, key: &str, default: f64) -> std::result::Result<f64, ConfigError> {
        let v = self.f64(key, default)?;
        if !(v > 0.0) {
            return Err(self.error(key, format!("tolerance {v} must be positive")));
        }
        Ok(v)
    }

    fn optional_f64(&self, key: &str) -> std::result::Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None | Some("auto") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| self.error(key, format!("expected a number or `auto`, got `{v}`"))),
        }
    }

    fn list(&self, key: &str, default: &str) -> std::result::Result<Vec<f64>, ConfigError> {
        let v = self.raw(key).unwrap_or(default);
        v.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| self.error(key, format!("cannot parse `{s}`"))))
            .collect()
    }

    fn pair(&self, key: &str, s: &str) -> std::result::Result<(f64, f64), ConfigError> {
        let (a, b) = s.split_once(':').ok_or_else(|| self.error(key, format!("expected `lo:hi`, got `{s}`")))?;
        let lo: f64 = a.trim().parse().map_err(|_| self.error(key, format!("cannot parse `{a}`")))?;
        let hi: f64 = b.trim().parse().map_err(|_| self.error(key, format!("cannot parse `{b}`")))?;
        if !(lo < hi) {
            return Err(self.error(key, format!("empty range {lo}:{hi}")));
        }
        Ok((lo, hi))
    }

    fn boxed(&self, key: &str, default: &str) -> std::result::Result<MomentumBox, ConfigError> {
        let v = self.raw(key).unwrap_or(default);
        let axes: Vec<(f64, f64)> = v.split(',').map(|s| self.pair(key, s.trim())).collect::<std::result::Result<_, _>>()?;
        MomentumBox::new(axes.iter().map(|a| a.0).collect(), axes.iter().map(|a| a.1).collect())
            .map_err(|e| self.error(key, e.to_string()))
    }

    fn interval(&self, key: &str, default: &str) -> std::result::Result<Interval, ConfigError> {
        let (lo, hi) = self.pair(key, self.raw(key).unwrap_or(default))?;
        Ok(Interval::closed(lo, hi))
    }

    fn optional_interval(&self, key: &str) -> std::result::Result<Option<Interval>, ConfigError> {
        match self.raw(key) {
            None | Some("none") => Ok(None),
            Some(v) => {
                let (lo, hi) = self.pair(key, v)?;
                Ok(Some(Interval::closed(lo, hi)))
            }
        }
    }

    fn modules(&self) -> std::result::Result<Vec<Module>, ConfigError> {
        let v = self.raw("modules").unwrap_or("");
        let mut out = Vec::new();
        for s in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            out.extend(Module::parse(s).ok_or_else(|| self.error("modules", format!("unknown module `{s}`")))?);
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(self.error("modules", "no modules selected"));
        }
        Ok(out)
    }
}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Parse(e.to_string())
    }
}

pub struct Bundled {
    pub name: &'static str,
    pub text: &'static str,
}

pub const BUNDLED: &[Bundled] = &[
    Bundled { name: "kato-family", text: include_str!("../scenarios/kato-family.conf") },
    Bundled { name: "paper-default", text: include_str!("../scenarios/paper-default.conf") },
    Bundled { name: "quick", text: include_str!("../scenarios/quick.conf") },
    Bundled { name: "twoparticle-slab", text: include_str!("../scenarios/twoparticle-slab.conf") },
];

pub fn bundled(name: &str) -> Option<&'static Bundled> {
    BUNDLED.iter().find(|b| b.name == name)
}

/// `name  description` lines, sorted by name.
pub fn list_scenarios() -> String {
    let mut rows: Vec<(String, String)> = BUNDLED
        .iter()
        .map(|b| {
            let desc = Scenario::parse(b.text).map(|s| s.description).unwrap_or_else(|e| format!("(invalid: {e})"));
            (b.name.to_string(), desc)
        })
        .collect();
    rows.sort();
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter().map(|(n, d)| format!("{n:width$}  {d}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let s = Scenario::parse("name = x\nmodules = lap, mourre\n").unwrap();
        assert_eq!(s.modules, vec![Module::Mourre, Module::Lap]);
        assert_eq!(s.grid.n, 128);
        assert_eq!(s.physics.epsilon, None);
        assert!(s.params().is_ok());
    }

    #[test]
    fn empty_modules_rejected() {
        let e = Scenario::parse("name = x\nmodules =\n").unwrap_err();
        assert_eq!(e.message, "no modules selected");
        assert_eq!(e.line, 2);
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        let e = Scenario::parse("name = x\nmodules = all\ngrid.n = many\n").unwrap_err();
        assert_eq!(e.to_string(), "line 3: key `grid.n`: cannot parse `many`");
        let e = Scenario::parse("name = x\nmodules = all\nbogus = 1\n").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (3, "bogus"));
        let e = Scenario::parse("name = x\nmodules = all\ntolerance.fft = 0\n").unwrap_err();
        assert!(e.message.contains("positive"));
        assert!(Scenario::parse("name = x\nmodules = all\nseed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn boxes_and_intervals() {
        let s = Scenario::parse(
            "name = x\nmodules = all\nphysics.k1 = 0.8:1.4, 0:0.2\nphysics.k2 = -0.8:-0.2, 0:0.2\nphysics.p = 0.6, 0\ntwoparticle.slab = 0.4:0.8\n",
        )
        .unwrap();
        assert_eq!(s.physics.k1.dim(), 2);
        assert_eq!(s.twoparticle.slab.unwrap().lo, 0.4);
    }

    #[test]
    fn bundled_scenarios_parse_and_sort() {
        for b in BUNDLED {
            let s = Scenario::parse(b.text).unwrap();
            assert_eq!(s.name, b.name);
        }
        let listing = list_scenarios();
        let names: Vec<&str> = listing.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert!(names.contains(&"paper-default"));
    }
}
