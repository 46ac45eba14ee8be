//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! [network]
//! lane_km = 10
//! [demand]
//! kind = trapezoid                 # same as demand.kind
//! params = rate_up:100, peak:100, rate_down:100, t_end:1
//! ```
//!
//! Inside a section a key may be written bare or fully qualified. Keys
//! placed in the wrong section, unknown keys and duplicates are rejected with
//! the offending line.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{
    ControlMode, DemandKind, DemandProfile, DistanceDistributionModel, PoolingMode, Scenario,
    SpeedDensityKind, SpeedDensityRelation, SupplyPolicy,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ty {
    Num,
    Int,
    Word,
    Params,
    Bool,
}

struct KeySpec {
    key: &'static str,
    section: &'static str,
    ty: Ty,
    default: Option<&'static str>,
}

const fn k(
    key: &'static str,
    section: &'static str,
    ty: Ty,
    default: Option<&'static str>,
) -> KeySpec {
    KeySpec {
        key,
        section,
        ty,
        default,
    }
}

const KEYS: &[KeySpec] = &[
    k("lane_km", "network", Ty::Num, None),
    k("area_km2", "network", Ty::Num, None),
    k("n00_init", "network", Ty::Num, Some("50")),
    k("supply_policy", "network", Ty::Word, Some("balanced")),
    k("demand.kind", "demand", Ty::Word, None),
    k("demand.params", "demand", Ty::Params, None),
    k("demand.scale", "demand", Ty::Num, Some("1")),
    k("sdr.kind", "speed_density", Ty::Word, None),
    k("sdr.params", "speed_density", Ty::Params, None),
    k("ell", "distances", Ty::Num, Some("0.63")),
    k("ell_prime", "distances", Ty::Num, Some("1.15")),
    k("horizon_h", "discretization", Ty::Num, None),
    k("max_distance_km", "discretization", Ty::Num, None),
    k("dx_km", "discretization", Ty::Num, None),
    k("dt_h", "discretization", Ty::Num, None),
    k("v_floor_kmh", "discretization", Ty::Num, Some("0.1")),
    k("paper_fdm", "discretization", Ty::Bool, Some("false")),
    k("control.mode", "control", Ty::Word, Some("none")),
    k("release_dt_h", "control", Ty::Num, None),
    k("control.eps_rho", "control", Ty::Num, None),
    k("control.recompute_cap", "control", Ty::Bool, Some("false")),
    k("pooling.mode", "pooling", Ty::Word, Some("none")),
    k("pooling.c", "pooling", Ty::Int, Some("1")),
    k("c_max", "pooling", Ty::Int, Some("1")),
    k("dp.bins", "pooling", Ty::Int, Some("16")),
    k("dp.rollouts", "pooling", Ty::Int, Some("512")),
    k("dp.seed", "pooling", Ty::Int, Some("1")),
    k(
        "dp.stage_h",
        "pooling",
        Ty::Num,
        Some("0.08333333333333333"),
    ),
];

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

/// Every key a scenario file or an override may set.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|s| s.key)
}

fn resolve_key(section: Option<&str>, raw: &str) -> Option<&'static KeySpec> {
    if let Some(s) = spec(raw) {
        return Some(s);
    }
    let sec = section?;
    let prefix = match sec {
        "demand" => "demand.",
        "speed_density" => "sdr.",
        "control" => "control.",
        "pooling" => {
            if let Some(s) = spec(&format!("pooling.{raw}")) {
                return Some(s);
            }
            "dp."
        }
        _ => return None,
    };
    spec(&format!("{prefix}{raw}"))
}

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

/// Scenario settings after file parsing and overrides, before conversion to a
/// [`Scenario`].
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    file: String,
    values: BTreeMap<&'static str, Entry>,
}

fn parse_num(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_params(s: &str) -> std::result::Result<Vec<(String, f64)>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let (name, val) = item
            .rsplit_once(':')
            .ok_or_else(|| format!("parameter `{item}` is not of the form name:value"))?;
        let v =
            parse_num(val).ok_or_else(|| format!("parameter `{item}` has a non-numeric value"))?;
        out.push((name.trim().to_string(), v));
    }
    if out.is_empty() {
        return Err("empty parameter list".into());
    }
    Ok(out)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn check_type(spec: &KeySpec, value: &str) -> std::result::Result<(), String> {
    match spec.ty {
        Ty::Num => parse_num(value)
            .map(|_| ())
            .ok_or_else(|| format!("`{value}` is not a number")),
        Ty::Int => value
            .trim()
            .parse::<u64>()
            .map(|_| ())
            .map_err(|_| format!("`{value}` is not a non-negative integer")),
        Ty::Bool => parse_bool(value)
            .map(|_| ())
            .ok_or_else(|| format!("`{value}` is not a boolean")),
        Ty::Params => parse_params(value).map(|_| ()),
        Ty::Word => {
            if value.trim().is_empty() {
                Err("empty value".into())
            } else {
                Ok(())
            }
        }
    }
}

impl ResolvedConfig {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut values: BTreeMap<&'static str, Entry> = BTreeMap::new();
        let mut section: Option<String> = None;
        let err = |line: usize, key: &str, message: String| Error::ConfigLine {
            file: file.to_string(),
            line,
            key: key.to_string(),
            message,
        };
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, content, "malformed section header".into()))?
                    .trim();
                if !KEYS.iter().any(|s| s.section == name) {
                    return Err(err(line, name, "unknown section".into()));
                }
                section = Some(name.to_string());
                continue;
            }
            let (raw_key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, content, "expected `key = value`".into()))?;
            let raw_key = raw_key.trim();
            let value = value.trim();
            let spec = resolve_key(section.as_deref(), raw_key)
                .ok_or_else(|| err(line, raw_key, "unknown key".into()))?;
            if let Some(sec) = &section {
                if sec != spec.section {
                    return Err(err(
                        line,
                        spec.key,
                        format!("belongs in [{}], found in [{sec}]", spec.section),
                    ));
                }
            }
            check_type(spec, value).map_err(|m| err(line, spec.key, m))?;
            if values.contains_key(spec.key) {
                return Err(err(line, spec.key, "duplicate key".into()));
            }
            values.insert(
                spec.key,
                Entry {
                    value: value.to_string(),
                    line,
                },
            );
        }
        Ok(ResolvedConfig {
            file: file.to_string(),
            values,
        })
    }

    pub fn file(&self) -> &str {
        &self.file
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec =
            spec(key).ok_or_else(|| Error::Config(format!("unknown override key `{key}`")))?;
        check_type(spec, value).map_err(|m| Error::Config(format!("override {key}: {m}")))?;
        self.values.insert(
            spec.key,
            Entry {
                value: value.trim().to_string(),
                line: 0,
            },
        );
        Ok(())
    }

    /// Applies an override written as `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Raw value with defaults applied.
    pub fn get(&self, key: &str) -> Option<String> {
        self.values
            .get(key)
            .map(|e| e.value.clone())
            .or_else(|| spec(key).and_then(|s| s.default).map(str::to_string))
    }

    fn line_of(&self, key: &str) -> usize {
        self.values.get(key).map(|e| e.line).unwrap_or(0)
    }

    fn fail(&self, key: &str, message: impl Into<String>) -> Error {
        Error::ConfigLine {
            file: self.file.clone(),
            line: self.line_of(key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn required(&self, key: &str) -> Result<String> {
        self.get(key)
            .ok_or_else(|| self.fail(key, "missing required key"))
    }

    fn num<T: Scalar>(&self, key: &str) -> Result<T> {
        let v = self.required(key)?;
        parse_num(&v)
            .map(T::lit)
            .ok_or_else(|| self.fail(key, format!("`{v}` is not a number")))
    }

    fn int(&self, key: &str) -> Result<u64> {
        let v = self.required(key)?;
        v.trim()
            .parse()
            .map_err(|_| self.fail(key, format!("`{v}` is not a non-negative integer")))
    }

    fn boolean(&self, key: &str) -> Result<bool> {
        let v = self.required(key)?;
        parse_bool(&v).ok_or_else(|| self.fail(key, format!("`{v}` is not a boolean")))
    }

    fn params<T: Scalar>(&self, key: &str) -> Result<Vec<(String, T)>> {
        let v = self.required(key)?;
        parse_params(&v)
            .map(|ps| ps.into_iter().map(|(n, x)| (n, T::lit(x))).collect())
            .map_err(|m| self.fail(key, m))
    }

    /// Canonical text of every resolved setting, one `key=value` per line in
    /// a fixed order. Numbers are re-printed so that `10` and `10.0` agree.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for s in KEYS {
            let Some(v) = self.get(s.key) else {
                out.push_str(&format!("{}=\n", s.key));
                continue;
            };
            let norm = match s.ty {
                Ty::Num => parse_num(&v).map(|x| format!("{x:?}")).unwrap_or(v),
                Ty::Int => v.trim().parse::<u64>().map(|x| x.to_string()).unwrap_or(v),
                Ty::Bool => parse_bool(&v).map(|b| b.to_string()).unwrap_or(v),
                Ty::Params => parse_params(&v)
                    .map(|ps| {
                        ps.iter()
                            .map(|(n, x)| format!("{n}:{x:?}"))
                            .collect::<Vec<_>>()
                            .join(",")
                    })
                    .unwrap_or(v),
                Ty::Word => v.trim().to_string(),
            };
            out.push_str(&format!("{}={}\n", s.key, norm));
        }
        out
    }

    /// SHA-256 of [`ResolvedConfig::canonical`], lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        format!("{digest:x}")
    }

    /// Builds and validates the scenario.
    pub fn build<T: Scalar>(&self) -> Result<Scenario<T>> {
        let sdr_kind = self.required("sdr.kind")?;
        let sdr_kind = SpeedDensityKind::parse(sdr_kind.trim())
            .ok_or_else(|| self.fail("sdr.kind", format!("unknown relation `{sdr_kind}`")))?;
        let speed = SpeedDensityRelation::new(sdr_kind, self.params("sdr.params")?)
            .map_err(|e| self.fail("sdr.params", strip(&e)))?;

        let d_kind = self.required("demand.kind")?;
        let d_kind = DemandKind::parse(d_kind.trim())
            .ok_or_else(|| self.fail("demand.kind", format!("unknown profile `{d_kind}`")))?;
        let demand = DemandProfile::new(
            d_kind,
            self.params("demand.params")?,
            self.num("demand.scale")?,
        )
        .map_err(|e| self.fail("demand.params", strip(&e)))?;

        let lane_km: T = self.num("lane_km")?;
        let area_km2: T = self.num("area_km2")?;
        let dt_h: T = self.num("dt_h")?;
        let mut s = Scenario::new(
            lane_km,
            area_km2,
            self.num("horizon_h")?,
            self.num("max_distance_km")?,
            self.num("dx_km")?,
            dt_h,
            speed,
            demand,
        )
        .map_err(|e| self.fail("area_km2", strip(&e)))?;

        s.n00_init = self.num("n00_init")?;
        s.supply = match self.required("supply_policy")?.trim() {
            "balanced" => SupplyPolicy::Balanced,
            "fixed_fleet" => SupplyPolicy::FixedFleet,
            other => return Err(self.fail("supply_policy", format!("unknown policy `{other}`"))),
        };
        s.distances =
            DistanceDistributionModel::new(self.num("ell")?, self.num("ell_prime")?, area_km2)
                .map_err(|e| self.fail("ell", strip(&e)))?;
        s.v_floor_kmh = self.num("v_floor_kmh")?;
        s.paper_fdm = self.boolean("paper_fdm")?;
        s.control = match self.required("control.mode")?.trim() {
            "none" => ControlMode::Uncontrolled,
            "db" => ControlMode::DensityBased,
            other => return Err(self.fail("control.mode", format!("unknown mode `{other}`"))),
        };
        if self.values.contains_key("release_dt_h") {
            s.release_dt_h = self.num("release_dt_h")?;
        }
        if self.values.contains_key("control.eps_rho") {
            s.eps_rho = self.num("control.eps_rho")?;
        }
        s.recompute_cap = self.boolean("control.recompute_cap")?;
        s.c_max = self.int("c_max")? as u32;
        s.pooling = match self.required("pooling.mode")?.trim() {
            "none" => PoolingMode::None,
            "fixed" => PoolingMode::Fixed(self.int("pooling.c")? as u32),
            "saturated" => PoolingMode::Saturated,
            "dp" => PoolingMode::Dp,
            other => return Err(self.fail("pooling.mode", format!("unknown mode `{other}`"))),
        };
        s.dp.bins = self.int("dp.bins")? as usize;
        s.dp.rollouts = self.int("dp.rollouts")? as usize;
        s.dp.seed = self.int("dp.seed")?;
        s.dp.stage_h = self.num("dp.stage_h")?;

        s.validated().map_err(|e| {
            let msg = strip(&e);
            let key = KEYS
                .iter()
                .filter(|spec| msg.contains(spec.key))
                .max_by_key(|spec| spec.key.len())
                .map(|spec| spec.key)
                .unwrap_or("scenario");
            self.fail(key, msg)
        })
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Domain(m) | Error::Model(m) | Error::State(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Parses scenario text; `file` only labels diagnostics.
pub fn parse_scenario_str<T: Scalar>(text: &str, file: &str) -> Result<Scenario<T>> {
    ResolvedConfig::parse(text, file)?.build()
}

/// Reads and validates a scenario file.
pub fn parse_scenario<T: Scalar>(path: impl AsRef<Path>) -> Result<Scenario<T>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario_str(&text, &path.display().to_string())
}
