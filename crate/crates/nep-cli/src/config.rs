//! Plain-text problem configuration.
//!
//! The format is INI-style: `[section]` headers followed by `key = value`
//! lines. Blank lines and lines starting with `#` or `;` are ignored.
//! Three section kinds exist: `[domain]` (rectangle and mesh resolution),
//! `[parameters]` (weights, state bound, solver settings), and one
//! `[player.N]` per player, numbered consecutively from 1. The full schema
//! with defaults lives in `docs/config-format.md`.

use std::collections::BTreeMap;
use std::fmt;

use anyhow::{anyhow, bail, Context, Result};
use nep_solver::mesh_fem::{build_rect_mesh, interpolate, Rect, RegionIndicator};
use nep_solver::problem::{NepProblem, PlayerSpec};
use nep_solver::solvers::SolverConfig;

/// Observation region of one player, as configured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionSpec {
    /// The whole domain.
    Whole,
    /// An axis-aligned rectangle `x0 x1 y0 y1`.
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl fmt::Display for RegionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionSpec::Whole => write!(f, "whole"),
            RegionSpec::Rect { x0, x1, y0, y1 } => write!(f, "{x0} {x1} {y0} {y1}"),
        }
    }
}

/// One `[player.N]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerConfig {
    pub region: RegionSpec,
    /// Constant desired state on the observation region.
    pub y_d: f64,
    /// Constant lower control bound.
    pub u_a: f64,
    /// Constant upper control bound.
    pub u_b: f64,
}

/// A full problem description parsed from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub domain: Rect,
    pub nx: usize,
    pub ny: usize,
    pub alpha: f64,
    pub rho: f64,
    /// Constant multiplier estimate, nonnegative.
    pub mu: f64,
    /// State bound `psi(x, y) = psi_const + psi_x * x + psi_y * y`.
    pub psi_const: f64,
    pub psi_x: f64,
    pub psi_y: f64,
    pub gmres_tol: Option<f64>,
    pub max_outer: Option<usize>,
    /// Constant state seed for the first penalty classification.
    pub y0_seed: f64,
    pub players: Vec<PlayerConfig>,
}

/// One parsed `key = value` line, with its line number for error messages.
struct RawValue {
    line: usize,
    value: String,
}

/// Section name to key to value, preserving player order through the
/// numeric keys.
type RawSections = BTreeMap<String, BTreeMap<String, RawValue>>;

fn split_sections(text: &str) -> Result<RawSections> {
    let mut sections: RawSections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| anyhow!("line {line_no}: unterminated section header"))?
                .trim();
            if name.is_empty() {
                bail!("line {line_no}: empty section name");
            }
            if sections.contains_key(name) {
                bail!("line {line_no}: duplicate section [{name}]");
            }
            sections.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`, got `{line}`"))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            bail!("line {line_no}: empty key");
        }
        let section = current
            .as_ref()
            .ok_or_else(|| anyhow!("line {line_no}: `{key}` appears before any [section]"))?;
        let entries = sections.get_mut(section).expect("section was inserted");
        if entries.contains_key(key) {
            bail!("line {line_no}: duplicate key `{key}` in [{section}]");
        }
        entries.insert(
            key.to_string(),
            RawValue {
                line: line_no,
                value: value.to_string(),
            },
        );
    }
    Ok(sections)
}

/// Typed access to one section's keys that records which keys were read, so
/// leftovers can be reported as unknown.
struct SectionReader<'a> {
    name: &'a str,
    entries: &'a BTreeMap<String, RawValue>,
    used: Vec<String>,
}

impl<'a> SectionReader<'a> {
    fn new(name: &'a str, entries: &'a BTreeMap<String, RawValue>) -> Self {
        SectionReader {
            name,
            entries,
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a RawValue> {
        let entry = self.entries.get(key)?;
        self.used.push(key.to_string());
        Some(entry)
    }

    fn required_f64(&mut self, key: &str) -> Result<f64> {
        let section = self.name;
        let raw = self
            .raw(key)
            .ok_or_else(|| anyhow!("[{section}] is missing required key `{key}`"))?;
        parse_f64(raw, key)
    }

    fn optional_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            Some(raw) => parse_f64(raw, key).map(Some),
            None => Ok(None),
        }
    }

    fn required_usize(&mut self, key: &str) -> Result<usize> {
        let section = self.name;
        let raw = self
            .raw(key)
            .ok_or_else(|| anyhow!("[{section}] is missing required key `{key}`"))?;
        raw.value
            .parse::<usize>()
            .with_context(|| format!("line {}: `{key}` is not a nonnegative integer", raw.line))
    }

    fn optional_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.raw(key) {
            Some(raw) => raw
                .value
                .parse::<usize>()
                .with_context(|| format!("line {}: `{key}` is not a nonnegative integer", raw.line))
                .map(Some),
            None => Ok(None),
        }
    }

    fn finish(self) -> Result<()> {
        for key in self.entries.keys() {
            if !self.used.contains(key) {
                let section = self.name;
                let line = self.entries[key].line;
                bail!("line {line}: unknown key `{key}` in [{section}]");
            }
        }
        Ok(())
    }
}

fn parse_f64(raw: &RawValue, key: &str) -> Result<f64> {
    let value: f64 = raw
        .value
        .parse()
        .with_context(|| format!("line {}: `{key}` is not a number", raw.line))?;
    if !value.is_finite() {
        bail!("line {}: `{key}` must be finite", raw.line);
    }
    Ok(value)
}

fn parse_region(raw: &RawValue) -> Result<RegionSpec> {
    if raw.value.eq_ignore_ascii_case("whole") {
        return Ok(RegionSpec::Whole);
    }
    let parts: Vec<&str> = raw.value.split_whitespace().collect();
    if parts.len() != 4 {
        bail!(
            "line {}: `region` must be `whole` or four numbers `x0 x1 y0 y1`",
            raw.line
        );
    }
    let mut vals = [0.0; 4];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .with_context(|| format!("line {}: `region` coordinate `{part}` is not a number", raw.line))?;
    }
    let [x0, x1, y0, y1] = vals;
    if !(x1 > x0 && y1 > y0) {
        bail!("line {}: `region` rectangle is empty or inverted", raw.line);
    }
    Ok(RegionSpec::Rect { x0, x1, y0, y1 })
}

/// Parses a config file. Rejects unknown sections and keys so typos fail
/// loudly instead of silently falling back to defaults.
pub fn parse_config(text: &str) -> Result<ProblemConfig> {
    let sections = split_sections(text)?;

    let domain_entries = sections
        .get("domain")
        .ok_or_else(|| anyhow!("missing required section [domain]"))?;
    let mut domain = SectionReader::new("domain", domain_entries);
    let x0 = domain.required_f64("x0")?;
    let x1 = domain.required_f64("x1")?;
    let y0 = domain.required_f64("y0")?;
    let y1 = domain.required_f64("y1")?;
    let nx = domain.required_usize("nx")?;
    let ny = domain.required_usize("ny")?;
    domain.finish()?;
    if !(x1 > x0 && y1 > y0) {
        bail!("[domain] rectangle is empty or inverted");
    }
    if nx < 2 || ny < 2 {
        bail!("[domain] needs nx >= 2 and ny >= 2 so the mesh has interior nodes");
    }

    let param_entries = sections
        .get("parameters")
        .ok_or_else(|| anyhow!("missing required section [parameters]"))?;
    let mut params = SectionReader::new("parameters", param_entries);
    let alpha = params.required_f64("alpha")?;
    let rho = params.required_f64("rho")?;
    let mu = params.optional_f64("mu")?.unwrap_or(0.0);
    let psi_const = params.required_f64("psi_const")?;
    let psi_x = params.optional_f64("psi_x")?.unwrap_or(0.0);
    let psi_y = params.optional_f64("psi_y")?.unwrap_or(0.0);
    let gmres_tol = params.optional_f64("gmres_tol")?;
    let max_outer = params.optional_usize("max_outer")?;
    let y0_seed = params.optional_f64("y0_seed")?.unwrap_or(0.0);
    params.finish()?;
    if alpha <= 0.0 {
        bail!("[parameters] alpha must be positive");
    }
    if rho <= 0.0 {
        bail!("[parameters] rho must be positive");
    }
    if mu < 0.0 {
        bail!("[parameters] mu must be nonnegative");
    }
    if let Some(tol) = gmres_tol {
        if tol <= 0.0 {
            bail!("[parameters] gmres_tol must be positive");
        }
    }
    if max_outer == Some(0) {
        bail!("[parameters] max_outer must be at least 1");
    }

    let mut players = Vec::new();
    loop {
        let name = format!("player.{}", players.len() + 1);
        let Some(entries) = sections.get(name.as_str()) else {
            break;
        };
        let mut reader = SectionReader::new(&name, entries);
        let region_raw = reader
            .raw("region")
            .ok_or_else(|| anyhow!("[{name}] is missing required key `region`"))?;
        let region = parse_region(region_raw)?;
        let y_d = reader.required_f64("y_d")?;
        let u_a = reader.required_f64("u_a")?;
        let u_b = reader.required_f64("u_b")?;
        reader.finish()?;
        if u_a > u_b {
            bail!("[{name}] has u_a > u_b");
        }
        players.push(PlayerConfig {
            region,
            y_d,
            u_a,
            u_b,
        });
    }
    if players.is_empty() {
        bail!("at least one [player.1] section is required");
    }

    for section in sections.keys() {
        let known = section == "domain"
            || section == "parameters"
            || section
                .strip_prefix("player.")
                .and_then(|n| n.parse::<usize>().ok())
                .is_some_and(|n| n >= 1 && n <= players.len());
        if !known {
            if section.starts_with("player.") {
                bail!(
                    "section [{section}] breaks the numbering; players must be \
                     [player.1] through [player.{}] with no gaps",
                    players.len().max(1)
                );
            }
            bail!("unknown section [{section}]");
        }
    }

    Ok(ProblemConfig {
        domain: Rect::new(x0, x1, y0, y1),
        nx,
        ny,
        alpha,
        rho,
        mu,
        psi_const,
        psi_x,
        psi_y,
        gmres_tol,
        max_outer,
        y0_seed,
        players,
    })
}

/// Renders a config back to the text format `parse_config` accepts.
pub fn to_ini_string(config: &ProblemConfig) -> String {
    let mut out = String::new();
    let d = config.domain;
    out.push_str("[domain]\n");
    out.push_str(&format!("x0 = {}\n", d.x0));
    out.push_str(&format!("x1 = {}\n", d.x1));
    out.push_str(&format!("y0 = {}\n", d.y0));
    out.push_str(&format!("y1 = {}\n", d.y1));
    out.push_str(&format!("nx = {}\n", config.nx));
    out.push_str(&format!("ny = {}\n", config.ny));
    out.push_str("\n[parameters]\n");
    out.push_str(&format!("alpha = {}\n", config.alpha));
    out.push_str(&format!("rho = {}\n", config.rho));
    out.push_str(&format!("mu = {}\n", config.mu));
    out.push_str(&format!("psi_const = {}\n", config.psi_const));
    out.push_str(&format!("psi_x = {}\n", config.psi_x));
    out.push_str(&format!("psi_y = {}\n", config.psi_y));
    if let Some(tol) = config.gmres_tol {
        out.push_str(&format!("gmres_tol = {tol}\n"));
    }
    if let Some(cap) = config.max_outer {
        out.push_str(&format!("max_outer = {cap}\n"));
    }
    out.push_str(&format!("y0_seed = {}\n", config.y0_seed));
    for (idx, player) in config.players.iter().enumerate() {
        out.push_str(&format!("\n[player.{}]\n", idx + 1));
        out.push_str(&format!("region = {}\n", player.region));
        out.push_str(&format!("y_d = {}\n", player.y_d));
        out.push_str(&format!("u_a = {}\n", player.u_a));
        out.push_str(&format!("u_b = {}\n", player.u_b));
    }
    out
}

/// Builds the solver-side problem and settings from a parsed config.
pub fn build_problem(config: &ProblemConfig) -> Result<(NepProblem, SolverConfig)> {
    let mesh = build_rect_mesh(config.domain, config.nx, config.ny);
    let m = mesh.n_vertices();
    let psi = interpolate(&mesh, |x, y| {
        config.psi_const + config.psi_x * x + config.psi_y * y
    });
    let mu = vec![config.mu; m];
    let players = config
        .players
        .iter()
        .map(|p| PlayerSpec {
            observation_region: match p.region {
                RegionSpec::Whole => RegionIndicator::Whole,
                RegionSpec::Rect { x0, x1, y0, y1 } => {
                    RegionIndicator::Rect(Rect::new(x0, x1, y0, y1))
                }
            },
            y_d: vec![p.y_d; m],
            u_a: vec![p.u_a; m],
            u_b: vec![p.u_b; m],
        })
        .collect();
    let problem = NepProblem::new(
        mesh,
        players,
        config.alpha,
        config.rho,
        mu,
        psi,
        None,
        config.y0_seed,
    )?;
    let mut solver = SolverConfig::default();
    if let Some(tol) = config.gmres_tol {
        solver.gmres_tol = tol;
    }
    if let Some(cap) = config.max_outer {
        solver.max_outer = cap;
    }
    Ok((problem, solver))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two players on the unit square
[domain]
x0 = 0.0
x1 = 1.0
y0 = 0.0
y1 = 1.0
nx = 8
ny = 8

[parameters]
alpha = 0.01
rho = 10.0
psi_const = 2.0
psi_x = -2.0
psi_y = 2.0
gmres_tol = 1e-10
max_outer = 25
y0_seed = 10.0

[player.1]
region = 0.0 0.5 0.0 1.0
y_d = 1.0
u_a = -5.0
u_b = 5.0

[player.2]
region = whole
y_d = 0.0
u_a = -5.0
u_b = 5.0
";

    #[test]
    fn parses_the_sample_config() {
        let cfg = parse_config(SAMPLE).expect("sample config parses");
        assert_eq!(cfg.nx, 8);
        assert_eq!(cfg.ny, 8);
        assert_eq!(cfg.alpha, 0.01);
        assert_eq!(cfg.rho, 10.0);
        assert_eq!(cfg.mu, 0.0);
        assert_eq!(cfg.psi_const, 2.0);
        assert_eq!(cfg.psi_x, -2.0);
        assert_eq!(cfg.psi_y, 2.0);
        assert_eq!(cfg.gmres_tol, Some(1e-10));
        assert_eq!(cfg.max_outer, Some(25));
        assert_eq!(cfg.y0_seed, 10.0);
        assert_eq!(cfg.players.len(), 2);
        assert_eq!(
            cfg.players[0].region,
            RegionSpec::Rect {
                x0: 0.0,
                x1: 0.5,
                y0: 0.0,
                y1: 1.0
            }
        );
        assert_eq!(cfg.players[1].region, RegionSpec::Whole);
        assert_eq!(cfg.players[0].y_d, 1.0);
        assert_eq!(cfg.players[1].u_b, 5.0);
    }

    #[test]
    fn round_trips_through_render_and_parse() {
        let cfg = parse_config(SAMPLE).expect("sample config parses");
        let text = to_ini_string(&cfg);
        let reparsed = parse_config(&text).expect("rendered config parses");
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn optional_keys_default() {
        let minimal = "\
[domain]
x0 = 0
x1 = 1
y0 = 0
y1 = 1
nx = 4
ny = 4
[parameters]
alpha = 0.1
rho = 1.0
psi_const = 100.0
[player.1]
region = whole
y_d = 1.0
u_a = -1.0
u_b = 1.0
";
        let cfg = parse_config(minimal).expect("minimal config parses");
        assert_eq!(cfg.mu, 0.0);
        assert_eq!(cfg.psi_x, 0.0);
        assert_eq!(cfg.psi_y, 0.0);
        assert_eq!(cfg.gmres_tol, None);
        assert_eq!(cfg.max_outer, None);
        assert_eq!(cfg.y0_seed, 0.0);
        let (problem, solver) = build_problem(&cfg).expect("problem builds");
        assert_eq!(problem.n_players(), 1);
        assert_eq!(problem.n_vertices(), 25);
        assert_eq!(solver.gmres_tol, SolverConfig::default().gmres_tol);
        assert_eq!(solver.max_outer, SolverConfig::default().max_outer);
    }

    #[test]
    fn rejects_malformed_input() {
        let cases: &[(&str, &str)] = &[
            ("x0 = 0\n", "before any [section]"),
            ("[domain\n", "unterminated section"),
            ("[domain]\nnonsense line\n", "expected `key = value`"),
            ("[domain]\nx0 = 0\nx0 = 1\n", "duplicate key"),
            ("[domain]\nx0 = zero\n", "is not a number"),
            ("[domain]\nx0 = 0\n[domain]\n", "duplicate section"),
        ];
        for (text, needle) in cases {
            let err = parse_config(text).expect_err("must fail");
            let msg = format!("{err:#}");
            assert!(
                msg.contains(needle),
                "input {text:?} produced `{msg}` without `{needle}`"
            );
        }
    }

    #[test]
    fn rejects_semantic_errors() {
        let base = parse_config(SAMPLE).expect("sample parses");

        let mut broken = base.clone();
        broken.alpha = 0.0;
        let text = to_ini_string(&broken);
        assert!(parse_config(&text).is_err(), "alpha = 0 must be rejected");

        let mut broken = base.clone();
        broken.players[0].u_a = 9.0;
        let text = to_ini_string(&broken);
        let err = parse_config(&text).expect_err("inverted bounds must be rejected");
        assert!(format!("{err:#}").contains("u_a > u_b"));

        let gap = SAMPLE.replace("[player.2]", "[player.3]");
        let err = parse_config(&gap).expect_err("player numbering gap must be rejected");
        assert!(format!("{err:#}").contains("numbering"));

        let unknown_key = SAMPLE.replace("rho = 10.0", "rho = 10.0\nextra = 1");
        let err = parse_config(&unknown_key).expect_err("unknown key must be rejected");
        assert!(format!("{err:#}").contains("unknown key"));

        let unknown_section = format!("{SAMPLE}\n[plotting]\ncolor = red\n");
        let err = parse_config(&unknown_section).expect_err("unknown section must be rejected");
        assert!(format!("{err:#}").contains("unknown section"));
    }

    #[test]
    fn whole_domain_players_have_zero_offset() {
        let text = "\
[domain]
x0 = 0
x1 = 1
y0 = 0
y1 = 1
nx = 6
ny = 6
[parameters]
alpha = 0.1
rho = 1.0
psi_const = 50.0
[player.1]
region = whole
y_d = 2.0
u_a = -10.0
u_b = 10.0
[player.2]
region = whole
y_d = -1.0
u_a = -10.0
u_b = 10.0
";
        let cfg = parse_config(text).expect("config parses");
        let (problem, _) = build_problem(&cfg).expect("problem builds");
        let offset = problem.offset_estimate().expect("offset estimate");
        assert!(offset.total <= 1e-12, "total {}", offset.total);
        assert!(offset.alpha_ok);
    }
}
