//! Scenario files: flat `key = value` lines with dotted section prefixes.
//!
//! ```text
//! seed = 7
//! grid.nx = 40
//! detector.bg_cps = 150
//! emitter.0.x_nm = -183.05
//! ```
//!
//! `#` starts a comment. Unknown keys are errors, so typos do not silently
//! fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ScanGrid;
use crate::model::{Detector, Emitter, Psf, Scene};
use crate::simulator::expected_rates;

/// Scenario files bundled with the library, addressable by name.
pub const BUNDLED: [(&str, &str); 5] = [
    ("pair366", include_str!("../scenarios/pair366.cfg")),
    ("pair8p5", include_str!("../scenarios/pair8p5.cfg")),
    ("axes", include_str!("../scenarios/axes.cfg")),
    ("scaling", include_str!("../scenarios/scaling.cfg")),
    ("g2", include_str!("../scenarios/g2.cfg")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub angles_deg: Vec<f64>,
    pub x_nm: f64,
    pub y_nm: f64,
    pub dwell_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct G2Config {
    pub x_nm: f64,
    pub y_nm: f64,
    pub duration_s: f64,
    pub bin_width_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scene: Scene,
    /// Absent for sweep- or histogram-only scenarios.
    pub grid: Option<ScanGrid>,
    /// Target expected two-photon total the dwell time was derived from.
    pub coincidence_budget: Option<f64>,
    pub orders: Vec<usize>,
    pub seed: u64,
    pub output_dir: String,
    pub sweep: Option<SweepConfig>,
    pub g2: Option<G2Config>,
    pub resamples: usize,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Fields<'a> {
    path: &'a str,
    map: BTreeMap<String, Entry>,
}

impl Fields<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line,
            message: message.into(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.err(line, format!("cannot parse `{v}` for `{key}`"))),
        }
    }

    fn or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::MissingField(key.to_string()))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| self.err(line, format!("cannot parse `{s}` in `{key}`"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }
}

fn tokenize<'a>(path: &'a str, text: &str) -> Result<Fields<'a>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line,
            message: format!("expected `key = value`, found `{body}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse {
                path: path.to_string(),
                line,
                message: "empty key".into(),
            });
        }
        let entry = Entry {
            value: v.to_string(),
            line,
            used: false,
        };
        if map.insert(k.to_string(), entry).is_some() {
            return Err(Error::Parse {
                path: path.to_string(),
                line,
                message: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(Fields { path, map })
}

impl ScenarioConfig {
    /// Loads a scenario file, or a bundled scenario when `path` is one of the
    /// names in [`BUNDLED`] and no such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let name = path.to_string_lossy();
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&name, &text),
            Err(e) => match BUNDLED.iter().find(|(n, _)| *n == name) {
                Some((n, text)) => Self::parse(n, text),
                None => Err(Error::io(path, e)),
            },
        }
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let (n, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::invalid("scenario", format!("no bundled scenario `{name}`")))?;
        Self::parse(n, text)
    }

    /// `origin` names the source in error messages.
    pub fn parse(origin: &str, text: &str) -> Result<Self> {
        let mut f = tokenize(origin, text)?;

        let seed: u64 = f.required("seed")?;
        let output_dir = f.or("output_dir", "out".to_string())?;
        let resamples = f.or("fit.resamples", 0usize)?;

        let defaults = Detector::default();
        let mut detector = Detector {
            r: f.or("detector.r", defaults.r)?,
            t: 0.0,
            tw_ns: f.or("detector.tw_ns", defaults.tw_ns)?,
            k_bunch: f.or("detector.k_bunch", defaults.k_bunch)?,
            tau_a_ns: f.or("detector.tau_a_ns", defaults.tau_a_ns)?,
            capture_frac: f.or("detector.capture_frac", defaults.capture_frac)?,
            bg_cps: f.or("detector.bg_cps", defaults.bg_cps)?,
            eta_higher: BTreeMap::new(),
        };
        let t_default = if detector.r == defaults.r { defaults.t } else { 1.0 - detector.r };
        detector.t = f.or("detector.t", t_default)?;
        let eta_keys: Vec<String> = f.map.keys().filter(|k| k.starts_with("detector.eta.")).cloned().collect();
        for key in eta_keys {
            let line = f.map[&key].line;
            let m: usize = key["detector.eta.".len()..]
                .parse()
                .map_err(|_| f.err(line, format!("bad order in `{key}`")))?;
            let eta: f64 = f.required(&key)?;
            detector.eta_higher.insert(m, eta);
        }

        let psf = Psf::new(f.or("psf.sigma_nm", Psf::default().sigma_nm)?)?;
        let mut emitters = Vec::new();
        for i in 0.. {
            let p = format!("emitter.{i}.");
            if !f.has_prefix(&p) {
                break;
            }
            emitters.push(Emitter::new(
                f.required(&format!("{p}x_nm"))?,
                f.required(&format!("{p}y_nm"))?,
                f.required(&format!("{p}alpha_cps"))?,
                f.or(&format!("{p}beta_cps"), 0.0)?,
            )?);
        }
        if emitters.is_empty() {
            return Err(Error::MissingField("emitter.0.x_nm".into()));
        }
        let pump = f.or("scene.pump_angle_deg", 0.0)?;
        let scene = Scene::new(emitters, psf, detector, pump)?;
        let n = scene.emitters.len();

        let orders: Vec<usize> = f.list("orders")?.unwrap_or_else(|| (2..=n).collect());
        for &m in &orders {
            if m < 2 || m > n {
                return Err(Error::OrderOutOfRange { order: m, max: n });
            }
        }

        let (grid, coincidence_budget) = if f.has_prefix("grid.") {
            let nx: usize = f.required("grid.nx")?;
            let ny: usize = f.or("grid.ny", nx)?;
            let pitch: f64 = f.required("grid.pitch_nm")?;
            let x0 = f.or("grid.x0_nm", -pitch * (nx as f64 - 1.0) / 2.0)?;
            let y0 = f.or("grid.y0_nm", -pitch * (ny as f64 - 1.0) / 2.0)?;
            let budget: Option<f64> = f.get("grid.coincidence_budget")?;
            let dwell: Option<f64> = f.get("grid.dwell_s")?;
            let dwell = match (dwell, budget) {
                (Some(d), _) => d,
                (None, Some(b)) => {
                    let probe = ScanGrid::new(x0, y0, pitch, nx, ny, 1.0)?;
                    dwell_for_budget(&scene, &probe, b)?
                }
                (None, None) => return Err(Error::MissingField("grid.dwell_s".into())),
            };
            (Some(ScanGrid::new(x0, y0, pitch, nx, ny, dwell)?), budget)
        } else {
            (None, None)
        };

        let sweep = if f.has_prefix("sweep.") {
            let angles = match f.list("sweep.angles_deg")? {
                Some(a) => a,
                None => (0..=18).map(|k| k as f64 * 10.0).collect(),
            };
            if angles.is_empty() {
                return Err(Error::invalid("sweep.angles_deg", "need at least one angle"));
            }
            Some(SweepConfig {
                angles_deg: angles,
                x_nm: f.or("sweep.x_nm", 0.0)?,
                y_nm: f.or("sweep.y_nm", 0.0)?,
                dwell_s: positive("sweep.dwell_s", f.required("sweep.dwell_s")?)?,
            })
        } else {
            None
        };

        let g2 = if f.has_prefix("g2.") {
            Some(G2Config {
                x_nm: f.or("g2.x_nm", 0.0)?,
                y_nm: f.or("g2.y_nm", 0.0)?,
                duration_s: positive("g2.duration_s", f.required("g2.duration_s")?)?,
                bin_width_ns: positive("g2.bin_width_ns", f.or("g2.bin_width_ns", 0.5)?)?,
            })
        } else {
            None
        };

        if let Some((k, e)) = f.map.iter().find(|(_, e)| !e.used) {
            return Err(f.err(e.line, format!("unknown key `{k}`")));
        }

        Ok(ScenarioConfig {
            scene,
            grid,
            coincidence_budget,
            orders,
            seed,
            output_dir,
            sweep,
            g2,
            resamples,
        })
    }

    /// Fully resolved configuration, defaults included; parses back to an
    /// equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let list = |v: &[f64]| v.iter().map(|a| format!("{a:?}")).collect::<Vec<_>>().join(", ");
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.clone());
        kv(
            "orders",
            self.orders.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", "),
        );
        kv("fit.resamples", self.resamples.to_string());
        let d = &self.scene.detector;
        kv("detector.r", format!("{:?}", d.r));
        kv("detector.t", format!("{:?}", d.t));
        kv("detector.tw_ns", format!("{:?}", d.tw_ns));
        kv("detector.k_bunch", format!("{:?}", d.k_bunch));
        kv("detector.tau_a_ns", format!("{:?}", d.tau_a_ns));
        kv("detector.capture_frac", format!("{:?}", d.capture_frac));
        kv("detector.bg_cps", format!("{:?}", d.bg_cps));
        for (m, eta) in &d.eta_higher {
            kv(&format!("detector.eta.{m}"), format!("{eta:?}"));
        }
        kv("psf.sigma_nm", format!("{:?}", self.scene.psf.sigma_nm));
        kv("scene.pump_angle_deg", format!("{:?}", self.scene.pump_angle_deg));
        for (i, e) in self.scene.emitters.iter().enumerate() {
            kv(&format!("emitter.{i}.x_nm"), format!("{:?}", e.x_nm));
            kv(&format!("emitter.{i}.y_nm"), format!("{:?}", e.y_nm));
            kv(&format!("emitter.{i}.alpha_cps"), format!("{:?}", e.alpha_cps));
            kv(&format!("emitter.{i}.beta_cps"), format!("{:?}", e.beta_cps));
        }
        if let Some(g) = &self.grid {
            kv("grid.nx", g.nx.to_string());
            kv("grid.ny", g.ny.to_string());
            kv("grid.pitch_nm", format!("{:?}", g.pitch_nm));
            kv("grid.x0_nm", format!("{:?}", g.x0_nm));
            kv("grid.y0_nm", format!("{:?}", g.y0_nm));
            kv("grid.dwell_s", format!("{:?}", g.dwell_s));
            if let Some(b) = self.coincidence_budget {
                kv("grid.coincidence_budget", format!("{b:?}"));
            }
        }
        if let Some(sw) = &self.sweep {
            kv("sweep.angles_deg", list(&sw.angles_deg));
            kv("sweep.x_nm", format!("{:?}", sw.x_nm));
            kv("sweep.y_nm", format!("{:?}", sw.y_nm));
            kv("sweep.dwell_s", format!("{:?}", sw.dwell_s));
        }
        if let Some(g) = &self.g2 {
            kv("g2.x_nm", format!("{:?}", g.x_nm));
            kv("g2.y_nm", format!("{:?}", g.y_nm));
            kv("g2.duration_s", format!("{:?}", g.duration_s));
            kv("g2.bin_width_ns", format!("{:?}", g.bin_width_ns));
        }
        s
    }

    pub fn require_grid(&self) -> Result<ScanGrid> {
        self.grid.ok_or_else(|| Error::MissingField("grid.nx".into()))
    }
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(name, "must be > 0"))
    }
}

/// Dwell time per pixel at which the expected two-photon total over the
/// grid equals `budget`.
pub fn dwell_for_budget(scene: &Scene, grid: &ScanGrid, budget: f64) -> Result<f64> {
    positive("grid.coincidence_budget", budget)?;
    if scene.emitters.len() < 2 {
        return Err(Error::invalid("grid.coincidence_budget", "needs at least two emitters"));
    }
    let mut rate = 0.0;
    for i in 0..grid.len() {
        let (x, y) = grid.position_of(i);
        rate += expected_rates(scene, &[2], x, y)?.1[0];
    }
    if rate <= 0.0 {
        return Err(Error::invalid("grid.coincidence_budget", "scene has no coincidences on this grid"));
    }
    Ok(budget / rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 1\nemitter.0.x_nm = 0\nemitter.0.y_nm = 0\nemitter.0.alpha_cps = 1e4\n";

    #[test]
    fn bundled_scenarios_parse_and_round_trip() {
        for (name, _) in BUNDLED {
            let cfg = ScenarioConfig::bundled(name).unwrap();
            let again = ScenarioConfig::parse("echo", &cfg.to_text()).unwrap();
            assert_eq!(cfg, again, "{name}");
            assert_eq!(cfg.to_text(), again.to_text());
        }
    }

    #[test]
    fn missing_seed_is_named() {
        let err = ScenarioConfig::parse("x", "emitter.0.x_nm = 0\n").unwrap_err();
        assert!(matches!(&err, Error::MissingField(f) if f == "seed"));
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn unknown_keys_and_bad_values_report_lines() {
        let err = ScenarioConfig::parse("a.cfg", &format!("{MINIMAL}\ndetectr.r = 0.5\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 6, .. }), "{err}");
        let err = ScenarioConfig::parse("a.cfg", "seed = x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = ScenarioConfig::parse("a.cfg", "seed = 1\nno equals sign\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = ScenarioConfig::parse("a.cfg", "seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(err.to_string().starts_with("a.cfg:2:"));
    }

    #[test]
    fn defaults_are_echoed() {
        let cfg = ScenarioConfig::parse("m", MINIMAL).unwrap();
        let text = cfg.to_text();
        for key in ["detector.r = 0.54", "detector.t = 0.46", "detector.tw_ns = 2.0", "psf.sigma_nm = 150.0", "output_dir = out"] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
        assert!(cfg.grid.is_none() && cfg.orders.is_empty());
    }

    #[test]
    fn one_pixel_grid_and_budget() {
        let text = format!(
            "{MINIMAL}emitter.1.x_nm = 50\nemitter.1.y_nm = 0\nemitter.1.alpha_cps = 1e4\ngrid.nx = 1\ngrid.pitch_nm = 10\ngrid.coincidence_budget = 100\n"
        );
        let cfg = ScenarioConfig::parse("b", &text).unwrap();
        let g = cfg.grid.unwrap();
        assert_eq!((g.nx, g.ny, g.x0_nm), (1, 1, 0.0));
        let (_, c) = expected_rates(&cfg.scene, &[2], 0.0, 0.0).unwrap();
        assert!((c[0] * g.dwell_s - 100.0).abs() < 1e-9);
    }

    #[test]
    fn orders_are_checked() {
        let err = ScenarioConfig::parse("o", &format!("{MINIMAL}orders = 2\n")).unwrap_err();
        assert!(matches!(err, Error::OrderOutOfRange { order: 2, max: 1 }));
    }
}
