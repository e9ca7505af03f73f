//! Plain-text grid, histogram, sweep and report files.
//!
//! A grid file is a block of `# key = value` header lines (`nx`, `ny`,
//! `pitch_nm`, `x0_nm`, `y0_nm`, `dwell_s`, `unit`) followed by `ny` rows of
//! `nx` whitespace-separated values, `y` increasing per row. Counts are
//! written as integers, rates with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimation::FitReport;
use crate::grid::{Grid, ScanGrid};
use crate::reconstruction::{poisson_variance, EmitterImages, PixelFlag};
use crate::simulator::{G2Histogram, ScanData, SweepPoint};

pub const SINGLES_D1: &str = "singles_d1.txt";
pub const SINGLES_D2: &str = "singles_d2.txt";
pub const MANIFEST: &str = "manifest.txt";
pub const FLAGS: &str = "flags.txt";
pub const VARIANCE: &str = "variance.txt";
pub const REPORT: &str = "report.txt";
pub const G2: &str = "g2.txt";
pub const SWEEP: &str = "sweep.txt";

pub fn coincidence_file(m: usize) -> String {
    format!("coinc_m{m}.txt")
}

pub fn image_file(k: usize) -> String {
    format!("image_{k}.txt")
}

fn header(grid: &ScanGrid, unit: &str) -> String {
    format!(
        "# nx = {}\n# ny = {}\n# pitch_nm = {:?}\n# x0_nm = {:?}\n# y0_nm = {:?}\n# dwell_s = {:?}\n# unit = {unit}\n",
        grid.nx, grid.ny, grid.pitch_nm, grid.x0_nm, grid.y0_nm, grid.dwell_s
    )
}

fn grid_text<T>(grid: &ScanGrid, unit: &str, g: &Grid<T>, fmt: impl Fn(&T) -> String) -> String {
    let mut s = header(grid, unit);
    for row in g.as_slice().chunks(g.nx().max(1)) {
        s.push_str(&row.iter().map(&fmt).collect::<Vec<_>>().join(" "));
        s.push('\n');
    }
    s
}

pub fn count_grid_text(grid: &ScanGrid, g: &Grid<u64>) -> String {
    grid_text(grid, "counts", g, |v| v.to_string())
}

pub fn rate_grid_text(grid: &ScanGrid, g: &Grid<f64>) -> String {
    grid_text(grid, "cps", g, |v| format!("{v:.16e}"))
}

pub fn flag_grid_text(grid: &ScanGrid, g: &Grid<PixelFlag>) -> String {
    grid_text(grid, "flag", g, |v| v.code().to_string())
}

/// Parsed grid file: the scan geometry, the unit and the values as text.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub grid: ScanGrid,
    pub unit: String,
    cells: Grid<String>,
}

impl GridFile {
    pub fn parse(origin: &str, text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut fields = std::collections::BTreeMap::new();
        let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.split_once('=') {
                    fields.insert(k.trim().to_string(), (v.trim().to_string(), n + 1));
                }
            } else if !line.is_empty() {
                rows.push((n + 1, line.split_whitespace().map(str::to_string).collect()));
            }
        }
        let get = |k: &str| -> Result<(String, usize)> {
            fields.get(k).cloned().ok_or_else(|| Error::MissingField(format!("{origin}: header `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            let (v, line) = get(k)?;
            v.parse().map_err(|_| err(line, format!("bad `{k}` value `{v}`")))
        };
        let int = |k: &str| -> Result<usize> {
            let (v, line) = get(k)?;
            v.parse().map_err(|_| err(line, format!("bad `{k}` value `{v}`")))
        };
        let (nx, ny) = (int("nx")?, int("ny")?);
        let grid = ScanGrid::new(num("x0_nm")?, num("y0_nm")?, num("pitch_nm")?, nx, ny, num("dwell_s")?)?;
        let unit = get("unit")?.0;

        let found_nx = rows.iter().map(|r| r.1.len()).find(|&l| l != nx).unwrap_or(nx);
        if rows.len() != ny || found_nx != nx {
            return Err(Error::DimensionMismatch {
                expected_nx: nx,
                expected_ny: ny,
                found_nx,
                found_ny: rows.len(),
            });
        }
        let cells = Grid::from_vec(nx, ny, rows.into_iter().flat_map(|r| r.1).collect())?;
        Ok(GridFile { grid, unit, cells })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.to_string_lossy(), &text)
    }

    fn values<T: std::str::FromStr>(&self, what: &str) -> Result<Grid<T>> {
        let data = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.parse().map_err(|_| Error::Parse {
                    path: what.to_string(),
                    line: 0,
                    message: format!("cell {i}: `{c}` is not a valid {what}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        Grid::from_vec(self.grid.nx, self.grid.ny, data)
    }

    pub fn counts(&self) -> Result<Grid<u64>> {
        self.values("count")
    }

    pub fn rates(&self) -> Result<Grid<f64>> {
        self.values("rate")
    }

    pub fn flags(&self) -> Result<Grid<PixelFlag>> {
        let codes: Grid<u8> = self.values("flag")?;
        let flags = codes
            .iter()
            .map(|&c| PixelFlag::from_code(c).ok_or_else(|| Error::invalid("flags", format!("unknown flag code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        Grid::from_vec(self.grid.nx, self.grid.ny, flags)
    }
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn same_geometry(a: &ScanGrid, b: &ScanGrid) -> Result<()> {
    if (a.nx, a.ny) != (b.nx, b.ny) {
        return Err(Error::DimensionMismatch {
            expected_nx: a.nx,
            expected_ny: a.ny,
            found_nx: b.nx,
            found_ny: b.ny,
        });
    }
    if a != b {
        return Err(Error::invalid("grid", "grid files disagree on scan geometry"));
    }
    Ok(())
}

/// Writes the count grids and a manifest echoing the resolved config.
pub fn write_scan(dir: &Path, sd: &ScanData, cfg: &ScenarioConfig) -> Result<()> {
    ensure_dir(dir)?;
    write(dir.join(MANIFEST), &cfg.to_text())?;
    write(dir.join(SINGLES_D1), &count_grid_text(&sd.grid, &sd.singles_d1))?;
    write(dir.join(SINGLES_D2), &count_grid_text(&sd.grid, &sd.singles_d2))?;
    for (m, g) in &sd.coincidences {
        write(dir.join(coincidence_file(*m)), &count_grid_text(&sd.grid, g))?;
    }
    Ok(())
}

/// Reads a scan directory written by [`write_scan`]. Coincidence orders are
/// taken from the manifest; a missing file is an error.
pub fn read_scan(dir: &Path) -> Result<(ScanData, ScenarioConfig)> {
    let cfg = ScenarioConfig::load(&dir.join(MANIFEST))?;
    let d1 = GridFile::read(&dir.join(SINGLES_D1))?;
    let d2 = GridFile::read(&dir.join(SINGLES_D2))?;
    same_geometry(&d1.grid, &d2.grid)?;
    let mut coincidences = Vec::new();
    for &m in &cfg.orders {
        let path = dir.join(coincidence_file(m));
        if !path.exists() {
            return Err(Error::MissingOrder(m));
        }
        let g = GridFile::read(&path)?;
        same_geometry(&d1.grid, &g.grid)?;
        coincidences.push((m, g.counts()?));
    }
    let sd = ScanData {
        grid: d1.grid,
        singles_d1: d1.counts()?,
        singles_d2: d2.counts()?,
        coincidences,
        pump_angle_deg: cfg.scene.pump_angle_deg,
        seed: cfg.seed,
        detector: cfg.scene.detector.clone(),
    };
    sd.validate()?;
    Ok((sd, cfg))
}

pub fn write_images(dir: &Path, images: &EmitterImages) -> Result<()> {
    ensure_dir(dir)?;
    for (k, img) in images.images.iter().enumerate() {
        write(dir.join(image_file(k)), &rate_grid_text(&images.grid, img))?;
    }
    write(dir.join(VARIANCE), &rate_grid_text(&images.grid, &images.variance))?;
    write(dir.join(FLAGS), &flag_grid_text(&images.grid, &images.flags))
}

/// Reads `image_0.txt`, `image_1.txt`, ... and `flags.txt`. The `singles`
/// field is rebuilt as the per-pixel sum of the images. Without
/// `variance.txt` the variance falls back to Poisson noise on the singles.
pub fn read_images(dir: &Path) -> Result<EmitterImages> {
    let flags = GridFile::read(&dir.join(FLAGS))?;
    let mut images = Vec::new();
    for k in 0.. {
        let path = dir.join(image_file(k));
        if !path.exists() {
            break;
        }
        let g = GridFile::read(&path)?;
        same_geometry(&flags.grid, &g.grid)?;
        images.push(g.rates()?);
    }
    if images.is_empty() {
        return Err(Error::MissingField(format!("{}", dir.join(image_file(0)).display())));
    }
    let grid = flags.grid;
    let singles = Grid::from_fn(grid.nx, grid.ny, |ix, iy| images.iter().map(|g| g.get(ix, iy)).sum());
    let var_path = dir.join(VARIANCE);
    let variance = if var_path.exists() {
        let g = GridFile::read(&var_path)?;
        same_geometry(&grid, &g.grid)?;
        g.rates()?
    } else {
        poisson_variance(&singles, grid.dwell_s)
    };
    Ok(EmitterImages {
        grid,
        images,
        flags: flags.flags()?,
        singles,
        variance,
    })
}

pub fn g2_text(h: &G2Histogram) -> String {
    let mut s = format!(
        "# bin_width_ns = {:?}\n# total_starts = {}\n# tau_ns count\n",
        h.bin_width_ns, h.total_starts
    );
    for (tau, n) in &h.bins {
        let _ = writeln!(s, "{tau:.16e} {n}");
    }
    s
}

pub fn sweep_text(sweep: &[SweepPoint], dwell_s: f64) -> String {
    let mut s = format!("# dwell_s = {dwell_s:?}\n# angle_deg d1 d2 coincidences\n");
    for p in sweep {
        let _ = writeln!(s, "{:?} {} {} {}", p.angle_deg, p.d1, p.d2, p.coincidences);
    }
    s
}

/// Header values (`# key = value`) and whitespace-split data rows with their
/// line numbers.
type Table = (Vec<(String, String)>, Vec<(usize, Vec<String>)>);

fn table(text: &str) -> Table {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('#') {
            if let Some((k, v)) = h.split_once('=') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
        } else if !line.is_empty() {
            rows.push((n + 1, line.split_whitespace().map(str::to_string).collect()));
        }
    }
    (header, rows)
}

fn cell<T: std::str::FromStr>(origin: &str, line: usize, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        path: origin.to_string(),
        line,
        message: format!("cannot parse `{v}`"),
    })
}

fn header_value<T: std::str::FromStr>(origin: &str, header: &[(String, String)], key: &str) -> Result<T> {
    let v = header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::MissingField(format!("{origin}: header `{key}`")))?;
    cell(origin, 0, v)
}

fn columns(origin: &str, rows: &[(usize, Vec<String>)], n: usize) -> Result<()> {
    match rows.iter().find(|(_, r)| r.len() != n) {
        Some((line, r)) => Err(Error::Parse {
            path: origin.to_string(),
            line: *line,
            message: format!("expected {n} columns, found {}", r.len()),
        }),
        None => Ok(()),
    }
}

/// Inverse of [`g2_text`].
pub fn parse_g2(origin: &str, text: &str) -> Result<G2Histogram> {
    let (header, rows) = table(text);
    columns(origin, &rows, 2)?;
    let bins = rows
        .iter()
        .map(|(line, r)| Ok((cell(origin, *line, &r[0])?, cell(origin, *line, &r[1])?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(G2Histogram {
        bin_width_ns: header_value(origin, &header, "bin_width_ns")?,
        bins,
        total_starts: header_value(origin, &header, "total_starts")?,
    })
}

/// Inverse of [`sweep_text`]: the points and the dwell time.
pub fn parse_sweep(origin: &str, text: &str) -> Result<(Vec<SweepPoint>, f64)> {
    let (header, rows) = table(text);
    columns(origin, &rows, 4)?;
    let points = rows
        .iter()
        .map(|(line, r)| {
            Ok(SweepPoint {
                angle_deg: cell(origin, *line, &r[0])?,
                d1: cell(origin, *line, &r[1])?,
                d2: cell(origin, *line, &r[2])?,
                coincidences: cell(origin, *line, &r[3])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((points, header_value(origin, &header, "dwell_s")?))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write(path.to_path_buf(), text)
}

/// `key = value` report, one metric per line, errors as `<key>.err`.
pub fn report_text(r: &FitReport) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: f64| {
        let _ = writeln!(s, "{k} = {v:?}");
    };
    if !r.fits.is_empty() {
        kv("emitters", r.fits.len() as f64);
        for (i, f) in r.fits.iter().enumerate() {
            let e = f.errors();
            let names = ["x0_nm", "y0_nm", "sigma_x_nm", "sigma_y_nm", "amplitude_cps", "offset_cps"];
            for (k, name) in names.iter().enumerate() {
                kv(&format!("emitter.{i}.{name}"), f.params()[k]);
                kv(&format!("emitter.{i}.{name}.err"), e[k]);
            }
        }
        if r.fits.len() >= 2 {
            kv("distance_nm", r.distance_nm);
            kv("distance_nm.err", r.distance_err_nm);
            kv("distance_nm.cov_err", r.distance_cov_err_nm);
        }
    }
    if let Some(b) = &r.bootstrap {
        kv("bootstrap.resamples", (b.distances.len() + b.failures.len()) as f64);
        kv("bootstrap.failures", b.failures.len() as f64);
        kv("bootstrap.distance_mean_nm", b.mean());
        kv("bootstrap.distance_std_nm", b.std());
    }
    for (i, p) in r.pol_params.iter().enumerate() {
        kv(&format!("pol.{i}.alpha_cps"), p.alpha);
        kv(&format!("pol.{i}.alpha_cps.err"), p.sigma_alpha);
        kv(&format!("pol.{i}.beta_cps"), p.beta);
        kv(&format!("pol.{i}.beta_cps.err"), p.sigma_beta);
    }
    if let Some(g) = &r.g2 {
        kv("g2.zero", g.g2_zero);
        kv("g2.zero.err", g.g2_zero_err);
        kv("g2.tau_a_ns", g.tau_a_ns);
        kv("g2.tau_a_ns.err", g.tau_a_err_ns);
    }
    s
}

/// Reads a report back into `(key, value)` pairs, in file order.
pub fn parse_report(text: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
                path: REPORT.into(),
                line: n + 1,
                message: "expected `key = value`".into(),
            })?;
            let v = v.trim().parse().map_err(|_| Error::Parse {
                path: REPORT.into(),
                line: n + 1,
                message: format!("bad number `{}`", v.trim()),
            })?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}
