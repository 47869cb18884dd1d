//! INI configuration for batch runs.
//!
//! ```ini
//! [input]
//! volume = heart.raw
//! mask = heart_mask.raw          # optional
//!
//! [structure_tensor]
//! sigma_gradient = 1.0
//! sigma_tensor = 3.0
//! truncate = 4.0                 # optional
//!
//! [frame]
//! axis_point_a = 64,64,0         # x,y,z in voxels
//! axis_point_b = 64,64,127
//! # or: axis_centers_file = centers.csv
//!
//! [chunking]
//! chunk = 128                    # or nx,ny,nz
//! workers = 1
//!
//! [output]
//! directory = out
//! save = ha,ia,fa,vectors
//!
//! [tractography]
//! seed_spacing = 4
//! step = 0.5
//! fa_threshold = 0.1
//! max_angle = 60
//! max_steps = 10000
//! min_length = 10
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cardiac_frame::{AxisModel, DEFAULT_R_MIN};
use crate::chunk_engine::{OutputSet, PipelineConfig, MIN_CHUNK};
use crate::error::{Error, Result};
use crate::structure_tensor::{StructureTensorParams, Vec3};
use crate::tractography::TractoParams;

const SCHEMA: &[(&str, &[&str])] = &[
    ("input", &["volume", "mask"]),
    (
        "structure_tensor",
        &["sigma_gradient", "sigma_tensor", "truncate"],
    ),
    (
        "frame",
        &["axis_point_a", "axis_point_b", "axis_centers_file"],
    ),
    ("chunking", &["chunk", "workers"]),
    ("output", &["directory", "save"]),
    (
        "tractography",
        &[
            "seed_spacing",
            "step",
            "fa_threshold",
            "max_angle",
            "max_steps",
            "min_length",
        ],
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub enum AxisSource {
    Points(Vec3, Vec3),
    CentersFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub volume: PathBuf,
    pub mask: Option<PathBuf>,
    pub params: StructureTensorParams,
    pub axis: AxisSource,
    pub chunk: [usize; 3],
    pub workers: usize,
    pub output_dir: PathBuf,
    pub save: OutputSet,
    pub tracto: TractoParams,
}

/// One `key = value` entry and where it came from. `line == 0` marks a
/// command-line override.
#[derive(Debug, Clone)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn known(section: &str, key: Option<&str>) -> bool {
    SCHEMA
        .iter()
        .any(|(s, keys)| *s == section && key.map_or(true, |k| keys.contains(&k)))
}

fn lex(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, format!("malformed section header `{s}`")))?
                .trim();
            if !known(name, None) {
                return Err(err(line, format!("unknown section `{name}`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{s}`")))?;
        let sec = section
            .clone()
            .ok_or_else(|| err(line, "key outside any section"))?;
        let k = k.trim();
        if !known(&sec, Some(k)) {
            return Err(err(line, format!("unknown key `{k}` in [{sec}]")));
        }
        if out.iter().any(|e| e.section == sec && e.key == k) {
            return Err(err(line, format!("duplicate key `{k}` in [{sec}]")));
        }
        out.push(Entry {
            section: sec,
            key: k.to_string(),
            value: v.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

/// Apply a `SECTION.KEY=VALUE` override.
fn apply_override(entries: &mut Vec<Entry>, spec: &str) -> Result<()> {
    let bad = |m: &str| Error::Invalid(format!("--set {spec}: {m}"));
    let (path, value) = spec
        .split_once('=')
        .ok_or_else(|| bad("expected SEC.KEY=VAL"))?;
    let (sec, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| bad("expected SEC.KEY=VAL"))?;
    if !known(sec, Some(key)) {
        return Err(bad("unknown key"));
    }
    entries.retain(|e| !(e.section == sec && e.key == key));
    entries.push(Entry {
        section: sec.to_string(),
        key: key.to_string(),
        value: value.trim().to_string(),
        line: 0,
    });
    Ok(())
}

fn wrap(e: &Entry, r: Result<()>) -> Result<()> {
    r.map_err(|inner| {
        let message = format!("{}.{}: {}", e.section, e.key, inner);
        if e.line == 0 {
            Error::Invalid(format!("--set {message}"))
        } else {
            err(e.line, message)
        }
    })
}

fn parse_num<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| {
        Error::invalid(format!(
            "`{}` is not a valid {}",
            e.value,
            std::any::type_name::<T>()
        ))
    })
}

fn parse_list<T: std::str::FromStr>(e: &Entry, n: usize) -> Result<Vec<T>> {
    let v: Option<Vec<T>> = e.value.split(',').map(|t| t.trim().parse().ok()).collect();
    match v {
        Some(v) if v.len() == n => Ok(v),
        _ => Err(Error::invalid(format!(
            "expected {n} comma-separated numbers, got `{}`",
            e.value
        ))),
    }
}

fn resolve(base: &Path, value: &str) -> Result<PathBuf> {
    if value.is_empty() {
        return Err(Error::invalid("empty path"));
    }
    let p = PathBuf::from(value);
    Ok(if p.is_relative() && !base.as_os_str().is_empty() {
        base.join(p)
    } else {
        p
    })
}

fn fmt_vec(v: Vec3) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

impl Config {
    /// Parse with relative paths kept relative to the working directory.
    pub fn parse(text: &str) -> Result<Config> {
        Config::parse_with(text, Path::new(""), &[])
    }

    /// Parse, resolving relative paths against `base` and applying
    /// `SECTION.KEY=VALUE` overrides before validation.
    pub fn parse_with(text: &str, base: &Path, overrides: &[String]) -> Result<Config> {
        let mut entries = lex(text)?;
        for o in overrides {
            apply_override(&mut entries, o)?;
        }

        let mut volume = None;
        let mut mask = None;
        let mut params = StructureTensorParams::default();
        let mut point_a = None;
        let mut point_b = None;
        let mut centers = None;
        let mut chunk = [128usize; 3];
        let mut workers = 1usize;
        let mut output_dir = None;
        let mut save = OutputSet::default();
        let mut tracto = TractoParams::default();

        for e in &entries {
            let r = (|| -> Result<()> {
                match (e.section.as_str(), e.key.as_str()) {
                    ("input", "volume") => volume = Some(resolve(base, &e.value)?),
                    ("input", "mask") => mask = Some(resolve(base, &e.value)?),
                    ("structure_tensor", k) => {
                        let v: f64 = parse_num(e)?;
                        match k {
                            "sigma_gradient" => params.sigma_gradient = v,
                            "sigma_tensor" => params.sigma_tensor = v,
                            _ => params.truncate = v,
                        }
                        params.validate()?;
                    }
                    ("frame", "axis_point_a") => {
                        let v = parse_list::<f64>(e, 3)?;
                        point_a = Some([v[0], v[1], v[2]]);
                    }
                    ("frame", "axis_point_b") => {
                        let v = parse_list::<f64>(e, 3)?;
                        point_b = Some([v[0], v[1], v[2]]);
                    }
                    ("frame", _) => centers = Some(resolve(base, &e.value)?),
                    ("chunking", "chunk") => {
                        chunk = if e.value.contains(',') {
                            let v = parse_list::<usize>(e, 3)?;
                            [v[0], v[1], v[2]]
                        } else {
                            [parse_num::<usize>(e)?; 3]
                        };
                        if chunk.iter().any(|&c| c < MIN_CHUNK) {
                            return Err(Error::invalid(format!(
                                "chunk edges must be ≥ {MIN_CHUNK}"
                            )));
                        }
                    }
                    ("chunking", _) => {
                        workers = parse_num(e)?;
                        if workers == 0 {
                            return Err(Error::invalid("workers must be ≥ 1"));
                        }
                    }
                    ("output", "directory") => output_dir = Some(resolve(base, &e.value)?),
                    ("output", _) => save = OutputSet::parse(&e.value)?,
                    ("tractography", k) => {
                        match k {
                            "seed_spacing" => tracto.seed_spacing = parse_num(e)?,
                            "step" => tracto.step = parse_num(e)?,
                            "fa_threshold" => tracto.fa_min = parse_num(e)?,
                            "max_angle" => tracto.max_angle_deg = parse_num(e)?,
                            "max_steps" => tracto.max_steps = parse_num(e)?,
                            _ => tracto.min_length = parse_num(e)?,
                        }
                        tracto.validate()?;
                    }
                    _ => unreachable!("schema checked while lexing"),
                }
                Ok(())
            })();
            wrap(e, r)?;
        }

        let missing = |what: &str| Error::invalid(format!("missing required key {what}"));
        let volume = volume.ok_or_else(|| missing("input.volume"))?;
        let axis = match (point_a, point_b, centers) {
            (Some(a), Some(b), None) => {
                if a[2] == b[2] {
                    let line = entries
                        .iter()
                        .find(|e| e.key == "axis_point_b")
                        .map_or(0, |e| e.line);
                    let msg = "axis points must differ in z";
                    return Err(if line == 0 {
                        Error::invalid(msg)
                    } else {
                        err(line, msg)
                    });
                }
                AxisSource::Points(a, b)
            }
            (None, None, Some(p)) => AxisSource::CentersFile(p),
            (None, None, None) => {
                return Err(missing(
                    "frame.axis_point_a/axis_point_b or frame.axis_centers_file",
                ))
            }
            _ => {
                return Err(Error::invalid(
                    "[frame] needs both axis points or an axis_centers_file, not a mix",
                ))
            }
        };
        let output_dir = match output_dir {
            Some(d) => d,
            None => resolve(base, "output")?,
        };
        Ok(Config {
            volume,
            mask,
            params,
            axis,
            chunk,
            workers,
            output_dir,
            save,
            tracto,
        })
    }

    /// Read and parse a config file; relative paths resolve against its
    /// directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Config::parse_with(&text, base, overrides)
    }

    /// Effective configuration as INI text that parses back to `self`.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let t = &self.tracto;
        let _ = writeln!(s, "[input]\nvolume = {}", self.volume.display());
        if let Some(m) = &self.mask {
            let _ = writeln!(s, "mask = {}", m.display());
        }
        let _ = writeln!(
            s,
            "\n[structure_tensor]\nsigma_gradient = {}\nsigma_tensor = {}\ntruncate = {}",
            p.sigma_gradient, p.sigma_tensor, p.truncate
        );
        s.push_str("\n[frame]\n");
        match &self.axis {
            AxisSource::Points(a, b) => {
                let _ = writeln!(
                    s,
                    "axis_point_a = {}\naxis_point_b = {}",
                    fmt_vec(*a),
                    fmt_vec(*b)
                );
            }
            AxisSource::CentersFile(f) => {
                let _ = writeln!(s, "axis_centers_file = {}", f.display());
            }
        }
        let [cx, cy, cz] = self.chunk;
        let _ = writeln!(
            s,
            "\n[chunking]\nchunk = {cx},{cy},{cz}\nworkers = {}",
            self.workers
        );
        let _ = writeln!(
            s,
            "\n[output]\ndirectory = {}\nsave = {}",
            self.output_dir.display(),
            self.save.to_list()
        );
        let _ = writeln!(
            s,
            "\n[tractography]\nseed_spacing = {}\nstep = {}\nfa_threshold = {}\nmax_angle = {}\nmax_steps = {}\nmin_length = {}",
            t.seed_spacing, t.step, t.fa_min, t.max_angle_deg, t.max_steps, t.min_length
        );
        s
    }

    pub fn axis_model(&self) -> Result<AxisModel> {
        match &self.axis {
            AxisSource::Points(a, b) => AxisModel::from_points(*a, *b),
            AxisSource::CentersFile(p) => AxisModel::read_centers(p),
        }
    }

    pub fn pipeline(&self, job_index: usize, job_count: usize) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            volume: self.volume.clone(),
            mask: self.mask.clone(),
            params: self.params,
            axis: self.axis_model()?,
            r_min: DEFAULT_R_MIN,
            chunk: self.chunk,
            workers: self.workers,
            job_index,
            job_count,
            output_dir: self.output_dir.clone(),
            save: self.save,
        })
    }
}
