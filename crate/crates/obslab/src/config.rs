//! Scenario configuration files.
//!
//! Line-oriented `key = value` text with `#` comments. Keys carry units in
//! their names. Unknown keys are rejected, scalar keys may appear once, and
//! every diagnostic carries the offending line number.
//!
//! ```text
//! schema_version = 1
//! landmark_m = 1 3          # repeat once per landmark (inertial meters)
//! omega_profile = sinusoid 2 0.12566370614359172
//! vx_profile = constant 1
//! delay_s = 1
//! dt_s = 0.001
//! t_end_s = 100
//! epsilon = 0.6
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use crate::delay::PhiWindow;
use crate::landmarks::LandmarkSet;
use crate::profile::Profile;
use crate::se2::{Pose, Rotation2, StateVector};
use crate::sim::{NoiseConfig, Scenario, SimError};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Incomplete(String),
    #[error(transparent)]
    Scenario(#[from] SimError),
}

fn perr(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse { line, message: message.into() }
}

/// Parsed scenario file with every default resolved.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Row subsampling applied when writing trajectory CSV (1 = every step).
    pub csv_stride: usize,
}

#[derive(Default)]
struct Raw {
    schema_version: Option<(usize, String)>,
    landmarks: Vec<(f64, f64)>,
    omega_profile: Option<(usize, Profile)>,
    vx_profile: Option<(usize, Profile)>,
    vy_profile: Option<(usize, Profile)>,
    x0_pose: Option<[f64; 3]>,
    x_hat0: Option<[f64; 6]>,
    delay_s: Option<f64>,
    dt_s: Option<f64>,
    t_end_s: Option<f64>,
    epsilon: Option<f64>,
    sigma_scale: Option<f64>,
    p0_scale: Option<f64>,
    phi_window: Option<PhiWindow>,
    conv_tol: Option<f64>,
    div_factor: Option<f64>,
    pde_cells: Option<usize>,
    csv_stride: Option<usize>,
    noise_sigma_landmark_m: Option<f64>,
    noise_sigma_velocity_mps: Option<f64>,
    noise_seed: Option<u64>,
}

fn parse_finite(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value
        .parse()
        .map_err(|_| perr(line, format!("`{key}` expects a number, got `{value}`")))?;
    if !v.is_finite() {
        return Err(perr(line, format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn parse_floats<const N: usize>(line: usize, key: &str, value: &str) -> Result<[f64; N], ConfigError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != N {
        return Err(perr(line, format!("`{key}` expects {N} numbers, got {}", parts.len())));
    }
    let mut out = [0.0; N];
    for (i, p) in parts.iter().enumerate() {
        out[i] = parse_finite(line, key, p)?;
    }
    Ok(out)
}

macro_rules! set_once {
    ($slot:expr, $line:expr, $key:expr, $value:expr) => {{
        if $slot.is_some() {
            return Err(perr($line, format!("duplicate key `{}`", $key)));
        }
        $slot = Some($value);
    }};
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Raw::default();
        for (idx, full_line) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match full_line.find('#') {
                Some(pos) => &full_line[..pos],
                None => full_line,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or_else(|| perr(line, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(perr(line, format!("`{key}` has an empty value")));
            }
            match key {
                "schema_version" => {
                    set_once!(raw.schema_version, line, key, (line, value.to_string()))
                }
                "landmark_m" => {
                    let xy: [f64; 2] = parse_floats(line, key, value)?;
                    raw.landmarks.push((xy[0], xy[1]));
                }
                "omega_profile" | "vx_profile" | "vy_profile" => {
                    let profile = Profile::parse(value)
                        .map_err(|e| perr(line, format!("`{key}`: {e}")))?;
                    match key {
                        "omega_profile" => set_once!(raw.omega_profile, line, key, (line, profile)),
                        "vx_profile" => set_once!(raw.vx_profile, line, key, (line, profile)),
                        _ => set_once!(raw.vy_profile, line, key, (line, profile)),
                    }
                }
                "x0_pose" => set_once!(raw.x0_pose, line, key, parse_floats(line, key, value)?),
                "x_hat0" => set_once!(raw.x_hat0, line, key, parse_floats(line, key, value)?),
                "delay_s" => set_once!(raw.delay_s, line, key, parse_finite(line, key, value)?),
                "dt_s" => set_once!(raw.dt_s, line, key, parse_finite(line, key, value)?),
                "t_end_s" => set_once!(raw.t_end_s, line, key, parse_finite(line, key, value)?),
                "epsilon" => set_once!(raw.epsilon, line, key, parse_finite(line, key, value)?),
                "sigma_scale" => set_once!(raw.sigma_scale, line, key, parse_finite(line, key, value)?),
                "p0_scale" => set_once!(raw.p0_scale, line, key, parse_finite(line, key, value)?),
                "phi_window" => {
                    let w = match value {
                        "literal" => PhiWindow::Literal,
                        "sliding" => PhiWindow::Sliding,
                        other => {
                            return Err(perr(
                                line,
                                format!("`phi_window` must be `literal` or `sliding`, got `{other}`"),
                            ))
                        }
                    };
                    set_once!(raw.phi_window, line, key, w)
                }
                "conv_tol" => set_once!(raw.conv_tol, line, key, parse_finite(line, key, value)?),
                "div_factor" => set_once!(raw.div_factor, line, key, parse_finite(line, key, value)?),
                "pde_cells" => {
                    let v: usize = value
                        .parse()
                        .map_err(|_| perr(line, format!("`pde_cells` expects an integer, got `{value}`")))?;
                    set_once!(raw.pde_cells, line, key, v)
                }
                "csv_stride" => {
                    let v: usize = value
                        .parse()
                        .map_err(|_| perr(line, format!("`csv_stride` expects an integer, got `{value}`")))?;
                    if v == 0 {
                        return Err(perr(line, "`csv_stride` must be at least 1"));
                    }
                    set_once!(raw.csv_stride, line, key, v)
                }
                "noise_sigma_landmark_m" => {
                    set_once!(raw.noise_sigma_landmark_m, line, key, parse_finite(line, key, value)?)
                }
                "noise_sigma_velocity_mps" => {
                    set_once!(raw.noise_sigma_velocity_mps, line, key, parse_finite(line, key, value)?)
                }
                "noise_seed" => {
                    let v: u64 = value
                        .parse()
                        .map_err(|_| perr(line, format!("`noise_seed` expects an unsigned integer, got `{value}`")))?;
                    set_once!(raw.noise_seed, line, key, v)
                }
                other => return Err(perr(line, format!("unknown key `{other}`"))),
            }
        }

        let (sv_line, sv) = raw
            .schema_version
            .ok_or_else(|| ConfigError::Incomplete("missing `schema_version`".into()))?;
        if sv != SCHEMA_VERSION {
            return Err(perr(sv_line, format!("unsupported schema_version `{sv}` (expected {SCHEMA_VERSION})")));
        }
        let missing = |what: &str| ConfigError::Incomplete(format!("missing `{what}`"));
        if raw.landmarks.is_empty() {
            return Err(missing("landmark_m"));
        }
        let landmarks = LandmarkSet::from_pairs(&raw.landmarks)
            .map_err(|e| ConfigError::Incomplete(e.to_string()))?;
        let omega_profile = raw.omega_profile.ok_or_else(|| missing("omega_profile"))?.1;
        let vx_profile = raw.vx_profile.ok_or_else(|| missing("vx_profile"))?.1;
        let vy_profile = raw.vy_profile.map(|v| v.1).unwrap_or_else(|| Profile::constant(0.0));
        let pose3 = raw.x0_pose.unwrap_or([0.0, 0.0, 0.0]);
        let x0 = Pose::new(Rotation2::from_angle(pose3[2]), Vector2::new(pose3[0], pose3[1]));
        let x_hat0 = StateVector::from_row_slice(&raw.x_hat0.unwrap_or([0.0; 6]));

        let noise_keys = raw.noise_sigma_landmark_m.is_some()
            || raw.noise_sigma_velocity_mps.is_some()
            || raw.noise_seed.is_some();
        let noise = if noise_keys {
            Some(NoiseConfig {
                sigma_landmark: raw.noise_sigma_landmark_m.unwrap_or(0.0),
                sigma_velocity: raw.noise_sigma_velocity_mps.unwrap_or(0.0),
                seed: raw
                    .noise_seed
                    .ok_or_else(|| ConfigError::Incomplete("noise block needs `noise_seed`".into()))?,
            })
        } else {
            None
        };

        let scenario = Scenario {
            landmarks,
            omega_profile,
            vx_profile,
            vy_profile,
            x0,
            x_hat0,
            delay: raw.delay_s.ok_or_else(|| missing("delay_s"))?,
            dt: raw.dt_s.ok_or_else(|| missing("dt_s"))?,
            t_end: raw.t_end_s.ok_or_else(|| missing("t_end_s"))?,
            epsilon: raw.epsilon.ok_or_else(|| missing("epsilon"))?,
            sigma_scale: raw.sigma_scale.unwrap_or(0.5),
            p0_scale: raw.p0_scale.unwrap_or(0.5),
            noise,
            phi_window: raw.phi_window.unwrap_or_default(),
            conv_tol: raw.conv_tol.unwrap_or(1e-2),
            div_factor: raw.div_factor.unwrap_or(10.0),
            pde_cells: raw.pde_cells.unwrap_or(200),
        };
        scenario.validate()?;
        Ok(ScenarioConfig { scenario, csv_stride: raw.csv_stride.unwrap_or(1) })
    }

    /// Canonical echo of every resolved setting, embedded in run artifacts
    /// so outputs are self-describing.
    pub fn echo(&self) -> String {
        let s = &self.scenario;
        let mut out = String::new();
        let _ = writeln!(out, "schema_version = {SCHEMA_VERSION}");
        for p in s.landmarks.points() {
            let _ = writeln!(out, "landmark_m = {:?} {:?}", p.x, p.y);
        }
        let _ = writeln!(out, "omega_profile = {}", s.omega_profile);
        let _ = writeln!(out, "vx_profile = {}", s.vx_profile);
        let _ = writeln!(out, "vy_profile = {}", s.vy_profile);
        let _ = writeln!(
            out,
            "x0_pose = {:?} {:?} {:?}",
            s.x0.position.x,
            s.x0.position.y,
            s.x0.rotation.angle()
        );
        let xh: Vec<String> = s.x_hat0.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "x_hat0 = {}", xh.join(" "));
        let _ = writeln!(out, "delay_s = {:?}", s.delay);
        let _ = writeln!(out, "dt_s = {:?}", s.dt);
        let _ = writeln!(out, "t_end_s = {:?}", s.t_end);
        let _ = writeln!(out, "epsilon = {:?}", s.epsilon);
        let _ = writeln!(out, "sigma_scale = {:?}", s.sigma_scale);
        let _ = writeln!(out, "p0_scale = {:?}", s.p0_scale);
        let _ = writeln!(out, "phi_window = {}", s.phi_window.as_str());
        let _ = writeln!(out, "conv_tol = {:?}", s.conv_tol);
        let _ = writeln!(out, "div_factor = {:?}", s.div_factor);
        let _ = writeln!(out, "pde_cells = {}", s.pde_cells);
        let _ = writeln!(out, "csv_stride = {}", self.csv_stride);
        if let Some(n) = &s.noise {
            let _ = writeln!(out, "noise_sigma_landmark_m = {:?}", n.sigma_landmark);
            let _ = writeln!(out, "noise_sigma_velocity_mps = {:?}", n.sigma_velocity);
            let _ = writeln!(out, "noise_seed = {}", n.seed);
            let _ = writeln!(out, "# noise rng: chacha12 stream, ziggurat standard normal");
        }
        out
    }
}

/// Comma- or whitespace-separated finite floats (CLI sweep lists).
pub fn parse_float_list(s: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for tok in s.split(|c: char| c == ',' || c.is_whitespace()) {
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok.parse().map_err(|_| format!("`{tok}` is not a number"))?;
        if !v.is_finite() {
            return Err(format!("`{tok}` is not finite"));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}
