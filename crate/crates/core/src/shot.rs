//! Shot parameterization, canonical presets and kinematic simulation.
//!
//! A shot is the 6-vector `(rho, rho_dot, theta, theta_dot, phi, v_z)` in
//! spherical coordinates around the actor:
//!
//! * `rho`: distance to the actor \[m\], `rho_dot`: speed *toward* the actor \[m/s\]
//! * `theta`: horizontal angle in the actor heading frame, 0 = in front \[deg\]
//! * `theta_dot`: horizontal angular rate \[deg/s\]
//! * `phi`: tilt above the horizontal plane through the actor \[deg\]
//! * `v_z`: vertical speed, positive down \[m/s\]

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotParam {
    Rho,
    RhoDot,
    Theta,
    ThetaDot,
    Phi,
    VZ,
}

impl ShotParam {
    /// Parameters in shot-vector order.
    pub const ALL: [ShotParam; 6] = [
        ShotParam::Rho,
        ShotParam::RhoDot,
        ShotParam::Theta,
        ShotParam::ThetaDot,
        ShotParam::Phi,
        ShotParam::VZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ShotParam::Rho => "rho",
            ShotParam::RhoDot => "rho_dot",
            ShotParam::Theta => "theta",
            ShotParam::ThetaDot => "theta_dot",
            ShotParam::Phi => "phi",
            ShotParam::VZ => "v_z",
        }
    }
}

impl fmt::Display for ShotParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShotParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShotParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "shot parameter",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotParameters {
    pub rho: f64,
    pub rho_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub phi: f64,
    pub v_z: f64,
}

impl ShotParameters {
    pub fn from_array(v: [f64; 6]) -> Self {
        ShotParameters {
            rho: v[0],
            rho_dot: v[1],
            theta: v[2],
            theta_dot: v[3],
            phi: v[4],
            v_z: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rho,
            self.rho_dot,
            self.theta,
            self.theta_dot,
            self.phi,
            self.v_z,
        ]
    }

    pub fn get(&self, param: ShotParam) -> f64 {
        self.to_array()[param.index()]
    }

    pub fn set(&mut self, param: ShotParam, value: f64) {
        let mut v = self.to_array();
        v[param.index()] = value;
        *self = ShotParameters::from_array(v);
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shot parameters".into()));
        }
        if self.rho <= 0.0 {
            return Err(Error::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if !(0.0..=90.0).contains(&self.phi) {
            return Err(Error::invalid(format!("phi must lie in [0, 90], got {}", self.phi)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotType {
    Follow,
    Orbit,
    Dronie,
    Overhead,
    Flyby,
}

impl ShotType {
    /// One-hot order used by feature vectors.
    pub const ALL: [ShotType; 5] = [
        ShotType::Follow,
        ShotType::Orbit,
        ShotType::Dronie,
        ShotType::Overhead,
        ShotType::Flyby,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        ShotType::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShotType::Follow => "follow",
            ShotType::Orbit => "orbit",
            ShotType::Dronie => "dronie",
            ShotType::Overhead => "overhead",
            ShotType::Flyby => "flyby",
        }
    }
}

impl fmt::Display for ShotType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShotType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "follow" => Ok(ShotType::Follow),
            "orbit" => Ok(ShotType::Orbit),
            "dronie" => Ok(ShotType::Dronie),
            "overhead" => Ok(ShotType::Overhead),
            "flyby" | "fly-by" => Ok(ShotType::Flyby),
            _ => Err(Error::Unknown {
                kind: "shot type",
                name: s.to_string(),
            }),
        }
    }
}

/// A named shot configuration with the parameters a study may vary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotPreset {
    pub name: String,
    pub params: ShotParameters,
    #[serde(rename = "type")]
    pub shot_type: ShotType,
    /// Indexed in [`ShotParam::ALL`] order.
    pub variable_mask: [bool; 6],
}

impl ShotPreset {
    pub fn is_variable(&self, param: ShotParam) -> bool {
        self.variable_mask[param.index()]
    }

    pub fn variable_params(&self) -> impl Iterator<Item = ShotParam> + '_ {
        ShotParam::ALL.into_iter().filter(|p| self.is_variable(*p))
    }
}

fn preset(
    name: &str,
    shot_type: ShotType,
    [rho, theta, phi, rho_dot, theta_dot, v_z]: [f64; 6],
    variable: &[ShotParam],
) -> ShotPreset {
    let mut variable_mask = [false; 6];
    for p in variable {
        variable_mask[p.index()] = true;
    }
    ShotPreset {
        name: name.to_string(),
        params: ShotParameters {
            rho,
            rho_dot,
            theta,
            theta_dot,
            phi,
            v_z,
        },
        shot_type,
        variable_mask,
    }
}

/// The six canonical presets. Values are listed in table column order
/// `(rho, theta, phi, rho_dot, theta_dot, v_z)`.
pub fn preset_catalog() -> Vec<ShotPreset> {
    use ShotParam::*;
    vec![
        preset("Follow 0", ShotType::Follow, [8.0, 0.0, 20.0, 0.0, 0.0, 0.0], &[Phi]),
        preset("Follow 1", ShotType::Follow, [8.0, 135.0, 20.0, 0.0, 0.0, 0.0], &[Phi]),
        preset("Orbit", ShotType::Orbit, [5.0, 0.0, 20.0, 0.0, 20.0, 0.0], &[Phi, ThetaDot]),
        preset("Dronie", ShotType::Dronie, [25.0, 0.0, 45.0, -0.5, 0.0, -0.5], &[RhoDot, VZ]),
        preset(
            "Overhead",
            ShotType::Overhead,
            [8.0, 180.0, 85.0, 0.0, 0.0, 0.0],
            &[Phi, RhoDot, VZ],
        ),
        preset("Fly-by", ShotType::Flyby, [15.0, 150.0, 20.0, 0.0, -8.0, 0.0], &[Phi, ThetaDot]),
    ]
}

/// Looks up a preset by name (case-insensitive).
pub fn find_preset(name: &str) -> Result<ShotPreset> {
    preset_catalog()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Unknown {
            kind: "preset",
            name: name.to_string(),
        })
}

/// Admissible ranges for generated or varied shots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampRanges {
    pub rho: (f64, f64),
    pub phi: (f64, f64),
    pub rho_dot_abs: f64,
    pub theta_dot_abs: f64,
    pub v_z_abs: f64,
}

impl Default for ClampRanges {
    fn default() -> Self {
        ClampRanges {
            rho: (1.0, 40.0),
            phi: (0.0, 90.0),
            rho_dot_abs: 3.0,
            theta_dot_abs: 45.0,
            v_z_abs: 3.0,
        }
    }
}

impl ClampRanges {
    /// Clamps every bounded parameter, returning the parameters that moved.
    pub fn clamp(&self, shot: &ShotParameters) -> (ShotParameters, Vec<ShotParam>) {
        let mut out = *shot;
        let mut clamped = Vec::new();
        let bounds = [
            (ShotParam::Rho, self.rho.0, self.rho.1),
            (ShotParam::RhoDot, -self.rho_dot_abs, self.rho_dot_abs),
            (ShotParam::ThetaDot, -self.theta_dot_abs, self.theta_dot_abs),
            (ShotParam::Phi, self.phi.0, self.phi.1),
            (ShotParam::VZ, -self.v_z_abs, self.v_z_abs),
        ];
        for (param, lo, hi) in bounds {
            let v = out.get(param);
            let c = v.clamp(lo, hi);
            if c != v {
                out.set(param, c);
                clamped.push(param);
            }
        }
        (out, clamped)
    }
}

/// Offsets a preset along its variable parameters and clamps the result.
///
/// A nonzero delta on a parameter the preset keeps fixed is rejected, since
/// it would change the shot type.
pub fn apply_variation(preset: &ShotPreset, deltas: &[(ShotParam, f64)]) -> Result<ShotParameters> {
    let mut params = preset.params;
    for &(param, delta) in deltas {
        if !delta.is_finite() {
            return Err(Error::NonFinite(format!("delta for {param}")));
        }
        if delta == 0.0 {
            continue;
        }
        if !preset.is_variable(param) {
            return Err(Error::MaskedParameter {
                preset: preset.name.clone(),
                param,
            });
        }
        params.set(param, params.get(param) + delta);
    }
    Ok(ClampRanges::default().clamp(&params).0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorSample {
    pub t: f64,
    pub position: [f64; 3],
    /// Facing direction, degrees counterclockwise from +x.
    pub heading: f64,
}

/// Uniformly sampled actor motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorPath {
    samples: Vec<ActorSample>,
}

impl ActorPath {
    pub fn new(samples: Vec<ActorSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("actor path needs at least two samples"));
        }
        for s in &samples {
            if !s.t.is_finite() || !s.heading.is_finite() || s.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("actor sample".into()));
            }
        }
        let step = samples[1].t - samples[0].t;
        for w in samples.windows(2) {
            let d = w[1].t - w[0].t;
            if d <= 0.0 {
                return Err(Error::invalid("actor sample times must be strictly increasing"));
            }
            if (d - step).abs() > 1e-6 * step.max(1.0) {
                return Err(Error::invalid("actor samples must use a uniform time step"));
            }
        }
        Ok(ActorPath { samples })
    }

    /// Actor moving in a straight line at constant speed along its heading.
    pub fn straight(start: [f64; 3], heading_deg: f64, speed: f64, duration: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(duration > 0.0) {
            return Err(Error::invalid("duration and dt must be positive"));
        }
        let n = (duration / dt + 1e-9).floor() as usize;
        let (s, c) = heading_deg.to_radians().sin_cos();
        let samples = (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                ActorSample {
                    t,
                    position: [start[0] + c * speed * t, start[1] + s * speed * t, start[2]],
                    heading: heading_deg,
                }
            })
            .collect();
        ActorPath::new(samples)
    }

    pub fn stationary(position: [f64; 3], heading_deg: f64, duration: f64, dt: f64) -> Result<Self> {
        ActorPath::straight(position, heading_deg, 0.0, duration, dt)
    }

    /// Path used when a client does not supply one: a 20 s jog along +x.
    pub fn default_run() -> Self {
        ActorPath::straight([0.0, 0.0, 0.0], 0.0, 2.5, 20.0, 0.1).expect("valid default path")
    }

    pub fn samples(&self) -> &[ActorSample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn span(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }

    /// Linearly interpolated position and heading at time `t`, clamped to
    /// the sampled interval. Heading interpolates along the shorter arc.
    pub fn at(&self, t: f64) -> ([f64; 3], f64) {
        let first = &self.samples[0];
        let last = &self.samples[self.samples.len() - 1];
        if t <= first.t {
            return (first.position, first.heading);
        }
        if t >= last.t {
            return (last.position, last.heading);
        }
        let step = (last.t - first.t) / (self.samples.len() - 1) as f64;
        let mut i = ((t - first.t) / step).floor() as usize;
        i = i.min(self.samples.len() - 2);
        while i > 0 && self.samples[i].t > t {
            i -= 1;
        }
        while i + 2 < self.samples.len() && self.samples[i + 1].t < t {
            i += 1;
        }
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let u = (t - a.t) / (b.t - a.t);
        let pos = [
            a.position[0] + u * (b.position[0] - a.position[0]),
            a.position[1] + u * (b.position[1] - a.position[1]),
            a.position[2] + u * (b.position[2] - a.position[2]),
        ];
        let dh = wrap_degrees(b.heading - a.heading);
        (pos, a.heading + u * dh)
    }
}

/// Wraps an angle into (-180, 180].
pub fn wrap_degrees(a: f64) -> f64 {
    let mut w = a % 360.0;
    if w > 180.0 {
        w -= 360.0;
    } else if w <= -180.0 {
        w += 360.0;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub t: f64,
    pub position: [f64; 3],
    /// Degrees counterclockwise from +x.
    pub pan: f64,
    /// Degrees above the horizon; negative looks down.
    pub tilt: f64,
}

impl CameraPose {
    /// Unit vector of the optical axis.
    pub fn axis(&self) -> [f64; 3] {
        let (sp, cp) = self.pan.to_radians().sin_cos();
        let (st, ct) = self.tilt.to_radians().sin_cos();
        [ct * cp, ct * sp, st]
    }

    /// Angle in degrees between the optical axis and the ray to `target`.
    pub fn look_at_error(&self, target: [f64; 3]) -> f64 {
        let d = sub(target, self.position);
        let n = norm(d);
        if n == 0.0 {
            return 0.0;
        }
        let a = self.axis();
        let cross = [
            a[1] * d[2] - a[2] * d[1],
            a[2] * d[0] - a[0] * d[2],
            a[0] * d[1] - a[1] * d[0],
        ];
        let dot = a[0] * d[0] + a[1] * d[1] + a[2] * d[2];
        norm(cross).atan2(dot).to_degrees()
    }
}

/// Sign conventions for the rate parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicsConfig {
    /// `rho_dot > 0` shrinks the distance.
    pub rho_dot_toward_actor: bool,
    /// `v_z > 0` descends.
    pub v_z_positive_down: bool,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        KinematicsConfig {
            rho_dot_toward_actor: true,
            v_z_positive_down: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<CameraPose>,
    /// Actor resampled at the pose times.
    pub actor: ActorPath,
    pub shot: ShotParameters,
    pub duration: f64,
    pub dt: f64,
    /// Height left the `[0, rho]` band at some step and was clamped.
    pub degenerate_geometry: bool,
}

/// Integrates the shot with explicit Euler steps of `dt` while following
/// the actor. Poses are emitted at `actor.start() + k * dt` for every `k`
/// with `k * dt <= duration`.
pub fn simulate_trajectory(shot: &ShotParameters, actor: &ActorPath, duration: f64, dt: f64) -> Result<Trajectory> {
    simulate_trajectory_with(shot, actor, duration, dt, &KinematicsConfig::default())
}

pub fn simulate_trajectory_with(
    shot: &ShotParameters,
    actor: &ActorPath,
    duration: f64,
    dt: f64,
    config: &KinematicsConfig,
) -> Result<Trajectory> {
    shot.validate()?;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::invalid(format!("duration must be non-negative, got {duration}")));
    }
    if duration > actor.span() + 1e-9 {
        return Err(Error::invalid(format!(
            "duration {duration} s exceeds actor path span {} s",
            actor.span()
        )));
    }
    let steps = (duration / dt + 1e-9).floor() as usize;
    if steps == 0 {
        return Err(Error::invalid("duration shorter than one time step"));
    }
    let toward = if config.rho_dot_toward_actor { 1.0 } else { -1.0 };
    let down = if config.v_z_positive_down { 1.0 } else { -1.0 };

    let mut rho = shot.rho;
    let mut theta = shot.theta;
    let mut height = shot.rho * shot.phi.to_radians().sin();
    let mut degenerate = false;

    let mut poses = Vec::with_capacity(steps + 1);
    let mut actor_samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = actor.start() + k as f64 * dt;
        if rho <= 0.0 {
            return Err(Error::CollapsedDistance { t, rho });
        }
        if height < 0.0 || height > rho {
            degenerate = true;
            height = height.clamp(0.0, rho);
        }
        let phi = (height / rho).clamp(0.0, 1.0).asin();
        let (actor_pos, heading) = actor.at(t);
        let horizontal = rho * phi.cos();
        let (sa, ca) = (heading + theta).to_radians().sin_cos();
        let cam = [
            actor_pos[0] + horizontal * ca,
            actor_pos[1] + horizontal * sa,
            actor_pos[2] + height,
        ];
        let (pan, tilt) = look_at(cam, actor_pos);
        poses.push(CameraPose {
            t,
            position: cam,
            pan,
            tilt,
        });
        actor_samples.push(ActorSample {
            t,
            position: actor_pos,
            heading,
        });

        rho -= toward * shot.rho_dot * dt;
        theta += shot.theta_dot * dt;
        height += -down * shot.v_z * dt;
    }

    Ok(Trajectory {
        poses,
        actor: ActorPath::new(actor_samples)?,
        shot: *shot,
        duration,
        dt,
        degenerate_geometry: degenerate,
    })
}

/// Pan and tilt (degrees) aiming from `from` to `to`.
pub fn look_at(from: [f64; 3], to: [f64; 3]) -> (f64, f64) {
    let d = sub(to, from);
    let pan = d[1].atan2(d[0]).to_degrees();
    let tilt = d[2].atan2(d[0].hypot(d[1])).to_degrees();
    (pan, tilt)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// One line of the trajectory export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub cam: [f64; 3],
    pub pan: f64,
    pub tilt: f64,
    pub actor: [f64; 3],
}

/// One line of an actor path file. `heading` is optional; when absent it is
/// derived from the direction of motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorRecord {
    pub t: f64,
    pub actor: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

impl Trajectory {
    pub fn records(&self) -> Vec<TrajectoryRecord> {
        self.poses
            .iter()
            .zip(self.actor.samples())
            .map(|(p, a)| TrajectoryRecord {
                t: p.t,
                cam: p.position,
                pan: p.pan,
                tilt: p.tilt,
                actor: a.position,
            })
            .collect()
    }

    /// Line-delimited JSON export, one record per pose.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Single JSON document shared by the CLI and the service.
    pub fn to_document(&self) -> TrajectoryDocument {
        TrajectoryDocument {
            shot: self.shot,
            duration: self.duration,
            dt: self.dt,
            degenerate_geometry: self.degenerate_geometry,
            samples: self.records(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDocument {
    pub shot: ShotParameters,
    pub duration: f64,
    pub dt: f64,
    pub degenerate_geometry: bool,
    pub samples: Vec<TrajectoryRecord>,
}

impl ActorPath {
    pub fn from_records(records: &[ActorRecord]) -> Result<Self> {
        let mut samples = Vec::with_capacity(records.len());
        let mut last_heading = 0.0;
        for (i, r) in records.iter().enumerate() {
            let heading = match r.heading {
                Some(h) => h,
                None => {
                    let (a, b) = if i + 1 < records.len() {
                        (&records[i], &records[i + 1])
                    } else if i > 0 {
                        (&records[i - 1], &records[i])
                    } else {
                        (&records[i], &records[i])
                    };
                    let (dx, dy) = (b.actor[0] - a.actor[0], b.actor[1] - a.actor[1]);
                    if dx == 0.0 && dy == 0.0 {
                        last_heading
                    } else {
                        dy.atan2(dx).to_degrees()
                    }
                }
            };
            last_heading = heading;
            samples.push(ActorSample {
                t: r.t,
                position: r.actor,
                heading,
            });
        }
        ActorPath::new(samples)
    }

    pub fn to_records(&self) -> Vec<ActorRecord> {
        self.samples
            .iter()
            .map(|s| ActorRecord {
                t: s.t,
                actor: s.position,
                heading: Some(s.heading),
            })
            .collect()
    }

    /// Parses line-delimited actor records; blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ActorRecord>, _>>()?;
        ActorPath::from_records(&records)
    }
}
