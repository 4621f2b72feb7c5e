//! File-based pipeline stages.
//!
//! Every stage is a pure transform from input files to output files; the
//! functions here do the work and the CLI only parses arguments. Output is
//! deterministic for a fixed configuration and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::crowd::{default_rater, extended_rater, simulate_comparison, simulate_same_different, LatentRater};
use crate::models::{
    complete_descriptors, d2p, encode_features, expression_sweep, fit_gaussian_prior, log_grid, r_squared_per_output,
    train_linear_cv, ArtifactMetadata, Direction, GeneratedShot, LassoOptions, LinearModel, ModelArtifact, FEATURE_DIM,
};
use crate::perceptual::{analyze_responses, sample_variations_with, ResponseRecord, SampledClip, SweepRow, UnitTable};
use crate::ranking::{rate_dataset, ComparisonRecord, RatingConfig, RatingTable};
use crate::shot::{
    apply_variation, find_preset, preset_catalog, simulate_trajectory, ActorPath, ClampRanges, ShotParam, ShotParameters,
    ShotType, TrajectoryDocument,
};
use crate::space::{
    cluster_to_target, correlation_matrix, embed_descriptors, fit_vad_basis, representative_axes, ApOptions,
    DistanceTransform, EmotionBasis, Embedding, PreferenceSweep, ScoreMatrix,
};
use crate::{Error, Result};

/// Output file names of each stage.
pub mod files {
    pub const WS1_CLIPS: &str = "ws1_clips.jsonl";
    pub const WS1_RESPONSES: &str = "ws1_responses.jsonl";
    pub const UNITS: &str = "units.json";
    pub const SWEEP_CSV: &str = "ws1_sweep.csv";
    pub const WS2_CLIPS: &str = "ws2_clips.jsonl";
    pub const WS2_COMPARISONS: &str = "ws2_comparisons.jsonl";
    pub const WS2_RATINGS: &str = "ws2_ratings.json";
    pub const WS2_SCORES: &str = "ws2_scores.csv";
    pub const CLUSTERS: &str = "clusters.json";
    pub const CORRELATION_CSV: &str = "correlation.csv";
    pub const WS3_CLIPS: &str = "ws3_clips.jsonl";
    pub const WS3_COMPARISONS: &str = "ws3_comparisons.jsonl";
    pub const WS3_RATINGS: &str = "ws3_ratings.json";
    pub const WS3_SCORES: &str = "ws3_scores.csv";
    pub const EMBEDDING: &str = "embedding.json";
    pub const EMBEDDING_CSV: &str = "embedding.csv";
    pub const BASIS: &str = "basis.json";
    pub const D2P: &str = "d2p.json";
    pub const P2D: &str = "p2d.json";
    pub const SPLIT: &str = "split.json";
    pub const COEFFICIENTS_CSV: &str = "coefficients.csv";
    pub const EVAL: &str = "eval.json";
    pub const EVAL_CSV: &str = "eval.csv";
    pub const GENERATED: &str = "generated.json";
    pub const SWEEPS: &str = "sweeps.json";
    pub const SWEEPS_CSV: &str = "sweeps.csv";
    pub const TRAJECTORY: &str = "trajectory.json";
}

/// Pipeline settings, read from a flat `key = value` text file.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub ws1_clips: usize,
    pub ws2_clips: usize,
    pub ws3_clips: usize,
    pub comparisons_per_pair: usize,
    pub alpha: f64,
    pub rating: RatingConfig,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    pub cv_folds: usize,
    pub cluster_target: usize,
    pub distance: DistanceTransform,
    pub embed_dim: usize,
    pub test_fraction: f64,
    pub sweep_points: usize,
    pub sim_duration: f64,
    pub sim_dt: f64,
    /// Empty means the built-in rater for the survey mode.
    pub rater_path: String,
    /// Empty means the default actor run.
    pub actor_path: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            ws1_clips: 84,
            ws2_clips: 50,
            ws3_clips: 200,
            comparisons_per_pair: 30,
            alpha: 0.05,
            rating: RatingConfig::default(),
            lambda_min: 1e-4,
            lambda_max: 1.0,
            lambda_count: 13,
            cv_folds: 5,
            cluster_target: 7,
            distance: DistanceTransform::OneMinus,
            embed_dim: 3,
            test_fraction: 0.2,
            sweep_points: 6,
            sim_duration: 15.0,
            sim_dt: 0.1,
            rater_path: String::new(),
            actor_path: String::new(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("config key `{key}`: cannot parse `{value}`: {e}")))
}

fn distance_name(d: DistanceTransform) -> &'static str {
    match d {
        DistanceTransform::OneMinus => "one_minus",
        DistanceTransform::SqrtTwoOneMinus => "sqrt_two_one_minus",
        DistanceTransform::HalfOneMinus => "half_one_minus",
    }
}

impl PipelineConfig {
    /// Parses `key = value` lines. `#` starts a comment; unknown keys are
    /// rejected so typos do not pass silently.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => c.seed = parse_value(key, value)?,
                "ws1_clips" => c.ws1_clips = parse_value(key, value)?,
                "ws2_clips" => c.ws2_clips = parse_value(key, value)?,
                "ws3_clips" => c.ws3_clips = parse_value(key, value)?,
                "comparisons_per_pair" => c.comparisons_per_pair = parse_value(key, value)?,
                "alpha" => c.alpha = parse_value(key, value)?,
                "mu0" => c.rating.mu0 = parse_value(key, value)?,
                "sigma0" => c.rating.sigma0 = parse_value(key, value)?,
                "beta" => c.rating.beta = parse_value(key, value)?,
                "epsilon" => c.rating.epsilon = parse_value(key, value)?,
                "tau" => c.rating.tau = parse_value(key, value)?,
                "lambda_min" => c.lambda_min = parse_value(key, value)?,
                "lambda_max" => c.lambda_max = parse_value(key, value)?,
                "lambda_count" => c.lambda_count = parse_value(key, value)?,
                "cv_folds" => c.cv_folds = parse_value(key, value)?,
                "cluster_target" => c.cluster_target = parse_value(key, value)?,
                "distance" => {
                    c.distance = match value {
                        "one_minus" => DistanceTransform::OneMinus,
                        "sqrt_two_one_minus" => DistanceTransform::SqrtTwoOneMinus,
                        "half_one_minus" => DistanceTransform::HalfOneMinus,
                        _ => {
                            return Err(Error::Unknown {
                                kind: "distance transform",
                                name: value.to_string(),
                            })
                        }
                    }
                }
                "embed_dim" => c.embed_dim = parse_value(key, value)?,
                "test_fraction" => c.test_fraction = parse_value(key, value)?,
                "sweep_points" => c.sweep_points = parse_value(key, value)?,
                "sim_duration" => c.sim_duration = parse_value(key, value)?,
                "sim_dt" => c.sim_dt = parse_value(key, value)?,
                "rater_path" => c.rater_path = value.to_string(),
                "actor_path" => c.actor_path = value.to_string(),
                _ => {
                    return Err(Error::Unknown {
                        kind: "config key",
                        name: key.to_string(),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    /// The config as a document [`PipelineConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.rating;
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "ws1_clips = {}", self.ws1_clips);
        let _ = writeln!(s, "ws2_clips = {}", self.ws2_clips);
        let _ = writeln!(s, "ws3_clips = {}", self.ws3_clips);
        let _ = writeln!(s, "comparisons_per_pair = {}", self.comparisons_per_pair);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "mu0 = {}", r.mu0);
        let _ = writeln!(s, "sigma0 = {}", r.sigma0);
        let _ = writeln!(s, "beta = {}", r.beta);
        let _ = writeln!(s, "epsilon = {}", r.epsilon);
        let _ = writeln!(s, "tau = {}", r.tau);
        let _ = writeln!(s, "lambda_min = {}", self.lambda_min);
        let _ = writeln!(s, "lambda_max = {}", self.lambda_max);
        let _ = writeln!(s, "lambda_count = {}", self.lambda_count);
        let _ = writeln!(s, "cv_folds = {}", self.cv_folds);
        let _ = writeln!(s, "cluster_target = {}", self.cluster_target);
        let _ = writeln!(s, "distance = {}", distance_name(self.distance));
        let _ = writeln!(s, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(s, "test_fraction = {}", self.test_fraction);
        let _ = writeln!(s, "sweep_points = {}", self.sweep_points);
        let _ = writeln!(s, "sim_duration = {}", self.sim_duration);
        let _ = writeln!(s, "sim_dt = {}", self.sim_dt);
        let _ = writeln!(s, "rater_path = {}", self.rater_path);
        let _ = writeln!(s, "actor_path = {}", self.actor_path);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("ws1_clips", self.ws1_clips),
            ("ws2_clips", self.ws2_clips),
            ("ws3_clips", self.ws3_clips),
            ("comparisons_per_pair", self.comparisons_per_pair),
            ("lambda_count", self.lambda_count),
            ("cluster_target", self.cluster_target),
            ("embed_dim", self.embed_dim),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        self.rating.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if !(self.lambda_min > 0.0 && self.lambda_max >= self.lambda_min && self.lambda_max.is_finite()) {
            return Err(Error::invalid("lambda range must satisfy 0 < lambda_min <= lambda_max"));
        }
        if self.cv_folds < 2 {
            return Err(Error::invalid("cv_folds must be at least 2"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("test_fraction must lie in (0, 1)"));
        }
        if self.sweep_points < 2 {
            return Err(Error::invalid("sweep_points must be at least 2"));
        }
        if !(self.sim_dt > 0.0 && self.sim_dt.is_finite() && self.sim_duration > 0.0 && self.sim_duration.is_finite()) {
            return Err(Error::invalid("sim_dt and sim_duration must be positive"));
        }
        Ok(())
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        log_grid(self.lambda_min, self.lambda_max, self.lambda_count)
    }
}

/// Independent sub-seed for one stage or item.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_GEN: u64 = 1;
const STREAM_WS1: u64 = 2;
const STREAM_PAIRS: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_CV: u64 = 5;
const STREAM_EMBED: u64 = 6;

// ---------------------------------------------------------------- io helpers

fn ctx<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| e.in_file(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    ctx(fs::read_to_string(path).map_err(Error::from), path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ctx(fs::create_dir_all(dir).map_err(Error::from), dir)?;
    }
    ctx(fs::write(path, text).map_err(Error::from), path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    ctx(serde_json::from_str(&text).map_err(Error::from), path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)).in_file(path))
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn write_csv_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(r)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_comparisons(path: &Path) -> Result<Vec<ComparisonRecord>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            ComparisonRecord::parse_line(l).map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)).in_file(path))
        })
        .collect()
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let text = read_text(path)?;
    ctx(ScoreMatrix::read_csv(text.as_bytes()), path)
}

pub fn write_scores(path: &Path, scores: &ScoreMatrix) -> Result<()> {
    let mut buf = Vec::new();
    scores.write_csv(&mut buf)?;
    write_text(path, &String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_units(path: &Path) -> Result<UnitTable> {
    read_json(path)
}

pub fn read_model(path: &Path) -> Result<ModelArtifact> {
    let text = read_text(path)?;
    ctx(ModelArtifact::from_json(&text), path)
}

/// Rater from the configured file, or the built-in one for the mode.
pub fn load_rater(config: &PipelineConfig, mode: SurveyMode) -> Result<LatentRater> {
    if config.rater_path.is_empty() {
        Ok(match mode {
            SurveyMode::Ws2 => extended_rater(config.seed),
            SurveyMode::Ws1 | SurveyMode::Ws3 => default_rater(config.seed),
        })
    } else {
        let path = Path::new(&config.rater_path);
        let text = read_text(path)?;
        ctx(LatentRater::from_json(&text), path)
    }
}

pub fn load_actor(config: &PipelineConfig) -> Result<ActorPath> {
    if config.actor_path.is_empty() {
        Ok(ActorPath::default_run())
    } else {
        let path = Path::new(&config.actor_path);
        let text = read_text(path)?;
        ctx(ActorPath::from_jsonl(&text), path)
    }
}

// ---------------------------------------------------------------- datasets

/// The parameter offset a perceptual-study clip probes. Controls show the
/// preset against itself and carry no parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub param: Option<ShotParam>,
    pub delta: f64,
}

/// One line of a clips file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub preset: String,
    pub params: ShotParameters,
    pub shot_type: ShotType,
    /// Signed unit multiple per parameter, in shot-vector order.
    pub multiples: [f64; 6],
    pub extrapolated: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Probe>,
}

impl ClipRecord {
    fn from_sampled(c: SampledClip, seed: u64) -> Self {
        ClipRecord {
            clip_id: c.clip_id,
            preset: c.preset,
            params: c.params,
            shot_type: c.shot_type,
            multiples: c.multiples,
            extrapolated: c.extrapolated,
            seed,
            probe: None,
        }
    }

    pub fn to_sampled(&self) -> SampledClip {
        SampledClip {
            clip_id: self.clip_id.clone(),
            preset: self.preset.clone(),
            params: self.params,
            shot_type: self.shot_type,
            multiples: self.multiples,
            extrapolated: self.extrapolated,
        }
    }
}

/// `count` clips spread evenly over the presets in catalog order, each
/// varied in random unit multiples.
pub fn generate_clips(units: &UnitTable, count: usize, seed: u64) -> Result<Vec<ClipRecord>> {
    if count == 0 {
        return Err(Error::invalid("clip count must be at least 1"));
    }
    let catalog = preset_catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_GEN));
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let preset = &catalog[i % catalog.len()];
        let mut clip = sample_variations_with(preset, units, 1, &mut rng, i)?;
        out.push(ClipRecord::from_sampled(clip.remove(0), seed));
    }
    Ok(out)
}

/// Sweep step on one side of a (preset, parameter) pair: half the pilot unit.
pub fn ws1_step(pilot: &UnitTable, preset: &str, param: ShotParam, positive: bool) -> Result<f64> {
    pilot
        .magnitude(preset, param, positive)
        .map(|(m, _)| m / 2.0)
        .ok_or_else(|| Error::MissingUnit {
            preset: preset.to_string(),
            param,
        })
}

/// Every (preset, variable parameter) pair in catalog order.
pub fn ws1_pairs() -> Vec<(String, ShotParam)> {
    preset_catalog()
        .iter()
        .flat_map(|p| p.variable_params().map(move |q| (p.name.clone(), q)).collect::<Vec<_>>())
        .collect()
}

/// Perceptual-study clips: one control per preset, then `budget` variations
/// shared across the (preset, parameter) pairs. Each pair alternates
/// `+s, -s, +2s, -2s, ...` with `s` half the pilot unit on that side;
/// offsets the clamp ranges would cut are skipped.
pub fn ws1_design(pilot: &UnitTable, budget: usize, seed: u64) -> Result<Vec<ClipRecord>> {
    if budget == 0 {
        return Err(Error::invalid("clip count must be at least 1"));
    }
    let pairs = ws1_pairs();
    let mut out = Vec::new();
    let mut next_id = 0usize;
    let mut push = |out: &mut Vec<ClipRecord>, preset: &str, probe: Probe, multiple: f64| -> Result<()> {
        let p = find_preset(preset)?;
        let mut multiples = [0.0; 6];
        let mut deltas = Vec::new();
        if let Some(param) = probe.param {
            multiples[param.index()] = multiple;
            deltas.push((param, probe.delta));
        }
        out.push(ClipRecord {
            clip_id: format!("ws1-{next_id:04}"),
            preset: p.name.clone(),
            params: apply_variation(&p, &deltas)?,
            shot_type: p.shot_type,
            multiples,
            extrapolated: false,
            seed,
            probe: Some(probe),
        });
        next_id += 1;
        Ok(())
    };
    for preset in preset_catalog() {
        push(&mut out, &preset.name, Probe { param: None, delta: 0.0 }, 0.0)?;
    }
    let base = budget / pairs.len();
    let extra = budget % pairs.len();
    for (i, (name, param)) in pairs.iter().enumerate() {
        let want = base + usize::from(i < extra);
        let preset = find_preset(name)?;
        let steps = [ws1_step(pilot, name, *param, true)?, ws1_step(pilot, name, *param, false)?];
        let units = [steps[0] * 2.0, steps[1] * 2.0];
        let mut made = 0;
        let mut k = 1usize;
        // both sides exhausted long before this many steps
        while made < want && k <= 1000 {
            for (side, sign) in [(0, 1.0), (1, -1.0)] {
                if made == want {
                    break;
                }
                let delta = sign * k as f64 * steps[side];
                let varied = apply_variation(&preset, &[(*param, delta)])?;
                if ((varied.get(*param) - preset.params.get(*param)) - delta).abs() > 1e-9 {
                    continue;
                }
                push(
                    &mut out,
                    name,
                    Probe {
                        param: Some(*param),
                        delta,
                    },
                    delta / units[side],
                )?;
                made += 1;
            }
            k += 1;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- surveys

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurveyMode {
    Ws1,
    Ws2,
    Ws3,
}

impl FromStr for SurveyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ws1" => Ok(SurveyMode::Ws1),
            "ws2" => Ok(SurveyMode::Ws2),
            "ws3" => Ok(SurveyMode::Ws3),
            _ => Err(Error::Unknown {
                kind: "survey mode",
                name: s.to_string(),
            }),
        }
    }
}

/// Same/different judgments, `responses` per clip.
pub fn survey_ws1(clips: &[ClipRecord], rater: &LatentRater, responses: usize, seed: u64) -> Result<Vec<ResponseRecord>> {
    if clips.is_empty() {
        return Err(Error::Empty("no clips to survey".into()));
    }
    let mut out = Vec::with_capacity(clips.len() * responses);
    for (i, clip) in clips.iter().enumerate() {
        let probe = clip
            .probe
            .ok_or_else(|| Error::invalid(format!("clip {} has no probe; ws1 needs sweep clips", clip.clip_id)))?;
        let preset = find_preset(&clip.preset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, STREAM_WS1), i as u64));
        for _ in 0..responses {
            out.push(ResponseRecord {
                clip_id: clip.clip_id.clone(),
                preset: preset.name.clone(),
                param: probe.param,
                delta: probe.delta,
                different: simulate_same_different(&preset, &clip.params, rater, &mut rng)?,
            });
        }
    }
    Ok(out)
}

/// "Which clip is more X?" judgments on random distinct pairs, for every
/// rater descriptor. Each descriptor gets `per_clip · n / 2` comparisons
/// (rounded up), so every clip takes part in about `per_clip` of them.
pub fn survey_pairs(
    clips: &[ClipRecord],
    rater: &LatentRater,
    per_clip: usize,
    seed: u64,
) -> Result<Vec<ComparisonRecord>> {
    if clips.len() < 2 {
        return Err(Error::Empty("pairwise surveys need at least two clips".into()));
    }
    rater.validate()?;
    let sampled: Vec<SampledClip> = clips.iter().map(ClipRecord::to_sampled).collect();
    let n = sampled.len();
    let per_descriptor = (per_clip * n).div_ceil(2);
    let mut out = Vec::with_capacity(per_descriptor * rater.descriptors.len());
    for d in 0..rater.descriptors.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, STREAM_PAIRS), d as u64));
        for _ in 0..per_descriptor {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            out.push(simulate_comparison(&sampled[a], &sampled[b], d, rater, &mut rng)?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- rating

/// Descriptors in order of first appearance.
pub fn descriptor_order(comparisons: &[ComparisonRecord]) -> Vec<String> {
    let mut seen = Vec::new();
    for c in comparisons {
        if !seen.contains(&c.descriptor) {
            seen.push(c.descriptor.clone());
        }
    }
    seen
}

/// Ratings plus the clip × descriptor matrix of rating means.
pub fn rate_comparisons(comparisons: &[ComparisonRecord], config: &RatingConfig) -> Result<(RatingTable, ScoreMatrix)> {
    if comparisons.is_empty() {
        return Err(Error::Empty("no comparisons to rate".into()));
    }
    let table = rate_dataset(comparisons, config)?;
    let scores = ScoreMatrix::from_ratings(&table, &descriptor_order(comparisons))?;
    Ok((table, scores))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let header: Vec<String> = ["preset", "param", "clip_id", "delta", "fraction_different", "p_value", "significant"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.preset.clone(),
                r.param.to_string(),
                r.clip_id.clone(),
                r.delta.to_string(),
                r.fraction_different.to_string(),
                r.p_value.to_string(),
                r.significant.to_string(),
            ]
        })
        .collect();
    write_csv_rows(path, &header, &rows)
}

/// Units recovered from same/different responses.
pub fn rate_responses(records: &[ResponseRecord], alpha: f64) -> Result<(UnitTable, Vec<SweepRow>)> {
    analyze_responses(records, alpha)
}

// ---------------------------------------------------------------- clustering

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorCluster {
    pub exemplar: String,
    pub members: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub descriptors: Vec<String>,
    pub clusters: Vec<DescriptorCluster>,
    pub preference: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterReport {
    pub fn exemplars(&self) -> Vec<String> {
        self.clusters.iter().map(|c| c.exemplar.clone()).collect()
    }
}

/// Groups descriptors by correlation into exactly `target` clusters.
pub fn cluster_descriptors(scores: &ScoreMatrix, target: usize) -> Result<(ClusterReport, crate::space::CorrelationMatrix)> {
    let corr = correlation_matrix(scores)?;
    let c = cluster_to_target(&corr.values, target, &ApOptions::default(), &PreferenceSweep::default())?;
    let clusters = c
        .exemplars
        .iter()
        .enumerate()
        .map(|(ci, &e)| DescriptorCluster {
            exemplar: corr.labels[e].clone(),
            members: c.members(ci).into_iter().map(|m| corr.labels[m].clone()).collect(),
        })
        .collect();
    Ok((
        ClusterReport {
            descriptors: corr.labels.clone(),
            clusters,
            preference: c.preference,
            iterations: c.iterations,
            converged: c.converged,
        },
        corr,
    ))
}

pub fn write_matrix_csv(path: &Path, labels: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut header = vec!["descriptor".to_string()];
    header.extend(labels.iter().cloned());
    let rows: Vec<Vec<String>> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut r = vec![l.clone()];
            r.extend((0..values.ncols()).map(|j| values[(i, j)].to_string()));
            r
        })
        .collect();
    write_csv_rows(path, &header, &rows)
}

// ---------------------------------------------------------------- embedding

/// Embeds the descriptors (and their mirrors); fits the emotion basis when
/// every representative descriptor is present in a three-dimensional
/// embedding.
pub fn embed_scores(
    scores: &ScoreMatrix,
    transform: DistanceTransform,
    dim: usize,
    seed: u64,
) -> Result<(Embedding, Option<EmotionBasis>)> {
    let e = embed_descriptors(scores, transform, dim, derive_seed(seed, STREAM_EMBED))?;
    let axes = representative_axes();
    let has_all = axes.iter().all(|a| scores.descriptors.contains(&a.descriptor));
    let basis = if dim == 3 && has_all {
        Some(fit_vad_basis(&e, &axes)?)
    } else {
        None
    };
    Ok((e, basis))
}

pub fn write_embedding_csv(path: &Path, e: &Embedding) -> Result<()> {
    let mut header = vec!["descriptor".to_string()];
    header.extend((0..e.dim()).map(|k| format!("x{k}")));
    let rows: Vec<Vec<String>> = e
        .labels
        .iter()
        .zip(&e.coords)
        .map(|(l, c)| {
            let mut r = vec![l.clone()];
            r.extend(c.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    write_csv_rows(path, &header, &rows)
}

// ---------------------------------------------------------------- training

/// Held-out split by clip id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle; the first `round(n · fraction)` clips (at least one)
/// are held out.
pub fn holdout_split(clips: &[String], fraction: f64, seed: u64) -> Result<Split> {
    if clips.len() < 2 {
        return Err(Error::invalid("a held-out split needs at least two clips"));
    }
    let mut order: Vec<String> = clips.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT)));
    let n_test = ((clips.len() as f64 * fraction).round() as usize).clamp(1, clips.len() - 1);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort();
    train.sort();
    Ok(Split { seed, train, test })
}

/// Feature rows (one-hot included) and descriptor rows for the given clips.
pub fn design_matrices(
    clips: &[ClipRecord],
    scores: &ScoreMatrix,
    ids: &[String],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let by_id: BTreeMap<&str, &ClipRecord> = clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let row_of: BTreeMap<&str, usize> = scores.clips.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let k = scores.descriptors.len();
    let mut feats = DMatrix::zeros(ids.len(), FEATURE_DIM);
    let mut desc = DMatrix::zeros(ids.len(), k);
    for (r, id) in ids.iter().enumerate() {
        let clip = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::invalid(format!("scores mention clip {id} missing from the clips file")))?;
        let row = *row_of
            .get(id.as_str())
            .ok_or_else(|| Error::invalid(format!("clip {id} has no scores")))?;
        let f = encode_features(&clip.params, clip.shot_type);
        for j in 0..FEATURE_DIM {
            feats[(r, j)] = f[j];
        }
        for j in 0..k {
            desc[(r, j)] = scores.values[(row, j)];
        }
    }
    Ok((feats, desc))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModels {
    pub d2p: ModelArtifact,
    pub p2d: ModelArtifact,
    pub split: Split,
}

/// Cross-validated D2P and P2D models on the training part of a held-out
/// split; the descriptor prior is fitted on the same rows.
pub fn train_models(clips: &[ClipRecord], scores: &ScoreMatrix, config: &PipelineConfig) -> Result<TrainedModels> {
    let split = holdout_split(&scores.clips, config.test_fraction, config.seed)?;
    let (feats, desc) = design_matrices(clips, scores, &split.train)?;
    let prior = fit_gaussian_prior(&desc)?;
    let opts = LassoOptions::default();
    let grid = config.lambda_grid();
    let cv_seed = derive_seed(config.seed, STREAM_CV);
    let (d2p_model, d2p_cv) = train_linear_cv(Direction::D2P, &desc, &feats, &grid, config.cv_folds, cv_seed, &opts)?;
    let (p2d_model, p2d_cv) = train_linear_cv(Direction::P2D, &feats, &desc, &grid, config.cv_folds, cv_seed, &opts)?;
    let meta = |cv_scores| ArtifactMetadata {
        seed: config.seed,
        cv_scores,
        descriptors: scores.descriptors.clone(),
    };
    Ok(TrainedModels {
        d2p: ModelArtifact::new(&d2p_model, &prior, meta(d2p_cv)),
        p2d: ModelArtifact::new(&p2d_model, &prior, meta(p2d_cv)),
        split,
    })
}

const FEATURE_LABELS: [&str; FEATURE_DIM] = [
    "rho", "rho_dot", "theta", "theta_dot", "phi", "v_z", "follow", "orbit", "dronie", "overhead", "flyby",
];

/// Normalized coefficients of both models in long form.
pub fn write_coefficients_csv(path: &Path, d2p: &ModelArtifact, p2d: &ModelArtifact) -> Result<()> {
    let header: Vec<String> = ["model", "output", "input", "coefficient"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (a, inputs, outputs) in [
        (d2p, d2p.metadata.descriptors.clone(), FEATURE_LABELS.map(String::from).to_vec()),
        (p2d, FEATURE_LABELS.map(String::from).to_vec(), p2d.metadata.descriptors.clone()),
    ] {
        for (o, row) in a.w.iter().enumerate() {
            for (i, w) in row.iter().enumerate() {
                rows.push(vec![
                    a.direction.name().to_string(),
                    outputs.get(o).cloned().unwrap_or_else(|| format!("y{o}")),
                    inputs.get(i).cloned().unwrap_or_else(|| format!("x{i}")),
                    w.to_string(),
                ]);
            }
        }
    }
    write_csv_rows(path, &header, &rows)
}

// ---------------------------------------------------------------- evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub per_output: Vec<(String, f64)>,
    pub overall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_clips: usize,
    /// Descriptors predicted from shots.
    pub p2d: ModelScore,
    /// Shot parameters predicted from descriptors; the one-hot block is
    /// scored by decoded-type accuracy instead.
    pub d2p: ModelScore,
    pub d2p_type_accuracy: f64,
}

fn score(pred: &DMatrix<f64>, actual: &DMatrix<f64>, labels: &[String]) -> Result<ModelScore> {
    let r2 = r_squared_per_output(pred, actual)?;
    let overall = r2.iter().sum::<f64>() / r2.len() as f64;
    Ok(ModelScore {
        per_output: labels.iter().cloned().zip(r2).collect(),
        overall,
    })
}

/// Held-out R² of both models.
pub fn evaluate(d2p_a: &ModelArtifact, p2d_a: &ModelArtifact, clips: &[ClipRecord], scores: &ScoreMatrix, split: &Split) -> Result<EvalReport> {
    let (feats, desc) = design_matrices(clips, scores, &split.test)?;
    let p2d_m = p2d_a.model()?;
    let d2p_m = d2p_a.model()?;
    let p2d_pred = p2d_m.predict_rows(&feats)?;
    let p2d_score = score(&p2d_pred, &desc, &scores.descriptors)?;

    let n = split.test.len();
    let mut shot_pred = DMatrix::zeros(n, 6);
    let mut correct = 0usize;
    for r in 0..n {
        let d: Vec<f64> = desc.row(r).iter().copied().collect();
        let g = d2p(&d2p_m, &d, &ClampRanges::default())?;
        let arr = g.shot.to_array();
        for j in 0..6 {
            shot_pred[(r, j)] = arr[j];
        }
        let truth = (0..ShotType::ALL.len())
            .find(|&t| feats[(r, 6 + t)] == 1.0)
            .and_then(ShotType::from_index)
            .expect("encoded one-hot");
        correct += usize::from(g.shot_type == truth);
    }
    let shot_actual = feats.columns(0, 6).into_owned();
    let labels: Vec<String> = FEATURE_LABELS[..6].iter().map(|s| s.to_string()).collect();
    let d2p_score = score_skipping_constant(&shot_pred, &shot_actual, &labels)?;
    Ok(EvalReport {
        test_clips: n,
        p2d: p2d_score,
        d2p: d2p_score,
        d2p_type_accuracy: correct as f64 / n as f64,
    })
}

/// R² per output, leaving out outputs that do not vary in the test set.
fn score_skipping_constant(pred: &DMatrix<f64>, actual: &DMatrix<f64>, labels: &[String]) -> Result<ModelScore> {
    let keep: Vec<usize> = (0..actual.ncols())
        .filter(|&j| {
            let c = actual.column(j);
            c.iter().any(|v| *v != c[0])
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid("no shot parameter varies in the test set"));
    }
    let p = DMatrix::from_fn(pred.nrows(), keep.len(), |i, j| pred[(i, keep[j])]);
    let a = DMatrix::from_fn(actual.nrows(), keep.len(), |i, j| actual[(i, keep[j])]);
    let l: Vec<String> = keep.iter().map(|&j| labels[j].clone()).collect();
    score(&p, &a, &l)
}

impl EvalReport {
    /// Human-readable summary, one line per output.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "held-out clips: {}", self.test_clips);
        let _ = writeln!(s, "P2D R^2");
        for (name, r2) in &self.p2d.per_output {
            let _ = writeln!(s, "  {name:<14} {r2:.4}");
        }
        let _ = writeln!(s, "  {:<14} {:.4}", "overall", self.p2d.overall);
        let _ = writeln!(s, "D2P R^2");
        for (name, r2) in &self.d2p.per_output {
            let _ = writeln!(s, "  {name:<14} {r2:.4}");
        }
        let _ = writeln!(s, "  {:<14} {:.4}", "overall", self.d2p.overall);
        let _ = writeln!(s, "  {:<14} {:.4}", "type accuracy", self.d2p_type_accuracy);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = ["model", "output", "r2"].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (model, sc) in [("P2D", &self.p2d), ("D2P", &self.d2p)] {
            for (name, r2) in &sc.per_output {
                rows.push(vec![model.to_string(), name.clone(), r2.to_string()]);
            }
            rows.push(vec![model.to_string(), "overall".to_string(), sc.overall.to_string()]);
        }
        write_csv_rows(path, &header, &rows)
    }
}

// ---------------------------------------------------------------- generation

/// Parses `name=value` targets against the model's descriptor names.
pub fn parse_targets(names: &[String], specs: &[String]) -> Result<Vec<(usize, f64)>> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for spec in specs {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("target `{spec}` is not name=value")))?;
        let name = name.trim();
        let idx = names.iter().position(|n| n == name).ok_or_else(|| Error::Unknown {
            kind: "descriptor",
            name: name.to_string(),
        })?;
        let value: f64 = parse_value(name, value.trim())?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("target {name}")));
        }
        if out.iter().any(|(i, _)| *i == idx) {
            return Err(Error::invalid(format!("descriptor {name} given twice")));
        }
        out.push((idx, value));
    }
    out.sort_by_key(|p| p.0);
    Ok(out)
}

/// Completes partial targets with the model prior. No targets gives the
/// prior mean.
pub fn complete_targets(model: &ModelArtifact, targets: &[(usize, f64)]) -> Result<Vec<f64>> {
    if targets.is_empty() {
        model.prior.validate()?;
        return Ok(model.prior.mu.clone());
    }
    complete_descriptors(&model.prior, targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub descriptor_names: Vec<String>,
    pub descriptors: Vec<f64>,
    pub shot: ShotParameters,
    pub shot_type: ShotType,
    pub flags: crate::models::ShotFlags,
    /// Missing when the camera would reach the actor within the duration.
    pub trajectory: Option<TrajectoryDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_error: Option<String>,
}

/// Descriptor targets to shot and simulated trajectory.
pub fn generate_shot(model: &ModelArtifact, targets: &[(usize, f64)], actor: &ActorPath, duration: f64, dt: f64) -> Result<GenerateReport> {
    let m = model.model()?;
    let descriptors = complete_targets(model, targets)?;
    let GeneratedShot { shot, shot_type, flags } = d2p(&m, &descriptors, &ClampRanges::default())?;
    let (trajectory, trajectory_error) = match simulate_document(&shot, actor, duration, dt) {
        Ok(doc) => (Some(doc), None),
        Err(e @ Error::CollapsedDistance { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(GenerateReport {
        descriptor_names: model.metadata.descriptors.clone(),
        descriptors,
        shot,
        shot_type,
        flags,
        trajectory,
        trajectory_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub step: usize,
    pub requested: f64,
    pub descriptors: Vec<f64>,
    pub shot: ShotParameters,
    pub shot_type: ShotType,
    pub flags: crate::models::ShotFlags,
}

/// Expression sweeps over μ ± 2σ for every descriptor axis.
pub fn expression_sweeps(model: &ModelArtifact, points: usize) -> Result<Vec<SweepPoint>> {
    let m: LinearModel = model.model()?;
    let mut out = Vec::new();
    for (axis, name) in model.metadata.descriptors.iter().enumerate() {
        for (step, d) in expression_sweep(&model.prior, axis, points)?.into_iter().enumerate() {
            let g = d2p(&m, &d, &ClampRanges::default())?;
            out.push(SweepPoint {
                axis: name.clone(),
                step,
                requested: d[axis],
                descriptors: d,
                shot: g.shot,
                shot_type: g.shot_type,
                flags: g.flags,
            });
        }
    }
    Ok(out)
}

pub fn write_sweeps_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut header: Vec<String> = ["axis", "step", "requested"].iter().map(|s| s.to_string()).collect();
    header.extend(ShotParam::ALL.iter().map(|p| p.name().to_string()));
    header.extend(["shot_type", "clamped"].iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut r = vec![p.axis.clone(), p.step.to_string(), p.requested.to_string()];
            r.extend(p.shot.to_array().iter().map(|v| v.to_string()));
            r.push(p.shot_type.name().to_string());
            r.push(p.flags.clamped.to_string());
            r
        })
        .collect();
    write_csv_rows(path, &header, &rows)
}

// ---------------------------------------------------------------- simulation

/// Trajectory document for a shot; the CLI and the service both serialize
/// this value with `serde_json::to_string`.
pub fn simulate_document(shot: &ShotParameters, actor: &ActorPath, duration: f64, dt: f64) -> Result<TrajectoryDocument> {
    Ok(simulate_trajectory(shot, actor, duration, dt)?.to_document())
}

// ---------------------------------------------------------------- full run

/// Runs every stage in order, writing each artifact into `out`. Used for
/// replay checks; the CLI exposes the stages one by one.
pub fn run_all(config: &PipelineConfig, pilot: &UnitTable, out: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let seed = config.seed;
    let p = |name: &str| out.join(name);
    let mut written = Vec::new();
    let mut note = |path: PathBuf| written.push(path);

    // perceptual units
    let ws1 = ws1_design(pilot, config.ws1_clips, seed)?;
    write_jsonl(&p(files::WS1_CLIPS), &ws1)?;
    note(p(files::WS1_CLIPS));
    let responses = survey_ws1(&ws1, &load_rater(config, SurveyMode::Ws1)?, config.comparisons_per_pair, seed)?;
    write_jsonl(&p(files::WS1_RESPONSES), &responses)?;
    note(p(files::WS1_RESPONSES));
    let (units, rows) = rate_responses(&responses, config.alpha)?;
    write_json(&p(files::UNITS), &units)?;
    write_sweep_csv(&p(files::SWEEP_CSV), &rows)?;
    note(p(files::UNITS));
    note(p(files::SWEEP_CSV));

    // descriptor clustering
    let ws2 = generate_clips(&units, config.ws2_clips, seed)?;
    write_jsonl(&p(files::WS2_CLIPS), &ws2)?;
    note(p(files::WS2_CLIPS));
    let cmp2 = survey_pairs(&ws2, &load_rater(config, SurveyMode::Ws2)?, config.comparisons_per_pair, seed)?;
    write_jsonl(&p(files::WS2_COMPARISONS), &cmp2)?;
    note(p(files::WS2_COMPARISONS));
    let (table2, scores2) = rate_comparisons(&cmp2, &config.rating)?;
    write_json(&p(files::WS2_RATINGS), &table2)?;
    write_scores(&p(files::WS2_SCORES), &scores2)?;
    note(p(files::WS2_RATINGS));
    note(p(files::WS2_SCORES));
    let (clusters, corr) = cluster_descriptors(&scores2, config.cluster_target)?;
    write_json(&p(files::CLUSTERS), &clusters)?;
    write_matrix_csv(&p(files::CORRELATION_CSV), &corr.labels, &corr.values)?;
    note(p(files::CLUSTERS));
    note(p(files::CORRELATION_CSV));

    // scoring study on the representative descriptors
    let ws3 = generate_clips(&units, config.ws3_clips, seed)?;
    write_jsonl(&p(files::WS3_CLIPS), &ws3)?;
    note(p(files::WS3_CLIPS));
    let cmp3 = survey_pairs(&ws3, &load_rater(config, SurveyMode::Ws3)?, config.comparisons_per_pair, seed)?;
    write_jsonl(&p(files::WS3_COMPARISONS), &cmp3)?;
    note(p(files::WS3_COMPARISONS));
    let (table3, scores3) = rate_comparisons(&cmp3, &config.rating)?;
    write_json(&p(files::WS3_RATINGS), &table3)?;
    write_scores(&p(files::WS3_SCORES), &scores3)?;
    note(p(files::WS3_RATINGS));
    note(p(files::WS3_SCORES));

    let (embedding, basis) = embed_scores(&scores3, config.distance, config.embed_dim, seed)?;
    write_json(&p(files::EMBEDDING), &embedding)?;
    write_embedding_csv(&p(files::EMBEDDING_CSV), &embedding)?;
    note(p(files::EMBEDDING));
    note(p(files::EMBEDDING_CSV));
    if let Some(b) = basis {
        write_json(&p(files::BASIS), &b)?;
        note(p(files::BASIS));
    }

    let trained = train_models(&ws3, &scores3, config)?;
    write_json(&p(files::D2P), &trained.d2p)?;
    write_json(&p(files::P2D), &trained.p2d)?;
    write_json(&p(files::SPLIT), &trained.split)?;
    write_coefficients_csv(&p(files::COEFFICIENTS_CSV), &trained.d2p, &trained.p2d)?;
    for f in [files::D2P, files::P2D, files::SPLIT, files::COEFFICIENTS_CSV] {
        note(p(f));
    }
    let report = evaluate(&trained.d2p, &trained.p2d, &ws3, &scores3, &trained.split)?;
    write_json(&p(files::EVAL), &report)?;
    report.write_csv(&p(files::EVAL_CSV))?;
    note(p(files::EVAL));
    note(p(files::EVAL_CSV));

    let actor = load_actor(config)?;
    let generated = generate_shot(&trained.d2p, &[], &actor, config.sim_duration, config.sim_dt)?;
    write_json(&p(files::GENERATED), &generated)?;
    note(p(files::GENERATED));
    let sweeps = expression_sweeps(&trained.d2p, config.sweep_points)?;
    write_json(&p(files::SWEEPS), &sweeps)?;
    write_sweeps_csv(&p(files::SWEEPS_CSV), &sweeps)?;
    note(p(files::SWEEPS));
    note(p(files::SWEEPS_CSV));
    let doc = simulate_document(&generated.shot, &actor, config.sim_duration, config.sim_dt)?;
    write_text(&p(files::TRAJECTORY), &serde_json::to_string(&doc)?)?;
    note(p(files::TRAJECTORY));
    Ok(written)
}
