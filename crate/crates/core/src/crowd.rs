//! Synthetic survey participants.
//!
//! A hidden linear rater scores clips from their shot features and answers
//! the two survey questions: "which clip is more X" via a Thurstone case V
//! judgment and "same or different" via a Gaussian detection curve over
//! unit-scaled parameter differences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::{encode_features, FEATURE_DIM};
use crate::perceptual::{SampledClip, UnitTable};
use crate::ranking::{ComparisonRecord, Outcome};
use crate::shot::{wrap_degrees, ShotParam, ShotParameters, ShotPreset, ShotType};
use crate::stats::normal_cdf;
use crate::{Error, Result};

/// The seven representative descriptors, in model order.
pub const DESCRIPTORS: [&str; 7] = [
    "exciting",
    "calm",
    "interesting",
    "enjoyable",
    "establishing",
    "revealing",
    "nervous",
];

/// Fifteen descriptors: the exciting group, the calm group, then the five
/// singletons.
pub const EXTENDED_DESCRIPTORS: [&str; 15] = [
    "exciting",
    "surprising",
    "rushed",
    "dynamic",
    "calm",
    "slow",
    "predictable",
    "boring",
    "serene",
    "static",
    "interesting",
    "enjoyable",
    "establishing",
    "revealing",
    "nervous",
];

/// Group of each extended descriptor, led by the representative.
pub fn extended_groups() -> Vec<Vec<&'static str>> {
    vec![
        vec!["exciting", "surprising", "rushed", "dynamic"],
        vec!["calm", "slow", "predictable", "boring", "serene", "static"],
        vec!["interesting"],
        vec!["enjoyable"],
        vec!["establishing"],
        vec!["revealing"],
        vec!["nervous"],
    ]
}

pub const DEFAULT_GUESS_RATE: f64 = 0.05;

/// Detection width giving `p` probability of "different" at one unit.
pub fn detect_sigma_for(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("detection probability must lie in (0, 1), got {p}")));
    }
    Ok((-1.0 / (2.0 * (1.0 - p).ln())).sqrt())
}

/// Hidden ground truth for one simulated crowd.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRater {
    pub descriptors: Vec<String>,
    /// One row of [`FEATURE_DIM`] weights per descriptor, on raw feature scale.
    pub w_true: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub detect_sigma: f64,
    pub guess_rate: f64,
    pub seed: u64,
    /// Units that scale parameter differences for detection.
    pub units: UnitTable,
}

impl LatentRater {
    pub fn validate(&self) -> Result<()> {
        if self.descriptors.is_empty() {
            return Err(Error::Empty("rater descriptors".into()));
        }
        if self.w_true.len() != self.descriptors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.descriptors.len(),
                got: self.w_true.len(),
            });
        }
        if let Some(row) = self.w_true.iter().find(|r| r.len() != FEATURE_DIM) {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                got: row.len(),
            });
        }
        if self.w_true.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rater weights".into()));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma must be positive"));
        }
        if !(self.detect_sigma > 0.0) || !self.detect_sigma.is_finite() {
            return Err(Error::invalid("detect_sigma must be positive"));
        }
        if !(0.0..1.0).contains(&self.guess_rate) {
            return Err(Error::invalid("guess_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn descriptor_index(&self, name: &str) -> Result<usize> {
        self.descriptors.iter().position(|d| d == name).ok_or_else(|| Error::Unknown {
            kind: "descriptor",
            name: name.to_string(),
        })
    }

    pub fn latent_score_features(&self, features: &[f64; FEATURE_DIM]) -> Vec<f64> {
        self.w_true.iter().map(|row| row.iter().zip(features).map(|(w, f)| w * f).sum()).collect()
    }

    /// Noise-free descriptor values of a shot.
    pub fn latent_score(&self, shot: &ShotParameters, shot_type: ShotType) -> Vec<f64> {
        self.latent_score_features(&encode_features(shot, shot_type))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: LatentRater = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }
}

/// Thurstone case V: `Φ((s_a − s_b) / (√2 σ))`.
pub fn win_probability(s_a: f64, s_b: f64, noise_sigma: f64) -> f64 {
    if noise_sigma == 0.0 {
        return match s_a.partial_cmp(&s_b) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    normal_cdf((s_a - s_b) / (std::f64::consts::SQRT_2 * noise_sigma))
}

/// One "which clip is more X" judgment. Draws are never produced.
pub fn simulate_comparison<R: Rng>(
    a: &SampledClip,
    b: &SampledClip,
    descriptor: usize,
    rater: &LatentRater,
    rng: &mut R,
) -> Result<ComparisonRecord> {
    let name = rater
        .descriptors
        .get(descriptor)
        .ok_or_else(|| Error::invalid(format!("descriptor index {descriptor} out of range")))?;
    let s_a = rater.latent_score(&a.params, a.shot_type)[descriptor];
    let s_b = rater.latent_score(&b.params, b.shot_type)[descriptor];
    let p = win_probability(s_a, s_b, rater.noise_sigma);
    let outcome = if rng.random::<f64>() < p {
        Outcome::AWins
    } else {
        Outcome::BWins
    };
    ComparisonRecord::new(name.clone(), a.clip_id.clone(), b.clip_id.clone(), outcome)
}

/// Squared length of the preset-to-variation difference in units.
pub fn unit_distance_squared(preset: &ShotPreset, variation: &ShotParameters, units: &UnitTable) -> Result<f64> {
    let mut total = 0.0;
    for param in ShotParam::ALL {
        let mut diff = variation.get(param) - preset.params.get(param);
        if param == ShotParam::Theta {
            diff = wrap_degrees(diff);
        }
        if diff == 0.0 {
            continue;
        }
        let (unit, _) = units.magnitude(&preset.name, param, diff > 0.0).ok_or_else(|| Error::MissingUnit {
            preset: preset.name.clone(),
            param,
        })?;
        total += (diff / unit).powi(2);
    }
    Ok(total)
}

/// Probability of answering "different" when shown the preset and a variation.
pub fn p_different(preset: &ShotPreset, variation: &ShotParameters, rater: &LatentRater) -> Result<f64> {
    let d2 = unit_distance_squared(preset, variation, &rater.units)?;
    let detect = 1.0 - (-d2 / (2.0 * rater.detect_sigma * rater.detect_sigma)).exp();
    Ok(detect.max(rater.guess_rate))
}

pub fn simulate_same_different<R: Rng>(
    preset: &ShotPreset,
    variation: &ShotParameters,
    rater: &LatentRater,
    rng: &mut R,
) -> Result<bool> {
    let p = p_different(preset, variation, rater)?;
    Ok(rng.random::<f64>() < p)
}

/// Units planted in the default raters.
pub fn planted_units() -> UnitTable {
    let mut t = UnitTable::new();
    t.set("Follow 0", ShotParam::Phi, 10.0, -10.0);
    t.set("Follow 1", ShotParam::Phi, 10.0, -10.0);
    t.set("Orbit", ShotParam::Phi, 10.0, -10.0);
    t.set("Orbit", ShotParam::ThetaDot, 2.5, -5.0);
    t.set("Dronie", ShotParam::RhoDot, 0.5, -0.5);
    t.set("Dronie", ShotParam::VZ, 0.5, -0.5);
    t.set("Overhead", ShotParam::Phi, 5.0, -5.0);
    t.set("Overhead", ShotParam::RhoDot, 0.5, -0.5);
    t.set("Overhead", ShotParam::VZ, 0.5, -0.5);
    t.set("Fly-by", ShotParam::Phi, 10.0, -10.0);
    t.set("Fly-by", ShotParam::ThetaDot, 4.0, -4.0);
    t
}

/// Typical spread of each shot parameter; weights below are per spread.
const FEATURE_SCALE: [f64; 6] = [10.0, 1.0, 90.0, 10.0, 30.0, 1.0];

/// Weights per parameter spread, then the one-hot block
/// (follow, orbit, dronie, overhead, flyby).
fn base_rows() -> [[f64; FEATURE_DIM]; 7] {
    [
        // exciting: fast angular motion, close in
        [-0.4, 0.3, 0.1, 0.8, -0.1, 0.2, -0.1, 0.2, 0.0, -0.1, 0.2],
        // calm: slow, distant, level
        [0.3, -0.4, 0.0, -0.6, 0.2, -0.3, 0.1, -0.1, 0.1, 0.1, -0.2],
        // interesting: low tilt, side or rear views
        [0.1, 0.2, 0.5, 0.3, -0.7, 0.1, 0.0, 0.1, 0.1, -0.1, 0.1],
        // enjoyable
        [0.2, -0.1, 0.6, -0.2, -0.3, 0.0, 0.1, 0.0, 0.1, 0.0, 0.0],
        // establishing: large distance
        [0.9, -0.3, 0.1, 0.0, 0.3, -0.3, 0.0, -0.1, 0.2, 0.1, 0.0],
        // revealing: receding and rising, low tilt
        [0.4, -0.6, -0.3, 0.1, -0.5, -0.5, 0.0, 0.0, 0.1, 0.0, 0.1],
        // nervous: close, approaching, descending
        [-0.6, 0.5, -0.2, 0.4, 0.3, 0.5, 0.0, 0.1, -0.1, 0.0, 0.1],
    ]
}

fn to_raw(row: &[f64; FEATURE_DIM]) -> Vec<f64> {
    row.iter()
        .enumerate()
        .map(|(i, w)| if i < 6 { w / FEATURE_SCALE[i] } else { *w })
        .collect()
}

/// The seven-descriptor rater used for the scoring surveys.
pub fn default_rater(seed: u64) -> LatentRater {
    LatentRater {
        descriptors: DESCRIPTORS.iter().map(|s| s.to_string()).collect(),
        w_true: base_rows().iter().map(to_raw).collect(),
        noise_sigma: 0.5,
        detect_sigma: detect_sigma_for(0.75).expect("valid probability"),
        guess_rate: DEFAULT_GUESS_RATE,
        seed,
        units: planted_units(),
    }
}

/// Fixed offsets added to the representative's weights for the other
/// members of the exciting and calm groups.
const MEMBER_OFFSETS: [[f64; FEATURE_DIM]; 8] = [
    [0.10, -0.05, 0.08, 0.00, 0.05, -0.10, 0.05, 0.00, -0.05, 0.05, 0.00],
    [-0.05, 0.10, -0.05, 0.10, -0.08, 0.05, 0.00, 0.05, 0.00, -0.05, 0.05],
    [0.00, 0.08, 0.10, -0.08, 0.00, 0.08, -0.05, 0.00, 0.05, 0.00, -0.05],
    [0.08, 0.00, -0.08, 0.05, 0.10, 0.00, 0.05, -0.05, 0.00, 0.05, 0.00],
    [-0.10, 0.05, 0.00, -0.05, 0.08, -0.08, 0.00, 0.05, 0.05, 0.00, 0.00],
    [0.05, -0.10, 0.05, 0.08, -0.05, 0.00, 0.00, 0.00, -0.05, 0.05, 0.05],
    [0.00, 0.05, -0.10, 0.00, -0.10, 0.10, 0.05, 0.00, 0.00, -0.05, 0.00],
    [-0.08, -0.08, 0.05, -0.10, 0.00, 0.05, -0.05, 0.05, 0.00, 0.00, 0.05],
];

/// The fifteen-descriptor rater used for the clustering survey.
pub fn extended_rater(seed: u64) -> LatentRater {
    let base = base_rows();
    let mut offsets = MEMBER_OFFSETS.iter();
    let mut rows = Vec::with_capacity(EXTENDED_DESCRIPTORS.len());
    for group in extended_groups() {
        let lead = DESCRIPTORS.iter().position(|d| *d == group[0]).expect("representative listed");
        for (m, _) in group.iter().enumerate() {
            let mut row = base[lead];
            if m > 0 {
                let off = offsets.next().expect("one offset per member");
                for (w, o) in row.iter_mut().zip(off) {
                    *w += o;
                }
            }
            rows.push(to_raw(&row));
        }
    }
    LatentRater {
        descriptors: extended_groups().into_iter().flatten().map(str::to_string).collect(),
        w_true: rows,
        ..default_rater(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shot::{find_preset, preset_catalog};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(id: &str, shot: ShotParameters, shot_type: ShotType) -> SampledClip {
        SampledClip {
            clip_id: id.into(),
            preset: "x".into(),
            params: shot,
            shot_type,
            multiples: [0.0; 6],
            extrapolated: false,
        }
    }

    #[test]
    fn calibrated_detection() {
        let s = detect_sigma_for(0.75).unwrap();
        assert!((s - 1.0 / (2.0 * 4f64.ln()).sqrt()).abs() < 1e-15);
        let rater = default_rater(0);
        let preset = find_preset("Follow 0").unwrap();
        let mut v = preset.params;
        assert_eq!(p_different(&preset, &v, &rater).unwrap(), DEFAULT_GUESS_RATE);
        v.phi += 10.0;
        assert!((p_different(&preset, &v, &rater).unwrap() - 0.75).abs() < 1e-12);
        v.phi += 1000.0;
        assert!(p_different(&preset, &v, &rater).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn missing_unit_is_an_error() {
        let rater = default_rater(0);
        let preset = find_preset("Follow 0").unwrap();
        let mut v = preset.params;
        v.rho += 1.0;
        assert!(matches!(p_different(&preset, &v, &rater), Err(Error::MissingUnit { .. })));
    }

    #[test]
    fn thurstone_reference_points() {
        assert_eq!(win_probability(1.0, 1.0, 0.7), 0.5);
        let sigma = 0.7;
        let p = win_probability(std::f64::consts::SQRT_2 * sigma, 0.0, sigma);
        assert!((p - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert_eq!(win_probability(1.0, 0.5, 0.0), 1.0);
        assert_eq!(win_probability(0.5, 1.0, 0.0), 0.0);
    }

    #[test]
    fn zero_features_score_zero() {
        let rater = default_rater(0);
        assert!(rater.latent_score_features(&[0.0; FEATURE_DIM]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn planted_signs() {
        let rater = default_rater(0);
        let est = rater.descriptor_index("establishing").unwrap();
        let int = rater.descriptor_index("interesting").unwrap();
        let base = find_preset("Follow 0").unwrap().params;
        let mut far = base;
        far.rho += 5.0;
        assert!(rater.latent_score(&far, ShotType::Follow)[est] > rater.latent_score(&base, ShotType::Follow)[est]);
        let mut steep = base;
        steep.phi += 10.0;
        assert!(rater.latent_score(&steep, ShotType::Follow)[int] < rater.latent_score(&base, ShotType::Follow)[int]);
    }

    #[test]
    fn comparisons_are_reproducible() {
        let rater = default_rater(0);
        let presets = preset_catalog();
        let a = clip("a", presets[2].params, ShotType::Orbit);
        let b = clip("b", presets[3].params, ShotType::Dronie);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| simulate_comparison(&a, &b, 0, &rater, &mut rng).unwrap().outcome).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert!(simulate_comparison(&a, &b, 99, &rater, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn empirical_win_rate_tracks_probability() {
        let rater = default_rater(0);
        let presets = preset_catalog();
        let a = clip("a", presets[2].params, ShotType::Orbit);
        let b = clip("b", presets[0].params, ShotType::Follow);
        let sa = rater.latent_score(&a.params, a.shot_type)[0];
        let sb = rater.latent_score(&b.params, b.shot_type)[0];
        let p = win_probability(sa, sb, rater.noise_sigma);
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wins = (0..n)
            .filter(|_| simulate_comparison(&a, &b, 0, &rater, &mut rng).unwrap().outcome == Outcome::AWins)
            .count();
        assert!((wins as f64 / n as f64 - p).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn rater_json_round_trip() {
        let r = extended_rater(3);
        assert_eq!(r.descriptors.len(), 15);
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(LatentRater::from_json(&text).unwrap(), r);
        let mut bad = r.clone();
        bad.noise_sigma = 0.0;
        assert!(LatentRater::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    }
}
