//! Same/different significance testing and minimal perceptual units.
//!
//! Each variation clip is judged against its preset; the binary "different"
//! answers are tested against the preset-vs-itself control with Welch's
//! two-sample t-test. The smallest significant offset on each side of a
//! preset becomes the perceptual unit for that parameter, and new datasets
//! are sampled in multiples of those units.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::shot::{apply_variation, ShotParam, ShotParameters, ShotPreset, ShotType};
use crate::stats::{mean, sample_variance};
use crate::{Error, Result};

/// Default number of judgments per clip.
pub const DEFAULT_RESPONSES_PER_CLIP: usize = 30;

/// Allowed unit multiples when sampling a dataset.
pub const UNIT_MULTIPLES: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub clip_id: String,
    /// Offset the clip applies to its preset; zero for the control.
    pub delta: f64,
    /// `true` = judged different from the preset.
    pub responses: Vec<bool>,
}

impl ResponseSet {
    pub fn n(&self) -> usize {
        self.responses.len()
    }

    fn as_reals(&self) -> Vec<f64> {
        self.responses.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub p_value: f64,
    pub significant: bool,
    pub delta: f64,
    pub t_statistic: f64,
    pub df: f64,
}

/// Welch statistic, Welch-Satterthwaite degrees of freedom and two-sided p.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("t-test needs nonempty samples".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        // both samples constant
        return Ok(if ma == mb {
            WelchTest { t: 0.0, df: 1.0, p: 1.0 }
        } else {
            WelchTest {
                t: (mb - ma).signum() * f64::INFINITY,
                df: 1.0,
                p: 0.0,
            }
        });
    }
    let t = (mb - ma) / se2.sqrt();
    let term = |q: f64, n: f64| if q == 0.0 { 0.0 } else { q * q / (n - 1.0) };
    let df = (se2 * se2 / (term(qa, na) + term(qb, nb))).max(1.0);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchTest { t, df, p })
}

/// Tests whether `variation` is judged different more often than `control`.
pub fn two_sided_t_test(control: &ResponseSet, variation: &ResponseSet, alpha: f64) -> Result<TestResult> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let w = welch_test(&control.as_reals(), &variation.as_reals())?;
    Ok(TestResult {
        p_value: w.p,
        significant: w.p < alpha,
        delta: variation.delta,
        t_statistic: w.t,
        df: w.df,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptualUnit {
    pub parameter: ShotParam,
    pub preset: String,
    pub delta_plus: Option<f64>,
    pub delta_minus: Option<f64>,
}

/// Smallest significant offset on each side of the preset.
pub fn minimal_units(preset: &str, parameter: ShotParam, sweep: &[TestResult]) -> Result<PerceptualUnit> {
    if sweep.is_empty() {
        return Err(Error::Empty(format!("empty sweep for {parameter} on {preset}")));
    }
    let significant = sweep.iter().filter(|r| r.significant);
    let delta_plus = significant
        .clone()
        .filter(|r| r.delta > 0.0)
        .map(|r| r.delta)
        .min_by(f64::total_cmp);
    let delta_minus = significant
        .filter(|r| r.delta < 0.0)
        .map(|r| r.delta)
        .max_by(f64::total_cmp);
    Ok(PerceptualUnit {
        parameter,
        preset: preset.to_string(),
        delta_plus,
        delta_minus,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitEntry {
    pub delta_plus: Option<f64>,
    pub delta_minus: Option<f64>,
}

/// Perceptual units keyed by preset name, then parameter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitTable {
    entries: BTreeMap<String, BTreeMap<ShotParam, UnitEntry>>,
}

impl UnitTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, unit: &PerceptualUnit) {
        self.entries.entry(unit.preset.clone()).or_default().insert(
            unit.parameter,
            UnitEntry {
                delta_plus: unit.delta_plus,
                delta_minus: unit.delta_minus,
            },
        );
    }

    pub fn set(&mut self, preset: &str, param: ShotParam, delta_plus: f64, delta_minus: f64) {
        self.insert(&PerceptualUnit {
            parameter: param,
            preset: preset.to_string(),
            delta_plus: Some(delta_plus),
            delta_minus: Some(delta_minus),
        });
    }

    pub fn get(&self, preset: &str, param: ShotParam) -> Option<UnitEntry> {
        self.entries.get(preset)?.get(&param).copied()
    }

    pub fn units(&self) -> Vec<PerceptualUnit> {
        self.entries
            .iter()
            .flat_map(|(preset, m)| {
                m.iter().map(move |(p, e)| PerceptualUnit {
                    parameter: *p,
                    preset: preset.clone(),
                    delta_plus: e.delta_plus,
                    delta_minus: e.delta_minus,
                })
            })
            .collect()
    }

    /// Unit magnitude on the requested side. When that side is missing the
    /// opposite side's magnitude is used and the result is marked
    /// extrapolated.
    pub fn magnitude(&self, preset: &str, param: ShotParam, positive: bool) -> Option<(f64, bool)> {
        let e = self.get(preset, param)?;
        let (own, other) = if positive {
            (e.delta_plus, e.delta_minus)
        } else {
            (e.delta_minus, e.delta_plus)
        };
        match (own, other) {
            (Some(v), _) => Some((v.abs(), false)),
            (None, Some(v)) => Some((v.abs(), true)),
            (None, None) => None,
        }
    }
}

/// A clip drawn around a preset in multiples of its perceptual units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledClip {
    pub clip_id: String,
    pub preset: String,
    pub params: ShotParameters,
    pub shot_type: ShotType,
    /// Signed unit multiple per parameter, [`ShotParam::ALL`] order.
    pub multiples: [f64; 6],
    pub extrapolated: bool,
}

/// Draws `count` clips around `preset`, offsetting every variable parameter
/// by a random sign times a random multiple from [`UNIT_MULTIPLES`] times the
/// unit on that side.
pub fn sample_variations(preset: &ShotPreset, units: &UnitTable, count: usize, rng_seed: u64) -> Result<Vec<SampledClip>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_variations_with(preset, units, count, &mut rng, 0)
}

pub(crate) fn sample_variations_with<R: Rng>(
    preset: &ShotPreset,
    units: &UnitTable,
    count: usize,
    rng: &mut R,
    first_index: usize,
) -> Result<Vec<SampledClip>> {
    for param in preset.variable_params() {
        for positive in [true, false] {
            if units.magnitude(&preset.name, param, positive).is_none() {
                return Err(Error::MissingUnit {
                    preset: preset.name.clone(),
                    param,
                });
            }
        }
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut multiples = [0.0; 6];
        let mut deltas = Vec::new();
        let mut extrapolated = false;
        for param in preset.variable_params() {
            let positive = rng.random_bool(0.5);
            let multiple = UNIT_MULTIPLES[rng.random_range(0..UNIT_MULTIPLES.len())];
            let (mag, extra) = units.magnitude(&preset.name, param, positive).expect("checked above");
            let sign = if positive { 1.0 } else { -1.0 };
            multiples[param.index()] = sign * multiple;
            if multiple != 0.0 {
                extrapolated |= extra;
                deltas.push((param, sign * multiple * mag));
            }
        }
        out.push(SampledClip {
            clip_id: format!("clip-{:04}", first_index + i),
            preset: preset.name.clone(),
            params: apply_variation(preset, &deltas)?,
            shot_type: preset.shot_type,
            multiples,
            extrapolated,
        });
    }
    Ok(out)
}

/// Symmetric sweep `±step, ±2·step, … ±per_side·step` around the preset.
/// Offsets that the clamp ranges would truncate are dropped.
pub fn design_sweep(preset: &ShotPreset, param: ShotParam, step: f64, per_side: usize) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::invalid("sweep step must be positive"));
    }
    let mut out = Vec::new();
    for k in (1..=per_side).rev() {
        out.push(-(k as f64) * step);
    }
    for k in 1..=per_side {
        out.push(k as f64 * step);
    }
    let base = preset.params.get(param);
    let mut kept = Vec::new();
    for d in out {
        let varied = apply_variation(preset, &[(param, d)])?;
        if ((varied.get(param) - base) - d).abs() < 1e-9 {
            kept.push(d);
        }
    }
    Ok(kept)
}

/// One judgment from the same/different survey. Control clips (the preset
/// against itself) have no parameter and zero delta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub clip_id: String,
    pub preset: String,
    pub param: Option<ShotParam>,
    pub delta: f64,
    pub different: bool,
}

/// Per-clip test outcome, kept for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub preset: String,
    pub param: ShotParam,
    pub clip_id: String,
    pub delta: f64,
    pub fraction_different: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Groups raw judgments by clip, tests every variation against its preset's
/// pooled control, and extracts the units.
pub fn analyze_responses(records: &[ResponseRecord], alpha: f64) -> Result<(UnitTable, Vec<SweepRow>)> {
    if records.is_empty() {
        return Err(Error::Empty("no responses".into()));
    }
    let mut controls: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    let mut clips: BTreeMap<(&str, ShotParam, &str), (f64, Vec<bool>)> = BTreeMap::new();
    for r in records {
        match r.param {
            None => controls.entry(&r.preset).or_default().push(r.different),
            Some(p) => {
                let e = clips.entry((&r.preset, p, &r.clip_id)).or_insert((r.delta, Vec::new()));
                if e.0 != r.delta {
                    return Err(Error::invalid(format!("clip {} has inconsistent deltas", r.clip_id)));
                }
                e.1.push(r.different);
            }
        }
    }
    let mut sweeps: BTreeMap<(&str, ShotParam), Vec<TestResult>> = BTreeMap::new();
    let mut rows = Vec::new();
    for ((preset, param, clip), (delta, responses)) in clips {
        let control = controls.get(preset).ok_or_else(|| Error::Empty(format!("no control responses for {preset}")))?;
        let control = ResponseSet {
            clip_id: format!("{preset}/control"),
            delta: 0.0,
            responses: control.clone(),
        };
        let variation = ResponseSet {
            clip_id: clip.to_string(),
            delta,
            responses,
        };
        let result = two_sided_t_test(&control, &variation, alpha)?;
        rows.push(SweepRow {
            preset: preset.to_string(),
            param,
            clip_id: clip.to_string(),
            delta,
            fraction_different: variation.responses.iter().filter(|&&b| b).count() as f64 / variation.n() as f64,
            p_value: result.p_value,
            significant: result.significant,
        });
        sweeps.entry((preset, param)).or_default().push(result);
    }
    let mut table = UnitTable::new();
    for ((preset, param), sweep) in sweeps {
        table.insert(&minimal_units(preset, param, &sweep)?);
    }
    Ok((table, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shot::{find_preset, preset_catalog};

    fn set(k: usize, n: usize, delta: f64) -> ResponseSet {
        ResponseSet {
            clip_id: format!("c{k}"),
            delta,
            responses: (0..n).map(|i| i < k).collect(),
        }
    }

    fn result(delta: f64, significant: bool) -> TestResult {
        TestResult {
            p_value: if significant { 0.01 } else { 0.5 },
            significant,
            delta,
            t_statistic: 0.0,
            df: 1.0,
        }
    }

    // Expected values frozen from scipy.stats.ttest_ind(equal_var=False).
    #[test]
    fn welch_matches_reference_values() {
        let r = two_sided_t_test(&set(3, 30, 0.0), &set(25, 30, 1.0), 0.05).unwrap();
        assert!((r.t_statistic - 8.254_448_638_770_313).abs() < 1e-9);
        assert!((r.df - 55.469_395_114_035_88).abs() < 1e-8);
        assert!((r.p_value - 3.163_062_394_511_912e-11).abs() < 1e-15);
        assert!(r.p_value < 1e-6 && r.significant);

        let r = two_sided_t_test(&set(10, 30, 0.0), &set(13, 30, 1.0), 0.05).unwrap();
        assert!((r.p_value - 0.434_278_743_278_609_7).abs() < 1e-9);
        assert!(!r.significant);

        let r = two_sided_t_test(&set(2, 30, 0.0), &set(9, 30, 1.0), 0.05).unwrap();
        assert!((r.df - 44.798_234_552_332_92).abs() < 1e-8);
        assert!((r.p_value - 0.020_204_014_769_261_543).abs() < 1e-9);
    }

    #[test]
    fn welch_one_constant_sample() {
        let r = two_sided_t_test(&set(0, 30, 0.0), &set(5, 30, 1.0), 0.05).unwrap();
        assert!((r.df - 29.0).abs() < 1e-9);
        assert!((r.p_value - 0.022_608_379_396_792_617).abs() < 1e-9);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let r = two_sided_t_test(&set(10, 30, 0.0), &set(10, 30, 1.0), 0.05).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn constant_samples() {
        let same = two_sided_t_test(&set(0, 30, 0.0), &set(0, 30, 1.0), 0.05).unwrap();
        assert_eq!(same.p_value, 1.0);
        let apart = two_sided_t_test(&set(0, 30, 0.0), &set(30, 30, 1.0), 0.05).unwrap();
        assert_eq!(apart.p_value, 0.0);
        assert_eq!(apart.df, 1.0);
        assert!(apart.significant);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(two_sided_t_test(&set(0, 0, 0.0), &set(1, 3, 1.0), 0.05).is_err());
    }

    #[test]
    fn minimal_units_picks_smallest_per_side() {
        let sweep = [
            result(-10.0, true),
            result(-5.0, false),
            result(2.5, false),
            result(5.0, true),
            result(7.5, true),
        ];
        let u = minimal_units("Overhead", ShotParam::Phi, &sweep).unwrap();
        assert_eq!(u.delta_plus, Some(5.0));
        assert_eq!(u.delta_minus, Some(-10.0));

        let sweep = [result(1.25, false), result(2.5, true), result(5.0, true)];
        let u = minimal_units("Orbit", ShotParam::ThetaDot, &sweep).unwrap();
        assert_eq!(u.delta_plus, Some(2.5));
        assert_eq!(u.delta_minus, None);
    }

    #[test]
    fn minimal_units_vacuous_and_empty() {
        let u = minimal_units("Orbit", ShotParam::Phi, &[result(5.0, false), result(-5.0, false)]).unwrap();
        assert_eq!((u.delta_plus, u.delta_minus), (None, None));
        assert!(minimal_units("Orbit", ShotParam::Phi, &[]).is_err());
    }

    fn full_units() -> UnitTable {
        let mut t = UnitTable::new();
        for p in preset_catalog() {
            for param in p.variable_params() {
                t.set(&p.name, param, 1.0, -0.5);
            }
        }
        t
    }

    #[test]
    fn sampling_is_deterministic_and_within_two_units() {
        let units = full_units();
        for preset in preset_catalog() {
            let a = sample_variations(&preset, &units, 40, 7).unwrap();
            let b = sample_variations(&preset, &units, 40, 7).unwrap();
            assert_eq!(a, b);
            for clip in &a {
                for param in ShotParam::ALL {
                    let d = clip.params.get(param) - preset.params.get(param);
                    if preset.is_variable(param) {
                        let m = clip.multiples[param.index()];
                        assert!(UNIT_MULTIPLES.contains(&m.abs()));
                        assert!(d <= 2.0 + 1e-12 && d >= -1.0 - 1e-12);
                    } else {
                        assert_eq!(d, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn missing_unit_is_an_error() {
        let preset = find_preset("Orbit").unwrap();
        let mut t = UnitTable::new();
        t.set("Orbit", ShotParam::Phi, 10.0, -10.0);
        assert!(matches!(
            sample_variations(&preset, &t, 1, 1),
            Err(Error::MissingUnit { param: ShotParam::ThetaDot, .. })
        ));
    }

    #[test]
    fn one_sided_unit_extrapolates() {
        let mut t = UnitTable::new();
        t.insert(&PerceptualUnit {
            parameter: ShotParam::Phi,
            preset: "Follow 0".into(),
            delta_plus: Some(10.0),
            delta_minus: None,
        });
        assert_eq!(t.magnitude("Follow 0", ShotParam::Phi, false), Some((10.0, true)));
        assert_eq!(t.magnitude("Follow 0", ShotParam::Phi, true), Some((10.0, false)));
    }

    #[test]
    fn unit_table_json_shape() {
        let mut t = UnitTable::new();
        t.set("Orbit", ShotParam::ThetaDot, 2.5, -5.0);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"Orbit":{"theta_dot":{"delta_plus":2.5,"delta_minus":-5.0}}}"#);
        let back: UnitTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn sweep_design_drops_clamped_offsets() {
        let overhead = find_preset("Overhead").unwrap();
        let d = design_sweep(&overhead, ShotParam::Phi, 2.5, 4).unwrap();
        assert_eq!(d, vec![-10.0, -7.5, -5.0, -2.5, 2.5, 5.0]);
    }

    #[test]
    fn analyze_recovers_obvious_unit() {
        let mut recs = Vec::new();
        let push = |recs: &mut Vec<ResponseRecord>, clip: &str, param, delta, k: usize| {
            for i in 0..30 {
                recs.push(ResponseRecord {
                    clip_id: clip.into(),
                    preset: "Orbit".into(),
                    param,
                    delta,
                    different: i < k,
                });
            }
        };
        push(&mut recs, "ctl", None, 0.0, 1);
        push(&mut recs, "a", Some(ShotParam::ThetaDot), 1.25, 2);
        push(&mut recs, "b", Some(ShotParam::ThetaDot), 2.5, 20);
        push(&mut recs, "c", Some(ShotParam::ThetaDot), -2.5, 3);
        push(&mut recs, "d", Some(ShotParam::ThetaDot), -5.0, 25);
        let (table, rows) = analyze_responses(&recs, 0.05).unwrap();
        assert_eq!(rows.len(), 4);
        let u = table.get("Orbit", ShotParam::ThetaDot).unwrap();
        assert_eq!(u.delta_plus, Some(2.5));
        assert_eq!(u.delta_minus, Some(-5.0));
    }
}
