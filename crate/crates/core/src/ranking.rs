//! Two-player TrueSkill rating of clips from pairwise judgments.
//!
//! Every clip holds a Gaussian belief `N(mu, sigma²)` per descriptor. A
//! judgment "a is more X than b" updates both beliefs with the truncated
//! Gaussian moment-matching rules:
//!
//! ```text
//! c² = 2β² + σ_w² + σ_l²,  t = (μ_w − μ_l) / c
//! μ_w += σ_w²/c · v(t, ε/c)         μ_l −= σ_l²/c · v(t, ε/c)
//! σ²  *= 1 − σ²/c² · w(t, ε/c)
//! ```
//!
//! Draws use the two-sided truncation variants of `v` and `w`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::stats::{normal_cdf, normal_pdf};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub mu: f64,
    pub sigma: f64,
}

impl Rating {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::NonFinite("rating".into()));
        }
        if sigma <= 0.0 {
            return Err(Error::invalid("rating sigma must be positive"));
        }
        Ok(Rating { mu, sigma })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingConfig {
    pub mu0: f64,
    pub sigma0: f64,
    /// Performance noise.
    pub beta: f64,
    /// Draw margin.
    pub epsilon: f64,
    /// Dynamics noise added before each update.
    pub tau: f64,
}

impl Default for RatingConfig {
    fn default() -> Self {
        let sigma0 = 25.0 / 3.0;
        RatingConfig {
            mu0: 25.0,
            sigma0,
            beta: sigma0 / 2.0,
            epsilon: 0.0,
            tau: 0.0,
        }
    }
}

impl RatingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu0.is_finite()
            && self.sigma0 > 0.0
            && self.beta > 0.0
            && self.epsilon >= 0.0
            && self.tau >= 0.0
            && self.sigma0.is_finite()
            && self.beta.is_finite()
            && self.epsilon.is_finite()
            && self.tau.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid rating config {self:?}")))
        }
    }

    pub fn prior(&self) -> Rating {
        Rating {
            mu: self.mu0,
            sigma: self.sigma0,
        }
    }
}

/// Mills-ratio style correction for a win with margin `eps`.
fn v_win(t: f64, eps: f64) -> f64 {
    let x = t - eps;
    let denom = normal_cdf(x);
    if denom < 1e-300 {
        // asymptote of pdf/cdf for very negative x
        return -x;
    }
    normal_pdf(x) / denom
}

fn w_win(t: f64, eps: f64) -> f64 {
    let v = v_win(t, eps);
    let w = v * (v + t - eps);
    w.clamp(0.0, 1.0)
}

fn v_draw(t: f64, eps: f64) -> f64 {
    let abs_t = t.abs();
    let (a, b) = (eps - abs_t, -eps - abs_t);
    let denom = normal_cdf(a) - normal_cdf(b);
    let v = if denom < 1e-300 {
        // deep tail: truncated mass sits at the upper endpoint
        -a
    } else {
        (normal_pdf(b) - normal_pdf(a)) / denom
    };
    if t < 0.0 {
        -v
    } else {
        v
    }
}

fn w_draw(t: f64, eps: f64) -> f64 {
    let abs_t = t.abs();
    let (a, b) = (eps - abs_t, -eps - abs_t);
    let denom = normal_cdf(a) - normal_cdf(b);
    if denom < 1e-300 {
        return 1.0;
    }
    let v = v_draw(abs_t, eps);
    let w = v * v + (a * normal_pdf(a) - b * normal_pdf(b)) / denom;
    w.clamp(0.0, 1.0)
}

fn check(r: &Rating) -> Result<()> {
    if !r.mu.is_finite() || !r.sigma.is_finite() || r.sigma <= 0.0 {
        return Err(Error::NonFinite(format!("rating {r:?}")));
    }
    Ok(())
}

fn apply(winner: &Rating, loser: &Rating, config: &RatingConfig, draw: bool) -> Result<(Rating, Rating)> {
    check(winner)?;
    check(loser)?;
    config.validate()?;
    let var_w = winner.sigma * winner.sigma + config.tau * config.tau;
    let var_l = loser.sigma * loser.sigma + config.tau * config.tau;
    let c2 = 2.0 * config.beta * config.beta + var_w + var_l;
    let c = c2.sqrt();
    let t = (winner.mu - loser.mu) / c;
    let eps = config.epsilon / c;
    let (v, w) = if draw {
        (v_draw(t, eps), w_draw(t, eps))
    } else {
        (v_win(t, eps), w_win(t, eps))
    };
    let new_w = Rating {
        mu: winner.mu + var_w / c * v,
        sigma: (var_w * (1.0 - var_w / c2 * w)).sqrt(),
    };
    let new_l = Rating {
        mu: loser.mu - var_l / c * v,
        sigma: (var_l * (1.0 - var_l / c2 * w)).sqrt(),
    };
    check(&new_w)?;
    check(&new_l)?;
    Ok((new_w, new_l))
}

/// Updates both ratings after `winner` beat `loser`.
pub fn update_pair(winner: &Rating, loser: &Rating, config: &RatingConfig) -> Result<(Rating, Rating)> {
    apply(winner, loser, config, false)
}

/// Updates both ratings after a draw. Returned in argument order.
pub fn update_draw(a: &Rating, b: &Rating, config: &RatingConfig) -> Result<(Rating, Rating)> {
    apply(a, b, config, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "a")]
    AWins,
    #[serde(rename = "b")]
    BWins,
    #[serde(rename = "draw")]
    Draw,
}

/// One pairwise judgment: "which clip is more `descriptor`?".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub descriptor: String,
    pub a: String,
    pub b: String,
    pub outcome: Outcome,
}

impl ComparisonRecord {
    pub fn new(descriptor: impl Into<String>, a: impl Into<String>, b: impl Into<String>, outcome: Outcome) -> Result<Self> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(Error::invalid(format!("clip {a} compared with itself")));
        }
        Ok(ComparisonRecord {
            descriptor: descriptor.into(),
            a,
            b,
            outcome,
        })
    }

    /// Parses one line, reporting unknown outcome tags explicitly.
    pub fn parse_line(line: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(line)?;
        let outcome = raw.get("outcome").and_then(|v| v.as_str()).unwrap_or_default();
        if !matches!(outcome, "a" | "b" | "draw") {
            return Err(Error::Unknown {
                kind: "outcome",
                name: outcome.to_string(),
            });
        }
        let rec: ComparisonRecord = serde_json::from_value(raw)?;
        if rec.a == rec.b {
            return Err(Error::invalid(format!("clip {} compared with itself", rec.a)));
        }
        Ok(rec)
    }
}

/// Per-descriptor ratings, `descriptor -> clip -> rating`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatingTable {
    pub table: BTreeMap<String, BTreeMap<String, Rating>>,
}

impl RatingTable {
    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn descriptors(&self) -> Vec<String> {
        self.table.keys().cloned().collect()
    }

    pub fn get(&self, descriptor: &str, clip: &str) -> Option<Rating> {
        self.table.get(descriptor)?.get(clip).copied()
    }

    pub fn ratings(&self, descriptor: &str) -> Option<&BTreeMap<String, Rating>> {
        self.table.get(descriptor)
    }
}

/// Rates every comparison in input order from the shared prior.
pub fn rate_dataset(comparisons: &[ComparisonRecord], config: &RatingConfig) -> Result<RatingTable> {
    config.validate()?;
    let mut table = RatingTable::default();
    for rec in comparisons {
        if rec.a == rec.b {
            return Err(Error::invalid(format!("clip {} compared with itself", rec.a)));
        }
        let ratings = table.table.entry(rec.descriptor.clone()).or_default();
        let ra = *ratings.entry(rec.a.clone()).or_insert_with(|| config.prior());
        let rb = *ratings.entry(rec.b.clone()).or_insert_with(|| config.prior());
        let (na, nb) = match rec.outcome {
            Outcome::AWins => update_pair(&ra, &rb, config)?,
            Outcome::BWins => {
                let (nb, na) = update_pair(&rb, &ra, config)?;
                (na, nb)
            }
            Outcome::Draw => update_draw(&ra, &rb, config)?,
        };
        ratings.insert(rec.a.clone(), na);
        ratings.insert(rec.b.clone(), nb);
    }
    Ok(table)
}
