//! Synthetic temporally coherent streams.
//!
//! An episode is split into consecutive coherence intervals, each showing a
//! single identity. Identities `0..num_known` are in the robot model's label
//! set; the rest are unknown to it and always misclassified. The cloud model
//! is a human oracle that is always right.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OffloadError, Result};
use crate::trace::{Label, Trace, TraceStep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Episode horizon.
    #[serde(rename = "T")]
    pub horizon: usize,
    pub num_identities: u32,
    pub num_known: u32,
    pub coherence_frac_min: f64,
    pub coherence_frac_max: f64,
    pub p_correct_known: f64,
    pub conf_correct_mean: f64,
    pub conf_correct_sd: f64,
    pub conf_wrong_mean: f64,
    pub conf_wrong_sd: f64,
    pub phi_boundary_mean: f64,
    pub phi_boundary_sd: f64,
    pub phi_within_mean: f64,
    pub phi_within_sd: f64,
    pub cloud_conf: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            horizon: 80,
            num_identities: 20,
            num_known: 10,
            coherence_frac_min: 1.0 / 12.0,
            coherence_frac_max: 1.0 / 10.0,
            p_correct_known: 0.85,
            conf_correct_mean: 0.90,
            conf_correct_sd: 0.05,
            conf_wrong_mean: 0.45,
            conf_wrong_sd: 0.15,
            phi_boundary_mean: 0.8,
            phi_boundary_sd: 0.1,
            phi_within_mean: 0.1,
            phi_within_sd: 0.05,
            cloud_conf: 1.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(OffloadError::Config(m));
        if self.horizon == 0 {
            return fail("T must be >= 1".into());
        }
        if !(0.0 < self.coherence_frac_min
            && self.coherence_frac_min <= self.coherence_frac_max
            && self.coherence_frac_max < 1.0)
        {
            return fail(format!(
                "need 0 < coherence_frac_min ({}) <= coherence_frac_max ({}) < 1",
                self.coherence_frac_min, self.coherence_frac_max
            ));
        }
        if !(0.0..=1.0).contains(&self.p_correct_known) {
            return fail(format!("p_correct_known = {} is outside [0, 1]", self.p_correct_known));
        }
        if self.num_known > self.num_identities {
            return fail(format!("num_known ({}) exceeds num_identities ({})", self.num_known, self.num_identities));
        }
        // A misclassification needs another known label to land on.
        if self.num_known < 2 {
            return fail(format!("num_known must be >= 2, got {}", self.num_known));
        }
        if !(0.0..=1.0).contains(&self.cloud_conf) {
            return fail(format!("cloud_conf = {} is outside [0, 1]", self.cloud_conf));
        }
        for (name, sd) in [
            ("conf_correct_sd", self.conf_correct_sd),
            ("conf_wrong_sd", self.conf_wrong_sd),
            ("phi_boundary_sd", self.phi_boundary_sd),
            ("phi_within_sd", self.phi_within_sd),
        ] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return fail(format!("{name} = {sd} must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Inclusive bounds on a coherence interval's length.
    pub fn interval_bounds(&self) -> (usize, usize) {
        let t = self.horizon as f64;
        let lo = (t * self.coherence_frac_min).ceil().max(1.0) as usize;
        let hi = (t * self.coherence_frac_max).ceil().max(1.0) as usize;
        (lo, hi.max(lo))
    }

    pub fn is_known(&self, identity: Label) -> bool {
        identity < self.num_known
    }
}

/// Whether `n` is a sum of lengths in `[lo, hi]` (zero counts).
fn tileable(n: usize, lo: usize, hi: usize) -> bool {
    n == 0 || (1..=n / lo).any(|k| k * lo <= n && n <= k * hi)
}

/// Splits `[0, horizon)` into interval lengths in `[lo, hi]`.
///
/// Each length is uniform over the admissible values that keep the remainder
/// exactly tileable, so no interval falls outside the bounds. When the
/// horizon itself cannot be tiled the final interval is truncated.
pub(crate) fn draw_intervals<R: Rng>(rng: &mut R, horizon: usize, lo: usize, hi: usize) -> Vec<usize> {
    let exact = tileable(horizon, lo, hi);
    let mut lengths = Vec::new();
    let mut left = horizon;
    while left > 0 {
        let choices: Vec<usize> = (lo..=hi.min(left)).filter(|&l| !exact || tileable(left - l, lo, hi)).collect();
        let len = if choices.is_empty() { left } else { choices[rng.random_range(0..choices.len())] };
        lengths.push(len);
        left -= len;
    }
    lengths
}

fn clamped_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let x = if sd > 0.0 { Normal::new(mean, sd).expect("validated sd").sample(rng) } else { mean };
    x.clamp(lo, hi)
}

/// Generates one trace; deterministic given `(cfg, seed)`.
pub fn generate_trace(cfg: &GenConfig, seed: u64) -> Result<Trace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.interval_bounds();
    let lengths = draw_intervals(&mut rng, cfg.horizon, lo, hi);

    let mut steps = Vec::with_capacity(cfg.horizon);
    let mut prev: Option<Label> = None;
    for len in lengths {
        let identity = match prev {
            None => rng.random_range(0..cfg.num_identities),
            Some(p) if cfg.num_identities > 1 => {
                let k = rng.random_range(0..cfg.num_identities - 1);
                if k >= p { k + 1 } else { k }
            }
            Some(p) => p,
        };
        prev = Some(identity);
        for i in 0..len {
            let correct = cfg.is_known(identity) && rng.random_bool(cfg.p_correct_known);
            let robot_pred = if correct {
                identity
            } else if cfg.is_known(identity) {
                let k = rng.random_range(0..cfg.num_known - 1);
                if k >= identity { k + 1 } else { k }
            } else {
                rng.random_range(0..cfg.num_known)
            };
            let robot_conf = if correct {
                clamped_normal(&mut rng, cfg.conf_correct_mean, cfg.conf_correct_sd, 0.0, 1.0)
            } else {
                clamped_normal(&mut rng, cfg.conf_wrong_mean, cfg.conf_wrong_sd, 0.0, 1.0)
            };
            let phi = if i == 0 {
                clamped_normal(&mut rng, cfg.phi_boundary_mean, cfg.phi_boundary_sd, 0.0, f64::INFINITY)
            } else {
                clamped_normal(&mut rng, cfg.phi_within_mean, cfg.phi_within_sd, 0.0, f64::INFINITY)
            };
            steps.push(TraceStep {
                true_label: identity,
                robot_pred,
                robot_conf,
                cloud_pred: identity,
                cloud_conf: cfg.cloud_conf,
                phi,
            });
        }
    }
    Ok(Trace::new(format!("trace-{seed}"), seed, steps))
}

/// Traces for seeds `base_seed .. base_seed + n_traces`, in seed order.
pub fn generate_dataset(cfg: &GenConfig, n_traces: usize, base_seed: u64) -> Result<Vec<Trace>> {
    if n_traces == 0 {
        return Err(OffloadError::Config("n_traces must be >= 1".into()));
    }
    cfg.validate()?;
    (0..n_traces as u64).into_par_iter().map(|i| generate_trace(cfg, base_seed + i)).collect()
}

/// Recovers interval lengths of a trace from label changes.
pub fn interval_lengths(trace: &Trace) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut prev = None;
    for s in &trace.steps {
        if prev == Some(s.true_label) {
            *out.last_mut().unwrap() += 1;
        } else {
            out.push(1);
        }
        prev = Some(s.true_label);
    }
    out
}
