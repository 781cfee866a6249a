//! Surrogate recordings in the telemonitoring layout, for smoke runs and
//! tests when the real file is not at hand.
//!
//! Each subject has a baseline motor score drifting linearly over the trial,
//! and a latent voice-impairment level that drives all 16 voice measures.
//! The derived measures keep the near-exact identities of the real table
//! (Jitter:DDP ≈ 3·Jitter:RAP, Shimmer:DDA ≈ 3·Shimmer:APQ3) up to rounding.
//! total_UPDRS is mostly linear in motor_UPDRS plus a non-linear voice term.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, VoiceRecord};
use crate::error::{Error, Result};
use crate::linalg::RandomSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub records: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 42,
            records: 5875,
            seed: 0,
        }
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.subjects == 0 || cfg.records < cfg.subjects {
        return Err(Error::Parameter(format!(
            "need 1 <= subjects <= records, got {} subjects, {} records",
            cfg.subjects, cfg.records
        )));
    }
    let mut rng = RandomSource::new(cfg.seed);
    let weights: Vec<f64> = (0..cfg.subjects).map(|_| rng.uniform_range(0.7, 1.3)).collect();
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| ((cfg.records as f64 * w / total).floor() as usize).max(1))
        .collect();
    let mut assigned: usize = counts.iter().sum();
    let mut s = 0;
    while assigned < cfg.records {
        counts[s % cfg.subjects] += 1;
        assigned += 1;
        s += 1;
    }
    while assigned > cfg.records {
        if counts[s % cfg.subjects] > 1 {
            counts[s % cfg.subjects] -= 1;
            assigned -= 1;
        }
        s += 1;
    }

    let mut records = Vec::with_capacity(cfg.records);
    for (sid, &count) in counts.iter().enumerate() {
        let age = rng.uniform_range(36.0, 86.0).floor();
        let sex = u8::from(rng.uniform() < 0.32);
        let base_motor = rng.uniform_range(6.0, 36.0);
        let slope = rng.uniform_range(-0.01, 0.05);
        let voice_level = rng.standard_normal();
        let offset = 3.0 * rng.standard_normal();
        let f0 = if sex == 1 { 200.0 } else { 125.0 } * (1.0 + 0.1 * rng.standard_normal());
        let mut times: Vec<f64> = (0..count).map(|_| rng.uniform_range(-5.0, 215.0)).collect();
        times.sort_by(f64::total_cmp);
        for t in times {
            let motor = (base_motor + slope * t + 1.5 * rng.standard_normal()).max(5.0);
            let u = 0.6 * voice_level + 0.3 * (motor - 21.0) / 8.0 + 0.5 * rng.standard_normal();
            let mut n = || rng.standard_normal();
            let jitter = (-5.3 + 0.35 * u + 0.2 * n()).exp();
            let rap = jitter * 0.45 * (0.1 * n()).exp();
            let ppq5 = jitter * 0.5 * (0.1 * n()).exp();
            let shimmer = (-3.4 + 0.3 * u + 0.2 * n()).exp();
            let apq3 = shimmer * 0.5 * (0.08 * n()).exp();
            let apq5 = shimmer * 0.58 * (0.08 * n()).exp();
            let apq11 = shimmer * 0.8 * (0.1 * n()).exp();
            let shimmer_db = 20.0 * (1.0 + shimmer).log10() * 1.05 * (0.05 * n()).exp();
            let nhr = (-3.8 + 0.5 * u + 0.3 * n()).exp();
            let hnr = 21.7 - 3.0 * u + 2.0 * n();
            let rpde = (0.54 + 0.05 * u + 0.08 * n()).clamp(0.15, 0.99);
            let dfa = (0.65 + 0.01 * u + 0.07 * n()).clamp(0.5, 0.9);
            let ppe = (0.22 + 0.05 * u + 0.06 * n()).clamp(0.02, 0.75);
            let total = 1.25 * motor + 2.0 + offset
                + 2.5 * u.tanh() * (age - 60.0) / 20.0
                + 1.2 * f64::from(sex) * u * u
                + 1.2 * n();
            let voice_features = [
                round_to(jitter, 5),
                round_to(jitter / f0, 8),
                round_to(rap, 5),
                round_to(ppq5, 5),
                round_to(3.0 * rap, 5),
                round_to(shimmer, 5),
                round_to(shimmer_db, 3),
                round_to(apq3, 5),
                round_to(apq5, 5),
                round_to(apq11, 5),
                round_to(3.0 * apq3, 5),
                round_to(nhr, 6),
                round_to(hnr, 3),
                round_to(rpde, 5),
                round_to(dfa, 5),
                round_to(ppe, 5),
            ];
            records.push(VoiceRecord {
                subject_id: sid as u32 + 1,
                age,
                sex,
                test_time: round_to(t, 4),
                motor_updrs: round_to(motor, 4),
                total_updrs: round_to(total.max(7.0), 4),
                voice_features,
            });
        }
    }
    Ok(Dataset::new(records))
}
