use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{EnvironmentMap, Vec3};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// A few low-frequency colour waves.
    Smooth,
    /// Many dense waves; nearby directions differ strongly.
    HighFrequency,
}

struct Wave {
    dir: Vec3,
    freq: f64,
    phase: f64,
    amp: [f64; 3],
}

/// Random sum of plane waves over the sphere of directions.
pub fn procedural_env(seed: u64, kind: EnvKind, height: usize) -> Result<EnvironmentMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (count, freq, amp) = match kind {
        EnvKind::Smooth => (6, 1.0..4.0, 0.08..0.2),
        EnvKind::HighFrequency => (12, 6.0..20.0, 0.05..0.15),
    };
    let waves: Vec<Wave> = (0..count)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            Wave {
                dir: Vec3::new(r * a.cos(), r * a.sin(), z),
                freq: rng.random_range(freq.clone()),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: [
                    rng.random_range(amp.clone()),
                    rng.random_range(amp.clone()),
                    rng.random_range(amp.clone()),
                ],
            }
        })
        .collect();
    let base = [
        rng.random_range(0.6..0.9),
        rng.random_range(0.6..0.9),
        rng.random_range(0.6..0.9),
    ];
    EnvironmentMap::from_fn(height, |d| {
        let mut c = base;
        for w in &waves {
            let s = (w.freq * w.dir.dot(d) + w.phase).sin();
            for k in 0..3 {
                c[k] += w.amp[k] * s;
            }
        }
        c.map(|v| v.max(0.02) as f32)
    })
}
