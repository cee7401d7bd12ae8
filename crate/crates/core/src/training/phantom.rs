use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

/// Random ellipse phantoms on `[-1, 1]²`, clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Intensity of the first (body) ellipse.
    pub body_intensity: (f64, f64),
    /// Intensity added by each inner ellipse; may be negative.
    pub inner_intensity: (f64, f64),
    pub inner_axis: (f64, f64),
    pub inner_center: f64,
    pub background: bool,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            height: 32,
            width: 32,
            min_ellipses: 3,
            max_ellipses: 7,
            body_intensity: (0.45, 0.75),
            inner_intensity: (-0.3, 0.35),
            inner_axis: (0.08, 0.4),
            inner_center: 0.45,
            background: true,
        }
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One phantom drawn from `rng`; 2x2 supersampled per pixel.
pub fn gen_phantom(cfg: &PhantomConfig, rng: &mut impl Rng) -> Tensor {
    let count = if cfg.max_ellipses > cfg.min_ellipses {
        rng.random_range(cfg.min_ellipses..=cfg.max_ellipses)
    } else {
        cfg.min_ellipses
    };
    let mut ellipses = Vec::with_capacity(count);
    for k in 0..count {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let e = if k == 0 {
            Ellipse {
                cx: rng.random_range(-0.1..0.1),
                cy: rng.random_range(-0.1..0.1),
                a: rng.random_range(0.6..0.85),
                b: rng.random_range(0.5..0.8),
                cos: theta.cos(),
                sin: theta.sin(),
                value: uniform(rng, cfg.body_intensity),
            }
        } else {
            Ellipse {
                cx: uniform(rng, (-cfg.inner_center, cfg.inner_center)),
                cy: uniform(rng, (-cfg.inner_center, cfg.inner_center)),
                a: uniform(rng, cfg.inner_axis),
                b: uniform(rng, cfg.inner_axis),
                cos: theta.cos(),
                sin: theta.sin(),
                value: uniform(rng, cfg.inner_intensity),
            }
        };
        ellipses.push(e);
    }
    let (b0, gx, gy) = if cfg.background {
        (rng.random_range(0.08..0.16), rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04))
    } else {
        (0.0, 0.0, 0.0)
    };

    let (h, w) = (cfg.height, cfg.width);
    Tensor::from_fn(&[h, w, 1], |idx| {
        let (i, j) = (idx / w, idx % w);
        let mut acc = 0.0;
        for si in 0..2 {
            for sj in 0..2 {
                let y = -1.0 + (2 * i + 1) as f64 / h as f64 + (si as f64 - 0.5) / h as f64;
                let x = -1.0 + (2 * j + 1) as f64 / w as f64 + (sj as f64 - 0.5) / w as f64;
                let mut v = b0 + gx * x + gy * y;
                for e in &ellipses {
                    if e.contains(x, y) {
                        v += e.value;
                    }
                }
                acc += v.clamp(0.0, 1.0);
            }
        }
        acc / 4.0
    })
}

/// `count` phantoms from a dedicated stream seeded with `seed`.
pub fn generate_dataset(cfg: &PhantomConfig, count: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| gen_phantom(cfg, &mut rng)).collect()
}
