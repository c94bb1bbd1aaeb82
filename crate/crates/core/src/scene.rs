//! Deterministic synthetic road scenes: bent road strips rasterized over a
//! textured background. A desk-scale stand-in for aerial imagery; the
//! geometry is exposed so tests can re-rasterize it independently.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{CoreError, Result};
use crate::hash::Fnv64;
use crate::nn::standard_normal;
use crate::tensor::{LabelMap, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    /// Square image edge in pixels; at least 32 so the model zoo's
    /// downsampling has room.
    pub image_size: usize,
    /// Inclusive road strip width range in pixels.
    pub road_width_range: (usize, usize),
    /// Inclusive range for the number of roads; (0, 0) draws none.
    pub n_roads_range: (usize, usize),
    /// Per-pixel Gaussian noise added to every channel.
    pub noise_std: f64,
    /// Separates the texture stream from the geometry stream.
    pub texture_seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            image_size: 48,
            road_width_range: (3, 7),
            n_roads_range: (1, 3),
            noise_std: 0.06,
            texture_seed: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(CoreError::Config(format!(
                "image_size must be >= 32 (model zoo downsampling), got {}",
                self.image_size
            )));
        }
        if self.road_width_range.0 == 0 || self.road_width_range.0 > self.road_width_range.1 {
            return Err(CoreError::Config(format!(
                "road_width_range must be an ordered pair of positive widths, got {:?}",
                self.road_width_range
            )));
        }
        if self.n_roads_range.0 > self.n_roads_range.1 {
            return Err(CoreError::Config(format!(
                "n_roads_range must be ordered, got {:?}",
                self.n_roads_range
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(CoreError::Config(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// One road: a polyline with a rasterization half-width.
#[derive(Clone, Debug, PartialEq)]
pub struct Strip {
    pub points: Vec<(f64, f64)>,
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SceneGeometry {
    pub strips: Vec<Strip>,
}

fn stream_rng(seed: u64, tag: &[u8]) -> ChaCha8Rng {
    let mut h = Fnv64::new();
    h.update_u64(seed);
    h.update(tag);
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Road layout as a pure function of `(params, seed)`.
pub fn scene_geometry(params: &SceneParams, seed: u64) -> Result<SceneGeometry> {
    params.validate()?;
    let mut rng = stream_rng(seed, b"geometry");
    let n = params.image_size as f64;
    let n_roads = rng.random_range(params.n_roads_range.0..=params.n_roads_range.1);
    let mut strips = Vec::with_capacity(n_roads);
    for _ in 0..n_roads {
        let width = rng.random_range(params.road_width_range.0..=params.road_width_range.1);
        // A bent polyline through a random interior point, long enough to
        // cross the full frame in any direction.
        let cx = rng.random::<f64>() * n;
        let cy = rng.random::<f64>() * n;
        let angle = rng.random::<f64>() * core::f64::consts::PI;
        let (dx, dy) = (libm::cos(angle), libm::sin(angle));
        let half_len = n;
        let bend = standard_normal(&mut rng) * 0.12 * n;
        // perpendicular offset applied to the endpoints, bending at the centre
        let (px, py) = (-dy, dx);
        let p0 = (
            cx - dx * half_len + px * bend,
            cy - dy * half_len + py * bend,
        );
        let p1 = (cx, cy);
        let p2 = (
            cx + dx * half_len + px * bend,
            cy + dy * half_len + py * bend,
        );
        strips.push(Strip {
            points: vec![p0, p1, p2],
            half_width: width as f64 / 2.0,
        });
    }
    Ok(SceneGeometry { strips })
}

/// Distance from a point to the segment `a`-`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    libm::sqrt(dx * dx + dy * dy)
}

/// A pixel is road iff its centre lies within a strip's half-width of the
/// strip polyline.
pub fn rasterize_mask(geometry: &SceneGeometry, image_size: usize) -> LabelMap {
    let mut mask = LabelMap::zeros(&[image_size, image_size]);
    let data = mask.data_mut();
    for y in 0..image_size {
        for x in 0..image_size {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let road = geometry.strips.iter().any(|s| {
                s.points
                    .windows(2)
                    .any(|seg| point_segment_distance(p, seg[0], seg[1]) <= s.half_width)
            });
            if road {
                data[y * image_size + x] = 1;
            }
        }
    }
    mask
}

/// Generates one synthetic scene with its mask. Bit-deterministic in
/// `(params, seed)`.
pub fn generate_synthetic_scene(params: &SceneParams, seed: u64) -> Result<Sample> {
    let geometry = scene_geometry(params, seed)?;
    let n = params.image_size;
    let mask = rasterize_mask(&geometry, n);

    let mut tex = stream_rng(seed ^ params.texture_seed.rotate_left(13), b"texture");
    // per-scene appearance: background tint, road brightness, low-frequency
    // undulation; the spread across scenes is what makes extra unlabelled
    // scenes informative
    let bg = [
        0.20 + 0.25 * tex.random::<f64>(),
        0.30 + 0.30 * tex.random::<f64>(),
        0.15 + 0.20 * tex.random::<f64>(),
    ];
    let road_level = 0.45 + 0.30 * tex.random::<f64>();
    let (fx, fy) = (
        (1.0 + 3.0 * tex.random::<f64>()) * core::f64::consts::PI / n as f64,
        (1.0 + 3.0 * tex.random::<f64>()) * core::f64::consts::PI / n as f64,
    );
    let (phx, phy) = (
        tex.random::<f64>() * core::f64::consts::TAU,
        tex.random::<f64>() * core::f64::consts::TAU,
    );

    let mut image = Tensor::zeros(&[3, n, n]);
    let img = image.data_mut();
    let m = mask.data();
    for y in 0..n {
        for x in 0..n {
            let pix = y * n + x;
            let wave = 0.06 * libm::sin(fx * x as f64 + phx) * libm::cos(fy * y as f64 + phy);
            for (c, &base) in bg.iter().enumerate() {
                let mut v = if m[pix] == 1 { road_level } else { base + wave };
                v += params.noise_std * standard_normal(&mut tex);
                img[c * n * n + pix] = v.clamp(0.0, 1.0);
            }
        }
    }

    let sample = Sample {
        id: format!("synth-{seed:06}"),
        image,
        mask: Some(mask),
    };
    sample.validate()?;
    Ok(sample)
}
