use image::RgbImage;

use super::{EmbedError, EmbeddingBackend};

/// Deterministic pseudo-embedding for data-free pipelines.
///
/// For an image of `W×H` and grid `G`:
///
/// 1. Block `(by, bx)` spans rows `[by·H/G, (by+1)·H/G)` and columns
///    `[bx·W/G, (bx+1)·W/G)` (integer division). For channel `c`,
///    `u[(by·G + bx)·3 + c] = mean(channel c over block) / 255 − 0.5`, giving
///    `K = 3·G²` inputs.
/// 2. `w[j][k] = 2·(splitmix64(seed ⊕ (j·K + k)) >> 11) / 2⁵³ − 1`.
/// 3. `v[j] = 2·√(3/K) · Σₖ w[j][k]·u[k]`, evaluated in `f64` and rounded to `f32`.
///
/// `splitmix64(x)`: `z = x + 0x9E3779B97F4A7C15`,
/// `z = (z ⊕ z≫30)·0xBF58476D1CE4E5B9`, `z = (z ⊕ z≫27)·0x94D049BB133111EB`,
/// result `z ⊕ z≫31` (all wrapping 64-bit).
#[derive(Debug, Clone)]
pub struct StubHashBackend {
    dimension: usize,
    grid: u32,
    seed: u64,
    fingerprint: String,
    projection: Vec<f64>,
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StubHashBackend {
    pub const ID: &'static str = "stub-hash";

    pub fn new(dimension: usize, grid: u32, seed: u64) -> Self {
        assert!(dimension > 0 && grid > 0, "stub backend needs positive dimension and grid");
        let k = 3 * (grid as usize).pow(2);
        let projection = (0..dimension * k)
            .map(|i| {
                let h = splitmix64(seed ^ i as u64);
                2.0 * (h >> 11) as f64 / (1u64 << 53) as f64 - 1.0
            })
            .collect();
        Self {
            dimension,
            grid,
            seed,
            fingerprint: format!("{}-d{dimension}-g{grid}-s{seed}", Self::ID),
            projection,
        }
    }

    fn block_means(&self, image: &RgbImage) -> Vec<f64> {
        let g = self.grid;
        let (w, h) = image.dimensions();
        let mut u = Vec::with_capacity(3 * (g * g) as usize);
        for by in 0..g {
            let (y0, y1) = (by * h / g, (by + 1) * h / g);
            for bx in 0..g {
                let (x0, x1) = (bx * w / g, (bx + 1) * w / g);
                let mut sums = [0u64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.get_pixel(x, y).0;
                        for c in 0..3 {
                            sums[c] += p[c] as u64;
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                for s in sums {
                    u.push(s as f64 / n / 255.0 - 0.5);
                }
            }
        }
        u
    }
}

impl EmbeddingBackend for StubHashBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, image: &RgbImage) -> Result<Vec<f32>, EmbedError> {
        let (w, h) = image.dimensions();
        if w < self.grid || h < self.grid {
            return Err(EmbedError::BackendFailure(format!(
                "{w}×{h} image is smaller than the {}×{} block grid",
                self.grid, self.grid
            )));
        }
        let u = self.block_means(image);
        let k = u.len();
        let gain = 2.0 * (3.0 / k as f64).sqrt();
        Ok(self
            .projection
            .chunks_exact(k)
            .map(|row| (gain * row.iter().zip(&u).map(|(w, x)| w * x).sum::<f64>()) as f32)
            .collect())
    }
}

impl StubHashBackend {
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of splitmix64 seeded with 0 (state advanced by the golden gamma).
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn mid_grey_embeds_to_zero() {
        // 127.5 is not representable; a checkerboard of 127/128 averages to it.
        let img = RgbImage::from_fn(16, 16, |x, y| {
            if (x + y) % 2 == 0 {
                Rgb([127; 3])
            } else {
                Rgb([128; 3])
            }
        });
        let v = StubHashBackend::new(32, 8, 1).embed(&img).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-6), "{v:?}");
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let img = RgbImage::from_fn(24, 24, |x, y| Rgb([(x * 10) as u8, (y * 10) as u8, 50]));
        let a = StubHashBackend::new(64, 8, 3);
        assert_eq!(a.embed(&img).unwrap(), a.embed(&img).unwrap());
        assert_ne!(a.embed(&img).unwrap(), StubHashBackend::new(64, 8, 4).embed(&img).unwrap());
    }

    #[test]
    fn tiny_images_are_refused() {
        let img = RgbImage::new(4, 4);
        assert!(StubHashBackend::new(8, 8, 0).embed(&img).is_err());
    }
}
