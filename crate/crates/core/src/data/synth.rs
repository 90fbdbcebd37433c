//! Deterministic synthetic lesion images.
//!
//! Each sample is a dark background with 1-3 axis-aligned ellipses of
//! elevated intensity plus optional Gaussian pixel noise; the mask is the
//! exact (noise-free) ellipse-interior indicator. Everything is a pure
//! function of the seed.

use std::path::Path;

use super::manifest::{partition, Manifest, ManifestEntry};
use super::pgm::write_pgm;
use super::Sample;
use crate::error::{Error, Result};
use crate::rng::Xoshiro256pp;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    /// Square image side; must be divisible by 16 to feed the model.
    pub size: usize,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            count: 16,
            size: 64,
            noise_sigma: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::InvalidConfig("count must be >= 1".to_string()));
        }
        if self.size == 0 || self.size % 16 != 0 {
            return Err(Error::InvalidConfig(format!(
                "size {} must be a positive multiple of 16",
                self.size
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".to_string()));
        }
        Ok(())
    }
}

/// Axis-aligned ellipse in pixel coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub intensity: f64,
}

impl Ellipse {
    /// Interior test for the continuous point (x, y).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

/// The geometry behind one sample: background level plus lesions in draw
/// order (later ellipses paint over earlier ones).
#[derive(Clone, Debug)]
pub struct Scene {
    pub background: f64,
    pub ellipses: Vec<Ellipse>,
}

impl Scene {
    /// Draw a random scene. Parameter ranges keep lesions bright against
    /// the background, mostly inside the frame, and large enough that
    /// foreground pixels are not a vanishing class.
    pub fn sample(rng: &mut Xoshiro256pp, size: usize) -> Scene {
        let s = size as f64;
        let background = rng.uniform(0.05, 0.15);
        let count = 1 + rng.below(3) as usize;
        let ellipses = (0..count)
            .map(|_| Ellipse {
                cx: rng.uniform(0.3 * s, 0.7 * s),
                cy: rng.uniform(0.3 * s, 0.7 * s),
                rx: rng.uniform(0.10 * s, 0.22 * s),
                ry: rng.uniform(0.10 * s, 0.22 * s),
                intensity: rng.uniform(0.55, 0.95),
            })
            .collect();
        Scene {
            background,
            ellipses,
        }
    }

    /// Render image and mask. Pixel (row, col) is tested at its center
    /// (col + 0.5, row + 0.5).
    pub fn render(&self, rng: &mut Xoshiro256pp, size: usize, noise_sigma: f64) -> Sample {
        let shape = Shape::new(1, 1, size, size);
        let mut image = Tensor::filled(shape, self.background);
        let mut mask = Tensor::zeros(shape);
        for row in 0..size {
            for col in 0..size {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                for e in &self.ellipses {
                    if e.contains(x, y) {
                        image.set(0, 0, row, col, e.intensity);
                        mask.set(0, 0, row, col, 1.0);
                    }
                }
            }
        }
        if noise_sigma > 0.0 {
            for v in image.data_mut() {
                *v = (*v + noise_sigma * rng.next_normal()).clamp(0.0, 1.0);
            }
        }
        Sample { image, mask }
    }
}

/// Generate `cfg.count` samples along with the scenes that produced them.
pub fn gen_synthetic_scenes(cfg: &SynthConfig) -> Result<Vec<(Sample, Scene)>> {
    cfg.validate()?;
    let mut rng = Xoshiro256pp::seeded(cfg.seed);
    Ok((0..cfg.count)
        .map(|_| {
            let scene = Scene::sample(&mut rng, cfg.size);
            let sample = scene.render(&mut rng, cfg.size, cfg.noise_sigma);
            (sample, scene)
        })
        .collect())
}

/// Generate `cfg.count` samples.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    Ok(gen_synthetic_scenes(cfg)?.into_iter().map(|(s, _)| s).collect())
}

/// Generate a dataset and write it to `dir` as `img_%05d.pgm` /
/// `msk_%05d.pgm` pairs plus `manifest.csv`, with samples assigned to
/// `clients` shards.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, clients: usize) -> Result<Manifest> {
    let samples = gen_synthetic(cfg)?;
    let assignment = partition(samples.len(), clients, cfg.seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut entries = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let image = format!("img_{i:05}.pgm");
        let mask = format!("msk_{i:05}.pgm");
        write_pgm(&dir.join(&image), &sample.image)?;
        write_pgm(&dir.join(&mask), &sample.mask)?;
        entries.push(ManifestEntry {
            image,
            mask,
            client: assignment[i],
        });
    }
    let manifest = Manifest::new(dir.to_path_buf(), entries)?;
    manifest.save()?;
    Ok(manifest)
}
