//! Seeded weight samplers: Gaussian, ring (uniform on a sphere) and
//! uniform-cube, plus the counter scheme that expands one master seed into
//! independent per-trial seeds.
//!
//! All randomness flows through ChaCha20 seeded from a `u64`, so every sampler
//! is a pure function of its arguments and reproduces across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::tensor::{Shape, Tensor};

/// Name of the generator, recorded in run manifests and model metadata.
pub const RNG_NAME: &str = "chacha20 (rand_chacha 0.9), normals via rand_distr ziggurat";

pub type LabRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> LabRng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for item `index` of stream `stream` under `master`:
/// `splitmix64(splitmix64(master ^ rotl(stream, 32)) + index)`.
///
/// Seeds depend only on `(master, stream, index)`, never on scheduling.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream.rotate_left(32)).wrapping_add(index))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Gaussian,
    Ring,
    UniformCube,
}

impl DistKind {
    pub fn name(self) -> &'static str {
        match self {
            DistKind::Gaussian => "gaussian",
            DistKind::Ring => "ring",
            DistKind::UniformCube => "uniform_cube",
        }
    }

    pub fn is_isotropic(self) -> bool {
        !matches!(self, DistKind::UniformCube)
    }
}

/// Which distribution to draw from, its scale and seed.
///
/// `scale` is the standard deviation for `gaussian`, the radius for `ring`
/// and the half-width for `uniform_cube`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSpec {
    pub kind: DistKind,
    pub scale: f64,
    pub seed: u64,
}

impl DistSpec {
    pub fn new(kind: DistKind, scale: f64, seed: u64) -> Result<Self> {
        let spec = DistSpec { kind, scale, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(NfrError::InvalidSpec(format!(
                "scale must be positive and finite, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        DistSpec { seed, ..self }
    }

    pub fn with_scale(self, scale: f64) -> Self {
        DistSpec { scale, ..self }
    }

    fn expect_kind(&self, kind: DistKind) -> Result<()> {
        self.validate()?;
        if self.kind != kind {
            return Err(NfrError::InvalidSpec(format!(
                "sampler for {} called with a {} spec",
                kind.name(),
                self.kind.name()
            )));
        }
        Ok(())
    }
}

pub fn sample_gaussian(shape: &Shape, spec: &DistSpec) -> Result<Tensor> {
    spec.expect_kind(DistKind::Gaussian)?;
    let mut rng = rng_from_seed(spec.seed);
    let data = (0..shape.numel())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.scale * z
        })
        .collect();
    Tensor::new(shape.clone(), data)
}

/// `rows × cols` matrix whose rows are independent draws, uniform on the
/// sphere of radius `spec.scale` in `cols` dimensions (Gaussian draw rescaled
/// to the exact radius).
pub fn sample_ring(rows: usize, cols: usize, spec: &DistSpec) -> Result<Tensor> {
    spec.expect_kind(DistKind::Ring)?;
    if rows < 1 || cols < 1 {
        return Err(NfrError::InvalidShape(format!(
            "ring sampler needs rows, cols >= 1, got {rows}x{cols}"
        )));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut data = Vec::with_capacity(rows * cols);
    let mut row = vec![0.0; cols];
    for _ in 0..rows {
        let norm = loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let n = crate::tensor::norm2_slice(&row);
            if n > 0.0 {
                break n;
            }
        };
        data.extend(row.iter().map(|v| v * (spec.scale / norm)));
    }
    Tensor::new(Shape::new(vec![rows, cols])?, data)
}

pub fn sample_uniform_cube(shape: &Shape, spec: &DistSpec) -> Result<Tensor> {
    spec.expect_kind(DistKind::UniformCube)?;
    let mut rng = rng_from_seed(spec.seed);
    let dist = Uniform::new_inclusive(-spec.scale, spec.scale)
        .map_err(|e| NfrError::InvalidSpec(e.to_string()))?;
    let data = (0..shape.numel()).map(|_| rng.sample(dist)).collect();
    Tensor::new(shape.clone(), data)
}

/// Draw a `rows × cols` matrix of `rows` neuron weight vectors from any kind.
pub fn sample_rows(rows: usize, cols: usize, spec: &DistSpec) -> Result<Tensor> {
    let shape = Shape::new(vec![rows, cols])?;
    match spec.kind {
        DistKind::Gaussian => sample_gaussian(&shape, spec),
        DistKind::Ring => sample_ring(rows, cols, spec),
        DistKind::UniformCube => sample_uniform_cube(&shape, spec),
    }
}

/// Standard normal vector of the given shape, for inputs and fixtures.
pub fn standard_normal(shape: &Shape, seed: u64) -> Tensor {
    let spec = DistSpec {
        kind: DistKind::Gaussian,
        scale: 1.0,
        seed,
    };
    sample_gaussian(shape, &spec).expect("gaussian spec is valid")
}
