//! Seeded random configurations for the experiment suite.
//!
//! Every sampler is driven by a [`ChaCha8Rng`] seeded explicitly, so runs are
//! reproducible across platforms. The distributions match the orthogonality
//! measures of the basis families where one exists (uniform for Legendre,
//! arcsine for Chebyshev, uniform angles for the trigonometric family, and a
//! uniform-radius/uniform-direction product on the ball).

use crate::basis::{BasisFamily, Configuration, FamilyKind, Particle};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A single-particle sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum Distribution {
    /// Uniform on `[-1, 1]`.
    UniformInterval,
    /// Arcsine law on `[-1, 1]` (density `1/(pi sqrt(1 - x^2))`), drawn as
    /// `x = cos(pi u)` with `u` uniform. This is the Chebyshev weight.
    Arcsine,
    /// Uniform angle on `(-pi, pi]`.
    UniformTorus,
    /// Product measure on the ball of radius `r_cut`: radius uniform on
    /// `[0, r_cut]`, direction uniform on the unit sphere. The radial basis
    /// is orthonormal exactly under the uniform-radius marginal.
    Ball { r_cut: f64 },
}

impl Distribution {
    /// The sampling measure matching a family's domain (and, where one
    /// exists, its orthogonality weight).
    pub fn for_family<R: Real>(family: &BasisFamily<R>) -> Distribution {
        match family.kind() {
            FamilyKind::Monomial | FamilyKind::Legendre => Distribution::UniformInterval,
            FamilyKind::Chebyshev => Distribution::Arcsine,
            FamilyKind::Trigonometric => Distribution::UniformTorus,
            FamilyKind::Spherical | FamilyKind::SphericalEnvelope => Distribution::Ball {
                r_cut: family.r_cut().map_or(1.0, |r| r.to_f64_lossy()),
            },
        }
    }

    /// Draws one particle.
    pub fn sample_particle<R: Real>(&self, rng: &mut ChaCha8Rng) -> Particle<R> {
        match *self {
            Distribution::UniformInterval => {
                Particle::Line(R::of(rng.gen_range(-1.0..=1.0)))
            }
            Distribution::Arcsine => {
                let u: f64 = rng.gen();
                Particle::Line(R::of((std::f64::consts::PI * u).cos()))
            }
            Distribution::UniformTorus => {
                let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                Particle::Angle(R::of(theta))
            }
            Distribution::Ball { r_cut } => {
                let r = r_cut * rng.gen::<f64>();
                let z = rng.gen_range(-1.0..=1.0f64);
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).max(0.0).sqrt();
                Particle::Point([
                    R::of(r * s * phi.cos()),
                    R::of(r * s * phi.sin()),
                    R::of(r * z),
                ])
            }
        }
    }

    /// Draws a configuration of `j` particles.
    pub fn sample_configuration<R: Real>(
        &self,
        j: usize,
        rng: &mut ChaCha8Rng,
    ) -> Configuration<R> {
        Configuration {
            particles: (0..j).map(|_| self.sample_particle(rng)).collect(),
        }
    }

    /// Draws `count` configurations whose sizes cycle through `sizes`,
    /// starting from a fresh stream seeded with `seed`.
    pub fn sample_many<R: Real>(
        &self,
        count: usize,
        sizes: &JSpec,
        seed: u64,
    ) -> Vec<Configuration<R>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| self.sample_configuration(sizes.size_for(i), &mut rng))
            .collect()
    }
}

/// Particle counts for a batch of sampled configurations: either every
/// configuration has the same size, or sizes cycle deterministically through
/// an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JSpec {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl JSpec {
    /// The particle count assigned to the `i`-th configuration of a batch.
    pub fn size_for(&self, i: usize) -> usize {
        match *self {
            JSpec::Fixed(j) => j,
            JSpec::Range { min, max } => {
                let span = max.max(min) - min + 1;
                min + i % span
            }
        }
    }

    pub fn max_size(&self) -> usize {
        match *self {
            JSpec::Fixed(j) => j,
            JSpec::Range { min, max } => max.max(min),
        }
    }
}
