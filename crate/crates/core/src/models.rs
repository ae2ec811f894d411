//! Built-in synthetic velocity models on the unit square, so experiments run
//! without external data. All are deterministic given their seed.

use crate::grid::{ComplexGrid2D, GridError, SquaredSlownessModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Homogeneous,
    /// `c = 1 + 0.1 x + 0.1 z`
    Gradient,
    /// Gradient background plus random Gaussian bumps.
    SmoothInclusions { seed: u64 },
    /// Gradient background plus random piecewise-constant disks and boxes.
    RoughInclusions { seed: u64 },
    /// Gradient background with a fast C-shaped wall trapping waves inside.
    Cavity { wall_speed: f64 },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Homogeneous => "homogeneous",
            ModelKind::Gradient => "gradient",
            ModelKind::SmoothInclusions { .. } => "smooth",
            ModelKind::RoughInclusions { .. } => "rough",
            ModelKind::Cavity { .. } => "cavity",
        }
    }

    /// Velocity function on `[0, 1]^2`.
    pub fn velocity(&self) -> Box<dyn Fn(f64, f64) -> f64 + Send + Sync> {
        let gradient = |x: f64, z: f64| 1.0 + 0.1 * x + 0.1 * z;
        match *self {
            ModelKind::Homogeneous => Box::new(|_, _| 1.0),
            ModelKind::Gradient => Box::new(gradient),
            ModelKind::SmoothInclusions { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bumps: Vec<(f64, f64, f64, f64)> = (0..8)
                    .map(|_| {
                        (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(-0.25..0.25), rng.random_range(0.05..0.12))
                    })
                    .collect();
                Box::new(move |x, z| {
                    let bump: f64 = bumps.iter().map(|&(cx, cz, a, w)| a * (-((x - cx).powi(2) + (z - cz).powi(2)) / (w * w)).exp()).sum();
                    gradient(x, z) + bump
                })
            }
            ModelKind::RoughInclusions { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let shapes: Vec<Shape> = (0..10)
                    .map(|i| {
                        let (cx, cz) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
                        let speed = rng.random_range(1.3..1.8);
                        if i % 2 == 0 {
                            Shape::Disk { cx, cz, r: rng.random_range(0.04..0.12), speed }
                        } else {
                            Shape::Box { cx, cz, hw: rng.random_range(0.04..0.15), hh: rng.random_range(0.02..0.06), speed }
                        }
                    })
                    .collect();
                Box::new(move |x, z| shapes.iter().rev().find_map(|s| s.speed_at(x, z)).unwrap_or_else(|| gradient(x, z)))
            }
            ModelKind::Cavity { wall_speed } => Box::new(move |x, z| {
                let (dx, dz) = (x - 0.5, z - 0.5);
                let r = (dx * dx + dz * dz).sqrt();
                let angle = dz.atan2(dx).abs();
                // annulus with a narrow mouth opening toward +x
                if (0.22..=0.3).contains(&r) && angle > PI / 10.0 {
                    wall_speed
                } else {
                    gradient(x, z)
                }
            }),
        }
    }

    pub fn build(&self, grid: &ComplexGrid2D) -> Result<SquaredSlownessModel, GridError> {
        SquaredSlownessModel::from_velocity(grid, self.velocity())
    }
}

enum Shape {
    Disk { cx: f64, cz: f64, r: f64, speed: f64 },
    Box { cx: f64, cz: f64, hw: f64, hh: f64, speed: f64 },
}

impl Shape {
    fn speed_at(&self, x: f64, z: f64) -> Option<f64> {
        match *self {
            Shape::Disk { cx, cz, r, speed } => ((x - cx).powi(2) + (z - cz).powi(2) <= r * r).then_some(speed),
            Shape::Box { cx, cz, hw, hh, speed } => ((x - cx).abs() <= hw && (z - cz).abs() <= hh).then_some(speed),
        }
    }
}
