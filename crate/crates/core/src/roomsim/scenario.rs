//! Random room, array and source geometry for the speaker-extraction task.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rir::{distance, Point, Room};
use crate::error::{Error, Result};

pub const MAX_ATTEMPTS: usize = 10_000;
/// Tries per interferer segment before the whole scenario is redrawn.
const SEGMENT_TRIES: usize = 1_000;

/// Circular array in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayPose {
    pub center: Point,
    /// Radians; microphone 0 and the target bearing point along this angle.
    pub rotation: f64,
    pub channels: usize,
    pub diameter: f64,
}

impl ArrayPose {
    /// Microphone `ℓ` sits at angle `rotation + 2πℓ/C` on the circle.
    pub fn mic_positions(&self) -> Vec<Point> {
        let r = self.diameter / 2.0;
        (0..self.channels)
            .map(|l| {
                let a = self.rotation + 2.0 * PI * l as f64 / self.channels as f64;
                [self.center[0] + r * a.cos(), self.center[1] + r * a.sin(), self.center[2]]
            })
            .collect()
    }

    /// Point at `distance` meters and `angle_deg` relative to the array bearing,
    /// at array height.
    pub fn point_at(&self, angle_deg: f64, distance: f64) -> Point {
        let a = self.rotation + angle_deg.to_radians();
        [
            self.center[0] + distance * a.cos(),
            self.center[1] + distance * a.sin(),
            self.center[2],
        ]
    }

    /// Horizontal bearing of `p` relative to the array, in degrees within `[0, 360)`.
    pub fn bearing_deg(&self, p: Point) -> f64 {
        let a = (p[1] - self.center[1]).atan2(p[0] - self.center[0]) - self.rotation;
        a.to_degrees().rem_euclid(360.0)
    }

    pub fn horizontal_distance(&self, p: Point) -> f64 {
        ((p[0] - self.center[0]).powi(2) + (p[1] - self.center[1]).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub width: (f64, f64),
    pub length: (f64, f64),
    pub height: (f64, f64),
    pub t60: (f64, f64),
    pub channels: usize,
    pub array_diameter: f64,
    pub array_height: f64,
    pub wall_clearance: f64,
    pub target_distance: (f64, f64),
    pub interferers: usize,
    /// Half-width of the interferer-free sector around the target bearing.
    pub free_sector_deg: f64,
    pub min_interferer_distance: f64,
    pub interferer_height_mean: f64,
    pub interferer_height_std: f64,
    /// Minimum distance of any source from a wall.
    pub source_wall_margin: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            width: (2.5, 5.0),
            length: (3.0, 9.0),
            height: (2.2, 3.5),
            t60: (0.2, 0.5),
            channels: 3,
            array_diameter: 0.10,
            array_height: 1.5,
            wall_clearance: 1.0,
            target_distance: (0.3, 1.0),
            interferers: 5,
            free_sector_deg: 20.0,
            min_interferer_distance: 1.0,
            interferer_height_mean: 1.6,
            interferer_height_std: 0.08,
            source_wall_margin: 0.1,
        }
    }
}

impl ScenarioConfig {
    /// Angular segment `[lo, hi)` in degrees assigned to interferer `j`.
    pub fn segment(&self, j: usize) -> (f64, f64) {
        let span = (360.0 - 2.0 * self.free_sector_deg) / self.interferers as f64;
        let lo = self.free_sector_deg + span * j as f64;
        (lo, lo + span)
    }

    fn validate(&self) -> Result<()> {
        let ranges = [self.width, self.length, self.height, self.t60, self.target_distance];
        if ranges.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && *a > 0.0 && a <= b)) {
            return Err(Error::InvalidArgument("scenario ranges must be positive and ordered".into()));
        }
        if !(2..=8).contains(&self.channels) {
            return Err(Error::InvalidArgument(format!("unsupported channel count {}", self.channels)));
        }
        if !(0.0..180.0).contains(&self.free_sector_deg) || self.interferer_height_std < 0.0 {
            return Err(Error::InvalidArgument("invalid sector or height distribution".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room: Room,
    pub array: ArrayPose,
    pub target: Point,
    pub interferers: Vec<Point>,
    pub rng_seed: u64,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Horizontal distance from the array centre to the nearest wall along `bearing_deg`.
fn wall_distance(room: &Room, array: &ArrayPose, bearing_deg: f64) -> f64 {
    let a = array.rotation + bearing_deg.to_radians();
    let (dx, dy) = (a.cos(), a.sin());
    let c = array.center;
    let tx = if dx > 0.0 { (room.width - c[0]) / dx } else if dx < 0.0 { -c[0] / dx } else { f64::INFINITY };
    let ty = if dy > 0.0 { (room.length - c[1]) / dy } else if dy < 0.0 { -c[1] / dy } else { f64::INFINITY };
    tx.min(ty)
}

/// Deterministic scenario for `seed`.
pub fn sample_scenario(seed: u64, config: &ScenarioConfig) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = sample_scenario_with(&mut rng, config)?;
    s.rng_seed = seed;
    Ok(s)
}

/// Draws geometry from `rng`, restarting from scratch whenever a constraint
/// cannot be met. `rng_seed` is left at 0.
pub fn sample_scenario_with(rng: &mut impl Rng, config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let heights = Normal::new(config.interferer_height_mean, config.interferer_height_std)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for _ in 0..MAX_ATTEMPTS {
        let room = Room {
            width: uniform(rng, config.width),
            length: uniform(rng, config.length),
            height: uniform(rng, config.height),
            t60: uniform(rng, config.t60),
        };
        let clear = config.wall_clearance;
        if room.width <= 2.0 * clear || room.length <= 2.0 * clear || room.height <= config.array_height {
            continue;
        }
        let array = ArrayPose {
            center: [
                uniform(rng, (clear, room.width - clear)),
                uniform(rng, (clear, room.length - clear)),
                config.array_height,
            ],
            rotation: rng.gen_range(0.0..2.0 * PI),
            channels: config.channels,
            diameter: config.array_diameter,
        };
        let target = array.point_at(0.0, uniform(rng, config.target_distance));
        if !room.contains(target, config.source_wall_margin) {
            continue;
        }
        let mut interferers = Vec::with_capacity(config.interferers);
        for j in 0..config.interferers {
            let (lo, hi) = config.segment(j);
            let m = config.source_wall_margin;
            let found = (0..SEGMENT_TRIES).find_map(|_| {
                let bearing = uniform(rng, (lo, hi));
                let reach = wall_distance(&room, &array, bearing) - m;
                if reach < config.min_interferer_distance {
                    return None;
                }
                let r = uniform(rng, (config.min_interferer_distance, reach));
                let mut p = array.point_at(bearing, r);
                p[2] = heights.sample(rng);
                room.contains(p, m).then_some(p)
            });
            match found {
                Some(p) => interferers.push(p),
                None => break,
            }
        }
        if interferers.len() == config.interferers {
            return Ok(Scenario {
                room,
                array,
                target,
                interferers,
                rng_seed: 0,
            });
        }
    }
    Err(Error::SamplingFailed { attempts: MAX_ATTEMPTS })
}

impl Scenario {
    /// Direct-path distance from the target to microphone 0.
    pub fn reference_distance(&self) -> f64 {
        distance(self.target, self.array.mic_positions()[0])
    }

    /// Checks every geometric constraint; returns the first violation.
    pub fn check(&self, config: &ScenarioConfig) -> std::result::Result<(), String> {
        let r = &self.room;
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !(within(r.width, config.width)
            && within(r.length, config.length)
            && within(r.height, config.height)
            && within(r.t60, config.t60))
        {
            return Err(format!("room out of range: {r:?}"));
        }
        let c = self.array.center;
        let clear = config.wall_clearance;
        if c[0] < clear || c[0] > r.width - clear || c[1] < clear || c[1] > r.length - clear {
            return Err(format!("array too close to a wall: {c:?}"));
        }
        if (c[2] - config.array_height).abs() > 1e-12 {
            return Err("array height".into());
        }
        let td = self.array.horizontal_distance(self.target);
        if !within(td, config.target_distance) {
            return Err(format!("target distance {td}"));
        }
        let tb = self.array.bearing_deg(self.target);
        if tb.min(360.0 - tb) > 1e-6 {
            return Err(format!("target bearing {tb}"));
        }
        if self.interferers.len() != config.interferers {
            return Err("interferer count".into());
        }
        for (j, p) in self.interferers.iter().enumerate() {
            let b = self.array.bearing_deg(*p);
            if b < config.free_sector_deg || b > 360.0 - config.free_sector_deg {
                return Err(format!("interferer {j} inside the free sector at {b}°"));
            }
            let (lo, hi) = config.segment(j);
            if b < lo || b >= hi {
                return Err(format!("interferer {j} outside its segment at {b}°"));
            }
            if self.array.horizontal_distance(*p) < config.min_interferer_distance {
                return Err(format!("interferer {j} too close"));
            }
            if !r.contains(*p, 0.0) {
                return Err(format!("interferer {j} outside the room"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_is_reproducible() {
        let c = ScenarioConfig::default();
        assert_eq!(sample_scenario(7, &c).unwrap(), sample_scenario(7, &c).unwrap());
        assert_ne!(sample_scenario(7, &c).unwrap(), sample_scenario(8, &c).unwrap());
    }

    #[test]
    fn segments_tile_the_free_region() {
        let c = ScenarioConfig::default();
        assert_eq!(c.segment(0), (20.0, 84.0));
        assert!((c.segment(4).1 - 340.0).abs() < 1e-12);
    }

    #[test]
    fn mic_zero_points_at_target() {
        let s = sample_scenario(3, &ScenarioConfig::default()).unwrap();
        let m0 = s.array.mic_positions()[0];
        assert!(s.array.bearing_deg(m0).min(360.0 - s.array.bearing_deg(m0)) < 1e-9);
        assert!((s.array.horizontal_distance(m0) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn infeasible_config_fails() {
        let c = ScenarioConfig {
            width: (2.5, 2.5),
            length: (3.0, 3.0),
            min_interferer_distance: 3.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_scenario_with(&mut rng, &c),
            Err(Error::SamplingFailed { attempts: MAX_ATTEMPTS })
        ));
    }
}
