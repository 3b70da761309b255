//! Shoebox image-source room impulse responses.

use serde::{Deserialize, Serialize};

use crate::dsp::{add_delayed_impulse, impulse_span};
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MAX_ORDER_CAP: usize = 40;

pub type Point = [f64; 3];

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Shoebox room with one corner at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub t60: f64,
}

impl Room {
    pub fn dims(&self) -> [f64; 3] {
        [self.width, self.length, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.width * self.length * self.height
    }

    pub fn surface(&self) -> f64 {
        2.0 * (self.width * self.length + self.width * self.height + self.length * self.height)
    }

    /// Uniform wall absorption from Sabine's formula.
    pub fn absorption(&self) -> f64 {
        (0.161 * self.volume() / (self.surface() * self.t60)).min(1.0)
    }

    /// Pressure reflection coefficient `sqrt(1 − α)`.
    pub fn reflection_coefficient(&self) -> f64 {
        (1.0 - self.absorption()).max(0.0).sqrt()
    }

    /// Smallest order whose images reach past `c · t60`, capped.
    pub fn default_max_order(&self) -> usize {
        let min_dim = self.width.min(self.length).min(self.height);
        ((SPEED_OF_SOUND * self.t60 / min_dim).ceil() as usize).min(MAX_ORDER_CAP)
    }

    pub fn contains(&self, p: Point, margin: f64) -> bool {
        p.iter()
            .zip(self.dims())
            .all(|(x, d)| *x > margin && *x < d - margin)
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.width, self.length, self.height, self.t60]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("room parameters must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Point,
    pub reflections: u32,
}

/// All images of `src` with at most `max_order` wall reflections.
pub fn image_sources(room: &Room, src: Point, max_order: usize) -> Vec<ImageSource> {
    let dims = room.dims();
    let n = max_order as i64;
    // Per axis: (coordinate, reflection count) for every lattice index and parity.
    let axis: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|a| {
            let mut v = Vec::new();
            for q in -n..=n {
                for p in 0..2i64 {
                    let count = ((q - p).abs() + q.abs()) as u32;
                    if count as i64 <= n {
                        let x = (1 - 2 * p) as f64 * src[a] + 2.0 * q as f64 * dims[a];
                        v.push((x, count));
                    }
                }
            }
            v
        })
        .collect();
    let mut out = Vec::new();
    for &(x, cx) in &axis[0] {
        for &(y, cy) in &axis[1] {
            if (cx + cy) as usize > max_order {
                continue;
            }
            for &(z, cz) in &axis[2] {
                let count = cx + cy + cz;
                if count as usize <= max_order {
                    out.push(ImageSource {
                        position: [x, y, z],
                        reflections: count,
                    });
                }
            }
        }
    }
    out
}

/// Image-source RIR generator for one room.
#[derive(Debug, Clone)]
pub struct RirGenerator {
    pub room: Room,
    pub sample_rate: u32,
    pub max_order: usize,
    /// Wall reflection coefficient; zero gives the direct path only.
    pub beta: f64,
    /// Images farther than this are dropped (meters).
    pub max_distance: f64,
}

impl RirGenerator {
    pub fn for_room(room: Room, sample_rate: u32) -> Self {
        Self {
            room,
            sample_rate,
            max_order: room.default_max_order(),
            beta: room.reflection_coefficient(),
            max_distance: SPEED_OF_SOUND * room.t60,
        }
    }

    pub fn with_max_order(mut self, max_order: usize) -> Self {
        self.max_order = max_order;
        self
    }

    pub fn anechoic(mut self) -> Self {
        self.beta = 0.0;
        self.max_order = 0;
        self
    }

    /// One impulse response per microphone; images are enumerated once.
    ///
    /// Amplitudes are `β^reflections / distance`. The direct path is always
    /// kept, even beyond `max_distance`.
    pub fn generate(&self, src: Point, mics: &[Point]) -> Result<Vec<Vec<f64>>> {
        self.generate_with_lead(src, mics, 0)
    }

    /// Like [`generate`](Self::generate), but index `n` holds time `n − lead`
    /// so that interpolation taps before time zero are kept.
    pub fn generate_with_lead(&self, src: Point, mics: &[Point], lead: usize) -> Result<Vec<Vec<f64>>> {
        self.room.validate()?;
        if !self.room.contains(src, 0.0) {
            return Err(Error::OutsideRoom { what: "source", pos: src });
        }
        for m in mics {
            if !self.room.contains(*m, 0.0) {
                return Err(Error::OutsideRoom { what: "microphone", pos: *m });
            }
        }
        let order = if self.beta == 0.0 { 0 } else { self.max_order };
        let images = image_sources(&self.room, src, order);
        let fs = self.sample_rate as f64;
        let mut out = Vec::with_capacity(mics.len());
        for &mic in mics {
            let direct = distance(src, mic);
            let limit = self.max_distance.max(direct);
            let mut taps: Vec<(f64, f64)> = Vec::new();
            for im in &images {
                let d = distance(im.position, mic);
                if d > limit {
                    continue;
                }
                let gain = if im.reflections == 0 {
                    1.0
                } else {
                    self.beta.powi(im.reflections as i32)
                };
                if gain == 0.0 {
                    continue;
                }
                taps.push((d / SPEED_OF_SOUND * fs + lead as f64, gain / d));
            }
            let len = taps.iter().map(|t| impulse_span(t.0)).max().unwrap_or(1);
            let mut h = vec![0.0; len];
            for (delay, gain) in taps {
                add_delayed_impulse(&mut h, delay, gain);
            }
            out.push(h);
        }
        Ok(out)
    }
}

/// RIR from `src` to `mic` with images up to `max_order`.
pub fn image_source_rir(room: &Room, src: Point, mic: Point, max_order: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let generator = RirGenerator::for_room(*room, sample_rate).with_max_order(max_order);
    Ok(generator.generate(src, &[mic])?.remove(0))
}

/// Schroeder backward-integrated energy decay in dB, 0 dB at `n = 0`.
pub fn schroeder_curve(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|e| 10.0 * (e / total).log10()).collect()
}

/// T60 extrapolated from a least-squares fit of the decay between −5 and −35 dB.
pub fn schroeder_t60(h: &[f64], sample_rate: u32) -> Option<f64> {
    let curve = schroeder_curve(h);
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .enumerate()
        .filter(|(_, db)| **db <= -5.0 && **db >= -35.0)
        .map(|(n, db)| (n as f64 / sample_rate as f64, *db))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> Room {
        Room {
            width: 4.0,
            length: 6.0,
            height: 3.0,
            t60: 0.5,
        }
    }

    #[test]
    fn direct_path_delay_and_gain() {
        let h = image_source_rir(&room(), [1.0, 1.0, 1.5], [2.0, 1.0, 1.5], 0, 16000).unwrap();
        let delay: f64 = 16000.0 / 343.0;
        assert!((delay - 46.647).abs() < 1e-3);
        let peak = h.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 47);
        // Band-limited impulse: energy ≈ 1, centroid at the true delay.
        let dc: f64 = h.iter().sum();
        assert!((dc - 1.0).abs() < 1e-2);
        let centroid: f64 = h.iter().enumerate().map(|(n, v)| n as f64 * v).sum::<f64>() / dc;
        assert!((centroid - delay).abs() < 0.05);
    }

    #[test]
    fn zero_reflection_equals_order_zero() {
        let r = room();
        let g = RirGenerator::for_room(r, 16000);
        let mut zero = g.clone();
        zero.beta = 0.0;
        let a = zero.generate([1.0, 2.0, 1.0], &[[3.0, 4.0, 2.0]]).unwrap();
        let b = image_source_rir(&r, [1.0, 2.0, 1.0], [3.0, 4.0, 2.0], 0, 16000).unwrap();
        assert_eq!(a[0], b);
    }

    #[test]
    fn cube_first_reflections_coincide() {
        let cube = Room {
            width: 4.0,
            length: 4.0,
            height: 4.0,
            t60: 0.3,
        };
        let c = [2.0, 2.0, 2.0];
        let first: Vec<_> = image_sources(&cube, c, 1)
            .into_iter()
            .filter(|i| i.reflections == 1)
            .collect();
        assert_eq!(first.len(), 6);
        for im in &first {
            assert!((distance(im.position, c) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_room_is_rejected() {
        let err = image_source_rir(&room(), [5.0, 1.0, 1.0], [1.0, 1.0, 1.0], 2, 16000).unwrap_err();
        assert!(matches!(err, Error::OutsideRoom { what: "source", .. }));
        let err = image_source_rir(&room(), [1.0, 1.0, 1.0], [1.0, 1.0, -0.1], 2, 16000).unwrap_err();
        assert!(matches!(err, Error::OutsideRoom { what: "microphone", .. }));
    }

    #[test]
    fn reciprocity() {
        let r = room();
        let (a, b) = ([1.2, 2.3, 1.1], [3.1, 4.4, 2.0]);
        let h1 = image_source_rir(&r, a, b, 12, 16000).unwrap();
        let h2 = image_source_rir(&r, b, a, 12, 16000).unwrap();
        assert_eq!(h1.len(), h2.len());
        for (x, y) in h1.iter().zip(&h2) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sabine_absorption() {
        let r = room();
        let alpha = 0.161 * 72.0 / (108.0 * 0.5);
        assert!((r.absorption() - alpha).abs() < 1e-12);
        assert_eq!(r.default_max_order(), 40);
    }

    #[test]
    fn decay_reaches_minus_sixty_near_t60() {
        let r = room();
        let g = RirGenerator::for_room(r, 16000);
        let h = g.generate([1.0, 1.5, 1.2], &[[2.7, 4.1, 1.6]]).unwrap().remove(0);
        let t = schroeder_t60(&h, 16000).unwrap();
        assert!((t - 0.5).abs() < 0.15, "estimated T60 {t}");
    }
}
