//! Anechoic direct-path probes for spatial selectivity measurements.

use ndarray::Array2;

use super::rir::{distance, SPEED_OF_SOUND};
use super::scenario::ArrayPose;
use crate::audio::MultiWave;
use crate::dsp::fractional_delay;
use crate::error::{Error, Result};

/// `signal` arriving at the array from `angle_deg` (relative to the target
/// bearing) at `distance` meters, direct path only.
///
/// Gains are normalized like rendered scenes: microphone 0 has unit gain and
/// the others scale with `r₀/r_ℓ`. Output length equals the input length.
pub fn anechoic_probe(array: &ArrayPose, angle_deg: f64, distance_m: f64, signal: &MultiWave) -> Result<MultiWave> {
    if !(-180.0..=180.0).contains(&angle_deg) {
        return Err(Error::InvalidArgument(format!("probe angle {angle_deg} outside [-180, 180]")));
    }
    let src = array.point_at(angle_deg, distance_m);
    let mics = array.mic_positions();
    let fs = signal.sample_rate as f64;
    let x = signal.channel_vec(0);
    let n = x.len();
    let r0 = distance(src, mics[0]);
    let mut out = Array2::zeros((mics.len(), n));
    for (l, m) in mics.iter().enumerate() {
        let r = distance(src, *m);
        let y = fractional_delay(&x, r / SPEED_OF_SOUND * fs, r0 / r, n);
        out.row_mut(l).assign(&ndarray::ArrayView1::from(&y));
    }
    Ok(MultiWave::new(signal.sample_rate, out))
}

/// Angles from `start` to `stop` inclusive in steps of `step` degrees.
pub fn angle_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + step * i as f64).collect()
}

/// One probe per grid angle.
pub fn probe_set(array: &ArrayPose, grid: &[f64], distance_m: f64, signal: &MultiWave) -> Result<Vec<(f64, MultiWave)>> {
    grid.iter()
        .map(|a| Ok((*a, anechoic_probe(array, *a, distance_m, signal)?)))
        .collect()
}

/// Array used for probes: same geometry as the training scenes, placed in free space.
pub fn probe_array(channels: usize, diameter: f64) -> ArrayPose {
    ArrayPose {
        center: [0.0, 0.0, 1.5],
        rotation: 0.0,
        channels,
        diameter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(n: usize) -> MultiWave {
        let mut x = vec![0.0; n];
        x[10] = 1.0;
        MultiWave::mono(16000, x)
    }

    fn centroid(x: ndarray::ArrayView1<f64>) -> f64 {
        let s: f64 = x.sum();
        x.iter().enumerate().map(|(n, v)| n as f64 * v).sum::<f64>() / s
    }

    #[test]
    fn broadside_gives_equal_delays() {
        let a = probe_array(2, 0.1);
        let p = anechoic_probe(&a, 90.0, 1.0, &impulse(400)).unwrap();
        for n in 0..400 {
            assert!((p.data[(0, n)] - p.data[(1, n)]).abs() < 1e-12);
        }
    }

    #[test]
    fn endfire_delay_is_diameter_over_c() {
        let a = probe_array(2, 0.1);
        let p = anechoic_probe(&a, 0.0, 50.0, &impulse(3000)).unwrap();
        let lag = centroid(p.data.row(1)) - centroid(p.data.row(0));
        let expect = 0.1 / SPEED_OF_SOUND * 16000.0;
        assert!((expect - 4.66).abs() < 0.01);
        assert!((lag - expect).abs() < 0.01, "lag {lag}");
    }

    #[test]
    fn grid_has_one_probe_per_degree() {
        let g = angle_grid(-180.0, 180.0, 1.0);
        assert_eq!(g.len(), 361);
        let a = probe_array(3, 0.1);
        let probes = probe_set(&a, &g[..5], 1.0, &impulse(200)).unwrap();
        assert_eq!(probes.len(), 5);
    }

    #[test]
    fn reference_channel_has_unit_gain() {
        let a = probe_array(3, 0.1);
        let p = anechoic_probe(&a, 37.0, 1.0, &impulse(400)).unwrap();
        let dc: f64 = p.data.row(0).sum();
        assert!((dc - 1.0).abs() < 1e-2);
    }
}
