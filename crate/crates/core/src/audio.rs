//! Multi-channel time-domain audio and 32-bit float WAV I/O.

use std::path::Path;

use ndarray::{s, Array2, ArrayView1};

use crate::error::{Error, Result};

/// `C` channels × `N` samples at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiWave {
    pub sample_rate: u32,
    pub data: Array2<f64>,
}

impl MultiWave {
    pub fn new(sample_rate: u32, data: Array2<f64>) -> Self {
        Self { sample_rate, data }
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        let n = samples.len();
        Self {
            sample_rate,
            data: Array2::from_shape_vec((1, n), samples).expect("1×N shape"),
        }
    }

    pub fn zeros(sample_rate: u32, channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            data: Array2::zeros((channels, len)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.data.row(c)
    }

    pub fn channel_vec(&self, c: usize) -> Vec<f64> {
        self.data.row(c).to_vec()
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> MultiWave {
        MultiWave {
            sample_rate: self.sample_rate,
            data: self.data.slice(s![.., start..start + len]).to_owned(),
        }
    }

    pub fn select_channel(&self, c: usize) -> MultiWave {
        MultiWave::mono(self.sample_rate, self.channel_vec(c))
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Writes IEEE float 32-bit PCM, interleaved.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: self.channels() as u16,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for n in 0..self.len() {
            for c in 0..self.channels() {
                w.write_sample(self.data[(c, n)] as f32)?;
            }
        }
        w.finalize()?;
        Ok(())
    }

    /// Reads float or integer PCM; integers are scaled to `[-1, 1)`.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<MultiWave> {
        let mut r = hound::WavReader::open(path)?;
        let spec = r.spec();
        let channels = spec.channels as usize;
        let interleaved: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Float => r
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()?,
            hound::SampleFormat::Int => {
                let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
                r.samples::<i32>()
                    .map(|s| s.map(|v| v as f64 / scale))
                    .collect::<std::result::Result<_, _>>()?
            }
        };
        if channels == 0 || interleaved.len() % channels != 0 {
            return Err(Error::Dataset("malformed WAV channel layout".into()));
        }
        let len = interleaved.len() / channels;
        let data = Array2::from_shape_fn((channels, len), |(c, n)| interleaved[n * channels + c]);
        Ok(MultiWave::new(spec.sample_rate, data))
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
