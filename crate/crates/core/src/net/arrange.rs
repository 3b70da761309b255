//! Data arrangements between spectrograms and sequence batches, plus the
//! index maps used for the FT switch and sequence shuffling.

use std::rc::Rc;

use ndarray::Array3;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Tensor, Var};
use crate::stft::{FrameParams, Spectrogram};

/// Which physical axis runs along the sequence dimension of a [`SeqBatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeqAxis {
    Time,
    Frequency,
}

/// `(batch, seq, features)` tensor tagged with its sequence axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub data: Tensor,
    pub axis: SeqAxis,
}

impl SeqBatch {
    pub fn new(data: Tensor, axis: SeqAxis) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::Shape(format!("sequence batch must be 3-D, got {:?}", data.shape())));
        }
        Ok(Self { data, axis })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }
}

/// Permutation of a sequence axis. Shuffling moves element `j` to position `σ[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &j in &map {
            if j >= map.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidArgument(format!("not a permutation of 0..{}", map.len())));
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self(map)
    }

    pub fn reversal(n: usize) -> Self {
        Self((0..n).rev().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (j, &p) in self.0.iter().enumerate() {
            inv[p] = j;
        }
        Self(inv)
    }

    /// `(self ∘ other)[j] = self[other[j]]`.
    pub fn compose(&self, other: &Permutation) -> Self {
        assert_eq!(self.len(), other.len(), "compose: length mismatch");
        Self(other.0.iter().map(|&j| self.0[j]).collect())
    }
}

/// Row index for `gather_rows` so that output `(b, j)` reads input `(b, g[j])`.
fn seq_gather_index(batch: usize, g: &[usize]) -> Vec<usize> {
    let len = g.len();
    (0..batch).flat_map(|b| g.iter().map(move |&s| b * len + s)).collect()
}

/// Row index that transposes the first two axes of a `(B, L, ·)` tensor.
fn switch_index(batch: usize, len: usize) -> Vec<usize> {
    (0..len).flat_map(|l| (0..batch).map(move |b| b * len + l)).collect()
}

fn gather(x: &Tensor, index: &[usize], shape: Vec<usize>) -> Tensor {
    let w = x.row_len();
    let mut data = Vec::with_capacity(index.len() * w);
    for &r in index {
        data.extend_from_slice(&x.data()[r * w..(r + 1) * w]);
    }
    Tensor::new(shape, data)
}

fn check_perm(x: &SeqBatch, sigma: &Permutation) -> Result<()> {
    let (_, l, _) = x.dims();
    if sigma.len() != l {
        return Err(Error::Shape(format!("permutation of {} for sequence length {l}", sigma.len())));
    }
    Ok(())
}

/// Spectrogram to sequence batch for the given network mode.
///
/// T: `(F, T, 2C)`; F and FT: `(T, F, 2C)`; PF: `(1, T, 2F)` from a single channel.
/// Channel features are the real parts of all channels followed by the imaginary parts.
pub fn arrange(spec: &Spectrogram, mode: Mode) -> Result<SeqBatch> {
    let (c, f, t) = spec.data.dim();
    let y = &spec.data;
    match mode {
        Mode::T | Mode::F | Mode::FT => {
            let narrow = mode == Mode::T;
            let (b, l) = if narrow { (f, t) } else { (t, f) };
            let mut data = Vec::with_capacity(b * l * 2 * c);
            for bi in 0..b {
                for li in 0..l {
                    let (k, i) = if narrow { (bi, li) } else { (li, bi) };
                    data.extend((0..c).map(|ch| y[(ch, k, i)].re));
                    data.extend((0..c).map(|ch| y[(ch, k, i)].im));
                }
            }
            let axis = if narrow { SeqAxis::Time } else { SeqAxis::Frequency };
            SeqBatch::new(Tensor::new(vec![b, l, 2 * c], data), axis)
        }
        Mode::PF => {
            if c != 1 {
                return Err(Error::Shape(format!("post-filter takes one channel, got {c}")));
            }
            let mut data = Vec::with_capacity(t * 2 * f);
            for i in 0..t {
                data.extend((0..f).map(|k| y[(0, k, i)].re));
                data.extend((0..f).map(|k| y[(0, k, i)].im));
            }
            SeqBatch::new(Tensor::new(vec![1, t, 2 * f], data), SeqAxis::Time)
        }
    }
}

/// Exact inverse of [`arrange`].
pub fn inverse_arrange(x: &SeqBatch, mode: Mode, params: FrameParams) -> Result<Spectrogram> {
    let (b, l, d) = x.dims();
    let v = x.data.data();
    let f = params.bins();
    let data = match mode {
        Mode::T | Mode::F | Mode::FT => {
            if d % 2 != 0 {
                return Err(Error::Shape(format!("odd feature count {d}")));
            }
            let c = d / 2;
            let narrow = mode == Mode::T;
            let (nf, nt) = if narrow { (b, l) } else { (l, b) };
            if nf != f {
                return Err(Error::Shape(format!("{nf} bins, frame parameters imply {f}")));
            }
            Array3::from_shape_fn((c, nf, nt), |(ch, k, i)| {
                let (bi, li) = if narrow { (k, i) } else { (i, k) };
                let o = (bi * l + li) * d;
                Complex64::new(v[o + ch], v[o + c + ch])
            })
        }
        Mode::PF => {
            if b != 1 || d != 2 * f {
                return Err(Error::Shape(format!("post-filter batch ({b}, {l}, {d}) for {f} bins")));
            }
            Array3::from_shape_fn((1, f, l), |(_, k, i)| Complex64::new(v[i * d + k], v[i * d + f + k]))
        }
    };
    Spectrogram::new(data, params)
}

/// Wide-band `(T, F, D)` batch to narrow-band `(F, T, D)`; applying it twice is the identity.
pub fn ft_switch(x: &SeqBatch) -> SeqBatch {
    let (b, l, d) = x.dims();
    let axis = match x.axis {
        SeqAxis::Time => SeqAxis::Frequency,
        SeqAxis::Frequency => SeqAxis::Time,
    };
    SeqBatch {
        data: gather(&x.data, &switch_index(b, l), vec![l, b, d]),
        axis,
    }
}

/// Moves sequence element `j` to position `σ[j]` in every batch row.
pub fn shuffle_wrap(x: &SeqBatch, sigma: &Permutation) -> Result<SeqBatch> {
    check_perm(x, sigma)?;
    let (b, l, d) = x.dims();
    let index = seq_gather_index(b, sigma.inverse().as_slice());
    Ok(SeqBatch {
        data: gather(&x.data, &index, vec![b, l, d]),
        axis: x.axis,
    })
}

/// Inverse of [`shuffle_wrap`] for the same `σ`.
pub fn unshuffle(y: &SeqBatch, sigma: &Permutation) -> Result<SeqBatch> {
    check_perm(y, sigma)?;
    let (b, l, d) = y.dims();
    let index = seq_gather_index(b, sigma.as_slice());
    Ok(SeqBatch {
        data: gather(&y.data, &index, vec![b, l, d]),
        axis: y.axis,
    })
}

/// Appends `k/(F−1)` to the features of every element, `k` being its bin.
pub fn freq_index_augment(x: &SeqBatch, bins: usize) -> Result<SeqBatch> {
    let (b, l, d) = x.dims();
    let along = match x.axis {
        SeqAxis::Time => b,
        SeqAxis::Frequency => l,
    };
    if along != bins || bins < 2 {
        return Err(Error::Shape(format!("batch has {along} bins along its frequency axis, expected {bins}")));
    }
    let scale = 1.0 / (bins - 1) as f64;
    let mut data = Vec::with_capacity(b * l * (d + 1));
    for (r, row) in x.data.data().chunks_exact(d).enumerate() {
        let (bi, li) = (r / l, r % l);
        let k = if x.axis == SeqAxis::Time { bi } else { li };
        data.extend_from_slice(row);
        data.push(k as f64 * scale);
    }
    SeqBatch::new(Tensor::new(vec![b, l, d + 1], data), x.axis)
}

/// Tape version of [`ft_switch`] on a `(B, L, D)` node.
pub fn switch_on_tape(tape: &mut Tape, x: Var) -> Var {
    let s = tape.value(x).shape().to_vec();
    let index = Rc::new(switch_index(s[0], s[1]));
    tape.gather_rows(x, index, vec![s[1], s[0], s[2]])
}

/// Tape version of [`shuffle_wrap`].
pub fn shuffle_on_tape(tape: &mut Tape, x: Var, sigma: &Permutation) -> Var {
    let s = tape.value(x).shape().to_vec();
    assert_eq!(s[1], sigma.len(), "shuffle: permutation length");
    let index = Rc::new(seq_gather_index(s[0], sigma.inverse().as_slice()));
    tape.gather_rows(x, index, s)
}

/// Tape version of [`unshuffle`].
pub fn unshuffle_on_tape(tape: &mut Tape, x: Var, sigma: &Permutation) -> Var {
    let s = tape.value(x).shape().to_vec();
    assert_eq!(s[1], sigma.len(), "unshuffle: permutation length");
    let index = Rc::new(seq_gather_index(s[0], sigma.as_slice()));
    tape.gather_rows(x, index, s)
}
