//! Mask-estimation networks: two bidirectional LSTM layers and a tanh head
//! over narrow-band, wide-band, switched or post-filter arrangements.

pub mod arrange;
pub mod checkpoint;
pub mod lstm;

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use arrange::{
    arrange, freq_index_augment, ft_switch, inverse_arrange, shuffle_wrap, unshuffle, Permutation, SeqAxis,
    SeqBatch,
};
pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::error::{Error, Result};
use crate::mask::ComplexMask;
use crate::numerics::tape::{Tape, Tensor, Var};
use crate::stft::{from_tensor, Spectrogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Narrow-band: one sequence over time per frequency bin.
    T,
    /// Wide-band: one sequence over frequency per frame.
    F,
    /// Wide-band first layer, narrow-band second layer.
    FT,
    /// Single-channel post-filter over time with all bins as features.
    PF,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::T => "T",
            Mode::F => "F",
            Mode::FT => "FT",
            Mode::PF => "PF",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T" => Ok(Mode::T),
            "F" => Ok(Mode::F),
            "FT" => Ok(Mode::FT),
            "PF" => Ok(Mode::PF),
            _ => Err(Error::InvalidArgument(format!("unknown network mode {s:?}"))),
        }
    }
}

pub const DESK_HIDDEN: (usize, usize) = (64, 32);
pub const PAPER_HIDDEN: (usize, usize) = (256, 128);
pub const DESK_PF_HIDDEN: (usize, usize) = (64, 64);
pub const PAPER_PF_HIDDEN: (usize, usize) = (256, 256);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub mode: Mode,
    pub nsf: bool,
    pub hidden: (usize, usize),
    pub bidirectional: bool,
    pub channels: usize,
    pub bins: usize,
    pub freq_index_augment: bool,
}

impl NetSpec {
    /// Desk-sized network; the frequency index is appended exactly when `nsf` is set.
    pub fn new(mode: Mode, nsf: bool, channels: usize, bins: usize) -> Self {
        let channels = if mode == Mode::PF { 1 } else { channels };
        Self {
            mode,
            nsf,
            hidden: if mode == Mode::PF { DESK_PF_HIDDEN } else { DESK_HIDDEN },
            bidirectional: true,
            channels,
            bins,
            freq_index_augment: nsf && mode != Mode::PF,
        }
    }

    pub fn paper(mode: Mode, nsf: bool, channels: usize, bins: usize) -> Self {
        let hidden = if mode == Mode::PF { PAPER_PF_HIDDEN } else { PAPER_HIDDEN };
        Self::new(mode, nsf, channels, bins).with_hidden(hidden)
    }

    pub fn with_hidden(mut self, hidden: (usize, usize)) -> Self {
        self.hidden = hidden;
        self
    }

    /// Short label such as `FT-NSF` or `T-JNF`.
    pub fn label(&self) -> String {
        match (self.mode, self.nsf) {
            (Mode::PF, false) => "PF".into(),
            (Mode::PF, true) => "PF-NSF".into(),
            (m, true) => format!("{m}-NSF"),
            (m, false) => format!("{m}-JNF"),
        }
    }

    pub fn input_features(&self) -> usize {
        match self.mode {
            Mode::PF => 2 * self.bins,
            _ => 2 * self.channels + usize::from(self.freq_index_augment),
        }
    }

    fn output_features(&self) -> usize {
        match self.mode {
            Mode::PF => 2 * self.bins,
            _ => 2,
        }
    }

    fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.hidden.0 == 0 || self.hidden.1 == 0 || self.channels == 0 || self.bins < 2 {
            return bad("network sizes must be positive");
        }
        if self.mode == Mode::PF && (self.channels != 1 || self.freq_index_augment) {
            return bad("post-filter is single-channel without frequency index");
        }
        if self.nsf && !self.freq_index_augment && self.mode != Mode::PF {
            return bad("NSF variants require the frequency-index feature");
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let dirs: &[&str] = if self.bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
        let mut out = Vec::new();
        let mut input = self.input_features();
        for (layer, h) in [("l1", self.hidden.0), ("l2", self.hidden.1)] {
            for dir in dirs {
                out.push((format!("{layer}.{dir}.w_ih"), vec![4 * h, input]));
                out.push((format!("{layer}.{dir}.w_hh"), vec![4 * h, h]));
                out.push((format!("{layer}.{dir}.b"), vec![4 * h]));
            }
            input = h * self.directions();
        }
        out.push(("ff.w".into(), vec![self.output_features(), input]));
        out.push(("ff.b".into(), vec![self.output_features()]));
        out
    }
}

/// Named parameter tensors in [`NetSpec::param_layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl NetParams {
    pub fn zeros(spec: &NetSpec) -> Self {
        let (names, tensors) = spec
            .param_layout()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(s)))
            .unzip();
        Self { names, tensors }
    }

    /// Uniform in `±1/√H` per LSTM layer (`±1/√in` for the head), forget bias 1.
    pub fn init(spec: &NetSpec, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(spec);
        for (name, t) in p.names.iter().zip(p.tensors.iter_mut()) {
            let fan = if name.starts_with("ff") {
                t.shape().last().copied().unwrap_or(1)
            } else if name.starts_with("l1") {
                spec.hidden.0
            } else {
                spec.hidden.1
            };
            let bound = 1.0 / (fan as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            if name.ends_with(".b") && !name.starts_with("ff") {
                let h = t.numel() / 4;
                t.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        p
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub fn matches(&self, spec: &NetSpec) -> bool {
        let layout = spec.param_layout();
        layout.len() == self.tensors.len()
            && layout
                .iter()
                .zip(self.names.iter().zip(&self.tensors))
                .all(|((n, s), (m, t))| n == m && s.as_slice() == t.shape())
    }
}

/// Sequence permutations for the NSF wrappers.
///
/// `first` wraps both layers (or the first layer in FT mode); `second` wraps
/// the second FT layer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutations {
    pub first: Option<Permutation>,
    pub second: Option<Permutation>,
}

impl Permutations {
    /// Sequence lengths seen by each wrapper for a `bins × frames` input.
    fn lengths(spec: &NetSpec, bins: usize, frames: usize) -> (usize, Option<usize>) {
        match spec.mode {
            Mode::T | Mode::PF => (frames, None),
            Mode::F => (bins, None),
            Mode::FT => (bins, Some(frames)),
        }
    }

    pub fn draw(spec: &NetSpec, bins: usize, frames: usize, rng: &mut impl Rng) -> Self {
        if !spec.nsf {
            return Self::default();
        }
        let (a, b) = Self::lengths(spec, bins, frames);
        let first = Some(Permutation::random(a, rng));
        Self {
            first,
            second: b.map(|n| Permutation::random(n, rng)),
        }
    }

    pub fn identity(spec: &NetSpec, bins: usize, frames: usize) -> Self {
        if !spec.nsf {
            return Self::default();
        }
        let (a, b) = Self::lengths(spec, bins, frames);
        Self {
            first: Some(Permutation::identity(a)),
            second: b.map(Permutation::identity),
        }
    }
}

/// Network input features for `input`, including the frequency index when enabled.
pub fn features(spec: &NetSpec, input: &Spectrogram) -> Result<SeqBatch> {
    spec.validate()?;
    let (c, f, _) = input.data.dim();
    if c != spec.channels || f != spec.bins {
        return Err(Error::Shape(format!(
            "{} expects {} channels × {} bins, got {c} × {f}",
            spec.label(),
            spec.channels,
            spec.bins
        )));
    }
    let x = arrange(input, spec.mode)?;
    if spec.freq_index_augment {
        freq_index_augment(&x, f)
    } else {
        Ok(x)
    }
}

fn lstm_layer(tape: &mut Tape, spec: &NetSpec, x: Var, p: &[Var]) -> Var {
    let fwd = lstm::lstm(tape, x, p[0], p[1], p[2], false);
    if spec.bidirectional {
        let bwd = lstm::lstm(tape, x, p[3], p[4], p[5], true);
        tape.concat(fwd, bwd)
    } else {
        fwd
    }
}

/// Records the network on `tape` from arranged features `x`, returning the
/// compressed mask as an `(F, T, 2)` node.
pub fn forward_features(tape: &mut Tape, spec: &NetSpec, params: &[Var], x: Var, perms: &Permutations) -> Result<Var> {
    let layout = spec.param_layout();
    if params.len() != layout.len() {
        return Err(Error::Shape(format!("{} parameters for a layout of {}", params.len(), layout.len())));
    }
    let per_layer = 3 * spec.directions();
    let (l1, l2, ff) = (&params[..per_layer], &params[per_layer..2 * per_layer], &params[2 * per_layer..]);
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 || s[2] != spec.input_features() {
        return Err(Error::Shape(format!("network input {s:?} for {} features", spec.input_features())));
    }
    let check = |p: &Option<Permutation>, n: usize| -> Result<()> {
        match p {
            Some(p) if p.len() != n => Err(Error::Shape(format!("permutation of {} for length {n}", p.len()))),
            None if spec.nsf => Err(Error::InvalidArgument("NSF forward needs permutations".into())),
            _ => Ok(()),
        }
    };
    let wrap = |tape: &mut Tape, v: Var, p: &Option<Permutation>| match p {
        Some(p) if spec.nsf => arrange::shuffle_on_tape(tape, v, p),
        _ => v,
    };
    let unwrap = |tape: &mut Tape, v: Var, p: &Option<Permutation>| match p {
        Some(p) if spec.nsf => arrange::unshuffle_on_tape(tape, v, p),
        _ => v,
    };
    if spec.nsf {
        check(&perms.first, s[1])?;
    }

    let h = if spec.mode == Mode::FT {
        if spec.nsf {
            check(&perms.second, s[0])?;
        }
        let v = wrap(tape, x, &perms.first);
        let v = lstm_layer(tape, spec, v, l1);
        let v = unwrap(tape, v, &perms.first);
        let v = arrange::switch_on_tape(tape, v);
        let v = wrap(tape, v, &perms.second);
        let v = lstm_layer(tape, spec, v, l2);
        unwrap(tape, v, &perms.second)
    } else {
        let v = wrap(tape, x, &perms.first);
        let v = lstm_layer(tape, spec, v, l1);
        let v = lstm_layer(tape, spec, v, l2);
        unwrap(tape, v, &perms.first)
    };
    let z = tape.linear(h, ff[0], Some(ff[1]));
    let m = tape.tanh(z);

    let shape = tape.value(m).shape().to_vec();
    Ok(match spec.mode {
        Mode::T | Mode::FT => m,
        Mode::F => arrange::switch_on_tape(tape, m),
        Mode::PF => {
            // (1, T, [re; im] × F) to (F, T, 2).
            let (t, f) = (shape[1], spec.bins);
            let flat = tape.reshape(m, vec![t * 2 * f, 1]);
            let index: Vec<usize> = (0..f)
                .flat_map(|k| (0..t).flat_map(move |i| [i * 2 * f + k, i * 2 * f + f + k]))
                .collect();
            let g = tape.gather_rows(flat, Rc::new(index), vec![f * t * 2, 1]);
            tape.reshape(g, vec![f, t, 2])
        }
    })
}

/// Registers `params` as trainable leaves and records the network on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    spec: &NetSpec,
    params: &NetParams,
    input: &Spectrogram,
    perms: &Permutations,
) -> Result<(Var, Vec<Var>)> {
    if !params.matches(spec) {
        return Err(Error::Shape(format!("parameters do not match {}", spec.label())));
    }
    let x = features(spec, input)?;
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
    let xv = tape.constant(x.data);
    let m = forward_features(tape, spec, &vars, xv, perms)?;
    Ok((m, vars))
}

/// Compressed mask estimate; NSF permutations are drawn from `rng`.
pub fn forward(input: &Spectrogram, spec: &NetSpec, params: &NetParams, rng: &mut impl Rng) -> Result<ComplexMask> {
    let perms = Permutations::draw(spec, input.bins(), input.frames(), rng);
    forward_with(input, spec, params, &perms)
}

/// Compressed mask estimate with explicit permutations.
pub fn forward_with(input: &Spectrogram, spec: &NetSpec, params: &NetParams, perms: &Permutations) -> Result<ComplexMask> {
    let mut tape = Tape::new();
    let (m, _) = forward_on_tape(&mut tape, spec, params, input, perms)?;
    Ok(ComplexMask {
        data: from_tensor(tape.value(m)),
        compressed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::stft::FrameParams;
    use ndarray::Array3;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spec(c: usize, window: usize, t: usize, seed: u64) -> Spectrogram {
        let params = FrameParams::new(window, 16_000);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((c, params.bins(), t), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        Spectrogram::new(data, params).unwrap()
    }

    fn mini(mode: Mode, nsf: bool) -> NetSpec {
        let c = if mode == Mode::PF { 1 } else { 2 };
        NetSpec::new(mode, nsf, c, 9).with_hidden((4, 3))
    }

    #[test]
    fn zero_parameters_give_zero_mask() {
        for mode in [Mode::T, Mode::F, Mode::FT, Mode::PF] {
            let spec = mini(mode, false);
            let input = random_spec(spec.channels, 16, 7, 1);
            let m = forward(&input, &spec, &NetParams::zeros(&spec), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(m.dim(), (9, 7));
            assert!(m.compressed);
            assert!(m.data.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        }
    }

    #[test]
    fn ft_shape_for_any_channel_count() {
        for c in 2..=5 {
            let spec = NetSpec::new(Mode::FT, false, c, 9).with_hidden((4, 3));
            let params = NetParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(c as u64));
            let input = random_spec(c, 16, 6, c as u64);
            let m = forward(&input, &spec, &params, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(m.dim(), (9, 6));
            assert!(m.data.iter().all(|z| z.re.abs() < 1.0 && z.im.abs() < 1.0));
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let spec = mini(Mode::T, false);
        let input = random_spec(3, 16, 7, 1);
        assert!(forward(&input, &spec, &NetParams::zeros(&spec), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn layout_and_init() {
        let spec = NetSpec::new(Mode::T, false, 3, 257);
        let layout = spec.param_layout();
        assert_eq!(layout[0], ("l1.fwd.w_ih".to_string(), vec![256, 6]));
        assert_eq!(layout[6].1, vec![128, 128]);
        assert_eq!(layout.last().unwrap().1, vec![2]);
        let p = NetParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(p.matches(&spec) && p.is_finite());
        let b = p.get("l1.fwd.b").unwrap().data();
        assert!(b[64..128].iter().all(|v| *v == 1.0));
        assert!(p.get("l1.fwd.w_ih").unwrap().data().iter().all(|v| v.abs() <= 0.125));
        assert_eq!(NetSpec::new(Mode::T, true, 3, 257).input_features(), 7);
        assert_eq!(NetSpec::new(Mode::PF, false, 3, 257).input_features(), 514);
    }

    #[test]
    fn nsf_with_identity_equals_augmented_jnf() {
        let nsf = mini(Mode::T, true);
        let jnf = NetSpec {
            nsf: false,
            ..nsf.clone()
        };
        let params = NetParams::init(&nsf, &mut ChaCha8Rng::seed_from_u64(2));
        let input = random_spec(2, 16, 7, 3);
        let a = forward_with(&input, &nsf, &params, &Permutations::identity(&nsf, 9, 7)).unwrap();
        let b = forward_with(&input, &jnf, &params, &Permutations::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nsf_output_depends_on_permutation() {
        let spec = mini(Mode::F, true);
        let params = NetParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(2));
        let input = random_spec(2, 16, 7, 3);
        let a = forward(&input, &spec, &params, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let b = forward(&input, &spec, &params, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let c = forward(&input, &spec, &params, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    /// Input permuted along the shuffled axis by π (gather sense, x̃[j] = x[π[j]])
    /// with internal permutation σ∘π gives the π-permuted output of the run with σ.
    #[test]
    fn nsf_order_insensitivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [Mode::T, Mode::F, Mode::PF] {
            let spec = mini(mode, true);
            let params = NetParams::init(&spec, &mut rng);
            let x = features(&spec, &random_spec(spec.channels, 16, 7, 6)).unwrap();
            let (b, l, d) = x.dims();
            let sigma = Permutation::random(l, &mut rng);
            let pi = Permutation::random(l, &mut rng);
            let permuted: Vec<f64> = (0..b)
                .flat_map(|bi| {
                    let src = x.data.data();
                    pi.as_slice()
                        .iter()
                        .flat_map(move |&j| src[(bi * l + j) * d..(bi * l + j + 1) * d].to_vec())
                        .collect::<Vec<_>>()
                })
                .collect();
            let run = |input: Tensor, perm: Permutation| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = params.tensors.iter().map(|t| tape.param(t.clone())).collect();
                let xv = tape.constant(input);
                let perms = Permutations {
                    first: Some(perm),
                    second: None,
                };
                let m = forward_features(&mut tape, &spec, &vars, xv, &perms).unwrap();
                from_tensor(tape.value(m))
            };
            let base = run(x.data.clone(), sigma.clone());
            let moved = run(Tensor::new(vec![b, l, d], permuted), sigma.compose(&pi));
            let (f, t) = base.dim();
            for k in 0..f {
                for i in 0..t {
                    let (kk, ii) = match mode {
                        Mode::F => (pi.as_slice()[k], i),
                        _ => (k, pi.as_slice()[i]),
                    };
                    assert!((moved[(k, i)] - base[(kk, ii)]).norm() < 1e-12, "{mode}");
                }
            }
        }
    }

    #[test]
    fn end_to_end_gradients_for_every_variant() {
        for mode in [Mode::T, Mode::F, Mode::FT, Mode::PF] {
            for nsf in [false, true] {
                let spec = mini(mode, nsf);
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                let input = random_spec(spec.channels, 16, 7, 8);
                let x = features(&spec, &input).unwrap().data;
                let perms = Permutations::draw(&spec, 9, 7, &mut rng);
                let params = NetParams::init(&spec, &mut rng);
                let w = Tensor::new(vec![9, 7, 2], (0..126).map(|_| rng.gen_range(-1.0..1.0)).collect());
                let report = check_gradients(&params.tensors, 1e-5, |tape, vars| {
                    let xv = tape.constant(x.clone());
                    let m = forward_features(tape, &spec, vars, xv, &perms).unwrap();
                    let k = tape.constant(w.clone());
                    let p = tape.mul(m, k);
                    tape.sum(p)
                });
                assert!(report.max_rel_error < 1e-4, "{} {report:?}", spec.label());
            }
        }
    }
}
