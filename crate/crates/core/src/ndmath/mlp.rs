use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. Output layers are always affine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::param(format!("unknown activation `{s}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Named, ordered tensors of one network. MLPs store `w0, b0, w1, b1, ...`
/// with `w_i` of shape `(in, out)` and `b_i` of shape `(out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    name: String,
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(name: impl Into<String>, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let name = name.into();
        for (i, (k, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(o, _)| o == k) {
                return Err(Error::param(format!("duplicate tensor name `{k}` in `{name}`")));
            }
        }
        Ok(ParamSet { name, entries })
    }

    /// MLP with layer widths `widths[0] -> ... -> widths[L]`, initialised
    /// uniformly in `±1/sqrt(fan_in)`.
    pub fn mlp<R: Rng + ?Sized>(name: impl Into<String>, widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let mut entries = Vec::with_capacity(2 * (widths.len() - 1));
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            entries.push((format!("w{i}"), Tensor::from_parts(vec![fan_in, fan_out], w)));
            entries.push((format!("b{i}"), Tensor::from_parts(vec![fan_out], b)));
        }
        ParamSet { name: name.into(), entries }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn qualified(&self, key: &str) -> String {
        format!("{}/{}", self.name, key)
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(k, _)| k == key).map(|(_, t)| t)
    }

    /// Replaces a tensor, keeping its shape fixed.
    pub fn set(&mut self, key: &str, t: Tensor) -> Result<()> {
        let slot = self
            .get_mut(key)
            .ok_or_else(|| Error::param(format!("no tensor `{key}`")))?;
        if slot.shape() != t.shape() {
            return Err(Error::dim(format!(
                "`{key}` has shape {:?}, replacement {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
        Ok(())
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.entries
    }

    pub fn num_layers(&self) -> usize {
        self.entries.len() / 2
    }

    pub fn input_width(&self) -> usize {
        self.get("w0").map(|w| w.rows()).unwrap_or(0)
    }

    pub fn output_width(&self) -> usize {
        self.get(&format!("w{}", self.num_layers() - 1)).map(|w| w.cols()).unwrap_or(0)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    fn layer(&self, i: usize) -> Result<(&Tensor, &Tensor)> {
        match (self.get(&format!("w{i}")), self.get(&format!("b{i}"))) {
            (Some(w), Some(b)) => Ok((w, b)),
            _ => Err(Error::Dimension {
                layer: Some(i),
                msg: format!("`{}` is missing w{i}/b{i}", self.name),
            }),
        }
    }
}

/// Value-independent duplicate, used for target networks.
pub fn hard_copy(src: &ParamSet) -> ParamSet {
    src.clone()
}

fn check_layer(i: usize, in_width: usize, w: &Tensor, b: &Tensor) -> Result<()> {
    if w.shape().len() != 2 || w.rows() != in_width || b.len() != w.cols() {
        return Err(Error::Dimension {
            layer: Some(i),
            msg: format!("input width {in_width}, weight {:?}, bias {:?}", w.shape(), b.shape()),
        });
    }
    Ok(())
}

/// Plain forward pass (no recording). `input` is `(batch, width)`.
pub fn mlp_forward(params: &ParamSet, input: &Tensor, activation: Activation) -> Result<Tensor> {
    let layers = params.num_layers();
    if layers == 0 {
        return Err(Error::Dimension { layer: Some(0), msg: "no layers".into() });
    }
    let batch = input.rows();
    let mut h = input.clone();
    for i in 0..layers {
        let (w, b) = params.layer(i)?;
        check_layer(i, h.cols(), w, b)?;
        let (k, n) = (w.rows(), w.cols());
        let mut out = Vec::with_capacity(batch * n);
        for _ in 0..batch {
            out.extend_from_slice(b.data());
        }
        gemm(batch, k, n, h.data(), false, w.data(), false, &mut out, true);
        if i + 1 < layers {
            match activation {
                Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
            }
        }
        h = Tensor::from_parts(vec![batch, n], out);
    }
    Ok(h)
}

/// Forward pass recorded on `tape`. With `trainable` the weights become
/// named parameters (gradients reported as `net/w0`, ...); otherwise they
/// enter as constants and only the input receives gradient.
pub fn mlp_forward_tape(
    tape: &mut Tape,
    params: &ParamSet,
    input: Var,
    activation: Activation,
    trainable: bool,
) -> Result<Var> {
    let layers = params.num_layers();
    if layers == 0 {
        return Err(Error::Dimension { layer: Some(0), msg: "no layers".into() });
    }
    let mut h = input;
    for i in 0..layers {
        let (w, b) = params.layer(i)?;
        check_layer(i, tape.value(h).cols(), w, b)?;
        let (wv, bv) = if trainable {
            (
                tape.param(&params.qualified(&format!("w{i}")), w),
                tape.param(&params.qualified(&format!("b{i}")), b),
            )
        } else {
            (tape.constant(w.clone()), tape.constant(b.clone()))
        };
        h = tape.linear(h, wv, bv)?;
        if i + 1 < layers {
            h = match activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
            };
        }
    }
    Ok(h)
}
