//! Quantum denoisers: Q-Dense, the quantum convolution, and QU-Net.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{amplitude_embed, embed_guided, label_angle};
use crate::error::{Error, Result};
use crate::grad::{circuit_vjp, readout_weights, Cotangent, GradMethod};
use crate::image::{mse, ImageTensor};
use crate::qstate::{apply_circuit, Angle, CircuitBuilder, CircuitSpec, Gate, GateKind};
use crate::vqc::{self, build_stack_circuit, uniform_reupload_points, ANGLES_PER_ROT};

/// A parameterized image-to-image map trained as a diffusion denoiser.
pub trait Denoiser: Sync {
    fn n_params(&self) -> usize;

    /// Number of classes when the model is label-guided.
    fn n_classes(&self) -> Option<usize>;

    fn forward(&self, params: &[f64], x: &ImageTensor, label: Option<usize>) -> Result<ImageTensor>;

    /// `MSE(forward(x), target)` and its gradient in the parameters.
    fn mse_grad(
        &self,
        params: &[f64],
        x: &ImageTensor,
        label: Option<usize>,
        target: &ImageTensor,
        method: GradMethod,
    ) -> Result<(f64, Vec<f64>)>;
}

fn check_label(guided: Option<usize>, label: Option<usize>) -> Result<Option<usize>> {
    match (guided, label) {
        (Some(n), Some(l)) if l < n => Ok(Some(l)),
        (Some(n), Some(l)) => Err(Error::ClassOutOfRange { index: l, n_classes: n }),
        (Some(_), None) => Err(Error::InvalidArgument("guided model needs a class label".into())),
        (None, _) => Ok(None),
    }
}

fn mse_cotangent(out: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = out.len() as f64;
    let d = out.iter().zip(target).map(|(o, t)| 2.0 * (o - t) / n).collect();
    (mse(out, target), d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QDenseConfig {
    pub n_image_qubits: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub guided: bool,
    /// Carry an extra qubit in `|0⟩` even when unguided.
    #[serde(default)]
    pub ancilla: bool,
    #[serde(default)]
    pub n_reuploads: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
}

fn default_classes() -> usize {
    2
}

impl QDenseConfig {
    pub fn has_ancilla(&self) -> bool {
        self.guided || self.ancilla
    }

    pub fn n_qubits(&self) -> usize {
        self.n_image_qubits + usize::from(self.has_ancilla())
    }

    /// `n_layers × 3 × n_qubits`
    pub fn n_params(&self) -> usize {
        vqc::param_count(self.n_layers, self.n_qubits())
    }
}

/// Dense (strongly entangling) circuit over amplitude-embedded pixels, with an
/// optional label ancilla as the last qubit.
#[derive(Debug, Clone)]
pub struct QDense {
    cfg: QDenseConfig,
    /// One circuit per class when guided (re-upload gates carry the label angle).
    circuits: Vec<CircuitSpec>,
}

impl QDense {
    pub fn new(cfg: QDenseConfig) -> Result<Self> {
        if cfg.guided && cfg.n_classes == 0 {
            return Err(Error::InvalidArgument("guided model needs at least one class".into()));
        }
        if !cfg.guided && cfg.n_reuploads > 0 {
            return Err(Error::InvalidArgument("re-uploading requires a guided model".into()));
        }
        let points: BTreeSet<usize> = uniform_reupload_points(cfg.n_reuploads, cfg.n_layers)?;
        let n = cfg.n_qubits();
        let circuits = if cfg.guided {
            (0..cfg.n_classes)
                .map(|c| {
                    let g = Gate::rx(cfg.n_image_qubits, label_angle(c, cfg.n_classes)?);
                    build_stack_circuit(n, cfg.n_layers, &points, Some(&g))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![build_stack_circuit(n, cfg.n_layers, &points, None)?]
        };
        debug_assert!(circuits.iter().all(|c| c.n_params() == cfg.n_params()));
        Ok(Self { cfg, circuits })
    }

    pub fn config(&self) -> &QDenseConfig {
        &self.cfg
    }

    pub fn circuit(&self, label: Option<usize>) -> &CircuitSpec {
        &self.circuits[label.unwrap_or(0).min(self.circuits.len() - 1)]
    }

    /// Amplitude embedding, plus the ancilla in its label state (or `|0⟩`).
    pub fn embed(&self, pixels: &[f64], label: Option<usize>) -> Result<crate::embed::Embedded> {
        let cfg = &self.cfg;
        match check_label(self.guided(), label)? {
            Some(l) => embed_guided(pixels, cfg.n_image_qubits, l, cfg.n_classes),
            None if cfg.ancilla => embed_guided(pixels, cfg.n_image_qubits, 0, 1),
            None => amplitude_embed(pixels, cfg.n_image_qubits),
        }
    }

    fn guided(&self) -> Option<usize> {
        self.cfg.guided.then_some(self.cfg.n_classes)
    }
}

impl Denoiser for QDense {
    fn n_params(&self) -> usize {
        self.cfg.n_params()
    }

    fn n_classes(&self) -> Option<usize> {
        self.guided()
    }

    fn forward(&self, params: &[f64], x: &ImageTensor, label: Option<usize>) -> Result<ImageTensor> {
        let label = check_label(self.guided(), label)?;
        let e = self.embed(x.values(), label)?;
        let s = apply_circuit(&e.state, self.circuit(label), params)?;
        let out = vqc::readout(&s, self.cfg.n_image_qubits, x.len(), e.norm)?;
        x.with_values(out)
    }

    fn mse_grad(
        &self,
        params: &[f64],
        x: &ImageTensor,
        label: Option<usize>,
        target: &ImageTensor,
        method: GradMethod,
    ) -> Result<(f64, Vec<f64>)> {
        x.check_same_shape(target)?;
        let label = check_label(self.guided(), label)?;
        let e = self.embed(x.values(), label)?;
        let circuit = self.circuit(label);
        let s = apply_circuit(&e.state, circuit, params)?;
        let out = vqc::readout(&s, self.cfg.n_image_qubits, x.len(), e.norm)?;
        let (loss, d_out) = mse_cotangent(&out, target.values());
        let w = readout_weights(self.cfg.n_qubits(), self.cfg.n_image_qubits, &d_out, e.norm);
        let vjp = circuit_vjp(circuit, params, &e.state, &Cotangent::Probabilities(w), method, false)?;
        Ok((loss, vjp.params))
    }
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QConvConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub n_layers: usize,
}

impl QConvConfig {
    /// `max(⌈log₂(c_in·k²)⌉, ⌈log₂ c_out⌉)`, at least one wire.
    pub fn wires(&self) -> usize {
        ceil_log2(self.c_in * self.kernel * self.kernel)
            .max(ceil_log2(self.c_out))
            .max(1)
    }

    /// Wires read out per patch: enough for `c_out` outcomes, at least one.
    pub fn n_measured(&self) -> usize {
        ceil_log2(self.c_out).max(1)
    }

    /// `n_layers × 3 × wires`
    pub fn n_params(&self) -> usize {
        vqc::param_count(self.n_layers, self.wires())
    }
}

/// Quantum convolution: each `c_in × k × k` patch is amplitude-embedded into
/// one shared dense circuit whose first `c_out` outcome probabilities, scaled
/// by the patch norm, become the output channels at that position.
#[derive(Debug, Clone)]
pub struct QConv {
    cfg: QConvConfig,
    circuit: CircuitSpec,
}

struct Patch {
    values: Vec<f64>,
    norm: f64,
}

impl QConv {
    pub fn new(cfg: QConvConfig) -> Result<Self> {
        if cfg.c_in == 0 || cfg.c_out == 0 || cfg.kernel == 0 {
            return Err(Error::InvalidArgument(format!("degenerate convolution {cfg:?}")));
        }
        let w = cfg.wires();
        let circuit = if w >= 2 {
            build_stack_circuit(w, cfg.n_layers, &BTreeSet::new(), None)?
        } else {
            // a single wire has nothing to entangle with: rotations only
            let mut b = CircuitBuilder::new(1);
            for _ in 0..cfg.n_layers {
                b.push(GateKind::Rot, vec![0], vec![Angle::Param; ANGLES_PER_ROT]).end_layer();
            }
            b.build()?
        };
        Ok(Self { cfg, circuit })
    }

    pub fn config(&self) -> &QConvConfig {
        &self.cfg
    }

    pub fn circuit(&self) -> &CircuitSpec {
        &self.circuit
    }

    fn patch(&self, input: &ImageTensor, y: usize, x: usize) -> Patch {
        let k = self.cfg.kernel;
        let pad = (k - 1) / 2;
        let (h, w) = (input.height() as isize, input.width() as isize);
        let mut values = Vec::with_capacity(self.cfg.c_in * k * k);
        for c in 0..self.cfg.c_in {
            for dy in 0..k {
                for dx in 0..k {
                    let sy = y as isize + dy as isize - pad as isize;
                    let sx = x as isize + dx as isize - pad as isize;
                    let v = if (0..h).contains(&sy) && (0..w).contains(&sx) {
                        input.get(c, sy as usize, sx as usize)
                    } else {
                        0.0
                    };
                    values.push(v);
                }
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Patch { values, norm }
    }

    fn check_input(&self, input: &ImageTensor) -> Result<()> {
        if input.channels() != self.cfg.c_in {
            return Err(Error::Shape(format!(
                "quantum convolution expects {} channels, got {}",
                self.cfg.c_in,
                input.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(input)?;
        self.circuit.check_params(params)?;
        let (h, w) = (input.height(), input.width());
        let c_out = self.cfg.c_out;
        let per_pos = (0..h * w)
            .into_par_iter()
            .map(|pos| {
                let p = self.patch(input, pos / w, pos % w);
                if p.norm == 0.0 {
                    return Ok(vec![0.0; c_out]);
                }
                let e = amplitude_embed(&p.values, self.cfg.wires())?;
                let s = apply_circuit(&e.state, &self.circuit, params)?;
                vqc::readout(&s, self.cfg.n_measured(), c_out, e.norm)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = ImageTensor::zeros(c_out, h, w);
        for (pos, vals) in per_pos.iter().enumerate() {
            for (c, v) in vals.iter().enumerate() {
                out.set(c, pos / w, pos % w, *v);
            }
        }
        Ok(out)
    }

    /// Pulls `d_out` back to the parameters and the input image.
    pub fn vjp(
        &self,
        params: &[f64],
        input: &ImageTensor,
        d_out: &ImageTensor,
        method: GradMethod,
    ) -> Result<(Vec<f64>, ImageTensor)> {
        self.check_input(input)?;
        let (h, w) = (input.height(), input.width());
        let k = self.cfg.kernel;
        let pad = (k - 1) / 2;
        let wires = self.cfg.wires();
        let n_meas = self.cfg.n_measured();
        let per_pos = (0..h * w)
            .into_par_iter()
            .map(|pos| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
                let (y, x) = (pos / w, pos % w);
                let p = self.patch(input, y, x);
                if p.norm == 0.0 {
                    return Ok(None);
                }
                let g: Vec<f64> = (0..self.cfg.c_out).map(|c| d_out.get(c, y, x)).collect();
                let e = amplitude_embed(&p.values, wires)?;
                let weights = readout_weights(wires, n_meas, &g, e.norm);
                let vjp = circuit_vjp(&self.circuit, params, &e.state, &Cotangent::Probabilities(weights), method, true)?;
                let lambda = vjp.input.expect("input gradient requested");
                // out_k = r·P_k(s/r): d/ds = (Σ g_k P_k)·ψ + (I − ψψᵀ)·v / r
                let s = apply_circuit(&e.state, &self.circuit, params)?;
                let probs = vqc::marginal_probabilities(&s, n_meas)?;
                let d_norm: f64 = g.iter().zip(&probs).map(|(g, p)| g * p).sum();
                let m = p.values.len();
                let psi: Vec<f64> = p.values.iter().map(|v| v / p.norm).collect();
                let v: Vec<f64> = lambda[..m].iter().map(|l| 2.0 * l.re).collect();
                let psi_v: f64 = psi.iter().zip(&v).map(|(a, b)| a * b).sum();
                let d_patch = psi
                    .iter()
                    .zip(&v)
                    .map(|(ps, vi)| d_norm * ps + (vi - psi_v * ps) / p.norm)
                    .collect();
                Ok(Some((vjp.params, d_patch)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut d_params = vec![0.0; self.circuit.n_params()];
        let mut d_input = ImageTensor::zeros(self.cfg.c_in, h, w);
        for (pos, item) in per_pos.into_iter().enumerate() {
            let Some((dp, d_patch)) = item else { continue };
            for (a, b) in d_params.iter_mut().zip(&dp) {
                *a += b;
            }
            let (y, x) = (pos / w, pos % w);
            let mut i = 0;
            for c in 0..self.cfg.c_in {
                for dy in 0..k {
                    for dx in 0..k {
                        let sy = y as isize + dy as isize - pad as isize;
                        let sx = x as isize + dx as isize - pad as isize;
                        if (0..h as isize).contains(&sy) && (0..w as isize).contains(&sx) {
                            let (sy, sx) = (sy as usize, sx as usize);
                            let cur = d_input.get(c, sy, sx);
                            d_input.set(c, sy, sx, cur + d_patch[i]);
                        }
                        i += 1;
                    }
                }
            }
        }
        Ok((d_params, d_input))
    }
}

/// `qconv2d` as a free function over a config.
pub fn qconv2d(cfg: QConvConfig, params: &[f64], input: &ImageTensor) -> Result<ImageTensor> {
    QConv::new(cfg)?.forward(params, input)
}

/// Label stripes: row `y` of class `c` holds `0.1·sin(c + y/20)` in every column.
pub fn guidance_mask(class_index: usize, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("mask needs a non-empty grid".into()));
    }
    let mut values = Vec::with_capacity(height * width);
    for y in 0..height {
        let v = 0.1 * (class_index as f64 + y as f64 / 20.0).sin();
        values.extend(std::iter::repeat(v).take(width));
    }
    ImageTensor::gray(height, width, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QUNetConfig {
    /// Channels per level; strictly increasing, one entry per level.
    pub channels: Vec<usize>,
    pub layers_per_qconv: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default)]
    pub guided: bool,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
}

fn default_kernel() -> usize {
    3
}

impl QUNetConfig {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }
}

/// U-Net with one quantum convolution per block, average-pool downsampling,
/// nearest-neighbour upsampling, channel-concatenated skips, and a final
/// 1×1 quantum convolution to a single channel.
#[derive(Debug, Clone)]
pub struct QUNet {
    cfg: QUNetConfig,
    encoders: Vec<QConv>,
    /// `decoders[i]` produces level `i` from level `i + 1`; applied deepest first.
    decoders: Vec<QConv>,
    head: QConv,
    offsets: Vec<usize>,
}

struct Tape {
    enc_inputs: Vec<ImageTensor>,
    dec_inputs: Vec<ImageTensor>,
    head_input: ImageTensor,
}

impl QUNet {
    pub fn new(cfg: QUNetConfig) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.channels.windows(2).any(|w| w[0] >= w[1]) || cfg.channels[0] == 0 {
            return Err(Error::InvalidArgument(format!(
                "channel ladder {:?} must be non-empty and strictly increasing",
                cfg.channels
            )));
        }
        if cfg.guided && cfg.n_classes == 0 {
            return Err(Error::InvalidArgument("guided model needs at least one class".into()));
        }
        let ch = &cfg.channels;
        let l = cfg.layers_per_qconv;
        let k = cfg.kernel;
        let encoders = (0..ch.len())
            .map(|i| {
                let c_in = if i == 0 { 1 } else { ch[i - 1] };
                QConv::new(QConvConfig { c_in, c_out: ch[i], kernel: k, n_layers: l })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoders = (0..ch.len() - 1)
            .map(|i| QConv::new(QConvConfig { c_in: ch[i + 1] + ch[i], c_out: ch[i], kernel: k, n_layers: l }))
            .collect::<Result<Vec<_>>>()?;
        let head = QConv::new(QConvConfig { c_in: ch[0], c_out: 1, kernel: 1, n_layers: l })?;
        let mut offsets = vec![0];
        // parameter blocks in execution order: encoders, decoders deepest first, head
        let order = encoders.iter().chain(decoders.iter().rev()).chain(std::iter::once(&head));
        for q in order {
            offsets.push(offsets.last().unwrap() + q.config().n_params());
        }
        Ok(Self { cfg, encoders, decoders, head, offsets })
    }

    pub fn config(&self) -> &QUNetConfig {
        &self.cfg
    }

    /// Quantum convolutions in parameter order.
    pub fn layers(&self) -> Vec<&QConv> {
        self.encoders.iter().chain(self.decoders.iter().rev()).chain(std::iter::once(&self.head)).collect()
    }

    fn block<'p>(&self, params: &'p [f64], index: usize) -> &'p [f64] {
        &params[self.offsets[index]..self.offsets[index + 1]]
    }

    fn check(&self, params: &[f64], x: &ImageTensor) -> Result<()> {
        let expected = self.n_params();
        if params.len() != expected {
            return Err(Error::ParamCount { expected, actual: params.len() });
        }
        if x.channels() != 1 {
            return Err(Error::Shape(format!("QU-Net takes one channel, got {}", x.channels())));
        }
        let div = 1usize << (self.cfg.depth() - 1);
        if x.height() % div != 0 || x.width() % div != 0 {
            return Err(Error::Shape(format!(
                "{}×{} is not divisible by {div} for depth {}",
                x.height(),
                x.width(),
                self.cfg.depth()
            )));
        }
        Ok(())
    }

    fn run(&self, params: &[f64], x: &ImageTensor, label: Option<usize>) -> Result<(ImageTensor, Tape)> {
        self.check(params, x)?;
        let label = check_label(self.cfg.guided.then_some(self.cfg.n_classes), label)?;
        let mut h = x.clone();
        if let Some(l) = label {
            let mask = guidance_mask(l, x.height(), x.width())?;
            for (v, m) in h.values_mut().iter_mut().zip(mask.values()) {
                *v += m;
            }
        }
        let d = self.cfg.depth();
        let mut enc_inputs = Vec::with_capacity(d);
        let mut skips = Vec::with_capacity(d);
        for (i, enc) in self.encoders.iter().enumerate() {
            if i > 0 {
                h = avg_pool2(&h);
            }
            enc_inputs.push(h.clone());
            h = enc.forward(self.block(params, i), &h)?;
            skips.push(h.clone());
        }
        let mut dec_inputs = Vec::with_capacity(d - 1);
        for (j, i) in (0..d - 1).rev().enumerate() {
            let cat = upsample2(&h).concat_channels(&skips[i])?;
            dec_inputs.push(cat.clone());
            h = self.decoders[i].forward(self.block(params, d + j), &cat)?;
        }
        let out = self.head.forward(self.block(params, 2 * d - 1), &h)?;
        let mut out = out;
        out.value_range = x.value_range;
        Ok((out, Tape { enc_inputs, dec_inputs, head_input: h }))
    }
}

impl Denoiser for QUNet {
    fn n_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn n_classes(&self) -> Option<usize> {
        self.cfg.guided.then_some(self.cfg.n_classes)
    }

    fn forward(&self, params: &[f64], x: &ImageTensor, label: Option<usize>) -> Result<ImageTensor> {
        Ok(self.run(params, x, label)?.0)
    }

    fn mse_grad(
        &self,
        params: &[f64],
        x: &ImageTensor,
        label: Option<usize>,
        target: &ImageTensor,
        method: GradMethod,
    ) -> Result<(f64, Vec<f64>)> {
        x.check_same_shape(target)?;
        let (out, tape) = self.run(params, x, label)?;
        let (loss, d_out) = mse_cotangent(out.values(), target.values());
        let d = self.cfg.depth();
        let mut grads = vec![0.0; self.n_params()];
        let mut put = |index: usize, g: &[f64]| {
            grads[self.offsets[index]..self.offsets[index + 1]].copy_from_slice(g);
        };

        let (gp, mut g) = self.head.vjp(self.block(params, 2 * d - 1), &tape.head_input, &out.with_values(d_out)?, method)?;
        put(2 * d - 1, &gp);
        let mut d_skips: Vec<Option<ImageTensor>> = vec![None; d];
        for (j, i) in (0..d - 1).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
            let (gp, g_cat) = self.decoders[i].vjp(self.block(params, d + j), &tape.dec_inputs[j], &g, method)?;
            put(d + j, &gp);
            let up_ch = self.cfg.channels[i + 1];
            let (g_up, g_skip) = split_channels(&g_cat, up_ch)?;
            d_skips[i] = Some(g_skip);
            g = upsample2_backward(&g_up);
        }
        for i in (0..d).rev() {
            if let Some(s) = &d_skips[i] {
                for (a, b) in g.values_mut().iter_mut().zip(s.values()) {
                    *a += b;
                }
            }
            let (gp, g_in) = self.encoders[i].vjp(self.block(params, i), &tape.enc_inputs[i], &g, method)?;
            put(i, &gp);
            if i > 0 {
                g = avg_pool2_backward(&g_in);
            }
        }
        Ok((loss, grads))
    }
}

/// 2×2 average pooling.
pub fn avg_pool2(x: &ImageTensor) -> ImageTensor {
    let (c, h, w) = x.shape();
    let mut out = ImageTensor::zeros(c, h / 2, w / 2);
    for ch in 0..c {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let s = x.get(ch, 2 * y, 2 * xx)
                    + x.get(ch, 2 * y + 1, 2 * xx)
                    + x.get(ch, 2 * y, 2 * xx + 1)
                    + x.get(ch, 2 * y + 1, 2 * xx + 1);
                out.set(ch, y, xx, s / 4.0);
            }
        }
    }
    out.value_range = x.value_range;
    out
}

fn avg_pool2_backward(g: &ImageTensor) -> ImageTensor {
    let (c, h, w) = g.shape();
    let mut out = ImageTensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..2 * w {
                out.set(ch, y, x, g.get(ch, y / 2, x / 2) / 4.0);
            }
        }
    }
    out
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &ImageTensor) -> ImageTensor {
    let (c, h, w) = x.shape();
    let mut out = ImageTensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.set(ch, y, xx, x.get(ch, y / 2, xx / 2));
            }
        }
    }
    out.value_range = x.value_range;
    out
}

fn upsample2_backward(g: &ImageTensor) -> ImageTensor {
    let (c, h, w) = g.shape();
    let mut out = ImageTensor::zeros(c, h / 2, w / 2);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let cur = out.get(ch, y / 2, x / 2);
                out.set(ch, y / 2, x / 2, cur + g.get(ch, y, x));
            }
        }
    }
    out
}

fn split_channels(x: &ImageTensor, first: usize) -> Result<(ImageTensor, ImageTensor)> {
    let (c, h, w) = x.shape();
    let cut = first * h * w;
    let a = ImageTensor::new(first, h, w, x.values()[..cut].to_vec())?;
    let b = ImageTensor::new(c - first, h, w, x.values()[cut..].to_vec())?;
    Ok((a, b))
}

/// Either denoiser architecture behind one type.
#[derive(Debug, Clone)]
pub enum Model {
    QDense(QDense),
    QUNet(QUNet),
}

impl Denoiser for Model {
    fn n_params(&self) -> usize {
        match self {
            Model::QDense(m) => m.n_params(),
            Model::QUNet(m) => m.n_params(),
        }
    }

    fn n_classes(&self) -> Option<usize> {
        match self {
            Model::QDense(m) => m.n_classes(),
            Model::QUNet(m) => m.n_classes(),
        }
    }

    fn forward(&self, params: &[f64], x: &ImageTensor, label: Option<usize>) -> Result<ImageTensor> {
        match self {
            Model::QDense(m) => m.forward(params, x, label),
            Model::QUNet(m) => m.forward(params, x, label),
        }
    }

    fn mse_grad(
        &self,
        params: &[f64],
        x: &ImageTensor,
        label: Option<usize>,
        target: &ImageTensor,
        method: GradMethod,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            Model::QDense(m) => m.mse_grad(params, x, label, target, method),
            Model::QUNet(m) => m.mse_grad(params, x, label, target, method),
        }
    }
}
