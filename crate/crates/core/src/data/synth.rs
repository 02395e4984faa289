//! Class-conditional pattern images and shifted variants for transfer experiments.
//!
//! Every class owns a prototype: a carrier orientation, a spatial frequency, a
//! hue and a blob position. Samples jitter the prototype and add pixel noise.
//! A [`Shift`] rotates orientations, rotates hues and can swap the grating
//! carrier for a checkerboard.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample, Split};
use crate::error::{ForgeError, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Shift {
    /// Added to every class orientation.
    pub rotation_deg: f64,
    /// Fraction of the color wheel added to every class hue.
    pub hue_shift: f64,
    /// Checkerboard carrier instead of a grating.
    pub texture_swap: bool,
    /// Hue and blob position are drawn per sample, independent of the class.
    pub decorrelate: bool,
}

impl Shift {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.rotation_deg == 0.0 && self.hue_shift == 0.0 && !self.texture_swap && !self.decorrelate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub shift: Shift,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            image_size: 32,
            n_train: 800,
            n_val: 200,
            n_test: 500,
            noise: 0.05,
            shift: Shift {
                rotation_deg: 45.0,
                hue_shift: 0.5,
                texture_swap: true,
                decorrelate: true,
            },
        }
    }
}

/// Class template before per-sample jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prototype {
    pub orientation: f64,
    pub frequency: f64,
    pub hue: f64,
    pub blob: (f64, f64),
    pub checker: bool,
    /// Hue and blob position are nuisance variables.
    pub decorrelated: bool,
}

/// Prototypes of all classes under `shift`.
pub fn prototypes(num_classes: usize, shift: &Shift) -> Vec<Prototype> {
    const FREQS: [f64; 3] = [2.0, 3.0, 4.5];
    const BLOBS: [(f64, f64); 4] = [(0.27, 0.27), (0.27, 0.73), (0.73, 0.27), (0.73, 0.73)];
    (0..num_classes)
        .map(|k| Prototype {
            orientation: PI * k as f64 / num_classes as f64 + shift.rotation_deg.to_radians(),
            frequency: FREQS[k % FREQS.len()],
            hue: (k as f64 * 0.381_966 + shift.hue_shift).rem_euclid(1.0),
            blob: BLOBS[(k / FREQS.len() + k) % BLOBS.len()],
            checker: shift.texture_swap,
            decorrelated: shift.decorrelate,
        })
        .collect()
}

fn hue_rgb(h: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0).rem_euclid(6.0);
        1.0 - (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [f(5.0), f(3.0), f(1.0)]
}

/// Draws one image of the class described by `proto`.
pub fn render(proto: &Prototype, size: usize, noise: f64, rng: &mut Rng) -> Tensor<f32> {
    let theta = proto.orientation + rng.standard_normal() * 0.04;
    let phase = rng.uniform_range(0.0, 2.0 * PI);
    let phase2 = rng.uniform_range(0.0, 2.0 * PI);
    let contrast = rng.uniform_range(0.6, 1.0);
    let brightness = rng.uniform_range(-0.08, 0.08);
    let (hue, center) = if proto.decorrelated {
        (rng.uniform(), (rng.uniform_range(0.27, 0.73), rng.uniform_range(0.27, 0.73)))
    } else {
        (proto.hue, proto.blob)
    };
    let color = hue_rgb((hue + rng.standard_normal() * 0.02).rem_euclid(1.0));
    let (by, bx) = (
        center.0 + rng.uniform_range(-0.08, 0.08),
        center.1 + rng.uniform_range(-0.08, 0.08),
    );
    let radius = 0.16;
    let (c, s) = (theta.cos(), theta.sin());
    let n = size as f64;
    let mut carrier = vec![0.0; size * size];
    let mut blob = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / n, (y as f64 + 0.5) / n);
            let a = 2.0 * PI * proto.frequency * (u * c + v * s) + phase;
            carrier[y * size + x] = if proto.checker {
                let b = 2.0 * PI * proto.frequency * (-u * s + v * c) + phase2;
                (a.cos() * b.cos()).signum()
            } else {
                a.cos()
            };
            let d2 = (u - bx).powi(2) + (v - by).powi(2);
            blob[y * size + x] = (-d2 / (2.0 * radius * radius)).exp();
        }
    }
    let mut data = Vec::with_capacity(3 * size * size);
    for &col in &color {
        for i in 0..size * size {
            let v = 0.5
                + brightness
                + 0.22 * contrast * carrier[i] * (0.4 + col)
                + 0.3 * blob[i] * (col - 0.5)
                + noise * rng.standard_normal();
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(&[3, size, size], data).expect("rendered size")
}

fn draw_split(protos: &[Prototype], spec: &SynthSpec, n: usize, split: Split, rng: &mut Rng) -> Result<Dataset> {
    let c = protos.len();
    let samples = (0..n)
        .map(|i| {
            // balanced labels, shuffled order
            let label = i % c;
            Sample {
                image: render(&protos[label], spec.image_size, spec.noise, rng),
                label,
            }
        })
        .collect::<Vec<_>>();
    let mut samples = samples;
    rng.shuffle(&mut samples);
    Dataset::new(samples, c, split)
}

/// Train, validation and test splits of one task.
#[derive(Debug, Clone)]
pub struct TaskSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone)]
pub struct TransferPair {
    pub source: TaskSplits,
    pub target: TaskSplits,
}

/// Splits of a single task from `protos`, drawn from disjoint random streams.
pub fn synth_task(protos: &[Prototype], spec: &SynthSpec, rng: &Rng) -> Result<TaskSplits> {
    Ok(TaskSplits {
        train: draw_split(protos, spec, spec.n_train, Split::Train, &mut rng.derive(0))?,
        val: draw_split(protos, spec, spec.n_val, Split::Val, &mut rng.derive(1))?,
        test: draw_split(protos, spec, spec.n_test, Split::Test, &mut rng.derive(2))?,
    })
}

/// Source task and its shifted target. With a zero shift and the same
/// seed both tasks sample from the same distribution.
pub fn synth_transfer_pair(rng: &Rng, spec: &SynthSpec) -> Result<TransferPair> {
    if spec.num_classes < 2 {
        return Err(ForgeError::contract("a classification task needs at least two classes"));
    }
    if spec.image_size < 4 {
        return Err(ForgeError::contract("synthetic images need at least 4 pixels per side"));
    }
    let src = prototypes(spec.num_classes, &Shift::none());
    let tgt = prototypes(spec.num_classes, &spec.shift);
    Ok(TransferPair {
        source: synth_task(&src, spec, &rng.derive(10))?,
        target: synth_task(&tgt, spec, &rng.derive(20))?,
    })
}
