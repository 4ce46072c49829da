//! Synthetic dual-polarization ship chips.
//!
//! Each chip is dark sea with single-look speckle (unit-mean exponential
//! intensity, uniform phase) and one bright elliptical ship whose length
//! band is set by its class. Inside the ship both channels share one
//! speckle draw, with the VV backscatter stronger than VH.

use std::f64::consts::PI;

use num_complex::Complex32;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::seed;

use super::chip::ComplexChipPair;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    /// Chip side length in pixels.
    pub size: usize,
    /// Mean sea intensity for VV and VH.
    pub sea_vv: f64,
    pub sea_vh: f64,
    /// Mean ship intensity for VV and VH before per-chip brightness jitter.
    pub ship_vv: f64,
    pub ship_vh: f64,
}

impl SynthConfig {
    pub fn new(classes: usize, size: usize) -> Self {
        SynthConfig {
            classes,
            size,
            sea_vv: 1.0,
            sea_vh: 0.4,
            ship_vv: 30.0,
            ship_vh: 9.0,
        }
    }

    /// Nominal ship length (pixels) at the centre of `class_id`'s band.
    pub fn class_length(&self, class_id: usize) -> f64 {
        let s = self.size as f64;
        0.15 * s + 0.55 * s * (class_id as f64 + 0.5) / self.classes as f64
    }

    fn band_width(&self) -> f64 {
        0.55 * self.size as f64 / self.classes as f64
    }

    pub fn geometry(&self, class_id: usize, seed: u64) -> Result<ShipGeometry> {
        self.check(class_id)?;
        let mut rng = seed::rng(seed, &format!("synth/{class_id}/geometry"));
        Ok(self.draw_geometry(class_id, &mut rng))
    }

    fn check(&self, class_id: usize) -> Result<()> {
        if self.classes == 0 || class_id >= self.classes {
            return Err(Error::invalid(
                "synth_chip",
                format!("class {class_id} out of range for {} classes", self.classes),
            ));
        }
        if self.size < 8 {
            return Err(Error::invalid("synth_chip", "chip size must be at least 8"));
        }
        Ok(())
    }

    fn draw_geometry(&self, class_id: usize, rng: &mut impl Rng) -> ShipGeometry {
        let s = self.size as f64;
        let jitter = 0.25 * self.band_width();
        let length = self.class_length(class_id) + rng.random_range(-jitter..=jitter);
        let width = (length * rng.random_range(0.18..0.28)).max(2.0);
        let heading = rng.random_range(0.0..PI);
        let slack = (s / 2.0 - length / 2.0 - 2.0).max(0.0);
        let cx = s / 2.0 + rng.random_range(-slack..=slack) * 0.5;
        let cy = s / 2.0 + rng.random_range(-slack..=slack) * 0.5;
        let brightness = rng.random_range(0.6..1.6);
        ShipGeometry {
            length,
            width,
            heading,
            cx,
            cy,
            brightness,
        }
    }

    /// Deterministic chip for `(class_id, seed)`.
    pub fn chip(&self, class_id: usize, seed: u64) -> Result<ComplexChipPair> {
        let geom = self.geometry(class_id, seed)?;
        let mut rng = seed::rng(seed, &format!("synth/{class_id}/speckle"));
        let n = self.size;
        let mut svh = Vec::with_capacity(n * n);
        let mut svv = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let inside = geom.contains(x as f64 + 0.5, y as f64 + 0.5);
                let s_vv: f64 = Exp1.sample(&mut rng);
                let s_vh: f64 = if inside { s_vv } else { Exp1.sample(&mut rng) };
                let (i_vv, i_vh) = if inside {
                    (
                        self.ship_vv * geom.brightness * s_vv,
                        self.ship_vh * geom.brightness * s_vh,
                    )
                } else {
                    (self.sea_vv * s_vv, self.sea_vh * s_vh)
                };
                let p_vv = rng.random_range(0.0..2.0 * PI);
                let p_vh = rng.random_range(0.0..2.0 * PI);
                svv.push(Complex32::from_polar(i_vv.sqrt() as f32, p_vv as f32));
                svh.push(Complex32::from_polar(i_vh.sqrt() as f32, p_vh as f32));
            }
        }
        Ok(ComplexChipPair::new(n, n, svh, svv, format!("c{class_id}-{seed:016x}"))?.with_label(class_id))
    }
}

/// An elliptical ship footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShipGeometry {
    pub length: f64,
    pub width: f64,
    /// Major-axis angle in radians from the +x axis.
    pub heading: f64,
    pub cx: f64,
    pub cy: f64,
    pub brightness: f64,
}

impl ShipGeometry {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.heading.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let a = self.length / 2.0;
        let b = self.width / 2.0;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }
}

/// Convenience wrapper for a `classes`-way generator at `size` pixels.
pub fn synth_chip(classes: usize, class_id: usize, seed: u64, size: usize) -> Result<ComplexChipPair> {
    SynthConfig::new(classes, size).chip(class_id, seed)
}
