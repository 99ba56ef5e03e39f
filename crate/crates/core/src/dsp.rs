//! IIR filter design, zero-phase filtering and anti-aliased decimation.
//!
//! Designs run through the classic analog-prototype chain (prototype ZPK ->
//! frequency transform -> bilinear transform -> second-order sections) in
//! `f64`, then the coefficient cascade is cast to the working scalar type.
//! Filtering applies each biquad in direct-form II transposed with
//! steady-state initial conditions, and `filtfilt` runs the cascade
//! forward-backward over odd-reflected edge padding so the net phase is zero.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::session::ChannelStream;

/// Filter approximation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterFamily {
    Butterworth,
    /// Chebyshev type II (inverse Chebyshev): flat passband, equiripple stopband.
    Chebyshev2,
}

/// Filter response shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

/// Declarative description of an IIR filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub family: FilterFamily,
    pub kind: FilterKind,
    pub order: u32,
    /// One edge for lowpass, `[low, high]` for bandpass, in Hz.
    pub cutoffs_hz: Vec<f64>,
    /// Required (and only meaningful) for Chebyshev-II designs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopband_atten_db: Option<f64>,
    /// Sampling rate the design targets, in Hz.
    pub fs: f64,
}

impl FilterSpec {
    pub fn butterworth_lowpass(order: u32, cutoff_hz: f64, fs: f64) -> Self {
        Self {
            family: FilterFamily::Butterworth,
            kind: FilterKind::Lowpass,
            order,
            cutoffs_hz: vec![cutoff_hz],
            stopband_atten_db: None,
            fs,
        }
    }

    pub fn butterworth_bandpass(order: u32, low_hz: f64, high_hz: f64, fs: f64) -> Self {
        Self {
            family: FilterFamily::Butterworth,
            kind: FilterKind::Bandpass,
            order,
            cutoffs_hz: vec![low_hz, high_hz],
            stopband_atten_db: None,
            fs,
        }
    }

    pub fn chebyshev2_bandpass(
        order: u32,
        low_hz: f64,
        high_hz: f64,
        atten_db: f64,
        fs: f64,
    ) -> Self {
        Self {
            family: FilterFamily::Chebyshev2,
            kind: FilterKind::Bandpass,
            order,
            cutoffs_hz: vec![low_hz, high_hz],
            stopband_atten_db: Some(atten_db),
            fs,
        }
    }

    pub fn chebyshev2_lowpass(order: u32, cutoff_hz: f64, atten_db: f64, fs: f64) -> Self {
        Self {
            family: FilterFamily::Chebyshev2,
            kind: FilterKind::Lowpass,
            order,
            cutoffs_hz: vec![cutoff_hz],
            stopband_atten_db: Some(atten_db),
            fs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::FilterSpec("order must be >= 1".into()));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::FilterSpec(format!("invalid fs {}", self.fs)));
        }
        let expected = match self.kind {
            FilterKind::Lowpass => 1,
            FilterKind::Bandpass => 2,
        };
        if self.cutoffs_hz.len() != expected {
            return Err(Error::FilterSpec(format!(
                "{:?} needs {} cutoff(s), got {}",
                self.kind,
                expected,
                self.cutoffs_hz.len()
            )));
        }
        let nyquist = self.fs / 2.0;
        for &f in &self.cutoffs_hz {
            if !(f.is_finite() && f > 0.0 && f < nyquist) {
                return Err(Error::FilterSpec(format!(
                    "cutoff {f} Hz outside (0, {nyquist}) Hz"
                )));
            }
        }
        if self.kind == FilterKind::Bandpass && self.cutoffs_hz[0] >= self.cutoffs_hz[1] {
            return Err(Error::FilterSpec(format!(
                "bandpass edges must satisfy low < high, got {:?}",
                self.cutoffs_hz
            )));
        }
        match self.family {
            FilterFamily::Chebyshev2 => match self.stopband_atten_db {
                Some(a) if a > 0.0 => {}
                _ => {
                    return Err(Error::FilterSpec(
                        "Chebyshev-II requires stopband_atten_db > 0".into(),
                    ))
                }
            },
            FilterFamily::Butterworth => {
                if self.stopband_atten_db.is_some() {
                    return Err(Error::FilterSpec(
                        "stopband_atten_db only applies to Chebyshev-II".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad<F> {
    pub b: [F; 3],
    pub a: [F; 2],
}

/// A designed filter as a cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRealization<F> {
    pub sections: Vec<Biquad<F>>,
    pub fs: f64,
}

impl<F: Float> FilterRealization<F> {
    /// Complex frequency response at `f_hz` (evaluated in f64).
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / self.fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let mut h = Complex64::new(1.0, 0.0);
        for s in &self.sections {
            let num = Complex64::new(s.b[0].as_f64(), 0.0)
                + z1 * s.b[1].as_f64()
                + z2 * s.b[2].as_f64();
            let den = Complex64::new(1.0, 0.0) + z1 * s.a[0].as_f64() + z2 * s.a[1].as_f64();
            h *= num / den;
        }
        h
    }

    /// Magnitude response in dB at `f_hz`.
    pub fn magnitude_db(&self, f_hz: f64) -> f64 {
        20.0 * self.response(f_hz).norm().log10()
    }

    /// Largest pole radius over all sections.
    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .map(|s| {
                let a1 = s.a[0].as_f64();
                let a2 = s.a[1].as_f64();
                // roots of z^2 + a1 z + a2
                let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
                let r1 = ((-a1 + disc.re).hypot(disc.im)) / 2.0;
                let r2 = ((-a1 - disc.re).hypot(-disc.im)) / 2.0;
                r1.max(r2)
            })
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Analog prototypes and transforms (all f64 / Complex64)
// ---------------------------------------------------------------------------

struct Zpk {
    z: Vec<Complex64>,
    p: Vec<Complex64>,
    k: f64,
}

/// Butterworth analog prototype: poles evenly spaced on the unit circle.
fn butter_prototype(n: u32) -> Zpk {
    let n = n as i64;
    let mut p = Vec::new();
    let mut m = -n + 1;
    while m < n {
        let theta = PI * m as f64 / (2.0 * n as f64);
        p.push(-(Complex64::new(0.0, theta)).exp());
        m += 2;
    }
    Zpk {
        z: vec![],
        p,
        k: 1.0,
    }
}

/// Chebyshev-II analog prototype with unit stopband edge and `rs` dB of
/// stopband attenuation.
fn cheb2_prototype(n: u32, rs: f64) -> Zpk {
    let nn = n as i64;
    let de = 1.0 / (10f64.powf(0.1 * rs) - 1.0).sqrt();
    let mu = (1.0 / de).asinh() / n as f64;

    // Zeros on the imaginary axis; odd orders skip the midpoint (zero at
    // infinity instead).
    let mut z = Vec::new();
    let mut m = -nn + 1;
    while m < nn {
        if m != 0 {
            let s = (m as f64 * PI / (2.0 * nn as f64)).sin();
            z.push(-(Complex64::new(0.0, 1.0 / s)).conj());
        }
        m += 2;
    }

    let mut p = Vec::new();
    let mut m = -nn + 1;
    while m < nn {
        let theta = PI * m as f64 / (2.0 * nn as f64);
        let base = -(Complex64::new(0.0, theta)).exp();
        let warped = Complex64::new(mu.sinh() * base.re, mu.cosh() * base.im);
        p.push(warped.inv());
        m += 2;
    }

    let prod = |roots: &[Complex64]| {
        roots
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, r| acc * (-r))
    };
    let k = (prod(&p) / prod(&z)).re;

    Zpk { z, p, k }
}

fn relative_degree(zpk: &Zpk) -> usize {
    zpk.p.len() - zpk.z.len()
}

fn lp2lp_zpk(zpk: &Zpk, wo: f64) -> Zpk {
    let degree = relative_degree(zpk);
    Zpk {
        z: zpk.z.iter().map(|x| x * wo).collect(),
        p: zpk.p.iter().map(|x| x * wo).collect(),
        k: zpk.k * wo.powi(degree as i32),
    }
}

fn lp2bp_zpk(zpk: &Zpk, wo: f64, bw: f64) -> Zpk {
    let degree = relative_degree(zpk);
    let scale = |x: &Complex64| x * (bw / 2.0);
    let shift = |x: Complex64| {
        let root = (x * x - wo * wo).sqrt();
        (x + root, x - root)
    };

    let mut z = Vec::with_capacity(zpk.z.len() * 2 + degree);
    let mut p = Vec::with_capacity(zpk.p.len() * 2);
    for zi in zpk.z.iter().map(scale) {
        let (a, b) = shift(zi);
        z.push(a);
        z.push(b);
    }
    for pi in zpk.p.iter().map(scale) {
        let (a, b) = shift(pi);
        p.push(a);
        p.push(b);
    }
    // Zeros that were at infinity move to the origin.
    z.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(degree));

    Zpk {
        z,
        p,
        k: zpk.k * bw.powi(degree as i32),
    }
}

fn bilinear_zpk(zpk: &Zpk, fs: f64) -> Zpk {
    let degree = relative_degree(zpk);
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let warp = |x: &Complex64| (fs2 + x) / (fs2 - x);

    let mut z: Vec<Complex64> = zpk.z.iter().map(warp).collect();
    let p: Vec<Complex64> = zpk.p.iter().map(warp).collect();
    // Zeros at infinity land at Nyquist.
    z.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(degree));

    let prod = |roots: &[Complex64]| {
        roots
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, r| acc * (fs2 - r))
    };
    let k = zpk.k * (prod(&zpk.z) / prod(&zpk.p)).re;

    Zpk { z, p, k }
}

/// Group roots into conjugate/real pairs for section building.
fn pair_roots(roots: &[Complex64]) -> Result<Vec<(Complex64, Complex64)>> {
    let tol = 1e-8;
    let mut complexes: Vec<Complex64> = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for r in roots {
        if r.im.abs() > tol * (1.0 + r.norm()) {
            complexes.push(*r);
        } else {
            reals.push(r.re);
        }
    }

    let mut pairs = Vec::new();
    // Conjugate matching: take each positive-imag root with its closest
    // negative-imag partner.
    let mut upper: Vec<Complex64> = complexes.iter().copied().filter(|c| c.im > 0.0).collect();
    let mut lower: Vec<Complex64> = complexes.iter().copied().filter(|c| c.im < 0.0).collect();
    upper.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    if upper.len() != lower.len() {
        return Err(Error::UnstableDesign(
            "complex roots do not form conjugate pairs".into(),
        ));
    }
    for u in upper {
        let (idx, _) = lower
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (u - a.conj())
                    .norm()
                    .partial_cmp(&(u - b.conj()).norm())
                    .unwrap()
            })
            .ok_or_else(|| Error::UnstableDesign("unpaired complex root".into()))?;
        let l = lower.swap_remove(idx);
        pairs.push((u, l));
    }

    // Reals pair among themselves, largest magnitude first; an odd leftover
    // becomes a first-order section (partner at the origin).
    reals.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).unwrap());
    let mut it = reals.into_iter();
    while let Some(r1) = it.next() {
        let r2 = it.next().unwrap_or(0.0);
        pairs.push((Complex64::new(r1, 0.0), Complex64::new(r2, 0.0)));
    }
    Ok(pairs)
}

/// Convert ZPK to a cascade of biquads. The overall gain is distributed
/// evenly across sections to keep intermediate magnitudes balanced.
fn zpk_to_sos(zpk: &Zpk) -> Result<Vec<Biquad<f64>>> {
    if zpk.z.len() != zpk.p.len() {
        return Err(Error::UnstableDesign(format!(
            "zero/pole count mismatch ({} vs {})",
            zpk.z.len(),
            zpk.p.len()
        )));
    }
    let mut pole_pairs = pair_roots(&zpk.p)?;
    let mut zero_pairs = pair_roots(&zpk.z)?;
    if pole_pairs.len() != zero_pairs.len() {
        return Err(Error::UnstableDesign("section count mismatch".into()));
    }

    // Assign each pole pair (nearest the unit circle first) its closest zero
    // pair, so large resonances get the zeros that damp them.
    pole_pairs.sort_by(|a, b| {
        let ra = a.0.norm().max(a.1.norm());
        let rb = b.0.norm().max(b.1.norm());
        rb.partial_cmp(&ra).unwrap()
    });
    let mut assigned: Vec<(Complex64, Complex64, Complex64, Complex64)> = Vec::new();
    for (p1, p2) in &pole_pairs {
        let centre = (p1 + p2) / 2.0;
        let (idx, _) = zero_pairs
            .iter()
            .enumerate()
            .min_by(|(_, za), (_, zb)| {
                let da = ((za.0 + za.1) / 2.0 - centre).norm();
                let db = ((zb.0 + zb.1) / 2.0 - centre).norm();
                da.partial_cmp(&db).unwrap()
            })
            .ok_or_else(|| Error::UnstableDesign("ran out of zero pairs".into()))?;
        let (z1, z2) = zero_pairs.swap_remove(idx);
        assigned.push((*p1, *p2, z1, z2));
    }
    // Most damped section first in the cascade.
    assigned.reverse();

    let n = assigned.len();
    let gain = zpk.k.abs().powf(1.0 / n as f64);
    let mut sign = zpk.k.signum();
    let mut sections = Vec::with_capacity(n);
    for (p1, p2, z1, z2) in assigned {
        let a1 = -(p1 + p2).re;
        let a2 = (p1 * p2).re;
        let b0 = gain * sign;
        sign = 1.0; // sign applied once
        let b1 = -(z1 + z2).re * b0;
        let b2 = (z1 * z2).re * b0;
        sections.push(Biquad {
            b: [b0, b1, b2],
            a: [a1, a2],
        });
    }
    Ok(sections)
}

// ---------------------------------------------------------------------------
// Design entry point
// ---------------------------------------------------------------------------

/// Design the filter described by `spec` as a stable biquad cascade.
pub fn design_filter<F: Float>(spec: &FilterSpec) -> Result<FilterRealization<F>> {
    spec.validate()?;

    // Normalize to scipy's internal fs = 2 convention and prewarp.
    let fs_internal = 2.0;
    let warped: Vec<f64> = spec
        .cutoffs_hz
        .iter()
        .map(|f| {
            let wn = f / (spec.fs / 2.0);
            2.0 * fs_internal * (PI * wn / fs_internal).tan()
        })
        .collect();

    let proto = match spec.family {
        FilterFamily::Butterworth => butter_prototype(spec.order),
        FilterFamily::Chebyshev2 => cheb2_prototype(spec.order, spec.stopband_atten_db.unwrap()),
    };

    let analog = match spec.kind {
        FilterKind::Lowpass => lp2lp_zpk(&proto, warped[0]),
        FilterKind::Bandpass => {
            let bw = warped[1] - warped[0];
            let wo = (warped[0] * warped[1]).sqrt();
            lp2bp_zpk(&proto, wo, bw)
        }
    };

    let digital = bilinear_zpk(&analog, fs_internal);
    let sections64 = zpk_to_sos(&digital)?;

    let realization = FilterRealization {
        sections: sections64
            .iter()
            .map(|s| Biquad {
                b: [F::cast(s.b[0]), F::cast(s.b[1]), F::cast(s.b[2])],
                a: [F::cast(s.a[0]), F::cast(s.a[1])],
            })
            .collect(),
        fs: spec.fs,
    };

    let max_radius = realization.max_pole_radius();
    if !(max_radius < 1.0 - 1e-6) {
        return Err(Error::UnstableDesign(format!(
            "pole radius {max_radius} too close to the unit circle"
        )));
    }
    if spec.kind == FilterKind::Lowpass {
        let dc_db = realization.magnitude_db(0.0);
        if dc_db.abs() > 0.01 {
            return Err(Error::UnstableDesign(format!(
                "lowpass DC gain off unity by {dc_db} dB"
            )));
        }
    }
    Ok(realization)
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Steady-state (unit-step) initial conditions for one section, scaled later
/// by the first input sample. Returns `(zi, dc_gain)`.
fn section_zi<F: Float>(s: &Biquad<F>) -> ([F; 2], F) {
    let one = F::one();
    let h = (s.b[0] + s.b[1] + s.b[2]) / (one + s.a[0] + s.a[1]);
    let zi1 = h - s.b[0];
    let zi2 = s.b[2] - s.a[1] * h;
    ([zi1, zi2], h)
}

/// Single-pass cascade filtering (direct-form II transposed) with
/// steady-state initial conditions matched to `x[0]`.
fn sosfilt_steady<F: Float>(sections: &[Biquad<F>], x: &[F]) -> Vec<F> {
    let mut y = x.to_vec();
    let mut level = if x.is_empty() { F::zero() } else { x[0] };
    for s in sections {
        let (zi, h) = section_zi(s);
        let mut z1 = zi[0] * level;
        let mut z2 = zi[1] * level;
        for v in y.iter_mut() {
            let xin = *v;
            let out = s.b[0] * xin + z1;
            z1 = s.b[1] * xin - s.a[0] * out + z2;
            z2 = s.b[2] * xin - s.a[1] * out;
            *v = out;
        }
        level = level * h;
    }
    y
}

/// Zero-phase forward-backward filtering over a raw sample slice.
///
/// Edges are extended by odd reflection over `3 * (2 * n_sections)` samples
/// before either pass, so transients decay outside the retained region.
pub fn filtfilt_samples<F: Float>(f: &FilterRealization<F>, x: &[F]) -> Result<Vec<F>> {
    let pad = 3 * (2 * f.sections.len());
    if x.len() <= pad {
        return Err(Error::TooShort {
            needed: pad,
            got: x.len(),
        });
    }
    let n = x.len();
    let two = F::cast(2.0);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(two * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in (1..=pad).rev() {
        ext.push(two * x[n - 1] - x[n - 1 - i]);
    }

    let mut y = sosfilt_steady(&f.sections, &ext);
    y.reverse();
    let mut y = sosfilt_steady(&f.sections, &y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Zero-phase filtering of a channel stream; output keeps length, fs and
/// metadata.
pub fn filtfilt<F: Float>(f: &FilterRealization<F>, x: &ChannelStream<F>) -> Result<ChannelStream<F>> {
    if (x.fs - f.fs).abs() > 1e-9 * f.fs {
        return Err(Error::InvalidInput(format!(
            "filter designed for {} Hz applied to {} Hz stream",
            f.fs, x.fs
        )));
    }
    let samples = filtfilt_samples(f, &x.samples)?;
    Ok(ChannelStream {
        samples,
        ..x.clone()
    })
}

/// Default anti-alias cutoff as a fraction of the target rate.
///
/// 0.4375 x 32 Hz = 14 Hz, the concrete design point for the 128 -> 32 Hz
/// EEG path; 0.5 x target would be the Nyquist-exact alternative and can be
/// requested explicitly through [`decimate_with_cutoff`].
pub const DEFAULT_ANTI_ALIAS_FRACTION: f64 = 0.4375;

/// Default anti-alias filter order.
pub const DEFAULT_ANTI_ALIAS_ORDER: u32 = 4;

/// Integer-factor decimation with a Butterworth anti-alias lowpass
/// (order 4, cutoff `DEFAULT_ANTI_ALIAS_FRACTION * target_fs`).
pub fn decimate<F: Float>(x: &ChannelStream<F>, target_fs: f64) -> Result<ChannelStream<F>> {
    decimate_with_cutoff(x, target_fs, DEFAULT_ANTI_ALIAS_FRACTION * target_fs)
}

/// Integer-factor decimation with an explicit anti-alias cutoff in Hz.
pub fn decimate_with_cutoff<F: Float>(
    x: &ChannelStream<F>,
    target_fs: f64,
    cutoff_hz: f64,
) -> Result<ChannelStream<F>> {
    let ratio = x.fs / target_fs;
    let factor = ratio.round();
    if (ratio - factor).abs() > 1e-9 || factor < 1.0 {
        return Err(Error::NonIntegerFactor {
            org_fs: x.fs,
            target_fs,
        });
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(x.clone());
    }

    let aa = design_filter::<F>(&FilterSpec::butterworth_lowpass(
        DEFAULT_ANTI_ALIAS_ORDER,
        cutoff_hz,
        x.fs,
    ))?;
    let filtered = filtfilt_samples(&aa, &x.samples)?;
    let samples: Vec<F> = filtered.iter().copied().step_by(factor).collect();
    Ok(ChannelStream {
        fs: target_fs,
        samples,
        ..x.clone()
    })
}
