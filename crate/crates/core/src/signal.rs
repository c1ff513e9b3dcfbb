//! Complementary low-pass / high-pass decomposition of multi-channel windows.
//!
//! The low-pass side is a linear-phase windowed-sinc FIR (Hamming window,
//! unit DC gain) applied per channel with symmetric-reflection padding, so
//! filtering is zero-phase and constants are fixed points. The high-pass side
//! is the literal residual `x - low`, which makes the pair complementary: no
//! frequency content is invented or lost beyond final rounding.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One fixed-length multi-channel sensor frame: `(T timesteps x C channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    samples: Array2<f64>,
    sample_rate_hz: f64,
}

impl Window {
    /// Validates shape, finiteness and sample rate.
    pub fn new(samples: Array2<f64>, sample_rate_hz: f64) -> Result<Self> {
        let (t, c) = samples.dim();
        if t < 1 || c < 1 {
            return Err(Error::InvalidWindow(format!(
                "window must be at least 1x1, got {t}x{c}"
            )));
        }
        if !sample_rate_hz.is_finite() || sample_rate_hz <= 0.0 {
            return Err(Error::InvalidWindow(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidWindow(format!(
                "window contains non-finite sample {bad}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Number of timesteps.
    pub fn len_t(&self) -> usize {
        self.samples.nrows()
    }

    /// Number of channels.
    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }
}

/// Cutoff plus kernel-design parameters for the complementary filter pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    /// Cutoff frequency in Hz.
    pub cutoff_hz: f64,
    /// FIR length; must be odd so the kernel is symmetric about one center tap.
    pub num_taps: usize,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn new(cutoff_hz: f64, num_taps: usize, sample_rate_hz: f64) -> Result<Self> {
        let spec = Self {
            cutoff_hz,
            num_taps,
            sample_rate_hz,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with the default tap count for the given sample rate.
    pub fn with_default_taps(cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        Self::new(cutoff_hz, default_num_taps(sample_rate_hz), sample_rate_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.cutoff_hz.is_finite() || self.cutoff_hz <= 0.0 {
            return Err(Error::InvalidFilterSpec(format!(
                "cutoff must be positive, got {}",
                self.cutoff_hz
            )));
        }
        if !self.sample_rate_hz.is_finite() || self.sample_rate_hz <= 0.0 {
            return Err(Error::InvalidFilterSpec(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.num_taps == 0 || self.num_taps.is_multiple_of(2) {
            return Err(Error::InvalidFilterSpec(format!(
                "num_taps must be odd and positive, got {}",
                self.num_taps
            )));
        }
        Ok(())
    }

    /// A cutoff at or above Nyquist means "no decomposition": the low-pass
    /// kernel degenerates to the unit impulse and the high part is zero.
    pub fn is_pass_through(&self) -> bool {
        self.cutoff_hz >= self.sample_rate_hz / 2.0
    }
}

/// Default kernel length: `odd(ceil(1.27 * fs))`, i.e. 127 taps at 100 Hz.
/// Long enough to hold at least two cycles of the lowest useful cutoff.
pub fn default_num_taps(sample_rate_hz: f64) -> usize {
    let n = (1.27 * sample_rate_hz).ceil() as usize;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n.max(1)
    }
}

/// Symmetric linear-phase FIR kernel with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct FirKernel {
    taps: Vec<f64>,
}

impl FirKernel {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// True when the kernel is exactly the unit impulse.
    pub fn is_identity(&self) -> bool {
        let center = self.taps.len() / 2;
        self.taps
            .iter()
            .enumerate()
            .all(|(i, &t)| if i == center { t == 1.0 } else { t == 0.0 })
    }
}

/// Designs the windowed-sinc low-pass kernel (Hamming window), normalized so
/// the taps sum to 1. A pass-through spec yields the unit impulse.
pub fn design_lowpass(spec: &FilterSpec) -> Result<FirKernel> {
    spec.validate()?;
    let n = spec.num_taps;
    let center = n / 2;

    if spec.is_pass_through() {
        let mut taps = vec![0.0; n];
        taps[center] = 1.0;
        return Ok(FirKernel { taps });
    }

    let fc = spec.cutoff_hz / spec.sample_rate_hz; // cycles per sample
    let mut taps = vec![0.0; n];
    // Compute one half and mirror it so symmetry holds bit-for-bit.
    for i in 0..=center {
        let m = i as f64 - center as f64;
        let sinc = if i == center {
            2.0 * fc
        } else {
            (2.0 * std::f64::consts::PI * fc * m).sin() / (std::f64::consts::PI * m)
        };
        let window = 0.54
            - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n as f64 - 1.0)).cos();
        let tap = sinc * window;
        taps[i] = tap;
        taps[n - 1 - i] = tap;
    }

    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    // Fold the remaining rounding residue into the center tap; keeps symmetry
    // and pushes the tap sum onto 1.0 exactly (or within one ulp).
    for _ in 0..2 {
        let residue: f64 = taps.iter().sum::<f64>() - 1.0;
        if residue == 0.0 {
            break;
        }
        taps[center] -= residue;
    }
    Ok(FirKernel { taps })
}

/// Per-channel FIR convolution with symmetric-reflection boundary padding and
/// a center-aligned kernel (zero phase delay). The kernel must satisfy
/// `taps.len() < 2 * T`.
pub fn convolve_reflect(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let t_len = x.len() as isize;
    let half = (taps.len() / 2) as isize;
    let mut out = Vec::with_capacity(x.len());
    for t in 0..t_len {
        let mut acc = 0.0;
        for (m, &tap) in taps.iter().enumerate() {
            let mut idx = t + m as isize - half;
            if idx < 0 {
                idx = -idx;
            }
            if idx >= t_len {
                idx = 2 * (t_len - 1) - idx;
            }
            acc += tap * x[idx as usize];
        }
        out.push(acc);
    }
    out
}

fn check_kernel_fits(x: &Window, k: &FirKernel) -> Result<()> {
    if k.len() >= 2 * x.len_t() {
        return Err(Error::WindowTooShort(format!(
            "kernel of {} taps needs a window longer than {} timesteps, got {}",
            k.len(),
            k.len() / 2,
            x.len_t()
        )));
    }
    Ok(())
}

/// Splits one sample into `(low, high)` doubles that sum back to `x` bitwise
/// whenever such a pair exists near the filtered value `low0`. The high part
/// always remains the rounded residual of the returned low part.
fn residual_pair(x: f64, low0: f64) -> (f64, f64) {
    if x == 0.0 {
        // Covers both zero signs; x + x reproduces the sign bit.
        return (x, x);
    }
    let mut low = low0;
    let mut high = x - low;
    for _ in 0..4 {
        if (low + high).to_bits() == x.to_bits() {
            return (low, high);
        }
        low = x - high;
        high = x - low;
    }
    // No exactly-summing pair exists near low0 (the residual would need more
    // than 53 mantissa bits); keep the faithful value, off by <= 1 ulp.
    (low, high)
}

/// Low-pass and residual high-pass of a window in one pass.
/// `low + high` reproduces the input to within one final rounding, and
/// bit-exactly wherever IEEE-754 permits (always at pass-through cutoffs).
pub fn decompose_with_kernel(x: &Window, k: &FirKernel) -> Result<(Window, Window)> {
    check_kernel_fits(x, k)?;
    let (t_len, channels) = x.samples().dim();
    let mut low = Array2::zeros((t_len, channels));
    let mut high = Array2::zeros((t_len, channels));
    for c in 0..channels {
        let column: Vec<f64> = x.samples().column(c).to_vec();
        let filtered = convolve_reflect(&column, k.taps());
        for t in 0..t_len {
            let (l, h) = residual_pair(column[t], filtered[t]);
            low[(t, c)] = l;
            high[(t, c)] = h;
        }
    }
    let fs = x.sample_rate_hz();
    Ok((Window::new(low, fs)?, Window::new(high, fs)?))
}

/// Low-frequency component of the window.
pub fn low_pass(x: &Window, k: &FirKernel) -> Result<Window> {
    Ok(decompose_with_kernel(x, k)?.0)
}

/// High-frequency component, defined as the residual `x - low_pass(x, k)`.
pub fn high_pass(x: &Window, k: &FirKernel) -> Result<Window> {
    Ok(decompose_with_kernel(x, k)?.1)
}

/// Designs the kernel for `spec` and returns `(low, high)`.
pub fn decompose(x: &Window, spec: &FilterSpec) -> Result<(Window, Window)> {
    let kernel = design_lowpass(spec)?;
    decompose_with_kernel(x, &kernel)
}

/// Magnitude of the kernel's frequency response at the given frequencies.
pub fn frequency_response(k: &FirKernel, freqs_hz: &[f64], sample_rate_hz: f64) -> Vec<f64> {
    freqs_hz
        .iter()
        .map(|&f| {
            let omega = 2.0 * std::f64::consts::PI * f / sample_rate_hz;
            let (mut re, mut im) = (0.0, 0.0);
            for (m, &tap) in k.taps().iter().enumerate() {
                re += tap * (omega * m as f64).cos();
                im -= tap * (omega * m as f64).sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}
