//! Ramp (|f|) filtering of detector rows.
//!
//! The transfer function is the DFT of the band-limited Ram-Lak kernel on
//! the padded period, with its DC bin forced to zero. Rows are padded to a
//! power of two at least twice their length; the padding replicates the
//! edge values so a constant row filters to zero.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{TomoError, TomoResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Apodization {
    #[default]
    None,
    Hann,
}

impl std::str::FromStr for Apodization {
    type Err = TomoError;
    fn from_str(s: &str) -> TomoResult<Self> {
        match s {
            "none" | "ram-lak" => Ok(Apodization::None),
            "hann" => Ok(Apodization::Hann),
            other => Err(TomoError::InvalidArgument(format!("unknown apodization {other:?}"))),
        }
    }
}

/// Closed-form Ram-Lak sequence for unit sample spacing.
pub fn ram_lak(n: i64) -> f64 {
    if n == 0 {
        0.25
    } else if n % 2 == 0 {
        0.0
    } else {
        -1.0 / (PI * PI * (n * n) as f64)
    }
}

/// Reusable filter for rows of a fixed length.
pub struct RampFilter {
    len: usize,
    padded: usize,
    response: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    pub fn new(len: usize, apodization: Apodization) -> TomoResult<Self> {
        if len < 2 {
            return Err(TomoError::InvalidArgument("ramp filter needs rows of length >= 2".into()));
        }
        let padded = (2 * len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(padded);
        let ifft = planner.plan_fft_inverse(padded);
        let mut kernel: Vec<Complex<f64>> = (0..padded)
            .map(|i| {
                let n = if i <= padded / 2 { i as i64 } else { i as i64 - padded as i64 };
                Complex::new(ram_lak(n), 0.0)
            })
            .collect();
        fft.process(&mut kernel);
        let response = kernel
            .iter()
            .enumerate()
            .map(|(k, h)| {
                if k == 0 {
                    return 0.0;
                }
                let f = if k <= padded / 2 { k as f64 } else { k as f64 - padded as f64 } / padded as f64;
                let window = match apodization {
                    Apodization::None => 1.0,
                    Apodization::Hann => 0.5 * (1.0 + (2.0 * PI * f).cos()),
                };
                h.re * window
            })
            .collect();
        Ok(RampFilter { len, padded, response, fft, ifft })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Filter one row (unit sample spacing) into `out`.
    pub fn apply(&self, row: &[f64], out: &mut [f64]) -> TomoResult<()> {
        if row.len() != self.len || out.len() != self.len {
            return Err(TomoError::DimensionMismatch(format!(
                "row of {} for a filter of {}",
                row.len(),
                self.len
            )));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.padded];
        for (b, &r) in buf.iter_mut().zip(row) {
            b.re = r;
        }
        let right = self.len + (self.padded - self.len) / 2;
        for b in &mut buf[self.len..right] {
            b.re = row[self.len - 1];
        }
        for b in &mut buf[right..] {
            b.re = row[0];
        }
        self.fft.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&self.response) {
            *b *= *h;
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / self.padded as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
        Ok(())
    }
}

/// One-shot ramp filter of a row with unit sample spacing.
pub fn ramp_filter(row: &[f64], apodization: Apodization) -> TomoResult<Vec<f64>> {
    let filter = RampFilter::new(row.len(), apodization)?;
    let mut out = vec![0.0; row.len()];
    filter.apply(row, &mut out)?;
    Ok(out)
}
