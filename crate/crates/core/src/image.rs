use crate::error::{Error, Result};

/// Real-valued pixel grid, channel-major (`c × h × w`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
    /// Nominal `[lo, hi]` of the pixel values; not enforced.
    pub value_range: (f64, f64),
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}×{height}×{width} image",
                values.len()
            )));
        }
        Ok(Self { channels, height, width, values, value_range: (0.0, 1.0) })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
            value_range: (0.0, 1.0),
        }
    }

    pub fn gray(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(1, height, width, values)
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.value_range = (lo, hi);
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.values[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(self.channels, self.height, self.width, values)?;
        out.value_range = self.value_range;
        Ok(out)
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn clamp_to_range(&mut self) {
        let (lo, hi) = self.value_range;
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }

    /// Affine map of the values onto the value range (min → lo, max → hi);
    /// a constant image maps to `lo`.
    pub fn minmax_rescaled(&self) -> Self {
        let (lo, hi) = self.value_range;
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        let values = self
            .values
            .iter()
            .map(|v| if span > 0.0 { lo + (v - min) / span * (hi - lo) } else { lo })
            .collect();
        Self { values, ..self.clone() }
    }

    /// Stacks channels of `self` followed by `other` (same spatial size).
    pub fn concat_channels(&self, other: &ImageTensor) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "cannot concatenate {}×{} with {}×{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let mut out = Self::new(self.channels + other.channels, self.height, self.width, values)?;
        out.value_range = self.value_range;
        Ok(out)
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
