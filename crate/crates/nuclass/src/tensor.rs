//! Dense tensors and the two domain-level frame types.
//!
//! Everything in this crate computes on `f64`. Frames hold values in `[0, 1]`
//! (8-bit pixels divided by 255 at the I/O boundary), residuals in `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense row-major tensor of `f64` with an explicit shape.
///
/// Used for network parameters (1-D biases, 4-D convolution weights) and for
/// activations (3-D `[channels, height, width]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// Channel count of a 3-D activation tensor.
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// (height, width) of a 3-D activation tensor.
    pub fn hw(&self) -> (usize, usize) {
        (self.shape[1], self.shape[2])
    }

    /// One spatial plane of a 3-D tensor.
    pub fn plane(&self, c: usize) -> &[f64] {
        let (h, w) = self.hw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let (h, w) = (self.shape[1], self.shape[2]);
        &mut self.data[c * h * w..(c + 1) * h * w]
    }

    /// Concatenate 3-D tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.len() != 3 || b.shape.len() != 3 || a.shape[1..] != b.shape[1..] {
            return Err(Error::shape(format!(
                "cannot concatenate shapes {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor::from_vec(&[a.shape[0] + b.shape[0], a.shape[1], a.shape[2]], data)
    }

    /// Split the channel-concatenation gradient back into the two parts.
    pub fn split_channels(&self, first: usize) -> (Tensor, Tensor) {
        let (h, w) = self.hw();
        let cut = first * h * w;
        let a = Tensor::from_vec(&[first, h, w], self.data[..cut].to_vec()).unwrap();
        let b =
            Tensor::from_vec(&[self.shape[0] - first, h, w], self.data[cut..].to_vec()).unwrap();
        (a, b)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One decoded video frame: `[channels, height, width]`, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor(Tensor);

impl FrameTensor {
    /// Validates finiteness and the `[0, 1]` range.
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 3 {
            return Err(Error::shape(format!(
                "frame must be [channels, height, width], got {:?}",
                tensor.shape()
            )));
        }
        if !tensor.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::shape(
                "frame values must be finite and within [0, 1]".to_string(),
            ));
        }
        Ok(FrameTensor(tensor))
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        FrameTensor::new(Tensor::from_vec(&[channels, height, width], data)?)
    }

    /// All-zero frame (black).
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FrameTensor(Tensor::zeros(&[channels, height, width]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.channels()
    }

    pub fn hw(&self) -> (usize, usize) {
        self.0.hw()
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }
}

/// A predicted or target residual: same shape as its frame, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTensor(Tensor);

impl ResidualTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 3 {
            return Err(Error::shape(format!(
                "residual must be [channels, height, width], got {:?}",
                tensor.shape()
            )));
        }
        if !tensor
            .data()
            .iter()
            .all(|v| v.is_finite() && (-1.0..=1.0).contains(v))
        {
            return Err(Error::shape(
                "residual values must be finite and within [-1, 1]".to_string(),
            ));
        }
        Ok(ResidualTensor(tensor))
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ResidualTensor(Tensor::zeros(&[channels, height, width]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }
}

/// `clamp(frame + residual, 0, 1)`, the elementwise enhancement step.
pub fn add_residual_clamped(frame: &FrameTensor, residual: &ResidualTensor) -> Result<FrameTensor> {
    if frame.shape() != residual.shape() {
        return Err(Error::shape(format!(
            "frame shape {:?} != residual shape {:?}",
            frame.shape(),
            residual.shape()
        )));
    }
    let data = frame
        .tensor()
        .data()
        .iter()
        .zip(residual.tensor().data())
        .map(|(f, r)| (f + r).clamp(0.0, 1.0))
        .collect();
    Ok(FrameTensor(
        Tensor::from_vec(frame.shape(), data).expect("same shape"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn frame_rejects_out_of_range() {
        assert!(FrameTensor::from_vec(1, 1, 2, vec![0.0, 1.5]).is_err());
        assert!(FrameTensor::from_vec(1, 1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(FrameTensor::from_vec(1, 1, 2, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn residual_allows_negative_and_rejects_beyond_unit() {
        assert!(ResidualTensor::new(Tensor::from_vec(&[1, 1, 2], vec![-1.0, 1.0]).unwrap()).is_ok());
        assert!(
            ResidualTensor::new(Tensor::from_vec(&[1, 1, 2], vec![-1.01, 0.0]).unwrap()).is_err()
        );
    }

    #[test]
    fn concat_and_split_round_trip() {
        let a = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let cat = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[3, 2, 2]);
        let (a2, b2) = cat.split_channels(1);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn add_residual_clamps_both_ends() {
        let f = FrameTensor::from_vec(1, 1, 3, vec![0.9, 0.6, 0.05]).unwrap();
        let r = ResidualTensor::new(Tensor::from_vec(&[1, 1, 3], vec![0.2, -0.1, -0.2]).unwrap())
            .unwrap();
        let out = add_residual_clamped(&f, &r).unwrap();
        assert_eq!(out.tensor().data(), &[1.0, 0.5, 0.0]);
    }
}
