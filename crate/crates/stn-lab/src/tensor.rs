//! Dense n-dimensional arrays with an optional gradient buffer.

use crate::error::{Error, Result};
use crate::real::Real;

/// A dense tensor in row-major order. The gradient buffer, when
/// allocated, always matches `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::shape(format!(
                "value count {} does not match shape {:?} (numel {})",
                values.len(),
                shape,
                numel
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero dimension in shape {shape:?}")));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: vec![T::ZERO; numel],
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: vec![value; numel],
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![value],
            grad: None,
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            values: (0..numel).map(&mut f).collect(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated to zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        if self.grad.is_none() {
            self.grad = Some(vec![T::ZERO; self.values.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    pub fn clear_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    pub fn drop_grad(&mut self) {
        self.grad = None;
    }

    /// Reinterprets the value buffer under a new shape of equal numel.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.values.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} (numel {}) to {:?}",
                self.shape,
                self.values.len(),
                shape
            )));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    /// (n, c, h, w) view of a 4-d shape.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!("expected 4-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [n, d] => Ok((n, d)),
            _ => Err(Error::shape(format!("expected 2-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor (values only).
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Converts precision, dropping any gradient buffer.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }
}

impl<T: Real> Tensor<T> {
    /// Fills with the uniform init used for everything except the final
    /// localization layer: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn fill_uniform_fan_in(&mut self, fan_in: usize, rng: &mut crate::rng::StreamRng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in self.values.iter_mut() {
            *v = T::from_f64(rng.uniform(-bound, bound));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_numel() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn grad_matches_shape() {
        let mut t = Tensor::<f32>::zeros(vec![2, 2]);
        assert!(t.grad().is_none());
        t.grad_mut()[3] = 1.0;
        assert_eq!(t.grad().unwrap().len(), t.numel());
        t.clear_grad();
        assert!(t.grad().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reshape_preserves_values() {
        let t = Tensor::<f64>::from_fn(vec![2, 3], |i| i as f64);
        let r = t.reshaped(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.values()[5], 5.0);
        assert!(r.clone().reshaped(vec![7]).is_err());
    }
}
