use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point type the numeric core runs on (`f32` for training, `f64`
/// for verification).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major array. Rank 0 (scalar), 1 (vector) or 2 (matrix) in
/// practice.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "array",
                format!(
                    "shape {:?} holds {} values but {} were given",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Array {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(x: T) -> Self {
        Array {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => usize::from(!self.data.is_empty()),
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn cast<U: Real>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

/// Numerically stable softmax that accepts `-inf` entries as masked
/// positions. Masked positions come out as exactly zero.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::shape("softmax", "empty input"));
    }
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == T::neg_infinity() {
        return Err(Error::NoAdmissible(
            "every softmax entry is masked".to_string(),
        ));
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".to_string()));
    }
    let mut out: Vec<T> = logits
        .iter()
        .map(|&x| {
            if x == T::neg_infinity() {
                T::zero()
            } else {
                (x - max).exp()
            }
        })
        .collect();
    let total: T = out.iter().copied().sum();
    for p in &mut out {
        *p = *p / total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0f64, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        let p = softmax(&[0.0f64, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.75).abs() < 1e-15);

        let p = softmax(&[0.0f64, f64::NEG_INFINITY]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_rejects_all_masked() {
        let err = softmax(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NoAdmissible(_)));
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = softmax(&[1000.0f64, 999.0, f64::NEG_INFINITY]).unwrap();
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn array_count_must_match_shape() {
        assert!(Array::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let a = Array::<f64>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(a.rows(), 2);
        assert_eq!(a.cols(), 3);
    }
}
