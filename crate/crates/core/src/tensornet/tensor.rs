use crate::error::{shape_err, Error, Result};

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n], grad: None, requires_grad: false }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!("shape {:?} needs {} values, got {}", shape, n, data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None, requires_grad: false })
    }

    /// A trainable tensor: gradient buffer allocated and zeroed.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let mut t = Self::from_vec(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if on {
            if self.grad.is_none() {
                self.grad = Some(vec![0.0; self.data.len()]);
            }
        } else {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    /// NaN/inf check used by the training loop's debug mode.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Data(format!("{what}: non-finite value at flat index {i}"))),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect(), grad: None, requires_grad: false }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(shape_err!("add: {:?} vs {:?}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Tensor::from_vec(&self.shape, data)
    }

    /// Concatenate along axis 1 (channels) of rank-4 tensors with equal batch and spatial dims.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(shape_err!("concat_channels: {:?} vs {:?}", sa, sb));
        }
        let (batch, plane) = (sa[0], sa[2] * sa[3]);
        let (na, nb) = (sa[1] * plane, sb[1] * plane);
        let mut data = Vec::with_capacity(batch * (na + nb));
        for i in 0..batch {
            data.extend_from_slice(&a.data[i * na..(i + 1) * na]);
            data.extend_from_slice(&b.data[i * nb..(i + 1) * nb]);
        }
        Tensor::from_vec(&[batch, sa[1] + sb[1], sa[2], sa[3]], data)
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(x: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
        let s = x.shape();
        if s.len() != 4 || first > s[1] {
            return Err(shape_err!("split_channels: {:?} at {}", s, first));
        }
        let (batch, plane) = (s[0], s[2] * s[3]);
        let (na, nb) = (first * plane, (s[1] - first) * plane);
        let mut a = Vec::with_capacity(batch * na);
        let mut b = Vec::with_capacity(batch * nb);
        for chunk in x.data.chunks(na + nb) {
            a.extend_from_slice(&chunk[..na]);
            b.extend_from_slice(&chunk[na..]);
        }
        Ok((
            Tensor::from_vec(&[batch, first, s[2], s[3]], a)?,
            Tensor::from_vec(&[batch, s[1] - first, s[2], s[3]], b)?,
        ))
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| shape_err!("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.shape != first.shape {
                return Err(shape_err!("stack: {:?} vs {:?}", t.shape, first.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::from_vec(&shape, data)
    }

    /// Sub-tensor `index` along the leading axis.
    pub fn slice_batch(&self, index: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
            grad: None,
            requires_grad: false,
        }
    }
}
