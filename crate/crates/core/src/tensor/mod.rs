//! Dense row-major 2-D tensors and the reverse-mode gradient tape built on them.
//!
//! [`Tensor`] is a plain value type: the eager operations on it are what the
//! tape records and replays. Gradients live outside the tensor, in the
//! [`Gradients`] returned by [`GradientTape::backward`].

mod edges;
mod tape;

pub use edges::EdgeIndex;
pub use tape::{GradientTape, Gradients, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor::new",
                format!("{} values for a {rows}x{cols} tensor", data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a tensor from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Tensor::from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} by {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        check_positive("leaky_relu slope", slope)?;
        Ok(self.map(|v| leaky_relu(v, slope)))
    }

    pub fn elu(&self, alpha: f64) -> Result<Tensor> {
        check_positive("elu alpha", alpha)?;
        Ok(self.map(|v| elu(v, alpha)))
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some((index, &value)) = self.data.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(Error::LogDomain { index, value });
        }
        Ok(self.map(f64::ln))
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::shape(
                "add_row",
                format!("{}x{} plus row {}x{}", self.rows, self.cols, row.rows, row.cols),
            ));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Row-wise softmax, max-shifted.
    pub fn softmax_rows(&self) -> Tensor {
        let mut out = self.clone();
        for r in 0..self.rows {
            softmax_in_place(out.row_mut(r));
        }
        out
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn elu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

fn check_positive(what: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{what} must be finite and positive, got {value}")))
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Softmax over the unmasked entries of one row (`mask[i] == true` keeps entry i).
/// Masked outputs are exactly zero.
pub fn softmax_masked(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::shape(
            "softmax_masked",
            format!("{} logits, {} mask entries", logits.len(), mask.len()),
        ));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked { row: 0 });
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Column-wise concatenation of equal-height tensors.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_cols", "no tensors to concatenate"))?;
    let rows = first.rows;
    if let Some(bad) = parts.iter().find(|t| t.rows != rows) {
        return Err(Error::shape(
            "concat_cols",
            format!("row counts {rows} and {}", bad.rows),
        ));
    }
    let cols: usize = parts.iter().map(|t| t.cols).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for t in parts {
            data.extend_from_slice(t.row(r));
        }
    }
    Ok(Tensor { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(a.matmul(&Tensor::identity(2)).unwrap(), a);
        let row = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let col = Tensor::column(&[3.0, 4.0]);
        assert_eq!(row.matmul(&col).unwrap(), Tensor::scalar(11.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 4, 3);
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::Shape { .. })));
    }

    #[test]
    fn matmul_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, b, c) = (random(&mut rng, 8, 8), random(&mut rng, 8, 8), random(&mut rng, 8, 8));
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-9);
    }

    #[test]
    fn activations() {
        assert_eq!(leaky_relu(-1.0, 0.2), -0.2);
        assert_eq!(elu(0.0, 1.0), 0.0);
        let expected = (-1.0f64).exp() - 1.0;
        assert!((elu(-1.0, 1.0) - expected).abs() < 1e-15);
        assert!((elu(-1.0, 1.0) + 0.63212).abs() < 1e-5);
        assert!(Tensor::zeros(1, 1).leaky_relu(-0.1).is_err());
    }

    #[test]
    fn log_rejects_non_positive() {
        let t = Tensor::column(&[1.0, 0.0]);
        assert!(matches!(t.log(), Err(Error::LogDomain { index: 1, .. })));
    }

    #[test]
    fn elementwise_shape_mismatch() {
        assert!(Tensor::zeros(2, 2).add(&Tensor::zeros(2, 3)).is_err());
    }

    #[test]
    fn softmax_masked_examples() {
        assert_eq!(softmax_masked(&[0.0, 0.0], &[true, true]).unwrap(), vec![0.5, 0.5]);
        let p = softmax_masked(&[2f64.ln(), 0.0], &[true, true]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax_masked(&[5.0, 1.0, 9.0], &[true, true, false]).unwrap();
        let q = softmax_masked(&[5.0, 1.0], &[true, true]).unwrap();
        assert_eq!(p[2], 0.0);
        assert_eq!(&p[..2], &q[..]);
        assert!(matches!(
            softmax_masked(&[1.0], &[false]),
            Err(Error::AllMasked { .. })
        ));
    }

    #[test]
    fn concat_cols_order() {
        let a = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = a.scale(10.0);
        assert_eq!(concat_cols(&[&a]).unwrap(), a);
        let c = concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), (2, 6));
        assert_eq!(c.row(1), &[4.0, 5.0, 6.0, 40.0, 50.0, 60.0]);
        assert!(concat_cols(&[&a, &Tensor::zeros(3, 1)]).is_err());
    }
}
