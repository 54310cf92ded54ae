//! Dense row-major `f64` arrays.
//!
//! Arrays are immutable once built; every operation returns a fresh array.
//! Reductions accumulate strictly left to right so repeated calls on the same
//! input are bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic prefix of the raw tensor file format.
pub const PCT_MAGIC: &[u8; 4] = b"PCT1";

#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Relu,
}

impl ElemOp {
    fn is_binary(self) -> bool {
        matches!(self, ElemOp::Add | ElemOp::Sub | ElemOp::Mul)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {expected} values but {} were given",
                data.len()
            )));
        }
        check_finite(&data, "array construction")?;
        Ok(DenseArray { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        DenseArray {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        DenseArray::new(Vec::new(), vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        DenseArray {
            shape: vec![n, n],
            data,
        }
    }

    /// Builds a rank-2 array from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        DenseArray::new(vec![rows.len(), cols], data)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element of a rank-2 array.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        DenseArray::new(shape, self.data.clone())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Standard matrix product of two rank-2 arrays.
    pub fn matmul(&self, other: &DenseArray) -> Result<DenseArray> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::dim("matmul expects rank-2 operands"));
        }
        let (n, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {n}x{k} times {k2}x{m}"
            )));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        check_finite(&out, "matmul")?;
        Ok(DenseArray {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Matrix-vector product for a rank-2 array.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.rank() != 2 || self.shape[1] != x.len() {
            return Err(Error::dim(format!(
                "matvec: matrix {:?} against vector of length {}",
                self.shape,
                x.len()
            )));
        }
        let out: Vec<f64> = (0..self.shape[0])
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        check_finite(&out, "matvec")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Result<DenseArray> {
        if self.rank() != 2 {
            return Err(Error::dim("transpose expects a rank-2 array"));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(DenseArray {
            shape: vec![c, r],
            data,
        })
    }

    pub fn elementwise(&self, op: ElemOp, other: Option<&DenseArray>) -> Result<DenseArray> {
        let data: Vec<f64> = match (op.is_binary(), other) {
            (true, Some(b)) => {
                if b.shape != self.shape {
                    return Err(Error::dim(format!(
                        "{op:?}: shapes {:?} and {:?} differ",
                        self.shape, b.shape
                    )));
                }
                let f = match op {
                    ElemOp::Add => |x: f64, y: f64| x + y,
                    ElemOp::Sub => |x: f64, y: f64| x - y,
                    _ => |x: f64, y: f64| x * y,
                };
                self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
            }
            (true, None) => {
                return Err(Error::dim(format!("{op:?} needs a second operand")));
            }
            (false, Some(_)) => {
                return Err(Error::dim(format!("{op:?} is unary")));
            }
            (false, None) => {
                let f = if op == ElemOp::Sigmoid { sigmoid } else { relu };
                self.data.iter().map(|&x| f(x)).collect()
            }
        };
        check_finite(&data, "elementwise op")?;
        Ok(DenseArray {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &DenseArray) -> Result<DenseArray> {
        self.elementwise(ElemOp::Add, Some(other))
    }

    pub fn sub(&self, other: &DenseArray) -> Result<DenseArray> {
        self.elementwise(ElemOp::Sub, Some(other))
    }

    pub fn mul(&self, other: &DenseArray) -> Result<DenseArray> {
        self.elementwise(ElemOp::Mul, Some(other))
    }

    pub fn sigmoid(&self) -> Result<DenseArray> {
        self.elementwise(ElemOp::Sigmoid, None)
    }

    pub fn relu(&self) -> Result<DenseArray> {
        self.elementwise(ElemOp::Relu, None)
    }

    /// Reduces over `axis`, or over every element when `axis` is `None`
    /// (yielding a rank-0 array).
    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>) -> Result<DenseArray> {
        let Some(axis) = axis else {
            let v = reduce_slice(op, self.data.iter().copied(), self.data.len())?;
            return DenseArray::scalar(v);
        };
        if axis >= self.rank() {
            return Err(Error::dim(format!(
                "axis {axis} out of range for rank {}",
                self.rank()
            )));
        }
        let len = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let it = (0..len).map(|k| self.data[base + k * inner]);
                out.push(reduce_slice(op, it, len)?);
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        DenseArray::new(shape, out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PCT_MAGIC)?;
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PCT_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut word)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after tensor payload".into()));
        }
        DenseArray::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        DenseArray::read_from(BufReader::new(File::open(path)?))
    }
}

fn reduce_slice(op: ReduceOp, values: impl Iterator<Item = f64>, len: usize) -> Result<f64> {
    match op {
        ReduceOp::Sum => Ok(values.fold(0.0, |acc, v| acc + v)),
        ReduceOp::Mean => {
            if len == 0 {
                return Err(Error::dim("mean over an empty axis"));
            }
            Ok(values.fold(0.0, |acc, v| acc + v) / len as f64)
        }
        ReduceOp::Max => {
            if len == 0 {
                return Err(Error::dim("max over an empty axis"));
            }
            Ok(values.fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; b[0].len()]; a.len()];
        for i in 0..a.len() {
            for j in 0..b[0].len() {
                for k in 0..b.len() {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    #[test]
    fn identity_times_matrix() {
        let m = DenseArray::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.5],
        ])
        .unwrap();
        assert_eq!(DenseArray::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn small_matmul() {
        let a = DenseArray::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseArray::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_mismatch() {
        let a = DenseArray::zeros(vec![2, 3]);
        let b = DenseArray::zeros(vec![4, 2]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn elementwise_ops() {
        let z = DenseArray::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(z.sigmoid().unwrap().data(), &[0.5]);
        let n = DenseArray::new(vec![1], vec![-3.2]).unwrap();
        assert_eq!(n.relu().unwrap().data(), &[0.0]);
        let a = DenseArray::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = DenseArray::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.sub(&b).unwrap().data(), &[-2.0, -2.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[3.0, 8.0]);
        let c = DenseArray::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(a.add(&c), Err(Error::Dimension(_))));
        assert!(a.elementwise(ElemOp::Add, None).is_err());
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            DenseArray::new(vec![1], vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        let big = DenseArray::new(vec![1], vec![1e300]).unwrap();
        assert!(matches!(big.mul(&big), Err(Error::NonFinite(_))));
    }

    #[test]
    fn reductions() {
        let v = DenseArray::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v.reduce(ReduceOp::Sum, None).unwrap().data(), &[6.0]);
        let m = DenseArray::from_rows(&[vec![1.0, 5.0], vec![2.0, 0.0]]).unwrap();
        let mx = m.reduce(ReduceOp::Max, Some(1)).unwrap();
        assert_eq!(mx.shape(), &[2]);
        assert_eq!(mx.data(), &[5.0, 2.0]);
        let mean0 = m.reduce(ReduceOp::Mean, Some(0)).unwrap();
        assert_eq!(mean0.data(), &[1.5, 2.5]);
        let empty = DenseArray::zeros(vec![2, 0]);
        assert!(matches!(
            empty.reduce(ReduceOp::Mean, Some(1)),
            Err(Error::Dimension(_))
        ));
        assert!(m.reduce(ReduceOp::Sum, Some(2)).is_err());
    }

    #[test]
    fn pct_file_layout() {
        let a = DenseArray::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PCT1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 32);
        assert!(DenseArray::read_from(&b"PCT2\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn matmul_matches_triple_loop(n in 1usize..=8, k in 1usize..=8, m in 1usize..=8, seed in any::<u64>()) {
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 33) % 21) as f64 - 10.0 };
            let a: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| next()).collect()).collect();
            let b: Vec<Vec<f64>> = (0..k).map(|_| (0..m).map(|_| next()).collect()).collect();
            let got = DenseArray::from_rows(&a).unwrap().matmul(&DenseArray::from_rows(&b).unwrap()).unwrap();
            let want = naive_matmul(&a, &b);
            let flat = want.concat();
            prop_assert_eq!(got.data(), flat.as_slice());
        }

        #[test]
        fn pct_round_trip(shape in proptest::collection::vec(0usize..4, 0..4), fill in -1e6f64..1e6) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| fill * (i as f64 + 0.5)).collect();
            let a = DenseArray::new(shape, data).unwrap();
            let mut buf = Vec::new();
            a.write_to(&mut buf).unwrap();
            prop_assert_eq!(DenseArray::read_from(buf.as_slice()).unwrap(), a);
        }

        #[test]
        fn reduce_is_repeatable(data in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let a = DenseArray::new(vec![data.len()], data).unwrap();
            let x = a.reduce(ReduceOp::Mean, None).unwrap().data()[0];
            let y = a.reduce(ReduceOp::Mean, None).unwrap().data()[0];
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
