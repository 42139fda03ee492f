//! Band matrices with partial-pivoting LU, generic over real/complex scalars.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![T::zero(); n * (kl + ku + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku || j >= self.n {
            None
        } else {
            Some(i * (self.kl + self.ku + 1) + j + self.kl - i)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.idx(i, j).map_or(T::zero(), |k| self.data[k])
    }

    /// Panics outside the band: callers size the band from their stencils.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j).expect("entry outside band");
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j).expect("entry outside band");
        self.data[k] = v;
    }

    pub fn add_diag(&mut self, d: &[T]) {
        for (i, v) in d.iter().enumerate() {
            self.add(i, i, *v);
        }
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let mut s = T::zero();
                for j in self.row_range(i) {
                    s += self.get(i, j) * x[j];
                }
                s
            })
            .collect()
    }

    /// Entrywise map into another scalar type (e.g. real operator → complex).
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> BandMatrix<U> {
        BandMatrix { n: self.n, kl: self.kl, ku: self.ku, data: self.data.iter().map(|v| f(*v)).collect() }
    }

    /// `a·self + b·I`.
    pub fn affine(&self, a: T, b: T) -> Self {
        let mut m = self.clone();
        for v in &mut m.data {
            *v *= a;
        }
        for i in 0..self.n {
            m.add(i, i, b);
        }
        m
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for j in self.row_range(i) {
                row[j] = self.get(i, j);
            }
        }
        d
    }

    pub fn lu(&self) -> Result<BandLu<T>> {
        BandLu::new(self)
    }
}

#[derive(Clone, Debug)]
pub struct BandLu<T> {
    n: usize,
    kl: usize,
    ku: usize, // widened upper bandwidth kl + ku
    w: usize,
    data: Vec<T>,
    piv: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    fn new(a: &BandMatrix<T>) -> Result<Self> {
        let (n, kl) = (a.n, a.kl);
        let ku = a.kl + a.ku;
        let w = kl + ku + 1;
        let mut data = vec![T::zero(); n * w];
        for i in 0..n {
            for j in a.row_range(i) {
                data[i * w + j + kl - i] = a.get(i, j);
            }
        }
        let at = |i: usize, j: usize| i * w + j + kl - i;
        let mut piv = vec![0; n];
        let mut scale = 0.0f64;
        for v in &data {
            scale = scale.max(v.abs());
        }
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = data[at(k, k)].abs();
            for i in k + 1..=last {
                let v = data[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-300 || !best.is_finite() {
                return Err(Error::Numerical(format!("singular band matrix at pivot {k}")));
            }
            piv[k] = p;
            let jmax = (k + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    data.swap(at(k, j), at(p, j));
                }
            }
            let inv = T::one() / data[at(k, k)];
            for i in k + 1..=last {
                let m = data[at(i, k)] * inv;
                data[at(i, k)] = m;
                if m == T::zero() {
                    continue;
                }
                for j in k + 1..=jmax {
                    let u = data[at(k, j)];
                    data[at(i, j)] -= m * u;
                }
            }
        }
        Ok(Self { n, kl, ku, w, data, piv })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.w);
        let at = |i: usize, j: usize| i * w + j + kl - i;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                x[i] -= self.data[at(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + ku).min(n - 1) {
                s -= self.data[at(k, j)] * x[j];
            }
            x[k] = s / self.data[at(k, k)];
        }
    }
}
