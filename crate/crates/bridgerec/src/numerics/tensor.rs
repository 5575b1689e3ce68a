//! Dense row-major `f64` matrix. Scalars are 1x1, row vectors 1xk.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { rows: r, cols: c, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row_vector(v: Vec<f64>) -> Self {
        Tensor { rows: 1, cols: v.len(), data: v }
    }

    pub fn column(v: Vec<f64>) -> Self {
        Tensor { rows: v.len(), cols: 1, data: v }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// The single element of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other` for (r x m)(m x c).
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (r, m, c) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; r * c];
        // ikj order keeps the inner loop contiguous in both `other` and `out`.
        for i in 0..r {
            let a_row = &self.data[i * m..(i + 1) * m];
            let out_row = &mut out[i * c..(i + 1) * c];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * c..(k + 1) * c];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor { rows: r, cols: c, data: out }
    }

    /// `self^T * other` for (m x r)^T (m x c) = (r x c).
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "matmul_tn shape mismatch");
        let (m, r, c) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; r * c];
        for k in 0..m {
            let a_row = &self.data[k * r..(k + 1) * r];
            let b_row = &other.data[k * c..(k + 1) * c];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * c..(i + 1) * c];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor { rows: r, cols: c, data: out }
    }

    /// `self * other^T` for (r x m)(c x m)^T = (r x c).
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_nt shape mismatch");
        let (r, m, c) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let a_row = &self.data[i * m..(i + 1) * m];
            let out_row = &mut out[i * c..(i + 1) * c];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &other.data[j * m..(j + 1) * m];
                *o = dot(a_row, b_row);
            }
        }
        Tensor { rows: r, cols: c, data: out }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
