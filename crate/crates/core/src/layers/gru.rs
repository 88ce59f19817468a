use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, Param};

/// Gated recurrent unit applied row-wise (one row per node, shared weights).
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h̃  = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_z: Param,
    pub u_z: Param,
    pub b_z: Param,
    pub w_r: Param,
    pub u_r: Param,
    pub b_r: Param,
    pub w_h: Param,
    pub u_h: Param,
    pub b_h: Param,
}

impl GruCell {
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let zero_bias = || Param::new(Matrix::zeros(1, hidden));
        Self {
            w_z: Param::xavier(in_dim, hidden, rng),
            u_z: Param::xavier(hidden, hidden, rng),
            b_z: zero_bias(),
            w_r: Param::xavier(in_dim, hidden, rng),
            u_r: Param::xavier(hidden, hidden, rng),
            b_r: zero_bias(),
            w_h: Param::xavier(in_dim, hidden, rng),
            u_h: Param::xavier(hidden, hidden, rng),
            b_h: zero_bias(),
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        let p = |r, c| Param::new(Matrix::zeros(r, c));
        Self {
            w_z: p(in_dim, hidden),
            u_z: p(hidden, hidden),
            b_z: p(1, hidden),
            w_r: p(in_dim, hidden),
            u_r: p(hidden, hidden),
            b_r: p(1, hidden),
            w_h: p(in_dim, hidden),
            u_h: p(hidden, hidden),
            b_h: p(1, hidden),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_z.value.rows()
    }

    pub fn hidden(&self) -> usize {
        self.u_z.value.rows()
    }

    /// Fixed order: W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h.
    pub fn params(&self) -> [&Param; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h,
            &self.b_h,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    pub fn check(&self) -> Result<()> {
        let (d, h) = (self.in_dim(), self.hidden());
        let expect = [
            (d, h),
            (h, h),
            (1, h),
            (d, h),
            (h, h),
            (1, h),
            (d, h),
            (h, h),
            (1, h),
        ];
        for (p, want) in self.params().iter().zip(expect) {
            if p.value.shape() != want {
                return Err(Error::shape("gru parameter", p.value.shape(), want));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Matrix,
    h_prev: Matrix,
    z: Matrix,
    r: Matrix,
    rh: Matrix,
    cand: Matrix,
}

fn affine(x: &Matrix, w: &Param, h: &Matrix, u: &Param, b: &Param) -> Result<Matrix> {
    let mut a = x.matmul(&w.value)?;
    a.add_assign(&h.matmul(&u.value)?)?;
    a.add_row_broadcast(&b.value)
}

pub fn gru_cell_forward(x: &Matrix, h_prev: &Matrix, p: &GruCell) -> Result<(Matrix, GruCache)> {
    if x.cols() != p.in_dim() {
        return Err(Error::shape(
            "gru input vs W",
            x.shape(),
            p.w_z.value.shape(),
        ));
    }
    if h_prev.rows() != x.rows() || h_prev.cols() != p.hidden() {
        return Err(Error::shape(
            "gru hidden state",
            h_prev.shape(),
            (x.rows(), p.hidden()),
        ));
    }
    let z = affine(x, &p.w_z, h_prev, &p.u_z, &p.b_z)?.map(sigmoid);
    let r = affine(x, &p.w_r, h_prev, &p.u_r, &p.b_r)?.map(sigmoid);
    let rh = r.hadamard(h_prev)?;
    let cand = affine(x, &p.w_h, &rh, &p.u_h, &p.b_h)?.map(f64::tanh);
    let h = Matrix::from_fn(x.rows(), p.hidden(), |i, j| {
        let zz = z.get(i, j);
        (1.0 - zz) * h_prev.get(i, j) + zz * cand.get(i, j)
    });
    Ok((
        h,
        GruCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z,
            r,
            rh,
            cand,
        },
    ))
}

/// Accumulates parameter gradients; returns `(∂L/∂x, ∂L/∂h_prev)`.
pub fn gru_cell_backward(
    p: &mut GruCell,
    cache: &GruCache,
    d_h: &Matrix,
) -> Result<(Matrix, Matrix)> {
    if d_h.shape() != cache.z.shape() {
        return Err(Error::shape(
            "gru_backward upstream",
            d_h.shape(),
            cache.z.shape(),
        ));
    }
    if cache.x.cols() != p.in_dim() || cache.h_prev.cols() != p.hidden() {
        return Err(Error::MissingCache(
            "gru cell shape differs from cached forward",
        ));
    }
    let (n, hd) = d_h.shape();
    let GruCache {
        x,
        h_prev,
        z,
        r,
        rh,
        cand,
    } = cache;

    let da_z = Matrix::from_fn(n, hd, |i, j| {
        let zz = z.get(i, j);
        d_h.get(i, j) * (cand.get(i, j) - h_prev.get(i, j)) * zz * (1.0 - zz)
    });
    let da_c = Matrix::from_fn(n, hd, |i, j| {
        let c = cand.get(i, j);
        d_h.get(i, j) * z.get(i, j) * (1.0 - c * c)
    });

    p.w_h.accumulate(&x.t_matmul(&da_c)?)?;
    p.u_h.accumulate(&rh.t_matmul(&da_c)?)?;
    p.b_h.accumulate(&da_c.column_sums())?;

    let d_rh = da_c.matmul_t(&p.u_h.value)?;
    let da_r = Matrix::from_fn(n, hd, |i, j| {
        let rr = r.get(i, j);
        d_rh.get(i, j) * h_prev.get(i, j) * rr * (1.0 - rr)
    });

    p.w_z.accumulate(&x.t_matmul(&da_z)?)?;
    p.u_z.accumulate(&h_prev.t_matmul(&da_z)?)?;
    p.b_z.accumulate(&da_z.column_sums())?;
    p.w_r.accumulate(&x.t_matmul(&da_r)?)?;
    p.u_r.accumulate(&h_prev.t_matmul(&da_r)?)?;
    p.b_r.accumulate(&da_r.column_sums())?;

    let mut d_prev = Matrix::from_fn(n, hd, |i, j| {
        d_rh.get(i, j) * r.get(i, j) + d_h.get(i, j) * (1.0 - z.get(i, j))
    });
    d_prev.add_assign(&da_z.matmul_t(&p.u_z.value)?)?;
    d_prev.add_assign(&da_r.matmul_t(&p.u_r.value)?)?;

    let mut d_x = da_z.matmul_t(&p.w_z.value)?;
    d_x.add_assign(&da_r.matmul_t(&p.w_r.value)?)?;
    d_x.add_assign(&da_c.matmul_t(&p.w_h.value)?)?;
    Ok((d_x, d_prev))
}
