//! Minimal CPU layers with explicit backward passes.
//!
//! Tensors are single-sample, channel-major (`C×H×W`) flat buffers. All
//! learnable values of a network live in one flat parameter vector; each
//! layer records the offsets of its slices so the optimizer and the
//! checkpoint writer can treat parameters as one blob.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a network (`f32` for training, `f64` for
/// gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + 'static
{
    /// `c = a·b (+ c if accumulate)` for row-major operands, where `a` is
    /// `m×k` (or its transpose is stored when `ta`) and `b` is `k×n` (or
    /// transposed when `tb`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // Logical `rows×cols` matrix; when transposed it is stored as `cols×rows`.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[$t],
                ta: bool,
                b: &[$t],
                tb: bool,
                c: &mut [$t],
                accumulate: bool,
            ) {
                assert!(
                    a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
                    "gemm operand too small"
                );
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, ta);
                let (rsb, csb) = strides(k, n, tb);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: bounds asserted above; strides describe dense row-major storage.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// 2D convolution with square kernel, dilation, stride and zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: usize,
    pub bias: usize,
}

pub struct ConvTape<T> {
    cols: Vec<T>,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Conv {
    /// 3×3 convolution that keeps spatial size at the given dilation.
    pub fn same3x3(cin: usize, cout: usize, dilation: usize, offset: usize) -> Self {
        Self::new(cin, cout, 3, dilation, 1, dilation, offset)
    }

    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
        pad: usize,
        offset: usize,
    ) -> Self {
        let weight = offset;
        let bias = weight + cout * cin * kernel * kernel;
        Conv {
            cin,
            cout,
            kernel,
            dilation,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn n_params(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel + self.cout
    }

    pub fn end(&self) -> usize {
        self.bias + self.cout
    }

    fn k_rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        (
            (h + 2 * self.pad - span) / self.stride + 1,
            (w + 2 * self.pad - span) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Real>(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
        if self.is_pointwise() {
            return x.to_vec();
        }
        let k = self.kernel;
        let mut cols = vec![T::zero(); self.k_rows() * ho * wo];
        for c in 0..self.cin {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy =
                            (oy * self.stride + ki * self.dilation) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out = &mut dst[oy * wo..(oy + 1) * wo];
                        let shift = (kj * self.dilation) as isize - self.pad as isize;
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride) as isize + shift;
                            if ix >= 0 && ix < w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, dcols: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
        if self.is_pointwise() {
            return dcols.to_vec();
        }
        let k = self.kernel;
        let mut dx = vec![T::zero(); self.cin * h * w];
        for c in 0..self.cin {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &dcols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy =
                            (oy * self.stride + ki * self.dilation) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let shift = (kj * self.dilation) as isize - self.pad as isize;
                        for (ox, &g) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * self.stride) as isize + shift;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T], h: usize, w: usize) -> (Vec<T>, ConvTape<T>) {
        debug_assert_eq!(x.len(), self.cin * h * w);
        let (ho, wo) = self.out_dims(h, w);
        let cols = self.im2col(x, h, w, ho, wo);
        let hw = ho * wo;
        let mut y = vec![T::zero(); self.cout * hw];
        for (co, row) in y.chunks_exact_mut(hw).enumerate() {
            row.fill(p[self.bias + co]);
        }
        let wmat = &p[self.weight..self.bias];
        T::gemm(
            self.cout,
            self.k_rows(),
            hw,
            wmat,
            false,
            &cols,
            false,
            &mut y,
            true,
        );
        (y, ConvTape { cols, h, w, ho, wo })
    }

    /// Accumulates parameter gradients into `g` and returns the input
    /// gradient (skipped when `need_input_grad` is false).
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        tape: &ConvTape<T>,
        dy: &[T],
        need_input_grad: bool,
    ) -> Vec<T> {
        let hw = tape.ho * tape.wo;
        let kr = self.k_rows();
        {
            let (gw, gb) = g[self.weight..self.end()].split_at_mut(self.cout * kr);
            T::gemm(self.cout, hw, kr, dy, false, &tape.cols, true, gw, true);
            for (co, row) in dy.chunks_exact(hw).enumerate() {
                gb[co] += row.iter().copied().sum::<T>();
            }
        }
        if !need_input_grad {
            return Vec::new();
        }
        let mut dcols = vec![T::zero(); kr * hw];
        T::gemm(
            kr,
            self.cout,
            hw,
            &p[self.weight..self.bias],
            true,
            dy,
            false,
            &mut dcols,
            false,
        );
        self.col2im(&dcols, tape.h, tape.w, tape.ho, tape.wo)
    }
}

/// Group normalization with per-channel scale and shift. Statistics are
/// taken over `channels / groups` consecutive channels and all positions;
/// `groups == channels` is instance norm, `groups == 1` layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub channels: usize,
    pub groups: usize,
    pub gamma: usize,
    pub beta: usize,
}

pub struct NormTape<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

const NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn new(channels: usize, groups: usize, offset: usize) -> Self {
        assert!(
            groups >= 1 && channels.is_multiple_of(groups),
            "{channels} channels do not split into {groups} groups"
        );
        Norm {
            channels,
            groups,
            gamma: offset,
            beta: offset + channels,
        }
    }

    pub fn n_params(&self) -> usize {
        2 * self.channels
    }

    pub fn end(&self) -> usize {
        self.beta + self.channels
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T], hw: usize) -> (Vec<T>, NormTape<T>) {
        let len = self.channels / self.groups * hw;
        let n = T::from_usize(len).unwrap();
        let eps = T::lit(NORM_EPS);
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for gi in 0..self.groups {
            let r = gi * len..(gi + 1) * len;
            let xs = &x[r.clone()];
            let mean = xs.iter().copied().sum::<T>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for i in r {
                let c = i / hw;
                let xh = (x[i] - mean) * is;
                xhat[i] = xh;
                y[i] = p[self.gamma + c] * xh + p[self.beta + c];
            }
        }
        (y, NormTape { xhat, inv_std })
    }

    pub fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        tape: &NormTape<T>,
        dy: &[T],
        hw: usize,
    ) -> Vec<T> {
        let len = self.channels / self.groups * hw;
        let n = T::from_usize(len).unwrap();
        for c in 0..self.channels {
            let r = c * hw..(c + 1) * hw;
            g[self.gamma + c] += dy[r.clone()]
                .iter()
                .zip(&tape.xhat[r.clone()])
                .map(|(&d, &xh)| d * xh)
                .sum::<T>();
            g[self.beta + c] += dy[r].iter().copied().sum::<T>();
        }
        let mut dx = vec![T::zero(); dy.len()];
        for gi in 0..self.groups {
            let r = gi * len..(gi + 1) * len;
            // dxhat = gamma * dy
            let mut sum = T::zero();
            let mut sum_xh = T::zero();
            for i in r.clone() {
                let d = p[self.gamma + i / hw] * dy[i];
                dx[i] = d;
                sum += d;
                sum_xh += d * tape.xhat[i];
            }
            let scale = tape.inv_std[gi] / n;
            for i in r {
                dx[i] = scale * (n * dx[i] - sum - tape.xhat[i] * sum_xh);
            }
        }
        dx
    }
}

/// Rectifier that propagates NaN (so corrupted parameters surface in the loss).
pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient through a rectifier given its output.
pub fn relu_backward<T: Real>(out: &[T], dy: &mut [T]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub nin: usize,
    pub nout: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new(nin: usize, nout: usize, offset: usize) -> Self {
        Linear {
            nin,
            nout,
            weight: offset,
            bias: offset + nin * nout,
        }
    }

    pub fn n_params(&self) -> usize {
        self.nin * self.nout + self.nout
    }

    pub fn end(&self) -> usize {
        self.bias + self.nout
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T]) -> Vec<T> {
        let mut y = p[self.bias..self.end()].to_vec();
        T::gemm(
            self.nout,
            self.nin,
            1,
            &p[self.weight..self.bias],
            false,
            x,
            false,
            &mut y,
            true,
        );
        y
    }

    pub fn backward<T: Real>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T]) -> Vec<T> {
        T::gemm(
            self.nout,
            1,
            self.nin,
            dy,
            false,
            x,
            false,
            &mut g[self.weight..self.bias],
            true,
        );
        for (gb, &d) in g[self.bias..self.end()].iter_mut().zip(dy) {
            *gb += d;
        }
        let mut dx = vec![T::zero(); self.nin];
        T::gemm(
            self.nin,
            self.nout,
            1,
            &p[self.weight..self.bias],
            true,
            dy,
            false,
            &mut dx,
            false,
        );
        dx
    }
}
