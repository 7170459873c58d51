//! Layer kernels on single images stored channel-major (`c × h × w`).
//!
//! Convolutions are lowered to a matrix product over an im2col buffer; the
//! buffer is kept for the backward pass.

use matrixmultiply::dgemm;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor buffer size");
        Tensor { c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Shape of one convolution: `cout × cin × k × k` kernel plus `cout` biases,
/// same padding, stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn kernel_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn param_len(&self) -> usize {
        self.kernel_len() + self.cout
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn im2col(input: &Tensor, k: usize) -> Vec<f64> {
    let (h, w) = (input.h, input.w);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut col = vec![0.0; input.c * k * k * hw];
    for ci in 0..input.c {
        let src = &input.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    let s_off = sy as usize * w;
                    for x in x_lo..x_hi {
                        dst[y * w + x] = src[s_off + (x as isize + dx) as usize];
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize) -> Tensor {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    let d_off = sy as usize * w;
                    for x in x_lo..x_hi {
                        dst[d_off + (x as isize + dx) as usize] += src[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// Returns the output and the im2col buffer.
pub fn conv_forward(shape: ConvShape, params: &[f64], input: &Tensor) -> (Tensor, Vec<f64>) {
    debug_assert_eq!(input.c, shape.cin);
    debug_assert_eq!(params.len(), shape.param_len());
    let hw = input.plane();
    let kdim = shape.patch();
    let col = im2col(input, shape.k);
    let (kernel, bias) = params.split_at(shape.kernel_len());
    let mut out = Tensor::zeros(shape.cout, input.h, input.w);
    for (co, b) in bias.iter().enumerate() {
        out.data[co * hw..(co + 1) * hw].fill(*b);
    }
    // SAFETY: all pointers cover the row-major extents passed alongside
    // them and `out` does not alias the inputs.
    unsafe {
        dgemm(
            shape.cout,
            kdim,
            hw,
            1.0,
            kernel.as_ptr(),
            kdim as isize,
            1,
            col.as_ptr(),
            hw as isize,
            1,
            1.0,
            out.data.as_mut_ptr(),
            hw as isize,
            1,
        );
    }
    (out, col)
}

/// Accumulates parameter gradients into `grad` and returns the input
/// gradient.
pub fn conv_backward(
    shape: ConvShape,
    params: &[f64],
    col: &[f64],
    grad_out: &Tensor,
    grad: &mut [f64],
    need_input_grad: bool,
) -> Option<Tensor> {
    let hw = grad_out.plane();
    let kdim = shape.patch();
    let (kernel, _) = params.split_at(shape.kernel_len());
    let (g_kernel, g_bias) = grad.split_at_mut(shape.kernel_len());
    for (co, gb) in g_bias.iter_mut().enumerate() {
        *gb += grad_out.data[co * hw..(co + 1) * hw].iter().sum::<f64>();
    }
    // dK[co, j] += Σ_p dOut[co, p] · col[j, p]
    unsafe {
        dgemm(
            shape.cout,
            hw,
            kdim,
            1.0,
            grad_out.data.as_ptr(),
            hw as isize,
            1,
            col.as_ptr(),
            1,
            hw as isize,
            1.0,
            g_kernel.as_mut_ptr(),
            kdim as isize,
            1,
        );
    }
    if !need_input_grad {
        return None;
    }
    // dCol[j, p] = Σ_co K[co, j] · dOut[co, p]
    let mut dcol = vec![0.0; kdim * hw];
    unsafe {
        dgemm(
            kdim,
            shape.cout,
            hw,
            1.0,
            kernel.as_ptr(),
            1,
            kdim as isize,
            grad_out.data.as_ptr(),
            hw as isize,
            1,
            0.0,
            dcol.as_mut_ptr(),
            hw as isize,
            1,
        );
    }
    Some(col2im(&dcol, shape.cin, grad_out.h, grad_out.w, shape.k))
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// `activated` is the ReLU output; its zeros block the gradient.
pub fn relu_backward(activated: &Tensor, grad: &mut Tensor) {
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max-pool, stride 2; also returns the flat argmax index per output.
pub fn maxpool_forward(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, oh, ow);
    let mut arg = vec![0usize; input.c * oh * ow];
    for c in 0..input.c {
        let base = c * input.plane();
        for y in 0..oh {
            for x in 0..ow {
                let mut best_i = base + 2 * y * input.w + 2 * x;
                let mut best = input.data[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * input.w + 2 * x + dx;
                    if input.data[i] > best {
                        best = input.data[i];
                        best_i = i;
                    }
                }
                let o = (c * oh + y) * ow + x;
                out.data[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(argmax: &[usize], grad_out: &Tensor, c: usize, h: usize, w: usize) -> Tensor {
    let mut g = Tensor::zeros(c, h, w);
    for (o, &i) in argmax.iter().enumerate() {
        g.data[i] += grad_out.data[o];
    }
    g
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_forward(input: &Tensor) -> Tensor {
    let (oh, ow) = (input.h * 2, input.w * 2);
    let mut out = Tensor::zeros(input.c, oh, ow);
    for c in 0..input.c {
        for y in 0..oh {
            for x in 0..ow {
                out.data[(c * oh + y) * ow + x] = input.data[(c * input.h + y / 2) * input.w + x / 2];
            }
        }
    }
    out
}

pub fn upsample_backward(grad_out: &Tensor) -> Tensor {
    let (h, w) = (grad_out.h / 2, grad_out.w / 2);
    let mut g = Tensor::zeros(grad_out.c, h, w);
    for c in 0..grad_out.c {
        for y in 0..grad_out.h {
            for x in 0..grad_out.w {
                g.data[(c * h + y / 2) * w + x / 2] += grad_out.data[(c * grad_out.h + y) * grad_out.w + x];
            }
        }
    }
    g
}

/// Channel concatenation `[a, b]`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

pub fn split_channels(t: &Tensor, first: usize) -> (Tensor, Tensor) {
    let n = first * t.plane();
    (
        Tensor::from_vec(first, t.h, t.w, t.data[..n].to_vec()),
        Tensor::from_vec(t.c - first, t.h, t.w, t.data[n..].to_vec()),
    )
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
