//! Layer primitives: valid convolution (via im2col and GEMM), batch
//! normalization, leaky-ReLU, dropout, and fully connected layers, each with
//! an exact backward pass.

use super::Scalar;
use ndarray::{ArrayView2, ArrayViewMut2};

/// c = a (m x k) . b (k x n), written into a fresh Vec.
pub fn matmul<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let a = ArrayView2::from_shape((m, k), a).expect("lhs shape");
    let b = ArrayView2::from_shape((k, n), b).expect("rhs shape");
    let mut c = vec![T::zero(); m * n];
    {
        let mut cv = ArrayViewMut2::from_shape((m, n), &mut c[..]).expect("out shape");
        ndarray::linalg::general_mat_mul(T::one(), &a, &b, T::zero(), &mut cv);
    }
    c
}

/// c = a^T (k x m)^T=(m x k) variant: computes a_t(m x k) . b where `a` is
/// stored (k x m) row-major. Used for weight gradients without materializing
/// transposes.
pub fn matmul_tn<T: Scalar>(a: &[T], k: usize, m: usize, b: &[T], n: usize) -> Vec<T> {
    let a = ArrayView2::from_shape((k, m), a).expect("lhs shape");
    let b = ArrayView2::from_shape((k, n), b).expect("rhs shape");
    let mut c = vec![T::zero(); m * n];
    {
        let mut cv = ArrayViewMut2::from_shape((m, n), &mut c[..]).expect("out shape");
        ndarray::linalg::general_mat_mul(T::one(), &a.t(), &b, T::zero(), &mut cv);
    }
    c
}

/// c = a (m x k) . b^T where `b` is stored (n x k) row-major.
pub fn matmul_nt<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let a = ArrayView2::from_shape((m, k), a).expect("lhs shape");
    let b = ArrayView2::from_shape((n, k), b).expect("rhs shape");
    let mut c = vec![T::zero(); m * n];
    {
        let mut cv = ArrayViewMut2::from_shape((m, n), &mut c[..]).expect("out shape");
        ndarray::linalg::general_mat_mul(T::one(), &a, &b.t(), T::zero(), &mut cv);
    }
    c
}

/// Unfold `[n][c][h][w]` into the patch matrix `(n*oh*ow, c*kh*kw)` for a
/// valid convolution with kernel (kh, kw), stride 1.
pub fn im2col<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let oh = h + 1 - kh;
    let ow = w + 1 - kw;
    let k = c * kh * kw;
    let mut col = vec![T::zero(); n * oh * ow * k];
    for i in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let row = ((i * oh + y) * ow + x) * k;
                for ch in 0..c {
                    let src_base = ((i * c + ch) * h + y) * w + x;
                    let dst_base = row + ch * kh * kw;
                    for dy in 0..kh {
                        let src = src_base + dy * w;
                        let dst = dst_base + dy * kw;
                        col[dst..dst + kw].copy_from_slice(&input[src..src + kw]);
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add the patch-matrix gradient back to `[n][c][h][w]`.
pub fn col2im<T: Scalar>(
    col: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let oh = h + 1 - kh;
    let ow = w + 1 - kw;
    let k = c * kh * kw;
    let mut input = vec![T::zero(); n * c * h * w];
    for i in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let row = ((i * oh + y) * ow + x) * k;
                for ch in 0..c {
                    let dst_base = ((i * c + ch) * h + y) * w + x;
                    let src_base = row + ch * kh * kw;
                    for dy in 0..kh {
                        let dst = dst_base + dy * w;
                        let src = src_base + dy * kw;
                        for dx in 0..kw {
                            input[dst + dx] = input[dst + dx] + col[src + dx];
                        }
                    }
                }
            }
        }
    }
    input
}

/// Valid convolution. `weights` is `[out_c][in_c][kh][kw]`; returns the
/// activations `[n][out_c][oh][ow]` along with the patch matrix for reuse in
/// the backward pass.
pub struct ConvCache<T> {
    pub col: Vec<T>,
    pub rows: usize, // n*oh*ow
}

pub fn conv_forward<T: Scalar>(
    input: &[T],
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[T],
    bias: &[T],
    out_c: usize,
    kh: usize,
    kw: usize,
) -> (Vec<T>, ConvCache<T>) {
    let oh = h + 1 - kh;
    let ow = w + 1 - kw;
    let k = in_c * kh * kw;
    let rows = n * oh * ow;
    let col = im2col(input, n, in_c, h, w, kh, kw);
    // (rows, k) . (k, out_c) via the transposed weight matrix (out_c, k)
    let out_mat = matmul_nt(&col, rows, k, weights, out_c);
    // rearrange (rows, out_c) -> [n][out_c][oh][ow] and add bias
    let plane = oh * ow;
    let mut out = vec![T::zero(); n * out_c * plane];
    for i in 0..n {
        for p in 0..plane {
            let row = (i * plane + p) * out_c;
            for oc in 0..out_c {
                out[(i * out_c + oc) * plane + p] = out_mat[row + oc] + bias[oc];
            }
        }
    }
    (out, ConvCache { col, rows })
}

pub struct ConvGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    /// Gradient w.r.t. the layer input; `None` when not requested.
    pub input: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    grad_out: &[T],
    cache: &ConvCache<T>,
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[T],
    out_c: usize,
    kh: usize,
    kw: usize,
    need_input_grad: bool,
) -> ConvGrads<T> {
    let oh = h + 1 - kh;
    let ow = w + 1 - kw;
    let plane = oh * ow;
    let k = in_c * kh * kw;
    let rows = cache.rows;
    debug_assert_eq!(rows, n * plane);

    // gather grad_out [n][out_c][oh][ow] -> G (rows, out_c)
    let mut g = vec![T::zero(); rows * out_c];
    let mut bias = vec![T::zero(); out_c];
    for i in 0..n {
        for oc in 0..out_c {
            let src = (i * out_c + oc) * plane;
            let mut sum = T::zero();
            for p in 0..plane {
                let v = grad_out[src + p];
                g[(i * plane + p) * out_c + oc] = v;
                sum = sum + v;
            }
            bias[oc] = bias[oc] + sum;
        }
    }

    // dW (out_c, k) = G^T (out_c, rows) . col (rows, k)
    let dw = matmul_tn(&g, rows, out_c, &cache.col, k);
    let input = if need_input_grad {
        // dCol (rows, k) = G (rows, out_c) . W (out_c, k)
        let dcol = matmul(&g, rows, out_c, weights, k);
        Some(col2im(&dcol, n, in_c, h, w, kh, kw))
    } else {
        None
    };
    ConvGrads {
        weights: dw,
        bias,
        input,
    }
}

/// Batch-norm forward state needed by the backward pass.
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>, // per channel
    pub m: usize,        // elements per channel
}

/// Train-mode batch normalization over `[n][c][plane]` activations using
/// batch statistics (biased variance). Updates running statistics via EMA.
#[allow(clippy::too_many_arguments)]
pub fn bn_forward_train<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[T],
    beta: &[T],
    run_mean: &mut [T],
    run_var: &mut [T],
    eps: T,
    momentum: T,
) -> (Vec<T>, BnCache<T>) {
    let m = n * plane;
    let m_t = T::from_f64(m as f64);
    let mut out = vec![T::zero(); input.len()];
    let mut xhat = vec![T::zero(); input.len()];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for p in 0..plane {
                sum = sum + input[base + p];
            }
        }
        let mean = sum / m_t;
        let mut ss = T::zero();
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for p in 0..plane {
                let d = input[base + p] - mean;
                ss = ss + d * d;
            }
        }
        let var = ss / m_t;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        let g = gamma[ch];
        let b = beta[ch];
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for p in 0..plane {
                let xh = (input[base + p] - mean) * istd;
                xhat[base + p] = xh;
                out[base + p] = g * xh + b;
            }
        }
        run_mean[ch] = momentum * run_mean[ch] + (T::one() - momentum) * mean;
        run_var[ch] = momentum * run_var[ch] + (T::one() - momentum) * var;
    }
    (out, BnCache { xhat, inv_std, m })
}

/// Infer-mode batch normalization using running statistics.
pub fn bn_forward_infer<T: Scalar>(
    input: &[T],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[T],
    beta: &[T],
    run_mean: &[T],
    run_var: &[T],
    eps: T,
) -> Vec<T> {
    let mut out = vec![T::zero(); input.len()];
    for ch in 0..c {
        let istd = T::one() / (run_var[ch] + eps).sqrt();
        let g = gamma[ch];
        let b = beta[ch];
        let mu = run_mean[ch];
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for p in 0..plane {
                out[base + p] = g * (input[base + p] - mu) * istd + b;
            }
        }
    }
    out
}

pub struct BnGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub input: Vec<T>,
}

/// Exact gradient through train-mode batch normalization:
/// `dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))`.
pub fn bn_backward<T: Scalar>(
    grad_out: &[T],
    cache: &BnCache<T>,
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[T],
) -> BnGrads<T> {
    let m_t = T::from_f64(cache.m as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dinput = vec![T::zero(); grad_out.len()];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for p in 0..plane {
                let dy = grad_out[base + p];
                sum_dy = sum_dy + dy;
                sum_dy_xhat = sum_dy_xhat + dy * cache.xhat[base + p];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let g = gamma[ch];
        let istd_over_m = cache.inv_std[ch] / m_t;
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for p in 0..plane {
                let dxhat = grad_out[base + p] * g;
                let term = m_t * dxhat - sum_dy * g - cache.xhat[base + p] * sum_dy_xhat * g;
                dinput[base + p] = istd_over_m * term;
            }
        }
    }
    BnGrads {
        gamma: dgamma,
        beta: dbeta,
        input: dinput,
    }
}

/// Element-wise leaky-ReLU; backward multiplies by 1 or `slope` depending on
/// the forward input's sign (cached implicitly via the pre-activation).
pub fn leaky_forward<T: Scalar>(input: &[T], slope: T) -> Vec<T> {
    input
        .iter()
        .map(|&x| if x >= T::zero() { x } else { slope * x })
        .collect()
}

pub fn leaky_backward<T: Scalar>(grad_out: &[T], pre_activation: &[T], slope: T) -> Vec<T> {
    grad_out
        .iter()
        .zip(pre_activation)
        .map(|(&g, &x)| if x >= T::zero() { g } else { slope * g })
        .collect()
}

/// Inverted dropout: kept activations are scaled by `1/(1-rate)` in train
/// mode so inference is a no-op. The mask holds the scale factor (0 for
/// dropped units).
pub fn dropout_mask<T: Scalar, R: rand::Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let scale = T::from_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                scale
            }
        })
        .collect()
}

pub fn apply_mask<T: Scalar>(input: &[T], mask: &[T]) -> Vec<T> {
    input.iter().zip(mask).map(|(&x, &m)| x * m).collect()
}

/// Fully connected forward: `out (n, d_out) = x (n, d_in) . W^T + b` with
/// `W` stored `[d_out][d_in]`.
pub fn fc_forward<T: Scalar>(
    input: &[T],
    n: usize,
    d_in: usize,
    weights: &[T],
    bias: &[T],
    d_out: usize,
) -> Vec<T> {
    let mut out = matmul_nt(input, n, d_in, weights, d_out);
    for i in 0..n {
        for o in 0..d_out {
            out[i * d_out + o] = out[i * d_out + o] + bias[o];
        }
    }
    out
}

pub struct FcGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub input: Vec<T>,
}

pub fn fc_backward<T: Scalar>(
    grad_out: &[T],
    input: &[T],
    n: usize,
    d_in: usize,
    weights: &[T],
    d_out: usize,
) -> FcGrads<T> {
    // dW (d_out, d_in) = G^T (d_out, n) . x (n, d_in)
    let dw = matmul_tn(grad_out, n, d_out, input, d_in);
    let mut db = vec![T::zero(); d_out];
    for i in 0..n {
        for o in 0..d_out {
            db[o] = db[o] + grad_out[i * d_out + o];
        }
    }
    // dx (n, d_in) = G (n, d_out) . W (d_out, d_in)
    let dx = matmul(grad_out, n, d_out, weights, d_in);
    FcGrads {
        weights: dw,
        bias: db,
        input: dx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_loops() {
        // 1 sample, 2 input channels 4x4, 3 output channels, kernel 3x3
        let (n, c, h, w, oc, kh, kw) = (2usize, 2usize, 4usize, 4usize, 3usize, 3usize, 3usize);
        let input: Vec<f64> = (0..n * c * h * w).map(|i| (i as f64) * 0.01 - 0.3).collect();
        let weights: Vec<f64> = (0..oc * c * kh * kw)
            .map(|i| ((i * 7 % 13) as f64) * 0.05 - 0.2)
            .collect();
        let bias = vec![0.1, -0.2, 0.05];
        let (out, _) = conv_forward(&input, n, c, h, w, &weights, &bias, oc, kh, kw);

        let oh = h + 1 - kh;
        let ow = w + 1 - kw;
        for i in 0..n {
            for o in 0..oc {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias[o];
                        for ch in 0..c {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    acc += input[((i * c + ch) * h + y + dy) * w + x + dx]
                                        * weights[((o * c + ch) * kh + dy) * kw + dx];
                                }
                            }
                        }
                        let got = out[((i * oc + o) * oh + y) * ow + x];
                        assert!((got - acc).abs() < 1e-12, "({i},{o},{y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn col2im_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y
        let (n, c, h, w, kh, kw) = (2usize, 3usize, 5usize, 4usize, 3usize, 2usize);
        let x: Vec<f64> = (0..n * c * h * w).map(|i| (i as f64).sin()).collect();
        let oh = h + 1 - kh;
        let ow = w + 1 - kw;
        let k = c * kh * kw;
        let y: Vec<f64> = (0..n * oh * ow * k).map(|i| (i as f64).cos()).collect();
        let cx = im2col(&x, n, c, h, w, kh, kw);
        let ay = col2im(&y, n, c, h, w, kh, kw);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn bn_train_normalizes_batch() {
        let (n, c, plane) = (8usize, 3usize, 4usize);
        let input: Vec<f64> = (0..n * c * plane)
            .map(|i| ((i * 31 % 17) as f64) * 0.3 + 2.0)
            .collect();
        let gamma = vec![1.0; c];
        let beta = vec![0.0; c];
        let mut rm = vec![0.0; c];
        let mut rv = vec![1.0; c];
        let (out, _) =
            bn_forward_train(&input, n, c, plane, &gamma, &beta, &mut rm, &mut rv, 1e-5, 0.9);
        for ch in 0..c {
            let vals: Vec<f64> = (0..n)
                .flat_map(|i| (0..plane).map(move |p| (i, p)))
                .map(|(i, p)| out[(i * c + ch) * plane + p])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-10, "mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn fc_closed_form_gradient() {
        // linear map + logcosh: dL/dW = tanh(pred - target)^T x / count
        let (n, d_in, d_out) = (5usize, 4usize, 2usize);
        let x: Vec<f64> = (0..n * d_in).map(|i| (i as f64) * 0.1 - 0.7).collect();
        let w: Vec<f64> = (0..d_out * d_in).map(|i| (i as f64) * 0.05 - 0.2).collect();
        let b = vec![0.3, -0.1];
        let target: Vec<f64> = (0..n * d_out).map(|i| ((i % 3) as f64) * 0.4).collect();

        let pred = fc_forward(&x, n, d_in, &w, &b, d_out);
        let count = (n * d_out) as f64;
        let grad_out: Vec<f64> = pred
            .iter()
            .zip(&target)
            .map(|(&p, &t)| (p - t).tanh() / count)
            .collect();
        let grads = fc_backward(&grad_out, &x, n, d_in, &w, d_out);

        for o in 0..d_out {
            for j in 0..d_in {
                let mut expect = 0.0;
                for i in 0..n {
                    expect += (pred[i * d_out + o] - target[i * d_out + o]).tanh()
                        * x[i * d_in + j]
                        / count;
                }
                let got = grads.weights[o * d_in + j];
                assert!((got - expect).abs() < 1e-12, "w[{o}][{j}]");
            }
        }
    }

    #[test]
    fn dropout_mask_scale() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mask: Vec<f64> = dropout_mask(10_000, 0.25, &mut rng);
        let kept = mask.iter().filter(|&&m| m > 0.0).count();
        assert!((kept as f64 / 10_000.0 - 0.75).abs() < 0.02);
        for &m in &mask {
            assert!(m == 0.0 || (m - 1.0 / 0.75).abs() < 1e-12);
        }
    }
}
