//! The op set every model is composed from, each paired with its backward
//! pass. Backward functions take the forward inputs (or outputs, where that
//! is cheaper) and the upstream gradient, and return input gradients.

use super::tensor::Tensor;

/// Slope used by the leaky rectifier inside feed-forward layers.
pub const FFN_LEAKY_SLOPE: f64 = 0.01;

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub fn mul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    (mul(dy, b), mul(dy, a))
}

/// Adds a length-`n` bias to every row of an `m×n` matrix.
pub fn add_row_bias(x: &Tensor, bias: &[f64]) -> Tensor {
    let n = x.cols();
    assert_eq!(n, bias.len(), "add_row_bias: width mismatch");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    out
}

/// Gradient of a row bias: column sums of the upstream gradient.
pub fn row_bias_backward(dy: &Tensor) -> Vec<f64> {
    let n = dy.cols();
    let mut db = vec![0.0; n];
    for row in dy.data().chunks(n) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    db
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul: inner dimension mismatch");
    Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Affine map `x[m×k] · w[k×n] + b` with `w` given as a flat row-major slice.
pub fn linear(x: &Tensor, w: &[f64], b: Option<&[f64]>, n: usize) -> Tensor {
    let (m, k) = (x.rows(), x.cols());
    assert_eq!(w.len(), k * n, "linear: weight shape mismatch");
    let mut out = matmul_raw(x.data(), w, m, k, n);
    if let Some(b) = b {
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

/// Backward of [`linear`]: accumulates into `dw`/`db` and returns `dx` when
/// `need_dx` is set.
pub fn linear_backward(
    x: &Tensor,
    w: &[f64],
    dy: &Tensor,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    need_dx: bool,
) -> Option<Tensor> {
    let (m, k) = (x.rows(), x.cols());
    let n = dy.cols();
    for i in 0..m {
        let xrow = x.row(i);
        let grow = dy.row(i);
        for (p, &xv) in xrow.iter().enumerate() {
            let dwrow = &mut dw[p * n..(p + 1) * n];
            for (d, &g) in dwrow.iter_mut().zip(grow) {
                *d += xv * g;
            }
        }
    }
    if let Some(db) = db {
        for row in dy.data().chunks(n) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
    }
    need_dx.then(|| {
        let mut dx = vec![0.0; m * k];
        for i in 0..m {
            let grow = dy.row(i);
            let dxrow = &mut dx[i * k..(i + 1) * k];
            for (p, d) in dxrow.iter_mut().enumerate() {
                *d = dot(grow, &w[p * n..(p + 1) * n]);
            }
        }
        Tensor::from_parts(vec![m, k], dx)
    })
}

/// `a · bᵀ` for `a[m×k]`, `b[n×k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = b.rows();
    assert_eq!(k, b.cols(), "matmul_nt: inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out[i * n + j] = dot(arow, b.row(j));
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

/// `aᵀ · b` for `a[k×m]`, `b[k×n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.rows(), a.cols());
    let n = b.cols();
    assert_eq!(k, b.rows(), "matmul_tn: inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    for r in 0..k {
        let arow = a.row(r);
        let brow = b.row(r);
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

/// Returns `(da, db)` for `y = a · b`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    (matmul_nt(dy, b), matmul_tn(a, dy))
}

pub fn transpose(x: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x.data()[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

/// Horizontal concatenation `[a | b]` of two matrices with equal row counts.
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let m = a.rows();
    assert_eq!(m, b.rows(), "concat_cols: row mismatch");
    let (na, nb) = (a.cols(), b.cols());
    let mut out = Vec::with_capacity(m * (na + nb));
    for i in 0..m {
        out.extend_from_slice(a.row(i));
        out.extend_from_slice(b.row(i));
    }
    Tensor::from_parts(vec![m, na + nb], out)
}

/// Splits the gradient of `concat_cols` back into its two parts.
pub fn concat_cols_backward(dy: &Tensor, left_cols: usize) -> (Tensor, Tensor) {
    let (m, n) = (dy.rows(), dy.cols());
    let mut da = Vec::with_capacity(m * left_cols);
    let mut db = Vec::with_capacity(m * (n - left_cols));
    for i in 0..m {
        let row = dy.row(i);
        da.extend_from_slice(&row[..left_cols]);
        db.extend_from_slice(&row[left_cols..]);
    }
    (
        Tensor::from_parts(vec![m, left_cols], da),
        Tensor::from_parts(vec![m, n - left_cols], db),
    )
}

/// Copies the column block `[start, start+width)`.
pub fn slice_cols(x: &Tensor, start: usize, width: usize) -> Tensor {
    let m = x.rows();
    let mut out = Vec::with_capacity(m * width);
    for i in 0..m {
        out.extend_from_slice(&x.row(i)[start..start + width]);
    }
    Tensor::from_parts(vec![m, width], out)
}

/// Writes `block` into the column range starting at `start`, accumulating.
pub fn add_into_cols(dst: &mut Tensor, block: &Tensor, start: usize) {
    let width = block.cols();
    for i in 0..block.rows() {
        let src = block.row(i);
        for (d, s) in dst.row_mut(i)[start..start + width].iter_mut().zip(src) {
            *d += s;
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let n = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of `softmax_rows` given its output `y`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let n = y.cols();
    let mut dx = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks(n).zip(dy.data().chunks(n)) {
        let inner = dot(yr, gr);
        dx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - inner)));
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward of `sigmoid` given its output.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(s, g)| g * s * (1.0 - s)).collect();
    Tensor::from_parts(y.shape().to_vec(), data)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Backward of `tanh` given its output.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(t, g)| g * (1.0 - t * t)).collect();
    Tensor::from_parts(y.shape().to_vec(), data)
}

pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| leaky_relu_scalar(v, slope))
}

/// Backward of `leaky_relu` given its input.
pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, g)| if v > 0.0 { *g } else { slope * g })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Saved statistics of a row-wise layer normalization.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    /// Normalized rows before gain and bias.
    pub x_hat: Tensor,
    /// Per-row `1/sqrt(var + eps)`.
    pub inv_std: Vec<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = gain ⊙ (x − mean)/sqrt(var + eps) + bias`, row by row.
pub fn layer_norm(x: &Tensor, gain: &[f64], bias: &[f64]) -> (Tensor, LayerNormCache) {
    let n = x.cols();
    let mut y = Vec::with_capacity(x.len());
    let mut x_hat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in x.data().chunks(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(istd);
        for (j, v) in row.iter().enumerate() {
            let h = (v - mean) * istd;
            x_hat.push(h);
            y.push(gain[j] * h + bias[j]);
        }
    }
    let shape = x.shape().to_vec();
    (
        Tensor::from_parts(shape.clone(), y),
        LayerNormCache { x_hat: Tensor::from_parts(shape, x_hat), inv_std },
    )
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let n = dy.cols();
    let mut dgain = vec![0.0; n];
    let mut dbias = vec![0.0; n];
    let mut dx = Vec::with_capacity(dy.len());
    let mut dxhat = vec![0.0; n];
    for ((gr, hr), &istd) in dy.data().chunks(n).zip(cache.x_hat.data().chunks(n)).zip(&cache.inv_std) {
        for j in 0..n {
            dgain[j] += gr[j] * hr[j];
            dbias[j] += gr[j];
            dxhat[j] = gr[j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
        let mean_dh = dxhat.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / n as f64;
        dx.extend((0..n).map(|j| istd * (dxhat[j] - mean_d - hr[j] * mean_dh)));
    }
    (Tensor::from_parts(dy.shape().to_vec(), dx), dgain, dbias)
}

/// `Σ x²`.
pub fn squared_l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn squared_l2_backward(x: &[f64], dy: f64) -> Vec<f64> {
    x.iter().map(|v| 2.0 * v * dy).collect()
}

/// Selects rows of `x` by index (repeats allowed).
pub fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let n = x.cols();
    let mut out = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        out.extend_from_slice(x.row(i));
    }
    Tensor::from_parts(vec![idx.len(), n], out)
}

/// Scatter-adds row gradients back onto a tensor with `rows` rows.
pub fn gather_rows_backward(dy: &Tensor, idx: &[usize], rows: usize) -> Tensor {
    let n = dy.cols();
    let mut dx = Tensor::zeros(&[rows, n]);
    for (k, &i) in idx.iter().enumerate() {
        for (d, g) in dx.row_mut(i).iter_mut().zip(dy.row(k)) {
            *d += g;
        }
    }
    dx
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, Rng};

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.5, 1.5)).collect())
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax_rows(&Tensor::matrix(1, 2, vec![2f64.ln(), 0.0]).unwrap());
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_naive_formula() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let x = random(&mut rng, &[5, 7]);
            let y = softmax_rows(&x);
            for i in 0..5 {
                let denom: f64 = x.row(i).iter().map(|v| v.exp()).sum();
                for j in 0..7 {
                    assert!((y.get(i, j) - x.get(i, j).exp() / denom).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_large_magnitudes_still_normalized() {
        let x = Tensor::matrix(2, 3, vec![1e3, -1e3, 999.0, -1e3, -1e3, -999.5]).unwrap();
        let y = softmax_rows(&x);
        for i in 0..2 {
            assert!((y.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(y.row(i).iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = Rng::new(3);
        let a = random(&mut rng, &[4, 3]);
        let b = random(&mut rng, &[3, 5]);
        let c = matmul(&a, &b);
        let bt = transpose(&b);
        let c2 = matmul_nt(&a, &bt);
        let c3 = matmul_tn(&transpose(&a), &b);
        for ((x, y), z) in c.data().iter().zip(c2.data()).zip(c3.data()) {
            assert!((x - y).abs() < 1e-14 && (x - z).abs() < 1e-14);
        }
    }

    // Each op's backward checked through a random linear functional
    // L = Σ r ⊙ op(x), so dL/dy = r.
    fn check_unary(op: impl Fn(&Tensor) -> Tensor, back: impl Fn(&Tensor, &Tensor, &Tensor) -> Tensor, seed: u64) {
        let mut rng = Rng::new(seed);
        for _ in 0..100 {
            let x = random(&mut rng, &[3, 4]);
            let r = random(&mut rng, &[3, 4]);
            let y = op(&x);
            let analytic = back(&x, &y, &r);
            let f = |v: &[f64]| {
                let t = Tensor::from_parts(vec![3, 4], v.to_vec());
                (dot(op(&t).data(), r.data()), analytic.data().to_vec())
            };
            let rep = grad_check(f, x.data(), 1e-6).unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn unary_backwards_pass_grad_check() {
        check_unary(softmax_rows, |_, y, r| softmax_rows_backward(y, r), 1);
        check_unary(sigmoid, |_, y, r| sigmoid_backward(y, r), 2);
        check_unary(tanh, |_, y, r| tanh_backward(y, r), 3);
        check_unary(|x| leaky_relu(x, 0.2), |x, _, r| leaky_relu_backward(x, r, 0.2), 4);
        check_unary(transpose_back_and_forth, |_, _, r| r.clone(), 5);
    }

    fn transpose_back_and_forth(x: &Tensor) -> Tensor {
        transpose(&transpose(x))
    }

    #[test]
    fn layer_norm_backward_passes_grad_check() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let x = random(&mut rng, &[3, 6]);
            let gain: Vec<f64> = (0..6).map(|_| rng.uniform_range(0.5, 1.5)).collect();
            let bias: Vec<f64> = (0..6).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
            let r = random(&mut rng, &[3, 6]);
            let mut theta = x.data().to_vec();
            theta.extend(&gain);
            theta.extend(&bias);
            let f = |v: &[f64]| {
                let x = Tensor::from_parts(vec![3, 6], v[..18].to_vec());
                let (y, cache) = layer_norm(&x, &v[18..24], &v[24..30]);
                let (dx, dg, db) = layer_norm_backward(&cache, &v[18..24], &r);
                let mut g = dx.into_data();
                g.extend(dg);
                g.extend(db);
                (dot(y.data(), r.data()), g)
            };
            let rep = grad_check(f, &theta, 1e-6).unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn matmul_concat_gather_backwards_pass_grad_check() {
        let mut rng = Rng::new(21);
        for _ in 0..100 {
            let a = random(&mut rng, &[3, 4]);
            let b = random(&mut rng, &[4, 2]);
            let r = random(&mut rng, &[3, 6]);
            let idx = [2usize, 0, 2];
            let mut theta = a.data().to_vec();
            theta.extend(b.data());
            let f = |v: &[f64]| {
                let a = Tensor::from_parts(vec![3, 4], v[..12].to_vec());
                let b = Tensor::from_parts(vec![4, 2], v[12..].to_vec());
                let ab = matmul(&a, &b);
                let g = gather_rows(&a, &idx);
                let y = concat_cols(&ab, &g);
                let loss = dot(y.data(), r.data()) + squared_l2(b.data());
                let (d_ab, d_g) = concat_cols_backward(&r, 2);
                let (mut da, mut db) = matmul_backward(&a, &b, &d_ab);
                da.add_assign(&gather_rows_backward(&d_g, &idx, 3));
                for (d, s) in db.data_mut().iter_mut().zip(squared_l2_backward(b.data(), 1.0)) {
                    *d += s;
                }
                let mut grad = da.into_data();
                grad.extend(db.into_data());
                (loss, grad)
            };
            let rep = grad_check(f, &theta, 1e-6).unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn mul_and_bias_backwards() {
        let mut rng = Rng::new(5);
        let a = random(&mut rng, &[2, 3]);
        let b = random(&mut rng, &[2, 3]);
        let dy = random(&mut rng, &[2, 3]);
        let (da, db) = mul_backward(&a, &b, &dy);
        assert_eq!(da, mul(&dy, &b));
        assert_eq!(db, mul(&dy, &a));
        let db = row_bias_backward(&dy);
        for (j, v) in db.iter().enumerate() {
            assert!((v - (dy.get(0, j) + dy.get(1, j))).abs() < 1e-15);
        }
        let x = add_row_bias(&a, &[1.0, 2.0, 3.0]);
        assert!((x.get(1, 2) - a.get(1, 2) - 3.0).abs() < 1e-15);
        assert_eq!(add(&a, &b).data()[0], a.data()[0] + b.data()[0]);
    }
}
