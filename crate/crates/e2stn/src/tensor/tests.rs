use super::*;
use crate::rng::Rng;

// ---- independent oracles -------------------------------------------------

/// Brute-force triple-loop matrix product.
fn matmul_oracle(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * k + t] * b[t * m + j];
            }
            out[i * m + j] = acc;
        }
    }
    out
}

/// Naive single-position convolution oracle (standard kind, one channel pair
/// at a time), cross-correlation convention with zero padding.
fn conv_oracle(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: &[f64],
    c_out: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
) -> Vec<f64> {
    let h_out = h + 2 * ph - kh + 1;
    let w_out = w + 2 * pw - kw + 1;
    let mut out = vec![0.0; c_out * h_out * w_out];
    for o in 0..c_out {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = 0.0;
                for i in 0..c_in {
                    for u in 0..kh {
                        for v in 0..kw {
                            let y = oy as isize + u as isize - ph as isize;
                            let xpos = ox as isize + v as isize - pw as isize;
                            if y < 0 || y >= h as isize || xpos < 0 || xpos >= w as isize {
                                continue;
                            }
                            acc += x[(i * h + y as usize) * w + xpos as usize]
                                * k[((o * c_in + i) * kh + u) * kw + v];
                        }
                    }
                }
                out[(o * h_out + oy) * w_out + ox] = acc;
            }
        }
    }
    out
}

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len());
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "index {i}: actual {a} vs expected {e}"
        );
    }
}

// ---- matmul ---------------------------------------------------------------

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let eye = g.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let m = g.constant(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let out = g.matmul(eye, m).unwrap();
    assert_eq!(g.data(out), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_hand_case() {
    // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
    let mut g = Graph::new();
    let a = g.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = g.constant(vec![2, 1], vec![5.0, 6.0]).unwrap();
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.data(out), &[17.0, 39.0]);
    // agree with the brute-force oracle
    let expect = matmul_oracle(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1);
    assert_eq!(g.data(out), expect.as_slice());
}

#[test]
fn matmul_matches_oracle_on_random_inputs() {
    let mut rng = Rng::new(101);
    for _ in 0..20 {
        let (n, k, m) = (
            1 + rng.below(5),
            1 + rng.below(5),
            1 + rng.below(5),
        );
        let a: Vec<f64> = (0..n * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * m).map(|_| rng.normal()).collect();
        let mut g = Graph::new();
        let ta = g.constant(vec![n, k], a.clone()).unwrap();
        let tb = g.constant(vec![k, m], b.clone()).unwrap();
        let out = g.matmul(ta, tb).unwrap();
        assert_close(g.data(out), &matmul_oracle(&a, &b, n, k, m), 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    let b = g.constant(vec![2, 2], vec![0.0; 4]).unwrap();
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
}

#[test]
fn matmul_grad_matches_finite_differences() {
    // d sum(A.B) / dA within rel 1e-6
    let mut rng = Rng::new(7);
    let a0: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    let b0: Vec<f64> = (0..12).map(|_| rng.normal()).collect();

    let eval = |a: &[f64]| -> crate::error::Result<f64> {
        let mut g = Graph::new();
        let ta = g.param(vec![2, 3], a.to_vec())?;
        let tb = g.constant(vec![3, 4], b0.clone())?;
        let p = g.matmul(ta, tb)?;
        let s = g.sum_all(p)?;
        Ok(g.scalar_value(s))
    };

    let mut g = Graph::new();
    let ta = g.param(vec![2, 3], a0.clone()).unwrap();
    let tb = g.constant(vec![3, 4], b0.clone()).unwrap();
    let p = g.matmul(ta, tb).unwrap();
    let s = g.sum_all(p).unwrap();
    g.backward(s).unwrap();
    let analytic = g.grad(ta).unwrap().to_vec();

    let err = grad_check(eval, &a0, &analytic, DEFAULT_FD_EPS).unwrap();
    assert!(err < 1e-6, "max rel error {err}");
}

// ---- softmax ----------------------------------------------------------------

#[test]
fn softmax_uniform_on_equal_logits() {
    let mut g = Graph::new();
    let x = g.constant(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap();
    let s = g.softmax_rows(x).unwrap();
    assert_close(g.data(s), &[1.0 / 3.0; 3], 1e-15);
}

#[test]
fn softmax_shift_invariance() {
    let mut rng = Rng::new(3);
    let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let shifted: Vec<f64> = x.iter().map(|v| v + 7.5).collect();
    let mut g = Graph::new();
    let a = g.constant(vec![1, 4], x).unwrap();
    let b = g.constant(vec![1, 4], shifted).unwrap();
    let sa = g.softmax_rows(a).unwrap();
    let sb = g.softmax_rows(b).unwrap();
    assert_close(g.data(sa), g.data(sb).to_vec().as_slice(), 1e-12);
}

#[test]
fn softmax_two_logit_value() {
    // scalar exp oracle: e^1/(e^1+e^2), e^2/(e^1+e^2)
    let mut g = Graph::new();
    let x = g.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let s = g.softmax_rows(x).unwrap();
    assert_close(g.data(s), &[0.26894, 0.73106], 1e-5);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = Rng::new(17);
    for _ in 0..50 {
        let rows = 1 + rng.below(4);
        let m = 1 + rng.below(6);
        let x: Vec<f64> = (0..rows * m).map(|_| rng.uniform(-30.0, 30.0)).collect();
        let mut g = Graph::new();
        let t = g.constant(vec![rows, m], x).unwrap();
        let s = g.softmax_rows(t).unwrap();
        for r in 0..rows {
            let sum: f64 = g.data(s)[r * m..(r + 1) * m].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
        }
    }
}

// ---- layer norm ----------------------------------------------------------

#[test]
fn layer_norm_constant_row_maps_to_beta() {
    let mut g = Graph::new();
    let x = g.constant(vec![1, 4], vec![5.0; 4]).unwrap();
    let gamma = g.constant(vec![4], vec![1.0; 4]).unwrap();
    let beta = g.constant(vec![4], vec![0.0; 4]).unwrap();
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    assert_close(g.data(y), &[0.0; 4], 1e-9);
}

#[test]
fn layer_norm_two_element_row() {
    // [1, 3] with tiny eps -> [-1, 1]
    let mut g = Graph::new();
    let x = g.constant(vec![1, 2], vec![1.0, 3.0]).unwrap();
    let gamma = g.constant(vec![2], vec![1.0; 2]).unwrap();
    let beta = g.constant(vec![2], vec![0.0; 2]).unwrap();
    let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
    assert_close(g.data(y), &[-1.0, 1.0], 1e-6);
}

#[test]
fn layer_norm_zero_gamma_gives_beta() {
    let mut g = Graph::new();
    let x = g.constant(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
    let gamma = g.constant(vec![3], vec![0.0; 3]).unwrap();
    let beta = g.constant(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    assert_close(g.data(y), &[4.0, 5.0, 6.0, 4.0, 5.0, 6.0], 1e-12);
}

#[test]
fn layer_norm_normalizes_rows() {
    let mut rng = Rng::new(5);
    let (rows, m) = (3, 8);
    let x: Vec<f64> = (0..rows * m).map(|_| rng.uniform(-4.0, 4.0)).collect();
    let mut g = Graph::new();
    let t = g.constant(vec![rows, m], x).unwrap();
    let gamma = g.constant(vec![m], vec![1.0; m]).unwrap();
    let beta = g.constant(vec![m], vec![0.0; m]).unwrap();
    let y = g.layer_norm(t, gamma, beta, 1e-10).unwrap();
    for r in 0..rows {
        let row = &g.data(y)[r * m..(r + 1) * m];
        let mean = row.iter().sum::<f64>() / m as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        assert!(mean.abs() < 1e-9, "row mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "row var {var}");
    }
}

// ---- elementwise and reductions -------------------------------------------

#[test]
fn relu_clamps_negatives() {
    let mut g = Graph::new();
    let x = g.constant(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    let y = g.relu(x).unwrap();
    assert_eq!(g.data(y), &[0.0, 0.0, 2.0]);
}

#[test]
fn l2_norm_of_zero_tensor_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(vec![2, 2], vec![0.0; 4]).unwrap();
    let n = g.l2_norm(x).unwrap();
    assert_eq!(g.scalar_value(n), 0.0);
}

#[test]
fn variance_of_constant_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(vec![3], vec![1.0; 3]).unwrap();
    let v = g.variance_all(x).unwrap();
    assert_eq!(g.scalar_value(v), 0.0);
}

#[test]
fn channel_stats_match_direct_computation() {
    let mut rng = Rng::new(23);
    let (c, h, w) = (3, 2, 4);
    let x: Vec<f64> = (0..c * h * w).map(|_| rng.normal()).collect();
    let mut g = Graph::new();
    let t = g.constant(vec![c, h, w], x.clone()).unwrap();
    let m = g.channel_mean(t).unwrap();
    let v = g.channel_variance(t).unwrap();
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        let var = plane.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / plane.len() as f64;
        assert!((g.data(m)[ch] - mean).abs() < 1e-12);
        assert!((g.data(v)[ch] - var).abs() < 1e-12);
    }
}

// ---- structure ops ----------------------------------------------------------

#[test]
fn reshape_transpose_round_trip_is_identity() {
    let mut rng = Rng::new(9);
    let x: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
    let mut g = Graph::new();
    let t = g.constant(vec![3, 4], x.clone()).unwrap();
    let tt = g.transpose_last_two(t).unwrap();
    let back = g.transpose_last_two(tt).unwrap();
    assert_eq!(g.data(back), x.as_slice());
    let r = g.reshape(t, vec![2, 6]).unwrap();
    let back2 = g.reshape(r, vec![3, 4]).unwrap();
    assert_eq!(g.data(back2), x.as_slice());
}

#[test]
fn concat_slice_round_trip() {
    let mut g = Graph::new();
    let a = g.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = g.constant(vec![2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[2, 5]);
    assert_eq!(g.data(c), &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
    let sa = g.slice_last(c, 0, 2).unwrap();
    let sb = g.slice_last(c, 2, 3).unwrap();
    assert_eq!(g.data(sa), g.data(a));
    assert_eq!(g.data(sb), g.data(b));
}

// ---- conv2d -----------------------------------------------------------------

#[test]
fn conv2d_one_by_one_identity() {
    let mut g = Graph::new();
    let x = g.constant(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let k = g.constant(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let y = g.conv2d(x, k, ConvKind::Standard, (0, 0)).unwrap();
    assert_eq!(g.data(y), g.data(x));
}

#[test]
fn conv2d_band_kernel_hand_case() {
    // input [1,2,3], kernel (1,3) = [1,1,1], zero padding 1 -> [3,6,5]
    let mut g = Graph::new();
    let x = g.constant(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let k = g.constant(vec![1, 1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
    let y = g.conv2d(x, k, ConvKind::Standard, (0, 1)).unwrap();
    assert_eq!(g.data(y), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv2d_depthwise_multiplies_channels() {
    let mut rng = Rng::new(31);
    let (c, h, w, d) = (3, 2, 4, 2);
    let x: Vec<f64> = (0..c * h * w).map(|_| rng.normal()).collect();
    let k: Vec<f64> = (0..c * d * h).map(|_| rng.normal()).collect();
    let mut g = Graph::new();
    let tx = g.constant(vec![c, h, w], x).unwrap();
    let tk = g.constant(vec![c, d, h, 1], k).unwrap();
    let y = g.conv2d(tx, tk, ConvKind::Depthwise, (0, 0)).unwrap();
    assert_eq!(g.shape(y), &[c * d, 1, w]);
}

#[test]
fn conv2d_matches_naive_oracle() {
    let mut rng = Rng::new(37);
    for _ in 0..10 {
        let (c_in, c_out) = (1 + rng.below(3), 1 + rng.below(3));
        let (h, w) = (1 + rng.below(4), 3 + rng.below(3));
        let (kh, kw) = (1, 3);
        let (ph, pw) = (0, 1);
        if h + 2 * ph < kh {
            continue;
        }
        let x: Vec<f64> = (0..c_in * h * w).map(|_| rng.normal()).collect();
        let k: Vec<f64> = (0..c_out * c_in * kh * kw).map(|_| rng.normal()).collect();
        let mut g = Graph::new();
        let tx = g.constant(vec![c_in, h, w], x.clone()).unwrap();
        let tk = g.constant(vec![c_out, c_in, kh, kw], k.clone()).unwrap();
        let y = g.conv2d(tx, tk, ConvKind::Standard, (ph, pw)).unwrap();
        let expect = conv_oracle(&x, c_in, h, w, &k, c_out, kh, kw, ph, pw);
        assert_close(g.data(y), &expect, 1e-12);
    }
}

#[test]
fn conv2d_kernel_larger_than_padded_input_errors() {
    let mut g = Graph::new();
    let x = g.constant(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
    let k = g.constant(vec![1, 1, 1, 5], vec![1.0; 5]).unwrap();
    assert!(g.conv2d(x, k, ConvKind::Standard, (0, 1)).is_err());
}

// ---- gradient checking -------------------------------------------------------

#[test]
fn grad_check_sum_of_squares() {
    // f = sum(x^2) at x = [1, 2]: analytic [2, 4]
    let theta = vec![1.0, 2.0];
    let eval = |x: &[f64]| -> crate::error::Result<f64> {
        let mut g = Graph::new();
        let t = g.param(vec![2], x.to_vec())?;
        let sq = g.mul(t, t)?;
        let s = g.sum_all(sq)?;
        Ok(g.scalar_value(s))
    };
    let mut g = Graph::new();
    let t = g.param(vec![2], theta.clone()).unwrap();
    let sq = g.mul(t, t).unwrap();
    let s = g.sum_all(sq).unwrap();
    g.backward(s).unwrap();
    let analytic = g.grad(t).unwrap().to_vec();
    assert_close(&analytic, &[2.0, 4.0], 1e-12);
    let err = grad_check(eval, &theta, &analytic, DEFAULT_FD_EPS).unwrap();
    assert!(err < 1e-8, "max rel error {err}");
}

#[test]
fn grad_check_linear_function_is_machine_precision() {
    let theta = vec![0.3, -1.2, 2.5];
    let coeffs = [2.0, -3.0, 0.5];
    let eval = |x: &[f64]| -> crate::error::Result<f64> {
        let mut g = Graph::new();
        let t = g.param(vec![3], x.to_vec())?;
        let c = g.constant(vec![3], coeffs.to_vec())?;
        let p = g.mul(t, c)?;
        let s = g.sum_all(p)?;
        Ok(g.scalar_value(s))
    };
    let err = grad_check(eval, &theta, &coeffs, DEFAULT_FD_EPS).unwrap();
    assert!(err < 1e-9, "max rel error {err}");
}

#[test]
fn grad_check_rejects_non_finite() {
    let f = |x: &[f64]| -> crate::error::Result<f64> { Ok(1.0 / x[0]) };
    // perturbing around 0 divides by ~1e-5, fine; force a NaN instead
    let f_nan = move |x: &[f64]| -> crate::error::Result<f64> {
        let v = f(x)?;
        Ok(if x[0] > 0.0 { f64::NAN } else { v })
    };
    assert!(central_diff_grad(f_nan, &[0.5], 1e-5).is_err());
}

/// Every primitive op: analytic gradient matches central differences within
/// rel 1e-6 on random small inputs.
#[test]
fn all_primitive_gradients_match_finite_differences() {
    type BuildFn = fn(&mut Graph, Tensor) -> crate::error::Result<Tensor>;
    let cases: Vec<(&str, Vec<usize>, BuildFn)> = vec![
        ("add", vec![2, 3], |g, t| {
            let o = g.constant(vec![2, 3], vec![0.3; 6])?;
            g.add(t, o)
        }),
        ("sub", vec![2, 3], |g, t| {
            let o = g.constant(vec![2, 3], vec![0.4; 6])?;
            g.sub(t, o)
        }),
        ("mul", vec![2, 3], |g, t| {
            let o = g.constant(vec![2, 3], vec![1.5, -0.5, 2.0, 0.7, -1.2, 0.9])?;
            g.mul(t, o)
        }),
        ("scalar_mul", vec![2, 2], |g, t| g.scalar_mul(t, -2.5)),
        ("bias_add", vec![2, 3], |g, t| {
            let b = g.constant(vec![3], vec![0.1, -0.2, 0.3])?;
            g.bias_add(t, b)
        }),
        ("matmul_lhs", vec![2, 3], |g, t| {
            let b = g.constant(vec![3, 2], vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1])?;
            g.matmul(t, b)
        }),
        ("transpose", vec![2, 3], |g, t| g.transpose_last_two(t)),
        ("reshape", vec![2, 3], |g, t| g.reshape(t, vec![3, 2])),
        ("slice_last", vec![2, 4], |g, t| g.slice_last(t, 1, 2)),
        ("relu", vec![2, 3], |g, t| g.relu(t)),
        ("elu", vec![2, 3], |g, t| g.elu(t)),
        ("softmax", vec![2, 3], |g, t| g.softmax_rows(t)),
        ("layer_norm", vec![2, 4], |g, t| {
            let gamma = g.constant(vec![4], vec![1.2, 0.8, -0.5, 1.0])?;
            let beta = g.constant(vec![4], vec![0.1, 0.0, -0.3, 0.2])?;
            g.layer_norm(t, gamma, beta, 1e-5)
        }),
        ("mean", vec![2, 3], |g, t| g.mean_all(t)),
        ("variance", vec![2, 3], |g, t| g.variance_all(t)),
        ("l2_norm", vec![2, 3], |g, t| g.l2_norm(t)),
        ("channel_mean", vec![2, 2, 3], |g, t| g.channel_mean(t)),
        ("channel_variance", vec![2, 2, 3], |g, t| g.channel_variance(t)),
        ("clamp", vec![2, 3], |g, t| g.clamp(t, -1.0, 1.0)),
        ("log_eps", vec![2, 3], |g, t| {
            // keep inputs positive: square them first
            let sq = g.mul(t, t)?;
            let half = g.constant(vec![2, 3], vec![0.5; 6])?;
            let pos = g.add(sq, half)?;
            g.log_eps(pos, 1e-12)
        }),
        ("normalize_rows_l1", vec![2, 3], |g, t| {
            let sq = g.mul(t, t)?;
            g.normalize_rows_l1(sq, 1e-6)
        }),
        ("concat", vec![2, 2], |g, t| {
            let o = g.constant(vec![2, 3], vec![0.2; 6])?;
            g.concat(&[t, o], 1)
        }),
        ("conv_standard", vec![2, 2, 4], |g, t| {
            let k = g.constant(vec![2, 2, 1, 3], vec![0.5, -0.3, 0.8, 0.2, 1.1, -0.6, 0.4, 0.9, -1.2, 0.1, 0.7, -0.4])?;
            g.conv2d(t, k, ConvKind::Standard, (0, 1))
        }),
        ("conv_depthwise", vec![2, 2, 4], |g, t| {
            let k = g.constant(vec![2, 2, 2, 1], vec![0.5, -0.3, 0.8, 0.2, 1.1, -0.6, 0.4, 0.9])?;
            g.conv2d(t, k, ConvKind::Depthwise, (0, 0))
        }),
        ("conv_pointwise", vec![2, 2, 3], |g, t| {
            let k = g.constant(vec![3, 2, 1, 1], vec![0.5, -0.3, 0.8, 0.2, 1.1, -0.6])?;
            g.conv2d(t, k, ConvKind::Pointwise, (0, 0))
        }),
    ];

    let mut rng = Rng::new(2024);
    for (name, shape, build) in cases {
        let numel: usize = shape.iter().product();
        // keep away from relu/clamp kinks
        let theta: Vec<f64> = (0..numel)
            .map(|_| {
                let v = rng.uniform(0.2, 1.5);
                if rng.next_f64() < 0.5 {
                    -v
                } else {
                    v
                }
            })
            .collect();

        let eval = |x: &[f64]| -> crate::error::Result<f64> {
            let mut g = Graph::new();
            let t = g.param(shape.clone(), x.to_vec())?;
            let y = build(&mut g, t)?;
            // square before reducing so the scalar depends on every output
            let sq = g.mul(y, y)?;
            let s = g.sum_all(sq)?;
            Ok(g.scalar_value(s))
        };

        let mut g = Graph::new();
        let t = g.param(shape.clone(), theta.clone()).unwrap();
        let y = build(&mut g, t).unwrap();
        let sq = g.mul(y, y).unwrap();
        let s = g.sum_all(sq).unwrap();
        g.backward(s).unwrap();
        let analytic = g.grad(t).unwrap().to_vec();

        let err = grad_check(eval, &theta, &analytic, DEFAULT_FD_EPS).unwrap();
        assert!(err < 1e-6, "op `{name}`: max rel error {err}");
    }
}

// ---- graph mechanics ----------------------------------------------------------

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = Rng::new(55);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let mut g = Graph::new();
        let tx = g.param(vec![2, 3], x).unwrap();
        let tw = g.param(vec![3, 3], w).unwrap();
        let h = g.matmul(tx, tw).unwrap();
        let r = g.relu(h).unwrap();
        let s = g.softmax_rows(r).unwrap();
        let l = g.l2_norm(s).unwrap();
        g.backward(l).unwrap();
        (
            g.data(l).to_vec(),
            g.grad(tx).unwrap().to_vec(),
            g.grad(tw).unwrap().to_vec(),
        )
    };
    let a = run();
    let b = run();
    // bit-identical forward values and gradients
    assert_eq!(a, b);
}

#[test]
fn repeated_backward_same_root_is_bit_identical() {
    let mut g = Graph::new();
    let x = g.param(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let y = g.mul(x, x).unwrap();
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    let g1 = g.grad(x).unwrap().to_vec();
    g.backward(s).unwrap();
    let g2 = g.grad(x).unwrap().to_vec();
    assert_eq!(g1, g2);
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(vec![2, 2], vec![1.0; 4]).unwrap();
    assert!(g.backward(x).is_err());
}

#[test]
fn grad_flows_through_shared_subexpression() {
    // f = (x + x) . 1 -> df/dx = 2
    let mut g = Graph::new();
    let x = g.param(vec![2], vec![1.0, 2.0]).unwrap();
    let two_x = g.add(x, x).unwrap();
    let s = g.sum_all(two_x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn non_finite_forward_is_rejected() {
    let mut g = Graph::new();
    assert!(g.constant(vec![2], vec![1.0, f64::NAN]).is_err());
    let x = g.constant(vec![1], vec![1e308]).unwrap();
    let y = g.scalar_mul(x, 10.0);
    assert!(matches!(y, Err(crate::error::Error::NonFinite { .. })));
}
