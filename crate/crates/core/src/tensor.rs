//! Dense row-major tensors and the three linear kernels shared by the ANN
//! reference path and the spiking current-injection path.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor with an explicit shape. Data is row-major and every value is
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(
                "tensor",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from parts already known to be consistent and finite.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn vector(data: Vec<S>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Self::from_parts(shape, self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("left {:?} vs right {:?}", self.shape, other.shape),
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign_scaled(&mut self, other: &Self, k: S) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "accumulate",
                format!("accumulator {:?} vs input {:?}", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_value(&self) -> S {
        self.data.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        Ok(self.sub(other)?.max_abs())
    }

    /// True when every entry is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == S::zero() || v == S::one())
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| !v.is_zero()).count()
    }
}

/// 2-D cross-correlation with zero padding over a `[Cin, H, W]` input and a
/// `[Cout, Cin, kH, kW]` kernel.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let out_shape = conv2d_output_shape(input.shape(), kernel.shape(), stride, padding)?;
    let (cout, cin, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
    if bias.shape() != [cout] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?} does not match {cout} output channels", bias.shape()),
        ));
    }
    let (h, w) = (input.shape[1], input.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let k = kernel.data();
    let mut out = Vec::with_capacity(cout * oh * ow);
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.data[co];
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = (ci * h + iy as usize) * w + ix as usize;
                            let ki = ((co * cin + ci) * kh + ky) * kw + kx;
                            acc += k[ki] * x[xi];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Output shape of [`conv2d`], or the dimension that makes the call invalid.
pub fn conv2d_output_shape(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Vec<usize>> {
    if input.len() != 3 {
        return Err(Error::shape(
            "conv2d",
            format!("input must be [Cin,H,W], got {input:?}"),
        ));
    }
    if kernel.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be [Cout,Cin,kH,kW], got {kernel:?}"),
        ));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("conv2d stride must be >= 1".into()));
    }
    if input[0] != kernel[1] {
        return Err(Error::shape(
            "conv2d",
            format!("input channels {} != kernel input channels {}", input[0], kernel[1]),
        ));
    }
    let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
    if kernel[2] > h {
        return Err(Error::shape(
            "conv2d",
            format!("kernel height {} exceeds padded input height {h}", kernel[2]),
        ));
    }
    if kernel[3] > w {
        return Err(Error::shape(
            "conv2d",
            format!("kernel width {} exceeds padded input width {w}", kernel[3]),
        ));
    }
    Ok(vec![
        kernel[0],
        (h - kernel[2]) / stride + 1,
        (w - kernel[3]) / stride + 1,
    ])
}

/// `out[i] = sum_j weights[i, j] * input[j] + bias[i]`.
///
/// The input is read in flat row-major order, so a `[C, H, W]` activation map
/// feeds a fully-connected layer without an explicit flatten.
pub fn fully_connected<S: Scalar>(input: &Tensor<S>, weights: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, n) = fc_dims(weights.shape())?;
    if input.len() != n {
        return Err(Error::shape(
            "fully_connected",
            format!("input length {} != weight columns {n}", input.len()),
        ));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(
            "fully_connected",
            format!("bias shape {:?} does not match {m} weight rows", bias.shape()),
        ));
    }
    let x = input.data();
    let out = weights
        .data
        .chunks_exact(n)
        .zip(&bias.data)
        .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&wij, &xj)| acc + wij * xj))
        .collect();
    Ok(Tensor::from_parts(vec![m], out))
}

pub(crate) fn fc_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::shape(
            "fully_connected",
            format!("weights must be [M,N], got {shape:?}"),
        )),
    }
}

/// Average pooling over square windows, no padding, floor semantics at the
/// trailing edge.
pub fn avg_pool2d<S: Scalar>(input: &Tensor<S>, window: usize, stride: usize) -> Result<Tensor<S>> {
    let out_shape = avg_pool2d_output_shape(input.shape(), window, stride)?;
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let area = S::from_count(window * window);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = S::zero();
                for dy in 0..window {
                    let row = (ch * h + oy * stride + dy) * w;
                    for dx in 0..window {
                        acc += x[row + ox * stride + dx];
                    }
                }
                out.push(acc / area);
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn avg_pool2d_output_shape(input: &[usize], window: usize, stride: usize) -> Result<Vec<usize>> {
    if input.len() != 3 {
        return Err(Error::shape(
            "avg_pool2d",
            format!("input must be [C,H,W], got {input:?}"),
        ));
    }
    if window == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "avg_pool2d window and stride must be >= 1".into(),
        ));
    }
    if window > input[1] || window > input[2] {
        return Err(Error::shape(
            "avg_pool2d",
            format!("window {window} larger than input {}x{}", input[1], input[2]),
        ));
    }
    Ok(vec![
        input[0],
        (input[1] - window) / stride + 1,
        (input[2] - window) / stride + 1,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            Tensor::<f64>::new(vec![2], vec![1.0]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let out = conv2d(
            &t(&[1, 1, 1], &[5.0]),
            &t(&[1, 1, 1, 1], &[1.0]),
            &t(&[1], &[0.0]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let kernel = t(&[2, 1, 2, 2], &[0.3, -1.0, 2.0, 0.5, 1.0, 1.0, -4.0, 0.25]);
        let bias = t(&[2], &[0.7, -0.2]);
        let out = conv2d(&Tensor::zeros(&[1, 3, 3]), &kernel, &bias, 1, 1).unwrap();
        assert_eq!(out.shape(), &[2, 4, 4]);
        for (i, v) in out.data().iter().enumerate() {
            assert_eq!(*v, if i < 16 { 0.7 } else { -0.2 });
        }
    }

    #[test]
    fn conv_ones_sum_to_nine() {
        let out = conv2d(
            &Tensor::filled(&[1, 3, 3], 1.0),
            &Tensor::filled(&[1, 1, 3, 3], 1.0),
            &t(&[1], &[0.0]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_names_offending_dimension() {
        let err = conv2d(
            &Tensor::<f64>::zeros(&[3, 4, 4]),
            &Tensor::zeros(&[1, 2, 3, 3]),
            &Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("input channels 3"), "{err}");
        let err = conv2d(
            &Tensor::<f64>::zeros(&[1, 2, 2]),
            &Tensor::zeros(&[1, 1, 3, 3]),
            &Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("kernel height"), "{err}");
    }

    #[test]
    fn conv_stride_and_padding_shape() {
        let shape = conv2d_output_shape(&[2, 7, 5], &[4, 2, 3, 3], 2, 1).unwrap();
        assert_eq!(shape, vec![4, 4, 3]);
    }

    #[test]
    fn fc_examples() {
        let out = fully_connected(
            &t(&[3], &[0.6, 0.4, 0.4]),
            &t(&[1, 3], &[1.0, 0.5, -1.0]),
            &t(&[1], &[0.0]),
        )
        .unwrap();
        assert!((out.data()[0] - 0.4).abs() < 1e-12);

        let x = t(&[3], &[0.1, -2.0, 7.5]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            fully_connected(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(),
            x.data()
        );

        let out = fully_connected(
            &t(&[2], &[1.0, 2.0]),
            &t(&[2, 2], &[2.0, 0.0, 0.0, 3.0]),
            &t(&[2], &[1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn fc_dimension_mismatch() {
        let err = fully_connected(
            &Tensor::<f64>::zeros(&[4]),
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[2]),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::Shape {
                op: "fully_connected",
                ..
            }
        ));
    }

    #[test]
    fn pool_examples() {
        let out = avg_pool2d(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), 2, 2).unwrap();
        assert_eq!(out.data(), &[2.5]);
        let one = t(&[1, 1, 1], &[3.25]);
        assert_eq!(avg_pool2d(&one, 1, 1).unwrap(), one);
        let c = Tensor::filled(&[2, 5, 4], 0.75);
        let out = avg_pool2d(&c, 2, 1).unwrap();
        assert_eq!(out.shape(), &[2, 4, 3]);
        assert!(out.data().iter().all(|&v| v == 0.75));
        assert!(avg_pool2d(&Tensor::<f64>::zeros(&[1, 2, 2]), 3, 1).is_err());
    }

    fn reference_fc(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut out = vec![0.0; b.len()];
        for i in 0..b.len() {
            let mut s = 0.0;
            for j in 0..n {
                s += w[i * n + j] * x[j];
            }
            out[i] = s + b[i];
        }
        out
    }

    proptest! {
        #[test]
        fn conv_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 2 * 5 * 4),
            y in prop::collection::vec(-1.0f64..1.0, 2 * 5 * 4),
            k in prop::collection::vec(-1.0f64..1.0, 3 * 2 * 3 * 3),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            stride in 1usize..3,
            padding in 0usize..2,
        ) {
            let xs = t(&[2, 5, 4], &x);
            let ys = t(&[2, 5, 4], &y);
            let kern = t(&[3, 2, 3, 3], &k);
            let zero = Tensor::zeros(&[3]);
            let combo = xs.scale(a).add(&ys.scale(b)).unwrap();
            let lhs = conv2d(&combo, &kern, &zero, stride, padding).unwrap();
            let rhs = conv2d(&xs, &kern, &zero, stride, padding).unwrap().scale(a)
                .add(&conv2d(&ys, &kern, &zero, stride, padding).unwrap().scale(b)).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((l - r).abs() <= 1e-6 * (1.0 + r.abs()));
            }
        }

        #[test]
        fn pool_commutes_with_scaling(
            x in prop::collection::vec(-4.0f64..4.0, 3 * 4 * 6),
            k in prop::sample::select(vec![0.5f64, 2.0, -1.0, 0.25, 4.0]),
        ) {
            // Power-of-two scale factors keep both orders bit-exact.
            let xs = t(&[3, 4, 6], &x);
            let lhs = avg_pool2d(&xs.scale(k), 2, 2).unwrap();
            let rhs = avg_pool2d(&xs, 2, 2).unwrap().scale(k);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn fc_matches_loop_oracle(
            (n, m, x, w, b) in (1usize..8, 1usize..8).prop_flat_map(|(n, m)| (
                Just(n), Just(m),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-3.0f64..3.0, n * m),
                prop::collection::vec(-3.0f64..3.0, m),
            ))
        ) {
            let out = fully_connected(&t(&[n], &x), &t(&[m, n], &w), &t(&[m], &b)).unwrap();
            let expect = reference_fc(&x, &w, &b);
            for (o, e) in out.data().iter().zip(&expect) {
                prop_assert!((o - e).abs() <= 1e-6);
            }
        }
    }
}
