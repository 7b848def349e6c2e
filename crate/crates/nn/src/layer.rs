use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Plain affine map over the whole flattened input.
    Dense,
    /// Block weight matrix with `U` on the diagonal and `V` off it.
    Equivariant,
    /// Output layer with one block `A` repeated across all input blocks.
    Invariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    /// `0.5 * (tanh(x) + 1)`, bounded to `(0, 1)`.
    ScaledTanh,
}

impl Activation {
    pub(crate) fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
            Activation::ScaledTanh => T::of(0.5) * (z.tanh() + T::one()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    pub(crate) fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::ScaledTanh => T::of(2.0) * y * (T::one() - y),
        }
    }
}

/// Shape and kind of one weight layer.
///
/// For `Dense` layers `blocks` is 1 and the widths are the full input and
/// output widths. For the shared kinds `in_width`/`out_width` are per-block
/// widths and the input carries `blocks` of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub blocks: usize,
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(in_width: usize, out_width: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            blocks: 1,
            in_width,
            out_width,
            activation,
        }
    }

    pub fn equivariant(blocks: usize, in_width: usize, out_width: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Equivariant,
            blocks,
            in_width,
            out_width,
            activation,
        }
    }

    pub fn invariant(blocks: usize, in_width: usize, out_width: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Invariant,
            blocks,
            in_width,
            out_width,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.blocks * self.in_width
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            LayerKind::Dense | LayerKind::Invariant => self.out_width,
            LayerKind::Equivariant => self.blocks * self.out_width,
        }
    }

    /// Free weight scalars (the `U`/`V` pair counts twice).
    pub fn weight_count(&self) -> usize {
        let block = self.in_width * self.out_width;
        match self.kind {
            LayerKind::Dense | LayerKind::Invariant => block,
            LayerKind::Equivariant => 2 * block,
        }
    }

    pub fn bias_count(&self) -> usize {
        self.out_width
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub(crate) fn fan_in(&self) -> usize {
        self.input_dim()
    }

    /// Weight block `i` of this layer's parameter slice, shaped `out x in`.
    pub(crate) fn block<'a, T: Scalar>(&self, params: &'a [T], i: usize) -> ArrayView2<'a, T> {
        let len = self.in_width * self.out_width;
        ArrayView2::from_shape((self.out_width, self.in_width), &params[i * len..(i + 1) * len])
            .expect("layer layout")
    }

    pub(crate) fn bias<'a, T: Scalar>(&self, params: &'a [T]) -> ArrayView1<'a, T> {
        let start = self.weight_count();
        ArrayView1::from(&params[start..start + self.out_width])
    }

    /// Affine part of the layer: returns the pre-activation for a batch.
    pub(crate) fn affine<T: Scalar>(&self, params: &[T], x: ArrayView2<T>) -> Array2<T> {
        let batch = x.nrows();
        let bias = self.bias(params);
        match self.kind {
            LayerKind::Dense => {
                let w = self.block(params, 0);
                x.dot(&w.t()) + &bias
            }
            LayerKind::Equivariant => {
                let n = self.blocks;
                let u = self.block(params, 0);
                let v = self.block(params, 1);
                let diff = &u - &v;
                let rows = as_block_rows(x, n, self.in_width);
                let sums = block_sums(x, n, self.in_width);
                let own = rows.dot(&diff.t());
                let shared = sums.dot(&v.t()) + &bias;
                let mut z = own
                    .into_shape_with_order((batch, n, self.out_width))
                    .expect("contiguous");
                z += &shared.insert_axis(Axis(1));
                z.into_shape_with_order((batch, n * self.out_width))
                    .expect("contiguous")
            }
            LayerKind::Invariant => {
                let a = self.block(params, 0);
                let sums = block_sums(x, self.blocks, self.in_width);
                sums.dot(&a.t()) + &bias
            }
        }
    }

    /// Backpropagates `dz` (gradient w.r.t. the pre-activation) through the
    /// affine part. Parameter gradients are added into `grads`; the input
    /// gradient is returned.
    pub(crate) fn affine_backward<T: Scalar>(
        &self,
        params: &[T],
        x: ArrayView2<T>,
        dz: ArrayView2<T>,
        grads: &mut [T],
    ) -> Array2<T> {
        let batch = x.nrows();
        let block_len = self.in_width * self.out_width;
        let wc = self.weight_count();
        match self.kind {
            LayerKind::Dense => {
                let w = self.block(params, 0);
                let dw = dz.t().dot(&x);
                add_into(&mut grads[..block_len], dw.view());
                add_into(&mut grads[wc..], dz.sum_axis(Axis(0)).view());
                dz.dot(&w)
            }
            LayerKind::Equivariant => {
                let n = self.blocks;
                let u = self.block(params, 0);
                let v = self.block(params, 1);
                let rows = as_block_rows(x, n, self.in_width);
                let sums = block_sums(x, n, self.in_width);
                let dz_rows = as_block_rows(dz, n, self.out_width);
                let dz_sums = block_sums(dz, n, self.out_width);

                // y_i = (U - V) x_i + V * sum_j x_j + P
                let own = dz_rows.t().dot(&rows);
                let cross = dz_sums.t().dot(&sums);
                add_into(&mut grads[..block_len], own.view());
                add_into(&mut grads[block_len..2 * block_len], (&cross - &own).view());
                add_into(&mut grads[wc..], dz_rows.sum_axis(Axis(0)).view());

                let diff = &u - &v;
                let dx_own = dz_rows.dot(&diff);
                let dx_shared = dz_sums.dot(&v);
                let mut dx = dx_own
                    .into_shape_with_order((batch, n, self.in_width))
                    .expect("contiguous");
                dx += &dx_shared.insert_axis(Axis(1));
                dx.into_shape_with_order((batch, n * self.in_width))
                    .expect("contiguous")
            }
            LayerKind::Invariant => {
                let a = self.block(params, 0);
                let sums = block_sums(x, self.blocks, self.in_width);
                add_into(&mut grads[..block_len], dz.t().dot(&sums).view());
                add_into(&mut grads[wc..], dz.sum_axis(Axis(0)).view());
                let ds = dz.dot(&a);
                let mut dx = Array2::zeros((batch, self.blocks * self.in_width));
                for b in 0..self.blocks {
                    dx.slice_mut(s![.., b * self.in_width..(b + 1) * self.in_width])
                        .assign(&ds);
                }
                dx
            }
        }
    }

    /// Full dense weight matrix (`output_dim x input_dim`) this layer acts as.
    pub fn materialize_weight<T: Scalar>(&self, params: &[T]) -> Array2<T> {
        let (o, i) = (self.out_width, self.in_width);
        match self.kind {
            LayerKind::Dense => self.block(params, 0).to_owned(),
            LayerKind::Equivariant => {
                let n = self.blocks;
                let mut w = Array2::zeros((n * o, n * i));
                for r in 0..n {
                    for c in 0..n {
                        let blk = if r == c { self.block(params, 0) } else { self.block(params, 1) };
                        w.slice_mut(s![r * o..(r + 1) * o, c * i..(c + 1) * i]).assign(&blk);
                    }
                }
                w
            }
            LayerKind::Invariant => {
                let mut w = Array2::zeros((o, self.blocks * i));
                for c in 0..self.blocks {
                    w.slice_mut(s![.., c * i..(c + 1) * i])
                        .assign(&self.block(params, 0));
                }
                w
            }
        }
    }

    pub fn materialize_bias<T: Scalar>(&self, params: &[T]) -> Array1<T> {
        let p = self.bias(params);
        match self.kind {
            LayerKind::Dense | LayerKind::Invariant => p.to_owned(),
            LayerKind::Equivariant => {
                Array1::from_iter((0..self.blocks).flat_map(|_| p.iter().copied()))
            }
        }
    }
}

/// `[batch, n*w]` viewed as `[batch*n, w]`.
fn as_block_rows<T: Scalar>(x: ArrayView2<T>, n: usize, w: usize) -> Array2<T> {
    let batch = x.nrows();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((batch * n, w))
        .expect("contiguous")
}

/// Sum over the `n` blocks of each row: `[batch, n*w] -> [batch, w]`.
/// Sum over blocks, accumulated in f64 so that in f32 the result does not
/// depend on the block order.
fn block_sums<T: Scalar>(x: ArrayView2<T>, n: usize, w: usize) -> Array2<T> {
    let batch = x.nrows();
    let mut acc = Array2::<f64>::zeros((batch, w));
    for b in 0..n {
        acc.zip_mut_with(&x.slice(s![.., b * w..(b + 1) * w]), |a, v| *a += v.as_f64());
    }
    acc.mapv(T::of)
}

fn add_into<T: Scalar, D: ndarray::Dimension>(dst: &mut [T], src: ndarray::ArrayView<T, D>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *d + *s;
    }
}
