use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;

use crate::error::NnError;
use crate::layer::{LayerKind, LayerSpec};
use crate::scalar::Scalar;
use crate::Result;

/// Gradient of a loss w.r.t. every free parameter, in the network's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<T>);

impl<T: Scalar> Gradients<T> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    outputs: Vec<Array2<T>>,
}

/// A feed-forward stack of layers whose free parameters live in one flat
/// vector. Layer `i` owns `params[offsets[i]..offsets[i + 1]]`, laid out as
/// its weight blocks (row-major, `out x in`) followed by its bias.
#[derive(Debug, Clone)]
pub struct Network<T> {
    specs: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<T>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with uniform fan-in initialization on every free
    /// block: entries drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let offsets = validate(&specs)?;
        let mut params = Vec::with_capacity(*offsets.last().unwrap());
        for spec in &specs {
            let bound = 1.0 / (spec.fan_in() as f64).sqrt();
            for _ in 0..spec.param_count() {
                params.push(T::of(rng.random_range(-bound..bound)));
            }
        }
        Ok(Self {
            specs,
            offsets,
            params,
            cache: None,
        })
    }

    pub fn from_params(specs: Vec<LayerSpec>, params: Vec<T>) -> Result<Self> {
        let offsets = validate(&specs)?;
        let expected = *offsets.last().unwrap();
        if params.len() != expected {
            return Err(NnError::ParamLength {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            specs,
            offsets,
            params,
            cache: None,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.specs.last().unwrap().output_dim()
    }

    pub fn layer_params(&self, index: usize) -> &[T] {
        &self.params[self.offsets[index]..self.offsets[index + 1]]
    }

    /// Inference without touching the backward cache.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (i, spec) in self.specs.iter().enumerate() {
            let z = spec.affine(self.layer_params(i), h.view());
            h = z.mapv(|v| spec.activation.apply(v));
        }
        Ok(h)
    }

    /// Forward pass that records what `backward` needs.
    pub fn forward(&mut self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.specs.len()),
            pre: Vec::with_capacity(self.specs.len()),
            outputs: Vec::with_capacity(self.specs.len()),
        };
        let mut h = x.to_owned();
        for (i, spec) in self.specs.iter().enumerate() {
            let z = spec.affine(self.layer_params(i), h.view());
            let y = z.mapv(|v| spec.activation.apply(v));
            cache.inputs.push(h);
            cache.pre.push(z);
            h = y.clone();
            cache.outputs.push(y);
        }
        self.cache = Some(cache);
        Ok(h)
    }

    /// Backward pass from `upstream = dL/d(output)` of the cached forward.
    /// Returns parameter gradients and `dL/d(input)`.
    pub fn backward(&self, upstream: ArrayView2<T>) -> Result<(Gradients<T>, Array2<T>)> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let out = cache.outputs.last().unwrap();
        if upstream.dim() != out.dim() {
            return Err(NnError::UpstreamShape {
                expected: out.dim(),
                got: upstream.dim(),
            });
        }
        let mut grads = Gradients::zeros(self.params.len());
        let mut delta = upstream.to_owned();
        for i in (0..self.specs.len()).rev() {
            let spec = &self.specs[i];
            let mut dz = Array2::zeros(delta.dim());
            Zip::from(&mut dz)
                .and(&delta)
                .and(&cache.pre[i])
                .and(&cache.outputs[i])
                .for_each(|d, &g, &z, &y| *d = g * spec.activation.derivative(z, y));
            let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
            delta = spec.affine_backward(
                &self.params[lo..hi],
                cache.inputs[i].view(),
                dz.view(),
                &mut grads.0[lo..hi],
            );
        }
        Ok((grads, delta))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// `self <- omega * source + (1 - omega) * self`, scalar by scalar.
    pub fn soft_update_from(&mut self, source: &Network<T>, omega: T) -> Result<()> {
        if source.specs != self.specs {
            return Err(NnError::ParamLength {
                expected: self.params.len(),
                got: source.params.len(),
            });
        }
        let keep = T::one() - omega;
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t = omega * s + keep * *t;
        }
        Ok(())
    }

    /// Dense weight matrix and bias of layer `index`, tied blocks expanded.
    pub fn materialize(&self, index: usize) -> (Array2<T>, Array1<T>) {
        let spec = &self.specs[index];
        let p = self.layer_params(index);
        (spec.materialize_weight(p), spec.materialize_bias(p))
    }

    /// Equivalent network made only of dense layers.
    pub fn densified(&self) -> Network<T> {
        let mut specs = Vec::with_capacity(self.specs.len());
        let mut params = Vec::with_capacity(self.params.len());
        for (i, spec) in self.specs.iter().enumerate() {
            let (w, b) = self.materialize(i);
            specs.push(LayerSpec::dense(w.ncols(), w.nrows(), spec.activation));
            params.extend(w.iter().copied());
            params.extend(b.iter().copied());
        }
        Network::from_params(specs, params).expect("dense layout")
    }

    /// Folds gradients of a [`Network::densified`] copy back onto the free
    /// blocks by summing over every tied position.
    pub fn fold_dense_gradients(&self, dense: &Gradients<T>) -> Gradients<T> {
        let mut out = Gradients::zeros(self.params.len());
        let mut cursor = 0;
        for (i, spec) in self.specs.iter().enumerate() {
            let (o, ins) = (spec.out_width, spec.in_width);
            let rows = spec.output_dim();
            let cols = spec.input_dim();
            let dw = ArrayView2::from_shape((rows, cols), &dense.0[cursor..cursor + rows * cols])
                .expect("dense layout");
            let db = &dense.0[cursor + rows * cols..cursor + rows * cols + rows];
            cursor += rows * cols + rows;
            let g = &mut out.0[self.offsets[i]..self.offsets[i + 1]];
            let wc = spec.weight_count();
            let blk = o * ins;
            match spec.kind {
                LayerKind::Dense => {
                    for (d, s) in g[..blk].iter_mut().zip(dw.iter()) {
                        *d = *s;
                    }
                    g[wc..].copy_from_slice(db);
                }
                LayerKind::Equivariant => {
                    for r in 0..spec.blocks {
                        for c in 0..spec.blocks {
                            let target = if r == c { 0 } else { blk };
                            for a in 0..o {
                                for b in 0..ins {
                                    let idx = target + a * ins + b;
                                    g[idx] = g[idx] + dw[[r * o + a, c * ins + b]];
                                }
                            }
                        }
                        for a in 0..o {
                            g[wc + a] = g[wc + a] + db[r * o + a];
                        }
                    }
                }
                LayerKind::Invariant => {
                    for c in 0..spec.blocks {
                        for a in 0..o {
                            for b in 0..ins {
                                g[a * ins + b] = g[a * ins + b] + dw[[a, c * ins + b]];
                            }
                        }
                    }
                    g[wc..].copy_from_slice(db);
                }
            }
        }
        out
    }

    /// Same layers, different float type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            specs: self.specs.clone(),
            offsets: self.offsets.clone(),
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
            cache: None,
        }
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::InputWidth {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }
}

fn validate(specs: &[LayerSpec]) -> Result<Vec<usize>> {
    if specs.is_empty() {
        return Err(NnError::InvalidLayer {
            index: 0,
            reason: "network has no layers".into(),
        });
    }
    let mut offsets = vec![0];
    for (i, spec) in specs.iter().enumerate() {
        if spec.blocks == 0 || spec.in_width == 0 || spec.out_width == 0 {
            return Err(NnError::InvalidLayer {
                index: i,
                reason: "zero-sized layer".into(),
            });
        }
        if spec.kind == LayerKind::Dense && spec.blocks != 1 {
            return Err(NnError::InvalidLayer {
                index: i,
                reason: "dense layers carry a single block".into(),
            });
        }
        if i > 0 {
            let prev = &specs[i - 1];
            if prev.kind == LayerKind::Invariant {
                return Err(NnError::InvalidLayer {
                    index: i,
                    reason: "an invariant layer must be the last layer".into(),
                });
            }
            if prev.output_dim() != spec.input_dim() {
                return Err(NnError::InvalidLayer {
                    index: i,
                    reason: format!(
                        "input width {} does not match previous output {}",
                        spec.input_dim(),
                        prev.output_dim()
                    ),
                });
            }
            if spec.kind != LayerKind::Dense && prev.kind == LayerKind::Equivariant && prev.blocks != spec.blocks {
                return Err(NnError::InvalidLayer {
                    index: i,
                    reason: "block count changes between shared layers".into(),
                });
            }
        }
        offsets.push(offsets[i] + spec.param_count());
    }
    Ok(offsets)
}
