use crate::error::{Error, Result};
use crate::nn::ops::{affine, apply_activation, col2im, conv2d_pre, maxpool_forward, token_ids, ConvGeom};
use crate::nn::{loss_and_grad, Activation, LayerKind, LayerSpec, LossKind};
use crate::rng::Rng;
use crate::tensor::{gemm, glorot_uniform_init, Scalar, Tensor};

/// A layer with concrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar = f32> {
    pub spec: LayerSpec,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(spec: LayerSpec, kernel: Option<Tensor<T>>, bias: Option<Tensor<T>>) -> Result<Self> {
        let wants_kernel = spec.has_params();
        let wants_bias = spec.is_maskable();
        if kernel.is_some() != wants_kernel || bias.is_some() != wants_bias {
            return Err(Error::State(format!(
                "{:?} layer given kernel={} bias={}",
                spec.kind,
                kernel.is_some(),
                bias.is_some()
            )));
        }
        Ok(Self { spec, kernel, bias })
    }

    /// Glorot-uniform kernel and zero bias for the given per-sample input.
    /// Embedding tables draw from `[-0.05, 0.05]`.
    pub fn init(spec: LayerSpec, input: &[usize], rng: &mut Rng) -> Result<Self> {
        let (kernel, bias) = match spec.param_dims(input)? {
            None => (None, None),
            Some((kdims, bdims)) => {
                let kernel = if matches!(spec.kind, LayerKind::Embedding { .. }) {
                    let n = kdims.iter().product();
                    Tensor::new(kdims, (0..n).map(|_| T::narrow(rng.uniform(-0.05, 0.05))).collect())?
                } else {
                    glorot_uniform_init(&kdims, rng)?
                };
                let bias = bdims.map(Tensor::zeros).transpose()?;
                (Some(kernel), bias)
            }
        };
        Self::new(spec, kernel, bias)
    }

    pub fn param_count(&self) -> usize {
        self.kernel.as_ref().map_or(0, Tensor::len) + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

/// Per-parameter gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad<T: Scalar = f32> {
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Gradients for every layer, mirroring parameter shapes, plus the gradient
/// with respect to the network input when it was requested and defined.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T: Scalar = f32> {
    pub layers: Vec<ParamGrad<T>>,
    pub input: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
enum Aux<T: Scalar> {
    None,
    Conv { cols: Tensor<T>, geom: ConvGeom },
    Pool { argmax: Vec<usize> },
    Tokens(Vec<usize>),
}

/// Activations recorded by [`Network::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace<T: Scalar = f32> {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

impl<T: Scalar> Trace<T> {
    /// Final-layer output before any final softmax.
    pub fn logits(&self) -> &Tensor<T> {
        self.activations.last().expect("trace holds the input")
    }

    /// Which non-smooth branch every ReLU unit and pooling window took.
    /// Two traces with equal patterns sit on the same smooth piece.
    pub fn branch_pattern(&self, net: &Network<T>) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, layer) in net.layers.iter().enumerate() {
            if layer.spec.activation == Activation::Relu {
                if let Some(a) = self.activations.get(i + 1) {
                    out.extend(a.data().iter().map(|&v| usize::from(v > T::ZERO)));
                }
            }
            if let Some(Aux::Pool { argmax }) = self.aux.get(i) {
                out.extend_from_slice(argmax);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::State("network needs at least one layer".into()));
        }
        let last = layers.len() - 1;
        if let Some(i) = layers[..last]
            .iter()
            .position(|l| l.spec.activation == Activation::Softmax)
        {
            return Err(Error::State(format!(
                "softmax activation on layer {i}; only the final layer may use it"
            )));
        }
        Ok(Self { layers })
    }

    /// Freshly initialized network for per-sample input extents `input`.
    pub fn init(specs: &[LayerSpec], input: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut dims = input.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = Layer::init(spec.clone(), &dims, rng)?;
            dims = spec.output_dims(&dims)?;
            layers.push(layer);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    kernel: l.kernel.as_ref().map(Tensor::cast),
                    bias: l.bias.as_ref().map(Tensor::cast),
                })
                .collect(),
        }
    }

    fn step(&self, i: usize, x: &Tensor<T>, keep_aux: bool) -> Result<(Tensor<T>, Aux<T>)> {
        let layer = &self.layers[i];
        let act = match layer.spec.activation {
            // Final softmax is fused into the loss; `forward` applies it.
            Activation::Softmax => Activation::Identity,
            a => a,
        };
        let kernel = || layer.kernel.as_ref().ok_or_else(|| Error::State(format!("layer {i} has no kernel")));
        let bias = || layer.bias.as_ref().ok_or_else(|| Error::State(format!("layer {i} has no bias")));
        match &layer.spec.kind {
            LayerKind::Dense { .. } => {
                let mut z = affine(x, kernel()?, bias()?)?;
                apply_activation(&mut z, act)?;
                Ok((z, Aux::None))
            }
            LayerKind::Conv2d { padding, .. } => {
                let (mut z, cols, geom) = conv2d_pre(x, kernel()?, bias()?, *padding)?;
                apply_activation(&mut z, act)?;
                let aux = if keep_aux {
                    let rows = geom.batch * geom.oh * geom.ow;
                    let patch = cols.len() / rows;
                    Aux::Conv {
                        cols: Tensor::new(vec![rows, patch], cols)?,
                        geom,
                    }
                } else {
                    Aux::None
                };
                Ok((z, aux))
            }
            LayerKind::MaxPool2 => {
                let p = maxpool_forward(x)?;
                let mut out = p.output;
                apply_activation(&mut out, act)?;
                Ok((out, Aux::Pool { argmax: p.argmax }))
            }
            LayerKind::Flatten => {
                let b = x.dims()[0];
                let mut out = x.clone().reshape(vec![b, x.len() / b])?;
                apply_activation(&mut out, act)?;
                Ok((out, Aux::None))
            }
            LayerKind::Embedding { .. } => {
                let table = kernel()?;
                let (b, len) = match x.dims() {
                    &[b, l] => (b, l),
                    other => return Err(Error::Shape(format!("token batch must be 2-D, got {other:?}"))),
                };
                let dim = table.dims()[1];
                let ids = token_ids(x, table.dims()[0])?;
                let mut out = Vec::with_capacity(ids.len() * dim);
                for &id in &ids {
                    out.extend_from_slice(table.slab(id));
                }
                let mut out = Tensor::new(vec![b, len, dim], out)?;
                apply_activation(&mut out, act)?;
                Ok((out, Aux::Tokens(ids)))
            }
        }
    }

    /// Inference output; a final softmax layer yields probabilities.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = self.forward_logits(x)?;
        if self.layers.last().map(|l| l.spec.activation) == Some(Activation::Softmax) {
            apply_activation(&mut out, Activation::Softmax)?;
        }
        Ok(out)
    }

    /// Output before any final softmax, which is what the losses consume.
    pub fn forward_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            cur = self.step(i, &cur, false)?.0;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        for i in 0..self.layers.len() {
            let (out, a) = self.step(i, &activations[i], true)?;
            activations.push(out);
            aux.push(a);
        }
        Ok(Trace { activations, aux })
    }

    /// Reverse-mode pass from `d_logits` (gradient with respect to
    /// [`Trace::logits`]). The input gradient is computed only when
    /// `input_grad` is set and the first layer is not an embedding.
    pub fn backward(&self, trace: &Trace<T>, d_logits: &Tensor<T>, input_grad: bool) -> Result<GradientBundle<T>> {
        if trace.aux.len() != self.layers.len() || trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::State(format!(
                "trace records {} layers, network has {}",
                trace.aux.len(),
                self.layers.len()
            )));
        }
        if d_logits.dims() != trace.logits().dims() {
            return Err(Error::Dimension {
                op: "backward",
                left: d_logits.dims().to_vec(),
                right: trace.logits().dims().to_vec(),
            });
        }
        let mut grads: Vec<ParamGrad<T>> = Vec::with_capacity(self.layers.len());
        let mut d_out = d_logits.clone();
        let mut input = None;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = &trace.activations[i];
            let out = &trace.activations[i + 1];
            let need_dx = i > 0 || input_grad;
            if layer.spec.activation == Activation::Relu {
                for (d, &o) in d_out.data_mut().iter_mut().zip(out.data()) {
                    if !(o > T::ZERO) {
                        *d = T::ZERO;
                    }
                }
            }
            let (grad, dx) = match (&layer.spec.kind, &trace.aux[i]) {
                (LayerKind::Dense { .. }, Aux::None) => {
                    let kernel = layer.kernel.as_ref().expect("validated at construction");
                    let (b, m) = (x.dims()[0], x.dims()[1]);
                    let n = kernel.dims()[1];
                    let dk = gemm(x.transpose()?.data(), d_out.data(), m, b, n);
                    let db = column_sums(d_out.data(), n);
                    let dx = if need_dx {
                        Some(Tensor::new(vec![b, m], gemm(d_out.data(), kernel.transpose()?.data(), b, n, m))?)
                    } else {
                        None
                    };
                    (
                        ParamGrad {
                            kernel: Some(Tensor::new(kernel.dims().to_vec(), dk)?),
                            bias: Some(Tensor::vector(db)?),
                        },
                        dx,
                    )
                }
                (LayerKind::Conv2d { .. }, Aux::Conv { cols, geom }) => {
                    let kernel = layer.kernel.as_ref().expect("validated at construction");
                    let (rows, patch) = (cols.dims()[0], cols.dims()[1]);
                    let f = geom.f;
                    let dk = gemm(cols.transpose()?.data(), d_out.data(), patch, rows, f);
                    let db = column_sums(d_out.data(), f);
                    let dx = if need_dx {
                        let k2 = Tensor::new(vec![patch, f], kernel.data().to_vec())?;
                        let dcols = gemm(d_out.data(), k2.transpose()?.data(), rows, f, patch);
                        Some(Tensor::new(x.dims().to_vec(), col2im(&dcols, geom))?)
                    } else {
                        None
                    };
                    (
                        ParamGrad {
                            kernel: Some(Tensor::new(kernel.dims().to_vec(), dk)?),
                            bias: Some(Tensor::vector(db)?),
                        },
                        dx,
                    )
                }
                (LayerKind::MaxPool2, Aux::Pool { argmax }) => {
                    let dx = if need_dx {
                        let mut dx = vec![T::ZERO; x.len()];
                        for (&src, &g) in argmax.iter().zip(d_out.data()) {
                            dx[src] += g;
                        }
                        Some(Tensor::new(x.dims().to_vec(), dx)?)
                    } else {
                        None
                    };
                    (ParamGrad { kernel: None, bias: None }, dx)
                }
                (LayerKind::Flatten, Aux::None) => {
                    let dx = if need_dx {
                        Some(d_out.clone().reshape(x.dims().to_vec())?)
                    } else {
                        None
                    };
                    (ParamGrad { kernel: None, bias: None }, dx)
                }
                (LayerKind::Embedding { freeze_padding, .. }, Aux::Tokens(ids)) => {
                    let table = layer.kernel.as_ref().expect("validated at construction");
                    let dim = table.dims()[1];
                    let mut dt = vec![T::ZERO; table.len()];
                    for (&id, g) in ids.iter().zip(d_out.data().chunks(dim)) {
                        for (acc, &v) in dt[id * dim..(id + 1) * dim].iter_mut().zip(g) {
                            *acc += v;
                        }
                    }
                    if *freeze_padding {
                        dt[..dim].iter_mut().for_each(|v| *v = T::ZERO);
                    }
                    (
                        ParamGrad {
                            kernel: Some(Tensor::new(table.dims().to_vec(), dt)?),
                            bias: None,
                        },
                        None,
                    )
                }
                _ => return Err(Error::State(format!("trace does not match layer {i}"))),
            };
            grads.push(grad);
            match dx {
                Some(dx) if i > 0 => d_out = dx,
                Some(dx) => input = Some(dx),
                None => {}
            }
        }
        grads.reverse();
        Ok(GradientBundle { layers: grads, input })
    }

    /// Forward, loss and backward in one call.
    pub fn loss_gradients(
        &self,
        x: &Tensor<T>,
        target: &Tensor<T>,
        loss: LossKind,
        input_grad: bool,
    ) -> Result<(f64, GradientBundle<T>)> {
        let trace = self.forward_trace(x)?;
        let (value, d) = loss_and_grad(trace.logits(), target, loss)?;
        Ok((value, self.backward(&trace, &d, input_grad)?))
    }
}

fn column_sums<T: Scalar>(data: &[T], cols: usize) -> Vec<T> {
    let mut acc = vec![0f64; cols];
    for row in data.chunks(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v.widen();
        }
    }
    acc.into_iter().map(T::narrow).collect()
}
