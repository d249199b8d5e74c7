use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, BatchNormCache, Mode, Padding};
use super::{NnError, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fixed affine input scaling `(x - mean) / std`, not trained.
    Standardize {
        mean: f64,
        std: f64,
    },
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Dropout {
        rate: f64,
    },
    BatchNorm,
    GlobalAvgPool,
    Flatten,
    Dense {
        units: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Gapnet,
    Blocknet,
    Custom,
}

impl Architecture {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Architecture::Gapnet, Architecture::Blocknet, Architecture::Custom]
            .get(c as usize)
            .copied()
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gapnet" => Ok(Architecture::Gapnet),
            "blocknet" => Ok(Architecture::Blocknet),
            other => Err(format!("unknown architecture {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Per-sample input `[height, width, channels]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

pub const DEFAULT_INPUT: [usize; 3] = [40, 862, 1];

impl ModelConfig {
    /// Four conv(K=2, valid)+ReLU+maxpool(2) stages with 16/32/64/`last_filters`
    /// filters, dropout 0.2 after pools 1, 3 and 4, global average pooling and
    /// a dense softmax head.
    pub fn gapnet(input: [usize; 3], last_filters: usize) -> Self {
        let conv = |filters| LayerSpec::Conv {
            filters,
            kernel: 2,
            stride: 1,
            padding: Padding::Valid,
        };
        let pool = LayerSpec::MaxPool { size: 2 };
        let drop = LayerSpec::Dropout { rate: 0.2 };
        use LayerSpec::*;
        #[rustfmt::skip]
        let layers = vec![
            conv(16), Relu, pool, drop,
            conv(32), Relu, pool,
            conv(64), Relu, pool, drop,
            conv(last_filters), Relu, pool, drop,
            GlobalAvgPool,
            Dense { units: 2 },
        ];
        ModelConfig {
            architecture: Architecture::Gapnet,
            input,
            classes: 2,
            layers,
        }
    }

    /// Three conv(3x3, same) blocks of 64/128/128 filters, regularized by
    /// dropout, batch norm, and dropout respectively, each followed by ReLU and
    /// maxpool(3); then flatten and dense 128 -> 64 -> 2.
    pub fn blocknet(input: [usize; 3]) -> Self {
        let conv = |filters| LayerSpec::Conv {
            filters,
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        };
        let pool = LayerSpec::MaxPool { size: 3 };
        let drop = LayerSpec::Dropout { rate: 0.2 };
        use LayerSpec::*;
        #[rustfmt::skip]
        let layers = vec![
            conv(64), drop, Relu, pool,
            conv(128), BatchNorm, Relu, pool,
            conv(128), drop, Relu, pool,
            Flatten,
            Dense { units: 128 }, Relu,
            Dense { units: 64 }, Relu,
            Dense { units: 2 },
        ];
        ModelConfig {
            architecture: Architecture::Blocknet,
            input,
            classes: 2,
            layers,
        }
    }

    /// Prepend a [`LayerSpec::Standardize`] layer (replacing an existing one).
    pub fn with_standardization(mut self, mean: f64, std: f64) -> Self {
        if matches!(self.layers.first(), Some(LayerSpec::Standardize { .. })) {
            self.layers.remove(0);
        }
        self.layers.insert(0, LayerSpec::Standardize { mean, std });
        self
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::BatchNorm))
    }

    /// Per-sample shape before the first layer and after every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |i: usize, msg: String| NnError::InvalidConfig(format!("layer {i}: {msg}"));
        let mut shapes = vec![self.input.to_vec()];
        if self.input.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidConfig(format!("input {:?}", self.input)));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap().clone();
            let spatial = |what: &str| -> Result<[usize; 3]> {
                match cur[..] {
                    [h, w, c] => Ok([h, w, c]),
                    _ => Err(bad(i, format!("{what} needs a [H,W,C] input, got {cur:?}"))),
                }
            };
            let next = match *layer {
                LayerSpec::Standardize { mean, std } => {
                    if !mean.is_finite() || !(std.is_finite() && std > 0.0) {
                        return Err(bad(i, format!("standardize mean {mean}, std {std}")));
                    }
                    cur
                }
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [h, w, _] = spatial("conv")?;
                    if filters == 0 || kernel == 0 {
                        return Err(bad(i, "empty conv".into()));
                    }
                    let (ho, _) =
                        ops::conv_geometry(h, kernel, stride, padding).map_err(|e| bad(i, e.to_string()))?;
                    let (wo, _) =
                        ops::conv_geometry(w, kernel, stride, padding).map_err(|e| bad(i, e.to_string()))?;
                    vec![ho, wo, filters]
                }
                LayerSpec::MaxPool { size } => {
                    let [h, w, c] = spatial("maxpool")?;
                    if size == 0 || size > h || size > w {
                        return Err(bad(i, format!("pool {size} on {cur:?}")));
                    }
                    vec![h / size, w / size, c]
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(i, format!("dropout rate {rate}")));
                    }
                    cur
                }
                LayerSpec::Relu => cur,
                LayerSpec::BatchNorm => {
                    spatial("batch norm")?;
                    cur
                }
                LayerSpec::GlobalAvgPool => vec![spatial("global pooling")?[2]],
                LayerSpec::Flatten => vec![cur.iter().product()],
                LayerSpec::Dense { units } => {
                    if cur.len() != 1 {
                        return Err(bad(i, format!("dense needs a vector input, got {cur:?}")));
                    }
                    if units == 0 {
                        return Err(bad(i, "dense with no units".into()));
                    }
                    vec![units]
                }
            };
            shapes.push(next);
        }
        if shapes.last().unwrap() != &vec![self.classes] {
            return Err(NnError::InvalidConfig(format!(
                "network ends in {:?}, expected [{}]",
                shapes.last().unwrap(),
                self.classes
            )));
        }
        Ok(shapes)
    }

    /// Trainable parameter count from the layer shapes.
    pub fn parameter_count(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match *l {
                LayerSpec::Conv { filters, kernel, .. } => (kernel * kernel * shapes[i][2] + 1) * filters,
                LayerSpec::Dense { units } => (shapes[i][0] + 1) * units,
                LayerSpec::BatchNorm => 2 * shapes[i][2],
                _ => 0,
            })
            .sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    None,
    Conv {
        w: Tensor<T>,
        b: Tensor<T>,
    },
    Dense {
        w: Tensor<T>,
        b: Tensor<T>,
    },
    BatchNorm {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParamSet<T> {
    /// Trainable tensors in layer order (weights before biases, gamma before beta).
    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Conv { w, b } | LayerParams::Dense { w, b } => out.extend([w, b]),
                LayerParams::BatchNorm { gamma, beta, .. } => out.extend([gamma, beta]),
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Conv { w, b } | LayerParams::Dense { w, b } => out.extend([w, b]),
                LayerParams::BatchNorm { gamma, beta, .. } => out.extend([gamma, beta]),
            }
        }
        out
    }

    /// Every stored tensor (trainable and running statistics) in file order.
    pub fn all_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Conv { w, b } | LayerParams::Dense { w, b } => out.extend([w, b]),
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => out.extend([gamma, beta, running_mean, running_var]),
            }
        }
        out
    }

    pub fn total_parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    LayerParams::None => LayerParams::None,
                    LayerParams::Conv { w, b } => LayerParams::Conv {
                        w: w.cast(),
                        b: b.cast(),
                    },
                    LayerParams::Dense { w, b } => LayerParams::Dense {
                        w: w.cast(),
                        b: b.cast(),
                    },
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    } => LayerParams::BatchNorm {
                        gamma: gamma.cast(),
                        beta: beta.cast(),
                        running_mean: running_mean.cast(),
                        running_var: running_var.cast(),
                    },
                })
                .collect(),
        }
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`), zero biases, unit gamma, zero beta.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParamSet<T>> {
    let shapes = config.shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut he = |shape: &[usize], fan_in: usize| -> Tensor<T> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
        Tensor::from_vec(shape, data).expect("shape product")
    };
    let layers = config
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| match *l {
            LayerSpec::Conv { filters, kernel, .. } => {
                let cin = shapes[i][2];
                LayerParams::Conv {
                    w: he(&[kernel, kernel, cin, filters], kernel * kernel * cin),
                    b: Tensor::zeros(&[filters]),
                }
            }
            LayerSpec::Dense { units } => {
                let n = shapes[i][0];
                LayerParams::Dense {
                    w: he(&[n, units], n),
                    b: Tensor::zeros(&[units]),
                }
            }
            LayerSpec::BatchNorm => {
                let c = shapes[i][2];
                LayerParams::BatchNorm {
                    gamma: Tensor::filled(&[c], T::one()),
                    beta: Tensor::zeros(&[c]),
                    running_mean: Tensor::zeros(&[c]),
                    running_var: Tensor::filled(&[c], T::one()),
                }
            }
            _ => LayerParams::None,
        })
        .collect();
    Ok(ParamSet { layers })
}

/// Per-layer state saved by the training forward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Standardize {
        std: f64,
    },
    Conv {
        input: Tensor<T>,
    },
    Relu {
        output: Tensor<T>,
    },
    MaxPool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    BatchNorm {
        cache: BatchNormCache<T>,
    },
    GlobalAvgPool {
        input_shape: Vec<usize>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Network { config, params })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.config.input || s[0] == 0 {
            return Err(NnError::ShapeViolation {
                expected: self.config.input.to_vec(),
                got: s.to_vec(),
            });
        }
        Ok(())
    }

    /// Inference forward pass: dropout is the identity, batch norm uses running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for (spec, p) in self.config.layers.iter().zip(&self.params.layers) {
            a = match (*spec, p) {
                (LayerSpec::Standardize { mean, std }, _) => ops::standardize(&a, mean, std),
                (LayerSpec::Conv { stride, padding, .. }, LayerParams::Conv { w, b }) => {
                    ops::conv2d(&a, w, b, stride, padding)?
                }
                (LayerSpec::Relu, _) => ops::relu(&a),
                (LayerSpec::MaxPool { size }, _) => ops::maxpool(&a, size)?.0,
                (LayerSpec::Dropout { .. }, _) => a,
                (
                    LayerSpec::BatchNorm,
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => ops::batch_norm_eval(&a, gamma, beta, running_mean, running_var),
                (LayerSpec::GlobalAvgPool, _) => ops::global_avg_pool(&a)?,
                (LayerSpec::Flatten, _) => {
                    let b = a.shape()[0];
                    let n = a.len() / b;
                    a.reshape(&[b, n])?
                }
                (LayerSpec::Dense { .. }, LayerParams::Dense { w, b }) => ops::dense(&a, w, b)?,
                (spec, _) => return Err(NnError::InvalidConfig(format!("no parameters for {spec:?}"))),
            };
        }
        debug_assert!(a.all_finite(), "non-finite logits");
        Ok(a)
    }

    /// Training forward pass. Dropout masks are drawn from `rng` in layer
    /// order; batch-norm running statistics are updated.
    pub fn forward_train<R: Rng>(
        &mut self,
        x: &Tensor<T>,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.config.layers.len());
        let mut a = x.clone();
        for (spec, p) in self.config.layers.iter().zip(self.params.layers.iter_mut()) {
            a = match (*spec, p) {
                (LayerSpec::Standardize { mean, std }, _) => {
                    caches.push(Cache::Standardize { std });
                    ops::standardize(&a, mean, std)
                }
                (LayerSpec::Conv { stride, padding, .. }, LayerParams::Conv { w, b }) => {
                    let out = ops::conv2d(&a, w, b, stride, padding)?;
                    caches.push(Cache::Conv { input: a });
                    out
                }
                (LayerSpec::Relu, _) => {
                    let out = ops::relu(&a);
                    caches.push(Cache::Relu { output: out.clone() });
                    out
                }
                (LayerSpec::MaxPool { size }, _) => {
                    let (out, argmax) = ops::maxpool(&a, size)?;
                    caches.push(Cache::MaxPool {
                        argmax,
                        input_shape: a.shape().to_vec(),
                    });
                    out
                }
                (LayerSpec::Dropout { rate }, _) => {
                    let (out, mask) = ops::dropout(&a, rate, Mode::Train, rng);
                    caches.push(Cache::Dropout { mask });
                    out
                }
                (
                    LayerSpec::BatchNorm,
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    let (out, cache) = ops::batch_norm_train(&a, gamma, beta, running_mean, running_var)?;
                    caches.push(Cache::BatchNorm { cache });
                    out
                }
                (LayerSpec::GlobalAvgPool, _) => {
                    let out = ops::global_avg_pool(&a)?;
                    caches.push(Cache::GlobalAvgPool {
                        input_shape: a.shape().to_vec(),
                    });
                    out
                }
                (LayerSpec::Flatten, _) => {
                    let shape = a.shape().to_vec();
                    let n = a.len() / shape[0];
                    caches.push(Cache::Flatten {
                        input_shape: shape.clone(),
                    });
                    a.reshape(&[shape[0], n])?
                }
                (LayerSpec::Dense { .. }, LayerParams::Dense { w, b }) => {
                    let out = ops::dense(&a, w, b)?;
                    caches.push(Cache::Dense { input: a });
                    out
                }
                (spec, _) => return Err(NnError::InvalidConfig(format!("no parameters for {spec:?}"))),
            };
        }
        Ok((a, caches))
    }

    /// Backpropagate `dlogits`; gradients are returned in [`ParamSet::trainable`] order.
    pub fn backward(&self, caches: Vec<Cache<T>>, dlogits: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.config.layers.len()];
        let mut g = dlogits;
        for (i, cache) in caches.into_iter().enumerate().rev() {
            let p = &self.params.layers[i];
            g = match (cache, p) {
                (Cache::Conv { input }, LayerParams::Conv { w, .. }) => {
                    let LayerSpec::Conv { stride, padding, .. } = self.config.layers[i] else {
                        unreachable!("cache follows spec")
                    };
                    let (dx, dw, db) = ops::conv2d_backward(&input, w, stride, padding, &g)?;
                    per_layer[i] = vec![dw, db];
                    dx
                }
                (Cache::Standardize { std }, _) => g.map(|v| v / T::from_f64(std)),
                (Cache::Relu { output }, _) => ops::relu_backward(&output, &g),
                (Cache::MaxPool { argmax, input_shape }, _) => {
                    ops::maxpool_backward(&g, &argmax, &input_shape)
                }
                (Cache::Dropout { mask }, _) => match mask {
                    Some(m) => ops::apply_mask(&g, &m),
                    None => g,
                },
                (Cache::BatchNorm { cache }, LayerParams::BatchNorm { gamma, .. }) => {
                    let (dx, dgamma, dbeta) = ops::batch_norm_backward(&g, &cache, gamma);
                    per_layer[i] = vec![dgamma, dbeta];
                    dx
                }
                (Cache::GlobalAvgPool { input_shape }, _) => ops::global_avg_pool_backward(&g, &input_shape),
                (Cache::Flatten { input_shape }, _) => g.reshape(&input_shape)?,
                (Cache::Dense { input }, LayerParams::Dense { w, .. }) => {
                    let (dx, dw, db) = ops::dense_backward(&input, w, &g)?;
                    per_layer[i] = vec![dw, db];
                    dx
                }
                _ => {
                    return Err(NnError::InvalidConfig(format!(
                        "cache/parameter mismatch at layer {i}"
                    )))
                }
            };
        }
        Ok(per_layer.into_iter().flatten().collect())
    }

    /// Class probabilities for a batch `[B,H,W,C]`, one row per sample.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        let probs = ops::softmax(&self.forward_eval(x)?);
        Ok(probs
            .data()
            .chunks_exact(self.config.classes)
            .map(|r| r.to_vec())
            .collect())
    }
}
