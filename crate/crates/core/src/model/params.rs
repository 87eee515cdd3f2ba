use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;
use crate::compute::{RngState, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

macro_rules! weight_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P> {
            $(pub $field: P,)*
        }

        impl<P> $name<P> {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
                $(out.push((format!("{prefix}{}", stringify!($field)), &self.$field));)*
            }

            fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
                $(out.push(&mut self.$field);)*
            }

            fn try_map_with<Q, E>(
                &self,
                prefix: &str,
                f: &mut impl FnMut(&str, &P) -> std::result::Result<Q, E>,
            ) -> std::result::Result<$name<Q>, E> {
                Ok($name {
                    $($field: f(&format!("{prefix}{}", stringify!($field)), &self.$field)?,)*
                })
            }
        }
    };
}

weight_group!(
    /// Token, segment, position and NER tables plus the embedding layer norm.
    EmbeddingWeights { token, segment, position, ner, ln_g, ln_b }
);

weight_group!(
    /// One post-LN encoder layer: attention projections, FFN and two norms.
    LayerWeights { wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b }
);

weight_group!(
    /// Two-class classifier over the [CLS] state.
    HeadWeights { w, b }
);

/// All encoder weights. `P` is `Tensor<T>` for stored parameters and
/// [`Var`](crate::compute::Var) once placed on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<P> {
    pub embeddings: EmbeddingWeights<P>,
    pub layers: Vec<LayerWeights<P>>,
    pub head: HeadWeights<P>,
}

pub type EncoderParams<T> = EncoderWeights<Tensor<T>>;

impl<P> EncoderWeights<P> {
    /// Dotted names (`embeddings.token`, `layers.0.wq`, `head.w`) in a fixed
    /// order shared by every traversal.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.embeddings.collect("embeddings.", &mut out);
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("layers.{i}."), &mut out);
        }
        self.head.collect("head.", &mut out);
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        self.embeddings.collect_mut(&mut out);
        for l in &mut self.layers {
            l.collect_mut(&mut out);
        }
        self.head.collect_mut(&mut out);
        out
    }

    pub fn try_map<Q, E>(
        &self,
        mut f: impl FnMut(&str, &P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<EncoderWeights<Q>, E> {
        Ok(EncoderWeights {
            embeddings: self.embeddings.try_map_with("embeddings.", &mut f)?,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map_with(&format!("layers.{i}."), &mut f))
                .collect::<std::result::Result<_, _>>()?,
            head: self.head.try_map_with("head.", &mut f)?,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> EncoderWeights<Q> {
        self.try_map::<Q, std::convert::Infallible>(|n, p| Ok(f(n, p)))
            .unwrap_or_else(|e| match e {})
    }
}

/// Expected shape of every weight under `config`.
pub fn param_shapes(config: &ModelConfig) -> EncoderWeights<Vec<usize>> {
    let (d, k) = (config.hidden, config.ffn);
    let layer = LayerWeights {
        wq: vec![d, d],
        bq: vec![d],
        wk: vec![d, d],
        bk: vec![d],
        wv: vec![d, d],
        bv: vec![d],
        wo: vec![d, d],
        bo: vec![d],
        ln1_g: vec![d],
        ln1_b: vec![d],
        w1: vec![d, k],
        b1: vec![k],
        w2: vec![k, d],
        b2: vec![d],
        ln2_g: vec![d],
        ln2_b: vec![d],
    };
    EncoderWeights {
        embeddings: EmbeddingWeights {
            token: vec![config.vocab_size, d],
            segment: vec![config.segments, d],
            position: vec![config.max_positions, d],
            ner: vec![config.ner_tags, d],
            ln_g: vec![d],
            ln_b: vec![d],
        },
        layers: vec![layer; config.layers],
        head: HeadWeights {
            w: vec![d, 2],
            b: vec![2],
        },
    }
}

/// Standard deviation of a unit normal truncated to [-2, 2].
const TRUNCATED_STD: f64 = 0.879_625_661_034_239_8;

/// Normal draw truncated to ±2 standard units by resampling, rescaled so
/// the result has standard deviation `std`.
fn truncated_normal(std: f64, rng: &mut RngState) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std / TRUNCATED_STD;
        }
    }
}

/// Matrices and embedding tables get truncated-normal entries with
/// `config.init_std`; layer-norm scales start at one, shifts and biases at
/// zero. Deterministic per seed.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<EncoderParams<T>> {
    config.validate()?;
    let mut rng = RngState::new(seed);
    param_shapes(config).try_map(|name, shape| {
        let len: usize = shape.iter().product();
        let data: Vec<T> = if shape.len() == 2 {
            (0..len)
                .map(|_| T::from_f64_lossy(truncated_normal(config.init_std, &mut rng)))
                .collect()
        } else if name.ends_with("_g") {
            vec![T::one(); len]
        } else {
            vec![T::zero(); len]
        };
        Tensor::new(shape.clone(), data)
    })
}

/// Checks every tensor against the shape `config` implies.
pub fn check_shapes<T: Scalar>(config: &ModelConfig, params: &EncoderParams<T>) -> Result<()> {
    let expected = param_shapes(config);
    if expected.layers.len() != params.layers.len() {
        return Err(Error::Config(format!(
            "config has {} layers, parameters have {}",
            expected.layers.len(),
            params.layers.len()
        )));
    }
    for ((name, shape), (_, t)) in expected.named().into_iter().zip(params.named()) {
        if shape.as_slice() != t.shape() {
            return Err(Error::Config(format!("{name}: expected {shape:?}, found {:?}", t.shape())));
        }
    }
    Ok(())
}

pub fn param_count<T: Scalar>(params: &EncoderParams<T>) -> usize {
    params.named().iter().map(|(_, t)| t.len()).sum()
}
