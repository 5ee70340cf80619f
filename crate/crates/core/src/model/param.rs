use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::{Scalar, Tensor};
use crate::seed;

/// How a parameter array is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal { mean: f64, std: f64 },
}

/// Shape-level description of one parameter array. A model's spec list is
/// enough to count it without allocating anything.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub embedding: bool,
    /// Contribution to the dense-equivalent parameter count. For a
    /// structured slot the first array carries the slot's full `m·n` and
    /// the rest carry 0.
    pub emulated: u64,
    pub init: Init,
    /// Label of the random stream this array draws from.
    pub stream: String,
}

impl ParamSpec {
    pub fn len(&self) -> u64 {
        self.shape.iter().map(|&e| e as u64).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named array plus its gradient buffer. Frozen arrays carry no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub embedding: bool,
    pub emulated: u64,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let grad = trainable.then(|| Tensor::zeros(value.shape()));
        let emulated = value.len() as u64;
        Param {
            name: name.into(),
            value,
            grad,
            embedding: false,
            emulated,
        }
    }

    pub fn trainable(&self) -> bool {
        self.grad.is_some()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    /// Value and gradient slices together; the gradient is `None` when frozen.
    pub fn split(&mut self) -> (&[T], Option<&mut [T]>) {
        (self.value.data(), self.grad.as_mut().map(|g| g.data_mut()))
    }
}

/// Materializes specs in order, one lazily created rng per stream label.
pub(crate) fn materialize<T: Scalar>(specs: &[ParamSpec], seed: u64) -> Vec<Param<T>> {
    let mut streams: HashMap<&str, ChaCha8Rng> = HashMap::new();
    specs
        .iter()
        .map(|s| {
            let len = s.len() as usize;
            let data: Vec<T> = match s.init {
                Init::Zeros => vec![T::zero(); len],
                Init::Ones => vec![T::one(); len],
                Init::Normal { mean, std } => {
                    let rng = streams
                        .entry(s.stream.as_str())
                        .or_insert_with(|| seed::rng(seed, &s.stream));
                    let dist = Normal::new(mean, std).expect("positive std");
                    (0..len).map(|_| T::from_f64_lossy(sample(&dist, rng))).collect()
                }
            };
            let value = Tensor::new(&s.shape, data).expect("spec shapes are positive");
            Param {
                name: s.name.clone(),
                grad: s.trainable.then(|| Tensor::zeros(&s.shape)),
                value,
                embedding: s.embedding,
                emulated: s.emulated,
            }
        })
        .collect()
}

fn sample(dist: &Normal<f64>, rng: &mut impl Rng) -> f64 {
    dist.sample(rng)
}

/// Hands out materialized params in spec order, checking names.
pub(crate) struct ParamSource<T> {
    params: std::vec::IntoIter<Param<T>>,
}

impl<T: Scalar> ParamSource<T> {
    pub(crate) fn new(params: Vec<Param<T>>) -> Self {
        ParamSource {
            params: params.into_iter(),
        }
    }

    pub(crate) fn take(&mut self, name: &str) -> Param<T> {
        let p = self.params.next().expect("param list shorter than plan");
        assert_eq!(p.name, name, "param order diverged from plan");
        p
    }

    pub(crate) fn finish(mut self) {
        assert!(self.params.next().is_none(), "param list longer than plan");
    }
}

/// Collects specs while a plan is walked.
pub(crate) struct SpecSink<'a> {
    pub out: &'a mut Vec<ParamSpec>,
    pub trainable: bool,
    pub stream: String,
}

impl SpecSink<'_> {
    pub(crate) fn push(&mut self, name: String, shape: &[usize], init: Init, emulated: u64) {
        self.out.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            trainable: self.trainable,
            embedding: false,
            emulated,
            init,
            stream: self.stream.clone(),
        });
    }

    pub(crate) fn dense(&mut self, name: String, shape: &[usize], init: Init) {
        let len = shape.iter().map(|&e| e as u64).product();
        self.push(name, shape, init, len);
    }
}
