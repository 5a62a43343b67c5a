//! Named parameter storage and the convolution layer shared by every module.

use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Result, Scalar, Tape, Tensor, Var};

/// Negative slope of every leaky ReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "parameter {name} registered twice");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound(self.values.iter().map(|v| tape.leaf(v.clone(), trainable)).collect())
    }
}

/// Tape handles of a bound [`ParamSet`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps handles already on a tape, in [`ParamSet`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Seeded source of initial weights.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal weights for a leaky ReLU of slope [`LEAKY_SLOPE`].
    pub fn kaiming(&mut self, cout: usize, cin: usize, k: usize) -> Tensor<f32> {
        let fan_in = (cin * k * k) as f64;
        let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..cout * cin * k * k)
            .map(|_| normal.sample(&mut self.rng) as f32)
            .collect();
        Tensor::from_vec([cout, cin, k, k], data).expect("sized weights")
    }
}

/// Stride-1 "same" convolution with an optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: usize,
}

impl Conv {
    pub fn new(
        params: &mut ParamSet<f32>,
        init: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
    ) -> Conv {
        let weight = params.add(format!("{name}.weight"), init.kaiming(cout, cin, kernel));
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros([cout, 1, 1, 1])));
        Conv { weight, bias, kernel }
    }

    /// Registers a convolution with caller-provided initial weights.
    pub fn with_weights(params: &mut ParamSet<f32>, name: &str, weight: Tensor<f32>, bias: bool) -> Conv {
        let s = weight.shape();
        let kernel = s.h();
        let cout = s.n();
        let weight = params.add(format!("{name}.weight"), weight);
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros([cout, 1, 1, 1])));
        Conv { weight, bias, kernel }
    }

    /// Same-size output; borders are reflect-padded so constant inputs
    /// give constant outputs.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let p = self.kernel / 2;
        let x = tape.pad_reflect(x, [p; 4])?;
        tape.conv2d(x, bound[self.weight], self.bias.map(|b| bound[b]), 1, 0)
    }

    pub fn forward_lrelu<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(tape, bound, x)?;
        Ok(tape.leaky_relu(y, T::of_f64(LEAKY_SLOPE)))
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kaiming_is_seeded_and_scaled() {
        let a = Initializer::new(3).kaiming(64, 32, 3);
        let b = Initializer::new(3).kaiming(64, 32, 3);
        assert_eq!(a, b);
        let n = a.numel() as f64;
        let var = a.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        let want = 2.0 / (1.04 * 32.0 * 9.0);
        assert!((var / want - 1.0).abs() < 0.1, "{var} vs {want}");
    }

    #[test]
    fn conv_preserves_spatial_size() {
        let mut params = ParamSet::new();
        let mut init = Initializer::new(0);
        let conv = Conv::new(&mut params, &mut init, "c", 3, 5, 3, true);
        assert_eq!(params.len(), 2);
        assert_eq!(params.name(conv.weight), "c.weight");
        let mut tape = Tape::<f32>::new();
        let bound = params.bind(&mut tape, true);
        let x = tape.constant(Tensor::ones([2, 3, 7, 6]));
        let y = conv.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.shape(y).0, [2, 5, 7, 6]);
    }

    #[test]
    #[should_panic]
    fn duplicate_names_are_rejected() {
        let mut params = ParamSet::<f32>::new();
        params.add("a", Tensor::zeros([1, 1, 1, 1]));
        params.add("a", Tensor::zeros([1, 1, 1, 1]));
    }
}
