use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{conv2d, conv2d_backward, ConvParams};
use super::{concat_channels, leaky_relu, leaky_relu_backward, Real, Tensor};
use crate::error::{Error, Result};
use crate::pyramid;

/// Identifies a learnable parameter set. Every application of a conv with the
/// same key accumulates into one gradient buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub slot: u16,
    pub copy: u16,
}

impl ParamKey {
    pub const fn new(slot: u16, copy: u16) -> Self {
        ParamKey { slot, copy }
    }
}

/// Operations shared by eager evaluation and recorded evaluation.
///
/// Network code is written once against this trait; [`Eager`] just computes
/// values, [`Tape`] additionally records what is needed for [`Tape::backward`].
pub trait Graph<'p, T: Real> {
    type Var: Clone;

    fn input(&mut self, t: Tensor<T>) -> Self::Var;
    fn conv2d(&mut self, x: &Self::Var, p: &'p ConvParams<T>, key: ParamKey) -> Result<Self::Var>;
    fn leaky_relu(&mut self, x: &Self::Var, slope: T) -> Self::Var;
    fn concat(&mut self, xs: &[&Self::Var]) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    /// Pyramid expansion (zero insertion and `2h` filtering) of every plane.
    fn expand(&mut self, x: &Self::Var) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T>;
}

/// Unrecorded evaluation; intermediate values are dropped as soon as possible.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<'p, T: Real> Graph<'p, T> for Eager {
    type Var = Tensor<T>;

    fn input(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn conv2d(&mut self, x: &Tensor<T>, p: &'p ConvParams<T>, _key: ParamKey) -> Result<Tensor<T>> {
        conv2d(x, p)
    }

    fn leaky_relu(&mut self, x: &Tensor<T>, slope: T) -> Tensor<T> {
        leaky_relu(x, slope)
    }

    fn concat(&mut self, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        concat_channels(xs)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.add(b)
    }

    fn expand(&mut self, x: &Tensor<T>) -> Tensor<T> {
        pyramid::expand_tensor(x)
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<'p, T> {
    Input,
    Conv {
        x: usize,
        params: &'p ConvParams<T>,
        key: ParamKey,
    },
    LeakyRelu {
        x: usize,
        slope: T,
    },
    Concat {
        xs: Vec<usize>,
    },
    Add {
        a: usize,
        b: usize,
    },
    Expand {
        x: usize,
    },
}

#[derive(Debug)]
struct Node<'p, T> {
    op: Op<'p, T>,
    value: Tensor<T>,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Ordered record of executed operations.
///
/// Parameters are borrowed for the tape's lifetime, so they cannot be
/// mutated while a recorded pass is alive.
#[derive(Debug)]
pub struct Tape<'p, T> {
    id: u64,
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Real> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<'p, T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: &Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Lookup(format!(
                "variable {} does not belong to this tape",
                v.index
            )));
        }
        Ok(v.index)
    }

    fn idx(&self, v: &Var) -> usize {
        self.check(v).expect("variable from another tape")
    }

    /// Distinct parameter sets referenced by recorded convolutions, by key.
    pub fn params(&self) -> HashMap<ParamKey, &'p ConvParams<T>> {
        let mut out = HashMap::new();
        for node in &self.nodes {
            if let Op::Conv { params, key, .. } = node.op {
                out.insert(key, params);
            }
        }
        out
    }

    /// Every recorded convolution's parameter reference, in execution order.
    pub fn param_refs(&self) -> Vec<(ParamKey, &'p ConvParams<T>)> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Conv { params, key, .. } => Some((key, params)),
                _ => None,
            })
            .collect()
    }

    /// Recomputes every recorded node from its recorded inputs.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input => node.value.clone(),
                Op::Conv { x, params, .. } => conv2d(&values[*x], params)?,
                Op::LeakyRelu { x, slope } => leaky_relu(&values[*x], *slope),
                Op::Concat { xs } => {
                    let refs: Vec<&Tensor<T>> = xs.iter().map(|&i| &values[i]).collect();
                    concat_channels(&refs)?
                }
                Op::Add { a, b } => values[*a].add(&values[*b])?,
                Op::Expand { x } => pyramid::expand_tensor(&values[*x]),
            };
            values.push(v);
        }
        Ok(values)
    }

    /// The recorded forward value of every node, in order.
    pub fn recorded_values(&self) -> Vec<&Tensor<T>> {
        self.nodes.iter().map(|n| &n.value).collect()
    }

    /// Reverse-mode sweep from one output.
    pub fn backward(&self, output: &Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.backward_many(vec![(*output, seed)])
    }

    /// Reverse-mode sweep seeded at several outputs at once; gradients of
    /// values that fan out are summed.
    pub fn backward_many(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (var, seed) in seeds {
            let i = self.check(&var)?;
            if seed.shape() != self.nodes[i].value.shape() {
                return Err(Error::Shape(format!(
                    "seed shape {:?} does not match value shape {:?}",
                    seed.shape(),
                    self.nodes[i].value.shape()
                )));
            }
            accumulate(&mut grads[i], seed);
        }
        let mut params: HashMap<ParamKey, ConvParams<T>> = HashMap::new();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Conv { x, params: p, key } => {
                    let (dx, dp) = conv2d_backward(&self.nodes[*x].value, p, &g)?;
                    accumulate(&mut grads[*x], dx);
                    match params.get_mut(key) {
                        Some(acc) => acc.add_assign(&dp),
                        None => {
                            params.insert(*key, dp);
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let dx = leaky_relu_backward(&self.nodes[*x].value, &g, *slope);
                    accumulate(&mut grads[*x], dx);
                }
                Op::Concat { xs } => {
                    let mut start = 0;
                    for &x in xs {
                        let c = self.nodes[x].value.channels();
                        accumulate(&mut grads[x], g.slice_channels(start, c)?);
                        start += c;
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[*a], g.clone());
                    accumulate(&mut grads[*b], g.clone());
                }
                Op::Expand { x } => {
                    accumulate(&mut grads[*x], pyramid::expand_tensor_adjoint(&g));
                }
            }
            grads[i] = Some(g);
        }
        let nodes = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.unwrap_or_else(|| Tensor::zeros(n.value.shape())))
            .collect();
        Ok(Gradients {
            tape: self.id,
            nodes,
            params,
        })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p, T: Real> Graph<'p, T> for Tape<'p, T> {
    type Var = Var;

    fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t)
    }

    fn conv2d(&mut self, x: &Var, p: &'p ConvParams<T>, key: ParamKey) -> Result<Var> {
        let xi = self.check(x)?;
        let y = conv2d(&self.nodes[xi].value, p)?;
        Ok(self.push(
            Op::Conv {
                x: xi,
                params: p,
                key,
            },
            y,
        ))
    }

    fn leaky_relu(&mut self, x: &Var, slope: T) -> Var {
        let xi = self.idx(x);
        let y = leaky_relu(&self.nodes[xi].value, slope);
        self.push(Op::LeakyRelu { x: xi, slope }, y)
    }

    fn concat(&mut self, xs: &[&Var]) -> Result<Var> {
        let idx = xs
            .iter()
            .map(|v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let y = concat_channels(&refs)?;
        Ok(self.push(Op::Concat { xs: idx }, y))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let y = self.nodes[ai].value.add(&self.nodes[bi].value)?;
        Ok(self.push(Op::Add { a: ai, b: bi }, y))
    }

    fn expand(&mut self, x: &Var) -> Var {
        let xi = self.idx(x);
        let y = pyramid::expand_tensor(&self.nodes[xi].value);
        self.push(Op::Expand { x: xi }, y)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[self.idx(v)].value
    }
}

/// Result of a backward sweep: one gradient per recorded value and one
/// accumulated gradient per parameter key.
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    nodes: Vec<Tensor<T>>,
    params: HashMap<ParamKey, ConvParams<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a recorded value.
    pub fn wrt(&self, v: &Var) -> Result<&Tensor<T>> {
        if v.tape != self.tape || v.index >= self.nodes.len() {
            return Err(Error::Lookup(format!(
                "variable {} is not on the differentiated tape",
                v.index
            )));
        }
        Ok(&self.nodes[v.index])
    }

    /// Gradient for a parameter key, if any recorded op used it.
    pub fn param(&self, key: ParamKey) -> Option<&ConvParams<T>> {
        self.params.get(&key)
    }

    pub fn take_param(&mut self, key: ParamKey) -> Option<ConvParams<T>> {
        self.params.remove(&key)
    }

    /// Number of distinct parameter gradient buffers.
    pub fn param_buffers(&self) -> usize {
        self.params.len()
    }

    /// Keys that received a gradient, sorted.
    pub fn param_keys(&self) -> Vec<ParamKey> {
        let mut keys: Vec<ParamKey> = self.params.keys().copied().collect();
        keys.sort();
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_backward_scales_negative_side() {
        let mut tape = Tape::new();
        let x = tape.input(t([1, 1, 1, 2], &[-1.0, 2.0]));
        let y = tape.leaky_relu(&x, 0.2);
        let g = tape.backward(&y, t([1, 1, 1, 2], &[1.0, 1.0])).unwrap();
        assert_eq!(g.wrt(&x).unwrap().data(), &[0.2, 1.0]);
    }

    #[test]
    fn identity_chain_passes_gradient_through() {
        let id = ConvParams::new(1, 1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mut y = x;
        for _ in 0..3 {
            y = tape.conv2d(&y, &id, ParamKey::new(0, 0)).unwrap();
        }
        let seed = t([1, 1, 2, 2], &[0.5, -1.0, 2.0, 3.0]);
        let g = tape.backward(&y, seed.clone()).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &seed);
        assert_eq!(g.param_buffers(), 1);
    }

    #[test]
    fn concat_gradient_splits() {
        let mut tape = Tape::new();
        let a = tape.input(t([1, 1, 1, 1], &[1.0]));
        let b = tape.input(t([1, 2, 1, 1], &[2.0, 3.0]));
        let c = tape.concat(&[&a, &b]).unwrap();
        let g = tape
            .backward(&c, t([1, 3, 1, 1], &[4.0, 5.0, 6.0]))
            .unwrap();
        assert_eq!(g.wrt(&a).unwrap().data(), &[4.0]);
        assert_eq!(g.wrt(&b).unwrap().data(), &[5.0, 6.0]);
    }

    #[test]
    fn fan_out_sums_gradients() {
        let mut tape = Tape::new();
        let a = tape.input(t([1, 1, 1, 1], &[1.0]));
        let s = tape.add(&a, &a).unwrap();
        let g = tape.backward(&s, t([1, 1, 1, 1], &[3.0])).unwrap();
        assert_eq!(g.wrt(&a).unwrap().data(), &[6.0]);
    }

    #[test]
    fn foreign_variable_is_lookup_error() {
        let mut t1 = Tape::<f64>::new();
        let mut t2 = Tape::<f64>::new();
        let a = t1.input(Tensor::zeros([1, 1, 1, 1]));
        let b = t2.input(Tensor::zeros([1, 1, 1, 1]));
        let g = t1.backward(&a, Tensor::zeros([1, 1, 1, 1])).unwrap();
        assert!(matches!(g.wrt(&b), Err(Error::Lookup(_))));
        assert!(matches!(
            t1.backward(&b, Tensor::zeros([1, 1, 1, 1])),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let p = ConvParams::new(
            2,
            1,
            3,
            3,
            (0..18).map(|v| v as f64 * 0.1 - 0.9).collect(),
            vec![0.1, -0.2],
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.input(t(
            [1, 1, 3, 3],
            &[1.0, -2.0, 3.0, 0.5, 0.0, -1.0, 2.0, 2.0, 1.0],
        ));
        let y = tape.conv2d(&x, &p, ParamKey::new(0, 0)).unwrap();
        let z = tape.leaky_relu(&y, 0.2);
        let e = tape.expand(&z);
        let _ = tape.concat(&[&e, &e]).unwrap();
        let replayed = tape.replay().unwrap();
        for (a, b) in replayed.iter().zip(tape.recorded_values()) {
            assert!(a.bitwise_eq(b));
        }
    }
}
