//! The fusion network: a shallow 5x5 head, `K` applications of ONE local
//! feature fusion block, a 1x1 global fusion over the concatenated block
//! outputs and a linear 5x5 tail projecting to `B` bands.
//!
//! ```text
//! stack (B+1) -> head -> F1 -+-> block -> block -> ... -> block
//!                            |     |        |               |
//!                            |     +--------+---- concat ---+-> 1x1 global -> tail -> B
//!                            +--> added to every block input after the first
//! ```
//!
//! Checkpoint layout (little-endian): magic `FNET`, version `1` (u32), `B`
//! (u32), `K` (u32), then weights and bias of head, block conv1, block conv2,
//! block fuse, global fuse and tail as f32, weights in `(C_out, C_in, k_h, k_w)`
//! order.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{xavier_init, ConvParams, Eager, Gradients, Graph, ParamKey, Real, Tensor};

/// Feature maps of every hidden layer.
pub const FEATURES: usize = 48;
/// Negative slope of every leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_BLOCKS: usize = 4;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FNET";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER_LEN: usize = 16;

const SLOT_HEAD: u16 = 0;
const SLOT_BLOCK_CONV1: u16 = 1;
const SLOT_BLOCK_CONV2: u16 = 2;
const SLOT_BLOCK_FUSE: u16 = 3;
const SLOT_GLOBAL: u16 = 4;
const SLOT_TAIL: u16 = 5;

/// How block `k >= 2` receives its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockChaining {
    /// `F_{k,0} = F_{k-1,4} + F_1`: each block consumes its predecessor's output.
    #[default]
    Residual,
    /// `F_{k,0} = F_{k-1,0} + F_1`, the recurrence exactly as printed; block
    /// outputs then only reach the global fusion.
    Printed,
}

/// Parameters of the local feature fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub conv1: ConvParams<T>,
    pub conv2: ConvParams<T>,
    pub fuse: ConvParams<T>,
}

impl<T: Real> BlockParams<T> {
    pub fn zeros() -> Self {
        BlockParams {
            conv1: ConvParams::zeros(FEATURES, FEATURES, 5, 5),
            conv2: ConvParams::zeros(FEATURES, FEATURES, 5, 5),
            fuse: ConvParams::zeros(FEATURES, 3 * FEATURES, 1, 1),
        }
    }
}

/// All learnable parameters. There is exactly one [`BlockParams`]; it is
/// applied `blocks` times.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseNetParams<T> {
    bands: usize,
    blocks: usize,
    pub head: ConvParams<T>,
    pub block: BlockParams<T>,
    pub global_fuse: ConvParams<T>,
    pub tail: ConvParams<T>,
}

/// Layer shapes `(C_out, C_in, k_h, k_w)` in checkpoint order.
pub fn layer_shapes(bands: usize, blocks: usize) -> [[usize; 4]; 6] {
    [
        [FEATURES, bands + 1, 5, 5],
        [FEATURES, FEATURES, 5, 5],
        [FEATURES, FEATURES, 5, 5],
        [FEATURES, 3 * FEATURES, 1, 1],
        [FEATURES, blocks * FEATURES, 1, 1],
        [bands, FEATURES, 5, 5],
    ]
}

/// Closed-form parameter count for `bands` outputs and `blocks` applications.
pub fn param_count(bands: usize, blocks: usize) -> usize {
    layer_shapes(bands, blocks)
        .iter()
        .map(|s| s.iter().product::<usize>() + s[0])
        .sum()
}

impl<T: Real> FuseNetParams<T> {
    fn check_arity(bands: usize, blocks: usize) -> Result<()> {
        if bands == 0 || blocks == 0 {
            return Err(Error::Shape(format!(
                "network needs at least one band and one block, got B={bands}, K={blocks}"
            )));
        }
        Ok(())
    }

    pub fn zeros(bands: usize, blocks: usize) -> Result<Self> {
        Self::check_arity(bands, blocks)?;
        let s = layer_shapes(bands, blocks);
        let z = |s: [usize; 4]| ConvParams::zeros(s[0], s[1], s[2], s[3]);
        Ok(FuseNetParams {
            bands,
            blocks,
            head: z(s[0]),
            block: BlockParams::zeros(),
            global_fuse: z(s[4]),
            tail: z(s[5]),
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// The six parameter sets in checkpoint order.
    pub fn layers(&self) -> [&ConvParams<T>; 6] {
        [
            &self.head,
            &self.block.conv1,
            &self.block.conv2,
            &self.block.fuse,
            &self.global_fuse,
            &self.tail,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut ConvParams<T>; 6] {
        [
            &mut self.head,
            &mut self.block.conv1,
            &mut self.block.conv2,
            &mut self.block.fuse,
            &mut self.global_fuse,
            &mut self.tail,
        ]
    }

    pub fn cast<U: Real>(&self) -> FuseNetParams<U> {
        FuseNetParams {
            bands: self.bands,
            blocks: self.blocks,
            head: self.head.cast(),
            block: BlockParams {
                conv1: self.block.conv1.cast(),
                conv2: self.block.conv2.cast(),
                fuse: self.block.fuse.cast(),
            },
            global_fuse: self.global_fuse.cast(),
            tail: self.tail.cast(),
        }
    }

    /// Gradient buffers for a tied forward pass, shaped like `self`; layers
    /// that received no gradient are zero.
    pub fn gradients_from(&self, grads: &Gradients<T>) -> FuseNetParams<T> {
        let mut out = FuseNetParams::zeros(self.bands, self.blocks).expect("valid arity");
        let slots = [
            SLOT_HEAD,
            SLOT_BLOCK_CONV1,
            SLOT_BLOCK_CONV2,
            SLOT_BLOCK_FUSE,
            SLOT_GLOBAL,
            SLOT_TAIL,
        ];
        for (dst, slot) in out.layers_mut().into_iter().zip(slots) {
            if let Some(g) = grads.param(ParamKey::new(slot, 0)) {
                dst.add_assign(g);
            }
        }
        out
    }

    /// Per-application block gradients of an untied pass (see [`forward_untied`]).
    pub fn block_gradients_untied(&self, grads: &Gradients<T>) -> Vec<BlockParams<T>> {
        (0..self.blocks as u16)
            .map(|k| {
                let mut b = BlockParams::zeros();
                for (dst, slot) in [
                    (&mut b.conv1, SLOT_BLOCK_CONV1),
                    (&mut b.conv2, SLOT_BLOCK_CONV2),
                    (&mut b.fuse, SLOT_BLOCK_FUSE),
                ] {
                    if let Some(g) = grads.param(ParamKey::new(slot, k)) {
                        dst.add_assign(g);
                    }
                }
                b
            })
            .collect()
    }

    /// Eager inference on a `(N, B+1, H, W)` stack.
    pub fn apply(&self, stack: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Eager;
        let x = Graph::<T>::input(&mut g, stack.clone());
        forward(&mut g, &x, self)
    }
}

impl FuseNetParams<f32> {
    /// Uniform Xavier initialization of every layer, zero biases.
    pub fn xavier<R: Rng + ?Sized>(bands: usize, blocks: usize, rng: &mut R) -> Result<Self> {
        Self::check_arity(bands, blocks)?;
        let s = layer_shapes(bands, blocks);
        Ok(FuseNetParams {
            bands,
            blocks,
            head: xavier_init(s[0], rng),
            block: BlockParams {
                conv1: xavier_init(s[1], rng),
                conv2: xavier_init(s[2], rng),
                fuse: xavier_init(s[3], rng),
            },
            global_fuse: xavier_init(s[4], rng),
            tail: xavier_init(s[5], rng),
        })
    }

    /// Bitwise equality of every parameter.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.bands == other.bands
            && self.blocks == other.blocks
            && self.layers().iter().zip(other.layers()).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.weights
                        .iter()
                        .zip(&b.weights)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.bias
                        .iter()
                        .zip(&b.bias)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

fn slope<T: Real>() -> T {
    T::from_f64_lossy(LEAKY_SLOPE)
}

/// One local feature fusion block: two rectified 5x5 convolutions, the
/// concatenation `[x, F1, F2]`, and a linear 1x1 reweighting.
pub fn block_forward<'p, T: Real, G: Graph<'p, T>>(
    g: &mut G,
    x: &G::Var,
    block: &'p BlockParams<T>,
    copy: u16,
) -> Result<G::Var> {
    let c = g.value(x).channels();
    if c != FEATURES {
        return Err(Error::Shape(format!(
            "block expects {FEATURES} channels, got {c}"
        )));
    }
    let f1 = g.conv2d(x, &block.conv1, ParamKey::new(SLOT_BLOCK_CONV1, copy))?;
    let f1 = g.leaky_relu(&f1, slope());
    let f2 = g.conv2d(&f1, &block.conv2, ParamKey::new(SLOT_BLOCK_CONV2, copy))?;
    let f2 = g.leaky_relu(&f2, slope());
    let f3 = g.concat(&[x, &f1, &f2])?;
    g.conv2d(&f3, &block.fuse, ParamKey::new(SLOT_BLOCK_FUSE, copy))
}

fn forward_impl<'p, T: Real, G: Graph<'p, T>>(
    g: &mut G,
    stack: &G::Var,
    p: &'p FuseNetParams<T>,
    blocks: &[(&'p BlockParams<T>, u16)],
    chaining: BlockChaining,
) -> Result<G::Var> {
    let c = g.value(stack).channels();
    if c != p.bands + 1 {
        return Err(Error::Shape(format!(
            "network for {} bands expects {} input channels, got {c}",
            p.bands,
            p.bands + 1
        )));
    }
    let f1 = g.conv2d(stack, &p.head, ParamKey::new(SLOT_HEAD, 0))?;
    let f1 = g.leaky_relu(&f1, slope());

    let mut outputs: Vec<G::Var> = Vec::with_capacity(blocks.len());
    let mut input = f1.clone();
    for (k, &(block, copy)) in blocks.iter().enumerate() {
        if k > 0 {
            input = match chaining {
                BlockChaining::Residual => g.add(&outputs[k - 1], &f1)?,
                BlockChaining::Printed => g.add(&input, &f1)?,
            };
        }
        outputs.push(block_forward(g, &input, block, copy)?);
    }
    let refs: Vec<&G::Var> = outputs.iter().collect();
    let fused = g.concat(&refs)?;
    let fused = g.conv2d(&fused, &p.global_fuse, ParamKey::new(SLOT_GLOBAL, 0))?;
    g.conv2d(&fused, &p.tail, ParamKey::new(SLOT_TAIL, 0))
}

/// The network mapping with tied block parameters and residual chaining.
pub fn forward<'p, T: Real, G: Graph<'p, T>>(
    g: &mut G,
    stack: &G::Var,
    p: &'p FuseNetParams<T>,
) -> Result<G::Var> {
    forward_with(g, stack, p, BlockChaining::Residual)
}

pub fn forward_with<'p, T: Real, G: Graph<'p, T>>(
    g: &mut G,
    stack: &G::Var,
    p: &'p FuseNetParams<T>,
    chaining: BlockChaining,
) -> Result<G::Var> {
    let blocks: Vec<_> = (0..p.blocks).map(|_| (&p.block, 0u16)).collect();
    forward_impl(g, stack, p, &blocks, chaining)
}

/// Forward pass where application `k` uses `blocks[k]` under its own gradient
/// key. With `K` clones of `p.block` the outputs equal [`forward`] and the
/// per-application gradients sum to the tied gradient.
pub fn forward_untied<'p, T: Real, G: Graph<'p, T>>(
    g: &mut G,
    stack: &G::Var,
    p: &'p FuseNetParams<T>,
    blocks: &'p [BlockParams<T>],
) -> Result<G::Var> {
    if blocks.len() != p.blocks {
        return Err(Error::Shape(format!(
            "{} block parameter sets for a {}-block network",
            blocks.len(),
            p.blocks
        )));
    }
    let blocks: Vec<_> = blocks.iter().zip(0u16..).collect();
    forward_impl(g, stack, p, &blocks, BlockChaining::Residual)
}

// ---------------------------------------------------------------------------
// checkpoints

pub fn encode_checkpoint(p: &FuseNetParams<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 4 * p.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [CHECKPOINT_VERSION, p.bands as u32, p.blocks as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in p.layers() {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Header of a checkpoint: `(bands, blocks)`.
pub fn checkpoint_header(bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}",
            String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
        )));
    }
    if bytes.len() < CHECKPOINT_HEADER_LEN {
        return Err(Error::Length(format!(
            "checkpoint header needs {CHECKPOINT_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let (bands, blocks) = (u(8) as usize, u(12) as usize);
    if bands == 0 || blocks == 0 {
        return Err(Error::Format(format!(
            "checkpoint declares B={bands}, K={blocks}"
        )));
    }
    Ok((bands, blocks))
}

// Whether some (B, K) other than the declared one explains a payload of `n` floats.
fn payload_fits_other_shape(n: usize, bands: usize, blocks: usize) -> bool {
    let per_band = param_count(2, 1) - param_count(1, 1);
    let per_block = param_count(1, 2) - param_count(1, 1);
    let base = param_count(1, 1);
    if n < base {
        return false;
    }
    let rest = n - base;
    (0..=rest / per_band).any(|db| {
        let r = rest - db * per_band;
        r.is_multiple_of(per_block) && (db + 1, r / per_block + 1) != (bands, blocks)
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<FuseNetParams<f32>> {
    let (bands, blocks) = checkpoint_header(bytes)?;
    let payload = &bytes[CHECKPOINT_HEADER_LEN..];
    let expected = param_count(bands, blocks);
    if payload.len() != 4 * expected {
        if payload.len().is_multiple_of(4)
            && payload_fits_other_shape(payload.len() / 4, bands, blocks)
        {
            return Err(Error::Format(format!(
                "header B={bands}, K={blocks} disagrees with {} stored parameters",
                payload.len() / 4
            )));
        }
        if payload.len() < 4 * expected {
            return Err(Error::Length(format!(
                "checkpoint truncated: {} payload bytes, expected {}",
                payload.len(),
                4 * expected
            )));
        }
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            payload.len() - 4 * expected
        )));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut p = FuseNetParams::<f32>::zeros(bands, blocks)?;
    for layer in p.layers_mut() {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = floats.next().expect("payload length checked");
        }
    }
    Ok(p)
}

pub fn save_checkpoint(p: &FuseNetParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FuseNetParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
