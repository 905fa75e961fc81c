//! Parameter store and the building blocks shared by the model branches.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{Graph, Scalar, Tensor, Var};

/// LayerNorm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::argument(format!("no parameter named {name}")))?;
        if tensor.shape() != self.tensors[i].shape() {
            return Err(Error::Dimension {
                op: "set_param",
                lhs: self.tensors[i].shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Adds every parameter to `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone().with_grad())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }
}

/// Initialization helper carrying the RNG while a model is built.
pub(crate) struct Builder<'a, T, R: ?Sized> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Scalar, R: Rng + ?Sized> Builder<'_, T, R> {
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> usize {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = Tensor::uniform([fan_in, fan_out], bound, self.rng);
        self.store.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: [usize; 2]) -> usize {
        self.store.add(name, Tensor::zeros(shape))
    }

    pub fn normal(&mut self, name: &str, shape: [usize; 2], std: f64) -> usize {
        let t = Tensor::<T>::randn(shape, self.rng).map(|v| v * T::of(std));
        self.store.add(name, t)
    }

    pub fn full(&mut self, name: &str, shape: [usize; 2], value: f64) -> usize {
        self.store.add(name, Tensor::full(shape, T::of(value)))
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize, bias: bool) -> Linear {
        let w = self.xavier(&format!("{name}.w"), din, dout);
        let b = bias.then(|| self.zeros(&format!("{name}.b"), [1, dout]));
        Linear { w, b }
    }

    pub fn zero_linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        let w = self.zeros(&format!("{name}.w"), [din, dout]);
        let b = Some(self.zeros(&format!("{name}.b"), [1, dout]));
        Linear { w, b }
    }

    pub fn adaln(&mut self, name: &str, d_cond: usize, d: usize) -> AdaLn {
        AdaLn {
            scale: self.zero_linear(&format!("{name}.scale"), d_cond, d),
            shift: self.zero_linear(&format!("{name}.shift"), d_cond, d),
        }
    }

    pub fn attention(&mut self, name: &str, d_q: usize, d_kv: usize, d: usize, heads: usize) -> Mha {
        Mha {
            q: self.linear(&format!("{name}.q"), d_q, d, false),
            k: self.linear(&format!("{name}.k"), d_kv, d, false),
            v: self.linear(&format!("{name}.v"), d_kv, d, false),
            o: self.linear(&format!("{name}.o"), d, d, false),
            heads,
        }
    }

    pub fn block(&mut self, name: &str, d: usize, d_cond: usize, heads: usize, ff_mult: usize) -> Block {
        Block {
            norm1: self.adaln(&format!("{name}.norm1"), d_cond, d),
            attn: self.attention(&format!("{name}.attn"), d, d, d, heads),
            norm2: self.adaln(&format!("{name}.norm2"), d_cond, d),
            ff1: self.linear(&format!("{name}.ff1"), d, d * ff_mult, true),
            ff2: self.linear(&format!("{name}.ff2"), d * ff_mult, d, true),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        match self.b {
            Some(b) => g.add_row(y, p[b]),
            None => Ok(y),
        }
    }
}

/// `LN(x) * (1 + scale(c)) + shift(c)`; identity modulation at zero init.
#[derive(Debug, Clone)]
pub struct AdaLn {
    pub scale: Linear,
    pub shift: Linear,
}

impl AdaLn {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var, cond: Var) -> Result<Var> {
        let h = g.layer_norm_plain(x, T::of(LN_EPS));
        modulate(g, p, &self.scale, &self.shift, h, cond)
    }
}

/// `x * (1 + scale(c)) + shift(c)` row-wise.
pub fn modulate<T: Scalar>(g: &mut Graph<T>, p: &[Var], scale: &Linear, shift: &Linear, x: Var, cond: Var) -> Result<Var> {
    let s = scale.apply(g, p, cond)?;
    let b = shift.apply(g, p, cond)?;
    let xs = g.mul_row(x, s)?;
    let x = g.add(x, xs)?;
    g.add_row(x, b)
}

/// Multi-head attention without biases.
#[derive(Debug, Clone)]
pub struct Mha {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Mha {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], xq: Var, xkv: Var) -> Result<Var> {
        let q = self.q.apply(g, p, xq)?;
        let k = self.k.apply(g, p, xkv)?;
        let v = self.v.apply(g, p, xkv)?;
        let d = g.shape(q)[1];
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let out = if self.heads == 1 {
            g.attention(q, k, v, scale)?
        } else {
            let mut parts = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(v, h * dh, dh)?;
                parts.push(g.attention(qh, kh, vh, scale)?);
            }
            g.concat_cols(&parts)?
        };
        self.o.apply(g, p, out)
    }
}

/// Pre-norm transformer block with AdaLN conditioning.
#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: AdaLn,
    pub attn: Mha,
    pub norm2: AdaLn,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl Block {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var, cond: Var) -> Result<Var> {
        let h = self.norm1.apply(g, p, x, cond)?;
        let a = self.attn.apply(g, p, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm2.apply(g, p, x, cond)?;
        let h = self.ff1.apply(g, p, h)?;
        let h = g.gelu(h);
        let h = self.ff2.apply(g, p, h)?;
        g.add(x, h)
    }
}

/// Fixed sinusoidal table, `rows x dim`.
pub fn sinusoidal<T: Scalar>(rows: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn([rows, dim], |i| {
        let (pos, c) = ((i / dim) as f64, i % dim);
        let freq = 10000f64.powf(-((c / 2 * 2) as f64) / dim as f64);
        T::of(if c % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() })
    })
}

/// Sinusoidal embedding of a single timestep, `1 x dim`.
pub fn timestep_embedding<T: Scalar>(t: usize, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    Tensor::from_fn([1, dim], |c| {
        let k = c % half.max(1);
        let freq = 10000f64.powf(-(k as f64) / half.max(1) as f64);
        let a = t as f64 * freq;
        T::of(if c < half { a.sin() } else { a.cos() })
    })
}
