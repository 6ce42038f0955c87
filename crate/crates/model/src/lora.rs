//! Low-rank adapted linear layers: `h = W x + (alpha / r) B (A x)` with a
//! frozen `W` (d1 x d2), `B` (d1 x r) and `A` (r x d2).
//!
//! Activations are row-major batches, so a batch `X` (n x d2) maps to
//! `H = X W^T + s (X A^T) B^T`.

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ModelError, Result};
use crate::real::Real;

pub const ADAPTER_INIT_STD: f64 = 0.02;

/// Frozen base matrix plus trainable low-rank factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer<T> {
    weight: Array2<T>,
    pub a: Array2<T>,
    pub b: Array2<T>,
    rank: usize,
    alpha: f64,
    pub dropout: f64,
}

impl<T: Real> LoraLayer<T> {
    pub fn weight(&self) -> &Array2<T> {
        &self.weight
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> T {
        T::from_f64(self.alpha / self.rank as f64)
    }

    /// Adapted forward pass. Dropout on the adapter input is applied only
    /// when `rng` is given (training mode).
    pub fn forward<R: Rng + ?Sized>(&self, x: ArrayView2<'_, T>, rng: Option<&mut R>) -> Result<Array2<T>> {
        if x.ncols() != self.weight.ncols() {
            return Err(ModelError::Shape(format!(
                "input has {} features, layer expects {}",
                x.ncols(),
                self.weight.ncols()
            )));
        }
        let mask = rng.and_then(|r| dropout_mask(x.dim(), self.dropout, r));
        let (h, _) = adapted_forward(self.weight.view(), self.a.view(), self.b.view(), self.scale(), x, mask.as_ref());
        Ok(h)
    }

    /// `W + (alpha / r) B A` as a dense matrix.
    pub fn merge_weights(&self) -> Array2<T> {
        &self.weight + &(self.b.dot(&self.a) * self.scale())
    }
}

/// Wrap `weight` with fresh adapter factors: `A ~ N(0, 0.02^2)` from a
/// seeded generator and `B = 0`.
pub fn init_lora<T: Real>(weight: Array2<T>, rank: usize, alpha: f64, dropout: f64, seed: u64) -> Result<LoraLayer<T>> {
    let (d1, d2) = weight.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = init_factors(d1, d2, rank, &mut rng)?;
    Ok(LoraLayer { weight, a, b, rank, alpha, dropout })
}

pub(crate) fn init_factors<T: Real, R: Rng + ?Sized>(
    d1: usize,
    d2: usize,
    rank: usize,
    rng: &mut R,
) -> Result<(Array2<T>, Array2<T>)> {
    if rank == 0 || rank > d1.min(d2) {
        return Err(ModelError::RankOutOfRange { rank, d1, d2 });
    }
    let a = gaussian((rank, d2), ADAPTER_INIT_STD, rng);
    Ok((a, Array2::zeros((d1, rank))))
}

pub(crate) fn gaussian<T: Real, R: Rng + ?Sized>(shape: (usize, usize), std: f64, rng: &mut R) -> Array2<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..shape.0 * shape.1).map(|_| T::from_f64(normal.sample(rng))).collect();
    Array2::from_shape_vec(shape, data).unwrap()
}

/// Inverted-dropout mask: entries are 0 with probability `p`, otherwise
/// `1 / (1 - p)`. `None` when `p == 0`.
pub(crate) fn dropout_mask<T: Real, R: Rng + ?Sized>(dim: (usize, usize), p: f64, rng: &mut R) -> Option<Array2<T>> {
    if p <= 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    Some(Array2::from_shape_simple_fn(dim, || if rng.random::<f64>() < p { T::zero() } else { keep }))
}

/// Returns the output and the adapter bottleneck `U = drop(X) A^T`.
pub(crate) fn adapted_forward<T: Real>(
    w: ArrayView2<'_, T>,
    a: ArrayView2<'_, T>,
    b: ArrayView2<'_, T>,
    scale: T,
    x: ArrayView2<'_, T>,
    mask: Option<&Array2<T>>,
) -> (Array2<T>, Array2<T>) {
    let mut h = x.dot(&w.t());
    let u = match mask {
        Some(m) => (&x * m).dot(&a.t()),
        None => x.dot(&a.t()),
    };
    let delta = u.dot(&b.t());
    Zip::from(&mut h).and(&delta).for_each(|h, &d| *h += scale * d);
    (h, u)
}
