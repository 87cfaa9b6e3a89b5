//! Source/target view pair samplers.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VsaError};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// All indices i.i.d. uniform; source and target may coincide.
    Random,
    /// Uniform source, target is the next view (wrapping around).
    Fixed,
    /// Target equals the first source: plain autoencoding.
    Same,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewPair {
    pub sources: Vec<usize>,
    pub target: usize,
}

pub fn sample_pair_random(n: usize, s: usize, rng: &mut Rng) -> ViewPair {
    let sources = (0..s).map(|_| rng.gen_range(0..n)).collect();
    ViewPair { sources, target: rng.gen_range(0..n) }
}

pub fn sample_pair_fixed(n: usize, rng: &mut Rng) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(VsaError::invalid(format!("the fixed sampler needs at least 2 views, got {n}")));
    }
    let source = rng.gen_range(0..n);
    Ok((source, (source + 1) % n))
}

/// Draw `s` sources and a target. With the fixed sampler, sources after the
/// first are drawn uniformly.
pub fn sample_pair(kind: SamplerKind, n: usize, s: usize, rng: &mut Rng) -> Result<ViewPair> {
    if n == 0 || s == 0 {
        return Err(VsaError::invalid(format!("cannot sample {s} sources from {n} views")));
    }
    match kind {
        SamplerKind::Random => Ok(sample_pair_random(n, s, rng)),
        SamplerKind::Fixed => {
            let (first, target) = sample_pair_fixed(n, rng)?;
            let mut sources = vec![first];
            sources.extend((1..s).map(|_| rng.gen_range(0..n)));
            Ok(ViewPair { sources, target })
        }
        SamplerKind::Same => {
            let mut sources: Vec<usize> = vec![rng.gen_range(0..n)];
            sources.extend((1..s).map(|_| rng.gen_range(0..n)));
            Ok(ViewPair { target: sources[0], sources })
        }
    }
}
