//! Latent representations and the transforms among them.
//!
//! A style-based generator works through a chain of spaces: noise `Z` is
//! mapped to an intermediate space `W`, one `W` vector per synthesis
//! layer forms `W+`, and per-layer affine transforms of `W+` produce the
//! style code in `S`. The mapping network ends in a LeakyReLU with slope
//! 0.2, so inverting that last activation (slope 5.0 on the negative
//! half-line) exposes a pre-activation space `P` that is close to
//! multivariate Gaussian. Fitting a Gaussian there gives a cheap density
//! model: the energy of a `P+` code under the fitted Gaussian is the
//! regularizer used by latent fine-tuning.
//!
//! All types here are immutable values; the transforms are pure and can
//! be evaluated from any number of threads.

use crate::generator::Generator;
use crate::linalg::spd_inverse;
use crate::{Error, Result};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Slope applied to the negative half-line when mapping `W -> P`
/// (the inverse of a LeakyReLU with slope 0.2).
pub const W_TO_P_SLOPE: f64 = 5.0;
/// Slope applied to the negative half-line when mapping `P -> W`.
pub const P_TO_W_SLOPE: f64 = 0.2;

fn ensure_finite(values: &Array1<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

/// Noise-space vector, input to the mapping network.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentZ(pub Array1<f64>);

impl LatentZ {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        ensure_finite(&values, "latent z")?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Intermediate-space vector, output of the mapping network.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentW(pub Array1<f64>);

impl LatentW {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        ensure_finite(&values, "latent w")?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Pre-activation counterpart of a `W` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentP(pub Array1<f64>);

impl LatentP {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        ensure_finite(&values, "latent p")?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One `W` vector per synthesis layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentWPlus {
    pub layers: Vec<Array1<f64>>,
}

impl LatentWPlus {
    /// All layers must share one dimension and be finite.
    pub fn new(layers: Vec<Array1<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("w+ needs at least one layer".into()));
        }
        let d = layers[0].len();
        for (i, layer) in layers.iter().enumerate() {
            if layer.len() != d {
                return Err(Error::InvalidInput(format!(
                    "w+ layer {i} has dimension {} but layer 0 has {d}",
                    layer.len()
                )));
            }
            ensure_finite(layer, &format!("w+ layer {i}"))?;
        }
        Ok(Self { layers })
    }

    /// `w+` with every layer equal to the same `w` vector.
    pub fn broadcast(w: &LatentW, layer_count: usize) -> Result<Self> {
        Self::new(vec![w.0.clone(); layer_count])
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_dim(&self) -> usize {
        self.layers[0].len()
    }
}

/// One `P` vector per synthesis layer; elementwise image of a
/// [`LatentWPlus`] under [`w_to_p`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPPlus {
    pub layers: Vec<Array1<f64>>,
}

impl LatentPPlus {
    pub fn new(layers: Vec<Array1<f64>>) -> Result<Self> {
        let wp = LatentWPlus::new(layers)?;
        Ok(Self { layers: wp.layers })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_dim(&self) -> usize {
        self.layers[0].len()
    }
}

/// Scalar `W -> P` transform: identity on the positive half-line, slope
/// 5.0 on the negative one.
#[inline]
pub fn w_to_p_scalar(w: f64) -> f64 {
    if w >= 0.0 {
        w
    } else {
        W_TO_P_SLOPE * w
    }
}

/// Scalar `P -> W` transform, the inverse of [`w_to_p_scalar`] up to
/// float rounding (within 1 ulp).
#[inline]
pub fn p_to_w_scalar(p: f64) -> f64 {
    if p >= 0.0 {
        p
    } else {
        P_TO_W_SLOPE * p
    }
}

/// Map a `W` vector into `P` space.
pub fn w_to_p(w: &LatentW) -> Result<LatentP> {
    ensure_finite(&w.0, "latent w")?;
    Ok(LatentP(w.0.mapv(w_to_p_scalar)))
}

/// Map a `P` vector back into `W` space.
pub fn p_to_w(p: &LatentP) -> Result<LatentW> {
    ensure_finite(&p.0, "latent p")?;
    Ok(LatentW(p.0.mapv(p_to_w_scalar)))
}

/// Layerwise `W+ -> P+`.
pub fn wplus_to_pplus(wp: &LatentWPlus) -> Result<LatentPPlus> {
    let layers = wp
        .layers
        .iter()
        .map(|layer| layer.mapv(w_to_p_scalar))
        .collect();
    LatentPPlus::new(layers)
}

/// Layerwise `P+ -> W+`.
pub fn pplus_to_wplus(pp: &LatentPPlus) -> Result<LatentWPlus> {
    let layers = pp
        .layers
        .iter()
        .map(|layer| layer.mapv(p_to_w_scalar))
        .collect();
    LatentWPlus::new(layers)
}

/// Per-layer style vectors produced by the generator's affine
/// transforms; the object both attacks mutate.
///
/// The flat channel index used by [`ChannelMask`] runs layer by layer in
/// order, channel by channel within a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleCode {
    pub layers: Vec<Array1<f64>>,
}

impl StyleCode {
    pub fn new(layers: Vec<Array1<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("style code needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            ensure_finite(layer, &format!("style layer {i}"))?;
        }
        Ok(Self { layers })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Per-layer channel counts.
    pub fn layout(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.len()).collect()
    }

    pub fn channel_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn same_layout(&self, other: &StyleCode) -> bool {
        self.layout() == other.layout()
    }

    /// Concatenate all layers into one `C`-vector.
    pub fn flatten(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.channel_count());
        for layer in &self.layers {
            out.extend(layer.iter().copied());
        }
        Array1::from_vec(out)
    }

    /// Rebuild a style code from a flat `C`-vector and a per-layer layout.
    pub fn from_flat(layout: &[usize], flat: &Array1<f64>) -> Result<Self> {
        let total: usize = layout.iter().sum();
        if flat.len() != total {
            return Err(Error::InvalidInput(format!(
                "flat vector has {} entries but layout needs {total}",
                flat.len()
            )));
        }
        let mut layers = Vec::with_capacity(layout.len());
        let mut off = 0;
        for &d in layout {
            layers.push(Array1::from_iter(flat.iter().skip(off).take(d).copied()));
            off += d;
        }
        Self::new(layers)
    }

    /// Map a flat channel index to `(layer, channel-within-layer)`.
    pub fn locate(&self, flat_index: usize) -> Option<(usize, usize)> {
        let mut off = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            if flat_index < off + layer.len() {
                return Some((li, flat_index - off));
            }
            off += layer.len();
        }
        None
    }
}

/// Binary editability vector over the flat style-channel index: bit 1
/// means the channel may be modified, 0 means it is frozen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMask {
    bits: Vec<bool>,
}

impl ChannelMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![false; len] }
    }

    pub fn ones(len: usize) -> Self {
        Self { bits: vec![true; len] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Bitwise `self <= other` (every set bit of `self` is set in `other`).
    pub fn is_subset_of(&self, other: &ChannelMask) -> bool {
        self.bits.len() == other.bits.len()
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(&a, &b)| !a || b)
    }
}

/// Ridge added to an estimated covariance before inversion.
pub const COVARIANCE_RIDGE: f64 = 1e-4;

/// Minimum sample multiple (relative to the dimension) accepted when
/// fitting [`GaussianStats`].
pub const MIN_SAMPLES_PER_DIM: usize = 10;

/// Empirical Gaussian fit of the `P` space: mean, covariance, and the
/// cached precision matrix used by [`gaussian_energy`].
#[derive(Debug, Clone)]
pub struct GaussianStats {
    mean: Array1<f64>,
    covariance: Array2<f64>,
    precision: Array2<f64>,
    sample_count: usize,
    seed: Option<u64>,
}

impl GaussianStats {
    /// Validate and cache the precision matrix.
    ///
    /// The covariance must be symmetric within 1e-6 and positive
    /// definite, `sample_count` must be at least 10x the dimension, and
    /// the cached precision must reproduce the identity within 1e-4.
    pub fn new(
        mean: Array1<f64>,
        covariance: Array2<f64>,
        sample_count: usize,
        seed: Option<u64>,
    ) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{} but mean has dimension {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        ensure_finite(&mean, "mean")?;
        for i in 0..d {
            for j in 0..i {
                if (covariance[[i, j]] - covariance[[j, i]]).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "covariance asymmetric at ({i},{j}): {} vs {}",
                        covariance[[i, j]],
                        covariance[[j, i]]
                    )));
                }
            }
        }
        if sample_count < MIN_SAMPLES_PER_DIM * d {
            return Err(Error::Config(format!(
                "sample_count {sample_count} is below {MIN_SAMPLES_PER_DIM} samples per dimension (d = {d})"
            )));
        }
        let precision = spd_inverse(&covariance)?;
        // Σ⁻¹ Σ ≈ I is the contract for the cached precision.
        let prod = precision.dot(&covariance);
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                if (prod[[i, j]] - want).abs() > 1e-4 {
                    return Err(Error::InvalidInput(format!(
                        "precision check failed at ({i},{j}): {}",
                        prod[[i, j]]
                    )));
                }
            }
        }
        Ok(Self {
            mean,
            covariance,
            precision,
            sample_count,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &Array2<f64> {
        &self.precision
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Serialize to the versioned JSON document (row-major covariance).
    pub fn to_json(&self) -> Result<String> {
        let doc = GaussianStatsFile {
            version: GAUSSIAN_STATS_VERSION,
            dim: self.dim(),
            mean: self.mean.to_vec(),
            covariance: self.covariance.iter().copied().collect(),
            sample_count: self.sample_count,
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GaussianStatsFile = serde_json::from_str(text)?;
        if doc.version != GAUSSIAN_STATS_VERSION {
            return Err(Error::Config(format!(
                "unsupported stats document version {}",
                doc.version
            )));
        }
        if doc.mean.len() != doc.dim || doc.covariance.len() != doc.dim * doc.dim {
            return Err(Error::Config("stats document has inconsistent shapes".into()));
        }
        let mean = Array1::from_vec(doc.mean);
        let covariance =
            Array2::from_shape_vec((doc.dim, doc.dim), doc.covariance).expect("shape checked");
        Self::new(mean, covariance, doc.sample_count, doc.seed)
    }
}

const GAUSSIAN_STATS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GaussianStatsFile {
    version: u32,
    dim: usize,
    mean: Vec<f64>,
    covariance: Vec<f64>,
    sample_count: usize,
    seed: Option<u64>,
}

/// Gaussian energy of a `P+` code: `Σ_i (p_i - μ)ᵀ Σ⁻¹ (p_i - μ)`.
///
/// The full-stack covariance is block diagonal (one shared `Σ` per
/// layer), so the sum runs layer by layer against the cached precision;
/// the `L·d_w` square matrix is never formed.
pub fn gaussian_energy(pp: &LatentPPlus, stats: &GaussianStats) -> Result<f64> {
    let d = stats.dim();
    if pp.layer_dim() != d {
        return Err(Error::InvalidInput(format!(
            "p+ layer dimension {} does not match stats dimension {d}",
            pp.layer_dim()
        )));
    }
    let mut total = 0.0;
    for layer in &pp.layers {
        ensure_finite(layer, "p+ layer")?;
        let centered = layer - stats.mean();
        let tmp = stats.precision().dot(&centered);
        total += centered.dot(&tmp);
    }
    Ok(total)
}

/// Gradient of [`gaussian_energy`] with respect to each `P+` layer:
/// `2 Σ⁻¹ (p_i - μ)`.
pub fn gaussian_energy_grad(pp: &LatentPPlus, stats: &GaussianStats) -> Result<Vec<Array1<f64>>> {
    let d = stats.dim();
    if pp.layer_dim() != d {
        return Err(Error::InvalidInput(format!(
            "p+ layer dimension {} does not match stats dimension {d}",
            pp.layer_dim()
        )));
    }
    Ok(pp
        .layers
        .iter()
        .map(|layer| {
            let centered = layer - stats.mean();
            stats.precision().dot(&centered) * 2.0
        })
        .collect())
}

/// Fit the `P`-space Gaussian by pushing standard-normal samples through
/// the generator's mapping network and the `W -> P` transform.
///
/// Deterministic for a fixed seed. A ridge of `1e-4` is added to the
/// covariance diagonal before inversion.
pub fn estimate_gaussian_stats<G: Generator + ?Sized>(
    generator: &G,
    num_samples: usize,
    seed: u64,
) -> Result<GaussianStats> {
    let d_z = generator.dims().d_z;
    let d_w = generator.dims().d_w;
    if num_samples < MIN_SAMPLES_PER_DIM * d_w {
        return Err(Error::Config(format!(
            "num_samples {num_samples} is below {MIN_SAMPLES_PER_DIM} samples per dimension (d_w = {d_w})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut mean = Array1::<f64>::zeros(d_w);
    let mut scatter = Array2::<f64>::zeros((d_w, d_w));
    for _ in 0..num_samples {
        let z = LatentZ(Array1::from_shape_fn(d_z, |_| normal.sample(&mut rng)));
        let w = generator.map_latent(&z)?;
        let p = w_to_p(&w)?;
        mean += &p.0;
        for i in 0..d_w {
            let pi = p.0[i];
            for j in 0..=i {
                scatter[[i, j]] += pi * p.0[j];
            }
        }
    }
    let n = num_samples as f64;
    mean /= n;
    let mut covariance = Array2::<f64>::zeros((d_w, d_w));
    for i in 0..d_w {
        for j in 0..=i {
            let c = scatter[[i, j]] / n - mean[i] * mean[j];
            covariance[[i, j]] = c;
            covariance[[j, i]] = c;
        }
        covariance[[i, i]] += COVARIANCE_RIDGE;
    }
    GaussianStats::new(mean, covariance, num_samples, Some(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn ulp(x: f64) -> f64 {
        f64::EPSILON * x.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn w_to_p_positive_branch_is_identity() {
        let p = w_to_p(&LatentW(array![2.0])).unwrap();
        assert_eq!(p.0, array![2.0]);
    }

    #[test]
    fn w_to_p_negative_branch_scales_by_five() {
        let p = w_to_p(&LatentW(array![-1.0])).unwrap();
        assert_eq!(p.0, array![-5.0]);
    }

    #[test]
    fn p_to_w_inverts_negative_branch() {
        let w = p_to_w(&LatentP(array![-5.0])).unwrap();
        assert_eq!(w.0, array![-1.0]);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        assert_eq!(p_to_w_scalar(0.0), 0.0);
        assert_eq!(w_to_p_scalar(0.0), 0.0);
    }

    #[test]
    fn round_trip_on_sample_points() {
        for x in [-3.0, 0.0, 7.0] {
            assert_eq!(p_to_w_scalar(w_to_p_scalar(x)), x);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(w_to_p(&LatentW(array![f64::NAN])).is_err());
        assert!(p_to_w(&LatentP(array![f64::INFINITY])).is_err());
    }

    #[test]
    fn wplus_to_pplus_is_layerwise_and_shape_preserving() {
        let wp = LatentWPlus::new(vec![array![1.0, -1.0]; 6]).unwrap();
        let pp = wplus_to_pplus(&wp).unwrap();
        assert_eq!(pp.layer_count(), 6);
        for layer in &pp.layers {
            assert_eq!(layer, &array![1.0, -5.0]);
        }

        let zero = LatentWPlus::new(vec![Array1::zeros(4); 3]).unwrap();
        let pp = wplus_to_pplus(&zero).unwrap();
        assert!(pp.layers.iter().all(|l| l.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn energy_is_zero_at_the_mean() {
        let stats = GaussianStats::new(
            array![0.5, -0.25],
            Array2::eye(2),
            40,
            None,
        )
        .unwrap();
        let pp = LatentPPlus::new(vec![array![0.5, -0.25]; 3]).unwrap();
        assert!(gaussian_energy(&pp, &stats).unwrap().abs() < 1e-12);
    }

    #[test]
    fn unit_offset_under_identity_covariance_has_energy_one() {
        let stats = GaussianStats::new(Array1::zeros(3), Array2::eye(3), 40, None).unwrap();
        let mut layers = vec![Array1::zeros(3); 2];
        layers[1][0] = 1.0;
        let pp = LatentPPlus::new(layers).unwrap();
        assert!((gaussian_energy(&pp, &stats).unwrap() - 1.0).abs() < 1e-12);
    }

    /// Dense oracle: materialize the block-diagonal full-stack precision
    /// (identity-Kronecker structure) and evaluate the quadratic form on
    /// the concatenated vector.
    fn dense_energy_oracle(pp: &LatentPPlus, stats: &GaussianStats) -> f64 {
        let d = stats.dim();
        let l = pp.layer_count();
        let n = l * d;
        let mut big = Array2::<f64>::zeros((n, n));
        for blk in 0..l {
            for i in 0..d {
                for j in 0..d {
                    big[[blk * d + i, blk * d + j]] = stats.precision()[[i, j]];
                }
            }
        }
        let mut flat = Array1::<f64>::zeros(n);
        let mut mu = Array1::<f64>::zeros(n);
        for blk in 0..l {
            for i in 0..d {
                flat[blk * d + i] = pp.layers[blk][i];
                mu[blk * d + i] = stats.mean()[i];
            }
        }
        let centered = &flat - &mu;
        centered.dot(&big.dot(&centered))
    }

    #[test]
    fn energy_matches_dense_kronecker_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let d = 4;
            let l = 2;
            // Random SPD covariance: AᵀA + ridge.
            let a = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
            let cov = a.t().dot(&a) + Array2::<f64>::eye(d) * 0.1;
            let mean = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
            let stats = GaussianStats::new(mean, cov, 100, None).unwrap();
            let layers = (0..l)
                .map(|_| Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0)))
                .collect();
            let pp = LatentPPlus::new(layers).unwrap();
            let fast = gaussian_energy(&pp, &stats).unwrap();
            let dense = dense_energy_oracle(&pp, &stats);
            assert!((fast - dense).abs() < 1e-8, "fast {fast} vs dense {dense}");
        }
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 4;
        let a = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        let cov = a.t().dot(&a) + Array2::<f64>::eye(d) * 0.1;
        let stats = GaussianStats::new(Array1::zeros(d), cov, 100, None).unwrap();
        let layers: Vec<Array1<f64>> = (0..2)
            .map(|_| Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)))
            .collect();
        let pp = LatentPPlus::new(layers.clone()).unwrap();
        let grad = gaussian_energy_grad(&pp, &stats).unwrap();
        let h = 1e-6;
        for li in 0..2 {
            for i in 0..d {
                let mut plus = layers.clone();
                plus[li][i] += h;
                let mut minus = layers.clone();
                minus[li][i] -= h;
                let fd = (gaussian_energy(&LatentPPlus::new(plus).unwrap(), &stats).unwrap()
                    - gaussian_energy(&LatentPPlus::new(minus).unwrap(), &stats).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[li][i]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn energy_invariant_under_layer_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let a = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        let cov = a.t().dot(&a) + Array2::<f64>::eye(d) * 0.1;
        let stats = GaussianStats::new(Array1::zeros(d), cov, 100, None).unwrap();
        let layers: Vec<Array1<f64>> = (0..4)
            .map(|_| Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0)))
            .collect();
        let forward = gaussian_energy(&LatentPPlus::new(layers.clone()).unwrap(), &stats).unwrap();
        let mut reversed = layers;
        reversed.reverse();
        let backward = gaussian_energy(&LatentPPlus::new(reversed).unwrap(), &stats).unwrap();
        assert!((forward - backward).abs() < 1e-12);
    }

    #[test]
    fn stats_reject_asymmetric_covariance_and_small_samples() {
        let mut cov = Array2::<f64>::eye(2);
        cov[[0, 1]] = 0.5;
        assert!(GaussianStats::new(Array1::zeros(2), cov, 100, None).is_err());
        assert!(GaussianStats::new(Array1::zeros(2), Array2::eye(2), 19, None).is_err());
    }

    #[test]
    fn stats_json_round_trip() {
        let stats = GaussianStats::new(
            array![0.1, -0.2],
            array![[1.5, 0.2], [0.2, 0.9]],
            50,
            Some(99),
        )
        .unwrap();
        let text = stats.to_json().unwrap();
        let back = GaussianStats::from_json(&text).unwrap();
        assert_eq!(back.mean(), stats.mean());
        assert_eq!(back.covariance(), stats.covariance());
        assert_eq!(back.sample_count(), 50);
        assert_eq!(back.seed(), Some(99));
    }

    proptest! {
        #[test]
        fn round_trip_within_one_ulp(x in -1e12f64..1e12) {
            let back = p_to_w_scalar(w_to_p_scalar(x));
            prop_assert!((back - x).abs() <= ulp(x));
        }

        #[test]
        fn forward_trip_within_one_ulp(y in -1e12f64..1e12) {
            // w_to_p(p_to_w(y)) = y for random y.
            let back = w_to_p_scalar(p_to_w_scalar(y));
            prop_assert!((back - y).abs() <= 5.0 * ulp(y) / 4.0);
        }

        #[test]
        fn energy_non_negative(vals in prop::collection::vec(-3.0f64..3.0, 8)) {
            let stats = GaussianStats::new(
                Array1::zeros(4),
                Array2::eye(4) * 0.7,
                40,
                None,
            ).unwrap();
            let layers = vec![
                Array1::from_vec(vals[0..4].to_vec()),
                Array1::from_vec(vals[4..8].to_vec()),
            ];
            let pp = LatentPPlus::new(layers).unwrap();
            prop_assert!(gaussian_energy(&pp, &stats).unwrap() >= -1e-9);
        }
    }
}
