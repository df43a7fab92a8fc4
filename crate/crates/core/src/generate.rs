//! Random instances: two weighted point clouds in R^3 whose coordinates are
//! drawn from a five-component 1-D Gaussian mixture, with squared Euclidean
//! cost normalized to a unit maximum.

use ndarray::{Array1, Array2};
use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{OtError, Result};
use crate::numeric::sum;
use crate::problem::OtInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub means: Vec<f64>,
    pub variance: f64,
    pub support_dim: usize,
}

impl GenConfig {
    pub fn new(m: usize, n: usize, seed: u64) -> Self {
        Self {
            m,
            n,
            seed,
            means: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
            variance: 5.0,
            support_dim: 3,
        }
    }
}

struct Mixture {
    weights: Vec<f64>,
    components: Vec<Normal<f64>>,
}

impl Mixture {
    fn draw_weights(rng: &mut ChaCha8Rng, means: &[f64], variance: f64) -> Self {
        let raw: Vec<f64> = (0..means.len()).map(|_| Open01.sample(rng)).collect();
        let total = sum(raw.iter().copied());
        let weights = raw.iter().map(|w| w / total).collect();
        let sd = variance.sqrt();
        let components = means
            .iter()
            .map(|&mu| Normal::new(mu, sd).expect("finite positive standard deviation"))
            .collect();
        Self { weights, components }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = Open01.sample(rng);
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = k;
                break;
            }
        }
        self.components[pick].sample(rng)
    }
}

fn probability_vector(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    let raw: Array1<f64> = (0..len).map(|_| Open01.sample(rng)).collect();
    let total = sum(raw.iter().copied());
    raw / total
}

fn support(rng: &mut ChaCha8Rng, cfg: &GenConfig, count: usize) -> Array2<f64> {
    let mixture = Mixture::draw_weights(rng, &cfg.means, cfg.variance);
    Array2::from_shape_fn((count, cfg.support_dim), |_| mixture.sample(rng))
}

/// Deterministic in `cfg.seed` (ChaCha8 stream).
pub fn generate(cfg: &GenConfig) -> Result<OtInstance> {
    if cfg.m == 0 || cfg.n == 0 || cfg.support_dim == 0 || cfg.means.is_empty() {
        return Err(OtError::InvalidConfig("generator dimensions must be positive".into()));
    }
    if !(cfg.variance > 0.0) {
        return Err(OtError::InvalidConfig("mixture variance must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = probability_vector(&mut rng, cfg.m);
    let b = probability_vector(&mut rng, cfg.n);
    let p = support(&mut rng, cfg, cfg.m);
    let q = support(&mut rng, cfg, cfg.n);

    let mut cost = Array2::from_shape_fn((cfg.m, cfg.n), |(i, j)| {
        sum((0..cfg.support_dim).map(|d| {
            let diff = p[[i, d]] - q[[j, d]];
            diff * diff
        }))
    });
    let max = cost.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        cost.mapv_inplace(|c| c / max);
    }
    OtInstance::new(cost, a, b)
}
