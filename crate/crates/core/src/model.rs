//! Global state of the multilayer gamma–Poisson generative model: the
//! column-stochastic topic matrices, the top-layer shape vector and the
//! per-layer gamma rates.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::corpus::SparseCounts;
use crate::distributions::{dirichlet_symmetric, gamma_draw};
use crate::error::{dims, invalid, Error, Result};
use crate::rng;

/// Tolerance for the column-sum invariant of every topic matrix.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// `K_0 = V, K_1, …, K_L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSizes(Vec<usize>);

impl LayerSizes {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(invalid("need a vocabulary size and at least one topic layer"));
        }
        if sizes.contains(&0) {
            return Err(invalid("layer sizes must be positive"));
        }
        Ok(LayerSizes(sizes))
    }

    pub fn vocab_size(&self) -> usize {
        self.0[0]
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    /// `K_l` for `l ∈ 0..=L`.
    pub fn width(&self, l: usize) -> usize {
        self.0[l]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl std::fmt::Display for LayerSizes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DldaModel {
    pub sizes: LayerSizes,
    /// `phi[i]` is Φ^(i+1), a `K_i × K_{i+1}` matrix with simplex columns.
    pub phi: Vec<Array2<f64>>,
    /// Top-layer gamma shape, length `K_L`.
    pub r: Array1<f64>,
    /// `c[i]` is the gamma rate of the prior on θ^(i+1).
    pub c: Vec<f64>,
}

/// Latent draws behind one synthetic document; `theta[i]` is θ^(i+1).
#[derive(Debug, Clone, PartialEq)]
pub struct DocLatentsTruth {
    pub theta: Vec<Array1<f64>>,
}

impl DldaModel {
    /// Draws every column of Φ^(l) from Dirichlet(η_l); r = 1 and c = 1.
    pub fn init(sizes: LayerSizes, eta: &[f64], seed: u64) -> Result<Self> {
        let depth = sizes.depth();
        if eta.len() != depth || eta.iter().any(|&e| !(e > 0.0)) {
            return Err(invalid(format!("need {depth} positive Dirichlet concentrations")));
        }
        let mut rng = rng::rng_from(seed);
        let phi = (0..depth)
            .map(|i| {
                let (rows, cols) = (sizes.width(i), sizes.width(i + 1));
                let mut m = Array2::zeros((rows, cols));
                for k in 0..cols {
                    let col = dirichlet_symmetric(eta[i], rows, &mut rng);
                    m.column_mut(k).assign(&Array1::from(col));
                }
                m
            })
            .collect();
        Ok(DldaModel { r: Array1::ones(sizes.width(depth)), c: vec![1.0; depth], sizes, phi })
    }

    /// Model whose topic columns are all uniform distributions.
    pub fn uniform(sizes: LayerSizes) -> Self {
        let depth = sizes.depth();
        let phi = (0..depth)
            .map(|i| Array2::from_elem((sizes.width(i), sizes.width(i + 1)), 1.0 / sizes.width(i) as f64))
            .collect();
        DldaModel { r: Array1::ones(sizes.width(depth)), c: vec![1.0; depth], sizes, phi }
    }

    pub fn from_parts(sizes: LayerSizes, phi: Vec<Array2<f64>>, r: Array1<f64>, c: Vec<f64>) -> Result<Self> {
        let m = DldaModel { sizes, phi, r, c };
        m.validate()?;
        Ok(m)
    }

    pub fn depth(&self) -> usize {
        self.sizes.depth()
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.depth();
        if self.phi.len() != depth || self.c.len() != depth {
            return Err(dims("layer count mismatch"));
        }
        for (i, m) in self.phi.iter().enumerate() {
            if m.dim() != (self.sizes.width(i), self.sizes.width(i + 1)) {
                return Err(dims(format!("Φ^({}) has shape {:?}", i + 1, m.dim())));
            }
            for (k, col) in m.axis_iter(Axis(1)).enumerate() {
                let s: f64 = col.sum();
                if col.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
                    return Err(invalid(format!("column {k} of Φ^({}) is not on the simplex (sum {s})", i + 1)));
                }
            }
        }
        if self.r.len() != self.sizes.width(depth) || self.r.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("r must be a positive vector of length K_L"));
        }
        if self.c.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("gamma rates must be positive"));
        }
        Ok(())
    }

    /// Shape of the gamma prior on θ^(l) (1-based layer) given θ^(l+1).
    pub fn prior_shape(&self, layer: usize, theta_above: Option<ArrayView1<f64>>) -> Array1<f64> {
        match theta_above {
            Some(t) if layer < self.depth() => self.phi[layer].dot(&t),
            _ => self.r.clone(),
        }
    }

    /// Φ^(1) θ^(1).
    pub fn poisson_rates(&self, theta1: ArrayView1<f64>) -> Result<Array1<f64>> {
        if theta1.len() != self.sizes.width(1) {
            return Err(dims(format!("θ^(1) has length {}, expected {}", theta1.len(), self.sizes.width(1))));
        }
        Ok(self.phi[0].dot(&theta1))
    }

    /// `[∏_{t<l} Φ^(t)] φ_k^(l)`: topic `k` of layer `l` expressed over words.
    pub fn project_topic(&self, layer: usize, k: usize) -> Result<Array1<f64>> {
        if layer == 0 || layer > self.depth() {
            return Err(Error::IndexOutOfRange(format!("layer {layer} not in [1, {}]", self.depth())));
        }
        if k >= self.sizes.width(layer) {
            return Err(Error::IndexOutOfRange(format!("topic {k} not in [0, {})", self.sizes.width(layer))));
        }
        let mut v = self.phi[layer - 1].column(k).to_owned();
        for t in (0..layer - 1).rev() {
            v = self.phi[t].dot(&v);
        }
        Ok(v)
    }

    /// All topics of a layer projected to words, one column per topic.
    pub fn projected_topics(&self, layer: usize) -> Result<Array2<f64>> {
        if layer == 0 || layer > self.depth() {
            return Err(Error::IndexOutOfRange(format!("layer {layer} not in [1, {}]", self.depth())));
        }
        let mut m = self.phi[layer - 1].clone();
        for t in (0..layer - 1).rev() {
            m = self.phi[t].dot(&m);
        }
        Ok(m)
    }

    /// Samples `n` documents top-down from the generative model.
    pub fn generate_corpus(&self, n: usize, seed: u64) -> Result<(SparseCounts, Vec<DocLatentsTruth>)> {
        let mut rng = rng::rng_from(seed);
        let depth = self.depth();
        let mut docs = Vec::with_capacity(n);
        let mut truths = Vec::with_capacity(n);
        for _ in 0..n {
            let mut theta = vec![Array1::zeros(0); depth];
            for l in (1..=depth).rev() {
                let shape = if l == depth { self.r.clone() } else { self.phi[l].dot(&theta[l]) };
                theta[l - 1] = shape.mapv(|a| gamma_draw(a, self.c[l - 1], &mut rng));
            }
            let rates = self.phi[0].dot(&theta[0]);
            let doc: Vec<(usize, u32)> = rates
                .iter()
                .enumerate()
                .filter_map(|(v, &lam)| {
                    let x = poisson_draw(lam, &mut rng);
                    (x > 0).then_some((v, x as u32))
                })
                .collect();
            docs.push(doc);
            truths.push(DocLatentsTruth { theta });
        }
        Ok((SparseCounts::from_docs(self.sizes.vocab_size(), docs)?, truths))
    }
}

fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if !(rate > 0.0) {
        return 0;
    }
    let x: f64 = Poisson::new(rate).expect("positive rate").sample(rng);
    x as u64
}
