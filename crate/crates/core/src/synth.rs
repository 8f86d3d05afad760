//! Ground-truth latent-variable Gaussian models.
//!
//! Observed variables occupy indices `0..p` of the joint precision and latents `p..p+h`.
//! The conditional graph among observed variables has bounded degree, each latent couples to a
//! fixed fraction of the observed variables, and latents are conditionally independent of each
//! other. Positive definiteness comes from diagonal dominance.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::marginal_precision;
use crate::linalg::{self, Matrix, SymEigen};

/// Name of the generator recorded in exported models.
pub const RNG_NAME: &str = "xoshiro256++ (seed_from_u64)";
/// Guaranteed lower bound on the smallest eigenvalue of `K_joint`.
pub const EIGEN_MARGIN: f64 = 0.1;
const MODEL_FORMAT: &str = "lvgm-model";

pub(crate) fn rng_from_seed(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub p: usize,
    pub h: usize,
    pub max_degree: usize,
    /// Fraction of observed variables each latent couples to, in `(0, 1]`.
    pub latent_fanout: f64,
    pub edge_strength: f64,
    pub latent_strength: f64,
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be >= 1".into()));
        }
        if self.max_degree >= self.p && self.p > 1 {
            return Err(Error::InvalidParameter(format!(
                "max_degree {} must be < p = {}",
                self.max_degree, self.p
            )));
        }
        if !(self.latent_fanout > 0.0 && self.latent_fanout <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "latent_fanout must lie in (0, 1], got {}",
                self.latent_fanout
            )));
        }
        if !self.edge_strength.is_finite() || !self.latent_strength.is_finite() {
            return Err(Error::InvalidParameter("strengths must be finite".into()));
        }
        Ok(())
    }

    /// `⌈fanout·p⌉`, the number of observed neighbours of every latent.
    pub fn latent_degree(&self) -> usize {
        ((self.latent_fanout * self.p as f64).ceil() as usize).clamp(1, self.p)
    }

    /// Edges the graph sampler tries to place: enough to saturate every degree cap.
    pub fn target_edges(&self) -> usize {
        self.p * self.max_degree / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub params: GeneratorParams,
    pub seed: u64,
    pub k_joint: Matrix,
    pub s_star: Matrix,
    pub l_star: Matrix,
    pub k_o: Matrix,
    pub cov_o: Matrix,
    /// Conditional graph on the observed variables, `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl SyntheticModel {
    pub fn p(&self) -> usize {
        self.params.p
    }

    pub fn h(&self) -> usize {
        self.params.h
    }

    fn from_joint(params: GeneratorParams, seed: u64, k_joint: Matrix, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        let (p, h) = (params.p, params.h);
        let observed: Vec<usize> = (0..p).collect();
        let latent: Vec<usize> = (p..p + h).collect();
        let m = marginal_precision(&k_joint, &observed, &latent)?;
        let cov_o = linalg::pd_inverse(&m.k_o)?;
        edges.sort_unstable();
        Ok(SyntheticModel {
            params,
            seed,
            k_joint,
            s_star: m.s_star,
            l_star: m.l_star,
            k_o: m.k_o,
            cov_o,
            edges,
        })
    }

    /// Checks the structural invariants of a (possibly externally supplied) model.
    pub fn validate(&self) -> Result<()> {
        let (p, h) = (self.p(), self.h());
        linalg::ensure_dim(&self.k_joint, p + h)?;
        if linalg::relative_asymmetry(&self.k_joint) > 0.0 {
            return Err(Error::InvalidModel("K_joint is not symmetric".into()));
        }
        let min = linalg::min_eigenvalue(&self.k_joint);
        if min < EIGEN_MARGIN * (1.0 - 1e-9) {
            return Err(Error::InvalidModel(format!(
                "K_joint smallest eigenvalue {min} is below the margin {EIGEN_MARGIN}"
            )));
        }
        let mut degree = vec![0usize; p];
        for &(i, j) in &self.edges {
            if i >= j || j >= p {
                return Err(Error::InvalidModel(format!("edge ({i}, {j}) is not an upper-triangle pair")));
            }
            degree[i] += 1;
            degree[j] += 1;
        }
        if let Some(d) = degree.iter().copied().max() {
            if d > self.params.max_degree {
                return Err(Error::InvalidModel(format!(
                    "graph degree {d} exceeds max_degree {}",
                    self.params.max_degree
                )));
            }
        }
        let support: Vec<(usize, usize)> = (0..p)
            .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
            .filter(|&(i, j)| self.s_star[(i, j)] != 0.0)
            .collect();
        if support != self.edges {
            return Err(Error::InvalidModel("support of S* does not match the edge list".into()));
        }
        Ok(())
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            rng: RNG_NAME.to_string(),
            seed: self.seed,
            p: self.p(),
            h: self.h(),
            params: self.params,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            k_joint: self.k_joint.transpose().iter().copied().collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(Error::InvalidModel(format!("unexpected format tag '{}'", doc.format)));
        }
        if doc.p != doc.params.p || doc.h != doc.params.h {
            return Err(Error::InvalidModel("p/h disagree with the parameter block".into()));
        }
        let dim = doc.p + doc.h;
        if doc.k_joint.len() != dim * dim {
            return Err(Error::InvalidModel(format!(
                "K_joint has {} entries, expected {}",
                doc.k_joint.len(),
                dim * dim
            )));
        }
        let k_joint = DMatrix::from_row_slice(dim, dim, &doc.k_joint);
        let edges = doc.edges.iter().map(|e| (e[0], e[1])).collect();
        let model = Self::from_joint(doc.params, doc.seed, k_joint, edges)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// Serialized form of a [`SyntheticModel`]; `k_joint` is dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub rng: String,
    pub seed: u64,
    pub p: usize,
    pub h: usize,
    pub params: GeneratorParams,
    pub edges: Vec<[usize; 2]>,
    pub k_joint: Vec<f64>,
}

fn random_sign<R: Rng>(rng: &mut R) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Builds a model; the same `(params, seed)` always yields the same model.
///
/// Random draws do not depend on the strengths, so varying `edge_strength` or
/// `latent_strength` with a fixed seed keeps the topology and signs.
pub fn generate_latent_model(params: GeneratorParams, seed: u64) -> Result<SyntheticModel> {
    params.validate()?;
    let (p, h) = (params.p, params.h);
    let mut rng = rng_from_seed(seed);

    // Bounded-degree graph: propose uniform pairs, reject duplicates and saturated endpoints.
    let mut adjacency = vec![vec![false; p]; p];
    let mut degree = vec![0usize; p];
    let mut edges = Vec::new();
    let target = params.target_edges();
    let mut attempts = 0;
    while p > 1 && edges.len() < target && attempts < 100 * target.max(1) {
        attempts += 1;
        let i = rng.gen_range(0..p);
        let j = rng.gen_range(0..p);
        if i == j || adjacency[i][j] || degree[i] >= params.max_degree || degree[j] >= params.max_degree {
            continue;
        }
        adjacency[i][j] = true;
        adjacency[j][i] = true;
        degree[i] += 1;
        degree[j] += 1;
        edges.push((i.min(j), i.max(j)));
    }
    let edge_signs: Vec<f64> = edges.iter().map(|_| random_sign(&mut rng)).collect();

    let fan = params.latent_degree();
    let mut latent_links = Vec::with_capacity(h);
    for _ in 0..h {
        let mut nodes = sample(&mut rng, p, fan).into_vec();
        nodes.sort_unstable();
        let signs: Vec<f64> = nodes.iter().map(|_| random_sign(&mut rng)).collect();
        latent_links.push((nodes, signs));
    }

    let dim = p + h;
    let mut k = Matrix::zeros(dim, dim);
    if params.edge_strength != 0.0 {
        for (&(i, j), sign) in edges.iter().zip(&edge_signs) {
            k[(i, j)] = sign * params.edge_strength;
            k[(j, i)] = k[(i, j)];
        }
    }
    let coupling = params.latent_strength / (p as f64).sqrt();
    if coupling != 0.0 {
        for (a, (nodes, signs)) in latent_links.iter().enumerate() {
            for (&i, sign) in nodes.iter().zip(signs) {
                k[(i, p + a)] = sign * coupling;
                k[(p + a, i)] = k[(i, p + a)];
            }
        }
    }
    for i in 0..dim {
        let off: f64 = k.row(i).iter().map(|v| v.abs()).sum();
        k[(i, i)] = 1.0 + off + EIGEN_MARGIN;
    }
    if params.edge_strength == 0.0 {
        edges.clear();
    }
    SyntheticModel::from_joint(params, seed, k, edges)
}

/// `n` independent rows from `N(0, cov_O)`, using the Cholesky factor of `cov_O`.
pub fn draw_samples(model: &SyntheticModel, n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::NoSamples);
    }
    let p = model.p();
    let chol = model
        .cov_o
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { min_eigenvalue: SymEigen::new(&model.cov_o).min() })?;
    let mut rng = rng_from_seed(seed);
    let z = Matrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(z * chol.l().transpose())
}
