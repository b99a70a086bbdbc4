//! Discrete latent-variable worlds and the synthetic data they generate.
//!
//! A world is a DAG over `ℓ` categorical latents with one conditional table
//! per node. Samples are drawn ancestrally, one-hot encoded block by block,
//! and mixed by a fixed permutation of the one-hot coordinates. One latent's
//! coordinate group (`mask_index`) is held out as the prediction target `y`;
//! the remaining coordinates form the context `x`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Largest joint state space [`exact_posterior`] will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1 << 20;

const CPD_TOLERANCE: f64 = 1e-12;
const SAMPLE_CHUNK: usize = 4096;

/// Serialized form of a world. `edges` are `(parent, child)` pairs; each
/// node's parents are ordered by ascending index and its CPD rows are indexed
/// by the mixed-radix code of the parent values in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub cardinalities: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub cpds: Vec<Vec<Vec<f64>>>,
    pub mix_perm: Vec<usize>,
    pub mask_index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldSpec", into = "WorldSpec")]
pub struct LatentWorld {
    spec: WorldSpec,
    parents: Vec<Vec<usize>>,
    topo: Vec<usize>,
    offsets: Vec<usize>,
    /// For every observed position, the one-hot coordinate it carries.
    masked_positions: Vec<usize>,
    context_positions: Vec<usize>,
}

impl TryFrom<WorldSpec> for LatentWorld {
    type Error = Error;

    fn try_from(spec: WorldSpec) -> Result<Self> {
        LatentWorld::new(spec)
    }
}

impl From<LatentWorld> for WorldSpec {
    fn from(w: LatentWorld) -> Self {
        w.spec
    }
}

impl LatentWorld {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        let l = spec.cardinalities.len();
        let mut problems = Vec::new();
        if l == 0 {
            problems.push("world needs at least one latent".to_string());
        }
        if let Some(k) = spec.cardinalities.iter().find(|&&k| k < 2) {
            problems.push(format!("cardinality {k} < 2"));
        }
        if spec.mask_index >= l.max(1) {
            problems.push(format!("mask_index {} out of range", spec.mask_index));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }

        let mut parents = vec![Vec::new(); l];
        for &(a, b) in &spec.edges {
            if a >= l || b >= l || a == b {
                return Err(Error::InvalidConfig(vec![format!("bad edge ({a}, {b})")]));
            }
            if parents[b].contains(&a) {
                return Err(Error::InvalidConfig(vec![format!("duplicate edge ({a}, {b})")]));
            }
            parents[b].push(a);
        }
        for p in &mut parents {
            p.sort_unstable();
        }
        let topo =
            topological_order(&parents).ok_or_else(|| Error::InvalidConfig(vec!["graph contains a cycle".into()]))?;

        if spec.cpds.len() != l {
            problems.push(format!("{} CPD tables for {l} latents", spec.cpds.len()));
        } else {
            for (i, table) in spec.cpds.iter().enumerate() {
                let configs: usize = parents[i].iter().map(|&p| spec.cardinalities[p]).product();
                if table.len() != configs {
                    problems.push(format!("node {i}: {} CPD rows, {configs} parent configurations", table.len()));
                    continue;
                }
                for (r, row) in table.iter().enumerate() {
                    if row.len() != spec.cardinalities[i] {
                        problems.push(format!("node {i} row {r}: wrong length {}", row.len()));
                    } else if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                        problems.push(format!("node {i} row {r}: entry outside [0, 1]"));
                    } else if (row.iter().sum::<f64>() - 1.0).abs() > CPD_TOLERANCE {
                        problems.push(format!("node {i} row {r}: does not sum to 1"));
                    }
                }
            }
        }

        let dim: usize = spec.cardinalities.iter().sum();
        let mut seen = vec![false; dim];
        if spec.mix_perm.len() != dim
            || spec.mix_perm.iter().any(|&p| p >= dim || std::mem::replace(&mut seen[p], true))
        {
            problems.push(format!("mix_perm is not a permutation of 0..{dim}"));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }

        let mut offsets = Vec::with_capacity(l);
        let mut acc = 0;
        for &k in &spec.cardinalities {
            offsets.push(acc);
            acc += k;
        }
        let block = |coord: usize| offsets.iter().rposition(|&o| o <= coord).unwrap();
        let (masked_positions, context_positions): (Vec<usize>, Vec<usize>) =
            (0..dim).partition(|&pos| block(spec.mix_perm[pos]) == spec.mask_index);

        Ok(Self { spec, parents, topo, offsets, masked_positions, context_positions })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn num_latents(&self) -> usize {
        self.spec.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.spec.cardinalities
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.spec.edges
    }

    pub fn mask_index(&self) -> usize {
        self.spec.mask_index
    }

    pub fn mix_perm(&self) -> &[usize] {
        &self.spec.mix_perm
    }

    /// Width of the full one-hot observation, `Σ k_i`.
    pub fn observed_dim(&self) -> usize {
        self.spec.mix_perm.len()
    }

    /// Width of the context `x` (the observation minus the masked group).
    pub fn context_dim(&self) -> usize {
        self.context_positions.len()
    }

    /// Number of values the target `y` can take.
    pub fn target_classes(&self) -> usize {
        self.spec.cardinalities[self.spec.mask_index]
    }

    /// True when every Bernoulli/categorical entry lies in `[0.2, 0.8]`.
    pub fn in_synthetic_regime(&self) -> bool {
        self.spec.cpds.iter().flatten().flatten().all(|&p| (0.2..=0.8).contains(&p))
    }

    fn config_index(&self, node: usize, z: &[usize]) -> usize {
        self.parents[node].iter().fold(0, |idx, &p| idx * self.spec.cardinalities[p] + z[p])
    }

    /// Probability of a full latent assignment under the DAG factorization.
    pub fn joint_probability(&self, z: &[usize]) -> f64 {
        (0..self.num_latents()).map(|i| self.spec.cpds[i][self.config_index(i, z)][z[i]]).product()
    }

    /// Permuted one-hot observation of `z` (full width, masked group included).
    pub fn observe(&self, z: &[usize]) -> Vec<u8> {
        let mut onehot = vec![0u8; self.observed_dim()];
        for (i, &v) in z.iter().enumerate() {
            onehot[self.offsets[i] + v] = 1;
        }
        self.spec.mix_perm.iter().map(|&src| onehot[src]).collect()
    }

    /// Context coordinates of a full observation, in observed order.
    pub fn context_of(&self, observed: &[u8]) -> Vec<u8> {
        self.context_positions.iter().map(|&p| observed[p]).collect()
    }

    /// Positions (in the full observation) held out as the target group.
    pub fn masked_positions(&self) -> &[usize] {
        &self.masked_positions
    }

    fn sample_latents(&self, rng: &mut impl rand::Rng) -> Vec<usize> {
        let mut z = vec![0; self.num_latents()];
        for &i in &self.topo {
            let row = &self.spec.cpds[i][self.config_index(i, &z)];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut v = row.len() - 1;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    v = j;
                    break;
                }
            }
            z[i] = v;
        }
        z
    }

    /// All joint assignments in mixed-radix order (latent 0 most significant).
    pub fn joint_states(&self) -> Result<Vec<Vec<usize>>> {
        let states: u128 = self.spec.cardinalities.iter().map(|&k| k as u128).product();
        if states > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge { states, limit: ENUMERATION_LIMIT });
        }
        let mut out = Vec::with_capacity(states as usize);
        let mut z = vec![0usize; self.num_latents()];
        for _ in 0..states {
            out.push(z.clone());
            for i in (0..z.len()).rev() {
                z[i] += 1;
                if z[i] < self.spec.cardinalities[i] {
                    break;
                }
                z[i] = 0;
            }
        }
        Ok(out)
    }
}

fn topological_order(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        order.push(v);
        for &c in children[v].iter().rev() {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Draws a world with `num_latents` binary nodes: a random topological
/// permutation, each forward edge kept independently with probability
/// `expected_edges / C(ℓ, 2)`, Bernoulli parameters uniform on `[0.2, 0.8]`.
pub fn sample_world(num_latents: usize, expected_edges: usize, seed: u64) -> Result<LatentWorld> {
    if num_latents < 2 {
        return Err(Error::InvalidArgument(format!("num_latents {num_latents} < 2")));
    }
    let max_edges = num_latents * (num_latents - 1) / 2;
    if expected_edges > max_edges {
        return Err(Error::InvalidArgument(format!(
            "expected_edges {expected_edges} exceeds maximum {max_edges} for {num_latents} nodes"
        )));
    }
    let mut rng = seeded(seed);
    let p = expected_edges as f64 / max_edges as f64;
    let mut order: Vec<usize> = (0..num_latents).collect();
    order.shuffle(&mut rng);
    let mut edges = Vec::new();
    for a in 0..num_latents {
        for b in a + 1..num_latents {
            if rng.random::<f64>() < p {
                edges.push((order[a], order[b]));
            }
        }
    }
    let mut parent_count = vec![0usize; num_latents];
    for &(_, c) in &edges {
        parent_count[c] += 1;
    }
    let cpds = parent_count
        .iter()
        .map(|&np| {
            (0..1usize << np)
                .map(|_| {
                    let theta = rng.random_range(0.2..=0.8);
                    vec![1.0 - theta, theta]
                })
                .collect()
        })
        .collect();
    let mut mix_perm: Vec<usize> = (0..2 * num_latents).collect();
    mix_perm.shuffle(&mut rng);
    let mask_index = rng.random_range(0..num_latents);
    LatentWorld::new(WorldSpec { cardinalities: vec![2; num_latents], edges, cpds, mix_perm, mask_index, seed })
}

/// Samples from a world: context vectors, targets, and the latents behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// Binary context vectors `x`, one per sample.
    pub samples: Vec<Vec<u8>>,
    /// Value of the masked latent (the class of `y`).
    pub targets: Vec<usize>,
    pub latents: Vec<Vec<usize>>,
    /// `(index_a, index_b, flipped_latent)` triples.
    pub counterfactual_pairs: Vec<(usize, usize, usize)>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn context_matrix(&self) -> DMatrix<f64> {
        let cols = self.samples.first().map_or(0, Vec::len);
        DMatrix::from_row_iterator(
            self.samples.len(),
            cols,
            self.samples.iter().flat_map(|r| r.iter().map(|&v| v as f64)),
        )
    }

    fn from_latents(world: &LatentWorld, latents: Vec<Vec<usize>>) -> Self {
        let mask = world.mask_index();
        let samples = latents.iter().map(|z| world.context_of(&world.observe(z))).collect();
        let targets = latents.iter().map(|z| z[mask]).collect();
        Self { samples, targets, latents, counterfactual_pairs: Vec::new() }
    }

    /// First `n` samples (pairs referring beyond `n` are dropped).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            samples: self.samples[..n].to_vec(),
            targets: self.targets[..n].to_vec(),
            latents: self.latents[..n].to_vec(),
            counterfactual_pairs: self
                .counterfactual_pairs
                .iter()
                .copied()
                .filter(|&(a, b, _)| a < n && b < n)
                .collect(),
        }
    }
}

/// Ancestral sampling in topological order. Generation is split into fixed
/// chunks with derived seeds, so the output does not depend on thread count.
pub fn ancestral_sample(world: &LatentWorld, n: usize, seed: u64) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    let latents: Vec<Vec<usize>> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = seeded(derive_seed(seed, c as u64));
            let len = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            (0..len).map(move |_| world.sample_latents(&mut rng)).collect::<Vec<_>>()
        })
        .collect();
    Ok(SyntheticDataset::from_latents(world, latents))
}

/// Value a latent takes in its counterfactual twin: `1 - v` for binary
/// latents, `(v + 1) mod k` otherwise.
pub fn flip_value(v: usize, k: usize) -> usize {
    if k == 2 {
        1 - v
    } else {
        (v + 1) % k
    }
}

/// Pairs every base sample with a twin that differs only in `latent_idx`.
/// The result holds the `n` base samples followed by their `n` twins, with
/// pair `(i, n + i, latent_idx)` for each `i`.
pub fn make_counterfactuals(
    world: &LatentWorld,
    base: &SyntheticDataset,
    latent_idx: usize,
) -> Result<SyntheticDataset> {
    if latent_idx >= world.num_latents() {
        return Err(Error::InvalidArgument(format!(
            "latent {latent_idx} out of range for {} latents",
            world.num_latents()
        )));
    }
    let k = world.cardinalities()[latent_idx];
    let n = base.len();
    let mut latents = base.latents.clone();
    latents.extend(base.latents.iter().map(|z| {
        let mut t = z.clone();
        t[latent_idx] = flip_value(t[latent_idx], k);
        t
    }));
    let mut out = SyntheticDataset::from_latents(world, latents);
    out.counterfactual_pairs = (0..n).map(|i| (i, n + i, latent_idx)).collect();
    Ok(out)
}

/// Per-latent posterior marginals `p(z_i | x)` for a context vector `x`.
pub type Posterior = Vec<Vec<f64>>;

/// Exact posterior marginals by enumerating the joint table and keeping the
/// assignments whose observation matches `x`.
pub fn exact_posterior(world: &LatentWorld, x: &[u8]) -> Result<Posterior> {
    PosteriorTable::new(world)?.posterior(x)
}

/// Enumerated joint table reused across many posterior queries.
pub struct PosteriorTable<'a> {
    world: &'a LatentWorld,
    states: Vec<(Vec<usize>, Vec<u8>, f64)>,
}

impl<'a> PosteriorTable<'a> {
    pub fn new(world: &'a LatentWorld) -> Result<Self> {
        let states = world
            .joint_states()?
            .into_iter()
            .map(|z| {
                let x = world.context_of(&world.observe(&z));
                let p = world.joint_probability(&z);
                (z, x, p)
            })
            .collect();
        Ok(Self { world, states })
    }

    pub fn posterior(&self, x: &[u8]) -> Result<Posterior> {
        if x.len() != self.world.context_dim() {
            return Err(Error::Dimension(format!(
                "context has {} coordinates, world expects {}",
                x.len(),
                self.world.context_dim()
            )));
        }
        let mut marg: Posterior = self.world.cardinalities().iter().map(|&k| vec![0.0; k]).collect();
        let mut total = 0.0;
        for (z, obs, p) in &self.states {
            if obs.as_slice() == x {
                total += p;
                for (i, &v) in z.iter().enumerate() {
                    marg[i][v] += p;
                }
            }
        }
        if total <= 0.0 {
            return Err(Error::InvalidArgument("context has zero probability".into()));
        }
        for row in &mut marg {
            for p in row.iter_mut() {
                *p /= total;
            }
        }
        Ok(marg)
    }
}

/// Floor applied before taking logs of posteriors.
pub const LOG_POSTERIOR_FLOOR: f64 = 1e-12;

/// Stacks `[log p(z_1|x); …; log p(z_ℓ|x)]` for every sample into an
/// `n × Σk` matrix, with each probability floored at `1e-12`.
pub fn log_posterior_matrix(world: &LatentWorld, data: &SyntheticDataset) -> Result<DMatrix<f64>> {
    let table = PosteriorTable::new(world)?;
    let dim = world.observed_dim();
    let mut out = DMatrix::zeros(data.len(), dim);
    for (r, x) in data.samples.iter().enumerate() {
        let post = table.posterior(x)?;
        for (c, p) in post.iter().flatten().enumerate() {
            out[(r, c)] = p.max(LOG_POSTERIOR_FLOOR).ln();
        }
    }
    Ok(out)
}
