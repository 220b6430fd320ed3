//! Synthetic dynamic networks with a single change point: a three-block SBM
//! whose block pattern swaps, and a random dot product graph whose latent
//! positions change for a fraction of the nodes. Entries are observed
//! independently with probability `pi`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::completion::MaskedSnapshot;
use crate::error::{Error, Result};
use crate::matrix::{fro_norm, DenseMatrix, Mask};

pub const SCENARIO1_B_PRE: [[f64; 3]; 3] = [[0.6, 1.0, 0.6], [1.0, 0.6, 0.5], [0.6, 0.5, 0.6]];
pub const SCENARIO1_B_POST: [[f64; 3]; 3] = [[0.6, 0.5, 0.6], [0.5, 0.6, 1.0], [0.6, 1.0, 0.6]];

/// Purpose tags separating the random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrawKind {
    Edge = 1,
    Mask = 2,
    Latent = 3,
    ScenarioSeed = 4,
    TrainingSeed = 5,
    PermutationSeed = 6,
}

/// Counter-based generator: the draw for `(seed, kind, t, index)` is the
/// `index`-th `u64` of a ChaCha stream selected by `(kind, t)`, so any entry
/// can be regenerated independently and time steps can be produced in any order.
#[derive(Clone, Copy, Debug)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { seed }
    }

    pub fn stream(&self, kind: DrawKind, t: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((kind as u64) << 56) ^ t);
        rng
    }

    /// Uniform `[0, 1)` draw at a fixed position of a stream.
    pub fn uniform_at(&self, kind: DrawKind, t: u64, index: u64) -> f64 {
        let mut rng = self.stream(kind, t);
        rng.set_word_pos(2 * index as u128);
        rng.random::<f64>()
    }

    /// A derived 64-bit seed, e.g. for repetition `index` of an experiment.
    pub fn derive(&self, kind: DrawKind, index: u64) -> u64 {
        let mut rng = self.stream(kind, 0);
        rng.set_word_pos(2 * index as u128);
        rng.next_u64()
    }
}

/// Position of `(i, j)`, `i <= j`, in row-major upper-triangle order.
#[cfg(test)]
fn upper_index(n: usize, i: usize, j: usize) -> u64 {
    (i * n - i * (i.saturating_sub(1)) / 2 + (j - i)) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioKind {
    Sbm { rho: f64, b_pre: Vec<Vec<f64>>, b_post: Vec<Vec<f64>>, communities: usize },
    Rdpg { d: usize, change_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    /// Last pre-change time; `None` for a stream without change.
    pub delta: Option<usize>,
    pub total_t: usize,
    pub pi: f64,
    pub seed: u64,
    pub self_loops: bool,
}

impl ScenarioSpec {
    /// Three-community SBM with `rho = 0.5`, `n = 100`, change at 150 of 300, self loops.
    pub fn scenario1(pi: f64, seed: u64) -> Self {
        let rows = |b: [[f64; 3]; 3]| b.iter().map(|r| r.to_vec()).collect();
        ScenarioSpec {
            kind: ScenarioKind::Sbm {
                rho: 0.5,
                b_pre: rows(SCENARIO1_B_PRE),
                b_post: rows(SCENARIO1_B_POST),
                communities: 3,
            },
            n: 100,
            delta: Some(150),
            total_t: 300,
            pi,
            seed,
            self_loops: true,
        }
    }

    /// RDPG with 5-dimensional uniform latent positions, a quarter of the
    /// nodes moving at the change, no self loops.
    pub fn scenario2(pi: f64, seed: u64) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Rdpg { d: 5, change_fraction: 0.25 },
            n: 100,
            delta: Some(150),
            total_t: 300,
            pi,
            seed,
            self_loops: false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScenarioKind::Sbm { .. } => "sbm",
            ScenarioKind::Rdpg { .. } => "rdpg",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.total_t == 0 {
            return fail("n and total_t must be positive".into());
        }
        if let Some(d) = self.delta {
            if d < 1 || d >= self.total_t {
                return fail(format!("delta must satisfy 1 <= delta < total_t, got {d}"));
            }
        }
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return fail(format!("pi must lie in (0, 1], got {}", self.pi));
        }
        match &self.kind {
            ScenarioKind::Sbm { rho, b_pre, b_post, communities } => {
                let k = *communities;
                if k == 0 || k > self.n {
                    return fail(format!("need 1 <= communities <= n, got {k}"));
                }
                for b in [b_pre, b_post] {
                    if b.len() != k || b.iter().any(|r| r.len() != k) {
                        return fail(format!("block matrices must be {k}x{k}"));
                    }
                    for i in 0..k {
                        for j in 0..k {
                            if b[i][j] != b[j][i] || !(0.0..=1.0).contains(&b[i][j]) {
                                return fail("block matrices must be symmetric with entries in [0, 1]".into());
                            }
                            if rho * b[i][j] > 1.0 {
                                return fail("rho * B must not exceed 1".into());
                            }
                        }
                    }
                }
                if !(*rho > 0.0 && *rho <= 1.0) {
                    return fail(format!("rho must lie in (0, 1], got {rho}"));
                }
            }
            ScenarioKind::Rdpg { d, change_fraction } => {
                if *d == 0 {
                    return fail("latent dimension must be positive".into());
                }
                if !(0.0..=1.0).contains(change_fraction) {
                    return fail(format!("change_fraction must lie in [0, 1], got {change_fraction}"));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Ground truth of a generated stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub delta: Option<usize>,
    /// `||M(delta) - M(delta + 1)||_F`; zero for streams without change.
    pub kappa: f64,
    #[serde(with = "matrix_rows")]
    pub graphon_pre: DenseMatrix,
    #[serde(with = "matrix_rows")]
    pub graphon_post: DenseMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedStream {
    pub snapshots: Vec<MaskedSnapshot>,
    pub truth: GroundTruth,
}

/// 0-based community of node `i` under contiguous blocks `z = ceil(k (i+1) / n)`.
pub fn community(i: usize, n: usize, k: usize) -> usize {
    (k * (i + 1)).div_ceil(n) - 1
}

/// Pre- and post-change SBM graphons `rho * B[z_i][z_j]`.
pub fn sbm_graphon(spec: &ScenarioSpec) -> Result<(DenseMatrix, DenseMatrix)> {
    spec.validate()?;
    let ScenarioKind::Sbm { rho, b_pre, b_post, communities } = &spec.kind else {
        return Err(Error::config("sbm_graphon needs an SBM scenario"));
    };
    let n = spec.n;
    let build = |b: &Vec<Vec<f64>>| {
        DenseMatrix::from_fn(n, |i, j| rho * b[community(i, n, *communities)][community(j, n, *communities)])
    };
    Ok((build(b_pre), build(b_post)))
}

fn latent_positions(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let row: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            if row.iter().any(|x| *x > 0.0) {
                break row;
            }
        })
        .collect()
}

fn cosine_graphon(x: &[Vec<f64>]) -> DenseMatrix {
    let norms: Vec<f64> = x.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut g = DenseMatrix::from_fn(x.len(), |i, j| {
        let dot: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
        (dot / (norms[i] * norms[j])).clamp(0.0, 1.0)
    });
    for i in 0..x.len() {
        g.set(i, i, 1.0);
    }
    g.mirror_upper();
    g
}

/// Pre- and post-change RDPG graphons. Latent positions are drawn once from
/// the scenario seed; the first `floor(change_fraction * n)` nodes get fresh
/// positions after the change.
pub fn rdpg_graphon(spec: &ScenarioSpec) -> Result<(DenseMatrix, DenseMatrix)> {
    spec.validate()?;
    let ScenarioKind::Rdpg { d, change_fraction } = spec.kind else {
        return Err(Error::config("rdpg_graphon needs an RDPG scenario"));
    };
    let n = spec.n;
    let mut rng = CounterRng::new(spec.seed).stream(DrawKind::Latent, 0);
    let x = latent_positions(&mut rng, n, d);
    let x_new = latent_positions(&mut rng, n, d);
    let moved = (change_fraction * n as f64).floor() as usize;
    let y: Vec<Vec<f64>> = (0..n).map(|i| if i < moved { x_new[i].clone() } else { x[i].clone() }).collect();
    Ok((cosine_graphon(&x), cosine_graphon(&y)))
}

pub fn graphons(spec: &ScenarioSpec) -> Result<(DenseMatrix, DenseMatrix)> {
    match spec.kind {
        ScenarioKind::Sbm { .. } => sbm_graphon(spec),
        ScenarioKind::Rdpg { .. } => rdpg_graphon(spec),
    }
}

/// Samples the scenario's stream from its own seed.
pub fn generate_stream(spec: &ScenarioSpec) -> Result<GeneratedStream> {
    generate_stream_with(spec, spec.seed)
}

/// Graphons from `spec.seed`, edges and masks from `sample_seed`.
pub fn generate_stream_with(spec: &ScenarioSpec, sample_seed: u64) -> Result<GeneratedStream> {
    let (pre, post) = graphons(spec)?;
    let snapshots = sample_snapshots(spec, &pre, &post, spec.delta, spec.total_t, sample_seed)?;
    let kappa = if spec.delta.is_some() { fro_norm(&pre.sub(&post)?) } else { 0.0 };
    let graphon_post = if spec.delta.is_some() { post } else { pre.clone() };
    Ok(GeneratedStream {
        snapshots,
        truth: GroundTruth { delta: spec.delta, kappa, graphon_pre: pre, graphon_post },
    })
}

/// Change-free stream of length `len` from the scenario's pre-change graphon,
/// sampled with `sample_seed` (the graphon itself still comes from `spec.seed`).
pub fn generate_training(spec: &ScenarioSpec, len: usize, sample_seed: u64) -> Result<Vec<MaskedSnapshot>> {
    let (pre, _) = graphons(spec)?;
    sample_snapshots(spec, &pre, &pre, None, len, sample_seed)
}

fn sample_snapshots(
    spec: &ScenarioSpec,
    pre: &DenseMatrix,
    post: &DenseMatrix,
    delta: Option<usize>,
    total_t: usize,
    seed: u64,
) -> Result<Vec<MaskedSnapshot>> {
    let n = spec.n;
    let rng = CounterRng::new(seed);
    (1..=total_t)
        .map(|t| {
            let graphon = if delta.is_some_and(|d| t > d) { post } else { pre };
            let mut edges = rng.stream(DrawKind::Edge, t as u64);
            let mut masks = rng.stream(DrawKind::Mask, t as u64);
            let mut y = DenseMatrix::zeros(n);
            let mut omega = Mask::filled(n, false);
            for i in 0..n {
                for j in i..n {
                    // both draws are consumed for every (i, j) so positions stay fixed
                    let a = edges.random::<f64>() < graphon.get(i, j);
                    let seen = masks.random::<f64>() < spec.pi;
                    if i == j && !spec.self_loops {
                        continue;
                    }
                    omega.set(i, j, seen);
                    if seen && a {
                        y.set(i, j, 1.0);
                        y.set(j, i, 1.0);
                    }
                }
            }
            MaskedSnapshot::new(t, y, omega)
        })
        .collect()
}

pub(crate) mod matrix_rows {
    use super::DenseMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DenseMatrix, ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.n()).map(|i| (0..m.n()).map(|j| m.get(i, j)).collect()).collect();
        rows.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DenseMatrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        DenseMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_sbm(n: usize, total_t: usize, pi: f64, seed: u64) -> ScenarioSpec {
        let mut spec = ScenarioSpec::scenario1(pi, seed);
        spec.n = n;
        spec.total_t = total_t;
        spec.delta = Some(total_t / 2);
        spec
    }

    #[test]
    fn community_sizes_differ_by_at_most_one() {
        for n in [3, 10, 99, 100, 101] {
            let mut sizes = [0usize; 3];
            for i in 0..n {
                sizes[community(i, n, 3)] += 1;
            }
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "n={n}: {sizes:?}");
            assert_eq!(community(0, n, 3), 0);
            assert_eq!(community(n - 1, n, 3), 2);
        }
    }

    #[test]
    fn default_sbm_blocks() {
        let spec = ScenarioSpec::scenario1(0.9, 1);
        let (pre, post) = sbm_graphon(&spec).unwrap();
        // node 0 in block 1, node 50 in block 2
        assert_eq!(pre.get(0, 50), 0.5);
        assert_eq!(post.get(0, 50), 0.25);
        assert_eq!(pre.get(0, 0), 0.3);
    }

    #[test]
    fn sbm_kappa_closed_form_n99() {
        let mut spec = ScenarioSpec::scenario1(0.9, 1);
        spec.n = 99;
        let s = generate_stream(&spec).unwrap();
        // blocks of 33; (1,2) and (2,3) pairs change by 0.5 * 0.5 = 0.25, both orientations
        let expected = (4.0 * 33.0 * 33.0 * 0.0625f64).sqrt();
        assert!((s.truth.kappa - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_blocks_mean_zero_jump() {
        let mut spec = small_sbm(12, 4, 1.0, 2);
        if let ScenarioKind::Sbm { b_post, b_pre, .. } = &mut spec.kind {
            *b_post = b_pre.clone();
        }
        assert_eq!(generate_stream(&spec).unwrap().truth.kappa, 0.0);
    }

    #[test]
    fn rdpg_graphon_properties() {
        let mut spec = ScenarioSpec::scenario2(0.9, 3);
        spec.n = 40;
        let (pre, post) = rdpg_graphon(&spec).unwrap();
        for g in [&pre, &post] {
            assert!(g.is_symmetric());
            assert!(g.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(g.get(7, 7), 1.0);
        }
        // rows from the 10th node on are unchanged
        for i in 10..40 {
            for j in 10..40 {
                assert_eq!(pre.get(i, j), post.get(i, j));
            }
        }
        assert!(fro_norm(&pre.sub(&post).unwrap()) > 0.0);
    }

    #[test]
    fn identical_latent_rows_give_unit_probability() {
        let x = vec![vec![0.2, 0.4, 0.1], vec![0.2, 0.4, 0.1]];
        assert_eq!(cosine_graphon(&x).get(0, 1), 1.0);
    }

    #[test]
    fn full_observation_means_y_equals_a() {
        let s = generate_stream(&small_sbm(15, 6, 1.0, 4)).unwrap();
        for snap in &s.snapshots {
            assert_eq!(snap.omega().count_observed(), 15 * 15);
        }
    }

    #[test]
    fn rdpg_without_self_loops_hides_the_diagonal() {
        let mut spec = ScenarioSpec::scenario2(1.0, 5);
        spec.n = 10;
        spec.total_t = 3;
        spec.delta = Some(1);
        let s = generate_stream(&spec).unwrap();
        for snap in &s.snapshots {
            for i in 0..10 {
                assert!(!snap.omega().get(i, i));
                assert_eq!(snap.y().get(i, i), 0.0);
            }
        }
    }

    #[test]
    fn observation_rate_within_binomial_band() {
        let spec = small_sbm(30, 300, 0.9, 6);
        let s = generate_stream(&spec).unwrap();
        let trials = 300.0 * (30.0 * 31.0 / 2.0);
        let observed: usize = s
            .snapshots
            .iter()
            .map(|snap| (0..30).map(|i| (i..30).filter(|&j| snap.omega().get(i, j)).count()).sum::<usize>())
            .sum();
        let rate = observed as f64 / trials;
        let sigma = (0.9f64 * 0.1 / trials).sqrt();
        assert!((rate - 0.9).abs() < 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn edge_frequencies_match_graphon() {
        let mut spec = small_sbm(9, 400, 1.0, 7);
        spec.delta = Some(399);
        let s = generate_stream(&spec).unwrap();
        let pre = &s.truth.graphon_pre;
        let t = 399.0;
        for i in 0..9 {
            for j in i..9 {
                let freq = s.snapshots[..399].iter().map(|x| x.y().get(i, j)).sum::<f64>() / t;
                let p = pre.get(i, j);
                assert!((freq - p).abs() <= 4.0 * (p * (1.0 - p) / t).sqrt(), "({i},{j}) {freq} vs {p}");
            }
        }
    }

    #[test]
    fn stationarity_split_and_determinism() {
        let spec = small_sbm(12, 10, 0.8, 8);
        let a = generate_stream(&spec).unwrap();
        assert_eq!(a, generate_stream(&spec).unwrap());
        assert_eq!(a.snapshots.len(), 10);
        assert!(a.truth.kappa > 0.0);
        let mut other = spec.clone();
        other.seed = 9;
        assert_ne!(a.snapshots, generate_stream(&other).unwrap().snapshots);
    }

    #[test]
    fn counter_rng_is_positional() {
        let rng = CounterRng::new(11);
        let mut seq = rng.stream(DrawKind::Edge, 3);
        let draws: Vec<f64> = (0..10).map(|_| seq.random::<f64>()).collect();
        for (idx, d) in draws.iter().enumerate() {
            assert_eq!(rng.uniform_at(DrawKind::Edge, 3, idx as u64), *d);
        }
        let n = 6;
        let mut pos = 0;
        for i in 0..n {
            for j in i..n {
                assert_eq!(upper_index(n, i, j), pos);
                pos += 1;
            }
        }
        assert_ne!(rng.derive(DrawKind::ScenarioSeed, 0), rng.derive(DrawKind::ScenarioSeed, 1));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ScenarioSpec::scenario1(0.9, 1);
        spec.delta = Some(300);
        assert!(spec.validate().is_err());
        let mut spec = ScenarioSpec::scenario1(0.0, 1);
        assert!(spec.validate().is_err());
        spec.pi = 0.5;
        if let ScenarioKind::Sbm { b_pre, .. } = &mut spec.kind {
            b_pre[0][1] = 0.3;
        }
        assert!(spec.validate().is_err());
        let s2 = ScenarioSpec::scenario2(0.9, 1);
        let round = ScenarioSpec::from_json(&s2.to_json().unwrap()).unwrap();
        assert_eq!(round, s2);
    }
}
