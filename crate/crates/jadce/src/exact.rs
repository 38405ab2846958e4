//! Exact group-l0 minimization.
//!
//! The sparsest-support problem `min ‖X‖_{row-0} s.t. ‖Y − SX‖_F ≤ ε` is
//! reformulated with one binary `b_i` per device and a Big-β box
//! `−β·b_i ≤ X_ij ≤ β·b_i` on the realified entries, then solved by a
//! best-first branch-and-bound over the binaries. Each node carries a
//! least-squares feasibility probe on its remaining columns; the probe both
//! prunes (infeasible nodes and a covering-term lower bound) and feeds the
//! rounding heuristic that supplies incumbents. A brute-force support
//! enumeration doubles as an independent oracle for small instances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ensure_finite, realify, ComplexMatrix, RealifiedSystem};

/// Guard for the enumeration oracle: 2^20 supports is already a second or two.
pub const BRUTE_FORCE_MAX_GROUPS: usize = 20;

/// Fraction of the largest probe row norm kept by the rounding heuristic.
const ROUNDING_FRACTION: f64 = 0.05;

/// One Big-β mixed-integer instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MiqcpInstance {
    pub system: RealifiedSystem,
    /// Frobenius residual budget ε.
    pub epsilon: f64,
    /// Big-β box bound on the realified entries of `X`.
    pub beta: f64,
    pub n_groups: usize,
}

impl MiqcpInstance {
    pub fn from_complex(
        pilots: &ComplexMatrix,
        observation: &ComplexMatrix,
        epsilon: f64,
        beta: f64,
    ) -> Result<Self> {
        ensure_finite(pilots, "pilots")?;
        ensure_finite(observation, "observation")?;
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be finite and nonnegative"));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid("beta must be finite and positive"));
        }
        let system = realify(pilots, observation)?;
        let n_groups = system.n_devices;
        Ok(MiqcpInstance {
            system,
            epsilon,
            beta,
            n_groups,
        })
    }

    /// Residual threshold accepted as feasible. ε gets a hair of relative
    /// slack, and a floor tied to ‖Y‖ keeps the noiseless case (ε = 0)
    /// meaningful in floating point: consistent least-squares systems land
    /// around 1e-14·‖Y‖ while genuinely wrong supports sit orders of
    /// magnitude higher.
    pub(crate) fn residual_budget(&self, y_norm: f64) -> f64 {
        (self.epsilon * (1.0 + 1e-9)).max(1e-9 * y_norm.max(1.0))
    }
}

/// Partial assignment of the device binaries.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbNode {
    pub forced_zero: Vec<usize>,
    pub forced_one: Vec<usize>,
    pub undecided: Vec<usize>,
    pub lower_bound: f64,
    pub depth: usize,
}

/// Outcome of [`node_lower_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeBound {
    Infeasible,
    Feasible(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactStatus {
    /// Queue exhausted; the incumbent is a certified optimum.
    Optimal,
    /// Stopped at the node budget; the incumbent is the best found so far.
    NodeLimit,
    /// No support satisfies the residual budget.
    Infeasible,
}

/// Result of an exact solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    /// Least-squares fit on `support`; rows outside it are exactly zero.
    pub estimate: ComplexMatrix,
    pub support: Vec<usize>,
    /// `Σ b_i`, the number of active devices in the solution.
    pub objective: usize,
    pub status: ExactStatus,
    pub nodes_explored: usize,
    /// `(nodes_explored, objective)` at each incumbent improvement.
    pub incumbent_history: Vec<(usize, usize)>,
    /// Set when the 3-σ β proved too small and the search re-ran with 2β.
    pub beta_doubled: bool,
}

/// Big-β from the channel model: three standard deviations of a real
/// component of a unit-variance complex Gaussian entry (1/√2), times a
/// safety factor of two. Floored at 1e-3.
pub fn compute_beta(
    _pilots: &ComplexMatrix,
    _observation: &ComplexMatrix,
    _epsilon: f64,
) -> f64 {
    let sigma = std::f64::consts::FRAC_1_SQRT_2;
    (2.0 * 3.0 * sigma).max(1e-3)
}

/// Least squares restricted to `support` columns; rows off the support are
/// exactly zero in the returned estimate. Duplicate indices are ignored.
pub fn least_squares_on_support(
    pilots: &ComplexMatrix,
    observation: &ComplexMatrix,
    support: &[usize],
) -> Result<(ComplexMatrix, f64)> {
    let (l, n) = pilots.shape();
    if observation.nrows() != l {
        return Err(Error::invalid("pilot and observation row counts differ"));
    }
    let mut sorted: Vec<usize> = support.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.last().is_some_and(|&i| i >= n) {
        return Err(Error::invalid(format!(
            "support index {} out of range (n = {n})",
            sorted.last().unwrap()
        )));
    }

    let m = observation.ncols();
    if sorted.is_empty() {
        return Ok((ComplexMatrix::zeros(n, m), observation.norm()));
    }

    let sub = pilots.select_columns(sorted.iter());
    let x_sub = linalg::lstsq(&sub, observation);
    let residual = linalg::residual_fro(&sub, observation, &x_sub);

    let mut estimate = ComplexMatrix::zeros(n, m);
    for (row, &dev) in sorted.iter().enumerate() {
        estimate.row_mut(dev).copy_from(&x_sub.row(row));
    }
    Ok((estimate, residual))
}

/// Probe of one node: least-squares fit on the remaining columns plus the
/// per-group norms the bound, branching rule and heuristics consume.
struct Probe {
    /// Complex row 2-norms of the probe solution (length N, zero off-remaining).
    norms: Vec<f64>,
}

fn probe_remaining(
    pilots: &ComplexMatrix,
    observation: &ComplexMatrix,
    remaining: &[usize],
    budget: f64,
) -> Option<Probe> {
    let n = pilots.ncols();
    let y_norm = observation.norm();

    // When zero already fits the budget it is the cheapest feasible point:
    // the covering term vanishes and the node bound reduces to |forced_one|.
    if y_norm <= budget {
        return Some(Probe { norms: vec![0.0; n] });
    }
    if remaining.is_empty() {
        return None; // y_norm > budget and no columns left
    }

    let sub = pilots.select_columns(remaining.iter());
    let x_sub = linalg::lstsq(&sub, observation);
    let residual = linalg::residual_fro(&sub, observation, &x_sub);
    if residual > budget {
        return None;
    }

    let m = x_sub.ncols();
    let mut norms = vec![0.0; n];
    for (row, &dev) in remaining.iter().enumerate() {
        let mut sq = 0.0;
        for c in 0..m {
            sq += x_sub[(row, c)].norm_sqr();
        }
        norms[dev] = sq.sqrt();
    }
    Some(Probe { norms })
}

/// Lower bound of one node: a least-squares feasibility probe on
/// `forced_one ∪ undecided` (the node is infeasible when even those columns
/// cannot meet the residual budget), then `|forced_one|`, since every group
/// already forced on contributes a full unit to the objective.
///
/// Scoring the undecided groups by a covering term `min(1, ‖X̃_i‖_∞/β)` at
/// the probe solution looks tempting but is *not* a valid bound: the probe
/// minimizes the residual, not the covering, and the spread-out minimum-norm
/// fit can overstate how many groups a sparse solution needs, pruning the
/// optimum away.
pub fn node_lower_bound(instance: &MiqcpInstance, node: &BnbNode) -> Result<NodeBound> {
    let n = instance.n_groups;
    let mut seen = vec![0u8; n];
    for &i in node
        .forced_zero
        .iter()
        .chain(&node.forced_one)
        .chain(&node.undecided)
    {
        if i >= n {
            return Err(Error::invalid(format!("device index {i} out of range")));
        }
        seen[i] += 1;
    }
    if seen.iter().any(|&c| c != 1) {
        return Err(Error::invalid(
            "forced_zero, forced_one and undecided must partition the devices",
        ));
    }

    let (pilots, observation) = instance.system.complex_parts();
    let budget = instance.residual_budget(observation.norm());
    let mut remaining: Vec<usize> = node
        .forced_one
        .iter()
        .chain(&node.undecided)
        .copied()
        .collect();
    remaining.sort_unstable();

    match probe_remaining(&pilots, &observation, &remaining, budget) {
        None => Ok(NodeBound::Infeasible),
        Some(_) => Ok(NodeBound::Feasible(node.forced_one.len() as f64)),
    }
}

/// Minimum-cardinality support by exhaustive enumeration, in increasing
/// cardinality and lexicographic order within each cardinality. Independent
/// of the branch-and-bound path, so it doubles as a verification oracle.
pub fn brute_force_min_support(instance: &MiqcpInstance) -> Result<ExactResult> {
    if instance.n_groups > BRUTE_FORCE_MAX_GROUPS {
        return Err(Error::invalid(format!(
            "brute force limited to {BRUTE_FORCE_MAX_GROUPS} groups, got {}",
            instance.n_groups
        )));
    }
    let (pilots, observation) = instance.system.complex_parts();
    let budget = instance.residual_budget(observation.norm());
    let n = instance.n_groups;

    let mut tested = 0usize;
    for k in 0..=n {
        let mut found: Option<Vec<usize>> = None;
        for_each_combination(n, k, |supp| {
            tested += 1;
            let (_, residual) = least_squares_on_support(&pilots, &observation, supp)
                .expect("indices in range by construction");
            if residual <= budget {
                found = Some(supp.to_vec());
                true
            } else {
                false
            }
        });
        if let Some(supp) = found {
            let (estimate, _) = least_squares_on_support(&pilots, &observation, &supp)?;
            return Ok(ExactResult {
                estimate,
                support: supp,
                objective: k,
                status: ExactStatus::Optimal,
                nodes_explored: tested,
                incumbent_history: vec![(tested, k)],
                beta_doubled: false,
            });
        }
    }

    Ok(ExactResult {
        estimate: ComplexMatrix::zeros(n, observation.ncols()),
        support: Vec::new(),
        objective: 0,
        status: ExactStatus::Infeasible,
        nodes_explored: tested,
        incumbent_history: Vec::new(),
        beta_doubled: false,
    })
}

/// Calls `f` on each k-subset of `{0..n}` in lexicographic order until `f`
/// returns true. Returns whether enumeration stopped early.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> bool) -> bool {
    if k > n {
        return false;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if f(&idx) {
            return true;
        }
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return false;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return false;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Row-norm ranking from iteratively reweighted minimum-norm interpolation
/// (FOCUSS). Each round solves one L×L hermitian system; the weights
/// `w_i = ‖X_i‖₂` concentrate the fit onto a sparse candidate set far more
/// sharply than a single minimum-norm solve does.
fn focuss_row_norms(
    pilots: &ComplexMatrix,
    observation: &ComplexMatrix,
    rounds: usize,
) -> Vec<f64> {
    use num_complex::Complex64;

    let (l, n) = pilots.shape();
    let mut weights = vec![1.0f64; n];
    let mut norms = vec![0.0f64; n];
    for _ in 0..rounds {
        let mut weighted = pilots.clone();
        for (i, &w) in weights.iter().enumerate() {
            weighted.column_mut(i).scale_mut(w);
        }
        let mut gram = &weighted * pilots.adjoint();
        let tau = 1e-12
            * (gram.diagonal().iter().map(|z| z.re).sum::<f64>() / l as f64).max(1e-300);
        for i in 0..l {
            gram[(i, i)] += Complex64::new(tau, 0.0);
        }
        let Some(ch) = gram.cholesky() else {
            break;
        };
        let v = ch.solve(observation);
        let x = {
            let mut x = pilots.ad_mul(&v);
            for (i, &w) in weights.iter().enumerate() {
                x.row_mut(i).scale_mut(w);
            }
            x
        };
        let mut max_norm = 0.0f64;
        for i in 0..n {
            let norm = x.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            norms[i] = norm;
            max_norm = max_norm.max(norm);
        }
        if max_norm == 0.0 {
            break;
        }
        let floor = 1e-14 * max_norm;
        for i in 0..n {
            weights[i] = norms[i].max(floor);
        }
    }
    norms
}

/// Depth-first forward selection with backtracking: grow a support one
/// column at a time in descending residual-correlation order, looking for a
/// support of at most `max_size` columns whose least-squares residual meets
/// the budget. `ls_budget` caps the number of least-squares fits so a miss
/// costs bounded work; the branch-and-bound tree remains the completeness
/// fallback.
fn forward_search(
    pilots: &ComplexMatrix,
    observation: &ComplexMatrix,
    residual_budget: f64,
    max_size: usize,
    ls_budget: usize,
) -> Option<Vec<usize>> {
    use std::collections::HashSet;

    struct Ctx<'a> {
        pilots: &'a ComplexMatrix,
        observation: &'a ComplexMatrix,
        residual_budget: f64,
        max_size: usize,
        fits_left: usize,
        visited: HashSet<Vec<usize>>,
    }

    impl Ctx<'_> {
        /// Correlation-ranked unused columns, best first.
        fn ranked_candidates(&self, support: &[usize], estimate: &ComplexMatrix) -> Vec<usize> {
            let resid = self.observation - self.pilots * estimate;
            let corr = self.pilots.ad_mul(&resid);
            let mut scored: Vec<(usize, f64)> = (0..self.pilots.ncols())
                .filter(|i| !support.contains(i))
                .map(|i| {
                    let score = corr.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>();
                    (i, score)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.into_iter().map(|(i, _)| i).collect()
        }

        /// Fit the support; `Ok` means feasible, `Err` carries the estimate.
        fn fit(&mut self, support: &[usize]) -> Option<(ComplexMatrix, bool)> {
            if self.fits_left == 0 {
                return None;
            }
            self.fits_left -= 1;
            let (estimate, residual) =
                least_squares_on_support(self.pilots, self.observation, support)
                    .expect("forward-search indices in range");
            Some((estimate, residual <= self.residual_budget))
        }

        fn recurse(&mut self, support: &mut Vec<usize>, width: usize) -> Option<Vec<usize>> {
            let mut key = support.clone();
            key.sort_unstable();
            if !self.visited.insert(key) {
                return None;
            }
            let (estimate, feasible) = self.fit(support)?;
            if feasible {
                return Some(support.clone());
            }
            if support.len() >= self.max_size {
                return None;
            }
            for cand in self.ranked_candidates(support, &estimate).into_iter().take(width) {
                if self.fits_left == 0 {
                    return None;
                }
                support.push(cand);
                let found = self.recurse(support, width);
                support.pop();
                if found.is_some() {
                    return found;
                }
            }
            None
        }

        /// Greedy completion: repeatedly add the best-correlated column.
        /// With an RNG, each step picks among the top-ranked candidates at
        /// random instead, diversifying the paths.
        fn dive(
            &mut self,
            support: &mut Vec<usize>,
            rng: Option<&mut ChaCha8Rng>,
        ) -> Option<Vec<usize>> {
            let mut rng = rng;
            loop {
                let (estimate, feasible) = self.fit(support)?;
                if feasible {
                    return Some(support.clone());
                }
                if support.len() >= self.max_size {
                    return None;
                }
                let ranked = self.ranked_candidates(support, &estimate);
                let next = match rng.as_deref_mut() {
                    None => *ranked.first()?,
                    Some(r) => {
                        // Geometric-ish preference for the top ranks.
                        let mut pick = 0usize;
                        while pick + 1 < ranked.len().min(4) && r.gen_bool(0.35) {
                            pick += 1;
                        }
                        ranked[pick]
                    }
                };
                support.push(next);
            }
        }

        /// Subspace pursuit: keep a working support of `s` columns, merge in
        /// the `s` best-correlated others, refit and prune back to the `s`
        /// strongest rows, until the support stabilizes.
        fn subspace_pursuit(&mut self, s: usize) -> Option<Vec<usize>> {
            if s == 0 {
                return None;
            }
            let top_rows = |est: &ComplexMatrix, pool: &[usize], take: usize| -> Vec<usize> {
                let mut scored: Vec<(usize, f64)> = pool
                    .iter()
                    .map(|&i| {
                        let norm = est.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>();
                        (i, norm)
                    })
                    .collect();
                scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let mut out: Vec<usize> =
                    scored.into_iter().take(take).map(|(i, _)| i).collect();
                out.sort_unstable();
                out
            };

            let (root_est, _) = self.fit(&[])?;
            let mut support: Vec<usize> = self
                .ranked_candidates(&[], &root_est)
                .into_iter()
                .take(s)
                .collect();
            support.sort_unstable();

            for _ in 0..20 {
                let (estimate, feasible) = self.fit(&support)?;
                if feasible {
                    return Some(support.clone());
                }
                let mut merged = support.clone();
                merged.extend(
                    self.ranked_candidates(&support, &estimate)
                        .into_iter()
                        .take(s),
                );
                merged.sort_unstable();
                let (merged_est, merged_feasible) = self.fit(&merged)?;
                if merged_feasible && merged.len() <= self.max_size {
                    return Some(merged);
                }
                let next = top_rows(&merged_est, &merged, s);
                if next == support {
                    break;
                }
                support = next;
            }
            None
        }
    }

    let mut ctx = Ctx {
        pilots,
        observation,
        residual_budget,
        max_size,
        fits_left: ls_budget,
        visited: HashSet::new(),
    };

    // Phase 1: cheap greedy dives seeded with each of the best first picks,
    // so one bad top-ranked column cannot sink the whole search.
    let (root_estimate, root_feasible) = ctx.fit(&[])?;
    if root_feasible {
        return Some(Vec::new());
    }
    let first_picks = ctx.ranked_candidates(&[], &root_estimate);
    for &first in first_picks.iter().take(12) {
        let mut support = vec![first];
        if let Some(found) = ctx.dive(&mut support, None) {
            return Some(found);
        }
        if ctx.fits_left == 0 {
            return None;
        }
    }

    // Phase 2: subspace pursuit at the target sparsity.
    if let Some(found) = ctx.subspace_pursuit(max_size.min(pilots.nrows().saturating_sub(1))) {
        return Some(found);
    }

    // Phase 3: randomized dives; the fixed seed keeps runs reproducible.
    let mut rng = ChaCha8Rng::seed_from_u64(0x51D3_CA57);
    for _ in 0..200 {
        if ctx.fits_left == 0 {
            return None;
        }
        let mut support = Vec::new();
        if let Some(found) = ctx.dive(&mut support, Some(&mut rng)) {
            return Some(found);
        }
    }

    // Phase 4: width-capped depth-first search with backtracking over the
    // greedy ordering, deduplicating supports reached in a different order.
    ctx.visited.clear();
    ctx.recurse(&mut Vec::new(), 8)
}

const UNDECIDED: u8 = 0;
const ONE: u8 = 1;
const ZERO: u8 = 2;

struct SearchNode {
    state: Box<[u8]>,
    depth: u32,
    lb: f64,
    probe: Arc<Probe>,
    seq: u64,
}

impl PartialEq for SearchNode {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for SearchNode {}
impl PartialOrd for SearchNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SearchNode {
    // BinaryHeap is a max-heap; "greatest" must be the next node to pop:
    // smallest bound, then greatest depth, then FIFO.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lb
            .total_cmp(&self.lb)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Incumbent {
    support: Vec<usize>,
    objective: usize,
    estimate: ComplexMatrix,
}

struct SearchOutcome {
    incumbent: Option<Incumbent>,
    status: ExactStatus,
    nodes_explored: usize,
    history: Vec<(usize, usize)>,
    #[cfg_attr(not(test), allow(dead_code))]
    popped_bounds: Vec<f64>,
}

struct Engine<'a> {
    pilots: &'a ComplexMatrix,
    observation: &'a ComplexMatrix,
    budget: f64,
    n: usize,
    /// True when ε = 0, i.e. feasibility means exact interpolation.
    noiseless: bool,
    nodes_explored: usize,
    incumbent: Option<Incumbent>,
    history: Vec<(usize, usize)>,
    /// Set when the incumbent is provably the unique minimum (see
    /// [`Engine::improve_incumbent`]); empties the queue logically.
    certified: bool,
}

impl<'a> Engine<'a> {
    fn incumbent_objective(&self) -> usize {
        self.incumbent.as_ref().map_or(usize::MAX, |i| i.objective)
    }

    fn try_support(&mut self, support: &[usize]) -> Option<(ComplexMatrix, f64)> {
        let (estimate, residual) =
            least_squares_on_support(self.pilots, self.observation, support)
                .expect("engine supports are in range");
        if residual > self.budget {
            return None;
        }
        if support.len() < self.incumbent_objective() {
            self.incumbent = Some(Incumbent {
                support: support.to_vec(),
                objective: support.len(),
                estimate: estimate.clone(),
            });
            self.history.push((self.nodes_explored, support.len()));
        }
        Some((estimate, residual))
    }

    /// Rounding heuristic: keep probe rows above 5% of the largest row norm
    /// and re-fit. When the rounded support is feasible and not already worse
    /// than the incumbent, it is shaved to a support that is minimal under
    /// single-column drops. At the root the shave also restarts from the full
    /// remaining set if the rounded support misses.
    fn rounding_heuristic(&mut self, probe: &Probe, remaining: &[usize], thorough: bool) {
        let max_norm = remaining
            .iter()
            .map(|&i| probe.norms[i])
            .fold(0.0f64, f64::max);
        let support: Vec<usize> = if max_norm <= 1e-12 {
            Vec::new()
        } else {
            let gamma_r = ROUNDING_FRACTION * max_norm;
            remaining
                .iter()
                .copied()
                .filter(|&i| probe.norms[i] >= gamma_r)
                .collect()
        };

        let rounded_ok = match self.try_support(&support) {
            Some(_) if support.len() <= self.incumbent_objective() => {
                self.improve_incumbent(&support);
                true
            }
            Some(_) => true,
            None => false,
        };
        if thorough && !rounded_ok {
            // The node itself is feasible, so the full remaining set always
            // gives the shave a valid starting point.
            self.improve_incumbent(remaining);
        }
    }

    /// Shaves a feasible support to a fixpoint: repeatedly drop the first
    /// column (in ascending refit-row-norm order) whose removal keeps the fit
    /// feasible. The result is minimal under single drops.
    ///
    /// In the noiseless regime that minimality certifies global optimality:
    /// for pilots and channels in general position (almost sure for the
    /// random designs used here), every interpolating support smaller than L
    /// contains the unique minimal one, so a sub-L support that cannot shed
    /// any column *is* that minimum.
    fn improve_incumbent(&mut self, start: &[usize]) {
        let Some((mut estimate, _)) = self.try_support(start) else {
            return;
        };
        let mut support = start.to_vec();
        loop {
            if support.is_empty() {
                break;
            }
            let norms: Vec<f64> = support
                .iter()
                .map(|&dev| {
                    estimate
                        .row(dev)
                        .iter()
                        .map(|z| z.norm_sqr())
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let mut order: Vec<usize> = (0..support.len()).collect();
            order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]));
            let mut dropped = false;
            for &pos in &order {
                let mut candidate = support.clone();
                candidate.remove(pos);
                if let Some((est, _)) = self.try_support(&candidate) {
                    support = candidate;
                    estimate = est;
                    dropped = true;
                    break;
                }
            }
            if !dropped {
                break;
            }
        }
        if self.noiseless && support.len() < self.pilot_len() {
            self.certified = true;
        }
    }

    fn pilot_len(&self) -> usize {
        self.pilots.nrows()
    }

    /// One-off root heuristic: rank devices by a FOCUSS-style iteratively
    /// reweighted interpolation, then try the sparsest plausible prefix of
    /// the ranking. Feasibility is monotone in support inclusion, so one
    /// probe at size L−1 settles whether any ranked sub-L prefix can work;
    /// on success the shave in [`Engine::improve_incumbent`] finishes the
    /// job (and certifies optimality in the noiseless regime).
    fn root_boost(&mut self) {
        let l = self.pilot_len();
        if self.n == 0 || l == 0 {
            return;
        }
        // Cheap first pass: a FOCUSS ranking often puts the true support in
        // the first L-1 slots outright.
        let norms = focuss_row_norms(self.pilots, self.observation, 16);
        let mut ranked: Vec<usize> = (0..self.n).collect();
        ranked.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let c = self.n.min(l.saturating_sub(1));
        if c > 0 && self.try_support(&ranked[..c]).is_some() {
            self.improve_incumbent(&ranked[..c]);
            if self.certified {
                return;
            }
        }

        // Guided forward selection with backtracking settles most of the
        // remaining cases within a bounded number of fits.
        if c > 0 && c < self.incumbent_objective() {
            if let Some(found) =
                forward_search(self.pilots, self.observation, self.budget, c, 20_000)
            {
                self.improve_incumbent(&found);
                if self.certified {
                    return;
                }
            }
        }

        // Otherwise seed the shave from a wider FOCUSS prefix so the square /
        // tall regime still gets a strong incumbent.
        let wide = self.n.min(l + 2);
        if self.try_support(&ranked[..wide]).is_some() {
            self.improve_incumbent(&ranked[..wide]);
        }
    }

    fn evaluate_child(&mut self, state: &[u8], thorough: bool) -> Option<(Arc<Probe>, f64)> {
        let remaining: Vec<usize> = (0..self.n)
            .filter(|&i| state[i] != ZERO)
            .collect();
        let undecided: Vec<usize> = (0..self.n)
            .filter(|&i| state[i] == UNDECIDED)
            .collect();
        let ones = remaining.len() - undecided.len();

        let probe = probe_remaining(self.pilots, self.observation, &remaining, self.budget)?;
        self.rounding_heuristic(&probe, &remaining, thorough);
        if undecided.is_empty() {
            // Fully decided feasible node: its integer solution is exactly
            // the forced-one set.
            let ones_set: Vec<usize> = (0..self.n).filter(|&i| state[i] == ONE).collect();
            self.try_support(&ones_set);
        }
        let bound = ones as f64;
        Some((Arc::new(probe), bound))
    }
}

fn search(
    pilots: &ComplexMatrix,
    observation: &ComplexMatrix,
    epsilon_budget: f64,
    node_limit: usize,
    noiseless: bool,
) -> SearchOutcome {
    let n = pilots.ncols();
    let mut engine = Engine {
        pilots,
        observation,
        budget: epsilon_budget,
        n,
        noiseless,
        nodes_explored: 0,
        incumbent: None,
        history: Vec::new(),
        certified: false,
    };

    engine.root_boost();
    let root_state: Box<[u8]> = vec![UNDECIDED; n].into_boxed_slice();
    let Some((root_probe, root_bound)) = engine.evaluate_child(&root_state, true) else {
        return SearchOutcome {
            incumbent: None,
            status: ExactStatus::Infeasible,
            nodes_explored: 1,
            history: Vec::new(),
            popped_bounds: Vec::new(),
        };
    };
    // The full support is always a feasible fallback incumbent at the root.
    if engine.incumbent.is_none() {
        let all: Vec<usize> = (0..n).collect();
        engine.try_support(&all);
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(SearchNode {
        state: root_state,
        depth: 0,
        lb: root_bound,
        probe: root_probe,
        seq,
    });

    let mut status = ExactStatus::Optimal;
    let mut popped_bounds = Vec::new();

    while let Some(node) = heap.pop() {
        // A certified incumbent makes every queued node prunable; the queue
        // is logically exhausted.
        if engine.certified {
            status = ExactStatus::Optimal;
            break;
        }
        if engine.nodes_explored >= node_limit {
            status = ExactStatus::NodeLimit;
            break;
        }
        engine.nodes_explored += 1;
        popped_bounds.push(node.lb);

        // Objectives are integral: close the gap as soon as the best bound
        // rounds up to the incumbent. Best-first order makes this final.
        if (node.lb - 1e-9).ceil() >= engine.incumbent_objective() as f64 {
            status = ExactStatus::Optimal;
            break;
        }

        // Branch on the undecided group with the smallest probe row norm.
        // With the integral |forced_one| bound, best-first order dives along
        // zero-branches, so each dive step discards the least promising
        // column and the dive becomes a backtracking elimination that homes
        // in on the true support; branching on the largest norm would make
        // the dives discard the strongest columns first.
        let undecided: Vec<usize> = (0..n).filter(|&i| node.state[i] == UNDECIDED).collect();
        let Some(&branch) = undecided
            .iter()
            .min_by(|&&a, &&b| {
                node.probe.norms[a]
                    .total_cmp(&node.probe.norms[b])
                    .then(a.cmp(&b)) // ties to the smallest index
            })
        else {
            continue; // leaf; its support was already tried at evaluation
        };

        // Child b = 1 keeps the same remaining set, hence the same probe;
        // its bound gains the full unit of the newly forced group.
        {
            let mut state = node.state.clone();
            state[branch] = ONE;
            let lb = node.lb + 1.0;
            let has_undecided = state.iter().any(|&s| s == UNDECIDED);
            if has_undecided {
                seq += 1;
                heap.push(SearchNode {
                    state,
                    depth: node.depth + 1,
                    lb,
                    probe: Arc::clone(&node.probe),
                    seq,
                });
            } else {
                let ones_set: Vec<usize> =
                    (0..n).filter(|&i| state[i] == ONE).collect();
                engine.try_support(&ones_set);
            }
        }

        // Child b = 0 removes the column; re-probe, and drop the node
        // entirely when the remaining columns cannot meet the budget.
        {
            let mut state = node.state.clone();
            state[branch] = ZERO;
            if let Some((probe, bound)) = engine.evaluate_child(&state, false) {
                let lb = bound.max(node.lb);
                let has_undecided = state.iter().any(|&s| s == UNDECIDED);
                if has_undecided {
                    seq += 1;
                    heap.push(SearchNode {
                        state,
                        depth: node.depth + 1,
                        lb,
                        probe,
                        seq,
                    });
                }
            }
        }
    }

    SearchOutcome {
        incumbent: engine.incumbent,
        status,
        nodes_explored: engine.nodes_explored,
        history: engine.history,
        popped_bounds,
    }
}

fn max_real_component(estimate: &ComplexMatrix) -> f64 {
    estimate
        .iter()
        .map(|z| z.re.abs().max(z.im.abs()))
        .fold(0.0, f64::max)
}

fn outcome_to_result(
    outcome: SearchOutcome,
    n: usize,
    m: usize,
    beta_doubled: bool,
    extra_nodes: usize,
) -> ExactResult {
    match outcome.incumbent {
        Some(inc) => ExactResult {
            estimate: inc.estimate,
            support: inc.support,
            objective: inc.objective,
            status: outcome.status,
            nodes_explored: outcome.nodes_explored + extra_nodes,
            incumbent_history: outcome.history,
            beta_doubled,
        },
        None => ExactResult {
            estimate: ComplexMatrix::zeros(n, m),
            support: Vec::new(),
            objective: 0,
            status: ExactStatus::Infeasible,
            nodes_explored: outcome.nodes_explored + extra_nodes,
            incumbent_history: Vec::new(),
            beta_doubled,
        },
    }
}

/// Best-first branch-and-bound over the device binaries.
///
/// Nodes are ordered by `(lower_bound, depth descending)`; popped nodes are
/// pruned once `ceil(lower_bound)` reaches the incumbent objective, and the
/// branch variable is the undecided group with the largest probe row norm.
/// The final estimate is the least-squares fit on the incumbent support.
///
/// The search itself never binds the `[−β, β]` box (its least-squares
/// probes are unconstrained), so β enters only through the certificate on
/// the final estimate: when some component escapes the box, the result is
/// the solution one would get after doubling β and re-solving, and the
/// `beta_doubled` flag records that the 3-σ box was too small.
pub fn bnb_solve(instance: &MiqcpInstance, node_limit: usize) -> Result<ExactResult> {
    if node_limit == 0 {
        return Err(Error::invalid("node_limit must be >= 1"));
    }
    let (pilots, observation) = instance.system.complex_parts();
    let budget = instance.residual_budget(observation.norm());
    let n = instance.n_groups;
    let m = observation.ncols();

    let noiseless = instance.epsilon == 0.0;
    let outcome = search(&pilots, &observation, budget, node_limit, noiseless);
    let mut result = outcome_to_result(outcome, n, m, false, 0);

    if result.status != ExactStatus::Infeasible
        && max_real_component(&result.estimate) > instance.beta
    {
        result.beta_doubled = true;
    }
    Ok(result)
}

/// Same search, but also returns the sequence of popped lower bounds so
/// tests can check the best-first monotonicity.
#[cfg(test)]
pub(crate) fn bnb_popped_bounds(instance: &MiqcpInstance, node_limit: usize) -> Vec<f64> {
    let (pilots, observation) = instance.system.complex_parts();
    let budget = instance.residual_budget(observation.norm());
    let noiseless = instance.epsilon == 0.0;
    search(&pilots, &observation, budget, node_limit, noiseless).popped_bounds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_scenario, row_group_norms};

    fn instance_from_scenario(sc: &crate::model::Scenario, epsilon: f64) -> MiqcpInstance {
        let beta = compute_beta(&sc.pilots, &sc.observation, epsilon);
        MiqcpInstance::from_complex(&sc.pilots, &sc.observation, epsilon, beta).unwrap()
    }

    fn true_support(sc: &crate::model::Scenario) -> Vec<usize> {
        sc.activity
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 1)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn beta_matches_three_sigma_rule() {
        let sc = generate_scenario(4, 1, 2, 1, None, 0).unwrap();
        let beta = compute_beta(&sc.pilots, &sc.observation, 0.0);
        assert!((beta - 3.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((beta - 4.242_640_687_119_285).abs() < 1e-9);
    }

    #[test]
    fn beta_covers_channel_tails() {
        let mut covered = 0;
        for seed in 0..1000u64 {
            let sc = generate_scenario(30, 2, 6, 5, None, seed).unwrap();
            let beta = compute_beta(&sc.pilots, &sc.observation, 0.0);
            let max = sc
                .ground_truth
                .iter()
                .map(|z| z.re.abs().max(z.im.abs()))
                .fold(0.0f64, f64::max);
            if max < beta {
                covered += 1;
            }
        }
        assert!(covered >= 990, "beta covered only {covered}/1000 scenarios");
    }

    #[test]
    fn least_squares_exact_on_true_support() {
        let sc = generate_scenario(20, 2, 9, 4, None, 3).unwrap();
        let supp = true_support(&sc);
        let (est, resid) =
            least_squares_on_support(&sc.pilots, &sc.observation, &supp).unwrap();
        assert!(resid <= 1e-10 * sc.observation.norm());
        assert!((&est - &sc.ground_truth).norm() < 1e-8);
    }

    #[test]
    fn least_squares_empty_support() {
        let sc = generate_scenario(10, 2, 5, 3, None, 4).unwrap();
        let (est, resid) = least_squares_on_support(&sc.pilots, &sc.observation, &[]).unwrap();
        assert_eq!(est.norm(), 0.0);
        assert!((resid - sc.observation.norm()).abs() < 1e-12);
    }

    #[test]
    fn wrong_square_support_interpolates_but_misses_truth() {
        // L = K: any L columns solve exactly, yet the estimate is wrong.
        let sc = generate_scenario(12, 2, 3, 3, None, 8).unwrap();
        let truth = true_support(&sc);
        let wrong: Vec<usize> = (0..12).filter(|i| !truth.contains(i)).take(3).collect();
        let (est, resid) =
            least_squares_on_support(&sc.pilots, &sc.observation, &wrong).unwrap();
        assert!(resid <= 1e-8 * sc.observation.norm(), "residual {resid}");
        assert!((&est - &sc.ground_truth).norm() > 1e-2);
    }

    #[test]
    fn least_squares_rejects_out_of_range() {
        let sc = generate_scenario(5, 1, 3, 1, None, 1).unwrap();
        assert!(least_squares_on_support(&sc.pilots, &sc.observation, &[7]).is_err());
    }

    #[test]
    fn brute_force_trivial_cases() {
        let sc = generate_scenario(6, 2, 4, 0, None, 2).unwrap();
        let inst = instance_from_scenario(&sc, 0.0);
        let res = brute_force_min_support(&inst).unwrap();
        assert_eq!(res.objective, 0);
        assert!(res.support.is_empty());

        let sc = generate_scenario(6, 2, 4, 2, None, 5).unwrap();
        let eps = sc.observation.norm() * 2.0;
        let inst = instance_from_scenario(&sc, eps);
        let res = brute_force_min_support(&inst).unwrap();
        assert_eq!(res.objective, 0);
    }

    #[test]
    fn brute_force_recovers_small_instance() {
        let sc = generate_scenario(8, 2, 4, 2, None, 6).unwrap();
        let inst = instance_from_scenario(&sc, 0.0);
        let res = brute_force_min_support(&inst).unwrap();
        assert_eq!(res.objective, 2);
        assert_eq!(res.support, true_support(&sc));
        assert!((&res.estimate - &sc.ground_truth).norm() < 1e-8);
    }

    #[test]
    fn brute_force_guards_large_instances() {
        let sc = generate_scenario(21, 1, 4, 1, None, 1).unwrap();
        let inst = instance_from_scenario(&sc, 0.0);
        assert!(brute_force_min_support(&inst).is_err());
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        let mut seen = Vec::new();
        for_each_combination(4, 2, |c| {
            seen.push(c.to_vec());
            false
        });
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
    }

    #[test]
    fn node_bound_examples() {
        let sc = generate_scenario(12, 2, 6, 3, None, 9).unwrap();
        let inst = instance_from_scenario(&sc, 0.0);
        let truth = true_support(&sc);

        // All true devices forced on, nothing undecided: bound is exactly K.
        let node = BnbNode {
            forced_zero: (0..12).filter(|i| !truth.contains(i)).collect(),
            forced_one: truth.clone(),
            undecided: vec![],
            lower_bound: 0.0,
            depth: 0,
        };
        match node_lower_bound(&inst, &node).unwrap() {
            NodeBound::Feasible(b) => assert!((b - 3.0).abs() < 1e-12),
            NodeBound::Infeasible => panic!("true support must be feasible"),
        }

        // Excluding a needed device makes the node infeasible once the
        // remaining columns form a tall system (fewer than L of them); with
        // L or more columns any right-hand side still interpolates.
        let mut zeros = vec![truth[0]];
        zeros.extend((0..12).filter(|i| !truth.contains(i)).take(6));
        let node = BnbNode {
            undecided: (0..12).filter(|i| !zeros.contains(i)).collect(),
            forced_zero: zeros,
            forced_one: vec![],
            lower_bound: 0.0,
            depth: 1,
        };
        assert!(node.undecided.len() < 6);
        assert_eq!(node_lower_bound(&inst, &node).unwrap(), NodeBound::Infeasible);

        // Root with a huge budget: zero is feasible, bound collapses to 0.
        let inst = instance_from_scenario(&sc, sc.observation.norm() * 2.0);
        let node = BnbNode {
            forced_zero: vec![],
            forced_one: vec![],
            undecided: (0..12).collect(),
            lower_bound: 0.0,
            depth: 0,
        };
        assert_eq!(
            node_lower_bound(&inst, &node).unwrap(),
            NodeBound::Feasible(0.0)
        );
    }

    #[test]
    fn node_bound_validates_partition() {
        let sc = generate_scenario(4, 1, 3, 1, None, 1).unwrap();
        let inst = instance_from_scenario(&sc, 0.0);
        let node = BnbNode {
            forced_zero: vec![0],
            forced_one: vec![0],
            undecided: vec![1, 2, 3],
            lower_bound: 0.0,
            depth: 0,
        };
        assert!(node_lower_bound(&inst, &node).is_err());
    }

    #[test]
    fn bnb_recovers_at_minimum_pilot_length() {
        // L = K + 1 is the shortest length allowing exact recovery.
        for seed in 0..10u64 {
            let sc = generate_scenario(30, 2, 6, 5, None, seed).unwrap();
            let inst = instance_from_scenario(&sc, 0.0);
            let res = bnb_solve(&inst, 200_000).unwrap();
            assert_eq!(res.status, ExactStatus::Optimal, "seed {seed}");
            assert_eq!(res.objective, 5, "seed {seed}");
            assert_eq!(res.support, true_support(&sc), "seed {seed}");
            assert!(
                (&res.estimate - &sc.ground_truth).norm() <= 1e-5,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn bnb_cannot_recover_below_minimum_length() {
        // L = K: many size-L supports fit exactly, so the returned minimizer
        // is almost never the truth. A rare lucky hit is tolerated.
        let mut recovered = 0;
        for seed in 70..85u64 {
            let sc = generate_scenario(30, 2, 5, 5, None, seed).unwrap();
            let inst = instance_from_scenario(&sc, 0.0);
            let res = bnb_solve(&inst, 2_000).unwrap();
            assert!(res.objective <= 5, "seed {seed}");
            if (&res.estimate - &sc.ground_truth).norm() <= 1e-5 {
                recovered += 1;
            }
        }
        assert!(recovered <= 2, "recovered {recovered}/15 below minimum length");
    }

    #[test]
    fn bnb_matches_oracle_on_small_instances() {
        for seed in 0..20u64 {
            let k = (seed % 3) as usize + 1;
            let sc = generate_scenario(10, 2, 6, k, None, seed).unwrap();
            let inst = instance_from_scenario(&sc, 0.0);
            let oracle = brute_force_min_support(&inst).unwrap();
            let bnb = bnb_solve(&inst, 100_000).unwrap();
            assert_eq!(bnb.status, ExactStatus::Optimal, "seed {seed}");
            assert_eq!(bnb.objective, oracle.objective, "seed {seed}");
        }
    }

    #[test]
    fn bnb_handles_zero_observation() {
        let sc = generate_scenario(8, 2, 4, 0, None, 3).unwrap();
        let inst = instance_from_scenario(&sc, 0.0);
        let res = bnb_solve(&inst, 1000).unwrap();
        assert_eq!(res.status, ExactStatus::Optimal);
        assert_eq!(res.objective, 0);
        assert_eq!(res.estimate.norm(), 0.0);
    }

    #[test]
    fn bnb_is_deterministic() {
        let sc = generate_scenario(20, 2, 7, 4, Some(30.0), 13).unwrap();
        let eps = crate::harness::calibrate_epsilon(sc.noise_var, 7, 2);
        let inst = instance_from_scenario(&sc, eps);
        let a = bnb_solve(&inst, 50_000).unwrap();
        let b = bnb_solve(&inst, 50_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bnb_incumbent_history_is_nonincreasing() {
        let sc = generate_scenario(24, 2, 8, 5, None, 17).unwrap();
        let inst = instance_from_scenario(&sc, 0.0);
        let res = bnb_solve(&inst, 100_000).unwrap();
        for w in res.incumbent_history.windows(2) {
            assert!(w[1].1 <= w[0].1, "incumbent went up: {:?}", res.incumbent_history);
            assert!(w[1].0 >= w[0].0);
        }
    }

    #[test]
    fn bnb_popped_bounds_nondecreasing() {
        let sc = generate_scenario(18, 2, 7, 4, None, 23).unwrap();
        let inst = instance_from_scenario(&sc, 0.0);
        let bounds = bnb_popped_bounds(&inst, 100_000);
        for w in bounds.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-12,
                "popped bounds decreased: {} after {}",
                w[1],
                w[0]
            );
        }
    }

    #[test]
    fn bnb_speed_guard_near_minimum_length() {
        // Regression guard: with L >= K+2 the search should stay tiny.
        let (n, k) = (30usize, 5usize);
        let mut fast = 0;
        for seed in 0..100u64 {
            let sc = generate_scenario(n, 2, k + 2, k, None, seed).unwrap();
            let inst = instance_from_scenario(&sc, 0.0);
            let res = bnb_solve(&inst, 200_000).unwrap();
            assert_eq!(res.status, ExactStatus::Optimal);
            if res.nodes_explored <= 10 * n * k {
                fast += 1;
            }
        }
        assert!(fast >= 90, "only {fast}/100 runs stayed under the node guard");
    }

    #[test]
    fn lemma_box_construction_is_tight() {
        // For any X with row sparsity s and a valid box bound, the indicator
        // vector b_i = 1{X_i != 0} satisfies the box and sums to s, and any b
        // satisfying the box has at least s ones.
        for seed in 0..100u64 {
            let k = (seed % 4) as usize;
            let sc = generate_scenario(8, 2, 5, k, None, seed).unwrap();
            let x = &sc.ground_truth;
            let norms = row_group_norms(x);
            let s: usize = norms.iter().filter(|&&v| v > 0.0).count();
            let beta = x
                .iter()
                .map(|z| z.re.abs().max(z.im.abs()))
                .fold(0.0f64, f64::max)
                .max(1e-6)
                * 1.01;
            let b: Vec<u8> = norms.iter().map(|&v| (v > 0.0) as u8).collect();
            assert_eq!(b.iter().map(|&v| v as usize).sum::<usize>(), s);
            for i in 0..8 {
                for c in 0..2 {
                    let z = x[(i, c)];
                    let lim = beta * b[i] as f64;
                    assert!(z.re.abs() <= lim && z.im.abs() <= lim);
                }
            }
            // Exhaustively: any b covering X has b_i = 1 wherever X_i != 0.
            for mask in 0u32..(1 << 8) {
                let bv: Vec<u8> = (0..8).map(|i| ((mask >> i) & 1) as u8).collect();
                let covers = (0..8).all(|i| {
                    (0..2).all(|c| {
                        let z = x[(i, c)];
                        let lim = beta * bv[i] as f64;
                        z.re.abs() <= lim && z.im.abs() <= lim
                    })
                });
                if covers {
                    let ones: usize = bv.iter().map(|&v| v as usize).sum();
                    assert!(ones >= s);
                }
            }
        }
    }
}
