//! Greedy prototype selection over the tree-space distance matrix.
//!
//! The objective being minimized is a per-class facility-location cost: each
//! instance pays its distance to the nearest already-selected prototype *of
//! its own class*, or the phantom distance 1 while its class has no
//! prototype. Selection repeatedly adds the instance with the largest
//! objective reduction. Three termination rules share the engine: a fixed
//! prototype budget (SM-A), the same budget under inverse-class-frequency
//! weighting (SM-WA), and an adaptive rule that stops once consecutive
//! reductions flatten out (A-PETE).
//!
//! All comparisons between candidates happen in integer arithmetic: matrix
//! entries are multiples of `1/grain`, so gains are compared as exact
//! rationals (cross-multiplied for the weighted variant). Ties break to the
//! lowest training index, and results are independent of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proximity::DistanceMatrix;

/// One artificial exemplar per class, each at distance exactly 1 from every
/// real instance. Phantoms give the empty prototype set the finite cost
/// `f(∅) = n` and are never emitted as prototypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhantomSet {
    n_classes: usize,
}

impl PhantomSet {
    /// Distance from any phantom exemplar to any real instance.
    pub const DISTANCE: f64 = 1.0;

    pub fn for_classes(n_classes: usize) -> Self {
        PhantomSet { n_classes }
    }

    /// Number of phantom exemplars (one per class).
    pub fn len(&self) -> usize {
        self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.n_classes == 0
    }
}

/// Which selection rule produced a prototype set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "SM-A")]
    SmA,
    #[serde(rename = "SM-WA")]
    SmWa,
    #[serde(rename = "A-PETE")]
    APete,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::SmA => "SM-A",
            Algorithm::SmWa => "SM-WA",
            Algorithm::APete => "A-PETE",
        })
    }
}

/// Why a selection run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// SM-A / SM-WA: the requested k prototypes were selected.
    ReachedK,
    /// A-PETE: the relative change between consecutive reductions fell
    /// below alpha.
    RelativeChange,
    /// A-PETE: the best remaining candidate reduces the objective by zero.
    ExhaustedReduction,
    /// A-PETE: the prototype cap min(maxPrototypes, n) was reached.
    ReachedCap,
}

/// One selected prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeRecord {
    /// Index into the training set the matrix was built over.
    pub index: usize,
    pub class_id: usize,
    /// Objective reduction achieved when this prototype was added (under the
    /// weighting of the algorithm that selected it).
    pub reduction: f64,
}

/// An ordered set of selected prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub algorithm: Algorithm,
    /// A-PETE's stopping threshold; absent for the fixed-k algorithms.
    pub alpha: Option<f64>,
    /// Prototypes in selection order.
    pub prototypes: Vec<PrototypeRecord>,
}

impl PrototypeSet {
    /// Training indices in selection order.
    pub fn indices(&self) -> Vec<usize> {
        self.prototypes.iter().map(|p| p.index).collect()
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }
}

/// One greedy iteration as recorded in a [`SelectionTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Training index chosen this iteration.
    pub chosen: usize,
    /// Objective value after adding the chosen prototype.
    pub objective: f64,
    /// Reduction achieved by this iteration (Δ').
    pub reduction: f64,
    /// |Δ − Δ'| / Δ' against the previous iteration's reduction; absent when
    /// Δ' = 0 would divide by zero.
    pub relative_change: Option<f64>,
}

/// Full record of a greedy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    /// Objective value of the empty prototype set (n under unit weights).
    pub initial_objective: f64,
    pub steps: Vec<TraceStep>,
    pub stop: StopReason,
}

// ---------------------------------------------------------------------------
// Objective and single greedy step (reference entry points)
// ---------------------------------------------------------------------------

/// Facility-location objective: the sum over instances of the distance to
/// the nearest same-class prototype, or the phantom distance 1 while the
/// instance's class has none.
pub fn objective_f(
    dist: &DistanceMatrix,
    labels: &[usize],
    prototypes: &[usize],
    phantoms: &PhantomSet,
) -> Result<f64> {
    let engine = Engine::new(dist, labels, false, phantoms)?;
    let mut current = engine.initial_counts();
    for &p in prototypes {
        if p >= labels.len() {
            return Err(Error::IndexOutOfRange {
                index: p,
                count: labels.len(),
            });
        }
        engine.absorb(&mut current, p);
    }
    let total: u64 = current.iter().sum();
    Ok(total as f64 / engine.grain as f64)
}

/// One greedy step from the given prototype set: the candidate with the
/// largest objective reduction (ties to the lowest index) and its reduction.
pub fn greedy_step(
    dist: &DistanceMatrix,
    labels: &[usize],
    prototypes: &[usize],
    phantoms: &PhantomSet,
) -> Result<(usize, f64)> {
    let engine = Engine::new(dist, labels, false, phantoms)?;
    let mut current = engine.initial_counts();
    let mut selected = vec![false; labels.len()];
    for &p in prototypes {
        if p >= labels.len() {
            return Err(Error::IndexOutOfRange {
                index: p,
                count: labels.len(),
            });
        }
        engine.absorb(&mut current, p);
        selected[p] = true;
    }
    let (x, gain) = engine.best_candidate(&current, &selected)?;
    Ok((x, gain as f64 / engine.grain as f64))
}

// ---------------------------------------------------------------------------
// Selection algorithms
// ---------------------------------------------------------------------------

/// Greedy submodular selection of exactly `k` prototypes.
pub fn select_sm_a(
    dist: &DistanceMatrix,
    labels: &[usize],
    k: usize,
) -> Result<(PrototypeSet, SelectionTrace)> {
    run_fixed_k(dist, labels, k, false, Algorithm::SmA)
}

/// As [`select_sm_a`], but each class's objective terms are weighted by
/// `n / (q · |class|)`, so covering a minority instance is worth as much as
/// covering a majority one.
pub fn select_sm_wa(
    dist: &DistanceMatrix,
    labels: &[usize],
    k: usize,
) -> Result<(PrototypeSet, SelectionTrace)> {
    run_fixed_k(dist, labels, k, true, Algorithm::SmWa)
}

fn run_fixed_k(
    dist: &DistanceMatrix,
    labels: &[usize],
    k: usize,
    weighted: bool,
    algorithm: Algorithm,
) -> Result<(PrototypeSet, SelectionTrace)> {
    let n = labels.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let phantoms = PhantomSet::for_classes(n_classes_of(labels));
    let engine = Engine::new(dist, labels, weighted, &phantoms)?;
    let mut run = Run::start(&engine);
    for _ in 0..k {
        let (x, gain) = engine.best_candidate(&run.current, &run.selected)?;
        run.add(&engine, x, gain);
    }
    Ok(run.finish(&engine, algorithm, None, StopReason::ReachedK))
}

/// Adaptive selection: keep taking greedy steps until the relative change
/// between consecutive reductions drops below `alpha`, the best remaining
/// reduction is zero, or `min(max_prototypes, n)` prototypes are selected.
///
/// The ratio test runs after the chosen instance is added, so the step that
/// triggers it is included; the zero-reduction guard fires before adding, so
/// a run on exactly-coverable data stops at exact coverage.
pub fn select_a_pete(
    dist: &DistanceMatrix,
    labels: &[usize],
    alpha: f64,
    max_prototypes: usize,
) -> Result<(PrototypeSet, SelectionTrace)> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::InvalidAlpha(alpha));
    }
    if max_prototypes == 0 {
        return Err(Error::InvalidHyperparameter(
            "maximum prototype count must be at least 1".into(),
        ));
    }
    let n = labels.len();
    let cap = max_prototypes.min(n);
    let phantoms = PhantomSet::for_classes(n_classes_of(labels));
    let engine = Engine::new(dist, labels, false, &phantoms)?;
    let mut run = Run::start(&engine);

    // Δ from Algorithm 1, as an integer gain; starts at 0 so the first
    // iteration's ratio is 1 and can never satisfy ratio < alpha < 1.
    let mut previous_gain = 0u64;
    let stop = loop {
        if run.order.len() == cap {
            break StopReason::ReachedCap;
        }
        let (x, gain) = engine.best_candidate(&run.current, &run.selected)?;
        if gain == 0 {
            break StopReason::ExhaustedReduction;
        }
        run.add(&engine, x, gain);
        let ratio = previous_gain.abs_diff(gain) as f64 / gain as f64;
        if ratio < alpha {
            break StopReason::RelativeChange;
        }
        previous_gain = gain;
    };
    Ok(run.finish(&engine, Algorithm::APete, Some(alpha), stop))
}

fn n_classes_of(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |&m| m + 1)
}

// ---------------------------------------------------------------------------
// Greedy engine (integer arithmetic)
// ---------------------------------------------------------------------------

/// Shared per-run state: the integer separation counts, class bookkeeping,
/// and the weighting mode.
struct Engine<'a> {
    dist: &'a DistanceMatrix,
    labels: &'a [usize],
    grain: u64,
    /// Instances of each class, ascending.
    class_members: Vec<Vec<usize>>,
    /// Comparison denominator per class: |class| when weighted, 1 otherwise.
    /// Candidate gains are compared as the exact rationals gain/den.
    class_den: Vec<u64>,
    weighted: bool,
}

/// Mutable state of one greedy run.
struct Run {
    /// Per-instance separation count to the nearest same-class prototype,
    /// initially `grain` (the phantom distance 1, scaled).
    current: Vec<u64>,
    selected: Vec<bool>,
    /// (chosen index, integer gain) per iteration.
    order: Vec<(usize, u64)>,
}

impl<'a> Engine<'a> {
    fn new(
        dist: &'a DistanceMatrix,
        labels: &'a [usize],
        weighted: bool,
        phantoms: &PhantomSet,
    ) -> Result<Self> {
        let n = labels.len();
        if n != dist.n() {
            return Err(Error::DimensionMismatch {
                expected: dist.n(),
                actual: n,
            });
        }
        if n == 0 {
            return Err(Error::TooFewRows(0));
        }
        let q = n_classes_of(labels);
        if phantoms.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                actual: phantoms.len(),
            });
        }
        let mut class_members = vec![Vec::new(); q];
        for (i, &c) in labels.iter().enumerate() {
            class_members[c].push(i);
        }
        if let Some(empty) = class_members.iter().position(|m| m.is_empty()) {
            return Err(Error::ClassTooSmall {
                class: empty.to_string(),
                count: 0,
            });
        }
        let class_den = class_members
            .iter()
            .map(|m| if weighted { m.len() as u64 } else { 1 })
            .collect();
        Ok(Engine {
            dist,
            labels,
            grain: dist.grain() as u64,
            class_members,
            class_den,
            weighted,
        })
    }

    fn initial_counts(&self) -> Vec<u64> {
        vec![self.grain; self.labels.len()]
    }

    /// Integer gain of adding candidate `x`: the total drop in same-class
    /// separation counts.
    fn gain_of(&self, current: &[u64], x: usize) -> u64 {
        self.class_members[self.labels[x]]
            .iter()
            .map(|&i| current[i].saturating_sub(self.dist.separation(i, x) as u64))
            .sum()
    }

    /// Lower each same-class instance's count to its distance to `x`.
    fn absorb(&self, current: &mut [u64], x: usize) {
        for &i in &self.class_members[self.labels[x]] {
            let d = self.dist.separation(i, x) as u64;
            if d < current[i] {
                current[i] = d;
            }
        }
    }

    /// The unselected candidate with the largest (weighted) gain; ties break
    /// to the lowest index. Gains are compared as exact rationals
    /// `gain / class_den`, cross-multiplied in u128, so the choice does not
    /// depend on float rounding or thread count.
    fn best_candidate(&self, current: &[u64], selected: &[bool]) -> Result<(usize, u64)> {
        let best = (0..self.labels.len())
            .into_par_iter()
            .filter(|&x| !selected[x])
            .map(|x| {
                let gain = self.gain_of(current, x);
                (gain, self.class_den[self.labels[x]], x)
            })
            .reduce(
                || (0u64, 1u64, usize::MAX),
                |a, b| {
                    let left = a.0 as u128 * b.1 as u128;
                    let right = b.0 as u128 * a.1 as u128;
                    match left.cmp(&right) {
                        std::cmp::Ordering::Greater => a,
                        std::cmp::Ordering::Less => b,
                        std::cmp::Ordering::Equal => {
                            if a.2 <= b.2 {
                                a
                            } else {
                                b
                            }
                        }
                    }
                },
            );
        if best.2 == usize::MAX {
            return Err(Error::NoCandidates);
        }
        Ok((best.2, best.0))
    }

    /// Objective value under the engine's weighting, reported as f64.
    ///
    /// Unweighted, this is one exact integer sum and a single division.
    /// Weighted, it is a sum of per-class single-division terms
    /// `S_c·n / (q·|class|·grain)`; both forms are monotone under rounding,
    /// so reported traces are non-increasing whenever the true values are.
    fn objective(&self, current: &[u64]) -> f64 {
        if !self.weighted {
            let total: u64 = current.iter().sum();
            return total as f64 / self.grain as f64;
        }
        let n = self.labels.len() as u64;
        let q = self.class_members.len() as u64;
        let mut value = 0.0f64;
        for (members, &den) in self.class_members.iter().zip(&self.class_den) {
            let class_total: u64 = members.iter().map(|&i| current[i]).sum();
            value += (class_total * n) as f64 / (q * den * self.grain) as f64;
        }
        value
    }

    /// The reported (possibly weighted) reduction for a chosen candidate.
    fn reported_reduction(&self, x: usize, gain: u64) -> f64 {
        if !self.weighted {
            return gain as f64 / self.grain as f64;
        }
        let n = self.labels.len() as u64;
        let q = self.class_members.len() as u64;
        let den = self.class_den[self.labels[x]];
        (gain * n) as f64 / (q * den * self.grain) as f64
    }
}

impl Run {
    fn start(engine: &Engine) -> Self {
        Run {
            current: engine.initial_counts(),
            selected: vec![false; engine.labels.len()],
            order: Vec::new(),
        }
    }

    fn add(&mut self, engine: &Engine, x: usize, gain: u64) {
        engine.absorb(&mut self.current, x);
        self.selected[x] = true;
        self.order.push((x, gain));
    }

    fn finish(
        self,
        engine: &Engine,
        algorithm: Algorithm,
        alpha: Option<f64>,
        stop: StopReason,
    ) -> (PrototypeSet, SelectionTrace) {
        // Replay the run to report objective values with fresh, fixed-order
        // sums at every step.
        let mut current = engine.initial_counts();
        let initial_objective = engine.objective(&current);
        let mut steps = Vec::with_capacity(self.order.len());
        let mut prototypes = Vec::with_capacity(self.order.len());
        let mut previous: Option<u64> = None;
        for &(x, gain) in &self.order {
            engine.absorb(&mut current, x);
            let reduction = engine.reported_reduction(x, gain);
            let relative_change = if gain == 0 {
                None
            } else {
                let prev = previous.unwrap_or(0);
                Some(prev.abs_diff(gain) as f64 / gain as f64)
            };
            steps.push(TraceStep {
                chosen: x,
                objective: engine.objective(&current),
                reduction,
                relative_change,
            });
            prototypes.push(PrototypeRecord {
                index: x,
                class_id: engine.labels[x],
                reduction,
            });
            previous = Some(gain);
        }
        (
            PrototypeSet {
                algorithm,
                alpha,
                prototypes,
            },
            SelectionTrace {
                initial_objective,
                steps,
                stop,
            },
        )
    }
}
