//! Ride-pooling size: fixed, saturated-regime ceiling rule, and a
//! Monte Carlo dynamic-programming optimizer for time-varying sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::ControlPolicy;
use crate::dynamics::{run_with, RunOptions, Simulation};
use crate::error::{Error, Result};
use crate::metrics::RunRecord;
use crate::scalar::Scalar;
use crate::scenario::{DistanceDistributionModel, PoolingMode, Scenario, Stage, UniformDistance};

#[derive(Clone, Debug, PartialEq)]
pub enum PoolingPolicy<T> {
    /// Non-shared rides, costed without pooling terms.
    None,
    Fixed(u32),
    /// `c = 1` until the first critical crossing, then `⌈f/ā⌉` within `1..=c_max`.
    Saturated {
        c_max: u32,
    },
    /// One size per stage of length `stage_h`; the last size holds beyond the
    /// schedule.
    Schedule {
        stage_h: T,
        sizes: Vec<u32>,
    },
}

impl<T: Scalar> PoolingPolicy<T> {
    pub fn from_scenario(sc: &Scenario<T>) -> Result<Self> {
        Ok(match sc.pooling {
            PoolingMode::None => PoolingPolicy::None,
            PoolingMode::Fixed(c) => PoolingPolicy::Fixed(c),
            PoolingMode::Saturated => PoolingPolicy::Saturated { c_max: sc.c_max },
            PoolingMode::Dp => {
                return Err(Error::Config(
                    "pooling.mode = dp needs an optimized schedule; run the pool command".into(),
                ))
            }
        })
    }

    pub fn is_pooled(&self) -> bool {
        !matches!(self, PoolingPolicy::None)
    }

    /// Size for a step starting at `t` with request rate `f`, given the
    /// metering cap if it has been set.
    pub fn size(&self, t: T, f: T, a_bar: Option<T>) -> u32 {
        match self {
            PoolingPolicy::None => 1,
            PoolingPolicy::Fixed(c) => *c,
            PoolingPolicy::Saturated { c_max } => match a_bar {
                Some(a) => saturated_c(f, a).map(|c| c.min(*c_max)).unwrap_or(1),
                None => 1,
            },
            PoolingPolicy::Schedule { stage_h, sizes } => sizes
                .get(stage_index(t, *stage_h, sizes.len()))
                .copied()
                .unwrap_or(1),
        }
    }
}

/// Stage containing time `t` for `stages` stages of length `h`.
pub fn stage_index<T: Scalar>(t: T, h: T, stages: usize) -> usize {
    let j = (t / h).floor().to_usize().unwrap_or(0);
    j.min(stages.saturating_sub(1))
}

/// Number of stages covering `horizon`.
pub fn stage_count<T: Scalar>(horizon: T, h: T) -> usize {
    let n = (horizon / h).as_f64();
    // tolerate round-off in horizon/h
    ((n - 1e-9).ceil() as usize).max(1)
}

/// Source distributions for collecting and delivering vehicles at size `c`.
pub fn pooled_sources<T: Scalar>(
    m: &DistanceDistributionModel<T>,
    c: u32,
    c_max: u32,
    n00: T,
) -> Result<(UniformDistance<T>, UniformDistance<T>)> {
    if c < 1 || c > c_max {
        return Err(Error::Config(format!("pool size {c} outside 1..={c_max}")));
    }
    let c = T::from_usize_lossy(c as usize);
    Ok((
        m.distribution(Stage::Collecting, n00, c)?,
        m.distribution(Stage::Delivering, n00, c)?,
    ))
}

/// `max(⌈f/denom⌉, 1)`.
pub fn saturated_c<T: Scalar>(f: T, denom: T) -> Result<u32> {
    if !(denom > T::zero()) {
        return Err(Error::State(
            "pool size needs the metering cap, which is unset before the first critical crossing"
                .into(),
        ));
    }
    let c = (f / denom).ceil().to_u32().unwrap_or(u32::MAX);
    Ok(c.max(1))
}

/// `(Z, Z̄)` recomputed from the record: pax·h and h/trip. `Z̄` is absent
/// when no trips were requested.
pub fn total_cost<T: Scalar>(record: &RunRecord<T>) -> (T, Option<T>) {
    let z = record.recomputed_cost();
    let demand = record.total_demand();
    let zbar = if demand > T::zero() {
        Some(z / demand)
    } else {
        None
    };
    (z, zbar)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpResult<T> {
    pub stage_h: T,
    /// Chosen size per stage.
    pub sizes: Vec<u32>,
    /// Exact simulated cost of `sizes` (pax·h).
    pub cost: T,
    pub zbar: Option<T>,
    /// Cost of each constant size `1..=c_max`, by full simulation.
    pub constant_costs: Vec<(u32, T)>,
    /// Cost of the policy recovered from the value table.
    pub recovered_cost: T,
    pub recovered_sizes: Vec<u32>,
    /// Table estimate of the optimal cost from the initial state.
    pub table_value: Option<T>,
    pub rollouts: usize,
    pub exhaustive: bool,
    /// Recovery steps that fell back to the nearest populated bin.
    pub fallbacks: usize,
}

struct Rollout<T> {
    sizes: Vec<u32>,
    states: Vec<[f64; 3]>,
    stage_costs: Vec<f64>,
    cost: T,
}

/// Reduced state `(n00, n0c, nc0)` at the start of each stage and the cost
/// accrued within each stage.
fn stage_profile<T: Scalar>(rec: &RunRecord<T>, h: T, stages: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut states = Vec::with_capacity(stages);
    let mut marks = Vec::with_capacity(stages + 1);
    let rows = &rec.rows;
    let mut idx = 0;
    for j in 0..stages {
        let b = h * T::from_usize_lossy(j);
        while idx < rows.len() && rows[idx].t < b {
            idx += 1;
        }
        let r = &rows[idx.min(rows.len() - 1)];
        states.push([r.n00.as_f64(), r.n01.as_f64(), r.n10.as_f64()]);
        marks.push(r.cost.as_f64());
    }
    marks.push(rec.cost.as_f64());
    let costs = marks.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    (states, costs)
}

struct Binning {
    lo: [f64; 3],
    width: [f64; 3],
    bins: usize,
}

impl Binning {
    fn fit(points: &[[f64; 3]], bins: usize) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let mut width = [1.0; 3];
        for d in 0..3 {
            let span = hi[d] - lo[d];
            width[d] = if span > 0.0 { span / bins as f64 } else { 1.0 };
        }
        Binning { lo, width, bins }
    }

    fn coords(&self, p: &[f64; 3]) -> [usize; 3] {
        let mut c = [0; 3];
        for d in 0..3 {
            let x = ((p[d] - self.lo[d]) / self.width[d]).floor();
            c[d] = if x.is_finite() && x > 0.0 {
                (x as usize).min(self.bins - 1)
            } else {
                0
            };
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.bins + c[1]) * self.bins + c[2]
    }

    fn index(&self, p: &[f64; 3]) -> usize {
        self.flat(self.coords(p))
    }
}

struct StageTable {
    binning: Binning,
    /// Sum and count of `stage cost + V(next)` per (bin, c − 1).
    q: std::collections::BTreeMap<(usize, usize), (f64, usize)>,
    v: std::collections::BTreeMap<usize, f64>,
}

impl StageTable {
    fn best(&self, bin: usize, c_max: usize) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for c in 0..c_max {
            if let Some((s, n)) = self.q.get(&(bin, c)) {
                let q = s / *n as f64;
                if best.map_or(true, |b| q < b.1) {
                    best = Some((c as u32 + 1, q));
                }
            }
        }
        best
    }

    /// Nearest populated bin by Euclidean distance in bin coordinates.
    fn nearest(&self, p: &[f64; 3]) -> Option<usize> {
        let c = self.binning.coords(p);
        let b = self.binning.bins;
        self.v
            .keys()
            .map(|&k| {
                let kc = [k / (b * b), (k / b) % b, k % b];
                let d: usize = (0..3).map(|i| kc[i].abs_diff(c[i]).pow(2)).sum();
                (d, k)
            })
            .min()
            .map(|(_, k)| k)
    }
}

fn simulate_schedule<T: Scalar>(
    sc: &Scenario<T>,
    ctrl: &ControlPolicy<T>,
    h: T,
    sizes: Vec<u32>,
) -> Result<RunRecord<T>> {
    let pool = PoolingPolicy::Schedule { stage_h: h, sizes };
    run_with(sc, ctrl.clone(), pool, &RunOptions::default())
}

/// Optimizes the per-stage pooling size.
///
/// Sampled size sequences are rolled out through the full simulator; a
/// value table over binned reduced states is fitted by backward recursion
/// and a policy is recovered forward by re-simulating greedily against it.
/// The returned policy is the cheapest, by exact simulation, among the
/// recovered policy and every rollout, so it never loses to a constant size.
pub fn dp_optimize<T: Scalar>(
    sc: &Scenario<T>,
    bins: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<DpResult<T>> {
    if sc.c_max < 1 {
        return Err(Error::Config("c_max must be at least 1".into()));
    }
    if bins < 2 {
        return Err(Error::Config("dp.bins must be at least 2".into()));
    }
    let h = sc.dp.stage_h;
    let stages = stage_count(sc.horizon_h, h);
    let c_max = sc.c_max;
    let ctrl = ControlPolicy::from_scenario(sc)?;

    // Action sequences: exhaustive when affordable, otherwise constants plus
    // random sequences.
    let total = (c_max as f64).powi(stages as i32);
    let exhaustive = total <= n_rollouts.max(c_max as usize) as f64;
    let mut seqs: Vec<Vec<u32>> = Vec::new();
    if exhaustive {
        let n = total as usize;
        for mut code in 0..n {
            let mut s = vec![1; stages];
            for slot in s.iter_mut() {
                *slot = (code % c_max as usize) as u32 + 1;
                code /= c_max as usize;
            }
            seqs.push(s);
        }
    } else {
        for c in 1..=c_max {
            seqs.push(vec![c; stages]);
        }
        let extra = n_rollouts.saturating_sub(seqs.len());
        for i in 0..extra {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let s = if i % 2 == 0 {
                (0..stages).map(|_| rng.gen_range(1..=c_max)).collect()
            } else {
                let mut c = rng.gen_range(1..=c_max) as i64;
                (0..stages)
                    .map(|_| {
                        c = (c + rng.gen_range(-1..=1)).clamp(1, c_max as i64);
                        c as u32
                    })
                    .collect()
            };
            seqs.push(s);
        }
    }

    let rollouts: Vec<Rollout<T>> = seqs
        .into_par_iter()
        .map(|sizes| {
            let rec = simulate_schedule(sc, &ctrl, h, sizes.clone())?;
            let (states, stage_costs) = stage_profile(&rec, h, stages);
            Ok(Rollout {
                sizes,
                states,
                stage_costs,
                cost: rec.cost,
            })
        })
        .collect::<Result<_>>()?;

    // Backward recursion; V at the terminal stage is zero.
    let mut tables: Vec<StageTable> = Vec::with_capacity(stages);
    let mut next_v: Vec<f64> = vec![0.0; rollouts.len()];
    for j in (0..stages).rev() {
        let pts: Vec<[f64; 3]> = rollouts.iter().map(|r| r.states[j]).collect();
        let binning = Binning::fit(&pts, bins);
        let mut q = std::collections::BTreeMap::new();
        for (r, nv) in rollouts.iter().zip(&next_v) {
            let key = (binning.index(&r.states[j]), r.sizes[j] as usize - 1);
            let e = q.entry(key).or_insert((0.0, 0));
            e.0 += r.stage_costs[j] + nv;
            e.1 += 1;
        }
        let mut table = StageTable {
            binning,
            q,
            v: Default::default(),
        };
        let keys: Vec<usize> = table.q.keys().map(|k| k.0).collect();
        for b in keys {
            if let Some((_, val)) = table.best(b, c_max as usize) {
                table.v.insert(b, val);
            }
        }
        next_v = rollouts
            .iter()
            .map(|r| table.v[&table.binning.index(&r.states[j])])
            .collect();
        tables.push(table);
    }
    tables.reverse();
    let table_value = tables
        .first()
        .and_then(|t0| t0.v.get(&t0.binning.index(&rollouts[0].states[0])))
        .copied()
        .map(T::lit);

    // Forward recovery.
    let mut sizes: Vec<u32> = Vec::with_capacity(stages);
    let mut fallbacks = 0;
    let mut sim = Simulation::new(
        sc,
        ctrl.clone(),
        PoolingPolicy::Schedule {
            stage_h: h,
            sizes: vec![1; stages],
        },
        RunOptions::default(),
    )?;
    for (j, table) in tables.iter().enumerate() {
        let s = sim.state();
        let p = [s.n00.as_f64(), s.n01().as_f64(), s.n10().as_f64()];
        let mut bin = table.binning.index(&p);
        if !table.v.contains_key(&bin) {
            fallbacks += 1;
            bin = table
                .nearest(&p)
                .ok_or_else(|| Error::Consistency("empty value table".into()))?;
            log::warn!("dp recovery: stage {j} state {p:?} fell back to nearest populated bin");
        }
        let (c, _) = table
            .best(bin, c_max as usize)
            .ok_or_else(|| Error::Consistency("bin without actions".into()))?;
        sizes.push(c);
        if let PoolingPolicy::Schedule { sizes: s, .. } = sim.pooling_mut() {
            s[j] = c;
        }
        sim.run_until(h * T::from_usize_lossy(j + 1))?;
    }
    let recovered = sim.finish()?;
    let recovered_cost = recovered.cost;

    let mut constant_costs = Vec::new();
    for c in 1..=c_max {
        let z = match rollouts.iter().find(|r| r.sizes.iter().all(|&s| s == c)) {
            Some(r) => r.cost,
            None => simulate_schedule(sc, &ctrl, h, vec![c; stages])?.cost,
        };
        constant_costs.push((c, z));
    }

    let mut best_sizes = sizes.clone();
    let mut best_cost = recovered_cost;
    for r in &rollouts {
        if r.cost < best_cost {
            best_cost = r.cost;
            best_sizes = r.sizes.clone();
        }
    }
    for &(c, z) in &constant_costs {
        if z < best_cost {
            best_cost = z;
            best_sizes = vec![c; stages];
        }
    }
    let demand = recovered.total_demand();
    Ok(DpResult {
        stage_h: h,
        sizes: best_sizes,
        cost: best_cost,
        zbar: if demand > T::zero() {
            Some(best_cost / demand)
        } else {
            None
        },
        constant_costs,
        recovered_cost,
        recovered_sizes: sizes,
        table_value,
        rollouts: rollouts.len(),
        exhaustive,
        fallbacks,
    })
}
