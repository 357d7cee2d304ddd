//! Exact multiple-choice knapsack: pick one item per class, minimizing total
//! cost subject to a total-weight capacity.
//!
//! Depth-first branch and bound over classes. Items dominated inside their
//! class are dropped up front; the bound at each node is the LP relaxation
//! of the remaining classes, solved greedily over the segments of each
//! class's lower convex hull.
//!
//! Ties are resolved deterministically: lower cost first, then lower total
//! weight, then the lexicographically largest weight vector (heavier choices
//! on lower class indices).

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Item {
    pub weight: u64,
    pub cost: f64,
}

/// One hull segment: moving from a lighter to a heavier hull point.
#[derive(Clone, Copy, Debug)]
struct Segment {
    dw: u64,
    dc: f64, // negative: cost falls as weight rises
}

impl Segment {
    fn efficiency(&self) -> f64 {
        -self.dc / self.dw as f64
    }
}

struct Class {
    /// Surviving (non-dominated) original indices, heaviest first.
    order: Vec<usize>,
    min_weight: u64,
    min_weight_cost: f64,
    hull: Vec<Segment>,
}

fn prepare(items: &[Item]) -> Result<Class> {
    if items.is_empty() {
        return Err(invalid("every class needs at least one item"));
    }
    if items.iter().any(|it| !it.cost.is_finite()) {
        return Err(invalid("item costs must be finite"));
    }
    // Non-dominated sweep by (weight asc, cost asc, index asc).
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        items[a]
            .weight
            .cmp(&items[b].weight)
            .then(items[a].cost.total_cmp(&items[b].cost))
            .then(a.cmp(&b))
    });
    let mut front: Vec<usize> = Vec::new();
    for &i in &idx {
        match front.last() {
            Some(&j) if items[i].cost >= items[j].cost => {}
            _ => front.push(i),
        }
    }
    // Lower convex hull over the front (already weight-ascending, cost
    // strictly descending).
    let mut hull: Vec<usize> = Vec::new();
    for &i in &front {
        while hull.len() >= 2 {
            let a = items[hull[hull.len() - 2]];
            let b = items[hull[hull.len() - 1]];
            let c = items[i];
            let cross = (b.weight as f64 - a.weight as f64) * (c.cost - a.cost)
                - (b.cost - a.cost) * (c.weight as f64 - a.weight as f64);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let segments = hull
        .windows(2)
        .map(|w| Segment {
            dw: items[w[1]].weight - items[w[0]].weight,
            dc: items[w[1]].cost - items[w[0]].cost,
        })
        .collect();
    let first = items[front[0]];
    front.reverse();
    Ok(Class {
        order: front,
        min_weight: first.weight,
        min_weight_cost: first.cost,
        hull: segments,
    })
}

struct Solver<'a> {
    items: &'a [Vec<Item>],
    classes: Vec<Class>,
    /// `suffix_min_weight[k]` = Σ min weight over classes k.. .
    suffix_min_weight: Vec<u64>,
    suffix_min_cost: Vec<f64>,
    /// Hull segments of classes k.., sorted by efficiency (best first).
    suffix_segments: Vec<Vec<Segment>>,
    choice: Vec<usize>,
    best: Option<(f64, u64, Vec<usize>)>,
    nodes: u64,
}

impl Solver<'_> {
    /// LP relaxation of classes `k..` with `cap` capacity left.
    fn lower_bound(&self, k: usize, cap: u64) -> Option<f64> {
        let base = self.suffix_min_weight[k];
        if base > cap {
            return None;
        }
        let mut room = (cap - base) as f64;
        let mut cost = self.suffix_min_cost[k];
        for s in &self.suffix_segments[k] {
            if room <= 0.0 {
                break;
            }
            let take = (s.dw as f64).min(room);
            cost += s.dc * take / s.dw as f64;
            room -= take;
        }
        Some(cost)
    }

    fn tol(&self) -> f64 {
        match &self.best {
            Some((c, _, _)) => 1e-12 * (1.0 + c.abs()),
            None => 0.0,
        }
    }

    fn dfs(&mut self, k: usize, cap: u64, cost: f64, weight: u64) {
        self.nodes += 1;
        if k == self.classes.len() {
            let better = match &self.best {
                None => true,
                Some((bc, bw, _)) => cost < *bc || (cost == *bc && weight < *bw),
            };
            if better {
                self.best = Some((cost, weight, self.choice.clone()));
            }
            return;
        }
        for pos in 0..self.classes[k].order.len() {
            let i = self.classes[k].order[pos];
            let it = self.items[k][i];
            if it.weight > cap || cap - it.weight < self.suffix_min_weight[k + 1] {
                continue;
            }
            let rest = cap - it.weight;
            // Sum in class order so equal assignments give identical floats.
            let partial = cost + it.cost;
            let Some(lb) = self.lower_bound(k + 1, rest) else {
                continue;
            };
            if let Some((bc, _, _)) = &self.best {
                if partial + lb > *bc + self.tol() {
                    continue;
                }
            }
            self.choice[k] = i;
            self.dfs(k + 1, rest, partial, weight + it.weight);
        }
    }
}

/// Solution of one knapsack instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Chosen item index for each class.
    pub choice: Vec<usize>,
    pub cost: f64,
    pub weight: u64,
    /// Search nodes visited.
    pub nodes: u64,
}

/// Solves the instance exactly; fails with [`Error::Infeasible`] if even the
/// lightest choice in every class exceeds `capacity`.
pub fn solve(classes: &[Vec<Item>], capacity: u64) -> Result<Solution> {
    if classes.is_empty() {
        return Err(invalid("knapsack needs at least one class"));
    }
    let prepared = classes.iter().map(|c| prepare(c)).collect::<Result<Vec<_>>>()?;
    let n = prepared.len();
    let mut suffix_min_weight = vec![0u64; n + 1];
    let mut suffix_min_cost = vec![0.0f64; n + 1];
    let mut suffix_segments = vec![Vec::new(); n + 1];
    for k in (0..n).rev() {
        suffix_min_weight[k] = suffix_min_weight[k + 1] + prepared[k].min_weight;
        suffix_min_cost[k] = suffix_min_cost[k + 1] + prepared[k].min_weight_cost;
        let mut segs = suffix_segments[k + 1].clone();
        segs.extend_from_slice(&prepared[k].hull);
        segs.sort_by(|a: &Segment, b: &Segment| b.efficiency().total_cmp(&a.efficiency()));
        suffix_segments[k] = segs;
    }
    if suffix_min_weight[0] > capacity {
        return Err(Error::Infeasible(format!(
            "lightest assignment needs {} > capacity {capacity}",
            suffix_min_weight[0]
        )));
    }
    let mut solver = Solver {
        items: classes,
        classes: prepared,
        suffix_min_weight,
        suffix_min_cost,
        suffix_segments,
        choice: vec![0; n],
        best: None,
        nodes: 0,
    };
    solver.dfs(0, capacity, 0.0, 0);
    let (cost, weight, choice) = solver
        .best
        .ok_or_else(|| Error::Infeasible("no feasible assignment".into()))?;
    Ok(Solution {
        choice,
        cost,
        weight,
        nodes: solver.nodes,
    })
}
