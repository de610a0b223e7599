//! Euclidean travelling salesman.
//!
//! An action is a node index. A tour is closed: its length includes the edge
//! from the last node back to the first.

use rand::Rng;

use super::Environment;
use crate::error::{domain, parse_err, Error, Result};
use crate::rng::stream;

/// Largest instance the exact solver accepts.
pub const EXACT_MAX_NODES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    coords: Vec<[f64; 2]>,
}

/// How edge weights are computed from coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    /// Euclidean distance rounded to the nearest integer, as in TSPLIB EUC_2D.
    TsplibRounded,
}

impl Metric {
    pub fn distance(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let d = (a[0] - b[0]).hypot(a[1] - b[1]);
        match self {
            Metric::Euclidean => d,
            Metric::TsplibRounded => (d + 0.5).floor(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::TsplibRounded => "tsplib-rounded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
}

impl TspInstance {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() < 2 {
            return domain("a tour needs at least two nodes");
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return domain("coordinates must be finite");
        }
        Ok(Self { coords })
    }

    /// Uniform coordinates in the unit square.
    pub fn generate<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        Self::new((0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        Metric::Euclidean.distance(self.coords[a], self.coords[b])
    }

    fn check_permutation(&self, order: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() {
            return domain(format!("tour has {} nodes, expected {}", order.len(), self.len()));
        }
        for &v in order {
            if v >= self.len() || seen[v] {
                return domain("tour is not a permutation of the nodes");
            }
            seen[v] = true;
        }
        Ok(())
    }

    pub fn tour_length(&self, order: &[usize]) -> Result<f64> {
        self.tour_length_with(order, Metric::Euclidean)
    }

    pub fn tour_length_with(&self, order: &[usize], metric: Metric) -> Result<f64> {
        self.check_permutation(order)?;
        Ok(cycle_length(&self.coords, order, metric))
    }

    /// The eight symmetries of the unit square applied to the coordinates;
    /// the identity comes first.
    pub fn augment_8(&self) -> Vec<TspInstance> {
        let maps: [fn(f64, f64) -> [f64; 2]; 8] = [
            |x, y| [x, y],
            |x, y| [y, x],
            |x, y| [1.0 - x, y],
            |x, y| [1.0 - y, x],
            |x, y| [x, 1.0 - y],
            |x, y| [y, 1.0 - x],
            |x, y| [1.0 - x, 1.0 - y],
            |x, y| [1.0 - y, 1.0 - x],
        ];
        maps.iter()
            .map(|f| TspInstance {
                coords: self.coords.iter().map(|&[x, y]| f(x, y)).collect(),
            })
            .collect()
    }

    /// Parses the EUC_2D subset of TSPLIB.
    pub fn parse_tsplib(text: &str) -> Result<Self> {
        let mut dimension: Option<(usize, usize)> = None;
        let mut coords: Vec<[f64; 2]> = Vec::new();
        let mut in_coords = false;
        let mut saw_section = false;
        let mut edge_type: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line == "EOF" {
                break;
            }
            if in_coords {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() == 3 && toks[0].parse::<usize>().is_ok() {
                    let x = toks[1].parse::<f64>();
                    let y = toks[2].parse::<f64>();
                    match (x, y) {
                        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => coords.push([x, y]),
                        _ => return parse_err(ln, format!("bad coordinate line {line:?}")),
                    }
                    continue;
                }
                if line.contains(':') || line.ends_with("SECTION") {
                    in_coords = false;
                } else {
                    return parse_err(ln, format!("bad coordinate line {line:?}"));
                }
            }
            if line == "NODE_COORD_SECTION" {
                in_coords = true;
                saw_section = true;
                continue;
            }
            if line.ends_with("SECTION") {
                return Err(Error::Capability(format!("unsupported section {line}")));
            }
            let Some((key, value)) = line.split_once(':') else {
                return parse_err(ln, format!("expected KEY: VALUE, found {line:?}"));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "TYPE" if value != "TSP" => {
                    return Err(Error::Capability(format!("unsupported problem type {value}")))
                }
                "DIMENSION" => match value.parse::<usize>() {
                    Ok(d) => dimension = Some((d, ln)),
                    Err(_) => return parse_err(ln, format!("bad dimension {value:?}")),
                },
                "EDGE_WEIGHT_TYPE" => {
                    if value != "EUC_2D" {
                        return Err(Error::Capability(format!("unsupported edge weight type {value}")));
                    }
                    edge_type = Some(value.to_string());
                }
                _ => {}
            }
        }
        if edge_type.is_none() {
            return parse_err(1, "missing EDGE_WEIGHT_TYPE");
        }
        if !saw_section {
            return parse_err(1, "missing NODE_COORD_SECTION");
        }
        match dimension {
            None => parse_err(1, "missing DIMENSION"),
            Some((d, ln)) if d != coords.len() => {
                parse_err(ln, format!("DIMENSION {d} but {} coordinates", coords.len()))
            }
            Some(_) => Self::new(coords).or_else(|e| parse_err(1, e.to_string())),
        }
    }

    pub fn to_tsplib(&self, name: &str) -> String {
        let mut s = format!(
            "NAME : {name}\nTYPE : TSP\nDIMENSION : {}\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n",
            self.len()
        );
        for (i, [x, y]) in self.coords.iter().enumerate() {
            s.push_str(&format!("{} {x:?} {y:?}\n", i + 1));
        }
        s.push_str("EOF\n");
        s
    }
}

fn cycle_length(coords: &[[f64; 2]], order: &[usize], metric: Metric) -> f64 {
    let n = order.len();
    (0..n)
        .map(|i| metric.distance(coords[order[i]], coords[order[(i + 1) % n]]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TourState {
    pub visited: Vec<bool>,
    pub order: Vec<usize>,
}

impl TourState {
    pub fn first(&self) -> Option<usize> {
        self.order.first().copied()
    }

    pub fn last(&self) -> Option<usize> {
        self.order.last().copied()
    }
}

impl Environment for TspInstance {
    type State = TourState;

    fn initial_state(&self) -> TourState {
        TourState {
            visited: vec![false; self.len()],
            order: Vec::with_capacity(self.len()),
        }
    }

    fn horizon(&self) -> usize {
        self.len()
    }

    fn action_count(&self) -> usize {
        self.len()
    }

    fn is_terminal(&self, state: &TourState) -> bool {
        state.order.len() == self.len()
    }

    fn write_mask(&self, state: &TourState, mask: &mut [bool]) {
        for (m, &v) in mask.iter_mut().zip(&state.visited) {
            *m = !v;
        }
    }

    fn apply(&self, state: &mut TourState, node: usize) -> Result<()> {
        if node >= self.len() {
            return domain(format!("node {node} out of range"));
        }
        if state.visited[node] {
            return domain(format!("node {node} already visited"));
        }
        state.visited[node] = true;
        state.order.push(node);
        Ok(())
    }

    /// Length of the closed cycle through the nodes visited so far.
    fn objective(&self, state: &TourState) -> f64 {
        cycle_length(&self.coords, &state.order, Metric::Euclidean)
    }
}

/// Held-Karp dynamic program with node 0 fixed as the start.
pub fn exact_tsp(inst: &TspInstance) -> Result<Tour> {
    let n = inst.len();
    if n > EXACT_MAX_NODES {
        return Err(Error::Capability(format!(
            "exact solver supports at most {EXACT_MAX_NODES} nodes, got {n}"
        )));
    }
    if n <= 3 {
        let order: Vec<usize> = (0..n).collect();
        let length = inst.tour_length(&order)?;
        return Ok(Tour { order, length });
    }
    // Subsets range over nodes 1..n, bit i standing for node i + 1.
    let k = n - 1;
    let full = 1usize << k;
    let d: Vec<f64> = (0..n * n).map(|i| inst.dist(i / n, i % n)).collect();
    let mut cost = vec![f64::INFINITY; full * k];
    let mut parent = vec![u8::MAX; full * k];
    for j in 0..k {
        cost[(1 << j) * k + j] = d[j + 1];
    }
    for set in 1..full {
        if set.count_ones() < 2 {
            continue;
        }
        let mut bits = set;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let prev_set = set ^ (1 << j);
            let row = &cost[prev_set * k..prev_set * k + k];
            let mut best = f64::INFINITY;
            let mut arg = u8::MAX;
            let mut pb = prev_set;
            while pb != 0 {
                let i = pb.trailing_zeros() as usize;
                pb &= pb - 1;
                let c = row[i] + d[(i + 1) * n + j + 1];
                if c < best {
                    best = c;
                    arg = i as u8;
                }
            }
            cost[set * k + j] = best;
            parent[set * k + j] = arg;
        }
    }
    let last_set = full - 1;
    let (mut j, _) = (0..k)
        .map(|j| (j, cost[last_set * k + j] + d[(j + 1) * n]))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let mut order = Vec::with_capacity(n);
    let mut set = last_set;
    loop {
        order.push(j + 1);
        let p = parent[set * k + j];
        set ^= 1 << j;
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    order.push(0);
    order.reverse();
    let length = inst.tour_length(&order)?;
    Ok(Tour { order, length })
}

pub fn nearest_neighbor(inst: &TspInstance, start: usize) -> Result<Tour> {
    let n = inst.len();
    if start >= n {
        return domain(format!("start node {start} out of range"));
    }
    let mut visited = vec![false; n];
    let mut order = vec![start];
    visited[start] = true;
    let mut cur = start;
    for _ in 1..n {
        let next = (0..n)
            .filter(|&v| !visited[v])
            .min_by(|&a, &b| inst.dist(cur, a).total_cmp(&inst.dist(cur, b)))
            .expect("unvisited node remains");
        visited[next] = true;
        order.push(next);
        cur = next;
    }
    let length = inst.tour_length(&order)?;
    Ok(Tour { order, length })
}

/// Improves `order` with 2-opt moves until no move shortens the tour.
pub fn two_opt(inst: &TspInstance, mut order: Vec<usize>) -> Result<Tour> {
    inst.check_permutation(&order)?;
    while two_opt_pass(inst, &mut order) {}
    let length = inst.tour_length(&order)?;
    Ok(Tour { order, length })
}

fn two_opt_pass(inst: &TspInstance, order: &mut [usize]) -> bool {
    let n = order.len();
    let mut improved = false;
    if n < 4 {
        return false;
    }
    for i in 0..n - 1 {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a, b) = (order[i], order[i + 1]);
            let (c, e) = (order[j], order[(j + 1) % n]);
            let delta = inst.dist(a, c) + inst.dist(b, e) - inst.dist(a, b) - inst.dist(c, e);
            if delta < -1e-12 {
                order[i + 1..=j].reverse();
                improved = true;
            }
        }
    }
    improved
}

/// Moves segments of up to three consecutive nodes, possibly reversed, to a
/// better position. Returns whether the tour changed.
fn or_opt_pass(inst: &TspInstance, order: &mut Vec<usize>) -> bool {
    let n = order.len();
    if n < 5 {
        return false;
    }
    for seg in 1..=3.min(n - 3) {
        // each rotation brings the next segment start to position 1
        for _ in 0..n {
            order.rotate_left(1);
            let prev = order[0];
            let (first, last) = (order[1], order[seg]);
            let next = order[seg + 1];
            let removed = inst.dist(prev, first) + inst.dist(last, next) - inst.dist(prev, next);
            for p in seg + 1..n {
                let (a, b) = (order[p], order[(p + 1) % n]);
                let base = inst.dist(a, b);
                let forward = inst.dist(a, first) + inst.dist(last, b) - base;
                let backward = inst.dist(a, last) + inst.dist(first, b) - base;
                let (gain, reverse) = if backward < forward {
                    (removed - backward, true)
                } else {
                    (removed - forward, false)
                };
                if gain > 1e-12 {
                    let mut segment: Vec<usize> = order.drain(1..=seg).collect();
                    if reverse {
                        segment.reverse();
                    }
                    let at = p - seg + 1;
                    order.splice(at..at, segment);
                    return true;
                }
            }
        }
    }
    false
}

/// Nearest-neighbour tour from a seed-chosen start, then 2-opt.
/// Or-opt segment moves are interleaved with the 2-opt passes; the result is
/// still a 2-opt local optimum.
pub fn two_opt_reference(inst: &TspInstance, seed: u64) -> Result<Tour> {
    let start = stream(seed, &[]).gen_range(0..inst.len());
    let mut order = nearest_neighbor(inst, start)?.order;
    loop {
        while two_opt_pass(inst, &mut order) {}
        if !or_opt_pass(inst, &mut order) {
            break;
        }
    }
    let length = inst.tour_length(&order)?;
    Ok(Tour { order, length })
}
