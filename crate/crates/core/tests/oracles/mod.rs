//! Independent reference implementations used by the acceptance suite.
//! None of them call into the environments' own scheduling or tour code.

use bopo_core::env::fjsp::FjspInstance;
use bopo_core::env::jsp::JspInstance;
use bopo_core::env::tsp::TspInstance;

/// Start and end time of every operation of a semi-active job-shop schedule.
pub struct Timetable {
    pub start: Vec<u64>,
    pub end: Vec<u64>,
    pub machine: Vec<usize>,
}

impl Timetable {
    pub fn makespan(&self) -> u64 {
        self.end.iter().copied().max().unwrap_or(0)
    }

    /// No two operations overlap on a machine.
    pub fn machines_exclusive(&self) -> bool {
        let n = self.start.len();
        for a in 0..n {
            for b in a + 1..n {
                if self.machine[a] == self.machine[b] && self.start[a] < self.end[b] && self.start[b] < self.end[a] {
                    return false;
                }
            }
        }
        true
    }
}

/// Longest-path evaluation of the disjunctive graph whose machine links are
/// oriented by the order in which `jobs` dispatches operations. Returns
/// `None` if the sequence is not a valid job multiset.
pub fn jsp_longest_path(inst: &JspInstance, jobs: &[usize]) -> Option<Timetable> {
    let (n, m) = (inst.n_jobs(), inst.n_machines());
    if jobs.len() != n * m {
        return None;
    }
    let mut seen = vec![0usize; n];
    let mut machine_order: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut dispatch_order = Vec::with_capacity(n * m);
    for &j in jobs {
        if j >= n || seen[j] >= m {
            return None;
        }
        let op = inst.op(j, seen[j]);
        seen[j] += 1;
        machine_order[inst.machine(op)].push(op);
        dispatch_order.push(op);
    }
    // Predecessors: the job predecessor and the machine predecessor.
    let ops = n * m;
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); ops];
    for j in 0..n {
        for k in 1..m {
            preds[inst.op(j, k)].push(inst.op(j, k - 1));
        }
    }
    for order in &machine_order {
        for w in order.windows(2) {
            preds[w[1]].push(w[0]);
        }
    }
    // Dispatch order is a topological order of this graph.
    let mut start = vec![0u64; ops];
    let mut end = vec![0u64; ops];
    for &op in &dispatch_order {
        start[op] = preds[op].iter().map(|&p| end[p]).max().unwrap_or(0);
        end[op] = start[op] + inst.time(op) as u64;
    }
    Some(Timetable {
        start,
        end,
        machine: (0..ops).map(|op| inst.machine(op)).collect(),
    })
}

/// Event-list replay of a flexible schedule given as candidate-node
/// choices. Returns `None` if an operation is chosen twice, out of job
/// order, or left out.
pub fn fjsp_event_list(inst: &FjspInstance, nodes: &[usize]) -> Option<Timetable> {
    let ops = inst.op_count();
    let mut start = vec![u64::MAX; ops];
    let mut end = vec![0u64; ops];
    let mut machine = vec![usize::MAX; ops];
    let mut events: Vec<(usize, u64)> = Vec::new(); // (machine, end time)
    let mut job_next: Vec<usize> = (0..inst.n_jobs()).map(|j| inst.job_ops(j).start).collect();
    for &a in nodes {
        if a >= inst.node_count() {
            return None;
        }
        let node = inst.node(a);
        let job = inst.job_of(node.op);
        if job_next[job] != node.op || !inst.op_node_range(node.op).contains(&a) {
            return None;
        }
        job_next[job] += 1;
        let job_ready = if node.op > inst.job_ops(job).start { end[node.op - 1] } else { 0 };
        let machine_ready = events
            .iter()
            .filter(|e| e.0 == node.machine)
            .map(|e| e.1)
            .max()
            .unwrap_or(0);
        let s = job_ready.max(machine_ready);
        start[node.op] = s;
        end[node.op] = s + node.time as u64;
        machine[node.op] = node.machine;
        events.push((node.machine, end[node.op]));
    }
    if (0..inst.n_jobs()).any(|j| job_next[j] != inst.job_ops(j).end) {
        return None;
    }
    Some(Timetable { start, end, machine })
}

/// Closed-tour length summed edge by edge in visiting order. Returns
/// `None` unless `order` is a permutation of the nodes.
pub fn tour_distance_sum(inst: &TspInstance, order: &[usize]) -> Option<f64> {
    let n = inst.len();
    let mut seen = vec![false; n];
    if order.len() != n {
        return None;
    }
    for &c in order {
        if c >= n || seen[c] {
            return None;
        }
        seen[c] = true;
    }
    let xy = inst.coords();
    let d = |a: usize, b: usize| (xy[a][0] - xy[b][0]).hypot(xy[a][1] - xy[b][1]);
    let mut total = 0.0;
    for w in order.windows(2) {
        total += d(w[0], w[1]);
    }
    Some(total + d(order[n - 1], order[0]))
}

/// 0-based positions of the uniform filter, written from the 1-based rule
/// `floor(B/K)*(k-1)+1` for `k = 1..=K`.
pub fn uniform_positions(total: usize, keep: usize) -> Vec<usize> {
    (1..=keep).map(|k| (total / keep) * (k - 1) + 1 - 1).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
