//! Flexible job-shop scheduling.
//!
//! Each operation may run on any of its candidate machines. The graph has one
//! node per (operation, candidate machine) pair, and an action is a node
//! index: it schedules the node's operation on the node's machine.

use rand::seq::index::sample;
use rand::Rng;

use super::jsp::{parse_ints, DispatchRule, JspInstance};
use super::{mean, quartiles, Environment};
use crate::cop::{Origin, Solution};
use crate::error::{domain, parse_err, Result};

pub const STATE_FEATURES: usize = 15;
pub const JOB_CONTEXT_FEATURES: usize = 5;
pub const MACHINE_CONTEXT_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub op: usize,
    pub machine: usize,
    pub time: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FjspInstance {
    n_machines: usize,
    /// Operation id range of each job: ops `job_start[i]..job_start[i + 1]`.
    job_start: Vec<usize>,
    job_of: Vec<usize>,
    /// Node id range of each operation, nodes sorted by machine.
    op_nodes: Vec<usize>,
    nodes: Vec<Node>,
    avg_time: Vec<f64>,
}

/// Candidate-set size distribution of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    /// 1 or 2 candidates per operation.
    EData,
    /// 1 to 3 candidates per operation.
    RData,
    /// 1 to m candidates per operation.
    VData,
}

impl std::str::FromStr for Flavor {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_end_matches("-data") {
            "e" | "edata" => Ok(Flavor::EData),
            "r" | "rdata" => Ok(Flavor::RData),
            "v" | "vdata" => Ok(Flavor::VData),
            other => domain(format!("unknown flavor {other:?}")),
        }
    }
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Flavor::EData => "edata",
            Flavor::RData => "rdata",
            Flavor::VData => "vdata",
        })
    }
}

impl FjspInstance {
    /// `jobs[i][k]` lists the (machine, time) candidates of operation `k` of job `i`.
    pub fn new(n_machines: usize, jobs: &[Vec<Vec<(usize, u32)>>]) -> Result<Self> {
        if jobs.is_empty() || n_machines == 0 {
            return domain("instance needs at least one job and one machine");
        }
        let mut job_start = vec![0];
        let mut job_of = Vec::new();
        let mut op_nodes = vec![0];
        let mut nodes = Vec::new();
        let mut avg_time = Vec::new();
        for (job, ops) in jobs.iter().enumerate() {
            if ops.is_empty() {
                return domain(format!("job {job} has no operations"));
            }
            for cands in ops {
                if cands.is_empty() {
                    return domain(format!("an operation of job {job} has no candidate machine"));
                }
                let op = job_of.len();
                let mut sorted = cands.clone();
                sorted.sort_unstable();
                for w in sorted.windows(2) {
                    if w[0].0 == w[1].0 {
                        return domain(format!("machine {} listed twice for one operation", w[0].0));
                    }
                }
                let mut sum = 0.0;
                for &(machine, time) in &sorted {
                    if machine >= n_machines {
                        return domain(format!("machine {machine} out of range"));
                    }
                    if time == 0 {
                        return domain("processing time must be at least 1");
                    }
                    sum += time as f64;
                    nodes.push(Node { op, machine, time });
                }
                avg_time.push(sum / sorted.len() as f64);
                job_of.push(job);
                op_nodes.push(nodes.len());
            }
            job_start.push(job_of.len());
        }
        Ok(Self {
            n_machines,
            job_start,
            job_of,
            op_nodes,
            nodes,
            avg_time,
        })
    }

    /// The same problem with singleton candidate sets.
    pub fn from_jsp(jsp: &JspInstance) -> Self {
        let jobs: Vec<Vec<Vec<(usize, u32)>>> = (0..jsp.n_jobs())
            .map(|j| {
                (0..jsp.n_machines())
                    .map(|k| {
                        let op = jsp.op(j, k);
                        vec![(jsp.machine(op), jsp.time(op))]
                    })
                    .collect()
            })
            .collect();
        Self::new(jsp.n_machines(), &jobs).expect("a valid job shop is a valid flexible job shop")
    }

    pub fn n_jobs(&self) -> usize {
        self.job_start.len() - 1
    }

    pub fn n_machines(&self) -> usize {
        self.n_machines
    }

    pub fn op_count(&self) -> usize {
        self.job_of.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Node {
        self.nodes[id]
    }

    pub fn job_of(&self, op: usize) -> usize {
        self.job_of[op]
    }

    pub fn job_ops(&self, job: usize) -> std::ops::Range<usize> {
        self.job_start[job]..self.job_start[job + 1]
    }

    pub fn op_node_range(&self, op: usize) -> std::ops::Range<usize> {
        self.op_nodes[op]..self.op_nodes[op + 1]
    }

    pub fn avg_time(&self, op: usize) -> f64 {
        self.avg_time[op]
    }

    pub fn max_ops_per_job(&self) -> usize {
        (0..self.n_jobs()).map(|j| self.job_ops(j).len()).max().unwrap_or(0)
    }

    pub fn max_time(&self) -> u32 {
        self.nodes.iter().map(|n| n.time).max().unwrap_or(1)
    }

    /// Node id of `op` on `machine`, if that machine is a candidate.
    pub fn node_of(&self, op: usize, machine: usize) -> Option<usize> {
        self.op_node_range(op).find(|&id| self.nodes[id].machine == machine)
    }

    pub fn graph(&self) -> FjspGraph {
        let mut precedence = Vec::new();
        let mut same_machine = Vec::new();
        let mut same_op = Vec::new();
        for job in 0..self.n_jobs() {
            let ops = self.job_ops(job);
            for op in ops.start..ops.end - 1 {
                for a in self.op_node_range(op) {
                    for b in self.op_node_range(op + 1) {
                        precedence.push((a, b));
                    }
                }
            }
        }
        for op in 0..self.op_count() {
            let r = self.op_node_range(op);
            for a in r.clone() {
                for b in a + 1..r.end {
                    same_op.push((a, b));
                }
            }
        }
        let mut by_machine = vec![Vec::new(); self.n_machines];
        for (id, n) in self.nodes.iter().enumerate() {
            by_machine[n.machine].push(id);
        }
        for ids in &by_machine {
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    same_machine.push((a, b));
                }
            }
        }
        FjspGraph {
            n_nodes: self.node_count(),
            precedence,
            same_machine,
            same_op,
        }
    }

    /// Static per-node features, 15 per node. Job-level quantities use the
    /// average processing time of each operation; machine quartiles use the
    /// actual times of every node on that machine.
    pub fn state_features(&self) -> Vec<[f64; STATE_FEATURES]> {
        let mut per_machine: Vec<Vec<f64>> = vec![Vec::new(); self.n_machines];
        for n in &self.nodes {
            per_machine[n.machine].push(n.time as f64);
        }
        let machine_q: Vec<[f64; 3]> = per_machine.iter().map(|v| quartiles(v)).collect();
        let mut op_stats = vec![(0.0, 0.0, [0.0; 3]); self.op_count()];
        for job in 0..self.n_jobs() {
            let times: Vec<f64> = self.job_ops(job).map(|op| self.avg_time[op]).collect();
            let total: f64 = times.iter().sum();
            let q = quartiles(&times);
            let mut done = 0.0;
            for (op, t) in self.job_ops(job).zip(&times) {
                done += t;
                op_stats[op] = (done / total, (total - done) / total, q);
            }
        }
        self.nodes
            .iter()
            .map(|n| {
                let (before, after, jq) = op_stats[n.op];
                let mq = machine_q[n.machine];
                let t = self.avg_time[n.op];
                [
                    n.time as f64,
                    before,
                    after,
                    jq[0],
                    jq[1],
                    jq[2],
                    mq[0],
                    mq[1],
                    mq[2],
                    t - jq[0],
                    t - jq[1],
                    t - jq[2],
                    t - mq[0],
                    t - mq[1],
                    t - mq[2],
                ]
            })
            .collect()
    }

    /// Parses the common `.fjs` layout with 1-based machine indices.
    pub fn parse_fjs(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let Some((hline, header)) = lines.next() else {
            return parse_err(1, "missing header");
        };
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() < 2 || head.len() > 3 {
            return parse_err(hline, "header must be \"jobs machines [average]\"");
        }
        let dims = parse_ints(hline, &head[..2].join(" "))?;
        if dims[0] < 1 || dims[1] < 1 {
            return parse_err(hline, "dimensions must be positive");
        }
        let (n, m) = (dims[0] as usize, dims[1] as usize);
        let mut jobs = Vec::with_capacity(n);
        for job in 0..n {
            let Some((ln, line)) = lines.next() else {
                return parse_err(hline + job + 1, format!("expected {n} job lines, found {job}"));
            };
            let vals = parse_ints(ln, line)?;
            let mut it = vals.into_iter();
            let mut next = |what: &str| it.next().map_or_else(|| parse_err(ln, format!("missing {what}")), Ok);
            let n_ops = next("operation count")?;
            if n_ops < 1 {
                return parse_err(ln, "job needs at least one operation");
            }
            let mut ops = Vec::with_capacity(n_ops as usize);
            for _ in 0..n_ops {
                let count = next("candidate count")?;
                if count < 1 {
                    return parse_err(ln, "operation needs at least one candidate");
                }
                let mut cands = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    let mac = next("machine")?;
                    let time = next("processing time")?;
                    if mac < 1 || mac as usize > m {
                        return parse_err(ln, format!("machine index {mac} out of range 1..={m}"));
                    }
                    if time < 1 || time > u32::MAX as i64 {
                        return parse_err(ln, format!("processing time {time} out of range"));
                    }
                    if cands.iter().any(|&(c, _)| c == mac as usize - 1) {
                        return parse_err(ln, format!("machine {mac} listed twice"));
                    }
                    cands.push((mac as usize - 1, time as u32));
                }
                ops.push(cands);
            }
            if it.next().is_some() {
                return parse_err(ln, "trailing values on job line");
            }
            jobs.push(ops);
        }
        if let Some((ln, _)) = lines.next() {
            return parse_err(ln, "unexpected trailing data");
        }
        Self::new(m, &jobs)
    }

    pub fn to_fjs(&self) -> String {
        let avg = self.node_count() as f64 / self.op_count() as f64;
        let mut s = format!("{} {} {}\n", self.n_jobs(), self.n_machines, avg);
        for job in 0..self.n_jobs() {
            let mut row = vec![self.job_ops(job).len().to_string()];
            for op in self.job_ops(job) {
                row.push(self.op_node_range(op).len().to_string());
                for id in self.op_node_range(op) {
                    let n = self.nodes[id];
                    row.push((n.machine + 1).to_string());
                    row.push(n.time.to_string());
                }
            }
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Random instance with `max_ops` operations for the longest job: job
    /// lengths are uniform in `[ceil(0.8 * max_ops), max_ops]`, candidate
    /// machines are drawn without replacement, times uniform in `[1, 99]`.
    pub fn generate<R: Rng + ?Sized>(
        n_jobs: usize,
        n_machines: usize,
        max_ops: usize,
        flavor: Flavor,
        rng: &mut R,
    ) -> Result<Self> {
        if n_jobs == 0 || n_machines == 0 || max_ops == 0 {
            return domain("shape must be at least 1x1x1");
        }
        let min_ops = ((max_ops as f64) * 0.8).ceil() as usize;
        let max_cands = match flavor {
            Flavor::EData => 2,
            Flavor::RData => 3,
            Flavor::VData => n_machines,
        }
        .min(n_machines);
        let jobs: Vec<Vec<Vec<(usize, u32)>>> = (0..n_jobs)
            .map(|_| {
                let len = rng.gen_range(min_ops.max(1)..=max_ops);
                (0..len)
                    .map(|_| {
                        let count = rng.gen_range(1..=max_cands);
                        let mut macs = sample(rng, n_machines, count).into_vec();
                        macs.sort_unstable();
                        macs.into_iter().map(|m| (m, rng.gen_range(1..=99u32))).collect()
                    })
                    .collect()
            })
            .collect();
        Self::new(n_machines, &jobs)
    }
}

/// Operation-machine nodes with their three edge sets.
#[derive(Debug, Clone)]
pub struct FjspGraph {
    pub n_nodes: usize,
    /// Directed arcs from every node of an operation to every node of the
    /// job's next operation.
    pub precedence: Vec<(usize, usize)>,
    /// Undirected links between nodes of different operations on one machine.
    pub same_machine: Vec<(usize, usize)>,
    /// Undirected links between the nodes of one operation.
    pub same_op: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FjspState {
    pub step: usize,
    /// Pending operation id of each job; the job's end offset when done.
    pub next_op: Vec<usize>,
    pub machine_ready: Vec<u64>,
    pub job_ready: Vec<u64>,
    pub partial_makespan: u64,
    pub start: Vec<Option<u64>>,
    pub assigned: Vec<Option<usize>>,
    /// Node chosen by the latest action.
    pub last_node: Option<usize>,
}

impl FjspState {
    pub fn pending(&self, inst: &FjspInstance, job: usize) -> Option<usize> {
        (self.next_op[job] < inst.job_start[job + 1]).then_some(self.next_op[job])
    }

    fn denominator(&self) -> f64 {
        if self.partial_makespan == 0 {
            1.0
        } else {
            self.partial_makespan as f64
        }
    }

    /// Five features per job, for every job.
    pub fn job_context(&self) -> Vec<[f64; JOB_CONTEXT_FEATURES]> {
        completion_context(&self.job_ready, self.denominator())
    }

    /// Five features per machine.
    pub fn machine_context(&self) -> Vec<[f64; MACHINE_CONTEXT_FEATURES]> {
        completion_context(&self.machine_ready, self.denominator())
    }
}

fn completion_context(ready: &[u64], cmax: f64) -> Vec<[f64; 5]> {
    let vals: Vec<f64> = ready.iter().map(|&c| c as f64).collect();
    let (avg, q) = (mean(&vals), quartiles(&vals));
    vals.iter()
        .map(|&c| [c / cmax, c - avg, c - q[0], c - q[1], c - q[2]])
        .collect()
}

impl Environment for FjspInstance {
    type State = FjspState;

    fn initial_state(&self) -> FjspState {
        FjspState {
            step: 0,
            next_op: self.job_start[..self.n_jobs()].to_vec(),
            machine_ready: vec![0; self.n_machines],
            job_ready: vec![0; self.n_jobs()],
            partial_makespan: 0,
            start: vec![None; self.op_count()],
            assigned: vec![None; self.op_count()],
            last_node: None,
        }
    }

    fn horizon(&self) -> usize {
        self.op_count()
    }

    fn action_count(&self) -> usize {
        self.node_count()
    }

    fn is_terminal(&self, state: &FjspState) -> bool {
        state.step >= self.op_count()
    }

    fn write_mask(&self, state: &FjspState, mask: &mut [bool]) {
        mask.fill(false);
        for job in 0..self.n_jobs() {
            if let Some(op) = state.pending(self, job) {
                mask[self.op_node_range(op)].fill(true);
            }
        }
    }

    fn apply(&self, state: &mut FjspState, node: usize) -> Result<()> {
        if node >= self.node_count() {
            return domain(format!("node {node} out of range"));
        }
        let Node { op, machine, time } = self.nodes[node];
        let job = self.job_of[op];
        if state.pending(self, job) != Some(op) {
            return domain(format!("operation {op} is not pending"));
        }
        let start = state.machine_ready[machine].max(state.job_ready[job]);
        let end = start + time as u64;
        state.start[op] = Some(start);
        state.assigned[op] = Some(machine);
        state.machine_ready[machine] = end;
        state.job_ready[job] = end;
        state.partial_makespan = state.partial_makespan.max(end);
        state.next_op[job] += 1;
        state.step += 1;
        state.last_node = Some(node);
        Ok(())
    }

    fn objective(&self, state: &FjspState) -> f64 {
        state.partial_makespan as f64
    }
}

pub fn fjsp_makespan(inst: &FjspInstance, actions: &[usize]) -> Result<u64> {
    if actions.len() != inst.op_count() {
        return domain(format!("expected {} actions, got {}", inst.op_count(), actions.len()));
    }
    let mut state = inst.initial_state();
    for &a in actions {
        inst.apply(&mut state, a)?;
    }
    Ok(state.partial_makespan)
}

/// Dispatching-rule schedule: the rule picks the job (using average times),
/// then the operation goes to the candidate machine finishing it earliest.
/// Ties go to the lowest job and machine index.
pub fn fjsp_pdr_schedule(inst: &FjspInstance, rule: DispatchRule) -> Solution {
    let mut state = inst.initial_state();
    let mut remaining: Vec<f64> = (0..inst.n_jobs())
        .map(|j| inst.job_ops(j).map(|op| inst.avg_time[op]).sum())
        .collect();
    let mut actions = Vec::with_capacity(inst.op_count());
    while !inst.is_terminal(&state) {
        let mut best: Option<(usize, f64)> = None;
        for job in 0..inst.n_jobs() {
            let Some(op) = state.pending(inst, job) else { continue };
            let key = match rule {
                DispatchRule::Spt => inst.avg_time[op],
                DispatchRule::Mor => -((inst.job_start[job + 1] - op) as f64),
                DispatchRule::Mwr => -remaining[job],
            };
            if best.map_or(true, |(_, k)| key < k) {
                best = Some((job, key));
            }
        }
        let job = best.expect("non-terminal state has a pending job").0;
        let op = state.pending(inst, job).unwrap();
        let node = inst
            .op_node_range(op)
            .min_by_key(|&id| {
                let n = inst.nodes[id];
                state.machine_ready[n.machine].max(state.job_ready[job]) + n.time as u64
            })
            .expect("operation has a candidate");
        remaining[job] -= inst.avg_time[op];
        inst.apply(&mut state, node).expect("chosen node is feasible");
        actions.push(node);
    }
    Solution::new(actions, state.partial_makespan as f64, Origin::Greedy, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::jsp::makespan;
    use crate::rng::stream;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    /// Event-list simulation: operations are processed in action order, each
    /// placed after its job predecessor and after every earlier operation on
    /// the same machine.
    fn event_list_makespan(inst: &FjspInstance, actions: &[usize]) -> u64 {
        let mut finished: Vec<(usize, usize, u64, u64)> = Vec::new(); // (op, machine, start, end)
        for &a in actions {
            let n = inst.node(a);
            let job = inst.job_of(n.op);
            let pred_end = finished
                .iter()
                .filter(|f| inst.job_of(f.0) == job)
                .map(|f| f.3)
                .max()
                .unwrap_or(0);
            let mac_end = finished.iter().filter(|f| f.1 == n.machine).map(|f| f.3).max().unwrap_or(0);
            let start = pred_end.max(mac_end);
            finished.push((n.op, n.machine, start, start + n.time as u64));
        }
        finished.iter().map(|f| f.3).max().unwrap()
    }

    fn random_actions(inst: &FjspInstance, rng: &mut impl Rng) -> Vec<usize> {
        let mut st = inst.initial_state();
        let mut mask = vec![false; inst.node_count()];
        let mut acts = Vec::new();
        while !inst.is_terminal(&st) {
            inst.write_mask(&st, &mut mask);
            let feas: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let a = feas[rng.gen_range(0..feas.len())];
            inst.apply(&mut st, a).unwrap();
            acts.push(a);
        }
        acts
    }

    fn all_sequences(inst: &FjspInstance, st: &FjspState, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if inst.is_terminal(st) {
            out.push(prefix.clone());
            return;
        }
        let mask = inst.feasible_actions(st).unwrap();
        for a in (0..mask.len()).filter(|&i| mask[i]) {
            let mut next = st.clone();
            inst.apply(&mut next, a).unwrap();
            prefix.push(a);
            all_sequences(inst, &next, prefix, out);
            prefix.pop();
        }
    }

    #[test]
    fn mask_examples() {
        let inst = FjspInstance::new(
            2,
            &[vec![vec![(0, 1), (1, 2)], vec![(0, 3)]], vec![vec![(0, 4), (1, 5)]]],
        )
        .unwrap();
        let mut st = inst.initial_state();
        assert_eq!(inst.feasible_actions(&st).unwrap().iter().filter(|&&b| b).count(), 4);
        let n = inst.node_of(2, 1).unwrap();
        inst.apply(&mut st, n).unwrap();
        let mask = inst.feasible_actions(&st).unwrap();
        for id in inst.op_node_range(2) {
            assert!(!mask[id]);
        }
        assert!(inst.apply(&mut st, inst.node_of(1, 0).unwrap()).is_err());
    }

    #[test]
    fn mask_matches_enumeration() {
        let mut rng = stream(1, &[]);
        for _ in 0..50 {
            let inst = FjspInstance::generate(3, 3, 3, Flavor::RData, &mut rng).unwrap();
            let mut st = inst.initial_state();
            for _ in 0..rng.gen_range(0..inst.horizon()) {
                let m = inst.feasible_actions(&st).unwrap();
                let feas: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
                inst.apply(&mut st, feas[rng.gen_range(0..feas.len())]).unwrap();
            }
            let mask = inst.feasible_actions(&st).unwrap();
            for (id, n) in inst.nodes().iter().enumerate() {
                let job = inst.job_of(n.op);
                let scheduled_before = inst.job_ops(job).filter(|&o| st.start[o].is_some()).count();
                let expected = st.start[n.op].is_none() && n.op == inst.job_ops(job).start + scheduled_before;
                assert_eq!(mask[id], expected);
            }
        }
    }

    #[test]
    fn single_op_choice() {
        let inst = FjspInstance::new(2, &[vec![vec![(0, 3), (1, 9)]]]).unwrap();
        assert_eq!(fjsp_makespan(&inst, &[0]).unwrap(), 3);
        assert_eq!(fjsp_makespan(&inst, &[1]).unwrap(), 9);
        assert!(fjsp_makespan(&inst, &[]).is_err());
    }

    #[test]
    fn singleton_sets_reduce_to_jsp() {
        let mut rng = stream(2, &[]);
        for _ in 0..50 {
            let jsp = JspInstance::generate(3, 4, &mut rng).unwrap();
            let fj = FjspInstance::from_jsp(&jsp);
            let mut st = jsp.initial_state();
            let mut jobs = Vec::new();
            let mut nodes = Vec::new();
            while !jsp.is_terminal(&st) {
                let m = jsp.feasible_actions(&st).unwrap();
                let feas: Vec<usize> = (0..3).filter(|&j| m[j]).collect();
                let j = feas[rng.gen_range(0..feas.len())];
                nodes.push(fj.op_node_range(fj.job_ops(j).start + st.next_op[j]).start);
                jsp.apply(&mut st, j).unwrap();
                jobs.push(j);
            }
            assert_eq!(fjsp_makespan(&fj, &nodes).unwrap(), makespan(&jsp, &jobs).unwrap());
        }
    }

    #[test]
    fn all_sequences_of_small_instances_match_event_list() {
        let mut rng = stream(3, &[]);
        for _ in 0..10 {
            let inst = FjspInstance::generate(2, 2, 2, Flavor::VData, &mut rng).unwrap();
            let mut seqs = Vec::new();
            all_sequences(&inst, &inst.initial_state(), &mut vec![], &mut seqs);
            assert!(!seqs.is_empty());
            for s in seqs {
                assert_eq!(fjsp_makespan(&inst, &s).unwrap(), event_list_makespan(&inst, &s));
            }
        }
    }

    #[test]
    fn graph_edge_sets() {
        let inst = FjspInstance::generate(3, 3, 3, Flavor::VData, &mut stream(4, &[])).unwrap();
        let g = inst.graph();
        for &(a, b) in &g.same_op {
            assert_eq!(inst.node(a).op, inst.node(b).op);
        }
        for &(a, b) in &g.same_machine {
            assert_eq!(inst.node(a).machine, inst.node(b).machine);
            assert_ne!(inst.node(a).op, inst.node(b).op);
        }
        let expected_u: usize = (0..inst.op_count())
            .map(|op| {
                let k = inst.op_node_range(op).len();
                k * (k - 1) / 2
            })
            .sum();
        assert_eq!(g.same_op.len(), expected_u);
        let mut count = vec![0usize; 3];
        for n in inst.nodes() {
            count[n.machine] += 1;
        }
        let pairs_on_machines: usize = count.iter().map(|&c| c * (c.max(1) - 1) / 2).sum();
        assert_eq!(g.same_machine.len(), pairs_on_machines);
        for &(a, b) in &g.precedence {
            assert_eq!(inst.node(a).op + 1, inst.node(b).op);
            assert_eq!(inst.job_of(inst.node(a).op), inst.job_of(inst.node(b).op));
        }
    }

    #[test]
    fn feature_examples() {
        let inst = FjspInstance::new(2, &[vec![vec![(0, 4), (1, 6)]], vec![vec![(0, 2)], vec![(1, 2)]]]).unwrap();
        let f = inst.state_features();
        assert_eq!(f.len(), 4);
        assert_eq!((f[0][1], f[0][2]), (1.0, 0.0));
        assert_eq!(f[0][0], 4.0);
        assert_eq!(f[1][0], 6.0);
        assert_eq!(f[0][3], 5.0);

        let inst = FjspInstance::new(2, &[vec![vec![(0, 3)]], vec![vec![(1, 3)]]]).unwrap();
        let mut st = inst.initial_state();
        inst.apply(&mut st, 0).unwrap();
        inst.apply(&mut st, 1).unwrap();
        for row in st.machine_context() {
            assert_eq!(&row[1..], &[0.0; 4]);
            assert_eq!(row[0], 1.0);
        }
    }

    #[test]
    fn features_match_formula_oracle() {
        let mut rng = stream(5, &[]);
        let inst = FjspInstance::generate(4, 3, 4, Flavor::RData, &mut rng).unwrap();
        let f = inst.state_features();
        for (id, n) in inst.nodes().iter().enumerate() {
            let job = inst.job_of(n.op);
            let avgs: Vec<f64> = inst.job_ops(job).map(|o| inst.avg_time(o)).collect();
            let total: f64 = avgs.iter().sum();
            let upto: f64 = inst.job_ops(job).take_while(|&o| o <= n.op).map(|o| inst.avg_time(o)).sum();
            assert!((f[id][1] - upto / total).abs() < 1e-12);
            assert!((f[id][1] + f[id][2] - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&f[id][1]) && (0.0..=1.0).contains(&f[id][2]));
            let jq = quartiles(&avgs);
            assert_eq!(&f[id][3..6], &jq);
            let mt: Vec<f64> = inst.nodes().iter().filter(|m| m.machine == n.machine).map(|m| m.time as f64).collect();
            assert_eq!(&f[id][6..9], &quartiles(&mt));
            assert!((f[id][9] - (inst.avg_time(n.op) - jq[0])).abs() < 1e-12);
        }
        let mut st = inst.initial_state();
        let acts = random_actions(&inst, &mut rng);
        for &a in &acts[..acts.len() / 2] {
            inst.apply(&mut st, a).unwrap();
        }
        let jc = st.job_context();
        let cmax = st.partial_makespan as f64;
        let jr: Vec<f64> = st.job_ready.iter().map(|&c| c as f64).collect();
        for (j, row) in jc.iter().enumerate() {
            assert_eq!(row[0], jr[j] / cmax);
            assert!((row[1] - (jr[j] - jr.iter().sum::<f64>() / jr.len() as f64)).abs() < 1e-12);
        }
        assert_eq!(st.machine_context().len(), 3);
    }

    #[test]
    fn pdr_is_feasible_and_deterministic() {
        let mut rng = stream(6, &[]);
        for _ in 0..20 {
            let inst = FjspInstance::generate(5, 4, 4, Flavor::VData, &mut rng).unwrap();
            for rule in [DispatchRule::Spt, DispatchRule::Mor, DispatchRule::Mwr] {
                let s = fjsp_pdr_schedule(&inst, rule);
                assert_eq!(s.objective as u64, event_list_makespan(&inst, &s.actions));
                assert_eq!(fjsp_pdr_schedule(&inst, rule), s);
            }
        }
    }

    #[test]
    fn fjs_examples_and_errors() {
        let inst = FjspInstance::parse_fjs("1 1\n1 1 1 5\n").unwrap();
        assert_eq!((inst.n_jobs(), inst.op_count(), inst.node(0).time), (1, 1, 5));
        assert!(matches!(FjspInstance::parse_fjs("1 1 1\n1 1 2 5\n"), Err(crate::Error::Parse { line: 2, .. })));
        assert!(matches!(FjspInstance::parse_fjs("1 2\n1 1 0 5\n"), Err(crate::Error::Parse { line: 2, .. })));
        assert!(matches!(FjspInstance::parse_fjs("2 2\n1 1 1 5\n"), Err(crate::Error::Parse { .. })));
    }

    #[test]
    fn flavor_ranges() {
        let mut rng = stream(7, &[]);
        for (flavor, hi) in [(Flavor::EData, 2), (Flavor::RData, 3), (Flavor::VData, 5)] {
            let inst = FjspInstance::generate(10, 5, 5, flavor, &mut rng).unwrap();
            for op in 0..inst.op_count() {
                let k = inst.op_node_range(op).len();
                assert!((1..=hi).contains(&k));
            }
            for j in 0..10 {
                assert!((4..=5).contains(&inst.job_ops(j).len()));
            }
        }
        let a = FjspInstance::generate(3, 3, 3, Flavor::RData, &mut stream(8, &[])).unwrap();
        let b = FjspInstance::generate(3, 3, 3, Flavor::RData, &mut stream(8, &[])).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn fjs_round_trip(seed in 0u64..1000, n in 1usize..5, m in 1usize..5, k in 1usize..5) {
            let inst = FjspInstance::generate(n, m, k, Flavor::VData, &mut stream(seed, &[])).unwrap();
            prop_assert_eq!(FjspInstance::parse_fjs(&inst.to_fjs()).unwrap(), inst);
        }

        #[test]
        fn random_schedules_are_feasible(seed in 0u64..300) {
            let mut rng = stream(seed, &[2]);
            let inst = FjspInstance::generate(4, 3, 4, Flavor::RData, &mut rng).unwrap();
            let acts = random_actions(&inst, &mut rng);
            prop_assert_eq!(acts.len(), inst.op_count());
            let mut st = inst.initial_state();
            for &a in &acts { inst.apply(&mut st, a).unwrap(); }
            for j in 0..4 {
                let ops: Vec<usize> = inst.job_ops(j).collect();
                for w in ops.windows(2) {
                    let prev_end = st.start[w[0]].unwrap() + inst.node(inst.node_of(w[0], st.assigned[w[0]].unwrap()).unwrap()).time as u64;
                    prop_assert!(st.start[w[1]].unwrap() >= prev_end);
                }
            }
            let iv: Vec<(usize, u64, u64)> = (0..inst.op_count()).map(|op| {
                let mac = st.assigned[op].unwrap();
                let t = inst.node(inst.node_of(op, mac).unwrap()).time as u64;
                (mac, st.start[op].unwrap(), st.start[op].unwrap() + t)
            }).collect();
            for a in 0..iv.len() {
                for b in a + 1..iv.len() {
                    if iv[a].0 == iv[b].0 {
                        prop_assert!(iv[a].2 <= iv[b].1 || iv[b].2 <= iv[a].1);
                    }
                }
            }
            prop_assert_eq!(st.partial_makespan, event_list_makespan(&inst, &acts));
        }
    }
}
