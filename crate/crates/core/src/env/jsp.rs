//! Job-shop scheduling.
//!
//! Operations are numbered job-major: operation `k` of job `i` has id
//! `i * n_machines + k`. An action is a job index; applying it schedules the
//! job's pending operation at the end of its machine's queue, starting at the
//! later of the machine's and the job's ready times.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{mean, quartiles, Environment};
use crate::cop::{Origin, Solution};
use crate::error::{domain, parse_err, Result};

pub const STATE_FEATURES: usize = 15;
pub const CONTEXT_FEATURES: usize = 11;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JspInstance {
    n_jobs: usize,
    n_machines: usize,
    times: Vec<u32>,
    machines: Vec<usize>,
}

impl JspInstance {
    /// `times` and `machines` are job-major with `n_machines` entries per job.
    pub fn new(n_jobs: usize, n_machines: usize, times: Vec<u32>, machines: Vec<usize>) -> Result<Self> {
        if n_jobs == 0 || n_machines == 0 {
            return domain("instance needs at least one job and one machine");
        }
        let ops = n_jobs * n_machines;
        if times.len() != ops || machines.len() != ops {
            return domain(format!("expected {ops} operations"));
        }
        if let Some(t) = times.iter().find(|&&t| t == 0) {
            return domain(format!("processing time {t} must be at least 1"));
        }
        for job in 0..n_jobs {
            let mut seen = vec![false; n_machines];
            for &m in &machines[job * n_machines..(job + 1) * n_machines] {
                if m >= n_machines || seen[m] {
                    return domain(format!("job {job} does not visit every machine exactly once"));
                }
                seen[m] = true;
            }
        }
        Ok(Self {
            n_jobs,
            n_machines,
            times,
            machines,
        })
    }

    pub fn n_jobs(&self) -> usize {
        self.n_jobs
    }

    pub fn n_machines(&self) -> usize {
        self.n_machines
    }

    pub fn op_count(&self) -> usize {
        self.times.len()
    }

    pub fn op(&self, job: usize, k: usize) -> usize {
        job * self.n_machines + k
    }

    pub fn job_of(&self, op: usize) -> usize {
        op / self.n_machines
    }

    pub fn time(&self, op: usize) -> u32 {
        self.times[op]
    }

    pub fn machine(&self, op: usize) -> usize {
        self.machines[op]
    }

    pub fn max_time(&self) -> u32 {
        self.times.iter().copied().max().unwrap_or(1)
    }

    /// Sum of processing times of each job's operations.
    pub fn job_totals(&self) -> Vec<u64> {
        self.times
            .chunks(self.n_machines)
            .map(|c| c.iter().map(|&t| t as u64).sum())
            .collect()
    }

    pub fn machine_loads(&self) -> Vec<u64> {
        let mut load = vec![0u64; self.n_machines];
        for (op, &t) in self.times.iter().enumerate() {
            load[self.machines[op]] += t as u64;
        }
        load
    }

    /// max(longest job, busiest machine); no schedule can be shorter.
    pub fn lower_bound(&self) -> u64 {
        let j = self.job_totals().into_iter().max().unwrap_or(0);
        let m = self.machine_loads().into_iter().max().unwrap_or(0);
        j.max(m)
    }

    pub fn graph(&self) -> DisjunctiveGraph {
        let m = self.n_machines;
        let mut conjunctive = Vec::with_capacity(self.n_jobs * (m - 1));
        for job in 0..self.n_jobs {
            for k in 0..m - 1 {
                conjunctive.push((self.op(job, k), self.op(job, k + 1)));
            }
        }
        let mut by_machine = vec![Vec::new(); m];
        for op in 0..self.op_count() {
            by_machine[self.machines[op]].push(op);
        }
        let mut disjunctive = Vec::new();
        for ops in &by_machine {
            for (i, &a) in ops.iter().enumerate() {
                for &b in &ops[i + 1..] {
                    disjunctive.push((a, b));
                }
            }
        }
        DisjunctiveGraph {
            n_nodes: self.op_count(),
            conjunctive,
            disjunctive,
        }
    }

    /// Static per-operation features, 15 per operation.
    pub fn state_features(&self) -> Vec<[f64; STATE_FEATURES]> {
        let m = self.n_machines;
        let mut per_machine: Vec<Vec<f64>> = vec![Vec::new(); m];
        for op in 0..self.op_count() {
            per_machine[self.machines[op]].push(self.times[op] as f64);
        }
        let machine_q: Vec<[f64; 3]> = per_machine.iter().map(|v| quartiles(v)).collect();

        let mut out = Vec::with_capacity(self.op_count());
        for job in 0..self.n_jobs {
            let jt: Vec<f64> = (0..m).map(|k| self.times[self.op(job, k)] as f64).collect();
            let total: f64 = jt.iter().sum();
            let job_q = quartiles(&jt);
            let mut done = 0.0;
            for k in 0..m {
                let t = jt[k];
                done += t;
                let mq = machine_q[self.machines[self.op(job, k)]];
                out.push([
                    t,
                    done / total,
                    (total - done) / total,
                    job_q[0],
                    job_q[1],
                    job_q[2],
                    mq[0],
                    mq[1],
                    mq[2],
                    t - job_q[0],
                    t - job_q[1],
                    t - job_q[2],
                    t - mq[0],
                    t - mq[1],
                    t - mq[2],
                ]);
            }
        }
        out
    }

    pub fn parse_taillard(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = match lines.next() {
            Some(h) => h,
            None => return parse_err(1, "missing header"),
        };
        let dims = parse_ints(hline, header)?;
        if dims.len() != 2 {
            return parse_err(hline, "header must be \"n m\"");
        }
        let (n, m) = (dims[0] as usize, dims[1] as usize);
        if n == 0 || m == 0 {
            return parse_err(hline, "dimensions must be positive");
        }
        let mut times = Vec::with_capacity(n * m);
        let mut machines = Vec::with_capacity(n * m);
        for job in 0..n {
            let (ln, line) = match lines.next() {
                Some(l) => l,
                None => return parse_err(hline + job + 1, format!("expected {n} job lines, found {job}")),
            };
            let vals = parse_ints(ln, line)?;
            if vals.len() != 2 * m {
                return parse_err(ln, format!("expected {} integers, found {}", 2 * m, vals.len()));
            }
            let mut seen = vec![false; m];
            for pair in vals.chunks(2) {
                let (mac, t) = (pair[0], pair[1]);
                if mac < 0 || mac as usize >= m {
                    return parse_err(ln, format!("machine index {mac} out of range 0..{m}"));
                }
                if seen[mac as usize] {
                    return parse_err(ln, format!("machine {mac} visited twice"));
                }
                seen[mac as usize] = true;
                if t < 1 || t > u32::MAX as i64 {
                    return parse_err(ln, format!("processing time {t} out of range"));
                }
                machines.push(mac as usize);
                times.push(t as u32);
            }
        }
        if let Some((ln, _)) = lines.next() {
            return parse_err(ln, "unexpected trailing data");
        }
        Self::new(n, m, times, machines)
    }

    pub fn to_taillard(&self) -> String {
        let mut s = format!("{} {}\n", self.n_jobs, self.n_machines);
        for job in 0..self.n_jobs {
            let row: Vec<String> = (0..self.n_machines)
                .map(|k| {
                    let op = self.op(job, k);
                    format!("{} {}", self.machines[op], self.times[op])
                })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Uniform random machine order per job, times uniform in `[1, 99]`.
    pub fn generate<R: Rng + ?Sized>(n_jobs: usize, n_machines: usize, rng: &mut R) -> Result<Self> {
        if n_jobs == 0 || n_machines == 0 {
            return domain("shape must be at least 1x1");
        }
        let mut times = Vec::with_capacity(n_jobs * n_machines);
        let mut machines = Vec::with_capacity(n_jobs * n_machines);
        for _ in 0..n_jobs {
            let mut order: Vec<usize> = (0..n_machines).collect();
            order.shuffle(rng);
            machines.extend(order);
            times.extend((0..n_machines).map(|_| rng.gen_range(1..=99u32)));
        }
        Self::new(n_jobs, n_machines, times, machines)
    }
}

pub(crate) fn parse_ints(line_no: usize, line: &str) -> Result<Vec<i64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<i64>()
                .or_else(|_| parse_err(line_no, format!("not an integer: {tok:?}")))
        })
        .collect()
}

/// Operations as nodes, job-precedence arcs and same-machine links.
#[derive(Debug, Clone)]
pub struct DisjunctiveGraph {
    pub n_nodes: usize,
    /// Directed `pred -> succ` arcs.
    pub conjunctive: Vec<(usize, usize)>,
    /// Undirected links, each stored once with `a < b`.
    pub disjunctive: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleState {
    pub step: usize,
    /// Position of the pending operation within each job; `n_machines` when done.
    pub next_op: Vec<usize>,
    pub machine_ready: Vec<u64>,
    pub job_ready: Vec<u64>,
    pub partial_makespan: u64,
    /// Start time per operation once scheduled.
    pub start: Vec<Option<u64>>,
    /// Operation scheduled by the latest action.
    pub last_op: Option<usize>,
}

impl ScheduleState {
    pub fn new(inst: &JspInstance) -> Self {
        Self {
            step: 0,
            next_op: vec![0; inst.n_jobs],
            machine_ready: vec![0; inst.n_machines],
            job_ready: vec![0; inst.n_jobs],
            partial_makespan: 0,
            start: vec![None; inst.op_count()],
            last_op: None,
        }
    }

    /// Pending operation of `job`, if any.
    pub fn pending(&self, inst: &JspInstance, job: usize) -> Option<usize> {
        (self.next_op[job] < inst.n_machines).then(|| inst.op(job, self.next_op[job]))
    }

    /// Context features of every job; rows of finished jobs are zero.
    pub fn context_features(&self, inst: &JspInstance) -> Vec<[f64; CONTEXT_FEATURES]> {
        let jobs: Vec<f64> = self.job_ready.iter().map(|&c| c as f64).collect();
        let macs: Vec<f64> = self.machine_ready.iter().map(|&c| c as f64).collect();
        let cmax = if self.partial_makespan == 0 {
            1.0
        } else {
            self.partial_makespan as f64
        };
        let (jmean, jq) = (mean(&jobs), quartiles(&jobs));
        let (mmean, mq) = (mean(&macs), quartiles(&macs));
        (0..inst.n_jobs)
            .map(|job| match self.pending(inst, job) {
                None => [0.0; CONTEXT_FEATURES],
                Some(op) => {
                    let cj = jobs[job];
                    let cm = macs[inst.machine(op)];
                    [
                        cj - cm,
                        cj / cmax,
                        cj - jmean,
                        cj - jq[0],
                        cj - jq[1],
                        cj - jq[2],
                        cm / cmax,
                        cm - mmean,
                        cm - mq[0],
                        cm - mq[1],
                        cm - mq[2],
                    ]
                }
            })
            .collect()
    }
}

impl Environment for JspInstance {
    type State = ScheduleState;

    fn initial_state(&self) -> ScheduleState {
        ScheduleState::new(self)
    }

    fn horizon(&self) -> usize {
        self.op_count()
    }

    fn action_count(&self) -> usize {
        self.n_jobs
    }

    fn is_terminal(&self, state: &ScheduleState) -> bool {
        state.step >= self.op_count()
    }

    fn write_mask(&self, state: &ScheduleState, mask: &mut [bool]) {
        for (job, m) in mask.iter_mut().enumerate() {
            *m = state.next_op[job] < self.n_machines;
        }
    }

    fn apply(&self, state: &mut ScheduleState, job: usize) -> Result<()> {
        if job >= self.n_jobs {
            return domain(format!("job {job} out of range"));
        }
        let op = match state.pending(self, job) {
            Some(op) => op,
            None => return domain(format!("job {job} has no pending operation")),
        };
        let mac = self.machines[op];
        let start = state.machine_ready[mac].max(state.job_ready[job]);
        let end = start + self.times[op] as u64;
        state.start[op] = Some(start);
        state.machine_ready[mac] = end;
        state.job_ready[job] = end;
        state.partial_makespan = state.partial_makespan.max(end);
        state.next_op[job] += 1;
        state.step += 1;
        state.last_op = Some(op);
        Ok(())
    }

    fn objective(&self, state: &ScheduleState) -> f64 {
        state.partial_makespan as f64
    }
}

/// Makespan of a complete job sequence.
pub fn makespan(inst: &JspInstance, actions: &[usize]) -> Result<u64> {
    let mut count = vec![0usize; inst.n_jobs];
    for &a in actions {
        if a >= inst.n_jobs {
            return domain(format!("job {a} out of range"));
        }
        count[a] += 1;
    }
    if count.iter().any(|&c| c != inst.n_machines) {
        return domain("every job must appear exactly n_machines times");
    }
    let mut state = inst.initial_state();
    for &a in actions {
        inst.apply(&mut state, a)?;
    }
    Ok(state.partial_makespan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DispatchRule {
    /// Shortest processing time of the pending operation.
    Spt,
    /// Most operations remaining.
    Mor,
    /// Most work remaining.
    Mwr,
}

impl std::str::FromStr for DispatchRule {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spt" => Ok(Self::Spt),
            "mor" => Ok(Self::Mor),
            "mwr" => Ok(Self::Mwr),
            other => domain(format!("unknown dispatching rule {other:?}")),
        }
    }
}

impl std::fmt::Display for DispatchRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Spt => "spt",
            Self::Mor => "mor",
            Self::Mwr => "mwr",
        })
    }
}

/// Schedules by a priority dispatching rule; ties go to the lowest job index.
pub fn pdr_schedule(inst: &JspInstance, rule: DispatchRule) -> Solution {
    let m = inst.n_machines;
    let mut state = inst.initial_state();
    let mut remaining_work: Vec<i64> = inst.job_totals().iter().map(|&w| w as i64).collect();
    let mut actions = Vec::with_capacity(inst.op_count());
    while !inst.is_terminal(&state) {
        let mut best: Option<(usize, i64)> = None;
        for job in 0..inst.n_jobs {
            let Some(op) = state.pending(inst, job) else { continue };
            // Lower key wins.
            let key = match rule {
                DispatchRule::Spt => inst.times[op] as i64,
                DispatchRule::Mor => -((m - state.next_op[job]) as i64),
                DispatchRule::Mwr => -remaining_work[job],
            };
            if best.map_or(true, |(_, k)| key < k) {
                best = Some((job, key));
            }
        }
        let job = best.expect("non-terminal state has a pending job").0;
        remaining_work[job] -= inst.times[state.pending(inst, job).unwrap()] as i64;
        inst.apply(&mut state, job).expect("chosen job is feasible");
        actions.push(job);
    }
    Solution::new(actions, state.partial_makespan as f64, Origin::Greedy, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    /// Longest-path evaluation of the disjunctive graph oriented by the
    /// machine orders that `actions` induce.
    fn longest_path_makespan(inst: &JspInstance, actions: &[usize]) -> u64 {
        let n_ops = inst.op_count();
        let mut seen = vec![0usize; inst.n_jobs()];
        let mut machine_seq: Vec<Vec<usize>> = vec![Vec::new(); inst.n_machines()];
        for &j in actions {
            let op = inst.op(j, seen[j]);
            seen[j] += 1;
            machine_seq[inst.machine(op)].push(op);
        }
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n_ops];
        for (a, b) in inst.graph().conjunctive {
            preds[b].push(a);
        }
        for seq in &machine_seq {
            for w in seq.windows(2) {
                preds[w[1]].push(w[0]);
            }
        }
        let mut finish: Vec<Option<u64>> = vec![None; n_ops];
        fn eval(op: usize, inst: &JspInstance, preds: &[Vec<usize>], finish: &mut [Option<u64>]) -> u64 {
            if let Some(f) = finish[op] {
                return f;
            }
            let start = preds[op].iter().map(|&p| eval(p, inst, preds, finish)).max().unwrap_or(0);
            let f = start + inst.time(op) as u64;
            finish[op] = Some(f);
            f
        }
        (0..n_ops).map(|op| eval(op, inst, &preds, &mut finish)).max().unwrap()
    }

    fn all_sequences(counts: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if counts.iter().all(|&c| c == 0) {
            out.push(prefix.clone());
            return;
        }
        for j in 0..counts.len() {
            if counts[j] > 0 {
                counts[j] -= 1;
                prefix.push(j);
                all_sequences(counts, prefix, out);
                prefix.pop();
                counts[j] += 1;
            }
        }
    }

    fn random_actions(inst: &JspInstance, rng: &mut impl Rng) -> Vec<usize> {
        let mut state = inst.initial_state();
        let mut acts = Vec::new();
        while !inst.is_terminal(&state) {
            let mask = inst.feasible_actions(&state).unwrap();
            let feas: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let a = feas[rng.gen_range(0..feas.len())];
            inst.apply(&mut state, a).unwrap();
            acts.push(a);
        }
        acts
    }

    #[test]
    fn fresh_mask_is_all_true_and_exhausted_jobs_are_masked() {
        let inst = JspInstance::new(3, 2, vec![1, 2, 3, 4, 5, 6], vec![0, 1, 1, 0, 0, 1]).unwrap();
        let mut st = inst.initial_state();
        assert_eq!(inst.feasible_actions(&st).unwrap(), vec![true; 3]);
        inst.apply(&mut st, 0).unwrap();
        inst.apply(&mut st, 0).unwrap();
        assert_eq!(inst.feasible_actions(&st).unwrap(), vec![false, true, true]);
        assert!(inst.apply(&mut st, 0).is_err());
        assert!(inst.apply(&mut st, 7).is_err());
    }

    #[test]
    fn mask_matches_enumeration_on_random_states() {
        let mut rng = stream(3, &[]);
        for _ in 0..50 {
            let inst = JspInstance::generate(4, 3, &mut rng).unwrap();
            let mut st = inst.initial_state();
            let steps = rng.gen_range(0..inst.horizon());
            for _ in 0..steps {
                let mask = inst.feasible_actions(&st).unwrap();
                let feas: Vec<usize> = (0..4).filter(|&j| mask[j]).collect();
                inst.apply(&mut st, feas[rng.gen_range(0..feas.len())]).unwrap();
            }
            let mask = inst.feasible_actions(&st).unwrap();
            for j in 0..4 {
                assert_eq!(mask[j], st.next_op[j] < 3);
            }
            assert!(mask.iter().any(|&b| b));
        }
    }

    #[test]
    fn terminal_state_has_no_actions() {
        let inst = JspInstance::new(1, 1, vec![5], vec![0]).unwrap();
        let mut st = inst.initial_state();
        inst.apply(&mut st, 0).unwrap();
        assert!(inst.feasible_actions(&st).is_err());
        assert_eq!(makespan(&inst, &[0]).unwrap(), 5);
    }

    #[test]
    fn chain_and_single_machine_examples() {
        let inst = JspInstance::new(1, 2, vec![3, 4], vec![0, 1]).unwrap();
        let mut st = inst.initial_state();
        inst.apply(&mut st, 0).unwrap();
        assert_eq!(st.job_ready[0], 3);
        inst.apply(&mut st, 0).unwrap();
        assert_eq!(st.job_ready[0], 7);
        assert_eq!(st.partial_makespan, 7);

        let inst = JspInstance::new(2, 1, vec![3, 4], vec![0, 0]).unwrap();
        assert_eq!(makespan(&inst, &[0, 1]).unwrap(), 7);
        assert_eq!(makespan(&inst, &[1, 0]).unwrap(), 7);
        assert!(makespan(&inst, &[0, 0]).is_err());
        assert!(makespan(&inst, &[0]).is_err());
    }

    #[test]
    fn single_machine_makespan_is_total_time() {
        let mut rng = stream(5, &[]);
        let inst = JspInstance::generate(5, 1, &mut rng).unwrap();
        let total: u64 = inst.job_totals().iter().sum();
        for _ in 0..10 {
            let acts = random_actions(&inst, &mut rng);
            assert_eq!(makespan(&inst, &acts).unwrap(), total);
        }
    }

    #[test]
    fn every_sequence_of_2x2_matches_longest_path() {
        let mut rng = stream(9, &[]);
        for _ in 0..20 {
            let inst = JspInstance::generate(2, 2, &mut rng).unwrap();
            let mut seqs = Vec::new();
            all_sequences(&mut vec![2, 2], &mut vec![], &mut seqs);
            assert_eq!(seqs.len(), 6);
            for s in seqs {
                assert_eq!(makespan(&inst, &s).unwrap(), longest_path_makespan(&inst, &s));
            }
        }
    }

    #[test]
    fn random_3x3_match_longest_path() {
        let mut rng = stream(10, &[]);
        for _ in 0..200 {
            let inst = JspInstance::generate(3, 3, &mut rng).unwrap();
            let acts = random_actions(&inst, &mut rng);
            let ms = makespan(&inst, &acts).unwrap();
            assert_eq!(ms, longest_path_makespan(&inst, &acts));
            assert!(ms >= inst.lower_bound());
        }
    }

    #[test]
    fn graph_structure() {
        let mut rng = stream(12, &[]);
        let inst = JspInstance::generate(4, 3, &mut rng).unwrap();
        let g = inst.graph();
        assert_eq!(g.conjunctive.len(), 4 * 2);
        // each machine carries 4 operations: C(4,2) links per machine
        assert_eq!(g.disjunctive.len(), 3 * 6);
        for &(a, b) in &g.disjunctive {
            assert_eq!(inst.machine(a), inst.machine(b));
            assert!(a < b);
        }
        for &(a, b) in &g.conjunctive {
            assert_eq!(inst.job_of(a), inst.job_of(b));
            assert_eq!(b, a + 1);
        }
    }

    #[test]
    fn state_feature_examples() {
        let inst = JspInstance::new(2, 1, vec![7, 7], vec![0, 0]).unwrap();
        let f = inst.state_features();
        assert_eq!(f[0][1], 1.0);
        assert_eq!(f[0][2], 0.0);
        // both operations on machine 0 take 7: machine quartiles are 7, diffs 0
        assert_eq!(&f[1][6..9], &[7.0, 7.0, 7.0]);
        assert_eq!(&f[1][12..15], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn state_features_match_direct_recomputation() {
        let mut rng = stream(13, &[]);
        let inst = JspInstance::generate(5, 4, &mut rng).unwrap();
        let f = inst.state_features();
        // reference percentile: numpy "linear" rule via explicit sorting
        let pct = |mut v: Vec<f64>, p: f64| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let h = (v.len() - 1) as f64 * p;
            let i = h as usize;
            if i + 1 < v.len() { v[i] + (h - i as f64) * (v[i + 1] - v[i]) } else { v[i] }
        };
        for op in 0..inst.op_count() {
            let job = inst.job_of(op);
            let jt: Vec<f64> = (0..4).map(|k| inst.time(inst.op(job, k)) as f64).collect();
            let mt: Vec<f64> = (0..inst.op_count())
                .filter(|&o| inst.machine(o) == inst.machine(op))
                .map(|o| inst.time(o) as f64)
                .collect();
            let t = inst.time(op) as f64;
            for (qi, p) in [0.25, 0.5, 0.75].into_iter().enumerate() {
                assert!((f[op][3 + qi] - pct(jt.clone(), p)).abs() < 1e-12);
                assert!((f[op][6 + qi] - pct(mt.clone(), p)).abs() < 1e-12);
                assert!((f[op][9 + qi] - (t - pct(jt.clone(), p))).abs() < 1e-12);
                assert!((f[op][12 + qi] - (t - pct(mt.clone(), p))).abs() < 1e-12);
            }
            assert!((0.0..=1.0).contains(&f[op][1]) && (0.0..=1.0).contains(&f[op][2]));
            assert!((f[op][1] + f[op][2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn context_feature_examples() {
        let inst = JspInstance::new(2, 2, vec![5, 3, 2, 4], vec![0, 1, 1, 0]).unwrap();
        let mut st = inst.initial_state();
        // step 0: guarded denominator, everything zero
        assert!(st.context_features(&inst).iter().all(|r| r.iter().all(|&x| x == 0.0)));
        inst.apply(&mut st, 0).unwrap(); // job0 op0 on m0: [0,5]
        let c = st.context_features(&inst);
        assert_eq!(c[0][1], 1.0);
        assert_eq!(c[1][1], 0.0);
        // job0 pending op is on m1 (ready 0): C(J0) - 0 = 5
        assert_eq!(c[0][0], 5.0);
        // job1 pending op on m1: C(J1)=0, machine ready 0
        assert_eq!(c[1][0], 0.0);
        assert_eq!(c[0][2], 2.5);
        assert_eq!(c[1][6], 0.0);
    }

    #[test]
    fn context_features_zero_when_completions_identical() {
        let inst = JspInstance::new(2, 2, vec![4, 4, 4, 4], vec![0, 1, 1, 0]).unwrap();
        let mut st = inst.initial_state();
        inst.apply(&mut st, 0).unwrap();
        inst.apply(&mut st, 1).unwrap();
        let c = st.context_features(&inst);
        for row in &c {
            for idx in [2, 3, 4, 5, 7, 8, 9, 10] {
                assert_eq!(row[idx], 0.0);
            }
        }
    }

    #[test]
    fn context_features_match_formula_oracle() {
        let mut rng = stream(14, &[]);
        let inst = JspInstance::generate(4, 4, &mut rng).unwrap();
        let mut st = inst.initial_state();
        for _ in 0..7 {
            let mask = inst.feasible_actions(&st).unwrap();
            let feas: Vec<usize> = (0..4).filter(|&j| mask[j]).collect();
            inst.apply(&mut st, feas[rng.gen_range(0..feas.len())]).unwrap();
        }
        let c = st.context_features(&inst);
        let cmax = st.partial_makespan as f64;
        let jobs: Vec<f64> = st.job_ready.iter().map(|&x| x as f64).collect();
        let macs: Vec<f64> = st.machine_ready.iter().map(|&x| x as f64).collect();
        for job in 0..4 {
            let Some(op) = st.pending(&inst, job) else { continue };
            let cj = jobs[job];
            let cm = macs[inst.machine(op)];
            assert_eq!(c[job][0], cj - cm);
            assert!((c[job][1] - cj / cmax).abs() < 1e-15);
            assert!((c[job][2] - (cj - jobs.iter().sum::<f64>() / 4.0)).abs() < 1e-12);
            assert!((c[job][6] - cm / cmax).abs() < 1e-15);
            assert!((c[job][7] - (cm - macs.iter().sum::<f64>() / 4.0)).abs() < 1e-12);
            assert!(c[job][1] <= 1.0);
        }
        let top = (0..4).max_by_key(|&j| st.job_ready[j]).unwrap();
        if st.pending(&inst, top).is_some() {
            assert_eq!(c[top][1], 1.0);
        }
    }

    #[test]
    fn pdr_examples() {
        let inst = JspInstance::new(1, 3, vec![4, 2, 9], vec![2, 0, 1]).unwrap();
        for rule in [DispatchRule::Spt, DispatchRule::Mor, DispatchRule::Mwr] {
            assert_eq!(pdr_schedule(&inst, rule).actions, vec![0, 0, 0]);
        }
        let inst = JspInstance::new(2, 1, vec![4, 3], vec![0, 0]).unwrap();
        assert_eq!(pdr_schedule(&inst, DispatchRule::Spt).actions, vec![1, 0]);
        assert_eq!(pdr_schedule(&inst, DispatchRule::Mwr).actions, vec![0, 1]);
        // MOR tie: lowest index first
        assert_eq!(pdr_schedule(&inst, DispatchRule::Mor).actions, vec![0, 1]);
    }

    #[test]
    fn pdr_objective_matches_longest_path_replay() {
        let mut rng = stream(15, &[]);
        for _ in 0..30 {
            let inst = JspInstance::generate(5, 5, &mut rng).unwrap();
            for rule in [DispatchRule::Spt, DispatchRule::Mor, DispatchRule::Mwr] {
                let s = pdr_schedule(&inst, rule);
                assert_eq!(s.objective as u64, longest_path_makespan(&inst, &s.actions));
                assert_eq!(pdr_schedule(&inst, rule), s);
            }
        }
    }

    #[test]
    fn taillard_examples_and_errors() {
        let inst = JspInstance::parse_taillard("1 1\n0 5\n").unwrap();
        assert_eq!((inst.n_jobs(), inst.n_machines(), inst.time(0), inst.machine(0)), (1, 1, 5, 0));
        assert_eq!(inst.to_taillard(), "1 1\n0 5\n");

        let bad = [
            ("2 2\n0 1 1 1\n", 3),       // missing job line
            ("1 2\n0 1 1\n", 2),          // odd token count
            ("1 1\n0 x\n", 2),            // non-integer
            ("1 2\n0 1 2 1\n", 2),        // machine out of range
            ("1 2\n0 1 0 1\n", 2),        // repeated machine
        ];
        for (text, line) in bad {
            match JspInstance::parse_taillard(text) {
                Err(crate::Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn generator_is_deterministic_and_in_range() {
        let a = JspInstance::generate(3, 4, &mut stream(1, &[])).unwrap();
        let b = JspInstance::generate(3, 4, &mut stream(1, &[])).unwrap();
        assert_eq!(a, b);
        let one = JspInstance::generate(1, 1, &mut stream(2, &[])).unwrap();
        assert!((1..=99).contains(&one.time(0)));
    }

    #[test]
    fn generator_mean_time_is_fifty() {
        let mut rng = stream(16, &[]);
        let mut sum = 0.0;
        let mut n = 0.0f64;
        while n < 10_000.0 {
            let inst = JspInstance::generate(10, 10, &mut rng).unwrap();
            for op in 0..inst.op_count() {
                sum += inst.time(op) as f64;
                n += 1.0;
            }
        }
        // uniform{1..99}: sd = sqrt((99^2 - 1) / 12)
        let sd = ((99.0f64 * 99.0 - 1.0) / 12.0).sqrt() / n.sqrt();
        assert!((sum / n - 50.0).abs() < 3.0 * sd);
    }

    proptest! {
        #[test]
        fn taillard_round_trip(n in 1usize..6, m in 1usize..6, seed in 0u64..1000) {
            let inst = JspInstance::generate(n, m, &mut stream(seed, &[])).unwrap();
            prop_assert_eq!(JspInstance::parse_taillard(&inst.to_taillard()).unwrap(), inst);
        }

        #[test]
        fn random_schedules_are_feasible(seed in 0u64..500) {
            let mut rng = stream(seed, &[1]);
            let inst = JspInstance::generate(4, 4, &mut rng).unwrap();
            let acts = random_actions(&inst, &mut rng);
            let mut st = inst.initial_state();
            for &a in &acts { inst.apply(&mut st, a).unwrap(); }
            for job in 0..4 {
                for k in 1..4 {
                    let prev = inst.op(job, k - 1);
                    let cur = inst.op(job, k);
                    prop_assert!(st.start[cur].unwrap() >= st.start[prev].unwrap() + inst.time(prev) as u64);
                }
            }
            for a in 0..16 {
                for b in a + 1..16 {
                    if inst.machine(a) == inst.machine(b) {
                        let (sa, sb) = (st.start[a].unwrap(), st.start[b].unwrap());
                        prop_assert!(sa + inst.time(a) as u64 <= sb || sb + inst.time(b) as u64 <= sa);
                    }
                }
            }
            prop_assert!(st.partial_makespan >= inst.lower_bound());
            prop_assert_eq!(inst.evaluate(&acts).unwrap(), st.partial_makespan as f64);
        }
    }
}
