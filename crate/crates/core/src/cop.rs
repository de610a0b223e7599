//! Problem-agnostic pieces: solutions, their ordering, preference pairs and
//! the optimality-gap metric.

use crate::error::{domain, Result};

/// How a solution was produced during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Greedy,
    Sampled,
}

/// A complete constructed solution.
///
/// `objective` is the minimisation objective (makespan or tour length) and
/// `sample` is the index of the rollout row that produced it, used as the
/// tie-breaking key when sorting.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub actions: Vec<usize>,
    pub objective: f64,
    pub origin: Origin,
    pub sample: usize,
}

impl Solution {
    pub fn new(actions: Vec<usize>, objective: f64, origin: Origin, sample: usize) -> Self {
        Self {
            actions,
            objective,
            origin,
            sample,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Solutions in non-decreasing objective order; equal objectives keep
/// ascending sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSolutionSet {
    solutions: Vec<Solution>,
}

impl SortedSolutionSet {
    pub fn as_slice(&self) -> &[Solution] {
        &self.solutions
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn best(&self) -> &Solution {
        &self.solutions[0]
    }

    pub fn into_vec(self) -> Vec<Solution> {
        self.solutions
    }
}

pub fn sort_solutions(solutions: Vec<Solution>) -> Result<SortedSolutionSet> {
    if solutions.is_empty() {
        return domain("cannot sort an empty solution set");
    }
    let mut solutions = solutions;
    solutions.sort_by(|a, b| {
        a.objective
            .total_cmp(&b.objective)
            .then(a.sample.cmp(&b.sample))
    });
    Ok(SortedSolutionSet { solutions })
}

/// A winner/loser pair with a strictly better winner objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    winner: Solution,
    loser: Solution,
}

impl PreferencePair {
    pub fn new(winner: Solution, loser: Solution) -> Result<Self> {
        if !(winner.objective < loser.objective) {
            return domain(format!(
                "no strict preference: winner objective {} is not below loser objective {}",
                winner.objective, loser.objective
            ));
        }
        Ok(Self { winner, loser })
    }

    pub fn winner(&self) -> &Solution {
        &self.winner
    }

    pub fn loser(&self) -> &Solution {
        &self.loser
    }
}

/// `100 * (obj - reference) / reference`; negative when `obj` beats the
/// reference.
pub fn gap_percent(obj: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) || !reference.is_finite() {
        return domain(format!("reference objective must be positive, got {reference}"));
    }
    Ok(100.0 * (obj - reference) / reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sol(obj: f64, sample: usize) -> Solution {
        Solution::new(vec![], obj, Origin::Sampled, sample)
    }

    #[test]
    fn gap_examples() {
        assert!((gap_percent(110.0, 100.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(gap_percent(100.0, 100.0).unwrap(), 0.0);
        // (7.8267 - 7.7632) / 7.7632 * 100, evaluated by hand to 12 digits.
        let g = gap_percent(7.8267, 7.7632).unwrap();
        assert!((g - 0.817961665292).abs() < 1e-9, "{g}");
        assert!(gap_percent(90.0, 100.0).unwrap() < 0.0);
    }

    #[test]
    fn gap_rejects_bad_reference() {
        assert!(gap_percent(1.0, 0.0).is_err());
        assert!(gap_percent(1.0, -3.0).is_err());
        assert!(gap_percent(1.0, f64::NAN).is_err());
    }

    #[test]
    fn sort_examples() {
        let s = sort_solutions(vec![sol(5.0, 0), sol(3.0, 1), sol(4.0, 2)]).unwrap();
        let objs: Vec<f64> = s.as_slice().iter().map(|s| s.objective).collect();
        assert_eq!(objs, vec![3.0, 4.0, 5.0]);

        let s = sort_solutions(vec![sol(2.0, 0), sol(2.0, 1), sol(1.0, 2)]).unwrap();
        let keys: Vec<(f64, usize)> = s.as_slice().iter().map(|s| (s.objective, s.sample)).collect();
        assert_eq!(keys, vec![(1.0, 2), (2.0, 0), (2.0, 1)]);
        assert!(sort_solutions(vec![]).is_err());
    }

    #[test]
    fn sort_matches_reference_sort_on_random_objectives() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, &[]);
        let input: Vec<Solution> = (0..256)
            .map(|i| sol(rng.gen_range(0..40) as f64, i))
            .collect();
        let sorted = sort_solutions(input.clone()).unwrap();
        // Reference: selection sort on (objective, sample).
        let mut rest = input;
        let mut reference = Vec::new();
        while !rest.is_empty() {
            let mut best = 0;
            for i in 1..rest.len() {
                let (a, b) = (&rest[i], &rest[best]);
                if a.objective < b.objective || (a.objective == b.objective && a.sample < b.sample) {
                    best = i;
                }
            }
            reference.push(rest.remove(best));
        }
        assert_eq!(sorted.as_slice(), &reference[..]);
    }

    #[test]
    fn pair_requires_strict_preference() {
        assert!(PreferencePair::new(sol(1.0, 0), sol(2.0, 1)).is_ok());
        assert!(PreferencePair::new(sol(2.0, 0), sol(2.0, 1)).is_err());
        assert!(PreferencePair::new(sol(3.0, 0), sol(2.0, 1)).is_err());
    }

    proptest! {
        #[test]
        fn sort_is_idempotent_permutation(objs in prop::collection::vec(0u8..20, 1..60)) {
            let input: Vec<Solution> = objs.iter().enumerate().map(|(i, &o)| sol(o as f64, i)).collect();
            let once = sort_solutions(input.clone()).unwrap();
            let twice = sort_solutions(once.clone().into_vec()).unwrap();
            prop_assert_eq!(&once, &twice);
            let mut samples: Vec<usize> = once.as_slice().iter().map(|s| s.sample).collect();
            samples.sort_unstable();
            prop_assert_eq!(samples, (0..objs.len()).collect::<Vec<_>>());
            for w in once.as_slice().windows(2) {
                prop_assert!(w[0].objective <= w[1].objective);
            }
        }

        #[test]
        fn gap_is_scale_invariant(a in 0.1f64..1e4, b in 0.1f64..1e4, c in 0.01f64..1e3) {
            let g1 = gap_percent(a, b).unwrap();
            let g2 = gap_percent(c * a, c * b).unwrap();
            prop_assert!((g1 - g2).abs() <= 1e-9 * g1.abs().max(1.0));
        }
    }
}
