//! Constructive environments.
//!
//! Each problem instance doubles as its own environment: it builds fresh
//! construction states, reports the feasible actions of a state and applies
//! actions until the horizon is reached.

pub mod fjsp;
pub mod jsp;
pub mod tsp;

use crate::error::{domain, Result};

pub trait Environment: Sync {
    type State: Clone + Send;

    fn initial_state(&self) -> Self::State;

    /// Number of construction steps of a complete solution.
    fn horizon(&self) -> usize;

    /// Size of the action space; masks have this length.
    fn action_count(&self) -> usize;

    fn is_terminal(&self, state: &Self::State) -> bool;

    /// Writes the feasibility mask of a non-terminal state into `mask`.
    fn write_mask(&self, state: &Self::State, mask: &mut [bool]);

    fn apply(&self, state: &mut Self::State, action: usize) -> Result<()>;

    /// Objective of a terminal state.
    fn objective(&self, state: &Self::State) -> f64;

    fn feasible_actions(&self, state: &Self::State) -> Result<Vec<bool>> {
        if self.is_terminal(state) {
            return domain("no feasible actions in a terminal state");
        }
        let mut mask = vec![false; self.action_count()];
        self.write_mask(state, &mut mask);
        Ok(mask)
    }

    /// Replays a full action sequence and returns its objective.
    fn evaluate(&self, actions: &[usize]) -> Result<f64> {
        if actions.len() != self.horizon() {
            return domain(format!(
                "expected {} actions, got {}",
                self.horizon(),
                actions.len()
            ));
        }
        let mut state = self.initial_state();
        for &a in actions {
            self.apply(&mut state, a)?;
        }
        Ok(self.objective(&state))
    }
}

/// First, second and third quartile with linear interpolation between order
/// statistics. An empty input yields zeros.
pub fn quartiles(values: &[f64]) -> [f64; 3] {
    if values.is_empty() {
        return [0.0; 3];
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    [at(0.25), at(0.5), at(0.75)]
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_small_sets() {
        assert_eq!(quartiles(&[5.0]), [5.0, 5.0, 5.0]);
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]), [2.0, 3.0, 4.0]);
        // numpy.percentile([1, 2, 3, 4], [25, 50, 75]) -> 1.75, 2.5, 3.25
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0]), [1.75, 2.5, 3.25]);
    }
}
