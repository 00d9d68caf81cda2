use super::{build_tokens, TokenSequence};
use crate::envs::Trajectory;
use crate::error::{Error, Result};

/// A contiguous slice of a trajectory starting at anchor index `j`, together
/// with the token encoding of the augmented state anchored at `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayWindow {
    pub anchor: usize,
    /// `n + 1` true states `s_j ..= s_{j+n}`.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub tokens: TokenSequence,
    /// Offset `i < n` of a true terminal transition inside the window.
    pub terminal_at: Option<usize>,
    /// Offset `i < n` of a horizon truncation inside the window.
    pub truncated_at: Option<usize>,
}

impl ReplayWindow {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Window for time `t` of a trajectory of `L` transitions: anchor
/// `j = t − delta`, spanning `n` transitions. The token sequence covers
/// `min(delta, L − j)` actions; `delta` also serves as the token capacity.
pub fn window_extract(traj: &Trajectory, t: usize, delta: usize, n: usize) -> Result<ReplayWindow> {
    let j = t
        .checked_sub(delta)
        .ok_or_else(|| Error::OutOfRange(format!("t = {t} is before the first anchor for delta {delta}")))?;
    window_at(traj, j, n, delta.min(traj.len().saturating_sub(j)), delta)
}

/// Window anchored at `j` with `n` transitions and a token sequence of
/// `effective` valid tokens out of `capacity`.
pub fn window_at(traj: &Trajectory, j: usize, n: usize, effective: usize, capacity: usize) -> Result<ReplayWindow> {
    let len = traj.len();
    if n == 0 || j + n > len || effective == 0 || effective > capacity || j + effective > len {
        return Err(Error::OutOfRange(format!(
            "window at {j} of {n} steps ({effective}/{capacity} tokens) in a trajectory of {len}"
        )));
    }
    let tr = &traj.transitions;
    let sd = tr[0].state.len();
    let ad = tr[0].action.len();
    let tok_actions: Vec<&[f64]> = tr[j..j + effective].iter().map(|x| x.action.as_slice()).collect();
    let tok_rewards: Vec<f64> = tr[j..j + effective].iter().map(|x| x.reward).collect();
    let tokens = build_tokens(&tr[j].state, &tok_actions, &tok_rewards, capacity, sd, ad);
    let slice = &tr[j..j + n];
    let mut states: Vec<Vec<f64>> = slice.iter().map(|x| x.state.clone()).collect();
    states.push(slice[n - 1].next_state.clone());
    Ok(ReplayWindow {
        anchor: j,
        states,
        actions: slice.iter().map(|x| x.action.clone()).collect(),
        rewards: slice.iter().map(|x| x.reward).collect(),
        tokens,
        terminal_at: slice.iter().position(|x| x.terminal()),
        truncated_at: slice.iter().position(|x| x.truncated),
    })
}

/// Number of full windows (`n = delta`) in a trajectory of `len` transitions.
pub fn full_window_count(len: usize, delta: usize) -> usize {
    (len + 1).saturating_sub(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{rollout, Env};

    #[test]
    fn tiles_with_stride_one() {
        let env = Env::by_name("mass_spring_damper").unwrap();
        let traj = rollout(&env, &mut |_: &[f64]| vec![0.3], 20, 1).unwrap();
        let delta = 5;
        let count = (0..=40).filter(|&t| window_extract(&traj, t, delta, delta).is_ok()).count();
        assert_eq!(count, full_window_count(traj.len(), delta));
        assert_eq!(count, traj.states().len() - delta);
    }
}
