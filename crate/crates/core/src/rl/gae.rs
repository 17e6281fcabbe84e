//! Generalized advantage estimation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// `values` holds one entry per step plus the bootstrap value of the state after the
/// last step. A `done` step does not bootstrap from its successor.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<Advantages> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 || dones.len() != t_len {
        return Err(Error::shape(format!(
            "gae: {} rewards need {} values and {} dones, got {} and {}",
            t_len,
            t_len + 1,
            t_len,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; t_len];
    let mut next = 0.0;
    for t in (0..t_len).rev() {
        let keep = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * keep - values[t];
        next = delta + gamma * lambda * keep * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(Advantages {
        advantages: adv,
        returns,
    })
}
