use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::SyntheticWorld;
use crate::error::Result;
use crate::models::{PolicyModel, Sequence, END, FIRST_CONTENT};
use crate::seed;

/// Anything that answers a prompt with one response.
pub trait Responder: Sync {
    fn respond(&self, x: &Sequence, max_len: usize) -> Result<Sequence>;
}

impl Responder for PolicyModel {
    fn respond(&self, x: &Sequence, max_len: usize) -> Result<Sequence> {
        self.greedy(x, max_len)
    }
}

/// Scripted responder that searches for high-utility responses using the
/// world's hidden utility. Used only as an evaluation reference.
pub struct OracleResponder<'a> {
    pub world: &'a SyntheticWorld,
    pub restarts: usize,
}

impl<'a> OracleResponder<'a> {
    pub fn new(world: &'a SyntheticWorld) -> Self {
        Self { world, restarts: 32 }
    }
}

impl Responder for OracleResponder<'_> {
    fn respond(&self, x: &Sequence, max_len: usize) -> Result<Sequence> {
        let w = self.world;
        let max_len = max_len.clamp(1, w.response_len());
        let key = x
            .tokens
            .iter()
            .fold(0u64, |h, &t| h.wrapping_mul(31).wrapping_add(t as u64));
        let mut rng = seed::rng(w.seed(), "oracle-responder", &[key]);
        let mut best = Sequence::response(vec![END]);
        let mut best_u = w.utility(x, &best)?;
        for _ in 0..self.restarts {
            let mut y = w.random_response(&mut rng);
            y.tokens.truncate(max_len);
            let mut u = w.utility(x, &y)?;
            // Coordinate ascent over single-token substitutions.
            loop {
                let mut improved = false;
                for pos in 0..y.tokens.len() {
                    for tok in (FIRST_CONTENT..w.vocab() as u32).chain([END]) {
                        let old = y.tokens[pos];
                        if tok == old {
                            continue;
                        }
                        y.tokens[pos] = tok;
                        let cand = w.utility(x, &y)?;
                        if cand > u {
                            u = cand;
                            improved = true;
                        } else {
                            y.tokens[pos] = old;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            if let Some(end) = y.tokens.iter().position(|&t| t == END) {
                y.tokens.truncate(end + 1);
                u = w.utility(x, &y)?;
            }
            if u > best_u || (u == best_u && rng.random::<bool>()) {
                best = y;
                best_u = u;
            }
        }
        Ok(best)
    }
}

/// Head-to-head comparison under the hidden utility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Wins plus half the ties, over the number of prompts.
    pub win_rate: f64,
    pub mean_true_utility: f64,
    pub baseline_true_utility: f64,
}

/// One response per prompt from each side; the higher hidden utility wins.
pub fn evaluate(
    policy: &dyn Responder,
    baseline: &dyn Responder,
    world: &SyntheticWorld,
    prompts: &[Sequence],
    max_len: usize,
) -> Result<EvalResult> {
    if prompts.len() < 100 {
        log::warn!("evaluating on only {} prompts", prompts.len());
    }
    if prompts.is_empty() {
        return Err(crate::error::UpoError::EmptyPool("no evaluation prompts".into()));
    }
    let rows = prompts
        .par_iter()
        .map(|x| {
            let a = policy.respond(x, max_len)?;
            let b = baseline.respond(x, max_len)?;
            let (ua, ub) = (world.utility(x, &a)?, world.utility(x, &b)?);
            let score = if ua > ub {
                1.0
            } else if ua < ub {
                0.0
            } else {
                0.5
            };
            Ok((score, ua, ub))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let (mut wins, mut ua, mut ub) = (0.0, 0.0, 0.0);
    for (s, a, b) in rows {
        wins += s;
        ua += a;
        ub += b;
    }
    Ok(EvalResult {
        win_rate: wins / n,
        mean_true_utility: ua / n,
        baseline_true_utility: ub / n,
    })
}
