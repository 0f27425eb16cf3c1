use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the discrete mode sequence is generated. Mode indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeProcess {
    /// `transition[i][j] = Pr[j_t = j | j_{t-1} = i]`; `initial` is the law of `j_1`.
    MarkovChain {
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
    Schedule {
        modes: Vec<usize>,
    },
    /// Piecewise-constant modes: segment lengths uniform on `[min_len, max_len]`,
    /// each segment's mode uniform over `num_modes`.
    SegmentedUniform {
        min_len: usize,
        max_len: usize,
        num_modes: usize,
    },
}

impl ModeProcess {
    pub fn markov(transition: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let p = ModeProcess::MarkovChain { transition, initial };
        p.validate(None)?;
        Ok(p)
    }

    /// Symmetric chain with `stay` on the diagonal and the rest spread evenly,
    /// started uniformly.
    pub fn symmetric(num_modes: usize, stay: f64) -> Self {
        let off = if num_modes > 1 {
            (1.0 - stay) / (num_modes - 1) as f64
        } else {
            0.0
        };
        let transition = (0..num_modes)
            .map(|i| {
                (0..num_modes)
                    .map(|j| if i == j { if num_modes > 1 { stay } else { 1.0 } } else { off })
                    .collect()
            })
            .collect();
        ModeProcess::MarkovChain {
            transition,
            initial: vec![1.0 / num_modes as f64; num_modes],
        }
    }

    /// Number of modes the process can emit, if it is fixed by the process itself.
    pub fn num_modes(&self) -> Option<usize> {
        match self {
            ModeProcess::MarkovChain { transition, .. } => Some(transition.len()),
            ModeProcess::Schedule { .. } => None,
            ModeProcess::SegmentedUniform { num_modes, .. } => Some(*num_modes),
        }
    }

    pub fn validate(&self, num_modes: Option<usize>) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        match self {
            ModeProcess::MarkovChain { transition, initial } => {
                let m = transition.len();
                if m == 0 {
                    return bad("empty transition matrix".into());
                }
                if let Some(n) = num_modes {
                    if n != m {
                        return bad(format!("transition matrix has {m} modes, system has {n}"));
                    }
                }
                for (i, row) in transition.iter().chain(std::iter::once(initial)).enumerate() {
                    if row.len() != m {
                        return bad(format!("row {i} has length {} (expected {m})", row.len()));
                    }
                    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return bad(format!("row {i} has entries outside [0,1]"));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-12 {
                        return bad(format!("row {i} sums to {sum}, not 1"));
                    }
                }
                Ok(())
            }
            ModeProcess::Schedule { modes } => {
                if let Some(n) = num_modes {
                    if let Some(j) = modes.iter().find(|j| **j >= n) {
                        return bad(format!("scheduled mode {j} out of range for {n} modes"));
                    }
                }
                Ok(())
            }
            ModeProcess::SegmentedUniform {
                min_len,
                max_len,
                num_modes: m,
            } => {
                if *min_len == 0 || min_len > max_len || *m == 0 {
                    return bad("segmented process needs 1 <= min_len <= max_len and modes > 0".into());
                }
                if let Some(n) = num_modes {
                    if n != *m {
                        return bad(format!("segmented process has {m} modes, system has {n}"));
                    }
                }
                Ok(())
            }
        }
    }

    /// Draws `horizon` mode indices.
    pub fn sample<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> Result<Vec<usize>> {
        match self {
            ModeProcess::MarkovChain { transition, initial } => {
                let mut out = Vec::with_capacity(horizon);
                if horizon == 0 {
                    return Ok(out);
                }
                let mut j = sample_categorical(initial, rng);
                out.push(j);
                for _ in 1..horizon {
                    j = sample_categorical(&transition[j], rng);
                    out.push(j);
                }
                Ok(out)
            }
            ModeProcess::Schedule { modes } => {
                if modes.len() < horizon {
                    return Err(Error::Config(format!(
                        "schedule has {} entries, horizon is {horizon}",
                        modes.len()
                    )));
                }
                Ok(modes[..horizon].to_vec())
            }
            ModeProcess::SegmentedUniform {
                min_len,
                max_len,
                num_modes,
            } => {
                let mut out = Vec::with_capacity(horizon);
                while out.len() < horizon {
                    let len = rng.random_range(*min_len..=*max_len);
                    let j = rng.random_range(0..*num_modes);
                    out.extend(std::iter::repeat_n(j, len.min(horizon - out.len())));
                }
                Ok(out)
            }
        }
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off: return the last index with positive mass.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Free function form of [`ModeProcess::sample`].
pub fn sample_mode_sequence<R: Rng + ?Sized>(
    process: &ModeProcess,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    process.sample(horizon, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_chain_is_absorbing() {
        let p = ModeProcess::markov(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(p.sample(5, &mut rng).unwrap(), vec![0; 5]);
    }

    #[test]
    fn schedule_passthrough() {
        let p = ModeProcess::Schedule { modes: vec![1, 0, 1] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(p.sample(3, &mut rng).unwrap(), vec![1, 0, 1]);
        assert!(p.sample(4, &mut rng).is_err());
    }

    #[test]
    fn two_state_stationary_fraction() {
        // π solves π = πΠ for Π = [[0.9,0.1],[0.2,0.8]]: 0.1 π₁ = 0.2 π₂ → π = (2/3, 1/3).
        let p = ModeProcess::markov(vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let seq = p.sample(100_000, &mut rng).unwrap();
        let frac = seq.iter().filter(|j| **j == 0).count() as f64 / seq.len() as f64;
        assert!((frac - 2.0 / 3.0).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn non_stochastic_rows_rejected() {
        assert!(ModeProcess::markov(vec![vec![0.9, 0.2], vec![0.2, 0.8]], vec![1.0, 0.0]).is_err());
        assert!(ModeProcess::markov(vec![vec![1.1, -0.1], vec![0.2, 0.8]], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn segmented_uniform_segments_respect_bounds() {
        let p = ModeProcess::SegmentedUniform {
            min_len: 5,
            max_len: 10,
            num_modes: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = p.sample(1000, &mut rng).unwrap();
        assert_eq!(seq.len(), 1000);
        assert!(seq.iter().all(|j| *j < 4));
    }

    fn stochastic_matrix(m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0.05f64..1.0, m), m).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    let mut r: Vec<f64> = r.iter().map(|v| v / s).collect();
                    // Absorb the rounding error so the row sums to 1 within 1e-12.
                    let rest: f64 = r[1..].iter().sum();
                    r[0] = 1.0 - rest;
                    r
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4))]
        #[test]
        fn empirical_transition_frequencies_match(pi in stochastic_matrix(3), seed in any::<u64>()) {
            let p = ModeProcess::markov(pi.clone(), vec![1.0 / 3.0; 3]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq = p.sample(1_000_000, &mut rng).unwrap();
            let mut counts = [[0usize; 3]; 3];
            for w in seq.windows(2) {
                counts[w[0]][w[1]] += 1;
            }
            for i in 0..3 {
                let total: usize = counts[i].iter().sum();
                for j in 0..3 {
                    let freq = counts[i][j] as f64 / total as f64;
                    prop_assert!((freq - pi[i][j]).abs() < 0.01, "Π[{i}][{j}]={} freq={freq}", pi[i][j]);
                }
            }
        }
    }
}
