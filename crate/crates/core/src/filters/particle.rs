//! Bootstrap particle filter over joint (state, mode) particles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::kalman::FilterMode;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, FactoredGaussian};
use crate::ssm::mode_process::sample_categorical;
use crate::ssm::StateModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub states: Vec<DVector<f64>>,
    pub modes: Vec<usize>,
    pub weights: Vec<f64>,
    /// Index of the initial particle each particle descends from.
    pub eve: Vec<usize>,
}

impl ParticleEnsemble {
    /// `n` particles drawn from `N(mean, cov)` with modes drawn from `initial_probs`.
    pub fn sample<R: Rng + ?Sized>(
        n: usize,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        initial_probs: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("particle count must be positive".into()));
        }
        let spread = if cov.iter().all(|v| *v == 0.0) {
            None
        } else {
            Some(FactoredGaussian::new(cov)?)
        };
        let states = (0..n)
            .map(|_| match &spread {
                Some(g) => mean + g.sample(rng),
                None => mean.clone(),
            })
            .collect();
        let modes = (0..n).map(|_| sample_categorical(initial_probs, rng)).collect();
        Ok(ParticleEnsemble {
            states,
            modes,
            weights: vec![1.0 / n as f64; n],
            eve: (0..n).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Weighted state average.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.states[0].len());
        for (x, &w) in self.states.iter().zip(&self.weights) {
            m.axpy(w, x, 1.0);
        }
        m
    }

    /// `1 / Σ w_i²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Posterior probability mass on each mode.
    pub fn mode_probs(&self, num_modes: usize) -> Vec<f64> {
        let mut p = vec![0.0; num_modes];
        for (&j, &w) in self.modes.iter().zip(&self.weights) {
            p[j] += w;
        }
        p
    }
}

/// Per-mode noise factors cached across steps.
#[derive(Debug, Clone)]
pub struct ParticleModel {
    pub modes: Vec<FilterMode>,
    pub transition: DMatrix<f64>,
    process: Vec<Option<FactoredGaussian>>,
    observation: Vec<FactoredGaussian>,
}

impl ParticleModel {
    pub fn new(modes: Vec<FilterMode>, transition: DMatrix<f64>) -> Result<Self> {
        let m = modes.len();
        if m == 0 || transition.nrows() != m || transition.ncols() != m {
            return Err(Error::Dimension("particle filter mode set and transition matrix disagree".into()));
        }
        let process = modes
            .iter()
            .map(|md| {
                if md.q.iter().all(|v| *v == 0.0) {
                    Ok(None)
                } else {
                    FactoredGaussian::new(&md.q).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let observation = modes.iter().map(|md| FactoredGaussian::new(&md.r)).collect::<Result<Vec<_>>>()?;
        Ok(ParticleModel {
            modes,
            transition,
            process,
            observation,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleDiagnostics {
    /// Weighted mean after reweighting and before resampling.
    pub fused_mean: DVector<f64>,
    /// Effective sample size after reweighting.
    pub ess: f64,
    pub resampled: bool,
    /// Set when all weights underflowed and were reset to uniform.
    pub weight_reset: bool,
    /// Monte-Carlo standard error of each component of `fused_mean`; see
    /// [`genealogy_standard_error`].
    pub standard_error: DVector<f64>,
}

/// One bootstrap PF step: propagate mode and state, reweight by the observation
/// likelihood, and resample systematically when the effective sample size drops
/// below `N/2`. `t` is the index of the produced state.
pub fn pf_step<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    y: &DVector<f64>,
    model: &ParticleModel,
    t: usize,
    rng: &mut R,
) -> Result<(ParticleEnsemble, ParticleDiagnostics)> {
    let n = ensemble.len();
    let mut states = Vec::with_capacity(n);
    let mut modes = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = model.transition.row(ensemble.modes[i]).iter().cloned().collect();
        let j = sample_categorical(&row, rng);
        let mode = &model.modes[j];
        let mut x = mode.transition(&ensemble.states[i], t);
        if let Some(g) = &model.process[j] {
            x += g.sample(rng);
        }
        let lw = model.observation[j].logpdf(&(y - mode.observe(&x)));
        let prev = ensemble.weights[i];
        log_w.push(if prev > 0.0 && lw.is_finite() { lw + prev.ln() } else { f64::NEG_INFINITY });
        states.push(x);
        modes.push(j);
    }
    let norm = log_sum_exp(&log_w);
    let (weights, weight_reset) = if norm.is_finite() {
        (log_w.iter().map(|l| (l - norm).exp()).collect(), false)
    } else {
        (vec![1.0 / n as f64; n], true)
    };
    let mut next = ParticleEnsemble {
        states,
        modes,
        weights,
        eve: ensemble.eve.clone(),
    };
    let fused_mean = next.mean();
    if fused_mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: t });
    }
    let ess = next.effective_sample_size();
    let standard_error = genealogy_standard_error(&next);
    let resampled = ess < n as f64 / 2.0;
    if resampled {
        next = systematic_resample(&next, rng);
    }
    Ok((
        next,
        ParticleDiagnostics {
            fused_mean,
            ess,
            resampled,
            weight_reset,
            standard_error,
        },
    ))
}

/// Systematic resampling with a single uniform offset; output weights are uniform.
pub fn systematic_resample<R: Rng + ?Sized>(ensemble: &ParticleEnsemble, rng: &mut R) -> ParticleEnsemble {
    let n = ensemble.len();
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut cum = ensemble.weights[0];
    let mut k = 0;
    let mut states = Vec::with_capacity(n);
    let mut modes = Vec::with_capacity(n);
    let mut eve = Vec::with_capacity(n);
    for _ in 0..n {
        while u > cum && k + 1 < n {
            k += 1;
            cum += ensemble.weights[k];
        }
        states.push(ensemble.states[k].clone());
        modes.push(ensemble.modes[k]);
        eve.push(ensemble.eve[k]);
        u += step;
    }
    ParticleEnsemble {
        states,
        modes,
        weights: vec![step; n],
        eve,
    }
}

/// Monte-Carlo standard error of the weighted mean of each state component,
/// estimated from the particles' genealogy: particles are grouped by the
/// initial particle they descend from, and the variance is the sum over groups
/// of the squared weighted deviation `(Σ_{i∈g} w_i (x_i − x̄))²`. This counts
/// the error accumulated through resampling, which a per-step `Var/ESS`
/// estimate ignores.
pub fn genealogy_standard_error(ensemble: &ParticleEnsemble) -> DVector<f64> {
    let mean = ensemble.mean();
    let s = mean.len();
    let mut groups = DMatrix::<f64>::zeros(s, ensemble.len());
    for ((x, &w), &e) in ensemble.states.iter().zip(&ensemble.weights).zip(&ensemble.eve) {
        for c in 0..s {
            groups[(c, e)] += w * (x[c] - mean[c]);
        }
    }
    DVector::from_fn(s, |c, _| groups.row(c).norm_squared().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::kalman::{kf_step, GaussianBelief, LinearModel};
    use crate::ssm::{InitialState, ModeDynamics, ModeProcess, ModeSystem, NoiseModel, Observation, Transition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_noiseless_particle_tracks_simulation() {
        let f0 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let f1 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.1, 0.9]);
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let schedule = vec![0, 0, 1, 1, 0, 1, 1, 1, 0, 0];
        let dyn_for = |f: &DMatrix<f64>| ModeDynamics {
            transition: Transition::Linear { matrix: f.clone() },
            observation: Observation::Linear { matrix: h.clone() },
            process_noise: NoiseModel::none(2),
            obs_noise: NoiseModel::isotropic(1.0, 1),
        };
        let sys = ModeSystem::new(
            vec![dyn_for(&f0), dyn_for(&f1)],
            ModeProcess::Schedule { modes: schedule.clone() },
            InitialState::Point {
                state: DVector::from_vec(vec![1.0, 2.0]),
            },
        )
        .unwrap();
        let traj = sys.simulate(schedule.len(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ens = ParticleEnsemble {
            states: vec![traj.x0.clone()],
            modes: vec![0],
            weights: vec![1.0],
            eve: vec![0],
        };
        for (t, y) in traj.observations.iter().enumerate() {
            // Deterministic transition that forces the scheduled mode.
            let mut pi = DMatrix::zeros(2, 2);
            pi[(0, schedule[t])] = 1.0;
            pi[(1, schedule[t])] = 1.0;
            let modes = vec![
                FilterMode::from_maps(&sys.modes[0], DMatrix::zeros(2, 2), DMatrix::identity(1, 1)),
                FilterMode::from_maps(&sys.modes[1], DMatrix::zeros(2, 2), DMatrix::identity(1, 1)),
            ];
            let model = ParticleModel::new(modes, pi).unwrap();
            let (next, diag) = pf_step(&ens, y, &model, t + 1, &mut rng).unwrap();
            assert_eq!(diag.fused_mean, traj.states[t]);
            ens = next;
        }
    }

    #[test]
    fn large_ensemble_matches_kf_mean() {
        let lin = LinearModel {
            f: DMatrix::from_row_slice(2, 2, &[0.95, 0.1, 0.0, 0.9]),
            h: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            q: DMatrix::identity(2, 2) * 0.5,
            r: DMatrix::from_element(1, 1, 1.0),
        };
        let model = ParticleModel::new(vec![FilterMode::from_linear(&lin)], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut kf = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2));
        let mut ens = ParticleEnsemble::sample(10_000, &kf.mean, &kf.cov, &[1.0], &mut rng).unwrap();
        for t in 1..=20 {
            let y = DVector::from_vec(vec![(t as f64 * 0.4).sin() * 2.0]);
            let (k, _) = kf_step(&kf, &y, &lin).unwrap();
            let (next, diag) = pf_step(&ens, &y, &model, t, &mut rng).unwrap();
            let se = diag.standard_error[0];
            assert!((diag.fused_mean[0] - k.mean[0]).abs() < 5.0 * se, "t={t}");
            kf = k;
            ens = next;
        }
    }

    #[test]
    fn systematic_resampling_preserves_counts() {
        let ens = ParticleEnsemble {
            states: (0..4).map(|i| DVector::from_vec(vec![i as f64])).collect(),
            modes: vec![0; 4],
            weights: vec![0.5, 0.25, 0.25, 0.0],
            eve: vec![0, 1, 2, 3],
        };
        let out = systematic_resample(&ens, &mut ChaCha8Rng::seed_from_u64(1));
        let count = |v: f64| out.states.iter().filter(|x| x[0] == v).count();
        assert_eq!(count(0.0), 2);
        assert_eq!(count(1.0), 1);
        assert_eq!(count(2.0), 1);
        assert_eq!(count(3.0), 0);
    }

    #[test]
    fn weights_reset_on_underflow() {
        let lin = LinearModel {
            f: DMatrix::identity(1, 1),
            h: DMatrix::identity(1, 1),
            q: DMatrix::zeros(1, 1),
            r: DMatrix::from_element(1, 1, 1e-8),
        };
        let model = ParticleModel::new(vec![FilterMode::from_linear(&lin)], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ens = ParticleEnsemble::sample(5, &DVector::zeros(1), &DMatrix::zeros(1, 1), &[1.0], &mut rng).unwrap();
        let (next, diag) = pf_step(&ens, &DVector::from_vec(vec![1e200]), &model, 1, &mut rng).unwrap();
        assert!(diag.weight_reset);
        assert!((next.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
