use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the temperature decay over training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    /// `τ_max`, then `√(τ_max·τ_min)`, then `τ_min`, one third of the steps each.
    ThreePhase,
    /// `τ_min` throughout.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemperatureSchedule {
    pub tau_max: f64,
    pub tau_min: f64,
    pub decay: Decay,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            tau_max: 4.0,
            tau_min: 1.0,
            decay: Decay::ThreePhase,
        }
    }
}

/// Temperature at `step` (0-based) of `total_steps`; monotone
/// non-increasing in `step`.
pub fn temperature(step: u64, total_steps: u64, schedule: &TemperatureSchedule) -> f64 {
    let TemperatureSchedule { tau_max, tau_min, decay } = *schedule;
    match decay {
        Decay::Constant => tau_min,
        Decay::ThreePhase => {
            let total = total_steps.max(1);
            match (step.min(total - 1) * 3) / total {
                0 => tau_max,
                1 => (tau_max * tau_min).sqrt(),
                _ => tau_min,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which per-batch update the loop runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Two passes (clean and perturbed) and the weighted three-term loss.
    #[default]
    Contrastive,
    /// One pass and the cross-entropy alone.
    PlainBce,
}

/// Named loss-weight settings used by the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Bce,
    AdversarialOnly,
    Cat,
}

impl Objective {
    pub fn weights(self) -> [f64; 3] {
        match self {
            Objective::Bce => [1.0, 0.0, 0.0],
            Objective::AdversarialOnly => [0.5, 0.5, 0.0],
            Objective::Cat => [0.5, 0.5, 0.01],
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(Objective::Bce),
            "at" | "adversarial-only" => Ok(Objective::AdversarialOnly),
            "cat" => Ok(Objective::Cat),
            other => Err(Error::Config(format!("unknown objective {other:?}; expected bce, at or cat"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Weights of the clean cross-entropy, the perturbed cross-entropy and
    /// the symmetric KL term.
    pub alpha: [f64; 3],
    /// L2 norm of each pair's embedding perturbation.
    pub epsilon: f64,
    pub temperature: TemperatureSchedule,
    /// Drop probability for untagged words; 0 disables the augmentation.
    pub word_drop_rate: f64,
    /// Pair each positive with another item of its batch as a negative.
    pub in_batch_negatives: bool,
    /// Sort batches by length before trimming.
    pub length_bucketing: bool,
    pub seed: u64,
    pub adam: AdamConfig,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::published()
    }
}

impl TrainConfig {
    /// Published fine-tuning recipe: Adam at 2e-5, batches of 1024, three
    /// epochs, weights (0.5, 0.5, 0.01).
    pub fn published() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 1024,
            epochs: 3,
            patience: 1,
            alpha: Objective::Cat.weights(),
            epsilon: 0.05,
            temperature: TemperatureSchedule::default(),
            word_drop_rate: 0.0,
            in_batch_negatives: false,
            length_bucketing: true,
            seed: 0,
            adam: AdamConfig::default(),
            mode: TrainMode::Contrastive,
        }
    }

    /// Small batches and a larger step size for training from scratch on a
    /// single CPU core.
    pub fn desk() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 32,
            ..Self::published()
        }
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.alpha = objective.weights();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad(format!("loss weights must be finite and nonnegative, got {:?}", self.alpha));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        let t = &self.temperature;
        if !(t.tau_min > 0.0 && t.tau_max >= t.tau_min && t.tau_max.is_finite()) {
            return bad(format!("temperature needs tau_max >= tau_min > 0, got {} and {}", t.tau_max, t.tau_min));
        }
        if !(0.0..=1.0).contains(&self.word_drop_rate) {
            return bad(format!("word_drop_rate must lie in [0, 1], got {}", self.word_drop_rate));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam needs betas in [0, 1) and a positive eps".into());
        }
        Ok(())
    }
}
