//! Contrastive adversarial training: clean and perturbed cross-entropy, a
//! symmetric KL consistency term between the two passes, a temperature
//! schedule, optional word-drop and in-batch negatives, Adam, and an
//! epoch loop with early stopping on validation AUC.

mod augment;
mod config;
mod loss;
mod runner;
mod step;

pub use augment::{in_batch_negatives, negative_assignment, word_drop};
pub use config::{temperature, AdamConfig, Decay, Objective, TemperatureSchedule, TrainConfig, TrainMode};
pub use loss::{
    adv_kl_loss, adversarial_perturbation, ate_loss, bce_loss, input_gradient, total_loss, InputGradient,
    LossBreakdown, PROB_FLOOR,
};
pub use runner::{read_history, train_loop, write_history, HistoryRecord, TrainOutcome};
pub use step::{bce_train_step, train_step, Adam, TrainState};
