//! n-step actor-critic with optional teacher distillation.

mod loss;
mod net;
mod rollout;
mod train;

pub use loss::{
    loss_actor_distill, loss_critic_distill, loss_entropy, loss_policy, loss_task, loss_value, td_errors, Betas,
    LossTerms, TeacherTargets,
};
pub use net::{ActorCriticNet, NetConfig, NetOut, Route};
pub use rollout::{argmax, collect_rollout, evaluate, log_softmax, sample_categorical, ActionMode, EnvRunner, Rollout};
pub use train::{
    evaluate_net, optimizer_step, recent_mean, rollout_with, task_gradients, train, DistillMode, EvalPoint,
    LrSchedule, Teacher, TrainConfig, TrainReport,
};
