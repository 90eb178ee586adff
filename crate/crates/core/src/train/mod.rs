//! Losses, SGD with momentum, step-decay schedules, the two training loops
//! and checkpoint files.

pub mod checkpoint;
mod fit;
pub mod loss;
pub mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use fit::{
    argmax, class_names, evaluate_classifier, evaluate_segmentation, fit_classifier, fit_segmentation,
    foreground_fraction, init_resnet, init_segnet, predict_classes, predict_masks, segmentation_loss, train_classifier, train_segmentation,
    ClsEvaluation, EpochRecord, History, SegEvaluation, TrainConfig, HISTORY_HEADER,
};
pub use loss::{bce_loss, cross_entropy_loss, softmax};
pub use optim::{sgd_step, LrSchedule, SgdMomentum};
