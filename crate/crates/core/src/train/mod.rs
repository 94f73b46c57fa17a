//! Loss, optimizer, and the masked multi-task training loop with
//! pretrain/fine-tune workflows.

mod adam;
mod loss;
mod trainer;

pub use adam::Adam;
pub use loss::{
    fractal_tanimoto_with_complement, masked_loss, tanimoto, tanimoto_with_complement,
    TanimotoConfig,
};
pub use trainer::{
    consensus_predict, evaluate_dataset, finetune, train, EpochLog, TrainConfig, TrainOutcome,
};
