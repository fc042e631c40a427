//! Dense numerics: MLP classifiers, backpropagation, SGD training and the
//! model checkpoint format.

pub mod checkpoint;
mod mlp;
mod sgd;

pub use checkpoint::{load_model, read_model, save_model, write_model};
pub use mlp::{
    argmax, loss_and_grad, predict_label, softmax, softmax_probs, Activation, MlpModel, MlpSpec,
};
pub(crate) use mlp::dot;
pub use sgd::{accuracy, train_supervised, SgdConfig, TrainOutcome};
pub(crate) use sgd::{epoch_order, Momentum};
