mod data;
mod model;
mod train;

pub use data::{embed, synth, EmbedArgs, SynthArgs};
pub use model::{dump_features, eval, gradcheck, infer, DumpArgs, EvalArgs, GradcheckArgs, InferArgs};
pub use train::{ablate, train, AblateArgs, TrainArgs};
