//! Feed-forward networks, flat parameter vectors and distribution math.

mod dist;
mod mlp;
mod params;

pub use dist::{kl_divergence, softmax, softmax_kl_grad, ProbDist, PROB_FLOOR};
pub use mlp::{Activation, Mlp};
pub use params::{weighted_mean, LayerShape, ParamVector};
