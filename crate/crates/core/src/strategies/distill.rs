use crate::dqn::{td_loss_grad, DqnAgent, Transition};
use crate::error::{Error, Result};
use crate::nn::{softmax, softmax_kl_grad, Mlp, ParamVector};

/// Which model learns from the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillDirection {
    Mutual,
    /// The meme absorbs the local model; the local model trains on TD only.
    ToMeme,
    /// The local model absorbs the meme; the meme trains on TD only.
    ToLocal,
}

impl DistillDirection {
    fn local_learns(self) -> bool {
        matches!(self, DistillDirection::Mutual | DistillDirection::ToLocal)
    }

    fn meme_learns(self) -> bool {
        matches!(self, DistillDirection::Mutual | DistillDirection::ToMeme)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillLoss {
    pub local: f64,
    pub meme: f64,
}

/// `(1 - lambda) * TD + lambda * T^2 * KL(student || teacher)` over the
/// batch, with the teacher held fixed. The TD term is the mean squared
/// error against `targets`.
pub fn distill_loss_grad(
    student: &Mlp,
    teacher: &Mlp,
    batch: &[&Transition],
    targets: &[f64],
    lambda: f64,
    temperature: f64,
) -> Result<(f64, ParamVector)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("distillation weight", format!("{lambda} is outside [0, 1]")));
    }
    if batch.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "distillation targets",
            expected: batch.len(),
            actual: targets.len(),
        });
    }
    let (td, td_grad) = td_loss_grad(student, batch, targets)?;
    let mut grad = td_grad.scale(1.0 - lambda);
    let mut loss = (1.0 - lambda) * td;
    if lambda > 0.0 {
        let scale = lambda * temperature * temperature / batch.len() as f64;
        for t in batch {
            let teacher_probs = softmax(&teacher.forward(&t.state)?, temperature);
            let (kl, g) = softmax_kl_grad(&student.forward(&t.state)?, &teacher_probs, temperature);
            loss += scale * kl;
            let out: Vec<f64> = g.iter().map(|v| v * scale).collect();
            student.accumulate_backward(&t.state, &out, &mut grad)?;
        }
    }
    Ok((loss, grad))
}

/// One simultaneous distillation step on a shared batch. Both gradients are
/// taken at the pre-step parameters and TD targets come from the local
/// agent's target network. `lambda` weights the local model's pull towards
/// the meme; the meme's pull towards the local model is `1 - lambda`.
pub fn distill_step(
    local: &mut DqnAgent,
    meme: &mut Mlp,
    batch: &[&Transition],
    lambda: f64,
    temperature: f64,
    direction: DistillDirection,
) -> Result<DistillLoss> {
    let targets = local.td_targets(batch)?;
    let local_lambda = if direction.local_learns() { lambda } else { 0.0 };
    let meme_lambda = if direction.meme_learns() { 1.0 - lambda } else { 0.0 };
    let (meme_loss, meme_grad) = distill_loss_grad(meme, local.q_net(), batch, &targets, meme_lambda, temperature)?;
    let (local_loss, local_grad) = distill_loss_grad(local.q_net(), meme, batch, &targets, local_lambda, temperature)?;
    local.apply_gradient(&local_grad)?;
    meme.params_mut().add_scaled(-local.learning_rate, &meme_grad)?;
    Ok(DistillLoss { local: local_loss, meme: meme_loss })
}
