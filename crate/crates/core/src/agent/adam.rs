use super::policy::{ActorCritic, ActorCriticGrads};
use crate::Scalar;

/// First- and second-moment adaptive optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    /// Step size for the critic's tensors.
    pub critic_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    actor_tensors: usize,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(policy: &ActorCritic<T>, lr: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<T>> = policy
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            lr,
            critic_lr: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            steps: 0,
            actor_tensors: policy.actor.tensors().len(),
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn with_critic_lr(mut self, lr: f64) -> Self {
        self.critic_lr = lr;
        self
    }

    pub fn step(&mut self, policy: &mut ActorCritic<T>, grads: &ActorCriticGrads<T>) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let actor_lr = T::from_f64_lossy(self.lr * c2.sqrt() / c1);
        let critic_lr = T::from_f64_lossy(self.critic_lr * c2.sqrt() / c1);
        let eps_t = T::from_f64_lossy(self.eps * c2.sqrt());
        let gs = grads.tensors();
        for (k, p) in policy.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], gs[k]);
            let lr_t = if k < self.actor_tensors { actor_lr } else { critic_lr };
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps_t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut net: ActorCritic<f64> = ActorCritic::new(4, &mut seeded(1));
        let before = net.clone();
        let mut grads = ActorCriticGrads::zeros_for(&net);
        grads.actor.layers[0].weight[0] = 3.0;
        grads.critic.layers[1].bias[2] = -0.01;
        let mut opt = Adam::new(&net, 1e-3, 1e-12);
        opt.step(&mut net, &grads);
        let d0 = net.actor.layers[0].weight[0] - before.actor.layers[0].weight[0];
        let d1 = net.critic.layers[1].bias[2] - before.critic.layers[1].bias[2];
        assert!((d0 + 1e-3).abs() < 1e-9);
        assert!((d1 - 1e-3).abs() < 1e-9);
        assert_eq!(net.actor.layers[1], before.actor.layers[1]);
    }
}
