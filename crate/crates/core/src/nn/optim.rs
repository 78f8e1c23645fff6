use super::{BottleneckedNetwork, NetworkGradients, NnError};

/// Plain gradient descent: `p ← p − lr·g`.
pub fn apply_sgd(
    net: &mut BottleneckedNetwork,
    grads: &NetworkGradients,
    lr: f64,
) -> Result<(), NnError> {
    let g = grads.slices();
    let mut params = net.parameter_slices_mut();
    check_shapes(&params, &g)?;
    for (p, g) in params.iter_mut().zip(&g) {
        for (pi, gi) in p.iter_mut().zip(g.iter()) {
            *pi -= lr * gi;
        }
    }
    drop(params);
    net.bump_version();
    Ok(())
}

fn check_shapes(params: &[&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
    if params.len() != grads.len()
        || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
    {
        return Err(NnError::ShapeMismatch(format!(
            "gradient layout {:?} does not match parameters {:?}",
            grads.iter().map(|g| g.len()).collect::<Vec<_>>(),
            params.iter().map(|p| p.len()).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// Adam with bias correction. Moment buffers are allocated lazily on the
/// first step to mirror the network's parameter layout.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn apply(
        &mut self,
        net: &mut BottleneckedNetwork,
        grads: &NetworkGradients,
        lr: f64,
    ) -> Result<(), NnError> {
        let g = grads.slices();
        let mut params = net.parameter_slices_mut();
        check_shapes(&params, &g)?;
        if self.m.is_empty() {
            self.m = g.iter().map(|s| vec![0.0; s.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != g.len() || self.m.iter().zip(&g).any(|(m, g)| m.len() != g.len()) {
            return Err(NnError::ShapeMismatch("optimizer state layout changed".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(&g)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        drop(params);
        net.bump_version();
        Ok(())
    }
}

/// Adam step with explicit state, mirroring [`apply_sgd`].
pub fn apply_adam(
    net: &mut BottleneckedNetwork,
    grads: &NetworkGradients,
    state: &mut Adam,
    lr: f64,
) -> Result<(), NnError> {
    state.apply(net, grads, lr)
}
