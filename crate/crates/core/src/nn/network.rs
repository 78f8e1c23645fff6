use std::collections::BTreeMap;

use super::{GradientBundle, MlpCache, MlpNetwork, NnError};
use crate::linalg::Matrix;
use crate::projection::ProjectionBasis;

/// Encoder → optional fixed projection → named heads.
///
/// With a basis present the heads only ever see `h = Bᵀz`. The basis is
/// frozen unless `trainable_basis` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckedNetwork {
    encoder: MlpNetwork,
    basis: Option<ProjectionBasis>,
    trainable_basis: bool,
    heads: BTreeMap<String, MlpNetwork>,
    version: u64,
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct NetworkCache {
    version: u64,
    encoder: MlpCache,
    heads: Vec<(String, MlpCache)>,
    /// Encoder output `z` (`N x D`).
    pub z: Matrix,
    /// Head input: `h = zB`, or `z` itself without a basis.
    pub h: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradients {
    pub encoder: GradientBundle,
    /// Present only when the basis is trainable.
    pub basis: Option<Matrix>,
    pub heads: BTreeMap<String, GradientBundle>,
    /// Gradient of the loss with respect to the head input `h`.
    pub feature: Matrix,
}

impl NetworkGradients {
    /// Flat views in the same order as the network's parameter visitor.
    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.slices();
        if let Some(b) = &self.basis {
            out.push(b.as_slice());
        }
        for g in self.heads.values() {
            out.extend(g.slices());
        }
        out
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.slices_mut();
        if let Some(b) = &mut self.basis {
            out.push(b.as_mut_slice());
        }
        for g in self.heads.values_mut() {
            out.extend(g.slices_mut());
        }
        out
    }

    /// All gradient entries concatenated in parameter order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl BottleneckedNetwork {
    pub fn new(
        encoder: MlpNetwork,
        basis: Option<ProjectionBasis>,
        heads: BTreeMap<String, MlpNetwork>,
        trainable_basis: bool,
    ) -> Result<Self, NnError> {
        if let Some(b) = &basis {
            if b.d() != encoder.output_dim() {
                return Err(NnError::DimensionMismatch {
                    context: "basis rows vs encoder output",
                    expected: encoder.output_dim(),
                    got: b.d(),
                });
            }
        }
        let feature_dim = basis.as_ref().map_or(encoder.output_dim(), ProjectionBasis::k);
        if heads.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for head in heads.values() {
            if head.input_dim() != feature_dim {
                return Err(NnError::DimensionMismatch {
                    context: "head input vs bottleneck",
                    expected: feature_dim,
                    got: head.input_dim(),
                });
            }
        }
        let trainable_basis = trainable_basis && basis.is_some();
        Ok(Self {
            encoder,
            basis,
            trainable_basis,
            heads,
            version: 0,
        })
    }

    pub fn encoder(&self) -> &MlpNetwork {
        &self.encoder
    }

    pub fn basis(&self) -> Option<&ProjectionBasis> {
        self.basis.as_ref()
    }

    pub fn trainable_basis(&self) -> bool {
        self.trainable_basis
    }

    pub fn head(&self, name: &str) -> Result<&MlpNetwork, NnError> {
        self.heads
            .get(name)
            .ok_or_else(|| NnError::UnknownHead(name.to_string()))
    }

    pub fn heads(&self) -> &BTreeMap<String, MlpNetwork> {
        &self.heads
    }

    pub fn has_head(&self, name: &str) -> bool {
        self.heads.contains_key(name)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Width of the representation the heads consume (`k`, or `D` without a
    /// basis).
    pub fn feature_dim(&self) -> usize {
        self.basis
            .as_ref()
            .map_or(self.encoder.output_dim(), ProjectionBasis::k)
    }

    /// Bumped on every parameter update; caches from older versions are
    /// rejected by [`backward`](Self::backward).
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    fn project(&self, z: &Matrix) -> Matrix {
        match &self.basis {
            Some(b) => b.project_batch(z).expect("encoder width matches basis"),
            None => z.clone(),
        }
    }

    /// Batched forward through the encoder, projection and the listed heads.
    pub fn forward_batch(
        &self,
        obs: &Matrix,
        head_names: &[&str],
    ) -> Result<(Vec<Matrix>, NetworkCache), NnError> {
        let mut heads = Vec::with_capacity(head_names.len());
        for name in head_names {
            heads.push((name.to_string(), self.head(name)?));
        }
        let (z, enc_cache) = self.encoder.forward(obs)?;
        let h = self.project(&z);
        let mut outputs = Vec::with_capacity(heads.len());
        let mut head_caches = Vec::with_capacity(heads.len());
        for (name, head) in heads {
            let (out, cache) = head.forward(&h)?;
            outputs.push(out);
            head_caches.push((name, cache));
        }
        Ok((
            outputs,
            NetworkCache {
                version: self.version,
                encoder: enc_cache,
                heads: head_caches,
                z,
                h,
            },
        ))
    }

    /// Single-observation forward through one head.
    pub fn forward(&self, obs: &[f64], head: &str) -> Result<(Vec<f64>, NetworkCache), NnError> {
        let x = Matrix::new(1, obs.len(), obs.to_vec())
            .map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
        let (mut outs, cache) = self.forward_batch(&x, &[head])?;
        Ok((outs.pop().expect("one head").into_vec(), cache))
    }

    /// Cache-free forward through one head.
    pub fn infer(&self, obs: &Matrix, head: &str) -> Result<Matrix, NnError> {
        let head = self.head(head)?;
        let z = self.encoder.infer(obs)?;
        head.infer(&self.project(&z))
    }

    /// Encoder output `z` and head input `h` for a batch.
    pub fn features(&self, obs: &Matrix) -> Result<(Matrix, Matrix), NnError> {
        let z = self.encoder.infer(obs)?;
        let h = self.project(&z);
        Ok((z, h))
    }

    /// Reverse pass. `head_grads[i]` is the loss gradient for the `i`-th head
    /// output of the cached forward pass.
    pub fn backward(
        &self,
        cache: &NetworkCache,
        head_grads: &[Matrix],
    ) -> Result<NetworkGradients, NnError> {
        if cache.version != self.version {
            return Err(NnError::StaleCache {
                cache: cache.version,
                network: self.version,
            });
        }
        if head_grads.len() != cache.heads.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} head gradients for {} cached heads",
                head_grads.len(),
                cache.heads.len()
            )));
        }
        let batch = cache.h.rows();
        let mut feature = Matrix::zeros(batch, self.feature_dim());
        let mut head_out: BTreeMap<String, GradientBundle> = BTreeMap::new();
        for ((name, hc), grad) in cache.heads.iter().zip(head_grads) {
            let head = self.head(name)?;
            let g = head.backward(hc, grad)?;
            feature
                .add_scaled(1.0, &g.input)
                .map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
            match head_out.get_mut(name) {
                Some(existing) => accumulate(existing, &g),
                None => {
                    head_out.insert(name.clone(), g);
                }
            }
        }
        for (name, head) in &self.heads {
            head_out
                .entry(name.clone())
                .or_insert_with(|| GradientBundle::zeros_like(head, batch));
        }

        let (grad_z, grad_basis) = match &self.basis {
            Some(b) => {
                let gz = feature
                    .matmul_transpose(b.matrix())
                    .expect("feature gradient is N x k");
                let gb = self
                    .trainable_basis
                    .then(|| cache.z.transpose_matmul(&feature).expect("z is N x D"));
                (gz, gb)
            }
            None => (feature.clone(), None),
        };
        let encoder = self.encoder.backward(&cache.encoder, &grad_z)?;
        Ok(NetworkGradients {
            encoder,
            basis: grad_basis,
            heads: head_out,
            feature,
        })
    }

    /// Mutable flat parameter views, ordered encoder, basis (only if
    /// trainable), heads by name.
    pub(crate) fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.parameter_slices_mut();
        if self.trainable_basis {
            if let Some(b) = &mut self.basis {
                out.push(b.matrix_mut().as_mut_slice());
            }
        }
        for head in self.heads.values_mut() {
            out.extend(head.parameter_slices_mut());
        }
        out
    }

    pub(crate) fn parameter_slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.parameter_slices();
        if self.trainable_basis {
            if let Some(b) = &self.basis {
                out.push(b.matrix().as_slice());
            }
        }
        for head in self.heads.values() {
            out.extend(head.parameter_slices());
        }
        out
    }

    /// Polyak update `θ ← τ·θ_online + (1 − τ)·θ`. `τ = 1` is an exact copy.
    pub fn soft_update_from(&mut self, online: &BottleneckedNetwork, tau: f64) -> Result<(), NnError> {
        if tau == 1.0 {
            self.copy_from(online);
            return Ok(());
        }
        let src = online.parameter_slices();
        let mut dst = self.parameter_slices_mut();
        if src.len() != dst.len() || src.iter().zip(&dst).any(|(a, b)| a.len() != b.len()) {
            return Err(NnError::ShapeMismatch("soft update between different architectures".into()));
        }
        for (d, s) in dst.iter_mut().zip(&src) {
            for (x, y) in d.iter_mut().zip(s.iter()) {
                *x = tau * y + (1.0 - tau) * *x;
            }
        }
        drop(dst);
        self.bump_version();
        Ok(())
    }

    /// Trainable parameters concatenated in the same order as
    /// [`NetworkGradients::to_flat`].
    pub fn parameters_flat(&self) -> Vec<f64> {
        self.parameter_slices().concat()
    }

    /// Overwrites every trainable parameter from a flat vector.
    pub fn set_parameters_flat(&mut self, values: &[f64]) -> Result<(), NnError> {
        let expected = self.parameter_count();
        if values.len() != expected {
            return Err(NnError::DimensionMismatch {
                context: "flat parameter vector",
                expected,
                got: values.len(),
            });
        }
        let mut rest = values;
        for s in self.parameter_slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
        self.bump_version();
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.num_parameters()
            + self
                .basis
                .as_ref()
                .filter(|_| self.trainable_basis)
                .map_or(0, |b| b.d() * b.k())
            + self.heads.values().map(MlpNetwork::num_parameters).sum::<usize>()
    }

    /// Copies all parameters from `other` (hard target update).
    pub fn copy_from(&mut self, other: &BottleneckedNetwork) {
        *self = other.clone();
    }

    pub fn is_finite(&self) -> bool {
        let finite = |net: &MlpNetwork| {
            net.parameter_slices()
                .iter()
                .all(|s| s.iter().all(|v| v.is_finite()))
        };
        finite(&self.encoder)
            && self.heads.values().all(finite)
            && self.basis.as_ref().is_none_or(|b| b.matrix().is_finite())
    }
}

fn accumulate(acc: &mut GradientBundle, g: &GradientBundle) {
    for (a, b) in acc.slices_mut().into_iter().zip(g.slices()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}
