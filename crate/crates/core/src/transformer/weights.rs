use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real};

use super::arch::{Architecture, ModelDims};

/// Standard deviation of the truncated-normal weight initialiser.
pub const INIT_STD: f64 = 0.02;

/// `y = x W + b` with `W` stored `[in x out]` and `b` as a `1 x out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Matrix<T>,
    pub beta: Matrix<T>,
}

impl<T: Real> LayerNormParams<T> {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, width, T::one()),
            beta: Matrix::zeros(1, width),
        }
    }
}

/// One post-LN encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub attn_out: Linear<T>,
    pub attn_norm: LayerNormParams<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ffn_norm: LayerNormParams<T>,
}

impl<T: Real> EncoderBlock<T> {
    fn zeros(h: usize, f: usize) -> Self {
        Self {
            query: Linear::zeros(h, h),
            key: Linear::zeros(h, h),
            value: Linear::zeros(h, h),
            attn_out: Linear::zeros(h, h),
            attn_norm: LayerNormParams::identity(h),
            ffn_in: Linear::zeros(h, f),
            ffn_out: Linear::zeros(f, h),
            ffn_norm: LayerNormParams::identity(h),
        }
    }
}

/// fp32 (or f64) parameters of a homogeneous-encoder classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    arch: Architecture,
    dims: ModelDims,
    pub token_embedding: Matrix<T>,
    pub position_embedding: Matrix<T>,
    pub blocks: Vec<EncoderBlock<T>>,
    pub pooler: Linear<T>,
    pub head: Linear<T>,
}

const BLOCK_PARAM_NAMES: [&str; 16] = [
    "query.weight",
    "query.bias",
    "key.weight",
    "key.bias",
    "value.weight",
    "value.bias",
    "attn_out.weight",
    "attn_out.bias",
    "attn_norm.gamma",
    "attn_norm.beta",
    "ffn_in.weight",
    "ffn_in.bias",
    "ffn_out.weight",
    "ffn_out.bias",
    "ffn_norm.gamma",
    "ffn_norm.beta",
];

impl<T: Real> ModelWeights<T> {
    /// All weights zero, layer-norm gains one.
    pub fn zeros(arch: Architecture, dims: ModelDims) -> Result<Self> {
        arch.validate()?;
        dims.validate()?;
        let (h, f) = (arch.h, arch.f);
        Ok(Self {
            arch,
            dims,
            token_embedding: Matrix::zeros(dims.vocab, h),
            position_embedding: Matrix::zeros(dims.max_len, h),
            blocks: (0..arch.e).map(|_| EncoderBlock::zeros(h, f)).collect(),
            pooler: Linear::zeros(h, h),
            head: Linear::zeros(h, dims.classes),
        })
    }

    /// Truncated-normal (std 0.02, cut at two deviations) weights, zero biases,
    /// unit layer-norm gains. Deterministic in `seed`.
    pub fn instantiate(arch: Architecture, dims: ModelDims, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch, dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = T::of(INIT_STD);
        let mut init = |m: &mut Matrix<T>| {
            for v in m.data_mut() {
                let z: f64 = loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        break z;
                    }
                };
                *v = T::of(z) * std;
            }
        };
        init(&mut model.token_embedding);
        init(&mut model.position_embedding);
        for b in &mut model.blocks {
            for lin in [
                &mut b.query,
                &mut b.key,
                &mut b.value,
                &mut b.attn_out,
                &mut b.ffn_in,
                &mut b.ffn_out,
            ] {
                init(&mut lin.weight);
            }
        }
        init(&mut model.pooler.weight);
        init(&mut model.head.weight);
        Ok(model)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// Parameter tensors in canonical order.
    pub fn params(&self) -> Vec<&Matrix<T>> {
        self.params_with_blocks(self.blocks.len())
    }

    /// Canonical order restricted to the first `blocks` encoder blocks, which
    /// lines up one-to-one with the parameters of a front-sliced submodel.
    fn params_with_blocks(&self, blocks: usize) -> Vec<&Matrix<T>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for b in &self.blocks[..blocks] {
            out.extend([
                &b.query.weight,
                &b.query.bias,
                &b.key.weight,
                &b.key.bias,
                &b.value.weight,
                &b.value.bias,
                &b.attn_out.weight,
                &b.attn_out.bias,
                &b.attn_norm.gamma,
                &b.attn_norm.beta,
                &b.ffn_in.weight,
                &b.ffn_in.bias,
                &b.ffn_out.weight,
                &b.ffn_out.bias,
                &b.ffn_norm.gamma,
                &b.ffn_norm.beta,
            ]);
        }
        out.extend([
            &self.pooler.weight,
            &self.pooler.bias,
            &self.head.weight,
            &self.head.bias,
        ]);
        out
    }

    /// Mutable parameter tensors in the same order as [`params`](Self::params).
    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let n = self.blocks.len();
        self.params_with_blocks_mut(n)
    }

    fn params_with_blocks_mut(&mut self, blocks: usize) -> Vec<&mut Matrix<T>> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for b in &mut self.blocks[..blocks] {
            out.extend([
                &mut b.query.weight,
                &mut b.query.bias,
                &mut b.key.weight,
                &mut b.key.bias,
                &mut b.value.weight,
                &mut b.value.bias,
                &mut b.attn_out.weight,
                &mut b.attn_out.bias,
                &mut b.attn_norm.gamma,
                &mut b.attn_norm.beta,
                &mut b.ffn_in.weight,
                &mut b.ffn_in.bias,
                &mut b.ffn_out.weight,
                &mut b.ffn_out.bias,
                &mut b.ffn_norm.gamma,
                &mut b.ffn_norm.beta,
            ]);
        }
        out.extend([
            &mut self.pooler.weight,
            &mut self.pooler.bias,
            &mut self.head.weight,
            &mut self.head.bias,
        ]);
        out
    }

    /// Names matching [`params`](Self::params).
    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec![
            "token_embedding".to_string(),
            "position_embedding".to_string(),
        ];
        for i in 0..self.blocks.len() {
            out.extend(BLOCK_PARAM_NAMES.iter().map(|n| format!("blocks.{i}.{n}")));
        }
        out.extend(
            ["pooler.weight", "pooler.bias", "head.weight", "head.bias"]
                .iter()
                .map(|s| s.to_string()),
        );
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        let mut out = ModelWeights::<U>::zeros(self.arch, self.dims).expect("valid source model");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }

    /// Front-sliced copy: the first `arch.e` blocks and the leading rows and
    /// columns of every tensor. The source is not modified.
    pub fn extract_submodel(&self, arch: Architecture) -> Result<Self> {
        arch.validate()?;
        if !arch.fits_within(&self.arch) {
            return Err(Error::Extraction(format!(
                "{arch} does not fit inside supermodel {}",
                self.arch
            )));
        }
        let mut sub = Self::zeros(arch, self.dims)?;
        for (dst, src) in sub
            .params_mut()
            .into_iter()
            .zip(self.params_with_blocks(arch.e))
        {
            *dst = src.top_left(dst.rows(), dst.cols())?;
        }
        Ok(sub)
    }

    /// Adds `sub` into the leading slices of `self`, the transpose of
    /// [`extract_submodel`](Self::extract_submodel). Used to bring submodel
    /// gradients back into the supermodel frame.
    pub fn add_front_slices(&mut self, sub: &Self) -> Result<()> {
        if !sub.arch.fits_within(&self.arch) || sub.dims != self.dims {
            return Err(Error::Extraction(format!(
                "{} does not fit inside {}",
                sub.arch, self.arch
            )));
        }
        let e = sub.arch.e;
        for (dst, src) in self.params_with_blocks_mut(e).into_iter().zip(sub.params()) {
            dst.add_top_left(src)?;
        }
        Ok(())
    }

    /// Rebuilds a model from tensors in canonical order.
    pub fn from_params(
        arch: Architecture,
        dims: ModelDims,
        tensors: Vec<Matrix<T>>,
    ) -> Result<Self> {
        let mut model = Self::zeros(arch, dims)?;
        let slots = model.params_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "{arch} needs {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "tensor {:?} where {:?} expected",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims::default()
    }

    #[test]
    fn instantiate_is_deterministic_in_seed() {
        let arch = Architecture::new(2, 24, 32);
        let a = ModelWeights::<f32>::instantiate(arch, dims(), 7).unwrap();
        let b = ModelWeights::<f32>::instantiate(arch, dims(), 7).unwrap();
        let c = ModelWeights::<f32>::instantiate(arch, dims(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let shapes =
            |m: &ModelWeights<f32>| m.params().iter().map(|p| p.shape()).collect::<Vec<_>>();
        assert_eq!(shapes(&a), shapes(&c));
    }

    #[test]
    fn shapes_follow_architecture() {
        let arch = Architecture::new(1, 120, 128);
        let d = ModelDims::new(3);
        let m = ModelWeights::<f32>::instantiate(arch, d, 0).unwrap();
        assert_eq!(m.token_embedding.shape(), (64, 120));
        assert_eq!(m.position_embedding.shape(), (128, 120));
        assert_eq!(m.blocks.len(), 1);
        let b = &m.blocks[0];
        for lin in [&b.query, &b.key, &b.value, &b.attn_out] {
            assert_eq!(lin.weight.shape(), (120, 120));
            assert_eq!(lin.bias.shape(), (1, 120));
        }
        assert_eq!(b.ffn_in.weight.shape(), (120, 128));
        assert_eq!(b.ffn_in.bias.shape(), (1, 128));
        assert_eq!(b.ffn_out.weight.shape(), (128, 120));
        assert_eq!(b.attn_norm.gamma.shape(), (1, 120));
        assert_eq!(m.pooler.weight.shape(), (120, 120));
        assert_eq!(m.head.weight.shape(), (120, 3));
        assert_eq!(m.param_count(), arch.param_count(&d));
        assert_eq!(m.params().len(), m.param_names().len());
    }

    #[test]
    fn init_values_respect_truncation_and_zero_biases() {
        let m = ModelWeights::<f32>::instantiate(Architecture::new(1, 24, 32), dims(), 1).unwrap();
        assert!(m.token_embedding.max_abs() <= 0.04 + 1e-7);
        assert_eq!(m.blocks[0].query.bias.max_abs(), 0.0);
        assert!(m.blocks[0].attn_norm.gamma.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn full_extraction_is_identity_and_projection() {
        let arch = Architecture::new(3, 48, 64);
        let sup = ModelWeights::<f32>::instantiate(arch, dims(), 3).unwrap();
        assert_eq!(sup.extract_submodel(arch).unwrap(), sup);

        let small = Architecture::new(2, 24, 40);
        let once = sup.extract_submodel(small).unwrap();
        assert_eq!(once.extract_submodel(small).unwrap(), once);
    }

    #[test]
    fn prefix_extraction_takes_first_block() {
        let sup_arch = Architecture::new(3, 36, 50);
        let sup = ModelWeights::<f32>::instantiate(sup_arch, dims(), 5).unwrap();
        let sub = sup.extract_submodel(Architecture::new(1, 36, 50)).unwrap();
        assert_eq!(sub.blocks[0], sup.blocks[0]);
        assert_eq!(sub.token_embedding, sup.token_embedding);
        assert_eq!(sub.pooler, sup.pooler);
        assert_eq!(sub.head, sup.head);
    }

    #[test]
    fn extraction_rejects_larger_architectures() {
        let sup =
            ModelWeights::<f32>::instantiate(Architecture::new(2, 24, 32), dims(), 5).unwrap();
        for arch in [
            Architecture::new(3, 24, 32),
            Architecture::new(2, 36, 32),
            Architecture::new(2, 24, 33),
        ] {
            assert!(matches!(
                sup.extract_submodel(arch),
                Err(Error::Extraction(_))
            ));
        }
    }

    #[test]
    fn add_front_slices_places_submodel_in_leading_block() {
        let sup_arch = Architecture::new(2, 36, 40);
        let mut acc = ModelWeights::<f64>::zeros(sup_arch, dims()).unwrap();
        acc.params_mut().into_iter().for_each(|p| p.fill(0.0));
        let sub =
            ModelWeights::<f64>::instantiate(Architecture::new(1, 24, 32), dims(), 2).unwrap();
        acc.add_front_slices(&sub).unwrap();
        assert_eq!(
            acc.extract_submodel(sub.arch()).unwrap().params()[2],
            sub.params()[2]
        );
        assert_eq!(acc.blocks[1].query.weight.max_abs(), 0.0);
        assert_eq!(acc.blocks[0].query.weight.get(30, 30), 0.0);
    }
}
