//! Small residual encoder with two feature taps.
//!
//! A 3x3 stem (conv, batch norm, ReLU) is followed by stages of basic residual
//! blocks. The first block of each stage applies the stage stride; when the
//! stride or width changes the skip path is a strided 1x1 projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu_backward, relu_forward, BatchNorm,
    BatchNormCache, ConvParams, ConvSpec, Mode,
};
use crate::params::impl_parameters;
use crate::rng::SplitMix64;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub widths: Vec<usize>,
    pub blocks: usize,
    pub strides: Vec<usize>,
    /// Stage whose output is the intermediate tap.
    pub tap_im: usize,
    /// Stage whose output is the low-resolution tap. Later stages are not built.
    pub tap_il: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 16,
            widths: vec![16, 32, 64, 128],
            blocks: 2,
            strides: vec![2, 2, 2, 2],
            tap_im: 1,
            tap_il: 3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(Error::InvalidConfig(format!(
                "backbone needs one stride per stage ({} widths, {} strides)",
                self.widths.len(),
                self.strides.len()
            )));
        }
        if self.in_channels == 0 || self.stem_channels == 0 || self.blocks == 0 {
            return Err(Error::InvalidConfig("backbone channel and block counts must be at least 1".into()));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) {
            return Err(Error::InvalidConfig("backbone widths and strides must be at least 1".into()));
        }
        if self.tap_im >= self.tap_il || self.tap_il >= self.widths.len() {
            return Err(Error::InvalidConfig(format!(
                "backbone taps must satisfy tap_im < tap_il < {} (got {} and {})",
                self.widths.len(),
                self.tap_im,
                self.tap_il
            )));
        }
        Ok(())
    }

    /// Downsampling factor at the output of `stage`.
    pub fn stride_at(&self, stage: usize) -> usize {
        self.strides[..=stage].iter().product()
    }

    pub fn im_channels(&self) -> usize {
        self.widths[self.tap_im]
    }

    pub fn il_channels(&self) -> usize {
        self.widths[self.tap_il]
    }

    fn stem_spec(&self) -> ConvSpec {
        ConvSpec::new(self.in_channels, self.stem_channels, 3).with_padding(1)
    }

    fn block_geometry(&self, stage: usize, block: usize) -> (usize, usize, usize) {
        let out = self.widths[stage];
        let input = match (stage, block) {
            (0, 0) => self.stem_channels,
            (s, 0) => self.widths[s - 1],
            _ => out,
        };
        let stride = if block == 0 { self.strides[stage] } else { 1 };
        (input, out, stride)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub conv1: ConvParams,
    pub bn1: BatchNorm,
    pub conv2: ConvParams,
    pub bn2: BatchNorm,
    pub proj: Option<ConvParams>,
}

impl_parameters!(BlockParams { conv1, bn1, conv2, bn2, proj });

#[derive(Clone, Copy, Debug)]
struct BlockSpecs {
    conv1: ConvSpec,
    conv2: ConvSpec,
    proj: Option<ConvSpec>,
}

impl BlockSpecs {
    fn new(input: usize, out: usize, stride: usize) -> Self {
        Self {
            conv1: ConvSpec::new(input, out, 3).with_stride(stride).with_padding(1),
            conv2: ConvSpec::new(out, out, 3).with_padding(1),
            proj: (stride != 1 || input != out).then(|| ConvSpec::pointwise(input, out).with_stride(stride)),
        }
    }
}

impl BlockParams {
    fn init(specs: &BlockSpecs, rng: &mut SplitMix64) -> Self {
        Self {
            conv1: ConvParams::kaiming(&specs.conv1, rng),
            bn1: BatchNorm::new(specs.conv1.out_channels),
            conv2: ConvParams::kaiming(&specs.conv2, rng),
            bn2: BatchNorm::new(specs.conv2.out_channels),
            proj: specs.proj.map(|s| ConvParams::kaiming(&s, rng)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub stem: ConvParams,
    pub stem_bn: BatchNorm,
    pub stages: Vec<Vec<BlockParams>>,
}

impl_parameters!(BackboneParams { stem, stem_bn, stages });

impl BackboneParams {
    pub fn init(cfg: &BackboneConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let stem = ConvParams::kaiming(&cfg.stem_spec(), rng);
        let stages = (0..=cfg.tap_il)
            .map(|s| {
                (0..cfg.blocks)
                    .map(|b| {
                        let (i, o, st) = cfg.block_geometry(s, b);
                        BlockParams::init(&BlockSpecs::new(i, o, st), rng)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            stem,
            stem_bn: BatchNorm::new(cfg.stem_channels),
            stages,
        })
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    specs: BlockSpecs,
    x: Tensor4,
    bn1: BatchNormCache,
    bn1_out: Tensor4,
    relu1: Tensor4,
    bn2: BatchNormCache,
    sum: Tensor4,
}

#[derive(Clone, Debug)]
pub struct BackboneCache {
    cfg: BackboneConfig,
    image: Tensor4,
    stem_bn: BatchNormCache,
    stem_bn_out: Tensor4,
    blocks: Vec<Vec<BlockCache>>,
}

fn block_forward(x: &Tensor4, specs: BlockSpecs, p: &mut BlockParams, mode: Mode) -> Result<(Tensor4, BlockCache)> {
    let c1 = conv2d_forward(x, &specs.conv1, &p.conv1)?;
    let (bn1_out, bn1) = batchnorm_forward(&c1, &mut p.bn1, mode)?;
    let relu1 = relu_forward(&bn1_out);
    let c2 = conv2d_forward(&relu1, &specs.conv2, &p.conv2)?;
    let (bn2_out, bn2) = batchnorm_forward(&c2, &mut p.bn2, mode)?;
    let skip = match (&specs.proj, &p.proj) {
        (Some(spec), Some(pp)) => conv2d_forward(x, spec, pp)?,
        (None, None) => x.clone(),
        _ => return Err(Error::InvalidArgument("projection presence does not match block geometry".into())),
    };
    let sum = bn2_out.add(&skip)?;
    let out = relu_forward(&sum);
    Ok((
        out,
        BlockCache {
            specs,
            x: x.clone(),
            bn1,
            bn1_out,
            relu1,
            bn2,
            sum,
        },
    ))
}

fn block_backward(c: &BlockCache, p: &BlockParams, grad_out: &Tensor4) -> Result<(BlockParams, Tensor4)> {
    let g_sum = relu_backward(&c.sum, grad_out)?;
    let gbn2 = batchnorm_backward(&c.bn2, &p.bn2, &g_sum)?;
    let gc2 = conv2d_backward(&c.relu1, &c.specs.conv2, &p.conv2, &gbn2.input)?;
    let g_bn1_out = relu_backward(&c.bn1_out, &gc2.input)?;
    let gbn1 = batchnorm_backward(&c.bn1, &p.bn1, &g_bn1_out)?;
    let gc1 = conv2d_backward(&c.x, &c.specs.conv1, &p.conv1, &gbn1.input)?;
    let mut grad_x = gc1.input;
    let proj = match (&c.specs.proj, &p.proj) {
        (Some(spec), Some(pp)) => {
            let g = conv2d_backward(&c.x, spec, pp, &g_sum)?;
            grad_x.add_assign(&g.input);
            Some(g.params)
        }
        _ => {
            grad_x.add_assign(&g_sum);
            None
        }
    };
    let grads = BlockParams {
        conv1: gc1.params,
        bn1: BatchNorm { gamma: gbn1.gamma, beta: gbn1.beta, ..p.bn1.clone() },
        conv2: gc2.params,
        bn2: BatchNorm { gamma: gbn2.gamma, beta: gbn2.beta, ..p.bn2.clone() },
        proj,
    };
    Ok((grads, grad_x))
}

/// Returns `(I_m, I_l, cache)`.
pub fn backbone_forward(
    image: &Tensor4,
    cfg: &BackboneConfig,
    params: &mut BackboneParams,
    mode: Mode,
) -> Result<(Tensor4, Tensor4, BackboneCache)> {
    cfg.validate()?;
    let s = image.shape();
    let total = cfg.stride_at(cfg.tap_il);
    if !s.h.is_multiple_of(total) || !s.w.is_multiple_of(total) {
        return Err(Error::InvalidArgument(format!(
            "backbone: input {}x{} not divisible by total stride {total}",
            s.h, s.w
        )));
    }
    if params.stages.len() != cfg.tap_il + 1 {
        return Err(Error::shape("backbone", "stages", cfg.tap_il + 1, params.stages.len()));
    }
    let stem_out = conv2d_forward(image, &cfg.stem_spec(), &params.stem).map_err(|e| e.in_stage("backbone/stem"))?;
    let (stem_bn_out, stem_bn) = batchnorm_forward(&stem_out, &mut params.stem_bn, mode)?;
    let mut x = relu_forward(&stem_bn_out);
    let mut blocks = Vec::new();
    let mut im = None;
    for (si, stage) in params.stages.iter_mut().enumerate() {
        if stage.len() != cfg.blocks {
            return Err(Error::shape("backbone", "blocks", cfg.blocks, stage.len()));
        }
        let mut caches = Vec::new();
        for (bi, block) in stage.iter_mut().enumerate() {
            let (i, o, st) = cfg.block_geometry(si, bi);
            let (y, c) = block_forward(&x, BlockSpecs::new(i, o, st), block, mode)
                .map_err(|e| e.in_stage(&format!("backbone/stage{si}/block{bi}")))?;
            caches.push(c);
            x = y;
        }
        blocks.push(caches);
        if si == cfg.tap_im {
            im = Some(x.clone());
        }
    }
    let cache = BackboneCache {
        cfg: cfg.clone(),
        image: image.clone(),
        stem_bn,
        stem_bn_out,
        blocks,
    };
    Ok((im.expect("tap_im precedes tap_il"), x, cache))
}

/// Gradients from both taps are summed where the paths merge.
pub fn backbone_backward(
    cache: &BackboneCache,
    params: &BackboneParams,
    grad_im: &Tensor4,
    grad_il: &Tensor4,
) -> Result<(BackboneParams, Tensor4)> {
    let cfg = &cache.cfg;
    let mut g = grad_il.clone();
    let mut stage_grads = vec![Vec::new(); cache.blocks.len()];
    for si in (0..cache.blocks.len()).rev() {
        if si == cfg.tap_im {
            g.expect_shape(grad_im.shape(), "backbone_backward")?;
            g.add_assign(grad_im);
        }
        let mut grads = Vec::new();
        for bi in (0..cache.blocks[si].len()).rev() {
            let (pg, gx) = block_backward(&cache.blocks[si][bi], &params.stages[si][bi], &g)?;
            grads.push(pg);
            g = gx;
        }
        grads.reverse();
        stage_grads[si] = grads;
    }
    let g = relu_backward(&cache.stem_bn_out, &g)?;
    let gbn = batchnorm_backward(&cache.stem_bn, &params.stem_bn, &g)?;
    let gs = conv2d_backward(&cache.image, &cfg.stem_spec(), &params.stem, &gbn.input)?;
    let grads = BackboneParams {
        stem: gs.params,
        stem_bn: BatchNorm { gamma: gbn.gamma, beta: gbn.beta, ..params.stem_bn.clone() },
        stages: stage_grads,
    };
    Ok((grads, gs.input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{flatten, named};
    use crate::tensor::Shape4;
    use crate::testutil::{check_coords, check_params, random};

    fn small() -> BackboneConfig {
        BackboneConfig {
            in_channels: 3,
            stem_channels: 3,
            widths: vec![3, 4],
            blocks: 1,
            strides: vec![2, 2],
            tap_im: 0,
            tap_il: 1,
        }
    }

    #[test]
    fn default_ladder_shapes() {
        let cfg = BackboneConfig::default();
        let mut p = BackboneParams::init(&cfg, &mut SplitMix64::new(1)).unwrap();
        let x = random(Shape4::new(1, 3, 64, 64), 2);
        let (im, il, _) = backbone_forward(&x, &cfg, &mut p, Mode::Train).unwrap();
        assert_eq!(im.shape(), Shape4::new(1, 32, 16, 16));
        assert_eq!(il.shape(), Shape4::new(1, 128, 4, 4));
    }

    #[test]
    fn resolution_sweep() {
        let cfg = small();
        let mut p = BackboneParams::init(&cfg, &mut SplitMix64::new(1)).unwrap();
        for (h, w) in [(4, 4), (8, 12), (16, 4), (20, 24)] {
            let x = random(Shape4::new(1, 3, h, w), 3);
            let (im, il, _) = backbone_forward(&x, &cfg, &mut p, Mode::Eval).unwrap();
            assert_eq!(im.shape().spatial(), (h / 2, w / 2));
            assert_eq!(il.shape().spatial(), (h / 4, w / 4));
        }
        assert!(backbone_forward(&random(Shape4::new(1, 3, 6, 8), 1), &cfg, &mut p, Mode::Eval).is_err());
    }

    #[test]
    fn config_checks() {
        let mut cfg = small();
        cfg.tap_im = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.strides.push(2);
        assert!(cfg.validate().is_err());
        assert_eq!(BackboneConfig::default().stride_at(1), 4);
    }

    #[test]
    fn zeroed_residual_reduces_to_projection() {
        let cfg = BackboneConfig { blocks: 2, ..small() };
        let mut p = BackboneParams::init(&cfg, &mut SplitMix64::new(4)).unwrap();
        for stage in &mut p.stages {
            for b in stage.iter_mut() {
                b.conv2.weight = Tensor4::zeros(b.conv2.weight.shape());
            }
        }
        let x = random(Shape4::new(2, 3, 8, 8), 5);
        let (_, _, cache) = backbone_forward(&x, &cfg, &mut p.clone(), Mode::Train).unwrap();
        let mut stage_in = relu_forward(&cache.stem_bn_out);
        for (si, stage) in cache.blocks.iter().enumerate() {
            let first = &stage[0];
            let proj = conv2d_forward(&stage_in, &first.specs.proj.unwrap(), p.stages[si][0].proj.as_ref().unwrap()).unwrap();
            let expected = relu_forward(&proj);
            let mut out = stage_in.clone();
            for (bi, c) in stage.iter().enumerate() {
                out = block_forward(&c.x, c.specs, &mut p.stages[si][bi].clone(), Mode::Train).unwrap().0;
            }
            assert!(out.max_abs_diff(&expected).unwrap() < 1e-12, "stage {si}");
            stage_in = out;
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = small();
        let mut p = BackboneParams::init(&cfg, &mut SplitMix64::new(1)).unwrap();
        let x = random(Shape4::new(1, 3, 8, 8), 3);
        let (a, b, _) = backbone_forward(&x, &cfg, &mut p, Mode::Eval).unwrap();
        let (c, d, _) = backbone_forward(&x, &cfg, &mut p, Mode::Eval).unwrap();
        assert_eq!((a, b), (c, d));
    }

    #[test]
    fn dead_low_res_branch_matches_truncated_network() {
        let cfg = small();
        let p = BackboneParams::init(&cfg, &mut SplitMix64::new(6)).unwrap();
        let x = random(Shape4::new(2, 3, 8, 8), 7);
        let (im, il, cache) = backbone_forward(&x, &cfg, &mut p.clone(), Mode::Train).unwrap();
        let gim = random(im.shape(), 8);
        let (full, gx) = backbone_backward(&cache, &p, &gim, &Tensor4::zeros(il.shape())).unwrap();

        // Backward of the network truncated after the first stage, by hand.
        let stem_bn_out = cache.stem_bn_out.clone();
        let c = &cache.blocks[0][0];
        let (pg, gx_block) = block_backward(c, &p.stages[0][0], &gim).unwrap();
        let g = relu_backward(&stem_bn_out, &gx_block).unwrap();
        let gbn = batchnorm_backward(&cache.stem_bn, &p.stem_bn, &g).unwrap();
        let gs = conv2d_backward(&x, &cfg.stem_spec(), &p.stem, &gbn.input).unwrap();
        assert_eq!(gx, gs.input);
        assert_eq!(flatten(&full.stages[0]), flatten(&vec![pg]));
        assert!(flatten(&full.stages[1]).iter().all(|&v| v == 0.0));

        let (zero, gx0) = backbone_backward(&cache, &p, &Tensor4::zeros(im.shape()), &Tensor4::zeros(il.shape())).unwrap();
        assert!(flatten(&zero).iter().all(|&v| v == 0.0));
        assert_eq!(gx0.max_abs(), 0.0);
    }

    fn conv_biases(p: &BackboneParams) -> Vec<String> {
        named(p)
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| n.ends_with("bias") && !n.contains("proj"))
            .collect()
    }

    #[test]
    fn finite_difference_two_taps() {
        let cfg = BackboneConfig { blocks: 2, widths: vec![3, 4], ..small() };
        for trial in 0..3u64 {
            let p = BackboneParams::init(&cfg, &mut SplitMix64::new(30 + trial)).unwrap();
            let x = random(Shape4::new(2, 3, 8, 8), 40 + trial);
            let (im, il, cache) = backbone_forward(&x, &cfg, &mut p.clone(), Mode::Train).unwrap();
            let (wm, wl) = (random(im.shape(), 50 + trial), random(il.shape(), 60 + trial));
            let (g, gx) = backbone_backward(&cache, &p, &wm, &wl).unwrap();
            let loss = |x: &Tensor4, p: &BackboneParams| {
                let (a, b, _) = backbone_forward(x, &cfg, &mut p.clone(), Mode::Train).unwrap();
                a.mul(&wm).unwrap().sum() + b.mul(&wl).unwrap().sum()
            };
            let mut rng = SplitMix64::new(trial);
            let s = x.shape();
            let e = check_coords(|v| loss(&Tensor4::from_vec(s, v.to_vec()).unwrap(), &p), x.data(), gx.data(), 60, &mut rng);
            assert!(e < 1e-4, "input {e}");
            let biases = conv_biases(&p);
            let biases: Vec<&str> = biases.iter().map(String::as_str).collect();
            let e = check_params(&p, &g, |q| loss(&x, q), &biases, 150, &mut rng);
            assert!(e < 1e-4, "params {e}");
        }
    }

    #[test]
    fn finite_difference_unit_tap_weights() {
        let cfg = small();
        let p = BackboneParams::init(&cfg, &mut SplitMix64::new(70)).unwrap();
        let x = random(Shape4::new(2, 3, 8, 8), 71);
        let (im, il, cache) = backbone_forward(&x, &cfg, &mut p.clone(), Mode::Train).unwrap();
        let (_, gx) = backbone_backward(&cache, &p, &Tensor4::full(im.shape(), 1.0), &Tensor4::full(il.shape(), 1.0)).unwrap();
        let loss = |v: &[f64]| {
            let x = Tensor4::from_vec(x.shape(), v.to_vec()).unwrap();
            let (a, b, _) = backbone_forward(&x, &cfg, &mut p.clone(), Mode::Train).unwrap();
            a.sum() + b.sum()
        };
        let e = check_coords(loss, x.data(), gx.data(), 60, &mut SplitMix64::new(1));
        assert!(e < 1e-4, "{e}");
    }
}
