//! Dense upsampling convolution.
//!
//! A trainable stand-in for guided joint upsampling. Guidance maps are computed
//! from the full-resolution image, brought to the intermediate resolution by a
//! strided convolution, and combined with the (resized) low-resolution
//! features through pointwise convolutions that play the role of the averaged
//! affine coefficients. The result is concatenated with the intermediate
//! features.
//!
//! ```text
//! G    = g2(relu(bn(g1(image))))               full resolution
//! Gs   = stride_conv(G)                        intermediate resolution
//! L    = resize(lowres_conv(lowres), Gs)       intermediate resolution
//! a, b = coeff_a([Gs, L]), coeff_b([Gs, L])
//! U    = a * Gs + b
//! out  = [U, intermediate]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, bilinear_resize_backward, bilinear_resize_forward, conv2d_backward,
    conv2d_forward, relu_backward, relu_forward, BatchNorm, BatchNormCache, ConvParams, ConvSpec, Mode,
};
use crate::params::impl_parameters;
use crate::rng::SplitMix64;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DucConfig {
    /// Channels of the full-resolution image.
    pub image_channels: usize,
    /// Channels of the low-resolution feature map.
    pub lowres_channels: usize,
    /// Width of the guidance maps produced by the pointwise block.
    pub guidance_channels: usize,
    pub guide_stride: usize,
    pub lowres_dilation: usize,
    /// Channels of the upsampled branch before concatenation.
    pub out_channels: usize,
}

impl DucConfig {
    pub fn new(image_channels: usize, lowres_channels: usize, out_channels: usize) -> Self {
        Self {
            image_channels,
            lowres_channels,
            guidance_channels: 16,
            guide_stride: 4,
            lowres_dilation: 2,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("image_channels", self.image_channels),
            ("lowres_channels", self.lowres_channels),
            ("guidance_channels", self.guidance_channels),
            ("guide_stride", self.guide_stride),
            ("lowres_dilation", self.lowres_dilation),
            ("out_channels", self.out_channels),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("duc {name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn g1_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.image_channels, self.guidance_channels)
    }

    pub fn g2_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.guidance_channels, self.guidance_channels)
    }

    pub fn stride_spec(&self) -> ConvSpec {
        ConvSpec::new(self.guidance_channels, self.out_channels, 3)
            .with_stride(self.guide_stride)
            .with_padding(1)
    }

    pub fn lowres_spec(&self) -> ConvSpec {
        ConvSpec::new(self.lowres_channels, self.out_channels, 3)
            .with_dilation(self.lowres_dilation)
            .same_padding()
    }

    pub fn coeff_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(2 * self.out_channels, self.out_channels)
    }

    pub fn param_count(&self) -> usize {
        self.g1_spec().param_count()
            + 2 * self.guidance_channels
            + self.g2_spec().param_count()
            + self.stride_spec().param_count()
            + self.lowres_spec().param_count()
            + 2 * self.coeff_spec().param_count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DucParams {
    pub g1: ConvParams,
    pub bn: BatchNorm,
    pub g2: ConvParams,
    pub stride_conv: ConvParams,
    pub lowres_conv: ConvParams,
    pub coeff_a: ConvParams,
    pub coeff_b: ConvParams,
}

impl_parameters!(DucParams {
    g1,
    bn,
    g2,
    stride_conv,
    lowres_conv,
    coeff_a,
    coeff_b
});

impl DucParams {
    pub fn init(cfg: &DucConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            g1: ConvParams::kaiming(&cfg.g1_spec(), rng),
            bn: BatchNorm::new(cfg.guidance_channels),
            g2: ConvParams::kaiming(&cfg.g2_spec(), rng),
            stride_conv: ConvParams::kaiming(&cfg.stride_spec(), rng),
            lowres_conv: ConvParams::kaiming(&cfg.lowres_spec(), rng),
            coeff_a: ConvParams::kaiming(&cfg.coeff_spec(), rng),
            coeff_b: ConvParams::kaiming(&cfg.coeff_spec(), rng),
        })
    }
}

#[derive(Clone, Debug)]
pub struct DucCache {
    cfg: DucConfig,
    image: Tensor4,
    lowres: Tensor4,
    bn: BatchNormCache,
    bn_out: Tensor4,
    relu_out: Tensor4,
    guidance: Tensor4,
    guidance_small: Tensor4,
    lowres_feat_shape: Shape4,
    coeff_in: Tensor4,
    a: Tensor4,
    intermediate_channels: usize,
}

impl DucCache {
    /// Output of the pointwise guidance block at full resolution.
    pub fn guidance(&self) -> &Tensor4 {
        &self.guidance
    }

    /// Averaged-coefficient stand-in `a` at intermediate resolution.
    pub fn coefficient_a(&self) -> &Tensor4 {
        &self.a
    }
}

#[derive(Clone, Debug)]
pub struct DucGrads {
    pub params: DucParams,
    pub image: Tensor4,
    pub lowres: Tensor4,
    pub intermediate: Tensor4,
}

fn check_inputs(image: Shape4, lowres: Shape4, inter: Shape4, cfg: &DucConfig) -> Result<()> {
    let s = cfg.guide_stride;
    if !image.h.is_multiple_of(s) || !image.w.is_multiple_of(s) {
        return Err(Error::InvalidArgument(format!(
            "duc/guidance: image {}x{} not divisible by guide stride {s}",
            image.h, image.w
        )));
    }
    for (stage, t) in [("lowres", lowres), ("intermediate", inter)] {
        if t.n != image.n {
            return Err(Error::shape(format!("duc/{stage}"), "batch", image.n, t.n));
        }
    }
    if inter.h != image.h / s {
        return Err(Error::shape("duc/intermediate", "height", image.h / s, inter.h));
    }
    if inter.w != image.w / s {
        return Err(Error::shape("duc/intermediate", "width", image.w / s, inter.w));
    }
    if lowres.h >= inter.h || lowres.w >= inter.w {
        return Err(Error::InvalidArgument(format!(
            "duc/lowres: {}x{} must be strictly smaller than intermediate {}x{}",
            lowres.h, lowres.w, inter.h, inter.w
        )));
    }
    if image.c != cfg.image_channels {
        return Err(Error::shape("duc/guidance", "channels", cfg.image_channels, image.c));
    }
    if lowres.c != cfg.lowres_channels {
        return Err(Error::shape("duc/lowres", "channels", cfg.lowres_channels, lowres.c));
    }
    Ok(())
}

pub fn duc_forward(
    image: &Tensor4,
    lowres: &Tensor4,
    intermediate: &Tensor4,
    cfg: &DucConfig,
    params: &mut DucParams,
    mode: Mode,
) -> Result<(Tensor4, DucCache)> {
    cfg.validate()?;
    check_inputs(image.shape(), lowres.shape(), intermediate.shape(), cfg)?;
    let stage = |name: &'static str| move |e: Error| e.in_stage(&format!("duc/{name}"));

    let g1_out = conv2d_forward(image, &cfg.g1_spec(), &params.g1).map_err(stage("g1"))?;
    let (bn_out, bn_cache) = batchnorm_forward(&g1_out, &mut params.bn, mode).map_err(stage("bn"))?;
    let relu_out = relu_forward(&bn_out);
    let guidance = conv2d_forward(&relu_out, &cfg.g2_spec(), &params.g2).map_err(stage("g2"))?;
    let guidance_small = conv2d_forward(&guidance, &cfg.stride_spec(), &params.stride_conv).map_err(stage("stride_conv"))?;

    let lowres_feat = conv2d_forward(lowres, &cfg.lowres_spec(), &params.lowres_conv).map_err(stage("lowres_conv"))?;
    let (th, tw) = guidance_small.shape().spatial();
    let lowres_up = bilinear_resize_forward(&lowres_feat, th, tw).map_err(stage("resize"))?;

    let coeff_in = guidance_small.concat_channels(&lowres_up).map_err(stage("coefficients"))?;
    let a = conv2d_forward(&coeff_in, &cfg.coeff_spec(), &params.coeff_a).map_err(stage("coeff_a"))?;
    let b = conv2d_forward(&coeff_in, &cfg.coeff_spec(), &params.coeff_b).map_err(stage("coeff_b"))?;
    let upsampled = a.mul(&guidance_small)?.add(&b)?;
    let out = upsampled.concat_channels(intermediate).map_err(stage("concat"))?;

    let cache = DucCache {
        cfg: cfg.clone(),
        image: image.clone(),
        lowres: lowres.clone(),
        bn: bn_cache,
        bn_out,
        relu_out,
        guidance,
        guidance_small,
        lowres_feat_shape: lowres_feat.shape(),
        coeff_in,
        a,
        intermediate_channels: intermediate.shape().c,
    };
    Ok((out, cache))
}

pub fn duc_backward(cache: &DucCache, params: &DucParams, grad_out: &Tensor4) -> Result<DucGrads> {
    let cfg = &cache.cfg;
    let oc = cfg.out_channels;
    let expected = cache.guidance_small.shape().with_channels(oc + cache.intermediate_channels);
    grad_out.expect_shape(expected, "duc_backward")?;

    let (grad_u, grad_inter) = grad_out.split_channels(oc)?;
    // U = a * Gs + b
    let grad_a = grad_u.mul(&cache.guidance_small)?;
    let mut grad_gs = grad_u.mul(&cache.a)?;
    let ga = conv2d_backward(&cache.coeff_in, &cfg.coeff_spec(), &params.coeff_a, &grad_a)?;
    let gb = conv2d_backward(&cache.coeff_in, &cfg.coeff_spec(), &params.coeff_b, &grad_u)?;
    let grad_coeff_in = ga.input.add(&gb.input)?;
    let (grad_gs_direct, grad_lowres_up) = grad_coeff_in.split_channels(oc)?;
    grad_gs.add_assign(&grad_gs_direct);

    let grad_lowres_feat = bilinear_resize_backward(cache.lowres_feat_shape, &grad_lowres_up)?;
    let gl = conv2d_backward(&cache.lowres, &cfg.lowres_spec(), &params.lowres_conv, &grad_lowres_feat)?;

    let gs = conv2d_backward(&cache.guidance, &cfg.stride_spec(), &params.stride_conv, &grad_gs)?;
    let g2 = conv2d_backward(&cache.relu_out, &cfg.g2_spec(), &params.g2, &gs.input)?;
    let grad_bn_out = relu_backward(&cache.bn_out, &g2.input)?;
    let gbn = batchnorm_backward(&cache.bn, &params.bn, &grad_bn_out)?;
    let g1 = conv2d_backward(&cache.image, &cfg.g1_spec(), &params.g1, &gbn.input)?;

    let mut bn = params.bn.clone();
    bn.gamma = gbn.gamma;
    bn.beta = gbn.beta;
    Ok(DucGrads {
        params: DucParams {
            g1: g1.params,
            bn,
            g2: g2.params,
            stride_conv: gs.params,
            lowres_conv: gl.params,
            coeff_a: ga.params,
            coeff_b: gb.params,
        },
        image: g1.input,
        lowres: gl.input,
        intermediate: grad_inter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{fill, flatten};
    use crate::testutil::random;

    fn setup(side: usize, stride: usize, seed: u64) -> (DucConfig, DucParams, Tensor4, Tensor4, Tensor4) {
        let mut cfg = DucConfig::new(3, 5, 4);
        cfg.guidance_channels = 3;
        cfg.guide_stride = stride;
        let mut rng = SplitMix64::new(seed);
        let params = DucParams::init(&cfg, &mut rng).unwrap();
        let mid = side / stride;
        let image = random(Shape4::new(1, 3, side, side), seed + 1);
        let lowres = random(Shape4::new(1, 5, mid / 2, mid / 2), seed + 2);
        let inter = random(Shape4::new(1, 6, mid, mid), seed + 3);
        (cfg, params, image, lowres, inter)
    }

    #[test]
    fn shape_arithmetic() {
        let mut cfg = DucConfig::new(3, 128, 32);
        cfg.guide_stride = 4;
        let mut params = DucParams::init(&cfg, &mut SplitMix64::new(1)).unwrap();
        let image = random(Shape4::new(1, 3, 64, 64), 1);
        let lowres = random(Shape4::new(1, 128, 4, 4), 2);
        let inter = random(Shape4::new(1, 64, 16, 16), 3);
        let (out, _) = duc_forward(&image, &lowres, &inter, &cfg, &mut params, Mode::Train).unwrap();
        assert_eq!(out.shape(), Shape4::new(1, 96, 16, 16));
    }

    #[test]
    fn zeroed_coefficients_pass_intermediate_through() {
        let (cfg, mut params, image, lowres, inter) = setup(16, 4, 2);
        fill(&mut params.coeff_a, 0.0);
        fill(&mut params.coeff_b, 0.0);
        let (out, _) = duc_forward(&image, &lowres, &inter, &cfg, &mut params, Mode::Train).unwrap();
        let (u, rest) = out.split_channels(cfg.out_channels).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(rest, inter);
    }

    #[test]
    fn resolution_contract_over_strides() {
        for stride in [2, 4, 8] {
            let (cfg, mut params, image, lowres, inter) = setup(32, stride, 3);
            let (out, _) = duc_forward(&image, &lowres, &inter, &cfg, &mut params, Mode::Train).unwrap();
            assert_eq!(out.shape().spatial(), inter.shape().spatial());
            assert_eq!(out.shape().spatial(), (32 / stride, 32 / stride));
        }
    }

    #[test]
    fn spatial_errors_name_the_stage() {
        let (cfg, mut params, image, lowres, _) = setup(16, 4, 4);
        let bad = random(Shape4::new(1, 6, 5, 4), 1);
        let err = duc_forward(&image, &lowres, &bad, &cfg, &mut params, Mode::Train).unwrap_err();
        assert!(err.to_string().contains("duc/intermediate"), "{err}");
        let big_lowres = random(Shape4::new(1, 5, 4, 4), 1);
        let inter = random(Shape4::new(1, 6, 4, 4), 1);
        let err = duc_forward(&image, &big_lowres, &inter, &cfg, &mut params, Mode::Train).unwrap_err();
        assert!(err.to_string().contains("duc/lowres"), "{err}");
    }

    #[test]
    fn zero_image_leaves_bias_driven_constant() {
        let (cfg, mut params, image, lowres, inter) = setup(16, 4, 5);
        let mut rng = SplitMix64::new(77);
        for p in [&mut params.stride_conv, &mut params.lowres_conv, &mut params.coeff_a, &mut params.coeff_b] {
            p.bias.iter_mut().for_each(|b| *b = rng.normal(0.0, 1.0));
        }
        let zero_img = Tensor4::zeros(image.shape());
        let zero_low = Tensor4::zeros(lowres.shape());
        let (out, _) = duc_forward(&zero_img, &zero_low, &inter, &cfg, &mut params, Mode::Eval).unwrap();
        let u = out.slice_channels(0..cfg.out_channels).unwrap();
        for c in 0..cfg.out_channels {
            let plane = u.plane(0, c);
            assert!(plane.iter().all(|&v| (v - plane[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn eval_mode_is_pure() {
        let (cfg, mut params, image, lowres, inter) = setup(16, 4, 6);
        let before = params.clone();
        let (a, _) = duc_forward(&image, &lowres, &inter, &cfg, &mut params, Mode::Eval).unwrap();
        let (b, _) = duc_forward(&image, &lowres, &inter, &cfg, &mut params, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(params, before);
    }

    #[test]
    fn gradient_routing() {
        let (cfg, mut params, image, lowres, inter) = setup(16, 4, 7);
        let (out, cache) = duc_forward(&image, &lowres, &inter, &cfg, &mut params, Mode::Train).unwrap();
        let zero = duc_backward(&cache, &params, &Tensor4::zeros(out.shape())).unwrap();
        assert!(flatten(&zero.params).iter().all(|&v| v == 0.0));
        assert_eq!(zero.image.max_abs() + zero.lowres.max_abs() + zero.intermediate.max_abs(), 0.0);

        let g_inter = random(inter.shape(), 8);
        let g = Tensor4::zeros(out.shape().with_channels(cfg.out_channels)).concat_channels(&g_inter).unwrap();
        let routed = duc_backward(&cache, &params, &g).unwrap();
        assert_eq!(routed.intermediate, g_inter);
        assert!(flatten(&routed.params).iter().all(|&v| v == 0.0));
        assert_eq!(routed.image.max_abs(), 0.0);
    }

    #[test]
    fn finite_difference_gradients() {
        use crate::testutil::{check_coords, check_params};
        for trial in 0..3u64 {
            let (cfg, params, image, lowres, inter) = setup(16, 4, 100 + trial);
            let (probe, _) = duc_forward(&image, &lowres, &inter, &cfg, &mut params.clone(), Mode::Train).unwrap();
            let weight = random(probe.shape(), 200 + trial);
            let loss = |img: &Tensor4, low: &Tensor4, mid: &Tensor4, p: &DucParams| {
                let (out, _) = duc_forward(img, low, mid, &cfg, &mut p.clone(), Mode::Train).unwrap();
                out.mul(&weight).unwrap().sum()
            };
            let mut p = params.clone();
            let (_, cache) = duc_forward(&image, &lowres, &inter, &cfg, &mut p, Mode::Train).unwrap();
            let g = duc_backward(&cache, &params, &weight).unwrap();
            let mut rng = SplitMix64::new(trial);
            let s = image.shape();
            let e = check_coords(|v| loss(&Tensor4::from_vec(s, v.to_vec()).unwrap(), &lowres, &inter, &params), image.data(), g.image.data(), 40, &mut rng);
            assert!(e < 1e-4, "image {e}");
            let s = lowres.shape();
            let e = check_coords(|v| loss(&image, &Tensor4::from_vec(s, v.to_vec()).unwrap(), &inter, &params), lowres.data(), g.lowres.data(), 40, &mut rng);
            assert!(e < 1e-4, "lowres {e}");
            let s = inter.shape();
            let e = check_coords(|v| loss(&image, &lowres, &Tensor4::from_vec(s, v.to_vec()).unwrap(), &params), inter.data(), g.intermediate.data(), 40, &mut rng);
            assert!(e < 1e-4, "intermediate {e}");
            let e = check_params(&params, &g.params, |q| loss(&image, &lowres, &inter, q), &["g1.bias"], 120, &mut rng);
            assert!(e < 1e-4, "params {e}");
        }
    }
}
