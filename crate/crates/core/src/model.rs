//! End-to-end segmentation network.
//!
//! backbone -> decoder -> DLC -> 1x1 classifier -> bilinear resize to the input.
//! The decoder is either the DUC module or, as a baseline, a plain bilinear
//! upsampling of the low-resolution tap to the intermediate resolution.

use serde::{Deserialize, Serialize};

use crate::backbone::{backbone_backward, backbone_forward, BackboneCache, BackboneConfig, BackboneParams};
use crate::dlc::{dlc_backward, dlc_forward, DlcCache, DlcConfig, DlcParams, DEFAULT_RATES};
use crate::duc::{duc_backward, duc_forward, DucCache, DucConfig, DucParams};
use crate::error::{Error, Result};
use crate::ops::{
    bilinear_resize_backward, bilinear_resize_forward, conv2d_backward, conv2d_forward, ConvParams, ConvSpec, Mode,
};
use crate::params::impl_parameters;
use crate::rng::SplitMix64;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Duc,
    Bilinear,
}

impl std::str::FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duc" => Ok(Decoder::Duc),
            "bilinear" => Ok(Decoder::Bilinear),
            _ => Err(Error::InvalidConfig(format!("unknown decoder {s:?} (expected duc or bilinear)"))),
        }
    }
}

impl std::fmt::Display for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decoder::Duc => "duc",
            Decoder::Bilinear => "bilinear",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub classes: usize,
    pub decoder: Decoder,
    pub backbone: BackboneConfig,
    pub guidance_channels: usize,
    pub lowres_dilation: usize,
    pub duc_out_channels: usize,
    pub dlc_reduce_channels: usize,
    pub dlc_branch_channels: usize,
    pub dlc_fuse_channels: usize,
    pub dlc_rates: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            decoder: Decoder::Duc,
            backbone: BackboneConfig::default(),
            guidance_channels: 16,
            lowres_dilation: 2,
            duc_out_channels: 32,
            dlc_reduce_channels: 32,
            dlc_branch_channels: 16,
            dlc_fuse_channels: 32,
            dlc_rates: DEFAULT_RATES.to_vec(),
        }
    }
}

impl ModelConfig {
    pub fn duc_config(&self) -> DucConfig {
        DucConfig {
            image_channels: self.backbone.in_channels,
            lowres_channels: self.backbone.il_channels(),
            guidance_channels: self.guidance_channels,
            guide_stride: self.backbone.stride_at(self.backbone.tap_im),
            lowres_dilation: self.lowres_dilation,
            out_channels: self.duc_out_channels,
        }
    }

    pub fn dlc_config(&self) -> DlcConfig {
        let in_channels = match self.decoder {
            Decoder::Duc => self.duc_out_channels + self.backbone.im_channels(),
            Decoder::Bilinear => self.backbone.il_channels(),
        };
        DlcConfig {
            in_channels,
            reduce_channels: self.dlc_reduce_channels,
            branch_channels: self.dlc_branch_channels,
            rates: self.dlc_rates.clone(),
            fuse_channels: self.dlc_fuse_channels,
        }
    }

    pub fn classifier_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.dlc_fuse_channels, self.classes)
    }

    /// Input sides must be multiples of this.
    pub fn total_stride(&self) -> usize {
        self.backbone.stride_at(self.backbone.tap_il)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 classes, got {}", self.classes)));
        }
        self.backbone.validate()?;
        if self.decoder == Decoder::Duc {
            self.duc_config().validate()?;
        }
        self.dlc_config().validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub backbone: BackboneParams,
    pub duc: Option<DucParams>,
    pub dlc: DlcParams,
    pub classifier: ConvParams,
}

impl_parameters!(ModelParams { backbone, duc, dlc, classifier });

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let backbone = BackboneParams::init(&cfg.backbone, &mut rng.fork())?;
        let duc = match cfg.decoder {
            Decoder::Duc => Some(DucParams::init(&cfg.duc_config(), &mut rng.fork())?),
            Decoder::Bilinear => None,
        };
        let dlc = DlcParams::init(&cfg.dlc_config(), &mut rng.fork())?;
        let classifier = ConvParams::kaiming(&cfg.classifier_spec(), &mut rng.fork());
        Ok(Self { backbone, duc, dlc, classifier })
    }
}

#[derive(Clone, Debug)]
enum DecoderCache {
    Duc(Box<DucCache>),
    Bilinear { il_shape: Shape4, im_shape: Shape4 },
}

#[derive(Clone, Debug)]
pub struct ModelCache {
    backbone: BackboneCache,
    decoder: DecoderCache,
    dlc: DlcCache,
    dlc_out: Tensor4,
    small_logits: Shape4,
}

/// Returns logits at the input resolution.
pub fn forward_full(
    image: &Tensor4,
    cfg: &ModelConfig,
    params: &mut ModelParams,
    mode: Mode,
) -> Result<(Tensor4, ModelCache)> {
    let s = image.shape();
    let (im, il, backbone) = backbone_forward(image, &cfg.backbone, &mut params.backbone, mode)?;
    let (decoded, decoder) = match (cfg.decoder, params.duc.as_mut()) {
        (Decoder::Duc, Some(duc)) => {
            let (out, cache) = duc_forward(image, &il, &im, &cfg.duc_config(), duc, mode)?;
            (out, DecoderCache::Duc(Box::new(cache)))
        }
        (Decoder::Bilinear, None) => {
            let (h, w) = im.shape().spatial();
            let out = bilinear_resize_forward(&il, h, w)?;
            (out, DecoderCache::Bilinear { il_shape: il.shape(), im_shape: im.shape() })
        }
        _ => return Err(Error::InvalidConfig("decoder parameters do not match the configured decoder".into())),
    };
    let (dlc_out, dlc) = dlc_forward(&decoded, &cfg.dlc_config(), &params.dlc)?;
    let small = conv2d_forward(&dlc_out, &cfg.classifier_spec(), &params.classifier).map_err(|e| e.in_stage("classifier"))?;
    let logits = bilinear_resize_forward(&small, s.h, s.w)?;
    let cache = ModelCache {
        backbone,
        decoder,
        dlc,
        small_logits: small.shape(),
        dlc_out,
    };
    Ok((logits, cache))
}

/// Parameter gradients of `sum(grad_logits * logits)`.
pub fn backward_full(cache: &ModelCache, cfg: &ModelConfig, params: &ModelParams, grad_logits: &Tensor4) -> Result<ModelParams> {
    let g_small = bilinear_resize_backward(cache.small_logits, grad_logits)?;
    let gc = conv2d_backward(&cache.dlc_out, &cfg.classifier_spec(), &params.classifier, &g_small)?;
    let gl = dlc_backward(&cache.dlc, &params.dlc, &gc.input)?;
    let (duc, grad_im, grad_il) = match (&cache.decoder, params.duc.as_ref()) {
        (DecoderCache::Duc(dc), Some(duc)) => {
            let g = duc_backward(dc, duc, &gl.input)?;
            (Some(g.params), g.intermediate, g.lowres)
        }
        (DecoderCache::Bilinear { il_shape, im_shape }, None) => {
            let g_il = bilinear_resize_backward(*il_shape, &gl.input)?;
            (None, Tensor4::zeros(*im_shape), g_il)
        }
        _ => return Err(Error::InvalidConfig("decoder parameters do not match the cache".into())),
    };
    let (backbone, _) = backbone_backward(&cache.backbone, &params.backbone, &grad_im, &grad_il)?;
    Ok(ModelParams {
        backbone,
        duc,
        dlc: gl.params,
        classifier: gc.params,
    })
}
