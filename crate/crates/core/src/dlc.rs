//! Dense local context: a cascade of dilated convolutions with dense
//! concatenation, plus receptive-field and parameter-count arithmetic.
//!
//! ```text
//! y0    = reduce(x)
//! in_i  = [y0, out_1, ..., out_{i-1}]
//! out_i = dil_i(relu(pre_i(in_i)))      3x3, dilation = padding = rates[i]
//! y     = fuse([y0, out_1, ..., out_n])
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{conv2d_backward, conv2d_forward, relu_backward, relu_forward, ConvParams, ConvSpec};
use crate::params::impl_parameters;
use crate::rng::SplitMix64;
use crate::tensor::{Shape4, Tensor4};

pub const DEFAULT_RATES: [usize; 4] = [3, 6, 12, 18];

/// Effective extent of a `k x k` kernel with dilation `d`: `(d - 1)(k - 1) + k`.
pub fn receptive_field(k: usize, d: usize) -> usize {
    (d - 1) * (k - 1) + k
}

/// Serial chain of `(kernel, dilation)` layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfSpec(Vec<(usize, usize)>);

impl RfSpec {
    pub fn new(layers: Vec<(usize, usize)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("receptive-field spec has no layers".into()));
        }
        if let Some(&(k, d)) = layers.iter().find(|&&(k, d)| k == 0 || d == 0) {
            return Err(Error::InvalidArgument(format!(
                "kernel and dilation must be at least 1, got ({k},{d})"
            )));
        }
        Ok(Self(layers))
    }

    /// 3x3 layers at the given dilation rates.
    pub fn from_rates(rates: &[usize]) -> Result<Self> {
        Self::new(rates.iter().map(|&d| (3, d)).collect())
    }

    pub fn layers(&self) -> &[(usize, usize)] {
        &self.0
    }
}

/// Parses `k:d,k:d,...`, e.g. `3:3,3:6,3:12,3:18`.
impl FromStr for RfSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, d) = part
                .split_once(':')
                .ok_or_else(|| Error::Format(format!("expected kernel:dilation, got {part:?}")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("not a positive integer: {v:?}")))
            };
            layers.push((parse(k)?, parse(d)?));
        }
        Self::new(layers)
    }
}

impl fmt::Display for RfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, d)| format!("{k}:{d}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Stacking rule `K = K1 + K2 - 1` folded over the chain.
pub fn stack_receptive_field(spec: &RfSpec) -> usize {
    spec.0.iter().fold(1, |acc, &(k, d)| acc + receptive_field(k, d) - 1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DlcConfig {
    pub in_channels: usize,
    pub reduce_channels: usize,
    pub branch_channels: usize,
    pub rates: Vec<usize>,
    pub fuse_channels: usize,
}

impl DlcConfig {
    pub fn new(in_channels: usize, reduce_channels: usize, branch_channels: usize, fuse_channels: usize) -> Self {
        Self {
            in_channels,
            reduce_channels,
            branch_channels,
            rates: DEFAULT_RATES.to_vec(),
            fuse_channels,
        }
    }

    /// Widths used when comparing against published parameter budgets: a
    /// 1024-channel backbone output, reduced to 256, 128 channels per branch
    /// and a 512-channel fusion.
    pub fn full_scale() -> Self {
        Self::new(1024, 256, 128, 512)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("reduce_channels", self.reduce_channels),
            ("branch_channels", self.branch_channels),
            ("fuse_channels", self.fuse_channels),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("dlc {name} must be at least 1")));
            }
        }
        if self.rates.is_empty() {
            return Err(Error::InvalidConfig("dlc needs at least one dilation rate".into()));
        }
        if self.rates[0] == 0 || self.rates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(format!(
                "dlc rates must be positive and strictly increasing, got {:?}",
                self.rates
            )));
        }
        Ok(())
    }

    pub fn reduce_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.in_channels, self.reduce_channels)
    }

    /// Input width of branch `i` (zero-based): everything concatenated so far.
    pub fn branch_input_channels(&self, i: usize) -> usize {
        self.reduce_channels + i * self.branch_channels
    }

    pub fn pre_spec(&self, i: usize) -> ConvSpec {
        ConvSpec::pointwise(self.branch_input_channels(i), self.branch_channels)
    }

    pub fn dil_spec(&self, i: usize) -> ConvSpec {
        ConvSpec::new(self.branch_channels, self.branch_channels, 3)
            .with_dilation(self.rates[i])
            .with_padding(self.rates[i])
    }

    pub fn fuse_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.branch_input_channels(self.rates.len()), self.fuse_channels)
    }

    pub fn stacked_receptive_field(&self) -> usize {
        self.rates.iter().fold(1, |acc, &d| acc + receptive_field(3, d) - 1)
    }

    /// Whether the stacked receptive field fits an `h x w` feature map.
    /// Outer taps of a wider stack only see padding.
    pub fn check_extent(&self, h: usize, w: usize) -> bool {
        self.stacked_receptive_field() <= h.min(w)
    }
}

/// Exact number of weights and biases in [`DlcParams`] for `cfg`.
pub fn param_count(cfg: &DlcConfig) -> usize {
    let branches: usize = (0..cfg.rates.len())
        .map(|i| cfg.pre_spec(i).param_count() + cfg.dil_spec(i).param_count())
        .sum();
    cfg.reduce_spec().param_count() + branches + cfg.fuse_spec().param_count()
}

/// Same cascade without the reduction and pre-convolutions: every dilated
/// conv reads the full-width running concatenation directly. Counting only.
pub fn dense_aspp_param_count(cfg: &DlcConfig) -> usize {
    let b = cfg.branch_channels;
    let dil: usize = (0..cfg.rates.len())
        .map(|i| ConvSpec::new(cfg.in_channels + i * b, b, 3).param_count())
        .sum();
    dil + ConvSpec::pointwise(cfg.in_channels + cfg.rates.len() * b, cfg.fuse_channels).param_count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DlcParams {
    pub reduce: ConvParams,
    pub pre: Vec<ConvParams>,
    pub dil: Vec<ConvParams>,
    pub fuse: ConvParams,
}

impl_parameters!(DlcParams { reduce, pre, dil, fuse });

impl DlcParams {
    pub fn init(cfg: &DlcConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let reduce = ConvParams::kaiming(&cfg.reduce_spec(), rng);
        let mut pre = Vec::new();
        let mut dil = Vec::new();
        for i in 0..cfg.rates.len() {
            pre.push(ConvParams::kaiming(&cfg.pre_spec(i), rng));
            dil.push(ConvParams::kaiming(&cfg.dil_spec(i), rng));
        }
        let fuse = ConvParams::kaiming(&cfg.fuse_spec(), rng);
        let params = Self { reduce, pre, dil, fuse };
        params.check(cfg)?;
        Ok(params)
    }

    pub fn check(&self, cfg: &DlcConfig) -> Result<()> {
        let n = cfg.rates.len();
        if self.pre.len() != n {
            return Err(Error::shape("dlc", "branches", n, self.pre.len()));
        }
        if self.dil.len() != n {
            return Err(Error::shape("dlc", "branches", n, self.dil.len()));
        }
        self.reduce.check(&cfg.reduce_spec(), "dlc/reduce")?;
        for i in 0..n {
            self.pre[i].check(&cfg.pre_spec(i), &format!("dlc/branch{i}/pre"))?;
            self.dil[i].check(&cfg.dil_spec(i), &format!("dlc/branch{i}/dil"))?;
        }
        self.fuse.check(&cfg.fuse_spec(), "dlc/fuse")
    }
}

#[derive(Clone, Debug)]
pub struct DlcCache {
    cfg: DlcConfig,
    x: Tensor4,
    /// `[y0, out_1, ..., out_n]`
    features: Vec<Tensor4>,
    pre_out: Vec<Tensor4>,
    relu_out: Vec<Tensor4>,
}

#[derive(Clone, Debug)]
pub struct DlcGrads {
    pub params: DlcParams,
    pub input: Tensor4,
}

pub fn dlc_forward(x: &Tensor4, cfg: &DlcConfig, params: &DlcParams) -> Result<(Tensor4, DlcCache)> {
    cfg.validate()?;
    params.check(cfg)?;
    let xs = x.shape();
    if xs.c != cfg.in_channels {
        return Err(Error::shape("dlc/reduce", "channels", cfg.in_channels, xs.c));
    }

    let y0 = conv2d_forward(x, &cfg.reduce_spec(), &params.reduce).map_err(|e| e.in_stage("dlc/reduce"))?;
    let mut features = vec![y0];
    let mut pre_out = Vec::new();
    let mut relu_out = Vec::new();
    for i in 0..cfg.rates.len() {
        let stage = format!("dlc/branch{i}");
        let refs: Vec<&Tensor4> = features.iter().collect();
        let input = Tensor4::concat_many(&refs).map_err(|e| e.in_stage(&stage))?;
        let p = conv2d_forward(&input, &cfg.pre_spec(i), &params.pre[i]).map_err(|e| e.in_stage(&stage))?;
        let r = relu_forward(&p);
        let out = conv2d_forward(&r, &cfg.dil_spec(i), &params.dil[i]).map_err(|e| e.in_stage(&stage))?;
        pre_out.push(p);
        relu_out.push(r);
        features.push(out);
    }
    let refs: Vec<&Tensor4> = features.iter().collect();
    let all = Tensor4::concat_many(&refs)?;
    let y = conv2d_forward(&all, &cfg.fuse_spec(), &params.fuse).map_err(|e| e.in_stage("dlc/fuse"))?;
    let cache = DlcCache {
        cfg: cfg.clone(),
        x: x.clone(),
        features,
        pre_out,
        relu_out,
    };
    Ok((y, cache))
}

fn concat_features(features: &[Tensor4]) -> Result<Tensor4> {
    let refs: Vec<&Tensor4> = features.iter().collect();
    Tensor4::concat_many(&refs)
}

pub fn dlc_backward(cache: &DlcCache, params: &DlcParams, grad_out: &Tensor4) -> Result<DlcGrads> {
    let cfg = &cache.cfg;
    let n = cfg.rates.len();
    let all = concat_features(&cache.features)?;
    let gf = conv2d_backward(&all, &cfg.fuse_spec(), &params.fuse, grad_out).map_err(|e| e.in_stage("dlc/fuse"))?;

    let mut sizes = vec![cfg.reduce_channels];
    sizes.extend(std::iter::repeat_n(cfg.branch_channels, n));
    let mut grads = gf.input.split_sizes(&sizes)?;

    let mut pre = vec![None; n];
    let mut dil = vec![None; n];
    for i in (0..n).rev() {
        let stage = format!("dlc/branch{i}");
        let gd = conv2d_backward(&cache.relu_out[i], &cfg.dil_spec(i), &params.dil[i], &grads[i + 1])
            .map_err(|e| e.in_stage(&stage))?;
        let g_pre = relu_backward(&cache.pre_out[i], &gd.input)?;
        let input = concat_features(&cache.features[..=i])?;
        let gp = conv2d_backward(&input, &cfg.pre_spec(i), &params.pre[i], &g_pre).map_err(|e| e.in_stage(&stage))?;
        let parts = gp.input.split_sizes(&sizes[..=i])?;
        for (slot, part) in grads.iter_mut().zip(&parts) {
            slot.add_assign(part);
        }
        pre[i] = Some(gp.params);
        dil[i] = Some(gd.params);
    }
    let gr = conv2d_backward(&cache.x, &cfg.reduce_spec(), &params.reduce, &grads[0]).map_err(|e| e.in_stage("dlc/reduce"))?;
    Ok(DlcGrads {
        params: DlcParams {
            reduce: gr.params,
            pre: pre.into_iter().map(Option::unwrap).collect(),
            dil: dil.into_iter().map(Option::unwrap).collect(),
            fuse: gf.params,
        },
        input: gr.input,
    })
}

impl DlcCache {
    pub fn output_shape(&self) -> Shape4 {
        self.x.shape().with_channels(self.cfg.fuse_channels)
    }
}
