//! Uniform access to learnable parameters and persistent buffers.
//!
//! Every parameter container visits its tensors in a fixed order under stable
//! dotted names. Gradients reuse the parameter types, so a gradient value and
//! its parameter are visited in lockstep.

use crate::ops::{BatchNorm, ConvParams};

pub trait Parameters {
    /// Learnable tensors.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    /// Dimensions of each learnable tensor, in [`visit`](Self::visit) order.
    /// Flat tensors report their length.
    fn visit_shapes(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize])) {
        self.visit(prefix, &mut |name, v| f(name, &[v.len()]));
    }

    /// Non-learnable state that still belongs in a checkpoint.
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &[f64])) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut [f64])) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameters for ConvParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "weight"), self.weight.data());
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_shapes(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize])) {
        let s = self.weight.shape();
        f(&join(prefix, "weight"), &[s.n, s.c, s.h, s.w]);
        f(&join(prefix, "bias"), &[self.bias.len()]);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "weight"), self.weight.data_mut());
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Parameters for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

impl<T: Parameters> Parameters for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_shapes(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize])) {
        for (i, p) in self.iter().enumerate() {
            p.visit_shapes(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, p) in self.iter().enumerate() {
            p.visit_buffers(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_buffers_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: Parameters> Parameters for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }

    fn visit_shapes(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize])) {
        if let Some(p) = self {
            p.visit_shapes(prefix, f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        if let Some(p) = self {
            p.visit_buffers(prefix, f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let Some(p) = self {
            p.visit_buffers_mut(prefix, f);
        }
    }
}

/// Implements [`Parameters`] for a struct by visiting the listed fields in order.
macro_rules! impl_parameters {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::params::Parameters for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
                $( self.$field.visit(&$crate::params::join(prefix, stringify!($field)), f); )*
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
                $( self.$field.visit_mut(&$crate::params::join(prefix, stringify!($field)), f); )*
            }
            fn visit_shapes(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize])) {
                $( self.$field.visit_shapes(&$crate::params::join(prefix, stringify!($field)), f); )*
            }
            fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
                $( self.$field.visit_buffers(&$crate::params::join(prefix, stringify!($field)), f); )*
            }
            fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
                $( self.$field.visit_buffers_mut(&$crate::params::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use impl_parameters;

/// Total number of learnable scalars.
pub fn count(p: &dyn Parameters) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, v| n += v.len());
    n
}

/// Learnable tensors as `(name, values)` in visiting order.
pub fn named(p: &dyn Parameters) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    p.visit("", &mut |name, v| out.push((name.to_string(), v.to_vec())));
    out
}

/// Learnable values concatenated in visiting order.
pub fn flatten(p: &dyn Parameters) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, v| out.extend_from_slice(v));
    out
}

/// Overwrites learnable values from a flat vector produced by [`flatten`].
pub fn assign_flat(p: &mut dyn Parameters, values: &[f64]) {
    let mut offset = 0;
    p.visit_mut("", &mut |_, v| {
        v.copy_from_slice(&values[offset..offset + v.len()]);
        offset += v.len();
    });
    assert_eq!(offset, values.len(), "flat parameter length mismatch");
}

pub fn fill(p: &mut dyn Parameters, value: f64) {
    p.visit_mut("", &mut |_, v| v.fill(value));
}
