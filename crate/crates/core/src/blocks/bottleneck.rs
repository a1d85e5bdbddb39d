use rand::Rng;

use crate::blocks::{AcpUnit, BlockConfig, Neighborhood};
use crate::error::{Error, Result};
use crate::graph::layers::{Linear, SharedMlp};
use crate::graph::{Graph, ParamStore, Var};
use crate::scalar::Real;

/// ResNet-style bottleneck: reduce, convolve, expand, add the shortcut.
#[derive(Clone, Debug)]
pub struct Bottleneck<T> {
    pub d_in: usize,
    pub d_mid: usize,
    pub d_out: usize,
    pub reduce: SharedMlp,
    pub conv: AcpUnit<T>,
    pub expand: SharedMlp,
    pub residual_proj: Option<Linear>,
}

impl<T: Real> Bottleneck<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        kernel_scale: T,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.reduction == 0 || !d_out.is_multiple_of(cfg.reduction) {
            return Err(Error::Config(format!(
                "{name}: width {d_out} not divisible by reduction {}",
                cfg.reduction
            )));
        }
        let d_mid = d_out / cfg.reduction;
        let reduce = SharedMlp::new(
            store,
            &format!("{name}.reduce"),
            d_in,
            d_mid,
            cfg.batch_norm,
            cfg.activation,
            rng,
        );
        let conv = AcpUnit::new(store, &format!("{name}.conv"), d_mid, d_mid, kernel_scale, cfg, rng)?;
        let expand = SharedMlp::new(
            store,
            &format!("{name}.expand"),
            d_mid,
            d_out,
            cfg.batch_norm,
            cfg.activation,
            rng,
        );
        let residual_proj = (d_in != d_out)
            .then(|| Linear::new(store, &format!("{name}.proj"), d_in, d_out, true, rng));
        Ok(Self {
            d_in,
            d_mid,
            d_out,
            reduce,
            conv,
            expand,
            residual_proj,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, features: Var, nb: Neighborhood<'_, T>) -> Result<Var> {
        let c = g.shape(features).get(1).copied().unwrap_or(0);
        if c != self.d_in {
            return Err(Error::ChannelMismatch {
                layer: "bottleneck".into(),
                expected: self.d_in,
                actual: c,
            });
        }
        let x = self.reduce.forward(g, features)?;
        let x = self.conv.forward(g, x, nb)?;
        let main = self.expand.forward(g, x)?;
        let residual = match &self.residual_proj {
            Some(p) => p.forward(g, features)?,
            None => features,
        };
        Ok(g.add(main, residual)?)
    }
}
