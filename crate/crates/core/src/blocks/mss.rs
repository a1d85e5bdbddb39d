use rand::Rng;

use crate::blocks::{AcpUnit, BlockConfig, Neighborhood};
use crate::error::{Error, Result};
use crate::graph::layers::{Linear, SharedMlp};
use crate::graph::{Graph, ParamStore, Var};
use crate::scalar::Real;

/// Multi-scale split block.
///
/// ```text
/// x = entry(f)                          d'
/// x1 | x2 | x3 | x4 = split(x)          d'/4 each
/// y21 | y22 = conv1(x2)                 d'/2 -> d'/4 + d'/4
/// y31 | y32 = conv2(y22 ++ x3)          d'/2 -> d'/4 + d'/4
/// y4        = conv3(y32 ++ x4)          d'/4
/// out = exit(x1 ++ y21 ++ y31 ++ y4) + residual(f)
/// ```
///
/// Each chained convolution sees features that already aggregated one more
/// neighborhood, so the four output groups cover 0 to 3 hops.
#[derive(Clone, Debug)]
pub struct MssBlock<T> {
    pub d_in: usize,
    pub d_prime: usize,
    pub d_out: usize,
    pub entry: SharedMlp,
    pub convs: [AcpUnit<T>; 3],
    pub exit: SharedMlp,
    pub residual_proj: Option<Linear>,
}

impl<T: Real> MssBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_prime: usize,
        d_out: usize,
        kernel_scale: T,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if d_prime == 0 || !d_prime.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "{name}: internal width {d_prime} must be a positive multiple of 4"
            )));
        }
        let q = d_prime / 4;
        let entry = SharedMlp::new(
            store,
            &format!("{name}.entry"),
            d_in,
            d_prime,
            cfg.batch_norm,
            cfg.activation,
            rng,
        );
        let conv1 = AcpUnit::new(store, &format!("{name}.conv1"), q, 2 * q, kernel_scale, cfg, rng)?;
        let conv2 = AcpUnit::new(store, &format!("{name}.conv2"), 2 * q, 2 * q, kernel_scale, cfg, rng)?;
        let conv3 = AcpUnit::new(store, &format!("{name}.conv3"), 2 * q, q, kernel_scale, cfg, rng)?;
        let exit = SharedMlp::new(
            store,
            &format!("{name}.exit"),
            d_prime,
            d_out,
            cfg.batch_norm,
            cfg.activation,
            rng,
        );
        let residual_proj = (d_in != d_out)
            .then(|| Linear::new(store, &format!("{name}.proj"), d_in, d_out, true, rng));
        Ok(Self {
            d_in,
            d_prime,
            d_out,
            entry,
            convs: [conv1, conv2, conv3],
            exit,
            residual_proj,
        })
    }

    /// Internal width `d_out / cfg.reduction`.
    pub fn with_reduction<R: Rng + ?Sized>(
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
        Self::new(store, name, d_in, d_out / cfg.reduction, d_out, kernel_scale, cfg, rng)
    }

    /// Block output together with the pre-exit concatenation (`d'` wide).
    pub fn forward_parts(
        &self,
        g: &mut Graph<'_, T>,
        features: Var,
        nb: Neighborhood<'_, T>,
    ) -> Result<(Var, Var)> {
        let q = self.d_prime / 4;
        let x = self.entry.forward(g, features)?;
        let parts = g.split(x, 1, &[q, q, q, q])?;
        let (x1, x2, x3, x4) = (parts[0], parts[1], parts[2], parts[3]);

        let c1 = self.convs[0].forward(g, x2, nb)?;
        let y2 = g.split(c1, 1, &[q, q])?;
        let in2 = g.concat(&[y2[1], x3], 1)?;
        let c2 = self.convs[1].forward(g, in2, nb)?;
        let y3 = g.split(c2, 1, &[q, q])?;
        let in3 = g.concat(&[y3[1], x4], 1)?;
        let y4 = self.convs[2].forward(g, in3, nb)?;

        let merged = g.concat(&[x1, y2[0], y3[0], y4], 1)?;
        let main = self.exit.forward(g, merged)?;
        let residual = match &self.residual_proj {
            Some(p) => p.forward(g, features)?,
            None => features,
        };
        Ok((g.add(main, residual)?, merged))
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, features: Var, nb: Neighborhood<'_, T>) -> Result<Var> {
        let c = g.shape(features).get(1).copied().unwrap_or(0);
        if c != self.d_in {
            return Err(Error::ChannelMismatch {
                layer: "mss".into(),
                expected: self.d_in,
                actual: c,
            });
        }
        Ok(self.forward_parts(g, features, nb)?.0)
    }
}
