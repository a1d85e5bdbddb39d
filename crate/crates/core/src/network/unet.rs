use rand::Rng;

use crate::blocks::{AcpUnit, Block};
use crate::error::Result;
use crate::graph::layers::{Linear, SharedMlp};
use crate::graph::{Graph, ParamStore, Var};
use crate::network::{check_input, max_pool, NetOutput, NetworkConfig, ResolutionPyramid};
use crate::scalar::Real;

/// Encoder-decoder baseline: blocks on each level, max-pool plus MLP going
/// down, interpolation plus skip concatenation plus MLP coming back up.
#[derive(Clone, Debug)]
pub struct Unet<T> {
    pub config: NetworkConfig,
    stem: AcpUnit<T>,
    down: Vec<SharedMlp>,
    encoder: Vec<Vec<Block<T>>>,
    up: Vec<SharedMlp>,
    decoder: SharedMlp,
    classifier: Linear,
}

impl<T: Real> Unet<T> {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let levels = cfg.num_streams;
        let w = &cfg.widths;
        let bn = cfg.block.batch_norm;
        let act = cfg.block.activation;
        let stem = AcpUnit::new(
            store,
            &format!("{name}.stem"),
            cfg.in_channels,
            w[0],
            cfg.kernel_scale(0),
            &cfg.block,
            rng,
        )?;
        let mut down = Vec::new();
        let mut encoder = Vec::with_capacity(levels);
        for l in 0..levels {
            if l > 0 {
                down.push(SharedMlp::new(store, &format!("{name}.down{l}"), w[l - 1], w[l], bn, act, rng));
            }
            let mut blocks = Vec::with_capacity(cfg.blocks_per_stage);
            for b in 0..cfg.blocks_per_stage {
                blocks.push(Block::new(
                    cfg.block_kind,
                    store,
                    &format!("{name}.enc{l}.b{b}"),
                    w[l],
                    w[l],
                    cfg.kernel_scale(l),
                    &cfg.block,
                    rng,
                )?);
            }
            encoder.push(blocks);
        }
        // up[i] lifts level i+1 onto level i.
        let mut up = Vec::new();
        for l in 0..levels.saturating_sub(1) {
            up.push(SharedMlp::new(store, &format!("{name}.up{l}"), w[l + 1] + w[l], w[l], bn, act, rng));
        }
        let decoder = SharedMlp::new(store, &format!("{name}.decoder"), w[0], cfg.head_width, bn, act, rng);
        let classifier = Linear::new(
            store,
            &format!("{name}.classifier"),
            cfg.head_width,
            cfg.num_classes,
            true,
            rng,
        );
        Ok(Self {
            config: cfg.clone(),
            stem,
            down,
            encoder,
            up,
            decoder,
            classifier,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, pyramid: &ResolutionPyramid<T>, input: Var) -> Result<NetOutput> {
        check_input(g, &self.config, pyramid, input)?;
        let mut x = self.stem.forward(g, input, pyramid.level(0).neighborhood())?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (l, blocks) in self.encoder.iter().enumerate() {
            if l > 0 {
                let pooled = max_pool(g, x, pyramid.pool_index(l - 1, l)?, pyramid.m)?;
                x = self.down[l - 1].forward(g, pooled)?;
            }
            let nb = pyramid.level(l).neighborhood();
            for block in blocks {
                x = block.forward(g, x, nb)?;
            }
            skips.push(x);
        }
        for l in (0..self.up.len()).rev() {
            let lifted = g.sparse_aggregate(x, pyramid.interp_map(l + 1, l)?)?;
            let joined = g.concat(&[lifted, skips[l]], 1)?;
            x = self.up[l].forward(g, joined)?;
        }
        let features = self.decoder.forward(g, x)?;
        let logits = self.classifier.forward(g, features)?;
        Ok(NetOutput {
            features,
            logits,
            exchange_shapes: Vec::new(),
        })
    }
}
