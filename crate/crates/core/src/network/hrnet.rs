use rand::Rng;

use crate::blocks::{AcpUnit, Block};
use crate::error::Result;
use crate::graph::layers::{Activation, Linear, SharedMlp};
use crate::graph::{Graph, ParamStore, Var};
use crate::network::{check_input, max_pool, NetOutput, NetworkConfig, ResolutionPyramid};
use crate::scalar::Real;

/// Channel-matching transfer from stream `from` into stream `to`.
#[derive(Clone, Debug)]
struct Transfer {
    from: usize,
    to: usize,
    mlp: SharedMlp,
}

/// Exchange after a stage: every target stream sums the identity (if it
/// exists already) and the transfers from every other live stream.
#[derive(Clone, Debug)]
struct Exchange {
    sources: usize,
    targets: usize,
    transfers: Vec<Transfer>,
}

/// Parallel-resolution network: stream `k` lives on pyramid level `k` and
/// joins at stage `k`; streams trade features after every stage; a decoder
/// lifts every stream to level 0 and classifies each point.
#[derive(Clone, Debug)]
pub struct HRNet<T> {
    pub config: NetworkConfig,
    stem: AcpUnit<T>,
    stages: Vec<Vec<Vec<Block<T>>>>,
    exchanges: Vec<Option<Exchange>>,
    decoder: SharedMlp,
    classifier: Linear,
}

impl<T: Real> HRNet<T> {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let s_total = cfg.num_streams;
        let w = &cfg.widths;
        let stem = AcpUnit::new(
            store,
            &format!("{name}.stem"),
            cfg.in_channels,
            w[0],
            cfg.kernel_scale(0),
            &cfg.block,
            rng,
        )?;
        let mut stages = Vec::with_capacity(s_total);
        let mut exchanges = Vec::with_capacity(s_total);
        for s in 0..s_total {
            let mut streams = Vec::with_capacity(s + 1);
            for k in 0..=s {
                let mut blocks = Vec::with_capacity(cfg.blocks_per_stage);
                for b in 0..cfg.blocks_per_stage {
                    blocks.push(Block::new(
                        cfg.block_kind,
                        store,
                        &format!("{name}.s{s}.k{k}.b{b}"),
                        w[k],
                        w[k],
                        cfg.kernel_scale(k),
                        &cfg.block,
                        rng,
                    )?);
                }
                streams.push(blocks);
            }
            stages.push(streams);

            let sources = s + 1;
            let targets = (s + 2).min(s_total);
            if targets == 1 {
                exchanges.push(None);
                continue;
            }
            let mut transfers = Vec::new();
            for to in 0..targets {
                for from in 0..sources {
                    if from == to {
                        continue;
                    }
                    let mlp = SharedMlp::new(
                        store,
                        &format!("{name}.x{s}.{from}to{to}"),
                        w[from],
                        w[to],
                        cfg.block.batch_norm,
                        Activation::Identity,
                        rng,
                    );
                    transfers.push(Transfer { from, to, mlp });
                }
            }
            exchanges.push(Some(Exchange {
                sources,
                targets,
                transfers,
            }));
        }
        let lifted: usize = w[..s_total].iter().sum();
        let decoder = SharedMlp::new(
            store,
            &format!("{name}.decoder"),
            lifted + w[0],
            cfg.head_width,
            cfg.block.batch_norm,
            cfg.block.activation,
            rng,
        );
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
            stages,
            exchanges,
            decoder,
            classifier,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, pyramid: &ResolutionPyramid<T>, input: Var) -> Result<NetOutput> {
        check_input(g, &self.config, pyramid, input)?;
        let act = self.config.block.activation;
        let skip = self.stem.forward(g, input, pyramid.level(0).neighborhood())?;
        let mut streams = vec![skip];
        let mut exchange_shapes = Vec::new();

        for (s, stage) in self.stages.iter().enumerate() {
            for (k, blocks) in stage.iter().enumerate() {
                let nb = pyramid.level(k).neighborhood();
                for block in blocks {
                    streams[k] = block.forward(g, streams[k], nb)?;
                }
            }
            let Some(ex) = &self.exchanges[s] else { continue };
            debug_assert_eq!(streams.len(), ex.sources);
            let mut next = Vec::with_capacity(ex.targets);
            for to in 0..ex.targets {
                let mut acc = (to < ex.sources).then(|| streams[to]);
                for t in ex.transfers.iter().filter(|t| t.to == to) {
                    let moved = if t.from < to {
                        let pooled = max_pool(g, streams[t.from], pyramid.pool_index(t.from, to)?, pyramid.m)?;
                        t.mlp.forward(g, pooled)?
                    } else {
                        let mapped = t.mlp.forward(g, streams[t.from])?;
                        let map = pyramid.interp_map(t.from, to)?;
                        g.sparse_aggregate(mapped, map)?
                    };
                    acc = Some(match acc {
                        Some(a) => g.add(a, moved)?,
                        None => moved,
                    });
                }
                let summed = acc.expect("every target has at least one input");
                next.push(act.apply(g, summed));
            }
            streams = next;
            exchange_shapes.push(
                streams
                    .iter()
                    .map(|&v| {
                        let sh = g.shape(v);
                        [sh[0], sh[1]]
                    })
                    .collect(),
            );
        }

        let mut parts = Vec::with_capacity(streams.len() + 1);
        for (k, &x) in streams.iter().enumerate() {
            parts.push(if k == 0 {
                x
            } else {
                let map = pyramid.interp_map(k, 0)?;
                g.sparse_aggregate(x, map)?
            });
        }
        parts.push(skip);
        let joined = g.concat(&parts, 1)?;
        let features = self.decoder.forward(g, joined)?;
        let logits = self.classifier.forward(g, features)?;
        Ok(NetOutput {
            features,
            logits,
            exchange_shapes,
        })
    }
}
