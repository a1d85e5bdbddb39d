//! Small controlled comparisons: block kind under each architecture, and the
//! single-branch, average and attention fusion variants.

use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::BlockKind;
use crate::data::DatasetConfig;
use crate::error::Result;
use crate::fusion::{FusionConfig, FusionMode};
use crate::geometry::PointCloud;
use crate::network::{Architecture, NetworkConfig};
use crate::pipeline::train::{TrainConfig, Trainer};
use crate::pipeline::voting::{evaluate_with_voting, VotingConfig};

#[derive(Clone, Debug)]
pub struct AblationSetup {
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub eval: VotingConfig,
    pub seeds: Vec<u64>,
}

/// Scores of one configuration, one entry per seed.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub params: usize,
    pub miou: Vec<f64>,
    pub oa: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

impl AblationRow {
    pub fn mean_miou(&self) -> f64 {
        mean(&self.miou)
    }

    pub fn mean_oa(&self) -> f64 {
        mean(&self.oa)
    }
}

/// One named configuration of the grid.
#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub network: NetworkConfig,
    pub fusion: FusionConfig,
}

/// Trains and evaluates every variant under every seed (in parallel) on the
/// same train/test split.
pub fn run_variants(setup: &AblationSetup, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    let (train, test) = setup.dataset.split::<f64>()?;
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| setup.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let scores: Vec<(usize, usize, f64, f64)> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let (params, miou, oa) = train_and_score(setup, &variants[v], seed, &train, &test)?;
            Ok((v, params, miou, oa))
        })
        .collect::<Result<_>>()?;
    Ok(variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let mine: Vec<_> = scores.iter().filter(|s| s.0 == v).collect();
            AblationRow {
                name: variant.name.clone(),
                params: mine.first().map_or(0, |s| s.1),
                miou: mine.iter().map(|s| s.2).collect(),
                oa: mine.iter().map(|s| s.3).collect(),
            }
        })
        .collect())
}

fn train_and_score(
    setup: &AblationSetup,
    variant: &Variant,
    seed: u64,
    train: &[PointCloud<f64>],
    test: &[PointCloud<f64>],
) -> Result<(usize, f64, f64)> {
    let cfg = TrainConfig {
        seed,
        ..setup.train.clone()
    };
    let mut trainer = Trainer::<f64>::new(&variant.network, &variant.fusion, &cfg)?;
    trainer.run(train, |_| {})?;
    let eval = VotingConfig {
        seed,
        ..setup.eval.clone()
    };
    let (metrics, _, _) = evaluate_with_voting(&trainer.store, &trainer.model, test, &eval)?;
    Ok((trainer.store.num_trainable(), metrics.miou, metrics.oa))
}

/// Bottleneck and MSS blocks under each requested architecture, single branch.
pub fn block_variants(setup: &AblationSetup, architectures: &[Architecture]) -> Vec<Variant> {
    let mut out = Vec::new();
    for &arch in architectures {
        for kind in [BlockKind::Bottleneck, BlockKind::Mss] {
            let arch_name = match arch {
                Architecture::Hrnet => "hrnet",
                Architecture::Unet => "unet",
            };
            let kind_name = match kind {
                BlockKind::Mss => "mss",
                BlockKind::Bottleneck => "bottleneck",
            };
            out.push(Variant {
                name: format!("{arch_name}/{kind_name}"),
                network: NetworkConfig {
                    architecture: arch,
                    block_kind: kind,
                    ..setup.network.clone()
                },
                fusion: FusionConfig {
                    mode: FusionMode::Single,
                    ..setup.fusion.clone()
                },
            });
        }
    }
    out
}

/// Rows `scale1`, `scale2`, `average`, `attention`.
pub fn fusion_variants(setup: &AblationSetup) -> Vec<Variant> {
    let base = &setup.fusion;
    let single = |r: f64| FusionConfig {
        mode: FusionMode::Single,
        r1: r,
        r2: None,
        ..base.clone()
    };
    let fused = |mode| FusionConfig { mode, ..base.clone() };
    [
        ("scale1", single(base.r1)),
        ("scale2", single(base.r2())),
        ("average", fused(FusionMode::Average)),
        ("attention", fused(FusionMode::Attention)),
    ]
    .into_iter()
    .map(|(name, fusion)| Variant {
        name: name.to_string(),
        network: setup.network.clone(),
        fusion,
    })
    .collect()
}
