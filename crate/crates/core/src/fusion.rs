//! Two-resolution inference with per-point, per-class attention over the
//! branch probabilities, plus the plain averaging baseline.
//!
//! Both branches see the same level-0 points; they differ in the subsampling
//! radius of their coarser levels. The attention head maps the concatenated
//! branch features to `2C` logits laid out as `[branch * C + class]`, and a
//! softmax across the two branch slots of each class gives `a1 + a2 = 1`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acpconv::AcpConv;
use crate::blocks::{BlockConfig, Neighborhood};
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamStore, Tensor, Var};
use crate::network::{NetOutput, Network, NetworkConfig, ResolutionPyramid};
use crate::scalar::Real;

/// Point convolution producing the `2C` attention logits.
#[derive(Clone, Debug)]
pub struct FusionHead<T> {
    pub conv: AcpConv<T>,
    pub num_classes: usize,
    pub feature_width: usize,
}

impl<T: Real> FusionHead<T> {
    /// The head starts with zero weights, i.e. as an exact average.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        feature_width: usize,
        num_classes: usize,
        kernel_scale: T,
        cfg: &BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = AcpConv::new(
            store,
            name,
            2 * feature_width,
            2 * num_classes,
            cfg.kernel_points,
            kernel_scale,
            T::lit(cfg.theta_deg.to_radians()),
            cfg.aggregation,
            rng,
        )?;
        for &w in &conv.kernel.weights {
            let n = store.tensor(w).numel();
            store.set_values(w, &vec![T::zero(); n])?;
        }
        Ok(Self {
            conv,
            num_classes,
            feature_width,
        })
    }

    /// Attention logits `[N, 2C]`.
    pub fn logits(&self, g: &mut Graph<'_, T>, feats1: Var, feats2: Var, nb: Neighborhood<'_, T>) -> Result<Var> {
        let joined = g.concat(&[feats1, feats2], 1)?;
        self.conv.forward(g, joined, nb.positions, nb.neighbors)
    }
}

/// `(a1, a2)` from `[N, 2C]` logits: softmax over the two branch slots of
/// every (point, class).
pub fn branch_weights<T: Real>(g: &mut Graph<'_, T>, logits: Var, num_classes: usize) -> Result<(Var, Var)> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[1] != 2 * num_classes {
        return Err(Error::ChannelMismatch {
            layer: "attention logits".into(),
            expected: 2 * num_classes,
            actual: shape.get(1).copied().unwrap_or(0),
        });
    }
    let n = shape[0];
    let halves = g.split(logits, 1, &[num_classes, num_classes])?;
    let l1 = g.reshape(halves[0], &[n * num_classes, 1])?;
    let l2 = g.reshape(halves[1], &[n * num_classes, 1])?;
    let pairs = g.concat(&[l1, l2], 1)?;
    let soft = g.softmax(pairs);
    let cols = g.split(soft, 1, &[1, 1])?;
    let a1 = g.reshape(cols[0], &[n, num_classes])?;
    let a2 = g.reshape(cols[1], &[n, num_classes])?;
    Ok((a1, a2))
}

/// `a1 * p1 + a2 * p2` elementwise.
pub fn weighted_fuse<T: Real>(g: &mut Graph<'_, T>, a1: Var, a2: Var, probs1: Var, probs2: Var) -> Result<Var> {
    let t1 = g.mul(a1, probs1)?;
    let t2 = g.mul(a2, probs2)?;
    Ok(g.add(t1, t2)?)
}

#[allow(clippy::too_many_arguments)]
pub fn attention_fuse<T: Real>(
    g: &mut Graph<'_, T>,
    feats1: Var,
    feats2: Var,
    probs1: Var,
    probs2: Var,
    nb: Neighborhood<'_, T>,
    head: &FusionHead<T>,
) -> Result<Var> {
    if g.shape(probs1) != g.shape(probs2) {
        return Err(Error::Graph(crate::graph::GraphError::ShapeMismatch {
            op: "attention_fuse",
            lhs: g.shape(probs1).to_vec(),
            rhs: g.shape(probs2).to_vec(),
        }));
    }
    let logits = head.logits(g, feats1, feats2, nb)?;
    let (a1, a2) = branch_weights(g, logits, head.num_classes)?;
    weighted_fuse(g, a1, a2, probs1, probs2)
}

pub fn average_fuse<T: Real>(g: &mut Graph<'_, T>, probs1: Var, probs2: Var) -> Result<Var> {
    let s = g.add(probs1, probs2)?;
    Ok(g.scale(s, T::lit(0.5)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// One branch on the base radius.
    #[default]
    Single,
    Average,
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Base subsampling radius of the first branch.
    pub r1: f64,
    /// Second branch radius; `2 * r1` when absent.
    pub r2: Option<f64>,
    pub shared_weights: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Single,
            r1: 0.1,
            r2: None,
            shared_weights: true,
        }
    }
}

impl FusionConfig {
    pub fn r2(&self) -> f64 {
        self.r2.unwrap_or(2.0 * self.r1)
    }

    pub fn branch_radii(&self) -> Vec<f64> {
        match self.mode {
            FusionMode::Single => vec![self.r1],
            FusionMode::Average | FusionMode::Attention => vec![self.r1, self.r2()],
        }
    }
}

/// Output of [`SegmentationModel::forward`]: the final class scores plus each
/// branch's raw network output. Single and average modes give distributions;
/// per-class attention gives an elementwise convex mix whose rows sum to 1
/// only when the attention is uniform across classes.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub probs: Var,
    pub branches: Vec<NetOutput>,
    pub branch_probs: Vec<Var>,
    pub attention: Option<(Var, Var)>,
}

/// One or two network branches and the optional attention head.
#[derive(Clone, Debug)]
pub struct SegmentationModel<T> {
    pub fusion: FusionConfig,
    pub networks: Vec<Network<T>>,
    pub head: Option<FusionHead<T>>,
}

impl<T: Real> SegmentationModel<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        net: &NetworkConfig,
        fusion: &FusionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(fusion.r1 >= 0.0) || !(fusion.r2() >= 0.0) {
            return Err(Error::Config("branch radii must be non-negative".into()));
        }
        let two = fusion.mode != FusionMode::Single;
        let mut networks = vec![Network::new(store, "net", net, rng)?];
        if two && !fusion.shared_weights {
            networks.push(Network::new(store, "net2", net, rng)?);
        }
        let head = if fusion.mode == FusionMode::Attention {
            Some(FusionHead::new(
                store,
                "fusion",
                net.head_width,
                net.num_classes,
                net.kernel_scale(0),
                &net.block,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            fusion: fusion.clone(),
            networks,
            head,
        })
    }

    pub fn network_config(&self) -> &NetworkConfig {
        self.networks[0].config()
    }

    /// Builds one pyramid per branch over the same crop positions.
    pub fn pyramids(&self, positions: &[[T; 3]], m: usize, seed: u64) -> Result<Vec<ResolutionPyramid<T>>> {
        let cfg = self.network_config();
        self.fusion
            .branch_radii()
            .iter()
            .enumerate()
            .map(|(b, &r)| {
                ResolutionPyramid::build_with_k(
                    positions,
                    T::lit(r),
                    cfg.num_streams,
                    m,
                    cfg.k_interp,
                    seed.wrapping_add(1000 * b as u64),
                )
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, pyramids: &[ResolutionPyramid<T>], input: Var) -> Result<ModelOutput> {
        let wanted = self.fusion.branch_radii().len();
        if pyramids.len() != wanted {
            return Err(Error::Config(format!(
                "{wanted} pyramids expected, got {}",
                pyramids.len()
            )));
        }
        let mut branches = Vec::with_capacity(wanted);
        let mut branch_probs = Vec::with_capacity(wanted);
        for (b, pyr) in pyramids.iter().enumerate() {
            let net = &self.networks[b.min(self.networks.len() - 1)];
            let out = net.forward(g, pyr, input)?;
            branch_probs.push(g.softmax(out.logits));
            branches.push(out);
        }
        let (probs, attention) = match self.fusion.mode {
            FusionMode::Single => (branch_probs[0], None),
            FusionMode::Average => (average_fuse(g, branch_probs[0], branch_probs[1])?, None),
            FusionMode::Attention => {
                let head = self.head.as_ref().expect("attention head");
                let nb = pyramids[0].level(0).neighborhood();
                let logits = head.logits(g, branches[0].features, branches[1].features, nb)?;
                let (a1, a2) = branch_weights(g, logits, head.num_classes)?;
                let fused = weighted_fuse(g, a1, a2, branch_probs[0], branch_probs[1])?;
                (fused, Some((a1, a2)))
            }
        };
        Ok(ModelOutput {
            probs,
            branches,
            branch_probs,
            attention,
        })
    }

    /// Training loss: mean negative log-likelihood of the final scores after
    /// row normalization. A single branch uses the numerically safer logits
    /// form. Per-class attention rows need not sum to 1, and without the
    /// `log(row sum)` term the loss would reward inflating every class.
    pub fn loss(&self, g: &mut Graph<'_, T>, out: &ModelOutput, targets: Arc<[usize]>) -> Result<Var> {
        Ok(match self.fusion.mode {
            FusionMode::Single => g.cross_entropy_logits(out.branches[0].logits, targets)?,
            FusionMode::Average => g.cross_entropy(out.probs, targets)?,
            FusionMode::Attention => {
                let nll = g.cross_entropy(out.probs, targets)?;
                let c = self.network_config().num_classes;
                let ones = g.constant(Tensor::filled(&[c, 1], T::one()));
                let sums = g.matmul(out.probs, ones)?;
                let log_sums = g.log(sums);
                let norm = g.mean(log_sums);
                g.add(nll, norm)?
            }
        })
    }
}
