//! The residual classifier: a stem convolution, five blocks of residual
//! units, two max-pool stages and one fully connected head.
//!
//! A residual unit computes `y = shortcut(x) + branch(x)`. The branch is one
//! (single-layer skip) or two (double-layer skip) `ReLU -> conv -> BN`
//! stages. The shortcut is the identity, or a 1x1 projection convolution
//! when the channel count changes. The last batch-norm scale of each branch
//! starts at zero, so every unit is exactly its shortcut at initialization.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::{
    BatchNorm, Conv2d, Layer, LayerCache, LayerKind, Linear, MaxPool2d, Network, NnError,
};
use crate::tensor::Tensor;

/// Conv layers in the reference layout.
pub const REFERENCE_CONVS: usize = 32;
pub const REFERENCE_POOLS: usize = 2;
pub const REFERENCE_FCS: usize = 1;
pub const REFERENCE_BLOCKS: usize = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SkipMode {
    /// Each skip bypasses one convolution.
    #[default]
    SingleLayer,
    /// Each skip bypasses two convolutions.
    DoubleLayer,
}

impl SkipMode {
    pub fn convs_per_unit(self) -> usize {
        match self {
            SkipMode::SingleLayer => 1,
            SkipMode::DoubleLayer => 2,
        }
    }
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipMode::SingleLayer => "single",
            SkipMode::DoubleLayer => "double",
        })
    }
}

impl FromStr for SkipMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(SkipMode::SingleLayer),
            "double" => Ok(SkipMode::DoubleLayer),
            _ => Err(format!(
                "unknown skip mode `{s}` (expected single or double)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// `(C, H, W)` of one input sample.
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    /// Convolutions per block.
    pub block_convs: Vec<usize>,
    /// Output channels per block.
    pub channels: Vec<usize>,
    pub skip_mode: SkipMode,
    /// One plain `conv -> BN` in front of the first block.
    pub stem: bool,
    /// 1-based block numbers followed by a 2x2 max pool.
    pub maxpool_after: Vec<usize>,
    pub kernel_size: usize,
    /// Enforce the reference layout: 5 blocks, 32 convs, 2 pools.
    pub reference_layout: bool,
}

impl ModelConfig {
    /// Stem + 5 x 6 residual convs + one projection where the width doubles
    /// after the first pool: 1 + 30 + 1 = 32 convolutions.
    pub fn reference_default(input_shape: (usize, usize, usize), num_classes: usize) -> Self {
        Self {
            input_shape,
            num_classes,
            block_convs: vec![6; REFERENCE_BLOCKS],
            channels: vec![16, 16, 32, 32, 32],
            skip_mode: SkipMode::SingleLayer,
            stem: true,
            maxpool_after: vec![2, 4],
            kernel_size: 3,
            reference_layout: true,
        }
    }

    fn unit_channels(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut current = if self.stem {
            self.channels[0]
        } else {
            self.input_shape.0
        };
        let per_unit = self.skip_mode.convs_per_unit();
        self.block_convs
            .iter()
            .zip(&self.channels)
            .enumerate()
            .flat_map(move |(b, (&convs, &out))| {
                (0..convs / per_unit)
                    .map(move |_| b)
                    .zip(std::iter::repeat(out))
            })
            .map(move |(b, out)| {
                let c_in = current;
                current = out;
                (b, c_in, out)
            })
    }

    /// Projection convolutions implied by channel changes between units.
    pub fn projection_count(&self) -> usize {
        self.unit_channels().filter(|(_, i, o)| i != o).count()
    }

    pub fn conv_count(&self) -> usize {
        usize::from(self.stem) + self.block_convs.iter().sum::<usize>() + self.projection_count()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return err(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            ));
        }
        if self.num_classes < 2 {
            return err(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.block_convs.is_empty() || self.block_convs.len() != self.channels.len() {
            return err(format!(
                "block_convs ({}) and channels ({}) must be non-empty and equally long",
                self.block_convs.len(),
                self.channels.len()
            ));
        }
        if self.block_convs.contains(&0) || self.channels.contains(&0) {
            return err("every block needs at least one conv and one channel".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return err(format!("kernel size {} must be odd", self.kernel_size));
        }
        let per_unit = self.skip_mode.convs_per_unit();
        if self.block_convs.iter().any(|n| n % per_unit != 0) {
            return err(format!(
                "double-layer skips need an even conv count per block, got {:?}",
                self.block_convs
            ));
        }
        let mut pools = self.maxpool_after.clone();
        pools.sort_unstable();
        pools.dedup();
        if pools.len() != REFERENCE_POOLS || self.maxpool_after.len() != REFERENCE_POOLS {
            return err(format!(
                "maxpool_after must name exactly {REFERENCE_POOLS} distinct blocks, got {:?}",
                self.maxpool_after
            ));
        }
        if pools.iter().any(|&b| b == 0 || b > self.block_convs.len()) {
            return err(format!(
                "maxpool_after {:?} names a missing block",
                self.maxpool_after
            ));
        }
        let factor = 1 << REFERENCE_POOLS;
        if h % factor != 0 || w % factor != 0 {
            return err(format!(
                "input {h}x{w} is not divisible by {factor} for the two max pools"
            ));
        }
        if self.reference_layout {
            if self.block_convs.len() != REFERENCE_BLOCKS {
                return err(format!(
                    "reference layout needs {REFERENCE_BLOCKS} blocks, got {}",
                    self.block_convs.len()
                ));
            }
            let convs = self.conv_count();
            if convs != REFERENCE_CONVS {
                return err(format!(
                    "reference layout needs {REFERENCE_CONVS} convs, config gives {convs}"
                ));
            }
        }
        Ok(())
    }
}

/// One skip-connected unit of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualUnit {
    /// 0-based block number.
    pub block: usize,
    /// Layer indices of the residual branch.
    pub branch: Range<usize>,
    /// Layer index of the 1x1 projection on the shortcut, if any.
    pub projection: Option<usize>,
    /// False once the skip has been removed with [`Model::remove_skip`].
    pub skip: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Layer(usize),
    Unit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCounts {
    pub convs: usize,
    pub pools: usize,
    pub fcs: usize,
}

impl fmt::Display for LayerCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "convs={} pools={} fcs={}",
            self.convs, self.pools, self.fcs
        )
    }
}

/// Input, shortcut value and output of one unit in an inference pass.
#[derive(Debug, Clone)]
pub struct UnitTrace {
    pub input: Tensor,
    pub shortcut: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<Layer>,
    units: Vec<ResidualUnit>,
    plan: Vec<Step>,
}

#[derive(Debug)]
pub enum StepTape {
    Layer(LayerCache),
    Unit {
        projection: Option<LayerCache>,
        branch: Vec<LayerCache>,
    },
}

impl Model {
    /// Builds and initializes a model. Deterministic in `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel_size;
        let pad = k / 2;
        let mut layers = Vec::new();
        let mut plan = Vec::new();
        let mut units = Vec::new();
        let push = |layers: &mut Vec<Layer>, plan: Option<&mut Vec<Step>>, layer: Layer| {
            layers.push(layer);
            if let Some(plan) = plan {
                plan.push(Step::Layer(layers.len() - 1));
            }
            layers.len() - 1
        };

        if config.stem {
            let conv = Conv2d::he_init(
                config.input_shape.0,
                config.channels[0],
                k,
                1,
                pad,
                &mut rng,
            )?;
            push(&mut layers, Some(&mut plan), Layer::Conv2d(conv));
            push(
                &mut layers,
                Some(&mut plan),
                Layer::BatchNorm(BatchNorm::new(config.channels[0])?),
            );
        }

        let per_unit = config.skip_mode.convs_per_unit();
        let unit_list: Vec<_> = config.unit_channels().collect();
        let (mut h, mut w) = (config.input_shape.1, config.input_shape.2);
        for (i, &(block, c_in, c_out)) in unit_list.iter().enumerate() {
            let projection = if c_in != c_out {
                let conv = Conv2d::he_init(c_in, c_out, 1, 1, 0, &mut rng)?;
                Some(push(&mut layers, None, Layer::Conv2d(conv)))
            } else {
                None
            };
            let start = layers.len();
            let mut ch = c_in;
            for _ in 0..per_unit {
                push(&mut layers, None, Layer::Relu);
                let conv = Conv2d::he_init(ch, c_out, k, 1, pad, &mut rng)?;
                push(&mut layers, None, Layer::Conv2d(conv));
                push(&mut layers, None, Layer::BatchNorm(BatchNorm::new(c_out)?));
                ch = c_out;
            }
            if let Some(Layer::BatchNorm(bn)) = layers.last_mut() {
                bn.gamma.fill(0.0);
            }
            units.push(ResidualUnit {
                block,
                branch: start..layers.len(),
                projection,
                skip: true,
            });
            plan.push(Step::Unit(units.len() - 1));

            let last_of_block = unit_list.get(i + 1).is_none_or(|next| next.0 != block);
            if last_of_block && config.maxpool_after.contains(&(block + 1)) {
                push(
                    &mut layers,
                    Some(&mut plan),
                    Layer::MaxPool2d(MaxPool2d::default()),
                );
                h /= 2;
                w /= 2;
            }
        }

        let features = config.channels[config.channels.len() - 1] * h * w;
        push(&mut layers, Some(&mut plan), Layer::Relu);
        let fc = Linear::init(features, config.num_classes, &mut rng)?;
        push(&mut layers, Some(&mut plan), Layer::FullyConnected(fc));

        Ok(Self {
            config,
            layers,
            units,
            plan,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn units(&self) -> &[ResidualUnit] {
        &self.units
    }

    /// `(first, last)` layer index of every active skip's bypassed branch.
    pub fn skip_edges(&self) -> Vec<(usize, usize)> {
        self.units
            .iter()
            .filter(|u| u.skip)
            .map(|u| (u.branch.start, u.branch.end - 1))
            .collect()
    }

    pub fn count_layers(&self) -> LayerCounts {
        let count = |kind| self.layers.iter().filter(|l| l.kind() == kind).count();
        LayerCounts {
            convs: count(LayerKind::Conv2d),
            pools: count(LayerKind::MaxPool2d),
            fcs: count(LayerKind::FullyConnected),
        }
    }

    /// Drops the shortcut of one unit, leaving only its branch.
    pub fn remove_skip(&mut self, unit: usize) {
        self.units[unit].skip = false;
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let (_, c, h, w) = x.dims4()?;
        if (c, h, w) != self.config.input_shape {
            return Err(NnError::Config(format!(
                "model expects samples of shape {:?}, got {:?}",
                self.config.input_shape,
                (c, h, w)
            )));
        }
        Ok(())
    }

    fn infer_unit(&self, unit: &ResidualUnit, x: &Tensor) -> Result<(Tensor, Tensor), NnError> {
        let shortcut = match unit.projection {
            Some(p) => self.layers[p].infer(x)?,
            None => x.clone(),
        };
        let mut h = x.clone();
        for i in unit.branch.clone() {
            h = self.layers[i].infer(&h)?;
        }
        if unit.skip {
            h.add_assign(&shortcut)?;
        }
        Ok((h, shortcut))
    }

    /// Inference pass recording every unit's input, shortcut and output.
    pub fn trace_units(&self, x: &Tensor) -> Result<Vec<UnitTrace>, NnError> {
        self.check_input(x)?;
        let mut traces = Vec::with_capacity(self.units.len());
        let mut h = x.clone();
        for step in &self.plan {
            h = match *step {
                Step::Layer(i) => self.layers[i].infer(&h)?,
                Step::Unit(u) => {
                    let (out, shortcut) = self.infer_unit(&self.units[u], &h)?;
                    traces.push(UnitTrace {
                        input: h,
                        shortcut,
                        output: out.clone(),
                    });
                    out
                }
            };
        }
        Ok(traces)
    }

    /// Logits for a `(N, C, H, W)` batch.
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor, NnError> {
        if training {
            Ok(self.forward_train(x)?.0)
        } else {
            self.infer(x)
        }
    }
}

impl Network for Model {
    type Tape = Vec<StepTape>;

    fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for step in &self.plan {
            h = match *step {
                Step::Layer(i) => self.layers[i].infer(&h)?,
                Step::Unit(u) => self.infer_unit(&self.units[u], &h)?.0,
            };
        }
        Ok(h)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Self::Tape), NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut tape = Vec::with_capacity(self.plan.len());
        for step in &self.plan {
            match *step {
                Step::Layer(i) => {
                    let (y, cache) = self.layers[i].forward_train(h)?;
                    tape.push(StepTape::Layer(cache));
                    h = y;
                }
                Step::Unit(u) => {
                    let unit = &self.units[u];
                    let (shortcut, projection) = match unit.projection {
                        Some(p) => {
                            let (y, cache) = self.layers[p].forward_train(h.clone())?;
                            (y, Some(cache))
                        }
                        None => (h.clone(), None),
                    };
                    let mut branch = Vec::with_capacity(unit.branch.len());
                    for i in unit.branch.clone() {
                        let (y, cache) = self.layers[i].forward_train(h)?;
                        branch.push(cache);
                        h = y;
                    }
                    if unit.skip {
                        h.add_assign(&shortcut)?;
                    }
                    tape.push(StepTape::Unit { projection, branch });
                }
            }
        }
        Ok((h, tape))
    }

    fn backward(&self, tape: Self::Tape, grad_logits: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut grads: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_logits.clone();
        for (step, entry) in self.plan.iter().zip(tape).rev() {
            match (step, entry) {
                (&Step::Layer(i), StepTape::Layer(cache)) => {
                    let (gx, g) = self.layers[i].backward(&cache, &grad)?;
                    grads[i] = g;
                    grad = gx;
                }
                (&Step::Unit(u), StepTape::Unit { projection, branch }) => {
                    let unit = &self.units[u];
                    let mut g_branch = grad.clone();
                    for (i, cache) in unit.branch.clone().zip(&branch).rev() {
                        let (gx, g) = self.layers[i].backward(cache, &g_branch)?;
                        grads[i] = g;
                        g_branch = gx;
                    }
                    if unit.skip {
                        match (unit.projection, projection) {
                            (Some(p), Some(cache)) => {
                                let (gx, g) = self.layers[p].backward(&cache, &grad)?;
                                grads[p] = g;
                                g_branch.add_assign(&gx)?;
                            }
                            (None, None) => g_branch.add_assign(&grad)?,
                            _ => return Err(NnError::CacheMismatch),
                        }
                    } else if let Some(p) = unit.projection {
                        grads[p] = self.layers[p]
                            .params()
                            .iter()
                            .map(|t| Tensor::zeros(t.shape()))
                            .collect::<Result<_, _>>()?;
                    }
                    grad = g_branch;
                }
                _ => return Err(NnError::CacheMismatch),
            }
        }
        Ok(grads.into_iter().flatten().collect())
    }

    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(blocks: usize) -> ModelConfig {
        ModelConfig {
            input_shape: (2, 8, 8),
            num_classes: 2,
            block_convs: vec![1; blocks],
            channels: (0..blocks).map(|b| 2 + b).collect(),
            skip_mode: SkipMode::SingleLayer,
            stem: false,
            maxpool_after: vec![1, 2],
            kernel_size: 3,
            reference_layout: false,
        }
    }

    #[test]
    fn default_layout_counts() {
        let cfg = ModelConfig::reference_default((4, 32, 32), 2);
        assert_eq!(cfg.projection_count(), 1);
        assert_eq!(cfg.conv_count(), 32);
        let model = Model::build(cfg, 0).unwrap();
        assert_eq!(
            model.count_layers(),
            LayerCounts {
                convs: 32,
                pools: 2,
                fcs: 1
            }
        );
        assert_eq!(model.count_layers().to_string(), "convs=32 pools=2 fcs=1");
        assert_eq!(model.units().len(), 30);
    }

    #[test]
    fn toy_counts_follow_config_walk() {
        // 5 blocks of 1 conv, no stem, input 2 channels, widths 2..=6:
        // channel changes at blocks 2, 3, 4, 5 -> 4 projections
        let cfg = toy(5);
        assert_eq!(cfg.conv_count(), 5 + 4);
        let model = Model::build(cfg, 1).unwrap();
        assert_eq!(model.count_layers().convs, 9);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig::reference_default((4, 32, 32), 2);
        assert_eq!(
            Model::build(cfg.clone(), 5).unwrap(),
            Model::build(cfg.clone(), 5).unwrap()
        );
        assert_ne!(
            Model::build(cfg.clone(), 5).unwrap(),
            Model::build(cfg, 6).unwrap()
        );
    }

    #[test]
    fn skip_edges_span_one_or_two_convs() {
        for (mode, expect) in [(SkipMode::SingleLayer, 1), (SkipMode::DoubleLayer, 2)] {
            let mut cfg = ModelConfig::reference_default((4, 16, 16), 2);
            cfg.skip_mode = mode;
            let model = Model::build(cfg, 0).unwrap();
            for (from, to) in model.skip_edges() {
                let convs = model.layers()[from..=to]
                    .iter()
                    .filter(|l| l.kind() == LayerKind::Conv2d)
                    .count();
                assert_eq!(convs, expect);
            }
        }
    }

    #[test]
    fn config_errors() {
        let mut cfg = ModelConfig::reference_default((4, 32, 32), 2);
        cfg.block_convs = vec![6, 6, 6, 6, 5];
        assert!(matches!(Model::build(cfg, 0), Err(ModelError::Config(_))));

        let cfg = ModelConfig::reference_default((4, 30, 30), 2);
        assert!(Model::build(cfg, 0).is_err());

        let mut cfg = toy(3);
        cfg.block_convs[1] = 0;
        assert!(Model::build(cfg, 0).is_err());

        let mut cfg = toy(3);
        cfg.skip_mode = SkipMode::DoubleLayer;
        assert!(Model::build(cfg, 0).is_err());

        let mut cfg = toy(3);
        cfg.maxpool_after = vec![1];
        assert!(Model::build(cfg, 0).is_err());
    }

    #[test]
    fn logits_shape() {
        let model = Model::build(ModelConfig::reference_default((4, 32, 32), 2), 3).unwrap();
        let x = Tensor::from_fn(&[1, 4, 32, 32], |i| (i as f64 * 0.01).sin()).unwrap();
        assert_eq!(model.infer(&x).unwrap().shape(), &[1, 2]);
        let wrong = Tensor::zeros(&[1, 1, 32, 32]).unwrap();
        assert!(model.infer(&wrong).is_err());
    }
}
