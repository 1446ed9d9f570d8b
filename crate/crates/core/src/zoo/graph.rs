use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Block, BlockKind};
use crate::engine::{
    join, BatchNorm2d, Conv2d, ConvSpec, Layer, MaxPool2d, Mode, Param, Relu, Sigmoid,
    TransposedConv2d,
};
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, split_channels, Scalar, Tensor4};

/// Pooling levels; inputs must be divisible by `2^LEVELS`.
pub const LEVELS: usize = 4;

/// Channel ladder of the full-size models.
pub const FULL_WIDTHS: [usize; LEVELS + 1] = [64, 128, 256, 512, 1024];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub block_kind: BlockKind,
    pub widths: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ModelConfig {
    /// Full-size ladder, 3 input channels, 1 output channel.
    pub fn new(block_kind: BlockKind) -> Self {
        Self {
            block_kind,
            widths: FULL_WIDTHS.to_vec(),
            in_channels: 3,
            out_channels: 1,
        }
    }

    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.widths = widths.to_vec();
        self
    }

    pub fn with_in_channels(mut self, in_channels: usize) -> Self {
        self.in_channels = in_channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != LEVELS + 1 {
            return Err(Error::Config(format!(
                "width ladder needs {} entries, got {:?}",
                LEVELS + 1,
                self.widths
            )));
        }
        if self.widths[0] == 0 || self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "width ladder must be positive and strictly increasing: {:?}",
                self.widths
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("in/out channels must be positive".into()));
        }
        Ok(())
    }
}

/// Decoder upsampler: 3x3 stride-2 transposed conv, BN, ReLU.
#[derive(Debug, Clone)]
pub struct UpConv<T> {
    pub tconv: TransposedConv2d<T>,
    pub bn: BatchNorm2d<T>,
    relu: Relu<T>,
}

impl<T: Scalar> UpConv<T> {
    pub fn new(in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            tconv: TransposedConv2d::upsample2x(in_channels, out_channels)?,
            bn: BatchNorm2d::new(out_channels),
            relu: Relu::new(),
        })
    }
}

impl<T: Scalar> Layer<T> for UpConv<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let a = self.tconv.forward(x, mode)?;
        let a = self.bn.forward(&a, mode)?;
        self.relu.forward(&a, mode)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.relu.backward(grad_y)?;
        let g = self.bn.backward(&g)?;
        self.tconv.backward(&g)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.tconv.visit_params(&join(prefix, "tconv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.tconv.visit_params_mut(&join(prefix, "tconv"), f);
        self.bn.visit_params_mut(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        self.bn.visit_buffers_mut(&join(prefix, "bn"), f);
    }
}

#[derive(Debug, Clone)]
pub enum Node<T> {
    Block(Block<T>),
    MaxPool(MaxPool2d),
    Up(UpConv<T>),
    /// Concatenates the saved output of node `skip` (first) with the running activation.
    Concat {
        skip: usize,
    },
    Head(Conv2d<T>),
    Sigmoid(Sigmoid<T>),
}

impl<T: Scalar> Node<T> {
    fn layer(&self) -> Option<&dyn Layer<T>> {
        match self {
            Node::Block(b) => Some(b),
            Node::MaxPool(p) => Some(p),
            Node::Up(u) => Some(u),
            Node::Head(h) => Some(h),
            Node::Sigmoid(s) => Some(s),
            Node::Concat { .. } => None,
        }
    }

    fn layer_mut(&mut self) -> Option<&mut dyn Layer<T>> {
        match self {
            Node::Block(b) => Some(b),
            Node::MaxPool(p) => Some(p),
            Node::Up(u) => Some(u),
            Node::Head(h) => Some(h),
            Node::Sigmoid(s) => Some(s),
            Node::Concat { .. } => None,
        }
    }
}

/// Which block's output to expose for visualization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLevel {
    /// Output of the first encoder block.
    First,
    /// Output of the last decoder block (the head's input).
    Last,
}

/// Ordered node list plus skip edges; executes forward/backward and is walked by the cost model.
#[derive(Debug, Clone)]
pub struct LayerGraph<T> {
    config: ModelConfig,
    nodes: Vec<(String, Node<T>)>,
    // Channels contributed by the skip operand at each concat node, set during forward.
    skip_channels: Vec<usize>,
}

/// Build the encoder/decoder graph for `cfg`, initializing weights from `seed`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<LayerGraph<T>> {
    let mut g = LayerGraph::uninit(cfg)?;
    g.init(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(g)
}

impl<T: Scalar> LayerGraph<T> {
    /// Graph with zero kernels, identity BN and zero biases.
    pub fn uninit(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let w = &cfg.widths;
        let kind = cfg.block_kind;
        let mut nodes: Vec<(String, Node<T>)> = Vec::new();
        let mut encoder_out = Vec::new();
        let mut c = cfg.in_channels;
        for (level, &width) in w.iter().enumerate().take(LEVELS) {
            nodes.push((
                format!("enc{level}"),
                Node::Block(Block::new(kind, c, width)?),
            ));
            encoder_out.push(nodes.len() - 1);
            nodes.push((format!("pool{level}"), Node::MaxPool(MaxPool2d::new())));
            c = width;
        }
        nodes.push((
            "bottleneck".into(),
            Node::Block(Block::new(kind, c, w[LEVELS])?),
        ));
        c = w[LEVELS];
        for level in (0..LEVELS).rev() {
            let width = w[level];
            nodes.push((format!("up{level}"), Node::Up(UpConv::new(c, width)?)));
            nodes.push((
                format!("cat{level}"),
                Node::Concat {
                    skip: encoder_out[level],
                },
            ));
            nodes.push((
                format!("dec{level}"),
                Node::Block(Block::new(kind, 2 * width, width)?),
            ));
            c = width;
        }
        let head = ConvSpec::new(c, cfg.out_channels, 1, 0);
        nodes.push(("head".into(), Node::Head(Conv2d::new(head)?)));
        nodes.push(("sigmoid".into(), Node::Sigmoid(Sigmoid::new())));
        let n = nodes.len();
        Ok(Self {
            config: cfg.clone(),
            nodes,
            skip_channels: vec![0; n],
        })
    }

    /// Kaiming-uniform kernels in node order, zero biases, identity BN.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for (_, node) in &mut self.nodes {
            match node {
                Node::Block(b) => b.init(rng),
                Node::Up(u) => u.tconv.init(rng),
                Node::Head(h) => h.init(rng),
                Node::MaxPool(_) | Node::Concat { .. } | Node::Sigmoid(_) => {}
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, &Node<T>)> {
        self.nodes.iter().map(|(n, node)| (n.as_str(), node))
    }

    pub fn nodes_mut(&mut self) -> impl Iterator<Item = (&str, &mut Node<T>)> {
        self.nodes.iter_mut().map(|(n, node)| (n.as_str(), node))
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let div = 1 << LEVELS;
        if c != self.config.in_channels {
            return Err(Error::shape(
                "model forward",
                format!(
                    "input has {c} channels, model expects {}",
                    self.config.in_channels
                ),
            ));
        }
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::shape(
                "model forward",
                format!("spatial size {h}x{w} is not divisible by {div}; resize or crop the input"),
            ));
        }
        Ok(())
    }

    fn block_index(&self, level: FeatureLevel) -> usize {
        let mut blocks = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, (_, n))| matches!(n, Node::Block(_)))
            .map(|(i, _)| i);
        match level {
            FeatureLevel::First => blocks.next(),
            FeatureLevel::Last => blocks.next_back(),
        }
        .expect("graph has blocks")
    }

    /// Forward pass that also returns the outputs of the nodes listed in `taps`.
    fn run(
        &mut self,
        x: &Tensor4<T>,
        mode: Mode,
        taps: &[usize],
    ) -> Result<(Tensor4<T>, Vec<Tensor4<T>>)> {
        self.check_input(x)?;
        let n = self.nodes.len();
        let mut is_source = vec![false; n];
        for (_, node) in &self.nodes {
            if let Node::Concat { skip } = node {
                is_source[*skip] = true;
            }
        }
        let mut saved: Vec<Option<Tensor4<T>>> = vec![None; n];
        let mut tapped = Vec::with_capacity(taps.len());
        let mut a = x.clone();
        for i in 0..n {
            a = match &mut self.nodes[i].1 {
                Node::Concat { skip } => {
                    let s = saved[*skip]
                        .as_ref()
                        .ok_or_else(|| Error::shape("concat", "skip source has not run"))?;
                    self.skip_channels[i] = s.channels();
                    concat_channels(s, &a)?
                }
                node => node
                    .layer_mut()
                    .expect("non-concat node")
                    .forward(&a, mode)?,
            };
            if is_source[i] {
                saved[i] = Some(a.clone());
            }
            if taps.contains(&i) {
                tapped.push(a.clone());
            }
        }
        Ok((a, tapped))
    }

    /// Probability map with the input's spatial size.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        Ok(self.run(x, mode, &[])?.0)
    }

    pub fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let n = self.nodes.len();
        let mut pending: Vec<Option<Tensor4<T>>> = vec![None; n];
        let mut g = grad_y.clone();
        for i in (0..n).rev() {
            if let Some(p) = pending[i].take() {
                g.add_assign(&p)?;
            }
            g = match &mut self.nodes[i].1 {
                Node::Concat { skip } => {
                    let (gs, gu) = split_channels(&g, self.skip_channels[i])?;
                    let slot = &mut pending[*skip];
                    match slot {
                        Some(acc) => acc.add_assign(&gs)?,
                        None => *slot = Some(gs),
                    }
                    gu
                }
                node => node.layer_mut().expect("non-concat node").backward(&g)?,
            };
        }
        Ok(g)
    }

    /// Per-channel output maps of the first or last block, each `(batch, 1, h, w)`.
    pub fn collect_feature_maps(
        &mut self,
        x: &Tensor4<T>,
        level: FeatureLevel,
        mode: Mode,
    ) -> Result<Vec<Tensor4<T>>> {
        let idx = self.block_index(level);
        let (_, mut tapped) = self.run(x, mode, &[idx])?;
        let maps = tapped.pop().expect("one tap");
        (0..maps.channels())
            .map(|c| maps.slice_channels(c, 1))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        Layer::param_count(self)
    }

    /// The same network in another precision, values rounded to the nearest.
    pub fn cast<U: Scalar>(&self) -> Result<LayerGraph<U>> {
        let mut out = LayerGraph::<U>::uninit(&self.config)?;
        crate::checks::copy_state(self, &mut out);
        Ok(out)
    }
}

impl<T: Scalar> Layer<T> for LayerGraph<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        LayerGraph::forward(self, x, mode)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        LayerGraph::backward(self, grad_y)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (name, node) in &self.nodes {
            if let Some(l) = node.layer() {
                l.visit_params(&join(prefix, name), f);
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (name, node) in &mut self.nodes {
            if let Some(l) = node.layer_mut() {
                l.visit_params_mut(&join(prefix, name), f);
            }
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>)) {
        for (name, node) in &self.nodes {
            if let Some(l) = node.layer() {
                l.visit_buffers(&join(prefix, name), f);
            }
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        for (name, node) in &mut self.nodes {
            if let Some(l) = node.layer_mut() {
                l.visit_buffers_mut(&join(prefix, name), f);
            }
        }
    }
}
