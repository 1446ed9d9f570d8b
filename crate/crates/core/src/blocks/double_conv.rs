use rand::Rng;

use crate::engine::{join, BatchNorm2d, Conv2d, ConvSpec, Layer, Mode, Param, Relu};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

/// The ordinary U-Net level: `(3x3 conv, pad 1 -> BN -> ReLU)` twice.
#[derive(Debug, Clone)]
pub struct DoubleConv<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    relu2: Relu<T>,
}

impl<T: Scalar> DoubleConv<T> {
    pub fn new(in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(ConvSpec::new(in_channels, out_channels, 3, 1))?,
            bn1: BatchNorm2d::new(out_channels),
            relu1: Relu::new(),
            conv2: Conv2d::new(ConvSpec::new(out_channels, out_channels, 3, 1))?,
            bn2: BatchNorm2d::new(out_channels),
            relu2: Relu::new(),
        })
    }

    pub fn specs(&self) -> [ConvSpec; 2] {
        [*self.conv1.spec(), *self.conv2.spec()]
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.conv1.init(rng);
        self.conv2.init(rng);
    }
}

impl<T: Scalar> Layer<T> for DoubleConv<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let a = self.conv1.forward(x, mode)?;
        let a = self.bn1.forward(&a, mode)?;
        let a = self.relu1.forward(&a, mode)?;
        let a = self.conv2.forward(&a, mode)?;
        let a = self.bn2.forward(&a, mode)?;
        self.relu2.forward(&a, mode)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.relu2.backward(grad_y)?;
        let g = self.bn2.backward(&g)?;
        let g = self.conv2.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        self.conv1.backward(&g)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_params_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_params_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_params_mut(&join(prefix, "bn2"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>)) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        self.bn1.visit_buffers_mut(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers_mut(&join(prefix, "bn2"), f);
    }
}
