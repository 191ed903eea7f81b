//! Minimal neural-network engine: dense, 3x3 convolution, 2x2 max-pool and
//! ReLU layers with a softmax head, trained by plain mini-batch SGD.

mod arch;
mod network;

pub use arch::{ArchId, Layer, ModelArch, Shape};
pub use network::{argmax, softmax, Network, TrainConfig};

/// A model's trainable parameters flattened into one `f32` sequence, tagged
/// with the architecture that defines the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f32>,
    arch_id: ArchId,
}

impl ParamVector {
    pub fn new(values: Vec<f32>, arch_id: ArchId) -> Self {
        Self { values, arch_id }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn arch_id(&self) -> ArchId {
        self.arch_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same architecture, new values.
    pub fn with_values(&self, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self::new(values, self.arch_id)
    }

    /// Element-wise map preserving the architecture tag.
    pub fn map(&self, f: impl FnMut(f32) -> f32) -> Self {
        self.with_values(self.values.iter().copied().map(f).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bit patterns of every element; equality of these is bitwise equality.
    pub fn to_bits(&self) -> Vec<u32> {
        self.values.iter().map(|v| v.to_bits()).collect()
    }
}

/// Row-major `rows x classes` matrix of softmax outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    rows: usize,
    classes: usize,
    values: Vec<f32>,
}

impl ConfidenceMatrix {
    pub fn new(rows: usize, classes: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), rows * classes, "confidence matrix size");
        Self {
            rows,
            classes,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Borrowed view of a set of samples and their labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    shape: Shape,
    images: &'a [f32],
    labels: &'a [usize],
}

impl<'a> Batch<'a> {
    /// Panics unless `images` holds exactly one `shape`-sized image per label.
    pub fn new(shape: Shape, images: &'a [f32], labels: &'a [usize]) -> Self {
        assert_eq!(images.len(), labels.len() * shape.volume(), "batch size");
        Self {
            shape,
            images,
            labels,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &'a [f32] {
        let v = self.shape.volume();
        &self.images[i * v..(i + 1) * v]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}
