use std::path::Path;

use image::RgbImage;
use sha2::{Digest, Sha256};
use tract_onnx::prelude::*;

use super::{ChannelOrder, EmbedError, EmbedderConfig, EmbeddingBackend, InputLayout};

type Plan = TypedSimplePlan<TypedModel>;

/// Pretrained network loaded from an ONNX file; its first output, flattened,
/// is the embedding.
pub struct OnnxBackend {
    plan: Plan,
    size: u32,
    dimension: usize,
    layout: InputLayout,
    order: ChannelOrder,
    mean: [f32; 3],
    scale: f32,
    fingerprint: String,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend")
            .field("fingerprint", &self.fingerprint)
            .field("size", &self.size)
            .field("dimension", &self.dimension)
            .finish()
    }
}

impl OnnxBackend {
    pub const ID: &'static str = "vggface-pretrained";

    pub fn load(path: &Path, config: &EmbedderConfig, size: u32) -> Result<Self, EmbedError> {
        let bytes = std::fs::read(path).map_err(|e| EmbedError::io(path, e))?;
        let s = size as usize;
        let shape = match config.input_layout {
            InputLayout::Nchw => [1, 3, s, s],
            InputLayout::Nhwc => [1, s, s, 3],
        };
        let fail = |e: TractError| EmbedError::BackendFailure(format!("{}: {e:#}", path.display()));
        let plan = tract_onnx::onnx()
            .model_for_read(&mut bytes.as_slice())
            .map_err(fail)?
            .with_input_fact(0, f32::fact(shape).into())
            .map_err(fail)?
            .into_optimized()
            .map_err(fail)?
            .into_runnable()
            .map_err(fail)?;
        let digest = hex::encode(&Sha256::digest(&bytes)[..8]);
        let mut backend = Self {
            plan,
            size,
            dimension: config.dimension,
            layout: config.input_layout,
            order: config.channel_order,
            mean: config.mean,
            scale: config.scale,
            fingerprint: String::new(),
        };
        backend.fingerprint = format!(
            "{}-{digest}-{}",
            Self::ID,
            &hex::encode(Sha256::digest(
                serde_json::to_vec(&(size, backend.layout, backend.order, backend.mean, backend.scale))
                    .expect("serializes")
            ))[..8]
        );
        let probe = backend.run(&RgbImage::new(size, size))?;
        if probe.len() != backend.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: backend.dimension,
                found: probe.len(),
            });
        }
        Ok(backend)
    }

    fn input_tensor(&self, image: &RgbImage) -> Tensor {
        let s = self.size as usize;
        let channel = |p: &image::Rgb<u8>, c: usize| {
            let src = match self.order {
                ChannelOrder::Rgb => c,
                ChannelOrder::Bgr => 2 - c,
            };
            (p.0[src] as f32 - self.mean[c]) * self.scale
        };
        match self.layout {
            InputLayout::Nchw => tract_ndarray::Array4::from_shape_fn((1, 3, s, s), |(_, c, y, x)| {
                channel(image.get_pixel(x as u32, y as u32), c)
            })
            .into(),
            InputLayout::Nhwc => tract_ndarray::Array4::from_shape_fn((1, s, s, 3), |(_, y, x, c)| {
                channel(image.get_pixel(x as u32, y as u32), c)
            })
            .into(),
        }
    }

    fn run(&self, image: &RgbImage) -> Result<Vec<f32>, EmbedError> {
        let out = self
            .plan
            .run(tvec!(self.input_tensor(image).into()))
            .map_err(|e| EmbedError::BackendFailure(format!("{e:#}")))?;
        let view = out[0]
            .to_array_view::<f32>()
            .map_err(|e| EmbedError::BackendFailure(format!("{e:#}")))?;
        Ok(view.iter().copied().collect())
    }
}

impl EmbeddingBackend for OnnxBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, image: &RgbImage) -> Result<Vec<f32>, EmbedError> {
        if image.dimensions() != (self.size, self.size) {
            return Err(EmbedError::InvalidInput(format!(
                "expected a {0}×{0} frame, got {1}×{2}",
                self.size,
                image.width(),
                image.height()
            )));
        }
        self.run(image)
    }
}
