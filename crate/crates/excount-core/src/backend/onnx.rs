//! ONNX model-file backend (feature `onnx`).
//!
//! A JSON sidecar declares the model paths plus input/output tensor names and
//! shapes for the encoder and the prompt/mask decoder. Decoder mask logits
//! are binarized at 0 and upscaled to source resolution by nearest neighbor.
//! Box prompts are decoded through their center point.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tract_onnx::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, BoundingBox, PointPrompt, PromptKind};

use super::{
    ImageEmbedding, ImagePayload, MaskOrigin, MaskRecord, PointDecodeOutcome,
    SegmentationBackend, SourceImage,
};

#[derive(Debug, Clone, Deserialize)]
pub struct OnnxSidecar {
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub decoder: Option<DecoderSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EncoderSpec {
    /// Path to the encoder ONNX file, relative to the sidecar.
    pub model: PathBuf,
    pub input: String,
    pub output: String,
    /// Expected image size as `[height, width]`.
    pub input_size: [usize; 2],
}

#[derive(Debug, Clone, Deserialize)]
pub struct DecoderSpec {
    pub model: PathBuf,
    pub embedding_input: String,
    pub coords_input: String,
    pub labels_input: String,
    pub output: String,
    /// Embedding shape as `[channels, height, width]`.
    pub embedding_shape: [usize; 3],
}

type Runnable = SimplePlan<TypedFact, Box<dyn TypedOp>, Graph<TypedFact, Box<dyn TypedOp>>>;

pub struct OnnxBackend {
    sidecar: OnnxSidecar,
    encoder: Runnable,
    decoder: Option<Runnable>,
}

fn backend_err<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Error + '_ {
    move |e| Error::Backend(format!("{context}: {e}"))
}

impl OnnxBackend {
    /// Load models as declared by a sidecar JSON file.
    pub fn load(sidecar_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(sidecar_path)?;
        let sidecar: OnnxSidecar = serde_json::from_str(&text)?;
        let base = sidecar_path.parent().unwrap_or_else(|| Path::new("."));

        let enc = &sidecar.encoder;
        let [h, w] = enc.input_size;
        let encoder = tract_onnx::onnx()
            .model_for_path(base.join(&enc.model))
            .map_err(backend_err("loading encoder model"))?
            .with_input_names([&enc.input])
            .map_err(backend_err("encoder input name"))?
            .with_output_names([&enc.output])
            .map_err(backend_err("encoder output name"))?
            .with_input_fact(0, f32::fact([1, 3, h, w]).into())
            .map_err(backend_err("encoder input fact"))?
            .into_optimized()
            .map_err(backend_err("optimizing encoder"))?
            .into_runnable()
            .map_err(backend_err("planning encoder"))?;

        let decoder = match &sidecar.decoder {
            None => None,
            Some(dec) => {
                let [c, he, we] = dec.embedding_shape;
                let model = tract_onnx::onnx()
                    .model_for_path(base.join(&dec.model))
                    .map_err(backend_err("loading decoder model"))?
                    .with_input_names([&dec.embedding_input, &dec.coords_input, &dec.labels_input])
                    .map_err(backend_err("decoder input names"))?
                    .with_output_names([&dec.output])
                    .map_err(backend_err("decoder output name"))?
                    .with_input_fact(0, f32::fact([1, c, he, we]).into())
                    .map_err(backend_err("decoder embedding fact"))?
                    .with_input_fact(1, f32::fact([1, 1, 2]).into())
                    .map_err(backend_err("decoder coords fact"))?
                    .with_input_fact(2, f32::fact([1, 1]).into())
                    .map_err(backend_err("decoder labels fact"))?
                    .into_optimized()
                    .map_err(backend_err("optimizing decoder"))?
                    .into_runnable()
                    .map_err(backend_err("planning decoder"))?;
                Some(model)
            }
        };

        Ok(Self { sidecar, encoder, decoder })
    }

    fn image_tensor(&self, image: &SourceImage) -> Result<Tensor> {
        let [h, w] = self.sidecar.encoder.input_size;
        if image.height != h || image.width != w {
            return Err(Error::Backend(format!(
                "encoder expects {h}x{w} input, image is {}x{}",
                image.height, image.width
            )));
        }
        let mut data = vec![0.0f32; 3 * h * w];
        match &image.payload {
            ImagePayload::Rgb8(raw) => {
                for idx in 0..h * w {
                    for c in 0..3 {
                        data[c * h * w + idx] = raw[idx * 3 + c] as f32 / 255.0;
                    }
                }
            }
            ImagePayload::Labels(labels) => {
                for idx in 0..h * w {
                    let v = labels[idx] as f32 / u16::MAX as f32;
                    for c in 0..3 {
                        data[c * h * w + idx] = v;
                    }
                }
            }
        }
        Tensor::from_shape(&[1, 3, h, w], &data).map_err(backend_err("building image tensor"))
    }

    /// Run the decoder for one point; None when the logits select nothing.
    fn decode_one_point(
        &self,
        embedding: &ImageEmbedding,
        x: u32,
        y: u32,
    ) -> Result<Option<BinaryMask>> {
        let decoder = self.decoder.as_ref().ok_or_else(|| {
            Error::Backend("sidecar declares no decoder model".into())
        })?;
        let emb = Tensor::from_shape(
            &[1, embedding.channels, embedding.height, embedding.width],
            &embedding.values,
        )
        .map_err(backend_err("building embedding tensor"))?;
        let coords = Tensor::from_shape(&[1, 1, 2], &[x as f32, y as f32])
            .map_err(backend_err("building coords tensor"))?;
        let labels = Tensor::from_shape(&[1, 1], &[1.0f32])
            .map_err(backend_err("building labels tensor"))?;
        let outputs = decoder
            .run(tvec![emb.into(), coords.into(), labels.into()])
            .map_err(backend_err("running decoder"))?;
        let logits = outputs[0]
            .to_array_view::<f32>()
            .map_err(backend_err("decoder output dtype"))?;
        let shape = logits.shape().to_vec();
        let (h, w) = match shape.as_slice() {
            [.., h, w] => (*h, *w),
            _ => {
                return Err(Error::Backend(format!(
                    "decoder output has unusable shape {shape:?}"
                )))
            }
        };
        let flat: Vec<f32> = logits.iter().copied().collect();
        if flat.len() != h * w {
            return Err(Error::Backend(format!(
                "decoder output {shape:?} is not a single mask"
            )));
        }
        let mut low = BinaryMask::empty(h, w);
        for (idx, &v) in flat.iter().enumerate() {
            if v > 0.0 {
                low.set(idx / w, idx % w, true);
            }
        }
        if low.is_empty() {
            return Ok(None);
        }
        // nearest-neighbor upscale to source resolution
        let (sh, sw) = (embedding.source_h, embedding.source_w);
        let mut full = BinaryMask::empty(sh, sw);
        for sy in 0..sh {
            let ly = (sy * h) / sh;
            for sx in 0..sw {
                let lx = (sx * w) / sw;
                if low.get(ly, lx) {
                    full.set(sy, sx, true);
                }
            }
        }
        Ok(Some(full))
    }
}

impl SegmentationBackend for OnnxBackend {
    fn encode(&self, image: &SourceImage) -> Result<ImageEmbedding> {
        let input = self.image_tensor(image)?;
        let outputs = self
            .encoder
            .run(tvec![input.into()])
            .map_err(backend_err("running encoder"))?;
        let view = outputs[0]
            .to_array_view::<f32>()
            .map_err(backend_err("encoder output dtype"))?;
        let shape = view.shape().to_vec();
        let (c, he, we) = match shape.as_slice() {
            [1, c, h, w] => (*c, *h, *w),
            [c, h, w] => (*c, *h, *w),
            _ => {
                return Err(Error::Backend(format!(
                    "encoder output has unusable shape {shape:?}"
                )))
            }
        };
        ImageEmbedding::new(
            c,
            he,
            we,
            view.iter().copied().collect(),
            image.height,
            image.width,
        )
    }

    fn decode_box(
        &self,
        embedding: &ImageEmbedding,
        _image: &SourceImage,
        prompt: &BoundingBox,
    ) -> Result<MaskRecord> {
        let cx = (prompt.x1 + prompt.x2) / 2;
        let cy = (prompt.y1 + prompt.y2) / 2;
        match self.decode_one_point(embedding, cx, cy)? {
            Some(mask) => Ok(MaskRecord {
                mask,
                origin: MaskOrigin::Exemplar,
                round: 0,
                score: None,
            }),
            None => Err(Error::EmptyExemplar(format!(
                "decoder produced an empty mask for box center ({cx},{cy})"
            ))),
        }
    }

    fn decode_points(
        &self,
        embedding: &ImageEmbedding,
        _image: &SourceImage,
        points: &[PointPrompt],
    ) -> Result<PointDecodeOutcome> {
        let mut outcome = PointDecodeOutcome::default();
        for p in points {
            match self.decode_one_point(embedding, p.x, p.y)? {
                Some(mask) => outcome.records.push(MaskRecord {
                    mask,
                    origin: match p.kind {
                        PromptKind::Matrix => MaskOrigin::Matrix,
                        PromptKind::Residual => MaskOrigin::Residual,
                    },
                    round: 0,
                    score: None,
                }),
                None => outcome.dropped += 1,
            }
        }
        Ok(outcome)
    }
}
