use std::str::FromStr;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Deserialize;
use serde_json::json;

use super::prediction::{
    BBox, ClassProbs, Detection, DetectionSet, Prediction, SegProbMap, SIMPLEX_TOL_F32, SIMPLEX_TOL_U8,
};
use super::PredictionService;
use crate::error::{Error, Result};
use crate::http::HttpTransport;
use crate::image::ImageRecord;
use crate::numeric::softmax;
use crate::retry::RetryPolicy;
use crate::task::TaskKind;
use crate::tensor::{DType, Tensor};

/// What a service puts in its tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputConvention {
    #[default]
    Probs,
    /// Raw scores; the client applies a softmax over the class axis.
    Logits,
}

impl FromStr for OutputConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probs" => Ok(OutputConvention::Probs),
            "logits" => Ok(OutputConvention::Logits),
            other => Err(Error::Config(format!("unknown output convention `{other}`"))),
        }
    }
}

/// Client for a remote model speaking `POST /v1/predict`.
#[derive(Debug, Clone)]
pub struct HttpPredictionService {
    id: String,
    transport: HttpTransport,
    output: OutputConvention,
    classes: Option<usize>,
    renormalize: bool,
}

#[derive(Deserialize)]
struct WireDetection {
    class_id: u32,
    score: f32,
    #[serde(rename = "box")]
    bbox: [f32; 4],
}

impl HttpPredictionService {
    pub fn new(id: &str, endpoint: &str, retry: RetryPolicy, timeout: Duration) -> Self {
        HttpPredictionService {
            id: id.to_string(),
            transport: HttpTransport::new(id, endpoint, retry, timeout),
            output: OutputConvention::Probs,
            classes: None,
            renormalize: false,
        }
    }

    pub fn with_output(mut self, output: OutputConvention) -> Self {
        self.output = output;
        self
    }

    /// Expected class count of segmentation maps and classification vectors.
    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = Some(classes);
        self
    }

    /// Rescale off-simplex probabilities instead of rejecting them.
    pub fn with_renormalize(mut self, renormalize: bool) -> Self {
        self.renormalize = renormalize;
        self
    }

    fn protocol(&self, reason: impl Into<String>) -> Error {
        Error::protocol(&self.id, reason)
    }

    fn check_classes(&self, got: usize) -> Result<()> {
        match self.classes {
            Some(c) if c != got => Err(self.protocol(format!("expected {c} classes, got {got}"))),
            _ => Ok(()),
        }
    }

    fn decode_tensor(&self, body: &[u8]) -> Result<Tensor> {
        Tensor::decode(body).map_err(|e| self.protocol(e.to_string()))
    }

    fn segmentation(&self, body: &[u8]) -> Result<SegProbMap> {
        let t = self.decode_tensor(body)?;
        let [c, h, w] = *t.dims() else {
            return Err(self.protocol(format!("segmentation tensor has dims {:?}", t.dims())));
        };
        self.check_classes(c)?;
        let mut values = t.to_f32_probs();
        if self.output == OutputConvention::Logits {
            let plane = h * w;
            let mut column = vec![0f32; c];
            for i in 0..plane {
                for k in 0..c {
                    column[k] = values[k * plane + i];
                }
                for (k, p) in softmax(&column)?.into_iter().enumerate() {
                    values[k * plane + i] = p;
                }
            }
        }
        let tol = match t.dtype() {
            DType::F32 => SIMPLEX_TOL_F32,
            DType::U8 => SIMPLEX_TOL_U8,
        };
        if self.renormalize {
            let map = SegProbMap::new_unchecked(c, h, w, values).map_err(|e| self.protocol(e.to_string()))?;
            return Ok(map.renormalized());
        }
        SegProbMap::new(c, h, w, values, tol).map_err(|e| self.protocol(e.to_string()))
    }

    fn classification(&self, body: &[u8]) -> Result<ClassProbs> {
        let t = self.decode_tensor(body)?;
        let [k] = *t.dims() else {
            return Err(self.protocol(format!("classification tensor has dims {:?}", t.dims())));
        };
        self.check_classes(k)?;
        let mut values = t.to_f32_probs();
        if self.output == OutputConvention::Logits {
            values = softmax(&values)?;
        }
        if self.renormalize {
            let sum: f64 = values.iter().map(|&p| f64::from(p)).sum();
            if sum > 0.0 {
                values = values.iter().map(|&p| (f64::from(p) / sum) as f32).collect();
            }
        }
        ClassProbs::new(values).map_err(|e| self.protocol(e.to_string()))
    }

    fn detection(&self, body: &[u8]) -> Result<DetectionSet> {
        let records: Vec<WireDetection> =
            serde_json::from_slice(body).map_err(|e| self.protocol(format!("malformed detections: {e}")))?;
        let detections = records
            .into_iter()
            .map(|r| {
                let [x1, y1, x2, y2] = r.bbox;
                Detection {
                    class_id: r.class_id,
                    score: r.score,
                    bbox: BBox { x1, y1, x2, y2 },
                }
            })
            .collect();
        DetectionSet::new(detections).map_err(|e| self.protocol(e.to_string()))
    }
}

impl PredictionService for HttpPredictionService {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, image: &ImageRecord, task: TaskKind) -> Result<Prediction> {
        let body = json!({
            "task": task.as_str(),
            "image": BASE64.encode(image.bytes()),
            "output": "probs",
        });
        let resp = self
            .transport
            .post_json("/v1/predict", &body)
            .map_err(|e| Error::Inference {
                service: self.id.clone(),
                reason: e.to_string(),
            })?;
        Ok(match task {
            TaskKind::Segmentation => Prediction::Segmentation(self.segmentation(&resp.body)?),
            TaskKind::Detection => Prediction::Detection(self.detection(&resp.body)?),
            TaskKind::Classification => Prediction::Classification(self.classification(&resp.body)?),
        })
    }
}
