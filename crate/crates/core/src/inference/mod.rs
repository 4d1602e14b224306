//! Running the fixed discriminative model.
//!
//! The model lives behind a [`PredictionService`]: either a remote endpoint
//! speaking the prediction protocol or an in-process mock. Predictions carry
//! probabilities rather than labels so that segmentation outputs can be
//! averaged before the argmax.

mod http;
mod mock;
mod prediction;

pub use http::{HttpPredictionService, OutputConvention};
pub use mock::{hue_class, HueOracle};
pub use prediction::{
    BBox, ClassMask, ClassProbs, Detection, DetectionSet, Prediction, SegProbMap,
    SIMPLEX_TOL_F32, SIMPLEX_TOL_U8,
};

use crate::error::{Error, Result};
use crate::image::ImageRecord;
use crate::task::TaskKind;

/// A deterministic model endpoint. Implementations must be safe to call
/// from several workers at once.
pub trait PredictionService: Send + Sync {
    fn id(&self) -> &str;

    fn predict(&self, image: &ImageRecord, task: TaskKind) -> Result<Prediction>;
}

/// Run `service` on `image` and check the answer fits the request: the
/// prediction matches `task`, and segmentation maps match the image size.
pub fn predict(image: &ImageRecord, task: TaskKind, service: &dyn PredictionService) -> Result<Prediction> {
    let prediction = service.predict(image, task)?;
    if prediction.task() != task {
        return Err(Error::protocol(
            service.id(),
            format!("asked for {task}, got {}", prediction.task()),
        ));
    }
    if let Prediction::Segmentation(map) = &prediction {
        let expected = (image.height() as usize, image.width() as usize);
        if (map.height(), map.width()) != expected {
            return Err(Error::protocol(
                service.id(),
                format!(
                    "map is {}x{} (HxW), image is {}x{}",
                    map.height(),
                    map.width(),
                    expected.0,
                    expected.1
                ),
            ));
        }
    }
    Ok(prediction)
}

/// Predictions for the original and the pseudo-source image, in that order.
/// Segmentation requires both images to share dimensions.
pub fn predict_pair(
    original: &ImageRecord,
    pseudo_source: &ImageRecord,
    task: TaskKind,
    service: &dyn PredictionService,
) -> Result<(Prediction, Prediction)> {
    check_pair_alignment(original, pseudo_source, task)?;
    let base = predict(original, task, service)?;
    let ttm = predict(pseudo_source, task, service)?;
    Ok((base, ttm))
}

pub fn check_pair_alignment(original: &ImageRecord, pseudo_source: &ImageRecord, task: TaskKind) -> Result<()> {
    if task == TaskKind::Segmentation && original.dims() != pseudo_source.dims() {
        return Err(Error::Alignment(format!(
            "pseudo-source {:?} does not match original {:?}",
            pseudo_source.dims(),
            original.dims()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageRole;
    use image::{Rgb, RgbImage};

    fn img(w: u32, h: u32) -> ImageRecord {
        ImageRecord::from_rgb("x", &RgbImage::from_pixel(w, h, Rgb([200, 40, 40])), "", ImageRole::Target)
            .unwrap()
    }

    struct WrongHeight;

    impl PredictionService for WrongHeight {
        fn id(&self) -> &str {
            "wrong"
        }
        fn predict(&self, image: &ImageRecord, _: TaskKind) -> Result<Prediction> {
            Ok(Prediction::Segmentation(SegProbMap::uniform(
                3,
                image.height() as usize + 1,
                image.width() as usize,
            )))
        }
    }

    #[test]
    fn wrong_height_is_protocol_error() {
        let err = predict(&img(4, 4), TaskKind::Segmentation, &WrongHeight).unwrap_err();
        assert!(matches!(err, Error::Protocol { .. }));
    }

    #[test]
    fn task_mismatch_is_protocol_error() {
        let err = predict(&img(4, 4), TaskKind::Detection, &WrongHeight).unwrap_err();
        assert!(matches!(err, Error::Protocol { .. }));
    }

    #[test]
    fn identical_images_give_identical_pair() {
        let oracle = HueOracle::new("oracle", 5);
        let x = img(6, 3);
        let (a, b) = predict_pair(&x, &x.clone(), TaskKind::Segmentation, &oracle).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pair_alignment_depends_on_task() {
        let oracle = HueOracle::new("oracle", 5);
        let err = predict_pair(&img(6, 3), &img(3, 3), TaskKind::Segmentation, &oracle).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
        let (a, b) = predict_pair(&img(6, 3), &img(3, 3), TaskKind::Detection, &oracle).unwrap();
        assert_eq!(a.task(), TaskKind::Detection);
        assert_eq!(b.task(), TaskKind::Detection);
    }
}
