//! Source-domain prompt construction.
//!
//! A [`MetaPromptSpec`] describes the transformation we want in seven labelled
//! components. [`build_meta_prompt`] renders it into instruction text for a
//! multimodal language model, which answers with the prompt handed to the
//! image editing backend. The answer is wrapped in a [`SourcePrompt`] and
//! persisted with the run so every generated image can be traced back to it.

mod client;
mod record;

pub use client::{
    generate_source_prompt, CompletionRequest, EchoMllm, HttpMllmClient, MllmClient,
};
pub use record::{load_prompt, save_prompt, PromptProvenance, SourcePrompt};

use std::fmt::Write as _;

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::image::ImageRecord;
use crate::task::TaskKind;

/// Canned source prompt for clear-weather daytime driving scenes.
pub const DRIVING_SOURCE_PROMPT: &str = "Transform this scene to bright sunny day with clear \
dry weather and uniform lighting. Remove all visible adverse weather effects such as rain, \
snow, fog, haze, wet road reflections, glare, and nighttime darkness while maintaining \
original object positions, scale, scene composition, camera angle, and framing exactly as \
in the input.";

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPromptSpec {
    pub task: TaskKind,
    pub i2i_model_name: String,
    pub objective: String,
    pub domain_context: String,
    pub expected_challenges: Vec<String>,
    pub transformation_requirements: String,
    pub model_guidelines: String,
    pub example_images: Vec<ImageRecord>,
}

impl MetaPromptSpec {
    /// Preset for Cityscapes-style driving scenes.
    pub fn driving(task: TaskKind, i2i_model_name: &str) -> Self {
        MetaPromptSpec {
            task,
            i2i_model_name: i2i_model_name.to_string(),
            objective: format!(
                "improve {} accuracy of a fixed pretrained model on test images",
                task_phrase(task)
            ),
            domain_context: "road driving scenes recorded from a vehicle-mounted camera in \
                             clear daytime weather"
                .to_string(),
            expected_challenges: vec![
                "weather conditions such as rain, snow and fog".into(),
                "lighting variations such as night, dusk and glare".into(),
                "wet or snow-covered road surfaces".into(),
            ],
            transformation_requirements: "preserve the semantic layout, object positions, \
                                          scale and framing exactly; adapt only appearance"
                .to_string(),
            model_guidelines: "state the desired result directly, name what must stay \
                               unchanged, keep the instruction to a few sentences"
                .to_string(),
            example_images: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.trim().is_empty() {
            return Err(Error::Spec("objective"));
        }
        if self.domain_context.trim().is_empty() {
            return Err(Error::Spec("domain_context"));
        }
        Ok(())
    }

    /// Digest of the rendered meta-prompt followed by the example image
    /// digests.
    pub fn digest(&self) -> Result<Digest> {
        let text = build_meta_prompt(self)?;
        let images: Vec<Digest> = self.example_images.iter().map(ImageRecord::digest).collect();
        Ok(Digest::of_parts(
            std::iter::once(text.as_bytes()).chain(images.iter().map(|d| &d.as_bytes()[..])),
        ))
    }
}

fn task_phrase(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Segmentation => "semantic segmentation",
        TaskKind::Detection => "object detection",
        TaskKind::Classification => "image classification",
    }
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none given)"
    } else {
        s.trim()
    }
}

/// Render the meta-prompt. Sections appear in a fixed order and the output
/// is a pure function of `spec`.
pub fn build_meta_prompt(spec: &MetaPromptSpec) -> Result<String> {
    spec.validate()?;
    let mut out = String::new();
    out.push_str(
        "Write a single instruction prompt for an image-to-image editing model. The prompt \
         will be applied at test time to images from unseen domains and must turn each image \
         back into the domain the downstream model was trained on. Reply with the prompt \
         text only.\n",
    );
    let mut section = |title: &str, body: &str| {
        let _ = write!(out, "\n## {title}\n{body}\n");
    };
    section("Task specification", task_phrase(spec.task));
    section("Model information", or_none(&spec.i2i_model_name));
    section("Objective", spec.objective.trim());
    section("Domain context", spec.domain_context.trim());
    let challenges = if spec.expected_challenges.is_empty() {
        "(none given)".to_string()
    } else {
        spec.expected_challenges
            .iter()
            .map(|c| format!("- {}", c.trim()))
            .collect::<Vec<_>>()
            .join("\n")
    };
    section("Expected challenges", &challenges);
    section(
        "Transformation requirements",
        or_none(&spec.transformation_requirements),
    );
    section("Model guidelines", or_none(&spec.model_guidelines));
    if !spec.example_images.is_empty() {
        section(
            "Source domain examples",
            &format!(
                "{} example image(s) from the source domain are attached.",
                spec.example_images.len()
            ),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contains_domain_context_and_sections_in_order() {
        let spec = MetaPromptSpec::driving(TaskKind::Segmentation, "qie-2509");
        let text = build_meta_prompt(&spec).unwrap();
        assert!(text.contains("road driving scenes"));
        let order = [
            "## Task specification",
            "## Model information",
            "## Objective",
            "## Domain context",
            "## Expected challenges",
            "## Transformation requirements",
            "## Model guidelines",
        ];
        let positions: Vec<usize> = order.iter().map(|h| text.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn deterministic() {
        let a = MetaPromptSpec::driving(TaskKind::Detection, "flux1-kontext-max");
        let b = a.clone();
        assert_eq!(build_meta_prompt(&a).unwrap(), build_meta_prompt(&b).unwrap());
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn empty_objective_is_named() {
        let mut spec = MetaPromptSpec::driving(TaskKind::Segmentation, "m");
        spec.objective = "  ".into();
        assert!(matches!(build_meta_prompt(&spec), Err(Error::Spec("objective"))));
        spec.objective = "x".into();
        spec.domain_context.clear();
        assert!(matches!(build_meta_prompt(&spec), Err(Error::Spec("domain_context"))));
    }

    #[test]
    fn digest_tracks_content() {
        let a = MetaPromptSpec::driving(TaskKind::Segmentation, "m");
        let mut b = a.clone();
        b.expected_challenges.push("sensor noise".into());
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }
}
