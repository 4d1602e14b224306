//! Synthetic segmentation fixture for offline end-to-end runs.
//!
//! Clean scenes are flat rectangles of pale, fully bright colours (one per
//! hue sector of the hue oracle) on a grey background. The evaluated
//! "target" images are their colour negatives, which the `mock-invert`
//! backend maps back exactly. Because the hue oracle's confidence is the
//! pixel's HSV value, a bright clean colour always outweighs the dim
//! inverted one when the two posteriors are averaged, so the fused labels
//! are exact; and since inversion rotates hue by half a turn, the oracle is
//! wrong on every coloured pixel of the raw target image. Both scores follow
//! in closed form from which classes occur.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::datasets::MANIFEST_HEADER;
use crate::error::{Error, Result};
use crate::generation::write_atomic;
use crate::image::encode_png;
use crate::inference::hue_class;
use crate::labels::LabelMap;

/// Achromatic class plus six 60° hue sectors.
pub const FIXTURE_CLASSES: usize = 7;

/// Fully bright colour of saturation 0.4 at `hue` degrees.
pub fn pastel(hue: f32) -> Rgb<u8> {
    let (max, min) = (255.0f32, 153.0f32);
    let h = hue.rem_euclid(360.0) / 60.0;
    let f = h - h.floor();
    let rising = min + (max - min) * f;
    let falling = max - (max - min) * f;
    let (r, g, b) = match h.floor() as u32 {
        0 => (max, rising, min),
        1 => (falling, max, min),
        2 => (min, max, rising),
        3 => (min, falling, max),
        4 => (rising, min, max),
        _ => (max, min, falling),
    };
    Rgb([r.round() as u8, g.round() as u8, b.round() as u8])
}

/// Colour used for `class` in clean images.
pub fn class_colour(class: usize) -> Rgb<u8> {
    if class == 0 {
        Rgb([150, 150, 150])
    } else {
        pastel((class as f32 - 0.5) * 60.0)
    }
}

pub fn invert(px: Rgb<u8>) -> Rgb<u8> {
    Rgb(px.0.map(|v| 255 - v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockFixture {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub config: PathBuf,
    pub images: usize,
    /// mIoU of the oracle on the inverted images, in percent.
    pub expected_base_miou: f64,
    /// mIoU after inversion and fusion, in percent.
    pub expected_ttm_miou: f64,
}

/// Class layout of scene `i`: grey background with three vertical bands
/// whose top edge moves with `i`, so no two scenes are identical.
fn scene(i: usize, width: u32, height: u32) -> LabelMap {
    let bands = [1 + i % 6, 1 + (i + 2) % 6, 1 + (i / 3 + 4) % 6];
    let top = height / 6 + (i as u32) % (height / 3);
    let labels = (0..height)
        .flat_map(|y| {
            (0..width).map(move |x| {
                let in_band_rows = y >= top && y < height - height / 6;
                let band = (x * 4 / width) as usize;
                if in_band_rows && (1..4).contains(&band) {
                    bands[band - 1] as u8
                } else {
                    0
                }
            })
        })
        .collect();
    LabelMap::new(width as usize, height as usize, labels).expect("dims match")
}

/// Write `n` scenes, their labels, a manifest and a config whose backend is
/// `backend` (for example `mock-invert`). Returns the closed-form scores.
pub fn build_mock_fixture(dir: &Path, n: usize, width: u32, height: u32, backend: &str) -> Result<MockFixture> {
    if n == 0 || width < 4 || height < 6 {
        return Err(Error::Argument("fixture needs at least one 4x6 image".into()));
    }
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e));
    mkdir(&dir.join("images"))?;
    mkdir(&dir.join("labels"))?;

    let mut present = [false; FIXTURE_CLASSES];
    let mut lines = String::new();
    for i in 0..n {
        let labels = scene(i, width, height);
        let target = RgbImage::from_fn(width, height, |x, y| {
            invert(class_colour(usize::from(labels.get(x as usize, y as usize))))
        });
        for &l in labels.labels() {
            present[usize::from(l)] = true;
        }
        let image_rel = format!("images/scene_{i:03}.png");
        let label_rel = format!("labels/scene_{i:03}.png");
        write_atomic(&dir.join(&image_rel), &encode_png(&target)?)?;
        write_atomic(&dir.join(&label_rel), &labels.to_png()?)?;
        lines.push_str(&format!("{image_rel}\t{label_rel}\n"));
    }

    // Base: grey is always right; a coloured class is predicted only where
    // its half-turn partner occurs, and never correctly.
    let rotate = |c: usize| hue_class(invert(class_colour(c)), FIXTURE_CLASSES).0;
    let mut in_union = present;
    for c in 1..FIXTURE_CLASSES {
        if present[c] {
            in_union[rotate(c)] = true;
        }
    }
    let union = in_union.iter().filter(|&&u| u).count();
    let expected_base_miou = if present[0] { 100.0 / union as f64 } else { 0.0 };

    let names: Vec<String> = (0..FIXTURE_CLASSES)
        .map(|c| if c == 0 { "grey".into() } else { format!("hue{c}") })
        .collect();
    let manifest = format!(
        "{MANIFEST_HEADER}\nname: mock-inverted\ntask: segmentation\nclasses: {}\nmapping: identity\ncount: {n}\n\n{lines}",
        names.join(",")
    );
    let manifest_path = dir.join("manifest.txt");
    write_atomic(&manifest_path, manifest.as_bytes())?;

    let config = format!(
        "ttm-config v1\n\
         [experiment]\n\
         manifest = manifest.txt\n\
         seeds = 0\n\
         max_inflight = 4\n\
         cache_root = cache\n\
         output_dir = out\n\
         \n\
         [prompt]\n\
         source = canned\n\
         \n\
         [backend.{backend}]\n\
         kind = {backend}\n\
         label = Inverse\n\
         \n\
         [service.oracle]\n\
         kind = hue-oracle\n\
         classes = {FIXTURE_CLASSES}\n\
         label = Hue oracle\n\
         \n\
         [report]\n\
         formats = markdown, csv, jsonl\n\
         svg = true\n"
    );
    let config_path = dir.join("mock.cfg");
    write_atomic(&config_path, config.as_bytes())?;

    Ok(MockFixture {
        dir: dir.to_path_buf(),
        manifest: manifest_path,
        config: config_path,
        images: n,
        expected_base_miou,
        expected_ttm_miou: 100.0,
    })
}
