//! Write the synthetic segmentation fixture.
//!
//! ```text
//! cargo run -p ttm-core --example make_fixture -- fixtures [images] [backend]
//! ```

use std::path::PathBuf;

use ttm_core::fixtures::build_mock_fixture;

fn main() -> ttm_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixtures".into()));
    let n = args.next().map_or(20, |s| s.parse().expect("image count"));
    let backend = args.next().unwrap_or_else(|| "mock-invert".into());
    let f = build_mock_fixture(&dir, n, 64, 48, &backend)?;
    println!("{} images in {}", f.images, f.dir.display());
    println!("expected base mIoU {:.4}", f.expected_base_miou);
    println!("expected TTM mIoU {:.1}", f.expected_ttm_miou);
    println!("config {}", f.config.display());
    Ok(())
}
