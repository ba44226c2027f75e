//! Finds the tissue bounding box in an image with a bright region on a dark
//! background.

use fibroscore::image::RgbImage;
use fibroscore::roi::{crop_roi, detect_roi_heuristic, DetectParams};

fn main() -> fibroscore::Result<()> {
    // A bright disc of tissue centred at (260, 180) on a dark field.
    let image = RgbImage::from_fn(480, 360, |x, y| {
        let (dx, dy) = (x as f64 - 260.0, y as f64 - 180.0);
        if dx * dx + dy * dy < 90.0 * 90.0 {
            [0.7, 0.3 + 0.2 * ((x / 7 + y / 5) % 2) as f64, 0.1]
        } else {
            [0.02, 0.02, 0.02]
        }
    });
    let params = DetectParams { blur_radius: 2, ..DetectParams::default() };
    let roi = detect_roi_heuristic(&image, &params)?;
    let crop = crop_roi(&image, &roi)?;
    println!("detected {roi:?}, crop {}x{}", crop.width(), crop.height());
    Ok(())
}
