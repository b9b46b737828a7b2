#![no_main]

use libfuzzer_sys::fuzz_target;
use nrulab::tasks::{encode_idx_images, parse_idx_images};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_idx_images(data) {
        assert!(img.pixels.data().iter().all(|p| (0.0..=1.0).contains(p)));
        if img.rows * img.cols > 0 {
            // anything accepted re-encodes to the same bytes
            let raw: Vec<u8> = img.pixels.data().iter().map(|p| (p * 255.0).round() as u8).collect();
            assert_eq!(encode_idx_images(&raw, img.rows, img.cols), data);
        }
    }
});
