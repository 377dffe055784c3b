use super::{Bitmap, MaskError};

/// Row-major run-length encoding. Runs alternate background/foreground and
/// always start with a background run, which is zero-length when the first
/// pixel is set.
pub fn rle_encode(bitmap: &Bitmap) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &px in bitmap.as_slice() {
        if px != current {
            runs.push(len);
            current = px;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], width: u32, height: u32) -> Result<Bitmap, MaskError> {
    let expected = width as u64 * height as u64;
    let actual: u64 = runs.iter().map(|&r| r as u64).sum();
    if actual != expected {
        return Err(MaskError::CorruptPayload { expected, actual });
    }
    let mut data = Vec::with_capacity(expected as usize);
    let mut value = false;
    for &run in runs {
        data.extend(std::iter::repeat_n(value, run as usize));
        value = !value;
    }
    Bitmap::from_vec(width, height, data)
}
