use super::{Bitmap, Mask, MaskError};

/// Splits a mask into its 4-connected foreground components, ordered by the
/// row-major position of each component's first pixel.
pub fn split_components(mask: &Mask) -> Result<Vec<Mask>, MaskError> {
    let bitmap = mask.decode()?;
    let (w, h) = (bitmap.width(), bitmap.height());
    let mut label = vec![0u32; (w * h) as usize];
    let mut parts = Vec::new();
    let mut stack = Vec::new();

    for start in 0..(w * h) as usize {
        if !bitmap.as_slice()[start] || label[start] != 0 {
            continue;
        }
        let id = parts.len() as u32 + 1;
        let mut part = Bitmap::new(w, h)?;
        label[start] = id;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (r, c) = ((idx as u32) / w, (idx as u32) % w);
            part.set(r, c, true);
            let neighbours = [
                (r > 0).then(|| idx - w as usize),
                (r + 1 < h).then(|| idx + w as usize),
                (c > 0).then(|| idx - 1),
                (c + 1 < w).then(|| idx + 1),
            ];
            for n in neighbours.into_iter().flatten() {
                if bitmap.as_slice()[n] && label[n] == 0 {
                    label[n] = id;
                    stack.push(n);
                }
            }
        }
        parts.push(Mask::from_bitmap(&part, mask.category_id, mask.confidence));
    }
    Ok(parts)
}
