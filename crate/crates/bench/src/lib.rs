//! Synthetic fixtures shared by the benchmarks and the integration tests:
//! paired band frames with matching mask interchange files, random mask
//! sets and random label files. Everything is seeded and deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use matt_core::maskio::{Bitmap, MaskFile};
use matt_core::{BBoxNorm, Band, Geometry, LabelFile, LabelRecord, Mask, MaskSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SITES: [&str; 2] = ["lotA", "lot_b"];
pub const ELEVATIONS: [u32; 3] = [25, 47, 91];
pub const PERIODS: [&str; 5] = ["presunrise", "postsunrise", "noon", "presunset", "postsunset"];

/// Files written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct Fixture {
    pub frames: BTreeMap<Band, PathBuf>,
    pub masks: PathBuf,
    pub stems: Vec<String>,
}

/// Capture-convention stem for the `i`-th fixture frame.
pub fn fixture_stem(i: usize) -> String {
    let site = SITES[i % SITES.len()];
    let elev = ELEVATIONS[(i / SITES.len()) % ELEVATIONS.len()];
    let period = PERIODS[(i / (SITES.len() * ELEVATIONS.len())) % PERIODS.len()];
    format!("{site}_{elev}m_{period}_{:06}", i * 100)
}

/// A mask set of up to `max_objects` axis-aligned blobs; roughly one set in
/// eight is empty. Blobs may touch the frame edge.
pub fn random_mask_set(rng: &mut ChaCha8Rng, pair_id: &str, width: u32, height: u32, max_objects: usize) -> MaskSet {
    let n = if rng.random_ratio(1, 8) { 0 } else { rng.random_range(1..=max_objects) };
    let masks = (0..n)
        .map(|_| {
            let mut b = Bitmap::new(width, height).expect("non-empty frame");
            let w = rng.random_range(2..=width / 3);
            let h = rng.random_range(2..=height / 3);
            let col = rng.random_range(0..=width - w);
            let row = rng.random_range(0..=height - h);
            b.fill_rect(row, col, h, w);
            if rng.random_bool(0.3) {
                // a notch so some masks are not rectangles
                b.set(row, col, false);
            }
            Mask::from_bitmap(&b, rng.random_range(0..2), rng.random_range(0.3..1.0))
        })
        .collect();
    MaskSet { pair_id: pair_id.to_string(), width, height, masks, ontology: vec!["car".into(), "truck".into()] }
}

/// Random box labels.
pub fn random_labels(rng: &mut ChaCha8Rng, pair_id: &str, n: usize) -> LabelFile {
    let records = (0..n)
        .map(|_| {
            let w = rng.random_range(0.02..0.4);
            let h = rng.random_range(0.02..0.4);
            let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
            let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
            LabelRecord {
                category_id: rng.random_range(0..2),
                geometry: Geometry::BBox(BBoxNorm::new(cx, cy, w, h).expect("box inside frame")),
            }
        })
        .collect();
    LabelFile { pair_id: pair_id.to_string(), records }
}

fn frame(rng: &mut ChaCha8Rng, size: u32, band: Band, set: &MaskSet) -> RgbImage {
    let base: u8 = match band {
        Band::Rgb => 90,
        Band::Lwir => 40,
        Band::RgbLwir => 65,
    };
    let mut img = RgbImage::from_fn(size, size, |_, _| {
        let n = rng.random_range(0..16u8);
        Rgb([base + n, base + n / 2, base])
    });
    for m in &set.masks {
        let bitmap = m.decode().expect("fixture masks are valid");
        for (x, y, px) in img.enumerate_pixels_mut() {
            if bitmap.get(y, x) {
                *px = Rgb([220, 200, 180]);
            }
        }
    }
    img
}

/// Writes `n_pairs` frames of `size`×`size` pixels for every band under
/// `root/frames/<band>/` and one interchange file per pair under
/// `root/masks/`.
pub fn write_fixture(root: &Path, n_pairs: usize, size: u32, seed: u64) -> io::Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = root.join("masks");
    fs::create_dir_all(&masks)?;
    let mut frames = BTreeMap::new();
    for band in Band::ALL {
        let d = root.join("frames").join(band.dir_name());
        fs::create_dir_all(&d)?;
        frames.insert(band, d);
    }
    let mut stems = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let stem = fixture_stem(i);
        let set = random_mask_set(&mut rng, &stem, size, size, 3);
        for (band, dir) in &frames {
            frame(&mut rng, size, *band, &set).save(dir.join(format!("{stem}.png"))).map_err(io::Error::other)?;
        }
        MaskFile::write(&set, &masks.join(format!("{stem}.json"))).map_err(io::Error::other)?;
        stems.push(stem);
    }
    Ok(Fixture { frames, masks, stems })
}

/// TOML config running pair → ingest-masks → transfer → augment → assemble
/// over a fixture.
pub fn fixture_config(fixture: &Fixture, work: &Path, ops: &[&str], seed: u64) -> String {
    let mut s = format!("work_dir = {:?}\nseed = {seed}\n", work.display().to_string());
    s.push_str("stages = [\"pair\", \"ingest-masks\", \"transfer\", \"augment\", \"assemble\"]\n");
    s.push_str("[inputs]\n");
    s.push_str(&format!("masks = {:?}\n", fixture.masks.display().to_string()));
    s.push_str("[inputs.frames]\n");
    for (band, dir) in &fixture.frames {
        s.push_str(&format!("{} = {:?}\n", band.dir_name(), dir.display().to_string()));
    }
    let ops: Vec<String> = ops.iter().map(|o| format!("{o:?}")).collect();
    s.push_str(&format!("[augment]\nops = [{}]\n", ops.join(", ")));
    s
}
