//! Dataset directory IO: `<root>/images/<stem>.png` with optional
//! `<root>/masks/<stem>.png`, plus the `partition,id` split manifest that
//! makes an experiment's data assignment replayable.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use sslkd_core::dataset::{DatasetSplit, Sample};
use sslkd_core::tensor::{LabelMap, Tensor};

use crate::error::{AppError, AppResult};

/// Loads every PNG under `images/`, attaching a binarized mask when a file
/// with the same stem exists under `masks/`. Images are rescaled to [0, 1];
/// any nonzero mask pixel counts as road. Samples come back sorted by stem.
pub fn load_dataset(root: &Path) -> AppResult<Vec<Sample>> {
    let images_dir = root.join("images");
    let entries = fs::read_dir(&images_dir).map_err(AppError::io(&images_dir))?;
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(AppError::io(&images_dir))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| AppError::Runtime(format!("unreadable file name {path:?}")))?
                .to_string();
            stems.push((stem, path));
        }
    }
    stems.sort();

    let masks_dir = root.join("masks");
    let mut samples = Vec::with_capacity(stems.len());
    for (stem, img_path) in stems {
        let img = image::open(&img_path)
            .map_err(|e| AppError::Runtime(format!("cannot decode {img_path:?}: {e}")))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut data = vec![0.0f64; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            let at = y as usize * w + x as usize;
            for c in 0..3 {
                data[c * h * w + at] = px.0[c] as f64 / 255.0;
            }
        }
        let image = Tensor::from_vec(&[3, h, w], data).map_err(AppError::Core)?;

        let mask_path = masks_dir.join(format!("{stem}.png"));
        let mask = if mask_path.exists() {
            let m = image::open(&mask_path)
                .map_err(|e| AppError::Runtime(format!("cannot decode {mask_path:?}: {e}")))?
                .to_luma8();
            let (mw, mh) = m.dimensions();
            if (mw as usize, mh as usize) != (w, h) {
                return Err(AppError::Core(sslkd_core::CoreError::Validation(format!(
                    "{stem}: mask is {mw}x{mh} but image is {w}x{h}"
                ))));
            }
            let data: Vec<u8> = m.pixels().map(|p| u8::from(p.0[0] != 0)).collect();
            Some(LabelMap::from_vec(&[h, w], data).map_err(AppError::Core)?)
        } else {
            None
        };

        let sample = Sample {
            id: stem,
            image,
            mask,
        };
        sample.validate().map_err(AppError::Core)?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Writes samples as 8-bit PNGs (masks as {0, 255}); the inverse of
/// `load_dataset` up to quantization.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> AppResult<()> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    fs::create_dir_all(&images_dir).map_err(AppError::io(&images_dir))?;
    fs::create_dir_all(&masks_dir).map_err(AppError::io(&masks_dir))?;
    for s in samples {
        let (h, w) = s.hw();
        let mut img = RgbImage::new(w as u32, h as u32);
        let d = s.image.data();
        for y in 0..h {
            for x in 0..w {
                let at = y * w + x;
                let px = [
                    (d[at] * 255.0).round() as u8,
                    (d[h * w + at] * 255.0).round() as u8,
                    (d[2 * h * w + at] * 255.0).round() as u8,
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        let path = images_dir.join(format!("{}.png", s.id));
        img.save(&path)
            .map_err(|e| AppError::Runtime(format!("cannot write {path:?}: {e}")))?;

        if let Some(mask) = &s.mask {
            let mut m = GrayImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let v = mask.data()[y * w + x];
                    m.put_pixel(x as u32, y as u32, image::Luma([v * 255]));
                }
            }
            let path = masks_dir.join(format!("{}.png", s.id));
            m.save(&path)
                .map_err(|e| AppError::Runtime(format!("cannot write {path:?}: {e}")))?;
        }
    }
    Ok(())
}

/// Persists a split as `partition,id` lines (partitions: labelled,
/// unlabelled, validation) with a trailing `seed,<n>` record.
pub fn write_split(path: &Path, split: &DatasetSplit) -> AppResult<()> {
    let mut out = String::new();
    for (name, ids) in [
        ("labelled", &split.labelled),
        ("unlabelled", &split.unlabelled),
        ("validation", &split.validation),
    ] {
        for id in ids {
            out.push_str(name);
            out.push(',');
            out.push_str(id);
            out.push('\n');
        }
    }
    out.push_str(&format!("seed,{}\n", split.seed));
    fs::write(path, out).map_err(AppError::io(path))
}

pub fn read_split(path: &Path) -> AppResult<DatasetSplit> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    let mut split = DatasetSplit {
        labelled: vec![],
        unlabelled: vec![],
        validation: vec![],
        seed: 0,
    };
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (kind, value) = line.split_once(',').ok_or_else(|| {
            AppError::Runtime(format!("{path:?}:{}: malformed split line", lineno + 1))
        })?;
        match kind {
            "labelled" => split.labelled.push(value.to_string()),
            "unlabelled" => split.unlabelled.push(value.to_string()),
            "validation" => split.validation.push(value.to_string()),
            "seed" => {
                split.seed = value
                    .parse()
                    .map_err(|_| AppError::Runtime(format!("{path:?}:{}: bad seed", lineno + 1)))?;
            }
            other => {
                return Err(AppError::Runtime(format!(
                    "{path:?}:{}: unknown partition {other}",
                    lineno + 1
                )));
            }
        }
    }
    Ok(split)
}
