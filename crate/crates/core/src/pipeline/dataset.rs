//! On-disk dataset layout: `images/<id>.png`, `masks/<id>.png`,
//! `centroids.csv`, and `detections.csv` for predictions.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::metrics::{Detection, Point};
use crate::ndcore::checkpoint::write_atomic;

use super::synth::SynthImage;

pub const CENTROIDS_HEADER: [&str; 3] = ["image_id", "x", "y"];
pub const DETECTIONS_HEADER: [&str; 5] = ["image_id", "x", "y", "score", "area"];

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub mask: Option<GrayImage>,
    pub centroids: Vec<Point>,
}

impl From<SynthImage> for Sample {
    fn from(s: SynthImage) -> Self {
        Sample {
            id: s.id,
            image: s.image,
            mask: Some(s.mask),
            centroids: s.centroids,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8())
}

/// PNG written to a temporary sibling and renamed into place.
pub fn save_png<P>(path: &Path, img: &image::ImageBuffer<P, Vec<u8>>) -> Result<()>
where
    P: image::Pixel<Subpixel = u8> + image::PixelWithColorType,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, buf.get_ref())
}

pub fn read_centroids(path: &Path) -> Result<BTreeMap<String, Vec<Point>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != CENTROIDS_HEADER {
        return Err(Error::Data(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            CENTROIDS_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: BTreeMap<String, Vec<Point>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |k: usize| -> Result<f64> {
            rec[k].trim().parse().map_err(|_| {
                Error::Data(format!("{} line {}: bad number `{}`", path.display(), i + 2, &rec[k]))
            })
        };
        out.entry(rec[0].to_string()).or_default().push(Point::new(num(1)?, num(2)?));
    }
    Ok(out)
}

pub fn write_centroids(path: &Path, rows: &[(String, Point)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let inner = |w: &mut csv::Writer<Vec<u8>>| -> std::result::Result<(), csv::Error> {
        w.write_record(CENTROIDS_HEADER)?;
        for (id, p) in rows {
            w.write_record([id.clone(), format!("{:.3}", p.x), format!("{:.3}", p.y)])?;
        }
        Ok(())
    };
    inner(&mut w).map_err(|e| csv_err(path, e))?;
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_detections(path: &Path, rows: &[(String, Detection)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let inner = |w: &mut csv::Writer<Vec<u8>>| -> std::result::Result<(), csv::Error> {
        w.write_record(DETECTIONS_HEADER)?;
        for (id, d) in rows {
            w.write_record([
                id.clone(),
                format!("{:.3}", d.centroid.x),
                format!("{:.3}", d.centroid.y),
                format!("{:.6}", d.score),
                d.area.to_string(),
            ])?;
        }
        Ok(())
    };
    inner(&mut w).map_err(|e| csv_err(path, e))?;
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Detections grouped by image id. A `centroids.csv`-style file (three
/// columns) is accepted too, with score 1 and area 0.
pub fn read_detections(path: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let full = headers == DETECTIONS_HEADER;
    if !full && headers != CENTROIDS_HEADER {
        return Err(Error::Data(format!(
            "{}: expected header `{}` or `{}`",
            path.display(),
            DETECTIONS_HEADER.join(","),
            CENTROIDS_HEADER.join(",")
        )));
    }
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |k: usize| Error::Data(format!("{} line {}: bad value `{}`", path.display(), i + 2, &rec[k]));
        let f = |k: usize| rec[k].trim().parse::<f64>().map_err(|_| bad(k));
        let d = Detection {
            centroid: Point::new(f(1)?, f(2)?),
            score: if full { f(3)? } else { 1.0 },
            area: if full { rec[4].trim().parse().map_err(|_| bad(4))? } else { 0 },
        };
        out.entry(rec[0].to_string()).or_default().push(d);
    }
    Ok(out)
}

pub fn image_ids(dir: &Path) -> Result<Vec<String>> {
    let images = dir.join("images");
    let rd = std::fs::read_dir(&images).map_err(io_err(&images))?;
    let mut ids = Vec::new();
    for entry in rd {
        let entry = entry.map_err(io_err(&images))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data(format!("no PNG images under {}", images.display())));
    }
    Ok(ids)
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("images").join(format!("{id}.png"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("masks").join(format!("{id}.png"))
}

/// Reads every sample; masks and centroids are optional.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let ids = image_ids(dir)?;
    let cpath = dir.join("centroids.csv");
    let mut cents = if cpath.exists() { read_centroids(&cpath)? } else { BTreeMap::new() };
    ids.into_iter()
        .map(|id| {
            let mp = mask_path(dir, &id);
            Ok(Sample {
                image: load_rgb(&image_path(dir, &id))?,
                mask: if mp.exists() { Some(load_gray(&mp)?) } else { None },
                centroids: cents.remove(&id).unwrap_or_default(),
                id,
            })
        })
        .collect()
}

pub fn write_dataset(dir: &Path, images: &[SynthImage]) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let mut rows = Vec::new();
    for img in images {
        save_png(&image_path(dir, &img.id), &img.image)?;
        save_png(&mask_path(dir, &img.id), &img.mask)?;
        rows.extend(img.centroids.iter().map(|&c| (img.id.clone(), c)));
    }
    write_centroids(&dir.join("centroids.csv"), &rows)
}
