//! Grayscale PGM images with exact-value CSV sidecars.
//!
//! Pictures are drawn with depth running down the rows and the lateral axis
//! across the columns. Real images are min-max scaled to 0..=255 with
//! rounding; a constant image becomes uniform gray 128. Class maps use 0 for
//! class 0 and 255 for class 1. The CSV holds one picture row per line with
//! every value printed to 17 significant digits, so parsing it back gives
//! the in-memory values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::phantom::SegmentationMap;

/// 8-bit gray levels of `values` laid out `[n_x][n_z]`, in picture order.
pub fn gray_levels(values: &[f64], n_x: usize, n_z: usize) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let level = |v: f64| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    };
    picture_order(n_x, n_z).map(|i| level(values[i])).collect()
}

fn picture_order(n_x: usize, n_z: usize) -> impl Iterator<Item = usize> {
    (0..n_z).flat_map(move |iz| (0..n_x).map(move |ix| ix * n_z + iz))
}

pub fn encode_pgm(levels: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(levels);
    out
}

pub fn encode_csv(values: &[f64], n_x: usize, n_z: usize) -> String {
    let mut s = String::new();
    for iz in 0..n_z {
        for ix in 0..n_x {
            if ix > 0 {
                s.push(',');
            }
            write!(s, "{:.16e}", values[ix * n_z + iz]).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Parses a sidecar CSV back into `[n_x][n_z]` order.
pub fn parse_csv(text: &str, path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .map(|(r, line)| {
            line.split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| Error::Format {
                        path: path.to_path_buf(),
                        offset: r as u64,
                        reason: format!("line {}: not a number: {v:?}", r + 1),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n_z = rows.len();
    let n_x = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_x) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: "ragged CSV rows".into(),
        });
    }
    let mut values = vec![0.0; n_x * n_z];
    for (iz, row) in rows.iter().enumerate() {
        for (ix, &v) in row.iter().enumerate() {
            values[ix * n_z + iz] = v;
        }
    }
    Ok((n_x, n_z, values))
}

fn write_pair(stem: &Path, levels: &[u8], values: &[f64], n_x: usize, n_z: usize) -> Result<(PathBuf, PathBuf)> {
    let pgm = stem.with_extension("pgm");
    let csv = stem.with_extension("csv");
    fs::write(&pgm, encode_pgm(levels, n_x, n_z))?;
    fs::write(&csv, encode_csv(values, n_x, n_z))?;
    Ok((pgm, csv))
}

/// Writes `<stem>.pgm` and `<stem>.csv`.
pub fn export_image(img: &Image, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let (n_x, n_z) = (img.grid().n_x, img.grid().n_z);
    write_pair(stem, &gray_levels(img.pixels(), n_x, n_z), img.pixels(), n_x, n_z)
}

/// Writes `<stem>.pgm` and `<stem>.csv` for a class map.
pub fn export_segmentation(map: &SegmentationMap, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let (n_x, n_z) = (map.n_x(), map.n_z());
    let c = map.classes();
    let levels: Vec<u8> = picture_order(n_x, n_z).map(|i| if c[i] == 0 { 0 } else { 255 }).collect();
    let values: Vec<f64> = c.iter().map(|&v| f64::from(v)).collect();
    write_pair(stem, &levels, &values, n_x, n_z)
}
