//! Run reports (JSON) and prediction-versus-label scatter plots (PNG).

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::config::Representation;
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: f64,
    pub prediction: f64,
}

/// Everything a full run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub representation: Representation,
    pub config_fingerprint: String,
    pub test: MetricsReport,
    pub validation: MetricsReport,
    /// Averaged slice-level predictions on the test split, from the same
    /// extracted features.
    pub atp_test: MetricsReport,
    /// Mean |cosine| between depression and non-depression codes over all
    /// test slices.
    pub test_code_cosine: f64,
    pub test_predictions: Vec<Prediction>,
}

pub fn emit_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serialises");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_report<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::format(path, e.to_string()))
}

const SIZE: u32 = 480;
const MARGIN: u32 = 40;

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn draw_dot(img: &mut RgbImage, cx: f64, cy: f64, color: Rgb<u8>) {
    for dy in -3i32..=3 {
        for dx in -3i32..=3 {
            if dx * dx + dy * dy > 9 {
                continue;
            }
            let (x, y) = (cx as i32 + dx, cy as i32 + dy);
            if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

/// Scatter of predictions (vertical) against labels (horizontal) over a
/// shared range, with axes, tick marks every 10 units and the identity line.
pub fn emit_scatter_plot(predictions: &[f64], labels: &[f64], path: &Path) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::domain("cannot plot an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::domain(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let all = predictions.iter().chain(labels);
    let lo = all.clone().cloned().fold(0.0_f64, f64::min).floor();
    let hi = all.cloned().fold(63.0_f64, f64::max).ceil();
    let span = (hi - lo).max(1.0);
    let plot = (SIZE - 2 * MARGIN) as f64;
    let to_px = |x: f64, y: f64| {
        (
            MARGIN as f64 + (x - lo) / span * plot,
            (SIZE - MARGIN) as f64 - (y - lo) / span * plot,
        )
    };

    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let origin = to_px(lo, lo);
    draw_line(&mut img, origin, to_px(hi, lo), axis);
    draw_line(&mut img, origin, to_px(lo, hi), axis);
    let mut tick = (lo / 10.0).ceil() * 10.0;
    while tick <= hi {
        let (x, y) = to_px(tick, lo);
        draw_line(&mut img, (x, y), (x, y + 5.0), axis);
        let (x, y) = to_px(lo, tick);
        draw_line(&mut img, (x - 5.0, y), (x, y), axis);
        tick += 10.0;
    }
    draw_line(&mut img, origin, to_px(hi, hi), Rgb([160, 160, 160]));
    for (&p, &g) in predictions.iter().zip(labels) {
        if !(p.is_finite() && g.is_finite()) {
            return Err(Error::domain("cannot plot non-finite values"));
        }
        let (x, y) = to_px(g, p);
        draw_dot(&mut img, x, y, Rgb([200, 40, 40]));
    }

    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_decodable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.png");
        emit_scatter_plot(&[10.0, 20.0, 33.0], &[12.0, 18.0, 40.0], &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!((img.width(), img.height()), (SIZE, SIZE));
    }

    #[test]
    fn empty_plot_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_scatter_plot(&[], &[], &dir.path().join("x.png")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let m = MetricsReport {
            rmse: 1.0 / 3.0,
            mae: 0.1,
            pcc: Some(0.7),
            ccc: None,
            n: 20,
        };
        let report = RunReport {
            representation: Representation::Spg,
            config_fingerprint: "ab".into(),
            test: m,
            validation: m,
            atp_test: m,
            test_code_cosine: 0.05,
            test_predictions: vec![Prediction {
                id: "t".into(),
                label: 3.0,
                prediction: 2.9,
            }],
        };
        emit_report(&report, &path).unwrap();
        assert_eq!(read_report::<RunReport>(&path).unwrap(), report);
    }
}
