use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};

use super::ExperimentResult;
use crate::cohort::{Cohort, ConnectivityVector, Diagnosis, Volume};
use crate::cyclegan::GanModel;
use crate::error::{Error, Result};
use crate::metrics::{fnc_group_difference, volume_tmap, Stars};

const GAP: u32 = 4;

/// Symmetric diverging map: -1 -> blue, 0 -> white, +1 -> red.
fn diverging(t: f64) -> Rgb<u8> {
    let t = t.clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    if t >= 0.0 {
        Rgb([255, fade(t), fade(t)])
    } else {
        Rgb([fade(-t), fade(-t), 255])
    }
}

fn max_abs<'a>(vals: impl Iterator<Item = &'a f64>) -> f64 {
    vals.fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Three central orthogonal slices per map, real on the top row, generated
/// below, shared color scale. Identical groups produce an all-white image.
pub fn render_tmap_montage(real: &Array3<f64>, generated: &Array3<f64>) -> RgbImage {
    let (d, h, w) = real.dim();
    let scale = max_abs(real.iter().chain(generated.iter())).max(f64::MIN_POSITIVE);
    // Slice extents: (rows, cols) of each of the three cuts.
    let cuts = [(h, w), (d, w), (d, h)];
    let width: usize = cuts.iter().map(|c| c.1).sum::<usize>() + 2 * GAP as usize;
    let height: usize = cuts.iter().map(|c| c.0).max().unwrap() * 2 + GAP as usize;
    let mut img = RgbImage::from_pixel(width as u32, height as u32, Rgb([255, 255, 255]));
    for (row, map) in [real, generated].into_iter().enumerate() {
        let y0 = row * (cuts.iter().map(|c| c.0).max().unwrap() + GAP as usize);
        let mut x0 = 0usize;
        for (axis, (rows, cols)) in cuts.iter().enumerate() {
            for r in 0..*rows {
                for c in 0..*cols {
                    let v = match axis {
                        0 => map[[d / 2, r, c]],
                        1 => map[[r, h / 2, c]],
                        _ => map[[r, c, w / 2]],
                    };
                    img.put_pixel((x0 + c) as u32, (y0 + r) as u32, diverging(v / scale));
                }
            }
            x0 += cols + GAP as usize;
        }
    }
    img
}

/// Connectivity difference matrix: upper triangle from the real groups,
/// lower triangle from the generated groups, gray diagonal.
pub fn render_fnc_matrix(real: &Array2<f64>, generated: &Array2<f64>, cell: usize) -> RgbImage {
    let c = real.dim().0;
    let scale = max_abs(real.iter().chain(generated.iter())).max(f64::MIN_POSITIVE);
    let side = (c * cell) as u32;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    for i in 0..c {
        for j in 0..c {
            let color = if i == j {
                Rgb([180, 180, 180])
            } else if i < j {
                diverging(real[[i, j]] / scale)
            } else {
                diverging(generated[[i, j]] / scale)
            };
            for dy in 0..cell {
                for dx in 0..cell {
                    img.put_pixel((j * cell + dx) as u32, (i * cell + dy) as u32, color);
                }
            }
        }
    }
    img
}

/// Accuracy bars (mean with a std whisker) per strategy, with pairwise
/// significance brackets above; star tiers are drawn as 1-3 filled squares
/// over the bracket midpoint, none for non-significant pairs.
pub fn render_strategy_bars(result: &ExperimentResult) -> RgbImage {
    let n = result.strategies.len();
    let bar_w = 48u32;
    let slot = 80u32;
    let plot_h = 200u32;
    let margin = 20u32;
    let annot_h = 14 * result.significance.len().max(1) as u32;
    let width = margin * 2 + slot * n as u32;
    let height = plot_h + annot_h + margin * 2;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let base_y = height - margin;
    let x_of = |i: usize| margin + slot * i as u32 + (slot - bar_w) / 2;

    for (i, s) in result.strategies.iter().enumerate() {
        let frac = s.accuracy.mean.clamp(0.0, 1.0);
        let bar_h = (frac * plot_h as f64).round() as u32;
        let x0 = x_of(i);
        for x in x0..x0 + bar_w {
            for y in base_y - bar_h..base_y {
                img.put_pixel(x, y, Rgb([90, 120, 200]));
            }
        }
        // std whisker
        let lo = ((s.accuracy.mean - s.accuracy.std).clamp(0.0, 1.0) * plot_h as f64) as u32;
        let hi = ((s.accuracy.mean + s.accuracy.std).clamp(0.0, 1.0) * plot_h as f64) as u32;
        let cx = x0 + bar_w / 2;
        for y in base_y - hi..=base_y - lo {
            img.put_pixel(cx, y, Rgb([0, 0, 0]));
        }
    }

    // significance brackets
    let index_of = |k| result.strategies.iter().position(|s| s.strategy == k);
    for (row, p) in result.significance.iter().enumerate() {
        let (Some(a), Some(b)) = (index_of(p.strategy_a), index_of(p.strategy_b)) else {
            continue;
        };
        let y = margin + 14 * row as u32;
        let xa = x_of(a) + bar_w / 2;
        let xb = x_of(b) + bar_w / 2;
        for x in xa.min(xb)..=xa.max(xb) {
            img.put_pixel(x, y, Rgb([0, 0, 0]));
        }
        let n_stars = match p.annotation.stars {
            Stars::Ns => 0,
            Stars::One => 1,
            Stars::Two => 2,
            Stars::Three => 3,
        };
        let mid = (xa + xb) / 2;
        for s in 0..n_stars {
            let sx = mid + 6 * s as u32;
            for dx in 0..4u32 {
                for dy in 0..4u32 {
                    if sx + dx < width && y >= 6 {
                        img.put_pixel(sx + dx, y - 6 + dy, Rgb([0, 0, 0]));
                    }
                }
            }
        }
    }
    img
}

fn by_class<'a, T>(items: &'a [(Diagnosis, T)], class: Diagnosis) -> Vec<&'a T> {
    items
        .iter()
        .filter(|(d, _)| *d == class)
        .map(|(_, v)| v)
        .collect()
}

/// Write the three comparison figures: a t-map montage (real vs generated
/// volume groups), the connectivity group-difference matrix (real upper /
/// generated lower triangle), and accuracy bars with significance stars.
pub fn emit_plots(
    result: &ExperimentResult,
    gan: &GanModel,
    cohort: &Cohort,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut real_vols: Vec<(Diagnosis, Volume)> = Vec::new();
    let mut real_fncs: Vec<(Diagnosis, ConnectivityVector)> = Vec::new();
    let mut gen_vols: Vec<(Diagnosis, Volume)> = Vec::new();
    let mut gen_fncs: Vec<(Diagnosis, ConnectivityVector)> = Vec::new();
    for r in cohort.records() {
        if let Some(t1) = &r.t1 {
            real_vols.push((r.diagnosis, t1.clone()));
            gen_fncs.push((r.diagnosis, gan.g2_forward(&[t1])?.remove(0)));
        }
        if let Some(fnc) = &r.fnc {
            real_fncs.push((r.diagnosis, fnc.clone()));
            gen_vols.push((r.diagnosis, gan.g1_forward(&[fnc])?.remove(0)));
        }
    }
    for (name, items) in [("volumes", real_vols.len()), ("generated volumes", gen_vols.len())] {
        if items < 4 {
            return Err(Error::Experiment(format!(
                "plotting needs at least 2 {name} per class"
            )));
        }
    }

    let real_t = volume_tmap(
        &by_class(&real_vols, Diagnosis::Ad),
        &by_class(&real_vols, Diagnosis::Cn),
    )?;
    let gen_t = volume_tmap(
        &by_class(&gen_vols, Diagnosis::Ad),
        &by_class(&gen_vols, Diagnosis::Cn),
    )?;
    render_tmap_montage(&real_t, &gen_t)
        .save(dir.join("tmap_montage.png"))
        .map_err(|e| Error::Experiment(format!("saving tmap montage: {e}")))?;

    let (_, real_m) = fnc_group_difference(
        &by_class(&real_fncs, Diagnosis::Ad),
        &by_class(&real_fncs, Diagnosis::Cn),
    )?;
    let (_, gen_m) = fnc_group_difference(
        &by_class(&gen_fncs, Diagnosis::Ad),
        &by_class(&gen_fncs, Diagnosis::Cn),
    )?;
    render_fnc_matrix(&real_m, &gen_m, 12)
        .save(dir.join("fnc_difference.png"))
        .map_err(|e| Error::Experiment(format!("saving fnc matrix: {e}")))?;

    render_strategy_bars(result)
        .save(dir.join("strategy_bars.png"))
        .map_err(|e| Error::Experiment(format!("saving strategy bars: {e}")))?;
    Ok(())
}
