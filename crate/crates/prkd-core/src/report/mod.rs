//! Report rendering: sweep curves, the ablation table, and reconstruction
//! grids, as machine-readable CSV plus PNG figures.

mod canvas;
mod font;

use std::path::{Path, PathBuf};

use canvas::{Canvas, BLACK, GRAY, SERIES_COLORS};

use crate::data::LoadedDataset;
use crate::error::{Error, Result};
use crate::metrics::{fmt_sig, Aggregate};
use crate::orchestration::sweep::{AblationResults, RunRecord};
use crate::orchestration::trainer::ModelParams;
use crate::orchestration::{evaluate_params, Checkpoint};

/// One line series on a plot panel.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// One chart with its own axes.
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 10.0 {
        format!("{v:.1}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Render stacked panels into one PNG.
pub fn plot_panels(path: &Path, panels: &[Panel]) -> Result<()> {
    const W: i64 = 720;
    const PH: i64 = 330;
    const ML: i64 = 80;
    const MR: i64 = 24;
    const MT: i64 = 34;
    const MB: i64 = 52;
    let mut cv = Canvas::new(W as u32, (PH * panels.len() as i64) as u32);

    for (pi, panel) in panels.iter().enumerate() {
        let oy = pi as i64 * PH;
        let (x0, x1) = (ML, W - MR);
        let (y0, y1) = (oy + MT, oy + PH - MB);

        let all: Vec<(f64, f64)> = panel.series.iter().flat_map(|s| s.points.iter().copied()).collect();
        if all.is_empty() {
            continue;
        }
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &all {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        if (xmax - xmin).abs() < 1e-12 {
            xmin -= 1.0;
            xmax += 1.0;
        }
        let pad = ((ymax - ymin) * 0.08).max(1e-9);
        ymin -= pad;
        ymax += pad;

        let sx = |x: f64| x0 + (((x - xmin) / (xmax - xmin)) * (x1 - x0) as f64).round() as i64;
        let sy = |y: f64| y1 - (((y - ymin) / (ymax - ymin)) * (y1 - y0) as f64).round() as i64;

        // frame and title
        cv.line(x0, y0, x0, y1, BLACK);
        cv.line(x0, y1, x1, y1, BLACK);
        let tw = Canvas::text_width(&panel.title, 2);
        cv.text((W - tw) / 2, oy + 8, &panel.title, 2, BLACK);

        // y ticks
        for t in 0..5 {
            let v = ymin + (ymax - ymin) * t as f64 / 4.0;
            let y = sy(v);
            cv.line(x0 - 4, y, x0, y, BLACK);
            cv.line(x0, y, x1, y, GRAY);
            let label = fmt_tick(v);
            cv.text(x0 - 8 - Canvas::text_width(&label, 1), y - 3, &label, 1, BLACK);
        }
        // x ticks at unique data positions (or 6 even steps when dense)
        let mut xs: Vec<f64> = all.iter().map(|p| p.0).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        let ticks: Vec<f64> = if xs.len() <= 8 {
            xs
        } else {
            (0..6).map(|t| xmin + (xmax - xmin) * t as f64 / 5.0).collect()
        };
        for v in ticks {
            let x = sx(v);
            cv.line(x, y1, x, y1 + 4, BLACK);
            let label = fmt_tick(v);
            cv.text(x - Canvas::text_width(&label, 1) / 2, y1 + 8, &label, 1, BLACK);
        }
        // axis labels
        cv.text(
            (x0 + x1) / 2 - Canvas::text_width(&panel.x_label, 1) / 2,
            y1 + 26,
            &panel.x_label,
            1,
            BLACK,
        );
        cv.text(8, y0 - 14, &panel.y_label, 1, BLACK);

        // series
        for (si, s) in panel.series.iter().enumerate() {
            let color = SERIES_COLORS[si % SERIES_COLORS.len()];
            let mut pts = s.points.clone();
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in pts.windows(2) {
                cv.line(sx(w[0].0), sy(w[0].1), sx(w[1].0), sy(w[1].1), color);
            }
            for &(x, y) in &pts {
                cv.marker(sx(x), sy(y), color);
            }
            // legend, top-right
            let ly = y0 + 6 + si as i64 * 14;
            let lx = x1 - 150;
            cv.fill_rect(lx, ly, 10, 10, color);
            cv.text(lx + 14, ly + 1, &s.name, 1, BLACK);
        }
    }
    cv.save(path)
}

/// Headline run statistic: mean test PSNR / SSIM across images (the paper's
/// table convention). Seed aggregation uses the median across runs.
fn run_psnr(r: &RunRecord) -> f64 {
    r.test_report.psnr.mean
}

fn run_ssim(r: &RunRecord) -> f64 {
    r.test_report.ssim.mean
}

fn seed_aggregate(runs: &[RunRecord], f: fn(&RunRecord) -> f64) -> Result<Aggregate> {
    Aggregate::of(&runs.iter().map(f).collect::<Vec<_>>())
}

/// Inputs for the side-by-side reconstruction grid.
pub struct GridInputs<'a> {
    pub teacher: &'a RunRecord,
    pub random: &'a RunRecord,
    pub baseline: &'a RunRecord,
    pub student: &'a RunRecord,
    pub samples: usize,
}

/// Which artifacts to render; `Some` marks an artifact as requested, and a
/// requested artifact without completed runs is an incomplete-report error.
pub struct ReportInputs<'a> {
    pub teacher_sweep: Option<&'a [(usize, Vec<RunRecord>)]>,
    pub student_sweep: Option<&'a [(usize, Vec<RunRecord>)]>,
    pub ablation: Option<&'a AblationResults>,
    pub grid: Option<GridInputs<'a>>,
}

fn sweep_csv(path: &Path, rows: &[(usize, Aggregate, Aggregate, usize)]) -> Result<()> {
    let mut out = String::from(
        "snapshots,psnr_median,psnr_mean,psnr_std,ssim_median,ssim_mean,ssim_std,runs\n",
    );
    for (l, p, s, n) in rows {
        out.push_str(&format!(
            "{l},{},{},{},{},{},{},{n}\n",
            fmt_sig(p.median),
            fmt_sig(p.mean),
            fmt_sig(p.std),
            fmt_sig(s.median),
            fmt_sig(s.mean),
            fmt_sig(s.std),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn collect_sweep(
    groups: &[(usize, Vec<RunRecord>)],
    missing: &mut Vec<String>,
    what: &str,
) -> Vec<(usize, Aggregate, Aggregate, usize)> {
    let mut rows = Vec::new();
    for (l, runs) in groups {
        if runs.is_empty() {
            missing.push(format!("{what} L={l}"));
            continue;
        }
        let p = seed_aggregate(runs, run_psnr).expect("nonempty");
        let s = seed_aggregate(runs, run_ssim).expect("nonempty");
        rows.push((*l, p, s, runs.len()));
    }
    rows
}

/// Render every requested artifact into `out_dir`. Returns the files
/// written. Fails with an incomplete-report error naming the absent runs if
/// a requested artifact has none.
pub fn render_reports(
    inputs: &ReportInputs<'_>,
    data: &LoadedDataset<f32>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut missing = Vec::new();

    if let Some(groups) = inputs.teacher_sweep {
        let rows = collect_sweep(groups, &mut missing, "teacher");
        if rows.is_empty() {
            missing.push("teacher sweep (no runs at all)".into());
        } else {
            let csv = out_dir.join("teacher_sweep.csv");
            sweep_csv(&csv, &rows)?;
            files.push(csv);
            let png = out_dir.join("teacher_sweep.png");
            plot_panels(
                &png,
                &[
                    Panel {
                        title: "TEACHER PSNR VS SNAPSHOTS".into(),
                        x_label: "SNAPSHOTS L".into(),
                        y_label: "PSNR (DB)".into(),
                        series: vec![Series {
                            name: "TEACHER".into(),
                            points: rows.iter().map(|(l, p, _, _)| (*l as f64, p.median)).collect(),
                        }],
                    },
                    Panel {
                        title: "TEACHER SSIM VS SNAPSHOTS".into(),
                        x_label: "SNAPSHOTS L".into(),
                        y_label: "SSIM".into(),
                        series: vec![Series {
                            name: "TEACHER".into(),
                            points: rows.iter().map(|(l, _, s, _)| (*l as f64, s.median)).collect(),
                        }],
                    },
                ],
            )?;
            files.push(png);
        }
    }

    if let Some(groups) = inputs.student_sweep {
        let rows = collect_sweep(groups, &mut missing, "student");
        if rows.is_empty() {
            missing.push("student sweep (no runs at all)".into());
        } else {
            let csv = out_dir.join("student_sweep.csv");
            sweep_csv(&csv, &rows)?;
            files.push(csv);
            let png = out_dir.join("student_sweep.png");
            plot_panels(
                &png,
                &[
                    Panel {
                        title: "STUDENT PSNR VS TEACHER SNAPSHOTS".into(),
                        x_label: "TEACHER SNAPSHOTS L".into(),
                        y_label: "PSNR (DB)".into(),
                        series: vec![Series {
                            name: "STUDENT".into(),
                            points: rows.iter().map(|(l, p, _, _)| (*l as f64, p.median)).collect(),
                        }],
                    },
                    Panel {
                        title: "STUDENT SSIM VS TEACHER SNAPSHOTS".into(),
                        x_label: "TEACHER SNAPSHOTS L".into(),
                        y_label: "SSIM".into(),
                        series: vec![Series {
                            name: "STUDENT".into(),
                            points: rows.iter().map(|(l, _, s, _)| (*l as f64, s.median)).collect(),
                        }],
                    },
                ],
            )?;
            files.push(png);
        }
    }

    if let Some(ab) = inputs.ablation {
        let mut out = String::from(
            "variant,cdp,feat,psnr_median,psnr_mean,psnr_std,ssim_median,ssim_mean,ssim_std,runs\n",
        );
        let mut any = false;
        for (variant, runs) in &ab.variants {
            if runs.is_empty() {
                missing.push(format!("ablation {}", variant.name));
                continue;
            }
            any = true;
            let p = seed_aggregate(runs, run_psnr)?;
            let s = seed_aggregate(runs, run_ssim)?;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                variant.name,
                variant.cdp_on,
                variant.feat_on,
                fmt_sig(p.median),
                fmt_sig(p.mean),
                fmt_sig(p.std),
                fmt_sig(s.median),
                fmt_sig(s.mean),
                fmt_sig(s.std),
                runs.len(),
            ));
        }
        if any {
            let csv = out_dir.join("ablation.csv");
            std::fs::write(&csv, out)?;
            files.push(csv);
        } else {
            missing.push("ablation (no runs at all)".into());
        }
    }

    if let Some(grid) = &inputs.grid {
        let png = out_dir.join("reconstruction_grid.png");
        render_grid(grid, data, &png)?;
        files.push(png);
    }

    if !missing.is_empty() {
        return Err(Error::IncompleteReport { missing });
    }
    Ok(files)
}

fn render_grid(grid: &GridInputs<'_>, data: &LoadedDataset<f32>, path: &Path) -> Result<()> {
    let columns = [
        ("TRUTH", None),
        ("TEACHER", Some(grid.teacher)),
        ("RANDOM", Some(grid.random)),
        ("BASELINE", Some(grid.baseline)),
        ("STUDENT", Some(grid.student)),
    ];
    let cfg = &grid.student.config;
    let splits = crate::data::make_splits(
        data.images.len(),
        cfg.dataset.split_counts,
        cfg.dataset.subset_seed,
    )?;
    let samples: Vec<usize> = splits.test.iter().copied().take(grid.samples).collect();
    if samples.is_empty() {
        return Err(Error::Config("no test images for the grid".into()));
    }

    let (h, w) = cfg.dataset.target_size;
    let zoom: i64 = (128 / w as i64).max(2);
    let tile_w = w as i64 * zoom;
    let tile_h = h as i64 * zoom;
    let caption_h = 14i64;
    let header_h = 18i64;
    let pad = 6i64;
    let width = pad + columns.len() as i64 * (tile_w + pad);
    let height = header_h + samples.len() as i64 * (tile_h + caption_h + pad) + pad;
    let mut cv = Canvas::new(width as u32, height as u32);

    for (ci, (name, run)) in columns.iter().enumerate() {
        let x = pad + ci as i64 * (tile_w + pad);
        cv.text(
            x + (tile_w - Canvas::text_width(name, 1)) / 2,
            4,
            name,
            1,
            BLACK,
        );
        match run {
            None => {
                for (ri, &ix) in samples.iter().enumerate() {
                    let y = header_h + ri as i64 * (tile_h + caption_h + pad);
                    cv.blit_gray(x, y, &data.images[ix], zoom);
                }
            }
            Some(run) => {
                let ckpt = Checkpoint::load(&run.checkpoint_path)?;
                let params = ModelParams::from_checkpoint(&ckpt)?;
                let (report, recons) =
                    evaluate_params(&params, &run.config, data, &samples, ckpt.seed, true)?;
                for (ri, recon) in recons.iter().enumerate() {
                    let y = header_h + ri as i64 * (tile_h + caption_h + pad);
                    cv.blit_gray(x, y, recon, zoom);
                    let m = &report.per_image[ri];
                    let caption = format!(
                        "{} DB / {}",
                        fmt_tick(m.psnr_db),
                        fmt_tick(m.ssim)
                    );
                    cv.text(x, y + tile_h + 3, &caption, 1, BLACK);
                }
            }
        }
    }
    cv.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_panels_writes_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plot.png");
        plot_panels(
            &p,
            &[Panel {
                title: "TEST".into(),
                x_label: "X".into(),
                y_label: "Y".into(),
                series: vec![
                    Series {
                        name: "A".into(),
                        points: vec![(1.0, 10.0), (2.0, 12.5), (4.0, 13.0), (8.0, 12.9)],
                    },
                    Series {
                        name: "B".into(),
                        points: vec![(1.0, 9.0), (2.0, 11.0), (4.0, 12.0), (8.0, 12.4)],
                    },
                ],
            }],
        )
        .unwrap();
        let img = image::open(&p).unwrap().into_rgb8();
        assert_eq!(img.width(), 720);
        // something was drawn
        assert!(img.pixels().any(|px| px.0 != [255, 255, 255]));
    }
}
