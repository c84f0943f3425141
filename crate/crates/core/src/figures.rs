//! Plot-ready CSV tables and static SVG renderings of run outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{TORUS_ALPHA, TORUS_BETA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    PassageCircle,
    Torus3d,
    GridPanels,
    GeneralizationCurves,
    RlCurves,
}

impl FigureKind {
    pub const ALL: [FigureKind; 5] = [
        FigureKind::PassageCircle,
        FigureKind::Torus3d,
        FigureKind::GridPanels,
        FigureKind::GeneralizationCurves,
        FigureKind::RlCurves,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigureKind::PassageCircle => "passage_circle",
            FigureKind::Torus3d => "torus3d",
            FigureKind::GridPanels => "grid_panels",
            FigureKind::GeneralizationCurves => "generalization_curves",
            FigureKind::RlCurves => "rl_curves",
        }
    }
}

impl std::str::FromStr for FigureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown figure kind {s:?}")))
    }
}

/// A CSV file read into a header and string rows.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::invalid(format!("required input {} is missing", path.display())));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn need(&self, name: &str, path: &Path) -> Result<usize> {
        self.col(name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name:?}", path.display())))
    }

    fn num(&self, row: usize, col: usize) -> Result<f64> {
        self.rows[row][col]
            .parse()
            .map_err(|_| Error::Format(format!("not a number: {:?}", self.rows[row][col])))
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone)]
struct Point {
    x: f64,
    y: f64,
    label: String,
    group: usize,
}

#[derive(Debug, Clone)]
enum PanelBody {
    Scatter(Vec<Point>),
    Lines(Vec<(String, Vec<(f64, f64)>)>),
}

#[derive(Debug, Clone)]
struct Panel {
    title: String,
    xlabel: String,
    ylabel: String,
    body: PanelBody,
    /// Equal axis scaling for geometric plots.
    square: bool,
}

const PW: f64 = 420.0;
const PH: f64 = 360.0;
const MARGIN: f64 = 55.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts: Vec<(f64, f64)> = match &panel.body {
        PanelBody::Scatter(p) => p.iter().map(|p| (p.x, p.y)).collect(),
        PanelBody::Lines(s) => s.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |a: f64, b: f64| {
        let w = (b - a).max(1e-9);
        (a - 0.08 * w, b + 0.08 * w)
    };
    let (mut x0, mut x1) = pad(x0, x1);
    let (mut y0, mut y1) = pad(y0, y1);
    if panel.square {
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let half = (x1 - x0).max(y1 - y0) / 2.0;
        (x0, x1, y0, y1) = (cx - half, cx + half, cy - half, cy + half);
    }
    (x0, x1, y0, y1)
}

fn render_panel(out: &mut String, panel: &Panel, ox: f64) {
    let (x0, x1, y0, y1) = bounds(panel);
    let (l, r, t, b) = (ox + MARGIN, ox + PW - 15.0, 35.0, PH - MARGIN + 10.0);
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (r - l);
    let sy = |y: f64| b - (y - y0) / (y1 - y0) * (b - t);
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        fmt(l),
        fmt(t),
        fmt(r - l),
        fmt(b - t)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        fmt((l + r) / 2.0),
        esc(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        fmt((l + r) / 2.0),
        fmt(PH - 8.0),
        esc(&panel.xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 {} {})">{}</text>"#,
        fmt(ox + 14.0),
        fmt((t + b) / 2.0),
        fmt(ox + 14.0),
        fmt((t + b) / 2.0),
        esc(&panel.ylabel)
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            fmt(sx(fx)),
            fmt(b + 14.0),
            fmt(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
            fmt(l - 4.0),
            fmt(sy(fy) + 3.0),
            fmt(fy)
        );
    }
    match &panel.body {
        PanelBody::Scatter(points) => {
            for p in points {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{}" cy="{}" r="4" fill="{}"/>"#,
                    fmt(sx(p.x)),
                    fmt(sy(p.y)),
                    PALETTE[p.group % PALETTE.len()]
                );
                if !p.label.is_empty() {
                    let _ = writeln!(
                        out,
                        r#"<text x="{}" y="{}" font-size="9">{}</text>"#,
                        fmt(sx(p.x) + 5.0),
                        fmt(sy(p.y) - 5.0),
                        esc(&p.label)
                    );
                }
            }
        }
        PanelBody::Lines(series) => {
            for (i, (name, pts)) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y)))).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    path.join(" ")
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
                    fmt(l + 6.0),
                    fmt(t + 14.0 + 12.0 * i as f64),
                    esc(name)
                );
            }
        }
    }
}

fn render(panels: &[Panel]) -> String {
    let width = PW * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif">"#,
        width, PH, width, PH
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PW * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

fn write_svg(path: &Path, panels: &[Panel]) -> Result<()> {
    fs::write(path, render(panels)).map_err(|e| Error::io(path, e))
}

fn latent_cols(t: &Table) -> Vec<usize> {
    (0..)
        .map_while(|i| t.col(&format!("z{i}")))
        .collect()
}

fn passage_circle(dir: &Path) -> Result<Vec<PathBuf>> {
    let src = dir.join("latents.csv");
    let t = Table::read(&src)?;
    let z = latent_cols(&t);
    let Some(&z0) = z.first() else {
        return Err(Error::Format(format!("{}: no latent columns", src.display())));
    };
    let label = t.col("pos");
    let state = t.need("state", &src)?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for i in 0..t.rows.len() {
        let angle = t.num(i, z0)?;
        let name = label.map_or_else(|| t.rows[i][state].clone(), |c| t.rows[i][c].clone());
        let (x, y) = (angle.cos(), angle.sin());
        rows.push(vec![t.rows[i][state].clone(), name.clone(), angle.to_string(), x.to_string(), y.to_string()]);
        points.push(Point {
            x,
            y,
            label: name,
            group: 0,
        });
    }
    let csv = dir.join("passage_circle.csv");
    write_csv(&csv, &["state", "label", "angle", "x", "y"], &rows)?;
    let svg = dir.join("passage_circle.svg");
    write_svg(
        &svg,
        &[Panel {
            title: "latent angle per position".into(),
            xlabel: "cos z".into(),
            ylabel: "sin z".into(),
            body: PanelBody::Scatter(points),
            square: true,
        }],
    )?;
    Ok(vec![csv, svg])
}

fn torus3d(dir: &Path) -> Result<Vec<PathBuf>> {
    let src = dir.join("latents.csv");
    let t = Table::read(&src)?;
    let state = t.need("state", &src)?;
    let z = latent_cols(&t);
    let emb = match (t.col("ex"), t.col("ey"), t.col("ez")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    if emb.is_none() && z.len() < 2 {
        return Err(Error::Format(format!("{}: need two latent or three embedding columns", src.display())));
    }
    let label_cols: Vec<usize> = (0..t.header.len())
        .filter(|&c| c != state && !z.contains(&c) && !emb.is_some_and(|e| e.contains(&c)))
        .collect();
    let mut rows = Vec::new();
    let mut top = Vec::new();
    let mut side = Vec::new();
    for i in 0..t.rows.len() {
        let [x, y, zz] = match emb {
            Some([a, b, c]) => [t.num(i, a)?, t.num(i, b)?, t.num(i, c)?],
            None => {
                let (u, v) = (t.num(i, z[0])?, t.num(i, z[1])?);
                let ring = TORUS_ALPHA + TORUS_BETA * v.cos();
                [ring * u.cos(), ring * u.sin(), TORUS_BETA * v.sin()]
            }
        };
        let labels: Vec<String> = label_cols.iter().map(|&c| t.rows[i][c].clone()).collect();
        let group = labels.first().and_then(|l| l.parse::<usize>().ok()).unwrap_or(0);
        let mut row = vec![t.rows[i][state].clone()];
        row.extend(labels.iter().cloned());
        row.extend([x, y, zz].iter().map(|v| v.to_string()));
        rows.push(row);
        let tag = labels.join(",");
        top.push(Point {
            x,
            y,
            label: tag.clone(),
            group,
        });
        side.push(Point {
            x: x * 0.8 + y * 0.35,
            y: zz + y * 0.35,
            label: tag,
            group,
        });
    }
    let mut header: Vec<&str> = vec!["state"];
    header.extend(label_cols.iter().map(|&c| t.header[c].as_str()));
    header.extend(["ex", "ey", "ez"]);
    let csv = dir.join("torus3d.csv");
    write_csv(&csv, &header, &rows)?;
    let svg = dir.join("torus3d.svg");
    write_svg(
        &svg,
        &[
            Panel {
                title: "torus embedding (top view)".into(),
                xlabel: "x".into(),
                ylabel: "y".into(),
                body: PanelBody::Scatter(top),
                square: true,
            },
            Panel {
                title: "torus embedding (oblique view)".into(),
                xlabel: "x + 0.35 y".into(),
                ylabel: "z + 0.35 y".into(),
                body: PanelBody::Scatter(side),
                square: true,
            },
        ],
    )?;
    Ok(vec![csv, svg])
}

fn grid_panels(dir: &Path) -> Result<Vec<PathBuf>> {
    let src = dir.join("latents.csv");
    let t = Table::read(&src)?;
    let state = t.need("state", &src)?;
    let (x, y, o) = (t.need("x", &src)?, t.need("y", &src)?, t.need("orientation", &src)?);
    let z = latent_cols(&t);
    if z.len() < 3 {
        return Err(Error::Format(format!("{}: need three latent columns", src.display())));
    }
    let orient_group = |s: &str| ["N", "E", "S", "W"].iter().position(|&o| o == s).unwrap_or(0);
    let mut rows = Vec::new();
    let (mut p_orient, mut p_pos) = (Vec::new(), Vec::new());
    for i in 0..t.rows.len() {
        let r = &t.rows[i];
        let (z0, z1, z2) = (t.num(i, z[0])?, t.num(i, z[1])?, t.num(i, z[2])?);
        rows.push(vec![
            r[state].clone(),
            r[x].clone(),
            r[y].clone(),
            r[o].clone(),
            z0.to_string(),
            z1.to_string(),
            z2.to_string(),
        ]);
        let g = orient_group(&r[o]);
        p_orient.push(Point {
            x: z0.cos(),
            y: z0.sin(),
            label: r[o].clone(),
            group: g,
        });
        p_pos.push(Point {
            x: z1,
            y: z2,
            label: format!("{},{}", r[x], r[y]),
            group: g,
        });
    }
    let csv = dir.join("grid_panels.csv");
    write_csv(&csv, &["state", "x", "y", "orientation", "z0", "z1", "z2"], &rows)?;
    let svg = dir.join("grid_panels.svg");
    write_svg(
        &svg,
        &[
            Panel {
                title: "first latent (orientation)".into(),
                xlabel: "cos z0".into(),
                ylabel: "sin z0".into(),
                body: PanelBody::Scatter(p_orient),
                square: true,
            },
            Panel {
                title: "remaining latents (position)".into(),
                xlabel: "z1".into(),
                ylabel: "z2".into(),
                body: PanelBody::Scatter(p_pos),
                square: true,
            },
        ],
    )?;
    Ok(vec![csv, svg])
}

fn generalization_curves(dir: &Path) -> Result<Vec<PathBuf>> {
    let src = dir.join("metrics.csv");
    let t = Table::read(&src)?;
    let (step, split, h1, mrr) = (
        t.need("step", &src)?,
        t.need("split", &src)?,
        t.need("H@1", &src)?,
        t.need("MRR", &src)?,
    );
    let mut by_step: BTreeMap<usize, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    for i in 0..t.rows.len() {
        let s: usize = t.rows[i][step]
            .parse()
            .map_err(|_| Error::Format(format!("bad step {:?}", t.rows[i][step])))?;
        by_step
            .entry(s)
            .or_default()
            .insert(t.rows[i][split].clone(), (t.num(i, h1)?, t.num(i, mrr)?));
    }
    let splits = ["train", "test"];
    let get = |m: &BTreeMap<String, (f64, f64)>, sp: &str, k: usize| {
        m.get(sp).map_or(String::new(), |v| if k == 0 { v.0 } else { v.1 }.to_string())
    };
    let rows: Vec<Vec<String>> = by_step
        .iter()
        .map(|(s, m)| {
            vec![
                s.to_string(),
                get(m, "train", 1),
                get(m, "test", 1),
                get(m, "train", 0),
                get(m, "test", 0),
            ]
        })
        .collect();
    let csv = dir.join("generalization_curves.csv");
    write_csv(&csv, &["step", "train_MRR", "test_MRR", "train_H@1", "test_H@1"], &rows)?;
    let series = |k: usize| -> Vec<(String, Vec<(f64, f64)>)> {
        splits
            .iter()
            .map(|sp| {
                let pts = by_step
                    .iter()
                    .filter_map(|(s, m)| m.get(*sp).map(|v| (*s as f64, if k == 0 { v.0 } else { v.1 })))
                    .collect();
                (sp.to_string(), pts)
            })
            .filter(|(_, p): &(String, Vec<(f64, f64)>)| !p.is_empty())
            .collect()
    };
    let svg = dir.join("generalization_curves.svg");
    write_svg(
        &svg,
        &[
            Panel {
                title: "MRR (x100)".into(),
                xlabel: "training step".into(),
                ylabel: "MRR".into(),
                body: PanelBody::Lines(series(1)),
                square: false,
            },
            Panel {
                title: "H@1 (x100)".into(),
                xlabel: "training step".into(),
                ylabel: "H@1".into(),
                body: PanelBody::Lines(series(0)),
                square: false,
            },
        ],
    )?;
    Ok(vec![csv, svg])
}

/// Reads `rl_returns.csv` in `dir`, or in every `seed_*` subdirectory, and averages running returns per agent and step.
fn rl_curves(dir: &Path) -> Result<Vec<PathBuf>> {
    let direct = dir.join("rl_returns.csv");
    let sources: Vec<PathBuf> = if direct.exists() {
        vec![direct]
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path().join("rl_returns.csv")))
            .filter(|p| p.exists())
            .collect();
        v.sort();
        if v.is_empty() {
            return Err(Error::invalid(format!(
                "required input {} is missing",
                dir.join("rl_returns.csv").display()
            )));
        }
        v
    };
    let mut acc: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for src in &sources {
        let t = Table::read(src)?;
        let (agent, step, avg) = (t.need("agent", src)?, t.need("step", src)?, t.need("running_avg", src)?);
        for i in 0..t.rows.len() {
            let name = t.rows[i][agent].clone();
            if !order.contains(&name) {
                order.push(name.clone());
            }
            let s: usize = t.rows[i][step]
                .parse()
                .map_err(|_| Error::Format(format!("bad step {:?}", t.rows[i][step])))?;
            let e = acc.entry(name).or_default().entry(s).or_insert((0.0, 0));
            e.0 += t.num(i, avg)?;
            e.1 += 1;
        }
    }
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for name in &order {
        let pts: Vec<(f64, f64)> = acc[name].iter().map(|(&s, &(sum, n))| (s as f64, sum / n as f64)).collect();
        for (s, v) in &pts {
            rows.push(vec![name.clone(), s.to_string(), v.to_string()]);
        }
        series.push((name.clone(), pts));
    }
    let csv = dir.join("rl_curves.csv");
    write_csv(&csv, &["agent", "step", "mean_running_return"], &rows)?;
    let svg = dir.join("rl_curves.svg");
    write_svg(
        &svg,
        &[Panel {
            title: format!("return, running average ({} seed(s))", sources.len()),
            xlabel: "gradient step".into(),
            ylabel: "return".into(),
            body: PanelBody::Lines(series),
            square: false,
        }],
    )?;
    Ok(vec![csv, svg])
}

/// Write the CSV and SVG for `kind` into `cell_dir`, returning the paths written.
pub fn emit_figure_data(cell_dir: &Path, kind: FigureKind) -> Result<Vec<PathBuf>> {
    match kind {
        FigureKind::PassageCircle => passage_circle(cell_dir),
        FigureKind::Torus3d => torus3d(cell_dir),
        FigureKind::GridPanels => grid_panels(cell_dir),
        FigureKind::GeneralizationCurves => generalization_curves(cell_dir),
        FigureKind::RlCurves => rl_curves(cell_dir),
    }
}
