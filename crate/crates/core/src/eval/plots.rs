//! CSV tables and small hand-rolled SVG charts derived from them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub const BARS_CSV_HEADER: &str = "group,series,value";

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// One bar of a grouped bar chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub group: String,
    pub series: String,
    pub value: f64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `{stem}.csv` and, unless there are no bars, a grouped bar chart
/// `{stem}.svg` drawn from the re-parsed CSV. Returns the files written.
pub fn emit_plots(bars: &[Bar], dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = format!("{BARS_CSV_HEADER}\n");
    for b in bars {
        if b.group.contains(',') || b.series.contains(',') {
            return Err(Error::Invalid(format!("bar labels may not contain commas: {b:?}")));
        }
        // `{}` prints the shortest representation that parses back exactly
        writeln!(csv, "{},{},{}", b.group, b.series, b.value).unwrap();
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    write(&csv_path, &csv)?;
    let mut out = vec![csv_path];
    let parsed = parse_bars_csv(&csv)?;
    if !parsed.is_empty() {
        let svg_path = dir.join(format!("{stem}.svg"));
        write(&svg_path, &bar_svg(&parsed, "WER"))?;
        out.push(svg_path);
    }
    Ok(out)
}

pub fn parse_bars_csv(text: &str) -> Result<Vec<Bar>> {
    let mut lines = text.lines();
    if lines.next() != Some(BARS_CSV_HEADER) {
        return Err(Error::Invalid("bar CSV lacks its header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(Error::Invalid(format!("malformed bar row `{l}`")));
            }
            let value = f[2].parse().map_err(|_| Error::Invalid(format!("bad value in `{l}`")))?;
            Ok(Bar {
                group: f[0].to_string(),
                series: f[1].to_string(),
                value,
            })
        })
        .collect()
}

fn unique(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bar_svg(bars: &[Bar], y_label: &str) -> String {
    let groups = unique(bars.iter().map(|b| b.group.clone()));
    let series = unique(bars.iter().map(|b| b.series.clone()));
    let (w, h, left, bottom, top) = (560.0, 360.0, 60.0, 50.0, 30.0);
    let plot_h = h - bottom - top;
    let max = bars.iter().map(|b| b.value).filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-9) * 1.1;
    let group_w = (w - left - 20.0) / groups.len() as f64;
    let bar_w = group_w * 0.8 / series.len() as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    writeln!(s, "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>", h - bottom).unwrap();
    writeln!(s, "<line x1=\"{left}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>", h - bottom, w - 20.0).unwrap();
    writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {0})\">{}</text>", h / 2.0, escape(y_label)).unwrap();
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        let y = h - bottom - plot_h * k as f64 / 4.0;
        writeln!(s, "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\">{v:.3}</text>", left - 4.0).unwrap();
    }
    for (gi, g) in groups.iter().enumerate() {
        let gx = left + gi as f64 * group_w + group_w * 0.1;
        for (si, name) in series.iter().enumerate() {
            let Some(b) = bars.iter().find(|b| &b.group == g && &b.series == name) else {
                continue;
            };
            let v = if b.value.is_finite() { b.value } else { max };
            let bh = plot_h * v / max;
            writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar_w:.1}\" height=\"{bh:.1}\" fill=\"{}\"><title>{}: {}</title></rect>",
                gx + si as f64 * bar_w,
                h - bottom - bh,
                PALETTE[si % PALETTE.len()],
                escape(name),
                b.value
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            gx + group_w * 0.4,
            h - bottom + 16.0,
            escape(g)
        )
        .unwrap();
    }
    for (si, name) in series.iter().enumerate() {
        let y = top + si as f64 * 16.0;
        writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>", w - 150.0, y - 9.0, PALETTE[si % PALETTE.len()]).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{y}\">{}</text>", w - 135.0, escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Line plot of the numeric `columns` of a training-log CSV against its
/// first column. Returns `false` (and writes nothing) for a log without rows.
pub fn emit_loss_plot(csv_path: &Path, columns: &[&str], svg_path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::Invalid(format!("{} has no column `{c}`", csv_path.display())))
        })
        .collect::<Result<_>>()?;
    let mut xs = Vec::new();
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); idx.len()];
    for l in lines.filter(|l| !l.is_empty()) {
        let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect();
        xs.push(f[0]);
        for (k, &i) in idx.iter().enumerate() {
            ys[k].push(f.get(i).copied().unwrap_or(f64::NAN));
        }
    }
    if xs.is_empty() {
        return Ok(false);
    }
    let (w, h, left, bottom, top) = (560.0, 360.0, 60.0, 40.0, 20.0);
    let finite = ys.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
    let (x0, x1) = (xs[0], xs[xs.len() - 1].max(xs[0] + 1.0));
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - 20.0);
    let py = |y: f64| h - bottom - (y - lo) / (hi - lo) * (h - bottom - top);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    writeln!(s, "<rect x=\"{left}\" y=\"{top}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", w - left - 20.0, h - bottom - top).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.4}</text>", left - 4.0, top + 4.0).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo:.4}</text>", left - 4.0, h - bottom).unwrap();
    writeln!(s, "<text x=\"{left}\" y=\"{}\">{x0}</text>", h - bottom + 16.0).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1}</text>", w - 20.0, h - bottom + 16.0).unwrap();
    for (k, col) in columns.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(&ys[k])
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let color = PALETTE[k % PALETTE.len()];
        writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", pts.join(" ")).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>", w - 140.0, top + 14.0 + 14.0 * k as f64, escape(col)).unwrap();
    }
    s.push_str("</svg>\n");
    write(svg_path, &s)?;
    Ok(true)
}
