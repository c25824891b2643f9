//! SVG figures rendered from the CSV files of a results directory.
//!
//! Each figure is written next to the CSV it is drawn from, and every
//! number shown in a figure is the CSV cell text, unchanged.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::IoContext;
use crate::{Error, Result};

use super::csv_error;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
        let header = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(csv_error)?;
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("missing column {name}")))
    }
}

fn num(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::validation(format!("not a number: {s:?}")))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Svg(String);

impl Svg {
    fn new(title: &str) -> Self {
        let mut s = String::new();
        let _ = write!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            WIDTH / 2.0,
            escape(title)
        );
        Self(s)
    }

    fn axes(&mut self, x_label: &str, y_label: &str, y_ticks: &[(f64, String)], y_of: impl Fn(f64) -> f64) {
        let (l, b) = (MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            self.0,
            "<line x1=\"{l:.1}\" y1=\"{b:.1}\" x2=\"{:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>\n<line x1=\"{l:.1}\" y1=\"{MARGIN:.1}\" x2=\"{l:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>",
            WIDTH - MARGIN
        );
        for (v, label) in y_ticks {
            let y = y_of(*v);
            let _ = writeln!(
                self.0,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{l:.1}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                l - 4.0,
                l - 6.0,
                y + 4.0,
                escape(label)
            );
        }
        let _ = writeln!(
            self.0,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
            WIDTH / 2.0,
            HEIGHT - 14.0,
            escape(x_label),
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(y_label)
        );
    }

    fn legend(&mut self, names: &[String]) {
        for (i, n) in names.iter().enumerate() {
            let y = MARGIN + 14.0 * i as f64;
            let _ = writeln!(
                self.0,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
                WIDTH - MARGIN - 120.0,
                y - 9.0,
                PALETTE[i % PALETTE.len()],
                WIDTH - MARGIN - 106.0,
                y,
                escape(n)
            );
        }
    }

    fn finish(mut self) -> String {
        self.0.push_str("</svg>\n");
        self.0
    }
}

fn percent_axis() -> (Vec<(f64, String)>, impl Fn(f64) -> f64) {
    let ticks = (0..=5).map(|k| (k as f64 * 20.0, format!("{}", k * 20))).collect();
    (ticks, |v: f64| HEIGHT - MARGIN - v / 100.0 * (HEIGHT - 2.0 * MARGIN))
}

fn unique(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Grouped bars: one group per task, one bar per method.
fn comparison_figure(t: &Table) -> Result<String> {
    let method = t.col("method")?;
    let tasks: Vec<String> = t
        .header
        .iter()
        .filter_map(|h| h.strip_suffix("_mean").map(String::from))
        .collect();
    let methods: Vec<String> = t.rows.iter().map(|r| r[method].clone()).collect();
    let mut svg = Svg::new("Linear probing accuracy (%)");
    let (ticks, y_of) = percent_axis();
    svg.axes("task", "accuracy (%)", &ticks, &y_of);
    let group = (WIDTH - 2.0 * MARGIN) / tasks.len().max(1) as f64;
    let bar = group * 0.8 / methods.len().max(1) as f64;
    for (g, task) in tasks.iter().enumerate() {
        let (mc, sc) = (t.col(&format!("{task}_mean"))?, t.col(&format!("{task}_std"))?);
        let x0 = MARGIN + g as f64 * group + group * 0.1;
        let _ = writeln!(
            svg.0,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x0 + group * 0.4,
            HEIGHT - MARGIN + 16.0,
            escape(task)
        );
        for (m, row) in t.rows.iter().enumerate() {
            let (mean, std) = (&row[mc], &row[sc]);
            let y = y_of(num(mean)?.clamp(0.0, 100.0));
            let x = x0 + m as f64 * bar;
            let _ = writeln!(
                svg.0,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"><title>{} {}: {} ± {}</title></rect><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"8\">{}</text>",
                bar * 0.9,
                HEIGHT - MARGIN - y,
                PALETTE[m % PALETTE.len()],
                escape(&row[method]),
                escape(task),
                mean,
                std,
                x + bar * 0.45,
                y - 2.0,
                mean
            );
        }
    }
    svg.legend(&methods);
    Ok(svg.finish())
}

/// Accuracy versus epoch, one line per (method, task).
fn curves_figure(t: &Table) -> Result<String> {
    let (mc, ec, tc, vc) = (t.col("method")?, t.col("epoch")?, t.col("task")?, t.col("mean")?);
    let series = unique(t.rows.iter().map(|r| format!("{} {}", r[mc], r[tc])));
    let max_epoch = t.rows.iter().map(|r| num(&r[ec])).collect::<Result<Vec<_>>>()?.into_iter().fold(1.0, f64::max);
    let x_of = |e: f64| MARGIN + e / max_epoch * (WIDTH - 2.0 * MARGIN);
    let mut svg = Svg::new("Probe accuracy during training");
    let (ticks, y_of) = percent_axis();
    svg.axes("epoch", "accuracy (%)", &ticks, &y_of);
    for (i, name) in series.iter().enumerate() {
        let pts: Vec<&Vec<String>> = t.rows.iter().filter(|r| &format!("{} {}", r[mc], r[tc]) == name).collect();
        let mut line = String::new();
        for r in &pts {
            let _ = write!(line, "{:.1},{:.1} ", x_of(num(&r[ec])?), y_of(num(&r[vc])?.clamp(0.0, 100.0)));
        }
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(svg.0, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"/>", line.trim_end());
        for r in pts {
            let _ = writeln!(
                svg.0,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{color}\"><title>{} epoch {}: {}</title></circle>",
                x_of(num(&r[ec])?),
                y_of(num(&r[vc])?.clamp(0.0, 100.0)),
                escape(name),
                r[ec],
                r[vc]
            );
        }
    }
    svg.legend(&series);
    Ok(svg.finish())
}

/// Synergy accuracy against the view information estimate.
fn sweep_figure(t: &Table) -> Result<String> {
    let (sc, ic, ac) = (t.col("strength")?, t.col("i_nce")?, t.col("accuracy_mean")?);
    let xs = t.rows.iter().map(|r| num(&r[ic])).collect::<Result<Vec<_>>>()?;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_of = |v: f64| MARGIN + 10.0 + (v - lo) / span * (WIDTH - 2.0 * MARGIN - 20.0);
    let mut svg = Svg::new("Augmentation strength sweep (synergy)");
    let (ticks, y_of) = percent_axis();
    svg.axes("I_NCE(X; X')", "balanced accuracy (%)", &ticks, &y_of);
    let mut line = String::new();
    for r in &t.rows {
        let _ = write!(line, "{:.1},{:.1} ", x_of(num(&r[ic])?), y_of(num(&r[ac])?.clamp(0.0, 100.0)));
    }
    let _ = writeln!(svg.0, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\"/>", line.trim_end(), PALETTE[0]);
    for r in &t.rows {
        let (x, y) = (x_of(num(&r[ic])?), y_of(num(&r[ac])?.clamp(0.0, 100.0)));
        let _ = writeln!(
            svg.0,
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{}\"><title>strength {}: I_NCE {}, accuracy {}</title></circle><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"8\">{}</text>",
            PALETTE[0],
            r[sc],
            r[ic],
            r[ac],
            y - 6.0,
            r[ac]
        );
    }
    Ok(svg.finish())
}

type Renderer = fn(&Table) -> Result<String>;

const FIGURES: [(&str, Renderer); 3] = [
    ("comparison.csv", comparison_figure),
    ("curves.csv", curves_figure),
    ("sweep.csv", sweep_figure),
];

fn find_csvs(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).at(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() && depth > 0 {
            find_csvs(&p, depth - 1, out)?;
        } else if FIGURES.iter().any(|(name, _)| p.file_name().is_some_and(|f| f == *name)) {
            out.push(p);
        }
    }
    Ok(())
}

/// Renders an SVG next to every comparison, curve and sweep CSV under
/// `dir`. Returns the written figures.
pub fn plot_results(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::NothingToPlot(dir.to_path_buf()));
    }
    let mut csvs = Vec::new();
    find_csvs(dir, 2, &mut csvs)?;
    let mut written = Vec::new();
    for csv_path in csvs {
        let table = Table::read(&csv_path)?;
        if table.rows.is_empty() {
            continue;
        }
        let render = FIGURES
            .iter()
            .find(|(name, _)| csv_path.file_name().is_some_and(|f| f == *name))
            .map(|(_, r)| *r)
            .expect("matched by find_csvs");
        let svg_path = csv_path.with_extension("svg");
        fs::write(&svg_path, render(&table)?).at(&svg_path)?;
        written.push(svg_path);
    }
    if written.is_empty() {
        return Err(Error::NothingToPlot(dir.to_path_buf()));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMPARISON: &str = "method,replicates,R_mean,R_std,U1_mean,U1_std,U2_mean,U2_std,S_mean,S_std,average\ncomm,5,99.90,0.03,87.80,1.60,86.10,1.20,71.90,2.00,86.43\ncross,5,100.00,0.02,11.60,0.90,11.20,0.80,50.00,0.00,43.20\n";

    fn numbers_in(svg: &str) -> Vec<String> {
        // Text nodes and tooltips only; coordinates are attributes.
        let mut out = Vec::new();
        for chunk in svg.split('>').skip(1) {
            let text = chunk.split('<').next().unwrap_or("");
            for tok in text.split(|c: char| c.is_whitespace() || c == ',' || c == ':') {
                if tok.parse::<f64>().is_ok() && tok.contains('.') {
                    out.push(tok.to_string());
                }
            }
        }
        out
    }

    #[test]
    fn empty_directory_has_nothing_to_plot() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(plot_results(dir.path()), Err(Error::NothingToPlot(_))));
        assert!(matches!(plot_results(&dir.path().join("missing")), Err(Error::NothingToPlot(_))));
    }

    #[test]
    fn figures_are_deterministic_and_backed_by_the_csv() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("comparison.csv"), COMPARISON).unwrap();
        fs::create_dir(dir.path().join("sweep")).unwrap();
        fs::write(
            dir.path().join("sweep/sweep.csv"),
            "strength,crop_min,i_nce,accuracy_mean,accuracy_std,replicates\n0.8504,0.1500,3.2100,60.10,1.00,5\n0.9997,0.0005,2.1000,55.00,2.00,5\n",
        )
        .unwrap();
        let first = plot_results(dir.path()).unwrap();
        assert_eq!(first.len(), 2);
        let bytes: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
        let second = plot_results(dir.path()).unwrap();
        assert_eq!(bytes, second.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>());
        for p in &first {
            let svg = fs::read_to_string(p).unwrap();
            let csv = fs::read_to_string(p.with_extension("csv")).unwrap();
            let nums = numbers_in(&svg);
            assert!(!nums.is_empty());
            for n in nums {
                assert!(csv.contains(&n), "{n} missing from {}", p.display());
            }
        }
    }

    #[test]
    fn curves_render() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("curves.csv"),
            "method,epoch,task,mean,std,replicates\ncomm,50,S,60.00,1.00,5\ncomm,100,S,70.00,1.00,5\n",
        )
        .unwrap();
        let out = plot_results(dir.path()).unwrap();
        assert!(fs::read_to_string(&out[0]).unwrap().contains("polyline"));
    }
}
