//! Figure rendering for the tabular artifacts. Hand-rolled SVG so the
//! output is a pure function of the input tables: fixed canvas, fixed
//! float formatting, no timestamps — regenerating a figure from the same
//! CSV is byte-identical.

use crate::config::{schema, CliError};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Ids,
    Weyl,
    Renorm,
    Besov,
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    /// (x, lo, hi) envelope drawn behind the line, e.g. mean +/- 2 stderr.
    band: Vec<(f64, f64, f64)>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1b6ca8", "#d1495b", "#2e935e", "#8a5fbf", "#c98a2b", "#4f6d7a",
];

pub fn plot(kind: PlotKind, inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(schema("plot needs at least one input csv"));
    }
    let mut series = Vec::new();
    for input in inputs {
        let table = read_table(input)?;
        match kind {
            PlotKind::Ids => series.extend(ids_series(input, &table)?),
            PlotKind::Weyl => series.push(weyl_series(input, &table)?),
            PlotKind::Renorm => series.extend(renorm_series(input, &table)?),
            PlotKind::Besov => series.push(besov_series(input, &table)?),
        }
    }
    let (title, xlabel, ylabel) = match kind {
        PlotKind::Ids => ("Counting curves per volume", "lambda", "count / volume"),
        PlotKind::Weyl => ("Counting ratio against the Weyl constant", "lambda", "ratio"),
        PlotKind::Renorm => ("Renormalization constant growth", "ln(1/epsilon)", "c"),
        PlotKind::Besov => ("Dyadic block sup-norms", "block index j", "log2 sup"),
    };
    let svg = render(&series, title, xlabel, ylabel);
    std::fs::write(out, svg).map_err(|e| CliError::Resource(format!("{}: {e}", out.display())))?;
    println!("wrote {}", out.display());
    Ok(())
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn column(&self, file: &Path, name: &str) -> Result<usize, CliError> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            schema(format!("{}: missing column '{name}'", file.display()))
        })
    }
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Resource(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { headers, rows })
}

fn num(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok()
}

fn ids_series(file: &Path, t: &Table) -> Result<Vec<Series>, CliError> {
    let cl = t.column(file, "L")?;
    let cx = t.column(file, "lambda")?;
    let cy = t.column(file, "mean_count_per_volume")?;
    let cs = t.column(file, "stderr")?;
    let mut labels: Vec<String> = Vec::new();
    let mut out: Vec<Series> = Vec::new();
    for row in &t.rows {
        let key = row[cl].clone();
        let idx = match labels.iter().position(|l| *l == key) {
            Some(i) => i,
            None => {
                labels.push(key.clone());
                out.push(Series {
                    label: format!("L={}", trim_float(&key)),
                    points: Vec::new(),
                    band: Vec::new(),
                });
                out.len() - 1
            }
        };
        if let (Some(x), Some(y), Some(s)) = (num(&row[cx]), num(&row[cy]), num(&row[cs])) {
            out[idx].points.push((x, y));
            out[idx].band.push((x, y - 2.0 * s, y + 2.0 * s));
        }
    }
    Ok(out)
}

fn weyl_series(file: &Path, t: &Table) -> Result<Series, CliError> {
    let cx = t.column(file, "lambda")?;
    let cy = t.column(file, "ratio")?;
    let points = t
        .rows
        .iter()
        .filter_map(|r| Some((num(&r[cx])?, num(&r[cy])?)))
        .collect();
    Ok(Series {
        label: stem(file),
        points,
        band: Vec::new(),
    })
}

fn renorm_series(file: &Path, t: &Table) -> Result<Vec<Series>, CliError> {
    let ce = t.column(file, "epsilon")?;
    let cm = t.column(file, "method")?;
    let cv = t.column(file, "value")?;
    let cs = t.column(file, "stderr")?;
    let mut out: Vec<Series> = Vec::new();
    for row in &t.rows {
        let label = row[cm].clone();
        let idx = match out.iter().position(|s| s.label == label) {
            Some(i) => i,
            None => {
                out.push(Series {
                    label,
                    points: Vec::new(),
                    band: Vec::new(),
                });
                out.len() - 1
            }
        };
        if let (Some(e), Some(v), Some(s)) = (num(&row[ce]), num(&row[cv]), num(&row[cs])) {
            let x = (1.0 / e).ln();
            out[idx].points.push((x, v));
            out[idx].band.push((x, v - 2.0 * s, v + 2.0 * s));
        }
    }
    for s in &mut out {
        s.points
            .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        s.band
            .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    }
    Ok(out)
}

fn besov_series(file: &Path, t: &Table) -> Result<Series, CliError> {
    let cx = t.column(file, "j")?;
    let cy = t.column(file, "mean_log2_sup")?;
    let cs = t.column(file, "stderr")?;
    let mut points = Vec::new();
    let mut band = Vec::new();
    for row in &t.rows {
        if let (Some(x), Some(y), Some(s)) = (num(&row[cx]), num(&row[cy]), num(&row[cs])) {
            points.push((x, y));
            band.push((x, y - 2.0 * s, y + 2.0 * s));
        }
    }
    Ok(Series {
        label: stem(file),
        points,
        band,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn trim_float(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) => fmt_num(v),
        Err(_) => s.to_string(),
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e5 || a < 1e-3 {
        return format!("{v:.3e}");
    }
    let mut s = format!("{v:.4}");
    while s.contains('.') && s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut x0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y0 = f64::INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        for &(x, lo, hi) in &s.band {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(lo);
            y1 = y1.max(hi);
        }
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let span = hi - lo;
        if span <= 0.0 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo - 0.05 * span, hi + 0.05 * span)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

fn render(series: &[Series], title: &str, xlabel: &str, ylabel: &str) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );

    // grid and ticks
    for i in 0..6 {
        let t = i as f64 / 5.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let gx = px(xv);
        let gy = py(yv);
        let _ = writeln!(
            svg,
            r#"<line x1="{gx:.2}" y1="{:.2}" x2="{gx:.2}" y2="{:.2}" stroke="#dddddd" stroke-width="1"/>"#,
            py(y1),
            py(y0)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#dddddd" stroke-width="1"/>"#,
            px(x0),
            px(x1)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN_B + 18.0,
            fmt_num(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            gy + 4.0,
            fmt_num(yv)
        );
    }

    // error bands under the lines
    for (si, s) in series.iter().enumerate() {
        if s.band.is_empty() {
            continue;
        }
        let color = PALETTE[si % PALETTE.len()];
        let mut pts = String::new();
        for &(x, lo, _) in &s.band {
            let _ = write!(pts, "{:.2},{:.2} ", px(x), py(lo));
        }
        for &(x, _, hi) in s.band.iter().rev() {
            let _ = write!(pts, "{:.2},{:.2} ", px(x), py(hi));
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            pts.trim_end()
        );
    }

    for (si, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let color = PALETTE[si % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", px(x), py(y));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.trim_end()
        );
    }

    // frame, labels, legend
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{:.2}" height="{:.2}" fill="none" stroke="#333333"/>"#,
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0,
        MARGIN_T - 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let ly = MARGIN_T + 16.0 + 18.0 * si as f64;
        let lx = WIDTH - MARGIN_R - 150.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting_is_compact() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(19.7392), "19.7392");
        assert_eq!(fmt_num(123456.0), "1.235e5");
        assert_eq!(fmt_num(0.0001), "1.000e-4");
    }

    #[test]
    fn rendering_is_deterministic_and_survives_empty_input() {
        let s = vec![Series {
            label: "L=1".into(),
            points: vec![(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)],
            band: vec![(0.0, -0.1, 0.1), (1.0, 1.8, 2.2), (2.0, 2.9, 3.1)],
        }];
        let a = render(&s, "t", "x", "y");
        let b = render(&s, "t", "x", "y");
        assert_eq!(a, b);
        assert!(a.contains("polyline"));
        assert!(a.contains("polygon"));
        let empty = render(&[], "t", "x", "y");
        assert!(empty.contains("</svg>"));
        assert!(!empty.contains("polyline"));
    }

    #[test]
    fn ids_tables_group_rows_by_box_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ids.csv");
        std::fs::write(
            &path,
            "bc,L,epsilon,lambda,mean_count_per_volume,stderr,n_seeds\n\
             dirichlet,0.500000,0.000000,1.0,2.0,0.1,8\n\
             dirichlet,0.500000,0.000000,2.0,3.0,0.1,8\n\
             dirichlet,1.000000,0.000000,1.0,2.5,0.1,8\n",
        )
        .unwrap();
        let t = read_table(&path).unwrap();
        let series = ids_series(&path, &t).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].label, "L=0.5");
        assert_eq!(series[1].label, "L=1");
        assert_eq!(series[0].points.len(), 2);
    }

    #[test]
    fn missing_columns_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        let t = read_table(&path).unwrap();
        let err = ids_series(&path, &t).unwrap_err();
        assert_eq!(err.code(), 2);
        assert!(err.to_string().contains("missing column"));
    }
}
