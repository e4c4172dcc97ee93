//! SVG bar charts of sweep and benchmark grid CSVs.
//!
//! The markup uses a fixed subset: one `<metadata>` line (the only
//! non-deterministic content), `<title>`, `<line>` axes, `<text>` labels and
//! one `<rect class="bar">` per configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::args::PlotArgs;
use crate::output::{input_file, output_path, write_file, Failure, RunManifest};

const HEIGHT: f64 = 360.0;
const PLOT_TOP: f64 = 50.0;
const PLOT_BOTTOM: f64 = 300.0;
const LEFT: f64 = 60.0;
const SLOT: f64 = 90.0;
const BAR: f64 = 56.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// `config,...,unsafe_fraction,...` rows from `sld sweep`.
    Sweep,
    /// Benchmark grid from `sld bench --out-csv`; the `overall` row is plotted.
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
}

fn parse_value(text: &str, what: &str) -> Result<f64, Failure> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("{what}: `{text}` is not a number")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Failure::usage(format!("{what}: {v} lies outside [0, 1]")));
    }
    Ok(v)
}

/// Reads bars from CSV text, detecting the input kind from its header.
pub fn read_bars(text: &str, source: &str) -> Result<(InputKind, Vec<Bar>), Failure> {
    let malformed = |msg: String| Failure::usage(format!("{source}: {msg}"));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .clone();
    let rows = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| malformed(e.to_string()))?;
    if header.is_empty() || rows.is_empty() {
        return Err(malformed("no data rows".into()));
    }
    let col = |name: &str| header.iter().position(|h| h == name);

    if let (Some(c), Some(f)) = (col("config"), col("unsafe_fraction")) {
        let bars = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let what = format!("{source}: row {}", i + 2);
                Ok(Bar {
                    label: r.get(c).unwrap_or_default().to_string(),
                    value: parse_value(r.get(f).unwrap_or_default(), &what)?,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        return Ok((InputKind::Sweep, bars));
    }
    if header.get(0) == Some("category") {
        let overall = rows
            .iter()
            .position(|r| r.get(0) == Some("overall"))
            .ok_or_else(|| malformed("grid has no `overall` row".into()))?;
        let bars = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_suffix("_probability").map(|name| (i, name)))
            .map(|(i, name)| {
                let what = format!(
                    "{source}: row {} column {}",
                    overall + 2,
                    header.get(i).unwrap_or_default()
                );
                Ok(Bar {
                    label: name.to_string(),
                    value: parse_value(rows[overall].get(i).unwrap_or_default(), &what)?,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        if bars.is_empty() {
            return Err(malformed("grid has no `*_probability` columns".into()));
        }
        return Ok((InputKind::Grid, bars));
    }
    Err(malformed(
        "unrecognized header; expected a sweep CSV (config, unsafe_fraction) or a grid CSV (category, ...)".into(),
    ))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders the chart; values are plotted on a fixed [0, 1] axis.
pub fn render_svg(title: &str, y_label: &str, bars: &[Bar], timestamp: &str) -> String {
    let width = 2.0 * LEFT + SLOT * bars.len() as f64;
    let span = PLOT_BOTTOM - PLOT_TOP;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{HEIGHT:.0}" viewBox="0 0 {width:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        "<metadata>generated by sld {} at {timestamp}</metadata>",
        env!("CARGO_PKG_VERSION")
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(
        s,
        r#"<text class="title" x="{:.1}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = PLOT_BOTTOM - v * span;
        let _ = writeln!(
            s,
            r##"<line class="grid" x1="{LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            width - LEFT / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{LEFT:.1}" y1="{PLOT_TOP:.1}" x2="{LEFT:.1}" y2="{PLOT_BOTTOM:.1}" stroke="#333333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        escape(y_label)
    );
    for (i, bar) in bars.iter().enumerate() {
        let x = LEFT + SLOT * i as f64 + (SLOT - BAR) / 2.0;
        let h = bar.value * span;
        let y = PLOT_BOTTOM - h;
        let cx = x + BAR / 2.0;
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x:.1}" y="{y:.1}" width="{BAR:.1}" height="{h:.1}" fill="#4c72b0"><title>{}: {:.4}</title></rect>"##,
            escape(&bar.label),
            bar.value
        );
        let _ = writeln!(
            s,
            r#"<text class="value" x="{cx:.1}" y="{:.1}" text-anchor="middle">{:.4}</text>"#,
            y - 4.0,
            bar.value
        );
        let _ = writeln!(
            s,
            r#"<text class="label" x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            PLOT_BOTTOM + 18.0,
            escape(&bar.label)
        );
    }
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{LEFT:.1}" y1="{PLOT_BOTTOM:.1}" x2="{:.1}" y2="{PLOT_BOTTOM:.1}" stroke="#333333"/>"##,
        width - LEFT / 2.0
    );
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Serialize)]
struct PlotManifest {
    kind: InputKind,
    title: String,
    bars: usize,
}

pub fn run(args: &PlotArgs, argv: &[String]) -> Result<(), Failure> {
    let input = input_file(&args.input)?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", input.display())))?;
    let (kind, bars) = read_bars(&text, &input.display().to_string())?;
    let title = args.title.clone().unwrap_or_else(|| {
        Path::new(input.file_name().unwrap_or_default())
            .with_extension("")
            .display()
            .to_string()
    });
    let y_label = match kind {
        InputKind::Sweep => "unsafe-mode fraction",
        InputKind::Grid => "inappropriate probability (overall)",
    };
    let manifest = RunManifest::new(
        "plot",
        argv,
        None,
        PlotManifest {
            kind,
            title: title.clone(),
            bars: bars.len(),
        },
    );
    let svg = render_svg(&title, y_label, &bars, &manifest.timestamp);
    let out = output_path(&args.out);
    write_file(&out, svg.as_bytes())?;
    manifest.input(input).output(&out).write()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = "config,mode,unsafe_fraction,n\ncfg,plain-cfg,0.5,10\nmax,sld,0.1,10\n";

    #[test]
    fn reads_sweep() {
        let (kind, bars) = read_bars(SWEEP, "s.csv").unwrap();
        assert_eq!(kind, InputKind::Sweep);
        assert_eq!(
            bars,
            vec![
                Bar {
                    label: "cfg".into(),
                    value: 0.5
                },
                Bar {
                    label: "max".into(),
                    value: 0.1
                }
            ]
        );
    }

    #[test]
    fn reads_grid_overall_row() {
        let grid = "category,a_probability,a_exp_max_mean,a_exp_max_std,b_probability,b_exp_max_mean,b_exp_max_std\n\
                    hate,0.4,0.5,0.1,,,\noverall,0.6,0.7,0.1,0.25,0.3,0.05\n";
        let (kind, bars) = read_bars(grid, "g.csv").unwrap();
        assert_eq!(kind, InputKind::Grid);
        assert_eq!(
            bars.iter().map(|b| b.value).collect::<Vec<_>>(),
            vec![0.6, 0.25]
        );
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "",
            "config,unsafe_fraction\n",
            "config,unsafe_fraction\ncfg,abc\n",
            "config,unsafe_fraction\ncfg,1.5\n",
            "a,b\n1,2\n",
            "category,x_probability\nhate,0.1\n",
        ] {
            assert_eq!(read_bars(bad, "bad.csv").unwrap_err().code, 2, "{bad:?}");
        }
    }

    #[test]
    fn one_bar_per_row_and_escaped_labels() {
        let bars = vec![
            Bar {
                label: "a<b>&\"c\"".into(),
                value: 0.25
            };
            3
        ];
        let svg = render_svg("t", "y", &bars, "T");
        assert_eq!(svg.matches(r#"<rect class="bar""#).count(), 3);
        assert!(svg.contains("a&lt;b&gt;&amp;&quot;c&quot;"));
        assert!(!svg.contains("a<b>"));
    }
}
