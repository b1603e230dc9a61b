//! Static SVG plots and their CSV data from a run report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::report::RunReport;
use crate::scenario::write_atomic;

/// One small-multiple panel: a series and optional dashed limits.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: String,
    pub values: Vec<f64>,
    pub lb: Option<f64>,
    pub ub: Option<f64>,
}

const W: f64 = 260.0;
const H: f64 = 150.0;
const PAD: f64 = 30.0;
const COLS: usize = 3;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grid of panels sharing the step axis; `step_hours` scales the axis.
pub fn panels_svg(title: &str, unit: &str, step_hours: f64, panels: &[Panel]) -> String {
    let rows = panels.len().div_ceil(COLS).max(1);
    let (width, height) = (COLS as f64 * W, rows as f64 * H + 30.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="8" y="18" font-size="13">{} [{}]</text>"#, escape(title), escape(unit));
    for (i, p) in panels.iter().enumerate() {
        let (ox, oy) = ((i % COLS) as f64 * W, 30.0 + (i / COLS) as f64 * H);
        let (x0, x1, y0, y1) = (ox + PAD, ox + W - 8.0, oy + H - 20.0, oy + 16.0);
        let finite = p.values.iter().copied().chain(p.lb).chain(p.ub).filter(|v| v.is_finite());
        let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let margin = ((hi - lo) * 0.05).max(1e-9 * hi.abs().max(1.0));
        (lo, hi) = (lo - margin, hi + margin);
        let n = p.values.len().max(2) - 1;
        let px = |t: usize| x0 + (x1 - x0) * t as f64 / n as f64;
        let py = |v: f64| y0 - (y0 - y1) * (v - lo) / (hi - lo);
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
            x1 - x0,
            y0 - y1
        );
        let _ = writeln!(s, r#"<text x="{x0:.1}" y="{:.1}">{}</text>"#, y1 - 4.0, escape(&p.name));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{hi:.4}</text>"#, x0 - 2.0, y1 + 8.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y0:.1}" text-anchor="end">{lo:.4}</text>"#, x0 - 2.0);
        let _ = writeln!(
            s,
            r#"<text x="{x1:.1}" y="{:.1}" text-anchor="end">{:.0} h</text>"#,
            y0 + 12.0,
            n as f64 * step_hours
        );
        for b in [p.lb, p.ub].into_iter().flatten() {
            let _ = writeln!(
                s,
                r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#c0392b" stroke-dasharray="4 3"/>"##,
                y = py(b)
            );
        }
        let pts: Vec<String> = p.values.iter().enumerate().map(|(t, &v)| format!("{:.1},{:.1}", px(t), py(v))).collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f4e79" stroke-width="1.2"/>"##,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Long-format CSV: `element,time,value,lb,ub` with time in hours.
pub fn panels_csv(step_hours: f64, panels: &[Panel]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["element", "time", "value", "lb", "ub"]).expect("in-memory write");
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
    for p in panels {
        for (t, v) in p.values.iter().enumerate() {
            w.write_record([
                p.name.clone(),
                format!("{}", t as f64 * step_hours),
                format!("{v}"),
                cell(p.lb),
                cell(p.ub),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Plot groups of a report: `(file stem, title, unit, panels)`.
pub fn report_panels(r: &RunReport) -> Vec<(&'static str, &'static str, &'static str, Vec<Panel>)> {
    let mut out = Vec::new();
    let b = &r.bounds;
    if let Some(m) = &r.monitored {
        let lines = m
            .line_flow
            .iter()
            .enumerate()
            .map(|(i, v)| Panel {
                name: b.line_names.get(i).cloned().unwrap_or_else(|| format!("line {i}")),
                values: v.iter().map(|x| x / 1e6).collect(),
                lb: b.line.get(i).copied().flatten().map(|c| -c / 1e6),
                ub: b.line.get(i).copied().flatten().map(|c| c / 1e6),
            })
            .collect::<Vec<_>>();
        if !lines.is_empty() {
            out.push(("line_flow", "Line flow", "MW", lines));
        }
        let pressure = m
            .pressure
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (lb, ub) = b.pressure.get(i).copied().unwrap_or_default();
                Panel {
                    name: b.gas_nodes.get(i).cloned().unwrap_or_else(|| format!("node {i}")),
                    values: v.iter().map(|x| x / 1e5).collect(),
                    lb: lb.map(|x| x / 1e5),
                    ub: ub.map(|x| x / 1e5),
                }
            })
            .collect::<Vec<_>>();
        if !pressure.is_empty() {
            out.push(("pressure", "Node pressure", "bar", pressure));
        }
        let temperature = m
            .temperature
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (lb, ub) = b.temperature.get(i).copied().unwrap_or_default();
                Panel {
                    name: b.heat_nodes.get(i).cloned().unwrap_or_else(|| format!("node {i}")),
                    values: v.clone(),
                    lb,
                    ub,
                }
            })
            .collect::<Vec<_>>();
        if !temperature.is_empty() {
            out.push(("temperature", "Node temperature above ambient", "K", temperature));
        }
    }
    if let Some(s) = &r.schedules {
        let groups: [(&str, &Vec<Vec<f64>>, f64); 11] = [
            ("tpu", &s.tpu, 1e6),
            ("ngu power", &s.ngu_p, 1e6),
            ("chp power", &s.chp_p, 1e6),
            ("wind", &s.wind, 1e6),
            ("heat pump power", &s.hp_p, 1e6),
            ("chp heat", &s.chp_h, 1e6),
            ("gas boiler heat", &s.gb_h, 1e6),
            ("heat pump heat", &s.hp_h, 1e6),
            ("gas well", &s.gw_m, 1.0),
            ("ngu gas", &s.ngu_m, 1.0),
            ("gas boiler gas", &s.gb_m, 1.0),
        ];
        let panels: Vec<Panel> = groups
            .iter()
            .flat_map(|&(name, v, div)| {
                v.iter().enumerate().map(move |(i, d)| Panel {
                    name: format!("{name} {i}"),
                    values: d.iter().map(|x| x / div).collect(),
                    lb: None,
                    ub: None,
                })
            })
            .collect();
        if !panels.is_empty() {
            out.push(("schedules", "Device schedules (MW, gas kg/s)", "MW | kg/s", panels));
        }
    }
    out
}

/// Writes one SVG and one CSV per plot group into `dir`.
pub fn export_plots(r: &RunReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let hours = r.step_seconds / 3600.0;
    let mut written = Vec::new();
    for (stem, title, unit, panels) in report_panels(r) {
        let title = format!("{title}, {} ({})", r.scenario, r.method);
        let svg = dir.join(format!("{stem}.svg"));
        write_atomic(&svg, panels_svg(&title, unit, hours, &panels).as_bytes())?;
        let csv = dir.join(format!("{stem}.csv"));
        write_atomic(&csv, panels_csv(hours, &panels).as_bytes())?;
        written.extend([svg, csv]);
    }
    Ok(written)
}
