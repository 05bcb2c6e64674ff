//! Minimal SVG 1.1 scatter plot of method error against unregularized error.

use std::fmt::Write;

use causalreg::simulation::{ExperimentMethod, ExperimentRecord};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 56.0;

fn color(method: ExperimentMethod) -> &'static str {
    match method {
        ExperimentMethod::ConCorrRidge => "#1f78b4",
        ExperimentMethod::ConCorrLasso => "#33a02c",
        ExperimentMethod::CvRidge => "#e31a1c",
        ExperimentMethod::CvLasso => "#ff7f00",
    }
}

/// One `<circle>` per record, plus the reference lines `y = x` and `y = 0.5`.
pub fn scatter(records: &[ExperimentRecord]) -> String {
    let max_of = |f: fn(&ExperimentRecord) -> f64| {
        records.iter().map(f).filter(|v| v.is_finite()).fold(1.0_f64, f64::max)
    };
    let x_max = max_of(|r| r.err_unreg);
    let y_max = max_of(|r| r.err_method);
    let px = |x: f64| PAD + x.clamp(0.0, x_max) / x_max * (WIDTH - 2.0 * PAD);
    let py = |y: f64| HEIGHT - PAD - y.clamp(0.0, y_max) / y_max * (HEIGHT - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    // axes
    let _ = writeln!(
        s,
        r#"<path d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" fill="none" stroke="black"/>"#,
        x0 = px(0.0),
        y0 = py(0.0),
        x1 = px(x_max),
        y1 = py(y_max)
    );
    for k in 0..=4 {
        let (xv, yv) = (x_max * k as f64 / 4.0, y_max * k as f64 / 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{xv:.2}</text>"#,
            px(xv),
            py(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{yv:.2}</text>"#,
            px(0.0) - 6.0,
            py(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">error of unregularized regression</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">error of regularized regression</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    // reference lines
    let diag = x_max.min(y_max);
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        px(0.0),
        py(0.0),
        px(diag),
        py(diag)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        px(0.0),
        py(0.5),
        px(x_max),
        py(0.5)
    );

    let _ = writeln!(s, r#"<g fill-opacity="0.7">"#);
    for r in records {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"><title>run {} {}</title></circle>"#,
            px(r.err_unreg),
            py(r.err_method),
            color(r.method),
            r.run_id,
            r.method
        );
    }
    let _ = writeln!(s, "</g>");

    let mut seen: Vec<ExperimentMethod> = Vec::new();
    for r in records {
        if !seen.contains(&r.method) {
            seen.push(r.method);
        }
    }
    for (k, m) in seen.iter().enumerate() {
        let y = PAD + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="8" height="8" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            WIDTH - PAD - 90.0,
            y - 8.0,
            color(*m),
            WIDTH - PAD - 78.0,
            y,
            m
        );
    }
    s.push_str("</svg>\n");
    s
}
