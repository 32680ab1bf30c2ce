//! Minimal static SVG charts. Every plotted number is also written to CSV.

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(title: &str, y_label: &str, y_max: f64) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title),
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let plot_h = H - TOP - BOTTOM;
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = TOP + plot_h * (1.0 - i as f64 / 4.0);
        s += &format!(
            "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0,
            tick(v)
        );
    }
    s += &format!(
        "<line x1=\"{LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM
    );
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn nice_max(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if m > 0.0 {
        m * 1.1
    } else {
        1.0
    }
}

/// Grouped bar chart: one group per label, one bar per series.
pub fn bar_chart(title: &str, y_label: &str, labels: &[String], series: &[(&str, Vec<f64>)]) -> String {
    let y_max = nice_max(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut s = frame(title, y_label, y_max);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let group_w = plot_w / labels.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, label) in labels.iter().enumerate() {
        let x0 = LEFT + g as f64 * group_w + group_w * 0.1;
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let v = if v.is_finite() { v.max(0.0) } else { 0.0 };
            let h = plot_h * v / y_max;
            s += &format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>\n",
                x0 + k as f64 * bar_w,
                H - BOTTOM - h,
                bar_w,
                COLORS[k % COLORS.len()]
            );
        }
        s += &format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x0 + group_w * 0.4,
            H - BOTTOM + 18.0,
            escape(label)
        );
    }
    if series.len() > 1 {
        for (k, (name, _)) in series.iter().enumerate() {
            let x = LEFT + 10.0 + k as f64 * 150.0;
            s += &format!(
                "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\
                 <text x=\"{}\" y=\"{}\">{}</text>\n",
                H - 30.0,
                COLORS[k % COLORS.len()],
                x + 16.0,
                H - 20.0,
                escape(name)
            );
        }
    }
    s + "</svg>\n"
}

/// Single polyline over `ys` at x = 1..=n.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, ys: &[f64]) -> String {
    let y_max = nice_max(ys.iter().copied());
    let mut s = frame(title, y_label, y_max);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let n = ys.len().max(2) as f64 - 1.0;
    let points: Vec<String> = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let y = if y.is_finite() { y.max(0.0) } else { 0.0 };
            format!(
                "{:.1},{:.1}",
                LEFT + plot_w * i as f64 / n,
                H - BOTTOM - plot_h * y / y_max
            )
        })
        .collect();
    s += &format!(
        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
        COLORS[0],
        points.join(" ")
    );
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"{LEFT}\" y=\"{}\">1</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
        W / 2.0,
        H - 20.0,
        escape(x_label),
        H - BOTTOM + 16.0,
        W - RIGHT,
        H - BOTTOM + 16.0,
        ys.len()
    );
    s + "</svg>\n"
}
