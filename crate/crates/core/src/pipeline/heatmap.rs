//! SVG heatmaps: one row per attention source, one cell per token, fill
//! intensity proportional to the weight divided by the row maximum.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const LABEL_WIDTH: f64 = 80.0;
const ROW_HEIGHT: f64 = 28.0;
const MARGIN: f64 = 8.0;
const FILL: &str = "#b2182b";

/// XML-escapes text for element content and attribute values.
pub fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' && c != '\r' => out.push('\u{fffd}'),
            c => out.push(c),
        }
    }
    out
}

fn cell_width(token: &str) -> f64 {
    (token.chars().count() as f64 * 8.0 + 16.0).max(40.0)
}

/// Per-row intensities in [0, 1]: each weight divided by the row maximum
/// (all zeros when the row maximum is zero).
pub fn row_intensities(weights: &[f64]) -> Vec<f64> {
    let max = weights.iter().copied().fold(0.0_f64, f64::max);
    if max > 0.0 {
        weights.iter().map(|w| (w / max).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; weights.len()]
    }
}

/// Renders rows of `(source label, weights)` over `tokens` as an SVG 1.1
/// document.
pub fn render_heatmap(
    title: &str,
    tokens: &[String],
    rows: &[(String, Vec<f64>)],
) -> Result<String> {
    if tokens.is_empty() {
        return Err(Error::usage("heatmap needs at least one token"));
    }
    for (label, w) in rows {
        if w.len() != tokens.len() {
            return Err(Error::usage(format!(
                "heatmap row `{label}` has {} weights for {} tokens",
                w.len(),
                tokens.len()
            )));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::usage(format!(
                "heatmap row `{label}` has negative or non-finite weights"
            )));
        }
    }
    let widths: Vec<f64> = tokens.iter().map(|t| cell_width(t)).collect();
    let width = 2.0 * MARGIN + LABEL_WIDTH + widths.iter().sum::<f64>();
    let height = 2.0 * MARGIN + ROW_HEIGHT * (rows.len() as f64 + 1.0);

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<title>{}</title>", xml_escape(title));
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>"
    );
    for (r, (label, weights)) in rows.iter().enumerate() {
        let y = MARGIN + ROW_HEIGHT * r as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
            MARGIN + LABEL_WIDTH - 6.0,
            y + ROW_HEIGHT / 2.0,
            xml_escape(label)
        );
        let mut x = MARGIN + LABEL_WIDTH;
        for ((w, width), intensity) in weights.iter().zip(&widths).zip(row_intensities(weights)) {
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{width}\" height=\"{ROW_HEIGHT}\" fill=\"{FILL}\" fill-opacity=\"{intensity:.4}\" stroke=\"#cccccc\" stroke-width=\"0.5\"><title>{w:.4}</title></rect>"
            );
            x += width;
        }
    }
    let y = MARGIN + ROW_HEIGHT * rows.len() as f64 + ROW_HEIGHT / 2.0;
    let mut x = MARGIN + LABEL_WIDTH;
    for (t, width) in tokens.iter().zip(&widths) {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"middle\" dominant-baseline=\"middle\">{}</text>",
            x + width / 2.0,
            xml_escape(t)
        );
        x += width;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn opacities(svg: &str) -> Vec<f64> {
        svg.split("fill-opacity=\"")
            .skip(1)
            .map(|rest| rest[..rest.find('"').unwrap()].parse().unwrap())
            .collect()
    }

    #[test]
    fn uniform_row_has_equal_intensities() {
        let svg = render_heatmap(
            "s1",
            &toks(&["a", "b", "c", "d"]),
            &[("MA".into(), vec![0.25; 4])],
        )
        .unwrap();
        assert_eq!(opacities(&svg), vec![1.0; 4]);
    }

    #[test]
    fn one_hot_row_has_single_saturated_cell() {
        let svg = render_heatmap(
            "s1",
            &toks(&["a", "b", "c"]),
            &[("nFix".into(), vec![0.0, 1.0, 0.0])],
        )
        .unwrap();
        assert_eq!(opacities(&svg), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn intensities_are_row_normalized() {
        assert_eq!(row_intensities(&[0.1, 0.4, 0.2]), vec![0.25, 1.0, 0.5]);
        assert_eq!(row_intensities(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn svg_structure_and_escaping() {
        let svg = render_heatmap(
            "a<b",
            &toks(&["Tom & \"Jerry\"", "<3"]),
            &[
                ("MA".into(), vec![0.5, 0.5]),
                ("RAN".into(), vec![0.9, 0.1]),
            ],
        )
        .unwrap();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains("viewBox=\"0 0 "));
        assert!(svg.contains("Tom &amp; &quot;Jerry&quot;"));
        assert!(svg.contains("&lt;3"));
        assert!(!svg.contains("<3"));
        assert_eq!(svg.matches("<svg").count(), 1);
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(opacities(&svg).len(), 4);
    }

    #[test]
    fn rejects_mismatched_rows() {
        assert!(render_heatmap("s", &toks(&["a", "b"]), &[("MA".into(), vec![1.0])]).is_err());
        assert!(render_heatmap("s", &toks(&["a"]), &[("MA".into(), vec![-1.0])]).is_err());
        assert!(render_heatmap("s", &[], &[]).is_err());
    }
}
