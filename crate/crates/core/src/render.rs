//! Static artifacts: an SVG box overlay and an HTML word listing.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::eval::{image_similarity, text_similarity, Explained};
use crate::model::{ExpertAnnotation, Explanation, Instance};

pub const MODEL_COLOR: &str = "#1f5fff";
pub const EXPERT_COLOR: &str = "#19a84a";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Title-cased finding for captions.
fn title(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Image-sized SVG with the model's boxes in blue (rank order) and the
/// expert's in green (input order) over an optional background image
/// referenced by path.
pub fn render_image_overlay(
    instance: &Instance,
    explanation: &Explanation,
    annotation: Option<&ExpertAnnotation>,
    background: Option<&str>,
) -> String {
    let size = instance.image();
    let (w, h) = (size.width, size.height);
    let caption_lines = 1 + annotation.is_some() as u32 + explanation.prediction.is_some() as u32;
    let caption_h = 18 * caption_lines + 8;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" viewBox="0 0 {w} {}">"#,
        h + caption_h,
        h + caption_h
    );
    if let Some(bg) = background {
        let _ = writeln!(
            s,
            r#"  <image href="{}" x="0" y="0" width="{w}" height="{h}" preserveAspectRatio="none"/>"#,
            escape(bg)
        );
    }
    let rect = |s: &mut String, class: &str, color: &str, b: &crate::model::BBox, label: &str| {
        let _ = writeln!(
            s,
            r#"  <rect class="{class}" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{color}" stroke-width="2"><title>{}</title></rect>"#,
            b.x1,
            b.y1,
            b.width(),
            b.height(),
            escape(label)
        );
    };
    for (rank, item) in explanation.box_items.iter().enumerate() {
        rect(
            &mut s,
            "model",
            MODEL_COLOR,
            &item.bbox,
            &format!("rank {} box {} score {:.4}", rank + 1, item.index, item.score),
        );
    }
    if let Some(a) = annotation {
        for (i, b) in a.boxes.iter().enumerate() {
            rect(&mut s, "expert", EXPERT_COLOR, b, &format!("{} box {}", a.annotator_id, i + 1));
        }
    }
    let mut lines = Vec::new();
    if let Some(a) = annotation {
        lines.push(format!(
            "Similarity: {:.3}",
            image_similarity(&explanation.box_list(), &a.boxes)
        ));
    }
    lines.push(format!("Target: {}", title(&explanation.finding)));
    if let Some(p) = explanation.prediction {
        lines.push(format!("Prediction: {p:.3}"));
    }
    for (i, line) in lines.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"  <text x="4" y="{}" font-family="sans-serif" font-size="14">{}</text>"#,
            h + 18 * (i as u32 + 1),
            escape(line)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn word_list(s: &mut String, heading: &str, words: &[String], shared: &BTreeSet<String>) {
    let _ = writeln!(s, "<p><b>{}</b> ", escape(heading));
    if words.is_empty() {
        s.push_str("<span class=\"none\">(none)</span>");
    } else {
        let parts: Vec<String> = words
            .iter()
            .map(|w| {
                if shared.contains(w) {
                    format!("<mark>{}</mark>", escape(w))
                } else {
                    escape(w)
                }
            })
            .collect();
        s.push_str(&parts.join(", "));
    }
    s.push_str("</p>\n");
}

/// HTML page listing the expert's and the model's words with shared words
/// marked, plus the text similarity when an annotation is given.
pub fn render_text_listing(
    instance: &Instance,
    explanation: &Explanation,
    annotation: Option<&ExpertAnnotation>,
) -> String {
    let model_words: Vec<String> = explanation.word_items.iter().map(|w| w.word.clone()).collect();
    let model_set = explanation.word_set();
    let mut s = String::new();
    s.push_str("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\">");
    let _ = write!(
        s,
        "<title>{} / {}</title>",
        escape(instance.id()),
        escape(&explanation.finding)
    );
    s.push_str("<style>mark{background:#ffe066}</style></head>\n<body>\n");
    let _ = writeln!(s, "<p>Target: {}</p>", escape(&title(&explanation.finding)));
    match annotation {
        Some(a) => {
            let shared: BTreeSet<String> = model_set.intersection(&a.words).cloned().collect();
            let expert: Vec<String> = a.words.iter().cloned().collect();
            word_list(&mut s, "Domain Expert:", &expert, &shared);
            word_list(&mut s, "Explainable Model:", &model_words, &shared);
            let _ = writeln!(s, "<p>Similarity: {:.3}</p>", text_similarity(&model_set, &a.words));
        }
        None => word_list(&mut s, "Explainable Model:", &model_words, &BTreeSet::new()),
    }
    s.push_str("</body>\n</html>\n");
    s
}
