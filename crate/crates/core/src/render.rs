//! Heatmap rendering of attribution reports as ANSI text or static HTML.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::explainers::{rank_descending, AttributionReport};
use crate::models::PairExample;

/// Saturation levels; 0 means the word is not highlighted.
pub const BUCKETS: u8 = 4;
pub const DEFAULT_HIGHLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Ansi,
    Html,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ansi" => Ok(Format::Ansi),
            "html" => Ok(Format::Html),
            _ => Err(Error::contract(format!("unknown render format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderedWord {
    pub sentence: usize,
    pub position: usize,
    pub token: usize,
    pub bucket: u8,
}

/// Which words get highlighted and how strongly.
///
/// The top `highlight` words by Θ (lower index on ties) are highlighted, with
/// bucket `1 + floor(4 * #{highlighted j : θ_j < θ_i} / m)`, so equal values share
/// the lowest bucket they can. Words with Θ = 0 stay plain even when chosen.
pub fn highlight_plan(report: &AttributionReport, example: &PairExample, highlight: usize) -> Result<Vec<RenderedWord>> {
    ensure!(
        report.theta.len() == example.len() && report.n1 == example.n1(),
        "report {} covers {} words ({} + {}) but the example has {} ({} + {})",
        report.id,
        report.theta.len(),
        report.n1,
        report.n2,
        example.len(),
        example.n1(),
        example.n2()
    );
    let theta = &report.theta;
    let chosen: Vec<usize> = rank_descending(theta)
        .into_iter()
        .take(highlight)
        .collect();
    let m = chosen.len();
    let mut buckets = vec![0u8; theta.len()];
    for &i in &chosen {
        let below = chosen.iter().filter(|&&j| theta[j] < theta[i]).count();
        if theta[i] > 0.0 {
            buckets[i] = 1 + ((BUCKETS as usize * below) / m) as u8;
        }
    }
    Ok((0..example.len())
        .map(|i| {
            let sentence = example.sentence_of(i);
            let position = if sentence == 0 { i } else { i - example.n1() };
            RenderedWord {
                sentence,
                position,
                token: example.token_at(i),
                bucket: buckets[i],
            }
        })
        .collect())
}

// Pink for the first sentence, cyan for the second, light to saturated.
const PINK_HTML: [&str; 4] = ["#fde0ef", "#f9b4d6", "#f37fb8", "#e7298a"];
const CYAN_HTML: [&str; 4] = ["#e0f7fa", "#a5e8f0", "#5fd3e3", "#00acc1"];
const PINK_ANSI: [u8; 4] = [225, 218, 212, 198];
const CYAN_ANSI: [u8; 4] = [195, 159, 123, 44];

fn ansi(words: &[RenderedWord], report: &AttributionReport) -> String {
    let mut out = format!("#{} [{}] predicted {}\n", report.id, report.method, report.predicted);
    for s in 0..2 {
        let palette = if s == 0 { PINK_ANSI } else { CYAN_ANSI };
        let line: Vec<String> = words
            .iter()
            .filter(|w| w.sentence == s)
            .map(|w| match w.bucket {
                0 => w.token.to_string(),
                b => format!("\x1b[48;5;{}m\x1b[30m{}\x1b[0m", palette[b as usize - 1], w.token),
            })
            .collect();
        let _ = writeln!(out, "s{}: {}", s + 1, line.join(" "));
    }
    out
}

fn html(words: &[RenderedWord], report: &AttributionReport) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>attribution</title></head>\n\
         <body style=\"font-family: monospace\">\n",
    );
    let _ = writeln!(
        out,
        "<p>example {} &middot; {} &middot; predicted {}</p>",
        report.id, report.method, report.predicted
    );
    for s in 0..2 {
        let palette = if s == 0 { PINK_HTML } else { CYAN_HTML };
        out.push_str("<p>");
        let spans: Vec<String> = words
            .iter()
            .filter(|w| w.sentence == s)
            .map(|w| match w.bucket {
                0 => format!("<span>{}</span>", w.token),
                b => format!(
                    "<span data-bucket=\"{b}\" style=\"background-color: {}; padding: 0 2px\">{}</span>",
                    palette[b as usize - 1],
                    w.token
                ),
            })
            .collect();
        out.push_str(&spans.join(" "));
        out.push_str("</p>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

/// Renders one report with the default top-4 highlighting.
pub fn render_report(report: &AttributionReport, example: &PairExample, format: Format) -> Result<String> {
    let words = highlight_plan(report, example, DEFAULT_HIGHLIGHT)?;
    Ok(match format {
        Format::Ansi => ansi(&words, report),
        Format::Html => html(&words, report),
    })
}

/// Renders many reports into one document.
pub fn render_all(reports: &[AttributionReport], examples: &[PairExample], format: Format) -> Result<String> {
    ensure!(
        reports.len() == examples.len(),
        "{} reports for {} examples",
        reports.len(),
        examples.len()
    );
    let mut parts = Vec::with_capacity(reports.len());
    for (r, ex) in reports.iter().zip(examples) {
        let words = highlight_plan(r, ex, DEFAULT_HIGHLIGHT)?;
        parts.push(match format {
            Format::Ansi => ansi(&words, r),
            Format::Html => html(&words, r),
        });
    }
    Ok(match format {
        Format::Ansi => parts.join("\n"),
        Format::Html => {
            // one document: keep the first head, strip the rest down to bodies
            let bodies: Vec<&str> = parts
                .iter()
                .map(|p| {
                    let start = p.find("<p>").unwrap_or(0);
                    let end = p.rfind("</body>").unwrap_or(p.len());
                    &p[start..end]
                })
                .collect();
            let mut out = String::from(
                "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>attribution</title></head>\n\
                 <body style=\"font-family: monospace\">\n",
            );
            out.push_str(&bodies.join("<hr>\n"));
            out.push_str("</body>\n</html>\n");
            out
        }
    })
}
