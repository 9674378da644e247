//! Plain SVG charts for the budget report.

use std::fmt::Write as _;

use resolve_core::budget::{Interface, LossBudget, LossClass};

use crate::campaign::ChipReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 60.0;

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Median single-photon and high-power loss per chip, with interquartile
/// whiskers.
pub fn loss_bars(chips: &[ChipReport]) -> String {
    let mut out = String::new();
    open(&mut out, "Median internal loss per chip");
    let top = chips
        .iter()
        .map(|c| c.stats.single_photon.q3.max(c.stats.high_power.q3))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.1;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y_of = |v: f64| HEIGHT - MARGIN - plot_h * v / top;
    let slot = (WIDTH - 2.0 * MARGIN) / chips.len().max(1) as f64;
    let bar = slot * 0.35;
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" text-anchor="end">{:.2e}</text>"#,
        MARGIN - 4.0,
        top
    );
    for (k, chip) in chips.iter().enumerate() {
        let x0 = MARGIN + slot * k as f64 + slot * 0.1;
        for (j, (summary, fill, label)) in [
            (&chip.stats.single_photon, "#9ecae1", "single-photon"),
            (&chip.stats.high_power, "#3182bd", "high-power"),
        ]
        .into_iter()
        .enumerate()
        {
            let x = x0 + j as f64 * bar;
            let y = y_of(summary.median);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{fill}"><title>{} {label}: {:e}</title></rect>"#,
                HEIGHT - MARGIN - y,
                escape(&chip.chip_id),
                summary.median
            );
            let xc = x + bar / 2.0;
            let _ = writeln!(
                out,
                r#"<line x1="{xc:.2}" y1="{:.2}" x2="{xc:.2}" y2="{:.2}" stroke="black"/>"#,
                y_of(summary.q1),
                y_of(summary.q3)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + bar,
            HEIGHT - MARGIN + 16.0,
            escape(&chip.chip_id)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One horizontal bar split into the six budget components, as percentages
/// of the standard chip's loss.
pub fn budget_bar(budget: &LossBudget) -> String {
    let mut out = String::new();
    open(&mut out, "Loss budget relative to the standard chip");
    let span = WIDTH - 2.0 * MARGIN;
    let mut x = MARGIN;
    let y = HEIGHT / 2.0 - 30.0;
    let colors = |class: LossClass, interface: Interface| match (class, interface) {
        (LossClass::Tls, Interface::SubstrateAir) => "#de2d26",
        (LossClass::Tls, Interface::MetalAir) => "#fc9272",
        (LossClass::Tls, Interface::Residual) => "#fee0d2",
        (LossClass::NonTls, Interface::SubstrateAir) => "#3182bd",
        (LossClass::NonTls, Interface::MetalAir) => "#9ecae1",
        (LossClass::NonTls, Interface::Residual) => "#deebf7",
    };
    for (k, c) in budget.components.iter().enumerate() {
        let label = format!("{} {}", interface_label(c.interface), class_label(c.loss_class));
        let w = span * c.fraction.max(0.0);
        if w > 0.0 {
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="60" fill="{}" stroke="white"><title>{label}: {:.1}%</title></rect>"#,
                colors(c.loss_class, c.interface),
                100.0 * c.fraction
            );
        }
        let ly = HEIGHT / 2.0 + 50.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{}" y="{ly:.2}">{label}: {:.1}%</text>"#,
            ly - 9.0,
            colors(c.loss_class, c.interface),
            MARGIN + 16.0,
            100.0 * c.fraction
        );
        x += w;
    }
    out.push_str("</svg>\n");
    out
}

fn interface_label(i: Interface) -> &'static str {
    match i {
        Interface::SubstrateAir => "SA",
        Interface::MetalAir => "MA",
        Interface::Residual => "residual",
    }
}

fn class_label(c: LossClass) -> &'static str {
    match c {
        LossClass::Tls => "TLS",
        LossClass::NonTls => "non-TLS",
    }
}
