//! Self-contained SVG plots drawn from training histories.

use std::fmt::Write as _;
use std::path::Path;

use pathsel_core::orchestrator::TrainingHistory;

use crate::error::{io_err, Error, Result};

const CELL: f64 = 12.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;

fn empty(what: &str) -> Error {
    Error::Core(pathsel_core::Error::Data(format!("{what}: history is empty")))
}

/// Fill for the `order`-th selected domain out of `max_order`: light to dark blue.
fn shade(order: u32, max_order: u32) -> String {
    let t = if max_order <= 1 {
        1.0
    } else {
        (order - 1) as f64 / (max_order - 1) as f64
    };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(198.0, 8.0), lerp(219.0, 48.0), lerp(239.0, 107.0))
}

/// Grid with one row per intermediate domain and one column per epoch.
/// Selected cells are shaded by their position on the path, others white.
/// `row_labels` names rows top to bottom.
pub fn selection_heatmap(history: &TrainingHistory, row_labels: &[String]) -> Result<String> {
    let first = history.records.first().ok_or_else(|| empty("selection heatmap"))?;
    let k = first.selection_flags.len();
    let epochs = history.records.len();
    let max_order = history
        .records
        .iter()
        .flat_map(|r| r.selection_flags.iter().copied())
        .max()
        .unwrap_or(0);
    let w = MARGIN_LEFT + CELL * epochs as f64 + 20.0;
    let h = MARGIN_TOP + CELL * k as f64 + MARGIN_BOTTOM;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN_LEFT}" y="16">Domain selection by epoch</text>"#);
    let _ = writeln!(s, r##"<g id="cells" stroke="#999999" stroke-width="0.5">"##);
    for (col, rec) in history.records.iter().enumerate() {
        if rec.selection_flags.len() != k {
            return Err(Error::Core(pathsel_core::Error::Contract(format!(
                "epoch {} has {} flags, expected {k}",
                rec.epoch,
                rec.selection_flags.len()
            ))));
        }
        for (row, &flag) in rec.selection_flags.iter().enumerate() {
            let fill = if flag == 0 { "#ffffff".to_string() } else { shade(flag, max_order) };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{fill}" data-epoch="{}" data-row="{row}"/>"#,
                MARGIN_LEFT + CELL * col as f64,
                MARGIN_TOP + CELL * row as f64,
                rec.epoch
            );
        }
    }
    let _ = writeln!(s, "</g>");
    for row in 0..k {
        let label = row_labels.get(row).cloned().unwrap_or_else(|| row.to_string());
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 4.0,
            MARGIN_TOP + CELL * row as f64 + CELL * 0.75,
            xml_escape(&label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch (1 to {epochs})</text>"#,
        MARGIN_LEFT + CELL * epochs as f64 / 2.0,
        h - 10.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#e6a700", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Mean cumulative reward per epoch, one polyline per history.
pub fn reward_curve(histories: &[(String, &TrainingHistory)]) -> Result<String> {
    if histories.is_empty() || histories.iter().any(|(_, h)| h.records.is_empty()) {
        return Err(empty("reward curve"));
    }
    let (pw, ph) = (480.0, 240.0);
    let (x0, y0) = (MARGIN_LEFT, MARGIN_TOP);
    let max_epoch = histories.iter().map(|(_, h)| h.records.len()).max().unwrap_or(1);
    let values = histories.iter().flat_map(|(_, h)| h.mean_rewards());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let sx = |e: usize| x0 + if max_epoch > 1 { (e - 1) as f64 / (max_epoch - 1) as f64 * pw } else { pw / 2.0 };
    let sy = |v: f64| y0 + (hi - v) / (hi - lo) * ph;
    let (w, h) = (x0 + pw + 140.0, y0 + ph + MARGIN_BOTTOM + 10.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="{x0}" y="16">Mean cumulative reward</text>"#);
    let _ = writeln!(
        s,
        r##"<g stroke="#000000" stroke-width="1"><line x1="{x0}" y1="{}" x2="{}" y2="{}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}"/></g>"##,
        y0 + ph,
        x0 + pw,
        y0 + ph,
        y0 + ph
    );
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, sy(v) + 3.0, v);
    }
    let _ = writeln!(s, r#"<text x="{x0}" y="{}">1</text>"#, y0 + ph + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{max_epoch}</text>"#, x0 + pw, y0 + ph + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, x0 + pw / 2.0, y0 + ph + 30.0);
    for (i, (name, hist)) in histories.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = hist
            .records
            .iter()
            .map(|r| format!("{:.3},{:.3}", sx(r.epoch), sy(r.mean_cumulative_reward)))
            .collect();
        let vals: Vec<String> = hist.mean_rewards().iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}" data-label="{}" data-values="{}"/>"#,
            pts.join(" "),
            xml_escape(name),
            vals.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            x0 + pw + 10.0,
            y0 + 12.0 * (i + 1) as f64,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pathsel_core::orchestrator::EpochRecord;

    fn hist(flags: &[Vec<u32>], rewards: &[f64]) -> TrainingHistory {
        TrainingHistory {
            records: flags
                .iter()
                .zip(rewards)
                .enumerate()
                .map(|(i, (f, &r))| EpochRecord {
                    epoch: i + 1,
                    l_mi: 0.0,
                    l_ms: 0.0,
                    l_ce: 0.0,
                    mean_cumulative_reward: r,
                    selection_flags: f.clone(),
                    path: vec![],
                    rollouts: vec![],
                    target_accuracy: None,
                })
                .collect(),
        }
    }

    #[test]
    fn heatmap_shape_and_white_cells() {
        let h = hist(&vec![vec![0, 0, 0, 0]; 20], &[0.0; 20]);
        let svg = selection_heatmap(&h, &[]).unwrap();
        assert_eq!(svg.matches("<rect").count(), 80);
        assert_eq!(svg.matches("fill=\"#ffffff\"").count(), 80);
    }

    #[test]
    fn heatmap_all_selected_is_shaded() {
        let h = hist(&[vec![1, 2, 3]], &[1.0]);
        let svg = selection_heatmap(&h, &["18".into(), "36".into(), "54".into()]).unwrap();
        assert_eq!(svg.matches("fill=\"#ffffff\"").count(), 0);
        assert!(svg.contains(">36</text>"));
    }

    #[test]
    fn constant_rewards_give_flat_line() {
        let h = hist(&vec![vec![0]; 3], &[2.5; 3]);
        let svg = reward_curve(&[("a".into(), &h)]).unwrap();
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn two_histories_two_polylines() {
        let a = hist(&vec![vec![0]; 3], &[1.0, 2.0, 3.0]);
        let b = hist(&vec![vec![0]; 2], &[0.5, -0.123456789]);
        let svg = reward_curve(&[("a".into(), &a), ("b".into(), &b)]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("-1.234568e-1"));
    }

    #[test]
    fn empty_history_is_an_error() {
        assert!(selection_heatmap(&TrainingHistory::default(), &[]).is_err());
    }
}
