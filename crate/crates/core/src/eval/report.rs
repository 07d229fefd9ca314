use std::fmt::Write as _;

use super::{DurationResult, SequenceReport, TrialReport};

/// Aligned columns: duration, segment count, chance, top-10 and rank accuracy (%).
pub fn render_retrieval_text(rows: &[DurationResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>10} {:>9} {:>9} {:>9} {:>9}", "duration_s", "segments", "chance%", "top10%", "rank%");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>10.1} {:>9} {:>9.1} {:>9.1} {:>9.1}",
            r.duration_s,
            r.segments,
            100.0 * r.chance_top10,
            100.0 * r.top10_accuracy,
            100.0 * r.rank_accuracy
        );
    }
    out
}

pub fn render_sequence_text(rep: &SequenceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>9} {:>5}", "trial", "score", "null", "p", "sig");
    for t in &rep.trials {
        let _ = writeln!(
            out,
            "{:<16} {:>8.4} {:>8.4} {:>9.4} {:>5}",
            t.id,
            t.score,
            t.null_score_mean,
            t.p_value,
            if t.significant { "yes" } else { "no" }
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<16} {:>8.4}", "score", rep.mean_score);
    let _ = writeln!(out, "{:<16} {:>8.4}", "null score", rep.mean_null_score);
    let _ = writeln!(out, "{:<16} {:>8.1}", "window acc %", rep.window_accuracy);
    let _ = writeln!(out, "{:<16} {:>8.1}", "trial acc %", rep.trial_accuracy);
    out
}

/// Score-versus-time plot of one trial: decoded windows, the null mean, and
/// markers on significant windows.
pub fn render_score_svg(trial: &TrialReport, stride_s: f64, level: f64) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let n = trial.window_scores.len().max(2);
    let span = (n - 1) as f64 * stride_s;
    let x = |k: usize| pad + (k as f64 * stride_s) / span * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let path = |v: &[f64]| {
        v.iter()
            .enumerate()
            .map(|(k, &s)| format!("{}{:.2},{:.2}", if k == 0 { 'M' } else { 'L' }, x(k), y(s)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{tick}</text>"#,
            pad - 4.0,
            y(tick) + 3.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{} ({:.0} s)</text>"#,
        w / 2.0,
        pad / 2.0,
        trial.id,
        span
    );
    let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#, path(&trial.null_window_mean));
    let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, path(&trial.window_scores));
    for (k, (&s, &p)) in trial.window_scores.iter().zip(&trial.window_p).enumerate() {
        if p < level {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="firebrick"/>"#, x(k), y(s));
        }
    }
    out.push_str("</svg>\n");
    out
}
