//! Deterministic SVG charts: per-rollout uncertainty traces with gate
//! shading, and the three-panel safety-filter replay view. No timestamps
//! and no external assets, so identical inputs give byte-identical files.

use std::fmt::Write as _;

use crate::cbf::{EllipsoidSafeSet, ReplayRow};
use crate::ensemble::TraceRow;
use crate::sim::Vec3;

const CHART_W: f64 = 720.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 36.0;

/// Affine map from a data interval to a pixel interval.
#[derive(Debug, Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn new(d0: f64, d1: f64, p0: f64, p1: f64) -> Scale {
        let (d0, d1) = if (d1 - d0).abs() < 1e-30 {
            (d0 - 0.5, d1 + 0.5)
        } else {
            (d0, d1)
        };
        Scale { d0, d1, p0, p1 }
    }

    fn map(&self, x: f64) -> f64 {
        self.p0 + (x - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }
}

fn fmt_px(v: f64) -> String {
    // Pixel coordinates rounded to 1/100 keep files small and stable.
    format!("{:.2}", v)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Svg {
        Svg {
            body: String::new(),
            width,
            height,
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\" stroke-width=\"{width}\"/>",
            fmt_px(x1),
            fmt_px(y1),
            fmt_px(x2),
            fmt_px(y2)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64, opacity: f64) {
        if pts.is_empty() {
            return;
        }
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            if i > 0 {
                d.push(' ');
            }
            let _ = write!(d, "{},{}", fmt_px(*x), fmt_px(*y));
        }
        let _ = writeln!(
            self.body,
            "<polyline points=\"{d}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\" stroke-opacity=\"{opacity}\"/>"
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" fill-opacity=\"{opacity}\"/>",
            fmt_px(x),
            fmt_px(y),
            fmt_px(w),
            fmt_px(h)
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" font-size=\"{size}\" font-family=\"sans-serif\" text-anchor=\"{anchor}\">{content}</text>",
            fmt_px(x),
            fmt_px(y)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

/// Axis frame with min/mid/max tick labels.
#[allow(clippy::too_many_arguments)]
fn draw_frame(
    svg: &mut Svg,
    sx: &Scale,
    sy: &Scale,
    x_label: &str,
    y_label: &str,
    title: &str,
    top: f64,
    bottom: f64,
) {
    svg.line(sx.p0, bottom, sx.p1, bottom, "#333", 1.0);
    svg.line(sx.p0, top, sx.p0, bottom, "#333", 1.0);
    for frac in [0.0, 0.5, 1.0] {
        let xv = sx.d0 + frac * (sx.d1 - sx.d0);
        let xp = sx.map(xv);
        svg.line(xp, bottom, xp, bottom + 4.0, "#333", 1.0);
        svg.text(xp, bottom + 16.0, 11.0, "middle", &fmt_tick(xv));
        let yv = sy.d0 + frac * (sy.d1 - sy.d0);
        let yp = sy.map(yv);
        svg.line(sx.p0 - 4.0, yp, sx.p0, yp, "#333", 1.0);
        svg.text(sx.p0 - 7.0, yp + 4.0, 11.0, "end", &fmt_tick(yv));
    }
    svg.text((sx.p0 + sx.p1) / 2.0, bottom + 30.0, 12.0, "middle", x_label);
    svg.text(sx.p0, top - 8.0, 12.0, "start", &format!("{y_label} — {title}"));
}

/// Per-rollout uncertainty traces: gray lines, red shading on flagged
/// steps, and a bold overlay of the cross-rollout maximum.
pub fn sigma_chart(traces: &[&[TraceRow]], title: &str) -> String {
    let mut t_max = 1.0f64;
    let mut s_max = f64::MIN_POSITIVE;
    for trace in traces {
        for row in *trace {
            t_max = t_max.max(row.t as f64);
            if let Some(s) = row.sigma_hat {
                s_max = s_max.max(s);
            }
        }
    }
    let mut svg = Svg::new(CHART_W, PANEL_H + MARGIN_T + MARGIN_B);
    let top = MARGIN_T;
    let bottom = MARGIN_T + PANEL_H;
    let sx = Scale::new(0.0, t_max, MARGIN_L, CHART_W - MARGIN_R);
    let sy = Scale::new(0.0, s_max * 1.05, bottom, top);

    // Shade every flagged step across all rollouts first, under the lines.
    let band = (sx.map(1.0) - sx.map(0.0)).max(1.0);
    for trace in traces {
        for row in *trace {
            if row.ood_flag == Some(true) {
                let x = sx.map(row.t as f64);
                svg.rect(x - band / 2.0, top, band, bottom - top, "#d62728", 0.10);
            }
        }
    }

    for trace in traces {
        let pts: Vec<(f64, f64)> = trace
            .iter()
            .filter_map(|r| r.sigma_hat.map(|s| (sx.map(r.t as f64), sy.map(s))))
            .collect();
        svg.polyline(&pts, "#777", 1.0, 0.6);
    }

    // Cross-rollout maximum per step.
    let horizon = t_max as usize + 1;
    let mut max_curve = vec![f64::NEG_INFINITY; horizon];
    for trace in traces {
        for row in *trace {
            if let Some(s) = row.sigma_hat {
                max_curve[row.t] = max_curve[row.t].max(s);
            }
        }
    }
    let pts: Vec<(f64, f64)> = max_curve
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(t, v)| (sx.map(t as f64), sy.map(*v)))
        .collect();
    svg.polyline(&pts, "#1f77b4", 2.0, 1.0);

    draw_frame(&mut svg, &sx, &sy, "step", "max |action variance|", title, top, bottom);
    svg.finish()
}

/// Isometric projection used for the path panel.
fn iso(p: Vec3) -> (f64, f64) {
    let c30 = (std::f64::consts::PI / 6.0).cos();
    let s30 = 0.5;
    (
        (p.x() - p.y()) * c30,
        (p.x() + p.y()) * s30 - p.z(),
    )
}

fn ellipse_ring(set: &EllipsoidSafeSet, plane: usize) -> Vec<Vec3> {
    let [a, b, c] = set.semi_axes;
    let n = 64;
    (0..=n)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let (u, v) = (th.cos(), th.sin());
            let local = match plane {
                0 => Vec3([a * u, b * v, 0.0]),
                1 => Vec3([a * u, 0.0, c * v]),
                _ => Vec3([0.0, b * u, c * v]),
            };
            local + set.origin
        })
        .collect()
}

/// Three stacked panels for an offline replay: barrier values, velocity
/// magnitudes, and the isometric path against the safe-set outline.
pub fn replay_chart(rows: &[ReplayRow], set: &EllipsoidSafeSet, title: &str) -> String {
    let n_panels = 3.0;
    let height = MARGIN_T + n_panels * (PANEL_H + MARGIN_B);
    let mut svg = Svg::new(CHART_W, height);

    // Panel 1: barrier value of the filtered path and of the reference.
    let h_ref: Vec<f64> = rows.iter().map(|r| set.barrier(r.reference)).collect();
    let mut h_lo = 0.0f64;
    let mut h_hi = 1.0f64;
    for (r, hr) in rows.iter().zip(&h_ref) {
        h_lo = h_lo.min(r.h).min(*hr);
        h_hi = h_hi.max(r.h).max(*hr);
    }
    let top1 = MARGIN_T;
    let bot1 = top1 + PANEL_H;
    let sx = Scale::new(0.0, rows.len().saturating_sub(1).max(1) as f64, MARGIN_L, CHART_W - MARGIN_R);
    let sy1 = Scale::new(h_lo - 0.05, h_hi + 0.05, bot1, top1);
    let zero = sy1.map(0.0);
    svg.line(sx.p0, zero, sx.p1, zero, "#bbb", 1.0);
    let pts: Vec<(f64, f64)> = h_ref
        .iter()
        .enumerate()
        .map(|(i, h)| (sx.map(i as f64), sy1.map(*h)))
        .collect();
    svg.polyline(&pts, "#d62728", 1.5, 1.0);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (sx.map(i as f64), sy1.map(r.h)))
        .collect();
    svg.polyline(&pts, "#1f77b4", 1.5, 1.0);
    draw_frame(&mut svg, &sx, &sy1, "step", "barrier h", title, top1, bot1);
    svg.text(sx.p1 - 4.0, top1 + 14.0, 11.0, "end", "blue: filtered, red: reference");

    // Panel 2: commanded, filtered, and realized speeds.
    let mut v_hi = f64::MIN_POSITIVE;
    for r in rows {
        v_hi = v_hi.max(r.v_des_norm).max(r.v_safe_norm).max(r.v_cur_norm);
    }
    let top2 = bot1 + MARGIN_B;
    let bot2 = top2 + PANEL_H;
    let sy2 = Scale::new(0.0, v_hi * 1.05, bot2, top2);
    for (color, pick) in [
        ("#d62728", 0usize),
        ("#1f77b4", 1usize),
        ("#2ca02c", 2usize),
    ] {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v = match pick {
                    0 => r.v_des_norm,
                    1 => r.v_safe_norm,
                    _ => r.v_cur_norm,
                };
                (sx.map(i as f64), sy2.map(v))
            })
            .collect();
        svg.polyline(&pts, color, 1.5, 1.0);
    }
    draw_frame(&mut svg, &sx, &sy2, "step", "speed (m/s)", title, top2, bot2);
    svg.text(
        sx.p1 - 4.0,
        top2 + 14.0,
        11.0,
        "end",
        "red: desired, blue: filtered, green: realized",
    );

    // Panel 3: isometric path with the safe-set outline.
    let top3 = bot2 + MARGIN_B;
    let bot3 = top3 + PANEL_H;
    let mut pts2d: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        let (u, v) = iso(r.reference);
        pts2d.push((u, v, 0));
        let (u, v) = iso(r.safe_position);
        pts2d.push((u, v, 1));
    }
    let mut rings = Vec::new();
    for plane in 0..3 {
        let ring: Vec<(f64, f64)> = ellipse_ring(set, plane).into_iter().map(iso).collect();
        for (u, v) in &ring {
            pts2d.push((*u, *v, 2));
        }
        rings.push(ring);
    }
    let (mut u_lo, mut u_hi, mut v_lo, mut v_hi2) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (u, v, _) in &pts2d {
        u_lo = u_lo.min(*u);
        u_hi = u_hi.max(*u);
        v_lo = v_lo.min(*v);
        v_hi2 = v_hi2.max(*v);
    }
    let pad_u = (u_hi - u_lo).max(1e-6) * 0.08;
    let pad_v = (v_hi2 - v_lo).max(1e-6) * 0.08;
    let sx3 = Scale::new(u_lo - pad_u, u_hi + pad_u, MARGIN_L, CHART_W - MARGIN_R);
    let sy3 = Scale::new(v_lo - pad_v, v_hi2 + pad_v, bot3, top3);
    for ring in &rings {
        let pts: Vec<(f64, f64)> = ring.iter().map(|(u, v)| (sx3.map(*u), sy3.map(*v))).collect();
        svg.polyline(&pts, "#999", 1.0, 0.8);
    }
    let refs: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            let (u, v) = iso(r.reference);
            (sx3.map(u), sy3.map(v))
        })
        .collect();
    svg.polyline(&refs, "#d62728", 1.5, 1.0);
    let safes: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            let (u, v) = iso(r.safe_position);
            (sx3.map(u), sy3.map(v))
        })
        .collect();
    svg.polyline(&safes, "#1f77b4", 1.5, 1.0);
    draw_frame(&mut svg, &sx3, &sy3, "iso-x", "iso-y (path)", title, top3, bot3);

    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::Phase;
    use crate::sim::{ACTION_DIM, OBS_DIM};

    fn trace_with(flags: &[bool]) -> Vec<TraceRow> {
        flags
            .iter()
            .enumerate()
            .map(|(t, &flag)| TraceRow {
                t,
                obs: [0.0; OBS_DIM],
                act_exec: [0.0; ACTION_DIM],
                sigma_hat: Some(0.001 * (t as f64 + 1.0)),
                ood_flag: Some(flag),
                h_value: None,
                phase: Phase::Approach,
            })
            .collect()
    }

    #[test]
    fn sigma_chart_is_deterministic_and_marks_flags() {
        let a = trace_with(&[false, false, true, true]);
        let b = trace_with(&[false, false, false, false]);
        let traces: Vec<&[TraceRow]> = vec![&a, &b];
        let one = sigma_chart(&traces, "demo");
        let two = sigma_chart(&traces, "demo");
        assert_eq!(one, two);
        assert!(one.starts_with("<svg"));
        assert!(one.contains("fill-opacity"), "flag shading missing");

        let clean: Vec<&[TraceRow]> = vec![&b];
        let plain = sigma_chart(&clean, "demo");
        assert!(!plain.contains("fill-opacity=\"0.1\""));
    }

    #[test]
    fn replay_chart_emits_three_panels() {
        let set = EllipsoidSafeSet {
            semi_axes: [0.02, 0.02, 0.018],
            origin: Vec3([0.0; 3]),
            alpha_cbf: 1.0,
            gamma_d: 0.0,
        };
        let rows: Vec<ReplayRow> = (0..10)
            .map(|t| ReplayRow {
                t,
                reference: Vec3([0.001 * t as f64, 0.0, 0.005]),
                safe_position: Vec3([0.0009 * t as f64, 0.0, 0.005]),
                h: 0.5,
                v_des_norm: 0.01,
                v_safe_norm: 0.008,
                v_cur_norm: 0.008,
                correction: 0.002,
            })
            .collect();
        let svg = replay_chart(&rows, &set, "replay");
        assert_eq!(svg.matches("barrier h").count(), 1);
        assert_eq!(svg.matches("speed (m/s)").count(), 1);
        assert_eq!(svg.matches("iso-y (path)").count(), 1);
        // Panels draw the reference, the filtered path, and 3 rings.
        assert!(svg.matches("<polyline").count() >= 7);
        assert_eq!(svg, replay_chart(&rows, &set, "replay"));
    }
}
