//! Run artifacts: trajectory CSV, a self-contained SVG error plot, run
//! summaries and margin reports. All writers are deterministic: floats are
//! printed with shortest round-trip formatting and nothing time- or
//! host-dependent is embedded.

use std::fmt::Write as _;

use crate::config::ScenarioConfig;
use crate::margin::{DmaxResult, EpsilonInterval, MarginReport};
use crate::sim::{RunOutput, RunSeries, SweepTable};

pub const RUN_CSV_SCHEMA: &str = "obslab-run-csv v1";
pub const SWEEP_CSV_SCHEMA: &str = "obslab-sweep-csv v1";

/// Trajectory CSV. Columns: time, error norms, gain eigenvalue range, then
/// the six truth components and six estimate components.
pub fn run_csv(series: &RunSeries, stride: usize) -> String {
    let stride = stride.max(1);
    let mut out = String::new();
    let _ = writeln!(out, "# {RUN_CSV_SCHEMA}");
    let eq = series.eq_norm.is_some();
    let mut header = String::from("t,x_tilde_norm,y_tilde_norm");
    if eq {
        header.push_str(",eq_norm");
    }
    header.push_str(",lambda_min_p,lambda_max_p");
    for i in 1..=6 {
        let _ = write!(header, ",x{i}");
    }
    for i in 1..=6 {
        let _ = write!(header, ",x_hat{i}");
    }
    let _ = writeln!(out, "{header}");
    let n = series.t.len();
    for k in (0..n).step_by(stride) {
        let _ = write!(
            out,
            "{:?},{:?},{:?}",
            series.t[k], series.x_tilde_norm[k], series.y_tilde_norm[k]
        );
        if let Some(eqs) = &series.eq_norm {
            let _ = write!(out, ",{:?}", eqs[k]);
        }
        let _ = write!(out, ",{:?},{:?}", series.lambda_min_p[k], series.lambda_max_p[k]);
        for v in series.x[k] {
            let _ = write!(out, ",{v:?}");
        }
        for v in series.x_hat[k] {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {SWEEP_CSV_SCHEMA}");
    let _ = writeln!(out, "delay_s,epsilon,verdict,x_tilde_max,x_tilde_final,tail_max");
    for c in &table.cells {
        let _ = writeln!(
            out,
            "{:?},{:?},{},{:?},{:?},{:?}",
            c.delay,
            c.epsilon,
            c.verdict.as_str(),
            c.x_tilde_max,
            c.x_tilde_final,
            c.tail_max
        );
    }
    out
}

pub fn sweep_summary(table: &SweepTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "empirical gain thresholds (smallest swept gain that converged):");
    for (d, thr) in &table.thresholds {
        match thr {
            Some(e) => {
                let _ = writeln!(out, "  delay_s = {d:?}: epsilon >= {e:?}");
            }
            None => {
                let _ = writeln!(out, "  delay_s = {d:?}: no swept gain converged");
            }
        }
    }
    out
}

/// One labelled curve for the SVG plot.
pub struct PlotSeries<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    pub color: &'a str,
}

/// Log-scale error plot as a self-contained SVG string.
pub fn error_svg(t: &[f64], curves: &[PlotSeries<'_>], title: &str) -> String {
    const W: f64 = 900.0;
    const H: f64 = 540.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;
    let floor = 1e-12f64;
    let t_max = t.last().copied().unwrap_or(1.0).max(1e-9);

    let mut v_max: f64 = floor * 10.0;
    for c in curves {
        for &v in c.values {
            if v.is_finite() {
                v_max = v_max.max(v);
            }
        }
    }
    let log_lo = floor.log10();
    let log_hi = v_max.log10().ceil();
    let span = (log_hi - log_lo).max(1.0);

    let x_of = |tv: f64| ML + (W - ML - MR) * tv / t_max;
    let y_of = |v: f64| {
        let lv = v.max(floor).log10();
        MT + (H - MT - MB) * (log_hi - lv) / span
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"24\" font-family=\"monospace\" font-size=\"16\">{}</text>",
        ML,
        xml_escape(title)
    );
    // axes
    let _ = writeln!(
        s,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - MB
    );
    let _ = writeln!(
        s,
        "<line x1=\"{ML}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    // y ticks per decade (at most ~14 labels)
    let decades = span as i64;
    let step = ((decades as f64 / 7.0).ceil() as i64).max(1);
    let mut d = log_lo as i64;
    while d <= log_hi as i64 {
        let y = y_of(10f64.powi(d as i32));
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{ML}\" y2=\"{y:.1}\" stroke=\"black\"/>",
            ML - 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">1e{d}</text>",
            ML - 8.0,
            y + 4.0
        );
        let _ = writeln!(
            s,
            "<line x1=\"{ML}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>",
            W - MR
        );
        d += step;
    }
    // x ticks
    for i in 0..=5 {
        let tv = t_max * i as f64 / 5.0;
        let x = x_of(tv);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            H - MB,
            H - MB + 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{tv:.0}</text>",
            H - MB + 18.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">t (s)</text>",
        (ML + W - MR) / 2.0,
        H - 12.0
    );

    for (ci, c) in curves.iter().enumerate() {
        let mut path = String::new();
        let n = c.values.len();
        // keep paths at a plottable size
        let stride = (n / 4000).max(1);
        let mut first = true;
        for k in (0..n).step_by(stride) {
            let v = c.values[k];
            if !v.is_finite() {
                continue;
            }
            let cmd = if first { 'M' } else { 'L' };
            first = false;
            let _ = write!(path, "{cmd}{:.2} {:.2} ", x_of(t[k]), y_of(v));
        }
        let _ = writeln!(
            s,
            "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\"/>",
            path.trim_end(),
            c.color
        );
        let ly = MT + 16.0 * ci as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>",
            W - MR - 160.0,
            W - MR - 140.0,
            c.color
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\">{}</text>",
            W - MR - 134.0,
            ly + 4.0,
            xml_escape(c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn verdict_block(label: &str, out: &RunOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[{label}]");
    let _ = writeln!(s, "verdict = {}", out.verdict.as_str());
    if let Some(t) = out.blowup_time {
        let _ = writeln!(s, "divergence_time_s = {t:?}");
    }
    let _ = writeln!(s, "x_tilde_initial = {:?}", out.x_tilde_initial);
    let _ = writeln!(s, "x_tilde_final = {:?}", out.x_tilde_final);
    let _ = writeln!(s, "x_tilde_max = {:?}", out.x_tilde_max);
    let _ = writeln!(s, "x_tilde_tail_max = {:?}", out.tail_max);
    let _ = writeln!(s, "steady_state_band = {:?}", out.band);
    if let Some(p) = &out.pde {
        let _ = writeln!(s, "pde_boundary_gap_max = {:?}", p.max_boundary_gap);
        let _ = writeln!(s, "pde_output_scale = {:?}", p.output_scale);
        let _ = writeln!(s, "eq_norm_initial = {:?}", p.eq_norm_initial);
    }
    s
}

pub fn run_summary(
    cfg: &ScenarioConfig,
    observability_ok: bool,
    rank: usize,
    min_eig: f64,
    predictive: Option<&RunOutput>,
    standard: Option<&RunOutput>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "obslab run summary");
    let _ = writeln!(s, "==================");
    let _ = writeln!(
        s,
        "observability: {} (rank {rank}, min eigenvalue {min_eig:?})",
        if observability_ok { "ok" } else { "FAILED" }
    );
    s.push('\n');
    if let Some(p) = predictive {
        s.push_str(&verdict_block("predictive", p));
        s.push('\n');
    }
    if let Some(st) = standard {
        s.push_str(&verdict_block("standard", st));
        s.push('\n');
    }
    let _ = writeln!(s, "[config]");
    s.push_str(&cfg.echo());
    s
}

/// Flat key-value margin report (human and machine readable).
pub fn margin_text(r: &MarginReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "feasible = {}", r.feasible);
    let _ = writeln!(s, "delay_s = {:?}", r.delay);
    let _ = writeln!(s, "epsilon = {:?}", r.epsilon);
    let _ = writeln!(s, "gamma = {:?}", r.gamma);
    let _ = writeln!(s, "t_window_s = {:?}", r.t_window);
    let _ = writeln!(s, "alpha = {:?}", r.alpha);
    let _ = writeln!(s, "beta1 = {:?}", r.beta1);
    let _ = writeln!(s, "beta2 = {:?}", r.beta2);
    let _ = writeln!(s, "kappa1 = {:?}", r.kappa[0]);
    let _ = writeln!(s, "kappa2 = {:?}", r.kappa[1]);
    let _ = writeln!(s, "kappa3 = {:?}", r.kappa[2]);
    let _ = writeln!(s, "kappa4 = {:?}", r.kappa[3]);
    let _ = writeln!(s, "delta1 = {:?}", r.delta1);
    let _ = writeln!(s, "delta2 = {:?}", r.delta2);
    let _ = writeln!(s, "rho = {:?}", r.rho);
    let _ = writeln!(s, "mu = {:?}", r.mu);
    let _ = writeln!(s, "overshoot = {:?}", r.overshoot);
    let _ = writeln!(s, "upsilon1 = {:?}", r.upsilon1);
    let _ = writeln!(s, "upsilon2 = {:?}", r.upsilon2);
    match r.d_max {
        DmaxResult::Finite(v) => {
            let _ = writeln!(s, "d_max_s = {v:?}");
        }
        DmaxResult::Unbounded => {
            let _ = writeln!(s, "d_max_s = unbounded");
        }
        DmaxResult::Infeasible => {
            let _ = writeln!(s, "d_max_s = infeasible");
        }
    }
    match r.eps_interval {
        EpsilonInterval::AllAdmissible => {
            let _ = writeln!(s, "eps_min = 0");
            let _ = writeln!(s, "eps_max = unbounded");
        }
        EpsilonInterval::Bounded { eps_min, eps_max } => {
            let _ = writeln!(s, "eps_min = {eps_min:?}");
            let _ = writeln!(s, "eps_max = {eps_max:?}");
            if let Some((r0, r1)) = r.eps_residuals {
                let _ = writeln!(s, "gain_inequality_residual_at_eps_min = {r0:?}");
                let _ = writeln!(s, "gain_inequality_residual_at_eps_max = {r1:?}");
            }
        }
        EpsilonInterval::Empty => {
            let _ = writeln!(s, "eps_min = none");
            let _ = writeln!(s, "eps_max = none");
        }
    }
    let _ = writeln!(s, "lam_min_ctc = {:?}", r.spectra.lam_min_ctc);
    let _ = writeln!(s, "lam_max_ctc = {:?}", r.spectra.lam_max_ctc);
    let _ = writeln!(s, "lam_min_ctsc = {:?}", r.spectra.lam_min_ctsc);
    let _ = writeln!(s, "lam_max_ctsc = {:?}", r.spectra.lam_max_ctsc);
    let _ = writeln!(s, "lam_max_cts2c = {:?}", r.spectra.lam_max_cts2c);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{RunOptions, Scenario};

    fn tiny_series() -> RunSeries {
        let mut s = Scenario::wheeled_robot();
        s.t_end = 2.0;
        s.dt = 0.01;
        let out = crate::sim::run(
            &s,
            crate::sim::ObserverChoice::Predictive,
            &RunOptions { record_series: true, ..Default::default() },
        )
        .unwrap();
        out.predictive.unwrap().series.unwrap()
    }

    #[test]
    fn csv_layout_and_determinism() {
        let series = tiny_series();
        let a = run_csv(&series, 1);
        let b = run_csv(&series, 1);
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next().unwrap(), format!("# {RUN_CSV_SCHEMA}"));
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 17);
        assert!(header.starts_with("t,x_tilde_norm,y_tilde_norm,lambda_min_p"));
        assert_eq!(a.lines().count(), 2 + series.t.len());
        // strided output keeps the header and drops rows
        let c = run_csv(&series, 10);
        assert!(c.lines().count() < a.lines().count());
    }

    #[test]
    fn svg_is_deterministic_and_wellformed() {
        let series = tiny_series();
        let curves = [PlotSeries {
            label: "|x_tilde|",
            values: &series.x_tilde_norm,
            color: "#c0392b",
        }];
        let a = error_svg(&series.t, &curves, "test");
        let b = error_svg(&series.t, &curves, "test");
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("<path"));
    }
}
