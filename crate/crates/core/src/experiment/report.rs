//! Validation against the simulator, convergence traces, complexity figures
//! and SVG line plots.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariance::{m2, mse_matrix, relay_tx_cov, solve_mout, DesignVariables};
use crate::error::{Error, Result};
use crate::linalg::{rel_err, trace_re};
use crate::pdd::{run_algorithm1, ConvergenceTrace, OuterRecord, PddConfig};
use crate::simulate::{simulate_chain, SimulationOptions};
use crate::system::{ChannelSet, RandomStream, SystemConfig};

use super::SummaryRow;

/// Relative Frobenius errors of simulated statistics against the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_sym: usize,
    /// Relay transmit covariance `E{r_out r_out^H}`.
    pub relay_tx_err: f64,
    /// Destination covariance `E{y y^H}`.
    pub dest_err: f64,
    /// MSE matrix.
    pub mse_err: f64,
    pub model_mse: f64,
    pub empirical_mse: f64,
}

impl ValidationReport {
    pub fn max_err(&self) -> f64 {
        self.relay_tx_err.max(self.dest_err).max(self.mse_err)
    }
}

/// Simulates `n_sym` symbols and compares the empirical covariances with
/// the closed forms.
pub fn validate(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    design: &DesignVariables,
    n_sym: usize,
    rng: &mut RandomStream,
) -> Result<ValidationReport> {
    let (f, g, c) = (&design.precoder, &design.relay_gain, &design.equalizer);
    let m_out = solve_mout(cfg, ch, f, g)?;
    let relay_tx = relay_tx_cov(cfg, &m_out);
    let dest = m2(cfg, ch, f, &m_out)?;
    let e = mse_matrix(cfg, ch, f, g, c)?;
    let opts = SimulationOptions {
        n_sym,
        ..Default::default()
    };
    let stats = simulate_chain(cfg, ch, design, &opts, rng)?;
    Ok(ValidationReport {
        n_sym,
        relay_tx_err: rel_err(&stats.relay_tx_cov, &relay_tx),
        dest_err: rel_err(&stats.dest_cov, &dest),
        mse_err: rel_err(&stats.mse_matrix, &e),
        model_mse: trace_re(&e),
        empirical_mse: trace_re(&stats.mse_matrix),
    })
}

/// Runs the optimizer and writes `trace_<k>.csv` (one row per outer
/// iteration) and `trace_<k>_inner.csv` (one row per inner iteration). The
/// traces are written even when the run does not converge.
pub fn convergence_report(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    pdd: &PddConfig,
    out_dir: &Path,
    k: usize,
) -> Result<ConvergenceTrace> {
    std::fs::create_dir_all(out_dir)?;
    let write = |trace: &ConvergenceTrace| -> Result<()> {
        trace.write_csv(&out_dir.join(format!("trace_{k}.csv")))?;
        trace.write_inner_csv(&out_dir.join(format!("trace_{k}_inner.csv")))
    };
    match run_algorithm1(cfg, ch, pdd) {
        Ok((_, trace)) => {
            write(&trace)?;
            Ok(trace)
        }
        Err(Error::NoConvergence { trace }) => {
            write(&trace)?;
            Err(Error::NoConvergence { trace })
        }
        Err(e) => Err(e),
    }
}

/// Size of one block subproblem in the canonical real-valued conic form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockComplexity {
    pub block: &'static str,
    /// Real variables.
    pub n_vars: usize,
    /// Number of conic constraints as stated for this block.
    pub stated_constraints: usize,
    /// Dimensions of the listed conic constraints.
    pub constraint_dims: Vec<usize>,
}

impl BlockComplexity {
    /// `sqrt(1 + M) · N · (N² + M + Σ l_m²)` with `M` the number of listed
    /// constraints, up to the precision-dependent constant.
    pub fn bound(&self) -> f64 {
        let m = self.constraint_dims.len() as f64;
        let n = self.n_vars as f64;
        let sum_l2: f64 = self.constraint_dims.iter().map(|&l| (l * l) as f64).sum();
        (1.0 + m).sqrt() * n * (n * n + m + sum_l2)
    }

    /// The stated count disagrees with the listed constraint dimensions.
    pub fn count_mismatch(&self) -> bool {
        self.stated_constraints != self.constraint_dims.len()
    }
}

/// Per-iteration arithmetic cost of both block updates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub first: BlockComplexity,
    pub second: BlockComplexity,
}

pub fn complexity_report(cfg: &SystemConfig) -> ComplexityReport {
    let (ns, nr, mr, md, d) = (cfg.n_s, cfg.n_r, cfg.m_r, cfg.m_d, cfg.d);
    let dims = vec![
        2 * d * ns,
        2 * nr * nr,
        2 * d * (ns + md + d) + 2 * (nr * nr + mr * mr + md * md),
    ];
    ComplexityReport {
        first: BlockComplexity {
            block: "B1",
            n_vars: 4 * d * (ns + md) + 2 * (nr * mr + nr * nr + mr * mr + md * md + d * d + d * (2 * md + mr)),
            stated_constraints: 3,
            constraint_dims: dims.clone(),
        },
        second: BlockComplexity {
            block: "B2",
            n_vars: 2 * d * (2 * md + mr + ns + d) + 2 * (nr * nr + mr * mr + md * md),
            stated_constraints: 1,
            constraint_dims: dims,
        },
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "block  N~    M~  l_m              bound")?;
        for b in [&self.first, &self.second] {
            let dims: Vec<String> = b.constraint_dims.iter().map(usize::to_string).collect();
            write!(
                f,
                "{:<6} {:<5} {:<3} {:<16} {:.3e}",
                b.block,
                b.n_vars,
                b.stated_constraints,
                dims.join(","),
                b.bound()
            )?;
            if b.count_mismatch() {
                write!(
                    f,
                    "  (stated M~ = {} but {} constraint dimensions are listed; bound uses {})",
                    b.stated_constraints,
                    b.constraint_dims.len(),
                    b.constraint_dims.len()
                )?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// A line chart with one polyline per series.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 150.0, 40.0, 50.0);
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let points: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|(_, p)| p.iter().map(|&(x, y)| (x, ty(y))))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let span = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut points.iter().map(|p| p.0));
        let (y0, y1) = span(&mut points.iter().map(|p| p.1));
        let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
        let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
             <rect x=\"{left}\" y=\"{top}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            (w - right + left) / 2.0,
            escape(&self.title),
            w - left - right,
            h - top - bottom
        );
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let ylab = if self.log_y { format!("1e{fy:.1}") } else { format!("{fy:.3}") };
            svg += &format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{fx:.3}</text>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{ylab}</text>\n",
                px(fx),
                h - bottom + 16.0,
                left - 6.0,
                py(fy) + 4.0
            );
        }
        svg += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
            (w - right + left) / 2.0,
            h - 10.0,
            escape(&self.x_label),
            (h - bottom + top) / 2.0,
            (h - bottom + top) / 2.0,
            escape(&self.y_label)
        );
        for (i, (name, pts)) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| (x, ty(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            svg += &format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
                path.join(" "),
                w - right + 10.0,
                top + 16.0 * (i as f64 + 1.0),
                escape(name)
            );
        }
        svg + "</svg>\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_svg())?)
    }
}

/// Median MSE against the sweep value, one series per method.
pub fn summary_plot(rows: &[SummaryRow]) -> LinePlot {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        match series.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, pts)) => pts.push((r.sweep_value, r.mse_median)),
            None => series.push((r.method.clone(), vec![(r.sweep_value, r.mse_median)])),
        }
    }
    LinePlot {
        title: "Median MSE".into(),
        x_label: rows.first().map_or_else(String::new, |r| r.sweep_param.clone()),
        y_label: "MSE".into(),
        log_y: false,
        series,
    }
}

pub fn read_outer_trace(path: &Path) -> Result<Vec<OuterRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// One row of `trace_<k>_inner.csv`; inner iteration 0 is the value at
/// the start of the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct InnerRecord {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub al_value: f64,
}

pub fn read_inner_trace(path: &Path) -> Result<Vec<InnerRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// The four convergence views: MSE against ζ, the augmented Lagrangian over
/// inner iterations, and MSE and ζ over outer iterations.
pub fn trace_plots(outer_csv: &Path, inner_csv: &Path) -> Result<[LinePlot; 4]> {
    let outer = read_outer_trace(outer_csv)?;
    let inner = read_inner_trace(inner_csv)?;
    let mut al_series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in inner {
        let name = format!("outer {}", row.outer_iter);
        match al_series.iter_mut().find(|(n, _)| *n == name) {
            Some((_, pts)) => pts.push((row.inner_iter as f64, row.al_value)),
            None => al_series.push((name, vec![(row.inner_iter as f64, row.al_value)])),
        }
    }
    let by_outer = |f: fn(&OuterRecord) -> f64| outer.iter().map(|r| (r.outer_iter as f64, f(r))).collect::<Vec<_>>();
    let plot = |title: &str, x: &str, y: &str, log_y, series| LinePlot {
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
        log_y,
        series,
    };
    Ok([
        plot(
            "MSE against violation",
            "log10 zeta",
            "MSE",
            false,
            vec![("run".into(), outer.iter().map(|r| (r.zeta.log10(), r.mse)).collect())],
        ),
        plot("Augmented Lagrangian", "inner iteration", "AL", false, al_series.into_iter().take(PALETTE.len()).collect()),
        plot("MSE", "outer iteration", "MSE", false, vec![("run".into(), by_outer(|r| r.mse))]),
        plot("Violation", "outer iteration", "zeta", true, vec![("run".into(), by_outer(|r| r.zeta))]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::default_config;

    #[test]
    fn complexity_at_the_reference_setup() {
        let r = complexity_report(&default_config());
        assert_eq!(r.first.n_vars, 248);
        assert_eq!(r.first.constraint_dims, vec![16, 32, 136]);
        assert_eq!(r.second.n_vars, 168);
        assert!(!r.first.count_mismatch());
        assert!(r.second.count_mismatch());
        assert!(r.to_string().contains("stated M~ = 1"));
    }

    #[test]
    fn complexity_at_unit_dims_is_finite() {
        let cfg = default_config().with_dims(1, 1);
        let r = complexity_report(&cfg);
        for b in [&r.first, &r.second] {
            assert!(b.n_vars > 0 && b.constraint_dims.iter().all(|&l| l > 0));
            assert!(b.bound().is_finite() && b.bound() > 0.0);
        }
    }

    #[test]
    fn svg_is_well_formed() {
        let plot = LinePlot {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: true,
            series: vec![("s".into(), vec![(0.0, 1.0), (1.0, 0.1), (2.0, 0.0)])],
        };
        let svg = plot.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
