//! Text formats: the training log, evaluation reports and the ablation table.

use std::fmt::Write as _;

use nfcnn_core::metrics::MetricReport;
use nfcnn_core::train::StepReport;

/// Header line of the training log.
pub const TRAIN_LOG_HEADER: &str = "step\tlr\ttotal_loss\tloss_C\tloss_N";

/// One training-log line (no trailing newline). Floats use the shortest
/// representation that round-trips, so identical runs give identical logs.
pub fn train_log_line(r: &StepReport) -> String {
    format!("{}\t{}\t{}\t{}\t{}", r.step, r.lr, r.total, r.clean, r.noise)
}

/// Parsed training-log line.
pub fn parse_train_log_line(line: &str) -> Option<StepReport> {
    let mut it = line.split('\t');
    let report = StepReport {
        step: it.next()?.parse().ok()?,
        lr: it.next()?.parse().ok()?,
        total: it.next()?.parse().ok()?,
        clean: it.next()?.parse().ok()?,
        noise: it.next()?.parse().ok()?,
    };
    it.next().is_none().then_some(report)
}

/// Header of the per-image rows of an evaluation report.
pub const EVAL_HEADER: &str = "image_path\tmse\tpsnr_db";

/// Per-image quality of one evaluation run, in pixel units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    /// Denoised output before 8-bit quantization.
    pub real: MetricReport,
    /// Denoised output after 8-bit quantization.
    pub quantized: MetricReport,
    /// The noisy input itself.
    pub noisy: MetricReport,
}

impl EvalReport {
    /// Rows `image_path<TAB>mse<TAB>psnr_db`, a `mean` row, then `#`-prefixed
    /// summary lines with all three conventions.
    pub fn render(&self, quantized_rows: bool) -> String {
        let rows = if quantized_rows { &self.quantized } else { &self.real };
        let mut out = String::new();
        writeln!(out, "{EVAL_HEADER}").unwrap();
        for r in &rows.rows {
            writeln!(out, "{}\t{:.6}\t{:.4}", r.name, r.mse, r.psnr).unwrap();
        }
        let mean_mse = mean(rows.rows.iter().map(|r| r.mse));
        let mean_psnr = rows.mean_psnr().unwrap_or(f64::NAN);
        writeln!(out, "mean\t{mean_mse:.6}\t{mean_psnr:.4}").unwrap();
        let summary = [
            ("denoised, real-valued", &self.real),
            ("denoised, 8-bit quantized", &self.quantized),
            ("noisy input", &self.noisy),
        ];
        for (label, report) in summary {
            let m = report.mean_psnr().unwrap_or(f64::NAN);
            writeln!(out, "# mean PSNR ({label}): {m:.4} dB over {} images", report.rows.len()).unwrap();
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Parsed per-image row of an evaluation report.
pub fn parse_eval_row(line: &str) -> Option<(String, f64, f64)> {
    let mut it = line.split('\t');
    let name = it.next()?.to_string();
    let mse = it.next()?.parse().ok()?;
    let psnr = it.next()?.parse().ok()?;
    it.next().is_none().then_some((name, mse, psnr))
}

/// One cell of the ablation comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub fusion: bool,
    pub stages: usize,
    pub sigma: f64,
    pub psnr: f64,
}

impl AblationRow {
    pub fn model_name(&self) -> &'static str {
        if self.fusion {
            "NFCNN"
        } else {
            "NFCNN(*)"
        }
    }
}

/// Header of the machine-readable ablation rows.
pub const ABLATION_HEADER: &str = "model\tstages\tsigma\tpsnr_db";

/// Machine-readable rows followed by a model-by-noise-level table.
pub fn render_ablation(rows: &[AblationRow], sigmas: &[f64], stages: &[usize], note: &str) -> String {
    let mut out = String::new();
    writeln!(out, "# {note}").unwrap();
    writeln!(out, "{ABLATION_HEADER}").unwrap();
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{:.4}", r.model_name(), r.stages, r.sigma, r.psnr).unwrap();
    }
    writeln!(out).unwrap();
    let mut header = format!("{:<10} {:>2}", "model", "T");
    for s in sigmas {
        write!(header, " | {:>9}", format!("sigma={s}")).unwrap();
    }
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{}", "-".repeat(header.len())).unwrap();
    for &t in stages {
        for fusion in [false, true] {
            let name = if fusion { "NFCNN" } else { "NFCNN(*)" };
            let mut line = format!("{name:<10} {t:>2}");
            for &s in sigmas {
                let cell = rows
                    .iter()
                    .find(|r| r.fusion == fusion && r.stages == t && r.sigma == s)
                    .map_or_else(|| "-".to_string(), |r| format!("{:.2}", r.psnr));
                write!(line, " | {cell:>9}").unwrap();
            }
            writeln!(out, "{line}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_round_trips() {
        let r = StepReport {
            step: 12,
            lr: 1e-3,
            total: 0.123456789,
            clean: 0.1,
            noise: 0.023456789,
        };
        let line = train_log_line(&r);
        assert_eq!(line.split('\t').count(), 5);
        assert_eq!(parse_train_log_line(&line), Some(r));
    }

    #[test]
    fn eval_render_has_rows_and_mean() {
        let mut rep = EvalReport::default();
        for (name, mse) in [("a.png", 100.0), ("b.png", 1.0)] {
            rep.real.push(name, mse, 255.0);
            rep.quantized.push(name, mse, 255.0);
            rep.noisy.push(name, 625.0, 255.0);
        }
        let text = rep.render(false);
        let rows: Vec<_> = text.lines().filter_map(parse_eval_row).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].0, "mean");
        assert!((rows[2].2 - (rows[0].2 + rows[1].2) / 2.0).abs() < 1e-3);
    }

    #[test]
    fn infinite_psnr_renders_as_inf() {
        let mut rep = EvalReport::default();
        rep.real.push("x.png", 0.0, 255.0);
        assert!(rep.render(false).contains("x.png\t0.000000\tinf"));
    }
}
