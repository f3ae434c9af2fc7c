use anyhow::bail;
use clap::{Args, ValueEnum};
use nfcnn_core::gradcheck::{check_ops, run_suite, GradCheckOptions, GradCheckReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    /// Single ops only.
    Ops,
    /// Every op, a conv stack, a fusion block and a two-stage width-4 model.
    Tiny,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scale::Tiny)]
    pub scale: Scale,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coordinates probed per tensor.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Harness self-test: perturb every analytic gradient by 1%.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

pub fn render(report: &GradCheckReport) -> String {
    let mut out = String::from("check\tprobes\tskipped\tmax_rel_error\ttolerance\tstatus\n");
    for e in &report.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.3e}\t{:.0e}\t{}\n",
            e.name,
            e.checked,
            e.skipped,
            e.max_rel_error,
            e.tolerance,
            if e.passed() { "ok" } else { "FAIL" }
        ));
    }
    out.push_str(&format!("max relative error: {:.3e}\n", report.max_rel_error()));
    out
}

pub fn run(args: &GradcheckArgs) -> anyhow::Result<()> {
    let opts = GradCheckOptions {
        seed: args.seed,
        samples_per_tensor: args.samples.max(1),
        inject_fault: args.inject_fault,
        ..GradCheckOptions::default()
    };
    let report = match args.scale {
        Scale::Ops => check_ops(&opts)?,
        Scale::Tiny => run_suite(&opts)?,
    };
    print!("{}", render(&report));
    let failed: Vec<&str> = report
        .entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| e.name.as_str())
        .collect();
    if !failed.is_empty() {
        bail!("gradient check failed for: {}", failed.join(", "));
    }
    Ok(())
}
