use std::process::ExitCode;

use clap::Parser;

use sgmm_cli::{execute, Settings};

fn main() -> ExitCode {
    let flags = Settings::parse();
    match execute(flags) {
        Ok(summary) => {
            for g in &summary.groups {
                let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{}: final nonzero fraction {}, best mean eval {}",
                    g.tag,
                    fmt(g.final_nonzero_frac),
                    fmt(g.best_eval_mean)
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
