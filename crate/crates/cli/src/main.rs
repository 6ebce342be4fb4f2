use gfflab_cli::{parse_args, run_experiment};
use std::process::ExitCode;

const USAGE: &str = "usage: gfflab <command> [--config FILE] [--key value]...
commands: green-check sample-dgff thick-points run-walk avoided-points light-points
          verify-isomorphism cover-time report-constants
keys: domain width height vertices N lambda theta t a b bins replicas seed holding
      output_dir threads (GFFLAB_THREADS overrides threads)";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        println!("{USAGE}");
        return ExitCode::from(if args.is_empty() { 2 } else { 0 });
    }
    let cfg = match parse_args(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg) {
        Ok(out) => {
            for line in &out.report {
                println!("{line}");
            }
            for v in &out.verdicts {
                println!("{} {} value={} target={}", if v.pass { "PASS" } else { "FAIL" }, v.check, v.value, v.target);
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
