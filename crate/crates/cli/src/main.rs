//! `useanet`: CPU runtime and verification CLI for the ultrasound
//! segmentation network.

mod args;
mod commands;
mod config;

use useanet_core::error::Error;

const USAGE: &str = "\
useanet <command> [flags]

commands:
  segment    --weights W --input IMG --output MASK [--config C] [--threshold 0.5]
  profile    [--config C] [--input-size 256] [ablation switches]
  verify     [--seed N]
  gradcheck  [--seed N] [--mode f64|f32]
  overfit    [--size 64] [--steps 300] [--seed N] [--out-weights W]
  eval       --pred-dir DIR --gt-dir DIR
  fixture    [--kind disk|two-disks|speckled-disk] [--size 64] [--seed N]
             [--out-image IMG] [--out-mask MASK]

ablation switches: --no-attention --no-multi-branch
                   --no-ultrasound-specific --two-layer

USEAN_THREADS caps worker count (0 = single-threaded reference mode).
Exit codes: 0 ok, 1 verification/acceptance failure, 2 usage error.";

/// 2 for usage/configuration/input problems, 1 for everything that means
/// a check or run failed.
fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Input(_)
        | Error::Config(_)
        | Error::InvalidSpec { .. }
        | Error::Format(_)
        | Error::BadMagic(_)
        | Error::BadVersion(_)
        | Error::UnsupportedDtype(_)
        | Error::Truncated { .. }
        | Error::MissingParameter(_)
        | Error::Shape { .. }
        | Error::Io(_) => 2,
        Error::Contract(_) | Error::NonFinite { .. } | Error::Train(_) => 1,
    }
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some((command, rest)) = argv.split_first() else {
        eprintln!("{USAGE}");
        std::process::exit(2);
    };
    let result = match command.as_str() {
        "segment" => commands::cmd_segment(rest),
        "profile" => commands::cmd_profile(rest),
        "verify" => commands::cmd_verify(rest),
        "gradcheck" => commands::cmd_gradcheck(rest),
        "overfit" => commands::cmd_overfit(rest),
        "eval" => commands::cmd_eval(rest),
        "fixture" => commands::cmd_fixture(rest),
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            Ok(0)
        }
        other => {
            eprintln!("unknown command {other:?}\n{USAGE}");
            Ok(2)
        }
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code_for(&e));
        }
    }
}
